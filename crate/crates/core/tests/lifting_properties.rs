use mrplift::attitude::*;
use mrplift::hybrid::{simulate, SolverConfig};
use mrplift::lifting::*;
use nalgebra::{Vector3, Vector4};
use proptest::prelude::*;

fn unit_quat() -> impl Strategy<Value = UnitQuaternion> {
    prop::array::uniform4(-1.0f64..1.0)
        .prop_filter("away from zero", |c| c.iter().map(|x| x * x).sum::<f64>() > 1e-2)
        .prop_map(|c| UnitQuaternion::normalize(Vector4::new(c[0], c[1], c[2], c[3])).unwrap())
}

fn rate() -> impl Strategy<Value = Vector3<f64>> {
    prop::array::uniform3(-1.0f64..1.0)
        .prop_map(|c| Vector3::from(c))
        .prop_filter("inside the unit ball", |w| w.norm() <= 1.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn phi_lies_in_the_fiber(q_hat in unit_quat(), p in unit_quat()) {
        let r = quat_to_rotation(&p);
        let (phi, _) = phi_select(&q_hat, &r).select();
        prop_assert!((quat_to_rotation(&phi).matrix() - r.matrix()).norm() < 1e-9);
        prop_assert!(q_hat.dot(&phi) >= -TIE_TOL);
        let d = quat_set_distance(&q_hat, &r);
        prop_assert!((0.0..=1.0).contains(&d));
        prop_assert!((d - (1.0 - q_hat.dot(&phi))).abs() < 1e-12);
    }

    #[test]
    fn lift_output_is_consistent(q_hat in unit_quat(), p in unit_quat(), flip in any::<bool>()) {
        let r = quat_to_rotation(&p);
        let m = if flip { -1 } else { 1 };
        let state = LiftState::new(q_hat, m).unwrap();
        let out = lift_output(&state, &r, &LiftParams::default());
        if !out.theta.is_infinite() {
            prop_assert!((mrp_to_rotation(&out.theta).matrix() - r.matrix()).norm() < 1e-8);
        }
    }

    #[test]
    fn dl_jump_lands_on_the_fiber(q_hat in unit_quat(), p in unit_quat()) {
        let r = quat_to_rotation(&p);
        let params = LiftParams::new(0.01, 0.5).unwrap();
        let state = LiftState::new(q_hat, 1).unwrap();
        prop_assume!(in_jump_dl(&state, &r, &params));
        let before = lift_output(&state, &r, &params).theta;
        let after = lift_jump(&state, &r, &params, JumpKind::Dl).unwrap();
        prop_assert!(quat_set_distance(after.q_hat(), &r) < 1e-9);
        let post = lift_output(&after, &r, &params).theta;
        if quat_set_distance(&q_hat, &r) < 1.0 - 1e-9 {
            match (before.as_finite(), post.as_finite()) {
                (Some(a), Some(b)) => prop_assert!((a - b).norm() <= 1e-9 * a.norm().max(1.0)),
                (None, None) => {}
                _ => prop_assert!(false, "finite/infinite mismatch"),
            }
        }
    }

    #[test]
    fn dm_jump_is_the_shadow(q_hat in unit_quat(), p in unit_quat()) {
        let r = quat_to_rotation(&p);
        let params = LiftParams::new(0.5, 0.01).unwrap();
        let state = LiftState::new(q_hat, 1).unwrap();
        prop_assume!(in_jump_dm(&state, &r, &params));
        let before = lift_output(&state, &r, &params).theta;
        let after = lift_jump(&state, &r, &params, JumpKind::Dm).unwrap();
        let post = lift_output(&after, &r, &params).theta;
        let expected = shadow(&before);
        match (post.as_finite(), expected.as_finite()) {
            (Some(a), Some(b)) => prop_assert!((a - b).norm() <= 1e-9 * b.norm().max(1.0)),
            (None, None) => {}
            _ => prop_assert!(false, "finite/infinite mismatch"),
        }
    }

    #[test]
    fn bounded_rate_lifts_stay_bounded(
        q0 in unit_quat(),
        rates in prop::collection::vec(rate(), 8),
        delta in 0.05f64..1.0,
        alpha in 0.1f64..0.9,
    ) {
        let params = LiftParams::new(alpha, delta).unwrap();
        let r0 = quat_to_rotation(&q0);
        let src = PiecewiseSpin::new(r0, 1.0, rates).unwrap();
        let init = LiftState::initialize(&UnitQuaternion::identity(), &r0, 1).unwrap();
        let x0 = lift_state_to_vector(&init);
        let sys = make_lift_system(params, &src);
        let cfg = SolverConfig { step: 1e-2, t_max: 8.0, ..SolverConfig::default() };
        let arc = simulate(&sys, &x0, &cfg).unwrap();
        arc.domain().validate().unwrap();
        let rep = verify_lift_arc(&arc, &src, &params);
        prop_assert!(rep.consistency_ok, "{:?}", rep);
        prop_assert!(rep.dl_invariance_ok && rep.dm_shadow_ok && rep.memory_ok, "{:?}", rep);
        prop_assert!(rep.norm_bound_ok, "{:?}", rep);

        // no chatter: jumps of the same kind are separated by positive flow time
        for kind in ["Dl", "Dm"] {
            let times: Vec<f64> = arc.jumps.iter().filter(|j| j.label == kind).map(|j| j.t).collect();
            for w in times.windows(2) {
                prop_assert!(w[1] > w[0], "{kind} jumps at {} and {}", w[0], w[1]);
            }
        }
    }
}

#[test]
fn streaming_filter_matches_hybrid_arc_on_random_spin() {
    let rates = vec![
        Vector3::new(0.9, -0.2, 0.1),
        Vector3::new(-0.3, 0.8, 0.4),
        Vector3::new(0.1, 0.1, -0.95),
    ];
    let src = PiecewiseSpin::new(RotationMatrix::identity(), 4.0, rates).unwrap();
    let params = LiftParams::new(0.3, 0.1).unwrap();
    let sys = make_lift_system(params, &src);
    let x0 = lift_state_to_vector(&LiftState::new(UnitQuaternion::identity(), 1).unwrap());
    let cfg = SolverConfig {
        step: 5e-3,
        t_max: 12.0,
        ..SolverConfig::default()
    };
    let arc = simulate(&sys, &x0, &cfg).unwrap();
    let rows = arc_rows(&arc, &src, &params);
    let mut filter = LiftFilter::with_guess(params, UnitQuaternion::identity(), 1).unwrap();
    let mut streamed = Vec::new();
    let mut last = f64::NEG_INFINITY;
    for row in &rows {
        if row.t > last {
            streamed.extend(filter.push(row.t, row.rotation).unwrap());
            last = row.t;
        }
    }
    assert_eq!(streamed, rows);
}
