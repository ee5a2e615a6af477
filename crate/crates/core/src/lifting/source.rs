use nalgebra::{Matrix3, Rotation3, Unit, Vector3};

use crate::attitude::{AttitudeError, RotationMatrix};

/// A continuous rotation signal `t ↦ R(t)`.
pub trait RotationSource: Send + Sync {
    fn rotation(&self, t: f64) -> RotationMatrix;
}

impl<T: RotationSource + ?Sized> RotationSource for &T {
    fn rotation(&self, t: f64) -> RotationMatrix {
        (**self).rotation(t)
    }
}

impl<T: RotationSource + ?Sized> RotationSource for Box<T> {
    fn rotation(&self, t: f64) -> RotationMatrix {
        (**self).rotation(t)
    }
}

impl<T: RotationSource + ?Sized> RotationSource for std::sync::Arc<T> {
    fn rotation(&self, t: f64) -> RotationMatrix {
        (**self).rotation(t)
    }
}

fn exp_so3(w: &Vector3<f64>) -> Matrix3<f64> {
    Rotation3::from_scaled_axis(*w).into_inner()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstantRotation(pub RotationMatrix);

impl RotationSource for ConstantRotation {
    fn rotation(&self, _t: f64) -> RotationMatrix {
        self.0
    }
}

/// `R(t) = R₀ exp(rate · t [axis]×)`: a constant-rate principal rotation.
#[derive(Debug, Clone, PartialEq)]
pub struct PrincipalRamp {
    initial: RotationMatrix,
    axis: Unit<Vector3<f64>>,
    rate: f64,
}

impl PrincipalRamp {
    pub fn new(initial: RotationMatrix, axis: Vector3<f64>, rate: f64) -> Result<Self, AttitudeError> {
        if !rate.is_finite() {
            return Err(AttitudeError::NonFinite("ramp rate"));
        }
        let axis = Unit::try_new(axis, 1e-12).ok_or(AttitudeError::NotUnit {
            norm: axis.norm(),
            tol: 1e-12,
        })?;
        Ok(Self { initial, axis, rate })
    }

    pub fn axis(&self) -> &Vector3<f64> {
        self.axis.as_ref()
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn angle_at(&self, t: f64) -> f64 {
        self.rate * t
    }
}

impl RotationSource for PrincipalRamp {
    fn rotation(&self, t: f64) -> RotationMatrix {
        let step = Rotation3::from_axis_angle(&self.axis, self.rate * t).into_inner();
        RotationMatrix::from_matrix_unchecked(self.initial.matrix() * step)
    }
}

/// Piecewise-constant body rate: on segment `k` the rotation evolves as
/// `Ṙ = R [ω_k]×`, integrated exactly. Returns `R` at the last segment's
/// end for times beyond the schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseSpin {
    segment_duration: f64,
    omegas: Vec<Vector3<f64>>,
    starts: Vec<Matrix3<f64>>,
}

impl PiecewiseSpin {
    pub fn new(
        r0: RotationMatrix,
        segment_duration: f64,
        omegas: Vec<Vector3<f64>>,
    ) -> Result<Self, AttitudeError> {
        if !(segment_duration > 0.0 && segment_duration.is_finite()) {
            return Err(AttitudeError::NonFinite("segment duration"));
        }
        if omegas.iter().any(|w| !w.iter().all(|c| c.is_finite())) {
            return Err(AttitudeError::NonFinite("segment rate"));
        }
        let mut starts = Vec::with_capacity(omegas.len() + 1);
        let mut r = *r0.matrix();
        starts.push(r);
        for w in &omegas {
            r = RotationMatrix::project(&(r * exp_so3(&(w * segment_duration))))?
                .matrix()
                .to_owned();
            starts.push(r);
        }
        Ok(Self {
            segment_duration,
            omegas,
            starts,
        })
    }

    pub fn max_rate(&self) -> f64 {
        self.omegas.iter().map(|w| w.norm()).fold(0.0, f64::max)
    }

    pub fn duration(&self) -> f64 {
        self.segment_duration * self.omegas.len() as f64
    }

    pub fn omega_at(&self, t: f64) -> Vector3<f64> {
        if self.omegas.is_empty() || t < 0.0 {
            return Vector3::zeros();
        }
        let k = ((t / self.segment_duration).floor() as usize).min(self.omegas.len() - 1);
        self.omegas[k]
    }
}

impl RotationSource for PiecewiseSpin {
    fn rotation(&self, t: f64) -> RotationMatrix {
        if self.omegas.is_empty() || t <= 0.0 {
            return RotationMatrix::from_matrix_unchecked(self.starts[0]);
        }
        let k = (t / self.segment_duration).floor() as usize;
        if k >= self.omegas.len() {
            return RotationMatrix::from_matrix_unchecked(*self.starts.last().expect("nonempty"));
        }
        let tau = t - k as f64 * self.segment_duration;
        let m = self.starts[k] * exp_so3(&(self.omegas[k] * tau));
        RotationMatrix::from_matrix_unchecked(m)
    }
}
