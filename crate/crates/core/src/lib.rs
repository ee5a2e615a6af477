//! Hybrid path-lifting of rotation matrices to modified Rodrigues
//! parameters, and the closed-loop hybrid attitude systems built on it.

pub mod attitude;
pub mod hybrid;
pub mod lifting;
pub mod closed_loop;
