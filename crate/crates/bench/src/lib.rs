//! Benchmark fixtures shared by the criterion targets.

use std::sync::Arc;

use markabs_core::kernels::linear_gaussian_1d;
use markabs_core::truncation::working_partition;
use markabs_core::{InitialDensity, Kernel, Partition, Quadrature, QuadratureSpec};

/// Linear Gaussian benchmark (`σ = 0.1`, `α = 2.4`, `s_0 ~ U[0, 1]`).
pub fn lin_gauss(a: f64) -> (Kernel, InitialDensity) {
    linear_gaussian_1d(a, 0.0, 0.1, 2.4, (0.0, 1.0)).expect("valid benchmark model")
}

/// Working partition for `horizon` steps at diameter `delta`.
pub fn partition(kernel: &Kernel, init: &InitialDensity, horizon: usize, delta: f64) -> Arc<Partition> {
    Arc::new(working_partition(kernel, init, horizon, delta).expect("valid partition"))
}

pub fn quadrature() -> Quadrature {
    Quadrature::new(QuadratureSpec::default()).expect("valid quadrature")
}
