//! Finite-state abstraction of discrete-time Markov processes over continuous
//! state spaces.
//!
//! The crate turns a transition density `t(s̄ | s)` into a finite Markov chain
//! (or a higher-order interpolation scheme), propagates the state density in
//! time and evaluates finite-horizon probabilistic invariance. Every result
//! carries a computable error bound built from the kernel's certified
//! constants.
//!
//! The pipeline, bottom-up:
//!
//! * [`kernels`]: the transition density, the initial density and the
//!   constants (`λ_f`, `λ_b`, `M_f`, `M_b`, derivative bounds, tail bound)
//!   that every error formula consumes.
//! * [`geometry`]: boxes, affine support bands, the support recursion and
//!   rectilinear partitions.
//! * [`truncation`]: the truncation error schedule `ε_t` and the amplification
//!   factor [`truncation::kappa`].
//! * [`abstraction`]: the averaged Markov chain, pmf propagation and the
//!   piecewise-constant error `E_t`.
//! * [`projection`]: interpolation-based approximations (piecewise constant,
//!   1D polynomial, bilinear, trilinear) and their error constants.
//! * [`invariance`]: forward and backward probabilistic invariance.
//! * [`oracle`]: analytic and Monte-Carlo ground truth for the linear
//!   Gaussian benchmark.
//! * [`export`]: explicit transition files for external model checkers.

pub mod abstraction;
pub mod error;
pub mod export;
pub mod geometry;
pub mod invariance;
pub mod kernels;
pub mod oracle;
pub mod projection;
pub mod quadrature;
pub mod truncation;

pub use abstraction::{ChainKind, ErrorBudget, FiniteAbstraction, Pmf};
pub use error::{Error, Result};
pub use geometry::{AxisBox, BandMap, Partition};
pub use invariance::{InvarianceMethod, InvarianceProblem, InvarianceResult};
pub use kernels::{DerivativeBounds, InitialDensity, Kernel, NoiseDensity};
pub use projection::{DensityApprox, InterpOrder, InterpScheme};
pub use quadrature::{Quadrature, QuadratureSpec};
pub use truncation::{kappa, TruncationSchedule};
