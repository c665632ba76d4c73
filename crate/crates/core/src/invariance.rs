//! Finite-horizon probabilistic invariance over a box-shaped safe set.
//!
//! The forward method reuses the averaged chain on the safe set and sums the
//! surviving pmf mass; the backward method iterates value functions on a
//! representative-point chain. Both report the estimate for every horizon
//! `0..=N` together with the matching bound.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::abstraction::{self, build_chain_averaged, build_chain_representative, initial_pmf, propagate_all};
use crate::error::{Error, Result};
use crate::geometry::{AxisBox, Partition};
use crate::kernels::{InitialDensity, Kernel};
use crate::quadrature::Quadrature;
use crate::truncation::kappa;

/// Default ceiling on partition size for chain assembly.
pub const DEFAULT_MAX_CELLS: usize = 5_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InvarianceMethod {
    Forward,
    Backward,
}

/// Probability that the state stays in `safe_set` for `horizon` steps.
#[derive(Clone, Debug)]
pub struct InvarianceProblem {
    pub safe_set: AxisBox,
    pub horizon: usize,
    pub kernel: Kernel,
    pub init: InitialDensity,
}

impl InvarianceProblem {
    pub fn new(safe_set: AxisBox, horizon: usize, kernel: Kernel, init: InitialDensity) -> Result<Self> {
        if safe_set.dim() != kernel.dim() || init.dim() != kernel.dim() {
            return Err(Error::DimensionMismatch {
                expected: kernel.dim(),
                got: if safe_set.dim() != kernel.dim() {
                    safe_set.dim()
                } else {
                    init.dim()
                },
            });
        }
        Ok(InvarianceProblem {
            safe_set,
            horizon,
            kernel,
            init,
        })
    }

    /// Uniform partition of the safe set with diameter at most `delta`,
    /// refused when it would exceed `max_cells`.
    pub fn partition(&self, delta: f64, max_cells: usize) -> Result<Arc<Partition>> {
        let d = self.safe_set.dim();
        let side = delta / (d as f64).sqrt();
        let cells: f64 = (0..d)
            .map(|k| (self.safe_set.width(k) / side).ceil().max(1.0))
            .product();
        if cells > max_cells as f64 {
            abstraction::check_size(cells.min(usize::MAX as f64) as usize, max_cells)?;
        }
        let p = Partition::uniform_delta(&self.safe_set, delta)?;
        abstraction::check_size(p.len(), max_cells)?;
        Ok(Arc::new(p))
    }

    /// `M_b`, defaulting to 1.
    pub fn m_b(&self) -> f64 {
        self.kernel.m_b().unwrap_or(1.0)
    }
}

/// `E_f = κ(N, M_f) λ_f δ L(A)`.
pub fn forward_bound(lambda_f: f64, m_f: f64, delta: f64, measure: f64, horizon: usize) -> f64 {
    kappa(horizon, m_f) * lambda_f * delta * measure
}

/// `E_b = κ(N, M_b) λ_b δ L(A)`.
pub fn backward_bound(lambda_b: f64, m_b: f64, delta: f64, measure: f64, horizon: usize) -> f64 {
    kappa(horizon, m_b) * lambda_b * delta * measure
}

impl InvarianceProblem {
    pub fn forward_bound(&self, delta: f64, horizon: usize) -> f64 {
        forward_bound(
            self.kernel.lambda_f(),
            self.kernel.m_f(),
            delta,
            self.safe_set.volume(),
            horizon,
        )
    }

    pub fn backward_bound(&self, delta: f64, horizon: usize) -> Result<f64> {
        let lambda_b = self.kernel.lambda_b().ok_or(Error::MissingConstant("lambda_b"))?;
        Ok(backward_bound(
            lambda_b,
            self.m_b(),
            delta,
            self.safe_set.volume(),
            horizon,
        ))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InvarianceResult {
    pub method: InvarianceMethod,
    /// Estimate at the problem's horizon.
    pub estimate: f64,
    pub bound: f64,
    pub certified: bool,
    pub delta: f64,
    pub cells: usize,
    /// `curve[k]` estimates invariance over `k` steps, `k = 0..=N`.
    pub curve: Vec<f64>,
    pub curve_bounds: Vec<f64>,
    /// Forward: `∫ W_t` for `t = 0..=N` (equal to `curve`). Backward:
    /// `(min, max)` of the value vector at each `t`.
    pub value_ranges: Option<Vec<(f64, f64)>>,
}

impl InvarianceResult {
    /// `[estimate - bound, estimate + bound] ∩ [0, 1]`.
    pub fn interval(&self) -> (f64, f64) {
        (
            (self.estimate - self.bound).max(0.0),
            (self.estimate + self.bound).min(1.0),
        )
    }
}

/// Forward computation on a given partition of the safe set.
pub fn forward_on(
    problem: &InvarianceProblem,
    partition: Arc<Partition>,
    quad: &Quadrature,
) -> Result<InvarianceResult> {
    check_partition(problem, &partition)?;
    let chain = build_chain_averaged(&problem.kernel, Arc::clone(&partition), quad)?;
    let p0 = initial_pmf(&problem.init, &partition, quad)?;
    let traj = propagate_all(&p0, &chain, problem.horizon)?;
    let curve: Vec<f64> = traj.iter().map(|p| p.cell_mass()).collect();
    let delta = partition.delta();
    let curve_bounds = (0..=problem.horizon).map(|t| problem.forward_bound(delta, t)).collect();
    Ok(InvarianceResult {
        method: InvarianceMethod::Forward,
        estimate: curve[problem.horizon],
        bound: problem.forward_bound(delta, problem.horizon),
        certified: problem.kernel.m_f_certified(),
        delta,
        cells: partition.len(),
        curve,
        curve_bounds,
        value_ranges: None,
    })
}

/// Forward computation with a uniform partition of diameter `delta`.
pub fn forward_invariance(
    problem: &InvarianceProblem,
    delta: f64,
    quad: &Quadrature,
    max_cells: usize,
) -> Result<InvarianceResult> {
    forward_on(problem, problem.partition(delta, max_cells)?, quad)
}

/// Backward computation on a given partition; representative points default
/// to cell centres.
pub fn backward_on(
    problem: &InvarianceProblem,
    partition: Arc<Partition>,
    representatives: Option<&[Vec<f64>]>,
    quad: &Quadrature,
) -> Result<InvarianceResult> {
    check_partition(problem, &partition)?;
    let lambda_b = problem.kernel.lambda_b().ok_or(Error::MissingConstant("lambda_b"))?;
    let reps = match representatives {
        Some(r) => r.to_vec(),
        None => abstraction::midpoints(&partition),
    };
    let chain = build_chain_representative(&problem.kernel, Arc::clone(&partition), &reps, quad)?;
    let p0 = initial_pmf(&problem.init, &partition, quad)?;
    let n = partition.len();
    let size = n + 1;
    let n_steps = problem.horizon;
    // values[k] = V_{N-k}: k steps to go
    let mut v = vec![1.0; size];
    v[n] = 0.0;
    let mut curve = Vec::with_capacity(n_steps + 1);
    let mut ranges = Vec::with_capacity(n_steps + 1);
    let expectation = |v: &[f64]| -> f64 { v[..n].iter().zip(p0.values()).map(|(a, b)| a * b).sum() };
    let range = |v: &[f64]| -> (f64, f64) {
        v[..n].iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| {
            (lo.min(x), hi.max(x))
        })
    };
    curve.push(expectation(&v));
    ranges.push(range(&v));
    for _ in 0..n_steps {
        let next: Vec<f64> = (0..size)
            .map(|i| {
                if i == n {
                    0.0
                } else {
                    chain.row(i).iter().zip(&v).map(|(p, x)| p * x).sum()
                }
            })
            .collect();
        v = next;
        curve.push(expectation(&v));
        ranges.push(range(&v));
    }
    // ranges were collected from V_N down to V_0; report them by time index
    ranges.reverse();
    let delta = partition.delta();
    let measure = problem.safe_set.volume();
    let m_b = problem.m_b();
    let curve_bounds = (0..=n_steps)
        .map(|k| backward_bound(lambda_b, m_b, delta, measure, k))
        .collect();
    Ok(InvarianceResult {
        method: InvarianceMethod::Backward,
        estimate: curve[n_steps],
        bound: backward_bound(lambda_b, m_b, delta, measure, n_steps),
        certified: true,
        delta,
        cells: n,
        curve,
        curve_bounds,
        value_ranges: Some(ranges),
    })
}

/// Backward computation with a uniform partition of diameter `delta`.
pub fn backward_invariance(
    problem: &InvarianceProblem,
    delta: f64,
    representatives: Option<&[Vec<f64>]>,
    quad: &Quadrature,
    max_cells: usize,
) -> Result<InvarianceResult> {
    backward_on(problem, problem.partition(delta, max_cells)?, representatives, quad)
}

fn check_partition(problem: &InvarianceProblem, partition: &Partition) -> Result<()> {
    if partition.dim() != problem.kernel.dim() {
        return Err(Error::DimensionMismatch {
            expected: problem.kernel.dim(),
            got: partition.dim(),
        });
    }
    if partition.domain() != &problem.safe_set {
        return Err(Error::invalid("the partition must tile the safe set"));
    }
    Ok(())
}

/// Bounds of both methods at one diameter, from the formulas alone.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundComparison {
    pub delta: f64,
    pub horizon: usize,
    pub forward: f64,
    pub backward: f64,
    pub lambda_f: f64,
    pub lambda_b: f64,
    pub m_f: f64,
    pub m_b: f64,
    pub winner: InvarianceMethod,
}

/// `E_f` against `E_b` without building any chain.
pub fn compare_bounds(problem: &InvarianceProblem, delta: f64) -> Result<BoundComparison> {
    let forward = problem.forward_bound(delta, problem.horizon);
    let backward = problem.backward_bound(delta, problem.horizon)?;
    Ok(BoundComparison {
        delta,
        horizon: problem.horizon,
        forward,
        backward,
        lambda_f: problem.kernel.lambda_f(),
        lambda_b: problem.kernel.lambda_b().expect("checked by backward_bound"),
        m_f: problem.kernel.m_f(),
        m_b: problem.m_b(),
        winner: if forward <= backward {
            InvarianceMethod::Forward
        } else {
            InvarianceMethod::Backward
        },
    })
}

/// Both methods run on the same partition.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub forward: InvarianceResult,
    pub backward: InvarianceResult,
    pub bounds: BoundComparison,
    /// `|forward - backward|` at the horizon.
    pub estimate_gap: f64,
}

impl ComparisonReport {
    pub fn winner(&self) -> InvarianceMethod {
        self.bounds.winner
    }
}

pub fn compare_methods(
    problem: &InvarianceProblem,
    delta: f64,
    quad: &Quadrature,
    max_cells: usize,
) -> Result<ComparisonReport> {
    let partition = problem.partition(delta, max_cells)?;
    let forward = forward_on(problem, Arc::clone(&partition), quad)?;
    let backward = backward_on(problem, partition, None, quad)?;
    let bounds = compare_bounds(problem, forward.delta)?;
    Ok(ComparisonReport {
        estimate_gap: (forward.estimate - backward.estimate).abs(),
        forward,
        backward,
        bounds,
    })
}

/// `P{s(t) ∈ A} <= L(A) · sup π_0 · M_f^t`, valid only when `M_f < 1`.
pub fn convergence_certificate(kernel: &Kernel, init_sup: f64, safe_set: &AxisBox, t: usize) -> Result<f64> {
    let m_f = kernel.m_f();
    if m_f >= 1.0 {
        return Err(Error::CertificateUnavailable { m_f });
    }
    if !(init_sup.is_finite() && init_sup >= 0.0) {
        return Err(Error::invalid("sup of the initial density must be finite and >= 0"));
    }
    Ok(safe_set.volume() * init_sup * m_f.powi(t as i32))
}
