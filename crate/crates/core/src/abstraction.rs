//! Finite Markov chain abstraction over a partition, pmf propagation and the
//! piecewise-constant error bound.
//!
//! States `0..n` are the partition cells and state `n` is the sink standing
//! for everything outside the partitioned domain. Pmfs are sub-stochastic on
//! the cells and are never renormalised.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{AxisBox, Partition};
use crate::kernels::{InitialDensity, Kernel};
use crate::projection::DensityApprox;
use crate::quadrature::Quadrature;
use crate::truncation::{kappa, TruncationSchedule};

/// How transition probabilities were obtained.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChainKind {
    /// `P_ij = (1/L(A_i)) ∫_{A_j} ∫_{A_i} t(s̄|s) ds ds̄`.
    Averaged,
    /// `P_ij = ∫_{A_j} t(s̄|s_i) ds̄` for a representative point `s_i ∈ A_i`.
    Representative,
}

/// Values that produced an error budget.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BudgetInputs {
    pub lambda_0: f64,
    pub lambda_f: f64,
    pub m_f: f64,
    pub delta: f64,
    pub t: usize,
    /// One-step projection error `𝓔^h` for interpolation schemes.
    pub interp_error: Option<f64>,
}

/// `ε_t + E_t` at one time step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorBudget {
    pub eps_t: f64,
    pub e_t: f64,
    pub total: f64,
    /// Error not covered by the certified formulas (sparsification).
    pub uncertified_extra: f64,
    pub inputs: BudgetInputs,
    /// Whether every constant in the formula is an analytic or asserted bound.
    pub certified: bool,
}

impl ErrorBudget {
    pub fn new(eps_t: f64, e_t: f64, inputs: BudgetInputs, certified: bool) -> Self {
        ErrorBudget {
            eps_t,
            e_t,
            total: eps_t + e_t,
            uncertified_extra: 0.0,
            inputs,
            certified,
        }
    }

    pub fn with_extra(mut self, extra: f64) -> Self {
        self.uncertified_extra = extra;
        self
    }
}

/// Probability mass over the cells and the sink.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pmf {
    values: Vec<f64>,
    t: usize,
}

impl Pmf {
    pub fn new(values: Vec<f64>, t: usize) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("a pmf needs at least the sink entry"));
        }
        if let Some(v) = values.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::invalid(format!("pmf entries must be finite and >= 0, got {v}")));
        }
        Ok(Pmf { values, t })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// `Σ_{i<n} p(i)`: mass on the partitioned domain.
    pub fn cell_mass(&self) -> f64 {
        self.values[..self.values.len() - 1].iter().sum()
    }

    pub fn sink(&self) -> f64 {
        *self.values.last().expect("nonempty")
    }

    pub fn total(&self) -> f64 {
        self.values.iter().sum()
    }
}

/// `(n+1) × (n+1)` transition matrix over a partition, dense row-major.
#[derive(Clone, Debug)]
pub struct FiniteAbstraction {
    partition: Arc<Partition>,
    matrix: Vec<f64>,
    kind: ChainKind,
    quad_tol: f64,
    dropped_row_mass: f64,
}

impl FiniteAbstraction {
    /// Wraps an existing matrix after checking shape, entries, row sums and
    /// the absorbing sink row.
    pub fn from_matrix(partition: Arc<Partition>, matrix: Vec<f64>, kind: ChainKind, quad_tol: f64) -> Result<Self> {
        let size = partition.len() + 1;
        if matrix.len() != size * size {
            return Err(Error::DimensionMismatch {
                expected: size * size,
                got: matrix.len(),
            });
        }
        let allowed = row_sum_allowance(quad_tol, size);
        for i in 0..size {
            let row = &matrix[i * size..(i + 1) * size];
            if let Some(v) = row
                .iter()
                .find(|v| !(v.is_finite() && **v >= 0.0 && **v <= 1.0 + quad_tol))
            {
                return Err(Error::invalid(format!("row {i} holds an entry outside [0, 1]: {v}")));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > allowed {
                return Err(Error::RowSum { row: i, sum, allowed });
            }
        }
        let sink = &matrix[(size - 1) * size..];
        if sink[size - 1] != 1.0 || sink[..size - 1].iter().any(|&v| v != 0.0) {
            return Err(Error::invalid("the sink row must be absorbing"));
        }
        Ok(FiniteAbstraction {
            partition,
            matrix,
            kind,
            quad_tol,
            dropped_row_mass: 0.0,
        })
    }

    /// Rebuilds a chain previously checked by [`from_matrix`](Self::from_matrix)
    /// and possibly sparsified.
    pub(crate) fn from_parts(
        partition: Arc<Partition>,
        matrix: Vec<f64>,
        kind: ChainKind,
        quad_tol: f64,
        dropped_row_mass: f64,
    ) -> Result<Self> {
        if dropped_row_mass == 0.0 {
            return Self::from_matrix(partition, matrix, kind, quad_tol);
        }
        let size = partition.len() + 1;
        if matrix.len() != size * size {
            return Err(Error::DimensionMismatch {
                expected: size * size,
                got: matrix.len(),
            });
        }
        Ok(FiniteAbstraction {
            partition,
            matrix,
            kind,
            quad_tol,
            dropped_row_mass,
        })
    }

    pub fn partition(&self) -> &Arc<Partition> {
        &self.partition
    }

    /// Number of states including the sink.
    pub fn size(&self) -> usize {
        self.partition.len() + 1
    }

    pub fn kind(&self) -> ChainKind {
        self.kind
    }

    pub fn quad_tol(&self) -> f64 {
        self.quad_tol
    }

    pub fn matrix(&self) -> &[f64] {
        &self.matrix
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.matrix[i * self.size() + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let n = self.size();
        &self.matrix[i * n..(i + 1) * n]
    }

    /// Largest row mass removed by [`sparsified`](Self::sparsified).
    pub fn dropped_row_mass(&self) -> f64 {
        self.dropped_row_mass
    }

    /// Copy with entries below `threshold` removed (the sink self-loop is
    /// kept). Rows are not renormalised; the removed mass is reported by
    /// [`sparsification_error`](Self::sparsification_error).
    pub fn sparsified(&self, threshold: f64) -> Self {
        let n = self.size();
        let mut matrix = self.matrix.clone();
        let mut worst = self.dropped_row_mass;
        for i in 0..n - 1 {
            let mut dropped = 0.0;
            for v in &mut matrix[i * n..(i + 1) * n] {
                if *v < threshold && *v != 0.0 {
                    dropped += *v;
                    *v = 0.0;
                }
            }
            worst = worst.max(dropped);
        }
        FiniteAbstraction {
            partition: Arc::clone(&self.partition),
            matrix,
            kind: self.kind,
            quad_tol: self.quad_tol,
            dropped_row_mass: worst,
        }
    }

    /// Sup-norm density error added by sparsification after `t` steps:
    /// `t · dropped / min L(A_i)`.
    pub fn sparsification_error(&self, t: usize) -> f64 {
        if self.dropped_row_mass == 0.0 {
            return 0.0;
        }
        let min_vol = (0..self.partition.len())
            .map(|i| self.partition.cell_volume(i))
            .fold(f64::INFINITY, f64::min);
        t as f64 * self.dropped_row_mass / min_vol
    }
}

fn row_sum_allowance(quad_tol: f64, size: usize) -> f64 {
    100.0 * quad_tol * size as f64
}

/// Refuses partitions whose dense matrix would exceed `max_cells` cells.
pub fn check_size(cells: usize, max_cells: usize) -> Result<()> {
    if cells > max_cells {
        let states = cells as u128 + 1;
        return Err(Error::TooManyCells {
            cells,
            bytes: states * states * 8,
            limit: max_cells,
        });
    }
    Ok(())
}

/// Completes a row of cell-to-cell probabilities with the sink column.
fn finish_row(i: usize, mut row: Vec<f64>, quad_tol: f64, size: usize) -> Result<Vec<f64>> {
    let sum: f64 = row.iter().sum();
    let allowed = row_sum_allowance(quad_tol, size);
    if sum > 1.0 + allowed {
        return Err(Error::RowSum { row: i, sum, allowed });
    }
    if sum > 1.0 {
        // quadrature overshoot: keep the chain sub-stochastic on the cells
        row.iter_mut().for_each(|v| *v /= sum);
    }
    let cells: f64 = row.iter().sum();
    row.push((1.0 - cells).max(0.0));
    Ok(row)
}

fn sink_row(size: usize) -> Vec<f64> {
    let mut row = vec![0.0; size];
    row[size - 1] = 1.0;
    row
}

fn name_cell(e: Error, what: String) -> Error {
    match e {
        Error::QuadratureNotConverged { lower, upper, context } => Error::QuadratureNotConverged {
            lower,
            upper,
            context: format!("{what}: {context}"),
        },
        other => other,
    }
}

fn check_dims(kernel: &Kernel, partition: &Partition) -> Result<()> {
    if kernel.dim() != partition.dim() {
        return Err(Error::DimensionMismatch {
            expected: kernel.dim(),
            got: partition.dim(),
        });
    }
    Ok(())
}

/// Averaged chain: each entry is a `2d`-dimensional integral over
/// `A_i × A_j`, to absolute accuracy `tol · L(A_i)` before normalisation.
pub fn build_chain_averaged(
    kernel: &Kernel,
    partition: Arc<Partition>,
    quad: &Quadrature,
) -> Result<FiniteAbstraction> {
    check_dims(kernel, &partition)?;
    let d = partition.dim();
    let n = partition.len();
    let size = n + 1;
    let tol = quad.spec().tolerance;
    let cells: Vec<AxisBox> = partition.cells().collect();
    let widths = resolution(kernel);
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| -> Result<Vec<f64>> {
            let from = &cells[i];
            let vol = from.volume();
            let mut row = Vec::with_capacity(size);
            for (j, to) in cells.iter().enumerate() {
                let region = from.product(to);
                let r = quad
                    .integrate_resolved(|x| kernel.eval(&x[d..], &x[..d]), &region, tol * vol, &widths)
                    .map_err(|e| name_cell(e, format!("transition {i} -> {j}")))?;
                row.push(r.value / vol);
            }
            finish_row(i, row, tol, size)
        })
        .collect::<Result<_>>()?;
    let mut matrix: Vec<f64> = rows.into_iter().flatten().collect();
    matrix.extend(sink_row(size));
    Ok(FiniteAbstraction {
        partition,
        matrix,
        kind: ChainKind::Averaged,
        quad_tol: tol,
        dropped_row_mass: 0.0,
    })
}

/// Sub-box widths on `(current, next)` for integrating the kernel.
fn resolution(kernel: &Kernel) -> Vec<f64> {
    let d = kernel.dim();
    let (current, next) = kernel.resolution();
    let mut widths = vec![current; d];
    widths.extend(std::iter::repeat_n(next, d));
    widths
}

/// Cell centres.
pub fn midpoints(partition: &Partition) -> Vec<Vec<f64>> {
    partition.cells().map(|c| c.center()).collect()
}

/// Representative-point chain `P_ij = ∫_{A_j} t(s̄ | s_i) ds̄`.
pub fn build_chain_representative(
    kernel: &Kernel,
    partition: Arc<Partition>,
    representatives: &[Vec<f64>],
    quad: &Quadrature,
) -> Result<FiniteAbstraction> {
    check_dims(kernel, &partition)?;
    let n = partition.len();
    let size = n + 1;
    if representatives.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: representatives.len(),
        });
    }
    let cells: Vec<AxisBox> = partition.cells().collect();
    for (i, p) in representatives.iter().enumerate() {
        if p.len() != partition.dim() || !cells[i].contains(p) {
            return Err(Error::RepresentativeOutsideCell {
                cell: i,
                point: p.clone(),
            });
        }
    }
    let tol = quad.spec().tolerance;
    let widths = vec![kernel.resolution().1; partition.dim()];
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| -> Result<Vec<f64>> {
            let s = &representatives[i];
            let mut row = Vec::with_capacity(size);
            for (j, to) in cells.iter().enumerate() {
                let r = quad
                    .integrate_resolved(|x| kernel.eval(x, s), to, tol, &widths)
                    .map_err(|e| name_cell(e, format!("transition {i} -> {j}")))?;
                row.push(r.value);
            }
            finish_row(i, row, tol, size)
        })
        .collect::<Result<_>>()?;
    let mut matrix: Vec<f64> = rows.into_iter().flatten().collect();
    matrix.extend(sink_row(size));
    Ok(FiniteAbstraction {
        partition,
        matrix,
        kind: ChainKind::Representative,
        quad_tol: tol,
        dropped_row_mass: 0.0,
    })
}

/// Splits `cell` along the faces of `support` that cut through it.
fn split_by(cell: &AxisBox, support: &AxisBox) -> Vec<AxisBox> {
    let d = cell.dim();
    let mut segments: Vec<Vec<(f64, f64)>> = Vec::with_capacity(d);
    for k in 0..d {
        let (lo, hi) = (cell.lower()[k], cell.upper()[k]);
        let mut cuts = vec![lo];
        for f in [support.lower()[k], support.upper()[k]] {
            if f > lo && f < hi {
                cuts.push(f);
            }
        }
        cuts.push(hi);
        cuts.sort_by(f64::total_cmp);
        segments.push(cuts.windows(2).map(|w| (w[0], w[1])).collect());
    }
    let mut boxes = vec![(Vec::new(), Vec::new())];
    for seg in &segments {
        let mut next = Vec::with_capacity(boxes.len() * seg.len());
        for (lo, hi) in &boxes {
            for &(a, b) in seg {
                let (mut l, mut u): (Vec<f64>, Vec<f64>) = (lo.clone(), hi.clone());
                l.push(a);
                u.push(b);
                next.push((l, u));
            }
        }
        boxes = next;
    }
    boxes.into_iter().filter_map(|(l, u)| AxisBox::new(l, u).ok()).collect()
}

/// `p_0(i) = ∫_{A_i} π_0`; the sink receives `1 - Σ_i p_0(i)`.
pub fn initial_pmf(init: &InitialDensity, partition: &Partition, quad: &Quadrature) -> Result<Pmf> {
    if init.dim() != partition.dim() {
        return Err(Error::DimensionMismatch {
            expected: partition.dim(),
            got: init.dim(),
        });
    }
    let mut values: Vec<f64> = partition
        .cells()
        .enumerate()
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|(i, cell)| -> Result<f64> {
            let mut mass = 0.0;
            for piece in split_by(&cell, init.support()) {
                mass += quad
                    .integrate(|x| init.eval(x), &piece)
                    .map_err(|e| name_cell(e, format!("initial mass of cell {i}")))?
                    .value;
            }
            Ok(mass.max(0.0))
        })
        .collect::<Result<_>>()?;
    let cells: f64 = values.iter().sum();
    values.push((1.0 - cells).max(0.0));
    Pmf::new(values, 0)
}

/// `p_1(i) = ∫_{A_i} ∫_{Λ_0} t(s̄ | s) π_0(s) ds ds̄`, which starts the
/// chain at `t = 1` with zero initial error.
pub fn initial_pmf_relaxed(
    kernel: &Kernel,
    init: &InitialDensity,
    partition: &Partition,
    quad: &Quadrature,
) -> Result<Pmf> {
    check_dims(kernel, partition)?;
    let d = partition.dim();
    let tol = quad.spec().tolerance;
    let support = init.support();
    let widths = resolution(kernel);
    let mut values: Vec<f64> = partition
        .cells()
        .enumerate()
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|(i, cell)| -> Result<f64> {
            let region = support.product(&cell);
            let r = quad
                .integrate_resolved(
                    |x| kernel.eval(&x[d..], &x[..d]) * init.eval(&x[..d]),
                    &region,
                    tol,
                    &widths,
                )
                .map_err(|e| name_cell(e, format!("relaxed initial mass of cell {i}")))?;
            Ok(r.value.max(0.0))
        })
        .collect::<Result<_>>()?;
    let cells: f64 = values.iter().sum();
    let total = if cells == 0.0 { 0.0 } else { 1.0 };
    values.push((total - cells).max(0.0));
    Pmf::new(values, 1)
}

fn step(p: &[f64], chain: &FiniteAbstraction) -> Vec<f64> {
    let n = chain.size();
    let mut out = vec![0.0; n];
    for (i, &pi) in p.iter().enumerate() {
        if pi == 0.0 {
            continue;
        }
        for (o, &v) in out.iter_mut().zip(chain.row(i)) {
            *o += pi * v;
        }
    }
    out
}

/// `p P^steps`.
pub fn propagate(pmf: &Pmf, chain: &FiniteAbstraction, steps: usize) -> Result<Pmf> {
    Ok(propagate_all(pmf, chain, steps)?.pop().expect("nonempty"))
}

/// `p, pP, …, pP^steps`.
pub fn propagate_all(pmf: &Pmf, chain: &FiniteAbstraction, steps: usize) -> Result<Vec<Pmf>> {
    if pmf.len() != chain.size() {
        return Err(Error::DimensionMismatch {
            expected: chain.size(),
            got: pmf.len(),
        });
    }
    let mut out = Vec::with_capacity(steps + 1);
    out.push(pmf.clone());
    for k in 1..=steps {
        let next = step(out[k - 1].values(), chain);
        out.push(Pmf {
            values: next,
            t: pmf.t() + k,
        });
    }
    Ok(out)
}

/// `ψ_t = Σ_i p_t(i) / L(A_i) · 1_{A_i}`.
pub fn density_estimate(pmf: &Pmf, partition: Arc<Partition>) -> Result<DensityApprox> {
    if pmf.len() != partition.len() + 1 {
        return Err(Error::DimensionMismatch {
            expected: partition.len() + 1,
            got: pmf.len(),
        });
    }
    let values = (0..partition.len())
        .map(|i| pmf.values()[i] / partition.cell_volume(i))
        .collect();
    DensityApprox::piecewise_constant(partition, values, pmf.t())
}

/// `E_t = [κ(t, M_f) λ_f + M_f^t λ_0] δ`; the relaxed start drops the `λ_0`
/// term.
pub fn error_bound(lambda_0: f64, lambda_f: f64, m_f: f64, delta: f64, t: usize, relaxed: bool) -> f64 {
    let initial = if relaxed { 0.0 } else { m_f.powi(t as i32) * lambda_0 };
    (kappa(t, m_f) * lambda_f + initial) * delta
}

/// `E_0 … E_N` from `E_{t+1} = M_f E_t + λ_f δ`, `E_0 = λ_0 δ` (or 0 when
/// relaxed).
pub fn error_recursion(lambda_0: f64, lambda_f: f64, m_f: f64, delta: f64, horizon: usize, relaxed: bool) -> Vec<f64> {
    let mut e = Vec::with_capacity(horizon + 1);
    e.push(if relaxed { 0.0 } else { lambda_0 * delta });
    for t in 0..horizon {
        e.push(m_f * e[t] + lambda_f * delta);
    }
    e
}

/// Budgets `ε_t + E_t`, `t = 0..=horizon`, for a chain with diameter `delta`.
pub fn budgets(
    kernel: &Kernel,
    init: &InitialDensity,
    delta: f64,
    horizon: usize,
    relaxed: bool,
) -> Result<Vec<ErrorBudget>> {
    let eps = TruncationSchedule::for_model(kernel, init, horizon)?;
    Ok((0..=horizon)
        .map(|t| {
            ErrorBudget::new(
                eps.at(t),
                error_bound(init.lambda_0(), kernel.lambda_f(), kernel.m_f(), delta, t, relaxed),
                BudgetInputs {
                    lambda_0: init.lambda_0(),
                    lambda_f: kernel.lambda_f(),
                    m_f: kernel.m_f(),
                    delta,
                    t,
                    interp_error: None,
                },
                kernel.m_f_certified(),
            )
        })
        .collect())
}
