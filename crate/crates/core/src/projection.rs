//! Interpolation-based density approximation.
//!
//! A scheme fixes, per cell, a set of interpolation nodes and the Lagrange
//! basis attached to them, so that interpolation matrices are the identity.
//! Nodes on shared cell faces are shared between neighbouring cells and
//! carry one value; a [`DensityApprox`] stores one value per global node.
//!
//! [`algorithm1`] propagates nodal values through the operator
//! `K[u][g] = Σ_{cells i ∋ u} ∫_{A_i} t(x_g | s) φ_{i,u}(s) ds`, which is the
//! shared-node form of `α^{t+1}_{uv} = Σ_ij α^t_ij P_ij^{uv}`.
//! [`algorithm2`] is the piecewise-constant special case with arbitrary
//! representative points.

use std::sync::Arc;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::abstraction::{BudgetInputs, ErrorBudget};
use crate::error::{Error, Result};
use crate::geometry::{AxisBox, Partition};
use crate::kernels::{DerivativeBounds, InitialDensity, Kernel};
use crate::quadrature::{GaussLegendre, Quadrature};
use crate::truncation::{kappa, TruncationSchedule};

/// Interpolation order within a cell.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InterpOrder {
    /// One node at the cell centre.
    Constant,
    /// `h` equispaced nodes including both endpoints (degree `h - 1`), 1D only.
    Polynomial1d { h: usize },
    /// Corners of a rectangle.
    Bilinear,
    /// Corners of a box.
    Trilinear,
}

/// Interpolation scheme over a rectilinear partition.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InterpScheme {
    dim: usize,
    order: InterpOrder,
}

impl InterpScheme {
    pub fn new(dim: usize, order: InterpOrder) -> Result<Self> {
        let ok = match order {
            InterpOrder::Constant => dim >= 1,
            InterpOrder::Polynomial1d { h } => {
                if h < 2 {
                    return Err(Error::invalid(
                        "polynomial schemes need h >= 2 nodes; use the constant scheme for h = 1",
                    ));
                }
                if h > 16 {
                    return Err(Error::Unsupported(format!(
                        "polynomial interpolation with {h} nodes per cell"
                    )));
                }
                dim == 1
            }
            InterpOrder::Bilinear => dim == 2,
            InterpOrder::Trilinear => dim == 3,
        };
        if !ok {
            return Err(Error::Unsupported(format!(
                "{order:?} interpolation in dimension {dim}"
            )));
        }
        Ok(InterpScheme { dim, order })
    }

    pub fn constant(dim: usize) -> Self {
        InterpScheme {
            dim,
            order: InterpOrder::Constant,
        }
    }

    /// Affine in 1D, bilinear in 2D, trilinear in 3D.
    pub fn first_order(dim: usize) -> Result<Self> {
        let order = match dim {
            1 => InterpOrder::Polynomial1d { h: 2 },
            2 => InterpOrder::Bilinear,
            3 => InterpOrder::Trilinear,
            _ => {
                return Err(Error::Unsupported(format!(
                    "first-order interpolation in dimension {dim}"
                )))
            }
        };
        Ok(InterpScheme { dim, order })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn order(&self) -> InterpOrder {
        self.order
    }

    /// Nodes per axis within a cell.
    fn axis_nodes(&self) -> usize {
        match self.order {
            InterpOrder::Constant => 1,
            InterpOrder::Polynomial1d { h } => h,
            InterpOrder::Bilinear | InterpOrder::Trilinear => 2,
        }
    }

    /// Number of basis functions per cell, `h`.
    pub fn nodes_per_cell(&self) -> usize {
        self.axis_nodes().pow(self.dim as u32)
    }

    /// Whether `M_f` bounds `M_f^h` for this scheme: true for bases that are
    /// nonnegative and sum to one.
    pub fn preserves_m_f(&self) -> bool {
        self.axis_nodes() <= 2
    }

    fn local_multi(&self, j: usize) -> Vec<usize> {
        let q = self.axis_nodes();
        let mut r = vec![0; self.dim];
        let mut rem = j;
        for k in (0..self.dim).rev() {
            r[k] = rem % q;
            rem /= q;
        }
        r
    }

    fn axis_node(&self, lo: f64, hi: f64, r: usize) -> f64 {
        let q = self.axis_nodes();
        if q == 1 {
            0.5 * (lo + hi)
        } else if r == 0 {
            lo
        } else if r == q - 1 {
            hi
        } else {
            lo + (hi - lo) * r as f64 / (q - 1) as f64
        }
    }

    /// Interpolation nodes of a cell, row-major over local indices.
    pub fn local_nodes(&self, cell: &AxisBox) -> Vec<Vec<f64>> {
        (0..self.nodes_per_cell())
            .map(|j| {
                self.local_multi(j)
                    .iter()
                    .enumerate()
                    .map(|(k, &r)| self.axis_node(cell.lower()[k], cell.upper()[k], r))
                    .collect()
            })
            .collect()
    }

    /// Lagrange basis values at `x` (in the cell's closure), written to `out`.
    pub fn basis(&self, cell: &AxisBox, x: &[f64], out: &mut [f64]) {
        let q = self.axis_nodes();
        if q == 1 {
            out[0] = 1.0;
            return;
        }
        let mut axis_vals = [[0.0_f64; 16]; 3];
        for k in 0..self.dim {
            let u = (x[k] - cell.lower()[k]) / cell.width(k);
            for (r, v) in axis_vals[k].iter_mut().enumerate().take(q) {
                *v = lagrange_1d(q, r, u);
            }
        }
        for (j, o) in out.iter_mut().enumerate().take(self.nodes_per_cell()) {
            let mut rem = j;
            let mut v = 1.0;
            for k in (0..self.dim).rev() {
                v *= axis_vals[k][rem % q];
                rem /= q;
            }
            *o = v;
        }
    }

    /// `Q_i = [m_j(s_iv)]_{v,j}` for the monomial basis in cell-local
    /// coordinates `u = (x - lower) / width` (`1, u, u², …` in 1D,
    /// `1, u₂, u₁, u₁u₂` in 2D, and so on).
    pub fn monomial_matrix(&self, cell: &AxisBox) -> DMatrix<f64> {
        let h = self.nodes_per_cell();
        let nodes = self.local_nodes(cell);
        DMatrix::from_fn(h, h, |v, j| monomial(self, cell, &nodes[v], j))
    }

    /// `∫_cell φ_j` for each local basis function.
    pub fn basis_integrals(&self, cell: &AxisBox) -> Vec<f64> {
        let q = self.axis_nodes();
        let rule = GaussLegendre::new(q.max(1));
        let axis_weights: Vec<f64> = (0..q)
            .map(|r| {
                rule.nodes()
                    .iter()
                    .zip(rule.weights())
                    .map(|(z, w)| {
                        0.5 * w
                            * if q == 1 {
                                1.0
                            } else {
                                lagrange_1d(q, r, 0.5 * (z + 1.0))
                            }
                    })
                    .sum()
            })
            .collect();
        (0..self.nodes_per_cell())
            .map(|j| {
                self.local_multi(j)
                    .iter()
                    .enumerate()
                    .map(|(k, &r)| axis_weights[r] * cell.width(k))
                    .product()
            })
            .collect()
    }
}

fn lagrange_1d(q: usize, r: usize, u: f64) -> f64 {
    let ur = r as f64 / (q - 1) as f64;
    let mut v = 1.0;
    for m in 0..q {
        if m != r {
            let um = m as f64 / (q - 1) as f64;
            v *= (u - um) / (ur - um);
        }
    }
    v
}

fn monomial(scheme: &InterpScheme, cell: &AxisBox, x: &[f64], j: usize) -> f64 {
    let q = scheme.axis_nodes();
    let mut rem = j;
    let mut v = 1.0;
    for k in (0..scheme.dim).rev() {
        let p = rem % q;
        rem /= q;
        let u = (x[k] - cell.lower()[k]) / cell.width(k);
        v *= u.powi(p as i32);
    }
    v
}

/// Global node numbering: per-axis node lines, row-major with the last axis
/// fastest.
#[derive(Clone, Debug, PartialEq)]
struct NodeLayout {
    per_axis: Vec<usize>,
}

impl NodeLayout {
    fn new(partition: &Partition, scheme: &InterpScheme) -> Self {
        let q = scheme.axis_nodes();
        let per_axis = partition
            .counts()
            .iter()
            .map(|&c| if q == 1 { c } else { c * (q - 1) + 1 })
            .collect();
        NodeLayout { per_axis }
    }

    fn len(&self) -> usize {
        self.per_axis.iter().product()
    }

    fn global(&self, scheme: &InterpScheme, cell_multi: &[usize], j: usize) -> usize {
        let q = scheme.axis_nodes();
        let r = scheme.local_multi(j);
        let mut g = 0;
        for k in 0..self.per_axis.len() {
            let gk = if q == 1 {
                cell_multi[k]
            } else {
                cell_multi[k] * (q - 1) + r[k]
            };
            g = g * self.per_axis[k] + gk;
        }
        g
    }
}

/// Per-cell node tables shared by all approximations on one partition.
#[derive(Debug)]
struct Nodes {
    /// `cell_nodes[i][j]` = global index of local node `j` of cell `i`.
    cell_nodes: Vec<Vec<usize>>,
    coords: Vec<Vec<f64>>,
}

impl Nodes {
    fn new(partition: &Partition, scheme: &InterpScheme) -> Self {
        let layout = NodeLayout::new(partition, scheme);
        let mut coords: Vec<Option<Vec<f64>>> = vec![None; layout.len()];
        let mut cell_nodes = Vec::with_capacity(partition.len());
        for i in 0..partition.len() {
            let multi = partition.multi_index(i);
            let cell = partition.cell(i);
            let local = scheme.local_nodes(&cell);
            let globals: Vec<usize> = (0..scheme.nodes_per_cell())
                .map(|j| layout.global(scheme, &multi, j))
                .collect();
            for (j, &g) in globals.iter().enumerate() {
                if coords[g].is_none() {
                    coords[g] = Some(local[j].clone());
                }
            }
            cell_nodes.push(globals);
        }
        Nodes {
            cell_nodes,
            coords: coords
                .into_iter()
                .map(|c| c.expect("every node belongs to a cell"))
                .collect(),
        }
    }
}

/// Interpolated density `Σ_i Σ_j α_ij φ_ij 1_{A_i}` with Lagrange bases, so
/// the coefficients are nodal values.
#[derive(Clone, Debug)]
pub struct DensityApprox {
    partition: Arc<Partition>,
    scheme: InterpScheme,
    nodes: Arc<Nodes>,
    values: Vec<f64>,
    t: usize,
}

impl DensityApprox {
    fn with_nodes(
        partition: Arc<Partition>,
        scheme: InterpScheme,
        nodes: Arc<Nodes>,
        values: Vec<f64>,
        t: usize,
    ) -> Self {
        DensityApprox {
            partition,
            scheme,
            nodes,
            values,
            t,
        }
    }

    /// From nodal values (one per global node).
    pub fn new(partition: Arc<Partition>, scheme: InterpScheme, values: Vec<f64>, t: usize) -> Result<Self> {
        check_scheme(&partition, &scheme)?;
        let nodes = Arc::new(Nodes::new(&partition, &scheme));
        if values.len() != nodes.coords.len() {
            return Err(Error::DimensionMismatch {
                expected: nodes.coords.len(),
                got: values.len(),
            });
        }
        Ok(Self::with_nodes(partition, scheme, nodes, values, t))
    }

    /// Piecewise-constant density with the given per-cell values.
    pub fn piecewise_constant(partition: Arc<Partition>, cell_values: Vec<f64>, t: usize) -> Result<Self> {
        let scheme = InterpScheme::constant(partition.dim());
        Self::new(partition, scheme, cell_values, t)
    }

    /// From per-cell monomial coefficients (see
    /// [`InterpScheme::monomial_matrix`]). Values at shared nodes must agree
    /// between neighbouring cells.
    pub fn from_monomial(
        partition: Arc<Partition>,
        scheme: InterpScheme,
        coefficients: &[Vec<f64>],
        t: usize,
    ) -> Result<Self> {
        check_scheme(&partition, &scheme)?;
        if coefficients.len() != partition.len() {
            return Err(Error::DimensionMismatch {
                expected: partition.len(),
                got: coefficients.len(),
            });
        }
        let nodes = Arc::new(Nodes::new(&partition, &scheme));
        let mut values: Vec<Option<f64>> = vec![None; nodes.coords.len()];
        for (i, c) in coefficients.iter().enumerate() {
            let cell = partition.cell(i);
            let q = scheme.monomial_matrix(&cell);
            let alpha = nalgebra::DVector::from_column_slice(c);
            if c.len() != scheme.nodes_per_cell() {
                return Err(Error::DimensionMismatch {
                    expected: scheme.nodes_per_cell(),
                    got: c.len(),
                });
            }
            let f = q * alpha;
            for (j, &g) in nodes.cell_nodes[i].iter().enumerate() {
                match values[g] {
                    None => values[g] = Some(f[j]),
                    Some(prev) => {
                        if (prev - f[j]).abs() > 1e-9 * prev.abs().max(f[j].abs()).max(1.0) {
                            return Err(Error::invalid(format!(
                                "monomial coefficients disagree at a shared node of cell {i}: {prev} vs {}",
                                f[j]
                            )));
                        }
                    }
                }
            }
        }
        let values = values.into_iter().map(|v| v.expect("covered")).collect();
        Ok(Self::with_nodes(partition, scheme, nodes, values, t))
    }

    pub fn partition(&self) -> &Arc<Partition> {
        &self.partition
    }

    pub fn scheme(&self) -> &InterpScheme {
        &self.scheme
    }

    pub fn t(&self) -> usize {
        self.t
    }

    /// Nodal values, one per global node.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Global node coordinates.
    pub fn node_coords(&self) -> &[Vec<f64>] {
        &self.nodes.coords
    }

    /// `α_ij` for cell `i`, in local node order.
    pub fn cell_coefficients(&self, i: usize) -> Vec<f64> {
        self.nodes.cell_nodes[i].iter().map(|&g| self.values[g]).collect()
    }

    /// Monomial coefficients of cell `i` (solves `Q_i α = f`).
    pub fn monomial_coefficients(&self, i: usize) -> Result<Vec<f64>> {
        let cell = self.partition.cell(i);
        let q = self.scheme.monomial_matrix(&cell);
        let f = nalgebra::DVector::from_vec(self.cell_coefficients(i));
        let lu = q.lu();
        let alpha = lu
            .solve(&f)
            .ok_or_else(|| Error::SingularMatrix(format!("interpolation matrix of cell {i}")))?;
        Ok(alpha.iter().copied().collect())
    }

    /// Value at `x`; zero outside the partition's domain.
    pub fn eval(&self, x: &[f64]) -> f64 {
        match self.partition.locate(x) {
            Some(i) => self.eval_in_cell(i, x),
            None => 0.0,
        }
    }

    fn eval_in_cell(&self, i: usize, x: &[f64]) -> f64 {
        let cell = self.partition.cell(i);
        let mut phi = [0.0_f64; 64];
        let h = self.scheme.nodes_per_cell();
        if h > phi.len() {
            let mut big = vec![0.0; h];
            self.scheme.basis(&cell, x, &mut big);
            return self.nodes.cell_nodes[i]
                .iter()
                .zip(&big)
                .map(|(&g, p)| self.values[g] * p)
                .sum();
        }
        self.scheme.basis(&cell, x, &mut phi[..h]);
        self.nodes.cell_nodes[i]
            .iter()
            .zip(&phi[..h])
            .map(|(&g, p)| self.values[g] * p)
            .sum()
    }

    /// `∫_Υ ψ`, exact for the polynomial pieces.
    pub fn integral(&self) -> f64 {
        (0..self.partition.len())
            .map(|i| {
                let w = self.scheme.basis_integrals(&self.partition.cell(i));
                self.nodes.cell_nodes[i]
                    .iter()
                    .zip(&w)
                    .map(|(&g, w)| self.values[g] * w)
                    .sum::<f64>()
            })
            .sum()
    }
}

fn check_scheme(partition: &Partition, scheme: &InterpScheme) -> Result<()> {
    if partition.dim() != scheme.dim() {
        return Err(Error::DimensionMismatch {
            expected: partition.dim(),
            got: scheme.dim(),
        });
    }
    Ok(())
}

/// `Π_Υ(f)`: interpolates `f` at every node.
pub fn project<F>(f: F, partition: Arc<Partition>, scheme: InterpScheme) -> Result<DensityApprox>
where
    F: Fn(&[f64]) -> f64,
{
    check_scheme(&partition, &scheme)?;
    let nodes = Arc::new(Nodes::new(&partition, &scheme));
    let mut values = Vec::with_capacity(nodes.coords.len());
    for x in &nodes.coords {
        let v = f(x);
        if !v.is_finite() {
            return Err(Error::invalid(format!(
                "function is not finite at interpolation node {x:?}"
            )));
        }
        values.push(v);
    }
    Ok(DensityApprox::with_nodes(partition, scheme, nodes, values, 0))
}

/// `(𝓜_h / 4h) (δ / (h - 1))^h` for `h` equispaced nodes in 1D.
pub fn interp_error_1d(m_h: f64, h: usize, delta: f64) -> Result<f64> {
    if h < 2 {
        return Err(Error::invalid("h must be at least 2; the constant scheme uses λ_f δ"));
    }
    if !(m_h >= 0.0 && delta >= 0.0) {
        return Err(Error::invalid("derivative bound and delta must be nonnegative"));
    }
    Ok(m_h / (4.0 * h as f64) * (delta / (h - 1) as f64).powi(h as i32))
}

/// Bilinear interpolation error constant.
pub fn interp_error_2d(bounds: &DerivativeBounds, delta: f64) -> Result<f64> {
    let m2 = bounds
        .second
        .as_ref()
        .ok_or(Error::MissingConstant("second-derivative bounds"))?;
    let m3 = bounds
        .third_cross
        .as_ref()
        .ok_or(Error::MissingConstant("third cross-derivative bounds"))?;
    if m2.len() < 2 || m3.len() < 2 || m3.iter().any(|r| r.len() < 2) {
        return Err(Error::invalid("two-dimensional derivative bounds need two axes"));
    }
    Ok(delta * delta / 16.0 * (m2[0] + m2[1])
        + delta.powi(3) / (8.0 * std::f64::consts::SQRT_2) * (m3[0][1] + m3[1][0]))
}

/// Trilinear interpolation error constant.
pub fn interp_error_3d(bounds: &DerivativeBounds, delta: f64) -> Result<f64> {
    let m2 = bounds
        .second
        .as_ref()
        .ok_or(Error::MissingConstant("second-derivative bounds"))?;
    let m3 = bounds
        .third_cross
        .as_ref()
        .ok_or(Error::MissingConstant("third cross-derivative bounds"))?;
    let mixed = bounds
        .third_mixed
        .ok_or(Error::MissingConstant("mixed third-derivative bound"))?;
    if m2.len() < 3 || m3.len() < 3 || m3.iter().any(|r| r.len() < 3) {
        return Err(Error::invalid("three-dimensional derivative bounds need three axes"));
    }
    let cross: f64 = (0..3)
        .flat_map(|i| (0..3).filter(move |&j| j != i).map(move |j| (i, j)))
        .map(|(i, j)| m3[i][j])
        .sum();
    Ok(delta * delta / 24.0 * (m2[0] + m2[1] + m2[2]) + delta.powi(3) / (12.0 * 3f64.sqrt()) * (cross + 3.0 * mixed))
}

/// One-step projection error `𝓔^h` of `scheme` for `kernel` at diameter
/// `delta` (`λ_f δ` for the constant scheme).
pub fn interp_error(kernel: &Kernel, scheme: &InterpScheme, delta: f64) -> Result<f64> {
    let bounds = || {
        kernel
            .derivative_bounds()
            .ok_or(Error::MissingConstant("derivative bounds"))
    };
    match scheme.order() {
        InterpOrder::Constant => Ok(kernel.lambda_f() * delta),
        InterpOrder::Polynomial1d { h } => {
            let m = bounds()?
                .univariate(h as u32)
                .ok_or(Error::MissingConstant("derivative bound of the scheme's order"))?;
            interp_error_1d(m, h, delta)
        }
        InterpOrder::Bilinear => interp_error_2d(bounds()?, delta),
        InterpOrder::Trilinear => interp_error_3d(bounds()?, delta),
    }
}

/// `M_f^h = sup_{s̄} ∫_Υ |Π_Υ(t(· | s))(s̄)| ds`.
///
/// Bases that are nonnegative partitions of unity inherit `M_f` (certified
/// as far as `M_f` is). Other schemes get a sampled maximum over
/// `sample_points` points per cell, which is never certified.
pub fn estimate_mfh(
    kernel: &Kernel,
    partition: &Partition,
    scheme: &InterpScheme,
    sample_points: usize,
    quad: &Quadrature,
) -> Result<(f64, bool)> {
    check_scheme(partition, scheme)?;
    if scheme.preserves_m_f() {
        return Ok((kernel.m_f(), kernel.m_f_certified()));
    }
    let domain = partition.domain().clone();
    let h = scheme.nodes_per_cell();
    let per_cell = sample_points.max(2);
    let samples: Vec<(usize, Vec<f64>)> = (0..partition.len())
        .flat_map(|i| {
            let cell = partition.cell(i);
            let d = cell.dim();
            let total = per_cell.pow(d as u32);
            (0..total).map(move |flat| {
                let mut rem = flat;
                let mut x = vec![0.0; d];
                for k in (0..d).rev() {
                    let r = rem % per_cell;
                    rem /= per_cell;
                    x[k] = cell.lower()[k] + cell.width(k) * (r as f64 + 0.5) / per_cell as f64;
                }
                (i, x)
            })
        })
        .collect();
    let values: Vec<f64> = samples
        .par_iter()
        .map(|(i, x)| -> Result<f64> {
            let cell = partition.cell(*i);
            let mut phi = vec![0.0; h];
            scheme.basis(&cell, x, &mut phi);
            let local = scheme.local_nodes(&cell);
            let f = |s: &[f64]| -> f64 {
                local
                    .iter()
                    .zip(&phi)
                    .map(|(node, p)| p * kernel.eval(node, s))
                    .sum::<f64>()
                    .abs()
            };
            // |·| has kinks, so settle for a looser tolerance
            let tol = (quad.spec().tolerance * 1e3).max(1e-7);
            Ok(quad.integrate_with_tolerance(f, &domain, tol)?.value)
        })
        .collect::<Result<_>>()?;
    Ok((values.into_iter().fold(0.0, f64::max), false))
}

/// `E_t^h = 𝓔^h κ(t, M_f^h)` for `t = 0..=horizon`, via the recursion
/// `E_{t+1} = M_f^h E_t + 𝓔^h`, `E_0 = 0`.
pub fn projection_error_recursion(interp_error: f64, m_fh: f64, horizon: usize) -> Vec<f64> {
    let mut e = Vec::with_capacity(horizon + 1);
    e.push(0.0);
    for t in 0..horizon {
        e.push(m_fh * e[t] + interp_error);
    }
    e
}

/// `𝓔^h κ(t, M_f^h)`.
pub fn projection_error(interp_error: f64, m_fh: f64, t: usize) -> f64 {
    interp_error * kappa(t, m_fh)
}

/// Error budgets `ε_t + E_t^h`, `t = 0..=horizon`, of a projection run.
pub fn projection_budgets(
    kernel: &Kernel,
    init: &InitialDensity,
    partition: &Partition,
    scheme: &InterpScheme,
    horizon: usize,
    m_fh: (f64, bool),
) -> Result<Vec<ErrorBudget>> {
    let delta = partition.delta();
    let e_h = interp_error(kernel, scheme, delta)?;
    let eps = TruncationSchedule::for_model(kernel, init, horizon)?;
    Ok((0..=horizon)
        .map(|t| {
            ErrorBudget::new(
                eps.at(t),
                projection_error(e_h, m_fh.0, t),
                BudgetInputs {
                    lambda_0: init.lambda_0(),
                    lambda_f: kernel.lambda_f(),
                    m_f: m_fh.0,
                    delta,
                    t,
                    interp_error: Some(e_h),
                },
                m_fh.1 && kernel.m_f_certified(),
            )
        })
        .collect())
}

/// `∫_{Λ_0 ∩ Υ} t(x | s) μ_0(s) ds` for each point `x`.
fn initial_nodal(
    kernel: &Kernel,
    init: &InitialDensity,
    domain: &AxisBox,
    points: &[Vec<f64>],
    quad: &Quadrature,
) -> Result<Vec<f64>> {
    let Some(region) = init.support().intersection(domain) else {
        return Ok(vec![0.0; points.len()]);
    };
    let widths = vec![kernel.resolution().0; kernel.dim()];
    let tol = quad.spec().tolerance;
    points
        .par_iter()
        .map(|x| {
            Ok(quad
                .integrate_resolved(|s| kernel.eval(x, s) * init.eval(s), &region, tol, &widths)?
                .value)
        })
        .collect()
}

/// `out[g] = Σ_u alpha[u] k[u][g]`, summed in increasing `u`.
fn apply_operator(alpha: &[f64], k: &[f64], size: usize) -> Vec<f64> {
    let mut out = vec![0.0; size];
    for (u, &a) in alpha.iter().enumerate() {
        if a == 0.0 {
            continue;
        }
        let row = &k[u * size..(u + 1) * size];
        for (o, &p) in out.iter_mut().zip(row) {
            *o += a * p;
        }
    }
    out
}

fn with_context(e: Error, what: String) -> Error {
    match e {
        Error::QuadratureNotConverged { lower, upper, context } => Error::QuadratureNotConverged {
            lower,
            upper,
            context: format!("{what}: {context}"),
        },
        other => other,
    }
}

/// Shared-node propagation operator of `scheme`, `size × size` row-major.
fn nodal_operator(
    kernel: &Kernel,
    partition: &Partition,
    scheme: &InterpScheme,
    nodes: &Nodes,
    quad: &Quadrature,
) -> Result<Vec<f64>> {
    let size = nodes.coords.len();
    let h = scheme.nodes_per_cell();
    let widths = vec![kernel.resolution().0; kernel.dim()];
    let tol = quad.spec().tolerance;
    let per_cell: Vec<Vec<f64>> = (0..partition.len())
        .into_par_iter()
        .map(|i| -> Result<Vec<f64>> {
            let cell = partition.cell(i);
            let mut block = vec![0.0; h * size];
            for (g, target) in nodes.coords.iter().enumerate() {
                let r = quad
                    .integrate_vec_resolved(
                        |s, out| {
                            let t = kernel.eval(target, s);
                            if h == 1 {
                                out[0] = t * 1.0;
                            } else {
                                let mut phi = [0.0_f64; 64];
                                scheme.basis(&cell, s, &mut phi[..h]);
                                for (o, p) in out.iter_mut().zip(&phi[..h]) {
                                    *o = t * p;
                                }
                            }
                        },
                        h,
                        &cell,
                        tol,
                        &widths,
                    )
                    .map_err(|e| with_context(e, format!("cell {i}, target node {g}")))?;
                for j in 0..h {
                    block[j * size + g] = r.values[j];
                }
            }
            Ok(block)
        })
        .collect::<Result<_>>()?;
    let mut k = vec![0.0; size * size];
    for (i, block) in per_cell.iter().enumerate() {
        for (j, &u) in nodes.cell_nodes[i].iter().enumerate() {
            let row = &mut k[u * size..(u + 1) * size];
            for (dst, src) in row.iter_mut().zip(&block[j * size..(j + 1) * size]) {
                *dst += src;
            }
        }
    }
    Ok(k)
}

/// Algorithm 1: `ψ_1^h … ψ_N^h` with `ψ_0^h = μ_0`.
///
/// Nodal values start from `β¹_g = ∫ t(x_g | s) μ_0(s) ds` and evolve as
/// `α^{t+1} = α^t K`.
pub fn algorithm1(
    kernel: &Kernel,
    init: &InitialDensity,
    partition: Arc<Partition>,
    scheme: InterpScheme,
    horizon: usize,
    quad: &Quadrature,
) -> Result<Vec<DensityApprox>> {
    check_scheme(&partition, &scheme)?;
    if kernel.dim() != partition.dim() {
        return Err(Error::DimensionMismatch {
            expected: kernel.dim(),
            got: partition.dim(),
        });
    }
    let nodes = Arc::new(Nodes::new(&partition, &scheme));
    let size = nodes.coords.len();
    let k = nodal_operator(kernel, &partition, &scheme, &nodes, quad)?;
    let mut alpha = initial_nodal(kernel, init, partition.domain(), &nodes.coords, quad)?;
    let mut out = Vec::with_capacity(horizon);
    for t in 1..=horizon {
        if t > 1 {
            alpha = apply_operator(&alpha, &k, size);
        }
        out.push(DensityApprox::with_nodes(
            Arc::clone(&partition),
            scheme,
            Arc::clone(&nodes),
            alpha.clone(),
            t,
        ));
    }
    Ok(out)
}

/// Algorithm 2: piecewise-constant propagation with representative points
/// (cell centres when `representatives` is `None`).
pub fn algorithm2(
    kernel: &Kernel,
    init: &InitialDensity,
    partition: Arc<Partition>,
    representatives: Option<&[Vec<f64>]>,
    horizon: usize,
    quad: &Quadrature,
) -> Result<Vec<DensityApprox>> {
    if kernel.dim() != partition.dim() {
        return Err(Error::DimensionMismatch {
            expected: kernel.dim(),
            got: partition.dim(),
        });
    }
    let n = partition.len();
    let reps: Vec<Vec<f64>> = match representatives {
        Some(r) => {
            if r.len() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    got: r.len(),
                });
            }
            for (i, p) in r.iter().enumerate() {
                if p.len() != partition.dim() || !partition.cell(i).contains(p) {
                    return Err(Error::RepresentativeOutsideCell {
                        cell: i,
                        point: p.clone(),
                    });
                }
            }
            r.to_vec()
        }
        None => (0..n).map(|i| partition.cell(i).center()).collect(),
    };
    let widths = vec![kernel.resolution().0; kernel.dim()];
    let tol = quad.spec().tolerance;
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| -> Result<Vec<f64>> {
            let cell = partition.cell(i);
            reps.iter()
                .enumerate()
                .map(|(j, sj)| {
                    quad.integrate_resolved(|s| kernel.eval(sj, s), &cell, tol, &widths)
                        .map(|r| r.value)
                        .map_err(|e| with_context(e, format!("cell {i}, representative {j}")))
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    let p: Vec<f64> = rows.into_iter().flatten().collect();
    let mut alpha = initial_nodal(kernel, init, partition.domain(), &reps, quad)?;
    let mut out = Vec::with_capacity(horizon);
    for t in 1..=horizon {
        if t > 1 {
            alpha = apply_operator(&alpha, &p, n);
        }
        out.push(DensityApprox::piecewise_constant(
            Arc::clone(&partition),
            alpha.clone(),
            t,
        )?);
    }
    Ok(out)
}
