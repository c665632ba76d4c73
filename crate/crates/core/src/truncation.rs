//! Truncation error schedule and the truncated density recursion.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{support_recursion, truncated_domain, AxisBox, Partition};
use crate::kernels::{InitialDensity, Kernel};
use crate::quadrature::GaussLegendre;

/// `κ(t, m) = Σ_{k<t} m^k`, i.e. `(1 - m^t) / (1 - m)`, and `t` at `m = 1`.
pub fn kappa(t: usize, m: f64) -> f64 {
    if (m - 1.0).abs() < 1e-9 {
        t as f64
    } else {
        (1.0 - m.powi(t as i32)) / (1.0 - m)
    }
}

/// `ε_0 … ε_N` with `ε_{t+1} = ε + M_f ε_t`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruncationSchedule {
    pub epsilon: f64,
    pub epsilon_0: f64,
    pub m_f: f64,
    values: Vec<f64>,
}

impl TruncationSchedule {
    pub fn new(epsilon: f64, epsilon_0: f64, m_f: f64, horizon: usize) -> Result<Self> {
        if !(epsilon.is_finite() && epsilon >= 0.0 && epsilon_0.is_finite() && epsilon_0 >= 0.0) {
            return Err(Error::invalid("tail bounds must be finite and >= 0"));
        }
        if !(m_f.is_finite() && m_f > 0.0) {
            return Err(Error::invalid("m_f must be finite and > 0"));
        }
        let mut values = Vec::with_capacity(horizon + 1);
        values.push(epsilon_0);
        for t in 0..horizon {
            values.push(epsilon + m_f * values[t]);
        }
        Ok(TruncationSchedule {
            epsilon,
            epsilon_0,
            m_f,
            values,
        })
    }

    pub fn for_model(kernel: &Kernel, init: &InitialDensity, horizon: usize) -> Result<Self> {
        Self::new(kernel.epsilon_tail(), init.epsilon_0(), kernel.m_f(), horizon)
    }

    pub fn horizon(&self) -> usize {
        self.values.len() - 1
    }

    /// `ε_t` from the recursion.
    pub fn at(&self, t: usize) -> f64 {
        self.values[t]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// `κ(t, M_f) ε + M_f^t ε_0`.
    pub fn closed_form(&self, t: usize) -> f64 {
        kappa(t, self.m_f) * self.epsilon + self.m_f.powi(t as i32) * self.epsilon_0
    }
}

/// Truncated densities `μ_0 … μ_N` on `Υ`, computed by Nyström iteration on
/// composite Gauss–Legendre nodes.
///
/// Reference solution for tests: `μ_{t+1}(x) = ∫_Υ t(x | s) μ_t(s) ds`,
/// `μ_0 = 1_{Λ_0} π_0`. Not part of any certified computation.
#[derive(Clone, Debug)]
pub struct TruncatedGrid {
    domain: AxisBox,
    nodes: Vec<Vec<f64>>,
    weights: Vec<f64>,
    steps: Vec<Vec<f64>>,
}

impl TruncatedGrid {
    pub fn nodes(&self) -> &[Vec<f64>] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn horizon(&self) -> usize {
        self.steps.len() - 1
    }

    /// `μ_t` at the quadrature nodes.
    pub fn values(&self, t: usize) -> &[f64] {
        &self.steps[t]
    }

    /// `∫_Υ μ_t` by the node rule.
    pub fn mass(&self, t: usize) -> f64 {
        self.steps[t].iter().zip(&self.weights).map(|(v, w)| v * w).sum()
    }

    /// `μ_t(x)` through the Nyström interpolant; zero outside `Υ`.
    pub fn eval(&self, kernel: &Kernel, init: &InitialDensity, t: usize, x: &[f64]) -> f64 {
        if !self.domain.contains(x) {
            return 0.0;
        }
        if t == 0 {
            return init.truncated(x);
        }
        self.nodes
            .iter()
            .zip(&self.weights)
            .zip(&self.steps[t - 1])
            .map(|((s, w), v)| w * kernel.eval(x, s) * v)
            .sum()
    }
}

/// `Υ = ∪_{t ≤ N} Λ_t`, from the kernel's support band.
pub fn working_domain(kernel: &Kernel, init: &InitialDensity, horizon: usize) -> Result<AxisBox> {
    let band = kernel.band().ok_or(Error::MissingConstant("band"))?;
    truncated_domain(&support_recursion(band, init.support(), horizon)?)
}

/// Uniform partition of `Υ` with diameter at most `delta`, with grid lines
/// through the lower corner of `Λ_0` so that the initial support is a union
/// of cells.
pub fn working_partition(kernel: &Kernel, init: &InitialDensity, horizon: usize, delta: f64) -> Result<Partition> {
    let domain = working_domain(kernel, init, horizon)?;
    Partition::uniform_aligned(&domain, delta, init.support().lower())
}

/// Runs the truncated recursion on `domain` with panels no wider than
/// `panel_width` per axis, each carrying `points` Gauss–Legendre nodes.
/// Panel edges include the faces of `Λ_0` so the indicator in `μ_0` is
/// integrated exactly.
pub fn truncated_propagate(
    kernel: &Kernel,
    init: &InitialDensity,
    domain: &AxisBox,
    horizon: usize,
    panel_width: f64,
    points: usize,
) -> Result<TruncatedGrid> {
    use rayon::prelude::*;

    let d = kernel.dim();
    if domain.dim() != d || init.dim() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: domain.dim().min(init.dim()),
        });
    }
    if panel_width.is_nan() || panel_width <= 0.0 || points == 0 {
        return Err(Error::invalid("panel width and node count must be positive"));
    }
    if let Some(band) = kernel.band() {
        let narrowest = band.half_width.iter().copied().fold(f64::INFINITY, f64::min);
        if panel_width > narrowest {
            log::warn!(
                "reference grid panels ({panel_width}) are wider than the kernel band half-width ({narrowest}); \
                 the truncated recursion will be inaccurate"
            );
        }
    }
    let rule = GaussLegendre::new(points);
    let mut axis_nodes = Vec::with_capacity(d);
    let mut axis_weights = Vec::with_capacity(d);
    for k in 0..d {
        let (lo, hi) = (domain.lower()[k], domain.upper()[k]);
        let mut edges = vec![lo, hi];
        for f in [init.support().lower()[k], init.support().upper()[k]] {
            if f > lo && f < hi {
                edges.push(f);
            }
        }
        edges.sort_by(f64::total_cmp);
        let (mut xs, mut ws) = (Vec::new(), Vec::new());
        for seg in edges.windows(2) {
            let panels = ((seg[1] - seg[0]) / panel_width).ceil().max(1.0) as usize;
            let h = (seg[1] - seg[0]) / panels as f64;
            for p in 0..panels {
                let c = seg[0] + (p as f64 + 0.5) * h;
                for (u, w) in rule.nodes().iter().zip(rule.weights()) {
                    xs.push(c + 0.5 * h * u);
                    ws.push(0.5 * h * w);
                }
            }
        }
        axis_nodes.push(xs);
        axis_weights.push(ws);
    }
    let total: usize = axis_nodes.iter().map(Vec::len).product();
    let mut nodes = Vec::with_capacity(total);
    let mut weights = Vec::with_capacity(total);
    for flat in 0..total {
        let mut rem = flat;
        let mut x = vec![0.0; d];
        let mut w = 1.0;
        for k in (0..d).rev() {
            let n = axis_nodes[k].len();
            let i = rem % n;
            rem /= n;
            x[k] = axis_nodes[k][i];
            w *= axis_weights[k][i];
        }
        nodes.push(x);
        weights.push(w);
    }
    let mut steps = Vec::with_capacity(horizon + 1);
    steps.push(nodes.iter().map(|x| init.truncated(x)).collect::<Vec<f64>>());
    for _ in 0..horizon {
        let prev: Vec<f64> = steps
            .last()
            .expect("nonempty")
            .iter()
            .zip(&weights)
            .map(|(v, w)| v * w)
            .collect();
        let next: Vec<f64> = nodes
            .par_iter()
            .map(|x| nodes.iter().zip(&prev).map(|(s, pw)| kernel.eval(x, s) * pw).sum())
            .collect();
        steps.push(next);
    }
    Ok(TruncatedGrid {
        domain: domain.clone(),
        nodes,
        weights,
        steps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{support_recursion, truncated_domain};
    use crate::kernels::{linear_gaussian_1d, std_normal_pdf, KernelConstants};
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use std::sync::Arc;

    fn geometric_sum(t: usize, m: f64) -> f64 {
        (0..t).map(|k| m.powi(k as i32)).sum()
    }

    #[test]
    fn kappa_values() {
        assert_eq!(kappa(7, 1.0), 7.0);
        assert_eq!(kappa(0, 0.3), 0.0);
        assert!((kappa(5, 1.0 / 1.2) - 3.5887).abs() < 5e-5);
        assert!((kappa(10, 1.25) - 33.253).abs() < 5e-4);
        assert_relative_eq!(kappa(3, 1.0 + 1e-12), 3.0);
    }

    #[test]
    fn tail_schedule_for_linear_gaussian() {
        let (k, init) = linear_gaussian_1d(1.2, 0.0, 0.1, 2.4, (0.0, 1.0)).unwrap();
        let s = TruncationSchedule::for_model(&k, &init, 5).unwrap();
        let eps = std_normal_pdf(2.4) / 0.1;
        for t in 0..=5 {
            assert_relative_eq!(s.at(t), kappa(t, 1.0 / 1.2) * eps, max_relative = 1e-12);
        }
        assert!((s.at(5) - 0.8036).abs() < 5e-4);
    }

    #[test]
    fn zero_tails_give_zero_schedule() {
        let s = TruncationSchedule::new(0.0, 0.0, 1.7, 8).unwrap();
        assert!(s.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(TruncationSchedule::new(-1.0, 0.0, 1.0, 3).is_err());
        assert!(TruncationSchedule::new(1.0, 0.0, 0.0, 3).is_err());
    }

    proptest! {
        #[test]
        fn kappa_matches_geometric_sum(t in 0usize..40, m in 0.05f64..2.0) {
            let direct = geometric_sum(t, m);
            prop_assert!((kappa(t, m) - direct).abs() <= 1e-10 * direct.max(1.0));
            prop_assert!((kappa(t + 1, m) - (1.0 + m * kappa(t, m))).abs() <= 1e-10 * kappa(t + 1, m).max(1.0));
        }

        #[test]
        fn closed_form_matches_recursion(
            eps in 0.0f64..10.0,
            eps0 in 0.0f64..10.0,
            m in 0.05f64..2.0,
            n in 0usize..30,
        ) {
            let s = TruncationSchedule::new(eps, eps0, m, n).unwrap();
            for t in 0..=n {
                let cf = s.closed_form(t);
                prop_assert!((cf - s.at(t)).abs() <= 1e-10 * cf.abs().max(1e-300));
                if t > 0 {
                    prop_assert!(s.at(t) >= s.at(t - 1) || m < 1.0);
                }
            }
        }
    }

    #[test]
    fn contained_kernel_keeps_mass() {
        // uniform on [0,1] regardless of the current state
        let k = Kernel::custom(
            1,
            Arc::new(|x: &[f64], _: &[f64]| if (0.0..=1.0).contains(&x[0]) { 1.0 } else { 0.0 }),
            KernelConstants {
                lambda_f: 0.0,
                lambda_b: Some(0.0),
                m_f: 1.0,
                m_f_certified: true,
                m_b: None,
                derivative_bounds: None,
                band: None,
                epsilon_tail: 0.0,
            },
            "uniform",
        )
        .unwrap();
        let init = InitialDensity::uniform(AxisBox::interval(0.25, 0.75).unwrap());
        let g = truncated_propagate(&k, &init, &AxisBox::unit(1), 4, 0.1, 6).unwrap();
        for t in 0..=4 {
            assert!((g.mass(t) - 1.0).abs() < 1e-12);
        }
        assert_eq!(g.eval(&k, &init, 0, &[0.9]), 0.0);
    }

    #[test]
    fn truncated_mass_is_nonincreasing() {
        let (k, init) = linear_gaussian_1d(0.8, 0.0, 0.1, 2.4, (0.0, 1.0)).unwrap();
        let sets = support_recursion(k.band().unwrap(), init.support(), 5).unwrap();
        let dom = truncated_domain(&sets).unwrap();
        let g = truncated_propagate(&k, &init, &dom, 5, 0.02, 8).unwrap();
        for t in 1..=5 {
            assert!(g.mass(t) <= g.mass(t - 1) + 1e-12);
            assert!(g.values(t).iter().all(|&v| v >= 0.0));
        }
    }
}
