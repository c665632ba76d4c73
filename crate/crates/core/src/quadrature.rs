//! Tensor-product Gauss–Legendre quadrature over boxes with adaptive
//! bisection.
//!
//! The error estimate of a box is the difference between the rule applied to
//! the box and the sum of the rule applied to its two halves (split along the
//! longest axis). A box is accepted when that difference is below its share
//! of the absolute tolerance; otherwise both halves are refined, each with
//! half of the parent's tolerance.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{AxisBox, Partition};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QuadratureSpec {
    /// Gauss–Legendre points per axis.
    pub points: usize,
    /// Maximum bisection depth.
    pub max_depth: usize,
    /// Absolute tolerance on the integral.
    pub tolerance: f64,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        QuadratureSpec {
            points: 8,
            max_depth: 12,
            tolerance: 1e-8,
        }
    }
}

impl QuadratureSpec {
    pub fn with_tolerance(mut self, tolerance: f64) -> Self {
        self.tolerance = tolerance;
        self
    }

    pub fn with_points(mut self, points: usize) -> Self {
        self.points = points;
        self
    }
}

/// Integral value with the accumulated two-level error estimate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Integral {
    pub value: f64,
    pub error: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct VectorIntegral {
    pub values: Vec<f64>,
    pub error: f64,
}

/// Gauss–Legendre rule on `[-1, 1]`.
#[derive(Clone, Debug)]
pub struct GaussLegendre {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussLegendre {
    /// `m`-point rule, exact for polynomials of degree `2m - 1`.
    pub fn new(m: usize) -> Self {
        assert!(m >= 1, "Gauss-Legendre rule needs at least one point");
        let mut nodes = vec![0.0; m];
        let mut weights = vec![0.0; m];
        for i in 0..m.div_ceil(2) {
            // Newton iteration from the Chebyshev-like initial guess.
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (m as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre(m, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let (_, d) = legendre(m, x);
            if d != 0.0 {
                dp = d;
            }
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = -x;
            nodes[m - 1 - i] = x;
            weights[i] = w;
            weights[m - 1 - i] = w;
        }
        if m % 2 == 1 {
            nodes[m / 2] = 0.0;
        }
        GaussLegendre { nodes, weights }
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}

/// `(P_m(x), P_m'(x))` by the three-term recurrence.
fn legendre(m: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    if m == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=m {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    let d = m as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Adaptive cubature engine; cheap to clone and shareable across threads.
#[derive(Clone, Debug)]
pub struct Quadrature {
    spec: QuadratureSpec,
    rule: GaussLegendre,
}

impl Quadrature {
    pub fn new(spec: QuadratureSpec) -> Result<Self> {
        if !(spec.tolerance > 0.0 && spec.tolerance.is_finite()) {
            return Err(Error::invalid("quadrature tolerance must be positive"));
        }
        if spec.max_depth < 1 {
            return Err(Error::invalid("quadrature depth must be >= 1"));
        }
        if spec.points < 1 {
            return Err(Error::invalid("quadrature needs at least one point per axis"));
        }
        Ok(Quadrature {
            spec,
            rule: GaussLegendre::new(spec.points),
        })
    }

    pub fn spec(&self) -> &QuadratureSpec {
        &self.spec
    }

    /// `∫_region f` to the spec's absolute tolerance.
    pub fn integrate<F>(&self, f: F, region: &AxisBox) -> Result<Integral>
    where
        F: Fn(&[f64]) -> f64,
    {
        self.integrate_with_tolerance(f, region, self.spec.tolerance)
    }

    pub fn integrate_with_tolerance<F>(&self, f: F, region: &AxisBox, tolerance: f64) -> Result<Integral>
    where
        F: Fn(&[f64]) -> f64,
    {
        let r = self.integrate_vec_with_tolerance(|x, out| out[0] = f(x), 1, region, tolerance)?;
        Ok(Integral {
            value: r.values[0],
            error: r.error,
        })
    }

    /// Like [`Quadrature::integrate_with_tolerance`], after cutting `region`
    /// into a grid whose pieces are at most `max_width[k]` wide on axis `k`.
    /// Each piece gets a share of the tolerance proportional to its volume.
    /// Adaptive bisection cannot see a feature much narrower than the box it
    /// starts from, so callers pass the integrand's length scale here.
    pub fn integrate_resolved<F>(&self, f: F, region: &AxisBox, tolerance: f64, max_width: &[f64]) -> Result<Integral>
    where
        F: Fn(&[f64]) -> f64,
    {
        let r = self.integrate_vec_resolved(|x, out| out[0] = f(x), 1, region, tolerance, max_width)?;
        Ok(Integral {
            value: r.values[0],
            error: r.error,
        })
    }

    pub fn integrate_vec_resolved<F>(
        &self,
        f: F,
        out_dim: usize,
        region: &AxisBox,
        tolerance: f64,
        max_width: &[f64],
    ) -> Result<VectorIntegral>
    where
        F: Fn(&[f64], &mut [f64]),
    {
        if max_width.len() != region.dim() {
            return Err(Error::DimensionMismatch {
                expected: region.dim(),
                got: max_width.len(),
            });
        }
        let counts: Vec<usize> = (0..region.dim())
            .map(|k| {
                let w = max_width[k];
                if w.is_finite() && w > 0.0 {
                    ((region.width(k) / w).ceil() as usize).max(1)
                } else {
                    1
                }
            })
            .collect();
        if counts.iter().all(|&c| c == 1) {
            return self.integrate_vec_with_tolerance(f, out_dim, region, tolerance);
        }
        let pieces = Partition::uniform_counts(region, &counts)?;
        let share = tolerance / pieces.len() as f64;
        let mut total = VectorIntegral {
            values: vec![0.0; out_dim],
            error: 0.0,
        };
        for piece in pieces.cells() {
            let r = self.integrate_vec_with_tolerance(&f, out_dim, &piece, share)?;
            for (t, v) in total.values.iter_mut().zip(&r.values) {
                *t += v;
            }
            total.error += r.error;
        }
        Ok(total)
    }

    /// Vector-valued integrand: `f(x, out)` writes `out_dim` components.
    /// Convergence is judged on the largest component difference.
    pub fn integrate_vec<F>(&self, f: F, out_dim: usize, region: &AxisBox) -> Result<VectorIntegral>
    where
        F: Fn(&[f64], &mut [f64]),
    {
        self.integrate_vec_with_tolerance(f, out_dim, region, self.spec.tolerance)
    }

    pub fn integrate_vec_with_tolerance<F>(
        &self,
        f: F,
        out_dim: usize,
        region: &AxisBox,
        tolerance: f64,
    ) -> Result<VectorIntegral>
    where
        F: Fn(&[f64], &mut [f64]),
    {
        let mut scratch = Scratch::new(region.dim(), out_dim);
        let coarse = self.apply_rule(&f, region, &mut scratch);
        let mut values = vec![0.0; out_dim];
        let error = self.refine(&f, region, coarse, tolerance, 1, &mut scratch, &mut values)?;
        Ok(VectorIntegral { values, error })
    }

    #[allow(clippy::too_many_arguments)]
    fn refine<F>(
        &self,
        f: &F,
        region: &AxisBox,
        coarse: Vec<f64>,
        tolerance: f64,
        depth: usize,
        scratch: &mut Scratch,
        acc: &mut [f64],
    ) -> Result<f64>
    where
        F: Fn(&[f64], &mut [f64]),
    {
        let (left, right) = region.bisect();
        let l = self.apply_rule(f, &left, scratch);
        let r = self.apply_rule(f, &right, scratch);
        let mut diff = 0.0_f64;
        let mut scale = 0.0_f64;
        for k in 0..coarse.len() {
            let fine = l[k] + r[k];
            diff = diff.max((fine - coarse[k]).abs());
            scale = scale.max(fine.abs());
        }
        if diff <= tolerance || diff <= 64.0 * f64::EPSILON * scale {
            for k in 0..acc.len() {
                acc[k] += l[k] + r[k];
            }
            return Ok(diff);
        }
        if depth >= self.spec.max_depth {
            return Err(Error::QuadratureNotConverged {
                lower: region.lower().to_vec(),
                upper: region.upper().to_vec(),
                context: format!("error estimate {diff:.3e} above tolerance {tolerance:.3e}"),
            });
        }
        let el = self.refine(f, &left, l, 0.5 * tolerance, depth + 1, scratch, acc)?;
        let er = self.refine(f, &right, r, 0.5 * tolerance, depth + 1, scratch, acc)?;
        Ok(el + er)
    }

    fn apply_rule<F>(&self, f: &F, region: &AxisBox, scratch: &mut Scratch) -> Vec<f64>
    where
        F: Fn(&[f64], &mut [f64]),
    {
        let d = region.dim();
        let m = self.rule.nodes.len();
        let half: Vec<f64> = (0..d).map(|k| 0.5 * region.width(k)).collect();
        let mid: Vec<f64> = region.center();
        let jac: f64 = half.iter().product();
        let mut sum = vec![0.0; scratch.out.len()];
        scratch.idx.iter_mut().for_each(|i| *i = 0);
        loop {
            let mut w = jac;
            for k in 0..d {
                let j = scratch.idx[k];
                scratch.x[k] = mid[k] + half[k] * self.rule.nodes[j];
                w *= self.rule.weights[j];
            }
            scratch.out.iter_mut().for_each(|o| *o = 0.0);
            f(&scratch.x, &mut scratch.out);
            for (s, o) in sum.iter_mut().zip(&scratch.out) {
                *s += w * o;
            }
            // odometer over the tensor grid, last axis fastest
            let mut k = d;
            loop {
                if k == 0 {
                    return sum;
                }
                k -= 1;
                scratch.idx[k] += 1;
                if scratch.idx[k] < m {
                    break;
                }
                scratch.idx[k] = 0;
            }
        }
    }
}

struct Scratch {
    x: Vec<f64>,
    idx: Vec<usize>,
    out: Vec<f64>,
}

impl Scratch {
    fn new(dim: usize, out_dim: usize) -> Self {
        Scratch {
            x: vec![0.0; dim],
            idx: vec![0; dim],
            out: vec![0.0; out_dim],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use libm::erf;
    use proptest::prelude::*;

    fn quad() -> Quadrature {
        Quadrature::new(QuadratureSpec::default()).unwrap()
    }

    #[test]
    fn rule_nodes_and_weights() {
        let r = GaussLegendre::new(2);
        assert_abs_diff_eq!(r.nodes()[1], 1.0 / 3f64.sqrt(), epsilon = 1e-15);
        assert_abs_diff_eq!(r.weights()[0], 1.0, epsilon = 1e-15);
        for m in 1..=20 {
            let r = GaussLegendre::new(m);
            let s: f64 = r.weights().iter().sum();
            assert_abs_diff_eq!(s, 2.0, epsilon = 1e-13);
            assert!(r.nodes().windows(2).all(|w| w[0] < w[1]));
        }
    }

    #[test]
    fn constant_over_unit_interval() {
        let r = quad().integrate(|_| 1.0, &AxisBox::unit(1)).unwrap();
        assert_eq!(r.value, 1.0);
    }

    #[test]
    fn degree_fifteen_is_exact() {
        // ∫_0^1 Σ_{k=0}^{15} x^k dx = Σ 1/(k+1)
        let f = |x: &[f64]| (0..=15).map(|k| x[0].powi(k)).sum::<f64>();
        let exact: f64 = (0..=15).map(|k| 1.0 / (k as f64 + 1.0)).sum();
        let rule = Quadrature::new(QuadratureSpec::default().with_tolerance(1e-300)).unwrap();
        // apply the bare 8-point rule
        let mut scratch = Scratch::new(1, 1);
        let v = rule.apply_rule(&|x: &[f64], o: &mut [f64]| o[0] = f(x), &AxisBox::unit(1), &mut scratch);
        assert_abs_diff_eq!(v[0], exact, epsilon = 1e-14);
        let r = quad().integrate(f, &AxisBox::unit(1)).unwrap();
        assert_abs_diff_eq!(r.value, exact, epsilon = 1e-14);
    }

    #[test]
    fn narrow_gaussian_against_erf() {
        let sigma = 0.1;
        let pdf = |x: &[f64]| (-0.5 * (x[0] / sigma).powi(2)).exp() / (sigma * (2.0 * std::f64::consts::PI).sqrt());
        let r = quad().integrate(pdf, &AxisBox::interval(-0.6, 0.6).unwrap()).unwrap();
        let exact = erf(6.0 / 2f64.sqrt());
        assert_abs_diff_eq!(r.value, exact, epsilon = 1e-8);
        assert!(exact > 0.999_999_99);
    }

    #[test]
    fn two_dimensional_product() {
        let r = quad()
            .integrate(
                |x| x[0] * x[1].exp(),
                &AxisBox::new(vec![0.0, 0.0], vec![2.0, 1.0]).unwrap(),
            )
            .unwrap();
        assert_abs_diff_eq!(r.value, 2.0 * (1f64.exp() - 1.0), epsilon = 1e-12);
    }

    #[test]
    fn non_convergence_reports_box() {
        let q = Quadrature::new(QuadratureSpec {
            points: 2,
            max_depth: 2,
            tolerance: 1e-14,
        })
        .unwrap();
        let err = q.integrate(
            |x| (1.0 / x[0].abs().max(1e-12)).sqrt(),
            &AxisBox::interval(-1.0, 1.0).unwrap(),
        );
        assert!(matches!(err, Err(Error::QuadratureNotConverged { .. })));
    }

    #[test]
    fn rejects_bad_spec() {
        assert!(Quadrature::new(QuadratureSpec::default().with_tolerance(0.0)).is_err());
        assert!(Quadrature::new(QuadratureSpec {
            max_depth: 0,
            ..Default::default()
        })
        .is_err());
    }

    #[test]
    fn vector_integrand_matches_scalar() {
        let q = quad();
        let b = AxisBox::interval(0.0, 2.0).unwrap();
        let v = q
            .integrate_vec(
                |x, o| {
                    o[0] = x[0].sin();
                    o[1] = x[0] * x[0];
                },
                2,
                &b,
            )
            .unwrap();
        assert_abs_diff_eq!(v.values[0], 1.0 - 2f64.cos(), epsilon = 1e-12);
        assert_abs_diff_eq!(v.values[1], 8.0 / 3.0, epsilon = 1e-12);
    }

    proptest! {
        #[test]
        fn additivity(c in -2.0f64..2.0, w in 0.5f64..3.0, split in 0.1f64..0.9) {
            let q = quad();
            let f = |x: &[f64]| (c * x[0]).sin() + (-x[0] * x[0]).exp();
            let whole = q.integrate(f, &AxisBox::interval(0.0, w).unwrap()).unwrap();
            let a = q.integrate(f, &AxisBox::interval(0.0, split * w).unwrap()).unwrap();
            let b = q.integrate(f, &AxisBox::interval(split * w, w).unwrap()).unwrap();
            prop_assert!((whole.value - a.value - b.value).abs() <= 2.0 * q.spec().tolerance);
        }

        #[test]
        fn linearity(a in -3.0f64..3.0, b in -3.0f64..3.0, k in 0.5f64..4.0) {
            let q = quad();
            let region = AxisBox::new(vec![-1.0, 0.0], vec![1.0, 1.5]).unwrap();
            let f = |x: &[f64]| (k * x[0]).cos() * x[1];
            let g = |x: &[f64]| (-(x[0] - x[1]).powi(2) * k).exp();
            let lhs = q.integrate(|x| a * f(x) + b * g(x), &region).unwrap().value;
            let rhs = a * q.integrate(f, &region).unwrap().value + b * q.integrate(g, &region).unwrap().value;
            prop_assert!((lhs - rhs).abs() <= (1.0 + a.abs() + b.abs()) * q.spec().tolerance);
        }
    }
}
