//! Transition kernels, initial densities and their certified constants.
//!
//! A [`Kernel`] pairs the conditional density `t(s̄ | s)` with the constants
//! the error formulas consume. The constants are never inferred from samples
//! on the certified path: built-in families fill them analytically, custom
//! kernels take them from the caller. The [`probe`] submodule offers
//! numeric estimates for validation, and kernels whose `M_f` came from such an
//! estimate are flagged as uncertified.
//!
//! Density evaluators must be pure and reentrant: chain assembly calls them
//! concurrently from many threads.

use std::fmt;
use std::sync::Arc;

use libm::erfc;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{AxisBox, BandMap};
use crate::quadrature::{Quadrature, QuadratureSpec};

/// `t(next | current)`.
pub type TransitionFn = dyn Fn(&[f64], &[f64]) -> f64 + Send + Sync;
pub type PointFn = dyn Fn(&[f64]) -> f64 + Send + Sync;
pub type VectorField = dyn Fn(&[f64]) -> Vec<f64> + Send + Sync;

const SQRT_2PI: f64 = 2.506_628_274_631_000_7;

/// Standard normal density.
pub fn std_normal_pdf(u: f64) -> f64 {
    (-0.5 * u * u).exp() / SQRT_2PI
}

/// Standard normal distribution function, accurate in both tails.
pub fn std_normal_cdf(u: f64) -> f64 {
    0.5 * erfc(-u / std::f64::consts::SQRT_2)
}

/// `Φ(hi) - Φ(lo)` without cancellation when both arguments sit in the same tail.
pub fn std_normal_mass(lo: f64, hi: f64) -> f64 {
    if lo > 0.0 {
        std_normal_cdf(-lo) - std_normal_cdf(-hi)
    } else {
        std_normal_cdf(hi) - std_normal_cdf(lo)
    }
}

/// `sup_x |d^h/dx^h φ_σ(x)|` for the centred normal density with deviation
/// `σ`.
///
/// The extremes of `He_h(u) φ(u)` sit at the roots of `He_{h+1}`, which are
/// bracketed on a fine grid and refined by bisection.
pub fn gaussian_derivative_sup(order: u32, sigma: f64) -> f64 {
    if order == 0 {
        return 1.0 / (sigma * SQRT_2PI);
    }
    let h = order as usize;
    let reach = 2.0 * ((h + 2) as f64).sqrt() + 1.0;
    let step = 1e-3;
    let mut best = 0.0_f64;
    let mut consider = |u: f64| {
        best = best.max(hermite(h, u).abs() * std_normal_pdf(u));
    };
    let steps = (2.0 * reach / step).ceil() as usize;
    let mut prev_u = -reach;
    let mut prev = hermite(h + 1, prev_u);
    for k in 1..=steps {
        let u = -reach + k as f64 * step;
        let cur = hermite(h + 1, u);
        if cur == 0.0 {
            consider(u);
        } else if prev.signum() != cur.signum() && prev != 0.0 {
            let (mut a, mut b) = (prev_u, u);
            let fa = prev;
            for _ in 0..80 {
                let m = 0.5 * (a + b);
                let fm = hermite(h + 1, m);
                if fm.signum() == fa.signum() {
                    a = m;
                } else {
                    b = m;
                }
            }
            consider(0.5 * (a + b));
        }
        prev_u = u;
        prev = cur;
    }
    best / sigma.powi(order as i32 + 1)
}

/// Probabilists' Hermite polynomial `He_n(u)`.
fn hermite(n: usize, u: f64) -> f64 {
    let (mut h0, mut h1) = (1.0, u);
    if n == 0 {
        return h0;
    }
    for k in 1..n {
        let h2 = u * h1 - k as f64 * h0;
        h0 = h1;
        h1 = h2;
    }
    h1
}

/// Bounds on derivatives of `t(s̄ | s)` with respect to `s̄`, uniform in `s`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DerivativeBounds {
    /// One-dimensional kernels: `(h, sup |∂^h t / ∂s̄^h|)`.
    pub univariate: Vec<(u32, f64)>,
    /// `sup |∂² t / ∂s̄_k²|` per axis.
    pub second: Option<Vec<f64>>,
    /// `third_cross[i][j] = sup |∂³ t / ∂s̄_i² ∂s̄_j|` for `i != j`; the
    /// diagonal is ignored.
    pub third_cross: Option<Vec<Vec<f64>>>,
    /// `sup |∂³ t / ∂s̄_1 ∂s̄_2 ∂s̄_3|` (three-dimensional kernels).
    pub third_mixed: Option<f64>,
}

impl DerivativeBounds {
    pub fn univariate(&self, order: u32) -> Option<f64> {
        self.univariate.iter().find(|(h, _)| *h == order).map(|(_, v)| *v)
    }

    pub fn validate(&self) -> Result<()> {
        let all = self
            .univariate
            .iter()
            .map(|(_, v)| *v)
            .chain(self.second.iter().flatten().copied())
            .chain(self.third_cross.iter().flatten().flatten().copied())
            .chain(self.third_mixed);
        for v in all {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::invalid(format!(
                    "derivative bounds must be finite and nonnegative, got {v}"
                )));
            }
        }
        Ok(())
    }

    /// Analytic bounds for the isotropic Gaussian density `N(0, σ² I_d)`.
    pub fn isotropic_gaussian(dim: usize, sigma: f64) -> Self {
        let peak = (2.0 * std::f64::consts::PI * sigma * sigma).powf(-(dim as f64) / 2.0);
        let e_half = (-0.5_f64).exp();
        let mut bounds = DerivativeBounds {
            second: Some(vec![peak / (sigma * sigma); dim]),
            ..Default::default()
        };
        if dim == 1 {
            bounds.univariate = (1..=4).map(|h| (h, gaussian_derivative_sup(h, sigma))).collect();
        } else {
            // sup|(u²-1) e^{-u²/2}| = 1 and sup|u e^{-u²/2}| = e^{-1/2}
            let cross = peak * e_half / sigma.powi(3);
            let mut m = vec![vec![cross; dim]; dim];
            for (i, row) in m.iter_mut().enumerate() {
                row[i] = 0.0;
            }
            bounds.third_cross = Some(m);
            if dim == 3 {
                bounds.third_mixed = Some(peak * e_half.powi(3) / sigma.powi(3));
            }
        }
        bounds
    }
}

/// User-facing constants of a custom kernel.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelConstants {
    pub lambda_f: f64,
    #[serde(default)]
    pub lambda_b: Option<f64>,
    pub m_f: f64,
    #[serde(default = "yes")]
    pub m_f_certified: bool,
    #[serde(default)]
    pub m_b: Option<f64>,
    #[serde(default)]
    pub derivative_bounds: Option<DerivativeBounds>,
    #[serde(default)]
    pub band: Option<BandMap>,
    #[serde(default)]
    pub epsilon_tail: f64,
}

fn yes() -> bool {
    true
}

/// Conditional density `t(s̄ | s)` together with its certified constants.
#[derive(Clone)]
pub struct Kernel {
    dim: usize,
    density: Arc<TransitionFn>,
    constants: KernelConstants,
    label: String,
}

impl fmt::Debug for Kernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Kernel")
            .field("label", &self.label)
            .field("dim", &self.dim)
            .field("constants", &self.constants)
            .finish()
    }
}

impl Kernel {
    /// Kernel from a user density and user-supplied constants.
    pub fn custom(
        dim: usize,
        density: Arc<TransitionFn>,
        constants: KernelConstants,
        label: impl Into<String>,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("kernel dimension must be positive"));
        }
        let c = &constants;
        if !(c.lambda_f.is_finite() && c.lambda_f >= 0.0) {
            return Err(Error::invalid("lambda_f must be finite and >= 0"));
        }
        if let Some(lb) = c.lambda_b {
            if !(lb.is_finite() && lb >= 0.0) {
                return Err(Error::invalid("lambda_b must be finite and >= 0"));
            }
        }
        if !(c.m_f.is_finite() && c.m_f > 0.0) {
            return Err(Error::invalid("m_f must be finite and > 0"));
        }
        if let Some(mb) = c.m_b {
            if !(mb > 0.0 && mb <= 1.0) {
                return Err(Error::invalid("m_b must lie in (0, 1]"));
            }
        }
        if !(c.epsilon_tail.is_finite() && c.epsilon_tail >= 0.0) {
            return Err(Error::invalid("epsilon_tail must be finite and >= 0"));
        }
        if let Some(b) = &c.derivative_bounds {
            b.validate()?;
        }
        if let Some(band) = &c.band {
            band.validate()?;
            if band.dim() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: band.dim(),
                });
            }
        }
        Ok(Kernel {
            dim,
            density,
            constants,
            label: label.into(),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    /// `t(next | current)`.
    #[inline]
    pub fn eval(&self, next: &[f64], current: &[f64]) -> f64 {
        (self.density)(next, current)
    }

    pub fn density(&self) -> &Arc<TransitionFn> {
        &self.density
    }

    pub fn constants(&self) -> &KernelConstants {
        &self.constants
    }

    pub fn lambda_f(&self) -> f64 {
        self.constants.lambda_f
    }

    pub fn lambda_b(&self) -> Option<f64> {
        self.constants.lambda_b
    }

    pub fn m_f(&self) -> f64 {
        self.constants.m_f
    }

    /// Whether `M_f` is an analytic (or user-asserted) bound rather than a
    /// sampled estimate.
    pub fn m_f_certified(&self) -> bool {
        self.constants.m_f_certified
    }

    pub fn m_b(&self) -> Option<f64> {
        self.constants.m_b
    }

    pub fn derivative_bounds(&self) -> Option<&DerivativeBounds> {
        self.constants.derivative_bounds.as_ref()
    }

    pub fn band(&self) -> Option<&BandMap> {
        self.constants.band.as_ref()
    }

    /// Widths below which an integrand built from the kernel is resolved
    /// by the quadrature rule, as `(current, next)`: half of
    /// `λ^{-1/(d+1)}`, with `λ_b` on the current state when it is known.
    pub fn resolution(&self) -> (f64, f64) {
        let scale = |lambda: f64| 0.5 * lambda.powf(-1.0 / (self.dim() as f64 + 1.0));
        let next = scale(self.lambda_f());
        (self.lambda_b().map_or(next, scale), next)
    }

    pub fn epsilon_tail(&self) -> f64 {
        self.constants.epsilon_tail
    }

    /// Copy with `M_b` set (it depends on the safe set, not only on the
    /// kernel).
    pub fn with_m_b(mut self, m_b: f64) -> Result<Self> {
        if !(m_b > 0.0 && m_b <= 1.0) {
            return Err(Error::invalid("m_b must lie in (0, 1]"));
        }
        self.constants.m_b = Some(m_b);
        Ok(self)
    }

    /// Copy with some constants replaced by caller-supplied values.
    pub fn with_constants(self, constants: KernelConstants) -> Result<Self> {
        Kernel::custom(self.dim, self.density, constants, self.label)
    }
}

/// Initial density `π_0` with support box `Λ_0`.
#[derive(Clone)]
pub struct InitialDensity {
    density: Arc<PointFn>,
    lambda_0: f64,
    support: AxisBox,
    epsilon_0: f64,
    sup: Option<f64>,
}

impl fmt::Debug for InitialDensity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("InitialDensity")
            .field("lambda_0", &self.lambda_0)
            .field("support", &self.support)
            .field("epsilon_0", &self.epsilon_0)
            .field("sup", &self.sup)
            .finish()
    }
}

impl InitialDensity {
    pub fn new(
        density: Arc<PointFn>,
        lambda_0: f64,
        support: AxisBox,
        epsilon_0: f64,
        sup: Option<f64>,
    ) -> Result<Self> {
        if !(lambda_0.is_finite() && lambda_0 >= 0.0) {
            return Err(Error::invalid("lambda_0 must be finite and >= 0"));
        }
        if !(epsilon_0.is_finite() && epsilon_0 >= 0.0) {
            return Err(Error::invalid("epsilon_0 must be finite and >= 0"));
        }
        Ok(InitialDensity {
            density,
            lambda_0,
            support,
            epsilon_0,
            sup,
        })
    }

    /// Uniform density on `support`.
    pub fn uniform(support: AxisBox) -> Self {
        let height = 1.0 / support.volume();
        let region = support.clone();
        InitialDensity {
            density: Arc::new(move |x: &[f64]| if region.contains(x) { height } else { 0.0 }),
            lambda_0: 0.0,
            support,
            epsilon_0: 0.0,
            sup: Some(height),
        }
    }

    /// Density with total mass scaled by `factor` (0 gives the zero density).
    pub fn scaled(&self, factor: f64) -> Self {
        let inner = Arc::clone(&self.density);
        InitialDensity {
            density: Arc::new(move |x: &[f64]| factor * inner(x)),
            lambda_0: self.lambda_0 * factor,
            support: self.support.clone(),
            epsilon_0: self.epsilon_0 * factor,
            sup: self.sup.map(|s| s * factor),
        }
    }

    pub fn dim(&self) -> usize {
        self.support.dim()
    }

    #[inline]
    pub fn eval(&self, x: &[f64]) -> f64 {
        (self.density)(x)
    }

    pub fn lambda_0(&self) -> f64 {
        self.lambda_0
    }

    pub fn support(&self) -> &AxisBox {
        &self.support
    }

    pub fn epsilon_0(&self) -> f64 {
        self.epsilon_0
    }

    /// `sup π_0`, when known.
    pub fn sup(&self) -> Option<f64> {
        self.sup
    }

    /// `μ_0 = 1_{Λ_0} π_0`.
    #[inline]
    pub fn truncated(&self, x: &[f64]) -> f64 {
        if self.support.contains(x) {
            self.eval(x)
        } else {
            0.0
        }
    }
}

/// Tail descriptor of a noise density: `t_w(w) <= epsilon` outside the box
/// `[-half_width, half_width]`.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseTail {
    pub half_width: Vec<f64>,
    pub epsilon: f64,
}

/// Density `t_w` of an additive noise term.
#[derive(Clone)]
pub struct NoiseDensity {
    dim: usize,
    density: Arc<PointFn>,
    lipschitz: Option<f64>,
    derivative_bounds: Option<DerivativeBounds>,
    tail: Option<NoiseTail>,
}

impl fmt::Debug for NoiseDensity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("NoiseDensity")
            .field("dim", &self.dim)
            .field("lipschitz", &self.lipschitz)
            .field("tail", &self.tail)
            .finish()
    }
}

impl NoiseDensity {
    pub fn new(
        dim: usize,
        density: Arc<PointFn>,
        lipschitz: Option<f64>,
        derivative_bounds: Option<DerivativeBounds>,
        tail: Option<NoiseTail>,
    ) -> Self {
        NoiseDensity {
            dim,
            density,
            lipschitz,
            derivative_bounds,
            tail,
        }
    }

    /// Isotropic Gaussian `N(0, σ² I_d)`, truncated at `alpha` deviations per
    /// axis.
    pub fn gaussian(dim: usize, sigma: f64, alpha: f64) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::invalid("noise sigma must be positive"));
        }
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::invalid("truncation alpha must be positive"));
        }
        let peak = (2.0 * std::f64::consts::PI * sigma * sigma).powf(-(dim as f64) / 2.0);
        let inv_var = 1.0 / (sigma * sigma);
        let density = Arc::new(move |w: &[f64]| {
            let r2: f64 = w.iter().map(|x| x * x).sum();
            peak * (-0.5 * r2 * inv_var).exp()
        });
        // gradient norm r/σ² · φ peaks at r = σ
        let lipschitz = peak * (-0.5_f64).exp() / sigma;
        // outside the box some axis exceeds ασ; the density there is at most
        // φ_σ(ασ) times the peak of the remaining axes
        let axis_peak = 1.0 / (sigma * SQRT_2PI);
        let epsilon = std_normal_pdf(alpha) / sigma * axis_peak.powi(dim as i32 - 1);
        Ok(NoiseDensity {
            dim,
            density,
            lipschitz: Some(lipschitz),
            derivative_bounds: Some(DerivativeBounds::isotropic_gaussian(dim, sigma)),
            tail: Some(NoiseTail {
                half_width: vec![alpha * sigma; dim],
                epsilon,
            }),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn lipschitz(&self) -> Option<f64> {
        self.lipschitz
    }

    pub fn tail(&self) -> Option<&NoiseTail> {
        self.tail.as_ref()
    }

    #[inline]
    pub fn eval(&self, w: &[f64]) -> f64 {
        (self.density)(w)
    }
}

/// Linear Gaussian model `s' = a s + b + σ w` with `s_0 ~ U[β_0, γ_0]`.
///
/// The support band is `|s̄ - a s - b| <= α σ`; all constants are analytic.
pub fn linear_gaussian_1d(
    a: f64,
    b: f64,
    sigma: f64,
    alpha: f64,
    init: (f64, f64),
) -> Result<(Kernel, InitialDensity)> {
    if a == 0.0 || !a.is_finite() {
        return Err(Error::invalid("linear Gaussian gain a must be nonzero and finite"));
    }
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::invalid("sigma must be positive"));
    }
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::invalid("alpha must be positive"));
    }
    if !b.is_finite() {
        return Err(Error::invalid("offset b must be finite"));
    }
    let (beta0, gamma0) = init;
    let support =
        AxisBox::interval(beta0, gamma0).map_err(|_| Error::invalid("initial interval needs beta0 < gamma0"))?;
    let lambda_f = 1.0 / (sigma * sigma * (2.0 * std::f64::consts::PI * std::f64::consts::E).sqrt());
    let inv = 1.0 / sigma;
    let density = Arc::new(move |next: &[f64], cur: &[f64]| std_normal_pdf((next[0] - a * cur[0] - b) * inv) * inv);
    let constants = KernelConstants {
        lambda_f,
        lambda_b: Some(a.abs() * lambda_f),
        m_f: 1.0 / a.abs(),
        m_f_certified: true,
        m_b: None,
        derivative_bounds: Some(DerivativeBounds::isotropic_gaussian(1, sigma)),
        band: Some(BandMap::scalar(a, b, alpha * sigma)?),
        epsilon_tail: std_normal_pdf(alpha) / sigma,
    };
    let kernel = Kernel::custom(
        1,
        density,
        constants,
        format!("linear-gaussian(a={a}, b={b}, sigma={sigma}, alpha={alpha})"),
    )?;
    Ok((kernel, InitialDensity::uniform(support)))
}

/// `s' = A s + w` with noise density `t_w`: `t(s̄ | s) = t_w(s̄ - A s)`,
/// `M_f = 1 / |det A|`, `λ_f = Lip(t_w)`, `λ_b = Lip(t_w) ‖A‖₂`.
pub fn linear_system_kernel(matrix: &[Vec<f64>], noise: NoiseDensity) -> Result<Kernel> {
    let d = matrix.len();
    if d == 0 || matrix.iter().any(|r| r.len() != d) {
        return Err(Error::invalid("system matrix must be square and nonempty"));
    }
    if noise.dim() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: noise.dim(),
        });
    }
    let a = DMatrix::from_fn(d, d, |i, j| matrix[i][j]);
    let det = a.determinant();
    if det.abs() < 1e-300 || !det.is_finite() {
        return Err(Error::SingularMatrix(format!("det A = {det}")));
    }
    let lip = noise
        .lipschitz()
        .ok_or(Error::MissingConstant("noise Lipschitz constant"))?;
    let norm = a.clone().svd(false, false).singular_values.max();
    let (band, epsilon_tail) = match noise.tail() {
        Some(tail) => (
            Some(BandMap::new(matrix.to_vec(), vec![0.0; d], tail.half_width.clone())?),
            tail.epsilon,
        ),
        None => (None, 0.0),
    };
    let rows: Vec<Vec<f64>> = matrix.to_vec();
    let noise_fn = Arc::clone(&noise.density);
    let density = Arc::new(move |next: &[f64], cur: &[f64]| {
        let mut w = [0.0_f64; 8];
        if d <= 8 {
            for k in 0..d {
                w[k] = next[k] - rows[k].iter().zip(cur).map(|(x, y)| x * y).sum::<f64>();
            }
            noise_fn(&w[..d])
        } else {
            let w: Vec<f64> = (0..d)
                .map(|k| next[k] - rows[k].iter().zip(cur).map(|(x, y)| x * y).sum::<f64>())
                .collect();
            noise_fn(&w)
        }
    });
    let constants = KernelConstants {
        lambda_f: lip,
        lambda_b: Some(lip * norm),
        m_f: 1.0 / det.abs(),
        m_f_certified: true,
        m_b: None,
        derivative_bounds: noise.derivative_bounds.clone(),
        band,
        epsilon_tail,
    };
    Kernel::custom(d, density, constants, format!("linear-system(d={d})"))
}

/// Where `M_f` comes from for kernels without a closed form.
#[derive(Clone, Debug)]
pub enum MfSource {
    /// Caller-asserted bound (certified).
    Given(f64),
    /// Sampled estimate over `domain` (uncertified): `next_points` grid
    /// points per axis for `s̄`, integrating over `s ∈ domain`.
    Sampled {
        domain: AxisBox,
        next_points: usize,
        quadrature: QuadratureSpec,
    },
}

/// `s' = f_a(s) + w`: `t(s̄ | s) = t_w(s̄ - f_a(s))`, `λ_f = Lip(t_w)`,
/// `λ_b = Lip(t_w) · Lip(f_a)`.
pub fn additive_noise_kernel(
    drift: Arc<VectorField>,
    drift_lipschitz: f64,
    noise: NoiseDensity,
    m_f: MfSource,
) -> Result<Kernel> {
    if !(drift_lipschitz.is_finite() && drift_lipschitz >= 0.0) {
        return Err(Error::invalid("drift Lipschitz constant must be finite and >= 0"));
    }
    let lip = noise
        .lipschitz()
        .ok_or(Error::MissingConstant("noise Lipschitz constant"))?;
    let d = noise.dim();
    let noise_fn = Arc::clone(&noise.density);
    let drift_fn = Arc::clone(&drift);
    let density: Arc<TransitionFn> = Arc::new(move |next: &[f64], cur: &[f64]| {
        let c = drift_fn(cur);
        let w: Vec<f64> = next.iter().zip(&c).map(|(x, y)| x - y).collect();
        noise_fn(&w)
    });
    let provisional = KernelConstants {
        lambda_f: lip,
        lambda_b: Some(lip * drift_lipschitz),
        m_f: 1.0,
        m_f_certified: false,
        m_b: None,
        derivative_bounds: noise.derivative_bounds.clone(),
        band: None,
        epsilon_tail: 0.0,
    };
    let label = format!("additive-noise(d={d})");
    let kernel = Kernel::custom(d, Arc::clone(&density), provisional.clone(), label.clone())?;
    let (value, certified) = match m_f {
        MfSource::Given(v) => (v, true),
        MfSource::Sampled {
            domain,
            next_points,
            quadrature,
        } => {
            let q = Quadrature::new(quadrature)?;
            (probe::estimate_m_f(&kernel, &domain, next_points, &q)?, false)
        }
    };
    Kernel::custom(
        d,
        density,
        KernelConstants {
            m_f: value,
            m_f_certified: certified,
            ..provisional
        },
        label,
    )
}

/// Numeric probes of kernel constants. Validation only: a sampled maximum
/// cannot certify a supremum.
pub mod probe {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    /// Largest observed `|t(x|s) - t(x'|s)| / ‖x - x'‖` over random nearby
    /// pairs with `s ∈ current`, `x ∈ next`.
    pub fn lipschitz_next(kernel: &Kernel, current: &AxisBox, next: &AxisBox, samples: usize, seed: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = kernel.dim();
        let mut best = 0.0_f64;
        let sample = |rng: &mut ChaCha8Rng, b: &AxisBox| -> Vec<f64> {
            (0..d).map(|k| rng.random_range(b.lower()[k]..b.upper()[k])).collect()
        };
        let h = 1e-6 * next.diameter();
        for _ in 0..samples {
            let s = sample(&mut rng, current);
            let x = sample(&mut rng, next);
            let dir: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
            let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-300);
            let y: Vec<f64> = x.iter().zip(&dir).map(|(a, u)| a + h * u / norm).collect();
            let ratio = (kernel.eval(&x, &s) - kernel.eval(&y, &s)).abs() / h;
            best = best.max(ratio);
        }
        best
    }

    /// Largest observed `|t(x|s) - t(x|s')| / ‖s - s'‖` with `s ∈ current`.
    pub fn lipschitz_current(kernel: &Kernel, current: &AxisBox, next: &AxisBox, samples: usize, seed: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = kernel.dim();
        let mut best = 0.0_f64;
        let h = 1e-6 * current.diameter();
        for _ in 0..samples {
            let s: Vec<f64> = (0..d)
                .map(|k| rng.random_range(current.lower()[k]..current.upper()[k]))
                .collect();
            let x: Vec<f64> = (0..d)
                .map(|k| rng.random_range(next.lower()[k]..next.upper()[k]))
                .collect();
            let dir: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
            let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-300);
            let s2: Vec<f64> = s.iter().zip(&dir).map(|(a, u)| a + h * u / norm).collect();
            best = best.max((kernel.eval(&x, &s) - kernel.eval(&x, &s2)).abs() / h);
        }
        best
    }

    /// `∫_region t(s̄ | s) ds̄` for a fixed current state.
    pub fn next_mass(kernel: &Kernel, current: &[f64], region: &AxisBox, q: &Quadrature) -> Result<f64> {
        let widths = vec![kernel.resolution().1; kernel.dim()];
        Ok(
            q.integrate_resolved(|x| kernel.eval(x, current), region, q.spec().tolerance, &widths)?
                .value,
        )
    }

    /// `max_{s̄ on grid} ∫_domain t(s̄ | s) ds`, the sampled counterpart of
    /// `M_f` (restricted to `s ∈ domain`).
    pub fn estimate_m_f(kernel: &Kernel, domain: &AxisBox, next_points: usize, q: &Quadrature) -> Result<f64> {
        let d = kernel.dim();
        if domain.dim() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: domain.dim(),
            });
        }
        let n = next_points.max(2);
        let total = n.pow(d as u32);
        let widths = vec![kernel.resolution().0; d];
        let mut best = 0.0_f64;
        for flat in 0..total {
            let mut rem = flat;
            let x: Vec<f64> = (0..d)
                .map(|k| {
                    let i = rem % n;
                    rem /= n;
                    domain.lower()[k] + domain.width(k) * i as f64 / (n - 1) as f64
                })
                .collect();
            let v = q
                .integrate_resolved(|s| kernel.eval(&x, s), domain, q.spec().tolerance, &widths)?
                .value;
            best = best.max(v);
        }
        Ok(best)
    }
}
