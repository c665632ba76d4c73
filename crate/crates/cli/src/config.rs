//! Experiment configuration file.

use std::path::{Path, PathBuf};

use markabs_core::geometry::AxisBox;
use markabs_core::invariance::DEFAULT_MAX_CELLS;
use markabs_core::kernels::{linear_gaussian_1d, linear_system_kernel, KernelConstants, NoiseDensity};
use markabs_core::{BandMap, InitialDensity, InterpOrder, InterpScheme, Kernel, Partition, QuadratureSpec};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelSpec,
    pub horizon: usize,
    pub truncation: TruncationSpec,
    pub partition: PartitionSpec,
    #[serde(default = "constant_scheme")]
    pub scheme: InterpOrder,
    pub task: Task,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub quadrature: QuadratureSpec,
    #[serde(default)]
    pub seed: u64,
    /// Required by the invariance tasks.
    #[serde(default)]
    pub safe_set: Option<AxisBox>,
    /// Evaluation points of the 1D density output.
    #[serde(default = "default_grid")]
    pub grid_points: usize,
    #[serde(default = "default_max_cells")]
    pub max_cells: usize,
    /// Monte Carlo cross-check for invariance tasks on the linear Gaussian model.
    #[serde(default)]
    pub monte_carlo_trials: Option<u64>,
    /// Sample points per axis for the uncertified `M_f^h` estimate.
    #[serde(default = "default_mf_samples")]
    pub mf_samples: usize,
}

fn constant_scheme() -> InterpOrder {
    InterpOrder::Constant
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

fn default_grid() -> usize {
    10_000
}

fn default_max_cells() -> usize {
    DEFAULT_MAX_CELLS
}

fn default_mf_samples() -> usize {
    64
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    Density,
    InvarianceForward,
    InvarianceBackward,
    Compare,
    Export,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::Density => "density",
            Task::InvarianceForward => "invariance-forward",
            Task::InvarianceBackward => "invariance-backward",
            Task::Compare => "compare",
            Task::Export => "export",
        }
    }

    fn needs_safe_set(self) -> bool {
        matches!(self, Task::InvarianceForward | Task::InvarianceBackward | Task::Compare)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSpec {
    /// `s' = a s + b + σ w`, `s_0 ~ U[init]`.
    LinearGaussian {
        a: f64,
        #[serde(default)]
        b: f64,
        sigma: f64,
        init: [f64; 2],
    },
    /// `s' = A s + σ w`, `s_0` uniform on `init`.
    LinearSystem {
        matrix: Vec<Vec<f64>>,
        sigma: f64,
        init: AxisBox,
    },
    /// A built-in density with user-asserted constants.
    Custom {
        base: Box<ModelSpec>,
        constants: KernelConstants,
    },
}

impl ModelSpec {
    fn build(&self, alpha: f64) -> Result<(Kernel, InitialDensity), CliError> {
        match self {
            ModelSpec::LinearGaussian { a, b, sigma, init } => {
                Ok(linear_gaussian_1d(*a, *b, *sigma, alpha, (init[0], init[1]))?)
            }
            ModelSpec::LinearSystem { matrix, sigma, init } => {
                let noise = NoiseDensity::gaussian(matrix.len(), *sigma, alpha)?;
                let kernel = linear_system_kernel(matrix, noise)?;
                Ok((kernel, InitialDensity::uniform(init.clone())))
            }
            ModelSpec::Custom { base, constants } => {
                let (kernel, init) = base.build(alpha)?;
                let mut c = constants.clone();
                if c.band.is_none() {
                    c.band = kernel.band().cloned();
                }
                Ok((kernel.with_constants(c)?, init))
            }
        }
    }

    /// Scalar linear Gaussian parameters `(a, b, σ, β_0, γ_0)`, when the
    /// density is the built-in one.
    pub fn lin_gauss(&self) -> Option<(f64, f64, f64, f64, f64)> {
        match self {
            ModelSpec::LinearGaussian { a, b, sigma, init } => Some((*a, *b, *sigma, init[0], init[1])),
            ModelSpec::Custom { base, .. } => base.lin_gauss(),
            ModelSpec::LinearSystem { .. } => None,
        }
    }
}

/// Either the Gaussian cut-off `α` or an explicit band `Γ` with its tail
/// bound.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruncationSpec {
    #[serde(default)]
    pub alpha: Option<f64>,
    #[serde(default)]
    pub band: Option<BandMap>,
    #[serde(default)]
    pub epsilon_tail: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartitionSpec {
    #[serde(default)]
    pub delta: Option<f64>,
    #[serde(default)]
    pub counts: Option<Vec<usize>>,
    /// Domain to partition; defaults to the safe set for invariance tasks and
    /// to the truncated domain otherwise.
    #[serde(default)]
    pub domain: Option<AxisBox>,
}

/// A parsed config with its model built.
#[derive(Clone, Debug)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub sha256: String,
    pub kernel: Kernel,
    pub init: InitialDensity,
    pub scheme: InterpScheme,
    /// `α`, or NaN for an explicit band.
    pub alpha: f64,
}

impl Experiment {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let raw = std::fs::read(path).map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_bytes(&raw)
    }

    pub fn from_bytes(raw: &[u8]) -> Result<Self, CliError> {
        let config: ExperimentConfig =
            serde_json::from_slice(raw).map_err(|e| CliError::Config(format!("invalid config: {e}")))?;
        let sha256 = hex::encode(Sha256::digest(raw));
        Self::new(config, sha256)
    }

    pub fn new(config: ExperimentConfig, sha256: String) -> Result<Self, CliError> {
        let t = &config.truncation;
        let (alpha, band) = match (t.alpha, &t.band) {
            (Some(a), None) => (a, None),
            (None, Some(b)) => {
                if t.epsilon_tail.is_none() {
                    return Err(CliError::Config("an explicit band needs epsilon_tail".into()));
                }
                (f64::NAN, Some(b.clone()))
            }
            _ => return Err(CliError::Config("truncation needs exactly one of alpha or band".into())),
        };
        // the built-in models need some α to construct; an explicit band
        // replaces the resulting band and tail afterwards
        let (mut kernel, init) = config.model.build(if alpha.is_nan() { 1.0 } else { alpha })?;
        if let Some(band) = band {
            let mut c = kernel.constants().clone();
            c.band = Some(band);
            c.epsilon_tail = t.epsilon_tail.unwrap_or_default();
            kernel = kernel.with_constants(c)?;
        } else if let Some(eps) = t.epsilon_tail {
            let mut c = kernel.constants().clone();
            c.epsilon_tail = eps;
            kernel = kernel.with_constants(c)?;
        }
        let scheme = InterpScheme::new(kernel.dim(), config.scheme)?;
        if config.task.needs_safe_set() {
            let set = config
                .safe_set
                .as_ref()
                .ok_or_else(|| CliError::Config(format!("task {} needs safe_set", config.task.name())))?;
            if set.dim() != kernel.dim() {
                return Err(CliError::Config("safe_set dimension differs from the model".into()));
            }
        }
        let p = &config.partition;
        if p.delta.is_some() == p.counts.is_some() {
            return Err(CliError::Config(
                "partition needs exactly one of delta or counts".into(),
            ));
        }
        if let Some(d) = p.delta {
            if !(d > 0.0 && d.is_finite()) {
                return Err(CliError::Config("partition delta must be positive".into()));
            }
        }
        if config.grid_points < 2 {
            return Err(CliError::Config("grid_points must be at least 2".into()));
        }
        Ok(Experiment {
            config,
            sha256,
            kernel,
            init,
            scheme,
            alpha,
        })
    }

    /// Partition of `domain` according to the config.
    pub fn partition_of(&self, domain: &AxisBox) -> Result<Partition, CliError> {
        let p = &self.config.partition;
        let part = match (&p.counts, p.delta) {
            (Some(c), _) => Partition::uniform_counts(domain, c)?,
            (None, Some(d)) => Partition::uniform_delta(domain, d)?,
            _ => unreachable!("checked in Experiment::new"),
        };
        Ok(part)
    }
}
