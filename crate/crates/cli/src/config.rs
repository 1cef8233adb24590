use std::fmt;
use std::path::{Path, PathBuf};

use clap::ValueEnum;
use heis_lsde::field::{
    degenerate, holder_shear, linear, projection, shear, shear_weighted, FieldModel, GradientMode,
    Mat2,
};
use heis_lsde::hgroup::{HPoint, MetricConfig};
use heis_lsde::lsde::SolverConfig;
use heis_lsde::measure::{CoareaOptions, Cuboid};
use serde::{Deserialize, Serialize};

/// Bad configuration or input file; maps to exit status 3.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "invalid configuration: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

pub fn invalid(msg: impl Into<String>) -> anyhow::Error {
    ConfigError(msg.into()).into()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    Trace,
    Verify,
    Area,
    Coarea,
    Beta,
    Blowup,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Self::Trace => "trace",
            Self::Verify => "verify",
            Self::Area => "area",
            Self::Coarea => "coarea",
            Self::Beta => "beta",
            Self::Blowup => "blowup",
        }
    }
}

/// Field selector; `name` picks the catalog entry. Parameterless entries are
/// empty struct variants so that unknown keys are still rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum FieldSpec {
    Projection {},
    Shear {},
    /// `(x¹, x² + c x³)`.
    ShearWeighted {
        c: f64,
    },
    HolderShear {
        alpha: f64,
        amplitude: f64,
    },
    /// `M x^h`, rows of `M`.
    Linear {
        matrix: [[f64; 2]; 2],
    },
    Degenerate {},
}

impl FieldSpec {
    pub fn build(&self, gradient: Option<GradientMode>) -> anyhow::Result<FieldModel> {
        let f = match self {
            Self::Projection {} => projection(),
            Self::Shear {} => shear(),
            Self::ShearWeighted { c } => shear_weighted(*c),
            Self::HolderShear { alpha, amplitude } => {
                holder_shear(*alpha, *amplitude).map_err(|e| invalid(e.to_string()))?
            }
            Self::Linear { matrix } => linear(Mat2(*matrix)),
            Self::Degenerate {} => degenerate(),
        };
        match gradient {
            Some(mode) => f.with_mode(mode).map_err(|e| invalid(e.to_string())),
            None => Ok(f),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifySection {
    /// CSV trace to check; solved from `p`, `q` when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trace: Option<PathBuf>,
    pub drift_tol: f64,
    pub surjectivity_samples: usize,
    pub level_tol: f64,
    /// Grid levels of the coarse solve compared against the trace.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub coarse_levels: Option<u32>,
    pub constant_samples: usize,
}

impl Default for VerifySection {
    fn default() -> Self {
        Self {
            trace: None,
            drift_tol: 1e-8,
            surjectivity_samples: 200,
            level_tol: 1e-10,
            coarse_levels: None,
            constant_samples: 20_000,
        }
    }
}

fn default_radii() -> Vec<f64> {
    vec![0.04, 0.02, 0.01]
}

fn default_center_samples() -> usize {
    200
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AreaSection {
    #[serde(rename = "box")]
    pub cuboid: Cuboid,
    #[serde(default = "default_radii")]
    pub radii: Vec<f64>,
    #[serde(default = "default_center_samples")]
    pub center_samples: usize,
    /// Point of the curve for the density; the trace start by default.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub point: Option<[f64; 3]>,
    /// Arc length of the covering estimate; eight grid steps by default.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mesh: Option<f64>,
}

fn default_tolerance() -> f64 {
    0.03
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoareaSection {
    #[serde(rename = "box")]
    pub cuboid: Cuboid,
    /// Largest accepted relative gap.
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    /// The run seed replaces `options.seed`.
    #[serde(default)]
    pub options: CoareaOptions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BetaSection {
    pub resolution: usize,
    pub samples: usize,
}

impl Default for BetaSection {
    fn default() -> Self {
        Self {
            resolution: 256,
            samples: 100_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BlowupSection {
    pub radii: Vec<f64>,
    pub samples: usize,
}

impl Default for BlowupSection {
    fn default() -> Self {
        Self {
            radii: vec![1.0, 0.5, 0.25, 0.125],
            samples: 2000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub metric: MetricConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub field: Option<FieldSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gradient: Option<GradientMode>,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub experiment: Option<Experiment>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub seed: u64,
    /// Base point of the LSDE (also the blow-up center).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<[f64; 3]>,
    /// Start point `γ₀`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q: Option<[f64; 3]>,
    #[serde(default)]
    pub verify: VerifySection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub area: Option<AreaSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coarea: Option<CoareaSection>,
    #[serde(default)]
    pub beta: BetaSection,
    #[serde(default)]
    pub blowup: BlowupSection,
}

pub fn point(c: [f64; 3]) -> HPoint {
    HPoint::new(c[0], c[1], c[2])
}

impl RunConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| invalid(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| invalid(format!("{}: {e}", path.display())))
    }

    /// Checks everything the experiment needs before any computation.
    pub fn validate(&self, exp: Experiment) -> anyhow::Result<()> {
        if let Some(e) = self.experiment {
            if e != exp {
                return Err(invalid(format!(
                    "config is for experiment {:?} but {:?} was requested",
                    e.name(),
                    exp.name()
                )));
            }
        }
        self.metric.validate().map_err(|e| invalid(e.to_string()))?;
        self.solver.validate().map_err(|e| invalid(e.to_string()))?;
        let need = |ok: bool, key: &str| {
            if ok {
                Ok(())
            } else {
                Err(invalid(format!(
                    "experiment {:?} requires key {key:?}",
                    exp.name()
                )))
            }
        };
        for c in [self.p, self.q].into_iter().flatten() {
            if !c.iter().all(|v| v.is_finite()) {
                return Err(invalid("p and q must be finite"));
            }
        }
        if exp != Experiment::Beta {
            need(self.field.is_some(), "field.name")?;
            self.field()?;
        }
        match exp {
            Experiment::Trace => {
                need(self.p.is_some(), "p")?;
                need(self.q.is_some(), "q")?;
            }
            Experiment::Verify => {
                need(self.p.is_some(), "p")?;
                need(self.q.is_some() || self.verify.trace.is_some(), "q")?;
            }
            Experiment::Area => {
                need(self.p.is_some(), "p")?;
                need(self.q.is_some(), "q")?;
                need(self.area.is_some(), "area.box")?;
                let a = self.area.as_ref().expect("checked");
                a.cuboid.validate().map_err(|e| invalid(e.to_string()))?;
                if a.radii.is_empty() || a.radii.iter().any(|r| r.is_nan() || *r <= 0.0) {
                    return Err(invalid("area.radii must be positive and non-empty"));
                }
            }
            Experiment::Coarea => {
                need(self.coarea.is_some(), "coarea.box")?;
                let c = self.coarea.as_ref().expect("checked");
                c.cuboid.validate().map_err(|e| invalid(e.to_string()))?;
                c.options
                    .solver
                    .validate()
                    .map_err(|e| invalid(e.to_string()))?;
            }
            Experiment::Beta => {
                if self.beta.resolution == 0 || self.beta.samples == 0 {
                    return Err(invalid("beta.resolution and beta.samples must be positive"));
                }
            }
            Experiment::Blowup => {
                if self.blowup.radii.is_empty()
                    || self.blowup.radii.iter().any(|r| r.is_nan() || *r <= 0.0)
                {
                    return Err(invalid("blowup.radii must be positive and non-empty"));
                }
            }
        }
        Ok(())
    }

    pub fn field(&self) -> anyhow::Result<FieldModel> {
        self.field
            .as_ref()
            .ok_or_else(|| invalid("missing key \"field.name\""))?
            .build(self.gradient)
    }

    pub fn base_point(&self) -> HPoint {
        self.p.map(point).unwrap_or(HPoint::ORIGIN)
    }
}
