use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dynamics::{Formulation, InitKind};
use crate::mean_field::PartnerRule;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExperimentKind {
    Contraction,
    Corollary,
    Equivalence,
    #[serde(rename = "meanfield")]
    MeanField,
    Equilibrium,
    Eigenfunction,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 6] = [
        ExperimentKind::Contraction,
        ExperimentKind::Corollary,
        ExperimentKind::Equivalence,
        ExperimentKind::MeanField,
        ExperimentKind::Equilibrium,
        ExperimentKind::Eigenfunction,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Contraction => "contraction",
            ExperimentKind::Corollary => "corollary",
            ExperimentKind::Equivalence => "equivalence",
            ExperimentKind::MeanField => "meanfield",
            ExperimentKind::Equilibrium => "equilibrium",
            ExperimentKind::Eigenfunction => "eigenfunction",
        }
    }

    /// The defaults table applied to fields left unset.
    pub fn defaults(self) -> ExperimentConfig {
        let base = ExperimentConfig {
            experiment: self,
            n_particles: 10,
            ensemble_size: 1000,
            horizon: 4.0,
            grid_points: 21,
            replicas: 10_000,
            seed: 1,
            init_v: InitKind::DEFAULT_TWO_LEVEL,
            init_w: InitKind::AxisPoint,
            formulation: Formulation::RadialB,
            partner: PartnerRule::Quantile,
            significance: 1e-3,
            output_dir: PathBuf::from("runs"),
            threads: None,
        };
        match self {
            ExperimentKind::Contraction | ExperimentKind::Corollary => base,
            ExperimentKind::Equivalence => ExperimentConfig {
                horizon: 1.0,
                grid_points: 3,
                init_v: InitKind::AxisPoint,
                ..base
            },
            ExperimentKind::MeanField => ExperimentConfig {
                replicas: 100,
                init_w: InitKind::UniformSphere,
                ..base
            },
            ExperimentKind::Equilibrium => ExperimentConfig {
                horizon: 30.0,
                grid_points: 7,
                init_v: InitKind::AxisPoint,
                ..base
            },
            ExperimentKind::Eigenfunction => ExperimentConfig {
                replicas: 20_000,
                init_v: InitKind::AxisPoint,
                ..base
            },
        }
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ExperimentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ExperimentKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown experiment `{s}`")))
    }
}

/// A fully resolved experiment configuration. Echoed verbatim into reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub n_particles: usize,
    pub ensemble_size: usize,
    pub horizon: f64,
    pub grid_points: usize,
    pub replicas: u64,
    pub seed: u64,
    pub init_v: InitKind,
    pub init_w: InitKind,
    pub formulation: Formulation,
    pub partner: PartnerRule,
    /// Significance level of two-sample tests.
    pub significance: f64,
    pub output_dir: PathBuf,
    /// Worker threads; `None` uses every available core.
    pub threads: Option<usize>,
}

fn invalid(field: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidConfig {
        field: field.to_string(),
        reason: reason.into(),
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_particles < 2 {
            return Err(invalid("n_particles", format!("{} < 2", self.n_particles)));
        }
        if self.ensemble_size < 1 {
            return Err(invalid("ensemble_size", "must be at least 1"));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(invalid("horizon", format!("{} is not a positive finite time", self.horizon)));
        }
        if self.grid_points < 3 {
            return Err(invalid("grid_points", format!("{} < 3", self.grid_points)));
        }
        if self.replicas < 2 {
            return Err(invalid("replicas", format!("{} < 2", self.replicas)));
        }
        if !(self.significance > 0.0 && self.significance < 1.0) {
            return Err(invalid("significance", format!("{} outside (0, 1)", self.significance)));
        }
        if self.threads == Some(0) {
            return Err(invalid("threads", "must be at least 1"));
        }
        let uses_formulation = matches!(
            self.experiment,
            ExperimentKind::Equivalence | ExperimentKind::Equilibrium | ExperimentKind::Eigenfunction
        );
        if uses_formulation && self.formulation == Formulation::EnergyE {
            return Err(invalid("formulation", "the energy form carries no velocity signs; use rotation or radial"));
        }
        Ok(())
    }
}

/// Configuration with every field optional, as read from a JSON file or
/// from command-line flags.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartialConfig {
    pub experiment: Option<ExperimentKind>,
    pub n_particles: Option<usize>,
    pub ensemble_size: Option<usize>,
    pub horizon: Option<f64>,
    pub grid_points: Option<usize>,
    pub replicas: Option<u64>,
    pub seed: Option<u64>,
    pub init_v: Option<InitKind>,
    pub init_w: Option<InitKind>,
    pub formulation: Option<Formulation>,
    pub partner: Option<PartnerRule>,
    pub significance: Option<f64>,
    pub output_dir: Option<PathBuf>,
    pub threads: Option<usize>,
}

impl PartialConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        if text.trim().is_empty() {
            return Ok(Self::default());
        }
        serde_json::from_str(text).map_err(|e| Error::ConfigParse(e.to_string()))
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    /// Fields set in `over` win.
    pub fn overlay(self, over: PartialConfig) -> PartialConfig {
        PartialConfig {
            experiment: over.experiment.or(self.experiment),
            n_particles: over.n_particles.or(self.n_particles),
            ensemble_size: over.ensemble_size.or(self.ensemble_size),
            horizon: over.horizon.or(self.horizon),
            grid_points: over.grid_points.or(self.grid_points),
            replicas: over.replicas.or(self.replicas),
            seed: over.seed.or(self.seed),
            init_v: over.init_v.or(self.init_v),
            init_w: over.init_w.or(self.init_w),
            formulation: over.formulation.or(self.formulation),
            partner: over.partner.or(self.partner),
            significance: over.significance.or(self.significance),
            output_dir: over.output_dir.or(self.output_dir),
            threads: over.threads.or(self.threads),
        }
    }

    pub fn resolve(self, kind: ExperimentKind) -> Result<ExperimentConfig> {
        if let Some(named) = self.experiment {
            if named != kind {
                return Err(invalid("experiment", format!("config names `{named}` but `{kind}` was requested")));
            }
        }
        let d = kind.defaults();
        let config = ExperimentConfig {
            experiment: kind,
            n_particles: self.n_particles.unwrap_or(d.n_particles),
            ensemble_size: self.ensemble_size.unwrap_or(d.ensemble_size),
            horizon: self.horizon.unwrap_or(d.horizon),
            grid_points: self.grid_points.unwrap_or(d.grid_points),
            replicas: self.replicas.unwrap_or(d.replicas),
            seed: self.seed.unwrap_or(d.seed),
            init_v: self.init_v.unwrap_or(d.init_v),
            init_w: self.init_w.unwrap_or(d.init_w),
            formulation: self.formulation.unwrap_or(d.formulation),
            partner: self.partner.unwrap_or(d.partner),
            significance: self.significance.unwrap_or(d.significance),
            output_dir: self.output_dir.unwrap_or(d.output_dir),
            threads: self.threads.or(d.threads),
        };
        config.validate()?;
        Ok(config)
    }
}

/// Reads the optional config file, applies `overrides` on top, fills in the
/// defaults for `kind` and validates.
pub fn parse_config(kind: ExperimentKind, file: Option<&Path>, overrides: PartialConfig) -> Result<ExperimentConfig> {
    let base = match file {
        Some(path) => PartialConfig::from_file(path)?,
        None => PartialConfig::default(),
    };
    base.overlay(overrides).resolve(kind)
}
