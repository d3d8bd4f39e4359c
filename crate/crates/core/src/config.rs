//! Run configuration read from a TOML document.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Result, RsssError};
use crate::estimate::RpropConfig;
use crate::evaluate::DEFAULT_CUTOFF;
use crate::model::{Layout, ModelSpec, ParameterSet, ParameterValues};
use crate::presets;
use crate::simulate::InitialState;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    pub model: ModelSection,
    /// Generating parameters for `simulate`; defaults to the preset truth.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth: Option<ParameterValues>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<DataSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulation: Option<SimulationSection>,
    #[serde(default)]
    pub optimizer: RpropConfig,
    #[serde(default)]
    pub estimation: EstimationSection,
    #[serde(default)]
    pub evaluation: EvaluationSection,
    #[serde(default)]
    pub output: OutputSection,
}

/// Either a named preset or a full `ModelSpec`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<Preset>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spec: Option<ModelSpec>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    /// Two within factors, one between factor.
    Simulation,
    /// Seven within factors, one between factor.
    Empirical,
}

/// Input files. Either a simulation manifest or a single `y1`/`y2` pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manifest: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y1: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y2: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub regime_events: Option<PathBuf>,
    /// Ground-truth sidecar for `evaluate` on a single panel.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSection {
    pub n_individuals: usize,
    pub n_occasions: usize,
    #[serde(default = "one")]
    pub replications: usize,
    #[serde(default)]
    pub initial_state: InitialState,
}

fn one() -> usize {
    1
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SeChoice {
    None,
    Opg,
    Hessian,
    #[default]
    Both,
}

#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EstimationSection {
    pub standard_errors: SeChoice,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ForecastMode {
    /// Filter through every occasion with frozen parameters.
    #[default]
    OneStep,
    /// No updates after the training window.
    Extrapolate,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluationSection {
    pub cutoff: f64,
    /// Last observed occasion; defaults to the training window.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub split: Option<usize>,
    pub mode: ForecastMode,
}

impl Default for EvaluationSection {
    fn default() -> Self {
        Self {
            cutoff: DEFAULT_CUTOFF,
            split: None,
            mode: ForecastMode::OneStep,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub directory: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            directory: PathBuf::from("out"),
        }
    }
}

impl RunConfig {
    /// Parses a TOML document; errors carry line/column information.
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| RsssError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| RsssError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        if let Some(base) = path.parent() {
            cfg.resolve_paths(base);
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| RsssError::Config(e.to_string()))
    }

    /// Makes relative data paths relative to the config file location.
    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut Option<PathBuf>| {
            if let Some(path) = p {
                if path.is_relative() {
                    *path = base.join(&*path);
                }
            }
        };
        if let Some(d) = &mut self.data {
            fix(&mut d.manifest);
            fix(&mut d.y1);
            fix(&mut d.y2);
            fix(&mut d.regime_events);
            fix(&mut d.truth);
        }
        if self.output.directory.is_relative() {
            self.output.directory = base.join(&self.output.directory);
        }
    }

    pub fn validate(&self) -> Result<()> {
        match (&self.model.preset, &self.model.spec) {
            (Some(_), Some(_)) => {
                return Err(RsssError::Config("[model] takes either `preset` or `spec`, not both".into()))
            }
            (None, None) => return Err(RsssError::Config("[model] needs `preset` or `spec`".into())),
            _ => {}
        }
        self.spec()?;
        self.optimizer.validate()?;
        if !(self.evaluation.cutoff > 0.0 && self.evaluation.cutoff < 1.0) {
            return Err(RsssError::Config("evaluation.cutoff must lie in (0, 1)".into()));
        }
        if self.data.is_some() && self.simulation.is_some() {
            return Err(RsssError::Config("give either [data] or [simulation], not both".into()));
        }
        if let Some(d) = &self.data {
            let pair = d.y1.is_some() || d.y2.is_some();
            if d.manifest.is_some() == pair {
                return Err(RsssError::Config("[data] takes either `manifest` or both `y1` and `y2`".into()));
            }
            if pair && (d.y1.is_none() || d.y2.is_none()) {
                return Err(RsssError::Config("[data] needs both `y1` and `y2`".into()));
            }
        }
        if let Some(s) = &self.simulation {
            if s.n_individuals == 0 || s.n_occasions < 2 || s.replications == 0 {
                return Err(RsssError::Config(
                    "simulation needs n_individuals >= 1, n_occasions >= 2, replications >= 1".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn spec(&self) -> Result<ModelSpec> {
        let spec = match (&self.model.preset, &self.model.spec) {
            (Some(Preset::Simulation), _) => presets::simulation_spec(),
            (Some(Preset::Empirical), _) => presets::empirical_spec(),
            (None, Some(spec)) => spec.clone(),
            (None, None) => return Err(RsssError::Config("[model] needs `preset` or `spec`".into())),
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Generating parameters: `[truth]` if given, else the preset values.
    pub fn truth_parameters(&self) -> Result<ParameterSet> {
        let spec = self.spec()?;
        let params = match (&self.truth, self.model.preset) {
            (Some(values), _) => values.to_parameter_set()?,
            (None, Some(Preset::Simulation)) => presets::simulation_truth(),
            (None, Some(Preset::Empirical)) => presets::empirical_truth(),
            (None, None) => return Err(RsssError::Config("a custom model spec needs a [truth] section".into())),
        };
        params.check_shapes(&spec)?;
        Layout::new(&spec)?;
        Ok(params)
    }
}
