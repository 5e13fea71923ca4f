//! The TOML run configuration shared by every command.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bench::{instance, preset, BenchInstance, Preset, INSTANCE_IDS};
use crate::error::{Error, Result};
use crate::model::ModelSpec;
use crate::solvers::SolverConfig;
use crate::swing::SwingSpec;

/// A model given inline or by benchmark id (`instance = "M3"`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ModelSection {
    Instance(InstanceRef),
    Inline(ModelSpec),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceRef {
    pub instance: String,
}

impl ModelSection {
    pub fn resolve(&self) -> Result<ModelSpec> {
        match self {
            ModelSection::Instance(r) => Ok(instance(&r.instance)?.model),
            ModelSection::Inline(m) => {
                m.validate()?;
                Ok(m.clone())
            }
        }
    }
}

/// Multiple-exercise settings; the design and emulator come from `[solver]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SwingSection {
    pub n_swing: usize,
    pub refract: f64,
}

/// Price against budget for one (instance, preset) cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub instance: String,
    pub preset: String,
    pub budgets: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchSection {
    #[serde(default)]
    pub instances: Option<Vec<String>>,
    #[serde(default)]
    pub presets: Option<Vec<String>>,
    #[serde(default = "one")]
    pub macro_reps: usize,
    #[serde(default)]
    pub test_paths: Option<usize>,
    #[serde(default)]
    pub sweep: Vec<SweepSection>,
}

fn one() -> usize {
    1
}

impl BenchSection {
    pub fn instances(&self) -> Result<Vec<BenchInstance>> {
        match &self.instances {
            Some(ids) => ids.iter().map(|id| instance(id)).collect(),
            None => INSTANCE_IDS.iter().map(|id| instance(id)).collect(),
        }
    }

    pub fn presets(&self) -> Result<Vec<Preset>> {
        match &self.presets {
            Some(names) => names.iter().map(|n| preset(n)).collect(),
            None => Ok(crate::bench::presets()),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub model: Option<ModelSection>,
    #[serde(default)]
    pub solver: Option<SolverConfig>,
    #[serde(default)]
    pub swing: Option<SwingSection>,
    #[serde(default)]
    pub bench: Option<BenchSection>,
}

impl Config {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Config = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        let model = self.model.as_ref().map(ModelSection::resolve).transpose()?;
        if let (Some(m), Some(s)) = (&model, &self.solver) {
            s.validate(m)?;
        }
        if let Some(sw) = &self.swing {
            match &self.solver {
                Some(SolverConfig::Fixed {
                    lookahead: None, ..
                }) => {}
                _ => {
                    return Err(Error::config(
                        "solver.kind",
                        "swing valuation needs a `fixed` solver with the full lookahead",
                    ))
                }
            }
            if let Some(m) = &model {
                self.swing_spec_with(m, sw).validate()?;
            }
        }
        if let Some(b) = &self.bench {
            b.instances()?;
            b.presets()?;
            if b.macro_reps == 0 {
                return Err(Error::config("bench.macro_reps", "must be positive"));
            }
        }
        Ok(())
    }

    /// The resolved model; required for solve commands.
    pub fn model(&self) -> Result<ModelSpec> {
        self.model
            .as_ref()
            .ok_or_else(|| Error::config("model", "section missing"))?
            .resolve()
    }

    pub fn solver(&self) -> Result<&SolverConfig> {
        self.solver
            .as_ref()
            .ok_or_else(|| Error::config("solver", "section missing"))
    }

    pub fn swing_spec(&self) -> Result<Option<SwingSpec>> {
        match &self.swing {
            Some(sw) => Ok(Some(self.swing_spec_with(&self.model()?, sw))),
            None => Ok(None),
        }
    }

    fn swing_spec_with(&self, model: &ModelSpec, sw: &SwingSection) -> SwingSpec {
        SwingSpec {
            model: model.clone(),
            n_swing: sw.n_swing,
            refract: sw.refract,
        }
    }
}
