//! Backward dynamic-emulation solvers producing fitted exercise policies.

mod fixed;
mod regression;
mod sequential;

use serde::{Deserialize, Serialize};

pub use fixed::{solve_fixed, Budget, DesignSpec, Domain, SiteSource};
pub use regression::{solve_ls, solve_piecewise_bw, solve_tvr, BwPrices};
pub use sequential::{acquisition_smcu, solve_seq, solve_seq_batch, BatchSpec, Heuristic, SeqSpec};

pub(crate) use fixed::{pre_average, SiteResolver, StepSim};

use crate::emulators::{EmulatorFit, MethodSpec};
use crate::error::{Error, Result};
use crate::model::ModelSpec;
use crate::sampling::RandomStream;

/// Per-step bookkeeping of a solver run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub step: usize,
    /// Number of unique training sites.
    pub n_unique: usize,
    /// Number of simulated trajectories.
    pub budget: usize,
    /// Wall time spent on the step; not serialized so fit files stay reproducible.
    #[serde(skip)]
    pub secs: f64,
}

/// Fitted timing-value emulators `T̂(k, ·)` for `k = 1..K-1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyFit {
    pub model: ModelSpec,
    pub solver: String,
    pub method: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lookahead: Option<usize>,
    /// Indexed by step; entry 0 is always empty.
    pub fits: Vec<Option<EmulatorFit>>,
    pub steps: Vec<StepReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub in_sample_price: Option<f64>,
    #[serde(skip)]
    pub wall_secs: f64,
}

impl PolicyFit {
    pub fn new(
        model: ModelSpec,
        solver: &str,
        method: &str,
        lookahead: Option<usize>,
        fits: Vec<Option<EmulatorFit>>,
    ) -> Self {
        PolicyFit {
            model,
            solver: solver.to_string(),
            method: method.to_string(),
            lookahead,
            fits,
            steps: Vec::new(),
            in_sample_price: None,
            wall_secs: 0.0,
        }
    }

    pub fn fit_at(&self, k: usize) -> Option<&EmulatorFit> {
        self.fits.get(k).and_then(Option::as_ref)
    }

    /// Per-step diagnostics as CSV text (step, n_unique, budget, fit_secs).
    pub fn diagnostics_csv(&self) -> String {
        let mut out = String::from("step,n_unique,budget,fit_secs\n");
        for s in &self.steps {
            out.push_str(&format!(
                "{},{},{},{:.6}\n",
                s.step, s.n_unique, s.budget, s.secs
            ));
        }
        out
    }
}

/// Solver selection and its settings, as read from the `[solver]` config section.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SolverConfig {
    Ls {
        n: usize,
        method: MethodSpec,
        #[serde(default)]
        lookahead: Option<usize>,
    },
    Tvr {
        n: usize,
        method: MethodSpec,
    },
    PiecewiseBw {
        n: usize,
        bins: usize,
    },
    Fixed {
        design: DesignSpec,
        method: MethodSpec,
        #[serde(default)]
        lookahead: Option<usize>,
    },
    Seq {
        #[serde(flatten)]
        spec: SeqSpec,
        method: MethodSpec,
    },
    SeqBatch {
        #[serde(flatten)]
        spec: BatchSpec,
        method: MethodSpec,
    },
}

impl SolverConfig {
    pub fn tag(&self) -> &'static str {
        match self {
            SolverConfig::Ls { .. } => "ls",
            SolverConfig::Tvr { .. } => "tvr",
            SolverConfig::PiecewiseBw { .. } => "piecewise_bw",
            SolverConfig::Fixed { .. } => "fixed",
            SolverConfig::Seq { .. } => "seq",
            SolverConfig::SeqBatch { .. } => "seq_batch",
        }
    }

    pub fn validate(&self, model: &ModelSpec) -> Result<()> {
        let check_w = |w: &Option<usize>| match w {
            Some(0) => Err(Error::config("solver.lookahead", "must be at least 1")),
            _ => Ok(()),
        };
        match self {
            SolverConfig::Ls {
                n,
                method,
                lookahead,
            } => {
                check_w(lookahead)?;
                method.validate(model)?;
                if *n == 0 {
                    return Err(Error::config("solver.n", "must be positive"));
                }
            }
            SolverConfig::Tvr { n, method } => {
                method.validate(model)?;
                if *n == 0 {
                    return Err(Error::config("solver.n", "must be positive"));
                }
            }
            SolverConfig::PiecewiseBw { n, bins } => {
                if *bins == 0 {
                    return Err(Error::config("solver.bins", "must be positive"));
                }
                if *n == 0 {
                    return Err(Error::config("solver.n", "must be positive"));
                }
            }
            SolverConfig::Fixed {
                design,
                method,
                lookahead,
            } => {
                check_w(lookahead)?;
                method.validate(model)?;
                design.validate(model)?;
            }
            SolverConfig::Seq { spec, method } => {
                if !method.is_gp() {
                    return Err(Error::config(
                        "solver.method",
                        "sequential designs require a GP method",
                    ));
                }
                method.validate(model)?;
                spec.validate(model)?;
            }
            SolverConfig::SeqBatch { spec, method } => {
                if !method.is_gp() {
                    return Err(Error::config(
                        "solver.method",
                        "adaptive batching requires a GP method",
                    ));
                }
                method.validate(model)?;
                spec.validate(model)?;
            }
        }
        Ok(())
    }
}

/// Run the configured solver.
pub fn solve(model: &ModelSpec, cfg: &SolverConfig, stream: &RandomStream) -> Result<PolicyFit> {
    model.validate()?;
    cfg.validate(model)?;
    match cfg {
        SolverConfig::Ls {
            n,
            method,
            lookahead,
        } => solve_ls(model, *n, method, *lookahead, stream),
        SolverConfig::Tvr { n, method } => solve_tvr(model, *n, method, stream),
        SolverConfig::PiecewiseBw { n, bins } => {
            solve_piecewise_bw(model, *n, *bins, None, stream).map(|(fit, _)| fit)
        }
        SolverConfig::Fixed {
            design,
            method,
            lookahead,
        } => solve_fixed(model, design, method, *lookahead, stream),
        SolverConfig::Seq { spec, method } => solve_seq(model, spec, method, stream),
        SolverConfig::SeqBatch { spec, method } => solve_seq_batch(model, spec, method, stream),
    }
}

/// Apply the time-zero rule to a mean continuation value from `x0`.
pub(crate) fn time_zero(model: &ModelSpec, continuation: f64) -> f64 {
    let h0 = model.reward_row(0, &model.x0());
    if h0 > 0.0 && h0 >= continuation {
        h0
    } else {
        continuation
    }
}
