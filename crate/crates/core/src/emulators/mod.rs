//! Regression emulators for the timing value `T(k, x)`.
//!
//! Every emulator follows the same contract: fit on `(sites, responses)`, then
//! predict at new states. Fits are immutable and safe to share across threads.

mod gp;
mod kernel;
mod linear;
mod optim;
mod piecewise;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use gp::{CovKernel, GpFit, GpHyper, MleOptions, MleTrace, GP_SITE_CAP};
pub use kernel::{
    cv_factors, fit_kernel, loo_mse, silverman, Bandwidth, KernelFit, KernelKind, CV_GRID,
};
pub use linear::{fit_lm, polynomial_bases, BasisSet, LinearFit, PayoffFeature};
pub use optim::{nelder_mead, Minimum};
pub use piecewise::{fit_piecewise, Node, PiecewiseFit};

use crate::error::{Error, Result};
use crate::model::{ModelSpec, Param, StateMatrix};
use crate::sampling::RandomStream;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EmulatorFit {
    Constant { value: f64 },
    Linear(LinearFit),
    Piecewise(PiecewiseFit),
    Kernel(KernelFit),
    Gp(GpFit),
}

/// Rows per parallel prediction block.
const PREDICT_BLOCK: usize = 512;

impl EmulatorFit {
    pub fn predict_row(&self, x: &[f64]) -> f64 {
        match self {
            EmulatorFit::Constant { value } => *value,
            EmulatorFit::Linear(f) => f.predict_row(x, &mut Vec::new()),
            EmulatorFit::Piecewise(f) => f.predict_row(x),
            EmulatorFit::Kernel(f) => f.predict_row(x),
            EmulatorFit::Gp(f) => f.predict_mean_row(x),
        }
    }

    /// Point predictions for every row.
    pub fn predict(&self, x: &StateMatrix) -> Vec<f64> {
        if let EmulatorFit::Constant { value } = self {
            return vec![*value; x.rows()];
        }
        let d = x.cols().max(1);
        x.as_slice()
            .par_chunks(PREDICT_BLOCK * d)
            .flat_map_iter(|block| {
                let mut buf = Vec::new();
                block
                    .chunks_exact(d)
                    .map(|r| match self {
                        EmulatorFit::Linear(f) => f.predict_row(r, &mut buf),
                        other => other.predict_row(r),
                    })
                    .collect::<Vec<_>>()
            })
            .collect()
    }

    /// Predictions with posterior standard deviations (GP only; zero elsewhere).
    pub fn predict_with_sd(&self, x: &StateMatrix) -> (Vec<f64>, Vec<f64>) {
        match self {
            EmulatorFit::Gp(f) => {
                let d = x.cols().max(1);
                x.as_slice()
                    .par_chunks(PREDICT_BLOCK * d)
                    .flat_map_iter(|b| {
                        b.chunks_exact(d)
                            .map(|r| f.predict_row(r))
                            .collect::<Vec<_>>()
                    })
                    .unzip()
            }
            other => (other.predict(x), vec![0.0; x.rows()]),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            EmulatorFit::Constant { .. } => "constant",
            EmulatorFit::Linear(_) => "lm",
            EmulatorFit::Piecewise(_) => "piecewise_bw",
            EmulatorFit::Kernel(_) => "kernel",
            EmulatorFit::Gp(_) => "gp",
        }
    }
}

/// Regressors for a linear model, resolved against the model at fit time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum BasisSpec {
    /// All monomials up to `degree`.
    Poly {
        degree: u32,
        #[serde(default)]
        include_payoff: bool,
        #[serde(default)]
        sorted: bool,
    },
    /// Explicit exponent vectors.
    Monomials {
        terms: Vec<Vec<u32>>,
        #[serde(default)]
        include_payoff: bool,
        #[serde(default)]
        sorted: bool,
    },
}

impl BasisSpec {
    pub fn resolve(&self, model: &ModelSpec) -> Result<BasisSet> {
        let feature = |on: bool| {
            on.then_some(PayoffFeature {
                kind: model.payoff,
                strike: model.strike,
            })
        };
        match self {
            BasisSpec::Poly {
                degree,
                include_payoff,
                sorted,
            } => polynomial_bases(*degree, model.dim, feature(*include_payoff), *sorted),
            BasisSpec::Monomials {
                terms,
                include_payoff,
                sorted,
            } => BasisSet::new(model.dim, terms.clone(), *sorted, feature(*include_payoff)),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum GpHyperSpec {
    /// Known hyperparameters; a scalar lengthscale is shared by every coordinate.
    Fixed {
        lengthscale: Param,
        variance: f64,
        #[serde(default)]
        nugget: f64,
    },
    /// Maximum likelihood with simplex restarts.
    Mle {
        #[serde(default = "default_restarts")]
        restarts: usize,
        #[serde(default = "default_evals")]
        max_evals: usize,
    },
}

fn default_restarts() -> usize {
    5
}
fn default_evals() -> usize {
    200
}
fn default_cap() -> usize {
    GP_SITE_CAP
}

impl Default for GpHyperSpec {
    fn default() -> Self {
        GpHyperSpec::Mle {
            restarts: default_restarts(),
            max_evals: default_evals(),
        }
    }
}

/// Emulator choice and settings, as written in a solver configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MethodSpec {
    Lm {
        basis: BasisSpec,
    },
    Piecewise {
        bins: usize,
    },
    Kernel {
        #[serde(default = "default_kernel")]
        kernel: KernelKind,
        #[serde(default = "default_bandwidth")]
        bandwidth: Bandwidth,
    },
    Gp {
        #[serde(default = "default_cov")]
        kernel: CovKernel,
        #[serde(default)]
        hyper: GpHyperSpec,
        #[serde(default = "default_cap")]
        cap: usize,
    },
}

fn default_kernel() -> KernelKind {
    KernelKind::Gaussian
}
fn default_bandwidth() -> Bandwidth {
    Bandwidth::Cv
}
fn default_cov() -> CovKernel {
    CovKernel::Matern52
}

impl MethodSpec {
    pub fn is_gp(&self) -> bool {
        matches!(self, MethodSpec::Gp { .. })
    }

    pub fn label(&self) -> &'static str {
        match self {
            MethodSpec::Lm { .. } => "lm",
            MethodSpec::Piecewise { .. } => "piecewise_bw",
            MethodSpec::Kernel { .. } => "kernel",
            MethodSpec::Gp {
                hyper: GpHyperSpec::Fixed { .. },
                ..
            } => "km",
            MethodSpec::Gp { .. } => "trainkm",
        }
    }

    /// Smallest number of training rows the method can fit at all.
    pub fn min_rows(&self, model: &ModelSpec) -> Result<usize> {
        Ok(match self {
            MethodSpec::Lm { basis } => basis.resolve(model)?.n_coefficients(),
            MethodSpec::Piecewise { bins } => bins
                .checked_pow(model.dim as u32)
                .unwrap_or(usize::MAX)
                .saturating_mul(model.dim + 2),
            MethodSpec::Kernel { .. } | MethodSpec::Gp { .. } => 1,
        })
    }

    pub fn validate(&self, model: &ModelSpec) -> Result<()> {
        match self {
            MethodSpec::Lm { basis } => basis.resolve(model).map(|_| ()),
            MethodSpec::Piecewise { bins } if *bins == 0 => {
                Err(Error::config("method.bins", "must be positive"))
            }
            MethodSpec::Gp {
                hyper:
                    GpHyperSpec::Fixed {
                        lengthscale,
                        variance,
                        nugget,
                    },
                ..
            } => {
                let l = lengthscale.expand(model.dim, "method.hyper.lengthscale")?;
                if l.iter().any(|v| v.is_nan() || *v <= 0.0)
                    || variance.is_nan()
                    || *variance <= 0.0
                    || nugget.is_nan()
                    || *nugget < 0.0
                {
                    return Err(Error::config(
                        "method.hyper",
                        "lengthscale and variance must be positive",
                    ));
                }
                Ok(())
            }
            MethodSpec::Kernel {
                bandwidth: Bandwidth::Fixed(h),
                ..
            } if h.len() != model.dim => Err(Error::config(
                "method.bandwidth",
                format!("expected {} entries", model.dim),
            )),
            _ => Ok(()),
        }
    }
}

/// Fit the configured emulator to `(x, y)`.
///
/// `noise` carries per-site variances of replicate-averaged responses and is
/// used by GP methods only. Empty data fits the constant 0; identical responses
/// fit that constant.
pub fn fit_emulator(
    method: &MethodSpec,
    model: &ModelSpec,
    step: usize,
    x: &StateMatrix,
    y: &[f64],
    noise: Option<&[f64]>,
    stream: &RandomStream,
) -> Result<EmulatorFit> {
    if x.rows() != y.len() {
        return Err(Error::dims("training responses", x.rows(), y.len()));
    }
    if x.cols() != model.dim {
        return Err(Error::dims("training sites", model.dim, x.cols()));
    }
    if y.is_empty() {
        return Ok(EmulatorFit::Constant { value: 0.0 });
    }
    let (lo, hi) = y
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| {
            (a.min(v), b.max(v))
        });
    if hi - lo <= 1e-14 * (1.0 + lo.abs().max(hi.abs())) {
        return Ok(EmulatorFit::Constant { value: lo });
    }
    let with_step = |e: Error| match e {
        Error::InsufficientData {
            step: None,
            needed,
            got,
        } => Error::InsufficientData {
            step: Some(step),
            needed,
            got,
        },
        other => other,
    };
    match method {
        MethodSpec::Lm { basis } => {
            let basis = basis.resolve(model)?;
            if y.len() < basis.n_coefficients() {
                return Err(Error::InsufficientData {
                    step: Some(step),
                    needed: basis.n_coefficients(),
                    got: y.len(),
                });
            }
            Ok(EmulatorFit::Linear(
                fit_lm(x, y, &basis).map_err(with_step)?,
            ))
        }
        MethodSpec::Piecewise { bins } => Ok(EmulatorFit::Piecewise(
            fit_piecewise(x, y, *bins).map_err(with_step)?,
        )),
        MethodSpec::Kernel { kernel, bandwidth } => {
            if y.len() < 2 {
                return Ok(EmulatorFit::Constant { value: y[0] });
            }
            Ok(EmulatorFit::Kernel(fit_kernel(x, y, *kernel, bandwidth)?))
        }
        MethodSpec::Gp { kernel, hyper, cap } => {
            if y.len() == 1 {
                return Ok(EmulatorFit::Constant { value: y[0] });
            }
            let fit = match hyper {
                GpHyperSpec::Fixed {
                    lengthscale,
                    variance,
                    nugget,
                } => {
                    let h = GpHyper {
                        kernel: *kernel,
                        lengthscales: lengthscale.expand(model.dim, "method.hyper.lengthscale")?,
                        variance: *variance,
                        nugget: *nugget,
                    };
                    let noise = noise.map_or_else(|| vec![0.0; y.len()], <[f64]>::to_vec);
                    GpFit::new_capped(x.clone(), y.to_vec(), noise, h, *cap)?
                }
                GpHyperSpec::Mle {
                    restarts,
                    max_evals,
                } => GpFit::fit_mle(
                    x.clone(),
                    y.to_vec(),
                    noise.map(<[f64]>::to_vec),
                    *kernel,
                    &MleOptions {
                        restarts: *restarts,
                        max_evals: *max_evals,
                    },
                    *cap,
                    stream,
                )?,
            };
            Ok(EmulatorFit::Gp(fit))
        }
    }
}
