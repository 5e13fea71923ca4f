//! Fixed simulation designs with fresh paths and replication at every step.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{PolicyFit, StepReport};
use crate::designs::{
    batch_means, batch_stats, quantile_box, spacefill_design, DomainBox, LinearConstraint,
    SpaceFill,
};
use crate::emulators::{fit_emulator, EmulatorFit, MethodSpec};
use crate::error::{Error, Result};
use crate::model::{ModelSpec, StateMatrix};
use crate::paths::simulate_paths;
use crate::policy::walk;
use crate::sampling::RandomStream;

/// Number of design points per step: one value for all steps, or one per step `k = 1..K-1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Budget {
    All(usize),
    PerStep(Vec<usize>),
}

impl Budget {
    pub fn at(&self, k: usize) -> usize {
        match self {
            Budget::All(n) => *n,
            Budget::PerStep(v) => v[(k - 1).min(v.len() - 1)],
        }
    }
}

/// Where design sites come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Domain {
    /// User-supplied sites, used as given at every step.
    Sites { points: Vec<Vec<f64>> },
    /// Fixed rectangle.
    Box { lower: Vec<f64>, upper: Vec<f64> },
    /// Quantile box of pilot paths from `x0` at each step.
    Pilot {
        quantile: f64,
        #[serde(default = "default_pilot")]
        n_pilot: usize,
    },
    /// States of fresh forward paths from `x0`.
    Paths,
}

fn default_pilot() -> usize {
    1000
}
fn default_fill() -> SpaceFill {
    SpaceFill::Sobol
}

/// A rule producing the training sites at each step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SiteSource {
    pub domain: Domain,
    #[serde(default = "default_fill")]
    pub fill: SpaceFill,
    /// Number of proposals (space-filling) or paths (path-based) per step.
    #[serde(default = "default_n")]
    pub n: Budget,
    /// Keep only in-the-money sites. Defaults to on, except for explicit sites.
    #[serde(default)]
    pub itm_filter: Option<bool>,
    #[serde(default)]
    pub constraints: Vec<LinearConstraint>,
}

fn default_n() -> Budget {
    Budget::All(100)
}

impl SiteSource {
    pub fn validate(&self, model: &ModelSpec) -> Result<()> {
        let d = model.dim;
        match &self.domain {
            Domain::Sites { points } => {
                if points.is_empty() {
                    return Err(Error::config("design.domain.points", "no sites given"));
                }
                if let Some(p) = points.iter().find(|p| p.len() != d) {
                    return Err(Error::config(
                        "design.domain.points",
                        format!("site has {} coordinates, model has {d}", p.len()),
                    ));
                }
            }
            Domain::Box { lower, upper } => {
                if lower.len() != d || upper.len() != d {
                    return Err(Error::config(
                        "design.domain",
                        format!("box bounds need {d} entries"),
                    ));
                }
                DomainBox::new(lower.clone(), upper.clone())
                    .map_err(|e| Error::config("design.domain", e.to_string()))?;
            }
            Domain::Pilot { quantile, n_pilot } => {
                if !(0.0..0.5).contains(quantile) {
                    return Err(Error::config(
                        "design.domain.quantile",
                        "must lie in [0, 0.5)",
                    ));
                }
                if *n_pilot < 2 {
                    return Err(Error::config(
                        "design.domain.n_pilot",
                        "need at least 2 pilot paths",
                    ));
                }
            }
            Domain::Paths => {}
        }
        if let Budget::PerStep(v) = &self.n {
            if v.len() + 1 < model.steps() {
                return Err(Error::config(
                    "design.n",
                    format!(
                        "per-step budget needs {} entries, got {}",
                        model.steps() - 1,
                        v.len()
                    ),
                ));
            }
        }
        if let Some(c) = self.constraints.iter().find(|c| c.coef.len() != d) {
            return Err(Error::config(
                "design.constraints",
                format!(
                    "constraint has {} coefficients, model has {d}",
                    c.coef.len()
                ),
            ));
        }
        Ok(())
    }
}

/// Fixed design: sites from `source`, each replicated `nrep` times.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DesignSpec {
    #[serde(flatten)]
    pub source: SiteSource,
    #[serde(default = "one")]
    pub nrep: usize,
}

fn one() -> usize {
    1
}

impl DesignSpec {
    pub fn validate(&self, model: &ModelSpec) -> Result<()> {
        if self.nrep == 0 {
            return Err(Error::config("design.nrep", "must be positive"));
        }
        self.source.validate(model)
    }
}

/// Resolves a [`SiteSource`] at each step; pilot paths are simulated once.
pub(crate) struct SiteResolver<'a> {
    model: &'a ModelSpec,
    source: &'a SiteSource,
    pilot: Option<Vec<StateMatrix>>,
    stream: RandomStream,
}

impl<'a> SiteResolver<'a> {
    pub fn new(
        model: &'a ModelSpec,
        source: &'a SiteSource,
        stream: &RandomStream,
    ) -> Result<Self> {
        source.validate(model)?;
        let pilot = match source.domain {
            Domain::Pilot { n_pilot, .. } => {
                let start = StateMatrix::repeat_row(&model.x0(), n_pilot);
                Some(simulate_paths(
                    model,
                    &start,
                    model.steps(),
                    &stream.child("pilot", 0),
                )?)
            }
            _ => None,
        };
        Ok(SiteResolver {
            model,
            source,
            pilot,
            stream: *stream,
        })
    }

    /// Rectangle used for candidate generation at step `k`.
    pub fn box_at(&self, k: usize) -> Result<DomainBox> {
        match &self.source.domain {
            Domain::Sites { points } => quantile_box(&StateMatrix::from_rows(points)?, 0.0),
            Domain::Box { lower, upper } => DomainBox::new(lower.clone(), upper.clone()),
            Domain::Pilot { quantile, .. } => {
                quantile_box(&self.pilot.as_ref().expect("pilot paths")[k], *quantile)
            }
            Domain::Paths => quantile_box(&self.path_states(k)?, 0.0),
        }
    }

    fn path_states(&self, k: usize) -> Result<StateMatrix> {
        let n = self.source.n.at(k);
        let start = StateMatrix::repeat_row(&self.model.x0(), n);
        let paths = simulate_paths(
            self.model,
            &start,
            k,
            &self.stream.child("design-paths", k as u64),
        )?;
        Ok(paths.into_iter().nth(k).expect("k steps simulated"))
    }

    pub fn sites_at(&self, k: usize, stream: &RandomStream) -> Result<StateMatrix> {
        let src = self.source;
        let keep = |x: &[f64], default_itm: bool| {
            src.constraints.iter().all(|c| c.admits(x))
                && (!src.itm_filter.unwrap_or(default_itm) || self.model.reward_row(k, x) > 0.0)
        };
        let sites = match &src.domain {
            Domain::Sites { points } => {
                let mut s = StateMatrix::zeros(0, self.model.dim);
                for p in points.iter().filter(|p| keep(p, false)) {
                    s.push_row(p);
                }
                s
            }
            Domain::Paths => {
                let states = self.path_states(k)?;
                let idx: Vec<usize> = (0..states.rows())
                    .filter(|&i| keep(states.row(i), true))
                    .collect();
                states.select_rows(&idx)
            }
            Domain::Box { .. } | Domain::Pilot { .. } => spacefill_design(
                &self.box_at(k)?,
                src.n.at(k),
                src.fill,
                self.model,
                k,
                src.itm_filter.unwrap_or(true),
                &src.constraints,
                stream,
            )?,
        };
        if sites.is_empty() {
            return Err(Error::EmptyDesign { step: k });
        }
        Ok(sites)
    }
}

/// Simulates training responses at step `k` using the fits of later steps.
pub(crate) struct StepSim<'a> {
    pub model: &'a ModelSpec,
    pub fits: &'a [Option<EmulatorFit>],
    pub k: usize,
    pub end: usize,
}

impl<'a> StepSim<'a> {
    pub fn new(
        model: &'a ModelSpec,
        fits: &'a [Option<EmulatorFit>],
        k: usize,
        lookahead: Option<usize>,
    ) -> Self {
        let kmax = model.steps();
        let end = lookahead.map_or(kmax, |w| (k + w).min(kmax));
        StepSim {
            model,
            fits,
            k,
            end,
        }
    }

    /// Responses `y = reward - h(k, x)` for `reps[i]` fresh paths from each site,
    /// laid out site by site.
    pub fn responses(
        &self,
        sites: &StateMatrix,
        reps: &[usize],
        stream: &RandomStream,
    ) -> Result<Vec<f64>> {
        let total: usize = reps.iter().sum();
        let mut start = StateMatrix::zeros(0, sites.cols());
        let mut h = Vec::with_capacity(total);
        for (i, &r) in reps.iter().enumerate() {
            let hk = self.model.reward_row(self.k, sites.row(i));
            for _ in 0..r {
                start.push_row(sites.row(i));
                h.push(hk);
            }
        }
        if total == 0 {
            return Ok(Vec::new());
        }
        let paths = simulate_paths(self.model, &start, self.end - self.k, stream)?;
        let (_, value) = walk(self.model, self.fits, &paths, self.k, self.end)?;
        Ok(value.iter().zip(&h).map(|(v, h)| v - h).collect())
    }
}

/// Site averages, with their noise variances when every site has at least two replicates.
pub(crate) fn pre_average(y: &[f64], reps: &[usize]) -> Result<(Vec<f64>, Option<Vec<f64>>)> {
    if reps.iter().all(|&r| r >= 2) {
        let (mean, var) = batch_stats(y, reps)?;
        let noise = var.iter().zip(reps).map(|(v, &r)| v / r as f64).collect();
        Ok((mean, Some(noise)))
    } else {
        Ok((batch_means(y, reps)?, None))
    }
}

/// Fresh replicated paths from a fixed design at every step.
pub fn solve_fixed(
    model: &ModelSpec,
    design: &DesignSpec,
    method: &MethodSpec,
    lookahead: Option<usize>,
    stream: &RandomStream,
) -> Result<PolicyFit> {
    model.validate()?;
    method.validate(model)?;
    design.validate(model)?;
    let started = Instant::now();
    let kmax = model.steps();
    let resolver = SiteResolver::new(model, &design.source, stream)?;
    let mut fits: Vec<Option<EmulatorFit>> = vec![None; kmax];
    let mut reports = Vec::new();
    for k in (1..kmax).rev() {
        let t0 = Instant::now();
        let ss = stream.child("step", k as u64);
        let sites = resolver.sites_at(k, &ss.child("design", 0))?;
        let reps = vec![design.nrep; sites.rows()];
        let sim = StepSim::new(model, &fits, k, lookahead);
        let y = sim.responses(&sites, &reps, &ss.child("resp", 0))?;
        let (mean, noise) = pre_average(&y, &reps)?;
        let fit = fit_emulator(
            method,
            model,
            k,
            &sites,
            &mean,
            noise.as_deref(),
            &ss.child("fit", 0),
        )?;
        fits[k] = Some(fit);
        reports.push(StepReport {
            step: k,
            n_unique: sites.rows(),
            budget: reps.iter().sum(),
            secs: t0.elapsed().as_secs_f64(),
        });
    }
    reports.reverse();
    let mut policy = PolicyFit::new(model.clone(), "fixed", method.label(), lookahead, fits);
    policy.steps = reports;
    policy.wall_secs = started.elapsed().as_secs_f64();
    Ok(policy)
}
