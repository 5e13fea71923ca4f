//! Sequential designs: sites added one round at a time by an acquisition rule,
//! with fixed or adaptive replication.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::fixed::pre_average;
use super::{PolicyFit, SiteResolver, SiteSource, StepReport, StepSim};
use crate::designs::{quantile, spacefill_design, SpaceFill};
use crate::emulators::{fit_emulator, EmulatorFit, GpHyperSpec, MethodSpec};
use crate::error::{Error, Result};
use crate::model::{ModelSpec, StateMatrix};
use crate::sampling::RandomStream;

/// Largest number of unique sites a sequential design may reach.
pub const MAX_SEQ_SITES: usize = 300;

/// Straddle score: large where the emulator is uncertain and close to the zero contour.
pub fn acquisition_smcu(mean: f64, sd: f64, gamma: f64) -> f64 {
    gamma * sd - mean.abs()
}

fn default_cand() -> usize {
    1000
}
fn default_freq() -> usize {
    5
}
fn default_gamma() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeqSpec {
    /// Initial space-filling design.
    pub init: SiteSource,
    pub final_size: usize,
    pub nrep: usize,
    #[serde(default = "default_cand")]
    pub cand_len: usize,
    /// Hyperparameters are re-estimated every this many rounds.
    #[serde(default = "default_freq")]
    pub update_freq: usize,
    #[serde(default = "default_gamma")]
    pub ucb_gamma: f64,
    #[serde(default)]
    pub lookahead: Option<usize>,
}

impl SeqSpec {
    pub fn validate(&self, model: &ModelSpec) -> Result<()> {
        self.init.validate(model)?;
        if self.final_size > MAX_SEQ_SITES {
            return Err(Error::config(
                "solver.final_size",
                format!("at most {MAX_SEQ_SITES} sequential sites are supported"),
            ));
        }
        check_common(self.nrep, self.cand_len, self.update_freq, self.ucb_gamma)
    }
}

fn check_common(r0: usize, cand_len: usize, update_freq: usize, gamma: f64) -> Result<()> {
    if r0 == 0 {
        return Err(Error::config(
            "solver.nrep",
            "replicates per round must be positive",
        ));
    }
    if cand_len == 0 {
        return Err(Error::config("solver.cand_len", "must be positive"));
    }
    if update_freq == 0 {
        return Err(Error::config("solver.update_freq", "must be positive"));
    }
    if !(gamma.is_finite() && gamma >= 0.0) {
        return Err(Error::config("solver.ucb_gamma", "must be non-negative"));
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Heuristic {
    /// Every round adds one new site with `r0` replicates.
    Fb,
    /// Each round either adds a site or spreads `r0` replicates over existing sites.
    Adsa,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchSpec {
    pub init: SiteSource,
    pub heuristic: Heuristic,
    pub r0: usize,
    /// Total simulations per step, including the initial design.
    pub total_budget: usize,
    #[serde(default = "default_cand")]
    pub cand_len: usize,
    #[serde(default = "default_freq")]
    pub update_freq: usize,
    #[serde(default = "default_gamma")]
    pub ucb_gamma: f64,
    #[serde(default)]
    pub lookahead: Option<usize>,
}

impl BatchSpec {
    pub fn validate(&self, model: &ModelSpec) -> Result<()> {
        self.init.validate(model)?;
        check_common(self.r0, self.cand_len, self.update_freq, self.ucb_gamma)
    }
}

struct Plan {
    r0: usize,
    total: usize,
    adsa: bool,
    cand_len: usize,
    update_freq: usize,
    gamma: f64,
    lookahead: Option<usize>,
}

/// Sequential design with the straddle acquisition, `nrep` replicates per new site.
pub fn solve_seq(
    model: &ModelSpec,
    spec: &SeqSpec,
    method: &MethodSpec,
    stream: &RandomStream,
) -> Result<PolicyFit> {
    spec.validate(model)?;
    let plan = Plan {
        r0: spec.nrep,
        total: spec.final_size * spec.nrep,
        adsa: false,
        cand_len: spec.cand_len,
        update_freq: spec.update_freq,
        gamma: spec.ucb_gamma,
        lookahead: spec.lookahead,
    };
    run(model, &spec.init, &plan, method, "seq", stream)
}

/// Sequential design with a fixed (`fb`) or adaptive (`adsa`) batching rule.
pub fn solve_seq_batch(
    model: &ModelSpec,
    spec: &BatchSpec,
    method: &MethodSpec,
    stream: &RandomStream,
) -> Result<PolicyFit> {
    spec.validate(model)?;
    let plan = Plan {
        r0: spec.r0,
        total: spec.total_budget,
        adsa: spec.heuristic == Heuristic::Adsa,
        cand_len: spec.cand_len,
        update_freq: spec.update_freq,
        gamma: spec.ucb_gamma,
        lookahead: spec.lookahead,
    };
    let tag = match spec.heuristic {
        Heuristic::Fb => "seq_batch_fb",
        Heuristic::Adsa => "seq_batch_adsa",
    };
    run(model, &spec.init, &plan, method, tag, stream)
}

fn run(
    model: &ModelSpec,
    init: &SiteSource,
    plan: &Plan,
    method: &MethodSpec,
    tag: &str,
    stream: &RandomStream,
) -> Result<PolicyFit> {
    model.validate()?;
    if !method.is_gp() {
        return Err(Error::config(
            "solver.method",
            "sequential designs require a GP method",
        ));
    }
    method.validate(model)?;
    let started = Instant::now();
    let kmax = model.steps();
    let resolver = SiteResolver::new(model, init, stream)?;
    let mut fits: Vec<Option<EmulatorFit>> = vec![None; kmax];
    let mut reports = Vec::new();
    for k in (1..kmax).rev() {
        let t0 = Instant::now();
        let ss = stream.child("step", k as u64);
        let sites = resolver.sites_at(k, &ss.child("design", 0))?;
        let sim = StepSim::new(model, &fits, k, plan.lookahead);
        let (fit, n_unique, budget) = step(model, &resolver, &sim, sites, plan, method, init, &ss)?;
        fits[k] = Some(fit);
        reports.push(StepReport {
            step: k,
            n_unique,
            budget,
            secs: t0.elapsed().as_secs_f64(),
        });
    }
    reports.reverse();
    let mut policy = PolicyFit::new(model.clone(), tag, method.label(), plan.lookahead, fits);
    policy.steps = reports;
    policy.wall_secs = started.elapsed().as_secs_f64();
    Ok(policy)
}

struct Data {
    sites: StateMatrix,
    responses: Vec<Vec<f64>>,
}

impl Data {
    fn reps(&self) -> Vec<usize> {
        self.responses.iter().map(Vec::len).collect()
    }

    fn stats(&self) -> Result<(Vec<f64>, Option<Vec<f64>>)> {
        let reps = self.reps();
        let flat: Vec<f64> = self.responses.iter().flatten().copied().collect();
        pre_average(&flat, &reps)
    }
}

#[allow(clippy::too_many_arguments)]
fn step(
    model: &ModelSpec,
    resolver: &SiteResolver,
    sim: &StepSim,
    sites: StateMatrix,
    plan: &Plan,
    method: &MethodSpec,
    init: &SiteSource,
    ss: &RandomStream,
) -> Result<(EmulatorFit, usize, usize)> {
    let k = sim.k;
    let reps0 = vec![plan.r0; sites.rows()];
    let init_budget: usize = reps0.iter().sum();
    if plan.total < init_budget {
        return Err(Error::config(
            "solver.total_budget",
            format!(
                "budget {} is below the initial design's {init_budget} simulations",
                plan.total
            ),
        ));
    }
    let y = sim.responses(&sites, &reps0, &ss.child("resp", 0))?;
    let mut data = Data {
        responses: y.chunks(plan.r0).map(<[f64]>::to_vec).collect(),
        sites,
    };
    let (mean, noise) = data.stats()?;
    let mut fit = fit_emulator(
        method,
        model,
        k,
        &data.sites,
        &mean,
        noise.as_deref(),
        &ss.child("fit", 0),
    )?;
    let mle = matches!(
        method,
        MethodSpec::Gp {
            hyper: GpHyperSpec::Mle { .. },
            ..
        }
    );
    let cand_box = resolver.box_at(k)?;
    let mut used = init_budget;
    let mut since_opt = 0;
    let mut round = 0u64;
    while used < plan.total {
        round += 1;
        let r_round = plan.r0.min(plan.total - used);
        let cands = spacefill_design(
            &cand_box,
            plan.cand_len,
            SpaceFill::Lhs,
            model,
            k,
            true,
            &init.constraints,
            &ss.child("cand", round),
        )?;
        if cands.is_empty() {
            return Err(Error::EmptyDesign { step: k });
        }
        let (m, s) = fit.predict_with_sd(&cands);
        let gamma = if plan.adsa {
            adaptive_gamma(&s)
        } else {
            plan.gamma
        };
        let best = argmax(
            m.iter()
                .zip(&s)
                .map(|(m, s)| acquisition_smcu(*m, *s, gamma)),
        );
        let resp_stream = ss.child("resp", round);

        let add_site = if plan.adsa {
            let gain_new = s[best] * s[best];
            let (_, s_old) = fit.predict_with_sd(&data.sites);
            let reps = data.reps();
            let alloc = largest_remainder(&s_old, r_round);
            let gain_old: f64 = s_old
                .iter()
                .zip(&alloc)
                .zip(&reps)
                .map(|((s, &a), &r)| s * s * a as f64 / (a + r) as f64)
                .sum();
            if gain_new >= gain_old {
                true
            } else {
                let idx: Vec<usize> = (0..alloc.len()).filter(|&i| alloc[i] > 0).collect();
                let a: Vec<usize> = idx.iter().map(|&i| alloc[i]).collect();
                let y = sim.responses(&data.sites.select_rows(&idx), &a, &resp_stream)?;
                let mut at = 0;
                for (&i, &ai) in idx.iter().zip(&a) {
                    data.responses[i].extend_from_slice(&y[at..at + ai]);
                    at += ai;
                }
                false
            }
        } else {
            true
        };
        if add_site {
            let x = cands.select_rows(&[best]);
            let y = sim.responses(&x, &[r_round], &resp_stream)?;
            data.sites.append(&x);
            data.responses.push(y);
        }
        used += r_round;

        since_opt += 1;
        let (mean, noise) = data.stats()?;
        fit = match (&fit, mle && since_opt < plan.update_freq) {
            (EmulatorFit::Gp(gp), true) => {
                let noise = noise.unwrap_or_else(|| vec![0.0; mean.len()]);
                EmulatorFit::Gp(gp.refit(data.sites.clone(), mean, noise)?)
            }
            _ => {
                since_opt = 0;
                fit_emulator(
                    method,
                    model,
                    k,
                    &data.sites,
                    &mean,
                    noise.as_deref(),
                    &ss.child("fit", round),
                )?
            }
        };
    }
    if mle && since_opt > 0 {
        let (mean, noise) = data.stats()?;
        fit = fit_emulator(
            method,
            model,
            k,
            &data.sites,
            &mean,
            noise.as_deref(),
            &ss.child("fit", round + 1),
        )?;
    }
    Ok((fit, data.sites.rows(), used))
}

fn argmax(scores: impl Iterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, v) in scores.enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best.0
}

/// Straddle width for adaptive batching: the 80th percentile of candidate
/// standard deviations relative to the largest one.
fn adaptive_gamma(sd: &[f64]) -> f64 {
    let mut s = sd.to_vec();
    s.sort_by(f64::total_cmp);
    let max = *s.last().unwrap_or(&0.0);
    if max > 0.0 {
        quantile(&s, 0.8) / max
    } else {
        1.0
    }
}

/// Split `total` integer units proportionally to `weights` (equal split when all zero).
fn largest_remainder(weights: &[f64], total: usize) -> Vec<usize> {
    let n = weights.len();
    let sum: f64 = weights.iter().sum();
    let w: Vec<f64> = if sum > 0.0 {
        weights.iter().map(|v| v / sum).collect()
    } else {
        vec![1.0 / n as f64; n]
    };
    let quota: Vec<f64> = w.iter().map(|v| v * total as f64).collect();
    let mut alloc: Vec<usize> = quota.iter().map(|q| q.floor() as usize).collect();
    let mut left = total - alloc.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        let fa = quota[a] - quota[a].floor();
        let fb = quota[b] - quota[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        alloc[i] += 1;
        left -= 1;
    }
    alloc
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn smcu_hand_values() {
        let c = [(0.0, 1.0), (2.0, 1.0), (0.0, 0.1)];
        let i = argmax(c.iter().map(|(m, s)| acquisition_smcu(*m, *s, 1.0)));
        assert_eq!(i, 0);
        assert_eq!(acquisition_smcu(0.0, 0.7, 2.0), 1.4);
        assert!(acquisition_smcu(-0.3, 0.0, 5.0) <= 0.0);
    }

    #[test]
    fn remainder_allocation() {
        assert_eq!(largest_remainder(&[1.0, 1.0, 2.0], 25), vec![6, 6, 13]);
        assert_eq!(largest_remainder(&[0.0, 0.0], 3), vec![2, 1]);
        let a = largest_remainder(&[0.3, 0.9, 0.1, 0.5], 17);
        assert_eq!(a.iter().sum::<usize>(), 17);
    }
}
