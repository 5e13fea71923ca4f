//! Global-path regression schemes: Longstaff-Schwartz, TvR and piecewise BW.

use std::time::Instant;

use super::{time_zero, PolicyFit, StepReport};
use crate::emulators::{fit_emulator, EmulatorFit, MethodSpec};
use crate::error::{Error, Result};
use crate::model::{ModelSpec, StateMatrix};
use crate::paths::{simulate_paths, PathSet};
use crate::policy::{forward_eval, walk, EvalResult};
use crate::sampling::RandomStream;

/// Longstaff-Schwartz: one global set of `n` paths from `x0`, reused at every step.
///
/// With the full lookahead each path carries its current stopping time and
/// realized payoff backwards; with a finite `lookahead = w` the response at step
/// `k` is the reward of following the later fits for at most `w` steps.
pub fn solve_ls(
    model: &ModelSpec,
    n: usize,
    method: &MethodSpec,
    lookahead: Option<usize>,
    stream: &RandomStream,
) -> Result<PolicyFit> {
    global_regression(model, n, method, lookahead, "ls", stream)
}

/// Regression on the step-ahead value `V̂(k+1) = h + max(0, T̂(k+1))`: a one-step lookahead.
pub fn solve_tvr(
    model: &ModelSpec,
    n: usize,
    method: &MethodSpec,
    stream: &RandomStream,
) -> Result<PolicyFit> {
    global_regression(model, n, method, Some(1), "tvr", stream)
}

#[derive(Clone, Debug, PartialEq)]
pub struct BwPrices {
    pub in_sample: f64,
    pub out_of_sample: Option<EvalResult>,
}

/// Longstaff-Schwartz with piecewise-linear regression on an equi-count partition;
/// optionally evaluates held-out paths with the fitted rule.
pub fn solve_piecewise_bw(
    model: &ModelSpec,
    n: usize,
    bins: usize,
    test: Option<&PathSet>,
    stream: &RandomStream,
) -> Result<(PolicyFit, BwPrices)> {
    let method = MethodSpec::Piecewise { bins };
    let fit = global_regression(model, n, &method, None, "piecewise_bw", stream)?;
    let out = test.map(|t| forward_eval(t, &fit)).transpose()?;
    let prices = BwPrices {
        in_sample: fit.in_sample_price.unwrap_or(f64::NAN),
        out_of_sample: out,
    };
    Ok((fit, prices))
}

fn global_regression(
    model: &ModelSpec,
    n: usize,
    method: &MethodSpec,
    lookahead: Option<usize>,
    tag: &str,
    stream: &RandomStream,
) -> Result<PolicyFit> {
    model.validate()?;
    method.validate(model)?;
    let started = Instant::now();
    let kmax = model.steps();
    let start = StateMatrix::repeat_row(&model.x0(), n);
    let paths = simulate_paths(model, &start, kmax, &stream.child("paths", 0))?;
    let full = lookahead.is_none_or(|w| w >= kmax);
    let min_rows = method.min_rows(model)?;

    let mut fits: Vec<Option<EmulatorFit>> = vec![None; kmax];
    let mut reports = Vec::new();
    // realized discounted payoff of each path under the rule fitted so far
    let mut value = model.reward(kmax, &paths[kmax]);
    for k in (1..kmax).rev() {
        let t0 = Instant::now();
        let h = model.reward(k, &paths[k]);
        let itm: Vec<usize> = (0..n).filter(|&i| h[i] > 0.0).collect();
        if !itm.is_empty() && itm.len() < min_rows {
            return Err(Error::InsufficientData {
                step: Some(k),
                needed: min_rows,
                got: itm.len(),
            });
        }
        let x = paths[k].select_rows(&itm);
        let y: Vec<f64> = if full {
            itm.iter().map(|&i| value[i] - h[i]).collect()
        } else {
            let end = (k + lookahead.unwrap_or(kmax)).min(kmax);
            let sub: Vec<StateMatrix> =
                paths[k..=end].iter().map(|m| m.select_rows(&itm)).collect();
            let (_, v) = walk(model, &fits, &sub, k, end)?;
            v.iter().zip(&itm).map(|(v, &i)| v - h[i]).collect()
        };
        let fit = fit_emulator(
            method,
            model,
            k,
            &x,
            &y,
            None,
            &stream.child("step", k as u64).child("fit", 0),
        )?;
        if full {
            let pred = fit.predict(&x);
            for (&i, t) in itm.iter().zip(pred) {
                if t < 0.0 {
                    value[i] = h[i];
                }
            }
        }
        fits[k] = Some(fit);
        reports.push(StepReport {
            step: k,
            n_unique: itm.len(),
            budget: n,
            secs: t0.elapsed().as_secs_f64(),
        });
    }
    if !full && kmax > 0 {
        value = walk(model, &fits, &paths, 0, kmax)?.1;
    }
    reports.reverse();
    let in_sample = time_zero(model, value.iter().sum::<f64>() / n as f64);
    let mut policy = PolicyFit::new(
        model.clone(),
        tag,
        method.label(),
        lookahead.filter(|_| !full),
        fits,
    );
    policy.steps = reports;
    policy.in_sample_price = Some(in_sample);
    policy.wall_secs = started.elapsed().as_secs_f64();
    Ok(policy)
}
