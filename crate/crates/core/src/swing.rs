//! Swing options: several exercise rights separated by a refraction period.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::emulators::{fit_emulator, EmulatorFit, MethodSpec};
use crate::error::{Error, Result};
use crate::model::{ModelSpec, StateMatrix};
use crate::paths::{simulate_paths, PathSet};
use crate::policy::EvalResult;
use crate::sampling::RandomStream;
use crate::solvers::{pre_average, SiteResolver};
use crate::solvers::{DesignSpec, PolicyFit, StepReport};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SwingSpec {
    pub model: ModelSpec,
    /// Number of exercise rights `I`.
    pub n_swing: usize,
    /// Minimum time between two exercises, in years.
    pub refract: f64,
}

impl SwingSpec {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.n_swing == 0 {
            return Err(Error::config("swing.n_swing", "must be at least 1"));
        }
        self.k_delta().map(|_| ())
    }

    /// Refraction period in exercise steps.
    pub fn k_delta(&self) -> Result<usize> {
        let ratio = self.refract / self.model.dt;
        let k = ratio.round();
        if !ratio.is_finite() || k < 1.0 || (k * self.model.dt - self.refract).abs() > 1e-9 {
            return Err(Error::config(
                "swing.refract",
                format!(
                    "{} is not a positive multiple of dt = {}",
                    self.refract, self.model.dt
                ),
            ));
        }
        Ok(k as usize)
    }
}

/// Stacked timing-value emulators: `layers[i - 1][k]` is `T̂⁽ⁱ⁾(k, ·)` with `i` rights left.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SwingPolicyFit {
    pub spec: SwingSpec,
    pub solver: String,
    pub method: String,
    pub layers: Vec<Vec<Option<EmulatorFit>>>,
    pub steps: Vec<StepReport>,
    #[serde(skip)]
    pub wall_secs: f64,
}

impl SwingPolicyFit {
    pub fn n_rights(&self) -> usize {
        self.layers.len()
    }

    /// The single-right layer `i` as an ordinary exercise policy.
    pub fn layer(&self, i: usize) -> Result<PolicyFit> {
        if i == 0 || i > self.layers.len() {
            return Err(Error::Precondition(format!(
                "layer {i} requested, fit has {} rights",
                self.layers.len()
            )));
        }
        let mut p = PolicyFit::new(
            self.spec.model.clone(),
            &self.solver,
            &self.method,
            None,
            self.layers[i - 1].clone(),
        );
        p.steps = self.steps.clone();
        Ok(p)
    }
}

/// Outcome of following a swing policy along a set of paths.
pub(crate) struct SwingWalk {
    pub value: Vec<f64>,
    /// Step of the first exercise (`K` when a path never exercises).
    pub first: Vec<usize>,
}

/// Follow the stacked rule along `paths` (entry `j` holds step `start + j`) with
/// `rights` exercises available, the first one allowed from step `next_allowed`.
pub(crate) fn walk_rights(
    model: &ModelSpec,
    layers: &[Vec<Option<EmulatorFit>>],
    k_delta: usize,
    paths: &[StateMatrix],
    start: usize,
    rights: usize,
    next_allowed: usize,
) -> Result<SwingWalk> {
    let kmax = model.steps();
    let n = paths.first().map_or(0, StateMatrix::rows);
    let mut value = vec![0.0; n];
    let mut first = vec![usize::MAX; n];
    if rights > layers.len() {
        return Err(Error::Precondition(format!(
            "{rights} rights requested, policy has {}",
            layers.len()
        )));
    }
    if paths.len() < kmax - start + 1 {
        return Err(Error::Precondition(format!(
            "swing walk from step {start} needs {} path steps, got {}",
            kmax - start + 1,
            paths.len()
        )));
    }
    let mut left = vec![rights; n];
    let mut next = vec![next_allowed; n];
    if rights > 0 {
        for s in start + 1..=kmax {
            let st = &paths[s - start];
            if s == kmax {
                for i in 0..n {
                    if left[i] > 0 && next[i] <= s {
                        let h = model.reward_row(s, st.row(i));
                        if h > 0.0 {
                            value[i] += h;
                            first[i] = first[i].min(s);
                        }
                    }
                }
                break;
            }
            // group candidates by rights left before applying any exercise at this step
            let mut groups: Vec<Vec<(usize, f64)>> = vec![Vec::new(); rights + 1];
            for i in 0..n {
                if left[i] > 0 && next[i] <= s {
                    let h = model.reward_row(s, st.row(i));
                    if h > 0.0 {
                        groups[left[i]].push((i, h));
                    }
                }
            }
            for (r, group) in groups.iter().enumerate().skip(1) {
                if group.is_empty() {
                    continue;
                }
                let fit = layers[r - 1]
                    .get(s)
                    .and_then(Option::as_ref)
                    .ok_or(Error::MissingFit { step: s })?;
                let idx: Vec<usize> = group.iter().map(|g| g.0).collect();
                let pred = fit.predict(&st.select_rows(&idx));
                for (&(i, h), t) in group.iter().zip(pred) {
                    if t < 0.0 {
                        value[i] += h;
                        left[i] -= 1;
                        next[i] = s + k_delta;
                        first[i] = first[i].min(s);
                    }
                }
            }
        }
    }
    for f in &mut first {
        if *f == usize::MAX {
            *f = kmax;
        }
    }
    Ok(SwingWalk { value, first })
}

/// Fit the stacked timing values on a fixed replicated design.
///
/// At each step and for each number of rights `i`, the response along a fresh
/// path from the site compares continuing with `i` rights against exercising now
/// and continuing with `i - 1` rights after the refraction period.
pub fn solve_swing_fixed(
    spec: &SwingSpec,
    design: &DesignSpec,
    method: &MethodSpec,
    stream: &RandomStream,
) -> Result<SwingPolicyFit> {
    spec.validate()?;
    let model = &spec.model;
    method.validate(model)?;
    design.validate(model)?;
    let k_delta = spec.k_delta()?;
    let started = Instant::now();
    let kmax = model.steps();
    let resolver = SiteResolver::new(model, &design.source, stream)?;
    let mut layers: Vec<Vec<Option<EmulatorFit>>> = vec![vec![None; kmax]; spec.n_swing];
    let mut reports = Vec::new();
    for k in (1..kmax).rev() {
        let t0 = Instant::now();
        let ss = stream.child("step", k as u64);
        let sites = resolver.sites_at(k, &ss.child("design", 0))?;
        let reps = vec![design.nrep; sites.rows()];
        let mut start = StateMatrix::zeros(0, model.dim);
        let mut h = Vec::new();
        for x in sites.iter_rows() {
            let hk = model.reward_row(k, x);
            for _ in 0..design.nrep {
                start.push_row(x);
                h.push(hk);
            }
        }
        let paths = simulate_paths(model, &start, kmax - k, &ss.child("resp", 0))?;
        for i in 1..=spec.n_swing {
            let cont = walk_rights(model, &layers, k_delta, &paths, k, i, k + 1)?;
            let after = walk_rights(model, &layers, k_delta, &paths, k, i - 1, k + k_delta)?;
            let y: Vec<f64> = cont
                .value
                .iter()
                .zip(&after.value)
                .zip(&h)
                .map(|((c, a), h)| c - (h + a))
                .collect();
            let (mean, noise) = pre_average(&y, &reps)?;
            let fit = fit_emulator(
                method,
                model,
                k,
                &sites,
                &mean,
                noise.as_deref(),
                &ss.child("fit", (i - 1) as u64),
            )?;
            layers[i - 1][k] = Some(fit);
        }
        reports.push(StepReport {
            step: k,
            n_unique: sites.rows(),
            budget: reps.iter().sum(),
            secs: t0.elapsed().as_secs_f64(),
        });
    }
    reports.reverse();
    Ok(SwingPolicyFit {
        spec: spec.clone(),
        solver: "swing_fixed".into(),
        method: method.label().into(),
        layers,
        steps: reports,
        wall_secs: started.elapsed().as_secs_f64(),
    })
}

/// Out-of-sample value of the swing rule with `n_rights` rights on held-out paths.
///
/// Rights are never exercised at time zero; `mean_stop` and `stop_steps` refer to
/// the first exercise.
pub fn swing_eval(test: &PathSet, fit: &SwingPolicyFit, n_rights: usize) -> Result<EvalResult> {
    let model = &fit.spec.model;
    if n_rights == 0 || n_rights > fit.n_rights() {
        return Err(Error::Precondition(format!(
            "{n_rights} rights requested, fit has {} swing layers",
            fit.n_rights()
        )));
    }
    if test.dim() != model.dim {
        return Err(Error::dims("test-set dimension", model.dim, test.dim()));
    }
    if test.steps() < model.steps() {
        return Err(Error::dims(
            "test-set horizon (steps)",
            model.steps(),
            test.steps(),
        ));
    }
    let w = walk_rights(
        model,
        &fit.layers,
        fit.spec.k_delta()?,
        &test.states[..=model.steps()],
        0,
        n_rights,
        1,
    )?;
    Ok(EvalResult::from_payoffs(w.value, w.first))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Dynamics, Param, PayoffKind, Volatility};
    use crate::policy::forward_eval;
    use crate::solvers::{solve_fixed, Budget, Domain, SiteSource};
    use std::collections::BTreeMap;

    fn put(dt: f64) -> ModelSpec {
        ModelSpec {
            dim: 1,
            maturity: 1.0,
            dt,
            r: 0.05,
            div: Param::Scalar(0.0),
            sigma: Volatility::Scalar(0.3),
            rho: None,
            x0: Param::Scalar(100.0),
            strike: 100.0,
            payoff: PayoffKind::Put,
            dynamics: Dynamics::Gbm,
            sv: None,
            extra: BTreeMap::new(),
        }
    }

    fn design() -> DesignSpec {
        DesignSpec {
            source: SiteSource {
                domain: Domain::Box {
                    lower: vec![60.0],
                    upper: vec![100.0],
                },
                fill: crate::designs::SpaceFill::Lattice,
                n: Budget::All(12),
                itm_filter: None,
                constraints: vec![],
            },
            nrep: 20,
        }
    }

    #[test]
    fn refraction_must_divide() {
        let mut s = SwingSpec {
            model: put(0.1),
            n_swing: 2,
            refract: 0.25,
        };
        assert!(s.k_delta().is_err());
        s.refract = 0.3;
        assert_eq!(s.k_delta().unwrap(), 3);
        s.refract = 0.0;
        assert!(s.validate().is_err());
    }

    #[test]
    fn first_layer_is_single_option_fit() {
        let m = put(0.1);
        let spec = SwingSpec {
            model: m.clone(),
            n_swing: 2,
            refract: 0.2,
        };
        let method = MethodSpec::Lm {
            basis: crate::emulators::BasisSpec::Poly {
                degree: 2,
                include_payoff: false,
                sorted: false,
            },
        };
        let stream = RandomStream::new(11);
        let swing = solve_swing_fixed(&spec, &design(), &method, &stream).unwrap();
        let single = solve_fixed(&m, &design(), &method, None, &stream).unwrap();
        assert_eq!(swing.layer(1).unwrap().fits, single.fits);

        let test = crate::paths::make_test_set(&m, "put", 2000, 5).unwrap();
        let a = swing_eval(&test, &swing, 1).unwrap();
        let b = forward_eval(&test, &single).unwrap();
        assert_eq!(a.payoffs, b.payoffs);
        assert!(swing_eval(&test, &swing, 3).is_err());
        let two = swing_eval(&test, &swing, 2).unwrap();
        assert!(two.price >= a.price);
    }

    #[test]
    fn long_refraction_collapses_to_one_right() {
        let m = put(0.25);
        let spec = SwingSpec {
            model: m.clone(),
            n_swing: 3,
            refract: 1.0,
        };
        let method = MethodSpec::Lm {
            basis: crate::emulators::BasisSpec::Poly {
                degree: 2,
                include_payoff: false,
                sorted: false,
            },
        };
        let fit = solve_swing_fixed(&spec, &design(), &method, &RandomStream::new(2)).unwrap();
        let test = crate::paths::make_test_set(&m, "put", 1000, 9).unwrap();
        let one = swing_eval(&test, &fit, 1).unwrap();
        for i in 2..=3 {
            let r = swing_eval(&test, &fit, i).unwrap();
            assert_eq!(r.payoffs, one.payoffs);
        }
    }
}
