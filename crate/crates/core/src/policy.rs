//! Forward evaluation of fitted exercise rules on held-out paths.

use serde::{Deserialize, Serialize};

use crate::emulators::EmulatorFit;
use crate::error::{Error, Result};
use crate::model::{ModelSpec, StateMatrix};
use crate::paths::PathSet;
use crate::solvers::PolicyFit;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub price: f64,
    pub std_error: f64,
    pub ci95: [f64; 2],
    pub n_paths: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub european_estimate: Option<f64>,
    /// The rule exercises at time zero (price is then `h(0, x0)`).
    pub stopped_at_zero: bool,
    /// Average (first) exercise step.
    pub mean_stop: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub payoffs: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stop_steps: Option<Vec<usize>>,
}

impl EvalResult {
    pub(crate) fn from_payoffs(payoffs: Vec<f64>, stops: Vec<usize>) -> Self {
        let (mean, se) = mean_se(&payoffs);
        let mean_stop = stops.iter().sum::<usize>() as f64 / stops.len().max(1) as f64;
        EvalResult {
            price: mean,
            std_error: se,
            ci95: [mean - 1.96 * se, mean + 1.96 * se],
            n_paths: payoffs.len(),
            european_estimate: None,
            stopped_at_zero: false,
            mean_stop,
            payoffs: Some(payoffs),
            stop_steps: Some(stops),
        }
    }

    /// Copy without the per-path vectors.
    pub fn summary(&self) -> Self {
        EvalResult {
            payoffs: None,
            stop_steps: None,
            ..self.clone()
        }
    }
}

/// Sample mean and its standard error.
pub fn mean_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Follow the rule `fits` from step `start` along `paths` (entry `j` holds the
/// states at step `start + j`), with decisions at steps `start+1..=end`.
///
/// A path stops at the first step where it is in the money and the emulator
/// predicts a negative timing value. Reaching maturity pays `h(K, x)`; reaching
/// an earlier horizon `end < K` is valued at `h + max(0, T̂)` there.
/// Returns the stopping step and realized discounted reward of each path.
pub fn walk(
    model: &ModelSpec,
    fits: &[Option<EmulatorFit>],
    paths: &[StateMatrix],
    start: usize,
    end: usize,
) -> Result<(Vec<usize>, Vec<f64>)> {
    let kmax = model.steps();
    if end > kmax || end <= start || paths.len() < end - start + 1 {
        return Err(Error::Precondition(format!(
            "walk from step {start} to {end} needs {} path steps, got {}",
            end.saturating_sub(start) + 1,
            paths.len()
        )));
    }
    let n = paths[0].rows();
    let mut stop = vec![end; n];
    let mut value = vec![0.0; n];
    let mut alive: Vec<usize> = (0..n).collect();
    for s in start + 1..=end {
        if alive.is_empty() {
            break;
        }
        let st = &paths[s - start];
        if s == kmax {
            for &i in &alive {
                value[i] = model.reward_row(s, st.row(i));
                stop[i] = s;
            }
            break;
        }
        let fit = fits
            .get(s)
            .and_then(Option::as_ref)
            .ok_or(Error::MissingFit { step: s })?;
        if s == end {
            let pred = fit.predict(&st.select_rows(&alive));
            for (&i, t) in alive.iter().zip(pred) {
                value[i] = model.reward_row(s, st.row(i)) + t.max(0.0);
                stop[i] = s;
            }
            break;
        }
        let mut itm = Vec::new();
        let mut itm_h = Vec::new();
        for &i in &alive {
            let h = model.reward_row(s, st.row(i));
            if h > 0.0 {
                itm.push(i);
                itm_h.push(h);
            }
        }
        if itm.is_empty() {
            continue;
        }
        let pred = fit.predict(&st.select_rows(&itm));
        let mut stopped = Vec::new();
        for ((&i, h), t) in itm.iter().zip(itm_h).zip(pred) {
            if t < 0.0 {
                value[i] = h;
                stop[i] = s;
                stopped.push(i);
            }
        }
        if !stopped.is_empty() {
            // `alive` and `stopped` are both increasing
            let mut j = 0;
            alive.retain(|&i| {
                if j < stopped.len() && stopped[j] == i {
                    j += 1;
                    false
                } else {
                    true
                }
            });
        }
    }
    Ok((stop, value))
}

fn check_test_set(test: &PathSet, model: &ModelSpec) -> Result<()> {
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
    Ok(())
}

/// Out-of-sample value of the rule on a held-out path set.
pub fn forward_eval(test: &PathSet, fit: &PolicyFit) -> Result<EvalResult> {
    let model = &fit.model;
    check_test_set(test, model)?;
    let k = model.steps();
    let (stops, payoffs) = walk(model, &fit.fits, &test.states[..=k], 0, k)?;
    let mut res = EvalResult::from_payoffs(payoffs, stops);
    if test.steps() == k {
        res.european_estimate = Some(european_value(test, model)?);
    }
    let x0 = test.at(0).row(0);
    let h0 = model.reward_row(0, x0);
    if h0 > 0.0 && h0 >= res.price {
        res.price = h0;
        res.std_error = 0.0;
        res.ci95 = [h0, h0];
        res.stopped_at_zero = true;
        res.mean_stop = 0.0;
    }
    Ok(res)
}

/// Mean discounted terminal payoff: the European option on the same paths.
pub fn european_value(test: &PathSet, model: &ModelSpec) -> Result<f64> {
    if test.dim() != model.dim {
        return Err(Error::dims("test-set dimension", model.dim, test.dim()));
    }
    if test.steps() != model.steps() {
        return Err(Error::dims(
            "test-set horizon (steps)",
            model.steps(),
            test.steps(),
        ));
    }
    let h = model.reward(model.steps(), test.at(model.steps()));
    Ok(h.iter().sum::<f64>() / h.len() as f64)
}

/// Control-variate correction using a known European price.
pub fn cv_adjust(result: &EvalResult, true_european: f64) -> Result<f64> {
    let est = result
        .european_estimate
        .ok_or_else(|| Error::Precondition("evaluation carries no European estimate".into()))?;
    Ok(result.price - (est - true_european))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::instance;
    use crate::paths::make_test_set;
    use crate::solvers::PolicyFit;

    fn constant_policy(model: &ModelSpec, v: f64) -> PolicyFit {
        let fits = (0..model.steps())
            .map(|k| (k > 0).then_some(EmulatorFit::Constant { value: v }))
            .collect();
        PolicyFit::new(model.clone(), "const", "constant", None, fits)
    }

    #[test]
    fn never_stop_is_european() {
        let m = instance("M1").unwrap().model;
        let test = make_test_set(&m, "M1", 20_000, 3).unwrap();
        let r = forward_eval(&test, &constant_policy(&m, 1.0)).unwrap();
        assert_eq!(r.price, european_value(&test, &m).unwrap());
        assert!(r.stop_steps.as_ref().unwrap().iter().all(|&s| s == 25));
    }

    #[test]
    fn always_stop_brute_force() {
        let m = instance("M1").unwrap().model;
        let test = make_test_set(&m, "M1", 5_000, 4).unwrap();
        let r = forward_eval(&test, &constant_policy(&m, -1.0)).unwrap();
        // brute force: first in-the-money step, else maturity
        let mut total = 0.0;
        for i in 0..test.n_paths() {
            let mut v = m.reward_row(25, test.at(25).row(i));
            for k in 1..25 {
                let h = m.reward_row(k, test.at(k).row(i));
                if h > 0.0 {
                    v = h;
                    break;
                }
            }
            total += v;
        }
        assert!((r.price - total / test.n_paths() as f64).abs() < 1e-12);
    }

    #[test]
    fn cv_adjust_linear() {
        let mut r = EvalResult::from_payoffs(vec![1.0, 2.0, 3.0], vec![1, 1, 1]);
        assert!(cv_adjust(&r, 1.0).is_err());
        r.european_estimate = Some(1.0);
        assert_eq!(cv_adjust(&r, 1.0).unwrap(), 2.0);
        r.european_estimate = Some(1.01);
        assert!((cv_adjust(&r, 1.0).unwrap() - 1.99).abs() < 1e-12);
    }
}
