//! Simulation designs: where to place training sites and how many replicates each gets.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ModelSpec, StateMatrix};
use crate::paths::simulate_paths;
use crate::sampling::{halton, lhs, sobol, RandomStream};

/// Axis-aligned rectangle in state space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainBox {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl DomainBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::dims("box bounds", lower.len(), upper.len()));
        }
        if lower
            .iter()
            .zip(&upper)
            .any(|(l, u)| !(l.is_finite() && u.is_finite() && l <= u))
        {
            return Err(Error::Precondition(
                "box needs finite bounds with lower <= upper".into(),
            ));
        }
        Ok(DomainBox { lower, upper })
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .all(|(v, (l, u))| *v >= *l && *v <= *u)
    }

    /// Map a point of the unit cube into the box.
    pub fn scale(&self, u: &[f64]) -> Vec<f64> {
        u.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(u, (l, h))| l + (h - l) * u)
            .collect()
    }
}

/// Half-space `coef . x <= bound`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearConstraint {
    pub coef: Vec<f64>,
    pub bound: f64,
}

impl LinearConstraint {
    pub fn admits(&self, x: &[f64]) -> bool {
        self.coef.iter().zip(x).map(|(a, v)| a * v).sum::<f64>() <= self.bound
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpaceFill {
    Sobol,
    Halton,
    Lhs,
    Lattice,
}

/// Unique training sites at one step and the replicate count at each.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Design {
    pub step: usize,
    pub sites: StateMatrix,
    pub reps: Vec<usize>,
}

impl Design {
    pub fn new(step: usize, sites: StateMatrix, reps: Vec<usize>) -> Result<Self> {
        if reps.len() != sites.rows() {
            return Err(Error::dims("replicate counts", sites.rows(), reps.len()));
        }
        if reps.contains(&0) {
            return Err(Error::Precondition(
                "every site needs at least one replicate".into(),
            ));
        }
        Ok(Design { step, sites, reps })
    }

    pub fn uniform(step: usize, sites: StateMatrix, r: usize) -> Result<Self> {
        let n = sites.rows();
        Design::new(step, sites, vec![r; n])
    }

    pub fn n_unique(&self) -> usize {
        self.sites.rows()
    }

    pub fn budget(&self) -> usize {
        self.reps.iter().sum()
    }

    /// Plain CSV: one row per site with coordinates and replicate count.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        let d = self.sites.cols();
        let header: Vec<String> = (1..=d)
            .map(|j| format!("x{j}"))
            .chain(["reps".into()])
            .collect();
        writeln!(f, "{}", header.join(","))?;
        for (x, r) in self.sites.iter_rows().zip(&self.reps) {
            let cells: Vec<String> = x
                .iter()
                .map(|v| v.to_string())
                .chain([r.to_string()])
                .collect();
            writeln!(f, "{}", cells.join(","))?;
        }
        Ok(())
    }
}

/// Per-site means of consecutive replicate blocks.
pub fn batch_means(responses: &[f64], reps: &[usize]) -> Result<Vec<f64>> {
    blocks(responses, reps)?
        .map(|block| block.map(|b| b.iter().sum::<f64>() / b.len() as f64))
        .collect()
}

/// Per-site means and unbiased sample variances of consecutive replicate blocks.
pub fn batch_stats(responses: &[f64], reps: &[usize]) -> Result<(Vec<f64>, Vec<f64>)> {
    if let Some(i) = reps.iter().position(|&r| r == 1) {
        return Err(Error::Precondition(format!(
            "site {i} has a single replicate; its variance is undefined"
        )));
    }
    let mut means = Vec::with_capacity(reps.len());
    let mut vars = Vec::with_capacity(reps.len());
    for block in blocks(responses, reps)? {
        let block = block?;
        let r = block.len() as f64;
        let m = block.iter().sum::<f64>() / r;
        means.push(m);
        vars.push(block.iter().map(|y| (y - m) * (y - m)).sum::<f64>() / (r - 1.0));
    }
    Ok((means, vars))
}

fn blocks<'a>(
    responses: &'a [f64],
    reps: &'a [usize],
) -> Result<impl Iterator<Item = Result<&'a [f64]>> + 'a> {
    let total: usize = reps.iter().sum();
    if total != responses.len() {
        return Err(Error::dims("replicated responses", total, responses.len()));
    }
    let mut at = 0;
    Ok(reps.iter().map(move |&r| {
        if r == 0 {
            return Err(Error::Precondition(
                "replicate count must be positive".into(),
            ));
        }
        at += r;
        Ok(&responses[at - r..at])
    }))
}

/// Sample quantile with linear interpolation between order statistics.
pub(crate) fn quantile(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Box between the `p` and `1-p` quantiles of each coordinate.
pub fn quantile_box(states: &StateMatrix, p: f64) -> Result<DomainBox> {
    if !(0.0..0.5).contains(&p) {
        return Err(Error::Precondition(format!(
            "quantile level must lie in [0, 0.5), got {p}"
        )));
    }
    if states.is_empty() {
        return Err(Error::Precondition("no states to bound".into()));
    }
    let mut lower = Vec::with_capacity(states.cols());
    let mut upper = Vec::with_capacity(states.cols());
    for j in 0..states.cols() {
        let mut c = states.column(j);
        c.sort_by(f64::total_cmp);
        lower.push(quantile(&c, p));
        upper.push(quantile(&c, 1.0 - p));
    }
    DomainBox::new(lower, upper)
}

/// Quantile box of `X(k)` estimated from `n_pilot` forward paths started at `x0`.
pub fn pilot_bounding_box(
    model: &ModelSpec,
    k: usize,
    p: f64,
    n_pilot: usize,
    stream: &RandomStream,
) -> Result<DomainBox> {
    if k == 0 || k > model.steps() {
        return Err(Error::StepOutOfRange {
            step: k,
            max: model.steps(),
        });
    }
    let start = StateMatrix::repeat_row(&model.x0(), n_pilot);
    let paths = simulate_paths(model, &start, k, stream)?;
    quantile_box(&paths[k], p)
}

/// Space-filling candidate sites in `domain`, filtered by linear constraints and,
/// optionally, by positive payoff at step `k`. No top-up is done after filtering.
#[allow(clippy::too_many_arguments)]
pub fn spacefill_design(
    domain: &DomainBox,
    n: usize,
    method: SpaceFill,
    model: &ModelSpec,
    k: usize,
    itm_filter: bool,
    constraints: &[LinearConstraint],
    stream: &RandomStream,
) -> Result<StateMatrix> {
    let d = domain.dim();
    if d != model.dim {
        return Err(Error::dims("design box", model.dim, d));
    }
    for c in constraints {
        if c.coef.len() != d {
            return Err(Error::dims("constraint coefficients", d, c.coef.len()));
        }
    }
    let unit = match method {
        SpaceFill::Sobol => sobol(n, d)?,
        SpaceFill::Halton => halton(n, d)?,
        SpaceFill::Lhs => lhs(n, d, stream)?,
        SpaceFill::Lattice => lattice(n, d),
    };
    let mut sites = StateMatrix::zeros(0, d);
    for u in unit {
        let x = domain.scale(&u);
        if constraints.iter().all(|c| c.admits(&x))
            && (!itm_filter || model.reward_row(k, &x) > 0.0)
        {
            sites.push_row(&x);
        }
    }
    Ok(sites)
}

/// Full tensor grid on the unit cube with `round(n^(1/d))` points per axis.
fn lattice(n: usize, d: usize) -> Vec<Vec<f64>> {
    let m = ((n as f64).powf(1.0 / d as f64).round() as usize).max(1);
    let axis: Vec<f64> = if m == 1 {
        vec![0.5]
    } else {
        (0..m).map(|i| i as f64 / (m - 1) as f64).collect()
    };
    let mut out = vec![vec![]];
    for _ in 0..d {
        out = out
            .into_iter()
            .flat_map(|p: Vec<f64>| {
                axis.iter().map(move |&a| {
                    let mut q = p.clone();
                    q.push(a);
                    q
                })
            })
            .collect();
    }
    out
}
