//! Benchmark instances, solver presets and the benchmark runner.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Dynamics, ModelSpec, Param, PayoffKind, SvParams, Volatility};
use crate::paths::{make_test_set, PathSet};
use crate::policy::{forward_eval, mean_se};
use crate::sampling::RandomStream;
use crate::solvers::{solve, Budget, SolverConfig};
use crate::swing::SwingSpec;

/// A benchmark problem with its shared test-set settings and reference price.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchInstance {
    pub id: String,
    pub model: ModelSpec,
    pub test_paths: usize,
    pub test_seed: u64,
    /// Median of the published prices across solvers.
    pub reference: f64,
    /// Half-width of the accepted band around `reference`.
    pub band: f64,
}

impl BenchInstance {
    pub fn band_range(&self) -> (f64, f64) {
        (self.reference - self.band, self.reference + self.band)
    }
}

pub const INSTANCE_IDS: [&str; 9] = ["M1", "M2", "M3", "M4", "M5", "M6", "M7", "M8", "M9"];

#[allow(clippy::too_many_arguments)]
fn gbm(
    dim: usize,
    strike: f64,
    x0: Param,
    sigma: Volatility,
    r: f64,
    div: f64,
    maturity: f64,
    dt: f64,
) -> ModelSpec {
    ModelSpec {
        dim,
        maturity,
        dt,
        r,
        div: Param::Scalar(div),
        sigma,
        rho: None,
        x0,
        strike,
        payoff: PayoffKind::Put,
        dynamics: Dynamics::Gbm,
        sv: None,
        extra: BTreeMap::new(),
    }
}

fn band_for(price: f64) -> f64 {
    if price <= 5.0 {
        0.05
    } else {
        0.15
    }
}

/// Look up a benchmark instance by id (`M1` to `M9`).
pub fn instance(id: &str) -> Result<BenchInstance> {
    let rep = |v: f64, d: usize| vec![v; d];
    let (model, test_paths, reference) = match id {
        "M1" => (
            gbm(
                1,
                40.0,
                Param::Scalar(40.0),
                Volatility::Scalar(0.2),
                0.06,
                0.0,
                1.0,
                0.04,
            ),
            100_000,
            2.30,
        ),
        "M2" => (
            gbm(
                1,
                40.0,
                Param::Scalar(44.0),
                Volatility::Scalar(0.2),
                0.06,
                0.0,
                1.0,
                0.04,
            ),
            100_000,
            1.09,
        ),
        "M3" => (
            gbm(
                2,
                40.0,
                Param::Vector(rep(40.0, 2)),
                Volatility::Vector(rep(0.2, 2)),
                0.06,
                0.0,
                1.0,
                0.04,
            ),
            40_000,
            1.44,
        ),
        "M4" => {
            let mut m = gbm(
                2,
                100.0,
                Param::Vector(rep(110.0, 2)),
                Volatility::Vector(rep(0.2, 2)),
                0.05,
                0.1,
                3.0,
                1.0 / 3.0,
            );
            m.payoff = PayoffKind::MaxiCall;
            (m, 100_000, 21.34)
        }
        "M5" => {
            let mut m = gbm(
                2,
                100.0,
                Param::Vector(vec![90.0, 0.35f64.ln()]),
                Volatility::Scalar(1.0),
                0.0225,
                0.0,
                50.0 / 252.0,
                1.0 / 252.0,
            );
            m.payoff = PayoffKind::SvPut;
            m.dynamics = Dynamics::ExpouSv;
            m.sv = Some(SvParams {
                alpha: 0.015,
                mean: 2.95,
                vol: 3.0,
                eps_y: 1.0,
                rho: -0.03,
                euler_dt: 1.0 / 2520.0,
            });
            (m, 40_000, 16.37)
        }
        "M6" => {
            let mut m = gbm(
                3,
                100.0,
                Param::Vector(rep(90.0, 3)),
                Volatility::Vector(rep(0.2, 3)),
                0.05,
                0.1,
                3.0,
                1.0 / 3.0,
            );
            m.payoff = PayoffKind::MaxiCall;
            (m, 100_000, 11.08)
        }
        "M7" => {
            let mut m = gbm(
                5,
                100.0,
                Param::Vector(rep(100.0, 5)),
                Volatility::Vector(rep(0.2, 5)),
                0.05,
                0.1,
                3.0,
                1.0 / 3.0,
            );
            m.payoff = PayoffKind::MaxiCall;
            (m, 100_000, 25.32)
        }
        "M8" => {
            let mut m = gbm(
                5,
                100.0,
                Param::Vector(rep(70.0, 5)),
                Volatility::Vector(vec![0.08, 0.16, 0.24, 0.32, 0.4]),
                0.05,
                0.1,
                3.0,
                1.0 / 3.0,
            );
            m.payoff = PayoffKind::MaxiCall;
            (m, 100_000, 11.63)
        }
        "M9" => {
            let mut m = gbm(
                5,
                100.0,
                Param::Vector(rep(100.0, 5)),
                Volatility::Scalar(0.2),
                0.05,
                0.0,
                3.0,
                3.0 / 20.0,
            );
            m.rho = Some(0.2);
            m.dynamics = Dynamics::GbmCor;
            (m, 100_000, 4.11)
        }
        other => {
            return Err(Error::config(
                "instance",
                format!("unknown benchmark instance `{other}` (expected M1..M9)"),
            ))
        }
    };
    let index = INSTANCE_IDS
        .iter()
        .position(|&s| s == id)
        .expect("known id") as u64;
    Ok(BenchInstance {
        id: id.to_string(),
        model,
        test_paths,
        test_seed: 20_000 + index,
        reference,
        band: band_for(reference),
    })
}

/// The swing put used as the multiple-exercise benchmark: 1D GBM, `T = 1`,
/// `x0 = K = 100`, `r = 0.05`, `sigma = 0.3`, 50 exercise dates, refraction 0.1.
pub fn swing_put(n_swing: usize) -> SwingSpec {
    let model = gbm(
        1,
        100.0,
        Param::Scalar(100.0),
        Volatility::Scalar(0.3),
        0.05,
        0.0,
        1.0,
        0.02,
    );
    SwingSpec {
        model,
        n_swing,
        refract: 0.1,
    }
}

/// A solver configuration chosen by problem dimension.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Preset {
    pub name: String,
    #[serde(default)]
    pub description: String,
    #[serde(rename = "tier")]
    pub tiers: Vec<PresetTier>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PresetTier {
    pub max_dim: usize,
    pub solver: SolverConfig,
}

impl Preset {
    pub fn for_dim(&self, dim: usize) -> Result<&SolverConfig> {
        self.tiers
            .iter()
            .find(|t| dim <= t.max_dim)
            .map(|t| &t.solver)
            .ok_or_else(|| {
                Error::config(
                    "preset",
                    format!("{} has no tier for dimension {dim}", self.name),
                )
            })
    }
}

#[derive(Deserialize)]
struct PresetFile {
    preset: Vec<Preset>,
}

/// The built-in solver presets.
pub fn presets() -> Vec<Preset> {
    let file: PresetFile =
        toml::from_str(include_str!("presets.toml")).expect("built-in presets parse");
    file.preset
}

pub fn preset(name: &str) -> Result<Preset> {
    presets()
        .into_iter()
        .find(|p| p.name.eq_ignore_ascii_case(name))
        .ok_or_else(|| Error::config("preset", format!("unknown preset `{name}`")))
}

/// Replace the budget knob of a solver configuration (paths, design size,
/// final sequential size or total simulations).
pub fn with_budget(cfg: &SolverConfig, budget: usize) -> SolverConfig {
    let mut cfg = cfg.clone();
    match &mut cfg {
        SolverConfig::Ls { n, .. }
        | SolverConfig::Tvr { n, .. }
        | SolverConfig::PiecewiseBw { n, .. } => *n = budget,
        SolverConfig::Fixed { design, .. } => design.source.n = Budget::All(budget),
        SolverConfig::Seq { spec, .. } => spec.final_size = budget,
        SolverConfig::SeqBatch { spec, .. } => spec.total_budget = budget,
    }
    cfg
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BenchOptions {
    pub macro_reps: usize,
    pub seed: u64,
    /// Overrides each instance's test-set size.
    #[serde(default)]
    pub test_paths: Option<usize>,
    /// Directory where shared test sets are cached.
    #[serde(default)]
    pub test_dir: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub model: String,
    pub solver: String,
    pub price: Option<f64>,
    pub se: Option<f64>,
    pub across_run_sd: Option<f64>,
    pub time_secs: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BenchTable {
    pub rows: Vec<BenchRow>,
}

fn opt(v: Option<f64>, digits: usize) -> String {
    v.map_or(String::new(), |v| format!("{v:.digits$}"))
}

impl BenchTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("model,solver,price,se,across_run_sd,time_secs\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.model,
                r.solver,
                opt(r.price, 6),
                opt(r.se, 6),
                opt(r.across_run_sd, 6),
                opt(r.time_secs, 3)
            ));
        }
        out
    }

    pub fn failures(&self) -> impl Iterator<Item = &BenchRow> {
        self.rows.iter().filter(|r| r.error.is_some())
    }

    pub fn all_ok(&self) -> bool {
        self.failures().next().is_none()
    }
}

/// The instance's shared test set, read from `opts.test_dir` when cached there.
pub fn shared_test_set(inst: &BenchInstance, opts: &BenchOptions) -> Result<PathSet> {
    let n = opts.test_paths.unwrap_or(inst.test_paths);
    let Some(dir) = &opts.test_dir else {
        return make_test_set(&inst.model, &inst.id, n, inst.test_seed);
    };
    let file = dir.join(test_set_file_name(&inst.id, n, inst.test_seed));
    if file.exists() {
        let ps = PathSet::read(&file)?;
        if ps.header.instance == inst.id && ps.n_paths() == n && ps.header.seed == inst.test_seed {
            return Ok(ps);
        }
    }
    let ps = make_test_set(&inst.model, &inst.id, n, inst.test_seed)?;
    std::fs::create_dir_all(dir)?;
    ps.write(&file)?;
    Ok(ps)
}

pub fn test_set_file_name(id: &str, n: usize, seed: u64) -> String {
    format!("{id}-n{n}-s{seed}.paths")
}

/// Result of one solver run on a test set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunOutcome {
    pub price: f64,
    pub se: f64,
    pub secs: f64,
}

/// Solve once and evaluate on `test`.
pub fn run_once(
    model: &ModelSpec,
    cfg: &SolverConfig,
    test: &PathSet,
    stream: &RandomStream,
) -> Result<RunOutcome> {
    let t0 = Instant::now();
    let fit = solve(model, cfg, stream)?;
    let secs = t0.elapsed().as_secs_f64();
    let res = forward_eval(test, &fit)?;
    Ok(RunOutcome {
        price: res.price,
        se: res.std_error,
        secs,
    })
}

fn cell_stream(seed: u64, inst: &str, preset: &str, rep: usize) -> RandomStream {
    RandomStream::new(seed).child(&format!("bench/{inst}/{preset}"), rep as u64)
}

fn run_cell(
    inst: &BenchInstance,
    preset: &Preset,
    test: &PathSet,
    opts: &BenchOptions,
) -> Result<BenchRow> {
    let cfg = preset.for_dim(inst.model.dim)?;
    let reps = opts.macro_reps.max(1);
    let mut runs = Vec::with_capacity(reps);
    for rep in 0..reps {
        runs.push(run_once(
            &inst.model,
            cfg,
            test,
            &cell_stream(opts.seed, &inst.id, &preset.name, rep),
        )?);
    }
    let prices: Vec<f64> = runs.iter().map(|r| r.price).collect();
    let (price, se_of_mean) = mean_se(&prices);
    let across = (reps > 1).then(|| se_of_mean * (reps as f64).sqrt());
    Ok(BenchRow {
        model: inst.id.clone(),
        solver: preset.name.clone(),
        price: Some(price),
        se: Some(runs.iter().map(|r| r.se).sum::<f64>() / reps as f64),
        across_run_sd: across,
        time_secs: Some(runs.iter().map(|r| r.secs).sum::<f64>() / reps as f64),
        error: None,
    })
}

/// Run every (instance, preset) cell. Failed cells are recorded with their
/// error message and the rest of the table is still produced.
///
/// `price` is the average over macro-replications, `se` the average test-set
/// standard error and `across_run_sd` the spread of prices across runs.
pub fn run_benchmark(
    instances: &[BenchInstance],
    presets: &[Preset],
    opts: &BenchOptions,
) -> BenchTable {
    let mut table = BenchTable::default();
    for inst in instances {
        let test = shared_test_set(inst, opts);
        for p in presets {
            let row = test
                .as_ref()
                .map_err(|e| Error::Precondition(format!("test set: {e}")))
                .and_then(|t| run_cell(inst, p, t, opts));
            table.rows.push(row.unwrap_or_else(|e| BenchRow {
                model: inst.id.clone(),
                solver: p.name.clone(),
                price: None,
                se: None,
                across_run_sd: None,
                time_secs: None,
                error: Some(e.to_string()),
            }));
        }
    }
    table
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub budget: usize,
    pub rep: usize,
    pub price: f64,
    pub se: f64,
    pub time_secs: f64,
}

/// Price against solver budget for one cell, `reps` runs per budget.
pub fn run_sweep(
    inst: &BenchInstance,
    preset: &Preset,
    budgets: &[usize],
    test: &PathSet,
    opts: &BenchOptions,
) -> Result<Vec<SweepPoint>> {
    let base = preset.for_dim(inst.model.dim)?;
    let mut out = Vec::new();
    for &b in budgets {
        let cfg = with_budget(base, b);
        for rep in 0..opts.macro_reps.max(1) {
            let stream = cell_stream(opts.seed, &inst.id, &format!("{}@{b}", preset.name), rep);
            let r = run_once(&inst.model, &cfg, test, &stream)?;
            out.push(SweepPoint {
                budget: b,
                rep,
                price: r.price,
                se: r.se,
                time_secs: r.secs,
            });
        }
    }
    Ok(out)
}

pub fn sweep_csv(points: &[SweepPoint]) -> String {
    let mut out = String::from("budget,rep,price,se,time_secs\n");
    for p in points {
        out.push_str(&format!(
            "{},{},{:.6},{:.6},{:.3}\n",
            p.budget, p.rep, p.price, p.se, p.time_secs
        ));
    }
    out
}

/// Path of a cached test set inside `dir`.
pub fn test_set_path(dir: &Path, inst: &BenchInstance, n: usize) -> PathBuf {
    dir.join(test_set_file_name(&inst.id, n, inst.test_seed))
}
