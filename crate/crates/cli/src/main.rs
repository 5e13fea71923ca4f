use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use serde::Serialize;
use sha2::{Digest, Sha256};

use rmc_core::bench::{self, BenchOptions};
use rmc_core::config::Config;
use rmc_core::paths::{make_test_set, PathSet};
use rmc_core::policy::forward_eval;
use rmc_core::solvers::{solve, SolverConfig};
use rmc_core::store::StoredFit;
use rmc_core::swing::{solve_swing_fixed, swing_eval};
use rmc_core::RandomStream;

const DEFAULT_SEED: u64 = 1;

#[derive(Parser)]
#[command(
    name = "rmc",
    version,
    about = "Regression Monte Carlo for optimal stopping"
)]
struct Cli {
    /// Worker threads (results do not depend on this).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory.
    #[arg(long, global = true, env = "RMC_OUT_DIR", default_value = "rmc-out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit an exercise policy from a config file.
    Solve {
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Evaluate a fitted policy on a test set.
    Eval {
        fit: PathBuf,
        test_set: PathBuf,
        /// Number of swing rights to evaluate.
        #[arg(long)]
        rights: Option<usize>,
        /// Also write per-path payoffs and first exercise steps as CSV.
        #[arg(long)]
        per_path: bool,
    },
    /// Simulate and persist a test set for a benchmark instance or a config's model.
    Paths {
        /// Benchmark instance id (M1..M9).
        instance: Option<String>,
        /// Config file whose `[model]` is simulated instead.
        #[arg(long, conflicts_with = "instance")]
        config: Option<PathBuf>,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run the benchmark matrix and any configured budget sweeps.
    Bench {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Comma-separated instance ids.
        #[arg(long, value_delimiter = ',')]
        instances: Option<Vec<String>>,
        /// Comma-separated preset names.
        #[arg(long, value_delimiter = ',')]
        presets: Option<Vec<String>>,
        #[arg(long)]
        reps: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the test-set size of every instance.
        #[arg(long)]
        n: Option<usize>,
    },
}

#[derive(Serialize)]
struct RunManifest {
    command: String,
    config_digest: String,
    seed: Option<u64>,
    version: &'static str,
    wall_secs: f64,
    outputs: Vec<PathBuf>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

fn write_manifest(
    out: &Path,
    command: &str,
    digest: String,
    seed: Option<u64>,
    started: Instant,
    outputs: Vec<PathBuf>,
) -> Result<()> {
    let m = RunManifest {
        command: command.to_string(),
        config_digest: digest,
        seed,
        version: env!("CARGO_PKG_VERSION"),
        wall_secs: started.elapsed().as_secs_f64(),
        outputs,
    };
    let file = out.join(format!("{command}.manifest.json"));
    std::fs::write(&file, serde_json::to_string_pretty(&m)? + "\n")?;
    Ok(())
}

fn write(path: PathBuf, contents: impl AsRef<[u8]>) -> Result<PathBuf> {
    std::fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))?;
    Ok(path)
}

fn cmd_solve(out: &Path, config: &Path, seed: Option<u64>) -> Result<()> {
    let started = Instant::now();
    let text =
        std::fs::read_to_string(config).with_context(|| format!("reading {}", config.display()))?;
    let cfg = Config::from_toml_str(&text)?;
    let seed = seed.or(cfg.seed).unwrap_or(DEFAULT_SEED);
    let model = cfg.model()?;
    let solver = cfg.solver()?;
    let stream = RandomStream::new(seed);
    let (stored, diagnostics) = match cfg.swing_spec()? {
        Some(spec) => {
            let SolverConfig::Fixed { design, method, .. } = solver else {
                bail!("swing valuation needs a `fixed` solver");
            };
            let fit = solve_swing_fixed(&spec, design, method, &stream)?;
            let diag = fit.layer(1)?.diagnostics_csv();
            (StoredFit::Swing(fit), diag)
        }
        None => {
            let fit = solve(&model, solver, &stream)?;
            let diag = fit.diagnostics_csv();
            (StoredFit::Single(fit), diag)
        }
    };
    std::fs::create_dir_all(out)?;
    let outputs = vec![
        write(out.join("fit.json"), stored.to_json()?)?,
        write(out.join("diagnostics.csv"), diagnostics)?,
    ];
    if let StoredFit::Single(f) = &stored {
        if let Some(p) = f.in_sample_price {
            eprintln!("in-sample price {p:.4}");
        }
    }
    eprintln!("fit written to {}", outputs[0].display());
    write_manifest(
        out,
        "solve",
        sha256_hex(text.as_bytes()),
        Some(seed),
        started,
        outputs,
    )
}

#[derive(Serialize)]
struct EvalRecord {
    fit_digest: String,
    test_set: rmc_core::paths::PathSetHeader,
    rights: Option<usize>,
    #[serde(flatten)]
    result: rmc_core::EvalResult,
}

fn cmd_eval(
    out: &Path,
    fit_path: &Path,
    test_path: &Path,
    rights: Option<usize>,
    per_path: bool,
) -> Result<()> {
    let started = Instant::now();
    let fit_text = std::fs::read_to_string(fit_path)
        .with_context(|| format!("reading {}", fit_path.display()))?;
    let stored = StoredFit::from_json(&fit_text)
        .with_context(|| format!("loading {}", fit_path.display()))?;
    let test =
        PathSet::read(test_path).with_context(|| format!("loading {}", test_path.display()))?;
    let result = match (&stored, rights) {
        (StoredFit::Single(f), None | Some(1)) => forward_eval(&test, f)?,
        (StoredFit::Single(_), Some(i)) => {
            bail!("fit has no swing layers; cannot evaluate {i} rights")
        }
        (StoredFit::Swing(f), i) => swing_eval(&test, f, i.unwrap_or(f.n_rights()))?,
    };
    std::fs::create_dir_all(out)?;
    let mut outputs = Vec::new();
    if per_path {
        let mut csv = String::from("path,payoff,stop_step\n");
        if let (Some(p), Some(s)) = (&result.payoffs, &result.stop_steps) {
            for (i, (p, s)) in p.iter().zip(s).enumerate() {
                csv.push_str(&format!("{i},{p},{s}\n"));
            }
        }
        outputs.push(write(out.join("eval_paths.csv"), csv)?);
    }
    let record = EvalRecord {
        fit_digest: sha256_hex(fit_text.as_bytes()),
        test_set: test.header.clone(),
        rights,
        result: result.summary(),
    };
    let json = serde_json::to_string_pretty(&record)? + "\n";
    let digest = sha256_hex(json.as_bytes());
    outputs.insert(0, write(out.join("eval.json"), &json)?);
    println!(
        "price {:.4}  se {:.4}  ci95 [{:.4}, {:.4}]",
        result.price, result.std_error, result.ci95[0], result.ci95[1]
    );
    write_manifest(out, "eval", digest, None, started, outputs)
}

fn cmd_paths(
    out: &Path,
    instance: Option<&str>,
    config: Option<&Path>,
    n: Option<usize>,
    seed: Option<u64>,
) -> Result<()> {
    let started = Instant::now();
    let (id, model, default_n, default_seed, digest) = match (instance, config) {
        (Some(id), None) => {
            let inst = bench::instance(id)?;
            (
                inst.id.clone(),
                inst.model,
                inst.test_paths,
                inst.test_seed,
                sha256_hex(id.as_bytes()),
            )
        }
        (None, Some(path)) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading {}", path.display()))?;
            let cfg = Config::from_toml_str(&text)?;
            let stem = path
                .file_stem()
                .map_or("custom".into(), |s| s.to_string_lossy().into_owned());
            (
                stem,
                cfg.model()?,
                100_000,
                cfg.seed.unwrap_or(DEFAULT_SEED),
                sha256_hex(text.as_bytes()),
            )
        }
        _ => bail!("give an instance id or --config"),
    };
    let n = n.unwrap_or(default_n);
    let seed = seed.unwrap_or(default_seed);
    let ps = make_test_set(&model, &id, n, seed)?;
    std::fs::create_dir_all(out)?;
    let file = out.join(bench::test_set_file_name(&id, n, seed));
    ps.write(&file)?;
    eprintln!("{n} paths written to {}", file.display());
    write_manifest(out, "paths", digest, Some(seed), started, vec![file])
}

#[allow(clippy::too_many_arguments)]
fn cmd_bench(
    out: &Path,
    config: Option<&Path>,
    instances: Option<Vec<String>>,
    presets: Option<Vec<String>>,
    reps: Option<usize>,
    seed: Option<u64>,
    n: Option<usize>,
) -> Result<bool> {
    let started = Instant::now();
    let (cfg, text) = match config {
        Some(p) => {
            let text =
                std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            (Config::from_toml_str(&text)?, text)
        }
        None => (Config::default(), String::new()),
    };
    let mut section = cfg.bench.clone().unwrap_or(rmc_core::config::BenchSection {
        instances: None,
        presets: None,
        macro_reps: 1,
        test_paths: None,
        sweep: Vec::new(),
    });
    if instances.is_some() {
        section.instances = instances;
    }
    if presets.is_some() {
        section.presets = presets;
    }
    if let Some(r) = reps {
        section.macro_reps = r;
    }
    if n.is_some() {
        section.test_paths = n;
    }
    let seed = seed.or(cfg.seed).unwrap_or(DEFAULT_SEED);
    let opts = BenchOptions {
        macro_reps: section.macro_reps.max(1),
        seed,
        test_paths: section.test_paths,
        test_dir: Some(out.join("test-sets")),
    };
    let insts = section.instances()?;
    let presets = section.presets()?;
    std::fs::create_dir_all(out)?;
    let table = bench::run_benchmark(&insts, &presets, &opts);
    let mut ok = table.all_ok();
    for r in table.failures() {
        eprintln!(
            "{} / {}: {}",
            r.model,
            r.solver,
            r.error.as_deref().unwrap_or("")
        );
    }
    let mut outputs = vec![write(out.join("bench.csv"), table.to_csv())?];
    for sw in &section.sweep {
        let inst = bench::instance(&sw.instance)?;
        let preset = bench::preset(&sw.preset)?;
        let points = bench::shared_test_set(&inst, &opts)
            .and_then(|test| bench::run_sweep(&inst, &preset, &sw.budgets, &test, &opts));
        match points {
            Ok(points) => {
                let name = format!("sweep-{}-{}.csv", inst.id, preset.name);
                outputs.push(write(out.join(name), bench::sweep_csv(&points))?);
            }
            Err(e) => {
                eprintln!("sweep {} / {}: {e}", sw.instance, sw.preset);
                ok = false;
            }
        }
    }
    print!("{}", table.to_csv());
    let digest = sha256_hex(format!("{text}\n{}", serde_json::to_string(&section)?).as_bytes());
    write_manifest(out, "bench", digest, Some(seed), started, outputs)?;
    Ok(ok)
}

fn run(cli: Cli) -> Result<bool> {
    if let Some(t) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .context("configuring the thread pool")?;
    }
    match cli.command {
        Command::Solve { config, seed } => cmd_solve(&cli.out, &config, seed).map(|_| true),
        Command::Eval {
            fit,
            test_set,
            rights,
            per_path,
        } => cmd_eval(&cli.out, &fit, &test_set, rights, per_path).map(|_| true),
        Command::Paths {
            instance,
            config,
            n,
            seed,
        } => cmd_paths(&cli.out, instance.as_deref(), config.as_deref(), n, seed).map(|_| true),
        Command::Bench {
            config,
            instances,
            presets,
            reps,
            seed,
            n,
        } => cmd_bench(
            &cli.out,
            config.as_deref(),
            instances,
            presets,
            reps,
            seed,
            n,
        ),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
