//! `risfp`: run scenarios, single optimizations, estimation studies, the
//! grid oracle and per-iteration timing from a TOML configuration.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use serde_json::json;

use risfp::baselines::{grid_search_phases, PowerPolicy, Precoder};
use risfp::channel::draw_channels;
use risfp::config::{Csi, RunConfig};
use risfp::estimation::{estimate_channels, PilotPlan};
use risfp::experiments::{
    bench_per_iteration, estimation_study, run_scenario_with, trial_init, trial_rng, write_bench_csv,
    write_manifest, Stream,
};
use risfp::optimizer::{
    effective_user_channels, run_algorithm1, run_algorithm2, sinr_per_user, ConvergenceTrace, LinkBudget,
    OptimizerState,
};

/// Exit code when some trials failed or the run was interrupted.
const EXIT_PARTIAL: u8 = 3;

#[derive(Parser)]
#[command(name = "risfp", version, about = "RIS-aided downlink beamforming simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration (TOML).
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Output directory, created if missing.
    #[arg(long, value_name = "DIR", default_value = ".")]
    out: PathBuf,
    /// Overrides `system.rng_seed`.
    #[arg(long, value_name = "U64")]
    seed: Option<u64>,
    /// Only warnings and errors on stderr.
    #[arg(long)]
    quiet: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Monte-Carlo sweep: results.csv, trials.csv and manifest.json.
    RunScenario {
        #[command(flatten)]
        common: Common,
        /// Overrides `scenario.trials`.
        #[arg(long, value_name = "INT")]
        trials: Option<usize>,
        /// Fill the wall-time column.
        #[arg(long)]
        timing: bool,
    },
    /// One draw, one optimization: trace.csv and solution.json.
    RunOnce {
        #[command(flatten)]
        common: Common,
        /// Add a per-iteration wall-time column to trace.csv.
        #[arg(long)]
        timing: bool,
    },
    /// LS estimation error study: estimation.csv and estimation.json.
    Estimate {
        #[command(flatten)]
        common: Common,
        /// Overrides `scenario.trials`.
        #[arg(long, value_name = "INT")]
        trials: Option<usize>,
    },
    /// Exhaustive phase search on one draw: oracle.json.
    Oracle {
        #[command(flatten)]
        common: Common,
        /// Phase levels per element (defaults to `scenario.grid_levels`).
        #[arg(long, value_name = "INT")]
        levels: Option<usize>,
    },
    /// Per-iteration timing over `bench.ris_elements`: bench.csv.
    Bench {
        #[command(flatten)]
        common: Common,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let quiet = match &cli.command {
        Command::RunScenario { common, .. }
        | Command::RunOnce { common, .. }
        | Command::Estimate { common, .. }
        | Command::Oracle { common, .. }
        | Command::Bench { common } => common.quiet,
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(if quiet { "warn" } else { "info" }))
        .format_timestamp(None)
        .init();

    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(EXIT_PARTIAL),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn configure_threads() -> Result<()> {
    if let Ok(v) = std::env::var("RIS_FP_THREADS") {
        let n: usize = v
            .parse()
            .with_context(|| format!("RIS_FP_THREADS must be a positive integer, got {v:?}"))?;
        if n == 0 {
            bail!("RIS_FP_THREADS must be a positive integer, got 0");
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn load(common: &Common) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.system.rng_seed = seed;
    }
    fs::create_dir_all(&common.out)
        .with_context(|| format!("cannot create output directory {}", common.out.display()))?;
    Ok(cfg)
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    let path = dir.join(name);
    let f = File::create(&path).with_context(|| format!("cannot write {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn write_json(dir: &Path, name: &str, value: &serde_json::Value) -> Result<()> {
    let mut out = create(dir, name)?;
    serde_json::to_writer_pretty(&mut out, value)?;
    std::io::Write::write_all(&mut out, b"\n")?;
    Ok(())
}

fn provenance() -> String {
    let rev = std::process::Command::new("git")
        .args(["describe", "--always", "--dirty"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .map(|o| String::from_utf8_lossy(&o.stdout).trim().to_string())
        .unwrap_or_else(|| "unknown".into());
    format!("risfp {} ({rev})", env!("CARGO_PKG_VERSION"))
}

/// Returns Ok(false) on partial completion.
fn run(cli: Cli) -> Result<bool> {
    configure_threads()?;
    match cli.command {
        Command::RunScenario { common, trials, timing } => run_scenario(&common, trials, timing),
        Command::RunOnce { common, timing } => run_once(&common, timing).map(|_| true),
        Command::Estimate { common, trials } => estimate(&common, trials).map(|_| true),
        Command::Oracle { common, levels } => oracle(&common, levels).map(|_| true),
        Command::Bench { common } => bench(&common).map(|_| true),
    }
}

fn run_scenario(common: &Common, trials: Option<usize>, timing: bool) -> Result<bool> {
    let mut cfg = load(common)?;
    if let Some(t) = trials {
        cfg.scenario.trials = t;
    }
    let mut spec = cfg.scenario_spec();
    spec.record_timing = timing;
    spec.validate()?;

    let cancel = Arc::new(AtomicBool::new(false));
    {
        let cancel = Arc::clone(&cancel);
        ctrlc::set_handler(move || {
            cancel.store(true, Ordering::Relaxed);
        })?;
    }
    info!(
        "{} sweep values x {} trials x {} algorithms",
        spec.sweep.values.len(),
        spec.trials,
        spec.algorithms.len()
    );
    let table = run_scenario_with(&spec, &cancel)?;

    let out = &common.out;
    table.write_csv(create(out, "results.csv")?)?;
    table.write_trials_csv(create(out, "trials.csv")?)?;
    write_manifest(create(out, "manifest.json")?, &spec, &table, &provenance())?;
    if !table.failures.is_empty() {
        table.write_failures_csv(create(out, "failures.csv")?)?;
        warn!("{} trial runs failed; see failures.csv", table.failures.len());
    }
    if table.cancelled {
        warn!("interrupted; results cover completed trials only");
    }
    for row in &table.rows {
        info!(
            "{} = {}: {} mean {:.6} nats (se {:.2e}, n = {})",
            format!("{:?}", spec.sweep.variable).to_lowercase(),
            row.sweep_value,
            row.algorithm.name(),
            row.mean,
            row.std_error,
            row.n_ok
        );
    }
    Ok(table.is_complete())
}

fn complex_pairs(m: &risfp::CMat) -> Vec<Vec<[f64; 2]>> {
    (0..m.nrows())
        .map(|r| (0..m.ncols()).map(|c| [m[(r, c)].re, m[(r, c)].im]).collect())
        .collect()
}

fn solution_json(
    state: &OptimizerState,
    trace: &ConvergenceTrace,
    sinr: &[f64],
    seed: u64,
    csi: Csi,
) -> serde_json::Value {
    let rates: Vec<f64> = sinr.iter().map(|g| g.ln_1p()).collect();
    json!({
        "seed": seed,
        "csi": csi,
        "iterations": trace.iterations(),
        "terminated_by": trace.terminated_by,
        "w": complex_pairs(&state.w),
        "phases_rad": state.phi.iter().map(|p| p.arg()).collect::<Vec<_>>(),
        "sinr": sinr,
        "rates_nats": rates,
        "sum_rate_nats": rates.iter().sum::<f64>(),
        "designed_sum_rate_nats": trace.final_rate(),
    })
}

fn run_once(common: &Common, timing: bool) -> Result<()> {
    let cfg = load(common)?;
    let seed = cfg.seed();
    let system = &cfg.system;
    let budget = LinkBudget {
        transmit_power: system.transmit_power,
        noise_power: system.noise_power,
    };
    let settings = cfg.optimizer.settings();
    let init = trial_init(cfg.optimizer.init, seed, 0);
    let channels = draw_channels(system, &mut trial_rng(seed, 0, Stream::Channel))?;

    let (state, trace, sinr) = match cfg.optimizer.csi {
        Csi::Perfect => {
            let (state, trace) = run_algorithm1(&channels.cascaded, budget, &init, &settings)?;
            let h = effective_user_channels(&channels.cascaded, &state.phi)?;
            let sinr = sinr_per_user(&state.w, &h, budget.noise_power);
            (state, trace, sinr)
        }
        Csi::Estimated => {
            let est = &cfg.estimation;
            let n = system.num_ris_elements;
            let plan = PilotPlan::dft_with(
                n,
                est.pilot_length.unwrap_or(n),
                est.pilot_power,
                est.noise_power,
                est.symbols,
                &mut trial_rng(seed, 0, Stream::PilotSymbols),
            )?;
            let estimate = estimate_channels(&channels.cascaded, &plan, &mut trial_rng(seed, 0, Stream::PilotNoise))?;
            let outcome = run_algorithm2(&estimate.h_hat, &channels.cascaded, budget, &init, &settings)?;
            (outcome.state, outcome.trace, outcome.realized_sinr)
        }
    };

    trace.write_csv(create(&common.out, "trace.csv")?, timing)?;
    write_json(
        &common.out,
        "solution.json",
        &solution_json(&state, &trace, &sinr, seed, cfg.optimizer.csi),
    )?;
    info!(
        "{} iterations ({:?}), sum rate {:.6} nats",
        trace.iterations(),
        trace.terminated_by,
        sinr.iter().map(|g| g.ln_1p()).sum::<f64>()
    );
    Ok(())
}

fn estimate(common: &Common, trials: Option<usize>) -> Result<()> {
    let cfg = load(common)?;
    let trials = trials.unwrap_or(cfg.scenario.trials);
    let study = estimation_study(&cfg.system, &cfg.estimation, trials, cfg.seed())?;
    study.write_csv(create(&common.out, "estimation.csv")?)?;
    write_json(&common.out, "estimation.json", &serde_json::to_value(&study)?)?;
    info!(
        "mean squared error {:.6e} (se {:.2e}), analytic {:.6e}",
        study.mean_sq_error, study.std_error, study.expected_sq_error
    );
    Ok(())
}

fn oracle(common: &Common, levels: Option<usize>) -> Result<()> {
    let cfg = load(common)?;
    let seed = cfg.seed();
    let levels = levels.unwrap_or(cfg.scenario.grid_levels);
    let system = &cfg.system;
    let budget = LinkBudget {
        transmit_power: system.transmit_power,
        noise_power: system.noise_power,
    };
    let channels = draw_channels(system, &mut trial_rng(seed, 0, Stream::Channel))?;
    let grid = grid_search_phases(&channels.cascaded, Precoder::Mmse, PowerPolicy::FullPower, levels, budget)?;
    let init = trial_init(cfg.optimizer.init, seed, 0);
    let (_, trace) = run_algorithm1(&channels.cascaded, budget, &init, &cfg.optimizer.settings())?;
    write_json(
        &common.out,
        "oracle.json",
        &json!({
            "seed": seed,
            "levels": levels,
            "precoder": "mmse",
            "phase_indices": grid.indices,
            "phases_rad": grid.phi.iter().map(|p| p.arg()).collect::<Vec<_>>(),
            "oracle_sum_rate_nats": grid.rate,
            "fp_sum_rate_nats": trace.final_rate(),
        }),
    )?;
    info!("oracle {:.6} nats, FP {:.6} nats", grid.rate, trace.final_rate());
    Ok(())
}

fn bench(common: &Common) -> Result<()> {
    let cfg = load(common)?;
    let rows = bench_per_iteration(
        &cfg.system,
        &cfg.optimizer.settings(),
        &cfg.bench.ris_elements,
        cfg.bench.min_iterations,
        cfg.seed(),
    )?;
    write_bench_csv(create(&common.out, "bench.csv")?, &rows)?;
    for pair in rows.windows(2) {
        info!(
            "N {} -> {}: per-iteration time ratio {:.3}",
            pair[0].num_ris_elements,
            pair[1].num_ris_elements,
            pair[1].per_iteration_s / pair[0].per_iteration_s
        );
    }
    Ok(())
}
