//! Seeded Monte-Carlo scenarios.
//!
//! Every trial draws from its own ChaCha8 stream, indexed by trial number and
//! purpose, so trial `t` sees the same channel at every sweep value and for
//! every algorithm. Trials run in parallel; aggregation happens afterwards in
//! a fixed order, so the table does not depend on scheduling.

use std::io::Write;
use std::sync::atomic::{AtomicBool, Ordering};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{self, BaselineScheme, Precoder, PowerPolicy, Reflector};
use crate::channel::{draw_channels, RicianFactor, SystemConfig};
use crate::estimation::{estimate_channels, PilotPlan, PilotSymbols};
use crate::optimizer::{run_algorithm1, run_algorithm2, FpSettings, Init, LinkBudget};
use crate::{Error, Result};

pub const DEFAULT_TRIALS: usize = 200;
pub const DEFAULT_GRID_LEVELS: usize = 16;
/// Uplink pilot amplitude factor `P_k` (linear).
pub const DEFAULT_PILOT_POWER: f64 = 7.0;
/// Uplink receiver noise power (linear watts).
pub const DEFAULT_PILOT_NOISE_POWER: f64 = 1e-12;

/// Random-stream purposes within one trial.
#[derive(Debug, Clone, Copy)]
#[repr(u64)]
pub enum Stream {
    Channel = 0,
    PilotNoise = 1,
    Init = 2,
    Baseline = 3,
    PilotSymbols = 4,
}

/// RNG for one (trial, purpose) pair.
pub fn trial_rng(seed: u64, trial: usize, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial as u64 * 8 + stream as u64);
    rng
}

/// Starting point for one trial; random starts draw from the trial's init stream.
pub fn trial_init(kind: InitKind, seed: u64, trial: usize) -> Init {
    match kind {
        InitKind::MatchedFilter => Init::MatchedFilter,
        InitKind::Random => Init::Random {
            seed: rand::Rng::random(&mut trial_rng(seed, trial, Stream::Init)),
        },
    }
}

/// `((Upsilon - L) / Upsilon) * rate`.
pub fn effective_sum_rate(rate: f64, pilot_length: usize, time_slot: usize) -> Result<f64> {
    if time_slot == 0 {
        return Err(Error::Domain("time slot length must be positive".into()));
    }
    if pilot_length > time_slot {
        return Err(Error::Domain(format!(
            "pilot length {pilot_length} exceeds time slot {time_slot}"
        )));
    }
    Ok((time_slot - pilot_length) as f64 / time_slot as f64 * rate)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepVariable {
    NumRisElements,
    NumUsers,
    /// Sets the BS-RIS and RIS-user factors together.
    RicianFactor,
    TransmitPower,
    PilotLength,
    /// RIS x-coordinate, `ris_position = (D1, 0)`.
    RisDistance,
    TimeSlot,
}

impl SweepVariable {
    fn integral(self) -> bool {
        matches!(
            self,
            SweepVariable::NumRisElements
                | SweepVariable::NumUsers
                | SweepVariable::PilotLength
                | SweepVariable::TimeSlot
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sweep {
    pub variable: SweepVariable,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    FpPerfect,
    FpEstimated,
    ZfRandomPhase,
    MmseRandomPhase,
    GridOracle,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::FpPerfect => "fp_perfect",
            Algorithm::FpEstimated => "fp_estimated",
            Algorithm::ZfRandomPhase => "zf_random_phase",
            Algorithm::MmseRandomPhase => "mmse_random_phase",
            Algorithm::GridOracle => "grid_oracle",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitKind {
    #[default]
    MatchedFilter,
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EstimationSettings {
    /// Defaults to the number of RIS elements.
    pub pilot_length: Option<usize>,
    #[serde(deserialize_with = "crate::units::de_level")]
    pub pilot_power: f64,
    #[serde(deserialize_with = "crate::units::de_level")]
    pub noise_power: f64,
    pub symbols: PilotSymbols,
    /// Coherence slot length; when set, estimated-CSI rates are discounted
    /// by the pilot overhead.
    pub time_slot: Option<usize>,
}

impl Default for EstimationSettings {
    fn default() -> Self {
        Self {
            pilot_length: None,
            pilot_power: DEFAULT_PILOT_POWER,
            noise_power: DEFAULT_PILOT_NOISE_POWER,
            symbols: PilotSymbols::Ones,
            time_slot: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub system: SystemConfig,
    pub optimizer: FpSettings,
    pub init: InitKind,
    pub estimation: EstimationSettings,
    pub sweep: Sweep,
    pub trials: usize,
    pub algorithms: Vec<Algorithm>,
    pub grid_levels: usize,
    pub random_phase_draws: usize,
    pub seed: u64,
    /// Wall-clock columns are left empty when false, keeping output reproducible.
    pub record_timing: bool,
}

impl ScenarioSpec {
    /// A single-point scenario at the system's own dimensions.
    pub fn new(system: SystemConfig, algorithms: Vec<Algorithm>) -> Self {
        let n = system.num_ris_elements as f64;
        Self {
            system,
            optimizer: FpSettings::default(),
            init: InitKind::default(),
            estimation: EstimationSettings::default(),
            sweep: Sweep {
                variable: SweepVariable::NumRisElements,
                values: vec![n],
            },
            trials: DEFAULT_TRIALS,
            algorithms,
            grid_levels: DEFAULT_GRID_LEVELS,
            random_phase_draws: baselines::DEFAULT_RANDOM_DRAWS,
            seed: 0,
            record_timing: false,
        }
    }

    pub fn with_sweep(mut self, variable: SweepVariable, values: Vec<f64>) -> Self {
        self.sweep = Sweep { variable, values };
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::config("trials", "must be at least 1"));
        }
        if self.algorithms.is_empty() {
            return Err(Error::config("algorithms", "must list at least one algorithm"));
        }
        if self.random_phase_draws == 0 {
            return Err(Error::config("random_phase_draws", "must be at least 1"));
        }
        let values = &self.sweep.values;
        if values.is_empty() {
            return Err(Error::config("sweep.values", "must not be empty"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::config("sweep.values", "must be finite"));
        }
        let up = values.windows(2).all(|w| w[1] > w[0]);
        let down = values.windows(2).all(|w| w[1] < w[0]);
        if !(up || down) {
            return Err(Error::config("sweep.values", "must be strictly monotone"));
        }
        if self.sweep.variable.integral() && values.iter().any(|v| *v < 1.0 || v.fract() != 0.0) {
            return Err(Error::config("sweep.values", "must be positive integers for this variable"));
        }
        self.optimizer.validate()?;
        for v in values {
            let point = self.point(*v)?;
            point.system.validate()?;
            if self.algorithms.contains(&Algorithm::FpEstimated) || point.time_slot.is_some() {
                let n = point.system.num_ris_elements;
                if point.pilot_length < n {
                    return Err(Error::config(
                        "estimation.pilot_length",
                        format!("{} is shorter than the {n} RIS elements", point.pilot_length),
                    ));
                }
                if let Some(slot) = point.time_slot {
                    if point.pilot_length > slot {
                        return Err(Error::config(
                            "estimation.time_slot",
                            format!("{slot} is shorter than the pilot length {}", point.pilot_length),
                        ));
                    }
                }
            }
        }
        Ok(())
    }

    /// Resolves the configuration at one sweep value.
    pub fn point(&self, value: f64) -> Result<Point> {
        let mut system = self.system.clone();
        let mut pilot_length = self.estimation.pilot_length;
        let mut time_slot = self.estimation.time_slot;
        match self.sweep.variable {
            SweepVariable::NumRisElements => system.num_ris_elements = value as usize,
            SweepVariable::NumUsers => {
                system.num_users = value as usize;
                if system.user_positions.is_some() {
                    return Err(Error::config(
                        "system.user_positions",
                        "cannot be fixed while sweeping the number of users",
                    ));
                }
            }
            SweepVariable::RicianFactor => {
                system.rician_factor_g = value;
                system.rician_factor_h = RicianFactor::Shared(value);
            }
            SweepVariable::TransmitPower => system.transmit_power = value,
            SweepVariable::PilotLength => pilot_length = Some(value as usize),
            SweepVariable::RisDistance => system.ris_position = [value, 0.0],
            SweepVariable::TimeSlot => time_slot = Some(value as usize),
        }
        let pilot_length = pilot_length.unwrap_or(system.num_ris_elements);
        Ok(Point {
            system,
            pilot_length,
            time_slot,
        })
    }
}

/// A fully resolved sweep point.
#[derive(Debug, Clone)]
pub struct Point {
    pub system: SystemConfig,
    pub pilot_length: usize,
    pub time_slot: Option<usize>,
}

/// One algorithm's outcome on one trial.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialRecord {
    pub sweep_value: f64,
    pub trial: usize,
    pub algorithm: Algorithm,
    /// Sum rate in nats, discounted by pilot overhead when a time slot is set.
    pub metric: f64,
    pub sum_rate: f64,
    pub iterations: Option<usize>,
    pub wall_time_s: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialFailure {
    pub sweep_value: f64,
    pub trial: usize,
    pub algorithm: Algorithm,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResultRow {
    pub sweep_value: f64,
    pub algorithm: Algorithm,
    pub mean: f64,
    pub std_error: f64,
    pub mean_iterations: Option<f64>,
    pub mean_wall_time_s: Option<f64>,
    pub min: f64,
    pub max: f64,
    pub n_ok: usize,
    pub n_failed: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ResultTable {
    pub sweep_variable: Option<SweepVariable>,
    pub rows: Vec<ResultRow>,
    pub records: Vec<TrialRecord>,
    pub failures: Vec<TrialFailure>,
    /// Set when the run stopped early; rows cover completed trials only.
    pub cancelled: bool,
}

fn mean_of(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation over `sqrt(n)`; NaN below two samples.
pub fn standard_error(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return f64::NAN;
    }
    let m = mean_of(xs);
    let var = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1) as f64;
    (var / n as f64).sqrt()
}

impl ResultTable {
    pub fn row(&self, sweep_value: f64, algorithm: Algorithm) -> Option<&ResultRow> {
        self.rows
            .iter()
            .find(|r| r.sweep_value == sweep_value && r.algorithm == algorithm)
    }

    /// Per-trial metrics for one cell, in trial order.
    pub fn metrics(&self, sweep_value: f64, algorithm: Algorithm) -> Vec<f64> {
        self.records
            .iter()
            .filter(|r| r.sweep_value == sweep_value && r.algorithm == algorithm)
            .map(|r| r.metric)
            .collect()
    }

    pub fn is_complete(&self) -> bool {
        self.failures.is_empty() && !self.cancelled
    }

    /// Columns: sweep_value, algorithm, mean, std_error, mean_iterations,
    /// mean_wall_time_s, min, max, n_ok, n_failed.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut wtr = crate::csv_writer(out);
        for row in &self.rows {
            wtr.serialize(row)?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn write_trials_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut wtr = crate::csv_writer(out);
        for rec in &self.records {
            wtr.serialize(rec)?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn write_failures_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut wtr = crate::csv_writer(out);
        wtr.write_record(["sweep_value", "trial", "algorithm", "message"])?;
        for f in &self.failures {
            wtr.write_record([
                f.sweep_value.to_string(),
                f.trial.to_string(),
                f.algorithm.name().to_string(),
                f.message.clone(),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Run manifest written next to the CSV.
#[derive(Debug, Clone, Serialize)]
pub struct Manifest<'a> {
    pub provenance: &'a str,
    pub seed: u64,
    pub spec: &'a ScenarioSpec,
    pub rows: usize,
    pub failures: usize,
    pub cancelled: bool,
}

pub fn write_manifest<W: Write>(out: W, spec: &ScenarioSpec, table: &ResultTable, provenance: &str) -> Result<()> {
    let manifest = Manifest {
        provenance,
        seed: spec.seed,
        spec,
        rows: table.rows.len(),
        failures: table.failures.len(),
        cancelled: table.cancelled,
    };
    serde_json::to_writer_pretty(out, &manifest)?;
    Ok(())
}

fn budget(system: &SystemConfig) -> LinkBudget {
    LinkBudget {
        transmit_power: system.transmit_power,
        noise_power: system.noise_power,
    }
}

struct Timer(Option<Instant>);

impl Timer {
    fn start(on: bool) -> Self {
        Timer(on.then(Instant::now))
    }
    fn stop(&self) -> Option<f64> {
        self.0.map(|t| t.elapsed().as_secs_f64())
    }
}

/// Runs one algorithm on one trial. Returns (metric, sum rate, iterations, time).
fn run_one(
    spec: &ScenarioSpec,
    point: &Point,
    trial: usize,
    algorithm: Algorithm,
    cascaded: &[crate::CMat],
) -> Result<(f64, f64, Option<usize>, Option<f64>)> {
    let b = budget(&point.system);
    let init = trial_init(spec.init, spec.seed, trial);
    let discount = |rate: f64| match point.time_slot {
        Some(slot) => effective_sum_rate(rate, point.pilot_length, slot),
        None => Ok(rate),
    };
    let timer = Timer::start(spec.record_timing);
    let out = match algorithm {
        Algorithm::FpPerfect => {
            let (_, trace) = run_algorithm1(cascaded, b, &init, &spec.optimizer)?;
            let rate = trace.final_rate();
            (rate, rate, Some(trace.iterations()), timer.stop())
        }
        Algorithm::FpEstimated => {
            let est = &spec.estimation;
            let n = point.system.num_ris_elements;
            let plan = PilotPlan::dft_with(
                n,
                point.pilot_length,
                est.pilot_power,
                est.noise_power,
                est.symbols,
                &mut trial_rng(spec.seed, trial, Stream::PilotSymbols),
            )?;
            let estimate =
                estimate_channels(cascaded, &plan, &mut trial_rng(spec.seed, trial, Stream::PilotNoise))?;
            let outcome = run_algorithm2(&estimate.h_hat, cascaded, b, &init, &spec.optimizer)?;
            let rate = outcome.realized_sum_rate;
            (discount(rate)?, rate, Some(outcome.trace.iterations()), timer.stop())
        }
        Algorithm::ZfRandomPhase | Algorithm::MmseRandomPhase => {
            let precoder = if algorithm == Algorithm::ZfRandomPhase {
                Precoder::Zf
            } else {
                Precoder::Mmse
            };
            let scheme = BaselineScheme {
                precoder,
                reflector: Reflector::RandomPhase {
                    draws: spec.random_phase_draws,
                },
                power_policy: precoder.default_policy(),
            };
            let mut rng = trial_rng(spec.seed, trial, Stream::Baseline);
            let rate = baselines::evaluate(&scheme, cascaded, b, &mut rng)?;
            (rate, rate, None, timer.stop())
        }
        Algorithm::GridOracle => {
            let g = baselines::grid_search_phases(
                cascaded,
                Precoder::Mmse,
                PowerPolicy::FullPower,
                spec.grid_levels,
                b,
            )?;
            (g.rate, g.rate, None, timer.stop())
        }
    };
    if !out.0.is_finite() {
        return Err(Error::Domain("non-finite rate".into()));
    }
    Ok(out)
}

type TrialOutcome = Vec<std::result::Result<TrialRecord, TrialFailure>>;

fn run_trial(spec: &ScenarioSpec, value: f64, point: &Point, trial: usize) -> TrialOutcome {
    let fail = |algorithm: Algorithm, e: Error| TrialFailure {
        sweep_value: value,
        trial,
        algorithm,
        message: e.to_string(),
    };
    let channels = draw_channels(&point.system, &mut trial_rng(spec.seed, trial, Stream::Channel));
    let channels = match channels {
        Ok(c) => c,
        Err(e) => {
            let msg = e.to_string();
            return spec
                .algorithms
                .iter()
                .map(|&a| {
                    Err(TrialFailure {
                        sweep_value: value,
                        trial,
                        algorithm: a,
                        message: msg.clone(),
                    })
                })
                .collect();
        }
    };
    spec.algorithms
        .iter()
        .map(|&algorithm| {
            run_one(spec, point, trial, algorithm, &channels.cascaded)
                .map(|(metric, sum_rate, iterations, wall_time_s)| TrialRecord {
                    sweep_value: value,
                    trial,
                    algorithm,
                    metric,
                    sum_rate,
                    iterations,
                    wall_time_s,
                })
                .map_err(|e| fail(algorithm, e))
        })
        .collect()
}

pub fn run_scenario(spec: &ScenarioSpec) -> Result<ResultTable> {
    run_scenario_with(spec, &AtomicBool::new(false))
}

/// Runs the scenario, stopping before any new trial once `cancel` is set.
pub fn run_scenario_with(spec: &ScenarioSpec, cancel: &AtomicBool) -> Result<ResultTable> {
    spec.validate()?;
    let points: Vec<(f64, Point)> = spec
        .sweep
        .values
        .iter()
        .map(|&v| spec.point(v).map(|p| (v, p)))
        .collect::<Result<_>>()?;

    let jobs: Vec<(usize, usize)> = (0..points.len())
        .flat_map(|p| (0..spec.trials).map(move |t| (p, t)))
        .collect();
    let outcomes: Vec<Option<TrialOutcome>> = jobs
        .par_iter()
        .map(|&(p, t)| {
            if cancel.load(Ordering::Relaxed) {
                return None;
            }
            let (value, point) = &points[p];
            Some(run_trial(spec, *value, point, t))
        })
        .collect();

    let mut table = ResultTable {
        sweep_variable: Some(spec.sweep.variable),
        cancelled: outcomes.iter().any(Option::is_none),
        ..ResultTable::default()
    };
    for outcome in outcomes.into_iter().flatten() {
        for r in outcome {
            match r {
                Ok(rec) => table.records.push(rec),
                Err(f) => table.failures.push(f),
            }
        }
    }
    for (value, _) in &points {
        for &algorithm in &spec.algorithms {
            let recs: Vec<&TrialRecord> = table
                .records
                .iter()
                .filter(|r| r.sweep_value == *value && r.algorithm == algorithm)
                .collect();
            let n_failed = table
                .failures
                .iter()
                .filter(|f| f.sweep_value == *value && f.algorithm == algorithm)
                .count();
            let metrics: Vec<f64> = recs.iter().map(|r| r.metric).collect();
            let (mean, min, max) = if metrics.is_empty() {
                (f64::NAN, f64::NAN, f64::NAN)
            } else {
                (
                    mean_of(&metrics),
                    metrics.iter().cloned().fold(f64::INFINITY, f64::min),
                    metrics.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
                )
            };
            let iters: Vec<f64> = recs.iter().filter_map(|r| r.iterations.map(|i| i as f64)).collect();
            let times: Vec<f64> = recs.iter().filter_map(|r| r.wall_time_s).collect();
            table.rows.push(ResultRow {
                sweep_value: *value,
                algorithm,
                mean,
                std_error: standard_error(&metrics),
                mean_iterations: (!iters.is_empty()).then(|| mean_of(&iters)),
                mean_wall_time_s: (!times.is_empty()).then(|| mean_of(&times)),
                min,
                max,
                n_ok: metrics.len(),
                n_failed,
            });
        }
    }
    Ok(table)
}

/// Moves the RIS along the x-axis, `ris_position = (D1, 0)`, one row per D1.
pub fn ris_placement_sweep(spec: &ScenarioSpec, distances: &[f64]) -> Result<ResultTable> {
    let spec = spec
        .clone()
        .with_sweep(SweepVariable::RisDistance, distances.to_vec());
    run_scenario(&spec)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimationRow {
    pub trial: usize,
    pub user: usize,
    pub sq_error: f64,
    pub pilot_length: usize,
    pub pilot_power: f64,
    pub noise_power: f64,
}

/// Monte-Carlo LS estimation error against its analytic expectation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimationStudy {
    #[serde(skip)]
    pub rows: Vec<EstimationRow>,
    pub trials: usize,
    pub expected_sq_error: f64,
    pub mean_sq_error: f64,
    pub std_error: f64,
}

impl EstimationStudy {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut wtr = crate::csv_writer(out);
        for row in &self.rows {
            wtr.serialize(row)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Draws `trials` channel realizations and estimates every user's cascaded
/// channel with the configured pilots.
pub fn estimation_study(
    system: &SystemConfig,
    estimation: &EstimationSettings,
    trials: usize,
    seed: u64,
) -> Result<EstimationStudy> {
    system.validate()?;
    if trials == 0 {
        return Err(Error::config("trials", "must be at least 1"));
    }
    let n = system.num_ris_elements;
    let length = estimation.pilot_length.unwrap_or(n);
    let rows_per: Vec<Vec<EstimationRow>> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let plan = PilotPlan::dft_with(
                n,
                length,
                estimation.pilot_power,
                estimation.noise_power,
                estimation.symbols,
                &mut trial_rng(seed, t, Stream::PilotSymbols),
            )?;
            let ch = draw_channels(system, &mut trial_rng(seed, t, Stream::Channel))?;
            let res = estimate_channels(&ch.cascaded, &plan, &mut trial_rng(seed, t, Stream::PilotNoise))?;
            Ok(res
                .per_user_sq_error
                .iter()
                .enumerate()
                .map(|(user, e)| EstimationRow {
                    trial: t,
                    user,
                    sq_error: *e,
                    pilot_length: length,
                    pilot_power: estimation.pilot_power,
                    noise_power: estimation.noise_power,
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    let rows: Vec<EstimationRow> = rows_per.into_iter().flatten().collect();
    let errors: Vec<f64> = rows.iter().map(|r| r.sq_error).collect();
    let plan = PilotPlan::dft(n, length, estimation.pilot_power, estimation.noise_power)?;
    Ok(EstimationStudy {
        trials,
        expected_sq_error: crate::estimation::expected_ls_error(&plan, system.num_bs_antennas),
        mean_sq_error: mean_of(&errors),
        std_error: standard_error(&errors),
        rows,
    })
}

/// Mean per-iteration time of the perfect-CSI algorithm at one RIS size.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub num_ris_elements: usize,
    pub runs: usize,
    pub iterations: usize,
    pub total_time_s: f64,
    pub per_iteration_s: f64,
}

/// Times outer iterations (initialization excluded), running fresh seeded
/// draws at each size until at least `min_iterations` have accumulated.
/// Runs sequentially so that timings are not skewed by contention.
pub fn bench_per_iteration(
    system: &SystemConfig,
    settings: &FpSettings,
    sizes: &[usize],
    min_iterations: usize,
    seed: u64,
) -> Result<Vec<BenchRow>> {
    if sizes.is_empty() {
        return Err(Error::config("bench.ris_elements", "must list at least one size"));
    }
    if min_iterations == 0 {
        return Err(Error::config("bench.min_iterations", "must be at least 1"));
    }
    settings.validate()?;
    let mut rows = Vec::with_capacity(sizes.len());
    for &n in sizes {
        let mut cfg = system.clone();
        cfg.num_ris_elements = n;
        cfg.validate()?;
        let (mut runs, mut iterations, mut total) = (0, 0, 0.0);
        while iterations < min_iterations {
            let ch = draw_channels(&cfg, &mut trial_rng(seed, runs, Stream::Channel))?;
            let (_, trace) = run_algorithm1(&ch.cascaded, budget(&cfg), &Init::MatchedFilter, settings)?;
            runs += 1;
            iterations += trace.iterations();
            total += trace.total_time();
        }
        rows.push(BenchRow {
            num_ris_elements: n,
            runs,
            iterations,
            total_time_s: total,
            per_iteration_s: total / iterations as f64,
        });
    }
    Ok(rows)
}

pub fn write_bench_csv<W: Write>(out: W, rows: &[BenchRow]) -> Result<()> {
    let mut wtr = crate::csv_writer(out);
    for row in rows {
        wtr.serialize(row)?;
    }
    wtr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec(algorithms: Vec<Algorithm>) -> ScenarioSpec {
        let mut spec = ScenarioSpec::new(SystemConfig::new(2, 4, 2), algorithms);
        spec.trials = 3;
        spec.seed = 42;
        spec
    }

    #[test]
    fn effective_rate_edges() {
        assert_eq!(effective_sum_rate(3.0, 0, 10).unwrap(), 3.0);
        assert_eq!(effective_sum_rate(3.0, 10, 10).unwrap(), 0.0);
        assert_eq!(effective_sum_rate(4.0, 128, 512).unwrap(), 3.0);
        assert!(effective_sum_rate(3.0, 11, 10).is_err());
        assert!(effective_sum_rate(3.0, 0, 0).is_err());
    }

    #[test]
    fn single_trial_row_is_that_run() {
        let mut spec = small_spec(vec![Algorithm::FpPerfect]);
        spec.trials = 1;
        let table = run_scenario(&spec).unwrap();
        assert_eq!(table.rows.len(), 1);
        let cfg = spec.system.clone();
        let ch = draw_channels(&cfg, &mut trial_rng(42, 0, Stream::Channel)).unwrap();
        let (_, trace) = run_algorithm1(&ch.cascaded, budget(&cfg), &Init::MatchedFilter, &spec.optimizer).unwrap();
        assert_eq!(table.rows[0].mean, trace.final_rate());
        assert!(table.rows[0].std_error.is_nan());
        assert_eq!(table.rows[0].mean_wall_time_s, None);
    }

    #[test]
    fn identical_spec_gives_identical_table() {
        let spec = small_spec(vec![Algorithm::FpPerfect, Algorithm::ZfRandomPhase, Algorithm::FpEstimated])
            .with_sweep(SweepVariable::NumRisElements, vec![4.0, 6.0]);
        let a = run_scenario(&spec).unwrap();
        let b = run_scenario(&spec).unwrap();
        assert_eq!(a, b);
        let mut x = Vec::new();
        let mut y = Vec::new();
        a.write_csv(&mut x).unwrap();
        b.write_csv(&mut y).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn adding_algorithms_keeps_channel_draws() {
        let one = run_scenario(&small_spec(vec![Algorithm::FpPerfect])).unwrap();
        let two = run_scenario(&small_spec(vec![Algorithm::MmseRandomPhase, Algorithm::FpPerfect])).unwrap();
        assert_eq!(one.metrics(4.0, Algorithm::FpPerfect), two.metrics(4.0, Algorithm::FpPerfect));
    }

    #[test]
    fn rows_lie_within_trial_range() {
        let spec = small_spec(vec![Algorithm::FpPerfect, Algorithm::MmseRandomPhase])
            .with_sweep(SweepVariable::NumUsers, vec![1.0, 2.0]);
        let table = run_scenario(&spec).unwrap();
        for row in &table.rows {
            assert!(row.min <= row.mean && row.mean <= row.max);
            let xs = table.metrics(row.sweep_value, row.algorithm);
            assert_eq!(xs.len(), row.n_ok);
            assert!((row.std_error - standard_error(&xs)).abs() < 1e-15);
        }
    }

    #[test]
    fn standard_error_matches_hand_value() {
        // values 1, 2, 3: sample sd 1, se 1/sqrt(3)
        assert!((standard_error(&[1.0, 2.0, 3.0]) - 1.0 / 3f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn failures_are_recorded_not_fatal() {
        // ZF cannot serve 3 users with 2 antennas.
        let mut spec = small_spec(vec![Algorithm::ZfRandomPhase, Algorithm::FpPerfect]);
        spec.system.num_users = 3;
        let table = run_scenario(&spec).unwrap();
        assert_eq!(table.failures.len(), 3);
        assert!(!table.is_complete());
        let zf = table.row(4.0, Algorithm::ZfRandomPhase).unwrap();
        assert_eq!((zf.n_ok, zf.n_failed), (0, 3));
        assert_eq!(table.row(4.0, Algorithm::FpPerfect).unwrap().n_ok, 3);
        let mut buf = Vec::new();
        table.write_failures_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 4);
    }

    #[test]
    fn cancelled_run_is_flagged() {
        let spec = small_spec(vec![Algorithm::FpPerfect]);
        let table = run_scenario_with(&spec, &AtomicBool::new(true)).unwrap();
        assert!(table.cancelled);
        assert!(table.records.is_empty());
        assert_eq!(table.rows[0].n_ok, 0);
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let mut spec = small_spec(vec![Algorithm::FpPerfect]);
        spec.trials = 0;
        assert!(spec.validate().is_err());
        let spec = small_spec(vec![Algorithm::FpPerfect]).with_sweep(SweepVariable::NumRisElements, vec![4.0, 4.0]);
        assert!(spec.validate().is_err());
        let spec = small_spec(vec![Algorithm::FpPerfect]).with_sweep(SweepVariable::NumUsers, vec![1.5]);
        assert!(spec.validate().is_err());
        let spec = small_spec(vec![Algorithm::FpPerfect]).with_sweep(SweepVariable::NumRisElements, vec![]);
        assert!(spec.validate().is_err());
        let mut spec = small_spec(vec![Algorithm::FpEstimated]);
        spec.estimation.pilot_length = Some(3);
        assert!(matches!(spec.validate(), Err(Error::InvalidConfig { .. })));
        let spec = small_spec(vec![Algorithm::FpEstimated]).with_sweep(SweepVariable::TimeSlot, vec![2.0]);
        assert!(spec.validate().is_err());
    }

    #[test]
    fn placement_is_symmetric_in_mirrored_geometry() {
        // BS at (0, 30), users at (300, 30), RIS on y = 0: the cascaded gain
        // depends on the product of the two distances, symmetric about x = 150.
        let mut system = SystemConfig::new(2, 6, 2);
        system.bs_position = [0.0, 30.0];
        system.user_positions = Some(vec![[300.0, 30.0]; 2]);
        let mut spec = ScenarioSpec::new(system, vec![Algorithm::FpPerfect]);
        spec.trials = 4;
        let table = ris_placement_sweep(&spec, &[100.0, 200.0]).unwrap();
        let a = table.metrics(100.0, Algorithm::FpPerfect);
        let b = table.metrics(200.0, Algorithm::FpPerfect);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() <= 1e-6 * x.abs().max(1.0), "{x} vs {y}");
        }
    }

    #[test]
    fn effective_rate_uses_pilot_overhead() {
        let mut spec = small_spec(vec![Algorithm::FpEstimated]);
        spec.estimation.time_slot = Some(16);
        spec.estimation.pilot_length = Some(8);
        let table = run_scenario(&spec).unwrap();
        for r in &table.records {
            assert!((r.metric - 0.5 * r.sum_rate).abs() < 1e-15);
        }
    }

    #[test]
    fn bench_accumulates_iterations() {
        let rows = bench_per_iteration(&SystemConfig::new(2, 4, 1), &FpSettings::default(), &[4, 8, 8], 5, 1).unwrap();
        assert_eq!(rows.len(), 3);
        for r in &rows {
            assert!(r.iterations >= 5 && r.per_iteration_s >= 0.0);
        }
        assert_eq!(rows[1].iterations, rows[2].iterations);
        assert!(bench_per_iteration(&SystemConfig::new(2, 4, 1), &FpSettings::default(), &[], 5, 1).is_err());
    }

    #[test]
    fn estimation_study_tracks_expectation() {
        let system = SystemConfig::new(4, 8, 2);
        let est = EstimationSettings {
            pilot_power: 1.0,
            noise_power: 1.0,
            ..EstimationSettings::default()
        };
        let study = estimation_study(&system, &est, 500, 3).unwrap();
        assert_eq!(study.rows.len(), 1000);
        assert!((study.expected_sq_error - 4.0).abs() < 1e-12);
        assert!((study.mean_sq_error - 4.0).abs() <= 4.0 * study.std_error);
    }

    #[test]
    fn trial_streams_differ() {
        use rand::Rng;
        let a: u64 = trial_rng(1, 0, Stream::Channel).random();
        let b: u64 = trial_rng(1, 1, Stream::Channel).random();
        let c: u64 = trial_rng(1, 0, Stream::PilotNoise).random();
        assert!(a != b && a != c && b != c);
        assert_eq!(a, trial_rng(1, 0, Stream::Channel).random::<u64>());
    }
}
