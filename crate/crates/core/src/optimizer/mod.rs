//! Fractional-programming joint beamforming and reflection design.
//!
//! One outer iteration runs five closed-form block updates: the SINR
//! auxiliaries `alpha`, the beamforming auxiliaries `beta`, the beamformers
//! `W` (with the power-constraint dual found by bisection), the reflection
//! auxiliaries `epsilon`, and a Gauss-Seidel sweep over the RIS phases
//! accepted only if it does not lower the fractional reflection objective.
//!
//! The loop only sees per-user cascaded matrices, so the same code path runs
//! with exact channels and with least-squares estimates.

mod updates;

use std::io::Write;
use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channel::complex_gaussian;
use crate::{CMat, CVec, Error, Result, C64};

pub use updates::{
    compute_uv, effective_user_channel, eval_f1a, f1a_from_sinr, f2b, f2b_lagrangian, f3, f3a,
    f3b_dense, rate_from_sinr, sinr_per_user, sum_rate, update_alpha, update_beta,
    update_epsilon, update_phi_sweep, update_w, BeamformerUpdate, CrossChannels, PhaseQuadratic,
    FLAT_PHASE_TOL,
};

pub(crate) use updates::effective_channels;

/// Effective channels `h_k = H_k phi` for every user.
pub fn effective_user_channels(cascaded: &[CMat], phi: &CVec) -> Result<Vec<CVec>> {
    cascaded
        .iter()
        .map(|h| effective_user_channel(h, phi))
        .collect()
}

/// Stopping rule and sweep count.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FpSettings {
    /// Stop once the surrogate improves by at most this much (nats).
    pub threshold: f64,
    pub max_iterations: usize,
    /// Gauss-Seidel phase sweeps per outer iteration.
    pub phase_sweeps: usize,
}

impl Default for FpSettings {
    fn default() -> Self {
        Self {
            threshold: 1e-3,
            max_iterations: 100,
            phase_sweeps: 1,
        }
    }
}

impl FpSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.threshold > 0.0 && self.threshold.is_finite()) {
            return Err(Error::config("threshold", "must be positive"));
        }
        if self.max_iterations == 0 {
            return Err(Error::config("max_iterations", "must be at least 1"));
        }
        if self.phase_sweeps == 0 {
            return Err(Error::config("phase_sweeps", "must be at least 1"));
        }
        Ok(())
    }
}

/// Starting point of the alternating updates.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum Init {
    /// All-ones phases and equal-power matched-filter beams.
    #[default]
    MatchedFilter,
    /// Uniform random phases and a Gaussian beamformer at full power.
    Random { seed: u64 },
    /// Explicit feasible point.
    Given { w: CMat, phi: CVec },
}

/// The quantities the optimizer needs besides the channels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkBudget {
    pub transmit_power: f64,
    pub noise_power: f64,
}

/// One iterate of the alternating updates.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub w: CMat,
    pub phi: CVec,
    pub alpha: Vec<f64>,
    pub beta: Vec<C64>,
    pub epsilon: Vec<C64>,
    pub lambda: f64,
    pub iteration: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Termination {
    Threshold,
    MaxIterations,
}

/// Objective values per outer iteration; entry 0 is the initial point.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceTrace {
    pub f1: Vec<f64>,
    pub f1a: Vec<f64>,
    pub wall_time: Vec<f64>,
    pub phase_accepted: Vec<bool>,
    pub terminated_by: Termination,
}

impl ConvergenceTrace {
    /// Outer iterations performed.
    pub fn iterations(&self) -> usize {
        self.f1.len().saturating_sub(1)
    }

    pub fn final_rate(&self) -> f64 {
        *self.f1.last().unwrap_or(&0.0)
    }

    pub fn total_time(&self) -> f64 {
        self.wall_time.iter().sum()
    }

    /// CSV rows `iteration,f1_nats,f1a_nats,f1_bits[,wall_time_s]`.
    pub fn write_csv<W: Write>(&self, out: W, include_timing: bool) -> Result<()> {
        let mut wtr = crate::csv_writer(out);
        let mut header = vec!["iteration", "f1_nats", "f1a_nats", "f1_bits"];
        if include_timing {
            header.push("wall_time_s");
        }
        wtr.write_record(&header)?;
        for i in 0..self.f1.len() {
            let mut row = vec![
                i.to_string(),
                self.f1[i].to_string(),
                self.f1a[i].to_string(),
                (self.f1[i] / std::f64::consts::LN_2).to_string(),
            ];
            if include_timing {
                row.push(self.wall_time[i].to_string());
            }
            wtr.write_record(&row)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Intermediate quantities exposed to an observer during a run.
#[derive(Debug)]
pub enum StepEvent<'a> {
    /// `beta` was just computed from the previous beamformers `w`.
    Beta {
        w: &'a CMat,
        beta: &'a [C64],
        alpha: &'a [f64],
        h: &'a [CVec],
    },
    /// New beamformers with their power-constraint dual.
    Beamformer {
        update: &'a BeamformerUpdate,
        beta: &'a [C64],
        alpha: &'a [f64],
        h: &'a [CVec],
    },
    /// `epsilon` was just computed at the current phases.
    Epsilon {
        phi: &'a CVec,
        epsilon: &'a [C64],
        alpha: &'a [f64],
        cross: &'a CrossChannels,
    },
    /// Candidate phases from the sweep and whether the guard accepted them.
    Phase {
        previous: &'a CVec,
        candidate: &'a CVec,
        quadratic: &'a PhaseQuadratic,
        accepted: bool,
    },
    IterationEnd {
        state: &'a OptimizerState,
        f1: f64,
        f1a: f64,
    },
}

/// Receives [`StepEvent`]s; closures implement it.
pub trait StepObserver {
    fn on_step(&mut self, event: StepEvent<'_>);
}

impl<F: FnMut(StepEvent<'_>)> StepObserver for F {
    fn on_step(&mut self, event: StepEvent<'_>) {
        self(event)
    }
}

struct NoObserver;

impl StepObserver for NoObserver {
    fn on_step(&mut self, _: StepEvent<'_>) {}
}

fn check_cascaded(cascaded: &[CMat]) -> Result<(usize, usize)> {
    let first = cascaded
        .first()
        .ok_or_else(|| Error::Shape("no users".into()))?;
    let (m, n) = first.shape();
    if m == 0 || n == 0 {
        return Err(Error::Shape("empty cascaded channel".into()));
    }
    if let Some(k) = cascaded.iter().position(|h| h.shape() != (m, n)) {
        return Err(Error::Shape(format!(
            "cascaded[{k}] is {:?}, expected {:?}",
            cascaded[k].shape(),
            (m, n)
        )));
    }
    Ok((m, n))
}

/// Builds the starting `(W, phi)` for the given channels.
pub fn initial_point(cascaded: &[CMat], budget: LinkBudget, init: &Init) -> Result<(CMat, CVec)> {
    let (m, n) = check_cascaded(cascaded)?;
    let k = cascaded.len();
    match init {
        Init::MatchedFilter => {
            let phi = CVec::from_element(n, C64::new(1.0, 0.0));
            let h = effective_channels(cascaded, &phi);
            let per_user = (budget.transmit_power / k as f64).sqrt();
            let mut w = CMat::zeros(m, k);
            for (i, hk) in h.iter().enumerate() {
                let norm = hk.norm();
                if norm > 0.0 {
                    w.set_column(i, &(hk * C64::new(per_user / norm, 0.0)));
                }
            }
            Ok((w, phi))
        }
        Init::Random { seed } => {
            use rand::SeedableRng;
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(*seed);
            let phi = CVec::from_iterator(
                n,
                (0..n).map(|_| C64::from_polar(1.0, rng.random::<f64>() * std::f64::consts::TAU)),
            );
            let mut w = CMat::from_fn(m, k, |_, _| complex_gaussian(&mut rng));
            let norm = w.norm();
            w *= C64::new(budget.transmit_power.sqrt() / norm, 0.0);
            Ok((w, phi))
        }
        Init::Given { w, phi } => {
            if w.shape() != (m, k) || phi.len() != n {
                return Err(Error::Shape(format!(
                    "initial W is {:?} and phi has {} entries, expected {:?} and {n}",
                    w.shape(),
                    phi.len(),
                    (m, k)
                )));
            }
            Ok((w.clone(), phi.clone()))
        }
    }
}

fn check_feasible(w: &CMat, phi: &CVec, budget: LinkBudget) -> Result<()> {
    if let Some(n) = phi.iter().position(|p| (p.norm() - 1.0).abs() > 1e-10) {
        return Err(Error::Domain(format!(
            "initial phase {n} has modulus {}, expected 1",
            phi[n].norm()
        )));
    }
    let p = w.norm_squared();
    if p > budget.transmit_power * (1.0 + 1e-8) {
        return Err(Error::Domain(format!(
            "initial beamformers use power {p}, budget is {}",
            budget.transmit_power
        )));
    }
    Ok(())
}

/// Runs the alternating updates on the given cascaded channels.
pub fn run_algorithm1(
    cascaded: &[CMat],
    budget: LinkBudget,
    init: &Init,
    settings: &FpSettings,
) -> Result<(OptimizerState, ConvergenceTrace)> {
    run_observed(cascaded, budget, init, settings, &mut NoObserver)
}

/// [`run_algorithm1`] reporting every block update to `observer`.
pub fn run_observed(
    cascaded: &[CMat],
    budget: LinkBudget,
    init: &Init,
    settings: &FpSettings,
    observer: &mut dyn StepObserver,
) -> Result<(OptimizerState, ConvergenceTrace)> {
    settings.validate()?;
    if !(budget.transmit_power > 0.0) || !(budget.noise_power > 0.0) {
        return Err(Error::Domain("powers must be positive".into()));
    }
    let noise = budget.noise_power;
    let (w0, phi0) = initial_point(cascaded, budget, init)?;
    check_feasible(&w0, &phi0, budget)?;

    let k = cascaded.len();
    let mut h = effective_channels(cascaded, &phi0);
    let gamma0 = sinr_per_user(&w0, &h, noise);
    let f1_0 = rate_from_sinr(&gamma0);
    let mut state = OptimizerState {
        w: w0,
        phi: phi0,
        alpha: update_alpha(&gamma0),
        beta: vec![C64::new(0.0, 0.0); k],
        epsilon: vec![C64::new(0.0, 0.0); k],
        lambda: 0.0,
        iteration: 0,
    };
    let mut trace = ConvergenceTrace {
        f1: vec![f1_0],
        f1a: vec![f1_0],
        wall_time: vec![0.0],
        phase_accepted: vec![true],
        terminated_by: Termination::MaxIterations,
    };
    let mut gamma = gamma0;

    loop {
        let started = Instant::now();
        state.iteration += 1;

        // Step 1
        state.alpha = update_alpha(&gamma);
        // Step 2
        state.beta = update_beta(&state.w, &h, &state.alpha, noise);
        observer.on_step(StepEvent::Beta {
            w: &state.w,
            beta: &state.beta,
            alpha: &state.alpha,
            h: &h,
        });
        // Step 3
        let bf = update_w(&state.beta, &state.alpha, &h, budget.transmit_power);
        observer.on_step(StepEvent::Beamformer {
            update: &bf,
            beta: &state.beta,
            alpha: &state.alpha,
            h: &h,
        });
        state.w = bf.w;
        state.lambda = bf.lambda;
        // Step 4
        let cross = CrossChannels::new(&state.w, cascaded);
        state.epsilon = update_epsilon(&state.phi, &cross, &state.alpha, noise);
        observer.on_step(StepEvent::Epsilon {
            phi: &state.phi,
            epsilon: &state.epsilon,
            alpha: &state.alpha,
            cross: &cross,
        });
        // Step 5
        let quad = compute_uv(&state.epsilon, &state.alpha, &cross, noise);
        let mut candidate = state.phi.clone();
        for _ in 0..settings.phase_sweeps {
            quad.sweep(&mut candidate);
        }
        let accepted = f3(&candidate, &cross, &state.alpha, noise)
            >= f3(&state.phi, &cross, &state.alpha, noise);
        observer.on_step(StepEvent::Phase {
            previous: &state.phi,
            candidate: &candidate,
            quadratic: &quad,
            accepted,
        });
        if accepted {
            state.phi = candidate;
        }

        h = effective_channels(cascaded, &state.phi);
        gamma = sinr_per_user(&state.w, &h, noise);
        let f1 = rate_from_sinr(&gamma);
        let f1a = f1a_from_sinr(&state.alpha, &gamma);
        let elapsed = started.elapsed().as_secs_f64();
        observer.on_step(StepEvent::IterationEnd {
            state: &state,
            f1,
            f1a,
        });

        let previous = *trace.f1a.last().expect("trace starts non-empty");
        trace.f1.push(f1);
        trace.f1a.push(f1a);
        trace.wall_time.push(elapsed);
        trace.phase_accepted.push(accepted);

        if f1a - previous <= settings.threshold {
            trace.terminated_by = Termination::Threshold;
            break;
        }
        if state.iteration >= settings.max_iterations {
            trace.terminated_by = Termination::MaxIterations;
            break;
        }
    }
    Ok((state, trace))
}

/// Outcome of a design driven by estimated channels.
#[derive(Debug, Clone)]
pub struct EstimatedCsiOutcome {
    pub state: OptimizerState,
    /// Trace of the designed (estimated-channel) objectives.
    pub trace: ConvergenceTrace,
    /// SINRs obtained when the design is applied to the true channels.
    pub realized_sinr: Vec<f64>,
    pub realized_sum_rate: f64,
}

/// Designs `(W, phi)` on `estimated` channels and evaluates it on `truth`.
pub fn run_algorithm2(
    estimated: &[CMat],
    truth: &[CMat],
    budget: LinkBudget,
    init: &Init,
    settings: &FpSettings,
) -> Result<EstimatedCsiOutcome> {
    run_algorithm2_observed(estimated, truth, budget, init, settings, &mut NoObserver)
}

pub fn run_algorithm2_observed(
    estimated: &[CMat],
    truth: &[CMat],
    budget: LinkBudget,
    init: &Init,
    settings: &FpSettings,
    observer: &mut dyn StepObserver,
) -> Result<EstimatedCsiOutcome> {
    let est_shape = check_cascaded(estimated)?;
    let true_shape = check_cascaded(truth)?;
    if est_shape != true_shape || estimated.len() != truth.len() {
        return Err(Error::Shape(format!(
            "estimated channels are {} x {:?}, true channels are {} x {:?}",
            estimated.len(),
            est_shape,
            truth.len(),
            true_shape
        )));
    }
    let (state, trace) = run_observed(estimated, budget, init, settings, observer)?;
    let h_true = effective_channels(truth, &state.phi);
    let realized_sinr = sinr_per_user(&state.w, &h_true, budget.noise_power);
    let realized_sum_rate = rate_from_sinr(&realized_sinr);
    Ok(EstimatedCsiOutcome {
        state,
        trace,
        realized_sinr,
        realized_sum_rate,
    })
}
