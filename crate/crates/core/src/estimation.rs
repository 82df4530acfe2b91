//! Uplink least-squares estimation of the cascaded channels.
//!
//! Each user sends `L` pilot symbols while the RIS steps through the rows of
//! an N x L DFT matrix, so the BS observes `Y_k = H_k X + N` with
//! `X = P_k Psi diag(S)`. The estimate is `Y_k X^+`.

use std::f64::consts::TAU;
use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channel::complex_gaussian;
use crate::{CMat, CVec, Error, Result, C64};

/// Pilot symbol sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PilotSymbols {
    #[default]
    Ones,
    /// Random QPSK, drawn once per plan from the plan's RNG.
    Qpsk,
}

/// A fixed pilot design: `X = P_k Psi diag(S)` and its pseudo-inverse.
#[derive(Debug, Clone)]
pub struct PilotPlan {
    pub length: usize,
    pub pilot_power: f64,
    pub noise_power: f64,
    pub psi: CMat,
    pub symbols: CVec,
    x: CMat,
    x_pinv: CMat,
    gram_inv_trace: f64,
}

/// `Psi[n, l] = exp(2 pi j n l / L)`.
pub fn dft_pilot_matrix(n: usize, l: usize) -> Result<CMat> {
    if n == 0 {
        return Err(Error::Domain("pilot matrix needs at least one row".into()));
    }
    if l < n {
        return Err(Error::Domain(format!(
            "pilot length {l} is shorter than the {n} RIS elements"
        )));
    }
    Ok(CMat::from_fn(n, l, |r, c| {
        // reduce n*l mod L first so large products keep full precision
        let k = (r * c) % l;
        C64::from_polar(1.0, TAU * k as f64 / l as f64)
    }))
}

impl PilotPlan {
    /// DFT plan with all-ones symbols.
    pub fn dft(num_elements: usize, length: usize, pilot_power: f64, noise_power: f64) -> Result<Self> {
        let symbols = CVec::from_element(length, C64::new(1.0, 0.0));
        Self::with_symbols(num_elements, length, pilot_power, noise_power, symbols)
    }

    /// DFT plan with symbols drawn per `kind`.
    pub fn dft_with<R: Rng + ?Sized>(
        num_elements: usize,
        length: usize,
        pilot_power: f64,
        noise_power: f64,
        kind: PilotSymbols,
        rng: &mut R,
    ) -> Result<Self> {
        let symbols = match kind {
            PilotSymbols::Ones => CVec::from_element(length, C64::new(1.0, 0.0)),
            PilotSymbols::Qpsk => CVec::from_fn(length, |_, _| {
                let q = rng.random_range(0..4u8) as f64;
                C64::from_polar(1.0, TAU * (q + 0.5) / 4.0)
            }),
        };
        Self::with_symbols(num_elements, length, pilot_power, noise_power, symbols)
    }

    pub fn with_symbols(
        num_elements: usize,
        length: usize,
        pilot_power: f64,
        noise_power: f64,
        symbols: CVec,
    ) -> Result<Self> {
        if !(pilot_power > 0.0 && pilot_power.is_finite()) {
            return Err(Error::config("pilot_power", "must be positive and finite"));
        }
        if !(noise_power >= 0.0 && noise_power.is_finite()) {
            return Err(Error::config("pilot_noise_power", "must be non-negative and finite"));
        }
        if symbols.len() != length {
            return Err(Error::Shape(format!(
                "{} pilot symbols for pilot length {length}",
                symbols.len()
            )));
        }
        if symbols.iter().any(|s| (s.norm() - 1.0).abs() > 1e-12) {
            return Err(Error::Domain("pilot symbols must have unit modulus".into()));
        }
        let psi = dft_pilot_matrix(num_elements, length)?;
        let mut x = psi.clone() * C64::new(pilot_power, 0.0);
        for (mut col, s) in x.column_iter_mut().zip(symbols.iter()) {
            col *= *s;
        }
        let gram = &x * x.adjoint();
        let gram_inv = gram
            .cholesky()
            .ok_or_else(|| Error::RankDeficient("pilot Gram matrix X X^H is singular".into()))?
            .inverse();
        let x_pinv = x.adjoint() * &gram_inv;
        let gram_inv_trace = gram_inv.diagonal().iter().map(|d| d.re).sum();
        Ok(Self {
            length,
            pilot_power,
            noise_power,
            psi,
            symbols,
            x,
            x_pinv,
            gram_inv_trace,
        })
    }

    pub fn num_elements(&self) -> usize {
        self.psi.nrows()
    }

    /// The equivalent pilot matrix `X` (N x L).
    pub fn x(&self) -> &CMat {
        &self.x
    }

    /// `X^+ = X^H (X X^H)^{-1}` (L x N).
    pub fn pseudo_inverse(&self) -> &CMat {
        &self.x_pinv
    }
}

/// `Y_k = H_k X + N` with i.i.d. CN(0, noise) entries in `N`.
pub fn simulate_uplink_pilots<R: Rng + ?Sized>(h: &CMat, plan: &PilotPlan, rng: &mut R) -> Result<CMat> {
    let noise = CMat::from_fn(h.nrows(), plan.length, |_, _| complex_gaussian(rng));
    simulate_with_noise(h, plan, &noise)
}

/// Same as [`simulate_uplink_pilots`] but with the unit-variance noise draw supplied.
pub fn simulate_with_noise(h: &CMat, plan: &PilotPlan, unit_noise: &CMat) -> Result<CMat> {
    if h.ncols() != plan.num_elements() {
        return Err(Error::Shape(format!(
            "channel has {} columns, plan covers {} elements",
            h.ncols(),
            plan.num_elements()
        )));
    }
    if unit_noise.shape() != (h.nrows(), plan.length) {
        return Err(Error::Shape("noise block does not match M x L".into()));
    }
    Ok(h * &plan.x + unit_noise * C64::new(plan.noise_power.sqrt(), 0.0))
}

pub fn ls_estimate(y: &CMat, plan: &PilotPlan) -> Result<CMat> {
    if y.ncols() != plan.length {
        return Err(Error::Shape(format!(
            "observation has {} columns, pilot length is {}",
            y.ncols(),
            plan.length
        )));
    }
    Ok(y * &plan.x_pinv)
}

/// `M sigma_n^2 Tr[(X X^H)^{-1}]`, the expected squared Frobenius error per user.
pub fn expected_ls_error(plan: &PilotPlan, num_bs_antennas: usize) -> f64 {
    num_bs_antennas as f64 * plan.noise_power * plan.gram_inv_trace
}

#[derive(Debug, Clone)]
pub struct EstimationResult {
    pub h_hat: Vec<CMat>,
    pub per_user_sq_error: Vec<f64>,
    pub pilot_length: usize,
    pub pilot_power: f64,
    pub noise_power: f64,
}

#[derive(Serialize)]
struct ErrorRow {
    user: usize,
    sq_error: f64,
    pilot_length: usize,
    pilot_power: f64,
    noise_power: f64,
}

impl EstimationResult {
    pub fn mean_sq_error(&self) -> f64 {
        self.per_user_sq_error.iter().sum::<f64>() / self.per_user_sq_error.len().max(1) as f64
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut wtr = crate::csv_writer(out);
        for (user, e) in self.per_user_sq_error.iter().enumerate() {
            wtr.serialize(ErrorRow {
                user,
                sq_error: *e,
                pilot_length: self.pilot_length,
                pilot_power: self.pilot_power,
                noise_power: self.noise_power,
            })?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Estimates every user's cascaded channel with independent pilot noise.
pub fn estimate_channels<R: Rng + ?Sized>(
    truth: &[CMat],
    plan: &PilotPlan,
    rng: &mut R,
) -> Result<EstimationResult> {
    let mut h_hat = Vec::with_capacity(truth.len());
    let mut errors = Vec::with_capacity(truth.len());
    for h in truth {
        let y = simulate_uplink_pilots(h, plan, rng)?;
        let est = ls_estimate(&y, plan)?;
        if est.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(Error::Domain("non-finite channel estimate".into()));
        }
        errors.push((h - &est).norm_squared());
        h_hat.push(est);
    }
    Ok(EstimationResult {
        h_hat,
        per_user_sq_error: errors,
        pilot_length: plan.length,
        pilot_power: plan.pilot_power,
        noise_power: plan.noise_power,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_channel(rng: &mut ChaCha8Rng, m: usize, n: usize) -> CMat {
        CMat::from_fn(m, n, |_, _| complex_gaussian(rng))
    }

    #[test]
    fn small_dft_matrices() {
        let p = dft_pilot_matrix(1, 2).unwrap();
        assert_eq!(p, CMat::from_element(1, 2, C64::new(1.0, 0.0)));
        let p = dft_pilot_matrix(2, 2).unwrap();
        let expect = [[1.0, 1.0], [1.0, -1.0]];
        for r in 0..2 {
            for c in 0..2 {
                assert!((p[(r, c)] - C64::new(expect[r][c], 0.0)).norm() < 1e-15);
            }
        }
    }

    #[test]
    fn dft_rows_are_orthogonal() {
        let p = dft_pilot_matrix(4, 8).unwrap();
        let gram = &p * p.adjoint();
        assert!((gram - CMat::identity(4, 4) * C64::new(8.0, 0.0)).norm() < 1e-12);
        let p = dft_pilot_matrix(36, 100).unwrap();
        let gram = &p * p.adjoint();
        assert!((gram - CMat::identity(36, 36) * C64::new(100.0, 0.0)).norm() <= 1e-9 * 100.0 * 6.0);
    }

    #[test]
    fn short_pilots_rejected() {
        assert!(dft_pilot_matrix(4, 3).is_err());
        assert!(PilotPlan::dft(4, 3, 1.0, 1.0).is_err());
        assert!(PilotPlan::dft(4, 4, 0.0, 1.0).is_err());
        assert!(PilotPlan::dft(4, 4, 1.0, -1.0).is_err());
    }

    #[test]
    fn noiseless_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for (n, l) in [(4, 4), (8, 16), (16, 20)] {
            let plan = PilotPlan::dft(n, l, 0.7, 0.0).unwrap();
            let h = random_channel(&mut rng, 3, n);
            let y = simulate_uplink_pilots(&h, &plan, &mut rng).unwrap();
            assert!((&y - &h * plan.x()).norm() == 0.0);
            let est = ls_estimate(&y, &plan).unwrap();
            assert!((&est - &h).norm() <= 1e-9 * h.norm());
        }
    }

    #[test]
    fn error_is_minus_noise_times_pinv() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let plan = PilotPlan::dft(6, 9, 2.0, 0.5).unwrap();
        let h = random_channel(&mut rng, 4, 6);
        let unit = random_channel(&mut rng, 4, 9);
        let y = simulate_with_noise(&h, &plan, &unit).unwrap();
        let est = ls_estimate(&y, &plan).unwrap();
        let noise = &unit * C64::new(0.5f64.sqrt(), 0.0);
        let err = &h - &est;
        let expect = -(noise * plan.pseudo_inverse());
        assert!((err - expect).norm() < 1e-12);
    }

    #[test]
    fn zero_channel_gives_noise_variance() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let plan = PilotPlan::dft(2, 200, 1.0, 0.25).unwrap();
        let h = CMat::zeros(50, 2);
        let y = simulate_uplink_pilots(&h, &plan, &mut rng).unwrap();
        let var = y.norm_squared() / (50.0 * 200.0);
        assert!((var - 0.25).abs() < 0.25 * 0.03, "{var}");
    }

    #[test]
    fn seeded_draws_repeat() {
        let plan = PilotPlan::dft(3, 4, 1.0, 1.0).unwrap();
        let h = CMat::zeros(2, 3);
        let a = simulate_uplink_pilots(&h, &plan, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = simulate_uplink_pilots(&h, &plan, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn analytic_error_closed_form() {
        // Tr[(X X^H)^{-1}] = N / (P^2 L) for the DFT plan
        let plan = PilotPlan::dft(16, 16, 1.0, 1.0).unwrap();
        assert!((expected_ls_error(&plan, 4) - 4.0).abs() < 1e-12);
        let plan = PilotPlan::dft(8, 32, 3.0, 2.0).unwrap();
        let expect = 5.0 * 2.0 * 8.0 / (9.0 * 32.0);
        assert!((expected_ls_error(&plan, 5) - expect).abs() < 1e-12 * expect);
        let quiet = PilotPlan::dft(8, 32, 3.0, 0.0).unwrap();
        assert_eq!(expected_ls_error(&quiet, 5), 0.0);
        let a = expected_ls_error(&PilotPlan::dft(8, 16, 1.0, 1.0).unwrap(), 4);
        let b = expected_ls_error(&PilotPlan::dft(8, 32, 1.0, 1.0).unwrap(), 4);
        assert!((a / b - 2.0).abs() < 1e-12);
    }

    #[test]
    fn qpsk_symbols_leave_error_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let plan = PilotPlan::dft_with(8, 12, 1.5, 1.0, PilotSymbols::Qpsk, &mut rng).unwrap();
        assert!(plan.symbols.iter().all(|s| (s.norm() - 1.0).abs() < 1e-15));
        let ones = PilotPlan::dft(8, 12, 1.5, 1.0).unwrap();
        assert!((expected_ls_error(&plan, 4) - expected_ls_error(&ones, 4)).abs() < 1e-12);
    }

    #[test]
    fn estimator_is_unbiased() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let plan = PilotPlan::dft(4, 4, 1.0, 1.0).unwrap();
        let h = random_channel(&mut rng, 2, 4);
        let trials = 10_000;
        let mut mean = CMat::zeros(2, 4);
        for _ in 0..trials {
            let y = simulate_uplink_pilots(&h, &plan, &mut rng).unwrap();
            mean += ls_estimate(&y, &plan).unwrap();
        }
        mean /= C64::new(trials as f64, 0.0);
        // per-entry error variance = sigma^2 Tr[(XX^H)^-1] / N = 1/L, per real part half that
        let sd = (0.5 / 4.0 / trials as f64).sqrt();
        for (a, b) in mean.iter().zip(h.iter()) {
            assert!((a.re - b.re).abs() <= 4.0 * sd && (a.im - b.im).abs() <= 4.0 * sd);
        }
    }

    #[test]
    fn error_does_not_depend_on_the_channel() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let plan = PilotPlan::dft(8, 8, 1.0, 1.0).unwrap();
        let small = random_channel(&mut rng, 4, 8) * C64::new(1e-3, 0.0);
        let large = random_channel(&mut rng, 4, 8) * C64::new(1e3, 0.0);
        let trials = 4000;
        let mut stats = Vec::new();
        for h in [&small, &large] {
            let errs: Vec<f64> = (0..trials)
                .map(|_| {
                    let r = estimate_channels(std::slice::from_ref(h), &plan, &mut rng).unwrap();
                    r.per_user_sq_error[0]
                })
                .collect();
            let mean = errs.iter().sum::<f64>() / trials as f64;
            let var = errs.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (trials - 1) as f64;
            stats.push((mean, var));
        }
        let se = ((stats[0].1 + stats[1].1) / trials as f64).sqrt();
        assert!((stats[0].0 - stats[1].0).abs() <= 4.0 * se);
    }

    #[test]
    fn result_csv() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let plan = PilotPlan::dft(2, 4, 1.0, 0.1).unwrap();
        let truth = vec![random_channel(&mut rng, 2, 2); 2];
        let res = estimate_channels(&truth, &plan, &mut rng).unwrap();
        let mut buf = Vec::new();
        res.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("user,sq_error,pilot_length,pilot_power,noise_power\n0,"));
        assert_eq!(text.lines().count(), 3);
    }
}
