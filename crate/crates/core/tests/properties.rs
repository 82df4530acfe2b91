use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use risfp::baselines::{random_phases, zf_precoder};
use risfp::channel::{complex_gaussian, draw_channels, SystemConfig};
use risfp::estimation::{ls_estimate, simulate_with_noise, PilotPlan};
use risfp::experiments::effective_sum_rate;
use risfp::optimizer::{
    effective_user_channels, run_algorithm1, sinr_per_user, FpSettings, Init, LinkBudget,
};
use risfp::{CMat, CVec, C64};

fn gaussian_mats(seed: u64, k: usize, m: usize, n: usize) -> Vec<CMat> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..k)
        .map(|_| CMat::from_fn(m, n, |_, _| complex_gaussian(&mut rng)))
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn solution_is_feasible_and_trace_monotone(
        seed in any::<u64>(),
        m in 1usize..5,
        n in 1usize..12,
        k in 1usize..4,
        power in 0.1f64..10.0,
        noise in 0.01f64..1.0,
        random_init in any::<bool>(),
    ) {
        let h = gaussian_mats(seed, k, m, n);
        let b = LinkBudget { transmit_power: power, noise_power: noise };
        let init = if random_init { Init::Random { seed } } else { Init::MatchedFilter };
        let (state, trace) = run_algorithm1(&h, b, &init, &FpSettings::default()).unwrap();
        for p in state.phi.iter() {
            prop_assert!((p.norm() - 1.0).abs() < 1e-12);
        }
        prop_assert!(state.w.norm_squared() <= power * (1.0 + 1e-8));
        for w in trace.f1a.windows(2) {
            prop_assert!(w[1] - w[0] >= -1e-9 * w[0].abs().max(1.0), "{:?}", trace.f1a);
        }
        prop_assert!(trace.final_rate() >= trace.f1[0] - 1e-9);
    }

    #[test]
    fn physical_runs_stay_feasible(seed in any::<u64>(), n in 2usize..40, k in 1usize..4) {
        let cfg = SystemConfig::new(4, n, k);
        let set = draw_channels(&cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let b = LinkBudget { transmit_power: cfg.transmit_power, noise_power: cfg.noise_power };
        let (state, trace) = run_algorithm1(&set.cascaded, b, &Init::MatchedFilter, &FpSettings::default()).unwrap();
        prop_assert!(state.w.norm_squared() <= cfg.transmit_power * (1.0 + 1e-8));
        prop_assert!(trace.final_rate().is_finite());
        prop_assert!(trace.f1a.windows(2).all(|w| w[1] - w[0] >= -1e-9));
    }

    #[test]
    fn effective_rate_is_a_discount(rate in 0.0f64..50.0, slot in 1usize..2000, frac in 0.0f64..=1.0) {
        let l = ((slot as f64) * frac) as usize;
        let r = effective_sum_rate(rate, l, slot).unwrap();
        prop_assert!(r >= 0.0 && r <= rate);
        if l < slot {
            prop_assert!(effective_sum_rate(rate, l + 1, slot).unwrap() <= r);
        }
        prop_assert!(effective_sum_rate(rate, slot + 1, slot).is_err());
    }

    #[test]
    fn noiseless_ls_recovers_channel(seed in any::<u64>(), m in 1usize..5, n in 1usize..20, extra in 0usize..20) {
        let l = n + extra;
        let plan = PilotPlan::dft(n, l, 1.0, 1.0).unwrap();
        let h = gaussian_mats(seed, 1, m, n).remove(0);
        let y = simulate_with_noise(&h, &plan, &CMat::zeros(m, l)).unwrap();
        let err = (ls_estimate(&y, &plan).unwrap() - &h).norm() / h.norm();
        prop_assert!(err <= 1e-9);
    }

    #[test]
    fn zero_forcing_has_no_leakage(seed in any::<u64>(), m in 2usize..6, n in 1usize..10) {
        let k = m.min(3);
        let cascaded = gaussian_mats(seed, k, m, n);
        let phi: CVec = random_phases(n, &mut ChaCha8Rng::seed_from_u64(seed ^ 1));
        let h = effective_user_channels(&cascaded, &phi).unwrap();
        let w = zf_precoder(&h, 2.0).unwrap();
        let scale = h.iter().map(|v| v.norm()).fold(0.0, f64::max) * w.norm();
        for (i, hi) in h.iter().enumerate() {
            for j in 0..k {
                if i != j {
                    prop_assert!(hi.dotc(&w.column(j)).norm() <= 1e-9 * scale);
                }
            }
        }
        prop_assert!((w.norm_squared() - 2.0).abs() < 1e-9);
    }

    #[test]
    fn sinr_ignores_a_common_phase_rotation(seed in any::<u64>(), theta in 0.0f64..std::f64::consts::TAU) {
        let cascaded = gaussian_mats(seed, 2, 3, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 2);
        let phi = random_phases(5, &mut rng);
        let w = CMat::from_fn(3, 2, |_, _| complex_gaussian(&mut rng));
        let rotated = &phi * C64::from_polar(1.0, theta);
        let a = sinr_per_user(&w, &effective_user_channels(&cascaded, &phi).unwrap(), 0.5);
        let b = sinr_per_user(&w, &effective_user_channels(&cascaded, &rotated).unwrap(), 0.5);
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() <= 1e-10 * x.max(1.0));
        }
    }
}
