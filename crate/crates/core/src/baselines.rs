//! Reference precoders and reflectors, plus an exhaustive phase oracle for
//! small surfaces.

use std::f64::consts::TAU;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::optimizer::{effective_user_channels, sum_rate, LinkBudget};
use crate::{CMat, CVec, Error, Result, C64};

/// Reciprocal condition number below which the stacked channel counts as rank deficient.
const ZF_RCOND: f64 = 1e-10;
pub const MAX_GRID_ELEMENTS: usize = 8;
pub const MAX_GRID_CANDIDATES: u64 = 10_000_000;
pub const DEFAULT_RANDOM_DRAWS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Precoder {
    Zf,
    Mmse,
    MatchedFilter,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PowerPolicy {
    /// Every column gets `P_T / K`.
    EqualPerUser,
    /// One common scale so that `||W||_F^2 = P_T`.
    FullPower,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reflector {
    RandomPhase { draws: usize },
    AllOnes,
    GridSearch { levels: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BaselineScheme {
    pub precoder: Precoder,
    pub reflector: Reflector,
    pub power_policy: PowerPolicy,
}

impl Precoder {
    /// ZF and MF split power equally; MMSE keeps its relative column norms.
    pub fn default_policy(self) -> PowerPolicy {
        match self {
            Precoder::Zf | Precoder::MatchedFilter => PowerPolicy::EqualPerUser,
            Precoder::Mmse => PowerPolicy::FullPower,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Precoder::Zf => "zf",
            Precoder::Mmse => "mmse",
            Precoder::MatchedFilter => "mf",
        }
    }
}

impl BaselineScheme {
    pub fn with_random_phase(precoder: Precoder) -> Self {
        Self {
            precoder,
            reflector: Reflector::RandomPhase {
                draws: DEFAULT_RANDOM_DRAWS,
            },
            power_policy: precoder.default_policy(),
        }
    }

    pub fn name(&self) -> String {
        let refl = match self.reflector {
            Reflector::RandomPhase { .. } => "random_phase".to_string(),
            Reflector::AllOnes => "all_ones".to_string(),
            Reflector::GridSearch { levels } => format!("grid{levels}"),
        };
        format!("{}+{}", self.precoder.name(), refl)
    }
}

fn stack(h: &[CVec]) -> Result<CMat> {
    let m = h.first().map(|v| v.len()).ok_or_else(|| Error::Shape("no users".into()))?;
    if h.iter().any(|v| v.len() != m) {
        return Err(Error::Shape("user channels differ in length".into()));
    }
    Ok(CMat::from_columns(h))
}

fn apply_policy(mut w: CMat, policy: PowerPolicy, transmit_power: f64) -> CMat {
    let k = w.ncols();
    match policy {
        PowerPolicy::EqualPerUser => {
            let target = (transmit_power / k as f64).sqrt();
            for mut col in w.column_iter_mut() {
                let n = col.norm();
                if n > 0.0 {
                    col *= C64::new(target / n, 0.0);
                }
            }
        }
        PowerPolicy::FullPower => {
            let n = w.norm();
            if n > 0.0 {
                w *= C64::new(transmit_power.sqrt() / n, 0.0);
            }
        }
    }
    w
}

/// Zero-forcing directions `H (H^H H)^{-1}` under `policy`.
pub fn zf_directions(h: &[CVec]) -> Result<CMat> {
    let hs = stack(h)?;
    let (m, k) = hs.shape();
    if k > m {
        return Err(Error::RankDeficient(format!("{k} users exceed {m} antennas")));
    }
    let sv = hs.singular_values();
    let max = sv.max();
    let min = sv.min();
    if !(max > 0.0) || min < ZF_RCOND * max {
        return Err(Error::RankDeficient("stacked user channels are rank deficient".into()));
    }
    let gram = hs.ad_mul(&hs);
    let inv = gram
        .cholesky()
        .ok_or_else(|| Error::RankDeficient("channel Gram matrix is singular".into()))?
        .inverse();
    Ok(hs * inv)
}

pub fn zf_precoder(h: &[CVec], transmit_power: f64) -> Result<CMat> {
    Ok(apply_policy(zf_directions(h)?, PowerPolicy::EqualPerUser, transmit_power))
}

/// Regularized directions `(sum h h^H + K sigma^2 / P_T I)^{-1} h_k`.
pub fn mmse_directions(h: &[CVec], transmit_power: f64, noise_power: f64) -> Result<CMat> {
    let hs = stack(h)?;
    let (m, k) = hs.shape();
    let reg = k as f64 * noise_power / transmit_power;
    let a = &hs * hs.adjoint() + CMat::identity(m, m) * C64::new(reg, 0.0);
    let a = (&a + a.adjoint()) * C64::new(0.5, 0.0);
    match a.clone().cholesky() {
        Some(ch) => Ok(ch.solve(&hs)),
        None => {
            // reg underflowed against a rank-deficient sum; fall back to LU
            a.lu()
                .solve(&hs)
                .ok_or_else(|| Error::RankDeficient("MMSE system is singular".into()))
        }
    }
}

pub fn mmse_precoder(h: &[CVec], transmit_power: f64, noise_power: f64) -> Result<CMat> {
    Ok(apply_policy(
        mmse_directions(h, transmit_power, noise_power)?,
        PowerPolicy::FullPower,
        transmit_power,
    ))
}

pub fn mf_precoder(h: &[CVec], transmit_power: f64) -> Result<CMat> {
    Ok(apply_policy(stack(h)?, PowerPolicy::EqualPerUser, transmit_power))
}

/// Precoder for fixed effective channels.
pub fn precode(precoder: Precoder, policy: PowerPolicy, h: &[CVec], budget: LinkBudget) -> Result<CMat> {
    let dirs = match precoder {
        Precoder::Zf => zf_directions(h)?,
        Precoder::Mmse => mmse_directions(h, budget.transmit_power, budget.noise_power)?,
        Precoder::MatchedFilter => stack(h)?,
    };
    Ok(apply_policy(dirs, policy, budget.transmit_power))
}

pub fn random_phases<R: Rng + ?Sized>(n: usize, rng: &mut R) -> CVec {
    CVec::from_fn(n, |_, _| C64::from_polar(1.0, rng.random::<f64>() * TAU))
}

fn rate_at(
    cascaded: &[CMat],
    phi: &CVec,
    precoder: Precoder,
    policy: PowerPolicy,
    budget: LinkBudget,
) -> Result<f64> {
    let h = effective_user_channels(cascaded, phi)?;
    let w = precode(precoder, policy, &h, budget)?;
    Ok(sum_rate(&w, &h, budget.noise_power))
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridResult {
    pub phi: CVec,
    pub rate: f64,
    /// Phase indices, element 0 pinned to 0.
    pub indices: Vec<usize>,
}

fn grid_size(n: usize, levels: usize) -> Result<u64> {
    if levels == 0 {
        return Err(Error::Domain("grid needs at least one phase level".into()));
    }
    if n == 0 || n > MAX_GRID_ELEMENTS {
        return Err(Error::TooLarge(format!(
            "grid search supports 1..={MAX_GRID_ELEMENTS} elements, got {n}"
        )));
    }
    let mut total: u64 = 1;
    for _ in 1..n {
        total = total
            .checked_mul(levels as u64)
            .filter(|t| *t <= MAX_GRID_CANDIDATES)
            .ok_or_else(|| {
                Error::TooLarge(format!("{levels}^{} grid candidates exceed {MAX_GRID_CANDIDATES}", n - 1))
            })?;
    }
    Ok(total)
}

/// Exhaustive search over `phi_n = exp(j 2 pi q / Q)`.
///
/// Element 0 is pinned to phase 0: a common rotation of all phases leaves
/// every SINR unchanged, so this loses nothing. Ties go to the
/// lexicographically smallest index vector.
pub fn grid_search_phases(
    cascaded: &[CMat],
    precoder: Precoder,
    policy: PowerPolicy,
    levels: usize,
    budget: LinkBudget,
) -> Result<GridResult> {
    let n = cascaded.first().map_or(0, |h| h.ncols());
    let total = grid_size(n, levels)?;
    let table: Vec<C64> = (0..levels)
        .map(|q| C64::from_polar(1.0, TAU * q as f64 / levels as f64))
        .collect();

    // Candidate c encodes indices 1..N with element N-1 the fastest digit,
    // so numeric order is lexicographic order.
    let decode = |mut c: u64| {
        let mut idx = vec![0usize; n];
        for slot in idx[1..].iter_mut().rev() {
            *slot = (c % levels as u64) as usize;
            c /= levels as u64;
        }
        idx
    };
    let phi_of = |idx: &[usize]| CVec::from_iterator(n, idx.iter().map(|&q| table[q]));

    let best = (0..total)
        .into_par_iter()
        .filter_map(|c| {
            let phi = phi_of(&decode(c));
            rate_at(cascaded, &phi, precoder, policy, budget)
                .ok()
                .filter(|r| r.is_finite())
                .map(|r| (r, c))
        })
        .reduce_with(|a, b| {
            if b.0 > a.0 || (b.0 == a.0 && b.1 < a.1) {
                b
            } else {
                a
            }
        })
        .ok_or_else(|| Error::RankDeficient("precoder failed on every grid candidate".into()))?;

    let indices = decode(best.1);
    Ok(GridResult {
        phi: phi_of(&indices),
        rate: best.0,
        indices,
    })
}

/// Sum rate of a baseline scheme. Random reflectors report the mean over their draws.
pub fn evaluate<R: Rng + ?Sized>(
    scheme: &BaselineScheme,
    cascaded: &[CMat],
    budget: LinkBudget,
    rng: &mut R,
) -> Result<f64> {
    let n = cascaded.first().map_or(0, |h| h.ncols());
    match scheme.reflector {
        Reflector::AllOnes => {
            let phi = CVec::from_element(n, C64::new(1.0, 0.0));
            rate_at(cascaded, &phi, scheme.precoder, scheme.power_policy, budget)
        }
        Reflector::RandomPhase { draws } => {
            if draws == 0 {
                return Err(Error::config("draws", "must be at least 1"));
            }
            let mut total = 0.0;
            for _ in 0..draws {
                let phi = random_phases(n, rng);
                total += rate_at(cascaded, &phi, scheme.precoder, scheme.power_policy, budget)?;
            }
            Ok(total / draws as f64)
        }
        Reflector::GridSearch { levels } => {
            grid_search_phases(cascaded, scheme.precoder, scheme.power_policy, levels, budget)
                .map(|g| g.rate)
        }
    }
}
