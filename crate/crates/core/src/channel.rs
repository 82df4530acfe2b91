//! Geometry-driven Rician channel synthesis.
//!
//! The BS-to-RIS link `G` (M x N) and the per-user RIS links `h_{r,k}` (N)
//! are mixtures of a ULA line-of-sight term and i.i.d. CN(0, 1) scattering,
//! scaled by the amplitude of a log-distance pathloss. The per-user cascaded
//! matrices `H_k = G diag(h_{r,k})` are what the optimizer consumes.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::units::{self, Level};
use crate::{CMat, CVec, Error, Result, C64};

pub const DEFAULT_TRANSMIT_POWER: f64 = 10.0;
pub const DEFAULT_NOISE_POWER: f64 = 1e-12;
pub const DEFAULT_RICIAN_FACTOR: f64 = 10.0;
pub const DEFAULT_ELEMENT_SPACING: f64 = 0.5;

/// Log-distance pathloss `intercept + slope * log10(d)` in dB.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathlossModel {
    pub intercept_db: f64,
    pub slope_db: f64,
}

impl Default for PathlossModel {
    fn default() -> Self {
        Self {
            intercept_db: 35.6,
            slope_db: 22.0,
        }
    }
}

impl PathlossModel {
    pub fn loss_db(&self, distance: f64) -> Result<f64> {
        if !(distance > 0.0) || !distance.is_finite() {
            return Err(Error::Domain(format!(
                "pathloss distance must be positive, got {distance}"
            )));
        }
        Ok(self.intercept_db + self.slope_db * distance.log10())
    }

    /// Amplitude factor `10^(-PL/20)` applied to a normalized fading term.
    pub fn amplitude(&self, distance: f64) -> Result<f64> {
        Ok(10f64.powf(-self.loss_db(distance)? / 20.0))
    }
}

/// Pathloss in dB under the default `35.6 + 22 log10(d)` law.
pub fn pathloss_db(distance: f64) -> Result<f64> {
    PathlossModel::default().loss_db(distance)
}

/// Rician factor of the RIS-user links, either shared or one per user.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum RicianFactor {
    Shared(f64),
    PerUser(Vec<f64>),
}

impl RicianFactor {
    pub fn for_user(&self, k: usize) -> f64 {
        match self {
            RicianFactor::Shared(f) => *f,
            RicianFactor::PerUser(v) => v[k],
        }
    }
}

impl Default for RicianFactor {
    fn default() -> Self {
        RicianFactor::Shared(DEFAULT_RICIAN_FACTOR)
    }
}

impl<'de> Deserialize<'de> for RicianFactor {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            One(Level),
            Many(Vec<Level>),
        }
        Ok(match Raw::deserialize(d)? {
            Raw::One(l) => RicianFactor::Shared(l.0),
            Raw::Many(v) => RicianFactor::PerUser(v.into_iter().map(|l| l.0).collect()),
        })
    }
}

/// Disk in which users are dropped uniformly when no explicit positions are given.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UserRegion {
    pub center: [f64; 2],
    pub radius: f64,
}

impl Default for UserRegion {
    fn default() -> Self {
        Self {
            center: [200.0, 50.0],
            radius: 30.0,
        }
    }
}

/// Dimensions, powers and geometry of one RIS-aided downlink.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    pub num_bs_antennas: usize,
    pub num_ris_elements: usize,
    pub num_users: usize,
    #[serde(default = "default_transmit_power", deserialize_with = "units::de_level")]
    pub transmit_power: f64,
    #[serde(default = "default_noise_power", deserialize_with = "units::de_level")]
    pub noise_power: f64,
    #[serde(default = "default_rician", deserialize_with = "units::de_level")]
    pub rician_factor_g: f64,
    #[serde(default)]
    pub rician_factor_h: RicianFactor,
    #[serde(default)]
    pub pathloss: PathlossModel,
    #[serde(default)]
    pub bs_position: [f64; 2],
    #[serde(default = "default_ris_position")]
    pub ris_position: [f64; 2],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub user_positions: Option<Vec<[f64; 2]>>,
    #[serde(default)]
    pub user_region: UserRegion,
    #[serde(default = "default_spacing")]
    pub element_spacing: f64,
    #[serde(default)]
    pub rng_seed: u64,
}

fn default_transmit_power() -> f64 {
    DEFAULT_TRANSMIT_POWER
}
fn default_noise_power() -> f64 {
    DEFAULT_NOISE_POWER
}
fn default_rician() -> f64 {
    DEFAULT_RICIAN_FACTOR
}
fn default_ris_position() -> [f64; 2] {
    [200.0, 0.0]
}
fn default_spacing() -> f64 {
    DEFAULT_ELEMENT_SPACING
}

impl SystemConfig {
    /// Default powers and geometry for the given dimensions.
    pub fn new(num_bs_antennas: usize, num_ris_elements: usize, num_users: usize) -> Self {
        Self {
            num_bs_antennas,
            num_ris_elements,
            num_users,
            transmit_power: DEFAULT_TRANSMIT_POWER,
            noise_power: DEFAULT_NOISE_POWER,
            rician_factor_g: DEFAULT_RICIAN_FACTOR,
            rician_factor_h: RicianFactor::default(),
            pathloss: PathlossModel::default(),
            bs_position: [0.0, 0.0],
            ris_position: default_ris_position(),
            user_positions: None,
            user_region: UserRegion::default(),
            element_spacing: DEFAULT_ELEMENT_SPACING,
            rng_seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |field: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::config(field, format!("must be positive and finite, got {v}")))
            }
        };
        let nonneg = |field: &str, v: f64| {
            if v >= 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::config(field, format!("must be non-negative and finite, got {v}")))
            }
        };
        for (field, v) in [
            ("num_bs_antennas", self.num_bs_antennas),
            ("num_ris_elements", self.num_ris_elements),
            ("num_users", self.num_users),
        ] {
            if v == 0 {
                return Err(Error::config(field, "must be at least 1"));
            }
        }
        positive("transmit_power", self.transmit_power)?;
        positive("noise_power", self.noise_power)?;
        positive("element_spacing", self.element_spacing)?;
        nonneg("rician_factor_g", self.rician_factor_g)?;
        match &self.rician_factor_h {
            RicianFactor::Shared(f) => nonneg("rician_factor_h", *f)?,
            RicianFactor::PerUser(v) => {
                if v.len() != self.num_users {
                    return Err(Error::config(
                        "rician_factor_h",
                        format!("has {} entries, expected {}", v.len(), self.num_users),
                    ));
                }
                for f in v {
                    nonneg("rician_factor_h", *f)?;
                }
            }
        }
        if let Some(users) = &self.user_positions {
            if users.len() != self.num_users {
                return Err(Error::config(
                    "user_positions",
                    format!("has {} entries, expected {}", users.len(), self.num_users),
                ));
            }
        } else {
            positive("user_region.radius", self.user_region.radius)?;
        }
        Ok(())
    }
}

/// One channel realization.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSet {
    /// BS-side view of the RIS-BS link, M x N.
    pub g: CMat,
    /// RIS-user links, one length-N vector per user.
    pub h_r: Vec<CVec>,
    /// `H_k = G diag(h_{r,k})`, M x N per user.
    pub cascaded: Vec<CMat>,
    /// User positions used for this draw.
    pub user_positions: Vec<[f64; 2]>,
}

impl ChannelSet {
    pub fn new(g: CMat, h_r: Vec<CVec>) -> Result<Self> {
        let n = g.ncols();
        if let Some((k, h)) = h_r.iter().enumerate().find(|(_, h)| h.len() != n) {
            return Err(Error::Shape(format!(
                "h_r[{k}] has length {}, G has {n} columns",
                h.len()
            )));
        }
        let cascaded = h_r.iter().map(|h| cascade(&g, h)).collect();
        Ok(Self {
            g,
            h_r,
            cascaded,
            user_positions: Vec::new(),
        })
    }

    pub fn num_users(&self) -> usize {
        self.h_r.len()
    }
}

/// `G diag(h)`: scales column n of `G` by `h[n]`.
pub fn cascade(g: &CMat, h: &CVec) -> CMat {
    let mut out = g.clone();
    for (mut col, hn) in out.column_iter_mut().zip(h.iter()) {
        col *= *hn;
    }
    out
}

/// ULA steering vector with entries `exp(j 2 pi s m sin(angle))`.
pub fn ula_response(num_elems: usize, angle: f64, spacing_ratio: f64) -> CVec {
    let step = 2.0 * PI * spacing_ratio * angle.sin();
    CVec::from_iterator(
        num_elems,
        (0..num_elems).map(|m| {
            if m == 0 {
                C64::new(1.0, 0.0)
            } else {
                C64::from_polar(1.0, step * m as f64)
            }
        }),
    )
}

/// A CN(0, 1) sample: independent N(0, 1/2) real and imaginary parts.
pub fn complex_gaussian<R: Rng + ?Sized>(rng: &mut R) -> C64 {
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    C64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

fn distance(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

fn rician_weights(factor: f64) -> (f64, f64) {
    if factor.is_infinite() {
        (1.0, 0.0)
    } else {
        ((factor / (factor + 1.0)).sqrt(), (1.0 / (factor + 1.0)).sqrt())
    }
}

/// Draws one realization.
///
/// Draw order is fixed: `eta`, `varrho`, the K user angles, user positions
/// (only when not given explicitly), the scattered part of `G` in
/// column-major order, then each user's scattered vector.
pub fn draw_channels<R: Rng + ?Sized>(cfg: &SystemConfig, rng: &mut R) -> Result<ChannelSet> {
    cfg.validate()?;
    let (m, n, k) = (cfg.num_bs_antennas, cfg.num_ris_elements, cfg.num_users);
    let two_pi = 2.0 * PI;

    let eta = rng.random::<f64>() * two_pi;
    let varrho = rng.random::<f64>() * two_pi;
    let iota: Vec<f64> = (0..k).map(|_| rng.random::<f64>() * two_pi).collect();

    let users: Vec<[f64; 2]> = match &cfg.user_positions {
        Some(p) => p.clone(),
        None => (0..k)
            .map(|_| {
                let r = cfg.user_region.radius * rng.random::<f64>().sqrt();
                let t = rng.random::<f64>() * two_pi;
                [
                    cfg.user_region.center[0] + r * t.cos(),
                    cfg.user_region.center[1] + r * t.sin(),
                ]
            })
            .collect(),
    };

    // G^H = d_G (sqrt(F/(F+1)) a_N^H(eta) a_M(varrho) + sqrt(1/(F+1)) G~^H),
    // so G[m, n] = d_G (w_los conj(a_M[m]) a_N[n] + w_nlos g~[m, n]).
    let d_g = cfg.pathloss.amplitude(distance(cfg.bs_position, cfg.ris_position))?;
    let (los_g, nlos_g) = rician_weights(cfg.rician_factor_g);
    let a_m = ula_response(m, varrho, cfg.element_spacing);
    let a_n = ula_response(n, eta, cfg.element_spacing);
    let mut g = CMat::zeros(m, n);
    for col in 0..n {
        for row in 0..m {
            let scatter = complex_gaussian(rng);
            g[(row, col)] = (a_m[row].conj() * a_n[col] * los_g + scatter * nlos_g) * d_g;
        }
    }

    // h_{r,k}^H = d (sqrt(F/(F+1)) a_N(iota_k) + ...), so h_{r,k} = d (w conj(a_N) + ...).
    let mut h_r = Vec::with_capacity(k);
    for (user, (&pos, &angle)) in users.iter().zip(&iota).enumerate() {
        let d_r = cfg.pathloss.amplitude(distance(cfg.ris_position, pos))?;
        let (los, nlos) = rician_weights(cfg.rician_factor_h.for_user(user));
        let a = ula_response(n, angle, cfg.element_spacing);
        let h = CVec::from_iterator(
            n,
            a.iter()
                .map(|an| (an.conj() * los + complex_gaussian(rng) * nlos) * d_r)
                .collect::<Vec<_>>(),
        );
        h_r.push(h);
    }

    let mut set = ChannelSet::new(g, h_r)?;
    set.user_positions = users;
    Ok(set)
}
