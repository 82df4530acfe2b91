//! Closed-form block updates and the objectives they ascend.
//!
//! Convention: the effective channel of user k is `h_k = H_k phi`, so that
//! `h_k^H w = phi^H H_k^H w = phi^H b`. All rates are in nats.

use nalgebra::SymmetricEigen;

use crate::{CMat, CVec, Error, Result, C64};

/// Below this modulus the per-element phase objective is treated as flat.
pub const FLAT_PHASE_TOL: f64 = 1e-14;

/// `h_k = H_k phi`.
pub fn effective_user_channel(cascaded: &CMat, phi: &CVec) -> Result<CVec> {
    if cascaded.ncols() != phi.len() {
        return Err(Error::Shape(format!(
            "cascaded channel has {} columns, phase vector has {} entries",
            cascaded.ncols(),
            phi.len()
        )));
    }
    Ok(cascaded * phi)
}

pub(crate) fn effective_channels(cascaded: &[CMat], phi: &CVec) -> Vec<CVec> {
    cascaded.iter().map(|h| h * phi).collect()
}

/// `G[k][i] = h_k^H w_i`.
fn link_gains(w: &CMat, h: &[CVec]) -> Vec<Vec<C64>> {
    h.iter()
        .map(|hk| w.column_iter().map(|wi| hk.dotc(&wi)).collect())
        .collect()
}

/// Per-user SINR `|h_k^H w_k|^2 / (sum_{i != k} |h_k^H w_i|^2 + noise)`.
pub fn sinr_per_user(w: &CMat, h: &[CVec], noise_power: f64) -> Vec<f64> {
    link_gains(w, h)
        .iter()
        .enumerate()
        .map(|(k, row)| {
            let desired = row[k].norm_sqr();
            let total: f64 = row.iter().map(|g| g.norm_sqr()).sum();
            desired / (total - desired + noise_power)
        })
        .collect()
}

pub fn rate_from_sinr(gamma: &[f64]) -> f64 {
    gamma.iter().map(|g| g.ln_1p()).sum()
}

/// Sum rate `sum_k ln(1 + gamma_k)`.
pub fn sum_rate(w: &CMat, h: &[CVec], noise_power: f64) -> f64 {
    rate_from_sinr(&sinr_per_user(w, h, noise_power))
}

/// The Lagrangian-dual surrogate evaluated from SINRs.
pub fn f1a_from_sinr(alpha: &[f64], gamma: &[f64]) -> f64 {
    alpha
        .iter()
        .zip(gamma)
        .map(|(&a, &g)| a.ln_1p() - a + (1.0 + a) * g / (1.0 + g))
        .sum()
}

/// `sum ln(1+alpha) - sum alpha + sum (1+alpha) gamma / (1+gamma)`.
pub fn eval_f1a(alpha: &[f64], w: &CMat, phi: &CVec, cascaded: &[CMat], noise_power: f64) -> f64 {
    let h = effective_channels(cascaded, phi);
    f1a_from_sinr(alpha, &sinr_per_user(w, &h, noise_power))
}

/// The maximizer of the surrogate over alpha is the current SINR.
pub fn update_alpha(gamma: &[f64]) -> Vec<f64> {
    gamma.iter().map(|g| g.max(0.0)).collect()
}

/// Quadratic-transform auxiliaries of the beamforming block.
pub fn update_beta(w: &CMat, h: &[CVec], alpha: &[f64], noise_power: f64) -> Vec<C64> {
    link_gains(w, h)
        .iter()
        .zip(alpha)
        .enumerate()
        .map(|(k, (row, &a))| {
            let total: f64 = row.iter().map(|g| g.norm_sqr()).sum();
            row[k] * ((1.0 + a).sqrt() / (total + noise_power))
        })
        .collect()
}

/// Quadratic-transform objective of the beamforming block.
pub fn f2b(w: &CMat, beta: &[C64], alpha: &[f64], h: &[CVec], noise_power: f64) -> f64 {
    link_gains(w, h)
        .iter()
        .enumerate()
        .map(|(k, row)| {
            let total: f64 = row.iter().map(|g| g.norm_sqr()).sum();
            2.0 * (1.0 + alpha[k]).sqrt() * (beta[k].conj() * row[k]).re
                - beta[k].norm_sqr() * (total + noise_power)
        })
        .sum()
}

/// `f2b - lambda (sum ||w_k||^2 - P_T)`.
pub fn f2b_lagrangian(
    w: &CMat,
    beta: &[C64],
    alpha: &[f64],
    h: &[CVec],
    noise_power: f64,
    lambda: f64,
    transmit_power: f64,
) -> f64 {
    f2b(w, beta, alpha, h, noise_power) - lambda * (w.norm_squared() - transmit_power)
}

/// Result of the beamforming update.
#[derive(Debug, Clone)]
pub struct BeamformerUpdate {
    pub w: CMat,
    /// Dual variable of the power constraint.
    pub lambda: f64,
    /// Bisection steps spent on `lambda` (0 when unconstrained).
    pub bisection_steps: usize,
}

const POWER_REL_TOL: f64 = 1e-12;
const MAX_BISECTION_STEPS: usize = 100;

/// Closed-form beamformers `w_k = sqrt(1+alpha_k) beta_k (A + lambda I)^{-1} h_k`
/// with `A = sum_i |beta_i|^2 h_i h_i^H` and the smallest `lambda >= 0`
/// meeting the power budget.
///
/// `A` is diagonalized once, after which the total power is a scalar
/// function of `lambda`. When `A` is rank-deficient (K < M) the `lambda = 0`
/// solution is the pseudo-inverse limit: every `h_k` with `beta_k != 0` lies
/// in the range of `A`.
pub fn update_w(beta: &[C64], alpha: &[f64], h: &[CVec], transmit_power: f64) -> BeamformerUpdate {
    let k = h.len();
    let m = h.first().map_or(0, |v| v.len());
    if beta.iter().all(|b| *b == C64::new(0.0, 0.0)) {
        return BeamformerUpdate {
            w: CMat::zeros(m, k),
            lambda: 0.0,
            bisection_steps: 0,
        };
    }

    let mut a = CMat::zeros(m, m);
    for (b, hk) in beta.iter().zip(h) {
        a.gerc(C64::new(b.norm_sqr(), 0.0), hk, hk, C64::new(1.0, 0.0));
    }
    a = (&a + a.adjoint()) * C64::new(0.5, 0.0);
    let eig = SymmetricEigen::new(a);
    let mu = eig.eigenvalues;
    let q = eig.eigenvectors;
    let mu_max = mu.iter().cloned().fold(0.0, f64::max);
    let null_tol = mu_max * 1e-12 * m as f64;
    let in_range: Vec<bool> = mu.iter().map(|&x| x > null_tol).collect();

    let coef: Vec<C64> = beta
        .iter()
        .zip(alpha)
        .map(|(b, a)| *b * (1.0 + a).sqrt())
        .collect();
    // |coef_k|^2 |(Q^H h_k)_m|^2 summed over users, per eigen-direction.
    let projections: Vec<CVec> = h
        .iter()
        .map(|hk| {
            let mut g = q.ad_mul(hk);
            for (gm, keep) in g.iter_mut().zip(&in_range) {
                if !keep {
                    *gm = C64::new(0.0, 0.0);
                }
            }
            g
        })
        .collect();
    let mut weight = vec![0.0; m];
    for (c, g) in coef.iter().zip(&projections) {
        for (wm, gm) in weight.iter_mut().zip(g.iter()) {
            *wm += c.norm_sqr() * gm.norm_sqr();
        }
    }
    let power = |lambda: f64| -> f64 {
        weight
            .iter()
            .zip(mu.iter())
            .zip(&in_range)
            .filter(|(_, keep)| **keep)
            .map(|((w, mu), _)| w / ((mu + lambda) * (mu + lambda)))
            .sum()
    };

    let mut lambda = 0.0;
    let mut steps = 0;
    if power(0.0) > transmit_power {
        // P(lambda) <= sum(weight) / lambda^2, so this bound is feasible.
        let mut hi = (weight.iter().sum::<f64>() / transmit_power).sqrt();
        while power(hi) > transmit_power {
            hi *= 2.0;
        }
        let mut lo = 0.0;
        lambda = hi;
        while steps < MAX_BISECTION_STEPS {
            steps += 1;
            let mid = 0.5 * (lo + hi);
            let p = power(mid);
            if (p - transmit_power).abs() <= POWER_REL_TOL * transmit_power {
                lambda = mid;
                break;
            }
            if p > transmit_power {
                lo = mid;
            } else {
                hi = mid;
            }
            lambda = hi;
        }
    }

    let mut w = CMat::zeros(m, k);
    for (idx, (c, g)) in coef.iter().zip(&projections).enumerate() {
        let scaled = CVec::from_iterator(
            m,
            g.iter()
                .zip(mu.iter())
                .zip(&in_range)
                .map(|((gm, mu), keep)| {
                    if *keep {
                        *gm / (mu + lambda) * *c
                    } else {
                        C64::new(0.0, 0.0)
                    }
                }),
        );
        w.set_column(idx, &(&q * scaled));
    }
    BeamformerUpdate {
        w,
        lambda,
        bisection_steps: steps,
    }
}

/// Per-user cross channels `b_{i,k} = H_k^H w_i`.
///
/// Stored per user k as an N x K matrix whose column i is `b_{i,k}`.
#[derive(Debug, Clone)]
pub struct CrossChannels {
    per_user: Vec<CMat>,
}

impl CrossChannels {
    pub fn new(w: &CMat, cascaded: &[CMat]) -> Self {
        Self {
            per_user: cascaded.iter().map(|hk| hk.ad_mul(w)).collect(),
        }
    }

    pub fn num_users(&self) -> usize {
        self.per_user.len()
    }

    pub fn len(&self) -> usize {
        self.per_user.first().map_or(0, |b| b.nrows())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `b_{i,k}`.
    pub fn get(&self, i: usize, k: usize) -> CVec {
        self.per_user[k].column(i).into_owned()
    }

    /// `phi^H b_{i,k}` for all i, for user k.
    fn projections(&self, phi: &CVec, k: usize) -> CVec {
        self.per_user[k].tr_mul(&phi.conjugate())
    }
}

/// Quadratic-transform auxiliaries of the reflection block.
pub fn update_epsilon(phi: &CVec, b: &CrossChannels, alpha: &[f64], noise_power: f64) -> Vec<C64> {
    (0..b.num_users())
        .map(|k| {
            let s = b.projections(phi, k);
            let total: f64 = s.iter().map(|x| x.norm_sqr()).sum();
            s[k] * ((1.0 + alpha[k]).sqrt() / (total + noise_power))
        })
        .collect()
}

/// Fractional reflection objective `sum (1+alpha_k) |phi^H b_kk|^2 / (sum_i |phi^H b_ik|^2 + noise)`.
pub fn f3(phi: &CVec, b: &CrossChannels, alpha: &[f64], noise_power: f64) -> f64 {
    (0..b.num_users())
        .map(|k| {
            let s = b.projections(phi, k);
            let total: f64 = s.iter().map(|x| x.norm_sqr()).sum();
            (1.0 + alpha[k]) * s[k].norm_sqr() / (total + noise_power)
        })
        .sum()
}

/// Quadratic-transform objective of the reflection block.
pub fn f3a(phi: &CVec, eps: &[C64], b: &CrossChannels, alpha: &[f64], noise_power: f64) -> f64 {
    (0..b.num_users())
        .map(|k| {
            let s = b.projections(phi, k);
            let total: f64 = s.iter().map(|x| x.norm_sqr()).sum();
            2.0 * (1.0 + alpha[k]).sqrt() * (eps[k].conj() * s[k]).re
                - eps[k].norm_sqr() * (total + noise_power)
        })
        .sum()
}

/// `f3b(phi) = -phi^H U phi + 2 Re{phi^H V} - C` with U kept in factored form
/// `U = sum_j weight_j b_j b_j^H` over all (k, i) pairs.
#[derive(Debug, Clone)]
pub struct PhaseQuadratic {
    weights: Vec<f64>,
    /// J x N; column n holds `b_j[n]` for every factor j.
    factors_t: CMat,
    pub v: CVec,
    pub c: f64,
}

/// Builds U, V and C from the reflection auxiliaries.
pub fn compute_uv(eps: &[C64], alpha: &[f64], b: &CrossChannels, noise_power: f64) -> PhaseQuadratic {
    let k_users = b.num_users();
    let n = b.len();
    let mut weights = Vec::with_capacity(k_users * k_users);
    let mut factors_t = CMat::zeros(k_users * k_users, n);
    let mut v = CVec::zeros(n);
    let mut c = 0.0;
    for k in 0..k_users {
        let e2 = eps[k].norm_sqr();
        let bk = &b.per_user[k];
        for i in 0..k_users {
            let j = weights.len();
            weights.push(e2);
            for (dst, src) in factors_t.row_mut(j).iter_mut().zip(bk.column(i).iter()) {
                *dst = *src;
            }
        }
        v.axpy(eps[k].conj() * (1.0 + alpha[k]).sqrt(), &bk.column(k), C64::new(1.0, 0.0));
        c += e2 * noise_power;
    }
    PhaseQuadratic {
        weights,
        factors_t,
        v,
        c,
    }
}

impl PhaseQuadratic {
    pub fn len(&self) -> usize {
        self.v.len()
    }

    pub fn is_empty(&self) -> bool {
        self.v.is_empty()
    }

    /// Dense N x N form of U.
    pub fn u_dense(&self) -> CMat {
        let n = self.len();
        let mut u = CMat::zeros(n, n);
        for (j, w) in self.weights.iter().enumerate() {
            let bj = self.factors_t.row(j).transpose();
            u.gerc(C64::new(*w, 0.0), &bj, &bj, C64::new(1.0, 0.0));
        }
        u
    }

    /// `z_j = b_j^H phi`.
    fn factor_projections(&self, phi: &CVec) -> CVec {
        self.factors_t.conjugate() * phi
    }

    pub fn eval(&self, phi: &CVec) -> f64 {
        let z = self.factor_projections(phi);
        let quad: f64 = self
            .weights
            .iter()
            .zip(z.iter())
            .map(|(w, z)| w * z.norm_sqr())
            .sum();
        -quad + 2.0 * phi.dotc(&self.v).re - self.c
    }

    /// `B_2 = v_n - sum_{q != n} u_{n,q} phi_q` for one coordinate.
    pub fn coordinate_coefficient(&self, phi: &CVec, n: usize) -> C64 {
        let z = self.factor_projections(phi);
        self.coefficient_with(&z, phi, n)
    }

    fn coefficient_with(&self, z: &CVec, phi: &CVec, n: usize) -> C64 {
        let col = self.factors_t.column(n);
        let mut u_phi = C64::new(0.0, 0.0);
        let mut u_nn = 0.0;
        for ((w, bjn), zj) in self.weights.iter().zip(col.iter()).zip(z.iter()) {
            u_phi += *bjn * *zj * *w;
            u_nn += w * bjn.norm_sqr();
        }
        self.v[n] - (u_phi - phi[n] * u_nn)
    }

    /// One Gauss-Seidel sweep over n = 0..N in place, `O(N K^2)`.
    ///
    /// Returns the number of coordinates that changed.
    pub fn sweep(&self, phi: &mut CVec) -> usize {
        let mut z = self.factor_projections(phi);
        let mut changed = 0;
        for n in 0..phi.len() {
            let b2 = self.coefficient_with(&z, phi, n);
            if b2.norm() <= FLAT_PHASE_TOL {
                continue;
            }
            let new = C64::from_polar(1.0, b2.arg());
            let delta = new - phi[n];
            if delta != C64::new(0.0, 0.0) {
                changed += 1;
                for (zj, bjn) in z.iter_mut().zip(self.factors_t.column(n).iter()) {
                    *zj += bjn.conj() * delta;
                }
                phi[n] = new;
            }
        }
        changed
    }
}

/// `f3b` from an explicit U and V.
pub fn f3b_dense(phi: &CVec, u: &CMat, v: &CVec, c: f64) -> f64 {
    -(phi.dotc(&(u * phi))).re + 2.0 * phi.dotc(v).re - c
}

/// Dense Gauss-Seidel sweep `phi_n <- exp(j angle(B_2))`, `O(N^2)`.
pub fn update_phi_sweep(phi: &CVec, u: &CMat, v: &CVec) -> CVec {
    let mut out = phi.clone();
    for n in 0..out.len() {
        let mut b2 = v[n];
        for q in 0..out.len() {
            if q != n {
                b2 -= u[(n, q)] * out[q];
            }
        }
        if b2.norm() > FLAT_PHASE_TOL {
            out[n] = C64::from_polar(1.0, b2.arg());
        }
    }
    out
}
