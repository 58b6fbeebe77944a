//! Closed-form transceivers: ZF, ZF-ISAC, beam synthesis (B-syn), MVDR and
//! hybrid decomposition of a full-digital receive vector.
//!
//! Notation: `H` stacks the user channels as columns, `G = H^H H`, `Z = H G^{-1}`
//! (so `H^H Z = I`), `a = a_T(φ_t)` and `p = H^H a`. `C_b = 1 - p^H G^{-1} p` is the
//! energy of `a` outside the user span, and `f_⊥ = (a - Z p) / C_b` is the
//! null-space vector with `a^H f_⊥ = 1`.

use nalgebra::SVD;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{steering_vector, Scene};
use crate::linalg::{guarded_gram_inverse, hpd_cholesky, hstack, inner, real, trace_re, unit_phase, CMat, CVec, C64};
use crate::metrics::{HybridReceiver, Precoder, SensingVectors};

/// Smallest admissible out-of-span energy of the target direction.
pub const MIN_C_B: f64 = 1e-10;
const HYBRID_MAX_ITER: usize = 200;
const HYBRID_TOL: f64 = 1e-10;

/// Pseudo-inverse geometry of the user channels.
#[derive(Debug, Clone)]
pub struct ZfBasis {
    pub h: CMat,
    pub gram_inv: CMat,
    /// `H G^{-1}`; its columns are the unnormalized ZF beams.
    pub z: CMat,
    /// `tr(G^{-1})`.
    pub trace: f64,
}

impl ZfBasis {
    pub fn new(ue_channels: &[CVec]) -> Result<Self> {
        let Some(first) = ue_channels.first() else {
            return Err(Error::InvalidInput("zero forcing needs at least one user".into()));
        };
        let n_tx = first.len();
        if ue_channels.len() > n_tx || ue_channels.iter().any(|h| h.len() != n_tx) {
            return Err(Error::InvalidInput("user channels must share a length of at least K".into()));
        }
        let h = hstack(ue_channels, n_tx);
        let gram_inv = guarded_gram_inverse(&(h.adjoint() * &h))?;
        let z = &h * &gram_inv;
        let trace = trace_re(&gram_inv);
        Ok(Self { h, gram_inv, z, trace })
    }

    pub fn n_users(&self) -> usize {
        self.h.ncols()
    }

    pub fn n_tx(&self) -> usize {
        self.h.nrows()
    }

    /// `μ = √(P / tr(G^{-1}))`.
    pub fn mu(&self, power: f64) -> f64 {
        (power / self.trace).sqrt()
    }
}

/// ZF precoder `μ H G^{-1}` and its gain `μ`.
pub fn zf_precoder(ue_channels: &[CVec], power: f64) -> Result<(Precoder, f64)> {
    let basis = ZfBasis::new(ue_channels)?;
    let mu = basis.mu(power);
    let k = basis.n_users();
    Ok((Precoder::new(&basis.z * real(mu), k)?, mu))
}

/// Target direction relative to the user span.
#[derive(Debug, Clone)]
pub struct TargetProjection {
    pub a: CVec,
    pub p: CVec,
    /// `G^{-1} p`, so `Z^H a = G^{-1} p` and `x = ‖G^{-1} p‖²`.
    pub gp: CVec,
    pub c_b: f64,
    pub f_perp: CVec,
}

impl TargetProjection {
    pub fn new(basis: &ZfBasis, target_aod: f64) -> Result<Self> {
        let a = steering_vector(basis.n_tx(), target_aod)?;
        let p = basis.h.adjoint() * &a;
        let gp = &basis.gram_inv * &p;
        let c_b = 1.0 - inner(&p, &gp).re;
        if c_b <= MIN_C_B {
            return Err(Error::TargetInCommSpan(c_b));
        }
        let f_perp = (&a - &basis.z * &p) * real(1.0 / c_b);
        Ok(Self { a, p, gp, c_b, f_perp })
    }

    /// `‖Z^H a‖²`.
    pub fn x(&self) -> f64 {
        self.gp.norm_squared()
    }
}

/// Null-space vector `f_⊥` with `H^H f_⊥ = 0` and `a_T^H f_⊥ = 1`.
pub fn f_perp(ue_channels: &[CVec], target_aod: f64) -> Result<CVec> {
    let basis = ZfBasis::new(ue_channels)?;
    Ok(TargetProjection::new(&basis, target_aod)?.f_perp)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZfIsacCoefficients {
    pub c_a: f64,
    pub c_b: f64,
    /// Weight of the target direction in the extended channel; 0 at `Γ = 0`.
    pub lambda_a: f64,
    pub mu_a: f64,
}

/// Largest SINR target the ZF-ISAC design supports.
pub fn zf_isac_max_gamma(coeffs_c_a: f64, power: f64, noise_ue: f64) -> f64 {
    power / (noise_ue * coeffs_c_a)
}

/// `(C_a, C_b)` of the channel extended by the target direction.
pub fn extended_channel_constants(ue_channels: &[CVec], target_aod: f64) -> Result<(f64, f64)> {
    let basis = ZfBasis::new(ue_channels)?;
    let proj = TargetProjection::new(&basis, target_aod)?;
    Ok((basis.trace + proj.x() / proj.c_b, proj.c_b))
}

/// ZF gain on the extended channel in closed form: `√(P / (C_a + 1/(λ_a² C_b)))`.
pub fn extended_gain(c_a: f64, c_b: f64, lambda_a: f64, power: f64) -> f64 {
    (power / (c_a + 1.0 / (lambda_a * lambda_a * c_b))).sqrt()
}

/// ZF gain on `H_e = [H, λ_a a_T]` from `tr((H_e^H H_e)^{-1}) = ‖R^{-1}‖²`, `H_e = QR`.
///
/// The QR route stays accurate when `λ_a` makes the columns of `H_e` differ in scale by many orders.
pub fn extended_gain_direct(ue_channels: &[CVec], target_aod: f64, lambda_a: f64, power: f64) -> Result<f64> {
    let n_tx = ue_channels.first().map_or(0, |h| h.len());
    if n_tx <= ue_channels.len() || !(lambda_a > 0.0) {
        return Err(Error::InvalidInput("the extended channel needs N_t > K and λ_a > 0".into()));
    }
    let mut cols = ue_channels.to_vec();
    cols.push(steering_vector(n_tx, target_aod)? * real(lambda_a));
    let r = hstack(&cols, n_tx).qr().r();
    let r_inv = r
        .solve_upper_triangular(&CMat::identity(r.nrows(), r.ncols()))
        .ok_or(Error::IllConditionedChannel(f64::INFINITY))?;
    Ok((power / r_inv.norm_squared()).sqrt())
}

/// ZF-ISAC precoder: zero forcing on the channel extended by `λ_a a_T(φ_t)`,
/// with `λ_a` chosen so that every user SINR equals `gamma`. Returns `K + 1` columns.
pub fn zf_isac_precoder(
    ue_channels: &[CVec],
    target_aod: f64,
    gamma: f64,
    power: f64,
    noise_ue: f64,
) -> Result<(Precoder, ZfIsacCoefficients)> {
    check_rate_inputs(gamma, power, noise_ue)?;
    let basis = ZfBasis::new(ue_channels)?;
    let proj = TargetProjection::new(&basis, target_aod)?;
    let c_b = proj.c_b;
    let c_a = basis.trace + proj.x() / c_b;
    let demand = gamma * noise_ue;
    if demand * c_a > power * (1.0 + 1e-12) {
        return Err(Error::InfeasibleTargetRate { gamma, max: zf_isac_max_gamma(c_a, power, noise_ue) });
    }
    let mu_a = demand.sqrt();
    let p_zf = ((power - demand * c_a) * c_b).max(0.0);
    let lambda_a = if gamma == 0.0 { 0.0 } else { 1.0 / (c_b * (power / demand - c_a)).sqrt() };

    let k = basis.n_users();
    let mut cols = Vec::with_capacity(k + 1);
    for i in 0..k {
        let zi = basis.z.column(i).into_owned();
        let g = &zi - &proj.f_perp * inner(&proj.a, &zi);
        cols.push(g * real(mu_a));
    }
    cols.push(&proj.f_perp * real(p_zf.sqrt()));
    let precoder = Precoder::new(hstack(&cols, basis.n_tx()), k)?;
    Ok((precoder, ZfIsacCoefficients { c_a, c_b, lambda_a, mu_a }))
}

fn check_rate_inputs(gamma: f64, power: f64, noise_ue: f64) -> Result<()> {
    if !(gamma >= 0.0 && gamma.is_finite()) {
        return Err(Error::InvalidInput(format!("SINR target {gamma} must be finite and non-negative")));
    }
    if !(power > 0.0 && noise_ue > 0.0) {
        return Err(Error::InvalidInput("power and noise must be positive".into()));
    }
    Ok(())
}

/// Transmit power toward the target under ZF-ISAC: `(P - Γσ² C_a) C_b`.
pub fn p_zf_target(coeffs: &ZfIsacCoefficients, gamma: f64, power: f64, noise_ue: f64) -> Result<f64> {
    let v = (power - gamma * noise_ue * coeffs.c_a) * coeffs.c_b;
    if v < -1e-12 * power {
        return Err(Error::InfeasibleTargetRate { gamma, max: zf_isac_max_gamma(coeffs.c_a, power, noise_ue) });
    }
    Ok(v.max(0.0))
}

/// Closed-form beam-synthesis allocation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BsynAllocation {
    /// Scale applied to the ZF beams so every user meets the SINR target exactly.
    pub alpha_star: f64,
    /// Null-space leakage coefficient of each communication beam.
    pub betas: Vec<C64>,
    /// Coefficients of dedicated sensing columns (empty unless degenerate).
    pub nus: Vec<C64>,
    pub p_q: f64,
    /// `F_ZF^H a_T(φ_t)`; the optimal leakage is aligned with its conjugate.
    pub a_tgt: CVec,
}

/// Ingredients of a B-syn precoder for a given `Γ`, before choosing the leakage.
#[derive(Debug, Clone)]
pub struct BsynBasis {
    pub f_zf: CMat,
    pub mu: f64,
    pub f_perp: CVec,
    pub alpha: f64,
    pub p_q: f64,
    pub a_tgt: CVec,
    pub target_tx: CVec,
}

impl BsynBasis {
    pub fn new(ue_channels: &[CVec], target_aod: f64, gamma: f64, power: f64, noise_ue: f64) -> Result<Self> {
        check_rate_inputs(gamma, power, noise_ue)?;
        let basis = ZfBasis::new(ue_channels)?;
        let proj = TargetProjection::new(&basis, target_aod)?;
        let demand = gamma * noise_ue;
        if demand * basis.trace > power * (1.0 + 1e-12) {
            return Err(Error::InfeasibleTargetRate { gamma, max: power / (noise_ue * basis.trace) });
        }
        let mu = basis.mu(power);
        let f_zf = &basis.z * real(mu);
        let a_tgt = f_zf.adjoint() * &proj.a;
        Ok(Self {
            alpha: demand.sqrt() / mu,
            p_q: ((power - demand * basis.trace) * proj.c_b).max(0.0),
            f_zf,
            mu,
            f_perp: proj.f_perp,
            a_tgt,
            target_tx: proj.a,
        })
    }

    /// `f_{c,i} = α f_ZF,i + q_i f_⊥`.
    pub fn assemble(&self, q: &CVec) -> Result<Precoder> {
        let k = self.f_zf.ncols();
        if q.len() != k {
            return Err(Error::InvalidInput("one leakage coefficient per user is required".into()));
        }
        let m = &self.f_zf * real(self.alpha) + &self.f_perp * q.transpose();
        Precoder::new(m, k)
    }

    /// `‖a_T^H F‖²` of [`BsynBasis::assemble`] in closed form.
    pub fn target_power(&self, q: &CVec) -> f64 {
        let c = self.alpha * self.alpha * self.a_tgt.norm_squared() + q.norm_squared();
        2.0 * self.alpha * self.a_tgt.dot(q).re + c
    }

    /// Power-`P_q` leakage maximizing the target power.
    pub fn optimal_allocation(&self, power: f64) -> BsynAllocation {
        let norm = self.a_tgt.norm();
        let k = self.a_tgt.len();
        let (betas, nus) = if norm * norm <= 1e-20 * power {
            (vec![C64::new(0.0, 0.0); k], vec![real(self.p_q.sqrt())])
        } else {
            let scale = self.p_q.sqrt() / norm;
            (self.a_tgt.iter().map(|c| c.conj() * scale).collect(), Vec::new())
        };
        BsynAllocation { alpha_star: self.alpha, betas, nus, p_q: self.p_q, a_tgt: self.a_tgt.clone() }
    }

    pub fn precoder(&self, alloc: &BsynAllocation) -> Result<Precoder> {
        let q = CVec::from_vec(alloc.betas.clone());
        let comm = self.assemble(&q)?;
        if alloc.nus.is_empty() {
            return Ok(comm);
        }
        let k = comm.n_comm;
        let mut cols: Vec<CVec> = (0..k).map(|i| comm.column(i)).collect();
        cols.extend(alloc.nus.iter().map(|nu| &self.f_perp * *nu));
        Precoder::new(hstack(&cols, self.f_zf.nrows()), k)
    }
}

/// B-syn precoder: scaled ZF beams plus target-aligned null-space leakage.
///
/// Uses `K` columns, or `K + 1` when the target is orthogonal to every ZF beam.
pub fn bsyn_precoder(
    ue_channels: &[CVec],
    target_aod: f64,
    gamma: f64,
    power: f64,
    noise_ue: f64,
) -> Result<(Precoder, BsynAllocation)> {
    let basis = BsynBasis::new(ue_channels, target_aod, gamma, power, noise_ue)?;
    let alloc = basis.optimal_allocation(power);
    Ok((basis.precoder(&alloc)?, alloc))
}

/// Transmit power toward the target of a B-syn allocation:
/// `2α Re(a_tgt^T β) + α²‖a_tgt‖² + P_q`, using that the leakage
/// power `‖β‖² + Σ|ν_j|²` equals `P_q` by construction.
pub fn p_bsyn_target(alloc: &BsynAllocation) -> f64 {
    let q = CVec::from_vec(alloc.betas.clone());
    let c_tgt = alloc.alpha_star * alloc.alpha_star * alloc.a_tgt.norm_squared() + alloc.p_q;
    2.0 * alloc.alpha_star * alloc.a_tgt.dot(&q).re + c_tgt
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetPowerReport {
    pub p_zf_tgt: f64,
    pub p_bsyn_tgt: f64,
    pub improvement: f64,
}

pub fn target_power_report(
    ue_channels: &[CVec],
    target_aod: f64,
    gamma: f64,
    power: f64,
    noise_ue: f64,
) -> Result<TargetPowerReport> {
    let (_, coeffs) = zf_isac_precoder(ue_channels, target_aod, gamma, power, noise_ue)?;
    let (_, alloc) = bsyn_precoder(ue_channels, target_aod, gamma, power, noise_ue)?;
    let p_zf_tgt = p_zf_target(&coeffs, gamma, power, noise_ue)?;
    let p_bsyn_tgt = p_bsyn_target(&alloc);
    Ok(TargetPowerReport { p_zf_tgt, p_bsyn_tgt, improvement: p_bsyn_tgt - p_zf_tgt })
}

/// Both sides of the target-power improvement identity:
/// `P_bsyn - P_zf = (2Γσ²/μ²)‖F_ZF^H a‖² + 2√(Γσ² P_q / μ²)‖F_ZF^H a‖`.
pub fn improvement_identity(
    ue_channels: &[CVec],
    target_aod: f64,
    gamma: f64,
    power: f64,
    noise_ue: f64,
) -> Result<(f64, f64)> {
    let report = target_power_report(ue_channels, target_aod, gamma, power, noise_ue)?;
    let (f_zf, mu) = zf_precoder(ue_channels, power)?;
    let a = steering_vector(f_zf.n_tx(), target_aod)?;
    let proj = f_zf.matrix.adjoint() * a;
    let norm = proj.norm();
    let demand = gamma * noise_ue;
    let basis = BsynBasis::new(ue_channels, target_aod, gamma, power, noise_ue)?;
    let rhs = 2.0 * demand / (mu * mu) * norm * norm + 2.0 * (demand * basis.p_q / (mu * mu)).sqrt() * norm;
    Ok((report.improvement, rhs))
}

/// MVDR receive vector `R^{-1} a_R / (a_R^H R^{-1} a_R)` for the deployed precoder.
pub fn mvdr_receiver(scene: &Scene, precoder: &Precoder, noise_tmt: f64, n_rx: usize) -> Result<CVec> {
    let sv = SensingVectors::new(scene, precoder.n_tx(), n_rx)?;
    let (w, _) = mvdr_from_vectors(&sv, &precoder.matrix, noise_tmt)?;
    Ok(w)
}

/// MVDR vector and `a_R^H R^{-1} a_R`.
pub fn mvdr_from_vectors(sv: &SensingVectors, f: &CMat, noise_tmt: f64) -> Result<(CVec, f64)> {
    if !(noise_tmt > 0.0) {
        return Err(Error::InvalidInput("receiver noise must be positive".into()));
    }
    let r = sv.clutter_noise_covariance(f, noise_tmt);
    let chol = hpd_cholesky(r)
        .ok_or_else(|| Error::InvalidInput("clutter-plus-noise covariance is not positive definite".into()))?;
    let ri_a = chol.solve(&sv.target_rx);
    let q = inner(&sv.target_rx, &ri_a).re;
    Ok((ri_a * real(1.0 / q), q))
}

/// Optimal SCNR over all full-digital receivers: `σ_t² ‖a_T^H F‖² a_R^H R^{-1} a_R`.
pub fn mvdr_optimal_scnr(scene: &Scene, precoder: &Precoder, noise_tmt: f64, n_rx: usize) -> Result<f64> {
    let sv = SensingVectors::new(scene, precoder.n_tx(), n_rx)?;
    let (_, q) = mvdr_from_vectors(&sv, &precoder.matrix, noise_tmt)?;
    let p_tgt = (precoder.matrix.adjoint() * &sv.target_tx).norm_squared();
    Ok(sv.target_gain_var * p_tgt * q)
}

#[derive(Debug, Clone, PartialEq)]
pub struct HybridDecomposition {
    pub receiver: HybridReceiver,
    /// `‖v - W_RF w_ls‖ / ‖v‖` of the least-squares fit (0 for `v = 0`).
    pub relative_residual: f64,
    /// `‖w_ls‖`; the returned digital filter is `w_ls / scale`.
    pub scale: f64,
    pub iterations: usize,
}

fn least_squares(w_rf: &CMat, v: &CVec) -> CVec {
    SVD::new(w_rf.clone(), true, true).solve(v, 1e-12).unwrap_or_else(|_| CVec::zeros(w_rf.ncols()))
}

/// Factor a receive vector as `W_RF w` with unit-modulus `W_RF`.
///
/// With two or more RF chains every entry `v_m` is split exactly into two
/// unit-modulus terms of common weight `c = max|v_m| / 2`; the alternating
/// least-squares / phase-extraction refinement then runs from that point.
pub fn hybrid_decompose(v: &CVec, n_rf: usize) -> Result<HybridDecomposition> {
    let n = v.len();
    if n_rf == 0 || n_rf > n {
        return Err(Error::InvalidInput(format!("need 1 <= n_rf <= {n}, got {n_rf}")));
    }
    let vnorm = v.norm();
    if vnorm == 0.0 {
        let receiver = HybridReceiver::new(CMat::from_element(n, n_rf, real(1.0)), CVec::zeros(n_rf))?;
        return Ok(HybridDecomposition { receiver, relative_residual: 0.0, scale: 0.0, iterations: 0 });
    }

    let mut w_rf = CMat::from_element(n, n_rf, real(1.0));
    if n_rf == 1 {
        for m in 0..n {
            w_rf[(m, 0)] = unit_phase(v[m]);
        }
    } else {
        let c = v.iter().map(|z| z.norm()).fold(0.0, f64::max) / 2.0;
        for m in 0..n {
            let psi = v[m].arg();
            let delta = (v[m].norm() / (2.0 * c)).clamp(0.0, 1.0).acos();
            w_rf[(m, 0)] = C64::from_polar(1.0, psi + delta);
            w_rf[(m, 1)] = C64::from_polar(1.0, psi - delta);
            for j in 2..n_rf {
                w_rf[(m, j)] = unit_phase(v[m]);
            }
        }
    }

    let residual = |w_rf: &CMat, w: &CVec| (v - w_rf * w).norm() / vnorm;
    let mut w = least_squares(&w_rf, v);
    let mut res = residual(&w_rf, &w);
    let mut iterations = 0;
    while iterations < HYBRID_MAX_ITER && res > HYBRID_TOL {
        iterations += 1;
        for j in 0..n_rf {
            if w[j].norm() == 0.0 {
                continue;
            }
            let others = &w_rf * &w - w_rf.column(j) * w[j];
            let e = v - others;
            for m in 0..n {
                w_rf[(m, j)] = unit_phase(e[m] * w[j].conj());
            }
        }
        w = least_squares(&w_rf, v);
        let new = residual(&w_rf, &w);
        let change = res - new;
        res = new;
        if change.abs() < HYBRID_TOL {
            break;
        }
    }
    let scale = w.norm();
    let digital = if scale > 0.0 { w * real(1.0 / scale) } else { w };
    Ok(HybridDecomposition { receiver: HybridReceiver::new(w_rf, digital)?, relative_residual: res, scale, iterations })
}
