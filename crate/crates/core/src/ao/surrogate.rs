//! Quadratic-transform surrogate of the weighted objective and the closed-form
//! auxiliary-variable updates.
//!
//! With `v = W_RF w` and `n = σ_t (a_R^H v) F^H a_T` the sensing term is
//!
//! ```text
//! F_R = κ_r (2 Re(n^H u_r) - ‖u_r‖² P_Q)
//! ```
//!
//! and user `k` contributes `F_k = κ_c (2 Re(u_k h_k^H f_k) - |u_k|² B_k)`, where
//! `B_k` is its interference-plus-noise power. Both are maximized in closed form
//! by `u_r = n / P_Q` and `u_k = f_k^H h_k / B_k`, at which point they equal
//! `κ_r·SCNR` and `κ_c·γ_k`.

use crate::error::{Error, Result};
use crate::linalg::{inner, real, CMat, CVec, C64};
use crate::metrics::interference_plus_noise;
use crate::qcqp::Curvature;

use super::{AoContext, AoState};

/// `n = σ_t (a_R^H v) F^H a_T`.
pub fn sensing_numerator(ctx: &AoContext, v: &CVec, f: &CMat) -> CVec {
    let scale = inner(&ctx.sv.target_rx, v) * ctx.sigma_t;
    (f.adjoint() * &ctx.sv.target_tx) * scale
}

/// Clutter-plus-noise power `P_Q` at the effective receive vector.
pub fn clutter_noise_power(ctx: &AoContext, v: &CVec, f: &CMat) -> f64 {
    let clutter: f64 = ctx
        .sv
        .clutter
        .iter()
        .map(|(at, ar, var)| var * inner(ar, v).norm_sqr() * (f.adjoint() * at).norm_squared())
        .sum();
    clutter + ctx.config.noise_tmt * v.norm_squared()
}

/// `F_R` for an explicit effective receive vector and precoder.
pub fn sensing_surrogate(ctx: &AoContext, v: &CVec, f: &CMat, u_r: &CVec) -> f64 {
    let n = sensing_numerator(ctx, v, f);
    ctx.config.weight_sensing * (2.0 * inner(&n, u_r).re - u_r.norm_squared() * clutter_noise_power(ctx, v, f))
}

/// `F_k` for user `k` (zero-based).
pub fn user_surrogate(ctx: &AoContext, f: &CMat, u_k: C64, k: usize) -> f64 {
    let h = &ctx.scene.ue_channels[k];
    let g = f.adjoint() * h;
    let desired = g[k].conj();
    let interference: f64 = g.iter().map(|z| z.norm_sqr()).sum::<f64>() - g[k].norm_sqr();
    let b_k = interference.max(0.0) + ctx.config.noise_ue;
    ctx.config.weight_comm() * (2.0 * (u_k * desired).re - u_k.norm_sqr() * b_k)
}

/// `min_k F_k`, or 0 without users.
pub fn min_user_surrogate(ctx: &AoContext, f: &CMat, u_k: &[C64]) -> f64 {
    if u_k.is_empty() {
        return 0.0;
    }
    u_k.iter().enumerate().map(|(k, &u)| user_surrogate(ctx, f, u, k)).fold(f64::INFINITY, f64::min)
}

/// Surrogate `F = F_R + min_k F_k` at the current state.
pub fn surrogate_value(state: &AoState, ctx: &AoContext) -> f64 {
    let v = state.receiver.effective();
    sensing_surrogate(ctx, &v, &state.precoder.matrix, &state.u_r)
        + min_user_surrogate(ctx, &state.precoder.matrix, &state.u_k)
}

/// Optimal `u_r` for the current receiver and precoder.
pub fn optimal_u_r(ctx: &AoContext, v: &CVec, f: &CMat) -> Result<CVec> {
    let pq = clutter_noise_power(ctx, v, f);
    if !(pq > 0.0) {
        return Err(Error::DegenerateReceiver);
    }
    Ok(sensing_numerator(ctx, v, f) * real(1.0 / pq))
}

pub fn update_u_r(state: &mut AoState, ctx: &AoContext) -> Result<()> {
    state.u_r = optimal_u_r(ctx, &state.receiver.effective(), &state.precoder.matrix)?;
    Ok(())
}

pub fn update_u_k(state: &mut AoState, ctx: &AoContext) -> Result<()> {
    let pre = &state.precoder;
    state.u_k = (0..ctx.scene.n_users())
        .map(|k| {
            let b_k = interference_plus_noise(pre, k, ctx.scene, ctx.config.noise_ue)?;
            Ok(inner(&pre.column(k), &ctx.scene.ue_channels[k]) / b_k)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(())
}

/// `ζ = κ_c min_k γ_k(F)`.
pub fn update_zeta(state: &mut AoState, ctx: &AoContext) -> Result<()> {
    let sinrs = crate::metrics::sinr_all(&state.precoder, ctx.scene, ctx.config.noise_ue)?;
    state.zeta = ctx.config.weight_comm() * crate::metrics::min_with_index(&sinrs).0;
    Ok(())
}

/// Linear and curvature terms of the surrogate with respect to each block of variables.
///
/// `F_R` as a function of `y ∈ {w, vec W_RF, vec F}` is
/// `κ_r (2 Re(a^H y) - ‖u_r‖² y^H B y) + const`, and `F_k / κ_c` as a function
/// of `vec F` is `2 Re(a_k^H y) - |u_k|² y^H B_k y + const`.
#[derive(Debug, Clone)]
pub struct SurrogateCoeffs {
    pub a_w: CVec,
    pub b_w: CMat,
    pub a_wrf: CVec,
    pub b_wrf: CMat,
    pub a_f: CVec,
    pub b_f: Curvature,
    pub a_fk: Vec<CVec>,
    pub b_fk: Vec<Curvature>,
}

/// `Σ_l σ_l² ‖F^H a_Tl‖² a_Rl a_Rl^H + σ_n² I`.
pub fn receive_covariance(ctx: &AoContext, f: &CMat) -> CMat {
    ctx.sv.clutter_noise_covariance(f, ctx.config.noise_tmt)
}

/// `t_F = a_T^H F u_r`.
pub fn target_tx_gain(ctx: &AoContext, f: &CMat, u_r: &CVec) -> C64 {
    inner(&ctx.sv.target_tx, &(f * u_r))
}

pub fn surrogate_coeffs(state: &AoState, ctx: &AoContext) -> Result<SurrogateCoeffs> {
    let f = &state.precoder.matrix;
    let w_rf = &state.receiver.analog;
    let w = &state.receiver.digital;
    let v = state.receiver.effective();
    let t_f = target_tx_gain(ctx, f, &state.u_r);
    let r = receive_covariance(ctx, f);

    let a_w = w_rf.adjoint() * &ctx.sv.target_rx * (t_f * ctx.sigma_t);
    let b_w = w_rf.adjoint() * &r * w_rf;

    let a_rx = &ctx.sv.target_rx * (t_f * ctx.sigma_t);
    let a_wrf = kron_vec(&w.map(|z| z.conj()), &a_rx);
    let b_wrf = kron_mat(&(w.map(|z| z.conj()) * w.transpose()), &r);

    let n_tx = f.nrows();
    let ns = f.ncols();
    let s = inner(&ctx.sv.target_rx, &v) * ctx.sigma_t;
    let mut a_f = CVec::zeros(n_tx * ns);
    for j in 0..ns {
        let blk = &ctx.sv.target_tx * (s * state.u_r[j].conj());
        a_f.rows_mut(j * n_tx, n_tx).copy_from(&blk);
    }
    let mut c = CMat::zeros(n_tx, n_tx);
    for (at, ar, var) in &ctx.sv.clutter {
        c += (at * at.adjoint()) * real(var * inner(ar, &v).norm_sqr());
    }
    let b_f = Curvature::block_diagonal(vec![c; ns])?;

    let k_users = ctx.scene.n_users();
    let mut a_fk = Vec::with_capacity(k_users);
    let mut b_fk = Vec::with_capacity(k_users);
    for k in 0..k_users {
        let h = &ctx.scene.ue_channels[k];
        let mut a = CVec::zeros(n_tx * ns);
        a.rows_mut(k * n_tx, n_tx).copy_from(&(h * state.u_k[k].conj()));
        a_fk.push(a);
        let hh = h * h.adjoint();
        let blocks = (0..ns).map(|j| if j == k { CMat::zeros(n_tx, n_tx) } else { hh.clone() }).collect();
        b_fk.push(Curvature::block_diagonal(blocks)?);
    }
    Ok(SurrogateCoeffs { a_w, b_w, a_wrf, b_wrf, a_f, b_f, a_fk, b_fk })
}

/// `x ⊗ y` for column vectors.
pub(crate) fn kron_vec(x: &CVec, y: &CVec) -> CVec {
    CVec::from_fn(x.len() * y.len(), |i, _| x[i / y.len()] * y[i % y.len()])
}

pub(crate) fn kron_mat(a: &CMat, b: &CMat) -> CMat {
    let (p, q) = b.shape();
    CMat::from_fn(a.nrows() * p, a.ncols() * q, |i, j| a[(i / p, j / q)] * b[(i % p, j % q)])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ao::tests::{random_state, small_setup};
    use crate::metrics::weighted_objective;
    use nalgebra::SymmetricEigen;

    #[test]
    fn aligned_surrogate_equals_objective() {
        for seed in 0..20 {
            let (scene, config) = small_setup(seed, 0.5);
            let ctx = AoContext::new(&scene, &config).unwrap();
            let mut st = random_state(&ctx, seed);
            update_u_r(&mut st, &ctx).unwrap();
            update_u_k(&mut st, &ctx).unwrap();
            update_zeta(&mut st, &ctx).unwrap();
            let l = weighted_objective(&st.receiver, &st.precoder, &scene, &config).unwrap();
            let f = surrogate_value(&st, &ctx);
            assert!((f - l).abs() <= 1e-9 * (1.0 + l.abs()), "{f} vs {l}");
        }
    }

    #[test]
    fn zero_auxiliaries_give_zero() {
        let (scene, config) = small_setup(1, 0.5);
        let ctx = AoContext::new(&scene, &config).unwrap();
        let mut st = random_state(&ctx, 2);
        st.u_r.fill(real(0.0));
        st.u_k.iter_mut().for_each(|u| *u = real(0.0));
        assert_eq!(surrogate_value(&st, &ctx), 0.0);
    }

    #[test]
    fn surrogate_below_objective_for_other_auxiliaries() {
        let (scene, config) = small_setup(3, 0.4);
        let ctx = AoContext::new(&scene, &config).unwrap();
        let mut st = random_state(&ctx, 4);
        let l = weighted_objective(&st.receiver, &st.precoder, &scene, &config).unwrap();
        assert!(surrogate_value(&st, &ctx) <= l);
        update_u_r(&mut st, &ctx).unwrap();
        update_u_k(&mut st, &ctx).unwrap();
        let best = surrogate_value(&st, &ctx);
        let mut rng = crate::geometry::rng_from_seed(5);
        for _ in 0..200 {
            let mut p = st.clone();
            p.u_r += crate::geometry::random_complex_vector(p.u_r.len(), &mut rng) * real(0.1 * st.u_r.norm());
            for u in p.u_k.iter_mut() {
                *u += crate::geometry::complex_gaussian(&mut rng, 0.01 * u.norm_sqr());
            }
            assert!(surrogate_value(&p, &ctx) <= best + 1e-12 * best.abs());
        }
    }

    #[test]
    fn zero_precoder_gives_zero_auxiliaries() {
        let (scene, config) = small_setup(6, 0.5);
        let ctx = AoContext::new(&scene, &config).unwrap();
        let mut st = random_state(&ctx, 7);
        st.precoder.matrix.fill(real(0.0));
        update_u_r(&mut st, &ctx).unwrap();
        update_u_k(&mut st, &ctx).unwrap();
        update_zeta(&mut st, &ctx).unwrap();
        assert_eq!(st.u_r.norm(), 0.0);
        assert!(st.u_k.iter().all(|u| u.norm() == 0.0));
        assert_eq!(st.zeta, 0.0);
    }

    #[test]
    fn u_r_gain_identity() {
        let (scene, config) = small_setup(8, 0.5);
        let ctx = AoContext::new(&scene, &config).unwrap();
        let mut st = random_state(&ctx, 9);
        let v = st.receiver.effective();
        let before = sensing_surrogate(&ctx, &v, &st.precoder.matrix, &st.u_r);
        let n = sensing_numerator(&ctx, &v, &st.precoder.matrix);
        let pq = clutter_noise_power(&ctx, &v, &st.precoder.matrix);
        let predicted = config.weight_sensing / pq * (&n - &st.u_r * real(pq)).norm_squared();
        update_u_r(&mut st, &ctx).unwrap();
        let after = sensing_surrogate(&ctx, &v, &st.precoder.matrix, &st.u_r);
        assert!(after >= before);
        assert!(((after - before) - predicted).abs() <= 1e-9 * (1.0 + predicted));
    }

    #[test]
    fn coefficient_forms_reproduce_surrogate() {
        let (scene, config) = small_setup(10, 0.5);
        let ctx = AoContext::new(&scene, &config).unwrap();
        let st = random_state(&ctx, 11);
        let c = surrogate_coeffs(&st, &ctx).unwrap();
        let kr = config.weight_sensing;
        let ur2 = st.u_r.norm_squared();
        let fr = sensing_surrogate(&ctx, &st.receiver.effective(), &st.precoder.matrix, &st.u_r);
        let w = &st.receiver.digital;
        let via_w = kr * (2.0 * inner(&c.a_w, w).re - ur2 * inner(w, &(&c.b_w * w)).re);
        assert!((via_w - fr).abs() <= 1e-9 * (1.0 + fr.abs()));
        let x = CVec::from_column_slice(st.receiver.analog.as_slice());
        let via_wrf = kr * (2.0 * inner(&c.a_wrf, &x).re - ur2 * inner(&x, &(&c.b_wrf * &x)).re);
        assert!((via_wrf - fr).abs() <= 1e-9 * (1.0 + fr.abs()));
        for b in [&c.b_w, &c.b_wrf] {
            assert!(SymmetricEigen::new(crate::linalg::hermitian_part(b)).eigenvalues.min() > -1e-9 * b.norm());
        }
        // F-dependent part of F_R: the noise term is constant in F.
        let y = CVec::from_column_slice(st.precoder.matrix.as_slice());
        let noise = config.noise_tmt * st.receiver.effective().norm_squared();
        let via_f = kr * (2.0 * inner(&c.a_f, &y).re - ur2 * (c.b_f.quad_form(&y) + noise));
        assert!((via_f - fr).abs() <= 1e-9 * (1.0 + fr.abs()));
        for k in 0..scene.n_users() {
            let fk = user_surrogate(&ctx, &st.precoder.matrix, st.u_k[k], k) / config.weight_comm();
            let uk2 = st.u_k[k].norm_sqr();
            let via = 2.0 * inner(&c.a_fk[k], &y).re - uk2 * (c.b_fk[k].quad_form(&y) + config.noise_ue);
            assert!((via - fk).abs() <= 1e-9 * (1.0 + fk.abs()));
        }
    }
}
