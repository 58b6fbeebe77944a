//! Analog combiner update by Riemannian gradient descent on the complex circle manifold.
//!
//! Minimizes `G(W_RF) = -F_R` over matrices with unit-modulus entries. The
//! Euclidean gradient uses the `2 ∂/∂conj(x)` convention, so that
//! `G(x + d) ≈ G(x) + Re⟨∇G, d⟩`.

use crate::linalg::{real, unit_phase, CMat, C64};

use super::surrogate::{receive_covariance, sensing_surrogate, target_tx_gain};
use super::{AoContext, AoState, StepReport};

const ARMIJO_C: f64 = 1e-4;
const BACKTRACK: f64 = 0.5;
const INITIAL_STEP: f64 = 1.0;
const MAX_BACKTRACKS: usize = 60;

/// `G = -F_R` as a function of the analog combiner.
pub fn wrf_cost(state: &AoState, ctx: &AoContext, w_rf: &CMat) -> f64 {
    -sensing_surrogate(ctx, &(w_rf * &state.receiver.digital), &state.precoder.matrix, &state.u_r)
}

/// `∇G = 2κ_r (‖u_r‖² R v - σ_t t_F a_R) w^H` with `v = W_RF w`.
pub fn wrf_euclidean_gradient(state: &AoState, ctx: &AoContext, w_rf: &CMat) -> CMat {
    let f = &state.precoder.matrix;
    let w = &state.receiver.digital;
    let v = w_rf * w;
    let r = receive_covariance(ctx, f);
    let t_f = target_tx_gain(ctx, f, &state.u_r);
    let left = (&r * &v) * real(state.u_r.norm_squared()) - &ctx.sv.target_rx * (t_f * ctx.sigma_t);
    (left * w.adjoint()) * real(2.0 * ctx.config.weight_sensing)
}

/// Projection onto the tangent space at `x`: `η = g - Re(g ∘ conj(x)) ∘ x`.
pub fn tangent_projection(grad: &CMat, x: &CMat) -> CMat {
    grad.zip_map(x, |g, xi| g - xi * (g * xi.conj()).re)
}

/// Entrywise normalization back onto the manifold.
pub fn retract(x: &CMat) -> CMat {
    x.map(unit_phase)
}

#[derive(Debug, Clone, Default)]
pub struct ManifoldTrace {
    /// `F_R` after every accepted step, starting from the input point.
    pub values: Vec<f64>,
    pub grad_norm: f64,
    pub iterations: usize,
    /// The line search found no admissible step.
    pub stalled: bool,
}

/// Armijo-backtracking Riemannian descent; never returns a point with lower `F_R`.
pub fn update_wrf(state: &mut AoState, ctx: &AoContext) -> (StepReport, ManifoldTrace) {
    let mut x = state.receiver.analog.clone();
    let mut cost = wrf_cost(state, ctx, &x);
    let start = cost;
    let mut trace = ManifoldTrace { values: vec![-cost], ..Default::default() };
    for it in 0..ctx.config.manifold_max_iter {
        let eta = tangent_projection(&wrf_euclidean_gradient(state, ctx, &x), &x);
        let gn2 = eta.norm_squared();
        trace.grad_norm = gn2.sqrt();
        trace.iterations = it;
        if trace.grad_norm <= ctx.config.manifold_grad_tol {
            break;
        }
        let mut step = INITIAL_STEP;
        let mut accepted = false;
        for _ in 0..MAX_BACKTRACKS {
            let cand = retract(&(&x - &eta * real(step)));
            let c = wrf_cost(state, ctx, &cand);
            if c <= cost - ARMIJO_C * step * gn2 {
                x = cand;
                cost = c;
                accepted = true;
                break;
            }
            step *= BACKTRACK;
        }
        if !accepted {
            trace.stalled = true;
            break;
        }
        trace.values.push(-cost);
        trace.iterations = it + 1;
    }
    if cost <= start {
        state.receiver.analog = x;
        (StepReport { before: -start, after: -cost, accepted: true }, trace)
    } else {
        (StepReport { before: -start, after: -start, accepted: false }, trace)
    }
}

/// Central finite-difference gradient of `G` in the same convention as [`wrf_euclidean_gradient`].
pub fn wrf_numeric_gradient(state: &AoState, ctx: &AoContext, w_rf: &CMat, h: f64) -> CMat {
    let mut g = CMat::zeros(w_rf.nrows(), w_rf.ncols());
    for idx in 0..w_rf.len() {
        let eval = |d: C64| {
            let mut p = w_rf.clone();
            p[idx] += d;
            wrf_cost(state, ctx, &p)
        };
        let re = (eval(C64::new(h, 0.0)) - eval(C64::new(-h, 0.0))) / (2.0 * h);
        let im = (eval(C64::new(0.0, h)) - eval(C64::new(0.0, -h))) / (2.0 * h);
        g[idx] = C64::new(re, im);
    }
    g
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ao::surrogate::update_u_r;
    use crate::ao::tests::{random_state, small_setup};

    fn prepared(seed: u64) -> (crate::geometry::Scene, crate::geometry::SystemConfig) {
        small_setup(seed, 0.5)
    }

    #[test]
    fn gradient_matches_finite_differences() {
        for seed in 0..10 {
            let (scene, config) = prepared(seed);
            let ctx = AoContext::new(&scene, &config).unwrap();
            let mut st = random_state(&ctx, seed + 1);
            update_u_r(&mut st, &ctx).unwrap();
            let x = st.receiver.analog.clone();
            let g = wrf_euclidean_gradient(&st, &ctx, &x);
            let scale = g.norm().max(f64::MIN_POSITIVE);
            let h = 1e-6 * x.norm().max(1.0);
            let n = wrf_numeric_gradient(&st, &ctx, &x, h);
            assert!((&g - &n).norm() / scale < 1e-5, "rel err {}", (&g - &n).norm() / scale);
        }
    }

    #[test]
    fn tangent_vectors_are_tangent_and_retraction_is_unit() {
        let (scene, config) = prepared(3);
        let ctx = AoContext::new(&scene, &config).unwrap();
        let mut st = random_state(&ctx, 4);
        update_u_r(&mut st, &ctx).unwrap();
        let x = st.receiver.analog.clone();
        let eta = tangent_projection(&wrf_euclidean_gradient(&st, &ctx, &x), &x);
        for (e, xi) in eta.iter().zip(x.iter()) {
            assert!((e * xi.conj()).re.abs() < 1e-10 * (1.0 + e.norm()));
        }
        let r = retract(&(&x - eta * real(0.3)));
        assert!(r.iter().all(|z| (z.norm() - 1.0).abs() < 1e-12));
    }

    #[test]
    fn update_is_monotone_and_stays_on_manifold() {
        for seed in 0..10 {
            let (scene, config) = prepared(seed + 20);
            let ctx = AoContext::new(&scene, &config).unwrap();
            let mut st = random_state(&ctx, seed);
            update_u_r(&mut st, &ctx).unwrap();
            let (rep, trace) = update_wrf(&mut st, &ctx);
            assert!(rep.after >= rep.before);
            for w in trace.values.windows(2) {
                assert!(w[1] >= w[0]);
            }
            assert!(st.receiver.analog.iter().all(|z| (z.norm() - 1.0).abs() < 1e-12));
            assert!(
                trace.grad_norm <= config.manifold_grad_tol
                    || trace.iterations == config.manifold_max_iter
                    || trace.stalled
            );
        }
    }

    #[test]
    fn stationary_input_is_unchanged() {
        let (scene, mut config) = prepared(5);
        config.manifold_grad_tol = f64::INFINITY;
        let ctx = AoContext::new(&scene, &config).unwrap();
        let mut st = random_state(&ctx, 6);
        update_u_r(&mut st, &ctx).unwrap();
        let before = st.receiver.analog.clone();
        update_wrf(&mut st, &ctx);
        assert!((&st.receiver.analog - before).norm() < 1e-10);
    }
}
