//! Precoder update: the surrogate is a concave QCQP in `vec(F)`.
//!
//! The solve works in `x = vec(F) / √P` so the power constraint is the unit ball.
//! The objective is `F_R / κ_r` and each user contributes `F_k / κ_c >= ζ / κ_c`.
//! Curvatures are block diagonal with one `N_t × N_t` block per stream.

use log::warn;

use crate::error::Result;
use crate::linalg::{real, CMat, CVec};
use crate::qcqp::{solve, ConcaveQuadratic, Curvature, QcqpConstraint, QcqpProblem, QcqpStatus};

use super::surrogate::{min_user_surrogate, sensing_surrogate, surrogate_coeffs, user_surrogate};
use super::{AoContext, AoState, StepReport};

const QCQP_TOL: f64 = 1e-9;
/// Relative slack on the power budget when accepting a new precoder.
const POWER_SLACK: f64 = 1e-9;

fn scaled(c: &Curvature, s: f64) -> Result<Curvature> {
    Curvature::block_diagonal(c.blocks().iter().map(|b| b * real(s)).collect())
}

/// Build the precoder QCQP at the current state.
pub fn precoder_problem(state: &AoState, ctx: &AoContext) -> Result<QcqpProblem> {
    let p = ctx.config.power_budget;
    let sp = p.sqrt();
    let coeffs = surrogate_coeffs(state, ctx)?;
    let ur2 = state.u_r.norm_squared();
    let v = state.receiver.effective();
    let objective = ConcaveQuadratic::new(
        &coeffs.a_f * real(sp),
        scaled(&coeffs.b_f, p * ur2)?,
        -ur2 * ctx.config.noise_tmt * v.norm_squared(),
    )?;
    let kc = ctx.config.weight_comm();
    let mut constraints = Vec::new();
    if kc > 0.0 {
        for k in 0..ctx.scene.n_users() {
            let uk2 = state.u_k[k].norm_sqr();
            let quad = ConcaveQuadratic::new(
                &coeffs.a_fk[k] * real(sp),
                scaled(&coeffs.b_fk[k], p * uk2)?,
                -uk2 * ctx.config.noise_ue,
            )?;
            constraints.push(QcqpConstraint { quad, lower: state.zeta / kc });
        }
    }
    QcqpProblem::new(objective, constraints, 1.0)
}

#[derive(Debug, Clone)]
pub struct PrecoderStep {
    pub report: StepReport,
    pub status: Option<QcqpStatus>,
    pub kkt_residual: f64,
}

/// Precoder update; the warm start is kept unless the new point is feasible and not worse.
pub fn update_f(state: &mut AoState, ctx: &AoContext) -> Result<PrecoderStep> {
    let v = state.receiver.effective();
    let old = &state.precoder.matrix;
    let before_r = sensing_surrogate(ctx, &v, old, &state.u_r);
    let before = before_r + min_user_surrogate(ctx, old, &state.u_k);
    if ctx.config.weight_sensing == 0.0 {
        return Ok(PrecoderStep {
            report: StepReport { before, after: before, accepted: false },
            status: None,
            kkt_residual: 0.0,
        });
    }
    let problem = precoder_problem(state, ctx)?;
    let p = ctx.config.power_budget;
    let x0 = CVec::from_column_slice(old.as_slice()) * real(1.0 / p.sqrt());
    let sol = solve(&problem, &x0, QCQP_TOL)?;
    if sol.status != QcqpStatus::Optimal {
        warn!("precoder QCQP ended with status {:?} (KKT residual {:.3e})", sol.status, sol.kkt_residual);
    }
    let cand = CMat::from_column_slice(old.nrows(), old.ncols(), (sol.x.clone() * real(p.sqrt())).as_slice());
    let after_r = sensing_surrogate(ctx, &v, &cand, &state.u_r);
    let power_ok = crate::linalg::fro_sq(&cand) <= p * (1.0 + POWER_SLACK);
    let users_ok = ctx.config.weight_comm() == 0.0
        || (0..ctx.scene.n_users()).all(|k| user_surrogate(ctx, &cand, state.u_k[k], k) >= state.zeta);
    if after_r >= before_r && power_ok && users_ok {
        let after = after_r + min_user_surrogate(ctx, &cand, &state.u_k);
        state.precoder.matrix = cand;
        Ok(PrecoderStep {
            report: StepReport { before, after, accepted: true },
            status: Some(sol.status),
            kkt_residual: sol.kkt_residual,
        })
    } else {
        warn!("precoder update rejected; keeping the warm start");
        Ok(PrecoderStep {
            report: StepReport { before, after: before, accepted: false },
            status: Some(sol.status),
            kkt_residual: sol.kkt_residual,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ao::surrogate::{update_u_k, update_u_r, update_zeta};
    use crate::ao::tests::{random_state, small_setup};
    use crate::ao::AoContext;
    use crate::geometry::{rng_from_seed, steering_vector, Scene, SystemConfig};
    use crate::linalg::{inner, C64};
    use crate::metrics::{HybridReceiver, Precoder};
    use rand::Rng;

    #[test]
    fn feasibility_chain_and_monotonicity() {
        for seed in 0..8 {
            let (scene, config) = small_setup(seed, 0.5);
            let ctx = AoContext::new(&scene, &config).unwrap();
            let mut st = random_state(&ctx, seed + 3);
            update_u_r(&mut st, &ctx).unwrap();
            update_u_k(&mut st, &ctx).unwrap();
            update_zeta(&mut st, &ctx).unwrap();
            let step = update_f(&mut st, &ctx).unwrap();
            assert!(step.report.after >= step.report.before);
            assert!(st.precoder.power() <= config.power_budget * (1.0 + 1e-9));
            for k in 0..scene.n_users() {
                assert!(user_surrogate(&ctx, &st.precoder.matrix, st.u_k[k], k) >= st.zeta - 1e-7);
            }
        }
    }

    #[test]
    fn no_users_no_clutter_aligns_with_target() {
        let config = SystemConfig {
            n_tx: 6,
            n_rx: 4,
            n_rf: 2,
            n_streams: 1,
            n_users: 0,
            weight_sensing: 1.0,
            ..SystemConfig::desk()
        };
        let scene = Scene {
            ue_channels: vec![],
            target_aod: 0.4,
            target_aoa: -0.2,
            clutter: vec![],
            target_gain_var: config.target_gain_var,
            rng_seed: 0,
        };
        let ctx = AoContext::new(&scene, &config).unwrap();
        let mut rng = rng_from_seed(1);
        let f0 = crate::geometry::random_complex_matrix(6, 1, &mut rng) * real(0.1);
        let rx = HybridReceiver::new(
            crate::geometry::random_unit_modulus(4, 2, &mut rng),
            crate::geometry::random_complex_vector(2, &mut rng) * real(0.3),
        )
        .unwrap();
        let mut st = crate::ao::AoState::new(rx, Precoder::new(f0, 0).unwrap());
        update_u_r(&mut st, &ctx).unwrap();
        update_f(&mut st, &ctx).unwrap();
        let a = steering_vector(6, 0.4).unwrap();
        let f = st.precoder.column(0);
        assert!((f.norm_squared() - config.power_budget).abs() < 1e-6 * config.power_budget);
        assert!((inner(&a, &f).norm() - f.norm()).abs() < 1e-6 * f.norm());
    }

    /// Tiny instance: the solver must match the best of many feasible samples from
    /// below and the Lagrangian dual bound from above.
    #[test]
    fn tiny_instance_matches_sampling_and_dual_bounds() {
        let config = SystemConfig {
            n_tx: 2,
            n_rx: 2,
            n_rf: 1,
            n_streams: 2,
            n_users: 1,
            weight_sensing: 0.5,
            power_budget: 1.0,
            noise_ue: 0.1,
            noise_tmt: 0.1,
            target_gain_var: 1.0,
            ..SystemConfig::desk()
        };
        let mut rng = rng_from_seed(2);
        let scene = Scene {
            ue_channels: vec![crate::geometry::random_complex_vector(2, &mut rng)],
            target_aod: 0.3,
            target_aoa: 0.5,
            clutter: vec![crate::geometry::ClutterPatch { aod: -0.6, aoa: -0.4, variance: 1.0 }],
            target_gain_var: 1.0,
            rng_seed: 0,
        };
        let ctx = AoContext::new(&scene, &config).unwrap();
        let f0 = crate::geometry::random_complex_matrix(2, 2, &mut rng) * real(0.3);
        let rx = HybridReceiver::new(CMat::from_element(2, 1, C64::new(1.0, 0.0)), CVec::from_element(1, real(0.7)))
            .unwrap();
        let mut st = crate::ao::AoState::new(rx, Precoder::new(f0, 1).unwrap());
        update_u_r(&mut st, &ctx).unwrap();
        update_u_k(&mut st, &ctx).unwrap();
        update_zeta(&mut st, &ctx).unwrap();
        let problem = precoder_problem(&st, &ctx).unwrap();
        let x0 = CVec::from_column_slice(st.precoder.matrix.as_slice());
        let sol = solve(&problem, &x0, 1e-10).unwrap();

        let mut best = f64::NEG_INFINITY;
        for _ in 0..200_000 {
            let mut z = crate::geometry::random_complex_vector(4, &mut rng);
            z *= real(rng.random_range(0.0f64..1.0).sqrt() / z.norm());
            if problem.violation(&z) == 0.0 {
                best = best.max(problem.objective.value(&z));
            }
        }
        assert!(sol.objective >= best - 1e-9);

        let mut m = problem.objective.curvature.to_dense() + CMat::identity(4, 4) * real(sol.multipliers.ball);
        let mut a = problem.objective.linear.clone();
        let mut c = problem.objective.constant + sol.multipliers.ball * problem.ball_radius_sq;
        for (con, &l) in problem.constraints.iter().zip(&sol.multipliers.constraints) {
            m += con.quad.curvature.to_dense() * real(l);
            a += &con.quad.linear * real(l);
            c += l * (con.quad.constant - con.lower);
        }
        let dual = inner(&a, &m.cholesky().unwrap().solve(&a)).re + c;
        assert!(dual - sol.objective < 1e-6 * (1.0 + sol.objective.abs()), "dual {dual} primal {}", sol.objective);
    }
}
