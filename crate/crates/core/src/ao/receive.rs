//! Digital receive filter update: maximize `2 Re(w^H a_w) - ‖u_r‖² w^H B_w w` over `‖w‖ <= 1`.

use nalgebra::SymmetricEigen;

use crate::error::{Error, Result};
use crate::linalg::{hermitian_part, real, CMat, CVec};

use super::surrogate::{receive_covariance, sensing_surrogate, target_tx_gain};
use super::{AoContext, AoState, StepReport};

const MAX_BISECTION: usize = 200;
const MAX_DOUBLING: usize = 200;

/// Solution of the norm-constrained receive-filter problem.
#[derive(Debug, Clone)]
pub struct BallSolution {
    pub w: CVec,
    /// KKT multiplier of the norm constraint, in the `B_w + γ I` scaling.
    pub gamma: f64,
}

/// `w = (B_w + γ I)^{-1} a_w / ‖u_r‖²` with the smallest `γ >= 0` giving `‖w‖ <= 1`.
///
/// Works in the eigenbasis of `B_w`, where `‖w(γ)‖` is decreasing in `γ`; the
/// multiplier is found by bracketing and bisection to `| ‖w‖ - 1 | < tol`.
pub fn solve_ball_constrained(b_w: &CMat, a_w: &CVec, ur_norm_sq: f64, tol: f64) -> Result<BallSolution> {
    if !(ur_norm_sq > 0.0) {
        return Err(Error::InvalidInput("receive filter update needs a nonzero u_r".into()));
    }
    let eig = SymmetricEigen::new(hermitian_part(b_w));
    let lambdas = eig.eigenvalues.map(|l| l.max(0.0));
    let b = eig.eigenvectors.adjoint() * a_w;
    let norm_at = |gamma: f64| -> f64 {
        b.iter()
            .zip(lambdas.iter())
            .map(|(bi, li)| {
                let d = ur_norm_sq * (li + gamma);
                if bi.norm_sqr() == 0.0 {
                    0.0
                } else if d > 0.0 {
                    bi.norm_sqr() / (d * d)
                } else {
                    f64::INFINITY
                }
            })
            .sum::<f64>()
            .sqrt()
    };
    let w_at = |gamma: f64| -> CVec {
        let y = CVec::from_fn(b.len(), |i, _| {
            let d = ur_norm_sq * (lambdas[i] + gamma);
            if b[i].norm_sqr() == 0.0 {
                real(0.0)
            } else {
                b[i] / d
            }
        });
        &eig.eigenvectors * y
    };

    if norm_at(0.0) <= 1.0 {
        return Ok(BallSolution { w: w_at(0.0), gamma: 0.0 });
    }
    let mut hi = lambdas.max().max(1e-300);
    let mut doublings = 0;
    while norm_at(hi) >= 1.0 {
        hi *= 2.0;
        doublings += 1;
        if doublings > MAX_DOUBLING || !hi.is_finite() {
            return Err(Error::Bisection(format!("could not bracket the multiplier (upper end {hi:.3e})")));
        }
    }
    let mut lo = 0.0;
    for _ in 0..MAX_BISECTION {
        let n_hi = norm_at(hi);
        if (n_hi - 1.0).abs() < tol {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if norm_at(mid) >= 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let n_hi = norm_at(hi);
    if !((n_hi - 1.0).abs() < tol.max(1e-12) || n_hi <= 1.0) {
        return Err(Error::Bisection(format!("multiplier search ended at ‖w‖ = {n_hi}")));
    }
    Ok(BallSolution { w: w_at(hi), gamma: hi })
}

/// Receive-filter update; keeps the previous filter if `F_R` would decrease.
pub fn update_w(state: &mut AoState, ctx: &AoContext) -> Result<StepReport> {
    let f = &state.precoder.matrix;
    let w_rf = &state.receiver.analog;
    let before = sensing_surrogate(ctx, &state.receiver.effective(), f, &state.u_r);
    let t_f = target_tx_gain(ctx, f, &state.u_r);
    let a_w = w_rf.adjoint() * &ctx.sv.target_rx * (t_f * ctx.sigma_t);
    if a_w.norm() == 0.0 || state.u_r.norm() == 0.0 {
        return Ok(StepReport { before, after: before, accepted: false });
    }
    let b_w = w_rf.adjoint() * receive_covariance(ctx, f) * w_rf;
    let sol = solve_ball_constrained(&b_w, &a_w, state.u_r.norm_squared(), ctx.config.bisection_tol)?;
    let after = sensing_surrogate(ctx, &(w_rf * &sol.w), f, &state.u_r);
    if after >= before {
        state.receiver.digital = sol.w;
        Ok(StepReport { before, after, accepted: true })
    } else {
        Ok(StepReport { before, after: before, accepted: false })
    }
}
