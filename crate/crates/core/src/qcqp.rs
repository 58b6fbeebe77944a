//! Interior-point solver for concave quadratic maximization over complex vectors.
//!
//! Problems have the form
//!
//! ```text
//! maximize   q_0(x)
//! subject to q_i(x) >= b_i,   i = 1..m
//!            ‖x‖² <= R
//! ```
//!
//! with `q(x) = 2 Re(a^H x) - x^H B x + c` and every `B` Hermitian PSD. All
//! curvatures share one block-diagonal partition, which the Newton solve
//! exploits: the Hessian of the log barrier is a block-diagonal complex part
//! plus one real rank-one term per constraint, inverted with the Woodbury
//! identity.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{hermitian_part, hpd_cholesky, inner, real, CMat, CVec, C64};

/// Relative eigenvalue slack below zero that is treated as rounding noise.
const PSD_TOL: f64 = 1e-9;
/// Feasibility slack accepted on returned points and warm starts.
const FEAS_TOL: f64 = 1e-7;
const INNER_TOL: f64 = 1e-8;
const POLISH_TOL: f64 = 1e-18;
const MU: f64 = 10.0;
const MAX_STAGES: usize = 60;
const MAX_NEWTON: usize = 100;
const LS_ALPHA: f64 = 0.25;
const LS_BETA: f64 = 0.5;
const MIN_STEP: f64 = 1e-14;
/// Normalized slack below which a constraint's multiplier is re-fitted.
const ACTIVE_SLACK: f64 = 1e-6;
/// Smallest duality-gap bound `m / t` worth pursuing in double precision.
const MIN_GAP: f64 = 1e-15;

/// Hermitian PSD block-diagonal matrix. A dense matrix is the one-block case.
#[derive(Debug, Clone, PartialEq)]
pub struct Curvature {
    blocks: Vec<CMat>,
}

fn psd_clip(m: &CMat) -> Result<CMat> {
    if !m.is_square() {
        return Err(Error::InvalidProblem("curvature blocks must be square".into()));
    }
    if m.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::InvalidProblem("non-finite curvature".into()));
    }
    let h = hermitian_part(m);
    if h.iter().all(|z| *z == C64::new(0.0, 0.0)) {
        return Ok(h);
    }
    // A Cholesky factorization of `h + δI` certifies that any negative eigenvalue is rounding.
    let shift = 64.0 * f64::EPSILON * h.norm();
    let mut shifted = h.clone();
    for i in 0..h.nrows() {
        shifted[(i, i)] += real(shift);
    }
    if hpd_cholesky(shifted).is_some() {
        return Ok(h);
    }
    let eig = SymmetricEigen::new(h.clone());
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    if min >= 0.0 {
        return Ok(h);
    }
    if min < -PSD_TOL * max.max(1.0) {
        return Err(Error::InvalidProblem(format!("curvature has eigenvalue {min:.3e} < 0")));
    }
    let clipped = eig.eigenvalues.map(|l| l.max(0.0));
    let v = &eig.eigenvectors;
    let d = CMat::from_diagonal(&clipped.map(real));
    Ok(hermitian_part(&(v * d * v.adjoint())))
}

impl Curvature {
    pub fn dense(m: CMat) -> Result<Self> {
        Self::block_diagonal(vec![m])
    }

    /// Symmetrizes each block; eigenvalues that are negative only by rounding are tolerated or clipped.
    pub fn block_diagonal(blocks: Vec<CMat>) -> Result<Self> {
        if blocks.is_empty() {
            return Err(Error::InvalidProblem("curvature needs at least one block".into()));
        }
        let blocks = blocks.iter().map(psd_clip).collect::<Result<Vec<_>>>()?;
        Ok(Self { blocks })
    }

    pub fn zeros(block_sizes: &[usize]) -> Self {
        Self { blocks: block_sizes.iter().map(|&n| CMat::zeros(n, n)).collect() }
    }

    pub fn identity(block_sizes: &[usize]) -> Self {
        Self { blocks: block_sizes.iter().map(|&n| CMat::identity(n, n)).collect() }
    }

    pub fn blocks(&self) -> &[CMat] {
        &self.blocks
    }

    pub fn block_sizes(&self) -> Vec<usize> {
        self.blocks.iter().map(|b| b.nrows()).collect()
    }

    pub fn dim(&self) -> usize {
        self.blocks.iter().map(|b| b.nrows()).sum()
    }

    pub fn is_zero(&self) -> bool {
        self.blocks.iter().all(|b| b.iter().all(|z| z.norm_sqr() == 0.0))
    }

    /// Upper bound on the largest eigenvalue.
    pub fn norm_bound(&self) -> f64 {
        self.blocks.iter().map(|b| b.norm()).fold(0.0, f64::max)
    }

    pub fn apply(&self, x: &CVec) -> CVec {
        let mut y = CVec::zeros(x.len());
        let mut off = 0;
        for b in &self.blocks {
            let n = b.nrows();
            let yb = b * x.rows(off, n);
            y.rows_mut(off, n).copy_from(&yb);
            off += n;
        }
        y
    }

    pub fn quad_form(&self, x: &CVec) -> f64 {
        inner(x, &self.apply(x)).re
    }

    pub fn to_dense(&self) -> CMat {
        let n = self.dim();
        let mut m = CMat::zeros(n, n);
        let mut off = 0;
        for b in &self.blocks {
            let k = b.nrows();
            m.view_mut((off, off), (k, k)).copy_from(b);
            off += k;
        }
        m
    }
}

/// `q(x) = 2 Re(a^H x) - x^H B x + c`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConcaveQuadratic {
    pub linear: CVec,
    pub curvature: Curvature,
    pub constant: f64,
}

impl ConcaveQuadratic {
    pub fn new(linear: CVec, curvature: Curvature, constant: f64) -> Result<Self> {
        if linear.len() != curvature.dim() {
            return Err(Error::InvalidProblem("linear term and curvature dimensions differ".into()));
        }
        if !constant.is_finite() || linear.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::InvalidProblem("non-finite quadratic data".into()));
        }
        Ok(Self { linear, curvature, constant })
    }

    pub fn dim(&self) -> usize {
        self.linear.len()
    }

    pub fn value(&self, x: &CVec) -> f64 {
        2.0 * inner(&self.linear, x).re - self.curvature.quad_form(x) + self.constant
    }

    /// Gradient `2a - 2Bx` with respect to the real inner product `Re(u^H v)`.
    pub fn gradient(&self, x: &CVec) -> CVec {
        (&self.linear - self.curvature.apply(x)) * real(2.0)
    }

    pub fn is_constant(&self) -> bool {
        self.linear.iter().all(|z| z.norm_sqr() == 0.0) && self.curvature.is_zero()
    }

    fn scale_bound(&self, radius_sq: f64) -> f64 {
        2.0 * self.linear.norm() * radius_sq.sqrt() + self.curvature.norm_bound() * radius_sq + self.constant.abs()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QcqpConstraint {
    pub quad: ConcaveQuadratic,
    pub lower: f64,
}

impl QcqpConstraint {
    pub fn slack(&self, x: &CVec) -> f64 {
        self.quad.value(x) - self.lower
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QcqpProblem {
    pub objective: ConcaveQuadratic,
    pub constraints: Vec<QcqpConstraint>,
    pub ball_radius_sq: f64,
}

impl QcqpProblem {
    pub fn new(objective: ConcaveQuadratic, constraints: Vec<QcqpConstraint>, ball_radius_sq: f64) -> Result<Self> {
        if !(ball_radius_sq > 0.0 && ball_radius_sq.is_finite()) {
            return Err(Error::InvalidProblem("ball radius must be positive".into()));
        }
        let sizes = objective.curvature.block_sizes();
        for c in &constraints {
            if c.quad.curvature.block_sizes() != sizes {
                return Err(Error::InvalidProblem("all curvatures must share one block partition".into()));
            }
            if !c.lower.is_finite() {
                return Err(Error::InvalidProblem("non-finite constraint bound".into()));
            }
        }
        Ok(Self { objective, constraints, ball_radius_sq })
    }

    pub fn dim(&self) -> usize {
        self.objective.dim()
    }

    pub fn ball_slack(&self, x: &CVec) -> f64 {
        self.ball_radius_sq - x.norm_squared()
    }

    /// Largest constraint violation (0 when feasible).
    pub fn violation(&self, x: &CVec) -> f64 {
        self.constraints.iter().map(|c| (-c.slack(x)).max(0.0)).fold((-self.ball_slack(x)).max(0.0), f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QcqpStatus {
    Optimal,
    MaxIter,
    Infeasible,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Multipliers {
    pub constraints: Vec<f64>,
    pub ball: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QcqpSolution {
    pub x: CVec,
    pub objective: f64,
    pub multipliers: Multipliers,
    pub kkt_residual: f64,
    pub status: QcqpStatus,
    pub newton_steps: usize,
    /// Objective at the end of each centering stage.
    pub stage_objectives: Vec<f64>,
}

/// Max of the stationarity norm, complementarity products and feasibility violations.
pub fn kkt_residual(problem: &QcqpProblem, x: &CVec, multipliers: &Multipliers) -> f64 {
    let mut stat = problem.objective.gradient(x);
    let mut worst: f64 = 0.0;
    for (c, &lam) in problem.constraints.iter().zip(&multipliers.constraints) {
        stat += c.quad.gradient(x) * real(lam);
        let g = c.slack(x);
        worst = worst.max((lam * g).abs()).max(-g);
    }
    stat -= x * real(2.0 * multipliers.ball);
    let gb = problem.ball_slack(x);
    worst = worst.max((multipliers.ball * gb).abs()).max(-gb);
    worst.max(stat.norm())
}

struct BlockCholesky {
    chols: Vec<Cholesky<C64, Dyn>>,
}

impl BlockCholesky {
    fn new(blocks: Vec<CMat>) -> Option<Self> {
        let chols = blocks.into_iter().map(hpd_cholesky).collect::<Option<Vec<_>>>()?;
        Some(Self { chols })
    }

    fn solve(&self, r: &CVec) -> CVec {
        let mut y = CVec::zeros(r.len());
        let mut off = 0;
        for ch in &self.chols {
            let n = ch.l_dirty().nrows();
            let yb = ch.solve(&r.rows(off, n).into_owned());
            y.rows_mut(off, n).copy_from(&yb);
            off += n;
        }
        y
    }
}

/// Solve `(A + Σ u_i Re(u_i^H ·) / g_i²) d = r` with `A` block-diagonal complex Hermitian.
fn woodbury_solve(a: &BlockCholesky, us: &[CVec], gs: &[f64], r: &CVec) -> Option<CVec> {
    let y = a.solve(r);
    if us.is_empty() {
        return Some(y);
    }
    let ys: Vec<CVec> = us.iter().map(|u| a.solve(u)).collect();
    let m = us.len();
    let mut s = DMatrix::<f64>::zeros(m, m);
    let mut rhs = DVector::<f64>::zeros(m);
    for i in 0..m {
        for j in 0..m {
            s[(i, j)] = inner(&us[i], &ys[j]).re;
        }
        s[(i, i)] += gs[i] * gs[i];
        rhs[i] = inner(&us[i], &y).re;
    }
    let s = (&s + s.transpose()) * 0.5;
    let coef = s.clone().cholesky().map(|c| c.solve(&rhs)).or_else(|| s.lu().solve(&rhs))?;
    let mut d = y;
    for (yi, ci) in ys.iter().zip(coef.iter()) {
        d -= yi * real(*ci);
    }
    Some(d)
}

/// `(v0, v1, v2)` with `f(x + s d) = v0 + s v1 - s² v2` for the objective and each slack.
struct LineModel {
    objective: (f64, f64, f64),
    slacks: Vec<(f64, f64, f64)>,
}

impl LineModel {
    fn barrier(&self, s: f64, t: f64) -> Option<f64> {
        let eval = |(v0, v1, v2): (f64, f64, f64)| v0 + s * v1 - s * s * v2;
        let mut phi = -t * eval(self.objective);
        for &c in &self.slacks {
            let g = eval(c);
            if !(g > 0.0) {
                return None;
            }
            phi -= g.ln();
        }
        Some(phi)
    }
}

/// Active constraints with their normalization scale; constant ones are resolved up front.
struct Prepared<'a> {
    problem: &'a QcqpProblem,
    active: Vec<usize>,
    scales: Vec<f64>,
    sizes: Vec<usize>,
}

impl<'a> Prepared<'a> {
    fn new(problem: &'a QcqpProblem) -> std::result::Result<Self, ()> {
        let mut active = Vec::new();
        let mut scales = Vec::new();
        for (i, c) in problem.constraints.iter().enumerate() {
            if c.quad.is_constant() {
                if c.quad.constant < c.lower - FEAS_TOL {
                    return Err(());
                }
                continue;
            }
            active.push(i);
            scales.push((c.quad.scale_bound(problem.ball_radius_sq) + c.lower.abs()).max(f64::MIN_POSITIVE));
        }
        Ok(Self { problem, active, scales, sizes: problem.objective.curvature.block_sizes() })
    }

    fn constraint(&self, j: usize) -> &QcqpConstraint {
        &self.problem.constraints[self.active[j]]
    }

    fn n_barrier(&self) -> usize {
        self.active.len() + 1
    }

    fn slacks(&self, x: &CVec) -> Vec<f64> {
        (0..self.active.len()).map(|j| self.constraint(j).slack(x)).collect()
    }

    fn strictly_feasible(&self, x: &CVec) -> bool {
        self.problem.ball_slack(x) > 0.0 && self.slacks(x).iter().all(|&g| g > 0.0)
    }

    /// Barrier value `-t q0 - Σ log g_i - log g_b`, or `None` outside the domain.
    fn barrier(&self, x: &CVec, t: f64) -> Option<f64> {
        let gb = self.problem.ball_slack(x);
        if !(gb > 0.0) {
            return None;
        }
        let mut phi = -t * self.problem.objective.value(x) - gb.ln();
        for g in self.slacks(x) {
            if !(g > 0.0) {
                return None;
            }
            phi -= g.ln();
        }
        Some(phi)
    }

    /// Newton direction for the barrier at `x` and its squared decrement.
    fn newton(&self, x: &CVec, t: f64) -> Option<(CVec, f64, f64)> {
        let obj = &self.problem.objective;
        let gb = self.problem.ball_slack(x);
        let mut blocks: Vec<CMat> = obj.curvature.blocks().iter().map(|b| b * real(2.0 * t)).collect();
        let mut r = obj.gradient(x) * real(t);
        let mut us = Vec::with_capacity(self.n_barrier());
        let mut gs = Vec::with_capacity(self.n_barrier());
        for j in 0..self.active.len() {
            let c = self.constraint(j);
            let g = c.slack(x);
            let grad = c.quad.gradient(x);
            for (blk, bc) in blocks.iter_mut().zip(c.quad.curvature.blocks()) {
                *blk += bc * real(2.0 / g);
            }
            r += &grad * real(1.0 / g);
            us.push(grad);
            gs.push(g);
        }
        for blk in blocks.iter_mut() {
            for i in 0..blk.nrows() {
                blk[(i, i)] += real(2.0 / gb);
            }
        }
        let grad_b = x * real(-2.0);
        r += &grad_b * real(1.0 / gb);
        us.push(grad_b);
        gs.push(gb);

        let a = BlockCholesky::new(blocks)?;
        let d = woodbury_solve(&a, &us, &gs, &r)?;
        let dec = inner(&r, &d).re;
        Some((d, dec, r.norm()))
    }

    /// Values of the objective and of every slack along `x + s d` as exact quadratics in `s`.
    fn line(&self, x: &CVec, d: &CVec) -> LineModel {
        let along = |q: &ConcaveQuadratic, shift: f64| {
            let bd = q.curvature.apply(d);
            let v0 = q.value(x) - shift;
            let v1 = 2.0 * (inner(&q.linear, d).re - inner(x, &bd).re);
            (v0, v1, inner(d, &bd).re)
        };
        let objective = along(&self.problem.objective, 0.0);
        let mut slacks: Vec<(f64, f64, f64)> = (0..self.active.len())
            .map(|j| {
                let c = self.constraint(j);
                along(&c.quad, c.lower)
            })
            .collect();
        slacks.push((self.problem.ball_slack(x), -2.0 * inner(x, d).re, d.norm_squared()));
        LineModel { objective, slacks }
    }

    /// Damped Newton centering; returns the number of steps taken.
    fn center(&self, x: &mut CVec, t: f64, tol: f64, max_steps: usize) -> usize {
        let mut steps = 0;
        let Some(mut phi) = self.barrier(x, t) else { return 0 };
        while steps < max_steps {
            let Some((d, dec, _)) = self.newton(x, t) else { break };
            if !(dec.is_finite()) || dec / 2.0 <= tol {
                break;
            }
            let model = self.line(x, &d);
            let mut step = 1.0;
            let mut accepted = false;
            while step > MIN_STEP {
                if let Some(p) = model.barrier(step, t) {
                    if p <= phi - LS_ALPHA * step * dec {
                        let cand = &*x + &d * real(step);
                        // Confirm with a direct evaluation; the model only differs by rounding.
                        if let Some(p) = self.barrier(&cand, t) {
                            if p <= phi - LS_ALPHA * step * dec {
                                *x = cand;
                                phi = p;
                                accepted = true;
                            }
                        }
                        break;
                    }
                }
                step *= LS_BETA;
            }
            steps += 1;
            if !accepted {
                break;
            }
        }
        steps
    }

    /// Maximize `σ` subject to `g_i(x)/s_i >= σ`; stops at the first strictly feasible `x`.
    fn phase_one(&self, x0: &CVec) -> Option<CVec> {
        let r2 = self.problem.ball_radius_sq;
        let mut x = x0.clone();
        if self.problem.ball_slack(&x) <= 0.0 {
            x *= real(0.5 * r2.sqrt() / x.norm());
        }
        if self.strictly_feasible(&x) {
            return Some(x);
        }
        let m = self.active.len();
        let norm_slacks = |x: &CVec| -> Vec<f64> {
            let mut v: Vec<f64> = self.slacks(x).iter().zip(&self.scales).map(|(g, s)| g / s).collect();
            v.push(self.problem.ball_slack(x) / r2);
            v
        };
        let min_slack = |v: &[f64]| v.iter().cloned().fold(f64::INFINITY, f64::min);
        let mut sigma = min_slack(&norm_slacks(&x)) - 1.0;
        let merit = |x: &CVec, sigma: f64, t: f64| -> Option<f64> {
            let mut phi = -t * sigma;
            for h in norm_slacks(x) {
                let h = h - sigma;
                if !(h > 0.0) {
                    return None;
                }
                phi -= h.ln();
            }
            Some(phi)
        };
        let mut t = 1.0;
        for _ in 0..MAX_STAGES {
            for _ in 0..MAX_NEWTON {
                if self.strictly_feasible(&x) {
                    return Some(x);
                }
                let hs: Vec<f64> = norm_slacks(&x).iter().map(|h| h - sigma).collect();
                let mut blocks: Vec<CMat> = self.sizes.iter().map(|&n| CMat::zeros(n, n)).collect();
                let mut us = Vec::with_capacity(m + 1);
                for (j, &h) in hs.iter().enumerate().take(m) {
                    let c = self.constraint(j);
                    let s = self.scales[j];
                    for (blk, bc) in blocks.iter_mut().zip(c.quad.curvature.blocks()) {
                        *blk += bc * real(2.0 / (s * h));
                    }
                    us.push(c.quad.gradient(&x) * real(1.0 / s));
                }
                for blk in blocks.iter_mut() {
                    for i in 0..blk.nrows() {
                        blk[(i, i)] += real(2.0 / (r2 * hs[m]));
                    }
                }
                us.push(&x * real(-2.0 / r2));
                // Gradient of the merit: x-part -Σ u_i/h_i, σ-part -t + Σ 1/h_i.
                let mut rx = CVec::zeros(x.len());
                for (u, h) in us.iter().zip(&hs) {
                    rx += u * real(1.0 / h);
                }
                let r_sigma = t - hs.iter().map(|h| 1.0 / h).sum::<f64>();
                let coupling: CVec =
                    us.iter().zip(&hs).fold(CVec::zeros(x.len()), |acc, (u, h)| acc + u * real(-1.0 / (h * h)));
                let s_ss: f64 = hs.iter().map(|h| 1.0 / (h * h)).sum();
                let a = BlockCholesky::new(blocks)?;
                let y1 = woodbury_solve(&a, &us, &hs, &rx)?;
                let y2 = woodbury_solve(&a, &us, &hs, &coupling)?;
                let denom = s_ss - inner(&coupling, &y2).re;
                if !(denom > 0.0) {
                    return None;
                }
                let ds = (r_sigma - inner(&coupling, &y1).re) / denom;
                let dx = &y1 - &y2 * real(ds);
                let dec = inner(&rx, &dx).re + r_sigma * ds;
                if !(dec.is_finite()) || dec / 2.0 <= INNER_TOL {
                    break;
                }
                let phi = merit(&x, sigma, t)?;
                let mut step = 1.0;
                let mut accepted = false;
                while step > MIN_STEP {
                    let cx = &x + &dx * real(step);
                    let cs = sigma + ds * step;
                    if let Some(p) = merit(&cx, cs, t) {
                        if p <= phi - LS_ALPHA * step * dec {
                            x = cx;
                            sigma = cs;
                            accepted = true;
                            break;
                        }
                    }
                    step *= LS_BETA;
                }
                if !accepted {
                    break;
                }
            }
            if self.strictly_feasible(&x) {
                return Some(x);
            }
            if (m + 1) as f64 / t < 1e-12 {
                return None;
            }
            t *= MU;
        }
        None
    }

    fn barrier_multipliers(&self, x: &CVec, t: f64) -> Multipliers {
        let mut lam = vec![0.0; self.problem.constraints.len()];
        for (j, g) in self.slacks(x).into_iter().enumerate() {
            lam[self.active[j]] = 1.0 / (t * g);
        }
        Multipliers { constraints: lam, ball: 1.0 / (t * self.problem.ball_slack(x)) }
    }

    /// Barrier multipliers, with those of nearly active constraints re-fitted by
    /// least squares on the stationarity condition; the better of the two is kept.
    fn multipliers(&self, x: &CVec, t: f64) -> Multipliers {
        let barrier = self.barrier_multipliers(x, t);
        let mut near: Vec<(Option<usize>, CVec)> = Vec::new();
        for (j, g) in self.slacks(x).into_iter().enumerate() {
            if g <= ACTIVE_SLACK * self.scales[j] {
                near.push((Some(self.active[j]), self.constraint(j).quad.gradient(x)));
            }
        }
        if self.problem.ball_slack(x) <= ACTIVE_SLACK * self.problem.ball_radius_sq {
            near.push((None, x * real(-2.0)));
        }
        if near.is_empty() {
            return barrier;
        }
        let mut base = self.problem.objective.gradient(x);
        for (j, &lam) in barrier.constraints.iter().enumerate() {
            if !near.iter().any(|(i, _)| *i == Some(j)) {
                base += self.problem.constraints[j].quad.gradient(x) * real(lam);
            }
        }
        if !near.iter().any(|(i, _)| i.is_none()) {
            base -= x * real(2.0 * barrier.ball);
        }
        let k = near.len();
        let mut n = DMatrix::<f64>::zeros(k, k);
        let mut rhs = DVector::<f64>::zeros(k);
        for i in 0..k {
            for j in 0..k {
                n[(i, j)] = inner(&near[i].1, &near[j].1).re;
            }
            rhs[i] = -inner(&near[i].1, &base).re;
        }
        let Some(fit) = n.lu().solve(&rhs) else { return barrier };
        if fit.iter().any(|&l| !(l >= 0.0)) {
            return barrier;
        }
        let mut refined = barrier.clone();
        for ((i, _), &l) in near.iter().zip(fit.iter()) {
            match i {
                Some(j) => refined.constraints[*j] = l,
                None => refined.ball = l,
            }
        }
        if kkt_residual(self.problem, x, &refined) < kkt_residual(self.problem, x, &barrier) {
            refined
        } else {
            barrier
        }
    }
}

fn finish(
    problem: &QcqpProblem,
    x: CVec,
    multipliers: Multipliers,
    status: QcqpStatus,
    newton_steps: usize,
    stage_objectives: Vec<f64>,
) -> QcqpSolution {
    let kkt = kkt_residual(problem, &x, &multipliers);
    QcqpSolution {
        objective: problem.objective.value(&x),
        x,
        multipliers,
        kkt_residual: kkt,
        status,
        newton_steps,
        stage_objectives,
    }
}

/// Solve a concave QCQP from a warm start.
///
/// `tol` bounds the relative duality gap and the KKT residual, both measured
/// against `1 + |objective|`. The returned point is never worse than a
/// feasible warm start.
pub fn solve(problem: &QcqpProblem, warm_start: &CVec, tol: f64) -> Result<QcqpSolution> {
    if warm_start.len() != problem.dim() {
        return Err(Error::InvalidProblem("warm start has the wrong dimension".into()));
    }
    if !(tol > 0.0) {
        return Err(Error::InvalidProblem("tolerance must be positive".into()));
    }
    let n_cons = problem.constraints.len();
    let warm_violation = problem.violation(warm_start);
    let warm_feasible = warm_violation <= FEAS_TOL;
    let fallback = |status| {
        let mult = Multipliers { constraints: vec![0.0; n_cons], ball: 0.0 };
        finish(problem, warm_start.clone(), mult, status, 0, Vec::new())
    };
    let Ok(prep) = Prepared::new(problem) else {
        return Ok(fallback(QcqpStatus::Infeasible));
    };
    let Some(mut x) = prep.phase_one(warm_start) else {
        let status = if warm_feasible { QcqpStatus::MaxIter } else { QcqpStatus::Infeasible };
        return Ok(fallback(status));
    };

    let m = prep.n_barrier() as f64;
    let mut t = m / (1.0 + problem.objective.value(&x).abs());
    let mut steps = 0;
    let mut stage_objectives = Vec::new();
    let mut status = QcqpStatus::MaxIter;
    for _ in 0..MAX_STAGES {
        steps += prep.center(&mut x, t, INNER_TOL, MAX_NEWTON);
        let obj = problem.objective.value(&x);
        stage_objectives.push(obj);
        if m / t <= tol * (1.0 + obj.abs()) {
            steps += prep.center(&mut x, t, POLISH_TOL, 20);
            let obj = problem.objective.value(&x);
            *stage_objectives.last_mut().unwrap() = obj;
            let mult = prep.multipliers(&x, t);
            if kkt_residual(problem, &x, &mult) <= tol * (1.0 + obj.abs()) {
                status = QcqpStatus::Optimal;
                break;
            }
        }
        if m / t <= MIN_GAP * (1.0 + obj.abs()) {
            break;
        }
        t *= MU;
    }
    let mult = prep.multipliers(&x, t);
    if warm_feasible && problem.objective.value(&x) < problem.objective.value(warm_start) {
        return Ok(fallback(QcqpStatus::MaxIter));
    }
    Ok(finish(problem, x, mult, status, steps, stage_objectives))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{random_complex_matrix, random_complex_vector, rng_from_seed};
    use proptest::prelude::*;
    use rand::Rng;

    fn psd(n: usize, rank: usize, seed: u64) -> CMat {
        let g = random_complex_matrix(n, rank, &mut rng_from_seed(seed));
        &g * g.adjoint()
    }

    fn quad(a: CVec, b: CMat, c: f64) -> ConcaveQuadratic {
        ConcaveQuadratic::new(a, Curvature::dense(b).unwrap(), c).unwrap()
    }

    #[test]
    fn unconstrained_quadratic_peak() {
        let a = random_complex_vector(3, &mut rng_from_seed(1));
        let p = QcqpProblem::new(quad(a.clone(), CMat::identity(3, 3), 0.0), vec![], 100.0).unwrap();
        let s = solve(&p, &CVec::zeros(3), 1e-10).unwrap();
        assert_eq!(s.status, QcqpStatus::Optimal);
        assert!((s.x - a).norm() < 1e-6);
    }

    #[test]
    fn linear_over_ball() {
        let a = random_complex_vector(4, &mut rng_from_seed(2));
        let p = QcqpProblem::new(quad(a.clone(), CMat::zeros(4, 4), 0.0), vec![], 2.0).unwrap();
        let s = solve(&p, &CVec::zeros(4), 1e-10).unwrap();
        let expected = &a * real(2f64.sqrt() / a.norm());
        assert!((s.x - expected).norm() < 1e-6);
    }

    #[test]
    fn kkt_residual_examples() {
        let a = random_complex_vector(4, &mut rng_from_seed(3));
        let p = QcqpProblem::new(quad(a.clone(), CMat::zeros(4, 4), 0.0), vec![], 3.0).unwrap();
        let x = &a * real(3f64.sqrt() / a.norm());
        let mult = Multipliers { constraints: vec![], ball: a.norm() / 3f64.sqrt() };
        assert!(kkt_residual(&p, &x, &mult) < 1e-8);
        let zero = kkt_residual(&p, &CVec::zeros(4), &Multipliers::default());
        assert!((zero - 2.0 * a.norm()).abs() < 1e-12);
    }

    #[test]
    fn rejects_indefinite_curvature() {
        let mut b = CMat::identity(2, 2);
        b[(1, 1)] = real(-0.1);
        assert!(matches!(Curvature::dense(b), Err(Error::InvalidProblem(_))));
        let mut b = CMat::identity(2, 2);
        b[(1, 1)] = real(-1e-12);
        let c = Curvature::dense(b).unwrap();
        assert!(SymmetricEigen::new(c.to_dense()).eigenvalues.min() >= -1e-15);
    }

    #[test]
    fn infeasible_warm_start_without_interior() {
        // ‖x‖² ≤ 1 and -‖x‖² ≥ 0.5 has no solution.
        let obj = quad(CVec::from_element(2, real(1.0)), CMat::zeros(2, 2), 0.0);
        let con = QcqpConstraint { quad: quad(CVec::zeros(2), CMat::identity(2, 2), 0.0), lower: 0.5 };
        let p = QcqpProblem::new(obj, vec![con], 1.0).unwrap();
        let s = solve(&p, &CVec::zeros(2), 1e-8).unwrap();
        assert_eq!(s.status, QcqpStatus::Infeasible);
    }

    #[test]
    fn phase_one_recovers_interior() {
        // Warm start at the origin violates 2Re(x_0) >= 1.
        let obj = quad(CVec::zeros(2), CMat::identity(2, 2), 0.0);
        let mut a = CVec::zeros(2);
        a[0] = real(1.0);
        let con = QcqpConstraint { quad: quad(a, CMat::zeros(2, 2), 0.0), lower: 1.0 };
        let p = QcqpProblem::new(obj, vec![con], 4.0).unwrap();
        let s = solve(&p, &CVec::zeros(2), 1e-10).unwrap();
        assert_eq!(s.status, QcqpStatus::Optimal);
        assert!((s.x[0] - real(0.5)).norm() < 1e-6 && s.x[1].norm() < 1e-6);
    }

    #[test]
    fn boundary_warm_start_is_improved() {
        let mut rng = rng_from_seed(4);
        let n = 3;
        let obj = quad(random_complex_vector(n, &mut rng), psd(n, 2, 5), 0.0);
        let h = random_complex_vector(n, &mut rng);
        let cq = quad(h.clone(), CMat::zeros(n, n), 0.0);
        let x0 = &h * real(0.3 / h.norm());
        let lower = cq.value(&x0);
        let p = QcqpProblem::new(obj, vec![QcqpConstraint { quad: cq, lower }], 1.0).unwrap();
        let s = solve(&p, &x0, 1e-9).unwrap();
        assert!(s.objective >= p.objective.value(&x0) - 1e-9);
        assert!(p.violation(&s.x) <= 1e-7);
    }

    fn random_problem(seed: u64, n: usize) -> QcqpProblem {
        let mut rng = rng_from_seed(seed);
        let obj = quad(random_complex_vector(n, &mut rng), psd(n, 1, seed + 1) * real(0.5), 0.0);
        let b = psd(n, 1, seed + 2) * real(0.3);
        let cq = quad(random_complex_vector(n, &mut rng), b, 0.0);
        let lower = -rng.random_range(0.05..0.5);
        QcqpProblem::new(obj, vec![QcqpConstraint { quad: cq, lower }], rng.random_range(0.5..2.0)).unwrap()
    }

    /// Dual function `max_x q0 + Σ λ_i g_i + ν g_b` for a dense problem.
    fn dual_value(p: &QcqpProblem, lam: &[f64], nu: f64) -> Option<f64> {
        let n = p.dim();
        let mut m = p.objective.curvature.to_dense() + CMat::identity(n, n) * real(nu);
        let mut a = p.objective.linear.clone();
        let mut c = p.objective.constant + nu * p.ball_radius_sq;
        for (con, &l) in p.constraints.iter().zip(lam) {
            m += con.quad.curvature.to_dense() * real(l);
            a += &con.quad.linear * real(l);
            c += l * (con.quad.constant - con.lower);
        }
        let x = m.cholesky()?.solve(&a);
        Some(inner(&a, &x).re + c)
    }

    #[test]
    fn duality_gap_is_small() {
        for seed in 0..20 {
            let p = random_problem(100 + seed, 3);
            let s = solve(&p, &CVec::zeros(3), 1e-9).unwrap();
            assert_eq!(
                s.status,
                QcqpStatus::Optimal,
                "seed {seed} kkt {} steps {} stages {:?} x {}",
                s.kkt_residual,
                s.newton_steps,
                s.stage_objectives,
                s.x
            );
            let d = dual_value(&p, &s.multipliers.constraints, s.multipliers.ball).unwrap();
            assert!(d - s.objective <= 1e-6 * (1.0 + s.objective.abs()), "gap {}", d - s.objective);
            assert!(d >= s.objective - 1e-9);
        }
    }

    #[test]
    fn central_path_objectives_increase() {
        for seed in 0..10 {
            let p = random_problem(200 + seed, 4);
            let s = solve(&p, &CVec::zeros(4), 1e-9).unwrap();
            for w in s.stage_objectives.windows(2) {
                assert!(w[1] >= w[0] - 1e-9 * (1.0 + w[0].abs()), "{:?}", s.stage_objectives);
            }
        }
    }

    #[test]
    fn block_diagonal_matches_dense() {
        let mut rng = rng_from_seed(9);
        let blocks = vec![psd(2, 1, 10), psd(3, 2, 11)];
        let cblocks = vec![psd(2, 1, 12), CMat::zeros(3, 3)];
        let a = random_complex_vector(5, &mut rng);
        let h = random_complex_vector(5, &mut rng);
        let obj_b = ConcaveQuadratic::new(a.clone(), Curvature::block_diagonal(blocks).unwrap(), 0.0).unwrap();
        let con_b = ConcaveQuadratic::new(h.clone(), Curvature::block_diagonal(cblocks).unwrap(), 0.0).unwrap();
        let obj_d = quad(a, obj_b.curvature.to_dense(), 0.0);
        let con_d = quad(h, con_b.curvature.to_dense(), 0.0);
        let pb = QcqpProblem::new(obj_b, vec![QcqpConstraint { quad: con_b, lower: -0.2 }], 1.5).unwrap();
        let pd = QcqpProblem::new(obj_d, vec![QcqpConstraint { quad: con_d, lower: -0.2 }], 1.5).unwrap();
        let sb = solve(&pb, &CVec::zeros(5), 1e-10).unwrap();
        let sd = solve(&pd, &CVec::zeros(5), 1e-10).unwrap();
        assert!((sb.objective - sd.objective).abs() < 1e-8);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn unitary_invariance(seed in 0u64..10_000) {
            let p = random_problem(seed, 3);
            let q = random_complex_matrix(3, 3, &mut rng_from_seed(seed + 99)).qr().q();
            let rot = |c: &ConcaveQuadratic| {
                quad(&q * &c.linear, &q * c.curvature.to_dense() * q.adjoint(), c.constant)
            };
            let pr = QcqpProblem::new(
                rot(&p.objective),
                p.constraints.iter().map(|c| QcqpConstraint { quad: rot(&c.quad), lower: c.lower }).collect(),
                p.ball_radius_sq,
            ).unwrap();
            let a = solve(&p, &CVec::zeros(3), 1e-10).unwrap();
            let b = solve(&pr, &CVec::zeros(3), 1e-10).unwrap();
            prop_assert!((a.objective - b.objective).abs() <= 1e-8 * (1.0 + a.objective.abs()));
        }
    }
}
