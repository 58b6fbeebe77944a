//! Alternating optimization of the weighted SCNR / worst-user SINR objective.
//!
//! Each outer round updates, in order, the digital receive filter `w`, the
//! analog combiner `W_RF`, the precoder `F`, and then the auxiliary variables
//! `u_r`, `u_k` and the SINR threshold `ζ`. Every sub-step keeps its input when
//! the candidate would lower the surrogate, so the recorded objective never
//! decreases.

pub mod manifold;
pub mod precoder;
pub mod receive;
pub mod surrogate;

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{random_unit_modulus, rng_from_seed, Scene, SystemConfig};
use crate::linalg::{hpd_cholesky, hstack, real, CVec, C64};
use crate::linear::{
    bsyn_precoder, hybrid_decompose, mvdr_from_vectors, zf_isac_precoder, zf_precoder, TargetProjection, ZfBasis,
};
use crate::metrics::{evaluate, HybridReceiver, MetricReport, Precoder, SensingVectors};
use crate::qcqp::QcqpStatus;

pub use manifold::update_wrf;
pub use precoder::update_f;
pub use receive::update_w;
pub use surrogate::{surrogate_coeffs, surrogate_value, update_u_k, update_u_r, update_zeta, SurrogateCoeffs};

/// Scene, configuration and cached steering vectors shared by all updates.
pub struct AoContext<'a> {
    pub scene: &'a Scene,
    pub config: &'a SystemConfig,
    pub sv: SensingVectors,
    /// Target reflection amplitude `σ_t`.
    pub sigma_t: f64,
}

impl<'a> AoContext<'a> {
    pub fn new(scene: &'a Scene, config: &'a SystemConfig) -> Result<Self> {
        config.validate()?;
        scene.validate(config)?;
        Ok(Self {
            sv: SensingVectors::new(scene, config.n_tx, config.n_rx)?,
            sigma_t: scene.target_gain_var.sqrt(),
            scene,
            config,
        })
    }
}

/// Surrogate value before and after one sub-step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepReport {
    pub before: f64,
    pub after: f64,
    pub accepted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iter: usize,
    pub objective: f64,
    pub scnr: f64,
    pub min_sinr: f64,
    /// Surrogate after the `w`, `W_RF` and `F` sub-steps of this round.
    pub surrogate_after_w: f64,
    pub surrogate_after_wrf: f64,
    pub surrogate_after_f: f64,
    pub qcqp_status: Option<QcqpStatus>,
    pub manifold_iterations: usize,
    pub w_seconds: f64,
    pub wrf_seconds: f64,
    pub f_seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AoState {
    pub receiver: HybridReceiver,
    pub precoder: Precoder,
    pub u_r: CVec,
    pub u_k: Vec<C64>,
    pub zeta: f64,
    /// Weighted objective after initialization and after every round.
    pub objective_trace: Vec<f64>,
    pub scnr_trace: Vec<f64>,
    pub min_sinr_trace: Vec<f64>,
    pub records: Vec<IterationRecord>,
    pub converged: bool,
}

impl AoState {
    /// State with zero auxiliaries; call the auxiliary updates before iterating.
    pub fn new(receiver: HybridReceiver, precoder: Precoder) -> Self {
        let ns = precoder.n_streams();
        let k = precoder.n_comm;
        Self {
            receiver,
            precoder,
            u_r: CVec::zeros(ns),
            u_k: vec![C64::new(0.0, 0.0); k],
            zeta: 0.0,
            objective_trace: Vec::new(),
            scnr_trace: Vec::new(),
            min_sinr_trace: Vec::new(),
            records: Vec::new(),
            converged: false,
        }
    }

    pub fn rounds(&self) -> usize {
        self.records.len()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReceiverInit {
    /// Random unit-modulus combiner and the best digital filter for it.
    #[default]
    Random,
    /// Hybrid decomposition of the MVDR receiver for the initial precoder.
    Mvdr,
}

/// Starting point of the iteration. Missing parts are built from the scene.
#[derive(Debug, Clone, Default)]
pub struct AoInit {
    pub precoder: Option<Precoder>,
    pub receiver: Option<HybridReceiver>,
    pub receiver_init: ReceiverInit,
    pub seed: u64,
}

impl AoInit {
    pub fn from_seed(seed: u64) -> Self {
        Self { seed, ..Default::default() }
    }
}

/// SINR target used for the initial precoder, as a fraction of the ZF-ISAC limit.
pub fn init_sinr_fraction(config: &SystemConfig) -> f64 {
    config.init_sinr_fraction.unwrap_or_else(|| config.weight_comm().clamp(0.05, 0.95))
}

/// Initial precoder with `N_s` columns and power at most `P`.
///
/// Users are served at a fraction of the largest SINR that ZF-ISAC supports.
/// With `N_s = K` the B-syn precoder is used; otherwise ZF-ISAC, with its
/// sensing beam split evenly over the `N_s - K` sensing columns.
pub fn initial_precoder(scene: &Scene, config: &SystemConfig) -> Result<Precoder> {
    let (n_tx, ns, k) = (config.n_tx, config.n_streams, config.n_users);
    let p = config.power_budget;
    let mut cols = vec![CVec::zeros(n_tx); ns];
    if k == 0 {
        cols[0] = crate::geometry::steering_vector(n_tx, scene.target_aod)? * real(p.sqrt());
        return Precoder::new(hstack(&cols, n_tx), 0);
    }
    let frac = init_sinr_fraction(config);
    let basis = ZfBasis::new(&scene.ue_channels)?;
    let proj = match TargetProjection::new(&basis, scene.target_aod) {
        Ok(proj) => proj,
        Err(Error::TargetInCommSpan(_)) => {
            let (zf, _) = zf_precoder(&scene.ue_channels, p * frac)?;
            for (i, col) in cols.iter_mut().enumerate().take(k) {
                *col = zf.column(i);
            }
            return Precoder::new(hstack(&cols, n_tx), k);
        }
        Err(e) => return Err(e),
    };
    let c_a = basis.trace + proj.x() / proj.c_b;
    let gamma = frac * p / (config.noise_ue * c_a);
    if ns == k {
        let (pre, _) = bsyn_precoder(&scene.ue_channels, scene.target_aod, gamma, p, config.noise_ue)?;
        for (i, col) in cols.iter_mut().enumerate() {
            *col = pre.column(i);
        }
    } else {
        let (pre, _) = zf_isac_precoder(&scene.ue_channels, scene.target_aod, gamma, p, config.noise_ue)?;
        for (i, col) in cols.iter_mut().enumerate().take(k) {
            *col = pre.column(i);
        }
        let share = (1.0 / (ns - k) as f64).sqrt();
        for col in cols.iter_mut().skip(k) {
            *col = pre.column(k) * real(share);
        }
    }
    Precoder::new(hstack(&cols, n_tx), k)
}

/// Initial receiver for a given precoder.
pub fn initial_receiver(ctx: &AoContext, precoder: &Precoder, how: ReceiverInit, seed: u64) -> Result<HybridReceiver> {
    let config = ctx.config;
    match how {
        ReceiverInit::Random => {
            let mut rng = rng_from_seed(seed);
            let w_rf = random_unit_modulus(config.n_rx, config.n_rf, &mut rng);
            let r = ctx.sv.clutter_noise_covariance(&precoder.matrix, config.noise_tmt);
            let b_w = w_rf.adjoint() * r * &w_rf;
            let rhs = w_rf.adjoint() * &ctx.sv.target_rx;
            let w = hpd_cholesky(b_w).map(|c| c.solve(&rhs)).unwrap_or(rhs);
            let norm = w.norm();
            if !(norm > 0.0) {
                return Err(Error::Initialization("initial receive filter vanished".into()));
            }
            HybridReceiver::new(w_rf, w * real(1.0 / norm))
        }
        ReceiverInit::Mvdr => {
            let (v, _) = mvdr_from_vectors(&ctx.sv, &precoder.matrix, config.noise_tmt)?;
            Ok(hybrid_decompose(&v, config.n_rf)?.receiver)
        }
    }
}

fn record_metrics(state: &mut AoState, ctx: &AoContext) -> Result<MetricReport> {
    let report = evaluate(&state.receiver, &state.precoder, ctx.scene, ctx.config)?;
    state.objective_trace.push(report.objective);
    state.scnr_trace.push(report.scnr);
    state.min_sinr_trace.push(report.min_sinr);
    Ok(report)
}

fn align_auxiliaries(state: &mut AoState, ctx: &AoContext) -> Result<()> {
    update_u_r(state, ctx)?;
    update_u_k(state, ctx)?;
    update_zeta(state, ctx)
}

/// Build and align the initial state.
pub fn initialize(ctx: &AoContext, init: &AoInit) -> Result<AoState> {
    let config = ctx.config;
    let precoder = match &init.precoder {
        Some(p) => p.clone(),
        None => initial_precoder(ctx.scene, config)?,
    };
    if precoder.n_tx() != config.n_tx || precoder.n_streams() != config.n_streams || precoder.n_comm != config.n_users {
        return Err(Error::Initialization("initial precoder has the wrong shape".into()));
    }
    if precoder.power() > config.power_budget * (1.0 + 1e-9) {
        return Err(Error::Initialization(format!(
            "initial precoder power {:.6e} exceeds the budget {:.6e}",
            precoder.power(),
            config.power_budget
        )));
    }
    let receiver = match &init.receiver {
        Some(r) => r.clone(),
        None => initial_receiver(ctx, &precoder, init.receiver_init, init.seed)?,
    };
    if receiver.n_rx() != config.n_rx || receiver.digital.len() != config.n_rf {
        return Err(Error::Initialization("initial receiver has the wrong shape".into()));
    }
    if receiver.digital.norm() > 1.0 + 1e-9 {
        return Err(Error::Initialization("initial digital filter exceeds unit norm".into()));
    }
    let mut state = AoState::new(receiver, precoder);
    align_auxiliaries(&mut state, ctx)?;
    record_metrics(&mut state, ctx)?;
    Ok(state)
}

/// One outer round. Returns the record appended to the state.
pub fn ao_round(state: &mut AoState, ctx: &AoContext) -> Result<IterationRecord> {
    let t0 = Instant::now();
    update_w(state, ctx)?;
    let after_w = surrogate_value(state, ctx);
    let t1 = Instant::now();
    let (_, mtrace) = update_wrf(state, ctx);
    let after_wrf = surrogate_value(state, ctx);
    let t2 = Instant::now();
    let f_step = update_f(state, ctx)?;
    let after_f = surrogate_value(state, ctx);
    let t3 = Instant::now();
    align_auxiliaries(state, ctx)?;
    let report = record_metrics(state, ctx)?;
    let rec = IterationRecord {
        iter: state.records.len() + 1,
        objective: report.objective,
        scnr: report.scnr,
        min_sinr: report.min_sinr,
        surrogate_after_w: after_w,
        surrogate_after_wrf: after_wrf,
        surrogate_after_f: after_f,
        qcqp_status: f_step.status,
        manifold_iterations: mtrace.iterations,
        w_seconds: (t1 - t0).as_secs_f64(),
        wrf_seconds: (t2 - t1).as_secs_f64(),
        f_seconds: (t3 - t2).as_secs_f64(),
    };
    state.records.push(rec.clone());
    Ok(rec)
}

/// Run the alternating optimization until successive objectives differ by less than `ao_tol`.
pub fn ao_solve(scene: &Scene, config: &SystemConfig, init: &AoInit) -> Result<AoState> {
    let ctx = AoContext::new(scene, config)?;
    let mut state = initialize(&ctx, init)?;
    for _ in 0..config.ao_max_iter {
        let prev = *state.objective_trace.last().expect("initial objective recorded");
        ao_round(&mut state, &ctx)?;
        let cur = *state.objective_trace.last().expect("objective recorded");
        if cur - prev < config.ao_tol {
            state.converged = true;
            break;
        }
    }
    Ok(state)
}
