//! Trial execution, Monte-Carlo orchestration and parameter sweeps.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::ao::{ao_solve, AoInit, IterationRecord};
use crate::error::{Error, Result};
use crate::geometry::{child_seed, db_to_linear, dbm_to_watts, generate_scene, Scene};
use crate::linear::{bsyn_precoder, hybrid_decompose, mvdr_receiver, zf_isac_precoder};
use crate::metrics::{evaluate, HybridReceiver, MetricReport, Precoder};

use super::config::{ExperimentSpec, Method, SweepParameter, SweepSection};

/// Result of one design method on one trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodOutcome {
    pub method: Method,
    /// SINR target used by a linear design, or the minimum SINR reached by AO.
    pub gamma: Option<f64>,
    pub report: Option<MetricReport>,
    pub error: Option<String>,
    pub n_streams: Option<usize>,
    /// Relative residual of the hybrid factorization of the MVDR receiver.
    pub hybrid_residual: Option<f64>,
    pub ao_rounds: Option<usize>,
    pub ao_converged: Option<bool>,
    pub seconds: f64,
}

impl MethodOutcome {
    fn failed(method: Method, gamma: Option<f64>, error: &Error, seconds: f64) -> Self {
        Self {
            method,
            gamma,
            report: None,
            error: Some(error.to_string()),
            n_streams: None,
            hybrid_residual: None,
            ao_rounds: None,
            ao_converged: None,
            seconds,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: usize,
    pub seed: u64,
    pub outcomes: Vec<MethodOutcome>,
    /// AO trace; the first entry is the initial point.
    pub convergence: Vec<ConvergencePoint>,
    pub seconds: f64,
}

impl TrialRecord {
    pub fn outcome(&self, method: Method) -> Option<&MethodOutcome> {
        self.outcomes.iter().find(|o| o.method == method)
    }

    /// Reason of the first failed method, if any.
    pub fn failure(&self) -> Option<&str> {
        self.outcomes.iter().find_map(|o| o.error.as_deref())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvergencePoint {
    pub iter: usize,
    pub objective: f64,
    pub scnr: f64,
    pub min_sinr: f64,
}

/// Precoder and receiver produced by one method.
#[derive(Debug, Clone)]
pub struct TrialDesign {
    pub method: Method,
    pub precoder: Precoder,
    pub receiver: HybridReceiver,
}

fn linear_design(method: Method, scene: &Scene, spec: &ExperimentSpec, gamma: f64) -> Result<(TrialDesign, f64)> {
    let c = &spec.config;
    let precoder = match method {
        Method::Bsyn => bsyn_precoder(&scene.ue_channels, scene.target_aod, gamma, c.power_budget, c.noise_ue)?.0,
        Method::ZfIsac => zf_isac_precoder(&scene.ue_channels, scene.target_aod, gamma, c.power_budget, c.noise_ue)?.0,
        Method::Ao => unreachable!("AO is not a linear design"),
    };
    let v = mvdr_receiver(scene, &precoder, c.noise_tmt, c.n_rx)?;
    let hybrid = hybrid_decompose(&v, c.n_rf)?;
    Ok((TrialDesign { method, precoder, receiver: hybrid.receiver }, hybrid.relative_residual))
}

/// Run every selected method on the scene of trial `trial`.
pub fn run_trial(spec: &ExperimentSpec, methods: &[Method], trial: usize) -> Result<(TrialRecord, Vec<TrialDesign>)> {
    let start = Instant::now();
    let seed = child_seed(spec.master_seed, trial as u64);
    let scene = generate_scene(&spec.config, &spec.scene_params, &spec.scenario, seed)?;
    let mut outcomes = Vec::new();
    let mut designs = Vec::new();
    let mut convergence = Vec::new();
    let mut ao_gamma = None;

    if methods.contains(&Method::Ao) {
        let t0 = Instant::now();
        let init = AoInit { receiver_init: spec.receiver_init, ..AoInit::from_seed(child_seed(seed, 1)) };
        match ao_solve(&scene, &spec.config, &init) {
            Ok(state) => {
                let report = evaluate(&state.receiver, &state.precoder, &scene, &spec.config)?;
                convergence =
                    trace_points(&state.objective_trace, &state.scnr_trace, &state.min_sinr_trace, &state.records);
                ao_gamma = Some(report.min_sinr);
                outcomes.push(MethodOutcome {
                    method: Method::Ao,
                    gamma: Some(report.min_sinr),
                    n_streams: Some(state.precoder.n_streams()),
                    report: Some(report),
                    error: None,
                    hybrid_residual: None,
                    ao_rounds: Some(state.rounds()),
                    ao_converged: Some(state.converged),
                    seconds: t0.elapsed().as_secs_f64(),
                });
                designs.push(TrialDesign { method: Method::Ao, precoder: state.precoder, receiver: state.receiver });
            }
            Err(e) => outcomes.push(MethodOutcome::failed(Method::Ao, None, &e, t0.elapsed().as_secs_f64())),
        }
    }

    for &method in methods.iter().filter(|&&m| m != Method::Ao) {
        let t0 = Instant::now();
        let Some(gamma) = spec.gamma.or(ao_gamma) else {
            let e = Error::Config("no SINR target: the AO design did not produce one".into());
            outcomes.push(MethodOutcome::failed(method, None, &e, 0.0));
            continue;
        };
        let result = linear_design(method, &scene, spec, gamma)
            .and_then(|(d, res)| Ok((evaluate(&d.receiver, &d.precoder, &scene, &spec.config)?, d, res)));
        match result {
            Ok((report, design, residual)) => {
                outcomes.push(MethodOutcome {
                    method,
                    gamma: Some(gamma),
                    n_streams: Some(design.precoder.n_streams()),
                    report: Some(report),
                    error: None,
                    hybrid_residual: Some(residual),
                    ao_rounds: None,
                    ao_converged: None,
                    seconds: t0.elapsed().as_secs_f64(),
                });
                designs.push(design);
            }
            Err(e) => outcomes.push(MethodOutcome::failed(method, Some(gamma), &e, t0.elapsed().as_secs_f64())),
        }
    }
    let record = TrialRecord { trial, seed, outcomes, convergence, seconds: start.elapsed().as_secs_f64() };
    Ok((record, designs))
}

fn trace_points(
    objective: &[f64],
    scnr: &[f64],
    min_sinr: &[f64],
    records: &[IterationRecord],
) -> Vec<ConvergencePoint> {
    debug_assert_eq!(objective.len(), records.len() + 1);
    (0..objective.len())
        .map(|i| ConvergencePoint { iter: i, objective: objective[i], scnr: scnr[i], min_sinr: min_sinr[i] })
        .collect()
}

/// Aggregate statistics of one method over the successful trials.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    pub trials_ok: usize,
    pub trials_failed: usize,
    pub mean_scnr: f64,
    pub std_scnr: f64,
    pub mean_min_sinr: f64,
    pub mean_objective: f64,
    pub mean_gamma: f64,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = if n > 1 { values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64 } else { 0.0 };
    (mean, var.sqrt())
}

/// Deterministic fold over the trials in index order.
pub fn summarize(methods: &[Method], trials: &[TrialRecord]) -> Vec<MethodSummary> {
    methods
        .iter()
        .map(|&method| {
            let outs: Vec<&MethodOutcome> = trials.iter().filter_map(|t| t.outcome(method)).collect();
            let ok: Vec<(&MetricReport, f64)> =
                outs.iter().filter_map(|o| o.report.as_ref().map(|r| (r, o.gamma.unwrap_or(f64::NAN)))).collect();
            let (mean_scnr, std_scnr) = mean_std(&ok.iter().map(|(r, _)| r.scnr).collect::<Vec<_>>());
            MethodSummary {
                method,
                trials_ok: ok.len(),
                trials_failed: outs.len() - ok.len(),
                mean_scnr,
                std_scnr,
                mean_min_sinr: mean_std(&ok.iter().map(|(r, _)| r.min_sinr).collect::<Vec<_>>()).0,
                mean_objective: mean_std(&ok.iter().map(|(r, _)| r.objective).collect::<Vec<_>>()).0,
                mean_gamma: mean_std(&ok.iter().map(|(_, g)| *g).collect::<Vec<_>>()).0,
            }
        })
        .collect()
}

#[derive(Serialize)]
struct ManifestCore<'a> {
    package: &'static str,
    version: &'static str,
    spec: &'a ExperimentSpec,
    methods: &'a [Method],
    sweep: Option<&'a SweepSection>,
}

/// SHA-256 of the resolved experiment, which identifies every output file.
pub fn manifest_hash(spec: &ExperimentSpec, methods: &[Method], sweep: Option<&SweepSection>) -> Result<String> {
    let core =
        ManifestCore { package: env!("CARGO_PKG_NAME"), version: env!("CARGO_PKG_VERSION"), spec, methods, sweep };
    Ok(hex::encode(Sha256::digest(serde_json::to_vec(&core)?)))
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub spec: ExperimentSpec,
    pub methods: Vec<Method>,
    pub manifest_sha256: String,
    pub trials: Vec<TrialRecord>,
    pub summary: Vec<MethodSummary>,
    /// Designs of trial 0, used for the beam patterns.
    pub first_designs: Vec<TrialDesign>,
    pub first_scene: Scene,
}

impl ExperimentResult {
    pub fn all_failed(&self) -> bool {
        self.trials.iter().all(|t| t.outcomes.iter().all(|o| o.report.is_none()))
    }

    pub fn summary_for(&self, method: Method) -> Option<&MethodSummary> {
        self.summary.iter().find(|s| s.method == method)
    }
}

fn pool(jobs: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))
}

/// Run all trials with the given methods on `jobs` workers; results are in trial order.
pub fn monte_carlo_with(spec: &ExperimentSpec, methods: &[Method], jobs: usize) -> Result<ExperimentResult> {
    if spec.trials == 0 {
        return Err(Error::Config("at least one trial is required".into()));
    }
    if methods.is_empty() {
        return Err(Error::Config("no methods selected".into()));
    }
    let outputs: Vec<Result<(TrialRecord, Vec<TrialDesign>)>> =
        pool(jobs)?.install(|| (0..spec.trials).into_par_iter().map(|i| run_trial(spec, methods, i)).collect());
    let mut trials = Vec::with_capacity(spec.trials);
    let mut first_designs = Vec::new();
    for (i, out) in outputs.into_iter().enumerate() {
        let (record, designs) = out?;
        if i == 0 {
            first_designs = designs;
        }
        trials.push(record);
    }
    let first_scene =
        generate_scene(&spec.config, &spec.scene_params, &spec.scenario, child_seed(spec.master_seed, 0))?;
    Ok(ExperimentResult {
        manifest_sha256: manifest_hash(spec, methods, None)?,
        summary: summarize(methods, &trials),
        spec: spec.clone(),
        methods: methods.to_vec(),
        trials,
        first_designs,
        first_scene,
    })
}

pub fn monte_carlo(spec: &ExperimentSpec, jobs: usize) -> Result<ExperimentResult> {
    monte_carlo_with(spec, &spec.method.methods(), jobs)
}

/// One grid point of a sweep.
#[derive(Debug, Clone)]
pub struct SweepPoint {
    pub value: f64,
    pub result: ExperimentResult,
}

/// Re-run the experiment for each value of `parameter`, on the same scenes.
///
/// An SINR-target sweep applies to the linear designs only; a weight sweep
/// requires AO. Power is given in dBm and targets in dB.
pub fn sweep(spec: &ExperimentSpec, parameter: SweepParameter, values: &[f64], jobs: usize) -> Result<Vec<SweepPoint>> {
    if values.is_empty() {
        return Err(Error::Config("sweep needs at least one value".into()));
    }
    let selected = spec.method.methods();
    values
        .iter()
        .map(|&value| {
            let mut s = spec.clone();
            let methods: Vec<Method> = match parameter {
                SweepParameter::GammaDb => {
                    s.gamma = Some(db_to_linear(value));
                    selected.iter().copied().filter(|&m| m != Method::Ao).collect()
                }
                SweepParameter::PowerDbm => {
                    s.config.power_budget = dbm_to_watts(value);
                    selected.clone()
                }
                SweepParameter::WeightComm => {
                    if !selected.contains(&Method::Ao) {
                        return Err(Error::Config("a weight sweep requires the AO design".into()));
                    }
                    s.config.weight_sensing = 1.0 - value;
                    selected.clone()
                }
            };
            if methods.is_empty() {
                return Err(Error::Config("an SINR-target sweep requires a linear design".into()));
            }
            s.config.validate().map_err(|e| Error::Config(e.to_string()))?;
            Ok(SweepPoint { value, result: monte_carlo_with(&s, &methods, jobs)? })
        })
        .collect()
}
