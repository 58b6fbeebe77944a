//! Experiment files in physical units and their conversion to solver inputs.
//!
//! A file is TOML, or JSON when its extension is `.json`. Powers are in dBm,
//! ratios in dB, angles in degrees and distances in meters; everything is
//! converted to linear units and radians once, here.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::ao::ReceiverInit;
use crate::error::{Error, Result};
use crate::geometry::{
    db_to_linear, dbm_to_watts, FixedClutter, ScenarioSpec, SceneParams, SvChannelParams, SystemConfig,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Ao,
    Bsyn,
    ZfIsac,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Ao => "ao",
            Method::Bsyn => "bsyn",
            Method::ZfIsac => "zf_isac",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodSelection {
    Ao,
    Bsyn,
    ZfIsac,
    All,
}

impl MethodSelection {
    pub fn methods(self) -> Vec<Method> {
        match self {
            MethodSelection::Ao => vec![Method::Ao],
            MethodSelection::Bsyn => vec![Method::Bsyn],
            MethodSelection::ZfIsac => vec![Method::ZfIsac],
            MethodSelection::All => vec![Method::Ao, Method::Bsyn, Method::ZfIsac],
        }
    }
}

impl std::str::FromStr for MethodSelection {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ao" => Ok(Self::Ao),
            "bsyn" => Ok(Self::Bsyn),
            "zf_isac" => Ok(Self::ZfIsac),
            "all" => Ok(Self::All),
            other => Err(Error::Config(format!("unknown method '{other}' (expected ao, bsyn, zf_isac or all)"))),
        }
    }
}

fn default_power_dbm() -> f64 {
    30.0
}
fn default_noise_dbm() -> f64 {
    -90.0
}
fn default_target_to_noise_db() -> f64 {
    20.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSection {
    pub n_tx: usize,
    pub n_rx: usize,
    pub n_rf: usize,
    pub n_users: usize,
    /// Defaults to one stream per user.
    #[serde(default)]
    pub n_streams: Option<usize>,
    #[serde(default = "default_power_dbm")]
    pub power_dbm: f64,
    #[serde(default = "default_noise_dbm")]
    pub noise_ue_dbm: f64,
    #[serde(default = "default_noise_dbm")]
    pub noise_tmt_dbm: f64,
    /// `σ_t² / σ_n²`.
    #[serde(default = "default_target_to_noise_db")]
    pub target_to_noise_db: f64,
    /// Communication weight κ_c; required whenever the AO design runs.
    #[serde(default)]
    pub weight_comm: Option<f64>,
    #[serde(default)]
    pub ao_tol: Option<f64>,
    #[serde(default)]
    pub ao_max_iter: Option<usize>,
    #[serde(default)]
    pub manifold_max_iter: Option<usize>,
    #[serde(default)]
    pub manifold_grad_tol: Option<f64>,
    #[serde(default)]
    pub bisection_tol: Option<f64>,
    #[serde(default)]
    pub init_sinr_fraction: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChannelSection {
    pub n_paths: usize,
    pub pathloss_a: f64,
    pub pathloss_b: f64,
    pub pathloss_sigma_db: f64,
    pub rician_los_db: f64,
    pub rician_nlos_db: f64,
    pub ue_distance_m: [f64; 2],
    /// Clutter-to-noise ratio of each patch.
    pub clutter_to_noise_db: f64,
    /// Base-station to monitoring-terminal distance; recorded, not used.
    pub tmt_distance_m: f64,
}

impl Default for ChannelSection {
    fn default() -> Self {
        let sv = SvChannelParams::default();
        Self {
            n_paths: sv.n_paths,
            pathloss_a: sv.pathloss_a,
            pathloss_b: sv.pathloss_b,
            pathloss_sigma_db: sv.pathloss_sigma_eps,
            rician_los_db: sv.rician_los_db,
            rician_nlos_db: sv.rician_nlos_db,
            ue_distance_m: [19.0, 21.0],
            clutter_to_noise_db: 30.0,
            tmt_distance_m: 50.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClutterDeg {
    pub aod_deg: f64,
    pub aoa_deg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScenarioSection {
    Fixed { target_aod_deg: f64, target_aoa_deg: f64, ue_aods_deg: Vec<f64>, clutter: Vec<ClutterDeg> },
    Random { n_clutter: usize },
}

impl Default for ScenarioSection {
    fn default() -> Self {
        ScenarioSection::Random { n_clutter: 2 }
    }
}

fn default_trials() -> usize {
    1
}
fn default_angle_step() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    pub method: MethodSelection,
    /// SINR target for the linear designs; when absent they use the AO's achieved minimum SINR.
    #[serde(default)]
    pub gamma_db: Option<f64>,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub receiver_init: ReceiverInit,
    #[serde(default = "default_angle_step")]
    pub angle_step_deg: f64,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        Self {
            method: MethodSelection::All,
            gamma_db: None,
            trials: default_trials(),
            seed: 0,
            receiver_init: ReceiverInit::default(),
            angle_step_deg: default_angle_step(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParameter {
    GammaDb,
    PowerDbm,
    WeightComm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub parameter: SweepParameter,
    pub values: Vec<f64>,
}

/// Contents of an experiment file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentFile {
    pub system: SystemSection,
    #[serde(default)]
    pub channel: ChannelSection,
    #[serde(default)]
    pub scenario: ScenarioSection,
    #[serde(default)]
    pub experiment: ExperimentSection,
    #[serde(default)]
    pub sweep: Option<SweepSection>,
}

/// Fully resolved experiment in linear units and radians.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub config: SystemConfig,
    pub scene_params: SceneParams,
    pub scenario: ScenarioSpec,
    pub method: MethodSelection,
    /// Linear SINR target.
    pub gamma: Option<f64>,
    pub trials: usize,
    pub master_seed: u64,
    pub receiver_init: ReceiverInit,
    pub angle_step_deg: f64,
    pub tmt_distance_m: f64,
}

impl ExperimentFile {
    pub fn parse(text: &str, json: bool) -> Result<Self> {
        if json {
            serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
        } else {
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
        Self::parse(&text, json)
    }

    pub fn resolve(&self) -> Result<ExperimentSpec> {
        let s = &self.system;
        let defaults = SystemConfig::desk();
        let methods = self.experiment.method.methods();
        let weight_comm = match s.weight_comm {
            Some(w) => w,
            None if methods.contains(&Method::Ao) => {
                return Err(Error::Config("system.weight_comm is required for the AO design".into()));
            }
            None => defaults.weight_comm(),
        };
        let noise_tmt = dbm_to_watts(s.noise_tmt_dbm);
        let config = SystemConfig {
            n_tx: s.n_tx,
            n_rx: s.n_rx,
            n_rf: s.n_rf,
            n_streams: s.n_streams.unwrap_or(s.n_users),
            n_users: s.n_users,
            power_budget: dbm_to_watts(s.power_dbm),
            noise_ue: dbm_to_watts(s.noise_ue_dbm),
            noise_tmt,
            target_gain_var: noise_tmt * db_to_linear(s.target_to_noise_db),
            weight_sensing: 1.0 - weight_comm,
            ao_tol: s.ao_tol.unwrap_or(defaults.ao_tol),
            ao_max_iter: s.ao_max_iter.unwrap_or(defaults.ao_max_iter),
            manifold_max_iter: s.manifold_max_iter.unwrap_or(defaults.manifold_max_iter),
            manifold_grad_tol: s.manifold_grad_tol.unwrap_or(defaults.manifold_grad_tol),
            bisection_tol: s.bisection_tol.unwrap_or(defaults.bisection_tol),
            init_sinr_fraction: s.init_sinr_fraction,
        };
        if !(0.0..=1.0).contains(&weight_comm) {
            return Err(Error::Config("system.weight_comm must lie in [0, 1]".into()));
        }
        config.validate()?;

        let c = &self.channel;
        let channel = SvChannelParams {
            n_paths: c.n_paths,
            distance_m: 0.5 * (c.ue_distance_m[0] + c.ue_distance_m[1]),
            pathloss_a: c.pathloss_a,
            pathloss_b: c.pathloss_b,
            pathloss_sigma_eps: c.pathloss_sigma_db,
            rician_los_db: c.rician_los_db,
            rician_nlos_db: c.rician_nlos_db,
        };
        channel.validate().map_err(|e| Error::Config(e.to_string()))?;
        if !(c.ue_distance_m[0] > 0.0 && c.ue_distance_m[1] >= c.ue_distance_m[0]) {
            return Err(Error::Config("channel.ue_distance_m must be an increasing positive range".into()));
        }
        let scene_params = SceneParams {
            channel,
            ue_distance_m: (c.ue_distance_m[0], c.ue_distance_m[1]),
            clutter_to_noise: db_to_linear(c.clutter_to_noise_db),
        };

        let scenario = match &self.scenario {
            ScenarioSection::Random { n_clutter } => ScenarioSpec::Random { n_clutter: *n_clutter },
            ScenarioSection::Fixed { target_aod_deg, target_aoa_deg, ue_aods_deg, clutter } => {
                let angles = [*target_aod_deg, *target_aoa_deg]
                    .into_iter()
                    .chain(ue_aods_deg.iter().copied())
                    .chain(clutter.iter().flat_map(|p| [p.aod_deg, p.aoa_deg]));
                for a in angles {
                    if !(a.is_finite() && a.abs() <= 90.0) {
                        return Err(Error::Config(format!("angle {a} deg outside [-90, 90]")));
                    }
                }
                if ue_aods_deg.len() != config.n_users {
                    return Err(Error::Config(format!(
                        "scenario lists {} user angles but system.n_users = {}",
                        ue_aods_deg.len(),
                        config.n_users
                    )));
                }
                ScenarioSpec::Fixed {
                    target_aod: target_aod_deg.to_radians(),
                    target_aoa: target_aoa_deg.to_radians(),
                    ue_aods: ue_aods_deg.iter().map(|a| a.to_radians()).collect(),
                    clutter: clutter
                        .iter()
                        .map(|p| FixedClutter { aod: p.aod_deg.to_radians(), aoa: p.aoa_deg.to_radians() })
                        .collect(),
                }
            }
        };

        let e = &self.experiment;
        if e.trials == 0 {
            return Err(Error::Config("experiment.trials must be at least 1".into()));
        }
        if !(e.angle_step_deg > 0.0 && e.angle_step_deg <= 90.0) {
            return Err(Error::Config("experiment.angle_step_deg must lie in (0, 90]".into()));
        }
        if e.gamma_db.is_none() && !methods.contains(&Method::Ao) {
            return Err(Error::Config("experiment.gamma_db is required for the linear designs without AO".into()));
        }
        let gamma = e.gamma_db.map(db_to_linear);
        Ok(ExperimentSpec {
            config,
            scene_params,
            scenario,
            method: e.method,
            gamma,
            trials: e.trials,
            master_seed: e.seed,
            receiver_init: e.receiver_init,
            angle_step_deg: e.angle_step_deg,
            tmt_distance_m: c.tmt_distance_m,
        })
    }
}

/// Transmit-pattern scene: target at 45°, users at 10°, 15°, 40°, clutter at 50° and 60°.
pub fn tx_pattern_scenario() -> ScenarioSection {
    ScenarioSection::Fixed {
        target_aod_deg: 45.0,
        target_aoa_deg: 45.0,
        ue_aods_deg: vec![10.0, 15.0, 40.0],
        clutter: vec![ClutterDeg { aod_deg: 50.0, aoa_deg: 50.0 }, ClutterDeg { aod_deg: 60.0, aoa_deg: 60.0 }],
    }
}

/// Receive-pattern scene: target arrives from 54°, clutter from 30°, 35° and 40°.
pub fn rx_pattern_scenario() -> ScenarioSection {
    ScenarioSection::Fixed {
        target_aod_deg: 45.0,
        target_aoa_deg: 54.0,
        ue_aods_deg: vec![10.0, 15.0, 40.0],
        clutter: vec![
            ClutterDeg { aod_deg: 50.0, aoa_deg: 30.0 },
            ClutterDeg { aod_deg: 55.0, aoa_deg: 35.0 },
            ClutterDeg { aod_deg: 60.0, aoa_deg: 40.0 },
        ],
    }
}

/// Desk-scale experiment: 32/16 antennas, 4 RF chains, 3 users, κ_c = 0.5.
pub fn desk_file() -> ExperimentFile {
    ExperimentFile {
        system: SystemSection {
            n_tx: 32,
            n_rx: 16,
            n_rf: 4,
            n_users: 3,
            n_streams: None,
            power_dbm: default_power_dbm(),
            noise_ue_dbm: default_noise_dbm(),
            noise_tmt_dbm: default_noise_dbm(),
            target_to_noise_db: default_target_to_noise_db(),
            weight_comm: Some(0.5),
            ao_tol: None,
            ao_max_iter: None,
            manifold_max_iter: None,
            manifold_grad_tol: None,
            bisection_tol: None,
            init_sinr_fraction: None,
        },
        channel: ChannelSection::default(),
        scenario: ScenarioSection::default(),
        experiment: ExperimentSection::default(),
        sweep: None,
    }
}
