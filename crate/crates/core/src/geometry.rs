//! Array geometry, Saleh–Valenzuela channel synthesis and scene construction.
//!
//! Everything random in the crate is drawn here. Steering vectors are for a
//! half-wavelength uniform linear array and are unit-norm, so a response matrix
//! `a_R(φ_r) a_T(φ_t)^H` always has unit Frobenius norm.

use std::f64::consts::{FRAC_PI_2, PI};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{c, CMat, CVec, C64};

/// Numerical slack when checking that an angle lies in `[-π/2, π/2]`.
const ANGLE_SLACK: f64 = 1e-9;

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn linear_to_db(x: f64) -> f64 {
    10.0 * x.log10()
}

pub fn dbm_to_watts(dbm: f64) -> f64 {
    db_to_linear(dbm - 30.0)
}

pub fn watts_to_dbm(w: f64) -> f64 {
    linear_to_db(w) + 30.0
}

/// Antenna counts, power budget, noise levels and solver settings.
///
/// All powers are linear (watts); conversion from dBm happens at ingestion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemConfig {
    pub n_tx: usize,
    pub n_rx: usize,
    pub n_rf: usize,
    pub n_streams: usize,
    pub n_users: usize,
    pub power_budget: f64,
    pub noise_ue: f64,
    pub noise_tmt: f64,
    pub target_gain_var: f64,
    /// κ_r; the communication weight is `1 - weight_sensing`.
    pub weight_sensing: f64,
    pub ao_tol: f64,
    pub ao_max_iter: usize,
    pub manifold_max_iter: usize,
    pub manifold_grad_tol: f64,
    pub bisection_tol: f64,
    /// Fraction of the zero-forcing SINR bound used for the initial precoder.
    /// `None` uses the communication weight κ_c (clamped to `[0.05, 0.95]`).
    #[serde(default)]
    pub init_sinr_fraction: Option<f64>,
}

impl SystemConfig {
    /// The small-array configuration used throughout the tests and examples:
    /// 32 transmit and 16 receive antennas, 4 RF chains, 3 users, one stream per user,
    /// 30 dBm budget, -90 dBm noise and a 20 dB target-to-noise ratio.
    pub fn desk() -> Self {
        let noise = dbm_to_watts(-90.0);
        Self {
            n_tx: 32,
            n_rx: 16,
            n_rf: 4,
            n_streams: 3,
            n_users: 3,
            power_budget: dbm_to_watts(30.0),
            noise_ue: noise,
            noise_tmt: noise,
            target_gain_var: noise * db_to_linear(20.0),
            weight_sensing: 0.5,
            ao_tol: 1e-2,
            ao_max_iter: 20,
            manifold_max_iter: 200,
            manifold_grad_tol: 1e-4,
            bisection_tol: 1e-8,
            init_sinr_fraction: None,
        }
    }

    pub fn weight_comm(&self) -> f64 {
        1.0 - self.weight_sensing
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if self.n_tx == 0 || self.n_rx == 0 || self.n_rf == 0 || self.n_streams == 0 {
            return fail("antenna, RF-chain and stream counts must be positive");
        }
        if self.n_users > self.n_streams || self.n_streams > self.n_tx {
            return fail("require n_users <= n_streams <= n_tx");
        }
        if self.n_rf > self.n_rx {
            return fail("require n_rf <= n_rx");
        }
        if !(0.0..=1.0).contains(&self.weight_sensing) {
            return fail("weight_sensing must lie in [0, 1]");
        }
        for (name, v) in [
            ("power_budget", self.power_budget),
            ("noise_ue", self.noise_ue),
            ("noise_tmt", self.noise_tmt),
            ("target_gain_var", self.target_gain_var),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive and finite")));
            }
        }
        if !(self.ao_tol > 0.0 && self.manifold_grad_tol > 0.0 && self.bisection_tol > 0.0) {
            return fail("tolerances must be positive");
        }
        if let Some(f) = self.init_sinr_fraction {
            if !(f > 0.0 && f < 1.0) {
                return fail("init_sinr_fraction must lie in (0, 1)");
            }
        }
        Ok(())
    }
}

/// Large-scale and small-scale fading parameters of the user channels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvChannelParams {
    pub n_paths: usize,
    pub distance_m: f64,
    pub pathloss_a: f64,
    pub pathloss_b: f64,
    pub pathloss_sigma_eps: f64,
    pub rician_los_db: f64,
    pub rician_nlos_db: f64,
}

impl Default for SvChannelParams {
    fn default() -> Self {
        Self {
            n_paths: 4,
            distance_m: 20.0,
            pathloss_a: 61.4,
            pathloss_b: 2.0,
            pathloss_sigma_eps: 5.8,
            rician_los_db: 7.0,
            rician_nlos_db: 0.0,
        }
    }
}

impl SvChannelParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_paths == 0 {
            return Err(Error::InvalidInput("n_paths must be at least 1".into()));
        }
        if !(self.distance_m > 0.0) {
            return Err(Error::InvalidInput("distance must be positive".into()));
        }
        if !(self.pathloss_sigma_eps >= 0.0) {
            return Err(Error::InvalidInput("shadowing deviation must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClutterPatch {
    /// Departure angle from the base station, radians.
    pub aod: f64,
    /// Arrival angle at the monitoring terminal, radians.
    pub aoa: f64,
    /// Variance of the complex patch reflection gain.
    pub variance: f64,
}

/// One channel realization plus the sensing geometry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub ue_channels: Vec<CVec>,
    pub target_aod: f64,
    pub target_aoa: f64,
    pub clutter: Vec<ClutterPatch>,
    pub target_gain_var: f64,
    pub rng_seed: u64,
}

impl Scene {
    pub fn n_users(&self) -> usize {
        self.ue_channels.len()
    }

    pub fn n_tx(&self) -> usize {
        self.ue_channels.first().map_or(0, |h| h.len())
    }

    /// User channels as the `N_t × K` matrix `H_c`.
    pub fn channel_matrix(&self, n_tx: usize) -> CMat {
        crate::linalg::hstack(&self.ue_channels, n_tx)
    }

    pub fn validate(&self, config: &SystemConfig) -> Result<()> {
        if self.ue_channels.len() != config.n_users {
            return Err(Error::Config(format!(
                "scene has {} user channels but the configuration expects {}",
                self.ue_channels.len(),
                config.n_users
            )));
        }
        for (k, h) in self.ue_channels.iter().enumerate() {
            if h.len() != config.n_tx {
                return Err(Error::Config(format!("user channel {k} has wrong length")));
            }
            if !crate::linalg::is_finite_vec(h) || h.norm() == 0.0 {
                return Err(Error::InvalidInput(format!("user channel {k} is zero or non-finite")));
            }
        }
        for a in [self.target_aod, self.target_aoa] {
            check_angle(a)?;
        }
        for p in &self.clutter {
            check_angle(p.aod)?;
            check_angle(p.aoa)?;
            if !(p.variance >= 0.0) {
                return Err(Error::InvalidInput("clutter variance must be non-negative".into()));
            }
        }
        if !(self.target_gain_var > 0.0) {
            return Err(Error::InvalidInput("target gain variance must be positive".into()));
        }
        Ok(())
    }
}

fn check_angle(angle: f64) -> Result<()> {
    if !angle.is_finite() {
        return Err(Error::InvalidInput(format!("non-finite angle {angle}")));
    }
    if angle.abs() > FRAC_PI_2 + ANGLE_SLACK {
        return Err(Error::InvalidInput(format!("angle {angle} outside [-pi/2, pi/2]")));
    }
    Ok(())
}

/// Unit-norm ULA steering vector with entries `exp(jπ m sin φ) / √n`.
pub fn steering_vector(n_antennas: usize, angle: f64) -> Result<CVec> {
    if n_antennas == 0 {
        return Err(Error::InvalidInput("steering vector needs at least one antenna".into()));
    }
    check_angle(angle)?;
    let scale = 1.0 / (n_antennas as f64).sqrt();
    let s = angle.sin();
    Ok(CVec::from_fn(n_antennas, |m, _| {
        let phase = PI * m as f64 * s;
        c(phase.cos() * scale, phase.sin() * scale)
    }))
}

/// Rank-one response `a_R(aoa) a_T(aod)^H` of a point scatterer.
pub fn response_matrix(aoa: f64, aod: f64, n_rx: usize, n_tx: usize) -> Result<CMat> {
    let ar = steering_vector(n_rx, aoa)?;
    let at = steering_vector(n_tx, aod)?;
    Ok(&ar * at.adjoint())
}

/// Log-distance path loss `a + 10 b log10(d) + ε` in dB with Gaussian shadowing ε.
pub fn path_loss_db<R: Rng + ?Sized>(distance_m: f64, params: &SvChannelParams, rng: &mut R) -> f64 {
    let eps = if params.pathloss_sigma_eps > 0.0 {
        Normal::new(0.0, params.pathloss_sigma_eps).expect("finite positive deviation").sample(rng)
    } else {
        0.0
    };
    params.pathloss_a + 10.0 * params.pathloss_b * distance_m.log10() + eps
}

/// Circularly-symmetric complex Gaussian sample with the given variance.
pub fn complex_gaussian<R: Rng + ?Sized>(rng: &mut R, variance: f64) -> C64 {
    let s = (variance / 2.0).sqrt();
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    c(re * s, im * s)
}

/// Variances of the path gains: the first path is line-of-sight.
///
/// The line-of-sight path is boosted by its Rician factor and the others are
/// attenuated by theirs, both relative to the path loss `kappa_db`.
pub fn path_variances(kappa_db: f64, params: &SvChannelParams) -> Vec<f64> {
    (0..params.n_paths)
        .map(|i| {
            if i == 0 {
                db_to_linear(-(kappa_db - params.rician_los_db))
            } else {
                db_to_linear(-(kappa_db + params.rician_nlos_db))
            }
        })
        .collect()
}

/// `h = √(N_t / N_p) Σ β_i a_T(φ_i)` for given path gains.
pub fn sv_channel_from_gains(n_tx: usize, path_angles: &[f64], gains: &[C64]) -> Result<CVec> {
    if path_angles.is_empty() {
        return Err(Error::InvalidInput("at least one path is required".into()));
    }
    if path_angles.len() != gains.len() {
        return Err(Error::InvalidInput("one gain per path is required".into()));
    }
    let scale = (n_tx as f64 / path_angles.len() as f64).sqrt();
    let mut h = CVec::zeros(n_tx);
    for (&phi, &beta) in path_angles.iter().zip(gains) {
        h += steering_vector(n_tx, phi)? * (beta * scale);
    }
    Ok(h)
}

/// Draw a Saleh–Valenzuela channel for the given path angles (first path LOS).
pub fn sv_channel<R: Rng + ?Sized>(
    config: &SystemConfig,
    params: &SvChannelParams,
    path_angles: &[f64],
    rng: &mut R,
) -> Result<CVec> {
    params.validate()?;
    if path_angles.len() != params.n_paths {
        return Err(Error::InvalidInput(format!("expected {} path angles, got {}", params.n_paths, path_angles.len())));
    }
    let kappa = path_loss_db(params.distance_m, params, rng);
    let gains: Vec<C64> = path_variances(kappa, params).into_iter().map(|v| complex_gaussian(rng, v)).collect();
    let h = sv_channel_from_gains(config.n_tx, path_angles, &gains)?;
    if !crate::linalg::is_finite_vec(&h) {
        return Err(Error::InvalidInput("non-finite channel draw".into()));
    }
    Ok(h)
}

/// Deterministic generator for a seed.
pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Child seed for trial `index` of a Monte-Carlo run (SplitMix64 finalizer).
///
/// Trials seeded this way are independent of execution order.
pub fn child_seed(master: u64, index: u64) -> u64 {
    let mut z = master ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn uniform_angle<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.random_range(-FRAC_PI_2..=FRAC_PI_2)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FixedClutter {
    pub aod: f64,
    pub aoa: f64,
}

/// How the angles of a scene are chosen. Angles are in radians.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScenarioSpec {
    /// Given target, user (line-of-sight) and clutter angles.
    Fixed { target_aod: f64, target_aoa: f64, ue_aods: Vec<f64>, clutter: Vec<FixedClutter> },
    /// All angles uniform in `[-π/2, π/2]`.
    Random { n_clutter: usize },
}

/// Everything besides the angles that a scene draw needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneParams {
    pub channel: SvChannelParams,
    /// User distances are uniform in this range, meters.
    pub ue_distance_m: (f64, f64),
    /// Clutter-to-noise ratio of every patch, linear (variance / σ_n²).
    pub clutter_to_noise: f64,
}

impl Default for SceneParams {
    fn default() -> Self {
        Self { channel: SvChannelParams::default(), ue_distance_m: (19.0, 21.0), clutter_to_noise: db_to_linear(30.0) }
    }
}

/// Build a reproducible scene; a pure function of its arguments.
pub fn generate_scene(
    config: &SystemConfig,
    params: &SceneParams,
    scenario: &ScenarioSpec,
    seed: u64,
) -> Result<Scene> {
    config.validate()?;
    params.channel.validate()?;
    let (dmin, dmax) = params.ue_distance_m;
    if !(dmin > 0.0 && dmax >= dmin) {
        return Err(Error::Config("invalid user distance range".into()));
    }
    let mut rng = rng_from_seed(seed);
    let clutter_var = params.clutter_to_noise * config.noise_tmt;

    let (target_aod, target_aoa, clutter, ue_los) = match scenario {
        ScenarioSpec::Fixed { target_aod, target_aoa, ue_aods, clutter } => {
            if ue_aods.len() != config.n_users {
                return Err(Error::Config(format!(
                    "scenario lists {} user angles but n_users = {}",
                    ue_aods.len(),
                    config.n_users
                )));
            }
            let patches =
                clutter.iter().map(|p| ClutterPatch { aod: p.aod, aoa: p.aoa, variance: clutter_var }).collect();
            (*target_aod, *target_aoa, patches, ue_aods.clone())
        }
        ScenarioSpec::Random { n_clutter } => {
            let t_aod = uniform_angle(&mut rng);
            let t_aoa = uniform_angle(&mut rng);
            let patches = (0..*n_clutter)
                .map(|_| {
                    let aod = uniform_angle(&mut rng);
                    let aoa = uniform_angle(&mut rng);
                    ClutterPatch { aod, aoa, variance: clutter_var }
                })
                .collect();
            let los = (0..config.n_users).map(|_| uniform_angle(&mut rng)).collect();
            (t_aod, t_aoa, patches, los)
        }
    };

    let mut ue_channels = Vec::with_capacity(config.n_users);
    for &los in &ue_los {
        let distance = if dmax > dmin { rng.random_range(dmin..=dmax) } else { dmin };
        let mut angles = vec![los];
        angles.extend((1..params.channel.n_paths).map(|_| uniform_angle(&mut rng)));
        let ch = SvChannelParams { distance_m: distance, ..params.channel.clone() };
        ue_channels.push(sv_channel(config, &ch, &angles, &mut rng)?);
    }

    let scene =
        Scene { ue_channels, target_aod, target_aoa, clutter, target_gain_var: config.target_gain_var, rng_seed: seed };
    scene.validate(config)?;
    Ok(scene)
}

/// Angle grid in radians, `step_deg` apart, covering `[-90°, 90°]`.
pub fn angle_grid_deg(step_deg: f64) -> Vec<f64> {
    let n = (180.0 / step_deg).round() as usize;
    (0..=n).map(|i| (-90.0 + i as f64 * step_deg).to_radians()).collect()
}

/// Unit-modulus matrix with uniformly random phases.
pub fn random_unit_modulus<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> CMat {
    CMat::from_fn(rows, cols, |_, _| {
        let th: f64 = rng.random_range(0.0..2.0 * PI);
        C64::from_polar(1.0, th)
    })
}

/// Zero-mean unit-variance complex Gaussian vector.
pub fn random_complex_vector<R: Rng + ?Sized>(n: usize, rng: &mut R) -> CVec {
    CVec::from_fn(n, |_, _| complex_gaussian(rng, 1.0))
}

/// Zero-mean unit-variance complex Gaussian matrix.
pub fn random_complex_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> CMat {
    CMat::from_fn(rows, cols, |_, _| complex_gaussian(rng, 1.0))
}
