//! Performance functionals: user SINR, radar SCNR, the weighted objective and beam patterns.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{steering_vector, Scene, SystemConfig};
use crate::linalg::{fro_sq, inner, CMat, CVec};

/// Transmit precoder; the first `n_comm` columns carry user streams and the
/// remaining columns are dedicated sensing streams.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Precoder {
    pub matrix: CMat,
    pub n_comm: usize,
}

impl Precoder {
    pub fn new(matrix: CMat, n_comm: usize) -> Result<Self> {
        if n_comm > matrix.ncols() {
            return Err(Error::InvalidInput(format!(
                "{} communication columns requested from a matrix with {}",
                n_comm,
                matrix.ncols()
            )));
        }
        Ok(Self { matrix, n_comm })
    }

    pub fn n_tx(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn n_streams(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn power(&self) -> f64 {
        fro_sq(&self.matrix)
    }

    pub fn column(&self, j: usize) -> CVec {
        self.matrix.column(j).into_owned()
    }
}

/// Unit-modulus analog combiner followed by a digital filter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HybridReceiver {
    pub analog: CMat,
    pub digital: CVec,
}

impl HybridReceiver {
    pub fn new(analog: CMat, digital: CVec) -> Result<Self> {
        if analog.ncols() != digital.len() {
            return Err(Error::InvalidInput("analog/digital dimension mismatch".into()));
        }
        if analog.iter().any(|z| (z.norm() - 1.0).abs() > 1e-10) {
            return Err(Error::InvalidInput("analog combiner entries must have unit modulus".into()));
        }
        Ok(Self { analog, digital })
    }

    /// Effective receive vector `W_RF w`.
    pub fn effective(&self) -> CVec {
        &self.analog * &self.digital
    }

    pub fn n_rx(&self) -> usize {
        self.analog.nrows()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScnrParts {
    pub scnr: f64,
    pub signal_power: f64,
    pub clutter_power: f64,
    pub noise_power: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub sinr_per_ue: Vec<f64>,
    pub min_sinr: f64,
    /// Index of the bottleneck user (lowest index on ties).
    pub bottleneck_ue: Option<usize>,
    pub scnr: f64,
    pub objective: f64,
    pub signal_power: f64,
    pub clutter_power: f64,
    pub noise_power: f64,
}

/// Steering vectors of the target and clutter patches for one scene.
#[derive(Debug, Clone)]
pub struct SensingVectors {
    pub target_tx: CVec,
    pub target_rx: CVec,
    pub target_gain_var: f64,
    /// `(a_T(aod), a_R(aoa), variance)` per clutter patch.
    pub clutter: Vec<(CVec, CVec, f64)>,
}

impl SensingVectors {
    pub fn new(scene: &Scene, n_tx: usize, n_rx: usize) -> Result<Self> {
        let clutter = scene
            .clutter
            .iter()
            .map(|p| Ok((steering_vector(n_tx, p.aod)?, steering_vector(n_rx, p.aoa)?, p.variance)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            target_tx: steering_vector(n_tx, scene.target_aod)?,
            target_rx: steering_vector(n_rx, scene.target_aoa)?,
            target_gain_var: scene.target_gain_var,
            clutter,
        })
    }

    /// Clutter-plus-noise covariance at the receive array for precoder `f`.
    pub fn clutter_noise_covariance(&self, f: &CMat, noise_tmt: f64) -> CMat {
        let n = self.target_rx.len();
        let mut r = CMat::identity(n, n) * crate::linalg::real(noise_tmt);
        for (at, ar, var) in &self.clutter {
            let tx_power = (f.adjoint() * at).norm_squared();
            r += (ar * ar.adjoint()) * crate::linalg::real(var * tx_power);
        }
        r
    }

    /// SCNR of an effective receive vector `v`.
    pub fn scnr_effective(&self, v: &CVec, f: &CMat, noise_tmt: f64) -> Result<ScnrParts> {
        let tx = |a: &CVec| (f.adjoint() * a).norm_squared();
        let signal_power = self.target_gain_var * inner(v, &self.target_rx).norm_sqr() * tx(&self.target_tx);
        let clutter_power =
            self.clutter.iter().map(|(at, ar, var)| var * inner(v, ar).norm_sqr() * tx(at)).sum::<f64>();
        let noise_power = noise_tmt * v.norm_squared();
        let denom = clutter_power + noise_power;
        if !(denom > 0.0) {
            return Err(Error::DegenerateReceiver);
        }
        Ok(ScnrParts { scnr: signal_power / denom, signal_power, clutter_power, noise_power })
    }
}

fn check_user(precoder: &Precoder, k: usize, scene: &Scene) -> Result<()> {
    if k >= scene.n_users() || k >= precoder.n_comm {
        return Err(Error::InvalidInput(format!(
            "user index {k} out of range ({} users, {} communication columns)",
            scene.n_users(),
            precoder.n_comm
        )));
    }
    if scene.ue_channels[k].len() != precoder.n_tx() {
        return Err(Error::InvalidInput("channel and precoder dimensions differ".into()));
    }
    Ok(())
}

/// Interference-plus-noise power at user `k` (zero-based): every other column counts.
pub fn interference_plus_noise(precoder: &Precoder, k: usize, scene: &Scene, noise_ue: f64) -> Result<f64> {
    check_user(precoder, k, scene)?;
    let g = precoder.matrix.adjoint() * &scene.ue_channels[k];
    let total: f64 = g.iter().map(|z| z.norm_sqr()).sum();
    Ok(total - g[k].norm_sqr() + noise_ue)
}

/// SINR of user `k` (zero-based).
pub fn sinr(precoder: &Precoder, k: usize, scene: &Scene, noise_ue: f64) -> Result<f64> {
    check_user(precoder, k, scene)?;
    let g = precoder.matrix.adjoint() * &scene.ue_channels[k];
    let desired = g[k].norm_sqr();
    let interference: f64 = g.iter().map(|z| z.norm_sqr()).sum::<f64>() - desired;
    Ok(desired / (interference.max(0.0) + noise_ue))
}

pub fn sinr_all(precoder: &Precoder, scene: &Scene, noise_ue: f64) -> Result<Vec<f64>> {
    (0..scene.n_users()).map(|k| sinr(precoder, k, scene, noise_ue)).collect()
}

/// Minimum over users, lowest index on ties; `(0, None)` when there are no users.
pub fn min_with_index(values: &[f64]) -> (f64, Option<usize>) {
    let mut best: Option<(usize, f64)> = None;
    for (i, &v) in values.iter().enumerate() {
        if best.is_none_or(|(_, b)| v < b) {
            best = Some((i, v));
        }
    }
    best.map_or((0.0, None), |(i, v)| (v, Some(i)))
}

/// SCNR for a hybrid receiver.
pub fn scnr(receiver: &HybridReceiver, precoder: &Precoder, scene: &Scene, noise_tmt: f64) -> Result<ScnrParts> {
    scnr_effective(&receiver.effective(), precoder, scene, noise_tmt)
}

/// SCNR for an arbitrary (e.g. full-digital) effective receive vector.
pub fn scnr_effective(v: &CVec, precoder: &Precoder, scene: &Scene, noise_tmt: f64) -> Result<ScnrParts> {
    let sv = SensingVectors::new(scene, precoder.n_tx(), v.len())?;
    sv.scnr_effective(v, &precoder.matrix, noise_tmt)
}

/// Full metric report for an effective receive vector.
pub fn evaluate_effective(v: &CVec, precoder: &Precoder, scene: &Scene, config: &SystemConfig) -> Result<MetricReport> {
    let parts = scnr_effective(v, precoder, scene, config.noise_tmt)?;
    let sinr_per_ue = sinr_all(precoder, scene, config.noise_ue)?;
    let (min_sinr, bottleneck_ue) = min_with_index(&sinr_per_ue);
    Ok(MetricReport {
        objective: config.weight_sensing * parts.scnr + config.weight_comm() * min_sinr,
        sinr_per_ue,
        min_sinr,
        bottleneck_ue,
        scnr: parts.scnr,
        signal_power: parts.signal_power,
        clutter_power: parts.clutter_power,
        noise_power: parts.noise_power,
    })
}

pub fn evaluate(
    receiver: &HybridReceiver,
    precoder: &Precoder,
    scene: &Scene,
    config: &SystemConfig,
) -> Result<MetricReport> {
    evaluate_effective(&receiver.effective(), precoder, scene, config)
}

/// `κ_r·SCNR + κ_c·min_k γ_k`.
pub fn weighted_objective(
    receiver: &HybridReceiver,
    precoder: &Precoder,
    scene: &Scene,
    config: &SystemConfig,
) -> Result<f64> {
    Ok(evaluate(receiver, precoder, scene, config)?.objective)
}

/// Transmit beam pattern over a grid of angles (radians).
#[derive(Debug, Clone, PartialEq)]
pub struct TxPattern {
    /// `per_stream[i][g]` is `|a_T(φ_g)^H f_i|²`.
    pub per_stream: Vec<Vec<f64>>,
    pub overall: Vec<f64>,
}

pub fn tx_beampattern(precoder: &Precoder, angles: &[f64]) -> Result<TxPattern> {
    if angles.is_empty() {
        return Err(Error::InvalidInput("empty angle grid".into()));
    }
    let ns = precoder.n_streams();
    let mut per_stream = vec![Vec::with_capacity(angles.len()); ns];
    let mut overall = Vec::with_capacity(angles.len());
    for &phi in angles {
        let a = steering_vector(precoder.n_tx(), phi)?;
        let g = precoder.matrix.adjoint() * a;
        let mut total = 0.0;
        for (i, z) in g.iter().enumerate() {
            per_stream[i].push(z.norm_sqr());
            total += z.norm_sqr();
        }
        overall.push(total);
    }
    Ok(TxPattern { per_stream, overall })
}

/// Receive gains `|v^H a_R(φ)|²` of an effective receive vector.
pub fn rx_beampattern_effective(v: &CVec, angles: &[f64]) -> Result<Vec<f64>> {
    if angles.is_empty() {
        return Err(Error::InvalidInput("empty angle grid".into()));
    }
    angles.iter().map(|&phi| Ok(inner(v, &steering_vector(v.len(), phi)?).norm_sqr())).collect()
}

pub fn rx_beampattern(receiver: &HybridReceiver, angles: &[f64]) -> Result<Vec<f64>> {
    rx_beampattern_effective(&receiver.effective(), angles)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{
        angle_grid_deg, complex_gaussian, random_complex_matrix, random_complex_vector, random_unit_modulus,
        rng_from_seed, ClutterPatch,
    };
    use crate::linalg::{hstack, real};
    use proptest::prelude::*;
    use rand::Rng;

    fn random_scene(seed: u64, n_tx: usize, k: usize, l: usize) -> Scene {
        let mut rng = rng_from_seed(seed);
        let mut angle = || rng.random_range(-1.5..1.5);
        let target_aod = angle();
        let target_aoa = angle();
        let clutter = (0..l).map(|_| ClutterPatch { aod: angle(), aoa: angle(), variance: 3.0 }).collect();
        let mut rng = rng_from_seed(seed ^ 0xABCD);
        Scene {
            ue_channels: (0..k).map(|_| random_complex_vector(n_tx, &mut rng)).collect(),
            target_aod,
            target_aoa,
            clutter,
            target_gain_var: 2.0,
            rng_seed: seed,
        }
    }

    #[test]
    fn single_user_matched_filter_sinr() {
        let scene = random_scene(1, 6, 1, 0);
        let h = &scene.ue_channels[0];
        let p: f64 = 2.0;
        let f = h * real(p.sqrt() / h.norm());
        let pre = Precoder::new(hstack(&[f], 6), 1).unwrap();
        let g = sinr(&pre, 0, &scene, 0.1).unwrap();
        assert!((g - p * h.norm_squared() / 0.1).abs() < 1e-9 * g);
    }

    #[test]
    fn zero_column_gives_zero_sinr() {
        let scene = random_scene(2, 6, 2, 0);
        let mut m = random_complex_matrix(6, 2, &mut rng_from_seed(3));
        m.column_mut(1).fill(real(0.0));
        let pre = Precoder::new(m, 2).unwrap();
        assert_eq!(sinr(&pre, 1, &scene, 0.1).unwrap(), 0.0);
        assert!(matches!(sinr(&pre, 2, &scene, 0.1), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn sensing_columns_interfere() {
        let scene = random_scene(4, 6, 1, 0);
        let mut rng = rng_from_seed(5);
        let m = random_complex_matrix(6, 2, &mut rng);
        let pre = Precoder::new(m.clone(), 1).unwrap();
        let h = &scene.ue_channels[0];
        let expected =
            inner(&m.column(0).into_owned(), h).norm_sqr() / (inner(&m.column(1).into_owned(), h).norm_sqr() + 0.5);
        assert!((sinr(&pre, 0, &scene, 0.5).unwrap() - expected).abs() < 1e-12 * expected);
    }

    #[test]
    fn scnr_without_clutter() {
        let scene = random_scene(6, 8, 2, 0);
        let mut rng = rng_from_seed(7);
        let f = random_complex_matrix(8, 3, &mut rng);
        let pre = Precoder::new(f.clone(), 2).unwrap();
        let mut v = random_complex_vector(5, &mut rng);
        v /= real(v.norm());
        let parts = scnr_effective(&v, &pre, &scene, 0.3).unwrap();
        let ar = steering_vector(5, scene.target_aoa).unwrap();
        let at = steering_vector(8, scene.target_aod).unwrap();
        let expected = 2.0 * inner(&v, &ar).norm_sqr() * (f.adjoint() * at).norm_squared() / 0.3;
        assert!((parts.scnr - expected).abs() < 1e-12 * expected);
        assert_eq!(parts.clutter_power, 0.0);
    }

    #[test]
    fn zero_receiver_is_degenerate() {
        let scene = random_scene(8, 4, 1, 1);
        let pre = Precoder::new(random_complex_matrix(4, 2, &mut rng_from_seed(9)), 1).unwrap();
        let r = scnr_effective(&CVec::zeros(3), &pre, &scene, 1.0);
        assert!(matches!(r, Err(Error::DegenerateReceiver)));
    }

    #[test]
    fn precoder_scaling_homogeneity() {
        let scene = random_scene(10, 6, 2, 2);
        let mut rng = rng_from_seed(11);
        let f = random_complex_matrix(6, 3, &mut rng);
        let v = random_complex_vector(4, &mut rng);
        let a = scnr_effective(&v, &Precoder::new(f.clone(), 2).unwrap(), &scene, 0.2).unwrap();
        let b = scnr_effective(&v, &Precoder::new(f * real(3.0), 2).unwrap(), &scene, 0.2).unwrap();
        assert!((b.signal_power - 9.0 * a.signal_power).abs() < 1e-10 * b.signal_power);
        assert!((b.clutter_power - 9.0 * a.clutter_power).abs() < 1e-10 * b.clutter_power);
        assert_eq!(a.noise_power, b.noise_power);
    }

    /// Sample the received target, clutter and noise components and average their energies.
    #[test]
    fn scnr_matches_sampled_expectations() {
        let scene = random_scene(12, 6, 1, 2);
        let mut rng = rng_from_seed(13);
        let f = random_complex_matrix(6, 3, &mut rng);
        let v = random_complex_vector(4, &mut rng);
        let noise = 0.7;
        let parts = scnr_effective(&v, &Precoder::new(f.clone(), 1).unwrap(), &scene, noise).unwrap();

        let row = |aoa: f64, aod: f64| {
            let ar = steering_vector(4, aoa).unwrap();
            let at = steering_vector(6, aod).unwrap();
            let g = f.adjoint() * at;
            (inner(&v, &ar), g)
        };
        let (vt, gt) = row(scene.target_aoa, scene.target_aod);
        let clutter: Vec<_> = scene.clutter.iter().map(|p| (row(p.aoa, p.aod), p.variance)).collect();
        let n = 1_000_000;
        let (mut es, mut ec, mut en) = (0.0, 0.0, 0.0);
        for _ in 0..n {
            let s: Vec<_> = (0..3).map(|_| complex_gaussian(&mut rng, 1.0)).collect();
            let proj = |g: &CVec| g.iter().zip(&s).map(|(gi, si)| gi.conj() * si).sum::<crate::linalg::C64>();
            let alpha = complex_gaussian(&mut rng, scene.target_gain_var);
            es += (alpha * vt.conj() * proj(&gt)).norm_sqr();
            let mut c = crate::linalg::C64::new(0.0, 0.0);
            for ((vl, gl), var) in &clutter {
                c += complex_gaussian(&mut rng, *var) * vl.conj() * proj(gl);
            }
            ec += c.norm_sqr();
            let z = random_complex_vector(4, &mut rng) * real(noise.sqrt());
            en += inner(&v, &z).norm_sqr();
        }
        let (es, ec, en) = (es / n as f64, ec / n as f64, en / n as f64);
        assert!((es / parts.signal_power - 1.0).abs() < 0.01);
        assert!((ec / parts.clutter_power - 1.0).abs() < 0.01);
        assert!((en / parts.noise_power - 1.0).abs() < 0.01);
        assert!(((es / (ec + en)) / parts.scnr - 1.0).abs() < 0.01);
    }

    #[test]
    fn objective_weights() {
        let scene = random_scene(14, 8, 2, 2);
        let mut rng = rng_from_seed(15);
        let pre = Precoder::new(random_complex_matrix(8, 3, &mut rng), 2).unwrap();
        let rx = HybridReceiver::new(random_unit_modulus(4, 2, &mut rng), random_complex_vector(2, &mut rng)).unwrap();
        let mut cfg = SystemConfig { n_tx: 8, n_rx: 4, n_rf: 2, n_streams: 3, n_users: 2, ..SystemConfig::desk() };
        let report = evaluate(&rx, &pre, &scene, &cfg).unwrap();
        cfg.weight_sensing = 1.0;
        assert!((weighted_objective(&rx, &pre, &scene, &cfg).unwrap() - report.scnr).abs() < 1e-12 * report.scnr);
        cfg.weight_sensing = 0.0;
        assert_eq!(weighted_objective(&rx, &pre, &scene, &cfg).unwrap(), report.min_sinr);
        cfg.weight_sensing = 0.5;
        let l = weighted_objective(&rx, &pre, &scene, &cfg).unwrap();
        assert!((l - 0.5 * (report.scnr + report.min_sinr)).abs() < 1e-12 * l);
        let recomputed = report.signal_power / (report.clutter_power + report.noise_power);
        assert_eq!(recomputed, report.scnr);
    }

    #[test]
    fn min_ties_take_lowest_index() {
        assert_eq!(min_with_index(&[3.0, 1.0, 1.0]), (1.0, Some(1)));
        assert_eq!(min_with_index(&[]), (0.0, None));
    }

    #[test]
    fn tx_pattern_peaks_at_steered_angle() {
        let phi0 = 20f64.to_radians();
        let p: f64 = 4.0;
        let f = steering_vector(16, phi0).unwrap() * real(p.sqrt());
        let pre = Precoder::new(hstack(&[f], 16), 0).unwrap();
        let grid = angle_grid_deg(1.0);
        let pat = tx_beampattern(&pre, &grid).unwrap();
        let (imax, vmax) = pat.overall.iter().enumerate().fold((0, 0.0), |b, (i, &v)| if v > b.1 { (i, v) } else { b });
        assert_eq!(imax, 110);
        assert!((vmax - p).abs() < 1e-10);

        let zero = Precoder::new(CMat::zeros(16, 2), 2).unwrap();
        assert!(tx_beampattern(&zero, &grid).unwrap().overall.iter().all(|&x| x == 0.0));
        assert!(tx_beampattern(&zero, &[]).is_err());
    }

    #[test]
    fn tx_pattern_average_matches_power() {
        // Uniform in sin φ the steering vectors are isotropic: E[a a^H] = I / N_t.
        let f = random_complex_matrix(12, 3, &mut rng_from_seed(16));
        let pre = Precoder::new(f.clone(), 3).unwrap();
        let n = 4000;
        let grid: Vec<f64> = (0..n).map(|i| (-1.0 + 2.0 * (i as f64 + 0.5) / n as f64).asin()).collect();
        let pat = tx_beampattern(&pre, &grid).unwrap();
        let mean = pat.overall.iter().sum::<f64>() / n as f64;
        assert!((mean * 12.0 / fro_sq(&f) - 1.0).abs() < 0.01);
    }

    #[test]
    fn rx_pattern_basics() {
        let phi = -35f64.to_radians();
        let v = steering_vector(16, phi).unwrap();
        let grid = angle_grid_deg(1.0);
        let pat = rx_beampattern_effective(&v, &grid).unwrap();
        let imax = pat.iter().enumerate().fold(0, |b, (i, &x)| if x > pat[b] { i } else { b });
        assert_eq!(imax, 55);
        assert!(rx_beampattern_effective(&CVec::zeros(16), &grid).unwrap().iter().all(|&x| x == 0.0));
    }

    proptest! {
        #[test]
        fn scnr_is_scale_invariant_in_receiver(seed in 0u64..1000, scale in 0.01f64..100.0, ph in 0.0f64..std::f64::consts::TAU) {
            let scene = random_scene(seed, 6, 2, 2);
            let mut rng = rng_from_seed(seed + 1);
            let pre = Precoder::new(random_complex_matrix(6, 3, &mut rng), 2).unwrap();
            let v = random_complex_vector(5, &mut rng);
            let a = scnr_effective(&v, &pre, &scene, 0.4).unwrap().scnr;
            let b = scnr_effective(&(&v * crate::linalg::C64::from_polar(scale, ph)), &pre, &scene, 0.4).unwrap().scnr;
            prop_assert!((a - b).abs() <= 1e-10 * a);
        }

        #[test]
        fn pattern_overall_is_sum_of_streams(seed in 0u64..1000) {
            let pre = Precoder::new(random_complex_matrix(8, 4, &mut rng_from_seed(seed)), 2).unwrap();
            let pat = tx_beampattern(&pre, &angle_grid_deg(5.0)).unwrap();
            for g in 0..pat.overall.len() {
                let s: f64 = pat.per_stream.iter().map(|col| col[g]).sum();
                prop_assert!((s - pat.overall[g]).abs() <= 1e-12 * (1.0 + s));
            }
        }

        #[test]
        fn min_sinr_permutation_invariant(seed in 0u64..1000) {
            let scene = random_scene(seed, 6, 3, 0);
            let f = random_complex_matrix(6, 4, &mut rng_from_seed(seed + 7));
            let pre = Precoder::new(f.clone(), 3).unwrap();
            let perm = [2usize, 0, 1];
            let mut fp = f.clone();
            for (new, &old) in perm.iter().enumerate() {
                fp.set_column(new, &f.column(old));
            }
            let scene_p = Scene { ue_channels: perm.iter().map(|&i| scene.ue_channels[i].clone()).collect(), ..scene.clone() };
            let a = min_with_index(&sinr_all(&pre, &scene, 0.3).unwrap()).0;
            let b = min_with_index(&sinr_all(&Precoder::new(fp, 3).unwrap(), &scene_p, 0.3).unwrap()).0;
            prop_assert!((a - b).abs() <= 1e-12 * (1.0 + a));
        }
    }
}
