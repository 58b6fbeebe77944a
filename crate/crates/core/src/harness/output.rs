//! CSV and JSON outputs tagged with the manifest hash, and their verification.
//!
//! Every CSV starts with `# manifest_sha256=<hash>` and every JSON-lines record
//! carries the same hash. Wall-clock timings only appear in `trials.jsonl`, so
//! the CSV files are byte-identical across reruns and worker counts.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{angle_grid_deg, linear_to_db};
use crate::metrics::{rx_beampattern_effective, tx_beampattern};

use super::config::{ExperimentSpec, Method, SweepSection};
use super::experiment::{manifest_hash, ExperimentResult, SweepPoint, TrialRecord};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const SUMMARY_FILE: &str = "scnr_summary.csv";
pub const TRIALS_FILE: &str = "trials.csv";
pub const TRIALS_JSONL_FILE: &str = "trials.jsonl";
pub const CONVERGENCE_FILE: &str = "convergence.csv";
pub const TX_PATTERN_FILE: &str = "beampattern_tx.csv";
pub const RX_PATTERN_FILE: &str = "beampattern_rx.csv";
pub const SWEEP_FILE: &str = "sweep.csv";

/// Gains below this floor (relative to the peak possible) are clipped in dB outputs.
pub const DB_FLOOR: f64 = -80.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub manifest_sha256: String,
    pub package: String,
    pub version: String,
    pub spec: ExperimentSpec,
    pub methods: Vec<Method>,
    pub sweep: Option<SweepSection>,
    pub files: Vec<String>,
}

fn hash_line(hash: &str) -> String {
    format!("# manifest_sha256={hash}\n")
}

fn csv_writer(path: &Path, hash: &str) -> Result<csv::Writer<BufWriter<File>>> {
    let mut file = BufWriter::new(File::create(path)?);
    file.write_all(hash_line(hash).as_bytes())?;
    Ok(csv::Writer::from_writer(file))
}

fn num(x: f64) -> String {
    x.to_string()
}

fn opt_num(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

fn db(gain: f64) -> String {
    num(linear_to_db(gain).max(DB_FLOOR))
}

fn write_summary(dir: &Path, r: &ExperimentResult) -> Result<()> {
    let mut w = csv_writer(&dir.join(SUMMARY_FILE), &r.manifest_sha256)?;
    w.write_record([
        "method",
        "trials_ok",
        "trials_failed",
        "mean_scnr",
        "std_scnr",
        "mean_scnr_db",
        "mean_min_sinr",
        "mean_objective",
        "mean_gamma",
    ])?;
    for s in &r.summary {
        w.write_record([
            s.method.name().to_string(),
            s.trials_ok.to_string(),
            s.trials_failed.to_string(),
            num(s.mean_scnr),
            num(s.std_scnr),
            num(linear_to_db(s.mean_scnr)),
            num(s.mean_min_sinr),
            num(s.mean_objective),
            num(s.mean_gamma),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn write_trials(dir: &Path, r: &ExperimentResult) -> Result<()> {
    let mut w = csv_writer(&dir.join(TRIALS_FILE), &r.manifest_sha256)?;
    w.write_record([
        "trial",
        "seed",
        "method",
        "ok",
        "gamma",
        "scnr",
        "min_sinr",
        "bottleneck_ue",
        "objective",
        "n_streams",
        "hybrid_residual",
        "ao_rounds",
        "ao_converged",
        "error",
    ])?;
    for t in &r.trials {
        for o in &t.outcomes {
            let rep = o.report.as_ref();
            w.write_record([
                t.trial.to_string(),
                t.seed.to_string(),
                o.method.name().to_string(),
                rep.is_some().to_string(),
                opt_num(o.gamma),
                opt_num(rep.map(|r| r.scnr)),
                opt_num(rep.map(|r| r.min_sinr)),
                rep.and_then(|r| r.bottleneck_ue).map(|k| k.to_string()).unwrap_or_default(),
                opt_num(rep.map(|r| r.objective)),
                o.n_streams.map(|n| n.to_string()).unwrap_or_default(),
                opt_num(o.hybrid_residual),
                o.ao_rounds.map(|n| n.to_string()).unwrap_or_default(),
                o.ao_converged.map(|b| b.to_string()).unwrap_or_default(),
                o.error.clone().unwrap_or_default(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct JsonlRecord<'a> {
    manifest_sha256: &'a str,
    #[serde(flatten)]
    trial: &'a TrialRecord,
}

fn write_trials_jsonl(dir: &Path, r: &ExperimentResult) -> Result<()> {
    let mut f = BufWriter::new(File::create(dir.join(TRIALS_JSONL_FILE))?);
    for t in &r.trials {
        serde_json::to_writer(&mut f, &JsonlRecord { manifest_sha256: &r.manifest_sha256, trial: t })?;
        f.write_all(b"\n")?;
    }
    f.flush()?;
    Ok(())
}

fn write_convergence(dir: &Path, r: &ExperimentResult) -> Result<()> {
    let mut w = csv_writer(&dir.join(CONVERGENCE_FILE), &r.manifest_sha256)?;
    w.write_record(["iter", "objective", "scnr", "min_sinr"])?;
    if let Some(t) = r.trials.first() {
        for p in &t.convergence {
            w.write_record([p.iter.to_string(), num(p.objective), num(p.scnr), num(p.min_sinr)])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Transmit gains per unit transmit power; receive gains of the unit-norm effective filter.
fn write_patterns(dir: &Path, r: &ExperimentResult) -> Result<()> {
    let grid = angle_grid_deg(r.spec.angle_step_deg);
    let degrees: Vec<f64> = grid.iter().map(|a| a.to_degrees()).collect();

    let mut header = vec!["angle_deg".to_string()];
    let mut columns: Vec<Vec<f64>> = Vec::new();
    for d in &r.first_designs {
        let p = tx_beampattern(&d.precoder, &grid)?;
        let power = d.precoder.power().max(f64::MIN_POSITIVE);
        for (i, s) in p.per_stream.iter().enumerate() {
            header.push(format!("{}_s{i}_db", d.method));
            columns.push(s.iter().map(|g| g / power).collect());
        }
        header.push(format!("{}_overall_db", d.method));
        columns.push(p.overall.iter().map(|g| g / power).collect());
    }
    write_pattern_file(&dir.join(TX_PATTERN_FILE), &r.manifest_sha256, &header, &degrees, &columns)?;

    let mut header = vec!["angle_deg".to_string()];
    let mut columns = Vec::new();
    for d in &r.first_designs {
        let v = d.receiver.effective();
        let norm2 = v.norm_squared().max(f64::MIN_POSITIVE);
        header.push(format!("{}_db", d.method));
        columns.push(rx_beampattern_effective(&v, &grid)?.into_iter().map(|g| g / norm2).collect());
    }
    write_pattern_file(&dir.join(RX_PATTERN_FILE), &r.manifest_sha256, &header, &degrees, &columns)
}

fn write_pattern_file(path: &Path, hash: &str, header: &[String], degrees: &[f64], columns: &[Vec<f64>]) -> Result<()> {
    let mut w = csv_writer(path, hash)?;
    w.write_record(header)?;
    for (g, deg) in degrees.iter().enumerate() {
        let mut row = vec![num(*deg)];
        row.extend(columns.iter().map(|c| db(c[g])));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

fn write_manifest(dir: &Path, manifest: &Manifest) -> Result<()> {
    let mut f = BufWriter::new(File::create(dir.join(MANIFEST_FILE))?);
    serde_json::to_writer_pretty(&mut f, manifest)?;
    f.write_all(b"\n")?;
    f.flush()?;
    Ok(())
}

fn manifest_for(
    spec: &ExperimentSpec,
    methods: &[Method],
    sweep: Option<SweepSection>,
    hash: String,
    files: &[&str],
) -> Manifest {
    Manifest {
        manifest_sha256: hash,
        package: env!("CARGO_PKG_NAME").into(),
        version: env!("CARGO_PKG_VERSION").into(),
        spec: spec.clone(),
        methods: methods.to_vec(),
        sweep,
        files: files.iter().map(|s| s.to_string()).collect(),
    }
}

/// Write every output of a Monte-Carlo run into `dir`, creating it if needed.
pub fn write_experiment(dir: &Path, r: &ExperimentResult) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_summary(dir, r)?;
    write_trials(dir, r)?;
    write_trials_jsonl(dir, r)?;
    write_convergence(dir, r)?;
    write_patterns(dir, r)?;
    let files = [SUMMARY_FILE, TRIALS_FILE, TRIALS_JSONL_FILE, CONVERGENCE_FILE, TX_PATTERN_FILE, RX_PATTERN_FILE];
    write_manifest(dir, &manifest_for(&r.spec, &r.methods, None, r.manifest_sha256.clone(), &files))
}

/// Write `sweep.csv` and the manifest for a sweep over `section.values`.
pub fn write_sweep(dir: &Path, spec: &ExperimentSpec, section: &SweepSection, points: &[SweepPoint]) -> Result<String> {
    std::fs::create_dir_all(dir)?;
    let methods = spec.method.methods();
    let hash = manifest_hash(spec, &methods, Some(section))?;
    let mut w = csv_writer(&dir.join(SWEEP_FILE), &hash)?;
    w.write_record([
        "parameter",
        "value",
        "method",
        "trials_ok",
        "trials_failed",
        "mean_scnr",
        "std_scnr",
        "mean_scnr_db",
        "mean_min_sinr",
        "mean_objective",
        "mean_gamma",
    ])?;
    let parameter = serde_json::to_value(section.parameter)?.as_str().unwrap_or_default().to_string();
    for p in points {
        for s in &p.result.summary {
            w.write_record([
                parameter.clone(),
                num(p.value),
                s.method.name().to_string(),
                s.trials_ok.to_string(),
                s.trials_failed.to_string(),
                num(s.mean_scnr),
                num(s.std_scnr),
                num(linear_to_db(s.mean_scnr)),
                num(s.mean_min_sinr),
                num(s.mean_objective),
                num(s.mean_gamma),
            ])?;
        }
    }
    w.flush()?;
    write_manifest(dir, &manifest_for(spec, &methods, Some(section.clone()), hash.clone(), &[SWEEP_FILE]))?;
    Ok(hash)
}

fn mismatch(file: &str, detail: String) -> Error {
    Error::Config(format!("manifest mismatch in {file}: {detail}"))
}

/// Check that the manifest hash matches its own contents and tags every listed file.
pub fn verify_outputs(dir: &Path) -> Result<Manifest> {
    let manifest: Manifest = serde_json::from_reader(BufReader::new(File::open(dir.join(MANIFEST_FILE))?))?;
    let expected = manifest_hash(&manifest.spec, &manifest.methods, manifest.sweep.as_ref())?;
    if expected != manifest.manifest_sha256 {
        return Err(mismatch(
            MANIFEST_FILE,
            format!("recorded {} but contents hash to {expected}", manifest.manifest_sha256),
        ));
    }
    let tag = hash_line(&manifest.manifest_sha256);
    for name in &manifest.files {
        let reader = BufReader::new(File::open(dir.join(name))?);
        if name.ends_with(".jsonl") {
            for (i, line) in reader.lines().enumerate() {
                let value: serde_json::Value = serde_json::from_str(&line?)?;
                if value.get("manifest_sha256").and_then(|v| v.as_str()) != Some(manifest.manifest_sha256.as_str()) {
                    return Err(mismatch(name, format!("record {i} carries a different hash")));
                }
            }
        } else {
            let mut first = String::new();
            BufReader::new(reader.into_inner()).read_line(&mut first)?;
            if first != tag {
                return Err(mismatch(name, format!("header line is '{}'", first.trim_end())));
            }
        }
    }
    Ok(manifest)
}
