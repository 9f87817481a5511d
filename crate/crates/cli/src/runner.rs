//! The per-seed experiment pipeline and the run manifest.
//!
//! Each seed splits the data, trains one shared point model and one
//! quantile pair on the training part, calibrates on the calibration part,
//! then sweeps every configured rejector over the test part. All rejectors
//! gate the same point predictions and share one nMSE normalizer.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use csr_core::dataset::SynthSpec;
use csr_core::evaluation::{write_curve_csv, RawCurve, SummaryDocument, RESTRICTED_LEVELS};
use csr_core::selective::{write_sweeps_csv, RejectorKind};
use csr_core::{
    calibrate, empirical_coverage, generate_synthetic, load_csv, normalize, split,
    sweep_thresholds, train_point_model, train_quantile_pair, ConformalCalibration,
    CoverageErrorCurve, Dataset, KnnEstimator, Rejector, ThresholdSweep,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{DataSource, ExperimentConfig};
use crate::error::{CliError, Result};

pub const MANIFEST_SCHEMA: &str = "csr.manifest.v1";
pub const MANIFEST_FILE: &str = "manifest.json";

/// Everything one seed produces, before anything touches the disk.
#[derive(Debug, Clone)]
pub struct SeedResult {
    pub seed: u64,
    pub dataset: String,
    pub split_sizes: [usize; 3],
    pub calibration: ConformalCalibration<f64>,
    /// Fraction of test targets inside their conformal interval.
    pub interval_coverage: f64,
    pub sweeps: Vec<(RejectorKind, ThresholdSweep<f64>)>,
    /// One curve per rejector, in configuration order.
    pub curves: Vec<CoverageErrorCurve<f64>>,
    pub summary: SummaryDocument<f64>,
}

/// Loads the source once for CSV input. Synthetic sources are drawn per
/// seed, so this returns `None` for them.
pub fn load_source(config: &ExperimentConfig) -> Result<Option<Dataset<f64>>> {
    match &config.source {
        DataSource::Csv { path, target } => Ok(Some(load_csv(path, target)?)),
        DataSource::Synth { .. } => Ok(None),
    }
}

/// The dataset seen by `seed`: the loaded CSV, or a synthetic draw.
pub fn seed_dataset(
    config: &ExperimentConfig,
    loaded: Option<&Dataset<f64>>,
    seed: u64,
) -> Result<Dataset<f64>> {
    match (&config.source, loaded) {
        (DataSource::Synth { profile, n }, _) => Ok(generate_synthetic(SynthSpec {
            n: *n,
            noise_profile: *profile,
            seed,
        })?),
        (DataSource::Csv { .. }, Some(data)) => Ok(data.clone()),
        (DataSource::Csv { .. }, None) => {
            Err(CliError::Internal("csv source was not loaded".into()))
        }
    }
}

/// Runs the full pipeline for one seed on `data`.
pub fn evaluate_seed(
    config: &ExperimentConfig,
    data: &Dataset<f64>,
    seed: u64,
) -> Result<SeedResult> {
    let dataset = config.source.dataset_name();
    let parts = split(data, config.fractions, seed)?;
    let hp = config.model_hyperparams()?.with_seed(seed);
    let point = train_point_model(&parts.train, config.family, &hp)?;
    let pair = train_quantile_pair(&parts.train, config.alpha, config.family, &hp)?;
    let calibration = calibrate(&pair, &parts.cal, config.alpha)?;
    let interval_coverage = empirical_coverage(&pair, &calibration, &parts.test)?;
    let predictions = point.predict_all(&parts.test)?;
    let grid = config.grid()?;

    let mut sweeps = Vec::with_capacity(config.rejectors.len());
    let mut raw = Vec::with_capacity(config.rejectors.len());
    for &kind in &config.rejectors {
        let rejector = match kind {
            RejectorKind::Csr => Rejector::Csr {
                pair: pair.clone(),
                calibration: calibration.clone(),
            },
            RejectorKind::KnnVariance => Rejector::KnnVariance(KnnEstimator::fit(
                &parts.train.concat(&parts.cal)?,
                config.k,
            )?),
        };
        let sweep = sweep_thresholds(&rejector, &parts.test, &grid)?;
        raw.push(RawCurve::from_sweep(
            kind.as_str(),
            dataset.as_str(),
            &sweep,
            parts.test.targets(),
            &predictions,
        )?);
        sweeps.push((kind, sweep));
    }
    let curves = normalize(raw);
    let summary = SummaryDocument::new(dataset.as_str(), seed, &curves, &RESTRICTED_LEVELS)?;
    Ok(SeedResult {
        seed,
        dataset,
        split_sizes: [
            parts.train.n_rows(),
            parts.cal.n_rows(),
            parts.test.n_rows(),
        ],
        calibration,
        interval_coverage,
        sweeps,
        curves,
        summary,
    })
}

/// Output paths of one seed, relative to the run directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedFiles {
    pub curves: BTreeMap<String, PathBuf>,
    pub summary: PathBuf,
    pub sweeps: PathBuf,
    pub calibration: PathBuf,
}

impl SeedFiles {
    pub fn all(&self) -> impl Iterator<Item = &PathBuf> {
        self.curves
            .values()
            .chain([&self.summary, &self.sweeps, &self.calibration])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SeedStatus {
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRecord {
    pub seed: u64,
    pub status: SeedStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnostic: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exit_code: Option<i32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split_sizes: Option<[usize; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub interval_coverage: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub files: Option<SeedFiles>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema: String,
    pub version: String,
    pub dataset: String,
    pub config: ExperimentConfig,
    pub started_unix_ms: u64,
    pub finished_unix_ms: u64,
    pub seeds: Vec<SeedRecord>,
}

impl RunManifest {
    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Data(format!("cannot read manifest {}: {e}", path.display())))?;
        let manifest: Self = serde_json::from_str(&text)
            .map_err(|e| CliError::Data(format!("malformed manifest {}: {e}", path.display())))?;
        if manifest.schema != MANIFEST_SCHEMA {
            return Err(CliError::Data(format!(
                "{}: unsupported manifest schema `{}`",
                path.display(),
                manifest.schema
            )));
        }
        Ok(manifest)
    }

    /// Exit code of the first failed seed, if any.
    pub fn failure_code(&self) -> Option<i32> {
        self.seeds
            .iter()
            .find(|s| s.status == SeedStatus::Failed)
            .map(|s| s.exit_code.unwrap_or(3))
    }
}

fn unix_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

/// Writes `bytes` to a sibling temporary file, then renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    let mut file = fs::File::create(&tmp).map_err(|e| CliError::io(&tmp, e))?;
    file.write_all(bytes).map_err(|e| CliError::io(&tmp, e))?;
    file.sync_all().map_err(|e| CliError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| CliError::io(path, e))
}

/// Writes the artifacts of one seed under `out/seed_<seed>/`.
pub fn write_seed(out: &Path, result: &SeedResult) -> Result<SeedFiles> {
    let rel_dir = PathBuf::from(format!("seed_{}", result.seed));
    let dir = out.join(&rel_dir);
    fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;

    let mut curves = BTreeMap::new();
    for curve in &result.curves {
        let name = format!("curve_{}.csv", curve.method);
        let mut buf = Vec::new();
        write_curve_csv(&mut buf, curve)?;
        write_atomic(&dir.join(&name), &buf)?;
        curves.insert(curve.method.clone(), rel_dir.join(name));
    }

    let summary = serde_json::to_vec_pretty(&result.summary)
        .map_err(|e| CliError::Internal(e.to_string()))?;
    write_atomic(&dir.join("summary.json"), &summary)?;

    let named: Vec<(&str, &ThresholdSweep<f64>)> =
        result.sweeps.iter().map(|(k, s)| (k.as_str(), s)).collect();
    let mut buf = Vec::new();
    write_sweeps_csv(&mut buf, &named)?;
    write_atomic(&dir.join("sweeps.csv"), &buf)?;

    write_atomic(
        &dir.join("calibration.json"),
        result.calibration.to_json(true)?.as_bytes(),
    )?;

    Ok(SeedFiles {
        curves,
        summary: rel_dir.join("summary.json"),
        sweeps: rel_dir.join("sweeps.csv"),
        calibration: rel_dir.join("calibration.json"),
    })
}

fn run_seed(config: &ExperimentConfig, loaded: Option<&Dataset<f64>>, seed: u64) -> SeedRecord {
    let outcome = seed_dataset(config, loaded, seed)
        .and_then(|data| evaluate_seed(config, &data, seed))
        .and_then(|result| write_seed(&config.out, &result).map(|files| (result, files)));
    match outcome {
        Ok((result, files)) => SeedRecord {
            seed,
            status: SeedStatus::Ok,
            diagnostic: None,
            exit_code: None,
            split_sizes: Some(result.split_sizes),
            interval_coverage: Some(result.interval_coverage),
            files: Some(files),
        },
        Err(err) => SeedRecord {
            seed,
            status: SeedStatus::Failed,
            diagnostic: Some(err.to_string()),
            exit_code: Some(err.exit_code()),
            split_sizes: None,
            interval_coverage: None,
            files: None,
        },
    }
}

/// Runs every seed (in parallel) and writes `manifest.json` last.
///
/// Configuration and loading errors abort the run. A failing seed is
/// recorded in the manifest and the remaining seeds still run.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunManifest> {
    config.validate()?;
    let started = unix_ms();
    let loaded = load_source(config)?;
    fs::create_dir_all(&config.out).map_err(|e| CliError::io(&config.out, e))?;

    let seeds: Vec<SeedRecord> = config
        .seeds
        .par_iter()
        .map(|&seed| run_seed(config, loaded.as_ref(), seed))
        .collect();

    let manifest = RunManifest {
        schema: MANIFEST_SCHEMA.into(),
        version: env!("CARGO_PKG_VERSION").into(),
        dataset: config.source.dataset_name(),
        config: config.clone(),
        started_unix_ms: started,
        finished_unix_ms: unix_ms(),
        seeds,
    };
    let json =
        serde_json::to_vec_pretty(&manifest).map_err(|e| CliError::Internal(e.to_string()))?;
    write_atomic(&config.out.join(MANIFEST_FILE), &json)?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use csr_core::dataset::NoiseProfile;

    fn config(out: &Path) -> ExperimentConfig {
        let mut c = ExperimentConfig::new(
            DataSource::Synth {
                profile: NoiseProfile::HeteroscedasticStep,
                n: 400,
            },
            out,
        );
        c.hyperparams.insert("epochs".into(), "200".into());
        c
    }

    #[test]
    fn seed_pipeline_shares_predictions() {
        let dir = tempfile::tempdir().unwrap();
        let c = config(dir.path());
        let data = seed_dataset(&c, None, 3).unwrap();
        let r = evaluate_seed(&c, &data, 3).unwrap();
        assert_eq!(r.split_sizes, [280, 40, 80]);
        assert_eq!(r.curves.len(), 2);
        let full: Vec<f64> = r
            .curves
            .iter()
            .map(|c| c.points.last().unwrap().mse)
            .collect();
        assert_eq!(full[0].to_bits(), full[1].to_bits());
        assert_eq!(r.curves[0].normalizer, r.curves[1].normalizer);
        assert!((0.0..=1.0).contains(&r.interval_coverage));
    }

    #[test]
    fn failed_seed_is_recorded() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = config(dir.path());
        c.source = DataSource::Synth {
            profile: NoiseProfile::Homoscedastic,
            n: 12,
        };
        c.k = 50;
        c.seeds = vec![0, 1];
        let m = run_experiment(&c).unwrap();
        assert!(m.seeds.iter().all(|s| s.status == SeedStatus::Failed));
        assert_eq!(m.failure_code(), Some(1));
        assert!(dir.path().join(MANIFEST_FILE).exists());
    }

    #[test]
    fn atomic_write_leaves_no_temp_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.txt");
        write_atomic(&path, b"one").unwrap();
        write_atomic(&path, b"two").unwrap();
        assert_eq!(fs::read(&path).unwrap(), b"two");
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}
