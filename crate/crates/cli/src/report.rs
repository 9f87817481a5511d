//! Seed-averaged comparison tables built from one or more run manifests.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use csr_core::evaluation::SummaryDocument;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};
use crate::runner::{RunManifest, SeedStatus};

pub const REPORT_SCHEMA: &str = "csr.report.v1";

/// Mean, sample standard deviation and the raw per-seed values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    /// Sample standard deviation; zero for a single seed.
    pub std: f64,
    pub min: f64,
    pub max: f64,
    pub per_seed: Vec<SeedValue>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeedValue {
    pub seed: u64,
    pub value: f64,
}

impl Stat {
    pub fn from_values(per_seed: Vec<SeedValue>) -> Self {
        let n = per_seed.len() as f64;
        let mean = per_seed.iter().map(|v| v.value).sum::<f64>() / n;
        let std = if per_seed.len() > 1 {
            (per_seed
                .iter()
                .map(|v| (v.value - mean).powi(2))
                .sum::<f64>()
                / (n - 1.0))
                .sqrt()
        } else {
            0.0
        };
        let min = per_seed
            .iter()
            .map(|v| v.value)
            .fold(f64::INFINITY, f64::min);
        let max = per_seed
            .iter()
            .map(|v| v.value)
            .fold(f64::NEG_INFINITY, f64::max);
        Self {
            mean,
            std,
            min,
            max,
            per_seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RejectorRow {
    pub rejector: String,
    pub seeds: usize,
    pub auc: Stat,
    pub distance: Stat,
    /// Lowest mean AUC on this dataset.
    pub auc_winner: bool,
    /// Seeds on which this rejector had the strictly lowest AUC.
    pub auc_seed_wins: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelWins {
    pub level: f64,
    pub mean_nmse: BTreeMap<String, f64>,
    /// Seeds won at this level per rejector.
    pub wins: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetReport {
    pub dataset: String,
    pub rejectors: Vec<RejectorRow>,
    pub restricted: Vec<LevelWins>,
}

impl DatasetReport {
    pub fn auc_winner(&self) -> Option<&str> {
        self.rejectors
            .iter()
            .find(|r| r.auc_winner)
            .map(|r| r.rejector.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub schema: String,
    pub datasets: Vec<DatasetReport>,
}

/// Reads every successful seed summary listed by the manifests at `paths`.
pub fn collect_summaries(paths: &[impl AsRef<Path>]) -> Result<Vec<SummaryDocument<f64>>> {
    if paths.is_empty() {
        return Err(CliError::Usage("report needs at least one manifest".into()));
    }
    let mut out = Vec::new();
    for path in paths {
        let path = path.as_ref();
        let manifest = RunManifest::read(path)?;
        let root = path.parent().unwrap_or(Path::new("."));
        for record in manifest.seeds.iter().filter(|s| s.status == SeedStatus::Ok) {
            let files = record.files.as_ref().ok_or_else(|| {
                CliError::Data(format!(
                    "{}: seed {} lists no files",
                    path.display(),
                    record.seed
                ))
            })?;
            let summary_path = root.join(&files.summary);
            let text = fs::read_to_string(&summary_path).map_err(|e| {
                CliError::Data(format!("cannot read {}: {e}", summary_path.display()))
            })?;
            out.push(
                SummaryDocument::from_json(&text)
                    .map_err(|e| CliError::Data(format!("{}: {e}", summary_path.display())))?,
            );
        }
    }
    Ok(out)
}

/// Aggregates per-seed summaries by dataset, keeping first-seen order.
pub fn aggregate(summaries: &[SummaryDocument<f64>]) -> ComparisonReport {
    let mut order: Vec<&str> = Vec::new();
    for s in summaries {
        if !order.contains(&s.dataset.as_str()) {
            order.push(&s.dataset);
        }
    }
    let datasets = order
        .into_iter()
        .map(|name| {
            let docs: Vec<&SummaryDocument<f64>> =
                summaries.iter().filter(|s| s.dataset == name).collect();
            aggregate_dataset(name, &docs)
        })
        .collect();
    ComparisonReport {
        schema: REPORT_SCHEMA.into(),
        datasets,
    }
}

fn aggregate_dataset(name: &str, docs: &[&SummaryDocument<f64>]) -> DatasetReport {
    let mut methods: Vec<String> = Vec::new();
    for doc in docs {
        for r in &doc.rejectors {
            if !methods.contains(&r.method) {
                methods.push(r.method.clone());
            }
        }
    }

    let mut seed_wins: BTreeMap<&str, usize> = BTreeMap::new();
    for doc in docs {
        let mut best: Option<(&str, f64)> = None;
        let mut tied = false;
        for r in &doc.rejectors {
            match best {
                Some((_, a)) if r.auc == a => tied = true,
                Some((_, a)) if r.auc > a => {}
                _ => {
                    best = Some((&r.method, r.auc));
                    tied = false;
                }
            }
        }
        if let (Some((m, _)), false) = (best, tied) {
            *seed_wins.entry(m).or_default() += 1;
        }
    }

    let mut rejectors: Vec<RejectorRow> = methods
        .iter()
        .map(|m| {
            let rows: Vec<(u64, f64, f64)> = docs
                .iter()
                .flat_map(|d| {
                    d.rejectors
                        .iter()
                        .filter(|r| &r.method == m)
                        .map(|r| (d.seed, r.auc, r.distance))
                })
                .collect();
            let stat = |f: fn(&(u64, f64, f64)) -> f64| {
                Stat::from_values(
                    rows.iter()
                        .map(|r| SeedValue {
                            seed: r.0,
                            value: f(r),
                        })
                        .collect(),
                )
            };
            RejectorRow {
                rejector: m.clone(),
                seeds: rows.len(),
                auc: stat(|r| r.1),
                distance: stat(|r| r.2),
                auc_winner: false,
                auc_seed_wins: seed_wins.get(m.as_str()).copied().unwrap_or(0),
            }
        })
        .collect();
    if let Some(best) = rejectors
        .iter_mut()
        .min_by(|a, b| a.auc.mean.total_cmp(&b.auc.mean))
    {
        best.auc_winner = true;
    }

    let mut levels: Vec<f64> = Vec::new();
    for doc in docs {
        for row in &doc.restricted {
            if !levels.contains(&row.level) {
                levels.push(row.level);
            }
        }
    }
    let restricted = levels
        .into_iter()
        .map(|level| {
            let rows: Vec<_> = docs
                .iter()
                .flat_map(|d| d.restricted.iter().filter(|r| r.level == level))
                .collect();
            let mut wins: BTreeMap<String, usize> =
                methods.iter().map(|m| (m.clone(), 0)).collect();
            let mut sums: BTreeMap<String, (f64, usize)> = BTreeMap::new();
            for row in &rows {
                *wins.entry(row.winner.clone()).or_default() += 1;
                for v in &row.values {
                    let e = sums.entry(v.method.clone()).or_default();
                    e.0 += v.nmse;
                    e.1 += 1;
                }
            }
            LevelWins {
                level,
                mean_nmse: sums
                    .into_iter()
                    .map(|(m, (s, n))| (m, s / n as f64))
                    .collect(),
                wins,
            }
        })
        .collect();

    DatasetReport {
        dataset: name.into(),
        rejectors,
        restricted,
    }
}

/// Plain-text rendering of `report`.
pub fn render_text(report: &ComparisonReport) -> String {
    let mut s = String::new();
    for d in &report.datasets {
        let _ = writeln!(s, "dataset: {}", d.dataset);
        let _ = writeln!(
            s,
            "  {:<14} {:>5} {:>22} {:>22} {:>9}",
            "rejector", "seeds", "auc mean +- std", "distance mean +- std", "seed wins"
        );
        for r in &d.rejectors {
            let _ = writeln!(
                s,
                "  {:<14} {:>5} {:>12.6} +- {:<7.4} {:>12.6} +- {:<7.4} {:>9}{}",
                r.rejector,
                r.seeds,
                r.auc.mean,
                r.auc.std,
                r.distance.mean,
                r.distance.std,
                r.auc_seed_wins,
                if r.auc_winner { "  <- lowest AUC" } else { "" }
            );
        }
        for l in &d.restricted {
            let wins: Vec<String> = l.wins.iter().map(|(m, n)| format!("{m}={n}")).collect();
            let _ = writeln!(s, "  coverage {:.2}: seed wins {}", l.level, wins.join(" "));
        }
    }
    s
}
