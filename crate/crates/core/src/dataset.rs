//! Tabular regression data: CSV ingestion, seeded train/calibration/test
//! splits with train-only standardization, and a synthetic generator with
//! controllable noise profiles.

use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{CsrError, Result};
use crate::scalar::{robust_floor, Scalar};

/// Minimum number of valid rows an ingested or generated dataset must hold.
pub const MIN_ROWS: usize = 10;

/// Feature matrix (row-major) with one real target per row.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<S = f64> {
    features: Vec<S>,
    n_features: usize,
    targets: Vec<S>,
    feature_names: Vec<String>,
    target_name: String,
    dropped_rows: usize,
}

impl<S: Scalar> Dataset<S> {
    /// Builds a dataset from a row-major feature buffer. Rejects ragged
    /// shapes, non-finite values and zero feature columns; does not enforce
    /// [`MIN_ROWS`] so that split parts can be represented.
    pub fn new(
        features: Vec<S>,
        targets: Vec<S>,
        feature_names: Vec<String>,
        target_name: impl Into<String>,
    ) -> Result<Self> {
        let n_features = feature_names.len();
        if n_features == 0 {
            return Err(CsrError::NoFeatures);
        }
        if features.len() != targets.len() * n_features {
            return Err(CsrError::InvalidDataset(format!(
                "{} feature values for {} rows of {} columns",
                features.len(),
                targets.len(),
                n_features
            )));
        }
        if features
            .iter()
            .chain(targets.iter())
            .any(|v| !v.is_finite())
        {
            return Err(CsrError::InvalidDataset("non-finite value".into()));
        }
        Ok(Self {
            features,
            n_features,
            targets,
            feature_names,
            target_name: target_name.into(),
            dropped_rows: 0,
        })
    }

    /// Convenience constructor from nested rows with generated feature names.
    pub fn from_rows(rows: &[Vec<S>], targets: Vec<S>) -> Result<Self> {
        let n_features = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != n_features) {
            return Err(CsrError::InvalidDataset("ragged rows".into()));
        }
        if rows.len() != targets.len() {
            return Err(CsrError::InvalidDataset(format!(
                "{} rows but {} targets",
                rows.len(),
                targets.len()
            )));
        }
        let names = (0..n_features).map(|j| format!("x{j}")).collect();
        Self::new(rows.concat(), targets, names, "y")
    }

    pub fn n_rows(&self) -> usize {
        self.targets.len()
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn row(&self, i: usize) -> &[S] {
        &self.features[i * self.n_features..(i + 1) * self.n_features]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[S]> + '_ {
        self.features.chunks_exact(self.n_features)
    }

    pub fn targets(&self) -> &[S] {
        &self.targets
    }

    pub fn features(&self) -> &[S] {
        &self.features
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn target_name(&self) -> &str {
        &self.target_name
    }

    /// Rows discarded during ingestion because of missing or non-numeric cells.
    pub fn dropped_rows(&self) -> usize {
        self.dropped_rows
    }

    /// New dataset holding the given rows, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Self {
        let mut features = Vec::with_capacity(indices.len() * self.n_features);
        let mut targets = Vec::with_capacity(indices.len());
        for &i in indices {
            features.extend_from_slice(self.row(i));
            targets.push(self.targets[i]);
        }
        Self {
            features,
            n_features: self.n_features,
            targets,
            feature_names: self.feature_names.clone(),
            target_name: self.target_name.clone(),
            dropped_rows: 0,
        }
    }

    /// Row-wise concatenation of two datasets with identical columns.
    pub fn concat(&self, other: &Self) -> Result<Self> {
        if self.n_features != other.n_features {
            return Err(CsrError::DimensionMismatch {
                expected: self.n_features,
                found: other.n_features,
            });
        }
        let mut out = self.clone();
        out.features.extend_from_slice(&other.features);
        out.targets.extend_from_slice(&other.targets);
        out.dropped_rows = 0;
        Ok(out)
    }

    /// Writes the dataset as a headered CSV with the target as the last column.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header: Vec<&str> = self.feature_names.iter().map(String::as_str).collect();
        header.push(&self.target_name);
        w.write_record(&header)?;
        for (row, y) in self.rows().zip(&self.targets) {
            let rec: Vec<String> = row
                .iter()
                .chain(std::iter::once(y))
                .map(|v| v.to_string())
                .collect();
            w.write_record(&rec)?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }
}

/// Reads a headered CSV file. The target column becomes the target; every
/// other column is a feature. Rows with a missing or unparseable cell (or a
/// non-finite value) are dropped and counted.
pub fn load_csv<S: Scalar>(path: impl AsRef<Path>, target_column: &str) -> Result<Dataset<S>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| CsrError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    read_csv(file, target_column, MIN_ROWS)
}

/// Reader-level CSV ingestion with an explicit minimum row count.
pub fn read_csv<S: Scalar, R: Read>(
    reader: R,
    target_column: &str,
    min_rows: usize,
) -> Result<Dataset<S>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
    let target_idx = header
        .iter()
        .position(|h| h == target_column)
        .ok_or_else(|| CsrError::MissingTargetColumn(target_column.to_owned()))?;
    let feature_names: Vec<String> = header
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != target_idx)
        .map(|(_, h)| h.clone())
        .collect();
    if feature_names.is_empty() {
        return Err(CsrError::NoFeatures);
    }

    let mut features = Vec::new();
    let mut targets = Vec::new();
    let mut dropped = 0usize;
    let mut row_buf = Vec::with_capacity(feature_names.len());
    for record in rdr.records() {
        let record = record?;
        row_buf.clear();
        let mut target = None;
        let mut ok = record.len() == header.len();
        if ok {
            for (i, cell) in record.iter().enumerate() {
                match cell.parse::<f64>().ok().filter(|v| v.is_finite()) {
                    Some(v) if i == target_idx => target = Some(S::lit(v)),
                    Some(v) => row_buf.push(S::lit(v)),
                    None => {
                        ok = false;
                        break;
                    }
                }
            }
        }
        match (ok, target) {
            (true, Some(y)) if y.is_finite() && row_buf.iter().all(|v| v.is_finite()) => {
                features.extend_from_slice(&row_buf);
                targets.push(y);
            }
            _ => dropped += 1,
        }
    }
    if targets.len() < min_rows {
        return Err(CsrError::TooFewRows {
            found: targets.len(),
            required: min_rows,
        });
    }
    let mut data = Dataset::new(features, targets, feature_names, target_column)?;
    data.dropped_rows = dropped;
    Ok(data)
}

/// Per-feature affine map `(x - mean) / scale` fitted on one dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer<S = f64> {
    pub means: Vec<S>,
    pub scales: Vec<S>,
}

impl<S: Scalar> Standardizer<S> {
    /// Column means and population standard deviations; a zero deviation
    /// maps to scale 1 so constant columns stay finite.
    pub fn fit(data: &Dataset<S>) -> Self {
        let p = data.n_features();
        let n = S::from_usize_lossy(data.n_rows().max(1));
        let mut means = vec![S::zero(); p];
        for row in data.rows() {
            for (m, &v) in means.iter_mut().zip(row) {
                *m = *m + v;
            }
        }
        means.iter_mut().for_each(|m| *m = *m / n);
        let mut vars = vec![S::zero(); p];
        for row in data.rows() {
            for ((s, &m), &v) in vars.iter_mut().zip(&means).zip(row) {
                *s = *s + (v - m) * (v - m);
            }
        }
        let scales = vars
            .into_iter()
            .map(|v| {
                let sd = (v / n).sqrt();
                if sd > S::epsilon() {
                    sd
                } else {
                    S::one()
                }
            })
            .collect();
        Self { means, scales }
    }

    pub fn transform_row(&self, row: &[S]) -> Vec<S> {
        row.iter()
            .zip(self.means.iter().zip(&self.scales))
            .map(|(&v, (&m, &s))| (v - m) / s)
            .collect()
    }

    pub fn transform(&self, data: &Dataset<S>) -> Dataset<S> {
        let mut out = data.clone();
        let p = data.n_features();
        for row in out.features.chunks_exact_mut(p) {
            for ((v, &m), &s) in row.iter_mut().zip(&self.means).zip(&self.scales) {
                *v = (*v - m) / s;
            }
        }
        out
    }
}

/// Options for [`split_with`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitOptions {
    pub fractions: [f64; 3],
    pub seed: u64,
    pub standardize: bool,
}

impl Default for SplitOptions {
    fn default() -> Self {
        Self {
            fractions: [0.7, 0.1, 0.2],
            seed: 0,
            standardize: true,
        }
    }
}

/// Disjoint train / calibration / test partition of one source dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct DataSplit<S = f64> {
    pub train: Dataset<S>,
    pub cal: Dataset<S>,
    pub test: Dataset<S>,
    pub seed: u64,
    pub fractions: [f64; 3],
    /// Source row index of every row of each part, in part order.
    pub train_rows: Vec<usize>,
    pub cal_rows: Vec<usize>,
    pub test_rows: Vec<usize>,
    /// Present when features were standardized with train-only statistics.
    pub standardizer: Option<Standardizer<S>>,
}

/// Part sizes for `n` rows: train and calibration get `floor(f * n)`, the
/// test part gets the remainder.
pub fn split_sizes(n: usize, fractions: [f64; 3]) -> Result<[usize; 3]> {
    let sum: f64 = fractions.iter().sum();
    if fractions.iter().any(|f| !(f.is_finite() && *f > 0.0)) || (sum - 1.0).abs() > 1e-9 {
        return Err(CsrError::BadFractions(fractions));
    }
    let train = robust_floor(fractions[0] * n as f64) as usize;
    let cal = robust_floor(fractions[1] * n as f64) as usize;
    let test = n.saturating_sub(train + cal);
    if train == 0 || cal == 0 || test == 0 {
        return Err(CsrError::SplitTooSmall { rows: n });
    }
    Ok([train, cal, test])
}

/// Seeded shuffle-then-partition with train-only standardization.
pub fn split<S: Scalar>(data: &Dataset<S>, fractions: [f64; 3], seed: u64) -> Result<DataSplit<S>> {
    split_with(
        data,
        SplitOptions {
            fractions,
            seed,
            standardize: true,
        },
    )
}

pub fn split_with<S: Scalar>(data: &Dataset<S>, opts: SplitOptions) -> Result<DataSplit<S>> {
    let [n_train, n_cal, _] = split_sizes(data.n_rows(), opts.fractions)?;
    let mut order: Vec<usize> = (0..data.n_rows()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    order.shuffle(&mut rng);

    let train_rows = order[..n_train].to_vec();
    let cal_rows = order[n_train..n_train + n_cal].to_vec();
    let test_rows = order[n_train + n_cal..].to_vec();
    let mut train = data.subset(&train_rows);
    let mut cal = data.subset(&cal_rows);
    let mut test = data.subset(&test_rows);

    let standardizer = opts.standardize.then(|| {
        let st = Standardizer::fit(&train);
        train = st.transform(&train);
        cal = st.transform(&cal);
        test = st.transform(&test);
        st
    });

    Ok(DataSplit {
        train,
        cal,
        test,
        seed: opts.seed,
        fractions: opts.fractions,
        train_rows,
        cal_rows,
        test_rows,
        standardizer,
    })
}

/// Shape of the noise term `sigma(x)` in `y = x sin(x) + sigma(x) * eps`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseProfile {
    Homoscedastic,
    HeteroscedasticLinear,
    HeteroscedasticStep,
}

impl NoiseProfile {
    pub const ALL: [NoiseProfile; 3] = [
        NoiseProfile::Homoscedastic,
        NoiseProfile::HeteroscedasticLinear,
        NoiseProfile::HeteroscedasticStep,
    ];

    pub fn sigma(self, x: f64) -> f64 {
        match self {
            NoiseProfile::Homoscedastic => 0.3,
            NoiseProfile::HeteroscedasticLinear => 0.1 + 0.3 * x,
            NoiseProfile::HeteroscedasticStep => {
                if x < 2.5 {
                    0.1
                } else {
                    1.0
                }
            }
        }
    }

    /// Largest `sigma(x)` over the support `[0, 5]`.
    pub fn sigma_max(self) -> f64 {
        match self {
            NoiseProfile::Homoscedastic => 0.3,
            NoiseProfile::HeteroscedasticLinear => 1.6,
            NoiseProfile::HeteroscedasticStep => 1.0,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            NoiseProfile::Homoscedastic => "homoscedastic",
            NoiseProfile::HeteroscedasticLinear => "heteroscedastic-linear",
            NoiseProfile::HeteroscedasticStep => "heteroscedastic-step",
        }
    }
}

impl fmt::Display for NoiseProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for NoiseProfile {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        NoiseProfile::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| format!("unknown noise profile `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n: usize,
    pub noise_profile: NoiseProfile,
    pub seed: u64,
}

/// The noiseless regression function of the synthetic generator.
pub fn synthetic_mean(x: f64) -> f64 {
    x * x.sin()
}

/// Draws `x ~ Uniform[0, 5]` and `y = x sin(x) + sigma(x) * eps` with
/// standard normal `eps`.
pub fn generate_synthetic<S: Scalar>(spec: SynthSpec) -> Result<Dataset<S>> {
    if spec.n < MIN_ROWS {
        return Err(CsrError::TooFewRows {
            found: spec.n,
            required: MIN_ROWS,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut xs = Vec::with_capacity(spec.n);
    let mut ys = Vec::with_capacity(spec.n);
    for _ in 0..spec.n {
        let x: f64 = rng.random_range(0.0..5.0);
        let eps: f64 = rng.sample(StandardNormal);
        xs.push(S::lit(x));
        ys.push(S::lit(
            synthetic_mean(x) + spec.noise_profile.sigma(x) * eps,
        ));
    }
    Dataset::new(xs, ys, vec!["x".into()], "y")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(n: usize) -> Dataset<f64> {
        let rows: Vec<Vec<f64>> = (0..n).map(|i| vec![i as f64, (i * i) as f64]).collect();
        Dataset::from_rows(&rows, (0..n).map(|i| 2.0 * i as f64).collect()).unwrap()
    }

    #[test]
    fn read_small_csv() {
        let d: Dataset<f64> = read_csv("x,y\n1,2\n2,4\n3,6".as_bytes(), "y", 1).unwrap();
        assert_eq!(d.n_rows(), 3);
        assert_eq!(d.features(), &[1.0, 2.0, 3.0]);
        assert_eq!(d.targets(), &[2.0, 4.0, 6.0]);
        assert_eq!(d.feature_names(), &["x".to_string()]);
        assert_eq!(d.dropped_rows(), 0);
    }

    #[test]
    fn nan_row_dropped() {
        let d: Dataset<f64> = read_csv("x,y\n1,2\nNaN,4\n3,6".as_bytes(), "y", 1).unwrap();
        assert_eq!(d.n_rows(), 2);
        assert_eq!(d.dropped_rows(), 1);
    }

    #[test]
    fn missing_and_garbage_cells_dropped() {
        let d: Dataset<f64> =
            read_csv("a,y,b\n1,2,3\n,4,5\n1,x,2\n7,8,9".as_bytes(), "y", 1).unwrap();
        assert_eq!(d.n_rows(), 2);
        assert_eq!(d.dropped_rows(), 2);
        assert_eq!(d.row(1), &[7.0, 9.0]);
    }

    #[test]
    fn missing_target_column() {
        let err = read_csv::<f64, _>("x,z\n1,2".as_bytes(), "y", 1).unwrap_err();
        assert!(matches!(err, CsrError::MissingTargetColumn(_)));
        assert!(err.to_string().contains("missing target column"));
    }

    #[test]
    fn target_only_has_no_features() {
        let err = read_csv::<f64, _>("y\n1\n2".as_bytes(), "y", 1).unwrap_err();
        assert!(matches!(err, CsrError::NoFeatures));
    }

    #[test]
    fn load_csv_enforces_min_rows_and_missing_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("small.csv");
        std::fs::write(&p, "x,y\n1,2\n2,4\n3,6").unwrap();
        let err = load_csv::<f64>(&p, "y").unwrap_err();
        assert!(matches!(
            err,
            CsrError::TooFewRows {
                found: 3,
                required: 10
            }
        ));
        let err = load_csv::<f64>(dir.path().join("nope.csv"), "y").unwrap_err();
        assert!(matches!(err, CsrError::Io { .. }));
    }

    #[test]
    fn split_sizes_ten_rows() {
        assert_eq!(split_sizes(10, [0.7, 0.1, 0.2]).unwrap(), [7, 1, 2]);
        let s = split(&ramp(10), [0.7, 0.1, 0.2], 42).unwrap();
        assert_eq!(
            (s.train.n_rows(), s.cal.n_rows(), s.test.n_rows()),
            (7, 1, 2)
        );
    }

    #[test]
    fn split_is_deterministic() {
        let d = ramp(50);
        let a = split(&d, [0.7, 0.1, 0.2], 42).unwrap();
        let b = split(&d, [0.7, 0.1, 0.2], 42).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn split_rejects_bad_fractions() {
        let d = ramp(20);
        assert!(matches!(
            split(&d, [0.5, 0.5, 0.5], 1),
            Err(CsrError::BadFractions(_))
        ));
        assert!(matches!(
            split(&d, [1.0, 0.0, 0.0], 1),
            Err(CsrError::BadFractions(_))
        ));
        assert!(matches!(
            split(&ramp(5), [0.7, 0.1, 0.2], 1),
            Err(CsrError::SplitTooSmall { rows: 5 })
        ));
    }

    #[test]
    fn split_is_partition_and_seed_sensitive() {
        let d = ramp(40);
        let a = split(&d, [0.7, 0.1, 0.2], 1).unwrap();
        let b = split(&d, [0.7, 0.1, 0.2], 2).unwrap();
        let mut all: Vec<usize> = a
            .train_rows
            .iter()
            .chain(&a.cal_rows)
            .chain(&a.test_rows)
            .copied()
            .collect();
        all.sort_unstable();
        assert_eq!(all, (0..40).collect::<Vec<_>>());
        assert_ne!(a.train_rows, b.train_rows);
    }

    #[test]
    fn standardization_uses_train_statistics() {
        let d = ramp(30);
        let s = split(&d, [0.7, 0.1, 0.2], 3).unwrap();
        let st = s.standardizer.as_ref().unwrap();
        let mean0: f64 = s.train.rows().map(|r| r[0]).sum::<f64>() / s.train.n_rows() as f64;
        assert!(mean0.abs() < 1e-12);
        // the cal part is transformed with train statistics, not its own
        let raw = d.row(s.cal_rows[0]);
        assert_eq!(s.cal.row(0), st.transform_row(raw).as_slice());
        let plain = split_with(
            &d,
            SplitOptions {
                seed: 3,
                standardize: false,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(plain.standardizer.is_none());
        assert_eq!(plain.cal.row(0), raw);
    }

    #[test]
    fn synthetic_deterministic_and_min_n() {
        let spec = SynthSpec {
            n: 100,
            noise_profile: NoiseProfile::Homoscedastic,
            seed: 7,
        };
        let a: Dataset<f64> = generate_synthetic(spec).unwrap();
        let b: Dataset<f64> = generate_synthetic(spec).unwrap();
        assert_eq!(a, b);
        assert!(a.features().iter().all(|&x| (0.0..5.0).contains(&x)));
        let err = generate_synthetic::<f64>(SynthSpec { n: 5, ..spec }).unwrap_err();
        assert!(matches!(err, CsrError::TooFewRows { .. }));
    }

    fn residuals(d: &Dataset<f64>) -> impl Iterator<Item = (f64, f64)> + '_ {
        d.rows()
            .zip(d.targets())
            .map(|(r, &y)| (r[0], y - synthetic_mean(r[0])))
    }

    fn variance(v: &[f64]) -> f64 {
        let m = v.iter().sum::<f64>() / v.len() as f64;
        v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64
    }

    #[test]
    fn step_profile_noise_is_larger_above_threshold() {
        let d: Dataset<f64> = generate_synthetic(SynthSpec {
            n: 10_000,
            noise_profile: NoiseProfile::HeteroscedasticStep,
            seed: 11,
        })
        .unwrap();
        let (lo, hi): (Vec<_>, Vec<_>) = residuals(&d).partition(|(x, _)| *x < 2.5);
        let lo: Vec<f64> = lo.into_iter().map(|(_, r)| r).collect();
        let hi: Vec<f64> = hi.into_iter().map(|(_, r)| r).collect();
        assert!(variance(&hi) > variance(&lo));
        assert!((variance(&lo) - 0.01).abs() < 0.002);
        assert!((variance(&hi) - 1.0).abs() < 0.1);
    }

    #[test]
    fn synthetic_residuals_are_centered() {
        for profile in NoiseProfile::ALL {
            let d: Dataset<f64> = generate_synthetic(SynthSpec {
                n: 10_000,
                noise_profile: profile,
                seed: 5,
            })
            .unwrap();
            let mean = residuals(&d).map(|(_, r)| r).sum::<f64>() / 10_000.0;
            assert!(
                mean.abs() <= 3.0 * profile.sigma_max() / 100.0,
                "{profile}: {mean}"
            );
        }
    }

    #[test]
    fn csv_roundtrip_through_writer() {
        let d: Dataset<f64> = generate_synthetic(SynthSpec {
            n: 20,
            noise_profile: NoiseProfile::HeteroscedasticLinear,
            seed: 1,
        })
        .unwrap();
        let mut buf = Vec::new();
        d.write_csv(&mut buf).unwrap();
        let back: Dataset<f64> = read_csv(buf.as_slice(), "y", MIN_ROWS).unwrap();
        assert_eq!(back, d);
    }

    #[test]
    fn f32_dataset() {
        let d: Dataset<f32> = read_csv("x,y\n1,2\n2,4".as_bytes(), "y", 1).unwrap();
        assert_eq!(d.targets(), &[2.0f32, 4.0]);
    }
}
