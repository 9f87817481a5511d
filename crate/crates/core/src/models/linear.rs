//! Linear family: closed-form least squares for the conditional mean and
//! full-batch subgradient descent on the pinball loss for quantiles.
//!
//! Training works on internally standardized features and accumulates in
//! `f64` regardless of the scalar type; fitted coefficients are mapped back
//! to the caller's feature units.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{CsrError, Result};
use crate::models::pinball::{empirical_quantile, QuantileLevel};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearConfig {
    pub epochs: usize,
    /// Step size at epoch `t` is `step / sqrt(t)` (in residual-scale units).
    pub step: f64,
}

impl Default for LinearConfig {
    fn default() -> Self {
        Self {
            epochs: 2000,
            step: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel<S = f64> {
    pub weights: Vec<S>,
    pub intercept: S,
}

impl<S: Scalar> LinearModel<S> {
    pub fn predict_row(&self, x: &[S]) -> S {
        self.weights
            .iter()
            .zip(x)
            .fold(self.intercept, |acc, (&w, &v)| acc + w * v)
    }
}

/// Standardized design in f64: `z[i, j] = (x[i, j] - mean_j) / sd_j`.
struct Design {
    z: Vec<f64>,
    y: Vec<f64>,
    n: usize,
    p: usize,
    means: Vec<f64>,
    sds: Vec<f64>,
}

impl Design {
    fn new<S: Scalar>(data: &Dataset<S>) -> Self {
        let n = data.n_rows();
        let p = data.n_features();
        let mut means = vec![0.0; p];
        for row in data.rows() {
            for (m, v) in means.iter_mut().zip(row) {
                *m += v.as_f64();
            }
        }
        means.iter_mut().for_each(|m| *m /= n as f64);
        let mut sds = vec![0.0; p];
        for row in data.rows() {
            for ((s, m), v) in sds.iter_mut().zip(&means).zip(row) {
                let d = v.as_f64() - m;
                *s += d * d;
            }
        }
        for s in &mut sds {
            *s = (*s / n as f64).sqrt();
            if s.is_nan() || *s <= 1e-12 {
                *s = 1.0;
            }
        }
        let mut z = Vec::with_capacity(n * p);
        for row in data.rows() {
            z.extend(
                row.iter()
                    .zip(&means)
                    .zip(&sds)
                    .map(|((v, m), s)| (v.as_f64() - m) / s),
            );
        }
        let y = data.targets().iter().map(|v| v.as_f64()).collect();
        Self {
            z,
            y,
            n,
            p,
            means,
            sds,
        }
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.z[i * self.p..(i + 1) * self.p]
    }

    fn predict(&self, i: usize, w: &[f64], b: f64) -> f64 {
        b + self.row(i).iter().zip(w).map(|(z, w)| z * w).sum::<f64>()
    }

    /// Least squares on the centered design; rank-deficient systems get the
    /// minimum-norm solution.
    fn least_squares(&self) -> (Vec<f64>, f64) {
        let ybar = self.y.iter().sum::<f64>() / self.n as f64;
        let mut gram = DMatrix::<f64>::zeros(self.p, self.p);
        let mut rhs = DVector::<f64>::zeros(self.p);
        for i in 0..self.n {
            let r = self.row(i);
            let yc = self.y[i] - ybar;
            for a in 0..self.p {
                rhs[a] += r[a] * yc;
                for b in a..self.p {
                    gram[(a, b)] += r[a] * r[b];
                }
            }
        }
        for a in 0..self.p {
            for b in 0..a {
                gram[(a, b)] = gram[(b, a)];
            }
        }
        let eps = 1e-10 * gram.diagonal().amax().max(1e-300);
        let w = gram
            .svd(true, true)
            .solve(&rhs, eps)
            .map(|v| v.iter().copied().collect())
            .unwrap_or_else(|_| vec![0.0; self.p]);
        (w, ybar)
    }

    /// Maps standardized-space coefficients back to raw feature units.
    fn to_model<S: Scalar>(&self, w: &[f64], b: f64) -> LinearModel<S> {
        let weights: Vec<f64> = w.iter().zip(&self.sds).map(|(w, s)| w / s).collect();
        let intercept = b - weights
            .iter()
            .zip(&self.means)
            .map(|(w, m)| w * m)
            .sum::<f64>();
        LinearModel {
            weights: weights.into_iter().map(S::lit).collect(),
            intercept: S::lit(intercept),
        }
    }
}

fn check_nonempty<S: Scalar>(data: &Dataset<S>) -> Result<()> {
    if data.is_empty() {
        return Err(CsrError::Empty("training set"));
    }
    Ok(())
}

pub fn fit_least_squares<S: Scalar>(data: &Dataset<S>) -> Result<LinearModel<S>> {
    check_nonempty(data)?;
    let design = Design::new(data);
    let (w, b) = design.least_squares();
    Ok(design.to_model(&w, b))
}

/// Linear tau-quantile regression.
///
/// Starts from the least-squares fit with its intercept shifted by the
/// empirical tau-quantile of the residuals, then runs full-batch subgradient
/// descent on the mean pinball loss. The iterate with the lowest observed
/// loss is returned, so running out of epochs is never an error.
pub fn fit_quantile<S: Scalar>(
    data: &Dataset<S>,
    tau: QuantileLevel<S>,
    cfg: &LinearConfig,
) -> Result<LinearModel<S>> {
    check_nonempty(data)?;
    let tau = tau.tau().as_f64();
    let d = Design::new(data);
    let (mut w, mut b) = d.least_squares();

    let mut resid: Vec<f64> = (0..d.n).map(|i| d.y[i] - d.predict(i, &w, b)).collect();
    b += empirical_quantile(&mut resid, tau);

    let mean_sq = resid.iter().map(|r| r * r).sum::<f64>() / d.n as f64;
    let y_mean = d.y.iter().sum::<f64>() / d.n as f64;
    let y_sd = (d.y.iter().map(|y| (y - y_mean).powi(2)).sum::<f64>() / d.n as f64).sqrt();
    let scale = [mean_sq.sqrt(), y_sd, 1.0]
        .into_iter()
        .find(|s| *s > 1e-12)
        .unwrap_or(1.0);

    let mut best = (f64::INFINITY, w.clone(), b);
    let mut grad_w = vec![0.0; d.p];
    let inv_n = 1.0 / d.n as f64;
    for epoch in 0..=cfg.epochs {
        grad_w.iter_mut().for_each(|g| *g = 0.0);
        let mut grad_b = 0.0;
        let mut loss = 0.0;
        for i in 0..d.n {
            let r = d.y[i] - d.predict(i, &w, b);
            // d loss / d prediction
            let slope = if r >= 0.0 {
                loss += tau * r;
                -tau
            } else {
                loss -= (1.0 - tau) * r;
                1.0 - tau
            };
            grad_b += slope;
            for (g, z) in grad_w.iter_mut().zip(d.row(i)) {
                *g += slope * z;
            }
        }
        loss *= inv_n;
        if loss < best.0 {
            best = (loss, w.clone(), b);
        }
        if epoch == cfg.epochs {
            break;
        }
        let eta = cfg.step / ((epoch + 1) as f64).sqrt() * scale * inv_n;
        b -= eta * grad_b;
        for (wj, g) in w.iter_mut().zip(&grad_w) {
            *wj -= eta * g;
        }
    }
    Ok(d.to_model(&best.1, best.2))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::pinball::pinball_loss;

    fn line(n: usize, f: impl Fn(f64) -> f64) -> Dataset<f64> {
        let rows: Vec<Vec<f64>> = (0..n).map(|i| vec![i as f64 / n as f64 * 5.0]).collect();
        let ys = rows.iter().map(|r| f(r[0])).collect();
        Dataset::from_rows(&rows, ys).unwrap()
    }

    #[test]
    fn ols_recovers_exact_line() {
        let m = fit_least_squares(&line(50, |x| 2.0 * x)).unwrap();
        assert!((m.weights[0] - 2.0).abs() < 1e-9);
        assert!(m.intercept.abs() < 1e-9);
        assert!((m.predict_row(&[3.0]) - 6.0).abs() < 1e-9);
    }

    #[test]
    fn ols_handles_collinear_columns() {
        let rows: Vec<Vec<f64>> = (0..20)
            .map(|i| vec![i as f64, 2.0 * i as f64, 1.0])
            .collect();
        let ys = (0..20).map(|i| 3.0 * i as f64 + 1.0).collect();
        let d = Dataset::from_rows(&rows, ys).unwrap();
        let m = fit_least_squares(&d).unwrap();
        for (r, y) in d.rows().zip(d.targets()) {
            assert!((m.predict_row(r) - y).abs() < 1e-6);
        }
    }

    #[test]
    fn quantile_on_constant_target() {
        let d = line(40, |_| 5.0);
        let tau = QuantileLevel::new(0.05).unwrap();
        let m = fit_quantile(&d, tau, &LinearConfig::default()).unwrap();
        for r in d.rows() {
            assert!((m.predict_row(r) - 5.0).abs() < 1e-6);
        }
    }

    #[test]
    fn descent_does_not_worsen_warm_start() {
        // skewed noise so least squares + shift is not optimal
        let d = line(200, |x| {
            x + if (x * 7.0).sin() > 0.3 { 3.0 * x } else { 0.0 }
        });
        let tau = QuantileLevel::new(0.8).unwrap();
        let loss = |m: &LinearModel<f64>| {
            d.rows()
                .zip(d.targets())
                .map(|(r, &y)| pinball_loss(y, m.predict_row(r), tau))
                .sum::<f64>()
        };
        let warm = fit_quantile(
            &d,
            tau,
            &LinearConfig {
                epochs: 0,
                step: 0.05,
            },
        )
        .unwrap();
        let full = fit_quantile(&d, tau, &LinearConfig::default()).unwrap();
        assert!(loss(&full) <= loss(&warm));
    }

    #[test]
    fn empty_training_set() {
        let d = Dataset::<f64>::new(vec![], vec![], vec!["x".into()], "y").unwrap();
        assert!(fit_least_squares(&d).is_err());
    }
}
