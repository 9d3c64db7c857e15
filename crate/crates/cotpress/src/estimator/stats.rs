//! Standardization, correlation, and cross-validation splitting.

use super::special::inc_beta;
use super::EstimatorError;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Per-feature zero-mean unit-variance scaling, with the fitted
/// parameters retained so predictions can run in original units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub means: Vec<f64>,
    /// Population standard deviations; a constant feature records 1.0,
    /// which maps it to all-zeros.
    pub stds: Vec<f64>,
}

impl Standardizer {
    /// Fits on `rows` (each row one observation). Requires >= 2 rows.
    pub fn fit(rows: &[Vec<f64>]) -> Result<Self, EstimatorError> {
        if rows.len() < 2 {
            return Err(EstimatorError::TooFewRows { rows: rows.len(), need: 2 });
        }
        let p = rows[0].len();
        let n = rows.len() as f64;
        let mut means = vec![0.0; p];
        for row in rows {
            if row.len() != p {
                return Err(EstimatorError::ArityMismatch { expected: p, got: row.len() });
            }
            for (m, &x) in means.iter_mut().zip(row) {
                *m += x;
            }
        }
        for m in &mut means {
            *m /= n;
        }
        let mut vars = vec![0.0; p];
        for row in rows {
            for ((v, &x), &m) in vars.iter_mut().zip(row).zip(&means) {
                *v += (x - m) * (x - m);
            }
        }
        let stds = vars
            .iter()
            .map(|v| {
                let s = (v / n).sqrt();
                if s > 0.0 {
                    s
                } else {
                    1.0
                }
            })
            .collect();
        Ok(Self { means, stds })
    }

    pub fn n_features(&self) -> usize {
        self.means.len()
    }

    pub fn transform_row(&self, row: &[f64]) -> Result<Vec<f64>, EstimatorError> {
        if row.len() != self.means.len() {
            return Err(EstimatorError::ArityMismatch {
                expected: self.means.len(),
                got: row.len(),
            });
        }
        Ok(row
            .iter()
            .zip(&self.means)
            .zip(&self.stds)
            .map(|((&x, &m), &s)| (x - m) / s)
            .collect())
    }

    pub fn transform(&self, rows: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, EstimatorError> {
        rows.iter().map(|r| self.transform_row(r)).collect()
    }

    pub fn inverse_row(&self, z: &[f64]) -> Vec<f64> {
        z.iter()
            .zip(&self.means)
            .zip(&self.stds)
            .map(|((&z, &m), &s)| z * s + m)
            .collect()
    }
}

/// Standardizes a matrix, returning the scaled rows and the fitted scaler.
pub fn standardize(rows: &[Vec<f64>]) -> Result<(Vec<Vec<f64>>, Standardizer), EstimatorError> {
    let scaler = Standardizer::fit(rows)?;
    let z = scaler.transform(rows)?;
    Ok((z, scaler))
}

/// Pearson correlation with a two-sided p-value from the Student-t
/// distribution with n-2 degrees of freedom.
///
/// Requires n >= 3 and nonzero variance in both arguments. `r = ±1`
/// yields `p = 0` by definition.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<(f64, f64), EstimatorError> {
    if x.len() != y.len() {
        return Err(EstimatorError::ArityMismatch { expected: x.len(), got: y.len() });
    }
    let n = x.len();
    if n < 3 {
        return Err(EstimatorError::TooFewRows { rows: n, need: 3 });
    }
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    let mut sxy = 0.0;
    for (&a, &b) in x.iter().zip(y) {
        let dx = a - mx;
        let dy = b - my;
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(EstimatorError::ZeroVariance);
    }
    let r = (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0);
    let dof = (n - 2) as f64;
    let p = if r.abs() >= 1.0 {
        0.0
    } else {
        // Two-sided tail of t = r * sqrt(dof / (1 - r^2)).
        let t2 = r * r * dof / (1.0 - r * r);
        inc_beta(dof / (dof + t2), dof / 2.0, 0.5)
    };
    Ok((r, p))
}

/// Coefficient of determination: 1 - SS_res / SS_tot.
pub fn r_squared(y_true: &[f64], y_pred: &[f64]) -> Result<f64, EstimatorError> {
    if y_true.len() != y_pred.len() {
        return Err(EstimatorError::ArityMismatch { expected: y_true.len(), got: y_pred.len() });
    }
    if y_true.len() < 2 {
        return Err(EstimatorError::TooFewRows { rows: y_true.len(), need: 2 });
    }
    let mean = y_true.iter().sum::<f64>() / y_true.len() as f64;
    let ss_tot: f64 = y_true.iter().map(|&y| (y - mean) * (y - mean)).sum();
    if ss_tot == 0.0 {
        return Err(EstimatorError::ZeroVariance);
    }
    let ss_res: f64 = y_true.iter().zip(y_pred).map(|(&y, &p)| (y - p) * (y - p)).sum();
    Ok(1.0 - ss_res / ss_tot)
}

/// Deterministic seeded k-fold split: shuffles indices once and cuts
/// them into k near-equal contiguous folds.
pub fn kfold_indices(n: usize, k: usize, seed: u64) -> Result<Vec<Vec<usize>>, EstimatorError> {
    if k == 0 || n < k {
        return Err(EstimatorError::TooFewRows { rows: n, need: k.max(1) });
    }
    let mut indices: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    indices.shuffle(&mut rng);
    let mut folds = Vec::with_capacity(k);
    let base = n / k;
    let extra = n % k;
    let mut start = 0;
    for i in 0..k {
        let size = base + usize::from(i < extra);
        folds.push(indices[start..start + size].to_vec());
        start += size;
    }
    Ok(folds)
}
