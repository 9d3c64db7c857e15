//! Performance estimation: Bayesian Ridge regression with predictive
//! uncertainty, feature assembly, correlation, and cross-validation.

mod special;
mod stats;

pub use special::{inc_beta, ln_gamma};
pub use stats::{kfold_indices, pearson, r_squared, standardize, Standardizer};

use crate::metrics;
use crate::model::{CompressionTrajectory, FeatureRow};
use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EstimatorError {
    #[error("need at least {need} rows, got {rows}")]
    TooFewRows { rows: usize, need: usize },
    #[error("expected {expected} values, got {got}")]
    ArityMismatch { expected: usize, got: usize },
    #[error("zero variance in input")]
    ZeroVariance,
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("precision matrix is numerically singular (condition estimate {cond:.3e})")]
    Singular { cond: f64 },
    #[error("compressed_ppl unavailable: {0}")]
    MissingPpl(String),
}

/// Gamma hyperpriors and iteration controls for evidence maximization.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct RidgeOptions {
    pub a1: f64,
    pub a2: f64,
    pub l1: f64,
    pub l2: f64,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for RidgeOptions {
    fn default() -> Self {
        Self { a1: 1e-6, a2: 1e-6, l1: 1e-6, l2: 1e-6, max_iter: 300, tol: 1e-4 }
    }
}

/// Fitted Bayesian Ridge posterior.
///
/// Weights live in standardized feature space; `standardizer` carries the
/// scaling so predictions accept original-unit inputs. `alpha` is the
/// weight precision, `beta` the noise precision, and `precision_matrix`
/// is `A = alpha*I + beta*Z'Z` on the standardized design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RidgeModel {
    pub weight_mean: Vec<f64>,
    pub intercept: f64,
    pub precision_matrix: Vec<Vec<f64>>,
    pub alpha: f64,
    pub beta: f64,
    pub standardizer: Standardizer,
    pub converged: bool,
    pub n_iter: usize,
}

impl RidgeModel {
    pub fn n_features(&self) -> usize {
        self.weight_mean.len()
    }

    /// Weights mapped back to original feature units.
    pub fn weights_original_units(&self) -> Vec<f64> {
        self.weight_mean
            .iter()
            .zip(&self.standardizer.stds)
            .map(|(&w, &s)| w / s)
            .collect()
    }

    /// Intercept in original feature units.
    pub fn intercept_original_units(&self) -> f64 {
        let shift: f64 = self
            .weight_mean
            .iter()
            .zip(&self.standardizer.means)
            .zip(&self.standardizer.stds)
            .map(|((&w, &m), &s)| w * m / s)
            .sum();
        self.intercept - shift
    }

    fn precision(&self) -> DMatrix<f64> {
        let p = self.n_features();
        DMatrix::from_fn(p, p, |i, j| self.precision_matrix[i][j])
    }
}

/// Fits a Bayesian Ridge model by evidence maximization.
///
/// Features are standardized and the target centered internally. Each
/// iteration solves for the weight posterior mean at the current
/// `(alpha, beta)`, then re-estimates both precisions from the effective
/// degrees of freedom until both relative changes fall below `tol`.
pub fn fit_bayes_ridge(
    rows: &[Vec<f64>],
    y: &[f64],
    opts: RidgeOptions,
) -> Result<RidgeModel, EstimatorError> {
    if rows.len() != y.len() {
        return Err(EstimatorError::ArityMismatch { expected: rows.len(), got: y.len() });
    }
    for (i, row) in rows.iter().enumerate() {
        if row.iter().any(|v| !v.is_finite()) {
            return Err(EstimatorError::NonFinite(format!("feature row {i}")));
        }
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(EstimatorError::NonFinite("target".to_string()));
    }

    let (z_rows, scaler) = standardize(rows)?;
    let n = z_rows.len();
    let p = scaler.n_features();
    let z = DMatrix::from_fn(n, p, |i, j| z_rows[i][j]);

    let y_mean = y.iter().sum::<f64>() / n as f64;
    let yc = DVector::from_iterator(n, y.iter().map(|&v| v - y_mean));

    let ztz = z.transpose() * &z;
    let zty = z.transpose() * &yc;
    // Eigenvalues of Z'Z are fixed; beta just rescales them each iteration.
    let eigvals: Vec<f64> = ztz
        .clone()
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .map(|&v| v.max(0.0))
        .collect();

    let y_var = yc.iter().map(|v| v * v).sum::<f64>() / n as f64;
    let mut alpha = 1.0;
    let mut beta = 1.0 / y_var.max(1e-12);

    let mut converged = false;
    let mut n_iter = 0;
    let mut weights = DVector::zeros(p);
    for iter in 1..=opts.max_iter {
        n_iter = iter;
        weights = solve_weights(&ztz, &zty, alpha, beta, &eigvals)?;

        let gamma: f64 = eigvals.iter().map(|&s| beta * s / (alpha + beta * s)).sum();
        let m_sq = weights.dot(&weights);
        let residual = &yc - &z * &weights;
        let rss = residual.dot(&residual);

        let alpha_new = (gamma + 2.0 * opts.a1) / (m_sq + 2.0 * opts.a2);
        let beta_new = (n as f64 - gamma + 2.0 * opts.l1) / (rss + 2.0 * opts.l2);

        let alpha_rel = (alpha_new - alpha).abs() / alpha;
        let beta_rel = (beta_new - beta).abs() / beta;
        alpha = alpha_new;
        beta = beta_new;
        if alpha_rel < opts.tol && beta_rel < opts.tol {
            converged = true;
            break;
        }
    }
    // Final weight posterior at the converged precisions.
    weights = solve_weights(&ztz, &zty, alpha, beta, &eigvals)?;

    let a = DMatrix::identity(p, p) * alpha + &ztz * beta;
    let precision_matrix = (0..p)
        .map(|i| (0..p).map(|j| a[(i, j)]).collect())
        .collect();

    Ok(RidgeModel {
        weight_mean: weights.iter().copied().collect(),
        intercept: y_mean,
        precision_matrix,
        alpha,
        beta,
        standardizer: scaler,
        converged,
        n_iter,
    })
}

fn solve_weights(
    ztz: &DMatrix<f64>,
    zty: &DVector<f64>,
    alpha: f64,
    beta: f64,
    eigvals: &[f64],
) -> Result<DVector<f64>, EstimatorError> {
    let p = ztz.nrows();
    let a = DMatrix::identity(p, p) * alpha + ztz * beta;
    let chol = Cholesky::new(a).ok_or_else(|| {
        let lo = eigvals.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = eigvals.iter().cloned().fold(0.0, f64::max);
        EstimatorError::Singular { cond: (alpha + beta * hi) / (alpha + beta * lo) }
    })?;
    Ok(chol.solve(zty) * beta)
}

/// Posterior predictive mean and variance at one original-unit point.
///
/// The variance is `1/beta + z'A⁻¹z`, never below the noise floor `1/beta`.
pub fn predict(model: &RidgeModel, x: &[f64]) -> Result<(f64, f64), EstimatorError> {
    let z = model.standardizer.transform_row(x)?;
    let zv = DVector::from_vec(z);
    let w = DVector::from_vec(model.weight_mean.clone());
    let mean = w.dot(&zv) + model.intercept;
    let chol = Cholesky::new(model.precision()).ok_or(EstimatorError::Singular { cond: f64::NAN })?;
    let quad = zv.dot(&chol.solve(&zv)).max(0.0);
    Ok((mean, 1.0 / model.beta + quad))
}

/// Two single-target models plus the residual cross-correlation used to
/// assemble a joint normal prediction over [accuracy, length].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JointFit {
    pub acc_model: RidgeModel,
    pub len_model: RidgeModel,
    /// Pearson correlation of in-sample residuals of the two models.
    pub rho: f64,
    /// Set when residuals were too degenerate to estimate rho.
    pub rho_degenerate: bool,
}

/// Joint prediction: means, standard deviations, and cross-correlation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointPrediction {
    pub mu: [f64; 2],
    pub sigma: [f64; 2],
    pub rho: f64,
}

/// Fits independent accuracy and length models and estimates their
/// residual correlation.
pub fn fit_joint(
    rows: &[Vec<f64>],
    targets: &[[f64; 2]],
    opts: RidgeOptions,
) -> Result<JointFit, EstimatorError> {
    if rows.len() != targets.len() {
        return Err(EstimatorError::ArityMismatch { expected: rows.len(), got: targets.len() });
    }
    let y_acc: Vec<f64> = targets.iter().map(|t| t[0]).collect();
    let y_len: Vec<f64> = targets.iter().map(|t| t[1]).collect();
    let acc_model = fit_bayes_ridge(rows, &y_acc, opts)?;
    let len_model = fit_bayes_ridge(rows, &y_len, opts)?;

    let mut res_acc = Vec::with_capacity(rows.len());
    let mut res_len = Vec::with_capacity(rows.len());
    for (row, t) in rows.iter().zip(targets) {
        res_acc.push(t[0] - predict(&acc_model, row)?.0);
        res_len.push(t[1] - predict(&len_model, row)?.0);
    }
    let (rho, rho_degenerate) = match pearson(&res_acc, &res_len) {
        Ok((r, _)) => (r, false),
        Err(_) => (0.0, true),
    };
    Ok(JointFit { acc_model, len_model, rho, rho_degenerate })
}

/// Predicts both targets with uncertainty at one feature point.
pub fn predict_joint(fit: &JointFit, x: &[f64]) -> Result<JointPrediction, EstimatorError> {
    let (mu_acc, var_acc) = predict(&fit.acc_model, x)?;
    let (mu_len, var_len) = predict(&fit.len_model, x)?;
    Ok(JointPrediction {
        mu: [mu_acc, mu_len],
        sigma: [var_acc.sqrt(), var_len.sqrt()],
        rho: fit.rho,
    })
}

/// Seeded k-fold cross-validation; returns per-fold and mean R².
///
/// Standardization happens inside each fold's fit, so held-out rows
/// never influence the scaling.
pub fn kfold_cv(
    rows: &[Vec<f64>],
    y: &[f64],
    k: usize,
    seed: u64,
    opts: RidgeOptions,
) -> Result<(Vec<f64>, f64), EstimatorError> {
    if rows.len() != y.len() {
        return Err(EstimatorError::ArityMismatch { expected: rows.len(), got: y.len() });
    }
    let folds = kfold_indices(rows.len(), k, seed)?;
    let mut scores = Vec::with_capacity(k);
    for fold in &folds {
        let test: Vec<usize> = fold.clone();
        let in_test = |i: &usize| test.contains(i);
        let train: Vec<usize> = (0..rows.len()).filter(|i| !in_test(i)).collect();
        let train_x: Vec<Vec<f64>> = train.iter().map(|&i| rows[i].clone()).collect();
        let train_y: Vec<f64> = train.iter().map(|&i| y[i]).collect();
        let model = fit_bayes_ridge(&train_x, &train_y, opts)?;
        let mut preds = Vec::with_capacity(test.len());
        let mut truth = Vec::with_capacity(test.len());
        for &i in &test {
            preds.push(predict(&model, &rows[i])?.0);
            truth.push(y[i]);
        }
        scores.push(r_squared(&truth, &preds)?);
    }
    let mean = scores.iter().sum::<f64>() / scores.len() as f64;
    Ok((scores, mean))
}

/// Assembles the training-set feature row from compression trajectories
/// plus the two accuracy statistics.
///
/// The compression rate and perplexity are means over each trajectory's
/// selected round; original length is the mean round-0 token count.
pub fn extract_features(
    trajectories: &[CompressionTrajectory],
    original_acc: f64,
    compressor_acc: f64,
) -> Result<FeatureRow, EstimatorError> {
    if trajectories.is_empty() {
        return Err(EstimatorError::TooFewRows { rows: 0, need: 1 });
    }
    let n = trajectories.len() as f64;
    let mut rate_sum = 0.0;
    let mut ppl_sum = 0.0;
    let mut len_sum = 0.0;
    for t in trajectories {
        rate_sum += t.rates[t.selected_index];
        len_sum += t.rounds[0].token_count as f64;
        let selected = t.selected();
        let logprobs = selected.logprobs.as_deref().ok_or_else(|| {
            EstimatorError::MissingPpl(format!("no logprobs on selected round of {}", t.question.id))
        })?;
        ppl_sum += metrics::perplexity(logprobs)
            .map_err(|e| EstimatorError::MissingPpl(format!("{}: {e}", t.question.id)))?;
    }
    let row = FeatureRow {
        compression_rate: rate_sum / n,
        compressed_ppl: ppl_sum / n,
        original_len: len_sum / n,
        original_acc,
        compressor_acc,
        target_acc: None,
        target_len: None,
    };
    row.validate().map_err(EstimatorError::NonFinite)?;
    Ok(row)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Ordinary least squares by normal equations on an augmented design;
    /// the independent oracle for noiseless-data checks.
    fn ols_predictions(rows: &[Vec<f64>], y: &[f64], at: &[Vec<f64>]) -> Vec<f64> {
        let n = rows.len();
        let p = rows[0].len();
        let design = DMatrix::from_fn(n, p + 1, |i, j| if j == 0 { 1.0 } else { rows[i][j - 1] });
        let yv = DVector::from_column_slice(y);
        let coef = (design.transpose() * &design)
            .svd(true, true)
            .solve(&(design.transpose() * yv), 1e-12)
            .expect("oracle solve");
        at.iter()
            .map(|x| coef[0] + x.iter().enumerate().map(|(j, &v)| coef[j + 1] * v).sum::<f64>())
            .collect()
    }

    #[test]
    fn noiseless_line_recovers_slope_and_intercept() {
        let rows: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64]).collect();
        let y: Vec<f64> = rows.iter().map(|r| 2.0 * r[0] + 3.0).collect();
        let model = fit_bayes_ridge(&rows, &y, RidgeOptions::default()).unwrap();
        assert!((model.weights_original_units()[0] - 2.0).abs() < 1e-3);
        assert!((model.intercept_original_units() - 3.0).abs() < 1e-6);
        for r in &rows {
            let (mean, var) = predict(&model, r).unwrap();
            assert!((mean - (2.0 * r[0] + 3.0)).abs() < 1e-3);
            assert!(var >= 1.0 / model.beta);
        }
    }

    #[test]
    fn constant_target_predicts_mean_with_tiny_weights() {
        let rows: Vec<Vec<f64>> = (0..8).map(|i| vec![i as f64, (i * i) as f64]).collect();
        let y = vec![5.0; 8];
        let model = fit_bayes_ridge(&rows, &y, RidgeOptions::default()).unwrap();
        for w in model.weights_original_units() {
            assert!(w.abs() < 1e-6, "weight {w} not ~0");
        }
        let (mean, _) = predict(&model, &[3.0, 9.0]).unwrap();
        assert_relative_eq!(mean, 5.0, epsilon = 1e-9);
    }

    #[test]
    fn two_points_interpolate_with_positive_variance() {
        let rows = vec![vec![0.0], vec![1.0]];
        let y = vec![1.0, 3.0];
        let model = fit_bayes_ridge(&rows, &y, RidgeOptions::default()).unwrap();
        let (m0, v0) = predict(&model, &[0.0]).unwrap();
        let (m1, v1) = predict(&model, &[1.0]).unwrap();
        assert!((m0 - 1.0).abs() < 1e-3 && (m1 - 3.0).abs() < 1e-3);
        assert!(v0 > 0.0 && v1 > 0.0);
    }

    #[test]
    fn matches_least_squares_on_random_noiseless_systems() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for case in 0..100 {
            let p = rng.gen_range(1..=5);
            let n = rng.gen_range(p + 3..=50.max(p + 3));
            let w: Vec<f64> = (0..p).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let b: f64 = rng.gen_range(-2.0..2.0);
            let rows: Vec<Vec<f64>> = (0..n)
                .map(|_| (0..p).map(|_| rng.gen_range(-2.0..2.0)).collect())
                .collect();
            let y: Vec<f64> = rows
                .iter()
                .map(|r| b + r.iter().zip(&w).map(|(x, w)| x * w).sum::<f64>())
                .collect();
            let model = fit_bayes_ridge(&rows, &y, RidgeOptions::default()).unwrap();
            let oracle = ols_predictions(&rows, &y, &rows);
            for (i, (r, o)) in rows.iter().zip(&oracle).enumerate() {
                let (mean, var) = predict(&model, r).unwrap();
                assert!(
                    (mean - o).abs() < 1e-3,
                    "case {case}: prediction {mean} vs oracle {o} at row {i}"
                );
                assert!(var >= 1.0 / model.beta);
            }
        }
    }

    #[test]
    fn predictions_invariant_under_feature_rescaling() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let rows: Vec<Vec<f64>> = (0..20)
            .map(|_| vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)])
            .collect();
        let y: Vec<f64> = rows
            .iter()
            .map(|r| 1.5 * r[0] - 0.5 * r[1] + 0.3 + 0.01 * (r[0] * r[1]))
            .collect();
        let scaled: Vec<Vec<f64>> =
            rows.iter().map(|r| vec![250.0 * r[0] + 7.0, 0.004 * r[1] - 1.0]).collect();
        let m1 = fit_bayes_ridge(&rows, &y, RidgeOptions::default()).unwrap();
        let m2 = fit_bayes_ridge(&scaled, &y, RidgeOptions::default()).unwrap();
        for (r, s) in rows.iter().zip(&scaled) {
            let (p1, _) = predict(&m1, r).unwrap();
            let (p2, _) = predict(&m2, s).unwrap();
            assert!((p1 - p2).abs() < 1e-9, "{p1} vs {p2}");
        }
    }

    #[test]
    fn variance_grows_away_from_training_mean() {
        let rows: Vec<Vec<f64>> = (0..12).map(|i| vec![i as f64 / 3.0, -(i as f64)]).collect();
        let y: Vec<f64> = rows.iter().map(|r| r[0] + 0.2 * r[1]).collect();
        let model = fit_bayes_ridge(&rows, &y, RidgeOptions::default()).unwrap();
        let center: Vec<f64> = model.standardizer.means.clone();
        let (_, v0) = predict(&model, &center).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..20 {
            let dir: Vec<f64> = (0..2).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let near: Vec<f64> =
                center.iter().zip(&dir).map(|(&c, &d)| c + 0.5 * d).collect();
            let far: Vec<f64> = center.iter().zip(&dir).map(|(&c, &d)| c + 5.0 * d).collect();
            let (_, vn) = predict(&model, &near).unwrap();
            let (_, vf) = predict(&model, &far).unwrap();
            assert!(v0 <= vn + 1e-12 && vn <= vf + 1e-12, "{v0} {vn} {vf}");
        }
    }

    #[test]
    fn predict_rejects_wrong_arity() {
        let rows = vec![vec![1.0, 2.0], vec![2.0, 1.0], vec![0.0, 0.0]];
        let y = vec![1.0, 2.0, 0.0];
        let model = fit_bayes_ridge(&rows, &y, RidgeOptions::default()).unwrap();
        assert!(predict(&model, &[1.0]).is_err());
    }

    #[test]
    fn model_json_round_trips_at_full_precision() {
        let rows: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64, (i as f64).sin()]).collect();
        let y: Vec<f64> = rows.iter().map(|r| r[0] * 0.7 - r[1]).collect();
        let model = fit_bayes_ridge(&rows, &y, RidgeOptions::default()).unwrap();
        let json = serde_json::to_string(&model).unwrap();
        let back: RidgeModel = serde_json::from_str(&json).unwrap();
        assert_eq!(model, back);
    }

    #[test]
    fn duplicate_targets_give_unit_residual_correlation() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let rows: Vec<Vec<f64>> = (0..15)
            .map(|_| vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)])
            .collect();
        let targets: Vec<[f64; 2]> = rows
            .iter()
            .map(|r| {
                let v = r[0] + 0.3 * r[1] + 0.05 * (r[0] * r[0]);
                [v, v]
            })
            .collect();
        let fit = fit_joint(&rows, &targets, RidgeOptions::default()).unwrap();
        assert!(!fit.rho_degenerate);
        assert!((fit.rho - 1.0).abs() < 1e-9, "rho = {}", fit.rho);
    }

    #[test]
    fn perfectly_explained_targets_flag_degenerate_rho() {
        // With one feature and targets exactly linear in it, residuals
        // collapse towards zero; accept either a degenerate flag or a
        // finite rho from the vanishing remainder.
        let rows: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64]).collect();
        let targets: Vec<[f64; 2]> = rows.iter().map(|r| [2.0 * r[0], -r[0]]).collect();
        let fit = fit_joint(&rows, &targets, RidgeOptions::default()).unwrap();
        assert!(fit.rho.abs() <= 1.0);
        let pred = predict_joint(&fit, &rows[3]).unwrap();
        assert!((pred.mu[0] - 6.0).abs() < 1e-3);
        assert!((pred.mu[1] + 3.0).abs() < 1e-3);
        assert!(pred.sigma[0] > 0.0 && pred.sigma[1] > 0.0);
    }

    #[test]
    fn kfold_cv_perfect_model_scores_one() {
        let rows: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64, (i % 5) as f64]).collect();
        let y: Vec<f64> = rows.iter().map(|r| 3.0 * r[0] - r[1] + 1.0).collect();
        let (scores, mean) = kfold_cv(&rows, &y, 5, 11, RidgeOptions::default()).unwrap();
        assert_eq!(scores.len(), 5);
        assert!((mean - 1.0).abs() < 1e-6, "mean R² = {mean}");
    }

    #[test]
    fn extract_features_requires_ppl() {
        use crate::model::{Question, ReasoningTrace, StoppedReason};
        let t = CompressionTrajectory {
            question: Question::new("q", "text"),
            rounds: vec![ReasoningTrace::new("a b c", 3)],
            rates: vec![1.0],
            selected_index: 0,
            stopped_reason: StoppedReason::MaxRounds,
        };
        let err = extract_features(&[t], 0.8, 0.9).unwrap_err();
        assert!(err.to_string().contains("compressed_ppl unavailable"));
    }
}
