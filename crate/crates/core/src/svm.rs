//! One-vs-rest linear SVM producing the initial class probabilities.
//!
//! Each binary problem is the L2-regularized L1-hinge SVM solved in the
//! dual by coordinate descent. The bias is handled by appending a constant
//! 1 feature (so it is regularized like the weights).

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureSet;
use crate::logits::LogitMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Normalization {
    Softmax,
    Minmax,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SvmConfig {
    pub c: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub shuffle: bool,
    pub seed: u64,
    pub normalization: Normalization,
}

impl Default for SvmConfig {
    fn default() -> Self {
        SvmConfig {
            c: 1.0,
            tol: 1e-4,
            max_iter: 1000,
            shuffle: false,
            seed: 0,
            normalization: Normalization::Softmax,
        }
    }
}

impl SvmConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.c > 0.0 && self.c.is_finite()) {
            return Err(Error::Config(format!("svm.c must be positive, got {}", self.c)));
        }
        if !(self.tol > 0.0 && self.tol.is_finite()) {
            return Err(Error::Config(format!("svm.tol must be positive, got {}", self.tol)));
        }
        if self.max_iter == 0 {
            return Err(Error::Config("svm.max_iter must be positive".into()));
        }
        Ok(())
    }
}

/// Outcome of one binary subproblem.
#[derive(Debug, Clone)]
pub struct BinaryFit {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub passes: usize,
    pub converged: bool,
    /// Dual objective `½‖w‖² − Σα` after each full pass.
    pub dual_objective: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct OvrSvmModel {
    /// `K x D`.
    pub weights: Array2<f64>,
    pub biases: Array1<f64>,
    pub config: SvmConfig,
    pub fits: Vec<BinaryFitSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BinaryFitSummary {
    pub passes: usize,
    pub converged: bool,
    pub dual_objective: Vec<f64>,
}

impl OvrSvmModel {
    pub fn num_classes(&self) -> usize {
        self.weights.nrows()
    }

    pub fn dim(&self) -> usize {
        self.weights.ncols()
    }

    /// Classes whose solver stopped at `max_iter` above tolerance.
    pub fn unconverged_classes(&self) -> Vec<usize> {
        self.fits
            .iter()
            .enumerate()
            .filter(|(_, f)| !f.converged)
            .map(|(k, _)| k)
            .collect()
    }

    pub fn decision_scores(&self, fs: &FeatureSet) -> Result<Array2<f64>> {
        self.decision_scores_matrix(fs.features_f64().view())
    }

    /// `scores[n][k] = w_k · x_n + b_k`.
    pub fn decision_scores_matrix(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.dim() {
            return Err(Error::DimensionMismatch(format!(
                "model expects D = {}, features have D = {}",
                self.dim(),
                x.ncols()
            )));
        }
        let mut scores = x.dot(&self.weights.t());
        scores += &self.biases.view().insert_axis(Axis(0));
        Ok(scores)
    }
}

pub fn fit_ovr_svm(fs: &FeatureSet, config: &SvmConfig) -> Result<OvrSvmModel> {
    fit_ovr_svm_matrix(fs.features_f64().view(), fs.labels(), fs.num_classes(), config)
}

pub fn fit_ovr_svm_matrix(
    x: ArrayView2<f64>,
    labels: &[u32],
    num_classes: usize,
    config: &SvmConfig,
) -> Result<OvrSvmModel> {
    config.validate()?;
    if x.nrows() != labels.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} rows but {} labels",
            x.nrows(),
            labels.len()
        )));
    }
    let x = x.as_standard_layout();
    let norms: Vec<f64> = x
        .rows()
        .into_iter()
        .map(|r| r.dot(&r) + 1.0)
        .collect();

    let fits: Vec<BinaryFit> = (0..num_classes)
        .into_par_iter()
        .map(|k| {
            let y: Vec<f64> = labels
                .iter()
                .map(|&l| if l as usize == k { 1.0 } else { -1.0 })
                .collect();
            solve_binary(x.view(), &y, &norms, config, k as u64)
        })
        .collect();

    let d = x.ncols();
    let mut weights = Array2::zeros((num_classes, d));
    let mut biases = Array1::zeros(num_classes);
    for (k, fit) in fits.iter().enumerate() {
        weights.row_mut(k).assign(&Array1::from(fit.weights.clone()));
        biases[k] = fit.bias;
        if !fit.converged {
            log::debug!(
                "svm class {k}: no convergence after {} passes (tol {})",
                fit.passes,
                config.tol
            );
        }
    }
    Ok(OvrSvmModel {
        weights,
        biases,
        config: config.clone(),
        fits: fits
            .into_iter()
            .map(|f| BinaryFitSummary {
                passes: f.passes,
                converged: f.converged,
                dual_objective: f.dual_objective,
            })
            .collect(),
    })
}

/// Dual coordinate descent for `min_w ½‖w‖² + C Σ max(0, 1 − y_i w·x̃_i)`.
///
/// `sq_norms[i]` is `‖x̃_i‖²` including the appended bias feature.
pub fn solve_binary(
    x: ArrayView2<f64>,
    y: &[f64],
    sq_norms: &[f64],
    config: &SvmConfig,
    stream: u64,
) -> BinaryFit {
    let (n, d) = x.dim();
    let c = config.c;
    let mut alpha = vec![0.0; n];
    let mut w = vec![0.0; d];
    let mut b = 0.0;
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = config.shuffle.then(|| {
        let mut r = ChaCha8Rng::seed_from_u64(config.seed);
        r.set_stream(stream);
        r
    });

    let mut dual_objective = Vec::new();
    let mut passes = 0;
    let mut converged = false;
    let xs = x.as_slice().expect("standard layout");

    while passes < config.max_iter {
        passes += 1;
        if let Some(rng) = rng.as_mut() {
            order.shuffle(rng);
        }
        let mut max_violation = 0.0f64;
        for &i in &order {
            let xi = &xs[i * d..(i + 1) * d];
            let yi = y[i];
            let g = yi * (dot(&w, xi) + b) - 1.0;
            let pg = if alpha[i] == 0.0 {
                g.min(0.0)
            } else if alpha[i] == c {
                g.max(0.0)
            } else {
                g
            };
            max_violation = max_violation.max(pg.abs());
            if pg.abs() > 1e-12 {
                let old = alpha[i];
                alpha[i] = (old - g / sq_norms[i]).clamp(0.0, c);
                let delta = (alpha[i] - old) * yi;
                if delta != 0.0 {
                    axpy(delta, xi, &mut w);
                    b += delta;
                }
            }
        }
        let obj = 0.5 * (dot(&w, &w) + b * b) - alpha.iter().sum::<f64>();
        dual_objective.push(obj);
        if max_violation <= config.tol {
            converged = true;
            break;
        }
    }

    BinaryFit {
        weights: w,
        bias: b,
        passes,
        converged,
        dual_objective,
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    // four accumulators so the loop vectorizes
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let i = c * 4;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in chunks * 4..a.len() {
        s += a[i] * b[i];
    }
    s
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Row-wise normalization of decision scores into probabilities.
pub fn normalize_scores(scores: ArrayView2<f64>, method: Normalization) -> LogitMatrix {
    let mut out = scores.to_owned();
    for mut row in out.rows_mut() {
        match method {
            Normalization::Softmax => {
                let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
                row.mapv_inplace(|v| (v - max).exp());
                let sum = row.sum();
                row.mapv_inplace(|v| v / sum);
            }
            Normalization::Minmax => {
                let min = row.fold(f64::INFINITY, |m, &v| m.min(v));
                row.mapv_inplace(|v| v - min);
                let sum = row.sum();
                if sum > 0.0 {
                    row.mapv_inplace(|v| v / sum);
                } else {
                    let k = row.len() as f64;
                    row.fill(1.0 / k);
                }
            }
        }
    }
    LogitMatrix::from_trusted(out)
}

pub fn compute_log_init(fs: &FeatureSet, config: &SvmConfig) -> Result<(LogitMatrix, OvrSvmModel)> {
    let x = fs.features_f64();
    let model = fit_ovr_svm_matrix(x.view(), fs.labels(), fs.num_classes(), config)?;
    let scores = model.decision_scores_matrix(x.view())?;
    Ok((normalize_scores(scores.view(), config.normalization), model))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_distr::{Distribution, Normal};

    fn blobs(per_class: usize, seed: u64) -> FeatureSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, 0.5).unwrap();
        let centers = [[-3.0, 0.0], [3.0, 0.0], [0.0, 4.0]];
        let mut feats = Vec::new();
        let mut labels = Vec::new();
        for (k, c) in centers.iter().enumerate() {
            for _ in 0..per_class {
                feats.push((c[0] + noise.sample(&mut rng)) as f32);
                feats.push((c[1] + noise.sample(&mut rng)) as f32);
                labels.push(k as u32);
            }
        }
        FeatureSet::new("blobs", 2, feats, labels, 3).unwrap()
    }

    #[test]
    fn two_point_problem() {
        // Augmented points (-1, 1) and (1, 1) are orthogonal, so the dual is
        // separable: alpha = (1/2, 1/2), w = 1, b = 0, scores exactly +-1.
        let fs = FeatureSet::new("pts", 1, vec![-1.0, 1.0], vec![0, 1], 2).unwrap();
        let model = fit_ovr_svm(&fs, &SvmConfig::default()).unwrap();
        assert!(model.weights[[1, 0]] > 0.0);
        let scores = model.decision_scores(&fs).unwrap();
        assert!(scores[[1, 1]] > 0.0 && scores[[0, 1]] < 0.0);
        assert!(scores[[0, 0]] > 0.0 && scores[[1, 0]] < 0.0);
        assert_relative_eq!(model.weights[[1, 0]], 1.0, epsilon = 1e-4);
        assert_relative_eq!(scores[[1, 1]], 1.0, epsilon = 1e-4);
        assert_relative_eq!(model.biases[1], 0.0, epsilon = 1e-4);
    }

    #[test]
    fn separable_blobs_are_fit_perfectly() {
        let fs = blobs(50, 1);
        let model = fit_ovr_svm(&fs, &SvmConfig::default()).unwrap();
        let scores = model.decision_scores(&fs).unwrap();
        for (n, row) in scores.rows().into_iter().enumerate() {
            let pred = row
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .unwrap()
                .0;
            assert_eq!(pred as u32, fs.labels()[n]);
        }
        assert!(model.unconverged_classes().is_empty());
    }

    #[test]
    fn dual_objective_never_increases() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 120;
        let feats: Vec<f32> = (0..n * 5).map(|_| rng.random_range(-1.0f32..1.0)).collect();
        let labels: Vec<u32> = (0..n).map(|i| (i % 3) as u32).collect();
        let fs = FeatureSet::new("noise", 5, feats, labels, 3).unwrap();
        let cfg = SvmConfig {
            max_iter: 50,
            ..SvmConfig::default()
        };
        let model = fit_ovr_svm(&fs, &cfg).unwrap();
        for fit in &model.fits {
            for w in fit.dual_objective.windows(2) {
                assert!(w[1] <= w[0] + 1e-10 * w[0].abs().max(1.0));
            }
        }
    }

    #[test]
    fn identical_features_give_uniform_rows() {
        let fs = FeatureSet::new(
            "same",
            2,
            [1.0f32, 2.0].repeat(9),
            vec![0, 1, 2, 0, 1, 2, 0, 1, 2],
            3,
        )
        .unwrap();
        let (log_init, model) = compute_log_init(&fs, &SvmConfig::default()).unwrap();
        let scores = model.decision_scores(&fs).unwrap();
        for row in scores.rows() {
            assert_relative_eq!(row[0], row[1], epsilon = 1e-3);
            assert_relative_eq!(row[1], row[2], epsilon = 1e-3);
        }
        for v in log_init.values() {
            assert_relative_eq!(*v, 1.0 / 3.0, epsilon = 1e-3);
        }
    }

    #[test]
    fn decision_score_examples() {
        let model = OvrSvmModel {
            weights: array![[0.0, 0.0], [1.0, 0.0]],
            biases: array![0.0, 0.0],
            config: SvmConfig::default(),
            fits: vec![],
        };
        let s = model.decision_scores_matrix(array![[3.0, 5.0]].view()).unwrap();
        assert_eq!(s, array![[0.0, 3.0]]);
        assert!(matches!(
            model.decision_scores_matrix(array![[1.0, 2.0, 3.0]].view()),
            Err(Error::DimensionMismatch(_))
        ));

        let zero = OvrSvmModel {
            weights: Array2::zeros((3, 2)),
            biases: Array1::zeros(3),
            config: SvmConfig::default(),
            fits: vec![],
        };
        let s = zero.decision_scores_matrix(array![[1.0, -4.0], [2.0, 7.0]].view()).unwrap();
        assert!(s.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn softmax_examples() {
        let p = normalize_scores(array![[0.0, 0.0]].view(), Normalization::Softmax);
        assert_eq!(p.values(), array![[0.5, 0.5]]);
        let p = normalize_scores(array![[7.5, 7.5, 7.5]].view(), Normalization::Softmax);
        for v in p.values() {
            assert_relative_eq!(*v, 1.0 / 3.0, epsilon = 1e-15);
        }
        let p = normalize_scores(array![[3f64.ln(), 0.0]].view(), Normalization::Softmax);
        assert_relative_eq!(p.values()[[0, 0]], 0.75, epsilon = 1e-15);
        assert_relative_eq!(p.values()[[0, 1]], 0.25, epsilon = 1e-15);
    }

    #[test]
    fn minmax_normalization() {
        let p = normalize_scores(array![[1.0, 3.0, 2.0], [4.0, 4.0, 4.0]].view(), Normalization::Minmax);
        assert_eq!(p.row(0).to_vec(), vec![0.0, 2.0 / 3.0, 1.0 / 3.0]);
        assert_eq!(p.row(1).to_vec(), vec![1.0 / 3.0; 3]);
    }

    #[test]
    fn separable_blobs_log_init_is_confident() {
        let fs = blobs(50, 2);
        let (log_init, _) = compute_log_init(&fs, &SvmConfig::default()).unwrap();
        let mean_true: f64 = fs
            .labels()
            .iter()
            .enumerate()
            .map(|(n, &l)| log_init.values()[[n, l as usize]])
            .sum::<f64>()
            / fs.len() as f64;
        // softmax of margin-scale scores caps confidence; the true class
        // still dominates every row
        for (n, &l) in fs.labels().iter().enumerate() {
            let row = log_init.row(n);
            let best = row.iter().cloned().fold(f64::MIN, f64::max);
            assert_eq!(row[l as usize], best);
        }
        assert!(mean_true > 0.5, "mean true-class probability {mean_true}");
    }

    #[test]
    fn row_permutation_permutes_output() {
        let fs = blobs(20, 4);
        let n = fs.len();
        let perm: Vec<usize> = (0..n).rev().collect();
        let permuted = fs.subset(&perm).unwrap();
        let cfg = SvmConfig {
            tol: 1e-8,
            max_iter: 20000,
            ..SvmConfig::default()
        };
        let (a, _) = compute_log_init(&fs, &cfg).unwrap();
        let (b, _) = compute_log_init(&permuted, &cfg).unwrap();
        for (i, &p) in perm.iter().enumerate() {
            for k in 0..3 {
                assert_relative_eq!(a.values()[[p, k]], b.values()[[i, k]], epsilon = 1e-5);
            }
        }
    }

    #[test]
    fn class_permutation_permutes_columns() {
        let fs = blobs(20, 5);
        let map = [2u32, 0, 1];
        let relabeled = FeatureSet::new(
            "blobs",
            2,
            fs.raw_features().to_vec(),
            fs.labels().iter().map(|&l| map[l as usize]).collect(),
            3,
        )
        .unwrap();
        let cfg = SvmConfig::default();
        let (a, _) = compute_log_init(&fs, &cfg).unwrap();
        let (b, _) = compute_log_init(&relabeled, &cfg).unwrap();
        for n in 0..fs.len() {
            for k in 0..3 {
                assert_relative_eq!(
                    a.values()[[n, k]],
                    b.values()[[n, map[k] as usize]],
                    epsilon = 1e-14
                );
            }
        }
    }

    #[test]
    fn shuffled_solver_is_seed_deterministic() {
        let fs = blobs(15, 6);
        let cfg = SvmConfig {
            shuffle: true,
            seed: 42,
            ..SvmConfig::default()
        };
        let a = fit_ovr_svm(&fs, &cfg).unwrap();
        let b = fit_ovr_svm(&fs, &cfg).unwrap();
        assert_eq!(a.weights, b.weights);
        assert_eq!(a.biases, b.biases);
    }
}
