//! Transferability score of a single model: negative cross-entropy of the
//! evolved logits.

use std::time::Instant;

use log::{debug, warn};
use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;
use crate::error::Result;
use crate::evolution::{evolve, EvolutionCoefficients, TimeScale};
use crate::features::FeatureSet;
use crate::logits::LogitMatrix;
use crate::ntk::class_ntks;
use crate::svm::compute_log_init;

pub const PROB_FLOOR: f64 = 1e-12;

/// `−(1/N) Σ_n ln(clamp(pred[n][y_n], 1e-12, 1))`.
pub fn cross_entropy(pred: &LogitMatrix, labels: &[u32]) -> f64 {
    let total: f64 = labels
        .iter()
        .enumerate()
        .map(|(n, &y)| -pred.row(n)[y as usize].clamp(PROB_FLOOR, 1.0).ln())
        .sum();
    total / labels.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TimeSource {
    Auto,
    Fixed,
}

impl From<TimeScale> for TimeSource {
    fn from(t: TimeScale) -> Self {
        match t {
            TimeScale::Auto => TimeSource::Auto,
            TimeScale::Fixed(_) => TimeSource::Fixed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassSummary {
    pub class: usize,
    pub mean_eig: f64,
    pub coeff: f64,
    pub s_actual: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub log_init: f64,
    pub ntk: f64,
    pub evolve: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferReport {
    pub model_id: String,
    pub score: f64,
    pub cross_entropy: f64,
    /// Cross-entropy of the unevolved initial logits.
    pub init_cross_entropy: f64,
    pub time_scale: f64,
    pub time_source: TimeSource,
    pub ntk_seed: u64,
    pub head_seed: u64,
    pub per_class: Vec<ClassSummary>,
    pub warnings: Vec<String>,
    pub timings_ms: Timings,
}

impl TransferReport {
    /// Copy with timings zeroed, for reproducibility comparisons.
    pub fn without_timings(&self) -> Self {
        TransferReport {
            timings_ms: Timings::default(),
            ..self.clone()
        }
    }
}

/// Everything about one model that doesn't depend on the time scale.
#[derive(Debug, Clone)]
pub struct ModelAnalysis {
    pub model_id: String,
    pub labels: Vec<u32>,
    pub log_init: LogitMatrix,
    pub mean_eigs: Vec<f64>,
    pub s_actual: Vec<usize>,
    pub warnings: Vec<String>,
    pub ntk_seed: u64,
    pub head_seed: u64,
    timings: Timings,
}

/// Initial logits and per-class mean eigenvalues for one feature set.
pub fn analyze_model(fs: &FeatureSet, config: &PipelineConfig) -> Result<ModelAnalysis> {
    let start = Instant::now();
    let normalized;
    let fs = if config.features.l2_normalize {
        normalized = fs.l2_normalized();
        &normalized
    } else {
        fs
    };
    let mut warnings = Vec::new();

    let t0 = Instant::now();
    let (log_init, svm) = compute_log_init(fs, &config.svm)?;
    let log_init_ms = ms(t0);
    let unconverged = svm.unconverged_classes();
    if !unconverged.is_empty() {
        warnings.push(format!(
            "svm did not converge for classes {unconverged:?} within {} passes",
            config.svm.max_iter
        ));
    }

    let t0 = Instant::now();
    let head = config.head.build(fs.dim(), fs.num_classes())?;
    let ntks = class_ntks(&head, fs, config.ntk.samples_per_class, config.ntk.seed)?;
    let ntk_ms = ms(t0);
    let mut mean_eigs = Vec::with_capacity(ntks.len());
    let mut s_actual = Vec::with_capacity(ntks.len());
    let mut undersized = Vec::new();
    for ntk in &ntks {
        if ntk.samples() < config.ntk.samples_per_class {
            undersized.push(ntk.class_id);
        }
        if ntk.mean_eigenvalue == 0.0 {
            warnings.push(format!("class {} has zero mean eigenvalue", ntk.class_id));
        }
        mean_eigs.push(ntk.mean_eigenvalue);
        s_actual.push(ntk.samples());
    }
    if !undersized.is_empty() {
        warnings.push(format!(
            "classes {undersized:?} have fewer than {} samples; NTK uses all available",
            config.ntk.samples_per_class
        ));
    }
    for w in &warnings {
        warn!("{}: {w}", fs.model_id());
    }
    debug!(
        "{}: log_init {log_init_ms:.1} ms, ntk {ntk_ms:.1} ms",
        fs.model_id()
    );

    Ok(ModelAnalysis {
        model_id: fs.model_id().to_string(),
        labels: fs.labels().to_vec(),
        log_init,
        mean_eigs,
        s_actual,
        warnings,
        ntk_seed: config.ntk.seed,
        head_seed: config.head.seed,
        timings: Timings {
            log_init: log_init_ms,
            ntk: ntk_ms,
            evolve: 0.0,
            total: ms(start),
        },
    })
}

impl ModelAnalysis {
    /// Cross-entropy of the initial logits alone.
    pub fn init_cross_entropy(&self) -> f64 {
        cross_entropy(&self.log_init, &self.labels)
    }

    /// Evolves with the given time scale and produces the report.
    pub fn finalize(&self, time_scale: f64, source: TimeSource) -> Result<TransferReport> {
        let t0 = Instant::now();
        let coeffs = EvolutionCoefficients::new(&self.mean_eigs, time_scale)?;
        let evolved = evolve(&self.log_init, &self.labels, &coeffs)?;
        let ce = cross_entropy(&evolved.values, &self.labels);
        let evolve_ms = ms(t0);
        let per_class = self
            .mean_eigs
            .iter()
            .zip(coeffs.coeffs())
            .zip(&self.s_actual)
            .enumerate()
            .map(|(k, ((&mean_eig, &coeff), &s_actual))| ClassSummary {
                class: k,
                mean_eig,
                coeff,
                s_actual,
            })
            .collect();
        Ok(TransferReport {
            model_id: self.model_id.clone(),
            score: -ce,
            cross_entropy: ce,
            init_cross_entropy: self.init_cross_entropy(),
            time_scale,
            time_source: source,
            ntk_seed: self.ntk_seed,
            head_seed: self.head_seed,
            per_class,
            warnings: self.warnings.clone(),
            timings_ms: Timings {
                evolve: evolve_ms,
                total: self.timings.total + evolve_ms,
                ..self.timings.clone()
            },
        })
    }
}

/// Scores one model on its own; in auto mode the time scale is calibrated
/// from this model's eigenvalues only.
pub fn score_model(fs: &FeatureSet, config: &PipelineConfig) -> Result<TransferReport> {
    let analysis = analyze_model(fs, config)?;
    let t = config.evolution.resolve(&analysis.mean_eigs)?;
    analysis.finalize(t, config.evolution.time.into())
}

fn ms(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::SyntheticSpec;
    use approx::assert_relative_eq;
    use ndarray::array;

    fn small_config() -> PipelineConfig {
        let mut cfg = PipelineConfig::default();
        cfg.head.h1 = 32;
        cfg.head.h2 = 48;
        cfg.ntk.samples_per_class = 16;
        cfg
    }

    #[test]
    fn cross_entropy_examples() {
        let onehot = LogitMatrix::new(array![[1.0, 0.0], [0.0, 1.0]]).unwrap();
        assert_eq!(cross_entropy(&onehot, &[0, 1]), 0.0);
        let uniform = LogitMatrix::new(ndarray::Array2::from_elem((3, 4), 0.25)).unwrap();
        assert_relative_eq!(cross_entropy(&uniform, &[0, 3, 2]), 4f64.ln(), epsilon = 1e-15);
        let mixed = LogitMatrix::new(array![[0.8, 0.2], [0.6, 0.4]]).unwrap();
        assert_relative_eq!(
            cross_entropy(&mixed, &[0, 1]),
            -(0.8f64.ln() + 0.4f64.ln()) / 2.0,
            epsilon = 1e-15
        );
        assert_relative_eq!(cross_entropy(&mixed, &[0, 1]), 0.5697, epsilon = 1e-4);
        let zero = LogitMatrix::new(array![[1.0, 0.0]]).unwrap();
        assert_relative_eq!(cross_entropy(&zero, &[1]), -(1e-12f64).ln());
    }

    #[test]
    fn zero_time_gives_initial_score() {
        let fs = SyntheticSpec::new(60, 6, 3, 1).generate("m", 1.0, 0).unwrap();
        let mut cfg = small_config();
        cfg.evolution.time = TimeScale::Fixed(0.0);
        let report = score_model(&fs, &cfg).unwrap();
        assert_eq!(report.cross_entropy, report.init_cross_entropy);
        assert_eq!(report.score, -report.init_cross_entropy);
        assert!(report.per_class.iter().all(|c| c.coeff == 1.0));
        assert_eq!(report.time_source, TimeSource::Fixed);
    }

    #[test]
    fn report_is_reproducible() {
        let fs = SyntheticSpec::new(60, 6, 3, 2).generate("m", 1.0, 0).unwrap();
        let cfg = small_config();
        let a = score_model(&fs, &cfg).unwrap();
        let b = score_model(&fs, &cfg).unwrap();
        assert_eq!(a.without_timings(), b.without_timings());
        assert_eq!(a.per_class.len(), 3);
        assert!(a.per_class.iter().all(|c| c.s_actual == 16));
        assert_eq!(a.time_source, TimeSource::Auto);
        assert!(a.score <= 0.0);
    }

    #[test]
    fn undersized_classes_are_reported() {
        let fs = SyntheticSpec::new(12, 4, 3, 2).generate("m", 1.0, 0).unwrap();
        let report = score_model(&fs, &small_config()).unwrap();
        assert!(report.per_class.iter().all(|c| c.s_actual == 4));
        assert!(report.warnings.iter().any(|w| w.contains("fewer than 16")));
    }

    #[test]
    fn longer_time_never_lowers_the_score() {
        let fs = SyntheticSpec::new(60, 6, 3, 3).generate("m", 0.5, 0).unwrap();
        let analysis = analyze_model(&fs, &small_config()).unwrap();
        let mut last = f64::NEG_INFINITY;
        for t in [0.0, 1e-4, 1e-3, 1e-2, 1e-1, 1.0] {
            let score = analysis.finalize(t, TimeSource::Fixed).unwrap().score;
            assert!(score >= last);
            last = score;
        }
    }

    #[test]
    fn higher_snr_scores_higher() {
        let cfg = small_config();
        for seed in 0..10 {
            let spec = SyntheticSpec::new(90, 8, 3, seed);
            let hi = analyze_model(&spec.generate("hi", 4.0, 0).unwrap(), &cfg).unwrap();
            let lo = analyze_model(&spec.generate("lo", 0.25, 1).unwrap(), &cfg).unwrap();
            let pooled: Vec<f64> = hi.mean_eigs.iter().chain(&lo.mean_eigs).copied().collect();
            let t = cfg.evolution.resolve(&pooled).unwrap();
            let a = hi.finalize(t, TimeSource::Auto).unwrap().score;
            let b = lo.finalize(t, TimeSource::Auto).unwrap().score;
            assert!(a > b, "seed {seed}: {a} <= {b}");
        }
    }
}
