//! Ranking a zoo of feature sets for one dataset, including low-data runs.

use std::path::{Path, PathBuf};

use log::info;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::features::{read_feature_file, split_by_class, FeatureSet};
use crate::ntk::sample_class_rows;
use crate::scoring::{analyze_model, ModelAnalysis, TimeSource, TransferReport};

pub const SCHEMA_VERSION: u32 = 1;
pub const FEATURE_EXTENSION: &str = "leadfeat";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankEntry {
    pub model_id: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZooReport {
    pub schema_version: u32,
    pub config: PipelineConfig,
    pub time_scale: f64,
    pub time_source: TimeSource,
    /// Best first.
    pub ranking: Vec<RankEntry>,
    pub models: Vec<TransferReport>,
}

impl ZooReport {
    pub fn without_timings(&self) -> Self {
        ZooReport {
            models: self.models.iter().map(TransferReport::without_timings).collect(),
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepeatReport {
    pub repeat: usize,
    pub seed: u64,
    pub time_scale: f64,
    pub ranking: Vec<RankEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LowDataReport {
    pub schema_version: u32,
    pub config: PipelineConfig,
    pub samples_per_class: usize,
    pub repeats: usize,
    pub time_source: TimeSource,
    /// Scores averaged over repeats, best first.
    pub ranking: Vec<RankEntry>,
    pub per_repeat: Vec<RepeatReport>,
}

/// Sorts best first; equal scores fall back to `model_id`.
pub fn sort_ranking(entries: &mut [RankEntry]) {
    entries.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then_with(|| a.model_id.cmp(&b.model_id))
    });
}

/// Paths of every `.leadfeat` file in `dir`, sorted by file name.
pub fn zoo_files(dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_file() && path.extension().is_some_and(|e| e == FEATURE_EXTENSION) {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

pub fn load_zoo(dir: impl AsRef<Path>) -> Result<Vec<FeatureSet>> {
    zoo_files(dir)?.iter().map(read_feature_file).collect()
}

fn check_zoo(sets: &[FeatureSet]) -> Result<()> {
    if sets.len() < 2 {
        return Err(Error::FewerThanTwo(sets.len()));
    }
    let mut ids: Vec<&str> = sets.iter().map(FeatureSet::model_id).collect();
    ids.sort_unstable();
    if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
        return Err(Error::MismatchedIds(format!("duplicate model id {}", w[0])));
    }
    Ok(())
}

fn finalize_all(
    analyses: &[ModelAnalysis],
    config: &PipelineConfig,
) -> Result<(f64, Vec<TransferReport>)> {
    let pooled: Vec<f64> = analyses
        .iter()
        .flat_map(|a| a.mean_eigs.iter().copied())
        .collect();
    let t = config.evolution.resolve(&pooled)?;
    let source = config.evolution.time.into();
    let reports = analyses
        .iter()
        .map(|a| a.finalize(t, source))
        .collect::<Result<_>>()?;
    Ok((t, reports))
}

fn ranking_of(reports: &[TransferReport]) -> Vec<RankEntry> {
    let mut ranking: Vec<RankEntry> = reports
        .iter()
        .map(|r| RankEntry {
            model_id: r.model_id.clone(),
            score: r.score,
        })
        .collect();
    sort_ranking(&mut ranking);
    ranking
}

/// Scores every model with one shared time scale and ranks them.
pub fn rank_zoo(sets: &[FeatureSet], config: &PipelineConfig) -> Result<ZooReport> {
    config.validate()?;
    check_zoo(sets)?;
    let analyses: Vec<ModelAnalysis> = sets
        .par_iter()
        .map(|fs| analyze_model(fs, config))
        .collect::<Result<_>>()?;
    let (time_scale, models) = finalize_all(&analyses, config)?;
    info!("ranked {} models with time scale {time_scale:e}", models.len());
    Ok(ZooReport {
        schema_version: SCHEMA_VERSION,
        config: config.clone(),
        time_scale,
        time_source: config.evolution.time.into(),
        ranking: ranking_of(&models),
        models,
    })
}

/// Rows kept for one low-data repeat: `min(n, |class|)` per class.
pub fn subsample_rows(fs: &FeatureSet, per_class: usize, seed: u64) -> Vec<usize> {
    let map = split_by_class(fs);
    let mut rows: Vec<usize> = map
        .classes
        .iter()
        .enumerate()
        .flat_map(|(k, rows)| sample_class_rows(rows, per_class, seed, k))
        .collect();
    rows.sort_unstable();
    rows
}

/// Seed of repeat `r`, derived from the base low-data seed.
pub fn repeat_seed(base: u64, repeat: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(base);
    rng.set_stream(repeat as u64);
    rng.next_u64()
}

/// Repeats the full pipeline on per-class subsamples and averages the scores.
pub fn run_lowdata(sets: &[FeatureSet], config: &PipelineConfig) -> Result<LowDataReport> {
    config.validate()?;
    check_zoo(sets)?;
    let low = &config.lowdata;
    let mut per_repeat = Vec::with_capacity(low.repeats);
    let mut totals = vec![0.0; sets.len()];
    for r in 0..low.repeats {
        let seed = repeat_seed(low.seed, r);
        let analyses: Vec<ModelAnalysis> = sets
            .par_iter()
            .map(|fs| {
                let sub = fs.subset(&subsample_rows(fs, low.samples_per_class, seed))?;
                analyze_model(&sub, config)
            })
            .collect::<Result<_>>()?;
        let (time_scale, reports) = finalize_all(&analyses, config)?;
        for (total, rep) in totals.iter_mut().zip(&reports) {
            *total += rep.score;
        }
        per_repeat.push(RepeatReport {
            repeat: r,
            seed,
            time_scale,
            ranking: ranking_of(&reports),
        });
    }
    let mut ranking: Vec<RankEntry> = sets
        .iter()
        .zip(&totals)
        .map(|(fs, total)| RankEntry {
            model_id: fs.model_id().to_string(),
            score: total / low.repeats as f64,
        })
        .collect();
    sort_ranking(&mut ranking);
    Ok(LowDataReport {
        schema_version: SCHEMA_VERSION,
        config: config.clone(),
        samples_per_class: low.samples_per_class,
        repeats: low.repeats,
        time_source: config.evolution.time.into(),
        ranking,
        per_repeat,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::SyntheticSpec;

    fn small_config() -> PipelineConfig {
        let mut cfg = PipelineConfig::default();
        cfg.head.h1 = 32;
        cfg.head.h2 = 32;
        cfg.ntk.samples_per_class = 8;
        cfg
    }

    #[test]
    fn ranking_sorts_with_id_tiebreak() {
        let mut r = vec![
            RankEntry { model_id: "b".into(), score: 1.0 },
            RankEntry { model_id: "c".into(), score: 2.0 },
            RankEntry { model_id: "a".into(), score: 1.0 },
        ];
        sort_ranking(&mut r);
        let ids: Vec<&str> = r.iter().map(|e| e.model_id.as_str()).collect();
        assert_eq!(ids, ["c", "a", "b"]);
    }

    #[test]
    fn single_model_rejected() {
        let fs = SyntheticSpec::new(20, 3, 2, 0).generate("a", 1.0, 0).unwrap();
        assert!(matches!(rank_zoo(&[fs], &small_config()), Err(Error::FewerThanTwo(1))));
    }

    #[test]
    fn shared_time_scale_and_identical_copies_tie() {
        let spec = SyntheticSpec::new(40, 4, 2, 1);
        let a = spec.generate("a", 1.0, 0).unwrap();
        let b = a.clone().with_model_id("b").unwrap();
        let c = spec.generate("c", 4.0, 1).unwrap();
        let report = rank_zoo(&[b, c, a], &small_config()).unwrap();
        assert!(report.models.iter().all(|m| m.time_scale == report.time_scale));
        let sa = report.models.iter().find(|m| m.model_id == "a").unwrap().score;
        let sb = report.models.iter().find(|m| m.model_id == "b").unwrap().score;
        assert_eq!(sa, sb);
        let pos = |id: &str| report.ranking.iter().position(|e| e.model_id == id).unwrap();
        assert_eq!(pos("a") + 1, pos("b"));
    }

    #[test]
    fn subsampling_is_seeded_per_class() {
        let fs = SyntheticSpec::new(30, 2, 3, 0).generate("a", 1.0, 0).unwrap();
        let rows = subsample_rows(&fs, 2, 5);
        assert_eq!(rows.len(), 6);
        assert_eq!(rows, subsample_rows(&fs, 2, 5));
        assert_eq!(subsample_rows(&fs, 100, 5), (0..30).collect::<Vec<_>>());
        assert_ne!(repeat_seed(0, 0), repeat_seed(0, 1));
    }

    #[test]
    fn saturated_lowdata_matches_full_rank() {
        let spec = SyntheticSpec::new(24, 3, 2, 2);
        let zoo = spec.zoo(&[2.0, 0.5]).unwrap();
        let mut cfg = small_config();
        cfg.lowdata.samples_per_class = 1000;
        cfg.lowdata.repeats = 3;
        let low = run_lowdata(&zoo, &cfg).unwrap();
        let full = rank_zoo(&zoo, &cfg).unwrap();
        assert!(low.per_repeat.iter().all(|r| r.ranking == full.ranking));
        for (l, f) in low.ranking.iter().zip(&full.ranking) {
            assert_eq!(l.model_id, f.model_id);
            assert!((l.score - f.score).abs() <= 1e-12 * f.score.abs());
        }
        assert_eq!(low, run_lowdata(&zoo, &cfg).unwrap());
    }
}
