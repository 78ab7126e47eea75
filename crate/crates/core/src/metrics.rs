//! Ranking quality against ground-truth fine-tuning accuracies.
//!
//! Ranks are 1-based with the best model first. Ties in score are broken by
//! `model_id` so every ranking is a total order.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Model id → fine-tuned accuracy (percent).
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    accuracies: BTreeMap<String, f64>,
}

impl GroundTruth {
    pub fn new(entries: impl IntoIterator<Item = (String, f64)>) -> Result<Self> {
        let mut accuracies = BTreeMap::new();
        for (id, acc) in entries {
            if !acc.is_finite() {
                return Err(Error::GroundTruth(format!("accuracy of {id} is {acc}")));
            }
            if accuracies.insert(id.clone(), acc).is_some() {
                return Err(Error::GroundTruth(format!("duplicate model id {id}")));
            }
        }
        if accuracies.is_empty() {
            return Err(Error::GroundTruth("no models".into()));
        }
        Ok(GroundTruth { accuracies })
    }

    /// Reads `model_id,accuracy` or long-form `model_id,dataset,accuracy`.
    /// Long form needs `dataset` unless the file holds a single dataset.
    pub fn from_csv(path: impl AsRef<Path>, dataset: Option<&str>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_reader(file, dataset)
    }

    pub fn from_reader(reader: impl std::io::Read, dataset: Option<&str>) -> Result<Self> {
        let bad = |e: csv::Error| Error::GroundTruth(e.to_string());
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let header: Vec<String> = rdr.headers().map_err(bad)?.iter().map(String::from).collect();
        let col = |name: &str| header.iter().position(|h| h == name);
        let (id_col, acc_col) = match (col("model_id"), col("accuracy")) {
            (Some(i), Some(a)) => (i, a),
            _ => {
                return Err(Error::GroundTruth(
                    "header must contain model_id and accuracy".into(),
                ))
            }
        };
        let ds_col = col("dataset");
        let mut rows = Vec::new();
        for record in rdr.records() {
            let record = record.map_err(bad)?;
            let field = |i: usize| record.get(i).unwrap_or("").to_string();
            let acc: f64 = field(acc_col)
                .parse()
                .map_err(|_| Error::GroundTruth(format!("bad accuracy `{}`", field(acc_col))))?;
            let ds = ds_col.map(field);
            rows.push((field(id_col), ds, acc));
        }
        let datasets: std::collections::BTreeSet<&str> =
            rows.iter().filter_map(|(_, d, _)| d.as_deref()).collect();
        let wanted = match (dataset, ds_col) {
            (Some(d), Some(_)) => {
                if !datasets.contains(d) {
                    return Err(Error::GroundTruth(format!(
                        "dataset {d} not found; available: {datasets:?}"
                    )));
                }
                Some(d.to_string())
            }
            (None, Some(_)) if datasets.len() > 1 => {
                return Err(Error::GroundTruth(format!(
                    "file holds several datasets, pick one of {datasets:?}"
                )))
            }
            _ => None,
        };
        GroundTruth::new(
            rows.into_iter()
                .filter(|(_, d, _)| wanted.is_none() || d.as_deref() == wanted.as_deref())
                .map(|(id, _, acc)| (id, acc)),
        )
    }

    pub fn get(&self, id: &str) -> Option<f64> {
        self.accuracies.get(id).copied()
    }

    pub fn len(&self) -> usize {
        self.accuracies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.accuracies.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, f64)> {
        self.accuracies.iter().map(|(k, v)| (k.as_str(), *v))
    }

    pub fn best(&self) -> f64 {
        self.accuracies.values().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Indices sorted best-first by score, ties broken by id.
pub fn rank_order(scores: &[f64], ids: &[&str]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then_with(|| ids[a].cmp(ids[b])));
    order
}

fn check_pair(gt: &[f64], pred: &[f64]) -> Result<()> {
    if gt.len() != pred.len() {
        return Err(Error::MismatchedIds(format!(
            "{} ground-truth scores vs {} predictions",
            gt.len(),
            pred.len()
        )));
    }
    if gt.len() < 2 {
        return Err(Error::FewerThanTwo(gt.len()));
    }
    Ok(())
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// 1-based ground-truth ranks (best = 1), ties broken by position.
fn gt_ranks(gt: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..gt.len()).collect();
    order.sort_by(|&a, &b| gt[b].total_cmp(&gt[a]).then(a.cmp(&b)));
    let mut ranks = vec![0.0; gt.len()];
    for (r, &i) in order.iter().enumerate() {
        ranks[i] = (r + 1) as f64;
    }
    ranks
}

/// Weighted Kendall τ with `w_ij = 1/(r_i + r_j)` on ground-truth ranks.
pub fn weighted_kendall(gt: &[f64], pred: &[f64]) -> Result<f64> {
    check_pair(gt, pred)?;
    let ranks = gt_ranks(gt);
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..gt.len() {
        for j in i + 1..gt.len() {
            let w = 1.0 / (ranks[i] + ranks[j]);
            num += w * sign(gt[i] - gt[j]) * sign(pred[i] - pred[j]);
            den += w;
        }
    }
    Ok(num / den)
}

/// Kendall τ-a.
pub fn kendall(gt: &[f64], pred: &[f64]) -> Result<f64> {
    check_pair(gt, pred)?;
    let m = gt.len();
    let mut s = 0.0;
    for i in 0..m {
        for j in i + 1..m {
            s += sign(gt[i] - gt[j]) * sign(pred[i] - pred[j]);
        }
    }
    Ok(s / (m * (m - 1) / 2) as f64)
}

/// Pearson correlation with per-model weights.
pub fn weighted_pearson(gt: &[f64], pred: &[f64], weights: &[f64]) -> Result<f64> {
    check_pair(gt, pred)?;
    if weights.len() != gt.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} weights for {} models",
            weights.len(),
            gt.len()
        )));
    }
    let wsum: f64 = weights.iter().sum();
    let mean = |v: &[f64]| v.iter().zip(weights).map(|(x, w)| x * w).sum::<f64>() / wsum;
    let (mg, mp) = (mean(gt), mean(pred));
    let (mut cov, mut vg, mut vp) = (0.0, 0.0, 0.0);
    for ((g, p), w) in gt.iter().zip(pred).zip(weights) {
        cov += w * (g - mg) * (p - mp);
        vg += w * (g - mg) * (g - mg);
        vp += w * (p - mp) * (p - mp);
    }
    if vg <= 0.0 {
        return Err(Error::ZeroVariance("ground truth"));
    }
    if vp <= 0.0 {
        return Err(Error::ZeroVariance("predictions"));
    }
    Ok((cov / (vg * vp).sqrt()).clamp(-1.0, 1.0))
}

/// Best ground-truth accuracy among the predicted top `k`, over the global best.
pub fn rel_k(gt: &[f64], pred: &[f64], ids: &[&str], k: usize) -> Result<f64> {
    check_pair(gt, pred)?;
    let m = gt.len();
    if k == 0 || k > m {
        return Err(Error::BadK { k, m });
    }
    let best = gt.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let top = rank_order(pred, ids)
        .into_iter()
        .take(k)
        .map(|i| gt[i])
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(top / best)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RwWeights {
    /// `1 / rank_gt`.
    #[default]
    InverseRank,
    Uniform,
}

impl RwWeights {
    pub fn weights(self, gt: &[f64]) -> Vec<f64> {
        match self {
            RwWeights::InverseRank => gt_ranks(gt).into_iter().map(|r| 1.0 / r).collect(),
            RwWeights::Uniform => vec![1.0; gt.len()],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Metric {
    TauW,
    Tau,
    Rw,
    Rel(usize),
}

impl Metric {
    pub fn defaults() -> Vec<Metric> {
        vec![Metric::TauW, Metric::Tau, Metric::Rw, Metric::Rel(1), Metric::Rel(3)]
    }

    /// Parses a comma-separated list such as `tauw,tau,rw,rel1,rel3`.
    pub fn parse_list(s: &str) -> Result<Vec<Metric>> {
        s.split(',')
            .map(str::trim)
            .filter(|p| !p.is_empty())
            .map(str::parse)
            .collect()
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tauw" => Ok(Metric::TauW),
            "tau" => Ok(Metric::Tau),
            "rw" => Ok(Metric::Rw),
            _ => s
                .strip_prefix("rel")
                .and_then(|k| k.parse().ok())
                .filter(|&k: &usize| k > 0)
                .map(Metric::Rel)
                .ok_or_else(|| Error::Config(format!("unknown metric `{s}`"))),
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Metric::TauW => f.write_str("tauw"),
            Metric::Tau => f.write_str("tau"),
            Metric::Rw => f.write_str("rw"),
            Metric::Rel(k) => write!(f, "rel{k}"),
        }
    }
}

impl Serialize for Metric {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Metric {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RankingEval {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tau_w: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r_w: Option<f64>,
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    pub rel_k: BTreeMap<usize, f64>,
}

/// Evaluates predicted scores against ground truth. The id sets must match.
pub fn evaluate(
    gt: &GroundTruth,
    pred: &[(String, f64)],
    metrics: &[Metric],
    rw: RwWeights,
) -> Result<RankingEval> {
    let mut seen = std::collections::BTreeSet::new();
    for (id, _) in pred {
        if !seen.insert(id.as_str()) {
            return Err(Error::MismatchedIds(format!("duplicate prediction for {id}")));
        }
    }
    let missing: Vec<&str> = gt.iter().map(|(id, _)| id).filter(|id| !seen.contains(id)).collect();
    let extra: Vec<&str> = pred
        .iter()
        .map(|(id, _)| id.as_str())
        .filter(|id| gt.get(id).is_none())
        .collect();
    if !missing.is_empty() || !extra.is_empty() {
        return Err(Error::MismatchedIds(format!(
            "missing predictions for {missing:?}, no ground truth for {extra:?}"
        )));
    }
    let ids: Vec<&str> = pred.iter().map(|(id, _)| id.as_str()).collect();
    let p: Vec<f64> = pred.iter().map(|(_, s)| *s).collect();
    let g: Vec<f64> = ids.iter().map(|id| gt.get(id).unwrap()).collect();
    let mut out = RankingEval::default();
    for m in metrics {
        match *m {
            Metric::TauW => out.tau_w = Some(weighted_kendall(&g, &p)?),
            Metric::Tau => out.tau = Some(kendall(&g, &p)?),
            Metric::Rw => out.r_w = Some(weighted_pearson(&g, &p, &rw.weights(&g))?),
            Metric::Rel(k) => {
                out.rel_k.insert(k, rel_k(&g, &p, &ids, k)?);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn weighted_kendall_examples() {
        let gt = [5.0, 4.0, 3.0, 2.0, 1.0];
        assert_eq!(weighted_kendall(&gt, &gt).unwrap(), 1.0);
        assert_eq!(weighted_kendall(&[2.0, 1.0], &[1.0, 2.0]).unwrap(), -1.0);
        // gt ranks (1, 2, 3), predicted ranks (1, 3, 2)
        let tw = weighted_kendall(&[3.0, 2.0, 1.0], &[3.0, 1.0, 2.0]).unwrap();
        assert!((tw - 23.0 / 47.0).abs() <= 1e-12);
    }

    #[test]
    fn weights_follow_ranks_not_input_order() {
        let a = weighted_kendall(&[3.0, 2.0, 1.0], &[3.0, 1.0, 2.0]).unwrap();
        let b = weighted_kendall(&[1.0, 3.0, 2.0], &[2.0, 3.0, 1.0]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn ties_contribute_nothing() {
        let tw = weighted_kendall(&[3.0, 2.0, 1.0], &[1.0, 1.0, 1.0]).unwrap();
        assert_eq!(tw, 0.0);
    }

    #[test]
    fn kendall_examples() {
        let gt = [4.0, 3.0, 2.0, 1.0];
        assert_eq!(kendall(&gt, &gt).unwrap(), 1.0);
        assert_relative_eq!(kendall(&gt, &[4.0, 2.0, 3.0, 1.0]).unwrap(), 2.0 / 3.0);
        assert_eq!(kendall(&gt, &[1.0, 2.0, 3.0, 4.0]).unwrap(), -1.0);
    }

    #[test]
    fn size_errors() {
        assert!(matches!(kendall(&[1.0], &[1.0]), Err(Error::FewerThanTwo(1))));
        assert!(matches!(weighted_kendall(&[1.0, 2.0], &[1.0]), Err(Error::MismatchedIds(_))));
        assert!(matches!(
            rel_k(&[1.0, 2.0], &[1.0, 2.0], &["a", "b"], 3),
            Err(Error::BadK { k: 3, m: 2 })
        ));
    }

    #[test]
    fn pearson_examples() {
        let gt = [70.0, 80.0, 65.0, 90.0];
        let w = [1.0, 0.5, 0.25, 2.0];
        let up: Vec<f64> = gt.iter().map(|g| 3.0 * g - 7.0).collect();
        let down: Vec<f64> = gt.iter().map(|g| -0.5 * g).collect();
        assert_relative_eq!(weighted_pearson(&gt, &up, &w).unwrap(), 1.0, epsilon = 1e-12);
        assert_relative_eq!(weighted_pearson(&gt, &down, &w).unwrap(), -1.0, epsilon = 1e-12);
        assert!(matches!(
            weighted_pearson(&gt, &[1.0; 4], &w),
            Err(Error::ZeroVariance("predictions"))
        ));
    }

    #[test]
    fn uniform_weights_give_plain_pearson() {
        let x = [1.0, 2.0, 4.0, 7.0, 3.0];
        let y = [2.0, 1.5, 5.0, 6.0, 4.0];
        let n = x.len() as f64;
        let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
        let sxy: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
        let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
        let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
        let plain = sxy / (sxx * syy).sqrt();
        let w = RwWeights::Uniform.weights(&x);
        assert_relative_eq!(weighted_pearson(&x, &y, &w).unwrap(), plain, epsilon = 1e-14);
    }

    #[test]
    fn inverse_rank_weights() {
        assert_eq!(RwWeights::InverseRank.weights(&[1.0, 3.0, 2.0]), vec![1.0 / 3.0, 1.0, 0.5]);
    }

    #[test]
    fn rel_k_examples() {
        let gt = [87.13, 86.28, 80.0];
        let ids = ["densenet", "resnet", "other"];
        assert_eq!(rel_k(&gt, &[1.0, 2.0, 0.0], &ids, 3).unwrap(), 1.0);
        assert!((rel_k(&gt, &[1.0, 2.0, 0.0], &ids, 1).unwrap() - 86.28 / 87.13).abs() <= 1e-12);
        assert_eq!(rel_k(&gt, &[2.0, 1.0, 0.0], &ids, 1).unwrap(), 1.0);
    }

    #[test]
    fn metric_list_parsing() {
        assert_eq!(Metric::parse_list("tauw,tau,rw,rel1,rel3").unwrap(), Metric::defaults());
        assert!(Metric::parse_list("tauw,rel0").is_err());
        assert!(Metric::parse_list("spearman").is_err());
        assert_eq!(Metric::Rel(5).to_string(), "rel5");
    }

    #[test]
    fn ground_truth_csv_forms() {
        let short = "model_id,accuracy\na,80\nb,70.5\n";
        let gt = GroundTruth::from_reader(short.as_bytes(), None).unwrap();
        assert_eq!(gt.get("b"), Some(70.5));
        let long = "model_id,dataset,accuracy\na,x,1\nb,x,2\na,y,3\nb,y,4\n";
        let gt = GroundTruth::from_reader(long.as_bytes(), Some("y")).unwrap();
        assert_eq!(gt.len(), 2);
        assert_eq!(gt.get("a"), Some(3.0));
        assert!(GroundTruth::from_reader(long.as_bytes(), None).is_err());
        assert!(GroundTruth::from_reader(long.as_bytes(), Some("z")).is_err());
        let dup = "model_id,accuracy\na,1\na,2\n";
        assert!(GroundTruth::from_reader(dup.as_bytes(), None).is_err());
        let bad = "model_id,accuracy\na,high\n";
        assert_eq!(GroundTruth::from_reader(bad.as_bytes(), None).unwrap_err().kind(), "GroundTruth");
    }

    #[test]
    fn evaluate_checks_ids() {
        let gt = GroundTruth::new([("a".to_string(), 1.0), ("b".to_string(), 2.0)]).unwrap();
        let pred = vec![("a".to_string(), 0.1), ("c".to_string(), 0.2)];
        assert!(matches!(
            evaluate(&gt, &pred, &Metric::defaults(), RwWeights::InverseRank),
            Err(Error::MismatchedIds(_))
        ));
        let pred = vec![("a".to_string(), 0.1), ("b".to_string(), 0.2)];
        let ev = evaluate(&gt, &pred, &[Metric::TauW, Metric::Rel(1)], RwWeights::InverseRank).unwrap();
        assert_eq!(ev.tau_w, Some(1.0));
        assert_eq!(ev.tau, None);
        assert_eq!(ev.rel_k[&1], 1.0);
    }

    fn distinct_scores() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::btree_set(-1000i32..1000, 2..15)
            .prop_map(|s| s.into_iter().map(|v| v as f64 / 7.0).collect::<Vec<f64>>())
            .prop_shuffle()
    }

    proptest! {
        #[test]
        fn rank_metrics_ignore_monotone_transforms(gt in distinct_scores(), seed in any::<u64>()) {
            use rand::{seq::SliceRandom, SeedableRng};
            let mut pred = gt.clone();
            pred.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let warped: Vec<f64> = pred.iter().map(|p| (p / 50.0).exp() * 3.0 + 1.0).collect();
            let ids: Vec<String> = (0..gt.len()).map(|i| format!("m{i:02}")).collect();
            let ids: Vec<&str> = ids.iter().map(String::as_str).collect();
            prop_assert_eq!(weighted_kendall(&gt, &pred).unwrap(), weighted_kendall(&gt, &warped).unwrap());
            prop_assert_eq!(kendall(&gt, &pred).unwrap(), kendall(&gt, &warped).unwrap());
            for k in 1..=gt.len() {
                prop_assert_eq!(rel_k(&gt, &pred, &ids, k).unwrap(), rel_k(&gt, &warped, &ids, k).unwrap());
            }
        }

        #[test]
        fn tau_w_extremes(gt in distinct_scores()) {
            let neg: Vec<f64> = gt.iter().map(|g| -g).collect();
            prop_assert!((weighted_kendall(&gt, &gt).unwrap() - 1.0).abs() < 1e-12);
            prop_assert!((weighted_kendall(&gt, &neg).unwrap() + 1.0).abs() < 1e-12);
        }

        #[test]
        fn rel_k_grows_with_k(gt in distinct_scores(), seed in any::<u64>()) {
            use rand::{seq::SliceRandom, SeedableRng};
            let gt: Vec<f64> = gt.iter().map(|g| g.abs() + 1.0).collect();
            let mut pred = gt.clone();
            pred.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let ids: Vec<String> = (0..gt.len()).map(|i| format!("m{i:02}")).collect();
            let ids: Vec<&str> = ids.iter().map(String::as_str).collect();
            let mut last = 0.0;
            for k in 1..=gt.len() {
                let r = rel_k(&gt, &pred, &ids, k).unwrap();
                prop_assert!(r >= last && r <= 1.0);
                last = r;
            }
        }
    }
}
