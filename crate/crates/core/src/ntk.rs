//! Per-class NTK Gram matrices over the head parameters.

use ndarray::{Array2, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{split_by_class, FeatureSet};
use crate::head::{Activation, MlpHead};
use crate::linalg::{self, frobenius, trace};
use crate::logits::one_hot;
use crate::oracle::simulate_gd;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HeadConfig {
    pub h1: usize,
    pub h2: usize,
    pub seed: u64,
    pub activation: Activation,
}

impl Default for HeadConfig {
    fn default() -> Self {
        HeadConfig {
            h1: 1024,
            h2: 2048,
            seed: 0,
            activation: Activation::Relu,
        }
    }
}

impl HeadConfig {
    pub fn build(&self, input_dim: usize, num_classes: usize) -> Result<MlpHead> {
        MlpHead::new(
            &[input_dim, self.h1, self.h2, num_classes],
            self.seed,
            self.activation,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NtkConfig {
    pub samples_per_class: usize,
    pub seed: u64,
}

impl Default for NtkConfig {
    fn default() -> Self {
        NtkConfig {
            samples_per_class: 64,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassNtk {
    pub class_id: usize,
    pub sample_indices: Vec<usize>,
    pub gram: Array2<f64>,
    /// `trace(gram) / S`, equal to the mean eigenvalue.
    pub mean_eigenvalue: f64,
}

impl ClassNtk {
    pub fn samples(&self) -> usize {
        self.sample_indices.len()
    }

    pub fn spectrum(&self) -> Result<Vec<f64>> {
        linalg::spectrum(self.gram.view())
    }

    /// Mean eigenvalue through the full decomposition (diagnostic path).
    pub fn mean_eigenvalue_from_spectrum(&self) -> Result<f64> {
        let eig = self.spectrum()?;
        Ok(eig.iter().sum::<f64>() / eig.len() as f64)
    }
}

/// Draws `min(S, |class|)` rows without replacement. The RNG stream is the
/// class id, so draws for different classes don't depend on each other.
pub fn sample_class_rows(rows: &[usize], s: usize, seed: u64, class_id: usize) -> Vec<usize> {
    if rows.len() <= s {
        return rows.to_vec();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(class_id as u64);
    let mut picked: Vec<usize> = rand::seq::index::sample(&mut rng, rows.len(), s)
        .into_iter()
        .map(|i| rows[i])
        .collect();
    picked.sort_unstable();
    picked
}

pub fn class_ntk(
    head: &MlpHead,
    fs: &FeatureSet,
    class_id: usize,
    s: usize,
    seed: u64,
) -> Result<ClassNtk> {
    let map = split_by_class(fs);
    let rows = map
        .classes
        .get(class_id)
        .ok_or(Error::EmptyClass(class_id))?;
    class_ntk_for_rows(head, fs, class_id, rows, s, seed)
}

pub fn class_ntk_for_rows(
    head: &MlpHead,
    fs: &FeatureSet,
    class_id: usize,
    rows: &[usize],
    s: usize,
    seed: u64,
) -> Result<ClassNtk> {
    if rows.is_empty() {
        return Err(Error::EmptyClass(class_id));
    }
    if s == 0 {
        return Err(Error::Config("ntk.samples_per_class must be positive".into()));
    }
    let sample_indices = sample_class_rows(rows, s, seed, class_id);
    let x = fs.rows_f64(&sample_indices);
    let gram = head.sum_output_gram(x.view())?;
    let mean_eigenvalue = trace(gram.view()) / sample_indices.len() as f64;
    Ok(ClassNtk {
        class_id,
        sample_indices,
        gram,
        mean_eigenvalue,
    })
}

/// One `ClassNtk` per class, computed concurrently over a shared head.
pub fn class_ntks(head: &MlpHead, fs: &FeatureSet, s: usize, seed: u64) -> Result<Vec<ClassNtk>> {
    let map = split_by_class(fs);
    map.classes
        .par_iter()
        .enumerate()
        .map(|(k, rows)| class_ntk_for_rows(head, fs, k, rows, s, seed))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DriftPoint {
    pub width: usize,
    pub drift: f64,
    /// Absolute learning rate actually used.
    pub step_size: f64,
}

/// Relative kernel movement `‖Φ_t − Φ_0‖_F / ‖Φ_0‖_F` after training a
/// `[D, w, w, K]` head alone with full-batch GD on MSE to one-hot labels.
///
/// `lr` is relative: the step is `lr / tr(Θ_0)`, where `Θ_0` is the full
/// output NTK at initialization. That keeps function-space dynamics
/// comparable across widths and guarantees stability for `lr < 2`.
pub fn ntk_drift(
    widths: &[usize],
    train_steps: usize,
    lr: f64,
    fs: &FeatureSet,
    seed: u64,
    activation: Activation,
) -> Result<Vec<DriftPoint>> {
    let x = fs.features_f64();
    let y = one_hot(fs.labels(), fs.num_classes());
    widths
        .iter()
        .map(|&w| {
            let mut head =
                MlpHead::new(&[fs.dim(), w, w, fs.num_classes()], seed, activation)?;
            let (drift, step_size) = kernel_drift(&mut head, x.view(), y.view(), lr, train_steps)?;
            Ok(DriftPoint {
                width: w,
                drift,
                step_size,
            })
        })
        .collect()
}

fn kernel_drift(
    head: &mut MlpHead,
    x: ArrayView2<f64>,
    y: ArrayView2<f64>,
    lr: f64,
    steps: usize,
) -> Result<(f64, f64)> {
    let phi0 = head.sum_output_gram(x)?;
    let step_size = lr / head.output_ntk_trace(x)?;
    if steps == 0 || lr == 0.0 {
        return Ok((0.0, step_size));
    }
    simulate_gd(head, x, y, step_size, steps)?;
    let phi_t = head.sum_output_gram(x)?;
    Ok((frobenius((&phi_t - &phi0).view()) / frobenius(phi0.view()), step_size))
}
