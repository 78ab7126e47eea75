//! Brute-force checks of the training-dynamics theory behind the score:
//! discrete gradient descent against the closed-form MSE flow, finite
//! differences against backpropagation, and evolved logits against logits
//! of an actually trained head.

use std::fmt::Write as _;
use std::time::Instant;

use ndarray::{Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::evolution::{evolve, EvolutionCoefficients, TimeScale, DEFAULT_TARGET_COEFF};
use crate::features::FeatureSet;
use crate::head::{Activation, MlpHead};
use crate::linalg::{self, frobenius, jacobi_eigen, trace};
use crate::logits::one_hot;
use crate::ntk::{class_ntks, ntk_drift};
use crate::svm::{compute_log_init, SvmConfig};
use crate::synthetic::{std_normal, SyntheticSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Mse,
}

/// Logits of every step of a gradient-descent run, initial state included.
#[derive(Debug, Clone)]
pub struct SimTrace {
    pub logits: Vec<Array2<f64>>,
    /// `½ ‖F − Y‖²` per recorded state.
    pub losses: Vec<f64>,
    pub step_size: f64,
    pub steps: usize,
    pub loss: LossKind,
    /// Final loss above the initial loss.
    pub diverging: bool,
}

impl SimTrace {
    pub fn last(&self) -> &Array2<f64> {
        self.logits.last().expect("trace holds the initial state")
    }
}

/// Full-batch gradient descent of `head` on `½ ‖F(X) − Y‖²`, updating the
/// head in place.
pub fn simulate_gd(
    head: &mut MlpHead,
    x: ArrayView2<f64>,
    y: ArrayView2<f64>,
    lr: f64,
    steps: usize,
) -> Result<SimTrace> {
    if !(lr >= 0.0 && lr.is_finite()) {
        return Err(Error::Config(format!("learning rate must be non-negative, got {lr}")));
    }
    if y.nrows() != x.nrows() || y.ncols() != head.output_dim() {
        return Err(Error::DimensionMismatch(format!(
            "targets are {}x{}, expected {}x{}",
            y.nrows(),
            y.ncols(),
            x.nrows(),
            head.output_dim()
        )));
    }
    let mut logits = Vec::with_capacity(steps + 1);
    let mut losses = Vec::with_capacity(steps + 1);
    for step in 0..=steps {
        let cache = head.forward_cache(x)?;
        let f = cache.output().clone();
        if f.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence { step });
        }
        let residual = &f - &y;
        losses.push(0.5 * residual.iter().map(|r| r * r).sum::<f64>());
        logits.push(f);
        if step < steps {
            let grad = head.vjp_cached(&cache, residual.view());
            head.apply_step(&grad, lr);
        }
    }
    let diverging = losses.last() > losses.first();
    Ok(SimTrace {
        logits,
        losses,
        step_size: lr,
        steps,
        loss: LossKind::Mse,
        diverging,
    })
}

/// `Y + Q exp(−lr Λ t) Qᵀ (F_0 − Y)` for the kernel `Φ = Q Λ Qᵀ`.
pub fn closed_form_mse(
    log_init: ArrayView2<f64>,
    y: ArrayView2<f64>,
    phi: ArrayView2<f64>,
    lr: f64,
    t: f64,
) -> Result<Array2<f64>> {
    if log_init.dim() != y.dim() || phi.nrows() != y.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "initial logits {:?}, targets {:?}, kernel {:?}",
            log_init.dim(),
            y.dim(),
            phi.dim()
        )));
    }
    linalg::check_symmetric(phi)?;
    if lr * t == 0.0 {
        return Ok(log_init.to_owned());
    }
    let eig = jacobi_eigen(phi, true)?;
    let decay = eig.apply_function(|l| (-lr * l.max(0.0) * t).exp());
    let gap = &log_init - &y;
    Ok(&y + &decay.dot(&gap))
}

/// Linear model `F = X Wᵀ` with MSE targets, where the kernel `X Xᵀ` is
/// exactly constant during training.
#[derive(Debug, Clone)]
pub struct OdeProblem {
    pub x: Array2<f64>,
    pub y: Array2<f64>,
    pub w0: Array2<f64>,
}

impl OdeProblem {
    /// Random problem scaled so the largest kernel eigenvalue is 1.
    pub fn random(n: usize, d: usize, k: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = Array2::from_shape_simple_fn((n, d), || std_normal(&mut rng));
        let top = linalg::spectrum(x.dot(&x.t()).view())?[0];
        x /= top.sqrt();
        let labels: Vec<u32> = (0..n).map(|i| (i % k) as u32).collect();
        let w0 = Array2::from_shape_simple_fn((k, d), || {
            0.5 * std_normal(&mut rng)
        });
        Ok(OdeProblem {
            x,
            y: one_hot(&labels, k),
            w0,
        })
    }

    pub fn kernel(&self) -> Array2<f64> {
        self.x.dot(&self.x.t())
    }

    pub fn model(&self) -> MlpHead {
        MlpHead::linear(self.w0.clone())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OdePoint {
    pub lr: f64,
    pub steps: usize,
    /// Max over steps of `‖F_n − F(t = n)‖_F / ‖F(t = n)‖_F`.
    pub deviation: f64,
}

/// Discrete GD versus the closed form at matching times, for each learning
/// rate at a fixed horizon `lr · steps`.
pub fn verify_ode_limit(problem: &OdeProblem, lrs: &[f64], horizon: f64) -> Result<Vec<OdePoint>> {
    let phi = problem.kernel();
    let f0 = problem.model().forward_batch(problem.x.view())?;
    lrs.iter()
        .map(|&lr| {
            let steps = if horizon == 0.0 {
                0
            } else {
                (horizon / lr).round() as usize
            };
            let mut model = problem.model();
            let trace = simulate_gd(&mut model, problem.x.view(), problem.y.view(), lr, steps)?;
            let mut deviation = 0.0f64;
            for (n, f) in trace.logits.iter().enumerate() {
                let cf = closed_form_mse(f0.view(), problem.y.view(), phi.view(), lr, n as f64)?;
                let diff = frobenius((f - &cf).view());
                if diff > 0.0 {
                    deviation = deviation.max(diff / frobenius(cf.view()));
                }
            }
            Ok(OdePoint {
                lr,
                steps,
                deviation,
            })
        })
        .collect()
}

pub const FD_STEP: f64 = 1e-5;
/// Denominator floor of the finite-difference relative error.
pub const FD_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FdCheck {
    pub checked: usize,
    pub max_rel_error: f64,
    /// Coordinates redrawn because the perturbation flipped a ReLU.
    pub redrawn: usize,
}

fn activation_pattern(head: &MlpHead, x: ArrayView2<f64>) -> Result<Vec<bool>> {
    let cache = head.forward_cache(x)?;
    let hidden = head.num_layers() - 1;
    Ok(cache.pre[..hidden]
        .iter()
        .flat_map(|z| z.iter().map(|&v| v > 0.0).collect::<Vec<_>>())
        .collect())
}

/// Central differences of `Σ_k F_k(x)` against `grad_sum_outputs` on
/// `per_block` random coordinates of every weight and bias block.
pub fn finite_difference_check(
    head: &mut MlpHead,
    x: &[f64],
    per_block: usize,
    step: f64,
    seed: u64,
) -> Result<FdCheck> {
    let analytic = head.grad_sum_outputs(x)?;
    let batch = ArrayView2::from_shape((1, x.len()), x)
        .map_err(|e| Error::DimensionMismatch(e.to_string()))?;
    let relu = head.activation() == Activation::Relu;
    let base_pattern = if relu {
        activation_pattern(head, batch)?
    } else {
        Vec::new()
    };
    let mut blocks = Vec::new();
    let mut at = 0;
    for l in 0..head.num_layers() {
        let w = head.weights(l).len();
        blocks.push((at, w));
        at += w;
        if head.has_bias() {
            let b = head.biases(l).len();
            blocks.push((at, b));
            at += b;
        }
    }
    let sum_out = |h: &MlpHead| -> Result<f64> { Ok(h.forward(x)?.iter().sum()) };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = FdCheck {
        checked: 0,
        max_rel_error: 0.0,
        redrawn: 0,
    };
    for &(start, len) in &blocks {
        let mut done = 0;
        let mut tries = 0;
        while done < per_block && tries < 20 * per_block {
            tries += 1;
            let i = start + rng.random_range(0..len);
            let orig = *head.param_mut(i);
            *head.param_mut(i) = orig + step;
            let plus = sum_out(head)?;
            let plus_ok = !relu || activation_pattern(head, batch)? == base_pattern;
            *head.param_mut(i) = orig - step;
            let minus = sum_out(head)?;
            let minus_ok = !relu || activation_pattern(head, batch)? == base_pattern;
            *head.param_mut(i) = orig;
            if !(plus_ok && minus_ok) {
                out.redrawn += 1;
                continue;
            }
            let numeric = (plus - minus) / (2.0 * step);
            let a = analytic[i];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(FD_FLOOR);
            out.max_rel_error = out.max_rel_error.max(err);
            out.checked += 1;
            done += 1;
        }
    }
    Ok(out)
}

/// Setup of the trained-head comparison of evolved logits.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GapSettings {
    pub per_class: usize,
    pub dim: usize,
    pub num_classes: usize,
    pub snr: f64,
    pub width: usize,
    pub steps: usize,
    /// Step size as a fraction of `1 / tr(Θ_0)`.
    pub lr_fraction: f64,
    pub time: TimeScale,
}

impl Default for GapSettings {
    fn default() -> Self {
        GapSettings {
            per_class: 10,
            dim: 16,
            num_classes: 3,
            snr: 1.0,
            width: 128,
            steps: 2000,
            lr_fraction: 1.0,
            time: TimeScale::Auto,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GapReport {
    pub seed: u64,
    /// Mean row distance from evolved logits to the trained head's logits.
    pub lead_distance: f64,
    /// Mean row distance from the initial logits to the trained head's logits.
    pub init_distance: f64,
    pub time_scale: f64,
    pub step_size: f64,
}

impl GapReport {
    pub fn improved(&self) -> bool {
        self.lead_distance < self.init_distance
    }
}

fn mean_row_distance(a: ArrayView2<f64>, b: ArrayView2<f64>) -> f64 {
    let total: f64 = a
        .rows()
        .into_iter()
        .zip(b.rows())
        .map(|(r, s)| r.iter().zip(s).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt())
        .sum();
    total / a.nrows() as f64
}

/// Evolves the SVM logits of `fs` with `head`'s class kernels, trains a copy
/// of `head` by GD on MSE for `steps`, and compares both logit sets with the
/// trained outputs.
pub fn logit_gap(
    fs: &FeatureSet,
    head: &MlpHead,
    lr_fraction: f64,
    steps: usize,
    time: TimeScale,
    seed: u64,
) -> Result<GapReport> {
    let x = fs.features_f64();
    let y = one_hot(fs.labels(), fs.num_classes());
    let (log_init, _) = compute_log_init(fs, &SvmConfig::default())?;
    let ntks = class_ntks(head, fs, fs.len(), seed)?;
    let eigs: Vec<f64> = ntks.iter().map(|n| n.mean_eigenvalue).collect();
    let time_scale = match time {
        TimeScale::Fixed(t) => t,
        TimeScale::Auto => crate::evolution::calibrate_time_scale(&eigs, DEFAULT_TARGET_COEFF)?,
    };
    let evolved = evolve(
        &log_init,
        fs.labels(),
        &EvolutionCoefficients::new(&eigs, time_scale)?,
    )?;

    let mut trained = head.clone();
    let step_size = lr_fraction / trained.output_ntk_trace(x.view())?;
    let sim = simulate_gd(&mut trained, x.view(), y.view(), step_size, steps)?;
    let target = sim.last();
    Ok(GapReport {
        seed,
        lead_distance: mean_row_distance(evolved.values.values(), target.view()),
        init_distance: mean_row_distance(log_init.values(), target.view()),
        time_scale,
        step_size,
    })
}

/// One seeded trial of [`logit_gap`] on a synthetic set.
pub fn verify_logit_gap(settings: &GapSettings, seed: u64) -> Result<GapReport> {
    let spec = SyntheticSpec::new(
        settings.per_class * settings.num_classes,
        settings.dim,
        settings.num_classes,
        seed,
    );
    let fs = spec.generate("gap", settings.snr, 0)?;
    let head = MlpHead::new(
        &[settings.dim, settings.width, settings.width, settings.num_classes],
        seed,
        Activation::Relu,
    )?;
    logit_gap(&fs, &head, settings.lr_fraction, settings.steps, settings.time, seed)
}

/// Fixed 3-class toy set used for the kernel drift trend.
pub fn drift_toy_set(seed: u64) -> Result<FeatureSet> {
    SyntheticSpec::new(24, 8, 3, seed).generate("toy", 2.0, 0)
}

pub const DRIFT_WIDTHS: [usize; 3] = [64, 256, 1024];
pub const DRIFT_STEPS: usize = 200;
pub const DRIFT_LR: f64 = 1.0;
pub const ODE_LADDER: [f64; 3] = [1e-1, 1e-2, 1e-3];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Ode,
    Ntk,
    Fig6,
    All,
}

impl std::str::FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ode" => Ok(Suite::Ode),
            "ntk" => Ok(Suite::Ntk),
            "fig6" => Ok(Suite::Fig6),
            "all" => Ok(Suite::All),
            _ => Err(Error::Config(format!("unknown oracle suite `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub suite: &'static str,
    pub name: String,
    pub passed: bool,
    pub value: f64,
    pub threshold: f64,
    pub detail: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteReport {
    pub schema_version: u32,
    pub passed: bool,
    pub checks: Vec<CheckResult>,
}

impl SuiteReport {
    pub fn table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<6} {:<34} {:<5} {:>12} {:>12} {:>8}",
            "suite", "check", "ok", "value", "threshold", "secs"
        );
        for c in &self.checks {
            let _ = writeln!(
                out,
                "{:<6} {:<34} {:<5} {:>12.4e} {:>12.4e} {:>8.2}",
                c.suite,
                c.name,
                if c.passed { "pass" } else { "FAIL" },
                c.value,
                c.threshold,
                c.seconds
            );
        }
        out
    }
}

fn check(
    suite: &'static str,
    name: &str,
    start: Instant,
    value: f64,
    threshold: f64,
    passed: bool,
    detail: String,
) -> CheckResult {
    CheckResult {
        suite,
        name: name.to_string(),
        passed,
        value,
        threshold,
        detail,
        seconds: start.elapsed().as_secs_f64(),
    }
}

fn ode_checks() -> Result<Vec<CheckResult>> {
    let problem = OdeProblem::random(20, 6, 3, 0)?;
    let mut out = Vec::new();

    let t = Instant::now();
    let ladder = verify_ode_limit(&problem, &ODE_LADDER, 1.0)?;
    let decreasing = ladder.windows(2).all(|w| w[1].deviation < w[0].deviation);
    let last = ladder.last().unwrap().deviation;
    let devs: Vec<String> = ladder.iter().map(|p| format!("{:.3e}", p.deviation)).collect();
    out.push(check(
        "ode",
        "lr ladder deviation",
        t,
        last,
        1e-2,
        decreasing && last <= 1e-2,
        format!("deviations {}", devs.join(", ")),
    ));

    let t = Instant::now();
    let tiny = verify_ode_limit(&problem, &[1e-6], 1e-6)?[0].deviation;
    out.push(check("ode", "single tiny step", t, tiny, 1e-9, tiny <= 1e-9, String::new()));

    let t = Instant::now();
    let zero = verify_ode_limit(&problem, &[1e-2], 0.0)?[0].deviation;
    out.push(check("ode", "zero horizon", t, zero, 0.0, zero == 0.0, String::new()));
    Ok(out)
}

fn ntk_checks() -> Result<Vec<CheckResult>> {
    let mut out = Vec::new();

    let t = Instant::now();
    let toy = drift_toy_set(0)?;
    let drift = ntk_drift(&DRIFT_WIDTHS, DRIFT_STEPS, DRIFT_LR, &toy, 0, Activation::Relu)?;
    let ok = drift.windows(2).all(|w| w[1].drift <= w[0].drift);
    let ds: Vec<String> = drift.iter().map(|p| format!("{}:{:.3e}", p.width, p.drift)).collect();
    out.push(check(
        "ntk",
        "drift non-increasing in width",
        t,
        drift.last().unwrap().drift,
        drift[0].drift,
        ok,
        ds.join(", "),
    ));

    let t = Instant::now();
    let worst = trace_identity_worst(100, 0)?;
    out.push(check("ntk", "trace identity", t, worst, 1e-9, worst <= 1e-9, String::new()));

    let t = Instant::now();
    let (worst, checked) = gradient_check_worst(20, 0)?;
    out.push(check(
        "ntk",
        "finite-difference gradients",
        t,
        worst,
        1e-4,
        worst <= 1e-4,
        format!("{checked} coordinates"),
    ));
    Ok(out)
}

/// Worst relative gap between spectrum mean and `trace / S` over random class kernels.
pub fn trace_identity_worst(instances: usize, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for i in 0..instances {
        let d = rng.random_range(2..12);
        let k = rng.random_range(2..5);
        let s = rng.random_range(1..=64);
        let width = rng.random_range(8..48);
        let fs = SyntheticSpec::new(s * k, d, k, seed + i as u64).generate("t", 1.0, 0)?;
        let head = MlpHead::new(&[d, width, width, k], i as u64, Activation::Relu)?;
        let class = rng.random_range(0..k);
        let ntk = crate::ntk::class_ntk(&head, &fs, class, s, i as u64)?;
        let from_spectrum = ntk.mean_eigenvalue_from_spectrum()?;
        let rel = (from_spectrum - ntk.mean_eigenvalue).abs() / ntk.mean_eigenvalue.abs().max(f64::MIN_POSITIVE);
        debug_assert_eq!(ntk.mean_eigenvalue, trace(ntk.gram.view()) / ntk.samples() as f64);
        worst = worst.max(rel);
    }
    Ok(worst)
}

/// Worst finite-difference error over `heads` random heads; the first uses
/// the default 1024/2048 widths. Returns the error and coordinates checked.
pub fn gradient_check_worst(heads: usize, seed: u64) -> Result<(f64, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    let mut checked = 0;
    for i in 0..heads {
        let (d, h1, h2, k) = if i == 0 {
            (64, 1024, 2048, 10)
        } else {
            (
                rng.random_range(1..24),
                rng.random_range(1..64),
                rng.random_range(1..64),
                rng.random_range(1..8),
            )
        };
        let activation = if i % 4 == 3 {
            Activation::Tanh
        } else {
            Activation::Relu
        };
        let mut head = MlpHead::new(&[d, h1, h2, k], seed * 1000 + i as u64, activation)?;
        // nonzero biases so the bias blocks see generic activations
        let offsets = head.block_offsets();
        for (l, &(_, start)) in offsets.iter().enumerate().take(head.num_layers()) {
            for j in start..start + head.biases(l).len() {
                *head.param_mut(j) = 0.1 * std_normal(&mut rng);
            }
        }
        let x: Vec<f64> = (0..d).map(|_| std_normal(&mut rng)).collect();
        let fd = finite_difference_check(&mut head, &x, 17, FD_STEP, i as u64)?;
        worst = worst.max(fd.max_rel_error);
        checked += fd.checked;
    }
    Ok((worst, checked))
}

fn fig6_checks() -> Result<Vec<CheckResult>> {
    let t = Instant::now();
    let settings = GapSettings::default();
    let trials: Vec<GapReport> = (0..10)
        .map(|seed| verify_logit_gap(&settings, seed))
        .collect::<Result<_>>()?;
    let wins = trials.iter().filter(|r| r.improved()).count();
    let ratio: f64 = trials.iter().map(|r| r.lead_distance / r.init_distance).sum::<f64>()
        / trials.len() as f64;
    Ok(vec![check(
        "fig6",
        "evolved logits closer to trained",
        t,
        wins as f64,
        9.0,
        wins >= 9,
        format!("mean distance ratio {ratio:.3}"),
    )])
}

pub fn run_suite(suite: Suite) -> Result<SuiteReport> {
    let mut checks = Vec::new();
    if matches!(suite, Suite::Ode | Suite::All) {
        checks.extend(ode_checks()?);
    }
    if matches!(suite, Suite::Ntk | Suite::All) {
        checks.extend(ntk_checks()?);
    }
    if matches!(suite, Suite::Fig6 | Suite::All) {
        checks.extend(fig6_checks()?);
    }
    Ok(SuiteReport {
        schema_version: crate::zoo::SCHEMA_VERSION,
        passed: checks.iter().all(|c| c.passed),
        checks,
    })
}
