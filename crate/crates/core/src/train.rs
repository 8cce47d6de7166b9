//! Adam, reduce-on-plateau scheduling, and the deterministic minibatch
//! training loop for the unrolled network.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{loss_and_gradients, Channels};
use crate::dataset::{load_split, DatasetManifest, LoadedSample, Split};
use crate::error::{FpmError, Result};
use crate::field::ComplexField;
use crate::forward::MeasurementStack;
use crate::io;
use crate::losses::{total_loss, LossWeights};
use crate::lwgnet::{
    init_params, lwgnet_forward, variant_post_network, variant_regular_gradient, LwgNetParams,
    ModelKind, ModelMeta,
};
use crate::metrics::psnr;

/// Training hyperparameters. The step cap is an optional budget guard on
/// top of the epoch count.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub scheduler_factor: f64,
    pub scheduler_patience: usize,
    pub seed: u64,
    pub max_steps: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda1: 0.1,
            lambda2: 0.05,
            lambda3: 1.0,
            lr: 1e-4,
            batch_size: 4,
            epochs: 100,
            scheduler_factor: 0.1,
            scheduler_patience: 10,
            seed: 0,
            max_steps: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lambda1 < 0.0 || self.lambda2 < 0.0 || self.lambda3 < 0.0 {
            return Err(FpmError::Numerical("loss weights must be nonnegative".into()));
        }
        if self.lr <= 0.0 && self.lr != 0.0 {
            return Err(FpmError::Numerical("learning rate must be >= 0".into()));
        }
        if self.batch_size == 0 {
            return Err(FpmError::Numerical("batch size must be >= 1".into()));
        }
        Ok(())
    }

    pub fn weights(&self) -> LossWeights {
        LossWeights { lambda1: self.lambda1, lambda2: self.lambda2, lambda3: self.lambda3 }
    }
}

/// Adam moment state, shaped exactly like the parameter tensors (the real
/// and imaginary components carry the moments of the respective parts).
pub struct AdamState {
    m: Vec<Channels>,
    v: Vec<Channels>,
    t: u32,
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

impl AdamState {
    pub fn new(params: &LwgNetParams) -> Self {
        let zeros: Vec<Channels> = params
            .tensors
            .iter()
            .map(|t| t.iter().map(|f| ComplexField::zeros(f.height, f.width)).collect())
            .collect();
        Self { m: zeros.clone(), v: zeros, t: 0 }
    }
}

/// One Adam update with bias correction over every real parameter
/// component.
pub fn adam_step(params: &mut LwgNetParams, grads: &[Channels], state: &mut AdamState, lr: f64) {
    state.t += 1;
    let bc1 = 1.0 - ADAM_BETA1.powi(state.t as i32);
    let bc2 = 1.0 - ADAM_BETA2.powi(state.t as i32);
    let update = |p: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
        *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
        *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
        let mhat = *m / bc1;
        let vhat = *v / bc2;
        *p -= lr * mhat / (vhat.sqrt() + ADAM_EPS);
    };
    for (ti, tensor) in params.tensors.iter_mut().enumerate() {
        for (ci, field) in tensor.iter_mut().enumerate() {
            let mf = &mut state.m[ti][ci];
            let vf = &mut state.v[ti][ci];
            for (i, z) in field.data.iter_mut().enumerate() {
                update(&mut z.re, grads[ti][ci].data[i].re, &mut mf.data[i].re, &mut vf.data[i].re);
                update(&mut z.im, grads[ti][ci].data[i].im, &mut mf.data[i].im, &mut vf.data[i].im);
            }
        }
    }
}

/// Reduce-on-plateau learning-rate state: multiply by `factor` once the
/// validation loss has not improved by `min_delta` for `patience` epochs.
#[derive(Debug, Clone)]
pub struct PlateauState {
    pub lr: f64,
    pub factor: f64,
    pub patience: usize,
    pub min_delta: f64,
    pub floor: f64,
    best: f64,
    bad_epochs: usize,
}

impl PlateauState {
    pub fn new(lr: f64, factor: f64, patience: usize) -> Self {
        Self { lr, factor, patience, min_delta: 1e-4, floor: 1e-7, best: f64::INFINITY, bad_epochs: 0 }
    }

    /// Feed one epoch's validation loss; returns the (possibly reduced)
    /// learning rate to use next.
    pub fn step(&mut self, val_loss: f64) -> f64 {
        if val_loss < self.best - self.min_delta {
            self.best = val_loss;
            self.bad_epochs = 0;
        } else {
            self.bad_epochs += 1;
            if self.bad_epochs >= self.patience {
                self.lr = (self.lr * self.factor).max(self.floor);
                self.bad_epochs = 0;
            }
        }
        self.lr
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_psnr: f64,
    pub lr: f64,
}

#[derive(Debug)]
pub struct TrainReport {
    pub metrics: Vec<EpochMetrics>,
    pub best_val_loss: f64,
    pub best_epoch: usize,
    pub steps: usize,
}

impl TrainReport {
    pub fn metrics_csv(&self) -> impl Iterator<Item = String> + '_ {
        self.metrics.iter().map(|m| {
            format!("{},{:.8e},{:.8e},{:.4},{:.3e}", m.epoch, m.train_loss, m.val_loss, m.val_psnr, m.lr)
        })
    }
}

/// Forward pass dispatched on the parameter kind.
pub fn forward_any(meas: &MeasurementStack, params: &LwgNetParams) -> Result<ComplexField> {
    match params.meta.kind {
        ModelKind::Lwgnet => lwgnet_forward(meas, params),
        ModelKind::RegularGradient => variant_regular_gradient(meas, params),
        ModelKind::PostNetwork => variant_post_network(meas, params),
    }
}

/// Validation loss/PSNR with the configured loss weights.
pub fn validate(samples: &[LoadedSample], params: &LwgNetParams, cfg: &TrainConfig) -> Result<(f64, f64)> {
    let weights = cfg.weights();
    let scores: Vec<(f64, f64)> = samples
        .par_iter()
        .map(|s| {
            let recon = forward_any(&s.stack, params)?;
            let l = total_loss(&recon, &s.gt, &weights, None)?;
            let p = psnr(&recon.magnitude(), &s.gt.magnitude(), 1.0);
            Ok((l, p))
        })
        .collect::<Result<_>>()?;
    let n = scores.len() as f64;
    Ok((scores.iter().map(|s| s.0).sum::<f64>() / n, scores.iter().map(|s| s.1).sum::<f64>() / n))
}

/// Deterministic minibatch training. Returns the best-validation-loss
/// parameters and the per-epoch metrics.
pub fn train_in_memory(
    train_set: &[LoadedSample],
    val_set: &[LoadedSample],
    meta: &ModelMeta,
    cfg: &TrainConfig,
) -> Result<(LwgNetParams, TrainReport)> {
    cfg.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(FpmError::Numerical("training needs non-empty train and val splits".into()));
    }
    let weights = cfg.weights();
    let mut params = init_params(meta, cfg.seed);
    let mut adam = AdamState::new(&params);
    let mut scheduler = PlateauState::new(cfg.lr, cfg.scheduler_factor, cfg.scheduler_patience);
    let mut lr = cfg.lr;
    let mut best_val = f64::INFINITY;
    let mut best_epoch = 0;
    let mut best_params = params.clone();
    let mut metrics = Vec::with_capacity(cfg.epochs);
    let mut steps = 0usize;

    'epochs: for epoch in 1..=cfg.epochs {
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        order.shuffle(&mut rng);

        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            if cfg.max_steps.is_some_and(|cap| steps >= cap) {
                break 'epochs;
            }
            let results: Vec<(f64, Vec<Channels>)> = batch
                .par_iter()
                .map(|&i| {
                    let s = &train_set[i];
                    loss_and_gradients(&s.stack, &s.gt, &params, &weights)
                })
                .collect::<Result<_>>()?;

            let batch_loss: f64 = results.iter().map(|(l, _)| l).sum::<f64>() / batch.len() as f64;
            if !batch_loss.is_finite() {
                let ids: Vec<&str> = batch.iter().map(|&i| train_set[i].id.as_str()).collect();
                return Err(FpmError::Numerical(format!(
                    "NaN loss at epoch {epoch} step {steps}; offending batch: {ids:?}"
                )));
            }

            // In-order reduction so gradients are identical however the
            // batch members were scheduled.
            let scale = 1.0 / batch.len() as f64;
            let mut grads = results[0].1.clone();
            for (_, g) in &results[1..] {
                for (acc_t, g_t) in grads.iter_mut().zip(g) {
                    for (acc_f, g_f) in acc_t.iter_mut().zip(g_t) {
                        for (a, b) in acc_f.data.iter_mut().zip(&g_f.data) {
                            *a += b;
                        }
                    }
                }
            }
            for t in &mut grads {
                for f in t {
                    for v in &mut f.data {
                        *v *= scale;
                    }
                }
            }

            adam_step(&mut params, &grads, &mut adam, lr);
            if !params.all_finite() {
                return Err(FpmError::Numerical(format!("non-finite parameters after step {steps}")));
            }
            epoch_loss += batch_loss;
            batches += 1;
            steps += 1;
        }
        if batches == 0 {
            break;
        }

        let (val_loss, val_psnr) = validate(val_set, &params, cfg)?;
        metrics.push(EpochMetrics {
            epoch,
            train_loss: epoch_loss / batches as f64,
            val_loss,
            val_psnr,
            lr,
        });
        if val_loss < best_val {
            best_val = val_loss;
            best_epoch = epoch;
            best_params = params.clone();
        }
        lr = scheduler.step(val_loss);
    }

    if metrics.is_empty() {
        // Zero-epoch run: report the untouched initialization.
        let (val_loss, _) = validate(val_set, &params, cfg)?;
        best_val = val_loss;
        best_params = params;
    }
    Ok((best_params, TrainReport { metrics, best_val_loss: best_val, best_epoch, steps }))
}

/// Filesystem entry point: load the manifest splits at `bit_depth`, train,
/// and write the best-validation weights plus the metrics CSV.
pub fn train_from_manifest(
    manifest: &DatasetManifest,
    dir: &Path,
    bit_depth: u8,
    meta: &ModelMeta,
    cfg: &TrainConfig,
    out_weights: &Path,
    metrics_csv: Option<&Path>,
) -> Result<TrainReport> {
    let train_set = load_split(manifest, dir, Split::Train, bit_depth)?;
    let val_set = load_split(manifest, dir, Split::Val, bit_depth)?;
    let (best, report) = train_in_memory(&train_set, &val_set, meta, cfg)?;
    io::write_lwgw(out_weights, &best)?;
    if let Some(path) = metrics_csv {
        io::write_csv(path, "epoch,train_loss,val_loss,val_psnr,lr", report.metrics_csv())?;
    }
    Ok(report)
}

/// PSNR of the raw initialization against ground truth: the baseline any
/// trained model is compared to.
pub fn initialization_psnr(samples: &[LoadedSample], init_sqrt: bool) -> Result<f64> {
    let scores: Vec<f64> = samples
        .iter()
        .map(|s| {
            let init = crate::solvers::initialize_object(&s.stack, &s.stack.geometry, init_sqrt)?;
            Ok(psnr(&init.magnitude(), &s.gt.magnitude(), 1.0))
        })
        .collect::<Result<_>>()?;
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::LoadedSample;
    use crate::forward::forward_stack;
    use crate::geometry::presets::tiny_geometry;
    use crate::synthgen::blob_image;
    use num_complex::Complex64;

    fn toy_meta() -> ModelMeta {
        ModelMeta {
            kind: ModelKind::Lwgnet,
            stages: 1,
            channels: 4,
            led_count: 9,
            eta: 1e-6,
            full_complex_conv: false,
            init_sqrt: false,
            sweeps: 2,
        }
    }

    fn toy_sample(seed: u64) -> LoadedSample {
        let g = tiny_geometry();
        let n = g.obj_size_px;
        let amp = blob_image(n, seed);
        let phs = blob_image(n, seed + 500);
        let gt = crate::dataset::GroundTruthObject::from_images(&amp, &phs).unwrap().field;
        let stack = forward_stack(&gt, &g).unwrap();
        LoadedSample { id: format!("s{seed}"), stack, gt }
    }

    #[test]
    fn train_config_defaults_follow_protocol_and_parse_from_empty_json() {
        let cfg: TrainConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(cfg.lr, 1e-4);
        assert_eq!((cfg.lambda1, cfg.lambda2, cfg.lambda3), (0.1, 0.05, 1.0));
        assert_eq!(cfg.epochs, 100);
        assert_eq!(cfg.scheduler_factor, 0.1);
        assert_eq!(cfg.scheduler_patience, 10);
        assert_eq!(cfg.batch_size, 4);
        assert!(cfg.max_steps.is_none());
    }

    #[test]
    fn adam_zero_gradients_leave_params_unchanged() {
        let meta = toy_meta();
        let mut params = init_params(&meta, 1);
        let before = params.clone();
        let zeros: Vec<Channels> = params
            .tensors
            .iter()
            .map(|t| t.iter().map(|f| ComplexField::zeros(f.height, f.width)).collect())
            .collect();
        let mut state = AdamState::new(&params);
        adam_step(&mut params, &zeros, &mut state, 1e-3);
        for (a, b) in params.tensors.iter().flatten().zip(before.tensors.iter().flatten()) {
            assert_eq!(a.data, b.data);
        }
    }

    #[test]
    fn adam_first_step_magnitude_matches_scalar_trace() {
        // After one step on gradient g, |dp| = lr * |g| / (sqrt(g^2) + eps')
        // with bias correction; for any g != 0 this is lr / (1 + eps'') up
        // to the epsilon terms, so |dp| <= lr * (1 + 1e-6).
        let meta = toy_meta();
        let mut params = init_params(&meta, 2);
        let before = params.clone();
        let grads: Vec<Channels> = params
            .tensors
            .iter()
            .map(|t| {
                t.iter()
                    .map(|f| ComplexField {
                        height: f.height,
                        width: f.width,
                        data: f.data.iter().map(|_| Complex64::new(0.37, -1.4)).collect(),
                    })
                    .collect()
            })
            .collect();
        let mut state = AdamState::new(&params);
        let lr = 1e-3;
        adam_step(&mut params, &grads, &mut state, lr);
        for (after_t, before_t) in params.tensors.iter().zip(&before.tensors) {
            for (after_f, before_f) in after_t.iter().zip(before_t) {
                for (a, b) in after_f.data.iter().zip(&before_f.data) {
                    let d_re = (a.re - b.re).abs();
                    let d_im = (a.im - b.im).abs();
                    assert!(d_re <= lr * (1.0 + 1e-6) && d_re >= lr * 0.999);
                    assert!(d_im <= lr * (1.0 + 1e-6) && d_im >= lr * 0.999);
                    // Sign-like: the step opposes the gradient.
                    assert!(a.re < b.re && a.im > b.im);
                }
            }
        }
    }

    #[test]
    fn adam_is_deterministic() {
        let meta = toy_meta();
        let run = || {
            let mut params = init_params(&meta, 3);
            let mut state = AdamState::new(&params);
            for step in 0..5 {
                let grads: Vec<Channels> = params
                    .tensors
                    .iter()
                    .map(|t| {
                        t.iter()
                            .map(|f| ComplexField {
                                height: f.height,
                                width: f.width,
                                data: f
                                    .data
                                    .iter()
                                    .map(|z| Complex64::new(z.re * 0.1 + step as f64, z.im))
                                    .collect(),
                            })
                            .collect()
                    })
                    .collect();
                adam_step(&mut params, &grads, &mut state, 1e-3);
            }
            params
        };
        let a = run();
        let b = run();
        for (x, y) in a.tensors.iter().flatten().zip(b.tensors.iter().flatten()) {
            assert_eq!(x.data, y.data);
        }
    }

    #[test]
    fn plateau_scheduler_traces() {
        // Strictly improving: lr constant.
        let mut s = PlateauState::new(1e-3, 0.1, 10);
        for i in 0..20 {
            let lr = s.step(1.0 / (i + 1) as f64);
            assert_eq!(lr, 1e-3);
        }
        // Flat sequence of 11 epochs: exactly one reduction.
        let mut s = PlateauState::new(1e-3, 0.1, 10);
        let mut lrs = Vec::new();
        for _ in 0..11 {
            lrs.push(s.step(0.5));
        }
        assert!(lrs[..10].iter().all(|&l| l == 1e-3));
        assert!((lrs[10] - 1e-4).abs() < 1e-18);
        // Floor respected under repeated plateaus.
        let mut s = PlateauState::new(1e-3, 0.1, 1);
        for _ in 0..100 {
            s.step(0.5);
        }
        assert_eq!(s.lr, 1e-7);
    }

    #[test]
    fn lr_zero_training_leaves_params_bit_identical() {
        let train: Vec<LoadedSample> = vec![toy_sample(1)];
        let val = vec![toy_sample(2)];
        let meta = toy_meta();
        let cfg = TrainConfig { lr: 0.0, epochs: 2, batch_size: 1, seed: 9, ..Default::default() };
        let (best, _) = train_in_memory(&train, &val, &meta, &cfg).unwrap();
        let fresh = init_params(&meta, 9);
        for (a, b) in best.tensors.iter().flatten().zip(fresh.tensors.iter().flatten()) {
            assert_eq!(a.data, b.data);
        }
    }

    #[test]
    fn same_seed_gives_identical_metric_logs() {
        let train: Vec<LoadedSample> = vec![toy_sample(3), toy_sample(4)];
        let val = vec![toy_sample(5)];
        let meta = toy_meta();
        let cfg = TrainConfig { epochs: 2, batch_size: 2, seed: 17, lr: 1e-3, ..Default::default() };
        let (_, r1) = train_in_memory(&train, &val, &meta, &cfg).unwrap();
        let (_, r2) = train_in_memory(&train, &val, &meta, &cfg).unwrap();
        let lines1: Vec<String> = r1.metrics_csv().collect();
        let lines2: Vec<String> = r2.metrics_csv().collect();
        assert_eq!(lines1, lines2);
    }

    #[test]
    fn single_sample_overfit_drives_loss_down() {
        // Ground-truth phases stay inside (-1.2, 1.2): the phase-MSE wrap
        // discontinuity is excluded from test data by construction.
        let g = tiny_geometry();
        let n = g.obj_size_px;
        let amp = blob_image(n, 6);
        let phs = blob_image(n, 506);
        let (alo, ahi) = amp.min_max();
        let (plo, phi) = phs.min_max();
        let gt = ComplexField::from_fn(n, n, |y, x| {
            let a = (amp.at(y, x) - alo) / (ahi - alo);
            let p = ((phs.at(y, x) - plo) / (phi - plo) - 0.5) * 2.4;
            Complex64::from_polar(a, p)
        });
        let stack = forward_stack(&gt, &g).unwrap();
        let sample = LoadedSample { id: "overfit".into(), stack, gt };
        let train = vec![sample.clone()];
        let val = vec![sample];
        let meta = ModelMeta { stages: 2, channels: 8, ..toy_meta() };
        let cfg = TrainConfig {
            epochs: 500,
            batch_size: 1,
            lr: 1e-2,
            seed: 4,
            max_steps: Some(500),
            ..Default::default()
        };
        let (_, report) = train_in_memory(&train, &val, &meta, &cfg).unwrap();
        let first = report.metrics.first().unwrap().train_loss;
        let best = report.metrics.iter().map(|m| m.train_loss).fold(f64::INFINITY, f64::min);
        assert!(
            best < 0.01 * first,
            "overfit failed: initial {first:.4e}, best {best:.4e} after {} steps",
            report.steps
        );
    }

    #[test]
    fn max_steps_caps_training() {
        let train: Vec<LoadedSample> = vec![toy_sample(7), toy_sample(8)];
        let val = vec![toy_sample(9)];
        let meta = toy_meta();
        let cfg = TrainConfig {
            epochs: 50,
            batch_size: 1,
            max_steps: Some(3),
            lr: 1e-3,
            seed: 1,
            ..Default::default()
        };
        let (_, report) = train_in_memory(&train, &val, &meta, &cfg).unwrap();
        assert_eq!(report.steps, 3);
    }
}
