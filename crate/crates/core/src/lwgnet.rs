//! The unrolled K-stage gradient network: complex convolution, CTanh,
//! instance norm, the channel FC, the Psi block, and the two ablation
//! variants. This module is the eager (inference) path; training builds
//! the same computation on the autodiff tape.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{FpmError, Result};
use crate::field::ComplexField;
use crate::forward::MeasurementStack;
use crate::solvers::{
    initialize_object, regular_gradient_stack_with_ctx, sequential_sweep_with_ctx, LedContext,
};

pub const IN_EPS: f64 = 1e-5;

/// Which unrolled architecture a parameter set belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    /// Stochastic-gradient stacks, one Psi per stage (the main model).
    Lwgnet,
    /// Same, but all per-LED gradients evaluated at the stage input.
    RegularGradient,
    /// Plain sweeps first, then a stack of Psi blocks on the object field.
    PostNetwork,
}

/// Architecture hyperparameters; serialized as the weights sidecar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub kind: ModelKind,
    /// Number of Psi blocks (unrolled stages, or stacked blocks for
    /// [`ModelKind::PostNetwork`]).
    pub stages: usize,
    /// Channel width C of the Psi blocks.
    pub channels: usize,
    /// LED count the first convolution expects.
    pub led_count: usize,
    /// Fixed (non-learnable) sweep step size.
    pub eta: f64,
    /// Use the standard complex product in convolutions instead of the
    /// decoupled split form.
    #[serde(default)]
    pub full_complex_conv: bool,
    /// Initialize from sqrt(I0) instead of the raw central intensity.
    #[serde(default)]
    pub init_sqrt: bool,
    /// Sweep count before the Psi stack; only [`ModelKind::PostNetwork`]
    /// reads this.
    #[serde(default = "default_sweeps")]
    pub sweeps: usize,
}

fn default_sweeps() -> usize {
    5
}

impl ModelMeta {
    pub fn conv1_in(&self) -> usize {
        match self.kind {
            ModelKind::Lwgnet | ModelKind::RegularGradient => self.led_count,
            ModelKind::PostNetwork => 1,
        }
    }
}

/// Tensor slots of one Psi block, in canonical serialization order.
pub const STAGE_TENSORS: usize = 14;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Slot {
    ConvKernels(usize),
    ConvBias(usize),
    NormGamma(usize),
    NormBeta(usize),
    FcWeights,
    FcBias,
}

pub fn slot_index(slot: Slot) -> usize {
    match slot {
        Slot::ConvKernels(layer) => 4 * layer,
        Slot::ConvBias(layer) => 4 * layer + 1,
        Slot::NormGamma(layer) => 4 * layer + 2,
        Slot::NormBeta(layer) => 4 * layer + 3,
        Slot::FcWeights => 12,
        Slot::FcBias => 13,
    }
}

/// Learnable parameters: a flat list of complex tensors per stage, each
/// tensor a channel list of small fields. Kernels store w = a + jb with
/// the real part convolving the input real part and the imaginary part
/// the input imaginary part (split form), or the full complex product
/// under `full_complex_conv`.
#[derive(Debug, Clone)]
pub struct LwgNetParams {
    pub meta: ModelMeta,
    /// `stages * STAGE_TENSORS` tensors in canonical order.
    pub tensors: Vec<Vec<ComplexField>>,
}

impl LwgNetParams {
    pub fn tensor(&self, stage: usize, slot: Slot) -> &Vec<ComplexField> {
        &self.tensors[stage * STAGE_TENSORS + slot_index(slot)]
    }

    pub fn tensor_mut(&mut self, stage: usize, slot: Slot) -> &mut Vec<ComplexField> {
        &mut self.tensors[stage * STAGE_TENSORS + slot_index(slot)]
    }

    /// Conv layer channel counts: (in, out) for layer 0..3 of a stage.
    pub fn conv_dims(&self, layer: usize) -> (usize, usize) {
        let c = self.meta.channels;
        if layer == 0 {
            (self.meta.conv1_in(), c)
        } else {
            (c, c)
        }
    }

    pub fn count_reals(&self) -> usize {
        self.tensors.iter().flat_map(|t| t.iter()).map(|f| f.data.len() * 2).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.iter().all(|f| f.is_finite()))
    }

    /// Zero out every tensor (Psi becomes the zero map once the fc bias
    /// and norm offsets are zero).
    pub fn zero(&mut self) {
        for t in &mut self.tensors {
            for f in t {
                for v in &mut f.data {
                    *v = Complex64::new(0.0, 0.0);
                }
            }
        }
    }
}

/// Fresh parameters with kernels uniform in +-1/sqrt(fan_in * k^2),
/// instance-norm affine at identity, and zero biases.
pub fn init_params(meta: &ModelMeta, seed: u64) -> LwgNetParams {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut params = LwgNetParams { meta: meta.clone(), tensors: Vec::new() };
    let c = meta.channels;
    for _stage in 0..meta.stages {
        for layer in 0..3 {
            let (in_ch, out_ch) = if layer == 0 { (meta.conv1_in(), c) } else { (c, c) };
            let bound = 1.0 / ((in_ch * 9) as f64).sqrt();
            let mut kernels = Vec::with_capacity(out_ch * in_ch);
            for _ in 0..out_ch * in_ch {
                kernels.push(ComplexField::from_fn(3, 3, |_, _| {
                    let a = rng.gen_range(-bound..bound);
                    let b = rng.gen_range(-bound..bound);
                    Complex64::new(a, b)
                }));
            }
            params.tensors.push(kernels);
            params.tensors.push(vec![ComplexField::zeros(1, 1); out_ch]);
            params.tensors.push(vec![
                ComplexField {
                    height: 1,
                    width: 1,
                    data: vec![Complex64::new(1.0, 1.0)]
                };
                out_ch
            ]);
            params.tensors.push(vec![ComplexField::zeros(1, 1); out_ch]);
        }
        let bound = 1.0 / (c as f64).sqrt();
        let mut w = Vec::with_capacity(c);
        for _ in 0..c {
            let a = rng.gen_range(-bound..bound);
            let b = rng.gen_range(-bound..bound);
            w.push(ComplexField { height: 1, width: 1, data: vec![Complex64::new(a, b)] });
        }
        params.tensors.push(w);
        params.tensors.push(vec![ComplexField::zeros(1, 1)]);
    }
    params
}

fn check_channels(inputs: &[ComplexField], expected: usize, what: &str) -> Result<()> {
    if inputs.len() != expected {
        return Err(FpmError::Shape(format!("{what}: {} channels, expected {expected}", inputs.len())));
    }
    Ok(())
}

/// 3x3 complex convolution, stride 1, zero padding 1 (same-size output).
///
/// The default split form convolves kernel real parts with input real parts
/// and kernel imaginary parts with input imaginary parts, with no cross
/// terms; `full` enables the standard complex product
/// (a*x - b*y) + j(b*x + a*y).
pub fn complex_conv2d(
    inputs: &[ComplexField],
    kernels: &[ComplexField],
    bias: &[ComplexField],
    out_ch: usize,
    full: bool,
) -> Result<Vec<ComplexField>> {
    let in_ch = inputs.len();
    if in_ch == 0 || kernels.len() != out_ch * in_ch || bias.len() != out_ch {
        return Err(FpmError::Shape(format!(
            "conv: {} kernels / {} biases for {in_ch}->{out_ch} channels",
            kernels.len(),
            bias.len()
        )));
    }
    let h = inputs[0].height;
    let w = inputs[0].width;
    if h < 3 || w < 3 {
        return Err(FpmError::Shape(format!("conv input {h}x{w} smaller than the 3x3 kernel")));
    }

    (0..out_ch)
        .into_par_iter()
        .map(|o| {
            let b = bias[o].data[0];
            let mut out = ComplexField { height: h, width: w, data: vec![b; h * w] };
            for i in 0..in_ch {
                conv_pair_accumulate(&mut out.data, &inputs[i].data, &kernels[o * in_ch + i].data, h, w, full);
            }
            Ok(out)
        })
        .collect()
}

/// Accumulate one (input channel, kernel) cross-correlation into an output
/// plane in a single fused pass over the rows (zero padding 1).
pub(crate) fn conv_pair_accumulate(
    out: &mut [Complex64],
    input: &[Complex64],
    kern: &[Complex64],
    h: usize,
    w: usize,
    full: bool,
) {
    let zero_row: Vec<Complex64> = vec![Complex64::new(0.0, 0.0); w];
    let k = kern;
    for y in 0..h {
        let up = if y > 0 { &input[(y - 1) * w..y * w] } else { &zero_row[..] };
        let mid = &input[y * w..(y + 1) * w];
        let down = if y + 1 < h { &input[(y + 1) * w..(y + 2) * w] } else { &zero_row[..] };
        let out_row = &mut out[y * w..(y + 1) * w];
        if full {
            for x in 0..w {
                let mut acc = k[1] * up[x] + k[4] * mid[x] + k[7] * down[x];
                if x > 0 {
                    acc += k[0] * up[x - 1] + k[3] * mid[x - 1] + k[6] * down[x - 1];
                }
                if x + 1 < w {
                    acc += k[2] * up[x + 1] + k[5] * mid[x + 1] + k[8] * down[x + 1];
                }
                out_row[x] += acc;
            }
        } else {
            // Decoupled parts: kernel real against input real, kernel
            // imaginary against input imaginary.
            let (a0, a1, a2) = (k[0].re, k[1].re, k[2].re);
            let (a3, a4, a5) = (k[3].re, k[4].re, k[5].re);
            let (a6, a7, a8) = (k[6].re, k[7].re, k[8].re);
            let (b0, b1, b2) = (k[0].im, k[1].im, k[2].im);
            let (b3, b4, b5) = (k[3].im, k[4].im, k[5].im);
            let (b6, b7, b8) = (k[6].im, k[7].im, k[8].im);
            for x in 0..w {
                let mut re = a1 * up[x].re + a4 * mid[x].re + a7 * down[x].re;
                let mut im = b1 * up[x].im + b4 * mid[x].im + b7 * down[x].im;
                if x > 0 {
                    re += a0 * up[x - 1].re + a3 * mid[x - 1].re + a6 * down[x - 1].re;
                    im += b0 * up[x - 1].im + b3 * mid[x - 1].im + b6 * down[x - 1].im;
                }
                if x + 1 < w {
                    re += a2 * up[x + 1].re + a5 * mid[x + 1].re + a8 * down[x + 1].re;
                    im += b2 * up[x + 1].im + b5 * mid[x + 1].im + b8 * down[x + 1].im;
                }
                out_row[x].re += re;
                out_row[x].im += im;
            }
        }
    }
}

/// Amplitude-phase activation tanh(|z|) e^{i arg z}; fixes 0 at 0.
pub fn ctanh_field(f: &ComplexField) -> ComplexField {
    ComplexField {
        height: f.height,
        width: f.width,
        data: f.data.iter().map(|&z| z * ctanh_scale(z.norm())).collect(),
    }
}

/// tanh(r)/r, the radial scale CTanh applies; series near zero.
#[inline]
pub(crate) fn ctanh_scale(r: f64) -> f64 {
    if r < 1e-4 {
        1.0 - r * r / 3.0
    } else {
        r.tanh() / r
    }
}

pub fn ctanh(inputs: &[ComplexField]) -> Vec<ComplexField> {
    inputs.iter().map(ctanh_field).collect()
}

/// Channel statistics instance norm uses; shared with the tape backward.
pub(crate) fn channel_moments(f: &ComplexField) -> (f64, f64, f64, f64) {
    let n = f.data.len() as f64;
    let mut mean = Complex64::new(0.0, 0.0);
    for z in &f.data {
        mean += z;
    }
    mean /= n;
    let mut var_re = 0.0;
    let mut var_im = 0.0;
    for z in &f.data {
        var_re += (z.re - mean.re) * (z.re - mean.re);
        var_im += (z.im - mean.im) * (z.im - mean.im);
    }
    (mean.re, mean.im, var_re / n, var_im / n)
}

/// Per-channel instance normalization over the spatial dims, applied to the
/// real and imaginary parts independently, each with its own affine pair
/// (gamma, beta carried in the respective component).
pub fn instance_norm2d(
    inputs: &[ComplexField],
    gamma: &[ComplexField],
    beta: &[ComplexField],
    eps: f64,
) -> Result<Vec<ComplexField>> {
    check_channels(gamma, inputs.len(), "instance norm gamma")?;
    check_channels(beta, inputs.len(), "instance norm beta")?;
    Ok(inputs
        .iter()
        .enumerate()
        .map(|(c, f)| {
            let (mu_re, mu_im, var_re, var_im) = channel_moments(f);
            let s_re = (var_re + eps).sqrt();
            let s_im = (var_im + eps).sqrt();
            let g = gamma[c].data[0];
            let b = beta[c].data[0];
            ComplexField {
                height: f.height,
                width: f.width,
                data: f
                    .data
                    .iter()
                    .map(|z| {
                        Complex64::new(
                            g.re * (z.re - mu_re) / s_re + b.re,
                            g.im * (z.im - mu_im) / s_im + b.im,
                        )
                    })
                    .collect(),
            }
        })
        .collect())
}

/// Per-pixel complex linear combination across channels (C -> 1).
pub fn channel_fc(inputs: &[ComplexField], weights: &[ComplexField], bias: &ComplexField) -> Result<ComplexField> {
    check_channels(weights, inputs.len(), "fc weights")?;
    let h = inputs[0].height;
    let w = inputs[0].width;
    let b = bias.data[0];
    let mut out = ComplexField { height: h, width: w, data: vec![b; h * w] };
    for (c, input) in inputs.iter().enumerate() {
        let wc = weights[c].data[0];
        for (o, &z) in out.data.iter_mut().zip(&input.data) {
            *o += wc * z;
        }
    }
    Ok(out)
}

/// One Psi block: (conv -> instance norm -> CTanh) three times, then the
/// channel FC down to a single field.
pub fn psi_block(grad_stack: &[ComplexField], params: &LwgNetParams, stage: usize) -> Result<ComplexField> {
    let full = params.meta.full_complex_conv;
    let mut x: Vec<ComplexField> = grad_stack.to_vec();
    for layer in 0..3 {
        let (in_ch, out_ch) = params.conv_dims(layer);
        check_channels(&x, in_ch, "psi input")?;
        x = complex_conv2d(
            &x,
            params.tensor(stage, Slot::ConvKernels(layer)),
            params.tensor(stage, Slot::ConvBias(layer)),
            out_ch,
            full,
        )?;
        x = instance_norm2d(
            &x,
            params.tensor(stage, Slot::NormGamma(layer)),
            params.tensor(stage, Slot::NormBeta(layer)),
            IN_EPS,
        )?;
        x = ctanh(&x);
    }
    channel_fc(&x, params.tensor(stage, Slot::FcWeights), &params.tensor(stage, Slot::FcBias)[0])
}

/// Per-stage intermediates of a forward pass.
#[derive(Debug, Clone)]
pub struct StageIO {
    pub obj_in: ComplexField,
    pub obj_out: ComplexField,
    pub grad_stack: Vec<ComplexField>,
}

fn check_model(meas: &MeasurementStack, params: &LwgNetParams, kind: ModelKind) -> Result<()> {
    if params.meta.kind != kind {
        return Err(FpmError::Format(format!(
            "weights are for {:?}, requested {kind:?}",
            params.meta.kind
        )));
    }
    if params.meta.kind != ModelKind::PostNetwork && params.meta.led_count != meas.led_count() {
        return Err(FpmError::Shape(format!(
            "weights expect {} LEDs, stack has {}",
            params.meta.led_count,
            meas.led_count()
        )));
    }
    if params.meta.stages == 0 {
        return Err(FpmError::Shape("model must have at least one stage".into()));
    }
    Ok(())
}

/// Full unrolled forward pass: start from the initialization, then per
/// stage run one sequential sweep and add Psi of the gradient stack.
pub fn lwgnet_forward(meas: &MeasurementStack, params: &LwgNetParams) -> Result<ComplexField> {
    Ok(lwgnet_forward_traced(meas, params)?.0)
}

pub fn lwgnet_forward_traced(
    meas: &MeasurementStack,
    params: &LwgNetParams,
) -> Result<(ComplexField, Vec<StageIO>)> {
    check_model(meas, params, ModelKind::Lwgnet)?;
    let ctx = LedContext::new(meas)?;
    let mut obj = initialize_object(meas, &meas.geometry, params.meta.init_sqrt)?;
    let mut stages = Vec::with_capacity(params.meta.stages);
    for stage in 0..params.meta.stages {
        let sweep = sequential_sweep_with_ctx(&obj, meas, params.meta.eta, &ctx)?;
        let update = psi_block(&sweep.grad_stack, params, stage)?;
        let next = obj.add(&update);
        stages.push(StageIO { obj_in: obj, obj_out: next.clone(), grad_stack: sweep.grad_stack });
        obj = next;
    }
    Ok((obj, stages))
}

/// Ablation: identical to [`lwgnet_forward`] but each stage feeds Psi the
/// regular (same-point) per-LED gradients instead of the sweep's.
pub fn variant_regular_gradient(meas: &MeasurementStack, params: &LwgNetParams) -> Result<ComplexField> {
    check_model(meas, params, ModelKind::RegularGradient)?;
    let ctx = LedContext::new(meas)?;
    let mut obj = initialize_object(meas, &meas.geometry, params.meta.init_sqrt)?;
    for stage in 0..params.meta.stages {
        let grad_stack = regular_gradient_stack_with_ctx(&obj, meas, &ctx)?;
        let update = psi_block(&grad_stack, params, stage)?;
        obj = obj.add(&update);
    }
    Ok(obj)
}

/// Ablation: run plain stochastic-gradient descent sweeps first (each outer
/// update steps along the mean sweep gradient), then apply the stacked Psi
/// blocks residually to the resulting single-channel object field, so zero
/// parameters leave the sweep output untouched.
pub fn variant_post_network(meas: &MeasurementStack, params: &LwgNetParams) -> Result<ComplexField> {
    check_model(meas, params, ModelKind::PostNetwork)?;
    let ctx = LedContext::new(meas)?;
    let mut obj = initialize_object(meas, &meas.geometry, params.meta.init_sqrt)?;
    let eta = params.meta.eta;
    for _ in 0..params.meta.sweeps {
        let sweep = sequential_sweep_with_ctx(&obj, meas, eta, &ctx)?;
        let mut mean = ComplexField::zeros(obj.height, obj.width);
        for g in &sweep.grad_stack {
            mean = mean.add(g);
        }
        mean = mean.scale(1.0 / sweep.grad_stack.len() as f64);
        obj = obj.axpy(-eta, &mean);
    }
    for stage in 0..params.meta.stages {
        let update = psi_block(std::slice::from_ref(&obj), params, stage)?;
        obj = obj.add(&update);
    }
    Ok(obj)
}
