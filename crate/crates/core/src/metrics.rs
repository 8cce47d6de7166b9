//! Image quality metrics (PSNR, single-scale SSIM), feathered patch
//! stitching, and the method-comparison evaluation harness.

use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use crate::dataset::{load_split, DatasetManifest, Split};
use crate::error::{FpmError, Result};
use crate::field::{ComplexField, RealImage};
use crate::forward::MeasurementStack;
use crate::lwgnet::{lwgnet_forward, variant_post_network, variant_regular_gradient, LwgNetParams};
use crate::solvers::{ap_reconstruct, initialize_object, wf_reconstruct_auto, SolverConfig};

/// Peak signal-to-noise ratio in dB; +inf for an exact match (rendered as
/// "exact" in reports).
pub fn psnr(pred: &RealImage, gt: &RealImage, data_range: f64) -> f64 {
    assert!(pred.same_shape(gt), "psnr: shape mismatch");
    assert!(data_range > 0.0);
    let n = pred.data.len() as f64;
    let mse: f64 = pred.data.iter().zip(&gt.data).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n;
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (data_range * data_range / mse).log10()
    }
}

pub fn psnr_display(v: f64) -> String {
    if v.is_infinite() {
        "exact".to_string()
    } else {
        format!("{v:.3}")
    }
}

/// Single-scale SSIM with an 11x11 Gaussian window (sigma 1.5), K1 = 0.01,
/// K2 = 0.03, averaged over fully valid window positions.
pub fn ssim(pred: &RealImage, gt: &RealImage, data_range: f64) -> Result<f64> {
    if !pred.same_shape(gt) {
        return Err(FpmError::Shape("ssim inputs differ in shape".into()));
    }
    const WIN: usize = 11;
    if pred.height < WIN || pred.width < WIN {
        return Err(FpmError::Shape(format!(
            "ssim needs at least {WIN}x{WIN}, got {}x{}",
            pred.height, pred.width
        )));
    }
    let sigma = 1.5f64;
    let mut window = [0.0f64; WIN * WIN];
    let mut total = 0.0;
    for y in 0..WIN {
        for x in 0..WIN {
            let dy = y as f64 - 5.0;
            let dx = x as f64 - 5.0;
            let w = (-(dy * dy + dx * dx) / (2.0 * sigma * sigma)).exp();
            window[y * WIN + x] = w;
            total += w;
        }
    }
    for w in &mut window {
        *w /= total;
    }

    let c1 = (0.01 * data_range) * (0.01 * data_range);
    let c2 = (0.03 * data_range) * (0.03 * data_range);
    let mut acc = 0.0;
    let mut count = 0usize;
    for oy in 0..=pred.height - WIN {
        for ox in 0..=pred.width - WIN {
            let (mut mx, mut my) = (0.0, 0.0);
            for y in 0..WIN {
                for x in 0..WIN {
                    let w = window[y * WIN + x];
                    mx += w * pred.at(oy + y, ox + x);
                    my += w * gt.at(oy + y, ox + x);
                }
            }
            let (mut vx, mut vy, mut cov) = (0.0, 0.0, 0.0);
            for y in 0..WIN {
                for x in 0..WIN {
                    let w = window[y * WIN + x];
                    let dx = pred.at(oy + y, ox + x) - mx;
                    let dy = gt.at(oy + y, ox + x) - my;
                    vx += w * dx * dx;
                    vy += w * dy * dy;
                    cov += w * dx * dy;
                }
            }
            acc += ((2.0 * mx * my + c1) * (2.0 * cov + c2))
                / ((mx * mx + my * my + c1) * (vx + vy + c2));
            count += 1;
        }
    }
    Ok(acc / count as f64)
}

/// Grid layout of patches for stitching: row-major `rows` x `cols`.
#[derive(Debug, Clone, Copy)]
pub struct PatchLayout {
    pub rows: usize,
    pub cols: usize,
}

/// Blend overlapping patches with linear feathering; the per-pixel weights
/// of adjacent patches sum to 1, so stitching crops of one image is exact.
pub fn stitch_patches(
    patches: &[ComplexField],
    layout: PatchLayout,
    overlap_px: usize,
) -> Result<ComplexField> {
    if patches.len() != layout.rows * layout.cols || patches.is_empty() {
        return Err(FpmError::Shape(format!(
            "{} patches for a {}x{} layout",
            patches.len(),
            layout.rows,
            layout.cols
        )));
    }
    let ph = patches[0].height;
    let pw = patches[0].width;
    if patches.iter().any(|p| p.height != ph || p.width != pw) {
        return Err(FpmError::Shape("patches differ in size".into()));
    }
    if (layout.rows > 1 && overlap_px >= ph) || (layout.cols > 1 && overlap_px >= pw) {
        return Err(FpmError::Shape("overlap larger than the patch".into()));
    }
    let out_h = layout.rows * (ph - overlap_px) + overlap_px;
    let out_w = layout.cols * (pw - overlap_px) + overlap_px;
    let mut out = ComplexField::zeros(out_h, out_w);

    // 1-D feather: the up-ramp (t+1)/(ov+1) of one patch and the down-ramp
    // (ov-t)/(ov+1) of its neighbor sum to exactly 1 across the overlap.
    let ramp = |t: usize, first: bool, last: bool, len: usize| -> f64 {
        let ov = overlap_px;
        if ov == 0 {
            return 1.0;
        }
        let mut w = 1.0;
        if !first && t < ov {
            w *= (t + 1) as f64 / (ov + 1) as f64;
        }
        if !last && t >= len - ov {
            w *= (len - t) as f64 / (ov + 1) as f64;
        }
        w
    };

    for r in 0..layout.rows {
        for c in 0..layout.cols {
            let patch = &patches[r * layout.cols + c];
            let oy = r * (ph - overlap_px);
            let ox = c * (pw - overlap_px);
            for y in 0..ph {
                let wy = ramp(y, r == 0, r == layout.rows - 1, ph);
                for x in 0..pw {
                    let wx = ramp(x, c == 0, c == layout.cols - 1, pw);
                    out.data[(oy + y) * out_w + ox + x] += patch.at(y, x) * (wy * wx);
                }
            }
        }
    }
    Ok(out)
}

/// A registered reconstruction method for the evaluation harness.
pub enum Method<'a> {
    /// The stored ground truth itself (sanity row).
    GroundTruth,
    Ap { iters: usize },
    Wf { iters: usize, eta0: f64 },
    Lwgnet(&'a LwgNetParams),
    AblationPost(&'a LwgNetParams),
    AblationReg(&'a LwgNetParams),
}

impl Method<'_> {
    pub fn name(&self) -> &'static str {
        match self {
            Method::GroundTruth => "gt",
            Method::Ap { .. } => "ap",
            Method::Wf { .. } => "wf",
            Method::Lwgnet(_) => "lwgnet",
            Method::AblationPost(_) => "ablation-post",
            Method::AblationReg(_) => "ablation-reg",
        }
    }

    pub fn reconstruct(&self, stack: &MeasurementStack, gt: &ComplexField) -> Result<ComplexField> {
        match self {
            Method::GroundTruth => Ok(gt.clone()),
            Method::Ap { iters } => ap_reconstruct(stack, *iters),
            Method::Wf { iters, eta0 } => {
                let cfg = SolverConfig { eta: *eta0, iters: *iters, record_objective: false, init_sqrt: false };
                let init = initialize_object(stack, &stack.geometry, cfg.init_sqrt)?;
                Ok(wf_reconstruct_auto(stack, &cfg, &init)?.0)
            }
            Method::Lwgnet(params) => lwgnet_forward(stack, params),
            Method::AblationPost(params) => variant_post_network(stack, params),
            Method::AblationReg(params) => variant_regular_gradient(stack, params),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SampleScores {
    pub id: String,
    pub amp_psnr: f64,
    pub amp_ssim: f64,
    pub phase_psnr: f64,
    pub phase_ssim: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalRow {
    pub method: String,
    pub bit_depth: u8,
    pub mean_amp_psnr: f64,
    pub mean_amp_ssim: f64,
    pub mean_phase_psnr: f64,
    pub mean_phase_ssim: f64,
    pub per_sample: Vec<SampleScores>,
}

#[derive(Debug, Clone, Serialize, Default)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
}

/// Amplitude and phase scores of one reconstruction against ground truth.
/// Amplitude uses data range 1; phase uses 2*pi for PSNR and a [0, 1]
/// remap for SSIM.
pub fn score_reconstruction(id: &str, recon: &ComplexField, gt: &ComplexField) -> Result<SampleScores> {
    let amp_p = recon.magnitude();
    let amp_g = gt.magnitude();
    let ph_p = recon.phase();
    let ph_g = gt.phase();
    let map01 = |img: &RealImage| RealImage {
        height: img.height,
        width: img.width,
        data: img.data.iter().map(|&t| (t + std::f64::consts::PI) / std::f64::consts::TAU).collect(),
    };
    Ok(SampleScores {
        id: id.to_string(),
        amp_psnr: psnr(&amp_p, &amp_g, 1.0),
        amp_ssim: ssim(&amp_p, &amp_g, 1.0)?,
        phase_psnr: psnr(&ph_p, &ph_g, std::f64::consts::TAU),
        phase_ssim: ssim(&map01(&ph_p), &map01(&ph_g), 1.0)?,
    })
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = values.collect();
    v.iter().sum::<f64>() / v.len() as f64
}

/// Score every (method, bit depth) pair over a dataset split.
pub fn evaluate_methods(
    manifest: &DatasetManifest,
    dir: &Path,
    methods: &[Method<'_>],
    bit_depths: &[u8],
    split: Split,
) -> Result<EvalReport> {
    let mut report = EvalReport::default();
    for &bits in bit_depths {
        let samples = load_split(manifest, dir, split, bits)?;
        if samples.is_empty() {
            return Err(FpmError::Format(format!("no samples in split {split:?}")));
        }
        for method in methods {
            let per_sample: Vec<SampleScores> = samples
                .par_iter()
                .map(|s| {
                    let recon = method.reconstruct(&s.stack, &s.gt)?;
                    score_reconstruction(&s.id, &recon, &s.gt)
                })
                .collect::<Result<_>>()?;
            report.rows.push(EvalRow {
                method: method.name().to_string(),
                bit_depth: bits,
                mean_amp_psnr: mean(per_sample.iter().map(|s| s.amp_psnr)),
                mean_amp_ssim: mean(per_sample.iter().map(|s| s.amp_ssim)),
                mean_phase_psnr: mean(per_sample.iter().map(|s| s.phase_psnr)),
                mean_phase_ssim: mean(per_sample.iter().map(|s| s.phase_ssim)),
                per_sample,
            });
        }
    }
    Ok(report)
}

impl EvalRow {
    fn csv_line(&self) -> String {
        format!(
            "{},{},{},{:.6},{},{:.6}",
            self.method,
            self.bit_depth,
            psnr_display(self.mean_amp_psnr),
            self.mean_amp_ssim,
            psnr_display(self.mean_phase_psnr),
            self.mean_phase_ssim
        )
    }
}

impl EvalReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("method,bit_depth,amp_psnr,amp_ssim,phase_psnr,phase_ssim\n");
        for row in &self.rows {
            out.push_str(&row.csv_line());
            out.push('\n');
        }
        out
    }

    pub fn to_markdown(&self) -> String {
        let mut out = String::from("| method | bits | amp PSNR | amp SSIM | phase PSNR | phase SSIM |\n");
        out.push_str("|---|---|---|---|---|---|\n");
        for row in &self.rows {
            out.push_str(&format!(
                "| {} | {} | {} | {:.4} | {} | {:.4} |\n",
                row.method,
                row.bit_depth,
                psnr_display(row.mean_amp_psnr),
                row.mean_amp_ssim,
                psnr_display(row.mean_phase_psnr),
                row.mean_phase_ssim
            ));
        }
        out
    }

    pub fn row(&self, method: &str, bits: u8) -> Option<&EvalRow> {
        self.rows.iter().find(|r| r.method == method && r.bit_depth == bits)
    }
}
