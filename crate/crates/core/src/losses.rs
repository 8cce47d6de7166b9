//! Training losses over complex fields: amplitude+phase MSE, Fourier
//! magnitude MAE, and their weighted combination with a pluggable
//! perceptual slot.

use crate::error::{FpmError, Result};
use crate::field::{fft2_centered, ComplexField};

/// Weights of the combined loss.
#[derive(Debug, Clone, Copy)]
pub struct LossWeights {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        // lambda3 only matters once a perceptual hook is registered.
        Self { lambda1: 0.1, lambda2: 0.05, lambda3: 1.0 }
    }
}

/// Extension slot for a perceptual loss on (pred, gt); none is shipped, so
/// the default contribution is zero.
pub trait PerceptualLoss: Send + Sync {
    fn eval(&self, pred: &ComplexField, gt: &ComplexField) -> f64;
}

fn check_shapes(pred: &ComplexField, gt: &ComplexField) -> Result<()> {
    if !pred.same_shape(gt) {
        return Err(FpmError::Shape(format!(
            "loss inputs {}x{} vs {}x{}",
            pred.height, pred.width, gt.height, gt.width
        )));
    }
    Ok(())
}

/// Mean of squared phase differences plus mean of squared magnitude
/// differences (means, not sums, so the value is size-invariant). Phases
/// are principal values; no unwrapping.
pub fn loss_mse(pred: &ComplexField, gt: &ComplexField) -> Result<f64> {
    check_shapes(pred, gt)?;
    let n = pred.data.len() as f64;
    let mut phase_sq = 0.0;
    let mut mag_sq = 0.0;
    for (p, g) in pred.data.iter().zip(&gt.data) {
        let dp = phase_of(p) - phase_of(g);
        phase_sq += dp * dp;
        let dm = p.norm() - g.norm();
        mag_sq += dm * dm;
    }
    Ok(phase_sq / n + mag_sq / n)
}

#[inline]
fn phase_of(z: &num_complex::Complex64) -> f64 {
    if z.norm_sqr() == 0.0 {
        0.0
    } else {
        z.im.atan2(z.re)
    }
}

/// Mean absolute difference of Fourier magnitude spectra.
pub fn loss_fmae(pred: &ComplexField, gt: &ComplexField) -> Result<f64> {
    check_shapes(pred, gt)?;
    let fp = fft2_centered(pred);
    let fg = fft2_centered(gt);
    let n = fp.data.len() as f64;
    Ok(fp.data.iter().zip(&fg.data).map(|(a, b)| (a.norm() - b.norm()).abs()).sum::<f64>() / n)
}

/// lambda1 * MSE + lambda2 * FMAE + lambda3 * perceptual (0 without a hook).
pub fn total_loss(
    pred: &ComplexField,
    gt: &ComplexField,
    weights: &LossWeights,
    perceptual: Option<&dyn PerceptualLoss>,
) -> Result<f64> {
    let mut total = weights.lambda1 * loss_mse(pred, gt)? + weights.lambda2 * loss_fmae(pred, gt)?;
    if let Some(hook) = perceptual {
        total += weights.lambda3 * hook.eval(pred, gt);
    }
    Ok(total)
}
