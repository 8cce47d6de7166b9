//! Deterministic synthetic grayscale images (smooth blob mixtures) for
//! toy datasets and tests.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::field::RealImage;

/// A smooth random image: a mixture of Gaussian blobs over a gentle
/// sinusoidal background. Values are unnormalized; dataset synthesis
/// min-max rescales anyway.
pub fn blob_image(size: usize, seed: u64) -> RealImage {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let n_blobs = rng.gen_range(6..=10);
    let mut blobs = Vec::with_capacity(n_blobs);
    for _ in 0..n_blobs {
        let cy = rng.gen_range(0.0..size as f64);
        let cx = rng.gen_range(0.0..size as f64);
        let sigma = rng.gen_range(size as f64 / 16.0..size as f64 / 5.0);
        let amp = rng.gen_range(0.2..1.0) * if rng.gen_bool(0.3) { -1.0 } else { 1.0 };
        blobs.push((cy, cx, sigma, amp));
    }
    let fy = rng.gen_range(0.5..2.0);
    let fx = rng.gen_range(0.5..2.0);
    let phase = rng.gen_range(0.0..std::f64::consts::TAU);
    RealImage::from_fn(size, size, |y, x| {
        let mut v = 0.15
            * (std::f64::consts::TAU * (fy * y as f64 + fx * x as f64) / size as f64 + phase).sin();
        for &(cy, cx, sigma, amp) in &blobs {
            let d2 = (y as f64 - cy).powi(2) + (x as f64 - cx).powi(2);
            v += amp * (-d2 / (2.0 * sigma * sigma)).exp();
        }
        v
    })
}

/// A blob image overlaid with band-limited gratings so a substantial part
/// of the spectrum falls outside the brightfield disk: darkfield LEDs then
/// carry real content, which is what the bit-depth studies need.
///
/// `max_cycles` bounds the grating frequency in cycles per field of view
/// (frequency pixels of the size x size spectrum).
pub fn textured_image(size: usize, seed: u64, max_cycles: f64) -> RealImage {
    let base = blob_image(size, seed);
    let mut rng = ChaCha20Rng::seed_from_u64(seed ^ 0xA5A5_5A5A_DEAD_BEEF);
    let n_gratings = rng.gen_range(10..=14);
    let mut gratings = Vec::with_capacity(n_gratings);
    for _ in 0..n_gratings {
        let freq = rng.gen_range(4.0..max_cycles);
        let angle = rng.gen_range(0.0..std::f64::consts::TAU);
        let fy = freq * angle.sin();
        let fx = freq * angle.cos();
        let amp = rng.gen_range(0.04..0.14) * (8.0 / freq).min(1.5);
        let phase = rng.gen_range(0.0..std::f64::consts::TAU);
        gratings.push((fy, fx, amp, phase));
    }
    let (lo, hi) = base.min_max();
    let span = hi - lo;
    RealImage::from_fn(size, size, |y, x| {
        let mut v = base.at(y, x);
        for &(fy, fx, amp, phase) in &gratings {
            v += span
                * amp
                * (std::f64::consts::TAU * (fy * y as f64 + fx * x as f64) / size as f64 + phase).cos();
        }
        v
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blob_image_is_deterministic_and_non_constant() {
        let a = blob_image(64, 5);
        let b = blob_image(64, 5);
        assert_eq!(a.data, b.data);
        let (lo, hi) = a.min_max();
        assert!(hi > lo);
        assert!(a.is_finite());
    }

    #[test]
    fn textured_image_carries_high_frequency_energy() {
        use crate::field::{fft2_centered, ComplexField};
        let img = textured_image(64, 9, 24.0);
        assert_eq!(img.data, textured_image(64, 9, 24.0).data);
        let spec = fft2_centered(&ComplexField::from_real(&img));
        let mut inner = 0.0;
        let mut outer = 0.0;
        for y in 0..64i64 {
            for x in 0..64i64 {
                let r2 = (y - 32).pow(2) + (x - 32).pow(2);
                let e = spec.at(y as usize, x as usize).norm_sqr();
                if r2 > 0 && r2 <= 36 {
                    inner += e;
                } else if r2 > 36 {
                    outer += e;
                }
            }
        }
        // The gratings put non-trivial energy beyond radius 6.
        assert!(outer > 0.02 * inner, "outer {outer:.3e} vs inner {inner:.3e}");
    }
}
