//! The image-formation model: per-LED low-resolution intensity images and
//! sensor quantization.

use rayon::prelude::*;

use crate::error::{FpmError, Result};
use crate::field::{crop_spectrum, fft2_centered, ifft2_centered, ComplexField, RealImage};
use crate::geometry::{led_k_vector, led_order, make_pupil, KVector, PupilMask, SystemGeometry};

/// L low-resolution intensity images plus acquisition metadata, always in
/// the module-wide LED order.
#[derive(Debug, Clone)]
pub struct MeasurementStack {
    pub geometry: SystemGeometry,
    /// Explicit (row, col) LED order the images follow.
    pub led_order: Vec<(u32, u32)>,
    /// 8, 12, 16, or 0 for ideal float measurements.
    pub bit_depth: u8,
    pub images: Vec<RealImage>,
}

impl MeasurementStack {
    pub fn led_count(&self) -> usize {
        self.images.len()
    }

    pub fn k_vector(&self, index: usize) -> Result<KVector> {
        let (r, c) = self.led_order[index];
        led_k_vector(&self.geometry, r as usize, c as usize)
    }

    pub fn validate(&self) -> Result<()> {
        self.geometry.validate()?;
        if self.images.len() != self.geometry.led_count() || self.led_order.len() != self.images.len() {
            return Err(FpmError::Shape(format!(
                "stack has {} images / {} order entries for {} LEDs",
                self.images.len(),
                self.led_order.len(),
                self.geometry.led_count()
            )));
        }
        let m = self.geometry.meas_size_px;
        for img in &self.images {
            if img.height != m || img.width != m {
                return Err(FpmError::Shape(format!("image is {}x{}, expected {m}x{m}", img.height, img.width)));
            }
            if img.data.iter().any(|&v| v < 0.0 || !v.is_finite()) {
                return Err(FpmError::Numerical("negative or non-finite intensity".into()));
            }
        }
        Ok(())
    }

    pub fn max_value(&self) -> f64 {
        self.images
            .iter()
            .flat_map(|img| img.data.iter().copied())
            .fold(0.0, f64::max)
    }
}

/// Single-LED image formation:
/// `|ifft2_centered(pupil * crop_spectrum(fft2_centered(obj), k))|^2`.
pub fn forward_single(
    obj: &ComplexField,
    pupil: &PupilMask,
    k: KVector,
    geometry: &SystemGeometry,
) -> Result<RealImage> {
    let spectrum = fft2_centered(obj);
    forward_from_spectrum(&spectrum, pupil, k, geometry)
}

/// Same as [`forward_single`] but reusing a precomputed object spectrum,
/// which the per-LED loop shares.
pub fn forward_from_spectrum(
    spectrum: &ComplexField,
    pupil: &PupilMask,
    k: KVector,
    geometry: &SystemGeometry,
) -> Result<RealImage> {
    let window = crop_spectrum(spectrum, k, geometry)?;
    let field = ifft2_centered(&window.cmul(&pupil.values));
    Ok(field.intensity())
}

/// All L images in the module LED order, as ideal (bit_depth = 0) floats.
pub fn forward_stack(obj: &ComplexField, geometry: &SystemGeometry) -> Result<MeasurementStack> {
    geometry.validate()?;
    let n = geometry.obj_size_px;
    if obj.height != n || obj.width != n {
        return Err(FpmError::Shape(format!("object is {}x{}, expected {n}x{n}", obj.height, obj.width)));
    }
    let pupil = make_pupil(geometry)?;
    let order = led_order(geometry)?;
    let spectrum = fft2_centered(obj);
    let images: Vec<RealImage> = order
        .par_iter()
        .map(|&(r, c)| {
            let k = led_k_vector(geometry, r as usize, c as usize)?;
            forward_from_spectrum(&spectrum, &pupil, k, geometry)
        })
        .collect::<Result<_>>()?;
    Ok(MeasurementStack { geometry: geometry.clone(), led_order: order, bit_depth: 0, images })
}

/// Quantize an ideal stack to `bit_depth` bits with one stack-wide scale,
/// mimicking a fixed camera exposure across brightfield and darkfield.
pub fn quantize_stack(stack: &MeasurementStack, bit_depth: u8) -> Result<MeasurementStack> {
    if stack.bit_depth != 0 {
        return Err(FpmError::Numerical(format!(
            "quantize_stack expects an ideal stack, got bit depth {}",
            stack.bit_depth
        )));
    }
    if !matches!(bit_depth, 8 | 12 | 16) {
        return Err(FpmError::Numerical(format!("unsupported bit depth {bit_depth}")));
    }
    let s = stack.max_value();
    if s <= 0.0 {
        return Err(FpmError::Numerical("all-zero stack: quantization scale undefined".into()));
    }
    let q = ((1u32 << bit_depth) - 1) as f64;
    let images = stack
        .images
        .iter()
        .map(|img| RealImage {
            height: img.height,
            width: img.width,
            data: img.data.iter().map(|&v| ((v / s * q).round() / q) * s).collect(),
        })
        .collect();
    Ok(MeasurementStack {
        geometry: stack.geometry.clone(),
        led_order: stack.led_order.clone(),
        bit_depth,
        images,
    })
}

/// Integer code a quantized value maps to; used by the u16 on-disk format.
pub(crate) fn quantized_code(v: f64, scale: f64, bit_depth: u8) -> u16 {
    let q = ((1u32 << bit_depth) - 1) as f64;
    (v / scale * q).round() as u16
}

pub(crate) fn code_to_value(code: u16, scale: f64, bit_depth: u8) -> f64 {
    let q = ((1u32 << bit_depth) - 1) as f64;
    (code as f64 / q) * scale
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::ComplexField;
    use crate::geometry::presets::{desk_geometry, tiny_geometry};
    use num_complex::Complex64;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    fn random_object(n: usize, seed: u64) -> ComplexField {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        ComplexField::from_fn(n, n, |_, _| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
    }

    /// Direct-summation oracle: centered DFT, window copy, pupil product,
    /// centered inverse DFT, squared magnitude. No FFTs anywhere.
    pub(crate) fn forward_direct_oracle(
        obj: &ComplexField,
        pupil: &PupilMask,
        k: KVector,
        g: &SystemGeometry,
    ) -> RealImage {
        let n = g.obj_size_px;
        let m = g.meas_size_px;
        let spec = crate::field::tests::dft2_direct(obj, false);
        let fov = g.fov_m();
        let oy = (k.ky * fov).round() as i64;
        let ox = (k.kx * fov).round() as i64;
        let sy = (n as i64 / 2 + oy - m as i64 / 2) as usize;
        let sx = (n as i64 / 2 + ox - m as i64 / 2) as usize;
        let mut window = ComplexField::zeros(m, m);
        for y in 0..m {
            for x in 0..m {
                window.data[y * m + x] = spec.at(sy + y, sx + x) * pupil.values.at(y, x);
            }
        }
        crate::field::tests::dft2_direct(&window, true).intensity()
    }

    #[test]
    fn zero_object_gives_zero_intensity() {
        let g = tiny_geometry();
        let pupil = make_pupil(&g).unwrap();
        let obj = ComplexField::zeros(g.obj_size_px, g.obj_size_px);
        let k = led_k_vector(&g, 0, 1).unwrap();
        let img = forward_single(&obj, &pupil, k, &g).unwrap();
        assert!(img.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn flat_object_central_led_gives_flat_intensity() {
        // A flat field has a pure DC spectrum, which any disk pupil keeps.
        let g = tiny_geometry();
        let pupil = make_pupil(&g).unwrap();
        let n = g.obj_size_px;
        let obj = ComplexField::from_fn(n, n, |_, _| Complex64::new(1.0, 0.0));
        let img = forward_single(&obj, &pupil, KVector { kx: 0.0, ky: 0.0 }, &g).unwrap();
        let expect = (n as f64 / g.meas_size_px as f64).powi(2);
        for &v in &img.data {
            assert!((v - expect).abs() < 1e-10, "{v} vs {expect}");
        }
    }

    #[test]
    fn forward_matches_direct_dft_oracle() {
        let mut g = tiny_geometry();
        g.obj_size_px = 16;
        g.meas_size_px = 8;
        let pupil = make_pupil(&g).unwrap();
        let obj = random_object(16, 42);
        for (row, col) in [(1usize, 1usize), (0, 1), (1, 2), (2, 0), (2, 2)] {
            let k = led_k_vector(&g, row, col).unwrap();
            let got = forward_single(&obj, &pupil, k, &g).unwrap();
            let want = forward_direct_oracle(&obj, &pupil, k, &g);
            let max_err = got
                .data
                .iter()
                .zip(&want.data)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(max_err < 1e-10, "LED ({row},{col}) err {max_err}");
        }
    }

    #[test]
    fn stack_matches_per_led_forward() {
        let g = desk_geometry();
        let obj = random_object(g.obj_size_px, 7);
        let stack = forward_stack(&obj, &g).unwrap();
        assert_eq!(stack.led_count(), 25);
        let pupil = make_pupil(&g).unwrap();
        for (i, &(r, c)) in stack.led_order.iter().enumerate() {
            let k = led_k_vector(&g, r as usize, c as usize).unwrap();
            let img = forward_single(&obj, &pupil, k, &g).unwrap();
            assert_eq!(img.data, stack.images[i].data);
        }
    }

    #[test]
    fn paper_scale_stack_has_full_led_grid() {
        let g = crate::geometry::presets::paper_geometry();
        let obj = ComplexField::from_fn(320, 320, |y, x| {
            Complex64::from_polar(0.5 + 0.4 * ((y + x) as f64 / 640.0), 0.2)
        });
        let stack = forward_stack(&obj, &g).unwrap();
        assert_eq!(stack.led_count(), 225);
        assert_eq!(stack.images[0].height, 64);
        assert!(stack.images.iter().all(|img| img.is_finite()));
    }

    #[test]
    fn degenerate_single_led_array() {
        let mut g = tiny_geometry();
        g.array_side = 1;
        let obj = random_object(g.obj_size_px, 3);
        let stack = forward_stack(&obj, &g).unwrap();
        assert_eq!(stack.led_count(), 1);
        let pupil = make_pupil(&g).unwrap();
        let img = forward_single(&obj, &pupil, KVector { kx: 0.0, ky: 0.0 }, &g).unwrap();
        assert_eq!(img.data, stack.images[0].data);
    }

    #[test]
    fn central_led_energy_bounded_by_pupil_spectral_energy() {
        let g = tiny_geometry();
        let obj = random_object(g.obj_size_px, 9);
        let pupil = make_pupil(&g).unwrap();
        let spec = fft2_centered(&obj);
        let window = crop_spectrum(&spec, KVector { kx: 0.0, ky: 0.0 }, &g).unwrap();
        let in_pupil = window.cmul(&pupil.values).norm_sq();
        let img = forward_single(&obj, &pupil, KVector { kx: 0.0, ky: 0.0 }, &g).unwrap();
        let total: f64 = img.data.iter().sum();
        assert!(total <= in_pupil * (1.0 + 1e-12));
    }

    #[test]
    fn quantize_preserves_endpoint_and_example_value() {
        let g = tiny_geometry();
        let m = g.meas_size_px;
        let mut stack = forward_stack(&random_object(g.obj_size_px, 13), &g).unwrap();
        // Force a known max so the scale is exactly 1.
        stack.images[0].data[0] = 1.0;
        for img in &mut stack.images {
            for v in &mut img.data {
                *v = v.min(1.0);
            }
        }
        let _ = m;
        let quant = quantize_stack(&stack, 8).unwrap();
        assert_eq!(quant.images[0].data[0], 1.0);
        // Scalar oracle: v = 0.5 at s = 1, b = 8 -> round(127.5)/255 = 128/255.
        let mut stack2 = stack.clone();
        stack2.images[0].data[1] = 0.5;
        let quant2 = quantize_stack(&stack2, 8).unwrap();
        assert!((quant2.images[0].data[1] - 128.0 / 255.0).abs() < 1e-15);
    }

    #[test]
    fn quantization_error_bound_holds() {
        let g = tiny_geometry();
        let stack = forward_stack(&random_object(g.obj_size_px, 17), &g).unwrap();
        let s = stack.max_value();
        for bits in [8u8, 12, 16] {
            let q = ((1u32 << bits) - 1) as f64;
            let quant = quantize_stack(&stack, bits).unwrap();
            for (a, b) in stack.images.iter().zip(&quant.images) {
                for (&v, &vq) in a.data.iter().zip(&b.data) {
                    assert!((v - vq).abs() <= s / (2.0 * q) * (1.0 + 1e-12));
                }
            }
        }
    }

    #[test]
    fn quantize_is_idempotent() {
        let g = tiny_geometry();
        let stack = forward_stack(&random_object(g.obj_size_px, 19), &g).unwrap();
        let q1 = quantize_stack(&stack, 12).unwrap();
        let mut ideal_again = q1.clone();
        ideal_again.bit_depth = 0;
        let q2 = quantize_stack(&ideal_again, 12).unwrap();
        for (a, b) in q1.images.iter().zip(&q2.images) {
            assert_eq!(a.data, b.data);
        }
    }

    #[test]
    fn mean_quantization_error_shrinks_with_depth() {
        let g = tiny_geometry();
        let stack = forward_stack(&random_object(g.obj_size_px, 23), &g).unwrap();
        let mean_err = |bits: u8| {
            let quant = quantize_stack(&stack, bits).unwrap();
            let mut total = 0.0;
            let mut count = 0usize;
            for (a, b) in stack.images.iter().zip(&quant.images) {
                for (&v, &vq) in a.data.iter().zip(&b.data) {
                    total += (v - vq).abs();
                    count += 1;
                }
            }
            total / count as f64
        };
        let (e8, e12, e16) = (mean_err(8), mean_err(12), mean_err(16));
        assert!(e16 <= e12 && e12 <= e8, "{e16} {e12} {e8}");
    }

    #[test]
    fn quantize_rejects_all_zero_and_wrong_inputs() {
        let g = tiny_geometry();
        let zero = ComplexField::zeros(g.obj_size_px, g.obj_size_px);
        let stack = forward_stack(&zero, &g).unwrap();
        assert!(matches!(quantize_stack(&stack, 8), Err(FpmError::Numerical(_))));
        let nonzero = forward_stack(&random_object(g.obj_size_px, 29), &g).unwrap();
        let quant = quantize_stack(&nonzero, 8).unwrap();
        assert!(quantize_stack(&quant, 8).is_err());
        assert!(quantize_stack(&nonzero, 7).is_err());
    }
}
