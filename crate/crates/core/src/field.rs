//! Complex 2-D fields, the centered unitary FFT pair, and the spectrum
//! crop/embed primitives that the forward operator and its adjoint are
//! assembled from.

use std::cell::RefCell;

use num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{FpmError, Result};
use crate::geometry::{KVector, SystemGeometry};

/// A 2-D complex-valued image: object field, spectrum, or gradient.
///
/// Samples are row-major. Internal precision is always f64; the on-disk
/// format stores f32 (see [`crate::io`]).
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexField {
    pub height: usize,
    pub width: usize,
    pub data: Vec<Complex64>,
}

/// A 2-D real-valued image; intensity images are additionally nonnegative.
#[derive(Debug, Clone, PartialEq)]
pub struct RealImage {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl ComplexField {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self { height, width, data: vec![Complex64::new(0.0, 0.0); height * width] }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> Complex64) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(f(y, x));
            }
        }
        Self { height, width, data }
    }

    pub fn from_real(img: &RealImage) -> Self {
        Self {
            height: img.height,
            width: img.width,
            data: img.data.iter().map(|&v| Complex64::new(v, 0.0)).collect(),
        }
    }

    #[inline]
    pub fn at(&self, y: usize, x: usize) -> Complex64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn at_mut(&mut self, y: usize, x: usize) -> &mut Complex64 {
        &mut self.data[y * self.width + x]
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.height == other.height && self.width == other.width
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|c| c.re.is_finite() && c.im.is_finite())
    }

    /// Elementwise |z|^2 as a real image.
    pub fn intensity(&self) -> RealImage {
        RealImage {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|c| c.norm_sqr()).collect(),
        }
    }

    pub fn magnitude(&self) -> RealImage {
        RealImage {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|c| c.norm()).collect(),
        }
    }

    /// Principal-value phase in (-pi, pi]; 0 at z = 0.
    pub fn phase(&self) -> RealImage {
        RealImage {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|c| if c.norm_sqr() == 0.0 { 0.0 } else { c.im.atan2(c.re) }).collect(),
        }
    }

    pub fn conj(&self) -> Self {
        Self { height: self.height, width: self.width, data: self.data.iter().map(|c| c.conj()).collect() }
    }

    pub fn add(&self, other: &Self) -> Self {
        debug_assert!(self.same_shape(other));
        Self {
            height: self.height,
            width: self.width,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect(),
        }
    }

    pub fn sub(&self, other: &Self) -> Self {
        debug_assert!(self.same_shape(other));
        Self {
            height: self.height,
            width: self.width,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect(),
        }
    }

    pub fn scale(&self, s: f64) -> Self {
        Self { height: self.height, width: self.width, data: self.data.iter().map(|c| c * s).collect() }
    }

    /// self + alpha * other, elementwise.
    pub fn axpy(&self, alpha: f64, other: &Self) -> Self {
        debug_assert!(self.same_shape(other));
        Self {
            height: self.height,
            width: self.width,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a + alpha * b).collect(),
        }
    }

    /// Elementwise complex product.
    pub fn cmul(&self, other: &Self) -> Self {
        debug_assert!(self.same_shape(other));
        Self {
            height: self.height,
            width: self.width,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a * b).collect(),
        }
    }

    /// Complex inner product sum(self * conj(other)).
    pub fn inner(&self, other: &Self) -> Complex64 {
        debug_assert!(self.same_shape(other));
        self.data.iter().zip(&other.data).map(|(a, b)| a * b.conj()).sum()
    }

    pub fn norm_sq(&self) -> f64 {
        self.data.iter().map(|c| c.norm_sqr()).sum()
    }

    pub fn l2(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    /// Largest |z| over the field.
    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|c| c.norm()).fold(0.0, f64::max)
    }
}

impl RealImage {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self { height, width, data: vec![0.0; height * width] }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(f(y, x));
            }
        }
        Self { height, width, data }
    }

    #[inline]
    pub fn at(&self, y: usize, x: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.height == other.height && self.width == other.width
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn min_max(&self) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for &v in &self.data {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        (lo, hi)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

#[inline]
fn shift_src(j: usize, n: usize, half: usize) -> usize {
    (j + half) % n
}

fn fft2_impl(f: &ComplexField, inverse: bool) -> ComplexField {
    let (h, w) = (f.height, f.width);
    // ifftshift both axes while copying: DC moves from (h/2, w/2) to (0, 0).
    let mut buf = vec![Complex64::new(0.0, 0.0); h * w];
    for y in 0..h {
        let sy = shift_src(y, h, h / 2);
        for x in 0..w {
            buf[y * w + x] = f.data[sy * w + shift_src(x, w, w / 2)];
        }
    }

    PLANNER.with(|p| {
        let mut planner = p.borrow_mut();
        let row_fft = if inverse { planner.plan_fft_inverse(w) } else { planner.plan_fft_forward(w) };
        let col_fft = if inverse { planner.plan_fft_inverse(h) } else { planner.plan_fft_forward(h) };
        let mut scratch = vec![Complex64::new(0.0, 0.0); row_fft.get_inplace_scratch_len()];
        for row in buf.chunks_exact_mut(w) {
            row_fft.process_with_scratch(row, &mut scratch);
        }
        let mut tr = vec![Complex64::new(0.0, 0.0); h * w];
        for y in 0..h {
            for x in 0..w {
                tr[x * h + y] = buf[y * w + x];
            }
        }
        scratch.resize(col_fft.get_inplace_scratch_len(), Complex64::new(0.0, 0.0));
        for col in tr.chunks_exact_mut(h) {
            col_fft.process_with_scratch(col, &mut scratch);
        }
        for x in 0..w {
            for y in 0..h {
                buf[y * w + x] = tr[x * h + y];
            }
        }
    });

    // fftshift both axes while writing out, with the unitary scale folded in.
    let scale = 1.0 / ((h * w) as f64).sqrt();
    let mut out = ComplexField::zeros(h, w);
    for y in 0..h {
        // fftshift is the inverse rotation: out[j] = buf[(j + n - n/2) % n].
        let sy = shift_src(y, h, h - h / 2);
        for x in 0..w {
            out.data[y * w + x] = buf[sy * w + shift_src(x, w, w - w / 2)] * scale;
        }
    }
    out
}

/// Unitary 2-D DFT with the DC component at the grid center (H/2, W/2),
/// for both input and output.
pub fn fft2_centered(f: &ComplexField) -> ComplexField {
    fft2_impl(f, false)
}

/// Exact inverse of [`fft2_centered`].
pub fn ifft2_centered(f: &ComplexField) -> ComplexField {
    fft2_impl(f, true)
}

/// Pixel offset of the spectrum window for illumination wave-vector `k`,
/// in high-res frequency pixels: round(k * FoV).
pub fn window_offset(k: KVector, geometry: &SystemGeometry) -> (i64, i64) {
    let fov = geometry.fov_m();
    ((k.ky * fov).round() as i64, (k.kx * fov).round() as i64)
}

fn window_start(n: usize, m: usize, off: i64) -> Result<usize> {
    let start = n as i64 / 2 + off - m as i64 / 2;
    if start < 0 || start + m as i64 > n as i64 {
        return Err(FpmError::Geometry(format!(
            "spectrum window (offset {off}, size {m}) out of bounds for grid {n}: LED too oblique"
        )));
    }
    Ok(start as usize)
}

/// (row, col) start of the M x M window for `k` inside an `n` x `n` grid;
/// the shared index logic behind crop/embed and their tape counterparts.
pub(crate) fn window_bounds(k: KVector, geometry: &SystemGeometry, n: usize) -> Result<(usize, usize)> {
    let m = geometry.meas_size_px;
    let (oy, ox) = window_offset(k, geometry);
    Ok((window_start(n, m, oy)?, window_start(n, m, ox)?))
}

/// Extract the M x M spectrum window centered at the frequency-pixel offset
/// nearest to `k` from an N x N spectrum.
pub fn crop_spectrum(big: &ComplexField, k: KVector, geometry: &SystemGeometry) -> Result<ComplexField> {
    let n = geometry.obj_size_px;
    let m = geometry.meas_size_px;
    if big.height != n || big.width != n {
        return Err(FpmError::Shape(format!(
            "crop_spectrum expects {n}x{n}, got {}x{}",
            big.height, big.width
        )));
    }
    let (sy, sx) = window_bounds(k, geometry, n)?;
    let mut out = ComplexField::zeros(m, m);
    for y in 0..m {
        let src = (sy + y) * n + sx;
        out.data[y * m..(y + 1) * m].copy_from_slice(&big.data[src..src + m]);
    }
    Ok(out)
}

/// Adjoint of [`crop_spectrum`]: place an M x M field into an otherwise zero
/// `n` x `n` grid at the window for `k`.
pub fn embed_spectrum(small: &ComplexField, k: KVector, geometry: &SystemGeometry, n: usize) -> Result<ComplexField> {
    let m = geometry.meas_size_px;
    if small.height != m || small.width != m {
        return Err(FpmError::Shape(format!(
            "embed_spectrum expects {m}x{m}, got {}x{}",
            small.height, small.width
        )));
    }
    let (sy, sx) = window_bounds(k, geometry, n)?;
    let mut out = ComplexField::zeros(n, n);
    for y in 0..m {
        let dst = (sy + y) * n + sx;
        out.data[dst..dst + m].copy_from_slice(&small.data[y * m..(y + 1) * m]);
    }
    Ok(out)
}
