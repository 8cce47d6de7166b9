//! LED-array illumination geometry: per-LED wave-vectors, the coherent
//! pupil mask, and the module-wide LED ordering.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{FpmError, Result};
use crate::field::ComplexField;

/// Physical setup parameters. All lengths are SI meters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemGeometry {
    pub wavelength_m: f64,
    pub led_pitch_m: f64,
    pub led_distance_m: f64,
    /// LEDs per side of the square array; odd so a central LED exists.
    pub array_side: usize,
    pub na_objective: f64,
    pub magnification: f64,
    pub sensor_pixel_pitch_m: f64,
    /// High-res object grid N.
    pub obj_size_px: usize,
    /// Low-res measurement grid M.
    pub meas_size_px: usize,
}

/// Illumination spatial frequency in cycles/m.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KVector {
    pub kx: f64,
    pub ky: f64,
}

impl KVector {
    pub fn norm(&self) -> f64 {
        (self.kx * self.kx + self.ky * self.ky).sqrt()
    }
}

/// Binary circular low-pass mask on the M x M frequency grid.
#[derive(Debug, Clone)]
pub struct PupilMask {
    pub values: ComplexField,
    pub cutoff_px: usize,
}

impl SystemGeometry {
    /// Total LED count L = array_side^2.
    pub fn led_count(&self) -> usize {
        self.array_side * self.array_side
    }

    /// Spatial field-of-view extent: N * (sensor pitch / magnification).
    pub fn fov_m(&self) -> f64 {
        self.obj_size_px as f64 * self.sensor_pixel_pitch_m / self.magnification
    }

    /// Pupil cutoff radius in frequency pixels: floor(NA / lambda * FoV).
    pub fn cutoff_px(&self) -> usize {
        (self.na_objective / self.wavelength_m * self.fov_m()).floor() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.wavelength_m <= 0.0 {
            return Err(FpmError::Geometry("wavelength_m must be > 0".into()));
        }
        if self.led_distance_m <= 0.0 {
            return Err(FpmError::Geometry("led_distance_m must be > 0".into()));
        }
        if self.led_pitch_m <= 0.0 {
            return Err(FpmError::Geometry("led_pitch_m must be > 0".into()));
        }
        if !(self.na_objective > 0.0 && self.na_objective < 1.0) {
            return Err(FpmError::Geometry("na_objective must lie in (0, 1)".into()));
        }
        if self.magnification <= 0.0 || self.sensor_pixel_pitch_m <= 0.0 {
            return Err(FpmError::Geometry("magnification and sensor_pixel_pitch_m must be > 0".into()));
        }
        if self.array_side == 0 || self.array_side % 2 == 0 {
            return Err(FpmError::Geometry("array_side must be odd and >= 1".into()));
        }
        if self.obj_size_px < self.meas_size_px || self.meas_size_px == 0 {
            return Err(FpmError::Geometry("obj_size_px must be >= meas_size_px >= 1".into()));
        }
        Ok(())
    }
}

/// Illumination wave-vector of the LED at (row, col): (sin_theta / lambda)
/// per axis, from the LED position relative to the sample.
pub fn led_k_vector(geometry: &SystemGeometry, row: usize, col: usize) -> Result<KVector> {
    let side = geometry.array_side;
    if row >= side || col >= side {
        return Err(FpmError::Index(format!("LED ({row}, {col}) outside {side}x{side} array")));
    }
    let center = (side - 1) as f64 / 2.0;
    let dx = (col as f64 - center) * geometry.led_pitch_m;
    let dy = (row as f64 - center) * geometry.led_pitch_m;
    let z = geometry.led_distance_m;
    let r = (dx * dx + dy * dy + z * z).sqrt();
    Ok(KVector { kx: dx / r / geometry.wavelength_m, ky: dy / r / geometry.wavelength_m })
}

/// Ideal binary pupil: 1 strictly inside `cutoff_px` of the grid center.
pub fn make_pupil(geometry: &SystemGeometry) -> Result<PupilMask> {
    geometry.validate()?;
    let m = geometry.meas_size_px;
    let cutoff = geometry.cutoff_px();
    if cutoff >= m / 2 {
        return Err(FpmError::Geometry(format!(
            "pupil cutoff {cutoff} px does not fit the {m}x{m} low-res grid"
        )));
    }
    let c = (m / 2) as i64;
    let limit = (cutoff * cutoff) as i64;
    let values = ComplexField::from_fn(m, m, |y, x| {
        let dy = y as i64 - c;
        let dx = x as i64 - c;
        if dy * dy + dx * dx < limit {
            Complex64::new(1.0, 0.0)
        } else {
            Complex64::new(0.0, 0.0)
        }
    });
    Ok(PupilMask { values, cutoff_px: cutoff })
}

/// Whether an illumination direction falls inside the pupil NA (boundary
/// counted as brightfield).
pub fn is_brightfield(geometry: &SystemGeometry, k: KVector) -> bool {
    k.norm() * geometry.wavelength_m <= geometry.na_objective
}

/// Module-wide LED ordering: spiral of increasing |k| out from the center,
/// ties broken by angle ascending, then (row, col). The central LED is
/// always first. This order is what measurement stacks serialize.
pub fn led_order(geometry: &SystemGeometry) -> Result<Vec<(u32, u32)>> {
    let side = geometry.array_side;
    let mut keyed: Vec<((u32, u32), f64, f64)> = Vec::with_capacity(side * side);
    for row in 0..side {
        for col in 0..side {
            let k = led_k_vector(geometry, row, col)?;
            keyed.push(((row as u32, col as u32), k.norm(), k.ky.atan2(k.kx)));
        }
    }
    keyed.sort_by(|a, b| {
        a.1.partial_cmp(&b.1)
            .unwrap()
            .then(a.2.partial_cmp(&b.2).unwrap())
            .then(a.0.cmp(&b.0))
    });
    Ok(keyed.into_iter().map(|(rc, _, _)| rc).collect())
}

/// Ready-made geometries used across tests, examples, and docs.
pub mod presets {
    use super::SystemGeometry;

    /// Desk-scale instance: N=160, M=32, 5x5 LEDs. The wide LED pitch
    /// makes the outer 16 LEDs darkfield (|k| past the NA cutoff), so the
    /// stack mixes bright and dim images like the full-scale setup.
    pub fn desk_geometry() -> SystemGeometry {
        SystemGeometry {
            wavelength_m: 630e-9,
            led_pitch_m: 12e-3,
            led_distance_m: 80e-3,
            array_side: 5,
            na_objective: 0.25,
            magnification: 10.0,
            sensor_pixel_pitch_m: 2.5e-6,
            obj_size_px: 160,
            meas_size_px: 32,
        }
    }

    /// Small instance for fast unit tests: N=32, M=16, 3x3 LEDs.
    pub fn tiny_geometry() -> SystemGeometry {
        SystemGeometry {
            wavelength_m: 630e-9,
            led_pitch_m: 4e-3,
            led_distance_m: 80e-3,
            array_side: 3,
            na_objective: 0.25,
            magnification: 10.0,
            sensor_pixel_pitch_m: 2.5e-6,
            obj_size_px: 32,
            meas_size_px: 16,
        }
    }

    /// Full-scale configuration: central 15x15 LEDs, N=320, M=64.
    pub fn paper_geometry() -> SystemGeometry {
        SystemGeometry {
            wavelength_m: 630e-9,
            led_pitch_m: 4e-3,
            led_distance_m: 80e-3,
            array_side: 15,
            na_objective: 0.25,
            magnification: 10.0,
            sensor_pixel_pitch_m: 2.5e-6,
            obj_size_px: 320,
            meas_size_px: 64,
        }
    }
}
