//! Dataset synthesis and the on-disk manifest: ground-truth objects from
//! uncorrelated amplitude/phase images, ideal and quantized measurement
//! stacks, and train/val/test splits.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{FpmError, Result};
use crate::field::{ComplexField, RealImage};
use crate::forward::{forward_stack, quantize_stack, MeasurementStack};
use crate::geometry::{led_order, SystemGeometry};
use crate::io;

/// A complex object with amplitude in [0, 1] and phase in [-pi, pi].
#[derive(Debug, Clone)]
pub struct GroundTruthObject {
    pub field: ComplexField,
}

impl GroundTruthObject {
    /// Build from an amplitude image (min-max normalized to [0, 1]) and a
    /// phase image (linearly mapped to [-pi, pi]). Degenerate inputs with
    /// zero dynamic range are rejected.
    pub fn from_images(amp: &RealImage, phase: &RealImage) -> Result<Self> {
        if !amp.same_shape(phase) {
            return Err(FpmError::Shape("amplitude and phase images differ in shape".into()));
        }
        let (alo, ahi) = amp.min_max();
        let (plo, phi) = phase.min_max();
        if ahi <= alo || phi <= plo {
            return Err(FpmError::Numerical("constant image: zero dynamic range".into()));
        }
        let field = ComplexField {
            height: amp.height,
            width: amp.width,
            data: amp
                .data
                .iter()
                .zip(&phase.data)
                .map(|(&a, &p)| {
                    let amp01 = (a - alo) / (ahi - alo);
                    let ph = (p - plo) / (phi - plo) * std::f64::consts::TAU - std::f64::consts::PI;
                    Complex64::from_polar(amp01, ph)
                })
                .collect(),
        };
        Ok(Self { field })
    }

    pub fn validate(&self) -> Result<()> {
        for z in &self.field.data {
            if z.norm() > 1.0 + 1e-9 {
                return Err(FpmError::Numerical("ground-truth amplitude exceeds 1".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SampleEntry {
    pub id: String,
    /// Ground-truth object, relative to the manifest directory.
    pub object: PathBuf,
    /// Ideal (float) measurement stack.
    pub ideal: PathBuf,
    /// Quantized stacks keyed by bit depth.
    pub stacks: BTreeMap<u8, PathBuf>,
    pub split: Split,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub geometry: SystemGeometry,
    pub led_order: Vec<(u32, u32)>,
    pub bit_depths: Vec<u8>,
    pub seed: u64,
    pub samples: Vec<SampleEntry>,
}

impl DatasetManifest {
    pub fn load(path: &Path) -> Result<Self> {
        io::read_json(path)
    }

    pub fn in_split(&self, split: Split) -> impl Iterator<Item = &SampleEntry> {
        self.samples.iter().filter(move |s| s.split == split)
    }
}

#[derive(Debug, Clone)]
pub struct SynthesisOptions {
    pub bit_depths: Vec<u8>,
    pub seed: u64,
    /// Fractions for train/val/test; must sum to 1 within 1e-6.
    pub split_fractions: (f64, f64, f64),
}

impl Default for SynthesisOptions {
    fn default() -> Self {
        Self { bit_depths: vec![16, 12, 8], seed: 0, split_fractions: (0.8, 0.1, 0.1) }
    }
}

#[derive(Debug, Default)]
pub struct SynthesisSummary {
    pub written: usize,
    /// (input index, reason) for inputs that produced no sample.
    pub skipped: Vec<(usize, String)>,
}

fn center_crop(img: &RealImage, n: usize) -> Result<RealImage> {
    if img.height < n || img.width < n {
        return Err(FpmError::Shape(format!("input image {}x{} smaller than {n}x{n}", img.height, img.width)));
    }
    let sy = (img.height - n) / 2;
    let sx = (img.width - n) / 2;
    Ok(RealImage::from_fn(n, n, |y, x| img.at(sy + y, sx + x)))
}

/// Round every component to f32 so the in-memory field matches what the
/// on-disk object stores; stacks are then derived from exactly that field.
fn round_to_f32(field: &ComplexField) -> ComplexField {
    ComplexField {
        height: field.height,
        width: field.width,
        data: field.data.iter().map(|z| Complex64::new(z.re as f32 as f64, z.im as f32 as f64)).collect(),
    }
}

fn round_stack_to_f32(stack: &MeasurementStack) -> MeasurementStack {
    MeasurementStack {
        geometry: stack.geometry.clone(),
        led_order: stack.led_order.clone(),
        bit_depth: stack.bit_depth,
        images: stack
            .images
            .iter()
            .map(|img| RealImage {
                height: img.height,
                width: img.width,
                data: img.data.iter().map(|&v| v as f32 as f64).collect(),
            })
            .collect(),
    }
}

/// Synthesize a dataset: per input pair, normalize amplitude and phase,
/// form the object, render the ideal stack plus one quantized stack per
/// requested bit depth, and write everything under `out_dir` along with a
/// manifest carrying the split assignment.
pub fn synthesize_dataset(
    amp_images: &[RealImage],
    phase_images: &[RealImage],
    geometry: &SystemGeometry,
    opts: &SynthesisOptions,
    out_dir: &Path,
) -> Result<(DatasetManifest, SynthesisSummary)> {
    if amp_images.len() != phase_images.len() {
        return Err(FpmError::Shape(format!(
            "{} amplitude images vs {} phase images",
            amp_images.len(),
            phase_images.len()
        )));
    }
    geometry.validate()?;
    let (ft, fv, fs) = opts.split_fractions;
    if (ft + fv + fs - 1.0).abs() > 1e-6 || ft < 0.0 || fv < 0.0 || fs < 0.0 {
        return Err(FpmError::Numerical("split fractions must be nonnegative and sum to 1".into()));
    }
    for &b in &opts.bit_depths {
        if !matches!(b, 8 | 12 | 16) {
            return Err(FpmError::Numerical(format!("unsupported bit depth {b}")));
        }
    }

    fs::create_dir_all(out_dir.join("objects"))?;
    fs::create_dir_all(out_dir.join("stacks"))?;

    let n = geometry.obj_size_px;
    let mut summary = SynthesisSummary::default();
    let mut entries: Vec<SampleEntry> = Vec::new();

    for (i, (amp, phase)) in amp_images.iter().zip(phase_images).enumerate() {
        let amp_c = center_crop(amp, n)?;
        let phase_c = center_crop(phase, n)?;
        let gt = match GroundTruthObject::from_images(&amp_c, &phase_c) {
            Ok(gt) => gt,
            Err(FpmError::Numerical(reason)) => {
                summary.skipped.push((i, reason));
                continue;
            }
            Err(e) => return Err(e),
        };
        let field = round_to_f32(&gt.field);
        let ideal = round_stack_to_f32(&forward_stack(&field, geometry)?);

        let id = format!("sample_{i:04}");
        let object_rel = PathBuf::from(format!("objects/{id}.cfld"));
        let ideal_rel = PathBuf::from(format!("stacks/{id}_ideal.fpmd"));
        io::write_cfld(&out_dir.join(&object_rel), &field)?;
        io::write_fpmd(&out_dir.join(&ideal_rel), &ideal)?;

        let mut stacks = BTreeMap::new();
        for &bits in &opts.bit_depths {
            let quant = quantize_stack(&ideal, bits)?;
            let rel = PathBuf::from(format!("stacks/{id}_b{bits:02}.fpmd"));
            io::write_fpmd(&out_dir.join(&rel), &quant)?;
            stacks.insert(bits, rel);
        }
        entries.push(SampleEntry { id, object: object_rel, ideal: ideal_rel, stacks, split: Split::Train });
        summary.written += 1;
    }

    // Deterministic split: shuffle written samples, then cut by fractions.
    let mut order: Vec<usize> = (0..entries.len()).collect();
    let mut rng = ChaCha20Rng::seed_from_u64(opts.seed);
    order.shuffle(&mut rng);
    let n_train = (ft * entries.len() as f64).round() as usize;
    let n_val = (fv * entries.len() as f64).round() as usize;
    for (rank, &idx) in order.iter().enumerate() {
        entries[idx].split = if rank < n_train {
            Split::Train
        } else if rank < n_train + n_val.min(entries.len() - n_train) {
            Split::Val
        } else {
            Split::Test
        };
    }

    let manifest = DatasetManifest {
        geometry: geometry.clone(),
        led_order: led_order(geometry)?,
        bit_depths: opts.bit_depths.clone(),
        seed: opts.seed,
        samples: entries,
    };
    io::write_json(&out_dir.join("manifest.json"), &manifest)?;
    Ok((manifest, summary))
}

/// One sample pulled off disk for training or evaluation.
#[derive(Debug, Clone)]
pub struct LoadedSample {
    pub id: String,
    pub stack: MeasurementStack,
    pub gt: ComplexField,
}

/// Load every sample of a split at the given bit depth (0 = ideal stack).
pub fn load_split(
    manifest: &DatasetManifest,
    dir: &Path,
    split: Split,
    bit_depth: u8,
) -> Result<Vec<LoadedSample>> {
    manifest
        .in_split(split)
        .map(|entry| {
            let stack_rel = if bit_depth == 0 {
                &entry.ideal
            } else {
                entry.stacks.get(&bit_depth).ok_or_else(|| {
                    FpmError::Format(format!("sample {} has no {bit_depth}-bit stack", entry.id))
                })?
            };
            Ok(LoadedSample {
                id: entry.id.clone(),
                stack: io::read_fpmd(&dir.join(stack_rel))?,
                gt: io::read_cfld(&dir.join(&entry.object))?,
            })
        })
        .collect()
}
