use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use fpm_core::RealImage;

use crate::error::{CliError, CliResult};

/// Decode an 8- or 16-bit grayscale PNG into raw sample values.
pub fn read_gray_png(path: &Path) -> CliResult<RealImage> {
    let file = File::open(path)
        .map_err(|e| CliError::input(format!("cannot open {}: {e}", path.display())))?;
    let decoder = png::Decoder::new(file);
    let mut reader = decoder
        .read_info()
        .map_err(|e| CliError::format(format!("{}: {e}", path.display())))?;
    let mut buf = vec![0u8; reader.output_buffer_size()];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| CliError::format(format!("{}: {e}", path.display())))?;
    if info.color_type != png::ColorType::Grayscale {
        return Err(CliError::format(format!(
            "{}: expected grayscale PNG, got {:?}",
            path.display(),
            info.color_type
        )));
    }
    let (w, h) = (info.width as usize, info.height as usize);
    let data: Vec<f64> = match info.bit_depth {
        png::BitDepth::Eight => buf[..w * h].iter().map(|&v| v as f64).collect(),
        png::BitDepth::Sixteen => buf[..w * h * 2]
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]) as f64)
            .collect(),
        other => {
            return Err(CliError::format(format!("{}: unsupported bit depth {other:?}", path.display())))
        }
    };
    Ok(RealImage { height: h, width: w, data })
}

/// Write an 8-bit grayscale PNG (no alpha) from already-quantized bytes.
pub fn write_gray_png(path: &Path, width: usize, height: usize, bytes: &[u8]) -> CliResult<()> {
    let file = File::create(path)
        .map_err(|e| CliError::input(format!("cannot create {}: {e}", path.display())))?;
    let mut encoder = png::Encoder::new(BufWriter::new(file), width as u32, height as u32);
    encoder.set_color(png::ColorType::Grayscale);
    encoder.set_depth(png::BitDepth::Eight);
    let mut writer = encoder
        .write_header()
        .map_err(|e| CliError::format(format!("{}: {e}", path.display())))?;
    writer
        .write_image_data(bytes)
        .map_err(|e| CliError::format(format!("{}: {e}", path.display())))?;
    Ok(())
}
