//! On-disk formats: ".cfld" complex fields, ".fpmd" measurement stacks
//! (with a JSON sidecar carrying geometry and LED order), and ".lwgw"
//! network weights (with a JSON sidecar carrying the model config).

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::error::{FpmError, Result};
use crate::field::{ComplexField, RealImage};
use crate::forward::{code_to_value, quantized_code, MeasurementStack};
use crate::geometry::SystemGeometry;
use crate::lwgnet::{LwgNetParams, ModelMeta, STAGE_TENSORS};

const CFLD_MAGIC: &[u8; 4] = b"CFLD";
const FPMD_MAGIC: &[u8; 4] = b"FPMD";
const LWGW_MAGIC: &[u8; 4] = b"LWGW";

/// Write bytes to a temp file in the target directory, then rename into
/// place so readers never observe partial files.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = tmp_path(path);
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

fn tmp_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".tmp");
    path.with_file_name(name)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    atomic_write(path, &bytes)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = fs::read(path)?;
    Ok(serde_json::from_slice(&bytes)?)
}

fn put_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn put_f32(buf: &mut Vec<u8>, v: f32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    what: &'static str,
}

impl<'a> Cursor<'a> {
    fn new(bytes: &'a [u8], what: &'static str) -> Self {
        Self { bytes, pos: 0, what }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(FpmError::Format(format!("{}: truncated file", self.what)));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn magic(&mut self, expect: &[u8; 4]) -> Result<()> {
        let got = self.take(4)?;
        if got != expect {
            return Err(FpmError::Format(format!("{}: bad magic {:?}", self.what, got)));
        }
        Ok(())
    }

    fn version(&mut self, expect: u8) -> Result<()> {
        let got = self.u8()?;
        if got != expect {
            return Err(FpmError::Format(format!("{}: unsupported version {got}", self.what)));
        }
        Ok(())
    }

    fn done(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(FpmError::Format(format!("{}: {} trailing bytes", self.what, self.bytes.len() - self.pos)));
        }
        Ok(())
    }
}

pub fn write_cfld(path: &Path, field: &ComplexField) -> Result<()> {
    let mut buf = Vec::with_capacity(13 + field.data.len() * 8);
    buf.extend_from_slice(CFLD_MAGIC);
    buf.push(1);
    put_u32(&mut buf, field.height as u32);
    put_u32(&mut buf, field.width as u32);
    for z in &field.data {
        put_f32(&mut buf, z.re as f32);
        put_f32(&mut buf, z.im as f32);
    }
    atomic_write(path, &buf)
}

pub fn read_cfld(path: &Path) -> Result<ComplexField> {
    let bytes = fs::read(path)?;
    let mut c = Cursor::new(&bytes, "cfld");
    c.magic(CFLD_MAGIC)?;
    c.version(1)?;
    let h = c.u32()? as usize;
    let w = c.u32()? as usize;
    if h == 0 || w == 0 {
        return Err(FpmError::Format("cfld: zero dimension".into()));
    }
    let mut data = Vec::with_capacity(h * w);
    for _ in 0..h * w {
        let re = c.f32()? as f64;
        let im = c.f32()? as f64;
        data.push(Complex64::new(re, im));
    }
    c.done()?;
    Ok(ComplexField { height: h, width: w, data })
}

/// Sidecar metadata stored next to every ".fpmd" stack.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StackSidecar {
    pub geometry: SystemGeometry,
    pub led_order: Vec<(u32, u32)>,
    /// Stack-wide quantization scale; present when the payload is u16 codes.
    pub scale: Option<f64>,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".json");
    path.with_file_name(name)
}

pub fn write_fpmd(path: &Path, stack: &MeasurementStack) -> Result<()> {
    stack.validate()?;
    let m = stack.geometry.meas_size_px;
    let l = stack.led_count();
    let quantized = stack.bit_depth > 0;
    let scale = if quantized { Some(stack.max_value()) } else { None };
    if quantized && scale == Some(0.0) {
        return Err(FpmError::Numerical("cannot serialize an all-zero quantized stack".into()));
    }

    let mut buf = Vec::with_capacity(15 + l * m * m * 4);
    buf.extend_from_slice(FPMD_MAGIC);
    buf.push(1);
    put_u32(&mut buf, l as u32);
    put_u32(&mut buf, m as u32);
    buf.push(stack.bit_depth);
    buf.push(quantized as u8);
    for img in &stack.images {
        if quantized {
            let s = scale.unwrap();
            for &v in &img.data {
                let code = quantized_code(v, s, stack.bit_depth);
                buf.extend_from_slice(&code.to_le_bytes());
            }
        } else {
            for &v in &img.data {
                put_f32(&mut buf, v as f32);
            }
        }
    }
    atomic_write(path, &buf)?;
    write_json(
        &sidecar_path(path),
        &StackSidecar { geometry: stack.geometry.clone(), led_order: stack.led_order.clone(), scale },
    )
}

pub fn read_fpmd(path: &Path) -> Result<MeasurementStack> {
    let sidecar: StackSidecar = read_json(&sidecar_path(path)).map_err(|e| match e {
        FpmError::Io(io) => FpmError::Format(format!("fpmd sidecar missing: {io}")),
        other => other,
    })?;
    let bytes = fs::read(path)?;
    let mut c = Cursor::new(&bytes, "fpmd");
    c.magic(FPMD_MAGIC)?;
    c.version(1)?;
    let l = c.u32()? as usize;
    let m = c.u32()? as usize;
    let bit_depth = c.u8()?;
    let dtype = c.u8()?;
    if l != sidecar.geometry.led_count() || m != sidecar.geometry.meas_size_px {
        return Err(FpmError::Format(format!("fpmd: header {l}x{m}x{m} disagrees with sidecar geometry")));
    }
    if sidecar.led_order.len() != l {
        return Err(FpmError::Format("fpmd: sidecar LED order length mismatch".into()));
    }
    let mut images = Vec::with_capacity(l);
    for _ in 0..l {
        let mut data = Vec::with_capacity(m * m);
        match dtype {
            0 => {
                for _ in 0..m * m {
                    data.push(c.f32()? as f64);
                }
            }
            1 => {
                let scale = sidecar
                    .scale
                    .ok_or_else(|| FpmError::Format("fpmd: u16 payload without sidecar scale".into()))?;
                for _ in 0..m * m {
                    data.push(code_to_value(c.u16()?, scale, bit_depth));
                }
            }
            other => return Err(FpmError::Format(format!("fpmd: unknown dtype {other}"))),
        }
        images.push(RealImage { height: m, width: m, data });
    }
    c.done()?;
    let stack = MeasurementStack {
        geometry: sidecar.geometry,
        led_order: sidecar.led_order,
        bit_depth,
        images,
    };
    stack.validate()?;
    Ok(stack)
}

pub fn write_lwgw(path: &Path, params: &LwgNetParams) -> Result<()> {
    let meta = &params.meta;
    let mut buf = Vec::new();
    buf.extend_from_slice(LWGW_MAGIC);
    buf.push(1);
    put_u32(&mut buf, meta.stages as u32);
    put_u32(&mut buf, meta.channels as u32);
    put_u32(&mut buf, meta.led_count as u32);
    for tensor in &params.tensors {
        put_u32(&mut buf, tensor.len() as u32);
        put_u32(&mut buf, tensor[0].height as u32);
        put_u32(&mut buf, tensor[0].width as u32);
        for f in tensor {
            for z in &f.data {
                put_f32(&mut buf, z.re as f32);
                put_f32(&mut buf, z.im as f32);
            }
        }
    }
    atomic_write(path, &buf)?;
    write_json(&sidecar_path(path), meta)
}

pub fn read_lwgw(path: &Path) -> Result<LwgNetParams> {
    let meta: ModelMeta = read_json(&sidecar_path(path)).map_err(|e| match e {
        FpmError::Io(io) => FpmError::Format(format!("lwgw sidecar missing: {io}")),
        other => other,
    })?;
    let bytes = fs::read(path)?;
    let mut c = Cursor::new(&bytes, "lwgw");
    c.magic(LWGW_MAGIC)?;
    c.version(1)?;
    let stages = c.u32()? as usize;
    let channels = c.u32()? as usize;
    let leds = c.u32()? as usize;
    if stages != meta.stages || channels != meta.channels || leds != meta.led_count {
        return Err(FpmError::Format("lwgw: header disagrees with sidecar config".into()));
    }
    let mut tensors = Vec::with_capacity(stages * STAGE_TENSORS);
    for _ in 0..stages * STAGE_TENSORS {
        let ch = c.u32()? as usize;
        let h = c.u32()? as usize;
        let w = c.u32()? as usize;
        if ch == 0 || h == 0 || w == 0 {
            return Err(FpmError::Format("lwgw: empty tensor".into()));
        }
        let mut tensor = Vec::with_capacity(ch);
        for _ in 0..ch {
            let mut data = Vec::with_capacity(h * w);
            for _ in 0..h * w {
                let re = c.f32()? as f64;
                let im = c.f32()? as f64;
                data.push(Complex64::new(re, im));
            }
            tensor.push(ComplexField { height: h, width: w, data });
        }
        tensors.push(tensor);
    }
    c.done()?;
    Ok(LwgNetParams { meta, tensors })
}

/// Buffered CSV writer for objective traces and metric logs.
pub fn write_csv(path: &Path, header: &str, rows: impl IntoIterator<Item = String>) -> Result<()> {
    let tmp = tmp_path(path);
    {
        let file = fs::File::create(&tmp)?;
        let mut w = BufWriter::new(file);
        writeln!(w, "{header}")?;
        for row in rows {
            writeln!(w, "{row}")?;
        }
        w.flush()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}
