//! Flow fields, frames, Middlebury `.flo` I/O and flow color coding.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{GimmError, Result};
use crate::tensor::Tensor;

pub const FLO_MAGIC: &[u8; 4] = b"PIEH";

/// Per-pixel displacement map in pixels, `H×W×2` with channel 0 horizontal (u)
/// and channel 1 vertical (v).
#[derive(Clone, Debug, PartialEq)]
pub struct FlowField(Tensor);

impl FlowField {
    pub fn from_tensor(t: Tensor) -> Result<Self> {
        if !t.is_hwc() || t.shape()[2] != 2 {
            return Err(GimmError::ShapeMismatch(format!(
                "flow field must be HxWx2, got {:?}",
                t.shape()
            )));
        }
        let (h, w, _) = t.hwc();
        if h == 0 || w == 0 {
            return Err(GimmError::DegenerateDims { h, w });
        }
        if !t.all_finite() {
            return Err(GimmError::Data("flow field contains non-finite values".into()));
        }
        Ok(Self(t))
    }

    pub fn zeros(h: usize, w: usize) -> Self {
        Self(Tensor::zeros(&[h, w, 2]))
    }

    pub fn constant(h: usize, w: usize, u: f64, v: f64) -> Self {
        Self(Tensor::from_fn_hwc(h, w, 2, |_, _, c| if c == 0 { u } else { v }))
    }

    pub fn from_fn(h: usize, w: usize, mut f: impl FnMut(usize, usize) -> (f64, f64)) -> Self {
        let mut data = Vec::with_capacity(h * w * 2);
        for y in 0..h {
            for x in 0..w {
                let (u, v) = f(y, x);
                data.push(u);
                data.push(v);
            }
        }
        Self(Tensor::new(&[h, w, 2], data).expect("sized by construction"))
    }

    pub fn height(&self) -> usize {
        self.0.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.0.shape()[1]
    }

    pub fn at(&self, y: usize, x: usize) -> (f64, f64) {
        (self.0.at(y, x, 0), self.0.at(y, x, 1))
    }

    pub fn as_tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor {
        self.0
    }

    pub fn scaled(&self, k: f64) -> Self {
        Self(self.0.scale(k))
    }

    pub fn neg(&self) -> Self {
        Self(self.0.map(|v| -v))
    }

    pub fn add(&self, other: &Self) -> Self {
        Self(self.0.add(&other.0))
    }

    pub fn sub(&self, other: &Self) -> Self {
        Self(self.0.sub(&other.0))
    }

    pub fn same_dims(&self, other: &Self) -> bool {
        self.0.same_shape(&other.0)
    }

    pub(crate) fn expect_same_dims(&self, other: &Self, what: &str) -> Result<()> {
        self.0.expect_same_shape(&other.0, what)
    }

    pub fn crop(&self, y0: usize, x0: usize, h: usize, w: usize) -> Result<Self> {
        Self::from_tensor(self.0.crop(y0, x0, h, w)?)
    }

    /// Largest per-component absolute value.
    pub fn max_abs(&self) -> f64 {
        self.0.max_abs()
    }

    pub fn max_magnitude(&self) -> f64 {
        self.0
            .data()
            .chunks_exact(2)
            .map(|p| p[0].hypot(p[1]))
            .fold(0.0, f64::max)
    }
}

/// RGB frame, `H×W×3` with values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameImage(Tensor);

impl FrameImage {
    /// Wraps a tensor, clipping values into `[0, 1]`.
    pub fn from_tensor(t: Tensor) -> Result<Self> {
        if !t.is_hwc() || t.shape()[2] != 3 {
            return Err(GimmError::ShapeMismatch(format!(
                "frame must be HxWx3, got {:?}",
                t.shape()
            )));
        }
        if !t.all_finite() {
            return Err(GimmError::Data("frame contains non-finite values".into()));
        }
        Ok(Self(t.map(|v| v.clamp(0.0, 1.0))))
    }

    pub fn constant(h: usize, w: usize, value: f64) -> Self {
        Self(Tensor::full(&[h, w, 3], value.clamp(0.0, 1.0)))
    }

    pub fn height(&self) -> usize {
        self.0.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.0.shape()[1]
    }

    pub fn as_tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor {
        self.0
    }

    pub fn crop(&self, y0: usize, x0: usize, h: usize, w: usize) -> Result<Self> {
        Ok(Self(self.0.crop(y0, x0, h, w)?))
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let (h, w, _) = self.0.hwc();
        let bytes: Vec<u8> = self
            .0
            .data()
            .iter()
            .map(|v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
            .collect();
        let img = image::RgbImage::from_raw(w as u32, h as u32, bytes)
            .expect("buffer sized from the frame");
        img.save_with_format(path, image::ImageFormat::Png)
            .map_err(|e| GimmError::io(path, std::io::Error::other(e)))
    }

    pub fn load_png(path: &Path) -> Result<Self> {
        let img = image::open(path)
            .map_err(|e| GimmError::io(path, std::io::Error::other(e)))?
            .to_rgb8();
        let (w, h) = img.dimensions();
        let data = img.into_raw().into_iter().map(|b| b as f64 / 255.0).collect();
        Self::from_tensor(Tensor::new(&[h as usize, w as usize, 3], data)?)
    }
}

/// Reads a Middlebury `.flo` file.
pub fn read_flo(path: &Path) -> Result<FlowField> {
    let file = File::open(path).map_err(|e| GimmError::io(path, e))?;
    let mut bytes = Vec::new();
    BufReader::new(file)
        .read_to_end(&mut bytes)
        .map_err(|e| GimmError::io(path, e))?;
    decode_flo(&bytes)
}

/// Decodes `.flo` bytes: magic, width, height, then interleaved `(u, v)` f32 LE.
pub fn decode_flo(bytes: &[u8]) -> Result<FlowField> {
    if bytes.len() < 4 {
        return Err(GimmError::Truncated {
            expected: 12,
            found: bytes.len(),
        });
    }
    let magic: [u8; 4] = bytes[0..4].try_into().unwrap();
    if &magic != FLO_MAGIC {
        return Err(GimmError::BadMagic { found: magic });
    }
    if bytes.len() < 12 {
        return Err(GimmError::Truncated {
            expected: 12,
            found: bytes.len(),
        });
    }
    let w = i32::from_le_bytes(bytes[4..8].try_into().unwrap());
    let h = i32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if w <= 0 || h <= 0 {
        return Err(GimmError::Data(format!("invalid .flo dimensions {w}x{h}")));
    }
    let (w, h) = (w as usize, h as usize);
    let needed = h * w * 2 * 4;
    let payload = &bytes[12..];
    if payload.len() < needed {
        return Err(GimmError::Truncated {
            expected: needed,
            found: payload.len(),
        });
    }
    let data = payload[..needed]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    FlowField::from_tensor(Tensor::new(&[h, w, 2], data)?)
}

pub fn encode_flo(flow: &FlowField) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + flow.as_tensor().len() * 4);
    out.extend_from_slice(FLO_MAGIC);
    out.extend_from_slice(&(flow.width() as i32).to_le_bytes());
    out.extend_from_slice(&(flow.height() as i32).to_le_bytes());
    for &v in flow.as_tensor().data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

pub fn write_flo(flow: &FlowField, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| GimmError::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(&encode_flo(flow))
        .and_then(|_| w.flush())
        .map_err(|e| GimmError::io(path, e))
}

// Middlebury color wheel segment lengths.
const RY: usize = 15;
const YG: usize = 6;
const GC: usize = 4;
const CB: usize = 11;
const BM: usize = 13;
const MR: usize = 6;

fn color_wheel() -> Vec<[f64; 3]> {
    let mut wheel = Vec::with_capacity(RY + YG + GC + CB + BM + MR);
    for i in 0..RY {
        wheel.push([1.0, i as f64 / RY as f64, 0.0]);
    }
    for i in 0..YG {
        wheel.push([1.0 - i as f64 / YG as f64, 1.0, 0.0]);
    }
    for i in 0..GC {
        wheel.push([0.0, 1.0, i as f64 / GC as f64]);
    }
    for i in 0..CB {
        wheel.push([0.0, 1.0 - i as f64 / CB as f64, 1.0]);
    }
    for i in 0..BM {
        wheel.push([i as f64 / BM as f64, 0.0, 1.0]);
    }
    for i in 0..MR {
        wheel.push([1.0, 0.0, 1.0 - i as f64 / MR as f64]);
    }
    wheel
}

/// Color-codes a flow field on the Middlebury wheel: hue follows the flow
/// direction and saturation grows with `|flow| / max_mag`. Zero flow is white.
///
/// `max_mag` defaults to the field's largest magnitude (1.0 for an all-zero field).
pub fn flow_to_rgb(flow: &FlowField, max_mag: Option<f64>) -> FrameImage {
    let wheel = color_wheel();
    let n = wheel.len() as f64;
    let max_mag = match max_mag {
        Some(m) if m > 0.0 => m,
        _ => {
            let m = flow.max_magnitude();
            if m > 0.0 {
                m
            } else {
                1.0
            }
        }
    };
    let (h, w) = (flow.height(), flow.width());
    let mut data = Vec::with_capacity(h * w * 3);
    for p in flow.as_tensor().data().chunks_exact(2) {
        let (u, v) = (p[0] / max_mag, p[1] / max_mag);
        let rad = u.hypot(v);
        let hue = v.atan2(u).rem_euclid(std::f64::consts::TAU) / std::f64::consts::TAU;
        let fk = hue * n;
        let k0 = (fk.floor() as usize) % wheel.len();
        let k1 = (k0 + 1) % wheel.len();
        let f = fk - fk.floor();
        for c in 0..3 {
            let col = (1.0 - f) * wheel[k0][c] + f * wheel[k1][c];
            let col = if rad <= 1.0 {
                1.0 - rad * (1.0 - col)
            } else {
                col * 0.75
            };
            data.push(col);
        }
    }
    FrameImage::from_tensor(Tensor::new(&[h, w, 3], data).expect("sized by construction"))
        .expect("wheel colors are finite")
}
