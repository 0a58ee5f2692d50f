use std::fs;
use std::path::Path;

use crate::error::{FcanError, Result};
use crate::imageio::GrayImage;

/// Default linear-rescaling bound: flow of +-20 px maps onto the 8-bit range.
pub const DEFAULT_FLOW_BOUND: f64 = 20.0;

/// Dense per-pixel displacement (pixels per frame). Row-major, `u` along x.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowField {
    width: usize,
    height: usize,
    u: Vec<f64>,
    v: Vec<f64>,
}

impl FlowField {
    pub fn new(width: usize, height: usize, u: Vec<f64>, v: Vec<f64>) -> Result<Self> {
        let n = width * height;
        if u.len() != n || v.len() != n {
            return Err(FcanError::shape(
                "flow",
                format!(
                    "{width}x{height} field needs {n} values per component, got u={} v={}",
                    u.len(),
                    v.len()
                ),
            ));
        }
        if u.iter().chain(&v).any(|x| !x.is_finite()) {
            return Err(FcanError::arg("flow", "non-finite displacement"));
        }
        Ok(FlowField {
            width,
            height,
            u,
            v,
        })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        FlowField {
            width,
            height,
            u: vec![0.0; width * height],
            v: vec![0.0; width * height],
        }
    }

    pub fn constant(width: usize, height: usize, du: f64, dv: f64) -> Self {
        FlowField {
            width,
            height,
            u: vec![du; width * height],
            v: vec![dv; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> (f64, f64)) -> Self {
        let mut u = Vec::with_capacity(width * height);
        let mut v = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                let (a, b) = f(x, y);
                u.push(a);
                v.push(b);
            }
        }
        FlowField {
            width,
            height,
            u,
            v,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn u(&self) -> &[f64] {
        &self.u
    }

    pub fn v(&self) -> &[f64] {
        &self.v
    }

    pub fn at(&self, x: usize, y: usize) -> (f64, f64) {
        let i = y * self.width + x;
        (self.u[i], self.v[i])
    }

    pub fn set(&mut self, x: usize, y: usize, d: (f64, f64)) {
        let i = y * self.width + x;
        self.u[i] = d.0;
        self.v[i] = d.1;
    }

    pub fn magnitude(&self, x: usize, y: usize) -> f64 {
        let (a, b) = self.at(x, y);
        a.hypot(b)
    }

    pub fn same_extent(&self, other: &FlowField, op: &'static str) -> Result<()> {
        if self.width != other.width || self.height != other.height {
            return Err(FcanError::shape(
                op,
                format!(
                    "{}x{} vs {}x{}",
                    self.width, self.height, other.width, other.height
                ),
            ));
        }
        Ok(())
    }

    pub fn sub(&self, other: &FlowField) -> Result<FlowField> {
        self.same_extent(other, "flow subtract")?;
        Ok(FlowField {
            width: self.width,
            height: self.height,
            u: self.u.iter().zip(&other.u).map(|(a, b)| a - b).collect(),
            v: self.v.iter().zip(&other.v).map(|(a, b)| a - b).collect(),
        })
    }

    /// Window `[left, left+w) x [top, top+h)`; values are not rescaled.
    pub fn crop(&self, top: usize, left: usize, w: usize, h: usize) -> FlowField {
        FlowField::from_fn(w, h, |x, y| self.at(left + x, top + y))
    }

    pub fn max_abs_diff(&self, other: &FlowField) -> f64 {
        self.u
            .iter()
            .zip(&other.u)
            .chain(self.v.iter().zip(&other.v))
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Raw little-endian f32 storage: `"FLO2"`, width u32, height u32, then
    /// interleaved `(u, v)` pairs in row-major order.
    pub fn write_raw(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::with_capacity(12 + 8 * self.u.len());
        buf.extend_from_slice(b"FLO2");
        buf.extend_from_slice(&(self.width as u32).to_le_bytes());
        buf.extend_from_slice(&(self.height as u32).to_le_bytes());
        for (a, b) in self.u.iter().zip(&self.v) {
            buf.extend_from_slice(&(*a as f32).to_le_bytes());
            buf.extend_from_slice(&(*b as f32).to_le_bytes());
        }
        fs::write(path, buf).map_err(|e| FcanError::io(path, e))
    }

    pub fn read_raw(path: &Path) -> Result<FlowField> {
        let buf = fs::read(path).map_err(|e| FcanError::io(path, e))?;
        if buf.len() < 12 || &buf[..4] != b"FLO2" {
            return Err(FcanError::format(path, "missing FLO2 header"));
        }
        let word = |o: usize| u32::from_le_bytes(buf[o..o + 4].try_into().unwrap()) as usize;
        let (width, height) = (word(4), word(8));
        let expected = 12 + 8 * width * height;
        if buf.len() != expected {
            return Err(FcanError::format(
                path,
                format!("expected {expected} bytes for {width}x{height}, found {}", buf.len()),
            ));
        }
        let mut u = Vec::with_capacity(width * height);
        let mut v = Vec::with_capacity(width * height);
        for pair in buf[12..].chunks_exact(8) {
            u.push(f32::from_le_bytes(pair[..4].try_into().unwrap()) as f64);
            v.push(f32::from_le_bytes(pair[4..].try_into().unwrap()) as f64);
        }
        FlowField::new(width, height, u, v)
    }
}

/// Maps one flow component to 8 bits: `clamp(round(128 + c*128/bound), 0, 255)`.
pub fn encode_component(c: f64, bound: f64) -> u8 {
    (128.0 + c * 128.0 / bound).round().clamp(0.0, 255.0) as u8
}

pub fn decode_component(g: u8, bound: f64) -> f64 {
    (g as f64 - 128.0) * bound / 128.0
}

/// Encodes a flow field as a pair of grayscale images (x component, y component).
pub fn encode_gray(flow: &FlowField, bound: f64) -> Result<(GrayImage, GrayImage)> {
    if !(bound > 0.0) {
        return Err(FcanError::arg("encode_gray", format!("bound must be > 0, got {bound}")));
    }
    let enc = |c: &[f64]| c.iter().map(|&x| encode_component(x, bound)).collect::<Vec<_>>();
    Ok((
        GrayImage::new(flow.width, flow.height, enc(&flow.u))?,
        GrayImage::new(flow.width, flow.height, enc(&flow.v))?,
    ))
}

pub fn decode_gray(x: &GrayImage, y: &GrayImage, bound: f64) -> Result<FlowField> {
    if x.width() != y.width() || x.height() != y.height() {
        return Err(FcanError::shape(
            "decode_gray",
            format!(
                "x image {}x{} vs y image {}x{}",
                x.width(),
                x.height(),
                y.width(),
                y.height()
            ),
        ));
    }
    let dec = |img: &GrayImage| {
        img.pixels()
            .iter()
            .map(|&g| decode_component(g, bound))
            .collect::<Vec<_>>()
    };
    FlowField::new(x.width(), x.height(), dec(x), dec(y))
}

/// Encode then decode: the flow as the network sees it after 8-bit storage.
pub fn quantize(flow: &FlowField, bound: f64) -> Result<FlowField> {
    let (x, y) = encode_gray(flow, bound)?;
    decode_gray(&x, &y, bound)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn encode_reference_points() {
        assert_eq!(encode_component(0.0, 20.0), 128);
        assert_eq!(encode_component(20.0, 20.0), 255);
        assert_eq!(encode_component(-20.0, 20.0), 0);
        assert_eq!(encode_component(10.0, 20.0), 192);
        assert_eq!(encode_component(500.0, 20.0), 255);
        assert_eq!(encode_component(-500.0, 20.0), 0);
    }

    #[test]
    fn decode_reference_points() {
        assert_eq!(decode_component(128, 20.0), 0.0);
        assert_eq!(decode_component(255, 20.0), 19.84375);
        assert_eq!(decode_component(0, 20.0), -20.0);
    }

    #[test]
    fn round_trip_within_half_step() {
        let bound = 20.0;
        // In-range means representable without clamping: c*128/bound + 128 < 255.5.
        let top = bound * 127.5 / 128.0;
        let mut c = -bound;
        while c < top {
            let err = (decode_component(encode_component(c, bound), bound) - c).abs();
            assert!(err <= bound / 256.0 + 1e-12, "c={c} err={err}");
            c += 0.001;
        }
    }

    #[test]
    fn raw_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.flo2");
        let f = FlowField::from_fn(5, 3, |x, y| (x as f64 * 0.5, -(y as f64)));
        f.write_raw(&path).unwrap();
        assert_eq!(FlowField::read_raw(&path).unwrap(), f);
        std::fs::write(&path, b"FLO2\x05\x00\x00\x00\x03\x00\x00\x00").unwrap();
        assert!(FlowField::read_raw(&path).is_err());
    }

    #[test]
    fn rejects_bad_extents_and_nan() {
        assert!(FlowField::new(2, 2, vec![0.0; 4], vec![0.0; 3]).is_err());
        assert!(FlowField::new(1, 1, vec![f64::NAN], vec![0.0]).is_err());
    }
}
