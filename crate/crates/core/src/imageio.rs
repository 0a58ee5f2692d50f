//! Binary PGM (P5) and PPM (P6) images, 8 bits per sample.

use std::fs;
use std::path::Path;

use crate::error::{FcanError, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if pixels.len() != width * height {
            return Err(FcanError::shape(
                "gray image",
                format!("{width}x{height} needs {} pixels, got {}", width * height, pixels.len()),
            ));
        }
        Ok(GrayImage {
            width,
            height,
            pixels,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }

    pub fn write_pgm(&self, path: &Path) -> Result<()> {
        write_pnm(path, b"P5", self.width, self.height, &self.pixels)
    }

    pub fn read_pgm(path: &Path) -> Result<Self> {
        Ok(Self::read_pgm_with_comments(path)?.0)
    }

    /// Writes a PGM whose header carries `# {comment}`.
    pub fn write_pgm_with_comment(&self, path: &Path, comment: &str) -> Result<()> {
        let magic = format!("P5\n# {comment}");
        write_pnm(path, magic.as_bytes(), self.width, self.height, &self.pixels)
    }

    /// Reads a PGM and the text of its header comments.
    pub fn read_pgm_with_comments(path: &Path) -> Result<(Self, Vec<String>)> {
        let (w, h, pixels, comments) = read_pnm(path, b"P5", 1)?;
        Ok((GrayImage::new(w, h, pixels)?, comments))
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RgbImage {
    width: usize,
    height: usize,
    /// Interleaved RGB.
    pixels: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if pixels.len() != 3 * width * height {
            return Err(FcanError::shape(
                "rgb image",
                format!("{width}x{height} needs {} bytes, got {}", 3 * width * height, pixels.len()),
            ));
        }
        Ok(RgbImage {
            width,
            height,
            pixels,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn write_ppm(&self, path: &Path) -> Result<()> {
        write_pnm(path, b"P6", self.width, self.height, &self.pixels)
    }

    pub fn read_ppm(path: &Path) -> Result<Self> {
        let (w, h, pixels, _) = read_pnm(path, b"P6", 3)?;
        RgbImage::new(w, h, pixels)
    }
}

fn write_pnm(path: &Path, magic: &[u8], w: usize, h: usize, pixels: &[u8]) -> Result<()> {
    let mut buf = Vec::with_capacity(pixels.len() + 20);
    buf.extend_from_slice(magic);
    buf.extend_from_slice(format!("\n{w} {h}\n255\n").as_bytes());
    buf.extend_from_slice(pixels);
    fs::write(path, buf).map_err(|e| FcanError::io(path, e))
}

type Pnm = (usize, usize, Vec<u8>, Vec<String>);

fn read_pnm(path: &Path, magic: &[u8], channels: usize) -> Result<Pnm> {
    let buf = fs::read(path).map_err(|e| FcanError::io(path, e))?;
    if !buf.starts_with(magic) {
        return Err(FcanError::format(
            path,
            format!("expected {} header", String::from_utf8_lossy(magic)),
        ));
    }
    // Three whitespace-separated header fields, with '#' comments allowed.
    let mut pos = magic.len();
    let mut fields = [0usize; 3];
    let mut comments = Vec::new();
    for field in fields.iter_mut() {
        loop {
            match buf.get(pos) {
                Some(b'#') => {
                    let start = pos + 1;
                    while buf.get(pos).is_some_and(|&c| c != b'\n') {
                        pos += 1;
                    }
                    comments.push(String::from_utf8_lossy(&buf[start..pos]).trim().to_string());
                }
                Some(c) if c.is_ascii_whitespace() => pos += 1,
                _ => break,
            }
        }
        let start = pos;
        while buf.get(pos).is_some_and(|c| c.is_ascii_digit()) {
            pos += 1;
        }
        *field = std::str::from_utf8(&buf[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| FcanError::format(path, "malformed header"))?;
    }
    let [w, h, maxval] = fields;
    if maxval != 255 {
        return Err(FcanError::format(path, format!("unsupported maxval {maxval}")));
    }
    pos += 1; // single whitespace byte before raster
    let expected = w * h * channels;
    let raster = buf.get(pos..).unwrap_or(&[]);
    if raster.len() != expected {
        return Err(FcanError::format(
            path,
            format!("expected {expected} raster bytes for {w}x{h}, found {}", raster.len()),
        ));
    }
    Ok((w, h, raster.to_vec(), comments))
}
