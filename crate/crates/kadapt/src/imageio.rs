//! Binary PGM (P5) and PPM (P6) codecs plus the ingestion geometry:
//! center-crop to square, bilinear resize, channel adaptation, [0, 1]
//! scaling. These two formats cover the toolkit's needs (the synthetic
//! benchmark emits PGM) without an image stack; both are byte-deterministic
//! to write.

use std::fs;
use std::path::Path;

use kadapt_core::tensor::Tensor;

use crate::error::{HarnessError, Result};

/// A decoded image: `channels` planes of `height x width` values in [0, 1].
pub struct DecodedImage {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    /// Planar layout (C, H, W), row-major.
    pub data: Vec<f64>,
}

/// Write an 8-bit binary PGM from values in [0, 1] (clamped, rounded).
pub fn write_pgm(path: &Path, width: usize, height: usize, values: &[f64]) -> Result<()> {
    if values.len() != width * height {
        return Err(HarnessError::validation(format!(
            "pgm write: {} values for {}x{}",
            values.len(),
            width,
            height
        )));
    }
    let mut bytes = format!("P5\n{width} {height}\n255\n").into_bytes();
    bytes.extend(values.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    fs::write(path, bytes)?;
    Ok(())
}

struct HeaderParser<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> HeaderParser<'a> {
    fn skip_whitespace_and_comments(&mut self) {
        while self.pos < self.bytes.len() {
            let b = self.bytes[self.pos];
            if b.is_ascii_whitespace() {
                self.pos += 1;
            } else if b == b'#' {
                while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                    self.pos += 1;
                }
            } else {
                break;
            }
        }
    }

    fn number(&mut self) -> Option<usize> {
        self.skip_whitespace_and_comments();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if self.pos == start {
            return None;
        }
        std::str::from_utf8(&self.bytes[start..self.pos]).ok()?.parse().ok()
    }
}

/// Decode a binary PGM (P5) or PPM (P6) file.
pub fn decode(path: &Path) -> Result<DecodedImage> {
    let bytes = fs::read(path)
        .map_err(|e| HarnessError::validation(format!("unreadable image {}: {e}", path.display())))?;
    decode_bytes(&bytes).map_err(|e| {
        HarnessError::validation(format!("unreadable image {}: {e}", path.display()))
    })
}

fn decode_bytes(bytes: &[u8]) -> std::result::Result<DecodedImage, String> {
    if bytes.len() < 2 {
        return Err("truncated header".into());
    }
    let channels = match &bytes[..2] {
        b"P5" => 1,
        b"P6" => 3,
        _ => return Err("not a binary PGM/PPM (expected P5 or P6 magic)".into()),
    };
    let mut parser = HeaderParser { bytes, pos: 2 };
    let width = parser.number().ok_or("missing width")?;
    let height = parser.number().ok_or("missing height")?;
    let maxval = parser.number().ok_or("missing maxval")?;
    if maxval == 0 || maxval > 255 {
        return Err(format!("unsupported maxval {maxval} (only 8-bit supported)"));
    }
    if width == 0 || height == 0 {
        return Err("empty image".into());
    }
    // exactly one whitespace byte separates the header from the raster
    let raster_start = parser.pos + 1;
    let expected = width * height * channels;
    let raster = bytes
        .get(raster_start..raster_start + expected)
        .ok_or_else(|| format!("truncated raster: expected {expected} bytes"))?;
    // interleaved (PPM) -> planar; PGM is already planar with one plane
    let mut data = vec![0.0; expected];
    let scale = 1.0 / maxval as f64;
    for y in 0..height {
        for x in 0..width {
            for c in 0..channels {
                let v = raster[(y * width + x) * channels + c] as f64 * scale;
                data[c * height * width + y * width + x] = v;
            }
        }
    }
    Ok(DecodedImage { channels, height, width, data })
}

/// Crop to the centered square, bilinearly resize to `side`, adapt to
/// `channels` (grayscale replicates; RGB collapses by BT.601 luma), and
/// return a (C, side, side) tensor.
pub fn to_model_tensor(image: &DecodedImage, side: usize, channels: usize) -> Result<Tensor> {
    let square = min_side(image);
    let x0 = (image.width - square) / 2;
    let y0 = (image.height - square) / 2;

    let plane = |c: usize, y: usize, x: usize| -> f64 {
        image.data[c * image.height * image.width + (y0 + y) * image.width + (x0 + x)]
    };

    // resample each source plane to side x side
    let mut planes: Vec<Vec<f64>> = Vec::with_capacity(image.channels);
    for c in 0..image.channels {
        if square == side {
            let mut p = vec![0.0; side * side];
            for y in 0..side {
                for x in 0..side {
                    p[y * side + x] = plane(c, y, x);
                }
            }
            planes.push(p);
        } else {
            planes.push(bilinear(&|y, x| plane(c, y, x), square, side));
        }
    }

    let adapted: Vec<Vec<f64>> = match (image.channels, channels) {
        (a, b) if a == b => planes,
        (1, 3) => vec![planes[0].clone(), planes[0].clone(), planes[0].clone()],
        (3, 1) => {
            let luma: Vec<f64> = (0..side * side)
                .map(|i| 0.299 * planes[0][i] + 0.587 * planes[1][i] + 0.114 * planes[2][i])
                .collect();
            vec![luma]
        }
        (a, b) => {
            return Err(HarnessError::validation(format!(
                "cannot adapt {a}-channel image to {b} channels"
            )));
        }
    };
    let mut data = Vec::with_capacity(channels * side * side);
    for p in adapted {
        data.extend_from_slice(&p);
    }
    Ok(Tensor::new(vec![channels, side, side], data)?)
}

fn min_side(image: &DecodedImage) -> usize {
    image.width.min(image.height)
}

fn bilinear(src: &dyn Fn(usize, usize) -> f64, src_side: usize, dst_side: usize) -> Vec<f64> {
    let mut out = vec![0.0; dst_side * dst_side];
    let scale = src_side as f64 / dst_side as f64;
    for y in 0..dst_side {
        let sy = ((y as f64 + 0.5) * scale - 0.5).clamp(0.0, (src_side - 1) as f64);
        let y0 = sy.floor() as usize;
        let y1 = (y0 + 1).min(src_side - 1);
        let fy = sy - y0 as f64;
        for x in 0..dst_side {
            let sx = ((x as f64 + 0.5) * scale - 0.5).clamp(0.0, (src_side - 1) as f64);
            let x0 = sx.floor() as usize;
            let x1 = (x0 + 1).min(src_side - 1);
            let fx = sx - x0 as f64;
            let a = src(y0, x0) * (1.0 - fx) + src(y0, x1) * fx;
            let b = src(y1, x0) * (1.0 - fx) + src(y1, x1) * fx;
            out[y * dst_side + x] = a * (1.0 - fy) + b * fy;
        }
    }
    out
}
