//! RGB float images with 8-bit PNG and PFM storage.

use std::io::{BufRead, BufReader};
use std::path::Path;

use crate::error::{HsrError, Result};
use crate::fsutil::write_atomic;

/// Row-major RGB image, channels interleaved, nominally in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn filled(width: usize, height: usize, rgb: [f64; 3]) -> Self {
        let data = (0..width * height).flat_map(|_| rgb).collect();
        Self { width, height, data }
    }

    pub fn from_pixels(width: usize, height: usize, pixels: &[[f64; 3]]) -> Result<Self> {
        if pixels.len() != width * height {
            return Err(HsrError::CountMismatch {
                what: "pixel",
                left: width * height,
                right: pixels.len(),
            });
        }
        Ok(Self {
            width,
            height,
            data: pixels.iter().flatten().copied().collect(),
        })
    }

    /// Grayscale image with the same value in all channels.
    pub fn from_gray(width: usize, height: usize, values: &[f64]) -> Result<Self> {
        let pixels: Vec<[f64; 3]> = values.iter().map(|&v| [v; 3]).collect();
        Self::from_pixels(width, height, &pixels)
    }

    pub fn resolution(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f64; 3] {
        let i = 3 * (y * self.width + x);
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [f64; 3]) {
        let i = 3 * (y * self.width + x);
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn clamped(&self) -> Self {
        Self {
            data: self.data.iter().map(|v| v.clamp(0.0, 1.0)).collect(),
            ..self.clone()
        }
    }

    /// 8-bit quantization: clamp to `[0,1]`, scale by 255 and round.
    pub fn to_rgb8(&self) -> Vec<u8> {
        self.data
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect()
    }

    pub fn from_rgb8(width: usize, height: usize, bytes: &[u8]) -> Self {
        Self {
            width,
            height,
            data: bytes.iter().map(|&b| b as f64 / 255.0).collect(),
        }
    }

    /// Reads a PNG (any bit depth, converted to 8-bit RGB) or a PFM by extension.
    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(HsrError::MissingImage(path.to_path_buf()));
        }
        if is_pfm(path) {
            let file = std::fs::File::open(path)?;
            return read_pfm(&mut BufReader::new(file)).map_err(|reason| HsrError::ImageDecode {
                path: path.to_path_buf(),
                reason,
            });
        }
        let decoded = image::open(path).map_err(|e| HsrError::ImageDecode {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        let rgb = decoded.to_rgb8();
        Ok(Self::from_rgb8(rgb.width() as usize, rgb.height() as usize, rgb.as_raw()))
    }

    /// Writes a PNG or PFM (by extension) through a temporary file.
    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = if is_pfm(path) { self.encode_pfm() } else { self.encode_png()? };
        write_atomic(path, &bytes)
    }

    pub fn encode_png(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        let encoder = image::codecs::png::PngEncoder::new(&mut out);
        image::ImageEncoder::write_image(
            encoder,
            &self.to_rgb8(),
            self.width as u32,
            self.height as u32,
            image::ExtendedColorType::Rgb8,
        )
        .map_err(|e| HsrError::Io(std::io::Error::other(e)))?;
        Ok(out)
    }

    /// Little-endian colour PFM, rows stored bottom to top.
    pub fn encode_pfm(&self) -> Vec<u8> {
        let mut out = format!("PF\n{} {}\n-1.0\n", self.width, self.height).into_bytes();
        for y in (0..self.height).rev() {
            let row = &self.data[3 * y * self.width..3 * (y + 1) * self.width];
            for v in row {
                out.extend_from_slice(&(*v as f32).to_le_bytes());
            }
        }
        out
    }
}

fn is_pfm(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("pfm"))
}

fn read_pfm<R: BufRead>(r: &mut R) -> std::result::Result<Image, String> {
    let mut tokens = Vec::new();
    // header: magic, width, height, scale; separated by arbitrary whitespace
    while tokens.len() < 4 {
        let mut line = String::new();
        if r.read_line(&mut line).map_err(|e| e.to_string())? == 0 {
            return Err("truncated header".into());
        }
        tokens.extend(line.split_whitespace().map(str::to_owned));
    }
    let channels = match tokens[0].as_str() {
        "PF" => 3,
        "Pf" => 1,
        other => return Err(format!("bad magic {other:?}")),
    };
    let parse = |s: &str| s.parse::<usize>().map_err(|e| format!("bad size {s:?}: {e}"));
    let (width, height) = (parse(&tokens[1])?, parse(&tokens[2])?);
    let scale: f64 = tokens[3].parse().map_err(|e| format!("bad scale: {e}"))?;
    let little = scale < 0.0;
    let mut raw = vec![0u8; width * height * channels * 4];
    r.read_exact(&mut raw).map_err(|e| format!("truncated data: {e}"))?;
    let values: Vec<f64> = raw
        .chunks_exact(4)
        .map(|c| {
            let b = [c[0], c[1], c[2], c[3]];
            (if little { f32::from_le_bytes(b) } else { f32::from_be_bytes(b) }) as f64
        })
        .collect();
    let mut data = vec![0.0; width * height * 3];
    for y in 0..height {
        let src_row = height - 1 - y;
        for x in 0..width {
            for c in 0..3 {
                let src = (src_row * width + x) * channels + if channels == 3 { c } else { 0 };
                data[3 * (y * width + x) + c] = values[src];
            }
        }
    }
    Ok(Image { width, height, data })
}
