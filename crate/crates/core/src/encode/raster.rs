//! Uncompressed PPM rasters and the two built-in dense descriptors.

use std::fs;
use std::path::Path;

use crate::encode::{DescriptorBlock, PATCH_SIZE, PATCH_STRIDE};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    pub width: usize,
    pub height: usize,
    /// Interleaved RGB, row-major.
    pub rgb: Vec<u8>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BuiltinChannel {
    /// Mean-subtracted flattened grayscale patch.
    GrayPatch,
    /// 4×4×4 RGB histogram of the patch, L1-normalized.
    ColorHist,
}

impl BuiltinChannel {
    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "gray-patch" => Some(BuiltinChannel::GrayPatch),
            "color-hist" => Some(BuiltinChannel::ColorHist),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            BuiltinChannel::GrayPatch => "gray-patch",
            BuiltinChannel::ColorHist => "color-hist",
        }
    }

    pub fn dim(self) -> usize {
        match self {
            BuiltinChannel::GrayPatch => PATCH_SIZE * PATCH_SIZE,
            BuiltinChannel::ColorHist => 64,
        }
    }
}

impl Raster {
    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Self {
        Raster {
            width,
            height,
            rgb: rgb.iter().copied().cycle().take(width * height * 3).collect(),
        }
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.rgb[i], self.rgb[i + 1], self.rgb[i + 2]]
    }

    pub fn read_ppm(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode_ppm(&bytes)
    }

    /// Decodes binary (P6) or ASCII (P3) PPM with maxval ≤ 255.
    pub fn decode_ppm(bytes: &[u8]) -> Result<Self> {
        let mut pos = 0;
        let mut header = Vec::with_capacity(4);
        while header.len() < 4 {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err(Error::ImageDecode("truncated PPM header".into()));
            }
            header.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
        }
        let parse = |s: &str| -> Result<usize> {
            s.parse()
                .map_err(|_| Error::ImageDecode(format!("bad PPM header field `{s}`")))
        };
        let (width, height, maxval) = (parse(&header[1])?, parse(&header[2])?, parse(&header[3])?);
        if maxval == 0 || maxval > 255 {
            return Err(Error::ImageDecode(format!("unsupported maxval {maxval}")));
        }
        let count = width * height * 3;
        let scale = |v: usize| -> u8 { ((v * 255 + maxval / 2) / maxval) as u8 };
        let rgb = match header[0].as_str() {
            "P6" => {
                let data = bytes
                    .get(pos + 1..pos + 1 + count)
                    .ok_or_else(|| Error::ImageDecode("truncated P6 pixel data".into()))?;
                data.iter().map(|&v| scale(v as usize)).collect()
            }
            "P3" => {
                let text = String::from_utf8_lossy(&bytes[pos..]);
                let values: Vec<u8> = text
                    .split_ascii_whitespace()
                    .take(count)
                    .map(|s| parse(s).map(scale))
                    .collect::<Result<_>>()?;
                if values.len() != count {
                    return Err(Error::ImageDecode("truncated P3 pixel data".into()));
                }
                values
            }
            other => return Err(Error::ImageDecode(format!("unsupported magic `{other}`"))),
        };
        Ok(Raster { width, height, rgb })
    }

    pub fn encode_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.rgb);
        out
    }
}

/// Dense 20×20 patches at stride 10 (50% overlap).
pub fn builtin_descriptors(image: &Raster, channel: BuiltinChannel) -> Result<DescriptorBlock> {
    if image.width < PATCH_SIZE || image.height < PATCH_SIZE {
        return Err(Error::ImageDecode(format!(
            "{}×{} image is smaller than one {PATCH_SIZE}×{PATCH_SIZE} patch",
            image.width, image.height
        )));
    }
    let dim = channel.dim();
    let mut positions = Vec::new();
    let mut vectors = Vec::new();
    for y0 in (0..=image.height - PATCH_SIZE).step_by(PATCH_STRIDE) {
        for x0 in (0..=image.width - PATCH_SIZE).step_by(PATCH_STRIDE) {
            positions.push(((x0 + PATCH_SIZE / 2) as f32, (y0 + PATCH_SIZE / 2) as f32));
            match channel {
                BuiltinChannel::GrayPatch => {
                    let gray: Vec<f32> = (0..PATCH_SIZE * PATCH_SIZE)
                        .map(|i| {
                            let [r, g, b] = image.pixel(x0 + i % PATCH_SIZE, y0 + i / PATCH_SIZE);
                            (0.299 * f32::from(r) + 0.587 * f32::from(g) + 0.114 * f32::from(b)) / 255.0
                        })
                        .collect();
                    let mean = gray.iter().map(|&v| f64::from(v)).sum::<f64>() / gray.len() as f64;
                    vectors.extend(gray.iter().map(|&v| (f64::from(v) - mean) as f32));
                }
                BuiltinChannel::ColorHist => {
                    let mut hist = [0f32; 64];
                    for i in 0..PATCH_SIZE * PATCH_SIZE {
                        let [r, g, b] = image.pixel(x0 + i % PATCH_SIZE, y0 + i / PATCH_SIZE);
                        let bin = (usize::from(r) / 64) * 16 + (usize::from(g) / 64) * 4 + usize::from(b) / 64;
                        hist[bin] += 1.0;
                    }
                    let n = (PATCH_SIZE * PATCH_SIZE) as f32;
                    vectors.extend(hist.iter().map(|v| v / n));
                }
            }
        }
    }
    DescriptorBlock::new(channel.name(), dim, positions, vectors)
}
