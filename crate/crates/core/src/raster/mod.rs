//! Image containers and the pixel-level operations shared by every stage:
//! channel extraction, min/max contrast stretching, tiling and PNG I/O.
//!
//! A [`Raster`] always stores 8-bit samples, interleaved per pixel. Stages
//! that need floating point convert on the way in and quantize on the way out
//! with [`quantize`] (round half up, clamped to `[0, 255]`).

pub mod io;
mod tile;

pub use tile::{stitch, tile, TileGrid};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RasterError {
    #[error("raster data length {len} does not match {width}x{height}x{channels}")]
    DataLength {
        width: usize,
        height: usize,
        channels: usize,
        len: usize,
    },
    #[error("unsupported channel count {0} (expected 1, 3 or 4)")]
    ChannelCount(usize),
    #[error("channel {channel:?} is not present in a {channels}-channel raster")]
    MissingChannel {
        channel: SpectralChannel,
        channels: usize,
    },
    #[error("raster is empty")]
    Empty,
    #[error("tile size must be positive")]
    TileSize,
    #[error("tile set integrity: {0}")]
    Integrity(String),
    #[error("region {x},{y} {w}x{h} exceeds a {width}x{height} raster")]
    Region {
        x: usize,
        y: usize,
        w: usize,
        h: usize,
        width: usize,
        height: usize,
    },
    #[error("png: {0}")]
    Png(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Spectral plane selector.
///
/// Red, Green and Blue address planes 0..3 of a visible frame. The infrared
/// sensor stores near infrared in its first plane, so `Nir` addresses plane 0
/// of a single-channel frame or of a multi-plane infrared frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpectralChannel {
    Red,
    Green,
    Blue,
    Nir,
}

impl SpectralChannel {
    fn plane(self, channels: usize) -> Option<usize> {
        match (self, channels) {
            (Self::Nir, _) => Some(0),
            (Self::Red, 3 | 4) => Some(0),
            (Self::Green, 3 | 4) => Some(1),
            (Self::Blue, 3 | 4) => Some(2),
            _ => None,
        }
    }
}

/// Interleaved 8-bit image with 1, 3 or 4 channels.
#[derive(Clone, PartialEq, Eq)]
pub struct Raster {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<u8>,
}

impl std::fmt::Debug for Raster {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Raster")
            .field("width", &self.width)
            .field("height", &self.height)
            .field("channels", &self.channels)
            .finish_non_exhaustive()
    }
}

impl Raster {
    pub fn new(
        width: usize,
        height: usize,
        channels: usize,
        data: Vec<u8>,
    ) -> Result<Self, RasterError> {
        if !matches!(channels, 1 | 3 | 4) {
            return Err(RasterError::ChannelCount(channels));
        }
        if data.len() != width * height * channels {
            return Err(RasterError::DataLength {
                width,
                height,
                channels,
                len: data.len(),
            });
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    /// All-zero raster.
    pub fn zeros(width: usize, height: usize, channels: usize) -> Result<Self, RasterError> {
        Self::new(width, height, channels, vec![0; width * height * channels])
    }

    /// Single-channel raster filled from `f(x, y)`.
    pub fn from_fn_gray(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> u8) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            channels: 1,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<u8> {
        self.data
    }

    pub fn is_empty(&self) -> bool {
        self.width == 0 || self.height == 0
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> u8 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, v: u8) {
        self.data[(y * self.width + x) * self.channels + c] = v;
    }

    pub fn pixel(&self, x: usize, y: usize) -> &[u8] {
        let i = (y * self.width + x) * self.channels;
        &self.data[i..i + self.channels]
    }

    /// Copy of plane `c` as a single-channel raster.
    pub fn plane(&self, c: usize) -> Raster {
        assert!(c < self.channels, "plane {c} out of range");
        let data = self
            .data
            .chunks_exact(self.channels)
            .map(|px| px[c])
            .collect();
        Raster {
            width: self.width,
            height: self.height,
            channels: 1,
            data,
        }
    }

    /// Copy of a rectangular region.
    pub fn crop(&self, x: usize, y: usize, w: usize, h: usize) -> Result<Raster, RasterError> {
        if x + w > self.width || y + h > self.height {
            return Err(RasterError::Region {
                x,
                y,
                w,
                h,
                width: self.width,
                height: self.height,
            });
        }
        let row = w * self.channels;
        let mut data = Vec::with_capacity(row * h);
        for yy in y..y + h {
            let start = (yy * self.width + x) * self.channels;
            data.extend_from_slice(&self.data[start..start + row]);
        }
        Ok(Raster {
            width: w,
            height: h,
            channels: self.channels,
            data,
        })
    }

    /// Writes `src` with its top-left corner at `(x, y)`, clipping whatever
    /// falls outside.
    pub fn paste(&mut self, src: &Raster, x: usize, y: usize) {
        assert_eq!(src.channels, self.channels, "channel mismatch in paste");
        let w = src.width.min(self.width.saturating_sub(x));
        let h = src.height.min(self.height.saturating_sub(y));
        let c = self.channels;
        for yy in 0..h {
            let dst = ((y + yy) * self.width + x) * c;
            let s = yy * src.width * c;
            self.data[dst..dst + w * c].copy_from_slice(&src.data[s..s + w * c]);
        }
    }
}

/// Round-half-up quantization to the 8-bit domain.
#[inline]
pub fn quantize(v: f64) -> u8 {
    if v.is_nan() {
        return 0;
    }
    (v + 0.5).floor().clamp(0.0, 255.0) as u8
}

/// Extracts one spectral plane.
pub fn extract_channel(img: &Raster, ch: SpectralChannel) -> Result<Raster, RasterError> {
    let plane = ch.plane(img.channels).ok_or(RasterError::MissingChannel {
        channel: ch,
        channels: img.channels,
    })?;
    Ok(img.plane(plane))
}

/// Min/max contrast stretch of a single-channel raster to the full `[0, 255]`
/// range. A constant raster maps to all zeros.
pub fn normalize(img: &Raster) -> Result<Raster, RasterError> {
    if img.is_empty() {
        return Err(RasterError::Empty);
    }
    if img.channels != 1 {
        return Err(RasterError::ChannelCount(img.channels));
    }
    let lo = *img.data.iter().min().unwrap();
    let hi = *img.data.iter().max().unwrap();
    if lo == hi {
        return Raster::zeros(img.width, img.height, 1);
    }
    let range = f64::from(hi - lo);
    let mut lut = [0u8; 256];
    for (v, out) in lut.iter_mut().enumerate().skip(lo as usize).take((hi - lo) as usize + 1) {
        *out = quantize(255.0 * (v as f64 - f64::from(lo)) / range);
    }
    let data = img.data.iter().map(|&v| lut[v as usize]).collect();
    Raster::new(img.width, img.height, 1, data)
}

/// Binary per-pixel mask (validity of warped pixels, symptom masks).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl Mask {
    pub fn new(width: usize, height: usize, bits: Vec<bool>) -> Self {
        assert_eq!(bits.len(), width * height, "mask length mismatch");
        Self {
            width,
            height,
            bits,
        }
    }

    pub fn filled(width: usize, height: usize, value: bool) -> Self {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    /// True when every set pixel of `self` is also set in `other`.
    pub fn is_subset_of(&self, other: &Mask) -> bool {
        self.width == other.width
            && self.height == other.height
            && self.bits.iter().zip(&other.bits).all(|(&a, &b)| !a || b)
    }

    /// 0/255 grayscale rendering.
    pub fn to_raster(&self) -> Raster {
        let data = self.bits.iter().map(|&b| if b { 255 } else { 0 }).collect();
        Raster {
            width: self.width,
            height: self.height,
            channels: 1,
            data,
        }
    }
}
