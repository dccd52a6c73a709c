//! Keypoints in a nonlinear (edge-preserving) scale space with rotation- and
//! scale-steered binary descriptors, and Hamming-distance matching.
//!
//! The pipeline is [`build_scale_space`] → [`detect`] → [`describe`] →
//! [`match_descriptors`]; [`extract`] runs the first three in one call.

mod describe;
mod detect;
mod matching;
pub(crate) mod plane;
mod scale_space;

pub use describe::{describe, support_radius};
pub use detect::detect;
pub use matching::{match_descriptors, mutual_matches, Match};
pub use scale_space::{build_scale_space, fed_steps, AkazeConfig, Diffusivity, Level, ScaleSpace};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::raster::Raster;

/// Length of a full three-channel descriptor over the 2x2, 3x3 and 4x4 grids:
/// `3 · (C(4,2) + C(9,2) + C(16,2))`.
pub const DESCRIPTOR_BITS: usize = 486;
/// Packed byte length (two trailing pad bits).
pub const DESCRIPTOR_BYTES: usize = 61;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("feature configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Keypoint {
    /// Sub-pixel column in the full-resolution image.
    pub x: f32,
    pub y: f32,
    /// Detection scale in full-resolution pixels.
    pub scale: f32,
    /// Radians in `[0, 2π)`.
    pub orientation: f32,
    pub response: f32,
    pub octave: u32,
    /// Index of the scale-space level the keypoint was found on.
    pub level: u32,
}

/// Fixed-length binary string; bit `i` lives in word `i / 64`.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct BinaryDescriptor {
    words: [u64; 8],
}

impl std::fmt::Debug for BinaryDescriptor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "BinaryDescriptor(")?;
        for b in self.to_bytes() {
            write!(f, "{b:02x}")?;
        }
        write!(f, ")")
    }
}

impl BinaryDescriptor {
    pub fn zeroed() -> Self {
        Self { words: [0; 8] }
    }

    #[inline]
    pub fn bit(&self, i: usize) -> bool {
        debug_assert!(i < DESCRIPTOR_BITS);
        self.words[i / 64] >> (i % 64) & 1 == 1
    }

    #[inline]
    pub fn set(&mut self, i: usize) {
        debug_assert!(i < DESCRIPTOR_BITS);
        self.words[i / 64] |= 1 << (i % 64);
    }

    #[inline]
    pub fn toggle(&mut self, i: usize) {
        debug_assert!(i < DESCRIPTOR_BITS);
        self.words[i / 64] ^= 1 << (i % 64);
    }

    #[inline]
    pub fn hamming(&self, other: &Self) -> u32 {
        self.words
            .iter()
            .zip(&other.words)
            .map(|(a, b)| (a ^ b).count_ones())
            .sum()
    }

    /// Little-endian packing of the 486 bits into 61 bytes.
    pub fn to_bytes(&self) -> [u8; DESCRIPTOR_BYTES] {
        let mut out = [0u8; DESCRIPTOR_BYTES];
        for (i, b) in out.iter_mut().enumerate() {
            *b = (self.words[i / 8] >> (8 * (i % 8))) as u8;
        }
        out
    }

    /// Inverse of [`to_bytes`](Self::to_bytes); pad bits must be clear.
    pub fn from_bytes(bytes: &[u8; DESCRIPTOR_BYTES]) -> Option<Self> {
        if bytes[DESCRIPTOR_BYTES - 1] & 0b1100_0000 != 0 {
            return None;
        }
        let mut words = [0u64; 8];
        for (i, &b) in bytes.iter().enumerate() {
            words[i / 8] |= u64::from(b) << (8 * (i % 8));
        }
        Some(Self { words })
    }
}

/// Described keypoints: `keypoints[i]` owns `descriptors[i]`.
#[derive(Debug, Clone, Default)]
pub struct Features {
    pub keypoints: Vec<Keypoint>,
    pub descriptors: Vec<BinaryDescriptor>,
}

impl Features {
    pub fn len(&self) -> usize {
        self.keypoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keypoints.is_empty()
    }

    /// Keeps the features for which `keep` holds.
    pub fn retain(&mut self, mut keep: impl FnMut(&Keypoint) -> bool) {
        let mask: Vec<bool> = self.keypoints.iter().map(&mut keep).collect();
        let mut it = mask.iter();
        self.keypoints.retain(|_| *it.next().unwrap());
        let mut it = mask.iter();
        self.descriptors.retain(|_| *it.next().unwrap());
    }
}

/// Scale space, detection and description of one normalized channel.
pub fn extract(img: &Raster, config: &AkazeConfig) -> Result<Features, FeatureError> {
    let ss = build_scale_space(img, config)?;
    let kps = detect(&ss);
    Ok(describe(&ss, &kps))
}

#[derive(Serialize, Deserialize)]
struct KeypointRecord {
    x: f32,
    y: f32,
    scale: f32,
    orientation: f32,
    response: f32,
}

/// Debug dump `[{x, y, scale, orientation, response}]`.
pub fn keypoints_json(kps: &[Keypoint]) -> serde_json::Value {
    let records: Vec<KeypointRecord> = kps
        .iter()
        .map(|k| KeypointRecord {
            x: k.x,
            y: k.y,
            scale: k.scale,
            orientation: k.orientation,
            response: k.response,
        })
        .collect();
    serde_json::to_value(records).expect("keypoint records serialize")
}

/// Debug dump `[{q, t, dist}]`.
pub fn matches_json(matches: &[Match]) -> serde_json::Value {
    serde_json::to_value(matches).expect("match records serialize")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn byte_packing_roundtrip() {
        let mut d = BinaryDescriptor::zeroed();
        for i in (0..DESCRIPTOR_BITS).step_by(7) {
            d.set(i);
        }
        d.set(DESCRIPTOR_BITS - 1);
        let bytes = d.to_bytes();
        assert_eq!(bytes.len(), 61);
        assert_eq!(BinaryDescriptor::from_bytes(&bytes).unwrap(), d);
        let mut bad = bytes;
        bad[60] |= 0x80;
        assert!(BinaryDescriptor::from_bytes(&bad).is_none());
    }

    #[test]
    fn hamming_counts_differing_bits() {
        let mut a = BinaryDescriptor::zeroed();
        let mut b = BinaryDescriptor::zeroed();
        a.set(0);
        a.set(100);
        b.set(100);
        b.set(485);
        assert_eq!(a.hamming(&b), 2);
        assert_eq!(a.hamming(&a), 0);
    }

    #[test]
    fn dump_shapes() {
        let kp = Keypoint {
            x: 1.0,
            y: 2.0,
            scale: 3.0,
            orientation: 0.5,
            response: 0.01,
            octave: 0,
            level: 1,
        };
        let v = keypoints_json(&[kp]);
        assert_eq!(v[0].as_object().unwrap().len(), 5);
        let m = matches_json(&[Match {
            query_index: 1,
            train_index: 2,
            distance: 3,
        }]);
        assert_eq!(m[0]["q"], 1);
        assert_eq!(m[0]["t"], 2);
        assert_eq!(m[0]["dist"], 3);
    }
}
