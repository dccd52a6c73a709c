use rayon::prelude::*;

use super::detect::sample_scale;
use super::scale_space::{Level, ScaleSpace};
use super::{BinaryDescriptor, Features, Keypoint, DESCRIPTOR_BITS};

/// Grid subdivisions of the sampling pattern, coarse to fine.
const GRIDS: [usize; 3] = [2, 3, 4];

/// Computes one full-length M-LDB descriptor per keypoint. Keypoints whose
/// rotated sampling pattern leaves the octave image are dropped, so the
/// returned keypoints are a subset of `kps` (in the same order).
pub fn describe(ss: &ScaleSpace, kps: &[Keypoint]) -> Features {
    let pattern = ss.config.pattern_size as f32;
    let described: Vec<Option<(Keypoint, BinaryDescriptor)>> = kps
        .par_iter()
        .map(|kp| {
            let lvl = &ss.levels[kp.level as usize];
            inside(lvl, kp, pattern).then(|| (kp.clone(), mldb(lvl, kp, ss.config.pattern_size)))
        })
        .collect();
    let (keypoints, descriptors) = described.into_iter().flatten().unzip();
    Features {
        keypoints,
        descriptors,
    }
}

/// Radius, in full-resolution pixels, of the region a keypoint's descriptor
/// reads.
pub fn support_radius(kp: &Keypoint, pattern_size: usize) -> f32 {
    let ratio = (1u32 << kp.octave) as f32;
    (pattern_size as f32 * std::f32::consts::SQRT_2 * sample_scale(kp) + 1.0) * ratio
}

fn octave_coords(lvl: &Level, kp: &Keypoint) -> (f32, f32) {
    let ratio = lvl.ratio();
    (
        (kp.x - 0.5 * (ratio - 1.0)) / ratio,
        (kp.y - 0.5 * (ratio - 1.0)) / ratio,
    )
}

fn inside(lvl: &Level, kp: &Keypoint, pattern: f32) -> bool {
    let (xf, yf) = octave_coords(lvl, kp);
    let r = pattern * std::f32::consts::SQRT_2 * sample_scale(kp) + 1.0;
    xf - r >= 0.0
        && yf - r >= 0.0
        && xf + r <= (lvl.lt.width - 1) as f32
        && yf + r <= (lvl.lt.height - 1) as f32
}

fn mldb(lvl: &Level, kp: &Keypoint, pattern_size: usize) -> BinaryDescriptor {
    let (xf, yf) = octave_coords(lvl, kp);
    let scale = sample_scale(kp);
    let (si, co) = kp.orientation.sin_cos();
    let ps = pattern_size as i32;
    let mut desc = BinaryDescriptor::zeroed();
    let mut bit = 0usize;
    let mut values = [0.0f32; 16 * 3];

    for &cells in &GRIDS {
        let step = (2 * ps as usize).div_ceil(cells) as i32;
        let mut n = 0usize;
        let mut i = -ps;
        while i < ps {
            let mut j = -ps;
            while j < ps {
                let (mut di, mut dx, mut dy) = (0.0f32, 0.0f32, 0.0f32);
                let mut count = 0u32;
                for k in i..i + step {
                    for l in j..j + step {
                        let (k, l) = (k as f32, l as f32);
                        let sy = yf + (l * co + k * si) * scale;
                        let sx = xf + (-l * si + k * co) * scale;
                        let (x1, y1) = (sx.round() as isize, sy.round() as isize);
                        let ri = lvl.lt.at_clamped(x1, y1);
                        let rx = lvl.lx.at_clamped(x1, y1);
                        let ry = lvl.ly.at_clamped(x1, y1);
                        di += ri;
                        dx += -rx * si + ry * co;
                        dy += rx * co + ry * si;
                        count += 1;
                    }
                }
                let c = count as f32;
                values[3 * n] = di / c;
                values[3 * n + 1] = dx / c;
                values[3 * n + 2] = dy / c;
                n += 1;
                j += step;
            }
            i += step;
        }
        debug_assert_eq!(n, cells * cells);
        for a in 0..n {
            for b in a + 1..n {
                for ch in 0..3 {
                    if values[3 * a + ch] > values[3 * b + ch] {
                        desc.set(bit);
                    }
                    bit += 1;
                }
            }
        }
    }
    debug_assert_eq!(bit, DESCRIPTOR_BITS);
    desc
}
