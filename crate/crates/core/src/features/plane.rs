//! Single-channel `f32` image plane and the separable filters used by the
//! nonlinear scale space. Borders replicate the edge sample.

use rayon::prelude::*;

use crate::raster::Raster;

#[derive(Clone, Debug, PartialEq)]
pub struct Plane {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl Plane {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0.0; width * height],
        }
    }

    /// Gray raster scaled to `[0, 1]`.
    pub fn from_raster(img: &Raster) -> Self {
        assert_eq!(img.channels(), 1, "scale space needs a single channel");
        Self {
            width: img.width(),
            height: img.height(),
            data: img.data().iter().map(|&v| f32::from(v) / 255.0).collect(),
        }
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    /// Sample at integer coordinates, clamped to the plane.
    #[inline]
    pub fn at_clamped(&self, x: isize, y: isize) -> f32 {
        let x = x.clamp(0, self.width as isize - 1) as usize;
        let y = y.clamp(0, self.height as isize - 1) as usize;
        self.data[y * self.width + x]
    }

    pub fn map2(&self, other: &Plane, f: impl Fn(f32, f32) -> f32 + Sync) -> Plane {
        Plane {
            width: self.width,
            height: self.height,
            data: self
                .data
                .par_iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn scale(&mut self, s: f32) {
        self.data.iter_mut().for_each(|v| *v *= s);
    }
}

/// Separable correlation with a sparse symmetric-position kernel
/// `taps = [(offset, weight)]`, first along x then along y.
pub fn separable(src: &Plane, kx: &[(isize, f32)], ky: &[(isize, f32)]) -> Plane {
    let (w, h) = (src.width, src.height);
    let mut tmp = Plane::new(w, h);
    tmp.data
        .par_chunks_mut(w)
        .enumerate()
        .for_each(|(y, row)| {
            let line = &src.data[y * w..(y + 1) * w];
            for &(o, k) in kx {
                // columns whose tap stays inside the row, then the clamped rest
                let lo = (-o).clamp(0, w as isize) as usize;
                let hi = (w as isize - o).clamp(0, w as isize) as usize;
                if lo < hi {
                    let shifted = &line[(lo as isize + o) as usize..(hi as isize + o) as usize];
                    for (out, &v) in row[lo..hi].iter_mut().zip(shifted) {
                        *out += k * v;
                    }
                }
                for x in (0..lo.min(w)).chain(hi.max(lo).min(w)..w) {
                    let xx = (x as isize + o).clamp(0, w as isize - 1) as usize;
                    row[x] += k * line[xx];
                }
            }
        });
    let mut dst = Plane::new(w, h);
    dst.data
        .par_chunks_mut(w)
        .enumerate()
        .for_each(|(y, row)| {
            for &(o, k) in ky {
                let yy = (y as isize + o).clamp(0, h as isize - 1) as usize;
                let line = &tmp.data[yy * w..(yy + 1) * w];
                for (out, &v) in row.iter_mut().zip(line) {
                    *out += k * v;
                }
            }
        });
    dst
}

pub fn gaussian_kernel(sigma: f32) -> Vec<(isize, f32)> {
    let radius = (3.0 * sigma).ceil().max(1.0) as isize;
    let mut taps: Vec<(isize, f32)> = (-radius..=radius)
        .map(|i| (i, (-(i * i) as f32 / (2.0 * sigma * sigma)).exp()))
        .collect();
    let sum: f32 = taps.iter().map(|t| t.1).sum();
    taps.iter_mut().for_each(|t| t.1 /= sum);
    taps
}

pub fn gaussian_blur(src: &Plane, sigma: f32) -> Plane {
    let k = gaussian_kernel(sigma);
    separable(src, &k, &k)
}

/// Scharr first derivative at integer `scale`: central difference over
/// `2·scale` pixels with a `[1, 10/3, 1]` cross smoothing, normalized so the
/// result is in intensity per pixel.
pub fn scharr(src: &Plane, dx: bool, scale: usize) -> Plane {
    let s = scale.max(1) as isize;
    let w = 10.0f32 / 3.0;
    let norm = 1.0 / (2.0 * s as f32 * (w + 2.0));
    let deriv = [(-s, -1.0f32), (s, 1.0)];
    let smooth = [(-s, norm), (0, w * norm), (s, norm)];
    if dx {
        separable(src, &deriv, &smooth)
    } else {
        separable(src, &smooth, &deriv)
    }
}

/// 2x2 box downsampling; an odd trailing row or column is dropped.
pub fn half_sample(src: &Plane) -> Plane {
    let (w, h) = (src.width / 2, src.height / 2);
    let mut dst = Plane::new(w, h);
    dst.data
        .par_chunks_mut(w.max(1))
        .enumerate()
        .for_each(|(y, row)| {
            for (x, out) in row.iter_mut().enumerate().take(w) {
                let (sx, sy) = (2 * x, 2 * y);
                *out = 0.25
                    * (src.at(sx, sy) + src.at(sx + 1, sy) + src.at(sx, sy + 1) + src.at(sx + 1, sy + 1));
            }
        });
    dst
}

/// Contrast factor of the diffusivity: the `percentile` quantile of the
/// nonzero gradient magnitudes of the σ=1 smoothed image, estimated with a
/// `bins`-bucket histogram. Falls back to 0.03 on flat input.
pub fn contrast_factor(src: &Plane, percentile: f32, bins: usize) -> f32 {
    const FALLBACK: f32 = 0.03;
    if src.width < 3 || src.height < 3 {
        return FALLBACK;
    }
    let smooth = gaussian_blur(src, 1.0);
    let lx = scharr(&smooth, true, 1);
    let ly = scharr(&smooth, false, 1);
    let (w, h) = (src.width, src.height);
    let interior = || (1..h - 1).flat_map(move |y| (1..w - 1).map(move |x| y * w + x));
    let modg = |i: usize| (lx.data[i] * lx.data[i] + ly.data[i] * ly.data[i]).sqrt();
    let hmax = interior().map(modg).fold(0.0f32, f32::max);
    if hmax <= 0.0 {
        return FALLBACK;
    }
    let mut hist = vec![0usize; bins];
    let mut npoints = 0usize;
    for i in interior() {
        let g = modg(i);
        if g != 0.0 {
            let bin = ((bins as f32 * (g / hmax)).floor() as usize).min(bins - 1);
            hist[bin] += 1;
            npoints += 1;
        }
    }
    let threshold = (npoints as f32 * percentile) as usize;
    let mut seen = 0usize;
    let mut k = 0usize;
    while seen < threshold && k < bins {
        seen += hist[k];
        k += 1;
    }
    if seen < threshold {
        FALLBACK
    } else {
        hmax * k as f32 / bins as f32
    }
}
