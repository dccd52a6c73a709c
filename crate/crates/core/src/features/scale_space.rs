//! Nonlinear scale space driven by fast explicit diffusion (FED).
//!
//! Each level stores the evolved image `lt`, the scale-normalized first
//! derivatives used by the descriptor and the scale-normalized determinant of
//! the Hessian used by the detector.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::plane::{contrast_factor, gaussian_blur, half_sample, scharr, Plane};
use super::FeatureError;
use crate::raster::Raster;

/// Conductivity function `g(|∇L|²/k²)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Diffusivity {
    /// `exp(-s)`
    PeronaMalikG1,
    /// `1 / (1 + s)`
    PeronaMalikG2,
    /// `1 - exp(-3.315 / s^4)`
    Weickert,
    /// `1 / sqrt(1 + s)`
    Charbonnier,
}

impl Diffusivity {
    #[inline]
    fn conductance(self, s: f32) -> f32 {
        match self {
            Self::PeronaMalikG1 => (-s).exp(),
            Self::PeronaMalikG2 => 1.0 / (1.0 + s),
            Self::Weickert => {
                if s <= 0.0 {
                    1.0
                } else {
                    1.0 - (-3.315 / (s * s * s * s)).exp()
                }
            }
            Self::Charbonnier => 1.0 / (1.0 + s).sqrt(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AkazeConfig {
    pub octaves: usize,
    pub sublevels: usize,
    /// Minimum normalized Hessian response of a keypoint.
    pub threshold: f32,
    pub diffusivity: Diffusivity,
    /// Base scale of the first level.
    pub base_sigma: f32,
    pub derivative_factor: f32,
    pub contrast_percentile: f32,
    pub contrast_bins: usize,
    /// Half-width of the descriptor sampling pattern, in keypoint scale units.
    pub pattern_size: usize,
}

impl Default for AkazeConfig {
    fn default() -> Self {
        Self {
            octaves: 4,
            sublevels: 4,
            threshold: 0.001,
            diffusivity: Diffusivity::PeronaMalikG2,
            base_sigma: 1.6,
            derivative_factor: 1.5,
            contrast_percentile: 0.7,
            contrast_bins: 300,
            pattern_size: 10,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Level {
    pub octave: usize,
    pub sublevel: usize,
    /// Gaussian-equivalent scale in full-resolution pixels.
    pub esigma: f32,
    /// Evolution time `esigma² / 2`.
    pub etime: f32,
    /// Derivative step in octave pixels.
    pub sigma_size: usize,
    pub lt: Plane,
    pub lx: Plane,
    pub ly: Plane,
    pub ldet: Plane,
}

impl Level {
    /// Full-resolution pixels per octave pixel.
    pub fn ratio(&self) -> f32 {
        (1usize << self.octave) as f32
    }
}

/// The evolved pyramid plus the parameters that produced it.
#[derive(Debug, Clone)]
pub struct ScaleSpace {
    pub config: AkazeConfig,
    pub width: usize,
    pub height: usize,
    pub levels: Vec<Level>,
}

/// Step sizes of one FED cycle reaching total time `t` with stability limit
/// `tau_max`.
pub fn fed_steps(t: f32, tau_max: f32) -> Vec<f32> {
    if t <= 0.0 {
        return Vec::new();
    }
    let t = f64::from(t);
    let tau_max = f64::from(tau_max);
    let n = ((3.0 * t / tau_max + 0.25).sqrt() - 0.5 - 1e-8).ceil().max(1.0) as usize;
    let scale = 3.0 * t / (tau_max * (n * (n + 1)) as f64);
    let c = 1.0 / (4 * n + 2) as f64;
    let d = scale * tau_max / 2.0;
    (0..n)
        .map(|i| {
            let h = (std::f64::consts::PI * (2 * i + 1) as f64 * c).cos();
            (d / (h * h)) as f32
        })
        .collect()
}

fn conductivity(lt: &Plane, k: f32, kind: Diffusivity) -> Plane {
    let smooth = gaussian_blur(lt, 1.0);
    let lx = scharr(&smooth, true, 1);
    let ly = scharr(&smooth, false, 1);
    let inv_k2 = 1.0 / (k * k);
    lx.map2(&ly, |a, b| kind.conductance((a * a + b * b) * inv_k2))
}

/// One explicit diffusion step `L += τ · div(c ∇L)` with reflecting borders.
fn diffusion_step(lt: &mut Plane, c: &Plane, tau: f32) {
    let (w, h) = (lt.width, lt.height);
    let src = lt.data.clone();
    let cd = &c.data;
    lt.data
        .par_chunks_mut(w)
        .enumerate()
        .for_each(|(y, row)| {
            let up = y.saturating_sub(1) * w;
            let down = (y + 1).min(h - 1) * w;
            let (s, su, sd) = (&src[y * w..][..w], &src[up..][..w], &src[down..][..w]);
            let (k, ku, kd) = (&cd[y * w..][..w], &cd[up..][..w], &cd[down..][..w]);
            let at = |x: usize, left: usize, right: usize| {
                let l = s[x];
                let ci = k[x];
                let xpos = (ci + k[right]) * (s[right] - l);
                let xneg = (k[left] + ci) * (l - s[left]);
                let ypos = (ci + kd[x]) * (sd[x] - l);
                let yneg = (ku[x] + ci) * (l - su[x]);
                l + 0.5 * tau * (xpos - xneg + ypos - yneg)
            };
            row[0] = at(0, 0, 1.min(w - 1));
            for (x, out) in row.iter_mut().enumerate().take(w.saturating_sub(1)).skip(1) {
                *out = at(x, x - 1, x + 1);
            }
            if w > 1 {
                row[w - 1] = at(w - 1, w - 2, w - 1);
            }
        });
}

/// Longest FED cycle run in one go. Long cycles take explicit steps far past
/// the stability limit and amplify rounding error in `f32`.
const MAX_CYCLE_STEPS: usize = 10;

/// Advances `lt` by diffusion time `t`, split into equal FED cycles of at most
/// [`MAX_CYCLE_STEPS`] steps; the conductivity is refreshed per cycle.
pub(crate) fn diffuse(lt: &mut Plane, t: f32, k: f32, kind: Diffusivity) {
    let n = MAX_CYCLE_STEPS as f32;
    let cycle_time = 0.25 * (n * n + n) / 3.0;
    let cycles = (t / cycle_time).ceil().max(1.0) as usize;
    let steps = fed_steps(t / cycles as f32, 0.25);
    for _ in 0..cycles {
        let c = conductivity(lt, k, kind);
        for &tau in &steps {
            diffusion_step(lt, &c, tau);
        }
    }
}

fn derivatives(lt: &Plane, sigma_size: usize) -> (Plane, Plane, Plane) {
    let smooth = gaussian_blur(lt, 1.0);
    let s = sigma_size as f32;
    let mut lx = scharr(&smooth, true, sigma_size);
    let mut ly = scharr(&smooth, false, sigma_size);
    let mut lxx = scharr(&lx, true, sigma_size);
    let mut lyy = scharr(&ly, false, sigma_size);
    let mut lxy = scharr(&lx, false, sigma_size);
    lx.scale(s);
    ly.scale(s);
    let s2 = s * s;
    lxx.scale(s2);
    lyy.scale(s2);
    lxy.scale(s2);
    let ldet = Plane {
        width: lt.width,
        height: lt.height,
        data: lxx
            .data
            .iter()
            .zip(&lyy.data)
            .zip(&lxy.data)
            .map(|((&xx, &yy), &xy)| xx * yy - xy * xy)
            .collect(),
    };
    (lx, ly, ldet)
}

/// Builds the `octaves × sublevels` nonlinear pyramid of a single-channel
/// raster.
pub fn build_scale_space(img: &Raster, config: &AkazeConfig) -> Result<ScaleSpace, FeatureError> {
    if config.octaves == 0 || config.sublevels == 0 {
        return Err(FeatureError::Config(
            "octaves and sublevels must be at least 1".into(),
        ));
    }
    if img.channels() != 1 {
        return Err(FeatureError::Config(format!(
            "scale space needs a single-channel raster, got {} channels",
            img.channels()
        )));
    }
    let min_side = 1usize << config.octaves;
    if img.width() < min_side || img.height() < min_side {
        return Err(FeatureError::Config(format!(
            "{}x{} image is smaller than 2^{} = {min_side} px",
            img.width(),
            img.height(),
            config.octaves
        )));
    }

    let input = Plane::from_raster(img);
    let mut k = contrast_factor(&input, config.contrast_percentile, config.contrast_bins);
    let mut levels: Vec<Level> = Vec::with_capacity(config.octaves * config.sublevels);
    let mut lt = gaussian_blur(&input, config.base_sigma);
    let mut prev_etime = 0.0f32;

    for octave in 0..config.octaves {
        for sublevel in 0..config.sublevels {
            let esigma = config.base_sigma
                * 2f32.powf(octave as f32 + sublevel as f32 / config.sublevels as f32);
            let etime = 0.5 * esigma * esigma;
            if !levels.is_empty() {
                if sublevel == 0 {
                    lt = half_sample(&lt);
                    k *= 0.75;
                }
                diffuse(&mut lt, etime - prev_etime, k, config.diffusivity);
            }
            prev_etime = etime;
            let ratio = (1usize << octave) as f32;
            let sigma_size = ((esigma * config.derivative_factor / ratio).round() as usize).max(1);
            let (lx, ly, ldet) = derivatives(&lt, sigma_size);
            levels.push(Level {
                octave,
                sublevel,
                esigma,
                etime,
                sigma_size,
                lt: lt.clone(),
                lx,
                ly,
                ldet,
            });
        }
    }

    Ok(ScaleSpace {
        config: config.clone(),
        width: img.width(),
        height: img.height(),
        levels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fed_cycle_sums_to_time() {
        for t in [0.1f32, 0.9, 1.5, 12.0, 68.0] {
            let steps = fed_steps(t, 0.25);
            let sum: f32 = steps.iter().sum();
            assert!((sum - t).abs() < 1e-4 * t.max(1.0), "t={t} sum={sum}");
            assert!(steps.iter().all(|&s| s > 0.0));
        }
        assert!(fed_steps(0.0, 0.25).is_empty());
    }

    #[test]
    fn constant_image_is_fixed_point() {
        let img = Raster::from_fn_gray(64, 48, |_, _| 77);
        let ss = build_scale_space(&img, &AkazeConfig::default()).unwrap();
        assert_eq!(ss.levels.len(), 16);
        let v = 77.0 / 255.0;
        for lvl in &ss.levels {
            assert!(lvl.lt.data.iter().all(|&p| (p - v).abs() < 1e-5));
            assert!(lvl.ldet.data.iter().all(|&d| d.abs() < 1e-9));
        }
    }

    #[test]
    fn evolution_times_strictly_increase() {
        let img = Raster::from_fn_gray(64, 64, |x, y| ((x * 13 + y * 7) % 64) as u8 * 4);
        let ss = build_scale_space(&img, &AkazeConfig::default()).unwrap();
        assert_eq!(ss.levels.len(), 16);
        for w in ss.levels.windows(2) {
            assert!(w[1].etime > w[0].etime);
        }
        // etime recurrence: t_i = (σ0 · 2^(i/S))² / 2
        for (i, lvl) in ss.levels.iter().enumerate() {
            let sigma = 1.6f64 * 2f64.powf(i as f64 / 4.0);
            assert!((f64::from(lvl.etime) - sigma * sigma / 2.0).abs() < 1e-3);
        }
    }

    #[test]
    fn too_small_image_rejected() {
        let img = Raster::from_fn_gray(15, 64, |_, _| 0);
        assert!(matches!(
            build_scale_space(&img, &AkazeConfig::default()),
            Err(FeatureError::Config(_))
        ));
    }

    #[test]
    fn step_edge_survives_longer_than_linear_diffusion() {
        // Vertical step edge; compare against the heat equation (linear
        // diffusion with c ≡ 1) run for the same total time.
        let (w, h) = (64usize, 16usize);
        let mut p = Plane::new(w, h);
        for y in 0..h {
            for x in 0..w {
                p.data[y * w + x] = if x < w / 2 { 0.2 } else { 0.8 };
            }
        }
        let k = 0.05;
        let t = 8.0;
        let mut nonlinear = p.clone();
        diffuse(&mut nonlinear, t, k, Diffusivity::PeronaMalikG2);

        let mut linear = p.clone();
        let ones = Plane {
            width: w,
            height: h,
            data: vec![1.0; w * h],
        };
        for tau in fed_steps(t, 0.25) {
            diffusion_step(&mut linear, &ones, tau);
        }
        let grad = |q: &Plane| q.at(w / 2, h / 2) - q.at(w / 2 - 1, h / 2);
        assert!(
            grad(&nonlinear) > 1.5 * grad(&linear),
            "nonlinear {} vs linear {}",
            grad(&nonlinear),
            grad(&linear)
        );
        // The linear oracle itself matches the Gaussian solution erf profile:
        // the jump across the edge after time t is 0.6·erf(1/(2·sqrt(4t)))·2.
        let expected = 0.6 * erf(0.5 / (4.0f64 * f64::from(t)).sqrt());
        assert!((f64::from(grad(&linear)) - expected).abs() < 0.01);
    }

    fn erf(x: f64) -> f64 {
        // Abramowitz–Stegun 7.1.26
        let t = 1.0 / (1.0 + 0.3275911 * x.abs());
        let y = 1.0
            - (((((1.061405429 * t - 1.453152027) * t) + 1.421413741) * t - 0.284496736) * t
                + 0.254829592)
                * t
                * (-x * x).exp();
        if x >= 0.0 {
            y
        } else {
            -y
        }
    }
}
