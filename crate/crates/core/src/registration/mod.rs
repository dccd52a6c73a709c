//! Infrared-to-visible registration: feature matching, RANSAC homography
//! estimation under a sweep of thresholds, a corner-displacement viability
//! test, and iterative refinement on the warped pair.

mod estimate;
mod homography;
mod warp;

pub use estimate::{estimate_ransac, fit_dlt, rmse, PointPair, RansacFit, RansacParams, Rmse};
pub use homography::{viable, Homography, MIN_DET};
pub use warp::{warp, warp_labels};

use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{
    extract, match_descriptors, mutual_matches, support_radius, AkazeConfig, FeatureError,
    Features, Match,
};
use crate::raster::{extract_channel, normalize, Mask, Raster, RasterError, SpectralChannel};

#[derive(Debug, Error)]
pub enum RegistrationError {
    #[error("invalid input: {0}")]
    Input(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("degenerate homography: {0}")]
    Degenerate(String),
    #[error("point ({x}, {y}) maps to infinity")]
    PointAtInfinity { x: f64, y: f64 },
    #[error("undefined statistic: {0}")]
    Undefined(String),
    #[error("estimation failed: {0}")]
    EstimationFailed(String),
    #[error("insufficient texture: at most {best} matches, need {need}")]
    InsufficientTexture { best: usize, need: usize },
    #[error("registration failed: {0}")]
    Failed(String),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Raster(#[from] RasterError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegistrationConfig {
    /// RANSAC reprojection tolerances in pixels, ascending.
    pub ransac_threshold_schedule: Vec<f64>,
    /// Hamming distance limits in bits, ascending.
    pub match_threshold_schedule: Vec<u32>,
    /// Largest admissible corner displacement as a fraction of the diagonal.
    pub corner_displacement_bound: f64,
    pub max_iterations: usize,
    pub min_matches: usize,
    /// A refinement is kept only if it lowers the RMSE by more than this.
    pub improvement_epsilon: f64,
    pub akaze: AkazeConfig,
}

impl Default for RegistrationConfig {
    fn default() -> Self {
        Self {
            ransac_threshold_schedule: vec![2.0, 4.0, 6.0, 10.0],
            match_threshold_schedule: vec![40, 55, 70, 90],
            corner_displacement_bound: 0.25,
            max_iterations: 10,
            min_matches: 10,
            improvement_epsilon: 1e-6,
            akaze: AkazeConfig::default(),
        }
    }
}

fn strictly_ascending<T: PartialOrd>(v: &[T]) -> bool {
    v.windows(2).all(|w| w[0] < w[1])
}

impl RegistrationConfig {
    pub fn validate(&self) -> Result<(), RegistrationError> {
        let bad = |m: &str| Err(RegistrationError::Config(m.into()));
        if self.ransac_threshold_schedule.is_empty()
            || !strictly_ascending(&self.ransac_threshold_schedule)
            || self.ransac_threshold_schedule[0] <= 0.0
        {
            return bad("RANSAC threshold schedule must be non-empty, positive and strictly ascending");
        }
        if self.match_threshold_schedule.is_empty()
            || !strictly_ascending(&self.match_threshold_schedule)
        {
            return bad("match threshold schedule must be non-empty and strictly ascending");
        }
        if self.max_iterations < 1 {
            return bad("max_iterations must be at least 1");
        }
        if self.min_matches < 4 {
            return bad("min_matches must be at least 4");
        }
        if !(self.corner_displacement_bound > 0.0) {
            return bad("corner displacement bound must be positive");
        }
        if !(self.improvement_epsilon >= 0.0) {
            return bad("improvement epsilon must be nonnegative");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RegistrationMode {
    /// Pre-registration only; no refinement was kept.
    Standard,
    /// At least one refinement iteration lowered the RMSE.
    Optimized,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Quality {
    Ok,
    Degraded,
    Unreliable,
}

impl Quality {
    pub fn from_rmse(rmse: f64) -> Self {
        if rmse > 10.0 {
            Quality::Unreliable
        } else if rmse > 5.0 {
            Quality::Degraded
        } else {
            Quality::Ok
        }
    }
}

#[derive(Debug, Clone)]
pub struct RegistrationResult {
    /// Composition of the pre-registration and all accepted refinements.
    pub homography: Homography,
    pub rmse: f64,
    pub rmse_x: f64,
    pub rmse_y: f64,
    /// One for the pre-registration plus one per accepted refinement.
    pub iterations: usize,
    /// Correspondences behind the reported RMSE, infrared side in the
    /// original infrared frame.
    pub inliers: Vec<PointPair>,
    pub runtime: f64,
    /// RMSE of the pre-registration alone.
    pub standard_rmse: f64,
    pub mode: RegistrationMode,
    pub match_threshold: u32,
    pub ransac_threshold: f64,
    /// RMSE after the pre-registration and after each accepted refinement.
    pub rmse_history: Vec<f64>,
}

/// Serialized registration report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegistrationReport {
    pub rmse: f64,
    pub rmse_x: f64,
    pub rmse_y: f64,
    pub iterations: usize,
    pub inlier_count: usize,
    pub runtime_seconds: f64,
    pub homography: [f64; 9],
    pub mode: RegistrationMode,
    pub quality: Quality,
    pub standard_rmse: f64,
    pub match_threshold: u32,
    pub ransac_threshold: f64,
}

impl RegistrationResult {
    pub fn quality(&self) -> Quality {
        Quality::from_rmse(self.rmse)
    }

    pub fn report(&self) -> RegistrationReport {
        RegistrationReport {
            rmse: self.rmse,
            rmse_x: self.rmse_x,
            rmse_y: self.rmse_y,
            iterations: self.iterations,
            inlier_count: self.inliers.len(),
            runtime_seconds: self.runtime,
            homography: self.homography.to_row_major(),
            mode: self.mode,
            quality: self.quality(),
            standard_rmse: self.standard_rmse,
            match_threshold: self.match_threshold,
            ransac_threshold: self.ransac_threshold,
        }
    }
}

/// Green plane of the visible frame (a single-channel frame is used as is)
/// and infrared plane, both contrast-normalized.
fn prepare(vis: &Raster, ir: &Raster) -> Result<(Raster, Raster), RegistrationError> {
    if vis.is_empty() || ir.is_empty() {
        return Err(RegistrationError::Input("empty raster".into()));
    }
    let g = if vis.channels() == 1 {
        vis.clone()
    } else {
        extract_channel(vis, SpectralChannel::Green)?
    };
    let nir = extract_channel(ir, SpectralChannel::Nir)?;
    Ok((normalize(&g)?, normalize(&nir)?))
}

fn pairs_of(vis: &Features, ir: &Features, matches: &[Match]) -> Vec<PointPair> {
    matches
        .iter()
        .map(|m| {
            let a = &vis.keypoints[m.query_index];
            let b = &ir.keypoints[m.train_index];
            PointPair::new(f64::from(a.x), f64::from(a.y), f64::from(b.x), f64::from(b.y))
        })
        .collect()
}

fn attempt_seed(seed: u64, attempt: u64) -> u64 {
    seed ^ attempt.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Summed-area table of invalid pixels, for O(1) window queries.
struct InvalidCounts {
    w: usize,
    h: usize,
    sums: Vec<u32>,
}

impl InvalidCounts {
    fn new(mask: &Mask) -> Self {
        let (w, h) = (mask.width(), mask.height());
        let mut sums = vec![0u32; (w + 1) * (h + 1)];
        for y in 0..h {
            let mut row = 0u32;
            for x in 0..w {
                row += u32::from(!mask.get(x, y));
                sums[(y + 1) * (w + 1) + x + 1] = sums[y * (w + 1) + x + 1] + row;
            }
        }
        Self { w, h, sums }
    }

    /// True when the square of half-width `r` around `(x, y)` lies inside
    /// the frame and is fully valid.
    fn clear(&self, x: f32, y: f32, r: f32) -> bool {
        let (x0, y0) = ((x - r).floor(), (y - r).floor());
        let (x1, y1) = ((x + r).ceil(), (y + r).ceil());
        if x0 < 0.0 || y0 < 0.0 || x1 >= self.w as f32 || y1 >= self.h as f32 {
            return false;
        }
        let (x0, y0, x1, y1) = (x0 as usize, y0 as usize, x1 as usize + 1, y1 as usize + 1);
        let s = |x: usize, y: usize| self.sums[y * (self.w + 1) + x];
        s(x1, y1) + s(x0, y0) == s(x0, y1) + s(x1, y0)
    }
}

struct Stage {
    h: Homography,
    rmse: Rmse,
    inliers: Vec<PointPair>,
}

/// Registers an infrared frame onto a visible frame.
///
/// The returned homography maps infrared pixel coordinates to visible pixel
/// coordinates. Matching and RANSAC thresholds are relaxed along their
/// schedules until a viable homography is found; that pre-registration is
/// then refined by re-matching against the warped infrared frame as long as
/// the RMSE keeps falling.
pub fn register_pair(
    vis: &Raster,
    ir: &Raster,
    cfg: &RegistrationConfig,
    seed: u64,
) -> Result<RegistrationResult, RegistrationError> {
    let start = Instant::now();
    cfg.validate()?;
    let (g, nir) = prepare(vis, ir)?;
    let (ir_w, ir_h) = (nir.width(), nir.height());
    let fv = extract(&g, &cfg.akaze)?;
    let fi = extract(&nir, &cfg.akaze)?;
    let all = mutual_matches(&fv.descriptors, &fi.descriptors);

    // dynamic regulation
    let mut best_count = 0usize;
    let mut attempt = 0u64;
    let mut pre: Option<(Stage, u32, f64)> = None;
    'sweep: for &mt in &cfg.match_threshold_schedule {
        let matches: Vec<Match> = all.iter().filter(|m| m.distance <= mt).copied().collect();
        best_count = best_count.max(matches.len());
        if matches.len() < cfg.min_matches {
            attempt += cfg.ransac_threshold_schedule.len() as u64;
            continue;
        }
        let pairs = pairs_of(&fv, &fi, &matches);
        for &tol in &cfg.ransac_threshold_schedule {
            let params = RansacParams::new(tol, cfg.min_matches);
            let fit = estimate_ransac(&pairs, &params, attempt_seed(seed, attempt));
            attempt += 1;
            let Ok(fit) = fit else { continue };
            if !viable(&fit.homography, ir_w, ir_h, cfg.corner_displacement_bound) {
                continue;
            }
            let inliers = fit.inlier_pairs(&pairs);
            let r = rmse(&inliers, &fit.homography)?;
            pre = Some((
                Stage {
                    h: fit.homography,
                    rmse: r,
                    inliers,
                },
                mt,
                tol,
            ));
            break 'sweep;
        }
    }
    let Some((standard, match_threshold, tol)) = pre else {
        return Err(if best_count < cfg.min_matches {
            RegistrationError::InsufficientTexture {
                best: best_count,
                need: cfg.min_matches,
            }
        } else {
            RegistrationError::Failed("no viable homography at any threshold".into())
        });
    };

    let standard_rmse = standard.rmse.total;
    let mut history = vec![standard_rmse];
    let mut current = standard;
    let mut iterations = 1usize;
    while iterations < cfg.max_iterations {
        let Some(next) = refine_once(&g, &nir, &fv, &current, cfg, match_threshold, tol, attempt_seed(seed, attempt))? else {
            break;
        };
        attempt += 1;
        if next.rmse.total < current.rmse.total - cfg.improvement_epsilon {
            history.push(next.rmse.total);
            current = next;
            iterations += 1;
        } else {
            break;
        }
    }

    Ok(RegistrationResult {
        homography: current.h,
        rmse: current.rmse.total,
        rmse_x: current.rmse.x,
        rmse_y: current.rmse.y,
        iterations,
        inliers: current.inliers,
        runtime: start.elapsed().as_secs_f64(),
        standard_rmse,
        mode: if iterations > 1 {
            RegistrationMode::Optimized
        } else {
            RegistrationMode::Standard
        },
        match_threshold,
        ransac_threshold: tol,
        rmse_history: history,
    })
}

/// Re-detects on the infrared frame warped by the current estimate and fits
/// an incremental homography; `None` when no viable refinement exists.
#[allow(clippy::too_many_arguments)]
fn refine_once(
    g: &Raster,
    nir: &Raster,
    fv: &Features,
    current: &Stage,
    cfg: &RegistrationConfig,
    match_threshold: u32,
    tol: f64,
    seed: u64,
) -> Result<Option<Stage>, RegistrationError> {
    let (warped, valid) = warp(nir, &current.h, g.width(), g.height())?;
    let mut fw = extract(&warped, &cfg.akaze)?;
    let invalid = InvalidCounts::new(&valid);
    let pattern = cfg.akaze.pattern_size;
    fw.retain(|kp| invalid.clear(kp.x, kp.y, support_radius(kp, pattern) + kp.scale));
    let matches = match_descriptors(&fv.descriptors, &fw.descriptors, match_threshold);
    if matches.len() < cfg.min_matches {
        return Ok(None);
    }
    let pairs = pairs_of(fv, &fw, &matches);
    let Ok(fit) = estimate_ransac(&pairs, &RansacParams::new(tol, cfg.min_matches), seed) else {
        return Ok(None);
    };
    let Ok(h) = fit.homography.compose(&current.h) else {
        return Ok(None);
    };
    if !viable(&h, nir.width(), nir.height(), cfg.corner_displacement_bound) {
        return Ok(None);
    }
    let back = current.h.inverse()?;
    let mut inliers = Vec::new();
    for p in fit.inlier_pairs(&pairs) {
        let Ok((x, y)) = back.apply(p.x_ir, p.y_ir) else {
            return Ok(None);
        };
        inliers.push(PointPair::new(p.x_vis, p.y_vis, x, y));
    }
    let r = rmse(&inliers, &h)?;
    Ok(Some(Stage { h, rmse: r, inliers }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid() {
        let c = RegistrationConfig::default();
        c.validate().unwrap();
        assert_eq!(c.match_threshold_schedule, vec![40, 55, 70, 90]);
        assert_eq!(c.ransac_threshold_schedule, vec![2.0, 4.0, 6.0, 10.0]);
        assert_eq!((c.max_iterations, c.min_matches), (10, 10));
        assert_eq!(c.corner_displacement_bound, 0.25);
    }

    #[test]
    fn config_validation() {
        let mut c = RegistrationConfig::default();
        c.ransac_threshold_schedule = vec![4.0, 2.0];
        assert!(c.validate().is_err());
        let mut c = RegistrationConfig::default();
        c.match_threshold_schedule.clear();
        assert!(c.validate().is_err());
        let mut c = RegistrationConfig::default();
        c.min_matches = 3;
        assert!(c.validate().is_err());
        let mut c = RegistrationConfig::default();
        c.max_iterations = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn quality_flags() {
        assert_eq!(Quality::from_rmse(5.0), Quality::Ok);
        assert_eq!(Quality::from_rmse(5.01), Quality::Degraded);
        assert_eq!(Quality::from_rmse(10.0), Quality::Degraded);
        assert_eq!(Quality::from_rmse(10.5), Quality::Unreliable);
    }

    #[test]
    fn invalid_window_counts() {
        let mut bits = vec![true; 20 * 10];
        bits[5 * 20 + 15] = false;
        let c = InvalidCounts::new(&Mask::new(20, 10, bits));
        assert!(c.clear(5.0, 5.0, 3.0));
        assert!(!c.clear(13.0, 5.0, 2.0));
        assert!(!c.clear(1.0, 5.0, 2.0));
    }

    #[test]
    fn flat_images_lack_texture() {
        let a = Raster::from_fn_gray(128, 96, |_, _| 90);
        let err = register_pair(&a, &a, &RegistrationConfig::default(), 0).unwrap_err();
        assert!(matches!(err, RegistrationError::InsufficientTexture { .. }));
    }
}
