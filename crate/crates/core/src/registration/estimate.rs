use nalgebra::{SMatrix, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Homography, RegistrationError};

/// A visible/infrared correspondence in pixel coordinates of each frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointPair {
    pub x_vis: f64,
    pub y_vis: f64,
    pub x_ir: f64,
    pub y_ir: f64,
}

impl PointPair {
    pub fn new(x_vis: f64, y_vis: f64, x_ir: f64, y_ir: f64) -> Self {
        Self { x_vis, y_vis, x_ir, y_ir }
    }

    /// Residual `(H·ir − vis)`; `None` at a point at infinity.
    fn residual(&self, h: &Homography) -> Option<(f64, f64)> {
        h.apply(self.x_ir, self.y_ir)
            .ok()
            .map(|(x, y)| (x - self.x_vis, y - self.y_vis))
    }
}

/// Per-axis and combined root-mean-square residuals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rmse {
    pub x: f64,
    pub y: f64,
    pub total: f64,
}

/// RMSE of infrared points projected by `h` against their visible partners.
pub fn rmse(pairs: &[PointPair], h: &Homography) -> Result<Rmse, RegistrationError> {
    if pairs.is_empty() {
        return Err(RegistrationError::Undefined("RMSE of an empty pair list".into()));
    }
    let (mut sx, mut sy) = (0.0, 0.0);
    for p in pairs {
        let (px, py) = h.apply(p.x_ir, p.y_ir)?;
        sx += (px - p.x_vis).powi(2);
        sy += (py - p.y_vis).powi(2);
    }
    let n = pairs.len() as f64;
    let (x, y) = ((sx / n).sqrt(), (sy / n).sqrt());
    Ok(Rmse {
        x,
        y,
        total: (x * x + y * y).sqrt(),
    })
}

/// Similarity taking the points' centroid to the origin and their mean
/// distance to `√2`.
fn normalizer(pts: impl Iterator<Item = (f64, f64)> + Clone) -> [[f64; 3]; 3] {
    let n = pts.clone().count() as f64;
    let (cx, cy) = pts.clone().fold((0.0, 0.0), |a, p| (a.0 + p.0, a.1 + p.1));
    let (cx, cy) = (cx / n, cy / n);
    let mean = pts.map(|p| (p.0 - cx).hypot(p.1 - cy)).sum::<f64>() / n;
    let s = if mean > 0.0 { std::f64::consts::SQRT_2 / mean } else { 1.0 };
    [[s, 0.0, -s * cx], [0.0, s, -s * cy], [0.0, 0.0, 1.0]]
}

fn mul(a: &[[f64; 3]; 3], b: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

fn tf(m: &[[f64; 3]; 3], x: f64, y: f64) -> (f64, f64) {
    (m[0][0] * x + m[0][2], m[1][1] * y + m[1][2])
}

/// Normalized direct linear transform: the least-squares `H` (unit-norm
/// algebraic error) mapping infrared to visible points. Needs ≥ 4 pairs.
pub fn fit_dlt(pairs: &[PointPair]) -> Result<Homography, RegistrationError> {
    if pairs.len() < 4 {
        return Err(RegistrationError::EstimationFailed(format!(
            "{} correspondences, need at least 4",
            pairs.len()
        )));
    }
    let t_ir = normalizer(pairs.iter().map(|p| (p.x_ir, p.y_ir)));
    let t_vis = normalizer(pairs.iter().map(|p| (p.x_vis, p.y_vis)));
    let mut ata = SMatrix::<f64, 9, 9>::zeros();
    for p in pairs {
        let (x, y) = tf(&t_ir, p.x_ir, p.y_ir);
        let (u, v) = tf(&t_vis, p.x_vis, p.y_vis);
        let r1 = SMatrix::<f64, 1, 9>::from_row_slice(&[-x, -y, -1.0, 0.0, 0.0, 0.0, u * x, u * y, u]);
        let r2 = SMatrix::<f64, 1, 9>::from_row_slice(&[0.0, 0.0, 0.0, -x, -y, -1.0, v * x, v * y, v]);
        ata += r1.transpose() * r1 + r2.transpose() * r2;
    }
    let eig = SymmetricEigen::new(ata);
    let (imin, _) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .expect("nine eigenvalues");
    let h = eig.eigenvectors.column(imin);
    let hn = [[h[0], h[1], h[2]], [h[3], h[4], h[5]], [h[6], h[7], h[8]]];
    // denormalize: H = T_vis⁻¹ · Hn · T_ir
    let s = t_vis[0][0];
    let t_vis_inv = [
        [1.0 / s, 0.0, -t_vis[0][2] / s],
        [0.0, 1.0 / s, -t_vis[1][2] / s],
        [0.0, 0.0, 1.0],
    ];
    Homography::from_matrix(mul(&mul(&t_vis_inv, &hn), &t_ir))
}

/// Twice the signed area of the triangle `abc`.
fn area2(a: (f64, f64), b: (f64, f64), c: (f64, f64)) -> f64 {
    (b.0 - a.0) * (c.1 - a.1) - (b.1 - a.1) * (c.0 - a.0)
}

/// A minimal sample is rejected when any three of its points are nearly
/// collinear in either frame.
fn degenerate(sample: &[PointPair; 4]) -> bool {
    const MIN_AREA2: f64 = 1.0;
    let vis: Vec<_> = sample.iter().map(|p| (p.x_vis, p.y_vis)).collect();
    let ir: Vec<_> = sample.iter().map(|p| (p.x_ir, p.y_ir)).collect();
    for pts in [&vis, &ir] {
        for (i, j, k) in [(0, 1, 2), (0, 1, 3), (0, 2, 3), (1, 2, 3)] {
            if area2(pts[i], pts[j], pts[k]).abs() < MIN_AREA2 {
                return true;
            }
        }
    }
    false
}

/// Consensus set of `h`: inlier flags and the summed squared residual of the
/// inliers.
fn consensus(pairs: &[PointPair], h: &Homography, tol: f64) -> (Vec<bool>, usize, f64) {
    let tol2 = tol * tol;
    let mut mask = Vec::with_capacity(pairs.len());
    let (mut n, mut err) = (0usize, 0.0f64);
    for p in pairs {
        let inlier = match p.residual(h) {
            Some((dx, dy)) if dx * dx + dy * dy <= tol2 => {
                n += 1;
                err += dx * dx + dy * dy;
                true
            }
            _ => false,
        };
        mask.push(inlier);
    }
    (mask, n, err)
}

#[derive(Debug, Clone, Copy)]
pub struct RansacParams {
    pub tolerance: f64,
    pub min_matches: usize,
    pub confidence: f64,
    pub max_samples: usize,
}

impl RansacParams {
    pub fn new(tolerance: f64, min_matches: usize) -> Self {
        Self {
            tolerance,
            min_matches,
            confidence: 0.999,
            max_samples: 5000,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RansacFit {
    pub homography: Homography,
    pub inliers: Vec<bool>,
}

impl RansacFit {
    pub fn inlier_pairs(&self, pairs: &[PointPair]) -> Vec<PointPair> {
        pairs
            .iter()
            .zip(&self.inliers)
            .filter(|(_, &m)| m)
            .map(|(p, _)| *p)
            .collect()
    }

    pub fn inlier_count(&self) -> usize {
        self.inliers.iter().filter(|&&m| m).count()
    }
}

const BATCH: usize = 64;

/// Robust homography: adaptive RANSAC over 4-point samples, then least-squares
/// refits on the consensus set until it stops changing.
///
/// Samples are drawn sequentially from the seeded generator and scored in
/// parallel batches, so the outcome depends only on `seed`.
pub fn estimate_ransac(
    pairs: &[PointPair],
    params: &RansacParams,
    seed: u64,
) -> Result<RansacFit, RegistrationError> {
    let need = params.min_matches.max(4);
    if pairs.len() < need {
        return Err(RegistrationError::EstimationFailed(format!(
            "{} correspondences, need at least {need}",
            pairs.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = pairs.len();
    let mut best: Option<(usize, f64, Homography)> = None;
    let mut budget = params.max_samples;
    let mut drawn = 0usize;

    while drawn < budget {
        let take = BATCH.min(budget - drawn);
        let samples: Vec<[PointPair; 4]> = (0..take)
            .map(|_| {
                let idx = rand::seq::index::sample(&mut rng, n, 4);
                [pairs[idx.index(0)], pairs[idx.index(1)], pairs[idx.index(2)], pairs[idx.index(3)]]
            })
            .collect();
        drawn += take;
        let scored: Vec<Option<(usize, f64, Homography)>> = samples
            .par_iter()
            .map(|s| {
                if degenerate(s) {
                    return None;
                }
                let h = fit_dlt(s).ok()?;
                let (_, count, err) = consensus(pairs, &h, params.tolerance);
                Some((count, err, h))
            })
            .collect();
        for cand in scored.into_iter().flatten() {
            let better = best
                .as_ref()
                .is_none_or(|b| cand.0 > b.0 || (cand.0 == b.0 && cand.1 < b.1));
            if better {
                best = Some(cand);
            }
        }
        if let Some((count, _, _)) = &best {
            let w = *count as f64 / n as f64;
            let p_good = w.powi(4);
            let needed = if p_good >= 1.0 - f64::EPSILON {
                0
            } else if p_good <= 0.0 {
                usize::MAX
            } else {
                ((1.0 - params.confidence).ln() / (1.0 - p_good).ln()).ceil() as usize
            };
            budget = budget.min(needed);
        }
    }
    let (count, _, mut h) = best.ok_or_else(|| {
        RegistrationError::EstimationFailed("no non-degenerate sample".into())
    })?;
    if count < need {
        return Err(RegistrationError::EstimationFailed(format!(
            "consensus of {count} below the required {need}"
        )));
    }
    let (mut mask, _, _) = consensus(pairs, &h, params.tolerance);
    for _ in 0..10 {
        let inl: Vec<PointPair> = pairs
            .iter()
            .zip(&mask)
            .filter(|(_, &m)| m)
            .map(|(p, _)| *p)
            .collect();
        let Ok(refit) = fit_dlt(&inl) else { break };
        let (next, c, _) = consensus(pairs, &refit, params.tolerance);
        if c < need {
            break;
        }
        h = refit;
        if next == mask {
            break;
        }
        mask = next;
    }
    let (mask, count, _) = consensus(pairs, &h, params.tolerance);
    if count < need {
        return Err(RegistrationError::EstimationFailed(format!(
            "consensus of {count} below the required {need}"
        )));
    }
    Ok(RansacFit {
        homography: h,
        inliers: mask,
    })
}
