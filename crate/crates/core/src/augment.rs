//! Labeled training patches from full frames over a grid of shifts,
//! rotations, rescalings and brightness gains.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::raster::{quantize, Raster};
use crate::segmap::{ClassLabel, ClassMap};

#[derive(Debug, Error)]
pub enum AugmentError {
    #[error("augmentation grid: {0}")]
    Config(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentationGrid {
    /// Horizontal overlap between neighboring patches.
    pub overlap_fraction: f64,
    /// Degrees, each in `[0, 180]`.
    pub rotations: Vec<f64>,
    /// Zoom factors; below 1 the patch covers a larger source area.
    pub scales: Vec<f64>,
    pub brightness: Vec<f64>,
    pub patch_w: usize,
    pub patch_h: usize,
}

impl Default for AugmentationGrid {
    fn default() -> Self {
        Self {
            overlap_fraction: 0.5,
            rotations: vec![0.0, 30.0, 60.0, 90.0, 120.0, 150.0, 180.0],
            scales: vec![0.5, 0.75, 1.0, 1.25, 1.5],
            brightness: vec![0.8, 0.9, 1.0, 1.1, 1.2],
            patch_w: 480,
            patch_h: 360,
        }
    }
}

impl AugmentationGrid {
    pub fn validate(&self) -> Result<(), AugmentError> {
        let bad = |m: &str| Err(AugmentError::Config(m.into()));
        if self.patch_w == 0 || self.patch_h == 0 {
            return bad("patch dimensions must be positive");
        }
        if !(0.0..1.0).contains(&self.overlap_fraction) {
            return bad("overlap_fraction must lie in [0, 1)");
        }
        if self.stride_x() == 0 {
            return bad("overlap leaves a zero horizontal stride");
        }
        if self.rotations.is_empty() || self.scales.is_empty() || self.brightness.is_empty() {
            return bad("rotation, scale and brightness lists must be non-empty");
        }
        if self.rotations.iter().any(|r| !(0.0..=180.0).contains(r)) {
            return bad("rotations must lie in [0, 180] degrees");
        }
        if self.scales.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return bad("scale factors must be positive");
        }
        if self.brightness.iter().any(|g| !(g.is_finite() && *g > 0.0)) {
            return bad("brightness gains must be positive");
        }
        Ok(())
    }

    pub fn stride_x(&self) -> usize {
        (self.patch_w as f64 * (1.0 - self.overlap_fraction)).round() as usize
    }

    /// Full patch height: vertical neighbors do not overlap.
    pub fn stride_y(&self) -> usize {
        self.patch_h
    }

    fn positions(&self, frame_w: usize, frame_h: usize) -> Result<(usize, usize), AugmentError> {
        self.validate()?;
        if frame_w < self.patch_w || frame_h < self.patch_h {
            return Err(AugmentError::Config(format!(
                "{frame_w}x{frame_h} frame is smaller than a {}x{} patch",
                self.patch_w, self.patch_h
            )));
        }
        Ok((
            (frame_w - self.patch_w) / self.stride_x() + 1,
            (frame_h - self.patch_h) / self.stride_y() + 1,
        ))
    }

    fn tuples_per_position(&self) -> usize {
        self.rotations.len() * self.scales.len() * self.brightness.len()
    }
}

/// Patches the grid asks for on a `frame_w × frame_h` frame, skipped ones
/// included.
pub fn expected_count(frame_w: usize, frame_h: usize, grid: &AugmentationGrid) -> Result<usize, AugmentError> {
    let (nx, ny) = grid.positions(frame_w, frame_h)?;
    Ok(nx * ny * grid.tuples_per_position())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchParams {
    pub source: String,
    pub index: usize,
    /// Top-left corner of the unrotated patch footprint.
    pub x: usize,
    pub y: usize,
    pub rotation: f64,
    pub scale: f64,
    pub brightness: f64,
}

impl PatchParams {
    /// Output pixel to source coordinates: rotation about the patch center,
    /// then division by the zoom factor.
    pub fn source_point(&self, grid: &AugmentationGrid, u: f64, v: f64) -> (f64, f64) {
        let (cu, cv) = ((grid.patch_w as f64 - 1.0) / 2.0, (grid.patch_h as f64 - 1.0) / 2.0);
        let (sx, sy) = (self.x as f64 + cu, self.y as f64 + cv);
        let (du, dv) = ((u - cu) / self.scale, (v - cv) / self.scale);
        let (sin, cos) = self.rotation.to_radians().sin_cos();
        (sx + cos * du - sin * dv, sy + sin * du + cos * dv)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledPatch {
    pub image: Raster,
    pub labels: ClassMap,
    pub provenance: PatchParams,
}

/// One step of [`generate`].
#[derive(Debug, Clone, PartialEq)]
pub enum Generated {
    Patch(LabeledPatch),
    /// The transformed window leaves the frame.
    Skipped(PatchParams),
}

/// Geometric part of a patch, shared by all brightness gains.
struct Warped {
    values: Vec<f64>,
    labels: ClassMap,
}

/// Lazy patch sequence, ordered by position (row-major), then rotation,
/// scale and brightness.
pub struct PatchIter<'a> {
    frame: &'a Raster,
    labels: &'a ClassMap,
    grid: AugmentationGrid,
    source: String,
    nx: usize,
    total: usize,
    next: usize,
    cached: Option<(usize, Option<Warped>)>,
}

pub fn generate<'a>(
    frame: &'a Raster,
    labels: &'a ClassMap,
    grid: &AugmentationGrid,
    source: &str,
) -> Result<PatchIter<'a>, AugmentError> {
    if (frame.width(), frame.height()) != (labels.width(), labels.height()) {
        return Err(AugmentError::Dimension(format!(
            "frame {}x{}, labels {}x{}",
            frame.width(),
            frame.height(),
            labels.width(),
            labels.height()
        )));
    }
    let (nx, ny) = grid.positions(frame.width(), frame.height())?;
    Ok(PatchIter {
        frame,
        labels,
        grid: grid.clone(),
        source: source.to_string(),
        nx,
        total: nx * ny * grid.tuples_per_position(),
        next: 0,
        cached: None,
    })
}

impl PatchIter<'_> {
    pub fn expected(&self) -> usize {
        self.total
    }

    fn params(&self, index: usize) -> PatchParams {
        let g = &self.grid;
        let nb = g.brightness.len();
        let ns = g.scales.len();
        let nr = g.rotations.len();
        let b = index % nb;
        let s = (index / nb) % ns;
        let r = (index / (nb * ns)) % nr;
        let pos = index / (nb * ns * nr);
        PatchParams {
            source: self.source.clone(),
            index,
            x: (pos % self.nx) * g.stride_x(),
            y: (pos / self.nx) * g.stride_y(),
            rotation: g.rotations[r],
            scale: g.scales[s],
            brightness: g.brightness[b],
        }
    }

    fn warp(&self, p: &PatchParams) -> Option<Warped> {
        let g = &self.grid;
        let (w, h) = (self.frame.width(), self.frame.height());
        let (maxx, maxy) = ((w - 1) as f64, (h - 1) as f64);
        let inside = |(x, y): (f64, f64)| {
            const EPS: f64 = 1e-9;
            x >= -EPS && y >= -EPS && x <= maxx + EPS && y <= maxy + EPS
        };
        let (pw, ph) = (g.patch_w as f64 - 1.0, g.patch_h as f64 - 1.0);
        let corners = [(0.0, 0.0), (pw, 0.0), (0.0, ph), (pw, ph)];
        if !corners.iter().all(|&(u, v)| inside(p.source_point(g, u, v))) {
            return None;
        }
        let c = self.frame.channels();
        let data = self.frame.data();
        let mut values = Vec::with_capacity(g.patch_w * g.patch_h * c);
        let mut labels = Vec::with_capacity(g.patch_w * g.patch_h);
        for v in 0..g.patch_h {
            for u in 0..g.patch_w {
                let (sx, sy) = p.source_point(g, u as f64, v as f64);
                let (sx, sy) = (sx.clamp(0.0, maxx), sy.clamp(0.0, maxy));
                let (x0, y0) = (sx.floor() as usize, sy.floor() as usize);
                let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
                let (fx, fy) = (sx - x0 as f64, sy - y0 as f64);
                let at = |x: usize, y: usize, ch: usize| f64::from(data[(y * w + x) * c + ch]);
                for ch in 0..c {
                    let top = at(x0, y0, ch) * (1.0 - fx) + at(x1, y0, ch) * fx;
                    let bottom = at(x0, y1, ch) * (1.0 - fx) + at(x1, y1, ch) * fx;
                    values.push(top * (1.0 - fy) + bottom * fy);
                }
                let nx = ((sx + 0.5).floor() as usize).min(w - 1);
                let ny = ((sy + 0.5).floor() as usize).min(h - 1);
                labels.push(self.labels.get(nx, ny));
            }
        }
        let labels = ClassMap::new(g.patch_w, g.patch_h, labels, self.labels.modality).expect("patch layout");
        Some(Warped { values, labels })
    }
}

impl Iterator for PatchIter<'_> {
    type Item = Generated;

    fn next(&mut self) -> Option<Generated> {
        if self.next >= self.total {
            return None;
        }
        let index = self.next;
        self.next += 1;
        let p = self.params(index);
        let geometry = index / self.grid.brightness.len();
        if self.cached.as_ref().map(|c| c.0) != Some(geometry) {
            self.cached = Some((geometry, self.warp(&p)));
        }
        let Some((_, Some(warped))) = &self.cached else {
            log::debug!(
                "skipping patch {index} of {}: window at ({}, {}) rot {} scale {} leaves the frame",
                p.source,
                p.x,
                p.y,
                p.rotation,
                p.scale
            );
            return Some(Generated::Skipped(p));
        };
        let data = warped.values.iter().map(|&v| quantize(v * p.brightness)).collect();
        let image = Raster::new(self.grid.patch_w, self.grid.patch_h, self.frame.channels(), data)
            .expect("patch layout");
        Some(Generated::Patch(LabeledPatch {
            image,
            labels: warped.labels.clone(),
            provenance: p,
        }))
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let left = self.total - self.next;
        (left, Some(left))
    }
}

impl ExactSizeIterator for PatchIter<'_> {}

/// Shuffles deterministically and keeps `floor(train_fraction · N)` items
/// for training; the rest go to validation.
pub fn split_dataset<T>(mut items: Vec<T>, train_fraction: f64, seed: u64) -> (Vec<T>, Vec<T>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    items.shuffle(&mut rng);
    let n = items.len();
    let k = ((train_fraction.clamp(0.0, 1.0) * n as f64) + 1e-9).floor() as usize;
    let validation = items.split_off(k.min(n));
    (items, validation)
}

/// Label codes present in a patch.
pub fn classes_present(labels: &ClassMap) -> Vec<ClassLabel> {
    let mut seen = [false; 4];
    for l in labels.labels() {
        seen[l.code() as usize] = true;
    }
    ClassLabel::ALL.into_iter().filter(|l| seen[l.code() as usize]).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::segmap::Modality;

    fn small_grid() -> AugmentationGrid {
        AugmentationGrid {
            rotations: vec![0.0],
            scales: vec![1.0],
            brightness: vec![1.0],
            patch_w: 8,
            patch_h: 6,
            ..AugmentationGrid::default()
        }
    }

    fn frame(w: usize, h: usize) -> (Raster, ClassMap) {
        let img = Raster::from_fn_gray(w, h, |x, y| ((x * 13 + y * 29) % 251) as u8);
        let codes: Vec<u8> = (0..w * h).map(|i| ((i / 3 + i / w) % 4) as u8).collect();
        (img, ClassMap::from_codes(w, h, &codes, Modality::Visible).unwrap())
    }

    #[test]
    fn default_grid_count() {
        let g = AugmentationGrid::default();
        assert_eq!(g.stride_x(), 240);
        assert_eq!(expected_count(4608, 3456, &g).unwrap(), 18 * 9 * 7 * 5 * 5);
        assert_eq!(expected_count(4608, 3456, &g).unwrap(), 28_350);
    }

    #[test]
    fn exact_frame_single_patch() {
        let g = AugmentationGrid { rotations: vec![0.0], scales: vec![1.0], brightness: vec![1.0], ..Default::default() };
        assert_eq!(expected_count(480, 360, &g).unwrap(), 1);
        let doubled = AugmentationGrid { rotations: vec![0.0, 90.0], ..g.clone() };
        assert_eq!(expected_count(480, 360, &doubled).unwrap(), 2);
        assert!(matches!(expected_count(479, 360, &g), Err(AugmentError::Config(_))));
    }

    #[test]
    fn invalid_grids() {
        let base = AugmentationGrid::default();
        for g in [
            AugmentationGrid { scales: vec![0.0], ..base.clone() },
            AugmentationGrid { brightness: vec![-1.0], ..base.clone() },
            AugmentationGrid { rotations: vec![190.0], ..base.clone() },
            AugmentationGrid { overlap_fraction: 1.0, ..base.clone() },
            AugmentationGrid { rotations: vec![], ..base.clone() },
        ] {
            assert!(g.validate().is_err());
        }
    }

    #[test]
    fn identity_tuple_is_raw_crop() {
        let (img, labels) = frame(20, 13);
        let g = small_grid();
        let out: Vec<Generated> = generate(&img, &labels, &g, "f").unwrap().collect();
        assert_eq!(out.len(), expected_count(20, 13, &g).unwrap());
        for item in out {
            let Generated::Patch(p) = item else { panic!("identity patch skipped") };
            let (x, y) = (p.provenance.x, p.provenance.y);
            assert_eq!(p.image, img.crop(x, y, 8, 6).unwrap());
            assert_eq!(p.labels, labels.crop(x, y, 8, 6).unwrap());
        }
    }

    #[test]
    fn gain_clamps() {
        let img = Raster::new(8, 6, 1, vec![250; 48]).unwrap();
        let labels = ClassMap::filled(8, 6, ClassLabel::Healthy, Modality::Visible);
        let g = AugmentationGrid { brightness: vec![1.2], ..small_grid() };
        let Some(Generated::Patch(p)) = generate(&img, &labels, &g, "f").unwrap().next() else {
            panic!("no patch")
        };
        assert!(p.image.data().iter().all(|&v| v == 255));
        assert_eq!(p.labels, labels);
    }

    #[test]
    fn rotated_labels_follow_preimage() {
        let (img, labels) = frame(40, 30);
        let g = AugmentationGrid { rotations: vec![90.0], ..small_grid() };
        let mut emitted = 0;
        for item in generate(&img, &labels, &g, "f").unwrap() {
            let Generated::Patch(p) = item else { continue };
            emitted += 1;
            for v in 0..6 {
                for u in 0..8 {
                    let (sx, sy) = p.provenance.source_point(&g, u as f64, v as f64);
                    let (sx, sy) = ((sx + 0.5).floor() as usize, (sy + 0.5).floor() as usize);
                    assert_eq!(p.labels.get(u, v), labels.get(sx, sy));
                }
            }
        }
        assert!(emitted > 0);
    }

    #[test]
    fn ordering_and_skips() {
        let (img, labels) = frame(24, 12);
        let g = AugmentationGrid {
            rotations: vec![0.0, 45.0],
            scales: vec![1.0, 0.5],
            brightness: vec![1.0, 1.1],
            ..small_grid()
        };
        let out: Vec<Generated> = generate(&img, &labels, &g, "f").unwrap().collect();
        assert_eq!(out.len(), expected_count(24, 12, &g).unwrap());
        let params: Vec<PatchParams> = out
            .iter()
            .map(|o| match o {
                Generated::Patch(p) => p.provenance.clone(),
                Generated::Skipped(p) => p.clone(),
            })
            .collect();
        assert!(params.iter().enumerate().all(|(i, p)| p.index == i));
        assert_eq!((params[0].rotation, params[0].scale, params[0].brightness), (0.0, 1.0, 1.0));
        assert_eq!(params[1].brightness, 1.1);
        assert_eq!(params[2].scale, 0.5);
        assert_eq!(params[4].rotation, 45.0);
        assert!(out.iter().any(|o| matches!(o, Generated::Skipped(_))));
    }

    #[test]
    fn split_sizes_and_determinism() {
        let (a, b) = split_dataset((0..100).collect::<Vec<_>>(), 0.85, 3);
        assert_eq!((a.len(), b.len()), (85, 15));
        let (c, d) = split_dataset((0..100).collect::<Vec<_>>(), 0.85, 3);
        assert_eq!((a, b), (c, d));
        let (a, b) = split_dataset(vec![1, 2], 0.85, 0);
        assert_eq!((a.len(), b.len()), (1, 1));
    }
}
