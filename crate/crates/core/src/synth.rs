//! Synthetic vineyard frames with known labels and a known infrared-to-visible
//! homography, plus a four-class texture corpus for the baseline segmenter.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::raster::{quantize, Raster};
use crate::registration::{Homography, RegistrationError};
use crate::segmap::{ClassLabel, ClassMap, Modality};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub width: usize,
    pub height: usize,
    /// Extra scene border so the infrared frame never samples outside it.
    pub margin: usize,
    pub max_translation: f64,
    pub max_rotation_deg: f64,
    pub max_projective: f64,
    /// Vine row spacing in pixels.
    pub row_period: f64,
    pub visible_noise: f64,
    pub infrared_noise: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            width: 640,
            height: 480,
            margin: 80,
            max_translation: 30.0,
            max_rotation_deg: 5.0,
            max_projective: 1e-5,
            row_period: 120.0,
            visible_noise: 2.0,
            infrared_noise: 3.0,
        }
    }
}

/// Which modalities show a symptom at a scene pixel.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Symptom {
    None,
    Visible,
    Infrared,
    Both,
}

impl Symptom {
    fn visible(self) -> bool {
        matches!(self, Symptom::Visible | Symptom::Both)
    }

    fn infrared(self) -> bool {
        matches!(self, Symptom::Infrared | Symptom::Both)
    }
}

/// Scene canvas in visible-frame coordinates shifted by the margin.
struct Scene {
    w: usize,
    h: usize,
    rgb: Vec<[f64; 3]>,
    /// Green before symptom recoloring; drives the infrared response.
    base_green: Vec<f64>,
    class: Vec<ClassLabel>,
    symptom: Vec<Symptom>,
    /// Infrared speckle in infrared-symptomatic leaves.
    speckle: Vec<f64>,
}

fn disc(cx: f64, cy: f64, r: f64, w: usize, h: usize, mut f: impl FnMut(usize, f64)) {
    let (x0, x1) = ((cx - r).floor().max(0.0) as usize, ((cx + r).ceil() as usize).min(w - 1));
    let (y0, y1) = ((cy - r).floor().max(0.0) as usize, ((cy + r).ceil() as usize).min(h - 1));
    for y in y0..=y1 {
        for x in x0..=x1 {
            let d = (x as f64 - cx).hypot(y as f64 - cy);
            if d <= r {
                f(y * w + x, d / r.max(1e-9));
            }
        }
    }
}

impl Scene {
    fn generate(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Scene {
        let (w, h) = (cfg.width + 2 * cfg.margin, cfg.height + 2 * cfg.margin);
        let n = w * h;
        let mut s = Scene {
            w,
            h,
            rgb: vec![[139.0, 69.0, 19.0]; n],
            base_green: vec![69.0; n],
            class: vec![ClassLabel::Ground; n],
            symptom: vec![Symptom::None; n],
            speckle: vec![0.0; n],
        };

        // ground: blotchy brown
        for _ in 0..n / 60 {
            let (cx, cy) = (rng.random_range(0.0..w as f64), rng.random_range(0.0..h as f64));
            let r = rng.random_range(2.0..7.0);
            let k = rng.random_range(0.7..1.3);
            disc(cx, cy, r, w, h, |i, _| {
                let base = [139.0 * k, 69.0 * k, 19.0 * k];
                s.rgb[i] = base;
                s.base_green[i] = base[1];
            });
        }

        let phase = rng.random_range(0.0..cfg.row_period);
        let tilt = rng.random_range(-0.08..0.08);
        let band = 0.42 * cfg.row_period;
        let mut row_center = phase - cfg.row_period;
        while row_center < h as f64 + cfg.row_period {
            let centre = |x: f64| row_center + tilt * (x - w as f64 / 2.0);
            // shadow cast below the canopy, ragged edge
            let mut x = 0.0;
            while x < w as f64 {
                let top = centre(x) + 0.35 * band;
                let depth = rng.random_range(0.12..0.3) * cfg.row_period;
                let r = rng.random_range(4.0..9.0);
                let mut y = top;
                while y < top + depth {
                    disc(x, y, r, w, h, |i, _| {
                        let v = rng_free_shade(i);
                        s.rgb[i] = [v, v * 0.9, v * 0.8];
                        s.base_green[i] = v * 0.9;
                        s.class[i] = ClassLabel::Shadow;
                    });
                    y += r;
                }
                x += rng.random_range(3.0..7.0);
            }
            // canopy leaves
            let leaves = (w as f64 * band / 14.0) as usize;
            for _ in 0..leaves {
                let lx = rng.random_range(0.0..w as f64);
                let ly = centre(lx) + rng.random_range(-0.5..0.5) * band;
                let r = rng.random_range(3.0..9.0);
                let g = rng.random_range(85.0..175.0);
                let rr = rng.random_range(15.0..70.0);
                let b = rng.random_range(5.0..45.0);
                disc(lx, ly, r, w, h, |i, d| {
                    // veins: slightly darker rim
                    let k = 1.0 - 0.25 * d * d;
                    s.rgb[i] = [rr * k, g * k, b * k];
                    s.base_green[i] = g * k;
                    s.class[i] = ClassLabel::Healthy;
                    s.symptom[i] = Symptom::None;
                    s.speckle[i] = 0.0;
                });
            }
            // symptomatic patches on the canopy
            let patches = rng.random_range(2..6);
            for _ in 0..patches {
                let px = rng.random_range(0.0..w as f64);
                let py = centre(px) + rng.random_range(-0.3..0.3) * band;
                let r = rng.random_range(10.0..24.0);
                let kind = match rng.random_range(0..3) {
                    0 => Symptom::Visible,
                    1 => Symptom::Infrared,
                    _ => Symptom::Both,
                };
                let tint = [
                    rng.random_range(190.0..245.0),
                    rng.random_range(160.0..210.0),
                    rng.random_range(10.0..60.0),
                ];
                let mut spots = Vec::new();
                for _ in 0..8 {
                    spots.push((
                        px + rng.random_range(-r..r),
                        py + rng.random_range(-r..r),
                        rng.random_range(3.0..0.6 * r),
                        rng.random_range(-40.0..40.0),
                    ));
                }
                for (sx, sy, sr, sp) in spots {
                    disc(sx, sy, sr, w, h, |i, d| {
                        if s.class[i] != ClassLabel::Healthy {
                            return;
                        }
                        if kind.visible() {
                            let k = 1.0 - 0.2 * d;
                            s.rgb[i] = [tint[0] * k, tint[1] * k, tint[2] * k];
                        }
                        s.symptom[i] = merge(s.symptom[i], kind);
                        if kind.infrared() {
                            s.speckle[i] = sp * (1.0 - d);
                        }
                    });
                }
            }
            row_center += cfg.row_period;
        }
        s
    }

    fn visible_class(&self, i: usize) -> ClassLabel {
        if self.symptom[i].visible() {
            ClassLabel::Symptom
        } else {
            self.class[i]
        }
    }

    fn infrared_class(&self, i: usize) -> ClassLabel {
        if self.symptom[i].infrared() {
            ClassLabel::Symptom
        } else {
            self.class[i]
        }
    }

    /// Noise-free pseudo-infrared response: a monotone remap of the healthy
    /// green, darkened and speckled where the infrared band shows symptoms.
    fn infrared(&self, i: usize) -> f64 {
        let g = (self.base_green[i] / 255.0).clamp(0.0, 1.0);
        let mut v = 255.0 * g.powf(0.6);
        if self.symptom[i].infrared() {
            v = 0.55 * v + self.speckle[i];
        }
        v
    }
}

/// Deterministic shade for shadow pixels, varied per position.
fn rng_free_shade(i: usize) -> f64 {
    let h = (i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) >> 59;
    8.0 + h as f64
}

fn merge(a: Symptom, b: Symptom) -> Symptom {
    match (a.visible() || b.visible(), a.infrared() || b.infrared()) {
        (true, true) => Symptom::Both,
        (true, false) => Symptom::Visible,
        (false, true) => Symptom::Infrared,
        _ => Symptom::None,
    }
}

/// A visible/infrared frame pair with ground truth.
#[derive(Debug, Clone)]
pub struct SyntheticPair {
    /// RGB visible frame.
    pub visible: Raster,
    /// Single-band infrared frame.
    pub infrared: Raster,
    pub visible_labels: ClassMap,
    /// Infrared labels in the infrared frame.
    pub infrared_labels: ClassMap,
    /// Infrared labels in the visible frame (what a perfect registration
    /// would produce).
    pub infrared_labels_registered: ClassMap,
    /// Maps infrared pixel coordinates to visible pixel coordinates.
    pub truth: Homography,
}

/// Random ground-truth homography: a small perspective component followed by
/// a rotation about the frame center and a shift. The perspective terms are
/// those of the final matrix.
pub fn random_homography(cfg: &SynthConfig, rng: &mut impl Rng) -> Result<Homography, RegistrationError> {
    let deg = rng.random_range(-cfg.max_rotation_deg..=cfg.max_rotation_deg);
    let t = cfg.max_translation * rng.random_range(0.0f64..=1.0).sqrt();
    let a = rng.random_range(0.0..std::f64::consts::TAU);
    let (cx, cy) = ((cfg.width - 1) as f64 / 2.0, (cfg.height - 1) as f64 / 2.0);
    let rigid = Homography::rigid(deg, cx, cy, t * a.cos(), t * a.sin());
    let p = Homography::from_params(
        0.0,
        0.0,
        0.0,
        0.0,
        0.0,
        0.0,
        rng.random_range(-cfg.max_projective..=cfg.max_projective),
        rng.random_range(-cfg.max_projective..=cfg.max_projective),
    )?;
    rigid.compose(&p)
}

fn bilinear(plane: &[f64], w: usize, h: usize, x: f64, y: f64) -> f64 {
    let x = x.clamp(0.0, (w - 1) as f64);
    let y = y.clamp(0.0, (h - 1) as f64);
    let (x0, y0) = (x.floor() as usize, y.floor() as usize);
    let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
    let (fx, fy) = (x - x0 as f64, y - y0 as f64);
    let top = plane[y0 * w + x0] * (1.0 - fx) + plane[y0 * w + x1] * fx;
    let bottom = plane[y1 * w + x0] * (1.0 - fx) + plane[y1 * w + x1] * fx;
    top * (1.0 - fy) + bottom * fy
}

/// Generates one pair whose infrared frame sees the scene through `truth`.
pub fn synth_pair_with(cfg: &SynthConfig, truth: Homography, seed: u64) -> Result<SyntheticPair, RegistrationError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scene = Scene::generate(cfg, &mut rng);
    let (w, h, m) = (cfg.width, cfg.height, cfg.margin);
    let vis_noise = Normal::new(0.0, cfg.visible_noise.max(0.0)).expect("finite sigma");
    let ir_noise = Normal::new(0.0, cfg.infrared_noise.max(0.0)).expect("finite sigma");

    let mut vis = Vec::with_capacity(w * h * 3);
    let mut vis_labels = Vec::with_capacity(w * h);
    let mut ir_reg = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let i = (y + m) * scene.w + x + m;
            for c in scene.rgb[i] {
                vis.push(quantize(c + vis_noise.sample(&mut rng)));
            }
            vis_labels.push(scene.visible_class(i));
            ir_reg.push(scene.infrared_class(i));
        }
    }

    let ir_plane: Vec<f64> = (0..scene.w * scene.h).map(|i| scene.infrared(i)).collect();
    let mut ir = Vec::with_capacity(w * h);
    let mut ir_labels = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let (vx, vy) = truth.apply(x as f64, y as f64)?;
            let (sx, sy) = (vx + m as f64, vy + m as f64);
            let v = bilinear(&ir_plane, scene.w, scene.h, sx, sy);
            ir.push(quantize(v + ir_noise.sample(&mut rng)));
            let nx = ((sx + 0.5).floor().max(0.0) as usize).min(scene.w - 1);
            let ny = ((sy + 0.5).floor().max(0.0) as usize).min(scene.h - 1);
            ir_labels.push(scene.infrared_class(ny * scene.w + nx));
        }
    }

    let labels = |v: Vec<ClassLabel>, m: Modality| ClassMap::new(w, h, v, m).expect("frame-sized label map");
    Ok(SyntheticPair {
        visible: Raster::new(w, h, 3, vis).expect("rgb frame"),
        infrared: Raster::new(w, h, 1, ir).expect("gray frame"),
        visible_labels: labels(vis_labels, Modality::Visible),
        infrared_labels: labels(ir_labels, Modality::Infrared),
        infrared_labels_registered: labels(ir_reg, Modality::Infrared),
        truth,
    })
}

/// One pair with a random ground-truth homography.
pub fn synth_pair(cfg: &SynthConfig, seed: u64) -> Result<SyntheticPair, RegistrationError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED_0FC0_FFEE);
    let truth = random_homography(cfg, &mut rng)?;
    synth_pair_with(cfg, truth, seed)
}

/// `count` pairs; pair `i` uses its own seed derived from `seed`.
pub fn synth_corpus(cfg: &SynthConfig, seed: u64, count: usize) -> Result<Vec<SyntheticPair>, RegistrationError> {
    (0..count as u64)
        .map(|i| synth_pair(cfg, pair_seed(seed, i)))
        .collect()
}

pub fn pair_seed(seed: u64, index: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng.random()
}

/// Four-class texture patch: a random partition into flat dark shadow, flat
/// brown ground, green leaf texture and yellow-brown speckled symptom areas.
pub fn texture_patch(w: usize, h: usize, seed: u64) -> (Raster, ClassMap) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Voronoi partition over a few sites, each with a random class
    let sites: Vec<(f64, f64, ClassLabel)> = (0..6)
        .map(|i| {
            let class = if i < 4 {
                ClassLabel::ALL[i]
            } else {
                ClassLabel::ALL[rng.random_range(0..4)]
            };
            (rng.random_range(0.0..w as f64), rng.random_range(0.0..h as f64), class)
        })
        .collect();
    let noise = Normal::new(0.0, 4.0).expect("finite sigma");
    let mut labels = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let nearest = sites
                .iter()
                .min_by(|a, b| {
                    let da = (a.0 - x as f64).hypot(a.1 - y as f64);
                    let db = (b.0 - x as f64).hypot(b.1 - y as f64);
                    da.total_cmp(&db)
                })
                .expect("sites");
            labels.push(nearest.2);
        }
    }
    // leaf texture and symptom speckle as precomputed layers
    let mut leaf = vec![[40.0, 125.0, 25.0]; w * h];
    for _ in 0..w * h / 40 {
        let (cx, cy) = (rng.random_range(0.0..w as f64), rng.random_range(0.0..h as f64));
        let r = rng.random_range(2.0..6.0);
        let g = rng.random_range(80.0..175.0);
        let col = [rng.random_range(10.0..70.0), g, rng.random_range(5.0..45.0)];
        disc(cx, cy, r, w, h, |i, d| {
            let k = 1.0 - 0.3 * d * d;
            leaf[i] = [col[0] * k, col[1] * k, col[2] * k];
        });
    }
    let mut data = Vec::with_capacity(w * h * 3);
    for (i, l) in labels.iter().enumerate() {
        let px: [f64; 3] = match l {
            ClassLabel::Shadow => [12.0, 11.0, 10.0],
            ClassLabel::Ground => [139.0, 69.0, 19.0],
            ClassLabel::Healthy => leaf[i],
            ClassLabel::Symptom => {
                if rng.random_bool(0.35) {
                    [120.0, 80.0, 25.0]
                } else {
                    [225.0, 190.0, 40.0]
                }
            }
        };
        for c in px {
            data.push(quantize(c + noise.sample(&mut rng)));
        }
    }
    (
        Raster::new(w, h, 3, data).expect("rgb patch"),
        ClassMap::new(w, h, labels, Modality::Visible).expect("patch labels"),
    )
}

/// `count` texture patches of `w × h`.
pub fn texture_corpus(w: usize, h: usize, count: usize, seed: u64) -> Vec<(Raster, ClassMap)> {
    (0..count as u64)
        .map(|i| texture_patch(w, h, pair_seed(seed, i)))
        .collect()
}
