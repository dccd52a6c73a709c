use std::f32::consts::PI;

use rayon::prelude::*;

use super::scale_space::{Level, ScaleSpace};
use super::Keypoint;

struct Candidate {
    kp: Keypoint,
    level: usize,
    // octave-pixel location, used for sub-pixel refinement
    ox: usize,
    oy: usize,
}

/// Hessian-determinant extrema across space and neighboring scales, refined to
/// sub-pixel accuracy and assigned a dominant orientation.
pub fn detect(ss: &ScaleSpace) -> Vec<Keypoint> {
    let threshold = ss.config.threshold;
    let df = ss.config.derivative_factor;

    let per_level: Vec<Vec<Candidate>> = ss
        .levels
        .par_iter()
        .enumerate()
        .map(|(li, lvl)| level_maxima(lvl, li, threshold, df))
        .collect();

    // Greedy suppression in decreasing response order: a candidate is dropped
    // when a stronger one on the same or an adjacent level lies within the
    // larger of their detection scales. Visiting by strength rather than by
    // raster position keeps the result independent of image orientation.
    let mut cands: Vec<Candidate> = per_level.into_iter().flatten().collect();
    cands.sort_by(|a, b| {
        b.kp.response
            .total_cmp(&a.kp.response)
            .then(a.level.cmp(&b.level))
            .then(a.oy.cmp(&b.oy))
            .then(a.ox.cmp(&b.ox))
    });
    let nl = ss.levels.len();
    let level_scale: Vec<f32> = ss.levels.iter().map(|l| l.esigma * df).collect();
    // per-level buckets sized so any suppressing neighbor sits in an adjacent cell
    let mut grids: Vec<Grid> = (0..nl)
        .map(|l| {
            let cell = level_scale[l.saturating_sub(1)..(l + 2).min(nl)]
                .iter()
                .fold(1.0f32, |a, &b| a.max(b));
            Grid::new(ss.width, ss.height, cell)
        })
        .collect();
    let mut survivors: Vec<&Candidate> = Vec::new();
    for c in &cands {
        let dominated = (c.level.saturating_sub(1)..(c.level + 2).min(nl)).any(|l| {
            grids[l].near(c.kp.x, c.kp.y).any(|si| {
                let k = survivors[si];
                let r = k.kp.scale.max(c.kp.scale);
                let dx = k.kp.x - c.kp.x;
                let dy = k.kp.y - c.kp.y;
                dx * dx + dy * dy <= r * r
            })
        });
        if !dominated {
            grids[c.level].insert(c.kp.x, c.kp.y, survivors.len());
            survivors.push(c);
        }
    }
    survivors.sort_by_key(|c| (c.level, c.oy, c.ox));

    survivors
        .par_iter()
        .filter_map(|c| refine(c, &ss.levels[c.level]))
        .map(|mut kp| {
            kp.orientation = orientation(&kp, &ss.levels[kp.level as usize]);
            kp
        })
        .filter(|kp| kp.x >= 0.0 && kp.y >= 0.0 && kp.x < ss.width as f32 && kp.y < ss.height as f32)
        .collect()
}

struct Grid {
    cell: f32,
    cols: usize,
    rows: usize,
    buckets: Vec<Vec<usize>>,
}

impl Grid {
    fn new(w: usize, h: usize, cell: f32) -> Self {
        let cols = (w as f32 / cell).ceil() as usize + 1;
        let rows = (h as f32 / cell).ceil() as usize + 1;
        Grid { cell, cols, rows, buckets: vec![Vec::new(); cols * rows] }
    }

    fn cell_of(&self, x: f32, y: f32) -> (usize, usize) {
        let cx = ((x / self.cell).floor().max(0.0) as usize).min(self.cols - 1);
        let cy = ((y / self.cell).floor().max(0.0) as usize).min(self.rows - 1);
        (cx, cy)
    }

    fn insert(&mut self, x: f32, y: f32, idx: usize) {
        let (cx, cy) = self.cell_of(x, y);
        self.buckets[cy * self.cols + cx].push(idx);
    }

    fn near(&self, x: f32, y: f32) -> impl Iterator<Item = usize> + '_ {
        let (cx, cy) = self.cell_of(x, y);
        let ys = cy.saturating_sub(1)..(cy + 2).min(self.rows);
        ys.flat_map(move |yy| {
            (cx.saturating_sub(1)..(cx + 2).min(self.cols))
                .flat_map(move |xx| self.buckets[yy * self.cols + xx].iter().copied())
        })
    }
}

fn level_maxima(lvl: &Level, li: usize, threshold: f32, df: f32) -> Vec<Candidate> {
    let det = &lvl.ldet;
    let (w, h) = (det.width, det.height);
    let ratio = lvl.ratio();
    let border = lvl.sigma_size.max(1) + 1;
    if w <= 2 * border || h <= 2 * border {
        return Vec::new();
    }
    let mut out = Vec::new();
    for y in border..h - border {
        for x in border..w - border {
            let v = det.at(x, y);
            if v <= threshold {
                continue;
            }
            let mut is_max = true;
            'n: for dy in -1isize..=1 {
                for dx in -1isize..=1 {
                    if (dx, dy) == (0, 0) {
                        continue;
                    }
                    if det.at_clamped(x as isize + dx, y as isize + dy) >= v {
                        is_max = false;
                        break 'n;
                    }
                }
            }
            if !is_max {
                continue;
            }
            out.push(Candidate {
                kp: Keypoint {
                    x: x as f32 * ratio + 0.5 * (ratio - 1.0),
                    y: y as f32 * ratio + 0.5 * (ratio - 1.0),
                    scale: lvl.esigma * df,
                    orientation: 0.0,
                    response: v,
                    octave: lvl.octave as u32,
                    level: li as u32,
                },
                level: li,
                ox: x,
                oy: y,
            });
        }
    }
    out
}

/// Quadratic fit of the response around the discrete maximum.
fn refine(c: &Candidate, lvl: &Level) -> Option<Keypoint> {
    let det = &lvl.ldet;
    let (x, y) = (c.ox as isize, c.oy as isize);
    let at = |dx: isize, dy: isize| det.at_clamped(x + dx, y + dy);
    let dx = 0.5 * (at(1, 0) - at(-1, 0));
    let dy = 0.5 * (at(0, 1) - at(0, -1));
    let dxx = at(1, 0) + at(-1, 0) - 2.0 * at(0, 0);
    let dyy = at(0, 1) + at(0, -1) - 2.0 * at(0, 0);
    let dxy = 0.25 * (at(1, 1) + at(-1, -1) - at(-1, 1) - at(1, -1));
    let denom = dxx * dyy - dxy * dxy;
    if denom.abs() < f32::EPSILON {
        return None;
    }
    let ox = -(dyy * dx - dxy * dy) / denom;
    let oy = -(dxx * dy - dxy * dx) / denom;
    if ox.abs() > 1.0 || oy.abs() > 1.0 {
        return None;
    }
    let ratio = lvl.ratio();
    let mut kp = c.kp.clone();
    kp.x = (c.ox as f32 + ox) * ratio + 0.5 * (ratio - 1.0);
    kp.y = (c.oy as f32 + oy) * ratio + 0.5 * (ratio - 1.0);
    Some(kp)
}

/// Integer sampling step of a keypoint in its octave.
pub(crate) fn sample_scale(kp: &Keypoint) -> f32 {
    let ratio = (1u32 << kp.octave) as f32;
    (0.5 * kp.scale / ratio).round().max(1.0)
}

#[inline]
fn angle_of(x: f32, y: f32) -> f32 {
    let a = y.atan2(x);
    if a < 0.0 {
        a + 2.0 * PI
    } else {
        a
    }
}

/// Dominant gradient direction: Gaussian-weighted derivative responses in a
/// disc of radius `6·s`, accumulated over a sliding π/3 sector.
fn orientation(kp: &Keypoint, lvl: &Level) -> f32 {
    let s = sample_scale(kp);
    let ratio = lvl.ratio();
    let xf = (kp.x - 0.5 * (ratio - 1.0)) / ratio;
    let yf = (kp.y - 0.5 * (ratio - 1.0)) / ratio;
    let mut samples = Vec::with_capacity(113);
    for i in -6i32..=6 {
        for j in -6i32..=6 {
            if i * i + j * j >= 36 {
                continue;
            }
            let ix = (xf + i as f32 * s).round() as isize;
            let iy = (yf + j as f32 * s).round() as isize;
            let g = (-((i * i + j * j) as f32) / (2.0 * 2.5 * 2.5)).exp();
            let rx = g * lvl.lx.at_clamped(ix, iy);
            let ry = g * lvl.ly.at_clamped(ix, iy);
            samples.push((rx, ry, angle_of(rx, ry)));
        }
    }
    let mut best = 0.0f32;
    let mut angle = 0.0f32;
    let mut a1 = 0.0f32;
    while a1 < 2.0 * PI {
        let a2 = if a1 + PI / 3.0 > 2.0 * PI {
            a1 - 5.0 * PI / 3.0
        } else {
            a1 + PI / 3.0
        };
        let (mut sx, mut sy) = (0.0f32, 0.0f32);
        for &(rx, ry, a) in &samples {
            let inside = if a1 < a2 {
                a1 < a && a < a2
            } else {
                (a > 0.0 && a < a2) || (a > a1 && a < 2.0 * PI)
            };
            if inside {
                sx += rx;
                sy += ry;
            }
        }
        let m = sx * sx + sy * sy;
        if m > best {
            best = m;
            angle = angle_of(sx, sy);
        }
        a1 += 0.15;
    }
    angle
}
