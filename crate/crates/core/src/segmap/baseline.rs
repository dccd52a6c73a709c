//! Per-pixel multinomial logistic regression over channel intensities and
//! local mean / standard deviation.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{ClassLabel, ClassMap, Modality, SegmapError};
use crate::raster::{Raster, RasterError};

/// Side of the square neighborhood behind the mean/std features.
pub const WINDOW: usize = 9;

/// Features of row `y`, `3·channels` values per pixel: intensities, window
/// means, window standard deviations, all over 255. The window is clipped at
/// the image border. Sums are exact integers, so a pixel's features depend
/// only on the pixels inside its (clipped) window.
fn row_features(img: &Raster, y: usize, out: &mut [f64]) {
    let (w, h, c) = (img.width(), img.height(), img.channels());
    let r = WINDOW / 2;
    let (y0, y1) = (y.saturating_sub(r), (y + r).min(h - 1));
    let rows = (y1 - y0 + 1) as u64;
    let data = img.data();
    // column sums over the window rows, then prefix sums along x
    let mut pre = vec![0u64; (w + 1) * c];
    let mut pre2 = vec![0u64; (w + 1) * c];
    for x in 0..w {
        for ch in 0..c {
            let (mut s, mut s2) = (0u64, 0u64);
            for yy in y0..=y1 {
                let v = u64::from(data[(yy * w + x) * c + ch]);
                s += v;
                s2 += v * v;
            }
            pre[(x + 1) * c + ch] = pre[x * c + ch] + s;
            pre2[(x + 1) * c + ch] = pre2[x * c + ch] + s2;
        }
    }
    let dim = 3 * c;
    for x in 0..w {
        let (x0, x1) = (x.saturating_sub(r), (x + r).min(w - 1));
        let n = rows * (x1 - x0 + 1) as u64;
        let f = &mut out[x * dim..(x + 1) * dim];
        for ch in 0..c {
            let s = pre[(x1 + 1) * c + ch] - pre[x0 * c + ch];
            let s2 = pre2[(x1 + 1) * c + ch] - pre2[x0 * c + ch];
            let var_num = u128::from(n) * u128::from(s2) - u128::from(s) * u128::from(s);
            f[ch] = f64::from(data[(y * w + x) * c + ch]) / 255.0;
            f[c + ch] = s as f64 / n as f64 / 255.0;
            f[2 * c + ch] = (var_num as f64).sqrt() / n as f64 / 255.0;
        }
    }
}

/// Feature vectors of every pixel, row-major, `3·channels` per pixel.
pub fn pixel_features(img: &Raster) -> Vec<f64> {
    let dim = 3 * img.channels();
    let w = img.width();
    let mut out = vec![0.0; img.width() * img.height() * dim];
    if w == 0 {
        return out;
    }
    out.par_chunks_mut(w * dim)
        .enumerate()
        .for_each(|(y, row)| row_features(img, y, row));
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainParams {
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for TrainParams {
    fn default() -> Self {
        Self {
            epochs: 5,
            lr: 0.05,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineModel {
    pub feature_dim: usize,
    pub k: usize,
    pub classes: Vec<ClassLabel>,
    pub channels: usize,
    /// `weights[class][feature]`, applied to standardized features.
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<f64>,
    pub feature_mean: Vec<f64>,
    pub feature_scale: Vec<f64>,
    pub seed: u64,
    pub epochs: usize,
    pub lr: f64,
    pub train_accuracy: f64,
}

impl BaselineModel {
    fn check(&self) -> Result<(), SegmapError> {
        let dim = self.feature_dim;
        let ok = self.k == WINDOW
            && self.classes == ClassLabel::ALL
            && dim == 3 * self.channels
            && self.weights.len() == self.classes.len()
            && self.weights.iter().all(|w| w.len() == dim)
            && self.biases.len() == self.classes.len()
            && self.feature_mean.len() == dim
            && self.feature_scale.len() == dim
            && self.feature_scale.iter().all(|&s| s > 0.0);
        if ok {
            Ok(())
        } else {
            Err(SegmapError::Model("inconsistent model dimensions".into()))
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, SegmapError> {
        let m: Self = serde_json::from_str(s).map_err(|e| SegmapError::Model(e.to_string()))?;
        m.check()?;
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), SegmapError> {
        std::fs::write(path, self.to_json()).map_err(RasterError::Io)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, SegmapError> {
        let s = std::fs::read_to_string(path).map_err(RasterError::Io)?;
        Self::from_json(&s)
    }

    /// Class scores of one raw feature vector.
    fn scores(&self, f: &[f64], out: &mut [f64; 4]) {
        for (k, s) in out.iter_mut().enumerate() {
            let w = &self.weights[k];
            let mut acc = self.biases[k];
            for i in 0..self.feature_dim {
                acc += w[i] * (f[i] - self.feature_mean[i]) / self.feature_scale[i];
            }
            *s = acc;
        }
    }

    fn classify(&self, f: &[f64]) -> ClassLabel {
        let mut s = [0.0; 4];
        self.scores(f, &mut s);
        let mut best = 0;
        for k in 1..4 {
            if s[k] > s[best] {
                best = k;
            }
        }
        ClassLabel::ALL[best]
    }
}

/// Per-pixel argmax labels; ties go to the lowest class code.
pub fn predict(model: &BaselineModel, img: &Raster) -> Result<ClassMap, SegmapError> {
    if img.channels() != model.channels {
        return Err(SegmapError::Config(format!(
            "model expects {} channels, image has {}",
            model.channels,
            img.channels()
        )));
    }
    let (w, h) = (img.width(), img.height());
    let dim = model.feature_dim;
    let mut labels = vec![ClassLabel::Shadow; w * h];
    if w > 0 {
        labels.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
            let mut f = vec![0.0; w * dim];
            row_features(img, y, &mut f);
            for (x, l) in row.iter_mut().enumerate() {
                *l = model.classify(&f[x * dim..(x + 1) * dim]);
            }
        });
    }
    ClassMap::new(w, h, labels, Modality::Visible)
}

/// Fits the baseline by plain SGD on the softmax cross-entropy, visiting all
/// training pixels in a seeded random order each epoch. Biases start at the
/// log class priors, so an untrained model predicts the majority class.
pub fn train_baseline(
    samples: &[(Raster, ClassMap)],
    params: &TrainParams,
) -> Result<BaselineModel, SegmapError> {
    let Some((first, _)) = samples.first() else {
        return Err(SegmapError::MissingClasses(ClassLabel::ALL.to_vec()));
    };
    let channels = first.channels();
    let dim = 3 * channels;
    let mut feats: Vec<f64> = Vec::new();
    let mut targets: Vec<u8> = Vec::new();
    for (img, map) in samples {
        if img.channels() != channels {
            return Err(SegmapError::Config(format!(
                "training images mix {channels} and {} channels",
                img.channels()
            )));
        }
        if img.width() != map.width() || img.height() != map.height() {
            return Err(SegmapError::Dimension(format!(
                "{}x{} image with a {}x{} label map",
                img.width(),
                img.height(),
                map.width(),
                map.height()
            )));
        }
        feats.extend(pixel_features(img));
        targets.extend(map.codes());
    }
    let n = targets.len();
    let mut counts = [0usize; 4];
    for &t in &targets {
        counts[t as usize] += 1;
    }
    let missing: Vec<ClassLabel> = ClassLabel::ALL
        .iter()
        .filter(|l| counts[l.code() as usize] == 0)
        .copied()
        .collect();
    if !missing.is_empty() {
        return Err(SegmapError::MissingClasses(missing));
    }

    let mut mean = vec![0.0; dim];
    for f in feats.chunks_exact(dim) {
        for (m, v) in mean.iter_mut().zip(f) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut scale = vec![0.0; dim];
    for f in feats.chunks_exact(dim) {
        for ((s, v), m) in scale.iter_mut().zip(f).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    scale
        .iter_mut()
        .for_each(|s| *s = (*s / n as f64).sqrt().max(1e-6));

    let mut model = BaselineModel {
        feature_dim: dim,
        k: WINDOW,
        classes: ClassLabel::ALL.to_vec(),
        channels,
        weights: vec![vec![0.0; dim]; 4],
        biases: counts.iter().map(|&c| (c as f64 / n as f64).ln()).collect(),
        feature_mean: mean,
        feature_scale: scale,
        seed: params.seed,
        epochs: params.epochs,
        lr: params.lr,
        train_accuracy: 0.0,
    };

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut order: Vec<usize> = (0..n).collect();
    let mut z = vec![0.0; dim];
    let mut s = [0.0; 4];
    for epoch in 0..params.epochs {
        order.shuffle(&mut rng);
        let lr = params.lr / (1.0 + epoch as f64);
        for &i in &order {
            let f = &feats[i * dim..(i + 1) * dim];
            for j in 0..dim {
                z[j] = (f[j] - model.feature_mean[j]) / model.feature_scale[j];
            }
            model.scores(f, &mut s);
            let mx = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for v in s.iter_mut() {
                *v = (*v - mx).exp();
                total += *v;
            }
            for (k, p) in s.iter().enumerate() {
                let g = p / total - if k == targets[i] as usize { 1.0 } else { 0.0 };
                for (wk, zj) in model.weights[k].iter_mut().zip(&z) {
                    *wk -= lr * g * zj;
                }
                model.biases[k] -= lr * g;
            }
        }
    }

    let correct: usize = feats
        .par_chunks_exact(dim)
        .zip(targets.par_iter())
        .filter(|(f, &t)| model.classify(f).code() == t)
        .count();
    model.train_accuracy = correct as f64 / n as f64;
    Ok(model)
}
