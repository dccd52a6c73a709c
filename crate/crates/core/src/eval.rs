//! Leaf-level and grapevine-level segmentation metrics and registration
//! statistics.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fusion::FusionMode;
use crate::registration::RegistrationReport;
use crate::segmap::{ClassLabel, ClassMap};

/// Rendering of a metric whose denominator is zero.
pub const UNDEFINED: &str = "—";

/// Default grapevine window side and stride, in pixels.
pub const GRAPEVINE_WINDOW: usize = 64;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("{0}")]
    Contract(String),
    #[error("csv output: {0}")]
    Csv(#[from] csv::Error),
}

/// One-vs-rest counts for a single class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionRow {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionRow {
    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }

    fn add(&mut self, o: &ConfusionRow) {
        self.tp += o.tp;
        self.tn += o.tn;
        self.fp += o.fp;
        self.fn_ += o.fn_;
    }

    fn count(&mut self, pred: u8, truth: u8, class: u8) {
        match (pred == class, truth == class) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, true) => self.fn_ += 1,
            (false, false) => self.tn += 1,
        }
    }
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

pub fn recall(cm: &ConfusionRow) -> Option<f64> {
    ratio(cm.tp, cm.tp + cm.fn_)
}

pub fn precision(cm: &ConfusionRow) -> Option<f64> {
    ratio(cm.tp, cm.tp + cm.fp)
}

/// Harmonic mean of recall and precision, falling back to the count form
/// when either is undefined or both are zero.
pub fn f1(cm: &ConfusionRow) -> Option<f64> {
    match (recall(cm), precision(cm)) {
        (Some(r), Some(p)) if r + p > 0.0 => Some(2.0 * r * p / (r + p)),
        _ => dice(cm),
    }
}

pub fn dice(cm: &ConfusionRow) -> Option<f64> {
    ratio(2 * cm.tp, cm.fp + 2 * cm.tp + cm.fn_)
}

pub fn accuracy(cm: &ConfusionRow) -> Option<f64> {
    ratio(cm.tp + cm.tn, cm.total())
}

pub fn render(v: Option<f64>) -> String {
    v.map_or_else(|| UNDEFINED.to_string(), |x| format!("{x:.4}"))
}

fn check_dims(pred: &ClassMap, truth: &ClassMap) -> Result<(), EvalError> {
    if (pred.width(), pred.height()) != (truth.width(), truth.height()) {
        return Err(EvalError::Dimension(format!(
            "prediction {}x{}, truth {}x{}",
            pred.width(),
            pred.height(),
            truth.width(),
            truth.height()
        )));
    }
    Ok(())
}

/// Pixel-wise one-vs-rest counts for `class`.
pub fn confusion(pred: &ClassMap, truth: &ClassMap, class: ClassLabel) -> Result<ConfusionRow, EvalError> {
    check_dims(pred, truth)?;
    let mut row = ConfusionRow::default();
    for (p, t) in pred.labels().iter().zip(truth.labels()) {
        row.count(p.code(), t.code(), class.code());
    }
    Ok(row)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalLevel {
    Leaf,
    Grapevine,
}

/// A metric averaged over map pairs; pairs where it is undefined are left
/// out and counted.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Averaged {
    pub mean: Option<f64>,
    pub defined: usize,
    pub undefined: usize,
}

impl Averaged {
    fn of(values: impl IntoIterator<Item = Option<f64>>) -> Self {
        let (mut sum, mut defined, mut undefined) = (0.0, 0usize, 0usize);
        for v in values {
            match v {
                Some(x) => {
                    sum += x;
                    defined += 1;
                }
                None => undefined += 1,
            }
        }
        Averaged {
            mean: (defined > 0).then(|| sum / defined as f64),
            defined,
            undefined,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: ClassLabel,
    pub recall: Averaged,
    pub precision: Averaged,
    pub f1: Averaged,
    /// Counts pooled over every pair.
    pub confusion: ConfusionRow,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub level: EvalLevel,
    pub mode: FusionMode,
    pub pairs: usize,
    /// Pixels (leaf) or windows (grapevine) evaluated per class.
    pub units: u64,
    pub classes: Vec<ClassMetrics>,
    pub accuracy: Averaged,
}

/// Per-pair counts for the four classes over paired unit labels.
fn pair_rows(units: &[(u8, u8)]) -> [ConfusionRow; 4] {
    let mut rows = [ConfusionRow::default(); 4];
    for &(p, t) in units {
        for (c, row) in rows.iter_mut().enumerate() {
            row.count(p, t, c as u8);
        }
    }
    rows
}

fn overall_accuracy(rows: &[ConfusionRow; 4]) -> Option<f64> {
    let tp: u64 = rows.iter().map(|r| r.tp).sum();
    ratio(tp, rows[0].total())
}

fn build_report(level: EvalLevel, mode: FusionMode, per_pair: Vec<[ConfusionRow; 4]>) -> MetricsReport {
    let classes = ClassLabel::ALL
        .iter()
        .enumerate()
        .map(|(c, &class)| {
            let mut pooled = ConfusionRow::default();
            for rows in &per_pair {
                pooled.add(&rows[c]);
            }
            ClassMetrics {
                class,
                recall: Averaged::of(per_pair.iter().map(|r| recall(&r[c]))),
                precision: Averaged::of(per_pair.iter().map(|r| precision(&r[c]))),
                f1: Averaged::of(per_pair.iter().map(|r| f1(&r[c]))),
                confusion: pooled,
            }
        })
        .collect();
    MetricsReport {
        level,
        mode,
        pairs: per_pair.len(),
        units: per_pair.iter().map(|r| r[0].total()).sum(),
        classes,
        accuracy: Averaged::of(per_pair.iter().map(overall_accuracy)),
    }
}

/// `(prediction, truth)` pairs, both already collapsed to four classes for
/// `mode`.
pub type MapPair = (ClassMap, ClassMap);

pub fn leaf_level_report(pairs: &[MapPair], mode: FusionMode) -> Result<MetricsReport, EvalError> {
    if pairs.is_empty() {
        return Err(EvalError::Contract("no map pairs to evaluate".into()));
    }
    let per_pair = pairs
        .par_iter()
        .map(|(p, t)| {
            check_dims(p, t)?;
            let units: Vec<(u8, u8)> = p
                .labels()
                .iter()
                .zip(t.labels())
                .map(|(a, b)| (a.code(), b.code()))
                .collect();
            Ok(pair_rows(&units))
        })
        .collect::<Result<Vec<_>, EvalError>>()?;
    Ok(build_report(EvalLevel::Leaf, mode, per_pair))
}

/// Most frequent class in a window; ties go to the lowest code.
fn dominant(map: &ClassMap, x: usize, y: usize, size: usize) -> u8 {
    let mut hist = [0usize; 4];
    for yy in y..y + size {
        for xx in x..x + size {
            hist[map.get(xx, yy).code() as usize] += 1;
        }
    }
    let mut best = 0;
    for c in 1..4 {
        if hist[c] > hist[best] {
            best = c;
        }
    }
    best as u8
}

/// Dominant-class comparison over `window × window` blocks placed every
/// `stride` pixels. A mismatch counts against the predicted class (FP) and
/// the true class (FN).
pub fn grapevine_level_report(
    pairs: &[MapPair],
    window: usize,
    stride: usize,
    mode: FusionMode,
) -> Result<MetricsReport, EvalError> {
    if pairs.is_empty() {
        return Err(EvalError::Contract("no map pairs to evaluate".into()));
    }
    if window == 0 || stride == 0 {
        return Err(EvalError::Contract("window and stride must be positive".into()));
    }
    let per_pair = pairs
        .par_iter()
        .map(|(p, t)| {
            check_dims(p, t)?;
            let (w, h) = (p.width(), p.height());
            if window > w || window > h {
                return Err(EvalError::Contract(format!(
                    "window {window} larger than a {w}x{h} map"
                )));
            }
            let mut units = Vec::new();
            for y in (0..=h - window).step_by(stride) {
                for x in (0..=w - window).step_by(stride) {
                    units.push((dominant(p, x, y, window), dominant(t, x, y, window)));
                }
            }
            Ok(pair_rows(&units))
        })
        .collect::<Result<Vec<_>, EvalError>>()?;
    Ok(build_report(EvalLevel::Grapevine, mode, per_pair))
}

impl MetricsReport {
    /// Aligned plain-text table: Rec./Pre./F1-D. per class and total accuracy.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let level = match self.level {
            EvalLevel::Leaf => "leaf",
            EvalLevel::Grapevine => "grapevine",
        };
        let _ = writeln!(s, "{level}-level, fusion {} ({} pairs)", self.mode.name().to_uppercase(), self.pairs);
        let _ = writeln!(s, "{:<10} {:>8} {:>8} {:>8}", "class", "Rec.", "Pre.", "F1-D.");
        let mut notes = Vec::new();
        for c in &self.classes {
            let _ = writeln!(
                s,
                "{:<10} {:>8} {:>8} {:>8}",
                c.class.name(),
                render(c.recall.mean),
                render(c.precision.mean),
                render(c.f1.mean)
            );
            for (name, m) in [("recall", c.recall), ("precision", c.precision), ("f1", c.f1)] {
                if m.undefined > 0 {
                    notes.push(format!("{} {name}: undefined on {} of {} pairs", c.class.name(), m.undefined, self.pairs));
                }
            }
        }
        let _ = writeln!(s, "{:<10} {:>8}", "accuracy", render(self.accuracy.mean));
        for n in notes {
            let _ = writeln!(s, "  * {n}");
        }
        s
    }

    /// One row per class, with the accuracy on a final row.
    pub fn to_csv(&self) -> Result<String, EvalError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["level", "mode", "class", "recall", "precision", "f1", "tp", "tn", "fp", "fn"])?;
        let level = serde_json::to_value(self.level).expect("level serializes");
        let level = level.as_str().unwrap_or_default().to_string();
        let cell = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for c in &self.classes {
            w.write_record([
                level.clone(),
                self.mode.name().to_string(),
                c.class.name().to_string(),
                cell(c.recall.mean),
                cell(c.precision.mean),
                cell(c.f1.mean),
                c.confusion.tp.to_string(),
                c.confusion.tn.to_string(),
                c.confusion.fp.to_string(),
                c.confusion.fn_.to_string(),
            ])?;
        }
        w.write_record([
            level,
            self.mode.name().to_string(),
            "accuracy".to_string(),
            cell(self.accuracy.mean),
            String::new(),
            String::new(),
            String::new(),
            String::new(),
            String::new(),
            String::new(),
        ])?;
        let bytes = w.into_inner().map_err(|e| EvalError::Contract(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv is utf-8"))
    }
}

/// Mean, sample standard deviation and range of one quantity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Some(Summary { mean, std, min, max })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegistrationStats {
    pub count: usize,
    /// Final RMSE after refinement.
    pub rmse: Summary,
    /// RMSE of the pre-registration alone.
    pub standard_rmse: Summary,
    pub runtime: Summary,
    pub iterations: Summary,
}

pub fn registration_stats(reports: &[RegistrationReport]) -> Result<RegistrationStats, EvalError> {
    let pick = |f: fn(&RegistrationReport) -> f64| {
        let v: Vec<f64> = reports.iter().map(f).collect();
        Summary::of(&v).ok_or_else(|| EvalError::Contract("no registration reports".into()))
    };
    Ok(RegistrationStats {
        count: reports.len(),
        rmse: pick(|r| r.rmse)?,
        standard_rmse: pick(|r| r.standard_rmse)?,
        runtime: pick(|r| r.runtime_seconds)?,
        iterations: pick(|r| r.iterations as f64)?,
    })
}

impl RegistrationStats {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{} pairs", self.count);
        let _ = writeln!(s, "{:<16} {:>16} {:>9} {:>9}", "", "mean ± std", "min", "max");
        for (name, m) in [
            ("standard rmse", self.standard_rmse),
            ("optimized rmse", self.rmse),
            ("runtime (s)", self.runtime),
            ("iterations", self.iterations),
        ] {
            let ms = format!("{:.2} ± {:.2}", m.mean, m.std);
            let _ = writeln!(s, "{name:<16} {ms:>16} {:>9.2} {:>9.2}", m.min, m.max);
        }
        s
    }

    pub fn to_csv(&self) -> Result<String, EvalError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["quantity", "mean", "std", "min", "max"])?;
        for (name, m) in [
            ("standard_rmse", self.standard_rmse),
            ("rmse", self.rmse),
            ("runtime_seconds", self.runtime),
            ("iterations", self.iterations),
        ] {
            w.write_record([name.to_string(), m.mean.to_string(), m.std.to_string(), m.min.to_string(), m.max.to_string()])?;
        }
        let bytes = w.into_inner().map_err(|e| EvalError::Contract(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv is utf-8"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::segmap::Modality;
    use proptest::prelude::*;

    fn map(w: usize, h: usize, codes: &[u8]) -> ClassMap {
        ClassMap::from_codes(w, h, codes, Modality::Visible).unwrap()
    }

    #[test]
    fn metric_arithmetic() {
        let cm = ConfusionRow { tp: 2, tn: 6, fp: 1, fn_: 1 };
        let third = 2.0 / 3.0;
        assert!((recall(&cm).unwrap() - third).abs() < 1e-12);
        assert!((precision(&cm).unwrap() - third).abs() < 1e-12);
        assert!((f1(&cm).unwrap() - third).abs() < 1e-12);
        assert!((accuracy(&cm).unwrap() - 0.8).abs() < 1e-12);
    }

    #[test]
    fn undefined_precision() {
        let cm = ConfusionRow { tp: 0, tn: 0, fp: 0, fn_: 5 };
        assert_eq!(recall(&cm), Some(0.0));
        assert_eq!(precision(&cm), None);
        assert_eq!(render(precision(&cm)), UNDEFINED);
    }

    #[test]
    fn identical_maps_have_no_errors() {
        let m = map(3, 2, &[0, 1, 2, 3, 3, 2]);
        for c in ClassLabel::ALL {
            let row = confusion(&m, &m, c).unwrap();
            assert_eq!((row.fp, row.fn_), (0, 0));
        }
        let r = leaf_level_report(&[(m.clone(), m.clone())], FusionMode::Union).unwrap();
        assert_eq!(r.accuracy.mean, Some(1.0));
        for c in &r.classes {
            assert_eq!(c.recall.mean, Some(1.0));
            assert_eq!(c.precision.mean, Some(1.0));
            assert_eq!(c.f1.mean, Some(1.0));
        }
    }

    #[test]
    fn complement_of_binary_truth() {
        let t = map(4, 1, &[2, 3, 3, 2]);
        let p = map(4, 1, &[3, 2, 2, 3]);
        let row = confusion(&p, &t, ClassLabel::Symptom).unwrap();
        assert_eq!((row.tp, row.tn), (0, 0));
    }

    #[test]
    fn grapevine_dominant_and_ties() {
        // left window mostly healthy, right window tied ground/healthy
        let mut codes = vec![2u8; 4 * 2];
        codes[1] = 3;
        codes[2] = 1;
        codes[6] = 1;
        let t = map(4, 2, &codes);
        let p = map(4, 2, &[2, 2, 1, 1, 2, 2, 2, 2]);
        let r = grapevine_level_report(&[(p, t)], 2, 2, FusionMode::Union).unwrap();
        assert_eq!(r.units, 2);
        assert_eq!(r.classes[2].confusion.tp, 1);
        assert_eq!(r.classes[1].confusion.tp, 1);
        assert_eq!(r.accuracy.mean, Some(1.0));
    }

    #[test]
    fn report_errors() {
        assert!(leaf_level_report(&[], FusionMode::Union).is_err());
        let m = map(2, 2, &[0; 4]);
        assert!(grapevine_level_report(&[(m.clone(), m.clone())], 3, 3, FusionMode::Union).is_err());
        let other = map(4, 1, &[0; 4]);
        assert!(matches!(leaf_level_report(&[(m, other)], FusionMode::Union), Err(EvalError::Dimension(_))));
    }

    #[test]
    fn undefined_values_leave_the_average() {
        let a = map(2, 1, &[2, 2]);
        let b = map(2, 1, &[3, 3]);
        let r = leaf_level_report(&[(a.clone(), a), (b.clone(), b)], FusionMode::Union).unwrap();
        let healthy = &r.classes[2];
        assert_eq!(healthy.recall.mean, Some(1.0));
        assert_eq!((healthy.recall.defined, healthy.recall.undefined), (1, 1));
        assert!(r.to_text().contains("undefined on 1 of 2 pairs"));
        assert!(r.to_text().contains(UNDEFINED));
        assert!(r.to_csv().unwrap().lines().count() == 6);
    }

    fn report(rmse: f64) -> RegistrationReport {
        RegistrationReport {
            rmse,
            rmse_x: rmse,
            rmse_y: 0.0,
            iterations: 1,
            inlier_count: 10,
            runtime_seconds: 0.5,
            homography: [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0],
            mode: crate::registration::RegistrationMode::Standard,
            quality: crate::registration::Quality::Ok,
            standard_rmse: rmse,
            match_threshold: 40,
            ransac_threshold: 2.0,
        }
    }

    #[test]
    fn stats_arithmetic() {
        let s = registration_stats(&[report(2.0)]).unwrap();
        assert_eq!((s.rmse.mean, s.rmse.min, s.rmse.max, s.rmse.std), (2.0, 2.0, 2.0, 0.0));
        let s = registration_stats(&[report(2.0), report(4.0)]).unwrap();
        assert_eq!((s.rmse.mean, s.rmse.min, s.rmse.max), (3.0, 2.0, 4.0));
        assert!((s.rmse.std - 2f64.sqrt()).abs() < 1e-12);
        assert!(registration_stats(&[]).is_err());
        assert!(s.to_text().contains("optimized rmse"));
        assert_eq!(s.to_csv().unwrap().lines().count(), 5);
    }

    proptest! {
        #[test]
        fn f1_equals_dice(tp in 0u64..1000, fp in 0u64..1000, fn_ in 0u64..1000) {
            let cm = ConfusionRow { tp, tn: 0, fp, fn_ };
            match (f1(&cm), dice(&cm)) {
                (Some(a), Some(b)) => prop_assert!((a - b).abs() < 1e-12),
                (a, b) => prop_assert_eq!(a, b),
            }
        }

        #[test]
        fn accuracy_is_tp_share(codes in proptest::collection::vec((0u8..4, 0u8..4), 1..64)) {
            let n = codes.len();
            let p = map(n, 1, &codes.iter().map(|c| c.0).collect::<Vec<_>>());
            let t = map(n, 1, &codes.iter().map(|c| c.1).collect::<Vec<_>>());
            let r = leaf_level_report(&[(p, t)], FusionMode::Intersection).unwrap();
            let hits = codes.iter().filter(|c| c.0 == c.1).count();
            prop_assert_eq!(r.accuracy.mean, Some(hits as f64 / n as f64));
        }
    }
}
