//! Pixel-wise fusion of registered visible and infrared segmentations into a
//! six-class disease map.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::raster::io::{decode_png, encode_indexed_png, palette_indices};
use crate::raster::{quantize, Mask, Raster, RasterError};
use crate::segmap::{ClassLabel, ClassMap, Modality};

#[derive(Debug, Error)]
pub enum FusionError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid disease code {0}")]
    LabelCode(u8),
    #[error("disease map format: unknown palette color ({}, {}, {})", .0[0], .0[1], .0[2])]
    UnknownColor([u8; 3]),
    #[error(transparent)]
    Raster(#[from] RasterError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
#[repr(u8)]
pub enum DiseaseLabel {
    Shadow = 0,
    Ground = 1,
    Healthy = 2,
    SymptomVisible = 3,
    SymptomInfrared = 4,
    SymptomIntersection = 5,
}

impl DiseaseLabel {
    pub const ALL: [DiseaseLabel; 6] = [
        DiseaseLabel::Shadow,
        DiseaseLabel::Ground,
        DiseaseLabel::Healthy,
        DiseaseLabel::SymptomVisible,
        DiseaseLabel::SymptomInfrared,
        DiseaseLabel::SymptomIntersection,
    ];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Result<Self, FusionError> {
        Self::ALL
            .get(code as usize)
            .copied()
            .ok_or(FusionError::LabelCode(code))
    }

    pub fn name(self) -> &'static str {
        match self {
            DiseaseLabel::Shadow => "shadow",
            DiseaseLabel::Ground => "ground",
            DiseaseLabel::Healthy => "healthy",
            DiseaseLabel::SymptomVisible => "symptom_visible",
            DiseaseLabel::SymptomInfrared => "symptom_infrared",
            DiseaseLabel::SymptomIntersection => "symptom_intersection",
        }
    }

    pub fn is_symptom(self) -> bool {
        self.code() >= DiseaseLabel::SymptomVisible.code()
    }

    pub fn color(self) -> [u8; 3] {
        DISEASE_PALETTE[self.code() as usize]
    }

    fn from_plain(l: ClassLabel) -> Self {
        match l {
            ClassLabel::Shadow => DiseaseLabel::Shadow,
            ClassLabel::Ground => DiseaseLabel::Ground,
            ClassLabel::Healthy => DiseaseLabel::Healthy,
            ClassLabel::Symptom => DiseaseLabel::SymptomVisible,
        }
    }
}

/// Black, brown, green, yellow, orange, red.
pub const DISEASE_PALETTE: [[u8; 3]; 6] = [
    [0, 0, 0],
    [139, 69, 19],
    [0, 128, 0],
    [255, 255, 0],
    [255, 140, 0],
    [255, 0, 0],
];

/// How single-modality symptoms count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionMode {
    /// "Fusion AND": both modalities must agree.
    #[serde(alias = "and")]
    Intersection,
    /// "Fusion OR": either modality suffices.
    #[serde(alias = "or")]
    Union,
}

impl FusionMode {
    pub const ALL: [FusionMode; 2] = [FusionMode::Intersection, FusionMode::Union];

    pub fn name(self) -> &'static str {
        match self {
            FusionMode::Intersection => "and",
            FusionMode::Union => "or",
        }
    }
}

impl std::str::FromStr for FusionMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "and" | "intersection" => Ok(FusionMode::Intersection),
            "or" | "union" => Ok(FusionMode::Union),
            other => Err(format!("unknown fusion mode '{other}' (expected and/or)")),
        }
    }
}

/// Symptom agreement first; otherwise the visible label is kept.
pub fn fuse_pixel(v: ClassLabel, i: ClassLabel) -> DiseaseLabel {
    match (v == ClassLabel::Symptom, i == ClassLabel::Symptom) {
        (true, true) => DiseaseLabel::SymptomIntersection,
        (false, true) => DiseaseLabel::SymptomInfrared,
        (true, false) => DiseaseLabel::SymptomVisible,
        (false, false) => DiseaseLabel::from_plain(v),
    }
}

/// Identifiers of the inputs a disease map was fused from.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub visible: Option<String>,
    pub infrared: Option<String>,
    pub registration: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiseaseMap {
    width: usize,
    height: usize,
    labels: Vec<DiseaseLabel>,
    pub provenance: Provenance,
}

impl DiseaseMap {
    pub fn new(width: usize, height: usize, labels: Vec<DiseaseLabel>) -> Result<Self, FusionError> {
        if labels.len() != width * height {
            return Err(FusionError::Dimension(format!(
                "{} labels for a {width}x{height} map",
                labels.len()
            )));
        }
        Ok(Self {
            width,
            height,
            labels,
            provenance: Provenance::default(),
        })
    }

    pub fn from_codes(width: usize, height: usize, codes: &[u8]) -> Result<Self, FusionError> {
        let labels = codes
            .iter()
            .map(|&c| DiseaseLabel::from_code(c))
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(width, height, labels)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn labels(&self) -> &[DiseaseLabel] {
        &self.labels
    }

    pub fn codes(&self) -> Vec<u8> {
        self.labels.iter().map(|l| l.code()).collect()
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> DiseaseLabel {
        self.labels[y * self.width + x]
    }

    pub fn crop(&self, x: usize, y: usize, w: usize, h: usize) -> Result<DiseaseMap, FusionError> {
        if x + w > self.width || y + h > self.height {
            return Err(FusionError::Dimension(format!(
                "crop {x},{y} {w}x{h} outside a {}x{} map",
                self.width, self.height
            )));
        }
        let labels = (y..y + h)
            .flat_map(|yy| self.labels[yy * self.width + x..yy * self.width + x + w].iter().copied())
            .collect();
        Self::new(w, h, labels)
    }

    /// Pixel counts per disease code.
    pub fn histogram(&self) -> [usize; 6] {
        let mut out = [0usize; 6];
        for l in &self.labels {
            out[l.code() as usize] += 1;
        }
        out
    }

    pub fn to_rgb(&self) -> Raster {
        let data = self.labels.iter().flat_map(|l| l.color()).collect();
        Raster::new(self.width, self.height, 3, data).expect("rgb layout")
    }

    /// Collapses to the four evaluated classes: single-modality symptoms
    /// count as symptom under OR and as healthy leaf under AND.
    pub fn evaluation_map(&self, mode: FusionMode) -> ClassMap {
        let labels = self
            .labels
            .iter()
            .map(|l| match (l, mode) {
                (DiseaseLabel::Shadow, _) => ClassLabel::Shadow,
                (DiseaseLabel::Ground, _) => ClassLabel::Ground,
                (DiseaseLabel::Healthy, _) => ClassLabel::Healthy,
                (DiseaseLabel::SymptomIntersection, _) => ClassLabel::Symptom,
                (_, FusionMode::Union) => ClassLabel::Symptom,
                (_, FusionMode::Intersection) => ClassLabel::Healthy,
            })
            .collect();
        ClassMap::new(self.width, self.height, labels, Modality::Visible).expect("same layout")
    }

    pub fn encode_png(&self) -> Result<Vec<u8>, FusionError> {
        Ok(encode_indexed_png(self.width, self.height, &self.codes(), &DISEASE_PALETTE)?)
    }

    pub fn decode_png(bytes: &[u8]) -> Result<Self, FusionError> {
        let img = decode_png(bytes)?;
        let codes = palette_indices(&img, &DISEASE_PALETTE).map_err(FusionError::UnknownColor)?;
        Self::from_codes(img.width(), img.height(), &codes)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), FusionError> {
        std::fs::write(path, self.encode_png()?).map_err(RasterError::Io)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, FusionError> {
        let bytes = std::fs::read(path).map_err(RasterError::Io)?;
        Self::decode_png(&bytes)
    }
}

/// Fuses two maps of the same frame. Where `valid` is clear (no infrared
/// coverage after warping) the visible label is used on its own.
pub fn fuse_maps(v: &ClassMap, i: &ClassMap, valid: Option<&Mask>) -> Result<DiseaseMap, FusionError> {
    let (w, h) = (v.width(), v.height());
    if (i.width(), i.height()) != (w, h) {
        return Err(FusionError::Dimension(format!(
            "visible map {w}x{h}, infrared map {}x{}",
            i.width(),
            i.height()
        )));
    }
    if let Some(m) = valid {
        if (m.width(), m.height()) != (w, h) {
            return Err(FusionError::Dimension(format!(
                "validity mask {}x{} for a {w}x{h} map",
                m.width(),
                m.height()
            )));
        }
    }
    let labels = v
        .labels()
        .par_iter()
        .zip(i.labels().par_iter())
        .enumerate()
        .map(|(idx, (&a, &b))| match valid {
            Some(m) if !m.bits()[idx] => DiseaseLabel::from_plain(a),
            _ => fuse_pixel(a, b),
        })
        .collect();
    DiseaseMap::new(w, h, labels)
}

/// Symptomatic pixels under `mode`.
pub fn symptom_mask(d: &DiseaseMap, mode: FusionMode) -> Mask {
    let bits = d
        .labels
        .iter()
        .map(|&l| match mode {
            FusionMode::Intersection => l == DiseaseLabel::SymptomIntersection,
            FusionMode::Union => l.is_symptom(),
        })
        .collect();
    Mask::new(d.width, d.height, bits)
}

/// Alpha-blends the disease colors over `visible` (gray or RGB).
pub fn overlay(visible: &Raster, d: &DiseaseMap, alpha: f64) -> Result<Raster, FusionError> {
    if (visible.width(), visible.height()) != (d.width, d.height) {
        return Err(FusionError::Dimension(format!(
            "image {}x{}, disease map {}x{}",
            visible.width(),
            visible.height(),
            d.width,
            d.height
        )));
    }
    let a = alpha.clamp(0.0, 1.0);
    let c = visible.channels();
    let data = d
        .labels
        .iter()
        .enumerate()
        .flat_map(|(idx, l)| {
            let px = &visible.data()[idx * c..(idx + 1) * c];
            let base = |k: usize| f64::from(if c >= 3 { px[k] } else { px[0] });
            let col = l.color();
            [0, 1, 2].map(|k| quantize((1.0 - a) * base(k) + a * f64::from(col[k])))
        })
        .collect();
    Ok(Raster::new(d.width, d.height, 3, data)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use ClassLabel::*;

    fn map(w: usize, h: usize, codes: &[u8], m: Modality) -> ClassMap {
        ClassMap::from_codes(w, h, codes, m).unwrap()
    }

    #[test]
    fn truth_table_examples() {
        assert_eq!(fuse_pixel(Symptom, Symptom), DiseaseLabel::SymptomIntersection);
        assert_eq!(fuse_pixel(Healthy, Symptom), DiseaseLabel::SymptomInfrared);
        assert_eq!(fuse_pixel(Ground, Healthy), DiseaseLabel::Ground);
        assert_eq!(fuse_pixel(Symptom, Shadow), DiseaseLabel::SymptomVisible);
        assert_eq!(fuse_pixel(Shadow, Symptom), DiseaseLabel::SymptomInfrared);
    }

    #[test]
    fn uniform_maps() {
        let v = ClassMap::filled(4, 3, Healthy, Modality::Visible);
        let i = ClassMap::filled(4, 3, Healthy, Modality::Infrared);
        let d = fuse_maps(&v, &i, None).unwrap();
        assert!(d.labels().iter().all(|&l| l == DiseaseLabel::Healthy));
        let v = ClassMap::filled(4, 3, Symptom, Modality::Visible);
        let d = fuse_maps(&v, &i, None).unwrap();
        assert!(d.labels().iter().all(|&l| l == DiseaseLabel::SymptomVisible));
    }

    #[test]
    fn invalid_pixels_keep_visible_label() {
        let v = map(2, 1, &[2, 3], Modality::Visible);
        let i = map(2, 1, &[3, 3], Modality::Infrared);
        let valid = Mask::new(2, 1, vec![false, false]);
        let d = fuse_maps(&v, &i, Some(&valid)).unwrap();
        assert_eq!(d.labels(), &[DiseaseLabel::Healthy, DiseaseLabel::SymptomVisible]);
    }

    #[test]
    fn dimension_mismatch() {
        let v = ClassMap::filled(4, 3, Healthy, Modality::Visible);
        let i = ClassMap::filled(3, 4, Healthy, Modality::Infrared);
        assert!(matches!(fuse_maps(&v, &i, None), Err(FusionError::Dimension(_))));
    }

    #[test]
    fn one_of_each_masks() {
        let d = DiseaseMap::from_codes(6, 1, &[0, 1, 2, 3, 4, 5]).unwrap();
        assert_eq!(symptom_mask(&d, FusionMode::Intersection).count(), 1);
        assert_eq!(symptom_mask(&d, FusionMode::Union).count(), 3);
        let g = DiseaseMap::from_codes(3, 1, &[1, 1, 1]).unwrap();
        assert_eq!(symptom_mask(&g, FusionMode::Intersection).count(), 0);
        assert_eq!(symptom_mask(&g, FusionMode::Union).count(), 0);
    }

    #[test]
    fn evaluation_collapse() {
        let d = DiseaseMap::from_codes(6, 1, &[0, 1, 2, 3, 4, 5]).unwrap();
        assert_eq!(d.evaluation_map(FusionMode::Intersection).codes(), vec![0, 1, 2, 2, 2, 3]);
        assert_eq!(d.evaluation_map(FusionMode::Union).codes(), vec![0, 1, 2, 3, 3, 3]);
    }

    #[test]
    fn png_roundtrip_and_overlay() {
        let d = DiseaseMap::from_codes(3, 2, &[0, 1, 2, 3, 4, 5]).unwrap();
        let back = DiseaseMap::decode_png(&d.encode_png().unwrap()).unwrap();
        assert_eq!(back.labels(), d.labels());
        let img = Raster::new(3, 2, 1, vec![100; 6]).unwrap();
        let o = overlay(&img, &d, 0.5).unwrap();
        assert_eq!(o.pixel(0, 0), &[50, 50, 50]);
        assert_eq!(o.pixel(2, 1), &[178, 50, 50]);
    }

    #[test]
    fn mode_parsing() {
        assert_eq!("AND".parse::<FusionMode>().unwrap(), FusionMode::Intersection);
        assert_eq!("union".parse::<FusionMode>().unwrap(), FusionMode::Union);
        assert!("xor".parse::<FusionMode>().is_err());
        let m: FusionMode = serde_json::from_str("\"or\"").unwrap();
        assert_eq!(m, FusionMode::Union);
    }

    fn maps() -> impl Strategy<Value = (usize, usize, Vec<u8>, Vec<u8>)> {
        (1usize..12, 1usize..12).prop_flat_map(|(w, h)| {
            (
                Just(w),
                Just(h),
                proptest::collection::vec(0u8..4, w * h),
                proptest::collection::vec(0u8..4, w * h),
            )
        })
    }

    proptest! {
        #[test]
        fn fused_symptoms_match_source_masks((w, h, a, b) in maps()) {
            let v = map(w, h, &a, Modality::Visible);
            let i = map(w, h, &b, Modality::Infrared);
            let d = fuse_maps(&v, &i, None).unwrap();
            let and = symptom_mask(&d, FusionMode::Intersection);
            let or = symptom_mask(&d, FusionMode::Union);
            prop_assert!(and.is_subset_of(&or));
            for k in 0..w * h {
                prop_assert_eq!(and.bits()[k], a[k] == 3 && b[k] == 3);
                prop_assert_eq!(or.bits()[k], a[k] == 3 || b[k] == 3);
            }
        }

        #[test]
        fn fusion_commutes_with_crop((w, h, a, b) in maps(), fx in 0.0f64..1.0, fy in 0.0f64..1.0) {
            let v = map(w, h, &a, Modality::Visible);
            let i = map(w, h, &b, Modality::Infrared);
            let (x, y) = ((fx * w as f64) as usize, (fy * h as f64) as usize);
            let (cw, ch) = (w - x, h - y);
            let whole = fuse_maps(&v, &i, None).unwrap().crop(x, y, cw, ch).unwrap();
            let part = fuse_maps(&v.crop(x, y, cw, ch).unwrap(), &i.crop(x, y, cw, ch).unwrap(), None).unwrap();
            prop_assert_eq!(whole.labels(), part.labels());
        }
    }
}
