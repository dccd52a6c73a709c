//! Four-class semantic maps per modality, their indexed-PNG form, and tiled
//! inference through a pluggable [`SegmentationBackend`].

mod baseline;

pub use baseline::{pixel_features, predict, train_baseline, BaselineModel, TrainParams, WINDOW};

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::raster::io::{decode_png, encode_indexed_png, palette_indices};
use crate::raster::{Raster, RasterError, TileGrid};

#[derive(Debug, Error)]
pub enum SegmapError {
    #[error("mask format: unknown palette color ({}, {}, {})", .0[0], .0[1], .0[2])]
    UnknownColor([u8; 3]),
    #[error("invalid label code {0}")]
    LabelCode(u8),
    #[error("configuration: {0}")]
    Config(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("training data lacks classes: {0:?}")]
    MissingClasses(Vec<ClassLabel>),
    #[error("segmentation of tile {index} at ({x}, {y}) failed: {source}")]
    Tile {
        index: usize,
        x: usize,
        y: usize,
        #[source]
        source: Box<SegmapError>,
    },
    #[error("model file: {0}")]
    Model(String),
    #[error(transparent)]
    Raster(#[from] RasterError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
#[repr(u8)]
pub enum ClassLabel {
    Shadow = 0,
    Ground = 1,
    Healthy = 2,
    Symptom = 3,
}

impl ClassLabel {
    pub const ALL: [ClassLabel; 4] = [
        ClassLabel::Shadow,
        ClassLabel::Ground,
        ClassLabel::Healthy,
        ClassLabel::Symptom,
    ];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Result<Self, SegmapError> {
        Self::ALL
            .get(code as usize)
            .copied()
            .ok_or(SegmapError::LabelCode(code))
    }

    pub fn name(self) -> &'static str {
        match self {
            ClassLabel::Shadow => "shadow",
            ClassLabel::Ground => "ground",
            ClassLabel::Healthy => "healthy",
            ClassLabel::Symptom => "symptom",
        }
    }
}

/// Mask colors, indexed by class code.
pub const PALETTE: [[u8; 3]; 4] = [[0, 0, 0], [139, 69, 19], [0, 128, 0], [255, 215, 0]];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Visible,
    Infrared,
}

/// Per-pixel class labels of one frame, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassMap {
    width: usize,
    height: usize,
    labels: Vec<ClassLabel>,
    pub modality: Modality,
}

impl ClassMap {
    pub fn new(
        width: usize,
        height: usize,
        labels: Vec<ClassLabel>,
        modality: Modality,
    ) -> Result<Self, SegmapError> {
        if labels.len() != width * height {
            return Err(SegmapError::Dimension(format!(
                "{} labels for a {width}x{height} map",
                labels.len()
            )));
        }
        Ok(Self {
            width,
            height,
            labels,
            modality,
        })
    }

    pub fn filled(width: usize, height: usize, label: ClassLabel, modality: Modality) -> Self {
        Self {
            width,
            height,
            labels: vec![label; width * height],
            modality,
        }
    }

    pub fn from_codes(
        width: usize,
        height: usize,
        codes: &[u8],
        modality: Modality,
    ) -> Result<Self, SegmapError> {
        let labels = codes
            .iter()
            .map(|&c| ClassLabel::from_code(c))
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(width, height, labels, modality)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn labels(&self) -> &[ClassLabel] {
        &self.labels
    }

    pub fn codes(&self) -> Vec<u8> {
        self.labels.iter().map(|l| l.code()).collect()
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> ClassLabel {
        self.labels[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, label: ClassLabel) {
        self.labels[y * self.width + x] = label;
    }

    pub fn crop(&self, x: usize, y: usize, w: usize, h: usize) -> Result<ClassMap, SegmapError> {
        if x + w > self.width || y + h > self.height {
            return Err(SegmapError::Dimension(format!(
                "crop {x},{y} {w}x{h} outside a {}x{} map",
                self.width, self.height
            )));
        }
        let labels = (y..y + h)
            .flat_map(|yy| self.labels[yy * self.width + x..yy * self.width + x + w].iter().copied())
            .collect();
        Self::new(w, h, labels, self.modality)
    }

    /// Copies `src` with its top-left corner at `(x, y)`; must fit.
    fn paste(&mut self, src: &ClassMap, x: usize, y: usize) {
        for yy in 0..src.height {
            let dst = (y + yy) * self.width + x;
            self.labels[dst..dst + src.width]
                .copy_from_slice(&src.labels[yy * src.width..(yy + 1) * src.width]);
        }
    }

    /// RGB rendering with the mask palette.
    pub fn to_rgb(&self) -> Raster {
        let data = self
            .labels
            .iter()
            .flat_map(|l| PALETTE[l.code() as usize])
            .collect();
        Raster::new(self.width, self.height, 3, data).expect("rgb layout")
    }
}

pub fn encode_mask(map: &ClassMap) -> Result<Vec<u8>, SegmapError> {
    Ok(encode_indexed_png(map.width, map.height, &map.codes(), &PALETTE)?)
}

/// Decodes any PNG whose colors all belong to the mask palette.
pub fn decode_mask(bytes: &[u8], modality: Modality) -> Result<ClassMap, SegmapError> {
    let img = decode_png(bytes)?;
    let codes = palette_indices(&img, &PALETTE).map_err(SegmapError::UnknownColor)?;
    ClassMap::from_codes(img.width(), img.height(), &codes, modality)
}

pub fn save_mask(map: &ClassMap, path: impl AsRef<Path>) -> Result<(), SegmapError> {
    let bytes = encode_mask(map)?;
    std::fs::write(path, bytes).map_err(RasterError::Io)?;
    Ok(())
}

pub fn load_mask(path: impl AsRef<Path>, modality: Modality) -> Result<ClassMap, SegmapError> {
    let bytes = std::fs::read(path).map_err(RasterError::Io)?;
    decode_mask(&bytes, modality)
}

/// Something that turns an image region into class labels.
pub trait SegmentationBackend: Sync {
    /// Labels for `region`, which was cut from the full frame with its
    /// top-left corner at `origin`.
    fn segment(&self, region: &Raster, origin: (usize, usize)) -> Result<ClassMap, SegmapError>;
}

impl SegmentationBackend for BaselineModel {
    fn segment(&self, region: &Raster, _origin: (usize, usize)) -> Result<ClassMap, SegmapError> {
        predict(self, region)
    }
}

/// Serves a segmentation produced elsewhere (e.g. by an external network)
/// through the backend interface.
#[derive(Debug, Clone)]
pub struct ExternalMask {
    pub map: ClassMap,
}

impl SegmentationBackend for ExternalMask {
    fn segment(&self, region: &Raster, origin: (usize, usize)) -> Result<ClassMap, SegmapError> {
        self.map
            .crop(origin.0, origin.1, region.width(), region.height())
    }
}

/// Context added around each tile before inference.
pub const HALO: usize = 16;

/// Segments `img` tile by tile with a [`HALO`]-pixel context border, crops the
/// border away and stitches the tiles.
pub fn segment_tiled(
    backend: &dyn SegmentationBackend,
    img: &Raster,
    grid: &TileGrid,
    modality: Modality,
) -> Result<ClassMap, SegmapError> {
    segment_tiled_with_halo(backend, img, grid, modality, HALO)
}

pub fn segment_tiled_with_halo(
    backend: &dyn SegmentationBackend,
    img: &Raster,
    grid: &TileGrid,
    modality: Modality,
    halo: usize,
) -> Result<ClassMap, SegmapError> {
    let (w, h) = (img.width(), img.height());
    if grid.source_width() != w || grid.source_height() != h {
        return Err(SegmapError::Dimension(format!(
            "tile grid covers {}x{}, image is {w}x{h}",
            grid.source_width(),
            grid.source_height()
        )));
    }
    let parts: Vec<(usize, usize, ClassMap)> = (0..grid.len())
        .into_par_iter()
        .map(|i| {
            let (x, y) = grid.origin(i);
            let (tw, th) = grid.extent(i);
            let (x0, y0) = (x.saturating_sub(halo), y.saturating_sub(halo));
            let (x1, y1) = ((x + tw + halo).min(w), (y + th + halo).min(h));
            let region = img.crop(x0, y0, x1 - x0, y1 - y0)?;
            let labels = backend
                .segment(&region, (x0, y0))
                .and_then(|m| {
                    if m.width != region.width() || m.height != region.height() {
                        return Err(SegmapError::Dimension(format!(
                            "backend returned {}x{} for a {}x{} region",
                            m.width,
                            m.height,
                            region.width(),
                            region.height()
                        )));
                    }
                    m.crop(x - x0, y - y0, tw, th)
                })
                .map_err(|e| SegmapError::Tile {
                    index: i,
                    x,
                    y,
                    source: Box::new(e),
                })?;
            Ok((x, y, labels))
        })
        .collect::<Result<_, SegmapError>>()?;
    let mut out = ClassMap::filled(w, h, ClassLabel::Shadow, modality);
    for (x, y, part) in &parts {
        out.paste(part, *x, *y);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn arb_map() -> impl Strategy<Value = ClassMap> {
        (1usize..40, 1usize..40).prop_flat_map(|(w, h)| {
            proptest::collection::vec(0u8..4, w * h)
                .prop_map(move |c| ClassMap::from_codes(w, h, &c, Modality::Visible).unwrap())
        })
    }

    proptest! {
        #[test]
        fn mask_roundtrip(map in arb_map()) {
            let back = decode_mask(&encode_mask(&map).unwrap(), Modality::Visible).unwrap();
            prop_assert_eq!(back, map);
        }
    }

    #[test]
    fn codes_are_stable() {
        let codes: Vec<u8> = ClassLabel::ALL.iter().map(|l| l.code()).collect();
        assert_eq!(codes, vec![0, 1, 2, 3]);
        assert!(ClassLabel::from_code(4).is_err());
        assert_eq!(serde_json::to_string(&ClassLabel::Healthy).unwrap(), "\"healthy\"");
    }

    #[test]
    fn all_healthy_reads_code_two() {
        let map = ClassMap::filled(6, 5, ClassLabel::Healthy, Modality::Infrared);
        let back = decode_mask(&encode_mask(&map).unwrap(), Modality::Infrared).unwrap();
        assert!(back.codes().iter().all(|&c| c == 2));
    }

    #[test]
    fn foreign_color_is_format_error() {
        let img = Raster::new(2, 1, 3, vec![0, 0, 0, 1, 2, 3]).unwrap();
        let bytes = crate::raster::io::encode_png(&img).unwrap();
        match decode_mask(&bytes, Modality::Visible) {
            Err(SegmapError::UnknownColor(c)) => assert_eq!(c, [1, 2, 3]),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.png");
        let map = ClassMap::from_codes(3, 2, &[0, 1, 2, 3, 2, 1], Modality::Visible).unwrap();
        save_mask(&map, &p).unwrap();
        assert_eq!(load_mask(&p, Modality::Visible).unwrap(), map);
    }

    #[test]
    fn external_mask_tiles_reassemble() {
        let codes: Vec<u8> = (0..50 * 30).map(|i| ((i * 7 + i / 50) % 4) as u8).collect();
        let map = ClassMap::from_codes(50, 30, &codes, Modality::Infrared).unwrap();
        let img = Raster::zeros(50, 30, 1).unwrap();
        let grid = TileGrid::new(50, 30, 16, 12).unwrap();
        let out = segment_tiled(&ExternalMask { map: map.clone() }, &img, &grid, Modality::Infrared).unwrap();
        assert_eq!(out, map);
    }

    struct Failing;
    impl SegmentationBackend for Failing {
        fn segment(&self, _: &Raster, _: (usize, usize)) -> Result<ClassMap, SegmapError> {
            Err(SegmapError::Config("boom".into()))
        }
    }

    #[test]
    fn backend_failure_names_tile() {
        let img = Raster::zeros(40, 10, 1).unwrap();
        let grid = TileGrid::new(40, 10, 20, 10).unwrap();
        let err = segment_tiled_with_halo(&Failing, &img, &grid, Modality::Visible, 0).unwrap_err();
        assert!(matches!(err, SegmapError::Tile { .. }));
    }
}
