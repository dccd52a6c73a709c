use serde::{Deserialize, Serialize};

use super::{Raster, RasterError};

pub const DEFAULT_TILE_WIDTH: usize = 480;
pub const DEFAULT_TILE_HEIGHT: usize = 360;

/// Non-overlapping block layout over a raster. Edge tiles are zero padded;
/// the pad extent is kept so stitching can strip it again.
///
/// Serializes as the JSON sidecar
/// `{tile_w, tile_h, cols, rows, pad_right, pad_bottom}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TileGrid {
    pub tile_w: usize,
    pub tile_h: usize,
    pub cols: usize,
    pub rows: usize,
    pub pad_right: usize,
    pub pad_bottom: usize,
}

impl TileGrid {
    /// Layout covering a `width`x`height` raster.
    pub fn new(
        width: usize,
        height: usize,
        tile_w: usize,
        tile_h: usize,
    ) -> Result<Self, RasterError> {
        if tile_w == 0 || tile_h == 0 {
            return Err(RasterError::TileSize);
        }
        let cols = width.div_ceil(tile_w);
        let rows = height.div_ceil(tile_h);
        Ok(Self {
            tile_w,
            tile_h,
            cols,
            rows,
            pad_right: cols * tile_w - width,
            pad_bottom: rows * tile_h - height,
        })
    }

    /// 480x360 layout.
    pub fn with_default_tiles(width: usize, height: usize) -> Result<Self, RasterError> {
        Self::new(width, height, DEFAULT_TILE_WIDTH, DEFAULT_TILE_HEIGHT)
    }

    pub fn len(&self) -> usize {
        self.cols * self.rows
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Width of the covered (unpadded) raster.
    pub fn source_width(&self) -> usize {
        self.cols * self.tile_w - self.pad_right
    }

    pub fn source_height(&self) -> usize {
        self.rows * self.tile_h - self.pad_bottom
    }

    /// Top-left corner of tile `i` (row-major) in source coordinates.
    pub fn origin(&self, i: usize) -> (usize, usize) {
        ((i % self.cols) * self.tile_w, (i / self.cols) * self.tile_h)
    }

    /// Padding `(right, bottom)` carried by tile `i`.
    pub fn padding(&self, i: usize) -> (usize, usize) {
        let col = i % self.cols;
        let row = i / self.cols;
        (
            if col + 1 == self.cols { self.pad_right } else { 0 },
            if row + 1 == self.rows { self.pad_bottom } else { 0 },
        )
    }

    /// Valid (unpadded) extent of tile `i`.
    pub fn extent(&self, i: usize) -> (usize, usize) {
        let (pr, pb) = self.padding(i);
        (self.tile_w - pr, self.tile_h - pb)
    }

    fn check_validity(&self) -> Result<(), RasterError> {
        if self.tile_w == 0 || self.tile_h == 0 {
            return Err(RasterError::TileSize);
        }
        if self.pad_right >= self.tile_w || self.pad_bottom >= self.tile_h {
            return Err(RasterError::Integrity(format!(
                "padding {}x{} not smaller than tile {}x{}",
                self.pad_right, self.pad_bottom, self.tile_w, self.tile_h
            )));
        }
        Ok(())
    }
}

/// Splits `img` into `grid.len()` full-size tiles in row-major order.
pub fn tile(img: &Raster, grid: &TileGrid) -> Result<Vec<Raster>, RasterError> {
    grid.check_validity()?;
    if grid.source_width() != img.width() || grid.source_height() != img.height() {
        return Err(RasterError::Integrity(format!(
            "grid covers {}x{}, raster is {}x{}",
            grid.source_width(),
            grid.source_height(),
            img.width(),
            img.height()
        )));
    }
    let mut tiles = Vec::with_capacity(grid.len());
    for i in 0..grid.len() {
        let (x, y) = grid.origin(i);
        let (w, h) = grid.extent(i);
        let part = img.crop(x, y, w, h)?;
        if (w, h) == (grid.tile_w, grid.tile_h) {
            tiles.push(part);
        } else {
            let mut padded = Raster::zeros(grid.tile_w, grid.tile_h, img.channels())?;
            padded.paste(&part, 0, 0);
            tiles.push(padded);
        }
    }
    Ok(tiles)
}

/// Reassembles tiles produced by [`tile`], dropping the padding.
pub fn stitch(tiles: &[Raster], grid: &TileGrid) -> Result<Raster, RasterError> {
    grid.check_validity()?;
    if tiles.len() != grid.len() {
        return Err(RasterError::Integrity(format!(
            "expected {} tiles, got {}",
            grid.len(),
            tiles.len()
        )));
    }
    let channels = tiles.first().map_or(1, Raster::channels);
    let mut out = Raster::zeros(grid.source_width(), grid.source_height(), channels)?;
    for (i, t) in tiles.iter().enumerate() {
        if t.width() != grid.tile_w || t.height() != grid.tile_h || t.channels() != channels {
            return Err(RasterError::Integrity(format!(
                "tile {i} is {}x{}x{}, expected {}x{}x{channels}",
                t.width(),
                t.height(),
                t.channels(),
                grid.tile_w,
                grid.tile_h
            )));
        }
        let (x, y) = grid.origin(i);
        out.paste(t, x, y);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ramp(w: usize, h: usize) -> Raster {
        Raster::from_fn_gray(w, h, |x, y| ((x * 3 + y * 5) % 251) as u8)
    }

    #[test]
    fn full_frame_layout() {
        let grid = TileGrid::with_default_tiles(4608, 3456).unwrap();
        assert_eq!((grid.cols, grid.rows), (10, 10));
        assert_eq!(grid.len(), 4608usize.div_ceil(480) * 3456usize.div_ceil(360));
        assert_eq!((grid.pad_right, grid.pad_bottom), (192, 144));
        assert_eq!(grid.padding(99), (192, 144));
        assert_eq!(grid.padding(0), (0, 0));
    }

    #[test]
    fn single_tile_identity() {
        let img = ramp(480, 360);
        let grid = TileGrid::with_default_tiles(480, 360).unwrap();
        let tiles = tile(&img, &grid).unwrap();
        assert_eq!(tiles.len(), 1);
        assert_eq!(tiles[0], img);
        assert_eq!(stitch(&tiles, &grid).unwrap(), img);
    }

    #[test]
    fn exact_division_has_no_padding() {
        let grid = TileGrid::with_default_tiles(960, 720).unwrap();
        assert_eq!(grid.len(), 4);
        assert_eq!((grid.pad_right, grid.pad_bottom), (0, 0));
    }

    #[test]
    fn padded_region_is_zero() {
        let img = Raster::from_fn_gray(500, 370, |_, _| 9);
        let grid = TileGrid::with_default_tiles(500, 370).unwrap();
        let tiles = tile(&img, &grid).unwrap();
        let last = &tiles[3];
        assert_eq!(last.get(0, 0, 0), 9);
        assert_eq!(last.get(20, 0, 0), 0);
        assert_eq!(last.get(0, 10, 0), 0);
    }

    #[test]
    fn missing_tile_is_integrity_error() {
        let img = ramp(1000, 400);
        let grid = TileGrid::with_default_tiles(1000, 400).unwrap();
        let mut tiles = tile(&img, &grid).unwrap();
        tiles.pop();
        assert!(matches!(stitch(&tiles, &grid), Err(RasterError::Integrity(_))));
    }

    #[test]
    fn sidecar_field_names() {
        let grid = TileGrid::with_default_tiles(1000, 400).unwrap();
        let v: serde_json::Value = serde_json::to_value(grid).unwrap();
        for key in ["tile_w", "tile_h", "cols", "rows", "pad_right", "pad_bottom"] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn stitch_inverts_tile(w in 1usize..1200, h in 1usize..900, tw in 1usize..500, th in 1usize..400, c in prop::sample::select(vec![1usize, 3, 4])) {
            let data: Vec<u8> = (0..w * h * c).map(|i| ((i * 2654435761usize) >> 7) as u8).collect();
            let img = Raster::new(w, h, c, data).unwrap();
            let grid = TileGrid::new(w, h, tw, th).unwrap();
            let tiles = tile(&img, &grid).unwrap();
            prop_assert_eq!(tiles.len(), grid.len());
            prop_assert_eq!(stitch(&tiles, &grid).unwrap(), img);
        }
    }
}
