use rayon::prelude::*;

use super::{Homography, RegistrationError};
use crate::raster::{quantize, Mask, Raster};

/// Source location of every target pixel, or `None` where the inverse
/// mapping leaves `[0, w−1] × [0, h−1]` of the source.
fn source_coords(
    h: &Homography,
    src_w: usize,
    src_h: usize,
    target_w: usize,
    target_h: usize,
) -> Result<Vec<Option<(f64, f64)>>, RegistrationError> {
    let inv = h.inverse()?;
    let (maxx, maxy) = ((src_w - 1) as f64, (src_h - 1) as f64);
    Ok((0..target_w * target_h)
        .into_par_iter()
        .map(|i| {
            let (x, y) = ((i % target_w) as f64, (i / target_w) as f64);
            let (sx, sy) = inv.apply(x, y).ok()?;
            (sx >= 0.0 && sy >= 0.0 && sx <= maxx && sy <= maxy).then_some((sx, sy))
        })
        .collect())
}

/// Resamples `src` into a `target_w × target_h` frame through `h` (source
/// coordinates to target coordinates) by inverse mapping with bilinear
/// interpolation. Uncovered pixels are 0 and clear in the returned mask.
pub fn warp(
    src: &Raster,
    h: &Homography,
    target_w: usize,
    target_h: usize,
) -> Result<(Raster, Mask), RegistrationError> {
    let (w, hh, c) = (src.width(), src.height(), src.channels());
    if src.is_empty() {
        return Err(RegistrationError::Input("cannot warp an empty raster".into()));
    }
    let coords = source_coords(h, w, hh, target_w, target_h)?;
    let data = src.data();
    let mut out = vec![0u8; target_w * target_h * c];
    out.par_chunks_mut(c)
        .zip(&coords)
        .for_each(|(px, coord)| {
            let Some((sx, sy)) = *coord else { return };
            let (x0, y0) = (sx.floor() as usize, sy.floor() as usize);
            let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(hh - 1));
            let (fx, fy) = (sx - x0 as f64, sy - y0 as f64);
            let at = |x: usize, y: usize, ch: usize| f64::from(data[(y * w + x) * c + ch]);
            for (ch, v) in px.iter_mut().enumerate() {
                let top = at(x0, y0, ch) * (1.0 - fx) + at(x1, y0, ch) * fx;
                let bottom = at(x0, y1, ch) * (1.0 - fx) + at(x1, y1, ch) * fx;
                *v = quantize(top * (1.0 - fy) + bottom * fy);
            }
        });
    let mask = Mask::new(
        target_w,
        target_h,
        coords.iter().map(Option::is_some).collect(),
    );
    let img = Raster::new(target_w, target_h, c, out).expect("warp output layout");
    Ok((img, mask))
}

/// Nearest-neighbor transport of a label plane (`labels.len() = src_w·src_h`)
/// through `h`; uncovered pixels get `fill`.
pub fn warp_labels(
    labels: &[u8],
    src_w: usize,
    src_h: usize,
    h: &Homography,
    target_w: usize,
    target_h: usize,
    fill: u8,
) -> Result<(Vec<u8>, Mask), RegistrationError> {
    if labels.len() != src_w * src_h || labels.is_empty() {
        return Err(RegistrationError::Input(format!(
            "label plane of {} values for a {src_w}x{src_h} frame",
            labels.len()
        )));
    }
    let coords = source_coords(h, src_w, src_h, target_w, target_h)?;
    let out = coords
        .par_iter()
        .map(|c| match c {
            Some((sx, sy)) => {
                let x = (sx + 0.5).floor() as usize;
                let y = (sy + 0.5).floor() as usize;
                labels[y.min(src_h - 1) * src_w + x.min(src_w - 1)]
            }
            None => fill,
        })
        .collect();
    let mask = Mask::new(
        target_w,
        target_h,
        coords.iter().map(Option::is_some).collect(),
    );
    Ok((out, mask))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gradient(w: usize, h: usize) -> Raster {
        Raster::from_fn_gray(w, h, |x, y| ((x * 7 + y * 3) % 256) as u8)
    }

    #[test]
    fn identity_is_bit_identical() {
        let img = gradient(37, 29);
        let (out, mask) = warp(&img, &Homography::identity(), 37, 29).unwrap();
        assert_eq!(out, img);
        assert_eq!(mask.count(), 37 * 29);
    }

    #[test]
    fn translation_leaves_invalid_stripe() {
        let img = gradient(40, 20);
        let (out, mask) = warp(&img, &Homography::translation(5.0, 0.0), 40, 20).unwrap();
        for y in 0..20 {
            for x in 0..40 {
                if x < 5 {
                    assert!(!mask.get(x, y));
                    assert_eq!(out.get(x, y, 0), 0);
                } else {
                    assert!(mask.get(x, y));
                    assert_eq!(out.get(x, y, 0), img.get(x - 5, y, 0));
                }
            }
        }
    }

    #[test]
    fn projective_round_trip_small_loss() {
        let (w, h) = (160usize, 120usize);
        let img = Raster::from_fn_gray(w, h, |x, y| {
            (128.0 + 60.0 * (x as f64 / 9.0).sin() * (y as f64 / 7.0).cos()).round() as u8
        });
        let hm = Homography::from_params(0.01, 0.02, 3.5, -0.015, 0.005, -2.25, 2e-5, -1e-5).unwrap();
        let (fwd, m1) = warp(&img, &hm, w, h).unwrap();
        let (back, m2) = warp(&fwd, &hm.inverse().unwrap(), w, h).unwrap();
        // a pixel is trustworthy when its forward sample and all four
        // bilinear neighbors of the backward sample were covered
        let (mut acc, mut n) = (0.0, 0usize);
        for y in 0..h {
            for x in 0..w {
                if !m2.get(x, y) {
                    continue;
                }
                let (sx, sy) = hm.apply(x as f64, y as f64).unwrap();
                let (x0, y0) = (sx.floor() as usize, sy.floor() as usize);
                let ok = [(x0, y0), (x0 + 1, y0), (x0, y0 + 1), (x0 + 1, y0 + 1)]
                    .iter()
                    .all(|&(a, b)| a < w && b < h && m1.get(a, b));
                if !ok {
                    continue;
                }
                acc += (f64::from(back.get(x, y, 0)) - f64::from(img.get(x, y, 0))).powi(2);
                n += 1;
            }
        }
        assert!(n > w * h / 2);
        let e = (acc / n as f64).sqrt();
        assert!(e < 2.0, "round-trip RMSE {e}");
    }

    #[test]
    fn multichannel_warp() {
        let img = Raster::new(3, 1, 3, vec![10, 20, 30, 40, 50, 60, 70, 80, 90]).unwrap();
        let (out, _) = warp(&img, &Homography::translation(1.0, 0.0), 3, 1).unwrap();
        assert_eq!(out.data(), &[0, 0, 0, 10, 20, 30, 40, 50, 60]);
    }

    #[test]
    fn labels_nearest_neighbor() {
        let labels = vec![0, 1, 2, 3, 0, 1];
        let (out, mask) =
            warp_labels(&labels, 3, 2, &Homography::translation(0.4, 0.0), 3, 2, 9).unwrap();
        // x=0 maps to -0.4: outside; x=1 to 0.6 -> nearest 1
        assert_eq!(out, vec![9, 1, 2, 9, 0, 1]);
        assert_eq!(mask.count(), 4);
    }
}
