//! Lossless 8-bit PNG interchange.

use std::fs::File;
use std::io::{BufReader, BufWriter, Cursor, Write};
use std::path::Path;

use super::{Raster, RasterError};

fn png_err(e: impl std::fmt::Display) -> RasterError {
    RasterError::Png(e.to_string())
}

/// Decodes a PNG into a raster. Palettes are expanded to RGB(A), 16-bit
/// samples are reduced to 8 bits and a gray+alpha image keeps only its gray
/// plane.
pub fn decode_png(bytes: &[u8]) -> Result<Raster, RasterError> {
    decode(Cursor::new(bytes))
}

pub fn read_png(path: impl AsRef<Path>) -> Result<Raster, RasterError> {
    let file = File::open(path.as_ref())?;
    decode(BufReader::new(file))
}

fn decode<R: std::io::BufRead + std::io::Seek>(r: R) -> Result<Raster, RasterError> {
    let mut decoder = png::Decoder::new(r);
    decoder.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
    let mut reader = decoder.read_info().map_err(png_err)?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| png_err("image too large"))?;
    let mut buf = vec![0; size];
    let info = reader.next_frame(&mut buf).map_err(png_err)?;
    buf.truncate(info.buffer_size());
    let (w, h) = (info.width as usize, info.height as usize);
    match info.color_type {
        png::ColorType::Grayscale => Raster::new(w, h, 1, buf),
        png::ColorType::GrayscaleAlpha => {
            let gray = buf.chunks_exact(2).map(|p| p[0]).collect();
            Raster::new(w, h, 1, gray)
        }
        png::ColorType::Rgb => Raster::new(w, h, 3, buf),
        png::ColorType::Rgba => Raster::new(w, h, 4, buf),
        png::ColorType::Indexed => Err(png_err("palette was not expanded")),
    }
}

/// Encodes a raster as an 8-bit gray, RGB or RGBA PNG.
pub fn encode_png(img: &Raster) -> Result<Vec<u8>, RasterError> {
    let color = match img.channels() {
        1 => png::ColorType::Grayscale,
        3 => png::ColorType::Rgb,
        4 => png::ColorType::Rgba,
        c => return Err(RasterError::ChannelCount(c)),
    };
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, img.width() as u32, img.height() as u32);
        enc.set_color(color);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc.write_header().map_err(png_err)?;
        writer.write_image_data(img.data()).map_err(png_err)?;
        writer.finish().map_err(png_err)?;
    }
    Ok(out)
}

pub fn write_png(path: impl AsRef<Path>, img: &Raster) -> Result<(), RasterError> {
    write_bytes(path.as_ref(), &encode_png(img)?)
}

/// Encodes per-pixel palette indices as an 8-bit indexed PNG.
pub fn encode_indexed_png(
    width: usize,
    height: usize,
    indices: &[u8],
    palette: &[[u8; 3]],
) -> Result<Vec<u8>, RasterError> {
    if indices.len() != width * height {
        return Err(RasterError::DataLength {
            width,
            height,
            channels: 1,
            len: indices.len(),
        });
    }
    if let Some(&bad) = indices.iter().find(|&&i| i as usize >= palette.len()) {
        return Err(png_err(format!(
            "index {bad} outside a {}-entry palette",
            palette.len()
        )));
    }
    let plte: Vec<u8> = palette.iter().flatten().copied().collect();
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, width as u32, height as u32);
        enc.set_color(png::ColorType::Indexed);
        enc.set_depth(png::BitDepth::Eight);
        enc.set_palette(plte);
        let mut writer = enc.write_header().map_err(png_err)?;
        writer.write_image_data(indices).map_err(png_err)?;
        writer.finish().map_err(png_err)?;
    }
    Ok(out)
}

/// Maps every pixel of a decoded label image back to its palette index.
/// Gray images are read as `(g, g, g)`; alpha is ignored.
pub fn palette_indices(img: &Raster, palette: &[[u8; 3]]) -> Result<Vec<u8>, [u8; 3]> {
    let mut lut = std::collections::HashMap::with_capacity(palette.len());
    for (i, rgb) in palette.iter().enumerate() {
        lut.entry(*rgb).or_insert(i as u8);
    }
    img.data()
        .chunks_exact(img.channels())
        .map(|px| {
            let rgb = if px.len() == 1 {
                [px[0]; 3]
            } else {
                [px[0], px[1], px[2]]
            };
            lut.get(&rgb).copied().ok_or(rgb)
        })
        .collect()
}

pub(crate) fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), RasterError> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(bytes)?;
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_all_layouts() {
        for c in [1usize, 3, 4] {
            let data: Vec<u8> = (0..7 * 5 * c).map(|i| (i * 37 % 256) as u8).collect();
            let img = Raster::new(7, 5, c, data).unwrap();
            let back = decode_png(&encode_png(&img).unwrap()).unwrap();
            assert_eq!(back, img);
        }
    }

    #[test]
    fn indexed_roundtrip_through_palette() {
        let palette = [[0, 0, 0], [139, 69, 19], [0, 128, 0]];
        let idx: Vec<u8> = (0..12).map(|i| (i % 3) as u8).collect();
        let bytes = encode_indexed_png(4, 3, &idx, &palette).unwrap();
        let img = decode_png(&bytes).unwrap();
        assert_eq!(img.channels(), 3);
        assert_eq!(palette_indices(&img, &palette).unwrap(), idx);
    }

    #[test]
    fn unknown_color_reported() {
        let img = Raster::new(1, 1, 3, vec![1, 2, 3]).unwrap();
        assert_eq!(palette_indices(&img, &[[0, 0, 0]]), Err([1, 2, 3]));
    }

    #[test]
    fn file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.png");
        let img = Raster::from_fn_gray(9, 4, |x, y| (x * y) as u8);
        write_png(&path, &img).unwrap();
        assert_eq!(read_png(&path).unwrap(), img);
    }
}
