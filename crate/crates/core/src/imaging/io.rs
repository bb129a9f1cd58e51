//! 8-bit PNG and binary PGM/PPM (P5/P6) reading and writing.

use std::path::Path;

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{DynamicImage, ExtendedColorType, ImageEncoder, ImageFormat};

use crate::error::{Error, Result};

use super::plane::{ImagePlane, Mask};

/// Maps a [0,1] sample onto 0..=255, clamping out-of-range values.
pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn dequantize(v: u8) -> f64 {
    v as f64 / 255.0
}

/// Reads a PNG/PGM/PPM file into a [0,1] plane with 1 (gray) or 3 (RGB)
/// channels. Alpha is discarded.
pub fn load_image(path: impl AsRef<Path>) -> Result<ImagePlane> {
    let path = path.as_ref();
    let img = image::open(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })?;
    from_dynamic(img, path)
}

fn from_dynamic(img: DynamicImage, path: &Path) -> Result<ImagePlane> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    if w == 0 || h == 0 {
        return Err(Error::format(path, "empty image"));
    }
    let gray = matches!(
        img,
        DynamicImage::ImageLuma8(_)
            | DynamicImage::ImageLumaA8(_)
            | DynamicImage::ImageLuma16(_)
            | DynamicImage::ImageLumaA16(_)
    );
    let plane = if gray {
        let buf = img.into_luma8();
        ImagePlane::new(h, w, 1, buf.into_raw().into_iter().map(dequantize).collect())
    } else {
        let buf = img.into_rgb8();
        ImagePlane::new(h, w, 3, buf.into_raw().into_iter().map(dequantize).collect())
    };
    plane.map_err(|e| Error::format(path, e.to_string()))
}

fn format_for(path: &Path) -> Result<ImageFormat> {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
        .unwrap_or_default();
    match ext.as_str() {
        "png" => Ok(ImageFormat::Png),
        "pgm" | "ppm" | "pnm" => Ok(ImageFormat::Pnm),
        _ => Err(Error::format(path, format!("unsupported image extension '{ext}'"))),
    }
}

/// Writes a 1- or 3-channel plane, quantizing to 8 bits. The format follows
/// the extension: `.png`, or `.pgm`/`.ppm`/`.pnm` for binary P5/P6.
pub fn save_image(path: impl AsRef<Path>, img: &ImagePlane) -> Result<()> {
    let path = path.as_ref();
    let (h, w, c) = img.shape();
    let (color, subtype) = match c {
        1 => (ExtendedColorType::L8, PnmSubtype::Graymap(SampleEncoding::Binary)),
        3 => (ExtendedColorType::Rgb8, PnmSubtype::Pixmap(SampleEncoding::Binary)),
        _ => {
            return Err(Error::Contract(format!(
                "can only write 1- or 3-channel images, got {c}"
            )))
        }
    };
    let bytes: Vec<u8> = img.data().iter().map(|&v| quantize(v)).collect();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let writer = std::io::BufWriter::new(file);
    let res = match format_for(path)? {
        ImageFormat::Png => image::codecs::png::PngEncoder::new(writer).write_image(
            &bytes,
            w as u32,
            h as u32,
            color,
        ),
        _ => PnmEncoder::new(writer)
            .with_subtype(subtype)
            .write_image(&bytes, w as u32, h as u32, color),
    };
    res.map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

/// Writes a mask as 0/255 gray.
pub fn save_mask(path: impl AsRef<Path>, mask: &Mask) -> Result<()> {
    save_image(path, &mask.to_plane())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantization_roundtrip_is_exact_on_grid() {
        for v in 0..=255u8 {
            assert_eq!(quantize(dequantize(v)), v);
        }
        assert_eq!(quantize(-0.5), 0);
        assert_eq!(quantize(7.0), 255);
    }

    #[test]
    fn png_and_pnm_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let gray = ImagePlane::from_fn(5, 7, 1, |y, x, _| dequantize((y * 31 + x * 7) as u8));
        let rgb = ImagePlane::from_fn(4, 3, 3, |y, x, c| dequantize((y * 50 + x * 20 + c * 9) as u8));
        for (name, img) in [
            ("g.png", &gray),
            ("g.pgm", &gray),
            ("c.png", &rgb),
            ("c.ppm", &rgb),
        ] {
            let p = dir.path().join(name);
            save_image(&p, img).unwrap();
            assert_eq!(&load_image(&p).unwrap(), img, "{name}");
        }
        let header = std::fs::read(dir.path().join("g.pgm")).unwrap();
        assert_eq!(&header[..2], b"P5");
        let header = std::fs::read(dir.path().join("c.ppm")).unwrap();
        assert_eq!(&header[..2], b"P6");
    }

    #[test]
    fn unknown_extension_and_missing_file() {
        let dir = tempfile::tempdir().unwrap();
        let img = ImagePlane::zeros(2, 2, 1);
        assert!(save_image(dir.path().join("x.bmp"), &img).is_err());
        let err = load_image(dir.path().join("missing.png")).unwrap_err();
        assert!(err.is_data_error());
    }
}
