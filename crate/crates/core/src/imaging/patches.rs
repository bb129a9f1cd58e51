use crate::error::{ensure, Result};

use super::plane::ImagePlane;

/// Cuts `img` into non-overlapping `p×p` patches in row-major patch order.
///
/// Returns a flat `N×(p·p·C)` matrix; inside a patch, values run over rows,
/// then columns, then channels.
pub fn extract_patches(img: &ImagePlane, p: usize) -> Result<Vec<f64>> {
    let (h, w, c) = img.shape();
    ensure!(p > 0, Contract, "patch size must be positive");
    ensure!(
        h % p == 0 && w % p == 0,
        Contract,
        "image {h}x{w} is not divisible by patch size {p}; center-crop it first"
    );
    let mut out = Vec::with_capacity(h * w * c);
    let data = img.data();
    for py in 0..h / p {
        for px in 0..w / p {
            for y in 0..p {
                let start = ((py * p + y) * w + px * p) * c;
                out.extend_from_slice(&data[start..start + p * c]);
            }
        }
    }
    Ok(out)
}

/// Inverse of [`extract_patches`].
pub fn assemble_patches(patches: &[f64], h: usize, w: usize, c: usize, p: usize) -> Result<ImagePlane> {
    ensure!(
        p > 0 && h % p == 0 && w % p == 0,
        Contract,
        "image {h}x{w} is not divisible by patch size {p}"
    );
    ensure!(
        patches.len() == h * w * c,
        Dimension,
        "patch matrix holds {} values, expected {}",
        patches.len(),
        h * w * c
    );
    let mut data = vec![0.0; h * w * c];
    let mut src = patches.chunks_exact(p * c);
    for py in 0..h / p {
        for px in 0..w / p {
            for y in 0..p {
                let start = ((py * p + y) * w + px * p) * c;
                data[start..start + p * c].copy_from_slice(src.next().unwrap());
            }
        }
    }
    Ok(ImagePlane::from_raw(h, w, c, data))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_and_layout() {
        let img = ImagePlane::from_fn(4, 6, 2, |y, x, c| (y * 100 + x * 10 + c) as f64);
        let p = extract_patches(&img, 2).unwrap();
        // second patch starts at (0,2)
        assert_eq!(&p[8..16], &[20.0, 21.0, 30.0, 31.0, 120.0, 121.0, 130.0, 131.0]);
        assert_eq!(assemble_patches(&p, 4, 6, 2, 2).unwrap(), img);
        assert!(extract_patches(&img, 4).is_err());
    }
}
