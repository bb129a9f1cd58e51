use crate::error::{ensure, Error, Result};

use super::plane::ImagePlane;

/// How samples outside the frame are synthesized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Boundary {
    /// Half-sample symmetric reflection: `… b a | a b c … y z | z y …`.
    #[default]
    Reflect,
    /// Samples outside the frame read as 0.
    Zero,
}

/// Square convolution kernel of odd size.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel2D {
    size: usize,
    weights: Vec<f64>,
}

impl Kernel2D {
    pub fn new(size: usize, weights: Vec<f64>) -> Result<Self> {
        ensure!(size % 2 == 1, Contract, "kernel size must be odd, got {size}");
        ensure!(
            weights.len() == size * size,
            Dimension,
            "kernel of size {size} needs {} weights, got {}",
            size * size,
            weights.len()
        );
        ensure!(
            weights.iter().all(|w| w.is_finite()),
            Contract,
            "kernel weights must be finite"
        );
        Ok(Self { size, weights })
    }

    pub fn identity(size: usize) -> Result<Self> {
        ensure!(size % 2 == 1, Contract, "kernel size must be odd, got {size}");
        let mut weights = vec![0.0; size * size];
        weights[size * size / 2] = 1.0;
        Ok(Self { size, weights })
    }

    /// 4-neighbour Laplacian `[[0,1,0],[1,-4,1],[0,1,0]]`.
    pub fn laplacian() -> Self {
        Self {
            size: 3,
            weights: vec![0.0, 1.0, 0.0, 1.0, -4.0, 1.0, 0.0, 1.0, 0.0],
        }
    }

    /// Identity minus the 3×3 box mean.
    pub fn highpass() -> Self {
        let mut weights = vec![-1.0 / 9.0; 9];
        weights[4] += 1.0;
        Self { size: 3, weights }
    }

    pub fn box_mean(size: usize) -> Result<Self> {
        ensure!(size % 2 == 1, Contract, "kernel size must be odd, got {size}");
        let n = (size * size) as f64;
        Ok(Self {
            size,
            weights: vec![1.0 / n; size * size],
        })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn radius(&self) -> usize {
        self.size / 2
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.weights[i * self.size + j]
    }

    /// Kernel rotated by 180°.
    pub fn rot180(&self) -> Self {
        Self {
            size: self.size,
            weights: self.weights.iter().rev().copied().collect(),
        }
    }

    pub fn sum(&self) -> f64 {
        self.weights.iter().sum()
    }
}

impl AsRef<Kernel2D> for Kernel2D {
    fn as_ref(&self) -> &Kernel2D {
        self
    }
}

/// Tolerance on the unit-sum invariant of a [`Psf`].
pub const PSF_SUM_TOLERANCE: f64 = 1e-9;

/// Point spread function: a non-negative kernel summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct Psf(Kernel2D);

impl Psf {
    /// Validates an already-normalized weight set.
    pub fn new(size: usize, weights: Vec<f64>) -> Result<Self> {
        let k = Kernel2D::new(size, weights)?;
        ensure!(
            k.weights.iter().all(|&w| w >= 0.0),
            Contract,
            "PSF weights must be non-negative"
        );
        let s = k.sum();
        ensure!(
            (s - 1.0).abs() <= PSF_SUM_TOLERANCE,
            Contract,
            "PSF weights must sum to 1, got {s}"
        );
        Ok(Self(k))
    }

    /// Floors negatives at zero and rescales to unit sum.
    pub fn normalized(size: usize, weights: Vec<f64>) -> Result<Self> {
        let mut k = Kernel2D::new(size, weights)?;
        for w in &mut k.weights {
            *w = w.max(0.0);
        }
        let s = k.sum();
        if !(s > 0.0) || !s.is_finite() {
            return Err(Error::DegeneratePsf(format!(
                "kernel mass is {s} after flooring at zero"
            )));
        }
        for w in &mut k.weights {
            *w /= s;
        }
        Ok(Self(k))
    }

    pub fn identity(size: usize) -> Result<Self> {
        Ok(Self(Kernel2D::identity(size)?))
    }

    /// Uniform kernel, the blind-mode starting guess.
    pub fn flat(size: usize) -> Result<Self> {
        ensure!(size % 2 == 1, Contract, "PSF size must be odd, got {size}");
        let n = size * size;
        Ok(Self(Kernel2D {
            size,
            weights: vec![1.0 / n as f64; n],
        }))
    }

    pub fn kernel(&self) -> &Kernel2D {
        &self.0
    }

    pub fn size(&self) -> usize {
        self.0.size
    }

    pub fn weights(&self) -> &[f64] {
        &self.0.weights
    }

    pub fn rot180(&self) -> Psf {
        Psf(self.0.rot180())
    }

    /// Cosine similarity of the two weight vectors. Kernels of different size
    /// are compared after zero-padding the smaller one about its center.
    pub fn normalized_inner_product(&self, other: &Psf) -> f64 {
        let size = self.size().max(other.size());
        let a = self.padded_to(size);
        let b = other.padded_to(size);
        let dot: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        dot / (na * nb)
    }

    /// Weights zero-padded (centered) into a `size`×`size` grid.
    pub fn padded_to(&self, size: usize) -> Vec<f64> {
        assert!(size >= self.size() && size % 2 == 1);
        let off = (size - self.size()) / 2;
        let mut out = vec![0.0; size * size];
        let k = self.size();
        for i in 0..k {
            for j in 0..k {
                out[(i + off) * size + j + off] = self.0.get(i, j);
            }
        }
        out
    }
}

impl AsRef<Kernel2D> for Psf {
    fn as_ref(&self) -> &Kernel2D {
        &self.0
    }
}

/// Source-index table for one axis: entry `p * k + i` is the input index
/// read by output position `p` under kernel tap `i` (offset `i - r`), or -1
/// for a zero sample.
pub(crate) fn index_table(n: usize, k: usize, boundary: Boundary) -> Vec<isize> {
    let r = (k / 2) as isize;
    let n_i = n as isize;
    let mut table = Vec::with_capacity(n * k);
    for p in 0..n_i {
        for i in 0..k as isize {
            let mut s = p + r - i;
            match boundary {
                Boundary::Zero => {
                    if s < 0 || s >= n_i {
                        s = -1;
                    }
                }
                Boundary::Reflect => {
                    // kernel size ≤ frame size keeps a single fold sufficient
                    if s < 0 {
                        s = -s - 1;
                    } else if s >= n_i {
                        s = 2 * n_i - s - 1;
                    }
                }
            }
            table.push(s);
        }
    }
    table
}

/// Raw convolution of an interleaved `h×w×c` buffer with a `k×k` kernel:
/// `out(y,x) = Σ_ij w(i,j) · src(y + r - i, x + r - j)`.
pub(crate) fn conv_raw(
    src: &[f64],
    h: usize,
    w: usize,
    c: usize,
    kernel: &[f64],
    k: usize,
    boundary: Boundary,
) -> Vec<f64> {
    let rows = index_table(h, k, boundary);
    let cols = index_table(w, k, boundary);
    let mut out = vec![0.0; h * w * c];
    for y in 0..h {
        let orow = &mut out[y * w * c..(y + 1) * w * c];
        for i in 0..k {
            let sy = rows[y * k + i];
            if sy < 0 {
                continue;
            }
            let srow = &src[sy as usize * w * c..(sy as usize + 1) * w * c];
            for j in 0..k {
                let wt = kernel[i * k + j];
                if wt == 0.0 {
                    continue;
                }
                for x in 0..w {
                    let sx = cols[x * k + j];
                    if sx < 0 {
                        continue;
                    }
                    let sx = sx as usize;
                    for ch in 0..c {
                        orow[x * c + ch] += wt * srow[sx * c + ch];
                    }
                }
            }
        }
    }
    out
}

/// Adjoint of [`conv_raw`] with respect to the source buffer and the kernel.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv_raw_backward(
    src: &[f64],
    h: usize,
    w: usize,
    c: usize,
    kernel: &[f64],
    k: usize,
    boundary: Boundary,
    grad_out: &[f64],
    mut grad_src: Option<&mut [f64]>,
    mut grad_kernel: Option<&mut [f64]>,
) {
    let rows = index_table(h, k, boundary);
    let cols = index_table(w, k, boundary);
    for y in 0..h {
        let grow = &grad_out[y * w * c..(y + 1) * w * c];
        for i in 0..k {
            let sy = rows[y * k + i];
            if sy < 0 {
                continue;
            }
            let sy = sy as usize;
            for j in 0..k {
                let wt = kernel[i * k + j];
                let mut acc = 0.0;
                for x in 0..w {
                    let sx = cols[x * k + j];
                    if sx < 0 {
                        continue;
                    }
                    let base = (sy * w + sx as usize) * c;
                    for ch in 0..c {
                        let go = grow[x * c + ch];
                        if let Some(gs) = grad_src.as_deref_mut() {
                            gs[base + ch] += wt * go;
                        }
                        acc += go * src[base + ch];
                    }
                }
                if let Some(gk) = grad_kernel.as_deref_mut() {
                    gk[i * k + j] += acc;
                }
            }
        }
    }
}

fn check_fits(img: &ImagePlane, k: &Kernel2D) -> Result<()> {
    ensure!(
        k.size() <= img.height().min(img.width()),
        Dimension,
        "kernel of size {} larger than {}x{} image",
        k.size(),
        img.height(),
        img.width()
    );
    Ok(())
}

/// 2-D convolution applied independently to every channel.
pub fn convolve<K: AsRef<Kernel2D>>(img: &ImagePlane, kernel: K, boundary: Boundary) -> Result<ImagePlane> {
    let k = kernel.as_ref();
    check_fits(img, k)?;
    let (h, w, c) = img.shape();
    let out = conv_raw(img.data(), h, w, c, k.weights(), k.size(), boundary);
    Ok(ImagePlane::from_raw(h, w, c, out))
}

/// Correlation: convolution with the kernel rotated by 180°.
pub fn correlate<K: AsRef<Kernel2D>>(img: &ImagePlane, kernel: K, boundary: Boundary) -> Result<ImagePlane> {
    convolve(img, kernel.as_ref().rot180(), boundary)
}

/// Laplacian response with the 4-neighbour kernel and reflect boundary.
/// Callers convert RGB to luminance first.
pub fn laplacian(img: &ImagePlane) -> Result<ImagePlane> {
    ensure!(
        img.channels() == 1,
        Contract,
        "laplacian expects a single-channel plane, got {} channels",
        img.channels()
    );
    convolve(img, Kernel2D::laplacian(), Boundary::Reflect)
}

/// Straight-line motion PSF of `length` pixels at `angle_deg` degrees
/// (counter-clockwise from the +x axis, image y pointing down).
///
/// The line is walked along its major axis so it always covers exactly
/// `length` distinct pixels, each weighted `1/length`.
pub fn make_motion_psf(length: usize, angle_deg: f64) -> Result<Psf> {
    ensure!(
        length >= 3 && length % 2 == 1,
        Contract,
        "motion PSF length must be odd and >= 3, got {length}"
    );
    ensure!(angle_deg.is_finite(), Contract, "motion PSF angle must be finite");
    let theta = angle_deg.to_radians();
    let (s, c) = theta.sin_cos();
    let major = c.abs().max(s.abs());
    let r = (length / 2) as isize;
    let size = length;
    let mut weights = vec![0.0; size * size];
    let wt = 1.0 / length as f64;
    for step in -r..=r {
        let t = step as f64 / major;
        let dx = (t * c).round() as isize;
        let dy = (-t * s).round() as isize;
        let (row, col) = ((r + dy) as usize, (r + dx) as usize);
        weights[row * size + col] = wt;
    }
    Psf::new(size, weights)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(h: usize, w: usize) -> ImagePlane {
        ImagePlane::from_fn(h, w, 1, |y, x, _| (y * w + x) as f64 / (h * w) as f64)
    }

    /// Direct O(n²k²) loop, written against the textbook definition.
    fn brute_convolve(img: &ImagePlane, k: &Kernel2D, zero: bool) -> ImagePlane {
        let (h, w, c) = img.shape();
        let r = k.radius() as isize;
        let fetch = |p: isize, n: usize| -> Option<usize> {
            let n = n as isize;
            if p >= 0 && p < n {
                Some(p as usize)
            } else if zero {
                None
            } else if p < 0 {
                Some((-p - 1) as usize)
            } else {
                Some((2 * n - p - 1) as usize)
            }
        };
        ImagePlane::from_fn(h, w, c, |y, x, ch| {
            let mut acc = 0.0;
            for dy in -r..=r {
                for dx in -r..=r {
                    let wt = k.get((dy + r) as usize, (dx + r) as usize);
                    if let (Some(sy), Some(sx)) = (fetch(y as isize - dy, h), fetch(x as isize - dx, w)) {
                        acc += wt * img.get(sy, sx, ch);
                    }
                }
            }
            acc
        })
    }

    #[test]
    fn identity_kernel_is_exact() {
        let img = ramp(6, 7);
        for b in [Boundary::Reflect, Boundary::Zero] {
            assert_eq!(convolve(&img, Kernel2D::identity(3).unwrap(), b).unwrap(), img);
            assert_eq!(correlate(&img, Kernel2D::identity(5).unwrap(), b).unwrap(), img);
        }
    }

    #[test]
    fn constant_image_is_fixed_by_any_psf() {
        let img = ImagePlane::filled(8, 8, 2, 0.37);
        let psf = make_motion_psf(5, 30.0).unwrap();
        let out = convolve(&img, &psf, Boundary::Reflect).unwrap();
        for v in out.data() {
            assert!((v - 0.37).abs() < 1e-12);
        }
    }

    #[test]
    fn box_filter_on_ramp_matches_sliding_mean() {
        let img = ramp(5, 5);
        let out = convolve(&img, Kernel2D::box_mean(3).unwrap(), Boundary::Zero).unwrap();
        // interior: plain 3×3 mean
        for y in 1..4 {
            for x in 1..4 {
                let mut s = 0.0;
                for yy in y - 1..=y + 1 {
                    for xx in x - 1..=x + 1 {
                        s += img.get(yy, xx, 0);
                    }
                }
                assert!((out.get(y, x, 0) - s / 9.0).abs() < 1e-15);
            }
        }
        // corner with zero padding: only 4 of 9 samples present
        let s = img.get(0, 0, 0) + img.get(0, 1, 0) + img.get(1, 0, 0) + img.get(1, 1, 0);
        assert!((out.get(0, 0, 0) - s / 9.0).abs() < 1e-15);
        let b = brute_convolve(&img, &Kernel2D::box_mean(3).unwrap(), false);
        let o = convolve(&img, Kernel2D::box_mean(3).unwrap(), Boundary::Reflect).unwrap();
        for (a, b) in o.data().iter().zip(b.data()) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn asymmetric_kernel_matches_brute_force() {
        let img = ImagePlane::from_fn(6, 5, 2, |y, x, c| ((y * 7 + x * 3 + c * 5) % 11) as f64 / 10.0);
        let k = Kernel2D::new(3, vec![0.1, 0.5, -0.2, 0.0, 1.0, 0.3, 0.7, -0.4, 0.2]).unwrap();
        for zero in [false, true] {
            let b = if zero { Boundary::Zero } else { Boundary::Reflect };
            let got = convolve(&img, &k, b).unwrap();
            let want = brute_convolve(&img, &k, zero);
            for (a, e) in got.data().iter().zip(want.data()) {
                assert!((a - e).abs() < 1e-13);
            }
            let got = correlate(&img, &k, b).unwrap();
            let want = brute_convolve(&img, &k.rot180(), zero);
            for (a, e) in got.data().iter().zip(want.data()) {
                assert!((a - e).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn symmetric_kernel_correlate_equals_convolve() {
        let img = ramp(7, 7);
        let k = Kernel2D::box_mean(3).unwrap();
        assert_eq!(
            correlate(&img, &k, Boundary::Reflect).unwrap(),
            convolve(&img, &k, Boundary::Reflect).unwrap()
        );
    }

    #[test]
    fn kernel_larger_than_image_is_rejected() {
        let img = ramp(4, 8);
        assert!(matches!(
            convolve(&img, Kernel2D::box_mean(5).unwrap(), Boundary::Reflect),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn laplacian_cases() {
        let c = ImagePlane::filled(5, 5, 1, 0.4);
        assert!(laplacian(&c).unwrap().data().iter().all(|&v| v.abs() < 1e-15));

        let r = ramp(6, 6);
        let l = laplacian(&r).unwrap();
        for y in 1..5 {
            for x in 1..5 {
                assert!(l.get(y, x, 0).abs() < 1e-14);
            }
        }

        let mut dot = ImagePlane::zeros(5, 5, 1);
        dot.set(2, 2, 0, 1.0);
        let l = laplacian(&dot).unwrap();
        assert_eq!(l.get(2, 2, 0), -4.0);
        for (y, x) in [(1, 2), (3, 2), (2, 1), (2, 3)] {
            assert_eq!(l.get(y, x, 0), 1.0);
        }
        assert_eq!(l.get(1, 1, 0), 0.0);
        assert_eq!(l.data().iter().filter(|v| **v != 0.0).count(), 5);

        assert!(matches!(laplacian(&ImagePlane::zeros(3, 3, 3)), Err(Error::Contract(_))));
    }

    #[test]
    fn motion_psf_shapes() {
        let third = 1.0 / 3.0;
        let h = make_motion_psf(3, 0.0).unwrap();
        assert_eq!(h.weights(), &[0.0, 0.0, 0.0, third, third, third, 0.0, 0.0, 0.0]);
        let v = make_motion_psf(3, 90.0).unwrap();
        assert_eq!(v.weights(), &[0.0, third, 0.0, 0.0, third, 0.0, 0.0, third, 0.0]);

        // 45°: anti-diagonal in image coordinates (y grows downward)
        let d = make_motion_psf(5, 45.0).unwrap();
        for i in 0..5 {
            for j in 0..5 {
                let want = if i + j == 4 { 0.2 } else { 0.0 };
                assert_eq!(d.kernel().get(i, j), want, "({i},{j})");
            }
        }
        assert!(make_motion_psf(4, 0.0).is_err());
        assert!(make_motion_psf(1, 0.0).is_err());
    }

    #[test]
    fn motion_psf_is_centrosymmetric() {
        for angle in [0.0, 12.5, 33.0, 45.0, 71.0, 90.0, 135.0, 170.0] {
            for len in [3, 5, 7, 9, 11] {
                let p = make_motion_psf(len, angle).unwrap();
                assert_eq!(p.rot180(), p, "len {len} angle {angle}");
                assert_eq!(p.weights().iter().filter(|w| **w > 0.0).count(), len);
            }
        }
    }

    #[test]
    fn psf_validation() {
        assert!(Psf::new(3, vec![0.0; 9]).is_err());
        assert!(Psf::new(1, vec![-1.0]).is_err());
        assert!(matches!(
            Psf::normalized(3, vec![-1.0; 9]),
            Err(Error::DegeneratePsf(_))
        ));
        let p = Psf::normalized(3, vec![2.0; 9]).unwrap();
        assert!((p.kernel().sum() - 1.0).abs() < 1e-15);
        assert!((p.normalized_inner_product(&Psf::flat(3).unwrap()) - 1.0).abs() < 1e-12);
    }
}
