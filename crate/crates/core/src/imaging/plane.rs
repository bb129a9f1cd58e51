use crate::error::{ensure, Result};

/// Luminance weights (ITU-R BT.601) used whenever a statistic is defined on
/// the gray plane of an RGB frame.
pub const LUMA_WEIGHTS: [f64; 3] = [0.299, 0.587, 0.114];

/// An H×W×C raster of reals, row-major with interleaved channels.
///
/// The semantic range is [0,1]; loaders clamp into it, intermediate results
/// (Laplacian responses, logits) may leave it.
#[derive(Debug, Clone, PartialEq)]
pub struct ImagePlane {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl ImagePlane {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        ensure!(
            height > 0 && width > 0 && channels > 0,
            Dimension,
            "image dimensions must be positive, got {height}x{width}x{channels}"
        );
        ensure!(
            data.len() == height * width * channels,
            Dimension,
            "data length {} does not match {height}x{width}x{channels}",
            data.len()
        );
        ensure!(
            data.iter().all(|v| v.is_finite()),
            Contract,
            "image data must be finite"
        );
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Self {
        assert!(height > 0 && width > 0 && channels > 0);
        Self {
            height,
            width,
            channels,
            data: vec![value; height * width * channels],
        }
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self::filled(height, width, channels, 0.0)
    }

    /// Builds a plane by evaluating `f(y, x, c)` at every sample.
    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let mut data = Vec::with_capacity(height * width * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(y, x, c));
                }
            }
        }
        Self {
            height,
            width,
            channels,
            data,
        }
    }

    /// Wraps data without the finiteness scan; for internal hot paths whose
    /// inputs are already validated.
    pub(crate) fn from_raw(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), height * width * channels);
        Self {
            height,
            width,
            channels,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn pixel_count(&self) -> usize {
        self.height * self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, v: f64) {
        self.data[(y * self.width + x) * self.channels + c] = v;
    }

    pub fn same_shape(&self, other: &ImagePlane) -> bool {
        self.shape() == other.shape()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> ImagePlane {
        Self::from_raw(
            self.height,
            self.width,
            self.channels,
            self.data.iter().map(|&v| f(v)).collect(),
        )
    }

    pub fn zip_map(&self, other: &ImagePlane, f: impl Fn(f64, f64) -> f64) -> Result<ImagePlane> {
        ensure!(
            self.same_shape(other),
            Dimension,
            "shape mismatch {:?} vs {:?}",
            self.shape(),
            other.shape()
        );
        Ok(Self::from_raw(
            self.height,
            self.width,
            self.channels,
            self.data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        ))
    }

    pub fn clamp01(&self) -> ImagePlane {
        self.map(|v| v.clamp(0.0, 1.0))
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    /// Gray plane: BT.601 luminance for RGB, identity for one channel and a
    /// plain channel mean otherwise.
    pub fn luminance(&self) -> ImagePlane {
        match self.channels {
            1 => self.clone(),
            3 => {
                let data = self
                    .data
                    .chunks_exact(3)
                    .map(|p| LUMA_WEIGHTS[0] * p[0] + LUMA_WEIGHTS[1] * p[1] + LUMA_WEIGHTS[2] * p[2])
                    .collect();
                Self::from_raw(self.height, self.width, 1, data)
            }
            c => {
                let data = self
                    .data
                    .chunks_exact(c)
                    .map(|p| p.iter().sum::<f64>() / c as f64)
                    .collect();
                Self::from_raw(self.height, self.width, 1, data)
            }
        }
    }

    pub fn channel(&self, c: usize) -> ImagePlane {
        assert!(c < self.channels);
        let data = self.data.iter().skip(c).step_by(self.channels).copied().collect();
        Self::from_raw(self.height, self.width, 1, data)
    }

    /// Interleaves single-channel planes into one multi-channel plane.
    pub fn from_channels(planes: &[ImagePlane]) -> Result<ImagePlane> {
        ensure!(!planes.is_empty(), Contract, "no channels given");
        let (h, w) = (planes[0].height, planes[0].width);
        ensure!(
            planes.iter().all(|p| p.height == h && p.width == w && p.channels == 1),
            Dimension,
            "channel planes must be single-channel and equally sized"
        );
        let c = planes.len();
        let mut data = vec![0.0; h * w * c];
        for (ci, p) in planes.iter().enumerate() {
            for (i, &v) in p.data.iter().enumerate() {
                data[i * c + ci] = v;
            }
        }
        Ok(Self::from_raw(h, w, c, data))
    }

    /// Copies a rectangular window (all channels).
    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> Result<ImagePlane> {
        ensure!(
            height > 0 && width > 0 && top + height <= self.height && left + width <= self.width,
            Dimension,
            "crop {height}x{width}@({top},{left}) outside {}x{}",
            self.height,
            self.width
        );
        let mut data = Vec::with_capacity(height * width * self.channels);
        for y in top..top + height {
            let start = (y * self.width + left) * self.channels;
            data.extend_from_slice(&self.data[start..start + width * self.channels]);
        }
        Ok(Self::from_raw(height, width, self.channels, data))
    }

    /// Largest centered crop whose sides are multiples of `multiple`.
    pub fn center_crop_to_multiple(&self, multiple: usize) -> Result<ImagePlane> {
        ensure!(multiple > 0, Contract, "crop multiple must be positive");
        let h = self.height / multiple * multiple;
        let w = self.width / multiple * multiple;
        ensure!(h > 0 && w > 0, Dimension, "image smaller than {multiple}");
        self.crop((self.height - h) / 2, (self.width - w) / 2, h, w)
    }
}

/// Binary segmentation mask; `true` is foreground.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    height: usize,
    width: usize,
    data: Vec<bool>,
}

impl Mask {
    pub fn new(height: usize, width: usize, data: Vec<bool>) -> Result<Self> {
        ensure!(
            data.len() == height * width,
            Dimension,
            "mask data length {} does not match {height}x{width}",
            data.len()
        );
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn empty(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![false; height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(f(y, x));
            }
        }
        Self {
            height,
            width,
            data,
        }
    }

    /// Foreground where the luminance exceeds `threshold`.
    pub fn from_plane(plane: &ImagePlane, threshold: f64) -> Self {
        let gray = plane.luminance();
        Self {
            height: plane.height(),
            width: plane.width(),
            data: gray.data().iter().map(|&v| v > threshold).collect(),
        }
    }

    pub fn to_plane(&self) -> ImagePlane {
        ImagePlane::from_raw(
            self.height,
            self.width,
            1,
            self.data.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
        )
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> bool {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, y: usize, x: usize, v: bool) {
        self.data[y * self.width + x] = v;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn foreground_fraction(&self) -> f64 {
        self.count() as f64 / self.data.len() as f64
    }

    pub fn invert(&self) -> Mask {
        Mask {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|b| !b).collect(),
        }
    }

    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> Result<Mask> {
        ensure!(
            top + height <= self.height && left + width <= self.width,
            Dimension,
            "mask crop outside bounds"
        );
        Ok(Mask::from_fn(height, width, |y, x| self.get(top + y, left + x)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_length_and_nan() {
        assert!(ImagePlane::new(2, 2, 1, vec![0.0; 3]).is_err());
        assert!(ImagePlane::new(1, 1, 1, vec![f64::NAN]).is_err());
        assert!(ImagePlane::new(0, 2, 1, vec![]).is_err());
    }

    #[test]
    fn luminance_uses_bt601() {
        let img = ImagePlane::new(1, 1, 3, vec![1.0, 0.0, 0.0]).unwrap();
        assert!((img.luminance().get(0, 0, 0) - 0.299).abs() < 1e-15);
        let img = ImagePlane::new(1, 1, 3, vec![1.0, 1.0, 1.0]).unwrap();
        assert!((img.luminance().get(0, 0, 0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn channel_split_and_merge() {
        let img = ImagePlane::from_fn(3, 4, 3, |y, x, c| (y * 100 + x * 10 + c) as f64);
        let chans: Vec<_> = (0..3).map(|c| img.channel(c)).collect();
        assert_eq!(ImagePlane::from_channels(&chans).unwrap(), img);
    }

    #[test]
    fn center_crop() {
        let img = ImagePlane::from_fn(10, 13, 1, |y, x, _| (y * 13 + x) as f64);
        let c = img.center_crop_to_multiple(4).unwrap();
        assert_eq!(c.shape(), (8, 12, 1));
        assert_eq!(c.get(0, 0, 0), img.get(1, 0, 0));
    }

    #[test]
    fn mask_roundtrip() {
        let m = Mask::from_fn(3, 3, |y, x| (y + x) % 2 == 0);
        assert_eq!(Mask::from_plane(&m.to_plane(), 0.5), m);
        assert_eq!(m.count(), 5);
        assert_eq!(m.invert().count(), 4);
    }
}
