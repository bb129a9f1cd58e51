use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{ensure, Error, Result};

use super::kernel::{convolve, make_motion_psf, Boundary};
use super::plane::ImagePlane;

/// Which degradations a frame carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum DegradationKind {
    None,
    GaussianNoise,
    MotionBlur,
    Both,
}

impl DegradationKind {
    pub const ALL: [DegradationKind; 4] = [
        DegradationKind::None,
        DegradationKind::GaussianNoise,
        DegradationKind::MotionBlur,
        DegradationKind::Both,
    ];

    pub fn has_noise(self) -> bool {
        matches!(self, DegradationKind::GaussianNoise | DegradationKind::Both)
    }

    pub fn has_blur(self) -> bool {
        matches!(self, DegradationKind::MotionBlur | DegradationKind::Both)
    }

    pub fn name(self) -> &'static str {
        match self {
            DegradationKind::None => "none",
            DegradationKind::GaussianNoise => "gaussian-noise",
            DegradationKind::MotionBlur => "motion-blur",
            DegradationKind::Both => "both",
        }
    }
}

impl fmt::Display for DegradationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DegradationKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        DegradationKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Contract(format!("unknown degradation kind '{s}'")))
    }
}

/// Parameters of one synthetic degradation. Fields that do not apply to
/// `kind` must be zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DegradationSpec {
    pub kind: DegradationKind,
    /// Noise standard deviation as a fraction of the [0,1] range.
    pub noise_sigma: f64,
    /// Motion blur length in pixels (odd).
    pub blur_length: usize,
    pub blur_angle: f64,
    pub seed: u64,
}

impl DegradationSpec {
    pub fn none(seed: u64) -> Self {
        Self {
            kind: DegradationKind::None,
            noise_sigma: 0.0,
            blur_length: 0,
            blur_angle: 0.0,
            seed,
        }
    }

    pub fn noise(sigma: f64, seed: u64) -> Self {
        Self {
            kind: DegradationKind::GaussianNoise,
            noise_sigma: sigma,
            ..Self::none(seed)
        }
    }

    pub fn blur(length: usize, angle: f64, seed: u64) -> Self {
        Self {
            kind: DegradationKind::MotionBlur,
            blur_length: length,
            blur_angle: angle,
            ..Self::none(seed)
        }
    }

    pub fn both(sigma: f64, length: usize, angle: f64, seed: u64) -> Self {
        Self {
            kind: DegradationKind::Both,
            noise_sigma: sigma,
            blur_length: length,
            blur_angle: angle,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.noise_sigma.is_finite() && self.noise_sigma >= 0.0,
            Contract,
            "noise sigma must be finite and non-negative"
        );
        ensure!(self.blur_angle.is_finite(), Contract, "blur angle must be finite");
        if self.kind.has_noise() {
            ensure!(self.noise_sigma > 0.0, Contract, "{} needs noise_sigma > 0", self.kind);
        } else {
            ensure!(self.noise_sigma == 0.0, Contract, "{} must not set noise_sigma", self.kind);
        }
        if self.kind.has_blur() {
            ensure!(
                self.blur_length >= 3 && self.blur_length % 2 == 1,
                Contract,
                "{} needs an odd blur_length >= 3, got {}",
                self.kind,
                self.blur_length
            );
        } else {
            ensure!(self.blur_length == 0, Contract, "{} must not set blur_length", self.kind);
        }
        Ok(())
    }
}

/// Applies `spec` to `img`: motion blur first, then additive Gaussian noise,
/// then a clamp to [0,1]. Deterministic in `spec.seed`.
pub fn degrade(img: &ImagePlane, spec: &DegradationSpec) -> Result<ImagePlane> {
    spec.validate()?;
    let mut out = img.clone();
    if spec.kind.has_blur() {
        let psf = make_motion_psf(spec.blur_length, spec.blur_angle)?;
        out = convolve(&out, &psf, Boundary::Reflect)?;
    }
    if spec.kind.has_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let normal = Normal::new(0.0, spec.noise_sigma)
            .map_err(|e| Error::Contract(format!("bad noise sigma: {e}")))?;
        for v in out.data_mut() {
            *v += normal.sample(&mut rng);
        }
    }
    if spec.kind != DegradationKind::None {
        for v in out.data_mut() {
            *v = v.clamp(0.0, 1.0);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn edge_image() -> ImagePlane {
        ImagePlane::from_fn(16, 16, 1, |_, x, _| if x < 8 { 0.1 } else { 0.9 })
    }

    /// Pixels strictly between the two plateau levels.
    fn edge_width(img: &ImagePlane) -> usize {
        img.data().iter().filter(|&&v| v > 0.1 + 1e-9 && v < 0.9 - 1e-9).count()
    }

    #[test]
    fn none_is_identity() {
        let img = edge_image();
        assert_eq!(degrade(&img, &DegradationSpec::none(3)).unwrap(), img);
    }

    #[test]
    fn noise_is_deterministic_in_seed() {
        let img = edge_image();
        let spec = DegradationSpec::noise(0.1, 42);
        let a = degrade(&img, &spec).unwrap();
        let b = degrade(&img, &spec).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, degrade(&img, &DegradationSpec::noise(0.1, 43)).unwrap());
        assert!(a.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn blur_widens_vertical_edge() {
        let img = edge_image();
        assert_eq!(edge_width(&img), 0);
        let out = degrade(&img, &DegradationSpec::blur(5, 0.0, 0)).unwrap();
        // horizontal 5-tap smear: 4 intermediate columns per row
        assert_eq!(edge_width(&out), 4 * 16);
    }

    #[test]
    fn spec_validation() {
        assert!(DegradationSpec::noise(0.0, 0).validate().is_err());
        assert!(DegradationSpec::blur(4, 0.0, 0).validate().is_err());
        assert!(DegradationSpec::both(0.1, 1, 0.0, 0).validate().is_err());
        let mut s = DegradationSpec::none(0);
        s.noise_sigma = 0.1;
        assert!(s.validate().is_err());
        assert!(DegradationSpec::both(0.1, 9, 30.0, 0).validate().is_ok());
    }

    #[test]
    fn kind_names_roundtrip() {
        for k in DegradationKind::ALL {
            assert_eq!(k.name().parse::<DegradationKind>().unwrap(), k);
        }
    }
}
