//! Rasters, convolution, standard kernels, synthetic degradations and
//! image-file IO shared by every other module.

mod degrade;
mod io;
mod kernel;
mod patches;
mod plane;

pub use degrade::{degrade, DegradationKind, DegradationSpec};
pub use io::{dequantize, load_image, quantize, save_image, save_mask};
pub use kernel::{
    convolve, correlate, laplacian, make_motion_psf, Boundary, Kernel2D, Psf, PSF_SUM_TOLERANCE,
};
pub(crate) use kernel::{conv_raw, conv_raw_backward};
pub use patches::{assemble_patches, extract_patches};
pub use plane::{ImagePlane, Mask, LUMA_WEIGHTS};
