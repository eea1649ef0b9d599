//! Quantitative susceptibility mapping: dipole forward model, linear and nonlinear
//! dipole inversions, phase preprocessing, synthetic phantoms and quality metrics.
//!
//! Volumes are stored x-fastest in double precision. Forward FFTs are unnormalized
//! and inverse FFTs carry the `1/N` factor. The dipole kernel is 0 at DC, so
//! reconstructions are defined up to a constant offset.

pub mod dipole;
pub mod error;
pub mod fft;
pub mod grid;
pub mod invert;
pub mod metrics;
pub mod morphology;
pub mod ndi;
pub mod orientation;
pub mod preprocess;
pub mod simulate;
pub mod volume;

pub use dipole::{adjoint_field, dipole_kernel, forward_field, DipoleKernel};
pub use error::{QsmError, Result};
pub use fft::{fft3, ifft3};
pub use grid::{freq_coords, Axis, VolumeGrid};
pub use invert::{cosmos, l2_closedform, tkd, CosmosConfig, L2Config, TkdConfig};
pub use metrics::{data_consistency, nrmse, ssim3d, SsimConfig};
pub use morphology::mask_erode;
pub use ndi::{ndi_cost, ndi_gradient, ndi_reconstruct, NdiConfig, NdiResult};
pub use orientation::{Orientation, OrientationDataset, OrientationEntry};
pub use preprocess::{laplacian_unwrap, smv_filter, SmvConfig};
pub use simulate::{make_magnitude, make_mask, make_phantom, simulate_acquisition, NoiseSpec, PhantomSpec, Shape, ShapeKind};
pub use volume::{ComplexVolume, ScalarVolume};
