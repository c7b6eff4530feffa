//! Anti-steganography DCT low-pass filtering and the synthetic nuclei
//! segmentation pipeline around it.
//!
//! - [`raster`] and [`io`]: image, mask and label containers, PNG/TIFF I/O.
//! - [`dct`]: orthonormal 2-D DCT, frequency masks, low-pass filter, noise.
//! - [`stego`]: a closed-form high-frequency steganography codec.
//! - [`synth`]: ellipse-based instance mask synthesis with dataset presets.
//! - [`postproc`]: hole filling, exact distance transform, watershed.
//! - [`metrics`]: IoU matching, precision/recall/F1, scalar GAN losses.
//! - [`config`] and [`pipeline`]: the end-to-end run.

pub mod config;
pub mod dct;
pub mod error;
pub mod io;
pub mod metrics;
pub mod pipeline;
pub mod postproc;
pub mod raster;
pub mod seed;
pub mod stego;
pub mod synth;

pub use error::{Error, Result};
pub use raster::{BinaryMask, ImageGrid, InstanceMask, ValueRange};
