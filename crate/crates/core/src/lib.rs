//! Local frequency-domain video prediction: windowed local Fourier analysis,
//! phase-based motion estimation, a small learnable velocity filter, and a
//! predict/correct motion segmentation loop, with a synthetic-data harness.

pub mod error;
pub mod fft;
pub mod harness;
pub mod image;
pub mod lft;
pub mod motion_seg;
pub mod phase_motion;
pub mod predictor;
pub mod tensor_io;
pub mod transform_model;

pub use error::{Error, Result};
pub use image::Image;
