//! Joint denoising and 2x super-resolution of grayscale microscopy images.
//!
//! This crate is `no_std` (it needs `alloc`) and contains everything that
//! does not touch the file system: the tensor and reverse-mode
//! differentiation substrate, the generator / discriminator / feature
//! extractor networks, the loss functions, PSNR/SSIM, patch extraction and
//! augmentation, the per-step training logic and tiled inference.
#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod autodiff;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod image;
pub mod init;
pub mod kernels;
pub mod losses;
pub mod metrics;
pub mod models;
pub mod ops;
pub mod optim;
pub mod params;
pub mod real;
pub mod tensor;
pub mod tiling;
pub mod trainer;

pub use autodiff::{Gradients, Graph, Var};
pub use error::{Error, Result};
pub use image::GrayImage;
pub use ops::{Eval, Ops};
pub use params::{Bound, ParamStore};
pub use real::{DType, Real};
pub use tensor::Tensor;
