//! Illuminant estimation by gray pixel detection.
//!
//! The crate is organised bottom-up:
//!
//! - [`imageio`]: linear images, validity masks, dataset manifests
//! - [`filter`], [`opponent`]: log transform, local difference operators,
//!   color- and double-opponent maps
//! - [`detect`]: Gray-Pixel and Grayness-Index detectors, top-K selection
//! - [`baselines`]: Gray-World / White-Patch / Shades-of-Gray / Gray-Edge
//! - [`gpnet`]: the constrained-feature convolutional grayness regressor
//! - [`eval`]: angular errors, summary statistics, folds and reports
//! - [`synth`]: Lambertian test scenes with known illuminant and gray mask

pub mod baselines;
pub mod detect;
pub mod error;
pub mod eval;
pub mod filter;
pub mod gpnet;
pub mod imageio;
pub mod map;
pub mod opponent;
pub mod synth;

pub use error::{Error, Result};
pub use imageio::{Dataset, DatasetEntry, Illuminant, LinearImage, Mask};
pub use map::{GraynessMap, ScalarMap, EXCLUDED};
