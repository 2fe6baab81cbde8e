//! A lightweight convolutional grayness regressor fed with gain-robust
//! features, trained to predict each pixel's angle to the illuminant.
//!
//! - [`features`]: the three input blocks
//! - [`conv`], [`net`]: the network and its exact gradients
//! - [`loss`]: ground-truth grayness and the binned relative loss
//! - [`train`]: optimizer, schedule, augmentation
//! - [`checkpoint`]: parameter files

pub mod checkpoint;
pub mod conv;
pub mod features;
pub mod loss;
pub mod net;
pub mod train;

pub use checkpoint::{load_params, save_params};
pub use features::{build_features, FeatureStack, InputMode};
pub use loss::{binned_loss, gt_grayness, LossConfig};
pub use net::{net_forward, Arch, GpNet, NetParams, ParamGrads};
pub use train::{train, train_samples, TrainConfig, TrainOutcome, TrainSample};

use crate::detect::{estimate_illuminant, select_gray, Amount};
use crate::error::{Error, Result};
use crate::imageio::{Illuminant, LinearImage, Mask};
use crate::map::GraynessMap;

/// Image area at which the configured Top-K count applies unchanged.
pub const REFERENCE_AREA: f64 = 5.0e6;

/// Top-K count for an image of the given size: `k_ref` scaled by area, at least 1.
pub fn scaled_k(k_ref: usize, width: usize, height: usize) -> usize {
    ((k_ref as f64 * (width * height) as f64 / REFERENCE_AREA).round() as usize).max(1)
}

/// Predicted grayness of every pixel, excluded where `mask` is invalid.
pub fn gpnet_grayness(img: &LinearImage, params: &NetParams, mask: &Mask) -> Result<GraynessMap> {
    if !mask.matches(img) {
        return Err(Error::Structural("mask does not match image".into()));
    }
    let balanced = features::balance(img, Some(mask))?;
    let mut map = net_forward(params, &features::features_for(&balanced, params.arch.mode))?;
    map.exclude_where(&mask.valid);
    Ok(map)
}

/// Mean of the `k` pixels with the lowest predicted grayness.
pub fn gpnet_estimate(img: &LinearImage, params: &NetParams, k: usize, mask: &Mask) -> Result<Illuminant> {
    let map = gpnet_grayness(img, params, mask)?;
    let pixels = select_gray(&map, Amount::TopK(k))?;
    estimate_illuminant(img, &pixels)
}
