//! Gray-Pixel and Grayness-Index detectors, gray pixel selection and the
//! mean-of-gray-pixels illuminant estimate.

use crate::error::{Error, Result};
use crate::filter;
use crate::imageio::{Illuminant, LinearImage, Mask};
use crate::map::{GraynessMap, ScalarMap, EXCLUDED};
use crate::opponent::{self, LocalOpKind, OpponentPlanes, OpponentVariant};

/// Scores below this are rounding noise of an exactly gray pixel and are
/// stored as 0, so ties resolve by pixel order instead of by noise.
pub const NUMERICAL_ZERO: f64 = 1e-10;

/// Added to the mean IIM magnitude in the Gray-Pixel ratio.
const RATIO_FLOOR: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectorParams {
    /// Contrast gate in log units; flatter pixels are excluded.
    pub eps_flat: f64,
    /// Box window for the final smoothing; 1 disables it.
    pub smooth_window: usize,
    /// Center-surround scale of the Grayness-Index operator.
    pub gi_sigma: f64,
}

impl Default for DetectorParams {
    fn default() -> Self {
        Self {
            eps_flat: 1e-4,
            smooth_window: 7,
            gi_sigma: 5.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GpVariant {
    /// Gradient magnitude of the log planes.
    Edge,
    /// 3x3 local standard deviation of the log planes.
    Std,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Detector {
    GrayPixelEdge,
    GrayPixelStd,
    GraynessIndex,
}

impl Detector {
    pub fn grayness(&self, img: &LinearImage, mask: &Mask, params: &DetectorParams) -> Result<GraynessMap> {
        match self {
            Detector::GrayPixelEdge => grayness_gp(img, GpVariant::Edge, mask, params),
            Detector::GrayPixelStd => grayness_gp(img, GpVariant::Std, mask, params),
            Detector::GraynessIndex => grayness_gi(img, mask, params),
        }
    }

    pub fn estimate(
        &self,
        img: &LinearImage,
        mask: &Mask,
        amount: Amount,
        params: &DetectorParams,
    ) -> Result<Illuminant> {
        let map = self.grayness(img, mask, params)?;
        let pixels = select_gray(&map, amount)?;
        estimate_illuminant(img, &pixels)
    }
}

fn check_mask(img: &LinearImage, mask: &Mask) -> Result<()> {
    if mask.matches(img) {
        Ok(())
    } else {
        Err(Error::Structural(format!(
            "mask {}x{} for image {}x{}",
            mask.width,
            mask.height,
            img.width(),
            img.height()
        )))
    }
}

fn finish(mut raw: ScalarMap, params: &DetectorParams, what: &'static str) -> Result<GraynessMap> {
    for v in raw.data_mut() {
        if *v < NUMERICAL_ZERO {
            *v = 0.0;
        }
    }
    if raw.data().iter().all(|&v| v == EXCLUDED) {
        return Err(Error::Detector(what));
    }
    Ok(GraynessMap(filter::box_mean_valid(&raw, params.smooth_window)))
}

/// Gray-Pixel: a pixel is gray when its three log-channel IIMs are equal.
/// Score = std of the IIMs over their mean magnitude.
pub fn grayness_gp(
    img: &LinearImage,
    variant: GpVariant,
    mask: &Mask,
    params: &DetectorParams,
) -> Result<GraynessMap> {
    check_mask(img, mask)?;
    let log_img = opponent::log_transform(img);
    let kind = match variant {
        GpVariant::Edge => LocalOpKind::GradientMagnitude,
        GpVariant::Std => LocalOpKind::LocalStd { window: 3 },
    };
    let iims: Vec<ScalarMap> = (0..3).map(|c| opponent::local_op(&log_img.planes[c], kind)).collect();
    let raw = ScalarMap::from_fn(img.width(), img.height(), |x, y| {
        let v = [iims[0].get(x, y), iims[1].get(x, y), iims[2].get(x, y)];
        let mean_abs = v.iter().map(|a| a.abs()).sum::<f64>() / 3.0;
        if !mask.get(x, y) || mean_abs < params.eps_flat {
            return EXCLUDED;
        }
        let mean = v.iter().sum::<f64>() / 3.0;
        let std = (v.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / 3.0).sqrt();
        std / (mean_abs + RATIO_FLOOR)
    });
    finish(raw, params, "gray-pixel: every pixel is flat or masked")
}

/// Grayness-Index: local contrast of the luminance-opponent planes φ^r, φ^b.
pub fn grayness_gi(img: &LinearImage, mask: &Mask, params: &DetectorParams) -> Result<GraynessMap> {
    check_mask(img, mask)?;
    // luminance mixes channels linearly; normalizing gains keeps the map gain-invariant
    let log_img = opponent::log_transform(&img.gain_normalized(Some(mask)));
    let OpponentPlanes::VsLuminance { phi } = opponent::color_opponent(&log_img, OpponentVariant::VsLuminance)
    else {
        unreachable!()
    };
    let kind = LocalOpKind::CenterSurround {
        sigma: params.gi_sigma,
    };
    let d_r = opponent::local_op(&phi[0], kind);
    let d_b = opponent::local_op(&phi[2], kind);
    let contrast: Vec<ScalarMap> = (0..3).map(|c| opponent::local_op(&log_img.planes[c], kind)).collect();
    let raw = ScalarMap::from_fn(img.width(), img.height(), |x, y| {
        let flat = contrast.iter().any(|m| m.get(x, y).abs() <= params.eps_flat);
        if !mask.get(x, y) || flat {
            return EXCLUDED;
        }
        d_r.get(x, y).hypot(d_b.get(x, y))
    });
    finish(raw, params, "grayness-index: every pixel is flat or masked")
}

/// How many of the grayest pixels to keep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Amount {
    TopK(usize),
    /// Fraction of the non-excluded pixels, rounded up.
    TopFrac(f64),
}

/// Selected gray pixels as `(x, y)`, grayest first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PixelSet {
    pub coords: Vec<(usize, usize)>,
}

impl PixelSet {
    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }
}

/// The lowest-scoring non-excluded pixels; ties go to the earlier pixel in row-major order.
pub fn select_gray(map: &GraynessMap, amount: Amount) -> Result<PixelSet> {
    let values = map.values();
    let mut idx: Vec<usize> = (0..values.len()).filter(|&i| values[i] != EXCLUDED).collect();
    let available = idx.len();
    let k = match amount {
        Amount::TopK(k) => k,
        Amount::TopFrac(f) => {
            if !(f > 0.0 && f <= 1.0) {
                return Err(Error::Input(format!("fraction {f} not in (0, 1]")));
            }
            (f * available as f64).ceil() as usize
        }
    };
    if k == 0 || k > available {
        return Err(Error::Selection {
            needed: k.max(1),
            available,
        });
    }
    let key = |a: &usize, b: &usize| values[*a].total_cmp(&values[*b]).then(a.cmp(b));
    if k < idx.len() {
        idx.select_nth_unstable_by(k - 1, key);
        idx.truncate(k);
    }
    idx.sort_unstable_by(key);
    let w = map.width();
    Ok(PixelSet {
        coords: idx.into_iter().map(|i| (i % w, i / w)).collect(),
    })
}

/// Mean RGB of the selected pixels, normalized.
pub fn estimate_illuminant(img: &LinearImage, pixels: &PixelSet) -> Result<Illuminant> {
    if pixels.is_empty() {
        return Err(Error::Estimation("no pixels selected".into()));
    }
    let mut sum = [0.0; 3];
    for &(x, y) in &pixels.coords {
        let p = img.pixel(x, y);
        for c in 0..3 {
            sum[c] += p[c];
        }
    }
    let mean = sum.map(|s| s / pixels.len() as f64);
    Illuminant::new(mean).map_err(|_| Error::Estimation(format!("mean of gray pixels {mean:?} is not positive")))
}
