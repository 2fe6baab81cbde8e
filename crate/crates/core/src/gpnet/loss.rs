//! Ground-truth grayness and the relative, histogram-balanced training loss.

use crate::error::{Error, Result};
use crate::imageio::{Illuminant, LinearImage};
use crate::map::{GraynessMap, ScalarMap, EXCLUDED};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    /// Keeps the relative error finite where the smaller value is zero.
    pub delta: f64,
    pub bins: usize,
    /// Grayness (degrees) above which pixels share the last bin.
    pub cap: f64,
    /// Pixels whose absolute error (degrees) is below this contribute nothing.
    pub floor: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            delta: 0.001,
            bins: 100,
            cap: 20.0,
            floor: 0.5,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0) || self.bins == 0 || !(self.floor > 0.0) || !(self.cap > self.floor) {
            return Err(Error::Config(format!("invalid loss config {self:?}")));
        }
        Ok(())
    }

    fn bin(&self, g: f64) -> usize {
        let j = (g / self.cap * self.bins as f64).floor();
        if j >= self.bins as f64 {
            self.bins - 1
        } else {
            j.max(0.0) as usize
        }
    }
}

/// Angle in degrees between a pixel and the illuminant; black pixels are excluded.
/// Values are not capped; the cap only affects binning.
pub fn gt_grayness(img: &LinearImage, gt: &Illuminant) -> GraynessMap {
    let e = gt.rgb();
    let data = img
        .pixels()
        .iter()
        .map(|p| {
            if p.iter().all(|&v| v == 0.0) {
                return EXCLUDED;
            }
            // atan2 of |p x e| and p . e stays accurate near 0, where acos does not
            let cross = [
                p[1] * e[2] - p[2] * e[1],
                p[2] * e[0] - p[0] * e[2],
                p[0] * e[1] - p[1] * e[0],
            ];
            let sin = (cross[0] * cross[0] + cross[1] * cross[1] + cross[2] * cross[2]).sqrt();
            let cos = p[0] * e[0] + p[1] * e[1] + p[2] * e[2];
            sin.atan2(cos).to_degrees()
        })
        .collect();
    GraynessMap(ScalarMap::new(img.width(), img.height(), data).expect("dims"))
}

/// Per-pixel loss term and its derivative with respect to the prediction.
fn pixel_term(o: f64, g: f64, cfg: &LossConfig) -> (f64, f64) {
    let diff = (o - g).abs();
    if diff < cfg.floor || o == g {
        return (0.0, 0.0);
    }
    if o < g {
        let den = o * o + cfg.delta;
        let l = (g - o) / den;
        (l, -1.0 / den - (g - o) * 2.0 * o / (den * den))
    } else {
        let den = g * g + cfg.delta;
        (diff / den, 1.0 / den)
    }
}

/// Sum over non-empty grayness bins of the mean per-pixel relative error,
/// with its gradient with respect to `pred`. Pixels excluded in `gt` or with
/// a non-finite prediction are skipped.
pub fn binned_loss(pred: &GraynessMap, gt: &GraynessMap, cfg: &LossConfig) -> Result<(f64, ScalarMap)> {
    if !pred.0.same_dims(&gt.0) {
        return Err(Error::Structural("prediction and ground truth differ in size".into()));
    }
    let mut counts = vec![0usize; cfg.bins];
    let mut sums = vec![0.0; cfg.bins];
    let mut terms = Vec::with_capacity(gt.values().len());
    for (i, (&o, &g)) in pred.values().iter().zip(gt.values()).enumerate() {
        if !g.is_finite() || !o.is_finite() {
            continue;
        }
        let j = cfg.bin(g);
        let (l, d) = pixel_term(o, g, cfg);
        counts[j] += 1;
        sums[j] += l;
        terms.push((i, j, d));
    }
    if terms.is_empty() {
        return Err(Error::Loss("no valid pixels"));
    }
    let loss = sums
        .iter()
        .zip(&counts)
        .filter(|(_, &n)| n > 0)
        .map(|(s, &n)| s / n as f64)
        .sum();
    let mut grad = ScalarMap::zeros(pred.width(), pred.height());
    for (i, j, d) in terms {
        grad.data_mut()[i] = d / counts[j] as f64;
    }
    Ok((loss, grad))
}
