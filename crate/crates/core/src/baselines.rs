//! Statistics-based estimators in the Minkowski-norm family: Gray-World,
//! White-Patch, Shades-of-Gray, General Gray-World and Gray-Edge.

use crate::error::{Error, Result};
use crate::filter;
use crate::imageio::{Illuminant, LinearImage, Mask};
use crate::map::ScalarMap;

/// Minkowski norm exponent; `Infinity` takes the maximum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Norm {
    P(f64),
    Infinity,
}

/// `e_i = (mean |D^n (G_σ * I^i)|^p)^(1/p)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MinkowskiSpec {
    pub derivative_order: u8,
    pub norm: Norm,
    pub sigma: f64,
}

impl MinkowskiSpec {
    pub fn new(derivative_order: u8, norm: Norm, sigma: f64) -> Result<Self> {
        if derivative_order > 2 {
            return Err(Error::Config(format!("derivative order {derivative_order} not in 0..=2")));
        }
        if let Norm::P(p) = norm {
            if !(p >= 1.0 && p.is_finite()) {
                return Err(Error::Config(format!("Minkowski p = {p} must be >= 1")));
            }
        }
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(Error::Config(format!("sigma = {sigma} must be >= 0")));
        }
        Ok(Self {
            derivative_order,
            norm,
            sigma,
        })
    }

    pub fn gray_world() -> Self {
        Self::new(0, Norm::P(1.0), 0.0).unwrap()
    }

    pub fn white_patch() -> Self {
        Self::new(0, Norm::Infinity, 0.0).unwrap()
    }

    pub fn shades_of_gray() -> Self {
        Self::new(0, Norm::P(6.0), 0.0).unwrap()
    }

    pub fn general_gray_world(p: f64, sigma: f64) -> Result<Self> {
        Self::new(0, Norm::P(p), sigma)
    }

    pub fn gray_edge1(p: f64, sigma: f64) -> Result<Self> {
        Self::new(1, Norm::P(p), sigma)
    }

    pub fn gray_edge2(p: f64, sigma: f64) -> Result<Self> {
        Self::new(2, Norm::P(p), sigma)
    }
}

fn channel_response(plane: &ScalarMap, spec: &MinkowskiSpec) -> ScalarMap {
    let smoothed = filter::gaussian_blur(plane, spec.sigma);
    match spec.derivative_order {
        0 => smoothed,
        1 => filter::gradient_magnitude(&smoothed),
        _ => filter::laplacian(&smoothed).map(f64::abs),
    }
}

/// Minkowski norm of the valid pixels of one response plane.
fn minkowski(values: impl Iterator<Item = f64> + Clone, norm: Norm) -> f64 {
    let peak = values.clone().fold(0.0f64, |m, v| m.max(v.abs()));
    match norm {
        Norm::Infinity => peak,
        Norm::P(p) => {
            if peak == 0.0 {
                return 0.0;
            }
            // scale by the peak so large p cannot overflow
            let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + (v.abs() / peak).powf(p), n + 1));
            peak * (sum / n as f64).powf(1.0 / p)
        }
    }
}

pub fn minkowski_estimate(img: &LinearImage, spec: &MinkowskiSpec, mask: &Mask) -> Result<Illuminant> {
    if !mask.matches(img) {
        return Err(Error::Structural("mask does not match image".into()));
    }
    if mask.count() == 0 {
        return Err(Error::Estimation("mask has no valid pixels".into()));
    }
    let mut e = [0.0; 3];
    for (c, out) in e.iter_mut().enumerate() {
        let resp = channel_response(&img.channel(c), spec);
        let valid = resp
            .data()
            .iter()
            .zip(&mask.valid)
            .filter(|(_, &ok)| ok)
            .map(|(&v, _)| v);
        *out = minkowski(valid, spec.norm);
    }
    Illuminant::new(e).map_err(|_| Error::Estimation(format!("channel statistics {e:?} are not all positive")))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn noise(i: usize) -> f64 {
        let h = (i as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
        let h = (h ^ (h >> 31)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        ((h >> 11) as f64) / (1u64 << 53) as f64
    }

    fn close(a: [f64; 3], b: [f64; 3], tol: f64) -> bool {
        a.iter().zip(&b).all(|(x, y)| (x - y).abs() < tol)
    }

    #[test]
    fn gray_world_definition() {
        // channel means (2, 1, 1)
        let img = LinearImage::from_fn(16, 16, 8.0, |x, _| if x % 2 == 0 { [1.0, 0.5, 1.5] } else { [3.0, 1.5, 0.5] });
        let e = minkowski_estimate(&img, &MinkowskiSpec::gray_world(), &Mask::for_image(&img)).unwrap();
        let s6 = 6f64.sqrt();
        assert!(close(e.rgb(), [2.0 / s6, 1.0 / s6, 1.0 / s6], 1e-15));
    }

    #[test]
    fn white_patch_definition() {
        let img = LinearImage::from_fn(16, 16, 8.0, |x, y| match (x, y) {
            (3, 3) => [1.0, 0.1, 0.1],
            (5, 9) => [0.1, 2.0, 0.1],
            (7, 2) => [0.1, 0.1, 4.0],
            _ => [0.2, 0.2, 0.2],
        });
        let e = minkowski_estimate(&img, &MinkowskiSpec::white_patch(), &Mask::for_image(&img)).unwrap();
        let n = 21f64.sqrt();
        assert!(close(e.rgb(), [1.0 / n, 2.0 / n, 4.0 / n], 1e-15));
    }

    #[test]
    fn shades_of_gray_brute_force() {
        let img = LinearImage::from_fn(8, 8, 1.0, |x, y| {
            let i = 3 * (y * 8 + x);
            [noise(i), noise(i + 1) * 0.5, noise(i + 2) * 0.8]
        });
        let e = minkowski_estimate(&img, &MinkowskiSpec::shades_of_gray(), &Mask::for_image(&img)).unwrap();
        let mut raw = [0.0; 3];
        for c in 0..3 {
            let mut s = 0.0;
            for p in img.pixels() {
                s += p[c].powi(6);
            }
            raw[c] = (s / 64.0).powf(1.0 / 6.0);
        }
        let n = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(close(e.rgb(), raw.map(|v| v / n), 1e-9));
    }

    #[test]
    fn mask_restricts_pixels() {
        let img = LinearImage::from_fn(16, 16, 8.0, |x, _| if x < 8 { [1.0, 1.0, 1.0] } else { [5.0, 1.0, 1.0] });
        let mut mask = Mask::for_image(&img);
        for y in 0..16 {
            for x in 8..16 {
                mask.valid[y * 16 + x] = false;
            }
        }
        let e = minkowski_estimate(&img, &MinkowskiSpec::gray_world(), &mask).unwrap();
        let s3 = 3f64.sqrt().recip();
        assert!(close(e.rgb(), [s3; 3], 1e-15));
        mask.valid.iter_mut().for_each(|v| *v = false);
        assert!(matches!(
            minkowski_estimate(&img, &MinkowskiSpec::gray_world(), &mask),
            Err(Error::Estimation(_))
        ));
    }

    #[test]
    fn edges_ignore_channel_offsets() {
        let img = LinearImage::from_fn(20, 20, 8.0, |x, y| {
            let i = 3 * (y * 20 + x);
            [noise(i) + 0.1, noise(i + 1) * 0.5 + 0.1, noise(i + 2) + 0.2]
        });
        let shifted = LinearImage::from_fn(20, 20, 8.0, |x, y| {
            let p = img.pixel(x, y);
            [p[0] + 0.7, p[1] + 0.1, p[2] + 2.0]
        });
        let mask = Mask::for_image(&img);
        for spec in [MinkowskiSpec::gray_edge1(1.0, 1.0).unwrap(), MinkowskiSpec::gray_edge2(2.0, 1.0).unwrap()] {
            let a = minkowski_estimate(&img, &spec, &mask).unwrap();
            let b = minkowski_estimate(&shifted, &spec, &mask).unwrap();
            assert!(close(a.rgb(), b.rgb(), 1e-9));
        }
    }

    #[test]
    fn flat_channel_is_an_estimation_error() {
        let img = LinearImage::from_fn(16, 16, 8.0, |x, _| [x as f64, x as f64, 1.0]);
        let r = minkowski_estimate(&img, &MinkowskiSpec::gray_edge1(1.0, 0.0).unwrap(), &Mask::for_image(&img));
        assert!(matches!(r, Err(Error::Estimation(_))));
    }

    #[test]
    fn spec_validation() {
        assert!(MinkowskiSpec::new(3, Norm::P(1.0), 0.0).is_err());
        assert!(MinkowskiSpec::new(0, Norm::P(0.5), 0.0).is_err());
        assert!(MinkowskiSpec::new(0, Norm::P(2.0), -1.0).is_err());
    }
}
