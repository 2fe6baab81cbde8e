//! Network inputs: intensity, log opponent differences and log center-surround
//! measures, plus the raw-RGB inputs used by the ablation.

use crate::imageio::{LinearImage, Mask};
use crate::error::{Error, Result};
use crate::filter;
use crate::map::ScalarMap;
use crate::opponent::{self, B, G, R, Y};

use super::conv::Planes;

/// Gaussian scale of the center-surround feature.
pub const FEATURE_SIGMA: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputMode {
    /// `f1`, `f2`, `f3` feed the three pathways.
    Constrained,
    /// Each pathway sees the RGB image itself.
    Raw,
}

impl InputMode {
    pub fn in_channels(&self) -> [usize; 3] {
        match self {
            InputMode::Constrained => [1, 2, 4],
            InputMode::Raw => [3, 3, 3],
        }
    }
}

/// Inputs of the three pathways.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStack {
    pub blocks: [Planes; 3],
}

impl FeatureStack {
    pub fn width(&self) -> usize {
        self.blocks[0].width
    }

    pub fn height(&self) -> usize {
        self.blocks[0].height
    }

    /// Intensity `r + g + b` over the white level.
    pub fn f1(&self) -> &Planes {
        &self.blocks[0]
    }

    /// `(log r - log g, log b - log y)`, each centered on its image mean.
    pub fn f2(&self) -> &Planes {
        &self.blocks[1]
    }

    /// `log I^i - G_5 * log I^i` for `i` in `r, g, b, y`.
    pub fn f3(&self) -> &Planes {
        &self.blocks[2]
    }

    pub fn flip_horizontal(&self) -> FeatureStack {
        FeatureStack {
            blocks: self.blocks.clone().map(|b| {
                let maps: Vec<ScalarMap> = (0..b.channels).map(|c| b.to_map(c).flip_horizontal()).collect();
                Planes::from_maps(&maps)
            }),
        }
    }
}

fn centered(m: ScalarMap) -> ScalarMap {
    let mean = m.data().iter().sum::<f64>() / m.len() as f64;
    m.map(|v| v - mean)
}

pub fn build_features(img: &LinearImage) -> FeatureStack {
    let wl = img.white_level();
    let f1 = ScalarMap::new(
        img.width(),
        img.height(),
        img.pixels().iter().map(|p| (p[0] + p[1] + p[2]) / wl).collect(),
    )
    .expect("dims");
    let log_img = opponent::log_transform(img);
    let [lr, lg, lb, ly] = &log_img.planes;
    let rg = centered(lr.zip_with(lg, |a, b| a - b));
    let by = centered(lb.zip_with(ly, |a, b| a - b));
    let f3: Vec<ScalarMap> = [R, G, B, Y]
        .iter()
        .map(|&c| filter::center_surround(&log_img.planes[c], FEATURE_SIGMA))
        .collect();
    FeatureStack {
        blocks: [Planes::from_maps(&[f1]), Planes::from_maps(&[rg, by]), Planes::from_maps(&f3)],
    }
}

/// The image itself, over the white level, replicated for every pathway.
pub fn raw_features(img: &LinearImage) -> FeatureStack {
    let wl = img.white_level();
    let rgb: Vec<ScalarMap> = (0..3).map(|c| img.channel(c).map(|v| v / wl)).collect();
    let p = Planes::from_maps(&rgb);
    FeatureStack {
        blocks: [p.clone(), p.clone(), p],
    }
}

pub fn features_for(img: &LinearImage, mode: InputMode) -> FeatureStack {
    match mode {
        InputMode::Constrained => build_features(img),
        InputMode::Raw => raw_features(img),
    }
}

/// Divide every channel by its mean over the valid pixels (white level 1).
///
/// The network sees balanced images so its grayness map, and therefore the
/// selected pixel set, does not depend on global per-channel gains.
pub fn balance(img: &LinearImage, mask: Option<&Mask>) -> Result<LinearImage> {
    let means = img.channel_means(mask);
    if means.iter().any(|m| !(*m > 0.0)) {
        return Err(Error::Estimation(format!("channel means {means:?} are not positive")));
    }
    Ok(img.gain_normalized(mask))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scene(x: usize, y: usize) -> [f64; 3] {
        let t = 0.2 + 0.1 * (((x * 5 + y * 3) % 7) as f64) / 7.0;
        if (x / 8 + y / 8) % 2 == 0 {
            [t, 0.5 * t, 0.3 * t]
        } else {
            [0.4 * t, t, 0.6 * t]
        }
    }

    #[test]
    fn constant_gray_image() {
        let img = LinearImage::from_fn(20, 18, 2.0, |_, _| [0.5, 0.5, 0.5]);
        let f = build_features(&img);
        assert!(f.f1().data.iter().all(|&v| (v - 0.75).abs() < 1e-15));
        assert!(f.f2().data.iter().all(|&v| v == 0.0));
        assert!(f.f3().data.iter().all(|&v| v == 0.0));
        assert_eq!((f.f1().channels, f.f2().channels, f.f3().channels), (1, 2, 4));
    }

    #[test]
    fn gains_leave_f2_f3_unchanged() {
        let img = LinearImage::from_fn(24, 20, 1.0, scene);
        let a = build_features(&img);
        let same = |p: &[f64], q: &[f64]| p.iter().zip(q).all(|(x, y)| (x - y).abs() <= 1e-9);
        // planes built from r, g, b alone ignore any gains
        let c = [1.7, 0.6, 1.2];
        let b = build_features(&img.scaled(c));
        assert!(same(a.f2().plane(0), b.f2().plane(0)));
        for ch in [R, G, B] {
            assert!(same(a.f3().plane(ch), b.f3().plane(ch)));
        }
        // the yellow planes need equal red and green gains, since y mixes them linearly
        assert!(!same(a.f2().plane(1), b.f2().plane(1)));
        let d = build_features(&img.scaled([0.8, 0.8, 1.9]));
        assert!(same(&a.f2().data, &d.f2().data) && same(&a.f3().data, &d.f3().data));
        // after balancing, every plane ignores arbitrary gains
        let ba = build_features(&balance(&img, None).unwrap());
        let bb = build_features(&balance(&img.scaled(c), None).unwrap());
        for k in 0..3 {
            assert!(same(&ba.blocks[k].data, &bb.blocks[k].data));
        }
        // f1 is the plain channel sum and does change
        let i = 5 * 24 + 3;
        let p = img.pixel(3, 5);
        assert!((b.f1().data[i] - (c[0] * p[0] + c[1] * p[1] + c[2] * p[2])).abs() < 1e-15);
        assert!((a.f1().data[i] - b.f1().data[i]).abs() > 1e-3);
    }

    #[test]
    fn f3_matches_direct_convolution() {
        let img = LinearImage::from_fn(17, 16, 1.0, |x, y| if (x + y) % 2 == 0 { [0.8, 0.2, 0.3] } else { [0.1, 0.4, 0.9] });
        let f = build_features(&img);
        let sigma = FEATURE_SIGMA;
        let r = 15isize;
        let mut z = 0.0;
        for dy in -r..=r {
            for dx in -r..=r {
                z += (-((dx * dx + dy * dy) as f64) / (2.0 * sigma * sigma)).exp();
            }
        }
        let logs = |x: usize, y: usize| {
            let p = img.pixel(x, y);
            [p[0].ln(), p[1].ln(), p[2].ln(), (0.5 * (p[0] + p[1])).ln()]
        };
        for &(x, y) in &[(0usize, 0usize), (8, 7), (16, 15), (3, 12)] {
            for c in 0..4 {
                let mut blur = 0.0;
                for dy in -r..=r {
                    for dx in -r..=r {
                        let wgt = (-((dx * dx + dy * dy) as f64) / (2.0 * sigma * sigma)).exp() / z;
                        let sx = filter::reflect(x as isize + dx, 17);
                        let sy = filter::reflect(y as isize + dy, 16);
                        blur += wgt * logs(sx, sy)[c];
                    }
                }
                let expect = logs(x, y)[c] - blur;
                assert!((f.f3().plane(c)[y * 17 + x] - expect).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn balanced_image_ignores_gains() {
        let img = LinearImage::from_fn(16, 16, 1.0, scene);
        let a = balance(&img, None).unwrap();
        let b = balance(&img.scaled([3.0, 0.2, 0.9]), None).unwrap();
        for (p, q) in a.pixels().iter().zip(b.pixels()) {
            for c in 0..3 {
                assert!((p[c] - q[c]).abs() < 1e-13);
            }
        }
        assert_eq!(raw_features(&img).blocks[2].channels, 3);
    }
}
