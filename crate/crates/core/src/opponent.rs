//! Log transform, spatial single-opponent (local difference) operators,
//! color single-opponent differences and their double-opponent compositions.

use crate::filter;
use crate::imageio::LinearImage;
use crate::map::{GraynessMap, ScalarMap};

/// Clamp floor for the log transform, relative to the white level.
pub const LOG_EPS: f64 = 1e-5;

pub const R: usize = 0;
pub const G: usize = 1;
pub const B: usize = 2;
/// Yellow, `0.5 (r + g)`.
pub const Y: usize = 3;

/// Natural-log planes `(log r, log g, log b, log y)` of a clamped linear image.
#[derive(Debug, Clone, PartialEq)]
pub struct LogImage {
    pub planes: [ScalarMap; 4],
}

impl LogImage {
    pub fn width(&self) -> usize {
        self.planes[0].width()
    }

    pub fn height(&self) -> usize {
        self.planes[0].height()
    }
}

/// Local difference operator Δ{·}.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LocalOpKind {
    /// `m - G_σ * m`.
    CenterSurround { sigma: f64 },
    GradientMagnitude,
    LocalStd { window: usize },
}

impl LocalOpKind {
    /// True when Δ is linear, so it commutes with channel differences.
    pub fn is_linear(&self) -> bool {
        matches!(self, LocalOpKind::CenterSurround { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OpponentVariant {
    /// `rg = log r - log g`, `by = log b - log y`.
    RgBy,
    /// `φ^i = log I^i - log(I^r + I^g + I^b)`.
    VsLuminance,
}

#[derive(Debug, Clone, PartialEq)]
pub enum OpponentPlanes {
    RgBy { rg: ScalarMap, by: ScalarMap },
    VsLuminance { phi: [ScalarMap; 3] },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Order {
    /// Illuminant-invariant measures first, then channel differences.
    SpatialFirst,
    /// Channel differences first, then the local operator.
    ColorFirst,
}

pub fn log_transform(img: &LinearImage) -> LogImage {
    let eps = LOG_EPS * img.white_level();
    let (w, h) = (img.width(), img.height());
    let n = w * h;
    let mut planes: [Vec<f64>; 4] = std::array::from_fn(|_| Vec::with_capacity(n));
    for p in img.pixels() {
        let [r, g, b] = p.map(|v| v.max(eps));
        planes[R].push(r.ln());
        planes[G].push(g.ln());
        planes[B].push(b.ln());
        planes[Y].push((0.5 * (r + g)).ln());
    }
    LogImage {
        planes: planes.map(|d| ScalarMap::new(w, h, d).expect("dims")),
    }
}

pub fn local_op(map: &ScalarMap, kind: LocalOpKind) -> ScalarMap {
    match kind {
        LocalOpKind::CenterSurround { sigma } => filter::center_surround(map, sigma),
        LocalOpKind::GradientMagnitude => filter::gradient_magnitude(map),
        LocalOpKind::LocalStd { window } => filter::local_std(map, window),
    }
}

/// Illuminant-invariant measures: Δ applied to each of the four log planes.
pub fn iim(log_img: &LogImage, kind: LocalOpKind) -> [ScalarMap; 4] {
    std::array::from_fn(|i| local_op(&log_img.planes[i], kind))
}

pub fn color_opponent(log_img: &LogImage, variant: OpponentVariant) -> OpponentPlanes {
    let [lr, lg, lb, ly] = &log_img.planes;
    match variant {
        OpponentVariant::RgBy => OpponentPlanes::RgBy {
            rg: lr.zip_with(lg, |a, b| a - b),
            by: lb.zip_with(ly, |a, b| a - b),
        },
        OpponentVariant::VsLuminance => {
            // log(r + g + b) from the log planes, evaluated stably
            let lum = ScalarMap::from_fn(log_img.width(), log_img.height(), |x, y| {
                let v = [lr.get(x, y), lg.get(x, y), lb.get(x, y)];
                let m = v[0].max(v[1]).max(v[2]);
                m + v.iter().map(|l| (l - m).exp()).sum::<f64>().ln()
            });
            OpponentPlanes::VsLuminance {
                phi: [
                    lr.zip_with(&lum, |a, b| a - b),
                    lg.zip_with(&lum, |a, b| a - b),
                    lb.zip_with(&lum, |a, b| a - b),
                ],
            }
        }
    }
}

fn rss(a: &ScalarMap, b: &ScalarMap) -> ScalarMap {
    a.zip_with(b, |p, q| (p * p + q * q).sqrt())
}

/// R-G and B-Y double-opponent responses combined by root-sum-of-squares.
///
/// The image is gain-normalized first: the yellow channel mixes red and green
/// linearly, so without it the B-Y response would depend on global channel gains.
pub fn double_opponent(img: &LinearImage, order: Order, kind: LocalOpKind) -> GraynessMap {
    let log_img = log_transform(&img.gain_normalized(None));
    let (d_rg, d_by) = match order {
        Order::SpatialFirst => {
            let [ir, ig, ib, iy] = iim(&log_img, kind);
            (ir.zip_with(&ig, |a, b| a - b), ib.zip_with(&iy, |a, b| a - b))
        }
        Order::ColorFirst => match color_opponent(&log_img, OpponentVariant::RgBy) {
            OpponentPlanes::RgBy { rg, by } => (local_op(&rg, kind), local_op(&by, kind)),
            OpponentPlanes::VsLuminance { .. } => unreachable!(),
        },
    };
    GraynessMap(rss(&d_rg, &d_by))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn textured(w: usize, h: usize, f: impl Fn(usize, usize) -> [f64; 3]) -> LinearImage {
        LinearImage::from_fn(w, h, 1.0, f)
    }

    #[test]
    fn constant_image_logs() {
        let img = textured(16, 16, |_, _| [0.3, 0.3, 0.3]);
        let l = log_transform(&img);
        for p in &l.planes {
            assert!(p.data().iter().all(|&v| (v - 0.3f64.ln()).abs() < 1e-15));
        }
    }

    #[test]
    fn clamped_pixel() {
        let img = textured(16, 16, |_, _| [0.0, 1.0, 1.0]);
        let l = log_transform(&img);
        assert!((l.planes[R].get(0, 0) - 1e-5f64.ln()).abs() < 1e-12);
        assert_eq!(l.planes[G].get(0, 0), 0.0);
        assert_eq!(l.planes[B].get(0, 0), 0.0);
        // yellow is built from clamped values: log(0.5 * (1e-5 + 1))
        assert!((l.planes[Y].get(0, 0) - 0.5f64.ln()).abs() < 2e-5);
        assert!((l.planes[Y].get(0, 0) - (0.5 * (1e-5 + 1.0f64)).ln()).abs() < 1e-15);
    }

    #[test]
    fn yellow_plane_consistent() {
        let img = textured(16, 16, |x, y| [x as f64 * 0.05, y as f64 * 0.03 + 0.01, 0.2]);
        let l = log_transform(&img);
        for i in 0..256 {
            let expect = (0.5 * (l.planes[R][i].exp() + l.planes[G][i].exp())).ln();
            assert!((l.planes[Y][i] - expect).abs() < 1e-9);
        }
    }

    #[test]
    fn scaling_shifts_planes() {
        let img = textured(16, 16, |x, y| [0.1 + x as f64 * 0.01, 0.2 + y as f64 * 0.02, 0.3]);
        let k = 1.7;
        let a = log_transform(&img);
        let b = log_transform(&img.scaled([k; 3]));
        for c in 0..4 {
            let d = b.planes[c].zip_with(&a.planes[c], |p, q| p - q - k.ln());
            assert!(d.data().iter().all(|v| v.abs() < 1e-14));
        }
    }

    #[test]
    fn opponent_examples() {
        let gray = textured(16, 16, |_, _| [0.4, 0.4, 0.4]);
        let l = log_transform(&gray);
        let OpponentPlanes::RgBy { rg, by } = color_opponent(&l, OpponentVariant::RgBy) else {
            panic!()
        };
        assert!(rg.data().iter().chain(by.data()).all(|&v| v == 0.0));
        let OpponentPlanes::VsLuminance { phi } = color_opponent(&l, OpponentVariant::VsLuminance)
        else {
            panic!()
        };
        for p in &phi {
            assert!(p.data().iter().all(|&v| (v + 3f64.ln()).abs() < 1e-14));
        }

        let px = textured(16, 16, |_, _| [0.2, 0.1, 0.1]);
        let OpponentPlanes::RgBy { rg, by } = color_opponent(&log_transform(&px), OpponentVariant::RgBy)
        else {
            panic!()
        };
        assert!((rg.get(3, 3) - 2f64.ln()).abs() < 1e-14);
        assert!((by.get(3, 3) + 1.5f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn impulse_center_surround() {
        let mut m = ScalarMap::zeros(21, 21);
        m.set(10, 10, 1.0);
        let out = local_op(&m, LocalOpKind::CenterSurround { sigma: 1.0 });
        // direct 2-D kernel value at the origin
        let mut z = 0.0;
        for dy in -3i32..=3 {
            for dx in -3i32..=3 {
                z += (-((dx * dx + dy * dy) as f64) / 2.0).exp();
            }
        }
        assert!((out.get(10, 10) - (1.0 - 1.0 / z)).abs() < 1e-14);
    }

    #[test]
    fn two_patch_profile_is_antisymmetric() {
        let m = ScalarMap::from_fn(64, 40, |x, _| if x < 32 { 0.0 } else { 1.0 });
        let out = local_op(&m, LocalOpKind::CenterSurround { sigma: 5.0 });
        // 1-D oracle: step minus its Gaussian blur
        let taps = filter::gaussian_kernel(5.0);
        for x in 0..64usize {
            let mut blur = 0.0;
            for (k, t) in taps.iter().enumerate() {
                let sx = filter::reflect(x as isize + k as isize - 15, 64);
                blur += t * if sx < 32 { 0.0 } else { 1.0 };
            }
            let expect = (if x < 32 { 0.0 } else { 1.0 }) - blur;
            assert!((out.get(x, 20) - expect).abs() < 1e-12);
        }
        for d in 0..10 {
            assert!((out.get(31 - d, 20) + out.get(32 + d, 20)).abs() < 1e-12);
        }
        assert!(out.get(5, 20).abs() < 1e-12 && out.get(58, 20).abs() < 1e-12);
    }

    #[test]
    fn gray_scene_has_zero_double_opponency() {
        let img = textured(24, 24, |x, y| {
            let t = 0.3 + 0.2 * (((x * 7 + y * 3) % 5) as f64 / 5.0);
            [2.0 * t / 3.0, t / 3.0, t / 3.0]
        });
        for kind in [
            LocalOpKind::CenterSurround { sigma: 2.0 },
            LocalOpKind::GradientMagnitude,
            LocalOpKind::LocalStd { window: 3 },
        ] {
            for order in [Order::SpatialFirst, Order::ColorFirst] {
                let m = double_opponent(&img, order, kind);
                assert!(m.values().iter().all(|v| v.abs() < 1e-12), "{kind:?} {order:?}");
            }
        }
    }

    #[test]
    fn chromatic_edge_is_positive() {
        let img = textured(32, 32, |x, _| if x < 16 { [0.6, 0.1, 0.1] } else { [0.1, 0.6, 0.1] });
        let cs = double_opponent(&img, Order::SpatialFirst, LocalOpKind::CenterSurround { sigma: 2.0 });
        for x in 12..20 {
            assert!(cs.get(x, 10) > 0.01, "x = {x}");
        }
        // rg jumps by -2 ln 6 between x=15 and x=16; the central difference is ln 6
        let grad = double_opponent(&img, Order::ColorFirst, LocalOpKind::GradientMagnitude);
        assert!((grad.get(15, 10) - 6f64.ln()).abs() < 1e-12);
        assert!((grad.get(16, 10) - 6f64.ln()).abs() < 1e-12);
        assert_eq!(grad.get(5, 10), 0.0);
    }
}
