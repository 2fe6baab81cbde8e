//! Lambertian test scenes `I = R · C` with known illuminant, gray mask and reflectance.
//!
//! A scene is a grid of flat-colored patches. Every patch carries a
//! multiplicative texture shared by its three channels; chromatic patches get
//! an additional independent texture per channel, so only gray patches keep
//! equal log-contrast in all channels.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::imageio::{self, Dataset, DatasetEntry, Illuminant, LinearImage};

/// Spatial layout of the illumination.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Field {
    Uniform,
    /// Horizontal ramp: red rises and blue falls by `strength` (relative) from
    /// the left edge to the right edge, green stays constant. The image mean
    /// equals the nominal illuminant.
    Smooth { strength: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub width: usize,
    pub height: usize,
    pub rows: usize,
    pub cols: usize,
    /// One reflectance per patch, row-major; gray patches have equal components.
    pub reflectances: Vec<[f64; 3]>,
    /// Multiplicative texture amplitude `a`: factors are drawn from `[1 - a, 1 + a]`.
    pub texture: f64,
    pub illuminant: Illuminant,
    pub field: Field,
    /// Standard deviation of additive Gaussian noise, relative to the image maximum.
    pub noise_std: f64,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.rows == 0 || self.cols == 0 || self.width < self.cols || self.height < self.rows {
            return bad(format!(
                "{}x{} grid does not fit a {}x{} image",
                self.rows, self.cols, self.width, self.height
            ));
        }
        if self.reflectances.len() != self.rows * self.cols {
            return bad(format!("{} reflectances for {} patches", self.reflectances.len(), self.rows * self.cols));
        }
        if self.reflectances.iter().flatten().any(|&r| !(r > 0.0 && r <= 1.0)) {
            return bad("reflectances must lie in (0, 1]".into());
        }
        if !(0.0..0.5).contains(&self.texture) {
            return bad(format!("texture amplitude {} not in [0, 0.5)", self.texture));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return bad("noise must be non-negative".into());
        }
        if let Field::Smooth { strength } = self.field {
            if !(0.0..2.0).contains(&strength) {
                return bad(format!("ramp strength {strength} would make the illumination non-positive"));
            }
        }
        Ok(())
    }

    pub fn patch_of(&self, x: usize, y: usize) -> usize {
        let r = y * self.rows / self.height;
        let c = x * self.cols / self.width;
        r * self.cols + c
    }

    pub fn is_gray_patch(&self, p: usize) -> bool {
        let r = self.reflectances[p];
        r[0] == r[1] && r[1] == r[2]
    }

    /// Illumination at a pixel.
    pub fn illumination(&self, x: usize, _y: usize) -> [f64; 3] {
        let e = self.illuminant.rgb();
        match self.field {
            Field::Uniform => e,
            Field::Smooth { strength } => {
                let u = if self.width > 1 {
                    x as f64 / (self.width - 1) as f64 - 0.5
                } else {
                    0.0
                };
                [e[0] * (1.0 + strength * u), e[1], e[2] * (1.0 - strength * u)]
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneTruth {
    /// Mean illumination over the image, normalized.
    pub gt: Illuminant,
    /// Pixels on gray patches.
    pub gray_mask: Vec<bool>,
    /// Per-pixel reflectance including texture.
    pub reflectance: Vec<[f64; 3]>,
}

impl SceneTruth {
    pub fn gray_area_fraction(&self) -> f64 {
        self.gray_mask.iter().filter(|&&g| g).count() as f64 / self.gray_mask.len() as f64
    }
}

fn texture_factor(rng: &mut impl Rng, a: f64) -> f64 {
    if a == 0.0 {
        1.0
    } else {
        1.0 + rng.random_range(-a..=a)
    }
}

/// Renders a scene. The white level is set so the brightest sample sits at
/// 0.9 of it.
pub fn make_scene(spec: &SceneSpec, seed: u64) -> Result<(LinearImage, SceneTruth)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = (spec.width, spec.height);
    let mut reflectance = Vec::with_capacity(w * h);
    let mut gray_mask = Vec::with_capacity(w * h);
    let mut pixels = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let p = spec.patch_of(x, y);
            let gray = spec.is_gray_patch(p);
            let shared = texture_factor(&mut rng, spec.texture);
            let rho = spec.reflectances[p];
            let r: [f64; 3] = if gray {
                rho.map(|v| v * shared)
            } else {
                std::array::from_fn(|c| rho[c] * shared * texture_factor(&mut rng, spec.texture))
            };
            let c = spec.illumination(x, y);
            reflectance.push(r);
            gray_mask.push(gray);
            pixels.push([r[0] * c[0], r[1] * c[1], r[2] * c[2]]);
        }
    }
    let peak = pixels.iter().flatten().fold(0.0f64, |m, &v| m.max(v));
    if spec.noise_std > 0.0 {
        let normal = Normal::new(0.0, spec.noise_std * peak).expect("finite noise");
        for v in pixels.iter_mut().flatten() {
            *v = (*v + normal.sample(&mut rng)).max(0.0);
        }
    }
    let peak = pixels.iter().flatten().fold(0.0f64, |m, &v| m.max(v));
    if !(peak > 0.0) {
        return Err(Error::Input("scene renders to black".into()));
    }
    let img = LinearImage::new(w, h, pixels, peak / 0.9)?;
    let mut mean = [0.0; 3];
    for y in 0..h {
        for x in 0..w {
            let c = spec.illumination(x, y);
            (0..3).for_each(|i| mean[i] += c[i]);
        }
    }
    let gt = Illuminant::new(mean)?;
    Ok((
        img,
        SceneTruth {
            gt,
            gray_mask,
            reflectance,
        },
    ))
}

/// Illuminant chromaticity `(r, g, b)` with `r, g` uniform in `[0.2, 0.5]`
/// and `b = 1 - r - g >= 0.05`, normalized to unit length.
pub fn sample_illuminant(rng: &mut impl Rng) -> Illuminant {
    loop {
        let r = rng.random_range(0.2..=0.5);
        let g = rng.random_range(0.2..=0.5);
        let b = 1.0 - r - g;
        if b >= 0.05 {
            return Illuminant::new([r, g, b]).expect("positive chromaticity");
        }
    }
}

/// Parameters from which random scenes are drawn.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneDistribution {
    pub width: usize,
    pub height: usize,
    pub rows: usize,
    pub cols: usize,
    /// Fraction of patches that are gray; at least one when positive.
    pub gray_fraction: f64,
    pub texture: f64,
    pub field: Field,
    pub noise_std: f64,
}

impl Default for SceneDistribution {
    fn default() -> Self {
        Self {
            width: 160,
            height: 160,
            rows: 4,
            cols: 4,
            gray_fraction: 0.125,
            texture: 0.05,
            field: Field::Uniform,
            noise_std: 0.0,
        }
    }
}

/// Chromatic reflectance whose largest component exceeds the smallest by at least 30%.
fn chromatic_reflectance(rng: &mut impl Rng) -> [f64; 3] {
    loop {
        let r: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.1..=0.9));
        let (lo, hi) = r.iter().fold((f64::MAX, 0.0f64), |(l, h), &v| (l.min(v), h.max(v)));
        if hi >= 1.3 * lo {
            return r;
        }
    }
}

impl SceneDistribution {
    pub fn sample(&self, rng: &mut impl Rng) -> SceneSpec {
        let n = self.rows * self.cols;
        let n_gray = if self.gray_fraction > 0.0 {
            ((self.gray_fraction * n as f64).round() as usize).clamp(1, n)
        } else {
            0
        };
        let mut order: Vec<usize> = (0..n).collect();
        rand::seq::SliceRandom::shuffle(order.as_mut_slice(), rng);
        let mut reflectances = vec![[0.0; 3]; n];
        for (rank, &p) in order.iter().enumerate() {
            reflectances[p] = if rank < n_gray {
                [rng.random_range(0.3..=0.9); 3]
            } else {
                chromatic_reflectance(rng)
            };
        }
        SceneSpec {
            width: self.width,
            height: self.height,
            rows: self.rows,
            cols: self.cols,
            reflectances,
            texture: self.texture,
            illuminant: sample_illuminant(rng),
            field: self.field,
            noise_std: self.noise_std,
        }
    }
}

fn scene_rng(seed: u64, i: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(i as u64);
    rng
}

/// `n` random scenes, each with its spec; scene `i` depends only on `seed` and `i`.
pub fn make_scenes(n: usize, dist: &SceneDistribution, seed: u64) -> Result<Vec<(SceneSpec, LinearImage, SceneTruth)>> {
    (0..n)
        .map(|i| {
            let mut rng = scene_rng(seed, i);
            let spec = dist.sample(&mut rng);
            let (img, truth) = make_scene(&spec, rng.random())?;
            Ok((spec, img, truth))
        })
        .collect()
}

/// Writes `scene_NNNN.png` files and `manifest.csv` into `dir`.
pub fn make_dataset(n: usize, dist: &SceneDistribution, seed: u64, dir: &Path) -> Result<Dataset> {
    std::fs::create_dir_all(dir)?;
    let mut entries = Vec::with_capacity(n);
    for (i, (_, img, truth)) in make_scenes(n, dist, seed)?.into_iter().enumerate() {
        let name = format!("scene_{i:04}.png");
        imageio::save_png16(&img, dir.join(&name))?;
        entries.push(DatasetEntry {
            image_path: name,
            gt: truth.gt,
            polygons: Vec::new(),
        });
    }
    let data = Dataset {
        name: "manifest".into(),
        root: dir.to_path_buf(),
        entries,
    };
    imageio::save_manifest(&data, dir.join("manifest.csv"))?;
    Ok(data)
}
