//! Minibatch training with Adam, a sin² warm-up/cool-down schedule and
//! crop / resize / flip / channel-gain augmentation.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::imageio::{self, Dataset, Illuminant, LinearImage, Mask};

use super::features::{balance, features_for, FeatureStack};
use super::loss::{binned_loss, gt_grayness, LossConfig};
use super::net::{backward_with_cache, forward_with_cache, Arch, NetParams, ParamGrads};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub arch: Arch,
    pub lr0: f64,
    pub lr_peak: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Crop side as a fraction of the shorter image side.
    pub crop_range: (f64, f64),
    /// Side of the square training patch after resizing.
    pub resize: usize,
    pub flip_prob: f64,
    /// Range of the three independent per-channel gains.
    pub gain_range: (f64, f64),
    /// Pixels kept at estimation time, at the reference resolution.
    pub top_k: usize,
    pub black_level: f64,
    pub dark_frac: f64,
    pub sat_frac: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            arch: Arch::default(),
            lr0: 1e-4,
            lr_peak: 1e-3,
            epochs: 100,
            batch_size: 16,
            crop_range: (0.1, 1.0),
            resize: 256,
            flip_prob: 0.5,
            gain_range: (0.6, 1.4),
            top_k: 5000,
            black_level: 0.0,
            dark_frac: imageio::DEFAULT_DARK_FRAC,
            sat_frac: imageio::DEFAULT_SAT_FRAC,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let (c0, c1) = self.crop_range;
        let (g0, g1) = self.gain_range;
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(c0 > 0.0 && c0 <= c1 && c1 <= 1.0) {
            return bad("crop range must lie in (0, 1]");
        }
        if !(g0 > 0.0 && g0 <= g1 && g1.is_finite()) {
            return bad("gain range must be positive");
        }
        if self.epochs == 0 || self.batch_size == 0 || self.resize < 2 {
            return bad("epochs, batch size and resize must be positive");
        }
        if !(self.lr0 > 0.0 && self.lr_peak > 0.0 && self.lr_peak.is_finite()) {
            return bad("learning rates must be positive");
        }
        if !(0.0..=1.0).contains(&self.flip_prob) {
            return bad("flip probability must lie in [0, 1]");
        }
        Ok(())
    }

    /// `lr0 + (lr_peak - lr0) sin²(π t / T)`.
    pub fn learning_rate(&self, step: usize, total: usize) -> f64 {
        let s = (std::f64::consts::PI * step as f64 / total.max(1) as f64).sin();
        self.lr0 + (self.lr_peak - self.lr0) * s * s
    }
}

/// One training image with its illuminant and validity mask.
#[derive(Debug, Clone)]
pub struct TrainSample {
    pub image: LinearImage,
    pub gt: Illuminant,
    pub mask: Mask,
}

impl TrainSample {
    pub fn new(image: LinearImage, gt: Illuminant) -> Self {
        let mask = Mask::for_image(&image);
        Self { image, gt, mask }
    }
}

pub fn load_samples(data: &Dataset, cfg: &TrainConfig) -> Result<Vec<TrainSample>> {
    data.entries
        .iter()
        .map(|e| {
            let image = imageio::load_image(data.resolve(e), cfg.black_level)?;
            let mask = imageio::valid_mask(&image, &e.polygons, cfg.dark_frac, cfg.sat_frac)?;
            Ok(TrainSample { image, gt: e.gt, mask })
        })
        .collect()
}

/// Network input and per-pixel target for one augmented sample.
pub struct Prepared {
    pub feats: FeatureStack,
    pub target: crate::map::GraynessMap,
}

/// Features and target of a (possibly augmented) sample. The image is
/// balanced by its channel means first, and the target is measured against
/// the illuminant expressed in the balanced space.
pub fn prepare(sample: &TrainSample, arch: &Arch) -> Result<Prepared> {
    let means = sample.image.channel_means(Some(&sample.mask));
    let balanced = balance(&sample.image, Some(&sample.mask))?;
    let gt = sample.gt.scaled(means.map(|m| 1.0 / m))?;
    let mut target = gt_grayness(&balanced, &gt);
    target.exclude_where(&sample.mask.valid);
    Ok(Prepared {
        feats: features_for(&balanced, arch.mode),
        target,
    })
}

/// Random square crop, bilinear resize, horizontal flip and channel gains.
pub fn augment(sample: &TrainSample, cfg: &TrainConfig, rng: &mut impl Rng) -> Result<TrainSample> {
    let img = &sample.image;
    let short = img.width().min(img.height());
    let frac = rng.random_range(cfg.crop_range.0..=cfg.crop_range.1);
    let side = ((frac * short as f64).round() as usize).clamp(1, short);
    let x0 = rng.random_range(0..=img.width() - side);
    let y0 = rng.random_range(0..=img.height() - side);
    let mut image = img.crop(x0, y0, side, side).resize_bilinear(cfg.resize, cfg.resize);
    let mut mask = sample.mask.crop(x0, y0, side, side).resize_nearest(cfg.resize, cfg.resize);
    if rng.random_bool(cfg.flip_prob) {
        image = image.flip_horizontal();
        mask = mask.flip_horizontal();
    }
    let gains: [f64; 3] = std::array::from_fn(|_| rng.random_range(cfg.gain_range.0..=cfg.gain_range.1));
    Ok(TrainSample {
        image: image.scaled(gains),
        gt: sample.gt.scaled(gains)?,
        mask,
    })
}

/// Loss and gradients of one prepared sample; `None` when it has no valid target pixels.
pub fn sample_gradients(params: &NetParams, p: &Prepared, loss_cfg: &LossConfig) -> Result<Option<(f64, ParamGrads)>> {
    let (pred, cache) = forward_with_cache(params, &p.feats)?;
    let (loss, upstream) = match binned_loss(&pred, &p.target, loss_cfg) {
        Ok(v) => v,
        Err(Error::Loss(_)) => return Ok(None),
        Err(e) => return Err(e),
    };
    let grads = backward_with_cache(params, &cache, &upstream)?;
    Ok(Some((loss, grads)))
}

pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: NetParams,
    v: NetParams,
    t: i32,
}

impl Adam {
    pub fn new(params: &NetParams) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: params.zeros_like(),
            v: params.zeros_like(),
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut NetParams, grads: &ParamGrads, lr: f64) {
        self.t += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.t);
        let c2 = 1.0 - b2.powi(self.t);
        let ms = self.m.tensors_mut();
        let vs = self.v.tensors_mut();
        for (((p, g), m), v) in params.tensors_mut().into_iter().zip(grads.tensors()).zip(ms).zip(vs) {
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                p[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + self.eps);
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: NetParams,
    /// Mean per-sample loss of every epoch.
    pub epoch_losses: Vec<f64>,
}

fn sample_rng(seed: u64, epoch: usize, position: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((epoch as u64) << 32) | position as u64);
    rng
}

/// Trains from `init` (He initialization from `seed` when absent).
///
/// Every random draw comes from a stream keyed by seed, epoch and position,
/// and batch gradients are summed in sample order, so results do not depend
/// on the thread count.
pub fn train_samples(
    samples: &[TrainSample],
    cfg: &TrainConfig,
    loss_cfg: &LossConfig,
    seed: u64,
    init: Option<NetParams>,
    mut on_epoch: impl FnMut(usize, f64),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    loss_cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::Input("training set is empty".into()));
    }
    let mut params = match init {
        Some(p) => {
            if p.arch != cfg.arch {
                return Err(Error::Config("initial parameters do not match the configured architecture".into()));
            }
            p
        }
        None => NetParams::init(cfg.arch, &mut sample_rng(seed, usize::MAX >> 32, 0)),
    };
    let mut adam = Adam::new(&params);
    let batches_per_epoch = samples.len().div_ceil(cfg.batch_size);
    let total = cfg.epochs * batches_per_epoch;
    let mut step = 0;
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..samples.len()).collect();
        order.shuffle(&mut sample_rng(seed, epoch, usize::MAX >> 32));
        let (mut loss_sum, mut loss_n) = (0.0, 0usize);
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let results: Vec<Result<Option<(f64, ParamGrads)>>> = chunk
                .par_iter()
                .enumerate()
                .map(|(j, &i)| {
                    let mut rng = sample_rng(seed, epoch, b * cfg.batch_size + j);
                    let aug = augment(&samples[i], cfg, &mut rng)?;
                    let prepared = prepare(&aug, &cfg.arch)?;
                    sample_gradients(&params, &prepared, loss_cfg)
                })
                .collect();
            let mut acc: Option<ParamGrads> = None;
            let (mut batch_loss, mut used) = (0.0, 0usize);
            for r in results {
                if let Some((l, g)) = r? {
                    batch_loss += l;
                    used += 1;
                    match acc.as_mut() {
                        Some(a) => a.add_assign(&g),
                        None => acc = Some(g),
                    }
                }
            }
            let lr = cfg.learning_rate(step, total);
            step += 1;
            let Some(mut grads) = acc else { continue };
            let mean_loss = batch_loss / used as f64;
            if !mean_loss.is_finite() {
                return Err(Error::Training { step, loss: mean_loss });
            }
            grads.scale(1.0 / used as f64);
            adam.step(&mut params, &grads, lr);
            if !params.is_finite() {
                return Err(Error::Training { step, loss: mean_loss });
            }
            loss_sum += batch_loss;
            loss_n += used;
        }
        let epoch_loss = if loss_n > 0 { loss_sum / loss_n as f64 } else { f64::NAN };
        on_epoch(epoch, epoch_loss);
        epoch_losses.push(epoch_loss);
    }
    Ok(TrainOutcome { params, epoch_losses })
}

/// Loads every dataset image and trains from a fresh initialization.
pub fn train(data: &Dataset, cfg: &TrainConfig, loss_cfg: &LossConfig, seed: u64) -> Result<NetParams> {
    let samples = load_samples(data, cfg)?;
    train_samples(&samples, cfg, loss_cfg, seed, None, |_, _| {}).map(|o| o.params)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_cfg() -> TrainConfig {
        TrainConfig {
            arch: Arch::slimmed(8),
            epochs: 1,
            batch_size: 2,
            resize: 16,
            ..Default::default()
        }
    }

    fn samples() -> Vec<TrainSample> {
        (0..3)
            .map(|k| {
                let img = LinearImage::from_fn(24, 20, 1.0, |x, y| {
                    let t = 0.3 + 0.2 * (((x * 7 + y * 3 + k) % 5) as f64) / 5.0;
                    if x < 12 {
                        [0.8 * t, 0.6 * t, 0.4 * t]
                    } else {
                        [0.2 * t, 0.6 * t, 0.3 * t]
                    }
                });
                TrainSample::new(img, Illuminant::new([0.8, 0.6, 0.4]).unwrap())
            })
            .collect()
    }

    #[test]
    fn schedule_shape() {
        let cfg = TrainConfig::default();
        assert_eq!(cfg.learning_rate(0, 100), 1e-4);
        assert!((cfg.learning_rate(50, 100) - 1e-3).abs() < 1e-15);
        assert!((cfg.learning_rate(25, 100) - (1e-4 + 9e-4 * 0.5)).abs() < 1e-15);
        assert!(cfg.learning_rate(100, 100) - 1e-4 < 1e-15);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut p = NetParams::zeros(Arch::slimmed(8));
        let mut g = p.zeros_like();
        g.layers[0].weight[0] = 3.0;
        g.layers[0].weight[1] = -0.01;
        let mut adam = Adam::new(&p);
        adam.step(&mut p, &g, 0.1);
        assert!((p.layers[0].weight[0] + 0.1).abs() < 1e-8);
        assert!((p.layers[0].weight[1] - 0.1).abs() < 1e-6);
        assert_eq!(p.layers[0].weight[2], 0.0);
    }

    #[test]
    fn augmentation_is_consistent() {
        let s = &samples()[0];
        let cfg = TrainConfig {
            resize: 10,
            ..tiny_cfg()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = augment(s, &cfg, &mut rng).unwrap();
        assert_eq!((a.image.width(), a.image.height()), (10, 10));
        assert!(a.mask.matches(&a.image));
        // the target ignores gains, since gains scale image and label together
        let pa = prepare(&a, &cfg.arch).unwrap();
        let b = TrainSample {
            image: a.image.scaled([1.3, 0.7, 0.9]),
            gt: a.gt.scaled([1.3, 0.7, 0.9]).unwrap(),
            mask: a.mask.clone(),
        };
        let pb = prepare(&b, &cfg.arch).unwrap();
        assert!(pa.target.0.max_abs_diff(&pb.target.0) < 1e-9);
    }

    #[test]
    fn one_epoch_is_reproducible() {
        let cfg = TrainConfig {
            lr_peak: 1e-4,
            ..tiny_cfg()
        };
        let data = samples();
        let init = NetParams::init(cfg.arch, &mut ChaCha8Rng::seed_from_u64(9));
        let a = train_samples(&data, &cfg, &LossConfig::default(), 11, Some(init.clone()), |_, _| {}).unwrap();
        let b = train_samples(&data, &cfg, &LossConfig::default(), 11, Some(init.clone()), |_, _| {}).unwrap();
        assert_eq!(a.params, b.params);
        assert!(a.params.is_finite());
        assert_ne!(a.params, init);
        let max_delta = a
            .params
            .tensors()
            .iter()
            .zip(init.tensors())
            .flat_map(|(p, q)| p.iter().zip(q).map(|(x, y)| (x - y).abs()).collect::<Vec<_>>())
            .fold(0.0, f64::max);
        // two Adam steps at lr 1e-4 move each coordinate by at most about 2e-4
        assert!(max_delta > 0.0 && max_delta < 3e-4, "{max_delta}");
    }

    #[test]
    fn rejects_bad_input() {
        let cfg = TrainConfig {
            crop_range: (0.0, 1.0),
            ..tiny_cfg()
        };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        assert!(train_samples(&[], &tiny_cfg(), &LossConfig::default(), 0, None, |_, _| {}).is_err());
    }
}
