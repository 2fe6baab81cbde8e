//! Three-pathway convolutional grayness regressor with exact reverse-mode gradients.
//!
//! Each pathway is five 3x3 conv + PReLU layers. Pathway outputs are
//! standardized per plane, concatenated and passed through five 3x3 conv
//! layers (ReLU on the first four), a fixed Gaussian smoothing and a clamp
//! at zero. All convolutions keep the spatial size with mirrored padding.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::filter;
use crate::map::{GraynessMap, ScalarMap};

use super::conv::{conv_backward, conv_forward, Planes, KAREA};
use super::features::{FeatureStack, InputMode};

pub const PATHWAYS: usize = 3;
pub const PATHWAY_DEPTH: usize = 5;
pub const FUSION_DEPTH: usize = 5;
/// Variance floor of the per-plane standardization.
pub const NORM_EPS: f64 = 1e-6;
pub const PRELU_INIT: f64 = 0.25;
/// Initial bias of the last layer, in degrees. Starting above zero keeps the
/// output clamp from blocking every gradient on the first steps.
pub const OUTPUT_BIAS_INIT: f64 = 5.0;

/// Architecture hyper-parameters; everything a checkpoint needs besides the weights.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Arch {
    pub mode: InputMode,
    pub pathway_width: usize,
    /// Output widths of the first four fusion layers; the fifth outputs one plane.
    pub fusion_widths: [usize; FUSION_DEPTH - 1],
    /// Scale of the fixed output smoothing; 0 disables it.
    pub sigma_out: f64,
}

impl Default for Arch {
    fn default() -> Self {
        Self {
            mode: InputMode::Constrained,
            pathway_width: 32,
            fusion_widths: [64, 32, 16, 8],
            sigma_out: 5.0,
        }
    }
}

impl Arch {
    /// Same layer structure with every width divided by `factor`.
    pub fn slimmed(factor: usize) -> Self {
        let d = Self::default();
        Self {
            pathway_width: (d.pathway_width / factor).max(1),
            fusion_widths: d.fusion_widths.map(|w| (w / factor).max(1)),
            ..d
        }
    }

    pub fn with_mode(mut self, mode: InputMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn in_channels(&self) -> [usize; PATHWAYS] {
        self.mode.in_channels()
    }

    /// `(c_in, c_out, has_prelu)` for every layer in storage order.
    pub fn layer_shapes(&self) -> Vec<(usize, usize, bool)> {
        let mut shapes = Vec::with_capacity(PATHWAYS * PATHWAY_DEPTH + FUSION_DEPTH);
        for c_in in self.in_channels() {
            let mut c = c_in;
            for _ in 0..PATHWAY_DEPTH {
                shapes.push((c, self.pathway_width, true));
                c = self.pathway_width;
            }
        }
        let mut c = PATHWAYS * self.pathway_width;
        for l in 0..FUSION_DEPTH {
            let out = if l + 1 < FUSION_DEPTH { self.fusion_widths[l] } else { 1 };
            shapes.push((c, out, false));
            c = out;
        }
        shapes
    }

    pub fn param_count(&self) -> usize {
        self.layer_shapes()
            .iter()
            .map(|&(ci, co, prelu)| co * ci * KAREA + co + if prelu { co } else { 0 })
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    pub c_in: usize,
    pub c_out: usize,
    /// `c_out x c_in x 3 x 3`, row-major.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
    /// Per-channel PReLU slopes; empty for fusion layers.
    pub slope: Vec<f64>,
}

/// All learnable tensors. Pathway `p` layer `l` is `layers[p * 5 + l]`,
/// fusion layer `l` is `layers[15 + l]`.
#[derive(Debug, Clone, PartialEq)]
pub struct NetParams {
    pub arch: Arch,
    pub layers: Vec<ConvLayer>,
}

/// Gradients share the parameter layout.
pub type ParamGrads = NetParams;

impl NetParams {
    /// Zero kernels and biases, PReLU slopes at their initial value.
    pub fn zeros(arch: Arch) -> Self {
        let layers = arch
            .layer_shapes()
            .into_iter()
            .map(|(c_in, c_out, prelu)| ConvLayer {
                c_in,
                c_out,
                weight: vec![0.0; c_out * c_in * KAREA],
                bias: vec![0.0; c_out],
                slope: if prelu { vec![PRELU_INIT; c_out] } else { Vec::new() },
            })
            .collect();
        Self { arch, layers }
    }

    /// He-normal kernels; zero biases except the last layer's.
    pub fn init(arch: Arch, rng: &mut impl Rng) -> Self {
        let mut p = Self::zeros(arch);
        for layer in &mut p.layers {
            let std = (2.0 / (layer.c_in * KAREA) as f64).sqrt();
            let normal = Normal::new(0.0, std).expect("positive std");
            layer.weight.iter_mut().for_each(|w| *w = normal.sample(rng));
        }
        p.layers.last_mut().expect("layers").bias[0] = OUTPUT_BIAS_INIT;
        p
    }

    /// Same layout, every entry zero (including slopes).
    pub fn zeros_like(&self) -> Self {
        let mut g = self.clone();
        g.tensors_mut().into_iter().for_each(|t| t.fill(0.0));
        g
    }

    pub fn pathway_layer(&self, pathway: usize, l: usize) -> &ConvLayer {
        &self.layers[pathway * PATHWAY_DEPTH + l]
    }

    pub fn fusion_layer(&self, l: usize) -> &ConvLayer {
        &self.layers[PATHWAYS * PATHWAY_DEPTH + l]
    }

    /// Every tensor in checkpoint order: per layer weight, bias, then slopes if any.
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.push(l.weight.as_slice());
            out.push(l.bias.as_slice());
            if !l.slope.is_empty() {
                out.push(l.slope.as_slice());
            }
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::new();
        for l in &mut self.layers {
            out.push(l.weight.as_mut_slice());
            out.push(l.bias.as_mut_slice());
            if !l.slope.is_empty() {
                out.push(l.slope.as_mut_slice());
            }
        }
        out
    }

    pub fn add_assign(&mut self, other: &NetParams) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
    }

    pub fn scale(&mut self, f: f64) {
        self.tensors_mut()
            .into_iter()
            .for_each(|t| t.iter_mut().for_each(|v| *v *= f));
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }
}

struct PathwayCache {
    inputs: Vec<Planes>,
    pre: Vec<Planes>,
    inv_std: Vec<f64>,
    standardized: Planes,
}

/// Activations kept by a forward pass for the backward pass.
pub struct ForwardCache {
    pathways: Vec<PathwayCache>,
    fusion_inputs: Vec<Planes>,
    fusion_pre: Vec<Planes>,
    smoothed: ScalarMap,
}

fn check_features(arch: &Arch, feats: &FeatureStack) -> Result<()> {
    let expect = arch.in_channels();
    for (p, b) in feats.blocks.iter().enumerate() {
        if b.channels != expect[p] {
            return Err(Error::Structural(format!(
                "pathway {p} expects {} planes, got {}",
                expect[p], b.channels
            )));
        }
        if b.width != feats.width() || b.height != feats.height() {
            return Err(Error::Structural("feature blocks differ in size".into()));
        }
    }
    Ok(())
}

fn prelu(z: &Planes, slope: &[f64]) -> Planes {
    let mut a = z.clone();
    for (c, &s) in slope.iter().enumerate() {
        a.plane_mut(c).iter_mut().for_each(|v| {
            if *v <= 0.0 {
                *v *= s
            }
        });
    }
    a
}

fn relu(z: &Planes) -> Planes {
    let mut a = z.clone();
    a.data.iter_mut().for_each(|v| *v = v.max(0.0));
    a
}

/// Forward pass keeping every activation needed by [`backward_with_cache`].
pub fn forward_with_cache(params: &NetParams, feats: &FeatureStack) -> Result<(GraynessMap, ForwardCache)> {
    let arch = &params.arch;
    check_features(arch, feats)?;
    let (w, h) = (feats.width(), feats.height());

    let mut pathways = Vec::with_capacity(PATHWAYS);
    for p in 0..PATHWAYS {
        let mut x = feats.blocks[p].clone();
        let mut inputs = Vec::with_capacity(PATHWAY_DEPTH);
        let mut pre = Vec::with_capacity(PATHWAY_DEPTH);
        for l in 0..PATHWAY_DEPTH {
            let layer = params.pathway_layer(p, l);
            let z = conv_forward(&x, &layer.weight, &layer.bias, layer.c_out);
            let a = prelu(&z, &layer.slope);
            inputs.push(x);
            pre.push(z);
            x = a;
        }
        let n = x.area() as f64;
        let mut inv_std = Vec::with_capacity(x.channels);
        for c in 0..x.channels {
            let plane = x.plane_mut(c);
            let mean = plane.iter().sum::<f64>() / n;
            let var = plane.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let inv = 1.0 / (var + NORM_EPS).sqrt();
            plane.iter_mut().for_each(|v| *v = (*v - mean) * inv);
            inv_std.push(inv);
        }
        pathways.push(PathwayCache {
            inputs,
            pre,
            inv_std,
            standardized: x,
        });
    }

    let mut x = Planes::concat(&[
        &pathways[0].standardized,
        &pathways[1].standardized,
        &pathways[2].standardized,
    ]);
    let mut fusion_inputs = Vec::with_capacity(FUSION_DEPTH);
    let mut fusion_pre = Vec::with_capacity(FUSION_DEPTH);
    for l in 0..FUSION_DEPTH {
        let layer = params.fusion_layer(l);
        let z = conv_forward(&x, &layer.weight, &layer.bias, layer.c_out);
        let a = if l + 1 < FUSION_DEPTH { relu(&z) } else { z.clone() };
        fusion_inputs.push(x);
        fusion_pre.push(z);
        x = a;
    }
    let logits = x.to_map(0);
    let smoothed = filter::gaussian_blur(&logits, arch.sigma_out);
    let out = smoothed.map(|v| v.max(0.0));
    debug_assert!(out.width() == w && out.height() == h);
    Ok((
        GraynessMap(out),
        ForwardCache {
            pathways,
            fusion_inputs,
            fusion_pre,
            smoothed,
        },
    ))
}

/// Predicted grayness map (non-negative, same size as the features).
pub fn net_forward(params: &NetParams, feats: &FeatureStack) -> Result<GraynessMap> {
    forward_with_cache(params, feats).map(|(m, _)| m)
}

/// Gradients of `Σ upstream ⊙ output` with respect to every learnable tensor.
pub fn backward_with_cache(params: &NetParams, cache: &ForwardCache, upstream: &ScalarMap) -> Result<ParamGrads> {
    if !upstream.same_dims(&cache.smoothed) {
        return Err(Error::Structural(format!(
            "upstream {}x{} for output {}x{}",
            upstream.width(),
            upstream.height(),
            cache.smoothed.width(),
            cache.smoothed.height()
        )));
    }
    let arch = &params.arch;
    let mut grads = params.zeros_like();

    // clamp, then the fixed smoothing
    let d_smoothed = upstream.zip_with(&cache.smoothed, |u, s| if s > 0.0 { u } else { 0.0 });
    let d_logits = filter::gaussian_blur_adjoint(&d_smoothed, arch.sigma_out);
    let mut dy = Planes::from_maps(&[d_logits]);

    for l in (0..FUSION_DEPTH).rev() {
        if l + 1 < FUSION_DEPTH {
            let z = &cache.fusion_pre[l];
            dy.data.iter_mut().zip(&z.data).for_each(|(d, &zv)| {
                if zv <= 0.0 {
                    *d = 0.0
                }
            });
        }
        let idx = PATHWAYS * PATHWAY_DEPTH + l;
        let layer = &params.layers[idx];
        let g = &mut grads.layers[idx];
        dy = conv_backward(
            &cache.fusion_inputs[l],
            &layer.weight,
            &dy,
            &mut g.weight,
            &mut g.bias,
            true,
        )
        .expect("input gradient requested");
    }

    let width = arch.pathway_width;
    let area = dy.area();
    for (p, pc) in cache.pathways.iter().enumerate() {
        // standardization
        let mut da = Planes::zeros(width, dy.width, dy.height);
        for c in 0..width {
            let ds = &dy.data[(p * width + c) * area..(p * width + c + 1) * area];
            let s = pc.standardized.plane(c);
            let n = area as f64;
            let mean_ds = ds.iter().sum::<f64>() / n;
            let mean_dss = ds.iter().zip(s).map(|(a, b)| a * b).sum::<f64>() / n;
            let inv = pc.inv_std[c];
            da.plane_mut(c)
                .iter_mut()
                .zip(ds.iter().zip(s))
                .for_each(|(out, (&d, &sv))| *out = inv * (d - mean_ds - sv * mean_dss));
        }

        for l in (0..PATHWAY_DEPTH).rev() {
            let idx = p * PATHWAY_DEPTH + l;
            let layer = &params.layers[idx];
            let g = &mut grads.layers[idx];
            let z = &pc.pre[l];
            for c in 0..layer.c_out {
                let slope = layer.slope[c];
                let mut dslope = 0.0;
                for (d, &zv) in da.plane_mut(c).iter_mut().zip(z.plane(c)) {
                    if zv <= 0.0 {
                        dslope += *d * zv;
                        *d *= slope;
                    }
                }
                g.slope[c] += dslope;
            }
            let dx = conv_backward(&pc.inputs[l], &layer.weight, &da, &mut g.weight, &mut g.bias, l > 0);
            if let Some(dx) = dx {
                da = dx;
            }
        }
    }
    Ok(grads)
}

/// A parameter set together with the activations of its last forward pass.
pub struct GpNet {
    pub params: NetParams,
    cache: Option<ForwardCache>,
}

impl GpNet {
    pub fn new(params: NetParams) -> Self {
        Self { params, cache: None }
    }

    pub fn forward(&mut self, feats: &FeatureStack) -> Result<GraynessMap> {
        let (out, cache) = forward_with_cache(&self.params, feats)?;
        self.cache = Some(cache);
        Ok(out)
    }

    /// Gradients for the most recent [`GpNet::forward`].
    pub fn backward(&self, upstream: &ScalarMap) -> Result<ParamGrads> {
        let cache = self
            .cache
            .as_ref()
            .ok_or(Error::Usage("backward called before forward"))?;
        backward_with_cache(&self.params, cache, upstream)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imageio::LinearImage;
    use crate::gpnet::features::build_features;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn feats(w: usize, h: usize) -> FeatureStack {
        let img = LinearImage::from_fn(w, h, 1.0, |x, y| {
            [0.1 + 0.8 * ((x * 3 + y) % 7) as f64 / 7.0, 0.3 + 0.01 * y as f64, 0.2 + 0.02 * x as f64]
        });
        build_features(&img)
    }

    #[test]
    fn default_arch_is_small() {
        let a = Arch::default();
        assert!(a.param_count() < 300_000, "{}", a.param_count());
        let p = NetParams::zeros(a);
        assert_eq!(p.tensors().iter().map(|t| t.len()).sum::<usize>(), a.param_count());
        assert_eq!(p.layers.len(), 20);
        assert_eq!(p.fusion_layer(0).c_in, 96);
        assert_eq!(p.fusion_layer(4).c_out, 1);
    }

    #[test]
    fn zero_params_give_zero_map() {
        let p = NetParams::zeros(Arch::slimmed(4));
        let out = net_forward(&p, &feats(20, 16)).unwrap();
        assert!(out.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn output_keeps_input_size_and_is_non_negative() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = NetParams::init(Arch::slimmed(4), &mut rng);
        for (w, h) in [(77, 53), (16, 16)] {
            let out = net_forward(&p, &feats(w, h)).unwrap();
            assert_eq!((out.width(), out.height()), (w, h));
            assert!(out.values().iter().all(|&v| v >= 0.0 && v.is_finite()));
        }
    }

    #[test]
    fn shape_mismatch_is_structural() {
        let p = NetParams::zeros(Arch::slimmed(4).with_mode(InputMode::Raw));
        assert!(matches!(net_forward(&p, &feats(16, 16)), Err(Error::Structural(_))));
    }

    #[test]
    fn backward_requires_forward() {
        let net = GpNet::new(NetParams::zeros(Arch::slimmed(8)));
        assert!(matches!(net.backward(&ScalarMap::zeros(4, 4)), Err(Error::Usage(_))));
    }

    #[test]
    fn identity_taps_give_affine_map() {
        let arch = Arch {
            mode: InputMode::Constrained,
            pathway_width: 1,
            fusion_widths: [1; 4],
            sigma_out: 0.0,
        };
        let mut p = NetParams::zeros(arch);
        let center = 4;
        for layer in &mut p.layers {
            layer.weight[center] = 1.0;
            layer.slope.iter_mut().for_each(|s| *s = 1.0);
        }
        let mix = [0.7, -0.4, 0.25];
        let first = &mut p.layers[15];
        for (ci, m) in mix.iter().enumerate() {
            first.weight[ci * 9 + center] = *m;
        }
        first.bias[0] = 3.0;
        p.layers[0].bias[0] = 0.5;

        let f = feats(4, 4);
        let out = net_forward(&p, &f).unwrap();
        let standardized = |v: &[f64]| -> Vec<f64> {
            let mean = v.iter().sum::<f64>() / 16.0;
            let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 16.0;
            v.iter().map(|x| (x - mean) / (var + 1e-6).sqrt()).collect()
        };
        let s: Vec<Vec<f64>> = (0..3).map(|b| standardized(f.blocks[b].plane(0))).collect();
        for i in 0..16 {
            let expect = (3.0 + mix[0] * s[0][i] + mix[1] * s[1][i] + mix[2] * s[2][i]).max(0.0);
            assert!((out.values()[i] - expect).abs() < 1e-6);
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let arch = Arch {
            mode: InputMode::Constrained,
            pathway_width: 3,
            fusion_widths: [4, 3, 3, 2],
            sigma_out: 5.0,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut p = NetParams::init(arch, &mut rng);
        p.scale(1e-2);
        // biases keep every pre-activation well clear of its kink, so a step of
        // h cannot flip a unit; pathway channels sit on either side of zero
        for layer in &mut p.layers {
            let pathway = !layer.slope.is_empty();
            layer.bias.iter_mut().for_each(|b| {
                let m = rng.random_range(0.03..0.06);
                *b = if pathway && rng.random_bool(0.5) { -m } else { m + if pathway { 0.0 } else { 0.1 } };
            });
            layer.slope.iter_mut().for_each(|s| *s = rng.random_range(0.1..0.4));
        }
        p.layers.last_mut().unwrap().bias[0] = 1.0;
        let f = feats(8, 8);
        let up = ScalarMap::from_fn(8, 8, |x, y| ((x * 5 + y * 3) % 7) as f64 / 7.0 - 0.4);
        let objective = |q: &NetParams| -> f64 {
            let o = net_forward(q, &f).unwrap();
            o.values().iter().zip(up.data()).map(|(a, b)| a * b).sum()
        };
        let (_, cache) = forward_with_cache(&p, &f).unwrap();
        let g = backward_with_cache(&p, &cache, &up).unwrap();
        let h = 1e-3;
        let mut worst: f64 = 0.0;
        let n_tensors = p.tensors().len();
        for t in 0..n_tensors {
            for i in 0..p.tensors()[t].len() {
                let mut a = p.clone();
                a.tensors_mut()[t][i] += h;
                let mut b = p.clone();
                b.tensors_mut()[t][i] -= h;
                let fd = (objective(&a) - objective(&b)) / (2.0 * h);
                let an = g.tensors()[t][i];
                let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-6);
                worst = worst.max(rel);
            }
        }
        assert!(worst < 1e-4, "worst relative error {worst}");
    }

    #[test]
    fn zero_upstream_zero_grads() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut net = GpNet::new(NetParams::init(Arch::slimmed(8), &mut rng));
        let f = feats(12, 10);
        net.forward(&f).unwrap();
        let g = net.backward(&ScalarMap::zeros(12, 10)).unwrap();
        assert!(g.tensors().iter().all(|t| t.iter().all(|&v| v == 0.0)));
        assert!(net.backward(&ScalarMap::zeros(10, 12)).is_err());
    }
}
