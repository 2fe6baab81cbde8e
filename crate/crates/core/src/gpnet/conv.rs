//! Multi-channel planes and 3x3 same-size convolution with mirrored padding.

use crate::filter::reflect;
use crate::map::ScalarMap;

pub const KSIZE: usize = 3;
pub const KAREA: usize = KSIZE * KSIZE;

/// `channels` planes of `height x width`, channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Planes {
    pub channels: usize,
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl Planes {
    pub fn zeros(channels: usize, width: usize, height: usize) -> Self {
        Self {
            channels,
            width,
            height,
            data: vec![0.0; channels * width * height],
        }
    }

    pub fn from_maps(maps: &[ScalarMap]) -> Self {
        assert!(!maps.is_empty());
        let (w, h) = (maps[0].width(), maps[0].height());
        let mut data = Vec::with_capacity(maps.len() * w * h);
        for m in maps {
            assert!(m.width() == w && m.height() == h, "plane sizes differ");
            data.extend_from_slice(m.data());
        }
        Self {
            channels: maps.len(),
            width: w,
            height: h,
            data,
        }
    }

    #[inline]
    pub fn area(&self) -> usize {
        self.width * self.height
    }

    pub fn plane(&self, c: usize) -> &[f64] {
        let a = self.area();
        &self.data[c * a..(c + 1) * a]
    }

    pub fn plane_mut(&mut self, c: usize) -> &mut [f64] {
        let a = self.area();
        &mut self.data[c * a..(c + 1) * a]
    }

    pub fn to_map(&self, c: usize) -> ScalarMap {
        ScalarMap::new(self.width, self.height, self.plane(c).to_vec()).expect("dims")
    }

    /// Stack several blocks of equal spatial size along the channel axis.
    pub fn concat(blocks: &[&Planes]) -> Planes {
        let (w, h) = (blocks[0].width, blocks[0].height);
        let mut data = Vec::new();
        let mut channels = 0;
        for b in blocks {
            assert!(b.width == w && b.height == h);
            data.extend_from_slice(&b.data);
            channels += b.channels;
        }
        Planes {
            channels,
            width: w,
            height: h,
            data,
        }
    }
}

/// Unrolled 3x3 neighbourhoods: row `(ci*9 + ky*3 + kx)`, column = pixel.
pub fn im2col(x: &Planes) -> Vec<f64> {
    let (w, h, a) = (x.width, x.height, x.area());
    let mut cols = vec![0.0; x.channels * KAREA * a];
    for ci in 0..x.channels {
        let src = x.plane(ci);
        for ky in 0..KSIZE {
            for kx in 0..KSIZE {
                let row = (ci * KAREA + ky * KSIZE + kx) * a;
                let dst = &mut cols[row..row + a];
                for y in 0..h {
                    let sy = reflect(y as isize + ky as isize - 1, h);
                    for xx in 0..w {
                        let sx = reflect(xx as isize + kx as isize - 1, w);
                        dst[y * w + xx] = src[sy * w + sx];
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatter-add column gradients back onto the input planes.
pub fn col2im(dcols: &[f64], channels: usize, w: usize, h: usize) -> Planes {
    let a = w * h;
    let mut out = Planes::zeros(channels, w, h);
    for ci in 0..channels {
        let dst = out.plane_mut(ci);
        for ky in 0..KSIZE {
            for kx in 0..KSIZE {
                let row = (ci * KAREA + ky * KSIZE + kx) * a;
                let src = &dcols[row..row + a];
                for y in 0..h {
                    let sy = reflect(y as isize + ky as isize - 1, h);
                    for xx in 0..w {
                        let sx = reflect(xx as isize + kx as isize - 1, w);
                        dst[sy * w + sx] += src[y * w + xx];
                    }
                }
            }
        }
    }
    out
}

/// Row-major `c = alpha * op(a) * op(b) + beta * c` with explicit strides.
#[allow(clippy::too_many_arguments)]
#[inline]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
) {
    assert!(a.len() > (m - 1) * rsa + (k - 1) * csa);
    assert!(b.len() > (k - 1) * rsb + (n - 1) * csb);
    assert!(c.len() >= m * n);
    // SAFETY: the asserts above bound every index the kernel touches.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// 3x3 convolution: `weight` is `c_out x (c_in * 9)` row-major.
pub fn conv_forward(x: &Planes, weight: &[f64], bias: &[f64], c_out: usize) -> Planes {
    let a = x.area();
    let k = x.channels * KAREA;
    assert_eq!(weight.len(), c_out * k);
    let cols = im2col(x);
    let mut out = Planes::zeros(c_out, x.width, x.height);
    for (co, b) in bias.iter().enumerate() {
        out.plane_mut(co).iter_mut().for_each(|v| *v = *b);
    }
    gemm(c_out, k, a, weight, (k, 1), &cols, (a, 1), 1.0, &mut out.data);
    out
}

/// Accumulates weight and bias gradients; returns the input gradient when requested.
pub fn conv_backward(
    x: &Planes,
    weight: &[f64],
    dy: &Planes,
    dweight: &mut [f64],
    dbias: &mut [f64],
    need_input_grad: bool,
) -> Option<Planes> {
    let a = x.area();
    let k = x.channels * KAREA;
    let c_out = dy.channels;
    let cols = im2col(x);
    // dW += dY * cols^T
    gemm(c_out, a, k, &dy.data, (a, 1), &cols, (1, a), 1.0, dweight);
    for (co, db) in dbias.iter_mut().enumerate() {
        *db += dy.plane(co).iter().sum::<f64>();
    }
    if !need_input_grad {
        return None;
    }
    // dcols = W^T * dY
    let mut dcols = vec![0.0; k * a];
    gemm(k, c_out, a, weight, (1, k), &dy.data, (a, 1), 0.0, &mut dcols);
    Some(col2im(&dcols, x.channels, x.width, x.height))
}
