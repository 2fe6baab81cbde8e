//! Separable Gaussian filtering, finite differences and windowed statistics.
//!
//! Gaussian-type filters use mirror borders without edge repetition
//! (`-1 -> 1`), folded periodically so kernels wider than the map stay
//! defined. Difference and window operators replicate the border pixel.

use crate::map::{ScalarMap, EXCLUDED};

/// Mirror index `i` into `0..n` (reflect-101, periodic for far indices).
#[inline]
pub fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let mut k = i.rem_euclid(period);
    if k >= n as isize {
        k = period - k;
    }
    k as usize
}

#[inline]
pub fn replicate(i: isize, n: usize) -> usize {
    i.clamp(0, n as isize - 1) as usize
}

/// Normalized 1-D Gaussian taps for offsets `-r..=r`, `r = ceil(3σ)`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    assert!(sigma > 0.0, "sigma must be positive");
    let radius = (3.0 * sigma).ceil() as isize;
    let mut taps: Vec<f64> = (-radius..=radius)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= sum);
    taps
}

fn convolve_rows(map: &ScalarMap, taps: &[f64]) -> ScalarMap {
    let (w, h) = (map.width(), map.height());
    let r = (taps.len() / 2) as isize;
    let src = map.data();
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        for x in 0..w {
            let mut acc = 0.0;
            for (k, t) in taps.iter().enumerate() {
                acc += t * row[reflect(x as isize + k as isize - r, w)];
            }
            out[y * w + x] = acc;
        }
    }
    ScalarMap::new(w, h, out).expect("same dims")
}

fn convolve_cols(map: &ScalarMap, taps: &[f64]) -> ScalarMap {
    let (w, h) = (map.width(), map.height());
    let r = (taps.len() / 2) as isize;
    let src = map.data();
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for (k, t) in taps.iter().enumerate() {
            let sy = reflect(y as isize + k as isize - r, h);
            let src_row = &src[sy * w..(sy + 1) * w];
            let dst = &mut out[y * w..(y + 1) * w];
            for (d, s) in dst.iter_mut().zip(src_row) {
                *d += t * s;
            }
        }
    }
    ScalarMap::new(w, h, out).expect("same dims")
}

/// Transpose of [`convolve_rows`]: scatter each input through the mirrored taps.
fn convolve_rows_adjoint(map: &ScalarMap, taps: &[f64]) -> ScalarMap {
    let (w, h) = (map.width(), map.height());
    let r = (taps.len() / 2) as isize;
    let src = map.data();
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let v = src[y * w + x];
            for (k, t) in taps.iter().enumerate() {
                out[y * w + reflect(x as isize + k as isize - r, w)] += t * v;
            }
        }
    }
    ScalarMap::new(w, h, out).expect("same dims")
}

fn convolve_cols_adjoint(map: &ScalarMap, taps: &[f64]) -> ScalarMap {
    let (w, h) = (map.width(), map.height());
    let r = (taps.len() / 2) as isize;
    let src = map.data();
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        let src_row = &src[y * w..(y + 1) * w];
        for (k, t) in taps.iter().enumerate() {
            let dy = reflect(y as isize + k as isize - r, h);
            let dst = &mut out[dy * w..(dy + 1) * w];
            for (d, s) in dst.iter_mut().zip(src_row) {
                *d += t * s;
            }
        }
    }
    ScalarMap::new(w, h, out).expect("same dims")
}

/// `G_σ * map`. σ = 0 returns the input unchanged.
pub fn gaussian_blur(map: &ScalarMap, sigma: f64) -> ScalarMap {
    if sigma == 0.0 {
        return map.clone();
    }
    let taps = gaussian_kernel(sigma);
    convolve_cols(&convolve_rows(map, &taps), &taps)
}

/// Exact transpose of [`gaussian_blur`] including the mirrored borders.
pub fn gaussian_blur_adjoint(map: &ScalarMap, sigma: f64) -> ScalarMap {
    if sigma == 0.0 {
        return map.clone();
    }
    let taps = gaussian_kernel(sigma);
    convolve_rows_adjoint(&convolve_cols_adjoint(map, &taps), &taps)
}

/// `map - G_σ * map`, evaluated as weighted neighbour differences so that
/// constant maps give exactly zero.
pub fn center_surround(map: &ScalarMap, sigma: f64) -> ScalarMap {
    let taps = gaussian_kernel(sigma);
    let (w, h) = (map.width(), map.height());
    let r = (taps.len() / 2) as isize;
    let m = map.data();

    // horizontal blur minus center, and vertical blur minus center
    let mut dh = vec![0.0; w * h];
    let mut dv = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let c = m[y * w + x];
            let mut ah = 0.0;
            let mut av = 0.0;
            for (k, t) in taps.iter().enumerate() {
                let o = k as isize - r;
                ah += t * (m[y * w + reflect(x as isize + o, w)] - c);
                av += t * (m[reflect(y as isize + o, h) * w + x] - c);
            }
            dh[y * w + x] = ah;
            dv[y * w + x] = av;
        }
    }
    // G*m - m = V(dh) + dv
    let vdh = convolve_cols(&ScalarMap::new(w, h, dh).expect("dims"), &taps);
    let out = vdh
        .data()
        .iter()
        .zip(&dv)
        .map(|(a, b)| -(a + b))
        .collect();
    ScalarMap::new(w, h, out).expect("dims")
}

/// Central differences `(dx, dy)` with replicated borders.
pub fn gradients(map: &ScalarMap) -> (ScalarMap, ScalarMap) {
    let (w, h) = (map.width(), map.height());
    let dx = ScalarMap::from_fn(w, h, |x, y| {
        0.5 * (map.get(replicate(x as isize + 1, w), y) - map.get(replicate(x as isize - 1, w), y))
    });
    let dy = ScalarMap::from_fn(w, h, |x, y| {
        0.5 * (map.get(x, replicate(y as isize + 1, h)) - map.get(x, replicate(y as isize - 1, h)))
    });
    (dx, dy)
}

pub fn gradient_magnitude(map: &ScalarMap) -> ScalarMap {
    let (dx, dy) = gradients(map);
    dx.zip_with(&dy, |a, b| (a * a + b * b).sqrt())
}

/// 4-neighbour Laplacian with replicated borders.
pub fn laplacian(map: &ScalarMap) -> ScalarMap {
    let (w, h) = (map.width(), map.height());
    ScalarMap::from_fn(w, h, |x, y| {
        let (xi, yi) = (x as isize, y as isize);
        map.get(replicate(xi - 1, w), y)
            + map.get(replicate(xi + 1, w), y)
            + map.get(x, replicate(yi - 1, h))
            + map.get(x, replicate(yi + 1, h))
            - 4.0 * map.get(x, y)
    })
}

/// Population standard deviation over a `window x window` neighbourhood.
pub fn local_std(map: &ScalarMap, window: usize) -> ScalarMap {
    assert!(window >= 3 && window % 2 == 1, "window must be odd and >= 3");
    let (w, h) = (map.width(), map.height());
    let r = (window / 2) as isize;
    let n = (window * window) as f64;
    let mut buf = Vec::with_capacity(window * window);
    ScalarMap::from_fn(w, h, |x, y| {
        buf.clear();
        for dy in -r..=r {
            let sy = replicate(y as isize + dy, h);
            for dx in -r..=r {
                buf.push(map.get(replicate(x as isize + dx, w), sy));
            }
        }
        let mean = buf.iter().sum::<f64>() / n;
        (buf.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt()
    })
}

/// Mean over the non-excluded pixels of a `window x window` box clipped to
/// the map. Excluded pixels stay excluded and never contribute.
pub fn box_mean_valid(map: &ScalarMap, window: usize) -> ScalarMap {
    if window <= 1 {
        return map.clone();
    }
    let (w, h) = (map.width(), map.height());
    let r = (window / 2) as isize;
    let src = map.data();
    let mut hs = vec![0.0; w * h];
    let mut hc = vec![0u32; w * h];
    for y in 0..h {
        for x in 0..w {
            let (mut s, mut c) = (0.0, 0);
            let lo = (x as isize - r).max(0) as usize;
            let hi = (x as isize + r).min(w as isize - 1) as usize;
            for v in &src[y * w + lo..=y * w + hi] {
                if *v != EXCLUDED {
                    s += v;
                    c += 1;
                }
            }
            hs[y * w + x] = s;
            hc[y * w + x] = c;
        }
    }
    let mut out = vec![EXCLUDED; w * h];
    for y in 0..h {
        let lo = (y as isize - r).max(0) as usize;
        let hi = (y as isize + r).min(h as isize - 1) as usize;
        for x in 0..w {
            if src[y * w + x] == EXCLUDED {
                continue;
            }
            let (mut s, mut c) = (0.0, 0);
            for sy in lo..=hi {
                s += hs[sy * w + x];
                c += hc[sy * w + x];
            }
            out[y * w + x] = s / c as f64;
        }
    }
    ScalarMap::new(w, h, out).expect("dims")
}
