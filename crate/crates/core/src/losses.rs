//! Image reconstruction losses with hand-written gradients w.r.t. the
//! prediction: Charbonnier, Laplacian pyramid and soft census.

use crate::error::{GimmError, Result};
use crate::tensor::Tensor;

pub const CHARBONNIER_EPS: f64 = 1e-3;
/// Pyramid depth: four band-pass levels plus the low-pass residual.
pub const PYRAMID_LEVELS: usize = 5;
pub const CENSUS_RADIUS: usize = 3;
const CENSUS_SOFT: f64 = 0.81;
const CENSUS_DIST: f64 = 0.1;
const LUMA: [f64; 3] = [0.299, 0.587, 0.114];

fn expect_pair(a: &Tensor, b: &Tensor, what: &str) -> Result<(usize, usize, usize)> {
    if !a.is_hwc() {
        return Err(GimmError::ShapeMismatch(format!("{what}: expected HxWxC images")));
    }
    a.expect_same_shape(b, what)?;
    Ok(a.hwc())
}

/// `sqrt(d² + ε²)` minus its floor `ε`, so that means of these terms plus `ε`
/// hit the floor exactly on identical inputs.
#[inline]
fn charb_excess(d: f64) -> f64 {
    (d * d + CHARBONNIER_EPS * CHARBONNIER_EPS).sqrt() - CHARBONNIER_EPS
}

/// `mean(sqrt((a − b)² + ε²))`
pub fn charbonnier(a: &Tensor, b: &Tensor) -> Result<f64> {
    expect_pair(a, b, "charbonnier_loss")?;
    let s: f64 = a.data().iter().zip(b.data()).map(|(x, y)| charb_excess(x - y)).sum();
    Ok(CHARBONNIER_EPS + s / a.len() as f64)
}

pub fn charbonnier_vjp(a: &Tensor, b: &Tensor, g: f64) -> Tensor {
    let e2 = CHARBONNIER_EPS * CHARBONNIER_EPS;
    let n = a.len() as f64;
    a.zip_map(b, |x, y| {
        let d = x - y;
        g * d / (d * d + e2).sqrt() / n
    })
}

// ---- Laplacian pyramid ----

const BLUR5: [f64; 5] = [1.0 / 16.0, 4.0 / 16.0, 6.0 / 16.0, 4.0 / 16.0, 1.0 / 16.0];

#[inline]
fn clampi(i: isize, n: usize) -> usize {
    i.clamp(0, n as isize - 1) as usize
}

/// Separable 5-tap binomial blur with replicate padding.
fn blur(x: &Tensor) -> Tensor {
    let (h, w, c) = x.hwc();
    let mut tmp = vec![0.0; h * w * c];
    for y in 0..h {
        for xx in 0..w {
            for (k, &wk) in BLUR5.iter().enumerate() {
                let sx = clampi(xx as isize + k as isize - 2, w);
                for ch in 0..c {
                    tmp[(y * w + xx) * c + ch] += wk * x.data()[(y * w + sx) * c + ch];
                }
            }
        }
    }
    let mut out = vec![0.0; h * w * c];
    for y in 0..h {
        for (k, &wk) in BLUR5.iter().enumerate() {
            let sy = clampi(y as isize + k as isize - 2, h);
            for i in 0..w * c {
                out[y * w * c + i] += wk * tmp[sy * w * c + i];
            }
        }
    }
    Tensor::new(&[h, w, c], out).unwrap()
}

/// Adjoint of [`blur`].
fn blur_adj(g: &Tensor) -> Tensor {
    let (h, w, c) = g.hwc();
    let mut tmp = vec![0.0; h * w * c];
    for y in 0..h {
        for (k, &wk) in BLUR5.iter().enumerate() {
            let sy = clampi(y as isize + k as isize - 2, h);
            for i in 0..w * c {
                tmp[sy * w * c + i] += wk * g.data()[y * w * c + i];
            }
        }
    }
    let mut out = vec![0.0; h * w * c];
    for y in 0..h {
        for xx in 0..w {
            for (k, &wk) in BLUR5.iter().enumerate() {
                let sx = clampi(xx as isize + k as isize - 2, w);
                for ch in 0..c {
                    out[(y * w + sx) * c + ch] += wk * tmp[(y * w + xx) * c + ch];
                }
            }
        }
    }
    Tensor::new(&[h, w, c], out).unwrap()
}

/// Blur, then keep even rows and columns.
fn down(x: &Tensor) -> Tensor {
    let b = blur(x);
    let (h, w, c) = b.hwc();
    let (hh, ww) = (h.div_ceil(2), w.div_ceil(2));
    Tensor::from_fn_hwc(hh, ww, c, |y, xx, ch| b.at(2 * y, 2 * xx, ch))
}

fn down_adj(g: &Tensor, h: usize, w: usize) -> Tensor {
    let (hh, ww, c) = g.hwc();
    let mut z = Tensor::zeros(&[h, w, c]);
    for y in 0..hh {
        for xx in 0..ww {
            for ch in 0..c {
                z.set(2 * y, 2 * xx, ch, g.at(y, xx, ch));
            }
        }
    }
    blur_adj(&z)
}

/// Bilinear taps of output index `i` sampling a coarse axis of length `n`
/// at `i / 2`.
#[inline]
fn up_taps(i: usize, n: usize) -> (usize, usize, f64) {
    let p = (i as f64 / 2.0).min((n - 1) as f64);
    let i0 = p.floor() as usize;
    let i1 = (i0 + 1).min(n - 1);
    (i0, i1, p - i0 as f64)
}

/// Bilinear upsampling to `h×w`; constants stay constant.
fn up(x: &Tensor, h: usize, w: usize) -> Tensor {
    let (hh, ww, c) = x.hwc();
    Tensor::from_fn_hwc(h, w, c, |y, xx, ch| {
        let (y0, y1, fy) = up_taps(y, hh);
        let (x0, x1, fx) = up_taps(xx, ww);
        (1.0 - fy) * ((1.0 - fx) * x.at(y0, x0, ch) + fx * x.at(y0, x1, ch))
            + fy * ((1.0 - fx) * x.at(y1, x0, ch) + fx * x.at(y1, x1, ch))
    })
}

fn up_adj(g: &Tensor, hh: usize, ww: usize) -> Tensor {
    let (h, w, c) = g.hwc();
    let mut out = Tensor::zeros(&[hh, ww, c]);
    for y in 0..h {
        let (y0, y1, fy) = up_taps(y, hh);
        for xx in 0..w {
            let (x0, x1, fx) = up_taps(xx, ww);
            for ch in 0..c {
                let v = g.at(y, xx, ch);
                let d = out.data_mut();
                d[(y0 * ww + x0) * c + ch] += (1.0 - fy) * (1.0 - fx) * v;
                d[(y0 * ww + x1) * c + ch] += (1.0 - fy) * fx * v;
                d[(y1 * ww + x0) * c + ch] += fy * (1.0 - fx) * v;
                d[(y1 * ww + x1) * c + ch] += fy * fx * v;
            }
        }
    }
    out
}

/// Band-pass levels `0..4` followed by the low-pass residual.
fn pyramid(d: &Tensor) -> Vec<Tensor> {
    let mut bands = Vec::with_capacity(PYRAMID_LEVELS);
    let mut g = d.clone();
    for _ in 0..PYRAMID_LEVELS - 1 {
        let (h, w, _) = g.hwc();
        let next = down(&g);
        bands.push(g.sub(&up(&next, h, w)));
        g = next;
    }
    bands.push(g);
    bands
}

fn check_pyramid_size(h: usize, w: usize) -> Result<()> {
    let need = 1 << (PYRAMID_LEVELS - 1);
    if h.min(w) < need {
        return Err(GimmError::TooSmall(format!(
            "Laplacian pyramid needs min dim >= {need}, got {h}x{w}"
        )));
    }
    Ok(())
}

/// `Σ_l 2^l · mean|band_l(a − b)|`
pub fn laplacian(a: &Tensor, b: &Tensor) -> Result<f64> {
    let (h, w, _) = expect_pair(a, b, "laplacian_loss")?;
    check_pyramid_size(h, w)?;
    Ok(pyramid(&a.sub(b))
        .iter()
        .enumerate()
        .map(|(l, band)| (1 << l) as f64 * band.data().iter().map(|v| v.abs()).sum::<f64>() / band.len() as f64)
        .sum())
}

pub fn laplacian_vjp(a: &Tensor, b: &Tensor, g: f64) -> Tensor {
    let bands = pyramid(&a.sub(b));
    let k = bands.len();
    // gradient w.r.t. each band, then pulled back through the pyramid
    let mut sizes = Vec::with_capacity(k);
    let mut gb: Vec<Tensor> = bands
        .iter()
        .enumerate()
        .map(|(l, band)| {
            sizes.push(band.hwc());
            let s = g * (1 << l) as f64 / band.len() as f64;
            band.map(|v| s * v.signum() * (v != 0.0) as u8 as f64)
        })
        .collect();
    // reverse: g_{l} = band_l,  band_l = g_l − up(g_{l+1}),  g_{l+1} = down(g_l)
    let mut carry = gb.pop().unwrap();
    for l in (0..k - 1).rev() {
        let (h, w, _) = sizes[l];
        let (hh, ww, _) = sizes[l + 1];
        let gband = &gb[l];
        // d/d g_{l+1} from band_l = −up(g_{l+1})
        let total_next = carry.sub(&up_adj(gband, hh, ww));
        carry = gband.add(&down_adj(&total_next, h, w));
    }
    carry
}

// ---- census ----

fn gray(x: &Tensor) -> Vec<f64> {
    x.data().chunks_exact(3).map(|p| LUMA[0] * p[0] + LUMA[1] * p[1] + LUMA[2] * p[2]).collect()
}

#[inline]
fn soft_sign(d: f64) -> f64 {
    d / (CENSUS_SOFT + d * d).sqrt()
}

#[inline]
fn soft_sign_d(d: f64) -> f64 {
    CENSUS_SOFT / (CENSUS_SOFT + d * d).powf(1.5)
}

fn check_census(a: &Tensor, b: &Tensor) -> Result<(usize, usize)> {
    let (h, w, c) = expect_pair(a, b, "census_loss")?;
    if c != 3 {
        return Err(GimmError::ShapeMismatch(format!("census_loss: expected RGB, got {c} channels")));
    }
    let side = 2 * CENSUS_RADIUS + 1;
    if h < side || w < side {
        return Err(GimmError::TooSmall(format!("census needs min dim >= {side}, got {h}x{w}")));
    }
    Ok((h, w))
}

/// Visits `(p, q, δ, dδ/dd_a)` for every interior pixel `p` and window
/// neighbour `q`, where `δ` is the soft-census difference.
fn census_walk(a: &[f64], b: &[f64], h: usize, w: usize, mut f: impl FnMut(usize, usize, f64, f64)) {
    let r = CENSUS_RADIUS as isize;
    for y in CENSUS_RADIUS..h - CENSUS_RADIUS {
        for x in CENSUS_RADIUS..w - CENSUS_RADIUS {
            let p = y * w + x;
            for dy in -r..=r {
                for dx in -r..=r {
                    let q = ((y as isize + dy) as usize) * w + (x as isize + dx) as usize;
                    let da = a[q] - a[p];
                    let db = b[q] - b[p];
                    f(p, q, soft_sign(da) - soft_sign(db), soft_sign_d(da));
                }
            }
        }
    }
}

fn census_count(h: usize, w: usize) -> f64 {
    let side = 2 * CENSUS_RADIUS + 1;
    ((h - 2 * CENSUS_RADIUS) * (w - 2 * CENSUS_RADIUS) * side * side) as f64
}

/// Soft census distance over interior pixels.
pub fn census(a: &Tensor, b: &Tensor) -> Result<f64> {
    let (h, w) = check_census(a, b)?;
    let (ga, gb) = (gray(a), gray(b));
    let mut s = 0.0;
    census_walk(&ga, &gb, h, w, |_, _, dl, _| {
        s += charb_excess(dl * dl / (CENSUS_DIST + dl * dl));
    });
    Ok(CHARBONNIER_EPS + s / census_count(h, w))
}

pub fn census_vjp(a: &Tensor, b: &Tensor, g: f64) -> Tensor {
    let (h, w, _) = a.hwc();
    let (ga, gb) = (gray(a), gray(b));
    let e2 = CHARBONNIER_EPS * CHARBONNIER_EPS;
    let k = g / census_count(h, w);
    let mut gg = vec![0.0; h * w];
    census_walk(&ga, &gb, h, w, |p, q, dl, ds| {
        let den = CENSUS_DIST + dl * dl;
        let dist = dl * dl / den;
        let dc = dist / (dist * dist + e2).sqrt();
        let ddist = 2.0 * dl * CENSUS_DIST / (den * den);
        let v = k * dc * ddist * ds;
        gg[q] += v;
        gg[p] -= v;
    });
    let data = gg.iter().flat_map(|&v| LUMA.map(|l| l * v)).collect();
    Tensor::new(&[h, w, 3], data).unwrap()
}
