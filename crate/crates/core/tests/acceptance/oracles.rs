//! Scalar-loop reference implementations, written independently of the
//! library kernels.

use gimm::Tensor;

pub struct Img {
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub v: Vec<f64>,
}

impl Img {
    pub fn of(t: &Tensor) -> Self {
        let (h, w, c) = t.hwc();
        Self { h, w, c, v: t.data().to_vec() }
    }

    pub fn zeros(h: usize, w: usize, c: usize) -> Self {
        Self { h, w, c, v: vec![0.0; h * w * c] }
    }

    pub fn get(&self, y: usize, x: usize, k: usize) -> f64 {
        self.v[(y * self.w + x) * self.c + k]
    }

    pub fn at_clamped(&self, y: i64, x: i64, k: usize) -> f64 {
        let yy = y.clamp(0, self.h as i64 - 1) as usize;
        let xx = x.clamp(0, self.w as i64 - 1) as usize;
        self.get(yy, xx, k)
    }

    pub fn set(&mut self, y: usize, x: usize, k: usize, val: f64) {
        self.v[(y * self.w + x) * self.c + k] = val;
    }

    pub fn add(&mut self, y: usize, x: usize, k: usize, val: f64) {
        self.v[(y * self.w + x) * self.c + k] += val;
    }
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Bilinear sample at a real position with coordinates clamped to the frame.
pub fn sample_clamped(img: &Img, py: f64, px: f64, k: usize) -> f64 {
    let py = py.max(0.0).min((img.h - 1) as f64);
    let px = px.max(0.0).min((img.w - 1) as f64);
    let y0 = py.floor();
    let x0 = px.floor();
    let fy = py - y0;
    let fx = px - x0;
    let (y0, x0) = (y0 as i64, x0 as i64);
    let a = img.at_clamped(y0, x0, k);
    let b = img.at_clamped(y0, x0 + 1, k);
    let c = img.at_clamped(y0 + 1, x0, k);
    let d = img.at_clamped(y0 + 1, x0 + 1, k);
    a * (1.0 - fx) * (1.0 - fy) + b * fx * (1.0 - fy) + c * (1.0 - fx) * fy + d * fx * fy
}

pub fn backward_warp(field: &Img, flow: &Img) -> Img {
    let mut out = Img::zeros(field.h, field.w, field.c);
    for y in 0..field.h {
        for x in 0..field.w {
            let u = flow.get(y, x, 0);
            let v = flow.get(y, x, 1);
            for k in 0..field.c {
                out.set(y, x, k, sample_clamped(field, y as f64 + v, x as f64 + u, k));
            }
        }
    }
    out
}

/// Returns `(normalized output, accumulated weight)`.
pub fn forward_splat(field: &Img, flow: &Img, z: &Img, softmax: bool) -> (Img, Img) {
    let (h, w, c) = (field.h, field.w, field.c);
    let mut num = Img::zeros(h, w, c);
    let mut den = Img::zeros(h, w, 1);
    for y in 0..h {
        for x in 0..w {
            let weight = if softmax { z.get(y, x, 0).exp() } else { z.get(y, x, 0) };
            let tx = x as f64 + flow.get(y, x, 0);
            let ty = y as f64 + flow.get(y, x, 1);
            let (bx, by) = (tx.floor(), ty.floor());
            for (qy, qx) in [(by, bx), (by, bx + 1.0), (by + 1.0, bx), (by + 1.0, bx + 1.0)] {
                if qx < 0.0 || qy < 0.0 || qx > (w - 1) as f64 || qy > (h - 1) as f64 {
                    continue;
                }
                let bil = (1.0 - (tx - qx).abs()) * (1.0 - (ty - qy).abs());
                let (qy, qx) = (qy as usize, qx as usize);
                den.add(qy, qx, 0, bil * weight);
                for k in 0..c {
                    num.add(qy, qx, k, bil * weight * field.get(y, x, k));
                }
            }
        }
    }
    for y in 0..h {
        for x in 0..w {
            let d = den.get(y, x, 0);
            for k in 0..c {
                let v = if d > 1e-8 { num.get(y, x, k) / d } else { 0.0 };
                num.set(y, x, k, v);
            }
        }
    }
    (num, den)
}

pub fn gaussian3x3(f: &Img) -> Img {
    let k1 = [1.0, 2.0, 1.0];
    let mut out = Img::zeros(f.h, f.w, f.c);
    for y in 0..f.h {
        for x in 0..f.w {
            for k in 0..f.c {
                let mut s = 0.0;
                for dy in -1i64..=1 {
                    for dx in -1i64..=1 {
                        s += k1[(dy + 1) as usize] * k1[(dx + 1) as usize] / 16.0 * f.at_clamped(y as i64 + dy, x as i64 + dx, k);
                    }
                }
                out.set(y, x, k, s);
            }
        }
    }
    out
}

pub fn flow_consistency(fwd: &Img, bwd: &Img) -> Img {
    let warped = backward_warp(bwd, fwd);
    let mut out = Img::zeros(fwd.h, fwd.w, 1);
    for y in 0..fwd.h {
        for x in 0..fwd.w {
            let s = (fwd.get(y, x, 0) + warped.get(y, x, 0)).abs() + (fwd.get(y, x, 1) + warped.get(y, x, 1)).abs();
            out.set(y, x, 0, s);
        }
    }
    out
}

pub fn flow_variance(f: &Img) -> Img {
    let mean = gaussian3x3(f);
    let sq = Img { h: f.h, w: f.w, c: f.c, v: f.v.iter().map(|v| v * v).collect() };
    let mean_sq = gaussian3x3(&sq);
    let mut out = Img::zeros(f.h, f.w, 1);
    for y in 0..f.h {
        for x in 0..f.w {
            let mut s = 0.0;
            for k in 0..f.c {
                let var = mean_sq.get(y, x, k) - mean.get(y, x, k).powi(2);
                s += var.max(0.0);
            }
            out.set(y, x, 0, s.sqrt());
        }
    }
    out
}

pub fn splat_weights(uf: &[f64], uv: &[f64], af: f64, av: f64) -> Vec<f64> {
    uf.iter().zip(uv).map(|(a, b)| 1.0 / (1.0 + af * a) + 1.0 / (1.0 + av * b)).collect()
}

pub fn charbonnier(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        s += ((a[i] - b[i]).powi(2) + 1e-6).powf(0.5);
    }
    s / a.len() as f64
}

fn blur5(f: &Img) -> Img {
    let k1 = [1.0, 4.0, 6.0, 4.0, 1.0];
    let mut out = Img::zeros(f.h, f.w, f.c);
    for y in 0..f.h {
        for x in 0..f.w {
            for k in 0..f.c {
                let mut s = 0.0;
                for dy in -2i64..=2 {
                    for dx in -2i64..=2 {
                        s += k1[(dy + 2) as usize] * k1[(dx + 2) as usize] / 256.0 * f.at_clamped(y as i64 + dy, x as i64 + dx, k);
                    }
                }
                out.set(y, x, k, s);
            }
        }
    }
    out
}

fn downsample(f: &Img) -> Img {
    let b = blur5(f);
    let (h, w) = ((f.h + 1) / 2, (f.w + 1) / 2);
    let mut out = Img::zeros(h, w, f.c);
    for y in 0..h {
        for x in 0..w {
            for k in 0..f.c {
                out.set(y, x, k, b.get(2 * y, 2 * x, k));
            }
        }
    }
    out
}

fn upsample(f: &Img, h: usize, w: usize) -> Img {
    let mut out = Img::zeros(h, w, f.c);
    for y in 0..h {
        for x in 0..w {
            for k in 0..f.c {
                out.set(y, x, k, sample_clamped(f, y as f64 / 2.0, x as f64 / 2.0, k));
            }
        }
    }
    out
}

pub fn laplacian(a: &Img, b: &Img) -> f64 {
    let mut g = Img { h: a.h, w: a.w, c: a.c, v: a.v.iter().zip(&b.v).map(|(x, y)| x - y).collect() };
    let mut total = 0.0;
    for level in 0..5 {
        if level == 4 {
            total += 16.0 * g.v.iter().map(|v| v.abs()).sum::<f64>() / g.v.len() as f64;
            break;
        }
        let next = downsample(&g);
        let up = upsample(&next, g.h, g.w);
        let band: f64 = g.v.iter().zip(&up.v).map(|(x, y)| (x - y).abs()).sum();
        total += (1 << level) as f64 * band / g.v.len() as f64;
        g = next;
    }
    total
}

fn luma(img: &Img, y: usize, x: usize) -> f64 {
    0.299 * img.get(y, x, 0) + 0.587 * img.get(y, x, 1) + 0.114 * img.get(y, x, 2)
}

pub fn census(a: &Img, b: &Img) -> f64 {
    let soft = |d: f64| d / (0.81 + d * d).sqrt();
    let mut total = 0.0;
    let mut n = 0usize;
    for y in 3..a.h - 3 {
        for x in 3..a.w - 3 {
            let mut px = 0.0;
            for dy in -3i64..=3 {
                for dx in -3i64..=3 {
                    let (yy, xx) = ((y as i64 + dy) as usize, (x as i64 + dx) as usize);
                    let ca = soft(luma(a, yy, xx) - luma(a, y, x));
                    let cb = soft(luma(b, yy, xx) - luma(b, y, x));
                    let dist = (ca - cb).powi(2) / (0.1 + (ca - cb).powi(2));
                    px += (dist * dist + 1e-6).sqrt();
                }
            }
            total += px / 49.0;
            n += 1;
        }
    }
    total / n as f64
}

pub fn epe(a: &Img, b: &Img) -> f64 {
    let mut s = 0.0;
    for y in 0..a.h {
        for x in 0..a.w {
            let du = a.get(y, x, 0) - b.get(y, x, 0);
            let dv = a.get(y, x, 1) - b.get(y, x, 1);
            s += (du * du + dv * dv).sqrt();
        }
    }
    s / (a.h * a.w) as f64
}

pub fn psnr(a: &[f64], b: &[f64]) -> f64 {
    let mse = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64;
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (1.0 / mse).log10()
    }
}
