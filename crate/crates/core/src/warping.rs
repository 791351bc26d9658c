//! Numeric warping kernels: bilinear backward warping, metric-weighted forward
//! splatting, flow consistency / variance metrics and the 3×3 Gaussian.
//!
//! Every kernel works on `H×W×C` tensors and ships with a hand-written
//! vector-Jacobian product so the autodiff tape can route gradients through
//! it. Out-of-frame reads use replicate padding.

use serde::{Deserialize, Serialize};

use crate::error::{GimmError, Result};
use crate::tensor::Tensor;

/// `H×W×C` tensor carrying frames, flows or feature maps.
pub type FieldND = Tensor;
/// `H×W×1` nonnegative metric map.
pub type MetricMap = Tensor;
/// `H×W×1` splatting importance map.
pub type WeightMap = Tensor;

/// Denominator below which a splatted pixel counts as a hole.
pub const SPLAT_EPS: f64 = 1e-8;
const WEIGHT_EPS: f64 = 1e-6;

/// How splatting importance scores turn into accumulation weights.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplatMode {
    /// `exp(z)` weighting.
    #[default]
    Softmax,
    /// `z` used directly.
    Linear,
}

impl SplatMode {
    #[inline]
    fn weight(self, z: f64) -> f64 {
        match self {
            SplatMode::Softmax => z.exp(),
            SplatMode::Linear => z,
        }
    }

    #[inline]
    fn dweight(self, z: f64) -> f64 {
        match self {
            SplatMode::Softmax => z.exp(),
            SplatMode::Linear => 1.0,
        }
    }
}

fn check_flow_for(field: &Tensor, flow: &Tensor, what: &str) -> Result<()> {
    if !field.is_hwc() || !flow.is_hwc() {
        return Err(GimmError::ShapeMismatch(format!("{what}: expected HxWxC tensors")));
    }
    let (h, w, _) = field.hwc();
    let (fh, fw, fc) = flow.hwc();
    if (fh, fw, fc) != (h, w, 2) {
        return Err(GimmError::ShapeMismatch(format!(
            "{what}: field {h}x{w} vs flow {fh}x{fw}x{fc}"
        )));
    }
    Ok(())
}

/// Clamped bilinear footprint along one axis: `(i0, i1, frac, clamped)`.
#[inline]
fn footprint(pos: f64, n: usize) -> (usize, usize, f64, bool) {
    if n == 1 {
        return (0, 0, 0.0, true);
    }
    let max = (n - 1) as f64;
    let clamped = !(0.0..=max).contains(&pos);
    let p = pos.clamp(0.0, max);
    let i0 = (p.floor() as usize).min(n - 2);
    (i0, i0 + 1, p - i0 as f64, clamped)
}

/// Samples `field` at `(x + u, y + v)` per pixel with bilinear interpolation.
pub fn backward_warp(field: &FieldND, flow: &Tensor) -> Result<FieldND> {
    check_flow_for(field, flow, "backward_warp")?;
    let (h, w, c) = field.hwc();
    let src = field.data();
    let fl = flow.data();
    let mut out = vec![0.0; h * w * c];
    for y in 0..h {
        for x in 0..w {
            let p = y * w + x;
            let (x0, x1, fx, _) = footprint(x as f64 + fl[2 * p], w);
            let (y0, y1, fy, _) = footprint(y as f64 + fl[2 * p + 1], h);
            let w00 = (1.0 - fx) * (1.0 - fy);
            let w01 = fx * (1.0 - fy);
            let w10 = (1.0 - fx) * fy;
            let w11 = fx * fy;
            let (a, b, cc, d) = (
                (y0 * w + x0) * c,
                (y0 * w + x1) * c,
                (y1 * w + x0) * c,
                (y1 * w + x1) * c,
            );
            for k in 0..c {
                out[p * c + k] = w00 * src[a + k] + w01 * src[b + k] + w10 * src[cc + k] + w11 * src[d + k];
            }
        }
    }
    Tensor::new(&[h, w, c], out)
}

/// Vector-Jacobian product of [`backward_warp`] w.r.t. the field and the flow.
pub fn backward_warp_vjp(
    field: &FieldND,
    flow: &Tensor,
    grad_out: &Tensor,
    want_field: bool,
    want_flow: bool,
) -> (Option<Tensor>, Option<Tensor>) {
    let (h, w, c) = field.hwc();
    let src = field.data();
    let fl = flow.data();
    let g = grad_out.data();
    let mut gfield = want_field.then(|| vec![0.0; h * w * c]);
    let mut gflow = want_flow.then(|| vec![0.0; h * w * 2]);
    for y in 0..h {
        for x in 0..w {
            let p = y * w + x;
            let (x0, x1, fx, cx) = footprint(x as f64 + fl[2 * p], w);
            let (y0, y1, fy, cy) = footprint(y as f64 + fl[2 * p + 1], h);
            let (a, b, cc, d) = (
                (y0 * w + x0) * c,
                (y1 * w + x0) * c,
                (y0 * w + x1) * c,
                (y1 * w + x1) * c,
            );
            let gp = &g[p * c..(p + 1) * c];
            if let Some(gf) = gfield.as_mut() {
                let w00 = (1.0 - fx) * (1.0 - fy);
                let w01 = fx * (1.0 - fy);
                let w10 = (1.0 - fx) * fy;
                let w11 = fx * fy;
                for k in 0..c {
                    gf[a + k] += w00 * gp[k];
                    gf[cc + k] += w01 * gp[k];
                    gf[b + k] += w10 * gp[k];
                    gf[d + k] += w11 * gp[k];
                }
            }
            if let Some(gq) = gflow.as_mut() {
                let mut du = 0.0;
                let mut dv = 0.0;
                for k in 0..c {
                    let (v00, v01, v10, v11) = (src[a + k], src[cc + k], src[b + k], src[d + k]);
                    du += gp[k] * ((1.0 - fy) * (v01 - v00) + fy * (v11 - v10));
                    dv += gp[k] * ((1.0 - fx) * (v10 - v00) + fx * (v11 - v01));
                }
                if !cx {
                    gq[2 * p] += du;
                }
                if !cy {
                    gq[2 * p + 1] += dv;
                }
            }
        }
    }
    (
        gfield.map(|d| Tensor::new(&[h, w, c], d).unwrap()),
        gflow.map(|d| Tensor::new(&[h, w, 2], d).unwrap()),
    )
}

const GAUSS3: [f64; 3] = [0.25, 0.5, 0.25];

/// Separable `[1, 2, 1] / 4` filter per axis (total `/16`), replicate padding.
pub fn gaussian3x3(field: &FieldND) -> FieldND {
    let (h, w, c) = field.hwc();
    let src = field.data();
    let mut tmp = vec![0.0; h * w * c];
    for y in 0..h {
        for x in 0..w {
            for (o, &kw) in GAUSS3.iter().enumerate() {
                let xs = (x as isize + o as isize - 1).clamp(0, w as isize - 1) as usize;
                let (dst, s) = ((y * w + x) * c, (y * w + xs) * c);
                for k in 0..c {
                    tmp[dst + k] += kw * src[s + k];
                }
            }
        }
    }
    let mut out = vec![0.0; h * w * c];
    for y in 0..h {
        for (o, &kw) in GAUSS3.iter().enumerate() {
            let ys = (y as isize + o as isize - 1).clamp(0, h as isize - 1) as usize;
            for x in 0..w {
                let (dst, s) = ((y * w + x) * c, (ys * w + x) * c);
                for k in 0..c {
                    out[dst + k] += kw * tmp[s + k];
                }
            }
        }
    }
    Tensor::new(&[h, w, c], out).unwrap()
}

/// Adjoint of [`gaussian3x3`].
pub fn gaussian3x3_vjp(grad_out: &Tensor) -> Tensor {
    let (h, w, c) = grad_out.hwc();
    let g = grad_out.data();
    let mut tmp = vec![0.0; h * w * c];
    for y in 0..h {
        for (o, &kw) in GAUSS3.iter().enumerate() {
            let ys = (y as isize + o as isize - 1).clamp(0, h as isize - 1) as usize;
            for x in 0..w {
                let (src, dst) = ((y * w + x) * c, (ys * w + x) * c);
                for k in 0..c {
                    tmp[dst + k] += kw * g[src + k];
                }
            }
        }
    }
    let mut out = vec![0.0; h * w * c];
    for y in 0..h {
        for x in 0..w {
            for (o, &kw) in GAUSS3.iter().enumerate() {
                let xs = (x as isize + o as isize - 1).clamp(0, w as isize - 1) as usize;
                let (src, dst) = ((y * w + x) * c, (y * w + xs) * c);
                for k in 0..c {
                    out[dst + k] += kw * tmp[src + k];
                }
            }
        }
    }
    Tensor::new(&[h, w, c], out).unwrap()
}

/// `|| f_fwd + backward_warp(f_bwd, f_fwd) ||_1` per pixel. Swap the arguments
/// for the other direction.
pub fn flow_consistency(f_fwd: &Tensor, f_bwd: &Tensor) -> Result<MetricMap> {
    f_fwd.expect_same_shape(f_bwd, "flow_consistency")?;
    let warped = backward_warp(f_bwd, f_fwd)?;
    let (h, w, _) = f_fwd.hwc();
    let data = f_fwd
        .data()
        .chunks_exact(2)
        .zip(warped.data().chunks_exact(2))
        .map(|(a, b)| (a[0] + b[0]).abs() + (a[1] + b[1]).abs())
        .collect();
    Tensor::new(&[h, w, 1], data)
}

/// Local flow standard deviation: per channel `sqrt(max(G(F²) − G(F)², 0))`,
/// combined with an L2 norm over channels.
pub fn flow_variance(f: &Tensor) -> MetricMap {
    let (h, w, c) = f.hwc();
    let mean = gaussian3x3(f);
    let mean_sq = gaussian3x3(&f.map(|v| v * v));
    let data = mean_sq
        .data()
        .chunks_exact(c)
        .zip(mean.data().chunks_exact(c))
        .map(|(m2, m)| {
            m2.iter()
                .zip(m)
                .map(|(a, b)| (a - b * b).max(0.0))
                .sum::<f64>()
                .sqrt()
        })
        .collect();
    Tensor::new(&[h, w, 1], data).unwrap()
}

/// `Z = 1 / (1 + α_flow·U_flow) + 1 / (1 + α_var·U_var)` elementwise.
pub fn splat_weights(u_flow: &MetricMap, u_var: &MetricMap, alpha_flow: f64, alpha_var: f64) -> Result<WeightMap> {
    u_flow.expect_same_shape(u_var, "splat_weights")?;
    let mut out = Vec::with_capacity(u_flow.len());
    for (&uf, &uv) in u_flow.data().iter().zip(u_var.data()) {
        let (d1, d2) = (1.0 + alpha_flow * uf, 1.0 + alpha_var * uv);
        if d1 <= WEIGHT_EPS {
            return Err(GimmError::DegenerateWeight(d1));
        }
        if d2 <= WEIGHT_EPS {
            return Err(GimmError::DegenerateWeight(d2));
        }
        out.push(1.0 / d1 + 1.0 / d2);
    }
    Tensor::new(u_flow.shape(), out)
}

/// Gradients of [`splat_weights`] w.r.t. `(u_flow, u_var, α_flow, α_var)`.
pub fn splat_weights_vjp(
    u_flow: &MetricMap,
    u_var: &MetricMap,
    alpha_flow: f64,
    alpha_var: f64,
    grad_out: &Tensor,
) -> (Tensor, Tensor, f64, f64) {
    let mut g_uf = Vec::with_capacity(u_flow.len());
    let mut g_uv = Vec::with_capacity(u_flow.len());
    let (mut g_af, mut g_av) = (0.0, 0.0);
    for ((&uf, &uv), &g) in u_flow.data().iter().zip(u_var.data()).zip(grad_out.data()) {
        let (d1, d2) = (1.0 + alpha_flow * uf, 1.0 + alpha_var * uv);
        let (i1, i2) = (-g / (d1 * d1), -g / (d2 * d2));
        g_uf.push(i1 * alpha_flow);
        g_uv.push(i2 * alpha_var);
        g_af += i1 * uf;
        g_av += i2 * uv;
    }
    (
        Tensor::new(u_flow.shape(), g_uf).unwrap(),
        Tensor::new(u_flow.shape(), g_uv).unwrap(),
        g_af,
        g_av,
    )
}

/// Forward splatting with softmax (`exp(z)`) weighting.
pub fn forward_splat(field: &FieldND, flow: &Tensor, z: &WeightMap) -> Result<(FieldND, MetricMap)> {
    forward_splat_with(field, flow, z, SplatMode::Softmax)
}

/// Scatters every source pixel `p` to the four integer neighbours of
/// `p + flow(p)` with bilinear weights scaled by `mode(z(p))`, then divides by
/// the accumulated weight. Pixels whose accumulated weight is at most
/// [`SPLAT_EPS`] are holes and emit 0. Returns the output and the accumulated
/// weight (coverage) map. Contributions landing off-frame are dropped.
pub fn forward_splat_with(
    field: &FieldND,
    flow: &Tensor,
    z: &WeightMap,
    mode: SplatMode,
) -> Result<(FieldND, MetricMap)> {
    check_flow_for(field, flow, "forward_splat")?;
    let (h, w, c) = field.hwc();
    if z.shape() != [h, w, 1] {
        return Err(GimmError::ShapeMismatch(format!(
            "forward_splat: weight map {:?} vs field {h}x{w}",
            z.shape()
        )));
    }
    if flow.data().iter().all(|&v| v == 0.0) {
        // every pixel lands on itself with bilinear weight 1
        let den = z.data().iter().map(|&zv| mode.weight(zv)).collect::<Vec<_>>();
        let out = field
            .data()
            .chunks_exact(c)
            .zip(&den)
            .flat_map(|(px, &d)| px.iter().map(move |&v| if d > SPLAT_EPS { v } else { 0.0 }))
            .collect();
        return Ok((
            Tensor::new(&[h, w, c], out).unwrap(),
            Tensor::new(&[h, w, 1], den).unwrap(),
        ));
    }
    let (num, den) = splat_accumulate(field, flow, z, mode);
    let mut out = num;
    for p in 0..h * w {
        let d = den[p];
        for k in 0..c {
            out[p * c + k] = if d > SPLAT_EPS { out[p * c + k] / d } else { 0.0 };
        }
    }
    Ok((
        Tensor::new(&[h, w, c], out).unwrap(),
        Tensor::new(&[h, w, 1], den).unwrap(),
    ))
}

/// Visits the in-frame bilinear targets of source pixel `(x, y)` displaced by `(u, v)`.
#[inline]
fn for_each_target(
    x: usize,
    y: usize,
    u: f64,
    v: f64,
    h: usize,
    w: usize,
    mut f: impl FnMut(usize, f64, f64, f64),
) {
    let tx = x as f64 + u;
    let ty = y as f64 + v;
    let fx0 = tx.floor();
    let fy0 = ty.floor();
    let ax = tx - fx0;
    let ay = ty - fy0;
    // (dx, dy, weight, d weight / d ax, d weight / d ay)
    let taps = [
        (0, 0, (1.0 - ax) * (1.0 - ay), -(1.0 - ay), -(1.0 - ax)),
        (1, 0, ax * (1.0 - ay), 1.0 - ay, -ax),
        (0, 1, (1.0 - ax) * ay, -ay, 1.0 - ax),
        (1, 1, ax * ay, ay, ax),
    ];
    for (dx, dy, wt, dwx, dwy) in taps {
        let qx = fx0 + dx as f64;
        let qy = fy0 + dy as f64;
        if qx < 0.0 || qy < 0.0 || qx >= w as f64 || qy >= h as f64 {
            continue;
        }
        let q = qy as usize * w + qx as usize;
        f(q, wt, dwx, dwy);
    }
}

fn splat_accumulate(field: &Tensor, flow: &Tensor, z: &Tensor, mode: SplatMode) -> (Vec<f64>, Vec<f64>) {
    let (h, w, c) = field.hwc();
    let src = field.data();
    let fl = flow.data();
    let zs = z.data();
    let mut num = vec![0.0; h * w * c];
    let mut den = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let p = y * w + x;
            let e = mode.weight(zs[p]);
            for_each_target(x, y, fl[2 * p], fl[2 * p + 1], h, w, |q, wt, _, _| {
                let s = wt * e;
                den[q] += s;
                for k in 0..c {
                    num[q * c + k] += s * src[p * c + k];
                }
            });
        }
    }
    (num, den)
}

/// Gradients of [`forward_splat_with`]'s first output w.r.t. field, flow and z.
pub struct SplatGrads {
    pub field: Option<Tensor>,
    pub flow: Option<Tensor>,
    pub z: Option<Tensor>,
}

pub fn forward_splat_vjp(
    field: &FieldND,
    flow: &Tensor,
    z: &WeightMap,
    mode: SplatMode,
    grad_out: &Tensor,
    want: [bool; 3],
) -> SplatGrads {
    let (h, w, c) = field.hwc();
    let (num, den) = splat_accumulate(field, flow, z, mode);
    let g = grad_out.data();
    // gradient w.r.t. the accumulated numerator and denominator
    let mut gnum = vec![0.0; h * w * c];
    let mut gden = vec![0.0; h * w];
    for q in 0..h * w {
        let d = den[q];
        if d > SPLAT_EPS {
            let mut acc = 0.0;
            for k in 0..c {
                gnum[q * c + k] = g[q * c + k] / d;
                acc += g[q * c + k] * num[q * c + k];
            }
            gden[q] = -acc / (d * d);
        }
    }
    let src = field.data();
    let fl = flow.data();
    let zs = z.data();
    let mut gfield = want[0].then(|| vec![0.0; h * w * c]);
    let mut gflow = want[1].then(|| vec![0.0; h * w * 2]);
    let mut gz = want[2].then(|| vec![0.0; h * w]);
    for y in 0..h {
        for x in 0..w {
            let p = y * w + x;
            let e = mode.weight(zs[p]);
            let (mut de, mut dax, mut day) = (0.0, 0.0, 0.0);
            for_each_target(x, y, fl[2 * p], fl[2 * p + 1], h, w, |q, wt, dwx, dwy| {
                let mut s = gden[q];
                for k in 0..c {
                    s += src[p * c + k] * gnum[q * c + k];
                }
                if let Some(gf) = gfield.as_mut() {
                    for k in 0..c {
                        gf[p * c + k] += wt * e * gnum[q * c + k];
                    }
                }
                de += wt * s;
                dax += dwx * e * s;
                day += dwy * e * s;
            });
            if let Some(gq) = gflow.as_mut() {
                gq[2 * p] = dax;
                gq[2 * p + 1] = day;
            }
            if let Some(gzv) = gz.as_mut() {
                gzv[p] = de * mode.dweight(zs[p]);
            }
        }
    }
    SplatGrads {
        field: gfield.map(|d| Tensor::new(&[h, w, c], d).unwrap()),
        flow: gflow.map(|d| Tensor::new(&[h, w, 2], d).unwrap()),
        z: gz.map(|d| Tensor::new(&[h, w, 1], d).unwrap()),
    }
}
