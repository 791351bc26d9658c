//! A small reverse-mode autodiff tape over [`Tensor`]s.
//!
//! Nodes are appended in evaluation order; [`Graph::backward`] walks them in
//! reverse. Nodes whose inputs carry no gradient keep only their value, so a
//! graph built from leaves alone is a plain forward evaluation.

use crate::tensor::Tensor;
use crate::warping::{self, SplatMode};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

/// Backward rule: `(grad_out, parent values, output value, wanted parents)`
/// to one optional gradient per parent.
pub type BackFn = Box<dyn Fn(&Tensor, &[&Tensor], &Tensor, &[bool]) -> Vec<Option<Tensor>>>;

struct Node {
    value: Tensor,
    needs_grad: bool,
    parents: Vec<usize>,
    backward: Option<BackFn>,
}

/// Zero or replicate border handling for 3×3 convolutions.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Pad {
    Zero,
    Replicate,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients of a scalar w.r.t. the graph's trainable leaves.
pub struct Grads {
    grads: Vec<Option<Tensor>>,
}

impl Grads {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Tensor, parents: &[Var], backward: Option<BackFn>) -> Var {
        let needs_grad = parents.iter().any(|p| self.nodes[p.0].needs_grad);
        self.nodes.push(Node {
            value,
            needs_grad,
            parents: if needs_grad { parents.iter().map(|p| p.0).collect() } else { Vec::new() },
            backward: if needs_grad { backward } else { None },
        });
        Var(self.nodes.len() - 1)
    }

    /// Constant input.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            needs_grad: false,
            parents: Vec::new(),
            backward: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Trainable leaf whose gradient [`Graph::backward`] reports.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            needs_grad: true,
            parents: Vec::new(),
            backward: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn needs_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Node with a caller-supplied backward rule.
    pub fn custom(&mut self, parents: &[Var], value: Tensor, backward: BackFn) -> Var {
        self.push(value, parents, Some(backward))
    }

    /// Reverse sweep from a scalar node.
    pub fn backward(&self, loss: Var) -> Grads {
        assert_eq!(self.nodes[loss.0].value.len(), 1, "backward needs a scalar output");
        let n = self.nodes.len();
        let mut grads: Vec<Option<Tensor>> = (0..n).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.nodes[loss.0].value.shape(), 1.0));
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            let Some(back) = node.backward.as_ref() else { continue };
            let Some(g) = grads[i].take() else { continue };
            let pvals: Vec<&Tensor> = node.parents.iter().map(|&p| &self.nodes[p].value).collect();
            let want: Vec<bool> = node.parents.iter().map(|&p| self.nodes[p].needs_grad).collect();
            let pg = back(&g, &pvals, &node.value, &want);
            for ((&p, gp), &wanted) in node.parents.iter().zip(pg).zip(&want) {
                if !wanted {
                    continue;
                }
                if let Some(gp) = gp {
                    debug_assert_eq!(gp.shape(), self.nodes[p].value.shape());
                    match grads[p].as_mut() {
                        Some(acc) => acc.add_assign(&gp),
                        None => grads[p] = Some(gp),
                    }
                }
            }
        }
        Grads { grads }
    }

    // ---- elementwise ----

    fn unary(
        &mut self,
        x: Var,
        f: impl Fn(f64) -> f64,
        df: impl Fn(f64, f64) -> f64 + 'static,
    ) -> Var {
        let value = self.value(x).map(f);
        self.push(
            value,
            &[x],
            Some(Box::new(move |g, p, out, _| {
                let data = p[0]
                    .data()
                    .iter()
                    .zip(out.data())
                    .zip(g.data())
                    .map(|((&xv, &yv), &gv)| gv * df(xv, yv))
                    .collect();
                vec![Some(Tensor::new(p[0].shape(), data).unwrap())]
            })),
        )
    }

    /// `sin(ω·x)`
    pub fn sin_scaled(&mut self, x: Var, omega: f64) -> Var {
        self.unary(x, move |v| (omega * v).sin(), move |v, _| omega * (omega * v).cos())
    }

    /// `x·σ(x)`
    pub fn silu(&mut self, x: Var) -> Var {
        self.unary(
            x,
            |v| v * sigmoid(v),
            |v, _| {
                let s = sigmoid(v);
                s * (1.0 + v * (1.0 - s))
            },
        )
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, sigmoid, |_, y| y * (1.0 - y))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, f64::tanh, |_, y| 1.0 - y * y)
    }

    pub fn softplus(&mut self, x: Var) -> Var {
        self.unary(x, softplus, |v, _| sigmoid(v))
    }

    /// `a·x + b`
    pub fn affine(&mut self, x: Var, a: f64, b: f64) -> Var {
        self.unary(x, move |v| a * v + b, move |_, _| a)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).add(self.value(b));
        self.push(value, &[a, b], Some(Box::new(|g, _, _, _| vec![Some(g.clone()), Some(g.clone())])))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).sub(self.value(b));
        self.push(
            value,
            &[a, b],
            Some(Box::new(|g, _, _, w| vec![Some(g.clone()), w[1].then(|| g.scale(-1.0))])),
        )
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y);
        self.push(
            value,
            &[a, b],
            Some(Box::new(|g, p, _, w| {
                vec![
                    w[0].then(|| g.zip_map(p[1], |gv, y| gv * y)),
                    w[1].then(|| g.zip_map(p[0], |gv, x| gv * x)),
                ]
            })),
        )
    }

    /// Multiplies every channel of an `H×W×C` tensor by an `H×W×1` map.
    pub fn mul_mask(&mut self, x: Var, m: Var) -> Var {
        let (h, w, c) = self.value(x).hwc();
        assert_eq!(self.value(m).shape(), [h, w, 1]);
        let xv = self.value(x).data();
        let mv = self.value(m).data();
        let data = (0..h * w * c).map(|i| xv[i] * mv[i / c]).collect();
        let value = Tensor::new(&[h, w, c], data).unwrap();
        self.push(
            value,
            &[x, m],
            Some(Box::new(move |g, p, _, want| {
                let gd = g.data();
                let gx = want[0].then(|| {
                    let mv = p[1].data();
                    let d = (0..h * w * c).map(|i| gd[i] * mv[i / c]).collect();
                    Tensor::new(&[h, w, c], d).unwrap()
                });
                let gm = want[1].then(|| {
                    let xv = p[0].data();
                    let d = (0..h * w)
                        .map(|q| (0..c).map(|k| gd[q * c + k] * xv[q * c + k]).sum())
                        .collect();
                    Tensor::new(&[h, w, 1], d).unwrap()
                });
                vec![gx, gm]
            })),
        )
    }

    /// Scales `x` by a single-element tensor.
    pub fn mul_scalar(&mut self, x: Var, s: Var) -> Var {
        let k = self.value(s).item();
        let value = self.value(x).scale(k);
        self.push(
            value,
            &[x, s],
            Some(Box::new(|g, p, _, want| {
                let k = p[1].item();
                vec![
                    want[0].then(|| g.scale(k)),
                    want[1].then(|| {
                        let d: f64 = g.data().iter().zip(p[0].data()).map(|(a, b)| a * b).sum();
                        Tensor::scalar(d)
                    }),
                ]
            })),
        )
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let value = Tensor::scalar(self.value(x).sum());
        self.push(
            value,
            &[x],
            Some(Box::new(|g, p, _, _| vec![Some(Tensor::full(p[0].shape(), g.item()))])),
        )
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).len() as f64;
        let s = self.sum(x);
        self.affine(s, 1.0 / n, 0.0)
    }

    /// Sum of several scalars, each weighted.
    pub fn weighted_sum(&mut self, terms: &[(Var, f64)]) -> Var {
        let value = Tensor::scalar(terms.iter().map(|&(v, k)| k * self.value(v).item()).sum());
        let ks: Vec<f64> = terms.iter().map(|t| t.1).collect();
        let vars: Vec<Var> = terms.iter().map(|t| t.0).collect();
        self.push(
            value,
            &vars,
            Some(Box::new(move |g, _, _, _| ks.iter().map(|&k| Some(Tensor::scalar(k * g.item()))).collect())),
        )
    }

    // ---- layout ----

    pub fn concat_channels(&mut self, parts: &[Var]) -> Var {
        let tensors: Vec<&Tensor> = parts.iter().map(|&v| self.value(v)).collect();
        let widths: Vec<usize> = tensors.iter().map(|t| t.hwc().2).collect();
        let value = Tensor::concat_channels(&tensors).expect("concat: spatial dims differ");
        self.push(
            value,
            parts,
            Some(Box::new(move |g, _, _, want| {
                let mut start = 0;
                widths
                    .iter()
                    .zip(want)
                    .map(|(&c, &wnt)| {
                        let s = start;
                        start += c;
                        wnt.then(|| g.slice_channels(s, c))
                    })
                    .collect()
            })),
        )
    }

    pub fn slice_channels(&mut self, x: Var, start: usize, len: usize) -> Var {
        let value = self.value(x).slice_channels(start, len);
        let c = self.value(x).hwc().2;
        self.push(
            value,
            &[x],
            Some(Box::new(move |g, p, _, _| {
                let (h, w, _) = p[0].hwc();
                let mut d = vec![0.0; h * w * c];
                for q in 0..h * w {
                    d[q * c + start..q * c + start + len].copy_from_slice(&g.data()[q * len..(q + 1) * len]);
                }
                vec![Some(Tensor::new(&[h, w, c], d).unwrap())]
            })),
        )
    }

    // ---- dense layers ----

    /// Per-position affine map over the last axis: `x·W + b` with `W` of
    /// shape `[in, out]` and `b` of shape `[out]`.
    pub fn linear(&mut self, x: Var, wt: Var, b: Var) -> Var {
        let xs = self.value(x).shape().to_vec();
        let cin = *xs.last().unwrap();
        let (win, cout) = (self.value(wt).shape()[0], self.value(wt).shape()[1]);
        assert_eq!(cin, win, "linear: input width {cin} vs weight rows {win}");
        let rows = self.value(x).len() / cin;
        let mut out = vec![0.0; rows * cout];
        let bias = self.value(b).data();
        for r in 0..rows {
            out[r * cout..(r + 1) * cout].copy_from_slice(bias);
        }
        gemm(rows, cin, cout, self.value(x).data(), false, self.value(wt).data(), false, &mut out, 1.0);
        let mut oshape = xs.clone();
        *oshape.last_mut().unwrap() = cout;
        let value = Tensor::new(&oshape, out).unwrap();
        self.push(
            value,
            &[x, wt, b],
            Some(Box::new(move |g, p, _, want| {
                let gd = g.data();
                let gx = want[0].then(|| {
                    let mut d = vec![0.0; rows * cin];
                    gemm(rows, cout, cin, gd, false, p[1].data(), true, &mut d, 0.0);
                    Tensor::new(p[0].shape(), d).unwrap()
                });
                let gw = want[1].then(|| {
                    let mut d = vec![0.0; cin * cout];
                    gemm(cin, rows, cout, p[0].data(), true, gd, false, &mut d, 0.0);
                    Tensor::new(&[cin, cout], d).unwrap()
                });
                let gb = want[2].then(|| Tensor::new(&[cout], column_sums(gd, rows, cout)).unwrap());
                vec![gx, gw, gb]
            })),
        )
    }

    /// 3×3 same-size convolution of an `H×W×Cin` map. `W` has shape
    /// `[9·Cin, Cout]` with rows ordered `(ky, kx, cin)`.
    pub fn conv3x3(&mut self, x: Var, wt: Var, b: Var, pad: Pad) -> Var {
        self.conv3x3_dilated(x, wt, b, pad, 1)
    }

    /// [`Graph::conv3x3`] with taps spaced `dil` pixels apart.
    pub fn conv3x3_dilated(&mut self, x: Var, wt: Var, b: Var, pad: Pad, dil: usize) -> Var {
        assert!(dil >= 1, "conv3x3: dilation must be >= 1");
        let (h, w, cin) = self.value(x).hwc();
        let (krows, cout) = (self.value(wt).shape()[0], self.value(wt).shape()[1]);
        assert_eq!(krows, 9 * cin, "conv3x3: weight rows {krows} vs 9x{cin}");
        let col = im2col(self.value(x), pad, dil);
        let n = h * w;
        let mut out = vec![0.0; n * cout];
        let bias = self.value(b).data();
        for r in 0..n {
            out[r * cout..(r + 1) * cout].copy_from_slice(bias);
        }
        gemm(n, krows, cout, &col, false, self.value(wt).data(), false, &mut out, 1.0);
        drop(col);
        let value = Tensor::new(&[h, w, cout], out).unwrap();
        self.push(
            value,
            &[x, wt, b],
            Some(Box::new(move |g, p, _, want| {
                let gd = g.data();
                let gw = want[1].then(|| {
                    let col = im2col(p[0], pad, dil);
                    let mut d = vec![0.0; krows * cout];
                    gemm(krows, n, cout, &col, true, gd, false, &mut d, 0.0);
                    Tensor::new(&[krows, cout], d).unwrap()
                });
                let gx = want[0].then(|| {
                    let mut dcol = vec![0.0; n * krows];
                    gemm(n, cout, krows, gd, false, p[1].data(), true, &mut dcol, 0.0);
                    col2im(&dcol, h, w, cin, pad, dil)
                });
                let gb = want[2].then(|| Tensor::new(&[cout], column_sums(gd, n, cout)).unwrap());
                vec![gx, gw, gb]
            })),
        )
    }

    // ---- warping kernels ----

    /// Differentiable [`warping::backward_warp`].
    pub fn backward_warp(&mut self, field: Var, flow: Var) -> Var {
        let value = warping::backward_warp(self.value(field), self.value(flow)).expect("backward_warp shapes");
        self.push(
            value,
            &[field, flow],
            Some(Box::new(|g, p, _, want| {
                let (a, b) = warping::backward_warp_vjp(p[0], p[1], g, want[0], want[1]);
                vec![a, b]
            })),
        )
    }

    /// Differentiable [`warping::forward_splat_with`] (first output only).
    pub fn forward_splat(&mut self, field: Var, flow: Var, z: Var, mode: SplatMode) -> Var {
        let (value, _) = warping::forward_splat_with(self.value(field), self.value(flow), self.value(z), mode)
            .expect("forward_splat shapes");
        self.push(
            value,
            &[field, flow, z],
            Some(Box::new(move |g, p, _, want| {
                let r = warping::forward_splat_vjp(p[0], p[1], p[2], mode, g, [want[0], want[1], want[2]]);
                vec![r.field, r.flow, r.z]
            })),
        )
    }

    /// Splatting weights from fixed metric maps and learnable scalar `α`s.
    pub fn splat_weights(&mut self, u_flow: &Tensor, u_var: &Tensor, alpha_flow: Var, alpha_var: Var) -> Var {
        let (af, av) = (self.value(alpha_flow).item(), self.value(alpha_var).item());
        let value = warping::splat_weights(u_flow, u_var, af, av).expect("splat weights stay positive for alpha >= 0");
        let (uf, uv) = (u_flow.clone(), u_var.clone());
        self.push(
            value,
            &[alpha_flow, alpha_var],
            Some(Box::new(move |g, p, _, _| {
                let (_, _, gaf, gav) = warping::splat_weights_vjp(&uf, &uv, p[0].item(), p[1].item(), g);
                vec![Some(Tensor::scalar(gaf)), Some(Tensor::scalar(gav))]
            })),
        )
    }
}

#[inline]
pub(crate) fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub(crate) fn softplus(v: f64) -> f64 {
    if v > 30.0 {
        v
    } else {
        v.exp().ln_1p()
    }
}

/// Inverse of [`softplus`] for positive inputs.
pub fn softplus_inv(y: f64) -> f64 {
    (y.exp() - 1.0).ln()
}

fn column_sums(d: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut s = vec![0.0; cols];
    for r in 0..rows {
        for (acc, v) in s.iter_mut().zip(&d[r * cols..(r + 1) * cols]) {
            *acc += v;
        }
    }
    s
}

/// `c = a·b + beta·c` for row-major operands; `ta`/`tb` read the stored
/// matrix transposed. `a` is `m×k` after transposition, `b` is `k×n`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(m: usize, k: usize, n: usize, a: &[f64], ta: bool, b: &[f64], tb: bool, c: &mut [f64], beta: f64) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the strides above address exactly the m×k, k×n and m×n
    // row-major extents whose lengths are asserted.
    unsafe {
        matrixmultiply::dgemm(
            m, k, n, 1.0, a.as_ptr(), rsa, csa, b.as_ptr(), rsb, csb, beta, c.as_mut_ptr(), n as isize, 1,
        );
    }
}

#[inline]
fn tap(i: usize, k: usize, dil: usize, n: usize, pad: Pad) -> Option<usize> {
    let j = i as isize + (k as isize - 1) * dil as isize;
    if (0..n as isize).contains(&j) {
        Some(j as usize)
    } else {
        match pad {
            Pad::Zero => None,
            Pad::Replicate => Some(j.clamp(0, n as isize - 1) as usize),
        }
    }
}

fn im2col(x: &Tensor, pad: Pad, dil: usize) -> Vec<f64> {
    let (h, w, c) = x.hwc();
    let xd = x.data();
    let k = 9 * c;
    let mut col = vec![0.0; h * w * k];
    for y in 0..h {
        for xx in 0..w {
            let row = &mut col[(y * w + xx) * k..(y * w + xx + 1) * k];
            for ky in 0..3 {
                let Some(sy) = tap(y, ky, dil, h, pad) else { continue };
                for kx in 0..3 {
                    let Some(sx) = tap(xx, kx, dil, w, pad) else { continue };
                    let off = (ky * 3 + kx) * c;
                    let src = (sy * w + sx) * c;
                    row[off..off + c].copy_from_slice(&xd[src..src + c]);
                }
            }
        }
    }
    col
}

fn col2im(dcol: &[f64], h: usize, w: usize, c: usize, pad: Pad, dil: usize) -> Tensor {
    let k = 9 * c;
    let mut out = vec![0.0; h * w * c];
    for y in 0..h {
        for xx in 0..w {
            let row = &dcol[(y * w + xx) * k..(y * w + xx + 1) * k];
            for ky in 0..3 {
                let Some(sy) = tap(y, ky, dil, h, pad) else { continue };
                for kx in 0..3 {
                    let Some(sx) = tap(xx, kx, dil, w, pad) else { continue };
                    let off = (ky * 3 + kx) * c;
                    let dst = (sy * w + sx) * c;
                    for ch in 0..c {
                        out[dst + ch] += row[off + ch];
                    }
                }
            }
        }
    }
    Tensor::new(&[h, w, c], out).unwrap()
}
