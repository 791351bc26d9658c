//! Reversible flow normalization, training targets, the bilateral split and
//! spatiotemporal coordinate grids.

use crate::error::{check_timestep, GimmError, Result};
use crate::flow::FlowField;
use crate::tensor::Tensor;

/// Headroom factor applied on top of the largest input flow component.
pub const SCALE_MARGIN: f64 = 1.25;

/// Flow mapped into nominal `[0, 1]` by an instance scale. The scale travels
/// with the data so the inverse mapping can never use a different one.
#[derive(Clone, Debug, PartialEq)]
pub struct NormalizedFlow {
    data: Tensor,
    scale: f64,
}

impl NormalizedFlow {
    pub fn new(data: Tensor, scale: f64) -> Result<Self> {
        if !(scale > 0.0) || !scale.is_finite() {
            return Err(GimmError::NonPositiveScale(scale));
        }
        if !data.is_hwc() || data.shape()[2] != 2 {
            return Err(GimmError::ShapeMismatch(format!(
                "normalized flow must be HxWx2, got {:?}",
                data.shape()
            )));
        }
        Ok(Self { data, scale })
    }

    pub fn data(&self) -> &Tensor {
        &self.data
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn height(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.data.shape()[1]
    }

    pub(crate) fn expect_compatible(&self, other: &Self, what: &str) -> Result<()> {
        if self.scale != other.scale {
            return Err(GimmError::ScaleMismatch(self.scale, other.scale));
        }
        self.data.expect_same_shape(&other.data, what)
    }
}

/// `H×W×3` grid of `(x, y, t)` coordinates in `[-1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct CoordGrid(Tensor);

impl CoordGrid {
    pub fn as_tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor {
        self.0
    }
}

/// Instance scale `1.25 · max(|f01|∞, |f10|∞, 1)`.
pub fn compute_scale(f01: &FlowField, f10: &FlowField) -> f64 {
    SCALE_MARGIN * f01.max_abs().max(f10.max_abs()).max(1.0)
}

/// `V = F / (2s) + 0.5`.
pub fn normalize(f: &FlowField, s: f64) -> Result<NormalizedFlow> {
    if !(s > 0.0) {
        return Err(GimmError::NonPositiveScale(s));
    }
    let k = 1.0 / (2.0 * s);
    NormalizedFlow::new(f.as_tensor().map(|v| v * k + 0.5), s)
}

/// `F = (V − 0.5) · 2s`.
pub fn denormalize(v: &NormalizedFlow) -> FlowField {
    let k = 2.0 * v.scale;
    FlowField::from_tensor(v.data.map(|x| (x - 0.5) * k)).expect("normalized flow is HxWx2")
}

/// Supervision target `φ(F_{t→1} − F_{t→0})`.
pub fn make_target(ft0: &FlowField, ft1: &FlowField, s: f64) -> Result<NormalizedFlow> {
    ft0.expect_same_dims(ft1, "make_target")?;
    normalize(&ft1.sub(ft0), s)
}

/// Reverse normalization into bilateral flows: with `D = φ⁻¹(V)`,
/// `F_{t→0} = −t·D` and `F_{t→1} = (1 − t)·D`.
///
/// Both outputs may be nudged by up to two ulps so that the floating-point
/// difference `F_{t→1} − F_{t→0}` reproduces `D` bit for bit.
pub fn split_bilateral(v: &NormalizedFlow, t: f64) -> Result<(FlowField, FlowField)> {
    check_timestep(t)?;
    let d = denormalize(v);
    let mut ft0 = Vec::with_capacity(d.as_tensor().len());
    let mut ft1 = Vec::with_capacity(d.as_tensor().len());
    for &dv in d.as_tensor().data() {
        let (a, b) = exact_split(dv, t);
        ft0.push(a);
        ft1.push(b);
    }
    let shape = d.as_tensor().shape().to_vec();
    Ok((
        FlowField::from_tensor(Tensor::new(&shape, ft0)?)?,
        FlowField::from_tensor(Tensor::new(&shape, ft1)?)?,
    ))
}

/// Candidates ordered by distance: `x`, then one ulp either side, and so on.
fn ulp_neighbours(x: f64) -> [f64; 5] {
    [x, x.next_down(), x.next_up(), x.next_down().next_down(), x.next_up().next_up()]
}

/// `(a, b) ≈ (−t·d, (1 − t)·d)` with `b − a == d` in floating point.
fn exact_split(d: f64, t: f64) -> (f64, f64) {
    let (a0, b0) = (-t * d, (1.0 - t) * d);
    for a in ulp_neighbours(a0) {
        for b in ulp_neighbours(b0) {
            if b - a == d {
                return (a, b);
            }
        }
    }
    (a0, b0)
}

/// Timestep-scaled bidirectional flows `(t·F_{0→1}, (1 − t)·F_{1→0})`.
pub fn scaled_bidirectional(f01: &FlowField, f10: &FlowField, t: f64) -> Result<(FlowField, FlowField)> {
    check_timestep(t)?;
    f01.expect_same_dims(f10, "scaled_bidirectional")?;
    Ok((f01.scaled(t), f10.scaled(1.0 - t)))
}

/// Coordinates with `x` spanning columns, `y` spanning rows and a constant
/// `t` channel equal to `2t − 1`.
pub fn coord_grid(h: usize, w: usize, t: f64) -> Result<CoordGrid> {
    if h < 2 || w < 2 {
        return Err(GimmError::DegenerateDims { h, w });
    }
    check_timestep(t)?;
    let tc = 2.0 * t - 1.0;
    Ok(CoordGrid(Tensor::from_fn_hwc(h, w, 3, |y, x, c| match c {
        0 => -1.0 + 2.0 * x as f64 / (w - 1) as f64,
        1 => -1.0 + 2.0 * y as f64 / (h - 1) as f64,
        _ => tc,
    })))
}
