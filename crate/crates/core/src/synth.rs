//! Analytic synthetic-motion oracle.
//!
//! Each [`MotionSpec`] defines a closed-form trajectory for every scene point,
//! so flows between any two timesteps are exact. Frames are produced by
//! backward-warping a seeded procedural texture along the trajectory.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_timestep, GimmError, Result};
use crate::flow::{FlowField, FrameImage};
use crate::normalization::compute_scale;
use crate::tensor::Tensor;
use crate::warping::{backward_warp, gaussian3x3};

/// Trajectory family and its coefficients. Positions are `(x, y)` in pixels,
/// time is in units of the frame interval.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Motion {
    /// `p(t) = p0 + v·t`
    Translation { velocity: [f64; 2] },
    /// `p(t) = p0 + v·t + ½·a·t²`
    Quadratic { velocity: [f64; 2], acceleration: [f64; 2] },
    /// Rigid rotation about `center` at `omega` rad per unit time.
    Rotation { omega: f64, center: [f64; 2] },
    /// Radial scaling about `center` by `1 + rate·t`.
    Zoom { rate: f64, center: [f64; 2] },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MotionSpec {
    #[serde(flatten)]
    pub motion: Motion,
    pub texture_seed: u64,
}

impl MotionSpec {
    pub fn new(motion: Motion, texture_seed: u64) -> Self {
        Self { motion, texture_seed }
    }

    pub fn kind_name(&self) -> &'static str {
        match self.motion {
            Motion::Translation { .. } => "translation",
            Motion::Quadratic { .. } => "quadratic",
            Motion::Rotation { .. } => "rotation",
            Motion::Zoom { .. } => "zoom",
        }
    }

    /// Constant-velocity uniform motion, for which the bilateral flows split
    /// the endpoint flow exactly.
    pub fn is_linear(&self) -> bool {
        matches!(self.motion, Motion::Translation { .. })
    }

    /// Structural checks: finite coefficients, centers inside the frame and
    /// a zoom factor that stays positive over `[0, 1]`.
    pub fn validate(&self, h: usize, w: usize) -> Result<()> {
        let finite = |xs: &[f64]| xs.iter().all(|v| v.is_finite());
        let inside = |c: [f64; 2]| c[0] >= 0.0 && c[0] <= (w - 1) as f64 && c[1] >= 0.0 && c[1] <= (h - 1) as f64;
        match self.motion {
            Motion::Translation { velocity } if !finite(&velocity) => {
                Err(GimmError::InvalidSpec("non-finite velocity".into()))
            }
            Motion::Quadratic { velocity, acceleration } if !finite(&velocity) || !finite(&acceleration) => {
                Err(GimmError::InvalidSpec("non-finite quadratic coefficients".into()))
            }
            Motion::Rotation { omega, center } | Motion::Zoom { rate: omega, center }
                if !omega.is_finite() || !finite(&center) =>
            {
                Err(GimmError::InvalidSpec("non-finite rotation/zoom coefficients".into()))
            }
            Motion::Rotation { center, .. } | Motion::Zoom { center, .. } if !inside(center) => Err(
                GimmError::InvalidSpec(format!("center {center:?} outside the {h}x{w} frame")),
            ),
            Motion::Zoom { rate, .. } if rate <= -1.0 => Err(GimmError::InvalidSpec(format!(
                "zoom rate {rate} collapses the frame before t = 1"
            ))),
            _ => Ok(()),
        }
    }

    /// Dataset-level bound: the largest displacement between `t = 0` and
    /// `t = 1` must stay within `min(H, W) / 4`.
    pub fn validate_for_dataset(&self, h: usize, w: usize) -> Result<()> {
        self.validate(h, w)?;
        let limit = h.min(w) as f64 / 4.0;
        let f = synth_flow(self, 0.0, 1.0, h, w)?;
        let peak = f.max_magnitude();
        if peak > limit {
            return Err(GimmError::InvalidSpec(format!(
                "{} motion displaces pixels by {peak:.2}px, limit is {limit:.2}px",
                self.kind_name()
            )));
        }
        Ok(())
    }

    /// Position at `dst_t` of the scene point sitting at `(x, y)` at `src_t`.
    fn transport(&self, x: f64, y: f64, src_t: f64, dst_t: f64) -> (f64, f64) {
        let dt = dst_t - src_t;
        match self.motion {
            Motion::Translation { velocity: v } => (x + v[0] * dt, y + v[1] * dt),
            Motion::Quadratic { velocity: v, acceleration: a } => {
                let q = 0.5 * (dst_t * dst_t - src_t * src_t);
                (x + v[0] * dt + a[0] * q, y + v[1] * dt + a[1] * q)
            }
            Motion::Rotation { omega, center: c } => {
                let (s, co) = (omega * dt).sin_cos();
                let (rx, ry) = (x - c[0], y - c[1]);
                (c[0] + co * rx - s * ry, c[1] + s * rx + co * ry)
            }
            Motion::Zoom { rate, center: c } => {
                let k = (1.0 + rate * dst_t) / (1.0 + rate * src_t);
                (c[0] + k * (x - c[0]), c[1] + k * (y - c[1]))
            }
        }
    }
}

/// Exact displacement field from pixel positions at `src_t` to their
/// positions at `dst_t`.
pub fn synth_flow(spec: &MotionSpec, src_t: f64, dst_t: f64, h: usize, w: usize) -> Result<FlowField> {
    check_timestep(src_t)?;
    check_timestep(dst_t)?;
    spec.validate(h, w)?;
    if src_t == dst_t {
        return Ok(FlowField::zeros(h, w));
    }
    let dt = dst_t - src_t;
    Ok(match spec.motion {
        // position-independent displacements, kept free of per-pixel rounding
        Motion::Translation { velocity: v } => FlowField::constant(h, w, v[0] * dt, v[1] * dt),
        Motion::Quadratic { velocity: v, acceleration: a } => {
            let q = 0.5 * (dst_t * dst_t - src_t * src_t);
            FlowField::constant(h, w, v[0] * dt + a[0] * q, v[1] * dt + a[1] * q)
        }
        _ => FlowField::from_fn(h, w, |y, x| {
            let (px, py) = (x as f64, y as f64);
            let (qx, qy) = spec.transport(px, py, src_t, dst_t);
            (qx - px, qy - py)
        }),
    })
}

/// Ground-truth bilateral flows at one timestep.
#[derive(Clone, Debug, PartialEq)]
pub struct GtFlows {
    pub t: f64,
    pub ft0: FlowField,
    pub ft1: FlowField,
    /// Ground-truth frame at `t`, when available.
    pub frame: Option<FrameImage>,
}

/// Two frames, their bidirectional flows and labeled intermediate bilateral flows.
#[derive(Clone, Debug, PartialEq)]
pub struct MotionSample {
    pub name: String,
    /// Generating spec for oracle samples; `None` for ingested data.
    pub spec: Option<MotionSpec>,
    pub frame0: FrameImage,
    pub frame1: FrameImage,
    pub f01: FlowField,
    pub f10: FlowField,
    pub gt: Vec<GtFlows>,
    pub scale: f64,
}

impl MotionSample {
    pub fn height(&self) -> usize {
        self.f01.height()
    }

    pub fn width(&self) -> usize {
        self.f01.width()
    }

    pub fn timesteps(&self) -> Vec<f64> {
        self.gt.iter().map(|g| g.t).collect()
    }

    pub fn is_linear(&self) -> bool {
        self.spec.as_ref().is_some_and(MotionSpec::is_linear)
    }

    /// Ground truth at `t`: stored labels first, otherwise the oracle.
    pub fn gt_at(&self, t: f64) -> Result<GtFlows> {
        if let Some(g) = self.gt.iter().find(|g| g.t == t) {
            return Ok(g.clone());
        }
        let spec = self
            .spec
            .as_ref()
            .ok_or_else(|| GimmError::Data(format!("{}: no ground truth at t = {t}", self.name)))?;
        let (h, w) = (self.height(), self.width());
        Ok(GtFlows {
            t,
            ft0: synth_flow(spec, t, 0.0, h, w)?,
            ft1: synth_flow(spec, t, 1.0, h, w)?,
            frame: Some(render_frame(spec, h, w, t)?),
        })
    }

    /// Copies a square-or-rectangular window out of every field.
    pub fn crop(&self, y0: usize, x0: usize, h: usize, w: usize) -> Result<MotionSample> {
        let f01 = self.f01.crop(y0, x0, h, w)?;
        let f10 = self.f10.crop(y0, x0, h, w)?;
        let gt = self
            .gt
            .iter()
            .map(|g| {
                Ok(GtFlows {
                    t: g.t,
                    ft0: g.ft0.crop(y0, x0, h, w)?,
                    ft1: g.ft1.crop(y0, x0, h, w)?,
                    frame: g.frame.as_ref().map(|f| f.crop(y0, x0, h, w)).transpose()?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(MotionSample {
            name: self.name.clone(),
            spec: None,
            frame0: self.frame0.crop(y0, x0, h, w)?,
            frame1: self.frame1.crop(y0, x0, h, w)?,
            scale: compute_scale(&f01, &f10),
            f01,
            f10,
            gt,
        })
    }
}

/// Seeded smooth RGB texture: a sum of random sinusoids plus band-limited noise.
pub fn texture(seed: u64, h: usize, w: usize) -> FrameImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layer = |rng: &mut ChaCha8Rng| -> Vec<f64> {
        let waves: Vec<[f64; 4]> = (0..8)
            .map(|_| {
                let k = std::f64::consts::TAU / rng.gen_range(9.0..28.0);
                let dir = rng.gen_range(0.0..std::f64::consts::TAU);
                [k * dir.cos(), k * dir.sin(), rng.gen_range(0.0..std::f64::consts::TAU), rng.gen_range(0.5..1.0)]
            })
            .collect();
        // coarse lattice noise, bilinearly upsampled then blurred
        let cell = 6.0;
        let gh = (h as f64 / cell).ceil() as usize + 2;
        let gw = (w as f64 / cell).ceil() as usize + 2;
        let lattice: Vec<f64> = (0..gh * gw).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut noise = Tensor::from_fn_hwc(h, w, 1, |y, x, _| {
            let (gy, gx) = (y as f64 / cell, x as f64 / cell);
            let (iy, ix) = (gy.floor() as usize, gx.floor() as usize);
            let (fy, fx) = (gy - iy as f64, gx - ix as f64);
            let at = |r: usize, c: usize| lattice[r * gw + c];
            (1.0 - fy) * ((1.0 - fx) * at(iy, ix) + fx * at(iy, ix + 1))
                + fy * ((1.0 - fx) * at(iy + 1, ix) + fx * at(iy + 1, ix + 1))
        });
        for _ in 0..2 {
            noise = gaussian3x3(&noise);
        }
        let mut out = Vec::with_capacity(h * w);
        for y in 0..h {
            for x in 0..w {
                let s: f64 = waves
                    .iter()
                    .map(|[kx, ky, ph, amp]| amp * (kx * x as f64 + ky * y as f64 + ph).sin())
                    .sum();
                out.push(s / 8.0 + 0.6 * noise.at(y, x, 0));
            }
        }
        out
    };
    let shared = layer(&mut rng);
    let own: Vec<Vec<f64>> = (0..3).map(|_| layer(&mut rng)).collect();
    let mut data = Vec::with_capacity(h * w * 3);
    for p in 0..h * w {
        for ch in own.iter() {
            data.push(0.6 * shared[p] + 0.4 * ch[p]);
        }
    }
    let (lo, hi) = data
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let span = (hi - lo).max(1e-12);
    let data = data.into_iter().map(|v| 0.1 + 0.8 * (v - lo) / span).collect();
    FrameImage::from_tensor(Tensor::new(&[h, w, 3], data).unwrap()).unwrap()
}

/// Frame at `t`: the `t = 0` texture pulled along the trajectory.
pub fn render_frame(spec: &MotionSpec, h: usize, w: usize, t: f64) -> Result<FrameImage> {
    let tex = texture(spec.texture_seed, h, w);
    if t == 0.0 {
        return Ok(tex);
    }
    let back = synth_flow(spec, t, 0.0, h, w)?;
    FrameImage::from_tensor(backward_warp(tex.as_tensor(), back.as_tensor())?)
}

/// Renders a full oracle sample with ground truth at each requested timestep.
pub fn synth_sample(spec: &MotionSpec, h: usize, w: usize, timesteps: &[f64]) -> Result<MotionSample> {
    spec.validate(h, w)?;
    let mut ts = timesteps.to_vec();
    for &t in &ts {
        check_timestep(t)?;
    }
    ts.sort_by(f64::total_cmp);
    ts.dedup();
    let tex = texture(spec.texture_seed, h, w);
    let render = |t: f64| -> Result<FrameImage> {
        if t == 0.0 {
            return Ok(tex.clone());
        }
        let back = synth_flow(spec, t, 0.0, h, w)?;
        FrameImage::from_tensor(backward_warp(tex.as_tensor(), back.as_tensor())?)
    };
    let f01 = synth_flow(spec, 0.0, 1.0, h, w)?;
    let f10 = synth_flow(spec, 1.0, 0.0, h, w)?;
    let gt = ts
        .iter()
        .map(|&t| {
            Ok(GtFlows {
                t,
                ft0: synth_flow(spec, t, 0.0, h, w)?,
                ft1: synth_flow(spec, t, 1.0, h, w)?,
                frame: Some(render(t)?),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MotionSample {
        name: format!("{}_{}", spec.kind_name(), spec.texture_seed),
        spec: Some(spec.clone()),
        frame0: render(0.0)?,
        frame1: render(1.0)?,
        scale: compute_scale(&f01, &f10),
        f01,
        f10,
        gt,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn constant_value(f: &FlowField) -> (f64, f64) {
        let first = f.at(0, 0);
        for y in 0..f.height() {
            for x in 0..f.width() {
                let (u, v) = f.at(y, x);
                assert!((u - first.0).abs() < 1e-12 && (v - first.1).abs() < 1e-12);
            }
        }
        first
    }

    #[test]
    fn translation_is_constant() {
        let spec = MotionSpec::new(Motion::Translation { velocity: [4.0, 0.0] }, 1);
        assert_eq!(constant_value(&synth_flow(&spec, 0.0, 1.0, 8, 9).unwrap()), (4.0, 0.0));
    }

    #[test]
    fn same_time_is_zero() {
        let spec = MotionSpec::new(Motion::Rotation { omega: 0.4, center: [3.0, 4.0] }, 1);
        let f = synth_flow(&spec, 0.3, 0.3, 8, 8).unwrap();
        assert!(f.as_tensor().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn quadratic_half_step() {
        let spec = MotionSpec::new(
            Motion::Quadratic { velocity: [4.0, 0.0], acceleration: [0.0, 8.0] },
            1,
        );
        let (u, v) = constant_value(&synth_flow(&spec, 0.0, 0.5, 6, 6).unwrap());
        assert!((u - 2.0).abs() < 1e-12 && (v - 1.0).abs() < 1e-12);
    }

    #[test]
    fn translation_sample_split() {
        let spec = MotionSpec::new(Motion::Translation { velocity: [4.0, 0.0] }, 2);
        let s = synth_sample(&spec, 16, 16, &[0.5]).unwrap();
        assert_eq!(constant_value(&s.gt[0].ft0), (-2.0, 0.0));
        assert_eq!(constant_value(&s.gt[0].ft1), (2.0, 0.0));
        assert_eq!(s.scale, 5.0);
    }

    #[test]
    fn rotation_half_step_matches_closed_form() {
        let c = [7.5, 7.5];
        let spec = MotionSpec::new(Motion::Rotation { omega: std::f64::consts::FRAC_PI_2, center: c }, 3);
        let s = synth_sample(&spec, 16, 16, &[0.5]).unwrap();
        let a = -std::f64::consts::FRAC_PI_4;
        for y in 0..16 {
            for x in 0..16 {
                let (rx, ry) = (x as f64 - c[0], y as f64 - c[1]);
                let ex = a.cos() * rx - a.sin() * ry - rx;
                let ey = a.sin() * rx + a.cos() * ry - ry;
                let (u, v) = s.gt[0].ft0.at(y, x);
                assert!((u - ex).abs() < 1e-12 && (v - ey).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn rejects_center_outside_frame() {
        let spec = MotionSpec::new(Motion::Rotation { omega: 0.1, center: [40.0, 3.0] }, 0);
        assert!(matches!(synth_flow(&spec, 0.0, 1.0, 8, 8), Err(GimmError::InvalidSpec(_))));
        let big = MotionSpec::new(Motion::Translation { velocity: [9.0, 0.0] }, 0);
        assert!(big.validate_for_dataset(32, 32).is_err());
        assert!(MotionSpec::new(Motion::Translation { velocity: [8.0, 0.0] }, 0)
            .validate_for_dataset(32, 32)
            .is_ok());
    }

    #[test]
    fn endpoint_labels_are_zero() {
        let spec = MotionSpec::new(Motion::Rotation { omega: 0.3, center: [5.0, 6.0] }, 4);
        let s = synth_sample(&spec, 12, 12, &[1.0, 0.0, 0.5]).unwrap();
        assert_eq!(s.timesteps(), vec![0.0, 0.5, 1.0]);
        assert!(s.gt[0].ft0.as_tensor().data().iter().all(|&v| v == 0.0));
        assert!(s.gt[2].ft1.as_tensor().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn texture_is_deterministic_and_in_range() {
        let a = texture(9, 20, 24);
        assert_eq!(a, texture(9, 20, 24));
        assert_ne!(a, texture(10, 20, 24));
        assert!(a.as_tensor().data().iter().all(|&v| (0.1..=0.9 + 1e-12).contains(&v)));
    }

    #[test]
    fn spec_json_shape() {
        let spec = MotionSpec::new(Motion::Zoom { rate: 0.2, center: [3.0, 3.0] }, 5);
        let js = serde_json::to_string(&spec).unwrap();
        assert_eq!(js, r#"{"kind":"zoom","rate":0.2,"center":[3.0,3.0],"texture_seed":5}"#);
        assert_eq!(serde_json::from_str::<MotionSpec>(&js).unwrap(), spec);
    }
}
