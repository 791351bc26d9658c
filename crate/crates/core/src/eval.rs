//! Motion and interpolation metrics and the benchmark runners.

use std::fmt::Write as _;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::baselines::{fwarp_motion, linear_motion};
use crate::error::{GimmError, Result};
use crate::flow::{FlowField, FrameImage};
use crate::model::{gimm_forward, GimmConfig, GimmParams};
use crate::normalization::{make_target, NormalizedFlow};
use crate::synth::{render_frame, MotionSample};
use crate::synthesis::{interpolate_one, VfiModel};

/// Mean end-point error in pixels.
pub fn epe(pred: &FlowField, gt: &FlowField) -> Result<f64> {
    pred.expect_same_dims(gt, "epe")?;
    let s: f64 = pred
        .as_tensor()
        .data()
        .chunks_exact(2)
        .zip(gt.as_tensor().data().chunks_exact(2))
        .map(|(p, q)| (p[0] - q[0]).hypot(p[1] - q[1]))
        .sum();
    Ok(s / (pred.height() * pred.width()) as f64)
}

fn psnr_from_mse(mse: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        -10.0 * mse.log10()
    }
}

fn mse(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64
}

/// PSNR with peak 1 on normalized flows; `+inf` for an exact match.
pub fn flow_psnr(pred: &NormalizedFlow, gt: &NormalizedFlow) -> Result<f64> {
    pred.expect_compatible(gt, "flow_psnr")?;
    Ok(psnr_from_mse(mse(pred.data().data(), gt.data().data())))
}

/// PSNR with peak 1 over all channels; `+inf` for identical frames.
pub fn image_psnr(pred: &FrameImage, gt: &FrameImage) -> Result<f64> {
    pred.as_tensor().expect_same_shape(gt.as_tensor(), "image_psnr")?;
    Ok(psnr_from_mse(mse(pred.as_tensor().data(), gt.as_tensor().data())))
}

/// Anything that maps bidirectional flows and `t` to bilateral flows.
pub trait MotionModel {
    fn name(&self) -> String;
    fn predict(&self, f01: &FlowField, f10: &FlowField, t: f64) -> Result<(FlowField, FlowField)>;
}

pub struct LinearMotion;

impl MotionModel for LinearMotion {
    fn name(&self) -> String {
        "linear".into()
    }

    fn predict(&self, f01: &FlowField, f10: &FlowField, t: f64) -> Result<(FlowField, FlowField)> {
        linear_motion(f01, f10, t)
    }
}

pub struct FwarpMotion;

impl MotionModel for FwarpMotion {
    fn name(&self) -> String {
        "fwarp".into()
    }

    fn predict(&self, f01: &FlowField, f10: &FlowField, t: f64) -> Result<(FlowField, FlowField)> {
        fwarp_motion(f01, f10, t)
    }
}

pub struct GimmMotion {
    pub name: String,
    pub params: GimmParams,
    pub config: GimmConfig,
}

impl MotionModel for GimmMotion {
    fn name(&self) -> String {
        self.name.clone()
    }

    fn predict(&self, f01: &FlowField, f10: &FlowField, t: f64) -> Result<(FlowField, FlowField)> {
        let (_, a, b) = gimm_forward(f01, f10, t, &self.params, &self.config)?;
        Ok((a, b))
    }
}

/// Formats a metric for reports; `+inf` becomes the `inf` sentinel.
pub fn fmt_metric(v: f64) -> String {
    if v == f64::INFINITY {
        "inf".into()
    } else {
        format!("{v}")
    }
}

/// Mean of the finite values and the number of `+inf` entries left out.
/// All-infinite input yields `+inf`.
pub fn mean_excluding_inf(values: &[f64]) -> (f64, usize) {
    let finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    let inf = values.len() - finite.len();
    if finite.is_empty() {
        (if inf > 0 { f64::INFINITY } else { f64::NAN }, inf)
    } else {
        (finite.iter().sum::<f64>() / finite.len() as f64, inf)
    }
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

fn digest(parts: &[String]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p.as_bytes());
        h.update([0u8]);
    }
    h.finalize().iter().take(8).map(|b| format!("{b:02x}")).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MotionSampleRow {
    pub method: String,
    pub sample: String,
    pub t: f64,
    pub epe: f64,
    pub psnr_f: f64,
}

/// One aggregate row; `t == None` is the mean over all timesteps.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MotionRow {
    pub method: String,
    pub t: Option<f64>,
    pub epe: f64,
    pub psnr_f: f64,
    pub psnr_inf: usize,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MotionReport {
    pub rows: Vec<MotionRow>,
    pub samples: Vec<MotionSampleRow>,
    pub sample_count: usize,
    pub config_digest: String,
}

impl MotionReport {
    pub fn row(&self, method: &str, t: Option<f64>) -> Option<&MotionRow> {
        self.rows.iter().find(|r| r.method == method && r.t == t)
    }

    /// Aggregate `method,t,EPE,PSNR_f`; the all-timestep row uses `t = all`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("method,t,EPE,PSNR_f\n");
        for r in &self.rows {
            let t = r.t.map_or("all".to_string(), |t| format!("{t}"));
            let _ = writeln!(s, "{},{t},{},{}", r.method, fmt_metric(r.epe), fmt_metric(r.psnr_f));
        }
        s
    }

    pub fn samples_csv(&self) -> String {
        let mut s = String::from("method,sample,t,EPE,PSNR_f\n");
        for r in &self.samples {
            let _ = writeln!(s, "{},{},{},{},{}", r.method, r.sample, r.t, fmt_metric(r.epe), fmt_metric(r.psnr_f));
        }
        s
    }

    pub fn to_table(&self) -> String {
        let mut s = format!("motion benchmark: {} samples, config {}\n", self.sample_count, self.config_digest);
        let _ = writeln!(s, "{:<20} {:>8} {:>12} {:>12}  note", "method", "t", "EPE", "PSNR_f");
        for r in &self.rows {
            let t = r.t.map_or("all".to_string(), |t| format!("{t:.4}"));
            let p = if r.psnr_f.is_finite() { format!("{:.4}", r.psnr_f) } else { fmt_metric(r.psnr_f) };
            let note = if r.psnr_inf > 0 { format!("{} of {} exact (inf excluded)", r.psnr_inf, r.count) } else { String::new() };
            let _ = writeln!(s, "{:<20} {t:>8} {:>12.6} {p:>12}  {note}", r.method, r.epe);
        }
        s
    }
}

/// Evaluates every method on every sample at every timestep. EPE averages
/// the two bilateral directions; flow PSNR compares the normalized targets.
pub fn run_motion_benchmark(data: &[MotionSample], methods: &[&dyn MotionModel], timesteps: &[f64]) -> Result<MotionReport> {
    if data.is_empty() {
        return Err(GimmError::EmptyDataset);
    }
    let mut samples = Vec::new();
    let mut rows = Vec::new();
    for m in methods {
        let name = m.name();
        let mut per_t: Vec<(Vec<f64>, Vec<f64>)> = vec![(Vec::new(), Vec::new()); timesteps.len()];
        for s in data {
            for (k, &t) in timesteps.iter().enumerate() {
                let gt = s.gt_at(t)?;
                let (p0, p1) = m.predict(&s.f01, &s.f10, t)?;
                for p in [&p0, &p1] {
                    if !p.same_dims(&gt.ft0) {
                        return Err(GimmError::ContractViolation {
                            method: name.clone(),
                            detail: format!("{}: output {}x{} vs input {}x{}", s.name, p.height(), p.width(), s.height(), s.width()),
                        });
                    }
                }
                let e = 0.5 * (epe(&p0, &gt.ft0)? + epe(&p1, &gt.ft1)?);
                let psnr = flow_psnr(&make_target(&p0, &p1, s.scale)?, &make_target(&gt.ft0, &gt.ft1, s.scale)?)?;
                per_t[k].0.push(e);
                per_t[k].1.push(psnr);
                samples.push(MotionSampleRow { method: name.clone(), sample: s.name.clone(), t, epe: e, psnr_f: psnr });
            }
        }
        let (mut all_e, mut all_p) = (Vec::new(), Vec::new());
        for (k, &t) in timesteps.iter().enumerate() {
            let (e, p) = &per_t[k];
            let (pm, inf) = mean_excluding_inf(p);
            rows.push(MotionRow { method: name.clone(), t: Some(t), epe: mean(e), psnr_f: pm, psnr_inf: inf, count: e.len() });
            all_e.extend_from_slice(e);
            all_p.extend_from_slice(p);
        }
        let (pm, inf) = mean_excluding_inf(&all_p);
        rows.push(MotionRow { method: name.clone(), t: None, epe: mean(&all_e), psnr_f: pm, psnr_inf: inf, count: all_e.len() });
    }
    let mut parts: Vec<String> = methods.iter().map(|m| m.name()).collect();
    parts.extend(timesteps.iter().map(|t| format!("{t}")));
    parts.extend(data.iter().map(|s| s.name.clone()));
    Ok(MotionReport {
        rows,
        samples,
        sample_count: data.len(),
        config_digest: digest(&parts),
    })
}

/// Anything that produces an intermediate frame.
pub trait FrameModel {
    fn name(&self) -> String;
    fn interpolate(&self, i0: &FrameImage, i1: &FrameImage, f01: &FlowField, f10: &FlowField, t: f64) -> Result<FrameImage>;
}

/// `(I_0 + I_1) / 2` regardless of `t`.
pub struct FrameAverage;

impl FrameModel for FrameAverage {
    fn name(&self) -> String {
        "frame_average".into()
    }

    fn interpolate(&self, i0: &FrameImage, i1: &FrameImage, _: &FlowField, _: &FlowField, _: f64) -> Result<FrameImage> {
        i0.as_tensor().expect_same_shape(i1.as_tensor(), "frame_average")?;
        FrameImage::from_tensor(i0.as_tensor().zip_map(i1.as_tensor(), |a, b| 0.5 * (a + b)))
    }
}

pub struct GimmVfi {
    pub name: String,
    pub model: VfiModel,
}

impl FrameModel for GimmVfi {
    fn name(&self) -> String {
        self.name.clone()
    }

    fn interpolate(&self, i0: &FrameImage, i1: &FrameImage, f01: &FlowField, f10: &FlowField, t: f64) -> Result<FrameImage> {
        Ok(interpolate_one(i0, i1, f01, f10, t, &self.model)?.0)
    }
}

/// Ground-truth frame at `t`: stored, else rendered from the spec.
pub fn gt_frame(s: &MotionSample, t: f64) -> Result<FrameImage> {
    if let Some(f) = s.gt.iter().find(|g| g.t == t).and_then(|g| g.frame.clone()) {
        return Ok(f);
    }
    match &s.spec {
        Some(spec) => render_frame(spec, s.height(), s.width(), t),
        None => Err(GimmError::Data(format!("{}: no ground-truth frame at t = {t}", s.name))),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct InterpSampleRow {
    pub method: String,
    pub sample: String,
    pub t: f64,
    pub psnr_i: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct InterpRow {
    pub method: String,
    pub multiple: usize,
    pub psnr_i: f64,
    pub psnr_inf: usize,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct InterpReport {
    pub rows: Vec<InterpRow>,
    pub samples: Vec<InterpSampleRow>,
    pub sample_count: usize,
    pub config_digest: String,
}

impl InterpReport {
    pub fn row(&self, method: &str, multiple: usize) -> Option<&InterpRow> {
        self.rows.iter().find(|r| r.method == method && r.multiple == multiple)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("method,multiple,PSNR_i\n");
        for r in &self.rows {
            let _ = writeln!(s, "{},{},{}", r.method, r.multiple, fmt_metric(r.psnr_i));
        }
        s
    }

    pub fn samples_csv(&self) -> String {
        let mut s = String::from("method,sample,t,PSNR_i\n");
        for r in &self.samples {
            let _ = writeln!(s, "{},{},{},{}", r.method, r.sample, r.t, fmt_metric(r.psnr_i));
        }
        s
    }

    pub fn to_table(&self) -> String {
        let mut s = format!("interpolation benchmark: {} samples, config {}\n", self.sample_count, self.config_digest);
        let _ = writeln!(s, "{:<20} {:>8} {:>12}  note", "method", "multiple", "PSNR_i");
        for r in &self.rows {
            let p = if r.psnr_i.is_finite() { format!("{:.4}", r.psnr_i) } else { fmt_metric(r.psnr_i) };
            let note = if r.psnr_inf > 0 { format!("{} of {} exact (inf excluded)", r.psnr_inf, r.count) } else { String::new() };
            let _ = writeln!(s, "{:<20} {:>8} {p:>12}  {note}", r.method, format!("{}x", r.multiple));
        }
        s
    }
}

/// For each multiple `m`, evaluates `t = k/m` for `k = 1..m−1`.
pub fn run_interp_benchmark(data: &[MotionSample], methods: &[&dyn FrameModel], multiples: &[usize]) -> Result<InterpReport> {
    if data.is_empty() {
        return Err(GimmError::EmptyDataset);
    }
    if let Some(m) = multiples.iter().find(|&&m| m < 2) {
        return Err(GimmError::Config(format!("interpolation multiple must be >= 2, got {m}")));
    }
    let mut rows = Vec::new();
    let mut samples = Vec::new();
    for m in methods {
        let name = m.name();
        for &mult in multiples {
            let mut vals = Vec::new();
            for s in data {
                for k in 1..mult {
                    let t = k as f64 / mult as f64;
                    let gt = gt_frame(s, t)?;
                    let pred = m.interpolate(&s.frame0, &s.frame1, &s.f01, &s.f10, t)?;
                    if pred.as_tensor().shape() != gt.as_tensor().shape() {
                        return Err(GimmError::ContractViolation {
                            method: name.clone(),
                            detail: format!("{}: output shape {:?}", s.name, pred.as_tensor().shape()),
                        });
                    }
                    let p = image_psnr(&pred, &gt)?;
                    vals.push(p);
                    samples.push(InterpSampleRow { method: name.clone(), sample: s.name.clone(), t, psnr_i: p });
                }
            }
            let (pm, inf) = mean_excluding_inf(&vals);
            rows.push(InterpRow { method: name.clone(), multiple: mult, psnr_i: pm, psnr_inf: inf, count: vals.len() });
        }
    }
    let mut parts: Vec<String> = methods.iter().map(|m| m.name()).collect();
    parts.extend(multiples.iter().map(|m| format!("x{m}")));
    parts.extend(data.iter().map(|s| s.name.clone()));
    Ok(InterpReport {
        rows,
        samples,
        sample_count: data.len(),
        config_digest: digest(&parts),
    })
}
