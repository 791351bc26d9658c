//! Frame synthesis on top of the motion model: backward-warp both inputs
//! with the predicted bilateral flows and fuse them with a learned mask.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Pad, Var};
use crate::error::{check_timestep, GimmError, Result};
use crate::flow::{FlowField, FrameImage};
use crate::losses;
use crate::model::{flow_loss_graph, gimm_forward, gimm_graph, GimmConfig, GimmParams, LossNorm};
use crate::normalization::{normalize, NormalizedFlow};
use crate::params::{push_conv, Bound, ParamSet};
use crate::synth::MotionSample;
use crate::tensor::Tensor;
use crate::train::{accumulate, collect_grads, grads_finite, random_crop, AdamW, Schedule, TrainConfig, TrainLog};
use crate::warping::backward_warp;

pub const SYNTH_HIDDEN: usize = 24;
/// Flows are fed to the mask network scaled by this factor.
pub const FLOW_INPUT_SCALE: f64 = 0.1;
const SYNTH_IN: usize = 10;
/// Dilation of each mask-network layer. The zero-padded taps reach 16px
/// from the frame border, which covers the strips a warp leaves invalid.
const SYNTH_DILATIONS: [usize; 5] = [1, 2, 4, 8, 1];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VfiConfig {
    pub lambda_rec: f64,
    pub use_residual: bool,
    pub w_lap: f64,
    pub w_char: f64,
    pub w_census: f64,
    pub freeze_gimm: bool,
}

impl Default for VfiConfig {
    fn default() -> Self {
        Self {
            lambda_rec: 1.0,
            use_residual: false,
            w_lap: 1.0,
            w_char: 1.0,
            w_census: 1.0,
            freeze_gimm: false,
        }
    }
}

impl VfiConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda_rec", self.lambda_rec),
            ("w_lap", self.w_lap),
            ("w_char", self.w_char),
            ("w_census", self.w_census),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(GimmError::Config(format!("{name} must be a finite value >= 0, got {v}")));
            }
        }
        Ok(())
    }

    fn out_channels(&self) -> usize {
        if self.use_residual {
            4
        } else {
            1
        }
    }
}

/// Mask network: five dilated 3×3 convs `10→24→24→24→24→1|4` with SiLU between.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthParams {
    pub set: ParamSet,
}

impl SynthParams {
    pub fn init(config: &VfiConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5717_4e7);
        let mut set = ParamSet::new();
        let last = SYNTH_DILATIONS.len() - 1;
        for i in 0..=last {
            let cin = if i == 0 { SYNTH_IN } else { SYNTH_HIDDEN };
            let cout = if i == last { config.out_channels() } else { SYNTH_HIDDEN };
            push_conv(&mut set, &mut rng, &format!("synth.conv{i}"), cin, cout);
        }
        Self { set }
    }

    pub fn check(&self, config: &VfiConfig) -> Result<()> {
        self.set.expect_layout(&Self::init(config, 0).set, "synthesis parameters")?;
        if !self.set.all_finite() {
            return Err(GimmError::Data("synthesis parameters contain non-finite values".into()));
        }
        Ok(())
    }
}

/// Everything needed for interpolation.
#[derive(Clone, Debug, PartialEq)]
pub struct VfiModel {
    pub gimm_config: GimmConfig,
    pub gimm: GimmParams,
    pub vfi_config: VfiConfig,
    pub synth: SynthParams,
}

impl VfiModel {
    /// Pairs pretrained motion parameters with a fresh synthesis head.
    pub fn new(gimm_config: GimmConfig, gimm: GimmParams, vfi_config: VfiConfig, seed: u64) -> Result<Self> {
        gimm.check(&gimm_config)?;
        vfi_config.validate()?;
        let synth = SynthParams::init(&vfi_config, seed);
        Ok(Self { gimm_config, gimm, vfi_config, synth })
    }

    pub fn check(&self) -> Result<()> {
        self.gimm.check(&self.gimm_config)?;
        self.vfi_config.validate()?;
        self.synth.check(&self.vfi_config)
    }
}

/// `(backward_warp(i0, ft0), backward_warp(i1, ft1))`
pub fn warp_frames(i0: &FrameImage, i1: &FrameImage, ft0: &FlowField, ft1: &FlowField) -> Result<(FrameImage, FrameImage)> {
    i0.as_tensor().expect_same_shape(i1.as_tensor(), "warp_frames")?;
    ft0.expect_same_dims(ft1, "warp_frames")?;
    Ok((
        FrameImage::from_tensor(backward_warp(i0.as_tensor(), ft0.as_tensor())?)?,
        FrameImage::from_tensor(backward_warp(i1.as_tensor(), ft1.as_tensor())?)?,
    ))
}

/// `M·I_{t→0} + (1 − M)·I_{t→1}`, plus an optional residual and clipping.
pub fn fuse(it0: &FrameImage, it1: &FrameImage, mask: &Tensor, residual: Option<&Tensor>) -> Result<FrameImage> {
    let (a, b) = (it0.as_tensor(), it1.as_tensor());
    a.expect_same_shape(b, "fuse")?;
    let (h, w, c) = a.hwc();
    if !mask.is_hwc() || mask.hwc() != (h, w, 1) {
        return Err(GimmError::ShapeMismatch(format!("fuse: mask {:?} vs frames {h}x{w}", mask.shape())));
    }
    let mut out = Tensor::from_fn_hwc(h, w, c, |y, x, ch| {
        let m = mask.at(y, x, 0);
        m * a.at(y, x, ch) + (1.0 - m) * b.at(y, x, ch)
    });
    if let Some(r) = residual {
        r.expect_same_shape(&out, "fuse residual")?;
        out = out.add(r);
    }
    FrameImage::from_tensor(out)
}

pub fn charbonnier_loss(a: &FrameImage, b: &FrameImage) -> Result<f64> {
    losses::charbonnier(a.as_tensor(), b.as_tensor())
}

pub fn laplacian_loss(a: &FrameImage, b: &FrameImage) -> Result<f64> {
    losses::laplacian(a.as_tensor(), b.as_tensor())
}

pub fn census_loss(a: &FrameImage, b: &FrameImage) -> Result<f64> {
    losses::census(a.as_tensor(), b.as_tensor())
}

/// `‖V_0 − V̂_0‖ + ‖V_1 − V̂_1‖`, each averaged over pixels.
pub fn rec_loss(v0_hat: &NormalizedFlow, v1_hat: &NormalizedFlow, v0: &NormalizedFlow, v1: &NormalizedFlow) -> Result<f64> {
    let a = crate::model::gimm_loss(v0_hat, v0)?;
    let b = crate::model::gimm_loss(v1_hat, v1)?;
    Ok(a + b)
}

/// Predicted and pseudo-ground-truth flows at the two input timesteps.
#[derive(Clone, Debug)]
pub struct BoundaryFlows {
    pub v0_hat: NormalizedFlow,
    pub v1_hat: NormalizedFlow,
    pub v0: NormalizedFlow,
    pub v1: NormalizedFlow,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct LossBreakdown {
    pub lap: f64,
    pub char: f64,
    pub census: f64,
    pub rec: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn interp(&self, config: &VfiConfig) -> f64 {
        config.w_lap * self.lap + config.w_char * self.char + config.w_census * self.census
    }
}

/// Weighted interpolation loss plus `λ_rec` times the boundary
/// reconstruction loss when `boundary` is given.
pub fn total_loss(pred: &FrameImage, gt: &FrameImage, boundary: Option<&BoundaryFlows>, config: &VfiConfig) -> Result<LossBreakdown> {
    let mut b = LossBreakdown {
        lap: laplacian_loss(pred, gt)?,
        char: charbonnier_loss(pred, gt)?,
        census: census_loss(pred, gt)?,
        ..LossBreakdown::default()
    };
    if let Some(f) = boundary {
        b.rec = rec_loss(&f.v0_hat, &f.v1_hat, &f.v0, &f.v1)?;
    }
    b.total = b.interp(config) + config.lambda_rec * b.rec;
    Ok(b)
}

#[derive(Clone, Copy)]
enum ImageLoss {
    Lap,
    Char,
    Census,
}

fn image_loss_graph(g: &mut Graph, pred: Var, gt: &Tensor, kind: ImageLoss) -> Result<Var> {
    let p = g.value(pred);
    let value = match kind {
        ImageLoss::Lap => losses::laplacian(p, gt)?,
        ImageLoss::Char => losses::charbonnier(p, gt)?,
        ImageLoss::Census => losses::census(p, gt)?,
    };
    let gt = gt.clone();
    Ok(g.custom(
        &[pred],
        Tensor::scalar(value),
        Box::new(move |go, p, _, _| {
            let s = go.item();
            vec![Some(match kind {
                ImageLoss::Lap => losses::laplacian_vjp(p[0], &gt, s),
                ImageLoss::Char => losses::charbonnier_vjp(p[0], &gt, s),
                ImageLoss::Census => losses::census_vjp(p[0], &gt, s),
            })]
        }),
    ))
}

fn clip01(g: &mut Graph, x: Var) -> Var {
    let value = g.value(x).map(|v| v.clamp(0.0, 1.0));
    g.custom(
        &[x],
        value,
        Box::new(|go, p, _, _| vec![Some(go.zip_map(p[0], |d, v| if (0.0..=1.0).contains(&v) { d } else { 0.0 }))]),
    )
}

/// Mask network and fusion; returns the fused frame and the mask.
pub fn synthesis_graph(g: &mut Graph, b: &Bound, config: &VfiConfig, it0: Var, it1: Var, ft0: Var, ft1: Var) -> (Var, Var) {
    let f0 = g.affine(ft0, FLOW_INPUT_SCALE, 0.0);
    let f1 = g.affine(ft1, FLOW_INPUT_SCALE, 0.0);
    let x = g.concat_channels(&[it0, it1, f0, f1]);
    let mut h = x;
    for (i, &dil) in SYNTH_DILATIONS.iter().enumerate() {
        let name = format!("synth.conv{i}");
        h = g.conv3x3_dilated(h, b.var(&format!("{name}.w")), b.var(&format!("{name}.b")), Pad::Zero, dil);
        if i + 1 < SYNTH_DILATIONS.len() {
            h = g.silu(h);
        }
    }
    let logit = if config.use_residual { g.slice_channels(h, 0, 1) } else { h };
    let mask = g.sigmoid(logit);
    let diff = g.sub(it0, it1);
    let md = g.mul_mask(diff, mask);
    let mut out = g.add(it1, md);
    if config.use_residual {
        let r = g.slice_channels(h, 1, 3);
        let sum = g.add(out, r);
        out = clip01(g, sum);
    }
    (out, mask)
}

/// Nodes of one forward pass at `t`.
struct VfiNodes {
    frame: Var,
    mask: Var,
}

fn vfi_graph(
    g: &mut Graph,
    gb: &Bound,
    sb: &Bound,
    model: &VfiModel,
    i0: &Tensor,
    i1: &Tensor,
    f01: &FlowField,
    f10: &FlowField,
    t: f64,
) -> Result<VfiNodes> {
    let (v, s) = gimm_graph(g, gb, &model.gimm_config, f01, f10, t)?;
    // D = (V − 0.5)·2s; F_{t→0} = −t·D, F_{t→1} = (1 − t)·D
    let ft0 = g.affine(v, -t * 2.0 * s, t * s);
    let ft1 = g.affine(v, (1.0 - t) * 2.0 * s, -(1.0 - t) * s);
    let x0 = g.constant(i0.clone());
    let x1 = g.constant(i1.clone());
    let it0 = g.backward_warp(x0, ft0);
    let it1 = g.backward_warp(x1, ft1);
    let (frame, mask) = synthesis_graph(g, sb, &model.vfi_config, it0, it1, ft0, ft1);
    Ok(VfiNodes { frame, mask })
}

/// Interpolated frame and fusion mask at one timestep.
pub fn interpolate_one(
    i0: &FrameImage,
    i1: &FrameImage,
    f01: &FlowField,
    f10: &FlowField,
    t: f64,
    model: &VfiModel,
) -> Result<(FrameImage, Tensor)> {
    check_timestep(t)?;
    i0.as_tensor().expect_same_shape(i1.as_tensor(), "interpolate")?;
    f01.expect_same_dims(f10, "interpolate")?;
    if (i0.height(), i0.width()) != (f01.height(), f01.width()) {
        return Err(GimmError::ShapeMismatch(format!(
            "interpolate: frames {}x{} vs flows {}x{}",
            i0.height(),
            i0.width(),
            f01.height(),
            f01.width()
        )));
    }
    let mut g = Graph::new();
    let gb = model.gimm.set.bind(&mut g, false);
    let sb = model.synth.set.bind(&mut g, false);
    let n = vfi_graph(&mut g, &gb, &sb, model, i0.as_tensor(), i1.as_tensor(), f01, f10, t)?;
    Ok((FrameImage::from_tensor(g.value(n.frame).clone())?, g.value(n.mask).clone()))
}

/// One output frame per requested timestep, in request order.
pub fn interpolate(
    i0: &FrameImage,
    i1: &FrameImage,
    f01: &FlowField,
    f10: &FlowField,
    ts: &[f64],
    model: &VfiModel,
) -> Result<Vec<FrameImage>> {
    model.check()?;
    if let Some(&t) = ts.iter().find(|t| !(0.0..=1.0).contains(*t)) {
        return Err(GimmError::TimestepOutOfRange(t));
    }
    ts.iter().map(|&t| interpolate_one(i0, i1, f01, f10, t, model).map(|r| r.0)).collect()
}

/// Bilateral flows from the motion model followed by the two backward warps.
pub fn warped_by_model(
    i0: &FrameImage,
    i1: &FrameImage,
    f01: &FlowField,
    f10: &FlowField,
    t: f64,
    model: &VfiModel,
) -> Result<(FrameImage, FrameImage)> {
    let (_, ft0, ft1) = gimm_forward(f01, f10, t, &model.gimm, &model.gimm_config)?;
    warp_frames(i0, i1, &ft0, &ft1)
}

/// Optimizer settings for joint training: cosine decay from `8e−5` to
/// `8e−6` after a linear warmup, weight decay `4e−5`.
pub fn vfi_train_defaults() -> TrainConfig {
    TrainConfig {
        lr: 8e-5,
        min_lr: 8e-6,
        schedule: Schedule::Cosine,
        warmup_steps: 100,
        weight_decay: 4e-5,
        crop: 32,
        ..TrainConfig::default()
    }
}

struct FrameDraw {
    i0: Tensor,
    i1: Tensor,
    gt: Tensor,
    f01: FlowField,
    f10: FlowField,
    t: f64,
    name: String,
}

fn draw_frame(rng: &mut ChaCha8Rng, data: &[MotionSample], pool: &[(usize, usize)], crop: usize) -> Result<FrameDraw> {
    let (si, gi) = pool[rng.gen_range(0..pool.len())];
    let s = &data[si];
    let gt = &s.gt[gi];
    let (y0, x0, ch, cw) = random_crop(rng, s.height(), s.width(), crop);
    let frame = gt.frame.as_ref().expect("pool holds entries with frames");
    Ok(FrameDraw {
        i0: s.frame0.crop(y0, x0, ch, cw)?.into_tensor(),
        i1: s.frame1.crop(y0, x0, ch, cw)?.into_tensor(),
        gt: frame.crop(y0, x0, ch, cw)?.into_tensor(),
        f01: s.f01.crop(y0, x0, ch, cw)?,
        f10: s.f10.crop(y0, x0, ch, cw)?,
        t: gt.t,
        name: s.name.clone(),
    })
}

pub type VfiGrads = (Vec<Option<Tensor>>, Vec<Option<Tensor>>);

fn vfi_loss_grads(model: &VfiModel, d: &FrameDraw) -> Result<(f64, VfiGrads)> {
    let cfg = &model.vfi_config;
    let track_gimm = !cfg.freeze_gimm;
    let mut g = Graph::new();
    let gb = model.gimm.set.bind(&mut g, track_gimm);
    let sb = model.synth.set.bind(&mut g, true);
    let n = vfi_graph(&mut g, &gb, &sb, model, &d.i0, &d.i1, &d.f01, &d.f10, d.t)?;
    let mut terms = Vec::new();
    for (kind, w) in [(ImageLoss::Lap, cfg.w_lap), (ImageLoss::Char, cfg.w_char), (ImageLoss::Census, cfg.w_census)] {
        if w > 0.0 {
            terms.push((image_loss_graph(&mut g, n.frame, &d.gt, kind)?, w));
        }
    }
    if cfg.lambda_rec > 0.0 && track_gimm {
        for (t, target) in [(0.0, &d.f01), (1.0, &d.f10.neg())] {
            let (v, s) = gimm_graph(&mut g, &gb, &model.gimm_config, &d.f01, &d.f10, t)?;
            let tv = normalize(target, s)?;
            terms.push((flow_loss_graph(&mut g, v, tv.data(), LossNorm::L2), cfg.lambda_rec));
        }
    }
    let loss = g.weighted_sum(&terms);
    let value = g.value(loss).item();
    let mut grads = g.backward(loss);
    let ggr = if track_gimm { collect_grads(&mut grads, &gb, &model.gimm.set) } else { Vec::new() };
    let sgr = collect_grads(&mut grads, &sb, &model.synth.set);
    Ok((value, (ggr, sgr)))
}

/// Training objective on a whole sample at `t` and its gradients for the
/// motion model (empty when frozen) and the synthesis head, each in
/// parameter-set order.
pub fn vfi_loss_and_grads(model: &VfiModel, sample: &MotionSample, t: f64) -> Result<(f64, VfiGrads)> {
    let gt = sample.gt_at(t)?;
    let frame = gt
        .frame
        .ok_or_else(|| GimmError::Data(format!("sample {} has no frame at t = {t}", sample.name)))?;
    let d = FrameDraw {
        i0: sample.frame0.as_tensor().clone(),
        i1: sample.frame1.as_tensor().clone(),
        gt: frame.into_tensor(),
        f01: sample.f01.clone(),
        f10: sample.f10.clone(),
        t,
        name: sample.name.clone(),
    };
    vfi_loss_grads(model, &d)
}

/// Loss of `model` on one crop, with the same objective `train_vfi` uses.
pub fn vfi_objective(model: &VfiModel, sample: &MotionSample, t: f64) -> Result<LossBreakdown> {
    let gt = sample.gt_at(t)?;
    let frame = gt
        .frame
        .ok_or_else(|| GimmError::Data(format!("sample {} has no frame at t = {t}", sample.name)))?;
    let (pred, _) = interpolate_one(&sample.frame0, &sample.frame1, &sample.f01, &sample.f10, t, model)?;
    let boundary = if model.vfi_config.lambda_rec > 0.0 && !model.vfi_config.freeze_gimm {
        let (v0_hat, _, _) = gimm_forward(&sample.f01, &sample.f10, 0.0, &model.gimm, &model.gimm_config)?;
        let (v1_hat, _, _) = gimm_forward(&sample.f01, &sample.f10, 1.0, &model.gimm, &model.gimm_config)?;
        let s = v0_hat.scale();
        Some(BoundaryFlows {
            v0: normalize(&sample.f01, s)?,
            v1: normalize(&sample.f10.neg(), s)?,
            v0_hat,
            v1_hat,
        })
    } else {
        None
    };
    total_loss(&pred, &frame, boundary.as_ref(), &model.vfi_config)
}

/// Joint optimization of the synthesis head and (unless frozen) the motion
/// model on `(frame pair, target frame, t)` triples drawn from samples that
/// carry ground-truth frames.
pub fn train_vfi(
    mut model: VfiModel,
    data: &[MotionSample],
    hyper: &TrainConfig,
    mut progress: impl FnMut(usize, f64),
) -> Result<(VfiModel, TrainLog)> {
    hyper.validate()?;
    model.check()?;
    let freeze = model.vfi_config.freeze_gimm;
    let mut log = TrainLog {
        losses: Vec::with_capacity(hyper.steps),
        trainable_params: model.synth.set.trainable_count() + if freeze { 0 } else { model.gimm.trainable_count() },
    };
    if hyper.steps == 0 {
        return Ok((model, log));
    }
    if data.is_empty() {
        return Err(GimmError::EmptyDataset);
    }
    let pool: Vec<(usize, usize)> = data
        .iter()
        .enumerate()
        .flat_map(|(i, s)| s.gt.iter().enumerate().filter(|(_, gt)| gt.frame.is_some()).map(move |(j, _)| (i, j)))
        .collect();
    if pool.is_empty() {
        return Err(GimmError::Data("no sample carries a ground-truth frame".into()));
    }
    let need = 1usize << (losses::PYRAMID_LEVELS - 1);
    if hyper.crop < need {
        return Err(GimmError::TooSmall(format!("crop {} below the pyramid minimum {need}", hyper.crop)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed ^ 0xf4a3_e5);
    let mut gopt = AdamW::new(&model.gimm.set, hyper);
    let mut sopt = AdamW::new(&model.synth.set, hyper);
    for step in 0..hyper.steps {
        let (mut gacc, mut sacc) = (Vec::new(), Vec::new());
        let mut total = 0.0;
        for _ in 0..hyper.batch {
            let d = draw_frame(&mut rng, data, &pool, hyper.crop)?;
            let (l, (gg, sg)) = vfi_loss_grads(&model, &d)?;
            if !l.is_finite() || !grads_finite(&gg) || !grads_finite(&sg) {
                return Err(GimmError::NonFiniteLoss {
                    step,
                    detail: format!("sample {} at t = {}: loss {l}", d.name, d.t),
                });
            }
            total += l;
            accumulate(&mut gacc, gg);
            accumulate(&mut sacc, sg);
        }
        let k = 1.0 / hyper.batch as f64;
        let lr = hyper.lr_at(step);
        let scale = |v: Vec<Option<Tensor>>| -> Vec<Option<Tensor>> { v.into_iter().map(|g| g.map(|t| t.scale(k))).collect() };
        if !freeze {
            gopt.step(&mut model.gimm.set, &scale(gacc), lr);
        }
        sopt.step(&mut model.synth.set, &scale(sacc), lr);
        let loss = total * k;
        log.losses.push(loss);
        progress(step, loss);
    }
    Ok((model, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{synth_sample, Motion, MotionSpec};

    fn tiny_gimm() -> GimmConfig {
        GimmConfig {
            d_enc: 4,
            d_lat: 8,
            siren_width: 16,
            ..GimmConfig::default()
        }
    }

    fn tiny_model(vfi: VfiConfig) -> VfiModel {
        let c = tiny_gimm();
        VfiModel::new(c.clone(), GimmParams::init(&c, 1).unwrap(), vfi, 2).unwrap()
    }

    fn sample() -> MotionSample {
        let spec = MotionSpec::new(Motion::Translation { velocity: [2.0, 1.0] }, 4);
        synth_sample(&spec, 16, 16, &[0.5]).unwrap()
    }

    #[test]
    fn warp_with_zero_flows_is_identity() {
        let s = sample();
        let z = FlowField::zeros(16, 16);
        let (a, b) = warp_frames(&s.frame0, &s.frame1, &z, &z).unwrap();
        assert_eq!(a, s.frame0);
        assert_eq!(b, s.frame1);
    }

    #[test]
    fn fuse_boundaries() {
        let a = FrameImage::constant(3, 4, 0.0);
        let b = FrameImage::constant(3, 4, 1.0);
        let one = Tensor::full(&[3, 4, 1], 1.0);
        assert_eq!(fuse(&a, &b, &one, None).unwrap(), a);
        assert_eq!(fuse(&a, &b, &Tensor::zeros(&[3, 4, 1]), None).unwrap(), b);
        let half = fuse(&a, &b, &Tensor::full(&[3, 4, 1], 0.5), None).unwrap();
        assert!(half.as_tensor().data().iter().all(|&v| v == 0.5));
        let r = Tensor::full(&[3, 4, 3], 0.8);
        assert!(fuse(&a, &b, &half.as_tensor().slice_channels(0, 1), Some(&r))
            .unwrap()
            .as_tensor()
            .data()
            .iter()
            .all(|&v| v == 1.0));
        assert!(matches!(fuse(&a, &b, &Tensor::zeros(&[3, 3, 1]), None), Err(GimmError::ShapeMismatch(_))));
    }

    #[test]
    fn rec_loss_examples() {
        let f = FlowField::constant(4, 4, 0.0, 0.0);
        let v = normalize(&f, 1.0).unwrap();
        assert_eq!(rec_loss(&v, &v, &v, &v).unwrap(), 0.0);
        let off = NormalizedFlow::new(v.data().zip_map(&Tensor::from_fn_hwc(4, 4, 2, |_, _, c| [0.3, 0.4][c]), |a, b| a + b), 1.0).unwrap();
        assert!((rec_loss(&off, &v, &v, &v).unwrap() - 0.5).abs() < 1e-12);
        let other = normalize(&f, 2.0).unwrap();
        assert!(matches!(rec_loss(&v, &v, &other, &v), Err(GimmError::ScaleMismatch(..))));
    }

    #[test]
    fn total_loss_bookkeeping() {
        let s = sample();
        let gt = s.gt[0].frame.clone().unwrap();
        let cfg = VfiConfig { lambda_rec: 0.0, ..VfiConfig::default() };
        let b = total_loss(&s.frame0, &gt, None, &cfg).unwrap();
        assert!((b.total - (b.lap + b.char + b.census)).abs() < 1e-12);
        let perfect = total_loss(&gt, &gt, None, &VfiConfig::default()).unwrap();
        assert!((perfect.total - 2e-3).abs() < 1e-15);
    }

    #[test]
    fn interpolate_orders_and_counts() {
        let s = sample();
        let m = tiny_model(VfiConfig::default());
        let ts: Vec<f64> = (1..8).map(|k| k as f64 / 8.0).collect();
        let out = interpolate(&s.frame0, &s.frame1, &s.f01, &s.f10, &ts, &m).unwrap();
        assert_eq!(out.len(), 7);
        let third = interpolate(&s.frame0, &s.frame1, &s.f01, &s.f10, &ts[2..3], &m).unwrap();
        assert_eq!(third[0], out[2]);
        assert!(matches!(
            interpolate(&s.frame0, &s.frame1, &s.f01, &s.f10, &[1.5], &m),
            Err(GimmError::TimestepOutOfRange(_))
        ));
    }

    #[test]
    fn frozen_gimm_stays_bit_identical() {
        let m = tiny_model(VfiConfig { freeze_gimm: true, ..VfiConfig::default() });
        let hyper = TrainConfig { lr: 1e-3, steps: 3, crop: 16, ..vfi_train_defaults() };
        let (out, log) = train_vfi(m.clone(), &[sample()], &hyper, |_, _| {}).unwrap();
        assert_eq!(out.gimm, m.gimm);
        assert_ne!(out.synth, m.synth);
        assert_eq!(log.losses.len(), 3);
    }

    #[test]
    fn seeded_training_repeats() {
        let m = tiny_model(VfiConfig::default());
        let hyper = TrainConfig { lr: 1e-3, steps: 3, crop: 16, ..vfi_train_defaults() };
        let (a, la) = train_vfi(m.clone(), &[sample()], &hyper, |_, _| {}).unwrap();
        let (b, lb) = train_vfi(m, &[sample()], &hyper, |_, _| {}).unwrap();
        assert_eq!(la, lb);
        assert_eq!(a, b);
    }

    #[test]
    fn training_needs_frames_and_crop() {
        let m = tiny_model(VfiConfig::default());
        let mut s = sample();
        let hyper = TrainConfig { steps: 1, crop: 16, ..vfi_train_defaults() };
        assert!(matches!(train_vfi(m.clone(), &[], &hyper, |_, _| {}), Err(GimmError::EmptyDataset)));
        let small = TrainConfig { crop: 8, ..hyper.clone() };
        assert!(matches!(train_vfi(m.clone(), &[s.clone()], &small, |_, _| {}), Err(GimmError::TooSmall(_))));
        s.gt[0].frame = None;
        assert!(matches!(train_vfi(m, &[s], &hyper, |_, _| {}), Err(GimmError::Data(_))));
    }

    #[test]
    fn objective_matches_training_loss_without_crop() {
        let m = tiny_model(VfiConfig::default());
        let s = sample();
        let b = vfi_objective(&m, &s, 0.5).unwrap();
        let d = FrameDraw {
            i0: s.frame0.as_tensor().clone(),
            i1: s.frame1.as_tensor().clone(),
            gt: s.gt[0].frame.clone().unwrap().into_tensor(),
            f01: s.f01.clone(),
            f10: s.f10.clone(),
            t: 0.5,
            name: s.name.clone(),
        };
        let (l, _) = vfi_loss_grads(&m, &d).unwrap();
        assert!((l - b.total).abs() < 1e-9, "{l} vs {}", b.total);
    }
}
