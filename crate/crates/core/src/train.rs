//! Optimizer, learning-rate schedule and the motion-model training loop.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Grads, Graph};
use crate::error::{GimmError, Result};
use crate::flow::FlowField;
use crate::model::{flow_loss_graph, gimm_graph, GimmConfig, GimmParams};
use crate::normalization::make_target;
use crate::params::{Bound, ParamSet};
use crate::synth::MotionSample;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    #[default]
    Constant,
    /// Cosine annealing from the peak rate down to `min_lr`.
    Cosine,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub min_lr: f64,
    pub schedule: Schedule,
    pub warmup_steps: usize,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub steps: usize,
    pub batch: usize,
    pub seed: u64,
    /// Side of the random square training crop; samples smaller than this
    /// are used whole.
    pub crop: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            min_lr: 0.0,
            schedule: Schedule::Constant,
            warmup_steps: 0,
            weight_decay: 0.0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            steps: 2000,
            batch: 1,
            seed: 0,
            crop: 64,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(GimmError::Config(m.to_string()));
        if !(self.lr >= 0.0) || !(self.min_lr >= 0.0) || !(self.weight_decay >= 0.0) {
            return bad("learning rates and weight decay must be nonnegative");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.eps > 0.0) {
            return bad("beta1, beta2 must lie in [0, 1) and eps must be positive");
        }
        if self.batch == 0 {
            return bad("batch must be at least 1");
        }
        if self.crop < 2 {
            return bad("crop must be at least 2");
        }
        Ok(())
    }

    /// Learning rate at zero-based `step`.
    pub fn lr_at(&self, step: usize) -> f64 {
        if step < self.warmup_steps {
            return self.lr * (step + 1) as f64 / self.warmup_steps as f64;
        }
        match self.schedule {
            Schedule::Constant => self.lr,
            Schedule::Cosine => {
                let span = self.steps.saturating_sub(self.warmup_steps).max(1) as f64;
                let p = ((step - self.warmup_steps) as f64 / span).min(1.0);
                self.min_lr + 0.5 * (self.lr - self.min_lr) * (1.0 + (std::f64::consts::PI * p).cos())
            }
        }
    }
}

/// Adaptive moments with decoupled weight decay.
pub struct AdamW {
    m: Vec<Option<Tensor>>,
    v: Vec<Option<Tensor>>,
    t: i32,
    beta1: f64,
    beta2: f64,
    eps: f64,
    weight_decay: f64,
}

impl AdamW {
    pub fn new(params: &ParamSet, cfg: &TrainConfig) -> Self {
        let zeros = |e: &crate::params::ParamEntry| e.trainable.then(|| Tensor::zeros(e.value.shape()));
        Self {
            m: params.entries().iter().map(zeros).collect(),
            v: params.entries().iter().map(zeros).collect(),
            t: 0,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.eps,
            weight_decay: cfg.weight_decay,
        }
    }

    /// One update with gradients aligned to `params.entries()`.
    pub fn step(&mut self, params: &mut ParamSet, grads: &[Option<Tensor>], lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t);
        let bc2 = 1.0 - self.beta2.powi(self.t);
        for (i, e) in params.entries_mut().iter_mut().enumerate() {
            if !e.trainable {
                continue;
            }
            let (Some(m), Some(v)) = (self.m[i].as_mut(), self.v[i].as_mut()) else { continue };
            let decay = 1.0 - lr * self.weight_decay;
            let p = e.value.data_mut();
            match grads.get(i).and_then(Option::as_ref) {
                Some(g) => {
                    for (((pj, mj), vj), &gj) in p.iter_mut().zip(m.data_mut()).zip(v.data_mut()).zip(g.data()) {
                        *mj = self.beta1 * *mj + (1.0 - self.beta1) * gj;
                        *vj = self.beta2 * *vj + (1.0 - self.beta2) * gj * gj;
                        let mh = *mj / bc1;
                        let vh = *vj / bc2;
                        *pj = *pj * decay - lr * mh / (vh.sqrt() + self.eps);
                    }
                }
                None => p.iter_mut().for_each(|pj| *pj *= decay),
            }
        }
    }
}

/// Per-step training losses and bookkeeping.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub losses: Vec<f64>,
    pub trainable_params: usize,
}

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("step,loss\n");
        for (i, l) in self.losses.iter().enumerate() {
            s.push_str(&format!("{i},{l:.12e}\n"));
        }
        s
    }
}

/// Picks a crop origin and size for an `h×w` sample.
pub(crate) fn random_crop(rng: &mut ChaCha8Rng, h: usize, w: usize, crop: usize) -> (usize, usize, usize, usize) {
    let (ch, cw) = (crop.min(h), crop.min(w));
    let y0 = rng.gen_range(0..=h - ch);
    let x0 = rng.gen_range(0..=w - cw);
    (y0, x0, ch, cw)
}

pub(crate) fn collect_grads(grads: &mut Grads, bound: &Bound, set: &ParamSet) -> Vec<Option<Tensor>> {
    bound
        .vars()
        .iter()
        .zip(set.entries())
        .map(|(&v, e)| if e.trainable { grads.take(v) } else { None })
        .collect()
}

pub(crate) fn accumulate(acc: &mut Vec<Option<Tensor>>, add: Vec<Option<Tensor>>) {
    if acc.is_empty() {
        *acc = add;
        return;
    }
    for (a, b) in acc.iter_mut().zip(add) {
        match (a.as_mut(), b) {
            (Some(x), Some(y)) => x.add_assign(&y),
            (None, Some(y)) => *a = Some(y),
            _ => {}
        }
    }
}

pub(crate) fn grads_finite(grads: &[Option<Tensor>]) -> bool {
    grads.iter().flatten().all(Tensor::all_finite)
}

/// One `(sample, t, crop)` draw for motion supervision.
pub(crate) struct MotionDraw {
    pub f01: FlowField,
    pub f10: FlowField,
    pub ft0: FlowField,
    pub ft1: FlowField,
    pub t: f64,
    pub name: String,
}

pub(crate) fn draw_motion(rng: &mut ChaCha8Rng, data: &[MotionSample], crop: usize) -> Result<MotionDraw> {
    let s = &data[rng.gen_range(0..data.len())];
    let gt = &s.gt[rng.gen_range(0..s.gt.len())];
    let (y0, x0, ch, cw) = random_crop(rng, s.height(), s.width(), crop);
    Ok(MotionDraw {
        f01: s.f01.crop(y0, x0, ch, cw)?,
        f10: s.f10.crop(y0, x0, ch, cw)?,
        ft0: gt.ft0.crop(y0, x0, ch, cw)?,
        ft1: gt.ft1.crop(y0, x0, ch, cw)?,
        t: gt.t,
        name: s.name.clone(),
    })
}

pub(crate) fn motion_loss_grads(
    params: &GimmParams,
    config: &GimmConfig,
    d: &MotionDraw,
) -> Result<(f64, Vec<Option<Tensor>>)> {
    gimm_loss_and_grads(params, config, &d.f01, &d.f10, &d.ft0, &d.ft1, d.t)
}

/// Flow objective at `t` against the bilateral ground truth `(ft0, ft1)`
/// and its gradient for every parameter, in `params.set` order (`None` for
/// frozen entries).
pub fn gimm_loss_and_grads(
    params: &GimmParams,
    config: &GimmConfig,
    f01: &FlowField,
    f10: &FlowField,
    ft0: &FlowField,
    ft1: &FlowField,
    t: f64,
) -> Result<(f64, Vec<Option<Tensor>>)> {
    let mut g = Graph::new();
    let b = params.set.bind(&mut g, true);
    let (v, s) = gimm_graph(&mut g, &b, config, f01, f10, t)?;
    let target = make_target(ft0, ft1, s)?;
    let loss = flow_loss_graph(&mut g, v, target.data(), config.loss_norm);
    let value = g.value(loss).item();
    let mut grads = g.backward(loss);
    Ok((value, collect_grads(&mut grads, &b, &params.set)))
}

fn check_dataset(data: &[MotionSample]) -> Result<()> {
    if data.is_empty() {
        return Err(GimmError::EmptyDataset);
    }
    if let Some(s) = data.iter().find(|s| s.gt.is_empty()) {
        return Err(GimmError::Data(format!("sample {} has no ground-truth timestep", s.name)));
    }
    Ok(())
}

/// Trains from freshly initialized parameters (seeded by `hyper.seed`).
pub fn train_gimm(data: &[MotionSample], config: &GimmConfig, hyper: &TrainConfig) -> Result<(GimmParams, TrainLog)> {
    let params = GimmParams::init(config, hyper.seed)?;
    train_gimm_from(params, data, config, hyper, |_, _| {})
}

/// Continues training `params`; `progress(step, loss)` is called after
/// every step.
pub fn train_gimm_from(
    mut params: GimmParams,
    data: &[MotionSample],
    config: &GimmConfig,
    hyper: &TrainConfig,
    mut progress: impl FnMut(usize, f64),
) -> Result<(GimmParams, TrainLog)> {
    hyper.validate()?;
    params.check(config)?;
    let mut log = TrainLog {
        losses: Vec::with_capacity(hyper.steps),
        trainable_params: params.trainable_count(),
    };
    if hyper.steps == 0 {
        return Ok((params, log));
    }
    check_dataset(data)?;
    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed ^ 0x5eed_0f_6133);
    let mut opt = AdamW::new(&params.set, hyper);
    for step in 0..hyper.steps {
        let mut acc = Vec::new();
        let mut total = 0.0;
        for _ in 0..hyper.batch {
            let d = draw_motion(&mut rng, data, hyper.crop)?;
            let (l, gr) = motion_loss_grads(&params, config, &d)?;
            if !l.is_finite() || !grads_finite(&gr) {
                return Err(GimmError::NonFiniteLoss {
                    step,
                    detail: format!("sample {} at t = {}: loss {l}", d.name, d.t),
                });
            }
            total += l;
            accumulate(&mut acc, gr);
        }
        let k = 1.0 / hyper.batch as f64;
        let acc: Vec<Option<Tensor>> = acc.into_iter().map(|g| g.map(|t| t.scale(k))).collect();
        opt.step(&mut params.set, &acc, hyper.lr_at(step));
        let loss = total * k;
        log.losses.push(loss);
        progress(step, loss);
    }
    Ok((params, log))
}

/// Wall-clock seconds of `f`, for progress reporting only.
pub fn timed<T>(f: impl FnOnce() -> T) -> (T, f64) {
    let t0 = Instant::now();
    let r = f();
    (r, t0.elapsed().as_secs_f64())
}
