//! Command-line front end.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::checkpoint::{load_checkpoint, load_vfi, save_checkpoint, save_vfi};
use crate::config::{resolve_output, RunConfig, EFFECTIVE_CONFIG};
use crate::dataset::{build_dataset, load_dataset, parse_spec_list, random_specs, write_dataset, MotionKind};
use crate::error::{GimmError, Result};
use crate::eval::{
    run_interp_benchmark, run_motion_benchmark, FrameAverage, FrameModel, FwarpMotion, GimmMotion, GimmVfi,
    LinearMotion, MotionModel,
};
use crate::flow::{flow_to_rgb, read_flo, FlowField, FrameImage};
use crate::model::{gimm_forward, Ablation, GimmParams};
use crate::synth::{render_frame, synth_flow, MotionSample, MotionSpec};
use crate::synthesis::{interpolate_one, VfiModel};
use crate::train::{train_gimm_from, TrainLog};
use crate::warping::SplatMode;

#[derive(Parser, Debug)]
#[command(name = "gimm", version, about = "Implicit motion modeling and frame interpolation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Render a synthetic dataset from motion specs.
    Gen(GenArgs),
    /// Train the motion model.
    TrainGimm(TrainGimmArgs),
    /// Train the synthesis head jointly with a pretrained motion model.
    TrainVfi(TrainVfiArgs),
    /// Motion benchmark: EPE and flow PSNR per method and timestep.
    EvalMotion(EvalMotionArgs),
    /// Interpolation benchmark: image PSNR per method and multiple.
    EvalInterp(EvalInterpArgs),
    /// Interpolate frames at the requested timesteps.
    Interp(InterpArgs),
    /// Color-code a .flo file as PNG.
    Viz(VizArgs),
}

fn parse_size(s: &str) -> std::result::Result<(usize, usize), String> {
    let parse = |v: &str| v.trim().parse::<usize>().map_err(|e| format!("bad size {s:?}: {e}"));
    match s.split_once(['x', 'X']) {
        Some((h, w)) => Ok((parse(h)?, parse(w)?)),
        None => parse(s).map(|n| (n, n)),
    }
}

#[derive(Args, Debug, Serialize)]
pub struct GenArgs {
    /// JSON array of motion specs.
    #[arg(long)]
    pub spec_file: Option<PathBuf>,
    /// Draw this many random specs instead of reading a file.
    #[arg(long)]
    pub random: Option<usize>,
    /// Motion kinds cycled through by --random.
    #[arg(long, value_delimiter = ',', default_value = "translation,quadratic,rotation")]
    pub kinds: Vec<MotionKind>,
    #[arg(long)]
    #[serde(skip)]
    pub out: Option<PathBuf>,
    /// Frame size, `N` or `HxW`.
    #[arg(long, value_parser = parse_size, default_value = "64")]
    pub size: (usize, usize),
    /// Ground-truth timesteps stored per sample.
    #[arg(long, value_delimiter = ',', default_value = "0.5")]
    pub timesteps: Vec<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug, Serialize)]
pub struct TrainGimmArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    #[serde(skip)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub crop: Option<usize>,
    #[arg(long)]
    pub ablation: Option<Ablation>,
    #[arg(long, value_parser = parse_splat_mode)]
    pub splat_mode: Option<SplatMode>,
    #[arg(long)]
    pub omega0: Option<f64>,
    /// Only supervise these stored timesteps.
    #[arg(long, value_delimiter = ',')]
    pub supervise: Option<Vec<f64>>,
    /// Continue from an existing checkpoint instead of fresh parameters.
    #[arg(long)]
    pub init: Option<PathBuf>,
}

fn parse_splat_mode(s: &str) -> std::result::Result<SplatMode, String> {
    serde_json::from_value(serde_json::Value::String(s.into())).map_err(|_| format!("unknown splat mode {s:?}"))
}

#[derive(Args, Debug, Serialize)]
pub struct TrainVfiArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Pretrained motion-model checkpoint.
    #[arg(long)]
    pub gimm_ckpt: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    #[serde(skip)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub crop: Option<usize>,
    #[arg(long)]
    pub freeze_gimm: bool,
    #[arg(long)]
    pub lambda_rec: Option<f64>,
    #[arg(long)]
    pub use_residual: bool,
}

#[derive(Args, Debug, Serialize)]
pub struct EvalMotionArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Motion checkpoints, `PATH` or `NAME=PATH`; repeatable.
    #[arg(long)]
    pub ckpt: Vec<String>,
    /// Baselines to include: linear, fwarp.
    #[arg(long, value_delimiter = ',', default_value = "linear,fwarp")]
    pub baselines: Vec<String>,
    #[arg(long, value_delimiter = ',', default_value = "0.5")]
    pub timesteps: Vec<f64>,
    /// Restrict to linear or nonlinear samples.
    #[arg(long, default_value = "all")]
    pub subset: String,
    #[arg(long)]
    #[serde(skip)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
pub struct EvalInterpArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Interpolation checkpoints, `PATH` or `NAME=PATH`; repeatable.
    #[arg(long)]
    pub ckpt: Vec<String>,
    /// Baselines to include: average.
    #[arg(long, value_delimiter = ',', default_value = "average")]
    pub baselines: Vec<String>,
    #[arg(long, value_delimiter = ',', default_value = "2")]
    pub multiples: Vec<usize>,
    #[arg(long, default_value = "all")]
    pub subset: String,
    #[arg(long)]
    #[serde(skip)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
pub struct InterpArgs {
    #[arg(long, requires_all = ["frame1", "flow0", "flow1"], conflicts_with = "synthetic_spec")]
    pub frame0: Option<PathBuf>,
    #[arg(long)]
    pub frame1: Option<PathBuf>,
    /// Forward flow `F_{0→1}` (.flo).
    #[arg(long)]
    pub flow0: Option<PathBuf>,
    /// Backward flow `F_{1→0}` (.flo).
    #[arg(long)]
    pub flow1: Option<PathBuf>,
    /// One motion spec (JSON) rendered with oracle flows.
    #[arg(long)]
    pub synthetic_spec: Option<PathBuf>,
    #[arg(long, value_parser = parse_size, default_value = "64")]
    pub size: (usize, usize),
    /// Interpolation checkpoint.
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "0.5")]
    pub times: Vec<f64>,
    #[arg(long)]
    #[serde(skip)]
    pub out: Option<PathBuf>,
    /// Also write color-coded bilateral flows.
    #[arg(long)]
    pub viz_flow: bool,
}

#[derive(Args, Debug, Serialize)]
pub struct VizArgs {
    #[arg(long)]
    pub flow: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Magnitude mapped to full saturation; defaults to the field maximum.
    #[arg(long)]
    pub max_mag: Option<f64>,
}

/// Exit code table: 0 success, 2 bad arguments or configuration,
/// 3 data or file errors, 4 numerical failure.
pub fn exit_code(e: &GimmError) -> i32 {
    match e {
        GimmError::Config(_) | GimmError::TimestepOutOfRange(_) => 2,
        GimmError::NonFiniteLoss { .. } => 4,
        _ => 3,
    }
}

#[derive(Serialize)]
struct Effective<'a, A: Serialize> {
    command: &'a str,
    args: &'a A,
    #[serde(skip_serializing_if = "Option::is_none")]
    config: Option<&'a RunConfig>,
}

fn echo<A: Serialize>(dir: &Path, command: &str, args: &A, config: Option<&RunConfig>) -> Result<()> {
    let text = toml::to_string(&Effective { command, args, config })
        .map_err(|e| GimmError::Config(format!("cannot serialize effective config: {e}")))?;
    let path = dir.join(EFFECTIVE_CONFIG);
    fs::write(&path, text).map_err(|e| GimmError::io(path, e))
}

fn mkdir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| GimmError::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| GimmError::io(path, e))
}

fn check_times(ts: &[f64]) -> Result<()> {
    match ts.iter().find(|t| !(0.0..=1.0).contains(*t)) {
        Some(&t) => Err(GimmError::TimestepOutOfRange(t)),
        None => Ok(()),
    }
}

fn progress_every(steps: usize) -> usize {
    (steps / 20).max(1)
}

fn report_progress(what: &str, steps: usize) -> impl FnMut(usize, f64) + '_ {
    let every = progress_every(steps);
    move |step, loss| {
        if (step + 1) % every == 0 || step + 1 == steps {
            eprintln!("{what} step {}/{steps} loss {loss:.6}", step + 1);
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Gen(a) => cmd_gen(&a),
        Command::TrainGimm(a) => cmd_train_gimm(&a),
        Command::TrainVfi(a) => cmd_train_vfi(&a),
        Command::EvalMotion(a) => cmd_eval_motion(&a),
        Command::EvalInterp(a) => cmd_eval_interp(&a),
        Command::Interp(a) => cmd_interp(&a),
        Command::Viz(a) => cmd_viz(&a),
    }
}

pub fn cmd_gen(a: &GenArgs) -> Result<()> {
    let (h, w) = a.size;
    check_times(&a.timesteps)?;
    let specs = match (&a.spec_file, a.random) {
        (Some(path), None) => parse_spec_list(&fs::read_to_string(path).map_err(|e| GimmError::io(path, e))?)?,
        (None, Some(n)) => random_specs(n, &a.kinds, h, w, a.seed),
        _ => return Err(GimmError::Config("exactly one of --spec-file and --random is required".into())),
    };
    let samples = build_dataset(&specs, h, w, &a.timesteps)?;
    let out = resolve_output(a.out.as_deref(), &RunConfig::default(), "gen");
    write_dataset(&out, &samples, a.seed)?;
    echo(&out, "gen", a, None)?;
    eprintln!("wrote {} samples to {}", samples.len(), out.display());
    Ok(())
}

fn load_training_data(root: &Path, supervise: Option<&[f64]>) -> Result<Vec<MotionSample>> {
    let mut data = load_dataset(root)?;
    if let Some(keep) = supervise {
        for s in &mut data {
            s.gt.retain(|g| keep.contains(&g.t));
        }
        data.retain(|s| !s.gt.is_empty());
    }
    Ok(data)
}

fn write_log(dir: &Path, log: &TrainLog) -> Result<()> {
    write_text(&dir.join("loss.csv"), &log.to_csv())
}

pub fn cmd_train_gimm(a: &TrainGimmArgs) -> Result<()> {
    let mut cfg = RunConfig::load_or_default(a.config.as_deref())?;
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    if let Some(v) = a.steps {
        cfg.train.steps = v;
    }
    if let Some(v) = a.lr {
        cfg.train.lr = v;
    }
    if let Some(v) = a.batch {
        cfg.train.batch = v;
    }
    if let Some(v) = a.crop {
        cfg.train.crop = v;
    }
    if let Some(v) = a.ablation {
        cfg.gimm.ablation = v;
    }
    if let Some(v) = a.splat_mode {
        cfg.gimm.splat_mode = v;
    }
    if let Some(v) = a.omega0 {
        cfg.gimm.siren_omega0 = v;
    }
    cfg.train.seed = cfg.seed;
    cfg.validate()?;
    let data = load_training_data(&a.data, a.supervise.as_deref())?;
    let params = match &a.init {
        Some(p) => {
            let (params, c) = load_checkpoint(p)?;
            if c != cfg.gimm {
                return Err(GimmError::Config(format!("{} was trained with a different model config", p.display())));
            }
            params
        }
        None => GimmParams::init(&cfg.gimm, cfg.seed)?,
    };
    let out = resolve_output(a.out.as_deref(), &cfg, "train-gimm");
    mkdir(&out)?;
    echo(&out, "train-gimm", a, Some(&cfg))?;
    eprintln!("training {} parameters for {} steps", params.trainable_count(), cfg.train.steps);
    let (params, log) = train_gimm_from(params, &data, &cfg.gimm, &cfg.train, report_progress("gimm", cfg.train.steps))?;
    save_checkpoint(&params, &cfg.gimm, &out.join("gimm.ckpt"))?;
    write_log(&out, &log)
}

pub fn cmd_train_vfi(a: &TrainVfiArgs) -> Result<()> {
    let mut cfg = RunConfig::load_or_default(a.config.as_deref())?;
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    if let Some(v) = a.steps {
        cfg.vfi_train.steps = v;
    }
    if let Some(v) = a.lr {
        cfg.vfi_train.lr = v;
    }
    if let Some(v) = a.crop {
        cfg.vfi_train.crop = v;
    }
    if let Some(v) = a.lambda_rec {
        cfg.vfi.lambda_rec = v;
    }
    cfg.vfi.freeze_gimm |= a.freeze_gimm;
    cfg.vfi.use_residual |= a.use_residual;
    cfg.vfi_train.seed = cfg.seed;
    let (gimm, gimm_config) = load_checkpoint(&a.gimm_ckpt)?;
    cfg.gimm = gimm_config.clone();
    cfg.validate()?;
    let data = load_dataset(&a.data)?;
    let model = VfiModel::new(gimm_config, gimm, cfg.vfi.clone(), cfg.seed)?;
    let out = resolve_output(a.out.as_deref(), &cfg, "train-vfi");
    mkdir(&out)?;
    echo(&out, "train-vfi", a, Some(&cfg))?;
    let steps = cfg.vfi_train.steps;
    let (model, log) = crate::synthesis::train_vfi(model, &data, &cfg.vfi_train, report_progress("vfi", steps))?;
    save_vfi(&model, &out.join("vfi.ckpt"))?;
    write_log(&out, &log)
}

fn named(spec: &str) -> (String, PathBuf) {
    match spec.split_once('=') {
        Some((n, p)) => (n.to_string(), PathBuf::from(p)),
        None => {
            let p = PathBuf::from(spec);
            let n = p.file_stem().map_or("model".into(), |s| s.to_string_lossy().into_owned());
            (n, p)
        }
    }
}

fn select_subset(data: Vec<MotionSample>, subset: &str) -> Result<Vec<MotionSample>> {
    let keep: fn(&MotionSample) -> bool = match subset {
        "all" => |_| true,
        "linear" => |s| s.is_linear(),
        "nonlinear" => |s| !s.is_linear(),
        other => return Err(GimmError::Config(format!("unknown subset {other:?} (all, linear, nonlinear)"))),
    };
    let data: Vec<MotionSample> = data.into_iter().filter(keep).collect();
    if data.is_empty() {
        return Err(GimmError::EmptyDataset);
    }
    Ok(data)
}

pub fn cmd_eval_motion(a: &EvalMotionArgs) -> Result<()> {
    check_times(&a.timesteps)?;
    let data = select_subset(load_dataset(&a.data)?, &a.subset)?;
    let mut owned: Vec<Box<dyn MotionModel>> = Vec::new();
    for b in &a.baselines {
        match b.as_str() {
            "linear" => owned.push(Box::new(LinearMotion)),
            "fwarp" => owned.push(Box::new(FwarpMotion)),
            "none" | "" => {}
            other => return Err(GimmError::Config(format!("unknown motion baseline {other:?}"))),
        }
    }
    for c in &a.ckpt {
        let (name, path) = named(c);
        let (params, config) = load_checkpoint(&path)?;
        owned.push(Box::new(GimmMotion { name, params, config }));
    }
    if owned.is_empty() {
        return Err(GimmError::Config("no method to evaluate".into()));
    }
    let methods: Vec<&dyn MotionModel> = owned.iter().map(|m| m.as_ref()).collect();
    let report = run_motion_benchmark(&data, &methods, &a.timesteps)?;
    let out = resolve_output(a.out.as_deref(), &RunConfig::default(), "eval-motion");
    mkdir(&out)?;
    echo(&out, "eval-motion", a, None)?;
    write_text(&out.join("motion.csv"), &report.to_csv())?;
    write_text(&out.join("motion_samples.csv"), &report.samples_csv())?;
    let table = report.to_table();
    write_text(&out.join("motion.txt"), &table)?;
    print!("{table}");
    Ok(())
}

pub fn cmd_eval_interp(a: &EvalInterpArgs) -> Result<()> {
    let data = select_subset(load_dataset(&a.data)?, &a.subset)?;
    let mut owned: Vec<Box<dyn FrameModel>> = Vec::new();
    for b in &a.baselines {
        match b.as_str() {
            "average" => owned.push(Box::new(FrameAverage)),
            "none" | "" => {}
            other => return Err(GimmError::Config(format!("unknown frame baseline {other:?}"))),
        }
    }
    for c in &a.ckpt {
        let (name, path) = named(c);
        owned.push(Box::new(GimmVfi { name, model: load_vfi(&path)? }));
    }
    if owned.is_empty() {
        return Err(GimmError::Config("no method to evaluate".into()));
    }
    let methods: Vec<&dyn FrameModel> = owned.iter().map(|m| m.as_ref()).collect();
    let report = run_interp_benchmark(&data, &methods, &a.multiples)?;
    let out = resolve_output(a.out.as_deref(), &RunConfig::default(), "eval-interp");
    mkdir(&out)?;
    echo(&out, "eval-interp", a, None)?;
    write_text(&out.join("interp.csv"), &report.to_csv())?;
    write_text(&out.join("interp_samples.csv"), &report.samples_csv())?;
    let table = report.to_table();
    write_text(&out.join("interp.txt"), &table)?;
    print!("{table}");
    Ok(())
}

/// File-name tag of a timestep.
pub fn time_tag(t: f64) -> String {
    format!("t{t:.6}")
}

fn load_inputs(a: &InterpArgs) -> Result<(FrameImage, FrameImage, FlowField, FlowField)> {
    match (&a.frame0, &a.synthetic_spec) {
        (Some(f0), None) => {
            let missing = |n: &str| GimmError::Config(format!("--{n} is required with --frame0"));
            let i0 = FrameImage::load_png(f0)?;
            let i1 = FrameImage::load_png(a.frame1.as_ref().ok_or_else(|| missing("frame1"))?)?;
            let f01 = read_flo(a.flow0.as_ref().ok_or_else(|| missing("flow0"))?)?;
            let f10 = read_flo(a.flow1.as_ref().ok_or_else(|| missing("flow1"))?)?;
            if i0.as_tensor().shape() != i1.as_tensor().shape() || (i0.height(), i0.width()) != (f01.height(), f01.width()) || !f01.same_dims(&f10) {
                return Err(GimmError::ShapeMismatch(format!(
                    "frames {}x{} / {}x{} and flows {}x{} / {}x{} must agree",
                    i0.height(),
                    i0.width(),
                    i1.height(),
                    i1.width(),
                    f01.height(),
                    f01.width(),
                    f10.height(),
                    f10.width()
                )));
            }
            Ok((i0, i1, f01, f10))
        }
        (None, Some(path)) => {
            let text = fs::read_to_string(path).map_err(|e| GimmError::io(path, e))?;
            let spec: MotionSpec = serde_json::from_str(&text).map_err(|e| GimmError::InvalidSpec(e.to_string()))?;
            let (h, w) = a.size;
            spec.validate(h, w)?;
            Ok((
                render_frame(&spec, h, w, 0.0)?,
                render_frame(&spec, h, w, 1.0)?,
                synth_flow(&spec, 0.0, 1.0, h, w)?,
                synth_flow(&spec, 1.0, 0.0, h, w)?,
            ))
        }
        _ => Err(GimmError::Config("give either --frame0/--frame1/--flow0/--flow1 or --synthetic-spec".into())),
    }
}

pub fn cmd_interp(a: &InterpArgs) -> Result<()> {
    check_times(&a.times)?;
    let model = load_vfi(&a.ckpt)?;
    let (i0, i1, f01, f10) = load_inputs(a)?;
    let out = resolve_output(a.out.as_deref(), &RunConfig::default(), "interp");
    mkdir(&out)?;
    echo(&out, "interp", a, None)?;
    for &t in &a.times {
        let (frame, _) = interpolate_one(&i0, &i1, &f01, &f10, t, &model)?;
        frame.save_png(&out.join(format!("frame_{}.png", time_tag(t))))?;
        if a.viz_flow {
            let (_, ft0, ft1) = gimm_forward(&f01, &f10, t, &model.gimm, &model.gimm_config)?;
            let mag = ft0.max_magnitude().max(ft1.max_magnitude()).max(1e-9);
            flow_to_rgb(&ft0, Some(mag)).save_png(&out.join(format!("flow_t0_{}.png", time_tag(t))))?;
            flow_to_rgb(&ft1, Some(mag)).save_png(&out.join(format!("flow_t1_{}.png", time_tag(t))))?;
        }
    }
    eprintln!("wrote {} frames to {}", a.times.len(), out.display());
    Ok(())
}

pub fn cmd_viz(a: &VizArgs) -> Result<()> {
    let flow = read_flo(&a.flow)?;
    if let Some(m) = a.max_mag {
        if !(m > 0.0) {
            return Err(GimmError::Config(format!("--max-mag must be positive, got {m}")));
        }
    }
    flow_to_rgb(&flow, a.max_mag).save_png(&a.out)
}
