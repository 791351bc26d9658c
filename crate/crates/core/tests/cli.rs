use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use gimm::checkpoint::load_checkpoint;
use gimm::model::Ablation;

fn gimm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gimm"))
        .args(args)
        .env_remove("GIMM_OUT")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let o = gimm(args);
    assert!(o.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&o.stderr));
    o
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const SPECS: &str = r#"[
  {"kind": "translation", "velocity": [2.0, 1.0], "texture_seed": 1},
  {"kind": "quadratic", "velocity": [1.0, 0.0], "acceleration": [2.0, -1.0], "texture_seed": 2},
  {"kind": "rotation", "omega": 0.1, "center": [10.0, 12.0], "texture_seed": 3},
  {"kind": "zoom", "rate": 0.1, "center": [12.0, 12.0], "texture_seed": 4},
  {"kind": "translation", "velocity": [-1.5, 0.5], "texture_seed": 5},
  {"kind": "translation", "velocity": [0.0, -2.0], "texture_seed": 6},
  {"kind": "quadratic", "velocity": [0.0, 1.0], "acceleration": [-1.0, 1.0], "texture_seed": 7},
  {"kind": "rotation", "omega": -0.12, "center": [11.0, 11.0], "texture_seed": 8},
  {"kind": "zoom", "rate": -0.1, "center": [11.0, 12.0], "texture_seed": 9},
  {"kind": "translation", "velocity": [1.0, 1.0], "texture_seed": 10}
]"#;

const TINY: &str = "[gimm]\nd_enc = 4\nd_lat = 8\nsiren_width = 16\n[train]\ncrop = 16\n[vfi_train]\ncrop = 16\n";

struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
}

impl Fixture {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        fs::write(root.join("specs.json"), SPECS).unwrap();
        fs::write(root.join("tiny.toml"), TINY).unwrap();
        Self { _dir: dir, root }
    }

    fn p(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    fn gen(&self, out: &str) -> PathBuf {
        let d = self.p(out);
        ok(&["gen", "--spec-file", s(&self.p("specs.json")), "--out", s(&d), "--size", "24", "--timesteps", "0.25,0.5,0.75", "--seed", "3"]);
        d
    }

    fn train_gimm(&self, data: &Path, out: &str, extra: &[&str]) -> PathBuf {
        let d = self.p(out);
        let tiny = self.p("tiny.toml");
        let mut args = vec!["train-gimm", "--data", s(data), "--config", s(&tiny), "--out", s(&d)];
        args.extend_from_slice(extra);
        ok(&args);
        d
    }
}

fn files(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    for e in fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(files(&p));
        } else {
            out.push(p);
        }
    }
    out.sort();
    out
}

#[test]
fn gen_writes_expected_files_deterministically() {
    let fx = Fixture::new();
    let a = fx.gen("a");
    let b = fx.gen("b");
    for i in 0..10 {
        let dir = a.join(format!("sample_{i:04}"));
        let names: Vec<String> = fs::read_dir(&dir).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
        assert_eq!(names.iter().filter(|n| n.ends_with(".png")).count(), 2);
        assert_eq!(names.iter().filter(|n| n.ends_with(".flo")).count(), 2 + 2 * 3);
    }
    let fa = files(&a);
    let fb = files(&b);
    assert_eq!(fa.len(), fb.len());
    for (x, y) in fa.iter().zip(&fb) {
        assert_eq!(x.strip_prefix(&a).unwrap(), y.strip_prefix(&b).unwrap());
        assert_eq!(fs::read(x).unwrap(), fs::read(y).unwrap(), "{}", x.display());
    }
    assert!(a.join("effective_config.toml").exists());
}

#[test]
fn malformed_spec_names_the_field() {
    let fx = Fixture::new();
    fs::write(fx.p("bad.json"), r#"[{"kind": "translation", "velocity": [1.0, 0.0], "texture_seed": 1}, {"kind": "rotation", "omega": 0.1, "texture_seed": 2}]"#).unwrap();
    let o = gimm(&["gen", "--spec-file", s(&fx.p("bad.json")), "--out", s(&fx.p("d"))]);
    assert_eq!(o.status.code(), Some(3));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("entry 1") && err.contains("center"), "{err}");
}

#[test]
fn bad_arguments_exit_with_two() {
    assert_eq!(gimm(&["gen", "--size", "many"]).status.code(), Some(2));
    assert_eq!(gimm(&["frobnicate"]).status.code(), Some(2));
    let fx = Fixture::new();
    assert_eq!(gimm(&["gen", "--random", "2", "--timesteps", "1.5", "--out", s(&fx.p("d"))]).status.code(), Some(2));
}

#[test]
fn zero_step_training_and_ablation_plumbing() {
    let fx = Fixture::new();
    let data = fx.gen("data");
    let run = fx.train_gimm(&data, "run", &["--steps", "0", "--ablation", "non_fwarp"]);
    assert_eq!(fs::read_to_string(run.join("loss.csv")).unwrap(), "step,loss\n");
    let (_, cfg) = load_checkpoint(&run.join("gimm.ckpt")).unwrap();
    assert_eq!(cfg.ablation, Ablation::NonFwarp);
    let echoed = fs::read_to_string(run.join("effective_config.toml")).unwrap();
    assert!(echoed.contains("non_fwarp") && echoed.contains("d_enc = 4"), "{echoed}");
}

#[test]
fn training_and_evaluation_rerun_identically() {
    let fx = Fixture::new();
    let data = fx.gen("data");
    let a = fx.train_gimm(&data, "a", &["--steps", "3", "--seed", "5"]);
    let b = fx.train_gimm(&data, "b", &["--steps", "3", "--seed", "5"]);
    assert_eq!(fs::read(a.join("loss.csv")).unwrap(), fs::read(b.join("loss.csv")).unwrap());
    assert_eq!(fs::read(a.join("gimm.ckpt")).unwrap(), fs::read(b.join("gimm.ckpt")).unwrap());
    let mut reports = Vec::new();
    for out in ["ea", "eb"] {
        let ckpt = format!("gimm={}", s(&a.join("gimm.ckpt")));
        ok(&["eval-motion", "--data", s(&data), "--ckpt", &ckpt, "--timesteps", "0.25,0.5", "--out", s(&fx.p(out))]);
        reports.push(fs::read(fx.p(out).join("motion.csv")).unwrap());
        reports.push(fs::read(fx.p(out).join("motion_samples.csv")).unwrap());
    }
    assert_eq!(reports[0], reports[2]);
    assert_eq!(reports[1], reports[3]);
    let csv = String::from_utf8(reports[0].clone()).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "method,t,EPE,PSNR_f");
    assert_eq!(csv.lines().count(), 1 + 3 * 3);
}

#[test]
fn baselines_only_evaluation_needs_no_checkpoint() {
    let fx = Fixture::new();
    let data = fx.gen("data");
    let out = fx.p("eval");
    ok(&["eval-motion", "--data", s(&data), "--subset", "linear", "--out", s(&out)]);
    let csv = fs::read_to_string(out.join("motion.csv")).unwrap();
    let lin = csv.lines().find(|l| l.starts_with("linear,all,")).unwrap();
    assert_eq!(lin.split(',').nth(2).unwrap(), "0");
    assert!(fs::read_to_string(out.join("motion.txt")).unwrap().contains("exact"));
}

#[test]
fn interp_outputs_and_viz() {
    let fx = Fixture::new();
    let data = fx.gen("data");
    let g = fx.train_gimm(&data, "g", &["--steps", "0"]);
    let v = fx.p("v");
    ok(&["train-vfi", "--data", s(&data), "--gimm-ckpt", s(&g.join("gimm.ckpt")), "--config", s(&fx.p("tiny.toml")), "--steps", "2", "--out", s(&v)]);
    assert_eq!(fs::read_to_string(v.join("loss.csv")).unwrap().lines().count(), 3);
    let ckpt = v.join("vfi.ckpt");
    fs::write(fx.p("spec.json"), r#"{"kind": "translation", "velocity": [2.0, 1.0], "texture_seed": 1}"#).unwrap();
    let one = fx.p("one");
    ok(&["interp", "--synthetic-spec", s(&fx.p("spec.json")), "--size", "20", "--ckpt", s(&ckpt), "--times", "0.5", "--out", s(&one)]);
    assert!(one.join("frame_t0.500000.png").exists());
    let eight = fx.p("eight");
    let times = "0.125,0.25,0.375,0.5,0.625,0.75,0.875";
    ok(&["interp", "--synthetic-spec", s(&fx.p("spec.json")), "--size", "20", "--ckpt", s(&ckpt), "--times", times, "--out", s(&eight), "--viz-flow"]);
    let pngs = files(&eight).into_iter().filter(|p| p.extension().is_some_and(|e| e == "png")).count();
    assert_eq!(pngs, 7 * 3);
    let s0 = data.join("sample_0000");
    let disk = fx.p("disk");
    ok(&[
        "interp", "--frame0", s(&s0.join("frame0.png")), "--frame1", s(&s0.join("frame1.png")), "--flow0", s(&s0.join("f01.flo")),
        "--flow1", s(&s0.join("f10.flo")), "--ckpt", s(&ckpt), "--times", "0.5", "--out", s(&disk),
    ]);
    assert!(disk.join("frame_t0.500000.png").exists());
    let ei = fx.p("ei");
    ok(&["eval-interp", "--data", s(&data), "--ckpt", &format!("vfi={}", s(&ckpt)), "--multiples", "2,4", "--out", s(&ei)]);
    let csv = fs::read_to_string(ei.join("interp.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 2 * 2);
    let missing = gimm(&["interp", "--synthetic-spec", s(&fx.p("spec.json")), "--ckpt", s(&fx.p("nope.ckpt")), "--out", s(&fx.p("x"))]);
    assert_eq!(missing.status.code(), Some(3));
    ok(&["viz", "--flow", s(&s0.join("f01.flo")), "--out", s(&fx.p("f.png"))]);
    assert!(fx.p("f.png").exists());
}

#[test]
fn output_root_from_environment() {
    let fx = Fixture::new();
    let o = Command::new(env!("CARGO_BIN_EXE_gimm"))
        .args(["gen", "--random", "2", "--size", "16"])
        .env("GIMM_OUT", &fx.root)
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(fx.root.join("gen").join("manifest.json").exists());
}
