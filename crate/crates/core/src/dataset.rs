//! Synthetic dataset generation and its on-disk layout.
//!
//! ```text
//! <root>/manifest.json
//! <root>/sample_0000/frame0.png, frame1.png, f01.flo, f10.flo,
//!                    ft0_t0.500000.flo, ft1_t0.500000.flo, ...
//! <root>/cache/sample_0000.raw
//! ```
//!
//! The `.raw` cache holds the same fields at full `f64` precision plus the
//! ground-truth intermediate frames: magic `GIMMRAW1`, `u32` record count,
//! then per record a `u16` name length, the UTF-8 name, a `u8` rank, `u32`
//! dims and little-endian `f64` values. Loading prefers the cache.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{GimmError, Result};
use crate::flow::{read_flo, write_flo, FlowField, FrameImage};
use crate::normalization::{compute_scale, make_target};
use crate::synth::{synth_sample, GtFlows, Motion, MotionSample, MotionSpec};
use crate::tensor::Tensor;

pub const RAW_MAGIC: &[u8; 8] = b"GIMMRAW1";
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MotionKind {
    Translation,
    Quadratic,
    Rotation,
    Zoom,
}

impl std::str::FromStr for MotionKind {
    type Err = GimmError;

    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.to_string()))
            .map_err(|_| GimmError::Config(format!("unknown motion kind {s:?}")))
    }
}

/// Draws one spec of `kind` whose displacement stays within `min(h, w)/4`.
pub fn random_spec(rng: &mut ChaCha8Rng, kind: MotionKind, h: usize, w: usize) -> MotionSpec {
    let limit = h.min(w) as f64 / 4.0;
    let dir = |rng: &mut ChaCha8Rng, lo: f64, hi: f64| {
        let a = rng.gen_range(0.0..std::f64::consts::TAU);
        let m = rng.gen_range(lo..hi);
        [m * a.cos(), m * a.sin()]
    };
    loop {
        let center = [
            rng.gen_range(0.25..0.75) * (w - 1) as f64,
            rng.gen_range(0.25..0.75) * (h - 1) as f64,
        ];
        let motion = match kind {
            MotionKind::Translation => Motion::Translation { velocity: dir(rng, 0.1 * limit, 0.6 * limit) },
            MotionKind::Quadratic => Motion::Quadratic {
                velocity: dir(rng, 0.0, 0.4 * limit),
                acceleration: dir(rng, 0.3 * limit, 0.9 * limit),
            },
            MotionKind::Rotation => {
                let om: f64 = rng.gen_range(0.05..0.3);
                Motion::Rotation { omega: if rng.gen_bool(0.5) { om } else { -om }, center }
            }
            MotionKind::Zoom => {
                let r: f64 = rng.gen_range(0.05..0.3);
                Motion::Zoom { rate: if rng.gen_bool(0.5) { r } else { -r }, center }
            }
        };
        let spec = MotionSpec::new(motion, rng.gen());
        if spec.validate_for_dataset(h, w).is_ok() {
            return spec;
        }
    }
}

/// `n` specs cycling through `kinds`, deterministic in `seed`.
pub fn random_specs(n: usize, kinds: &[MotionKind], h: usize, w: usize, seed: u64) -> Vec<MotionSpec> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|i| random_spec(&mut rng, kinds[i % kinds.len()], h, w)).collect()
}

/// Renders every spec, enforcing the displacement bound and that every
/// normalized target stays inside `[0, 1]`.
pub fn build_dataset(specs: &[MotionSpec], h: usize, w: usize, timesteps: &[f64]) -> Result<Vec<MotionSample>> {
    specs
        .iter()
        .enumerate()
        .map(|(i, spec)| {
            let tag = |e: GimmError| match e {
                GimmError::InvalidSpec(m) => GimmError::InvalidSpec(format!("entry {i}: {m}")),
                other => other,
            };
            spec.validate_for_dataset(h, w).map_err(tag)?;
            let mut s = synth_sample(spec, h, w, timesteps).map_err(tag)?;
            s.name = sample_name(i);
            for g in &s.gt {
                let v = make_target(&g.ft0, &g.ft1, s.scale)?;
                let (lo, hi) = v.data().data().iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| {
                    (a.min(x), b.max(x))
                });
                if lo < 0.0 || hi > 1.0 {
                    return Err(GimmError::InvalidSpec(format!(
                        "entry {i}: normalized target at t = {} spans [{lo:.4}, {hi:.4}], outside [0, 1]",
                        g.t
                    )));
                }
            }
            Ok(s)
        })
        .collect()
}

pub fn sample_name(i: usize) -> String {
    format!("sample_{i:04}")
}

fn t_tag(t: f64) -> String {
    format!("t{t:.6}")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub name: String,
    /// Generating spec, or `null` for externally estimated flows.
    pub spec: Option<MotionSpec>,
    pub height: usize,
    pub width: usize,
    pub timesteps: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub version: u32,
    pub seed: u64,
    pub samples: Vec<ManifestEntry>,
}

/// Parses a spec list: either a JSON array of specs or `{"specs": [...]}`.
/// Errors name the offending entry.
pub fn parse_spec_list(text: &str) -> Result<Vec<MotionSpec>> {
    let value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| GimmError::InvalidSpec(format!("spec file is not JSON: {e}")))?;
    let items = match value {
        serde_json::Value::Array(a) => a,
        serde_json::Value::Object(mut o) => match o.remove("specs") {
            Some(serde_json::Value::Array(a)) => a,
            _ => return Err(GimmError::InvalidSpec("expected a top-level \"specs\" array".into())),
        },
        _ => return Err(GimmError::InvalidSpec("expected a JSON array of motion specs".into())),
    };
    items
        .into_iter()
        .enumerate()
        .map(|(i, v)| serde_json::from_value(v).map_err(|e| GimmError::InvalidSpec(format!("entry {i}: {e}"))))
        .collect()
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| GimmError::io(path, e))
}

/// Writes samples, the manifest and the raw cache under `root`.
pub fn write_dataset(root: &Path, samples: &[MotionSample], seed: u64) -> Result<()> {
    let cache = root.join("cache");
    fs::create_dir_all(&cache).map_err(|e| GimmError::io(&cache, e))?;
    let mut entries = Vec::with_capacity(samples.len());
    for s in samples {
        let dir = root.join(&s.name);
        fs::create_dir_all(&dir).map_err(|e| GimmError::io(&dir, e))?;
        s.frame0.save_png(&dir.join("frame0.png"))?;
        s.frame1.save_png(&dir.join("frame1.png"))?;
        write_flo(&s.f01, &dir.join("f01.flo"))?;
        write_flo(&s.f10, &dir.join("f10.flo"))?;
        for g in &s.gt {
            write_flo(&g.ft0, &dir.join(format!("ft0_{}.flo", t_tag(g.t))))?;
            write_flo(&g.ft1, &dir.join(format!("ft1_{}.flo", t_tag(g.t))))?;
        }
        write_bytes(&cache.join(format!("{}.raw", s.name)), &encode_raw(&raw_records(s)))?;
        entries.push(ManifestEntry {
            name: s.name.clone(),
            spec: s.spec.clone(),
            height: s.height(),
            width: s.width(),
            timesteps: s.timesteps(),
        });
    }
    let manifest = Manifest {
        version: MANIFEST_VERSION,
        seed,
        samples: entries,
    };
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| GimmError::Data(e.to_string()))?;
    write_bytes(&root.join("manifest.json"), text.as_bytes())
}

pub fn read_manifest(root: &Path) -> Result<Manifest> {
    let path = root.join("manifest.json");
    let text = fs::read_to_string(&path).map_err(|e| GimmError::io(&path, e))?;
    let m: Manifest =
        serde_json::from_str(&text).map_err(|e| GimmError::Data(format!("{}: {e}", path.display())))?;
    if m.version != MANIFEST_VERSION {
        return Err(GimmError::VersionMismatch(format!(
            "manifest version {}, expected {MANIFEST_VERSION}",
            m.version
        )));
    }
    Ok(m)
}

/// Loads every sample listed in `root/manifest.json`.
pub fn load_dataset(root: &Path) -> Result<Vec<MotionSample>> {
    let m = read_manifest(root)?;
    m.samples.iter().map(|e| load_sample(root, e)).collect()
}

fn load_sample(root: &Path, e: &ManifestEntry) -> Result<MotionSample> {
    let raw = root.join("cache").join(format!("{}.raw", e.name));
    let s = if raw.exists() {
        let bytes = fs::read(&raw).map_err(|err| GimmError::io(&raw, err))?;
        from_raw_records(e, decode_raw(&bytes)?)?
    } else {
        let dir = root.join(&e.name);
        let f01 = read_flo(&dir.join("f01.flo"))?;
        let f10 = read_flo(&dir.join("f10.flo"))?;
        let gt = e
            .timesteps
            .iter()
            .map(|&t| {
                Ok(GtFlows {
                    t,
                    ft0: read_flo(&dir.join(format!("ft0_{}.flo", t_tag(t))))?,
                    ft1: read_flo(&dir.join(format!("ft1_{}.flo", t_tag(t))))?,
                    frame: None,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        MotionSample {
            name: e.name.clone(),
            spec: e.spec.clone(),
            frame0: FrameImage::load_png(&dir.join("frame0.png"))?,
            frame1: FrameImage::load_png(&dir.join("frame1.png"))?,
            scale: compute_scale(&f01, &f10),
            f01,
            f10,
            gt,
        }
    };
    if (s.height(), s.width()) != (e.height, e.width) || !s.f01.same_dims(&s.f10) {
        return Err(GimmError::Data(format!(
            "{}: stored fields are {}x{}, manifest says {}x{}",
            e.name,
            s.height(),
            s.width(),
            e.height,
            e.width
        )));
    }
    if s.gt.windows(2).any(|p| p[0].t >= p[1].t) {
        return Err(GimmError::Data(format!("{}: timesteps are not strictly increasing", e.name)));
    }
    Ok(s)
}

fn raw_records(s: &MotionSample) -> Vec<(String, Tensor)> {
    let mut r = vec![
        ("frame0".to_string(), s.frame0.as_tensor().clone()),
        ("frame1".to_string(), s.frame1.as_tensor().clone()),
        ("f01".to_string(), s.f01.as_tensor().clone()),
        ("f10".to_string(), s.f10.as_tensor().clone()),
    ];
    for g in &s.gt {
        let tag = t_tag(g.t);
        r.push((format!("ft0_{tag}"), g.ft0.as_tensor().clone()));
        r.push((format!("ft1_{tag}"), g.ft1.as_tensor().clone()));
        if let Some(f) = &g.frame {
            r.push((format!("frame_{tag}"), f.as_tensor().clone()));
        }
    }
    r
}

fn from_raw_records(e: &ManifestEntry, recs: Vec<(String, Tensor)>) -> Result<MotionSample> {
    let take = |name: &str| -> Option<Tensor> {
        recs.iter().find(|(n, _)| n == name).map(|(_, t)| t.clone())
    };
    let missing = |name: &str| GimmError::Data(format!("{}: raw cache lacks {name}", e.name));
    let frame0 = FrameImage::from_tensor(take("frame0").ok_or_else(|| missing("frame0"))?)?;
    let frame1 = FrameImage::from_tensor(take("frame1").ok_or_else(|| missing("frame1"))?)?;
    let f01 = FlowField::from_tensor(take("f01").ok_or_else(|| missing("f01"))?)?;
    let f10 = FlowField::from_tensor(take("f10").ok_or_else(|| missing("f10"))?)?;
    let mut gt = Vec::with_capacity(e.timesteps.len());
    for &t in &e.timesteps {
        let tag = t_tag(t);
        gt.push(GtFlows {
            t,
            ft0: FlowField::from_tensor(take(&format!("ft0_{tag}")).ok_or_else(|| missing(&tag))?)?,
            ft1: FlowField::from_tensor(take(&format!("ft1_{tag}")).ok_or_else(|| missing(&tag))?)?,
            frame: take(&format!("frame_{tag}")).map(FrameImage::from_tensor).transpose()?,
        });
    }
    Ok(MotionSample {
        name: e.name.clone(),
        spec: e.spec.clone(),
        frame0,
        frame1,
        scale: compute_scale(&f01, &f10),
        f01,
        f10,
        gt,
    })
}

pub fn encode_raw(records: &[(String, Tensor)]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(RAW_MAGIC);
    out.extend_from_slice(&(records.len() as u32).to_le_bytes());
    for (name, t) in records {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(t.shape().len() as u8);
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(GimmError::Truncated {
                expected: self.pos + n,
                found: self.bytes.len(),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn decode_raw(bytes: &[u8]) -> Result<Vec<(String, Tensor)>> {
    let mut r = Reader { bytes, pos: 0 };
    let magic = r.take(8)?;
    if magic != RAW_MAGIC {
        return Err(GimmError::BadMagic {
            found: magic[..4].try_into().unwrap(),
        });
    }
    let n = r.u32()? as usize;
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let len = u16::from_le_bytes(r.take(2)?.try_into().unwrap()) as usize;
        let name = String::from_utf8(r.take(len)?.to_vec()).map_err(|e| GimmError::Data(e.to_string()))?;
        let rank = r.take(1)?[0] as usize;
        let shape = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let count: usize = shape.iter().product();
        let data = r
            .take(count * 8)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        out.push((name, Tensor::new(&shape, data)?));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn specs_respect_bound_and_repeat() {
        let kinds = [MotionKind::Translation, MotionKind::Quadratic, MotionKind::Rotation, MotionKind::Zoom];
        let a = random_specs(24, &kinds, 32, 32, 3);
        assert_eq!(a, random_specs(24, &kinds, 32, 32, 3));
        for s in &a {
            s.validate_for_dataset(32, 32).unwrap();
        }
        assert_eq!(a[1].kind_name(), "quadratic");
    }

    #[test]
    fn build_checks_and_names() {
        let specs = random_specs(4, &[MotionKind::Rotation, MotionKind::Quadratic], 24, 24, 1);
        let d = build_dataset(&specs, 24, 24, &[0.5, 0.25]).unwrap();
        assert_eq!(d[2].name, "sample_0002");
        assert_eq!(d[0].timesteps(), vec![0.25, 0.5]);
        let bad = vec![specs[0].clone(), MotionSpec::new(Motion::Translation { velocity: [20.0, 0.0] }, 0)];
        let err = build_dataset(&bad, 24, 24, &[0.5]).unwrap_err();
        assert!(err.to_string().contains("entry 1"), "{err}");
    }

    #[test]
    fn spec_list_errors_name_the_entry() {
        let ok = r#"[{"kind":"translation","velocity":[1,0],"texture_seed":1}]"#;
        assert_eq!(parse_spec_list(ok).unwrap().len(), 1);
        let wrapped = r#"{"specs":[{"kind":"zoom","rate":0.1,"center":[2,2],"texture_seed":1}]}"#;
        assert_eq!(parse_spec_list(wrapped).unwrap().len(), 1);
        let bad = r#"[{"kind":"translation","velocity":[1,0],"texture_seed":1},{"kind":"rotation","texture_seed":2}]"#;
        let msg = parse_spec_list(bad).unwrap_err().to_string();
        assert!(msg.contains("entry 1") && msg.contains("omega"), "{msg}");
    }

    #[test]
    fn disk_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let specs = random_specs(2, &[MotionKind::Translation, MotionKind::Zoom], 16, 16, 9);
        let d = build_dataset(&specs, 16, 16, &[0.5]).unwrap();
        write_dataset(dir.path(), &d, 9).unwrap();
        let back = load_dataset(dir.path()).unwrap();
        for (a, b) in back.iter().zip(&d) {
            assert_eq!(a.spec, b.spec);
            assert_eq!(a.f01, b.f01);
            assert_eq!(a.frame0, b.frame0);
            assert_eq!(a.gt, b.gt);
        }
        assert_eq!(back, d);
        // without the cache the 8-bit / f32 files are used
        fs::remove_dir_all(dir.path().join("cache")).unwrap();
        let lossy = load_dataset(dir.path()).unwrap();
        assert!(lossy[1].f01.sub(&d[1].f01).max_abs() < 1e-5);
        assert!(lossy[0].frame0.as_tensor().sub(d[0].frame0.as_tensor()).max_abs() <= 0.5 / 255.0 + 1e-12);
    }

    #[test]
    fn raw_rejects_bad_magic_and_truncation() {
        let bytes = encode_raw(&[("x".into(), Tensor::full(&[2, 2], 1.5))]);
        assert!(matches!(decode_raw(&bytes[..bytes.len() - 3]), Err(GimmError::Truncated { .. })));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode_raw(&bad), Err(GimmError::BadMagic { .. })));
    }
}
