//! Binary checkpoint container.
//!
//! Layout (little-endian): magic `GIMMCKPT`, `u32` version, `u32` section
//! count, then per section a 4-byte tag, `u32` config-JSON length, the JSON,
//! `u32` record count and the records; a record is `u16` name length, name,
//! `u8` trainable flag, `u8` rank, `u32` dims, `u8` dtype tag and the payload.
//! The file ends with the SHA-256 digest of everything before it.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{GimmError, Result};
use crate::model::{GimmConfig, GimmParams};
use crate::params::ParamSet;
use crate::synthesis::{SynthParams, VfiConfig, VfiModel};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"GIMMCKPT";
pub const VERSION: u32 = 1;
pub const TAG_GIMM: &[u8; 4] = b"GIMM";
pub const TAG_SYNTH: &[u8; 4] = b"SYNT";
const DTYPE_F64: u8 = 1;
const DIGEST_LEN: usize = 32;

struct Section {
    tag: [u8; 4],
    config: String,
    params: ParamSet,
}

fn encode(sections: &[Section]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(sections.len() as u32).to_le_bytes());
    for s in sections {
        out.extend_from_slice(&s.tag);
        out.extend_from_slice(&(s.config.len() as u32).to_le_bytes());
        out.extend_from_slice(s.config.as_bytes());
        out.extend_from_slice(&(s.params.len() as u32).to_le_bytes());
        for e in s.params.entries() {
            out.extend_from_slice(&(e.name.len() as u16).to_le_bytes());
            out.extend_from_slice(e.name.as_bytes());
            out.push(e.trainable as u8);
            out.push(e.value.shape().len() as u8);
            for &d in e.value.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            out.push(DTYPE_F64);
            for v in e.value.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(GimmError::ChecksumFailure("unexpected end of checkpoint body".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn string(&mut self, n: usize) -> Result<String> {
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| GimmError::Data("checkpoint string is not UTF-8".into()))
    }
}

fn decode(bytes: &[u8]) -> Result<Vec<Section>> {
    if bytes.len() < MAGIC.len() + 4 || &bytes[..MAGIC.len()] != MAGIC {
        return Err(GimmError::Data("not a checkpoint file (bad magic)".into()));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != VERSION {
        return Err(GimmError::VersionMismatch(format!("file format version {version}, expected {VERSION}")));
    }
    if bytes.len() < 12 + DIGEST_LEN {
        return Err(GimmError::ChecksumFailure(format!("file of {} bytes has no digest", bytes.len())));
    }
    let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
    if Sha256::digest(body).as_slice() != digest {
        return Err(GimmError::ChecksumFailure("content digest does not match".into()));
    }
    let mut r = Reader { buf: body, pos: 12 };
    let n = r.u32()?;
    let mut sections = Vec::with_capacity(n as usize);
    for _ in 0..n {
        let tag: [u8; 4] = r.take(4)?.try_into().unwrap();
        let clen = r.u32()? as usize;
        let config = r.string(clen)?;
        let count = r.u32()?;
        let mut params = ParamSet::new();
        for _ in 0..count {
            let nlen = r.u16()? as usize;
            let name = r.string(nlen)?;
            let trainable = r.u8()? != 0;
            let rank = r.u8()? as usize;
            let shape = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let dtype = r.u8()?;
            if dtype != DTYPE_F64 {
                return Err(GimmError::VersionMismatch(format!("record {name}: unknown dtype tag {dtype}")));
            }
            let len: usize = shape.iter().product();
            let data = r
                .take(len * 8)?
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            params.push(name, Tensor::new(&shape, data)?, trainable);
        }
        sections.push(Section { tag, config, params });
    }
    if r.pos != body.len() {
        return Err(GimmError::Data("trailing bytes after the last section".into()));
    }
    Ok(sections)
}

fn to_json<T: Serialize>(c: &T) -> String {
    serde_json::to_string(c).expect("configs serialize")
}

fn from_json<T: DeserializeOwned>(s: &str, what: &str) -> Result<T> {
    serde_json::from_str(s).map_err(|e| GimmError::VersionMismatch(format!("{what} config block: {e}")))
}

fn section<'a>(sections: &'a [Section], tag: &[u8; 4]) -> Result<&'a Section> {
    sections.iter().find(|s| &s.tag == tag).ok_or_else(|| {
        GimmError::VersionMismatch(format!("checkpoint has no {} section", String::from_utf8_lossy(tag)))
    })
}

fn read(path: &Path) -> Result<Vec<Section>> {
    decode(&std::fs::read(path).map_err(|e| GimmError::io(path, e))?)
}

fn write(path: &Path, sections: &[Section]) -> Result<()> {
    std::fs::write(path, encode(sections)).map_err(|e| GimmError::io(path, e))
}

fn gimm_section(sections: &[Section]) -> Result<(GimmParams, GimmConfig)> {
    let s = section(sections, TAG_GIMM)?;
    let config: GimmConfig = from_json(&s.config, "GIMM")?;
    let params = GimmParams { set: s.params.clone() };
    params.check(&config).map_err(|e| GimmError::VersionMismatch(e.to_string()))?;
    Ok((params, config))
}

pub fn gimm_to_bytes(params: &GimmParams, config: &GimmConfig) -> Vec<u8> {
    encode(&[Section {
        tag: *TAG_GIMM,
        config: to_json(config),
        params: params.set.clone(),
    }])
}

pub fn gimm_from_bytes(bytes: &[u8]) -> Result<(GimmParams, GimmConfig)> {
    gimm_section(&decode(bytes)?)
}

pub fn save_checkpoint(params: &GimmParams, config: &GimmConfig, path: &Path) -> Result<()> {
    params.check(config)?;
    std::fs::write(path, gimm_to_bytes(params, config)).map_err(|e| GimmError::io(path, e))
}

/// Reads the motion-model section of a GIMM or VFI checkpoint.
pub fn load_checkpoint(path: &Path) -> Result<(GimmParams, GimmConfig)> {
    gimm_section(&read(path)?)
}

/// Like [`load_checkpoint`], rejecting a file whose embedded config differs
/// from `expected`.
pub fn load_checkpoint_expect(path: &Path, expected: &GimmConfig) -> Result<GimmParams> {
    let (params, config) = load_checkpoint(path)?;
    if &config != expected {
        return Err(GimmError::VersionMismatch(format!(
            "checkpoint config {} differs from expected {}",
            to_json(&config),
            to_json(expected)
        )));
    }
    Ok(params)
}

pub fn save_vfi(model: &VfiModel, path: &Path) -> Result<()> {
    model.check()?;
    write(
        path,
        &[
            Section {
                tag: *TAG_GIMM,
                config: to_json(&model.gimm_config),
                params: model.gimm.set.clone(),
            },
            Section {
                tag: *TAG_SYNTH,
                config: to_json(&model.vfi_config),
                params: model.synth.set.clone(),
            },
        ],
    )
}

pub fn load_vfi(path: &Path) -> Result<VfiModel> {
    let sections = read(path)?;
    let (gimm, gimm_config) = gimm_section(&sections)?;
    let s = section(&sections, TAG_SYNTH)?;
    let vfi_config: VfiConfig = from_json(&s.config, "synthesis")?;
    let model = VfiModel {
        gimm_config,
        gimm,
        vfi_config,
        synth: SynthParams { set: s.params.clone() },
    };
    model.check().map_err(|e| GimmError::VersionMismatch(e.to_string()))?;
    Ok(model)
}
