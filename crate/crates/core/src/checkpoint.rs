//! Binary parameter checkpoints.
//!
//! Layout, all integers little-endian:
//! `DBPCKPT1` | u32 version | str phase | u32 block count |
//! blocks (str name, u32 rank, u64 dims.., f64 payload..) | str config | str rng summary,
//! where `str` is a u32 byte length followed by UTF-8.

use std::collections::HashSet;
use std::path::Path;

use dbp_autodiff::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::ExperimentConfig;
use crate::encoder::{shape_mismatches, EncoderParams};
use crate::error::{Error, Result};
use crate::params::ParamTree;
use crate::rng::Phase;

pub const MAGIC: &[u8; 8] = b"DBPCKPT1";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub phase: Phase,
    /// Unique dotted names in parameter visit order.
    pub blocks: Vec<(String, Tensor)>,
    pub config_text: String,
    pub rng_summary: String,
}

impl Checkpoint {
    pub fn new(phase: Phase, blocks: Vec<(String, Tensor)>, config: &ExperimentConfig, rng_summary: String) -> Result<Self> {
        let mut seen = HashSet::new();
        for (name, _) in &blocks {
            if !seen.insert(name.as_str()) {
                return Err(Error::Contract(format!("duplicate checkpoint block `{name}`")));
            }
        }
        Ok(Checkpoint {
            phase,
            blocks,
            config_text: config.to_text(),
            rng_summary,
        })
    }

    pub fn config(&self) -> Result<ExperimentConfig> {
        ExperimentConfig::parse(&self.config_text)
            .map_err(|e| Error::Format(format!("embedded config does not parse: {e}")))
    }

    pub fn block(&self, name: &str) -> Option<&Tensor> {
        self.blocks.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        put_str(&mut out, self.phase.tag());
        out.extend_from_slice(&(self.blocks.len() as u32).to_le_bytes());
        for (name, t) in &self.blocks {
            put_str(&mut out, name);
            out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        put_str(&mut out, &self.config_text);
        put_str(&mut out, &self.rng_summary);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8, "header")? != MAGIC {
            return Err(Error::Format("bad magic bytes".into()));
        }
        let version = r.u32("header")?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        let tag = r.string("phase")?;
        let phase = Phase::from_tag(&tag).ok_or_else(|| Error::Format(format!("unknown phase `{tag}`")))?;
        let count = r.u32("header")? as usize;
        let mut blocks = Vec::new();
        let mut seen = HashSet::new();
        for i in 0..count {
            let name = r.string(&format!("block #{i} name"))?;
            let rank = r.u32(&name)? as usize;
            let mut shape = Vec::with_capacity(rank.min(8));
            for _ in 0..rank {
                shape.push(r.u64(&name)? as usize);
            }
            let numel = shape
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .filter(|n| n.checked_mul(8).is_some())
                .ok_or_else(|| Error::Format(format!("block `{name}`: dims {shape:?} overflow")))?;
            let payload = r.take(numel * 8, &name)?;
            let data = payload
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            if !seen.insert(name.clone()) {
                return Err(Error::Format(format!("duplicate block `{name}`")));
            }
            let t = Tensor::new(shape, data).map_err(|e| Error::Format(format!("block `{name}`: {e}")))?;
            blocks.push((name, t));
        }
        let config_text = r.string("config")?;
        let rng_summary = r.string("rng summary")?;
        if r.pos != bytes.len() {
            return Err(Error::Format(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Checkpoint {
            phase,
            blocks,
            config_text,
            rng_summary,
        })
    }

    /// Rebuilds the parameter tree `template` under `prefix` from named blocks.
    pub fn extract<P: ParamTree<Leaf = Tensor>>(&self, template: &P, prefix: &str) -> Result<P::With<Tensor>> {
        let mut problems = Vec::new();
        let out = template.try_map(prefix, &mut |name, t: &Tensor| -> std::result::Result<Tensor, ()> {
            match self.block(name) {
                Some(b) if b.shape() == t.shape() => Ok(b.clone()),
                Some(b) => {
                    problems.push(format!("{name} shape ({:?} vs {:?})", b.shape(), t.shape()));
                    Ok(t.clone())
                }
                None => {
                    problems.push(format!("{name} missing"));
                    Ok(t.clone())
                }
            }
        });
        match out {
            Ok(p) if problems.is_empty() => Ok(p),
            _ => Err(Error::Compat(problems)),
        }
    }

    /// Encoder from a pre-training checkpoint, checked against the requested config.
    pub fn pretrained_encoder(&self, request: &ExperimentConfig) -> Result<EncoderParams> {
        let saved = self.config()?;
        let mut diffs = Vec::new();
        if self.phase != Phase::Pretrain {
            diffs.push(format!("phase ({} vs pretrain)", self.phase.tag()));
        }
        diffs.extend(saved.encoder_differences(request));
        if !diffs.is_empty() {
            return Err(Error::Compat(diffs));
        }
        let template = EncoderParams::init(&mut ChaCha8Rng::seed_from_u64(0), &request.encoder, &request.schema());
        let enc = self.extract(&template, "encoder")?;
        let bad = shape_mismatches(&enc, &request.encoder, &request.schema());
        if !bad.is_empty() {
            return Err(Error::Compat(bad));
        }
        Ok(enc)
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::Format(format!(
                "truncated in `{what}`: need {n} bytes at offset {}, file has {}",
                self.pos,
                self.bytes.len()
            ))),
        }
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn string(&mut self, what: &str) -> Result<String> {
        let n = self.u32(what)? as usize;
        let raw = self.take(n, what)?;
        String::from_utf8(raw.to_vec()).map_err(|_| Error::Format(format!("`{what}` is not UTF-8")))
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    std::fs::write(path, ckpt.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes)
}
