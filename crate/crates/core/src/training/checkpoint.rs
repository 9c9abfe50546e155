//! Versioned binary checkpoint.
//!
//! Layout, all integers little-endian:
//!
//! | field | encoding |
//! |---|---|
//! | magic | `HTSKCKPT` |
//! | version | u16 |
//! | config | u32 byte length, then `key = value` text |
//! | epoch | u64 |
//! | rng | 32-byte seed, u64 stream, u128 word position |
//! | tensor count | u32 |
//! | each tensor | u32 name length, name, u32 rank, u64 dims, f64 values |
//!
//! The config text holds the model and training keys plus the four shape
//! keys `num_questions`, `num_skills`, `l_ses` and `l_int`.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{Config, ModelConfig};
use crate::error::{Error, Result};
use crate::kernel::tensor::{Parameters, Tensor};
use crate::kv;
use crate::model::{HitsktParams, Model, ModelShape};
use crate::segmentation::SequenceLengths;
use crate::store::{write_atomic, Reader};

pub const MAGIC: &[u8; 8] = b"HTSKCKPT";
pub const VERSION: u16 = 1;

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub config: Config,
    pub shape: ModelShape,
    pub epoch: u64,
    pub rng: ChaCha8Rng,
    pub params: HitsktParams,
}

impl PartialEq for Checkpoint {
    fn eq(&self, o: &Self) -> bool {
        self.config == o.config && self.shape == o.shape && self.epoch == o.epoch && self.rng == o.rng && self.params == o.params
    }
}

fn config_text(config: &Config, shape: &ModelShape) -> String {
    format!(
        "{}num_questions = {}\nnum_skills = {}\nl_ses = {}\nl_int = {}\n",
        config.to_text(),
        shape.num_questions,
        shape.num_skills,
        shape.lengths.l_ses,
        shape.lengths.l_int
    )
}

fn parse_config(text: &str) -> Result<(Config, ModelShape)> {
    let mut rest = String::new();
    let (mut q, mut k, mut ls, mut li) = (None, None, None, None);
    for e in kv::parse(text)? {
        match e.key.as_str() {
            "num_questions" => q = Some(kv::value(&e)?),
            "num_skills" => k = Some(kv::value(&e)?),
            "l_ses" => ls = Some(kv::value(&e)?),
            "l_int" => li = Some(kv::value(&e)?),
            _ => rest.push_str(&format!("{} = {}\n", e.key, e.value)),
        }
    }
    let missing = |n: &str| Error::Format(format!("checkpoint config lacks `{n}`"));
    let shape = ModelShape {
        num_questions: q.ok_or_else(|| missing("num_questions"))?,
        num_skills: k.ok_or_else(|| missing("num_skills"))?,
        lengths: SequenceLengths::new(ls.ok_or_else(|| missing("l_ses"))?, li.ok_or_else(|| missing("l_int"))?)?,
    };
    Ok((Config::parse(&rest)?, shape))
}

impl Checkpoint {
    pub fn new(config: Config, shape: ModelShape, epoch: u64, rng: ChaCha8Rng, params: HitsktParams) -> Self {
        Checkpoint {
            config,
            shape,
            epoch,
            rng,
            params,
        }
    }

    pub fn model(&self) -> Result<Model> {
        Model::from_params(self.config.model.clone(), self.shape, self.params.clone())
    }

    /// Errors unless the stored model config and shape equal the given ones.
    /// Training-only settings may differ.
    pub fn check(&self, model: &ModelConfig, shape: &ModelShape) -> Result<()> {
        if &self.config.model != model {
            return Err(Error::ConfigMismatch(format!(
                "model settings differ: stored {:?}, requested {:?}",
                self.config.model, model
            )));
        }
        if &self.shape != shape {
            return Err(Error::ConfigMismatch(format!("stored shape {:?}, data has {:?}", self.shape, shape)));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut b = Vec::new();
        b.extend_from_slice(MAGIC);
        b.extend_from_slice(&VERSION.to_le_bytes());
        let text = config_text(&self.config, &self.shape);
        b.extend_from_slice(&(text.len() as u32).to_le_bytes());
        b.extend_from_slice(text.as_bytes());
        b.extend_from_slice(&self.epoch.to_le_bytes());
        b.extend_from_slice(&self.rng.get_seed());
        b.extend_from_slice(&self.rng.get_stream().to_le_bytes());
        b.extend_from_slice(&self.rng.get_word_pos().to_le_bytes());
        let named = self.params.named_tensors();
        b.extend_from_slice(&(named.len() as u32).to_le_bytes());
        for (name, t) in named {
            b.extend_from_slice(&(name.len() as u32).to_le_bytes());
            b.extend_from_slice(name.as_bytes());
            b.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &d in t.shape() {
                b.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in t.data() {
                b.extend_from_slice(&v.to_le_bytes());
            }
        }
        b
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes, "checkpoint");
        if r.take(8)? != MAGIC {
            return Err(Error::Format("not a checkpoint (bad magic)".into()));
        }
        let version = u16::from_le_bytes(r.array()?);
        if version != VERSION {
            return Err(Error::Format(format!("checkpoint version {version}, expected {VERSION}")));
        }
        let len = u32::from_le_bytes(r.array()?) as usize;
        let text = std::str::from_utf8(r.take(len)?).map_err(|_| Error::Format("config text is not UTF-8".into()))?;
        let (config, shape) = parse_config(text)?;
        let epoch = u64::from_le_bytes(r.array()?);
        let mut rng = ChaCha8Rng::from_seed(r.array()?);
        rng.set_stream(u64::from_le_bytes(r.array()?));
        rng.set_word_pos(u128::from_le_bytes(r.array()?));
        let count = u32::from_le_bytes(r.array()?) as usize;
        let mut stored = Vec::with_capacity(count);
        for _ in 0..count {
            let n = u32::from_le_bytes(r.array()?) as usize;
            let name = String::from_utf8(r.take(n)?.to_vec()).map_err(|_| Error::Format("tensor name is not UTF-8".into()))?;
            let rank = u32::from_le_bytes(r.array()?) as usize;
            let mut dims = Vec::with_capacity(rank);
            for _ in 0..rank {
                dims.push(u64::from_le_bytes(r.array()?) as usize);
            }
            let numel: usize = dims.iter().product();
            let raw = r.take(numel.checked_mul(8).ok_or_else(|| Error::Format("tensor too large".into()))?)?;
            let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
            stored.push((name, Tensor::from_vec(&dims, data)?));
        }
        r.finish()?;
        // the skeleton's values are overwritten; only names and shapes matter
        let mut params = HitsktParams::new(&config.model, &shape, &mut ChaCha8Rng::seed_from_u64(0))?;
        let expected = params.named_tensors().len();
        if expected != stored.len() {
            return Err(Error::ConfigMismatch(format!("{} tensors stored, config implies {expected}", stored.len())));
        }
        let mut err = None;
        let mut i = 0;
        params.visit_mut("", &mut |name, t| {
            let (sn, st) = &stored[i];
            i += 1;
            if err.is_some() {
                return;
            }
            if sn != &name || st.shape() != t.shape() {
                err = Some(Error::ConfigMismatch(format!(
                    "stored tensor {sn} {:?} where config implies {name} {:?}",
                    st.shape(),
                    t.shape()
                )));
            } else {
                *t = st.clone();
            }
        });
        if let Some(e) = err {
            return Err(e);
        }
        Ok(Checkpoint {
            config,
            shape,
            epoch,
            rng,
            params,
        })
    }

    /// Writes to a sibling temporary file, then renames over `path`.
    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Checkpoint::from_bytes(&bytes)
    }
}
