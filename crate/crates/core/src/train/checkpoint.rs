//! Binary checkpoints: an 8-byte magic, a little-endian `u64` header length,
//! a JSON header, then every tensor as raw little-endian `f64` in header
//! order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::TrainConfig;
use crate::autodiff::{Adam, Tensor};
use crate::error::{Error, Result};
use crate::models::Model;
use crate::rng;

pub const CHECKPOINT_SCHEMA_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"IRTSCKPT";

/// Adam moments in the order of the optimizer's parameter group.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub steps: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl OptimizerState {
    pub fn capture(opt: &Adam) -> Self {
        let (m, v) = opt.moments();
        OptimizerState {
            steps: opt.steps,
            m: m.to_vec(),
            v: v.to_vec(),
        }
    }

    pub fn restore(&self, opt: &mut Adam) -> Result<()> {
        let (m, v) = opt.moments_mut();
        if m.len() != self.m.len() || v.len() != self.v.len() {
            return Err(Error::Checkpoint(format!(
                "optimizer holds {} tensors, checkpoint {}",
                m.len(),
                self.m.len()
            )));
        }
        for (dst, src) in m.iter_mut().zip(&self.m).chain(v.iter_mut().zip(&self.v)) {
            if dst.shape() != src.shape() {
                return Err(Error::Checkpoint("optimizer moment shape mismatch".into()));
            }
            *dst = src.clone();
        }
        opt.steps = self.steps;
        Ok(())
    }
}

/// Everything needed to continue training exactly where it stopped.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    /// Completed epochs.
    pub epoch: usize,
    /// Completed minibatch steps.
    pub step: usize,
    pub params: Vec<(String, Tensor)>,
    pub generator_opt: OptimizerState,
    pub discriminator_opt: Option<OptimizerState>,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    schema_version: u32,
    config: TrainConfig,
    config_digest: String,
    epoch: usize,
    step: usize,
    generator_steps: u64,
    discriminator_steps: Option<u64>,
    tensors: Vec<TensorEntry>,
    payload_digest: String,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// SHA-256 of the canonical JSON form of a training configuration.
pub fn config_digest(cfg: &TrainConfig) -> Result<String> {
    Ok(hex(&Sha256::digest(serde_json::to_vec(cfg)?)))
}

impl Checkpoint {
    /// Rebuilds the model with the stored parameter values.
    pub fn model(&self) -> Result<Model> {
        let mut model = Model::new(self.config.model.clone(), &mut rng::stream(self.config.seed, rng::INIT, 0))?;
        model.load_params(&self.params)?;
        Ok(model)
    }

    fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out: Vec<(String, &Tensor)> = self.params.iter().map(|(n, t)| (n.clone(), t)).collect();
        let opts = [("@opt.gen", Some(&self.generator_opt)), ("@opt.disc", self.discriminator_opt.as_ref())];
        for (prefix, st) in opts {
            let Some(st) = st else { continue };
            for (i, t) in st.m.iter().enumerate() {
                out.push((format!("{prefix}.m.{i}"), t));
            }
            for (i, t) in st.v.iter().enumerate() {
                out.push((format!("{prefix}.v.{i}"), t));
            }
        }
        out
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let tensors = self.named_tensors();
        let mut payload = Vec::with_capacity(tensors.iter().map(|t| t.1.numel() * 8).sum());
        for (_, t) in &tensors {
            for v in t.data() {
                payload.extend_from_slice(&v.to_le_bytes());
            }
        }
        let header = Header {
            schema_version: CHECKPOINT_SCHEMA_VERSION,
            config: self.config.clone(),
            config_digest: config_digest(&self.config)?,
            epoch: self.epoch,
            step: self.step,
            generator_steps: self.generator_opt.steps,
            discriminator_steps: self.discriminator_opt.as_ref().map(|d| d.steps),
            tensors: tensors
                .iter()
                .map(|(n, t)| TensorEntry {
                    name: n.clone(),
                    shape: t.shape().to_vec(),
                })
                .collect(),
            payload_digest: hex(&Sha256::digest(&payload)),
        };
        let json = serde_json::to_vec(&header)?;
        w.write_all(MAGIC)?;
        w.write_all(&(json.len() as u64).to_le_bytes())?;
        w.write_all(&json)?;
        w.write_all(&payload)?;
        w.flush()?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Checkpoint> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint file".into()));
        }
        let mut len = [0u8; 8];
        r.read_exact(&mut len)?;
        let len = u64::from_le_bytes(len) as usize;
        let mut json = vec![0u8; len];
        r.read_exact(&mut json)?;
        let header: Header = serde_json::from_slice(&json)?;
        if header.schema_version != CHECKPOINT_SCHEMA_VERSION {
            return Err(Error::SchemaVersion {
                expected: CHECKPOINT_SCHEMA_VERSION,
                found: header.schema_version,
            });
        }
        if config_digest(&header.config)? != header.config_digest {
            return Err(Error::Checkpoint("configuration digest mismatch".into()));
        }
        let mut payload = Vec::new();
        r.read_to_end(&mut payload)?;
        if hex(&Sha256::digest(&payload)) != header.payload_digest {
            return Err(Error::Checkpoint("tensor data is corrupt or truncated".into()));
        }
        let mut off = 0;
        let mut params = Vec::new();
        let mut opt: [(Vec<Tensor>, Vec<Tensor>); 2] = Default::default();
        for entry in header.tensors {
            let n: usize = entry.shape.iter().product();
            let bytes = payload
                .get(off..off + n * 8)
                .ok_or_else(|| Error::Checkpoint(format!("tensor `{}` truncated", entry.name)))?;
            off += n * 8;
            let data = bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            let t = Tensor::new(entry.shape, data)?;
            let slot = if entry.name.starts_with("@opt.gen.") {
                Some((0, &entry.name["@opt.gen.".len()..]))
            } else if entry.name.starts_with("@opt.disc.") {
                Some((1, &entry.name["@opt.disc.".len()..]))
            } else {
                None
            };
            match slot {
                Some((i, rest)) if rest.starts_with("m.") => opt[i].0.push(t),
                Some((i, _)) => opt[i].1.push(t),
                None => params.push((entry.name, t)),
            }
        }
        if off != payload.len() {
            return Err(Error::Checkpoint("trailing bytes after tensor data".into()));
        }
        let [(gm, gv), (dm, dv)] = opt;
        Ok(Checkpoint {
            config: header.config,
            epoch: header.epoch,
            step: header.step,
            params,
            generator_opt: OptimizerState {
                steps: header.generator_steps,
                m: gm,
                v: gv,
            },
            discriminator_opt: header.discriminator_steps.map(|steps| OptimizerState {
                steps,
                m: dm,
                v: dv,
            }),
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_to(BufWriter::new(File::create(path)?))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Checkpoint> {
        Checkpoint::read_from(BufReader::new(File::open(path)?))
    }
}
