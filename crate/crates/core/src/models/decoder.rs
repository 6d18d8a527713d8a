use std::sync::Arc;

use rand::Rng;

use super::nn::{Activation, Dense, UpConv};
use super::{IndexKind, ModelConfig};
use crate::autodiff::{Graph, ParamStore, Var};
use crate::batch::ObsBatch;
use crate::continuous::{KernelSmootherConfig, SmoothPlan};
use crate::error::{Error, Result};

/// Deterministic map from codes to function values at query indices.
#[derive(Debug, Clone)]
pub enum Decoder {
    /// Dense layer to a short feature map, length-doubling transposed
    /// convolutions to `C × L` references, then kernel smoothing.
    Continuous {
        fc: Dense,
        ups: Vec<UpConv>,
        base_channels: usize,
        base_len: usize,
        channels: usize,
        smoother: KernelSmootherConfig,
    },
    /// Dense layers to the `n` grid values.
    Finite { layers: Vec<Dense>, size: usize },
}

impl Decoder {
    pub fn new<R: Rng>(store: &mut ParamStore, rng: &mut R, cfg: &ModelConfig) -> Self {
        let d = cfg.latent_dim;
        match cfg.index {
            IndexKind::Continuous => {
                let base_channels = cfg.decoder_channels[0];
                let base_len = cfg.decoder_base_len();
                let fc = Dense::new(store, rng, "dec.fc", d, base_channels * base_len);
                let mut ups = Vec::new();
                for (i, &c_in) in cfg.decoder_channels.iter().enumerate() {
                    let c_out = cfg.decoder_channels.get(i + 1).copied().unwrap_or(cfg.channels);
                    ups.push(UpConv::new(store, rng, &format!("dec.up{i}"), c_in, c_out));
                }
                Decoder::Continuous {
                    fc,
                    ups,
                    base_channels,
                    base_len,
                    channels: cfg.channels,
                    smoother: cfg.smoother,
                }
            }
            IndexKind::Finite { size } => {
                let mut layers = Vec::new();
                let mut width = d;
                for (i, &h) in cfg.finite_hidden.iter().rev().enumerate() {
                    layers.push(Dense::new(store, rng, &format!("dec.fc{i}"), width, h));
                    width = h;
                }
                layers.push(Dense::new(store, rng, "dec.out", width, size));
                Decoder::Finite { layers, size }
            }
        }
    }

    /// Reference values `[N, C, L]` (continuous) or grid values `[N, n]`
    /// (finite) for codes `z: [N, d]`.
    pub fn references(&self, g: &mut Graph, store: &ParamStore, act: Activation, z: Var) -> Result<Var> {
        let n = g.value(z).shape()[0];
        match self {
            Decoder::Continuous {
                fc,
                ups,
                base_channels,
                base_len,
                ..
            } => {
                let h = fc.forward(g, store, z)?;
                let h = act.apply(g, h);
                let mut h = g.reshape(h, &[n, *base_channels, *base_len])?;
                for (i, up) in ups.iter().enumerate() {
                    h = up.forward(g, store, h)?;
                    if i + 1 < ups.len() {
                        h = act.apply(g, h);
                    }
                }
                Ok(h)
            }
            Decoder::Finite { layers, .. } => {
                let mut h = z;
                for (i, layer) in layers.iter().enumerate() {
                    h = layer.forward(g, store, h)?;
                    if i + 1 < layers.len() {
                        h = act.apply(g, h);
                    }
                }
                Ok(h)
            }
        }
    }

    /// Values at the queries of `queries`, whose case `b` reads code row
    /// `b`; output `[Q]` in batch order.
    pub fn decode(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        act: Activation,
        z: Var,
        queries: &ObsBatch,
    ) -> Result<Var> {
        let rows = g.value(z).shape()[0];
        if queries.num_cases() != rows {
            return Err(Error::shape(
                "decode",
                format!("{rows} codes for {} query sets", queries.num_cases()),
            ));
        }
        let refs = self.references(g, store, act, z)?;
        match self {
            Decoder::Continuous { smoother, .. } => {
                let plan = Arc::new(SmoothPlan::new(queries, smoother)?);
                g.kernel_smooth(refs, plan)
            }
            Decoder::Finite { size, .. } => {
                let n = *size;
                let mut pos = Vec::with_capacity(queries.len());
                for b in 0..rows {
                    for q in queries.case_range(b) {
                        let idx = queries.times()[q] as usize;
                        if idx >= n {
                            return Err(Error::invalid(format!("index {idx} outside [0, {n})")));
                        }
                        pos.push(b * n + idx);
                    }
                }
                g.index_select(refs, Arc::new(pos))
            }
        }
    }
}
