use std::sync::Arc;

use rand::Rng;

use super::nn::{init_uniform, Activation, Dense, DownConv};
use super::{IndexKind, ModelConfig, Pooling};
use crate::autodiff::{Graph, ParamId, ParamStore, Tensor, Var};
use crate::batch::ObsBatch;
use crate::continuous::ConvPlan;
use crate::error::{Error, Result};

/// Permutation-invariant map from a batch of cases to fixed-size features.
#[derive(Debug, Clone)]
pub enum Featurizer {
    Continuous {
        knots: ParamId,
        bias: ParamId,
        convs: Vec<DownConv>,
        grid: usize,
        width: f64,
        num_knots: usize,
        pooling: Pooling,
        out_dim: usize,
    },
    Finite {
        size: usize,
        layers: Vec<Dense>,
        out_dim: usize,
    },
}

impl Featurizer {
    pub fn new<R: Rng>(store: &mut ParamStore, rng: &mut R, prefix: &str, cfg: &ModelConfig) -> Self {
        match cfg.index {
            IndexKind::Continuous => {
                let (c_in, c_out, m) = (cfg.channels, cfg.conv_channels, cfg.conv_knots);
                let knots = store.add(
                    format!("{prefix}.cconv.knots"),
                    init_uniform(rng, &[c_in, c_out, m], c_in * 2),
                );
                let bias = store.add(format!("{prefix}.cconv.bias"), init_uniform(rng, &[c_out], c_in * 2));
                let mut convs = Vec::new();
                let (mut ch, mut len) = (c_out, cfg.conv_grid);
                for (i, &next) in cfg.feature_channels.iter().enumerate() {
                    convs.push(DownConv::new(store, rng, &format!("{prefix}.conv{i}"), ch, next));
                    ch = next;
                    len = DownConv::out_len(len);
                }
                Featurizer::Continuous {
                    knots,
                    bias,
                    convs,
                    grid: cfg.conv_grid,
                    width: cfg.conv_width,
                    num_knots: m,
                    pooling: cfg.pooling,
                    out_dim: match cfg.pooling {
                        Pooling::Flatten => ch * len,
                        Pooling::Max => ch,
                        Pooling::Both => ch * len + ch,
                    },
                }
            }
            IndexKind::Finite { size } => {
                let mut layers = Vec::new();
                let mut width = 2 * size;
                for (i, &h) in cfg.finite_hidden.iter().enumerate() {
                    layers.push(Dense::new(store, rng, &format!("{prefix}.fc{i}"), width, h));
                    width = h;
                }
                Featurizer::Finite {
                    size,
                    layers,
                    out_dim: width,
                }
            }
        }
    }

    pub fn out_dim(&self) -> usize {
        match self {
            Featurizer::Continuous { out_dim, .. } | Featurizer::Finite { out_dim, .. } => *out_dim,
        }
    }

    /// Features `[B, out_dim]`; `values` holds the batch's observed values in
    /// batch order and may carry gradients.
    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        act: Activation,
        batch: &ObsBatch,
        values: Var,
    ) -> Result<Var> {
        let b = batch.num_cases();
        match self {
            Featurizer::Continuous {
                knots,
                bias,
                convs,
                grid,
                width,
                num_knots,
                pooling,
                out_dim: _,
            } => {
                let plan = Arc::new(ConvPlan::new(batch, *grid, *width, *num_knots)?);
                let k = g.param(store, *knots);
                let bv = g.param(store, *bias);
                let mut h = g.cont_conv(values, k, bv, plan)?;
                h = act.apply(g, h);
                for conv in convs {
                    h = conv.forward(g, store, h)?;
                    h = act.apply(g, h);
                }
                let ch = g.value(h).shape()[1];
                let flat = |g: &mut Graph| g.reshape(h, &[b, g.value(h).numel() / b.max(1)]);
                match pooling {
                    Pooling::Flatten => flat(g),
                    Pooling::Max => {
                        let m = g.max_last(h)?;
                        g.reshape(m, &[b, ch])
                    }
                    Pooling::Both => {
                        let f = flat(g)?;
                        let m = g.max_last(h)?;
                        let m = g.reshape(m, &[b, ch])?;
                        g.concat(&[f, m], 1)
                    }
                }
            }
            Featurizer::Finite { size, layers, .. } => {
                let n = *size;
                let mut pos = Vec::with_capacity(batch.len());
                let mut mask = vec![0.0; b * n];
                for case in 0..b {
                    for q in batch.case_range(case) {
                        let idx = batch.times()[q] as usize;
                        if idx >= n {
                            return Err(Error::invalid(format!("index {idx} outside [0, {n})")));
                        }
                        pos.push(case * n + idx);
                        mask[case * n + idx] = 1.0;
                    }
                }
                let grid = g.scatter(values, Arc::new(pos), b * n)?;
                let grid = g.reshape(grid, &[b, n])?;
                let mask = g.constant(Tensor::new(vec![b, n], mask)?);
                let mut h = g.concat(&[grid, mask], 1)?;
                for layer in layers {
                    h = layer.forward(g, store, h)?;
                    h = act.apply(g, h);
                }
                Ok(h)
            }
        }
    }
}

/// One inverse autoregressive affine stage with MADE-style masks.
#[derive(Debug, Clone)]
pub struct IafStage {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w_shift: ParamId,
    pub b_shift: ParamId,
    pub w_scale: ParamId,
    pub b_scale: ParamId,
    mask_in: Tensor,
    mask_out: Tensor,
}

/// Bound on the magnitude of each log-scale.
pub const IAF_SCALE_BOUND: f64 = 5.0;

impl IafStage {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        d: usize,
        hidden: usize,
        reversed: bool,
    ) -> Self {
        let deg_in: Vec<usize> = (0..d).map(|i| if reversed { d - i } else { i + 1 }).collect();
        let deg_h: Vec<usize> = (0..hidden).map(|h| h % d.saturating_sub(1).max(1) + 1).collect();
        let mut mask_in = vec![0.0; d * hidden];
        for i in 0..d {
            for h in 0..hidden {
                if deg_h[h] >= deg_in[i] {
                    mask_in[i * hidden + h] = 1.0;
                }
            }
        }
        let mut mask_out = vec![0.0; hidden * d];
        for h in 0..hidden {
            for o in 0..d {
                if deg_in[o] > deg_h[h] {
                    mask_out[h * d + o] = 1.0;
                }
            }
        }
        IafStage {
            w1: store.add(format!("{name}.w1"), init_uniform(rng, &[d, hidden], d)),
            b1: store.add(format!("{name}.b1"), init_uniform(rng, &[hidden], d)),
            w_shift: store.add(format!("{name}.w_shift"), Tensor::zeros(&[hidden, d])),
            b_shift: store.add(format!("{name}.b_shift"), Tensor::zeros(&[d])),
            w_scale: store.add(format!("{name}.w_scale"), Tensor::zeros(&[hidden, d])),
            b_scale: store.add(format!("{name}.b_scale"), Tensor::zeros(&[d])),
            mask_in: Tensor::new(vec![d, hidden], mask_in).expect("shape"),
            mask_out: Tensor::new(vec![hidden, d], mask_out).expect("shape"),
        }
    }

    fn masked(&self, g: &mut Graph, store: &ParamStore, w: ParamId, mask: &Tensor) -> Result<Var> {
        let w = g.param(store, w);
        let m = g.constant(mask.clone());
        g.mul(w, m)
    }

    /// `z' = shift(z) + exp(s(z)) ∘ z`; returns `(z', Σ s)` with `s` bounded
    /// by [`IAF_SCALE_BOUND`].
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, act: Activation, z: Var) -> Result<(Var, Var)> {
        let w1 = self.masked(g, store, self.w1, &self.mask_in)?;
        let b1 = g.param(store, self.b1);
        let h = g.matmul(z, w1)?;
        let h = g.add_row(h, b1)?;
        let h = act.apply(g, h);

        let wm = self.masked(g, store, self.w_shift, &self.mask_out)?;
        let bm = g.param(store, self.b_shift);
        let shift = g.matmul(h, wm)?;
        let shift = g.add_row(shift, bm)?;

        let ws = self.masked(g, store, self.w_scale, &self.mask_out)?;
        let bs = g.param(store, self.b_scale);
        let raw = g.matmul(h, ws)?;
        let raw = g.add_row(raw, bs)?;
        let raw = g.scale(raw, 1.0 / IAF_SCALE_BOUND);
        let s = g.tanh(raw);
        let s = g.scale(s, IAF_SCALE_BOUND);

        let e = g.exp(s);
        let scaled = g.mul(e, z)?;
        let out = g.add(shift, scaled)?;
        let logdet = g.sum_last(s)?;
        Ok((out, logdet))
    }
}

/// Amortized Gaussian posterior with optional flow stages.
#[derive(Debug, Clone)]
pub struct Encoder {
    pub featurizer: Featurizer,
    pub head: Dense,
    pub iaf: Vec<IafStage>,
    latent_dim: usize,
}

impl Encoder {
    pub fn new<R: Rng>(store: &mut ParamStore, rng: &mut R, cfg: &ModelConfig) -> Self {
        let featurizer = Featurizer::new(store, rng, "enc", cfg);
        let head = Dense::new(store, rng, "enc.head", featurizer.out_dim(), 2 * cfg.latent_dim);
        let iaf = (0..cfg.iaf_stages)
            .map(|s| IafStage::new(store, rng, &format!("enc.iaf{s}"), cfg.latent_dim, cfg.iaf_hidden, s % 2 == 1))
            .collect();
        Encoder {
            featurizer,
            head,
            iaf,
            latent_dim: cfg.latent_dim,
        }
    }

    /// `(μ, log σ²)`, each `[B, d]`.
    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        act: Activation,
        batch: &ObsBatch,
        values: Var,
    ) -> Result<(Var, Var)> {
        let f = self.featurizer.forward(g, store, act, batch, values)?;
        let out = self.head.forward(g, store, f)?;
        let d = self.latent_dim;
        let mu = g.narrow(out, 1, 0, d)?;
        let logvar = g.narrow(out, 1, d, d)?;
        Ok((mu, logvar))
    }

    /// Applies every flow stage; returns the final code and the summed
    /// log-determinant per row.
    pub fn flow(&self, g: &mut Graph, store: &ParamStore, act: Activation, z0: Var) -> Result<(Var, Option<Var>)> {
        let mut z = z0;
        let mut total: Option<Var> = None;
        for stage in &self.iaf {
            let (next, ld) = stage.forward(g, store, act, z)?;
            z = next;
            total = Some(match total {
                Some(t) => g.add(t, ld)?,
                None => ld,
            });
        }
        Ok((z, total))
    }
}
