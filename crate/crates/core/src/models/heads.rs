use rand::Rng;

use super::encoder::Featurizer;
use super::nn::{Activation, Dense};
use super::ModelConfig;
use crate::autodiff::{Graph, ParamStore, Var};
use crate::batch::ObsBatch;
use crate::error::Result;

/// Two dense layers from a code to class log-probabilities.
#[derive(Debug, Clone)]
pub struct Classifier {
    pub hidden: Dense,
    pub out: Dense,
    pub classes: usize,
}

impl Classifier {
    pub fn new<R: Rng>(store: &mut ParamStore, rng: &mut R, cfg: &ModelConfig) -> Self {
        Classifier {
            hidden: Dense::new(store, rng, "cls.fc0", cfg.latent_dim, cfg.classifier_hidden),
            out: Dense::new(store, rng, "cls.fc1", cfg.classifier_hidden, cfg.classes),
            classes: cfg.classes,
        }
    }

    /// Log-probabilities `[N, classes]` for codes `[N, d]`.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, act: Activation, z: Var) -> Result<Var> {
        let h = self.hidden.forward(g, store, z)?;
        let h = act.apply(g, h);
        let logits = self.out.forward(g, store, h)?;
        g.log_softmax_last(logits)
    }
}

/// Scores (case, code) pairs: a featurizer branch for the case, two dense
/// layers for the code, and two dense layers on their concatenation.
#[derive(Debug, Clone)]
pub struct Discriminator {
    pub featurizer: Featurizer,
    pub case_fc: Dense,
    pub code_fc0: Dense,
    pub code_fc1: Dense,
    pub fuse_fc0: Dense,
    pub fuse_fc1: Dense,
}

impl Discriminator {
    pub fn new<R: Rng>(store: &mut ParamStore, rng: &mut R, cfg: &ModelConfig) -> Self {
        let featurizer = Featurizer::new(store, rng, "disc", cfg);
        let h = cfg.disc_hidden;
        Discriminator {
            case_fc: Dense::new(store, rng, "disc.case_fc", featurizer.out_dim(), h),
            code_fc0: Dense::new(store, rng, "disc.code_fc0", cfg.latent_dim, h),
            code_fc1: Dense::new(store, rng, "disc.code_fc1", h, h),
            fuse_fc0: Dense::new(store, rng, "disc.fuse_fc0", 2 * h, h),
            fuse_fc1: Dense::new(store, rng, "disc.fuse_fc1", h, 1),
            featurizer,
        }
    }

    /// Logits `[B]`.
    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        act: Activation,
        batch: &ObsBatch,
        values: Var,
        z: Var,
    ) -> Result<Var> {
        let f = self.featurizer.forward(g, store, act, batch, values)?;
        let e = self.case_fc.forward(g, store, f)?;
        let e = act.apply(g, e);
        let c = self.code_fc0.forward(g, store, z)?;
        let c = act.apply(g, c);
        let c = self.code_fc1.forward(g, store, c)?;
        let c = act.apply(g, c);
        let h = g.concat(&[e, c], 1)?;
        let h = self.fuse_fc0.forward(g, store, h)?;
        let h = act.apply(g, h);
        let logit = self.fuse_fc1.forward(g, store, h)?;
        g.reshape(logit, &[batch.num_cases()])
    }
}
