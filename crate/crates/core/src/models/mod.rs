//! Encoder, decoder, flow, classifier and discriminator networks, the
//! training objectives built from them, and inference helpers.

mod decoder;
mod encoder;
mod heads;
mod infer;
mod losses;
pub mod nn;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamId, ParamStore, Tensor};
use crate::continuous::KernelSmootherConfig;
use crate::error::{Error, Result};

pub use decoder::Decoder;
pub use encoder::{Encoder, Featurizer, IafStage};
pub use heads::{Classifier, Discriminator};
pub use infer::{decode_values, impute, posterior_samples, predict_label, predict_labels, Imputation};
pub use losses::{
    classification_loss, gaussian_log_prior, pbigan_d_loss, pbigan_g_loss, pvae_log_weights,
    pvae_loss, sample_posterior, ClassificationLoss, GeneratorLoss, Posterior,
};
pub use nn::Activation;
pub(crate) use losses::classification_term;

/// How the continuous featurizer turns its final feature map `[C, L]` into
/// a vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pooling {
    /// All `C·L` values, position by position.
    #[default]
    Flatten,
    /// Per-channel maximum over positions (translation invariant).
    Max,
    /// Both of the above, concatenated.
    Both,
}

/// Whether cases live on `[0, 1]` or on a finite grid `{0, .., size-1}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum IndexKind {
    Continuous,
    Finite { size: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub channels: usize,
    pub index: IndexKind,
    pub latent_dim: usize,
    pub activation: Activation,
    /// Output channels of the continuous convolution.
    pub conv_channels: usize,
    pub conv_grid: usize,
    pub conv_width: f64,
    pub conv_knots: usize,
    /// Channels of the stride-2 convolutions after the continuous one.
    pub feature_channels: Vec<usize>,
    pub pooling: Pooling,
    /// Hidden widths of the finite-index featurizer and decoder.
    pub finite_hidden: Vec<usize>,
    pub iaf_stages: usize,
    pub iaf_hidden: usize,
    pub smoother: KernelSmootherConfig,
    /// Channels entering each length-doubling transposed convolution.
    pub decoder_channels: Vec<usize>,
    /// Standard deviation of the Gaussian observation model.
    pub obs_noise: f64,
    /// Number of classes; 0 disables the classifier.
    pub classes: usize,
    pub classifier_hidden: usize,
    pub discriminator: bool,
    pub disc_hidden: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            channels: 3,
            index: IndexKind::Continuous,
            latent_dim: 16,
            activation: Activation::Relu,
            conv_channels: 64,
            conv_grid: 98,
            conv_width: 2.0 / 98.0,
            conv_knots: 7,
            feature_channels: vec![32, 32],
            pooling: Pooling::Flatten,
            finite_hidden: vec![128],
            iaf_stages: 2,
            iaf_hidden: 64,
            smoother: KernelSmootherConfig::default(),
            decoder_channels: vec![32, 16],
            obs_noise: 0.1,
            classes: 0,
            classifier_hidden: 64,
            discriminator: false,
            disc_hidden: 64,
        }
    }
}

impl ModelConfig {
    /// A very small configuration with every component enabled, used for
    /// gradient checks and fast tests.
    pub fn tiny(channels: usize) -> ModelConfig {
        ModelConfig {
            channels,
            index: IndexKind::Continuous,
            latent_dim: 3,
            activation: Activation::Tanh,
            conv_channels: 4,
            conv_grid: 10,
            conv_width: 0.2,
            conv_knots: 3,
            feature_channels: vec![3],
            pooling: Pooling::Both,
            finite_hidden: vec![6],
            iaf_stages: 2,
            iaf_hidden: 6,
            smoother: KernelSmootherConfig {
                references: 16,
                bandwidth: 0.15,
            },
            decoder_channels: vec![4, 3],
            obs_noise: 0.5,
            classes: 2,
            classifier_hidden: 5,
            discriminator: true,
            disc_hidden: 5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::invalid(m));
        if self.channels == 0 || self.latent_dim == 0 {
            return bad("channels and latent_dim must be positive".into());
        }
        if !(self.obs_noise > 0.0) {
            return bad(format!("obs_noise must be positive, got {}", self.obs_noise));
        }
        if self.classes == 1 {
            return bad("a classifier needs at least 2 classes".into());
        }
        match self.index {
            IndexKind::Continuous => {
                if self.conv_channels == 0 || self.conv_grid < 2 || self.conv_knots < 2 {
                    return bad("conv_channels > 0, conv_grid >= 2 and conv_knots >= 2 required".into());
                }
                if !(self.conv_width > 0.0) {
                    return bad(format!("conv_width must be positive, got {}", self.conv_width));
                }
                self.smoother.validate()?;
                let stages = self.decoder_channels.len();
                if stages == 0 || !self.smoother.references.is_multiple_of(1 << stages) {
                    return bad(format!(
                        "{} references cannot be reached by {stages} doublings",
                        self.smoother.references
                    ));
                }
            }
            IndexKind::Finite { size } => {
                if size == 0 || self.channels != 1 {
                    return bad("finite index needs size > 0 and exactly 1 channel".into());
                }
            }
        }
        Ok(())
    }

    /// Length of the first decoder feature map.
    pub(crate) fn decoder_base_len(&self) -> usize {
        self.smoother.references >> self.decoder_channels.len()
    }
}

/// All networks of one model with their parameters.
#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamStore,
    pub encoder: Encoder,
    pub decoder: Decoder,
    pub classifier: Option<Classifier>,
    pub discriminator: Option<Discriminator>,
}

impl Model {
    pub fn new<R: Rng>(config: ModelConfig, rng: &mut R) -> Result<Model> {
        config.validate()?;
        let mut params = ParamStore::new();
        let encoder = Encoder::new(&mut params, rng, &config);
        let decoder = Decoder::new(&mut params, rng, &config);
        let classifier = (config.classes >= 2).then(|| Classifier::new(&mut params, rng, &config));
        let discriminator = config
            .discriminator
            .then(|| Discriminator::new(&mut params, rng, &config));
        Ok(Model {
            config,
            params,
            encoder,
            decoder,
            classifier,
            discriminator,
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.config.latent_dim
    }

    /// Parameters of the encoder, decoder and classifier.
    pub fn generator_ids(&self) -> Vec<ParamId> {
        self.params
            .ids()
            .filter(|&id| !self.params.name(id).starts_with("disc."))
            .collect()
    }

    pub fn discriminator_ids(&self) -> Vec<ParamId> {
        self.params.ids_with_prefix("disc.").collect()
    }

    /// Replaces parameter values by name; every parameter must be present
    /// with a matching shape.
    pub fn load_params(&mut self, named: &[(String, Tensor)]) -> Result<()> {
        let ids: Vec<ParamId> = self.params.ids().collect();
        for id in ids {
            let name = self.params.name(id).to_string();
            let t = named
                .iter()
                .find(|(n, _)| *n == name)
                .map(|p| &p.1)
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter `{name}`")))?;
            if t.shape() != self.params.value(id).shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter `{name}` has shape {:?}, model expects {:?}",
                    t.shape(),
                    self.params.value(id).shape()
                )));
            }
            *self.params.value_mut(id) = t.clone();
        }
        Ok(())
    }
}
