use std::f64::consts::PI;

use super::Model;
use crate::autodiff::{Graph, Tensor, Var};
use crate::batch::ObsBatch;
use crate::error::{Error, Result};

/// A reparameterized posterior draw.
#[derive(Debug, Clone, Copy)]
pub struct Posterior {
    /// Codes `[N, d]`.
    pub z: Var,
    /// `log q(z | x, t)` per row, `[N]`.
    pub log_q: Var,
}

/// `log N(z; 0, I)` per row.
pub fn gaussian_log_prior(g: &mut Graph, z: Var) -> Result<Var> {
    let d = *g.value(z).shape().last().unwrap_or(&0) as f64;
    let sq = g.square(z);
    let s = g.sum_last(sq)?;
    let s = g.scale(s, -0.5);
    Ok(g.add_scalar(s, -0.5 * d * (2.0 * PI).ln()))
}

/// `z = IAF(μ + σ ∘ ε)` with its log-density under the flow.
pub fn sample_posterior(
    g: &mut Graph,
    model: &Model,
    mu: Var,
    logvar: Var,
    eps: &Tensor,
) -> Result<Posterior> {
    let shape = g.value(mu).shape().to_vec();
    if eps.shape() != shape.as_slice() || g.value(logvar).shape() != shape.as_slice() {
        return Err(Error::shape(
            "sample_posterior",
            format!("μ {shape:?}, log σ² {:?}, ε {:?}", g.value(logvar).shape(), eps.shape()),
        ));
    }
    let d = shape[1];
    let half = g.scale(logvar, 0.5);
    let std = g.exp(half);
    let e = g.constant(eps.clone());
    let noise = g.mul(std, e)?;
    let z0 = g.add(mu, noise)?;

    // log N(z0; μ, σ²) = -½ Σ log σ² - ½ Σ ε² - d/2 log 2π
    let lv_sum = g.sum_last(logvar)?;
    let lv_term = g.scale(lv_sum, -0.5);
    let c: Vec<f64> = eps
        .data()
        .chunks(d.max(1))
        .map(|row| -0.5 * row.iter().map(|v| v * v).sum::<f64>() - 0.5 * d as f64 * (2.0 * PI).ln())
        .collect();
    let c = g.constant(Tensor::from_vec(c));
    let log_q0 = g.add(lv_term, c)?;

    let act = model.config.activation;
    let (z, logdet) = model.encoder.flow(g, &model.params, act, z0)?;
    let log_q = match logdet {
        Some(ld) => g.sub(log_q0, ld)?,
        None => log_q0,
    };
    Ok(Posterior { z, log_q })
}

fn repeat(g: &mut Graph, x: Var, k: usize) -> Result<Var> {
    if k == 1 {
        Ok(x)
    } else {
        g.repeat_rows(x, k)
    }
}

/// Per-case sum of `log N(x_i | f_i, σ²)` over the observations of `batch`.
fn log_likelihood(g: &mut Graph, batch: &ObsBatch, f: Var, sigma: f64) -> Result<Var> {
    let x = g.constant(Tensor::from_vec(batch.values().to_vec()));
    let diff = g.sub(x, f)?;
    let sq = g.square(diff);
    let t = g.scale(sq, -0.5 / (sigma * sigma));
    let t = g.add_scalar(t, -0.5 * (2.0 * PI * sigma * sigma).ln());
    g.segment_sum(t, batch.case_ids(), batch.num_cases())
}

/// Log importance weights `log p(z) + Σ log p(x_i | z, t_i) - log q(z)` for
/// `k` draws per case, laid out `[B·k]` with case-major rows, plus the
/// draws themselves. `eps` is `[B·k, d]`.
pub fn pvae_log_weights(
    g: &mut Graph,
    model: &Model,
    batch: &ObsBatch,
    k: usize,
    eps: &Tensor,
) -> Result<(Var, Posterior)> {
    if k == 0 {
        return Err(Error::invalid("at least one importance sample is required"));
    }
    let act = model.config.activation;
    let values = g.constant(Tensor::from_vec(batch.values().to_vec()));
    let (mu, logvar) = model.encoder.forward(g, &model.params, act, batch, values)?;
    let mu = repeat(g, mu, k)?;
    let logvar = repeat(g, logvar, k)?;
    let post = sample_posterior(g, model, mu, logvar, eps)?;
    let rep;
    let queries = if k == 1 {
        batch
    } else {
        rep = batch.repeat_cases(k);
        &rep
    };
    let f = model.decoder.decode(g, &model.params, act, post.z, queries)?;
    let ll = log_likelihood(g, queries, f, model.config.obs_noise)?;
    let lp = gaussian_log_prior(g, post.z)?;
    let w = g.add(lp, ll)?;
    let w = g.sub(w, post.log_q)?;
    Ok((w, post))
}

fn negative_bound(g: &mut Graph, log_w: Var, cases: usize, k: usize) -> Result<Var> {
    let w = g.reshape(log_w, &[cases, k])?;
    let lme = g.log_mean_exp_last(w)?;
    Ok(g.neg(lme))
}

/// Negative importance-weighted bound per case, `[B]`. With `k = 1` this is
/// the negative ELBO estimate.
pub fn pvae_loss(g: &mut Graph, model: &Model, batch: &ObsBatch, k: usize, eps: &Tensor) -> Result<Var> {
    let (w, _) = pvae_log_weights(g, model, batch, k, eps)?;
    negative_bound(g, w, batch.num_cases(), k)
}

/// Per-case `-weight · (1/k) Σ_s log p(y | z_s)`, zero where the label is
/// absent. `z` holds `k` rows per case.
pub(crate) fn classification_term(
    g: &mut Graph,
    model: &Model,
    z: Var,
    labels: &[Option<usize>],
    k: usize,
    weight: f64,
) -> Result<Var> {
    let cls = model
        .classifier
        .as_ref()
        .ok_or_else(|| Error::Capability("model has no classifier".into()))?;
    if let Some(&bad) = labels.iter().flatten().find(|&&y| y >= cls.classes) {
        return Err(Error::InvalidLabel {
            label: bad,
            classes: cls.classes,
        });
    }
    let b = labels.len();
    let lp = cls.forward(g, &model.params, model.config.activation, z)?;
    let idx: Vec<usize> = labels
        .iter()
        .flat_map(|y| std::iter::repeat_n(y.unwrap_or(0), k))
        .collect();
    let mask: Vec<f64> = labels
        .iter()
        .flat_map(|y| std::iter::repeat_n(if y.is_some() { 1.0 } else { 0.0 }, k))
        .collect();
    let picked = g.pick_last(lp, &idx)?;
    let m = g.constant(Tensor::from_vec(mask));
    let picked = g.mul(picked, m)?;
    let per = g.reshape(picked, &[b, k])?;
    let per = g.sum_last(per)?;
    Ok(g.scale(per, -weight / k as f64))
}

/// Terms of the joint objective; `total = mean(regularization + classification)`.
#[derive(Debug, Clone, Copy)]
pub struct ClassificationLoss {
    /// Negative bound per case, `[B]`.
    pub regularization: Var,
    /// Weighted negative log-likelihood of the label per case, `[B]`;
    /// exactly zero for unlabeled cases.
    pub classification: Var,
    pub total: Var,
}

pub fn classification_loss(
    g: &mut Graph,
    model: &Model,
    batch: &ObsBatch,
    labels: &[Option<usize>],
    k: usize,
    eps: &Tensor,
    weight: f64,
) -> Result<ClassificationLoss> {
    if labels.len() != batch.num_cases() {
        return Err(Error::invalid(format!(
            "{} labels for {} cases",
            labels.len(),
            batch.num_cases()
        )));
    }
    let (w, post) = pvae_log_weights(g, model, batch, k, eps)?;
    let regularization = negative_bound(g, w, batch.num_cases(), k)?;
    let classification = classification_term(g, model, post.z, labels, k, weight)?;
    let sum = g.add(regularization, classification)?;
    let total = g.mean(sum);
    Ok(ClassificationLoss {
        regularization,
        classification,
        total,
    })
}

struct Pairs {
    real: Var,
    fake: Var,
    post: Posterior,
}

fn detach(g: &mut Graph, v: Var) -> Var {
    let t = g.value(v).clone();
    g.constant(t)
}

fn discriminate(
    g: &mut Graph,
    model: &Model,
    real: &ObsBatch,
    donor: &ObsBatch,
    eps: &Tensor,
    z_prior: &Tensor,
    detach_generator: bool,
) -> Result<Pairs> {
    let disc = model
        .discriminator
        .as_ref()
        .ok_or_else(|| Error::Capability("model has no discriminator".into()))?;
    if z_prior.shape() != [donor.num_cases(), model.latent_dim()] {
        return Err(Error::shape(
            "pbigan",
            format!(
                "prior draws {:?} for {} donors",
                z_prior.shape(),
                donor.num_cases()
            ),
        ));
    }
    let act = model.config.activation;
    let p = &model.params;
    let x = g.constant(Tensor::from_vec(real.values().to_vec()));
    let (mu, logvar) = model.encoder.forward(g, p, act, real, x)?;
    let post = sample_posterior(g, model, mu, logvar, eps)?;

    let zp = g.constant(z_prior.clone());
    let mut x_fake = model.decoder.decode(g, p, act, zp, donor)?;
    let mut z_real = post.z;
    if detach_generator {
        x_fake = detach(g, x_fake);
        z_real = detach(g, z_real);
    }
    let real_logit = disc.forward(g, p, act, real, x, z_real)?;
    let fake_logit = disc.forward(g, p, act, donor, x_fake, zp)?;
    Ok(Pairs {
        real: real_logit,
        fake: fake_logit,
        post,
    })
}

fn mean_softplus(g: &mut Graph, x: Var, negate: bool) -> Var {
    let x = if negate { g.neg(x) } else { x };
    let s = g.softplus(x);
    g.mean(s)
}

/// `-[log D(real) + log(1 - D(fake))]` averaged over each side. Real pairs
/// are `(x, t, z ~ q(z|x,t))`; fake pairs decode the prior draws at the
/// donors' indices. Generator outputs enter as constants.
pub fn pbigan_d_loss(
    g: &mut Graph,
    model: &Model,
    real: &ObsBatch,
    donor: &ObsBatch,
    eps: &Tensor,
    z_prior: &Tensor,
) -> Result<Var> {
    let pairs = discriminate(g, model, real, donor, eps, z_prior, true)?;
    let a = mean_softplus(g, pairs.real, true);
    let b = mean_softplus(g, pairs.fake, false);
    g.add(a, b)
}

#[derive(Debug, Clone, Copy)]
pub struct GeneratorLoss {
    pub total: Var,
    /// `-log D(fake) - log(1 - D(real))`, averaged per side.
    pub adversarial: Var,
    /// `λ` times the mean per-case squared reconstruction error; absent
    /// when `λ = 0`.
    pub autoencoding: Option<Var>,
    /// Posterior codes of the real cases.
    pub z: Var,
}

pub fn pbigan_g_loss(
    g: &mut Graph,
    model: &Model,
    real: &ObsBatch,
    donor: &ObsBatch,
    eps: &Tensor,
    z_prior: &Tensor,
    lambda: f64,
) -> Result<GeneratorLoss> {
    if !(lambda >= 0.0) {
        return Err(Error::invalid(format!("λ must be non-negative, got {lambda}")));
    }
    let pairs = discriminate(g, model, real, donor, eps, z_prior, false)?;
    let a = mean_softplus(g, pairs.fake, true);
    let b = mean_softplus(g, pairs.real, false);
    let adversarial = g.add(a, b)?;
    let (total, autoencoding) = if lambda > 0.0 {
        let act = model.config.activation;
        let f = model.decoder.decode(g, &model.params, act, pairs.post.z, real)?;
        let x = g.constant(Tensor::from_vec(real.values().to_vec()));
        let diff = g.sub(x, f)?;
        let sq = g.square(diff);
        let per = g.segment_sum(sq, real.case_ids(), real.num_cases())?;
        let m = g.mean(per);
        let ae = g.scale(m, lambda);
        (g.add(adversarial, ae)?, Some(ae))
    } else {
        (adversarial, None)
    };
    Ok(GeneratorLoss {
        total,
        adversarial,
        autoencoding,
        z: pairs.post.z,
    })
}
