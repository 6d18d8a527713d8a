use rand::Rng;

use super::losses::sample_posterior;
use super::Model;
use crate::autodiff::{Graph, Tensor};
use crate::batch::ObsBatch;
use crate::data::IncompleteSeries;
use crate::error::{Error, Result};
use crate::rng::normal_tensor;

/// Posterior codes `[B·s, d]` (case-major) for noise `eps: [B·s, d]`.
pub fn posterior_samples(model: &Model, batch: &ObsBatch, s: usize, eps: &Tensor) -> Result<Tensor> {
    let mut g = Graph::new();
    let act = model.config.activation;
    let x = g.constant(Tensor::from_vec(batch.values().to_vec()));
    let (mu, logvar) = model.encoder.forward(&mut g, &model.params, act, batch, x)?;
    let (mu, logvar) = if s == 1 {
        (mu, logvar)
    } else {
        (g.repeat_rows(mu, s)?, g.repeat_rows(logvar, s)?)
    };
    let post = sample_posterior(&mut g, model, mu, logvar, eps)?;
    Ok(g.value(post.z).clone())
}

/// Decoded values at the queries of `queries` (one case per code row), in
/// batch order.
pub fn decode_values(model: &Model, z: &Tensor, queries: &ObsBatch) -> Result<Vec<f64>> {
    let mut g = Graph::new();
    let zv = g.constant(z.clone());
    let f = model
        .decoder
        .decode(&mut g, &model.params, model.config.activation, zv, queries)?;
    Ok(g.value(f).data().to_vec())
}

/// Sampled completions of one case: `samples[s][c][i]` is the value at
/// query `i` of channel `c` in draw `s`.
#[derive(Debug, Clone, PartialEq)]
pub struct Imputation {
    pub samples: Vec<Vec<Vec<f64>>>,
}

/// Draws `s` posterior codes for `case` and decodes each at the per-channel
/// query times. Queries that coincide with an observed time of the same
/// channel return the observed value.
pub fn impute<R: Rng>(
    model: &Model,
    case: &IncompleteSeries,
    queries: &[Vec<f64>],
    s: usize,
    rng: &mut R,
) -> Result<Imputation> {
    if s == 0 {
        return Err(Error::invalid("at least one sample is required"));
    }
    let c = model.config.channels;
    if queries.len() != c || case.num_channels() != c {
        return Err(Error::InvalidChannel(queries.len().max(case.num_channels())));
    }
    if let Some(&bad) = queries.iter().flatten().find(|t| !(0.0..=1.0).contains(*t)) {
        return Err(Error::invalid(format!("query time {bad} outside [0, 1]")));
    }
    let batch = ObsBatch::from_series(&[case])?;
    let eps = normal_tensor(rng, &[s, model.latent_dim()]);
    let z = posterior_samples(model, &batch, s, &eps)?;

    let qb = ObsBatch::from_times(c, &vec![queries.to_vec(); s])?;
    let flat = decode_values(model, &z, &qb)?;
    let order = qb.stored_to_flat();

    // Observed value at each exactly matching time: the first in canonical
    // order, so duplicates resolve independently of storage order.
    let observed: Vec<Vec<(f64, f64)>> = (0..c)
        .map(|ch| {
            batch
                .channel_range(0, ch)
                .map(|q| (batch.times()[q], batch.values()[q]))
                .collect()
        })
        .collect();
    let lookup = |ch: usize, t: f64| {
        observed[ch]
            .iter()
            .find(|o| o.0 == t)
            .map(|o| o.1)
    };

    let mut samples = Vec::with_capacity(s);
    let mut pos = 0;
    for _ in 0..s {
        let mut draw = Vec::with_capacity(c);
        for (ch, ts) in queries.iter().enumerate() {
            let mut vals = Vec::with_capacity(ts.len());
            for &t in ts {
                vals.push(lookup(ch, t).unwrap_or(flat[order[pos]]));
                pos += 1;
            }
            draw.push(vals);
        }
        samples.push(draw);
    }
    Ok(Imputation { samples })
}

/// `argmax_y (1/s) Σ log p(y | z_s)` for each case, with the per-class means.
/// Ties go to the smallest class index.
pub fn predict_labels<R: Rng>(
    model: &Model,
    cases: &[&IncompleteSeries],
    s: usize,
    rng: &mut R,
) -> Result<Vec<(usize, Vec<f64>)>> {
    let cls = model
        .classifier
        .as_ref()
        .ok_or_else(|| Error::Capability("model has no classifier".into()))?;
    if s == 0 {
        return Err(Error::invalid("at least one sample is required"));
    }
    let batch = ObsBatch::from_series(cases)?;
    let eps = normal_tensor(rng, &[cases.len() * s, model.latent_dim()]);
    let z = posterior_samples(model, &batch, s, &eps)?;
    let mut g = Graph::new();
    let zv = g.constant(z);
    let lp = cls.forward(&mut g, &model.params, model.config.activation, zv)?;
    let k = cls.classes;
    let lp = g.value(lp).data();
    Ok((0..cases.len())
        .map(|b| {
            let mut mean = vec![0.0; k];
            for r in 0..s {
                let row = &lp[(b * s + r) * k..(b * s + r + 1) * k];
                for (m, v) in mean.iter_mut().zip(row) {
                    *m += v;
                }
            }
            for m in &mut mean {
                *m /= s as f64;
            }
            let mut best = 0;
            for (y, &v) in mean.iter().enumerate() {
                if v > mean[best] {
                    best = y;
                }
            }
            (best, mean)
        })
        .collect())
}

pub fn predict_label<R: Rng>(
    model: &Model,
    case: &IncompleteSeries,
    s: usize,
    rng: &mut R,
) -> Result<(usize, Vec<f64>)> {
    Ok(predict_labels(model, &[case], s, rng)?.remove(0))
}
