use rand::seq::index::sample;
use rand::Rng;

use crate::batch::ObsBatch;
use crate::data::{Dataset, IncompleteSeries};
use crate::error::{Error, Result};
use crate::models::{decode_values, posterior_samples, Model};
use crate::rng::normal_tensor;

const CHUNK: usize = 256;

/// Anything that can fill in a case at requested times from its observed
/// part, one draw per case.
pub trait Imputer {
    /// `queries[b][c]` are the times to impute for channel `c` of case `b`;
    /// the result has the same layout.
    fn impute_batch(
        &self,
        contexts: &[IncompleteSeries],
        queries: &[Vec<Vec<f64>>],
        rng: &mut dyn rand::RngCore,
    ) -> Result<Vec<Vec<Vec<f64>>>>;
}

impl Imputer for Model {
    fn impute_batch(
        &self,
        contexts: &[IncompleteSeries],
        queries: &[Vec<Vec<f64>>],
        rng: &mut dyn rand::RngCore,
    ) -> Result<Vec<Vec<Vec<f64>>>> {
        if contexts.len() != queries.len() {
            return Err(Error::invalid(format!(
                "{} contexts for {} query sets",
                contexts.len(),
                queries.len()
            )));
        }
        let mut out = Vec::with_capacity(contexts.len());
        for (ctx, qs) in contexts.chunks(CHUNK).zip(queries.chunks(CHUNK)) {
            let refs: Vec<&IncompleteSeries> = ctx.iter().collect();
            let batch = ObsBatch::from_series(&refs)?;
            let eps = normal_tensor(rng, &[ctx.len(), self.latent_dim()]);
            let z = posterior_samples(self, &batch, 1, &eps)?;
            let qb = ObsBatch::from_times(self.config.channels, qs)?;
            let flat = decode_values(self, &z, &qb)?;
            let mut order = qb.stored_to_flat().into_iter();
            for case in qs {
                out.push(
                    case.iter()
                        .map(|ts| ts.iter().map(|_| flat[order.next().expect("one index per query")]).collect())
                        .collect(),
                );
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImputationReport {
    pub rmse: f64,
    /// RMSE of predicting zero everywhere, i.e. the RMS of the held-out values.
    pub zero_rmse: f64,
    pub evaluated_cases: usize,
    /// Cases with no channel holding at least two observations.
    pub skipped_cases: usize,
    pub held_out: usize,
}

/// Hides a random `holdout` fraction of each channel with at least two
/// observations (at least one, never all), imputes the hidden times from
/// the rest with one draw, and reports the RMSE over all hidden values.
pub fn evaluate_imputation<I: Imputer + ?Sized, R: Rng>(
    imputer: &I,
    dataset: &Dataset,
    holdout: f64,
    rng: &mut R,
) -> Result<ImputationReport> {
    if !(holdout > 0.0 && holdout < 1.0) {
        return Err(Error::invalid(format!("holdout must lie in (0, 1), got {holdout}")));
    }
    let mut contexts = Vec::new();
    let mut queries = Vec::new();
    let mut targets: Vec<Vec<Vec<f64>>> = Vec::new();
    let mut skipped = 0;
    for case in &dataset.cases {
        if !case.channels.iter().any(|obs| obs.len() >= 2) {
            skipped += 1;
            continue;
        }
        let mut ctx = case.clone();
        let mut q = Vec::with_capacity(case.num_channels());
        let mut tgt = Vec::with_capacity(case.num_channels());
        for (c, obs) in case.channels.iter().enumerate() {
            let n = obs.len();
            if n < 2 {
                q.push(Vec::new());
                tgt.push(Vec::new());
                continue;
            }
            let m = ((holdout * n as f64).round() as usize).clamp(1, n - 1);
            let mut hidden = sample(rng, n, m).into_vec();
            hidden.sort_unstable();
            q.push(hidden.iter().map(|&i| obs[i].0).collect());
            tgt.push(hidden.iter().map(|&i| obs[i].1).collect());
            ctx.channels[c] = obs
                .iter()
                .enumerate()
                .filter(|(i, _)| hidden.binary_search(i).is_err())
                .map(|(_, &o)| o)
                .collect();
        }
        contexts.push(ctx);
        queries.push(q);
        targets.push(tgt);
    }
    let preds = imputer.impute_batch(&contexts, &queries, rng)?;
    let (mut se, mut sq, mut count) = (0.0, 0.0, 0usize);
    for (p, t) in preds.iter().flatten().zip(targets.iter().flatten()) {
        for (a, b) in p.iter().zip(t) {
            se += (a - b) * (a - b);
            sq += b * b;
            count += 1;
        }
    }
    let denom = count.max(1) as f64;
    Ok(ImputationReport {
        rmse: (se / denom).sqrt(),
        zero_rmse: (sq / denom).sqrt(),
        evaluated_cases: contexts.len(),
        skipped_cases: skipped,
        held_out: count,
    })
}

/// Mean squared error of one-draw reconstructions at the observed entries.
pub fn reconstruction_mse<I: Imputer + ?Sized, R: Rng>(
    imputer: &I,
    dataset: &Dataset,
    rng: &mut R,
) -> Result<f64> {
    let queries: Vec<Vec<Vec<f64>>> = dataset
        .cases
        .iter()
        .map(|c| c.channels.iter().map(|o| o.iter().map(|p| p.0).collect()).collect())
        .collect();
    let preds = imputer.impute_batch(&dataset.cases, &queries, rng)?;
    let (mut se, mut count) = (0.0, 0usize);
    for (case, p) in dataset.cases.iter().zip(&preds) {
        for (obs, pc) in case.channels.iter().zip(p) {
            for (o, v) in obs.iter().zip(pc) {
                se += (o.1 - v) * (o.1 - v);
                count += 1;
            }
        }
    }
    if count == 0 {
        return Err(Error::invalid("dataset has no observations"));
    }
    Ok(se / count as f64)
}
