use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;

use super::checkpoint::{Checkpoint, OptimizerState};
use super::eval::evaluate_imputation;
use super::metrics::{auc, MetricsRow};
use super::{ModelKind, TrainConfig};
use crate::autodiff::{Adam, AdamConfig, Graph, Var};
use crate::batch::ObsBatch;
use crate::data::{Dataset, IncompleteSeries};
use crate::error::{Error, Result};
use crate::models::{
    classification_loss, classification_term, pbigan_d_loss, pbigan_g_loss, predict_labels, pvae_loss, IndexKind, Model,
};
use crate::rng::{self, normal_tensor};

/// Mean losses over the minibatches of one epoch. Fields that do not apply
/// to the objective are `None`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct EpochLosses {
    pub total: f64,
    pub elbo: Option<f64>,
    pub d: Option<f64>,
    pub g: Option<f64>,
    pub ae: Option<f64>,
    pub cls: Option<f64>,
}

#[derive(Default)]
struct Sums {
    steps: usize,
    total: f64,
    elbo: Option<f64>,
    d: Option<f64>,
    g: Option<f64>,
    ae: Option<f64>,
    cls: Option<f64>,
}

fn add(slot: &mut Option<f64>, v: f64) {
    *slot = Some(slot.unwrap_or(0.0) + v);
}

impl Sums {
    fn mean(&self) -> EpochLosses {
        let n = self.steps.max(1) as f64;
        let m = |v: Option<f64>| v.map(|x| x / n);
        EpochLosses {
            total: self.total / n,
            elbo: m(self.elbo),
            d: m(self.d),
            g: m(self.g),
            ae: m(self.ae),
            cls: m(self.cls),
        }
    }
}

/// A model, its optimizers and the position in the training schedule.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub config: TrainConfig,
    pub model: Model,
    gen_opt: Adam,
    disc_opt: Option<Adam>,
    /// Completed epochs.
    pub epoch: usize,
    /// Completed minibatch steps.
    pub step: usize,
}

fn adam_config(cfg: &TrainConfig, lr: f64) -> AdamConfig {
    AdamConfig {
        lr,
        beta1: cfg.beta1,
        beta2: cfg.beta2,
        ..AdamConfig::default()
    }
}

impl Trainer {
    /// Fresh model initialized from the run seed. The discriminator is
    /// built exactly when the adversarial objective is selected.
    pub fn new(mut config: TrainConfig) -> Result<Trainer> {
        config.model.discriminator = config.model_kind == ModelKind::Pbigan;
        config.validate()?;
        let model = Model::new(config.model.clone(), &mut rng::stream(config.seed, rng::INIT, 0))?;
        Ok(Trainer::assemble(config, model))
    }

    fn assemble(config: TrainConfig, model: Model) -> Trainer {
        let gen_opt = Adam::new(&model.params, model.generator_ids(), adam_config(&config, config.lr));
        let disc_opt = model
            .discriminator
            .as_ref()
            .map(|_| Adam::new(&model.params, model.discriminator_ids(), adam_config(&config, config.disc_lr)));
        Trainer {
            config,
            model,
            gen_opt,
            disc_opt,
            epoch: 0,
            step: 0,
        }
    }

    /// Continues from a checkpoint. Its configuration may have been edited
    /// (for example a larger epoch count) but not its architecture.
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Trainer> {
        ckpt.config.validate()?;
        let model = ckpt.model()?;
        let mut t = Trainer::assemble(ckpt.config.clone(), model);
        ckpt.generator_opt.restore(&mut t.gen_opt)?;
        match (&mut t.disc_opt, &ckpt.discriminator_opt) {
            (Some(opt), Some(st)) => st.restore(opt)?,
            (None, None) => {}
            _ => return Err(Error::Checkpoint("discriminator state does not match the model".into())),
        }
        t.epoch = ckpt.epoch;
        t.step = ckpt.step;
        Ok(t)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let p = &self.model.params;
        Checkpoint {
            config: self.config.clone(),
            epoch: self.epoch,
            step: self.step,
            params: p.ids().map(|id| (p.name(id).to_string(), p.value(id).clone())).collect(),
            generator_opt: OptimizerState::capture(&self.gen_opt),
            discriminator_opt: self.disc_opt.as_ref().map(OptimizerState::capture),
        }
    }

    /// Checks that `data` is non-empty and fits the model.
    pub fn check_dataset(&self, data: &Dataset) -> Result<()> {
        if data.is_empty() {
            return Err(Error::invalid("dataset is empty"));
        }
        if data.channels() != self.config.model.channels {
            return Err(Error::InvalidArgument(format!(
                "dataset has {} channels, model expects {}",
                data.channels(),
                self.config.model.channels
            )));
        }
        if let IndexKind::Finite { size } = self.config.model.index {
            let bad = data
                .cases
                .iter()
                .flat_map(|c| c.channels.iter().flatten())
                .find(|o| o.0.fract() != 0.0 || !(0.0..size as f64).contains(&o.0));
            if let Some(o) = bad {
                return Err(Error::invalid(format!("index {} is not in 0..{size}", o.0)));
            }
        }
        Ok(())
    }

    fn guard(&self, what: &'static str, value: f64) -> Result<f64> {
        if value.is_finite() {
            Ok(value)
        } else {
            Err(Error::Divergence {
                epoch: self.epoch + 1,
                step: self.step + 1,
                what,
                value,
            })
        }
    }

    fn backward_into(&mut self, g: &mut Graph, root: Var, disc: bool) -> Result<()> {
        g.backward(root)?;
        let ids = if disc {
            self.disc_opt.as_ref().expect("adversarial model").ids().to_vec()
        } else {
            self.gen_opt.ids().to_vec()
        };
        let mut mask = vec![false; self.model.params.len()];
        for id in &ids {
            mask[id.0] = true;
        }
        self.model.params.accumulate(g, |id| mask[id.0]);
        if disc {
            self.disc_opt.as_mut().expect("adversarial model").step(&mut self.model.params);
        } else {
            self.gen_opt.step(&mut self.model.params);
        }
        Ok(())
    }

    fn pvae_step<R: Rng>(&mut self, cases: &[&IncompleteSeries], rng: &mut R, sums: &mut Sums) -> Result<()> {
        let batch = ObsBatch::from_series(cases)?;
        let k = self.config.k;
        let eps = normal_tensor(rng, &[cases.len() * k, self.model.latent_dim()]);
        let mut g = Graph::new();
        let root = if self.model.classifier.is_some() {
            let labels: Vec<Option<usize>> = cases.iter().map(|c| c.label).collect();
            let l = classification_loss(&mut g, &self.model, &batch, &labels, k, &eps, self.config.classifier_weight)?;
            let elbo = g.value(l.regularization).data().iter().sum::<f64>() / cases.len() as f64;
            let cls = g.value(l.classification).data().iter().sum::<f64>() / cases.len() as f64;
            add(&mut sums.elbo, self.guard("loss_elbo", elbo)?);
            add(&mut sums.cls, self.guard("loss_cls", cls)?);
            l.total
        } else {
            let per = pvae_loss(&mut g, &self.model, &batch, k, &eps)?;
            let m = g.mean(per);
            add(&mut sums.elbo, self.guard("loss_elbo", g.scalar(m))?);
            m
        };
        sums.total += self.guard("loss_total", g.scalar(root))?;
        self.backward_into(&mut g, root, false)
    }

    fn pbigan_step<R: Rng>(
        &mut self,
        cases: &[&IncompleteSeries],
        donors: &[&IncompleteSeries],
        rng: &mut R,
        sums: &mut Sums,
    ) -> Result<()> {
        let real = ObsBatch::from_series(cases)?;
        let donor = ObsBatch::from_series(donors)?;
        let d = self.model.latent_dim();
        let b = cases.len();
        let mut d_total = 0.0;
        for _ in 0..self.config.disc_steps {
            let eps = normal_tensor(rng, &[b, d]);
            let zp = normal_tensor(rng, &[b, d]);
            let mut g = Graph::new();
            let loss = pbigan_d_loss(&mut g, &self.model, &real, &donor, &eps, &zp)?;
            d_total += self.guard("loss_d", g.scalar(loss))?;
            self.backward_into(&mut g, loss, true)?;
        }
        add(&mut sums.d, d_total / self.config.disc_steps as f64);

        let eps = normal_tensor(rng, &[b, d]);
        let zp = normal_tensor(rng, &[b, d]);
        let mut g = Graph::new();
        let gl = pbigan_g_loss(&mut g, &self.model, &real, &donor, &eps, &zp, self.config.lambda)?;
        add(&mut sums.g, self.guard("loss_g", g.scalar(gl.adversarial))?);
        let ae = gl.autoencoding.map(|v| g.scalar(v)).unwrap_or(0.0);
        add(&mut sums.ae, self.guard("loss_ae", ae)?);
        let mut root = gl.total;
        if self.model.classifier.is_some() {
            let labels: Vec<Option<usize>> = cases.iter().map(|c| c.label).collect();
            let per = classification_term(&mut g, &self.model, gl.z, &labels, 1, self.config.classifier_weight)?;
            let cls = g.mean(per);
            add(&mut sums.cls, self.guard("loss_cls", g.scalar(cls))?);
            root = g.add(root, cls)?;
        }
        sums.total += self.guard("loss_total", g.scalar(root))?;
        self.backward_into(&mut g, root, false)
    }

    /// One pass over `data` in a seed- and epoch-determined order.
    pub fn train_epoch(&mut self, data: &Dataset) -> Result<EpochLosses> {
        self.check_dataset(data)?;
        let seed = self.config.seed;
        let e = self.epoch as u64;
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut rng::stream(seed, rng::SHUFFLE, e));
        let mut donor_rng = rng::stream(seed, rng::DONOR, e);
        let mut sums = Sums::default();
        for chunk in order.chunks(self.config.batch_size) {
            let cases: Vec<&IncompleteSeries> = chunk.iter().map(|&i| &data.cases[i]).collect();
            let mut noise = rng::stream(seed, rng::NOISE, self.step as u64);
            match self.config.model_kind {
                ModelKind::Pvae => self.pvae_step(&cases, &mut noise, &mut sums)?,
                ModelKind::Pbigan => {
                    let donors: Vec<&IncompleteSeries> = (0..cases.len())
                        .map(|_| &data.cases[donor_rng.random_range(0..data.len())])
                        .collect();
                    self.pbigan_step(&cases, &donors, &mut noise, &mut sums)?
                }
            }
            sums.steps += 1;
            self.step += 1;
        }
        self.epoch += 1;
        Ok(sums.mean())
    }

    /// Held-out imputation RMSE and, for a binary classifier on a dataset
    /// labeled with both classes, the validation AUC.
    pub fn evaluate(&self, valid: &Dataset) -> Result<(Option<f64>, Option<f64>)> {
        let seed = self.config.seed;
        let rep = evaluate_imputation(
            &self.model,
            valid,
            self.config.holdout,
            &mut rng::stream(seed, rng::EVAL, 0),
        )?;
        let rmse = (rep.held_out > 0).then_some(rep.rmse);
        let auc_value = match &self.model.classifier {
            Some(c) if c.classes == 2 && valid.is_labeled() && !valid.is_empty() => {
                let cases: Vec<&IncompleteSeries> = valid.cases.iter().collect();
                let preds = predict_labels(&self.model, &cases, 1, &mut rng::stream(seed, rng::EVAL, 1))?;
                let scores: Vec<f64> = preds.iter().map(|p| p.1[1] - p.1[0]).collect();
                let labels: Vec<bool> = valid.cases.iter().map(|c| c.label == Some(1)).collect();
                match auc(&scores, &labels) {
                    Ok(a) => Some(a),
                    Err(Error::SingleClass) => None,
                    Err(e) => return Err(e),
                }
            }
            _ => None,
        };
        Ok((rmse, auc_value))
    }

    /// Trains up to `config.epochs`, emitting a row after the initial
    /// evaluation (fresh runs only), every `eval_every` epochs and after the
    /// last epoch. `on_row` sees each row as soon as it exists.
    pub fn run(
        &mut self,
        train: &Dataset,
        valid: &Dataset,
        mut on_row: impl FnMut(&MetricsRow) -> Result<()>,
    ) -> Result<Vec<MetricsRow>> {
        self.check_dataset(train)?;
        self.check_dataset(valid)?;
        let start = Instant::now();
        let seconds = |cfg: &TrainConfig| cfg.record_time.then(|| start.elapsed().as_secs_f64());
        let mut rows = Vec::new();
        if self.epoch == 0 {
            let (rmse, auc) = self.evaluate(valid)?;
            let row = MetricsRow {
                epoch: 0,
                step: 0,
                loss_total: None,
                loss_elbo: None,
                loss_d: None,
                loss_g: None,
                loss_ae: None,
                loss_cls: None,
                rmse,
                auc,
                seconds: seconds(&self.config),
            };
            on_row(&row)?;
            rows.push(row);
        }
        while self.epoch < self.config.epochs {
            let l = self.train_epoch(train)?;
            if self.epoch.is_multiple_of(self.config.eval_every) || self.epoch == self.config.epochs {
                let (rmse, auc) = self.evaluate(valid)?;
                let row = MetricsRow {
                    epoch: self.epoch,
                    step: self.step,
                    loss_total: Some(l.total),
                    loss_elbo: l.elbo,
                    loss_d: l.d,
                    loss_g: l.g,
                    loss_ae: l.ae,
                    loss_cls: l.cls,
                    rmse,
                    auc,
                    seconds: seconds(&self.config),
                };
                on_row(&row)?;
                rows.push(row);
            }
        }
        Ok(rows)
    }
}

/// Trains a fresh model and returns the final checkpoint with the metric log.
pub fn train(cfg: &TrainConfig, train_set: &Dataset, valid_set: &Dataset) -> Result<(Checkpoint, Vec<MetricsRow>)> {
    let mut t = Trainer::new(cfg.clone())?;
    let rows = t.run(train_set, valid_set, |_| Ok(()))?;
    Ok((t.checkpoint(), rows))
}
