//! Registry of finite-difference gradient checks covering every graph
//! operation, the continuous layers, each network block and every loss.
//!
//! Each check builds a fixed random instance, reduces the output to a scalar
//! with fixed random weights and compares the reverse-mode gradient of every
//! parameter against central differences.

use std::sync::Arc;
use std::time::Instant;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::autodiff::{grad_check, precision, GradCheckReport, Graph, ParamId, ParamStore, Precision, Tensor, Var};
use crate::batch::ObsBatch;
use crate::continuous::{ConvPlan, KernelSmootherConfig, SmoothPlan};
use crate::data::IncompleteSeries;
use crate::error::{Error, Result};
use crate::models::nn::{Dense, DownConv, UpConv};
use crate::models::{
    classification_loss, pbigan_d_loss, pbigan_g_loss, pvae_loss, sample_posterior, IafStage, IndexKind, Model, ModelConfig,
};
use crate::rng::{normal_tensor, stream};

const SEED: u64 = 0x6752_4144;

type CheckFn = fn(f64, f64) -> Result<GradCheckReport>;

/// One registered check.
#[derive(Clone, Copy)]
pub struct GradCase {
    pub name: &'static str,
    check: CheckFn,
}

impl std::fmt::Debug for GradCase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("GradCase").field("name", &self.name).finish()
    }
}

impl GradCase {
    pub fn run(&self, step: f64, tolerance: f64) -> Result<GradCheckReport> {
        (self.check)(step, tolerance)
    }
}

#[derive(Debug, Clone)]
pub struct SuiteEntry {
    pub name: &'static str,
    pub report: GradCheckReport,
    pub seconds: f64,
}

/// Runs every check whose name equals `filter` (all when `None`). Requires
/// 64-bit mode.
pub fn run_suite(filter: Option<&str>, step: f64, tolerance: f64) -> Result<Vec<SuiteEntry>> {
    if precision() != Precision::F64 {
        return Err(Error::invalid("gradient checks run in 64-bit mode only"));
    }
    let cases: Vec<GradCase> = registry()
        .into_iter()
        .filter(|c| filter.is_none_or(|f| c.name == f))
        .collect();
    if cases.is_empty() {
        return Err(Error::invalid(format!(
            "no gradient check named `{}`; known: {}",
            filter.unwrap_or_default(),
            registry().iter().map(|c| c.name).collect::<Vec<_>>().join(", ")
        )));
    }
    cases
        .iter()
        .map(|c| {
            let start = Instant::now();
            let report = c.run(step, tolerance)?;
            Ok(SuiteEntry {
                name: c.name,
                report,
                seconds: start.elapsed().as_secs_f64(),
            })
        })
        .collect()
}

/// Entry with the largest relative error.
pub fn worst(entries: &[SuiteEntry]) -> Option<(&SuiteEntry, f64)> {
    entries
        .iter()
        .map(|e| (e, e.report.max_rel_err()))
        .max_by(|a, b| a.1.total_cmp(&b.1))
}

macro_rules! cases {
    ($($name:literal => $f:expr),* $(,)?) => {
        vec![$(GradCase { name: $name, check: $f }),*]
    };
}

pub fn registry() -> Vec<GradCase> {
    cases![
        "add" => |h, tol| binary(h, tol, |g, a, b| g.add(a, b)),
        "sub" => |h, tol| binary(h, tol, |g, a, b| g.sub(a, b)),
        "mul" => |h, tol| binary(h, tol, |g, a, b| g.mul(a, b)),
        "div" => |h, tol| op(h, tol, &[(&[2, 3], Init::Normal), (&[2, 3], Init::Positive)], |g, v| g.div(v[0], v[1])),
        "add_row" => |h, tol| op(h, tol, &[(&[3, 4], Init::Normal), (&[4], Init::Normal)], |g, v| g.add_row(v[0], v[1])),
        "add_channel_bias" => |h, tol| {
            op(h, tol, &[(&[2, 3, 5], Init::Normal), (&[3], Init::Normal)], |g, v| g.add_channel_bias(v[0], v[1]))
        },
        "scale" => |h, tol| unary(h, tol, Init::Normal, |g, x| Ok(g.scale(x, -1.7))),
        "add_scalar" => |h, tol| unary(h, tol, Init::Normal, |g, x| Ok(g.add_scalar(x, 0.4))),
        "neg" => |h, tol| unary(h, tol, Init::Normal, |g, x| Ok(g.neg(x))),
        "exp" => |h, tol| unary(h, tol, Init::Normal, |g, x| Ok(g.exp(x))),
        "log" => |h, tol| unary(h, tol, Init::Positive, |g, x| Ok(g.log(x))),
        "tanh" => |h, tol| unary(h, tol, Init::Normal, |g, x| Ok(g.tanh(x))),
        "sigmoid" => |h, tol| unary(h, tol, Init::Normal, |g, x| Ok(g.sigmoid(x))),
        "relu" => |h, tol| unary(h, tol, Init::AwayFromZero, |g, x| Ok(g.relu(x))),
        "softplus" => |h, tol| unary(h, tol, Init::Normal, |g, x| Ok(g.softplus(x))),
        "square" => |h, tol| unary(h, tol, Init::Normal, |g, x| Ok(g.square(x))),
        "sum" => |h, tol| unary(h, tol, Init::Normal, |g, x| {
            let s = g.sum(x);
            Ok(g.square(s))
        }),
        "mean" => |h, tol| unary(h, tol, Init::Normal, |g, x| {
            let s = g.mean(x);
            Ok(g.square(s))
        }),
        "sum_last" => |h, tol| unary(h, tol, Init::Normal, |g, x| g.sum_last(x)),
        "log_mean_exp_last" => |h, tol| unary(h, tol, Init::Normal, |g, x| g.log_mean_exp_last(x)),
        "log_softmax_last" => |h, tol| unary(h, tol, Init::Normal, |g, x| g.log_softmax_last(x)),
        "max_last" => |h, tol| unary(h, tol, Init::Normal, |g, x| g.max_last(x)),
        "pick_last" => |h, tol| unary(h, tol, Init::Normal, |g, x| g.pick_last(x, &[1, 3])),
        "index_select" => |h, tol| unary(h, tol, Init::Normal, |g, x| g.index_select(x, Arc::new(vec![5, 0, 0, 2, 7]))),
        "scatter" => |h, tol| unary(h, tol, Init::Normal, |g, x| g.scatter(x, Arc::new(vec![3, 0, 3, 1, 9, 9, 2, 4]), 11)),
        "segment_sum" => |h, tol| unary(h, tol, Init::Normal, |g, x| {
            g.segment_sum(x, Arc::new(vec![0, 0, 2, 2, 2, 1, 3, 0]), 4)
        }),
        "reshape" => |h, tol| unary(h, tol, Init::Normal, |g, x| {
            let r = g.reshape(x, &[4, 2])?;
            g.log_softmax_last(r)
        }),
        "concat" => |h, tol| {
            op(h, tol, &[(&[2, 3], Init::Normal), (&[2, 2], Init::Normal)], |g, v| {
                let c = g.concat(&[v[0], v[1], v[0]], 1)?;
                g.log_softmax_last(c)
            })
        },
        "narrow" => |h, tol| op(h, tol, &[(&[3, 5], Init::Normal)], |g, v| g.narrow(v[0], 1, 1, 3)),
        "repeat_rows" => |h, tol| op(h, tol, &[(&[2, 3], Init::Normal)], |g, v| {
            let r = g.repeat_rows(v[0], 3)?;
            Ok(g.square(r))
        }),
        "matmul" => |h, tol| op(h, tol, &[(&[3, 4], Init::Normal), (&[4, 2], Init::Normal)], |g, v| g.matmul(v[0], v[1])),
        "conv1d" => |h, tol| {
            op(h, tol, &[(&[2, 3, 9], Init::Normal), (&[4, 3, 3], Init::Normal), (&[4], Init::Normal)], |g, v| {
                g.conv1d(v[0], v[1], v[2], 2, 1)
            })
        },
        "conv_transpose1d" => |h, tol| {
            op(h, tol, &[(&[2, 3, 5], Init::Normal), (&[3, 2, 4], Init::Normal), (&[2], Init::Normal)], |g, v| {
                g.conv_transpose1d(v[0], v[1], v[2], 2, 1)
            })
        },
        "cont_conv" => check_cont_conv,
        "kernel_smooth" => check_kernel_smooth,
        "dense" => check_dense,
        "down_conv" => check_down_conv,
        "up_conv" => check_up_conv,
        "iaf" => check_iaf,
        "encoder" => check_encoder,
        "finite_encoder" => check_finite_encoder,
        "decoder" => check_decoder,
        "classifier" => check_classifier,
        "discriminator" => check_discriminator,
        "pvae_loss_k1" => |h, tol| check_pvae(h, tol, 1),
        "pvae_loss_k4" => |h, tol| check_pvae(h, tol, 4),
        "classification_loss" => check_classification,
        "pbigan_d_loss" => check_pbigan_d,
        "pbigan_g_loss" => check_pbigan_g,
    ]
}

#[derive(Clone, Copy)]
enum Init {
    Normal,
    Positive,
    /// Magnitudes of at least 0.2, away from kinks at zero.
    AwayFromZero,
}

fn draw(rng: &mut ChaCha8Rng, shape: &[usize], init: Init) -> Tensor {
    let mut t = normal_tensor(rng, shape);
    for v in t.data_mut() {
        *v = match init {
            Init::Normal => 0.8 * *v,
            Init::Positive => 0.5 + v.abs(),
            Init::AwayFromZero => v.signum() * (0.2 + v.abs()),
        };
    }
    t
}

/// `Σ w ∘ out` with weights drawn from a fixed stream.
fn project(g: &mut Graph, out: Var) -> Result<Var> {
    let shape = g.value(out).shape().to_vec();
    let mut rng = stream(SEED, 99, 0);
    let w = normal_tensor(&mut rng, &shape);
    let w = g.constant(w);
    let p = g.mul(out, w)?;
    Ok(g.sum(p))
}

fn op<F>(step: f64, tol: f64, inputs: &[(&[usize], Init)], f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut rng = stream(SEED, 1, 0);
    let mut store = ParamStore::new();
    let ids: Vec<ParamId> = inputs
        .iter()
        .enumerate()
        .map(|(i, (shape, init))| store.add(format!("x{i}"), draw(&mut rng, shape, *init)))
        .collect();
    grad_check(&mut store, &ids.clone(), step, tol, |g, s| {
        let vars: Vec<Var> = ids.iter().map(|&id| g.param(s, id)).collect();
        let out = f(g, &vars)?;
        project(g, out)
    })
}

fn unary<F>(step: f64, tol: f64, init: Init, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    op(step, tol, &[(&[2, 4], init)], |g, v| f(g, v[0]))
}

fn binary<F>(step: f64, tol: f64, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, Var, Var) -> Result<Var>,
{
    op(step, tol, &[(&[2, 3], Init::Normal), (&[2, 3], Init::Normal)], |g, v| f(g, v[0], v[1]))
}

fn random_cases(rng: &mut ChaCha8Rng, n: usize, channels: usize, max_obs: usize) -> Vec<IncompleteSeries> {
    (0..n)
        .map(|_| {
            let obs = (0..channels)
                .map(|_| {
                    let count = rng.random_range(1..=max_obs);
                    (0..count)
                        .map(|_| (rng.random::<f64>(), StandardNormal.sample(&mut *rng)))
                        .collect()
                })
                .collect();
            IncompleteSeries::new(obs).expect("valid case")
        })
        .collect()
}

fn batch_of(cases: &[IncompleteSeries]) -> ObsBatch {
    let refs: Vec<&IncompleteSeries> = cases.iter().collect();
    ObsBatch::from_series(&refs).expect("valid batch")
}

fn check_cont_conv(step: f64, tol: f64) -> Result<GradCheckReport> {
    let mut rng = stream(SEED, 2, 0);
    let batch = batch_of(&random_cases(&mut rng, 2, 2, 6));
    let plan = Arc::new(ConvPlan::new(&batch, 9, 0.3, 4)?);
    op(step, tol, &[(&[batch.len()], Init::Normal), (&[2, 3, 4], Init::Normal), (&[3], Init::Normal)], |g, v| {
        g.cont_conv(v[0], v[1], v[2], plan.clone())
    })
}

fn check_kernel_smooth(step: f64, tol: f64) -> Result<GradCheckReport> {
    let mut rng = stream(SEED, 3, 0);
    let cfg = KernelSmootherConfig {
        references: 12,
        bandwidth: 0.2,
    };
    let batch = batch_of(&random_cases(&mut rng, 2, 2, 7));
    let plan = Arc::new(SmoothPlan::new(&batch, &cfg)?);
    op(step, tol, &[(&[2, 2, 12], Init::Normal)], |g, v| g.kernel_smooth(v[0], plan.clone()))
}

fn layer_check<L, B, F>(step: f64, tol: f64, input: &[usize], build: B, f: F) -> Result<GradCheckReport>
where
    B: FnOnce(&mut ParamStore, &mut ChaCha8Rng) -> L,
    F: Fn(&L, &mut Graph, &ParamStore, Var) -> Result<Var>,
{
    let mut rng = stream(SEED, 4, 0);
    let mut store = ParamStore::new();
    let x = store.add("input", draw(&mut rng, input, Init::Normal));
    let layer = build(&mut store, &mut rng);
    jitter(&mut store, &mut rng);
    let ids: Vec<ParamId> = store.ids().collect();
    grad_check(&mut store, &ids, step, tol, |g, s| {
        let xv = g.param(s, x);
        let out = f(&layer, g, s, xv)?;
        project(g, out)
    })
}

fn check_dense(step: f64, tol: f64) -> Result<GradCheckReport> {
    layer_check(
        step,
        tol,
        &[3, 4],
        |s, r| Dense::new(s, r, "fc", 4, 5),
        |l, g, s, x| l.forward(g, s, x),
    )
}

fn check_down_conv(step: f64, tol: f64) -> Result<GradCheckReport> {
    layer_check(
        step,
        tol,
        &[2, 3, 10],
        |s, r| DownConv::new(s, r, "down", 3, 2),
        |l, g, s, x| l.forward(g, s, x),
    )
}

fn check_up_conv(step: f64, tol: f64) -> Result<GradCheckReport> {
    layer_check(
        step,
        tol,
        &[2, 3, 4],
        |s, r| UpConv::new(s, r, "up", 3, 2),
        |l, g, s, x| l.forward(g, s, x),
    )
}

fn check_iaf(step: f64, tol: f64) -> Result<GradCheckReport> {
    layer_check(
        step,
        tol,
        &[3, 4],
        |s, r| IafStage::new(s, r, "iaf", 4, 8, true),
        |l, g, s, z| {
            let (out, logdet) = l.forward(g, s, crate::models::Activation::Tanh, z)?;
            let a = project(g, out)?;
            let b = g.sum(logdet);
            g.add(a, b)
        },
    )
}

/// Adds small noise to every parameter so zero-initialized layers are
/// exercised away from their special starting point.
fn jitter(store: &mut ParamStore, rng: &mut ChaCha8Rng) {
    let ids: Vec<ParamId> = store.ids().collect();
    for id in ids {
        let shape = store.value(id).shape().to_vec();
        let noise = normal_tensor(rng, &shape);
        for (v, n) in store.value_mut(id).data_mut().iter_mut().zip(noise.data()) {
            *v += 0.2 * n;
        }
    }
}

struct Fixture {
    model: Model,
    cases: Vec<IncompleteSeries>,
    batch: ObsBatch,
    rng: ChaCha8Rng,
}

fn fixture(config: ModelConfig, cases: usize) -> Result<Fixture> {
    let mut rng = stream(SEED, 5, 0);
    let mut model = Model::new(config, &mut rng)?;
    jitter(&mut model.params, &mut rng);
    let channels = model.config.channels;
    let mut cases = random_cases(&mut rng, cases, channels, 5);
    for (i, c) in cases.iter_mut().enumerate() {
        c.label = Some(i % 2);
    }
    let batch = batch_of(&cases);
    Ok(Fixture {
        model,
        cases,
        batch,
        rng,
    })
}

/// Checks every parameter of the model; `f` receives the model with the
/// perturbed parameter store in place.
fn model_check<F>(fx: Fixture, step: f64, tol: f64, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &Model) -> Result<Var>,
{
    model_check_prefix(fx, "", step, tol, f)
}

/// Like [`model_check`], restricted to parameters whose name starts with
/// `prefix`.
fn model_check_prefix<F>(fx: Fixture, prefix: &str, step: f64, tol: f64, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &Model) -> Result<Var>,
{
    let Fixture { mut model, .. } = fx;
    let ids: Vec<ParamId> = model.params.ids_with_prefix(prefix).collect();
    let mut store = std::mem::take(&mut model.params);
    let shell = std::cell::RefCell::new(model);
    let report = grad_check(&mut store, &ids, step, tol, |g, s| {
        let mut m = shell.borrow_mut();
        m.params = s.clone();
        f(g, &m)
    });
    report
}

fn check_encoder(step: f64, tol: f64) -> Result<GradCheckReport> {
    let fx = fixture(ModelConfig::tiny(2), 3)?;
    let batch = fx.batch.clone();
    let eps = normal_tensor(&mut stream(SEED, 98, 0), &[3, fx.model.latent_dim()]);
    model_check(fx, step, tol, move |g, m| {
        let x = g.constant(Tensor::from_vec(batch.values().to_vec()));
        let (mu, logvar) = m.encoder.forward(g, &m.params, m.config.activation, &batch, x)?;
        let post = sample_posterior(g, m, mu, logvar, &eps)?;
        let a = project(g, post.z)?;
        let b = g.sum(post.log_q);
        g.add(a, b)
    })
}

fn check_finite_encoder(step: f64, tol: f64) -> Result<GradCheckReport> {
    let cfg = ModelConfig {
        index: IndexKind::Finite { size: 6 },
        ..ModelConfig::tiny(1)
    };
    let mut fx = fixture(cfg, 1)?;
    let cases = [
        crate::data::FiniteIncomplete::new(6, vec![0, 4, 2], vec![0.5, -1.0, 0.3])?,
        crate::data::FiniteIncomplete::new(6, vec![5], vec![1.2])?,
    ];
    let refs: Vec<_> = cases.iter().collect();
    fx.batch = ObsBatch::from_finite(&refs)?;
    let batch = fx.batch.clone();
    let eps = normal_tensor(&mut fx.rng, &[2, 3]);
    model_check(fx, step, tol, move |g, m| {
        let l = pvae_loss(g, m, &batch, 1, &eps)?;
        Ok(g.mean(l))
    })
}

fn check_decoder(step: f64, tol: f64) -> Result<GradCheckReport> {
    let mut fx = fixture(ModelConfig::tiny(2), 3)?;
    let z = normal_tensor(&mut fx.rng, &[3, 3]);
    let batch = fx.batch.clone();
    model_check(fx, step, tol, move |g, m| {
        let zv = g.constant(z.clone());
        let f = m.decoder.decode(g, &m.params, m.config.activation, zv, &batch)?;
        project(g, f)
    })
}

fn check_classifier(step: f64, tol: f64) -> Result<GradCheckReport> {
    let mut fx = fixture(ModelConfig::tiny(2), 3)?;
    let z = normal_tensor(&mut fx.rng, &[4, 3]);
    model_check(fx, step, tol, move |g, m| {
        let zv = g.constant(z.clone());
        let lp = m.classifier.as_ref().expect("classifier").forward(g, &m.params, m.config.activation, zv)?;
        project(g, lp)
    })
}

fn check_discriminator(step: f64, tol: f64) -> Result<GradCheckReport> {
    let mut fx = fixture(ModelConfig::tiny(2), 3)?;
    let z = normal_tensor(&mut fx.rng, &[3, 3]);
    let batch = fx.batch.clone();
    model_check(fx, step, tol, move |g, m| {
        let x = g.constant(Tensor::from_vec(batch.values().to_vec()));
        let zv = g.constant(z.clone());
        let d = m.discriminator.as_ref().expect("discriminator");
        let logits = d.forward(g, &m.params, m.config.activation, &batch, x, zv)?;
        project(g, logits)
    })
}

fn check_pvae(step: f64, tol: f64, k: usize) -> Result<GradCheckReport> {
    let mut fx = fixture(ModelConfig::tiny(2), 3)?;
    let eps = normal_tensor(&mut fx.rng, &[3 * k, 3]);
    let batch = fx.batch.clone();
    model_check(fx, step, tol, move |g, m| {
        let l = pvae_loss(g, m, &batch, k, &eps)?;
        Ok(g.mean(l))
    })
}

fn check_classification(step: f64, tol: f64) -> Result<GradCheckReport> {
    let mut fx = fixture(ModelConfig::tiny(2), 3)?;
    let eps = normal_tensor(&mut fx.rng, &[3 * 2, 3]);
    let labels: Vec<Option<usize>> = vec![fx.cases[0].label, None, fx.cases[2].label];
    let batch = fx.batch.clone();
    model_check(fx, step, tol, move |g, m| {
        Ok(classification_loss(g, m, &batch, &labels, 2, &eps, 1.5)?.total)
    })
}

fn adversarial_inputs(fx: &mut Fixture) -> (ObsBatch, Tensor, Tensor) {
    let donors = random_cases(&mut fx.rng, 3, 2, 5);
    let eps = normal_tensor(&mut fx.rng, &[3, 3]);
    let zp = normal_tensor(&mut fx.rng, &[3, 3]);
    (batch_of(&donors), eps, zp)
}

fn check_pbigan_d(step: f64, tol: f64) -> Result<GradCheckReport> {
    let mut fx = fixture(ModelConfig::tiny(2), 3)?;
    let (donor, eps, zp) = adversarial_inputs(&mut fx);
    let batch = fx.batch.clone();
    model_check_prefix(fx, "disc.", step, tol, move |g, m| pbigan_d_loss(g, m, &batch, &donor, &eps, &zp))
}

fn check_pbigan_g(step: f64, tol: f64) -> Result<GradCheckReport> {
    let mut fx = fixture(ModelConfig::tiny(2), 3)?;
    let (donor, eps, zp) = adversarial_inputs(&mut fx);
    let batch = fx.batch.clone();
    model_check(fx, step, tol, move |g, m| {
        Ok(pbigan_g_loss(g, m, &batch, &donor, &eps, &zp, 0.7)?.total)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::DEFAULT_STEP;

    #[test]
    fn names_are_unique() {
        let names: Vec<_> = registry().iter().map(|c| c.name).collect();
        let mut sorted = names.clone();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(sorted.len(), names.len());
    }

    #[test]
    fn filter_selects_one_and_rejects_unknown() {
        let r = run_suite(Some("cont_conv"), DEFAULT_STEP, 1e-4).unwrap();
        assert_eq!(r.len(), 1);
        assert!(r[0].report.passed(), "{:?}", r[0].report.worst());
        assert!(run_suite(Some("nope"), DEFAULT_STEP, 1e-4).is_err());
    }

    #[test]
    fn quadratic_ops_pass_tight_tolerance() {
        for name in ["square", "mul", "matmul", "add"] {
            let r = run_suite(Some(name), DEFAULT_STEP, 1e-9).unwrap();
            assert!(r[0].report.passed(), "{name}: {:?}", r[0].report.worst());
        }
    }
}
