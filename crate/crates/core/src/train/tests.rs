use super::*;
use crate::data::Dataset;
use crate::models::ModelConfig;
use crate::synthetic::{generate_dataset, GeneratorConfig};

fn data(n: usize, seed: u64, labeled: bool) -> Dataset {
    generate_dataset(&GeneratorConfig {
        n_cases: n,
        seed,
        labeled,
        ..Default::default()
    })
    .unwrap()
}

fn cfg(kind: ModelKind) -> TrainConfig {
    TrainConfig {
        model_kind: kind,
        model: ModelConfig::tiny(3),
        epochs: 2,
        batch_size: 8,
        k: 3,
        seed: 5,
        ..Default::default()
    }
}

#[test]
fn zero_epochs_returns_initialization() {
    let (tr, va) = (data(20, 1, true), data(10, 2, true));
    let c = TrainConfig { epochs: 0, ..cfg(ModelKind::Pvae) };
    let (ckpt, rows) = train(&c, &tr, &va).unwrap();
    let fresh = Trainer::new(c).unwrap().checkpoint();
    assert_eq!(ckpt, fresh);
    assert_eq!(rows.len(), 1);
    assert_eq!((rows[0].epoch, rows[0].step, rows[0].loss_total), (0, 0, None));
    assert!(rows[0].rmse.is_some());
}

#[test]
fn same_seed_same_log() {
    let (tr, va) = (data(20, 1, true), data(10, 2, true));
    for kind in [ModelKind::Pvae, ModelKind::Pbigan] {
        let a = train(&cfg(kind), &tr, &va).unwrap();
        let b = train(&cfg(kind), &tr, &va).unwrap();
        assert_eq!(a.1, b.1);
        assert_eq!(a.0, b.0);
        assert_eq!(a.1.len(), 3);
        assert!(a.1.windows(2).all(|w| (w[0].epoch, w[0].step) < (w[1].epoch, w[1].step)));
    }
}

#[test]
fn resume_matches_uninterrupted_run() {
    let (tr, va) = (data(20, 1, true), data(10, 2, true));
    for kind in [ModelKind::Pvae, ModelKind::Pbigan] {
        let full = TrainConfig { epochs: 3, ..cfg(kind) };
        let (end, rows) = train(&full, &tr, &va).unwrap();

        let mut first = Trainer::new(TrainConfig { epochs: 1, ..full.clone() }).unwrap();
        let mut log = first.run(&tr, &va, |_| Ok(())).unwrap();
        let mut bytes = Vec::new();
        first.checkpoint().write_to(&mut bytes).unwrap();
        let mut ckpt = Checkpoint::read_from(bytes.as_slice()).unwrap();
        ckpt.config.epochs = 3;
        let mut resumed = Trainer::from_checkpoint(&ckpt).unwrap();
        log.extend(resumed.run(&tr, &va, |_| Ok(())).unwrap());

        assert_eq!(log, rows);
        assert_eq!(resumed.checkpoint().params, end.params);
        assert_eq!(resumed.checkpoint().generator_opt, end.generator_opt);
    }
}

#[test]
fn checkpoint_round_trip_is_exact() {
    let (tr, va) = (data(16, 3, false), data(8, 4, false));
    let c = TrainConfig { epochs: 1, ..cfg(ModelKind::Pbigan) };
    let (ckpt, _) = train(&c, &tr, &va).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    ckpt.save(&path).unwrap();
    assert_eq!(Checkpoint::load(&path).unwrap(), ckpt);

    let mut bytes = std::fs::read(&path).unwrap();
    let last = bytes.len() - 1;
    bytes[last] ^= 1;
    assert!(matches!(Checkpoint::read_from(bytes.as_slice()), Err(Error::Checkpoint(_))));
}

#[test]
fn lambda_zero_reports_zero_autoencoding() {
    let (tr, va) = (data(16, 3, false), data(8, 4, false));
    let c = TrainConfig { lambda: 0.0, epochs: 1, ..cfg(ModelKind::Pbigan) };
    let (_, rows) = train(&c, &tr, &va).unwrap();
    assert_eq!(rows[1].loss_ae, Some(0.0));
    assert!(rows[1].loss_d.is_some() && rows[1].loss_elbo.is_none());
}

#[test]
fn rejects_incompatible_data() {
    let tr = data(10, 1, false);
    let mut c = cfg(ModelKind::Pvae);
    c.model.channels = 2;
    assert!(train(&c, &tr, &tr).is_err());
    let empty = Dataset::new(3, None, "");
    assert!(train(&cfg(ModelKind::Pvae), &empty, &tr).is_err());
}

#[test]
fn divergence_is_reported() {
    let (tr, va) = (data(16, 3, false), data(8, 4, false));
    let mut t = Trainer::new(cfg(ModelKind::Pvae)).unwrap();
    let id = t.model.params.find("dec.fc.w").unwrap();
    t.model.params.value_mut(id).data_mut()[0] = f64::NAN;
    let err = t.run(&tr, &va, |_| Ok(())).unwrap_err();
    assert!(matches!(err, Error::Divergence { .. }), "{err}");
}
