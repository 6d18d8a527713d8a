use proptest::collection::vec;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use irts_core::autodiff::{Graph, Tensor};
use irts_core::batch::ObsBatch;
use irts_core::continuous::{epanechnikov, kernel_smooth, KernelSmootherConfig, PiecewiseLinearFilter};
use irts_core::data::{mask, Dataset, FiniteIncomplete, IncompleteSeries};
use irts_core::models::{Model, ModelConfig};
use irts_core::train::auc;

fn series(max_obs: usize) -> impl Strategy<Value = IncompleteSeries> {
    vec(vec((0.0..=1.0f64, -5.0..5.0f64), 0..=max_obs), 2).prop_map(|channels| IncompleteSeries {
        channels,
        label: None,
        truth: None,
    })
}

fn scored(n: usize) -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
    vec((-100.0..100.0f64, any::<bool>()), 2..n)
        .prop_filter("both classes", |v| v.iter().any(|p| p.1) && v.iter().any(|p| !p.1))
        .prop_map(|v| v.into_iter().unzip())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn auc_invariant_under_increasing_maps((scores, labels) in scored(40)) {
        let a = auc(&scores, &labels).unwrap();
        let mapped: Vec<f64> = scores.iter().map(|s| (s / 50.0).exp() * 3.0 + 1.0).collect();
        prop_assert_eq!(a, auc(&mapped, &labels).unwrap());
        prop_assert!((0.0..=1.0).contains(&a));
    }

    #[test]
    fn auc_of_negated_scores_is_complement((scores, labels) in scored(40)) {
        let neg: Vec<f64> = scores.iter().map(|s| -s).collect();
        let sum = auc(&scores, &labels).unwrap() + auc(&neg, &labels).unwrap();
        prop_assert!((sum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn jsonl_round_trip_is_bit_exact(cases in vec(series(6), 0..6), label in proptest::option::of(0usize..3)) {
        let mut d = Dataset::new(2, Some(1), "property");
        d.cases = cases.into_iter().map(|c| c.with_label(label)).collect();
        let mut buf = Vec::new();
        d.write_jsonl(&mut buf).unwrap();
        let back = Dataset::read_jsonl(buf.as_slice()).unwrap();
        prop_assert_eq!(back, d);
    }

    #[test]
    fn mask_inverts_to_sorted_case(n in 1usize..12, seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut idx: Vec<usize> = (0..n).filter(|_| rng.random_bool(0.5)).collect();
        idx.shuffle(&mut rng);
        let values: Vec<f64> = idx.iter().map(|_| rng.random_range(-3.0..3.0)).collect();
        let case = FiniteIncomplete::new(n, idx.clone(), values.clone()).unwrap();
        let m = mask(&case).unwrap();
        prop_assert_eq!(m.mask.iter().filter(|&&b| b).count(), idx.len());
        let back = m.to_incomplete();
        let mut pairs: Vec<(usize, f64)> = idx.into_iter().zip(values).collect();
        pairs.sort_by_key(|p| p.0);
        prop_assert_eq!(back.indices, pairs.iter().map(|p| p.0).collect::<Vec<_>>());
        prop_assert_eq!(back.values, pairs.iter().map(|p| p.1).collect::<Vec<_>>());
    }

    #[test]
    fn smoother_reproduces_constants(l in 2usize..200, extra in 1.01f64..4.0, c in -10.0..10.0f64, t in 0.0..=1.0f64) {
        let cfg = KernelSmootherConfig::new(l, extra / (l - 1) as f64).unwrap();
        let out = kernel_smooth(&cfg, &[vec![c; l]], &[(0, t)]).unwrap();
        prop_assert!((out[0] - c).abs() <= 1e-12 * c.abs().max(1.0));
    }

    #[test]
    fn epanechnikov_is_symmetric_and_bounded(u in -2.0..2.0f64, t in -2.0..2.0f64, beta in 0.01..1.0f64) {
        let k = epanechnikov(u, t, beta).unwrap();
        prop_assert_eq!(k, epanechnikov(t, u, beta).unwrap());
        prop_assert!((0.0..=0.75).contains(&k));
        prop_assert_eq!(k == 0.0, (u - t).abs() >= beta);
    }

    #[test]
    fn filter_interpolates_knots(knots in vec(-2.0..2.0f64, 2..9), width in 0.01..1.0f64, s in -1.0..2.0f64) {
        let f = PiecewiseLinearFilter::new(width, knots.clone()).unwrap();
        for (j, &k) in knots.iter().enumerate() {
            prop_assert!((f.eval(f.knot_position(j)) - k).abs() < 1e-12);
        }
        let v = f.eval(s);
        if !(0.0..=width).contains(&s) {
            prop_assert_eq!(v, 0.0);
        } else {
            let (lo, hi) = knots.iter().fold((f64::MAX, f64::MIN), |a, &k| (a.0.min(k), a.1.max(k)));
            prop_assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn encoder_ignores_observation_order(case in series(8), seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        let model = Model::new(ModelConfig::tiny(2), &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let encode = |c: &IncompleteSeries| {
            let batch = ObsBatch::from_series(&[c]).unwrap();
            let mut g = Graph::new();
            let x = g.constant(Tensor::from_vec(batch.values().to_vec()));
            let (mu, lv) = model.encoder.forward(&mut g, &model.params, model.config.activation, &batch, x).unwrap();
            (g.value(mu).data().to_vec(), g.value(lv).data().to_vec())
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let perms: Vec<Vec<usize>> = case.channels.iter().map(|o| {
            let mut p: Vec<usize> = (0..o.len()).collect();
            p.shuffle(&mut rng);
            p
        }).collect();
        prop_assert_eq!(encode(&case), encode(&case.permute(&perms).unwrap()));
    }
}
