use proptest::prelude::*;

use featvae::data::FactorSpec;
use featvae::metrics::{
    dci, evaluate_table, factorvae_score, mig, sap, DciParams, FactorVaeParams, MetricConfig, MigParams,
    RepresentationTable, SapParams,
};
use featvae::vae::{elbo_loss, BetaSchedule};
use featvae::{Rng, Tensor};

fn schedule() -> impl Strategy<Value = BetaSchedule> {
    (2usize..300, 0.0f64..1.0, 0.0f64..1.0, 0.0f64..1.0, 0.0f64..2.0).prop_flat_map(|(epochs, a, b, lo, span)| {
        let (a, b) = ((a * (epochs - 1) as f64) as usize, (b * (epochs - 1) as f64) as usize);
        Just(BetaSchedule {
            beta_start: lo,
            beta_end: lo + span,
            t_start: a.min(b),
            t_end: a.max(b),
            epochs,
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn beta_is_monotone_and_continuous(s in schedule()) {
        prop_assert!(s.validate().is_ok());
        let mut prev = f64::NEG_INFINITY;
        for t in 0..s.epochs {
            let b = s.beta_at(t).unwrap();
            prop_assert!(b >= prev, "β({t}) = {b} < {prev}");
            prop_assert!(b >= s.beta_start && b <= s.beta_end);
            prev = b;
        }
        // values at the window edges and the one-sided limits into the window
        let (ts, te) = (s.t_start as f64, s.t_end as f64);
        prop_assert_eq!(s.value_at(te), s.beta_end);
        if s.t_end > s.t_start {
            prop_assert_eq!(s.value_at(ts), s.beta_start);
            let d = 1e-7 * (te - ts);
            let slack = 1e-9 * (s.beta_end - s.beta_start) + 1e-15;
            prop_assert!((s.value_at(ts + d) - s.beta_start).abs() <= slack);
            prop_assert!((s.value_at(te - d) - s.beta_end).abs() <= slack);
        }
        prop_assert!(s.beta_at(s.epochs).is_err());
    }
}

fn latent(b: usize, c: usize) -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (
        prop::collection::vec(-5.0f64..5.0, b * c),
        prop::collection::vec(-5.0f64..5.0, b * c),
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn kld_is_non_negative((b, c, mu, lv) in (1usize..6, 1usize..6).prop_flat_map(|(b, c)| (Just(b), Just(c), latent(b, c)).prop_map(|(b, c, (m, l))| (b, c, m, l)))) {
        let x = Tensor::<f64>::zeros(&[b, 3]);
        let mu = Tensor::from_vec(&[b, c], mu).unwrap();
        let lv = Tensor::from_vec(&[b, c], lv).unwrap();
        let terms = elbo_loss(&x, &x, &mu, &lv, 1.0).unwrap();
        prop_assert!(terms.kld >= 0.0);
        let prior = elbo_loss(&x, &x, &Tensor::zeros(&[b, c]), &Tensor::zeros(&[b, c]), 1.0).unwrap();
        prop_assert!(prior.kld.abs() < 1e-9);
        let off_prior = mu.data().iter().chain(lv.data()).any(|v| v.abs() > 1e-3);
        if off_prior {
            prop_assert!(terms.kld > 1e-9, "{}", terms.kld);
        }
    }
}

fn small_config() -> MetricConfig {
    MetricConfig {
        factorvae: FactorVaeParams {
            votes_train: 60,
            votes_eval: 40,
            batch_per_vote: 16,
        },
        mig: MigParams { bins: 10 },
        dci: DciParams {
            iterations: 150,
            ..DciParams::default()
        },
        ..MetricConfig::default()
    }
}

/// 3×4 factor grid, 8 rows per combination; codes mix the factors with noise.
fn table(dims: usize, mix: Vec<f64>, noise: f64, seed: u64) -> RepresentationTable {
    let spec = FactorSpec::new([("a", 3), ("b", 4)]).unwrap();
    let rows: Vec<Vec<usize>> = (0..spec.combinations() * 8)
        .map(|i| spec.decode(i % spec.combinations()))
        .collect();
    let mut rng = Rng::new(seed);
    let data = rows
        .iter()
        .flat_map(|r| {
            (0..dims)
                .map(|j| (mix[2 * j] * r[0] as f64 + mix[2 * j + 1] * r[1] as f64 + noise * rng.normal()) as f32)
                .collect::<Vec<_>>()
        })
        .collect();
    RepresentationTable::new(&Tensor::from_vec(&[rows.len(), dims], data).unwrap(), rows, spec).unwrap()
}

fn table_strategy() -> impl Strategy<Value = RepresentationTable> {
    (2usize..5)
        .prop_flat_map(|d| {
            (
                Just(d),
                prop::collection::vec(-3.0f64..3.0, 2 * d),
                0.01f64..5.0,
                any::<u64>(),
            )
        })
        .prop_map(|(d, mix, noise, seed)| table(d, mix, noise, seed))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn scores_lie_in_unit_interval(t in table_strategy(), seed in any::<u64>()) {
        let report = evaluate_table(&t, &small_config(), seed).unwrap();
        for (name, s) in featvae::metrics::MetricReport::SCORE_NAMES.iter().zip(report.scores()) {
            prop_assert!((0.0..=1.0).contains(&s), "{name} = {s}");
        }
    }

    #[test]
    fn permuting_dims_changes_nothing(t in table_strategy(), seed in any::<u64>(), rot in 1usize..4) {
        let cfg = small_config();
        let d = t.dims();
        let perm: Vec<usize> = (0..d).map(|j| (j + rot) % d).rev().collect();
        let p = t.permute_dims(&perm).unwrap();
        let r = |s: u64| Rng::new(s);
        prop_assert_eq!(
            factorvae_score(&t, &cfg.factorvae, &mut r(seed)).unwrap(),
            factorvae_score(&p, &cfg.factorvae, &mut r(seed)).unwrap()
        );
        prop_assert_eq!(mig(&t, &cfg.mig).unwrap(), mig(&p, &cfg.mig).unwrap());
        prop_assert_eq!(sap(&t, &SapParams::default(), &mut r(seed)).unwrap(), sap(&p, &SapParams::default(), &mut r(seed)).unwrap());
        let (a, b) = (dci(&t, &cfg.dci, &mut r(seed)).unwrap(), dci(&p, &cfg.dci, &mut r(seed)).unwrap());
        prop_assert!((a.disentanglement - b.disentanglement).abs() < 1e-6, "{a:?} vs {b:?}");
        prop_assert!((a.completeness - b.completeness).abs() < 1e-6, "{a:?} vs {b:?}");
        prop_assert!((a.informativeness - b.informativeness).abs() < 1e-6, "{a:?} vs {b:?}");
        let (i, j) = (
            featvae::metrics::irs(&t, &cfg.irs, &cfg.mig).unwrap(),
            featvae::metrics::irs(&p, &cfg.irs, &cfg.mig).unwrap(),
        );
        prop_assert!((i - j).abs() < 1e-12, "{i} vs {j}");
    }

    #[test]
    fn positive_scaling_keeps_factorvae_and_mig(t in table_strategy(), seed in any::<u64>(), k in -4i32..5) {
        let cfg = small_config();
        let s = t.scale_codes(2f64.powi(k)).unwrap();
        prop_assert_eq!(
            factorvae_score(&t, &cfg.factorvae, &mut Rng::new(seed)).unwrap(),
            factorvae_score(&s, &cfg.factorvae, &mut Rng::new(seed)).unwrap()
        );
        prop_assert_eq!(mig(&t, &cfg.mig).unwrap(), mig(&s, &cfg.mig).unwrap());
    }
}
