mod common;

use std::collections::HashMap;

use buypred::features::{extract_instances, Feature, FeatureConfig, FeatureVector, Instance};
use buypred::ingest::Label;
use buypred::likelihood::{fit, merge, step1_filter, LikelihoodModel, Mode, ModelError};
use common::{arb_events, random_events, sessions_of};
use num::{BigInt, BigRational, ToPrimitive, Zero};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn instances_of(seed: u64, n_sessions: usize, cfg: &FeatureConfig) -> Vec<Instance> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (clicks, buys) = random_events(&mut rng, n_sessions, 12);
    sessions_of(&clicks, &buys)
        .iter()
        .flat_map(|s| extract_instances(s, cfg))
        .collect()
}

fn rat(n: u64) -> BigRational {
    BigRational::from_integer(BigInt::from(n))
}

/// Counts by the binned vector itself, independent of key packing.
fn recount(instances: &[Instance], cfg: &FeatureConfig) -> HashMap<Vec<u32>, (u64, u64)> {
    let mut out: HashMap<Vec<u32>, (u64, u64)> = HashMap::new();
    for i in instances {
        let tuple: Vec<u32> = cfg.enabled().iter().map(|&f| i.features.get(f)).collect();
        let e = out.entry(tuple).or_default();
        match i.label {
            Label::Buy => e.0 += 1,
            Label::NonBuy => e.1 += 1,
        }
    }
    out
}

fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    if a == b {
        return true;
    }
    ((a - b) / b.abs().max(f64::MIN_POSITIVE)).abs() <= tol
}

/// The smoothed joint ratio in exact arithmetic.
fn exact_ratio(b: u64, n: u64, tb: u64, tn: u64, alpha: u64, k: u64) -> BigRational {
    let a = rat(alpha);
    (rat(b) + &a) * (rat(tn) + &a * rat(k)) / ((rat(n) + &a) * (rat(tb) + &a * rat(k)))
}

#[test]
fn counts_and_ratios_match_oracles() {
    let cfg = FeatureConfig::default();
    for seed in 0..30 {
        let inst = instances_of(seed, 150, &cfg);
        let oracle = recount(&inst, &cfg);
        for alpha in [0.0, 1.0, 2.0] {
            let m = fit(&inst, &cfg, Mode::Joint, alpha).unwrap();
            let tb = inst.iter().filter(|i| i.label == Label::Buy).count() as u64;
            assert_eq!(m.total_buy(), tb);
            assert_eq!(m.total_nonbuy(), inst.len() as u64 - tb);
            assert_eq!(m.joint_counts().len(), oracle.len());
            let k = oracle.len() as u64 + 1;
            for i in &inst {
                let tuple: Vec<u32> = cfg.enabled().iter().map(|&f| i.features.get(f)).collect();
                let (b, n) = oracle[&tuple];
                let c = m.counts(cfg.key(&i.features));
                assert_eq!((c.buy, c.nonbuy), (b, n));
                let r = m.likelihood_ratio(&i.features).value;
                if alpha == 0.0 {
                    match (b, n) {
                        (_, 0) => assert_eq!(r, f64::INFINITY),
                        (0, _) => assert_eq!(r, 0.0),
                        _ => {
                            let e = rat(b) * rat(m.total_nonbuy()) / (rat(n) * rat(tb));
                            assert!(rel_close(r, e.to_f64().unwrap(), 1e-12));
                        }
                    }
                } else {
                    let e = exact_ratio(b, n, tb, m.total_nonbuy(), alpha as u64, k);
                    assert!(rel_close(r, e.to_f64().unwrap(), 1e-12), "{r} vs {e}");
                }
            }
        }
    }
}

#[test]
fn six_instance_fixture_by_hand() {
    // Buy: A, A, B. NonBuy: A, C, C. K = 3 keys + 1 = 4, alpha = 1.
    // r(A) = (2+1)(3+4) / ((1+1)(3+4)) = 3/2
    // r(B) = (1+1)/(0+1) = 2, r(C) = 1/3, unseen = 1
    let cfg = FeatureConfig::new([Feature::HourOfDay], 10, 30).unwrap();
    let fv = |h: u8| FeatureVector {
        hour_of_day: h,
        day_of_month: 1,
        day_of_week: 0,
        month_of_year: 1,
        item_click_count: 1,
        duration_bin: 0,
    };
    let inst = |h, label| Instance {
        session_id: 1,
        item_id: 1,
        features: fv(h),
        clicks: 1,
        label,
    };
    let data = vec![
        inst(1, Label::Buy),
        inst(1, Label::Buy),
        inst(2, Label::Buy),
        inst(1, Label::NonBuy),
        inst(3, Label::NonBuy),
        inst(3, Label::NonBuy),
    ];
    let m = fit(&data, &cfg, Mode::Joint, 1.0).unwrap();
    let r = |h| m.likelihood_ratio(&fv(h)).value;
    assert!((r(1) - 1.5).abs() < 1e-15);
    assert!((r(2) - 2.0).abs() < 1e-15);
    assert!((r(3) - 1.0 / 3.0).abs() < 1e-15);
    assert_eq!(r(9), 1.0);
    assert!(m.likelihood_ratio(&fv(9)).unseen);
}

#[test]
fn smoothed_probabilities_sum_to_one_with_unseen_key() {
    let cfg = FeatureConfig::default();
    for seed in 0..10 {
        let inst = instances_of(seed, 100, &cfg);
        let m = fit(&inst, &cfg, Mode::Joint, 1.0).unwrap();
        let k = m.joint_counts().len() as u64 + 1;
        for (total, pick) in [
            (m.total_buy(), true),
            (m.total_nonbuy(), false),
        ] {
            let den = rat(total) + rat(k);
            let mut sum = BigRational::zero();
            let mut float_sum = 0.0;
            for c in m.joint_counts().values() {
                let x = if pick { c.buy } else { c.nonbuy };
                sum += (rat(x) + rat(1)) / &den;
                float_sum += (x as f64 + 1.0) / (total as f64 + k as f64);
            }
            assert!(float_sum <= 1.0 + 1e-12);
            sum += rat(1) / &den;
            assert_eq!(sum, rat(1));
        }
    }
}

#[test]
fn independent_mode_is_a_product_of_marginals() {
    let cfg = FeatureConfig::default();
    for seed in 0..10 {
        let inst = instances_of(seed, 120, &cfg);
        let m = fit(&inst, &cfg, Mode::Independent, 1.0).unwrap();
        for &f in cfg.enabled() {
            let table = m.marginal_counts(f).unwrap();
            assert_eq!(table.values().map(|c| c.buy).sum::<u64>(), m.total_buy());
            assert_eq!(table.values().map(|c| c.nonbuy).sum::<u64>(), m.total_nonbuy());
        }
        for i in inst.iter().take(40) {
            let mut e = rat(1);
            for &f in cfg.enabled() {
                let table = m.marginal_counts(f).unwrap();
                let c = table[&i.features.get(f)];
                e *= exact_ratio(
                    c.buy,
                    c.nonbuy,
                    m.total_buy(),
                    m.total_nonbuy(),
                    1,
                    table.len() as u64 + 1,
                );
            }
            let r = m.likelihood_ratio(&i.features).value;
            assert!(rel_close(r, e.to_f64().unwrap(), 1e-12));
        }
    }
}

#[test]
fn fit_needs_both_classes() {
    let cfg = FeatureConfig::default();
    let inst = instances_of(1, 50, &cfg);
    let buys: Vec<Instance> = inst.iter().filter(|i| i.label == Label::Buy).copied().collect();
    let non: Vec<Instance> = inst.iter().filter(|i| i.label == Label::NonBuy).copied().collect();
    assert_eq!(
        fit(&buys, &cfg, Mode::Joint, 1.0).unwrap_err(),
        ModelError::MissingClass(Label::NonBuy)
    );
    assert_eq!(
        fit(&non, &cfg, Mode::Joint, 1.0).unwrap_err(),
        ModelError::MissingClass(Label::Buy)
    );
    assert!(fit(&[], &cfg, Mode::Joint, 1.0).is_err());
}

#[test]
fn merge_rejects_mismatched_models() {
    let cfg = FeatureConfig::default();
    let a = LikelihoodModel::empty(cfg.clone(), Mode::Joint, 1.0).unwrap();
    let b = LikelihoodModel::empty(cfg.clone(), Mode::Joint, 0.5).unwrap();
    let c = LikelihoodModel::empty(cfg, Mode::Independent, 1.0).unwrap();
    let d = LikelihoodModel::empty(FeatureConfig::new([Feature::HourOfDay], 10, 30).unwrap(), Mode::Joint, 1.0).unwrap();
    for other in [&b, &c, &d] {
        assert!(matches!(merge([&a, other]), Err(ModelError::ConfigMismatch(_))));
    }
    assert_eq!(merge(Vec::<&LikelihoodModel>::new()).unwrap_err(), ModelError::NothingToMerge);
}

fn arb_instances() -> impl Strategy<Value = Vec<Instance>> {
    arb_events(40).prop_map(|(clicks, buys)| {
        let cfg = FeatureConfig::default();
        sessions_of(&clicks, &buys)
            .iter()
            .flat_map(|s| extract_instances(s, &cfg))
            .collect()
    })
}

fn partial(inst: &[Instance], mode: Mode, alpha: f64) -> LikelihoodModel {
    let mut m = LikelihoodModel::empty(FeatureConfig::default(), mode, alpha).unwrap();
    for i in inst {
        m.observe(i);
    }
    m
}

proptest! {
    #[test]
    fn merge_of_halves_is_whole_fit(
        inst in arb_instances(),
        cut in any::<prop::sample::Index>(),
        independent in any::<bool>(),
    ) {
        let mode = if independent { Mode::Independent } else { Mode::Joint };
        let at = cut.index(inst.len() + 1);
        let (a, b) = inst.split_at(at);
        let (ma, mb) = (partial(a, mode, 1.0), partial(b, mode, 1.0));
        let whole = partial(&inst, mode, 1.0);
        prop_assert_eq!(&merge([&ma, &mb]).unwrap(), &whole);
        prop_assert_eq!(&merge([&mb, &ma]).unwrap(), &whole);
        let empty = partial(&[], mode, 1.0);
        prop_assert_eq!(&merge([&whole, &empty]).unwrap(), &whole);
    }

    #[test]
    fn fit_ignores_instance_order(inst in arb_instances(), seed in any::<u64>()) {
        let mut shuffled = inst.clone();
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert_eq!(partial(&shuffled, Mode::Joint, 1.0), partial(&inst, Mode::Joint, 1.0));
    }

    #[test]
    fn raising_t1_never_selects_more(
        inst in arb_instances(),
        t1 in 0.0f64..4.0,
        bump in 0.0f64..4.0,
        alpha in prop::sample::select(vec![0.0, 0.5, 1.0]),
    ) {
        let m = partial(&inst, Mode::Joint, alpha);
        let low = step1_filter(&m, &inst, t1);
        let high = step1_filter(&m, &inst, t1 + bump);
        // step1 keeps input order, so subset check is a subsequence walk
        let mut it = low.iter();
        for h in &high {
            prop_assert!(it.any(|l| l == h));
        }
        for i in &low {
            prop_assert!(m.likelihood_ratio(&i.features).value > t1);
        }
    }

    #[test]
    fn label_flip_inverts_finite_ratios(inst in arb_instances()) {
        let flipped: Vec<Instance> = inst
            .iter()
            .map(|i| Instance {
                label: match i.label {
                    Label::Buy => Label::NonBuy,
                    Label::NonBuy => Label::Buy,
                },
                ..*i
            })
            .collect();
        let m = partial(&inst, Mode::Joint, 0.0);
        let f = partial(&flipped, Mode::Joint, 0.0);
        prop_assume!(m.total_buy() > 0 && m.total_nonbuy() > 0);
        for i in &inst {
            let r = m.likelihood_ratio(&i.features).value;
            let rf = f.likelihood_ratio(&i.features).value;
            if r.is_finite() && r > 0.0 {
                prop_assert!(rel_close(rf, 1.0 / r, 1e-12));
            } else if r == 0.0 {
                prop_assert_eq!(rf, f64::INFINITY);
            } else {
                prop_assert_eq!(rf, 0.0);
            }
        }
    }
}
