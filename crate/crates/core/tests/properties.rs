use ecet::evidence::oracle::{powerset_oracle, GeneralBba};
use ecet::evidence::{combine, combine_many, MassVector, Rule};
use ecet::experiment::{self, blob_config};
use ecet::metrics::classification_report;
use ecet::{seeded_rng, Execution};
use proptest::prelude::*;
use rand::Rng;

fn mass(n: usize) -> impl Strategy<Value = MassVector> {
    prop::collection::vec(0.001f64..1.0, n + 1).prop_map(|raw| {
        let sum: f64 = raw.iter().sum();
        MassVector::from_slice(&raw.iter().map(|x| x / sum).collect::<Vec<_>>()).unwrap()
    })
}

fn frame_pair() -> impl Strategy<Value = (MassVector, MassVector)> {
    (2usize..=6).prop_flat_map(|n| (mass(n), mass(n)))
}

fn frame_triple() -> impl Strategy<Value = (MassVector, MassVector, MassVector)> {
    (2usize..=6).prop_flat_map(|n| (mass(n), mass(n), mass(n)))
}

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
}

proptest! {
    #[test]
    fn both_rules_match_powerset((a, b) in frame_pair()) {
        for rule in [Rule::Dempster, Rule::Yager] {
            let fast = combine(&a, &b, rule).unwrap();
            let (slow, conflict) =
                powerset_oracle(&GeneralBba::from_mass_vector(&a), &GeneralBba::from_mass_vector(&b), rule).unwrap();
            prop_assert!(close(&fast.fused.to_vec(), &slow.to_mass_vector().unwrap().to_vec(), 1e-12));
            prop_assert!((fast.conflict - conflict).abs() <= 1e-12);
        }
    }

    #[test]
    fn dempster_fold_is_order_free((a, b, c) in frame_triple()) {
        let abc = combine_many(&[a.clone(), b.clone(), c.clone()], Rule::Dempster).unwrap().fused;
        let cab = combine_many(&[c, a, b], Rule::Dempster).unwrap().fused;
        prop_assert!(close(&abc.to_vec(), &cab.to_vec(), 1e-9));
    }

    #[test]
    fn yager_keeps_unit_mass((a, b, c) in frame_triple()) {
        let fused = combine_many(&[a, b, c], Rule::Yager).unwrap().fused;
        prop_assert!((fused.total() - 1.0).abs() <= 1e-9);
        prop_assert!(fused.singletons().iter().all(|&s| s >= 0.0));
    }
}

// Counting oracle for the report: tallies tp/fp/fn per label by scanning.
fn naive(truth: &[i64], pred: &[i64], labels: &[i64]) -> (Vec<(f64, f64, f64)>, f64) {
    let mut rows = Vec::new();
    let mut f1_sum = 0.0;
    let mut present = 0;
    for &l in labels {
        let mut tp = 0.0;
        let mut fp = 0.0;
        let mut fneg = 0.0;
        for i in 0..truth.len() {
            match (truth[i] == l, pred[i] == l) {
                (true, true) => tp += 1.0,
                (false, true) => fp += 1.0,
                (true, false) => fneg += 1.0,
                _ => {}
            }
        }
        let p = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
        let r = if tp + fneg > 0.0 { tp / (tp + fneg) } else { 0.0 };
        let f = if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
        if tp + fneg > 0.0 {
            f1_sum += f;
            present += 1;
        }
        rows.push((p, r, f));
    }
    (rows, if present > 0 { f1_sum / present as f64 } else { 0.0 })
}

#[test]
fn report_matches_counting_oracle() {
    let mut rng = seeded_rng(17, 0);
    for _ in 0..100 {
        let n_classes = rng.random_range(2..=5);
        let len = rng.random_range(1..=60);
        let mut draw = || -> i64 {
            if rng.random_bool(0.1) {
                -1
            } else {
                rng.random_range(0..n_classes as i64)
            }
        };
        let truth: Vec<i64> = (0..len).map(|_| draw()).collect();
        let pred: Vec<i64> = (0..len).map(|_| draw()).collect();
        let report = classification_report(&truth, &pred, n_classes).unwrap();
        let (rows, macro_f1) = naive(&truth, &pred, &report.labels);
        for (m, (p, r, f)) in report.per_class.iter().zip(rows) {
            assert!((m.precision - p).abs() < 1e-12 && (m.recall - r).abs() < 1e-12 && (m.f1 - f).abs() < 1e-12);
        }
        assert!((report.macro_f1 - macro_f1).abs() < 1e-12);
    }
}

#[test]
fn test_split_untouched_by_calibration() {
    let mut cfg = blob_config(3, 60, 40);
    cfg.uq.enabled = false;
    let prep = experiment::prepare(&cfg, 4, Execution::Sequential).unwrap();
    let before = prep.test.checksum();
    let (_, model) = experiment::build_ensemble(&prep, &cfg.selection_config(), Execution::Sequential).unwrap();
    assert_eq!(prep.test.checksum(), before);
    assert!(model.thresholds.is_some());
    let out = experiment::run(&cfg, 4, Execution::Sequential).unwrap();
    assert_eq!(out.report.data.test_checksum, before);
}
