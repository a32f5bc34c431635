mod common;

use common::{mann_whitney, rng};
use proptest::prelude::*;
use rand::Rng;
use rasnet::metrics::{confusion, mean_sd, roc_auc, ConfusionCounts};
use rasnet::Error;

#[test]
fn rates_from_hand_built_tables() {
    let c = ConfusionCounts {
        tp: 37,
        tn: 40,
        fp: 3,
        fn_: 0,
    };
    assert_eq!(c.accuracy().unwrap(), 77.0 / 80.0);
    assert_eq!(c.sensitivity().unwrap(), 1.0);
    assert_eq!(c.specificity().unwrap(), 40.0 / 43.0);

    let c = ConfusionCounts {
        tp: 0,
        tn: 5,
        fp: 0,
        fn_: 0,
    };
    assert!(matches!(c.sensitivity(), Err(Error::UndefinedMetric(_))));
    assert!(matches!(
        ConfusionCounts::default().accuracy(),
        Err(Error::UndefinedMetric(_))
    ));
}

#[test]
fn threshold_is_strict() {
    let c = confusion(&[0.5, 0.51, 0.2, 0.9], &[1, 1, 0, 0], 0.5).unwrap();
    assert_eq!(
        c,
        ConfusionCounts {
            tp: 1,
            tn: 1,
            fp: 1,
            fn_: 1
        }
    );
}

#[test]
fn roc_endpoints_and_known_areas() {
    let perfect = roc_auc(&[0.9, 0.8, 0.2, 0.1], &[1, 1, 0, 0]).unwrap();
    assert_eq!(perfect.auc, 1.0);
    let first = perfect.points[0];
    let last = *perfect.points.last().unwrap();
    assert_eq!((first.fpr, first.tpr), (0.0, 0.0));
    assert_eq!((last.fpr, last.tpr), (1.0, 1.0));
    assert_eq!(roc_auc(&[0.1, 0.2, 0.8, 0.9], &[1, 1, 0, 0]).unwrap().auc, 0.0);
    assert_eq!(roc_auc(&[0.5; 6], &[1, 0, 1, 0, 1, 0]).unwrap().auc, 0.5);
    assert!(matches!(roc_auc(&[0.3, 0.4], &[1, 1]), Err(Error::UndefinedMetric(_))));
    assert!(matches!(roc_auc(&[0.3], &[1, 0]), Err(Error::Contract(_))));
}

#[test]
fn auc_matches_pairwise_count_on_many_sets() {
    let mut r = rng(7);
    for _ in 0..200 {
        let n = r.random_range(2..60);
        let mut labels: Vec<u8> = (0..n).map(|_| r.random_range(0..2)).collect();
        labels[0] = 1;
        labels[1] = 0;
        // coarse grid forces ties
        let scores: Vec<f64> = (0..n).map(|_| r.random_range(0..8) as f64 / 8.0).collect();
        let auc = roc_auc(&scores, &labels).unwrap().auc;
        assert!((auc - mann_whitney(&scores, &labels)).abs() <= 1e-12);
    }
}

#[test]
fn mean_and_sample_sd() {
    let (m, s) = mean_sd(&[1.0, 2.0, 3.0, 4.0]);
    assert_eq!(m, 2.5);
    assert!((s - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
    assert_eq!(mean_sd(&[0.7]), (0.7, 0.0));
}

proptest! {
    #[test]
    fn auc_matches_pairwise_count(
        data in proptest::collection::vec((0.0f64..1.0, 0u8..2), 2..80),
    ) {
        let (scores, labels): (Vec<f64>, Vec<u8>) = data.into_iter().unzip();
        prop_assume!(labels.contains(&0) && labels.contains(&1));
        let curve = roc_auc(&scores, &labels).unwrap();
        prop_assert!((curve.auc - mann_whitney(&scores, &labels)).abs() <= 1e-12);
        for w in curve.points.windows(2) {
            prop_assert!(w[0].fpr <= w[1].fpr && w[0].tpr <= w[1].tpr);
        }
    }

    #[test]
    fn counts_partition_the_set(data in proptest::collection::vec((0.0f64..1.0, 0u8..2), 1..60), t in 0.0f64..1.0) {
        let (p, y): (Vec<f64>, Vec<u8>) = data.into_iter().unzip();
        let c = confusion(&p, &y, t).unwrap();
        prop_assert_eq!(c.total(), p.len());
        prop_assert_eq!(c.tp + c.fn_, y.iter().filter(|&&l| l == 1).count());
    }
}
