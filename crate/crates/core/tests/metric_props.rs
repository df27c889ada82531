use proptest::prelude::*;
use readmit::eval::{auc, f1_score, metrics, Confusion};

fn brute_auc(y: &[bool], s: &[f64]) -> f64 {
    let mut num = 0.0;
    let mut pairs = 0.0;
    for (i, &yi) in y.iter().enumerate() {
        for (j, &yj) in y.iter().enumerate() {
            if yi && !yj {
                pairs += 1.0;
                num += if s[i] > s[j] {
                    1.0
                } else if s[i] == s[j] {
                    0.5
                } else {
                    0.0
                };
            }
        }
    }
    num / pairs
}

/// Labels with both classes and scores drawn from a small grid to force ties.
fn labeled_scores() -> impl Strategy<Value = (Vec<bool>, Vec<f64>)> {
    (2usize..50).prop_flat_map(|n| {
        (
            prop::collection::vec(any::<bool>(), n).prop_filter("both classes", |y| {
                y.iter().any(|&b| b) && y.iter().any(|&b| !b)
            }),
            prop::collection::vec((0u8..8).prop_map(|k| k as f64 / 7.0), n),
        )
    })
}

proptest! {
    #[test]
    fn auc_matches_all_pairs((y, s) in labeled_scores()) {
        prop_assert!((auc(&y, &s).unwrap() - brute_auc(&y, &s)).abs() < 1e-12);
    }

    #[test]
    fn auc_invariant_to_increasing_transform((y, s) in labeled_scores()) {
        let t: Vec<f64> = s.iter().map(|x| (3.0 * x).exp() - 7.0).collect();
        prop_assert_eq!(auc(&y, &s).unwrap(), auc(&y, &t).unwrap());
    }

    #[test]
    fn negated_scores_complement((y, s) in labeled_scores()) {
        let neg: Vec<f64> = s.iter().map(|x| -x).collect();
        prop_assert!((auc(&y, &s).unwrap() + auc(&y, &neg).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn confusion_agrees_with_direct_counts((y, s) in labeled_scores(), thr in 0.0f64..1.0) {
        let pred: Vec<bool> = s.iter().map(|&x| x >= thr).collect();
        let c = Confusion::tally(&y, &pred);
        prop_assert_eq!(c.tp + c.fp + c.tn + c.r#fn, y.len());
        let tp = y.iter().zip(&pred).filter(|(a, b)| **a && **b).count();
        let fp = y.iter().zip(&pred).filter(|(a, b)| !**a && **b).count();
        let fne = y.iter().zip(&pred).filter(|(a, b)| **a && !**b).count();
        let f1 = if tp == 0 { 0.0 } else { 2.0 * tp as f64 / (2 * tp + fp + fne) as f64 };
        prop_assert_eq!(f1_score(&y, &pred), f1);
        let m = metrics(&y, &s, thr).unwrap();
        prop_assert_eq!(m.f1, f1);
        prop_assert_eq!(m.accuracy, y.iter().zip(&pred).filter(|(a, b)| a == b).count() as f64 / y.len() as f64);
    }
}
