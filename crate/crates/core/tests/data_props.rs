use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;
use readmit::eval::{split, stratified_folds, Grouping, SplitConfig};
use readmit::features::{FeatureMatrix, FeatureSchema, Imputer};

fn matrix(cells: Vec<Vec<Option<f64>>>, labels: Vec<bool>) -> FeatureMatrix {
    let width = cells[0].len();
    let schema = FeatureSchema::from_columns((0..width).map(|c| format!("c{c}")).collect()).unwrap();
    let rows = cells
        .into_iter()
        .map(|r| r.into_iter().map(|x| x.unwrap_or(f64::NAN)).collect())
        .collect();
    FeatureMatrix::new(schema, rows, labels).unwrap()
}

fn matrix_strategy() -> impl Strategy<Value = FeatureMatrix> {
    (6usize..40, 1usize..5).prop_flat_map(|(n, w)| {
        (
            prop::collection::vec(prop::collection::vec(prop::option::weighted(0.8, -1e3f64..1e3), w), n),
            prop::collection::vec(any::<bool>(), n),
        )
            .prop_map(|(cells, mut labels)| {
                labels[0] = true;
                labels[1] = false;
                labels[2] = true;
                labels[3] = false;
                matrix(cells, labels)
            })
    })
}

proptest! {
    #[test]
    fn imputation_never_sees_test_rows(m in matrix_strategy(), junk in -1e6f64..1e6) {
        let train: Vec<usize> = (0..m.n_rows()).filter(|i| i % 3 != 0).collect();
        let imp = Imputer::fit(&m, &train);
        let mut poisoned = m.clone();
        for i in (0..m.n_rows()).filter(|i| i % 3 == 0) {
            poisoned.rows[i].iter_mut().for_each(|x| *x = junk);
        }
        prop_assert_eq!(&Imputer::fit(&poisoned, &train), &imp);
        let filled = imp.apply(&m).unwrap();
        prop_assert!(filled.is_finite());
        for (r, f) in m.rows.iter().zip(&filled.rows) {
            for (c, (x, y)) in r.iter().zip(f).enumerate() {
                prop_assert_eq!(*y, if x.is_finite() { *x } else { imp.means[c] });
            }
        }
    }

    #[test]
    fn csv_render_is_a_fixed_point(m in matrix_strategy()) {
        let once = FeatureMatrix::from_csv(m.csv_string().as_bytes()).unwrap();
        let twice = FeatureMatrix::from_csv(once.csv_string().as_bytes()).unwrap();
        prop_assert_eq!(once.csv_string(), twice.csv_string());
        prop_assert_eq!(&once.labels, &m.labels);
    }

    #[test]
    fn splits_partition_rows(m in matrix_strategy(), s in any::<u64>(), stratified in any::<bool>(), grouped in any::<bool>()) {
        let mut m = m;
        m.groups = (0..m.n_rows()).map(|i| format!("p{}", i / 3)).collect();
        let cfg = SplitConfig {
            test_fraction: 0.25,
            stratified,
            grouping: if grouped { Grouping::PatientGrouped } else { Grouping::AdmissionLevel },
            seed: s,
        };
        let Ok((train, test)) = split(&m, &cfg) else { return Ok(()) };
        let mut all: Vec<usize> = train.iter().chain(&test).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..m.n_rows()).collect::<Vec<_>>());
        prop_assert!(!train.is_empty() && !test.is_empty());
        if grouped {
            let side: BTreeMap<&str, bool> = test.iter().map(|&i| (m.groups[i].as_str(), true)).collect();
            prop_assert!(train.iter().all(|&i| !side.contains_key(m.groups[i].as_str())));
        }
        if stratified && !grouped {
            for class in [true, false] {
                prop_assert!(test.iter().any(|&i| m.labels[i] == class));
                prop_assert!(train.iter().any(|&i| m.labels[i] == class));
            }
        }
    }

    #[test]
    fn folds_balance_classes(labels in prop::collection::vec(any::<bool>(), 9..60), k in 2usize..5, s in any::<u64>()) {
        let Ok(folds) = stratified_folds(&labels, k, s) else { return Ok(()) };
        prop_assert_eq!(folds.len(), labels.len());
        prop_assert_eq!(folds.iter().copied().collect::<BTreeSet<_>>().len(), k);
        for class in [true, false] {
            let counts: Vec<usize> = (0..k)
                .map(|f| folds.iter().zip(&labels).filter(|(&g, &y)| g == f && y == class).count())
                .collect();
            prop_assert!(counts.iter().max().unwrap() - counts.iter().min().unwrap() <= 1);
        }
    }
}
