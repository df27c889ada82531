use proptest::prelude::*;
use rand::Rng as _;
use readmit::classifiers::{self, MaxFeatures, ModelKind, ModelSpec};
use readmit::features::{FeatureMatrix, FeatureSchema};
use readmit::seed;

fn dataset(s: u64, n: usize, width: usize) -> FeatureMatrix {
    let mut rng = seed::rng(s);
    let schema = FeatureSchema::from_columns((0..width).map(|c| format!("x{c}")).collect()).unwrap();
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for i in 0..n {
        let r: Vec<f64> = (0..width).map(|_| (rng.random_range(-2.0..2.0_f64) * 4.0).round() / 4.0).collect();
        let z = r[0] - 0.5 * r[width - 1] + rng.random_range(-1.0..1.0);
        labels.push(if i < 2 { i == 0 } else { z > 0.0 });
        rows.push(r);
    }
    FeatureMatrix::new(schema, rows, labels).unwrap()
}

fn map_features(m: &FeatureMatrix, f: impl Fn(f64) -> f64) -> FeatureMatrix {
    let mut out = m.clone();
    out.rows.iter_mut().flatten().for_each(|x| *x = f(*x));
    out
}

fn tree_spec(kind: ModelKind, s: u64) -> ModelSpec {
    let mut spec = ModelSpec::new(kind).with_seed(s);
    spec.hyper.n_trees = 15;
    spec.hyper.max_depth = Some(6);
    spec
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn trees_ignore_increasing_transforms(s in any::<u64>(), kind in prop_oneof![Just(ModelKind::DecisionTree), Just(ModelKind::RandomForest)]) {
        let m = dataset(s, 60, 4);
        let f = |x: f64| (1.3 * x).exp() + 2.0;
        let t = map_features(&m, f);
        let held = dataset(s ^ 1, 40, 4);
        let held_t = map_features(&held, f);
        let spec = tree_spec(kind, s);
        let a = classifiers::train(&spec, &m, 1).unwrap();
        let b = classifiers::train(&spec, &t, 1).unwrap();
        prop_assert_eq!(a.predict_proba(&m.rows).unwrap(), b.predict_proba(&t.rows).unwrap());
        prop_assert_eq!(a.predict_proba(&held.rows).unwrap(), b.predict_proba(&held_t.rows).unwrap());
    }

    #[test]
    fn linear_models_ignore_feature_rescaling(s in any::<u64>(), kind in prop_oneof![Just(ModelKind::LogisticRegression), Just(ModelKind::LinearSvc), Just(ModelKind::SgdLinear)]) {
        let m = dataset(s, 60, 3);
        let t = map_features(&m, |x| 250.0 * x - 40.0);
        let spec = ModelSpec::new(kind).with_seed(s);
        let a = classifiers::train(&spec, &m, 1).unwrap().predict_proba(&m.rows).unwrap();
        let b = classifiers::train(&spec, &t, 1).unwrap().predict_proba(&t.rows).unwrap();
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() < 1e-8, "{} vs {}", x, y);
        }
    }

    #[test]
    fn single_unbagged_forest_is_a_tree(s in any::<u64>(), depth in 1usize..8, leaf in 1usize..4) {
        let m = dataset(s, 50, 5);
        let mut dt = ModelSpec::new(ModelKind::DecisionTree).with_seed(s);
        dt.hyper.max_depth = Some(depth);
        dt.hyper.min_samples_leaf = leaf;
        let mut rf = ModelSpec::new(ModelKind::RandomForest).with_seed(s);
        rf.hyper = dt.hyper.clone();
        rf.hyper.n_trees = 1;
        rf.hyper.bootstrap = false;
        rf.hyper.max_features = MaxFeatures::All;
        let a = classifiers::train(&dt, &m, 1).unwrap().predict_proba(&m.rows).unwrap();
        let b = classifiers::train(&rf, &m, 1).unwrap().predict_proba(&m.rows).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn probabilities_in_unit_interval(s in any::<u64>(), k in 0usize..6) {
        let m = dataset(s, 40, 3);
        let kind = ModelKind::ALL[k];
        let mut spec = ModelSpec::new(kind).with_seed(s);
        spec.hyper.n_trees = 10;
        spec.hyper.epochs = spec.hyper.epochs.min(30);
        let p = classifiers::train(&spec, &m, 1).unwrap().predict_proba(&m.rows).unwrap();
        prop_assert!(p.iter().all(|x| (0.0..=1.0).contains(x)));
    }
}

#[test]
fn forest_predictions_vary_less_than_single_trees_across_seeds() {
    let m = dataset(7, 200, 6);
    let probe = dataset(8, 50, 6);
    let spread = |n_trees: usize| {
        let preds: Vec<Vec<f64>> = (0..12u64)
            .map(|s| {
                let mut spec = ModelSpec::new(ModelKind::RandomForest).with_seed(s);
                spec.hyper.n_trees = n_trees;
                classifiers::train(&spec, &m, 1).unwrap().predict_proba(&probe.rows).unwrap()
            })
            .collect();
        let mut total = 0.0;
        for j in 0..probe.n_rows() {
            let col: Vec<f64> = preds.iter().map(|p| p[j]).collect();
            let mu = col.iter().sum::<f64>() / col.len() as f64;
            total += col.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / col.len() as f64;
        }
        total / probe.n_rows() as f64
    };
    let one = spread(1);
    let many = spread(60);
    assert!(many < 0.2 * one, "forest variance {many} vs single tree {one}");
}

#[test]
fn workers_do_not_change_forests() {
    let m = dataset(3, 120, 5);
    let spec = tree_spec(ModelKind::RandomForest, 11);
    let a = classifiers::train(&spec, &m, 1).unwrap();
    let b = classifiers::train(&spec, &m, 4).unwrap();
    assert_eq!(a.to_json(), b.to_json());
}
