//! Network, training and prediction properties.

mod common;

use common::{linear_rows, rule_rows, synthetic_store};
use hydrodispatch::datastore::StaticUnit;
use hydrodispatch::ml::*;
use proptest::prelude::*;

const DEFAULT_SIZES: [usize; 6] = [3, 32, 32, 16, 8, 1];

fn quick() -> TrainConfig {
    TrainConfig { epochs: 8, ..TrainConfig::default() }
}

fn three_unit_spec() -> CategorySpec {
    CategorySpec {
        plant: "P".into(),
        categories: vec![Category {
            label: "C1".into(),
            nominal_pmax_mw: 1500.0,
            unit_ids: vec!["a".into(), "b".into(), "c".into()],
        }],
    }
}

#[test]
fn gradients_match_finite_differences_for_seeds_one_to_five() {
    for seed in 1..=5u64 {
        let net = Mlp::new(&DEFAULT_SIZES, Head::Logistic, seed).unwrap();
        let dev = grad_check(&net, &[0.4, -1.2, 0.9], &[1.0]);
        assert!(dev < 1e-4, "seed {seed}: {dev:e}");
        let mut sizes = DEFAULT_SIZES;
        sizes[5] = 2;
        let reg = Mlp::new(&sizes, Head::Identity, seed).unwrap();
        let dev = grad_check(&reg, &[-0.3, 0.2, 1.7], &[0.5, -0.25]);
        assert!(dev < 1e-4, "seed {seed} regressor: {dev:e}");
    }
}

#[test]
fn gradients_still_match_after_training() {
    let rows = rule_rows(3, 400);
    let (fit, norm) = train_classifier(&rows, 0, &TrainConfig { epochs: 20, ..TrainConfig::default() }).unwrap();
    let x = norm.apply(&rows[10].inputs);
    assert!(grad_check(&fit.net, &x, &[1.0]) < 1e-4);
}

#[test]
fn training_is_bit_deterministic() {
    let rows = rule_rows(11, 300);
    let (a, _) = train_classifier(&rows, 0, &quick()).unwrap();
    let (b, _) = train_classifier(&rows, 0, &quick()).unwrap();
    assert_eq!(a, b);
    assert_eq!(serde_json::to_string(&a.net).unwrap(), serde_json::to_string(&b.net).unwrap());
    let (c, _) = train_classifier(&rows, 0, &TrainConfig { seed: 43, ..quick() }).unwrap();
    assert_ne!(a.net, c.net);
}

#[test]
fn network_json_round_trips_bit_exactly() {
    let rows = linear_rows(5, 200);
    let (fit, _) = train_regressor(&rows, 0, &quick()).unwrap();
    let text = serde_json::to_string(&fit.net).unwrap();
    let back: Mlp = serde_json::from_str(&text).unwrap();
    let bits = |m: &Mlp| m.parameters().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&back), bits(&fit.net));
}

#[test]
fn model_file_round_trip_and_version_gate() {
    let rows = linear_rows(6, 300);
    let model = train_plant(&three_unit_spec(), &rows, &quick()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.json");
    model.save(&path).unwrap();
    assert_eq!(TrainedPlantModel::load(&path).unwrap(), model);
    let bumped = model.to_json().unwrap().replacen("\"version\": 1", "\"version\": 2", 1);
    assert!(matches!(TrainedPlantModel::from_json(&bumped), Err(hydrodispatch::Error::Incompatible(_))));
}

#[test]
fn power_of_two_input_scaling_gives_identical_predictions() {
    let rows = rule_rows(21, 300);
    let scaled: Vec<TrainingRow> = rows
        .iter()
        .map(|r| TrainingRow { inputs: r.inputs.map(|v| v * 8.0), ..r.clone() })
        .collect();
    let (a, na) = train_classifier(&rows, 0, &quick()).unwrap();
    let (b, nb) = train_classifier(&scaled, 0, &quick()).unwrap();
    for (m, s) in na.mean.iter().zip(&nb.mean) {
        assert_eq!(m * 8.0, *s);
    }
    for r in rows.iter().take(50) {
        let pa = a.net.forward(&na.apply(&r.inputs));
        let pb = b.net.forward(&nb.apply(&r.inputs.map(|v| v * 8.0)));
        assert_eq!(pa, pb);
    }
}

#[test]
fn linear_target_recall_within_five_percent() {
    let rows = linear_rows(8, 2000);
    let model = train_plant(&three_unit_spec(), &rows, &TrainConfig::default()).unwrap();
    let [cat, unit] = model.report.categories[0].ci.unwrap();
    assert!(cat.relative < 0.02 && unit.relative < 0.02, "{cat:?} {unit:?}");
    for r in rows.iter().step_by(97) {
        let p = predict_categories(&model, r.inputs);
        let c = &p.categories[0];
        assert!(c.exist);
        assert!((c.cat_mw - r.targets[0].cat_mw).abs() <= 0.05 * r.targets[0].cat_mw);
        assert!((c.unit_mw - r.targets[0].unit_mw).abs() <= 0.05 * r.targets[0].unit_mw);
        assert_eq!(c.active_units, 3);
    }
}

#[test]
fn synthetic_rows_match_joined_hours() {
    let store = synthetic_store(4, 300, 1);
    let units = store.join_units_of("UP").unwrap();
    let spec = categorize_units(&units).unwrap();
    let rows = build_training_rows(&store.plant_samples("UP").unwrap(), &store.unit_samples_of("UP").unwrap(), &spec).unwrap();
    assert_eq!(rows.len(), 300);
    assert_eq!(spec.categories.len(), 3);
}

fn trained_fixture() -> &'static TrainedPlantModel {
    use std::sync::OnceLock;
    static MODEL: OnceLock<TrainedPlantModel> = OnceLock::new();
    MODEL.get_or_init(|| {
        let mut rows = rule_rows(9, 400);
        for (i, r) in rows.iter_mut().enumerate() {
            // Second category: active on even hours only, so both classes appear.
            r.targets.push(if i % 2 == 0 {
                CategoryTarget { exist: true, cat_mw: 100.0 + i as f64, unit_mw: 50.0 }
            } else {
                CategoryTarget::INACTIVE
            });
        }
        let spec = CategorySpec {
            plant: "P".into(),
            categories: vec![
                Category { label: "C1".into(), nominal_pmax_mw: 800.0, unit_ids: vec!["a".into(), "b".into()] },
                Category { label: "C2".into(), nominal_pmax_mw: 90.0, unit_ids: vec!["c".into(), "d".into(), "e".into()] },
            ],
        };
        train_plant(&spec, &rows, &quick()).unwrap()
    })
}

proptest! {
    #[test]
    fn classifier_output_in_open_unit_interval(
        seed in 0u64..1000,
        x in prop::array::uniform3(-1e9f64..1e9),
    ) {
        let net = Mlp::new(&DEFAULT_SIZES, Head::Logistic, seed).unwrap();
        let p = net.forward(&x)[0];
        prop_assert!(p > 0.0 && p < 1.0);
    }

    #[test]
    fn prediction_invariants(total in 0.0f64..5000.0, head in 200.0f64..400.0, storage in 0.0f64..6e5) {
        let model = trained_fixture();
        let p = predict_categories(model, [total, head, storage]);
        for (c, spec) in p.categories.iter().zip(&model.spec.categories) {
            prop_assert!(c.active_units <= spec.size());
            prop_assert!(c.probability > 0.0 && c.probability < 1.0);
            if c.exist {
                prop_assert!(c.active_units >= 1);
            } else {
                prop_assert_eq!((c.cat_mw, c.unit_mw, c.active_units), (0.0, 0.0, 0));
            }
        }
    }

    #[test]
    fn categories_partition_units(powers in prop::collection::vec(10.0f64..1000.0, 1..20)) {
        let units: Vec<StaticUnit> = powers
            .iter()
            .enumerate()
            .map(|(i, p)| StaticUnit::new("P", "B", 1, format!("{i}"), *p).unwrap())
            .collect();
        let spec = categorize_units(&units).unwrap();
        let mut seen: Vec<&String> = spec.categories.iter().flat_map(|c| &c.unit_ids).collect();
        seen.sort();
        seen.dedup();
        prop_assert_eq!(seen.len(), units.len());
        for c in &spec.categories {
            for id in &c.unit_ids {
                let u = units.iter().find(|u| &u.unit_id == id).unwrap();
                prop_assert!((u.nominal_pmax_mw - c.nominal_pmax_mw).abs() <= 0.01 * c.nominal_pmax_mw);
            }
        }
        prop_assert!(spec.categories.windows(2).all(|w| w[0].nominal_pmax_mw > w[1].nominal_pmax_mw));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]
    #[test]
    fn training_rows_hold_invariants(seed in 0u64..10_000, hours in 30usize..120) {
        let store = synthetic_store(seed, hours, 1);
        for plant in ["UP", "DOWN"] {
            let spec = categorize_units(&store.join_units_of(plant).unwrap()).unwrap();
            let rows = build_training_rows(
                &store.plant_samples(plant).unwrap(),
                &store.unit_samples_of(plant).unwrap(),
                &spec,
            ).unwrap();
            prop_assert_eq!(rows.len(), hours);
            for r in &rows {
                for t in &r.targets {
                    if t.exist {
                        prop_assert!(t.cat_mw >= t.unit_mw && t.unit_mw > 0.0);
                    } else {
                        prop_assert_eq!((t.cat_mw, t.unit_mw), (0.0, 0.0));
                    }
                }
            }
        }
    }
}
