#![allow(dead_code)]

use chrono::{DateTime, Duration, TimeZone, Utc};
use hydrodispatch::datastore::{EfficiencyPoint, Store};
use hydrodispatch::efficiency::EfficiencyCurve;
use hydrodispatch::hydrology::generate_synthetic_cascade;
use hydrodispatch::ml::{CategoryTarget, TrainingRow};
use hydrodispatch::stats::LineFit;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn t0() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2020, 1, 1, 0, 0, 0).unwrap()
}

fn random_rows(seed: u64, n: usize, target: impl Fn(f64, f64, f64) -> CategoryTarget) -> Vec<TrainingRow> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let total = rng.random_range(0.0..4000.0);
            let head = rng.random_range(280.0..340.0);
            let storage = rng.random_range(1e5..5e5);
            TrainingRow {
                timestamp: t0() + Duration::hours(i as i64),
                inputs: [total, head, storage],
                targets: vec![target(total, head, storage)],
            }
        })
        .collect()
}

/// `exist` iff total MW is above a cut that rises 20 MW per foot of head.
pub fn rule_rows(seed: u64, n: usize) -> Vec<TrainingRow> {
    random_rows(seed, n, |t, h, _| {
        if t > 1500.0 + 20.0 * (h - 310.0) {
            CategoryTarget { exist: true, cat_mw: t * 0.3, unit_mw: t * 0.1 }
        } else {
            CategoryTarget::INACTIVE
        }
    })
}

/// Always active; both targets exactly linear in the inputs.
pub fn linear_rows(seed: u64, n: usize) -> Vec<TrainingRow> {
    random_rows(seed, n, |t, h, s| {
        let cat = 1000.0 + 0.6 * t + 3.0 * h - 0.0005 * s;
        CategoryTarget { exist: true, cat_mw: cat, unit_mw: cat / 3.0 }
    })
}

/// Curve with power equal to flow and a flat 0.9 plateau over `[lo, hi]`.
pub fn plateau_curve(unit: &str, lo: f64, hi: f64) -> EfficiencyCurve {
    let pts = [(0.5 * lo, 0.8), (lo, 0.9), (hi, 0.9), (hi * 1.5, 0.8)];
    EfficiencyCurve {
        unit_id: unit.into(),
        points: pts
            .iter()
            .map(|&(q, e)| EfficiencyPoint {
                unit_id: unit.into(),
                flow_cfs: q,
                head_ft: 100.0,
                power_mw: q,
                efficiency: e,
                estimated: false,
            })
            .collect(),
        regression: LineFit { slope: 1.0, intercept: 0.0 },
        head_ft: 100.0,
        threshold: 0.9,
        threshold_band: Some((lo, hi)),
        flagged: 0,
    }
}

pub fn synthetic_store(seed: u64, hours: usize, lag: usize) -> Store {
    let mut store = Store::open_in_memory().unwrap();
    store.ingest_bundle(&generate_synthetic_cascade(seed, hours, lag, 0.05).to_bundle()).unwrap();
    store
}
