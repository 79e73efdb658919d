//! Allocation, recalibration, correction and export invariants.

mod common;

use std::collections::BTreeMap;

use common::plateau_curve;
use hydrodispatch::dispatch::*;
use hydrodispatch::hydrology::Season;
use hydrodispatch::interdependency::CascadeLink;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn allocation_conserves_exactly_over_random_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(500);
    for case in 0..500 {
        let n = rng.random_range(1..8);
        let caps: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..500.0)).collect();
        let active = rng.random_range(0..=n);
        let cat = if active == 0 { 0.0 } else { rng.random_range(0.0..2000.0) };
        let a = allocate_units(cat, active, &caps).unwrap();
        let total: f64 = a.unit_mw.iter().sum();
        assert_eq!(total + a.unserved_mw, cat, "case {case}: {caps:?} {active} {cat}");
        for (mw, cap) in a.unit_mw.iter().zip(&caps) {
            assert!(*mw >= 0.0 && mw <= cap, "case {case}: {mw} > {cap}");
        }
        assert!(a.unserved_mw >= -1e-9 * cat.max(1.0));
        assert_eq!(a.active.iter().filter(|x| **x).count(), active);
    }
}

fn random_dispatch(rng: &mut ChaCha8Rng) -> (Vec<UnitDispatch>, BTreeMap<String, hydrodispatch::efficiency::EfficiencyCurve>) {
    let n = rng.random_range(1..7);
    let mut units = Vec::new();
    let mut curves = BTreeMap::new();
    for i in 0..n {
        let id = format!("u{i}");
        let cap = rng.random_range(20.0..200.0);
        let active = rng.random_bool(0.8);
        units.push(UnitDispatch {
            unit_id: id.clone(),
            category: format!("C{}", rng.random_range(1..3)),
            mw: if active { rng.random_range(0.5..cap) } else { 0.0 },
            pmax_available: cap,
            active,
        });
        if rng.random_bool(0.85) {
            let lo = rng.random_range(5.0..150.0);
            let hi = lo + rng.random_range(1.0..100.0);
            curves.insert(id.clone(), plateau_curve(&id, lo, hi));
        }
    }
    (units, curves)
}

#[test]
fn correction_is_sound_over_random_cases() {
    let mut rng = ChaCha8Rng::seed_from_u64(200);
    for case in 0..200 {
        let (units, curves) = random_dispatch(&mut rng);
        let report = validate_and_correct(&units, &curves);
        for u in report.dispatch.iter().filter(|u| u.active) {
            let ok = match curves.get(&u.unit_id) {
                None => true,
                Some(c) => c.in_band(u.mw) == Some(true) || report.residual_units.contains(&u.unit_id),
            };
            assert!(ok, "case {case}: unit {} at {} not in band and not logged", u.unit_id, u.mw);
            assert!(u.mw <= u.pmax_available);
        }
        let before: f64 = units.iter().map(|u| if u.active { u.mw } else { 0.0 }).sum();
        let after: f64 = report.dispatch.iter().map(|u| if u.active { u.mw } else { 0.0 }).sum();
        assert_eq!(before - after, report.residual_mw, "case {case}");
        assert!(report.deactivations <= units.len());
    }
}

fn link(up: &str, down: &str, a: f64, b: f64, c: f64) -> CascadeLink {
    CascadeLink {
        upstream: up.into(),
        downstream: down.into(),
        season: Season::Spring,
        lag: 2,
        intercept: a,
        beta_upstream_mw: b,
        beta_upstream_head: c,
        head_dropped: c == 0.0,
        std_errors: vec![],
        r_squared: 0.9,
        samples: 200,
    }
}

proptest! {
    #[test]
    fn derating_ratio_shared_within_plant(head in 1.0f64..600.0, rated in 50.0f64..600.0, a in 0.5f64..3.0) {
        let r1 = pmax_available(707.0, head, rated, a).unwrap() / 707.0;
        let r2 = pmax_available(825.7, head, rated, a).unwrap() / 825.7;
        let r3 = pmax_available(125.0, head, rated, a).unwrap() / 125.0;
        prop_assert!((r1 - r2).abs() < 1e-15 && (r1 - r3).abs() < 1e-15);
        prop_assert!(r1 <= 1.0);
    }

    #[test]
    fn recalibration_is_idempotent(
        mws in prop::collection::vec(0.0f64..2000.0, 4),
        coefs in prop::collection::vec((-50.0f64..50.0, 0.0f64..1.5, -1.0f64..1.0), 3),
        cap in 100.0f64..3000.0,
    ) {
        let names = ["A", "B", "C", "D"];
        let targets: Vec<PlantTarget> = names.iter().zip(&mws).map(|(p, mw)| PlantTarget {
            project: p.to_string(), target_mw: *mw, head_ft: 150.0, storage_af: 1.0, source: TargetSource::Historical,
        }).collect();
        // A -> B -> D and A -> C -> D: D averages two predictions.
        let links = vec![
            link("A", "B", coefs[0].0, coefs[0].1, coefs[0].2),
            link("A", "C", coefs[1].0, coefs[1].1, coefs[1].2),
            link("B", "D", coefs[2].0, coefs[2].1, coefs[2].2),
            link("C", "D", coefs[2].0, coefs[2].1, coefs[2].2),
        ];
        let caps: BTreeMap<String, f64> = names.iter().map(|p| (p.to_string(), cap)).collect();
        let once = recalibrate_cascade(&targets, &links, &caps).unwrap();
        let twice = recalibrate_cascade(&once, &links, &caps).unwrap();
        prop_assert_eq!(&once, &twice);
        prop_assert_eq!(&once[0], &targets[0]);
        for t in &once[1..] {
            prop_assert!(t.target_mw >= 0.0 && t.target_mw <= cap);
            prop_assert_eq!(t.source, TargetSource::Recalibrated);
        }
    }

    #[test]
    fn export_round_trips_at_two_decimals(
        vals in prop::collection::vec((0.0f64..1000.0, 1.0f64..1000.0, 1.0f64..500.0, 0.0f64..1.0, 0.0f64..1.0), 0..12)
    ) {
        let rows: Vec<DispatchRow> = vals.iter().enumerate().map(|(i, &(r, nom, head, f1, f2))| {
            let avail = nom * f1;
            DispatchRow {
                project: if i % 2 == 0 { "Plant A".into() } else { "Plant, B".into() },
                unit_id: format!("{}-{}", 40000 + i, i),
                pgen_ref: r, pmax_nominal: nom, head_ft: head, pgen_calculated: avail * f2, pmax_available: avail,
            }
        }).collect();
        let mut buf = Vec::new();
        write_case(&mut buf, &rows).unwrap();
        let back = read_case(&buf[..]).unwrap();
        prop_assert_eq!(back.len(), rows.len());
        for b in &back {
            let orig = rows.iter().find(|r| r.unit_id == b.unit_id).unwrap();
            prop_assert_eq!(&b.project, &orig.project);
            for (x, y) in [
                (b.pgen_ref, orig.pgen_ref), (b.pmax_nominal, orig.pmax_nominal), (b.head_ft, orig.head_ft),
                (b.pgen_calculated, orig.pgen_calculated), (b.pmax_available, orig.pmax_available),
            ] {
                prop_assert_eq!(format!("{x:.2}"), format!("{y:.2}"));
            }
        }
        let mut again = Vec::new();
        write_case(&mut again, &back).unwrap();
        prop_assert_eq!(again, buf);
    }
}
