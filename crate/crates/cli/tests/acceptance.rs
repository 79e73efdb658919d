//! Acceptance gate: one PASS/FAIL line per criterion, nonzero exit on any failure.

use std::collections::BTreeMap;
use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::{Command, Stdio};
use std::time::Instant;

use chrono::{Duration, TimeZone, Utc};
use hydrodispatch::datastore::{EfficiencyPoint, Store};
use hydrodispatch::dispatch::{allocate_units, pmax_available, read_case, validate_and_correct, UnitDispatch, CASE_HEADER};
use hydrodispatch::efficiency::{compute_efficiency, EfficiencyCurve, MW_PER_CFS_FT};
use hydrodispatch::hydrology::{generate_synthetic_cascade, season_of, Season};
use hydrodispatch::interdependency::{analyze_pair, PlantPair, DEFAULT_MAX_LAG};
use hydrodispatch::ml::{grad_check, train_classifier, train_regressor, CategoryTarget, Head, Mlp, TrainConfig, TrainingRow};
use hydrodispatch::stats::{fit_ols, LineFit};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Check = fn() -> Outcome;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn lag_recovery() -> Outcome {
    let t = Instant::now();
    let cascade = generate_synthetic_cascade(42, 2000, 2, 0.05);
    let mut store = Store::open_in_memory().map_err(|e| e.to_string())?;
    store.ingest_bundle(&cascade.to_bundle()).map_err(|e| e.to_string())?;
    let report = analyze_pair(&store, &PlantPair::new("UP", "DOWN"), DEFAULT_MAX_LAG).map_err(|e| e.to_string())?;
    let elapsed = t.elapsed();
    let mut checked = Vec::new();
    for season in Season::ALL {
        let n = cascade.downstream.iter().filter(|s| season_of(&s.timestamp) == season).count();
        if n < 200 {
            continue;
        }
        let p = report.profiles.iter().find(|p| p.season == season).ok_or_else(|| format!("{season}: no profile"))?;
        ensure(p.best_lag == 2, || format!("{season}: best lag {}", p.best_lag))?;
        checked.push(format!("{season} {n}h"));
    }
    ensure(!checked.is_empty(), || "no season had 200 samples".into())?;
    ensure(elapsed.as_secs_f64() < 5.0, || format!("took {elapsed:?}"))?;
    Ok(format!("lag 2 in {}; {elapsed:.2?}", checked.join(", ")))
}

fn table_v_derating() -> Outcome {
    let mut got = Vec::new();
    for (nominal, expected) in [(707.0, 513.65), (825.7, 599.88), (125.0, 90.81)] {
        let v = pmax_available(nominal, 307.1, 380.2, 1.5).map_err(|e| e.to_string())?;
        ensure((v - expected).abs() <= 0.5, || format!("{nominal} -> {v:.4}, expected {expected}"))?;
        got.push(format!("{nominal}->{v:.2}"));
    }
    Ok(got.join(" "))
}

fn table_v_allocation() -> Outcome {
    let a = allocate_units(238.44, 3, &[90.81; 3]).map_err(|e| e.to_string())?;
    let shown: Vec<String> = a.unit_mw.iter().map(|v| format!("{v:.2}")).collect();
    ensure(shown.iter().all(|s| s == "79.48"), || format!("{shown:?}"))?;
    Ok(format!("{} MW per unit", shown[0]))
}

fn random_rows(seed: u64, n: usize, target: impl Fn(f64, f64, f64) -> CategoryTarget) -> Vec<TrainingRow> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let t0 = Utc.with_ymd_and_hms(2020, 1, 1, 0, 0, 0).unwrap();
    (0..n)
        .map(|i| {
            let total = rng.random_range(0.0..4000.0);
            let head = rng.random_range(280.0..340.0);
            let storage = rng.random_range(1e5..5e5);
            TrainingRow {
                timestamp: t0 + Duration::hours(i as i64),
                inputs: [total, head, storage],
                targets: vec![target(total, head, storage)],
            }
        })
        .collect()
}

fn classifier_fixture() -> Outcome {
    // exist iff total MW exceeds a cut rising 20 MW per foot of head.
    let rows = random_rows(1, 2000, |t, h, _| {
        if t > 1500.0 + 20.0 * (h - 310.0) {
            CategoryTarget { exist: true, cat_mw: 0.3 * t, unit_mw: 0.1 * t }
        } else {
            CategoryTarget::INACTIVE
        }
    });
    let t = Instant::now();
    let (fit, _) = train_classifier(&rows, 0, &TrainConfig::default()).map_err(|e| e.to_string())?;
    let elapsed = t.elapsed();
    let acc = fit.accuracy.ok_or("no held-out rows")?;
    ensure(acc >= 0.95, || format!("held-out accuracy {acc:.4}"))?;
    ensure(elapsed.as_secs_f64() < 60.0, || format!("took {elapsed:?}"))?;
    Ok(format!("held-out accuracy {acc:.4} on {} rows, 200 epochs, {elapsed:.2?}", fit.test_rows))
}

fn regressor_fixture() -> Outcome {
    let rows = random_rows(2, 2000, |t, h, s| {
        let cat = 1000.0 + 0.6 * t + 3.0 * h - 0.0005 * s;
        CategoryTarget { exist: true, cat_mw: cat, unit_mw: cat / 3.0 }
    });
    let t = Instant::now();
    let (fit, _) = train_regressor(&rows, 0, &TrainConfig::default()).map_err(|e| e.to_string())?;
    let elapsed = t.elapsed();
    let [cat, unit] = fit.ci.ok_or("no held-out rows")?;
    ensure(cat.relative <= 0.10 && unit.relative <= 0.10, || {
        format!("CI80 cat {:.4}, unit {:.4} of mean", cat.relative, unit.relative)
    })?;
    ensure(elapsed.as_secs_f64() < 60.0, || format!("took {elapsed:?}"))?;
    Ok(format!("CI80 half-width cat {:.3}% unit {:.3}% of mean, {elapsed:.2?}", 100.0 * cat.relative, 100.0 * unit.relative))
}

fn gradient_check() -> Outcome {
    let mut worst: f64 = 0.0;
    for seed in 1..=5u64 {
        let net = Mlp::new(&[3, 32, 32, 16, 8, 1], Head::Logistic, seed).map_err(|e| e.to_string())?;
        worst = worst.max(grad_check(&net, &[0.4, -1.2, 0.9], &[1.0]));
        let reg = Mlp::new(&[3, 32, 32, 16, 8, 2], Head::Identity, seed).map_err(|e| e.to_string())?;
        worst = worst.max(grad_check(&reg, &[-0.3, 0.2, 1.7], &[0.5, -0.25]));
    }
    ensure(worst < 1e-4, || format!("max relative deviation {worst:e}"))?;
    Ok(format!("max relative deviation {worst:.2e} over seeds 1..5"))
}

/// Normal equations in centered form, written independently of the library.
fn ols_oracle(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    (sxy / sxx, my - sxy / sxx * mx)
}

fn ols_oracle_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (mut dev, mut orth): (f64, f64) = (0.0, 0.0);
    for _ in 0..100 {
        let n = rng.random_range(3..200);
        let (a, b) = (rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0));
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-10.0..10.0)).collect();
        let y: Vec<f64> = x.iter().map(|v| a + b * v + rng.random_range(-1.0..1.0)).collect();
        let fit = fit_ols(&x, &y).map_err(|e| e.to_string())?;
        let (slope, intercept) = ols_oracle(&x, &y);
        dev = dev.max((fit.slope - slope).abs()).max((fit.intercept - intercept).abs());
        let r: Vec<f64> = x.iter().zip(&y).map(|(xi, yi)| yi - fit.eval(*xi)).collect();
        let scale = y.iter().map(|v| v.abs()).sum::<f64>().max(1.0);
        let xscale = x.iter().zip(&y).map(|(a, b)| (a * b).abs()).sum::<f64>().max(1.0);
        let along_x = r.iter().zip(&x).map(|(ri, xi)| ri * xi).sum::<f64>().abs() / xscale;
        orth = orth.max(r.iter().sum::<f64>().abs() / scale).max(along_x);
    }
    ensure(dev <= 1e-10, || format!("coefficient deviation {dev:e}"))?;
    ensure(orth <= 1e-9, || format!("scaled residual orthogonality {orth:e}"))?;
    Ok(format!("max coefficient deviation {dev:.1e}, orthogonality {orth:.1e}"))
}

fn efficiency_round_trip() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let eta = rng.random_range(0.05..1.05);
        let q = rng.random_range(10.0..1e5);
        let h = rng.random_range(10.0..1000.0);
        let p = MW_PER_CFS_FT * eta * q * h;
        let back = compute_efficiency(p, q, h).map_err(|e| e.to_string())?;
        worst = worst.max((back - eta).abs());
    }
    ensure(worst <= 1e-12, || format!("round-trip error {worst:e}"))?;
    // rho * g * (m^3/s per cfs) * (m per ft), in MW.
    let k = 1000.0 * 9.81 * 0.028_316_846_592 * 0.3048 / 1e6;
    let (a, b) = (format!("{k:.3e}"), format!("{MW_PER_CFS_FT:.3e}"));
    ensure(a == b, || format!("K oracle {k:e} vs {MW_PER_CFS_FT:e}"))?;
    Ok(format!("max round-trip error {worst:.1e}; K oracle {a}"))
}

fn conservation() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(500);
    for case in 0..500 {
        let n = rng.random_range(1..8);
        let caps: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..500.0)).collect();
        let active = rng.random_range(0..=n);
        let cat = if active == 0 { 0.0 } else { rng.random_range(0.0..2000.0) };
        let a = allocate_units(cat, active, &caps).map_err(|e| format!("case {case}: {e}"))?;
        let total = a.unit_mw.iter().fold(0.0, |s, v| s + v);
        ensure(total + a.unserved_mw == cat, || format!("case {case}: {total} + {} != {cat}", a.unserved_mw))?;
        for (mw, cap) in a.unit_mw.iter().zip(&caps) {
            ensure(*mw >= 0.0 && mw <= cap, || format!("case {case}: {mw} outside [0, {cap}]"))?;
        }
    }
    Ok("500 instances exact".into())
}

fn run(bin: &str, dir: &Path, args: &[&str]) -> Result<Vec<u8>, String> {
    let out = Command::new(bin).current_dir(dir).args(args).output().map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr).trim()));
    }
    Ok(out.stdout)
}

fn cli_determinism() -> Outcome {
    let bin = env!("CARGO_BIN_EXE_hydrodispatch");
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let dir = tmp.path();
    let hours = (8784 + 2 * 8760).to_string();
    let mut synth = Command::new(bin)
        .current_dir(dir)
        .args(["synth", "--seed", "42", "--hours", &hours, "--lag", "2"])
        .stdout(Stdio::piped())
        .spawn()
        .map_err(|e| e.to_string())?;
    let ingest = Command::new(bin)
        .current_dir(dir)
        .args(["ingest", "--db", "t.db"])
        .stdin(synth.stdout.take().expect("piped"))
        .output()
        .map_err(|e| e.to_string())?;
    ensure(synth.wait().map_err(|e| e.to_string())?.success() && ingest.status.success(), || {
        format!("synth | ingest failed: {}", String::from_utf8_lossy(&ingest.stderr))
    })?;
    for plant in ["UP", "DOWN"] {
        run(bin, dir, &["efficiency", "--db", "t.db", "--plant", plant, "--out", "curves.csv"])?;
        let out = format!("models/{plant}.json");
        run(bin, dir, &["train", "--db", "t.db", "--plant", plant, "--epochs", "4", "--seed", "42", "--out", &out])?;
    }
    run(bin, dir, &["lag", "--db", "t.db", "--up", "UP", "--down", "DOWN", "--json", "links.json"])?;
    let dispatch = |out: &str| {
        run(
            bin,
            dir,
            &[
                "dispatch", "--db", "t.db", "--plant", "UP", "--plant", "DOWN", "--scenario", "dry:summer", "--links",
                "links.json", "--models", "models", "--seed", "42", "--out", out,
            ],
        )
    };
    dispatch("a.csv")?;
    dispatch("b.csv")?;
    let a = std::fs::read(dir.join("a.csv")).map_err(|e| e.to_string())?;
    let b = std::fs::read(dir.join("b.csv")).map_err(|e| e.to_string())?;
    ensure(a == b, || "export CSVs differ".into())?;
    let header = String::from_utf8_lossy(&a).lines().next().unwrap_or_default().to_string();
    ensure(header == CASE_HEADER.join(","), || format!("header {header:?}"))?;
    let rows = read_case(&a[..]).map_err(|e| e.to_string())?;
    ensure(rows.len() == 17, || format!("{} rows", rows.len()))?;
    Ok(format!("{} bytes, {} rows, identical", a.len(), rows.len()))
}

/// Curve with power equal to flow and a flat 0.9 plateau over `[lo, hi]`.
fn plateau_curve(unit: &str, lo: f64, hi: f64) -> EfficiencyCurve {
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

fn correction_soundness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(200);
    let (mut shifted, mut off) = (0, 0);
    for case in 0..200 {
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
        let report = validate_and_correct(&units, &curves);
        for u in report.dispatch.iter().filter(|u| u.active) {
            let ok = match curves.get(&u.unit_id) {
                None => true,
                Some(c) => c.in_band(u.mw) == Some(true) || report.residual_units.contains(&u.unit_id),
            };
            ensure(ok, || format!("case {case}: {} at {} neither in band nor logged", u.unit_id, u.mw))?;
        }
        let total = |d: &[UnitDispatch]| d.iter().fold(0.0, |s, u| s + if u.active { u.mw } else { 0.0 });
        let deviation = total(&units) - total(&report.dispatch);
        ensure(deviation == report.residual_mw, || format!("case {case}: {deviation} vs logged {}", report.residual_mw))?;
        shifted += usize::from(!report.log.is_empty());
        off += report.deactivations;
    }
    Ok(format!("200 cases exact; {shifted} corrected, {off} deactivations"))
}

fn main() {
    let criteria: [(&str, Check); 11] = [
        ("lag recovery", lag_recovery),
        ("head derating", table_v_derating),
        ("unit allocation", table_v_allocation),
        ("classifier fixture", classifier_fixture),
        ("regressor fixture", regressor_fixture),
        ("gradient check", gradient_check),
        ("OLS oracle equivalence", ols_oracle_equivalence),
        ("efficiency round trip", efficiency_round_trip),
        ("allocation conservation", conservation),
        ("CLI dispatch determinism", cli_determinism),
        ("correction soundness", correction_soundness),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let outcome = catch_unwind(AssertUnwindSafe(check))
            .unwrap_or_else(|p| Err(p.downcast_ref::<String>().cloned().unwrap_or_else(|| "panicked".into())));
        let line = match &outcome {
            Ok(detail) => format!("PASS  {name}: {detail}"),
            Err(why) => {
                failed += 1;
                format!("FAIL  {name}: {why}")
            }
        };
        let mut out = std::io::stdout().lock();
        let _ = writeln!(out, "{line}");
        let _ = out.flush();
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
