//! Least squares, efficiency and curve properties against independent oracles.

use hydrodispatch::efficiency::{build_curve, compute_efficiency, efficient_band, Observation, MW_PER_CFS_FT};
use hydrodispatch::stats::{fit_ols, least_squares};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Slope and intercept from centered sums, solved independently of the library.
fn ols_oracle(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

#[test]
fn ols_matches_oracle_on_random_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for _ in 0..100 {
        let n = rng.random_range(3..200);
        let (a, b) = (rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0));
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-10.0..10.0)).collect();
        let y: Vec<f64> = x.iter().map(|v| a + b * v + rng.random_range(-1.0..1.0)).collect();
        let fit = fit_ols(&x, &y).unwrap();
        let (slope, intercept) = ols_oracle(&x, &y);
        assert!((fit.slope - slope).abs() <= 1e-10, "{} vs {}", fit.slope, slope);
        assert!((fit.intercept - intercept).abs() <= 1e-10);
        let r: Vec<f64> = x.iter().zip(&y).map(|(xi, yi)| yi - fit.eval(*xi)).collect();
        let scale = y.iter().map(|v| v.abs()).sum::<f64>().max(1.0);
        assert!(r.iter().sum::<f64>().abs() <= 1e-9 * scale);
        let xscale = x.iter().zip(&y).map(|(a, b)| (a * b).abs()).sum::<f64>().max(1.0);
        assert!(r.iter().zip(&x).map(|(ri, xi)| ri * xi).sum::<f64>().abs() <= 1e-9 * xscale);
    }
}

#[test]
fn single_regressor_least_squares_agrees_with_line_fit() {
    let x: Vec<f64> = (0..50).map(|i| (i as f64 * 0.37).sin() * 10.0).collect();
    let y: Vec<f64> = x.iter().enumerate().map(|(i, v)| 2.0 - 0.7 * v + (i % 3) as f64).collect();
    let line = fit_ols(&x, &y).unwrap();
    let ls = least_squares(&[&x], &y).unwrap();
    assert!((ls.coefficients[0] - line.intercept).abs() < 1e-10);
    assert!((ls.coefficients[1] - line.slope).abs() < 1e-10);
}

#[test]
fn conversion_constant_from_units() {
    // P[W] = rho g Q[m^3/s] H[m]; 1 cfs = 0.0283168 m^3/s, 1 ft = 0.3048 m.
    let k = 1000.0 * 9.81 * 0.028_316_846_592 * 0.3048 / 1e6;
    assert_eq!(format!("{k:.3e}"), format!("{MW_PER_CFS_FT:.3e}"));
}

#[test]
fn efficiency_round_trip_random_triples() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..1000 {
        let eta = rng.random_range(0.05..1.05);
        let q = rng.random_range(10.0..1e5);
        let h = rng.random_range(10.0..1000.0);
        let p = MW_PER_CFS_FT * eta * q * h;
        assert!((compute_efficiency(p, q, h).unwrap() - eta).abs() <= 1e-12);
    }
}

fn observations() -> impl Strategy<Value = Vec<Observation>> {
    prop::collection::vec((100.0f64..5000.0, 250.0f64..350.0, 0.6f64..0.95), 6..60).prop_map(|v| {
        v.into_iter()
            .map(|(q, h, e)| Observation { flow_cfs: q, head_ft: h, power_mw: MW_PER_CFS_FT * e * q * h })
            .collect()
    })
}

proptest! {
    #[test]
    fn efficiency_is_homogeneous(eta in 0.01f64..0.5, q in 10.0f64..1e4, h in 10.0f64..500.0, c in 0.1f64..2.0) {
        let p = MW_PER_CFS_FT * eta * q * h;
        let base = compute_efficiency(p, q, h).unwrap();
        let scaled_p = compute_efficiency(p * c, q, h).unwrap();
        prop_assert!((scaled_p - c * base).abs() <= 1e-12 * base.max(1.0));
        let scaled_qh = compute_efficiency(p, q * 2.0, h).unwrap();
        prop_assert!((scaled_qh - base / 2.0).abs() <= 1e-12 * base.max(1.0));
    }

    #[test]
    fn estimated_points_avoid_raw_flows(obs in observations()) {
        let Ok(curve) = build_curve("u", &obs, 0.9) else { return Ok(()) };
        prop_assert!(curve.points.windows(2).all(|w| w[0].flow_cfs < w[1].flow_cfs));
        let raw: Vec<f64> = curve.points.iter().filter(|p| !p.estimated).map(|p| p.flow_cfs).collect();
        let (lo, hi) = (raw[0], raw[raw.len() - 1]);
        for p in curve.points.iter().filter(|p| p.estimated) {
            prop_assert!(p.flow_cfs < lo || p.flow_cfs > hi);
        }
    }

    #[test]
    fn band_widens_as_threshold_drops(obs in observations(), t in 0.3f64..0.95, dt in 0.0f64..0.2) {
        let Ok(curve) = build_curve("u", &obs, t) else { return Ok(()) };
        if let (Some((lo_hi, hi_hi)), Some((lo_lo, hi_lo))) =
            (efficient_band(&curve, t), efficient_band(&curve, t - dt))
        {
            prop_assert!(lo_lo <= lo_hi + 1e-9 && hi_lo >= hi_hi - 1e-9);
        } else {
            prop_assert!(efficient_band(&curve, t).is_none() || efficient_band(&curve, t - dt).is_some());
        }
    }
}
