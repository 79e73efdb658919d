//! Efficiency validation of a unit dispatch with setpoint correction.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{allocate_units, ordered_sum};
use crate::efficiency::EfficiencyCurve;

/// One unit's setpoint inside a plant dispatch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitDispatch {
    pub unit_id: String,
    /// Units sharing a category are redistributed together.
    pub category: String,
    pub mw: f64,
    pub pmax_available: f64,
    pub active: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum CorrectionAction {
    /// Out-of-band unit moved to the nearest band edge.
    Shift { unit_id: String, from_mw: f64, to_mw: f64 },
    /// In-band unit moved toward a band extreme to take up a shift.
    Absorb { unit_id: String, from_mw: f64, to_mw: f64 },
    /// Unit switched off; its category MW is re-split over the rest.
    Deactivate { unit_id: String, mw: f64 },
    /// Band does not intersect `[0, pmax_available]`.
    NoFeasibleBand { unit_id: String },
    /// No curve on file; the unit passes unchecked.
    MissingCurve { unit_id: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrectionReport {
    pub dispatch: Vec<UnitDispatch>,
    pub log: Vec<CorrectionAction>,
    /// `plant_total(input) - plant_total(dispatch)`.
    pub residual_mw: f64,
    /// Active units left outside their band.
    pub residual_units: Vec<String>,
    pub deactivations: usize,
}

pub fn plant_total(dispatch: &[UnitDispatch]) -> f64 {
    ordered_sum(&dispatch.iter().map(|u| if u.active { u.mw } else { 0.0 }).collect::<Vec<_>>())
}

/// MW band of a unit: curve band intersected with `[0, pmax_available]`.
/// `Some(None)` means the band is empty.
fn band_of(u: &UnitDispatch, curves: &BTreeMap<String, EfficiencyCurve>) -> Option<Option<(f64, f64)>> {
    let (lo, hi) = curves.get(&u.unit_id)?.band_power()?;
    let (lo, hi) = (lo.max(0.0), hi.min(u.pmax_available));
    Some((lo <= hi).then_some((lo, hi)))
}

fn tolerance(total: f64) -> f64 {
    1e-9 * total.abs().max(1.0)
}

/// One correction pass over a fixed set of switched-off units. Returns the
/// dispatch, its log and the plant MW that could not be absorbed.
fn pass(
    input: &[UnitDispatch],
    off: &[bool],
    curves: &BTreeMap<String, EfficiencyCurve>,
) -> (Vec<UnitDispatch>, Vec<CorrectionAction>, Vec<usize>, f64) {
    let mut d: Vec<UnitDispatch> = input.to_vec();
    let mut log = Vec::new();
    let mut delta = 0.0;

    // Re-split the MW of categories that lost units.
    let mut categories: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, u) in input.iter().enumerate() {
        categories.entry(u.category.as_str()).or_default().push(i);
    }
    for members in categories.values() {
        if !members.iter().any(|&i| off[i] && input[i].active) {
            continue;
        }
        let cat_mw = ordered_sum(&members.iter().filter(|&&i| input[i].active).map(|&i| input[i].mw).collect::<Vec<_>>());
        let keep: Vec<usize> = members.iter().copied().filter(|&i| input[i].active && !off[i]).collect();
        for &i in members {
            if off[i] {
                d[i].active = false;
                d[i].mw = 0.0;
            }
        }
        if keep.is_empty() {
            delta += cat_mw;
            continue;
        }
        let caps: Vec<f64> = keep.iter().map(|&i| input[i].pmax_available).collect();
        let alloc = allocate_units(cat_mw, keep.len(), &caps).expect("valid re-split");
        for (&i, mw) in keep.iter().zip(alloc.unit_mw) {
            d[i].mw = mw;
        }
        delta += alloc.unserved_mw;
    }

    // Shift offenders to the nearest band edge.
    let mut offenders = Vec::new();
    let mut shifted = vec![false; d.len()];
    for i in 0..d.len() {
        if !d[i].active {
            continue;
        }
        match band_of(&d[i], curves) {
            None => {}
            Some(None) => offenders.push(i),
            Some(Some((lo, hi))) => {
                let to = d[i].mw.clamp(lo, hi);
                if to != d[i].mw {
                    log.push(CorrectionAction::Shift { unit_id: d[i].unit_id.clone(), from_mw: d[i].mw, to_mw: to });
                    delta += d[i].mw - to;
                    d[i].mw = to;
                    shifted[i] = true;
                    offenders.push(i);
                }
            }
        }
    }

    // Take the delta up with units that were already in band.
    for i in 0..d.len() {
        if delta == 0.0 {
            break;
        }
        if !d[i].active || shifted[i] {
            continue;
        }
        let Some(Some((lo, hi))) = band_of(&d[i], curves) else { continue };
        let from = d[i].mw;
        let to = (from + delta).clamp(lo, hi);
        if to != from {
            delta -= to - from;
            d[i].mw = to;
            log.push(CorrectionAction::Absorb { unit_id: d[i].unit_id.clone(), from_mw: from, to_mw: to });
        }
    }
    (d, log, offenders, delta)
}

/// Moves out-of-band units to their band edge and lets in-band units absorb
/// the plant MW change. When that fails, the least-loaded offender is
/// switched off and its category re-split, at most once per unit.
pub fn validate_and_correct(
    dispatch: &[UnitDispatch],
    curves: &BTreeMap<String, EfficiencyCurve>,
) -> CorrectionReport {
    let original_total = plant_total(dispatch);
    let tol = tolerance(original_total);
    let mut warnings: Vec<CorrectionAction> = dispatch
        .iter()
        .filter(|u| u.active && !curves.contains_key(&u.unit_id))
        .map(|u| CorrectionAction::MissingCurve { unit_id: u.unit_id.clone() })
        .collect();
    let mut off = vec![false; dispatch.len()];
    let mut history: Vec<CorrectionAction> = Vec::new();
    let mut deactivations = 0;
    let (mut d, mut log) = loop {
        let (d, log, offenders, delta) = pass(dispatch, &off, curves);
        let infeasible: Vec<usize> =
            offenders.iter().copied().filter(|&i| matches!(band_of(&d[i], curves), Some(None))).collect();
        let settled = delta.abs() <= tol && infeasible.is_empty();
        if settled || deactivations >= dispatch.len() || offenders.is_empty() {
            break (d, log);
        }
        let pick = if let Some(&i) = infeasible.first() {
            i
        } else {
            *offenders
                .iter()
                .min_by(|&&a, &&b| dispatch[a].mw.total_cmp(&dispatch[b].mw).then(a.cmp(&b)))
                .expect("nonempty")
        };
        if matches!(band_of(&d[pick], curves), Some(None)) {
            history.push(CorrectionAction::NoFeasibleBand { unit_id: d[pick].unit_id.clone() });
        }
        history.push(CorrectionAction::Deactivate { unit_id: d[pick].unit_id.clone(), mw: dispatch[pick].mw });
        off[pick] = true;
        deactivations += 1;
    };
    history.append(&mut log);
    log = history;
    for u in d.iter_mut().filter(|u| !u.active) {
        u.mw = 0.0;
    }
    let residual_units = d
        .iter()
        .filter(|u| u.active)
        .filter(|u| match band_of(u, curves) {
            None => false,
            Some(None) => true,
            Some(Some((lo, hi))) => u.mw < lo || u.mw > hi,
        })
        .map(|u| u.unit_id.clone())
        .collect();
    log.append(&mut warnings);
    let residual_mw = original_total - plant_total(&d);
    CorrectionReport { dispatch: d, log, residual_mw, residual_units, deactivations }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datastore::EfficiencyPoint;
    use crate::stats::LineFit;

    /// Curve whose power equals flow and whose band is `[lo, hi]` in MW.
    pub(crate) fn flat_curve(unit: &str, lo: f64, hi: f64) -> EfficiencyCurve {
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

    fn unit(id: &str, cat: &str, mw: f64, cap: f64) -> UnitDispatch {
        UnitDispatch { unit_id: id.into(), category: cat.into(), mw, pmax_available: cap, active: mw > 0.0 }
    }

    #[test]
    fn in_band_is_identity() {
        let d = vec![unit("a", "C1", 60.0, 100.0), unit("b", "C1", 70.0, 100.0)];
        let curves: BTreeMap<_, _> =
            [("a", flat_curve("a", 50.0, 90.0)), ("b", flat_curve("b", 50.0, 90.0))].into_iter().map(|(k, v)| (k.to_string(), v)).collect();
        let r = validate_and_correct(&d, &curves);
        assert_eq!(r.dispatch, d);
        assert!(r.log.is_empty());
        assert_eq!(r.residual_mw, 0.0);
    }

    #[test]
    fn shift_absorbed_by_neighbour() {
        // a sits 5 MW under its band; b can drop 5 MW and stay in band.
        let d = vec![unit("a", "C1", 45.0, 100.0), unit("b", "C2", 60.0, 100.0)];
        let curves: BTreeMap<_, _> =
            [("a", flat_curve("a", 50.0, 90.0)), ("b", flat_curve("b", 40.0, 90.0))].into_iter().map(|(k, v)| (k.to_string(), v)).collect();
        let r = validate_and_correct(&d, &curves);
        assert_eq!(r.dispatch[0].mw, 50.0);
        assert_eq!(r.dispatch[1].mw, 55.0);
        assert_eq!(plant_total(&r.dispatch), plant_total(&d));
        assert_eq!(r.residual_mw, 0.0);
        assert_eq!(r.log.len(), 2);
    }

    #[test]
    fn lone_offender_is_switched_off() {
        let d = vec![unit("a", "C1", 45.0, 100.0)];
        let curves: BTreeMap<_, _> = [("a".to_string(), flat_curve("a", 50.0, 90.0))].into_iter().collect();
        let r = validate_and_correct(&d, &curves);
        assert!(!r.dispatch[0].active);
        assert_eq!(r.residual_mw, 45.0);
        assert!(r.log.iter().any(|a| matches!(a, CorrectionAction::Deactivate { .. })));
    }

    #[test]
    fn missing_curve_passes_with_warning() {
        let d = vec![unit("a", "C1", 45.0, 100.0)];
        let r = validate_and_correct(&d, &BTreeMap::new());
        assert_eq!(r.dispatch, d);
        assert_eq!(r.log, vec![CorrectionAction::MissingCurve { unit_id: "a".into() }]);
    }
}
