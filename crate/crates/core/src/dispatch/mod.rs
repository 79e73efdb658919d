//! Plant targets, cascade recalibration and unit allocation. Correction,
//! export and the end-to-end run live in the submodules.

mod correct;
mod export;
mod run;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interdependency::CascadeLink;

pub use correct::{
    plant_total, validate_and_correct, CorrectionAction, CorrectionReport, UnitDispatch,
};
pub use export::{export_case, read_case, write_case, DispatchRow, CASE_HEADER};
pub use run::{run_dispatch, DispatchRequest, DispatchRun, PlantDispatch};

pub const DEFAULT_ALPHA: f64 = 1.5;

/// Head-derated unit capacity `nominal * min(1, (head / rated_head)^alpha)`.
pub fn pmax_available(nominal_mw: f64, head_ft: f64, rated_head_ft: f64, alpha: f64) -> Result<f64> {
    if !(head_ft > 0.0) || !(rated_head_ft > 0.0) {
        return Err(Error::Domain(format!(
            "head {head_ft} and rated head {rated_head_ft} must be positive"
        )));
    }
    if !(nominal_mw >= 0.0) || !alpha.is_finite() {
        return Err(Error::Domain(format!("invalid nominal {nominal_mw} or exponent {alpha}")));
    }
    Ok(nominal_mw * (head_ft / rated_head_ft).powf(alpha).min(1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetSource {
    User,
    Historical,
    Recalibrated,
}

impl fmt::Display for TargetSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TargetSource::User => "user",
            TargetSource::Historical => "historical",
            TargetSource::Recalibrated => "recalibrated",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantTarget {
    pub project: String,
    pub target_mw: f64,
    pub head_ft: f64,
    pub storage_af: f64,
    pub source: TargetSource,
}

impl PlantTarget {
    pub fn validate(&self) -> Result<()> {
        if !(self.target_mw >= 0.0) || !self.target_mw.is_finite() {
            return Err(Error::validation(format!("{}: target {} MW", self.project, self.target_mw)));
        }
        if !(self.head_ft > 0.0) {
            return Err(Error::validation(format!("{}: head {} ft", self.project, self.head_ft)));
        }
        Ok(())
    }
}

/// Plants of `links` in upstream-first order (Kahn's algorithm, ties by name).
pub fn topological_order(links: &[CascadeLink]) -> Result<Vec<String>> {
    let mut indegree: BTreeMap<&str, usize> = BTreeMap::new();
    let mut children: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
    for l in links {
        indegree.entry(&l.upstream).or_insert(0);
        indegree.entry(&l.downstream).or_insert(0);
        if children.entry(&l.upstream).or_default().insert(&l.downstream) {
            *indegree.get_mut(l.downstream.as_str()).expect("inserted") += 1;
        }
    }
    let mut ready: BTreeSet<&str> = indegree.iter().filter(|(_, &d)| d == 0).map(|(p, _)| *p).collect();
    let mut order = Vec::with_capacity(indegree.len());
    while let Some(p) = ready.pop_first() {
        order.push(p.to_string());
        for c in children.get(p).into_iter().flatten() {
            let d = indegree.get_mut(c).expect("known plant");
            *d -= 1;
            if *d == 0 {
                ready.insert(c);
            }
        }
    }
    if order.len() < indegree.len() {
        let stuck: Vec<&str> = indegree.iter().filter(|(p, _)| !order.iter().any(|o| o == *p)).map(|(p, _)| *p).collect();
        return Err(Error::Cycle(stuck.join(", ")));
    }
    Ok(order)
}

/// Replaces each downstream target by its link prediction from the (already
/// recalibrated) upstream target and head, clamped to `[0, capacity]`.
/// Several upstream links are averaged; links whose upstream plant is not
/// among `targets` are ignored.
pub fn recalibrate_cascade(
    targets: &[PlantTarget],
    links: &[CascadeLink],
    capacity_mw: &BTreeMap<String, f64>,
) -> Result<Vec<PlantTarget>> {
    let order = topological_order(links)?;
    let mut out: Vec<PlantTarget> = targets.to_vec();
    let index: BTreeMap<String, usize> =
        out.iter().enumerate().map(|(i, t)| (t.project.clone(), i)).collect();
    for plant in order {
        let Some(&di) = index.get(&plant) else { continue };
        let preds: Vec<f64> = links
            .iter()
            .filter(|l| l.downstream == plant)
            .filter_map(|l| index.get(&l.upstream).map(|&ui| l.predict(out[ui].target_mw, out[ui].head_ft)))
            .collect();
        if preds.is_empty() {
            continue;
        }
        let mean = preds.iter().sum::<f64>() / preds.len() as f64;
        let cap = capacity_mw.get(&plant).copied().unwrap_or(f64::INFINITY);
        out[di].target_mw = mean.clamp(0.0, cap.max(0.0));
        out[di].source = TargetSource::Recalibrated;
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Allocation {
    /// Per-unit MW, aligned with the capacities passed in; inactive units get 0.
    pub unit_mw: Vec<f64>,
    pub active: Vec<bool>,
    /// Category MW left over once every active unit sits at its cap.
    pub unserved_mw: f64,
}

/// Left-to-right sum; the conservation identities are stated against it.
pub fn ordered_sum(xs: &[f64]) -> f64 {
    xs.iter().fold(0.0, |a, b| a + b)
}

/// Splits `cat_mw` equally over the `active` units with the largest
/// capacity (ties by position), clamps to capacity and re-splits the surplus
/// over the unclamped units until none is left or all are clamped.
///
/// `ordered_sum(unit_mw) + unserved_mw == cat_mw` holds exactly.
pub fn allocate_units(cat_mw: f64, active: usize, pmax_available: &[f64]) -> Result<Allocation> {
    if !(cat_mw >= 0.0) || !cat_mw.is_finite() {
        return Err(Error::validation(format!("category MW {cat_mw} must be finite and nonnegative")));
    }
    if active > pmax_available.len() {
        return Err(Error::validation(format!(
            "{active} active units exceed category size {}",
            pmax_available.len()
        )));
    }
    if pmax_available.iter().any(|p| !(*p >= 0.0)) {
        return Err(Error::validation("capacities must be nonnegative"));
    }
    if cat_mw > 0.0 && active == 0 {
        return Err(Error::Inconsistent(format!("{cat_mw} MW assigned to a category with no active units")));
    }
    let n = pmax_available.len();
    let mut by_cap: Vec<usize> = (0..n).collect();
    by_cap.sort_by(|&a, &b| pmax_available[b].total_cmp(&pmax_available[a]).then(a.cmp(&b)));
    let mut is_active = vec![false; n];
    for &i in &by_cap[..active] {
        is_active[i] = true;
    }
    let mut mw = vec![0.0; n];
    let mut free: Vec<usize> = (0..n).filter(|&i| is_active[i]).collect();
    let mut remaining = cat_mw;
    while remaining > 0.0 && !free.is_empty() {
        let share = remaining / free.len() as f64;
        remaining = 0.0;
        let mut still_free = Vec::with_capacity(free.len());
        for &i in &free {
            let want = mw[i] + share;
            if want >= pmax_available[i] {
                remaining += want - pmax_available[i];
                mw[i] = pmax_available[i];
            } else {
                mw[i] = want;
                still_free.push(i);
            }
        }
        free = still_free;
    }
    let unserved_mw = settle(&mut mw, &free, pmax_available, cat_mw);
    Ok(Allocation { unit_mw: mw, active: is_active, unserved_mw })
}

/// Makes `ordered_sum(mw) + unserved == target` exact. Rounding drift is
/// pushed into the last unclamped unit when that closes the gap; otherwise
/// the difference is returned as unserved, nudged by ulps until exact.
fn settle(mw: &mut [f64], free: &[usize], caps: &[f64], target: f64) -> f64 {
    if let Some(&k) = free.last() {
        let original = mw[k];
        for _ in 0..2 {
            let gap = target - ordered_sum(mw);
            if gap == 0.0 {
                return 0.0;
            }
            let candidate = mw[k] + gap;
            if candidate < 0.0 || candidate > caps[k] || gap.abs() > 1e-9 * target.abs().max(1.0) {
                break;
            }
            mw[k] = candidate;
        }
        if let Some(v) = nudge(mw, k, caps[k], target) {
            mw[k] = v;
            return 0.0;
        }
        mw[k] = original;
    }
    for _ in 0..8 {
        if let Some(u) = exact_gap(ordered_sum(mw), target) {
            return u;
        }
        // The sum sits on a rounding tie; lowering one unit by an ulp moves it off.
        match (0..mw.len()).rev().find(|&i| mw[i] > 0.0) {
            Some(i) => mw[i] = mw[i].next_down(),
            None => break,
        }
    }
    target - ordered_sum(mw)
}

/// Some `u` with `s + u == target` in floating point, near `target - s`.
fn exact_gap(s: f64, target: f64) -> Option<f64> {
    let mut u = target - s;
    for _ in 0..64 {
        let total = s + u;
        if total == target {
            return Some(u);
        }
        u = if total < target { u.next_up() } else { u.next_down() };
    }
    None
}

fn nudge(mw: &mut [f64], k: usize, cap: f64, target: f64) -> Option<f64> {
    let mut v = mw[k];
    for _ in 0..64 {
        mw[k] = v;
        let total = ordered_sum(mw);
        if total == target {
            return (v >= 0.0 && v <= cap).then_some(v);
        }
        v = if total < target { v.next_up() } else { v.next_down() };
    }
    None
}

/// Sum of head-derated capacities.
pub fn plant_capacity(nominals: &[f64], head_ft: f64, rated_head_ft: f64, alpha: f64) -> Result<f64> {
    nominals.iter().map(|&n| pmax_available(n, head_ft, rated_head_ft, alpha)).sum()
}
