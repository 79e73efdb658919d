//! End-to-end dispatch: scenario window, plant targets, recalibration, model
//! prediction, allocation, efficiency correction and case rows.

use std::collections::{BTreeMap, BTreeSet};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::{
    allocate_units, pmax_available, recalibrate_cascade, validate_and_correct, CorrectionReport,
    DispatchRow, PlantTarget, TargetSource, UnitDispatch, DEFAULT_ALPHA,
};
use crate::datastore::Store;
use crate::efficiency::{EfficiencyCurve, DEFAULT_THRESHOLD};
use crate::error::{Error, Result};
use crate::hydrology::{select_scenario_window, HydroScenario};
use crate::interdependency::CascadeLink;
use crate::ml::{predict_with_threshold, PlantPrediction, TrainedPlantModel};

fn default_alpha() -> f64 {
    DEFAULT_ALPHA
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DispatchRequest {
    pub plants: Vec<String>,
    pub scenario: HydroScenario,
    /// Efficiency threshold for validation; defaults to 0.90.
    #[serde(default)]
    pub threshold: Option<f64>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    /// Plant MW targets that replace the scenario mean.
    #[serde(default)]
    pub targets: BTreeMap<String, f64>,
    /// Per-unit reference MW that replaces the scenario mean in `Pgen`.
    #[serde(default)]
    pub reference_mw: BTreeMap<String, f64>,
}

impl DispatchRequest {
    pub fn new(plants: Vec<String>, scenario: HydroScenario) -> Self {
        DispatchRequest {
            plants,
            scenario,
            threshold: None,
            seed: 0,
            alpha: DEFAULT_ALPHA,
            targets: BTreeMap::new(),
            reference_mw: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantDispatch {
    pub project: String,
    pub window_start: DateTime<Utc>,
    pub window_end: DateTime<Utc>,
    pub initial: PlantTarget,
    pub target: PlantTarget,
    pub capacity_mw: f64,
    pub prediction: PlantPrediction,
    pub unserved_mw: f64,
    pub correction: CorrectionReport,
    pub dispatched_mw: f64,
}

/// Run manifest: everything needed to reproduce and audit a dispatch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DispatchRun {
    pub request: DispatchRequest,
    pub season: crate::hydrology::Season,
    pub links_used: Vec<CascadeLink>,
    pub model_fingerprints: BTreeMap<String, String>,
    pub plants: Vec<PlantDispatch>,
    pub rows: Vec<DispatchRow>,
}

/// FNV-1a over the model's JSON text.
fn fingerprint(model: &TrainedPlantModel) -> Result<String> {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in serde_json::to_vec(model)? {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    Ok(format!("v{}-{h:016x}", model.version))
}

fn mean_of(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let (mut s, mut n) = (0.0, 0usize);
    for v in values.flatten() {
        s += v;
        n += 1;
    }
    (n > 0).then(|| s / n as f64)
}

struct Prepared {
    window: (DateTime<Utc>, DateTime<Utc>),
    target: PlantTarget,
    rated_head: f64,
    units: Vec<crate::datastore::StaticUnit>,
}

fn prepare(store: &Store, req: &DispatchRequest, plant: &str) -> Result<Prepared> {
    let info = store.static_plant(plant)?.ok_or_else(|| Error::not_found("plant", plant))?;
    let window = select_scenario_window(store, &req.scenario, plant)?;
    let samples = store.query_plant_window(plant, window.0, window.1)?;
    let head = mean_of(samples.iter().map(|s| s.head_ft))
        .ok_or_else(|| Error::DataQuality(format!("{plant}: no head data in the scenario window")))?;
    let storage = mean_of(samples.iter().map(|s| s.storage_af)).unwrap_or(0.0);
    let (target_mw, source) = match req.targets.get(plant) {
        Some(&mw) => (mw, TargetSource::User),
        None => (
            mean_of(samples.iter().map(|s| s.total_mw))
                .ok_or_else(|| Error::DataQuality(format!("{plant}: no MW data in the scenario window")))?,
            TargetSource::Historical,
        ),
    };
    let target = PlantTarget { project: plant.to_string(), target_mw, head_ft: head, storage_af: storage, source };
    target.validate()?;
    Ok(Prepared { window, target, rated_head: info.rated_head_ft, units: store.join_units_of(plant)? })
}

fn load_curves(store: &Store, unit_ids: &[String], threshold: f64) -> Result<BTreeMap<String, EfficiencyCurve>> {
    let mut out = BTreeMap::new();
    for u in unit_ids {
        let pts = store.efficiency_points(u)?;
        if pts.is_empty() {
            continue;
        }
        match EfficiencyCurve::from_points(u, pts, threshold) {
            Ok(c) => {
                out.insert(u.clone(), c);
            }
            Err(e) => log::warn!("unit {u}: stored curve unusable: {e}"),
        }
    }
    Ok(out)
}

/// Runs the full pipeline for the requested plants. Deterministic in its
/// inputs: the same store, models, links and request give identical rows.
pub fn run_dispatch(
    store: &Store,
    req: &DispatchRequest,
    models: &BTreeMap<String, TrainedPlantModel>,
    links: &[CascadeLink],
) -> Result<DispatchRun> {
    let plants: BTreeSet<&str> = req.plants.iter().map(String::as_str).collect();
    if plants.is_empty() {
        return Err(Error::validation("no plants requested"));
    }
    let threshold = req.threshold.unwrap_or(DEFAULT_THRESHOLD);
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(Error::validation(format!("efficiency threshold {threshold} outside (0, 1]")));
    }
    let season = req.scenario.season();
    let mut prepared = BTreeMap::new();
    let mut fingerprints = BTreeMap::new();
    for &p in &plants {
        let model = models.get(p).ok_or_else(|| Error::not_found("trained model", p))?;
        fingerprints.insert(p.to_string(), fingerprint(model)?);
        prepared.insert(p, prepare(store, req, p)?);
    }

    let mut capacity = BTreeMap::new();
    for (p, prep) in &prepared {
        let cap: f64 = prep
            .units
            .iter()
            .map(|u| pmax_available(u.nominal_pmax_mw, prep.target.head_ft, prep.rated_head, req.alpha))
            .sum::<Result<f64>>()?;
        capacity.insert(p.to_string(), cap);
    }
    let links_used: Vec<CascadeLink> = links
        .iter()
        .filter(|l| l.season == season && plants.contains(l.upstream.as_str()) && plants.contains(l.downstream.as_str()))
        .cloned()
        .collect();
    let initial: Vec<PlantTarget> = prepared.values().map(|p| p.target.clone()).collect();
    let recalibrated = recalibrate_cascade(&initial, &links_used, &capacity)?;

    let mut out_plants = Vec::new();
    let mut rows = Vec::new();
    for (target, (plant, prep)) in recalibrated.into_iter().zip(&prepared) {
        let model = &models[*plant];
        let prediction =
            predict_with_threshold(model, [target.target_mw, target.head_ft, target.storage_af], model.config.threshold);
        let statics: BTreeMap<&str, &crate::datastore::StaticUnit> =
            prep.units.iter().map(|u| (u.unit_id.as_str(), u)).collect();

        let mut dispatch = Vec::new();
        let mut unserved = 0.0;
        for (cat, pred) in model.spec.categories.iter().zip(&prediction.categories) {
            let mut caps = Vec::with_capacity(cat.size());
            for id in &cat.unit_ids {
                let u = statics.get(id.as_str()).ok_or_else(|| {
                    Error::Incompatible(format!("model unit {id} is not a unit of {plant} in the store"))
                })?;
                caps.push(pmax_available(u.nominal_pmax_mw, target.head_ft, prep.rated_head, req.alpha)?);
            }
            let alloc = allocate_units(pred.cat_mw, pred.active_units, &caps)?;
            unserved += alloc.unserved_mw;
            for (k, id) in cat.unit_ids.iter().enumerate() {
                dispatch.push(UnitDispatch {
                    unit_id: id.clone(),
                    category: cat.label.clone(),
                    mw: alloc.unit_mw[k],
                    pmax_available: caps[k],
                    active: alloc.active[k] && alloc.unit_mw[k] > 0.0,
                });
            }
        }
        let unit_ids: Vec<String> = dispatch.iter().map(|u| u.unit_id.clone()).collect();
        let curves = load_curves(store, &unit_ids, threshold)?;
        let correction = validate_and_correct(&dispatch, &curves);

        let (start, end) = prep.window;
        let mut observed: BTreeMap<String, Vec<Option<f64>>> = BTreeMap::new();
        for s in store.unit_samples_of(plant)? {
            if s.timestamp >= start && s.timestamp < end {
                observed.entry(s.unit_id).or_default().push(s.mw);
            }
        }
        for u in &correction.dispatch {
            let st = statics[u.unit_id.as_str()];
            let pgen_ref = req
                .reference_mw
                .get(&u.unit_id)
                .copied()
                .or_else(|| observed.get(&u.unit_id).and_then(|v| mean_of(v.iter().copied())))
                .unwrap_or(0.0);
            rows.push(DispatchRow {
                project: plant.to_string(),
                unit_id: u.unit_id.clone(),
                pgen_ref,
                pmax_nominal: st.nominal_pmax_mw,
                head_ft: target.head_ft,
                pgen_calculated: if u.active { u.mw } else { 0.0 },
                pmax_available: u.pmax_available,
            });
        }
        let dispatched_mw = super::plant_total(&correction.dispatch);
        out_plants.push(PlantDispatch {
            project: plant.to_string(),
            window_start: start,
            window_end: end,
            initial: prep.target.clone(),
            target,
            capacity_mw: capacity[*plant],
            prediction,
            unserved_mw: unserved,
            correction,
            dispatched_mw,
        });
    }
    rows.sort_by(|a, b| (&a.project, &a.unit_id).cmp(&(&b.project, &b.unit_id)));
    Ok(DispatchRun {
        request: req.clone(),
        season,
        links_used,
        model_fingerprints: fingerprints,
        plants: out_plants,
        rows,
    })
}
