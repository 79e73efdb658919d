//! Unit-commitment learning: categories by nominal power, a two-step model per
//! category (existence classifier, then a conditional regressor over category
//! MW and per-unit MW) and unit-level prediction from plant-level inputs.

mod mlp;

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::datastore::{PlantSample, StaticUnit, Store, UnitSample};
use crate::error::{Error, Result};
use crate::stats;

pub use mlp::{grad_check, train_sgd, Gradient, Head, Layer, Mlp, SgdConfig};

/// Relative nominal-power tolerance within a category.
pub const CATEGORY_TOLERANCE: f64 = 0.01;
pub const MIN_ACTIVE_ROWS: usize = 50;
pub const MODEL_FORMAT: &str = "hydrodispatch-model";
pub const MODEL_VERSION: u32 = 1;
pub const INPUT_NAMES: [&str; 3] = ["total_mw", "head_ft", "storage_af"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Category {
    pub label: String,
    pub nominal_pmax_mw: f64,
    pub unit_ids: Vec<String>,
}

impl Category {
    pub fn size(&self) -> usize {
        self.unit_ids.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategorySpec {
    pub plant: String,
    pub categories: Vec<Category>,
}

impl CategorySpec {
    pub fn category_of(&self, unit_id: &str) -> Option<usize> {
        self.categories.iter().position(|c| c.unit_ids.iter().any(|u| u == unit_id))
    }
}

/// Groups units by nominal power. Units are visited in descending nominal
/// order; a unit joins the current category when it is within 1% of that
/// category's largest member, otherwise it opens the next one.
pub fn categorize_units(units: &[StaticUnit]) -> Result<CategorySpec> {
    let first = units.first().ok_or_else(|| Error::validation("no units to categorize"))?;
    let plant = first.project_name.clone();
    let mut sorted: Vec<&StaticUnit> = units.iter().collect();
    sorted.sort_by(|a, b| {
        b.nominal_pmax_mw.total_cmp(&a.nominal_pmax_mw).then_with(|| a.unit_id.cmp(&b.unit_id))
    });
    let mut categories: Vec<Category> = Vec::new();
    for u in sorted {
        match categories.last_mut() {
            Some(c)
                if (c.nominal_pmax_mw - u.nominal_pmax_mw).abs()
                    <= CATEGORY_TOLERANCE * c.nominal_pmax_mw =>
            {
                c.unit_ids.push(u.unit_id.clone())
            }
            _ => categories.push(Category {
                label: format!("C{}", categories.len() + 1),
                nominal_pmax_mw: u.nominal_pmax_mw,
                unit_ids: vec![u.unit_id.clone()],
            }),
        }
    }
    Ok(CategorySpec { plant, categories })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CategoryTarget {
    pub exist: bool,
    pub cat_mw: f64,
    /// Mean output per active unit.
    pub unit_mw: f64,
}

impl CategoryTarget {
    pub const INACTIVE: CategoryTarget = CategoryTarget { exist: false, cat_mw: 0.0, unit_mw: 0.0 };
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingRow {
    pub timestamp: DateTime<Utc>,
    /// `(total_mw, head_ft, storage_af)`.
    pub inputs: [f64; 3],
    pub targets: Vec<CategoryTarget>,
}

/// One row per hour present in both tables with all three plant inputs set,
/// in timestamp order.
pub fn build_training_rows(
    plant: &[PlantSample],
    units: &[UnitSample],
    spec: &CategorySpec,
) -> Result<Vec<TrainingRow>> {
    let membership: HashMap<&str, usize> = spec
        .categories
        .iter()
        .enumerate()
        .flat_map(|(i, c)| c.unit_ids.iter().map(move |u| (u.as_str(), i)))
        .collect();
    let mut by_hour: BTreeMap<DateTime<Utc>, Vec<(f64, usize)>> = BTreeMap::new();
    for u in units {
        let Some(&cat) = membership.get(u.unit_id.as_str()) else { continue };
        let entry = by_hour.entry(u.timestamp).or_default();
        if let (true, Some(mw)) = (u.active, u.mw) {
            entry.push((mw, cat));
        }
    }
    let mut rows = Vec::new();
    for p in plant {
        let Some(active) = by_hour.get(&p.timestamp) else { continue };
        let (Some(total), Some(head), Some(storage)) = (p.total_mw, p.head_ft, p.storage_af) else {
            continue;
        };
        let mut sums = vec![(0.0, 0usize); spec.categories.len()];
        for &(mw, cat) in active {
            sums[cat].0 += mw;
            sums[cat].1 += 1;
        }
        let targets = sums
            .into_iter()
            .map(|(mw, n)| {
                if n == 0 {
                    CategoryTarget::INACTIVE
                } else {
                    CategoryTarget { exist: true, cat_mw: mw, unit_mw: mw / n as f64 }
                }
            })
            .collect();
        rows.push(TrainingRow { timestamp: p.timestamp, inputs: [total, head, storage], targets });
    }
    if rows.is_empty() {
        return Err(Error::InsufficientData("no hours join plant and unit samples".into()));
    }
    rows.sort_by_key(|r| r.timestamp);
    Ok(rows)
}

/// Category spec and training rows for one plant in the store.
pub fn plant_training_set(store: &Store, project: &str) -> Result<(CategorySpec, Vec<TrainingRow>)> {
    let units = store.join_units_of(project)?;
    if units.is_empty() {
        return Err(Error::not_found("units of plant", project));
    }
    let spec = categorize_units(&units)?;
    let rows = build_training_rows(&store.plant_samples(project)?, &store.unit_samples_of(project)?, &spec)?;
    Ok((spec, rows))
}

/// Per-feature standardization; a zero deviation is stored as 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalizer {
    pub fn fit<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let first = rows.first().ok_or_else(|| Error::InsufficientData("no rows to normalize".into()))?;
        let dims = first.as_ref().len();
        let n = rows.len() as f64;
        let mut mean = vec![0.0; dims];
        for r in rows {
            for (m, v) in mean.iter_mut().zip(r.as_ref()) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; dims];
        for r in rows {
            for ((s, v), m) in var.iter_mut().zip(r.as_ref()).zip(&mean) {
                *s += (v - m).powi(2);
            }
        }
        let std = var.into_iter().map(|s| (s / n).sqrt()).map(|s| if s > 0.0 { s } else { 1.0 }).collect();
        Ok(Normalizer { mean, std })
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.mean).zip(&self.std).map(|((v, m), s)| (v - m) / s).collect()
    }

    pub fn invert(&self, z: &[f64]) -> Vec<f64> {
        z.iter().zip(&self.mean).zip(&self.std).map(|((v, m), s)| v * s + m).collect()
    }

    /// Indices of features further than `k` deviations from the mean.
    pub fn outliers(&self, x: &[f64], k: f64) -> Vec<usize> {
        self.apply(x).iter().enumerate().filter(|(_, z)| z.abs() > k).map(|(i, _)| i).collect()
    }
}

/// Missing fields take their defaults when deserialized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub seed: u64,
    pub epochs: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub hidden: Vec<usize>,
    /// Leading chronological fraction used for training.
    pub train_fraction: f64,
    pub threshold: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            seed: 42,
            epochs: 200,
            learning_rate: 1e-3,
            momentum: 0.9,
            batch_size: 32,
            hidden: vec![32, 32, 16, 8],
            train_fraction: 0.8,
            threshold: 0.5,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.epochs > 0
            && self.batch_size > 0
            && self.learning_rate > 0.0
            && self.learning_rate.is_finite()
            && (0.0..1.0).contains(&self.momentum)
            && self.train_fraction > 0.0
            && self.train_fraction <= 1.0
            && self.threshold > 0.0
            && self.threshold < 1.0
            && self.hidden.iter().all(|&h| h > 0);
        if !ok {
            return Err(Error::validation(format!("invalid training config {self:?}")));
        }
        Ok(())
    }

    fn sizes(&self, outputs: usize) -> Vec<usize> {
        let mut s = vec![INPUT_NAMES.len()];
        s.extend(&self.hidden);
        s.push(outputs);
        s
    }

    fn sgd(&self, salt: u64) -> SgdConfig {
        SgdConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            momentum: self.momentum,
            seed: self.seed.wrapping_add(salt),
        }
    }

    fn split_point(&self, n: usize) -> usize {
        ((n as f64) * self.train_fraction).round().clamp(1.0, n as f64) as usize
    }
}

/// Chronological split of time-ordered rows.
pub fn split_rows<'a>(rows: &'a [TrainingRow], cfg: &TrainConfig) -> (&'a [TrainingRow], &'a [TrainingRow]) {
    rows.split_at(cfg.split_point(rows.len()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierFit {
    pub net: Mlp,
    pub train_accuracy: f64,
    /// Accuracy on the held-out rows; `None` when none were held out.
    pub accuracy: Option<f64>,
    pub test_rows: usize,
}

fn accuracy(net: &Mlp, norm: &Normalizer, rows: &[TrainingRow], category: usize, threshold: f64) -> Option<f64> {
    if rows.is_empty() {
        return None;
    }
    let hits = rows
        .iter()
        .filter(|r| (net.forward(&norm.apply(&r.inputs))[0] >= threshold) == r.targets[category].exist)
        .count();
    Some(hits as f64 / rows.len() as f64)
}

fn check_category(rows: &[TrainingRow], category: usize) -> Result<()> {
    if rows.iter().any(|r| r.targets.len() <= category) {
        return Err(Error::validation(format!("category index {category} out of range")));
    }
    Ok(())
}

/// Existence classifier on pre-split rows; inputs go through `norm`.
pub fn fit_classifier(
    train: &[TrainingRow],
    test: &[TrainingRow],
    category: usize,
    norm: &Normalizer,
    cfg: &TrainConfig,
) -> Result<ClassifierFit> {
    check_category(train, category)?;
    let positives = train.iter().filter(|r| r.targets[category].exist).count();
    if positives == 0 || positives == train.len() {
        return Err(Error::InsufficientData(format!(
            "category {category} has a single class in training rows; use a constant predictor"
        )));
    }
    let xs: Vec<Vec<f64>> = train.iter().map(|r| norm.apply(&r.inputs)).collect();
    let ys: Vec<Vec<f64>> =
        train.iter().map(|r| vec![if r.targets[category].exist { 1.0 } else { 0.0 }]).collect();
    let mut net = Mlp::new(&cfg.sizes(1), Head::Logistic, cfg.seed.wrapping_add(2 * category as u64))?;
    train_sgd(&mut net, &xs, &ys, &cfg.sgd(2 * category as u64));
    let train_accuracy = accuracy(&net, norm, train, category, cfg.threshold).unwrap_or(0.0);
    let acc = accuracy(&net, norm, test, category, cfg.threshold);
    Ok(ClassifierFit { net, train_accuracy, accuracy: acc, test_rows: test.len() })
}

/// Splits chronologically, standardizes from the training split and fits the
/// existence classifier for `category`.
pub fn train_classifier(rows: &[TrainingRow], category: usize, cfg: &TrainConfig) -> Result<(ClassifierFit, Normalizer)> {
    let (train, test) = split_rows(rows, cfg);
    let norm = Normalizer::fit(&train.iter().map(|r| r.inputs).collect::<Vec<_>>())?;
    let fit = fit_classifier(train, test, category, &norm, cfg)?;
    Ok((fit, norm))
}

/// Residual spread of one regressor output on held-out rows.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CiStat {
    pub target_mean: f64,
    /// 10th and 90th residual percentiles (prediction minus target).
    pub q10: f64,
    pub q90: f64,
    /// `max(|q10|, |q90|)`.
    pub half_width: f64,
    /// `half_width / |target_mean|`.
    pub relative: f64,
}

impl CiStat {
    fn from_residuals(residuals: &mut [f64], targets: &[f64]) -> Option<Self> {
        residuals.sort_by(f64::total_cmp);
        let q10 = stats::percentile_sorted(residuals, 10.0)?;
        let q90 = stats::percentile_sorted(residuals, 90.0)?;
        let target_mean = stats::mean(targets)?;
        let half_width = q10.abs().max(q90.abs());
        let relative = if target_mean != 0.0 { half_width / target_mean.abs() } else { f64::INFINITY };
        Some(CiStat { target_mean, q10, q90, half_width, relative })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressorFit {
    pub net: Mlp,
    /// Standardization of `(cat_mw, unit_mw)` learned from the training rows.
    pub targets: Normalizer,
    /// `[cat_mw, unit_mw]` held-out residual spread; `None` without held-out rows.
    pub ci: Option<[CiStat; 2]>,
    pub train_rows: usize,
}

impl RegressorFit {
    pub fn predict(&self, normalized_inputs: &[f64]) -> [f64; 2] {
        let out = self.targets.invert(&self.net.forward(normalized_inputs));
        [out[0], out[1]]
    }
}

/// Conditional regressor on pre-split rows; only rows with `exist` are used.
pub fn fit_regressor(
    train: &[TrainingRow],
    test: &[TrainingRow],
    category: usize,
    norm: &Normalizer,
    cfg: &TrainConfig,
) -> Result<RegressorFit> {
    check_category(train, category)?;
    let active = |rows: &[TrainingRow]| -> Vec<(Vec<f64>, [f64; 2])> {
        rows.iter()
            .filter(|r| r.targets[category].exist)
            .map(|r| (r.inputs.to_vec(), [r.targets[category].cat_mw, r.targets[category].unit_mw]))
            .collect()
    };
    let train_set = active(train);
    if train_set.len() < MIN_ACTIVE_ROWS {
        return Err(Error::InsufficientData(format!(
            "category {category} has {} active training rows, need {MIN_ACTIVE_ROWS}",
            train_set.len()
        )));
    }
    let targets = Normalizer::fit(&train_set.iter().map(|(_, t)| *t).collect::<Vec<_>>())?;
    let xs: Vec<Vec<f64>> = train_set.iter().map(|(x, _)| norm.apply(x)).collect();
    let ys: Vec<Vec<f64>> = train_set.iter().map(|(_, t)| targets.apply(t)).collect();
    let salt = 2 * category as u64 + 1;
    let mut net = Mlp::new(&cfg.sizes(2), Head::Identity, cfg.seed.wrapping_add(salt))?;
    train_sgd(&mut net, &xs, &ys, &cfg.sgd(salt));
    let mut fit = RegressorFit { net, targets, ci: None, train_rows: train_set.len() };

    let test_set = active(test);
    if !test_set.is_empty() {
        let mut res = [Vec::new(), Vec::new()];
        let mut tgt = [Vec::new(), Vec::new()];
        for (x, t) in &test_set {
            let p = fit.predict(&norm.apply(x));
            for k in 0..2 {
                res[k].push(p[k] - t[k]);
                tgt[k].push(t[k]);
            }
        }
        let [r0, r1] = &mut res;
        fit.ci = CiStat::from_residuals(r0, &tgt[0]).zip(CiStat::from_residuals(r1, &tgt[1])).map(|(a, b)| [a, b]);
    }
    Ok(fit)
}

pub fn train_regressor(rows: &[TrainingRow], category: usize, cfg: &TrainConfig) -> Result<(RegressorFit, Normalizer)> {
    let (train, test) = split_rows(rows, cfg);
    let norm = Normalizer::fit(&train.iter().map(|r| r.inputs).collect::<Vec<_>>())?;
    let fit = fit_regressor(train, test, category, &norm, cfg)?;
    Ok((fit, norm))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ExistModel {
    /// Every training row had the same class.
    Constant { exist: bool },
    Network { net: Mlp },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OutputModel {
    /// Mean `(cat_mw, unit_mw)` of the active rows, used below the row minimum.
    Constant { cat_mw: f64, unit_mw: f64 },
    Network { fit: RegressorFit },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryModel {
    pub label: String,
    pub exist: ExistModel,
    /// `None` when the category was never active in training.
    pub output: Option<OutputModel>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryReport {
    pub label: String,
    pub train_rows: usize,
    pub active_train_rows: usize,
    pub accuracy: Option<f64>,
    pub train_accuracy: Option<f64>,
    pub ci: Option<[CiStat; 2]>,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingReport {
    pub rows: usize,
    pub train_rows: usize,
    pub test_rows: usize,
    pub categories: Vec<CategoryReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedPlantModel {
    pub format: String,
    pub version: u32,
    pub plant: String,
    pub spec: CategorySpec,
    /// Input standardization from the training split.
    pub inputs: Normalizer,
    pub categories: Vec<CategoryModel>,
    pub config: TrainConfig,
    pub report: TrainingReport,
}

fn train_category(
    train: &[TrainingRow],
    test: &[TrainingRow],
    index: usize,
    label: &str,
    norm: &Normalizer,
    cfg: &TrainConfig,
) -> Result<(CategoryModel, CategoryReport)> {
    let active: Vec<&TrainingRow> = train.iter().filter(|r| r.targets[index].exist).collect();
    let mut report = CategoryReport {
        label: label.to_string(),
        train_rows: train.len(),
        active_train_rows: active.len(),
        accuracy: None,
        train_accuracy: None,
        ci: None,
        notes: Vec::new(),
    };
    let exist = if active.is_empty() || active.len() == train.len() {
        let exist = !active.is_empty();
        report.notes.push(format!("single class in training rows, constant exist={exist}"));
        report.accuracy = accuracy_constant(test, index, exist);
        ExistModel::Constant { exist }
    } else {
        let fit = fit_classifier(train, test, index, norm, cfg)?;
        report.accuracy = fit.accuracy;
        report.train_accuracy = Some(fit.train_accuracy);
        ExistModel::Network { net: fit.net }
    };
    let output = if active.is_empty() {
        None
    } else if active.len() < MIN_ACTIVE_ROWS {
        report.notes.push(format!("{} active rows, constant regressor", active.len()));
        let n = active.len() as f64;
        Some(OutputModel::Constant {
            cat_mw: active.iter().map(|r| r.targets[index].cat_mw).sum::<f64>() / n,
            unit_mw: active.iter().map(|r| r.targets[index].unit_mw).sum::<f64>() / n,
        })
    } else {
        let fit = fit_regressor(train, test, index, norm, cfg)?;
        report.ci = fit.ci;
        Some(OutputModel::Network { fit })
    };
    Ok((CategoryModel { label: label.to_string(), exist, output }, report))
}

fn accuracy_constant(rows: &[TrainingRow], category: usize, exist: bool) -> Option<f64> {
    if rows.is_empty() {
        return None;
    }
    Some(rows.iter().filter(|r| r.targets[category].exist == exist).count() as f64 / rows.len() as f64)
}

/// Trains every category of a plant. Categories run on scoped threads; each
/// one is seeded independently so the result does not depend on scheduling.
pub fn train_plant(spec: &CategorySpec, rows: &[TrainingRow], cfg: &TrainConfig) -> Result<TrainedPlantModel> {
    train_plant_with_progress(spec, rows, cfg, &|_, _| {})
}

/// As [`train_plant`], calling `progress(done, total)` as each category finishes.
pub fn train_plant_with_progress(
    spec: &CategorySpec,
    rows: &[TrainingRow],
    cfg: &TrainConfig,
    progress: &(dyn Fn(usize, usize) + Sync),
) -> Result<TrainedPlantModel> {
    cfg.validate()?;
    if rows.len() < 2 {
        return Err(Error::InsufficientData(format!("{} training rows", rows.len())));
    }
    check_category(rows, spec.categories.len().saturating_sub(1))?;
    let (train, test) = split_rows(rows, cfg);
    let norm = Normalizer::fit(&train.iter().map(|r| r.inputs).collect::<Vec<_>>())?;
    let total = spec.categories.len();
    let done = std::sync::atomic::AtomicUsize::new(0);
    let results: Vec<Result<(CategoryModel, CategoryReport)>> = std::thread::scope(|s| {
        let handles: Vec<_> = spec
            .categories
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let (norm, done) = (&norm, &done);
                s.spawn(move || {
                    let r = train_category(train, test, i, &c.label, norm, cfg);
                    progress(done.fetch_add(1, std::sync::atomic::Ordering::SeqCst) + 1, total);
                    r
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("training thread panicked")).collect()
    });
    let mut categories = Vec::new();
    let mut reports = Vec::new();
    for r in results {
        let (m, rep) = r?;
        categories.push(m);
        reports.push(rep);
    }
    Ok(TrainedPlantModel {
        format: MODEL_FORMAT.to_string(),
        version: MODEL_VERSION,
        plant: spec.plant.clone(),
        spec: spec.clone(),
        inputs: norm,
        categories,
        config: cfg.clone(),
        report: TrainingReport {
            rows: rows.len(),
            train_rows: train.len(),
            test_rows: test.len(),
            categories: reports,
        },
    })
}

impl TrainedPlantModel {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Parses a model file, rejecting other formats or versions.
    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        let format = value.get("format").and_then(|v| v.as_str()).unwrap_or("");
        let version = value.get("version").and_then(|v| v.as_u64());
        if format != MODEL_FORMAT || version != Some(MODEL_VERSION as u64) {
            return Err(Error::Incompatible(format!(
                "model file is {format:?} version {version:?}, expected {MODEL_FORMAT:?} version {MODEL_VERSION}"
            )));
        }
        Ok(serde_json::from_value(value)?)
    }

    /// Writes via a sibling temporary file and a rename, so readers never
    /// observe a partial model.
    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let path = path.as_ref();
        let mut tmp = path.as_os_str().to_owned();
        tmp.push(".tmp");
        std::fs::write(&tmp, self.to_json()?)?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryPrediction {
    pub label: String,
    pub probability: f64,
    pub exist: bool,
    pub cat_mw: f64,
    pub unit_mw: f64,
    pub active_units: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantPrediction {
    pub categories: Vec<CategoryPrediction>,
    pub warnings: Vec<String>,
}

/// Active count for a positive decision: `round(cat / unit)` within `[1, size]`.
pub fn active_unit_count(cat_mw: f64, unit_mw: f64, size: usize) -> usize {
    if size == 0 {
        return 0;
    }
    let raw = if unit_mw > 0.0 && cat_mw.is_finite() { (cat_mw / unit_mw).round() } else { 1.0 };
    (raw.max(1.0) as usize).min(size)
}

pub fn predict_categories(model: &TrainedPlantModel, inputs: [f64; 3]) -> PlantPrediction {
    predict_with_threshold(model, inputs, model.config.threshold)
}

pub fn predict_with_threshold(model: &TrainedPlantModel, inputs: [f64; 3], threshold: f64) -> PlantPrediction {
    let warnings = model
        .inputs
        .outliers(&inputs, 3.0)
        .into_iter()
        .map(|i| format!("{} = {} is outside 3 sigma of training data", INPUT_NAMES[i], inputs[i]))
        .collect();
    let z = model.inputs.apply(&inputs);
    let categories = model
        .categories
        .iter()
        .zip(&model.spec.categories)
        .map(|(m, c)| {
            let probability = match &m.exist {
                ExistModel::Constant { exist } => f64::from(u8::from(*exist)),
                ExistModel::Network { net } => net.forward(&z)[0],
            };
            let exist = probability >= threshold;
            let (cat_mw, unit_mw) = match (&m.output, exist) {
                (Some(OutputModel::Constant { cat_mw, unit_mw }), true) => (*cat_mw, *unit_mw),
                (Some(OutputModel::Network { fit }), true) => {
                    let [a, b] = fit.predict(&z);
                    (a.max(0.0), b.max(0.0))
                }
                _ => (0.0, 0.0),
            };
            let active = exist && m.output.is_some();
            CategoryPrediction {
                label: m.label.clone(),
                probability,
                exist: active,
                cat_mw: if active { cat_mw } else { 0.0 },
                unit_mw: if active { unit_mw } else { 0.0 },
                active_units: if active { active_unit_count(cat_mw, unit_mw, c.size()) } else { 0 },
            }
        })
        .collect();
    PlantPrediction { categories, warnings }
}

impl fmt::Display for TrainingReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "rows {} (train {}, test {})", self.rows, self.train_rows, self.test_rows)?;
        for c in &self.categories {
            write!(f, "{}: active {}/{}", c.label, c.active_train_rows, c.train_rows)?;
            if let Some(a) = c.accuracy {
                write!(f, ", accuracy {:.4}", a)?;
            }
            if let Some([m, u]) = c.ci {
                write!(f, ", ci80 cat {:.2}% unit {:.2}%", 100.0 * m.relative, 100.0 * u.relative)?;
            }
            for n in &c.notes {
                write!(f, " [{n}]")?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}
