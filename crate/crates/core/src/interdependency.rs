//! Upstream/downstream coupling: seasonal lag from flow cross-correlation,
//! then a lag-aligned regression of downstream MW on upstream MW and head.

use std::collections::{BTreeMap, HashMap};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::datastore::{PlantSample, Store};
use crate::error::{Error, Result};
use crate::hydrology::{season_of, Season};
use crate::stats::{fit_ols, least_squares, LineFit};

pub const DEFAULT_MAX_LAG: u32 = 12;
const MIN_LAG_OVERLAP: usize = 24;
const MIN_FIT_OVERLAP: usize = 48;
const MIN_BUCKET: usize = 24;

/// Hourly values keyed by timestamp; missing hours are simply absent.
pub type Series = Vec<(DateTime<Utc>, f64)>;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PlantPair {
    pub upstream: String,
    pub downstream: String,
}

impl PlantPair {
    pub fn new(upstream: impl Into<String>, downstream: impl Into<String>) -> Self {
        PlantPair { upstream: upstream.into(), downstream: downstream.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LagProfile {
    pub upstream: String,
    pub downstream: String,
    pub season: Season,
    /// `(lag_hours, pearson r, pairs used)`, ascending by lag.
    pub correlations: Vec<(u32, f64, usize)>,
    pub best_lag: u32,
}

impl LagProfile {
    pub fn coefficient(&self, lag: u32) -> Option<f64> {
        self.correlations.iter().find(|c| c.0 == lag).map(|c| c.1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CascadeLink {
    pub upstream: String,
    pub downstream: String,
    pub season: Season,
    pub lag: u32,
    pub intercept: f64,
    pub beta_upstream_mw: f64,
    /// Zero when upstream head was constant over the fit and the regressor was dropped.
    pub beta_upstream_head: f64,
    pub head_dropped: bool,
    /// Standard errors of (intercept, beta_mw[, beta_head]).
    pub std_errors: Vec<f64>,
    pub r_squared: f64,
    pub samples: usize,
}

impl CascadeLink {
    pub fn predict(&self, upstream_mw: f64, upstream_head: f64) -> f64 {
        self.intercept + self.beta_upstream_mw * upstream_mw + self.beta_upstream_head * upstream_head
    }
}

/// Everything the `lag` report carries, and what dispatch reads back as links.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LagReport {
    pub profiles: Vec<LagProfile>,
    pub links: Vec<CascadeLink>,
}

pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::validation("series lengths differ"));
    }
    if x.len() < 3 {
        return Err(Error::InsufficientData("correlation needs at least 3 pairs".into()));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::UndefinedCorrelation("a series is constant".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

fn hour_key(ts: &DateTime<Utc>) -> i64 {
    ts.timestamp().div_euclid(3600)
}

fn seasonal_index(series: &[(DateTime<Utc>, f64)], season: Season) -> HashMap<i64, f64> {
    series
        .iter()
        .filter(|(t, v)| season_of(t) == season && v.is_finite())
        .map(|(t, v)| (hour_key(t), *v))
        .collect()
}

/// Pairs `upstream(t)` with `downstream(t + lag)`; both hours must lie in `season`.
fn lagged_pairs(
    up: &[(DateTime<Utc>, f64)],
    down: &HashMap<i64, f64>,
    season: Season,
    lag: u32,
) -> (Vec<f64>, Vec<f64>) {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (t, v) in up {
        if season_of(t) != season || !v.is_finite() {
            continue;
        }
        if let Some(d) = down.get(&(hour_key(t) + lag as i64)) {
            xs.push(*v);
            ys.push(*d);
        }
    }
    (xs, ys)
}

pub fn lag_scan(
    pair: &PlantPair,
    upstream_flow: &[(DateTime<Utc>, f64)],
    downstream_flow: &[(DateTime<Utc>, f64)],
    max_lag: u32,
    season: Season,
) -> Result<LagProfile> {
    let down = seasonal_index(downstream_flow, season);
    let mut correlations = Vec::with_capacity(max_lag as usize + 1);
    for lag in 0..=max_lag {
        let (xs, ys) = lagged_pairs(upstream_flow, &down, season, lag);
        if xs.len() < MIN_LAG_OVERLAP {
            return Err(Error::InsufficientData(format!(
                "{season}: {} overlapping hours at lag {lag}, need {MIN_LAG_OVERLAP}",
                xs.len()
            )));
        }
        correlations.push((lag, pearson(&xs, &ys)?, xs.len()));
    }
    // Strict comparison keeps the smallest lag on ties.
    let mut best = correlations[0];
    for c in &correlations[1..] {
        if c.1 > best.1 {
            best = *c;
        }
    }
    Ok(LagProfile {
        upstream: pair.upstream.clone(),
        downstream: pair.downstream.clone(),
        season,
        correlations,
        best_lag: best.0,
    })
}

/// Upstream `(timestamp, mw, head)` observation.
pub type UpstreamPoint = (DateTime<Utc>, f64, f64);

fn aligned(
    upstream: &[UpstreamPoint],
    downstream_mw: &[(DateTime<Utc>, f64)],
    season: Season,
    lag: u32,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let down = seasonal_index(downstream_mw, season);
    let (mut mw, mut head, mut y) = (Vec::new(), Vec::new(), Vec::new());
    for (t, m, h) in upstream {
        if season_of(t) != season || !m.is_finite() || !h.is_finite() {
            continue;
        }
        if let Some(d) = down.get(&(hour_key(t) + lag as i64)) {
            mw.push(*m);
            head.push(*h);
            y.push(*d);
        }
    }
    (mw, head, y)
}

/// Shifts downstream MW back by `lag` and fits `down = a + b * up_mw + c * up_head`.
pub fn align_and_fit(
    pair: &PlantPair,
    season: Season,
    upstream: &[UpstreamPoint],
    downstream_mw: &[(DateTime<Utc>, f64)],
    lag: u32,
) -> Result<CascadeLink> {
    let (mw, head, y) = aligned(upstream, downstream_mw, season, lag);
    if y.len() < MIN_FIT_OVERLAP {
        return Err(Error::InsufficientData(format!(
            "{} aligned hours, need {MIN_FIT_OVERLAP}",
            y.len()
        )));
    }
    if mw.iter().all(|&v| v == mw[0]) {
        return Err(Error::Singular("upstream MW is constant".into()));
    }
    let head_dropped = head.iter().all(|&v| v == head[0]);
    let fit = if head_dropped {
        least_squares(&[&mw], &y)?
    } else {
        least_squares(&[&mw, &head], &y)?
    };
    Ok(CascadeLink {
        upstream: pair.upstream.clone(),
        downstream: pair.downstream.clone(),
        season,
        lag,
        intercept: fit.coefficients[0],
        beta_upstream_mw: fit.coefficients[1],
        beta_upstream_head: if head_dropped { 0.0 } else { fit.coefficients[2] },
        head_dropped,
        std_errors: fit.std_errors,
        r_squared: fit.r_squared,
        samples: fit.n,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeadBucket {
    pub low_ft: f64,
    pub high_ft: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketSummary {
    pub bucket: HeadBucket,
    pub samples: usize,
    pub mean_head_ft: f64,
    pub mean_upstream_mw: f64,
    pub mean_downstream_mw: f64,
    /// Downstream MW on upstream MW within the bucket.
    pub regression: LineFit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadComparison {
    pub summaries: Vec<BucketSummary>,
    /// Buckets left out for holding fewer than the minimum sample count.
    pub excluded: Vec<(HeadBucket, usize)>,
}

/// One regression per upstream-head bucket (`low <= head < high`) on lag-aligned data.
pub fn head_partition_compare(
    season: Season,
    upstream: &[UpstreamPoint],
    downstream_mw: &[(DateTime<Utc>, f64)],
    lag: u32,
    buckets: &[HeadBucket],
) -> Result<HeadComparison> {
    if buckets.len() < 2 {
        return Err(Error::validation("head comparison needs at least 2 buckets"));
    }
    let (mw, head, y) = aligned(upstream, downstream_mw, season, lag);
    let mut summaries = Vec::new();
    let mut excluded = Vec::new();
    for b in buckets {
        let idx: Vec<usize> =
            (0..head.len()).filter(|&i| head[i] >= b.low_ft && head[i] < b.high_ft).collect();
        if idx.len() < MIN_BUCKET {
            log::warn!(
                "head bucket [{}, {}) has {} samples, excluded",
                b.low_ft,
                b.high_ft,
                idx.len()
            );
            excluded.push((*b, idx.len()));
            continue;
        }
        let xs: Vec<f64> = idx.iter().map(|&i| mw[i]).collect();
        let ys: Vec<f64> = idx.iter().map(|&i| y[i]).collect();
        let n = idx.len() as f64;
        summaries.push(BucketSummary {
            bucket: *b,
            samples: idx.len(),
            mean_head_ft: idx.iter().map(|&i| head[i]).sum::<f64>() / n,
            mean_upstream_mw: xs.iter().sum::<f64>() / n,
            mean_downstream_mw: ys.iter().sum::<f64>() / n,
            regression: fit_ols(&xs, &ys)?,
        });
    }
    if summaries.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "{} populated head buckets, need 2",
            summaries.len()
        )));
    }
    Ok(HeadComparison { summaries, excluded })
}

pub fn flow_series(samples: &[PlantSample]) -> Series {
    samples.iter().filter_map(|s| s.flow_cfs.map(|q| (s.timestamp, q))).collect()
}

pub fn mw_series(samples: &[PlantSample]) -> Series {
    samples.iter().filter_map(|s| s.total_mw.map(|p| (s.timestamp, p))).collect()
}

pub fn mw_head_series(samples: &[PlantSample]) -> Vec<UpstreamPoint> {
    samples
        .iter()
        .filter_map(|s| Some((s.timestamp, s.total_mw?, s.head_ft?)))
        .collect()
}

/// Lag profile and fitted link for each season with enough data.
pub fn analyze_pair(store: &Store, pair: &PlantPair, max_lag: u32) -> Result<LagReport> {
    let up = store.plant_samples(&pair.upstream)?;
    let down = store.plant_samples(&pair.downstream)?;
    let (up_flow, down_flow) = (flow_series(&up), flow_series(&down));
    let (up_mh, down_mw) = (mw_head_series(&up), mw_series(&down));
    let mut report = LagReport::default();
    let mut failures: BTreeMap<Season, String> = BTreeMap::new();
    for season in Season::ALL {
        match lag_scan(pair, &up_flow, &down_flow, max_lag, season) {
            Ok(profile) => {
                match align_and_fit(pair, season, &up_mh, &down_mw, profile.best_lag) {
                    Ok(link) => report.links.push(link),
                    Err(e) => {
                        failures.insert(season, e.to_string());
                    }
                }
                report.profiles.push(profile);
            }
            Err(e) => {
                failures.insert(season, e.to_string());
            }
        }
    }
    for (season, why) in &failures {
        log::info!("{} -> {} {season}: {why}", pair.upstream, pair.downstream);
    }
    if report.profiles.is_empty() {
        return Err(Error::InsufficientData(format!(
            "no season of {} -> {} has enough overlapping data",
            pair.upstream, pair.downstream
        )));
    }
    Ok(report)
}
