//! Seasons, water-year classes, scenario windows and the synthetic cascade generator.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, Datelike, Duration, TimeZone, Timelike, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::datastore::{
    parse_timestamp, Bundle, PlantSample, StaticPlant, StaticUnit, Store, UnitSample,
};
use crate::dispatch::pmax_available;
use crate::efficiency::MW_PER_CFS_FT;
use crate::error::{Error, Result};
use crate::stats::percentile_sorted;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Season {
    Winter,
    Spring,
    Summer,
}

impl Season {
    pub const ALL: [Season; 3] = [Season::Winter, Season::Spring, Season::Summer];

    /// Nov-Feb winter, Mar-Jun spring (snowmelt), Jul-Oct summer.
    pub fn of_month(month: u32) -> Season {
        match month {
            11 | 12 | 1 | 2 => Season::Winter,
            3..=6 => Season::Spring,
            7..=10 => Season::Summer,
            _ => panic!("month {month} out of range"),
        }
    }

    /// `[start, end)` of this season attached to calendar `year`.
    /// Winter is the one whose January falls in `year`.
    pub fn window(self, year: i32) -> (DateTime<Utc>, DateTime<Utc>) {
        let at = |y: i32, m: u32| Utc.with_ymd_and_hms(y, m, 1, 0, 0, 0).unwrap();
        match self {
            Season::Winter => (at(year - 1, 11), at(year, 3)),
            Season::Spring => (at(year, 3), at(year, 7)),
            Season::Summer => (at(year, 7), at(year, 11)),
        }
    }
}

impl fmt::Display for Season {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Season::Winter => "winter",
            Season::Spring => "spring",
            Season::Summer => "summer",
        })
    }
}

impl FromStr for Season {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "winter" => Ok(Season::Winter),
            "spring" => Ok(Season::Spring),
            "summer" => Ok(Season::Summer),
            other => Err(Error::validation(format!("unknown season {other:?}"))),
        }
    }
}

pub fn season_of(ts: &DateTime<Utc>) -> Season {
    Season::of_month(ts.month())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WaterYearClass {
    Dry,
    Average,
    Wet,
}

impl fmt::Display for WaterYearClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            WaterYearClass::Dry => "dry",
            WaterYearClass::Average => "avg",
            WaterYearClass::Wet => "wet",
        })
    }
}

impl FromStr for WaterYearClass {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "dry" => Ok(WaterYearClass::Dry),
            "avg" | "average" => Ok(WaterYearClass::Average),
            "wet" => Ok(WaterYearClass::Wet),
            other => Err(Error::validation(format!("unknown water-year class {other:?}"))),
        }
    }
}

/// Either a literal historical window or a (water-year class, season) request.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HydroScenario {
    Historical { start: DateTime<Utc>, end: DateTime<Utc> },
    Synthetic { water_year_class: WaterYearClass, season: Season },
}

impl HydroScenario {
    /// Season used to pick seasonal cascade links.
    pub fn season(&self) -> Season {
        match self {
            HydroScenario::Historical { start, .. } => season_of(start),
            HydroScenario::Synthetic { season, .. } => *season,
        }
    }
}

impl fmt::Display for HydroScenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            HydroScenario::Historical { start, end } => write!(
                f,
                "hist:{}..{}",
                crate::datastore::format_timestamp(start),
                crate::datastore::format_timestamp(end)
            ),
            HydroScenario::Synthetic { water_year_class, season } => {
                write!(f, "{water_year_class}:{season}")
            }
        }
    }
}

/// `dry|avg|wet:winter|spring|summer` or `hist:START..END`.
impl FromStr for HydroScenario {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let (head, tail) = s
            .split_once(':')
            .ok_or_else(|| Error::validation(format!("scenario {s:?} lacks ':'")))?;
        if head.eq_ignore_ascii_case("hist") {
            let (a, b) = tail
                .split_once("..")
                .ok_or_else(|| Error::validation("historical scenario needs START..END"))?;
            let (start, end) = (parse_timestamp(a)?, parse_timestamp(b)?);
            if start >= end {
                return Err(Error::validation("historical window must have start < end"));
            }
            Ok(HydroScenario::Historical { start, end })
        } else {
            Ok(HydroScenario::Synthetic {
                water_year_class: head.parse()?,
                season: tail.parse()?,
            })
        }
    }
}

/// Mean flow per calendar year, ignoring null flows.
pub fn annual_mean_flows(samples: &[PlantSample]) -> BTreeMap<i32, f64> {
    let mut acc: BTreeMap<i32, (f64, usize)> = BTreeMap::new();
    for s in samples {
        if let Some(q) = s.flow_cfs {
            let e = acc.entry(s.timestamp.year()).or_default();
            e.0 += q;
            e.1 += 1;
        }
    }
    acc.into_iter().map(|(y, (sum, n))| (y, sum / n as f64)).collect()
}

/// Tercile classification of one year's mean against all annual means.
pub fn classify_year(annual_means: &BTreeMap<i32, f64>, year: i32) -> Result<WaterYearClass> {
    if annual_means.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "{} years of history, need at least 3",
            annual_means.len()
        )));
    }
    let value = *annual_means
        .get(&year)
        .ok_or_else(|| Error::not_found("year", year.to_string()))?;
    let mut sorted: Vec<f64> = annual_means.values().copied().collect();
    sorted.sort_by(f64::total_cmp);
    let low = percentile_sorted(&sorted, 33.3).expect("nonempty");
    let high = percentile_sorted(&sorted, 66.7).expect("nonempty");
    Ok(if value < low {
        WaterYearClass::Dry
    } else if value > high {
        WaterYearClass::Wet
    } else {
        WaterYearClass::Average
    })
}

pub fn classify_water_year(store: &Store, project: &str, year: i32) -> Result<WaterYearClass> {
    classify_year(&annual_mean_flows(&store.plant_samples(project)?), year)
}

pub fn select_scenario_window(
    store: &Store,
    scenario: &HydroScenario,
    project: &str,
) -> Result<(DateTime<Utc>, DateTime<Utc>)> {
    match *scenario {
        HydroScenario::Historical { start, end } => {
            if start >= end {
                return Err(Error::validation("historical window must have start < end"));
            }
            let (lo, hi) = store
                .plant_extent(project)?
                .ok_or_else(|| Error::not_found("plant data", project))?;
            if end <= lo || start >= hi {
                return Err(Error::validation(format!(
                    "window {}..{} does not overlap the record of {project}",
                    crate::datastore::format_timestamp(&start),
                    crate::datastore::format_timestamp(&end)
                )));
            }
            Ok((start, end))
        }
        HydroScenario::Synthetic { water_year_class, season } => {
            let means = annual_mean_flows(&store.plant_samples(project)?);
            for &year in means.keys().rev() {
                if classify_year(&means, year)? == water_year_class {
                    return Ok(season.window(year));
                }
            }
            Err(Error::not_found(
                "water year",
                format!("{water_year_class} year for {project}"),
            ))
        }
    }
}

/// Parameters of the synthetic two-plant cascade.
#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub seed: u64,
    pub hours: usize,
    pub lag_hours: usize,
    pub noise_sigma: f64,
    pub start: DateTime<Utc>,
    pub upstream: String,
    pub downstream: String,
}

impl SynthConfig {
    pub fn new(seed: u64, hours: usize, lag_hours: usize, noise_sigma: f64) -> Self {
        SynthConfig {
            seed,
            hours,
            lag_hours,
            noise_sigma,
            start: Utc.with_ymd_and_hms(2020, 1, 1, 0, 0, 0).unwrap(),
            upstream: "UP".into(),
            downstream: "DOWN".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCascade {
    pub static_plants: Vec<StaticPlant>,
    pub static_units: Vec<StaticUnit>,
    pub upstream: Vec<PlantSample>,
    pub downstream: Vec<PlantSample>,
    pub units: Vec<UnitSample>,
}

impl SyntheticCascade {
    pub fn to_bundle(&self) -> Bundle {
        let mut plant_samples = self.upstream.clone();
        plant_samples.extend(self.downstream.iter().cloned());
        Bundle {
            static_plants: self.static_plants.clone(),
            static_units: self.static_units.clone(),
            plant_samples,
            unit_samples: self.units.clone(),
        }
    }
}

pub fn generate_synthetic_cascade(
    seed: u64,
    hours: usize,
    lag_hours: usize,
    noise_sigma: f64,
) -> SyntheticCascade {
    generate_with(&SynthConfig::new(seed, hours, lag_hours, noise_sigma))
}

const SYNTH_EFFICIENCY: f64 = 0.9;

struct SynthPlant {
    rated_head: f64,
    head_base: f64,
    head_swing: f64,
    storage_base: f64,
    storage_swing: f64,
}

/// Generates the cascade. Algorithm, with `N` a standard normal draw from
/// ChaCha8 seeded by `seed`, consumed in the order listed:
///
/// 1. Upstream flow over `hours + lag` steps (the first `lag` are warm-up):
///    `q = 100000 * wet(year) * (1 + 0.35 sin(2pi (doy - 49)/365)) * (1 + 0.15 sin(2pi (hour - 8)/24)) * exp(z)`,
///    with `z <- 0.9 z + 0.05 N` per hour and `wet(year) = exp(0.25 N)` drawn when a new
///    calendar year starts.
/// 2. Downstream flow at step t is upstream flow at t - lag times `max(0, 1 + sigma N)`.
/// 3. Fill fraction `f = 0.5 + 0.5 sin(2pi (doy - 100)/365)`; head and storage are affine in `f`
///    plus an AR(1) wobble `w <- 0.95 w + 0.2 N` feet (upstream first, then downstream).
/// 4. Plant MW is `K * 0.9 * q * head` capped at the head-derated unit capacity; the excess
///    flow is spill. Units are loaded in descending nominal power (ties by unit_id), each up to
///    its derated maximum, until the plant total is met.
pub fn generate_with(cfg: &SynthConfig) -> SyntheticCascade {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut normal = move || -> f64 { rng.sample(StandardNormal) };

    let up_cfg = SynthPlant {
        rated_head: 380.2,
        head_base: 268.0,
        head_swing: 60.0,
        storage_base: 350_000.0,
        storage_swing: 250_000.0,
    };
    let down_cfg = SynthPlant {
        rated_head: 172.0,
        head_base: 160.0,
        head_swing: 12.0,
        storage_base: 60_000.0,
        storage_swing: 20_000.0,
    };

    let static_plants = vec![
        StaticPlant {
            project_name: cfg.upstream.clone(),
            latitude: 45.6,
            longitude: -121.1,
            area_number: 40,
            rated_head_ft: up_cfg.rated_head,
        },
        StaticPlant {
            project_name: cfg.downstream.clone(),
            latitude: 45.7,
            longitude: -121.9,
            area_number: 40,
            rated_head_ft: down_cfg.rated_head,
        },
    ];
    let mk = |project: &str, bus_name: String, bus: i64, id: String, p: f64| {
        StaticUnit::new(project, bus_name, bus, id, p).expect("valid synthetic unit")
    };
    let mut up_units = Vec::new();
    for (bus, p, ids) in [(40001, 825.7, 1..=3), (40002, 707.0, 4..=6), (40003, 125.0, 7..=9)] {
        for i in ids {
            up_units.push(mk(&cfg.upstream, format!("{} Bus{}", cfg.upstream, bus - 40000), bus, format!("A ID{i}"), p));
        }
    }
    let mut down_units = Vec::new();
    for (bus, p, ids) in [(50001, 220.0, 1..=6), (50002, 90.0, 7..=8)] {
        for i in ids {
            down_units.push(mk(&cfg.downstream, format!("{} Bus{}", cfg.downstream, bus - 50000), bus, format!("B ID{i}"), p));
        }
    }

    let lag = cfg.lag_hours;
    let total = cfg.hours + lag;
    let mut up_flow = Vec::with_capacity(total);
    let mut z = 0.0;
    let mut year_factor: Option<(i32, f64)> = None;
    for step in 0..total {
        let ts = cfg.start + Duration::hours(step as i64 - lag as i64);
        let wet = match year_factor {
            Some((y, f)) if y == ts.year() => f,
            _ => {
                let f = (0.25 * normal()).exp();
                year_factor = Some((ts.year(), f));
                f
            }
        };
        z = 0.9 * z + 0.05 * normal();
        let doy = ts.ordinal() as f64;
        let hour = ts.hour() as f64;
        let seasonal = 1.0 + 0.35 * (std::f64::consts::TAU * (doy - 49.0) / 365.0).sin();
        let diurnal = 1.0 + 0.15 * (std::f64::consts::TAU * (hour - 8.0) / 24.0).sin();
        up_flow.push(100_000.0 * wet * seasonal * diurnal * z.exp());
    }
    let down_flow: Vec<f64> = (0..cfg.hours)
        .map(|t| up_flow[t] * (1.0 + cfg.noise_sigma * normal()).max(0.0))
        .collect();
    let up_flow = &up_flow[lag..];

    let mut w_up = 0.0;
    let mut w_down = 0.0;
    let mut upstream = Vec::with_capacity(cfg.hours);
    let mut downstream = Vec::with_capacity(cfg.hours);
    let mut units = Vec::with_capacity(cfg.hours * (up_units.len() + down_units.len()));
    for t in 0..cfg.hours {
        let ts = cfg.start + Duration::hours(t as i64);
        let fill = 0.5 + 0.5 * (std::f64::consts::TAU * (ts.ordinal() as f64 - 100.0) / 365.0).sin();
        w_up = 0.95 * w_up + 0.2 * normal();
        w_down = 0.95 * w_down + 0.2 * normal();
        for (plant, flow, wobble, unit_set, out) in [
            (&up_cfg, up_flow[t], w_up, &up_units, &mut upstream),
            (&down_cfg, down_flow[t], w_down, &down_units, &mut downstream),
        ] {
            let head = plant.head_base + plant.head_swing * fill + wobble;
            let storage = plant.storage_base + plant.storage_swing * fill + 500.0 * wobble;
            let caps: Vec<f64> = unit_set
                .iter()
                .map(|u| {
                    pmax_available(u.nominal_pmax_mw, head, plant.rated_head, 1.5)
                        .expect("positive head")
                })
                .collect();
            let capacity: f64 = caps.iter().sum();
            let potential = MW_PER_CFS_FT * SYNTH_EFFICIENCY * flow * head;
            let total_mw = potential.min(capacity);
            let turbine_flow = total_mw / (MW_PER_CFS_FT * SYNTH_EFFICIENCY * head);
            let spill = (flow - turbine_flow).max(0.0);
            out.push(PlantSample {
                project_name: unit_set[0].project_name.clone(),
                timestamp: ts,
                flow_cfs: Some(flow),
                head_ft: Some(head),
                storage_af: Some(storage.max(0.0)),
                spill_cfs: Some(spill),
                total_mw: Some(total_mw),
            });
            let mut order: Vec<usize> = (0..unit_set.len()).collect();
            order.sort_by(|&a, &b| {
                unit_set[b]
                    .nominal_pmax_mw
                    .total_cmp(&unit_set[a].nominal_pmax_mw)
                    .then_with(|| unit_set[a].unit_id.cmp(&unit_set[b].unit_id))
            });
            let mut remaining = total_mw;
            let mut mw = vec![0.0; unit_set.len()];
            for i in order {
                let take = remaining.min(caps[i]).max(0.0);
                mw[i] = take;
                remaining -= take;
            }
            for (u, m) in unit_set.iter().zip(mw) {
                units.push(UnitSample::new(u.unit_id.clone(), ts, Some(m)));
            }
        }
    }

    let mut static_units = up_units;
    static_units.extend(down_units);
    SyntheticCascade { static_plants, static_units, upstream, downstream, units }
}
