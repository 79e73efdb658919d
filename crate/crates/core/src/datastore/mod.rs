//! Hourly hydrology and unit telemetry store.
//!
//! Six tables back the store: `Plant_Data`, `Unit_Data`, `Static_Plant_Data`,
//! `Static_Unit_Data`, `Efficiency_Raw_Data` and `Efficiency_Estimated_Data`.
//! Plant-level tables link on `project_name`; efficiency tables link to the
//! unit tables on `unit_id`, which is always `"<bus_number>-<id>"`.

mod csvio;
mod store;

use chrono::{DateTime, NaiveDateTime, Timelike, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use csvio::{
    parse_plant_csv, parse_static_plant_csv, parse_static_unit_csv, parse_unit_csv, read_bundle,
    write_bundle, write_plant_csv, write_static_plant_csv, write_static_unit_csv, write_unit_csv,
    Bundle, PLANT_HEADER, STATIC_PLANT_HEADER, STATIC_UNIT_HEADER, UNIT_HEADER,
};
pub use store::{IngestSummary, PlantSummary, Store};

/// Units producing more than this are counted as committed.
pub const ACTIVITY_THRESHOLD_MW: f64 = 0.5;

/// Upper bound on a physically plausible efficiency.
pub const MAX_EFFICIENCY: f64 = 1.05;

/// One hour of plant-level hydrology. Missing telemetry is `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantSample {
    pub project_name: String,
    pub timestamp: DateTime<Utc>,
    pub flow_cfs: Option<f64>,
    pub head_ft: Option<f64>,
    pub storage_af: Option<f64>,
    pub spill_cfs: Option<f64>,
    pub total_mw: Option<f64>,
}

impl PlantSample {
    pub fn validate(&self) -> Result<()> {
        if self.project_name.trim().is_empty() {
            return Err(Error::validation("empty project_name"));
        }
        check_hour(&self.timestamp)?;
        non_negative("flow_cfs", self.flow_cfs)?;
        non_negative("spill_cfs", self.spill_cfs)?;
        non_negative("storage_af", self.storage_af)?;
        non_negative("total_mw", self.total_mw)?;
        if let Some(h) = self.head_ft {
            if !(h.is_finite() && h > 0.0) {
                return Err(Error::validation(format!("head_ft must be > 0, got {h}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitSample {
    pub unit_id: String,
    pub timestamp: DateTime<Utc>,
    pub mw: Option<f64>,
    pub active: bool,
}

impl UnitSample {
    pub fn new(unit_id: impl Into<String>, timestamp: DateTime<Utc>, mw: Option<f64>) -> Self {
        UnitSample {
            unit_id: unit_id.into(),
            timestamp,
            mw,
            active: is_active(mw),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.unit_id.trim().is_empty() {
            return Err(Error::validation("empty unit_id"));
        }
        check_hour(&self.timestamp)?;
        non_negative("mw", self.mw)?;
        if self.active != is_active(self.mw) {
            return Err(Error::validation("active flag disagrees with mw"));
        }
        Ok(())
    }
}

pub fn is_active(mw: Option<f64>) -> bool {
    mw.is_some_and(|m| m > ACTIVITY_THRESHOLD_MW)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StaticPlant {
    pub project_name: String,
    pub latitude: f64,
    pub longitude: f64,
    pub area_number: i64,
    pub rated_head_ft: f64,
}

impl StaticPlant {
    pub fn validate(&self) -> Result<()> {
        if self.project_name.trim().is_empty() {
            return Err(Error::validation("empty project_name"));
        }
        if !(-90.0..=90.0).contains(&self.latitude) {
            return Err(Error::validation(format!("latitude {} out of range", self.latitude)));
        }
        if !(-180.0..=180.0).contains(&self.longitude) {
            return Err(Error::validation(format!("longitude {} out of range", self.longitude)));
        }
        if !(self.rated_head_ft.is_finite() && self.rated_head_ft > 0.0) {
            return Err(Error::validation("rated_head_ft must be > 0"));
        }
        Ok(())
    }
}

/// Nameplate record for one generator. `unit_id` is derived, never read from input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StaticUnit {
    pub project_name: String,
    pub bus_name: String,
    pub bus_number: i64,
    pub id: String,
    pub unit_id: String,
    pub nominal_pmax_mw: f64,
    pub scada_bus_number: Option<String>,
    pub scada_bus_id: Option<String>,
}

impl StaticUnit {
    pub fn new(
        project_name: impl Into<String>,
        bus_name: impl Into<String>,
        bus_number: i64,
        id: impl Into<String>,
        nominal_pmax_mw: f64,
    ) -> Result<Self> {
        let id = id.into();
        let unit = StaticUnit {
            project_name: project_name.into(),
            bus_name: bus_name.into(),
            bus_number,
            unit_id: derive_unit_id(bus_number, &id)?,
            id,
            nominal_pmax_mw,
            scada_bus_number: None,
            scada_bus_id: None,
        };
        unit.validate()?;
        Ok(unit)
    }

    pub fn validate(&self) -> Result<()> {
        if self.project_name.trim().is_empty() {
            return Err(Error::validation("empty project_name"));
        }
        if self.unit_id != derive_unit_id(self.bus_number, &self.id)? {
            return Err(Error::validation(format!(
                "unit_id {:?} does not match bus_number {} and id {:?}",
                self.unit_id, self.bus_number, self.id
            )));
        }
        if !(self.nominal_pmax_mw.is_finite() && self.nominal_pmax_mw > 0.0) {
            return Err(Error::validation("nominal_pmax_mw must be > 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyPoint {
    pub unit_id: String,
    pub flow_cfs: f64,
    pub head_ft: f64,
    pub power_mw: f64,
    pub efficiency: f64,
    /// `false` for the raw table, `true` for regression-extrapolated points.
    pub estimated: bool,
}

/// Joins a unit's bus number and its identifier name into the store-wide unit key.
pub fn derive_unit_id(bus_number: i64, id: &str) -> Result<String> {
    if id.is_empty() {
        return Err(Error::validation("unit id must be nonempty"));
    }
    Ok(format!("{bus_number}-{id}"))
}

/// Parses an ISO-8601 timestamp. Offset-free values are taken as UTC.
pub fn parse_timestamp(s: &str) -> Result<DateTime<Utc>> {
    let s = s.trim();
    if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
        return Ok(dt.with_timezone(&Utc));
    }
    for fmt in ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M", "%Y-%m-%d %H:%M"] {
        if let Ok(naive) = NaiveDateTime::parse_from_str(s, fmt) {
            return Ok(naive.and_utc());
        }
    }
    if let Ok(date) = chrono::NaiveDate::parse_from_str(s, "%Y-%m-%d") {
        return Ok(date.and_hms_opt(0, 0, 0).expect("midnight").and_utc());
    }
    Err(Error::validation(format!("unparseable timestamp {s:?}")))
}

pub fn format_timestamp(ts: &DateTime<Utc>) -> String {
    ts.format("%Y-%m-%dT%H:%M:%SZ").to_string()
}

fn check_hour(ts: &DateTime<Utc>) -> Result<()> {
    if ts.minute() != 0 || ts.second() != 0 || ts.nanosecond() != 0 {
        return Err(Error::validation(format!(
            "timestamp {} is not on a whole hour",
            format_timestamp(ts)
        )));
    }
    Ok(())
}

fn non_negative(field: &str, v: Option<f64>) -> Result<()> {
    match v {
        Some(x) if !x.is_finite() || x < 0.0 => {
            Err(Error::validation(format!("{field} must be >= 0, got {x}")))
        }
        _ => Ok(()),
    }
}
