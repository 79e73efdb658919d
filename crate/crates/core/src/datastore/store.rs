use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::path::Path;

use chrono::{DateTime, Utc};
use rusqlite::{params, Connection, OptionalExtension, Row};
use serde::{Deserialize, Serialize};

use super::csvio::{
    parse_plant_csv, parse_static_plant_csv, parse_static_unit_csv, parse_unit_csv, Bundle,
};
use super::{
    format_timestamp, is_active, parse_timestamp, EfficiencyPoint, PlantSample, StaticPlant,
    StaticUnit, UnitSample,
};
use crate::error::{Error, Result};

const SCHEMA: &str = r#"
CREATE TABLE IF NOT EXISTS Static_Plant_Data (
    project_name  TEXT PRIMARY KEY,
    latitude      REAL NOT NULL,
    longitude     REAL NOT NULL,
    area_number   INTEGER NOT NULL,
    rated_head_ft REAL NOT NULL
);
CREATE TABLE IF NOT EXISTS Static_Unit_Data (
    project_name     TEXT NOT NULL,
    bus_name         TEXT NOT NULL,
    bus_number       INTEGER NOT NULL,
    id               TEXT NOT NULL,
    unit_id          TEXT PRIMARY KEY,
    nominal_pmax_mw  REAL NOT NULL,
    scada_bus_number TEXT,
    scada_bus_id     TEXT
);
CREATE TABLE IF NOT EXISTS Plant_Data (
    project_name TEXT NOT NULL,
    timestamp    TEXT NOT NULL,
    flow_cfs     REAL,
    head_ft      REAL,
    storage_af   REAL,
    spill_cfs    REAL,
    total_mw     REAL,
    PRIMARY KEY (project_name, timestamp)
);
CREATE TABLE IF NOT EXISTS Unit_Data (
    unit_id   TEXT NOT NULL,
    timestamp TEXT NOT NULL,
    mw        REAL,
    active    INTEGER NOT NULL,
    PRIMARY KEY (unit_id, timestamp)
);
CREATE TABLE IF NOT EXISTS Efficiency_Raw_Data (
    unit_id    TEXT NOT NULL,
    flow_cfs   REAL NOT NULL,
    head_ft    REAL NOT NULL,
    power_mw   REAL NOT NULL,
    efficiency REAL NOT NULL
);
CREATE TABLE IF NOT EXISTS Efficiency_Estimated_Data (
    unit_id    TEXT NOT NULL,
    flow_cfs   REAL NOT NULL,
    head_ft    REAL NOT NULL,
    power_mw   REAL NOT NULL,
    efficiency REAL NOT NULL
);
CREATE INDEX IF NOT EXISTS idx_eff_raw_unit ON Efficiency_Raw_Data(unit_id);
CREATE INDEX IF NOT EXISTS idx_eff_est_unit ON Efficiency_Estimated_Data(unit_id);
"#;

/// Row counts written by one ingestion call, after last-wins deduplication.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestSummary {
    pub static_plants: usize,
    pub static_units: usize,
    pub plant_samples: usize,
    pub unit_samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantSummary {
    #[serde(flatten)]
    pub plant: StaticPlant,
    pub unit_count: usize,
}

/// Single-file relational store. Writers take `&mut self`, so ingestion is
/// serialized per handle; open further handles on the same path for readers.
pub struct Store {
    conn: Connection,
}

impl Store {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let conn = Connection::open(path)?;
        conn.busy_timeout(std::time::Duration::from_secs(10))?;
        conn.pragma_update(None, "journal_mode", "WAL")?;
        Self::init(conn)
    }

    pub fn open_in_memory() -> Result<Self> {
        Self::init(Connection::open_in_memory()?)
    }

    fn init(conn: Connection) -> Result<Self> {
        conn.execute_batch(SCHEMA)?;
        Ok(Store { conn })
    }

    pub fn ingest_static_plants(&mut self, rows: &[StaticPlant]) -> Result<usize> {
        let rows = last_wins(rows, |p| p.project_name.clone());
        for p in &rows {
            p.validate()?;
        }
        let tx = self.conn.transaction()?;
        {
            let mut stmt = tx.prepare(
                "INSERT OR REPLACE INTO Static_Plant_Data VALUES (?1, ?2, ?3, ?4, ?5)",
            )?;
            for p in &rows {
                stmt.execute(params![
                    p.project_name,
                    p.latitude,
                    p.longitude,
                    p.area_number,
                    p.rated_head_ft
                ])?;
            }
        }
        tx.commit()?;
        Ok(rows.len())
    }

    pub fn ingest_static_units(&mut self, rows: &[StaticUnit]) -> Result<usize> {
        let rows = last_wins(rows, |u| u.unit_id.clone());
        for u in &rows {
            u.validate()?;
        }
        let known: BTreeSet<String> = self.static_plants()?.into_iter().map(|p| p.project_name).collect();
        let orphans: BTreeSet<String> = rows
            .iter()
            .filter(|u| !known.contains(&u.project_name))
            .map(|u| u.project_name.clone())
            .collect();
        if !orphans.is_empty() {
            return Err(Error::Orphans { kind: "project_name", ids: orphans.into_iter().collect() });
        }
        let tx = self.conn.transaction()?;
        {
            let mut stmt = tx.prepare(
                "INSERT OR REPLACE INTO Static_Unit_Data VALUES (?1, ?2, ?3, ?4, ?5, ?6, ?7, ?8)",
            )?;
            for u in &rows {
                stmt.execute(params![
                    u.project_name,
                    u.bus_name,
                    u.bus_number,
                    u.id,
                    u.unit_id,
                    u.nominal_pmax_mw,
                    u.scada_bus_number,
                    u.scada_bus_id
                ])?;
            }
        }
        tx.commit()?;
        Ok(rows.len())
    }

    /// Upserts plant samples; duplicate `(project, timestamp)` keys keep the last row.
    pub fn ingest_plant_samples(&mut self, rows: &[PlantSample]) -> Result<usize> {
        let rows = last_wins(rows, |s| (s.project_name.clone(), s.timestamp));
        for s in &rows {
            s.validate()?;
        }
        let tx = self.conn.transaction()?;
        {
            let mut stmt = tx.prepare(
                "INSERT OR REPLACE INTO Plant_Data VALUES (?1, ?2, ?3, ?4, ?5, ?6, ?7)",
            )?;
            for s in &rows {
                stmt.execute(params![
                    s.project_name,
                    format_timestamp(&s.timestamp),
                    s.flow_cfs,
                    s.head_ft,
                    s.storage_af,
                    s.spill_cfs,
                    s.total_mw
                ])?;
            }
        }
        tx.commit()?;
        Ok(rows.len())
    }

    pub fn ingest_unit_samples(&mut self, rows: &[UnitSample]) -> Result<usize> {
        let rows = last_wins(rows, |s| (s.unit_id.clone(), s.timestamp));
        for s in &rows {
            s.validate()?;
        }
        let known = self.unit_id_set()?;
        let orphans: BTreeSet<String> = rows
            .iter()
            .filter(|s| !known.contains(&s.unit_id))
            .map(|s| s.unit_id.clone())
            .collect();
        if !orphans.is_empty() {
            return Err(Error::Orphans { kind: "unit_id", ids: orphans.into_iter().collect() });
        }
        let tx = self.conn.transaction()?;
        {
            let mut stmt =
                tx.prepare("INSERT OR REPLACE INTO Unit_Data VALUES (?1, ?2, ?3, ?4)")?;
            for s in &rows {
                stmt.execute(params![s.unit_id, format_timestamp(&s.timestamp), s.mw, s.active])?;
            }
        }
        tx.commit()?;
        Ok(rows.len())
    }

    pub fn ingest_plant_csv(&mut self, path: impl AsRef<Path>) -> Result<usize> {
        let rows = parse_plant_csv(File::open(path)?)?;
        self.ingest_plant_samples(&rows)
    }

    pub fn ingest_unit_csv(&mut self, path: impl AsRef<Path>) -> Result<usize> {
        let rows = parse_unit_csv(File::open(path)?)?;
        self.ingest_unit_samples(&rows)
    }

    pub fn ingest_static_plant_csv(&mut self, path: impl AsRef<Path>) -> Result<usize> {
        let rows = parse_static_plant_csv(File::open(path)?)?;
        self.ingest_static_plants(&rows)
    }

    pub fn ingest_static_unit_csv(&mut self, path: impl AsRef<Path>) -> Result<usize> {
        let rows = parse_static_unit_csv(File::open(path)?)?;
        self.ingest_static_units(&rows)
    }

    /// Ingests in dependency order so referential checks see the static tables first.
    pub fn ingest_bundle(&mut self, bundle: &Bundle) -> Result<IngestSummary> {
        Ok(IngestSummary {
            static_plants: self.ingest_static_plants(&bundle.static_plants)?,
            static_units: self.ingest_static_units(&bundle.static_units)?,
            plant_samples: self.ingest_plant_samples(&bundle.plant_samples)?,
            unit_samples: self.ingest_unit_samples(&bundle.unit_samples)?,
        })
    }

    pub fn project_exists(&self, project: &str) -> Result<bool> {
        let hit: Option<i64> = self
            .conn
            .query_row(
                "SELECT 1 FROM Static_Plant_Data WHERE project_name = ?1
                 UNION SELECT 1 FROM Plant_Data WHERE project_name = ?1 LIMIT 1",
                [project],
                |r| r.get(0),
            )
            .optional()?;
        Ok(hit.is_some())
    }

    fn require_project(&self, project: &str) -> Result<()> {
        if self.project_exists(project)? {
            Ok(())
        } else {
            Err(Error::not_found("project", project))
        }
    }

    /// Samples with `start <= t < end`, ascending. Gaps are left as gaps.
    pub fn query_plant_window(
        &self,
        project: &str,
        start: DateTime<Utc>,
        end: DateTime<Utc>,
    ) -> Result<Vec<PlantSample>> {
        if start > end {
            return Err(Error::validation("window start after end"));
        }
        self.require_project(project)?;
        let mut stmt = self.conn.prepare_cached(
            "SELECT project_name, timestamp, flow_cfs, head_ft, storage_af, spill_cfs, total_mw
             FROM Plant_Data WHERE project_name = ?1 AND timestamp >= ?2 AND timestamp < ?3
             ORDER BY timestamp",
        )?;
        let rows = stmt.query_map(
            params![project, format_timestamp(&start), format_timestamp(&end)],
            plant_row,
        )?;
        collect(rows)
    }

    pub fn plant_samples(&self, project: &str) -> Result<Vec<PlantSample>> {
        self.require_project(project)?;
        let mut stmt = self.conn.prepare_cached(
            "SELECT project_name, timestamp, flow_cfs, head_ft, storage_af, spill_cfs, total_mw
             FROM Plant_Data WHERE project_name = ?1 ORDER BY timestamp",
        )?;
        let rows = stmt.query_map([project], plant_row)?;
        collect(rows)
    }

    /// First and one-past-last hour on record for a project.
    pub fn plant_extent(&self, project: &str) -> Result<Option<(DateTime<Utc>, DateTime<Utc>)>> {
        self.require_project(project)?;
        let (lo, hi): (Option<String>, Option<String>) = self.conn.query_row(
            "SELECT MIN(timestamp), MAX(timestamp) FROM Plant_Data WHERE project_name = ?1",
            [project],
            |r| Ok((r.get(0)?, r.get(1)?)),
        )?;
        match (lo, hi) {
            (Some(lo), Some(hi)) => Ok(Some((
                parse_timestamp(&lo)?,
                parse_timestamp(&hi)? + chrono::Duration::hours(1),
            ))),
            _ => Ok(None),
        }
    }

    /// Unit telemetry for every unit of `project`, ordered by (unit_id, timestamp).
    pub fn unit_samples_of(&self, project: &str) -> Result<Vec<UnitSample>> {
        let mut stmt = self.conn.prepare_cached(
            "SELECT d.unit_id, d.timestamp, d.mw FROM Unit_Data d
             JOIN Static_Unit_Data s ON s.unit_id = d.unit_id
             WHERE s.project_name = ?1 ORDER BY d.unit_id, d.timestamp",
        )?;
        let rows = stmt.query_map([project], |r| {
            Ok((r.get::<_, String>(0)?, r.get::<_, String>(1)?, r.get::<_, Option<f64>>(2)?))
        })?;
        let mut out = Vec::new();
        for row in rows {
            let (unit_id, ts, mw) = row?;
            out.push(UnitSample { unit_id, timestamp: parse_timestamp(&ts)?, mw, active: is_active(mw) });
        }
        Ok(out)
    }

    pub fn join_units_of(&self, project: &str) -> Result<Vec<StaticUnit>> {
        let mut stmt = self.conn.prepare_cached(
            "SELECT project_name, bus_name, bus_number, id, unit_id, nominal_pmax_mw,
                    scada_bus_number, scada_bus_id
             FROM Static_Unit_Data WHERE project_name = ?1 ORDER BY unit_id",
        )?;
        let rows = stmt.query_map([project], |r| {
            Ok(StaticUnit {
                project_name: r.get(0)?,
                bus_name: r.get(1)?,
                bus_number: r.get(2)?,
                id: r.get(3)?,
                unit_id: r.get(4)?,
                nominal_pmax_mw: r.get(5)?,
                scada_bus_number: r.get(6)?,
                scada_bus_id: r.get(7)?,
            })
        })?;
        Ok(rows.collect::<rusqlite::Result<_>>()?)
    }

    pub fn static_plant(&self, project: &str) -> Result<Option<StaticPlant>> {
        Ok(self
            .conn
            .query_row(
                "SELECT project_name, latitude, longitude, area_number, rated_head_ft
                 FROM Static_Plant_Data WHERE project_name = ?1",
                [project],
                static_plant_row,
            )
            .optional()?)
    }

    pub fn static_plants(&self) -> Result<Vec<StaticPlant>> {
        let mut stmt = self.conn.prepare_cached(
            "SELECT project_name, latitude, longitude, area_number, rated_head_ft
             FROM Static_Plant_Data ORDER BY project_name",
        )?;
        let rows = stmt.query_map([], static_plant_row)?;
        Ok(rows.collect::<rusqlite::Result<_>>()?)
    }

    pub fn plant_summaries(&self) -> Result<Vec<PlantSummary>> {
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        {
            let mut stmt = self.conn.prepare_cached(
                "SELECT project_name, COUNT(*) FROM Static_Unit_Data GROUP BY project_name",
            )?;
            let rows = stmt.query_map([], |r| Ok((r.get::<_, String>(0)?, r.get::<_, i64>(1)?)))?;
            for row in rows {
                let (name, n) = row?;
                counts.insert(name, n as usize);
            }
        }
        Ok(self
            .static_plants()?
            .into_iter()
            .map(|plant| {
                let unit_count = counts.get(&plant.project_name).copied().unwrap_or(0);
                PlantSummary { plant, unit_count }
            })
            .collect())
    }

    fn unit_id_set(&self) -> Result<BTreeSet<String>> {
        let mut stmt = self.conn.prepare_cached("SELECT unit_id FROM Static_Unit_Data")?;
        let rows = stmt.query_map([], |r| r.get::<_, String>(0))?;
        Ok(rows.collect::<rusqlite::Result<_>>()?)
    }

    /// Replaces every stored efficiency point of the units present in `points`.
    pub fn replace_efficiency_points(&mut self, points: &[EfficiencyPoint]) -> Result<usize> {
        let known = self.unit_id_set()?;
        let units: BTreeSet<&str> = points.iter().map(|p| p.unit_id.as_str()).collect();
        let orphans: Vec<String> =
            units.iter().filter(|u| !known.contains(**u)).map(|u| u.to_string()).collect();
        if !orphans.is_empty() {
            return Err(Error::Orphans { kind: "unit_id", ids: orphans });
        }
        if let Some(bad) = points.iter().find(|p| !(p.efficiency > 0.0)) {
            return Err(Error::validation(format!(
                "efficiency must be > 0 for unit {}",
                bad.unit_id
            )));
        }
        let tx = self.conn.transaction()?;
        for unit in &units {
            tx.execute("DELETE FROM Efficiency_Raw_Data WHERE unit_id = ?1", [unit])?;
            tx.execute("DELETE FROM Efficiency_Estimated_Data WHERE unit_id = ?1", [unit])?;
        }
        {
            let mut raw = tx.prepare("INSERT INTO Efficiency_Raw_Data VALUES (?1, ?2, ?3, ?4, ?5)")?;
            let mut est =
                tx.prepare("INSERT INTO Efficiency_Estimated_Data VALUES (?1, ?2, ?3, ?4, ?5)")?;
            for p in points {
                let stmt = if p.estimated { &mut est } else { &mut raw };
                stmt.execute(params![p.unit_id, p.flow_cfs, p.head_ft, p.power_mw, p.efficiency])?;
            }
        }
        tx.commit()?;
        Ok(points.len())
    }

    /// Raw and estimated points for a unit, ascending by flow.
    pub fn efficiency_points(&self, unit_id: &str) -> Result<Vec<EfficiencyPoint>> {
        let mut stmt = self.conn.prepare_cached(
            "SELECT unit_id, flow_cfs, head_ft, power_mw, efficiency, 0 FROM Efficiency_Raw_Data WHERE unit_id = ?1
             UNION ALL
             SELECT unit_id, flow_cfs, head_ft, power_mw, efficiency, 1 FROM Efficiency_Estimated_Data WHERE unit_id = ?1
             ORDER BY 2",
        )?;
        let rows = stmt.query_map([unit_id], |r| {
            Ok(EfficiencyPoint {
                unit_id: r.get(0)?,
                flow_cfs: r.get(1)?,
                head_ft: r.get(2)?,
                power_mw: r.get(3)?,
                efficiency: r.get(4)?,
                estimated: r.get::<_, i64>(5)? != 0,
            })
        })?;
        Ok(rows.collect::<rusqlite::Result<_>>()?)
    }
}

fn plant_row(r: &Row<'_>) -> rusqlite::Result<(String, String, [Option<f64>; 5])> {
    Ok((
        r.get(0)?,
        r.get(1)?,
        [r.get(2)?, r.get(3)?, r.get(4)?, r.get(5)?, r.get(6)?],
    ))
}

fn collect(
    rows: impl Iterator<Item = rusqlite::Result<(String, String, [Option<f64>; 5])>>,
) -> Result<Vec<PlantSample>> {
    let mut out = Vec::new();
    for row in rows {
        let (project_name, ts, [flow, head, storage, spill, mw]) = row?;
        out.push(PlantSample {
            project_name,
            timestamp: parse_timestamp(&ts)?,
            flow_cfs: flow,
            head_ft: head,
            storage_af: storage,
            spill_cfs: spill,
            total_mw: mw,
        });
    }
    Ok(out)
}

fn static_plant_row(r: &Row<'_>) -> rusqlite::Result<StaticPlant> {
    Ok(StaticPlant {
        project_name: r.get(0)?,
        latitude: r.get(1)?,
        longitude: r.get(2)?,
        area_number: r.get(3)?,
        rated_head_ft: r.get(4)?,
    })
}

/// Deduplicates by key keeping the last occurrence, preserving first-seen order.
fn last_wins<T: Clone, K: Ord>(rows: &[T], key: impl Fn(&T) -> K) -> Vec<T> {
    let mut slot: BTreeMap<K, usize> = BTreeMap::new();
    let mut out: Vec<T> = Vec::with_capacity(rows.len());
    for row in rows {
        match slot.get(&key(row)) {
            Some(&i) => out[i] = row.clone(),
            None => {
                slot.insert(key(row), out.len());
                out.push(row.clone());
            }
        }
    }
    out
}
