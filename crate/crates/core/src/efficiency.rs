//! Per-unit efficiency from observed power, flow and head, and the
//! regression-extended efficiency curve with its preferred operating band.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::datastore::{EfficiencyPoint, PlantSample, StaticUnit, Store, UnitSample, MAX_EFFICIENCY};
use crate::error::{Error, Result};
use crate::stats::{fit_ols, median, LineFit};

/// Hydraulic power per unit flow and head, MW / (cfs * ft), for water at
/// 1000 kg/m^3 under g = 9.81 m/s^2.
pub const MW_PER_CFS_FT: f64 = 8.4674e-5;

pub const DEFAULT_THRESHOLD: f64 = 0.90;

/// Width of the head buckets used to split a unit's observations into curve families.
pub const HEAD_BUCKET_FT: f64 = 5.0;

const MIN_OBSERVATIONS: usize = 5;
const ESTIMATED_GRID: usize = 21;

/// `eta = P / (K Q H)`. Values in (1, 1.05] pass; see [`above_unity`].
pub fn compute_efficiency(power_mw: f64, flow_cfs: f64, head_ft: f64) -> Result<f64> {
    if !(flow_cfs > 0.0) {
        return Err(Error::Domain(format!("flow must be > 0, got {flow_cfs}")));
    }
    if !(head_ft > 0.0) {
        return Err(Error::Domain(format!("head must be > 0, got {head_ft}")));
    }
    let eta = power_mw / (MW_PER_CFS_FT * flow_cfs * head_ft);
    if eta > MAX_EFFICIENCY {
        return Err(Error::DataQuality(format!("efficiency {eta:.4} exceeds {MAX_EFFICIENCY}")));
    }
    Ok(eta)
}

/// Efficiencies this high are kept but indicate telemetry error.
pub fn above_unity(eta: f64) -> bool {
    eta > 1.0
}

/// One matched (flow, head, power) observation for a unit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub flow_cfs: f64,
    pub head_ft: f64,
    pub power_mw: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyCurve {
    pub unit_id: String,
    /// Raw and estimated points, strictly ascending in flow.
    pub points: Vec<EfficiencyPoint>,
    /// Fitted flow -> power line.
    pub regression: LineFit,
    pub head_ft: f64,
    pub threshold: f64,
    pub threshold_band: Option<(f64, f64)>,
    /// Raw points with efficiency above 1.
    pub flagged: usize,
}

impl EfficiencyCurve {
    /// Flow the unit draws at `power_mw`, from the inverted flow -> power line.
    pub fn implied_flow(&self, power_mw: f64) -> Option<f64> {
        (self.regression.slope > 0.0)
            .then(|| (power_mw - self.regression.intercept) / self.regression.slope)
    }

    /// MW range that maps into the efficient flow band.
    pub fn band_power(&self) -> Option<(f64, f64)> {
        let (lo, hi) = self.threshold_band?;
        if !(self.regression.slope > 0.0) {
            return None;
        }
        Some((self.regression.eval(lo), self.regression.eval(hi)))
    }

    pub fn in_band(&self, power_mw: f64) -> Option<bool> {
        let (lo, hi) = self.threshold_band?;
        let q = self.implied_flow(power_mw)?;
        Some(q >= lo - 1e-9 * lo.abs().max(1.0) && q <= hi + 1e-9 * hi.abs().max(1.0))
    }

    /// Rebuilds a curve from stored points, refitting the line on the raw subset.
    pub fn from_points(unit_id: &str, mut points: Vec<EfficiencyPoint>, threshold: f64) -> Result<Self> {
        points.sort_by(|a, b| a.flow_cfs.total_cmp(&b.flow_cfs));
        let raw: Vec<&EfficiencyPoint> = points.iter().filter(|p| !p.estimated).collect();
        let xs: Vec<f64> = raw.iter().map(|p| p.flow_cfs).collect();
        let ys: Vec<f64> = raw.iter().map(|p| p.power_mw).collect();
        let regression = fit_ols(&xs, &ys)?;
        let heads: Vec<f64> = raw.iter().map(|p| p.head_ft).collect();
        let flagged = raw.iter().filter(|p| above_unity(p.efficiency)).count();
        let mut curve = EfficiencyCurve {
            unit_id: unit_id.to_string(),
            head_ft: median(&heads).unwrap_or(f64::NAN),
            points,
            regression,
            threshold,
            threshold_band: None,
            flagged,
        };
        curve.threshold_band = efficient_band(&curve, threshold);
        Ok(curve)
    }
}

/// Raw efficiency points from observations, extended by the flow -> power line
/// over 10%..110% of the observed maximum flow at the median head.
pub fn build_curve(unit_id: &str, samples: &[Observation], threshold: f64) -> Result<EfficiencyCurve> {
    let mut valid: Vec<(Observation, f64)> = samples
        .iter()
        .filter_map(|o| compute_efficiency(o.power_mw, o.flow_cfs, o.head_ft).ok().map(|e| (*o, e)))
        .filter(|(_, e)| *e > 0.0)
        .collect();
    if valid.len() < MIN_OBSERVATIONS {
        return Err(Error::InsufficientData(format!(
            "unit {unit_id}: {} valid observations, need {MIN_OBSERVATIONS}",
            valid.len()
        )));
    }
    valid.sort_by(|a, b| a.0.flow_cfs.total_cmp(&b.0.flow_cfs));

    let xs: Vec<f64> = valid.iter().map(|(o, _)| o.flow_cfs).collect();
    let ys: Vec<f64> = valid.iter().map(|(o, _)| o.power_mw).collect();
    let regression = fit_ols(&xs, &ys)?;
    let heads: Vec<f64> = valid.iter().map(|(o, _)| o.head_ft).collect();
    let head = median(&heads).expect("nonempty");

    // Repeated flows collapse to their mean so the curve stays strictly ascending.
    let mut raw: Vec<EfficiencyPoint> = Vec::new();
    let mut i = 0;
    while i < valid.len() {
        let q = valid[i].0.flow_cfs;
        let mut j = i;
        let (mut h, mut p, mut e) = (0.0, 0.0, 0.0);
        while j < valid.len() && valid[j].0.flow_cfs == q {
            h += valid[j].0.head_ft;
            p += valid[j].0.power_mw;
            e += valid[j].1;
            j += 1;
        }
        let n = (j - i) as f64;
        raw.push(EfficiencyPoint {
            unit_id: unit_id.to_string(),
            flow_cfs: q,
            head_ft: h / n,
            power_mw: p / n,
            efficiency: e / n,
            estimated: false,
        });
        i = j;
    }
    let flagged = raw.iter().filter(|p| above_unity(p.efficiency)).count();

    let (q_min, q_max) = (xs[0], xs[xs.len() - 1]);
    let mut points = raw;
    for k in 0..ESTIMATED_GRID {
        let q = q_max * (0.1 + 1.0 * k as f64 / (ESTIMATED_GRID - 1) as f64);
        if q >= q_min && q <= q_max {
            continue;
        }
        let p = regression.eval(q);
        if let Ok(eta) = compute_efficiency(p, q, head) {
            if eta > 0.0 {
                points.push(EfficiencyPoint {
                    unit_id: unit_id.to_string(),
                    flow_cfs: q,
                    head_ft: head,
                    power_mw: p,
                    efficiency: eta,
                    estimated: true,
                });
            }
        }
    }
    points.sort_by(|a, b| a.flow_cfs.total_cmp(&b.flow_cfs));

    let mut curve = EfficiencyCurve {
        unit_id: unit_id.to_string(),
        points,
        regression,
        head_ft: head,
        threshold,
        threshold_band: None,
        flagged,
    };
    curve.threshold_band = efficient_band(&curve, threshold);
    Ok(curve)
}

/// One curve per 5 ft head bucket that holds enough observations.
pub fn build_curves_by_head(
    unit_id: &str,
    samples: &[Observation],
    threshold: f64,
) -> Vec<EfficiencyCurve> {
    let mut buckets: BTreeMap<i64, Vec<Observation>> = BTreeMap::new();
    for o in samples {
        if o.head_ft > 0.0 {
            buckets.entry((o.head_ft / HEAD_BUCKET_FT).floor() as i64).or_default().push(*o);
        }
    }
    buckets
        .values()
        .filter_map(|obs| build_curve(unit_id, obs, threshold).ok())
        .collect()
}

/// Smallest and largest flow where the piecewise-linear efficiency reaches `threshold`.
pub fn efficient_band(curve: &EfficiencyCurve, threshold: f64) -> Option<(f64, f64)> {
    let pts = &curve.points;
    let first = pts.iter().position(|p| p.efficiency >= threshold)?;
    let last = pts.iter().rposition(|p| p.efficiency >= threshold)?;
    let cross = |a: &EfficiencyPoint, b: &EfficiencyPoint| {
        a.flow_cfs
            + (threshold - a.efficiency) / (b.efficiency - a.efficiency) * (b.flow_cfs - a.flow_cfs)
    };
    let lo = if first == 0 { pts[0].flow_cfs } else { cross(&pts[first - 1], &pts[first]) };
    let hi = if last + 1 == pts.len() { pts[last].flow_cfs } else { cross(&pts[last], &pts[last + 1]) };
    Some((lo, hi))
}

/// Attributes plant turbine flow (flow minus spill) to active units in
/// proportion to their nominal capacity, pairing each with the plant head.
pub fn unit_observations(
    plant: &[PlantSample],
    units: &[UnitSample],
    statics: &[StaticUnit],
) -> BTreeMap<String, Vec<Observation>> {
    let nominal: BTreeMap<&str, f64> =
        statics.iter().map(|u| (u.unit_id.as_str(), u.nominal_pmax_mw)).collect();
    let mut by_hour: BTreeMap<chrono::DateTime<chrono::Utc>, Vec<&UnitSample>> = BTreeMap::new();
    for u in units.iter().filter(|u| u.active && nominal.contains_key(u.unit_id.as_str())) {
        by_hour.entry(u.timestamp).or_default().push(u);
    }
    let mut out: BTreeMap<String, Vec<Observation>> = BTreeMap::new();
    for s in plant {
        let (Some(flow), Some(head)) = (s.flow_cfs, s.head_ft) else { continue };
        let turbine = flow - s.spill_cfs.unwrap_or(0.0);
        let Some(active) = by_hour.get(&s.timestamp) else { continue };
        let committed: f64 = active.iter().map(|u| nominal[u.unit_id.as_str()]).sum();
        if !(turbine > 0.0 && committed > 0.0) {
            continue;
        }
        for u in active {
            let share = nominal[u.unit_id.as_str()] / committed;
            out.entry(u.unit_id.clone()).or_default().push(Observation {
                flow_cfs: turbine * share,
                head_ft: head,
                power_mw: u.mw.unwrap_or(0.0),
            });
        }
    }
    out
}

/// Curves for every unit of `project` with enough observations. Units
/// without usable data are skipped and logged.
pub fn plant_curves(store: &Store, project: &str, threshold: f64) -> Result<Vec<EfficiencyCurve>> {
    if !store.project_exists(project)? {
        return Err(Error::not_found("plant", project));
    }
    let obs = unit_observations(
        &store.plant_samples(project)?,
        &store.unit_samples_of(project)?,
        &store.join_units_of(project)?,
    );
    let mut curves = Vec::new();
    for (unit, samples) in &obs {
        match build_curve(unit, samples, threshold) {
            Ok(c) => curves.push(c),
            Err(e) => log::warn!("unit {unit}: no curve: {e}"),
        }
    }
    Ok(curves)
}

/// Builds and persists curves; returns them for reporting.
pub fn refresh_plant_curves(store: &mut Store, project: &str, threshold: f64) -> Result<Vec<EfficiencyCurve>> {
    let curves = plant_curves(store, project, threshold)?;
    let points: Vec<EfficiencyPoint> = curves.iter().flat_map(|c| c.points.iter().cloned()).collect();
    store.replace_efficiency_points(&points)?;
    Ok(curves)
}

pub const CURVE_HEADER: &str = "unit_id,flow_cfs,head_ft,power_mw,efficiency,estimated";

pub fn write_curve_csv<W: Write>(out: W, curves: &[EfficiencyCurve]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(CURVE_HEADER.split(','))?;
    for c in curves {
        for p in &c.points {
            w.write_record([
                p.unit_id.clone(),
                p.flow_cfs.to_string(),
                p.head_ft.to_string(),
                p.power_mw.to_string(),
                p.efficiency.to_string(),
                p.estimated.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Minimal SVG line plot of efficiency against flow, one polyline per curve.
pub fn render_svg(curves: &[EfficiencyCurve]) -> String {
    const W: f64 = 640.0;
    const H: f64 = 400.0;
    const PAD: f64 = 48.0;
    let all = curves.iter().flat_map(|c| c.points.iter());
    let (mut q0, mut q1, mut e1) = (f64::INFINITY, f64::NEG_INFINITY, 0.0f64);
    for p in all {
        q0 = q0.min(p.flow_cfs);
        q1 = q1.max(p.flow_cfs);
        e1 = e1.max(p.efficiency);
    }
    if !q0.is_finite() || q1 <= q0 {
        q0 = 0.0;
        q1 = 1.0;
    }
    let e1 = e1.max(1.0);
    let x = |q: f64| PAD + (q - q0) / (q1 - q0) * (W - 2.0 * PAD);
    let y = |e: f64| H - PAD - e / e1 * (H - 2.0 * PAD);
    let colors = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"];

    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <line x1=\"{PAD}\" y1=\"{b}\" x2=\"{r}\" y2=\"{b}\" stroke=\"black\"/>\n\
         <line x1=\"{PAD}\" y1=\"{PAD}\" x2=\"{PAD}\" y2=\"{b}\" stroke=\"black\"/>\n\
         <text x=\"{cx}\" y=\"{ly}\" font-size=\"12\" text-anchor=\"middle\">Flow (cfs) {q0:.0} - {q1:.0}</text>\n\
         <text x=\"12\" y=\"{cy}\" font-size=\"12\" transform=\"rotate(-90 12 {cy})\" text-anchor=\"middle\">Efficiency</text>\n",
        b = H - PAD,
        r = W - PAD,
        cx = W / 2.0,
        ly = H - 12.0,
        cy = H / 2.0,
    );
    for (i, c) in curves.iter().enumerate() {
        let color = colors[i % colors.len()];
        let pts: Vec<String> =
            c.points.iter().map(|p| format!("{:.2},{:.2}", x(p.flow_cfs), y(p.efficiency))).collect();
        svg.push_str(&format!(
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"><title>{} @ {:.1} ft</title></polyline>\n",
            pts.join(" "),
            c.unit_id,
            c.head_ft
        ));
        if let Some((lo, hi)) = c.threshold_band {
            let ty = y(c.threshold);
            svg.push_str(&format!(
                "<line x1=\"{:.2}\" y1=\"{ty:.2}\" x2=\"{:.2}\" y2=\"{ty:.2}\" stroke=\"{color}\" stroke-dasharray=\"4 3\"/>\n",
                x(lo),
                x(hi)
            ));
        }
    }
    svg.push_str("</svg>\n");
    svg
}

#[cfg(test)]
mod tests {
    use super::*;

    fn curve_of(pts: &[(f64, f64)]) -> EfficiencyCurve {
        EfficiencyCurve {
            unit_id: "u".into(),
            points: pts
                .iter()
                .map(|&(q, e)| EfficiencyPoint {
                    unit_id: "u".into(),
                    flow_cfs: q,
                    head_ft: 100.0,
                    power_mw: MW_PER_CFS_FT * e * q * 100.0,
                    efficiency: e,
                    estimated: false,
                })
                .collect(),
            regression: LineFit { slope: 1.0, intercept: 0.0 },
            head_ft: 100.0,
            threshold: 0.9,
            threshold_band: None,
            flagged: 0,
        }
    }

    #[test]
    fn efficiency_examples() {
        assert!((compute_efficiency(8.4674, 1000.0, 100.0).unwrap() - 1.0).abs() < 1e-12);
        assert!((compute_efficiency(4.2337, 1000.0, 100.0).unwrap() - 0.5).abs() < 1e-12);
        assert!(matches!(compute_efficiency(1.0, 0.0, 100.0), Err(Error::Domain(_))));
        assert!(matches!(compute_efficiency(1.0, 10.0, -1.0), Err(Error::Domain(_))));
        assert!(matches!(compute_efficiency(9.0, 1000.0, 100.0), Err(Error::DataQuality(_))));
        let e = compute_efficiency(8.8, 1000.0, 100.0).unwrap();
        assert!(above_unity(e));
    }

    #[test]
    fn band_interpolates_crossings() {
        let c = curve_of(&[(100.0, 0.8), (200.0, 0.92), (300.0, 0.91), (400.0, 0.85)]);
        // Hand solution: 100 + (0.10/0.12)*100 and 300 + (0.01/0.06)*100.
        let (lo, hi) = efficient_band(&c, 0.9).unwrap();
        assert!((lo - (100.0 + 100.0 * 0.10 / 0.12)).abs() < 1e-9, "{lo}");
        assert!((hi - (300.0 + 100.0 * 0.01 / 0.06)).abs() < 1e-9, "{hi}");
        assert_eq!(efficient_band(&c, 0.0), Some((100.0, 400.0)));
        assert_eq!(efficient_band(&c, 1.01), None);
    }

    #[test]
    fn constant_efficiency_spans_everything() {
        let obs: Vec<Observation> = (1..=20)
            .map(|i| {
                let q = 100.0 * i as f64;
                Observation { flow_cfs: q, head_ft: 300.0, power_mw: MW_PER_CFS_FT * 0.9 * q * 300.0 }
            })
            .collect();
        let c = build_curve("u", &obs, 0.9 - 1e-12).unwrap();
        let first = c.points.first().unwrap().flow_cfs;
        let last = c.points.last().unwrap().flow_cfs;
        assert!(c.points.iter().any(|p| p.estimated));
        assert_eq!(c.threshold_band, Some((first, last)));
        assert!((first - 100.0).abs() < 1e-9 && (last - 2200.0).abs() < 1e-9);
        for p in c.points.iter().filter(|p| p.estimated) {
            assert!(p.flow_cfs < 100.0 || p.flow_cfs > 2000.0);
            assert!((p.efficiency - 0.9).abs() < 1e-9);
        }
    }

    #[test]
    fn too_few_observations() {
        let obs = vec![Observation { flow_cfs: 1.0, head_ft: 1.0, power_mw: 0.00005 }; 3];
        assert!(matches!(build_curve("u", &obs, 0.9), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn head_buckets_make_families() {
        let mut obs = Vec::new();
        for head in [265.0, 315.0, 330.0] {
            for i in 1..=10 {
                let q = 500.0 * i as f64;
                obs.push(Observation { flow_cfs: q, head_ft: head, power_mw: MW_PER_CFS_FT * 0.88 * q * head });
            }
        }
        let curves = build_curves_by_head("u", &obs, 0.9);
        assert_eq!(curves.len(), 3);
        let heads: Vec<f64> = curves.iter().map(|c| c.head_ft).collect();
        assert_eq!(heads, vec![265.0, 315.0, 330.0]);
    }

    #[test]
    fn svg_has_a_polyline_per_curve() {
        let c = curve_of(&[(100.0, 0.8), (200.0, 0.92)]);
        let svg = render_svg(&[c.clone(), c]);
        assert_eq!(svg.matches("<polyline").count(), 2);
    }
}
