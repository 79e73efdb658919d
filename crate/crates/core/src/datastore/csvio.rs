use std::io::{BufRead, BufReader, Read, Write};

use csv::{ReaderBuilder, StringRecord, WriterBuilder};

use super::{
    derive_unit_id, format_timestamp, parse_timestamp, PlantSample, StaticPlant, StaticUnit,
    UnitSample,
};
use crate::error::{Error, Result};

pub const PLANT_HEADER: &str = "project_name,timestamp,flow_cfs,head_ft,storage_af,spill_cfs,total_mw";
pub const UNIT_HEADER: &str = "unit_id,timestamp,mw";
pub const STATIC_PLANT_HEADER: &str = "project_name,latitude,longitude,area_number,rated_head_ft";
pub const STATIC_UNIT_HEADER: &str =
    "project_name,bus_name,bus_number,id,nominal_pmax_mw,scada_bus_number,scada_bus_id";

/// Rows for every ingestible table, as carried by the `#@ <Table>` sectioned stream.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Bundle {
    pub static_plants: Vec<StaticPlant>,
    pub static_units: Vec<StaticUnit>,
    pub plant_samples: Vec<PlantSample>,
    pub unit_samples: Vec<UnitSample>,
}

struct Rows<R: Read> {
    reader: csv::Reader<R>,
    line_offset: usize,
}

impl<R: Read> Rows<R> {
    fn open(input: R, expected: &str, line_offset: usize) -> Result<Self> {
        let mut reader = ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(input);
        let header = reader.headers()?.iter().collect::<Vec<_>>().join(",");
        if header != expected {
            return Err(Error::at_line(
                line_offset + 1,
                format!("expected header `{expected}`, found `{header}`"),
            ));
        }
        Ok(Rows { reader, line_offset })
    }

    fn for_each(mut self, mut f: impl FnMut(usize, &StringRecord) -> Result<()>) -> Result<()> {
        let mut record = StringRecord::new();
        loop {
            match self.reader.read_record(&mut record) {
                Ok(false) => return Ok(()),
                Ok(true) => {
                    let line = self.line_offset
                        + record.position().map(|p| p.line() as usize).unwrap_or(0);
                    f(line, &record).map_err(|e| match e {
                        Error::Validation { line: None, message } => Error::at_line(line, message),
                        other => other,
                    })?;
                }
                Err(e) => {
                    let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
                    return Err(Error::at_line(self.line_offset + line, e.to_string()));
                }
            }
        }
    }
}

fn text(rec: &StringRecord, i: usize, name: &str) -> Result<String> {
    match rec.get(i) {
        Some(s) if !s.is_empty() => Ok(s.to_string()),
        _ => Err(Error::validation(format!("missing {name}"))),
    }
}

fn opt_text(rec: &StringRecord, i: usize) -> Option<String> {
    // "-" is how exported tables mark an absent SCADA identity.
    rec.get(i).filter(|s| !s.is_empty() && *s != "-").map(str::to_string)
}

fn opt_num(rec: &StringRecord, i: usize, name: &str) -> Result<Option<f64>> {
    match rec.get(i) {
        None | Some("") => Ok(None),
        Some(s) => s
            .parse::<f64>()
            .map(Some)
            .map_err(|_| Error::validation(format!("{name}: not a number: {s:?}"))),
    }
}

fn num(rec: &StringRecord, i: usize, name: &str) -> Result<f64> {
    opt_num(rec, i, name)?.ok_or_else(|| Error::validation(format!("missing {name}")))
}

fn int(rec: &StringRecord, i: usize, name: &str) -> Result<i64> {
    let s = text(rec, i, name)?;
    s.parse::<i64>()
        .map_err(|_| Error::validation(format!("{name}: not an integer: {s:?}")))
}

pub fn parse_plant_csv<R: Read>(input: R) -> Result<Vec<PlantSample>> {
    parse_plant_at(input, 0)
}

fn parse_plant_at<R: Read>(input: R, offset: usize) -> Result<Vec<PlantSample>> {
    let mut out = Vec::new();
    Rows::open(input, PLANT_HEADER, offset)?.for_each(|_, rec| {
        let sample = PlantSample {
            project_name: text(rec, 0, "project_name")?,
            timestamp: parse_timestamp(&text(rec, 1, "timestamp")?)?,
            flow_cfs: opt_num(rec, 2, "flow_cfs")?,
            head_ft: opt_num(rec, 3, "head_ft")?,
            storage_af: opt_num(rec, 4, "storage_af")?,
            spill_cfs: opt_num(rec, 5, "spill_cfs")?,
            total_mw: opt_num(rec, 6, "total_mw")?,
        };
        sample.validate()?;
        out.push(sample);
        Ok(())
    })?;
    Ok(out)
}

pub fn parse_unit_csv<R: Read>(input: R) -> Result<Vec<UnitSample>> {
    parse_unit_at(input, 0)
}

fn parse_unit_at<R: Read>(input: R, offset: usize) -> Result<Vec<UnitSample>> {
    let mut out = Vec::new();
    Rows::open(input, UNIT_HEADER, offset)?.for_each(|_, rec| {
        let sample = UnitSample::new(
            text(rec, 0, "unit_id")?,
            parse_timestamp(&text(rec, 1, "timestamp")?)?,
            opt_num(rec, 2, "mw")?,
        );
        sample.validate()?;
        out.push(sample);
        Ok(())
    })?;
    Ok(out)
}

pub fn parse_static_plant_csv<R: Read>(input: R) -> Result<Vec<StaticPlant>> {
    parse_static_plant_at(input, 0)
}

fn parse_static_plant_at<R: Read>(input: R, offset: usize) -> Result<Vec<StaticPlant>> {
    let mut out = Vec::new();
    Rows::open(input, STATIC_PLANT_HEADER, offset)?.for_each(|_, rec| {
        let plant = StaticPlant {
            project_name: text(rec, 0, "project_name")?,
            latitude: num(rec, 1, "latitude")?,
            longitude: num(rec, 2, "longitude")?,
            area_number: int(rec, 3, "area_number")?,
            rated_head_ft: num(rec, 4, "rated_head_ft")?,
        };
        plant.validate()?;
        out.push(plant);
        Ok(())
    })?;
    Ok(out)
}

pub fn parse_static_unit_csv<R: Read>(input: R) -> Result<Vec<StaticUnit>> {
    parse_static_unit_at(input, 0)
}

fn parse_static_unit_at<R: Read>(input: R, offset: usize) -> Result<Vec<StaticUnit>> {
    let mut out = Vec::new();
    Rows::open(input, STATIC_UNIT_HEADER, offset)?.for_each(|_, rec| {
        let bus_number = int(rec, 2, "bus_number")?;
        let id = text(rec, 3, "id")?;
        let unit = StaticUnit {
            project_name: text(rec, 0, "project_name")?,
            bus_name: text(rec, 1, "bus_name")?,
            bus_number,
            unit_id: derive_unit_id(bus_number, &id)?,
            id,
            nominal_pmax_mw: num(rec, 4, "nominal_pmax_mw")?,
            scada_bus_number: opt_text(rec, 5),
            scada_bus_id: opt_text(rec, 6),
        };
        unit.validate()?;
        out.push(unit);
        Ok(())
    })?;
    Ok(out)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn writer<W: Write>(out: W, header: &str) -> Result<csv::Writer<W>> {
    let mut w = WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(header.split(','))?;
    Ok(w)
}

pub fn write_plant_csv<W: Write>(out: W, rows: &[PlantSample]) -> Result<()> {
    let mut w = writer(out, PLANT_HEADER)?;
    for r in rows {
        w.write_record([
            r.project_name.clone(),
            format_timestamp(&r.timestamp),
            fmt_opt(r.flow_cfs),
            fmt_opt(r.head_ft),
            fmt_opt(r.storage_af),
            fmt_opt(r.spill_cfs),
            fmt_opt(r.total_mw),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_unit_csv<W: Write>(out: W, rows: &[UnitSample]) -> Result<()> {
    let mut w = writer(out, UNIT_HEADER)?;
    for r in rows {
        w.write_record([r.unit_id.clone(), format_timestamp(&r.timestamp), fmt_opt(r.mw)])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_static_plant_csv<W: Write>(out: W, rows: &[StaticPlant]) -> Result<()> {
    let mut w = writer(out, STATIC_PLANT_HEADER)?;
    for r in rows {
        w.write_record([
            r.project_name.clone(),
            r.latitude.to_string(),
            r.longitude.to_string(),
            r.area_number.to_string(),
            r.rated_head_ft.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_static_unit_csv<W: Write>(out: W, rows: &[StaticUnit]) -> Result<()> {
    let mut w = writer(out, STATIC_UNIT_HEADER)?;
    for r in rows {
        w.write_record([
            r.project_name.clone(),
            r.bus_name.clone(),
            r.bus_number.to_string(),
            r.id.clone(),
            r.nominal_pmax_mw.to_string(),
            r.scada_bus_number.clone().unwrap_or_default(),
            r.scada_bus_id.clone().unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

const SECTION_MARK: &str = "#@ ";

/// Writes all tables as one stream: a `#@ <Table_Name>` line followed by that table's CSV.
pub fn write_bundle<W: Write>(mut out: W, bundle: &Bundle) -> Result<()> {
    writeln!(out, "{SECTION_MARK}Static_Plant_Data")?;
    write_static_plant_csv(&mut out, &bundle.static_plants)?;
    writeln!(out, "{SECTION_MARK}Static_Unit_Data")?;
    write_static_unit_csv(&mut out, &bundle.static_units)?;
    writeln!(out, "{SECTION_MARK}Plant_Data")?;
    write_plant_csv(&mut out, &bundle.plant_samples)?;
    writeln!(out, "{SECTION_MARK}Unit_Data")?;
    write_unit_csv(&mut out, &bundle.unit_samples)?;
    out.flush()?;
    Ok(())
}

pub fn read_bundle<R: Read>(input: R) -> Result<Bundle> {
    let mut bundle = Bundle::default();
    let mut section: Option<(String, usize, String)> = None;

    let flush = |bundle: &mut Bundle, section: Option<(String, usize, String)>| -> Result<()> {
        let Some((name, offset, body)) = section else { return Ok(()) };
        let bytes = body.as_bytes();
        match name.as_str() {
            "Static_Plant_Data" => bundle.static_plants.extend(parse_static_plant_at(bytes, offset)?),
            "Static_Unit_Data" => bundle.static_units.extend(parse_static_unit_at(bytes, offset)?),
            "Plant_Data" => bundle.plant_samples.extend(parse_plant_at(bytes, offset)?),
            "Unit_Data" => bundle.unit_samples.extend(parse_unit_at(bytes, offset)?),
            other => {
                return Err(Error::at_line(offset, format!("unknown bundle section {other:?}")))
            }
        }
        Ok(())
    };

    for (idx, line) in BufReader::new(input).lines().enumerate() {
        let line = line?;
        if let Some(name) = line.strip_prefix(SECTION_MARK) {
            flush(&mut bundle, section.take())?;
            section = Some((name.trim().to_string(), idx + 1, String::new()));
        } else if let Some((_, _, body)) = section.as_mut() {
            body.push_str(&line);
            body.push('\n');
        } else if !line.trim().is_empty() {
            return Err(Error::at_line(idx + 1, "data before first `#@` section marker"));
        }
    }
    flush(&mut bundle, section)?;
    Ok(bundle)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn negative_flow_names_line() {
        let csv = format!(
            "{PLANT_HEADER}\nP,2020-01-01T00:00:00Z,10,100,5,0,1\nP,2020-01-01T01:00:00Z,-5,100,5,0,1\n"
        );
        let err = parse_plant_csv(csv.as_bytes()).unwrap_err();
        match err {
            Error::Validation { line, message } => {
                assert_eq!(line, Some(3));
                assert!(message.contains("flow_cfs"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_row_names_line() {
        let csv = format!("{PLANT_HEADER}\nP,2020-01-01T00:00:00Z,abc,100,5,0,1\n");
        assert!(matches!(
            parse_plant_csv(csv.as_bytes()),
            Err(Error::Validation { line: Some(2), .. })
        ));
    }

    #[test]
    fn missing_numbers_are_null() {
        let csv = format!("{PLANT_HEADER}\nP,2020-01-01T00:00:00Z,,100,,0,\n");
        let rows = parse_plant_csv(csv.as_bytes()).unwrap();
        assert_eq!(rows[0].flow_cfs, None);
        assert_eq!(rows[0].head_ft, Some(100.0));
        assert_eq!(rows[0].total_mw, None);
    }

    #[test]
    fn wrong_header_rejected() {
        assert!(parse_unit_csv("unit,timestamp,mw\n".as_bytes()).is_err());
        assert!(parse_unit_csv(format!("{UNIT_HEADER}\n").as_bytes()).unwrap().is_empty());
    }

    #[test]
    fn scada_dash_is_absent() {
        let csv = format!("{STATIC_UNIT_HEADER}\nPlant B,Plant B Bus1,2,B ID1,300,2,-\n");
        let units = parse_static_unit_csv(csv.as_bytes()).unwrap();
        assert_eq!(units[0].unit_id, "2-B ID1");
        assert_eq!(units[0].scada_bus_number.as_deref(), Some("2"));
        assert_eq!(units[0].scada_bus_id, None);
    }

    #[test]
    fn bundle_error_line_is_global() {
        let text = format!(
            "#@ Static_Plant_Data\n{STATIC_PLANT_HEADER}\n#@ Plant_Data\n{PLANT_HEADER}\nP,2020-01-01T00:00:00Z,-1,1,1,1,1\n"
        );
        assert!(matches!(
            read_bundle(text.as_bytes()),
            Err(Error::Validation { line: Some(5), .. })
        ));
    }
}
