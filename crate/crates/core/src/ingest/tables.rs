//! CSV parsers and writers for the tabular cohort inputs: lab events, vital
//! samples, patient context, and label thresholds.
//!
//! Every parser checks the header exactly, reports failures with a 1-based
//! data-row number, and normalizes times to UTC epoch seconds. Event and
//! vital lists come back stably sorted by `(patient_id, time)`.

use super::{
    parse_time_cell, IngestError, LabEvent, PatientContext, Race, Sex, VitalChannel, VitalSample,
};
use crate::cohort::{AbnormalityLabel, Direction, LabelCategory};
use std::fs::File;
use std::path::Path;

const EVENTS_HEADER: [&str; 5] = ["patient_id", "item_id", "time", "value", "unit"];
const VITALS_HEADER: [&str; 4] = ["patient_id", "channel", "time", "value"];
const CONTEXT_HEADER: [&str; 7] = [
    "patient_id",
    "age",
    "sex",
    "race",
    "bmi",
    "weight_kg",
    "height_cm",
];
const THRESHOLDS_HEADER: [&str; 7] = [
    "label_id",
    "item_id",
    "display_name",
    "direction",
    "threshold",
    "unit",
    "category",
];

fn open_reader(path: &Path, expected_header: &[&str]) -> Result<csv::Reader<File>, IngestError> {
    let file = File::open(path).map_err(|source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(file);
    let header = rdr.headers().map_err(|source| IngestError::Csv {
        path: path.to_path_buf(),
        source,
    })?;
    let got: Vec<&str> = header.iter().collect();
    if got != expected_header {
        return Err(IngestError::MalformedHeader {
            path: path.to_path_buf(),
            detail: format!("expected columns {expected_header:?}, got {got:?}"),
        });
    }
    Ok(rdr)
}

fn csv_writer(path: &Path) -> Result<csv::Writer<File>, IngestError> {
    let file = File::create(path).map_err(|source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(csv::Writer::from_writer(file))
}

fn wrap_csv(path: &Path, source: csv::Error) -> IngestError {
    IngestError::Csv {
        path: path.to_path_buf(),
        source,
    }
}

fn parse_finite(path: &Path, row: u64, field: &str, s: &str) -> Result<f64, IngestError> {
    match s.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(IngestError::NonFiniteValue {
            path: path.to_path_buf(),
            row,
            field: field.to_string(),
            got: s.to_string(),
        }),
    }
}

fn parse_opt_finite(
    path: &Path,
    row: u64,
    field: &str,
    s: &str,
) -> Result<Option<f64>, IngestError> {
    if s.is_empty() {
        Ok(None)
    } else {
        parse_finite(path, row, field, s).map(Some)
    }
}

fn parse_time(path: &Path, row: u64, s: &str) -> Result<i64, IngestError> {
    parse_time_cell(s).ok_or_else(|| IngestError::UnparseableTime {
        path: path.to_path_buf(),
        row,
        got: s.to_string(),
    })
}

/// Read a lab-event table (`patient_id,item_id,time,value,unit`), returning
/// events stably sorted by `(patient_id, time)`.
pub fn parse_events(path: &Path) -> Result<Vec<LabEvent>, IngestError> {
    let mut rdr = open_reader(path, &EVENTS_HEADER)?;
    let mut events = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i as u64 + 1;
        let rec = rec.map_err(|e| wrap_csv(path, e))?;
        events.push(LabEvent {
            patient_id: rec[0].to_string(),
            item_id: rec[1].to_string(),
            time: parse_time(path, row, &rec[2])?,
            value: parse_finite(path, row, "value", &rec[3])?,
            unit: rec[4].to_string(),
        });
    }
    events.sort_by(|a, b| (&a.patient_id, a.time).cmp(&(&b.patient_id, b.time)));
    Ok(events)
}

pub fn write_events(events: &[LabEvent], path: &Path) -> Result<(), IngestError> {
    let mut wtr = csv_writer(path)?;
    wtr.write_record(EVENTS_HEADER).map_err(|e| wrap_csv(path, e))?;
    for e in events {
        wtr.write_record([
            e.patient_id.as_str(),
            e.item_id.as_str(),
            &e.time.to_string(),
            &e.value.to_string(),
            e.unit.as_str(),
        ])
        .map_err(|e| wrap_csv(path, e))?;
    }
    wtr.flush().map_err(|source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Read a vital-sample table (`patient_id,channel,time,value`), returning
/// samples stably sorted by `(patient_id, time)`.
pub fn parse_vitals(path: &Path) -> Result<Vec<VitalSample>, IngestError> {
    let mut rdr = open_reader(path, &VITALS_HEADER)?;
    let mut vitals = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i as u64 + 1;
        let rec = rec.map_err(|e| wrap_csv(path, e))?;
        let channel =
            VitalChannel::from_str_opt(&rec[1]).ok_or_else(|| IngestError::UnknownChannel {
                path: path.to_path_buf(),
                row,
                got: rec[1].to_string(),
            })?;
        vitals.push(VitalSample {
            patient_id: rec[0].to_string(),
            channel,
            time: parse_time(path, row, &rec[2])?,
            value: parse_finite(path, row, "value", &rec[3])?,
        });
    }
    vitals.sort_by(|a, b| (&a.patient_id, a.time).cmp(&(&b.patient_id, b.time)));
    Ok(vitals)
}

pub fn write_vitals(vitals: &[VitalSample], path: &Path) -> Result<(), IngestError> {
    let mut wtr = csv_writer(path)?;
    wtr.write_record(VITALS_HEADER).map_err(|e| wrap_csv(path, e))?;
    for v in vitals {
        wtr.write_record([
            v.patient_id.as_str(),
            v.channel.as_str(),
            &v.time.to_string(),
            &v.value.to_string(),
        ])
        .map_err(|e| wrap_csv(path, e))?;
    }
    wtr.flush().map_err(|source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Read a patient-context table
/// (`patient_id,age,sex,race,bmi,weight_kg,height_cm`; empty cell = missing),
/// returning rows stably sorted by `patient_id`.
pub fn parse_context(path: &Path) -> Result<Vec<PatientContext>, IngestError> {
    let mut rdr = open_reader(path, &CONTEXT_HEADER)?;
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i as u64 + 1;
        let rec = rec.map_err(|e| wrap_csv(path, e))?;
        let sex = if rec[2].is_empty() {
            None
        } else {
            Some(
                Sex::from_str_opt(&rec[2]).ok_or_else(|| IngestError::UnknownCategory {
                    path: path.to_path_buf(),
                    row,
                    field: "sex".into(),
                    got: rec[2].to_string(),
                })?,
            )
        };
        let race = if rec[3].is_empty() {
            None
        } else {
            Some(
                Race::from_str_opt(&rec[3]).ok_or_else(|| IngestError::UnknownCategory {
                    path: path.to_path_buf(),
                    row,
                    field: "race".into(),
                    got: rec[3].to_string(),
                })?,
            )
        };
        rows.push(PatientContext {
            patient_id: rec[0].to_string(),
            age: parse_opt_finite(path, row, "age", &rec[1])?,
            sex,
            race,
            bmi: parse_opt_finite(path, row, "bmi", &rec[4])?,
            weight_kg: parse_opt_finite(path, row, "weight_kg", &rec[5])?,
            height_cm: parse_opt_finite(path, row, "height_cm", &rec[6])?,
        });
    }
    rows.sort_by(|a, b| a.patient_id.cmp(&b.patient_id));
    Ok(rows)
}

pub fn write_context(rows: &[PatientContext], path: &Path) -> Result<(), IngestError> {
    fn opt_num(v: Option<f64>) -> String {
        v.map(|x| x.to_string()).unwrap_or_default()
    }
    let mut wtr = csv_writer(path)?;
    wtr.write_record(CONTEXT_HEADER).map_err(|e| wrap_csv(path, e))?;
    for r in rows {
        wtr.write_record([
            r.patient_id.as_str(),
            &opt_num(r.age),
            r.sex.map(|s| s.as_str()).unwrap_or(""),
            r.race.map(|s| s.as_str()).unwrap_or(""),
            &opt_num(r.bmi),
            &opt_num(r.weight_kg),
            &opt_num(r.height_cm),
        ])
        .map_err(|e| wrap_csv(path, e))?;
    }
    wtr.flush().map_err(|source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Read a threshold table
/// (`label_id,item_id,display_name,direction,threshold,unit,category`) in
/// file order; validation and ordering of the label space happen in
/// [`crate::cohort::build_label_space`].
pub fn parse_thresholds(path: &Path) -> Result<Vec<AbnormalityLabel>, IngestError> {
    let mut rdr = open_reader(path, &THRESHOLDS_HEADER)?;
    let mut labels = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i as u64 + 1;
        let rec = rec.map_err(|e| wrap_csv(path, e))?;
        let direction =
            Direction::from_str_opt(&rec[3]).ok_or_else(|| IngestError::UnknownCategory {
                path: path.to_path_buf(),
                row,
                field: "direction".into(),
                got: rec[3].to_string(),
            })?;
        let category =
            LabelCategory::from_code(&rec[6]).ok_or_else(|| IngestError::UnknownCategory {
                path: path.to_path_buf(),
                row,
                field: "category".into(),
                got: rec[6].to_string(),
            })?;
        labels.push(AbnormalityLabel {
            label_id: rec[0].to_string(),
            item_id: rec[1].to_string(),
            display_name: rec[2].to_string(),
            direction,
            threshold: parse_finite(path, row, "threshold", &rec[4])?,
            unit: rec[5].to_string(),
            category,
        });
    }
    Ok(labels)
}

pub fn write_thresholds(labels: &[AbnormalityLabel], path: &Path) -> Result<(), IngestError> {
    let mut wtr = csv_writer(path)?;
    wtr.write_record(THRESHOLDS_HEADER)
        .map_err(|e| wrap_csv(path, e))?;
    for l in labels {
        wtr.write_record([
            l.label_id.as_str(),
            l.item_id.as_str(),
            l.display_name.as_str(),
            l.direction.as_str(),
            &l.threshold.to_string(),
            l.unit.as_str(),
            l.category.code(),
        ])
        .map_err(|e| wrap_csv(path, e))?;
    }
    wtr.flush().map_err(|source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    })
}
