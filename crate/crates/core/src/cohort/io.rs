//! Stay files: one `time_s,variable_id,value` CSV per stay plus a JSON
//! sidecar with the static variables.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{resample, Cohort, GriddedStay, PlantedEpisode, RawMeasurement};
use crate::variables::{self, ADMISSION_ORIGIN, AGE, WEIGHT};
use crate::{EwsError, Result, Seconds};

pub const STAY_HEADER: [&str; 3] = ["time_s", "variable_id", "value"];
pub const GROUND_TRUTH_FILE: &str = "ground_truth.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StaySidecar {
    pub stay_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub age: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub admission_origin: Option<f64>,
}

impl StaySidecar {
    fn statics(&self) -> BTreeMap<String, f64> {
        [(AGE, self.age), (WEIGHT, self.weight), (ADMISSION_ORIGIN, self.admission_origin)]
            .into_iter()
            .filter_map(|(k, v)| v.map(|v| (k.to_string(), v)))
            .collect()
    }

    fn from_stay(stay: &GriddedStay) -> Self {
        StaySidecar {
            stay_id: stay.stay_id.clone(),
            age: stay.statics.get(AGE).copied(),
            weight: stay.statics.get(WEIGHT).copied(),
            admission_origin: stay.statics.get(ADMISSION_ORIGIN).copied(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LoadWarning {
    pub path: PathBuf,
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone)]
pub struct CohortLoad {
    pub cohort: Cohort,
    pub warnings: Vec<LoadWarning>,
}

/// Loads every `*.csv` stay file in `dir` (sorted by file name).
pub fn load_cohort(dir: &Path, grid_step: Seconds) -> Result<CohortLoad> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| EwsError::io(dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|ext| ext == "csv"))
        .collect();
    paths.sort();

    let mut stays = Vec::with_capacity(paths.len());
    let mut warnings = Vec::new();
    for path in &paths {
        let stay = load_stay(path, grid_step, &mut warnings)?;
        stays.push(stay);
    }

    let truth_path = dir.join(GROUND_TRUTH_FILE);
    let truth = if truth_path.exists() {
        let text = fs::read_to_string(&truth_path).map_err(|e| EwsError::io(&truth_path, e))?;
        serde_json::from_str(&text)?
    } else {
        BTreeMap::new()
    };
    Ok(CohortLoad { cohort: Cohort { stays, truth }, warnings })
}

/// Loads one stay CSV and its sidecar (`<stem>.json`, optional).
pub fn load_stay(path: &Path, grid_step: Seconds, warnings: &mut Vec<LoadWarning>) -> Result<GriddedStay> {
    let stem = path
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| EwsError::Config(format!("bad stay file name {}", path.display())))?
        .to_string();
    let sidecar_path = path.with_extension("json");
    let sidecar = if sidecar_path.exists() {
        let text = fs::read_to_string(&sidecar_path).map_err(|e| EwsError::io(&sidecar_path, e))?;
        serde_json::from_str::<StaySidecar>(&text)?
    } else {
        warnings.push(LoadWarning { path: sidecar_path, line: 0, message: "missing sidecar, no statics".into() });
        StaySidecar { stay_id: stem, age: None, weight: None, admission_origin: None }
    };

    let rows = read_rows(path, warnings)?;
    let stay = GriddedStay::from_measurements(sidecar.stay_id.clone(), sidecar.statics(), rows)?;
    if grid_step == stay.grid_step {
        Ok(stay)
    } else {
        resample(&stay, grid_step)
    }
}

fn read_rows(path: &Path, warnings: &mut Vec<LoadWarning>) -> Result<Vec<RawMeasurement>> {
    let parse_err = |line: usize, message: String| EwsError::Parse { path: path.to_path_buf(), line, message };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => EwsError::io(path, io),
            other => parse_err(1, format!("{other:?}")),
        })?;
    let header = reader.headers().map_err(|e| parse_err(1, e.to_string()))?;
    if header.iter().collect::<Vec<_>>() != STAY_HEADER {
        return Err(parse_err(1, format!("expected header {}", STAY_HEADER.join(","))));
    }

    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            parse_err(line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.len() != 3 {
            return Err(parse_err(line, format!("expected 3 fields, got {}", record.len())));
        }
        let time: Seconds = record[0]
            .trim()
            .parse()
            .map_err(|_| parse_err(line, format!("bad time_s {:?}", &record[0])))?;
        let value: f64 = record[2]
            .trim()
            .parse()
            .map_err(|_| parse_err(line, format!("bad value {:?}", &record[2])))?;
        let row = RawMeasurement { variable_id: record[1].trim().to_string(), time, value };
        row.validate().map_err(|msg| parse_err(line, msg))?;
        if !variables::is_known(&row.variable_id) {
            log::warn!("{}:{line}: unknown variable {}", path.display(), row.variable_id);
            warnings.push(LoadWarning {
                path: path.to_path_buf(),
                line,
                message: format!("unknown variable {}", row.variable_id),
            });
        }
        rows.push(row);
    }
    Ok(rows)
}

/// Writes one stay as `<dir>/<stay_id>.csv` plus sidecar.
pub fn write_stay(stay: &GriddedStay, dir: &Path) -> Result<()> {
    let csv_path = dir.join(format!("{}.csv", stay.stay_id));
    let mut writer = csv::Writer::from_path(&csv_path)?;
    writer.write_record(STAY_HEADER)?;
    for m in stay.measurements() {
        writer.write_record([m.time.to_string(), m.variable_id, m.value.to_string()])?;
    }
    writer.flush().map_err(|e| EwsError::io(&csv_path, e))?;

    let sidecar_path = dir.join(format!("{}.json", stay.stay_id));
    let text = serde_json::to_string_pretty(&StaySidecar::from_stay(stay))?;
    fs::write(&sidecar_path, text).map_err(|e| EwsError::io(&sidecar_path, e))
}

/// Writes all stays and, when present, the planted ground truth.
pub fn save_cohort(cohort: &Cohort, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| EwsError::io(dir, e))?;
    for stay in &cohort.stays {
        write_stay(stay, dir)?;
    }
    if !cohort.truth.is_empty() {
        let path = dir.join(GROUND_TRUTH_FILE);
        let truth: &BTreeMap<String, Vec<PlantedEpisode>> = &cohort.truth;
        fs::write(&path, serde_json::to_string_pretty(truth)?).map_err(|e| EwsError::io(&path, e))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, body: &str) {
        fs::write(dir.join(name), body).unwrap();
    }

    #[test]
    fn three_rows_one_stay() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "a.csv", "time_s,variable_id,value\n600,spo2,95\n0,spo2,97\n300,resp_rate,18\n");
        write(dir.path(), "a.json", r#"{"stay_id":"a","age":64,"weight":80.5,"admission_origin":2}"#);
        let load = load_cohort(dir.path(), 300).unwrap();
        assert_eq!(load.cohort.len(), 1);
        let stay = &load.cohort.stays[0];
        assert_eq!(stay.n_measurements(), 3);
        assert_eq!(stay.raw_samples("spo2")[0].time, 0);
        assert_eq!(stay.statics[AGE], 64.0);
        assert!(load.warnings.is_empty());
    }

    #[test]
    fn empty_directory() {
        let dir = tempfile::tempdir().unwrap();
        let load = load_cohort(dir.path(), 300).unwrap();
        assert!(load.cohort.is_empty());
    }

    #[test]
    fn nan_value_rejected_with_line() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "a.csv", "time_s,variable_id,value\n0,spo2,97\n300,spo2,NaN\n");
        match load_cohort(dir.path(), 300) {
            Err(EwsError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn malformed_time_rejected() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "a.csv", "time_s,variable_id,value\n1.5,spo2,97\n");
        assert!(matches!(load_cohort(dir.path(), 300), Err(EwsError::Parse { line: 2, .. })));
        write(dir.path(), "a.csv", "time_s,variable_id,value\n-5,spo2,97\n");
        assert!(matches!(load_cohort(dir.path(), 300), Err(EwsError::Parse { line: 2, .. })));
    }

    #[test]
    fn unknown_variable_warns_and_keeps_row() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "a.csv", "time_s,variable_id,value\n0,spo2,97\n0,mystery,1\n");
        let load = load_cohort(dir.path(), 300).unwrap();
        assert_eq!(load.warnings.len(), 2); // missing sidecar + unknown variable
        assert_eq!(load.cohort.stays[0].n_measurements(), 2);
        assert_eq!(load.cohort.stays[0].stay_id, "a");
    }

    #[test]
    fn save_then_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let stay = GriddedStay::from_measurements(
            "x1",
            [(AGE.to_string(), 50.0)].into_iter().collect(),
            [
                RawMeasurement { variable_id: "spo2".into(), time: 0, value: 96.5 },
                RawMeasurement { variable_id: "pao2".into(), time: 1200, value: 0.1 + 0.2 },
            ],
        )
        .unwrap();
        let cohort = Cohort { stays: vec![stay], truth: BTreeMap::new() };
        save_cohort(&cohort, dir.path()).unwrap();
        let back = load_cohort(dir.path(), 300).unwrap().cohort;
        assert_eq!(back, cohort);
    }
}
