//! Layout of a servable data directory and its per-stay artifact files.

use std::path::Path;

use crate::alarm::StayScores;
use crate::{EwsError, Result, Seconds};

pub const COHORT_DIR: &str = "cohort";
pub const PREDICTIONS_DIR: &str = "predictions";
pub const EVENTS_DIR: &str = "events";
pub const PF_DIR: &str = "pf";
pub const ANNOTATIONS_DIR: &str = "annotations";
pub const ANNOTATION_TYPES_FILE: &str = "annotation_types.json";

/// `time_s,score` with `na` where no prediction exists.
pub fn predictions_to_csv(series: &StayScores) -> String {
    let mut out = String::from("time_s,score\n");
    for (t, s) in series.times.iter().zip(&series.scores) {
        match s {
            Some(v) => out.push_str(&format!("{t},{v}\n")),
            None => out.push_str(&format!("{t},na\n")),
        }
    }
    out
}

pub fn predictions_from_csv(text: &str, path: &Path) -> Result<Vec<(Seconds, Option<f64>)>> {
    let bad = |line: usize, message: String| EwsError::Parse { path: path.to_path_buf(), line, message };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == "time_s,score" => {}
        _ => return Err(bad(1, "expected header time_s,score".into())),
    }
    let mut out = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let (t, s) = line.split_once(',').ok_or_else(|| bad(i + 1, "expected two fields".into()))?;
        let t: Seconds = t.trim().parse().map_err(|_| bad(i + 1, format!("bad time {t:?}")))?;
        let s = match s.trim() {
            "na" => None,
            v => Some(v.parse::<f64>().map_err(|_| bad(i + 1, format!("bad score {v:?}")))?),
        };
        out.push((t, s));
    }
    Ok(out)
}

/// The `fio2_est` column of a P/F track file, one value per grid point.
pub fn fio2_from_pf_csv(text: &str, path: &Path) -> Result<Vec<Option<f64>>> {
    let bad = |line: usize, message: String| EwsError::Parse { path: path.to_path_buf(), line, message };
    let mut lines = text.lines().enumerate();
    let col = match lines.next() {
        Some((_, h)) => h.split(',').position(|c| c.trim() == "fio2_est").ok_or_else(|| bad(1, "no fio2_est column".into()))?,
        None => return Err(bad(1, "empty file".into())),
    };
    let mut out = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let v = line.split(',').nth(col).ok_or_else(|| bad(i + 1, "missing fio2_est field".into()))?.trim();
        out.push(match v {
            "na" => None,
            v => Some(v.parse::<f64>().map_err(|_| bad(i + 1, format!("bad fio2_est {v:?}")))?),
        });
    }
    Ok(out)
}
