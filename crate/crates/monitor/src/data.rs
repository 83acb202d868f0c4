//! Read-only views over the artifact files of a data directory.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Duration, SecondsFormat, Utc};
use ews_core::artifacts::{predictions_from_csv, COHORT_DIR, EVENTS_DIR, PREDICTIONS_DIR};
use ews_core::cohort::{load_stay, GriddedStay, Sample};
use ews_core::labeler::{events_from_json, FailureEvent};
use ews_core::{variables, Seconds};
use serde::Serialize;

use crate::error::ApiError;

/// Stay ids double as file stems, so they are restricted to a safe alphabet.
pub fn valid_stay_id(id: &str) -> bool {
    !id.is_empty() && !id.starts_with('.') && id.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.'))
}

#[derive(Debug, Clone)]
pub struct DataDir {
    pub root: PathBuf,
    pub epoch: DateTime<Utc>,
    pub grid_step: Seconds,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChannelInfo {
    pub id: String,
    pub label: String,
    pub unit: String,
    pub n_samples: usize,
    pub first_s: Seconds,
    pub last_s: Seconds,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PatientDescriptor {
    pub stay_id: String,
    pub admission_time: String,
    pub length_of_stay_s: Seconds,
    pub n_measurements: usize,
    pub channels: Vec<ChannelInfo>,
    pub statics: BTreeMap<String, f64>,
    pub has_predictions: bool,
    pub n_events: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeriesPoint {
    pub time_s: Seconds,
    pub time: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChannelSeries {
    pub id: String,
    pub unit: String,
    /// Samples in range before decimation.
    pub n_total: usize,
    pub decimated: bool,
    pub points: Vec<SeriesPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PredictionPoint {
    pub time_s: Seconds,
    pub time: String,
    /// Null where no prediction is produced.
    pub score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Gap {
    pub start_s: Seconds,
    pub end_s: Seconds,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Predictions {
    pub stay_id: String,
    pub points: Vec<PredictionPoint>,
    /// Maximal runs of points without a score, as closed intervals.
    pub gaps: Vec<Gap>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EventView {
    pub start_s: Seconds,
    pub end_s: Seconds,
    pub start: String,
    pub end: String,
    #[serde(rename = "type")]
    pub event_type: String,
}

/// Keeps the first and last point and, per bucket, the minimum and maximum
/// in time order, so at most `max_points` survive.
pub fn decimate(samples: &[Sample], max_points: usize) -> Vec<Sample> {
    if samples.len() <= max_points || max_points < 4 {
        return if max_points > 0 && samples.len() > max_points { samples[..max_points].to_vec() } else { samples.to_vec() };
    }
    let inner = &samples[1..samples.len() - 1];
    let buckets = (max_points - 2) / 2;
    let mut out = vec![samples[0]];
    for b in 0..buckets {
        let lo = b * inner.len() / buckets;
        let hi = (b + 1) * inner.len() / buckets;
        let chunk = &inner[lo..hi];
        if chunk.is_empty() {
            continue;
        }
        let (mut imin, mut imax) = (0, 0);
        for (i, s) in chunk.iter().enumerate() {
            if s.value < chunk[imin].value {
                imin = i;
            }
            if s.value > chunk[imax].value {
                imax = i;
            }
        }
        let (a, b) = (imin.min(imax), imin.max(imax));
        out.push(chunk[a]);
        if b != a {
            out.push(chunk[b]);
        }
    }
    out.push(samples[samples.len() - 1]);
    out
}

impl DataDir {
    pub fn iso(&self, t: Seconds) -> String {
        (self.epoch + Duration::seconds(t)).to_rfc3339_opts(SecondsFormat::Secs, true)
    }

    fn stay_path(&self, id: &str) -> Result<PathBuf, ApiError> {
        let path = self.root.join(COHORT_DIR).join(format!("{id}.csv"));
        if valid_stay_id(id) && path.is_file() {
            Ok(path)
        } else {
            Err(ApiError::not_found(format!("unknown stay {id:?}")))
        }
    }

    pub fn stay_ids(&self) -> Result<Vec<String>, ApiError> {
        let dir = self.root.join(COHORT_DIR);
        let entries = fs::read_dir(&dir).map_err(|e| ApiError::internal(format!("{}: {e}", dir.display())))?;
        let mut ids: Vec<String> = entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "csv"))
            .filter_map(|p| p.file_stem().and_then(|s| s.to_str()).map(str::to_string))
            .filter(|id| valid_stay_id(id))
            .collect();
        ids.sort();
        Ok(ids)
    }

    pub fn has_stay(&self, id: &str) -> bool {
        self.stay_path(id).is_ok()
    }

    pub fn load(&self, id: &str) -> Result<GriddedStay, ApiError> {
        let path = self.stay_path(id)?;
        Ok(load_stay(&path, self.grid_step, &mut Vec::new())?)
    }

    fn optional_file(&self, dir: &str, id: &str, ext: &str) -> Option<PathBuf> {
        let p = self.root.join(dir).join(format!("{id}.{ext}"));
        p.is_file().then_some(p)
    }

    pub fn events(&self, id: &str) -> Result<Vec<FailureEvent>, ApiError> {
        self.stay_path(id)?;
        match self.optional_file(EVENTS_DIR, id, "json") {
            Some(p) => {
                let text = read(&p)?;
                Ok(events_from_json(&text)?)
            }
            None => Ok(vec![]),
        }
    }

    pub fn descriptor(&self, id: &str) -> Result<PatientDescriptor, ApiError> {
        let stay = self.load(id)?;
        let channels = stay
            .raw
            .iter()
            .map(|(var, samples)| {
                let info = variables::lookup(var);
                ChannelInfo {
                    id: var.clone(),
                    label: info.map_or(var.as_str(), |i| i.label).to_string(),
                    unit: info.map_or("", |i| i.unit).to_string(),
                    n_samples: samples.len(),
                    first_s: samples.first().map_or(0, |s| s.time),
                    last_s: samples.last().map_or(0, |s| s.time),
                }
            })
            .collect();
        Ok(PatientDescriptor {
            stay_id: stay.stay_id.clone(),
            admission_time: self.iso(0),
            length_of_stay_s: stay.end_time,
            n_measurements: stay.n_measurements(),
            channels,
            statics: stay.statics.clone(),
            has_predictions: self.optional_file(PREDICTIONS_DIR, id, "csv").is_some(),
            n_events: self.events(id)?.len(),
        })
    }

    pub fn series(
        &self,
        id: &str,
        channels: Option<&[String]>,
        from_s: Option<Seconds>,
        to_s: Option<Seconds>,
        max_points: Option<usize>,
    ) -> Result<Vec<ChannelSeries>, ApiError> {
        let stay = self.load(id)?;
        let wanted: Vec<String> = match channels {
            Some(c) => c.to_vec(),
            None => stay.raw.keys().cloned().collect(),
        };
        let (lo, hi) = (from_s.unwrap_or(Seconds::MIN), to_s.unwrap_or(Seconds::MAX));
        if lo > hi {
            return Err(ApiError::bad_request("from_s must not exceed to_s"));
        }
        wanted
            .iter()
            .map(|var| {
                if !stay.raw.contains_key(var) && !variables::is_known(var) {
                    return Err(ApiError::not_found(format!("unknown channel {var:?}")));
                }
                let in_range: Vec<Sample> = stay.raw_samples(var).iter().copied().filter(|s| s.time >= lo && s.time <= hi).collect();
                let kept = match max_points {
                    Some(m) => decimate(&in_range, m),
                    None => in_range.clone(),
                };
                Ok(ChannelSeries {
                    id: var.clone(),
                    unit: variables::lookup(var).map_or("", |i| i.unit).to_string(),
                    n_total: in_range.len(),
                    decimated: kept.len() < in_range.len(),
                    points: kept.iter().map(|s| SeriesPoint { time_s: s.time, time: self.iso(s.time), value: s.value }).collect(),
                })
            })
            .collect()
    }

    pub fn predictions(&self, id: &str) -> Result<Predictions, ApiError> {
        self.stay_path(id)?;
        let path = self
            .optional_file(PREDICTIONS_DIR, id, "csv")
            .ok_or_else(|| ApiError::not_found(format!("no predictions for stay {id:?}")))?;
        let rows = predictions_from_csv(&read(&path)?, &path)?;
        let mut gaps: Vec<Gap> = Vec::new();
        let mut open: Option<(Seconds, Seconds)> = None;
        for &(t, s) in &rows {
            match (s, open) {
                (None, None) => open = Some((t, t)),
                (None, Some((a, _))) => open = Some((a, t)),
                (Some(_), Some((a, b))) => {
                    gaps.push(Gap { start_s: a, end_s: b });
                    open = None;
                }
                (Some(_), None) => {}
            }
        }
        if let Some((a, b)) = open {
            gaps.push(Gap { start_s: a, end_s: b });
        }
        Ok(Predictions {
            stay_id: id.to_string(),
            points: rows.into_iter().map(|(t, score)| PredictionPoint { time_s: t, time: self.iso(t), score }).collect(),
            gaps,
        })
    }

    pub fn event_views(&self, id: &str) -> Result<Vec<EventView>, ApiError> {
        Ok(self
            .events(id)?
            .into_iter()
            .map(|e| EventView {
                start_s: e.start_s,
                end_s: e.end_s,
                start: self.iso(e.start_s),
                end: self.iso(e.end_s),
                event_type: serde_json::to_value(e.event_type).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default(),
            })
            .collect())
    }
}

fn read(path: &Path) -> Result<String, ApiError> {
    fs::read_to_string(path).map_err(|e| ApiError::internal(format!("{}: {e}", path.display())))
}
