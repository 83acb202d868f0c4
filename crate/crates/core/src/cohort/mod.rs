//! ICU stays, regular-grid resampling, file I/O, synthetic cohorts and splits.

mod io;
mod split;
mod synth;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::{EwsError, Result, Seconds, DEFAULT_GRID_STEP};

pub use io::{load_cohort, load_stay, save_cohort, write_stay, CohortLoad, LoadWarning, StaySidecar};
pub use split::{make_splits, CohortSplit};
pub use synth::{generate_synthetic_cohort, PlantedEpisode, ScenarioConfig};

/// One recorded value as it appears in a stay file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawMeasurement {
    pub variable_id: String,
    pub time: Seconds,
    pub value: f64,
}

impl RawMeasurement {
    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.variable_id.is_empty() {
            return Err("empty variable_id".into());
        }
        if self.time < 0 {
            return Err(format!("negative time {}", self.time));
        }
        if !self.value.is_finite() {
            return Err(format!("non-finite value {}", self.value));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub time: Seconds,
    pub value: f64,
}

/// A variable aligned to the grid.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Channel {
    pub values: Vec<Option<f64>>,
    /// True where the grid bin `(t - step, t]` holds at least one raw sample.
    pub is_real: Vec<bool>,
}

impl Channel {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// One ICU admission with raw measurements and a regular-grid view.
#[derive(Debug, Clone, PartialEq)]
pub struct GriddedStay {
    pub stay_id: String,
    pub statics: BTreeMap<String, f64>,
    /// Per variable, samples sorted by time.
    pub raw: BTreeMap<String, Vec<Sample>>,
    /// Last covered time; the grid spans `0..=end_time`.
    pub end_time: Seconds,
    pub grid_step: Seconds,
    pub gridded: BTreeMap<String, Channel>,
}

impl GriddedStay {
    /// Builds a stay from unordered measurements and grids it with the default
    /// step. `end_time` defaults to the latest measurement.
    pub fn from_measurements(
        stay_id: impl Into<String>,
        statics: BTreeMap<String, f64>,
        measurements: impl IntoIterator<Item = RawMeasurement>,
    ) -> Result<Self> {
        let mut raw: BTreeMap<String, Vec<Sample>> = BTreeMap::new();
        let mut end_time = 0;
        for m in measurements {
            m.validate().map_err(EwsError::Domain)?;
            end_time = end_time.max(m.time);
            raw.entry(m.variable_id)
                .or_default()
                .push(Sample { time: m.time, value: m.value });
        }
        for samples in raw.values_mut() {
            // stable: equal times keep file order, the later row wins on the grid
            samples.sort_by_key(|s| s.time);
        }
        let stay = GriddedStay {
            stay_id: stay_id.into(),
            statics,
            raw,
            end_time,
            grid_step: DEFAULT_GRID_STEP,
            gridded: BTreeMap::new(),
        };
        resample(&stay, DEFAULT_GRID_STEP)
    }

    pub fn n_grid(&self) -> usize {
        grid_len(self.end_time, self.grid_step)
    }

    pub fn grid_time(&self, index: usize) -> Seconds {
        index as Seconds * self.grid_step
    }

    pub fn grid_times(&self) -> Vec<Seconds> {
        (0..self.n_grid()).map(|i| self.grid_time(i)).collect()
    }

    /// Number of grid steps spanned by `duration` (rounded down).
    pub fn steps(&self, duration: Seconds) -> usize {
        (duration / self.grid_step) as usize
    }

    pub fn channel(&self, variable: &str) -> Option<&Channel> {
        self.gridded.get(variable)
    }

    pub fn value_at(&self, variable: &str, index: usize) -> Option<f64> {
        self.gridded.get(variable).and_then(|c| c.values.get(index).copied().flatten())
    }

    pub fn raw_samples(&self, variable: &str) -> &[Sample] {
        self.raw.get(variable).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Last raw sample at or before `t`.
    pub fn last_raw_at(&self, variable: &str, t: Seconds) -> Option<Sample> {
        let samples = self.raw_samples(variable);
        let idx = samples.partition_point(|s| s.time <= t);
        idx.checked_sub(1).map(|i| samples[i])
    }

    pub fn n_measurements(&self) -> usize {
        self.raw.values().map(Vec::len).sum()
    }

    /// Attaches a pipeline-computed channel aligned to the current grid.
    pub fn set_derived(&mut self, variable: &str, values: Vec<Option<f64>>) {
        assert_eq!(values.len(), self.n_grid(), "derived channel length must match the grid");
        let is_real = values.iter().map(Option::is_some).collect();
        self.gridded.insert(variable.to_string(), Channel { values, is_real });
    }

    /// The stay as it would have been observed up to time `t` (inclusive).
    pub fn truncated(&self, t: Seconds) -> GriddedStay {
        let raw = self
            .raw
            .iter()
            .map(|(k, v)| (k.clone(), v.iter().copied().filter(|s| s.time <= t).collect::<Vec<_>>()))
            .filter(|(_, v)| !v.is_empty())
            .collect();
        let stay = GriddedStay {
            stay_id: self.stay_id.clone(),
            statics: self.statics.clone(),
            raw,
            end_time: t.min(self.end_time),
            grid_step: self.grid_step,
            gridded: BTreeMap::new(),
        };
        resample(&stay, self.grid_step).expect("grid step already validated")
    }

    pub fn measurements(&self) -> Vec<RawMeasurement> {
        let mut rows: Vec<RawMeasurement> = self
            .raw
            .iter()
            .flat_map(|(id, samples)| {
                samples.iter().map(move |s| RawMeasurement {
                    variable_id: id.clone(),
                    time: s.time,
                    value: s.value,
                })
            })
            .collect();
        rows.sort_by(|a, b| a.time.cmp(&b.time).then_with(|| a.variable_id.cmp(&b.variable_id)));
        rows
    }
}

fn grid_len(end_time: Seconds, step: Seconds) -> usize {
    ((end_time + step - 1).max(0) / step) as usize + 1
}

/// Resamples the raw measurements of `stay` onto a grid of `grid_step`
/// seconds with forward fill. Derived channels are dropped.
pub fn resample(stay: &GriddedStay, grid_step: Seconds) -> Result<GriddedStay> {
    if grid_step <= 0 {
        return Err(EwsError::Config(format!("grid step must be positive, got {grid_step}")));
    }
    let n = grid_len(stay.end_time, grid_step);
    let gridded = stay
        .raw
        .iter()
        .map(|(id, samples)| (id.clone(), grid_channel(samples, n, grid_step)))
        .collect();
    Ok(GriddedStay {
        stay_id: stay.stay_id.clone(),
        statics: stay.statics.clone(),
        raw: stay.raw.clone(),
        end_time: stay.end_time,
        grid_step,
        gridded,
    })
}

fn grid_channel(samples: &[Sample], n: usize, step: Seconds) -> Channel {
    let mut values = Vec::with_capacity(n);
    let mut is_real = Vec::with_capacity(n);
    let mut next = 0;
    let mut last: Option<f64> = None;
    for i in 0..n {
        let t = i as Seconds * step;
        let mut real = false;
        while next < samples.len() && samples[next].time <= t {
            last = Some(samples[next].value);
            real |= samples[next].time > t - step;
            next += 1;
        }
        values.push(last);
        is_real.push(real);
    }
    Channel { values, is_real }
}

/// A collection of stays plus optional planted ground truth.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Cohort {
    pub stays: Vec<GriddedStay>,
    pub truth: BTreeMap<String, Vec<PlantedEpisode>>,
}

impl Cohort {
    pub fn len(&self) -> usize {
        self.stays.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stays.is_empty()
    }

    pub fn get(&self, stay_id: &str) -> Option<&GriddedStay> {
        self.stays.iter().find(|s| s.stay_id == stay_id)
    }

    pub fn stay_ids(&self) -> Vec<String> {
        self.stays.iter().map(|s| s.stay_id.clone()).collect()
    }
}
