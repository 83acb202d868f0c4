//! Respiratory-failure events from the P/F track, and the prediction target.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cohort::GriddedStay;
use crate::pf::PfTrack;
use crate::variables::{PEEP, VENT_STATE};
use crate::{EwsError, Result, Seconds, HOUR};

/// Quorum as a fraction `QUORUM_NUM / QUORUM_DEN`, reached inclusively.
pub const QUORUM_NUM: usize = 2;
pub const QUORUM_DEN: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StayEndPolicy {
    /// Windows cut by the end of the stay use the remaining points.
    #[default]
    RemainingPoints,
    /// Points whose window is cut by the end of the stay are never flagged.
    Unflagged,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LabelerConfig {
    pub pf_threshold: f64,
    /// Minimum PEEP, in recorded units, for a ventilated point to count.
    pub peep_threshold: f64,
    pub window_s: Seconds,
    pub merge_gap_s: Seconds,
    /// Events lasting at most this long are dropped.
    pub min_duration_s: Seconds,
    pub horizon_s: Seconds,
    pub stay_end: StayEndPolicy,
}

impl Default for LabelerConfig {
    fn default() -> Self {
        LabelerConfig {
            pf_threshold: 200.0,
            peep_threshold: 5.0,
            window_s: 2 * HOUR,
            merge_gap_s: HOUR,
            min_duration_s: 2 * HOUR,
            horizon_s: 8 * HOUR,
            stay_end: StayEndPolicy::RemainingPoints,
        }
    }
}

impl LabelerConfig {
    pub fn validate(&self, grid_step: Seconds) -> Result<()> {
        if grid_step <= 0 || self.window_s <= 0 || self.window_s % grid_step != 0 {
            return Err(EwsError::Config(format!("window {} s must be a positive multiple of the grid step {grid_step} s", self.window_s)));
        }
        if self.merge_gap_s < 0 || self.min_duration_s < 0 || self.horizon_s <= 0 || !(self.pf_threshold > 0.0) {
            return Err(EwsError::Config("labeler constants must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Condition {
    pub holds: bool,
    /// Ventilated without a recorded PEEP.
    pub data_quality_flag: bool,
}

/// P/F below threshold while breathing spontaneously, or while ventilated
/// with sufficient PEEP.
pub fn failure_condition(pf: f64, ventilated: bool, peep: Option<f64>, config: &LabelerConfig) -> Condition {
    let low = pf < config.pf_threshold;
    match (ventilated, peep) {
        (false, _) => Condition { holds: low, data_quality_flag: false },
        (true, Some(p)) => Condition { holds: low && p >= config.peep_threshold, data_quality_flag: false },
        (true, None) => Condition { holds: false, data_quality_flag: true },
    }
}

/// Condition per grid point; `None` where P/F is undefined.
pub fn condition_series(stay: &GriddedStay, track: &PfTrack, config: &LabelerConfig) -> Vec<Option<Condition>> {
    track
        .points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let ventilated = stay.value_at(VENT_STATE, i).is_some_and(|v| v >= 0.5);
            p.pf.map(|pf| failure_condition(pf, ventilated, stay.value_at(PEEP, i), config))
        })
        .collect()
}

/// Flags point `i` when at least two thirds of the defined points in
/// `[i, i + window_points)` satisfy the condition.
pub fn annotate_state(condition: &[Option<bool>], window_points: usize, policy: StayEndPolicy) -> Vec<bool> {
    let n = condition.len();
    // prefix counts of defined and satisfied points
    let mut defined = vec![0usize; n + 1];
    let mut satisfied = vec![0usize; n + 1];
    for (i, c) in condition.iter().enumerate() {
        defined[i + 1] = defined[i] + usize::from(c.is_some());
        satisfied[i + 1] = satisfied[i] + usize::from(*c == Some(true));
    }
    (0..n)
        .map(|i| {
            let end = i + window_points;
            if end > n && policy == StayEndPolicy::Unflagged {
                return false;
            }
            let end = end.min(n);
            let d = defined[end] - defined[i];
            let s = satisfied[end] - satisfied[i];
            d > 0 && s * QUORUM_DEN >= QUORUM_NUM * d
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum EventType {
    #[default]
    #[serde(rename = "resp_failure_mod_sev")]
    ModerateSevere,
}

/// Closed interval `[start_s, end_s]` of grid times.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailureEvent {
    pub start_s: Seconds,
    pub end_s: Seconds,
    #[serde(rename = "type", default)]
    pub event_type: EventType,
}

impl FailureEvent {
    pub fn new(start_s: Seconds, end_s: Seconds) -> Self {
        FailureEvent { start_s, end_s, event_type: EventType::ModerateSevere }
    }

    pub fn duration(&self) -> Seconds {
        self.end_s - self.start_s
    }

    pub fn contains(&self, t: Seconds) -> bool {
        self.start_s <= t && t <= self.end_s
    }
}

/// Maximal runs of flagged points, merged while the gap between one end and
/// the next start is at most `merge_gap_s`, then filtered to durations above
/// `min_duration_s`.
pub fn build_events(flags: &[bool], grid_step: Seconds, config: &LabelerConfig) -> Vec<FailureEvent> {
    let mut runs: Vec<FailureEvent> = Vec::new();
    let mut i = 0;
    while i < flags.len() {
        if flags[i] {
            let start = i;
            while i + 1 < flags.len() && flags[i + 1] {
                i += 1;
            }
            runs.push(FailureEvent::new(start as Seconds * grid_step, i as Seconds * grid_step));
        }
        i += 1;
    }
    let mut merged: Vec<FailureEvent> = Vec::new();
    for r in runs {
        match merged.last_mut() {
            Some(last) if r.start_s - last.end_s <= config.merge_gap_s => last.end_s = r.end_s,
            _ => merged.push(r),
        }
    }
    merged.retain(|e| e.duration() > config.min_duration_s);
    merged
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Positive,
    Negative,
    Undefined,
}

impl Label {
    pub fn as_bool(self) -> Option<bool> {
        match self {
            Label::Positive => Some(true),
            Label::Negative => Some(false),
            Label::Undefined => None,
        }
    }
}

/// Undefined inside events; otherwise positive iff an event starts in
/// `(t, t + horizon]`.
pub fn make_labels(events: &[FailureEvent], n_grid: usize, grid_step: Seconds, horizon_s: Seconds) -> Vec<Label> {
    let starts: Vec<Seconds> = events.iter().map(|e| e.start_s).collect();
    (0..n_grid)
        .map(|i| {
            let t = i as Seconds * grid_step;
            if events.iter().any(|e| e.contains(t)) {
                return Label::Undefined;
            }
            let next = starts.partition_point(|&s| s <= t);
            if starts.get(next).is_some_and(|&s| s <= t + horizon_s) {
                Label::Positive
            } else {
                Label::Negative
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct StayLabels {
    pub condition: Vec<Option<bool>>,
    pub flags: Vec<bool>,
    pub events: Vec<FailureEvent>,
    pub labels: Vec<Label>,
    /// Ventilated points without PEEP.
    pub n_data_quality_flags: usize,
}

pub fn label_stay(stay: &GriddedStay, track: &PfTrack, config: &LabelerConfig) -> Result<StayLabels> {
    config.validate(track.grid_step)?;
    let conditions = condition_series(stay, track, config);
    let n_data_quality_flags = conditions.iter().flatten().filter(|c| c.data_quality_flag).count();
    let condition: Vec<Option<bool>> = conditions
        .iter()
        .map(|c| c.and_then(|c| (!c.data_quality_flag).then_some(c.holds)))
        .collect();
    let flags = annotate_state(&condition, (config.window_s / track.grid_step) as usize, config.stay_end);
    let events = build_events(&flags, track.grid_step, config);
    let labels = make_labels(&events, track.len(), track.grid_step, config.horizon_s);
    Ok(StayLabels { condition, flags, events, labels, n_data_quality_flags })
}

pub fn events_to_json(events: &[FailureEvent]) -> Result<String> {
    Ok(serde_json::to_string_pretty(events)?)
}

pub fn events_from_json(text: &str) -> Result<Vec<FailureEvent>> {
    Ok(serde_json::from_str(text)?)
}

pub fn labels_to_csv(labels: &[Label], grid_step: Seconds) -> String {
    let mut out = String::from("time_s,label\n");
    for (i, l) in labels.iter().enumerate() {
        let v = match l {
            Label::Positive => "1",
            Label::Negative => "0",
            Label::Undefined => "na",
        };
        let _ = writeln!(out, "{},{v}", i as Seconds * grid_step);
    }
    out
}

/// Parses the `time_s,label` format back into `(time, label)` pairs.
pub fn labels_from_csv(text: &str, path: &Path) -> Result<Vec<(Seconds, Label)>> {
    let parse_err = |line: usize, message: String| EwsError::Parse { path: path.to_path_buf(), line, message };
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let (t, l) = line.split_once(',').ok_or_else(|| parse_err(n + 1, "expected two fields".into()))?;
        let t: Seconds = t.trim().parse().map_err(|e| parse_err(n + 1, format!("bad time: {e}")))?;
        let l = match l.trim() {
            "1" => Label::Positive,
            "0" => Label::Negative,
            "na" => Label::Undefined,
            other => return Err(parse_err(n + 1, format!("bad label {other:?}"))),
        };
        out.push((t, l));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;
    use rand::Rng;

    const STEP: Seconds = 300;

    fn cfg() -> LabelerConfig {
        LabelerConfig::default()
    }

    #[test]
    fn condition_cases() {
        let c = cfg();
        assert!(failure_condition(150.0, true, Some(8.0), &c).holds);
        assert!(!failure_condition(150.0, true, Some(3.0), &c).holds);
        assert!(!failure_condition(250.0, false, None, &c).holds);
        assert!(failure_condition(199.9, false, None, &c).holds);
        assert!(!failure_condition(200.0, false, None, &c).holds);
        assert!(failure_condition(150.0, true, Some(5.0), &c).holds);
        let missing = failure_condition(150.0, true, None, &c);
        assert!(!missing.holds && missing.data_quality_flag);
    }

    #[test]
    fn quorum_boundary() {
        for (k, expect) in [(16, true), (15, false)] {
            let mut cond = vec![Some(false); 48];
            for c in cond.iter_mut().take(k) {
                *c = Some(true);
            }
            let flags = annotate_state(&cond, 24, StayEndPolicy::RemainingPoints);
            assert_eq!(flags[0], expect, "k={k}");
        }
        assert!(annotate_state(&[Some(true); 30], 24, StayEndPolicy::RemainingPoints).iter().all(|&f| f));
        assert!(annotate_state(&[Some(false); 30], 24, StayEndPolicy::RemainingPoints).iter().all(|&f| !f));
    }

    #[test]
    fn undefined_points_leave_the_denominator() {
        let mut cond = vec![None; 24];
        cond[0] = Some(true);
        cond[1] = Some(true);
        cond[2] = Some(false);
        assert!(annotate_state(&cond, 24, StayEndPolicy::RemainingPoints)[0]);
        assert!(!annotate_state(&[None; 5], 24, StayEndPolicy::RemainingPoints)[0]);
    }

    #[test]
    fn stay_end_policy() {
        let cond = vec![Some(true); 10];
        assert!(annotate_state(&cond, 24, StayEndPolicy::RemainingPoints)[9]);
        assert!(!annotate_state(&cond, 24, StayEndPolicy::Unflagged)[0]);
    }

    fn flags_from_hours(n: usize, runs: &[(f64, f64)]) -> Vec<bool> {
        (0..n)
            .map(|i| {
                let t = (i as Seconds * STEP) as f64 / 3600.0;
                runs.iter().any(|&(a, b)| t >= a - 1e-9 && t <= b + 1e-9)
            })
            .collect()
    }

    #[test]
    fn merge_and_delete() {
        let f = flags_from_hours(80, &[(0.0, 1.5), (2.0, 5.0)]);
        assert_eq!(build_events(&f, STEP, &cfg()), vec![FailureEvent::new(0, 5 * HOUR)]);
        let f = flags_from_hours(80, &[(1.0, 2.5)]);
        assert!(build_events(&f, STEP, &cfg()).is_empty());
        let f = flags_from_hours(80, &[(0.0, 1.0), (2.5, 3.5)]);
        assert!(build_events(&f, STEP, &cfg()).is_empty());
        let f = flags_from_hours(80, &[(0.0, 2.0)]);
        assert!(build_events(&f, STEP, &cfg()).is_empty());
        let f = flags_from_hours(80, &[(0.0, 2.0 + 5.0 / 60.0)]);
        assert_eq!(build_events(&f, STEP, &cfg()).len(), 1);
    }

    #[test]
    fn label_cases() {
        let ev = [FailureEvent::new(10 * HOUR, 13 * HOUR)];
        let labels = make_labels(&ev, 200, STEP, 8 * HOUR);
        let at = |h: i64| labels[(h * HOUR / STEP) as usize];
        assert_eq!(at(4), Label::Positive);
        assert_eq!(at(2), Label::Positive);
        assert_eq!(at(1), Label::Negative);
        assert_eq!(at(11), Label::Undefined);
        assert_eq!(at(10), Label::Undefined);
        assert_eq!(at(14), Label::Negative);
        assert!(make_labels(&[], 50, STEP, 8 * HOUR).iter().all(|&l| l == Label::Negative));
        let two = [FailureEvent::new(2 * HOUR, 5 * HOUR), FailureEvent::new(9 * HOUR, 12 * HOUR)];
        let labels = make_labels(&two, 200, STEP, 8 * HOUR);
        assert_eq!(labels[(6 * HOUR / STEP) as usize], Label::Positive);
    }

    /// Merging any pair in any order reaches the same fixed point.
    fn oracle_events(flags: &[bool], c: &LabelerConfig) -> Vec<FailureEvent> {
        let mut ev: Vec<(i64, i64)> = Vec::new();
        for (i, &f) in flags.iter().enumerate() {
            if f {
                ev.push((i as i64 * STEP, i as i64 * STEP));
            }
        }
        loop {
            let mut changed = false;
            'outer: for a in 0..ev.len() {
                for b in 0..ev.len() {
                    if a != b && ev[b].0 >= ev[a].1 && ev[b].0 - ev[a].1 <= c.merge_gap_s {
                        ev[a].1 = ev[a].1.max(ev[b].1);
                        ev.remove(b);
                        changed = true;
                        break 'outer;
                    }
                }
            }
            if !changed {
                break;
            }
        }
        ev.sort();
        ev.into_iter().filter(|e| e.1 - e.0 > c.min_duration_s).map(|(a, b)| FailureEvent::new(a, b)).collect()
    }

    #[test]
    fn events_match_pairwise_merge_oracle() {
        let mut rng = stream_rng(1, "labeler", 0);
        for _ in 0..300 {
            let n = rng.random_range(1..200);
            let p: f64 = rng.random_range(0.05..0.95);
            let flags: Vec<bool> = (0..n).map(|_| rng.random_bool(p)).collect();
            assert_eq!(build_events(&flags, STEP, &cfg()), oracle_events(&flags, &cfg()));
        }
    }

    #[test]
    fn consistency_and_csv_round_trip() {
        let ev = vec![FailureEvent::new(3 * HOUR, 6 * HOUR)];
        let labels = make_labels(&ev, 100, STEP, 8 * HOUR);
        for (i, l) in labels.iter().enumerate() {
            let t = i as Seconds * STEP;
            match l {
                Label::Positive => assert!(ev.iter().any(|e| e.start_s > t && e.start_s <= t + 8 * HOUR)),
                Label::Undefined => assert!(ev.iter().any(|e| e.contains(t))),
                Label::Negative => {}
            }
        }
        let csv = labels_to_csv(&labels, STEP);
        let back = labels_from_csv(&csv, Path::new("x")).unwrap();
        assert_eq!(back.iter().map(|p| p.1).collect::<Vec<_>>(), labels);
        let json = events_to_json(&ev).unwrap();
        assert!(json.contains("\"type\": \"resp_failure_mod_sev\""));
        assert_eq!(events_from_json(&json).unwrap(), ev);
    }

    /// Adding a satisfying point should not remove an earlier event start.
    /// Violations are counted, not asserted.
    #[test]
    fn monotonicity_survey() {
        let mut rng = stream_rng(2, "labeler-mono", 0);
        let mut violations = 0;
        for _ in 0..300 {
            let n = rng.random_range(24..200);
            let mut cond: Vec<Option<bool>> = (0..n).map(|_| Some(rng.random_bool(0.55))).collect();
            let before = build_events(&annotate_state(&cond, 24, StayEndPolicy::RemainingPoints), STEP, &cfg());
            let k = rng.random_range(0..n);
            cond[k] = Some(true);
            let after = build_events(&annotate_state(&cond, 24, StayEndPolicy::RemainingPoints), STEP, &cfg());
            if before.iter().any(|b| !after.iter().any(|a| a.start_s <= b.start_s)) {
                violations += 1;
            }
        }
        println!("labeler monotonicity violations: {violations}/300");
    }
}
