//! Alarm silencing and event-based evaluation of score series.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::labeler::FailureEvent;
use crate::metrics::{roc_curve, RocCurve};
use crate::rng::stream_rng;
use crate::stats::{mean, median, std_pop};
use crate::{Result, Seconds, HOUR, MINUTE};

pub const DEFAULT_SILENCE: Seconds = 30 * MINUTE;
pub const DEFAULT_HORIZON: Seconds = 8 * HOUR;
pub const RECALL_LEVELS: usize = 101;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlarmSeries {
    pub stay_id: String,
    /// Sorted; consecutive entries differ by at least `silence`.
    pub times: Vec<Seconds>,
    pub threshold: f64,
    pub silence: Seconds,
}

/// Scores of one stay on its grid. `None` marks points without a prediction
/// (undefined labels).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StayScores {
    pub stay_id: String,
    pub times: Vec<Seconds>,
    pub scores: Vec<Option<f64>>,
    pub events: Vec<FailureEvent>,
}

impl StayScores {
    /// Defined points whose label is positive under `horizon`.
    pub fn positive_points(&self, horizon: Seconds) -> usize {
        self.times
            .iter()
            .zip(&self.scores)
            .filter(|(&t, s)| s.is_some() && self.events.iter().any(|e| e.start_s > t && e.start_s <= t + horizon))
            .count()
    }

    pub fn defined_points(&self) -> usize {
        self.scores.iter().filter(|s| s.is_some()).count()
    }
}

/// Fires at a point when its score reaches `threshold` and no alarm fired
/// in the preceding `silence` seconds. `times` must be increasing.
pub fn silence(stay_id: &str, times: &[Seconds], scores: &[Option<f64>], threshold: f64, silence: Seconds) -> AlarmSeries {
    debug_assert_eq!(times.len(), scores.len());
    let mut out: Vec<Seconds> = Vec::new();
    for (&t, s) in times.iter().zip(scores) {
        let Some(s) = *s else { continue };
        if s >= threshold && out.last().is_none_or(|&last| t - last >= silence) {
            out.push(t);
        }
    }
    AlarmSeries { stay_id: stay_id.to_string(), times: out, threshold, silence }
}

/// Additive alarm and event counts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventCounts {
    pub alarms: usize,
    pub true_alarms: usize,
    pub events: usize,
    pub caught_events: usize,
}

impl std::ops::Add for EventCounts {
    type Output = EventCounts;

    fn add(self, o: EventCounts) -> EventCounts {
        EventCounts {
            alarms: self.alarms + o.alarms,
            true_alarms: self.true_alarms + o.true_alarms,
            events: self.events + o.events,
            caught_events: self.caught_events + o.caught_events,
        }
    }
}

impl EventCounts {

    /// Missing when there are no alarms.
    pub fn precision(&self) -> Option<f64> {
        (self.alarms > 0).then(|| self.true_alarms as f64 / self.alarms as f64)
    }

    /// Missing when there are no events.
    pub fn recall(&self) -> Option<f64> {
        (self.events > 0).then(|| self.caught_events as f64 / self.events as f64)
    }
}

fn starts_within(a: Seconds, start: Seconds, horizon: Seconds) -> bool {
    start > a && start <= a + horizon
}

/// Alarm `a` is true iff an event starts in `(a, a + horizon]`; an event is
/// caught iff a true alarm lies in `[start - horizon, start)`.
pub fn event_pr(alarms: &[Seconds], events: &[FailureEvent], horizon: Seconds) -> EventCounts {
    let mut starts: Vec<Seconds> = events.iter().map(|e| e.start_s).collect();
    starts.sort_unstable();
    let true_alarms = alarms
        .iter()
        .filter(|&&a| {
            let k = starts.partition_point(|&s| s <= a);
            k < starts.len() && starts[k] <= a + horizon
        })
        .count();
    let mut sorted = alarms.to_vec();
    sorted.sort_unstable();
    let caught = starts
        .iter()
        .filter(|&&s| {
            let k = sorted.partition_point(|&a| a < s - horizon);
            k < sorted.len() && sorted[k] < s
        })
        .count();
    EventCounts { alarms: alarms.len(), true_alarms, events: events.len(), caught_events: caught }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdPoint {
    pub threshold: f64,
    pub counts: EventCounts,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AlarmConfig {
    pub silence: Seconds,
    pub horizon: Seconds,
    /// Quantile levels in the threshold sweep when a split has more distinct
    /// scores than this.
    pub max_thresholds: usize,
}

impl Default for AlarmConfig {
    fn default() -> Self {
        AlarmConfig { silence: DEFAULT_SILENCE, horizon: DEFAULT_HORIZON, max_thresholds: 200 }
    }
}

/// Distinct scores, or a quantile grid over them when there are more than `max`.
pub fn threshold_grid(stays: &[StayScores], max: usize) -> Vec<f64> {
    let mut all: Vec<f64> = stays.iter().flat_map(|s| s.scores.iter().flatten().copied()).collect();
    all.sort_by(f64::total_cmp);
    all.dedup();
    if all.len() <= max || max < 2 {
        return all;
    }
    let mut grid: Vec<f64> = (0..max).map(|k| all[k * (all.len() - 1) / (max - 1)]).collect();
    grid.dedup();
    grid
}

/// Event counts over all stays of one split at each threshold.
pub fn sweep(stays: &[StayScores], thresholds: &[f64], config: &AlarmConfig) -> Vec<ThresholdPoint> {
    thresholds
        .par_iter()
        .map(|&th| {
            let counts = stays
                .iter()
                .map(|s| {
                    let a = silence(&s.stay_id, &s.times, &s.scores, th, config.silence);
                    event_pr(&a.times, &s.events, config.horizon)
                })
                .fold(EventCounts::default(), std::ops::Add::add);
            ThresholdPoint { threshold: th, counts, precision: counts.precision(), recall: counts.recall() }
        })
        .collect()
}

/// Linear interpolation of precision at `RECALL_LEVELS` evenly spaced recall
/// levels. Constant below the lowest achieved recall, missing above the highest.
pub fn interpolate_precision(points: &[ThresholdPoint]) -> Vec<Option<f64>> {
    let mut pr: Vec<(f64, f64)> = points.iter().filter_map(|p| Some((p.recall?, p.precision?))).collect();
    pr.sort_by(|a, b| a.0.total_cmp(&b.0).then(b.1.total_cmp(&a.1)));
    // keep the best precision per recall value
    pr.dedup_by(|b, a| a.0 == b.0);
    (0..RECALL_LEVELS)
        .map(|k| {
            let r = k as f64 / (RECALL_LEVELS - 1) as f64;
            let (first, last) = (pr.first()?, pr.last()?);
            if r > last.0 + 1e-12 {
                return None;
            }
            if r <= first.0 {
                return Some(first.1);
            }
            let j = pr.partition_point(|p| p.0 < r);
            let (lo, hi) = (pr[j - 1], pr[j.min(pr.len() - 1)]);
            if hi.0 == lo.0 {
                return Some(hi.1);
            }
            Some(lo.1 + (hi.1 - lo.1) * (r - lo.0) / (hi.0 - lo.0))
        })
        .collect()
}

/// Trapezoidal area under an interpolated precision curve; missing levels
/// count as zero precision.
pub fn curve_area(levels: &[Option<f64>]) -> f64 {
    let step = 1.0 / (levels.len().max(2) - 1) as f64;
    levels.windows(2).map(|w| 0.5 * step * (w[0].unwrap_or(0.0) + w[1].unwrap_or(0.0))).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitCurve {
    pub points: Vec<ThresholdPoint>,
    pub interpolated: Vec<Option<f64>>,
    pub auprc: f64,
    pub prevalence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventPrReport {
    pub model: String,
    pub recall_levels: Vec<f64>,
    pub splits: Vec<SplitCurve>,
    /// Mean and population std over the splits reaching each recall level.
    pub precision_mean: Vec<Option<f64>>,
    pub precision_std: Vec<Option<f64>>,
    pub auprc_mean: f64,
    pub auprc_std: f64,
    /// Fraction of defined points followed by an event onset within the horizon.
    pub prevalence: f64,
}

impl EventPrReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// One row per recall level.
    pub fn to_csv(&self) -> String {
        let fmt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
        let mut out = String::from("model,recall,precision_mean,precision_std,prevalence\n");
        for (k, r) in self.recall_levels.iter().enumerate() {
            out.push_str(&format!(
                "{},{r:.2},{},{},{:.6}\n",
                self.model,
                fmt(self.precision_mean[k]),
                fmt(self.precision_std[k]),
                self.prevalence
            ));
        }
        out
    }

    /// Per-split threshold sweep rows.
    pub fn points_csv(&self) -> String {
        let fmt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
        let mut out = String::from("model,split,threshold,alarms,true_alarms,events,caught_events,precision,recall\n");
        for (i, s) in self.splits.iter().enumerate() {
            for p in &s.points {
                let c = p.counts;
                out.push_str(&format!(
                    "{},{i},{},{},{},{},{},{},{}\n",
                    self.model,
                    p.threshold,
                    c.alarms,
                    c.true_alarms,
                    c.events,
                    c.caught_events,
                    fmt(p.precision),
                    fmt(p.recall)
                ));
            }
        }
        out
    }
}

/// Fraction of defined points followed by an event onset within `horizon`.
pub fn point_prevalence(stays: &[StayScores], horizon: Seconds) -> f64 {
    let (pos, def) = stays.iter().fold((0, 0), |(p, d), s| (p + s.positive_points(horizon), d + s.defined_points()));
    if def > 0 {
        pos as f64 / def as f64
    } else {
        0.0
    }
}

pub fn split_curve(points: Vec<ThresholdPoint>, prevalence: f64) -> SplitCurve {
    let interpolated = interpolate_precision(&points);
    SplitCurve { auprc: curve_area(&interpolated), points, interpolated, prevalence }
}

/// Mean and spread of per-split curves at matched recall levels.
pub fn aggregate(model: &str, curves: Vec<SplitCurve>) -> EventPrReport {
    let recall_levels: Vec<f64> = (0..RECALL_LEVELS).map(|k| k as f64 / (RECALL_LEVELS - 1) as f64).collect();
    let (mut precision_mean, mut precision_std) = (Vec::new(), Vec::new());
    for k in 0..RECALL_LEVELS {
        let vals: Vec<f64> = curves.iter().filter_map(|c| c.interpolated[k]).collect();
        precision_mean.push(mean(&vals));
        precision_std.push(std_pop(&vals));
    }
    let auprcs: Vec<f64> = curves.iter().map(|c| c.auprc).collect();
    let prevs: Vec<f64> = curves.iter().map(|c| c.prevalence).collect();
    EventPrReport {
        model: model.to_string(),
        recall_levels,
        precision_mean,
        precision_std,
        auprc_mean: mean(&auprcs).unwrap_or(0.0),
        auprc_std: std_pop(&auprcs).unwrap_or(0.0),
        prevalence: mean(&prevs).unwrap_or(0.0),
        splits: curves,
    }
}

/// Sweeps each split at its own threshold grid and aggregates the
/// interpolated curves. An empty split list gives an empty report.
pub fn pr_curve(model: &str, splits: &[Vec<StayScores>], config: &AlarmConfig) -> EventPrReport {
    let curves = splits
        .iter()
        .map(|stays| {
            let points = sweep(stays, &threshold_grid(stays, config.max_thresholds), config);
            split_curve(points, point_prevalence(stays, config.horizon))
        })
        .collect();
    aggregate(model, curves)
}

/// Same stays with every defined score replaced by a uniform draw.
pub fn random_classifier(stays: &[StayScores], seed: u64) -> Vec<StayScores> {
    stays
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let mut rng = stream_rng(seed, "random-classifier", i as u64);
            StayScores {
                scores: s.scores.iter().map(|v| v.map(|_| rng.random::<f64>())).collect(),
                ..s.clone()
            }
        })
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TimingPartial {
    /// Onset minus earliest alarm in `[onset - horizon, onset)`, per caught event.
    pub leads: Vec<Seconds>,
    /// Alarms in `[onset - horizon, onset)`, per caught event.
    pub alarms_in_window: Vec<usize>,
    pub events: usize,
}

pub fn timing_partial(alarms: &[Seconds], events: &[FailureEvent], horizon: Seconds) -> TimingPartial {
    let mut out = TimingPartial { events: events.len(), ..Default::default() };
    for e in events {
        let inside: Vec<Seconds> = alarms.iter().copied().filter(|&a| starts_within(a, e.start_s, horizon)).collect();
        if let Some(&first) = inside.iter().min() {
            out.leads.push(e.start_s - first);
            out.alarms_in_window.push(inside.len());
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlarmTiming {
    pub leads_s: Vec<Seconds>,
    pub median_lead_s: Option<f64>,
    pub mean_alarms_per_caught_event: Option<f64>,
    pub caught_events: usize,
    pub events: usize,
}

/// Lead-time and alarm-burden statistics over caught events.
pub fn alarm_timing(per_stay: &[(Vec<Seconds>, Vec<FailureEvent>)], horizon: Seconds) -> AlarmTiming {
    let mut leads = Vec::new();
    let mut burden = Vec::new();
    let mut events = 0;
    for (alarms, ev) in per_stay {
        let p = timing_partial(alarms, ev, horizon);
        leads.extend(p.leads);
        burden.extend(p.alarms_in_window.iter().map(|&n| n as f64));
        events += p.events;
    }
    let as_f: Vec<f64> = leads.iter().map(|&l| l as f64).collect();
    AlarmTiming {
        median_lead_s: median(&as_f),
        mean_alarms_per_caught_event: mean(&burden),
        caught_events: leads.len(),
        leads_s: leads,
        events,
    }
}

/// Alarm series of every stay at one threshold.
pub fn alarms_at(stays: &[StayScores], threshold: f64, silence_s: Seconds) -> Vec<AlarmSeries> {
    stays.par_iter().map(|s| silence(&s.stay_id, &s.times, &s.scores, threshold, silence_s)).collect()
}

/// Plain ROC over defined time points, without silencing.
pub fn timepoint_roc(scores: &[f64], labels: &[bool]) -> Result<RocCurve> {
    roc_curve(scores, labels)
}
