//! Stay preparation and the split-wise train/evaluate experiment.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::alarm::{
    aggregate, alarm_timing, alarms_at, point_prevalence, random_classifier, split_curve, sweep, threshold_grid,
    timepoint_roc, AlarmConfig, AlarmTiming, EventPrReport, StayScores,
};
use crate::cohort::{make_splits, CohortSplit, GriddedStay};
use crate::features::{build_matrix, FeatureConfig, FeatureMatrix};
use crate::gbdt::{baseline_s, train_baseline_c, train_gbdt, BaselineCParams, BoostedEnsemble, GbdtParams, SingleTreeBaseline};
use crate::labeler::{label_stay, FailureEvent, LabelerConfig, StayLabels};
use crate::pf::{pf_track, Fio2Table, Pao2Estimator, PfTrack, DEFAULT_FRESHNESS};
use crate::variables::{FIO2_ESTIMATE, SPO2};
use crate::{EwsError, Result, Seconds};

/// A stay with its P/F track, labels, and the derived FiO2 channel attached.
#[derive(Debug, Clone)]
pub struct PreparedStay {
    pub stay: GriddedStay,
    pub track: PfTrack,
    pub labels: StayLabels,
}

pub fn prepare_stay(stay: &GriddedStay, estimator: &Pao2Estimator, table: &Fio2Table, labeler: &LabelerConfig) -> Result<PreparedStay> {
    let track = pf_track(stay, estimator, DEFAULT_FRESHNESS, table);
    let labels = label_stay(stay, &track, labeler)?;
    let mut stay = stay.clone();
    stay.set_derived(FIO2_ESTIMATE, track.fio2_values());
    Ok(PreparedStay { stay, track, labels })
}

pub fn prepare_cohort(
    stays: &[GriddedStay],
    estimator: &Pao2Estimator,
    table: &Fio2Table,
    labeler: &LabelerConfig,
) -> Result<Vec<PreparedStay>> {
    stays.par_iter().map(|s| prepare_stay(s, estimator, table, labeler)).collect()
}

pub fn cohort_matrix(stays: &[&PreparedStay], config: &FeatureConfig) -> Result<FeatureMatrix> {
    let pairs: Vec<(&GriddedStay, &[crate::labeler::Label])> = stays.iter().map(|p| (&p.stay, &p.labels.labels[..])).collect();
    build_matrix(&pairs, config)
}

/// What evaluation needs about a stay besides its feature rows.
#[derive(Debug, Clone, PartialEq)]
pub struct StayTimeline {
    pub stay_id: String,
    pub grid_step: Seconds,
    pub n_grid: usize,
    pub events: Vec<FailureEvent>,
}

impl PreparedStay {
    pub fn timeline(&self) -> StayTimeline {
        StayTimeline {
            stay_id: self.stay.stay_id.clone(),
            grid_step: self.stay.grid_step,
            n_grid: self.stay.n_grid(),
            events: self.labels.events.clone(),
        }
    }
}

/// Places row scores back on each stay's grid; points without a row stay
/// undefined. Rows of stays outside `timelines` are ignored.
pub fn place_scores(timelines: &[&StayTimeline], matrix: &FeatureMatrix, scores: &[f64]) -> Vec<StayScores> {
    let mut out: Vec<StayScores> = timelines
        .iter()
        .map(|t| StayScores {
            stay_id: t.stay_id.clone(),
            times: (0..t.n_grid).map(|i| i as Seconds * t.grid_step).collect(),
            scores: vec![None; t.n_grid],
            events: t.events.clone(),
        })
        .collect();
    let index: BTreeMap<&str, usize> = timelines.iter().enumerate().map(|(i, t)| (t.stay_id.as_str(), i)).collect();
    for (r, &score) in scores.iter().enumerate() {
        let Some(&k) = index.get(matrix.stay_of(r)) else { continue };
        let i = (matrix.times[r] / timelines[k].grid_step) as usize;
        if let Some(slot) = out[k].scores.get_mut(i) {
            *slot = Some(score);
        }
    }
    out
}

pub fn score_series(stays: &[&PreparedStay], matrix: &FeatureMatrix, scores: &[f64]) -> Vec<StayScores> {
    let timelines: Vec<StayTimeline> = stays.iter().map(|p| p.timeline()).collect();
    place_scores(&timelines.iter().collect::<Vec<_>>(), matrix, scores)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub n_splits: usize,
    pub train_fraction: f64,
    pub validation_fraction: f64,
    pub seed: u64,
    pub gbdt: GbdtParams,
    pub baseline_c: BaselineCParams,
    pub alarm: AlarmConfig,
    /// Integer SpO2 cutoffs swept for the threshold baseline.
    pub spo2_thresholds: (i32, i32),
    /// Recall at which alarm timing is reported.
    pub operating_recall: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            n_splits: 5,
            train_fraction: 0.6,
            validation_fraction: 0.2,
            seed: 1,
            gbdt: GbdtParams::default(),
            baseline_c: BaselineCParams::default(),
            alarm: AlarmConfig::default(),
            spo2_thresholds: (50, 101),
            operating_recall: 0.8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSummary {
    pub split_id: usize,
    pub n_train_rows: usize,
    pub n_valid_rows: usize,
    pub n_test_rows: usize,
    pub best_iteration: usize,
    pub timepoint_auroc: Option<f64>,
    pub baseline_c_leaves: usize,
    pub operating_threshold: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub ews: EventPrReport,
    pub baseline_s: EventPrReport,
    pub baseline_c: EventPrReport,
    pub random: EventPrReport,
    pub timing: AlarmTiming,
    pub splits: Vec<SplitSummary>,
}

impl ExperimentReport {
    pub fn reports(&self) -> [&EventPrReport; 4] {
        [&self.ews, &self.baseline_c, &self.baseline_s, &self.random]
    }
}

/// Models trained on one split, with the split they belong to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitModels {
    pub split: CohortSplit,
    pub n_train_rows: usize,
    pub n_valid_rows: usize,
    pub ews: BoostedEnsemble,
    pub baseline_c: SingleTreeBaseline,
}

/// Highest swept threshold reaching `recall`.
fn operating_threshold(points: &[crate::alarm::ThresholdPoint], recall: f64) -> Option<f64> {
    points.iter().filter(|p| p.recall.is_some_and(|r| r >= recall)).map(|p| p.threshold).max_by(f64::total_cmp)
}

/// Draws the splits over `stay_ids` and trains the score model and
/// baseline C on each, using the rows of `matrix`.
pub fn train_splits(matrix: &FeatureMatrix, stay_ids: &[String], config: &ExperimentConfig) -> Result<Vec<SplitModels>> {
    if config.n_splits == 0 {
        return Err(EwsError::Config("n_splits must be at least 1".into()));
    }
    let splits = make_splits(stay_ids, config.n_splits, config.train_fraction, config.validation_fraction, config.seed)?;
    let mut models = Vec::with_capacity(splits.len());
    for split in splits {
        let train = matrix.select_stays(&split.train);
        let valid = matrix.select_stays(&split.validation);
        log::info!("split {}: training on {} rows, validating on {}", split.split_id, train.n_rows(), valid.n_rows());
        let ews = train_gbdt(&train, &valid, &GbdtParams { seed: config.gbdt.seed + split.split_id as u64, ..config.gbdt.clone() })?;
        let baseline_c = train_baseline_c(&train, &config.baseline_c)?;
        models.push(SplitModels { split, n_train_rows: train.n_rows(), n_valid_rows: valid.n_rows(), ews, baseline_c });
    }
    Ok(models)
}

/// Evaluates each split's models, baseline S and the random classifier on
/// the split's test stays through the same silencing path.
pub fn evaluate_splits(
    matrix: &FeatureMatrix,
    timelines: &[StayTimeline],
    config: &ExperimentConfig,
    models: &[SplitModels],
) -> Result<ExperimentReport> {
    if models.is_empty() {
        return Err(EwsError::Config("no split models to evaluate".into()));
    }
    let spo2_col = format!("{SPO2}__current");
    let alarm = &config.alarm;

    let mut curves: [Vec<_>; 4] = Default::default();
    let mut summaries = Vec::new();
    let mut timing_input = Vec::new();
    for m in models {
        let split = &m.split;
        let test_t: Vec<&StayTimeline> = timelines.iter().filter(|t| split.test.contains(&t.stay_id)).collect();
        if test_t.len() != split.test.len() {
            return Err(EwsError::SchemaMismatch(format!("split {} names test stays missing from the cohort", split.split_id)));
        }
        let test = matrix.select_stays(&split.test);

        let ews_scores = m.ews.predict_scores(&test)?;
        let ews = place_scores(&test_t, &test, &ews_scores);
        let prevalence = point_prevalence(&ews, alarm.horizon);

        let ews_points = sweep(&ews, &threshold_grid(&ews, alarm.max_thresholds), alarm);
        let op = operating_threshold(&ews_points, config.operating_recall);
        if let Some(th) = op {
            for a in alarms_at(&ews, th, alarm.silence) {
                let events = ews.iter().find(|s| s.stay_id == a.stay_id).map(|s| s.events.clone()).unwrap_or_default();
                timing_input.push((a.times, events));
            }
        }
        curves[0].push(split_curve(ews_points, prevalence));

        let c_scores = m.baseline_c.predict_scores(&test)?;
        let c_series = place_scores(&test_t, &test, &c_scores);
        curves[1].push(split_curve(sweep(&c_series, &threshold_grid(&c_series, alarm.max_thresholds), alarm), prevalence));

        let j = test.column_index(&spo2_col).ok_or_else(|| EwsError::SchemaMismatch(format!("missing column {spo2_col}")))?;
        let spo2 = test.column(j);
        let (lo, hi) = config.spo2_thresholds;
        let s_points = (lo..=hi)
            .map(|th| {
                let scores: Vec<f64> = spo2.iter().map(|&v| baseline_s(v, f64::from(th))).collect();
                let series = place_scores(&test_t, &test, &scores);
                let mut p = sweep(&series, &[1.0], alarm).remove(0);
                p.threshold = f64::from(th);
                p
            })
            .collect();
        curves[2].push(split_curve(s_points, prevalence));

        let random = random_classifier(&ews, config.seed.wrapping_add(split.split_id as u64));
        curves[3].push(split_curve(sweep(&random, &threshold_grid(&random, alarm.max_thresholds), alarm), prevalence));

        summaries.push(SplitSummary {
            split_id: split.split_id,
            n_train_rows: m.n_train_rows,
            n_valid_rows: m.n_valid_rows,
            n_test_rows: test.n_rows(),
            best_iteration: m.ews.best_iteration,
            timepoint_auroc: timepoint_roc(&ews_scores, &test.labels).ok().map(|r| r.auroc),
            baseline_c_leaves: m.baseline_c.tree.n_leaves(),
            operating_threshold: op,
        });
    }
    let [ews, c, s, r] = curves;
    Ok(ExperimentReport {
        ews: aggregate("ews", ews),
        baseline_c: aggregate("baseline_c", c),
        baseline_s: aggregate("baseline_s", s),
        random: aggregate("random", r),
        timing: alarm_timing(&timing_input, alarm.horizon),
        splits: summaries,
    })
}

/// Trains and evaluates on every split.
pub fn run_experiment(
    stays: &[PreparedStay],
    features: &FeatureConfig,
    config: &ExperimentConfig,
) -> Result<(ExperimentReport, Vec<SplitModels>)> {
    let matrix = cohort_matrix(&stays.iter().collect::<Vec<_>>(), features)?;
    let ids: Vec<String> = stays.iter().map(|p| p.stay.stay_id.clone()).collect();
    let timelines: Vec<StayTimeline> = stays.iter().map(PreparedStay::timeline).collect();
    let models = train_splits(&matrix, &ids, config)?;
    let report = evaluate_splits(&matrix, &timelines, config, &models)?;
    Ok((report, models))
}

/// Scores every stay with the model of the first split that holds it out as
/// test; stays never in a test set use the first split's model.
pub fn out_of_sample_scores(matrix: &FeatureMatrix, timelines: &[StayTimeline], models: &[SplitModels]) -> Result<Vec<StayScores>> {
    let first = models.first().ok_or_else(|| EwsError::Config("no split models".into()))?;
    timelines
        .par_iter()
        .map(|t| {
            let m = models.iter().find(|m| m.split.test.contains(&t.stay_id)).unwrap_or(first);
            let rows = matrix.select_stays(&BTreeSet::from([t.stay_id.clone()]));
            let scores = m.ews.predict_scores(&rows)?;
            Ok(place_scores(&[t], &rows, &scores).remove(0))
        })
        .collect()
}
