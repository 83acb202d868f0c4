//! Cross-validated hyperparameter grid search and greedy backward input
//! selection, scored by PaO2 MAE on hypoxaemic samples.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::abga::{AbgaSample, InputMode};
use super::mlp::{evaluation_examples, train_mlp, training_examples, HyperparamPoint, MlpModel, TrainConfig};
use crate::rng::stream_rng;
use crate::{EwsError, Result};

/// Cross product of candidate values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub batch_sizes: Vec<usize>,
    pub hidden_layers: Vec<Vec<usize>>,
    pub gammas: Vec<Option<f64>>,
    pub learning_rates: Vec<f64>,
    pub dropout_rates: Vec<f64>,
}

impl Default for SearchSpace {
    /// Ten log-spaced learning rates in [1e-4, 1e-1) and ten dropout rates in [0, 0.5).
    fn default() -> Self {
        let hidden: &[&[usize]] = &[
            &[8, 8],
            &[16, 16],
            &[32, 32],
            &[64, 64],
            &[128, 128],
            &[256, 256],
            &[64, 128],
            &[128, 64],
            &[64, 64, 64],
            &[64, 128, 64],
            &[128, 128, 128],
            &[128, 256, 128],
            &[256, 512, 256],
        ];
        SearchSpace {
            batch_sizes: vec![30, 50, 100, 300, 500],
            hidden_layers: hidden.iter().map(|h| h.to_vec()).collect(),
            gammas: vec![None, Some(0.1), Some(0.2), Some(0.33), Some(0.5), Some(1.0)],
            learning_rates: (0..10).map(|k| 1e-4 * 10f64.powf(0.3 * k as f64)).collect(),
            dropout_rates: (0..10).map(|k| 0.05 * k as f64).collect(),
        }
    }
}

impl SearchSpace {
    pub fn points(&self) -> Vec<HyperparamPoint> {
        let mut out = Vec::new();
        for &batch_size in &self.batch_sizes {
            for hidden in &self.hidden_layers {
                for &gamma in &self.gammas {
                    for &learning_rate in &self.learning_rates {
                        for &dropout_rate in &self.dropout_rates {
                            out.push(HyperparamPoint { batch_size, hidden_layers: hidden.clone(), gamma, learning_rate, dropout_rate });
                        }
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchConfig {
    pub folds: usize,
    /// Only samples with saturation strictly below this score a fold.
    pub region_max_sao2: f64,
    pub train: TrainConfig,
    pub seed: u64,
    /// Minimum error decrease for a backward-selection removal.
    pub tolerance: f64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig { folds: 3, region_max_sao2: 0.96, train: TrainConfig::default(), seed: 1, tolerance: 0.0 }
    }
}

/// Fold index per sample; samples of one stay share a fold.
pub fn assign_folds(samples: &[AbgaSample], folds: usize, seed: u64) -> Vec<usize> {
    let mut groups: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, s) in samples.iter().enumerate() {
        let key = s.stay_id.clone().unwrap_or_else(|| format!("#{i}"));
        groups.entry(key).or_default().push(i);
    }
    let mut keys: Vec<&String> = groups.keys().collect();
    keys.shuffle(&mut stream_rng(seed, "folds", 0));
    let mut out = vec![0; samples.len()];
    for (g, key) in keys.into_iter().enumerate() {
        for &i in &groups[key] {
            out[i] = g % folds;
        }
    }
    out
}

/// MAE (mmHg) over samples whose SaO2 is below `region_max`, with SaO2 as the
/// saturation input. `None` when no sample qualifies.
pub fn region_mae(model: &MlpModel, samples: &[AbgaSample], region_max: f64) -> Option<f64> {
    let region: Vec<AbgaSample> = samples.iter().filter(|s| s.current.sao2.is_some_and(|v| v < region_max)).cloned().collect();
    model.mae(&evaluation_examples(&region, &model.input_names, InputMode::Training))
}

/// Per-fold region MAE of `hp` with inputs `input_names`.
pub fn cross_validate(
    samples: &[AbgaSample],
    fold_of: &[usize],
    input_names: &[String],
    hp: &HyperparamPoint,
    config: &SearchConfig,
) -> Result<Vec<f64>> {
    (0..config.folds)
        .into_par_iter()
        .map(|k| {
            let (held, rest): (Vec<_>, Vec<_>) = samples.iter().zip(fold_of).partition(|(_, &f)| f == k);
            let held: Vec<AbgaSample> = held.into_iter().map(|(s, _)| s.clone()).collect();
            let rest: Vec<AbgaSample> = rest.into_iter().map(|(s, _)| s.clone()).collect();
            let train = training_examples(&rest, input_names, hp.gamma);
            let model = train_mlp(&train, &[], input_names, hp, &config.train, config.seed.wrapping_add(k as u64))?;
            region_mae(&model, &held, config.region_max_sao2)
                .ok_or_else(|| EwsError::Empty(format!("fold {k} has no samples below SaO2 {}", config.region_max_sao2)))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredPoint {
    pub point: HyperparamPoint,
    pub fold_mae: Vec<f64>,
    pub mean_mae: f64,
    pub n_weights: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub best: HyperparamPoint,
    pub scores: Vec<ScoredPoint>,
}

fn n_weights(n_inputs: usize, hidden: &[usize]) -> usize {
    let mut sizes = vec![n_inputs];
    sizes.extend_from_slice(hidden);
    sizes.push(1);
    sizes.windows(2).map(|w| (w[0] + 1) * w[1]).sum()
}

fn lexicographic(a: &HyperparamPoint, b: &HyperparamPoint) -> Ordering {
    a.batch_size
        .cmp(&b.batch_size)
        .then_with(|| a.hidden_layers.cmp(&b.hidden_layers))
        .then_with(|| a.gamma.unwrap_or(-1.0).total_cmp(&b.gamma.unwrap_or(-1.0)))
        .then_with(|| a.learning_rate.total_cmp(&b.learning_rate))
        .then_with(|| a.dropout_rate.total_cmp(&b.dropout_rate))
}

/// Mean cross-validated region MAE per point; the minimum wins, ties going to
/// fewer weights and then the lexicographically smaller point.
pub fn grid_search(samples: &[AbgaSample], points: &[HyperparamPoint], input_names: &[String], config: &SearchConfig) -> Result<SearchResult> {
    if points.is_empty() {
        return Err(EwsError::Empty("search space has no points".into()));
    }
    if config.folds < 2 {
        return Err(EwsError::Config("grid search needs at least 2 folds".into()));
    }
    let fold_of = assign_folds(samples, config.folds, config.seed);
    let scores = points
        .par_iter()
        .map(|p| {
            let fold_mae = cross_validate(samples, &fold_of, input_names, p, config)?;
            let mean_mae = fold_mae.iter().sum::<f64>() / fold_mae.len() as f64;
            Ok(ScoredPoint { point: p.clone(), fold_mae, mean_mae, n_weights: n_weights(input_names.len(), &p.hidden_layers) })
        })
        .collect::<Result<Vec<_>>>()?;
    let best = scores
        .iter()
        .min_by(|a, b| {
            a.mean_mae
                .total_cmp(&b.mean_mae)
                .then(a.n_weights.cmp(&b.n_weights))
                .then_with(|| lexicographic(&a.point, &b.point))
        })
        .expect("non-empty")
        .point
        .clone();
    Ok(SearchResult { best, scores })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemovalStep {
    pub removed: String,
    pub mae_after: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    pub retained: Vec<String>,
    pub initial_mae: f64,
    pub trace: Vec<RemovalStep>,
}

/// Greedy backward elimination. Each round drops the input whose removal gives
/// the lowest cross-validated region MAE, as long as that beats the current
/// MAE by more than `config.tolerance`. Only samples carrying every initial
/// input take part, so all rounds compare on the same data.
pub fn backward_select(samples: &[AbgaSample], initial: &[String], hp: &HyperparamPoint, config: &SearchConfig) -> Result<SelectionResult> {
    if config.folds < 2 {
        return Err(EwsError::Config("backward selection needs at least 2 folds".into()));
    }
    let complete: Vec<AbgaSample> = samples
        .iter()
        .filter(|s| s.inputs(initial, InputMode::Training).is_some() && s.current.sao2.is_some() && s.target().is_some())
        .cloned()
        .collect();
    if complete.is_empty() {
        return Err(EwsError::Empty("no sample carries every initial input".into()));
    }
    let fold_of = assign_folds(&complete, config.folds, config.seed);
    let score = |inputs: &[String]| -> Result<f64> {
        let f = cross_validate(&complete, &fold_of, inputs, hp, config)?;
        Ok(f.iter().sum::<f64>() / f.len() as f64)
    };
    let mut current = initial.to_vec();
    let initial_mae = score(&current)?;
    let mut current_mae = initial_mae;
    let mut trace = Vec::new();
    while current.len() > 1 {
        let candidates = (0..current.len())
            .into_par_iter()
            .map(|i| {
                let mut reduced = current.clone();
                reduced.remove(i);
                score(&reduced).map(|m| (i, m))
            })
            .collect::<Result<Vec<_>>>()?;
        let (i, mae) = candidates.into_iter().min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0))).expect("non-empty");
        if mae < current_mae - config.tolerance {
            let removed = current.remove(i);
            log::info!("backward selection removed {removed}: region MAE {current_mae:.3} -> {mae:.3}");
            trace.push(RemovalStep { removed, mae_after: mae });
            current_mae = mae;
        } else {
            break;
        }
    }
    Ok(SelectionResult { retained: current, initial_mae, trace })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oxy::abga::{synthetic_abga, AbgaSynthConfig};
    use rand::Rng;

    fn names(n: &[&str]) -> Vec<String> {
        n.iter().map(|s| s.to_string()).collect()
    }

    fn fast() -> SearchConfig {
        SearchConfig { folds: 3, train: TrainConfig { epochs: 15, ..Default::default() }, ..Default::default() }
    }

    fn hp(lr: f64) -> HyperparamPoint {
        HyperparamPoint { batch_size: 50, hidden_layers: vec![16, 16], gamma: None, learning_rate: lr, dropout_rate: 0.0 }
    }

    #[test]
    fn default_space_size() {
        let s = SearchSpace::default();
        assert_eq!(s.points().len(), 5 * 13 * 6 * 10 * 10);
        assert!((s.learning_rates[0] - 1e-4).abs() < 1e-18);
        assert!(*s.learning_rates.last().unwrap() < 0.1);
        assert!(*s.dropout_rates.last().unwrap() < 0.5);
    }

    #[test]
    fn singleton_and_empty() {
        let samples = synthetic_abga(1, 300, &AbgaSynthConfig::default());
        let r = grid_search(&samples, &[hp(1e-3)], &names(&["sao2"]), &fast()).unwrap();
        assert_eq!(r.best, hp(1e-3));
        assert!(grid_search(&samples, &[], &names(&["sao2"]), &fast()).is_err());
    }

    #[test]
    fn dominant_point_wins_and_high_saturation_targets_are_ignored() {
        let samples = synthetic_abga(2, 900, &AbgaSynthConfig::default());
        let points = [hp(1e-6), hp(1e-2)];
        let r = grid_search(&samples, &points, &names(&["sao2"]), &fast()).unwrap();
        assert!(r.scores[1].fold_mae.iter().zip(&r.scores[0].fold_mae).all(|(a, b)| a < b));
        assert_eq!(r.best, hp(1e-2));

        let mut perturbed = samples.clone();
        for s in perturbed.iter_mut().filter(|s| s.current.sao2.unwrap() >= 0.96) {
            s.current.pao2 = Some(s.current.pao2.unwrap() * 1.5);
        }
        let r2 = grid_search(&perturbed, &points, &names(&["sao2"]), &fast()).unwrap();
        assert_eq!(r2.best, r.best);
    }

    #[test]
    fn region_metric_ignores_high_saturation() {
        let samples = synthetic_abga(3, 400, &AbgaSynthConfig::default());
        let ex = training_examples(&samples, &names(&["sao2"]), None);
        let m = train_mlp(&ex, &[], &names(&["sao2"]), &hp(1e-2), &TrainConfig { epochs: 5, ..Default::default() }, 1).unwrap();
        let mut perturbed = samples.clone();
        for s in perturbed.iter_mut().filter(|s| s.current.sao2.unwrap() >= 0.96) {
            s.current.pao2 = Some(1000.0);
        }
        assert_eq!(region_mae(&m, &samples, 0.96), region_mae(&m, &perturbed, 0.96));
    }

    #[test]
    fn folds_group_stays() {
        let samples = synthetic_abga(4, 2000, &AbgaSynthConfig::default());
        let f = assign_folds(&samples, 3, 9);
        let mut seen: BTreeMap<&str, usize> = BTreeMap::new();
        for (s, &k) in samples.iter().zip(&f) {
            assert_eq!(*seen.entry(s.stay_id.as_deref().unwrap()).or_insert(k), k);
        }
        assert_eq!(f, assign_folds(&samples, 3, 9));
    }

    #[test]
    fn noise_input_removed_before_signal() {
        let mut samples = synthetic_abga(5, 600, &AbgaSynthConfig::default());
        let mut rng = stream_rng(5, "noise", 0);
        for s in &mut samples {
            s.previous.as_mut().unwrap().panel.lactate = Some(rng.random_range(0.0..10.0));
        }
        let initial = names(&["sao2", "last_lactate"]);
        let r = backward_select(&samples, &initial, &hp(1e-2), &fast()).unwrap();
        assert_eq!(r.retained, names(&["sao2"]));
        assert_eq!(r.trace[0].removed, "last_lactate");
    }

    #[test]
    fn single_informative_input_retained() {
        let samples = synthetic_abga(6, 300, &AbgaSynthConfig::default());
        let r = backward_select(&samples, &names(&["sao2"]), &hp(1e-2), &fast()).unwrap();
        assert_eq!(r.retained, names(&["sao2"]));
        assert!(r.trace.is_empty());
    }
}
