//! Arterial blood-gas samples, dataset filtering and example weighting.

use std::collections::HashMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::curve::severinghaus_sao2;
use crate::cohort::GriddedStay;
use crate::pf::{estimate_fio2, oxygenation_state, Fio2Table};
use crate::rng::stream_rng;
use crate::variables::{self, PAO2, SAO2, SPO2};
use crate::{Seconds, HOUR, MINUTE};

pub const PAO2_MIN: f64 = 40.0;
pub const PAO2_MAX: f64 = 250.0;
pub const MAX_LAST_ABGA_AGE: Seconds = 24 * HOUR;

/// Inputs of the saturation-only network.
pub const SPO2_NN_INPUTS: &[&str] = &["sao2"];
/// Inputs retained for the full network: current and previous saturation,
/// previous PaO2 and pH.
pub const FULL_NN_INPUTS: &[&str] = &["sao2", "last_sao2", "last_pao2", "last_ph"];
/// Candidate inputs before backward selection.
pub const INITIAL_FULL_NN_INPUTS: &[&str] = &[
    "sao2",
    "etco2_mean_10min",
    "temperature_mean_4h",
    "last_sao2",
    "last_ph",
    "last_fio2",
    "last_pao2",
    "last_hb",
    "last_methb",
    "last_cohb",
    "last_pco2",
    "last_be",
    "last_hco3",
    "last_lactate",
];

/// One blood-gas panel. Saturation and FiO2 are fractions.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AbgaPanel {
    pub sao2: Option<f64>,
    pub ph: Option<f64>,
    pub pao2: Option<f64>,
    pub fio2: Option<f64>,
    pub hb: Option<f64>,
    pub methb: Option<f64>,
    pub cohb: Option<f64>,
    pub pco2: Option<f64>,
    pub be: Option<f64>,
    pub hco3: Option<f64>,
    pub lactate: Option<f64>,
}

impl AbgaPanel {
    pub fn field(&self, name: &str) -> Option<f64> {
        match name {
            "sao2" => self.sao2,
            "ph" => self.ph,
            "pao2" => self.pao2,
            "fio2" => self.fio2,
            "hb" => self.hb,
            "methb" => self.methb,
            "cohb" => self.cohb,
            "pco2" => self.pco2,
            "be" => self.be,
            "hco3" => self.hco3,
            "lactate" => self.lactate,
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreviousAbga {
    pub time: Seconds,
    pub panel: AbgaPanel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbgaSample {
    pub stay_id: Option<String>,
    pub time: Seconds,
    pub current: AbgaPanel,
    pub previous: Option<PreviousAbga>,
    /// Concurrent pulse-oximetry saturation (fraction).
    pub spo2: Option<f64>,
    pub etco2_mean_10min: Option<f64>,
    pub temperature_mean_4h: Option<f64>,
}

/// Which saturation feeds the `sao2` input.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputMode {
    /// Blood-gas SaO2, used while fitting.
    Training,
    /// Continuous SpO2, used whenever a model is evaluated or applied.
    Prediction,
}

impl AbgaSample {
    pub fn target(&self) -> Option<f64> {
        self.current.pao2
    }

    pub fn last_abga_age(&self) -> Option<Seconds> {
        self.previous.as_ref().map(|p| self.time - p.time)
    }

    /// Saturation that drives bucketing and weighting in `mode`.
    pub fn saturation(&self, mode: InputMode) -> Option<f64> {
        match mode {
            InputMode::Training => self.current.sao2,
            InputMode::Prediction => self.spo2,
        }
    }

    pub fn input(&self, name: &str, mode: InputMode) -> Option<f64> {
        match name {
            "sao2" => self.saturation(mode),
            "etco2_mean_10min" => self.etco2_mean_10min,
            "temperature_mean_4h" => self.temperature_mean_4h,
            _ => {
                let field = name.strip_prefix("last_")?;
                self.previous.as_ref()?.panel.field(field)
            }
        }
    }

    pub fn inputs(&self, names: &[String], mode: InputMode) -> Option<Vec<f64>> {
        names.iter().map(|n| self.input(n, mode)).collect()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterReport {
    pub kept: usize,
    pub removed_pao2_range: usize,
    pub removed_stale_abga: usize,
}

/// Keeps samples with PaO2 in [40, 250] mmHg whose previous blood gas, when
/// there is one, is at most 24 h old. Both bounds inclusive.
pub fn filter_abga_dataset(samples: Vec<AbgaSample>) -> (Vec<AbgaSample>, FilterReport) {
    let mut report = FilterReport::default();
    let kept: Vec<AbgaSample> = samples
        .into_iter()
        .filter(|s| {
            if !s.target().is_some_and(|p| (PAO2_MIN..=PAO2_MAX).contains(&p)) {
                report.removed_pao2_range += 1;
                false
            } else if s.last_abga_age().is_some_and(|age| age > MAX_LAST_ABGA_AGE) {
                report.removed_stale_abga += 1;
                false
            } else {
                true
            }
        })
        .collect();
    report.kept = kept.len();
    (kept, report)
}

/// Saturation counts keyed at 0.1 percentage-point resolution.
#[derive(Debug, Clone, Default)]
pub struct SaturationCounts {
    counts: HashMap<i64, usize>,
}

fn saturation_key(sao2: f64) -> i64 {
    (sao2 * 1000.0).round() as i64
}

impl SaturationCounts {
    pub fn from_values(values: impl IntoIterator<Item = f64>) -> Self {
        let mut counts = HashMap::new();
        for v in values {
            *counts.entry(saturation_key(v)).or_insert(0) += 1;
        }
        SaturationCounts { counts }
    }

    pub fn count(&self, sao2: f64) -> usize {
        self.counts.get(&saturation_key(sao2)).copied().unwrap_or(0)
    }
}

/// Cost multiplier `1 / c^gamma` where `c` counts training examples sharing
/// the (discretized) saturation. No gamma means uniform weights.
pub fn example_weight(sao2: f64, counts: &SaturationCounts, gamma: Option<f64>) -> f64 {
    match gamma {
        None => 1.0,
        Some(g) => {
            let c = counts.count(sao2).max(1) as f64;
            c.powf(-g)
        }
    }
}

/// Blood-gas samples observed in a stay: one per PaO2 measurement, with the
/// panel recorded at the same time and the preceding panel as context.
pub fn abga_samples_from_stay(stay: &GriddedStay, table: &Fio2Table) -> Vec<AbgaSample> {
    let at = |var: &str, t: Seconds| stay.last_raw_at(var, t).filter(|s| s.time == t).map(|s| s.value);
    let panel_at = |t: Seconds| {
        let i = ((t / stay.grid_step) as usize).min(stay.n_grid() - 1);
        AbgaPanel {
            sao2: at(SAO2, t).map(|v| v / 100.0),
            ph: at(variables::PH, t),
            pao2: at(PAO2, t),
            fio2: Some(estimate_fio2(&oxygenation_state(stay, i), table).fio2),
            hb: at(variables::HB, t),
            methb: at(variables::METHB, t),
            cohb: at(variables::COHB, t),
            pco2: at(variables::PCO2, t),
            be: at(variables::BE, t),
            hco3: at(variables::HCO3, t),
            lactate: at(variables::LACTATE, t),
        }
    };
    let mut samples = Vec::new();
    let mut previous: Option<PreviousAbga> = None;
    for m in stay.raw_samples(PAO2) {
        let panel = panel_at(m.time);
        let spo2 = stay
            .last_raw_at(SPO2, m.time)
            .filter(|s| m.time - s.time <= 10 * MINUTE)
            .map(|s| s.value / 100.0);
        samples.push(AbgaSample {
            stay_id: Some(stay.stay_id.clone()),
            time: m.time,
            current: panel.clone(),
            previous: previous.clone(),
            spo2,
            etco2_mean_10min: None,
            temperature_mean_4h: None,
        });
        previous = Some(PreviousAbga { time: m.time, panel });
    }
    samples
}

/// Synthetic blood gases generated from the dissociation curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AbgaSynthConfig {
    /// Standard deviation of the Gaussian PaO2 noise around the curve (mmHg).
    pub noise_sd: f64,
    /// Fraction of samples drawn uniformly from the hypoxaemic range.
    pub low_fraction: f64,
    pub low_range: (f64, f64),
    /// Median of the log-normal bulk (mmHg).
    pub bulk_median: f64,
    pub bulk_log_sd: f64,
    /// Standard deviation of SpO2 around SaO2 (fraction).
    pub spo2_noise_sd: f64,
}

impl Default for AbgaSynthConfig {
    fn default() -> Self {
        AbgaSynthConfig {
            noise_sd: 5.0,
            low_fraction: 0.2,
            low_range: (35.0, 75.0),
            bulk_median: 90.0,
            bulk_log_sd: 0.3,
            spo2_noise_sd: 0.0,
        }
    }
}

/// `n` samples where the observed saturation is the curve evaluated at the
/// target PaO2 plus Gaussian noise. Saturations are recorded to 0.1 %.
pub fn synthetic_abga(seed: u64, n: usize, config: &AbgaSynthConfig) -> Vec<AbgaSample> {
    let mut rng = stream_rng(seed, "abga", 0);
    let noise = Normal::new(0.0, config.noise_sd.max(0.0)).expect("finite sd");
    let unit = Normal::new(0.0, 1.0).expect("finite sd");
    let record = |s: f64| ((s * 1000.0).round() / 1000.0).min(0.999);
    (0..n)
        .map(|i| {
            let pao2 = if rng.random_bool(config.low_fraction) {
                rng.random_range(config.low_range.0..config.low_range.1)
            } else {
                config.bulk_median * (config.bulk_log_sd * unit.sample(&mut rng)).exp()
            };
            let curve_p = (pao2 + noise.sample(&mut rng)).max(1.0);
            let sao2 = record(severinghaus_sao2(curve_p).expect("positive"));
            let spo2 = record((sao2 + config.spo2_noise_sd * unit.sample(&mut rng)).clamp(0.01, 1.0));
            let prev_pao2 = (pao2 * (0.15 * unit.sample(&mut rng)).exp()).max(20.0);
            let age = rng.random_range(HOUR..30 * HOUR);
            let ph = 7.40 + 0.05 * unit.sample(&mut rng);
            let fio2 = [0.21, 0.3, 0.4, 0.5, 0.6][rng.random_range(0..5)];
            let t = 40 * HOUR;
            AbgaSample {
                stay_id: Some(format!("abga_{:03}", i % 500)),
                time: t,
                current: AbgaPanel { sao2: Some(sao2), pao2: Some(pao2), ph: Some(ph), fio2: Some(fio2), ..Default::default() },
                previous: Some(PreviousAbga {
                    time: t - age,
                    panel: AbgaPanel {
                        sao2: Some(record(severinghaus_sao2(prev_pao2).expect("positive"))),
                        pao2: Some(prev_pao2),
                        ph: Some(ph + 0.02 * unit.sample(&mut rng)),
                        fio2: Some(fio2),
                        ..Default::default()
                    },
                }),
                spo2: Some(spo2),
                etco2_mean_10min: None,
                temperature_mean_4h: None,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(pao2: f64, age_h: Option<i64>) -> AbgaSample {
        AbgaSample {
            stay_id: None,
            time: 100 * HOUR,
            current: AbgaPanel { pao2: Some(pao2), sao2: Some(0.95), ..Default::default() },
            previous: age_h.map(|a| PreviousAbga { time: 100 * HOUR - a * HOUR, panel: AbgaPanel::default() }),
            spo2: Some(0.93),
            etco2_mean_10min: None,
            temperature_mean_4h: None,
        }
    }

    #[test]
    fn filter_rules() {
        let (kept, report) = filter_abga_dataset(vec![
            sample(300.0, Some(1)),
            sample(39.9, Some(1)),
            sample(80.0, Some(25)),
            sample(40.0, Some(24)),
            sample(250.0, None),
        ]);
        assert_eq!(report, FilterReport { kept: 2, removed_pao2_range: 2, removed_stale_abga: 1 });
        assert_eq!(kept[0].target(), Some(40.0));
        assert_eq!(kept[1].target(), Some(250.0));
    }

    #[test]
    fn filter_oracle_recount() {
        let samples = synthetic_abga(5, 2000, &AbgaSynthConfig::default());
        let expected = samples
            .iter()
            .filter(|s| {
                let p = s.target().unwrap();
                (40.0..=250.0).contains(&p) && s.last_abga_age().unwrap() <= 24 * 3600
            })
            .count();
        let (kept, report) = filter_abga_dataset(samples);
        assert_eq!(kept.len(), expected);
        assert_eq!(report.kept + report.removed_pao2_range + report.removed_stale_abga, 2000);
    }

    #[test]
    fn weights() {
        let counts = SaturationCounts::from_values([0.95, 0.95, 0.9504, 0.9496, 0.90]);
        assert_eq!(counts.count(0.95), 4);
        assert_eq!(example_weight(0.95, &counts, Some(0.0)), 1.0);
        assert_eq!(example_weight(0.95, &counts, None), 1.0);
        assert_eq!(example_weight(0.95, &counts, Some(0.5)), 0.5);
        assert_eq!(example_weight(0.90, &counts, Some(0.33)), 1.0);
    }

    #[test]
    fn sao2_input_switches_with_mode() {
        let s = sample(80.0, Some(2));
        assert_eq!(s.input("sao2", InputMode::Training), Some(0.95));
        assert_eq!(s.input("sao2", InputMode::Prediction), Some(0.93));
        assert_eq!(s.input("last_ph", InputMode::Training), None);
        assert_eq!(s.input("bogus", InputMode::Training), None);
    }
}
