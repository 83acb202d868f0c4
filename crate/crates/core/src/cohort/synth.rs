//! Synthetic HiRID-shaped stays with planted respiratory deterioration.
//!
//! A latent severity `s(t)` in [0, 1] drives everything: a piecewise-linear
//! background plus planted episodes (precursor ramp, plateau, recovery).
//! Clinicians titrate oxygen on a 30-minute decision grid, the true P/F
//! potential falls linearly with severity, and each channel is sampled at its
//! own cadence with bounded noise.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{resample, Cohort, GriddedStay, RawMeasurement};
use crate::oxy::severinghaus_sao2;
use crate::pf::Fio2Table;
use crate::rng::{stream_rng, EwsRng};
use crate::variables::*;
use crate::{EwsError, Result, Seconds, DEFAULT_GRID_STEP, HOUR, MINUTE};

/// Severity at which the true P/F potential crosses 200 mmHg.
const PF_AT_ZERO_SEVERITY: f64 = 450.0;
const PF_SEVERITY_SLOPE: f64 = 330.0;
const DECISION_INTERVAL: Seconds = 30 * MINUTE;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub seed: u64,
    pub n_stays: usize,
    /// Fraction of stays with a planted failure episode.
    pub failure_fraction: f64,
    /// Fraction of stays with a deterioration that recovers before failing.
    pub near_miss_fraction: f64,
    /// Fraction of stays ventilated from admission.
    pub ventilated_fraction: f64,
    pub min_los_h: f64,
    pub max_los_h: f64,
    pub episode_min_h: f64,
    pub episode_max_h: f64,
    pub precursor_min_h: f64,
    pub precursor_max_h: f64,
    /// Probability that a failing, non-ventilated patient gets intubated.
    pub intubation_probability: f64,
    /// Probability of a second failure episode when the stay is long enough.
    pub second_episode_probability: f64,
    /// Half-width of the uniform SpO2 noise (percentage points).
    pub spo2_noise: f64,
    /// Half-width of the slow P/F background noise (mmHg).
    pub pf_noise: f64,
    /// Multiplier on the noise of the remaining vitals.
    pub vital_noise: f64,
    /// Probability that a scheduled SpO2 sample is not recorded.
    pub dropout_probability: f64,
    pub grid_step_s: Seconds,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            seed: 1,
            n_stays: 50,
            failure_fraction: 0.4,
            near_miss_fraction: 0.15,
            ventilated_fraction: 0.25,
            min_los_h: 24.0,
            max_los_h: 168.0,
            episode_min_h: 3.0,
            episode_max_h: 12.0,
            precursor_min_h: 3.0,
            precursor_max_h: 8.0,
            intubation_probability: 0.3,
            second_episode_probability: 0.3,
            spo2_noise: 1.0,
            pf_noise: 15.0,
            vital_noise: 1.0,
            dropout_probability: 0.02,
            grid_step_s: DEFAULT_GRID_STEP,
        }
    }
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ScenarioConfig = toml::from_str(text).map_err(|e| EwsError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(EwsError::Config(m.to_string()));
        let unit = |x: f64| (0.0..=1.0).contains(&x);
        if self.n_stays < 1 {
            return fail("n_stays must be at least 1");
        }
        if ![
            self.failure_fraction,
            self.near_miss_fraction,
            self.ventilated_fraction,
            self.intubation_probability,
            self.second_episode_probability,
            self.dropout_probability,
        ]
        .into_iter()
        .all(unit)
        {
            return fail("fractions and probabilities must lie in [0, 1]");
        }
        if self.failure_fraction + self.near_miss_fraction > 1.0 {
            return fail("failure_fraction + near_miss_fraction must not exceed 1");
        }
        if !(self.min_los_h > 0.0 && self.min_los_h <= self.max_los_h) {
            return fail("need 0 < min_los_h <= max_los_h");
        }
        if !(self.episode_min_h > 0.0 && self.episode_min_h <= self.episode_max_h) {
            return fail("need 0 < episode_min_h <= episode_max_h");
        }
        if !(self.precursor_min_h > 0.0 && self.precursor_min_h <= self.precursor_max_h) {
            return fail("need 0 < precursor_min_h <= precursor_max_h");
        }
        if self.spo2_noise < 0.0 || self.pf_noise < 0.0 || self.vital_noise < 0.0 {
            return fail("noise levels must be non-negative");
        }
        if self.grid_step_s <= 0 {
            return fail("grid_step_s must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpisodeKind {
    Failure,
    NearMiss,
}

/// Ground truth of one planted deterioration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedEpisode {
    pub kind: EpisodeKind,
    pub precursor_start_s: Seconds,
    /// Time the true P/F potential drops below 200 mmHg (failures only).
    pub onset_s: Option<Seconds>,
    /// Time it climbs back above 200 mmHg (failures only, may exceed the stay).
    pub end_s: Option<Seconds>,
    pub peak_severity: f64,
}

/// Piecewise-linear ramp: up over `rise`, flat for `plateau`, down over `fall`.
#[derive(Debug, Clone, Copy)]
struct Ramp {
    start: f64,
    rise: f64,
    plateau: f64,
    fall: f64,
    peak: f64,
}

impl Ramp {
    fn at(&self, t: f64) -> f64 {
        let x = t - self.start;
        if x <= 0.0 {
            0.0
        } else if x < self.rise {
            self.peak * x / self.rise
        } else if x < self.rise + self.plateau {
            self.peak
        } else if x < self.rise + self.plateau + self.fall {
            self.peak * (1.0 - (x - self.rise - self.plateau) / self.fall)
        } else {
            0.0
        }
    }

    fn end(&self) -> f64 {
        self.start + self.rise + self.plateau + self.fall
    }

    /// Times at which the ramp crosses `level` upwards and downwards.
    fn crossings(&self, level: f64) -> Option<(f64, f64)> {
        if self.peak < level {
            return None;
        }
        let frac = level / self.peak;
        let up = self.start + self.rise * frac;
        let down = self.start + self.rise + self.plateau + self.fall * (1.0 - frac);
        Some((up, down))
    }
}

/// Piecewise-linear interpolation over equally spaced knots.
struct Knots {
    spacing: f64,
    values: Vec<f64>,
}

impl Knots {
    fn random(rng: &mut EwsRng, end: f64, spacing: f64, lo: f64, hi: f64) -> Self {
        let n = (end / spacing).ceil() as usize + 2;
        let values = (0..n).map(|_| if hi > lo { rng.random_range(lo..hi) } else { lo }).collect();
        Knots { spacing, values }
    }

    fn at(&self, t: f64) -> f64 {
        let pos = (t / self.spacing).max(0.0);
        let i = (pos.floor() as usize).min(self.values.len() - 2);
        let frac = pos - i as f64;
        self.values[i] + (self.values[i + 1] - self.values[i]) * frac
    }
}

struct Physiology {
    background: Knots,
    pf_noise: Knots,
    ramps: Vec<Ramp>,
}

impl Physiology {
    fn severity(&self, t: Seconds) -> f64 {
        let t = t as f64;
        self.ramps.iter().map(|r| r.at(t)).fold(self.background.at(t), f64::max).clamp(0.0, 1.0)
    }

    fn pf_potential(&self, t: Seconds) -> f64 {
        PF_AT_ZERO_SEVERITY - PF_SEVERITY_SLOPE * self.severity(t) + self.pf_noise.at(t as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Therapy {
    ventilated: bool,
    /// Ventilator FiO2 in percent, or supplemental flow in l/min.
    vent_fio2_pct: f64,
    peep: f64,
    flow: f64,
}

impl Therapy {
    fn fio2_fraction(&self, table: &Fio2Table) -> f64 {
        if self.ventilated {
            self.vent_fio2_pct / 100.0
        } else {
            table.lookup(self.flow)
        }
    }
}

fn severity_at_pf(pf: f64) -> f64 {
    (PF_AT_ZERO_SEVERITY - pf) / PF_SEVERITY_SLOPE
}

fn round_to(x: f64, decimals: i32) -> f64 {
    let scale = 10f64.powi(decimals);
    (x * scale).round() / scale
}

fn uniform(rng: &mut EwsRng, half_width: f64) -> f64 {
    if half_width > 0.0 {
        rng.random_range(-half_width..half_width)
    } else {
        0.0
    }
}

/// Generates `n_stays` stays; a pure function of `(seed, n_stays, config)`.
/// `config.seed` and `config.n_stays` are ignored in favour of the arguments.
pub fn generate_synthetic_cohort(seed: u64, n_stays: usize, config: &ScenarioConfig) -> Result<Cohort> {
    let config = ScenarioConfig { seed, n_stays, ..config.clone() };
    config.validate()?;

    let mut order: Vec<usize> = (0..n_stays).collect();
    order.shuffle(&mut stream_rng(seed, "synth-assign", 0));
    let n_fail = (config.failure_fraction * n_stays as f64).round() as usize;
    let n_near = ((config.near_miss_fraction * n_stays as f64).round() as usize).min(n_stays - n_fail);
    let failing: BTreeSet<usize> = order[..n_fail].iter().copied().collect();
    let near_miss: BTreeSet<usize> = order[n_fail..n_fail + n_near].iter().copied().collect();

    let table = Fio2Table::default();
    let mut stays = Vec::with_capacity(n_stays);
    let mut truth = BTreeMap::new();
    for index in 0..n_stays {
        let kind = if failing.contains(&index) {
            Some(EpisodeKind::Failure)
        } else if near_miss.contains(&index) {
            Some(EpisodeKind::NearMiss)
        } else {
            None
        };
        let mut rng = stream_rng(seed, "synth-stay", index as u64);
        let (stay, episodes) = generate_stay(&mut rng, index, kind, &config, &table)?;
        if !episodes.is_empty() {
            truth.insert(stay.stay_id.clone(), episodes);
        }
        stays.push(stay);
    }
    Ok(Cohort { stays, truth })
}

fn plan_episodes(
    rng: &mut EwsRng,
    kind: Option<EpisodeKind>,
    los: f64,
    config: &ScenarioConfig,
) -> Vec<(EpisodeKind, Ramp)> {
    let h = HOUR as f64;
    let mut ramps = Vec::new();
    let Some(kind) = kind else { return ramps };
    let mut earliest = rng.random_range(1.0..3.0) * h;
    let max_episodes = if kind == EpisodeKind::Failure && rng.random_bool(config.second_episode_probability) {
        2
    } else {
        1
    };
    for _ in 0..max_episodes {
        let rise = rng.random_range(config.precursor_min_h..=config.precursor_max_h) * h;
        let (peak, plateau) = match kind {
            EpisodeKind::Failure => (1.0, rng.random_range(config.episode_min_h..=config.episode_max_h) * h),
            EpisodeKind::NearMiss => (rng.random_range(0.4..0.6), rng.random_range(0.5..2.0) * h),
        };
        let fall = rng.random_range(2.0..4.0) * h;
        // the whole plateau must fit inside the stay
        let latest = los - rise - plateau - 0.5 * h;
        if latest < earliest {
            if ramps.is_empty() {
                // shrink into the stay rather than dropping the planted episode
                let plateau = (los - earliest - rise - 0.5 * h).max(0.0);
                ramps.push((kind, Ramp { start: earliest, rise, plateau, fall, peak }));
            }
            break;
        }
        let span = (latest - earliest).min(24.0 * h);
        let start = earliest + rng.random_range(0.0..=1.0) * span;
        let ramp = Ramp { start, rise, plateau, fall, peak };
        earliest = ramp.end() + 12.0 * h;
        ramps.push((kind, ramp));
    }
    ramps
}

fn generate_stay(
    rng: &mut EwsRng,
    index: usize,
    kind: Option<EpisodeKind>,
    config: &ScenarioConfig,
    table: &Fio2Table,
) -> Result<(GriddedStay, Vec<PlantedEpisode>)> {
    let h = HOUR as f64;
    let los_h = if config.max_los_h > config.min_los_h {
        rng.random_range(config.min_los_h..config.max_los_h)
    } else {
        config.min_los_h
    };
    let end: Seconds = (los_h * h).round() as Seconds;
    let endf = end as f64;

    let planned = plan_episodes(rng, kind, endf, config);
    let physiology = Physiology {
        background: Knots::random(rng, endf, 6.0 * h, 0.0, 0.2),
        pf_noise: Knots::random(rng, endf, 2.0 * h, -config.pf_noise, config.pf_noise),
        ramps: planned.iter().map(|(_, r)| *r).collect(),
    };
    let critical = severity_at_pf(200.0);
    let episodes: Vec<PlantedEpisode> = planned
        .iter()
        .map(|(k, r)| {
            let crossing = if *k == EpisodeKind::Failure { r.crossings(critical) } else { None };
            PlantedEpisode {
                kind: *k,
                precursor_start_s: r.start.round() as Seconds,
                onset_s: crossing.map(|c| c.0.round() as Seconds),
                end_s: crossing.map(|c| c.1.round() as Seconds),
                peak_severity: r.peak,
            }
        })
        .collect();

    let mut rows: Vec<RawMeasurement> = Vec::new();
    let push = |rows: &mut Vec<RawMeasurement>, var: &str, t: Seconds, v: f64| {
        if t <= end {
            rows.push(RawMeasurement { variable_id: var.to_string(), time: t, value: v });
        }
    };
    let noise = config.vital_noise;

    // Oxygen therapy on the decision grid.
    let ventilated_from_start = rng.random_bool(config.ventilated_fraction);
    let planned_extubation = if ventilated_from_start {
        (rng.random_range(0.3..0.8) * endf) as Seconds
    } else {
        0
    };
    let intubate_when_severe = rng.random_bool(config.intubation_probability);
    let mut therapies: Vec<(Seconds, Therapy)> = Vec::new();
    let mut ventilated = ventilated_from_start;
    let mut previous: Option<Therapy> = None;
    let mut t = 0;
    while t <= end {
        let s = physiology.severity(t);
        if ventilated && s < 0.3 && t >= planned_extubation {
            ventilated = false;
            push(&mut rows, EXTUBATION, t, 1.0);
        } else if !ventilated && intubate_when_severe && s >= 0.85 {
            ventilated = true;
        }
        let therapy = if ventilated {
            Therapy {
                ventilated,
                vent_fio2_pct: ((30.0 + 40.0 * s) / 5.0).round() * 5.0,
                peep: 5.0 + (5.0 * s).round(),
                flow: 0.0,
            }
        } else {
            let flow = if s < 0.2 { 0.0 } else { (1.0 + ((s - 0.2) / 0.8 * 10.0).round()).min(15.0) };
            Therapy { ventilated, vent_fio2_pct: 0.0, peep: 0.0, flow }
        };
        therapies.push((t, therapy));
        let changed = previous != Some(therapy);
        let routine = t % (2 * HOUR) == 0;
        if changed || routine {
            push(&mut rows, VENT_STATE, t, if therapy.ventilated { 1.0 } else { 0.0 });
            if therapy.ventilated {
                push(&mut rows, FIO2, t, therapy.vent_fio2_pct);
                push(&mut rows, PEEP, t, therapy.peep);
            } else {
                push(&mut rows, SUPP_O2, t, therapy.flow);
                if therapy.flow > 0.0 {
                    let pct = table.lookup(therapy.flow) * 100.0;
                    push(&mut rows, SUPP_FIO2, t, round_to(pct + uniform(rng, 2.0), 0));
                }
            }
        }
        previous = Some(therapy);
        t += DECISION_INTERVAL;
    }
    let therapy_at = |t: Seconds| -> Therapy {
        let idx = therapies.partition_point(|(tt, _)| *tt <= t);
        therapies[idx.saturating_sub(1)].1
    };
    let pao2_at = |t: Seconds| -> f64 {
        (physiology.pf_potential(t) * therapy_at(t).fio2_fraction(table)).clamp(30.0, 550.0)
    };

    // SpO2 every 5 minutes at a per-stay phase.
    let phase = rng.random_range(0..DEFAULT_GRID_STEP);
    let mut t = phase;
    while t <= end {
        if !rng.random_bool(config.dropout_probability) {
            let sat = 100.0 * severinghaus_sao2(pao2_at(t))?;
            push(&mut rows, SPO2, t, (sat + uniform(rng, config.spo2_noise)).round().clamp(50.0, 100.0));
        }
        t += DEFAULT_GRID_STEP;
    }

    // Respiratory rate every 10 minutes, ST segment every 15, output hourly.
    let mut t = phase;
    while t <= end {
        let s = physiology.severity(t);
        push(&mut rows, RESP_RATE, t, (14.0 + 16.0 * s + uniform(rng, 2.0 * noise)).round());
        if (t - phase) % (15 * MINUTE) == 0 {
            push(&mut rows, ST2, t, round_to(uniform(rng, 0.5 * noise), 2));
        }
        if (t - phase) % HOUR == 0 {
            push(&mut rows, URINE_OUT, t, (80.0 - 30.0 * s + uniform(rng, 25.0 * noise)).max(0.0).round());
            let th = therapy_at(t);
            if th.ventilated {
                push(&mut rows, PEAK_PRESSURE, t, (18.0 + 14.0 * s + uniform(rng, 2.0 * noise)).round());
                push(&mut rows, VENT_MODE, t, if s > 0.6 { 1.0 } else if s > 0.3 { 2.0 } else { 3.0 });
            }
        }
        t += 10 * MINUTE;
    }

    // Neurological scores and breathing state every 4 hours.
    let mut t = rng.random_range(0..HOUR);
    while t <= end {
        let th = therapy_at(t);
        let s = physiology.severity(t);
        push(&mut rows, GCS_EYE, t, if s > 0.6 || th.ventilated { 3.0 } else { 4.0 });
        push(&mut rows, GCS_VERBAL, t, if th.ventilated { 1.0 } else { f64::from(rng.random_range(4..=5)) });
        push(&mut rows, GCS_MOTOR, t, f64::from(rng.random_range(5..=6)));
        push(&mut rows, RASS, t, if th.ventilated { f64::from(rng.random_range(-3..=-1)) } else { f64::from(rng.random_range(-1..=1)) });
        push(&mut rows, SPONT_BREATHING, t, if th.ventilated && s > 0.5 { 0.0 } else { 1.0 });
        t += 4 * HOUR;
    }
    let tracheotomy = ventilated_from_start && rng.random_bool(0.1);
    let dialysis = rng.random_bool(0.05);
    let mut t = 0;
    while t <= end {
        push(&mut rows, TRACHEOTOMY, t, if tracheotomy { 1.0 } else { 0.0 });
        if dialysis {
            push(&mut rows, PERITONEAL_DIALYSIS, t, 1.0);
        }
        t += 12 * HOUR;
    }

    // Arterial blood gases, more frequent while the patient is unwell.
    let mut t = rng.random_range(0..2 * HOUR);
    while t <= end {
        let s = physiology.severity(t);
        let pao2 = pao2_at(t);
        push(&mut rows, PAO2, t, round_to(pao2 + uniform(rng, 3.0 * noise), 1));
        push(&mut rows, SAO2, t, round_to((100.0 * severinghaus_sao2(pao2)? + uniform(rng, 0.5)).min(100.0), 1));
        push(&mut rows, PH, t, round_to(7.40 - 0.08 * s + uniform(rng, 0.03 * noise), 2));
        push(&mut rows, PCO2, t, round_to(40.0 + 8.0 * s + uniform(rng, 3.0 * noise), 1));
        let gap_h = if s > 0.5 { rng.random_range(1.5..3.0) } else { rng.random_range(3.0..8.0) };
        t += (gap_h * h) as Seconds;
    }

    let statics: BTreeMap<String, f64> = [
        (AGE, f64::from(rng.random_range(18..=90))),
        (WEIGHT, round_to(rng.random_range(50.0..110.0), 1)),
        (ADMISSION_ORIGIN, f64::from(rng.random_range(1..=6))),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect();

    let mut stay = GriddedStay::from_measurements(format!("stay_{index:05}"), statics, rows)?;
    stay.end_time = end;
    let stay = resample(&stay, config.grid_step_s)?;
    Ok((stay, episodes))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ScenarioConfig {
        ScenarioConfig { min_los_h: 24.0, max_los_h: 36.0, ..ScenarioConfig::default() }
    }

    #[test]
    fn deterministic_given_seed() {
        let a = generate_synthetic_cohort(1, 10, &small()).unwrap();
        let b = generate_synthetic_cohort(1, 10, &small()).unwrap();
        assert_eq!(a, b);
        let c = generate_synthetic_cohort(2, 10, &small()).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn failure_fraction_is_respected() {
        let cohort = generate_synthetic_cohort(3, 20, &ScenarioConfig { near_miss_fraction: 0.0, ..small() }).unwrap();
        let failing = cohort
            .truth
            .values()
            .filter(|eps| eps.iter().any(|e| e.kind == EpisodeKind::Failure))
            .count();
        assert_eq!(failing, 8);
    }

    #[test]
    fn stays_carry_core_channels_and_statics() {
        let cohort = generate_synthetic_cohort(4, 5, &small()).unwrap();
        for stay in &cohort.stays {
            for var in [SPO2, RESP_RATE, PAO2, SAO2, VENT_STATE, GCS_EYE, RASS, ST2, URINE_OUT, TRACHEOTOMY] {
                assert!(!stay.raw_samples(var).is_empty(), "{} lacks {var}", stay.stay_id);
            }
            assert_eq!(stay.statics.len(), 3);
            assert!(stay.end_time >= 24 * HOUR);
        }
    }

    #[test]
    fn invalid_config_rejected() {
        assert!(generate_synthetic_cohort(1, 0, &small()).is_err());
        let bad = ScenarioConfig { failure_fraction: 0.8, near_miss_fraction: 0.4, ..small() };
        assert!(generate_synthetic_cohort(1, 5, &bad).is_err());
        assert!(ScenarioConfig::from_toml("n_stays = 3\nbogus = 1").is_err());
        assert_eq!(ScenarioConfig::from_toml("n_stays = 3").unwrap().n_stays, 3);
    }

    #[test]
    fn ramp_crossings() {
        let r = Ramp { start: 0.0, rise: 10.0, plateau: 5.0, fall: 10.0, peak: 1.0 };
        assert_eq!(r.crossings(0.5), Some((5.0, 20.0)));
        assert!((r.at(5.0) - 0.5).abs() < 1e-12);
        assert_eq!(r.at(30.0), 0.0);
        let low = Ramp { peak: 0.4, ..r };
        assert_eq!(low.crossings(0.5), None);
    }
}
