//! Continuous FiO2, PaO2 and P/F tracks on the stay grid.

use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::cohort::GriddedStay;
use crate::oxy::{ellis_pao2, MlpModel};
use crate::variables::{FIO2, PAO2, SPO2, SUPP_O2, VENT_STATE};
use crate::{EwsError, Result, Seconds, MINUTE};

pub const AMBIENT_FIO2: f64 = 0.21;
pub const DEFAULT_FRESHNESS: Seconds = 30 * MINUTE;
/// Saturations above this are clamped before curve inversion; the curve is
/// uninformative at 100 %.
pub const MAX_INVERTIBLE_SATURATION: f64 = 0.99;

const DEFAULT_TABLE: &str = include_str!("../data/fio2_table.csv");

/// Supplemental-oxygen flow (l/min) to FiO2 lookup.
#[derive(Debug, Clone, PartialEq)]
pub struct Fio2Table {
    /// (liters, fio2 fraction), sorted by liters.
    rows: Vec<(u32, f64)>,
    /// FiO2 for flows above the largest tabulated value.
    above_max: f64,
}

impl Default for Fio2Table {
    fn default() -> Self {
        Fio2Table::parse(DEFAULT_TABLE).expect("bundled FiO2 table is valid")
    }
}

impl Fio2Table {
    /// Parses `liters,fio2_percent` CSV; a `>N` row gives the value above N.
    pub fn parse(text: &str) -> Result<Self> {
        let bad = |line: usize, message: String| EwsError::Parse { path: "fio2_table.csv".into(), line, message };
        let mut rows = Vec::new();
        let mut above_max = None;
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, header)) if header.trim() == "liters,fio2_percent" => {}
            _ => return Err(bad(1, "expected header liters,fio2_percent".into())),
        }
        for (i, line) in lines {
            let line_no = i + 1;
            if line.trim().is_empty() {
                continue;
            }
            let (liters, pct) = line.split_once(',').ok_or_else(|| bad(line_no, "expected two fields".into()))?;
            let pct: f64 = pct.trim().parse().map_err(|_| bad(line_no, format!("bad percent {pct:?}")))?;
            if !(21.0..=100.0).contains(&pct) {
                return Err(bad(line_no, format!("FiO2 {pct}% outside [21, 100]")));
            }
            let liters = liters.trim();
            if let Some(rest) = liters.strip_prefix('>') {
                rest.trim().parse::<u32>().map_err(|_| bad(line_no, format!("bad liters {liters:?}")))?;
                above_max = Some(pct / 100.0);
            } else {
                let l: u32 = liters.parse().map_err(|_| bad(line_no, format!("bad liters {liters:?}")))?;
                rows.push((l, pct / 100.0));
            }
        }
        rows.sort_by_key(|r| r.0);
        let last = rows.last().ok_or_else(|| bad(2, "empty table".into()))?.1;
        Ok(Fio2Table { rows, above_max: above_max.unwrap_or(last) })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| EwsError::io(path, e))?;
        Fio2Table::parse(&text)
    }

    /// FiO2 fraction for a flow in l/min. Flows round to the nearest liter
    /// (ties up); zero rounds to ambient air, flows past the table use the
    /// overflow row, gaps use the next lower tabulated flow.
    pub fn lookup(&self, liters: f64) -> f64 {
        let rounded = (liters + 0.5).floor();
        if rounded < 1.0 {
            return AMBIENT_FIO2;
        }
        let max = self.rows.last().map_or(0, |r| r.0);
        if rounded > f64::from(max) {
            return self.above_max;
        }
        let key = rounded as u32;
        let idx = self.rows.partition_point(|r| r.0 <= key);
        idx.checked_sub(1).map_or(AMBIENT_FIO2, |i| self.rows[i].1)
    }

    pub fn rows(&self) -> &[(u32, f64)] {
        &self.rows
    }

    pub fn above_max(&self) -> f64 {
        self.above_max
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct OxygenationState {
    pub ventilated: bool,
    /// Fraction.
    pub ventilator_fio2: Option<f64>,
    /// l/min.
    pub supplemental_o2: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fio2Source {
    Ventilator,
    Supplemental,
    Ambient,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Fio2Estimate {
    pub fio2: f64,
    pub source: Fio2Source,
    /// Set when the state was inconsistent (ventilated without a recorded
    /// FiO2, or a recorded value outside [0.21, 1]).
    pub data_quality_flag: bool,
}

/// Total FiO2 estimate: ventilator setting, supplemental-oxygen table or air.
pub fn estimate_fio2(state: &OxygenationState, table: &Fio2Table) -> Fio2Estimate {
    let mut flag = false;
    if state.ventilated {
        match state.ventilator_fio2 {
            Some(f) if (AMBIENT_FIO2..=1.0).contains(&f) => {
                return Fio2Estimate { fio2: f, source: Fio2Source::Ventilator, data_quality_flag: false }
            }
            Some(f) if f.is_finite() => {
                return Fio2Estimate {
                    fio2: f.clamp(AMBIENT_FIO2, 1.0),
                    source: Fio2Source::Ventilator,
                    data_quality_flag: true,
                }
            }
            _ => flag = true,
        }
    }
    match state.supplemental_o2 {
        Some(l) if l > 0.0 => {
            let fio2 = table.lookup(l);
            let source = if fio2 > AMBIENT_FIO2 { Fio2Source::Supplemental } else { Fio2Source::Ambient };
            Fio2Estimate { fio2, source, data_quality_flag: flag }
        }
        _ => Fio2Estimate { fio2: AMBIENT_FIO2, source: Fio2Source::Ambient, data_quality_flag: flag },
    }
}

/// Oxygenation state at grid index `i` from forward-filled channels.
/// Ventilator FiO2 is recorded in percent.
pub fn oxygenation_state(stay: &GriddedStay, i: usize) -> OxygenationState {
    OxygenationState {
        ventilated: stay.value_at(VENT_STATE, i).is_some_and(|v| v >= 0.5),
        ventilator_fio2: stay.value_at(FIO2, i).map(|pct| pct / 100.0),
        supplemental_o2: stay.value_at(SUPP_O2, i),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimatorKind {
    Pnl,
    Spo2nn,
    Fullnn,
}

impl FromStr for EstimatorKind {
    type Err = EwsError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "pnl" => Ok(EstimatorKind::Pnl),
            "spo2nn" | "spo2-nn" => Ok(EstimatorKind::Spo2nn),
            "fullnn" | "full-nn" => Ok(EstimatorKind::Fullnn),
            other => Err(EwsError::Config(format!("unknown PaO2 estimator {other:?} (expected pnl, spo2nn or fullnn)"))),
        }
    }
}

impl std::fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            EstimatorKind::Pnl => "pnl",
            EstimatorKind::Spo2nn => "spo2nn",
            EstimatorKind::Fullnn => "fullnn",
        })
    }
}

/// A PaO2 estimator applied to grid points without a fresh measurement.
#[derive(Debug, Clone)]
pub enum Pao2Estimator {
    Pnl,
    Network { kind: EstimatorKind, model: MlpModel },
}

impl Pao2Estimator {
    pub fn kind(&self) -> EstimatorKind {
        match self {
            Pao2Estimator::Pnl => EstimatorKind::Pnl,
            Pao2Estimator::Network { kind, .. } => *kind,
        }
    }

    /// PaO2 at grid index `i` from current SpO2 (percent) and, for networks,
    /// the most recent blood-gas values at or before the grid time.
    fn estimate(&self, stay: &GriddedStay, i: usize, spo2_pct: f64) -> Option<f64> {
        let saturation = (spo2_pct / 100.0).clamp(1e-3, MAX_INVERTIBLE_SATURATION);
        match self {
            Pao2Estimator::Pnl => ellis_pao2(saturation).ok(),
            Pao2Estimator::Network { model, .. } => {
                let t = stay.grid_time(i);
                let inputs: Option<Vec<f64>> = model
                    .input_names
                    .iter()
                    .map(|name| stay_input(stay, t, name, spo2_pct))
                    .collect();
                match inputs {
                    Some(x) => Some(model.predict_one(&x)),
                    // no previous blood gas yet: fall back to the curve
                    None => ellis_pao2(saturation).ok(),
                }
            }
        }
    }
}

/// Value of a network input at time `t`; saturations and FiO2 as fractions.
fn stay_input(stay: &GriddedStay, t: Seconds, name: &str, spo2_pct: f64) -> Option<f64> {
    if name == "sao2" {
        return Some(spo2_pct / 100.0);
    }
    let var = name.strip_prefix("last_")?;
    let sample = stay.last_raw_at(var, t)?;
    Some(if var == "sao2" || var == "fio2" { sample.value / 100.0 } else { sample.value })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pao2Source {
    Measured,
    Estimated,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pao2Point {
    pub value: f64,
    pub source: Pao2Source,
}

/// PaO2 per grid point: a measurement within `freshness` before the grid
/// time if any, else the estimator on the current SpO2, else missing.
pub fn pao2_track(stay: &GriddedStay, estimator: &Pao2Estimator, freshness: Seconds) -> Vec<Option<Pao2Point>> {
    let spo2 = stay.channel(SPO2);
    (0..stay.n_grid())
        .map(|i| {
            let t = stay.grid_time(i);
            if let Some(m) = stay.last_raw_at(PAO2, t).filter(|m| t - m.time <= freshness) {
                return Some(Pao2Point { value: m.value, source: Pao2Source::Measured });
            }
            let s = spo2.and_then(|c| c.values[i])?;
            estimator
                .estimate(stay, i, s)
                .map(|value| Pao2Point { value, source: Pao2Source::Estimated })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PfPoint {
    pub pao2: Option<Pao2Point>,
    pub fio2: Fio2Estimate,
    pub pf: Option<f64>,
}

/// Continuous P/F track on the stay grid.
#[derive(Debug, Clone, PartialEq)]
pub struct PfTrack {
    pub grid_step: Seconds,
    pub points: Vec<PfPoint>,
}

impl PfTrack {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn pf_values(&self) -> Vec<Option<f64>> {
        self.points.iter().map(|p| p.pf).collect()
    }

    pub fn fio2_values(&self) -> Vec<Option<f64>> {
        self.points.iter().map(|p| Some(p.fio2.fio2)).collect()
    }

    /// CSV with columns `time_s,pao2_est,pao2_source,fio2_est,pf`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("time_s,pao2_est,pao2_source,fio2_est,pf\n");
        for (i, p) in self.points.iter().enumerate() {
            let (pao2, src) = match p.pao2 {
                Some(pt) => (
                    pt.value.to_string(),
                    match pt.source {
                        Pao2Source::Measured => "measured",
                        Pao2Source::Estimated => "estimated",
                    },
                ),
                None => ("na".to_string(), "na"),
            };
            let pf = p.pf.map_or_else(|| "na".to_string(), |v| v.to_string());
            out.push_str(&format!("{},{pao2},{src},{},{pf}\n", i as Seconds * self.grid_step, p.fio2.fio2));
        }
        out
    }
}

pub fn pf_track(stay: &GriddedStay, estimator: &Pao2Estimator, freshness: Seconds, table: &Fio2Table) -> PfTrack {
    let pao2 = pao2_track(stay, estimator, freshness);
    let points = pao2
        .into_iter()
        .enumerate()
        .map(|(i, pao2)| {
            let fio2 = estimate_fio2(&oxygenation_state(stay, i), table);
            debug_assert!(fio2.fio2 >= AMBIENT_FIO2);
            PfPoint { pao2, fio2, pf: pao2.map(|p| p.value / fio2.fio2) }
        })
        .collect();
    PfTrack { grid_step: stay.grid_step, points }
}
