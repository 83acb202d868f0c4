//! Per-grid-point feature extraction: current value, multi-resolution
//! summaries, measurement intensity, instability fractions and statics.

pub mod config;
pub mod window;

use std::io::{BufRead, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use config::{Band, FeatureConfig, VariableConfig, DEFAULT_VARIABLES_TOML};
pub use window::{instability, intensity, summarize, Expanding, Intensity, Summary, SUMMARY_NAMES};

use crate::cohort::GriddedStay;
use crate::labeler::Label;
use crate::{EwsError, Result, Seconds};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureClass {
    Current,
    Summary,
    Intensity,
    Instability,
    Static,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnInfo {
    pub name: String,
    pub variable: String,
    pub class: FeatureClass,
}

/// Column layout implied by a config; order is the config order.
pub fn feature_columns(config: &FeatureConfig) -> Vec<ColumnInfo> {
    let short = format!("{}h", config.short_window_h);
    let mut out = Vec::new();
    let mut push = |var: &str, name: String, class| out.push(ColumnInfo { name: format!("{var}__{name}"), variable: var.into(), class });
    for v in &config.variables {
        let id = v.id.as_str();
        if v.current {
            push(id, "current".into(), FeatureClass::Current);
        }
        if v.summaries {
            for w in [short.as_str(), "stay"] {
                for s in SUMMARY_NAMES {
                    push(id, format!("{s}_{w}"), FeatureClass::Summary);
                }
            }
        }
        if v.intensity {
            push(id, "time_to_last".into(), FeatureClass::Intensity);
            push(id, format!("density_{short}"), FeatureClass::Intensity);
            push(id, "density_stay".into(), FeatureClass::Intensity);
        }
        for k in 1..=v.bands.len() {
            for w in [short.as_str(), "stay"] {
                push(id, format!("instab_L{k}_{w}"), FeatureClass::Instability);
            }
        }
    }
    for s in &config.statics {
        out.push(ColumnInfo { name: format!("static__{s}"), variable: s.clone(), class: FeatureClass::Static });
    }
    out
}

/// Column-major features for every grid point of `stay`.
pub fn stay_feature_columns(stay: &GriddedStay, config: &FeatureConfig) -> Vec<Vec<f64>> {
    let n = stay.n_grid();
    let step = stay.grid_step;
    let window = config.short_window();
    let w_points = (window / step).max(1) as usize;
    let mut cols: Vec<Vec<f64>> = Vec::new();
    let mut buf: Vec<(Seconds, f64)> = Vec::with_capacity(w_points);
    for v in &config.variables {
        let values: Vec<Option<f64>> = (0..n).map(|i| stay.value_at(&v.id, i)).collect();
        if v.current {
            cols.push(values.iter().map(|x| x.unwrap_or(f64::NAN)).collect());
        }
        if v.summaries {
            let mut short: [Vec<f64>; 5] = Default::default();
            let mut long: [Vec<f64>; 5] = Default::default();
            let mut acc = Expanding::default();
            for i in 0..n {
                buf.clear();
                let lo = (i + 1).saturating_sub(w_points);
                buf.extend((lo..=i).filter_map(|j| values[j].map(|x| (stay.grid_time(j), x))));
                for (c, x) in short.iter_mut().zip(summarize(&buf).as_array()) {
                    c.push(x);
                }
                if let Some(x) = values[i] {
                    acc.push(stay.grid_time(i), x);
                }
                for (c, x) in long.iter_mut().zip(acc.summary().as_array()) {
                    c.push(x);
                }
            }
            cols.extend(short);
            cols.extend(long);
        }
        if v.intensity {
            let times: Vec<Seconds> = stay.raw_samples(&v.id).iter().map(|s| s.time).collect();
            let mut c = [Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n)];
            for i in 0..n {
                let it = intensity(&times, stay.grid_time(i), window, step);
                c[0].push(it.time_to_last);
                c[1].push(it.density_window);
                c[2].push(it.density_stay);
            }
            cols.extend(c);
        }
        if !v.bands.is_empty() {
            let mut in_band = vec![0usize; v.bands.len()];
            let mut defined = 0usize;
            let mut per_band: Vec<[Vec<f64>; 2]> = vec![Default::default(); v.bands.len()];
            for i in 0..n {
                let lo = (i + 1).saturating_sub(w_points);
                let short = instability(&values[lo..=i], &v.bands);
                if let Some(x) = values[i] {
                    defined += 1;
                    for (c, b) in in_band.iter_mut().zip(&v.bands) {
                        *c += usize::from(b.contains(x));
                    }
                }
                for (k, cols) in per_band.iter_mut().enumerate() {
                    cols[0].push(short[k]);
                    cols[1].push(if defined == 0 { f64::NAN } else { in_band[k] as f64 / defined as f64 });
                }
            }
            for [a, b] in per_band {
                cols.push(a);
                cols.push(b);
            }
        }
    }
    for s in &config.statics {
        let x = stay.statics.get(s).copied().unwrap_or(f64::NAN);
        cols.push(vec![x; n]);
    }
    cols
}

/// Features of a single grid point.
pub fn features_at(stay: &GriddedStay, config: &FeatureConfig, index: usize) -> Vec<f64> {
    stay_feature_columns(stay, config).iter().map(|c| c[index]).collect()
}

/// Row-major feature matrix with one row per labeled grid point.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FeatureMatrix {
    pub columns: Vec<String>,
    pub values: Vec<f64>,
    pub stays: Vec<String>,
    /// Index into `stays` per row.
    pub row_stay: Vec<u32>,
    pub times: Vec<Seconds>,
    pub labels: Vec<bool>,
}

impl FeatureMatrix {
    pub fn empty(columns: Vec<String>) -> Self {
        FeatureMatrix { columns, ..Default::default() }
    }

    pub fn n_rows(&self) -> usize {
        self.labels.len()
    }

    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let w = self.n_cols();
        &self.values[i * w..(i + 1) * w]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n_cols() + j]
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.n_rows()).map(|i| self.get(i, j)).collect()
    }

    pub fn stay_of(&self, i: usize) -> &str {
        &self.stays[self.row_stay[i] as usize]
    }

    pub fn push_row(&mut self, stay: &str, time: Seconds, label: bool, row: &[f64]) {
        assert_eq!(row.len(), self.n_cols(), "row width");
        let idx = match self.stays.last() {
            Some(s) if s == stay => self.stays.len() - 1,
            _ => {
                self.stays.push(stay.to_string());
                self.stays.len() - 1
            }
        };
        self.row_stay.push(idx as u32);
        self.times.push(time);
        self.labels.push(label);
        self.values.extend_from_slice(row);
    }

    pub fn append(&mut self, other: FeatureMatrix) -> Result<()> {
        if other.columns != self.columns {
            return Err(EwsError::SchemaMismatch("cannot concatenate matrices with different columns".into()));
        }
        let offset = self.stays.len() as u32;
        self.stays.extend(other.stays);
        self.row_stay.extend(other.row_stay.into_iter().map(|s| s + offset));
        self.times.extend(other.times);
        self.labels.extend(other.labels);
        self.values.extend(other.values);
        Ok(())
    }

    pub fn select_rows(&self, rows: &[usize]) -> FeatureMatrix {
        let mut out = FeatureMatrix::empty(self.columns.clone());
        for &i in rows {
            out.push_row(self.stay_of(i), self.times[i], self.labels[i], self.row(i));
        }
        out
    }

    /// Rows belonging to any of `stays`, in their original order.
    pub fn select_stays(&self, stays: &std::collections::BTreeSet<String>) -> FeatureMatrix {
        let rows: Vec<usize> = (0..self.n_rows()).filter(|&i| stays.contains(self.stay_of(i))).collect();
        self.select_rows(&rows)
    }

    pub fn select_columns(&self, names: &[&str]) -> Result<FeatureMatrix> {
        let idx: Vec<usize> = names
            .iter()
            .map(|n| self.column_index(n).ok_or_else(|| EwsError::SchemaMismatch(format!("missing column {n}"))))
            .collect::<Result<_>>()?;
        let mut values = Vec::with_capacity(self.n_rows() * idx.len());
        for i in 0..self.n_rows() {
            let r = self.row(i);
            values.extend(idx.iter().map(|&j| r[j]));
        }
        Ok(FeatureMatrix {
            columns: names.iter().map(|s| s.to_string()).collect(),
            values,
            stays: self.stays.clone(),
            row_stay: self.row_stay.clone(),
            times: self.times.clone(),
            labels: self.labels.clone(),
        })
    }

    pub fn prevalence(&self) -> f64 {
        self.labels.iter().filter(|&&l| l).count() as f64 / self.n_rows().max(1) as f64
    }

    /// CSV with `stay_id,time_s,label` leading; missing values are empty fields.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["stay_id".to_string(), "time_s".into(), "label".into()];
        header.extend(self.columns.iter().cloned());
        w.write_record(&header)?;
        let mut rec: Vec<String> = Vec::with_capacity(header.len());
        for i in 0..self.n_rows() {
            rec.clear();
            rec.push(self.stay_of(i).to_string());
            rec.push(self.times[i].to_string());
            rec.push(if self.labels[i] { "1" } else { "0" }.into());
            rec.extend(self.row(i).iter().map(|v| if v.is_nan() { String::new() } else { format!("{v:?}") }));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| EwsError::Config(format!("write failed: {e}")))?;
        Ok(())
    }

    pub fn read_csv<R: BufRead>(input: R, path: &Path) -> Result<FeatureMatrix> {
        let mut r = csv::Reader::from_reader(input);
        let header = r.headers()?.clone();
        if header.len() < 3 || &header[0] != "stay_id" || &header[1] != "time_s" || &header[2] != "label" {
            return Err(EwsError::Parse { path: path.into(), line: 1, message: "expected stay_id,time_s,label header".into() });
        }
        let mut m = FeatureMatrix::empty(header.iter().skip(3).map(String::from).collect());
        let mut row = Vec::with_capacity(m.n_cols());
        for (n, rec) in r.records().enumerate() {
            let rec = rec?;
            let err = |message: String| EwsError::Parse { path: path.into(), line: n + 2, message };
            let time: Seconds = rec[1].parse().map_err(|e| err(format!("time: {e}")))?;
            let label = match &rec[2] {
                "1" => true,
                "0" => false,
                other => return Err(err(format!("label {other:?}"))),
            };
            row.clear();
            for f in rec.iter().skip(3) {
                row.push(if f.is_empty() { f64::NAN } else { f.parse().map_err(|e| err(format!("value {f:?}: {e}")))? });
            }
            if row.len() != m.n_cols() {
                return Err(err("row width differs from header".into()));
            }
            m.push_row(&rec[0], time, label, &row);
        }
        Ok(m)
    }
}

/// Sidecar description of a persisted matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixSchema {
    pub format_version: u32,
    pub columns: Vec<ColumnInfo>,
    pub config_hash: String,
    pub n_rows: usize,
}

impl MatrixSchema {
    pub fn new(config: &FeatureConfig, n_rows: usize) -> Self {
        MatrixSchema { format_version: SCHEMA_VERSION, columns: feature_columns(config), config_hash: config.hash(), n_rows }
    }

    pub fn check(&self, matrix: &FeatureMatrix) -> Result<()> {
        let names: Vec<&str> = self.columns.iter().map(|c| c.name.as_str()).collect();
        if names != matrix.columns.iter().map(String::as_str).collect::<Vec<_>>() || self.n_rows != matrix.n_rows() {
            return Err(EwsError::SchemaMismatch("feature matrix does not match its schema".into()));
        }
        Ok(())
    }
}

/// Rows for grid points whose label is defined.
pub fn stay_matrix(stay: &GriddedStay, labels: &[Label], config: &FeatureConfig) -> Result<FeatureMatrix> {
    if labels.len() != stay.n_grid() {
        return Err(EwsError::SchemaMismatch(format!("{}: {} labels for {} grid points", stay.stay_id, labels.len(), stay.n_grid())));
    }
    let columns: Vec<String> = feature_columns(config).into_iter().map(|c| c.name).collect();
    let mut m = FeatureMatrix::empty(columns);
    if labels.iter().all(|l| *l == Label::Undefined) {
        return Ok(m);
    }
    let cols = stay_feature_columns(stay, config);
    let mut row = vec![0.0; cols.len()];
    for (i, l) in labels.iter().enumerate() {
        if let Some(y) = l.as_bool() {
            for (r, c) in row.iter_mut().zip(&cols) {
                *r = c[i];
            }
            m.push_row(&stay.stay_id, stay.grid_time(i), y, &row);
        }
    }
    Ok(m)
}

/// Concatenated matrix over stays, in input order. Stays are processed in parallel.
pub fn build_matrix(stays: &[(&GriddedStay, &[Label])], config: &FeatureConfig) -> Result<FeatureMatrix> {
    let parts = stays.par_iter().map(|(s, l)| stay_matrix(s, l, config)).collect::<Result<Vec<_>>>()?;
    let mut out = FeatureMatrix::empty(feature_columns(config).into_iter().map(|c| c.name).collect());
    for p in parts {
        out.append(p)?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::{RawMeasurement, GriddedStay};
    use std::collections::BTreeMap;

    fn toy_config() -> FeatureConfig {
        FeatureConfig::from_toml(
            "statics = [\"age\"]\n[[variables]]\nid = \"spo2\"\nbands = [[90.0, 94.0], [85.0, 89.0]]\n[[variables]]\nid = \"resp_rate\"\nintensity = false\n",
        )
        .unwrap()
    }

    fn toy_stay() -> GriddedStay {
        let mut rows = Vec::new();
        for k in 0..40 {
            rows.push(RawMeasurement { variable_id: "spo2".into(), time: k * 600, value: 86.0 + (k % 10) as f64 });
            if k % 3 == 0 {
                rows.push(RawMeasurement { variable_id: "resp_rate".into(), time: k * 600 + 60, value: 15.0 + k as f64 * 0.1 });
            }
        }
        let statics = BTreeMap::from([("age".to_string(), 64.0)]);
        GriddedStay::from_measurements("s1", statics, rows).unwrap()
    }

    #[test]
    fn hand_counted_columns() {
        // spo2: 1 + 10 + 3 + 2*2 = 18; resp_rate: 1 + 10 = 11; statics: 1
        let cols = feature_columns(&toy_config());
        assert_eq!(cols.len(), 30);
        assert_eq!(cols[0].name, "spo2__current");
        assert_eq!(cols[1].name, "spo2__mean_8h");
        assert_eq!(cols[6].name, "spo2__mean_stay");
        assert_eq!(cols[11].name, "spo2__time_to_last");
        assert_eq!(cols[14].name, "spo2__instab_L1_8h");
        assert_eq!(cols[17].name, "spo2__instab_L2_stay");
        assert_eq!(cols.last().unwrap().name, "static__age");
        let default = FeatureConfig::default();
        let expected: usize = default.variables.iter().map(|v| 1 + 10 + if v.intensity { 3 } else { 0 } + 2 * v.bands.len()).sum::<usize>() + 3;
        assert_eq!(feature_columns(&default).len(), expected);
    }

    #[test]
    fn undefined_labels_give_empty_matrix() {
        let s = toy_stay();
        let m = stay_matrix(&s, &vec![Label::Undefined; s.n_grid()], &toy_config()).unwrap();
        assert_eq!(m.n_rows(), 0);
        assert_eq!(m.n_cols(), 30);
    }

    #[test]
    fn deterministic_and_csv_round_trip() {
        let s = toy_stay();
        let labels: Vec<Label> = (0..s.n_grid()).map(|i| if i % 7 == 0 { Label::Undefined } else if i % 3 == 0 { Label::Positive } else { Label::Negative }).collect();
        let a = stay_matrix(&s, &labels, &toy_config()).unwrap();
        let b = stay_matrix(&s, &labels, &toy_config()).unwrap();
        let (mut ba, mut bb) = (Vec::new(), Vec::new());
        a.write_csv(&mut ba).unwrap();
        b.write_csv(&mut bb).unwrap();
        assert_eq!(ba, bb);
        let back = FeatureMatrix::read_csv(&ba[..], Path::new("m.csv")).unwrap();
        assert_eq!(back.n_rows(), a.n_rows());
        for (x, y) in back.values.iter().zip(&a.values) {
            assert!(x == y || (x.is_nan() && y.is_nan()));
        }
        MatrixSchema::new(&toy_config(), a.n_rows()).check(&back).unwrap();
    }

    #[test]
    fn truncation_reproduces_features() {
        let s = toy_stay();
        let cfg = toy_config();
        let full = stay_feature_columns(&s, &cfg);
        for i in [0, 5, 17, 40, s.n_grid() - 1] {
            let t = s.grid_time(i);
            let cut = s.truncated(t);
            let got = features_at(&cut, &cfg, cut.n_grid() - 1);
            for (j, g) in got.iter().enumerate() {
                let want = full[j][i];
                assert!(*g == want || (g.is_nan() && want.is_nan()), "t={t} col {j}: {g} vs {want}");
            }
        }
    }

    #[test]
    fn half_of_window_in_band() {
        let mut rows = Vec::new();
        for k in 0..=96 {
            rows.push(RawMeasurement { variable_id: "spo2".into(), time: k * 300, value: if k % 2 == 0 { 92.0 } else { 97.0 } });
        }
        let s = GriddedStay::from_measurements("b", BTreeMap::new(), rows).unwrap();
        let cfg = FeatureConfig::from_toml("[[variables]]\nid = \"spo2\"\nbands = [[90.0, 94.0]]\n").unwrap();
        let cols = feature_columns(&cfg);
        let j = cols.iter().position(|c| c.name == "spo2__instab_L1_8h").unwrap();
        assert_eq!(features_at(&s, &cfg, 96)[j], 0.5);
    }
}
