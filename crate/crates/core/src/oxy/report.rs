//! Bucketed accuracy report for PaO2 estimators, evaluated with SpO2 inputs.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::abga::{AbgaSample, InputMode};
use super::curve::ellis_pao2;
use super::mlp::MlpModel;
use crate::metrics::auroc;
use crate::pf::MAX_INVERTIBLE_SATURATION;
use crate::stats::{quantile_sorted, sorted_copy};

/// SpO2 buckets in percent, `[lo, hi)` except that 100 belongs to buckets ending at 100.
pub const SPO2_BUCKETS: &[(f64, f64)] = &[
    (0.0, 100.0),
    (0.0, 96.0),
    (96.0, 100.0),
    (90.0, 96.0),
    (85.0, 90.0),
    (80.0, 85.0),
    (75.0, 80.0),
    (60.0, 75.0),
];

pub const PF_FAILURE_THRESHOLD: f64 = 200.0;

pub fn in_bucket(spo2_pct: f64, (lo, hi): (f64, f64)) -> bool {
    spo2_pct >= lo && (spo2_pct < hi || (hi == 100.0 && spo2_pct == 100.0))
}

pub fn bucket_name((lo, hi): (f64, f64)) -> String {
    format!("{lo}-{hi}")
}

/// Curve inversion of the concurrent SpO2.
pub fn pnl_predict(sample: &AbgaSample) -> Option<f64> {
    let s = sample.saturation(InputMode::Prediction)?;
    ellis_pao2(s.clamp(1e-3, MAX_INVERTIBLE_SATURATION)).ok()
}

type Predictor<'a> = Box<dyn Fn(&AbgaSample) -> Option<f64> + Sync + 'a>;

pub struct NamedEstimator<'a> {
    pub name: String,
    pub predict: Predictor<'a>,
}

impl<'a> NamedEstimator<'a> {
    pub fn pnl() -> Self {
        NamedEstimator { name: "pnl".into(), predict: Box::new(pnl_predict) }
    }

    pub fn network(name: &str, model: &'a MlpModel) -> Self {
        NamedEstimator { name: name.into(), predict: Box::new(move |s| model.predict_sample(s)) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketRow {
    pub model: String,
    pub bucket: String,
    pub n: usize,
    pub median_abs_error: Option<f64>,
    pub q25_abs_error: Option<f64>,
    pub q75_abs_error: Option<f64>,
    /// Detection of true P/F <= 200 with the estimated P/F as (inverted) score.
    pub auroc_pf200: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pao2Report {
    pub rows: Vec<BucketRow>,
    /// Test samples without concurrent SpO2; excluded everywhere.
    pub n_without_spo2: usize,
}

impl Pao2Report {
    pub fn row(&self, model: &str, bucket: (f64, f64)) -> Option<&BucketRow> {
        let b = bucket_name(bucket);
        self.rows.iter().find(|r| r.model == model && r.bucket == b)
    }

    pub fn to_csv(&self) -> String {
        let fmt = |v: Option<f64>| v.map_or_else(|| "na".to_string(), |x| format!("{x:.4}"));
        let mut out = String::from("model,spo2_bucket,n,median_abs_error,q25_abs_error,q75_abs_error,auroc_pf200\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.model,
                r.bucket,
                r.n,
                fmt(r.median_abs_error),
                fmt(r.q25_abs_error),
                fmt(r.q75_abs_error),
                fmt(r.auroc_pf200)
            );
        }
        out
    }
}

/// Accuracy per SpO2 bucket for every estimator. Estimators see only what
/// [`InputMode::Prediction`] exposes.
pub fn evaluate_pao2_models(models: &[NamedEstimator<'_>], test: &[AbgaSample]) -> Pao2Report {
    let usable: Vec<&AbgaSample> = test.iter().filter(|s| s.spo2.is_some() && s.target().is_some()).collect();
    let n_without_spo2 = test.iter().filter(|s| s.spo2.is_none()).count();
    let mut rows = Vec::new();
    for m in models {
        let preds: Vec<Option<f64>> = usable.iter().map(|s| (m.predict)(s)).collect();
        for &bucket in SPO2_BUCKETS {
            let mut errors = Vec::new();
            let mut scores = Vec::new();
            let mut labels = Vec::new();
            for (s, p) in usable.iter().zip(&preds) {
                if !in_bucket(s.spo2.unwrap() * 100.0, bucket) {
                    continue;
                }
                let Some(p) = p else { continue };
                let truth = s.target().unwrap();
                errors.push((p - truth).abs());
                if let Some(fio2) = s.current.fio2.filter(|f| *f > 0.0) {
                    scores.push(-p / fio2);
                    labels.push(truth / fio2 <= PF_FAILURE_THRESHOLD);
                }
            }
            let sorted = sorted_copy(&errors);
            let q = |f: f64| quantile_sorted(&sorted, f);
            rows.push(BucketRow {
                model: m.name.clone(),
                bucket: bucket_name(bucket),
                n: errors.len(),
                median_abs_error: q(0.5),
                q25_abs_error: q(0.25),
                q75_abs_error: q(0.75),
                auroc_pf200: auroc(&scores, &labels).ok(),
            });
        }
    }
    Pao2Report { rows, n_without_spo2 }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oxy::abga::{synthetic_abga, AbgaSynthConfig};
    use crate::oxy::curve::severinghaus_sao2;

    #[test]
    fn bucket_membership() {
        let member: Vec<String> = SPO2_BUCKETS.iter().filter(|&&b| in_bucket(93.0, b)).map(|&b| bucket_name(b)).collect();
        assert_eq!(member, ["0-100", "0-96", "90-96"]);
        assert!(in_bucket(100.0, (96.0, 100.0)));
        assert!(!in_bucket(96.0, (90.0, 96.0)));
    }

    #[test]
    fn perfect_estimator() {
        let samples = synthetic_abga(1, 500, &AbgaSynthConfig::default());
        let truth = NamedEstimator { name: "truth".into(), predict: Box::new(|s: &AbgaSample| s.target()) };
        let r = evaluate_pao2_models(&[truth], &samples);
        for row in r.rows.iter().filter(|r| r.n > 0) {
            assert_eq!(row.median_abs_error, Some(0.0));
            if let Some(a) = row.auroc_pf200 {
                assert_eq!(a, 1.0);
            }
        }
        assert_eq!(r.row("truth", (0.0, 100.0)).unwrap().auroc_pf200, Some(1.0));
    }

    #[test]
    fn constant_estimator_has_chance_auroc() {
        let mut samples = synthetic_abga(2, 2000, &AbgaSynthConfig::default());
        for s in &mut samples {
            s.current.fio2 = Some(0.4);
        }
        let labels: Vec<bool> = samples.iter().map(|s| s.target().unwrap() / 0.4 <= 200.0).collect();
        let pos = labels.iter().filter(|&&l| l).count();
        assert!(pos > 500 && pos < 1500, "class balance {pos}");
        let c = NamedEstimator { name: "const".into(), predict: Box::new(|_: &AbgaSample| Some(80.0)) };
        let r = evaluate_pao2_models(&[c], &samples);
        let a = r.row("const", (0.0, 100.0)).unwrap().auroc_pf200.unwrap();
        assert!((a - 0.5).abs() <= 0.05);
    }

    #[test]
    fn evaluation_reads_spo2_not_sao2() {
        let mut samples = synthetic_abga(3, 10, &AbgaSynthConfig::default());
        for s in &mut samples {
            s.current.sao2 = Some(0.5);
            s.spo2 = Some(severinghaus_sao2(s.target().unwrap()).unwrap());
        }
        let r = evaluate_pao2_models(&[NamedEstimator::pnl()], &samples);
        assert!(r.row("pnl", (0.0, 100.0)).unwrap().median_abs_error.unwrap() < 1e-6);
    }

    #[test]
    fn empty_bucket_reported() {
        let r = evaluate_pao2_models(&[NamedEstimator::pnl()], &[]);
        assert_eq!(r.rows.len(), SPO2_BUCKETS.len());
        assert!(r.rows.iter().all(|r| r.n == 0 && r.median_abs_error.is_none()));
        assert!(r.to_csv().lines().nth(1).unwrap().ends_with(",0,na,na,na,na"));
    }
}
