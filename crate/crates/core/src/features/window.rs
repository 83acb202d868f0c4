//! Window statistics: summaries, measurement intensity and instability.

use super::config::Band;
use crate::{Seconds, HOUR};

/// Summary of the defined values in a window; NaN where undefined.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
    /// Least-squares slope in value units per hour.
    pub trend: f64,
    pub min: f64,
    pub max: f64,
}

impl Summary {
    pub const MISSING: Summary = Summary { mean: f64::NAN, std: f64::NAN, trend: f64::NAN, min: f64::NAN, max: f64::NAN };

    pub fn as_array(&self) -> [f64; 5] {
        [self.mean, self.std, self.trend, self.min, self.max]
    }
}

pub const SUMMARY_NAMES: [&str; 5] = ["mean", "std", "trend", "min", "max"];

fn hours(t: Seconds) -> f64 {
    t as f64 / HOUR as f64
}

/// Summary of `(time, value)` points. Standard deviation is population-style.
pub fn summarize(points: &[(Seconds, f64)]) -> Summary {
    if points.is_empty() {
        return Summary::MISSING;
    }
    let n = points.len() as f64;
    let mean = points.iter().map(|p| p.1).sum::<f64>() / n;
    let mean_t = points.iter().map(|p| hours(p.0)).sum::<f64>() / n;
    let (mut m2, mut ctv, mut m2t) = (0.0, 0.0, 0.0);
    let (mut min, mut max) = (f64::INFINITY, f64::NEG_INFINITY);
    for &(t, v) in points {
        let dv = v - mean;
        let dt = hours(t) - mean_t;
        m2 += dv * dv;
        ctv += dt * dv;
        m2t += dt * dt;
        min = min.min(v);
        max = max.max(v);
    }
    let trend = if points.len() >= 2 && m2t > 0.0 { ctv / m2t } else { f64::NAN };
    Summary { mean, std: (m2 / n).sqrt(), trend, min, max }
}

/// Running summary over an expanding window (bivariate Welford updates).
#[derive(Debug, Clone, Copy)]
pub struct Expanding {
    n: f64,
    mean_t: f64,
    mean_v: f64,
    m2_v: f64,
    m2_t: f64,
    c_tv: f64,
    min: f64,
    max: f64,
}

impl Default for Expanding {
    fn default() -> Self {
        Expanding { n: 0.0, mean_t: 0.0, mean_v: 0.0, m2_v: 0.0, m2_t: 0.0, c_tv: 0.0, min: f64::INFINITY, max: f64::NEG_INFINITY }
    }
}

impl Expanding {
    pub fn push(&mut self, t: Seconds, v: f64) {
        self.n += 1.0;
        let th = hours(t);
        let dt = th - self.mean_t;
        let dv = v - self.mean_v;
        self.mean_t += dt / self.n;
        self.mean_v += dv / self.n;
        self.m2_v += dv * (v - self.mean_v);
        self.m2_t += dt * (th - self.mean_t);
        self.c_tv += dt * (v - self.mean_v);
        self.min = self.min.min(v);
        self.max = self.max.max(v);
    }

    pub fn summary(&self) -> Summary {
        if self.n == 0.0 {
            return Summary::MISSING;
        }
        let trend = if self.n >= 2.0 && self.m2_t > 0.0 { self.c_tv / self.m2_t } else { f64::NAN };
        Summary { mean: self.mean_v, std: (self.m2_v / self.n).max(0.0).sqrt(), trend, min: self.min, max: self.max }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Intensity {
    /// Seconds since the last raw measurement; NaN if none yet.
    pub time_to_last: f64,
    /// Measurements per hour in `(t - window, t]`.
    pub density_window: f64,
    /// Measurements per hour in `[0, t]`, over `max(t, grid_step)`.
    pub density_stay: f64,
}

/// Intensity from sorted raw measurement times.
pub fn intensity(times: &[Seconds], t: Seconds, window: Seconds, grid_step: Seconds) -> Intensity {
    let upto = times.partition_point(|&x| x <= t);
    let from = times.partition_point(|&x| x <= t - window);
    let time_to_last = if upto == 0 { f64::NAN } else { (t - times[upto - 1]) as f64 };
    Intensity {
        time_to_last,
        density_window: (upto - from) as f64 / hours(window),
        density_stay: upto as f64 / hours(t.max(grid_step)),
    }
}

/// Fraction of defined values falling in each band; NaN without defined values.
pub fn instability(values: &[Option<f64>], bands: &[Band]) -> Vec<f64> {
    let defined: Vec<f64> = values.iter().flatten().copied().collect();
    bands
        .iter()
        .map(|b| {
            if defined.is_empty() {
                f64::NAN
            } else {
                defined.iter().filter(|&&v| b.contains(v)).count() as f64 / defined.len() as f64
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;
    use rand::Rng;

    /// Closed-form sums, independent of the centred computation.
    fn naive(points: &[(Seconds, f64)]) -> [f64; 5] {
        let n = points.len() as f64;
        let (mut st, mut sv, mut stt, mut stv, mut svv) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for &(t, v) in points {
            let t = t as f64 / 3600.0;
            st += t;
            sv += v;
            stt += t * t;
            stv += t * v;
            svv += v * v;
        }
        let mean = sv / n;
        let var = svv / n - mean * mean;
        let slope = (n * stv - st * sv) / (n * stt - st * st);
        let min = points.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
        let max = points.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
        [mean, var.max(0.0).sqrt(), slope, min, max]
    }

    #[test]
    fn linear_example() {
        let s = summarize(&[(0, 1.0), (300, 2.0), (600, 3.0)]);
        assert_eq!((s.mean, s.min, s.max), (2.0, 1.0, 3.0));
        assert!((s.trend - 12.0).abs() < 1e-12);
    }

    #[test]
    fn single_value() {
        let s = summarize(&[(900, 7.0)]);
        assert_eq!((s.mean, s.std, s.min, s.max), (7.0, 0.0, 7.0, 7.0));
        assert!(s.trend.is_nan());
        assert!(summarize(&[]).mean.is_nan());
    }

    #[test]
    fn matches_naive_and_expanding() {
        let mut rng = stream_rng(3, "summary", 0);
        for _ in 0..50 {
            let mut pts: Vec<(Seconds, f64)> = Vec::new();
            for i in 0..100 {
                if rng.random_bool(0.8) {
                    pts.push((i * 300, rng.random_range(50.0..100.0)));
                }
            }
            let a = summarize(&pts).as_array();
            let b = naive(&pts);
            let mut e = Expanding::default();
            for &(t, v) in &pts {
                e.push(t, v);
            }
            let c = e.summary().as_array();
            for k in 0..5 {
                assert!((a[k] - b[k]).abs() < 1e-9, "{k}: {} vs {}", a[k], b[k]);
                assert!((a[k] - c[k]).abs() < 1e-9, "{k}: {} vs {}", a[k], c[k]);
            }
        }
    }

    #[test]
    fn intensity_cases() {
        let i = intensity(&[0, 3000, 3600 * 5 + 3000], 6 * 3600, 8 * 3600, 300);
        assert_eq!(i.time_to_last, 600.0);
        let four = [3600, 7200, 10800, 14400];
        assert_eq!(intensity(&four, 8 * 3600, 8 * 3600, 300).density_window, 0.5);
        let none = intensity(&[], 3600, 8 * 3600, 300);
        assert!(none.time_to_last.is_nan());
        assert_eq!((none.density_window, none.density_stay), (0.0, 0.0));
        // window is half-open at its start
        assert_eq!(intensity(&[0], 8 * 3600, 8 * 3600, 300).density_window, 0.0);
    }

    #[test]
    fn instability_fractions() {
        let band = [Band { lo: 90.0, hi: 94.0 }];
        let vals: Vec<Option<f64>> = (0..96).map(|i| Some(if i % 2 == 0 { 92.0 } else { 97.0 })).collect();
        assert_eq!(instability(&vals, &band), vec![0.5]);
        assert_eq!(instability(&[Some(99.0), None], &band), vec![0.0]);
        assert!(instability(&[None], &band)[0].is_nan());
        assert_eq!(instability(&[Some(94.0), Some(90.0)], &band), vec![1.0]);
    }

    #[test]
    fn band_fractions_sum_to_one_with_remainder() {
        let bands = [Band { lo: 0.0, hi: 1.0 }, Band { lo: 2.0, hi: 3.0 }, Band { lo: 5.0, hi: 9.0 }];
        let mut rng = stream_rng(4, "bands", 0);
        for _ in 0..100 {
            let vals: Vec<Option<f64>> = (0..50).map(|_| Some(rng.random_range(0..12) as f64 * 0.75)).collect();
            let f = instability(&vals, &bands);
            let outside = vals.iter().flatten().filter(|&&v| !bands.iter().any(|b| b.contains(v))).count() as f64 / 50.0;
            assert!((f.iter().sum::<f64>() + outside - 1.0).abs() < 1e-12);
        }
    }
}
