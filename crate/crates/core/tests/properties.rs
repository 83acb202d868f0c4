use std::collections::{BTreeMap, BTreeSet};

use ews_core::alarm::{event_pr, silence};
use ews_core::cohort::{make_splits, resample, GriddedStay, RawMeasurement};
use ews_core::labeler::{annotate_state, build_events, make_labels, FailureEvent, Label, LabelerConfig, StayEndPolicy};
use ews_core::oxy::{ellis_pao2, example_weight, severinghaus_sao2, SaturationCounts};
use ews_core::pf::{estimate_fio2, Fio2Table, OxygenationState};
use ews_core::{Seconds, HOUR, MINUTE};
use proptest::prelude::*;

fn measurements() -> impl Strategy<Value = Vec<RawMeasurement>> {
    prop::collection::vec((0..3usize, 0..20_000i64, 50.0..100.0f64), 1..60).prop_map(|v| {
        v.into_iter()
            .map(|(k, t, x)| RawMeasurement { variable_id: ["spo2", "hr", "fio2"][k].into(), time: t, value: x })
            .collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn resampling_is_idempotent(ms in measurements()) {
        let stay = GriddedStay::from_measurements("s", BTreeMap::new(), ms).unwrap();
        let again = resample(&stay, stay.grid_step).unwrap();
        prop_assert_eq!(&again, &stay);
    }

    #[test]
    fn grid_value_is_last_sample_at_or_before(ms in measurements()) {
        let stay = GriddedStay::from_measurements("s", BTreeMap::new(), ms).unwrap();
        for (var, ch) in &stay.gridded {
            for (i, v) in ch.values.iter().enumerate() {
                let t = stay.grid_time(i);
                let expect = stay.raw_samples(var).iter().rev().find(|s| s.time <= t).map(|s| s.value);
                prop_assert_eq!(*v, expect);
            }
        }
    }

    #[test]
    fn splits_partition_the_cohort(n in 3usize..80, seed in 0u64..1000) {
        let ids: Vec<String> = (0..n).map(|i| format!("stay{i}")).collect();
        for split in make_splits(&ids, 3, 0.6, 0.2, seed).unwrap() {
            prop_assert!(split.train.is_disjoint(&split.validation));
            prop_assert!(split.train.is_disjoint(&split.test));
            prop_assert!(split.validation.is_disjoint(&split.test));
            let all: BTreeSet<String> = split.train.iter().chain(&split.validation).chain(&split.test).cloned().collect();
            prop_assert_eq!(all.len(), n);
        }
    }

    #[test]
    fn example_weights_lie_in_unit_interval(sats in prop::collection::vec(0.5..1.0f64, 1..200), gamma in 0.0..2.0f64) {
        let counts = SaturationCounts::from_values(sats.iter().copied());
        for &s in &sats {
            let w = example_weight(s, &counts, Some(gamma));
            prop_assert!(w > 0.0 && w <= 1.0);
        }
    }

    #[test]
    fn curve_is_monotone_and_inverts(a in 1.0..600.0f64, b in 1.0..600.0f64) {
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        prop_assert!(severinghaus_sao2(lo).unwrap() <= severinghaus_sao2(hi).unwrap());
        let back = ellis_pao2(severinghaus_sao2(lo).unwrap()).unwrap();
        prop_assert!((back - lo).abs() < 1e-6 * lo.max(1.0));
    }

    #[test]
    fn supplemental_fio2_is_monotone_in_flow(a in 0.0..30.0f64, b in 0.0..30.0f64) {
        let table = Fio2Table::default();
        let f = |l: f64| estimate_fio2(&OxygenationState { ventilated: false, ventilator_fio2: None, supplemental_o2: Some(l) }, &table).fio2;
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        prop_assert!(f(lo) <= f(hi));
        prop_assert!((0.21..=0.75).contains(&f(hi)));
    }

    #[test]
    fn silenced_alarms_keep_their_gap(scores in prop::collection::vec(prop::option::weighted(0.9, 0.0..1.0f64), 0..400), th in 0.0..1.0f64) {
        let times: Vec<Seconds> = (0..scores.len() as i64).map(|i| i * 5 * MINUTE).collect();
        let a = silence("s", &times, &scores, th, 30 * MINUTE);
        prop_assert!(a.times.windows(2).all(|w| w[1] - w[0] >= 30 * MINUTE));
        for t in &a.times {
            let i = (*t / (5 * MINUTE)) as usize;
            prop_assert!(scores[i].is_some_and(|s| s >= th));
        }
    }

    #[test]
    fn lower_threshold_never_reduces_alarm_count(scores in prop::collection::vec(0.0..1.0f64, 0..400), a in 0.0..1.0f64, b in 0.0..1.0f64) {
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        let times: Vec<Seconds> = (0..scores.len() as i64).map(|i| i * 5 * MINUTE).collect();
        let s: Vec<Option<f64>> = scores.into_iter().map(Some).collect();
        prop_assert!(silence("s", &times, &s, lo, 30 * MINUTE).times.len() >= silence("s", &times, &s, hi, 30 * MINUTE).times.len());
    }

    #[test]
    fn precision_and_recall_are_fractions(alarms in prop::collection::vec(0..100_000i64, 0..30), starts in prop::collection::vec(0..100_000i64, 0..10)) {
        let events: Vec<FailureEvent> = starts.iter().map(|&s| FailureEvent::new(s, s + 3 * HOUR)).collect();
        let c = event_pr(&alarms, &events, 8 * HOUR);
        for v in [c.precision(), c.recall()].into_iter().flatten() {
            prop_assert!((0.0..=1.0).contains(&v));
        }
    }

    #[test]
    fn events_are_long_separated_and_labels_consistent(cond in prop::collection::vec(prop::option::weighted(0.95, any::<bool>()), 0..300)) {
        let cfg = LabelerConfig::default();
        let step = 300;
        let flags = annotate_state(&cond, (cfg.window_s / step) as usize, StayEndPolicy::RemainingPoints);
        let events = build_events(&flags, step, &cfg);
        prop_assert!(events.iter().all(|e| e.duration() > cfg.min_duration_s));
        prop_assert!(events.windows(2).all(|w| w[1].start_s - w[0].end_s > cfg.merge_gap_s));
        let labels = make_labels(&events, cond.len(), step, cfg.horizon_s);
        for (i, l) in labels.iter().enumerate() {
            let t = i as Seconds * step;
            prop_assert_eq!(*l == Label::Undefined, events.iter().any(|e| e.contains(t)));
        }
    }
}
