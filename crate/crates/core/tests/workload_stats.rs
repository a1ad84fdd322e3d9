mod common;

use std::collections::HashSet;

use colosim::presets::drift_base;
use colosim::workload::{
    drift_scenarios, generate_arrivals, poisson_arrival_times, LOAD_SHIFT_FACTORS, UNION_RATE_SCALE,
};
use colosim::{DeployedModel, ScenarioSpec};
use common::default_table;
use proptest::prelude::*;

#[test]
fn exponential_gap_statistics() {
    for seed in 0..20 {
        let times = poisson_arrival_times("m", 100.0, 100_000.0, seed);
        let gaps: Vec<f64> = std::iter::once(times[0])
            .chain(times.windows(2).map(|w| w[1] - w[0]))
            .collect();
        let n = gaps.len() as f64;
        let mean = gaps.iter().sum::<f64>() / n;
        let sd = (gaps.iter().map(|g| (g - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        assert!((mean - 10.0).abs() < 0.5, "seed {seed}: mean gap {mean}");
        assert!((sd / mean - 1.0).abs() < 0.1, "seed {seed}: cv {}", sd / mean);
    }
}

#[test]
fn event_counts_concentrate() {
    let (rate, duration_s) = (50.0, 40.0);
    let expect = rate * duration_s;
    let counts: Vec<f64> = (0..20)
        .map(|seed| poisson_arrival_times("m", rate, duration_s * 1000.0, seed).len() as f64)
        .collect();
    let mean = counts.iter().sum::<f64>() / counts.len() as f64;
    assert!((mean - expect).abs() < 3.0 * expect.sqrt());
    for c in counts {
        assert!((c - expect).abs() < 5.0 * expect.sqrt());
    }
}

#[test]
fn adding_a_model_leaves_other_traces_alone() {
    let table = default_table();
    let one = ScenarioSpec {
        seed: 3,
        ..ScenarioSpec::new("one", 2.0, vec![DeployedModel::new("resnet50", 300.0)])
    };
    let mut two = one.clone();
    two.deployed.push(DeployedModel::new("vgg19", 200.0));
    let times = |spec: &ScenarioSpec| -> Vec<f64> {
        generate_arrivals(spec, &spec.resolve(&table).unwrap())
            .into_iter()
            .filter(|e| e.model_id == "resnet50")
            .map(|e| e.arrival_time_ms)
            .collect()
    };
    assert_eq!(times(&one), times(&two));
}

#[test]
fn merged_trace_is_sorted_and_deterministic() {
    let table = default_table();
    let spec = drift_base(&table, 7, 3.0).unwrap();
    let resolved = spec.resolve(&table).unwrap();
    let a = generate_arrivals(&spec, &resolved);
    assert_eq!(a, generate_arrivals(&spec, &resolved));
    for w in a.windows(2) {
        assert!(w[0].arrival_time_ms < w[1].arrival_time_ms || w[0].request_id < w[1].request_id);
        assert!(w[0].arrival_time_ms <= w[1].arrival_time_ms);
    }
    let ids: HashSet<u64> = a.iter().map(|e| e.request_id).collect();
    assert_eq!(ids.len(), a.len());
    for m in spec.model_ids() {
        let ts: Vec<f64> = a.iter().filter(|e| e.model_id == m).map(|e| e.arrival_time_ms).collect();
        assert!(ts.windows(2).all(|w| w[0] < w[1]));
    }
}

#[test]
fn drift_sets_for_six_archetypes() {
    let table = default_table();
    let base = drift_base(&table, 0, 1.0).unwrap();
    let d = drift_scenarios(&base).unwrap();
    assert_eq!(d.training.deployed.len(), 3);
    assert_eq!(d.unseen_models.deployed.len(), 3);
    assert_eq!(d.all_models.deployed.len(), 6);
    assert_eq!(d.load_shift.model_ids(), d.training.model_ids());
}

proptest! {
    #[test]
    fn drift_set_algebra(n in 4usize..10, rates in prop::collection::vec(0.0..500.0f64, 10)) {
        let deployed = (0..n).map(|i| DeployedModel::new(&format!("m{i}"), rates[i])).collect();
        let base = ScenarioSpec::new("base", 1.0, deployed);
        let d = drift_scenarios(&base).unwrap();
        let s1: HashSet<&str> = d.training.model_ids().into_iter().collect();
        let s2: HashSet<&str> = d.unseen_models.model_ids().into_iter().collect();
        let all: HashSet<&str> = d.all_models.model_ids().into_iter().collect();
        prop_assert!(!s1.is_empty() && !s2.is_empty());
        prop_assert!(s1.is_disjoint(&s2));
        prop_assert!(s1.len() < n);
        prop_assert_eq!(&all, &s1.union(&s2).copied().collect());
        prop_assert_eq!(all.len(), n);
        prop_assert_eq!(d.load_shift.model_ids(), d.training.model_ids());
        for (t, s) in d.training.deployed.iter().zip(&d.load_shift.deployed) {
            let f = s.arrival_rate_rps / t.arrival_rate_rps;
            if t.arrival_rate_rps > 0.0 {
                prop_assert!(!(0.5..=2.0).contains(&f));
                prop_assert!(LOAD_SHIFT_FACTORS.iter().any(|x| (x - f).abs() < 1e-12));
            }
        }
        for (b, u) in base.deployed.iter().zip(&d.all_models.deployed) {
            prop_assert_eq!(u.arrival_rate_rps, b.arrival_rate_rps * UNION_RATE_SCALE);
        }
        let seeds: HashSet<u64> = d.named().iter().map(|(_, s)| s.seed).collect();
        prop_assert_eq!(seeds.len(), 4);
    }
}

#[test]
fn drift_needs_four_models() {
    let deployed = (0..3).map(|i| DeployedModel::new(&format!("m{i}"), 1.0)).collect();
    assert!(drift_scenarios(&ScenarioSpec::new("small", 1.0, deployed)).is_err());
}

#[test]
fn scenario_toml_round_trip() {
    let table = default_table();
    let spec = drift_base(&table, 9, 12.5).unwrap();
    let text = spec.to_toml_string().unwrap();
    assert_eq!(ScenarioSpec::from_toml_str(&text).unwrap(), spec);
}
