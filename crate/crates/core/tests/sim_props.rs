mod common;

use colosim::metrics::latency_percentile;
use colosim::presets::{heavy_pair_stress, symmetric_stress};
use colosim::{run_scenario, DeployedModel, InterferenceOracle, ScenarioSpec};
use common::{check_run_invariants, default_table, random_noiseless_scenario};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]
    #[test]
    fn noiseless_runs_conserve_work(seed in any::<u64>()) {
        let table = default_table();
        let spec = random_noiseless_scenario(&mut ChaCha8Rng::seed_from_u64(seed), &table);
        let run = run_scenario(&spec, &table).unwrap();
        if let Err(e) = check_run_invariants(&spec, &run) {
            prop_assert!(false, "{e}\n{spec:?}");
        }
    }
}

#[test]
fn noisy_runs_keep_bookkeeping_invariants() {
    let table = default_table();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..20 {
        let mut spec = random_noiseless_scenario(&mut rng, &table);
        spec.oracle = InterferenceOracle::default();
        let run = run_scenario(&spec, &table).unwrap();
        check_run_invariants(&spec, &run).unwrap();
    }
}

#[test]
fn runs_are_deterministic() {
    let table = default_table();
    let spec = heavy_pair_stress(&table, 4, 2.0).unwrap();
    let a = run_scenario(&spec, &table).unwrap();
    let b = run_scenario(&spec, &table).unwrap();
    assert_eq!(a.outcomes, b.outcomes);
    assert_eq!(a.requests, b.requests);
    assert_eq!(a.samples, b.samples);
    let c = run_scenario(&ScenarioSpec { seed: 5, ..spec }, &table).unwrap();
    assert_ne!(a.requests, c.requests);
}

#[test]
fn cap_one_never_interferes() {
    let table = default_table();
    let spec = ScenarioSpec {
        oracle: InterferenceOracle::noiseless(),
        ..symmetric_stress(&table, 4, 0.5, 1, 3, 3.0).unwrap()
    };
    let run = run_scenario(&spec, &table).unwrap();
    assert_eq!(run.max_running, 1);
    assert!(run.outcomes.iter().all(|o| o.interference_ratio == 1.0 && o.segments.len() == 1));
}

#[test]
fn heavy_pair_overlaps_almost_always() {
    let table = default_table();
    let run = run_scenario(&heavy_pair_stress(&table, 0, 3.0).unwrap(), &table).unwrap();
    let colocated = run.outcomes.iter().filter(|o| o.ever_colocated()).count();
    assert!(colocated as f64 > 0.95 * run.outcomes.len() as f64);
    assert!(run.outcomes.iter().any(|o| o.interference_ratio > 1.3));
}

#[test]
fn second_slot_lowers_tail_latency_under_symmetric_stress() {
    let table = default_table();
    for n in [2, 4] {
        let p99 = |cap| {
            let run = run_scenario(&symmetric_stress(&table, n, 0.95, cap, 1, 5.0).unwrap(), &table).unwrap();
            latency_percentile(&run.requests, 99.0, 1000.0).unwrap()
        };
        assert!(p99(2) <= p99(1));
    }
}

#[test]
fn unknown_model_is_rejected_before_running() {
    let table = default_table();
    let spec = ScenarioSpec::new("bad", 1.0, vec![DeployedModel::new("nope", 10.0)]);
    assert!(run_scenario(&spec, &table).is_err());
}
