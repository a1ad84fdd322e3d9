//! Ready-made scenarios for the bundled experiments, built against the
//! default synthetic archetypes.

use crate::colocation::ColocationMode;
use crate::error::Result;
use crate::profile::ProfileTable;
use crate::workload::{rate_for_utilization, DeployedModel, ScenarioSpec};

pub const LIGHT_MODEL: &str = "resnet50";
pub const HEAVY_PAIR: [&str; 2] = ["roberta-b", "convnext-b"];
/// Deployment order for the drift base: the first half becomes the training
/// set, the second half the unseen models.
pub const DRIFT_ORDER: [&str; 6] = ["resnet50", "yolov8n", "vgg19", "roberta-b", "vit-b-16", "convnext-b"];

/// `n_tasks` independent tasks sharing the lightweight profile, with a total
/// offered load of `rho` times the single-stream capacity at full batches.
pub fn symmetric_stress(
    table: &ProfileTable,
    n_tasks: usize,
    rho: f64,
    concurrency_cap: usize,
    seed: u64,
    duration_s: f64,
) -> Result<ScenarioSpec> {
    let max_bs = table.max_batch_size();
    let total = rate_for_utilization(table, LIGHT_MODEL, rho, max_bs)?;
    let deployed = (0..n_tasks)
        .map(|i| DeployedModel::task(&format!("task{i}"), LIGHT_MODEL, total / n_tasks as f64))
        .collect();
    Ok(ScenarioSpec {
        concurrency_cap,
        seed,
        ..ScenarioSpec::new(&format!("stress-{n_tasks}x{LIGHT_MODEL}-cap{concurrency_cap}"), duration_s, deployed)
    })
}

/// The two heavy archetypes, each offered enough load that both are almost
/// always executing together.
pub fn heavy_pair_stress(table: &ProfileTable, seed: u64, duration_s: f64) -> Result<ScenarioSpec> {
    let max_bs = table.max_batch_size();
    let deployed = HEAVY_PAIR
        .iter()
        .map(|m| Ok(DeployedModel::new(m, rate_for_utilization(table, m, 1.2, max_bs)?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(ScenarioSpec {
        seed,
        ..ScenarioSpec::new("heavy-pair-stress", duration_s, deployed)
    })
}

/// Scenarios with short batches and frequent arrivals, varying in deployed
/// models and load intensity.
pub fn high_churn_suite(table: &ProfileTable, seed: u64, duration_s: f64) -> Result<Vec<ScenarioSpec>> {
    let mixes: [(&str, &[&str], f64); 3] = [
        ("churn-mixed", &["resnet50", "yolov8n", "roberta-b", "vgg19"], 1.6),
        ("churn-heavy", &["vit-b-16", "convnext-b", "yolov8n"], 1.4),
        ("churn-all", &["resnet50", "yolov8n", "vgg19", "roberta-b", "vit-b-16", "convnext-b"], 1.8),
    ];
    mixes
        .iter()
        .enumerate()
        .map(|(i, (name, models, rho))| {
            let deployed = models
                .iter()
                .map(|m| {
                    let rate = rate_for_utilization(table, m, rho / models.len() as f64, 4)?;
                    Ok(DeployedModel::new(m, rate))
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(ScenarioSpec {
                seed: seed.wrapping_mul(31).wrapping_add(i as u64),
                colocation_mode: ColocationMode::Ewma(0.5),
                ..ScenarioSpec::new(name, duration_s, deployed)
            })
        })
        .collect()
}

/// Per-model utilization at batch size 4 for the training half and the
/// unseen half of [`DRIFT_ORDER`].
pub const DRIFT_LOAD: [f64; 2] = [0.15, 0.3];

/// Six models in [`DRIFT_ORDER`], each offered a moderate share of capacity;
/// the unseen half runs busier than the training half.
pub fn drift_base(table: &ProfileTable, seed: u64, duration_s: f64) -> Result<ScenarioSpec> {
    let half = DRIFT_ORDER.len() / 2;
    let deployed = DRIFT_ORDER
        .iter()
        .enumerate()
        .map(|(i, m)| {
            let rho = DRIFT_LOAD[usize::from(i >= half)];
            Ok(DeployedModel::new(m, rate_for_utilization(table, m, rho, 4)?))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ScenarioSpec {
        seed,
        colocation_mode: ColocationMode::Ewma(0.5),
        ..ScenarioSpec::new("drift", duration_s, deployed)
    })
}
