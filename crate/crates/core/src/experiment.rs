//! The two prediction experiments: co-location feature modes (static vs.
//! EWMA) and offline vs. online learners under workload drift.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::colocation::{samples_from_outcomes, ColocationMode, Sample};
use crate::error::{Error, Result};
use crate::predict::{
    evaluate, fit_ols, EvalReport, LinearModel, Predictor, RlsState, SgdState, DEFAULT_RLS_DELTA,
    DEFAULT_RLS_LAMBDA, DEFAULT_SGD_ETA,
};
use crate::profile::ProfileTable;
use crate::sim::{run_scenario, ScenarioRun};
use crate::workload::{drift_scenarios, ScenarioSpec};

pub const DEFAULT_TRAIN_FRACTION: f64 = 0.75;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SplitKind {
    #[default]
    Chronological,
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Split {
    pub train_fraction: f64,
    pub kind: SplitKind,
    /// Only used by random splits.
    pub seed: u64,
}

impl Default for Split {
    fn default() -> Self {
        Split {
            train_fraction: DEFAULT_TRAIN_FRACTION,
            kind: SplitKind::Chronological,
            seed: 0,
        }
    }
}

impl Split {
    pub fn validate(&self) -> Result<()> {
        if self.train_fraction > 0.0 && self.train_fraction < 1.0 {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!(
                "train fraction {} outside (0, 1)",
                self.train_fraction
            )))
        }
    }

    /// Splits one chronologically ordered sample stream into train and test.
    pub fn apply(&self, samples: &[Sample]) -> Result<(Vec<Sample>, Vec<Sample>)> {
        self.validate()?;
        let n_train = (samples.len() as f64 * self.train_fraction).round() as usize;
        if n_train == 0 || n_train >= samples.len() {
            return Err(Error::InvalidInput(format!(
                "{} samples are too few to split at {}",
                samples.len(),
                self.train_fraction
            )));
        }
        let mut ordered = samples.to_vec();
        if self.kind == SplitKind::Random {
            ordered.shuffle(&mut ChaCha8Rng::seed_from_u64(self.seed));
        }
        let test = ordered.split_off(n_train);
        Ok((ordered, test))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModeReport {
    pub mode: ColocationMode,
    pub report: EvalReport,
}

/// Builds samples for every co-location mode from the same simulated runs,
/// splits each run separately, pools the splits, fits least squares on the
/// pooled training part and scores relative error on the pooled test part.
pub fn ewma_experiment(runs: &[ScenarioRun], modes: &[ColocationMode], split: Split) -> Result<Vec<ModeReport>> {
    if runs.is_empty() {
        return Err(Error::Empty("EWMA experiment without scenario runs"));
    }
    modes
        .iter()
        .map(|&mode| {
            let mut train = Vec::new();
            let mut test = Vec::new();
            for run in runs {
                let samples = samples_from_outcomes(&run.outcomes, mode, &run.scenario)?;
                let (tr, te) = split.apply(&samples)?;
                train.extend(tr);
                test.extend(te);
            }
            let model = fit_ols(&train)?;
            let report = evaluate(&mut Predictor::Offline(model), &test, false, "test")?;
            Ok(ModeReport {
                mode,
                report: EvalReport {
                    method: mode.to_string(),
                    ..report
                },
            })
        })
        .collect()
}

/// Simulates every scenario in `suite` and runs [`ewma_experiment`] on them.
pub fn run_ewma_experiment(
    suite: &[ScenarioSpec],
    table: &ProfileTable,
    modes: &[ColocationMode],
    split: Split,
) -> Result<Vec<ModeReport>> {
    let runs = suite
        .iter()
        .map(|s| run_scenario(s, table))
        .collect::<Result<Vec<_>>>()?;
    ewma_experiment(&runs, modes, split)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LearnerConfig {
    pub mode: ColocationMode,
    pub sgd_eta: f64,
    pub rls_lambda: f64,
    pub rls_delta: f64,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        LearnerConfig {
            mode: ColocationMode::Ewma(0.5),
            sgd_eta: DEFAULT_SGD_ETA,
            rls_lambda: DEFAULT_RLS_LAMBDA,
            rls_delta: DEFAULT_RLS_DELTA,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DriftReport {
    /// Least-squares fit on the training set shared by all three methods.
    pub warm_start: LinearModel,
    /// Dataset-major, then offline, sgd, rls.
    pub rows: Vec<EvalReport>,
}

impl DriftReport {
    pub fn mse(&self, dataset: &str, method: &str) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.dataset == dataset && r.method == method)
            .map(|r| r.mse)
    }
}

pub const DRIFT_METHODS: [&str; 3] = ["offline", "sgd", "rls"];

/// Fits the three learners on `training` and scores them on every test set.
/// Training rows are in-sample scores of the shared warm start; test rows
/// are prequential for the online learners, each starting from the warm
/// start.
pub fn drift_experiment(training: &[Sample], tests: &[(&str, &[Sample])], cfg: LearnerConfig) -> Result<DriftReport> {
    let warm = fit_ols(training)?;
    let sgd = SgdState::new(warm, cfg.sgd_eta)?;
    let rls = RlsState::from_training(training, cfg.rls_lambda, cfg.rls_delta)?;
    let fresh = || [Predictor::Offline(warm), Predictor::Sgd(sgd), Predictor::Rls(rls.clone())];

    let mut rows = Vec::new();
    for mut p in fresh() {
        let r = evaluate(&mut p, training, false, "training")?;
        rows.push(r);
    }
    for (name, samples) in tests {
        for mut p in fresh() {
            let online = !matches!(p, Predictor::Offline(_));
            rows.push(evaluate(&mut p, samples, online, name)?);
        }
    }
    Ok(DriftReport { warm_start: warm, rows })
}

/// Simulates the four drift datasets derived from `base` and runs
/// [`drift_experiment`] on them.
pub fn run_drift_experiment(base: &ScenarioSpec, table: &ProfileTable, cfg: LearnerConfig) -> Result<DriftReport> {
    let sets = drift_scenarios(base)?;
    let mut data = Vec::new();
    for (name, spec) in sets.named() {
        let run = run_scenario(spec, table)?;
        data.push((name, samples_from_outcomes(&run.outcomes, cfg.mode, &run.scenario)?));
    }
    let (training, tests) = data.split_first().expect("four datasets");
    let tests: Vec<(&str, &[Sample])> = tests.iter().map(|(n, s)| (*n, s.as_slice())).collect();
    drift_experiment(&training.1, &tests, cfg)
}
