//! Discrete-event simulation of a multi-model GPU inference node.
//!
//! Requests arrive per model as Poisson streams, are grouped by a dynamic
//! batcher, and execute on a simulated GPU that admits a bounded number of
//! concurrent batches. Co-located batches slow each other down through an
//! explicit interference oracle, integrated piecewise over every co-location
//! segment. Each finished batch yields a prediction sample whose co-location
//! features are computed either from the dispatch-time snapshot or from an
//! EWMA over the co-location changes the batch observed. The [`predict`]
//! module fits linear interference predictors offline (OLS) or online (SGD,
//! RLS), and [`experiment`] wires everything into the two reproducible
//! experiments shipped with the CLI.

pub mod batcher;
pub mod colocation;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod oracle;
pub mod predict;
pub mod presets;
pub mod profile;
pub mod sim;
pub mod workload;

pub use colocation::{CoLocationEstimate, ColocationMode, Sample};
pub use error::{Error, Result};
pub use oracle::InterferenceOracle;
pub use predict::{EvalReport, LinearModel, Predictor, RlsState, SgdState};
pub use profile::{ModelProfile, ProfileTable, Throughputs};
pub use sim::{run_scenario, BatchOutcome, ScenarioRun};
pub use workload::{DeployedModel, RequestEvent, ScenarioSpec};
