//! Co-located resource throughput estimates and predictor features.
//!
//! A batch's co-location feature is either frozen at dispatch (static
//! snapshot) or smoothed with an EWMA that absorbs one observation each time
//! the batch's set of co-located peers changes. Observations are
//! event-triggered: how long a co-location lasted is deliberately not used.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::profile::Throughputs;
use crate::sim::BatchOutcome;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ColocationMode {
    #[default]
    Static,
    Ewma(f64),
}

impl ColocationMode {
    /// Smoothing factors used by the EWMA experiment.
    pub const ALPHA_GRID: [f64; 3] = [1.0 / 3.0, 0.5, 2.0 / 3.0];

    pub fn experiment_modes() -> Vec<ColocationMode> {
        std::iter::once(ColocationMode::Static)
            .chain(Self::ALPHA_GRID.iter().map(|&a| ColocationMode::Ewma(a)))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            ColocationMode::Ewma(a) if !(a > 0.0 && a <= 1.0) => Err(Error::InvalidInput(format!(
                "EWMA alpha {a} outside (0, 1]"
            ))),
            _ => Ok(()),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ColocationMode::Static => "static",
            ColocationMode::Ewma(_) => "ewma",
        }
    }

    /// Alpha for the CSV column; empty for static.
    pub fn alpha(&self) -> Option<f64> {
        match *self {
            ColocationMode::Static => None,
            ColocationMode::Ewma(a) => Some(a),
        }
    }
}

impl fmt::Display for ColocationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ColocationMode::Static => write!(f, "static"),
            ColocationMode::Ewma(a) => write!(f, "ewma({a:.4})"),
        }
    }
}

impl FromStr for ColocationMode {
    type Err = Error;

    /// Accepts `static`, `ewma:<alpha>` and fractions such as `ewma:1/3`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("static") {
            return Ok(ColocationMode::Static);
        }
        let alpha = s
            .strip_prefix("ewma:")
            .or_else(|| s.strip_prefix("ewma="))
            .ok_or_else(|| Error::InvalidInput(format!("unknown co-location mode `{s}`")))?;
        let alpha = parse_fraction(alpha)?;
        let mode = ColocationMode::Ewma(alpha);
        mode.validate()?;
        Ok(mode)
    }
}

fn parse_fraction(s: &str) -> Result<f64> {
    let bad = || Error::InvalidInput(format!("cannot parse `{s}` as a number"));
    match s.split_once('/') {
        Some((n, d)) => {
            let n: f64 = n.trim().parse().map_err(|_| bad())?;
            let d: f64 = d.trim().parse().map_err(|_| bad())?;
            Ok(n / d)
        }
        None => s.trim().parse().map_err(|_| bad()),
    }
}

/// Running estimate of a batch's co-located resource throughput.
#[derive(Debug, Clone, PartialEq)]
pub struct CoLocationEstimate {
    pub batch_id: u64,
    pub mode: ColocationMode,
    pub r_hat: Throughputs,
    pub n_observations: usize,
}

fn check_non_negative(x: Throughputs) -> Result<()> {
    if x.is_finite() && x.all_non_negative() {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!(
            "co-located throughput must be finite and non-negative, got {x:?}"
        )))
    }
}

impl CoLocationEstimate {
    /// Starts from the co-location snapshot at dispatch time (zero when the
    /// GPU was otherwise idle).
    pub fn new(batch_id: u64, mode: ColocationMode, colo_now: Throughputs) -> Result<Self> {
        mode.validate()?;
        check_non_negative(colo_now)?;
        Ok(CoLocationEstimate {
            batch_id,
            mode,
            r_hat: colo_now,
            n_observations: 1,
        })
    }

    /// Absorbs the co-located throughput after a peer arrived or departed.
    pub fn observe(&mut self, x_t: Throughputs) -> Result<()> {
        check_non_negative(x_t)?;
        if let ColocationMode::Ewma(alpha) = self.mode {
            self.r_hat = x_t.zip_with(self.r_hat, |x, r| alpha * x + (1.0 - alpha) * r);
            self.n_observations += 1;
        }
        Ok(())
    }

    /// Own throughputs followed by the co-location estimate.
    pub fn features(&self, own: Throughputs) -> [f64; 6] {
        let o = own.to_array();
        let c = self.r_hat.to_array();
        [o[0], o[1], o[2], c[0], c[1], c[2]]
    }
}

/// One predictor training/evaluation record.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub batch_id: u64,
    pub scenario: String,
    pub x: [f64; 6],
    /// Measured interference ratio.
    pub y: f64,
    pub mode: ColocationMode,
}

/// Replays a finished batch's co-location observations through an estimate
/// in `mode` and pairs the resulting features with its measured ratio.
pub fn finalize_features(outcome: &BatchOutcome, mode: ColocationMode) -> Result<[f64; 6]> {
    let mut obs = outcome.colo_observations.iter();
    let first = obs.next().copied().unwrap_or(Throughputs::ZERO);
    let mut est = CoLocationEstimate::new(outcome.batch_id, mode, first)?;
    for &x in obs {
        est.observe(x)?;
    }
    Ok(est.features(outcome.own))
}

pub fn sample_from_outcome(outcome: &BatchOutcome, mode: ColocationMode, scenario: &str) -> Result<Sample> {
    let x = finalize_features(outcome, mode)?;
    let y = outcome.interference_ratio;
    if !(y.is_finite() && y > 0.0) {
        return Err(Error::Invariant(format!(
            "batch {} has non-positive ratio {y}",
            outcome.batch_id
        )));
    }
    Ok(Sample {
        batch_id: outcome.batch_id,
        scenario: scenario.to_string(),
        x,
        y,
        mode,
    })
}

/// Samples for every outcome, in the outcomes' (completion) order.
pub fn samples_from_outcomes(outcomes: &[BatchOutcome], mode: ColocationMode, scenario: &str) -> Result<Vec<Sample>> {
    outcomes
        .iter()
        .map(|o| sample_from_outcome(o, mode, scenario))
        .collect()
}

#[derive(Serialize)]
struct SampleRow<'a> {
    batch_id: u64,
    scenario: &'a str,
    own_l2: f64,
    own_dram: f64,
    own_sm: f64,
    colo_l2: f64,
    colo_dram: f64,
    colo_sm: f64,
    y_ratio: f64,
    mode: &'a str,
    alpha: Option<f64>,
}

pub fn write_samples_csv(samples: &[Sample], writer: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for s in samples {
        w.serialize(SampleRow {
            batch_id: s.batch_id,
            scenario: &s.scenario,
            own_l2: s.x[0],
            own_dram: s.x[1],
            own_sm: s.x[2],
            colo_l2: s.x[3],
            colo_dram: s.x[4],
            colo_sm: s.x[5],
            y_ratio: s.y,
            mode: s.mode.name(),
            alpha: s.mode.alpha(),
        })?;
    }
    if samples.is_empty() {
        w.write_record([
            "batch_id", "scenario", "own_l2", "own_dram", "own_sm", "colo_l2", "colo_dram", "colo_sm", "y_ratio",
            "mode", "alpha",
        ])?;
    }
    w.flush().map_err(|e| Error::io("<sample writer>", e))?;
    Ok(())
}
