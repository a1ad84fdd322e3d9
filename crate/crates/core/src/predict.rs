//! Linear interference predictor `y = w.x + b` with three training regimes:
//! offline least squares, online SGD and online recursive least squares.

use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector, SMatrix, SVector};
use serde::{Deserialize, Serialize};

use crate::colocation::Sample;
use crate::error::{Error, Result};
use crate::metrics::percentile_sorted;

pub const N_FEATURES: usize = 6;
const N_PARAMS: usize = N_FEATURES + 1;

type ParamVec = SVector<f64, N_PARAMS>;
type ParamMat = SMatrix<f64, N_PARAMS, N_PARAMS>;

pub const DEFAULT_SGD_ETA: f64 = 0.01;
pub const DEFAULT_RLS_LAMBDA: f64 = 0.99;
pub const DEFAULT_RLS_DELTA: f64 = 100.0;
pub const DEFAULT_RIDGE: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LinearModel {
    pub w: [f64; N_FEATURES],
    pub b: f64,
}

impl LinearModel {
    pub fn new(w: [f64; N_FEATURES], b: f64) -> Self {
        LinearModel { w, b }
    }

    pub fn predict(&self, x: &[f64; N_FEATURES]) -> f64 {
        self.w.iter().zip(x).map(|(w, x)| w * x).sum::<f64>() + self.b
    }

    pub fn is_finite(&self) -> bool {
        self.b.is_finite() && self.w.iter().all(|v| v.is_finite())
    }

    fn params(&self) -> ParamVec {
        let mut p = ParamVec::zeros();
        p.fixed_rows_mut::<N_FEATURES>(0).copy_from_slice(&self.w);
        p[N_FEATURES] = self.b;
        p
    }

    fn from_params(p: &ParamVec) -> Self {
        let mut w = [0.0; N_FEATURES];
        w.copy_from_slice(p.fixed_rows::<N_FEATURES>(0).as_slice());
        LinearModel { w, b: p[N_FEATURES] }
    }

    pub fn to_toml_string(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_toml_string()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: LinearModel = toml::from_str(&text)?;
        if !m.is_finite() {
            return Err(Error::InvalidInput(format!("{}: non-finite parameters", path.display())));
        }
        Ok(m)
    }
}

/// `[x; 1]`
fn augmented(x: &[f64; N_FEATURES]) -> ParamVec {
    let mut z = ParamVec::from_element(1.0);
    z.fixed_rows_mut::<N_FEATURES>(0).copy_from_slice(x);
    z
}

fn check_sample(s: &Sample) -> Result<()> {
    if s.y.is_finite() && s.x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("batch {}: non-finite sample", s.batch_id)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OlsOptions {
    /// Ridge strength used when the design matrix is rank deficient; `None`
    /// turns rank deficiency into an error.
    pub ridge_fallback: Option<f64>,
}

impl Default for OlsOptions {
    fn default() -> Self {
        OlsOptions {
            ridge_fallback: Some(DEFAULT_RIDGE),
        }
    }
}

pub fn fit_ols(samples: &[Sample]) -> Result<LinearModel> {
    fit_ols_with(samples, OlsOptions::default())
}

/// Least squares through a QR factorization of the design matrix with an
/// intercept column.
pub fn fit_ols_with(samples: &[Sample], opts: OlsOptions) -> Result<LinearModel> {
    if samples.len() < N_PARAMS {
        return Err(Error::InvalidInput(format!(
            "least squares needs at least {N_PARAMS} samples, got {}",
            samples.len()
        )));
    }
    samples.iter().try_for_each(check_sample)?;
    let n = samples.len();
    let z = DMatrix::from_fn(n, N_PARAMS, |i, j| if j < N_FEATURES { samples[i].x[j] } else { 1.0 });
    let y = DVector::from_iterator(n, samples.iter().map(|s| s.y));

    let qr = z.clone().qr();
    let r = qr.r();
    let diag_max = r.diagonal().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let rank = r
        .diagonal()
        .iter()
        .filter(|v| v.abs() > 1e-10 * diag_max.max(f64::MIN_POSITIVE))
        .count();
    let params = if rank == N_PARAMS {
        let qty = qr.q().transpose() * &y;
        r.solve_upper_triangular(&qty)
            .ok_or(Error::RankDeficient { rank, cols: N_PARAMS })?
    } else {
        let Some(ridge) = opts.ridge_fallback else {
            return Err(Error::RankDeficient { rank, cols: N_PARAMS });
        };
        log::debug!("design matrix rank {rank}/{N_PARAMS}; ridge fallback {ridge}");
        let mut gram = z.transpose() * &z;
        for i in 0..N_PARAMS {
            gram[(i, i)] += ridge;
        }
        gram.cholesky()
            .ok_or(Error::RankDeficient { rank, cols: N_PARAMS })?
            .solve(&(z.transpose() * &y))
    };
    let p = ParamVec::from_iterator(params.iter().copied());
    let model = LinearModel::from_params(&p);
    if !model.is_finite() {
        return Err(Error::RankDeficient { rank, cols: N_PARAMS });
    }
    Ok(model)
}

/// `Z^T Z` over `[x; 1]` rows.
fn gram(samples: &[Sample]) -> ParamMat {
    samples.iter().fold(ParamMat::zeros(), |acc, s| {
        let z = augmented(&s.x);
        acc + z * z.transpose()
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SgdState {
    pub model: LinearModel,
    pub eta: f64,
}

impl SgdState {
    pub fn new(model: LinearModel, eta: f64) -> Result<Self> {
        if !(eta > 0.0 && eta.is_finite()) {
            return Err(Error::InvalidInput(format!("SGD step size must be positive, got {eta}")));
        }
        Ok(SgdState { model, eta })
    }

    /// One LMS step on the squared error; returns the prediction made
    /// before the step.
    pub fn update(&mut self, sample: &Sample) -> Result<f64> {
        check_sample(sample)?;
        let y_hat = self.model.predict(&sample.x);
        let e = sample.y - y_hat;
        for (w, x) in self.model.w.iter_mut().zip(&sample.x) {
            *w += self.eta * e * x;
        }
        self.model.b += self.eta * e;
        if !self.model.is_finite() {
            return Err(Error::Diverged { eta: self.eta });
        }
        Ok(y_hat)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RlsState {
    pub model: LinearModel,
    /// Inverse-covariance gain over `[x; 1]`.
    pub p: ParamMat,
    pub lambda: f64,
    /// Diagonal used when `p` has to be reset.
    pub delta: f64,
    pub resets: usize,
}

impl RlsState {
    pub fn new(model: LinearModel, p: ParamMat, lambda: f64, delta: f64) -> Result<Self> {
        if !(lambda > 0.0 && lambda <= 1.0) {
            return Err(Error::InvalidInput(format!("forgetting factor {lambda} outside (0, 1]")));
        }
        if !(delta > 0.0 && delta.is_finite()) {
            return Err(Error::InvalidInput(format!("reset delta must be positive, got {delta}")));
        }
        if p.cholesky().is_none() {
            return Err(Error::InvalidInput("RLS gain matrix is not positive definite".into()));
        }
        Ok(RlsState {
            model,
            p,
            lambda,
            delta,
            resets: 0,
        })
    }

    /// Uninformed start: `P = delta * I`.
    pub fn with_identity(model: LinearModel, lambda: f64, delta: f64) -> Result<Self> {
        Self::new(model, ParamMat::identity() * delta, lambda, delta)
    }

    /// Warm start from an exact least-squares fit on `samples`, with `P` the
    /// inverse of their normal matrix (ridged if singular).
    pub fn from_training(samples: &[Sample], lambda: f64, delta: f64) -> Result<Self> {
        let model = fit_ols(samples)?;
        Self::new(model, inverse_gram(samples)?, lambda, delta)
    }

    /// Standard exponentially weighted RLS step; returns the prediction made
    /// before the step.
    pub fn update(&mut self, sample: &Sample) -> Result<f64> {
        check_sample(sample)?;
        let z = augmented(&sample.x);
        let y_hat = self.model.predict(&sample.x);
        let e = sample.y - y_hat;
        let pz = self.p * z;
        let denom = self.lambda + z.dot(&pz);
        if !(denom > 0.0 && denom.is_finite()) {
            self.reset(sample.batch_id);
            return Ok(y_hat);
        }
        let k = pz / denom;
        let params = self.model.params() + k * e;
        let p = (self.p - k * pz.transpose()) / self.lambda;
        self.p = (p + p.transpose()) * 0.5;
        self.model = LinearModel::from_params(&params);
        if !self.model.is_finite() {
            return Err(Error::InvalidInput(format!(
                "RLS parameters became non-finite at batch {}",
                sample.batch_id
            )));
        }
        if self.p.cholesky().is_none() {
            self.reset(sample.batch_id);
        }
        Ok(y_hat)
    }

    fn reset(&mut self, batch_id: u64) {
        log::warn!(
            "RLS gain lost positive definiteness at batch {batch_id}; resetting to {} * I",
            self.delta
        );
        self.p = ParamMat::identity() * self.delta;
        self.resets += 1;
    }
}

fn inverse_gram(samples: &[Sample]) -> Result<ParamMat> {
    let g = gram(samples);
    if let Some(inv) = g.try_inverse().filter(|m| m.cholesky().is_some()) {
        return Ok((inv + inv.transpose()) * 0.5);
    }
    let ridged = g + ParamMat::identity() * DEFAULT_RIDGE * g.trace().max(1.0);
    ridged
        .try_inverse()
        .map(|m| (m + m.transpose()) * 0.5)
        .ok_or(Error::RankDeficient {
            rank: 0,
            cols: N_PARAMS,
        })
}

#[derive(Debug, Clone, PartialEq)]
pub enum Predictor {
    Offline(LinearModel),
    Sgd(SgdState),
    Rls(RlsState),
}

impl Predictor {
    pub fn method(&self) -> &'static str {
        match self {
            Predictor::Offline(_) => "offline",
            Predictor::Sgd(_) => "sgd",
            Predictor::Rls(_) => "rls",
        }
    }

    pub fn model(&self) -> &LinearModel {
        match self {
            Predictor::Offline(m) => m,
            Predictor::Sgd(s) => &s.model,
            Predictor::Rls(r) => &r.model,
        }
    }

    pub fn predict(&self, x: &[f64; N_FEATURES]) -> f64 {
        self.model().predict(x)
    }

    /// Scores `sample` and then learns from it; the score never sees the
    /// sample's own update. Offline predictors only score.
    pub fn score_and_update(&mut self, sample: &Sample) -> Result<f64> {
        match self {
            Predictor::Offline(m) => {
                check_sample(sample)?;
                Ok(m.predict(&sample.x))
            }
            Predictor::Sgd(s) => s.update(sample),
            Predictor::Rls(r) => r.update(sample),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub dataset: String,
    pub method: String,
    pub mse: f64,
    pub rel_p25: f64,
    pub rel_p50: f64,
    pub rel_p75: f64,
    pub rel_p95: f64,
    pub n_samples: usize,
}

impl EvalReport {
    pub fn from_predictions(dataset: &str, method: &str, samples: &[Sample], predictions: &[f64]) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Empty("evaluation over no samples"));
        }
        let n = samples.len();
        let mse = samples
            .iter()
            .zip(predictions)
            .map(|(s, p)| (s.y - p).powi(2))
            .sum::<f64>()
            / n as f64;
        let mut rel: Vec<f64> = samples
            .iter()
            .zip(predictions)
            .map(|(s, p)| (p - s.y).abs() / s.y)
            .collect();
        rel.sort_by(f64::total_cmp);
        Ok(EvalReport {
            dataset: dataset.to_string(),
            method: method.to_string(),
            mse,
            rel_p25: percentile_sorted(&rel, 25.0),
            rel_p50: percentile_sorted(&rel, 50.0),
            rel_p75: percentile_sorted(&rel, 75.0),
            rel_p95: percentile_sorted(&rel, 95.0),
            n_samples: n,
        })
    }
}

/// Scores `predictor` on `samples`. With `online`, evaluation is
/// prequential: each sample is scored before the predictor learns from it.
pub fn evaluate(predictor: &mut Predictor, samples: &[Sample], online: bool, dataset: &str) -> Result<EvalReport> {
    if samples.is_empty() {
        return Err(Error::Empty("evaluation over no samples"));
    }
    let predictions = samples
        .iter()
        .map(|s| {
            if online {
                predictor.score_and_update(s)
            } else {
                check_sample(s).map(|_| predictor.predict(&s.x))
            }
        })
        .collect::<Result<Vec<f64>>>()?;
    EvalReport::from_predictions(dataset, predictor.method(), samples, &predictions)
}

pub fn write_eval_csv(reports: &[EvalReport], writer: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in reports {
        w.serialize(r)?;
    }
    if reports.is_empty() {
        w.write_record(["dataset", "method", "mse", "rel_p25", "rel_p50", "rel_p75", "rel_p95", "n_samples"])?;
    }
    w.flush().map_err(|e| Error::io("<eval writer>", e))?;
    Ok(())
}
