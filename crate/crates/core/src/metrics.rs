//! Request accounting, nearest-rank percentiles and SLO reports.

use std::collections::BTreeMap;
use std::io::Write;

use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RequestRecord {
    pub request_id: u64,
    pub model_id: String,
    pub arrival_ms: f64,
    pub batch_id: u64,
    pub dispatch_ms: f64,
    pub completion_ms: f64,
    pub latency_ms: f64,
    pub queueing_ms: f64,
    pub slo_ms: f64,
    pub slo_met: bool,
}

impl RequestRecord {
    pub fn new(
        request_id: u64,
        model_id: &str,
        arrival_ms: f64,
        batch_id: u64,
        dispatch_ms: f64,
        completion_ms: f64,
        slo_ms: f64,
    ) -> Self {
        let latency_ms = completion_ms - arrival_ms;
        RequestRecord {
            request_id,
            model_id: model_id.to_string(),
            arrival_ms,
            batch_id,
            dispatch_ms,
            completion_ms,
            latency_ms,
            queueing_ms: dispatch_ms - arrival_ms,
            slo_ms,
            slo_met: latency_ms <= slo_ms,
        }
    }
}

/// Nearest-rank percentile: the `ceil(p/100 * n)`-th smallest value, clamped
/// to the first element for tiny `p`.
pub fn percentile(values: &[f64], p: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Empty("percentile of no values"));
    }
    if !(0.0..=100.0).contains(&p) {
        return Err(Error::InvalidInput(format!("percentile {p} outside [0, 100]")));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(percentile_sorted(&sorted, p))
}

/// As [`percentile`], for input already sorted ascending.
pub fn percentile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    let rank = ((p / 100.0) * n as f64).ceil() as usize;
    sorted[rank.clamp(1, n) - 1]
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelReport {
    pub model_id: String,
    pub n_requests: usize,
    pub slo_satisfaction: f64,
    pub p50_ms: f64,
    pub p95_ms: f64,
    pub p99_ms: f64,
}

/// Per-model SLO satisfaction and latency percentiles, skipping requests
/// that arrived before `warmup_ms`.
pub fn slo_report(records: &[RequestRecord], warmup_ms: f64) -> Result<Vec<ModelReport>> {
    let mut by_model: BTreeMap<&str, Vec<&RequestRecord>> = BTreeMap::new();
    for r in records.iter().filter(|r| r.arrival_ms >= warmup_ms) {
        by_model.entry(&r.model_id).or_default().push(r);
    }
    if by_model.is_empty() {
        return Err(Error::Empty("SLO report over no requests"));
    }
    Ok(by_model
        .into_iter()
        .map(|(model, recs)| {
            let mut lat: Vec<f64> = recs.iter().map(|r| r.latency_ms).collect();
            lat.sort_by(f64::total_cmp);
            let met = recs.iter().filter(|r| r.slo_met).count();
            ModelReport {
                model_id: model.to_string(),
                n_requests: recs.len(),
                slo_satisfaction: met as f64 / recs.len() as f64,
                p50_ms: percentile_sorted(&lat, 50.0),
                p95_ms: percentile_sorted(&lat, 95.0),
                p99_ms: percentile_sorted(&lat, 99.0),
            }
        })
        .collect())
}

/// Latency percentile over every request that arrived at or after `warmup_ms`.
pub fn latency_percentile(records: &[RequestRecord], p: f64, warmup_ms: f64) -> Result<f64> {
    let lat: Vec<f64> = records
        .iter()
        .filter(|r| r.arrival_ms >= warmup_ms)
        .map(|r| r.latency_ms)
        .collect();
    percentile(&lat, p)
}

#[derive(Serialize)]
struct RequestRow<'a> {
    request_id: u64,
    model_id: &'a str,
    arrival_ms: f64,
    dispatch_ms: f64,
    completion_ms: f64,
    latency_ms: f64,
    queueing_ms: f64,
    slo_met: bool,
}

pub fn write_requests_csv(records: &[RequestRecord], writer: impl Write) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(writer);
    w.write_record([
        "request_id",
        "model_id",
        "arrival_ms",
        "dispatch_ms",
        "completion_ms",
        "latency_ms",
        "queueing_ms",
        "slo_met",
    ])?;
    for r in records {
        w.serialize(RequestRow {
            request_id: r.request_id,
            model_id: &r.model_id,
            arrival_ms: r.arrival_ms,
            dispatch_ms: r.dispatch_ms,
            completion_ms: r.completion_ms,
            latency_ms: r.latency_ms,
            queueing_ms: r.queueing_ms,
            slo_met: r.slo_met,
        })?;
    }
    w.flush().map_err(|e| Error::io("<request writer>", e))?;
    Ok(())
}

pub fn write_report_csv(reports: &[ModelReport], writer: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in reports {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io("<report writer>", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nearest_rank_examples() {
        let v: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(percentile(&v, 99.0).unwrap(), 99.0);
        assert_eq!(percentile(&v, 100.0).unwrap(), 100.0);
        assert_eq!(percentile(&v, 0.0).unwrap(), 1.0);
        assert_eq!(percentile(&v, 1e-9).unwrap(), 1.0);
        assert_eq!(percentile(&[5.0], 37.0).unwrap(), 5.0);
        assert_eq!(percentile(&[3.0, 1.0, 2.0], 50.0).unwrap(), 2.0);
        assert!(percentile(&[], 50.0).is_err());
        assert!(percentile(&[1.0], 101.0).is_err());
    }

    fn rec(id: u64, model: &str, arrival: f64, completion: f64, slo: f64) -> RequestRecord {
        RequestRecord::new(id, model, arrival, 0, arrival, completion, slo)
    }

    #[test]
    fn all_within_slo() {
        let recs: Vec<_> = (0..10).map(|i| rec(i, "m", i as f64, i as f64 + 1.0, 2.0)).collect();
        let r = slo_report(&recs, 0.0).unwrap();
        assert_eq!(r.len(), 1);
        assert_eq!(r[0].slo_satisfaction, 1.0);
        assert_eq!(r[0].p99_ms, 1.0);
    }

    #[test]
    fn infinite_slo_is_always_met() {
        let recs: Vec<_> = (0..10).map(|i| rec(i, "m", 0.0, 1e6 * i as f64, f64::INFINITY)).collect();
        assert_eq!(slo_report(&recs, 0.0).unwrap()[0].slo_satisfaction, 1.0);
    }

    #[test]
    fn warmup_and_models_are_separated() {
        let mut recs: Vec<_> = (0..10).map(|i| rec(i, "a", i as f64, i as f64 + 5.0, 2.0)).collect();
        recs.push(rec(10, "b", 3.0, 4.0, 2.0));
        let r = slo_report(&recs, 5.0).unwrap();
        assert_eq!(r.len(), 1);
        assert_eq!(r[0].model_id, "a");
        assert_eq!(r[0].n_requests, 5);
        assert_eq!(r[0].slo_satisfaction, 0.0);
        assert!(slo_report(&[], 0.0).is_err());
    }

    #[test]
    fn request_csv_header() {
        let mut out = Vec::new();
        write_requests_csv(&[rec(1, "m", 0.0, 1.5, 2.0)], &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "request_id,model_id,arrival_ms,dispatch_ms,completion_ms,latency_ms,queueing_ms,slo_met"
        );
        assert_eq!(lines.next().unwrap(), "1,m,0.0,0.0,1.5,1.5,0.0,true");
    }
}
