//! Discrete-event execution of batches on one simulated GPU.
//!
//! Each running batch progresses at rate `1 / slowdown`, where the slowdown
//! is constant over a co-location segment. Whenever the set of co-located
//! peers changes, every affected batch closes its segment, draws a new
//! slowdown from the oracle and re-projects its completion time. All state
//! changes that happen at the same instant are coalesced before segments
//! are re-evaluated, so no zero-length segment is ever recorded.
//!
//! Same-instant ordering: completions, then window expiries and dispatches,
//! then arrivals (and dispatch of any batch they fill), each by id.

use std::collections::{HashMap, VecDeque};
use std::io::Write;

use serde::Serialize;

use crate::batcher::{BatchRequest, Batcher};
use crate::colocation::{samples_from_outcomes, Sample};
use crate::error::{Error, Result};
use crate::metrics::RequestRecord;
use crate::oracle::InterferenceOracle;
use crate::profile::{ModelProfile, ProfileTable, Throughputs};
use crate::workload::{generate_arrivals, ScenarioSpec};

/// A maximal interval with a fixed set of co-located peers.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub t_begin: f64,
    pub t_end: f64,
    pub slowdown: f64,
    /// Summed throughputs of the peers.
    pub colo: Throughputs,
    /// Batch ids of the peers, ascending.
    pub peers: Vec<u64>,
}

impl Segment {
    pub fn duration(&self) -> f64 {
        self.t_end - self.t_begin
    }

    /// Solo-equivalent work done during the segment.
    pub fn work(&self) -> f64 {
        self.duration() / self.slowdown
    }
}

#[derive(Debug, Clone)]
struct OpenSegment {
    t_begin: f64,
    progress_at_begin: f64,
    slowdown: f64,
    colo: Throughputs,
    peers: Vec<u64>,
}

#[derive(Debug, Clone)]
pub struct RunningBatch {
    pub batch: BatchRequest,
    pub profile: ModelProfile,
    pub total_work_ms: f64,
    pub start_time_ms: f64,
    pub segments: Vec<Segment>,
    open: Option<OpenSegment>,
    colo_observations: Vec<Throughputs>,
    /// Wall time of the closed segments, accumulated as work times slowdown.
    elapsed_ms: f64,
}

impl RunningBatch {
    pub fn batch_id(&self) -> u64 {
        self.batch.batch_id
    }

    pub fn own(&self) -> Throughputs {
        self.profile.throughputs()
    }

    pub fn progress_at(&self, t: f64) -> f64 {
        match &self.open {
            Some(o) => (o.progress_at_begin + (t - o.t_begin) / o.slowdown).min(self.total_work_ms),
            None => 0.0,
        }
    }

    pub fn current_slowdown(&self) -> Option<f64> {
        self.open.as_ref().map(|o| o.slowdown)
    }

    pub fn projected_completion(&self) -> Option<f64> {
        self.open
            .as_ref()
            .map(|o| o.t_begin + (self.total_work_ms - o.progress_at_begin) * o.slowdown)
    }

    fn close_segment(&mut self, t: f64, progress: f64) -> Option<OpenSegment> {
        let o = self.open.take()?;
        self.elapsed_ms += (progress - o.progress_at_begin) * o.slowdown;
        self.segments.push(Segment {
            t_begin: o.t_begin,
            t_end: t,
            slowdown: o.slowdown,
            colo: o.colo,
            peers: o.peers.clone(),
        });
        Some(o)
    }
}

/// What a finished batch looked like from the outside.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchOutcome {
    pub batch_id: u64,
    pub model_id: String,
    pub batch_size: u32,
    pub formed_at_ms: f64,
    pub start_ms: f64,
    pub completion_time_ms: f64,
    pub measured_duration_ms: f64,
    /// Profiled solo duration, i.e. the batch's total work.
    pub profiled_ms: f64,
    pub interference_ratio: f64,
    pub own: Throughputs,
    pub segments: Vec<Segment>,
    /// Co-located throughput at dispatch, then after every peer change.
    pub colo_observations: Vec<Throughputs>,
}

impl BatchOutcome {
    pub fn ever_colocated(&self) -> bool {
        self.segments.iter().any(|s| !s.peers.is_empty())
    }

    /// Re-integrates the recorded segments.
    pub fn integrated_work(&self) -> f64 {
        self.segments.iter().map(Segment::work).sum()
    }
}

#[derive(Debug, Clone)]
pub struct GpuState {
    pub now_ms: f64,
    concurrency_cap: usize,
    oracle: InterferenceOracle,
    scenario_seed: u64,
    running: Vec<RunningBatch>,
}

impl GpuState {
    pub fn new(concurrency_cap: usize, oracle: InterferenceOracle, scenario_seed: u64) -> Self {
        assert!(concurrency_cap > 0, "concurrency cap must be positive");
        GpuState {
            now_ms: 0.0,
            concurrency_cap,
            oracle,
            scenario_seed,
            running: Vec::new(),
        }
    }

    pub fn running(&self) -> &[RunningBatch] {
        &self.running
    }

    pub fn can_admit(&self) -> bool {
        self.running.len() < self.concurrency_cap
    }

    /// Starts `batch` at `now_ms`. Its first segment is opened by the next
    /// [`GpuState::refresh_colocation`], once the instant is complete.
    pub fn dispatch(&mut self, batch: BatchRequest, profile: ModelProfile) -> Result<()> {
        if !self.can_admit() {
            return Err(Error::Invariant(format!(
                "dispatch of batch {} with {} of {} slots busy",
                batch.batch_id,
                self.running.len(),
                self.concurrency_cap
            )));
        }
        if profile.batch_size != batch.batch_size() {
            return Err(Error::Invariant(format!(
                "batch {} has {} members but profile is for batch size {}",
                batch.batch_id,
                batch.batch_size(),
                profile.batch_size
            )));
        }
        self.running.push(RunningBatch {
            total_work_ms: profile.solo_duration_ms,
            start_time_ms: self.now_ms,
            batch,
            profile,
            segments: Vec::new(),
            open: None,
            colo_observations: Vec::new(),
            elapsed_ms: 0.0,
        });
        Ok(())
    }

    pub fn next_completion(&self) -> Option<f64> {
        self.running
            .iter()
            .filter_map(RunningBatch::projected_completion)
            .min_by(f64::total_cmp)
    }

    /// Moves the clock to `t` and retires every batch whose projected
    /// completion is `t`, in batch id order.
    pub fn advance_to(&mut self, t: f64) -> Result<Vec<BatchOutcome>> {
        if !t.is_finite() {
            return Err(Error::Invariant(format!("non-finite event time {t}")));
        }
        if t < self.now_ms {
            return Err(Error::Invariant(format!(
                "event at {t} ms is before the clock ({} ms)",
                self.now_ms
            )));
        }
        if let Some(c) = self.next_completion() {
            if c < t {
                return Err(Error::Invariant(format!(
                    "skipped a completion at {c} ms while advancing to {t} ms"
                )));
            }
        }
        self.now_ms = t;
        let mut done = Vec::new();
        let mut i = 0;
        while i < self.running.len() {
            if self.running[i].projected_completion() == Some(t) {
                done.push(self.running.swap_remove(i));
            } else {
                i += 1;
            }
        }
        done.sort_by_key(RunningBatch::batch_id);
        Ok(done.into_iter().map(|rb| finish(rb, t)).collect())
    }

    /// Re-evaluates every running batch's co-location set at the current
    /// instant, closing and opening segments where it changed.
    pub fn refresh_colocation(&mut self) {
        let now = self.now_ms;
        let snapshot: Vec<(u64, Throughputs)> = self.running.iter().map(|r| (r.batch_id(), r.own())).collect();
        for rb in &mut self.running {
            let id = rb.batch_id();
            let peers: Vec<u64> = {
                let mut p: Vec<u64> = snapshot.iter().filter(|(b, _)| *b != id).map(|(b, _)| *b).collect();
                p.sort_unstable();
                p
            };
            if rb.open.as_ref().is_some_and(|o| o.peers == peers) {
                continue;
            }
            let colo: Throughputs = snapshot.iter().filter(|(b, _)| *b != id).map(|(_, t)| *t).sum();
            let progress = rb.progress_at(now);
            let opened_now = rb.open.as_ref().is_some_and(|o| o.t_begin == now);
            if opened_now {
                // only reachable if a peer set changed twice within one instant
                rb.open = None;
                rb.colo_observations.pop();
            } else if rb.open.is_some() {
                rb.close_segment(now, progress);
            }
            let noise = self.oracle.noise_draw(self.scenario_seed, id, rb.segments.len());
            rb.open = Some(OpenSegment {
                t_begin: now,
                progress_at_begin: progress,
                slowdown: self.oracle.slowdown(rb.own(), colo, noise),
                colo,
                peers,
            });
            rb.colo_observations.push(colo);
        }
    }
}

fn finish(mut rb: RunningBatch, t: f64) -> BatchOutcome {
    let total = rb.total_work_ms;
    rb.close_segment(t, total);
    let measured = rb.elapsed_ms;
    BatchOutcome {
        batch_id: rb.batch_id(),
        model_id: rb.batch.model_id.clone(),
        batch_size: rb.batch.batch_size(),
        formed_at_ms: rb.batch.formed_at_ms,
        start_ms: rb.start_time_ms,
        completion_time_ms: t,
        measured_duration_ms: measured,
        profiled_ms: rb.total_work_ms,
        interference_ratio: measured / rb.total_work_ms,
        own: rb.own(),
        segments: rb.segments,
        colo_observations: rb.colo_observations,
    }
}

/// Everything a scenario run produces.
#[derive(Debug, Clone)]
pub struct ScenarioRun {
    pub scenario: String,
    /// In completion order.
    pub outcomes: Vec<BatchOutcome>,
    /// In completion order, then request id.
    pub requests: Vec<RequestRecord>,
    /// One per outcome, using the scenario's co-location mode.
    pub samples: Vec<Sample>,
    pub n_arrivals: usize,
    pub n_batches_formed: usize,
    pub max_running: usize,
}

/// Runs arrivals through the batcher, a FIFO dispatch queue and the GPU
/// until every request has completed.
pub fn run_scenario(spec: &ScenarioSpec, table: &ProfileTable) -> Result<ScenarioRun> {
    let resolved = spec.resolve(table)?;
    let arrivals = generate_arrivals(spec, &resolved);
    let profile_of: HashMap<&str, &str> = resolved
        .iter()
        .map(|m| (m.model_id.as_str(), m.profile_id.as_str()))
        .collect();
    let slo_of: HashMap<&str, f64> = resolved.iter().map(|m| (m.model_id.as_str(), m.slo_ms)).collect();

    let mut batcher = Batcher::new(&resolved, spec.max_batch_size);
    let mut gpu = GpuState::new(spec.concurrency_cap, spec.oracle, spec.seed);
    let mut dispatch_queue: VecDeque<BatchRequest> = VecDeque::new();
    let mut outcomes = Vec::new();
    let mut requests = Vec::with_capacity(arrivals.len());
    let mut n_batches_formed = 0usize;
    let mut max_running = 0usize;
    let mut next_arrival = 0usize;
    let mut members_of: HashMap<u64, BatchRequest> = HashMap::new();

    let admit = |gpu: &mut GpuState, queue: &mut VecDeque<BatchRequest>, members_of: &mut HashMap<u64, BatchRequest>| -> Result<()> {
        while gpu.can_admit() {
            let Some(batch) = queue.pop_front() else { break };
            let profile = table.get(profile_of[batch.model_id.as_str()], batch.batch_size())?.clone();
            members_of.insert(batch.batch_id, batch.clone());
            gpu.dispatch(batch, profile)?;
        }
        Ok(())
    };

    loop {
        let candidates = [
            arrivals.get(next_arrival).map(|a| a.arrival_time_ms),
            batcher.next_deadline(),
            gpu.next_completion(),
        ];
        let Some(t) = candidates.into_iter().flatten().min_by(f64::total_cmp) else {
            break;
        };
        if !t.is_finite() {
            return Err(Error::Invariant(format!("non-finite event time in `{}`", spec.name)));
        }

        for outcome in gpu.advance_to(t)? {
            let batch = members_of
                .remove(&outcome.batch_id)
                .ok_or_else(|| Error::Invariant(format!("unknown batch {}", outcome.batch_id)))?;
            for r in &batch.members {
                requests.push(RequestRecord::new(
                    r.request_id,
                    &r.model_id,
                    r.arrival_time_ms,
                    outcome.batch_id,
                    outcome.start_ms,
                    outcome.completion_time_ms,
                    slo_of[r.model_id.as_str()],
                ));
            }
            outcomes.push(outcome);
        }

        let expired = batcher.poll_all(t);
        n_batches_formed += expired.len();
        dispatch_queue.extend(expired);
        admit(&mut gpu, &mut dispatch_queue, &mut members_of)?;

        while let Some(a) = arrivals.get(next_arrival).filter(|a| a.arrival_time_ms == t) {
            if let Some(b) = batcher.enqueue(a.clone(), t)? {
                n_batches_formed += 1;
                dispatch_queue.push_back(b);
            }
            next_arrival += 1;
        }
        admit(&mut gpu, &mut dispatch_queue, &mut members_of)?;

        gpu.refresh_colocation();
        max_running = max_running.max(gpu.running().len());
        if gpu.running().len() > spec.concurrency_cap {
            return Err(Error::Invariant(format!(
                "{} batches running with cap {}",
                gpu.running().len(),
                spec.concurrency_cap
            )));
        }
    }

    if requests.len() != arrivals.len() || batcher.pending() != 0 || !dispatch_queue.is_empty() {
        return Err(Error::Invariant(format!(
            "`{}` ended with {} of {} requests completed",
            spec.name,
            requests.len(),
            arrivals.len()
        )));
    }
    let samples = samples_from_outcomes(&outcomes, spec.colocation_mode, &spec.name)?;
    Ok(ScenarioRun {
        scenario: spec.name.clone(),
        outcomes,
        requests,
        samples,
        n_arrivals: arrivals.len(),
        n_batches_formed,
        max_running,
    })
}

#[derive(Serialize)]
struct OutcomeRow<'a> {
    batch_id: u64,
    model_id: &'a str,
    batch_size: u32,
    start_ms: f64,
    measured_ms: f64,
    profiled_ms: f64,
    interference_ratio: f64,
    n_segments: usize,
}

pub fn write_outcomes_csv(outcomes: &[BatchOutcome], writer: impl Write) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(writer);
    w.write_record([
        "batch_id",
        "model_id",
        "batch_size",
        "start_ms",
        "measured_ms",
        "profiled_ms",
        "interference_ratio",
        "n_segments",
    ])?;
    for o in outcomes {
        w.serialize(OutcomeRow {
            batch_id: o.batch_id,
            model_id: &o.model_id,
            batch_size: o.batch_size,
            start_ms: o.start_ms,
            measured_ms: o.measured_duration_ms,
            profiled_ms: o.profiled_ms,
            interference_ratio: o.interference_ratio,
            n_segments: o.segments.len(),
        })?;
    }
    w.flush().map_err(|e| Error::io("<outcome writer>", e))?;
    Ok(())
}

/// One row per segment, with the co-location snapshot and peer ids.
pub fn write_segments_csv(outcomes: &[BatchOutcome], writer: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "batch_id",
        "segment",
        "t_begin_ms",
        "t_end_ms",
        "slowdown",
        "colo_l2",
        "colo_dram",
        "colo_sm",
        "peers",
    ])?;
    for o in outcomes {
        for (i, s) in o.segments.iter().enumerate() {
            let peers = s.peers.iter().map(u64::to_string).collect::<Vec<_>>().join(";");
            w.write_record([
                o.batch_id.to_string(),
                i.to_string(),
                s.t_begin.to_string(),
                s.t_end.to_string(),
                s.slowdown.to_string(),
                s.colo.l2.to_string(),
                s.colo.dram.to_string(),
                s.colo.sm.to_string(),
                peers,
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io("<segment writer>", e))?;
    Ok(())
}
