//! Per-model dynamic batching.
//!
//! The first request entering an empty queue opens a waiting window. The
//! queue is flushed when the window expires or as soon as it holds
//! `max_batch_size` requests, whichever comes first.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::workload::{RequestEvent, ResolvedModel};

#[derive(Debug, Clone, PartialEq)]
pub struct BatchRequest {
    pub batch_id: u64,
    pub model_id: String,
    /// Members in arrival order.
    pub members: Vec<RequestEvent>,
    pub formed_at_ms: f64,
}

impl BatchRequest {
    pub fn batch_size(&self) -> u32 {
        self.members.len() as u32
    }

    pub fn member_request_ids(&self) -> impl Iterator<Item = u64> + '_ {
        self.members.iter().map(|r| r.request_id)
    }
}

/// Monotone batch id source shared by every queue of one run.
#[derive(Debug, Default, Clone)]
pub struct BatchIds(u64);

impl BatchIds {
    pub fn next_id(&mut self) -> u64 {
        let id = self.0;
        self.0 += 1;
        id
    }
}

#[derive(Debug, Clone)]
pub struct PendingQueue {
    model_id: String,
    window_ms: f64,
    max_batch_size: usize,
    waiting: VecDeque<RequestEvent>,
    window_deadline_ms: Option<f64>,
}

impl PendingQueue {
    pub fn new(model_id: &str, window_ms: f64, max_batch_size: u32) -> Self {
        assert!(max_batch_size > 0, "max_batch_size must be positive");
        assert!(window_ms >= 0.0, "batching window must be non-negative");
        PendingQueue {
            model_id: model_id.to_string(),
            window_ms,
            max_batch_size: max_batch_size as usize,
            waiting: VecDeque::new(),
            window_deadline_ms: None,
        }
    }

    pub fn model_id(&self) -> &str {
        &self.model_id
    }

    pub fn len(&self) -> usize {
        self.waiting.len()
    }

    pub fn is_empty(&self) -> bool {
        self.waiting.is_empty()
    }

    pub fn window_deadline_ms(&self) -> Option<f64> {
        self.window_deadline_ms
    }

    pub fn set_max_batch_size(&mut self, max_batch_size: u32) {
        assert!(max_batch_size > 0, "max_batch_size must be positive");
        self.max_batch_size = max_batch_size as usize;
    }

    /// Appends `req`. Emits a batch right away if the queue is full or the
    /// window has already expired (always the case for a zero window).
    pub fn enqueue(&mut self, req: RequestEvent, now_ms: f64, ids: &mut BatchIds) -> Result<Option<BatchRequest>> {
        if req.model_id != self.model_id {
            return Err(Error::ModelMismatch {
                queue: self.model_id.clone(),
                request: req.model_id,
            });
        }
        if self.waiting.is_empty() {
            self.window_deadline_ms = Some(now_ms + self.window_ms);
        }
        self.waiting.push_back(req);
        let expired = self.window_deadline_ms.is_some_and(|d| now_ms >= d);
        if self.waiting.len() >= self.max_batch_size || expired {
            Ok(Some(self.take(now_ms, ids)))
        } else {
            Ok(None)
        }
    }

    /// Flushes the queue if its window has expired by `now_ms`.
    pub fn poll_window(&mut self, now_ms: f64, ids: &mut BatchIds) -> Option<BatchRequest> {
        match self.window_deadline_ms {
            Some(deadline) if now_ms >= deadline => Some(self.take(now_ms, ids)),
            _ => None,
        }
    }

    fn take(&mut self, now_ms: f64, ids: &mut BatchIds) -> BatchRequest {
        let n = self.waiting.len().min(self.max_batch_size);
        let members: Vec<RequestEvent> = self.waiting.drain(..n).collect();
        // leftovers get a fresh window
        self.window_deadline_ms = (!self.waiting.is_empty()).then_some(now_ms + self.window_ms);
        BatchRequest {
            batch_id: ids.next_id(),
            model_id: self.model_id.clone(),
            members,
            formed_at_ms: now_ms,
        }
    }
}

/// All per-model queues of one run.
#[derive(Debug, Clone)]
pub struct Batcher {
    queues: Vec<PendingQueue>,
    ids: BatchIds,
}

impl Batcher {
    pub fn new(models: &[ResolvedModel], max_batch_size: u32) -> Self {
        Batcher {
            queues: models
                .iter()
                .map(|m| PendingQueue::new(&m.model_id, m.batching_window_ms, max_batch_size))
                .collect(),
            ids: BatchIds::default(),
        }
    }

    pub fn enqueue(&mut self, req: RequestEvent, now_ms: f64) -> Result<Option<BatchRequest>> {
        let q = self
            .queues
            .iter_mut()
            .find(|q| q.model_id == req.model_id)
            .ok_or_else(|| Error::UnknownModel(req.model_id.clone()))?;
        q.enqueue(req, now_ms, &mut self.ids)
    }

    /// Batches from every queue whose window expired, in deployment order.
    pub fn poll_all(&mut self, now_ms: f64) -> Vec<BatchRequest> {
        let ids = &mut self.ids;
        self.queues
            .iter_mut()
            .filter_map(|q| q.poll_window(now_ms, ids))
            .collect()
    }

    pub fn next_deadline(&self) -> Option<f64> {
        self.queues
            .iter()
            .filter_map(|q| q.window_deadline_ms)
            .min_by(f64::total_cmp)
    }

    pub fn pending(&self) -> usize {
        self.queues.iter().map(PendingQueue::len).sum()
    }
}
