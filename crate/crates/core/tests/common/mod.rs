//! Independent reference implementations and random generators shared by the
//! integration tests and the acceptance runner.
#![allow(dead_code)]

use std::collections::HashMap;

use colosim::batcher::{BatchIds, BatchRequest, PendingQueue};
use colosim::profile::{gen_synthetic_profiles, SynthesisSpec};
use colosim::{
    ColocationMode, DeployedModel, InterferenceOracle, ProfileTable, RequestEvent, Sample, ScenarioRun,
    ScenarioSpec,
};
use rand::Rng;

pub fn default_table() -> ProfileTable {
    gen_synthetic_profiles(&SynthesisSpec::default_archetypes(), 0).expect("default archetypes")
}

pub fn sample(batch_id: u64, x: [f64; 6], y: f64) -> Sample {
    Sample {
        batch_id,
        scenario: "synthetic".into(),
        x,
        y,
        mode: ColocationMode::Static,
    }
}

/// `n` samples from `y = w.x + b + noise` with features in plausible
/// throughput ranges.
pub fn linear_samples(rng: &mut impl Rng, n: usize, w: [f64; 6], b: f64, noise: f64) -> Vec<Sample> {
    (0..n)
        .map(|i| {
            let x: [f64; 6] = std::array::from_fn(|j| if j < 3 { rng.random::<f64>() } else { 2.0 * rng.random::<f64>() });
            let y = b + w.iter().zip(&x).map(|(w, x)| w * x).sum::<f64>() + noise * (rng.random::<f64>() - 0.5);
            sample(i as u64, x, y)
        })
        .collect()
}

pub fn random_weights(rng: &mut impl Rng) -> ([f64; 6], f64) {
    (std::array::from_fn(|_| rng.random_range(-1.0..1.0)), rng.random_range(0.5..1.5))
}

/// Least squares with an intercept by forming the normal equations and
/// solving them with partially pivoted Gaussian elimination. Returns
/// `[w0..w5, b]`.
pub fn normal_equations(samples: &[Sample]) -> [f64; 7] {
    const N: usize = 7;
    let mut a = [[0.0f64; N + 1]; N];
    for s in samples {
        let z: [f64; N] = std::array::from_fn(|j| if j < 6 { s.x[j] } else { 1.0 });
        for i in 0..N {
            for j in 0..N {
                a[i][j] += z[i] * z[j];
            }
            a[i][N] += z[i] * s.y;
        }
    }
    for col in 0..N {
        let pivot = (col..N)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        a.swap(col, pivot);
        assert!(a[col][col].abs() > 1e-12, "singular normal equations");
        for row in col + 1..N {
            let f = a[row][col] / a[col][col];
            for k in col..=N {
                a[row][k] -= f * a[col][k];
            }
        }
    }
    let mut x = [0.0; N];
    for i in (0..N).rev() {
        let tail: f64 = (i + 1..N).map(|j| a[i][j] * x[j]).sum();
        x[i] = (a[i][N] - tail) / a[i][i];
    }
    x
}

pub fn params(w: &[f64; 6], b: f64) -> [f64; 7] {
    std::array::from_fn(|j| if j < 6 { w[j] } else { b })
}

pub fn mse_of(p: &[f64; 7], samples: &[Sample]) -> f64 {
    samples
        .iter()
        .map(|s| {
            let y_hat = p[6] + (0..6).map(|j| p[j] * s.x[j]).sum::<f64>();
            (s.y - y_hat).powi(2)
        })
        .sum::<f64>()
        / samples.len() as f64
}

/// Unrolled EWMA: `(1-a)^k r0 + sum_j a (1-a)^(k-j) x_j`, per coordinate.
pub fn ewma_unrolled(alpha: f64, r0: [f64; 3], xs: &[[f64; 3]]) -> [f64; 3] {
    let k = xs.len() as i32;
    std::array::from_fn(|c| {
        let mut r = (1.0 - alpha).powi(k) * r0[c];
        for (j, x) in xs.iter().enumerate() {
            r += alpha * (1.0 - alpha).powi(k - 1 - j as i32) * x[c];
        }
        r
    })
}

/// Drives `n_models` pending queues the way the simulator does: every window
/// deadline is polled before time moves past it. Randomizes windows
/// (including zero), inter-arrival gaps, bursts of simultaneous arrivals and
/// extra polls at arbitrary instants, then checks the batching invariants.
pub fn check_batcher_sequence(rng: &mut impl Rng, max_batch_size: u32) -> Result<(), String> {
    let n_models = rng.random_range(1..=3usize);
    let windows: Vec<f64> = (0..n_models)
        .map(|_| if rng.random_bool(0.15) { 0.0 } else { rng.random_range(0.1..5.0) })
        .collect();
    let mut queues: Vec<PendingQueue> = (0..n_models)
        .map(|m| PendingQueue::new(&format!("m{m}"), windows[m], max_batch_size))
        .collect();
    let mut ids = BatchIds::default();
    let mut batches: Vec<BatchRequest> = Vec::new();
    let mut arrivals: Vec<RequestEvent> = Vec::new();

    let n_events = rng.random_range(1..60usize);
    let mut t = 0.0f64;
    let poll_until = |queues: &mut Vec<PendingQueue>, ids: &mut BatchIds, out: &mut Vec<BatchRequest>, t: f64| {
        loop {
            let next = queues
                .iter()
                .filter_map(PendingQueue::window_deadline_ms)
                .filter(|&d| d <= t)
                .min_by(f64::total_cmp);
            let Some(d) = next else { break };
            for q in queues.iter_mut() {
                out.extend(q.poll_window(d, ids));
            }
        }
    };
    for _ in 0..n_events {
        if !rng.random_bool(0.2) {
            t += rng.random_range(0.0..2.0);
        }
        poll_until(&mut queues, &mut ids, &mut batches, t);
        if rng.random_bool(0.1) {
            for q in queues.iter_mut() {
                batches.extend(q.poll_window(t, &mut ids));
            }
            continue;
        }
        let m = rng.random_range(0..n_models);
        let req = RequestEvent {
            request_id: arrivals.len() as u64,
            model_id: format!("m{m}"),
            arrival_time_ms: t,
            deadline_ms: t + 10.0,
        };
        arrivals.push(req.clone());
        batches.extend(queues[m].enqueue(req, t, &mut ids).map_err(|e| e.to_string())?);
        for q in &queues {
            if q.is_empty() != q.window_deadline_ms().is_none() {
                return Err(format!("deadline presence mismatch on {}", q.model_id()));
            }
        }
    }
    poll_until(&mut queues, &mut ids, &mut batches, f64::INFINITY);
    if queues.iter().any(|q| !q.is_empty()) {
        return Err("requests left behind after final drain".into());
    }

    let arrival_of: HashMap<u64, &RequestEvent> = arrivals.iter().map(|a| (a.request_id, a)).collect();
    let mut seen = vec![0u32; arrivals.len()];
    let mut last_per_model: HashMap<&str, u64> = HashMap::new();
    let mut batch_ids = std::collections::HashSet::new();
    for b in &batches {
        if !batch_ids.insert(b.batch_id) {
            return Err(format!("duplicate batch id {}", b.batch_id));
        }
        let size = b.members.len();
        if size == 0 || size > max_batch_size as usize {
            return Err(format!("batch {} has size {size}", b.batch_id));
        }
        let window = windows[b.model_id[1..].parse::<usize>().unwrap()];
        for r in &b.members {
            if r.model_id != b.model_id {
                return Err(format!("batch {} mixes {} and {}", b.batch_id, b.model_id, r.model_id));
            }
            let a = arrival_of
                .get(&r.request_id)
                .ok_or_else(|| format!("unknown request {}", r.request_id))?;
            seen[r.request_id as usize] += 1;
            if b.formed_at_ms < a.arrival_time_ms {
                return Err(format!("request {} batched before arrival", r.request_id));
            }
            if b.formed_at_ms - a.arrival_time_ms > window + 1e-9 {
                return Err(format!(
                    "request {} waited {} > window {window}",
                    r.request_id,
                    b.formed_at_ms - a.arrival_time_ms
                ));
            }
            if let Some(&prev) = last_per_model.get(r.model_id.as_str()) {
                if r.request_id <= prev {
                    return Err(format!("request {} emitted out of FIFO order", r.request_id));
                }
            }
            last_per_model.insert(arrival_of[&r.request_id].model_id.as_str(), r.request_id);
        }
    }
    if let Some(i) = seen.iter().position(|&c| c != 1) {
        return Err(format!("request {i} emitted {} times", seen[i]));
    }
    Ok(())
}

/// A small noiseless scenario over a random subset of the default models.
pub fn random_noiseless_scenario(rng: &mut impl Rng, table: &ProfileTable) -> ScenarioSpec {
    let models: Vec<&str> = table.models().collect();
    let n = rng.random_range(1..=models.len().min(4));
    let mut picked = models.clone();
    for i in 0..n {
        let j = rng.random_range(i..picked.len());
        picked.swap(i, j);
    }
    let deployed = picked[..n]
        .iter()
        .map(|m| {
            let solo8 = table.get(m, 8).unwrap().solo_duration_ms;
            let rho = rng.random_range(0.05..0.6);
            DeployedModel::new(m, rho * 8.0 * 1000.0 / solo8)
        })
        .collect();
    ScenarioSpec {
        concurrency_cap: rng.random_range(1..=3),
        seed: rng.random(),
        batching_window_ms: rng.random_bool(0.5).then(|| rng.random_range(0.0..6.0)),
        max_batch_size: rng.random_range(1..=8),
        oracle: InterferenceOracle::noiseless(),
        ..ScenarioSpec::new("random", rng.random_range(0.5..3.0), deployed)
    }
}

/// Conservation, segment contiguity and concurrency checks on a finished run.
/// Checks that only hold without noise are skipped for noisy oracles.
pub fn check_run_invariants(spec: &ScenarioSpec, run: &ScenarioRun) -> Result<(), String> {
    let noiseless = spec.oracle.noise_sigma == 0.0;
    if run.max_running > spec.concurrency_cap {
        return Err(format!("{} running with cap {}", run.max_running, spec.concurrency_cap));
    }
    if run.requests.len() != run.n_arrivals {
        return Err(format!("{} of {} requests completed", run.requests.len(), run.n_arrivals));
    }
    for o in &run.outcomes {
        let rel = (o.integrated_work() - o.profiled_ms).abs() / o.profiled_ms;
        if rel > 1e-6 {
            return Err(format!("batch {}: work not conserved ({rel:e})", o.batch_id));
        }
        if noiseless && spec.concurrency_cap == 1 && o.interference_ratio != 1.0 {
            return Err(format!("batch {}: ratio {} under cap 1", o.batch_id, o.interference_ratio));
        }
        if noiseless && o.interference_ratio < 1.0 - 1e-12 {
            return Err(format!("batch {}: ratio {} below 1", o.batch_id, o.interference_ratio));
        }
        if noiseless && !o.ever_colocated() && o.interference_ratio != 1.0 {
            return Err(format!("solo batch {} has ratio {}", o.batch_id, o.interference_ratio));
        }
        let first = o.segments.first().ok_or("batch without segments")?;
        if first.t_begin != o.start_ms || o.segments.last().unwrap().t_end != o.completion_time_ms {
            return Err(format!("batch {}: segments do not span its execution", o.batch_id));
        }
        for w in o.segments.windows(2) {
            if w[0].t_end != w[1].t_begin {
                return Err(format!("batch {}: gap between segments", o.batch_id));
            }
        }
        for s in &o.segments {
            if (noiseless && s.slowdown < 1.0) || !(s.slowdown > 0.0) || s.t_end < s.t_begin {
                return Err(format!("batch {}: bad segment {s:?}", o.batch_id));
            }
        }
    }
    let measured: HashMap<u64, f64> = run.outcomes.iter().map(|o| (o.batch_id, o.measured_duration_ms)).collect();
    for r in &run.requests {
        if !(r.arrival_ms <= r.dispatch_ms && r.dispatch_ms <= r.completion_ms) {
            return Err(format!("request {} out of order", r.request_id));
        }
        let m = measured[&r.batch_id];
        if (r.latency_ms - r.queueing_ms - m).abs() > 1e-9 * r.latency_ms.max(1.0) {
            return Err(format!("request {}: latency is not queueing plus batch duration", r.request_id));
        }
    }
    Ok(())
}
