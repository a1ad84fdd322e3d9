//! Offline profiling ground truth: solo duration and resource throughput per
//! (model, batch size), plus a synthetic generator that reproduces the usual
//! shape of batching throughput curves.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{Read, Write};
use std::ops::{Add, AddAssign};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_MAX_BATCH_SIZE: u32 = 8;

/// Fraction of peak resource throughput a batch of one already reaches.
const UTILIZATION_FLOOR: f64 = 0.4;

/// Per-resource throughput fractions (L2 cache, DRAM, SM).
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Throughputs {
    pub l2: f64,
    pub dram: f64,
    pub sm: f64,
}

impl Throughputs {
    pub const ZERO: Throughputs = Throughputs {
        l2: 0.0,
        dram: 0.0,
        sm: 0.0,
    };

    pub const fn new(l2: f64, dram: f64, sm: f64) -> Self {
        Throughputs { l2, dram, sm }
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.l2, self.dram, self.sm]
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        Throughputs::new(a[0], a[1], a[2])
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }

    pub fn all_non_negative(&self) -> bool {
        self.to_array().iter().all(|&v| v >= 0.0)
    }

    pub fn map(self, f: impl Fn(f64) -> f64) -> Self {
        Throughputs::new(f(self.l2), f(self.dram), f(self.sm))
    }

    pub fn zip_with(self, other: Self, f: impl Fn(f64, f64) -> f64) -> Self {
        Throughputs::new(
            f(self.l2, other.l2),
            f(self.dram, other.dram),
            f(self.sm, other.sm),
        )
    }
}

impl Add for Throughputs {
    type Output = Throughputs;

    fn add(self, rhs: Self) -> Self {
        self.zip_with(rhs, |a, b| a + b)
    }
}

impl AddAssign for Throughputs {
    fn add_assign(&mut self, rhs: Self) {
        *self = *self + rhs;
    }
}

impl std::iter::Sum for Throughputs {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(Throughputs::ZERO, Add::add)
    }
}

/// One profiled (model, batch size) record. Field names double as the CSV
/// header.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelProfile {
    pub model_id: String,
    pub batch_size: u32,
    /// Profiled (p95) solo execution duration in milliseconds.
    pub solo_duration_ms: f64,
    pub l2_throughput: f64,
    pub dram_throughput: f64,
    pub sm_throughput: f64,
}

impl ModelProfile {
    pub fn throughputs(&self) -> Throughputs {
        Throughputs::new(self.l2_throughput, self.dram_throughput, self.sm_throughput)
    }

    fn check(&self) -> std::result::Result<(), String> {
        if self.model_id.is_empty() {
            return Err("model_id is empty".into());
        }
        if self.batch_size == 0 {
            return Err("batch_size must be positive".into());
        }
        if !(self.solo_duration_ms.is_finite() && self.solo_duration_ms > 0.0) {
            return Err(format!(
                "solo_duration_ms must be positive, got {}",
                self.solo_duration_ms
            ));
        }
        for (name, v) in [
            ("l2_throughput", self.l2_throughput),
            ("dram_throughput", self.dram_throughput),
            ("sm_throughput", self.sm_throughput),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(format!("{name} = {v} is outside [0, 1]"));
            }
        }
        Ok(())
    }
}

/// Validated profile entries keyed by (model, batch size).
#[derive(Debug, Clone, PartialEq)]
pub struct ProfileTable {
    entries: BTreeMap<(String, u32), ModelProfile>,
    max_batch_size: u32,
}

impl ProfileTable {
    /// Builds a table, checking every per-entry and cross-entry invariant.
    /// The maximum batch size is the largest batch size present.
    pub fn from_entries(rows: impl IntoIterator<Item = ModelProfile>) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, p) in rows.into_iter().enumerate() {
            let row = i + 1;
            p.check()
                .map_err(|message| Error::ProfileRow { row, message })?;
            let key = (p.model_id.clone(), p.batch_size);
            if entries.insert(key, p).is_some() {
                return Err(Error::ProfileRow {
                    row,
                    message: "duplicate (model_id, batch_size)".into(),
                });
            }
        }
        if entries.is_empty() {
            return Err(Error::ProfileTable("no entries".into()));
        }
        let max_batch_size = entries.keys().map(|(_, bs)| *bs).max().unwrap_or(0);
        let table = ProfileTable {
            entries,
            max_batch_size,
        };
        table.check_coverage()?;
        Ok(table)
    }

    fn check_coverage(&self) -> Result<()> {
        for model in self.models() {
            let mut prev = 0.0;
            for bs in 1..=self.max_batch_size {
                let p = self.get(model, bs)?;
                if p.solo_duration_ms < prev {
                    return Err(Error::ProfileTable(format!(
                        "model `{model}`: solo duration decreases at batch size {bs}"
                    )));
                }
                prev = p.solo_duration_ms;
            }
        }
        Ok(())
    }

    pub fn max_batch_size(&self) -> u32 {
        self.max_batch_size
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Distinct model ids in lexicographic order.
    pub fn models(&self) -> impl Iterator<Item = &str> {
        let mut last: Option<&str> = None;
        self.entries.keys().filter_map(move |(m, _)| {
            if last == Some(m.as_str()) {
                None
            } else {
                last = Some(m.as_str());
                last
            }
        })
    }

    pub fn contains_model(&self, model_id: &str) -> bool {
        self.entries
            .contains_key(&(model_id.to_string(), 1))
    }

    pub fn get(&self, model_id: &str, batch_size: u32) -> Result<&ModelProfile> {
        self.entries
            .get(&(model_id.to_string(), batch_size))
            .ok_or_else(|| {
                if self.contains_model(model_id) {
                    Error::MissingBatchSize {
                        model: model_id.to_string(),
                        batch_size,
                    }
                } else {
                    Error::UnknownModel(model_id.to_string())
                }
            })
    }

    pub fn entries(&self) -> impl Iterator<Item = &ModelProfile> {
        self.entries.values()
    }

    pub fn from_reader(reader: impl Read) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let expected = [
            "model_id",
            "batch_size",
            "solo_duration_ms",
            "l2_throughput",
            "dram_throughput",
            "sm_throughput",
        ];
        let header = rdr.headers()?.clone();
        if header.iter().ne(expected.iter().copied()) {
            return Err(Error::ProfileTable(format!(
                "unexpected header `{}`, expected `{}`",
                header.iter().collect::<Vec<_>>().join(","),
                expected.join(",")
            )));
        }
        let mut rows = Vec::new();
        for (i, rec) in rdr.deserialize::<ModelProfile>().enumerate() {
            let row = rec.map_err(|e| Error::ProfileRow {
                row: i + 1,
                message: e.to_string(),
            })?;
            rows.push(row);
        }
        Self::from_entries(rows)
    }

    pub fn to_writer(&self, writer: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        for p in self.entries.values() {
            w.serialize(p)?;
        }
        w.flush().map_err(|e| Error::io("<profile writer>", e))?;
        Ok(())
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        self.to_writer(f)
    }

    /// Requests per second at each batch size, from solo durations only.
    pub fn throughput_curve(&self, model_id: &str) -> Result<Vec<(u32, f64)>> {
        if !self.contains_model(model_id) {
            return Err(Error::UnknownModel(model_id.to_string()));
        }
        (1..=self.max_batch_size)
            .map(|bs| {
                let p = self.get(model_id, bs)?;
                Ok((bs, bs as f64 / (p.solo_duration_ms / 1000.0)))
            })
            .collect()
    }
}

pub fn load_profiles(path: impl AsRef<Path>) -> Result<ProfileTable> {
    let path = path.as_ref();
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    ProfileTable::from_reader(f)
}

/// A model family for the synthetic generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Archetype {
    pub model_id: String,
    /// Solo duration at batch size 1.
    pub base_duration_ms: f64,
    /// 1 means a batch of any size costs as much as a single request; 0 means
    /// no batching benefit at all.
    pub batching_efficiency: f64,
    /// Resource throughput reached at the maximum batch size.
    pub peak: Throughputs,
}

impl Archetype {
    pub fn new(model_id: &str, base_duration_ms: f64, batching_efficiency: f64, peak: Throughputs) -> Self {
        Archetype {
            model_id: model_id.to_string(),
            base_duration_ms,
            batching_efficiency,
            peak,
        }
    }

    pub fn solo_duration_ms(&self, batch_size: u32) -> f64 {
        let slope = 1.0 - self.batching_efficiency;
        self.base_duration_ms * (1.0 + slope * (batch_size as f64 - 1.0))
    }
}

/// Efficiency that makes throughput at `max_batch_size` exactly `gain` times
/// the throughput at batch size 1.
pub fn efficiency_for_gain(gain: f64, max_batch_size: u32) -> f64 {
    let m = max_batch_size as f64;
    1.0 - (m / gain - 1.0) / (m - 1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthesisSpec {
    pub archetypes: Vec<Archetype>,
    pub max_batch_size: u32,
    /// Relative jitter applied to throughput fractions (uniform in ±jitter).
    pub jitter: f64,
}

impl SynthesisSpec {
    /// Six archetypes named after common CNN and transformer models: two
    /// lightweight ones that batch well, one middle, three heavy ones that
    /// saturate early.
    pub fn default_archetypes() -> Self {
        let m = DEFAULT_MAX_BATCH_SIZE;
        SynthesisSpec {
            archetypes: vec![
                Archetype::new("resnet50", 1.4, efficiency_for_gain(3.6, m), Throughputs::new(0.42, 0.40, 0.70)),
                Archetype::new("yolov8n", 1.1, efficiency_for_gain(3.2, m), Throughputs::new(0.35, 0.68, 0.45)),
                Archetype::new("vgg19", 3.2, efficiency_for_gain(1.9, m), Throughputs::new(0.40, 0.75, 0.62)),
                Archetype::new("roberta-b", 3.0, efficiency_for_gain(1.265, m), Throughputs::new(0.58, 0.55, 0.64)),
                Archetype::new("vit-b-16", 3.8, efficiency_for_gain(1.45, m), Throughputs::new(0.48, 0.42, 0.80)),
                Archetype::new("convnext-b", 4.4, efficiency_for_gain(1.35, m), Throughputs::new(0.54, 0.62, 0.60)),
            ],
            max_batch_size: m,
            jitter: 0.02,
        }
    }
}

/// Generates a profile table where solo duration grows linearly with batch
/// size at slope `1 - efficiency` and resource throughput rises from 40% of
/// peak towards peak in proportion to the achieved request throughput.
pub fn gen_synthetic_profiles(spec: &SynthesisSpec, seed: u64) -> Result<ProfileTable> {
    if spec.max_batch_size == 0 {
        return Err(Error::InvalidInput("max_batch_size must be positive".into()));
    }
    if !(0.0..1.0).contains(&spec.jitter) {
        return Err(Error::InvalidInput(format!("jitter {} outside [0, 1)", spec.jitter)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::new();
    for a in &spec.archetypes {
        if !(0.0..=1.0).contains(&a.batching_efficiency) {
            return Err(Error::InvalidInput(format!(
                "archetype `{}`: batching_efficiency {} outside [0, 1]",
                a.model_id, a.batching_efficiency
            )));
        }
        if !(a.base_duration_ms > 0.0 && a.base_duration_ms.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "archetype `{}`: base_duration_ms must be positive",
                a.model_id
            )));
        }
        let max = spec.max_batch_size;
        let peak_rate = max as f64 / a.solo_duration_ms(max);
        for bs in 1..=max {
            let duration = a.solo_duration_ms(bs);
            let utilization = UTILIZATION_FLOOR + (1.0 - UTILIZATION_FLOOR) * (bs as f64 / duration) / peak_rate;
            let mut jittered = |v: f64| {
                let j = 1.0 + spec.jitter * rng.random_range(-1.0..=1.0);
                (v * utilization * j).clamp(0.0, 1.0)
            };
            let l2 = jittered(a.peak.l2);
            let dram = jittered(a.peak.dram);
            let sm = jittered(a.peak.sm);
            rows.push(ModelProfile {
                model_id: a.model_id.clone(),
                batch_size: bs,
                solo_duration_ms: duration,
                l2_throughput: l2,
                dram_throughput: dram,
                sm_throughput: sm,
            });
        }
    }
    ProfileTable::from_entries(rows)
}
