//! Scenario configuration and reproducible Poisson arrival traces.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::colocation::ColocationMode;
use crate::error::{Error, Result};
use crate::oracle::InterferenceOracle;
use crate::profile::{ProfileTable, DEFAULT_MAX_BATCH_SIZE};

/// SLO default, as a multiple of the solo duration at batch size 1.
pub const DEFAULT_SLO_FACTOR: f64 = 5.0;
/// Batching window default, as a multiple of the solo duration at batch size 1.
pub const DEFAULT_WINDOW_FACTOR: f64 = 2.0;
/// Load multipliers for the load-shift drift set, applied alternately.
pub const LOAD_SHIFT_FACTORS: [f64; 2] = [0.25, 4.0];
/// Rate multiplier for the all-models drift set, keeping the node's offered
/// load in line with the single-subset sets.
pub const UNION_RATE_SCALE: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeployedModel {
    pub model_id: String,
    /// Profile to execute with; defaults to `model_id`. Lets several
    /// independent tasks share one model's profile.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub profile: Option<String>,
    pub arrival_rate_rps: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slo_ms: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batching_window_ms: Option<f64>,
}

impl DeployedModel {
    pub fn new(model_id: &str, arrival_rate_rps: f64) -> Self {
        DeployedModel {
            model_id: model_id.to_string(),
            profile: None,
            arrival_rate_rps,
            slo_ms: None,
            batching_window_ms: None,
        }
    }

    /// A task named `model_id` that runs `profile`'s entries.
    pub fn task(model_id: &str, profile: &str, arrival_rate_rps: f64) -> Self {
        DeployedModel {
            profile: Some(profile.to_string()),
            ..Self::new(model_id, arrival_rate_rps)
        }
    }

    pub fn profile_id(&self) -> &str {
        self.profile.as_deref().unwrap_or(&self.model_id)
    }
}

fn default_max_batch_size() -> u32 {
    DEFAULT_MAX_BATCH_SIZE
}

fn default_cap() -> usize {
    2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    #[serde(default = "default_name")]
    pub name: String,
    pub duration_s: f64,
    /// Overrides the per-model default window when set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batching_window_ms: Option<f64>,
    #[serde(default = "default_max_batch_size")]
    pub max_batch_size: u32,
    #[serde(default = "default_cap")]
    pub concurrency_cap: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub colocation_mode: ColocationMode,
    #[serde(default)]
    pub oracle: InterferenceOracle,
    pub deployed: Vec<DeployedModel>,
}

fn default_name() -> String {
    "scenario".into()
}

/// A deployed model with every default filled in from the profile table.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedModel {
    pub model_id: String,
    pub profile_id: String,
    pub arrival_rate_rps: f64,
    pub slo_ms: f64,
    pub batching_window_ms: f64,
}

impl ScenarioSpec {
    pub fn new(name: &str, duration_s: f64, deployed: Vec<DeployedModel>) -> Self {
        ScenarioSpec {
            name: name.to_string(),
            duration_s,
            batching_window_ms: None,
            max_batch_size: DEFAULT_MAX_BATCH_SIZE,
            concurrency_cap: 2,
            seed: 0,
            colocation_mode: ColocationMode::default(),
            oracle: InterferenceOracle::default(),
            deployed,
        }
    }

    /// Checks the spec on its own, without a profile table.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Scenario(format!("{}: {m}", self.name)));
        if self.deployed.is_empty() {
            return bad("no deployed models".into());
        }
        if !(self.duration_s.is_finite() && self.duration_s > 0.0) {
            return bad(format!("duration_s must be positive, got {}", self.duration_s));
        }
        if self.max_batch_size == 0 {
            return bad("max_batch_size must be positive".into());
        }
        if self.concurrency_cap == 0 {
            return bad("concurrency_cap must be positive".into());
        }
        if let Some(w) = self.batching_window_ms {
            if !(w.is_finite() && w >= 0.0) {
                return bad(format!("batching_window_ms must be non-negative, got {w}"));
            }
        }
        self.colocation_mode.validate()?;
        self.oracle.validate().map_err(Error::Scenario)?;
        let mut seen = std::collections::HashSet::new();
        for d in &self.deployed {
            if !seen.insert(d.model_id.as_str()) {
                return bad(format!("model `{}` deployed twice", d.model_id));
            }
            if !(d.arrival_rate_rps.is_finite() && d.arrival_rate_rps >= 0.0) {
                return bad(format!("`{}`: arrival rate must be non-negative", d.model_id));
            }
            if let Some(slo) = d.slo_ms {
                if !(slo > 0.0) {
                    return bad(format!("`{}`: slo_ms must be positive", d.model_id));
                }
            }
            if let Some(w) = d.batching_window_ms {
                if !(w.is_finite() && w >= 0.0) {
                    return bad(format!("`{}`: batching window must be non-negative", d.model_id));
                }
            }
        }
        Ok(())
    }

    /// Validates against `table` and fills in SLO and window defaults.
    pub fn resolve(&self, table: &ProfileTable) -> Result<Vec<ResolvedModel>> {
        self.validate()?;
        if self.max_batch_size > table.max_batch_size() {
            return Err(Error::Scenario(format!(
                "{}: max_batch_size {} exceeds profiled maximum {}",
                self.name,
                self.max_batch_size,
                table.max_batch_size()
            )));
        }
        self.deployed
            .iter()
            .map(|d| {
                let solo1 = table.get(d.profile_id(), 1)?.solo_duration_ms;
                Ok(ResolvedModel {
                    model_id: d.model_id.clone(),
                    profile_id: d.profile_id().to_string(),
                    arrival_rate_rps: d.arrival_rate_rps,
                    slo_ms: d.slo_ms.unwrap_or(DEFAULT_SLO_FACTOR * solo1),
                    batching_window_ms: d
                        .batching_window_ms
                        .or(self.batching_window_ms)
                        .unwrap_or(DEFAULT_WINDOW_FACTOR * solo1),
                })
            })
            .collect()
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let spec: ScenarioSpec = toml::from_str(s)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn model_ids(&self) -> Vec<&str> {
        self.deployed.iter().map(|d| d.model_id.as_str()).collect()
    }
}

pub fn load_scenario(path: impl AsRef<Path>) -> Result<ScenarioSpec> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    ScenarioSpec::from_toml_str(&text)
}

/// Arrival rate that offers `rho` times the solo capacity of `profile` when
/// every batch has `batch_size` requests.
pub fn rate_for_utilization(table: &ProfileTable, profile: &str, rho: f64, batch_size: u32) -> Result<f64> {
    let p = table.get(profile, batch_size)?;
    Ok(rho * batch_size as f64 * 1000.0 / p.solo_duration_ms)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RequestEvent {
    pub request_id: u64,
    pub model_id: String,
    pub arrival_time_ms: f64,
    pub deadline_ms: f64,
}

/// FNV-1a, used to pick a per-model ChaCha stream.
fn stream_id(model_id: &str) -> u64 {
    model_id.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// Poisson arrivals over `[0, duration)` for one model, inverse-CDF sampled
/// from that model's own sub-stream of the scenario seed.
pub fn poisson_arrival_times(model_id: &str, rate_rps: f64, duration_ms: f64, seed: u64) -> Vec<f64> {
    if rate_rps <= 0.0 {
        return Vec::new();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream_id(model_id));
    let mean_gap_ms = 1000.0 / rate_rps;
    let mut t = 0.0;
    let mut out = Vec::with_capacity((duration_ms / mean_gap_ms * 1.1) as usize + 4);
    loop {
        let u: f64 = rng.random();
        t += -(1.0 - u).ln() * mean_gap_ms;
        if t >= duration_ms {
            break;
        }
        out.push(t);
    }
    out
}

/// Merged, time-ordered request trace; request ids follow the global order.
pub fn generate_arrivals(spec: &ScenarioSpec, resolved: &[ResolvedModel]) -> Vec<RequestEvent> {
    let duration_ms = spec.duration_s * 1000.0;
    let mut events: Vec<(f64, usize)> = resolved
        .iter()
        .enumerate()
        .flat_map(|(i, m)| {
            poisson_arrival_times(&m.model_id, m.arrival_rate_rps, duration_ms, spec.seed)
                .into_iter()
                .map(move |t| (t, i))
        })
        .collect();
    events.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    events
        .into_iter()
        .enumerate()
        .map(|(id, (t, i))| RequestEvent {
            request_id: id as u64,
            model_id: resolved[i].model_id.clone(),
            arrival_time_ms: t,
            deadline_ms: t + resolved[i].slo_ms,
        })
        .collect()
}

pub fn write_trace_csv(events: &[RequestEvent], writer: impl Write) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(writer);
    w.write_record(["request_id", "model_id", "arrival_time_ms", "deadline_ms"])?;
    for e in events {
        w.serialize(e)?;
    }
    w.flush().map_err(|e| Error::io("<trace writer>", e))?;
    Ok(())
}

/// The four datasets of the drift experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct DriftScenarios {
    /// A subset S1 of the deployed models.
    pub training: ScenarioSpec,
    /// S1 with every arrival rate scaled far outside [0.5, 2].
    pub load_shift: ScenarioSpec,
    /// The disjoint remainder S2.
    pub unseen_models: ScenarioSpec,
    /// S1 and S2 together, each at [`UNION_RATE_SCALE`] of its base rate.
    pub all_models: ScenarioSpec,
}

impl DriftScenarios {
    pub fn named(&self) -> [(&'static str, &ScenarioSpec); 4] {
        [
            ("training", &self.training),
            ("test1_load_shift", &self.load_shift),
            ("test2_unseen_models", &self.unseen_models),
            ("test3_all_models", &self.all_models),
        ]
    }
}

/// Splits `base.deployed` in order: the first half forms S1, the rest S2.
pub fn drift_scenarios(base: &ScenarioSpec) -> Result<DriftScenarios> {
    base.validate()?;
    let n = base.deployed.len();
    if n < 4 {
        return Err(Error::Scenario(format!(
            "drift scenarios need at least 4 deployed models, got {n}"
        )));
    }
    let (s1, s2) = base.deployed.split_at(n / 2);
    let derive = |suffix: &str, deployed: Vec<DeployedModel>, salt: u64| ScenarioSpec {
        name: format!("{}-{suffix}", base.name),
        seed: base.seed.wrapping_add(salt),
        deployed,
        ..base.clone()
    };
    let scaled = |models: &[DeployedModel], factor: fn(usize) -> f64| -> Vec<DeployedModel> {
        models
            .iter()
            .enumerate()
            .map(|(i, d)| DeployedModel {
                arrival_rate_rps: d.arrival_rate_rps * factor(i),
                ..d.clone()
            })
            .collect()
    };
    let shifted = scaled(s1, |i| LOAD_SHIFT_FACTORS[i % 2]);
    Ok(DriftScenarios {
        training: derive("training", s1.to_vec(), 0),
        load_shift: derive("test1", shifted, 1),
        unseen_models: derive("test2", s2.to_vec(), 2),
        all_models: derive("test3", scaled(&base.deployed, |_| UNION_RATE_SCALE), 3),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::profile::{gen_synthetic_profiles, SynthesisSpec};

    fn table() -> ProfileTable {
        gen_synthetic_profiles(&SynthesisSpec::default_archetypes(), 1).unwrap()
    }

    fn six(rate: f64) -> ScenarioSpec {
        let t = table();
        let deployed = t.models().map(|m| DeployedModel::new(m, rate)).collect();
        ScenarioSpec::new("base", 1.0, deployed)
    }

    #[test]
    fn zero_rate_yields_no_events() {
        assert!(poisson_arrival_times("m", 0.0, 1000.0, 1).is_empty());
        let mut spec = six(50.0);
        spec.deployed[0].arrival_rate_rps = 0.0;
        let resolved = spec.resolve(&table()).unwrap();
        let ev = generate_arrivals(&spec, &resolved);
        assert!(ev.iter().all(|e| e.model_id != spec.deployed[0].model_id));
        assert!(!ev.is_empty());
    }

    #[test]
    fn merged_trace_is_sorted_with_unique_ids_and_deadlines() {
        let spec = six(200.0);
        let resolved = spec.resolve(&table()).unwrap();
        let ev = generate_arrivals(&spec, &resolved);
        for w in ev.windows(2) {
            assert!(w[0].arrival_time_ms <= w[1].arrival_time_ms);
            assert!(w[0].request_id < w[1].request_id);
        }
        for e in &ev {
            let m = resolved.iter().find(|m| m.model_id == e.model_id).unwrap();
            assert!((e.deadline_ms - e.arrival_time_ms - m.slo_ms).abs() < 1e-9);
        }
    }

    #[test]
    fn adding_a_model_does_not_perturb_others() {
        let a = poisson_arrival_times("resnet50", 100.0, 5000.0, 9);
        let spec = six(100.0);
        let resolved = spec.resolve(&table()).unwrap();
        let merged: Vec<f64> = generate_arrivals(&spec, &resolved)
            .into_iter()
            .filter(|e| e.model_id == "resnet50")
            .map(|e| e.arrival_time_ms)
            .collect();
        let alone = poisson_arrival_times("resnet50", 100.0, 1000.0, spec.seed);
        assert_eq!(merged, alone);
        assert_eq!(a, poisson_arrival_times("resnet50", 100.0, 5000.0, 9));
    }

    #[test]
    fn defaults_resolve_from_profiles() {
        let t = table();
        let spec = six(10.0);
        let r = spec.resolve(&t).unwrap();
        let solo1 = t.get(&r[0].profile_id, 1).unwrap().solo_duration_ms;
        assert!((r[0].slo_ms - 5.0 * solo1).abs() < 1e-12);
        assert!((r[0].batching_window_ms - 2.0 * solo1).abs() < 1e-12);
    }

    #[test]
    fn unknown_model_is_rejected() {
        let spec = ScenarioSpec::new("x", 1.0, vec![DeployedModel::new("nope", 1.0)]);
        assert!(matches!(spec.resolve(&table()), Err(Error::UnknownModel(_))));
    }

    #[test]
    fn toml_round_trip() {
        let mut spec = six(12.5);
        spec.colocation_mode = ColocationMode::Ewma(0.5);
        spec.deployed[1].slo_ms = Some(40.0);
        let text = spec.to_toml_string().unwrap();
        assert_eq!(ScenarioSpec::from_toml_str(&text).unwrap(), spec);
    }

    #[test]
    fn minimal_toml_uses_defaults() {
        let spec = ScenarioSpec::from_toml_str(
            r#"
            duration_s = 2.0
            [[deployed]]
            model_id = "resnet50"
            arrival_rate_rps = 100.0
            "#,
        )
        .unwrap();
        assert_eq!(spec.max_batch_size, 8);
        assert_eq!(spec.concurrency_cap, 2);
        assert_eq!(spec.colocation_mode, ColocationMode::Static);
        assert_eq!(spec.oracle, InterferenceOracle::default());
    }

    #[test]
    fn drift_sets_follow_set_algebra() {
        let base = six(100.0);
        let d = drift_scenarios(&base).unwrap();
        let ids = |s: &ScenarioSpec| s.model_ids().into_iter().map(String::from).collect::<Vec<_>>();
        let s1 = ids(&d.training);
        let s2 = ids(&d.unseen_models);
        assert_eq!(s1.len(), 3);
        assert_eq!(s2.len(), 3);
        assert!(s1.iter().all(|m| !s2.contains(m)));
        assert_eq!(ids(&d.load_shift), s1);
        let mut all = ids(&d.all_models);
        all.sort();
        let mut union = [s1.clone(), s2.clone()].concat();
        union.sort();
        assert_eq!(all, union);
        for (orig, union) in base.deployed.iter().zip(&d.all_models.deployed) {
            assert_eq!(union.arrival_rate_rps, orig.arrival_rate_rps * UNION_RATE_SCALE);
        }
        for (orig, shifted) in d.training.deployed.iter().zip(&d.load_shift.deployed) {
            let f = shifted.arrival_rate_rps / orig.arrival_rate_rps;
            assert!(!(0.5..=2.0).contains(&f), "{f}");
        }
    }

    #[test]
    fn drift_needs_four_models() {
        let mut base = six(1.0);
        base.deployed.truncate(3);
        assert!(drift_scenarios(&base).is_err());
    }

    #[test]
    fn utilization_helper() {
        let t = table();
        let r = rate_for_utilization(&t, "resnet50", 0.5, 1).unwrap();
        let d = t.get("resnet50", 1).unwrap().solo_duration_ms;
        assert!((r - 500.0 / d).abs() < 1e-9);
    }
}
