use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context as _, Result};
use colosim::colocation::write_samples_csv;
use colosim::experiment::{ewma_experiment, run_drift_experiment, LearnerConfig, Split, DRIFT_METHODS};
use colosim::metrics::{slo_report, write_requests_csv};
use colosim::predict::{write_eval_csv, EvalReport};
use colosim::presets::{drift_base, high_churn_suite};
use colosim::profile::{gen_synthetic_profiles, load_profiles, SynthesisSpec};
use colosim::sim::{write_outcomes_csv, write_segments_csv};
use colosim::workload::{generate_arrivals, load_scenario, write_trace_csv};
use colosim::{run_scenario, ColocationMode, ProfileTable, ScenarioRun, ScenarioSpec};
use log::info;
use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::output::{check_fraction, slug, OutputDir};
use crate::{DriftArgs, EwmaArgs, GenProfilesArgs, SimulateArgs, ValidateArgs};

pub struct Context {
    pub out: PathBuf,
    pub profiles: Option<PathBuf>,
}

/// Where the profile table came from, plus a digest of its contents so the
/// manifest hash changes whenever the table does.
#[derive(Serialize)]
struct ProfileSource {
    path: Option<String>,
    sha256: String,
}

impl Context {
    fn table(&self) -> Result<(ProfileTable, ProfileSource)> {
        let table = match &self.profiles {
            Some(p) => load_profiles(p).with_context(|| format!("loading profiles from {}", p.display()))?,
            None => gen_synthetic_profiles(&SynthesisSpec::default_archetypes(), 0)?,
        };
        let mut csv = Vec::new();
        table.to_writer(&mut csv)?;
        let sha256 = Sha256::digest(&csv).iter().map(|b| format!("{b:02x}")).collect();
        let source = ProfileSource {
            path: self.profiles.as_ref().map(|p| p.display().to_string()),
            sha256,
        };
        Ok((table, source))
    }
}

fn load_scenarios(paths: &[PathBuf], table: &ProfileTable) -> Result<Vec<ScenarioSpec>> {
    paths
        .iter()
        .map(|p| {
            let spec = load_scenario(p).with_context(|| format!("reading scenario {}", p.display()))?;
            spec.resolve(table)
                .with_context(|| format!("scenario {} does not fit the profile table", p.display()))?;
            Ok(spec)
        })
        .collect()
}

fn unique_slugs(specs: &[ScenarioSpec]) -> Result<Vec<String>> {
    let slugs: Vec<String> = specs.iter().map(|s| slug(&s.name)).collect();
    let mut seen = HashSet::new();
    for (s, spec) in slugs.iter().zip(specs) {
        if !seen.insert(s) {
            bail!("two scenarios are named `{}`; names must be unique", spec.name);
        }
    }
    Ok(slugs)
}

#[derive(Serialize)]
struct SimulateConfig<'a> {
    profiles: ProfileSource,
    scenarios: &'a [ScenarioSpec],
    seeds: Option<&'a [u64]>,
    detail: bool,
    warmup_ms: f64,
}

#[derive(Serialize)]
struct SloRow<'a> {
    scenario: &'a str,
    seed: u64,
    model_id: &'a str,
    n_requests: usize,
    slo_satisfaction: f64,
    p50_ms: f64,
    p95_ms: f64,
    p99_ms: f64,
}

pub fn simulate(ctx: &Context, args: SimulateArgs) -> Result<()> {
    let (table, source) = ctx.table()?;
    let specs = load_scenarios(&args.scenarios, &table)?;
    let slugs = unique_slugs(&specs)?;
    if !(args.warmup_ms >= 0.0) {
        bail!("--warmup-ms must be non-negative");
    }

    let jobs: Vec<(usize, ScenarioSpec)> = specs
        .iter()
        .enumerate()
        .flat_map(|(i, spec)| {
            let seeds = args.seeds.as_ref().map_or_else(|| vec![spec.seed], |s| s.0.clone());
            seeds.into_iter().map(move |seed| {
                (
                    i,
                    ScenarioSpec {
                        seed,
                        ..spec.clone()
                    },
                )
            })
        })
        .collect();
    let runs: Vec<ScenarioRun> = jobs
        .par_iter()
        .map(|(_, spec)| {
            info!("simulating {} seed {}", spec.name, spec.seed);
            run_scenario(spec, &table).with_context(|| format!("simulating {} seed {}", spec.name, spec.seed))
        })
        .collect::<Result<_>>()?;

    let mut out = OutputDir::create(&ctx.out)?;
    let mut slo_rows = Vec::new();
    for ((i, spec), run) in jobs.iter().zip(&runs) {
        let dir = format!("{}/seed-{}", slugs[*i], spec.seed);
        write_outcomes_csv(&run.outcomes, out.file(&format!("{dir}/outcomes.csv"))?)?;
        write_requests_csv(&run.requests, out.file(&format!("{dir}/requests.csv"))?)?;
        write_samples_csv(&run.samples, out.file(&format!("{dir}/samples.csv"))?)?;
        if args.detail {
            let arrivals = generate_arrivals(spec, &spec.resolve(&table)?);
            write_trace_csv(&arrivals, out.file(&format!("{dir}/trace.csv"))?)?;
            write_segments_csv(&run.outcomes, out.file(&format!("{dir}/segments.csv"))?)?;
        }
        let report = slo_report(&run.requests, args.warmup_ms).unwrap_or_default();
        let satisfied: f64 = report.iter().map(|r| r.slo_satisfaction * r.n_requests as f64).sum();
        let counted: usize = report.iter().map(|r| r.n_requests).sum();
        println!(
            "{} seed {}: {} requests in {} batches, max {} running, SLO met {:.1}%",
            spec.name,
            spec.seed,
            run.requests.len(),
            run.outcomes.len(),
            run.max_running,
            100.0 * satisfied / counted.max(1) as f64
        );
        slo_rows.push((spec.name.clone(), spec.seed, report));
    }
    let mut w = out.csv("slo_summary.csv")?;
    for (name, seed, report) in &slo_rows {
        for r in report {
            w.serialize(SloRow {
                scenario: name,
                seed: *seed,
                model_id: &r.model_id,
                n_requests: r.n_requests,
                slo_satisfaction: r.slo_satisfaction,
                p50_ms: r.p50_ms,
                p95_ms: r.p95_ms,
                p99_ms: r.p99_ms,
            })?;
        }
    }
    w.flush()?;

    let seeds: Vec<u64> = {
        let mut s: Vec<u64> = jobs.iter().map(|(_, spec)| spec.seed).collect();
        s.sort_unstable();
        s.dedup();
        s
    };
    let config = SimulateConfig {
        profiles: source,
        scenarios: &specs,
        seeds: args.seeds.as_ref().map(|s| s.0.as_slice()),
        detail: args.detail,
        warmup_ms: args.warmup_ms,
    };
    let manifest = out.finish("simulate", &config, &seeds)?;
    println!("wrote {} output sets, manifest at {}", runs.len(), manifest.display());
    Ok(())
}

#[derive(Serialize)]
struct EwmaConfig<'a> {
    profiles: ProfileSource,
    scenarios: Option<&'a [ScenarioSpec]>,
    duration_s: f64,
    modes: &'a [ColocationMode],
    split_fraction: f64,
    split: &'static str,
}

#[derive(Serialize)]
struct SeedEvalRow<'a> {
    seed: u64,
    dataset: &'a str,
    method: &'a str,
    mse: f64,
    rel_p25: f64,
    rel_p50: f64,
    rel_p75: f64,
    rel_p95: f64,
    n_samples: usize,
}

impl<'a> SeedEvalRow<'a> {
    fn new(seed: u64, r: &'a EvalReport) -> Self {
        SeedEvalRow {
            seed,
            dataset: &r.dataset,
            method: &r.method,
            mse: r.mse,
            rel_p25: r.rel_p25,
            rel_p50: r.rel_p50,
            rel_p75: r.rel_p75,
            rel_p95: r.rel_p95,
            n_samples: r.n_samples,
        }
    }
}

fn print_reports(reports: &[EvalReport]) {
    println!(
        "{:<22} {:<14} {:>10} {:>9} {:>9} {:>9} {:>9} {:>8}",
        "dataset", "method", "mse", "rel_p25", "rel_p50", "rel_p75", "rel_p95", "n"
    );
    for r in reports {
        println!(
            "{:<22} {:<14} {:>10.6} {:>9.4} {:>9.4} {:>9.4} {:>9.4} {:>8}",
            r.dataset, r.method, r.mse, r.rel_p25, r.rel_p50, r.rel_p75, r.rel_p95, r.n_samples
        );
    }
}

pub fn ewma_exp(ctx: &Context, args: EwmaArgs) -> Result<()> {
    let (table, source) = ctx.table()?;
    check_fraction("--split-fraction", args.split_fraction)?;
    if !(args.duration_s > 0.0) {
        bail!("--duration-s must be positive");
    }
    let mut modes = vec![ColocationMode::Static];
    for a in &args.alphas {
        let mode: ColocationMode = format!("ewma:{a}").parse().with_context(|| format!("bad --alphas entry `{a}`"))?;
        modes.push(mode);
    }
    let files = load_scenarios(&args.scenarios, &table)?;
    let split_for = |seed: u64| Split {
        train_fraction: args.split_fraction,
        kind: args.split.into(),
        seed,
    };

    let seeds = &args.seeds.0;
    let mut jobs = Vec::new();
    for (k, &seed) in seeds.iter().enumerate() {
        let suite = if files.is_empty() {
            high_churn_suite(&table, seed, args.duration_s)?
        } else {
            files
                .iter()
                .enumerate()
                .map(|(i, s)| ScenarioSpec {
                    seed: seed.wrapping_mul(31).wrapping_add(i as u64),
                    ..s.clone()
                })
                .collect()
        };
        jobs.extend(suite.into_iter().map(|s| (k, s)));
    }
    let runs: Vec<ScenarioRun> = jobs
        .par_iter()
        .map(|(_, spec)| run_scenario(spec, &table).with_context(|| format!("simulating {}", spec.name)))
        .collect::<Result<_>>()?;

    let mut per_seed = Vec::new();
    for (k, &seed) in seeds.iter().enumerate() {
        let mine: Vec<ScenarioRun> = jobs
            .iter()
            .zip(&runs)
            .filter(|((j, _), _)| *j == k)
            .map(|(_, r)| r.clone())
            .collect();
        let rows = ewma_experiment(&mine, &modes, split_for(seed)).with_context(|| format!("seed {seed}"))?;
        per_seed.push((seed, rows));
    }
    let pooled: Vec<EvalReport> = ewma_experiment(&runs, &modes, split_for(seeds[0]))?
        .into_iter()
        .map(|m| EvalReport {
            dataset: "pooled".into(),
            ..m.report
        })
        .collect();

    let mut out = OutputDir::create(&ctx.out)?;
    write_eval_csv(&pooled, out.file("ewma_report.csv")?)?;
    let mut w = out.csv("ewma_per_seed.csv")?;
    for (seed, rows) in &per_seed {
        for m in rows {
            w.serialize(SeedEvalRow::new(*seed, &m.report))?;
        }
    }
    w.flush()?;

    print_reports(&pooled);
    let half = modes.iter().position(|m| *m == ColocationMode::Ewma(0.5));
    if let Some(h) = half {
        let wins = per_seed
            .iter()
            .filter(|(_, rows)| rows[h].report.rel_p50 <= rows[0].report.rel_p50)
            .count();
        println!("ewma(1/2) median relative error <= static in {wins}/{} seeds", seeds.len());
    }
    let config = EwmaConfig {
        profiles: source,
        scenarios: (!files.is_empty()).then_some(files.as_slice()),
        duration_s: args.duration_s,
        modes: &modes,
        split_fraction: args.split_fraction,
        split: match args.split {
            crate::SplitArg::Chronological => "chronological",
            crate::SplitArg::Random => "random",
        },
    };
    out.finish("ewma-exp", &config, seeds)?;
    Ok(())
}

#[derive(Serialize)]
struct DriftConfig<'a> {
    profiles: ProfileSource,
    base: Option<&'a ScenarioSpec>,
    duration_s: f64,
    learner: LearnerConfig,
}

#[derive(Serialize)]
struct TableRow<'a> {
    dataset: &'a str,
    offline: f64,
    sgd: f64,
    rls: f64,
}

pub fn drift_exp(ctx: &Context, args: DriftArgs) -> Result<()> {
    let (table, source) = ctx.table()?;
    if !(args.duration_s > 0.0) {
        bail!("--duration-s must be positive");
    }
    let base_file = match &args.base {
        Some(p) => Some(load_scenario(p).with_context(|| format!("reading base scenario {}", p.display()))?),
        None => None,
    };
    let cfg = LearnerConfig {
        mode: args.mode,
        sgd_eta: args.eta,
        rls_lambda: args.lambda,
        rls_delta: args.delta,
    };
    let seeds = &args.seeds.0;
    let reports = seeds
        .par_iter()
        .map(|&seed| {
            let base = match &base_file {
                Some(b) => ScenarioSpec { seed, ..b.clone() },
                None => drift_base(&table, seed, args.duration_s)?,
            };
            run_drift_experiment(&base, &table, cfg).with_context(|| format!("drift experiment, seed {seed}"))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut out = OutputDir::create(&ctx.out)?;
    let mut w = out.csv("drift_per_seed.csv")?;
    for (seed, rep) in seeds.iter().zip(&reports) {
        for r in &rep.rows {
            w.serialize(SeedEvalRow::new(*seed, r))?;
        }
    }
    w.flush()?;
    fs::create_dir_all(out.path("models"))?;
    for (seed, rep) in seeds.iter().zip(&reports) {
        let rel = format!("models/warm_start_seed-{seed}.toml");
        rep.warm_start.save(out.path(&rel))?;
        out.record(&rel);
    }

    // mean over seeds, rows in the order of the first report
    let n = reports.len() as f64;
    let mut acc: BTreeMap<(String, String), EvalReport> = BTreeMap::new();
    for rep in &reports {
        for r in &rep.rows {
            let e = acc.entry((r.dataset.clone(), r.method.clone())).or_insert_with(|| EvalReport {
                mse: 0.0,
                rel_p25: 0.0,
                rel_p50: 0.0,
                rel_p75: 0.0,
                rel_p95: 0.0,
                n_samples: 0,
                ..r.clone()
            });
            e.mse += r.mse / n;
            e.rel_p25 += r.rel_p25 / n;
            e.rel_p50 += r.rel_p50 / n;
            e.rel_p75 += r.rel_p75 / n;
            e.rel_p95 += r.rel_p95 / n;
            e.n_samples += r.n_samples;
        }
    }
    let mean: Vec<EvalReport> = reports[0]
        .rows
        .iter()
        .map(|r| acc[&(r.dataset.clone(), r.method.clone())].clone())
        .collect();
    write_eval_csv(&mean, out.file("drift_report.csv")?)?;

    let datasets: Vec<&str> = {
        let mut d: Vec<&str> = Vec::new();
        for r in &mean {
            if !d.contains(&r.dataset.as_str()) {
                d.push(&r.dataset);
            }
        }
        d
    };
    let mse = |d: &str, m: &str| acc[&(d.to_string(), m.to_string())].mse;
    let mut w = out.csv("drift_table.csv")?;
    println!("mean MSE over {} seeds", seeds.len());
    println!("{:<22} {:>10} {:>10} {:>10}", "dataset", DRIFT_METHODS[0], DRIFT_METHODS[1], DRIFT_METHODS[2]);
    for d in &datasets {
        let row = TableRow {
            dataset: d,
            offline: mse(d, "offline"),
            sgd: mse(d, "sgd"),
            rls: mse(d, "rls"),
        };
        println!("{:<22} {:>10.6} {:>10.6} {:>10.6}", row.dataset, row.offline, row.sgd, row.rls);
        w.serialize(row)?;
    }
    w.flush()?;

    let config = DriftConfig {
        profiles: source,
        base: base_file.as_ref(),
        duration_s: args.duration_s,
        learner: cfg,
    };
    out.finish("drift-exp", &config, seeds)?;
    Ok(())
}

#[derive(Serialize)]
struct GenConfig<'a> {
    seed: u64,
    synthesis: &'a SynthesisSpec,
}

pub fn gen_profiles(ctx: &Context, args: GenProfilesArgs) -> Result<()> {
    let spec = match &args.archetypes {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            toml::from_str(&text).with_context(|| format!("parsing archetypes in {}", p.display()))?
        }
        None => SynthesisSpec::default_archetypes(),
    };
    let table = gen_synthetic_profiles(&spec, args.seed)?;
    let mut out = OutputDir::create(&ctx.out)?;
    match &args.output {
        Some(path) => {
            write_table(&table, path)?;
            out.record(&path.display().to_string());
        }
        None => {
            let mut f = out.file("profiles.csv")?;
            table.to_writer(&mut f)?;
            f.flush()?;
        }
    }
    println!(
        "{} models x {} batch sizes = {} entries",
        table.models().count(),
        table.max_batch_size(),
        table.len()
    );
    out.finish(
        "gen-profiles",
        &GenConfig {
            seed: args.seed,
            synthesis: &spec,
        },
        &[args.seed],
    )?;
    Ok(())
}

fn write_table(table: &ProfileTable, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    table
        .write_csv(path)
        .with_context(|| format!("writing {}", path.display()))
}

pub fn validate(ctx: &Context, args: ValidateArgs) -> Result<()> {
    let (table, source) = ctx.table()?;
    println!(
        "profiles {}: {} models, batch sizes 1..={}, sha256 {}",
        source.path.as_deref().unwrap_or("<built-in>"),
        table.models().count(),
        table.max_batch_size(),
        &source.sha256[..16]
    );
    let mut failed = 0;
    for p in &args.scenarios {
        match load_scenario(p).and_then(|s| s.resolve(&table).map(|r| (s, r))) {
            Ok((spec, resolved)) => {
                let rate: f64 = resolved.iter().map(|m| m.arrival_rate_rps).sum();
                println!(
                    "ok   {}: `{}`, {} models, {rate:.1} req/s, cap {}, {} s",
                    p.display(),
                    spec.name,
                    resolved.len(),
                    spec.concurrency_cap,
                    spec.duration_s
                );
            }
            Err(e) => {
                failed += 1;
                println!("FAIL {}: {e}", p.display());
            }
        }
    }
    if failed > 0 {
        bail!("{failed} of {} scenarios failed validation", args.scenarios.len());
    }
    Ok(())
}
