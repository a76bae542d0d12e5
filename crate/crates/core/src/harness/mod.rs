//! Experiment plumbing behind the `grn-lab` binary. Every command writes
//! plain CSV/JSON under the output directory; the column sets are listed in
//! `schemas/` at the repository root.

mod config;

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::Serialize;

pub use config::{EvalConfig, ExperimentConfig, DEFAULT_OUT};

use crate::error::{GrnError, Result};
use crate::hbq::{dequantize, dequantize_code, quantize_value};
use crate::numerics::Rng;
use crate::predictor::{init_params, PredictorParams};
use crate::refine::{adaptive_total_steps, ratio_with_denominator, ScheduleConfig, TokenMap};
use crate::sampler::{batch_sample, write_trace_csv, Mode, SampleConfig, SampleTrace, SelectionRule};
use crate::synthdata::{build_dataset, load_dataset, save_dataset, Dataset, Record};
use crate::trainer::{
    load_checkpoint_for, train, TargetMode, TrainConfig, TrainOutcome, TrainingSet, Variant, STREAM_INIT,
};

/// Version stamped into every JSON report.
pub const REPORT_VERSION: u32 = 1;

const STREAM_DEMO: u64 = 21;

pub const QUANT_HEADER: [&str; 3] = ["m", "max_abs_error", "mean_abs_error"];
pub const CURVE_HEADER: [&str; 5] = ["h", "d", "total_steps", "t", "l_t"];
pub const SWEEP_HEADER: [&str; 3] = ["h", "d", "total_steps"];
pub const ABLATE_HEADER: [&str; 7] = [
    "suite",
    "mode",
    "seeds",
    "accuracy_mean",
    "accuracy_std",
    "mean_steps",
    "mean_transitions",
];
pub const ABLATE_SEED_HEADER: [&str; 4] = ["mode", "seed", "accuracy", "mean_steps"];

/// Maps an error to the process exit code: 2 config, 3 numeric, 4 I/O.
pub fn exit_code(err: &GrnError) -> i32 {
    match err {
        GrnError::Numeric(_) => 3,
        GrnError::Io { .. } | GrnError::Format { .. } => 4,
        _ => 2,
    }
}

/// Applies `GRN_LAB_THREADS` to the global worker pool.
pub fn init_threads() -> Result<()> {
    let Ok(raw) = std::env::var("GRN_LAB_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| GrnError::config(format!("GRN_LAB_THREADS must be a positive integer, got {raw:?}")))?;
    // A pool may already exist when embedded in tests; the first one wins.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

fn csv_string(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for r in rows {
        w.write_record(r).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 csv")
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| GrnError::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| GrnError::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| GrnError::numeric(e.to_string()))?;
    write_file(path, text + "\n")
}

// quantize-demo

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct QuantRow {
    pub m: u8,
    pub max_abs_error: f64,
    pub mean_abs_error: f64,
}

/// Reconstruction error at every depth `1..=max_m` over `samples` uniform
/// draws on `(-1, 1)`. With `truncate`, each value is coded once at
/// `max_m` rounds and decoded from its first `m` planes; otherwise it is
/// coded afresh at each depth.
pub fn quantize_sweep(max_m: u8, samples: usize, truncate: bool, seed: u64) -> Result<Vec<QuantRow>> {
    if max_m == 0 || max_m > 16 {
        return Err(GrnError::config(format!("--m must lie in 1..=16, got {max_m}")));
    }
    if samples == 0 {
        return Err(GrnError::config("--samples must be positive"));
    }
    let mut rng = Rng::new(seed).derive(STREAM_DEMO);
    let xs: Vec<f64> = (0..samples)
        .map(|_| loop {
            let f = 2.0 * rng.next_f64() - 1.0;
            if f > -1.0 {
                break f;
            }
        })
        .collect();
    let full: Vec<u16> = xs.iter().map(|&f| quantize_value(f, max_m)).collect();
    Ok((1..=max_m)
        .map(|m| {
            let (mut max, mut sum) = (0.0f64, 0.0);
            for (&f, &code) in xs.iter().zip(&full) {
                let r = if truncate {
                    dequantize_code(code, max_m, m)
                } else {
                    dequantize_code(quantize_value(f, m), m, m)
                };
                let e = (f - r).abs();
                max = max.max(e);
                sum += e;
            }
            QuantRow {
                m,
                max_abs_error: max,
                mean_abs_error: sum / samples as f64,
            }
        })
        .collect())
}

pub fn cmd_quantize_demo(max_m: u8, samples: usize, truncate: bool, seed: u64, out: Option<&Path>) -> Result<String> {
    let rows: Vec<Vec<String>> = quantize_sweep(max_m, samples, truncate, seed)?
        .iter()
        .map(|r| vec![r.m.to_string(), r.max_abs_error.to_string(), r.mean_abs_error.to_string()])
        .collect();
    let text = csv_string(&QUANT_HEADER, &rows);
    if let Some(dir) = out {
        write_file(&dir.join("quantize_demo.csv"), &text)?;
    }
    Ok(text)
}

// schedule

/// Per-step curve for one entropy value, or the step count over the
/// `H ∈ {0, 0.05, …, 1}` sweep.
pub fn cmd_schedule(cfg: &ScheduleConfig, h: Option<f64>, sweep: bool, out: Option<&Path>) -> Result<String> {
    cfg.validate()?;
    let text = match (h, sweep) {
        (Some(_), true) | (None, false) => {
            return Err(GrnError::config("schedule needs exactly one of --h or --sweep"));
        }
        (Some(h), false) => {
            if !(0.0..=1.0).contains(&h) {
                return Err(GrnError::config(format!("--h must lie in [0, 1], got {h}")));
            }
            let (total, d) = adaptive_total_steps(h, cfg);
            let rows = (1..=total)
                .map(|t| {
                    let l = ratio_with_denominator(t, d, cfg)?;
                    Ok(vec![h.to_string(), d.to_string(), total.to_string(), t.to_string(), l.to_string()])
                })
                .collect::<Result<Vec<_>>>()?;
            csv_string(&CURVE_HEADER, &rows)
        }
        (None, true) => {
            let rows: Vec<Vec<String>> = (0..=20)
                .map(|i| {
                    let h = i as f64 / 20.0;
                    let (total, d) = adaptive_total_steps(h, cfg);
                    vec![h.to_string(), d.to_string(), total.to_string()]
                })
                .collect();
            csv_string(&SWEEP_HEADER, &rows)
        }
    };
    if let Some(dir) = out {
        write_file(&dir.join("schedule.csv"), &text)?;
    }
    Ok(text)
}

// data and training

/// The dataset named by the config: loaded from `data_dir` when set
/// (its manifest must agree with `[data]`), generated otherwise.
pub fn load_data(cfg: &ExperimentConfig) -> Result<Dataset> {
    match &cfg.data_dir {
        Some(dir) => {
            let ds = load_dataset(dir)?;
            if ds.spec != cfg.data {
                return Err(GrnError::config(format!(
                    "data_dir {} was built from a different spec than the [data] section",
                    dir.display()
                )));
            }
            Ok(ds)
        }
        None => build_dataset(&cfg.data),
    }
}

pub fn cmd_build_data(cfg: &ExperimentConfig) -> Result<Dataset> {
    let ds = build_dataset(&cfg.data)?;
    save_dataset(&ds, &cfg.out_dir().join("data"))?;
    Ok(ds)
}

pub fn fresh_params(cfg: &ExperimentConfig, train_cfg: &TrainConfig) -> Result<PredictorParams> {
    init_params(&cfg.model, &mut Rng::new(train_cfg.seed).derive(STREAM_INIT))
}

pub fn training_set(ds: &Dataset, variant: Variant) -> Result<TrainingSet> {
    TrainingSet::new(ds.token_maps(variant), ds.spec.n_classes)
}

/// Trains from scratch; writes `train_log.csv` and checkpoints to the
/// output directory.
pub fn cmd_train(cfg: &ExperimentConfig) -> Result<TrainOutcome> {
    let ds = load_data(cfg)?;
    let set = training_set(&ds, cfg.train.variant)?;
    let out = cfg.out_dir();
    // The output path is left out so reruns elsewhere write identical bytes.
    let stored = ExperimentConfig { out: None, ..cfg.clone() };
    write_json(&out.join("config.json"), &stored)?;
    train(fresh_params(cfg, &cfg.train)?, &cfg.train, &set, Some(&out))
}

// sampling and evaluation

/// `per_class` trajectories for every class, class-major.
pub fn class_conditions(n_classes: usize, per_class: usize) -> Vec<Option<usize>> {
    (0..n_classes)
        .flat_map(|c| std::iter::repeat(Some(c)).take(per_class))
        .collect()
}

pub struct Drawn {
    pub class: usize,
    pub tokens: TokenMap,
    pub trace: SampleTrace,
}

pub fn draw_samples(params: &PredictorParams, cfg: &SampleConfig, per_class: usize, seed: u64) -> Result<Vec<Drawn>> {
    let conds = class_conditions(params.config().n_classes, per_class);
    Ok(batch_sample(params, &conds, cfg, seed)?
        .into_iter()
        .zip(conds)
        .map(|((tokens, trace), c)| Drawn {
            class: c.expect("conditioned"),
            tokens,
            trace,
        })
        .collect())
}

#[derive(Clone, Debug, Serialize)]
struct SampleEntry {
    index: usize,
    class: usize,
    file: String,
    trace: String,
    total_steps: usize,
    forwards: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    schedule_entropy: Option<f64>,
    erased_or_refined: usize,
}

#[derive(Serialize)]
struct SamplesManifest {
    schema_version: u32,
    seed: u64,
    samples: Vec<SampleEntry>,
}

/// Writes each sample as an HBQ plane blob plus its per-step trace.
pub fn cmd_sample(cfg: &ExperimentConfig, checkpoint: &Path) -> Result<usize> {
    let ckpt = load_checkpoint_for(checkpoint, &cfg.model)?;
    let drawn = draw_samples(&ckpt.params, &cfg.sample, cfg.eval.samples_per_class, cfg.sample.seed)?;
    let out = cfg.out_dir();
    let mut entries = Vec::with_capacity(drawn.len());
    for (i, d) in drawn.iter().enumerate() {
        let file = format!("samples/{i:04}_c{}.hbq", d.class);
        let trace = format!("traces/{i:04}.csv");
        let planes = d.tokens.to_planes(&cfg.data.grid, cfg.data.rounds)?;
        write_file(&out.join(&file), planes.to_bytes())?;
        let tpath = out.join(&trace);
        write_file(&tpath, "")?;
        write_trace_csv(&tpath, &d.trace)?;
        entries.push(SampleEntry {
            index: i,
            class: d.class,
            file,
            trace,
            total_steps: d.trace.total_steps,
            forwards: d.trace.forwards,
            schedule_entropy: d.trace.schedule_entropy,
            erased_or_refined: d.trace.erased_or_refined(),
        });
    }
    write_json(
        &out.join("samples.json"),
        &SamplesManifest {
            schema_version: REPORT_VERSION,
            seed: cfg.sample.seed,
            samples: entries,
        },
    )?;
    Ok(drawn.len())
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct Stats {
    pub n_samples: usize,
    pub mean_steps: f64,
    pub mean_forwards: f64,
    pub step_histogram: BTreeMap<usize, usize>,
    /// Mean of `H_t` over every step of every trajectory.
    pub mean_entropy: f64,
    /// Mean entropy that fixed the adaptive step count.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_schedule_entropy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub token_accuracy: Option<f64>,
    /// Fraction of samples identical to some reference map.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub exact_recovery: Option<f64>,
    /// Mean squared error between dequantized sample and closest reference.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub recon_mse: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct ClassStats {
    pub class: usize,
    #[serde(flatten)]
    pub stats: Stats,
}

#[derive(Clone, Debug, Serialize)]
pub struct EvalReport {
    pub schema_version: u32,
    #[serde(flatten)]
    pub overall: Stats,
    pub classes: Vec<ClassStats>,
}

/// Reference maps of each class, in record order.
pub fn class_references(ds: &Dataset, variant: Variant) -> Vec<Vec<(TokenMap, &Record)>> {
    let mut refs: Vec<Vec<(TokenMap, &Record)>> = vec![Vec::new(); ds.spec.n_classes];
    for r in &ds.records {
        refs[r.class].push((TokenMap::from_planes(&r.planes, variant.layout()), r));
    }
    refs
}

/// Index and agreement of the closest reference; ties go to the first.
pub fn closest(pred: &TokenMap, refs: &[TokenMap]) -> Result<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (i, r) in refs.iter().enumerate() {
        let a = pred.agreement(r)?;
        if best.map_or(true, |(_, b)| a > b) {
            best = Some((i, a));
        }
    }
    best.ok_or_else(|| GrnError::param("no reference maps"))
}

struct Scored {
    accuracy: f64,
    mse: f64,
}

fn summarize<'a>(items: impl Iterator<Item = (&'a Drawn, Option<&'a Scored>)>) -> Stats {
    let mut s = Stats::default();
    let (mut steps, mut fwd, mut ent, mut n_ent) = (0.0, 0.0, 0.0, 0usize);
    let (mut sched, mut n_sched) = (0.0, 0usize);
    let (mut acc, mut exact, mut mse, mut n_ref) = (0.0, 0usize, 0.0, 0usize);
    for (d, score) in items {
        s.n_samples += 1;
        steps += d.trace.total_steps as f64;
        fwd += d.trace.forwards as f64;
        *s.step_histogram.entry(d.trace.total_steps).or_insert(0) += 1;
        for r in &d.trace.steps {
            ent += r.entropy;
            n_ent += 1;
        }
        if let Some(h) = d.trace.schedule_entropy {
            sched += h;
            n_sched += 1;
        }
        if let Some(sc) = score {
            acc += sc.accuracy;
            exact += (sc.accuracy == 1.0) as usize;
            mse += sc.mse;
            n_ref += 1;
        }
    }
    let n = s.n_samples.max(1) as f64;
    s.mean_steps = steps / n;
    s.mean_forwards = fwd / n;
    s.mean_entropy = ent / n_ent.max(1) as f64;
    s.mean_schedule_entropy = (n_sched > 0).then(|| sched / n_sched as f64);
    if n_ref > 0 {
        let r = n_ref as f64;
        s.token_accuracy = Some(acc / r);
        s.exact_recovery = Some(exact as f64 / r);
        s.recon_mse = Some(mse / r);
    }
    s
}

/// Statistics over `drawn`, scored against `refs` when given.
pub fn evaluate(drawn: &[Drawn], refs: Option<&[Vec<(TokenMap, &Record)>]>, grid: &[usize], rounds: u8) -> Result<EvalReport> {
    let scores: Option<Vec<Scored>> = refs
        .map(|refs| {
            drawn
                .iter()
                .map(|d| {
                    let pool = refs
                        .get(d.class)
                        .filter(|p| !p.is_empty())
                        .ok_or_else(|| GrnError::param(format!("no reference maps for class {}", d.class)))?;
                    let maps: Vec<TokenMap> = pool.iter().map(|(t, _)| t.clone()).collect();
                    let (i, accuracy) = closest(&d.tokens, &maps)?;
                    let got = dequantize(&d.tokens.to_planes(grid, rounds)?);
                    let want = dequantize(&pool[i].1.planes);
                    let (a, b) = (got.values().data(), want.values().data());
                    let mse = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64;
                    Ok(Scored { accuracy, mse })
                })
                .collect::<Result<Vec<_>>>()
        })
        .transpose()?;
    let pair = |i: usize| (&drawn[i], scores.as_ref().map(|s| &s[i]));
    let overall = summarize((0..drawn.len()).map(pair));
    let mut classes: Vec<usize> = drawn.iter().map(|d| d.class).collect();
    classes.sort_unstable();
    classes.dedup();
    let classes = classes
        .into_iter()
        .map(|c| ClassStats {
            class: c,
            stats: summarize((0..drawn.len()).filter(|&i| drawn[i].class == c).map(pair)),
        })
        .collect();
    Ok(EvalReport {
        schema_version: REPORT_VERSION,
        overall,
        classes,
    })
}

pub fn cmd_eval(cfg: &ExperimentConfig, checkpoint: &Path) -> Result<EvalReport> {
    let ckpt = load_checkpoint_for(checkpoint, &cfg.model)?;
    let drawn = draw_samples(&ckpt.params, &cfg.sample, cfg.eval.samples_per_class, cfg.sample.seed)?;
    let ds = if cfg.eval.reference { Some(load_data(cfg)?) } else { None };
    let refs = ds.as_ref().map(|ds| class_references(ds, cfg.train.variant));
    let report = evaluate(&drawn, refs.as_deref(), &cfg.data.grid, cfg.data.rounds)?;
    write_json(&cfg.out_dir().join("eval.json"), &report)?;
    Ok(report)
}

// ablations

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Suite {
    Mask,
    Confidence,
    Relbits,
}

impl Suite {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "mask" => Ok(Suite::Mask),
            "confidence" => Ok(Suite::Confidence),
            "relbits" => Ok(Suite::Relbits),
            other => Err(GrnError::config(format!(
                "unknown --suite {other:?} (expected mask, confidence or relbits)"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Suite::Mask => "mask",
            Suite::Confidence => "confidence",
            Suite::Relbits => "relbits",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SeedResult {
    pub seed: u64,
    pub accuracy: f64,
    pub mean_steps: f64,
    pub mean_transitions: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ArmSummary {
    pub mode: String,
    pub runs: Vec<SeedResult>,
    pub accuracy_mean: f64,
    pub accuracy_std: f64,
    pub mean_steps: f64,
    /// Erased plus refined tokens per trajectory.
    pub mean_transitions: f64,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 {
        xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

/// One arm of a paired comparison: every arm sees seeds
/// `base_seed..base_seed + seeds` and the same conditions.
pub fn run_arm(
    mode: &str,
    params: &PredictorParams,
    cfg: &SampleConfig,
    refs: &[Vec<TokenMap>],
    per_class: usize,
    base_seed: u64,
    seeds: usize,
) -> Result<ArmSummary> {
    let mut runs = Vec::with_capacity(seeds);
    for s in 0..seeds as u64 {
        let seed = base_seed + s;
        let drawn = draw_samples(params, cfg, per_class, seed)?;
        let mut acc = 0.0;
        for d in &drawn {
            acc += closest(&d.tokens, &refs[d.class])?.1;
        }
        let n = drawn.len() as f64;
        runs.push(SeedResult {
            seed,
            accuracy: acc / n,
            mean_steps: drawn.iter().map(|d| d.trace.total_steps as f64).sum::<f64>() / n,
            mean_transitions: drawn.iter().map(|d| d.trace.erased_or_refined() as f64).sum::<f64>() / n,
        });
    }
    let accs: Vec<f64> = runs.iter().map(|r| r.accuracy).collect();
    let (accuracy_mean, accuracy_std) = mean_std(&accs);
    let k = runs.len() as f64;
    Ok(ArmSummary {
        mode: mode.to_string(),
        accuracy_mean,
        accuracy_std,
        mean_steps: runs.iter().map(|r| r.mean_steps).sum::<f64>() / k,
        mean_transitions: runs.iter().map(|r| r.mean_transitions).sum::<f64>() / k,
        runs,
    })
}

/// Reference token maps of each class, in record order.
pub fn token_refs(ds: &Dataset, variant: Variant) -> Vec<Vec<TokenMap>> {
    class_references(ds, variant)
        .into_iter()
        .map(|v| v.into_iter().map(|(t, _)| t).collect())
        .collect()
}

/// Paired comparison named by `suite`. `mask` and `confidence` decode one
/// checkpoint two ways; `relbits` trains an absolute and a relative bit
/// model with the configured budget.
pub fn cmd_ablate(cfg: &ExperimentConfig, checkpoint: Option<&Path>, suite: Suite) -> Result<Vec<ArmSummary>> {
    let ds = load_data(cfg)?;
    let e = &cfg.eval;
    let seed = cfg.sample.seed;
    let arms = match suite {
        Suite::Mask | Suite::Confidence => {
            let path = checkpoint.ok_or_else(|| {
                GrnError::config(format!("ablate --suite {} needs --checkpoint", suite.name()))
            })?;
            let params = load_checkpoint_for(path, &cfg.model)?.params;
            let refs = token_refs(&ds, cfg.train.variant);
            let base = SampleConfig {
                mode: Mode::Refine,
                selection: SelectionRule::Random,
                ..cfg.sample.clone()
            };
            let other = match suite {
                Suite::Mask => ("mask", SampleConfig { mode: Mode::Mask, ..base.clone() }),
                _ => (
                    "confidence",
                    SampleConfig {
                        selection: SelectionRule::Confidence,
                        ..base.clone()
                    },
                ),
            };
            let first = if suite == Suite::Mask { "refine" } else { "random" };
            vec![
                run_arm(first, &params, &base, &refs, e.samples_per_class, seed, e.seeds)?,
                run_arm(other.0, &params, &other.1, &refs, e.samples_per_class, seed, e.seeds)?,
            ]
        }
        Suite::Relbits => {
            if cfg.train.variant != Variant::Bit {
                return Err(GrnError::config(
                    "ablate --suite relbits requires train.variant = bit",
                ));
            }
            let set = training_set(&ds, Variant::Bit)?;
            let refs = token_refs(&ds, Variant::Bit);
            let mut arms = Vec::new();
            for (name, mode) in [("absolute", TargetMode::Absolute), ("relative", TargetMode::Relative)] {
                let tc = TrainConfig {
                    target_mode: mode,
                    ..cfg.train.clone()
                };
                let params = train(fresh_params(cfg, &tc)?, &tc, &set, None)?.params;
                let sc = SampleConfig {
                    target_mode: mode,
                    ..cfg.sample.clone()
                };
                arms.push(run_arm(name, &params, &sc, &refs, e.samples_per_class, seed, e.seeds)?);
            }
            arms
        }
    };
    let out = cfg.out_dir();
    let rows: Vec<Vec<String>> = arms
        .iter()
        .map(|a| {
            vec![
                suite.name().to_string(),
                a.mode.clone(),
                a.runs.len().to_string(),
                a.accuracy_mean.to_string(),
                a.accuracy_std.to_string(),
                a.mean_steps.to_string(),
                a.mean_transitions.to_string(),
            ]
        })
        .collect();
    write_file(&out.join(format!("ablate_{}.csv", suite.name())), csv_string(&ABLATE_HEADER, &rows))?;
    let seed_rows: Vec<Vec<String>> = arms
        .iter()
        .flat_map(|a| {
            a.runs.iter().map(move |r| {
                vec![a.mode.clone(), r.seed.to_string(), r.accuracy.to_string(), r.mean_steps.to_string()]
            })
        })
        .collect();
    write_file(
        &out.join(format!("ablate_{}_seeds.csv", suite.name())),
        csv_string(&ABLATE_SEED_HEADER, &seed_rows),
    )?;
    Ok(arms)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantize_rows_meet_bound_and_shrink() {
        for truncate in [false, true] {
            let rows = quantize_sweep(8, 20_000, truncate, 4).unwrap();
            assert_eq!(rows.len(), 8);
            for w in rows.windows(2) {
                assert!(w[1].max_abs_error < w[0].max_abs_error);
                assert!(w[1].mean_abs_error < w[0].mean_abs_error);
            }
            for r in &rows {
                assert!(r.max_abs_error < 0.5f64.powi(r.m as i32), "{r:?}");
            }
            assert!(rows[3].max_abs_error < 0.0625);
        }
        assert!(quantize_sweep(0, 10, false, 0).is_err());
        assert!(quantize_sweep(4, 0, false, 0).is_err());
    }

    #[test]
    fn schedule_example_and_sweep() {
        let cfg = ScheduleConfig::default();
        let curve = cmd_schedule(&cfg, Some(0.9787), false, None).unwrap();
        let lines: Vec<&str> = curve.lines().collect();
        assert_eq!(lines[0], CURVE_HEADER.join(","));
        assert_eq!(lines.len(), 1 + 45);
        assert!(lines[45].starts_with("0.9787,40,45,45,1"));
        let sweep = cmd_schedule(&cfg, None, true, None).unwrap();
        let totals: Vec<usize> = sweep
            .lines()
            .skip(1)
            .map(|l| l.rsplit(',').next().unwrap().parse().unwrap())
            .collect();
        assert_eq!(totals.len(), 21);
        assert!(totals.windows(2).all(|w| w[0] <= w[1]));
        assert!(totals.iter().all(|t| (20..=50).contains(t)));
        assert!(cmd_schedule(&cfg, None, false, None).is_err());
        assert!(cmd_schedule(&cfg, Some(0.5), true, None).is_err());
    }

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&GrnError::config("x")), 2);
        assert_eq!(exit_code(&GrnError::numeric("x")), 3);
        assert_eq!(exit_code(&GrnError::format(3, "x")), 4);
        assert_eq!(exit_code(&GrnError::io("p", std::io::Error::other("x"))), 4);
    }

    #[test]
    fn closest_prefers_first_on_ties() {
        use crate::refine::TokenLayout;
        let m = |v: Vec<u16>| TokenMap::new(TokenLayout::Index, 4, 2, 1, v).unwrap();
        let refs = [m(vec![0, 1]), m(vec![0, 2]), m(vec![3, 3])];
        assert_eq!(closest(&m(vec![0, 3]), &refs).unwrap(), (0, 0.5));
        assert_eq!(closest(&m(vec![3, 3]), &refs).unwrap(), (2, 1.0));
        assert!(closest(&m(vec![0, 0]), &[]).is_err());
    }

    #[test]
    fn mean_std_is_sample_std() {
        let (m, s) = mean_std(&[1.0, 2.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - 1.0).abs() < 1e-12);
        assert_eq!(mean_std(&[4.0]), (4.0, 0.0));
    }
}
