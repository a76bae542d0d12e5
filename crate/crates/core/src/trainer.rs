//! Training step over ground-truth token maps: random-state composition,
//! condition dropping, Adam updates, CSV logging and checkpoints.

use std::fs;
use std::io::Write as _;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{GrnError, Result};
use crate::numerics::Rng;
use crate::predictor::{batch_loss_and_grad, Example, PredictorConfig, PredictorParams};
use crate::refine::{compose_state, make_selection_map, SelectionMap, TokenLayout, TokenMap};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Ind,
    Bit,
}

impl Variant {
    pub fn layout(self) -> TokenLayout {
        match self {
            Variant::Ind => TokenLayout::Index,
            Variant::Bit => TokenLayout::Bit,
        }
    }

    /// `(c_eff, K)` for `channels` feature channels quantized in `rounds`.
    pub fn token_dims(self, channels: usize, rounds: u8) -> (usize, usize) {
        match self {
            Variant::Ind => (channels, 1 << rounds),
            Variant::Bit => (channels * rounds as usize, 2),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TargetMode {
    Absolute,
    /// Predict which input tokens differ from the ground truth (bit variant).
    Relative,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub variant: Variant,
    #[serde(default = "default_target")]
    pub target_mode: TargetMode,
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    #[serde(default = "default_drop")]
    pub cond_drop: f64,
    #[serde(default)]
    pub seed: u64,
    /// Checkpoint cadence in steps; 0 writes only the final checkpoint.
    #[serde(default)]
    pub eval_every: usize,
    /// Global-norm clip; `None` disables clipping.
    #[serde(default = "default_clip")]
    pub grad_clip: Option<f64>,
}

fn default_target() -> TargetMode {
    TargetMode::Absolute
}

fn default_drop() -> f64 {
    0.1
}

fn default_clip() -> Option<f64> {
    Some(1.0)
}

impl TrainConfig {
    pub fn new(variant: Variant, steps: usize, batch_size: usize, lr: f64, seed: u64) -> Self {
        Self {
            variant,
            target_mode: TargetMode::Absolute,
            steps,
            batch_size,
            lr,
            cond_drop: 0.1,
            seed,
            eval_every: 0,
            grad_clip: Some(1.0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(GrnError::config(format!("train.lr must be positive, got {}", self.lr)));
        }
        if !(0.0..=1.0).contains(&self.cond_drop) {
            return Err(GrnError::config(format!(
                "train.cond_drop must lie in [0, 1], got {}",
                self.cond_drop
            )));
        }
        if self.steps == 0 || self.batch_size == 0 {
            return Err(GrnError::config("train.steps and train.batch_size must be positive"));
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return Err(GrnError::config(format!("train.grad_clip must be positive, got {c}")));
            }
        }
        if self.target_mode == TargetMode::Relative && self.variant != Variant::Bit {
            return Err(GrnError::config(
                "train.target_mode = relative requires train.variant = bit",
            ));
        }
        Ok(())
    }
}

/// `l_t ~ U[0, 1)`.
pub fn sample_lt(rng: &mut Rng) -> f64 {
    rng.next_f64()
}

#[derive(Clone, Debug)]
pub struct TrainingInput {
    pub input: TokenMap,
    pub selection: SelectionMap,
    pub random: TokenMap,
}

/// Composes `F_t = S·Y_gt + ¬S·Y_rand` with fresh `S` and `Y_rand`.
pub fn make_training_input(y_gt: &TokenMap, l: f64, rng: &mut Rng) -> Result<TrainingInput> {
    let random = TokenMap::random(y_gt.layout(), y_gt.k(), y_gt.n_pos(), y_gt.c_eff(), rng)?;
    let selection = make_selection_map(y_gt.len(), l, rng)?;
    let input = compose_state(&selection, y_gt, &random)?;
    Ok(TrainingInput {
        input,
        selection,
        random,
    })
}

/// `F_t ≠ Y_gt` as a bit map.
pub fn relative_target(input: &TokenMap, y_gt: &TokenMap) -> Result<TokenMap> {
    if input.layout() != TokenLayout::Bit || y_gt.layout() != TokenLayout::Bit {
        return Err(GrnError::param("relative targets need bit-layout maps"));
    }
    if !input.same_extents(y_gt) {
        return Err(GrnError::param("relative target extents differ"));
    }
    let values = input
        .values()
        .iter()
        .zip(y_gt.values())
        .map(|(a, b)| (a != b) as u16)
        .collect();
    TokenMap::new(TokenLayout::Bit, 2, input.n_pos(), input.c_eff(), values)
}

/// Adam with bias correction and no weight decay.
#[derive(Clone, Debug)]
pub struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

impl Adam {
    pub fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn update(&mut self, params: &mut [f32], grad: &[f64], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - BETA1.powi(self.t as i32);
        let c2 = 1.0 - BETA2.powi(self.t as i32);
        for (((p, &g), m), v) in params.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *m = BETA1 * *m + (1.0 - BETA1) * g;
            *v = BETA2 * *v + (1.0 - BETA2) * g * g;
            let step = lr * (*m / c1) / ((*v / c2).sqrt() + ADAM_EPS);
            *p = (*p as f64 - step) as f32;
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepStats {
    pub loss: f64,
    pub grad_norm: f64,
    pub dropped: usize,
}

/// Owns parameters and optimizer state for one run.
pub struct Trainer {
    params: PredictorParams,
    cfg: TrainConfig,
    opt: Adam,
    rng: Rng,
    step: usize,
}

impl Trainer {
    pub fn new(params: PredictorParams, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let n = params.data().len();
        let rng = Rng::new(cfg.seed).derive(STREAM_TRAIN);
        Ok(Self {
            params,
            cfg,
            opt: Adam::new(n),
            rng,
            step: 0,
        })
    }

    pub fn params(&self) -> &PredictorParams {
        &self.params
    }

    pub fn into_params(self) -> PredictorParams {
        self.params
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn step_count(&self) -> usize {
        self.step
    }

    /// Builds the per-element model examples for the next step. Each element
    /// draws from its own stream keyed by (step, element).
    pub fn make_examples(&self, batch: &[(TokenMap, usize)]) -> Result<(Vec<Example>, usize)> {
        let step_rng = self.rng.derive(self.step as u64);
        let relative = self.cfg.target_mode == TargetMode::Relative;
        let built: Vec<Result<Example>> = batch
            .par_iter()
            .enumerate()
            .map(|(i, (y_gt, cond))| {
                let mut rng = step_rng.derive(i as u64);
                let l = sample_lt(&mut rng);
                let ti = make_training_input(y_gt, l, &mut rng)?;
                let cond = (!rng.bernoulli(self.cfg.cond_drop)).then_some(*cond);
                let targets = if relative {
                    relative_target(&ti.input, y_gt)?.values().to_vec()
                } else {
                    y_gt.values().to_vec()
                };
                Ok(Example {
                    input: ti.input,
                    cond,
                    targets,
                })
            })
            .collect();
        let examples = built.into_iter().collect::<Result<Vec<_>>>()?;
        let dropped = examples.iter().filter(|e| e.cond.is_none()).count();
        Ok((examples, dropped))
    }

    /// One optimizer update on a batch of `(Y_gt, class)` pairs.
    pub fn training_step(&mut self, batch: &[(TokenMap, usize)]) -> Result<StepStats> {
        if batch.is_empty() {
            return Err(GrnError::param("empty batch"));
        }
        let (examples, dropped) = self.make_examples(batch)?;
        let (loss, mut grad) = batch_loss_and_grad(&self.params, &examples)?;
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(GrnError::numeric(format!(
                "non-finite loss or gradient at step {} (loss = {loss})",
                self.step
            )));
        }
        let grad_norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        if let Some(clip) = self.cfg.grad_clip {
            if grad_norm > clip {
                let s = clip / grad_norm;
                grad.iter_mut().for_each(|g| *g *= s);
            }
        }
        self.opt.update(self.params.data_mut(), &grad, self.cfg.lr);
        if !self.params.all_finite() {
            return Err(GrnError::numeric(format!("parameters diverged at step {}", self.step)));
        }
        self.step += 1;
        Ok(StepStats {
            loss,
            grad_norm,
            dropped,
        })
    }
}

/// Stream keys for the consumers of a run seed.
pub const STREAM_INIT: u64 = 1;
pub const STREAM_TRAIN: u64 = 2;
pub const STREAM_BATCH: u64 = 3;

/// Records grouped by class, from which batches are drawn.
pub struct TrainingSet {
    by_class: Vec<Vec<TokenMap>>,
}

impl TrainingSet {
    pub fn new(records: impl IntoIterator<Item = (usize, TokenMap)>, n_classes: usize) -> Result<Self> {
        let mut by_class = vec![Vec::new(); n_classes];
        for (c, map) in records {
            by_class
                .get_mut(c)
                .ok_or_else(|| GrnError::param(format!("record class {c} outside {n_classes}")))?
                .push(map);
        }
        if let Some(c) = by_class.iter().position(Vec::is_empty) {
            return Err(GrnError::param(format!("class {c} has no records")));
        }
        Ok(Self { by_class })
    }

    pub fn n_classes(&self) -> usize {
        self.by_class.len()
    }

    pub fn class(&self, c: usize) -> &[TokenMap] {
        &self.by_class[c]
    }

    /// Uniform class, then a uniform record of that class.
    pub fn sample_batch(&self, size: usize, rng: &mut Rng) -> Vec<(TokenMap, usize)> {
        (0..size)
            .map(|_| {
                let c = rng.below(self.by_class.len());
                let recs = &self.by_class[c];
                (recs[rng.below(recs.len())].clone(), c)
            })
            .collect()
    }
}

pub const LOG_HEADER: [&str; 5] = ["step", "loss_nats", "lr", "tokens_per_sec", "wallclock_s"];

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: PredictorParams,
    pub losses: Vec<f64>,
}

/// Runs `cfg.steps` updates. When `out` is given, appends the CSV log there
/// and writes checkpoints every `eval_every` steps and at exit.
pub fn train(
    params: PredictorParams,
    cfg: &TrainConfig,
    data: &TrainingSet,
    out: Option<&Path>,
) -> Result<TrainOutcome> {
    if params.config().n_classes != data.n_classes() {
        return Err(GrnError::config(format!(
            "model.n_classes ({}) does not match data.n_classes ({})",
            params.config().n_classes,
            data.n_classes()
        )));
    }
    let mut trainer = Trainer::new(params, cfg.clone())?;
    let mut batch_rng = Rng::new(cfg.seed).derive(STREAM_BATCH);
    let tokens_per_step = (cfg.batch_size * trainer.params().config().n_pos * trainer.params().config().c_eff) as f64;
    let mut log = match out {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(|e| GrnError::io(dir, e))?;
            let path = dir.join("train_log.csv");
            let mut w = csv::Writer::from_path(&path).map_err(|e| csv_err(&path, e))?;
            w.write_record(LOG_HEADER).map_err(|e| csv_err(&path, e))?;
            Some((w, path))
        }
        None => None,
    };
    let start = Instant::now();
    let mut losses = Vec::with_capacity(cfg.steps);
    for step in 1..=cfg.steps {
        let t0 = Instant::now();
        let batch = data.sample_batch(cfg.batch_size, &mut batch_rng);
        let stats = trainer.training_step(&batch)?;
        losses.push(stats.loss);
        if let Some((w, path)) = log.as_mut() {
            let dt = t0.elapsed().as_secs_f64().max(1e-9);
            w.write_record([
                step.to_string(),
                format!("{:.9}", stats.loss),
                format!("{}", cfg.lr),
                format!("{:.1}", tokens_per_step / dt),
                format!("{:.3}", start.elapsed().as_secs_f64()),
            ])
            .map_err(|e| csv_err(path, e))?;
        }
        if let Some(dir) = out {
            if cfg.eval_every > 0 && step % cfg.eval_every == 0 && step != cfg.steps {
                let path = dir.join(format!("checkpoint_step{step}.ckpt"));
                save_checkpoint(&path, trainer.params(), cfg, step)?;
            }
        }
    }
    if let Some((mut w, path)) = log {
        w.flush().map_err(|e| GrnError::io(&path, e))?;
    }
    if let Some(dir) = out {
        save_checkpoint(&dir.join("final.ckpt"), trainer.params(), cfg, cfg.steps)?;
    }
    Ok(TrainOutcome {
        params: trainer.into_params(),
        losses,
    })
}

fn csv_err(path: &Path, e: csv::Error) -> GrnError {
    GrnError::io(path, std::io::Error::other(e.to_string()))
}

const CKPT_MAGIC: &[u8; 8] = b"GRNCKPT\0";
pub const CKPT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct CkptHeader {
    model: PredictorConfig,
    train: TrainConfig,
    step: usize,
}

/// A loaded checkpoint.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub params: PredictorParams,
    pub train: TrainConfig,
    pub step: usize,
}

/// Layout: magic, `u32` version, `u32` header length, JSON header, `u32`
/// section count, then per section `u16` name length, name, `u8` rank,
/// `u32` extents and `f32` values. All little-endian.
pub fn save_checkpoint(path: &Path, params: &PredictorParams, train: &TrainConfig, step: usize) -> Result<()> {
    let header = serde_json::to_vec(&CkptHeader {
        model: params.config().clone(),
        train: train.clone(),
        step,
    })
    .map_err(|e| GrnError::config(e.to_string()))?;
    let mut buf = Vec::with_capacity(params.data().len() * 4 + header.len() + 256);
    buf.extend_from_slice(CKPT_MAGIC);
    buf.extend_from_slice(&CKPT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(header.len() as u32).to_le_bytes());
    buf.extend_from_slice(&header);
    let sections = params.sections();
    buf.extend_from_slice(&(sections.len() as u32).to_le_bytes());
    for s in &sections {
        buf.extend_from_slice(&(s.name.len() as u16).to_le_bytes());
        buf.extend_from_slice(s.name.as_bytes());
        buf.push(s.shape.len() as u8);
        for &d in &s.shape {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in &params.data()[s.range()] {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| GrnError::io(dir, e))?;
    }
    let mut f = fs::File::create(path).map_err(|e| GrnError::io(path, e))?;
    f.write_all(&buf).map_err(|e| GrnError::io(path, e))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(GrnError::format(
                self.pos,
                format!("truncated {what}: need {n} bytes, {} left", self.bytes.len() - self.pos),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| GrnError::io(path, e))?;
    parse_checkpoint(&bytes)
}

/// Loads and refuses a checkpoint whose model config differs from `expected`.
pub fn load_checkpoint_for(path: &Path, expected: &PredictorConfig) -> Result<Checkpoint> {
    let ck = load_checkpoint(path)?;
    if ck.params.config() != expected {
        return Err(GrnError::config(format!(
            "checkpoint model config {:?} does not match configured model {:?}",
            ck.params.config(),
            expected
        )));
    }
    Ok(ck)
}

pub fn parse_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8, "magic")? != CKPT_MAGIC {
        return Err(GrnError::format(0, "bad checkpoint magic"));
    }
    let version = r.u32("version")?;
    if version != CKPT_VERSION {
        return Err(GrnError::format(8, format!("unsupported checkpoint version {version}")));
    }
    let hlen = r.u32("header length")? as usize;
    let hpos = r.pos;
    let header: CkptHeader = serde_json::from_slice(r.take(hlen, "header")?)
        .map_err(|e| GrnError::format(hpos, format!("bad header: {e}")))?;
    header.model.validate()?;
    let expected = crate::predictor::sections(&header.model);
    let count = r.u32("section count")? as usize;
    if count != expected.len() {
        return Err(GrnError::format(
            r.pos - 4,
            format!("expected {} sections, found {count}", expected.len()),
        ));
    }
    let mut data = Vec::with_capacity(header.model.param_count());
    for s in &expected {
        let at = r.pos;
        let nlen = u16::from_le_bytes(r.take(2, "section name length")?.try_into().unwrap()) as usize;
        let name = r.take(nlen, "section name")?;
        let rank = r.take(1, "section rank")?[0] as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32("section extent")? as usize);
        }
        if name != s.name.as_bytes() || shape != s.shape {
            return Err(GrnError::format(
                at,
                format!(
                    "section {:?} {shape:?} does not match expected {} {:?}",
                    String::from_utf8_lossy(name),
                    s.name,
                    s.shape
                ),
            ));
        }
        let raw = r.take(s.len() * 4, "section data")?;
        data.extend(raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())));
    }
    if r.pos != bytes.len() {
        return Err(GrnError::format(r.pos, "trailing bytes after last section"));
    }
    let params = PredictorParams::from_vec(header.model, data)?;
    Ok(Checkpoint {
        params,
        train: header.train,
        step: header.step,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::predictor::{forward, init_params};

    fn model(k: usize, c_eff: usize) -> PredictorConfig {
        PredictorConfig {
            depth: 1,
            hidden: 16,
            heads: 2,
            ff_hidden: 32,
            n_pos: 6,
            c_eff,
            k,
            n_classes: 2,
        }
    }

    fn gt(layout: TokenLayout, k: usize, c_eff: usize, seed: u64) -> TokenMap {
        TokenMap::random(layout, k, 6, c_eff, &mut Rng::new(seed)).unwrap()
    }

    #[test]
    fn sample_lt_mean() {
        let mut rng = Rng::new(3);
        let n = 1_000_000;
        let mut sum = 0.0;
        for _ in 0..n {
            let l = sample_lt(&mut rng);
            assert!((0.0..=1.0).contains(&l));
            sum += l;
        }
        assert!((sum / n as f64 - 0.5).abs() < 0.002);
    }

    #[test]
    fn training_input_extremes_and_fraction() {
        let y = gt(TokenLayout::Index, 4, 3, 1);
        let mut rng = Rng::new(2);
        assert_eq!(make_training_input(&y, 1.0, &mut rng).unwrap().input, y);
        let t = make_training_input(&y, 0.0, &mut rng).unwrap();
        assert_eq!(t.input, t.random);
        let l = 0.3;
        let mut selected = 0usize;
        let trials = 10_000;
        for _ in 0..trials {
            selected += make_training_input(&y, l, &mut rng).unwrap().selection.count();
        }
        let frac = selected as f64 / (trials * y.len()) as f64;
        let se = (l * (1.0 - l) / (trials * y.len()) as f64).sqrt();
        assert!((frac - l).abs() < 4.0 * se, "{frac}");
    }

    #[test]
    fn relative_target_is_xor() {
        let y = gt(TokenLayout::Bit, 2, 4, 5);
        assert!(relative_target(&y, &y).unwrap().values().iter().all(|&v| v == 0));
        let t = make_training_input(&y, 0.5, &mut Rng::new(9)).unwrap();
        let rel = relative_target(&t.input, &y).unwrap();
        for ((&f, &r), &g) in t.input.values().iter().zip(rel.values()).zip(y.values()) {
            assert_eq!(f ^ r, g);
        }
        let ind = gt(TokenLayout::Index, 4, 4, 5);
        assert!(relative_target(&ind, &ind).is_err());
    }

    #[test]
    fn condition_drop_fraction() {
        let cfg = TrainConfig::new(Variant::Ind, 1, 1, 1e-3, 4);
        let params: PredictorParams = init_params(&model(4, 3), &mut Rng::new(1)).unwrap();
        let mut trainer = Trainer::new(params, cfg).unwrap();
        let batch: Vec<_> = (0..10_000).map(|i| (gt(TokenLayout::Index, 4, 3, 7), i % 2)).collect();
        let (_, dropped) = trainer.make_examples(&batch).unwrap();
        let frac = dropped as f64 / 10_000.0;
        assert!((frac - 0.1).abs() < 0.01, "{frac}");
        trainer.step += 1;
        let (_, again) = trainer.make_examples(&batch).unwrap();
        assert_ne!(dropped, again);
    }

    #[test]
    fn first_loss_is_ln_k_and_loss_falls() {
        for (variant, k, c_eff) in [(Variant::Ind, 4, 3), (Variant::Bit, 2, 6)] {
            let layout = variant.layout();
            let params: PredictorParams = init_params(&model(k, c_eff), &mut Rng::new(1)).unwrap();
            let mut cfg = TrainConfig::new(variant, 100, 4, 3e-3, 11);
            cfg.cond_drop = 0.0;
            let batch = vec![(gt(layout, k, c_eff, 1), 0), (gt(layout, k, c_eff, 2), 1)];
            let mut trainer = Trainer::new(params, cfg).unwrap();
            let first = trainer.training_step(&batch).unwrap().loss;
            assert!((first - (k as f64).ln()).abs() < 1e-3);
            let mut last = first;
            for _ in 0..150 {
                last = trainer.training_step(&batch).unwrap().loss;
            }
            assert!(last < 0.5 * first, "{variant:?}: {first} -> {last}");
        }
    }

    #[test]
    fn config_validation_names_fields() {
        let mut cfg = TrainConfig::new(Variant::Ind, 1, 1, 0.0, 0);
        assert!(cfg.validate().unwrap_err().to_string().contains("train.lr"));
        cfg.lr = 1e-3;
        cfg.target_mode = TargetMode::Relative;
        let msg = cfg.validate().unwrap_err().to_string();
        assert!(msg.contains("train.target_mode") && msg.contains("train.variant"));
        cfg.target_mode = TargetMode::Absolute;
        cfg.cond_drop = 1.5;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn checkpoint_round_trip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.ckpt");
        let c = model(4, 3);
        let mut params: PredictorParams = init_params(&c, &mut Rng::new(8)).unwrap();
        params.data_mut().iter_mut().enumerate().for_each(|(i, v)| *v += (i as f32).sin() * 0.01);
        let cfg = TrainConfig::new(Variant::Ind, 10, 2, 1e-3, 5);
        save_checkpoint(&path, &params, &cfg, 10).unwrap();
        let ck = load_checkpoint_for(&path, &c).unwrap();
        assert_eq!(ck.params, params);
        assert_eq!(ck.train, cfg);
        assert_eq!(ck.step, 10);
        let input = gt(TokenLayout::Index, 4, 3, 3);
        let a = forward(&params, &input, Some(1)).unwrap();
        let b = forward(&ck.params, &input, Some(1)).unwrap();
        assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));

        let mut other = c.clone();
        other.hidden = 32;
        assert!(load_checkpoint_for(&path, &other).unwrap_err().to_string().contains("does not match"));

        let bytes = fs::read(&path).unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(parse_checkpoint(&bad), Err(GrnError::Format { offset: 0, .. })));
        let mut bad = bytes.clone();
        bad[8] = 9;
        assert!(parse_checkpoint(&bad).unwrap_err().to_string().contains("version"));
        let cut = &bytes[..bytes.len() - 3];
        assert!(matches!(parse_checkpoint(cut), Err(GrnError::Format { .. })));
    }
}
