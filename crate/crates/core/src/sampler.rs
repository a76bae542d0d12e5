//! Generation loop: iterative refinement from a random map under fixed or
//! entropy-guided schedules, with guidance gating and the mask-mode,
//! confidence-selection and relative-bit ablations.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{GrnError, Result};
use crate::numerics::{softmax, Rng, Tensor};
use crate::predictor::{apply_cfg, forward, sample_tokens, PredictorParams};
use crate::refine::{
    adaptive_total_steps, fixed_schedule, make_selection_map, mean_entropy, ratio_with_denominator, RefineState,
    ScheduleConfig, SelectionMap, TokenLayout, TokenMap, TransitionCounts,
};
use crate::trainer::TargetMode;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Refine,
    Mask,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SelectionRule {
    Random,
    Confidence,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Schedule {
    Fixed { steps: usize },
    Adaptive(ScheduleConfig),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleConfig {
    pub mode: Mode,
    pub selection: SelectionRule,
    pub schedule: Schedule,
    pub cfg_scale: f64,
    /// Guidance is active iff `l_t >= cfg_start`.
    pub cfg_start: f64,
    pub temperature: f64,
    #[serde(default = "default_target")]
    pub target_mode: TargetMode,
    #[serde(default)]
    pub seed: u64,
}

fn default_target() -> TargetMode {
    TargetMode::Absolute
}

impl SampleConfig {
    /// Random-selection refinement with a fixed schedule and no guidance.
    pub fn fixed(steps: usize, temperature: f64, seed: u64) -> Self {
        Self {
            mode: Mode::Refine,
            selection: SelectionRule::Random,
            schedule: Schedule::Fixed { steps },
            cfg_scale: 1.0,
            cfg_start: 0.0,
            temperature,
            target_mode: TargetMode::Absolute,
            seed,
        }
    }

    /// Decoding presets (guidance, interval start, temperature) of the
    /// reference class-conditional models, on a fixed 50-step schedule.
    pub fn preset(name: &str) -> Result<Self> {
        let (scale, start, tau) = match name {
            "ind-b" => (2.4, 0.40, 1.33),
            "bit-b" => (2.4, 0.44, 1.23),
            "ind-l" => (2.0, 0.40, 1.30),
            "bit-l" => (1.9, 0.45, 1.20),
            other => {
                return Err(GrnError::config(format!(
                    "unknown sample.preset {other:?} (expected ind-b, bit-b, ind-l or bit-l)"
                )))
            }
        };
        Ok(Self {
            cfg_scale: scale,
            cfg_start: start,
            ..Self::fixed(50, tau, 0)
        })
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.cfg_start) {
            return Err(GrnError::config(format!(
                "sample.cfg_start must lie in [0, 1], got {}",
                self.cfg_start
            )));
        }
        if !(self.cfg_scale >= 0.0 && self.cfg_scale.is_finite()) {
            return Err(GrnError::config(format!("sample.cfg_scale must be >= 0, got {}", self.cfg_scale)));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(GrnError::config(format!(
                "sample.temperature must be positive, got {}",
                self.temperature
            )));
        }
        match &self.schedule {
            Schedule::Fixed { steps: 0 } => {
                return Err(GrnError::config("sample.schedule.steps must be at least 1"));
            }
            Schedule::Adaptive(s) => s.validate()?,
            _ => {}
        }
        if self.mode == Mode::Mask && self.selection == SelectionRule::Confidence {
            return Err(GrnError::config(
                "sample.mode = mask only supports sample.selection = random",
            ));
        }
        Ok(())
    }

    fn guided(&self, cond: Option<usize>, l: f64) -> bool {
        cond.is_some() && self.cfg_scale != 1.0 && l >= self.cfg_start
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub l: f64,
    /// Normalized entropy of the untempered distribution of this step.
    pub entropy: f64,
    pub counts: TransitionCounts,
    pub cfg_active: bool,
    pub forwards: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleTrace {
    pub steps: Vec<StepRecord>,
    pub total_steps: usize,
    /// Entropy that fixed the adaptive step count, if any.
    pub schedule_entropy: Option<f64>,
    pub forwards: usize,
}

impl SampleTrace {
    pub fn erased_or_refined(&self) -> usize {
        self.steps.iter().map(|s| s.counts.erased + s.counts.refined).sum()
    }
}

/// Marks the `⌈l·N⌉` tokens whose sampled value has the highest probability;
/// ties go to the lower flat index.
pub fn select_by_confidence(probs: &Tensor<f64>, y_pred: &TokenMap, l: f64) -> Result<SelectionMap> {
    if !(0.0..=1.0).contains(&l) {
        return Err(GrnError::param(format!("selection ratio {l} outside [0, 1]")));
    }
    let k = probs.last_dim();
    let n = y_pred.len();
    if probs.len() != n * k || k != y_pred.k() {
        return Err(GrnError::param("probabilities do not match the token map"));
    }
    let count = ((l * n as f64 - 1e-9).ceil().max(0.0) as usize).min(n);
    let conf: Vec<f64> = y_pred
        .values()
        .iter()
        .enumerate()
        .map(|(i, &v)| probs.data()[i * k + v as usize])
        .collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| conf[b].total_cmp(&conf[a]).then(a.cmp(&b)));
    let mut sel = vec![false; n];
    for &i in &order[..count] {
        sel[i] = true;
    }
    Ok(SelectionMap::from_vec(sel))
}

/// `F_t XOR flips`.
pub fn relative_bit_decode(input: &TokenMap, flips: &TokenMap) -> Result<TokenMap> {
    if input.layout() != TokenLayout::Bit || flips.layout() != TokenLayout::Bit {
        return Err(GrnError::param("relative decoding needs bit-layout maps"));
    }
    if !input.same_extents(flips) {
        return Err(GrnError::param("relative decoding extents differ"));
    }
    let values = input.values().iter().zip(flips.values()).map(|(a, b)| a ^ b).collect();
    TokenMap::new(TokenLayout::Bit, 2, input.n_pos(), input.c_eff(), values)
}

/// Grows `prev` to the ratio `l`: each unselected token joins with
/// probability `(l - l_prev) / (1 - l_prev)`.
fn grow_selection(prev: &SelectionMap, l_prev: f64, l: f64, rng: &mut Rng) -> SelectionMap {
    let p = if l >= 1.0 {
        1.0
    } else {
        ((l - l_prev) / (1.0 - l_prev)).clamp(0.0, 1.0)
    };
    SelectionMap::from_vec(prev.values().iter().map(|&s| s || rng.next_f64() < p).collect())
}

fn layout_of(params: &PredictorParams) -> TokenLayout {
    if params.config().k == 2 {
        TokenLayout::Bit
    } else {
        TokenLayout::Index
    }
}

/// Runs one trajectory. Refine mode redraws every token at every step; mask
/// mode keeps selected tokens frozen.
pub fn sample(
    params: &PredictorParams,
    cond: Option<usize>,
    cfg: &SampleConfig,
    rng: &mut Rng,
) -> Result<(TokenMap, SampleTrace)> {
    cfg.validate()?;
    if !params.all_finite() {
        return Err(GrnError::numeric("parameters contain non-finite values"));
    }
    let m = params.config();
    let layout = layout_of(params);
    if cfg.target_mode == TargetMode::Relative && layout != TokenLayout::Bit {
        return Err(GrnError::config("sample.target_mode = relative requires a bit-variant model"));
    }
    let y_rand = TokenMap::random(layout, m.k, m.n_pos, m.c_eff, rng)?;
    let n = y_rand.len();
    let mut state = RefineState::new(y_rand);
    let mut total = match &cfg.schedule {
        Schedule::Fixed { steps } => Some(*steps),
        Schedule::Adaptive(_) => None,
    };
    let mut denom = None;
    let mut schedule_entropy = None;
    let mut last_probs: Option<Tensor<f64>> = None;
    let mut steps = Vec::new();
    let mut forwards = 0;
    let mut t = 1;
    loop {
        let l = match (&cfg.schedule, denom) {
            (Schedule::Fixed { steps }, _) => fixed_schedule(t - 1, *steps)?,
            (Schedule::Adaptive(s), Some(d)) => ratio_with_denominator(t, d, s)?,
            (Schedule::Adaptive(s), None) => t as f64 / s.alpha as f64,
        };
        let selection = match (cfg.mode, cfg.selection) {
            (Mode::Mask, _) => grow_selection(state.selection(), state.ratio(), l, rng),
            (Mode::Refine, SelectionRule::Random) => make_selection_map(n, l, rng)?,
            (Mode::Refine, SelectionRule::Confidence) => {
                let uniform;
                let probs = match &last_probs {
                    Some(p) => p,
                    None => {
                        uniform = Tensor::from_fn(&[n, m.k], |_| 1.0 / m.k as f64);
                        &uniform
                    }
                };
                select_by_confidence(probs, state.prediction(), l)?
            }
        };
        let (input, counts) = state.compose_next(l, selection)?;

        let guided = cfg.guided(cond, l);
        let logits = if guided {
            let c = forward(params, &input, cond)?;
            let u = forward(params, &input, None)?;
            apply_cfg(&c, &u, cfg.cfg_scale)?
        } else {
            forward(params, &input, cond)?
        };
        let calls = 1 + guided as usize;
        forwards += calls;
        let entropy = mean_entropy(&softmax(&logits, 1.0)?)?;
        let drawn = sample_tokens(&logits, cfg.temperature, rng, layout)?;
        let mut y = match cfg.target_mode {
            TargetMode::Absolute => drawn.tokens,
            TargetMode::Relative => relative_bit_decode(&input, &drawn.tokens)?,
        };
        if cfg.mode == Mode::Mask {
            let frozen = state.selection().values();
            let prev = input.values();
            for (i, v) in y.values_mut().iter_mut().enumerate() {
                if frozen[i] {
                    *v = prev[i];
                }
            }
        }
        state.accept_prediction(y, entropy)?;
        last_probs = Some(drawn.probs);
        steps.push(StepRecord {
            step: t,
            l,
            entropy,
            counts,
            cfg_active: guided,
            forwards: calls,
        });

        if let Schedule::Adaptive(s) = &cfg.schedule {
            if t == s.t0 {
                let (tt, d) = adaptive_total_steps(entropy, s);
                total = Some(tt);
                denom = Some(d);
                schedule_entropy = Some(entropy);
            }
        }
        if l >= 1.0 || total == Some(t) {
            break;
        }
        t += 1;
    }
    let trace = SampleTrace {
        total_steps: steps.len(),
        steps,
        schedule_entropy,
        forwards,
    };
    Ok((state.into_prediction(), trace))
}

/// Mask-mode trajectory regardless of `cfg.mode`.
pub fn sample_mask_mode(
    params: &PredictorParams,
    cond: Option<usize>,
    cfg: &SampleConfig,
    rng: &mut Rng,
) -> Result<(TokenMap, SampleTrace)> {
    let cfg = SampleConfig {
        mode: Mode::Mask,
        selection: SelectionRule::Random,
        ..cfg.clone()
    };
    sample(params, cond, &cfg, rng)
}

/// Stream of the `occurrence`-th trajectory for `cond` under `seed`.
pub fn trajectory_rng(seed: u64, cond: Option<usize>, occurrence: usize) -> Rng {
    let key = cond.map_or(u64::MAX, |c| c as u64);
    Rng::new(seed).derive(key).derive(occurrence as u64)
}

/// Independent trajectories, one per entry of `conds`. Each uses
/// [`trajectory_rng`] keyed by its condition and how often that condition
/// appeared earlier, so permuting `conds` permutes the results.
pub fn batch_sample(
    params: &PredictorParams,
    conds: &[Option<usize>],
    cfg: &SampleConfig,
    seed: u64,
) -> Result<Vec<(TokenMap, SampleTrace)>> {
    let keyed: Vec<(Option<usize>, usize)> = conds
        .iter()
        .enumerate()
        .map(|(i, &c)| (c, conds[..i].iter().filter(|&&x| x == c).count()))
        .collect();
    keyed
        .par_iter()
        .map(|&(c, occ)| sample(params, c, cfg, &mut trajectory_rng(seed, c, occ)))
        .collect()
}

/// Agreement with the closest reference map.
pub fn best_match_accuracy(pred: &TokenMap, refs: &[TokenMap]) -> Result<f64> {
    let mut best: Option<f64> = None;
    for r in refs {
        let a = pred.agreement(r)?;
        best = Some(best.map_or(a, |b: f64| b.max(a)));
    }
    best.ok_or_else(|| GrnError::param("no reference maps"))
}

pub const TRACE_HEADER: [&str; 9] = [
    "step", "l_t", "H_t", "filled", "kept", "refined", "erased", "blank", "cfg_active",
];

pub fn write_trace_csv(path: &Path, trace: &SampleTrace) -> Result<()> {
    let io = |e: csv::Error| GrnError::io(path, std::io::Error::other(e.to_string()));
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    w.write_record(TRACE_HEADER).map_err(io)?;
    for s in &trace.steps {
        let c = &s.counts;
        w.write_record([
            s.step.to_string(),
            format!("{:.6}", s.l),
            format!("{:.9}", s.entropy),
            c.filled.to_string(),
            c.kept.to_string(),
            c.refined.to_string(),
            c.erased.to_string(),
            c.blank.to_string(),
            (s.cfg_active as u8).to_string(),
        ])
        .map_err(io)?;
    }
    w.flush().map_err(|e| GrnError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::predictor::{init_params_with_head_std, PredictorConfig};

    fn params(k: usize, c_eff: usize) -> PredictorParams {
        let cfg = PredictorConfig {
            depth: 1,
            hidden: 16,
            heads: 2,
            ff_hidden: 32,
            n_pos: 8,
            c_eff,
            k,
            n_classes: 3,
        };
        init_params_with_head_std(&cfg, &mut Rng::new(1), 0.5).unwrap()
    }

    fn check_trace(trace: &SampleTrace, n: usize) {
        let mut prev = 0.0;
        for s in &trace.steps {
            assert!(s.l >= prev);
            prev = s.l;
            assert_eq!(s.counts.total(), n);
        }
        assert_eq!(prev, 1.0);
    }

    #[test]
    fn single_step_draws_from_random_state() {
        let p = params(4, 3);
        let cfg = SampleConfig::fixed(1, 1.0, 0);
        let (y, trace) = sample(&p, Some(1), &cfg, &mut Rng::new(5)).unwrap();
        assert_eq!(trace.total_steps, 1);
        assert_eq!(trace.forwards, 1);
        // Replay by hand: Y_rand, a full selection, one forward and one draw.
        let mut rng = Rng::new(5);
        let y_rand = TokenMap::random(TokenLayout::Index, 4, 8, 3, &mut rng).unwrap();
        let _ = make_selection_map(24, 1.0, &mut rng).unwrap();
        let logits = forward(&p, &y_rand, Some(1)).unwrap();
        let want = sample_tokens(&logits, 1.0, &mut rng, TokenLayout::Index).unwrap();
        assert_eq!(y, want.tokens);
    }

    #[test]
    fn fixed_traces_have_requested_length() {
        let p = params(4, 3);
        let (_, trace) = sample(&p, Some(0), &SampleConfig::fixed(50, 1.0, 0), &mut Rng::new(2)).unwrap();
        assert_eq!(trace.steps.len(), 50);
        check_trace(&trace, 24);
    }

    #[test]
    fn guidance_gating_counts_forwards() {
        let p = params(4, 3);
        let mut cfg = SampleConfig::fixed(20, 1.0, 0);
        cfg.cfg_scale = 2.4;
        cfg.cfg_start = 0.4;
        let (_, trace) = sample(&p, Some(2), &cfg, &mut Rng::new(3)).unwrap();
        for s in &trace.steps {
            assert_eq!(s.cfg_active, s.l >= 0.4);
            assert_eq!(s.forwards, if s.l >= 0.4 { 2 } else { 1 });
        }
        assert_eq!(trace.forwards, trace.steps.iter().map(|s| s.forwards).sum::<usize>());
        // No condition means nothing to guide.
        let (_, trace) = sample(&p, None, &cfg, &mut Rng::new(3)).unwrap();
        assert_eq!(trace.forwards, 20);
    }

    #[test]
    fn adaptive_steps_within_bounds_and_deterministic() {
        let p = params(4, 3);
        let mut cfg = SampleConfig::fixed(1, 1.0, 0);
        cfg.schedule = Schedule::Adaptive(ScheduleConfig::default());
        for seed in 0..5 {
            let (a, ta) = sample(&p, Some(0), &cfg, &mut Rng::new(seed)).unwrap();
            let (b, tb) = sample(&p, Some(0), &cfg, &mut Rng::new(seed)).unwrap();
            assert_eq!((a, &ta), (b, &tb));
            assert!((20..=50).contains(&ta.total_steps));
            let h = ta.schedule_entropy.unwrap();
            assert_eq!(ta.total_steps, adaptive_total_steps(h, &ScheduleConfig::default()).0);
            assert_eq!(h, ta.steps[4].entropy);
            check_trace(&ta, 24);
        }
    }

    #[test]
    fn mask_mode_never_erases_or_refines() {
        let p = params(4, 3);
        let cfg = SampleConfig::fixed(12, 1.0, 0);
        let mut rng = Rng::new(8);
        let (_, trace) = sample_mask_mode(&p, Some(1), &cfg, &mut rng).unwrap();
        for s in &trace.steps {
            assert_eq!(s.counts.erased + s.counts.refined, 0);
        }
        assert_eq!(trace.steps.last().unwrap().counts.blank, 0);
        check_trace(&trace, 24);
        let (_, refine) = sample(&p, Some(1), &cfg, &mut Rng::new(8)).unwrap();
        assert!(refine.erased_or_refined() > 0);
    }

    #[test]
    fn mask_mode_selection_is_cumulative() {
        let mut rng = Rng::new(4);
        let mut s = SelectionMap::empty(500);
        let mut l_prev = 0.0;
        for t in 1..=10 {
            let l = t as f64 / 10.0;
            let next = grow_selection(&s, l_prev, l, &mut rng);
            assert!(next.is_superset_of(&s));
            s = next;
            l_prev = l;
        }
        assert_eq!(s.count(), 500);
    }

    #[test]
    fn confidence_selection_cardinality_and_ties() {
        let y = TokenMap::new(TokenLayout::Index, 2, 5, 1, vec![0, 1, 1, 0, 0]).unwrap();
        let probs = Tensor::new(
            vec![5, 2],
            vec![0.9, 0.1, 0.4, 0.6, 0.3, 0.7, 0.6, 0.4, 0.9, 0.1],
        )
        .unwrap();
        assert_eq!(select_by_confidence(&probs, &y, 0.0).unwrap().count(), 0);
        assert_eq!(select_by_confidence(&probs, &y, 1.0).unwrap().count(), 5);
        let s = select_by_confidence(&probs, &y, 0.4).unwrap();
        assert_eq!(s.values(), &[true, false, false, false, true]);
        let s = select_by_confidence(&probs, &y, 0.5).unwrap();
        assert_eq!(s.values(), &[true, false, true, false, true]);
        for i in 0..=20 {
            let l = i as f64 / 20.0;
            let want = (l * 5.0 - 1e-9).ceil().max(0.0) as usize;
            assert_eq!(select_by_confidence(&probs, &y, l).unwrap().count(), want);
        }
    }

    #[test]
    fn relative_decode_is_xor() {
        let f = TokenMap::new(TokenLayout::Bit, 2, 2, 2, vec![0, 1, 1, 0]).unwrap();
        let zero = TokenMap::new(TokenLayout::Bit, 2, 2, 2, vec![0; 4]).unwrap();
        let ones = TokenMap::new(TokenLayout::Bit, 2, 2, 2, vec![1; 4]).unwrap();
        assert_eq!(relative_bit_decode(&f, &zero).unwrap(), f);
        assert_eq!(relative_bit_decode(&f, &ones).unwrap().values(), &[1, 0, 0, 1]);
        let idx = TokenMap::new(TokenLayout::Index, 4, 2, 2, vec![0; 4]).unwrap();
        assert!(relative_bit_decode(&idx, &zero).is_err());
    }

    #[test]
    fn batch_sample_permutes_with_conditions() {
        let p = params(2, 4);
        let cfg = SampleConfig::fixed(6, 1.0, 0);
        let conds = [Some(0), Some(2), None, Some(0)];
        let a = batch_sample(&p, &conds, &cfg, 17).unwrap();
        let perm = [Some(2), Some(0), Some(0), None];
        let b = batch_sample(&p, &perm, &cfg, 17).unwrap();
        assert_eq!(a[1], b[0]);
        assert_eq!(a[0], b[1]);
        assert_eq!(a[3], b[2]);
        assert_eq!(a[2], b[3]);
        let single = sample(&p, Some(0), &cfg, &mut trajectory_rng(17, Some(0), 1)).unwrap();
        assert_eq!(single, a[3]);
    }

    #[test]
    fn config_validation() {
        let mut cfg = SampleConfig::preset("ind-b").unwrap();
        assert_eq!((cfg.cfg_scale, cfg.cfg_start, cfg.temperature), (2.4, 0.4, 1.33));
        cfg.validate().unwrap();
        cfg.mode = Mode::Mask;
        cfg.selection = SelectionRule::Confidence;
        let msg = cfg.validate().unwrap_err().to_string();
        assert!(msg.contains("sample.mode") && msg.contains("sample.selection"));
        assert!(SampleConfig::preset("xl").is_err());
        let mut cfg = SampleConfig::fixed(0, 1.0, 0);
        assert!(cfg.validate().is_err());
        cfg.schedule = Schedule::Fixed { steps: 3 };
        cfg.temperature = 0.0;
        assert!(cfg.validate().is_err());
    }
}
