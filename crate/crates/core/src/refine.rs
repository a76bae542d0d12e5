//! Refinement state machine: selection maps, state composition, the
//! normalized prediction entropy and the step schedules that drive the
//! accumulation ratio `l` from 0 to 1.

use serde::{Deserialize, Serialize};

use crate::error::{GrnError, Result};
use crate::hbq::{flatten_bits, pack_indices, unflatten_bits, unpack_indices, BitMap, BitPlanes, IndexMap};
use crate::numerics::{Rng, Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TokenLayout {
    /// Packed `M`-bit indices, `K = 2^M`.
    Index,
    /// Individual bits, `K = 2`.
    Bit,
}

/// Discrete map over `n_pos` flattened positions times `c_eff` tokens.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenMap {
    layout: TokenLayout,
    k: usize,
    n_pos: usize,
    c_eff: usize,
    values: Vec<u16>,
}

impl TokenMap {
    pub fn new(layout: TokenLayout, k: usize, n_pos: usize, c_eff: usize, values: Vec<u16>) -> Result<Self> {
        if k < 2 || k > 1 << 16 {
            return Err(GrnError::param(format!("category count {k} outside 2..=65536")));
        }
        if layout == TokenLayout::Bit && k != 2 {
            return Err(GrnError::param(format!("bit layout needs K = 2, got {k}")));
        }
        if n_pos == 0 || c_eff == 0 || values.len() != n_pos * c_eff {
            return Err(GrnError::param(format!(
                "{} tokens do not fill {n_pos} positions x {c_eff}",
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|&&v| v as usize >= k) {
            return Err(GrnError::domain(format!("token {v} not below K = {k}")));
        }
        Ok(Self {
            layout,
            k,
            n_pos,
            c_eff,
            values,
        })
    }

    /// Uniform random map (`Y_rand`).
    pub fn random(layout: TokenLayout, k: usize, n_pos: usize, c_eff: usize, rng: &mut Rng) -> Result<Self> {
        let values = (0..n_pos * c_eff).map(|_| rng.below(k) as u16).collect();
        Self::new(layout, k, n_pos, c_eff, values)
    }

    /// Index view of a quantized grid: positions are every axis but the last.
    pub fn from_planes(planes: &BitPlanes, layout: TokenLayout) -> Self {
        let channels = *planes.shape().last().unwrap();
        let n_pos = planes.num_elements() / channels;
        match layout {
            TokenLayout::Index => {
                let idx = pack_indices(planes);
                TokenMap {
                    layout,
                    k: 1 << planes.rounds(),
                    n_pos,
                    c_eff: channels,
                    values: idx.values().to_vec(),
                }
            }
            TokenLayout::Bit => {
                let bits = flatten_bits(planes);
                TokenMap {
                    layout,
                    k: 2,
                    n_pos,
                    c_eff: channels * planes.rounds() as usize,
                    values: bits.values().iter().map(|&b| b as u16).collect(),
                }
            }
        }
    }

    /// Inverse of [`TokenMap::from_planes`] given the grid shape and rounds.
    pub fn to_planes(&self, grid: &[usize], rounds: u8) -> Result<BitPlanes> {
        let channels = *grid
            .last()
            .ok_or_else(|| GrnError::param("empty grid shape"))?;
        if grid.iter().product::<usize>() / channels != self.n_pos {
            return Err(GrnError::param(format!(
                "grid {grid:?} does not have {} positions",
                self.n_pos
            )));
        }
        match self.layout {
            TokenLayout::Index => {
                let values = self.values.clone();
                let map = IndexMap::new(grid.to_vec(), rounds, values)?;
                unpack_indices(&map, rounds)
            }
            TokenLayout::Bit => {
                let mut shape = grid.to_vec();
                *shape.last_mut().unwrap() = channels * rounds as usize;
                let bits = BitMap::new(shape, self.values.iter().map(|&v| v as u8).collect())?;
                unflatten_bits(&bits, channels, rounds)
            }
        }
    }

    pub fn layout(&self) -> TokenLayout {
        self.layout
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn n_pos(&self) -> usize {
        self.n_pos
    }

    pub fn c_eff(&self) -> usize {
        self.c_eff
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[u16] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [u16] {
        &mut self.values
    }

    pub fn same_extents(&self, other: &TokenMap) -> bool {
        self.layout == other.layout
            && self.k == other.k
            && self.n_pos == other.n_pos
            && self.c_eff == other.c_eff
    }

    fn check_extents(&self, other: &TokenMap) -> Result<()> {
        if !self.same_extents(other) {
            return Err(GrnError::param(format!(
                "token maps differ: {:?}/K={}/{}x{} vs {:?}/K={}/{}x{}",
                self.layout, self.k, self.n_pos, self.c_eff, other.layout, other.k, other.n_pos, other.c_eff
            )));
        }
        Ok(())
    }

    /// Fraction of tokens equal to `other`.
    pub fn agreement(&self, other: &TokenMap) -> Result<f64> {
        self.check_extents(other)?;
        let same = self
            .values
            .iter()
            .zip(&other.values)
            .filter(|(a, b)| a == b)
            .count();
        Ok(same as f64 / self.len() as f64)
    }
}

/// Which tokens of a composed state come from the drawing.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SelectionMap {
    values: Vec<bool>,
}

impl SelectionMap {
    pub fn from_vec(values: Vec<bool>) -> Self {
        Self { values }
    }

    pub fn empty(len: usize) -> Self {
        Self {
            values: vec![false; len],
        }
    }

    pub fn full(len: usize) -> Self {
        Self {
            values: vec![true; len],
        }
    }

    pub fn values(&self) -> &[bool] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn count(&self) -> usize {
        self.values.iter().filter(|&&s| s).count()
    }

    /// The accumulation statistic: proportion of ones.
    pub fn fraction(&self) -> f64 {
        self.count() as f64 / self.values.len().max(1) as f64
    }

    pub fn is_superset_of(&self, other: &SelectionMap) -> bool {
        self.values.len() == other.values.len()
            && self.values.iter().zip(&other.values).all(|(&a, &b)| a || !b)
    }
}

fn check_ratio(l: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&l) {
        return Err(GrnError::param(format!("selection ratio {l} outside [0, 1]")));
    }
    Ok(())
}

/// Fresh i.i.d. selection: each token is kept with probability `l`.
pub fn make_selection_map(len: usize, l: f64, rng: &mut Rng) -> Result<SelectionMap> {
    check_ratio(l)?;
    Ok(SelectionMap {
        values: (0..len).map(|_| rng.next_f64() < l).collect(),
    })
}

/// `S·Y + ¬S·Y_rand`.
pub fn compose_state(s: &SelectionMap, y: &TokenMap, y_rand: &TokenMap) -> Result<TokenMap> {
    y.check_extents(y_rand)?;
    if s.len() != y.len() {
        return Err(GrnError::param(format!(
            "selection of {} tokens does not match map of {}",
            s.len(),
            y.len()
        )));
    }
    let values = s
        .values
        .iter()
        .zip(y.values.iter().zip(&y_rand.values))
        .map(|(&sel, (&a, &r))| if sel { a } else { r })
        .collect();
    Ok(TokenMap {
        values,
        ..y.clone()
    })
}

/// Mean per-token entropy in bits, normalized by `log2 K`, over a
/// probability tensor whose last axis holds the `K` categories.
pub fn mean_entropy<T: Scalar>(probs: &Tensor<T>) -> Result<f64> {
    let k = probs.last_dim();
    if k < 2 {
        return Err(GrnError::param("entropy needs at least two categories"));
    }
    let norm = (k as f64).log2();
    let mut total = 0.0f64;
    for (i, dist) in probs.data().chunks(k).enumerate() {
        let mut sum = 0.0;
        let mut h = 0.0;
        for p in dist {
            let p = p.real();
            if p < 0.0 {
                return Err(GrnError::domain(format!("negative probability {p} in row {i}")));
            }
            sum += p;
            if p > 0.0 {
                h -= p * p.log2();
            }
        }
        if (sum - 1.0).abs() > 1e-6 {
            return Err(GrnError::domain(format!("row {i} sums to {sum}")));
        }
        total += h;
    }
    let rows = (probs.len() / k) as f64;
    Ok((total / rows / norm).clamp(0.0, 1.0))
}

/// Parameters of the entropy-guided schedule.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleConfig {
    pub t0: usize,
    pub alpha: usize,
    pub k: f64,
    pub b: f64,
    pub t_min: usize,
    pub t_max: usize,
}

impl Default for ScheduleConfig {
    /// `k = 600, b = -547.2`, 20 to 50 steps, warm-up of 5 over `α = 50`.
    fn default() -> Self {
        Self {
            t0: 5,
            alpha: 50,
            k: 600.0,
            b: -547.2,
            t_min: 20,
            t_max: 50,
        }
    }
}

impl ScheduleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.t0 >= self.t_min {
            return Err(GrnError::config(format!(
                "schedule.t0 ({}) must be below schedule.t_min ({})",
                self.t0, self.t_min
            )));
        }
        if self.t_min > self.t_max {
            return Err(GrnError::config(format!(
                "schedule.t_min ({}) exceeds schedule.t_max ({})",
                self.t_min, self.t_max
            )));
        }
        if self.alpha < self.t_max {
            return Err(GrnError::config(format!(
                "schedule.alpha ({}) must be at least schedule.t_max ({})",
                self.alpha, self.t_max
            )));
        }
        if !self.k.is_finite() || !self.b.is_finite() {
            return Err(GrnError::config("schedule.k and schedule.b must be finite"));
        }
        // A negative slope would hand more steps to simpler samples.
        if self.k < 0.0 {
            return Err(GrnError::config(format!("schedule.k must be >= 0, got {}", self.k)));
        }
        Ok(())
    }
}

/// `l = (t + 1) / T` for `t` in `0..T`.
pub fn fixed_schedule(t: usize, total: usize) -> Result<f64> {
    if t >= total {
        return Err(GrnError::param(format!("step {t} not below total {total}")));
    }
    Ok((t + 1) as f64 / total as f64)
}

/// Total steps `T = t0 + D` and post-warm-up denominator
/// `D = clamp(round(k·H + b), Tmin - t0, Tmax - t0)`.
pub fn adaptive_total_steps(h: f64, cfg: &ScheduleConfig) -> (usize, usize) {
    let lo = (cfg.t_min - cfg.t0) as f64;
    let hi = (cfg.t_max - cfg.t0) as f64;
    let raw = (cfg.k * h + cfg.b).round();
    let d = if raw.is_nan() { lo } else { raw.clamp(lo, hi) } as usize;
    (cfg.t0 + d, d)
}

/// Accumulation ratio at step `t` once the denominator `D` is known.
/// Warm-up steps (`t <= t0`) do not depend on `D`.
pub fn ratio_with_denominator(t: usize, d: usize, cfg: &ScheduleConfig) -> Result<f64> {
    if t > cfg.t0 + d {
        return Err(GrnError::param(format!(
            "step {t} beyond trajectory end {}",
            cfg.t0 + d
        )));
    }
    let alpha = cfg.alpha as f64;
    let l = if t <= cfg.t0 {
        t as f64 / alpha
    } else if t == cfg.t0 + d {
        1.0
    } else {
        let t0 = cfg.t0 as f64;
        t0 / alpha + (alpha - t0) / alpha * (t - cfg.t0) as f64 / d as f64
    };
    Ok(l.clamp(0.0, 1.0))
}

pub fn adaptive_ratio(t: usize, h: f64, cfg: &ScheduleConfig) -> Result<f64> {
    let (_, d) = adaptive_total_steps(h, cfg);
    ratio_with_denominator(t, d, cfg)
}

/// Per-token transitions between two consecutive drawings.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransitionCounts {
    pub filled: usize,
    pub kept: usize,
    pub refined: usize,
    pub erased: usize,
    pub blank: usize,
}

impl TransitionCounts {
    pub fn total(&self) -> usize {
        self.filled + self.kept + self.refined + self.erased + self.blank
    }
}

pub fn classify_transitions(
    s_t: &SelectionMap,
    s_next: &SelectionMap,
    y_t: &TokenMap,
    y_next: &TokenMap,
) -> Result<TransitionCounts> {
    y_t.check_extents(y_next)?;
    if s_t.len() != y_t.len() || s_next.len() != y_t.len() {
        return Err(GrnError::param("selection maps do not match token map extents"));
    }
    let mut c = TransitionCounts::default();
    for i in 0..y_t.len() {
        match (s_t.values[i], s_next.values[i]) {
            (false, true) => c.filled += 1,
            (true, true) if y_t.values[i] == y_next.values[i] => c.kept += 1,
            (true, true) => c.refined += 1,
            (true, false) => c.erased += 1,
            (false, false) => c.blank += 1,
        }
    }
    Ok(c)
}

/// One sampling trajectory.
///
/// `y_pred` is the latest model drawing; `selection` and `drawn` are the
/// selection map and drawing used for the most recent composed input.
#[derive(Clone, Debug)]
pub struct RefineState {
    step: usize,
    y_pred: TokenMap,
    y_rand: TokenMap,
    selection: SelectionMap,
    drawn: TokenMap,
    ratio: f64,
    entropy_trace: Vec<f64>,
}

impl RefineState {
    /// Starts from `Y_pred := Y_rand` with nothing selected.
    pub fn new(y_rand: TokenMap) -> Self {
        let n = y_rand.len();
        Self {
            step: 0,
            y_pred: y_rand.clone(),
            drawn: y_rand.clone(),
            y_rand,
            selection: SelectionMap::empty(n),
            ratio: 0.0,
            entropy_trace: Vec::new(),
        }
    }

    pub fn step(&self) -> usize {
        self.step
    }

    pub fn ratio(&self) -> f64 {
        self.ratio
    }

    pub fn prediction(&self) -> &TokenMap {
        &self.y_pred
    }

    pub fn random_map(&self) -> &TokenMap {
        &self.y_rand
    }

    pub fn selection(&self) -> &SelectionMap {
        &self.selection
    }

    pub fn drawn(&self) -> &TokenMap {
        &self.drawn
    }

    pub fn entropy_trace(&self) -> &[f64] {
        &self.entropy_trace
    }

    /// Advances to the next step with ratio `l` and selection `s`, returning
    /// the composed model input and the transitions from the previous drawing.
    pub fn compose_next(&mut self, l: f64, s: SelectionMap) -> Result<(TokenMap, TransitionCounts)> {
        check_ratio(l)?;
        if l < self.ratio {
            return Err(GrnError::param(format!(
                "ratio decreased from {} to {l}",
                self.ratio
            )));
        }
        let counts = classify_transitions(&self.selection, &s, &self.drawn, &self.y_pred)?;
        let input = compose_state(&s, &self.y_pred, &self.y_rand)?;
        self.selection = s;
        self.drawn = self.y_pred.clone();
        self.ratio = l;
        self.step += 1;
        Ok((input, counts))
    }

    pub fn accept_prediction(&mut self, y: TokenMap, entropy: f64) -> Result<()> {
        self.y_pred.check_extents(&y)?;
        self.y_pred = y;
        self.entropy_trace.push(entropy);
        Ok(())
    }

    pub fn into_prediction(self) -> TokenMap {
        self.y_pred
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng;
    use proptest::prelude::{any, prop, prop_assert, prop_assert_eq, proptest};

    fn idx_map(values: &[u16], k: usize) -> TokenMap {
        TokenMap::new(TokenLayout::Index, k, values.len(), 1, values.to_vec()).unwrap()
    }

    fn sel(bits: &[u8]) -> SelectionMap {
        SelectionMap::from_vec(bits.iter().map(|&b| b == 1).collect())
    }

    #[test]
    fn selection_map_extremes_and_rate() {
        let mut rng = Rng::new(1);
        assert_eq!(make_selection_map(1000, 0.0, &mut rng).unwrap().count(), 0);
        assert_eq!(make_selection_map(1000, 1.0, &mut rng).unwrap().count(), 1000);
        let s = make_selection_map(1_000_000, 0.5, &mut rng).unwrap();
        assert!((s.fraction() - 0.5).abs() < 0.002);
        assert!(make_selection_map(10, 1.01, &mut rng).is_err());
        assert!(make_selection_map(10, -0.1, &mut rng).is_err());
    }

    #[test]
    fn compose_examples() {
        let y = idx_map(&[3, 3, 3, 3], 8);
        let r = idx_map(&[7, 7, 7, 7], 8);
        assert_eq!(compose_state(&sel(&[1, 0, 1, 0]), &y, &r).unwrap().values(), &[3, 7, 3, 7]);
        assert_eq!(compose_state(&SelectionMap::full(4), &y, &r).unwrap(), y);
        assert_eq!(compose_state(&SelectionMap::empty(4), &y, &r).unwrap(), r);
        let other = idx_map(&[1, 1, 1, 1], 4);
        assert!(compose_state(&SelectionMap::full(4), &y, &other).is_err());
        assert!(compose_state(&SelectionMap::full(3), &y, &r).is_err());
    }

    #[test]
    fn entropy_examples() {
        let uniform = Tensor::from_fn(&[10, 3, 16], |_| 1.0f64 / 16.0);
        assert!((mean_entropy(&uniform).unwrap() - 1.0).abs() < 1e-9);
        let onehot = Tensor::from_fn(&[10, 3, 4], |i| if i % 4 == 2 { 1.0f64 } else { 0.0 });
        assert_eq!(mean_entropy(&onehot).unwrap(), 0.0);
        let skew = Tensor::from_fn(&[5, 2, 2], |i| if i % 2 == 0 { 0.25f64 } else { 0.75 });
        let expected = -(0.25f64 * 0.25f64.log2() + 0.75 * 0.75f64.log2());
        let h = mean_entropy(&skew).unwrap();
        assert!((h - expected).abs() < 1e-12);
        assert!((h - 0.811278).abs() < 1e-6);
        let neg = Tensor::new(vec![1, 2], vec![-0.5f64, 1.5]).unwrap();
        assert!(matches!(mean_entropy(&neg), Err(GrnError::Domain(_))));
    }

    #[test]
    fn fixed_schedule_examples() {
        assert_eq!(fixed_schedule(49, 50).unwrap(), 1.0);
        assert!((fixed_schedule(0, 50).unwrap() - 0.02).abs() < 1e-15);
        assert!(fixed_schedule(50, 50).is_err());
        let ls: Vec<f64> = (0..10).map(|t| fixed_schedule(t, 10).unwrap()).collect();
        assert!(ls.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn adaptive_examples() {
        let cfg = ScheduleConfig::default();
        assert_eq!(adaptive_total_steps(1.0, &cfg), (50, 45));
        assert_eq!(adaptive_total_steps(0.0, &cfg), (20, 15));
        assert_eq!(adaptive_total_steps(0.9787, &cfg), (45, 40));
        assert!((adaptive_ratio(5, 0.5, &cfg).unwrap() - 0.1).abs() < 1e-15);
        for h in [0.0, 0.95, 1.0] {
            let (total, _) = adaptive_total_steps(h, &cfg);
            assert_eq!(adaptive_ratio(total, h, &cfg).unwrap(), 1.0);
            assert!(adaptive_ratio(total + 1, h, &cfg).is_err());
        }
        // the non-dynamic row: k = 0, b = 50 pins 50 steps
        let flat = ScheduleConfig {
            k: 0.0,
            b: 50.0,
            t_min: 50,
            t_max: 50,
            ..cfg
        };
        assert_eq!(adaptive_total_steps(0.3, &flat).0, 50);
    }

    #[test]
    fn schedule_validation() {
        let mut cfg = ScheduleConfig::default();
        assert!(cfg.validate().is_ok());
        cfg.t_min = 5;
        assert!(cfg.validate().is_err());
        let cfg = ScheduleConfig {
            alpha: 40,
            ..ScheduleConfig::default()
        };
        assert!(cfg.validate().is_err());
        let cfg = ScheduleConfig {
            k: -1.0,
            ..ScheduleConfig::default()
        };
        assert!(cfg.validate().unwrap_err().to_string().contains("schedule.k"));
    }

    #[test]
    fn transitions_fig4_pattern() {
        // 16 tokens: 4 drawn at step t (2 survive, 2 erased), 8 drawn next.
        let s_t = sel(&[1, 1, 1, 1, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0]);
        let s_n = sel(&[1, 1, 0, 0, 1, 1, 1, 1, 1, 1, 0, 0, 0, 0, 0, 0]);
        let y_t = idx_map(&[5; 16], 16);
        let y_n = idx_map(&[5; 16], 16);
        let c = classify_transitions(&s_t, &s_n, &y_t, &y_n).unwrap();
        assert_eq!(
            c,
            TransitionCounts {
                filled: 6,
                kept: 2,
                refined: 0,
                erased: 2,
                blank: 6
            }
        );
        let same = classify_transitions(&s_t, &s_t, &y_t, &y_t).unwrap();
        assert_eq!(same.filled + same.refined + same.erased, 0);
        assert_eq!(same.kept + same.blank, 16);
        let mut y_changed = y_n.clone();
        y_changed.values_mut()[0] = 2;
        let c = classify_transitions(&s_t, &s_n, &y_t, &y_changed).unwrap();
        assert_eq!((c.kept, c.refined), (1, 1));
    }

    #[test]
    fn refine_state_walkthrough() {
        let mut rng = Rng::new(4);
        let y_rand = TokenMap::random(TokenLayout::Index, 4, 8, 2, &mut rng).unwrap();
        let mut state = RefineState::new(y_rand.clone());
        let (input, c) = state.compose_next(0.0, SelectionMap::empty(16)).unwrap();
        assert_eq!(input, y_rand);
        assert_eq!(c.blank, 16);
        let pred = TokenMap::random(TokenLayout::Index, 4, 8, 2, &mut rng).unwrap();
        state.accept_prediction(pred.clone(), 0.5).unwrap();
        let (input, c) = state.compose_next(1.0, SelectionMap::full(16)).unwrap();
        assert_eq!(input, pred);
        assert_eq!(c.filled, 16);
        assert!(state.compose_next(0.5, SelectionMap::full(16)).is_err());
    }

    proptest! {
        #[test]
        fn schedule_contract(h in 0.0f64..=1.0, h2 in 0.0f64..=1.0, k in 0.0f64..1500.0,
                             b in -1200.0f64..100.0, t_min in 6usize..40, span in 0usize..40) {
            let cfg = ScheduleConfig { t0: 5, alpha: 100, k, b, t_min, t_max: t_min + span };
            let (total, d) = adaptive_total_steps(h, &cfg);
            prop_assert!(total >= cfg.t_min && total <= cfg.t_max);
            prop_assert_eq!(total, cfg.t0 + d);
            let mut prev = 0.0;
            for t in 0..=total {
                let l = adaptive_ratio(t, h, &cfg).unwrap();
                prop_assert!(l >= prev);
                prev = l;
            }
            prop_assert_eq!(prev, 1.0);
            let (lo, hi) = if h < h2 { (h, h2) } else { (h2, h) };
            prop_assert!(adaptive_total_steps(lo, &cfg).0 <= adaptive_total_steps(hi, &cfg).0);
        }

        #[test]
        fn entropy_in_unit_interval(raw in prop::collection::vec(0.0f64..1.0, 12)) {
            let mut data = raw.clone();
            for row in data.chunks_mut(4) {
                let s: f64 = row.iter().sum::<f64>() + 1e-9;
                row.iter_mut().for_each(|v| *v /= s);
                let fix = 1.0 - row.iter().sum::<f64>();
                row[0] += fix;
                if row[0] < 0.0 { row[0] = 0.0; }
            }
            let t = Tensor::new(vec![3, 4], data).unwrap();
            let h = mean_entropy(&t).unwrap();
            prop_assert!((0.0..=1.0).contains(&h));
        }

        #[test]
        fn transitions_partition(n in 1usize..64, seed in any::<u64>()) {
            let mut rng = Rng::new(seed);
            let a = make_selection_map(n, rng.next_f64(), &mut rng).unwrap();
            let b = make_selection_map(n, rng.next_f64(), &mut rng).unwrap();
            let ya = TokenMap::random(TokenLayout::Bit, 2, n, 1, &mut rng).unwrap();
            let yb = TokenMap::random(TokenLayout::Bit, 2, n, 1, &mut rng).unwrap();
            prop_assert_eq!(classify_transitions(&a, &b, &ya, &yb).unwrap().total(), n);
        }
    }
}
