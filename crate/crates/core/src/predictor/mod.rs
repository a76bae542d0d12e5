//! Conditional token predictor: a small pre-norm transformer over the
//! flattened positions of a token map with an in-context class token.
//!
//! Each position is embedded as the sum of its per-channel token
//! embeddings plus a learned position embedding, so all `C_eff` tokens of a
//! position are predicted in parallel from one sequence element.

mod decode;
mod model;

use serde::{Deserialize, Serialize};

use crate::error::{GrnError, Result};
use crate::numerics::{Rng, Scalar};

pub use decode::{apply_cfg, sample_tokens, SampledTokens};
pub use model::{batch_loss_and_grad, forward, loss_and_grad, Example};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictorConfig {
    pub depth: usize,
    pub hidden: usize,
    pub heads: usize,
    pub ff_hidden: usize,
    pub n_pos: usize,
    pub c_eff: usize,
    /// Categories per token.
    pub k: usize,
    /// Condition vocabulary; id `n_classes` is the null condition.
    pub n_classes: usize,
}

impl PredictorConfig {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("depth", self.depth),
            ("hidden", self.hidden),
            ("heads", self.heads),
            ("ff_hidden", self.ff_hidden),
            ("n_pos", self.n_pos),
            ("c_eff", self.c_eff),
            ("n_classes", self.n_classes),
        ];
        if let Some((name, _)) = fields.iter().find(|(_, v)| *v == 0) {
            return Err(GrnError::config(format!("model.{name} must be positive")));
        }
        if self.hidden % self.heads != 0 {
            return Err(GrnError::config(format!(
                "model.hidden ({}) must be divisible by model.heads ({})",
                self.hidden, self.heads
            )));
        }
        if self.k < 2 {
            return Err(GrnError::config(format!("model.k must be at least 2, got {}", self.k)));
        }
        Ok(())
    }

    pub fn seq_len(&self) -> usize {
        self.n_pos + 1
    }

    pub fn null_class(&self) -> usize {
        self.n_classes
    }

    pub fn head_dim(&self) -> usize {
        self.hidden / self.heads
    }

    /// Closed-form parameter count.
    pub fn param_count(&self) -> usize {
        let (h, f, ck) = (self.hidden, self.ff_hidden, self.c_eff * self.k);
        let embed = ck * h + self.n_pos * h + (self.n_classes + 1) * h;
        let layer = 2 * h + 4 * h * h + 3 * h * f;
        embed + self.depth * layer + h + h * ck + ck
    }
}

/// One named block of the flat parameter vector.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Section {
    pub name: String,
    pub offset: usize,
    pub shape: Vec<usize>,
}

impl Section {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct LayerOffsets {
    pub norm1: usize,
    pub wq: usize,
    pub wk: usize,
    pub wv: usize,
    pub wo: usize,
    pub norm2: usize,
    pub w1: usize,
    pub w3: usize,
    pub w2: usize,
}

#[derive(Clone, Debug)]
pub(crate) struct Layout {
    pub tok_emb: usize,
    pub pos_emb: usize,
    pub cls_emb: usize,
    pub layers: Vec<LayerOffsets>,
    pub final_norm: usize,
    pub head_w: usize,
    pub head_b: usize,
    pub total: usize,
}

impl Layout {
    pub fn new(cfg: &PredictorConfig) -> Self {
        let mut sections = sections(cfg).into_iter();
        let mut next = || sections.next().expect("section order").offset;
        let tok_emb = next();
        let pos_emb = next();
        let cls_emb = next();
        let layers = (0..cfg.depth)
            .map(|_| LayerOffsets {
                norm1: next(),
                wq: next(),
                wk: next(),
                wv: next(),
                wo: next(),
                norm2: next(),
                w1: next(),
                w3: next(),
                w2: next(),
            })
            .collect();
        let final_norm = next();
        let head_w = next();
        let head_b = next();
        Self {
            tok_emb,
            pos_emb,
            cls_emb,
            layers,
            final_norm,
            head_w,
            head_b,
            total: cfg.param_count(),
        }
    }
}

/// Named parameter groups in storage order.
pub fn sections(cfg: &PredictorConfig) -> Vec<Section> {
    let (h, f, ck) = (cfg.hidden, cfg.ff_hidden, cfg.c_eff * cfg.k);
    let mut shapes: Vec<(String, Vec<usize>)> = vec![
        ("tok_emb".into(), vec![cfg.c_eff, cfg.k, h]),
        ("pos_emb".into(), vec![cfg.n_pos, h]),
        ("cls_emb".into(), vec![cfg.n_classes + 1, h]),
    ];
    for l in 0..cfg.depth {
        for (name, shape) in [
            ("norm1", vec![h]),
            ("wq", vec![h, h]),
            ("wk", vec![h, h]),
            ("wv", vec![h, h]),
            ("wo", vec![h, h]),
            ("norm2", vec![h]),
            ("w1", vec![h, f]),
            ("w3", vec![h, f]),
            ("w2", vec![f, h]),
        ] {
            shapes.push((format!("layer{l}.{name}"), shape));
        }
    }
    shapes.push(("final_norm".into(), vec![h]));
    shapes.push(("head_w".into(), vec![h, ck]));
    shapes.push(("head_b".into(), vec![ck]));

    let mut offset = 0;
    shapes
        .into_iter()
        .map(|(name, shape)| {
            let s = Section {
                name,
                offset,
                shape,
            };
            offset += s.len();
            s
        })
        .collect()
}

/// Flat parameter vector plus the config that gives it meaning.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictorParams<T = f32> {
    config: PredictorConfig,
    data: Vec<T>,
}

impl<T: Scalar> PredictorParams<T> {
    pub fn from_vec(config: PredictorConfig, data: Vec<T>) -> Result<Self> {
        config.validate()?;
        if data.len() != config.param_count() {
            return Err(GrnError::param(format!(
                "expected {} parameters, got {}",
                config.param_count(),
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(GrnError::numeric("parameters contain non-finite values"));
        }
        Ok(Self { config, data })
    }

    pub fn config(&self) -> &PredictorConfig {
        &self.config
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn sections(&self) -> Vec<Section> {
        sections(&self.config)
    }

    pub fn section(&self, name: &str) -> Option<&[T]> {
        self.sections()
            .into_iter()
            .find(|s| s.name == name)
            .map(|s| &self.data[s.range()])
    }

    pub fn cast<U: Scalar>(&self) -> PredictorParams<U> {
        PredictorParams {
            config: self.config.clone(),
            data: self.data.iter().map(|v| U::from_real(v.real())).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Normal(0, 0.02) weights, unit norm gains, zero output head.
pub fn init_params<T: Scalar>(cfg: &PredictorConfig, rng: &mut Rng) -> Result<PredictorParams<T>> {
    init_params_with_head_std(cfg, rng, 0.0)
}

/// As [`init_params`] but with a random head; used where a zero head would
/// make most gradients vanish.
pub fn init_params_with_head_std<T: Scalar>(
    cfg: &PredictorConfig,
    rng: &mut Rng,
    head_std: f64,
) -> Result<PredictorParams<T>> {
    cfg.validate()?;
    let mut data = vec![T::zero(); cfg.param_count()];
    for s in sections(cfg) {
        let name = s.name.rsplit('.').next().unwrap_or(&s.name);
        let std = match name {
            "head_w" | "head_b" => head_std,
            _ => 0.02,
        };
        for v in &mut data[s.range()] {
            *v = if name.starts_with("norm") || name == "final_norm" {
                T::one()
            } else {
                T::from_real(std * rng.normal())
            };
        }
    }
    PredictorParams::from_vec(cfg.clone(), data)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn tiny_config() -> PredictorConfig {
        PredictorConfig {
            depth: 2,
            hidden: 16,
            heads: 2,
            ff_hidden: 24,
            n_pos: 6,
            c_eff: 3,
            k: 4,
            n_classes: 3,
        }
    }

    #[test]
    fn param_count_matches_sections() {
        let cfg = tiny_config();
        let secs = sections(&cfg);
        let total: usize = secs.iter().map(Section::len).sum();
        assert_eq!(total, cfg.param_count());
        // hand count for the tiny config
        let h = 16;
        let embed = 3 * 4 * h + 6 * h + 4 * h;
        let layer = 2 * h + 4 * h * h + 3 * h * 24;
        assert_eq!(cfg.param_count(), embed + 2 * layer + h + h * 12 + 12);
        let layout = Layout::new(&cfg);
        assert_eq!(layout.head_b + 12, layout.total);
    }

    #[test]
    fn init_is_deterministic_with_zero_head() {
        let cfg = tiny_config();
        let a: PredictorParams = init_params(&cfg, &mut Rng::new(3)).unwrap();
        let b: PredictorParams = init_params(&cfg, &mut Rng::new(3)).unwrap();
        assert_eq!(a, b);
        assert!(a.section("head_w").unwrap().iter().all(|&v| v == 0.0));
        assert!(a.section("layer1.norm2").unwrap().iter().all(|&v| v == 1.0));
        let c: PredictorParams = init_params(&cfg, &mut Rng::new(4)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn config_validation() {
        let mut cfg = tiny_config();
        cfg.heads = 3;
        let err = cfg.validate().unwrap_err().to_string();
        assert!(err.contains("model.hidden") && err.contains("model.heads"));
        let mut cfg = tiny_config();
        cfg.k = 1;
        assert!(cfg.validate().is_err());
    }
}
