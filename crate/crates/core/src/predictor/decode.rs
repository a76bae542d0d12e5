use crate::error::{GrnError, Result};
use crate::numerics::{softmax, Rng, Scalar, Tensor};
use crate::refine::{TokenLayout, TokenMap};

/// Guided logits `u + s·(c − u)`.
pub fn apply_cfg<T: Scalar>(cond: &Tensor<T>, uncond: &Tensor<T>, scale: f64) -> Result<Tensor<T>> {
    if cond.shape() != uncond.shape() {
        return Err(GrnError::param(format!(
            "guidance shapes differ: {:?} vs {:?}",
            cond.shape(),
            uncond.shape()
        )));
    }
    if !(scale >= 0.0 && scale.is_finite()) {
        return Err(GrnError::param(format!("guidance scale must be finite and >= 0, got {scale}")));
    }
    let s = T::from_real(scale);
    let data = cond
        .data()
        .iter()
        .zip(uncond.data())
        .map(|(&c, &u)| u + s * (c - u))
        .collect();
    Tensor::new(cond.shape().to_vec(), data)
}

/// Drawn tokens together with the distribution they were drawn from.
#[derive(Clone, Debug)]
pub struct SampledTokens {
    pub tokens: TokenMap,
    /// `[n_pos·c_eff, K]` tempered probabilities.
    pub probs: Tensor<f64>,
}

/// Draws one category per token from `softmax(logits / τ)`.
///
/// `logits` has shape `[n_pos, c_eff, K]`; the draw consumes exactly one
/// uniform per token, in token order.
pub fn sample_tokens<T: Scalar>(
    logits: &Tensor<T>,
    temperature: f64,
    rng: &mut Rng,
    layout: TokenLayout,
) -> Result<SampledTokens> {
    let shape = logits.shape();
    if shape.len() != 3 {
        return Err(GrnError::param(format!("expected [n_pos, c_eff, K] logits, got {shape:?}")));
    }
    let (n_pos, c_eff, k) = (shape[0], shape[1], shape[2]);
    let probs = softmax(logits, temperature)?.reshape(vec![n_pos * c_eff, k])?;
    let values = probs
        .data()
        .chunks(k)
        .map(|row| draw(row, rng.next_f64()) as u16)
        .collect();
    let tokens = TokenMap::new(layout, k, n_pos, c_eff, values)?;
    Ok(SampledTokens { tokens, probs })
}

/// Inverse-CDF draw; falls back to the last category with mass when
/// rounding leaves `u` past the cumulative total.
fn draw(row: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &p) in row.iter().enumerate() {
        if p > 0.0 {
            last = i;
        }
        acc += p;
        if u < acc {
            return i;
        }
    }
    last
}
