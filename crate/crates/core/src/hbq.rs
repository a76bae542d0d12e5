//! Hierarchical binary quantization.
//!
//! A bounded feature `F ∈ (-1, 1)` is bucketed in `M` coarse-to-fine rounds.
//! Round `i` compares `F` against the running center `c_i` (starting at 0),
//! emits `q_i = [F > c_i]`, and moves the center by `±2^-i`. The
//! reconstruction `Σ δ(q_i)·2^-i` with `δ(0) = -1, δ(1) = +1` is within
//! `2^-M` of `F`.
//!
//! Bits are stored element-major with the round axis last, so the flat-bit
//! view `[.., C·M]` is the same buffer with the last two axes merged.

use crate::error::{GrnError, Result};
use crate::numerics::{Scalar, Tensor};

pub const MAX_ROUNDS: u8 = 16;

/// Largest magnitude a bounded feature may take.
pub const SATURATION_LIMIT: f64 = 1.0 - 1.0 / (1u32 << 20) as f64;

const MAGIC: &[u8; 8] = b"HBQPLANE";
const FORMAT_VERSION: u8 = 1;

fn check_rounds(rounds: u8) -> Result<()> {
    if rounds == 0 || rounds > MAX_ROUNDS {
        return Err(GrnError::param(format!(
            "rounds must be in 1..={MAX_ROUNDS}, got {rounds}"
        )));
    }
    Ok(())
}

/// Binary labels `q_1..q_M` for every element of a feature grid.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BitPlanes {
    shape: Vec<usize>,
    rounds: u8,
    planes: Vec<bool>,
}

impl BitPlanes {
    /// `planes` is element-major: `planes[e * M + (i - 1)]` is `q_i` of element `e`.
    pub fn new(shape: Vec<usize>, rounds: u8, planes: Vec<bool>) -> Result<Self> {
        check_rounds(rounds)?;
        let elems: usize = shape.iter().product();
        if shape.is_empty() || shape.contains(&0) {
            return Err(GrnError::param(format!("invalid grid shape {shape:?}")));
        }
        if planes.len() != elems * rounds as usize {
            return Err(GrnError::param(format!(
                "{} bits do not fill grid {shape:?} x {rounds} rounds",
                planes.len()
            )));
        }
        Ok(Self {
            shape,
            rounds,
            planes,
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rounds(&self) -> u8 {
        self.rounds
    }

    pub fn num_elements(&self) -> usize {
        self.planes.len() / self.rounds as usize
    }

    pub fn bits(&self) -> &[bool] {
        &self.planes
    }

    /// Labels `q_1..q_M` of one element.
    pub fn element(&self, e: usize) -> &[bool] {
        let m = self.rounds as usize;
        &self.planes[e * m..(e + 1) * m]
    }

    /// Little-endian blob: magic, version, `M`, rank, `u32` extents, then
    /// the bits plane-major (all of `q_1`, then `q_2`, ...) packed LSB-first.
    pub fn to_bytes(&self) -> Vec<u8> {
        let elems = self.num_elements();
        let m = self.rounds as usize;
        let mut out = Vec::with_capacity(11 + 4 * self.shape.len() + (elems * m).div_ceil(8));
        out.extend_from_slice(MAGIC);
        out.push(FORMAT_VERSION);
        out.push(self.rounds);
        out.push(self.shape.len() as u8);
        for &d in &self.shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        let mut payload = vec![0u8; (elems * m).div_ceil(8)];
        for plane in 0..m {
            for e in 0..elems {
                if self.planes[e * m + plane] {
                    let b = plane * elems + e;
                    payload[b / 8] |= 1 << (b % 8);
                }
            }
        }
        out.extend_from_slice(&payload);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let need = |offset: usize, n: usize, what: &str| -> Result<()> {
            if bytes.len() < offset + n {
                Err(GrnError::format(
                    bytes.len(),
                    format!("truncated while reading {what}"),
                ))
            } else {
                Ok(())
            }
        };
        need(0, 8, "magic")?;
        if &bytes[..8] != MAGIC {
            return Err(GrnError::format(0, "bad magic"));
        }
        need(8, 3, "header")?;
        if bytes[8] != FORMAT_VERSION {
            return Err(GrnError::format(8, format!("unsupported version {}", bytes[8])));
        }
        let rounds = bytes[9];
        if rounds == 0 || rounds > MAX_ROUNDS {
            return Err(GrnError::format(9, format!("invalid round count {rounds}")));
        }
        let rank = bytes[10] as usize;
        if rank == 0 {
            return Err(GrnError::format(10, "zero-rank grid"));
        }
        let mut offset = 11;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            need(offset, 4, "extent")?;
            let d = u32::from_le_bytes(bytes[offset..offset + 4].try_into().unwrap()) as usize;
            if d == 0 {
                return Err(GrnError::format(offset, "zero extent"));
            }
            shape.push(d);
            offset += 4;
        }
        let elems: usize = shape.iter().product();
        let m = rounds as usize;
        let payload_len = (elems * m).div_ceil(8);
        need(offset, payload_len, "bit payload")?;
        if bytes.len() != offset + payload_len {
            return Err(GrnError::format(offset + payload_len, "trailing bytes"));
        }
        let payload = &bytes[offset..];
        let mut planes = vec![false; elems * m];
        for plane in 0..m {
            for e in 0..elems {
                let b = plane * elems + e;
                planes[e * m + plane] = payload[b / 8] >> (b % 8) & 1 == 1;
            }
        }
        BitPlanes::new(shape, rounds, planes)
    }
}

/// Dequantized values; each is an odd multiple of `2^-M`.
#[derive(Clone, Debug, PartialEq)]
pub struct QuantizedFeature {
    values: Tensor<f64>,
}

impl QuantizedFeature {
    pub fn values(&self) -> &Tensor<f64> {
        &self.values
    }

    pub fn into_tensor(self) -> Tensor<f64> {
        self.values
    }
}

/// Packed integer view, `q_1` as the most significant bit.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IndexMap {
    shape: Vec<usize>,
    rounds: u8,
    values: Vec<u16>,
}

impl IndexMap {
    pub fn new(shape: Vec<usize>, rounds: u8, values: Vec<u16>) -> Result<Self> {
        check_rounds(rounds)?;
        if shape.iter().product::<usize>() != values.len() {
            return Err(GrnError::param(format!(
                "{} indices do not fill grid {shape:?}",
                values.len()
            )));
        }
        check_index_range(&values, rounds)?;
        Ok(Self {
            shape,
            rounds,
            values,
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rounds(&self) -> u8 {
        self.rounds
    }

    pub fn values(&self) -> &[u16] {
        &self.values
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        unpack_indices(self, self.rounds)
            .expect("validated at construction")
            .to_bytes()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        Ok(pack_indices(&BitPlanes::from_bytes(bytes)?))
    }
}

/// Flat-bit view `[.., C·M]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BitMap {
    shape: Vec<usize>,
    values: Vec<u8>,
}

impl BitMap {
    pub fn new(shape: Vec<usize>, values: Vec<u8>) -> Result<Self> {
        if shape.is_empty() || shape.iter().product::<usize>() != values.len() {
            return Err(GrnError::param(format!(
                "{} bits do not fill shape {shape:?}",
                values.len()
            )));
        }
        if values.iter().any(|&v| v > 1) {
            return Err(GrnError::domain("bit map holds a value other than 0/1"));
        }
        Ok(Self { shape, values })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn values(&self) -> &[u8] {
        &self.values
    }
}

fn check_index_range(values: &[u16], rounds: u8) -> Result<()> {
    let limit = 1u32 << rounds;
    if let Some((i, v)) = values.iter().enumerate().find(|(_, &v)| v as u32 >= limit) {
        return Err(GrnError::domain(format!(
            "index {v} at {i} does not fit {rounds} rounds"
        )));
    }
    Ok(())
}

/// `tanh`, with saturated outputs pulled back inside the open interval.
pub fn bound_features<T: Scalar>(raw: &Tensor<T>) -> Tensor<T> {
    let limit = T::from_real(SATURATION_LIMIT);
    raw.map(|v| v.tanh().max(-limit).min(limit))
}

/// Labels of a single value, MSB-first in the low `rounds` bits.
pub fn quantize_value(f: f64, rounds: u8) -> u16 {
    let mut center = 0.0f64;
    let mut step = 0.5f64;
    let mut code = 0u16;
    for _ in 0..rounds {
        let q = f > center;
        code = (code << 1) | q as u16;
        center += if q { step } else { -step };
        step *= 0.5;
    }
    code
}

/// Reconstruction from the first `m` labels of an MSB-first code of `rounds` bits.
pub fn dequantize_code(code: u16, rounds: u8, m: u8) -> f64 {
    let mut value = 0.0f64;
    let mut step = 0.5f64;
    for i in 0..m {
        let bit = code >> (rounds - 1 - i) & 1;
        value += if bit == 1 { step } else { -step };
        step *= 0.5;
    }
    value
}

pub fn quantize<T: Scalar>(features: &Tensor<T>, rounds: u8) -> Result<BitPlanes> {
    check_rounds(rounds)?;
    let m = rounds as usize;
    let mut planes = Vec::with_capacity(features.len() * m);
    for (i, v) in features.data().iter().enumerate() {
        let f = v.real();
        if !(f.abs() < 1.0) {
            return Err(GrnError::domain(format!(
                "feature {f} at {i} outside (-1, 1)"
            )));
        }
        let code = quantize_value(f, rounds);
        planes.extend((0..m).map(|r| code >> (m - 1 - r) & 1 == 1));
    }
    BitPlanes::new(features.shape().to_vec(), rounds, planes)
}

pub fn dequantize(q: &BitPlanes) -> QuantizedFeature {
    dequantize_prefix(q, q.rounds as usize)
}

/// Reconstruction from the first `m` rounds only.
pub fn dequantize_truncated(q: &BitPlanes, m: u8) -> Result<QuantizedFeature> {
    if m == 0 || m > q.rounds {
        return Err(GrnError::param(format!(
            "truncation {m} outside 1..={}",
            q.rounds
        )));
    }
    Ok(dequantize_prefix(q, m as usize))
}

fn dequantize_prefix(q: &BitPlanes, m: usize) -> QuantizedFeature {
    let values: Vec<f64> = (0..q.num_elements())
        .map(|e| {
            let mut step = 0.5f64;
            let mut v = 0.0f64;
            for &bit in &q.element(e)[..m] {
                v += if bit { step } else { -step };
                step *= 0.5;
            }
            v
        })
        .collect();
    QuantizedFeature {
        values: Tensor::new(q.shape.clone(), values).expect("shape validated by BitPlanes"),
    }
}

/// Straight-through combination of a feature and its quantization.
///
/// The forward value is `F̂`; the backward pass treats `F̂ - F` as a
/// constant so the gradient with respect to `F` is the identity.
#[derive(Clone, Debug)]
pub struct SteCombined<T: Scalar> {
    value: Tensor<T>,
    residual: Tensor<f64>,
}

impl<T: Scalar> SteCombined<T> {
    pub fn value(&self) -> &Tensor<T> {
        &self.value
    }

    /// The held-constant residual `F̂ - F`.
    pub fn residual(&self) -> &Tensor<f64> {
        &self.residual
    }

    pub fn backward(&self, upstream: &Tensor<T>) -> Result<Tensor<T>> {
        if upstream.shape() != self.value.shape() {
            return Err(GrnError::param("upstream gradient shape mismatch"));
        }
        Ok(upstream.clone())
    }
}

pub fn ste_combine<T: Scalar>(f: &Tensor<T>, f_hat: &QuantizedFeature) -> Result<SteCombined<T>> {
    if f.shape() != f_hat.values.shape() {
        return Err(GrnError::param(format!(
            "feature shape {:?} does not match quantized shape {:?}",
            f.shape(),
            f_hat.values.shape()
        )));
    }
    let residual = Tensor::from_fn(f.shape(), |i| f_hat.values.data()[i] - f.data()[i].real());
    Ok(SteCombined {
        value: f_hat.values.cast(),
        residual,
    })
}

pub fn pack_indices(q: &BitPlanes) -> IndexMap {
    let values = (0..q.num_elements())
        .map(|e| {
            q.element(e)
                .iter()
                .fold(0u16, |acc, &bit| (acc << 1) | bit as u16)
        })
        .collect();
    IndexMap {
        shape: q.shape.clone(),
        rounds: q.rounds,
        values,
    }
}

pub fn unpack_indices(y: &IndexMap, rounds: u8) -> Result<BitPlanes> {
    check_rounds(rounds)?;
    check_index_range(&y.values, rounds)?;
    let m = rounds as usize;
    let planes = y
        .values
        .iter()
        .flat_map(|&v| (0..m).map(move |r| v >> (m - 1 - r) & 1 == 1))
        .collect();
    BitPlanes::new(y.shape.clone(), rounds, planes)
}

pub fn flatten_bits(q: &BitPlanes) -> BitMap {
    let mut shape = q.shape.clone();
    *shape.last_mut().unwrap() *= q.rounds as usize;
    BitMap {
        shape,
        values: q.planes.iter().map(|&b| b as u8).collect(),
    }
}

pub fn unflatten_bits(b: &BitMap, channels: usize, rounds: u8) -> Result<BitPlanes> {
    check_rounds(rounds)?;
    let last = *b.shape.last().unwrap();
    if channels == 0 || last != channels * rounds as usize {
        return Err(GrnError::param(format!(
            "last extent {last} is not {channels} channels x {rounds} rounds"
        )));
    }
    let mut shape = b.shape.clone();
    *shape.last_mut().unwrap() = channels;
    BitPlanes::new(shape, rounds, b.values.iter().map(|&v| v == 1).collect())
}
