//! Dense arithmetic, seeded randomness and the softmax / cross-entropy
//! primitives shared by the quantizer, the predictor and the sampler.

mod grad_check;
mod rng;
mod tensor;

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::AddAssign;

use num_traits::Float;

use crate::error::{GrnError, Result};

pub use grad_check::{grad_check, grad_check_at, grad_check_group};
pub use rng::{uniform, Rng};
pub use tensor::Tensor;

/// Floating-point element type usable by the model code.
///
/// Model tensors are `f32`; the `f64` instantiation exists so gradient
/// checks can run the exact same code path with enough precision for
/// central differences.
pub trait Scalar: Float + Default + Debug + Sum + AddAssign + Send + Sync + 'static {
    fn from_real(v: f64) -> Self;
    fn real(self) -> f64;

    /// `c = a · b (+ c)` on row-major buffers, `a` is `m×k`, `b` is `k×n`.
    /// `trans_a` / `trans_b` mean the buffer holds the transpose.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: &[Self],
        trans_a: bool,
        b: &[Self],
        trans_b: bool,
        c: &mut [Self],
        accumulate: bool,
    );
}

fn strides(rows: usize, cols: usize, trans: bool) -> (isize, isize) {
    if trans {
        (1, rows as isize)
    } else {
        (cols as isize, 1)
    }
}

macro_rules! impl_scalar {
    ($t:ty, $gemm:path) => {
        impl Scalar for $t {
            #[inline]
            fn from_real(v: f64) -> Self {
                v as $t
            }

            #[inline]
            fn real(self) -> f64 {
                self as f64
            }

            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                a: &[Self],
                trans_a: bool,
                b: &[Self],
                trans_b: bool,
                c: &mut [Self],
                accumulate: bool,
            ) {
                assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
                let (rsa, csa) = strides(m, k, trans_a);
                let (rsb, csb) = strides(k, n, trans_b);
                let beta = if accumulate { 1.0 } else { 0.0 };
                // SAFETY: bounds asserted above, strides describe dense buffers.
                unsafe {
                    $gemm(
                        m,
                        k,
                        n,
                        1.0,
                        a.as_ptr(),
                        rsa,
                        csa,
                        b.as_ptr(),
                        rsb,
                        csb,
                        beta,
                        c.as_mut_ptr(),
                        n as isize,
                        1,
                    );
                }
            }
        }
    };
}

impl_scalar!(f32, matrixmultiply::sgemm);
impl_scalar!(f64, matrixmultiply::dgemm);

fn check_temperature(temperature: f64) -> Result<()> {
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(GrnError::param(format!(
            "temperature must be positive, got {temperature}"
        )));
    }
    Ok(())
}

/// Max-subtracted softmax of one slice, written into `out`.
pub fn softmax_slice<T: Scalar>(logits: &[T], temperature: f64, out: &mut [f64]) {
    let inv_t = 1.0 / temperature;
    let max = logits
        .iter()
        .fold(f64::NEG_INFINITY, |m, v| m.max(v.real()));
    let mut sum = 0.0;
    for (o, l) in out.iter_mut().zip(logits) {
        *o = ((l.real() - max) * inv_t).exp();
        sum += *o;
    }
    let inv = 1.0 / sum;
    for o in out.iter_mut() {
        *o *= inv;
    }
}

/// Softmax over the last axis at the given temperature.
pub fn softmax<T: Scalar>(logits: &Tensor<T>, temperature: f64) -> Result<Tensor<f64>> {
    check_temperature(temperature)?;
    if !logits.all_finite() {
        return Err(GrnError::numeric("softmax input contains non-finite logits"));
    }
    let k = logits.last_dim();
    let mut out = vec![0.0; logits.len()];
    for (src, dst) in logits.data().chunks(k).zip(out.chunks_mut(k)) {
        softmax_slice(src, temperature, dst);
    }
    Tensor::new(logits.shape().to_vec(), out)
}

fn check_targets(logits_len: usize, k: usize, targets: &[usize]) -> Result<()> {
    if logits_len != targets.len() * k {
        return Err(GrnError::param(format!(
            "{} targets do not match {} logit rows",
            targets.len(),
            logits_len / k
        )));
    }
    if let Some((i, t)) = targets.iter().enumerate().find(|(_, &t)| t >= k) {
        return Err(GrnError::Index(format!(
            "target {t} at row {i} outside [0, {k})"
        )));
    }
    Ok(())
}

fn log_sum_exp<T: Scalar>(row: &[T]) -> f64 {
    let max = row.iter().fold(f64::NEG_INFINITY, |m, v| m.max(v.real()));
    row.iter().map(|v| (v.real() - max).exp()).sum::<f64>().ln() + max
}

/// Mean negative log-likelihood in nats over rows of `[N, K]` logits.
pub fn cross_entropy<T: Scalar>(logits: &Tensor<T>, targets: &[usize]) -> Result<f64> {
    let k = logits.last_dim();
    check_targets(logits.len(), k, targets)?;
    let mut total = 0.0;
    for (row, &t) in logits.data().chunks(k).zip(targets) {
        total += log_sum_exp(row) - row[t].real();
    }
    Ok(total / targets.len() as f64)
}

/// Cross-entropy plus its gradient with respect to the logits.
///
/// `scale` multiplies the gradient (batch averaging is done by the caller).
pub fn cross_entropy_with_grad<T: Scalar>(
    logits: &[T],
    k: usize,
    targets: &[usize],
    scale: f64,
) -> Result<(f64, Vec<T>)> {
    check_targets(logits.len(), k, targets)?;
    let n = targets.len() as f64;
    let mut grad = vec![T::zero(); logits.len()];
    let mut probs = vec![0.0; k];
    let mut total = 0.0;
    for ((row, g), &t) in logits.chunks(k).zip(grad.chunks_mut(k)).zip(targets) {
        softmax_slice(row, 1.0, &mut probs);
        total += log_sum_exp(row) - row[t].real();
        for (j, (gj, p)) in g.iter_mut().zip(&probs).enumerate() {
            let onehot = if j == t { 1.0 } else { 0.0 };
            *gj = T::from_real((p - onehot) * scale / n);
        }
    }
    let loss = total / n;
    if !loss.is_finite() {
        return Err(GrnError::numeric("cross-entropy is not finite"));
    }
    Ok((loss, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_examples() {
        let t = Tensor::new(vec![2], vec![0.0f32, 0.0]).unwrap();
        let p = softmax(&t, 1.0).unwrap();
        assert_eq!(p.data(), &[0.5, 0.5]);

        let t = Tensor::new(vec![4], vec![1.0f32; 4]).unwrap();
        let p = softmax(&t, 0.7).unwrap();
        for v in p.data() {
            assert!((v - 0.25).abs() < 1e-12);
        }

        let t = Tensor::new(vec![2], vec![2.0f64, 0.0]).unwrap();
        let p = softmax(&t, 1.0).unwrap();
        let e2 = 2f64.exp();
        assert!((p.data()[0] - e2 / (e2 + 1.0)).abs() < 1e-12);
        assert!((p.data()[0] - 0.8808).abs() < 1e-4);
        assert!((p.data()[1] - 0.1192).abs() < 1e-4);
    }

    #[test]
    fn softmax_rejects_bad_temperature() {
        let t = Tensor::new(vec![2], vec![0.0f32, 1.0]).unwrap();
        assert!(matches!(softmax(&t, 0.0), Err(GrnError::Parameter(_))));
        assert!(matches!(softmax(&t, -1.0), Err(GrnError::Parameter(_))));
    }

    #[test]
    fn softmax_slices_sum_to_one() {
        let mut rng = Rng::new(3);
        let data: Vec<f32> = (0..64 * 7).map(|_| (rng.next_f64() * 100.0 - 50.0) as f32).collect();
        let t = Tensor::new(vec![64, 7], data).unwrap();
        let p = softmax(&t, 1.0).unwrap();
        for row in p.data().chunks(7) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn cross_entropy_examples() {
        let t = Tensor::new(vec![3, 16], vec![0.5f32; 48]).unwrap();
        let loss = cross_entropy(&t, &[0, 5, 15]).unwrap();
        assert!((loss - 16f64.ln()).abs() < 1e-6);

        let t = Tensor::new(vec![1, 2], vec![0.25f64.ln(), 0.75f64.ln()]).unwrap();
        let loss = cross_entropy(&t, &[1]).unwrap();
        assert!((loss - 0.28768).abs() < 1e-5);

        let mut prev = f64::INFINITY;
        for margin in [1.0, 5.0, 20.0, 60.0] {
            let t = Tensor::new(vec![1, 3], vec![margin, 0.0, 0.0]).unwrap();
            let loss = cross_entropy(&t, &[0]).unwrap();
            assert!(loss >= 0.0 && loss < prev);
            prev = loss;
        }
        assert!(prev < 1e-20);
    }

    #[test]
    fn cross_entropy_target_out_of_range() {
        let t = Tensor::new(vec![1, 2], vec![0.0f32, 0.0]).unwrap();
        assert!(matches!(cross_entropy(&t, &[2]), Err(GrnError::Index(_))));
    }

    #[test]
    fn cross_entropy_grad_matches_value() {
        let logits = [0.3f64, -1.2, 0.7, 2.0, 0.1, -0.4];
        let (loss, grad) = cross_entropy_with_grad(&logits, 3, &[2, 0], 1.0).unwrap();
        let t = Tensor::new(vec![2, 3], logits.to_vec()).unwrap();
        assert!((loss - cross_entropy(&t, &[2, 0]).unwrap()).abs() < 1e-12);
        let x = Tensor::new(vec![6], logits.to_vec()).unwrap();
        let g = Tensor::new(vec![6], grad).unwrap();
        let err = grad_check(
            |v| cross_entropy(&Tensor::new(vec![2, 3], v.to_vec()).unwrap(), &[2, 0]).unwrap(),
            &x,
            &g,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-7, "{err}");
    }

    #[test]
    fn gemm_transposes() {
        // a = [[1,2,3],[4,5,6]] (2x3), b = [[1,0],[0,1],[1,1]] (3x2)
        let a = [1.0f64, 2.0, 3.0, 4.0, 5.0, 6.0];
        let b = [1.0f64, 0.0, 0.0, 1.0, 1.0, 1.0];
        let mut c = [0.0f64; 4];
        f64::gemm(2, 3, 2, &a, false, &b, false, &mut c, false);
        assert_eq!(c, [4.0, 5.0, 10.0, 11.0]);
        let at = [1.0f64, 4.0, 2.0, 5.0, 3.0, 6.0];
        let bt = [1.0f64, 0.0, 1.0, 0.0, 1.0, 1.0];
        let mut c2 = [1.0f64; 4];
        f64::gemm(2, 3, 2, &at, true, &bt, true, &mut c2, true);
        assert_eq!(c2, [5.0, 6.0, 11.0, 12.0]);
    }
}
