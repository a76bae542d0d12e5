use crate::error::{GrnError, Result};
use crate::numerics::Tensor;

/// Max relative error between `analytic` and central differences of `f`
/// around `x`, over every component.
pub fn grad_check<F>(f: F, x: &Tensor<f64>, analytic: &Tensor<f64>, eps: f64) -> Result<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let all: Vec<usize> = (0..x.len()).collect();
    grad_check_at(f, x, analytic, eps, &all)
}

/// Same as [`grad_check`] restricted to the listed components.
pub fn grad_check_at<F>(f: F, x: &Tensor<f64>, analytic: &Tensor<f64>, eps: f64, indices: &[usize]) -> Result<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let numeric = central_differences(f, x, analytic, eps, indices)?;
    Ok(indices
        .iter()
        .zip(&numeric)
        .map(|(&i, &n)| {
            let a = analytic.data()[i];
            (a - n).abs() / a.abs().max(n.abs()).max(1e-8)
        })
        .fold(0.0, f64::max))
}

/// Relative error of the listed components taken as one vector,
/// `‖a − n‖ / max(‖a‖, ‖n‖)`. Unlike the per-component maximum it is not
/// dominated by components whose true gradient sits at roundoff level.
pub fn grad_check_group<F>(f: F, x: &Tensor<f64>, analytic: &Tensor<f64>, eps: f64, indices: &[usize]) -> Result<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let numeric = central_differences(f, x, analytic, eps, indices)?;
    let (mut diff, mut na, mut nn) = (0.0f64, 0.0f64, 0.0f64);
    for (&i, &n) in indices.iter().zip(&numeric) {
        let a = analytic.data()[i];
        diff += (a - n) * (a - n);
        na += a * a;
        nn += n * n;
    }
    Ok(diff.sqrt() / na.sqrt().max(nn.sqrt()).max(1e-12))
}

fn central_differences<F>(mut f: F, x: &Tensor<f64>, analytic: &Tensor<f64>, eps: f64, indices: &[usize]) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> f64,
{
    if !(1e-6..=1e-3).contains(&eps) {
        return Err(GrnError::param(format!("eps {eps} outside [1e-6, 1e-3]")));
    }
    if x.shape() != analytic.shape() {
        return Err(GrnError::param(format!(
            "gradient shape {:?} does not match input {:?}",
            analytic.shape(),
            x.shape()
        )));
    }
    let mut probe = x.data().to_vec();
    let mut out = Vec::with_capacity(indices.len());
    for &i in indices {
        let orig = probe[i];
        probe[i] = orig + eps;
        let plus = f(&probe);
        probe[i] = orig - eps;
        let minus = f(&probe);
        probe[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(GrnError::numeric(format!("objective non-finite near component {i}")));
        }
        out.push((plus - minus) / (2.0 * eps));
    }
    Ok(out)
}
