//! Loss terms with their analytic gradients.
//!
//! Every function returns `(loss, gradient)` where the gradient has the shape
//! of the differentiated argument. The finite-difference checks live in the
//! crate's `gradients` integration test.

use super::{Matrix, TensorError};

/// What the alignment loss does with a concept column that is all zeros after
/// cubing, where the cosine is undefined.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ZeroColumn {
    /// Fail with [`TensorError::DegenerateColumn`].
    Reject,
    /// Count the column's cosine as 0 (still divided by the full column count).
    Skip,
}

/// Mean softmax cross-entropy over rows.
///
/// Returns the loss and `(softmax - onehot) / N`.
pub fn softmax_ce_loss_grad(
    logits: &Matrix,
    targets: &[usize],
) -> Result<(f64, Matrix), TensorError> {
    let (n, k) = logits.shape();
    if n == 0 {
        return Err(TensorError::Empty("cross-entropy over zero rows".into()));
    }
    if targets.len() != n {
        return Err(TensorError::ShapeMismatch(format!(
            "{} targets for {n} logit rows",
            targets.len()
        )));
    }
    if let Some((row, &t)) = targets.iter().enumerate().find(|(_, &t)| t >= k) {
        return Err(TensorError::IndexOutOfRange(format!(
            "target {t} at row {row} with {k} classes"
        )));
    }
    logits.ensure_finite("logits")?;

    let inv_n = 1.0 / n as f64;
    let mut grad = Matrix::zeros(n, k);
    let mut loss = 0.0;
    for (r, &t) in targets.iter().enumerate() {
        let row = logits.row(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|&z| (z - max).exp()).sum();
        let log_sum = sum.ln() + max;
        loss += log_sum - row[t];
        let g = grad.row_mut(r);
        for (gi, &z) in g.iter_mut().zip(row) {
            *gi = (z - log_sum).exp() * inv_n;
        }
        g[t] -= inv_n;
    }
    Ok((loss * inv_n, grad))
}

/// Negative mean column-wise cosine between cubed concept scores and cubed
/// reference activations.
///
/// Columns index concepts; each cosine runs over the batch (row) dimension.
/// The loss always lies in `[-1, 1]`.
pub fn cosine_alignment_loss_grad(
    scores: &Matrix,
    reference: &Matrix,
    zero_column: ZeroColumn,
) -> Result<(f64, Matrix), TensorError> {
    scores.check_same_shape(reference, "cosine alignment")?;
    let (n, c) = scores.shape();
    if c == 0 || n == 0 {
        return Err(TensorError::Empty("alignment over an empty matrix".into()));
    }
    scores.ensure_finite("scores")?;
    reference.ensure_finite("reference")?;

    let inv_c = 1.0 / c as f64;
    let mut grad = Matrix::zeros(n, c);
    let mut cos_sum = 0.0;
    let mut a = vec![0.0; n];
    let mut b = vec![0.0; n];
    for col in 0..c {
        for r in 0..n {
            a[r] = scores.get(r, col).powi(3);
            b[r] = reference.get(r, col).powi(3);
        }
        let aa: f64 = a.iter().map(|v| v * v).sum();
        let bb: f64 = b.iter().map(|v| v * v).sum();
        // Squared norms below the smallest normal cannot be inverted safely.
        if aa < f64::MIN_POSITIVE || bb < f64::MIN_POSITIVE {
            match zero_column {
                ZeroColumn::Reject => return Err(TensorError::DegenerateColumn(col)),
                ZeroColumn::Skip => continue,
            }
        }
        let (na, nb) = (aa.sqrt(), bb.sqrt());
        let ab: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        let cos = ab / (na * nb);
        cos_sum += cos;
        // d cos / d a = b / (|a||b|) - cos * a / |a|^2 ; d a / d e = 3 e^2
        let inv_nab = 1.0 / (na * nb);
        let cos_over_aa = cos / aa;
        for r in 0..n {
            let e = scores.get(r, col);
            let dcos_da = b[r] * inv_nab - cos_over_aa * a[r];
            grad.set(r, col, -inv_c * dcos_da * 3.0 * e * e);
        }
    }
    Ok((-cos_sum * inv_c, grad))
}

/// Elastic-net penalty `phi·‖W‖₁ + ½(1−phi)·‖W‖²_F`.
///
/// With `squared_frobenius = false` the second term is the unsquared norm
/// `½(1−phi)·‖W‖_F`, whose gradient is taken as zero at `W = 0`. The L1
/// subgradient uses `sign(0) = 0`.
pub fn elastic_net_penalty_grad(
    w: &Matrix,
    phi: f64,
    squared_frobenius: bool,
) -> Result<(f64, Matrix), TensorError> {
    if !(0.0..=1.0).contains(&phi) {
        return Err(TensorError::InvalidArgument(format!(
            "phi must lie in [0, 1], got {phi}"
        )));
    }
    w.ensure_finite("weights")?;
    let l1: f64 = w.as_slice().iter().map(|v| v.abs()).sum();
    let sq: f64 = w.as_slice().iter().map(|v| v * v).sum();
    let ridge = 0.5 * (1.0 - phi);
    let sign = |v: f64| {
        if v > 0.0 {
            1.0
        } else if v < 0.0 {
            -1.0
        } else {
            0.0
        }
    };
    if squared_frobenius {
        let grad = w.map(|v| phi * sign(v) + 2.0 * ridge * v);
        Ok((phi * l1 + ridge * sq, grad))
    } else {
        let norm = sq.sqrt();
        let inv = if norm > 0.0 { 1.0 / norm } else { 0.0 };
        let grad = w.map(|v| phi * sign(v) + ridge * v * inv);
        Ok((phi * l1 + ridge * norm, grad))
    }
}

/// Mean squared Mahalanobis distance of the rows of `q` to `mu`.
///
/// `loss = (1/K) Σ_k (q_k − mu)ᵀ Σ⁻¹ (q_k − mu)`, gradient row
/// `(2/K) Σ⁻¹ (q_k − mu)` (assumes a symmetric `sigma_inv`).
pub fn mahalanobis_loss_grad(
    q: &Matrix,
    mu: &[f64],
    sigma_inv: &Matrix,
) -> Result<(f64, Matrix), TensorError> {
    let (k, d) = q.shape();
    if mu.len() != d || sigma_inv.shape() != (d, d) {
        return Err(TensorError::ShapeMismatch(format!(
            "mahalanobis: q {k}x{d}, mu {}, sigma_inv {}x{}",
            mu.len(),
            sigma_inv.rows(),
            sigma_inv.cols()
        )));
    }
    if k == 0 {
        return Err(TensorError::Empty("mahalanobis over zero rows".into()));
    }
    let mut diff = q.clone();
    for r in 0..k {
        for (v, m) in diff.row_mut(r).iter_mut().zip(mu) {
            *v -= m;
        }
    }
    // rows of diff · Σ⁻¹ (Σ⁻¹ symmetric)
    let projected = diff.matmul(sigma_inv)?;
    let inv_k = 1.0 / k as f64;
    let loss: f64 = diff
        .as_slice()
        .iter()
        .zip(projected.as_slice())
        .map(|(a, b)| a * b)
        .sum::<f64>()
        * inv_k;
    let mut grad = projected;
    grad.scale(2.0 * inv_k);
    Ok((loss, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: usize, cols: usize, v: &[f64]) -> Matrix {
        Matrix::from_vec(rows, cols, v.to_vec()).unwrap()
    }

    #[test]
    fn ce_uniform_logits_give_ln_k() {
        let (loss, grad) = softmax_ce_loss_grad(&Matrix::zeros(1, 3), &[0]).unwrap();
        assert!((loss - 3f64.ln()).abs() < 1e-12);
        assert!((grad.get(0, 0) - (1.0 / 3.0 - 1.0)).abs() < 1e-12);
    }

    #[test]
    fn ce_saturated_logits_give_zero() {
        let (loss, _) = softmax_ce_loss_grad(&m(1, 2, &[100.0, 0.0]), &[0]).unwrap();
        assert!(loss.abs() < 1e-12);
    }

    #[test]
    fn ce_rejects_bad_input() {
        assert!(matches!(
            softmax_ce_loss_grad(&Matrix::zeros(1, 2), &[2]),
            Err(TensorError::IndexOutOfRange(_))
        ));
        assert!(matches!(
            softmax_ce_loss_grad(&m(1, 2, &[f64::INFINITY, 0.0]), &[0]),
            Err(TensorError::NonFinite(_))
        ));
        assert!(softmax_ce_loss_grad(&Matrix::zeros(0, 2), &[]).is_err());
    }

    #[test]
    fn alignment_self_is_minus_one() {
        let e = m(3, 2, &[0.3, -1.2, 0.7, 0.4, -0.5, 2.0]);
        let (loss, grad) = cosine_alignment_loss_grad(&e, &e, ZeroColumn::Reject).unwrap();
        assert!((loss + 1.0).abs() < 1e-12);
        // a maximum of cosine: zero gradient
        assert!(grad.as_slice().iter().all(|g| g.abs() < 1e-12));
    }

    #[test]
    fn alignment_orthogonal_is_zero() {
        let e = m(2, 1, &[1.0, 0.0]);
        let c = m(2, 1, &[0.0, 1.0]);
        let (loss, _) = cosine_alignment_loss_grad(&e, &c, ZeroColumn::Reject).unwrap();
        assert_eq!(loss, 0.0);
    }

    #[test]
    fn alignment_zero_column_policy() {
        let e = m(2, 2, &[0.0, 1.0, 0.0, 2.0]);
        assert!(matches!(
            cosine_alignment_loss_grad(&e, &e, ZeroColumn::Reject),
            Err(TensorError::DegenerateColumn(0))
        ));
        let (loss, grad) = cosine_alignment_loss_grad(&e, &e, ZeroColumn::Skip).unwrap();
        assert!((loss + 0.5).abs() < 1e-12);
        assert_eq!(grad.get(0, 0), 0.0);
    }

    #[test]
    fn elastic_net_fixtures() {
        let (loss, grad) = elastic_net_penalty_grad(&Matrix::zeros(2, 3), 0.99, true).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grad.as_slice().iter().all(|&g| g == 0.0));

        let (loss, _) = elastic_net_penalty_grad(&Matrix::identity(2), 0.99, true).unwrap();
        assert!((loss - 1.99).abs() < 1e-12);

        let (loss, _) = elastic_net_penalty_grad(&Matrix::identity(2), 0.99, false).unwrap();
        assert!((loss - (1.98 + 0.005 * 2f64.sqrt())).abs() < 1e-12);

        assert!(elastic_net_penalty_grad(&Matrix::identity(2), 1.5, true).is_err());
    }

    #[test]
    fn mahalanobis_fixtures() {
        let mu = [0.5, -1.0];
        let q = m(2, 2, &[0.5, -1.0, 0.5, -1.0]);
        let (loss, grad) = mahalanobis_loss_grad(&q, &mu, &Matrix::identity(2)).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grad.as_slice().iter().all(|&g| g == 0.0));

        // identity covariance: mean squared euclidean distance
        let q = m(2, 2, &[1.5, -1.0, 0.5, 1.0]);
        let (loss, _) = mahalanobis_loss_grad(&q, &mu, &Matrix::identity(2)).unwrap();
        assert!((loss - (1.0 + 4.0) / 2.0).abs() < 1e-12);

        assert!(mahalanobis_loss_grad(&q, &[0.0], &Matrix::identity(2)).is_err());
    }
}
