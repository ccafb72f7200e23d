use super::{Matrix, TensorError};

/// Cholesky factor `L` (lower triangular) of a symmetric positive-definite matrix.
pub fn cholesky(a: &Matrix) -> Result<Matrix, TensorError> {
    let (n, c) = a.shape();
    if n != c {
        return Err(TensorError::ShapeMismatch(format!(
            "cholesky of non-square {n}x{c}"
        )));
    }
    let mut l = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let mut sum = a.get(i, j);
            for k in 0..j {
                sum -= l.get(i, k) * l.get(j, k);
            }
            if i == j {
                if !(sum > 0.0) {
                    return Err(TensorError::NotPositiveDefinite(i));
                }
                l.set(i, i, sum.sqrt());
            } else {
                l.set(i, j, sum / l.get(j, j));
            }
        }
    }
    Ok(l)
}

/// Inverse of a symmetric positive-definite matrix via its Cholesky factor.
pub fn spd_inverse(a: &Matrix) -> Result<Matrix, TensorError> {
    let l = cholesky(a)?;
    let n = l.rows();
    // L⁻¹ by forward substitution, then A⁻¹ = L⁻ᵀ L⁻¹.
    let mut linv = Matrix::zeros(n, n);
    for col in 0..n {
        for i in col..n {
            let mut sum = if i == col { 1.0 } else { 0.0 };
            for k in col..i {
                sum -= l.get(i, k) * linv.get(k, col);
            }
            linv.set(i, col, sum / l.get(i, i));
        }
    }
    let mut inv = linv.t_matmul(&linv)?;
    // exact symmetry
    for i in 0..n {
        for j in 0..i {
            let v = 0.5 * (inv.get(i, j) + inv.get(j, i));
            inv.set(i, j, v);
            inv.set(j, i, v);
        }
    }
    Ok(inv)
}
