use serde::{Deserialize, Serialize};

use super::{Matrix, TensorError};

/// Hyperparameters for [`AdamState`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment estimates for one parameter matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Matrix,
    pub v: Matrix,
    pub step: u64,
    pub config: AdamConfig,
}

impl AdamState {
    pub fn new(rows: usize, cols: usize, config: AdamConfig) -> Result<Self, TensorError> {
        let valid_beta = |b: f64| (0.0..1.0).contains(&b);
        if !valid_beta(config.beta1) || !valid_beta(config.beta2) {
            return Err(TensorError::InvalidArgument(format!(
                "adam betas must lie in [0, 1): {} {}",
                config.beta1, config.beta2
            )));
        }
        if !(config.lr > 0.0) || !(config.eps > 0.0) {
            return Err(TensorError::InvalidArgument(format!(
                "adam lr and eps must be positive: {} {}",
                config.lr, config.eps
            )));
        }
        Ok(Self {
            m: Matrix::zeros(rows, cols),
            v: Matrix::zeros(rows, cols),
            step: 0,
            config,
        })
    }

    pub fn for_param(param: &Matrix, config: AdamConfig) -> Result<Self, TensorError> {
        Self::new(param.rows(), param.cols(), config)
    }
}

/// One bias-corrected Adam update of `param` in place.
pub fn adam_step(
    param: &mut Matrix,
    grad: &Matrix,
    state: &mut AdamState,
) -> Result<(), TensorError> {
    param.check_same_shape(grad, "adam grad")?;
    param.check_same_shape(&state.m, "adam state")?;
    grad.ensure_finite("gradient")?;

    let AdamConfig {
        lr,
        beta1,
        beta2,
        eps,
    } = state.config;
    state.step += 1;
    let t = state.step.min(i32::MAX as u64) as i32;
    let bc1 = 1.0 - beta1.powi(t);
    let bc2 = 1.0 - beta2.powi(t);

    let p = param.as_mut_slice();
    let m = state.m.as_mut_slice();
    let v = state.v.as_mut_slice();
    for (i, &g) in grad.as_slice().iter().enumerate() {
        m[i] = beta1 * m[i] + (1.0 - beta1) * g;
        v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}
