use serde::{Deserialize, Serialize};

use super::{Gradients, NetError, Network};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
}

fn default_lr() -> f64 {
    8e-4
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_epsilon() -> f64 {
    1e-8
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: default_lr(),
            beta1: default_beta1(),
            beta2: default_beta2(),
            epsilon: default_epsilon(),
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err("learning_rate must be positive".into());
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(b > 0.0 && b < 1.0) {
                return Err(format!("{name} must lie in (0, 1)"));
            }
        }
        if !(self.epsilon > 0.0) {
            return Err("epsilon must be positive".into());
        }
        Ok(())
    }
}

/// Adam moments for one network, one vector per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub config: AdamConfig,
    pub first_moment: Vec<Vec<f64>>,
    pub second_moment: Vec<Vec<f64>>,
    pub step: u64,
}

impl OptimizerState {
    pub fn new(net: &Network, config: AdamConfig) -> Self {
        let zeros: Vec<Vec<f64>> = net.params().iter().map(|p| vec![0.0; p.len()]).collect();
        Self {
            config,
            first_moment: zeros.clone(),
            second_moment: zeros,
            step: 0,
        }
    }
}

/// One bias-corrected Adam update of `net` in place.
pub fn adam_step(net: &mut Network, grads: &Gradients, opt: &mut OptimizerState) -> Result<(), NetError> {
    let grad_tensors = grads.tensors();
    {
        let params = net.params();
        if params.len() != grad_tensors.len() || params.len() != opt.first_moment.len() {
            return Err(NetError::ShapeMismatch(format!(
                "{} parameter tensors, {} gradient tensors, {} moment tensors",
                params.len(),
                grad_tensors.len(),
                opt.first_moment.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(&grad_tensors).enumerate() {
            if p.len() != g.len() || p.len() != opt.first_moment[i].len() || p.len() != opt.second_moment[i].len() {
                return Err(NetError::ShapeMismatch(format!(
                    "tensor {i}: {} params, {} grads",
                    p.len(),
                    g.len()
                )));
            }
        }
    }

    opt.step += 1;
    let AdamConfig {
        learning_rate,
        beta1,
        beta2,
        epsilon,
    } = opt.config;
    let t = opt.step as i32;
    let bias1 = 1.0 - beta1.powi(t);
    let bias2 = 1.0 - beta2.powi(t);

    for (((param, grad), m), v) in net
        .params_mut()
        .into_iter()
        .zip(grad_tensors)
        .zip(opt.first_moment.iter_mut())
        .zip(opt.second_moment.iter_mut())
    {
        for i in 0..param.len() {
            let g = grad[i];
            m[i] = beta1 * m[i] + (1.0 - beta1) * g;
            v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
            let m_hat = m[i] / bias1;
            let v_hat = v[i] / bias2;
            param[i] -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
        }
    }
    Ok(())
}
