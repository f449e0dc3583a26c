//! Adam / AdamW on flat parameter slices.

use super::{DecoderError, DecoderGrads, DecoderParams};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    pub weight_decay: f32,
    /// true: decoupled decay (AdamW); false: L2 term folded into the gradient.
    pub decoupled: bool,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
            decoupled: true,
        }
    }
}

/// One bias-corrected Adam update on a flat slice. `step` is 1-based.
pub fn adam_update_slice(
    params: &mut [f32],
    grads: &[f32],
    m: &mut [f32],
    v: &mut [f32],
    step: u64,
    cfg: &AdamConfig,
) {
    debug_assert_eq!(params.len(), grads.len());
    debug_assert_eq!(params.len(), m.len());
    debug_assert_eq!(params.len(), v.len());
    let bc1 = 1.0 - (cfg.beta1 as f64).powi(step as i32);
    let bc2 = 1.0 - (cfg.beta2 as f64).powi(step as i32);
    for i in 0..params.len() {
        let mut g = grads[i];
        if !cfg.decoupled && cfg.weight_decay != 0.0 {
            g += cfg.weight_decay * params[i];
        }
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = m[i] as f64 / bc1;
        let v_hat = v[i] as f64 / bc2;
        if cfg.decoupled && cfg.weight_decay != 0.0 {
            params[i] -= cfg.lr * cfg.weight_decay * params[i];
        }
        params[i] -= (cfg.lr as f64 * m_hat / (v_hat.sqrt() + cfg.eps as f64)) as f32;
    }
}

/// Moments and step counter for the decoder parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub cfg: AdamConfig,
    pub step: u64,
    pub m: DecoderGrads,
    pub v: DecoderGrads,
}

impl OptimizerState {
    pub fn new(params: &DecoderParams, cfg: AdamConfig) -> Self {
        OptimizerState {
            cfg,
            step: 0,
            m: DecoderGrads::zeros_like(params),
            v: DecoderGrads::zeros_like(params),
        }
    }
}

/// Decoupled-weight-decay Adam step over all decoder tensors.
pub fn adamw_step(
    params: &mut DecoderParams,
    grads: &DecoderGrads,
    state: &mut OptimizerState,
) -> Result<(), DecoderError> {
    let shapes_ok = params
        .tensors()
        .into_iter()
        .zip(grads.tensors())
        .all(|(p, g)| p.len() == g.len());
    if !shapes_ok {
        return Err(DecoderError::ShapeMismatch(
            "adamw_step: grads do not match params".into(),
        ));
    }
    state.step += 1;
    let step = state.step;
    let cfg = state.cfg;
    let grad_tensors = grads.tensors();
    let m_tensors = state.m.tensors_mut();
    let mut v_iter = state.v.tensors_mut().into_iter();
    for ((p, g), m) in params
        .tensors_mut()
        .into_iter()
        .zip(grad_tensors)
        .zip(m_tensors)
    {
        let v = v_iter.next().unwrap();
        adam_update_slice(p, g, m, v, step, &cfg);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decoder::{init_params, DecoderConfig};

    fn tiny_params() -> DecoderParams {
        init_params(
            &DecoderConfig {
                enc_dim: 2,
                hidden: 3,
                feature_dim: 2,
            },
            1,
        )
    }

    #[test]
    fn zero_grads_leave_params_unchanged() {
        let mut params = tiny_params();
        let before = params.clone();
        let grads = DecoderGrads::zeros_like(&params);
        let mut state = OptimizerState::new(&params, AdamConfig::default());
        adamw_step(&mut params, &grads, &mut state).unwrap();
        assert_eq!(params, before);
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        // bias correction makes m̂/√v̂ = sign(g) on the first step
        let mut p = vec![0.3f32];
        let mut m = vec![0.0f32];
        let mut v = vec![0.0f32];
        let cfg = AdamConfig {
            lr: 0.01,
            ..AdamConfig::default()
        };
        adam_update_slice(&mut p, &[2.5], &mut m, &mut v, 1, &cfg);
        assert!((p[0] - (0.3 - 0.01)).abs() < 1e-5, "{}", p[0]);
        let mut p = vec![0.3f32];
        adam_update_slice(&mut p, &[-0.7], &mut vec![0.0], &mut vec![0.0], 1, &cfg);
        assert!((p[0] - (0.3 + 0.01)).abs() < 1e-5);
    }

    #[test]
    fn converges_on_quadratic() {
        // 100 steps on f(x) = x² from x = 1 with lr 0.1
        let mut x = vec![1.0f32];
        let mut m = vec![0.0f32];
        let mut v = vec![0.0f32];
        let cfg = AdamConfig {
            lr: 0.1,
            ..AdamConfig::default()
        };
        for step in 1..=100 {
            let g = vec![2.0 * x[0]];
            adam_update_slice(&mut x, &g, &mut m, &mut v, step, &cfg);
        }
        assert!(x[0].abs() < 0.1, "x = {}", x[0]);
    }

    #[test]
    fn coupled_weight_decay_shrinks_params() {
        let mut p = vec![1.0f32];
        let cfg = AdamConfig {
            lr: 0.01,
            weight_decay: 0.1,
            decoupled: false,
            ..AdamConfig::default()
        };
        // zero task gradient; wd folds into the gradient so the step is -lr·sign(wd·p)
        adam_update_slice(&mut p, &[0.0], &mut vec![0.0], &mut vec![0.0], 1, &cfg);
        assert!(p[0] < 1.0);
    }

    #[test]
    fn rejects_mismatched_grads() {
        let mut params = tiny_params();
        let other = init_params(
            &DecoderConfig {
                enc_dim: 4,
                hidden: 3,
                feature_dim: 2,
            },
            1,
        );
        let grads = DecoderGrads::zeros_like(&other);
        let mut state = OptimizerState::new(&params, AdamConfig::default());
        assert!(adamw_step(&mut params, &grads, &mut state).is_err());
    }
}
