use super::network::NetworkParams;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates plus the step counter.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub m: NetworkParams,
    pub v: NetworkParams,
    pub t: u64,
    beta1_pow: f64,
    beta2_pow: f64,
}

impl AdamState {
    pub fn new(shape_of: &NetworkParams) -> Self {
        let mut m = shape_of.clone();
        m.fill(0.0);
        let v = m.clone();
        Self {
            m,
            v,
            t: 0,
            beta1_pow: 1.0,
            beta2_pow: 1.0,
        }
    }
}

/// One bias-corrected Adam update of `params` in place.
pub fn adam_step(
    params: &mut NetworkParams,
    grads: &NetworkParams,
    state: &mut AdamState,
    cfg: &AdamConfig,
) {
    state.t += 1;
    // running powers instead of powi so the result does not depend on the platform's pow
    state.beta1_pow *= cfg.beta1;
    state.beta2_pow *= cfg.beta2;
    let bc1 = 1.0 - state.beta1_pow;
    let bc2 = 1.0 - state.beta2_pow;

    let grads = grads.buffers();
    let ms = state.m.buffers_mut();
    let vs = state.v.buffers_mut();
    for (((p, g), m), v) in params.buffers_mut().into_iter().zip(grads).zip(ms).zip(vs) {
        for i in 0..p.len() {
            let gi = g[i];
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi;
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi;
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            p[i] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
}
