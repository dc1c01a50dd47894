use super::Real;
use crate::error::{Error, Result};

/// Adam with linear warmup.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub warmup: u64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { learning_rate: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8, warmup: 0 }
    }
}

impl AdamConfig {
    /// Learning-rate multiplier `min(1, step / warmup)`; `step` counts from 1.
    pub fn warmup_factor(&self, step: u64) -> f64 {
        if self.warmup == 0 {
            1.0
        } else {
            (step as f64 / self.warmup as f64).min(1.0)
        }
    }
}

/// Parameters with their EMA copy and Adam moments.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<F> {
    pub params: Vec<F>,
    pub ema: Vec<F>,
    pub m: Vec<F>,
    pub v: Vec<F>,
    /// Completed optimizer steps.
    pub step: u64,
    pub ema_ready: bool,
}

impl<F: Real> ParamStore<F> {
    pub fn new(params: Vec<F>) -> Self {
        let n = params.len();
        Self {
            ema: params.clone(),
            params,
            m: vec![F::default(); n],
            v: vec![F::default(); n],
            step: 0,
            ema_ready: false,
        }
    }
}

/// Scales `grads` in place so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm<F: Real>(grads: &mut [F], max_norm: f64) -> f64 {
    let norm = grads.iter().map(|g| g.to_f64().powi(2)).sum::<f64>().sqrt();
    if norm > max_norm && norm.is_finite() {
        let s = F::from_f64(max_norm / norm);
        for g in grads.iter_mut() {
            *g *= s;
        }
    }
    norm
}

/// One bias-corrected Adam update.
pub fn adam_step<F: Real>(store: &mut ParamStore<F>, grads: &[F], cfg: &AdamConfig) -> Result<()> {
    if grads.len() != store.params.len() {
        return Err(Error::Shape(format!("{} gradients for {} parameters", grads.len(), store.params.len())));
    }
    if grads.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFiniteParams);
    }
    store.step += 1;
    let t = store.step as i32;
    let lr = cfg.learning_rate * cfg.warmup_factor(store.step);
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    let (b1, b2) = (F::from_f64(cfg.beta1), F::from_f64(cfg.beta2));
    let (nb1, nb2) = (F::from_f64(1.0 - cfg.beta1), F::from_f64(1.0 - cfg.beta2));
    for (i, &g) in grads.iter().enumerate() {
        store.m[i] = b1 * store.m[i] + nb1 * g;
        store.v[i] = b2 * store.v[i] + nb2 * g * g;
        let m_hat = store.m[i].to_f64() / c1;
        let v_hat = store.v[i].to_f64() / c2;
        store.params[i] -= F::from_f64(lr * m_hat / (v_hat.sqrt() + cfg.eps));
    }
    if store.params.iter().any(|p| !p.is_finite()) {
        return Err(Error::NonFiniteParams);
    }
    Ok(())
}

/// `ema ← μ·ema + (1−μ)·params`; the first call copies the parameters.
pub fn ema_update<F: Real>(store: &mut ParamStore<F>, momentum: f64) {
    if !store.ema_ready {
        store.ema.copy_from_slice(&store.params);
        store.ema_ready = true;
        return;
    }
    let (mu, one_minus) = (F::from_f64(momentum), F::from_f64(1.0 - momentum));
    for (e, &p) in store.ema.iter_mut().zip(&store.params) {
        *e = mu * *e + one_minus * p;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_adam_step_moves_by_learning_rate() {
        let mut s = ParamStore::new(vec![1.0f64, -2.0]);
        adam_step(&mut s, &[0.5, -3.0], &AdamConfig::default()).unwrap();
        assert!((s.params[0] - (1.0 - 1e-3)).abs() < 1e-9);
        assert!((s.params[1] - (-2.0 + 1e-3)).abs() < 1e-9);
        assert_eq!(s.step, 1);
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut s = ParamStore::new(vec![0.25f32]);
        adam_step(&mut s, &[0.0], &AdamConfig::default()).unwrap();
        assert_eq!(s.params[0], 0.25);
    }

    #[test]
    fn warmup_scales_early_steps() {
        let cfg = AdamConfig { warmup: 4, ..Default::default() };
        assert_eq!(cfg.warmup_factor(0), 0.0);
        assert_eq!(cfg.warmup_factor(1), 0.25);
        assert_eq!(cfg.warmup_factor(9), 1.0);
        let mut s = ParamStore::new(vec![0.0f64]);
        adam_step(&mut s, &[1.0], &cfg).unwrap();
        assert!((s.params[0] + 0.25e-3).abs() < 1e-10);
    }

    #[test]
    fn ema_initializes_then_averages() {
        let mut s = ParamStore::new(vec![1.0f64]);
        s.params[0] = 3.0;
        ema_update(&mut s, 0.9);
        assert_eq!(s.ema[0], 3.0);
        s.params[0] = 13.0;
        ema_update(&mut s, 0.9);
        assert!((s.ema[0] - 4.0).abs() < 1e-12);
    }

    #[test]
    fn ema_half_momentum_from_zero_shadow() {
        let mut s = ParamStore::new(vec![2.0f64]);
        s.ema[0] = 0.0;
        s.ema_ready = true;
        ema_update(&mut s, 0.5);
        assert_eq!(s.ema[0], 1.0);
    }

    #[test]
    fn clipping_bounds_the_norm() {
        let mut g = vec![3.0f64, 4.0];
        assert_eq!(clip_grad_norm(&mut g, 1.0), 5.0);
        assert!((g[0] - 0.6).abs() < 1e-12 && (g[1] - 0.8).abs() < 1e-12);
        let mut small = vec![0.1f64];
        clip_grad_norm(&mut small, 1.0);
        assert_eq!(small, vec![0.1]);
    }

    #[test]
    fn non_finite_gradient_is_rejected() {
        let mut s = ParamStore::new(vec![0.0f64]);
        assert!(matches!(adam_step(&mut s, &[f64::NAN], &AdamConfig::default()), Err(Error::NonFiniteParams)));
    }
}
