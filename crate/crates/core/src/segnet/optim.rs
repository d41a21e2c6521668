use super::model::Net;
use super::real::Real;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// L2 coefficient added to the gradient as `weight_decay * theta`.
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-4,
        }
    }
}

/// Adam moments over the trainable partition.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
    pub cfg: AdamConfig,
}

impl OptimizerState {
    pub fn new(len: usize, cfg: AdamConfig) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
            cfg,
        }
    }

    /// State sized for a model's trainable partition.
    pub fn for_model<T: Real>(cfg: AdamConfig) -> Self {
        Self::new(Net::<T>::trainable_range().len(), cfg)
    }

    /// One bias-corrected Adam update of `params` in place. Non-finite
    /// gradients reject the whole step and leave everything untouched.
    pub fn update<T: Real>(&mut self, params: &mut [T], grads: &[T]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::invalid(format!(
                "adam: {} params, {} grads, state for {}",
                params.len(),
                grads.len(),
                self.m.len()
            )));
        }
        let bad = grads.iter().filter(|g| !g.is_finite()).count();
        if bad > 0 {
            log::warn!("adam step rejected: {bad} non-finite gradient entries");
            return Err(Error::NonFiniteGradient { count: bad });
        }
        let c = self.cfg;
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        for i in 0..params.len() {
            let p = params[i].as_f64();
            let g = grads[i].as_f64() + c.weight_decay * p;
            self.m[i] = c.beta1 * self.m[i] + (1.0 - c.beta1) * g;
            self.v[i] = c.beta2 * self.v[i] + (1.0 - c.beta2) * g * g;
            let mh = self.m[i] / bc1;
            let vh = self.v[i] / bc2;
            params[i] = T::from_f64(p - c.lr * mh / (vh.sqrt() + c.eps));
        }
        Ok(())
    }
}

/// Adam step on the trainable partition of `model`. `grads` may cover either
/// the trainable partition or the whole parameter vector; frozen entries are
/// never read.
pub fn adam_step<T: Real>(model: &mut Net<T>, grads: &[T], state: &mut OptimizerState) -> Result<()> {
    let r = Net::<T>::trainable_range();
    let g = if grads.len() == Net::<T>::param_count() { &grads[r.clone()] } else { grads };
    state.update(&mut model.theta_mut()[r], g)
}

/// SGD with heavy-ball momentum over all parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Sgd {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub velocity: Vec<f64>,
}

impl Sgd {
    pub fn new(len: usize, lr: f64, momentum: f64, weight_decay: f64) -> Self {
        Self {
            lr,
            momentum,
            weight_decay,
            velocity: vec![0.0; len],
        }
    }

    pub fn update<T: Real>(&mut self, params: &mut [T], grads: &[T]) -> Result<()> {
        if params.len() != self.velocity.len() || grads.len() != params.len() {
            return Err(Error::invalid("sgd: length mismatch"));
        }
        let bad = grads.iter().filter(|g| !g.is_finite()).count();
        if bad > 0 {
            return Err(Error::NonFiniteGradient { count: bad });
        }
        for i in 0..params.len() {
            let p = params[i].as_f64();
            let g = grads[i].as_f64() + self.weight_decay * p;
            self.velocity[i] = self.momentum * self.velocity[i] + g;
            params[i] = T::from_f64(p - self.lr * self.velocity[i]);
        }
        Ok(())
    }
}

/// `theta_g <- lambda * theta_f + (1 - lambda) * theta_g`.
pub fn momentum_update<T: Real>(f: &[T], g: &mut [T], lambda: f64) -> Result<()> {
    if f.len() != g.len() {
        return Err(Error::invalid(format!("momentum update: layouts differ ({} vs {})", f.len(), g.len())));
    }
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::InvalidConfig(format!("lambda must be in [0, 1], got {lambda}")));
    }
    let l = T::from_f64(lambda);
    let k = T::from_f64(1.0 - lambda);
    for (gv, &fv) in g.iter_mut().zip(f) {
        *gv = l * fv + k * *gv;
    }
    Ok(())
}

pub fn momentum_update_model<T: Real>(f: &Net<T>, g: &mut Net<T>, lambda: f64) -> Result<()> {
    momentum_update(f.theta(), g.theta_mut(), lambda)
}
