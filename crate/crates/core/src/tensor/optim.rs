use std::collections::HashMap;

use super::{ParamId, ParamStore};
use crate::{Error, Result, Scalar};

fn check_grads<S: Scalar>(store: &ParamStore<S>, ids: &[ParamId]) -> Result<()> {
    match ids.iter().find(|&&id| store.get(id).grad().is_none()) {
        Some(&id) => Err(Error::MissingGradient(store.name(id).to_string())),
        None => Ok(()),
    }
}

/// Plain gradient descent on `ids`; gradients are cleared afterwards.
pub fn sgd_step<S: Scalar>(store: &mut ParamStore<S>, ids: &[ParamId], lr: S) -> Result<()> {
    check_grads(store, ids)?;
    for &id in ids {
        let t = store.get_mut(id);
        let g = t.take_grad().expect("checked above");
        t.data_mut().iter_mut().zip(g).for_each(|(w, g)| *w -= lr * g);
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq)]
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

struct Moments<S> {
    m: Vec<S>,
    v: Vec<S>,
    t: i32,
}

/// Adam with per-parameter bias-corrected moment estimates.
pub struct Adam<S> {
    pub config: AdamConfig,
    state: HashMap<ParamId, Moments<S>>,
}

impl<S: Scalar> Adam<S> {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            state: HashMap::new(),
        }
    }

    /// One update of every parameter in `ids`; gradients are cleared afterwards.
    pub fn step(&mut self, store: &mut ParamStore<S>, ids: &[ParamId]) -> Result<()> {
        check_grads(store, ids)?;
        let (b1, b2) = (S::of(self.config.beta1), S::of(self.config.beta2));
        let (lr, eps) = (S::of(self.config.lr), S::of(self.config.eps));
        for &id in ids {
            let t = store.get_mut(id);
            let g = t.take_grad().expect("checked above");
            let st = self.state.entry(id).or_insert_with(|| Moments {
                m: vec![S::zero(); g.len()],
                v: vec![S::zero(); g.len()],
                t: 0,
            });
            st.t += 1;
            let c1 = S::one() - b1.powi(st.t);
            let c2 = S::one() - b2.powi(st.t);
            for (((w, g), m), v) in t.data_mut().iter_mut().zip(g).zip(&mut st.m).zip(&mut st.v) {
                *m = b1 * *m + (S::one() - b1) * g;
                *v = b2 * *v + (S::one() - b2) * g * g;
                let mhat = *m / c1;
                let vhat = *v / c2;
                *w -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Single Adam update with explicit hyperparameters.
pub fn adam_step<S: Scalar>(
    opt: &mut Adam<S>,
    store: &mut ParamStore<S>,
    ids: &[ParamId],
) -> Result<()> {
    opt.step(store, ids)
}
