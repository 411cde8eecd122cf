use serde::{Deserialize, Serialize};

use crate::proposal::{ProposalConfig, SamplerKind};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SearchConfig {
    pub e_vital: usize,
    pub e_nonvital: usize,
    /// Proposal fitting iterations.
    pub i_sp: usize,
    pub m: usize,
    pub alpha: f64,
    pub beta: f64,
    pub lr_weights: f64,
    pub lr_arch: f64,
    pub tau0: f64,
    pub tau_decay: f64,
    pub seed: u64,
    pub batch_size: usize,
    /// `gumbel_max` runs one candidate per layer; the relaxed samplers run
    /// the full soft mixture.
    pub sampler: SamplerKind,
    pub fit_tau: f64,
    pub fit_samples: usize,
    pub fit_lr: f64,
    /// Search vital layers first. When off, a single stage searches every
    /// layer for `e_vital + e_nonvital` epochs.
    pub vital_priori: bool,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            e_vital: 1,
            e_nonvital: 1,
            i_sp: 1000,
            m: 8,
            alpha: 5.0,
            beta: 1e-2,
            lr_weights: 0.1,
            lr_arch: 0.01,
            tau0: 5.0,
            tau_decay: 0.9999,
            seed: 0,
            batch_size: 32,
            sampler: SamplerKind::GumbelMax,
            fit_tau: 1.0,
            fit_samples: 16,
            fit_lr: 0.01,
            vital_priori: true,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if self.e_vital == 0 || self.e_nonvital == 0 {
            return bad("epoch counts must be positive");
        }
        if self.i_sp == 0 || self.m == 0 || self.fit_samples == 0 {
            return bad("i_sp, m and fit_samples must be positive");
        }
        if self.batch_size < 2 {
            return bad("batch_size must be at least 2");
        }
        for (name, v) in [
            ("lr_weights", self.lr_weights),
            ("lr_arch", self.lr_arch),
            ("tau0", self.tau0),
            ("fit_tau", self.fit_tau),
            ("fit_lr", self.fit_lr),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(&format!("{name} must be positive"));
            }
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite() && self.beta >= 0.0 && self.beta.is_finite()) {
            return bad("alpha and beta must be nonnegative");
        }
        if !(self.tau_decay > 0.0 && self.tau_decay <= 1.0) {
            return bad("tau_decay must lie in (0, 1]");
        }
        Ok(())
    }

    pub fn proposal_config(&self) -> ProposalConfig {
        ProposalConfig {
            m: self.m,
            iterations: self.i_sp,
            alpha: self.alpha,
            beta: self.beta,
            tau: self.fit_tau,
            sampler: SamplerKind::GumbelSoftmax,
            lr: self.fit_lr,
            init_std: 1.0,
            samples: self.fit_samples,
            seed: self.seed,
        }
    }

    /// Search epochs spent on the non-vital (or, without the priori, all) layers.
    pub fn stage2_epochs(&self) -> usize {
        if self.vital_priori {
            self.e_nonvital
        } else {
            self.e_vital + self.e_nonvital
        }
    }
}

/// `tau0 · decay^iteration`.
pub fn anneal_tau(tau0: f64, decay: f64, iteration: u64) -> f64 {
    match i32::try_from(iteration) {
        Ok(i) => tau0 * decay.powi(i),
        Err(_) => tau0 * decay.powf(iteration as f64),
    }
}
