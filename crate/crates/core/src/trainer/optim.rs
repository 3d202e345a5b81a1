use serde::{Deserialize, Serialize};

use crate::autodiff::ParamSet;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Adam with bias-corrected moment estimates.
#[derive(Clone, Debug)]
pub struct Adam {
    config: AdamConfig,
    m: ParamSet,
    v: ParamSet,
    t: i32,
}

impl Adam {
    pub fn new(config: AdamConfig, params: &ParamSet) -> Result<Self> {
        if !(config.lr > 0.0
            && (0.0..1.0).contains(&config.beta1)
            && (0.0..1.0).contains(&config.beta2)
            && config.eps > 0.0)
        {
            return Err(Error::InvalidConfig(format!("bad Adam settings {config:?}")));
        }
        let zeros: ParamSet = params.iter().map(|(k, t)| (k.to_string(), Tensor::zeros(t.shape()))).collect();
        Ok(Self { config, m: zeros.clone(), v: zeros, t: 0 })
    }

    /// Returns the updated parameters; the moments advance in place.
    pub fn step(&mut self, params: &ParamSet, grads: &ParamSet) -> Result<ParamSet> {
        params.check_congruent(grads)?;
        params.check_congruent(&self.m)?;
        self.t += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let c1 = 1.0 - beta1.powi(self.t);
        let c2 = 1.0 - beta2.powi(self.t);
        let mut next = ParamSet::new();
        let mut m_next = ParamSet::new();
        let mut v_next = ParamSet::new();
        for ((name, p), (_, g)) in params.iter().zip(grads.iter()) {
            let m = self.m.get(name).expect("congruent").zip_with(g, |m, g| beta1 * m + (1.0 - beta1) * g)?;
            let v = self.v.get(name).expect("congruent").zip_with(g, |v, g| beta2 * v + (1.0 - beta2) * g * g)?;
            let step = m.zip_with(&v, |m, v| lr * (m / c1) / ((v / c2).sqrt() + eps))?;
            next.insert(name, p.zip_with(&step, |p, s| p - s)?);
            m_next.insert(name, m);
            v_next.insert(name, v);
        }
        self.m = m_next;
        self.v = v_next;
        Ok(next)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr_against_the_gradient_sign() {
        let p: ParamSet = [("w".to_string(), Tensor::vector(vec![1.0, -2.0]).unwrap())].into_iter().collect();
        let g: ParamSet = [("w".to_string(), Tensor::vector(vec![0.5, -3.0]).unwrap())].into_iter().collect();
        let mut adam = Adam::new(AdamConfig { lr: 0.1, ..Default::default() }, &p).unwrap();
        let out = adam.step(&p, &g).unwrap();
        let w = out.get("w").unwrap().data();
        assert!((w[0] - 0.9).abs() < 1e-6 && (w[1] + 1.9).abs() < 1e-6, "{w:?}");
    }

    #[test]
    fn rejects_bad_settings() {
        assert!(Adam::new(AdamConfig { lr: 0.0, ..Default::default() }, &ParamSet::new()).is_err());
        assert!(Adam::new(AdamConfig { beta1: 1.0, ..Default::default() }, &ParamSet::new()).is_err());
    }
}
