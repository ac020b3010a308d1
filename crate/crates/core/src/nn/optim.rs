use serde::{Deserialize, Serialize};

use super::params::{Grads, ParamStore};
use super::Tensor;
use crate::error::{Error, Result};
use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.99,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// AdamW with bias correction and decoupled weight decay.
#[derive(Debug, Clone)]
pub struct AdamW<T> {
    pub config: AdamWConfig,
    step: u64,
    moments: Vec<Option<(Tensor<T>, Tensor<T>)>>,
}

impl<T: Scalar> AdamW<T> {
    pub fn new(config: AdamWConfig) -> Self {
        Self {
            config,
            step: 0,
            moments: Vec::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One update. Frozen parameters and parameters without a gradient are
    /// left untouched; any non-finite gradient aborts before anything changes.
    pub fn step(&mut self, store: &mut ParamStore<T>, grads: &Grads<T>, lr: f64) -> Result<()> {
        if !grads.is_finite() {
            return Err(Error::Diverged(format!("non-finite gradient at step {}", self.step + 1)));
        }
        self.step += 1;
        if self.moments.len() < store.len() {
            self.moments.resize(store.len(), None);
        }
        let c = self.config;
        let (b1, b2) = (T::lit(c.beta1), T::lit(c.beta2));
        let bc1 = T::one() - T::lit(c.beta1.powi(self.step as i32));
        let bc2 = T::one() - T::lit(c.beta2.powi(self.step as i32));
        let lr_t = T::lit(lr);
        let decay = T::one() - T::lit(lr * c.weight_decay);
        let eps = T::lit(c.eps);
        let ids: Vec<_> = store.iter().map(|(id, _)| id).collect();
        for id in ids {
            let Some(g) = grads.get(id) else { continue };
            let p = store.get_mut(id);
            if !p.trainable {
                continue;
            }
            let (m, v) = self.moments[id.0].get_or_insert_with(|| {
                (Tensor::zeros(g.shape().to_vec()), Tensor::zeros(g.shape().to_vec()))
            });
            let w = p.value.data_mut();
            for i in 0..w.len() {
                let gi = g.data()[i];
                let mi = &mut m.data_mut()[i];
                *mi = b1 * *mi + (T::one() - b1) * gi;
                let mh = *mi / bc1;
                let vi = &mut v.data_mut()[i];
                *vi = b2 * *vi + (T::one() - b2) * gi * gi;
                let vh = *vi / bc2;
                w[i] = w[i] * decay - lr_t * mh / (vh.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Graph;

    fn bowl() -> (ParamStore<f64>, crate::nn::ParamId) {
        let mut s = ParamStore::new();
        let id = s.add("x", Tensor::matrix(1, 3, vec![1.5, -2.0, 0.7]).unwrap(), true).unwrap();
        (s, id)
    }

    fn loss_and_grads(s: &ParamStore<f64>, id: crate::nn::ParamId) -> (f64, Grads<f64>) {
        let mut g = Graph::new(s);
        let x = g.param(id);
        let q = g.square(x);
        let l = g.sum(q);
        (g.value(l).data()[0], g.backward(l).unwrap())
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let (mut s, id) = bowl();
        let before = s.clone();
        let mut grads = Grads::empty(1);
        grads.accumulate(id, &[1, 3], &[0.0; 3]);
        AdamW::new(AdamWConfig::default()).step(&mut s, &grads, 1e-2).unwrap();
        assert_eq!(s, before);
    }

    #[test]
    fn frozen_parameters_are_untouched() {
        let (mut s, id) = bowl();
        s.get_mut(id).trainable = false;
        let before = s.clone();
        let (_, grads) = loss_and_grads(&s, id);
        AdamW::new(AdamWConfig::default()).step(&mut s, &grads, 1e-2).unwrap();
        assert_eq!(s, before);
    }

    #[test]
    fn non_finite_gradient_fails_fast() {
        let (mut s, id) = bowl();
        let mut grads = Grads::empty(1);
        grads.accumulate(id, &[1, 3], &[0.0, f64::NAN, 0.0]);
        let before = s.clone();
        assert!(AdamW::new(AdamWConfig::default()).step(&mut s, &grads, 1e-2).is_err());
        assert_eq!(s, before);
    }

    #[test]
    fn quadratic_bowl_converges() {
        let (mut s, id) = bowl();
        let mut opt = AdamW::new(AdamWConfig::default());
        let sched = crate::nn::WarmupCosine::new(0, 200, 0.1, 1e-4).unwrap();
        for step in 0..200 {
            let (_, grads) = loss_and_grads(&s, id);
            opt.step(&mut s, &grads, sched.lr(step)).unwrap();
        }
        let (loss, _) = loss_and_grads(&s, id);
        assert!(loss < 1e-6, "loss {loss}");
    }
}
