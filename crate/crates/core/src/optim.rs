//! AdamW with decoupled weight decay.

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-2,
        }
    }
}

impl AdamWConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr >= 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0
            && self.weight_decay >= 0.0;
        if !ok {
            return Err(Error::Config(format!(
                "invalid AdamW hyperparameters {self:?}"
            )));
        }
        Ok(())
    }
}

/// First/second moments per parameter, plus the step counter.
#[derive(Clone, Debug)]
pub struct OptimizerState<T> {
    pub config: AdamWConfig,
    pub step: u64,
    first: Vec<Tensor<T>>,
    second: Vec<Tensor<T>>,
}

impl<T: Scalar> OptimizerState<T> {
    pub fn new(config: AdamWConfig, params: &ParamStore<T>) -> Self {
        let zeros = |t: &Tensor<T>| Tensor::zeros(t.shape());
        OptimizerState {
            config,
            step: 0,
            first: params.tensors().iter().map(zeros).collect(),
            second: params.tensors().iter().map(zeros).collect(),
        }
    }

    pub fn first_moments(&self) -> &[Tensor<T>] {
        &self.first
    }

    pub fn second_moments(&self) -> &[Tensor<T>] {
        &self.second
    }
}

/// One update `p <- p - lr * (m_hat / (sqrt(v_hat) + eps) + wd * p)`.
pub fn adamw_step<T: Scalar>(
    params: &mut ParamStore<T>,
    grads: &[Tensor<T>],
    state: &mut OptimizerState<T>,
) -> Result<()> {
    state.config.validate()?;
    if grads.len() != params.len() || state.first.len() != params.len() {
        return Err(Error::shape(
            "adamw_step",
            format!(
                "{} params, {} grads, {} moments",
                params.len(),
                grads.len(),
                state.first.len()
            ),
        ));
    }
    for (i, (p, g)) in params.tensors().iter().zip(grads).enumerate() {
        if p.shape() != g.shape() || p.shape() != state.first[i].shape() {
            return Err(Error::shape(
                "adamw_step",
                format!("param {i}: {:?} vs grad {:?}", p.shape(), g.shape()),
            ));
        }
    }
    state.step += 1;
    let c = state.config;
    let (b1, b2) = (T::lit(c.beta1), T::lit(c.beta2));
    let bc1 = T::one() - T::lit(c.beta1.powi(state.step as i32));
    let bc2 = T::one() - T::lit(c.beta2.powi(state.step as i32));
    let (lr, eps, wd) = (T::lit(c.lr), T::lit(c.eps), T::lit(c.weight_decay));
    for (i, p) in params.tensors_mut().iter_mut().enumerate() {
        let m = state.first[i].data_mut();
        let v = state.second[i].data_mut();
        for (j, (pv, &gv)) in p.data_mut().iter_mut().zip(grads[i].data()).enumerate() {
            m[j] = b1 * m[j] + (T::one() - b1) * gv;
            v[j] = b2 * v[j] + (T::one() - b2) * gv * gv;
            let m_hat = m[j] / bc1;
            let v_hat = v[j] / bc2;
            *pv = *pv - lr * (m_hat / (v_hat.sqrt() + eps) + wd * *pv);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store(v: f64) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        s.insert("p", Tensor::from_vec(vec![v, -2.0 * v]));
        s
    }

    #[test]
    fn zero_grad_zero_decay_is_fixed_point() {
        let mut p = store(1.5);
        let cfg = AdamWConfig {
            weight_decay: 0.0,
            ..Default::default()
        };
        let mut st = OptimizerState::new(cfg, &p);
        adamw_step(&mut p, &[Tensor::zeros(&[2])], &mut st).unwrap();
        assert_eq!(p, store(1.5));
        assert_eq!(st.step, 1);
    }

    #[test]
    fn zero_grad_decay_shrinks() {
        let mut p = store(1.0);
        let cfg = AdamWConfig {
            lr: 0.1,
            weight_decay: 0.01,
            ..Default::default()
        };
        let mut st = OptimizerState::new(cfg, &p);
        adamw_step(&mut p, &[Tensor::zeros(&[2])], &mut st).unwrap();
        let d = p.get("p").unwrap().data();
        assert!((d[0] - 0.999).abs() < 1e-15);
        assert!((d[1] + 1.998).abs() < 1e-15);
    }

    #[test]
    fn single_step_hand_trace() {
        // p=1, g=1, defaults: m=0.1, v=0.001, m_hat=1, v_hat=1,
        // p <- 1 - 1e-3 * (1/(1+1e-8) + 0.01 * 1).
        let mut p = ParamStore::new();
        p.insert("p", Tensor::scalar(1.0f64));
        let mut st = OptimizerState::new(AdamWConfig::default(), &p);
        adamw_step(&mut p, &[Tensor::scalar(1.0)], &mut st).unwrap();
        let expected = 1.0 - 1e-3 * (1.0 / (1.0 + 1e-8) + 0.01);
        assert!((p.get("p").unwrap().item() - expected).abs() < 1e-15);
        assert!((st.first_moments()[0].item() - 0.1).abs() < 1e-15);
        assert!((st.second_moments()[0].item() - 0.001).abs() < 1e-15);
    }

    #[test]
    fn shape_mismatch_errors() {
        let mut p = store(1.0);
        let mut st = OptimizerState::new(AdamWConfig::default(), &p);
        assert!(adamw_step(&mut p, &[Tensor::zeros(&[3])], &mut st).is_err());
        assert!(adamw_step(&mut p, &[], &mut st).is_err());
        assert_eq!(st.step, 0);
    }
}
