use serde::{Deserialize, Serialize};

use super::params::{Gradients, ParamStore};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
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

/// One bias-corrected Adam update of every parameter in `store`.
///
/// Fails without touching the store if any parameter lacks a gradient or a
/// gradient has the wrong shape.
pub fn adam_step(store: &mut ParamStore, grads: &Gradients, cfg: &AdamConfig) -> Result<()> {
    for (id, p) in store.iter() {
        match grads.get(id) {
            None => return Err(Error::Data(format!("missing gradient for parameter {:?}", p.name))),
            Some(g) if g.shape() != p.value.shape() => {
                return Err(Error::shape("adam_step", &[p.value.shape(), g.shape()]));
            }
            Some(_) => {}
        }
    }
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let g = grads.get(id).expect("checked above");
        let p = store.param_mut(id);
        p.step += 1;
        let t = p.step as i32;
        let c1 = 1.0 - cfg.beta1.powi(t);
        let c2 = 1.0 - cfg.beta2.powi(t);
        let m = p.first_moment.data_mut();
        for (mi, gi) in m.iter_mut().zip(g.data()) {
            *mi = cfg.beta1 * *mi + (1.0 - cfg.beta1) * gi;
        }
        let v = p.second_moment.data_mut();
        for (vi, gi) in v.iter_mut().zip(g.data()) {
            *vi = cfg.beta2 * *vi + (1.0 - cfg.beta2) * gi * gi;
        }
        let (value, m, v) = (&mut p.value, &p.first_moment, &p.second_moment);
        for ((x, mi), vi) in value.data_mut().iter_mut().zip(m.data()).zip(v.data()) {
            let m_hat = mi / c1;
            let v_hat = vi / c2;
            *x -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;

    fn store() -> ParamStore {
        let mut s = ParamStore::new();
        s.insert("a", Tensor::vector(vec![1.0, -2.0])).unwrap();
        s.insert("b", Tensor::vector(vec![0.5])).unwrap();
        s
    }

    #[test]
    fn zero_gradient_leaves_parameter_unchanged() {
        let mut s = store();
        let before = s.clone();
        let mut g = Gradients::zeros(&s);
        adam_step(&mut s, &g, &AdamConfig::default()).unwrap();
        for id in s.ids() {
            assert_eq!(s.value(id), before.value(id));
            assert_eq!(s.param(id).step, 1);
        }
        // moments decay after a nonzero step followed by a zero one
        let a = s.id("a").unwrap();
        g.set(a, Tensor::vector(vec![1.0, 1.0]));
        adam_step(&mut s, &g, &AdamConfig::default()).unwrap();
        let m1 = s.param(a).first_moment.data()[0];
        let zero = Gradients::zeros(&s);
        adam_step(&mut s, &zero, &AdamConfig::default()).unwrap();
        assert!((s.param(a).first_moment.data()[0] - 0.9 * m1).abs() < 1e-15);
    }

    #[test]
    fn first_step_moves_against_gradient_by_lr() {
        let mut s = store();
        let a = s.id("a").unwrap();
        let mut g = Gradients::zeros(&s);
        g.set(a, Tensor::vector(vec![0.3, -4.0]));
        let cfg = AdamConfig { lr: 0.01, ..Default::default() };
        adam_step(&mut s, &g, &cfg).unwrap();
        // m̂ = g, v̂ = g², so the step is lr·g/(|g|+ε)
        let v = s.value(a).data();
        assert!((v[0] - (1.0 - 0.01 * 0.3 / (0.3 + 1e-8))).abs() < 1e-15);
        assert!((v[1] - (-2.0 + 0.01 * 4.0 / (4.0 + 1e-8))).abs() < 1e-15);
    }

    #[test]
    fn only_parameter_with_gradient_moves() {
        let mut s = store();
        let (a, b) = (s.id("a").unwrap(), s.id("b").unwrap());
        let mut g = Gradients::zeros(&s);
        g.set(b, Tensor::vector(vec![2.0]));
        adam_step(&mut s, &g, &AdamConfig::default()).unwrap();
        assert_eq!(s.value(a).data(), &[1.0, -2.0]);
        assert!(s.value(b).data()[0] < 0.5);
    }

    #[test]
    fn missing_gradient_is_an_error() {
        let mut s = store();
        let mut g = Gradients::zeros(&s);
        g.remove(s.id("b").unwrap());
        let err = adam_step(&mut s, &g, &AdamConfig::default()).unwrap_err();
        assert!(err.to_string().contains("\"b\""));
        assert_eq!(s.param(s.id("a").unwrap()).step, 0);
    }
}
