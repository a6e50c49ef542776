use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::nn::ParamStore;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Step-decay learning rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub base: f64,
    /// Epochs at which the rate is multiplied by `factor`.
    pub milestones: Vec<usize>,
    pub factor: f64,
}

impl LrSchedule {
    pub fn constant(base: f64) -> Self {
        Self {
            base,
            milestones: Vec::new(),
            factor: 1.0,
        }
    }

    pub fn at(&self, epoch: usize) -> f64 {
        let k = self.milestones.iter().filter(|&&m| epoch >= m).count();
        self.base * self.factor.powi(k as i32)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    m: BTreeMap<String, Tensor>,
    v: BTreeMap<String, Tensor>,
}

impl Default for Adam {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }
}

const M_PREFIX: &str = "optim.m.";
const V_PREFIX: &str = "optim.v.";
const T_NAME: &str = "optim.t";

impl Adam {
    pub fn step(&mut self, store: &mut ParamStore, grads: &BTreeMap<String, Tensor>, lr: f64) -> Result<()> {
        self.t += 1;
        let b1t = 1.0 - self.beta1.powi(self.t as i32);
        let b2t = 1.0 - self.beta2.powi(self.t as i32);
        for (name, g) in grads {
            let p = store
                .get_mut(name)
                .ok_or_else(|| Error::Argument(format!("gradient for unknown parameter `{name}`")))?;
            if p.shape() != g.shape() {
                return Err(Error::Dimension {
                    op: "adam",
                    lhs: p.shape().to_vec(),
                    rhs: g.shape().to_vec(),
                });
            }
            let m = self.m.entry(name.clone()).or_insert_with(|| Tensor::zeros(g.shape()));
            let v = self.v.entry(name.clone()).or_insert_with(|| Tensor::zeros(g.shape()));
            for (((x, &gi), mi), vi) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
                *x -= lr * (*mi / b1t) / ((*vi / b2t).sqrt() + self.eps);
            }
        }
        Ok(())
    }

    pub fn to_entries(&self) -> BTreeMap<String, Tensor> {
        let mut out = BTreeMap::new();
        for (k, t) in &self.m {
            out.insert(format!("{M_PREFIX}{k}"), t.clone());
        }
        for (k, t) in &self.v {
            out.insert(format!("{V_PREFIX}{k}"), t.clone());
        }
        out.insert(T_NAME.to_string(), Tensor::scalar(self.t as f64));
        out
    }

    pub fn from_entries(entries: &BTreeMap<String, Tensor>) -> Self {
        let mut a = Self::default();
        for (k, t) in entries {
            if let Some(n) = k.strip_prefix(M_PREFIX) {
                a.m.insert(n.to_string(), t.clone());
            } else if let Some(n) = k.strip_prefix(V_PREFIX) {
                a.v.insert(n.to_string(), t.clone());
            } else if k == T_NAME {
                a.t = t.data()[0] as u64;
            }
        }
        a
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::nn::{Init, ParamSpec};

    #[test]
    fn schedule_decays_at_milestones() {
        let s = LrSchedule {
            base: 1e-4,
            milestones: vec![25, 75],
            factor: 0.1,
        };
        assert_eq!(s.at(0), 1e-4);
        assert_eq!(s.at(24), 1e-4);
        assert!((s.at(25) - 1e-5).abs() < 1e-20);
        assert!((s.at(100) - 1e-6).abs() < 1e-20);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let specs = vec![ParamSpec {
            name: "w".into(),
            shape: vec![2],
            init: Init::Zeros,
            buffer: false,
        }];
        let mut store = ParamStore::init(&specs, 0);
        let mut adam = Adam::default();
        let mut g = BTreeMap::new();
        g.insert("w".to_string(), Tensor::new([2], vec![3.0, -0.5]).unwrap());
        adam.step(&mut store, &g, 0.1).unwrap();
        let w = store.get("w").unwrap().data();
        assert!((w[0] + 0.1).abs() < 1e-6 && (w[1] - 0.1).abs() < 1e-6);
        let restored = Adam::from_entries(&adam.to_entries());
        assert_eq!(restored, adam);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let specs = vec![ParamSpec {
            name: "x".into(),
            shape: vec![1],
            init: Init::Ones,
            buffer: false,
        }];
        let mut store = ParamStore::init(&specs, 0);
        let mut adam = Adam::default();
        for _ in 0..500 {
            let x = store.get("x").unwrap().data()[0];
            let mut g = BTreeMap::new();
            g.insert("x".to_string(), Tensor::scalar(2.0 * (x - 3.0)));
            adam.step(&mut store, &g, 0.05).unwrap();
        }
        assert!((store.get("x").unwrap().data()[0] - 3.0).abs() < 1e-2);
    }
}
