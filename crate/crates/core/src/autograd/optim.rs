use serde::{Deserialize, Serialize};

use super::matrix::Matrix;
use super::params::{Grads, ParamId, ParamStore};

/// Adam with optional restriction to a subset of parameters.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Matrix>,
    v: Vec<Matrix>,
    trainable: Option<Vec<ParamId>>,
}

impl Adam {
    pub fn new(store: &ParamStore, lr: f64) -> Self {
        let zeros = store
            .ids()
            .map(|id| {
                let (r, c) = store.value(id).shape();
                Matrix::zeros(r, c)
            })
            .collect::<Vec<_>>();
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: zeros.clone(),
            v: zeros,
            trainable: None,
        }
    }

    /// Only the listed parameters are updated; the rest stay frozen.
    pub fn restricted_to(mut self, ids: Vec<ParamId>) -> Self {
        self.trainable = Some(ids);
        self
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &Grads) {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let ids: Vec<ParamId> = match &self.trainable {
            Some(ids) => ids.clone(),
            None => store.ids().collect(),
        };
        for id in ids {
            let g = grads.get(id);
            let m = &mut self.m[id.0];
            let v = &mut self.v[id.0];
            let p = store.value_mut(id);
            for (((pi, gi), mi), vi) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
                let mh = *mi / bc1;
                let vh = *vi / bc2;
                *pi -= self.lr * mh / (vh.sqrt() + self.eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::Graph;

    #[test]
    fn adam_minimizes_a_quadratic() {
        let mut store = ParamStore::new();
        let x = store.add("x", Matrix::row_vector(vec![3.0, -2.0]));
        let mut opt = Adam::new(&store, 0.1);
        for _ in 0..500 {
            let mut g = Graph::new();
            let xv = g.param(&store, x);
            let sq = g.mul(xv, xv);
            let l = g.sum(sq);
            let grads = g.backward(l, &store);
            opt.step(&mut store, &grads);
        }
        assert!(store.value(x).data().iter().all(|v| v.abs() < 1e-2));
    }

    #[test]
    fn restricted_optimizer_leaves_frozen_params() {
        let mut store = ParamStore::new();
        let a = store.add("a", Matrix::scalar(1.0));
        let b = store.add("b", Matrix::scalar(1.0));
        let mut opt = Adam::new(&store, 0.1).restricted_to(vec![a]);
        let mut g = Graph::new();
        let av = g.param(&store, a);
        let bv = g.param(&store, b);
        let s = g.add(av, bv);
        let l = g.sum(s);
        let grads = g.backward(l, &store);
        opt.step(&mut store, &grads);
        assert!(store.value(a).to_scalar() < 1.0);
        assert_eq!(store.value(b).to_scalar(), 1.0);
    }
}
