//! First-order optimizers over a [`ParamStore`].

use std::collections::BTreeMap;

use ndarray::ArrayD;
use serde::{Deserialize, Serialize};

use crate::attention::params::ParamStore;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// Plain SGD or Adam with bias correction. Moment buffers are keyed by
/// parameter name, so the walk order is deterministic.
#[derive(Clone, Debug)]
pub struct Optimizer {
    pub kind: OptimizerKind,
    pub lr: f64,
    t: u64,
    m: BTreeMap<String, ArrayD<f64>>,
    v: BTreeMap<String, ArrayD<f64>>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64) -> Self {
        Optimizer {
            kind,
            lr,
            t: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    /// Apply one update from the accumulated gradients. Does not zero them.
    pub fn step(&mut self, store: &mut ParamStore) {
        match self.kind {
            OptimizerKind::Sgd => {
                let lr = self.lr;
                for (_, p) in store.iter_mut() {
                    p.value.zip_mut_with(&p.grad, |w, &g| *w -= lr * g);
                }
            }
            OptimizerKind::Adam => {
                self.t += 1;
                let bc1 = 1.0 - ADAM_BETA1.powi(self.t as i32);
                let bc2 = 1.0 - ADAM_BETA2.powi(self.t as i32);
                let lr = self.lr;
                for (name, p) in store.iter_mut() {
                    let m = self
                        .m
                        .entry(name.clone())
                        .or_insert_with(|| ArrayD::zeros(p.grad.raw_dim()));
                    let v = self
                        .v
                        .entry(name.clone())
                        .or_insert_with(|| ArrayD::zeros(p.grad.raw_dim()));
                    m.zip_mut_with(&p.grad, |m, &g| {
                        *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g
                    });
                    v.zip_mut_with(&p.grad, |v, &g| {
                        *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g
                    });
                    ndarray::Zip::from(&mut p.value)
                        .and(&*m)
                        .and(&*v)
                        .for_each(|w, &m, &v| {
                            let mh = m / bc1;
                            let vh = v / bc2;
                            *w -= lr * mh / (vh.sqrt() + ADAM_EPS);
                        });
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr1;

    fn single_param(v: f64, g: f64) -> ParamStore {
        let mut s = ParamStore::new();
        s.insert("w", arr1(&[v]).into_dyn());
        s.get_mut("w").grad.fill(g);
        s
    }

    #[test]
    fn sgd_step_is_lr_times_grad() {
        let mut s = single_param(1.0, 0.5);
        let mut opt = Optimizer::new(OptimizerKind::Sgd, 0.1);
        opt.step(&mut s);
        assert!((s.get("w").value[[0]] - 0.95).abs() < 1e-15);
    }

    #[test]
    fn adam_first_step_is_lr_for_any_grad_scale() {
        // bias correction makes the first update exactly -lr * sign(g)
        for g in [0.01, 1.0, 250.0] {
            let mut s = single_param(0.0, g);
            let mut opt = Optimizer::new(OptimizerKind::Adam, 0.001);
            opt.step(&mut s);
            let w = s.get("w").value[[0]];
            assert!(
                (w + 0.001).abs() < 1e-6,
                "grad {g} gave first step {w}"
            );
        }
    }

    #[test]
    fn adam_three_steps_match_reference() {
        // hand-computed Adam trajectory for constant grad 1.0, lr 0.1
        let mut s = single_param(0.0, 1.0);
        let mut opt = Optimizer::new(OptimizerKind::Adam, 0.1);
        let mut w_ref = 0.0_f64;
        let mut m = 0.0_f64;
        let mut v = 0.0_f64;
        for t in 1..=3 {
            opt.step(&mut s);
            m = ADAM_BETA1 * m + (1.0 - ADAM_BETA1) * 1.0;
            v = ADAM_BETA2 * v + (1.0 - ADAM_BETA2) * 1.0;
            let mh = m / (1.0 - ADAM_BETA1.powi(t));
            let vh = v / (1.0 - ADAM_BETA2.powi(t));
            w_ref -= 0.1 * mh / (vh.sqrt() + ADAM_EPS);
            assert!(
                (s.get("w").value[[0]] - w_ref).abs() < 1e-12,
                "step {t}"
            );
        }
    }
}
