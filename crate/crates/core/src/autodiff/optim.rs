use std::collections::HashMap;

use ndarray::Zip;

use super::{Gradients, Graph, Matrix, Var};

/// Updates the trainable parameters of a graph from one set of adjoints.
/// Frozen parameters are never touched, even if an adjoint is present.
pub trait Optimizer {
    fn step(&mut self, graph: &mut Graph, grads: &Gradients);
    fn name(&self) -> &'static str;
}

#[derive(Debug, Clone)]
pub struct Sgd {
    pub lr: f64,
}

impl Optimizer for Sgd {
    fn step(&mut self, graph: &mut Graph, grads: &Gradients) {
        for (var, g) in grads.iter() {
            if !graph.is_trainable(var) {
                continue;
            }
            if let Some(w) = graph.param_value_mut(var) {
                w.scaled_add(-self.lr, g);
            }
        }
    }

    fn name(&self) -> &'static str {
        "sgd"
    }
}

/// Bias-corrected first/second moment optimizer.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    moments: HashMap<Var, (Matrix, Matrix)>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            moments: HashMap::new(),
        }
    }
}

impl Optimizer for Adam {
    fn step(&mut self, graph: &mut Graph, grads: &Gradients) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        let step = self.lr * c2.sqrt() / c1;
        for (var, g) in grads.iter() {
            if !graph.is_trainable(var) {
                continue;
            }
            let Some(w) = graph.param_value_mut(var) else {
                continue;
            };
            let (m, v) = self
                .moments
                .entry(var)
                .or_insert_with(|| (Matrix::zeros(g.dim()), Matrix::zeros(g.dim())));
            Zip::from(w).and(m).and(v).and(g).for_each(|w, m, v, &g| {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                *w -= step * *m / (v.sqrt() + eps * c2.sqrt());
            });
        }
    }

    fn name(&self) -> &'static str {
        "adam"
    }
}
