//! One-hidden-layer tanh network with hand-written gradients, and Adam.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

/// `y = W2 tanh(W1 x + b1) + b2`. Parameters live in one flat vector so the
/// optimizer can treat them uniformly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub inputs: usize,
    pub hidden: usize,
    pub outputs: usize,
    pub params: Vec<f64>,
}

/// Activations kept from the forward pass.
#[derive(Clone, Debug)]
pub struct MlpCache {
    pub hidden: Vec<f64>,
}

impl Mlp {
    pub fn num_params(inputs: usize, hidden: usize, outputs: usize) -> usize {
        hidden * inputs + hidden + outputs * hidden + outputs
    }

    /// Xavier-style initialization; `zero_output` starts the map at zero.
    pub fn new<R: Rng + ?Sized>(inputs: usize, hidden: usize, outputs: usize, zero_output: bool, rng: &mut R) -> Self {
        let mut params = vec![0.0; Self::num_params(inputs, hidden, outputs)];
        let n1 = Normal::new(0.0, (1.0 / inputs.max(1) as f64).sqrt()).expect("valid std");
        for p in &mut params[..hidden * inputs] {
            *p = n1.sample(rng);
        }
        if !zero_output {
            let n2 = Normal::new(0.0, (1.0 / hidden.max(1) as f64).sqrt()).expect("valid std");
            let off = hidden * inputs + hidden;
            for p in &mut params[off..off + outputs * hidden] {
                *p = n2.sample(rng);
            }
        }
        Mlp { inputs, hidden, outputs, params }
    }

    fn offsets(&self) -> (usize, usize, usize) {
        let b1 = self.hidden * self.inputs;
        let w2 = b1 + self.hidden;
        let b2 = w2 + self.outputs * self.hidden;
        (b1, w2, b2)
    }

    pub fn forward(&self, x: &[f64]) -> (Vec<f64>, MlpCache) {
        let (b1, w2, b2) = self.offsets();
        let p = &self.params;
        let mut h = vec![0.0; self.hidden];
        for (j, hj) in h.iter_mut().enumerate() {
            let row = &p[j * self.inputs..(j + 1) * self.inputs];
            let z = p[b1 + j] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
            *hj = z.tanh();
        }
        let mut y = p[b2..b2 + self.outputs].to_vec();
        for (o, yo) in y.iter_mut().enumerate() {
            let row = &p[w2 + o * self.hidden..w2 + (o + 1) * self.hidden];
            *yo += row.iter().zip(&h).map(|(w, v)| w * v).sum::<f64>();
        }
        (y, MlpCache { hidden: h })
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.forward(x).0
    }

    /// Accumulates dL/dparams into `grad` and returns dL/dx.
    pub fn backward(&self, x: &[f64], cache: &MlpCache, grad_out: &[f64], grad: &mut [f64]) -> Vec<f64> {
        let (b1, w2, b2) = self.offsets();
        let p = &self.params;
        let h = &cache.hidden;
        let mut gh = vec![0.0; self.hidden];
        for (o, &go) in grad_out.iter().enumerate() {
            grad[b2 + o] += go;
            if go == 0.0 {
                continue;
            }
            for j in 0..self.hidden {
                grad[w2 + o * self.hidden + j] += go * h[j];
                gh[j] += go * p[w2 + o * self.hidden + j];
            }
        }
        let mut gx = vec![0.0; self.inputs];
        for j in 0..self.hidden {
            let gz = gh[j] * (1.0 - h[j] * h[j]);
            if gz == 0.0 {
                continue;
            }
            grad[b1 + j] += gz;
            for i in 0..self.inputs {
                grad[j * self.inputs + i] += gz * x[i];
                gx[i] += gz * p[j * self.inputs + i];
            }
        }
        gx
    }
}

#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(n: usize, lr: f64) -> Self {
        Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for k in 0..params.len() {
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * grad[k];
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * grad[k] * grad[k];
            params[k] -= self.lr * (self.m[k] / c1) / ((self.v[k] / c2).sqrt() + self.eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn adam_minimizes_a_quadratic() {
        let mut x = vec![3.0, -2.0];
        let mut opt = Adam::new(2, 0.1);
        for _ in 0..500 {
            let g = vec![2.0 * x[0], 2.0 * x[1]];
            opt.step(&mut x, &g);
        }
        assert!(x[0].abs() < 1e-2 && x[1].abs() < 1e-2);
    }

    #[test]
    fn zero_output_starts_at_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = Mlp::new(3, 8, 2, true, &mut rng);
        assert_eq!(m.apply(&[0.3, -1.0, 2.0]), vec![0.0, 0.0]);
    }
}
