//! Feature standardization and closed-form ridge regression.

use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

/// Per-feature affine rescaling to zero mean and unit variance.
/// Constant features map to zero.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub inv_std: Vec<f64>,
}

impl Standardizer {
    pub fn fit<'a>(rows: impl IntoIterator<Item = &'a [f64]>, dim: usize) -> Result<Self> {
        let mut n = 0usize;
        let mut s = vec![0.0; dim];
        let mut ss = vec![0.0; dim];
        for r in rows {
            if r.len() != dim {
                return Err(Error::InvalidParams(format!("row width {} != {dim}", r.len())));
            }
            n += 1;
            for k in 0..dim {
                s[k] += r[k];
                ss[k] += r[k] * r[k];
            }
        }
        if n == 0 {
            return Err(Error::Empty("standardizer rows"));
        }
        let nf = n as f64;
        let mean: Vec<f64> = s.iter().map(|v| v / nf).collect();
        let inv_std = (0..dim)
            .map(|k| {
                let var = (ss[k] / nf - mean[k] * mean[k]).max(0.0);
                let sd = var.sqrt();
                if sd > 1e-9 * (1.0 + mean[k].abs()) {
                    1.0 / sd
                } else {
                    0.0
                }
            })
            .collect();
        Ok(Standardizer { mean, inv_std })
    }

    pub fn identity(dim: usize) -> Self {
        Standardizer { mean: vec![0.0; dim], inv_std: vec![1.0; dim] }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.mean).zip(&self.inv_std).map(|((v, m), s)| (v - m) * s).collect()
    }
}

/// `y = W x + b` with `W` stored row-major (outputs x inputs).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AffineMap {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl AffineMap {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        AffineMap { inputs, outputs, weights: vec![0.0; inputs * outputs], bias: vec![0.0; outputs] }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut y = self.bias.clone();
        for (o, yo) in y.iter_mut().enumerate() {
            let row = &self.weights[o * self.inputs..(o + 1) * self.inputs];
            *yo += row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
        }
        y
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().chain(&self.bias).all(|v| v.is_finite())
    }
}

/// Streaming sufficient statistics for a multi-output ridge fit with an
/// unpenalized intercept.
#[derive(Clone, Debug)]
pub struct RidgeAccumulator {
    n: f64,
    sx: DVector<f64>,
    sy: DVector<f64>,
    sxx: DMatrix<f64>,
    sxy: DMatrix<f64>,
}

impl RidgeAccumulator {
    pub fn new(inputs: usize, outputs: usize) -> Self {
        RidgeAccumulator {
            n: 0.0,
            sx: DVector::zeros(inputs),
            sy: DVector::zeros(outputs),
            sxx: DMatrix::zeros(inputs, inputs),
            sxy: DMatrix::zeros(inputs, outputs),
        }
    }

    pub fn count(&self) -> usize {
        self.n as usize
    }

    pub fn add_xx(&mut self, x: &[f64], sign: f64) {
        let d = x.len();
        self.n += sign;
        for i in 0..d {
            self.sx[i] += sign * x[i];
            if x[i] == 0.0 {
                continue;
            }
            let xi = sign * x[i];
            for j in 0..d {
                self.sxx[(i, j)] += xi * x[j];
            }
        }
    }

    pub fn add_xy(&mut self, x: &[f64], y: &[f64]) {
        for (o, &yo) in y.iter().enumerate() {
            self.sy[o] += yo;
            if yo == 0.0 {
                continue;
            }
            for (i, &xi) in x.iter().enumerate() {
                self.sxy[(i, o)] += xi * yo;
            }
        }
    }

    pub fn add(&mut self, x: &[f64], y: &[f64]) {
        self.add_xx(x, 1.0);
        self.add_xy(x, y);
    }

    pub fn merge(&mut self, other: &RidgeAccumulator) {
        self.merge_inputs(other);
        self.merge_xy(other);
    }

    pub fn merge_inputs(&mut self, other: &RidgeAccumulator) {
        self.n += other.n;
        self.sx += &other.sx;
        self.sxx += &other.sxx;
    }

    /// Adds only the output sums of `other`.
    pub fn merge_xy(&mut self, other: &RidgeAccumulator) {
        self.sy += &other.sy;
        self.sxy += &other.sxy;
    }

    /// Copies the input statistics with empty sums for `outputs` targets.
    pub fn with_outputs(&self, outputs: usize) -> Self {
        RidgeAccumulator {
            n: self.n,
            sx: self.sx.clone(),
            sy: DVector::zeros(outputs),
            sxx: self.sxx.clone(),
            sxy: DMatrix::zeros(self.sxx.nrows(), outputs),
        }
    }

    /// Solves `(Xc'Xc + lambda n I) W = Xc'Yc` on centered data. When the
    /// system is numerically singular the penalty is raised tenfold until
    /// the factorization succeeds.
    pub fn solve(&self, lambda: f64) -> Result<AffineMap> {
        if self.n < 1.0 {
            return Err(Error::Empty("ridge rows"));
        }
        let n = self.n;
        let mx = &self.sx / n;
        let my = &self.sy / n;
        let gram = &self.sxx - (&mx * mx.transpose()) * n;
        let cross = &self.sxy - (&mx * my.transpose()) * n;
        let d = gram.nrows();
        let scale = (gram.trace() / d.max(1) as f64).max(1e-12);
        let mut lam = lambda.max(0.0) * n;
        let w = loop {
            let mut a = gram.clone();
            for i in 0..d {
                a[(i, i)] += lam;
            }
            if let Some(ch) = a.cholesky() {
                let w = ch.solve(&cross);
                if w.iter().all(|v| v.is_finite()) {
                    break w;
                }
            }
            lam = if lam > 0.0 { lam * 10.0 } else { 1e-12 * scale * n };
            if lam > 1e12 * scale * n {
                return Err(Error::NonFinite("ridge normal equations"));
            }
        };
        let outputs = cross.ncols();
        let mut weights = vec![0.0; outputs * d];
        let mut bias = vec![0.0; outputs];
        for o in 0..outputs {
            let mut b = my[o];
            for i in 0..d {
                weights[o * d + i] = w[(i, o)];
                b -= w[(i, o)] * mx[i];
            }
            bias[o] = b;
        }
        Ok(AffineMap { inputs: d, outputs, weights, bias })
    }
}

/// Spearman rank correlation, average ranks for ties.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::InvalidParams("spearman needs two equal series of length >= 2".into()));
    }
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (x, y) in ra.iter().zip(&rb) {
        cov += (x - ma) * (y - mb);
        va += (x - ma).powi(2);
        vb += (y - mb).powi(2);
    }
    if va == 0.0 || vb == 0.0 {
        return Ok(0.0);
    }
    Ok(cov / (va * vb).sqrt())
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&i, &j| v[i].total_cmp(&v[j]));
    let mut r = vec![0.0; v.len()];
    let mut k = 0;
    while k < idx.len() {
        let mut m = k;
        while m + 1 < idx.len() && v[idx[m + 1]] == v[idx[k]] {
            m += 1;
        }
        let avg = (k + m) as f64 / 2.0 + 1.0;
        for &i in &idx[k..=m] {
            r[i] = avg;
        }
        k = m + 1;
    }
    r
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ridge_recovers_affine_relation() {
        let mut acc = RidgeAccumulator::new(2, 1);
        for k in 0..50 {
            let x = [k as f64 * 0.1, ((k * 7) % 11) as f64];
            acc.add(&x, &[3.0 * x[0] - 2.0 * x[1] + 0.5]);
        }
        let m = acc.solve(1e-12).unwrap();
        assert!((m.weights[0] - 3.0).abs() < 1e-6);
        assert!((m.weights[1] + 2.0).abs() < 1e-6);
        assert!((m.bias[0] - 0.5).abs() < 1e-6);
    }

    #[test]
    fn singular_system_falls_back_to_ridge() {
        let mut acc = RidgeAccumulator::new(2, 1);
        for k in 0..10 {
            let x = [k as f64, 2.0 * k as f64];
            acc.add(&x, &[x[0]]);
        }
        let m = acc.solve(0.0).unwrap();
        assert!(m.is_finite());
        let y = m.apply(&[4.0, 8.0]);
        assert!((y[0] - 4.0).abs() < 1e-6);
    }

    #[test]
    fn spearman_basics() {
        assert!((spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]).unwrap() - 1.0).abs() < 1e-12);
        assert!((spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap() + 1.0).abs() < 1e-12);
        assert_eq!(ranks(&[5.0, 1.0, 5.0]), vec![2.5, 1.0, 2.5]);
    }
}
