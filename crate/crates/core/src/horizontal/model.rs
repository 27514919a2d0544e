use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use super::{HorizontalError, ModelState};
use crate::numeric::sigmoid;

/// Model family. Classification labels are class indices stored as `f64`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelKind {
    /// Squared loss `0.5 * (w.x + b - y)^2`.
    Linear,
    /// Binary log loss, labels in {0, 1}.
    Logistic,
    /// Multinomial log loss over `classes` outputs.
    Softmax { classes: usize },
    /// One tanh hidden layer of width `hidden`, softmax output.
    Mlp { hidden: usize, classes: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub kind: ModelKind,
    pub n_features: usize,
}

impl Architecture {
    pub fn new(kind: ModelKind, n_features: usize) -> Self {
        Self { kind, n_features }
    }

    pub fn layout(&self) -> Vec<(String, usize)> {
        let d = self.n_features;
        let named = |n: &str, len: usize| (n.to_string(), len);
        match self.kind {
            ModelKind::Linear | ModelKind::Logistic => vec![named("weight", d), named("bias", 1)],
            ModelKind::Softmax { classes } => vec![named("weight", classes * d), named("bias", classes)],
            ModelKind::Mlp { hidden, classes } => vec![
                named("hidden.weight", hidden * d),
                named("hidden.bias", hidden),
                named("output.weight", classes * hidden),
                named("output.bias", classes),
            ],
        }
    }

    /// Zero weights for the linear families; Glorot-uniform hidden and
    /// output weights for the MLP.
    pub fn init(&self, seed: u64) -> ModelState {
        let mut state = ModelState::zeros(self.layout());
        if let ModelKind::Mlp { hidden, classes } = self.kind {
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            let d = self.n_features;
            let v = state.values_mut();
            let r1 = libm::sqrt(6.0 / (d + hidden) as f64);
            for w in &mut v[..hidden * d] {
                *w = rng.random_range(-r1..r1);
            }
            let r2 = libm::sqrt(6.0 / (hidden + classes) as f64);
            let off = hidden * d + hidden;
            for w in &mut v[off..off + classes * hidden] {
                *w = rng.random_range(-r2..r2);
            }
        }
        state
    }

    pub fn check_label(&self, y: f64) -> Result<(), HorizontalError> {
        let ok = match self.kind {
            ModelKind::Linear => y.is_finite(),
            ModelKind::Logistic => y == 0.0 || y == 1.0,
            ModelKind::Softmax { classes } | ModelKind::Mlp { classes, .. } => {
                y >= 0.0 && y.fract() == 0.0 && (y as usize) < classes
            }
        };
        if ok {
            Ok(())
        } else {
            Err(HorizontalError::LabelOutOfRange(y))
        }
    }

    /// Regression value, positive-class probability, or class probabilities.
    pub fn predict(&self, params: &[f64], x: &[f64]) -> Vec<f64> {
        let d = self.n_features;
        match self.kind {
            ModelKind::Linear => vec![dot(&params[..d], x) + params[d]],
            ModelKind::Logistic => vec![sigmoid(dot(&params[..d], x) + params[d])],
            ModelKind::Softmax { classes } => {
                let mut z = linear_layer(&params[..classes * d], &params[classes * d..], x);
                softmax_in_place(&mut z);
                z
            }
            ModelKind::Mlp { hidden, classes } => {
                let (_, mut z) = self.mlp_forward(params, x, hidden, classes);
                softmax_in_place(&mut z);
                z
            }
        }
    }

    /// Predicted label: the regression value, `p >= 0.5`, or the argmax class.
    pub fn predict_label(&self, params: &[f64], x: &[f64]) -> f64 {
        let out = self.predict(params, x);
        match self.kind {
            ModelKind::Linear => out[0],
            ModelKind::Logistic => f64::from(u8::from(out[0] >= 0.5)),
            _ => argmax(&out) as f64,
        }
    }

    fn mlp_forward(&self, params: &[f64], x: &[f64], hidden: usize, classes: usize) -> (Vec<f64>, Vec<f64>) {
        let d = self.n_features;
        let (w1, rest) = params.split_at(hidden * d);
        let (b1, rest) = rest.split_at(hidden);
        let (w2, b2) = rest.split_at(classes * hidden);
        let h: Vec<f64> = linear_layer(w1, b1, x).into_iter().map(libm::tanh).collect();
        let z = linear_layer(w2, b2, &h);
        (h, z)
    }

    /// Mean loss over `idx` and its gradient, written into `grad`.
    pub fn loss_grad(&self, params: &[f64], x: &[Vec<f64>], y: &[f64], idx: &[usize], grad: &mut [f64]) -> f64 {
        grad.fill(0.0);
        let d = self.n_features;
        let mut loss = 0.0;
        for &i in idx {
            let xi = &x[i];
            let yi = y[i];
            match self.kind {
                ModelKind::Linear => {
                    let r = dot(&params[..d], xi) + params[d] - yi;
                    loss += 0.5 * r * r;
                    axpy(r, xi, &mut grad[..d]);
                    grad[d] += r;
                }
                ModelKind::Logistic => {
                    let z = dot(&params[..d], xi) + params[d];
                    // log(1 + e^z) - y z
                    loss += softplus(z) - yi * z;
                    let r = sigmoid(z) - yi;
                    axpy(r, xi, &mut grad[..d]);
                    grad[d] += r;
                }
                ModelKind::Softmax { classes } => {
                    let mut p = linear_layer(&params[..classes * d], &params[classes * d..], xi);
                    let lse = log_sum_exp(&p);
                    let c = yi as usize;
                    loss += lse - p[c];
                    for v in &mut p {
                        *v = libm::exp(*v - lse);
                    }
                    p[c] -= 1.0;
                    for (k, &dz) in p.iter().enumerate() {
                        axpy(dz, xi, &mut grad[k * d..(k + 1) * d]);
                        grad[classes * d + k] += dz;
                    }
                }
                ModelKind::Mlp { hidden, classes } => {
                    let (h, mut z) = self.mlp_forward(params, xi, hidden, classes);
                    let lse = log_sum_exp(&z);
                    let c = yi as usize;
                    loss += lse - z[c];
                    for v in &mut z {
                        *v = libm::exp(*v - lse);
                    }
                    z[c] -= 1.0;
                    let w2_off = hidden * d + hidden;
                    let b2_off = w2_off + classes * hidden;
                    let mut dh = vec![0.0; hidden];
                    for (k, &dz) in z.iter().enumerate() {
                        let row = w2_off + k * hidden;
                        for j in 0..hidden {
                            grad[row + j] += dz * h[j];
                            dh[j] += params[row + j] * dz;
                        }
                        grad[b2_off + k] += dz;
                    }
                    for j in 0..hidden {
                        let da = dh[j] * (1.0 - h[j] * h[j]);
                        axpy(da, xi, &mut grad[j * d..(j + 1) * d]);
                        grad[hidden * d + j] += da;
                    }
                }
            }
        }
        let m = idx.len() as f64;
        for g in grad.iter_mut() {
            *g /= m;
        }
        loss / m
    }

    /// Mean loss over all samples.
    pub fn loss(&self, params: &[f64], x: &[Vec<f64>], y: &[f64]) -> f64 {
        let idx: Vec<usize> = (0..x.len()).collect();
        let mut grad = vec![0.0; params.len()];
        self.loss_grad(params, x, y, &idx, &mut grad)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// `W x + b` with `W` stored row-major, one row per output.
fn linear_layer(w: &[f64], b: &[f64], x: &[f64]) -> Vec<f64> {
    let d = x.len();
    b.iter().enumerate().map(|(k, bk)| dot(&w[k * d..(k + 1) * d], x) + bk).collect()
}

fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + libm::log1p(libm::exp(-z))
    } else {
        libm::log1p(libm::exp(z))
    }
}

fn log_sum_exp(z: &[f64]) -> f64 {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + libm::log(z.iter().map(|v| libm::exp(v - m)).sum())
}

fn softmax_in_place(z: &mut [f64]) {
    let lse = log_sum_exp(z);
    for v in z.iter_mut() {
        *v = libm::exp(*v - lse);
    }
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_problem(arch: &Architecture, n: usize, seed: u64) -> (Vec<f64>, Vec<Vec<f64>>, Vec<f64>) {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let params: Vec<f64> = (0..arch.layout().iter().map(|l| l.1).sum::<usize>())
            .map(|_| rng.random_range(-0.8..0.8))
            .collect();
        let x: Vec<Vec<f64>> =
            (0..n).map(|_| (0..arch.n_features).map(|_| rng.random_range(-1.5..1.5)).collect()).collect();
        let y = (0..n)
            .map(|_| match arch.kind {
                ModelKind::Linear => rng.random_range(-2.0..2.0),
                ModelKind::Logistic => f64::from(u8::from(rng.random_bool(0.5))),
                ModelKind::Softmax { classes } | ModelKind::Mlp { classes, .. } => rng.random_range(0..classes) as f64,
            })
            .collect();
        (params, x, y)
    }

    fn check_finite_differences(arch: Architecture) {
        let (params, x, y) = random_problem(&arch, 7, 42);
        let idx: Vec<usize> = (0..x.len()).collect();
        let mut grad = vec![0.0; params.len()];
        arch.loss_grad(&params, &x, &y, &idx, &mut grad);
        let eps = 1e-5;
        for i in 0..params.len() {
            let mut up = params.clone();
            let mut down = params.clone();
            up[i] += eps;
            down[i] -= eps;
            let fd = (arch.loss(&up, &x, &y) - arch.loss(&down, &x, &y)) / (2.0 * eps);
            let scale = grad[i].abs().max(fd.abs()).max(1e-2);
            assert!((fd - grad[i]).abs() <= 1e-6 * scale, "{:?} param {i}: fd {fd} vs {}", arch.kind, grad[i]);
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        check_finite_differences(Architecture::new(ModelKind::Linear, 4));
        check_finite_differences(Architecture::new(ModelKind::Logistic, 5));
        check_finite_differences(Architecture::new(ModelKind::Softmax { classes: 3 }, 4));
        check_finite_differences(Architecture::new(ModelKind::Mlp { hidden: 5, classes: 3 }, 4));
    }

    #[test]
    fn layouts_and_init() {
        let mlp = Architecture::new(ModelKind::Mlp { hidden: 8, classes: 5 }, 10);
        let s = mlp.init(1);
        assert_eq!(s.len(), 8 * 10 + 8 + 5 * 8 + 5);
        assert!(s.get("hidden.weight").unwrap().iter().any(|&w| w != 0.0));
        assert!(s.get("hidden.bias").unwrap().iter().all(|&w| w == 0.0));
        assert_eq!(mlp.init(1), s);
        let lin = Architecture::new(ModelKind::Logistic, 3).init(9);
        assert!(lin.flatten().iter().all(|&w| w == 0.0));
    }

    #[test]
    fn predictions() {
        let arch = Architecture::new(ModelKind::Softmax { classes: 3 }, 2);
        let params = [0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0];
        let p = arch.predict(&params, &[0.0, 3.0]);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(arch.predict_label(&params, &[0.0, 3.0]), 2.0);
        let lr = Architecture::new(ModelKind::Logistic, 1);
        assert_eq!(lr.predict(&[0.0, 0.0], &[5.0]), vec![0.5]);
        assert!(lr.check_label(2.0).is_err());
        assert!(arch.check_label(3.0).is_err());
    }
}
