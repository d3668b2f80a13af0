//! Small models with hand-written gradients.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::data::{Batch, Targets};
use crate::value::{Array, TensorValue, Tree};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Relu,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            // One exp instead of a full tanh; saturates cleanly for large |z|.
            Activation::Tanh => 1.0 - 2.0 / (libm::exp(2.0 * z) + 1.0),
            Activation::Relu => z.max(0.0),
        }
    }

    /// Derivative expressed through the output `a = apply(z)`.
    fn derivative(self, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelSpec {
    /// Least squares without bias; weights `{w: [dim]}`.
    Linear,
    /// Softmax classifier; weights `{w1, b1, ..., wL, bL}`, `wi` of shape `[in, out]`.
    Mlp {
        hidden: Vec<usize>,
        classes: usize,
        activation: Activation,
    },
    /// `0.5 * lambda * |w|^2`; weights `{w: [dim]}`.
    Quadratic { dim: usize, lambda: f64 },
}

fn leaf<'a>(w: &'a TensorValue, key: &str) -> &'a [f64] {
    w.as_tree()
        .and_then(|t| t.get(key))
        .and_then(|v| v.as_array())
        .unwrap_or_else(|| panic!("weights have no array `{key}`"))
        .data()
}

fn array(shape: Vec<usize>, data: Vec<f64>) -> TensorValue {
    TensorValue::Array(Array::new(shape, data).expect("shape matches data"))
}

/// `out[n, k] = a[n, j] * w[j, k] + b[k]`.
fn affine(a: &[f64], rows: usize, w: &[f64], b: &[f64], fan_in: usize, fan_out: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(rows * fan_out);
    for r in 0..rows {
        out.extend_from_slice(b);
        let o = &mut out[r * fan_out..];
        for (j, &x) in a[r * fan_in..(r + 1) * fan_in].iter().enumerate() {
            if x == 0.0 {
                continue;
            }
            for (ok, wk) in o[..fan_out].iter_mut().zip(&w[j * fan_out..(j + 1) * fan_out]) {
                *ok += x * wk;
            }
        }
    }
    out
}

fn log_softmax_row(z: &[f64], out: &mut [f64]) {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = z.iter().map(|&x| libm::exp(x - max)).sum();
    let lse = max + libm::log(sum);
    for (o, &x) in out.iter_mut().zip(z) {
        *o = x - lse;
    }
}

impl ModelSpec {
    pub fn mlp(hidden: Vec<usize>, classes: usize) -> Self {
        ModelSpec::Mlp { hidden, classes, activation: Activation::Tanh }
    }

    /// Layer widths from input to output.
    fn widths(&self, input_dim: usize) -> Vec<usize> {
        match self {
            ModelSpec::Mlp { hidden, classes, .. } => {
                let mut w = vec![input_dim];
                w.extend_from_slice(hidden);
                w.push(*classes);
                w
            }
            ModelSpec::Linear => vec![input_dim],
            ModelSpec::Quadratic { dim, .. } => vec![*dim],
        }
    }

    /// Deterministic initial weights: `N(0, 1/fan_in)` matrices, zero biases.
    pub fn init<R: Rng + ?Sized>(&self, input_dim: usize, rng: &mut R) -> TensorValue {
        let mut t = Tree::new();
        match self {
            ModelSpec::Linear | ModelSpec::Quadratic { .. } => {
                let dim = self.widths(input_dim)[0];
                let s = 1.0 / libm::sqrt(dim as f64);
                t.insert("w", array(vec![dim], (0..dim).map(|_| s * rng.sample::<f64, _>(StandardNormal)).collect()));
            }
            ModelSpec::Mlp { .. } => {
                let widths = self.widths(input_dim);
                for (l, pair) in widths.windows(2).enumerate() {
                    let (i, o) = (pair[0], pair[1]);
                    let s = 1.0 / libm::sqrt(i as f64);
                    t.insert(
                        format!("w{}", l + 1),
                        array(vec![i, o], (0..i * o).map(|_| s * rng.sample::<f64, _>(StandardNormal)).collect()),
                    );
                    t.insert(format!("b{}", l + 1), array(vec![o], vec![0.0; o]));
                }
            }
        }
        t.into()
    }

    fn layer_keys(l: usize) -> (String, String) {
        (format!("w{l}"), format!("b{l}"))
    }

    /// Output scores: logits for the MLP, predictions for the linear model.
    pub fn forward(&self, w: &TensorValue, batch: &Batch) -> Vec<f64> {
        match self {
            ModelSpec::Linear => {
                let wv = leaf(w, "w");
                (0..batch.len())
                    .map(|i| batch.row(i).iter().zip(wv).map(|(a, b)| a * b).sum())
                    .collect()
            }
            ModelSpec::Mlp { .. } => self.mlp_forward(w, batch).pop().expect("output layer"),
            ModelSpec::Quadratic { .. } => Vec::new(),
        }
    }

    /// Activations of every layer; the last entry holds logits.
    fn mlp_forward(&self, w: &TensorValue, batch: &Batch) -> Vec<Vec<f64>> {
        let ModelSpec::Mlp { activation, .. } = self else { unreachable!() };
        let widths = self.widths(batch.dim);
        let n = batch.len();
        let mut acts: Vec<Vec<f64>> = Vec::with_capacity(widths.len());
        acts.push(batch.x.clone());
        let layers = widths.len() - 1;
        for l in 0..layers {
            let (wk, bk) = Self::layer_keys(l + 1);
            let mut z = affine(&acts[l], n, leaf(w, &wk), leaf(w, &bk), widths[l], widths[l + 1]);
            if l + 1 < layers {
                z.iter_mut().for_each(|x| *x = activation.apply(*x));
            }
            acts.push(z);
        }
        acts
    }

    /// Mean loss over the batch.
    pub fn loss(&self, w: &TensorValue, batch: &Batch) -> f64 {
        match self {
            ModelSpec::Quadratic { lambda, .. } => 0.5 * lambda * w.sum_squares(),
            ModelSpec::Linear => {
                let Targets::Values(y) = &batch.y else { panic!("linear model needs values") };
                let pred = self.forward(w, batch);
                0.5 * pred.iter().zip(y).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / batch.len() as f64
            }
            ModelSpec::Mlp { classes, .. } => {
                let Targets::Labels(y) = &batch.y else { panic!("classifier needs labels") };
                let logits = self.forward(w, batch);
                let mut lp = vec![0.0; *classes];
                let mut total = 0.0;
                for (i, &label) in y.iter().enumerate() {
                    log_softmax_row(&logits[i * classes..(i + 1) * classes], &mut lp);
                    total -= lp[label];
                }
                total / batch.len() as f64
            }
        }
    }

    /// Mean loss and its exact gradient, as a tree shaped like `w`.
    pub fn forward_backward(&self, w: &TensorValue, batch: &Batch) -> (f64, TensorValue) {
        match self {
            ModelSpec::Quadratic { lambda, .. } => {
                (0.5 * lambda * w.sum_squares(), w.map(|x| lambda * x))
            }
            ModelSpec::Linear => {
                let Targets::Values(y) = &batch.y else { panic!("linear model needs values") };
                let n = batch.len() as f64;
                let pred = self.forward(w, batch);
                let mut grad = vec![0.0; batch.dim];
                let mut loss = 0.0;
                for (i, (p, t)) in pred.iter().zip(y).enumerate() {
                    let r = p - t;
                    loss += 0.5 * r * r;
                    for (g, x) in grad.iter_mut().zip(batch.row(i)) {
                        *g += r * x / n;
                    }
                }
                let mut t = Tree::new();
                t.insert("w", array(vec![batch.dim], grad));
                (loss / n, t.into())
            }
            ModelSpec::Mlp { classes, activation, .. } => {
                let Targets::Labels(y) = &batch.y else { panic!("classifier needs labels") };
                let widths = self.widths(batch.dim);
                let layers = widths.len() - 1;
                let rows = batch.len();
                let n = rows as f64;
                let acts = self.mlp_forward(w, batch);
                let logits = &acts[layers];
                let mut delta = vec![0.0; rows * classes];
                let mut loss = 0.0;
                let mut lp = vec![0.0; *classes];
                for (i, &label) in y.iter().enumerate() {
                    log_softmax_row(&logits[i * classes..(i + 1) * classes], &mut lp);
                    loss -= lp[label];
                    for k in 0..*classes {
                        let p = libm::exp(lp[k]);
                        delta[i * classes + k] = (p - if k == label { 1.0 } else { 0.0 }) / n;
                    }
                }
                let mut grads: Vec<(usize, Vec<f64>, Vec<f64>)> = Vec::with_capacity(layers);
                for l in (0..layers).rev() {
                    let (fi, fo) = (widths[l], widths[l + 1]);
                    let a = &acts[l];
                    let mut gw = vec![0.0; fi * fo];
                    let mut gb = vec![0.0; fo];
                    for r in 0..rows {
                        let d = &delta[r * fo..(r + 1) * fo];
                        for (b, &dk) in gb.iter_mut().zip(d) {
                            *b += dk;
                        }
                        for (j, &x) in a[r * fi..(r + 1) * fi].iter().enumerate() {
                            if x == 0.0 {
                                continue;
                            }
                            for (g, &dk) in gw[j * fo..(j + 1) * fo].iter_mut().zip(d) {
                                *g += x * dk;
                            }
                        }
                    }
                    if l > 0 {
                        let (wk, _) = Self::layer_keys(l + 1);
                        let wl = leaf(w, &wk);
                        let mut wt = vec![0.0; fi * fo];
                        for j in 0..fi {
                            for k in 0..fo {
                                wt[k * fi + j] = wl[j * fo + k];
                            }
                        }
                        let mut prev = vec![0.0; rows * fi];
                        for r in 0..rows {
                            let d = &delta[r * fo..(r + 1) * fo];
                            let p = &mut prev[r * fi..(r + 1) * fi];
                            for (k, &dk) in d.iter().enumerate() {
                                for (pj, &wkj) in p.iter_mut().zip(&wt[k * fi..(k + 1) * fi]) {
                                    *pj += dk * wkj;
                                }
                            }
                            for (pj, &aj) in p.iter_mut().zip(&a[r * fi..(r + 1) * fi]) {
                                *pj *= activation.derivative(aj);
                            }
                        }
                        delta = prev;
                    }
                    grads.push((l + 1, gw, gb));
                }
                let mut t = Tree::new();
                for (l, gw, gb) in grads.into_iter().rev() {
                    let (wk, bk) = Self::layer_keys(l);
                    t.insert(wk, array(vec![widths[l - 1], widths[l]], gw));
                    t.insert(bk, array(vec![widths[l]], gb));
                }
                (loss / n, t.into())
            }
        }
    }

    /// Fraction of rows whose highest logit (first on ties) is the label.
    pub fn accuracy(&self, w: &TensorValue, batch: &Batch) -> f64 {
        let ModelSpec::Mlp { classes, .. } = self else { panic!("accuracy needs a classifier") };
        let Targets::Labels(y) = &batch.y else { panic!("classifier needs labels") };
        let logits = self.forward(w, batch);
        let mut correct = 0usize;
        for (i, &label) in y.iter().enumerate() {
            let row = &logits[i * classes..(i + 1) * classes];
            let mut best = 0;
            for k in 1..*classes {
                if row[k] > row[best] {
                    best = k;
                }
            }
            correct += (best == label) as usize;
        }
        correct as f64 / batch.len() as f64
    }
}
