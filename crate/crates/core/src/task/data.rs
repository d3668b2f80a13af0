//! Seeded synthetic datasets.

use alloc::vec::Vec;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::rng::seeded;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "generator", rename_all = "snake_case")]
pub enum DatasetSpec {
    /// `y = x . w* + noise`, `x ~ N(0, I)`, `w* ~ N(0, I / dim)`.
    Linreg {
        dim: usize,
        train: usize,
        val: usize,
        noise: f64,
        seed: u64,
    },
    /// Gaussian blobs with unit spread around centers drawn from `N(0, spread^2 I)`.
    Blobs {
        dim: usize,
        classes: usize,
        train: usize,
        val: usize,
        spread: f64,
        seed: u64,
    },
    /// No data; the loss depends on the weights only.
    None,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Targets {
    Values(Vec<f64>),
    Labels(Vec<usize>),
}

/// Row-major inputs with one target per row.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub x: Vec<f64>,
    pub dim: usize,
    pub y: Targets,
}

impl Batch {
    pub fn len(&self) -> usize {
        match &self.y {
            Targets::Values(v) => v.len(),
            Targets::Labels(l) => l.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.dim..(i + 1) * self.dim]
    }

    /// Rows at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Batch {
        let mut x = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            x.extend_from_slice(self.row(i));
        }
        let y = match &self.y {
            Targets::Values(v) => Targets::Values(indices.iter().map(|&i| v[i]).collect()),
            Targets::Labels(l) => Targets::Labels(indices.iter().map(|&i| l[i]).collect()),
        };
        Batch { x, dim: self.dim, y }
    }

    /// Every row twice.
    pub fn doubled(&self) -> Batch {
        let idx: Vec<usize> = (0..self.len()).chain(0..self.len()).collect();
        self.select(&idx)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub train: Batch,
    pub val: Batch,
}

impl DatasetSpec {
    pub fn input_dim(&self) -> usize {
        match self {
            DatasetSpec::Linreg { dim, .. } | DatasetSpec::Blobs { dim, .. } => *dim,
            DatasetSpec::None => 0,
        }
    }

    pub fn generate(&self) -> Dataset {
        match *self {
            DatasetSpec::Linreg { dim, train, val, noise, seed } => {
                let mut rng = seeded(seed, 0);
                let scale = 1.0 / libm::sqrt(dim as f64);
                let w: Vec<f64> = (0..dim)
                    .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
                    .collect();
                let split = |n: usize, rng: &mut crate::rng::Rng| {
                    let x: Vec<f64> = (0..n * dim).map(|_| rng.sample(StandardNormal)).collect();
                    let y = (0..n)
                        .map(|i| {
                            let dot: f64 = x[i * dim..(i + 1) * dim].iter().zip(&w).map(|(a, b)| a * b).sum();
                            dot + noise * rng.sample::<f64, _>(StandardNormal)
                        })
                        .collect();
                    Batch { x, dim, y: Targets::Values(y) }
                };
                let train = split(train, &mut rng);
                let val = split(val, &mut rng);
                Dataset { train, val }
            }
            DatasetSpec::Blobs { dim, classes, train, val, spread, seed } => {
                let mut rng = seeded(seed, 0);
                let centers: Vec<f64> = (0..classes * dim)
                    .map(|_| spread * rng.sample::<f64, _>(StandardNormal))
                    .collect();
                let split = |n: usize, rng: &mut crate::rng::Rng| {
                    let mut x = Vec::with_capacity(n * dim);
                    let mut y = Vec::with_capacity(n);
                    for i in 0..n {
                        let c = i % classes;
                        for d in 0..dim {
                            x.push(centers[c * dim + d] + rng.sample::<f64, _>(StandardNormal));
                        }
                        y.push(c);
                    }
                    Batch { x, dim, y: Targets::Labels(y) }
                };
                let train = split(train, &mut rng);
                let val = split(val, &mut rng);
                Dataset { train, val }
            }
            DatasetSpec::None => {
                let empty = Batch { x: Vec::new(), dim: 0, y: Targets::Values(Vec::new()) };
                Dataset { train: empty.clone(), val: empty }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generation_is_seeded() {
        let spec = DatasetSpec::Blobs { dim: 2, classes: 4, train: 100, val: 50, spread: 2.0, seed: 3 };
        assert_eq!(spec.generate(), spec.generate());
        let other = DatasetSpec::Blobs { dim: 2, classes: 4, train: 100, val: 50, spread: 2.0, seed: 4 };
        assert_ne!(spec.generate(), other.generate());
        let d = spec.generate();
        assert_eq!(d.train.len(), 100);
        assert_eq!(d.val.x.len(), 100);
    }

    #[test]
    fn select_and_double() {
        let spec = DatasetSpec::Linreg { dim: 3, train: 5, val: 5, noise: 0.1, seed: 1 };
        let d = spec.generate();
        let b = d.train.select(&[4, 0]);
        assert_eq!(b.row(0), d.train.row(4));
        assert_eq!(d.train.doubled().len(), 10);
    }
}
