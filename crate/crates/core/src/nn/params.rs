use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named collection of learnable tensors. Order of registration is the
/// canonical order used by checkpoints and the optimizer.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    mats: Vec<Matrix>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Matrix) -> ParamId {
        let name = name.into();
        debug_assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.names.push(name);
        self.mats.push(value);
        ParamId(self.mats.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.mats.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mats.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Matrix {
        &self.mats[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Matrix {
        &mut self.mats[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Matrix)> {
        self.names
            .iter()
            .zip(&self.mats)
            .enumerate()
            .map(|(i, (n, m))| (ParamId(i), n.as_str(), m))
    }

    pub fn mats_mut(&mut self) -> &mut [Matrix] {
        &mut self.mats
    }

    pub fn scalar_count(&self) -> usize {
        self.mats.iter().map(|m| m.data().len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.mats.iter().all(Matrix::is_finite)
    }
}

/// Gradient buffers shaped like a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Grads {
    mats: Vec<Matrix>,
}

impl Grads {
    pub fn zeros_like(params: &ParamStore) -> Self {
        Self {
            mats: params
                .mats
                .iter()
                .map(|m| Matrix::zeros(m.rows(), m.cols()))
                .collect(),
        }
    }

    pub fn get(&self, id: ParamId) -> &Matrix {
        &self.mats[id.0]
    }

    pub(crate) fn get_mut(&mut self, id: ParamId) -> &mut Matrix {
        &mut self.mats[id.0]
    }

    pub fn mats(&self) -> &[Matrix] {
        &self.mats
    }

    pub fn global_norm(&self) -> f64 {
        self.mats.iter().map(Matrix::frobenius_sq).sum::<f64>().sqrt()
    }

    pub fn scale(&mut self, f: f64) {
        for m in &mut self.mats {
            m.scale(f);
        }
    }

    pub fn zero(&mut self) {
        for m in &mut self.mats {
            m.data_mut().fill(0.0);
        }
    }
}

pub(crate) fn normal_matrix<R: Rng>(rng: &mut R, rows: usize, cols: usize, std: f64) -> Matrix {
    let dist = Normal::new(0.0, std).expect("finite std");
    let data = (0..rows * cols).map(|_| dist.sample(rng)).collect();
    Matrix::from_vec(rows, cols, data)
}
