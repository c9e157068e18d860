//! Nodal control fields `(u, f, v)` on the cloak.

use alloc::vec;
use alloc::vec::Vec;

use crate::assembly::Mat2;
use crate::error::{check_len, Result};

/// Nodal values of the three diffusivity perturbations on the control nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlField {
    pub u: Vec<f64>,
    pub f: Vec<f64>,
    pub v: Vec<f64>,
}

impl ControlField {
    pub fn zeros(n: usize) -> Self {
        Self { u: vec![0.0; n], f: vec![0.0; n], v: vec![0.0; n] }
    }

    pub fn constant(n: usize, u: f64, f: f64, v: f64) -> Self {
        Self { u: vec![u; n], f: vec![f; n], v: vec![v; n] }
    }

    pub fn new(u: Vec<f64>, f: Vec<f64>, v: Vec<f64>) -> Result<Self> {
        check_len(u.len(), f.len())?;
        check_len(u.len(), v.len())?;
        Ok(Self { u, f, v })
    }

    pub fn len(&self) -> usize {
        self.u.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u.is_empty()
    }

    pub fn components(&self) -> [&[f64]; 3] {
        [&self.u, &self.f, &self.v]
    }

    /// `K = [[μ+u, v], [v, μ+f]]` at control node `k`.
    pub fn diffusivity(&self, k: usize, mu: f64) -> Mat2 {
        [[mu + self.u[k], self.v[k]], [self.v[k], mu + self.f[k]]]
    }

    /// `[u..., f..., v...]`
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(3 * self.len());
        out.extend_from_slice(&self.u);
        out.extend_from_slice(&self.f);
        out.extend_from_slice(&self.v);
        out
    }

    pub fn from_flat(x: &[f64]) -> Self {
        let n = x.len() / 3;
        Self { u: x[..n].to_vec(), f: x[n..2 * n].to_vec(), v: x[2 * n..3 * n].to_vec() }
    }

    pub fn is_zero(&self) -> bool {
        self.components().iter().all(|c| c.iter().all(|&x| x == 0.0))
    }
}

/// One control field per time node `t_0 … t_N`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransientControl {
    pub slices: Vec<ControlField>,
}

impl TransientControl {
    pub fn zeros(n_ctrl: usize, n_slices: usize) -> Self {
        Self { slices: vec![ControlField::zeros(n_ctrl); n_slices] }
    }

    pub fn repeat(field: &ControlField, n_slices: usize) -> Self {
        Self { slices: vec![field.clone(); n_slices] }
    }

    pub fn n_slices(&self) -> usize {
        self.slices.len()
    }

    pub fn n_ctrl(&self) -> usize {
        self.slices.first().map_or(0, ControlField::len)
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.slices.iter().flat_map(ControlField::to_flat).collect()
    }

    pub fn from_flat(x: &[f64], n_slices: usize) -> Self {
        let per = x.len() / n_slices.max(1);
        Self { slices: x.chunks(per).map(ControlField::from_flat).collect() }
    }
}
