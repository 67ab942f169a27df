//! Graded node partitions of `(x_min, 1)` and nodal fields on them.

use std::sync::Arc;

use serde::Serialize;

use crate::error::{invalid, Result};

#[derive(Debug, Clone, Serialize)]
pub struct Mesh1D {
    nodes: Vec<f64>,
    grading: f64,
}

// Meshes are equal when their nodes are; the grading tag is not compared
// since it is NaN for meshes given by explicit nodes.
impl PartialEq for Mesh1D {
    fn eq(&self, other: &Self) -> bool {
        self.nodes == other.nodes
    }
}

impl Mesh1D {
    /// Nodes `x_min + (1 - x_min)(i/n)^q`, `i = 0..=n`.
    pub fn graded(x_min: f64, n: usize, grading: f64) -> Result<Self> {
        if n < 2 {
            return invalid(format!("mesh needs at least 3 nodes, got n = {n}"));
        }
        if !(0.0..1.0).contains(&x_min) {
            return invalid(format!("mesh left end {x_min} must lie in [0, 1)"));
        }
        if !(grading >= 1.0) || !grading.is_finite() {
            return invalid(format!("grading exponent must be >= 1, got {grading}"));
        }
        let nf = n as f64;
        let mut nodes: Vec<f64> = (0..=n)
            .map(|i| x_min + (1.0 - x_min) * (i as f64 / nf).powf(grading))
            .collect();
        nodes[0] = x_min;
        nodes[n] = 1.0;
        Self::check(&nodes)?;
        Ok(Self { nodes, grading })
    }

    pub fn uniform(x_min: f64, n: usize) -> Result<Self> {
        Self::graded(x_min, n, 1.0)
    }

    pub fn from_nodes(nodes: Vec<f64>) -> Result<Self> {
        Self::check(&nodes)?;
        if *nodes.last().unwrap() != 1.0 {
            return invalid("mesh must end at x = 1");
        }
        Ok(Self {
            nodes,
            grading: f64::NAN,
        })
    }

    fn check(nodes: &[f64]) -> Result<()> {
        if nodes.len() < 3 {
            return invalid("mesh needs at least 3 nodes");
        }
        if nodes[0] < 0.0 {
            return invalid("mesh must lie in [0, 1]");
        }
        if let Some(w) = nodes.windows(2).find(|w| !(w[1] > w[0])) {
            return invalid(format!("mesh nodes not strictly increasing at {}", w[0]));
        }
        Ok(())
    }

    /// Default grading `2/(1 - α)` clamped to `[1, 4]`.
    pub fn default_grading(alpha: f64) -> f64 {
        (2.0 / (1.0 - alpha)).clamp(1.0, 4.0)
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn grading(&self) -> f64 {
        self.grading
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn element_count(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn x_min(&self) -> f64 {
        self.nodes[0]
    }

    /// `(x_l, x_r)` of element `e`.
    pub fn element(&self, e: usize) -> (f64, f64) {
        (self.nodes[e], self.nodes[e + 1])
    }

    pub fn elements(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.nodes.windows(2).map(|w| (w[0], w[1]))
    }

    /// Same grading law with `factor` times as many elements. Every node of
    /// `self` is a node of the result (index `i * factor`).
    pub fn refined(&self, factor: usize) -> Result<Self> {
        if self.grading.is_nan() {
            let mut nodes = Vec::with_capacity(self.element_count() * factor + 1);
            for (a, b) in self.elements() {
                for j in 0..factor {
                    nodes.push(a + (b - a) * j as f64 / factor as f64);
                }
            }
            nodes.push(1.0);
            return Self::from_nodes(nodes);
        }
        Self::graded(self.x_min(), self.element_count() * factor, self.grading)
    }

    /// Index of the largest node `<= x_cut`. The truncated domain starting
    /// there contains `(x_cut, 1)`.
    pub fn cut_index(&self, x_cut: f64) -> usize {
        self.nodes
            .partition_point(|&x| x <= x_cut)
            .saturating_sub(1)
    }

    /// Sub-mesh made of the nodes from `cut_index(x_cut)` on, together with
    /// that index.
    pub fn truncated(&self, x_cut: f64) -> Result<(Self, usize)> {
        let idx = self.cut_index(x_cut);
        if self.node_count() - idx < 3 {
            return invalid(format!("truncation at {x_cut} leaves fewer than 3 nodes"));
        }
        Ok((
            Self {
                nodes: self.nodes[idx..].to_vec(),
                grading: f64::NAN,
            },
            idx,
        ))
    }
}

/// Nodal values of a continuous piecewise-linear function.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    mesh: Arc<Mesh1D>,
    values: Vec<f64>,
}

impl Field {
    pub fn new(mesh: Arc<Mesh1D>, values: Vec<f64>) -> Result<Self> {
        if values.len() != mesh.node_count() {
            return invalid(format!(
                "field has {} values but mesh has {} nodes",
                values.len(),
                mesh.node_count()
            ));
        }
        Ok(Self { mesh, values })
    }

    pub fn zeros(mesh: Arc<Mesh1D>) -> Self {
        let n = mesh.node_count();
        Self {
            mesh,
            values: vec![0.0; n],
        }
    }

    pub fn from_fn(mesh: Arc<Mesh1D>, f: impl Fn(f64) -> f64) -> Self {
        let values = mesh.nodes().iter().map(|&x| f(x)).collect();
        Self { mesh, values }
    }

    /// Interpolant of `f` with the end values forced to zero.
    pub fn dirichlet_from_fn(mesh: Arc<Mesh1D>, f: impl Fn(f64) -> f64) -> Self {
        let mut field = Self::from_fn(mesh, f);
        field.clamp_boundary();
        field
    }

    pub fn mesh(&self) -> &Arc<Mesh1D> {
        &self.mesh
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn clamp_boundary(&mut self) {
        let n = self.values.len();
        self.values[0] = 0.0;
        self.values[n - 1] = 0.0;
    }

    pub fn satisfies_dirichlet(&self) -> bool {
        self.values[0] == 0.0 && *self.values.last().unwrap() == 0.0
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            mesh: self.mesh.clone(),
            values: self.values.iter().map(|v| c * v).collect(),
        }
    }

    /// `a·self + b·other` on the same mesh.
    pub fn combine(&self, a: f64, other: &Self, b: f64) -> Result<Self> {
        if !same_mesh(&self.mesh, &other.mesh) {
            return invalid("fields live on different meshes");
        }
        Ok(Self {
            mesh: self.mesh.clone(),
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(u, v)| a * u + b * v)
                .collect(),
        })
    }

    /// Linear interpolation at `x`.
    pub fn eval(&self, x: f64) -> f64 {
        let nodes = self.mesh.nodes();
        if x <= nodes[0] {
            return self.values[0];
        }
        let e = nodes.partition_point(|&y| y <= x).min(nodes.len() - 1);
        let (xl, xr) = (nodes[e - 1], nodes[e]);
        let s = (x - xl) / (xr - xl);
        self.values[e - 1] * (1.0 - s) + self.values[e] * s
    }

    pub fn max_abs_diff(&self, other: &[f64]) -> f64 {
        self.values
            .iter()
            .zip(other)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

pub(crate) fn same_mesh(a: &Arc<Mesh1D>, b: &Arc<Mesh1D>) -> bool {
    Arc::ptr_eq(a, b) || a == b
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn graded_nodes_follow_power_law() {
        let m = Mesh1D::graded(0.0, 8, 2.0).unwrap();
        assert_eq!(m.nodes()[4], 0.25);
        assert_eq!(m.nodes()[8], 1.0);
    }

    #[test]
    fn rejects_tiny_meshes() {
        assert!(Mesh1D::uniform(0.0, 1).is_err());
        assert!(Mesh1D::from_nodes(vec![0.0, 0.5, 0.5, 1.0]).is_err());
    }

    #[test]
    fn refinement_nests() {
        let m = Mesh1D::graded(0.0, 16, 3.0).unwrap();
        let f = m.refined(4).unwrap();
        for (i, &x) in m.nodes().iter().enumerate() {
            assert!((f.nodes()[4 * i] - x).abs() < 1e-15);
        }
    }

    #[test]
    fn truncation_keeps_subset_containing_interval() {
        let m = Mesh1D::graded(0.0, 64, 2.0).unwrap();
        let (sub, idx) = m.truncated(0.25).unwrap();
        assert_eq!(sub.nodes()[0], m.nodes()[idx]);
        assert!(sub.nodes()[0] <= 0.25);
        assert!(m.nodes()[idx + 1] > 0.25);
    }

    #[test]
    fn eval_interpolates() {
        let m = Arc::new(Mesh1D::uniform(0.0, 4).unwrap());
        let f = Field::from_fn(m, |x| 2.0 * x);
        assert!((f.eval(0.3) - 0.6).abs() < 1e-15);
        assert_eq!(f.eval(1.0), 2.0);
    }
}
