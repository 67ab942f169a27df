//! Seeded random test data.
//!
//! Smooth fields are finite sine series, so the same seed gives the same
//! function on every mesh and refinement studies compare like with like.

use std::f64::consts::PI;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::mesh::{Field, Mesh1D};
use crate::parabolic::Source;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `Σ_k c_k sin(kπx)` on `(0, 1)`, `c_k` uniform in `[-1, 1] / k²`.
#[derive(Debug, Clone, PartialEq)]
pub struct SineSeries {
    coeffs: Vec<f64>,
}

impl SineSeries {
    pub fn new(coeffs: Vec<f64>) -> Self {
        Self { coeffs }
    }

    pub fn random(rng: &mut impl Rng, modes: usize) -> Self {
        let coeffs = (1..=modes)
            .map(|k| rng.gen_range(-1.0..=1.0) / (k * k) as f64)
            .collect();
        Self { coeffs }
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.coeffs
            .iter()
            .enumerate()
            .map(|(k, c)| c * ((k + 1) as f64 * PI * x).sin())
            .sum()
    }

    /// Nodal interpolant with exact zeros at both ends.
    pub fn field(&self, mesh: Arc<Mesh1D>) -> Field {
        Field::dirichlet_from_fn(mesh, |x| self.eval(x))
    }
}

/// `Σ_{j,k} c_{jk} cos(jπt/T) sin(kπx)`, `c_{jk}` uniform in `[-1,1] / ((j+1) k)²`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpaceTimeSeries {
    t_final: f64,
    coeffs: Vec<Vec<f64>>,
}

impl SpaceTimeSeries {
    pub fn random(rng: &mut impl Rng, t_final: f64, time_modes: usize, space_modes: usize) -> Self {
        let coeffs = (0..time_modes)
            .map(|j| {
                (1..=space_modes)
                    .map(|k| rng.gen_range(-1.0..=1.0) / (((j + 1) * k) as f64).powi(2))
                    .collect()
            })
            .collect();
        Self { t_final, coeffs }
    }

    pub fn eval(&self, x: f64, t: f64) -> f64 {
        let mut sum = 0.0;
        for (j, row) in self.coeffs.iter().enumerate() {
            let ct = (j as f64 * PI * t / self.t_final).cos();
            for (k, c) in row.iter().enumerate() {
                sum += c * ct * ((k + 1) as f64 * PI * x).sin();
            }
        }
        sum
    }

    pub fn source(&self) -> Source {
        let this = self.clone();
        Source::function(move |x, t| this.eval(x, t))
    }
}

/// Interior nodal values uniform in `[-1, 1]`, zero at both ends.
pub fn random_nodal_field(mesh: Arc<Mesh1D>, rng: &mut impl Rng) -> Field {
    let n = mesh.node_count();
    let mut values: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..=1.0)).collect();
    values[0] = 0.0;
    values[n - 1] = 0.0;
    Field::new(mesh, values).expect("zero ends satisfy the Dirichlet conditions")
}

/// `count` independent smooth fields drawn from one seeded stream.
pub fn random_sine_fields(mesh: &Arc<Mesh1D>, seed: u64, count: usize, modes: usize) -> Vec<Field> {
    let mut r = rng(seed);
    (0..count)
        .map(|_| SineSeries::random(&mut r, modes).field(mesh.clone()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_function_on_any_mesh() {
        let a = SineSeries::random(&mut rng(7), 6);
        let b = SineSeries::random(&mut rng(7), 6);
        assert_eq!(a, b);
        let coarse = Arc::new(Mesh1D::uniform(0.0, 8).unwrap());
        let fine = Arc::new(coarse.refined(4).unwrap());
        let fc = a.field(coarse);
        let ff = b.field(fine);
        for i in 0..=8 {
            assert_eq!(fc.values()[i], ff.values()[4 * i]);
        }
    }

    #[test]
    fn fields_vanish_at_ends() {
        let mesh = Arc::new(Mesh1D::graded(0.0, 40, 4.0).unwrap());
        for f in random_sine_fields(&mesh, 3, 5, 8) {
            assert!(f.satisfies_dirichlet());
            assert!(!f.is_zero());
        }
        assert!(random_nodal_field(mesh, &mut rng(1)).satisfies_dirichlet());
    }

    #[test]
    fn space_time_series_is_bounded_by_coefficients() {
        let s = SpaceTimeSeries::random(&mut rng(11), 1.0, 3, 4);
        let bound: f64 = s.coeffs.iter().flatten().map(|c| c.abs()).sum();
        for i in 0..=20 {
            let x = i as f64 / 20.0;
            assert!(s.eval(x, 0.37).abs() <= bound + 1e-15);
        }
        assert!(s.eval(0.0, 0.5).abs() < 1e-15);
    }
}
