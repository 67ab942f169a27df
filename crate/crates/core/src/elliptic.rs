//! P1 finite elements for `-(a u')' = f` on `(x_min, 1)` with Dirichlet ends,
//! and the truncated problems on `(1/k, 1)` extended by zero.

use std::sync::Arc;

use serde::Serialize;

use crate::error::{invalid, Result};
use crate::linalg::SymTridiag;
use crate::mesh::{Field, Mesh1D};
use crate::quadrature::local_moments;
use crate::weights::{weighted_sq_integral, CoefficientSpec, WeightSpec};

/// Stiffness `∫ a φ_i' φ_j'` and weighted mass `∫ w φ_i φ_j` on all nodes.
#[derive(Debug, Clone)]
pub struct BandedSystem {
    pub stiffness: SymTridiag,
    pub mass: SymTridiag,
}

pub fn assemble(mesh: &Mesh1D, coeff: &CoefficientSpec, w: &WeightSpec) -> Result<BandedSystem> {
    coeff.validate_on(mesh)?;
    Ok(BandedSystem {
        stiffness: stiffness_matrix(mesh, coeff, w),
        mass: mass_matrix(mesh, w.alpha()),
    })
}

/// `K_ij = ∫ a φ_i' φ_j'`. The power part of `a` is integrated exactly; a
/// modulation `m(x)` is taken at the element midpoint.
pub fn stiffness_matrix(mesh: &Mesh1D, coeff: &CoefficientSpec, w: &WeightSpec) -> SymTridiag {
    let mut k = SymTridiag::zeros(mesh.node_count());
    for (e, (xl, xr)) in mesh.elements().enumerate() {
        let h = xr - xl;
        let c =
            coeff.modulation_at(0.5 * (xl + xr)) * local_moments(w.alpha(), xl, xr)[0] / (h * h);
        k.diag[e] += c;
        k.diag[e + 1] += c;
        k.off[e] -= c;
    }
    k
}

/// `M_ij = ∫ x^β φ_i φ_j`.
pub fn mass_matrix(mesh: &Mesh1D, beta: f64) -> SymTridiag {
    let mut m = SymTridiag::zeros(mesh.node_count());
    for (e, (xl, xr)) in mesh.elements().enumerate() {
        let [j0, j1, j2] = local_moments(beta, xl, xr);
        m.diag[e] += j0 - 2.0 * j1 + j2;
        m.off[e] += j1 - j2;
        m.diag[e + 1] += j2;
    }
    m
}

/// Load vector `∫ f_h φ_i` of the nodal interpolant `f_h`.
pub fn load_vector(mesh: &Mesh1D, f: &[f64]) -> Vec<f64> {
    mass_matrix(mesh, 0.0).matvec(f)
}

/// Dirichlet solution of `-(a u')' = f` on the mesh of `f`.
pub fn solve_elliptic(f: &Field, coeff: &CoefficientSpec, w: &WeightSpec) -> Result<Field> {
    let mesh = f.mesh();
    let sys = assemble(mesh, coeff, w)?;
    let load = load_vector(mesh, f.values());
    let n = mesh.node_count();
    let k = sys.stiffness.interior();
    let u = k.factor()?.solve(&load[1..n - 1]);
    let mut values = Vec::with_capacity(n);
    values.push(0.0);
    values.extend(u);
    values.push(0.0);
    Field::new(mesh.clone(), values)
}

/// Relative interior residual `‖K u - F‖ / ‖F‖` of a computed solution.
pub fn galerkin_residual(
    u: &Field,
    f: &Field,
    coeff: &CoefficientSpec,
    w: &WeightSpec,
) -> Result<f64> {
    let mesh = u.mesh();
    let sys = assemble(mesh, coeff, w)?;
    let ku = sys.stiffness.matvec(u.values());
    let load = load_vector(mesh, f.values());
    let n = mesh.node_count();
    let (mut num, mut den) = (0.0, 0.0);
    for i in 1..n - 1 {
        num += (ku[i] - load[i]).powi(2);
        den += load[i].powi(2);
    }
    Ok(if den == 0.0 {
        num.sqrt()
    } else {
        (num / den).sqrt()
    })
}

/// Solve on `Ω_k = (x_k, 1)`, `x_k` the largest node `<= 1/k`, then extend by 0.
pub fn solve_truncated(
    f: &Field,
    k: usize,
    coeff: &CoefficientSpec,
    w: &WeightSpec,
) -> Result<Field> {
    if k < 2 {
        return invalid(format!("truncation index k must be >= 2, got {k}"));
    }
    let mesh = f.mesh();
    let (sub, offset) = mesh.truncated(1.0 / k as f64)?;
    let sub = Arc::new(sub);
    let sub_f = Field::new(sub, f.values()[offset..].to_vec())?;
    let u = solve_elliptic(&sub_f, coeff, w)?;
    let mut values = vec![0.0; offset];
    values.extend_from_slice(u.values());
    Field::new(mesh.clone(), values)
}

/// Reference solution used by [`elliptic_convergence_sweep`].
pub enum Reference<'a> {
    ClosedForm(&'a dyn Fn(f64) -> f64),
    /// Full-domain solve on the mesh refined `factor` times, sampled back.
    FineMesh {
        factor: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepRow {
    pub k: usize,
    /// Left end of the truncated domain actually used (a mesh node).
    pub x_cut: f64,
    pub error_full: f64,
    pub error_omega: f64,
}

/// Errors of the zero-extended truncated solutions in `L²(Ω; w)` and
/// `L²(ω; w)`, rows ordered by `k`.
pub fn elliptic_convergence_sweep(
    f: &dyn Fn(f64) -> f64,
    ks: &[usize],
    omega: (f64, f64),
    mesh: &Arc<Mesh1D>,
    coeff: &CoefficientSpec,
    w: &WeightSpec,
    reference: Reference<'_>,
) -> Result<Vec<SweepRow>> {
    check_window(omega)?;
    if ks.is_empty() {
        return invalid("sweep needs at least one k");
    }
    let reference = match reference {
        Reference::ClosedForm(u) => mesh.nodes().iter().map(|&x| u(x)).collect::<Vec<_>>(),
        Reference::FineMesh { factor } => {
            let fine = Arc::new(mesh.refined(factor)?);
            let u = solve_elliptic(&Field::from_fn(fine, f), coeff, w)?;
            u.values().iter().step_by(factor).copied().collect()
        }
    };
    let forcing = Field::from_fn(mesh.clone(), f);
    let mut ks = ks.to_vec();
    ks.sort_unstable();
    ks.dedup();
    let mut rows = Vec::with_capacity(ks.len());
    for k in ks {
        let uk = solve_truncated(&forcing, k, coeff, w)?;
        let diff: Vec<f64> = uk
            .values()
            .iter()
            .zip(&reference)
            .map(|(a, b)| a - b)
            .collect();
        let all = (f64::NEG_INFINITY, f64::INFINITY);
        rows.push(SweepRow {
            k,
            x_cut: mesh.nodes()[mesh.cut_index(1.0 / k as f64)],
            error_full: weighted_sq_integral(mesh, &diff, w.alpha(), all).sqrt(),
            error_omega: weighted_sq_integral(mesh, &diff, w.alpha(), omega).sqrt(),
        });
    }
    Ok(rows)
}

pub(crate) fn check_window(omega: (f64, f64)) -> Result<()> {
    let (a, b) = omega;
    if !(0.0 < a && a < b && b < 1.0) {
        return invalid(format!(
            "observation window ({a}, {b}) must satisfy 0 < a < b < 1"
        ));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn w(alpha: f64) -> WeightSpec {
        WeightSpec::new(alpha).unwrap()
    }

    #[test]
    fn unweighted_uniform_stiffness() {
        let mesh = Mesh1D::uniform(0.0, 10).unwrap();
        let k = stiffness_matrix(&mesh, &CoefficientSpec::default(), &w(0.0));
        let h = 0.1;
        assert!((k.diag[3] - 2.0 / h).abs() < 1e-10);
        assert!((k.off[3] + 1.0 / h).abs() < 1e-10);
    }

    #[test]
    fn weighted_offdiagonal_closed_form() {
        let mesh = Mesh1D::graded(0.0, 12, 2.0).unwrap();
        let k = stiffness_matrix(&mesh, &CoefficientSpec::default(), &w(0.5));
        for (e, (xl, xr)) in mesh.elements().enumerate() {
            let exact = -(xr.powf(1.5) - xl.powf(1.5)) / (1.5 * (xr - xl).powi(2));
            assert!((k.off[e] - exact).abs() <= 1e-12 * exact.abs());
        }
    }

    #[test]
    fn stiffness_is_an_m_matrix() {
        let mesh = Mesh1D::graded(0.0, 50, 4.0).unwrap();
        let sys = assemble(&mesh, &CoefficientSpec::default(), &w(0.7)).unwrap();
        assert!(sys.stiffness.off.iter().all(|&o| o < 0.0));
        assert!(sys.mass.off.iter().all(|&o| o > 0.0));
    }

    #[test]
    fn zero_forcing_gives_zero() {
        let mesh = Arc::new(Mesh1D::uniform(0.0, 16).unwrap());
        let u = solve_elliptic(&Field::zeros(mesh), &CoefficientSpec::default(), &w(0.5)).unwrap();
        assert!(u.is_zero());
    }

    #[test]
    fn classical_poisson_is_nodally_exact() {
        let mesh = Arc::new(Mesh1D::uniform(0.0, 32).unwrap());
        let f = Field::from_fn(mesh, |_| 1.0);
        let u = solve_elliptic(&f, &CoefficientSpec::default(), &w(0.0)).unwrap();
        let exact: Vec<f64> = u.mesh().nodes().iter().map(|x| 0.5 * (x - x * x)).collect();
        assert!(u.max_abs_diff(&exact) < 1e-13);
    }

    #[test]
    fn truncated_solution_vanishes_left_of_cut() {
        let mesh = Arc::new(Mesh1D::graded(0.0, 256, 4.0).unwrap());
        let f = Field::from_fn(mesh.clone(), |_| 1.0);
        let u = solve_truncated(&f, 4, &CoefficientSpec::default(), &w(0.5)).unwrap();
        for (&x, &v) in mesh.nodes().iter().zip(u.values()) {
            if x <= 0.25 {
                assert_eq!(v, 0.0);
            } else if x < 1.0 {
                assert!(v > 0.0);
            }
        }
        assert!(solve_truncated(&f, 1, &CoefficientSpec::default(), &w(0.5)).is_err());
    }

    #[test]
    fn sweep_rejects_window_touching_boundary() {
        let mesh = Arc::new(Mesh1D::uniform(0.0, 32).unwrap());
        let r = elliptic_convergence_sweep(
            &|_| 1.0,
            &[2],
            (0.0, 0.5),
            &mesh,
            &CoefficientSpec::default(),
            &w(0.5),
            Reference::FineMesh { factor: 2 },
        );
        assert!(r.is_err());
    }

    #[test]
    fn single_k_sweep_has_one_row() {
        let mesh = Arc::new(Mesh1D::graded(0.0, 64, 4.0).unwrap());
        let rows = elliptic_convergence_sweep(
            &|_| 1.0,
            &[2],
            (0.3, 0.7),
            &mesh,
            &CoefficientSpec::default(),
            &w(0.5),
            Reference::FineMesh { factor: 4 },
        )
        .unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].k, 2);
    }
}
