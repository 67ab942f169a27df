//! Observability ratios and penalized HUM null control with a distributed
//! control supported in the window `ω = (a, b)`.
//!
//! The Gramian is assembled from the exact transpose of the discrete forward
//! θ-scheme, so it is symmetric in the mass inner product and the Krylov
//! solver sees the operator it is told about. The target is `y(T) = 0`
//! (null controllability); the penalty `ε` trades control size for the
//! terminal residual `‖y(T)‖ = ε ‖φ_T‖`.

use std::ops::Range;
use std::sync::Arc;

use serde::Serialize;

use crate::elliptic::check_window;
use crate::error::{invalid, Error, Result};
use crate::linalg::{LdlFactor, SymTridiag};
use crate::mesh::{same_mesh, Field, Mesh1D};
use crate::parabolic::{
    solve_backward, solve_parabolic, trapezoid, Source, SpaceTimeField, ThetaStepper, TimeGrid,
};
use crate::weights::{weighted_sq_integral, CoefficientSpec, WeightSpec};

pub const CR_TOL: f64 = 1e-8;
pub const CR_MAX_ITER: usize = 500;
/// Observation integrals below this are treated as zero.
pub const DENOMINATOR_FLOOR: f64 = 1e-300;

const ALL: (f64, f64) = (f64::NEG_INFINITY, f64::INFINITY);

/// Equation, discretization and observation window shared by all drivers.
#[derive(Debug, Clone)]
pub struct ControlProblem {
    w: WeightSpec,
    coeff: CoefficientSpec,
    mesh: Arc<Mesh1D>,
    time_grid: TimeGrid,
    window: (f64, f64),
}

impl ControlProblem {
    pub fn new(
        w: WeightSpec,
        coeff: CoefficientSpec,
        mesh: Arc<Mesh1D>,
        time_grid: TimeGrid,
        window: (f64, f64),
    ) -> Result<Self> {
        check_window(window)?;
        coeff.validate_on(&mesh)?;
        Ok(Self {
            w,
            coeff,
            mesh,
            time_grid,
            window,
        })
    }

    pub fn weight(&self) -> &WeightSpec {
        &self.w
    }

    pub fn coefficient(&self) -> &CoefficientSpec {
        &self.coeff
    }

    pub fn mesh(&self) -> &Arc<Mesh1D> {
        &self.mesh
    }

    pub fn time_grid(&self) -> &TimeGrid {
        &self.time_grid
    }

    pub fn window(&self) -> (f64, f64) {
        self.window
    }

    fn check_datum(&self, u: &Field, what: &str) -> Result<()> {
        if !same_mesh(u.mesh(), &self.mesh) {
            return invalid(format!("{what} lives on a different mesh"));
        }
        if !u.satisfies_dirichlet() {
            return invalid(format!("{what} violates the Dirichlet conditions"));
        }
        Ok(())
    }

    /// Homogeneous backward solve from `φ(T) = phi_t`.
    pub fn backward(&self, phi_t: &Field) -> Result<SpaceTimeField> {
        solve_backward(
            phi_t,
            &Source::Zero,
            &self.w,
            &self.coeff,
            &self.mesh,
            &self.time_grid,
        )
    }
}

/// `‖φ(0)‖²_{L²} / ∫_0^T∫_ω φ²` for the homogeneous backward solution from
/// `phi_t`, trapezoidal in time. `+∞` when the observation vanishes.
pub fn observability_ratio(phi_t: &Field, problem: &ControlProblem) -> Result<f64> {
    problem.check_datum(phi_t, "terminal datum")?;
    if phi_t.is_zero() {
        return invalid("observability ratio of the zero datum is 0/0");
    }
    let traj = problem.backward(phi_t)?;
    let mesh = traj.mesh();
    let num = weighted_sq_integral(mesh, traj.frame(0).values(), 0.0, ALL);
    let per_frame: Vec<f64> = traj
        .frames()
        .iter()
        .map(|f| weighted_sq_integral(mesh, f.values(), 0.0, problem.window))
        .collect();
    let den = trapezoid(&per_frame, traj.time_grid().dt());
    if den < DENOMINATOR_FLOOR {
        return Ok(if num > 0.0 { f64::INFINITY } else { 0.0 });
    }
    Ok(num / den)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ObservabilityReport {
    pub samples: usize,
    pub ratios: Vec<f64>,
    pub empirical_c: f64,
    pub window: (f64, f64),
    pub t_final: f64,
    /// Some observation integral vanished while `φ(0)` did not.
    pub violation: bool,
}

pub fn observability_report(
    data: &[Field],
    problem: &ControlProblem,
) -> Result<ObservabilityReport> {
    if data.is_empty() {
        return invalid("observability report needs at least one terminal datum");
    }
    let ratios = data
        .iter()
        .map(|phi| observability_ratio(phi, problem))
        .collect::<Result<Vec<_>>>()?;
    let violation = ratios.iter().any(|r| !r.is_finite());
    let empirical_c = ratios.iter().copied().fold(0.0, f64::max);
    Ok(ObservabilityReport {
        samples: ratios.len(),
        ratios,
        empirical_c,
        window: problem.window,
        t_final: problem.time_grid.t_final(),
        violation,
    })
}

/// `(‖φ(0)‖², (2/T) ∫_{T/4}^{3T/4} ‖φ(t)‖² dt)` with `‖φ(t)‖²` linear between
/// time levels.
pub fn time_average_check(traj: &SpaceTimeField) -> (f64, f64) {
    let mesh = traj.mesh();
    let grid = traj.time_grid();
    let sq: Vec<f64> = traj
        .frames()
        .iter()
        .map(|f| weighted_sq_integral(mesh, f.values(), 0.0, ALL))
        .collect();
    let t_final = grid.t_final();
    let (lo, hi) = (0.25 * t_final, 0.75 * t_final);
    let mut integral = 0.0;
    for n in 0..grid.steps() {
        let (t0, t1) = (grid.time(n), grid.time(n + 1));
        let (s0, s1) = (t0.max(lo), t1.min(hi));
        if s1 <= s0 {
            continue;
        }
        let at = |t: f64| sq[n] + (sq[n + 1] - sq[n]) * (t - t0) / (t1 - t0);
        integral += 0.5 * (s1 - s0) * (at(s0) + at(s1));
    }
    (sq[0], 2.0 / t_final * integral)
}

/// Discrete control-to-state map `L: u ↦ y(T)` (zero initial state) and its
/// adjoint.
///
/// States are full nodal vectors with zero ends, paired by the unweighted
/// mass `M`. Controls are per-step nodal values on the nodes whose hat
/// support lies in `[a, b]`, paired by `Σ_n dt uᵀ M_ωω v`.
pub struct HumOperator {
    stepper: ThetaStepper,
    mesh: Arc<Mesh1D>,
    controls: Range<usize>,
    control_mass: SymTridiag,
    control_factor: LdlFactor,
}

impl HumOperator {
    pub fn new(problem: &ControlProblem) -> Result<Self> {
        let mesh = problem.mesh.clone();
        let nodes = mesh.nodes();
        let (a, b) = problem.window;
        let n = nodes.len();
        let first = (1..n - 1).find(|&i| nodes[i - 1] >= a);
        let last = (1..n - 1).rev().find(|&i| nodes[i + 1] <= b);
        let controls = match (first, last) {
            (Some(f), Some(l)) if f <= l => f..l + 1,
            _ => {
                return invalid(format!(
                    "no mesh node has its support inside the control window ({a}, {b})"
                ))
            }
        };
        let stepper = ThetaStepper::new(&mesh, &problem.coeff, &problem.w, problem.time_grid)?;
        let control_mass = stepper.mass().block(controls.start, controls.end);
        let control_factor = control_mass.factor()?;
        Ok(Self {
            stepper,
            mesh,
            controls,
            control_mass,
            control_factor,
        })
    }

    /// Node indices carrying control values.
    pub fn control_nodes(&self) -> Range<usize> {
        self.controls.clone()
    }

    pub fn steps(&self) -> usize {
        self.stepper.time_grid().steps()
    }

    pub fn state_inner(&self, a: &[f64], b: &[f64]) -> f64 {
        self.stepper.mass().bilinear(a, b)
    }

    pub fn control_inner(&self, u: &[Vec<f64>], v: &[Vec<f64>]) -> f64 {
        let dt = self.stepper.time_grid().dt();
        u.iter()
            .zip(v)
            .map(|(a, b)| dt * self.control_mass.bilinear(a, b))
            .sum()
    }

    /// Full nodal vector of a control frame.
    fn embed(&self, u: &[f64]) -> Vec<f64> {
        let mut full = vec![0.0; self.mesh.node_count()];
        full[self.controls.clone()].copy_from_slice(u);
        full
    }

    /// `y(T)` from `y(0) = y0` with source `u`.
    pub fn forward(&self, y0: &[f64], u: Option<&[Vec<f64>]>) -> Vec<f64> {
        let mut y = y0.to_vec();
        for n in 0..self.steps() {
            let f = u.map(|u| self.embed(&u[n]));
            y = self.stepper.step(&y, f.as_deref());
        }
        y
    }

    /// `L*φ`, the adjoint of `u ↦ forward(0, u)`.
    pub fn adjoint(&self, phi: &[f64]) -> Vec<Vec<f64>> {
        let n = phi.len();
        let steps = self.steps();
        let mut z = self.stepper.mass().matvec(phi)[1..n - 1].to_vec();
        let mut u = vec![Vec::new(); steps];
        let mut w_full = vec![0.0; n];
        for j in 0..steps {
            self.stepper.lhs().solve_in_place(&mut z);
            w_full[1..n - 1].copy_from_slice(&z);
            let mw = self.stepper.mass().matvec(&w_full);
            u[steps - 1 - j] = self.control_factor.solve(&mw[self.controls.clone()]);
            self.stepper.rhs().matvec_into(&w_full[1..n - 1], &mut z);
        }
        u
    }

    /// Gramian `Λ = L L*`, self-adjoint and non-negative in the mass product.
    pub fn gramian(&self, phi: &[f64]) -> Vec<f64> {
        let u = self.adjoint(phi);
        self.forward(&vec![0.0; phi.len()], Some(&u))
    }
}

/// Smallest `⟨Λd, d⟩ / ⟨d, d⟩` over the given nonzero directions.
pub fn gramian_rayleigh_min(problem: &ControlProblem, directions: &[Field]) -> Result<f64> {
    let op = HumOperator::new(problem)?;
    let mut min = f64::INFINITY;
    for d in directions {
        problem.check_datum(d, "direction")?;
        let den = op.state_inner(d.values(), d.values());
        if den == 0.0 {
            return invalid("Rayleigh quotient of the zero direction");
        }
        min = min.min(op.state_inner(&op.gramian(d.values()), d.values()) / den);
    }
    Ok(min)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HumSettings {
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for HumSettings {
    fn default() -> Self {
        Self {
            tolerance: CR_TOL,
            max_iterations: CR_MAX_ITER,
        }
    }
}

#[derive(Debug, Clone)]
pub struct HumResult {
    /// Control frame `u^n` acting on `(t_n, t_{n+1})`, zero outside `ω`.
    pub control: Vec<Field>,
    /// Controlled trajectory.
    pub state: SpaceTimeField,
    pub terminal_norm: f64,
    pub uncontrolled_norm: f64,
    pub epsilon: f64,
    pub cg_iterations: usize,
    /// `‖r_k‖ / ‖r_0‖` in the mass norm, starting with `1`.
    pub cg_residuals: Vec<f64>,
    /// Penalized dual functional at each iterate, starting with `0`.
    pub dual_values: Vec<f64>,
    /// Optimal terminal datum of the dual problem.
    pub dual_terminal: Field,
}

impl HumResult {
    pub fn source(&self) -> Source {
        Source::Stepwise(self.control.iter().map(|f| f.values().to_vec()).collect())
    }

    /// `(∫_0^T ‖u‖²)^{1/2}`.
    pub fn control_norm(&self) -> f64 {
        let mesh = self.state.mesh();
        let dt = self.state.time_grid().dt();
        self.control
            .iter()
            .map(|f| dt * weighted_sq_integral(mesh, f.values(), 0.0, ALL))
            .sum::<f64>()
            .sqrt()
    }
}

pub fn hum_control(y0: &Field, epsilon: f64, problem: &ControlProblem) -> Result<HumResult> {
    hum_control_with(y0, epsilon, problem, HumSettings::default())
}

/// Minimizes `J(φ_T) = ½‖L*φ_T‖² + (ε/2)‖φ_T‖² + ⟨A^{n_t} y0, φ_T⟩` by the
/// conjugate residual method in the mass inner product; the control is
/// `L*φ_T`, the dual trajectory restricted to `ω`.
pub fn hum_control_with(
    y0: &Field,
    epsilon: f64,
    problem: &ControlProblem,
    settings: HumSettings,
) -> Result<HumResult> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return invalid(format!("penalty epsilon must be positive, got {epsilon}"));
    }
    problem.check_datum(y0, "initial state")?;
    let op = HumOperator::new(problem)?;
    let n = problem.mesh.node_count();
    let apply = |v: &[f64]| -> Vec<f64> {
        let mut g = op.gramian(v);
        for (gi, vi) in g.iter_mut().zip(v) {
            *gi += epsilon * vi;
        }
        g
    };
    let free = op.forward(y0.values(), None);
    let b: Vec<f64> = free.iter().map(|v| -v).collect();
    let b_norm = op.state_inner(&b, &b).sqrt();

    let mut x = vec![0.0; n];
    let mut residuals = vec![1.0];
    let mut dual_values = vec![0.0];
    let mut iterations = 0;
    if b_norm > 0.0 {
        let mut r = b.clone();
        let mut ar = apply(&r);
        let mut p = r.clone();
        let mut ap = ar.clone();
        let mut rar = op.state_inner(&r, &ar);
        loop {
            let rel = *residuals.last().unwrap();
            if rel <= settings.tolerance {
                break;
            }
            if iterations == settings.max_iterations {
                return Err(Error::Convergence {
                    method: "conjugate residual (HUM)",
                    iterations,
                    residual: rel,
                    last_iterate: x,
                });
            }
            let alpha = rar / op.state_inner(&ap, &ap);
            for i in 0..n {
                x[i] += alpha * p[i];
                r[i] -= alpha * ap[i];
            }
            iterations += 1;
            residuals.push(op.state_inner(&r, &r).sqrt() / b_norm);
            let br: Vec<f64> = b.iter().zip(&r).map(|(bi, ri)| bi + ri).collect();
            dual_values.push(-0.5 * op.state_inner(&br, &x));
            ar = apply(&r);
            let rar_next = op.state_inner(&r, &ar);
            let beta = rar_next / rar;
            rar = rar_next;
            for i in 0..n {
                p[i] = r[i] + beta * p[i];
                ap[i] = ar[i] + beta * ap[i];
            }
        }
    }

    let mesh = problem.mesh.clone();
    let control = op
        .adjoint(&x)
        .into_iter()
        .map(|u| Field::new(mesh.clone(), op.embed(&u)))
        .collect::<Result<Vec<_>>>()?;
    let source = Source::Stepwise(control.iter().map(|f| f.values().to_vec()).collect());
    let state = solve_parabolic(
        y0,
        &source,
        &problem.w,
        &problem.coeff,
        &mesh,
        &problem.time_grid,
    )?;
    let norm = |v: &[f64]| op.state_inner(v, v).sqrt();
    Ok(HumResult {
        terminal_norm: norm(state.last().values()),
        uncontrolled_norm: norm(&free),
        control,
        state,
        epsilon,
        cg_iterations: iterations,
        cg_residuals: residuals,
        dual_values,
        dual_terminal: Field::new(mesh, x)?,
    })
}

#[cfg(test)]
mod tests {
    use std::f64::consts::PI;

    use super::*;
    use crate::sampling::{random_sine_fields, rng, SineSeries};

    fn problem(alpha: f64, n: usize, steps: usize, window: (f64, f64)) -> ControlProblem {
        let mesh = if alpha == 0.0 {
            Mesh1D::uniform(0.0, n).unwrap()
        } else {
            Mesh1D::graded(0.0, n, Mesh1D::default_grading(alpha)).unwrap()
        };
        ControlProblem::new(
            WeightSpec::new(alpha).unwrap(),
            CoefficientSpec::default(),
            Arc::new(mesh),
            TimeGrid::trapezoidal(1.0, steps).unwrap(),
            window,
        )
        .unwrap()
    }

    #[test]
    fn heat_mode_ratio_matches_closed_form() {
        let p = problem(0.0, 256, 256, (0.3, 0.6));
        let phi = Field::dirichlet_from_fn(p.mesh().clone(), |x| (PI * x).sin());
        let ratio = observability_ratio(&phi, &p).unwrap();
        let l = PI * PI;
        let num = (-2.0 * l).exp() * 0.5;
        let window = |x: f64| 0.5 * x - (2.0 * PI * x).sin() / (4.0 * PI);
        let den = (1.0 - (-2.0 * l).exp()) / (2.0 * l) * (window(0.6) - window(0.3));
        assert!(
            (ratio / (num / den) - 1.0).abs() < 1e-2,
            "{ratio} vs {}",
            num / den
        );
    }

    #[test]
    fn ratio_is_scale_invariant_and_rejects_zero() {
        let p = problem(0.5, 64, 32, (0.3, 0.6));
        let phi = random_sine_fields(p.mesh(), 5, 1, 6).pop().unwrap();
        let r1 = observability_ratio(&phi, &p).unwrap();
        let r2 = observability_ratio(&phi.scaled(-3.7), &p).unwrap();
        assert!((r1 - r2).abs() <= 1e-12 * r1);
        assert!(observability_ratio(&Field::zeros(p.mesh().clone()), &p).is_err());
    }

    #[test]
    fn time_average_heat_mode() {
        let p = problem(0.0, 128, 256, (0.3, 0.6));
        assert_eq!(
            time_average_check(&SpaceTimeField::zeros(p.mesh().clone(), *p.time_grid())),
            (0.0, 0.0)
        );
        let phi = Field::dirichlet_from_fn(p.mesh().clone(), |x| (PI * x).sin());
        let (lhs, rhs) = time_average_check(&p.backward(&phi).unwrap());
        let l = PI * PI;
        let exact_lhs = 0.5 * (-2.0 * l).exp();
        let exact_rhs = ((-0.5 * l).exp() - (-1.5 * l).exp()) / (2.0 * l);
        assert!((lhs / exact_lhs - 1.0).abs() < 1e-2);
        assert!((rhs / exact_rhs - 1.0).abs() < 1e-2);
        assert!(lhs < rhs);
    }

    #[test]
    fn control_nodes_lie_in_window() {
        let p = problem(0.5, 64, 16, (0.3, 0.6));
        let op = HumOperator::new(&p).unwrap();
        let nodes = p.mesh().nodes();
        let r = op.control_nodes();
        assert!(nodes[r.start - 1] >= 0.3 && nodes[r.end] <= 0.6);
        assert!(nodes[r.start - 2] < 0.3 && nodes[r.end + 1] > 0.6);
    }

    #[test]
    fn adjoint_is_exact_transpose() {
        let p = problem(0.5, 48, 20, (0.3, 0.6));
        let op = HumOperator::new(&p).unwrap();
        let mut r = rng(9);
        let phi = SineSeries::random(&mut r, 5).field(p.mesh().clone());
        let nc = op.control_nodes().len();
        let u: Vec<Vec<f64>> = (0..op.steps())
            .map(|_| {
                SineSeries::random(&mut r, 4)
                    .coeffs()
                    .iter()
                    .cycle()
                    .take(nc)
                    .copied()
                    .collect()
            })
            .collect();
        let lu = op.forward(&vec![0.0; p.mesh().node_count()], Some(&u));
        let lhs = op.state_inner(&lu, phi.values());
        let rhs = op.control_inner(&u, &op.adjoint(phi.values()));
        assert!((lhs - rhs).abs() <= 1e-12 * lhs.abs().max(rhs.abs()));
    }

    #[test]
    fn gramian_is_symmetric_and_nonnegative() {
        let p = problem(0.5, 64, 32, (0.3, 0.6));
        let op = HumOperator::new(&p).unwrap();
        let fields = random_sine_fields(p.mesh(), 21, 2, 6);
        let (a, b) = (fields[0].values(), fields[1].values());
        let ab = op.state_inner(&op.gramian(a), b);
        let ba = op.state_inner(a, &op.gramian(b));
        assert!((ab - ba).abs() <= 1e-10 * ab.abs());
        assert!(gramian_rayleigh_min(&p, &fields).unwrap() > 0.0);
    }

    #[test]
    fn zero_state_needs_no_control() {
        let p = problem(0.5, 32, 16, (0.3, 0.6));
        let res = hum_control(&Field::zeros(p.mesh().clone()), 1e-2, &p).unwrap();
        assert_eq!(res.cg_iterations, 0);
        assert_eq!(res.terminal_norm, 0.0);
        assert!(res.control.iter().all(Field::is_zero));
        assert!(hum_control(&Field::zeros(p.mesh().clone()), 0.0, &p).is_err());
    }

    #[test]
    fn hum_terminal_state_is_penalty_times_dual() {
        let p = problem(0.5, 64, 32, (0.3, 0.6));
        let y0 = Field::dirichlet_from_fn(p.mesh().clone(), |x| x * (1.0 - x));
        let eps = 1e-3;
        let res = hum_control(&y0, eps, &p).unwrap();
        let op = HumOperator::new(&p).unwrap();
        let phi = res.dual_terminal.values();
        let expected = eps * op.state_inner(phi, phi).sqrt();
        assert!((res.terminal_norm / expected - 1.0).abs() < 1e-6);
        assert!(res.terminal_norm < res.uncontrolled_norm);
        for w in res.cg_residuals.windows(2) {
            assert!(w[1] < w[0]);
        }
        for w in res.dual_values.windows(2) {
            assert!(w[1] <= w[0] + 1e-15 * w[0].abs());
        }
    }

    #[test]
    fn control_vanishes_outside_window_and_is_linear() {
        let p = problem(0.5, 64, 32, (0.3, 0.6));
        let y0 = Field::dirichlet_from_fn(p.mesh().clone(), |x| x * (1.0 - x));
        let a = hum_control(&y0, 1e-2, &p).unwrap();
        let b = hum_control(&y0.scaled(2.5), 1e-2, &p).unwrap();
        let nodes = p.mesh().nodes();
        let mut max = 0.0f64;
        for (fa, fb) in a.control.iter().zip(&b.control) {
            for (i, &x) in nodes.iter().enumerate() {
                if x <= 0.3 || x >= 0.6 {
                    assert_eq!(fa.values()[i], 0.0);
                }
            }
            max = max.max(fb.max_abs_diff(&fa.scaled(2.5).into_values()));
        }
        let scale = a
            .control
            .iter()
            .flat_map(|f| f.values())
            .fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(max <= 1e-7 * 2.5 * scale);
        assert!(a.control_norm() > 0.0);
    }

    #[test]
    fn terminal_norm_decreases_with_penalty() {
        let p = problem(0.5, 64, 32, (0.3, 0.6));
        let y0 = Field::dirichlet_from_fn(p.mesh().clone(), |x| x * (1.0 - x));
        let norms: Vec<f64> = [1e-1, 1e-2, 1e-3, 1e-4]
            .iter()
            .map(|&e| hum_control(&y0, e, &p).unwrap().terminal_norm)
            .collect();
        for w in norms.windows(2) {
            assert!(w[1] <= w[0]);
        }
    }

    #[test]
    fn iteration_cap_reports_convergence_error() {
        let p = problem(0.5, 64, 32, (0.3, 0.6));
        let y0 = Field::dirichlet_from_fn(p.mesh().clone(), |x| x * (1.0 - x));
        let settings = HumSettings {
            tolerance: 1e-14,
            max_iterations: 2,
        };
        match hum_control_with(&y0, 1e-4, &p, settings) {
            Err(Error::Convergence {
                iterations,
                last_iterate,
                ..
            }) => {
                assert_eq!(iterations, 2);
                assert_eq!(last_iterate.len(), p.mesh().node_count());
            }
            other => panic!("expected a convergence error, got {other:?}"),
        }
    }
}
