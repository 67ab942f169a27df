//! θ-scheme time stepping for `∂_t φ - (a φ_x)_x = f` with Dirichlet ends,
//! its time-reversed (backward) form and the truncated problems on `(1/k, 1)`.

use std::borrow::Cow;
use std::fmt;
use std::sync::Arc;

use serde::Serialize;

use crate::elliptic::{check_window, mass_matrix, stiffness_matrix};
use crate::error::{invalid, Result};
use crate::linalg::{LdlFactor, SymTridiag};
use crate::mesh::{same_mesh, Field, Mesh1D};
use crate::weights::{poincare_constant, weighted_sq_integral, CoefficientSpec, WeightSpec};

/// Uniform partition of `[0, T]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TimeGrid {
    t_final: f64,
    steps: usize,
    theta: f64,
}

pub const MIN_TIME_STEPS: usize = 8;

impl TimeGrid {
    pub fn new(t_final: f64, steps: usize, theta: f64) -> Result<Self> {
        if !(t_final > 0.0) || !t_final.is_finite() {
            return invalid(format!("final time must be positive, got {t_final}"));
        }
        if steps < MIN_TIME_STEPS {
            return invalid(format!(
                "need at least {MIN_TIME_STEPS} time steps, got {steps}"
            ));
        }
        if !(0.5..=1.0).contains(&theta) {
            return invalid(format!("theta must lie in [1/2, 1], got {theta}"));
        }
        Ok(Self {
            t_final,
            steps,
            theta,
        })
    }

    pub fn trapezoidal(t_final: f64, steps: usize) -> Result<Self> {
        Self::new(t_final, steps, 0.5)
    }

    pub fn implicit(t_final: f64, steps: usize) -> Result<Self> {
        Self::new(t_final, steps, 1.0)
    }

    pub fn t_final(&self) -> f64 {
        self.t_final
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn dt(&self) -> f64 {
        self.t_final / self.steps as f64
    }

    pub fn time(&self, n: usize) -> f64 {
        if n == self.steps {
            self.t_final
        } else {
            n as f64 * self.dt()
        }
    }

    pub fn times(&self) -> Vec<f64> {
        (0..=self.steps).map(|n| self.time(n)).collect()
    }

    /// `t_n + θ dt`, where the source of step `n` is sampled.
    pub fn stage_time(&self, n: usize) -> f64 {
        (n as f64 + self.theta) * self.dt()
    }

    pub fn with_steps(&self, steps: usize) -> Result<Self> {
        Self::new(self.t_final, steps, self.theta)
    }
}

/// Right-hand side of the evolution equation.
#[derive(Clone, Default)]
pub enum Source {
    #[default]
    Zero,
    /// `f(x, t)`, sampled at the nodes and at the stage time of each step.
    Function(Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>),
    /// Nodal values for each step `n = 0..n_t`, constant over `(t_n, t_{n+1})`.
    Stepwise(Vec<Vec<f64>>),
}

impl fmt::Debug for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Source::Zero => f.write_str("Zero"),
            Source::Function(_) => f.write_str("Function(..)"),
            Source::Stepwise(v) => write!(f, "Stepwise({} steps)", v.len()),
        }
    }
}

impl Source {
    pub fn function(f: impl Fn(f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        Source::Function(Arc::new(f))
    }

    /// Time-independent source `f(x)`.
    pub fn steady(f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        Source::Function(Arc::new(move |x, _| f(x)))
    }

    pub fn is_zero(&self) -> bool {
        match self {
            Source::Zero => true,
            Source::Function(_) => false,
            Source::Stepwise(v) => v.iter().all(|s| s.iter().all(|&x| x == 0.0)),
        }
    }

    fn validate(&self, mesh: &Mesh1D, grid: &TimeGrid) -> Result<()> {
        if let Source::Stepwise(v) = self {
            if v.len() != grid.steps() {
                return invalid(format!(
                    "stepwise source has {} steps, time grid has {}",
                    v.len(),
                    grid.steps()
                ));
            }
            if v.iter().any(|s| s.len() != mesh.node_count()) {
                return invalid("stepwise source does not match the mesh");
            }
        }
        Ok(())
    }

    /// Nodal values used by step `n`; `None` for the zero source.
    pub fn nodal(&self, mesh: &Mesh1D, grid: &TimeGrid, n: usize) -> Option<Cow<'_, [f64]>> {
        match self {
            Source::Zero => None,
            Source::Function(f) => {
                let t = grid.stage_time(n);
                Some(Cow::Owned(mesh.nodes().iter().map(|&x| f(x, t)).collect()))
            }
            Source::Stepwise(v) => Some(Cow::Borrowed(&v[n])),
        }
    }

    /// Source of the forward problem in `τ = T - t` for the backward equation
    /// `∂_t φ + (a φ_x)_x = g`, i.e. `-g(x, T - τ)`.
    fn reversed(&self, grid: &TimeGrid) -> Source {
        match self {
            Source::Zero => Source::Zero,
            Source::Function(g) => {
                let g = g.clone();
                let t_final = grid.t_final();
                Source::Function(Arc::new(move |x, tau| -g(x, t_final - tau)))
            }
            Source::Stepwise(v) => Source::Stepwise(
                v.iter()
                    .rev()
                    .map(|s| s.iter().map(|x| -x).collect())
                    .collect(),
            ),
        }
    }

    /// Nodal restriction to the nodes from `offset` on.
    fn restricted(&self, offset: usize) -> Source {
        match self {
            Source::Stepwise(v) => {
                Source::Stepwise(v.iter().map(|s| s[offset..].to_vec()).collect())
            }
            other => other.clone(),
        }
    }
}

/// Trajectory `φ(·, t_n)`, `n = 0..=n_t`.
#[derive(Debug, Clone)]
pub struct SpaceTimeField {
    mesh: Arc<Mesh1D>,
    time_grid: TimeGrid,
    frames: Vec<Field>,
}

impl SpaceTimeField {
    pub fn new(mesh: Arc<Mesh1D>, time_grid: TimeGrid, frames: Vec<Field>) -> Result<Self> {
        if frames.len() != time_grid.steps() + 1 {
            return invalid(format!(
                "trajectory has {} frames, expected {}",
                frames.len(),
                time_grid.steps() + 1
            ));
        }
        if frames.iter().any(|f| !same_mesh(f.mesh(), &mesh)) {
            return invalid("trajectory frame lives on a different mesh");
        }
        if !frames.iter().all(Field::satisfies_dirichlet) {
            return invalid("trajectory frame violates the Dirichlet conditions");
        }
        Ok(Self {
            mesh,
            time_grid,
            frames,
        })
    }

    pub fn zeros(mesh: Arc<Mesh1D>, time_grid: TimeGrid) -> Self {
        let frames = vec![Field::zeros(mesh.clone()); time_grid.steps() + 1];
        Self {
            mesh,
            time_grid,
            frames,
        }
    }

    pub fn mesh(&self) -> &Arc<Mesh1D> {
        &self.mesh
    }

    pub fn time_grid(&self) -> &TimeGrid {
        &self.time_grid
    }

    pub fn frames(&self) -> &[Field] {
        &self.frames
    }

    pub fn frame(&self, n: usize) -> &Field {
        &self.frames[n]
    }

    pub fn last(&self) -> &Field {
        self.frames.last().unwrap()
    }

    pub fn is_zero(&self) -> bool {
        self.frames.iter().all(Field::is_zero)
    }

    /// `(∫_0^T ∫_window x^β φ²)^{1/2}`, trapezoidal in time.
    pub fn weighted_l2_norm_on(&self, beta: f64, window: (f64, f64)) -> f64 {
        let per_frame: Vec<f64> = self
            .frames
            .iter()
            .map(|f| weighted_sq_integral(&self.mesh, f.values(), beta, window))
            .collect();
        trapezoid(&per_frame, self.time_grid.dt()).sqrt()
    }
}

pub(crate) fn trapezoid(values: &[f64], dt: f64) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    dt * (values[1..n - 1].iter().sum::<f64>() + 0.5 * (values[0] + values[n - 1]))
}

/// One θ-step `(M + θ dt K) φ^{n+1} = (M - (1-θ) dt K) φ^n + dt F^n` on the
/// interior nodes, `M` the unweighted mass and `K` the weighted stiffness.
pub struct ThetaStepper {
    grid: TimeGrid,
    mass: SymTridiag,
    lhs: LdlFactor,
    rhs: SymTridiag,
}

impl ThetaStepper {
    pub fn new(
        mesh: &Mesh1D,
        coeff: &CoefficientSpec,
        w: &WeightSpec,
        grid: TimeGrid,
    ) -> Result<Self> {
        coeff.validate_on(mesh)?;
        let mass = mass_matrix(mesh, 0.0);
        let k = stiffness_matrix(mesh, coeff, w).interior();
        let m = mass.interior();
        let dt = grid.dt();
        let theta = grid.theta();
        let lhs = m.combine(1.0, &k, theta * dt).factor()?;
        let rhs = m.combine(1.0, &k, -(1.0 - theta) * dt);
        Ok(Self {
            grid,
            mass,
            lhs,
            rhs,
        })
    }

    pub fn time_grid(&self) -> &TimeGrid {
        &self.grid
    }

    /// Unweighted mass on all nodes.
    pub(crate) fn mass(&self) -> &SymTridiag {
        &self.mass
    }

    /// Factor of `M + θ dt K` on the interior nodes.
    pub(crate) fn lhs(&self) -> &LdlFactor {
        &self.lhs
    }

    /// `M - (1-θ) dt K` on the interior nodes.
    pub(crate) fn rhs(&self) -> &SymTridiag {
        &self.rhs
    }

    /// Advance the full nodal vector `phi` (zero ends) by one step.
    pub fn step(&self, phi: &[f64], source: Option<&[f64]>) -> Vec<f64> {
        let n = phi.len();
        let mut next = vec![0.0; n];
        let interior = &mut next[1..n - 1];
        self.rhs.matvec_into(&phi[1..n - 1], interior);
        if let Some(f) = source {
            let load = self.mass.matvec(f);
            let dt = self.grid.dt();
            for (r, l) in interior.iter_mut().zip(&load[1..n - 1]) {
                *r += dt * l;
            }
        }
        self.lhs.solve_in_place(interior);
        next
    }

    pub fn run(&self, mesh: &Arc<Mesh1D>, phi0: &Field, source: &Source) -> Result<SpaceTimeField> {
        source.validate(mesh, &self.grid)?;
        let mut frames = Vec::with_capacity(self.grid.steps() + 1);
        frames.push(phi0.clone());
        let mut phi = phi0.values().to_vec();
        for n in 0..self.grid.steps() {
            let f = source.nodal(mesh, &self.grid, n);
            phi = self.step(&phi, f.as_deref());
            frames.push(Field::new(mesh.clone(), phi.clone())?);
        }
        SpaceTimeField::new(mesh.clone(), self.grid, frames)
    }
}

fn check_initial(phi: &Field, mesh: &Arc<Mesh1D>) -> Result<()> {
    if !same_mesh(phi.mesh(), mesh) {
        return invalid("initial datum lives on a different mesh");
    }
    if !phi.satisfies_dirichlet() {
        return invalid("initial datum violates the Dirichlet conditions");
    }
    Ok(())
}

/// Forward problem `∂_t φ - (a φ_x)_x = f`, `φ(0) = phi0`.
pub fn solve_parabolic(
    phi0: &Field,
    f: &Source,
    w: &WeightSpec,
    coeff: &CoefficientSpec,
    mesh: &Arc<Mesh1D>,
    time_grid: &TimeGrid,
) -> Result<SpaceTimeField> {
    check_initial(phi0, mesh)?;
    ThetaStepper::new(mesh, coeff, w, *time_grid)?.run(mesh, phi0, f)
}

/// Backward problem `∂_t φ + (a φ_x)_x = g`, `φ(T) = phi_t`.
pub fn solve_backward(
    phi_t: &Field,
    g: &Source,
    w: &WeightSpec,
    coeff: &CoefficientSpec,
    mesh: &Arc<Mesh1D>,
    time_grid: &TimeGrid,
) -> Result<SpaceTimeField> {
    check_initial(phi_t, mesh)?;
    let reversed = g.reversed(time_grid);
    let forward = solve_parabolic(phi_t, &reversed, w, coeff, mesh, time_grid)?;
    let mut frames = forward.frames;
    frames.reverse();
    Ok(SpaceTimeField {
        mesh: forward.mesh,
        time_grid: forward.time_grid,
        frames,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Direction {
    Forward,
    Backward,
}

#[allow(clippy::too_many_arguments)]
fn solve_truncated_impl(
    datum: &Field,
    f: &Source,
    k: usize,
    w: &WeightSpec,
    coeff: &CoefficientSpec,
    mesh: &Arc<Mesh1D>,
    time_grid: &TimeGrid,
    direction: Direction,
) -> Result<SpaceTimeField> {
    if k < 2 {
        return invalid(format!("truncation index k must be >= 2, got {k}"));
    }
    check_initial(datum, mesh)?;
    f.validate(mesh, time_grid)?;
    let (sub, offset) = mesh.truncated(1.0 / k as f64)?;
    let sub = Arc::new(sub);
    let sub_datum = Field::dirichlet_from_fn(sub.clone(), |_| 0.0);
    let mut values = sub_datum.into_values();
    let last = values.len() - 1;
    values[1..last].copy_from_slice(&datum.values()[offset + 1..offset + last]);
    let sub_datum = Field::new(sub.clone(), values)?;
    let sub_f = f.restricted(offset);
    let traj = match direction {
        Direction::Forward => solve_parabolic(&sub_datum, &sub_f, w, coeff, &sub, time_grid)?,
        Direction::Backward => solve_backward(&sub_datum, &sub_f, w, coeff, &sub, time_grid)?,
    };
    let frames = traj
        .frames
        .into_iter()
        .map(|fr| {
            let mut v = vec![0.0; offset];
            v.extend_from_slice(fr.values());
            Field::new(mesh.clone(), v)
        })
        .collect::<Result<Vec<_>>>()?;
    SpaceTimeField::new(mesh.clone(), *time_grid, frames)
}

/// Forward problem on `Ω_k = (x_k, 1)` (`x_k` the largest node `<= 1/k`),
/// initial datum restricted nodally, every frame extended by zero.
pub fn solve_parabolic_truncated(
    phi0: &Field,
    f: &Source,
    k: usize,
    w: &WeightSpec,
    coeff: &CoefficientSpec,
    mesh: &Arc<Mesh1D>,
    time_grid: &TimeGrid,
) -> Result<SpaceTimeField> {
    solve_truncated_impl(phi0, f, k, w, coeff, mesh, time_grid, Direction::Forward)
}

/// Backward counterpart of [`solve_parabolic_truncated`].
pub fn solve_backward_truncated(
    phi_t: &Field,
    g: &Source,
    k: usize,
    w: &WeightSpec,
    coeff: &CoefficientSpec,
    mesh: &Arc<Mesh1D>,
    time_grid: &TimeGrid,
) -> Result<SpaceTimeField> {
    solve_truncated_impl(phi_t, g, k, w, coeff, mesh, time_grid, Direction::Backward)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EnergyReport {
    /// `|½‖φ(T)‖² - ½‖φ₀‖² + ∫∫ a φ_x² - ∫∫ f φ|` with the θ-stage quadrature.
    pub identity_residual: f64,
    /// `(θ - ½) Σ_n ‖φ^{n+1} - φ^n‖²`, the exact discrete defect of the identity.
    pub numerical_dissipation: f64,
    /// `min_τ` of `½‖φ₀‖² + C_Ω²/(2Λ) ∫∫ f² w⁻¹ - ½‖φ(τ)‖² - (Λ/2) ∫_0^τ∫ w φ_x²`.
    pub bound_margin: f64,
}

/// Discrete energy identity and a priori bound for a forward trajectory.
pub fn energy_check(
    traj: &SpaceTimeField,
    phi0: &Field,
    f: &Source,
    w: &WeightSpec,
    coeff: &CoefficientSpec,
) -> Result<EnergyReport> {
    let mesh = traj.mesh();
    let grid = traj.time_grid();
    if !same_mesh(phi0.mesh(), mesh) {
        return invalid("initial datum and trajectory live on different meshes");
    }
    if phi0.values() != traj.frame(0).values() {
        return invalid("initial datum does not match the first frame");
    }
    f.validate(mesh, grid)?;
    coeff.validate_on(mesh)?;

    let mass = mass_matrix(mesh, 0.0);
    let k_a = stiffness_matrix(mesh, coeff, w);
    let k_w = stiffness_matrix(mesh, &CoefficientSpec::weight_itself(), w);
    let beta = poincare_constant(mesh, coeff, w)?.beta;
    let (dt, theta) = (grid.dt(), grid.theta());
    let all = (f64::NEG_INFINITY, f64::INFINITY);

    let half_norm = |v: &[f64]| 0.5 * mass.bilinear(v, v);
    let e0 = half_norm(phi0.values());

    let mut diffusion = 0.0;
    let mut work = 0.0;
    let mut defect = 0.0;
    let mut source_norm = 0.0;
    let mut lhs_along = Vec::with_capacity(grid.steps());
    let mut dissipation_w = 0.0;
    for n in 0..grid.steps() {
        let (a, b) = (traj.frame(n).values(), traj.frame(n + 1).values());
        let stage: Vec<f64> = a
            .iter()
            .zip(b)
            .map(|(u, v)| (1.0 - theta) * u + theta * v)
            .collect();
        let jump: Vec<f64> = b.iter().zip(a).map(|(v, u)| v - u).collect();
        diffusion += dt * k_a.bilinear(&stage, &stage);
        dissipation_w += dt * k_w.bilinear(&stage, &stage);
        defect += (theta - 0.5) * mass.bilinear(&jump, &jump);
        if let Some(fv) = f.nodal(mesh, grid, n) {
            work += dt * mass.bilinear(&fv, &stage);
            source_norm += dt * weighted_sq_integral(mesh, &fv, -w.alpha(), all);
        }
        lhs_along.push(half_norm(b) + 0.5 * coeff.lambda() * dissipation_w);
    }
    let e_final = half_norm(traj.last().values());
    let rhs = e0 + source_norm / (2.0 * beta);
    let lhs_max = lhs_along.into_iter().fold(e0, f64::max);
    Ok(EnergyReport {
        identity_residual: (e_final - e0 + diffusion - work).abs(),
        numerical_dissipation: defect,
        bound_margin: rhs - lhs_max,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ParabolicSweepRow {
    pub k: usize,
    pub x_cut: f64,
    /// `L²(Ω × (0, T); w)` distance to the reference trajectory.
    pub error_full: f64,
    /// `L²(ω × (0, T); w)` distance to the reference trajectory.
    pub error_omega: f64,
}

/// Truncated forward solves against a full-domain solve on the mesh refined
/// `reference_factor` times (sampled back at the coarse nodes).
#[allow(clippy::too_many_arguments)]
pub fn parabolic_convergence_sweep(
    phi0: &(dyn Fn(f64) -> f64 + Sync),
    f: &Source,
    ks: &[usize],
    omega: (f64, f64),
    mesh: &Arc<Mesh1D>,
    time_grid: &TimeGrid,
    coeff: &CoefficientSpec,
    w: &WeightSpec,
    reference_factor: usize,
) -> Result<Vec<ParabolicSweepRow>> {
    check_window(omega)?;
    if ks.is_empty() {
        return invalid("sweep needs at least one k");
    }
    if matches!(f, Source::Stepwise(_)) {
        return invalid("convergence sweep needs a source given as a function of (x, t)");
    }
    let fine = Arc::new(mesh.refined(reference_factor)?);
    let fine_traj = solve_parabolic(
        &Field::dirichlet_from_fn(fine.clone(), phi0),
        f,
        w,
        coeff,
        &fine,
        time_grid,
    )?;
    let reference: Vec<Vec<f64>> = fine_traj
        .frames()
        .iter()
        .map(|fr| {
            fr.values()
                .iter()
                .step_by(reference_factor)
                .copied()
                .collect()
        })
        .collect();

    let coarse0 = Field::dirichlet_from_fn(mesh.clone(), phi0);
    let mut ks = ks.to_vec();
    ks.sort_unstable();
    ks.dedup();
    let all = (f64::NEG_INFINITY, f64::INFINITY);
    let mut rows = Vec::with_capacity(ks.len());
    for k in ks {
        let traj = solve_parabolic_truncated(&coarse0, f, k, w, coeff, mesh, time_grid)?;
        let (mut full, mut local) = (Vec::new(), Vec::new());
        for (fr, r) in traj.frames().iter().zip(&reference) {
            let d: Vec<f64> = fr.values().iter().zip(r).map(|(a, b)| a - b).collect();
            full.push(weighted_sq_integral(mesh, &d, w.alpha(), all));
            local.push(weighted_sq_integral(mesh, &d, w.alpha(), omega));
        }
        rows.push(ParabolicSweepRow {
            k,
            x_cut: mesh.nodes()[mesh.cut_index(1.0 / k as f64)],
            error_full: trapezoid(&full, time_grid.dt()).sqrt(),
            error_omega: trapezoid(&local, time_grid.dt()).sqrt(),
        });
    }
    Ok(rows)
}
