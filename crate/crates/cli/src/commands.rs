//! Experiment drivers, one per subcommand.

use std::f64::consts::PI;
use std::sync::Arc;

use anyhow::Result;
use clap::Subcommand;
use serde_json::json;

use degenlab::carleman::{carleman_report, transform_and_decompose, CarlemanParams, ReportMode};
use degenlab::control::{
    gramian_rayleigh_min, hum_control, observability_report, time_average_check, ControlProblem,
    HumOperator,
};
use degenlab::elliptic::{
    elliptic_convergence_sweep, galerkin_residual, solve_elliptic, Reference,
};
use degenlab::parabolic::{energy_check, parabolic_convergence_sweep, solve_parabolic, Source};
use degenlab::sampling::{random_nodal_field, random_sine_fields, rng};
use degenlab::weights::{
    ap_constant_estimate, dyadic_intervals, hardy_check, left_anchored_intervals,
    poincare_constant, weighted_l2_norm, weighted_l2_norm_on, WeightSign,
};
use degenlab::{CoefficientSpec, Field, Mesh1D, TimeGrid, WeightSpec};

use crate::config::ExperimentConfig;
use crate::output::{num, Outcome, Table};

/// Modes of the random sine series used as test data.
const MODES: usize = 8;
/// Relative slack for inequality checks.
const REL_TOL: f64 = 1e-8;
/// Reference refinement factor of the parabolic sweep.
const SWEEP_REFINEMENT: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Muckenhoupt A_p estimate of x^alpha on dyadic and left-anchored intervals.
    ApCheck,
    /// Weighted Hardy inequality on fixed and random Dirichlet fields.
    Hardy,
    /// Weighted Poincare constant on the full and truncated domains.
    Poincare,
    /// Elliptic solve with f = 1 against the closed-form solution.
    SolveElliptic,
    /// Truncated-domain elliptic errors over the k grid.
    EllipticSweep,
    /// Forward parabolic solve with the energy check.
    SolveParabolic,
    /// Truncated-domain parabolic errors over the k grid.
    ParabolicSweep,
    /// Carleman inequality sides for random terminal data over the s grid.
    Carleman,
    /// Observability ratios and the time-average bound for random terminal data.
    Observability,
    /// Penalized HUM null control over the epsilon ladder.
    Hum,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::ApCheck => "ap-check",
            Command::Hardy => "hardy",
            Command::Poincare => "poincare",
            Command::SolveElliptic => "solve-elliptic",
            Command::EllipticSweep => "elliptic-sweep",
            Command::SolveParabolic => "solve-parabolic",
            Command::ParabolicSweep => "parabolic-sweep",
            Command::Carleman => "carleman",
            Command::Observability => "observability",
            Command::Hum => "hum",
        }
    }

    pub fn run(self, cfg: &ExperimentConfig) -> Result<Outcome> {
        match self {
            Command::ApCheck => ap_check(cfg),
            Command::Hardy => hardy(cfg),
            Command::Poincare => poincare(cfg),
            Command::SolveElliptic => solve_elliptic_cmd(cfg),
            Command::EllipticSweep => elliptic_sweep(cfg),
            Command::SolveParabolic => solve_parabolic_cmd(cfg),
            Command::ParabolicSweep => parabolic_sweep(cfg),
            Command::Carleman => carleman(cfg),
            Command::Observability => observability(cfg),
            Command::Hum => hum(cfg),
        }
    }
}

fn weight(cfg: &ExperimentConfig) -> Result<WeightSpec> {
    Ok(WeightSpec::new(cfg.alpha)?)
}

fn mesh(cfg: &ExperimentConfig) -> Result<Arc<Mesh1D>> {
    Ok(Arc::new(Mesh1D::graded(0.0, cfg.n, cfg.grading())?))
}

fn time_grid(cfg: &ExperimentConfig) -> Result<TimeGrid> {
    Ok(TimeGrid::new(cfg.t_final, cfg.n_t, cfg.theta)?)
}

fn sweep_window(cfg: &ExperimentConfig) -> (f64, f64) {
    (cfg.sweep_window[0], cfg.sweep_window[1])
}

fn strictly_decreasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[1] < w[0])
}

/// Solution of `-(x^α u')' = 1` with zero ends.
fn unit_forcing_solution(alpha: f64) -> impl Fn(f64) -> f64 {
    move |x: f64| (x.powf(1.0 - alpha) - x.powf(2.0 - alpha)) / (2.0 - alpha)
}

fn ap_check(cfg: &ExperimentConfig) -> Result<Outcome> {
    let w = WeightSpec::power(cfg.alpha)?;
    let families = [
        ("dyadic", dyadic_intervals(cfg.levels)),
        ("left-anchored", left_anchored_intervals(cfg.levels)),
    ];
    let mut table = Table::new(&["family", "lo", "hi", "value"]);
    let mut estimates = serde_json::Map::new();
    for (name, intervals) in &families {
        estimates.insert(
            (*name).into(),
            json!(ap_constant_estimate(&w, cfg.p, intervals)?),
        );
        if *name == "left-anchored" {
            for &(lo, hi) in intervals {
                let v = ap_constant_estimate(&w, cfg.p, &[(lo, hi)])?;
                table.push(vec![(*name).into(), num(lo), num(hi), num(v)]);
            }
        }
    }
    // Every interval [0, L] gives the same average product for x^α.
    let q = cfg.alpha / (cfg.p - 1.0);
    let closed_form =
        (q < 1.0).then(|| (1.0 / (1.0 + cfg.alpha)) * (1.0 / (1.0 - q)).powf(cfg.p - 1.0));
    let dyadic = estimates["dyadic"].as_f64().unwrap_or(f64::INFINITY);
    let mut out = Outcome::new(
        json!({ "p": cfg.p, "estimates": estimates, "closed_form_left_anchored": closed_form }),
        table,
    )?;
    out.check(
        dyadic.is_finite(),
        format!("x^{} is not an A_{} weight", cfg.alpha, cfg.p),
    );
    out.check(dyadic >= 1.0 - REL_TOL, "A_p estimate below 1");
    Ok(out)
}

type NamedProfile = (&'static str, fn(f64) -> f64);

fn hardy(cfg: &ExperimentConfig) -> Result<Outcome> {
    let w = weight(cfg)?;
    let mesh = mesh(cfg)?;
    let fixed: [NamedProfile; 4] = [
        ("x(1-x)", |x| x * (1.0 - x)),
        ("sin(pi x)", |x| (PI * x).sin()),
        ("x^2(1-x)", |x| x * x * (1.0 - x)),
        ("sin(2 pi x)", |x| (2.0 * PI * x).sin()),
    ];
    let mut fields: Vec<(String, Field)> = fixed
        .iter()
        .map(|(name, f)| (name.to_string(), Field::dirichlet_from_fn(mesh.clone(), f)))
        .collect();
    let mut r = rng(cfg.seed);
    for i in 0..cfg.samples {
        fields.push((
            format!("random-{i}"),
            random_nodal_field(mesh.clone(), &mut r),
        ));
    }
    let mut table = Table::new(&["field", "lhs", "rhs", "ratio", "bound"]);
    let mut reports = Vec::new();
    let mut all_hold = true;
    for (name, v) in &fields {
        let rep = hardy_check(v, &w)?;
        all_hold &= rep.holds(REL_TOL);
        table.push(vec![
            name.clone(),
            num(rep.lhs),
            num(rep.rhs),
            num(rep.ratio()),
            num(rep.bound),
        ]);
        reports.push(json!({ "field": name, "report": rep, "ratio": rep.ratio() }));
    }
    let mut out = Outcome::new(json!({ "reports": reports }), table)?;
    out.check(all_hold, "Hardy inequality violated");
    Ok(out)
}

fn poincare(cfg: &ExperimentConfig) -> Result<Outcome> {
    let w = weight(cfg)?;
    let coeff = CoefficientSpec::default();
    let mesh = mesh(cfg)?;
    let full = poincare_constant(&mesh, &coeff, &w)?;
    let mut ks = cfg.k_grid.clone();
    ks.sort_unstable();
    ks.dedup();
    let mut table = Table::new(&["k", "x_cut", "beta", "constant"]);
    table.push(vec![
        "full".into(),
        num(mesh.x_min()),
        num(full.beta),
        num(full.poincare_constant(1.0)),
    ]);
    let mut rows = Vec::new();
    let mut betas = Vec::new();
    for &k in &ks {
        let (sub, offset) = mesh.truncated(1.0 / k as f64)?;
        let res = poincare_constant(&Arc::new(sub), &coeff, &w)?;
        let x_cut = mesh.nodes()[offset];
        table.push(vec![
            k.to_string(),
            num(x_cut),
            num(res.beta),
            num(res.poincare_constant(1.0)),
        ]);
        rows.push(
            json!({ "k": k, "x_cut": x_cut, "beta": res.beta, "iterations": res.iterations }),
        );
        betas.push(res.beta);
    }
    let mut out = Outcome::new(
        json!({ "beta_full": full.beta, "constant_full": full.poincare_constant(1.0), "truncated": rows }),
        table,
    )?;
    out.check(
        betas.iter().all(|&b| b >= full.beta - 1e-6),
        "truncated Poincare eigenvalue below the full-domain one",
    );
    out.check(
        betas.windows(2).all(|p| p[1] <= p[0]),
        "truncated Poincare eigenvalues increase with k",
    );
    Ok(out)
}

fn solve_elliptic_cmd(cfg: &ExperimentConfig) -> Result<Outcome> {
    let w = weight(cfg)?;
    let coeff = CoefficientSpec::default();
    let mesh = mesh(cfg)?;
    let f = Field::from_fn(mesh.clone(), |_| 1.0);
    let u = solve_elliptic(&f, &coeff, &w)?;
    let exact = unit_forcing_solution(cfg.alpha);
    let mut table = Table::new(&["x", "u", "exact"]);
    let mut max_err = 0.0f64;
    for (&x, &v) in mesh.nodes().iter().zip(u.values()) {
        let e = exact(x);
        max_err = max_err.max((v - e).abs());
        table.push(vec![num(x), num(v), num(e)]);
    }
    let residual = galerkin_residual(&u, &f, &coeff, &w)?;
    let out = Outcome::new(
        json!({ "forcing": "1", "max_nodal_error": max_err, "galerkin_residual": residual }),
        table,
    )?;
    Ok(out)
}

fn elliptic_sweep(cfg: &ExperimentConfig) -> Result<Outcome> {
    let w = weight(cfg)?;
    let mesh = mesh(cfg)?;
    let exact = unit_forcing_solution(cfg.alpha);
    let rows = elliptic_convergence_sweep(
        &|_| 1.0,
        &cfg.k_grid,
        sweep_window(cfg),
        &mesh,
        &CoefficientSpec::default(),
        &w,
        Reference::ClosedForm(&exact),
    )?;
    let mut table = Table::new(&["k", "x_cut", "error_full", "error_omega"]);
    for r in &rows {
        table.push(vec![
            r.k.to_string(),
            num(r.x_cut),
            num(r.error_full),
            num(r.error_omega),
        ]);
    }
    let errors: Vec<f64> = rows.iter().map(|r| r.error_omega).collect();
    let mut out = Outcome::new(
        json!({ "forcing": "1", "reference": "closed form", "rows": rows }),
        table,
    )?;
    out.check(
        strictly_decreasing(&errors),
        "omega error not strictly decreasing in k",
    );
    Ok(out)
}

fn solve_parabolic_cmd(cfg: &ExperimentConfig) -> Result<Outcome> {
    let w = weight(cfg)?;
    let coeff = CoefficientSpec::default();
    let mesh = mesh(cfg)?;
    let grid = time_grid(cfg)?;
    let phi0 = Field::dirichlet_from_fn(mesh.clone(), |x| (PI * x).sin());
    let f = Source::steady(|_| 1.0);
    let traj = solve_parabolic(&phi0, &f, &w, &coeff, &mesh, &grid)?;
    let energy = energy_check(&traj, &phi0, &f, &w, &coeff)?;
    let flat = WeightSpec::new(0.0)?;
    let mut table = Table::new(&["t", "norm_l2", "norm_omega"]);
    for (n, frame) in traj.frames().iter().enumerate() {
        let full = weighted_l2_norm(frame, &flat, WeightSign::Direct)?;
        let omega = weighted_l2_norm_on(frame, &flat, WeightSign::Direct, cfg.window())?;
        table.push(vec![num(grid.time(n)), num(full), num(omega)]);
    }
    let mut out = Outcome::new(
        json!({ "initial": "sin(pi x)", "source": "1", "energy": energy }),
        table,
    )?;
    out.check(energy.bound_margin >= 0.0, "energy bound violated");
    Ok(out)
}

fn parabolic_sweep(cfg: &ExperimentConfig) -> Result<Outcome> {
    let w = weight(cfg)?;
    let mesh = mesh(cfg)?;
    let grid = time_grid(cfg)?;
    let rows = parabolic_convergence_sweep(
        &|x: f64| (PI * x).sin(),
        &Source::steady(|_| 1.0),
        &cfg.k_grid,
        sweep_window(cfg),
        &mesh,
        &grid,
        &CoefficientSpec::default(),
        &w,
        SWEEP_REFINEMENT,
    )?;
    let mut table = Table::new(&["k", "x_cut", "error_full", "error_omega"]);
    for r in &rows {
        table.push(vec![
            r.k.to_string(),
            num(r.x_cut),
            num(r.error_full),
            num(r.error_omega),
        ]);
    }
    let errors: Vec<f64> = rows.iter().map(|r| r.error_omega).collect();
    let mut out = Outcome::new(
        json!({
            "initial": "sin(pi x)",
            "source": "1",
            "reference_refinement": SWEEP_REFINEMENT,
            "rows": rows,
        }),
        table,
    )?;
    out.check(
        strictly_decreasing(&errors),
        "omega error not strictly decreasing in k",
    );
    Ok(out)
}

fn control_problem(cfg: &ExperimentConfig) -> Result<ControlProblem> {
    Ok(ControlProblem::new(
        weight(cfg)?,
        CoefficientSpec::default(),
        mesh(cfg)?,
        time_grid(cfg)?,
        cfg.window(),
    )?)
}

fn carleman(cfg: &ExperimentConfig) -> Result<Outcome> {
    let problem = control_problem(cfg)?;
    let data = random_sine_fields(problem.mesh(), cfg.seed, cfg.samples, MODES);
    let mut s_grid = cfg.s_grid.clone();
    s_grid.sort_by(f64::total_cmp);
    s_grid.dedup();
    let params: Vec<CarlemanParams> = s_grid
        .iter()
        .map(|&s| CarlemanParams::new(cfg.alpha, cfg.window(), cfg.t_final, cfg.gamma, s))
        .collect::<degenlab::Result<_>>()?;
    let mut table = Table::new(&["sample", "s", "ln_lhs", "ln_rhs", "empirical_c"]);
    let mut reports = Vec::new();
    let mut residuals = Vec::new();
    let mut max_c = 0.0f64;
    let mut all_finite = true;
    for (i, phi_t) in data.iter().enumerate() {
        let traj = problem.backward(phi_t)?;
        for p in &params {
            let rep = carleman_report(&traj, &Source::Zero, p, ReportMode::Full)?;
            let c = rep.empirical_c.unwrap_or(f64::INFINITY);
            all_finite &= c.is_finite() && !rep.violation;
            max_c = max_c.max(c);
            table.push(vec![
                i.to_string(),
                num(p.s()),
                num(rep.lhs_total.ln()),
                num(rep.rhs_total.ln()),
                num(c),
            ]);
            reports.push(json!({ "sample": i, "report": rep }));
        }
        if i == 0 {
            for p in &params {
                let d = transform_and_decompose(&traj, &Source::Zero, p)?;
                residuals.push(json!({ "s": p.s(), "residual": d.residual }));
            }
        }
    }
    let eta = params[0].eta();
    let mut out = Outcome::new(
        json!({
            "eta": { "r1": eta.r1(), "r2": eta.r2(), "sup": eta.sup(), "argmax": eta.argmax() },
            "max_empirical_c": max_c,
            "decomposition_residuals_sample_0": residuals,
            "reports": reports,
        }),
        table,
    )?;
    out.check(
        all_finite,
        "Carleman right-hand side vanished or produced a non-finite ratio",
    );
    Ok(out)
}

fn observability(cfg: &ExperimentConfig) -> Result<Outcome> {
    let problem = control_problem(cfg)?;
    let data = random_sine_fields(problem.mesh(), cfg.seed, cfg.samples, MODES);
    let report = observability_report(&data, &problem)?;
    let mut table = Table::new(&["sample", "ratio", "norm0_sq", "time_average"]);
    let mut average_ok = true;
    for (i, (phi_t, ratio)) in data.iter().zip(&report.ratios).enumerate() {
        let (lhs, rhs) = time_average_check(&problem.backward(phi_t)?);
        average_ok &= lhs <= rhs * (1.0 + REL_TOL);
        table.push(vec![i.to_string(), num(*ratio), num(lhs), num(rhs)]);
    }
    let violation = report.violation;
    let mut out = Outcome::new(&report, table)?;
    out.check(
        !violation,
        "observation integral vanished for a nonzero datum",
    );
    out.check(average_ok, "time-average bound violated");
    Ok(out)
}

fn hum(cfg: &ExperimentConfig) -> Result<Outcome> {
    let problem = control_problem(cfg)?;
    let op = HumOperator::new(&problem)?;
    let directions = random_sine_fields(problem.mesh(), cfg.seed, cfg.samples.max(2), MODES);
    let (a, b) = (directions[0].values(), directions[1].values());
    let ab = op.state_inner(&op.gramian(a), b);
    let ba = op.state_inner(a, &op.gramian(b));
    let asymmetry = ((ab - ba) / ab.abs().max(ba.abs())).abs();
    let rayleigh_min = gramian_rayleigh_min(&problem, &directions)?;

    let y0 = Field::dirichlet_from_fn(problem.mesh().clone(), |x| x * (1.0 - x));
    let mut eps = cfg.epsilons.clone();
    eps.sort_by(|x, y| y.total_cmp(x));
    eps.dedup();
    let mut table = Table::new(&[
        "epsilon",
        "terminal_norm",
        "control_norm",
        "iterations",
        "final_residual",
    ]);
    let mut runs = Vec::new();
    let mut norms = Vec::new();
    let mut uncontrolled = 0.0;
    for &e in &eps {
        let res = hum_control(&y0, e, &problem)?;
        uncontrolled = res.uncontrolled_norm;
        let last = *res.cg_residuals.last().unwrap();
        table.push(vec![
            num(e),
            num(res.terminal_norm),
            num(res.control_norm()),
            res.cg_iterations.to_string(),
            num(last),
        ]);
        runs.push(json!({
            "epsilon": e,
            "terminal_norm": res.terminal_norm,
            "control_norm": res.control_norm(),
            "cg_iterations": res.cg_iterations,
            "cg_residuals": res.cg_residuals,
            "dual_values": res.dual_values,
        }));
        norms.push(res.terminal_norm);
    }
    let nodes = op.control_nodes();
    let mut out = Outcome::new(
        json!({
            "initial_state": "x(1-x)",
            "uncontrolled_norm": uncontrolled,
            "gramian_asymmetry": asymmetry,
            "gramian_rayleigh_min": rayleigh_min,
            "control_nodes": [nodes.start, nodes.end],
            "runs": runs,
        }),
        table,
    )?;
    out.check(asymmetry <= 1e-8, "Gramian is not symmetric to 1e-8");
    out.check(
        norms.windows(2).all(|w| w[1] <= w[0]),
        "terminal norm increases as epsilon decreases",
    );
    out.check(rayleigh_min > 0.0, "Gramian Rayleigh quotient not positive");
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_form_matches_half_power_case() {
        let u = unit_forcing_solution(0.5);
        let x: f64 = 0.3;
        assert!((u(x) - (x.sqrt() - x.powf(1.5)) / 1.5).abs() < 1e-15);
        assert_eq!(u(1.0), 0.0);
    }

    #[test]
    fn names_are_kebab_case() {
        assert_eq!(Command::SolveElliptic.name(), "solve-elliptic");
        assert_eq!(Command::ApCheck.name(), "ap-check");
    }
}
