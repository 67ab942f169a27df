//! Power weights `w(x) = x^α`, Muckenhoupt averages, weighted norms and the
//! Hardy / Poincaré inequalities that calibrate the solvers.

use std::fmt;
use std::sync::Arc;

use serde::Serialize;

use crate::elliptic::assemble;
use crate::error::{invalid, Error, Result};
use crate::linalg::{dot, norm2};
use crate::mesh::{Field, Mesh1D};
use crate::quadrature::{local_moments, power_integral, weighted_square};

/// Degeneracy weight `w(x) = x^α` on `(0, 1)`; the degenerate boundary is `x = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WeightSpec {
    alpha: f64,
}

impl WeightSpec {
    /// Weight for the solvers: `0 <= α < 1` (`α = 0` is the non-degenerate case).
    pub fn new(alpha: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&alpha) {
            return invalid(format!(
                "weight exponent must satisfy 0 <= alpha < 1, got {alpha}"
            ));
        }
        Ok(Self { alpha })
    }

    /// Any locally integrable power, `α > -1`. Only meant for
    /// [`ap_constant_estimate`], which is also interesting outside the
    /// solver range (e.g. `α = 1` is an `A_3` weight).
    pub fn power(alpha: f64) -> Result<Self> {
        if !(alpha > -1.0) || !alpha.is_finite() {
            return invalid(format!(
                "x^alpha is not locally integrable for alpha = {alpha}"
            ));
        }
        Ok(Self { alpha })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn eval(&self, x: f64) -> f64 {
        if self.alpha == 0.0 {
            1.0
        } else {
            x.powf(self.alpha)
        }
    }

    pub fn is_degenerate(&self) -> bool {
        self.alpha > 0.0
    }
}

/// Scalar diffusion coefficient `a(x) = m(x)·w(x)` with `Λ <= m <= 1/Λ`.
#[derive(Clone)]
pub struct CoefficientSpec {
    lambda: f64,
    modulation: Option<Arc<dyn Fn(f64) -> f64 + Send + Sync>>,
}

impl fmt::Debug for CoefficientSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CoefficientSpec")
            .field("lambda", &self.lambda)
            .field("modulated", &self.modulation.is_some())
            .finish()
    }
}

impl Default for CoefficientSpec {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            modulation: None,
        }
    }
}

impl CoefficientSpec {
    /// `a = w`, `Λ = 1`.
    pub fn weight_itself() -> Self {
        Self::default()
    }

    pub fn modulated(
        lambda: f64,
        modulation: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Result<Self> {
        if !(lambda > 0.0 && lambda <= 1.0) {
            return invalid(format!(
                "ellipticity constant must lie in (0, 1], got {lambda}"
            ));
        }
        Ok(Self {
            lambda,
            modulation: Some(Arc::new(modulation)),
        })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// `m(x) = a(x) / w(x)`.
    pub fn modulation_at(&self, x: f64) -> f64 {
        self.modulation.as_ref().map_or(1.0, |m| m(x))
    }

    /// `a(x)`
    pub fn eval(&self, w: &WeightSpec, x: f64) -> f64 {
        self.modulation_at(x) * w.eval(x)
    }

    /// Two-sided bound `Λ w <= a <= w / Λ`, sampled at every node.
    pub fn validate_on(&self, mesh: &Mesh1D) -> Result<()> {
        if self.modulation.is_none() {
            return Ok(());
        }
        let (lo, hi) = (self.lambda, 1.0 / self.lambda);
        for &x in mesh.nodes() {
            let m = self.modulation_at(x);
            if !(m >= lo * (1.0 - 1e-14) && m <= hi * (1.0 + 1e-14)) {
                return invalid(format!(
                    "coefficient violates {lo} w <= a <= {hi} w at x = {x} (a/w = {m})"
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum WeightSign {
    /// `L²(Ω; w)`
    Direct,
    /// `L²(Ω; w⁻¹)`
    Inverse,
}

impl WeightSign {
    fn exponent(self, w: &WeightSpec) -> f64 {
        match self {
            WeightSign::Direct => w.alpha(),
            WeightSign::Inverse => -w.alpha(),
        }
    }
}

/// `max_K (avg_K w)(avg_K w^{-1/(p-1)})^{p-1}` over the given intervals.
///
/// Returns `+∞` when a dual average diverges (the weight is not `A_p`).
pub fn ap_constant_estimate(w: &WeightSpec, p: f64, intervals: &[(f64, f64)]) -> Result<f64> {
    if !(p > 1.0) {
        return invalid(format!("A_p exponent must exceed 1, got {p}"));
    }
    if intervals.is_empty() {
        return invalid("A_p estimate needs at least one interval");
    }
    let dual = -w.alpha() / (p - 1.0);
    let mut best = f64::NEG_INFINITY;
    for &(a, b) in intervals {
        if !(b > a) {
            return invalid(format!("interval [{a}, {b}] has no positive length"));
        }
        if a < 0.0 || b > 1.0 {
            return invalid(format!("interval [{a}, {b}] is not contained in [0, 1]"));
        }
        let len = b - a;
        let avg_w = power_integral(a, b, w.alpha()) / len;
        let avg_dual = power_integral(a, b, dual) / len;
        let value = avg_w * avg_dual.powf(p - 1.0);
        best = best.max(value);
    }
    Ok(best)
}

/// Dyadic intervals `[j 2^-l, (j+1) 2^-l]` for `l <= levels`; these contain the
/// left-anchored family `[0, 2^-l]`, which realizes the supremum for `x^α`.
pub fn dyadic_intervals(levels: u32) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    for l in 0..=levels {
        let count = 1u64 << l;
        let h = 1.0 / count as f64;
        for j in 0..count {
            out.push((j as f64 * h, (j + 1) as f64 * h));
        }
    }
    out
}

/// `[0, 2^-l]` for `l = 0..=levels`.
pub fn left_anchored_intervals(levels: u32) -> Vec<(f64, f64)> {
    (0..=levels).map(|l| (0.0, 0.5f64.powi(l as i32))).collect()
}

/// `(∫ |u|² w^{±1})^{1/2}` with exact elementwise integration.
pub fn weighted_l2_norm(u: &Field, w: &WeightSpec, sign: WeightSign) -> Result<f64> {
    weighted_l2_norm_on(u, w, sign, (f64::NEG_INFINITY, f64::INFINITY))
}

/// Weighted norm restricted to `window = (lo, hi)`; elements straddling the
/// window are clipped exactly.
pub fn weighted_l2_norm_on(
    u: &Field,
    w: &WeightSpec,
    sign: WeightSign,
    window: (f64, f64),
) -> Result<f64> {
    let sq = weighted_sq_integral(u.mesh(), u.values(), sign.exponent(w), window);
    if !sq.is_finite() {
        return invalid(format!(
            "weighted norm with exponent {} diverges at the degenerate endpoint",
            sign.exponent(w)
        ));
    }
    Ok(sq.sqrt())
}

/// `∫_window x^β u²` for nodal `u` on `mesh`.
pub(crate) fn weighted_sq_integral(mesh: &Mesh1D, u: &[f64], beta: f64, window: (f64, f64)) -> f64 {
    let (lo, hi) = window;
    let mut acc = 0.0;
    for (e, (xl, xr)) in mesh.elements().enumerate() {
        if xr <= lo || xl >= hi {
            continue;
        }
        let (ul, ur) = (u[e], u[e + 1]);
        if ul == 0.0 && ur == 0.0 {
            continue;
        }
        let a = xl.max(lo);
        let b = xr.min(hi);
        if b <= a {
            continue;
        }
        let lerp = |x: f64| ul + (ur - ul) * (x - xl) / (xr - xl);
        let (va, vb) = if a == xl && b == xr {
            (ul, ur)
        } else {
            (lerp(a), lerp(b))
        };
        acc += weighted_square(beta, a, b, (va, vb));
    }
    acc
}

/// Both sides of the weighted Hardy inequality
/// `∫ x^{α-2} v² <= 4/(1-α)² ∫ x^α (v')²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HardyReport {
    pub lhs: f64,
    pub rhs: f64,
    pub bound: f64,
}

impl HardyReport {
    pub fn ratio(&self) -> f64 {
        if self.rhs == 0.0 {
            0.0
        } else {
            self.lhs / self.rhs
        }
    }

    pub fn holds(&self, rel_tol: f64) -> bool {
        self.lhs <= self.bound * self.rhs * (1.0 + rel_tol)
    }
}

pub fn hardy_constant(alpha: f64) -> f64 {
    4.0 / ((1.0 - alpha) * (1.0 - alpha))
}

pub fn hardy_check(v: &Field, w: &WeightSpec) -> Result<HardyReport> {
    let alpha = w.alpha();
    if !(alpha > 0.0 && alpha < 1.0) {
        return invalid(format!("Hardy check needs 0 < alpha < 1, got {alpha}"));
    }
    if !v.satisfies_dirichlet() {
        return invalid("Hardy check needs v = 0 at both ends of the mesh");
    }
    let mesh = v.mesh();
    let u = v.values();
    let lhs = weighted_sq_integral(mesh, u, alpha - 2.0, (f64::NEG_INFINITY, f64::INFINITY));
    let mut rhs = 0.0;
    for (e, (xl, xr)) in mesh.elements().enumerate() {
        let d = u[e + 1] - u[e];
        if d != 0.0 {
            let h = xr - xl;
            rhs += d * d / (h * h) * local_moments(alpha, xl, xr)[0];
        }
    }
    Ok(HardyReport {
        lhs,
        rhs,
        bound: hardy_constant(alpha),
    })
}

#[derive(Debug, Clone)]
pub struct PoincareResult {
    /// Smallest `β` with `∫ a (u')² = β ∫ w u²`.
    pub beta: f64,
    /// Unit `L²(w)` eigenfunction, positive in the interior.
    pub eigenfunction: Field,
    pub iterations: usize,
}

impl PoincareResult {
    /// `C_Ω = (Λ/β)^{1/2}`, the constant in `‖u‖_{L²(w)} <= C_Ω ‖u'‖_{L²(w)}`.
    pub fn poincare_constant(&self, lambda: f64) -> f64 {
        (lambda / self.beta).sqrt()
    }
}

pub const POINCARE_TOL: f64 = 1e-10;
pub const POINCARE_MAX_ITER: usize = 500;

/// First Dirichlet eigenpair of the weighted pencil by shift-invert power
/// iteration (shift 0) with a tridiagonal factorization.
pub fn poincare_constant(
    mesh: &Arc<Mesh1D>,
    coeff: &CoefficientSpec,
    w: &WeightSpec,
) -> Result<PoincareResult> {
    let sys = assemble(mesh, coeff, w)?;
    let k = sys.stiffness.interior();
    let m = sys.mass.interior();
    let factor = k.factor()?;
    let n = k.len();

    let mut u = vec![1.0; n];
    let mut beta_old = f64::INFINITY;
    for it in 1..=POINCARE_MAX_ITER {
        let mut y = m.matvec(&u);
        factor.solve_in_place(&mut y);
        let mnorm = m.bilinear(&y, &y).sqrt();
        if !(mnorm > 0.0) || !mnorm.is_finite() {
            return Err(Error::Internal(
                "power iteration produced a null vector".into(),
            ));
        }
        for v in &mut y {
            *v /= mnorm;
        }
        u = y;
        let beta = k.bilinear(&u, &u);
        if (beta - beta_old).abs() <= POINCARE_TOL * beta {
            return Ok(PoincareResult {
                beta,
                eigenfunction: dirichlet_field(mesh, &u)?,
                iterations: it,
            });
        }
        beta_old = beta;
    }
    Err(Error::Convergence {
        method: "inverse power iteration",
        iterations: POINCARE_MAX_ITER,
        residual: {
            let ku = k.matvec(&u);
            let mu = m.matvec(&u);
            let r: Vec<f64> = ku.iter().zip(&mu).map(|(a, b)| a - beta_old * b).collect();
            norm2(&r) / dot(&ku, &ku).sqrt()
        },
        last_iterate: u,
    })
}

/// Rayleigh quotient `∫ a (u')² / ∫ w u²` of a Dirichlet field.
pub fn rayleigh_quotient(u: &Field, coeff: &CoefficientSpec, w: &WeightSpec) -> Result<f64> {
    let sys = assemble(u.mesh(), coeff, w)?;
    let num = sys.stiffness.bilinear(u.values(), u.values());
    let den = sys.mass.bilinear(u.values(), u.values());
    Ok(num / den)
}

fn dirichlet_field(mesh: &Arc<Mesh1D>, interior: &[f64]) -> Result<Field> {
    let mut values = Vec::with_capacity(interior.len() + 2);
    values.push(0.0);
    values.extend_from_slice(interior);
    values.push(0.0);
    Field::new(mesh.clone(), values)
}
