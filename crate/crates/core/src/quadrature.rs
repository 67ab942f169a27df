//! Exact integrals of power weights against piecewise-linear functions.
//!
//! Every weighted integral in the crate reduces to the local moments
//! `J_j = ∫_{xl}^{xr} x^β s^j dx` with `s = (x - xl) / (xr - xl)`, `j = 0, 1, 2`.
//! They are evaluated in closed form when the element touches or sits close to
//! the origin and through the binomial series of `(1 + s/τ)^β` otherwise, so
//! that neither the singularity at 0 nor cancellation between nearby powers
//! degrades the result.

/// `b^p - a^p` for `0 <= a <= b` without cancellation when `a ≈ b`.
pub fn pow_diff(a: f64, b: f64, p: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    if a <= 0.0 {
        return b.powf(p) - 0.0f64.powf(p);
    }
    a.powf(p) * (p * ((b - a) / a).ln_1p()).exp_m1()
}

/// `∫_a^b x^p dx` for `0 <= a <= b`. Infinite when the integral diverges at 0.
pub fn power_integral(a: f64, b: f64, p: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    if p == 0.0 {
        return b - a;
    }
    let q = p + 1.0;
    if q == 0.0 {
        if a == 0.0 {
            return f64::INFINITY;
        }
        return ((b - a) / a).ln_1p();
    }
    if a == 0.0 && q < 0.0 {
        return f64::INFINITY;
    }
    pow_diff(a, b, q) / q
}

const SERIES_RATIO: f64 = 2.0;
const SERIES_MAX_TERMS: usize = 400;

/// Local moments `[J0, J1, J2]` of `x^β` over `[xl, xr]`.
///
/// Moments that diverge (element at the origin with `β + j + 1 <= 0`) are
/// returned as `+∞`; callers must not multiply them by a zero coefficient.
pub fn local_moments(beta: f64, xl: f64, xr: f64) -> [f64; 3] {
    debug_assert!(xl >= 0.0 && xr > xl);
    let h = xr - xl;
    if beta == 0.0 {
        return [h, h / 2.0, h / 3.0];
    }
    if xl == 0.0 {
        let scale = h.powf(beta + 1.0);
        let m = |j: f64| {
            let q = beta + j + 1.0;
            if q <= 0.0 {
                f64::INFINITY
            } else {
                scale / q
            }
        };
        return [m(0.0), m(1.0), m(2.0)];
    }
    let tau = xl / h;
    if tau >= SERIES_RATIO {
        series_moments(beta, xl, h, tau)
    } else {
        closed_moments(beta, xl, xr, h, tau)
    }
}

// J_j = h·xl^β Σ_k C(β,k) τ^{-k} / (j + k + 1)
fn series_moments(beta: f64, xl: f64, h: f64, tau: f64) -> [f64; 3] {
    let mut sums = [0.0f64; 3];
    let mut coeff = 1.0f64;
    let inv = 1.0 / tau;
    for k in 0..SERIES_MAX_TERMS {
        let kf = k as f64;
        let mut small = true;
        for (j, s) in sums.iter_mut().enumerate() {
            let term = coeff / (j as f64 + kf + 1.0);
            *s += term;
            if term.abs() > 1e-18 * s.abs() {
                small = false;
            }
        }
        if small && k > 2 {
            break;
        }
        coeff *= (beta - kf) / (kf + 1.0) * inv;
    }
    let scale = h * xl.powf(beta);
    [sums[0] * scale, sums[1] * scale, sums[2] * scale]
}

// J_j = h^{-j} ∫_{xl}^{xr} x^β (x - xl)^j dx expanded binomially.
fn closed_moments(beta: f64, xl: f64, xr: f64, h: f64, _tau: f64) -> [f64; 3] {
    let p0 = power_integral(xl, xr, beta);
    let p1 = power_integral(xl, xr, beta + 1.0);
    let p2 = power_integral(xl, xr, beta + 2.0);
    let j0 = p0;
    let j1 = (p1 - xl * p0) / h;
    let j2 = (p2 - 2.0 * xl * p1 + xl * xl * p0) / (h * h);
    [j0, j1, j2]
}

/// `∫_{xl}^{xr} x^β u(x) v(x) dx` for linear `u`, `v` given by their end values.
pub fn weighted_product(beta: f64, xl: f64, xr: f64, u: (f64, f64), v: (f64, f64)) -> f64 {
    let j = local_moments(beta, xl, xr);
    let du = u.1 - u.0;
    let dv = v.1 - v.0;
    let mut acc = 0.0;
    let c0 = u.0 * v.0;
    if c0 != 0.0 {
        acc += c0 * j[0];
    }
    let c1 = u.0 * dv + v.0 * du;
    if c1 != 0.0 {
        acc += c1 * j[1];
    }
    let c2 = du * dv;
    if c2 != 0.0 {
        acc += c2 * j[2];
    }
    acc
}

/// `∫_{xl}^{xr} x^β u(x)² dx` for linear `u`.
pub fn weighted_square(beta: f64, xl: f64, xr: f64, u: (f64, f64)) -> f64 {
    weighted_product(beta, xl, xr, u, u).max(0.0)
}

/// Gauss–Legendre nodes and weights on `[-1, 1]`, computed by Newton iteration
/// on the Legendre recurrence. Used only by test oracles and by integrands
/// that are smooth on the element.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let nf = n as f64;
    for i in 0..n.div_ceil(2) {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * z * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            let pn = if n == 0 {
                1.0
            } else if n == 1 {
                z
            } else {
                p1
            };
            let pnm1 = if n == 1 { 1.0 } else { p0 };
            dp = nf * (z * pn - pnm1) / (z * z - 1.0);
            let dz = pn / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        nodes[i] = -z;
        nodes[n - 1 - i] = z;
        let w = 2.0 / ((1.0 - z * z) * dp * dp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}
