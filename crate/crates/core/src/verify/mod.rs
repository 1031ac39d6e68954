//! Grid certificates for the inequalities the construction relies on.
//!
//! Every certificate is deterministic: the same parameters and grid give
//! bit-identical reports.

mod norms;
mod reports;

pub use norms::*;
pub use reports::*;

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::drift::h_profile;
use crate::error::{Error, Result};
use crate::subsolution::{g, neg_laplacian_ratio, transport_margin};

/// Tolerance for closed-form inequality grids.
pub const TOL_CLOSED_FORM: f64 = 1e-12;
/// Tolerance for finite-difference residuals.
pub const TOL_FD: f64 = 1e-6;

/// Outcome of one certificate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificateReport {
    pub id: String,
    pub params: serde_json::Value,
    pub region: String,
    pub worst_margin: f64,
    pub tol: f64,
    pub resolution: String,
    pub pass: bool,
    /// The certified constant, when the certificate produces one.
    pub value: Option<f64>,
    pub details: serde_json::Value,
}

impl CertificateReport {
    fn new(id: &str, params: serde_json::Value, region: String, worst_margin: f64, tol: f64, resolution: String) -> Self {
        Self {
            id: id.to_string(),
            params,
            region,
            worst_margin,
            tol,
            resolution,
            pass: worst_margin >= -tol,
            value: None,
            details: serde_json::Value::Null,
        }
    }
}

/// Central-difference Hessian `(f_rr, f_rz, f_zz)` of the transport margin.
pub fn subsolution_hessian(n: usize, alpha: f64, r: f64, z: f64) -> [f64; 3] {
    let h = 1e-4;
    let f = |a: f64, b: f64| transport_margin(a, b, n, alpha);
    let f0 = f(r, z);
    let frr = (f(r + h, z) - 2.0 * f0 + f(r - h, z)) / (h * h);
    let fzz = (f(r, z + h) - 2.0 * f0 + f(r, z - h)) / (h * h);
    let frz = (f(r + h, z + h) - f(r + h, z - h) - f(r - h, z + h) + f(r - h, z - h)) / (4.0 * h * h);
    [frr, frz, fzz]
}

/// Polar grid of the disk `|(r-1, z)| <= radius` including the centre.
fn disk_min<F: Fn(f64, f64) -> f64>(f: F, radius: f64, n_rho: usize, n_phi: usize) -> (f64, (f64, f64)) {
    let mut worst = f64::INFINITY;
    let mut at = (1.0, 0.0);
    for i in 0..=n_rho {
        let rho = radius * i as f64 / n_rho as f64;
        let m = if i == 0 { 1 } else { n_phi };
        for j in 0..m {
            let phi = 2.0 * PI * j as f64 / n_phi as f64;
            let (r, z) = (1.0 + rho * phi.cos(), rho * phi.sin());
            let v = f(r, z);
            if v < worst {
                worst = v;
                at = (r, z);
            }
        }
    }
    (worst, at)
}

/// Certifies `f >= 0` on `|(r-1, z)| <= r0` for each candidate and returns
/// the largest candidate that passes as `value`.
pub fn certify_subsolution_f(n: usize, alpha: f64, r0_candidates: &[f64], grid: (usize, usize)) -> Result<CertificateReport> {
    let mut rows = Vec::new();
    let mut best: Option<f64> = None;
    let mut best_margin = f64::NEG_INFINITY;
    let mut worst_overall = f64::INFINITY;
    for &r0 in r0_candidates {
        if !(r0 > 0.0 && r0 < 0.25) {
            return Err(Error::OutOfRange {
                what: "r0 candidate",
                value: r0,
                range: "(0, 1/4)",
            });
        }
        let (m, at) = disk_min(|r, z| transport_margin(r, z, n, alpha), r0, grid.0, grid.1);
        let ok = m >= -TOL_CLOSED_FORM;
        rows.push(json!({"r0": r0, "min_f": m, "argmin": [at.0, at.1], "certified": ok}));
        worst_overall = worst_overall.min(m);
        if ok && best.map_or(true, |b| r0 > b) {
            best = Some(r0);
            best_margin = m;
        }
    }
    let hess = subsolution_hessian(n, alpha, 1.0, 0.0);
    let mut rep = CertificateReport::new(
        "subsolution_f",
        json!({"n": n, "alpha": alpha}),
        "|(r-1, z)| <= r0".into(),
        if best.is_some() { best_margin } else { worst_overall },
        TOL_CLOSED_FORM,
        format!("{}x{} polar", grid.0, grid.1),
    );
    rep.pass = best.is_some();
    rep.value = best;
    rep.details = json!({"candidates": rows, "hessian_at_centre": hess});
    Ok(rep)
}

/// `beta(zeta, nu; xi) = (1 + xi nu)(1 + zeta)^{n-3-a} - (1 - xi nu)(1 - zeta)^{n-3-a}`.
pub fn travel_beta(zeta: f64, nu: f64, xi: f64, n: usize, alpha: f64) -> f64 {
    let k = n as f64 - 3.0 - alpha;
    (1.0 + xi * nu) * (1.0 + zeta).powf(k) - (1.0 - xi * nu) * (1.0 - zeta).powf(k)
}

/// Largest aperture for which the cone stays inside the middle branch
/// `|z| <= r/2`, where the velocity formula behind `beta` is valid.
pub const NU_MAX: f64 = 0.5;

/// Certified subsolution radius for `n = 3`, `alpha = 0.05` (largest
/// candidate on the 0.01 ladder below 1/4).
pub const R0: f64 = 0.24;

/// Certified aperture for `n = 3, 4` at `alpha = 0.05`.
pub const NU0: f64 = 0.5;

/// Certifies `beta >= 0` over `zeta in [0, nu]`, `xi in [(1+nu^2(n-2))^{-1/2}, 1]`.
pub fn certify_travel_beta(n: usize, alpha: f64, nu_candidates: &[f64], grid: (usize, usize)) -> Result<CertificateReport> {
    let mut rows = Vec::new();
    let mut best: Option<f64> = None;
    let mut worst_overall = f64::INFINITY;
    let mut best_margin = f64::NEG_INFINITY;
    for &nu in nu_candidates {
        if !(nu > 0.0 && nu < 1.0) {
            return Err(Error::OutOfRange {
                what: "nu candidate",
                value: nu,
                range: "(0, 1)",
            });
        }
        let xi_lo = (1.0 + nu * nu * (n as f64 - 2.0)).powf(-0.5);
        let mut m = f64::INFINITY;
        let mut at = (0.0, 0.0);
        for i in 0..=grid.0 {
            let zeta = nu * i as f64 / grid.0 as f64;
            for j in 0..=grid.1 {
                let xi = xi_lo + (1.0 - xi_lo) * j as f64 / grid.1 as f64;
                let b = travel_beta(zeta, nu, xi, n, alpha);
                if b < m {
                    m = b;
                    at = (zeta, xi);
                }
            }
        }
        let in_range = nu <= NU_MAX;
        let ok = in_range && m >= -TOL_CLOSED_FORM;
        worst_overall = worst_overall.min(m);
        rows.push(json!({
            "nu": nu, "min_beta": m, "argmin_zeta": at.0, "argmin_xi": at.1,
            "minimizer_at_zeta_eq_nu": at.0 == nu, "in_middle_branch": in_range, "certified": ok
        }));
        if ok && best.map_or(true, |b| nu > b) {
            best = Some(nu);
            best_margin = m;
        }
    }
    let mut rep = CertificateReport::new(
        "travel_beta",
        json!({"n": n, "alpha": alpha}),
        "zeta in [0, nu], xi in [(1+nu^2(n-2))^{-1/2}, 1]".into(),
        if best.is_some() { best_margin } else { worst_overall },
        TOL_CLOSED_FORM,
        format!("{}x{} (zeta, xi)", grid.0, grid.1),
    );
    rep.pass = best.is_some();
    rep.value = best;
    rep.details = json!({ "candidates": rows });
    Ok(rep)
}

/// Result of the `c0` search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct C0Estimate {
    pub c0: f64,
    /// `(r, z, theta)` of the maximizer.
    pub argmax: [f64; 3],
    /// The same maximum on a grid refined by 2 in every direction.
    pub refined: f64,
}

fn c0_on_grid(n: usize, r0: f64, grid: (usize, usize, usize)) -> (f64, [f64; 3]) {
    let (n_rho, n_phi, n_theta) = grid;
    let mut best = f64::NEG_INFINITY;
    let mut at = [1.0, 0.0, 0.0];
    // rho in [0, 1), theta in [0, pi/8); the ratio is even in theta
    for i in 0..n_rho {
        let rho = i as f64 / n_rho as f64;
        let m = if i == 0 { 1 } else { n_phi };
        for j in 0..m {
            let phi = 2.0 * PI * j as f64 / n_phi as f64;
            let r = 1.0 + r0 * rho * phi.cos();
            let z = r0 * rho * phi.sin();
            for k in 0..n_theta {
                let theta = PI / 8.0 * k as f64 / n_theta as f64;
                let v = neg_laplacian_ratio(r, z, theta, n, r0);
                if v.is_finite() && v > best {
                    best = v;
                    at = [r, z, theta];
                }
            }
        }
    }
    (best, at)
}

/// `c0 = max (-Delta gbar) / gbar` over the support of `gbar`.
pub fn certify_c0(n: usize, r0: f64, grid: (usize, usize, usize)) -> Result<C0Estimate> {
    if !(r0 > 0.0 && r0 < 0.25) {
        return Err(Error::UncertifiedRadius(r0));
    }
    let (c0, argmax) = c0_on_grid(n, r0, grid);
    let (refined, _) = c0_on_grid(n, r0, (2 * grid.0, 2 * grid.1, 2 * grid.2));
    Ok(C0Estimate { c0, argmax, refined })
}

/// Report form of [`certify_c0`]: passes when refinement changes `c0` by
/// less than 1%.
pub fn c0_report(n: usize, r0: f64, grid: (usize, usize, usize)) -> Result<CertificateReport> {
    let est = certify_c0(n, r0, grid)?;
    let drift = (est.refined - est.c0).abs() / est.c0.abs();
    let mut rep = CertificateReport::new(
        "c0",
        json!({"n": n, "r0": r0}),
        "support of gbar".into(),
        0.01 - drift,
        0.0,
        format!("{}x{}x{} (rho, phi, theta), refined x2", grid.0, grid.1, grid.2),
    );
    rep.value = Some(est.c0.max(est.refined));
    rep.details = serde_json::to_value(est)?;
    Ok(rep)
}

/// `int_0^t h(s)^{-2} ds = (1 - h(t)^alpha) / alpha`.
pub fn inverse_square_profile_integral(t: f64, alpha: f64) -> Result<f64> {
    let h = h_profile(t, alpha)?;
    Ok((1.0 - h.powf(alpha)) / alpha)
}

/// Residual of `d_t g + w . grad g` with `w = -(r, z) / h^{2+alpha}`.
pub fn transport_residual(r: f64, z: f64, theta: f64, t: f64, r0: f64, alpha: f64) -> Result<f64> {
    let ht = h_profile(t, alpha)?;
    let e = 2e-7;
    let gf = |r: f64, z: f64, t: f64| g(r, z, theta, t, r0, alpha);
    let dt = if t >= e {
        (gf(r, z, t + e)? - gf(r, z, t - e)?) / (2.0 * e)
    } else {
        (-3.0 * gf(r, z, t)? + 4.0 * gf(r, z, t + e)? - gf(r, z, t + 2.0 * e)?) / (2.0 * e)
    };
    let dr = (gf(r + e, z, t)? - gf(r - e, z, t)?) / (2.0 * e);
    let dz = (gf(r, z + e, t)? - gf(r, z - e, t)?) / (2.0 * e);
    let scale = ht.powf(2.0 + alpha);
    Ok(dt - (r * dr + z * dz) / scale)
}

/// Largest transport residual over `points` `(r, z, theta)` at time `t`.
pub fn check_transport_identity(t: f64, points: &[(f64, f64, f64)], r0: f64, alpha: f64) -> Result<f64> {
    let t_end = 1.0 / (2.0 + alpha);
    if !(t >= 0.0 && t < t_end) {
        return Err(Error::OutOfRange {
            what: "t",
            value: t,
            range: "[0, 1/(2+alpha))",
        });
    }
    let mut worst: f64 = 0.0;
    for &(r, z, th) in points {
        worst = worst.max(transport_residual(r, z, th, t, r0, alpha)?.abs());
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn hessian_at_centre() {
        for (n, a) in [(3, 0.05), (3, 0.1), (4, 0.1)] {
            let [rr, rz, zz] = subsolution_hessian(n, a, 1.0, 0.0);
            assert_relative_eq!(rr, 4.0 + 2.0 * a, max_relative = 1e-3);
            assert!(rz.abs() < 1e-3);
            assert_relative_eq!(zz, 2.0 * (n as f64 - 2.0 - a), max_relative = 1e-3);
        }
    }

    #[test]
    fn subsolution_certificate_on_small_grid() {
        let rep = certify_subsolution_f(3, 0.05, &[0.05, 0.1, 0.24], (50, 64)).unwrap();
        assert!(rep.pass);
        assert_eq!(rep.value, Some(0.24));
        assert!(certify_subsolution_f(3, 0.05, &[0.3], (10, 10)).is_err());
    }

    #[test]
    fn beta_structure() {
        // beta(0, nu) = 2 xi nu
        assert_relative_eq!(travel_beta(0.0, 0.3, 0.8, 4, 0.1), 0.48, max_relative = 1e-14);
        // n = 3: decreasing in zeta
        let a = travel_beta(0.1, 0.3, 0.9, 3, 0.05);
        let b = travel_beta(0.2, 0.3, 0.9, 3, 0.05);
        assert!(b < a);
        let rep = certify_travel_beta(3, 0.05, &[0.1, 0.5, 0.7], (50, 20)).unwrap();
        assert_eq!(rep.value, Some(0.5));
        let rows = rep.details["candidates"].as_array().unwrap();
        assert!(rows[0]["minimizer_at_zeta_eq_nu"].as_bool().unwrap());
        assert!(!rows[2]["certified"].as_bool().unwrap());
    }

    #[test]
    fn c0_is_finite_and_decreases_with_r0() {
        let a = certify_c0(3, 0.1, (40, 24, 16)).unwrap();
        let b = certify_c0(3, 0.2, (40, 24, 16)).unwrap();
        assert!(a.c0.is_finite() && b.c0.is_finite());
        assert!(b.c0 < a.c0);
        assert!((a.refined - a.c0).abs() < 0.05 * a.c0);
        assert!(a.c0 >= 4.0 / 0.01 + 128.0 / (PI * PI) - 1e-9);
        assert!(certify_c0(3, 0.3, (4, 4, 4)).is_err());
    }

    #[test]
    fn profile_integral_closed_form() {
        let a = 0.1;
        let t_end = 1.0 / 2.1;
        assert_relative_eq!(inverse_square_profile_integral(t_end, a).unwrap(), 1.0 / a, max_relative = 1e-14);
        // numerical quadrature cross-check on [0, 0.3]
        let rule = crate::quad::Rule::new(20).unwrap();
        let q: f64 = rule.panel(0.0, 0.3).map(|(s, w)| w * h_profile(s, a).unwrap().powi(-2)).sum();
        assert_relative_eq!(q, inverse_square_profile_integral(0.3, a).unwrap(), max_relative = 1e-12);
    }

    #[test]
    fn transport_identity_small_residual() {
        let r0 = 0.2;
        let a = 0.1;
        for t in [0.0, 0.2, 0.4] {
            let h = h_profile(t, a).unwrap();
            let pts = [(h, 0.0, 0.0), (h * 1.1, h * 0.05, 0.1), (h * 0.9, -h * 0.1, -0.2)];
            let res = check_transport_identity(t, &pts, r0, a).unwrap();
            assert!(res <= TOL_FD, "{t} {res}");
            let c = transport_residual(h, 0.0, 0.0, t, r0, a).unwrap().abs();
            assert!(c <= 1e-8, "{t} {c}");
            assert_eq!(transport_residual(0.3 * h, 0.0, 0.0, t, r0, a).unwrap(), 0.0);
        }
        let h = h_profile(0.2, a).unwrap();
        assert!(transport_residual(h, 0.0, 0.0, 0.2, r0, a).unwrap().abs() <= 1e-8);
    }
}
