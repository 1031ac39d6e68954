//! The bump `eta`, the moving subsolution `g` and the functions used to
//! certify it.

use std::f64::consts::PI;

use crate::drift::h_profile;
use crate::error::Result;

/// `(eta, eta', eta'')` at `s`.
///
/// `1 - s^2` on `|s| <= 1/4`, `exp(|s|/(|s|-1))` on `1/2 <= |s| < 1`, zero
/// beyond, and on `[1/4, 1/2]` the quintic matching value and two derivatives
/// of both neighbours.
pub fn eta(s: f64) -> (f64, f64, f64) {
    let a = s.abs();
    let sign = if s < 0.0 { -1.0 } else { 1.0 };
    let (v, d1, d2) = if a <= 0.25 {
        (1.0 - a * a, -2.0 * a, -2.0)
    } else if a < 0.5 {
        bridge(a)
    } else if a < 1.0 {
        let m = a - 1.0;
        let e = (a / m).exp();
        let m2 = m * m;
        (e, -e / m2, e * (1.0 / (m2 * m2) + 2.0 / (m2 * m)))
    } else {
        (0.0, 0.0, 0.0)
    };
    (v, sign * d1, d2)
}

/// Monomial coefficients (in `t = (s - 1/4) / (1/4)`) of the bridge.
fn bridge_coefficients() -> [f64; 6] {
    const BASIS: [[f64; 6]; 6] = [
        [1.0, 0.0, 0.0, -10.0, 15.0, -6.0],
        [0.0, 1.0, 0.0, -6.0, 8.0, -3.0],
        [0.0, 0.0, 0.5, -1.5, 1.5, -0.5],
        [0.0, 0.0, 0.0, 10.0, -15.0, 6.0],
        [0.0, 0.0, 0.0, -4.0, 7.0, -3.0],
        [0.0, 0.0, 0.0, 0.5, -1.0, 0.5],
    ];
    let l = 0.25;
    let e = (-1.0f64).exp();
    let w = [15.0 / 16.0, -0.5 * l, -2.0 * l * l, e, -4.0 * e * l, 0.0];
    let mut c = [0.0; 6];
    for (wj, row) in w.iter().zip(BASIS.iter()) {
        for k in 0..6 {
            c[k] += wj * row[k];
        }
    }
    c
}

fn bridge(a: f64) -> (f64, f64, f64) {
    let c = bridge_coefficients();
    let l = 0.25;
    let t = (a - 0.25) / l;
    let mut v = 0.0;
    let mut d1 = 0.0;
    let mut d2 = 0.0;
    for k in (0..6).rev() {
        v = v * t + c[k];
        if k >= 1 {
            d1 = d1 * t + k as f64 * c[k];
        }
        if k >= 2 {
            d2 = d2 * t + (k * (k - 1)) as f64 * c[k];
        }
    }
    (v, d1 / l, d2 / (l * l))
}

/// `phi(r, z) = eta(|(r-1, z)| / r0)`.
pub fn phi(r: f64, z: f64, r0: f64) -> f64 {
    eta((r - 1.0).hypot(z) / r0).0
}

/// `g(r, z, theta, t) = phi(r/h, z/h) eta(8 theta / pi)`, with `theta` read
/// modulo `2 pi` into `(-pi, pi]`.
pub fn g(r: f64, z: f64, theta: f64, t: f64, r0: f64, alpha: f64) -> Result<f64> {
    let h = h_profile(t, alpha)?;
    if h <= 0.0 {
        return Ok(0.0);
    }
    Ok(phi(r / h, z / h, r0) * eta(8.0 * centered_angle(theta) / PI).0)
}

/// Angle in `(-pi, pi]`.
pub fn centered_angle(theta: f64) -> f64 {
    let t = (theta + PI).rem_euclid(2.0 * PI) - PI;
    if t <= -PI {
        t + 2.0 * PI
    } else {
        t
    }
}

/// Initial datum `g(., 0) - g(mirror, 0)` with the mirror `theta -> pi - theta`.
pub fn antisymmetric_g(r: f64, z: f64, theta: f64, t: f64, r0: f64, alpha: f64) -> Result<f64> {
    Ok(g(r, z, theta, t, r0, alpha)? - g(r, z, PI - theta, t, r0, alpha)?)
}

/// The transport margin whose sign certifies the subsolution property:
/// `f(r,z) = -(r-z-1)/(2(r+z)^{a+3-n}) - (r+z-1)/(2(r-z)^{a+3-n}) + r^{n-1}(r-1) + z^2 r^{n-2}`.
pub fn transport_margin(r: f64, z: f64, n: usize, alpha: f64) -> f64 {
    let k = alpha + 3.0 - n as f64;
    let nf = n as f64;
    -(r - z - 1.0) / (2.0 * (r + z).powf(k)) - (r + z - 1.0) / (2.0 * (r - z).powf(k))
        + r.powf(nf - 1.0) * (r - 1.0)
        + z * z * r.powf(nf - 2.0)
}

/// `-Delta gbar / gbar` in closed form for
/// `gbar = eta(|(r-1,z)|/r0) eta(8 theta/pi)`, inside the support.
///
/// At the poles the cotangent term takes its limit `(n-3) d_theta^2`.
pub fn neg_laplacian_ratio(r: f64, z: f64, theta: f64, n: usize, r0: f64) -> f64 {
    let nf = n as f64;
    let d = (r - 1.0).hypot(z);
    let rho = d / r0;
    let (e, e1, e2) = eta(rho);
    // eta'(rho)/rho -> eta''(0) at the centre
    let e1_over_rho = if rho > 0.0 { e1 / rho } else { e2 };
    let radial = (e2 + e1_over_rho) / (r0 * r0) + (nf - 2.0) * (r - 1.0) / r * e1_over_rho / (r0 * r0);

    let s = 8.0 * theta / PI;
    let (te, te1, te2) = eta(s);
    let cot_term = if n == 3 {
        0.0
    } else if theta == 0.0 {
        (nf - 3.0) * 64.0 / (PI * PI) * te2
    } else {
        (nf - 3.0) * 8.0 / PI * te1 / theta.tan()
    };
    let angular = (64.0 / (PI * PI) * te2 + cot_term) / (r * r);
    -(radial / e + angular / te)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mixedcoord::{laplacian_mixed, MixedPoint};
    use approx::assert_relative_eq;

    #[test]
    fn eta_branches_join_smoothly() {
        for knot in [0.25, 0.5] {
            let lo = eta(knot - 1e-12);
            let hi = eta(knot + 1e-12);
            assert_relative_eq!(lo.0, hi.0, epsilon = 1e-10);
            assert_relative_eq!(lo.1, hi.1, epsilon = 1e-9);
            assert_relative_eq!(lo.2, hi.2, epsilon = 1e-8);
        }
        assert_eq!(eta(0.0).0, 1.0);
        assert_eq!(eta(1.0).0, 0.0);
        assert_eq!(eta(-0.3), (eta(0.3).0, -eta(0.3).1, eta(0.3).2));
    }

    #[test]
    fn eta_is_strictly_decreasing() {
        let mut prev = eta(0.0).0;
        // exp(s/(s-1)) underflows past s ~ 0.9986
        for i in 1..9_900 {
            let s = i as f64 / 10_000.0;
            let (v, d1, _) = eta(s);
            assert!(v < prev, "{s}");
            assert!(d1 < 0.0, "{s}");
            prev = v;
        }
    }

    #[test]
    fn eta_derivatives_match_differences() {
        let h = 1e-6;
        for s in [0.1, 0.3, 0.45, 0.7, 0.9] {
            let (_, d1, d2) = eta(s);
            let fd1 = (eta(s + h).0 - eta(s - h).0) / (2.0 * h);
            let fd2 = (eta(s + h).1 - eta(s - h).1) / (2.0 * h);
            assert_relative_eq!(d1, fd1, max_relative = 1e-6);
            assert_relative_eq!(d2, fd2, epsilon = 1e-5, max_relative = 1e-5);
        }
    }

    #[test]
    fn margin_vanishes_at_centre() {
        for (n, a) in [(3, 0.05), (3, 0.1), (4, 0.1)] {
            assert_eq!(transport_margin(1.0, 0.0, n, a), 0.0);
        }
    }

    #[test]
    fn initial_datum_values() {
        let r0 = 0.2;
        assert_eq!(antisymmetric_g(1.0, 0.0, 0.0, 0.0, r0, 0.1).unwrap(), 1.0);
        assert_eq!(antisymmetric_g(1.0, 0.0, PI, 0.0, r0, 0.1).unwrap(), -1.0);
        assert_eq!(antisymmetric_g(1.0, 0.0, PI / 2.0, 0.0, r0, 0.1).unwrap(), 0.0);
        assert_eq!(antisymmetric_g(1.0, 0.0, -PI / 2.0, 0.0, r0, 0.1).unwrap(), 0.0);
    }

    #[test]
    fn closed_form_laplacian_matches_mixed_operator() {
        let r0 = 0.2;
        for n in [3, 4] {
            for &(r, z, th) in &[(1.05, 0.03, 0.1), (0.9, -0.1, -0.2), (1.0, 0.0, 0.05), (1.12, 0.02, 0.3)] {
                let gbar = |p: &MixedPoint| eta((p.r - 1.0).hypot(p.z) / r0).0 * eta(8.0 * centered_angle(p.theta) / PI).0;
                let p = MixedPoint::new(r, z, th).unwrap();
                let lap = laplacian_mixed(gbar, &p, n).unwrap();
                let ratio = neg_laplacian_ratio(r, z, th, n, r0);
                assert_relative_eq!(-lap / gbar(&p), ratio, max_relative = 1e-4, epsilon = 1e-3);
            }
        }
        let centre = neg_laplacian_ratio(1.0, 0.0, 0.0, 3, r0);
        assert_relative_eq!(centre, 4.0 / (r0 * r0) + 128.0 / (PI * PI), max_relative = 1e-14);
    }
}
