//! Mixed Cartesian x hyperspherical coordinates on R^n.
//!
//! A point is `(r, z, theta, phi_1, .., phi_{n-3})` with
//!
//! ```text
//! x_1 = z
//! x_2 = r cos(theta)
//! x_3 = r sin(theta) cos(phi_1)
//! ...
//! x_n = r sin(theta) sin(phi_1) .. sin(phi_{n-3})
//! ```
//!
//! Every field in this crate is independent of the `phi` angles, so only
//! `(r, z, theta)` is stored. The differential operators act on such
//! functions and are evaluated by central differences.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Base step for first derivatives; scaled by `max(1, |(r, z)|)`.
pub const H_FD: f64 = 1e-5;

/// Base step for second derivatives. Central second differences at `H_FD`
/// lose ~6 digits to cancellation, so these use a wider stencil.
pub const H_FD2: f64 = 1e-4;

/// Relative size of `d/dtheta f` tolerated at a pole before the cotangent
/// term is declared non-removable.
const POLE_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixedPoint {
    pub r: f64,
    pub z: f64,
    pub theta: f64,
}

/// Wraps an angle into `[-pi/2, 3pi/2)`.
pub fn wrap_theta(theta: f64) -> f64 {
    let shifted = (theta + PI / 2.0).rem_euclid(2.0 * PI);
    // rem_euclid can return exactly 2pi for tiny negative inputs
    let shifted = if shifted >= 2.0 * PI { 0.0 } else { shifted };
    shifted - PI / 2.0
}

impl MixedPoint {
    pub fn new(r: f64, z: f64, theta: f64) -> Result<Self> {
        if !(r >= 0.0) {
            return Err(Error::OutOfRange {
                what: "r",
                value: r,
                range: "[0, inf)",
            });
        }
        Ok(Self {
            r,
            z,
            theta: wrap_theta(theta),
        })
    }

    /// Point on the `theta = 0` half-plane.
    pub fn rz(r: f64, z: f64) -> Self {
        Self { r, z, theta: 0.0 }
    }

    pub fn radius(&self) -> f64 {
        self.r.hypot(self.z)
    }

    fn shifted(&self, dr: f64, dz: f64, dtheta: f64) -> Self {
        Self {
            r: self.r + dr,
            z: self.z + dz,
            theta: self.theta + dtheta,
        }
    }
}

/// Parameters shared by every drift construction.
///
/// `epsilon = 0` selects the untruncated field; `big_c` only enters the
/// elliptic drift `C u_eps`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriftParams {
    pub n: usize,
    pub lambda: f64,
    pub alpha: f64,
    pub epsilon: f64,
    pub big_c: f64,
}

impl Default for DriftParams {
    fn default() -> Self {
        Self {
            n: 3,
            lambda: 0.5,
            alpha: 0.1,
            epsilon: 0.0,
            big_c: 1.0,
        }
    }
}

impl DriftParams {
    pub fn new(n: usize, lambda: f64, alpha: f64) -> Result<Self> {
        let p = Self {
            n,
            lambda,
            alpha,
            ..Self::default()
        };
        p.validate()?;
        Ok(p)
    }

    pub fn with_epsilon(mut self, epsilon: f64) -> Self {
        self.epsilon = epsilon;
        self
    }

    pub fn with_big_c(mut self, big_c: f64) -> Self {
        self.big_c = big_c;
        self
    }

    /// `n - 2 - alpha`, the exponent of the core stream function.
    pub fn core_exponent(&self) -> f64 {
        self.n as f64 - 2.0 - self.alpha
    }

    /// Every violated constraint, so the caller can report them all at once.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        let n = self.n as f64;
        if self.n < 3 {
            out.push(format!("n = {} must be at least 3", self.n));
        }
        if !(self.lambda > 0.0 && self.lambda < n - 2.0) {
            out.push(format!(
                "lambda = {} must lie in (0, n-2) = (0, {})",
                self.lambda,
                n - 2.0
            ));
        }
        let alpha_max = self.lambda / (n - self.lambda);
        if !(self.alpha > 0.0 && self.alpha < alpha_max) {
            out.push(format!(
                "alpha = {} must lie in (0, lambda/(n-lambda)) = (0, {})",
                self.alpha, alpha_max
            ));
        }
        if !(self.epsilon >= 0.0) {
            out.push(format!("epsilon = {} must be >= 0", self.epsilon));
        }
        if !(self.big_c >= 0.0) {
            out.push(format!("C = {} must be >= 0", self.big_c));
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidParams(v))
        }
    }
}

/// Maps a mixed-coordinate point to Cartesian coordinates in R^n.
///
/// `extra_angles` holds `phi_1 .. phi_{n-3}`.
pub fn to_cartesian(p: &MixedPoint, extra_angles: &[f64], n: usize) -> Result<Vec<f64>> {
    if n < 3 || extra_angles.len() != n - 3 {
        return Err(Error::DimensionMismatch {
            n,
            expected: n.saturating_sub(3),
            got: extra_angles.len(),
        });
    }
    let mut x = Vec::with_capacity(n);
    x.push(p.z);
    x.push(p.r * p.theta.cos());
    // running product r sin(theta) sin(phi_1) .. sin(phi_{k-1})
    let mut tail = p.r * p.theta.sin();
    for phi in extra_angles {
        x.push(tail * phi.cos());
        tail *= phi.sin();
    }
    x.push(tail);
    Ok(x)
}

fn fd_step(p: &MixedPoint, base: f64) -> f64 {
    base * p.radius().max(1.0)
}

/// Radial derivative; switches to a one-sided stencil when the symmetric one
/// would cross the axis.
fn d_r<F: Fn(&MixedPoint) -> f64>(f: &F, p: &MixedPoint, h: f64) -> f64 {
    if p.r >= h {
        (f(&p.shifted(h, 0.0, 0.0)) - f(&p.shifted(-h, 0.0, 0.0))) / (2.0 * h)
    } else {
        let f0 = f(p);
        let f1 = f(&p.shifted(h, 0.0, 0.0));
        let f2 = f(&p.shifted(2.0 * h, 0.0, 0.0));
        (-3.0 * f0 + 4.0 * f1 - f2) / (2.0 * h)
    }
}

/// Gradient in the `(e_r, e_theta, e_z)` frame: `(d_r f, (1/r) d_theta f, d_z f)`.
pub fn gradient_mixed<F: Fn(&MixedPoint) -> f64>(f: F, p: &MixedPoint) -> Result<[f64; 3]> {
    if p.r == 0.0 {
        return Err(Error::AxisSingularity);
    }
    let h = fd_step(p, H_FD);
    let dr = d_r(&f, p, h);
    let dth = (f(&p.shifted(0.0, 0.0, h)) - f(&p.shifted(0.0, 0.0, -h))) / (2.0 * h);
    let dz = (f(&p.shifted(0.0, h, 0.0)) - f(&p.shifted(0.0, -h, 0.0))) / (2.0 * h);
    Ok([dr, dth / p.r, dz])
}

fn is_pole(theta: f64) -> bool {
    let t = wrap_theta(theta);
    t.abs() < 1e-12 || (t - PI).abs() < 1e-12
}

/// Laplacian of a phi-independent function in dimension `n`:
///
/// `r^{2-n} d_r(r^{n-2} d_r f) + (n-3)/(r^2 tan theta) d_theta f + r^{-2} d_theta^2 f + d_z^2 f`.
///
/// At the poles `theta in {0, pi}` the cotangent term is replaced by its
/// limit `(n-3) d_theta^2 f`, which requires `d_theta f = 0` there.
pub fn laplacian_mixed<F: Fn(&MixedPoint) -> f64>(f: F, p: &MixedPoint, n: usize) -> Result<f64> {
    if p.r == 0.0 {
        return Err(Error::AxisSingularity);
    }
    let h = fd_step(p, H_FD2);
    let f0 = f(p);
    let second = |dr: f64, dz: f64, dt: f64| {
        (f(&p.shifted(dr, dz, dt)) - 2.0 * f0 + f(&p.shifted(-dr, -dz, -dt))) / (h * h)
    };

    let frr = if p.r >= h {
        second(h, 0.0, 0.0)
    } else {
        let f1 = f(&p.shifted(h, 0.0, 0.0));
        let f2 = f(&p.shifted(2.0 * h, 0.0, 0.0));
        let f3 = f(&p.shifted(3.0 * h, 0.0, 0.0));
        (2.0 * f0 - 5.0 * f1 + 4.0 * f2 - f3) / (h * h)
    };
    let fr = d_r(&f, p, h);
    let fzz = second(0.0, h, 0.0);
    let ftt = second(0.0, 0.0, h);
    let r2 = p.r * p.r;
    let nf = n as f64;

    let mut lap = frr + (nf - 2.0) / p.r * fr + ftt / r2 + fzz;
    if n > 3 {
        if is_pole(p.theta) {
            let ft = (f(&p.shifted(0.0, 0.0, h)) - f(&p.shifted(0.0, 0.0, -h))) / (2.0 * h);
            let scale = f0.abs().max(ftt.abs() * h).max(1.0);
            if ft.abs() > POLE_TOL * scale {
                return Err(Error::PoleSingularity {
                    theta: p.theta,
                    derivative: ft,
                });
            }
            lap += (nf - 3.0) * ftt / r2;
        } else {
            let ft = (f(&p.shifted(0.0, 0.0, h)) - f(&p.shifted(0.0, 0.0, -h))) / (2.0 * h);
            lap += (nf - 3.0) * p.theta.cos() / p.theta.sin() * ft / r2;
        }
    }
    Ok(lap)
}
