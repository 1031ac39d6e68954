//! Stream functions and the divergence-free drifts they generate.
//!
//! All fields are built from a scalar `Psi(r, z)` through
//! `(u_r, u_z) = (-d_z Psi, d_r Psi) / r^{n-2}`, so the weighted divergence
//! `d_r(r^{n-2} u_r) + d_z(r^{n-2} u_z)` vanishes identically. Derivatives
//! are propagated with dual numbers rather than finite differences.
//!
//! On `z >= 0` the core stream function is
//!
//! ```text
//! Psi_s = r^{n-1} P + A Q,   P = rho((4z - 2r)/r),   Q = rho((3r - 4z)/r),
//! A = (r + z)^{n-2-alpha} - (r - z)^{n-2-alpha},
//! ```
//!
//! which reproduces the three cones and both interpolation bands, and it is
//! extended oddly to `z < 0`.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::dual::Dual;
use crate::error::{Error, Result};
use crate::mixedcoord::{DriftParams, MixedPoint};

/// Exponent in the log-domain smoothstep beyond which `rho` is flat to
/// double precision.
const SMOOTHSTEP_CLAMP: f64 = 700.0;

/// C-infinity step: 0 for `s <= 0`, 1 for `s >= 1`, and
/// `sigma(s) / (sigma(s) + sigma(1 - s))` with `sigma(t) = exp(-1/t)` between.
pub fn smoothstep(s: f64) -> f64 {
    smoothstep_with_derivative(s).0
}

/// `(rho(s), rho'(s))`.
pub fn smoothstep_with_derivative(s: f64) -> (f64, f64) {
    if s <= 0.0 {
        return (0.0, 0.0);
    }
    if s >= 1.0 {
        return (1.0, 0.0);
    }
    // rho = 1 / (1 + e^g)
    let g = 1.0 / s - 1.0 / (1.0 - s);
    if g > SMOOTHSTEP_CLAMP {
        return (0.0, 0.0);
    }
    if g < -SMOOTHSTEP_CLAMP {
        return (1.0, 0.0);
    }
    let e = g.exp();
    let rho = 1.0 / (1.0 + e);
    let one_minus = e / (1.0 + e);
    let dg = -1.0 / (s * s) - 1.0 / ((1.0 - s) * (1.0 - s));
    (rho, -rho * one_minus * dg)
}

fn smooth(s: Dual) -> Dual {
    let (f, df) = smoothstep_with_derivative(s.v);
    s.chain(f, df)
}

/// Smooth cutoff equal to 1 on `[0,2] x [-2,2]` and 0 outside `[0,3] x [-3,3]`.
pub fn domain_cutoff(r: f64, z: f64) -> f64 {
    (1.0 - smoothstep(r - 2.0)) * (1.0 - smoothstep(z.abs() - 2.0))
}

/// Cutoff as a dual number; `z` is taken to be non-negative.
fn cutoff_dual(r: Dual, z: Dual) -> Dual {
    let one = Dual::cst(1.0);
    (one - smooth(r - Dual::cst(2.0))) * (one - smooth(z - Dual::cst(2.0)))
}

/// Velocity sample `(u_r, u_z)` in the mixed frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VelocityRZ {
    pub u_r: f64,
    pub u_z: f64,
}

impl VelocityRZ {
    pub const ZERO: Self = Self { u_r: 0.0, u_z: 0.0 };

    pub fn norm(&self) -> f64 {
        self.u_r.hypot(self.u_z)
    }

    pub fn is_finite(&self) -> bool {
        self.u_r.is_finite() && self.u_z.is_finite()
    }
}

/// The lens `{|(r,z)| < eps, -r <= z <= r}` where truncation acts.
pub fn in_lens(r: f64, z: f64, eps: f64) -> bool {
    eps > 0.0 && r.hypot(z) < eps && z.abs() <= r
}

/// Middle-branch difference `A`, truncated when `eps > 0`.
///
/// Inside the lens `(r +- z)^m` becomes `((r +- z)^2 + (eps m(rho))^2)^{m/2}`
/// with `m(rho) = 1 - rho(2 rho/eps - 1)`. For `n >= 4` it is further scaled
/// by `(r^2 / (r^2 + (eps m)^2))^{(n-3)/2}` so that `A / r^{n-2}` stays
/// bounded near the axis; the factor is 1 outside the lens and for `n = 3`.
fn middle_difference(r: Dual, z: Dual, params: &DriftParams) -> Dual {
    let me = params.core_exponent();
    let eps = params.epsilon;
    if eps <= 0.0 {
        return (r + z).powf(me) - (r - z).powf(me);
    }
    let rho = r.v.hypot(z.v);
    if rho >= eps {
        return (r + z).powf(me) - (r - z).powf(me);
    }
    let rho_d = if rho > 0.0 {
        Dual {
            v: rho,
            dr: r.v / rho,
            dz: z.v / rho,
        }
    } else {
        Dual::cst(0.0)
    };
    let m = Dual::cst(1.0) - smooth(rho_d.scale(2.0 / eps) - Dual::cst(1.0));
    let em2 = (m * m).scale(eps * eps);
    let ap = ((r + z) * (r + z) + em2).powf(me / 2.0);
    let am = ((r - z) * (r - z) + em2).powf(me / 2.0);
    let a = ap - am;
    if params.n == 3 || em2.v == 0.0 {
        return a;
    }
    let r2 = r * r;
    a * (r2 / (r2 + em2)).powf((params.n as f64 - 3.0) / 2.0)
}

/// The cone/band blend on `z >= 0`, `r > 0`, returned without the cutoff
/// and without the `1/(2(n-2-alpha))` normalization.
///
/// `top_power` is the exponent of the cone term (`n - 1` for `Psi`, `2` for
/// the compensating `Phi_0`); `middle` builds the band term given `Q`.
fn cone_blend(r: Dual, z: Dual, top_power: i32, middle: impl Fn() -> Dual) -> Dual {
    let inv_r = Dual::cst(1.0) / r;
    let p = smooth((z.scale(4.0) - r.scale(2.0)) * inv_r);
    let q = smooth((r.scale(3.0) - z.scale(4.0)) * inv_r);
    let mut out = r.powi(top_power) * p;
    // only evaluate the middle term where it contributes: (r - z) may be
    // negative in the upper cone
    if q.v > 0.0 {
        out = out + middle() * q;
    }
    out
}

/// `chi * Psi` on `z >= 0`, `r > 0`, as a dual number.
fn psi_dual(r: f64, z: f64, params: &DriftParams) -> Dual {
    let rd = Dual::r(r);
    let zd = Dual::z(z);
    let core = cone_blend(rd, zd, params.n as i32 - 1, || middle_difference(rd, zd, params));
    (cutoff_dual(rd, zd) * core).scale(0.5 / params.core_exponent())
}

/// `chi * (Phi_0 + Psi)` on `z >= 0`, `r > 0`, for `n = 3`.
fn ns_core_dual(r: f64, z: f64, params: &DriftParams) -> Dual {
    let rd = Dual::r(r);
    let zd = Dual::z(z);
    let phi0 = cone_blend(rd, zd, 2, || zd.scale(2.0));
    let psi = cone_blend(rd, zd, 2, || middle_difference(rd, zd, params))
        .scale(0.5 / params.core_exponent());
    cutoff_dual(rd, zd) * (phi0 + psi)
}

/// `Psi` (or `Psi_eps` when `params.epsilon > 0`), including the cutoff.
pub fn stream_psi(r: f64, z: f64, params: &DriftParams) -> f64 {
    if r <= 0.0 {
        return 0.0;
    }
    let v = psi_dual(r, z.abs(), params).v;
    if z < 0.0 {
        -v
    } else {
        v
    }
}

/// Axis value of the velocity: `(0, +-(n-1) chi / (2(n-2-alpha)))`.
fn axis_velocity(z: f64, params: &DriftParams) -> VelocityRZ {
    let c = (params.n as f64 - 1.0) / (2.0 * params.core_exponent()) * domain_cutoff(0.0, z);
    VelocityRZ {
        u_r: 0.0,
        u_z: c * z.signum(),
    }
}

fn velocity_from(d: Dual, r: f64, z: f64, n: usize) -> VelocityRZ {
    let w = r.powi(n as i32 - 2);
    let u_r = -d.dz / w;
    let u_z = d.dr / w;
    // d was computed at |z|: u_r is even in z, u_z odd
    VelocityRZ {
        u_r,
        u_z: if z < 0.0 { -u_z } else { u_z },
    }
}

/// Untruncated drift `u`. Singular at the origin.
pub fn velocity_parabolic(p: &MixedPoint, params: &DriftParams) -> Result<VelocityRZ> {
    let untruncated = DriftParams {
        epsilon: 0.0,
        ..*params
    };
    velocity_rz(p.r, p.z, &untruncated)
}

/// Truncated drift `u_eps`; `params.epsilon` must be positive.
///
/// The field is bounded, but its axis value jumps between the two cones, so
/// the exact origin is assigned the symmetric value `(0, 0)`.
pub fn velocity_truncated(p: &MixedPoint, params: &DriftParams) -> Result<VelocityRZ> {
    if !(params.epsilon > 0.0) {
        return Err(Error::OutOfRange {
            what: "epsilon",
            value: params.epsilon,
            range: "(0, inf)",
        });
    }
    velocity_rz(p.r, p.z, params)
}

/// Drift generated by `stream_psi` with whatever `epsilon` `params` carries.
pub fn velocity_rz(r: f64, z: f64, params: &DriftParams) -> Result<VelocityRZ> {
    if r <= 0.0 {
        if z == 0.0 {
            return if params.epsilon > 0.0 {
                Ok(VelocityRZ::ZERO)
            } else {
                Err(Error::OriginSingularity)
            };
        }
        return Ok(axis_velocity(z, params));
    }
    Ok(velocity_from(psi_dual(r, z.abs(), params), r, z, params.n))
}

/// Space-time cutoff `rho(8r/h(t) - 1)`.
pub fn ns_cutoff(r: f64, t: f64, alpha: f64) -> Result<f64> {
    let h = h_profile(t, alpha)?;
    if h <= 0.0 {
        return Err(collapsed(t, alpha));
    }
    Ok(smoothstep(8.0 * r / h - 1.0))
}

fn collapsed(t: f64, alpha: f64) -> Error {
    let _ = alpha;
    Error::OutOfRange {
        what: "t",
        value: t,
        range: "[0, 1/(2+alpha))",
    }
}

fn require_ns(params: &DriftParams) -> Result<()> {
    if params.n != 3 {
        return Err(Error::InvalidParams(vec![format!(
            "the Navier-Stokes toy drift is defined for n = 3, got n = {}",
            params.n
        )]));
    }
    Ok(())
}

/// Time-independent part `chi (Phi_0 + Psi)` of the toy-model stream
/// function; the full stream is this times [`ns_cutoff`].
pub fn ns_core_stream(r: f64, z: f64, params: &DriftParams) -> Result<f64> {
    require_ns(params)?;
    if r <= 0.0 {
        return Ok(0.0);
    }
    let v = ns_core_dual(r, z.abs(), params).v;
    Ok(if z < 0.0 { -v } else { v })
}

/// `Phi(r, z, t)` (or `Phi_eps`), the toy-model stream function.
///
/// `Phi_0` is not truncated: its only singularity is the axis, which the
/// cutoff `rho(8r/h - 1)` already removes for every `t < 1/(2+alpha)`.
pub fn ns_stream(r: f64, z: f64, t: f64, params: &DriftParams) -> Result<f64> {
    let cut = ns_cutoff(r, t, params.alpha)?;
    if cut == 0.0 {
        require_ns(params)?;
        return Ok(0.0);
    }
    Ok(cut * ns_core_stream(r, z, params)?)
}

/// Toy-model drift `u~` (or `u~_eps`).
pub fn velocity_ns(p: &MixedPoint, t: f64, params: &DriftParams) -> Result<VelocityRZ> {
    require_ns(params)?;
    let h = h_profile(t, params.alpha)?;
    if h <= 0.0 {
        return Err(collapsed(t, params.alpha));
    }
    let (r, z) = (p.r, p.z);
    let s = 8.0 * r / h - 1.0;
    if s <= 0.0 {
        return Ok(VelocityRZ::ZERO);
    }
    let (cut, dcut) = smoothstep_with_derivative(s);
    let core = ns_core_dual(r, z.abs(), params);
    let phi = Dual {
        v: cut * core.v,
        dr: cut * core.dr + dcut * 8.0 / h * core.v,
        dz: cut * core.dz,
    };
    Ok(velocity_from(phi, r, z, 3))
}

/// Collapse profile `h(t) = (1 - (2+alpha) t)^{1/(2+alpha)}`.
pub fn h_profile(t: f64, alpha: f64) -> Result<f64> {
    let t_end = 1.0 / (2.0 + alpha);
    if !(0.0..=t_end).contains(&t) {
        return Err(Error::OutOfRange {
            what: "t",
            value: t,
            range: "[0, 1/(2+alpha)]",
        });
    }
    Ok((1.0 - (2.0 + alpha) * t).max(0.0).powf(t_end))
}

/// The time at which `h` reaches `delta`: `(1 - delta^{2+alpha}) / (2+alpha)`.
pub fn h_inverse(delta: f64, alpha: f64) -> Result<f64> {
    if !(delta > 0.0 && delta <= 1.0) {
        return Err(Error::OutOfRange {
            what: "delta",
            value: delta,
            range: "(0, 1]",
        });
    }
    Ok((1.0 - delta.powf(2.0 + alpha)) / (2.0 + alpha))
}

/// Which stream function a [`StreamFunction`] evaluates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StreamKind {
    Parabolic,
    Truncated,
    NsCore,
    Ns,
    NsTruncated,
}

/// A stream function together with the parameters it was built from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StreamFunction {
    pub kind: StreamKind,
    pub params: DriftParams,
}

impl StreamFunction {
    pub fn new(kind: StreamKind, params: DriftParams) -> Result<Self> {
        params.validate()?;
        let truncated = matches!(kind, StreamKind::Truncated | StreamKind::NsTruncated);
        if truncated != (params.epsilon > 0.0) && kind != StreamKind::NsCore {
            return Err(Error::InvalidParams(vec![format!(
                "{kind:?} needs epsilon {} 0, got {}",
                if truncated { ">" } else { "=" },
                params.epsilon
            )]));
        }
        if matches!(kind, StreamKind::NsCore | StreamKind::Ns | StreamKind::NsTruncated) {
            require_ns(&params)?;
        }
        Ok(Self { kind, params })
    }

    pub fn is_time_dependent(&self) -> bool {
        matches!(self.kind, StreamKind::Ns | StreamKind::NsTruncated)
    }

    /// Stream value; `t` is ignored by the time-independent kinds.
    pub fn value(&self, r: f64, z: f64, t: f64) -> Result<f64> {
        match self.kind {
            StreamKind::Parabolic | StreamKind::Truncated => Ok(stream_psi(r, z, &self.params)),
            StreamKind::NsCore => ns_core_stream(r, z, &self.params),
            StreamKind::Ns | StreamKind::NsTruncated => ns_stream(r, z, t, &self.params),
        }
    }

    pub fn velocity(&self, r: f64, z: f64, t: f64) -> Result<VelocityRZ> {
        match self.kind {
            StreamKind::Parabolic | StreamKind::Truncated => velocity_rz(r, z, &self.params),
            StreamKind::NsCore => {
                if r <= 0.0 {
                    return Err(Error::AxisSingularity);
                }
                Ok(velocity_from(ns_core_dual(r, z.abs(), &self.params), r, z, 3))
            }
            StreamKind::Ns | StreamKind::NsTruncated => {
                velocity_ns(&MixedPoint::rz(r, z), t, &self.params)
            }
        }
    }
}

/// Writes `(r, z, t, u_r, u_z)` rows for every sample point.
pub fn write_field_csv<W: Write>(
    out: &mut W,
    field: &StreamFunction,
    points: &[(f64, f64)],
    t: f64,
) -> Result<()> {
    writeln!(out, "r,z,t,u_r,u_z")?;
    for &(r, z) in points {
        let u = field.velocity(r, z, t)?;
        writeln!(
            out,
            "{},{},{},{},{}",
            crate::output::fmt_f64(r),
            crate::output::fmt_f64(z),
            crate::output::fmt_f64(t),
            crate::output::fmt_f64(u.u_r),
            crate::output::fmt_f64(u.u_z)
        )?;
    }
    Ok(())
}
