//! Norm estimates, divergence residuals and pointwise bounds of the drifts.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::drift::{h_profile, velocity_ns, velocity_rz, VelocityRZ};
use crate::error::{Error, Result};
use crate::mixedcoord::{DriftParams, MixedPoint};
use crate::quad::{subdivide, Rule};

/// Composite polar quadrature about the origin over `[0, r_max] x [-z_max, z_max]`.
///
/// The radial variable is graded as `rho = rho_max(phi) s^grading` with
/// `s` split into `base_radial 2^level` uniform panels; the angle is split at
/// the branch seams and corners into `base_angular 2^level` panels each.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadratureSpec {
    pub r_max: f64,
    pub z_max: f64,
    pub order: usize,
    pub base_radial: usize,
    pub base_angular: usize,
    pub levels: usize,
    pub grading: f64,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        Self {
            r_max: 2.0,
            z_max: 2.0,
            order: 10,
            base_radial: 8,
            base_angular: 2,
            levels: 4,
            grading: 3.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Verdict {
    Convergent,
    Divergent,
    Inconclusive,
}

/// Sequence of refinements and the verdict drawn from it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormEstimate {
    /// `int |u|^p` (not its p-th root) at each refinement level.
    pub estimates: Vec<f64>,
    pub verdict: Verdict,
    /// `estimates.last()^{1/p}`.
    pub norm: f64,
}

/// Relative change below which successive estimates count as converged.
pub const CONVERGENCE_REL: f64 = 0.01;

fn verdict_of(est: &[f64]) -> Verdict {
    if est.len() < 3 || est.iter().any(|v| !v.is_finite()) {
        return Verdict::Inconclusive;
    }
    let k = est.len();
    let d_last = (est[k - 1] - est[k - 2]).abs();
    let d_prev = (est[k - 2] - est[k - 3]).abs();
    let rel = d_last / est[k - 1].abs().max(f64::MIN_POSITIVE);
    let increasing = est.windows(2).all(|w| w[1] > w[0]);
    if rel < CONVERGENCE_REL && d_last <= d_prev {
        Verdict::Convergent
    } else if increasing && d_last >= d_prev {
        Verdict::Divergent
    } else {
        Verdict::Inconclusive
    }
}

/// `|S^{k}|`, the area of the unit k-sphere.
pub fn sphere_area(k: usize) -> f64 {
    match k {
        0 => 2.0,
        1 => 2.0 * PI,
        _ => 2.0 * PI / (k as f64 - 1.0) * sphere_area(k - 2),
    }
}

fn angular_breaks(spec: &QuadratureSpec) -> Vec<f64> {
    let corner = spec.z_max.atan2(spec.r_max);
    let mut b = vec![
        -PI / 2.0,
        PI / 2.0,
        0.0,
        corner,
        -corner,
        0.5f64.atan(),
        -(0.5f64.atan()),
        0.75f64.atan(),
        -(0.75f64.atan()),
    ];
    b.sort_by(f64::total_cmp);
    b.dedup_by(|a, c| (*a - *c).abs() < 1e-14);
    b
}

fn rho_max(phi: f64, spec: &QuadratureSpec) -> f64 {
    let c = phi.cos();
    let s = phi.sin().abs();
    let a = if c > 1e-300 { spec.r_max / c } else { f64::INFINITY };
    let b = if s > 1e-300 { spec.z_max / s } else { f64::INFINITY };
    a.min(b)
}

/// `int g(r, z) r^{n-2} dr dz` over the spec's rectangle at one level.
fn polar_integral<G>(g: &G, spec: &QuadratureSpec, level: usize, n: usize) -> Result<f64>
where
    G: Fn(f64, f64) -> Result<f64> + Sync,
{
    let rule = Rule::new(spec.order)?;
    let ang = rule.composite(&subdivide(&angular_breaks(spec), spec.base_angular << level));
    let n_rad = spec.base_radial << level;
    let s_edges: Vec<f64> = (0..=n_rad).map(|k| k as f64 / n_rad as f64).collect();
    let rad = rule.composite(&s_edges);
    let gamma = spec.grading;
    let parts: Vec<Result<f64>> = ang
        .par_iter()
        .map(|&(phi, wphi)| {
            let rm = rho_max(phi, spec);
            let (c, s) = (phi.cos(), phi.sin());
            let mut acc = 0.0;
            for &(sv, ws) in &rad {
                let rho = rm * sv.powf(gamma);
                let jac = rm * gamma * sv.powf(gamma - 1.0);
                let (r, z) = (rho * c, rho * s);
                let v = g(r, z)?;
                acc += ws * jac * rho * r.powi(n as i32 - 2) * v;
            }
            Ok(wphi * acc)
        })
        .collect();
    let mut total = 0.0;
    for p in parts {
        total += p?;
    }
    Ok(total)
}

/// `|S^{n-2}| int |u|^p r^{n-2} dr dz` over the spec's rectangle, at every
/// refinement level, with a convergence verdict.
pub fn lp_norm<F>(field: F, p: f64, spec: &QuadratureSpec, n: usize) -> Result<NormEstimate>
where
    F: Fn(f64, f64) -> Result<VelocityRZ> + Sync,
{
    if !(p >= 1.0) {
        return Err(Error::OutOfRange {
            what: "p",
            value: p,
            range: "[1, inf)",
        });
    }
    let area = sphere_area(n - 2);
    let integrand = |r: f64, z: f64| -> Result<f64> {
        let u = field(r, z)?;
        if !u.is_finite() {
            return Err(Error::NonFinite { r, z, value: u.norm() });
        }
        Ok(u.norm().powf(p))
    };
    let mut estimates = Vec::with_capacity(spec.levels);
    for level in 0..spec.levels {
        estimates.push(area * polar_integral(&integrand, spec, level, n)?);
    }
    let verdict = verdict_of(&estimates);
    let norm = estimates.last().copied().unwrap_or(f64::NAN).powf(1.0 / p);
    Ok(NormEstimate { estimates, verdict, norm })
}

/// Central-difference weighted divergence `d_r(r^{n-2} u_r) + d_z(r^{n-2} u_z)`.
pub fn divergence_residual<F>(field: F, r: f64, z: f64, h: f64, n: usize) -> Result<f64>
where
    F: Fn(f64, f64) -> Result<VelocityRZ>,
{
    if r < 2.0 * h {
        return Err(Error::AxisSingularity);
    }
    let w = |r: f64| r.powi(n as i32 - 2);
    let ur_p = w(r + h) * field(r + h, z)?.u_r;
    let ur_m = w(r - h) * field(r - h, z)?.u_r;
    let wz = w(r);
    let uz_p = wz * field(r, z + h)?.u_z;
    let uz_m = wz * field(r, z - h)?.u_z;
    Ok((ur_p - ur_m) / (2.0 * h) + (uz_p - uz_m) / (2.0 * h))
}

/// Observed orders `log2(res(h)/res(h/2))` for `h = h0, h0/2`.
pub fn divergence_orders<F>(field: F, r: f64, z: f64, h0: f64, n: usize) -> Result<[f64; 2]>
where
    F: Fn(f64, f64) -> Result<VelocityRZ>,
{
    let a = divergence_residual(&field, r, z, h0, n)?.abs();
    let b = divergence_residual(&field, r, z, h0 / 2.0, n)?.abs();
    let c = divergence_residual(&field, r, z, h0 / 4.0, n)?.abs();
    Ok([(a / b).log2(), (b / c).log2()])
}

pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let k = values.len();
    if k == 0 {
        return f64::NAN;
    }
    if k % 2 == 1 {
        values[k / 2]
    } else {
        0.5 * (values[k / 2 - 1] + values[k / 2])
    }
}

/// Random points inside the two interpolation bands, `0.52 r < |z| < 0.73 r`.
///
/// For `n = 3` the middle-cone stream function is a sum of functions of
/// `r + z` and `r - z`, for which the central-difference divergence vanishes
/// to all orders; only the bands expose the truncation error.
pub fn band_sample(count: usize, seed: u64, r_range: (f64, f64)) -> Vec<(f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let r = rng.random_range(r_range.0..r_range.1);
            let z = r * rng.random_range(0.52..0.73);
            (r, if rng.random_bool(0.5) { z } else { -z })
        })
        .collect()
}

/// Median observed divergence order over `points` (finest pair of levels).
pub fn median_divergence_order<F>(field: F, points: &[(f64, f64)], h0: f64, n: usize) -> Result<f64>
where
    F: Fn(f64, f64) -> Result<VelocityRZ>,
{
    let mut orders = Vec::with_capacity(points.len());
    for &(r, z) in points {
        orders.push(divergence_orders(&field, r, z, h0, n)?[1]);
    }
    Ok(median(&mut orders))
}

/// Max of `|u_eps(x)| |x|^{1+alpha}` over a cloud, one value per epsilon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointwiseBound {
    pub epsilons: Vec<f64>,
    pub constants: Vec<f64>,
    /// `max / min - 1` over `constants`.
    pub spread: f64,
}

/// Tensor cloud of about `count` points: jittered log-uniform radius strata
/// in `[rho_min, rho_max]` times one shared set of jittered angles, kept
/// inside `[0, 2] x [-2, 2]`.
///
/// Sharing the angles across radii makes the sampled maximum of a
/// homogeneous field the same at every scale.
pub fn cloud(count: usize, seed: u64, rho_min: f64, rho_max: f64) -> Vec<(f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_rho = ((count as f64).sqrt() / 3.0).ceil().max(1.0) as usize;
    let n_phi = count.div_ceil(n_rho);
    let (la, lb) = (rho_min.ln(), rho_max.ln());
    let dl = (lb - la) / n_rho as f64;
    let dphi = PI / n_phi as f64;
    let phis: Vec<f64> = (0..n_phi)
        .map(|k| -PI / 2.0 + dphi * (k as f64 + rng.random_range(0.0..1.0)))
        .collect();
    let mut out = Vec::with_capacity(n_rho * n_phi);
    for i in 0..n_rho {
        let rho = (la + dl * (i as f64 + rng.random_range(0.0..1.0))).exp();
        for &phi in &phis {
            let (r, z) = (rho * phi.cos(), rho * phi.sin());
            if r > 0.0 && r <= 2.0 && z.abs() <= 2.0 {
                out.push((r, z));
            }
        }
    }
    out
}

pub fn pointwise_bound(params: &DriftParams, epsilons: &[f64], points: &[(f64, f64)]) -> Result<PointwiseBound> {
    let mut constants = Vec::new();
    for &eps in epsilons {
        let p = params.with_epsilon(eps);
        let vals: Vec<Result<f64>> = points
            .par_iter()
            .map(|&(r, z)| Ok(velocity_rz(r, z, &p)?.norm() * r.hypot(z).powf(1.0 + p.alpha)))
            .collect();
        let mut m: f64 = 0.0;
        for v in vals {
            m = m.max(v?);
        }
        constants.push(m);
    }
    let hi = constants.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lo = constants.iter().cloned().fold(f64::INFINITY, f64::min);
    Ok(PointwiseBound {
        epsilons: epsilons.to_vec(),
        constants,
        spread: hi / lo - 1.0,
    })
}

/// Largest deviation from `u~_eps = u_eps + (-2/r, 0)` over `points` at time
/// `t`, where `reference` supplies the right-hand drift.
pub fn ns_identity_residual<F>(params: &DriftParams, t: f64, points: &[(f64, f64)], reference: F) -> Result<f64>
where
    F: Fn(f64, f64) -> Result<VelocityRZ>,
{
    let mut worst: f64 = 0.0;
    for &(r, z) in points {
        let u = velocity_ns(&MixedPoint::rz(r, z), t, params)?;
        let b = reference(r, z)?;
        worst = worst.max((u.u_r - b.u_r + 2.0 / r).abs()).max((u.u_z - b.u_z).abs());
    }
    Ok(worst)
}

/// Quadrature controls for the toy-model energy test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergySpec {
    /// Dyadic shells `h in [2^{-k-1}, 2^{-k}]`, `k < shells`.
    pub shells: usize,
    /// Gauss nodes per shell in `h`.
    pub time_order: usize,
    pub order: usize,
    pub panels_per_octave: usize,
    pub base_angular: usize,
}

impl Default for EnergySpec {
    fn default() -> Self {
        Self {
            shells: 10,
            time_order: 3,
            order: 8,
            panels_per_octave: 2,
            base_angular: 2,
        }
    }
}

/// Spatial norms of `u~(., t)` sampled along the collapse.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyProfile {
    /// `(shell, h, weight of dt = h^{1+alpha} dh)` per time node.
    pub nodes: Vec<(usize, f64, f64)>,
    pub h1_norms: Vec<f64>,
    pub lp_norms: Vec<f64>,
    /// Exponent of `lp_norms` (`3 - lambda`).
    pub p: f64,
}

/// Per-shell contributions to `int ||u~||_{H^1}^q dt` and the verdict.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyVerdict {
    pub q: f64,
    pub shells: Vec<f64>,
    pub partial_sum: f64,
    pub verdict: Verdict,
}

impl EnergyProfile {
    pub fn membership(&self, q: f64) -> EnergyVerdict {
        let n_shells = self.nodes.iter().map(|n| n.0).max().map_or(0, |k| k + 1);
        let mut shells = vec![0.0; n_shells];
        for (&(k, _, w), &nrm) in self.nodes.iter().zip(&self.h1_norms) {
            shells[k] += w * nrm.powf(q);
        }
        let partial_sum: f64 = shells.iter().sum();
        let k = shells.len();
        let verdict = if k < 4 {
            Verdict::Inconclusive
        } else {
            let ratios: Vec<f64> = (k - 3..k).map(|i| shells[i] / shells[i - 1]).collect();
            let rho = ratios.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            if rho < 1.0 {
                let tail = shells[k - 1] * rho / (1.0 - rho);
                if tail < CONVERGENCE_REL * partial_sum {
                    Verdict::Convergent
                } else {
                    Verdict::Inconclusive
                }
            } else if ratios.iter().all(|&x| x >= 1.0) {
                Verdict::Divergent
            } else {
                Verdict::Inconclusive
            }
        };
        EnergyVerdict {
            q,
            shells,
            partial_sum,
            verdict,
        }
    }

    pub fn sup_lp(&self) -> f64 {
        self.lp_norms.iter().cloned().fold(0.0, f64::max)
    }
}

/// `(||u~(t)||_{H^1}, ||u~(t)||_{L^p})` on `R^3` by graded polar quadrature.
pub fn ns_spatial_norms(params: &DriftParams, t: f64, spec: &EnergySpec, p: f64) -> Result<(f64, f64)> {
    let h = h_profile(t, params.alpha)?;
    let rule = Rule::new(spec.order)?;
    let box_spec = QuadratureSpec {
        r_max: 3.0,
        z_max: 3.0,
        ..QuadratureSpec::default()
    };
    let ang = rule.composite(&subdivide(&angular_breaks(&box_spec), spec.base_angular));
    let rho_lo = h / 8.0;
    let field = |r: f64, z: f64| velocity_ns(&MixedPoint::rz(r, z), t, params);
    let parts: Vec<Result<(f64, f64)>> = ang
        .par_iter()
        .map(|&(phi, wphi)| {
            let rm = rho_max(phi, &box_spec);
            let octaves = (rm / rho_lo).log2().ceil().max(1.0) as usize;
            let n_pan = octaves * spec.panels_per_octave;
            let edges: Vec<f64> = (0..=n_pan)
                .map(|k| rho_lo * (rm / rho_lo).powf(k as f64 / n_pan as f64))
                .collect();
            let (c, s) = (phi.cos(), phi.sin());
            let mut h1 = 0.0;
            let mut lp = 0.0;
            for (rho, w) in rule.composite(&edges) {
                let (r, z) = (rho * c, rho * s);
                let u = field(r, z)?;
                let e = 1e-5 * rho;
                let (up, um) = (field(r + e, z)?, field(r - e, z)?);
                let (vp, vm) = (field(r, z + e)?, field(r, z - e)?);
                let d = [
                    (up.u_r - um.u_r) / (2.0 * e),
                    (vp.u_r - vm.u_r) / (2.0 * e),
                    (up.u_z - um.u_z) / (2.0 * e),
                    (vp.u_z - vm.u_z) / (2.0 * e),
                    u.u_r / r,
                ];
                let grad2: f64 = d.iter().map(|x| x * x).sum();
                let meas = w * rho * r;
                h1 += meas * (u.u_r * u.u_r + u.u_z * u.u_z + grad2);
                lp += meas * u.norm().powf(p);
            }
            Ok((wphi * h1, wphi * lp))
        })
        .collect();
    let mut h1 = 0.0;
    let mut lp = 0.0;
    for part in parts {
        let (a, b) = part?;
        h1 += a;
        lp += b;
    }
    Ok(((2.0 * PI * h1).sqrt(), (2.0 * PI * lp).powf(1.0 / p)))
}

/// Samples the spatial norms of `u~` on Gauss nodes of dyadic `h`-shells.
pub fn ns_energy_profile(params: &DriftParams, spec: &EnergySpec) -> Result<EnergyProfile> {
    if params.n != 3 {
        return Err(Error::InvalidParams(vec![format!("energy test needs n = 3, got {}", params.n)]));
    }
    let rule = Rule::new(spec.time_order)?;
    let a = params.alpha;
    let p = 3.0 - params.lambda;
    let mut nodes = Vec::new();
    let mut h1_norms = Vec::new();
    let mut lp_norms = Vec::new();
    for k in 0..spec.shells {
        let hi = 0.5f64.powi(k as i32);
        for (h, w) in rule.panel(hi / 2.0, hi) {
            let t = (1.0 - h.powf(2.0 + a)) / (2.0 + a);
            let (n1, nl) = ns_spatial_norms(params, t, spec, p)?;
            nodes.push((k, h, w * h.powf(1.0 + a)));
            h1_norms.push(n1);
            lp_norms.push(nl);
        }
    }
    Ok(EnergyProfile {
        nodes,
        h1_norms,
        lp_norms,
        p,
    })
}

/// `int_0^T ||u~(t)||_{H^1}^q dt` membership verdict.
pub fn ns_energy_membership(q: f64, params: &DriftParams, spec: &EnergySpec) -> Result<EnergyVerdict> {
    Ok(ns_energy_profile(params, spec)?.membership(q))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn sphere_areas() {
        assert_relative_eq!(sphere_area(2), 4.0 * PI, max_relative = 1e-15);
        assert_relative_eq!(sphere_area(3), 2.0 * PI * PI, max_relative = 1e-15);
    }

    #[test]
    fn polar_quadrature_integrates_known_functions() {
        let spec = QuadratureSpec {
            levels: 1,
            ..QuadratureSpec::default()
        };
        // area of [0,2]x[-2,2] with weight r^{n-2}, n = 3: int r = 2 * 4 = 8
        let v = polar_integral(&|_, _| Ok(1.0), &spec, 0, 3).unwrap();
        assert_relative_eq!(v, 8.0, max_relative = 1e-12);
        // singular but integrable: rho^{-1} over the rectangle with weight r
        let v1 = polar_integral(&|r: f64, z: f64| Ok(1.0 / r.hypot(z)), &spec, 0, 3).unwrap();
        let v2 = polar_integral(&|r: f64, z: f64| Ok(1.0 / r.hypot(z)), &spec, 2, 3).unwrap();
        assert_relative_eq!(v1, v2, max_relative = 1e-8);
    }

    #[test]
    fn verdict_rules() {
        assert_eq!(verdict_of(&[1.0, 1.1, 1.105]), Verdict::Convergent);
        assert_eq!(verdict_of(&[1.0, 2.0, 3.9]), Verdict::Divergent);
        assert_eq!(verdict_of(&[1.0, 2.0]), Verdict::Inconclusive);
    }

    #[test]
    fn top_cone_divergence_is_roundoff() {
        let p = DriftParams::new(3, 0.5, 0.1).unwrap();
        let f = |r: f64, z: f64| velocity_rz(r, z, &p);
        let res = divergence_residual(f, 0.3, 0.9, 1e-3, 3).unwrap();
        assert!(res.abs() < 1e-12, "{res}");
        assert!(divergence_residual(f, 1e-3, 0.9, 1e-3, 3).is_err());
    }

    #[test]
    fn band_divergence_is_second_order() {
        let p = DriftParams::new(3, 0.5, 0.1).unwrap();
        let f = |r: f64, z: f64| velocity_rz(r, z, &p);
        let [o1, o2] = divergence_orders(f, 0.8, 0.5, 0.02, 3).unwrap();
        assert!((o1 - 2.0).abs() < 0.3 && (o2 - 2.0).abs() < 0.3, "{o1} {o2}");
    }

    #[test]
    fn deterministic_clouds() {
        assert_eq!(cloud(10, 1, 1e-3, 2.0), cloud(10, 1, 1e-3, 2.0));
        assert!(cloud(100, 2, 1e-3, 2.8).iter().all(|&(r, z)| r <= 2.0 && z.abs() <= 2.0));
    }
}
