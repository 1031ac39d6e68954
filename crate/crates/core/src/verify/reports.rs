//! [`CertificateReport`] wrappers around the grid and quadrature checks, as
//! run by the `verify` and `norms` subcommands.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use super::*;
use crate::drift::{h_profile, velocity_ns, velocity_rz};
use crate::mixedcoord::{DriftParams, MixedPoint};

/// Relative tolerance of the Hessian check.
pub const TOL_HESSIAN: f64 = 1e-3;
/// Allowed deviation of the median divergence order from 2.
pub const TOL_ORDER: f64 = 0.3;
/// Allowed spread of the pointwise constants across epsilon.
pub const TOL_POINTWISE_SPREAD: f64 = 0.05;
/// Tolerance of the toy-model drift identity.
pub const TOL_NS_IDENTITY: f64 = 1e-10;
/// Allowed spread of the truncated norms across epsilon.
pub const TOL_NORM_SPREAD: f64 = 0.10;
/// Transport residual allowed at the support centre.
pub const TOL_TRANSPORT_CENTRE: f64 = 1e-8;

/// `r0` candidates `0.01, 0.02, ..., 0.24`.
pub fn r0_candidates() -> Vec<f64> {
    (1..=24).map(|k| k as f64 / 100.0).collect()
}

/// `nu` candidates `0.05, 0.10, ..., 0.95`.
pub fn nu_candidates() -> Vec<f64> {
    (1..=19).map(|k| k as f64 / 20.0).collect()
}

/// Hessian of the transport margin at `(1, 0)` against
/// `(4 + 2 alpha, 0, 2(n - 2 - alpha))`.
pub fn hessian_report(n: usize, alpha: f64) -> CertificateReport {
    let got = subsolution_hessian(n, alpha, 1.0, 0.0);
    let want = [4.0 + 2.0 * alpha, 0.0, 2.0 * (n as f64 - 2.0 - alpha)];
    let err = got
        .iter()
        .zip(&want)
        .map(|(g, w)| (g - w).abs() / w.abs().max(1.0))
        .fold(0.0, f64::max);
    let mut rep = CertificateReport::new(
        "hessian",
        json!({"n": n, "alpha": alpha}),
        "(r, z) = (1, 0)".into(),
        TOL_HESSIAN - err,
        0.0,
        "central differences, step 1e-4".into(),
    );
    rep.details = json!({"computed": got, "expected": want, "max_rel_error": err});
    rep
}

/// Transport identity at the support centre and at off-centre points.
pub fn transport_report(alpha: f64, r0: f64) -> Result<CertificateReport> {
    let mut centre: f64 = 0.0;
    let mut off: f64 = 0.0;
    let mut rows = Vec::new();
    for t in [0.0, 0.2, 0.4] {
        let h = h_profile(t, alpha)?;
        let c = check_transport_identity(t, &[(h, 0.0, 0.0)], r0, alpha)?;
        let pts = [(1.1 * h, 0.05 * h, 0.1), (0.9 * h, -0.1 * h, -0.2), (h, 0.1 * h, 0.05)];
        let o = check_transport_identity(t, &pts, r0, alpha)?;
        let outside = check_transport_identity(t, &[(0.3 * h, 0.0, 0.0)], r0, alpha)?;
        rows.push(json!({"t": t, "centre": c, "off_centre": o, "outside_support": outside}));
        centre = centre.max(c);
        off = off.max(o).max(outside);
    }
    let mut rep = CertificateReport::new(
        "transport",
        json!({"alpha": alpha, "r0": r0}),
        "support of g at t in {0, 0.2, 0.4}".into(),
        (TOL_TRANSPORT_CENTRE - centre).min(TOL_FD - off),
        0.0,
        "central differences, step 2e-7".into(),
    );
    rep.details = json!({ "times": rows });
    Ok(rep)
}

/// Median observed order of the weighted divergence residual on the
/// interpolation bands, for `u` and (when `n = 3`) the toy drift at `t = 0`.
pub fn divergence_report(params: &DriftParams, count: usize, seed: u64) -> Result<CertificateReport> {
    let p = DriftParams { epsilon: 0.0, ..*params };
    let pts = band_sample(count, seed, (0.3, 1.2));
    let h0 = 0.02;
    let u = median_divergence_order(|r, z| velocity_rz(r, z, &p), &pts, h0, p.n)?;
    let mut worst = (u - 2.0).abs();
    let mut details = json!({"u": u});
    if p.n == 3 {
        let ns = median_divergence_order(|r, z| velocity_ns(&MixedPoint::rz(r, z), 0.0, &p), &pts, h0, 3)?;
        worst = worst.max((ns - 2.0).abs());
        details["u_ns"] = json!(ns);
    }
    let mut rep = CertificateReport::new(
        "divergence",
        json!({"n": p.n, "alpha": p.alpha, "points": count, "seed": seed}),
        "0.52 r < |z| < 0.73 r, r in (0.3, 1.2)".into(),
        TOL_ORDER - worst,
        0.0,
        format!("h = {h0}, {}, {}", h0 / 2.0, h0 / 4.0),
    );
    rep.details = details;
    Ok(rep)
}

/// `max |u_eps| |x|^{1+alpha}` per epsilon over a log-uniform cloud.
pub fn pointwise_report(params: &DriftParams, epsilons: &[f64], count: usize, seed: u64) -> Result<CertificateReport> {
    let pts = cloud(count, seed, 1e-3, 2.8);
    let b = pointwise_bound(params, epsilons, &pts)?;
    let mut rep = CertificateReport::new(
        "pointwise",
        json!({"n": params.n, "alpha": params.alpha, "points": count, "seed": seed}),
        "1e-3 <= |(r, z)| <= 2.8 inside [0,2] x [-2,2]".into(),
        TOL_POINTWISE_SPREAD - b.spread,
        0.0,
        format!("{count} points"),
    );
    rep.details = serde_json::to_value(&b)?;
    Ok(rep)
}

/// Points with `h(t)/4 <= r <= 2` and `|z| <= r/2`.
pub fn ns_region_sample(count: usize, seed: u64, h: f64) -> Vec<(f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let r = rng.random_range(h / 4.0..2.0);
            (r, r * rng.random_range(-0.5..=0.5))
        })
        .collect()
}

/// `u~_eps - u_bar - (-2/r, 0)` on the region where the two equations agree.
///
/// For `eps <= h(t)/4` the lens misses the region and the comparison is with
/// the untruncated drift; larger `eps` are compared with `u_eps`.
pub fn ns_identity_report(params: &DriftParams, epsilons: &[f64], times: &[f64], count: usize, seed: u64) -> Result<CertificateReport> {
    let mut worst: f64 = 0.0;
    let mut rows = Vec::new();
    for &t in times {
        let h = h_profile(t, params.alpha)?;
        let pts = ns_region_sample(count, seed, h);
        for &eps in epsilons {
            let p = params.with_epsilon(eps);
            let reference = if eps <= h / 4.0 { params.with_epsilon(0.0) } else { p };
            let res = ns_identity_residual(&p, t, &pts, |r, z| velocity_rz(r, z, &reference))?;
            rows.push(json!({"t": t, "eps": eps, "against_untruncated": eps <= h / 4.0, "residual": res}));
            worst = worst.max(res);
        }
    }
    let mut rep = CertificateReport::new(
        "ns_identity",
        json!({"alpha": params.alpha, "points": count, "seed": seed}),
        "h(t)/4 <= r <= 2, |z| <= r/2".into(),
        TOL_NS_IDENTITY - worst,
        0.0,
        format!("{count} points per (t, eps)"),
    );
    rep.details = json!({ "cases": rows });
    Ok(rep)
}

/// `L^{n-lambda}` convergent and `L^n` divergent for `u`, and truncated
/// norms uniform in epsilon.
pub fn lp_norm_report(params: &DriftParams, spec: &QuadratureSpec, epsilons: &[f64]) -> Result<CertificateReport> {
    let n = params.n;
    let p_sub = n as f64 - params.lambda;
    let bare = DriftParams { epsilon: 0.0, ..*params };
    let below = lp_norm(|r, z| velocity_rz(r, z, &bare), p_sub, spec, n)?;
    let critical = lp_norm(|r, z| velocity_rz(r, z, &bare), n as f64, spec, n)?;
    let mut truncated = Vec::new();
    for &eps in epsilons {
        let pe = params.with_epsilon(eps);
        truncated.push(lp_norm(|r, z| velocity_rz(r, z, &pe), p_sub, spec, n)?.norm);
    }
    let hi = truncated.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lo = truncated.iter().cloned().fold(f64::INFINITY, f64::min);
    let spread = if truncated.is_empty() { 0.0 } else { hi / lo - 1.0 };
    let verdicts_ok = below.verdict == Verdict::Convergent && critical.verdict == Verdict::Divergent;
    let mut rep = CertificateReport::new(
        "lp_norm",
        json!({"n": n, "lambda": params.lambda, "alpha": params.alpha}),
        "[0, r_max] x [-z_max, z_max]".into(),
        if verdicts_ok { TOL_NORM_SPREAD - spread } else { -1.0 },
        0.0,
        format!("order {}, {} levels, grading {}", spec.order, spec.levels, spec.grading),
    );
    rep.value = Some(below.norm);
    rep.details = json!({
        "p_subcritical": p_sub, "subcritical": below,
        "critical": critical, "truncated_norms": truncated, "epsilons": epsilons, "spread": spread
    });
    Ok(rep)
}

/// The toy drift is in `L^q_t H^1_x` for `q = 1` but not for `q = 4`, with
/// bounded `L^{3-lambda}` norms along the collapse.
pub fn energy_report(params: &DriftParams, spec: &EnergySpec) -> Result<CertificateReport> {
    let prof = ns_energy_profile(params, spec)?;
    let q1 = prof.membership(1.0);
    let q4 = prof.membership(4.0);
    let sup = prof.sup_lp();
    let ok = q1.verdict == Verdict::Convergent && q4.verdict == Verdict::Divergent && sup.is_finite();
    let mut rep = CertificateReport::new(
        "energy",
        json!({"lambda": params.lambda, "alpha": params.alpha}),
        "t in [0, 1/(2+alpha))".into(),
        if ok { 0.0 } else { -1.0 },
        0.0,
        format!("{} dyadic shells x {} Gauss nodes", spec.shells, spec.time_order),
    );
    rep.value = Some(sup);
    rep.details = json!({"q1": q1, "q4": q4, "sup_lp": sup, "q_threshold": 2.0 * (2.0 + params.alpha) / (1.0 + 2.0 * params.alpha)});
    Ok(rep)
}
