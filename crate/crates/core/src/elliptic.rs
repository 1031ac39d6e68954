//! Monte Carlo for the elliptic problem `-Delta v + C u_eps . grad v = 0` in
//! the unit ball: Euler-Maruyama paths of `dX = -C u_eps(X) dt + dB`.
//!
//! The drift lives in the `(r, z)` chart with `z = x_1` and
//! `r = |(x_2, ..., x_n)|`, so `u . e_1 = u_z` and `u . e_j = u_r x_j / r`.
//! The field is then symmetric under `x_2 -> -x_2` and pushes paths near the
//! `x_2` axis outwards, which is the cone geometry used for exits.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::drift::velocity_rz;
use crate::error::{Error, Result};
use crate::mixedcoord::DriftParams;
use crate::quad::Rule;

/// Distance to the unit sphere accepted as "on the sphere".
pub const TOL_BOUNDARY: f64 = 1e-6;
/// Largest admissible fraction of censored paths.
pub const CENSOR_LIMIT: f64 = 1e-3;
/// Normal quantile of the reported 95% intervals.
pub const Z95: f64 = 1.96;
/// Drift strength: the smallest power of two whose lid-or-sphere escape
/// probability reaches 0.55 at `y_2 = 0.5`, `nu = NU0 / 2`.
pub const TUNED_C: f64 = 32.0;
/// Frozen lower bound for the drifted probe means (measured means are
/// about 1 at `C = TUNED_C`).
pub const KAPPA_HAT: f64 = 0.5;

/// `Sigma_{nu,mu} = {x_2 in [mu/2, 2mu], max_{i != 2} |x_i| <= nu x_2}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConeSpec {
    pub nu: f64,
    pub mu: f64,
    /// Half-width of the start plate `x_2 = mu` relative to `nu mu`.
    pub l: f64,
}

impl ConeSpec {
    pub fn new(nu: f64, mu: f64, l: f64) -> Result<Self> {
        let mut v = Vec::new();
        if !(nu > 0.0) {
            v.push(format!("nu = {nu} must be positive"));
        }
        if !(mu > 0.0) {
            v.push(format!("mu = {mu} must be positive"));
        }
        if !(l > 0.0 && l < 1.0) {
            v.push(format!("l = {l} must lie in (0, 1)"));
        }
        if v.is_empty() {
            Ok(Self { nu, mu, l })
        } else {
            Err(Error::InvalidParams(v))
        }
    }

    /// `Sigma_y` with aperture `nu y_2^{alpha/4}` and scale `y_2`.
    pub fn scaled(nu: f64, y2: f64, alpha: f64) -> Result<Self> {
        Self::new(nu * y2.powf(alpha / 4.0), y2, 0.5)
    }

    /// The face a point outside `Sigma ∩ B_1` has left through, if any.
    fn violated(&self, x: &[f64]) -> Option<ExitClass> {
        let x2 = x[1];
        let side = x
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != 1)
            .fold(0.0f64, |m, (_, v)| m.max(v.abs()));
        let sphere = norm2(x) - 1.0;
        let lid = x2 - 2.0 * self.mu;
        let bottom = 0.5 * self.mu - x2;
        let sides = side - self.nu * x2;
        let mut best: Option<(ExitClass, f64)> = None;
        for (c, v) in [
            (ExitClass::Sphere, sphere),
            (ExitClass::Lid, lid),
            (ExitClass::Bottom, bottom),
            (ExitClass::Side, sides),
        ] {
            if v > 0.0 && best.map_or(true, |(_, b)| v > b) {
                best = Some((c, v));
            }
        }
        best.map(|(c, _)| c)
    }
}

/// How a path left its stopping region.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExitClass {
    Lid,
    Sphere,
    Side,
    Bottom,
    Censored,
}

/// One simulated trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathRecord {
    pub start: Vec<f64>,
    pub exit: Vec<f64>,
    pub class: ExitClass,
    /// Whether `x_2` reached 0 before the exit.
    pub touched_plane: bool,
    pub steps: usize,
    pub elapsed: f64,
}

/// Adaptive Euler-Maruyama step:
/// `dt = min(dt_max, (frac |x|)^2 / n, frac |x| / |C u|)` with
/// `|x|` floored at `eps/2`; only `dt_max` applies when `C = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRule {
    pub dt_max: f64,
    pub frac: f64,
    pub max_steps: usize,
    /// Multiplies the Brownian increment; 0 integrates the drift ODE.
    pub noise: f64,
}

impl Default for StepRule {
    fn default() -> Self {
        Self {
            dt_max: 1e-4,
            frac: 0.05,
            max_steps: 2_000_000,
            noise: 1.0,
        }
    }
}

/// Where a path stops.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Stop {
    Ball,
    Cone(ConeSpec),
}

fn norm2(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

/// `gamma` on the unit sphere: 1 above `x_2 = 1/2`, -1 below `-1/2`,
/// `sin(pi x_2)` between.
pub fn gamma_boundary(x: &[f64]) -> Result<f64> {
    let norm = norm2(x).sqrt();
    if (norm - 1.0).abs() > TOL_BOUNDARY || x.len() < 2 {
        return Err(Error::OffSphere { norm });
    }
    Ok(gamma_of(x[1]))
}

fn gamma_of(x2: f64) -> f64 {
    if x2 > 0.5 {
        1.0
    } else if x2 < -0.5 {
        -1.0
    } else {
        (PI * x2).sin()
    }
}

/// `-C u_eps(x)` in Cartesian components.
pub fn drift_cartesian(x: &[f64], params: &DriftParams) -> Result<Vec<f64>> {
    let mut out = vec![0.0; x.len()];
    if params.big_c == 0.0 {
        return Ok(out);
    }
    let z = x[0];
    let r = norm2(&x[1..]).sqrt();
    let u = velocity_rz(r, z, params)?;
    out[0] = -params.big_c * u.u_z;
    if r > 0.0 {
        let s = -params.big_c * u.u_r / r;
        for (o, xi) in out[1..].iter_mut().zip(&x[1..]) {
            *o = s * xi;
        }
    }
    Ok(out)
}

fn inside(stop: &Stop, x: &[f64]) -> Option<ExitClass> {
    match stop {
        Stop::Ball => (norm2(x) >= 1.0).then_some(ExitClass::Sphere),
        Stop::Cone(c) => c.violated(x),
    }
}

/// The RNG of path `index` under `seed`.
pub fn path_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Simulates one path from `start` until it leaves `stop`.
pub fn simulate_path<R: Rng>(start: &[f64], params: &DriftParams, stop: Stop, rule: &StepRule, rng: &mut R) -> Result<PathRecord> {
    let n = params.n;
    if start.len() != n {
        return Err(Error::DimensionMismatch {
            n,
            expected: n,
            got: start.len(),
        });
    }
    if norm2(start) >= 1.0 {
        return Err(Error::OutOfRange {
            what: "|start|",
            value: norm2(start).sqrt(),
            range: "[0, 1)",
        });
    }
    if !(params.epsilon > 0.0) && params.big_c != 0.0 {
        return Err(Error::OutOfRange {
            what: "epsilon",
            value: params.epsilon,
            range: "(0, inf)",
        });
    }
    let mut x = start.to_vec();
    let mut next = vec![0.0; n];
    let mut t = 0.0;
    let mut touched = start[1] <= 0.0;
    // without drift the origin is not special and only dt_max applies
    let floor = if params.big_c == 0.0 { f64::INFINITY } else { 0.5 * params.epsilon };
    for step in 1..=rule.max_steps {
        let b = drift_cartesian(&x, params)?;
        let radius = norm2(&x).sqrt().max(floor);
        let speed = norm2(&b).sqrt();
        let mut dt = rule.dt_max.min((rule.frac * radius).powi(2) / n as f64);
        if speed > 0.0 {
            dt = dt.min(rule.frac * radius / speed);
        }
        let sq = dt.sqrt() * rule.noise;
        for i in 0..n {
            let g: f64 = rng.sample(StandardNormal);
            next[i] = x[i] + b[i] * dt + sq * g;
        }
        t += dt;
        if next[1] <= 0.0 {
            touched = true;
        }
        if inside(&stop, &next).is_some() {
            let (exit, class) = refine_exit(&stop, &x, &next);
            return Ok(PathRecord {
                start: start.to_vec(),
                exit,
                class,
                touched_plane: touched,
                steps: step,
                elapsed: t,
            });
        }
        std::mem::swap(&mut x, &mut next);
    }
    Ok(PathRecord {
        start: start.to_vec(),
        exit: x,
        class: ExitClass::Censored,
        touched_plane: touched,
        steps: rule.max_steps,
        elapsed: t,
    })
}

/// Bisection along the last step for the first point outside `stop`.
fn refine_exit(stop: &Stop, a: &[f64], b: &[f64]) -> (Vec<f64>, ExitClass) {
    let at = |s: f64| -> Vec<f64> { a.iter().zip(b).map(|(p, q)| p + s * (q - p)).collect() };
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if inside(stop, &at(mid)).is_some() {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let p = at(hi);
    let class = inside(stop, &p).unwrap_or(ExitClass::Sphere);
    (p, class)
}

/// `E[gamma(X_tau)]` from one start point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VEstimate {
    pub p2: f64,
    pub paths: usize,
    pub mean: f64,
    pub se: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    /// Fraction of paths with `x_2 > 0` up to the exit.
    pub a_fraction: f64,
    /// Mean of `gamma(X_tau)` over the paths that reached `x_2 = 0`.
    pub ac_mean: f64,
    pub ac_se: f64,
    pub censored: usize,
}

fn mean_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    if v.is_empty() {
        return (0.0, 0.0);
    }
    let m = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (m, 0.0);
    }
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

fn simulate_many(start: &[f64], params: &DriftParams, stop: Stop, rule: &StepRule, paths: usize, seed: u64) -> Result<Vec<PathRecord>> {
    (0..paths as u64)
        .into_par_iter()
        .map(|i| simulate_path(start, params, stop, rule, &mut path_rng(seed, i)))
        .collect()
}

fn check_censored(records: &[PathRecord]) -> Result<usize> {
    let c = records.iter().filter(|r| r.class == ExitClass::Censored).count();
    let fraction = c as f64 / records.len() as f64;
    if fraction > CENSOR_LIMIT {
        return Err(Error::Censored {
            fraction,
            limit: CENSOR_LIMIT,
        });
    }
    Ok(c)
}

/// Estimates `v_eps(x)` at `x = p`; `N >= 10^4` is expected for the stated
/// intervals but not enforced.
pub fn estimate_v(p: &[f64], paths: usize, params: &DriftParams, rule: &StepRule, seed: u64) -> Result<VEstimate> {
    if paths < 2 {
        return Err(Error::OutOfRange {
            what: "paths",
            value: paths as f64,
            range: "[2, inf)",
        });
    }
    let records = simulate_many(p, params, Stop::Ball, rule, paths, seed)?;
    let censored = check_censored(&records)?;
    let mut all = Vec::with_capacity(paths);
    let mut ac = Vec::new();
    let mut a_count = 0usize;
    for r in records.iter().filter(|r| r.class != ExitClass::Censored) {
        let g = gamma_of(r.exit[1]);
        all.push(g);
        if r.touched_plane {
            ac.push(g);
        } else {
            a_count += 1;
        }
    }
    let (mean, se) = mean_se(&all);
    let (ac_mean, ac_se) = mean_se(&ac);
    Ok(VEstimate {
        p2: p[1],
        paths,
        mean,
        se,
        ci_lo: mean - Z95 * se,
        ci_hi: mean + Z95 * se,
        a_fraction: a_count as f64 / all.len() as f64,
        ac_mean,
        ac_se,
        censored,
    })
}

/// `(0, p2, 0, ..., 0)`.
pub fn probe_point(p2: f64, n: usize) -> Vec<f64> {
    let mut x = vec![0.0; n];
    x[1] = p2;
    x
}

/// Exit statistics of `Sigma_y ∩ B_1` from `y`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConeStats {
    pub y2: f64,
    pub paths: usize,
    pub p_lid: f64,
    pub p_sphere: f64,
    pub p_side: f64,
    pub p_bottom: f64,
    /// Standard error of `p_lid + p_sphere`.
    pub se: f64,
    pub censored: usize,
}

impl ConeStats {
    pub fn p_escape(&self) -> f64 {
        self.p_lid + self.p_sphere
    }

    /// Lower end of the 95% interval of `p_lid + p_sphere`.
    pub fn escape_lower(&self) -> f64 {
        self.p_escape() - Z95 * self.se
    }
}

pub fn exit_side_statistics(y: &[f64], cone: &ConeSpec, paths: usize, params: &DriftParams, rule: &StepRule, seed: u64) -> Result<ConeStats> {
    if !(y[1] >= 2.0 * params.epsilon && y[1] <= 1.0) {
        return Err(Error::OutOfRange {
            what: "y_2",
            value: y[1],
            range: "[2 eps, 1]",
        });
    }
    if (y[1] - cone.mu).abs() > 1e-12 * cone.mu || cone.violated(y).is_some() {
        return Err(Error::InvalidParams(vec!["start point is not on the plate x_2 = mu".into()]));
    }
    let records = simulate_many(y, params, Stop::Cone(*cone), rule, paths, seed)?;
    let censored = check_censored(&records)?;
    let m = (paths - censored) as f64;
    let count = |c: ExitClass| records.iter().filter(|r| r.class == c).count() as f64 / m;
    let (p_lid, p_sphere) = (count(ExitClass::Lid), count(ExitClass::Sphere));
    let p = p_lid + p_sphere;
    Ok(ConeStats {
        y2: y[1],
        paths,
        p_lid,
        p_sphere,
        p_side: count(ExitClass::Side),
        p_bottom: count(ExitClass::Bottom),
        se: (p * (1.0 - p) / m).sqrt(),
        censored,
    })
}

/// Smallest power of two `C` in `[c_min, c_max]` whose escape probability
/// from `Sigma_y` at `y_2` reaches `target`.
pub fn tune_big_c(y2: f64, nu: f64, target: f64, paths: usize, params: &DriftParams, rule: &StepRule, seed: u64, c_range: (f64, f64)) -> Result<(f64, ConeStats)> {
    let cone = ConeSpec::scaled(nu, y2, params.alpha)?;
    let y = probe_point(y2, params.n);
    let mut c = c_range.0;
    while c <= c_range.1 {
        let stats = exit_side_statistics(&y, &cone, paths, &params.with_big_c(c), rule, seed)?;
        if stats.p_escape() >= target {
            return Ok((c, stats));
        }
        c *= 2.0;
    }
    Err(Error::OutOfRange {
        what: "tuned C",
        value: c,
        range: "no power of two in the search range reaches the target",
    })
}

/// Empirical `P(sup_{s <= t} |B_s| >= a)` and the bound
/// `(4n/sqrt(2 pi)) exp(-a^2/(2 n t))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SupCheck {
    pub a: f64,
    pub t: f64,
    pub n: usize,
    pub tail: f64,
    pub se: f64,
    pub bound: f64,
}

impl SupCheck {
    pub fn holds(&self) -> bool {
        self.tail <= self.bound + 3.0 * self.se
    }
}

/// Number of Euler steps per Brownian path in [`brownian_sup_check`].
pub const SUP_STEPS: usize = 512;

pub fn brownian_sup_check(a: f64, t: f64, n: usize, paths: usize, seed: u64) -> Result<SupCheck> {
    if !(a > 0.0 && t > 0.0) || n == 0 || paths < 2 {
        return Err(Error::InvalidParams(vec![format!(
            "need a > 0, t > 0, n >= 1, paths >= 2; got a = {a}, t = {t}, n = {n}, paths = {paths}"
        )]));
    }
    let dt = t / SUP_STEPS as f64;
    let hits: usize = (0..paths as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = path_rng(seed, i);
            let mut b = vec![0.0; n];
            for _ in 0..SUP_STEPS {
                for v in b.iter_mut() {
                    let g: f64 = rng.sample(StandardNormal);
                    *v += dt.sqrt() * g;
                }
                if norm2(&b) >= a * a {
                    return 1;
                }
            }
            0
        })
        .sum();
    let tail = hits as f64 / paths as f64;
    Ok(SupCheck {
        a,
        t,
        n,
        tail,
        se: (tail * (1.0 - tail) / paths as f64).sqrt(),
        bound: 4.0 * n as f64 / (2.0 * PI).sqrt() * (-a * a / (2.0 * n as f64 * t)).exp(),
    })
}

/// Harmonic extension of `gamma` at `(0, p2, 0)` in three dimensions, the
/// `C = 0` reference.
pub fn harmonic_control(p2: f64) -> Result<f64> {
    if !(p2.abs() < 1.0) {
        return Err(Error::OutOfRange {
            what: "p2",
            value: p2,
            range: "(-1, 1)",
        });
    }
    // Poisson kernel integrated over the circles x_2 = s
    let kernel = |s: f64| (1.0 - p2 * p2) / (2.0 * (1.0 + p2 * p2 - 2.0 * p2 * s).powf(1.5)) * gamma_of(s);
    let rule = Rule::new(20)?;
    let mut edges = vec![-1.0, -0.5, 0.5, 1.0];
    // resolve the kernel peak at s = 1 for p2 near 1
    let mut w = 0.5;
    while w > (1.0 - p2.abs()) * 1e-3 {
        w *= 0.5;
        edges.push(1.0 - w);
        edges.push(-1.0 + w);
    }
    edges.sort_by(f64::total_cmp);
    edges.dedup();
    Ok(rule.composite(&edges).iter().map(|(s, wt)| wt * kernel(*s)).sum())
}
