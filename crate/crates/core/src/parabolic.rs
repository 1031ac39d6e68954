//! Monotone finite differences for `d_t v - Delta v + (u . grad) v = 0` on
//! `D_n = [0,2] x [-2,2] x S^{n-2}` and for the toy model with the extra
//! `2 r^{-1} d_r v` term.
//!
//! The grid is vertex based: `r_i = i h_r`, `z_j = -2 + j h_z`,
//! `theta_k = -pi/2 + k h_theta`. One step is an explicit `(r, z)` update
//! followed by an implicit solve in `theta`:
//!
//! * advection is first-order upwind with face fluxes taken from differences
//!   of the stream function at cell corners, so the discrete field is exactly
//!   divergence free;
//! * `(r, z)` diffusion is the weighted conservative stencil of
//!   `r^{2-n} d_r (r^{n-2} d_r) + d_zz`;
//! * the angular term `r^{-2}(d_theta^2 + (n-3) cot(theta) d_theta)` is
//!   backward Euler, which keeps the step monotone near the axis.
//!
//! For `n = 3` and data that is even in `theta` and odd under the mirror
//! `theta -> pi - theta`, the angular solve is diagonal in the odd cosine
//! modes and [`run`] evolves those modes directly.

use std::f64::consts::PI;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::drift::{h_inverse, h_profile, ns_core_stream, smoothstep, stream_psi};
use crate::error::{Error, Result};
use crate::mixedcoord::DriftParams;
use crate::output::{csv_row, write_header};
use crate::subsolution::{centered_angle, eta, phi};
use crate::verify::{certify_c0, R0, certify_subsolution_f, inverse_square_profile_integral};

/// Tolerance of the discrete maximum principle.
pub const TOL_MAX_PRINCIPLE: f64 = 1e-9;
/// Tolerance of the mirror anti-symmetry.
pub const TOL_ANTISYMMETRY: f64 = 1e-12;
/// Tolerance of the sign of `v` on `|theta| <= pi/2`.
pub const TOL_SIGN: f64 = 1e-9;
/// Slack of the comparison with the subsolution, relative to `max|v_0|`.
pub const COMPARISON_SLACK: f64 = 0.05;
/// Frozen probe floor: half the smallest probe of the first full-grid sweep
/// (`1.03e-4` at `delta = 0.05`).
pub const KAPPA_NUM: f64 = 5e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Model {
    Plain,
    NsToy,
}

/// How [`run`] advances the field.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Cosine modes when `n = 3`, the full grid otherwise.
    Auto,
    Modal,
    Grid,
}

/// Number of intervals in `r`, `z` and `theta`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridSpec {
    pub nr: usize,
    pub nz: usize,
    pub nth: usize,
}

impl GridSpec {
    pub fn new(nr: usize, nz: usize, nth: usize) -> Result<Self> {
        let g = Self { nr, nz, nth };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        let mut v = Vec::new();
        if self.nr < 4 {
            v.push(format!("nr = {} must be at least 4", self.nr));
        }
        if self.nz < 4 || self.nz % 2 != 0 {
            v.push(format!("nz = {} must be even and at least 4", self.nz));
        }
        if self.nth < 8 || self.nth % 4 != 0 {
            v.push(format!("ntheta = {} must be a multiple of 4 and at least 8", self.nth));
        }
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidParams(v))
        }
    }

    pub fn hr(&self) -> f64 {
        2.0 / self.nr as f64
    }

    pub fn hz(&self) -> f64 {
        4.0 / self.nz as f64
    }

    pub fn hth(&self) -> f64 {
        2.0 * PI / self.nth as f64
    }

    pub fn r(&self, i: usize) -> f64 {
        i as f64 * self.hr()
    }

    pub fn z(&self, j: usize) -> f64 {
        -2.0 + j as f64 * self.hz()
    }

    pub fn theta(&self, k: usize) -> f64 {
        -PI / 2.0 + k as f64 * self.hth()
    }

    /// Index of `pi - theta_k`.
    pub fn mirror(&self, k: usize) -> usize {
        (self.nth - k) % self.nth
    }

    /// Nodes per `theta` slice.
    pub fn slice_len(&self) -> usize {
        (self.nr + 1) * (self.nz + 1)
    }

    pub fn len(&self) -> usize {
        self.slice_len() * self.nth
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (k * (self.nz + 1) + j) * (self.nr + 1) + i
    }

    /// Whether `theta_k` lies in `[-pi/2, pi/2]`.
    pub fn in_positive_sector(&self, k: usize) -> bool {
        k <= self.nth / 2
    }
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            nr: 192,
            nz: 384,
            nth: 64,
        }
    }
}

/// Values on the `(r, z, theta)` grid at time `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridField {
    pub grid: GridSpec,
    pub t: f64,
    pub values: Vec<f64>,
}

impl GridField {
    pub fn zeros(grid: GridSpec, t: f64) -> Self {
        Self {
            grid,
            t,
            values: vec![0.0; grid.len()],
        }
    }

    /// Samples `f(r, z, theta)` at interior nodes; the axis and `dD` stay 0.
    pub fn from_fn<F: Fn(f64, f64, f64) -> f64>(grid: GridSpec, t: f64, f: F) -> Self {
        let mut out = Self::zeros(grid, t);
        for k in 0..grid.nth {
            for j in 1..grid.nz {
                for i in 1..grid.nr {
                    out.values[grid.index(i, j, k)] = f(grid.r(i), grid.z(j), grid.theta(k));
                }
            }
        }
        out
    }

    pub fn at(&self, i: usize, j: usize, k: usize) -> f64 {
        self.values[self.grid.index(i, j, k)]
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Discrete `L^2` norm with the weights the scheme is stable in.
    pub fn l2(&self, n: usize) -> f64 {
        let w = cell_weights(&self.grid, n);
        let g = &self.grid;
        let mut s = 0.0;
        for k in 0..g.nth {
            for j in 0..=g.nz {
                for (i, wi) in w.iter().enumerate() {
                    let v = self.at(i, j, k);
                    s += wi * v * v;
                }
            }
        }
        (s * g.hz() * g.hth()).sqrt()
    }

    /// `max |v(theta) + v(pi - theta)|`.
    pub fn asym_defect(&self) -> f64 {
        let g = &self.grid;
        let s = g.slice_len();
        let mut d: f64 = 0.0;
        for k in 0..g.nth {
            let m = g.mirror(k);
            let (a, b) = (&self.values[k * s..(k + 1) * s], &self.values[m * s..(m + 1) * s]);
            for (x, y) in a.iter().zip(b) {
                d = d.max((x + y).abs());
            }
        }
        d
    }

    /// Minimum over `|theta| <= pi/2`.
    pub fn min_pos_sector(&self) -> f64 {
        let g = &self.grid;
        let s = g.slice_len();
        (0..g.nth)
            .filter(|&k| g.in_positive_sector(k))
            .flat_map(|k| self.values[k * s..(k + 1) * s].iter())
            .fold(f64::INFINITY, |m, &v| m.min(v))
    }

    /// Trilinear interpolation, periodic in `theta`.
    pub fn probe(&self, r: f64, z: f64, theta: f64) -> Result<f64> {
        let g = &self.grid;
        if !(0.0..=2.0).contains(&r) || !(-2.0..=2.0).contains(&z) {
            return Err(Error::OutOfRange {
                what: "probe (r, z)",
                value: r.hypot(z),
                range: "[0,2] x [-2,2]",
            });
        }
        let (i, fr) = cell(r / g.hr(), g.nr);
        let (j, fz) = cell((z + 2.0) / g.hz(), g.nz);
        let s = (theta + PI / 2.0).rem_euclid(2.0 * PI) / g.hth();
        let k = (s.floor() as usize).min(g.nth - 1);
        let ft = s - k as f64;
        let k1 = (k + 1) % g.nth;
        let mut out = 0.0;
        for (di, wi) in [(0, 1.0 - fr), (1, fr)] {
            for (dj, wj) in [(0, 1.0 - fz), (1, fz)] {
                for (kk, wk) in [(k, 1.0 - ft), (k1, ft)] {
                    let w = wi * wj * wk;
                    if w != 0.0 {
                        out += w * self.at(i + di, j + dj, kk);
                    }
                }
            }
        }
        Ok(out)
    }
}

fn cell(x: f64, n: usize) -> (usize, f64) {
    let i = (x.floor().max(0.0) as usize).min(n - 1);
    (i, x - i as f64)
}

/// `int r^{n-2} dr` over the dual cell of each `r_i`, the axis cell included.
fn cell_weights(g: &GridSpec, n: usize) -> Vec<f64> {
    let hr = g.hr();
    let p = (n - 1) as f64;
    (0..=g.nr)
        .map(|i| {
            let lo = ((i as f64 - 0.5) * hr).max(0.0);
            let hi = ((i as f64 + 0.5) * hr).min(2.0);
            (hi.powf(p) - lo.powf(p)) / p
        })
        .collect()
}

/// Everything that defines a solver run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    /// `params.epsilon` is the run's `eps`; the drift is truncated at `eps/2`.
    pub params: DriftParams,
    pub grid: GridSpec,
    pub model: Model,
    /// Probe radius; the run ends at `h^{-1}(delta)` unless `t_final` is set.
    pub delta: f64,
    /// Support radius of the subsolution bump.
    pub r0: f64,
    /// Fraction of the monotonicity limit used as the time step.
    pub cfl: f64,
    /// `false` replaces the drift by zero (the toy model keeps its extra term).
    pub drift: bool,
    pub t_final: Option<f64>,
    /// Number of diagnostic rows after the initial one.
    pub records: usize,
    pub method: Method,
    /// Subsolution rate; estimated from `r0` when absent.
    pub c0: Option<f64>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            params: DriftParams::default().with_epsilon(0.1),
            grid: GridSpec::default(),
            model: Model::Plain,
            delta: 0.1,
            r0: R0,
            cfl: 0.9,
            drift: true,
            t_final: None,
            records: 100,
            method: Method::Auto,
            c0: None,
        }
    }
}

impl SolverConfig {
    pub fn violations(&self) -> Vec<String> {
        let mut v = self.params.violations();
        if let Err(Error::InvalidParams(g)) = self.grid.validate() {
            v.extend(g);
        }
        if self.drift && !(self.params.epsilon > 0.0) {
            v.push(format!("eps = {} must be positive", self.params.epsilon));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            v.push(format!("delta = {} must lie in (0, 1)", self.delta));
        }
        if !(self.r0 > 0.0 && self.r0 < 0.25) {
            v.push(format!("r0 = {} must lie in (0, 1/4)", self.r0));
        }
        if !(self.cfl > 0.0 && self.cfl <= 1.0) {
            v.push(format!("cfl = {} must lie in (0, 1]", self.cfl));
        }
        if self.model == Model::NsToy && self.params.n != 3 {
            v.push(format!("the toy model needs n = 3, got {}", self.params.n));
        }
        if self.method == Method::Modal && self.params.n != 3 {
            v.push(format!("the modal method needs n = 3, got {}", self.params.n));
        }
        if self.records == 0 {
            v.push("records must be positive".into());
        }
        let t_max = 1.0 / (2.0 + self.params.alpha);
        if let Some(t) = self.t_final {
            if !(t > 0.0 && t < t_max) {
                v.push(format!("t_final = {t} must lie in (0, {t_max})"));
            }
        }
        v
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidParams(v))
        }
    }

    pub fn t_end(&self) -> Result<f64> {
        match self.t_final {
            Some(t) => Ok(t),
            None => h_inverse(self.delta, self.params.alpha),
        }
    }

    fn uses_modes(&self) -> bool {
        match self.method {
            Method::Auto => self.params.n == 3,
            Method::Modal => true,
            Method::Grid => false,
        }
    }
}

/// `v_0 = g(., 0) - g(mirror, 0)` on the grid.
///
/// The angular factor is evaluated once per node and paired with its mirror
/// node, so the field is exactly odd under `theta -> pi - theta`.
pub fn build_initial_data(config: &SolverConfig) -> Result<GridField> {
    config.validate()?;
    let cert = certify_subsolution_f(config.params.n, config.params.alpha, &[config.r0], (400, 400))?;
    if !cert.pass {
        return Err(Error::UncertifiedRadius(config.r0));
    }
    let g = config.grid;
    let ang: Vec<f64> = (0..g.nth)
        .map(|k| eta(8.0 * centered_angle(g.theta(k)) / PI).0)
        .collect();
    let mut out = GridField::zeros(g, 0.0);
    for j in 1..g.nz {
        for i in 1..g.nr {
            let p = phi(g.r(i), g.z(j), config.r0);
            if p == 0.0 {
                continue;
            }
            for k in 0..g.nth {
                out.values[g.index(i, j, k)] = p * (ang[k] - ang[g.mirror(k)]);
            }
        }
    }
    Ok(out)
}

/// Stream-function values at the cell corners `(r_{i+1/2}, z_{j+1/2})`.
#[derive(Debug, Clone)]
enum DriftSource {
    Zero,
    Static(Vec<f64>),
    /// Toy-model core `chi (Phi_0 + Psi_eps)` at the corners; the time cutoff
    /// is applied per step.
    Ns(Vec<f64>),
}

/// Discrete operator of one configuration.
#[derive(Debug, Clone)]
pub struct Operator {
    grid: GridSpec,
    n: usize,
    alpha: f64,
    model: Model,
    source: DriftSource,
    weights: Vec<f64>,
    cached: Option<Stencil>,
}

/// Per-node rates `(east, west, north, south)` of the explicit `(r, z)` part.
#[derive(Debug, Clone)]
struct Stencil {
    rates: Vec<[f64; 4]>,
    max_rate: f64,
}

impl Operator {
    pub fn new(config: &SolverConfig) -> Result<Self> {
        config.validate()?;
        let g = config.grid;
        let drift_params = DriftParams {
            epsilon: 0.5 * config.params.epsilon,
            ..config.params
        };
        let corners = |f: &dyn Fn(f64, f64) -> Result<f64>| -> Result<Vec<f64>> {
            let mut s = vec![0.0; g.nr * g.nz];
            for j in 0..g.nz {
                for i in 0..g.nr {
                    s[j * g.nr + i] = f(g.r(i) + 0.5 * g.hr(), g.z(j) + 0.5 * g.hz())?;
                }
            }
            Ok(s)
        };
        let source = match (config.drift, config.model) {
            (false, _) => DriftSource::Zero,
            (true, Model::Plain) => DriftSource::Static(corners(&|r, z| Ok(stream_psi(r, z, &drift_params)))?),
            (true, Model::NsToy) => DriftSource::Ns(corners(&|r, z| ns_core_stream(r, z, &drift_params))?),
        };
        let mut op = Self {
            grid: g,
            n: config.params.n,
            alpha: config.params.alpha,
            model: config.model,
            source,
            weights: cell_weights(&g, config.params.n),
            cached: None,
        };
        if !op.is_time_dependent() {
            op.cached = Some(op.stencil(0.0)?);
        }
        Ok(op)
    }

    fn is_time_dependent(&self) -> bool {
        matches!(self.source, DriftSource::Ns(_))
    }

    /// Total advecting stream at the corners at time `t`.
    fn stream(&self, t: f64) -> Result<Option<Vec<f64>>> {
        let g = &self.grid;
        let mut s = match &self.source {
            DriftSource::Zero => None,
            DriftSource::Static(s) => Some(s.clone()),
            DriftSource::Ns(core) => {
                let h = h_profile(t, self.alpha)?;
                if h <= 0.0 {
                    return Err(Error::OutOfRange {
                        what: "t",
                        value: t,
                        range: "[0, 1/(2+alpha))",
                    });
                }
                let cut: Vec<f64> = (0..g.nr)
                    .map(|i| smoothstep(8.0 * (g.r(i) + 0.5 * g.hr()) / h - 1.0))
                    .collect();
                Some(
                    core.iter()
                        .enumerate()
                        .map(|(idx, c)| cut[idx % g.nr] * c)
                        .collect(),
                )
            }
        };
        if self.model == Model::NsToy {
            // 2 r^{-1} d_r is advection by (2/r, 0), whose stream is -2z
            let s = s.get_or_insert_with(|| vec![0.0; g.nr * g.nz]);
            for j in 0..g.nz {
                let z = g.z(j) + 0.5 * g.hz();
                for i in 0..g.nr {
                    s[j * g.nr + i] -= 2.0 * z;
                }
            }
        }
        Ok(s)
    }

    fn stencil(&self, t: f64) -> Result<Stencil> {
        let g = &self.grid;
        let (hr, hz) = (g.hr(), g.hz());
        let nw = self.n as i32 - 2;
        let stream = self.stream(t)?;
        let corner = |i: usize, j: usize| stream.as_ref().map_or(0.0, |s| s[j * g.nr + i]);
        let mut rates = vec![[0.0; 4]; g.slice_len()];
        let mut max_rate: f64 = 0.0;
        for j in 1..g.nz {
            for i in 1..g.nr {
                let w = self.weights[i];
                let vol = w * hz;
                let r_e = (i as f64 + 0.5) * hr;
                let r_w = (i as f64 - 0.5) * hr;
                let mut ce = r_e.powi(nw) / (hr * w);
                let mut cw = r_w.powi(nw) / (hr * w);
                let mut cn = 1.0 / (hz * hz);
                let mut cs = cn;
                // outward fluxes through the east and north faces, inward
                // through the west and south faces
                let f_e = -(corner(i, j) - corner(i, j - 1));
                let f_w = -(corner(i - 1, j) - corner(i - 1, j - 1));
                let f_n = corner(i, j) - corner(i - 1, j);
                let f_s = corner(i, j - 1) - corner(i - 1, j - 1);
                ce += (-f_e).max(0.0) / vol;
                cw += f_w.max(0.0) / vol;
                cn += (-f_n).max(0.0) / vol;
                cs += f_s.max(0.0) / vol;
                let sum = ce + cw + cn + cs;
                if !sum.is_finite() {
                    return Err(Error::NonFinite {
                        r: g.r(i),
                        z: g.z(j),
                        value: sum,
                    });
                }
                max_rate = max_rate.max(sum);
                rates[j * (g.nr + 1) + i] = [ce, cw, cn, cs];
            }
        }
        Ok(Stencil { rates, max_rate })
    }

    fn stencil_at(&self, t: f64) -> Result<std::borrow::Cow<'_, Stencil>> {
        match &self.cached {
            Some(s) => Ok(std::borrow::Cow::Borrowed(s)),
            None => Ok(std::borrow::Cow::Owned(self.stencil(t)?)),
        }
    }

    /// Largest monotone time step at time `t`.
    pub fn dt_limit(&self, t: f64) -> Result<f64> {
        Ok(1.0 / self.stencil_at(t)?.max_rate)
    }

    /// One step of the full-grid scheme; refuses `dt` above the limit.
    pub fn step(&self, state: &GridField, dt: f64) -> Result<GridField> {
        let g = self.grid;
        if state.grid != g {
            return Err(Error::InvalidParams(vec!["field grid does not match the operator".into()]));
        }
        let st = self.stencil_at(state.t)?;
        check_dt(dt, st.max_rate)?;
        let s = g.slice_len();
        let mut out = GridField::zeros(g, state.t + dt);
        out.values
            .par_chunks_mut(s)
            .zip(state.values.par_chunks(s))
            .for_each(|(dst, src)| explicit_rz(&g, &st.rates, src, dst, dt));
        self.angular_solve(&mut out.values, dt)?;
        Ok(out)
    }

    /// Backward Euler in `theta` along every `(r_i, z_j)` column.
    fn angular_solve(&self, values: &mut [f64], dt: f64) -> Result<()> {
        let g = &self.grid;
        let s = g.slice_len();
        let mut col = vec![0.0; g.nth];
        for j in 1..g.nz {
            for i in 1..g.nr {
                let (lo, di, up) = self.angular_matrix(i, dt);
                for (k, c) in col.iter_mut().enumerate() {
                    *c = values[k * s + j * (g.nr + 1) + i];
                }
                let x = cyclic_tridiagonal(&lo, &di, &up, &col)?;
                for (k, v) in x.into_iter().enumerate() {
                    values[k * s + j * (g.nr + 1) + i] = v;
                }
            }
        }
        Ok(())
    }

    /// Rows `(lower, diagonal, upper)` of `I - dt r^{-2} L_theta` at `r_i`.
    fn angular_matrix(&self, i: usize, dt: f64) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let g = &self.grid;
        let h = g.hth();
        let c = dt / (g.r(i) * g.r(i));
        let m = (self.n - 3) as f64;
        let mut lo = vec![0.0; g.nth];
        let mut di = vec![0.0; g.nth];
        let mut up = vec![0.0; g.nth];
        for k in 0..g.nth {
            let (a, b) = if m == 0.0 {
                (1.0 / (h * h), 1.0 / (h * h))
            } else if k == g.nth / 4 || k == 3 * g.nth / 4 {
                // pole: cot(theta) d_theta -> d_theta^2 on theta-even data
                let d = (m + 1.0) / (h * h);
                (d, d)
            } else {
                let ct = m / g.theta(k).tan();
                let (a, b) = (1.0 / (h * h) - ct / (2.0 * h), 1.0 / (h * h) + ct / (2.0 * h));
                if a >= 0.0 && b >= 0.0 {
                    (a, b)
                } else if ct > 0.0 {
                    (1.0 / (h * h), 1.0 / (h * h) + ct / h)
                } else {
                    (1.0 / (h * h) - ct / h, 1.0 / (h * h))
                }
            };
            lo[k] = -c * a;
            up[k] = -c * b;
            di[k] = 1.0 + c * (a + b);
        }
        (lo, di, up)
    }
}

fn check_dt(dt: f64, max_rate: f64) -> Result<()> {
    let limit = 1.0 / max_rate;
    if !(dt > 0.0) || dt > limit * (1.0 + 1e-12) {
        return Err(Error::CflViolation { dt, limit });
    }
    Ok(())
}

/// Explicit `(r, z)` update of one slice; axis and boundary nodes stay 0.
fn explicit_rz(g: &GridSpec, rates: &[[f64; 4]], src: &[f64], dst: &mut [f64], dt: f64) {
    let w = g.nr + 1;
    for j in 1..g.nz {
        let row = j * w;
        for i in 1..g.nr {
            let p = row + i;
            let v = src[p];
            let [ce, cw, cn, cs] = rates[p];
            dst[p] = v + dt * (ce * (src[p + 1] - v) + cw * (src[p - 1] - v) + cn * (src[p + w] - v) + cs * (src[p - w] - v));
        }
    }
}

/// Solves the periodic tridiagonal system `lo[k] x[k-1] + di[k] x[k] + up[k] x[k+1] = b[k]`.
fn cyclic_tridiagonal(lo: &[f64], di: &[f64], up: &[f64], b: &[f64]) -> Result<Vec<f64>> {
    let n = b.len();
    // Sherman-Morrison on the corner entries lo[0] and up[n-1]
    let gamma = -di[0];
    let mut d = di.to_vec();
    d[0] -= gamma;
    d[n - 1] -= lo[0] * up[n - 1] / gamma;
    let x = thomas(lo, &d, up, b)?;
    let mut u = vec![0.0; n];
    u[0] = gamma;
    u[n - 1] = up[n - 1];
    let q = thomas(lo, &d, up, &u)?;
    let vx = x[0] + lo[0] / gamma * x[n - 1];
    let vq = q[0] + lo[0] / gamma * q[n - 1];
    let f = vx / (1.0 + vq);
    Ok(x.iter().zip(&q).map(|(a, b)| a - f * b).collect())
}

fn thomas(lo: &[f64], di: &[f64], up: &[f64], b: &[f64]) -> Result<Vec<f64>> {
    let n = b.len();
    let mut c = vec![0.0; n];
    let mut x = vec![0.0; n];
    let mut m = di[0];
    c[0] = up[0] / m;
    x[0] = b[0] / m;
    for k in 1..n {
        m = di[k] - lo[k] * c[k - 1];
        if m == 0.0 || !m.is_finite() {
            return Err(Error::NonFinite {
                r: f64::NAN,
                z: f64::NAN,
                value: m,
            });
        }
        c[k] = up[k] / m;
        x[k] = (b[k] - lo[k] * x[k - 1]) / m;
    }
    for k in (0..n - 1).rev() {
        x[k] -= c[k] * x[k + 1];
    }
    Ok(x)
}

/// Odd cosine modes `cos(m theta)`, `m = 1, 3, ..., nth/2 - 1`.
struct Modes {
    orders: Vec<usize>,
    /// `cos(m theta_k)` per mode, per node.
    table: Vec<Vec<f64>>,
    /// Eigenvalues of the periodic second difference.
    eig: Vec<f64>,
}

impl Modes {
    fn new(g: &GridSpec) -> Self {
        let h = g.hth();
        let orders: Vec<usize> = (1..g.nth / 2).step_by(2).collect();
        let table = orders
            .iter()
            .map(|&m| (0..g.nth).map(|k| (m as f64 * g.theta(k)).cos()).collect())
            .collect();
        let eig = orders
            .iter()
            .map(|&m| 4.0 / (h * h) * (0.5 * m as f64 * h).sin().powi(2))
            .collect();
        Self { orders, table, eig }
    }

    fn analyse(&self, f: &GridField) -> Result<Vec<Vec<f64>>> {
        let g = &f.grid;
        let s = g.slice_len();
        let scale = 2.0 / g.nth as f64;
        let coeffs: Vec<Vec<f64>> = self
            .table
            .iter()
            .map(|cosines| {
                let mut a = vec![0.0; s];
                for (k, c) in cosines.iter().enumerate() {
                    for (ap, v) in a.iter_mut().zip(&f.values[k * s..(k + 1) * s]) {
                        *ap += scale * c * v;
                    }
                }
                a
            })
            .collect();
        let back = self.synthesise(g, &coeffs, f.t);
        let err = back
            .values
            .iter()
            .zip(&f.values)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        if err > 1e-12 * f.max_abs().max(1.0) {
            return Err(Error::InvalidParams(vec![format!(
                "data is not even in theta and odd under the mirror (mode residual {err:.3e})"
            )]));
        }
        Ok(coeffs)
    }

    fn synthesise(&self, g: &GridSpec, coeffs: &[Vec<f64>], t: f64) -> GridField {
        let s = g.slice_len();
        let mut out = GridField::zeros(*g, t);
        out.values.par_chunks_mut(s).enumerate().for_each(|(k, dst)| {
            for (a, cosines) in coeffs.iter().zip(&self.table) {
                let c = cosines[k];
                for (d, x) in dst.iter_mut().zip(a) {
                    *d += c * x;
                }
            }
        });
        out
    }
}

/// One diagnostic row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeRow {
    pub t: f64,
    pub probe_pos: f64,
    pub probe_neg: f64,
    pub max_abs: f64,
    pub l2: f64,
    pub asym_defect: f64,
    pub min_pos_sector: f64,
}

impl ProbeRow {
    fn of(f: &GridField, delta: f64, n: usize) -> Result<Self> {
        Ok(Self {
            t: f.t,
            probe_pos: f.probe(delta, 0.0, 0.0)?,
            probe_neg: f.probe(delta, 0.0, PI)?,
            max_abs: f.max_abs(),
            l2: f.l2(n),
            asym_defect: f.asym_defect(),
            min_pos_sector: f.min_pos_sector(),
        })
    }
}

/// Output of [`run`].
#[derive(Debug, Clone)]
pub struct ProbeSeries {
    pub config: SolverConfig,
    pub rows: Vec<ProbeRow>,
    pub steps: usize,
    pub initial_max: f64,
    /// `(t, max (floor - v))` at each recorded time up to `h^{-1}(eps)`;
    /// empty unless the plain model runs with its drift.
    pub comparison: Vec<[f64; 2]>,
    pub final_field: GridField,
}

impl ProbeSeries {
    pub fn last(&self) -> &ProbeRow {
        self.rows.last().expect("a series has at least the initial row")
    }

    /// Every invariant the run broke, as readable messages.
    pub fn invariant_violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        let mut prev_l2 = f64::INFINITY;
        for row in &self.rows {
            if row.max_abs > self.initial_max + TOL_MAX_PRINCIPLE {
                out.push(format!("t = {}: max|v| = {} exceeds {}", row.t, row.max_abs, self.initial_max));
            }
            if row.asym_defect > TOL_ANTISYMMETRY {
                out.push(format!("t = {}: anti-symmetry defect {:.3e}", row.t, row.asym_defect));
            }
            if row.min_pos_sector < -TOL_SIGN {
                out.push(format!("t = {}: v = {:.3e} < 0 on |theta| <= pi/2", row.t, row.min_pos_sector));
            }
            if row.l2 > prev_l2 * (1.0 + 1e-12) {
                out.push(format!("t = {}: L2 norm grew from {} to {}", row.t, prev_l2, row.l2));
            }
            prev_l2 = row.l2;
        }
        out
    }

    /// Worst comparison defect relative to `max|v0|`.
    pub fn comparison_ratio(&self) -> Option<f64> {
        self.comparison
            .iter()
            .map(|c| c[1] / self.initial_max)
            .reduce(f64::max)
    }

    /// CSV with a provenance header built from `manifest` and `seed`.
    pub fn write_csv<W: Write, T: Serialize>(&self, out: &mut W, manifest: &T, seed: u64) -> Result<()> {
        write_header(out, manifest, seed)?;
        writeln!(out, "t,probe_pos,probe_neg,max_abs,l2,asym_defect,min_pos_sector")?;
        for r in &self.rows {
            writeln!(
                out,
                "{}",
                csv_row(&[r.t, r.probe_pos, r.probe_neg, r.max_abs, r.l2, r.asym_defect, r.min_pos_sector])
            )?;
        }
        Ok(())
    }
}

/// Runs the solver from [`build_initial_data`] to `config.t_end()`.
pub fn run(config: &SolverConfig) -> Result<ProbeSeries> {
    let v0 = build_initial_data(config)?;
    run_from(config, v0)
}

/// Runs the solver from arbitrary data vanishing on the axis and on `dD`.
pub fn run_from(config: &SolverConfig, v0: GridField) -> Result<ProbeSeries> {
    let op = Operator::new(config)?;
    let g = config.grid;
    let n = config.params.n;
    let t_end = config.t_end()?;
    let initial_max = v0.max_abs();
    let mut rows = vec![ProbeRow::of(&v0, config.delta, n)?];
    let record_dt = t_end / config.records as f64;
    let mut next_record = record_dt;
    let mut steps = 0;
    let floor = FloorTracker::new(config)?;
    let mut comparison = Vec::new();

    let check = |row: &ProbeRow| -> Result<()> {
        if row.max_abs > initial_max + TOL_MAX_PRINCIPLE || !row.max_abs.is_finite() {
            return Err(Error::Instability {
                t: row.t,
                max_abs: row.max_abs,
                initial_max,
            });
        }
        Ok(())
    };

    let final_field = if config.uses_modes() {
        let modes = Modes::new(&g);
        let mut coeffs = modes.analyse(&v0)?;
        let mut t = 0.0;
        let s = g.slice_len();
        while t < t_end {
            let st = op.stencil_at(t)?;
            let dt = (config.cfl / st.max_rate).min(t_end - t);
            check_dt(dt, st.max_rate)?;
            let mut next = vec![vec![0.0; s]; coeffs.len()];
            next.par_iter_mut()
                .zip(coeffs.par_iter())
                .zip(modes.eig.par_iter())
                .for_each(|((dst, src), &lam)| {
                    explicit_rz(&g, &st.rates, src, dst, dt);
                    for j in 1..g.nz {
                        for i in 1..g.nr {
                            let r = g.r(i);
                            dst[j * (g.nr + 1) + i] /= 1.0 + dt * lam / (r * r);
                        }
                    }
                });
            coeffs = next;
            steps += 1;
            t = if t_end - t <= dt { t_end } else { t + dt };
            if t >= next_record || t == t_end {
                let f = modes.synthesise(&g, &coeffs, t);
                let row = ProbeRow::of(&f, config.delta, n)?;
                check(&row)?;
                rows.push(row);
                if let Some(d) = FloorTracker::defect(&floor, &f)? {
                    comparison.push([t, d]);
                }
                while next_record <= t {
                    next_record += record_dt;
                }
            }
        }
        debug_assert_eq!(modes.orders.len(), coeffs.len());
        modes.synthesise(&g, &coeffs, t)
    } else {
        let mut f = v0;
        while f.t < t_end {
            let limit = op.dt_limit(f.t)?;
            let dt = (config.cfl * limit).min(t_end - f.t);
            let last = t_end - f.t <= dt;
            f = op.step(&f, dt)?;
            if last {
                f.t = t_end;
            }
            steps += 1;
            if f.t >= next_record || f.t == t_end {
                let row = ProbeRow::of(&f, config.delta, n)?;
                check(&row)?;
                rows.push(row);
                if let Some(d) = FloorTracker::defect(&floor, &f)? {
                    comparison.push([f.t, d]);
                }
                while next_record <= f.t {
                    next_record += record_dt;
                }
            }
        }
        f
    };
    Ok(ProbeSeries {
        config: *config,
        rows,
        steps,
        initial_max,
        comparison,
        final_field,
    })
}

struct FloorTracker {
    config: SolverConfig,
    c0: f64,
    t_max: f64,
}

impl FloorTracker {
    fn new(config: &SolverConfig) -> Result<Option<Self>> {
        if config.model != Model::Plain || !config.drift {
            return Ok(None);
        }
        Ok(Some(Self {
            config: *config,
            c0: subsolution_rate(config)?,
            t_max: h_inverse(config.params.epsilon, config.params.alpha)?,
        }))
    }

    fn defect(this: &Option<Self>, v: &GridField) -> Result<Option<f64>> {
        match this {
            Some(s) if v.t <= s.t_max => Ok(Some(comparison_defect(v, &floor_with(&s.config, s.c0, v.t)?))),
            _ => Ok(None),
        }
    }
}

/// The subsolution rate `c0` the configuration uses.
pub fn subsolution_rate(config: &SolverConfig) -> Result<f64> {
    match config.c0 {
        Some(c) => Ok(c),
        None => {
            let e = certify_c0(config.params.n, config.r0, (48, 64, 16))?;
            Ok(e.c0.max(e.refined))
        }
    }
}

/// `exp(-c0 int_0^t h^{-2}) (g(., t) - g(mirror, t))` on the grid.
pub fn subsolution_floor(config: &SolverConfig, t: f64) -> Result<GridField> {
    config.validate()?;
    let t_max = h_inverse(config.params.epsilon.max(f64::MIN_POSITIVE), config.params.alpha)?;
    if !(t >= 0.0 && t <= t_max) {
        return Err(Error::OutOfRange {
            what: "t",
            value: t,
            range: "[0, h^{-1}(eps)]",
        });
    }
    floor_with(config, subsolution_rate(config)?, t)
}

fn floor_with(config: &SolverConfig, c0: f64, t: f64) -> Result<GridField> {
    let decay = (-c0 * inverse_square_profile_integral(t, config.params.alpha)?).exp();
    let h = h_profile(t, config.params.alpha)?;
    let g = config.grid;
    let ang: Vec<f64> = (0..g.nth)
        .map(|k| eta(8.0 * centered_angle(g.theta(k)) / PI).0)
        .collect();
    let mut out = GridField::zeros(g, t);
    for j in 1..g.nz {
        for i in 1..g.nr {
            let p = phi(g.r(i) / h, g.z(j) / h, config.r0);
            if p == 0.0 {
                continue;
            }
            for k in 0..g.nth {
                out.values[g.index(i, j, k)] = decay * p * (ang[k] - ang[g.mirror(k)]);
            }
        }
    }
    Ok(out)
}

/// `max (floor - v)` over `|theta| <= pi/2`.
pub fn comparison_defect(v: &GridField, floor: &GridField) -> f64 {
    let g = &v.grid;
    let mut d = f64::NEG_INFINITY;
    for k in (0..g.nth).filter(|&k| g.in_positive_sector(k)) {
        for j in 0..=g.nz {
            for i in 0..=g.nr {
                d = d.max(floor.at(i, j, k) - v.at(i, j, k));
            }
        }
    }
    d
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn small(model: Model, n: usize) -> SolverConfig {
        let params = DriftParams {
            n,
            ..DriftParams::default()
        }
        .with_epsilon(0.2);
        SolverConfig {
            params,
            grid: GridSpec::new(16, 32, 16).unwrap(),
            model,
            delta: 0.5,
            records: 10,
            t_final: Some(0.02),
            ..SolverConfig::default()
        }
    }

    #[test]
    fn initial_data_values() {
        let cfg = SolverConfig {
            grid: GridSpec::new(32, 64, 16).unwrap(),
            ..SolverConfig::default()
        };
        let v0 = build_initial_data(&cfg).unwrap();
        let g = cfg.grid;
        let (i, j) = (16, 32);
        assert_eq!((g.r(i), g.z(j)), (1.0, 0.0));
        assert_eq!(v0.at(i, j, g.nth / 4), 1.0);
        assert_eq!(v0.at(i, j, 3 * g.nth / 4), -1.0);
        assert_eq!(v0.at(i, j, 0), 0.0);
        assert_eq!(v0.at(i, j, g.nth / 2), 0.0);
        assert_eq!(v0.asym_defect(), 0.0);
        assert_eq!(v0.probe(1.0, 0.0, 0.0).unwrap(), 1.0);
    }

    #[test]
    fn uncertified_radius_is_rejected() {
        let cfg = SolverConfig {
            r0: 0.3,
            ..SolverConfig::default()
        };
        assert!(build_initial_data(&cfg).is_err());
    }

    #[test]
    fn cyclic_solver_matches_dense() {
        let n = 7;
        let lo: Vec<f64> = (0..n).map(|k| -0.3 - 0.01 * k as f64).collect();
        let up: Vec<f64> = (0..n).map(|k| -0.2 + 0.02 * k as f64).collect();
        let di: Vec<f64> = (0..n).map(|k| 2.0 + 0.1 * k as f64).collect();
        let b: Vec<f64> = (0..n).map(|k| (k as f64).sin()).collect();
        let x = cyclic_tridiagonal(&lo, &di, &up, &b).unwrap();
        for k in 0..n {
            let ax = lo[k] * x[(k + n - 1) % n] + di[k] * x[k] + up[k] * x[(k + 1) % n];
            assert_relative_eq!(ax, b[k], epsilon = 1e-14);
        }
    }

    #[test]
    fn oversized_step_is_refused() {
        let cfg = small(Model::Plain, 3);
        let op = Operator::new(&cfg).unwrap();
        let v0 = build_initial_data(&cfg).unwrap();
        let lim = op.dt_limit(0.0).unwrap();
        assert!(matches!(op.step(&v0, 1.5 * lim), Err(Error::CflViolation { .. })));
        assert!(op.step(&v0, lim).is_ok());
    }

    #[test]
    fn modal_and_grid_paths_agree() {
        for model in [Model::Plain, Model::NsToy] {
            let cfg = small(model, 3);
            let a = run(&SolverConfig { method: Method::Modal, ..cfg }).unwrap();
            let b = run(&SolverConfig { method: Method::Grid, ..cfg }).unwrap();
            assert_eq!(a.steps, b.steps);
            let d = a
                .final_field
                .values
                .iter()
                .zip(&b.final_field.values)
                .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
            assert!(d < 1e-13, "{model:?} {d}");
        }
    }

    #[test]
    fn invariants_hold_on_a_short_run() {
        for (model, n) in [(Model::Plain, 3), (Model::NsToy, 3), (Model::Plain, 4)] {
            let s = run(&small(model, n)).unwrap();
            let v = s.invariant_violations();
            // the weighted L2 argument is for n = 3; the others still hold
            let v: Vec<_> = v.into_iter().filter(|m| n == 3 || !m.contains("L2")).collect();
            assert!(v.is_empty(), "{model:?} n={n}: {v:?}");
            assert!(s.last().probe_pos > 0.0 && s.last().probe_neg < 0.0);
        }
    }

    #[test]
    fn pure_diffusion_decreases_l2() {
        let cfg = SolverConfig {
            drift: false,
            ..small(Model::Plain, 3)
        };
        let v0 = GridField::from_fn(cfg.grid, 0.0, |r, z, th| {
            r * (PI * r / 2.0).sin() * (PI * (z + 2.0) / 4.0).sin() * th.cos()
        });
        let op = Operator::new(&cfg).unwrap();
        let dt = op.dt_limit(0.0).unwrap();
        let v1 = op.step(&v0, dt).unwrap();
        assert!(v1.l2(3) < v0.l2(3));
    }

    #[test]
    fn constant_interior_does_not_grow() {
        let cfg = small(Model::Plain, 3);
        let v0 = GridField::from_fn(cfg.grid, 0.0, |_, _, _| 1.0);
        let op = Operator::new(&cfg).unwrap();
        let dt = op.dt_limit(0.0).unwrap();
        let v1 = op.step(&v0, dt).unwrap();
        assert!(v1.max_abs() <= 1.0 + 1e-15);
        assert!(v1.values.iter().all(|&v| v >= -1e-15));
    }

    #[test]
    fn floor_at_time_zero_is_initial_data() {
        let cfg = SolverConfig {
            grid: GridSpec::new(32, 64, 16).unwrap(),
            c0: Some(80.0),
            ..SolverConfig::default()
        };
        let f = subsolution_floor(&cfg, 0.0).unwrap();
        assert_eq!(f, build_initial_data(&cfg).unwrap());
        let t = 0.2;
        let h = h_profile(t, 0.1).unwrap();
        let expect = (-80.0 * inverse_square_profile_integral(t, 0.1).unwrap()).exp();
        let g = cfg.grid;
        let f = subsolution_floor(&cfg, t).unwrap();
        let i = (h / g.hr()).round() as usize;
        let p = phi(g.r(i) / h, 0.0, cfg.r0);
        assert_relative_eq!(f.at(i, g.nz / 2, g.nth / 4), expect * p, max_relative = 1e-14);
        assert!(subsolution_floor(&cfg, 0.475).is_err());
    }
}
