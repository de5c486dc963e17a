//! Linear multiplicative noise `(G(t) v) w = g(t, .) v w` and its Picard solver.
//!
//! Products of fields are formed at Gauss-Legendre nodes on `(0, 1)` and
//! projected back onto the eigenbasis. With `|phi_j|_inf = sqrt(2)` the
//! operator obeys `|G(t)|_{L(H, L2^0)} <= C sup |g(t, .)|` where
//! `C = (2 tr Q)^{1/2}`.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{ensure_len, Error, Result};
use crate::noise::{sample_noise, NoiseSample, QSpec, TimeGrid};
use crate::quad::{composite, GaussLegendre};
use crate::spacetime::{
    solve_with_drive, Drive, KappaPath, LoadSpec, OperatorSpec, SpaceTimeSolution,
};
use crate::spectral::EigenBasis;

/// Time factor `a(t)` of a separable multiplier.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TimeProfile {
    One,
    /// `cos^2(pi (t - center) / width)` on `|t - center| < width / 2`, else 0.
    Bump {
        center: f64,
        width: f64,
    },
    /// `1 + amplitude cos(2 pi t)`, `|amplitude| <= 1`.
    Wave {
        amplitude: f64,
    },
}

impl TimeProfile {
    pub fn eval(&self, t: f64) -> f64 {
        match *self {
            TimeProfile::One => 1.0,
            TimeProfile::Bump { center, width } => {
                let s = (t - center) / width;
                if s.abs() < 0.5 {
                    (std::f64::consts::PI * s).cos().powi(2)
                } else {
                    0.0
                }
            }
            TimeProfile::Wave { amplitude } => 1.0 + amplitude * (std::f64::consts::TAU * t).cos(),
        }
    }
}

/// Space factor `b(xi)` of a separable multiplier.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SpaceProfile {
    One,
    /// `1 + amplitude cos(2 pi xi)`.
    Wave {
        amplitude: f64,
    },
}

impl SpaceProfile {
    pub fn eval(&self, xi: f64) -> f64 {
        match *self {
            SpaceProfile::One => 1.0,
            SpaceProfile::Wave { amplitude } => {
                1.0 + amplitude * (std::f64::consts::TAU * xi).cos()
            }
        }
    }

    pub fn sup_abs(&self) -> f64 {
        match *self {
            SpaceProfile::One => 1.0,
            SpaceProfile::Wave { amplitude } => 1.0 + amplitude.abs(),
        }
    }
}

/// `g(t, xi) = g0 a(t) b(xi)` with temporal integrability exponent `p > 2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GSpec {
    pub g0: f64,
    pub time: TimeProfile,
    pub space: SpaceProfile,
    pub p: f64,
    /// Collocation points; `None` picks `4 J + 16`.
    pub colloc: Option<usize>,
}

impl GSpec {
    pub fn constant(g0: f64, p: f64) -> Result<Self> {
        let g = Self {
            g0,
            time: TimeProfile::One,
            space: SpaceProfile::One,
            p,
            colloc: None,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.p > 2.0) {
            return Err(Error::param("p", "temporal exponent must exceed 2"));
        }
        if !self.g0.is_finite() {
            return Err(Error::param("g0", "must be finite"));
        }
        if let TimeProfile::Bump { width, .. } = self.time {
            if !(width > 0.0) {
                return Err(Error::param("width", "bump width must be positive"));
            }
        }
        if let TimeProfile::Wave { amplitude } = self.time {
            if amplitude.abs() > 1.0 {
                return Err(Error::param(
                    "amplitude",
                    "time wave amplitude must be <= 1",
                ));
            }
        }
        Ok(())
    }

    #[inline]
    pub fn eval(&self, t: f64, xi: f64) -> f64 {
        self.g0 * self.time.eval(t) * self.space.eval(xi)
    }

    pub fn sup_abs_at(&self, t: f64) -> f64 {
        (self.g0 * self.time.eval(t)).abs() * self.space.sup_abs()
    }

    pub fn colloc_points(&self, modes: usize) -> usize {
        self.colloc.unwrap_or(4 * modes + 16)
    }

    /// `(int_0^T (C sup|g(t)|)^p dt)^{1/p}` with `C` from [`multiplier_constant`].
    pub fn kappa_bound(&self, q: &QSpec, t_end: f64) -> f64 {
        let c = multiplier_constant(q);
        let integral = time_integral(|t| (c * self.sup_abs_at(t)).powf(self.p), t_end, self);
        integral.powf(1.0 / self.p)
    }
}

fn time_integral(f: impl Fn(f64) -> f64, t_end: f64, g: &GSpec) -> f64 {
    match g.time {
        // The bump has kinks at its support edges; integrate piecewise.
        TimeProfile::Bump { center, width } => {
            let lo = (center - width / 2.0).clamp(0.0, t_end);
            let hi = (center + width / 2.0).clamp(0.0, t_end);
            let mut acc = 0.0;
            if lo > 0.0 {
                acc += composite(&f, 0.0, lo, 16, 8);
            }
            if hi > lo {
                acc += composite(&f, lo, hi, 256, 8);
            }
            if t_end > hi {
                acc += composite(&f, hi, t_end, 16, 8);
            }
            acc
        }
        _ => composite(f, 0.0, t_end, 256, 8),
    }
}

/// `(sum_k gamma_k sup |phi_k|^2)^{1/2} = (2 tr Q)^{1/2}`.
pub fn multiplier_constant(q: &QSpec) -> f64 {
    (2.0 * q.trace()).sqrt()
}

/// Eigenfunctions tabulated at Gauss-Legendre nodes on `(0, 1)`.
#[derive(Debug, Clone)]
pub struct Collocation {
    modes: usize,
    nodes: Vec<f64>,
    weights: Vec<f64>,
    // phi[i * modes + j] = phi_j(xi_i)
    phi: Vec<f64>,
}

impl Collocation {
    pub fn new(basis: &EigenBasis, points: usize) -> Result<Self> {
        let modes = basis.len();
        if points < 2 * modes + 1 {
            return Err(Error::param(
                "colloc",
                format!(
                    "{points} collocation points cannot resolve {modes} modes (need >= {})",
                    2 * modes + 1
                ),
            ));
        }
        let gl = GaussLegendre::on_interval(points, 0.0, 1.0);
        let mut phi = Vec::with_capacity(points * modes);
        for &x in &gl.nodes {
            for j in 0..modes {
                phi.push(basis.eigenfunction(j, x));
            }
        }
        Ok(Self {
            modes,
            nodes: gl.nodes,
            weights: gl.weights,
            phi,
        })
    }

    pub fn points(&self) -> usize {
        self.nodes.len()
    }

    #[inline]
    fn row(&self, i: usize) -> &[f64] {
        &self.phi[i * self.modes..(i + 1) * self.modes]
    }

    fn field(&self, coeffs: &[f64]) -> Vec<f64> {
        (0..self.points())
            .map(|i| self.row(i).iter().zip(coeffs).map(|(p, c)| p * c).sum())
            .collect()
    }

    #[allow(clippy::needless_range_loop)]
    /// Row-major `J x J` matrix with entry `(j, k) = <g(t) v phi_k, phi_j>`.
    pub fn apply_g(&self, v: &[f64], g: &GSpec, t: f64) -> Result<Vec<f64>> {
        ensure_len("field", self.modes, v.len())?;
        let vals = self.field(v);
        let m = self.modes;
        let mut out = vec![0.0; m * m];
        for i in 0..self.points() {
            let w = self.weights[i] * g.eval(t, self.nodes[i]) * vals[i];
            if w == 0.0 {
                continue;
            }
            let r = self.row(i);
            for j in 0..m {
                let wj = w * r[j];
                for k in 0..m {
                    out[j * m + k] += wj * r[k];
                }
            }
        }
        Ok(out)
    }

    /// `|G(t) v|_{L2^0}^2 = sum_k gamma_k |g v phi_k|_H^2`, integrated in
    /// physical space (no projection).
    #[allow(clippy::needless_range_loop)]
    pub fn l20_norm_sq(&self, v: &[f64], g: &GSpec, q: &QSpec, t: f64) -> Result<f64> {
        ensure_len("field", self.modes, v.len())?;
        ensure_len("Q spectrum", self.modes, q.len())?;
        let vals = self.field(v);
        let mut acc = 0.0;
        for i in 0..self.points() {
            let gv = g.eval(t, self.nodes[i]) * vals[i];
            let s: f64 = self
                .row(i)
                .iter()
                .zip(q.gammas())
                .map(|(p, gam)| gam * p * p)
                .sum();
            acc += self.weights[i] * gv * gv * s;
        }
        Ok(acc)
    }

    /// Drive of one interval from the noise field at the nodes:
    /// `dm_j = <g v dW(.), phi_j>` and likewise for `iW`.
    #[allow(clippy::too_many_arguments)]
    pub fn drive_interval(
        &self,
        v: &[f64],
        g: &GSpec,
        t: f64,
        noise: &NoiseSample,
        n: usize,
        dm: &mut [f64],
        im: &mut [f64],
    ) {
        dm.iter_mut().for_each(|x| *x = 0.0);
        im.iter_mut().for_each(|x| *x = 0.0);
        for i in 0..self.points() {
            let r = self.row(i);
            let mut vi = 0.0;
            let mut dwi = 0.0;
            let mut iwi = 0.0;
            for k in 0..self.modes {
                vi += r[k] * v[k];
                dwi += r[k] * noise.dw(k, n);
                iwi += r[k] * noise.iw(k, n);
            }
            let w = self.weights[i] * g.eval(t, self.nodes[i]) * vi;
            if w == 0.0 {
                continue;
            }
            for j in 0..self.modes {
                dm[j] += w * dwi * r[j];
                im[j] += w * iwi * r[j];
            }
        }
    }
}

/// `T^{(p-2)/p} kappa^2 v_energy`, where `v_energy = sup_t |v(t)|_H^2`.
pub fn holder_bound(v_energy: f64, g: &GSpec, q: &QSpec, t_end: f64) -> Result<f64> {
    g.validate()?;
    let k = g.kappa_bound(q, t_end);
    Ok(t_end.powf((g.p - 2.0) / g.p) * k * k * v_energy)
}

/// Same bound with the exponent `p / (p - 2)` inverted, for comparison.
pub fn holder_bound_inverted(v_energy: f64, g: &GSpec, q: &QSpec, t_end: f64) -> Result<f64> {
    g.validate()?;
    let k = g.kappa_bound(q, t_end);
    Ok(t_end.powf(g.p / (g.p - 2.0)) * k * k * v_energy)
}

/// `int_0^T |G(t)|^2 dt` with the operator norm replaced by its bound
/// `C sup|g(t)|`: the left side of the Hoelder step for `|v(t)|_H = 1`.
pub fn holder_lhs(g: &GSpec, q: &QSpec, t_end: f64) -> f64 {
    let c = multiplier_constant(q);
    time_integral(|t| (c * g.sup_abs_at(t)).powi(2), t_end, g)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PicardOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// Start from this many equal segments instead of one.
    pub initial_segments: usize,
}

impl Default for PicardOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 100,
            initial_segments: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentTrace {
    pub start: usize,
    pub end: usize,
    pub increments: Vec<f64>,
    pub ratios: Vec<f64>,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PicardTrace {
    pub path: u64,
    pub segments: Vec<SegmentTrace>,
}

impl PicardTrace {
    pub fn iterations(&self) -> usize {
        self.segments.iter().map(|s| s.increments.len()).sum()
    }

    /// Largest recorded increment ratio over the converged segments.
    pub fn max_ratio(&self) -> f64 {
        self.segments
            .iter()
            .filter(|s| s.converged)
            .flat_map(|s| s.ratios.iter().copied())
            .fold(0.0, f64::max)
    }

    /// CSV rows `path,iterate,increment,ratio`; the iterate counter runs
    /// across segments, ratio is empty for the first iterate of a segment.
    pub fn write_csv_rows<W: Write>(&self, out: &mut W) -> Result<()> {
        let mut k = 0usize;
        for s in self.segments.iter().filter(|s| s.converged) {
            for (i, inc) in s.increments.iter().enumerate() {
                k += 1;
                if i == 0 {
                    writeln!(out, "{},{k},{inc},", self.path)?;
                } else {
                    writeln!(out, "{},{k},{inc},{}", self.path, s.ratios[i - 1])?;
                }
            }
        }
        Ok(())
    }
}

pub const PICARD_CSV_HEADER: &str = "path,iterate,increment,ratio";

struct Problem<'a> {
    kappa: &'a KappaPath,
    load: &'a LoadSpec,
    g: &'a GSpec,
    noise: &'a NoiseSample,
    grid: &'a TimeGrid,
    basis: &'a EigenBasis,
    colloc: Collocation,
}

/// `sqrt(sum h |dU1|_V^2 + max |dU2|_H^2)`.
fn picard_metric(
    a: &SpaceTimeSolution,
    b: Option<&SpaceTimeSolution>,
    basis: &EigenBasis,
    h: f64,
) -> f64 {
    let diff = |x: &[f64], y: Option<&[f64]>, w: Option<&[f64]>| -> f64 {
        x.iter()
            .enumerate()
            .map(|(j, v)| {
                let d = v - y.map_or(0.0, |y| y[j]);
                w.map_or(1.0, |w| w[j]) * d * d
            })
            .sum()
    };
    let lam = basis.lambdas();
    let v: f64 = (0..a.steps())
        .map(|n| h * diff(a.u1(n), b.map(|b| b.u1(n)), Some(lam)))
        .sum();
    let s = (0..=a.steps())
        .map(|n| diff(a.u2(n), b.map(|b| b.u2(n)), None))
        .fold(0.0, f64::max);
    (v + s).sqrt()
}

impl Problem<'_> {
    /// Apply the solution map on intervals `start..end` from `u_start`,
    /// with noise amplitudes taken from `prev` at left endpoints.
    fn map(
        &self,
        start: usize,
        end: usize,
        u_start: &[f64],
        prev: Option<&SpaceTimeSolution>,
    ) -> Result<SpaceTimeSolution> {
        let len = end - start;
        let modes = self.basis.len();
        let h = self.grid.h();
        let sub = TimeGrid::new(len as f64 * h, len)?;
        let mut drive = Drive::zero(modes, len);
        if let Some(prev) = prev {
            let mut dm = vec![0.0; modes];
            let mut im = vec![0.0; modes];
            for n in 0..len {
                let t = self.grid.node(start + n);
                self.colloc.drive_interval(
                    prev.u2(n),
                    self.g,
                    t,
                    self.noise,
                    start + n,
                    &mut dm,
                    &mut im,
                );
                for j in 0..modes {
                    drive.set(j, n, dm[j], im[j]);
                }
            }
        }
        solve_with_drive(
            &self.kappa.window(start, len),
            u_start,
            &self.load.f.window(start, len),
            &drive,
            &sub,
            self.basis,
        )
    }

    fn segment(
        &self,
        start: usize,
        end: usize,
        u_start: &[f64],
        opts: &PicardOptions,
    ) -> Result<(SpaceTimeSolution, SegmentTrace)> {
        let h = self.grid.h();
        // The noise-free solve is the image of any iterate when g vanishes.
        let mut cur = self.map(start, end, u_start, None)?;
        let mut trace = SegmentTrace {
            start,
            end,
            increments: Vec::new(),
            ratios: Vec::new(),
            converged: false,
        };
        let mut growth_streak = 0;
        for _ in 0..opts.max_iter {
            let next = self.map(start, end, u_start, Some(&cur))?;
            let inc = picard_metric(&next, Some(&cur), self.basis, h);
            let size = picard_metric(&next, None, self.basis, h);
            let rel = if size > 0.0 { inc / size } else { inc };
            if let Some(&last) = trace.increments.last() {
                let ratio = if last > 0.0 { rel / last } else { 0.0 };
                trace.ratios.push(ratio);
                growth_streak = if ratio > 1.0 { growth_streak + 1 } else { 0 };
            }
            trace.increments.push(rel);
            cur = next;
            if rel < opts.tol {
                trace.converged = true;
                break;
            }
            if growth_streak >= 3 {
                break;
            }
        }
        Ok((cur, trace))
    }
}

/// Solve the multiplicative problem on one path by Picard iteration with
/// noise frozen across iterates. Segments that fail to contract are bisected
/// and solved in sequence from the previous terminal value.
#[allow(clippy::too_many_arguments)]
pub fn picard_solve(
    op: &OperatorSpec,
    load: &LoadSpec,
    g: &GSpec,
    q: &QSpec,
    grid: &TimeGrid,
    basis: &EigenBasis,
    seed: u64,
    path: u64,
    opts: &PicardOptions,
) -> Result<(SpaceTimeSolution, PicardTrace)> {
    g.validate()?;
    if !(opts.tol > 0.0) || opts.max_iter == 0 {
        return Err(Error::param(
            "tol",
            "tolerance and iteration cap must be positive",
        ));
    }
    let modes = basis.len();
    ensure_len("load modes", modes, load.modes())?;
    ensure_len("Q spectrum", modes, q.len())?;
    let steps = grid.steps();
    let segs = opts.initial_segments.clamp(1, steps);
    let noise = sample_noise(grid, q, seed, path);
    let kappa = op.realize(grid, seed, path)?;
    let problem = Problem {
        kappa: &kappa,
        load,
        g,
        noise: &noise,
        grid,
        basis,
        colloc: Collocation::new(basis, g.colloc_points(modes))?,
    };

    let mut u1 = Vec::with_capacity(modes * steps);
    let mut u2 = Vec::with_capacity(modes * (steps + 1));
    u2.extend_from_slice(load.u0.coeffs());
    let mut traces = Vec::new();
    // Pending segments in time order.
    let mut pending: Vec<(usize, usize)> = (0..segs)
        .rev()
        .map(|s| (s * steps / segs, (s + 1) * steps / segs))
        .collect();
    while let Some((a, b)) = pending.pop() {
        let u_start = u2[a * modes..(a + 1) * modes].to_vec();
        let (sol, trace) = problem.segment(a, b, &u_start, opts)?;
        let converged = trace.converged;
        let ratios = trace.ratios.clone();
        traces.push(trace);
        if converged {
            for n in 0..sol.steps() {
                u1.extend_from_slice(sol.u1(n));
                u2.extend_from_slice(sol.u2(n + 1));
            }
        } else if b - a > 1 {
            let mid = a + (b - a) / 2;
            pending.push((mid, b));
            pending.push((a, mid));
        } else {
            return Err(Error::NonConvergence {
                start: a,
                end: b,
                ratios,
            });
        }
    }
    let sol = SpaceTimeSolution::from_parts(modes, steps, u1, u2, kappa)?;
    Ok((
        sol,
        PicardTrace {
            path,
            segments: traces,
        },
    ))
}

/// `int_0^1 phi_1^3 = 8 sqrt(2) / (3 pi)`: the self-coupling of the first
/// mode under a constant multiplier.
pub fn first_mode_self_coupling() -> f64 {
    8.0 * std::f64::consts::SQRT_2 / (3.0 * std::f64::consts::PI)
}
