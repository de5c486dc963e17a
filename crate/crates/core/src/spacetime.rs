//! Pathwise Petrov-Galerkin solver for the weak space-time formulation.
//!
//! Trial space: `U1` piecewise constant in time (one V-valued coefficient
//! vector per interval) together with nodal values `U2(t_n)`. Test space:
//! continuous piecewise-linear hats in time times eigenfunctions, restricted
//! to `[0, t_K]` for every terminal node `K`. With `-x'` piecewise constant
//! and `x` affine on each cell, every term of the identity
//!
//! ```text
//! int <U1, -x'> + int kappa a0(U1, x) + <U2(t_K), x(t_K)>
//!     = int <f, x> + <U0, x(0)> + int <Psi dW, x>
//! ```
//!
//! is integrated exactly; the noise term needs both `dW` and
//! `iW = int (s - t_n) dW` per cell. Per mode the system is lower
//! bidiagonal in time and is solved by a forward sweep.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{ensure_len, Error, Result};
use crate::noise::{NoiseSample, TimeGrid};
use crate::rng::{NormalStream, KAPPA_LANE};
use crate::spectral::{power, EigenBasis, SpectralVec};

/// Law of the scalar coefficient `kappa(omega, t)` with `A = kappa A0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum KappaLaw {
    /// Deterministic and time independent.
    Constant { value: f64 },
    /// Independent uniform draws on `[A_min, A_max]`, one per interval.
    UniformIid,
    /// Deterministic `mid + amplitude * half_width * sin(2 pi t / T)`.
    /// Not piecewise constant: the solver freezes it at cell midpoints.
    Smooth { amplitude: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatorSpec {
    pub a_min: f64,
    pub a_max: f64,
    pub kappa: KappaLaw,
}

/// Per-interval realization of `kappa`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct KappaPath(Vec<f64>);

impl KappaPath {
    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn constant(value: f64, steps: usize) -> Self {
        Self(vec![value; steps])
    }

    /// Intervals `start..start + len`.
    pub fn window(&self, start: usize, len: usize) -> Self {
        Self(self.0[start..start + len].to_vec())
    }
}

impl OperatorSpec {
    pub fn new(a_min: f64, a_max: f64, kappa: KappaLaw) -> Result<Self> {
        if !(a_min > 0.0 && a_min.is_finite()) {
            return Err(Error::param("A_min", "must be positive (coercivity)"));
        }
        if !(a_max >= a_min && a_max.is_finite()) {
            return Err(Error::param("A_max", "must be finite and >= A_min"));
        }
        match kappa {
            KappaLaw::Constant { value } if !(a_min..=a_max).contains(&value) => {
                return Err(Error::param(
                    "kappa",
                    "constant value outside [A_min, A_max]",
                ));
            }
            KappaLaw::Smooth { amplitude } if !(0.0..=1.0).contains(&amplitude) => {
                return Err(Error::param("amplitude", "must lie in [0, 1]"));
            }
            _ => {}
        }
        Ok(Self {
            a_min,
            a_max,
            kappa,
        })
    }

    /// `A = kappa A0` with `A_min = A_max = kappa`.
    pub fn constant(kappa: f64) -> Result<Self> {
        Self::new(kappa, kappa, KappaLaw::Constant { value: kappa })
    }

    pub fn is_piecewise_constant(&self) -> bool {
        !matches!(self.kappa, KappaLaw::Smooth { .. })
    }

    /// The value of `kappa` if it is deterministic and constant.
    pub fn constant_value(&self) -> Option<f64> {
        match self.kappa {
            KappaLaw::Constant { value } => Some(value),
            KappaLaw::Smooth { amplitude: 0.0 } => Some(0.5 * (self.a_min + self.a_max)),
            _ => None,
        }
    }

    /// Draw the per-interval coefficient of path `path`.
    pub fn realize(&self, grid: &TimeGrid, seed: u64, path: u64) -> Result<KappaPath> {
        let steps = grid.steps();
        let values: Vec<f64> = match self.kappa {
            KappaLaw::Constant { value } => vec![value; steps],
            KappaLaw::UniformIid => {
                let mut s = NormalStream::new(seed, path, KAPPA_LANE);
                let width = self.a_max - self.a_min;
                let mut out = Vec::with_capacity(steps);
                while out.len() < steps {
                    for u in s.uniform_block() {
                        if out.len() < steps {
                            out.push(self.a_min + width * u);
                        }
                    }
                }
                out
            }
            KappaLaw::Smooth { amplitude } => {
                let mid = 0.5 * (self.a_min + self.a_max);
                let half = 0.5 * (self.a_max - self.a_min);
                let h = grid.h();
                let omega = std::f64::consts::TAU / grid.t_end();
                (0..steps)
                    .map(|n| mid + amplitude * half * (omega * (n as f64 + 0.5) * h).sin())
                    .collect()
            }
        };
        self.validate(&values)?;
        Ok(KappaPath(values))
    }

    pub fn validate(&self, values: &[f64]) -> Result<()> {
        // Rounding in a_min + width*u may land a hair outside; allow one ulp-scale slack.
        let slack = 4.0 * f64::EPSILON * self.a_max;
        for (interval, &value) in values.iter().enumerate() {
            if !(value >= self.a_min - slack && value <= self.a_max + slack) {
                return Err(Error::CoefficientOutOfBounds {
                    interval,
                    value,
                    a_min: self.a_min,
                    a_max: self.a_max,
                });
            }
        }
        Ok(())
    }
}

/// Piecewise-constant-in-time source term.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Forcing {
    Zero,
    Constant {
        coeffs: SpectralVec,
    },
    /// One coefficient vector per interval (cell averages of a general `f`).
    PerInterval {
        cells: Vec<SpectralVec>,
    },
}

impl Forcing {
    #[inline]
    pub fn coeff(&self, n: usize, j: usize) -> f64 {
        match self {
            Forcing::Zero => 0.0,
            Forcing::Constant { coeffs } => coeffs[j],
            Forcing::PerInterval { cells } => cells[n][j],
        }
    }

    /// Restriction to intervals `start..start + len`.
    pub fn window(&self, start: usize, len: usize) -> Self {
        match self {
            Forcing::PerInterval { cells } => Forcing::PerInterval {
                cells: cells[start..start + len].to_vec(),
            },
            other => other.clone(),
        }
    }

    fn check(&self, modes: usize, steps: usize) -> Result<()> {
        match self {
            Forcing::Zero => Ok(()),
            Forcing::Constant { coeffs } => ensure_len("forcing", modes, coeffs.len()),
            Forcing::PerInterval { cells } => {
                ensure_len("forcing cells", steps, cells.len())?;
                cells
                    .iter()
                    .try_for_each(|c| ensure_len("forcing", modes, c.len()))
            }
        }
    }

    /// `int_0^T |f|_{V*}^2 dt`.
    pub fn dual_energy(&self, basis: &EigenBasis, grid: &TimeGrid) -> f64 {
        let h = grid.h();
        (0..grid.steps())
            .map(|n| {
                (0..basis.len())
                    .map(|j| self.coeff(n, j).powi(2) / basis.lambda(j))
                    .sum::<f64>()
                    * h
            })
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadSpec {
    pub u0: SpectralVec,
    pub f: Forcing,
    /// Diagonal of the additive noise operator `Psi`.
    pub psi_diag: Vec<f64>,
}

impl LoadSpec {
    pub fn new(u0: SpectralVec, f: Forcing, psi_diag: Vec<f64>) -> Result<Self> {
        ensure_len("psi diagonal", u0.len(), psi_diag.len())?;
        if psi_diag.iter().any(|p| !p.is_finite()) {
            return Err(Error::param("psi", "entries must be finite"));
        }
        Ok(Self { u0, f, psi_diag })
    }

    pub fn zero(modes: usize) -> Self {
        Self {
            u0: SpectralVec::zeros(modes),
            f: Forcing::Zero,
            psi_diag: vec![0.0; modes],
        }
    }

    pub fn modes(&self) -> usize {
        self.u0.len()
    }
}

/// Noise drive projected on each eigenmode and interval:
/// `dm = int <Psi dW, phi_j>` and `im = int (s - t_n) <Psi dW, phi_j>`.
#[derive(Debug, Clone, PartialEq)]
pub struct Drive {
    modes: usize,
    steps: usize,
    dm: Vec<f64>,
    im: Vec<f64>,
}

impl Drive {
    pub fn zero(modes: usize, steps: usize) -> Self {
        Self {
            modes,
            steps,
            dm: vec![0.0; modes * steps],
            im: vec![0.0; modes * steps],
        }
    }

    /// Additive diagonal noise `Psi = diag(psi)`.
    pub fn additive(psi_diag: &[f64], noise: &NoiseSample) -> Result<Self> {
        ensure_len("psi diagonal", noise.modes(), psi_diag.len())?;
        let steps = noise.grid().steps();
        let mut d = Self::zero(psi_diag.len(), steps);
        for (j, psi) in psi_diag.iter().enumerate() {
            for n in 0..steps {
                d.dm[j * steps + n] = psi * noise.dw(j, n);
                d.im[j * steps + n] = psi * noise.iw(j, n);
            }
        }
        Ok(d)
    }

    pub fn modes(&self) -> usize {
        self.modes
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    #[inline]
    pub fn dm(&self, j: usize, n: usize) -> f64 {
        self.dm[j * self.steps + n]
    }

    #[inline]
    pub fn im(&self, j: usize, n: usize) -> f64 {
        self.im[j * self.steps + n]
    }

    /// Overwrite the drive of interval `n` from a (row-major, `modes x modes`)
    /// operator `psi` applied to the noise increments of that interval.
    pub fn set_interval_from_matrix(&mut self, n: usize, psi: &[f64], noise: &NoiseSample) {
        let j_max = self.modes;
        let kn = noise.modes();
        for j in 0..j_max {
            let row = &psi[j * kn..(j + 1) * kn];
            let mut d = 0.0;
            let mut i = 0.0;
            for (k, p) in row.iter().enumerate() {
                if *p != 0.0 {
                    d += p * noise.dw(k, n);
                    i += p * noise.iw(k, n);
                }
            }
            self.dm[j * self.steps + n] = d;
            self.im[j * self.steps + n] = i;
        }
    }

    pub fn set(&mut self, j: usize, n: usize, dm: f64, im: f64) {
        self.dm[j * self.steps + n] = dm;
        self.im[j * self.steps + n] = im;
    }
}

/// `(U1, U2)` stored interval-major: `u1[n * J + j]`, `u2[n * J + j]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpaceTimeSolution {
    modes: usize,
    steps: usize,
    u1: Vec<f64>,
    u2: Vec<f64>,
    kappa: KappaPath,
}

impl SpaceTimeSolution {
    pub fn modes(&self) -> usize {
        self.modes
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// `U1` on interval `n`.
    pub fn u1(&self, n: usize) -> &[f64] {
        &self.u1[n * self.modes..(n + 1) * self.modes]
    }

    /// `U2(t_n)`.
    pub fn u2(&self, n: usize) -> &[f64] {
        &self.u2[n * self.modes..(n + 1) * self.modes]
    }

    pub fn u1_mut(&mut self, n: usize) -> &mut [f64] {
        &mut self.u1[n * self.modes..(n + 1) * self.modes]
    }

    pub fn u2_mut(&mut self, n: usize) -> &mut [f64] {
        &mut self.u2[n * self.modes..(n + 1) * self.modes]
    }

    pub fn u2_vec(&self, n: usize) -> SpectralVec {
        SpectralVec::from(self.u2(n).to_vec())
    }

    pub fn u1_vec(&self, n: usize) -> SpectralVec {
        SpectralVec::from(self.u1(n).to_vec())
    }

    pub fn terminal(&self) -> SpectralVec {
        self.u2_vec(self.steps)
    }

    pub fn kappa(&self) -> &KappaPath {
        &self.kappa
    }

    pub fn from_parts(
        modes: usize,
        steps: usize,
        u1: Vec<f64>,
        u2: Vec<f64>,
        kappa: KappaPath,
    ) -> Result<Self> {
        ensure_len("U1", modes * steps, u1.len())?;
        ensure_len("U2", modes * (steps + 1), u2.len())?;
        ensure_len("kappa path", steps, kappa.0.len())?;
        Ok(Self {
            modes,
            steps,
            u1,
            u2,
            kappa,
        })
    }

    /// CSV rows `node,mode,U1,U2`; `U1` on the cell starting at the node,
    /// empty at the final node.
    pub fn write_csv<W: Write>(&self, out: &mut W) -> Result<()> {
        writeln!(out, "node,mode,U1,U2")?;
        for n in 0..=self.steps {
            for j in 0..self.modes {
                if n < self.steps {
                    writeln!(out, "{n},{},{},{}", j + 1, self.u1(n)[j], self.u2(n)[j])?;
                } else {
                    writeln!(out, "{n},{},,{}", j + 1, self.u2(n)[j])?;
                }
            }
        }
        Ok(())
    }
}

/// Forward sweep with a given coefficient realization and drive.
pub fn solve_with_drive(
    kappa: &KappaPath,
    u0: &[f64],
    f: &Forcing,
    drive: &Drive,
    grid: &TimeGrid,
    basis: &EigenBasis,
) -> Result<SpaceTimeSolution> {
    let modes = basis.len();
    let steps = grid.steps();
    ensure_len("initial datum", modes, u0.len())?;
    ensure_len("kappa path", steps, kappa.0.len())?;
    ensure_len("drive modes", modes, drive.modes)?;
    ensure_len("drive intervals", steps, drive.steps)?;
    f.check(modes, steps)?;
    let h = grid.h();
    let mut u1 = vec![0.0; modes * steps];
    let mut u2 = vec![0.0; modes * (steps + 1)];
    u2[..modes].copy_from_slice(u0);
    for j in 0..modes {
        let lam = basis.lambda(j);
        let mut prev = u0[j];
        for n in 0..steps {
            let r = 0.5 * kappa.0[n] * lam * h;
            let fh = 0.5 * f.coeff(n, j) * h;
            let im = drive.im(j, n) / h;
            let v1 = (prev + fh + drive.dm(j, n) - im) / (1.0 + r);
            let v2 = (1.0 - r) * v1 + fh + im;
            u1[n * modes + j] = v1;
            u2[(n + 1) * modes + j] = v2;
            prev = v2;
        }
    }
    Ok(SpaceTimeSolution {
        modes,
        steps,
        u1,
        u2,
        kappa: kappa.clone(),
    })
}

/// Realize `kappa` for `path` and solve the additive-noise problem.
pub fn assemble_and_solve(
    op: &OperatorSpec,
    load: &LoadSpec,
    noise: &NoiseSample,
    grid: &TimeGrid,
    basis: &EigenBasis,
    seed: u64,
    path: u64,
) -> Result<SpaceTimeSolution> {
    ensure_len("noise grid", grid.steps(), noise.grid().steps())?;
    let kappa = op.realize(grid, seed, path)?;
    let drive = Drive::additive(&load.psi_diag, noise)?;
    solve_with_drive(&kappa, load.u0.coeffs(), &load.f, &drive, grid, basis)
}

/// Sizes of the weak-identity residual over all discrete test functions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Residual {
    /// `max |B*(U,x) - F(x) - W(x)| / |x|_X`.
    pub normalized: f64,
    /// `normalized` divided by `1 + max (|B*| + |F| + |W|) / |x|_X`.
    pub relative: f64,
}

/// Evaluate the weak identity on every distinct test function.
///
/// On `[0, t_K]` a hat at an interior node `m < K - 1` gives the same row as
/// on `[0, t_{m+1}]`, so the distinct rows are the hats at `m` with
/// `K = m + 1` and the terminal half-hats `m = K` (plus `K = 0`).
pub fn residual(
    sol: &SpaceTimeSolution,
    load: &LoadSpec,
    drive: &Drive,
    grid: &TimeGrid,
    basis: &EigenBasis,
) -> Result<Residual> {
    let modes = basis.len();
    let steps = grid.steps();
    ensure_len("solution modes", modes, sol.modes)?;
    ensure_len("solution intervals", steps, sol.steps)?;
    ensure_len("drive intervals", steps, drive.steps)?;
    let h = grid.h();
    let kap = sol.kappa.values();
    let mut worst = 0.0f64;
    let mut worst_rel = 0.0f64;
    let mut record = |b: f64, f: f64, w: f64, norm_sq: f64| {
        let nx = norm_sq.sqrt();
        let r = (b - f - w).abs() / nx;
        let scale = (b.abs() + f.abs() + w.abs()) / nx;
        worst = worst.max(r);
        worst_rel = worst_rel.max(r / (1.0 + scale));
    };
    for j in 0..modes {
        let lam = basis.lambda(j);
        let u1 = |n: usize| sol.u1[n * modes + j];
        let u2 = |n: usize| sol.u2[n * modes + j];
        // Contributions of cell n for nodal test values (xa, xb).
        let cell = |n: usize, xa: f64, xb: f64| {
            let b = -u1(n) * (xb - xa) + kap[n] * lam * u1(n) * h * 0.5 * (xa + xb);
            let f = load.f.coeff(n, j) * h * 0.5 * (xa + xb);
            let w = xa * drive.dm(j, n) + (xb - xa) * drive.im(j, n) / h;
            (b, f, w)
        };
        let u0 = load.u0[j];
        // K = 0: x(0) = x(t_K) = 1.
        record(u2(0), u0, 0.0, 2.0);
        for m in 0..steps {
            // hat at node m on [0, t_{m+1}]
            let (mut b, mut f, mut w) = cell(m, 1.0, 0.0);
            let mut norm_sq = lam * h / 3.0 + 1.0 / (lam * h);
            if m > 0 {
                let (b0, f0, w0) = cell(m - 1, 0.0, 1.0);
                b += b0;
                f += f0;
                w += w0;
                norm_sq += lam * h / 3.0 + 1.0 / (lam * h);
            } else {
                f += u0;
                norm_sq += 1.0;
            }
            record(b, f, w, norm_sq);
        }
        for k in 1..=steps {
            // terminal half-hat at node k on [0, t_k]
            let (b, f, w) = cell(k - 1, 0.0, 1.0);
            record(b + u2(k), f, w, lam * h / 3.0 + 1.0 / (lam * h) + 1.0);
        }
    }
    Ok(Residual {
        normalized: worst,
        relative: worst_rel,
    })
}

/// `(sum_n h |U1_n|_V^2, max_n |U2(t_n)|_H^2)`.
pub fn energy_norms(sol: &SpaceTimeSolution, grid: &TimeGrid, basis: &EigenBasis) -> (f64, f64) {
    energy_norms_beta(sol, grid, basis, 0.0)
}

/// `(sum_n h |U1_n|_{H^{1+beta}}^2, max_n |U2(t_n)|_{H^beta}^2)`.
pub fn energy_norms_beta(
    sol: &SpaceTimeSolution,
    grid: &TimeGrid,
    basis: &EigenBasis,
    beta: f64,
) -> (f64, f64) {
    let lambdas = basis.lambdas();
    let w1: Vec<f64> = lambdas.iter().map(|l| power(*l, 1.0 + beta)).collect();
    let w2: Vec<f64> = lambdas.iter().map(|l| power(*l, beta)).collect();
    let h = grid.h();
    let v: f64 = (0..sol.steps).map(|n| weighted(&w1, sol.u1(n)) * h).sum();
    let s = (0..=sol.steps)
        .map(|n| weighted(&w2, sol.u2(n)))
        .fold(0.0, f64::max);
    (v, s)
}

fn weighted(w: &[f64], c: &[f64]) -> f64 {
    w.iter().zip(c).map(|(a, b)| a * b * b).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VersionsReport {
    /// `max_n |U2(t_n) - U0 - sum_{m<n} [(f_m - kappa_m A0 U1_m) h + dm_m]|_H`,
    /// relative to `1 + max_n |U2(t_n)|_H`.
    pub identity_residual: f64,
    /// `max_n |U1_n - (U2(t_n) + U2(t_{n+1}))/2|_H`.
    pub version_gap: f64,
}

/// Check the integral identity satisfied by the continuous version `U2`.
#[allow(clippy::needless_range_loop)]
pub fn check_versions(
    sol: &SpaceTimeSolution,
    load: &LoadSpec,
    drive: &Drive,
    grid: &TimeGrid,
    basis: &EigenBasis,
) -> Result<VersionsReport> {
    let modes = basis.len();
    ensure_len("solution modes", modes, sol.modes)?;
    let h = grid.h();
    let kap = sol.kappa.values();
    let mut acc: Vec<f64> = load.u0.coeffs().to_vec();
    let mut worst = 0.0f64;
    let mut size = load.u0.norm_h();
    let mut gap = 0.0f64;
    for n in 0..sol.steps {
        let mut g2 = 0.0;
        for j in 0..modes {
            let u1 = sol.u1(n)[j];
            acc[j] += (load.f.coeff(n, j) - kap[n] * basis.lambda(j) * u1) * h + drive.dm(j, n);
            let avg = 0.5 * (sol.u2(n)[j] + sol.u2(n + 1)[j]);
            g2 += (u1 - avg).powi(2);
        }
        gap = gap.max(g2.sqrt());
        let diff: f64 = acc
            .iter()
            .zip(sol.u2(n + 1))
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        worst = worst.max(diff);
        size = size.max(sol.u2(n + 1).iter().map(|v| v * v).sum::<f64>().sqrt());
    }
    Ok(VersionsReport {
        identity_residual: worst / (1.0 + size),
        version_gap: gap,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergySummary {
    pub schema_version: u32,
    pub modes: usize,
    pub steps: usize,
    pub t_end: f64,
    pub v_energy: f64,
    pub h_sup: f64,
    pub terminal_h: f64,
}

impl EnergySummary {
    pub fn new(sol: &SpaceTimeSolution, grid: &TimeGrid, basis: &EigenBasis) -> Self {
        let (v, s) = energy_norms(sol, grid, basis);
        Self {
            schema_version: crate::SCHEMA_VERSION,
            modes: sol.modes,
            steps: sol.steps,
            t_end: grid.t_end(),
            v_energy: v,
            h_sup: s,
            terminal_h: sol.terminal().norm_h(),
        }
    }
}
