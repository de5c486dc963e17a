//! Exact simulation of Q-Wiener functionals on a uniform time grid.
//!
//! Q is diagonal in the eigenbasis with eigenvalues `gamma_j`. On each
//! interval the pair `(dW_j, iW_j)`, with `iW_j = int (s - t_n) dW_j(s)`, is
//! jointly Gaussian with covariance `gamma_j [[h, h^2/2], [h^2/2, h^3/3]]`,
//! so it is sampled exactly from two standard normals. A third normal from the
//! same block is kept for the mild oracle, which needs the exponentially
//! weighted integral conditioned on the pair.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{ensure_len, Error, Result};
use crate::rng::NormalStream;
use crate::spectral::{power, EigenBasis};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    t_end: f64,
    steps: usize,
}

impl TimeGrid {
    pub fn new(t_end: f64, steps: usize) -> Result<Self> {
        if !(t_end > 0.0 && t_end.is_finite()) {
            return Err(Error::param("T", "final time must be positive and finite"));
        }
        if steps == 0 {
            return Err(Error::param("N", "at least one time step is required"));
        }
        Ok(Self { t_end, steps })
    }

    pub fn t_end(&self) -> f64 {
        self.t_end
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn h(&self) -> f64 {
        self.t_end / self.steps as f64
    }

    pub fn node(&self, n: usize) -> f64 {
        n as f64 * self.h()
    }

    pub fn nodes(&self) -> impl Iterator<Item = f64> + '_ {
        (0..=self.steps).map(|n| self.node(n))
    }

    /// The grid with `factor` times fewer steps.
    pub fn coarsened(&self, factor: usize) -> Result<Self> {
        if factor == 0 || !self.steps.is_multiple_of(factor) {
            return Err(Error::param(
                "factor",
                format!("{factor} does not divide {} steps", self.steps),
            ));
        }
        Self::new(self.t_end, self.steps / factor)
    }
}

/// Diagonal covariance operator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QSpec {
    gammas: Vec<f64>,
    decay_exponent: Option<f64>,
}

impl QSpec {
    pub fn new(gammas: Vec<f64>) -> Result<Self> {
        if gammas.is_empty() {
            return Err(Error::InvalidTruncation);
        }
        if gammas.iter().any(|g| !(g.is_finite() && *g >= 0.0)) {
            return Err(Error::param(
                "gammas",
                "eigenvalues of Q must be finite and >= 0",
            ));
        }
        Ok(Self {
            gammas,
            decay_exponent: None,
        })
    }

    /// `gamma_j = j^{-rho}` for `j = 1..=modes`.
    pub fn power_law(modes: usize, rho: f64) -> Result<Self> {
        if !rho.is_finite() {
            return Err(Error::param("rho", "decay exponent must be finite"));
        }
        let mut q = Self::new((1..=modes).map(|j| (j as f64).powf(-rho)).collect())?;
        q.decay_exponent = Some(rho);
        Ok(q)
    }

    /// Rank-one Q charging only the mode with 0-based `index`.
    pub fn rank_one(modes: usize, index: usize, gamma: f64) -> Result<Self> {
        if index >= modes {
            return Err(Error::param("index", "mode index beyond truncation"));
        }
        let mut g = vec![0.0; modes];
        g[index] = gamma;
        Self::new(g)
    }

    pub fn zero(modes: usize) -> Result<Self> {
        Self::new(vec![0.0; modes])
    }

    pub fn gammas(&self) -> &[f64] {
        &self.gammas
    }

    pub fn len(&self) -> usize {
        self.gammas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gammas.is_empty()
    }

    pub fn decay_exponent(&self) -> Option<f64> {
        self.decay_exponent
    }

    pub fn trace(&self) -> f64 {
        self.gammas.iter().sum()
    }
}

/// One realization of the noise functionals, stored mode-major.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSample {
    modes: usize,
    grid: TimeGrid,
    seed: u64,
    path: u64,
    dw: Vec<f64>,
    iw: Vec<f64>,
    // Standard normals independent of (dW, iW); absent after coarsening.
    aux: Option<Vec<f64>>,
}

impl NoiseSample {
    pub fn modes(&self) -> usize {
        self.modes
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn path(&self) -> u64 {
        self.path
    }

    #[inline]
    pub fn dw(&self, j: usize, n: usize) -> f64 {
        self.dw[j * self.grid.steps + n]
    }

    #[inline]
    pub fn iw(&self, j: usize, n: usize) -> f64 {
        self.iw[j * self.grid.steps + n]
    }

    /// Increments of mode `j` over all intervals.
    pub fn dw_mode(&self, j: usize) -> &[f64] {
        let s = self.grid.steps;
        &self.dw[j * s..(j + 1) * s]
    }

    pub fn iw_mode(&self, j: usize) -> &[f64] {
        let s = self.grid.steps;
        &self.iw[j * s..(j + 1) * s]
    }

    pub fn aux_mode(&self, j: usize) -> Option<&[f64]> {
        let s = self.grid.steps;
        self.aux.as_ref().map(|a| &a[j * s..(j + 1) * s])
    }

    pub fn has_aux(&self) -> bool {
        self.aux.is_some()
    }

    /// All-zero sample (no noise).
    pub fn zero(modes: usize, grid: TimeGrid) -> Self {
        let len = modes * grid.steps;
        Self {
            modes,
            grid,
            seed: 0,
            path: 0,
            dw: vec![0.0; len],
            iw: vec![0.0; len],
            aux: Some(vec![0.0; len]),
        }
    }

    /// Exact aggregation onto a grid with `factor` times fewer intervals.
    pub fn coarsen(&self, factor: usize) -> Result<NoiseSample> {
        let grid = self.grid.coarsened(factor)?;
        let hf = self.grid.h();
        let steps = grid.steps;
        let mut dw = vec![0.0; self.modes * steps];
        let mut iw = vec![0.0; self.modes * steps];
        for j in 0..self.modes {
            let fdw = self.dw_mode(j);
            let fiw = self.iw_mode(j);
            for n in 0..steps {
                let mut d = 0.0;
                let mut i = 0.0;
                for k in 0..factor {
                    let f = n * factor + k;
                    d += fdw[f];
                    i += fiw[f] + k as f64 * hf * fdw[f];
                }
                dw[j * steps + n] = d;
                iw[j * steps + n] = i;
            }
        }
        Ok(NoiseSample {
            modes: self.modes,
            grid,
            seed: self.seed,
            path: self.path,
            dw,
            iw,
            aux: None,
        })
    }

    /// `W_j(t_n)` at every node.
    pub fn brownian_path(&self, j: usize) -> Vec<f64> {
        let mut w = Vec::with_capacity(self.grid.steps + 1);
        w.push(0.0);
        let mut acc = 0.0;
        for d in self.dw_mode(j) {
            acc += d;
            w.push(acc);
        }
        w
    }

    /// CSV rows `path,j,n,dW,iW` (mode index 1-based, interval 0-based).
    pub fn write_csv_rows<W: Write>(&self, out: &mut W) -> Result<()> {
        for j in 0..self.modes {
            for n in 0..self.grid.steps {
                writeln!(
                    out,
                    "{},{},{},{},{}",
                    self.path,
                    j + 1,
                    n,
                    self.dw(j, n),
                    self.iw(j, n)
                )?;
            }
        }
        Ok(())
    }
}

pub const NOISE_CSV_HEADER: &str = "path,j,n,dW,iW";

pub fn write_noise_csv<W: Write>(out: &mut W, samples: &[NoiseSample]) -> Result<()> {
    writeln!(out, "{NOISE_CSV_HEADER}")?;
    for s in samples {
        s.write_csv_rows(out)?;
    }
    Ok(())
}

/// Draw the noise functionals of one Monte Carlo path.
///
/// The block for `(path, j, n)` is read from lane `j` at slot `n`, so the
/// result depends only on `(seed, path, j, n)`.
pub fn sample_noise(grid: &TimeGrid, q: &QSpec, seed: u64, path: u64) -> NoiseSample {
    let modes = q.len();
    let steps = grid.steps;
    let h = grid.h();
    let sqrt_h = h.sqrt();
    let iw_mean = h * sqrt_h / 2.0;
    let iw_sd = (h * h * h / 12.0).sqrt();
    let mut dw = vec![0.0; modes * steps];
    let mut iw = vec![0.0; modes * steps];
    let mut aux = vec![0.0; modes * steps];
    for (j, gamma) in q.gammas().iter().enumerate() {
        let sg = gamma.sqrt();
        let mut stream = NormalStream::new(seed, path, j as u32);
        stream.seek(0);
        for n in 0..steps {
            let [z1, z2, z3, _] = stream.block();
            let k = j * steps + n;
            dw[k] = sg * sqrt_h * z1;
            iw[k] = sg * (iw_mean * z1 + iw_sd * z2);
            aux[k] = z3;
        }
    }
    NoiseSample {
        modes,
        grid: *grid,
        seed,
        path,
        dw,
        iw,
        aux: Some(aux),
    }
}

/// `(sum_j lambda_j^s psi_j^2 gamma_j)^{1/2}`: the Hilbert-Schmidt norm of
/// `Psi Q^{1/2}` into `H^s` for diagonal `Psi`.
pub fn hs_norm_psiq(psi_diag: &[f64], q: &QSpec, basis: &EigenBasis, s: f64) -> Result<f64> {
    ensure_len("psi diagonal", basis.len(), psi_diag.len())?;
    ensure_len("Q spectrum", basis.len(), q.len())?;
    Ok(psiq_terms(psi_diag, q, basis, s).sum::<f64>().sqrt())
}

fn psiq_terms<'a>(
    psi_diag: &'a [f64],
    q: &'a QSpec,
    basis: &'a EigenBasis,
    s: f64,
) -> impl Iterator<Item = f64> + 'a {
    basis
        .lambdas()
        .iter()
        .zip(psi_diag)
        .zip(q.gammas())
        .map(move |((l, p), g)| power(*l, s) * p * p * g)
}

/// `|A^{(beta-1)/2} Q^{1/2}|_HS` on the truncation.
pub fn coupling_norm_beta(q: &QSpec, basis: &EigenBasis, beta: f64) -> Result<f64> {
    if !(beta >= 0.0) {
        return Err(Error::param("beta", "regularity index must be >= 0"));
    }
    ensure_len("Q spectrum", basis.len(), q.len())?;
    Ok(coupling_terms(q, basis, beta).sum::<f64>().sqrt())
}

fn coupling_terms<'a>(
    q: &'a QSpec,
    basis: &'a EigenBasis,
    beta: f64,
) -> impl Iterator<Item = f64> + 'a {
    basis
        .lambdas()
        .iter()
        .zip(q.gammas())
        .map(move |(l, g)| power(*l, beta - 1.0) * g)
}

/// Increments that do not shrink by at least this factor per doubling are
/// treated as a divergent series.
pub const DIVERGENCE_RATIO: f64 = 0.9;

/// Growth of partial sums `S(J/4), S(J/2), S(J)` of a nonnegative series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesTrend {
    pub partial_sums: Vec<(usize, f64)>,
    /// `(S(J) - S(J/2)) / (S(J/2) - S(J/4))`.
    pub increment_ratio: f64,
    pub divergent: bool,
}

/// Classify a series from its first `terms.len()` terms (at least 4).
///
/// For terms decaying like `j^{-p}` the increment ratio tends to `2^{1-p}`,
/// which is 1 exactly at the divergence threshold `p = 1`.
pub fn series_trend(terms: &[f64]) -> Result<SeriesTrend> {
    let n = terms.len();
    if n < 4 {
        return Err(Error::param("terms", "need at least 4 terms to classify"));
    }
    let cuts = [n / 4, n / 2, n];
    let partial: Vec<(usize, f64)> = cuts
        .iter()
        .map(|&c| (c, terms[..c].iter().sum::<f64>()))
        .collect();
    let d1 = partial[1].1 - partial[0].1;
    let d2 = partial[2].1 - partial[1].1;
    let increment_ratio = if d1 > 0.0 {
        d2 / d1
    } else if d2 > 0.0 {
        f64::INFINITY
    } else {
        0.0
    };
    Ok(SeriesTrend {
        partial_sums: partial,
        increment_ratio,
        divergent: increment_ratio >= DIVERGENCE_RATIO,
    })
}

/// Partial-sum trend of the series behind [`hs_norm_psiq`].
pub fn hs_norm_trend(
    psi_diag: &[f64],
    q: &QSpec,
    basis: &EigenBasis,
    s: f64,
) -> Result<SeriesTrend> {
    ensure_len("psi diagonal", basis.len(), psi_diag.len())?;
    ensure_len("Q spectrum", basis.len(), q.len())?;
    series_trend(&psiq_terms(psi_diag, q, basis, s).collect::<Vec<_>>())
}

/// Partial-sum trend of the series behind [`coupling_norm_beta`].
pub fn coupling_trend(q: &QSpec, basis: &EigenBasis, beta: f64) -> Result<SeriesTrend> {
    if !(beta >= 0.0) {
        return Err(Error::param("beta", "regularity index must be >= 0"));
    }
    ensure_len("Q spectrum", basis.len(), q.len())?;
    series_trend(&coupling_terms(q, basis, beta).collect::<Vec<_>>())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    #[test]
    fn zero_gamma_gives_zero_noise() {
        let g = TimeGrid::new(1.0, 16).unwrap();
        let q = QSpec::zero(4).unwrap();
        let s = sample_noise(&g, &q, 3, 9);
        assert!(s.dw.iter().chain(&s.iw).all(|v| *v == 0.0));
    }

    #[test]
    fn reproducible_and_order_free() {
        let g = TimeGrid::new(0.5, 32).unwrap();
        let q = QSpec::power_law(6, 2.0).unwrap();
        let a = sample_noise(&g, &q, 42, 7);
        let b = sample_noise(&g, &q, 42, 7);
        assert_eq!(a, b);
        // A sample on a shorter horizon shares its prefix with the long one.
        let short = sample_noise(&TimeGrid::new(0.25, 16).unwrap(), &q, 42, 7);
        for j in 0..6 {
            assert_eq!(short.dw_mode(j), &a.dw_mode(j)[..16]);
        }
        // A truncated Q shares the leading modes.
        let fewer = sample_noise(&g, &QSpec::power_law(3, 2.0).unwrap(), 42, 7);
        assert_eq!(fewer.dw_mode(2), a.dw_mode(2));
        assert_ne!(sample_noise(&g, &q, 42, 8).dw, a.dw);
    }

    #[test]
    fn covariance_matches_closed_form() {
        // 1e5 draws of (dW, iW) for gamma = 0.7, h = 0.1
        let g = TimeGrid::new(100.0, 1000).unwrap();
        let gamma = 0.7;
        let h = g.h();
        let q = QSpec::new(vec![gamma]).unwrap();
        let (mut sdd, mut sdi, mut sii) = (0.0, 0.0, 0.0);
        let mut m = 0usize;
        for p in 0..100 {
            let s = sample_noise(&g, &q, 5, p);
            for n in 0..g.steps() {
                let (d, i) = (s.dw(0, n), s.iw(0, n));
                sdd += d * d;
                sdi += d * i;
                sii += i * i;
                m += 1;
            }
        }
        let mf = m as f64;
        let (vd, cdi, vi) = (gamma * h, gamma * h * h / 2.0, gamma * h.powi(3) / 3.0);
        // SE of a second-moment estimator of a Gaussian product: sqrt((E[xy]^2 + vx vy)/m)
        assert!((sdd / mf - vd).abs() < 3.0 * (2.0 * vd * vd / mf).sqrt());
        assert!((sdi / mf - cdi).abs() < 3.0 * ((cdi * cdi + vd * vi) / mf).sqrt());
        assert!((sii / mf - vi).abs() < 3.0 * (2.0 * vi * vi / mf).sqrt());
    }

    #[test]
    fn coarsening_is_exact_aggregation() {
        let fine_grid = TimeGrid::new(1.0, 8).unwrap();
        let q = QSpec::new(vec![1.0, 0.5]).unwrap();
        let fine = sample_noise(&fine_grid, &q, 1, 0);
        let coarse = fine.coarsen(4).unwrap();
        assert_eq!(coarse.grid().steps(), 2);
        assert!(!coarse.has_aux());
        let hf = fine_grid.h();
        for j in 0..2 {
            // Rebuild from W at the fine nodes: iW = int (s - t_n) dW over the coarse cell,
            // evaluated cellwise as sum_k [iW_k + (t_k - t_n) dW_k].
            let w = fine.brownian_path(j);
            let wc = coarse.brownian_path(j);
            assert_relative_eq!(wc[1], w[4], epsilon = 1e-15);
            assert_relative_eq!(wc[2], w[8], epsilon = 1e-15);
            let mut i1 = 0.0;
            for k in 4..8 {
                i1 += fine.iw(j, k) + (k - 4) as f64 * hf * fine.dw(j, k);
            }
            assert_relative_eq!(coarse.iw(j, 1), i1, epsilon = 1e-15);
        }
        assert!(fine.coarsen(3).is_err());
    }

    #[test]
    fn basel_limits() {
        let b = EigenBasis::new(20_000).unwrap();
        let q = QSpec::power_law(20_000, 2.0).unwrap();
        let ones = vec![1.0; 20_000];
        assert_relative_eq!(
            hs_norm_psiq(&ones, &q, &b, 0.0).unwrap(),
            PI / 6f64.sqrt(),
            max_relative = 1e-4
        );
        assert_relative_eq!(
            coupling_norm_beta(&q, &b, 1.0).unwrap(),
            PI / 6f64.sqrt(),
            max_relative = 1e-4
        );
        let white = QSpec::new(vec![1.0; 20_000]).unwrap();
        assert_relative_eq!(
            coupling_norm_beta(&white, &b, 0.0).unwrap(),
            1.0 / 6f64.sqrt(),
            max_relative = 1e-4
        );
        let zeros = vec![0.0; 20_000];
        assert_eq!(hs_norm_psiq(&zeros, &q, &b, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn divergence_classification() {
        let b = EigenBasis::new(64).unwrap();
        let ones = vec![1.0; 64];
        // 2 beta - rho < -1 converges
        let conv = hs_norm_trend(&ones, &QSpec::power_law(64, 4.0).unwrap(), &b, 1.0).unwrap();
        assert!(!conv.divergent, "{conv:?}");
        let div = hs_norm_trend(&ones, &QSpec::power_law(64, 1.0).unwrap(), &b, 1.0).unwrap();
        assert!(div.divergent, "{div:?}");
        // borderline 2 beta - rho = -1 is a harmonic series
        let edge = hs_norm_trend(&ones, &QSpec::power_law(64, 3.0).unwrap(), &b, 1.0).unwrap();
        assert!(edge.divergent, "{edge:?}");
        let c = coupling_trend(&QSpec::power_law(64, 1.0).unwrap(), &b, 2.0).unwrap();
        assert!(c.divergent && c.increment_ratio > 3.0, "{c:?}");
        let c = coupling_trend(&QSpec::power_law(64, 2.0).unwrap(), &b, 1.0).unwrap();
        assert!(!c.divergent);
    }

    #[test]
    fn csv_dump_shape() {
        let g = TimeGrid::new(1.0, 3).unwrap();
        let s = sample_noise(&g, &QSpec::new(vec![1.0, 1.0]).unwrap(), 0, 2);
        let mut buf = Vec::new();
        write_noise_csv(&mut buf, std::slice::from_ref(&s)).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], NOISE_CSV_HEADER);
        assert_eq!(lines.len(), 1 + 2 * 3);
        assert!(lines[1].starts_with("2,1,0,"));
        let last: Vec<_> = lines[6].split(',').collect();
        assert_eq!(last[1], "2");
        assert_eq!(last[3].parse::<f64>().unwrap(), s.dw(1, 2));
    }
}
