//! Discrete inf-sup and boundedness constants of the space-time form.
//!
//! Trial space `Y x H`: piecewise constants `chi_n` in time (norm
//! `L2(H^{1+beta})`) plus a terminal value (norm `H^beta`). Test space `X`:
//! continuous piecewise-linear hats `psi_m` with
//!
//! ```text
//! |x|_X^2 = |x|_{L2(H^{1-beta})}^2 + |x'|_{L2(H^{-1-beta})}^2 + |x(0)|_{H^{-beta}}^2 + |x(T)|_{H^{-beta}}^2.
//! ```
//!
//! Everything is diagonal in the eigenmode, so each mode contributes an
//! `(N+1) x (N+1)` block and the constants are extremal singular values of
//! the whitened blocks `L_Y^{-1} B L_X^{-T}`.

use nalgebra::{Cholesky, DMatrix, Dyn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::noise::TimeGrid;
use crate::spectral::{power, EigenBasis};

#[derive(Debug, Clone)]
pub struct ModeBlock {
    pub lambda: f64,
    pub b: DMatrix<f64>,
    pub gx: DMatrix<f64>,
    pub gy: DMatrix<f64>,
}

#[derive(Debug, Clone)]
pub struct DiscreteForm {
    pub beta: f64,
    pub kappa: f64,
    pub blocks: Vec<ModeBlock>,
}

/// Assemble the form for `a(u, v) = kappa a0(u, v)`.
pub fn assemble_form(
    kappa: f64,
    grid: &TimeGrid,
    basis: &EigenBasis,
    beta: f64,
) -> Result<DiscreteForm> {
    if !(kappa > 0.0) {
        return Err(Error::param("kappa", "must be positive"));
    }
    if !(beta >= 0.0) {
        return Err(Error::param("beta", "must be >= 0"));
    }
    let blocks = basis
        .lambdas()
        .iter()
        .map(|&l| mode_block(l, kappa, grid, beta))
        .collect();
    Ok(DiscreteForm {
        beta,
        kappa,
        blocks,
    })
}

fn mode_block(lambda: f64, kappa: f64, grid: &TimeGrid, beta: f64) -> ModeBlock {
    let n = grid.steps();
    let h = grid.h();
    let dim = n + 1;
    let mut b = DMatrix::zeros(dim, dim);
    let diag = 1.0 + 0.5 * kappa * lambda * h;
    let off = -1.0 + 0.5 * kappa * lambda * h;
    for row in 0..n {
        // y = chi_row; x = psi_row (left node) and psi_{row+1} (right node)
        b[(row, row)] = diag;
        b[(row, row + 1)] = off;
    }
    b[(n, n)] = 1.0;

    let mut gy = DMatrix::zeros(dim, dim);
    let wy = h * power(lambda, 1.0 + beta);
    for row in 0..n {
        gy[(row, row)] = wy;
    }
    gy[(n, n)] = power(lambda, beta);

    let wm = power(lambda, 1.0 - beta);
    let wk = power(lambda, -1.0 - beta);
    let wb = power(lambda, -beta);
    let mut gx = DMatrix::zeros(dim, dim);
    for cell in 0..n {
        let (a, c) = (cell, cell + 1);
        let mass_d = h / 3.0;
        let mass_o = h / 6.0;
        let stiff = 1.0 / h;
        gx[(a, a)] += wm * mass_d + wk * stiff;
        gx[(c, c)] += wm * mass_d + wk * stiff;
        gx[(a, c)] += wm * mass_o - wk * stiff;
        gx[(c, a)] += wm * mass_o - wk * stiff;
    }
    gx[(0, 0)] += wb;
    gx[(n, n)] += wb;
    ModeBlock { lambda, b, gx, gy }
}

fn cholesky_lower(m: &DMatrix<f64>, mode: usize, which: &'static str) -> Result<DMatrix<f64>> {
    Cholesky::<f64, Dyn>::new(m.clone())
        .map(|c| c.l())
        .ok_or(Error::IndefiniteGram { mode, which })
}

/// `L_Y^{-1} B L_X^{-T}` for one block.
fn whitened(block: &ModeBlock, mode: usize) -> Result<DMatrix<f64>> {
    let (rows, cols) = block.b.shape();
    if rows != block.gy.nrows() || cols != block.gx.nrows() {
        return Err(Error::DimensionMismatch {
            what: "Gram matrix",
            expected: rows,
            got: block.gy.nrows(),
        });
    }
    let ly = cholesky_lower(&block.gy, mode, "trial")?;
    let lx = cholesky_lower(&block.gx, mode, "test")?;
    let left = ly
        .solve_lower_triangular(&block.b)
        .ok_or(Error::IndefiniteGram {
            mode,
            which: "trial",
        })?;
    // left * L_X^{-T} = (L_X^{-1} left^T)^T
    let right = lx
        .solve_lower_triangular(&left.transpose())
        .ok_or(Error::IndefiniteGram {
            mode,
            which: "test",
        })?;
    Ok(right.transpose())
}

fn singular_values(m: &DMatrix<f64>) -> Vec<f64> {
    m.clone().singular_values().iter().copied().collect()
}

fn extremes(sv: &[f64]) -> (f64, f64) {
    sv.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), s| {
        (lo.min(*s), hi.max(*s))
    })
}

/// `(c_B, C_B)`: inf-sup and boundedness constants on the discrete spaces.
///
/// A rank-deficient form gives `c_B = 0`.
pub fn discrete_constants(form: &DiscreteForm) -> Result<(f64, f64)> {
    let per_mode = form
        .blocks
        .par_iter()
        .enumerate()
        .map(|(j, blk)| {
            let w = whitened(blk, j)?;
            let (r, c) = w.shape();
            let (lo, hi) = extremes(&singular_values(&w));
            // A rectangular block has a nontrivial kernel on the larger side.
            Ok((if r == c { lo } else { 0.0 }, hi))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(per_mode
        .into_iter()
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), (a, b)| {
            (lo.min(a), hi.max(b))
        }))
}

/// Per-mode `(lambda, c_B, C_B)`.
pub fn mode_constants(form: &DiscreteForm) -> Result<Vec<(f64, f64, f64)>> {
    form.blocks
        .iter()
        .enumerate()
        .map(|(j, blk)| {
            let (lo, hi) = extremes(&singular_values(&whitened(blk, j)?));
            Ok((blk.lambda, lo, hi))
        })
        .collect()
}

fn swapped_block(blk: &ModeBlock) -> ModeBlock {
    ModeBlock {
        lambda: blk.lambda,
        b: blk.b.transpose(),
        gx: blk.gy.clone(),
        gy: blk.gx.clone(),
    }
}

/// `|c_B(B) - c_B(B^T)|` with the Gram roles exchanged, each side computed
/// from its own factorization and SVD.
pub fn swap_check(form: &DiscreteForm) -> Result<f64> {
    for blk in &form.blocks {
        let (rows, cols) = blk.b.shape();
        if rows != cols {
            return Err(Error::NonSquare { rows, cols });
        }
    }
    let swapped = DiscreteForm {
        beta: form.beta,
        kappa: form.kappa,
        blocks: form.blocks.iter().map(swapped_block).collect(),
    };
    let (a, _) = discrete_constants(form)?;
    let (b, _) = discrete_constants(&swapped)?;
    Ok((a - b).abs())
}

/// `min_y sup_x B*(y, x) / (|y| |x|_X)`, evaluated on the swapped
/// (test-to-trial) operator. Compare against `min{1, A_min}`.
pub fn bnb2_check(form: &DiscreteForm) -> Result<f64> {
    form.blocks
        .iter()
        .enumerate()
        .map(|(j, blk)| {
            let w = whitened(&swapped_block(blk), j)?;
            Ok(extremes(&singular_values(&w)).0)
        })
        .try_fold(f64::INFINITY, |acc, v: Result<f64>| Ok(acc.min(v?)))
}

/// `max_n |x(t_n)|_H / |x|_X` for a discrete test function given by its
/// nodal coefficients per mode (`nodal[j][n]`).
pub fn embedding_ratio(form: &DiscreteForm, nodal: &[Vec<f64>]) -> Result<f64> {
    if nodal.len() != form.blocks.len() {
        return Err(Error::DimensionMismatch {
            what: "test function modes",
            expected: form.blocks.len(),
            got: nodal.len(),
        });
    }
    let dim = form.blocks[0].gx.nrows();
    let mut norm_sq = 0.0;
    let mut nodes = vec![0.0; dim];
    for (blk, x) in form.blocks.iter().zip(nodal) {
        if x.len() != dim {
            return Err(Error::DimensionMismatch {
                what: "nodal values",
                expected: dim,
                got: x.len(),
            });
        }
        let v = nalgebra::DVector::from_column_slice(x);
        norm_sq += v.dot(&(&blk.gx * &v));
        for (acc, xi) in nodes.iter_mut().zip(x) {
            *acc += xi * xi;
        }
    }
    let sup = nodes.iter().fold(0.0f64, |m, v| m.max(*v)).sqrt();
    Ok(if norm_sq > 0.0 {
        sup / norm_sq.sqrt()
    } else {
        0.0
    })
}

impl DiscreteForm {
    /// Block-diagonal `(B, GX, GY)` over all modes.
    pub fn to_dense(&self) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
        let d = self.blocks[0].b.nrows();
        let n = d * self.blocks.len();
        let mut b = DMatrix::zeros(n, n);
        let mut gx = DMatrix::zeros(n, n);
        let mut gy = DMatrix::zeros(n, n);
        for (j, blk) in self.blocks.iter().enumerate() {
            let o = j * d;
            b.view_mut((o, o), (d, d)).copy_from(&blk.b);
            gx.view_mut((o, o), (d, d)).copy_from(&blk.gx);
            gy.view_mut((o, o), (d, d)).copy_from(&blk.gy);
        }
        (b, gx, gy)
    }
}

/// `(c_B, C_B)` of an arbitrary dense triple, via the same whitening.
pub fn dense_constants(
    b: &DMatrix<f64>,
    gx: &DMatrix<f64>,
    gy: &DMatrix<f64>,
) -> Result<(f64, f64)> {
    let blk = ModeBlock {
        lambda: f64::NAN,
        b: b.clone(),
        gx: gx.clone(),
        gy: gy.clone(),
    };
    let w = whitened(&blk, 0)?;
    let (r, c) = w.shape();
    let (lo, hi) = extremes(&singular_values(&w));
    Ok((if r == c { lo } else { 0.0 }, hi))
}

/// Lower and upper bounds `min{A_min, 1/A_max, A_min/A_max}/2` and
/// `sqrt(2 max{1, A_max^2})`.
pub fn continuous_bounds(a_min: f64, a_max: f64) -> (f64, f64) {
    let lower = a_min.min(1.0 / a_max).min(a_min / a_max) / 2.0;
    let upper = (2.0 * 1f64.max(a_max * a_max)).sqrt();
    (lower, upper)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub kappa: f64,
    pub beta: f64,
    pub steps: usize,
    pub modes: usize,
    pub t_end: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    #[serde(rename = "A_min")]
    pub a_min: f64,
    #[serde(rename = "A_max")]
    pub a_max: f64,
    pub beta: f64,
    #[serde(rename = "N")]
    pub steps: usize,
    #[serde(rename = "J")]
    pub modes: usize,
    #[serde(rename = "T")]
    pub t_end: f64,
    #[serde(rename = "c_B")]
    pub c_b: f64,
    #[serde(rename = "C_B")]
    pub cap_b: f64,
    pub bound_lower: f64,
    pub bound_upper: f64,
    pub swap_diff: f64,
    pub bnb2: f64,
    pub lambda_h_max: f64,
}

impl SweepRow {
    pub fn upper_holds(&self) -> bool {
        self.cap_b <= self.bound_upper
    }

    /// Lower bound within the recorded 5% slack.
    pub fn lower_holds_soft(&self) -> bool {
        self.c_b >= 0.95 * self.bound_lower
    }
}

pub fn sweep_point(p: &SweepPoint) -> Result<SweepRow> {
    let grid = TimeGrid::new(p.t_end, p.steps)?;
    let basis = EigenBasis::new(p.modes)?;
    let form = assemble_form(p.kappa, &grid, &basis, p.beta)?;
    let (c_b, cap_b) = discrete_constants(&form)?;
    let (lo, hi) = continuous_bounds(p.kappa, p.kappa);
    Ok(SweepRow {
        a_min: p.kappa,
        a_max: p.kappa,
        beta: p.beta,
        steps: p.steps,
        modes: p.modes,
        t_end: p.t_end,
        c_b,
        cap_b,
        bound_lower: lo,
        bound_upper: hi,
        swap_diff: swap_check(&form)?,
        bnb2: bnb2_check(&form)?,
        lambda_h_max: basis.lambda(p.modes - 1) * grid.h(),
    })
}

pub fn infsup_sweep(points: &[SweepPoint]) -> Result<Vec<SweepRow>> {
    points.par_iter().map(sweep_point).collect()
}

pub const SWEEP_CSV_HEADER: &str = "A_min,A_max,beta,N,J,c_B,C_B,bound_lower,bound_upper";

pub fn write_sweep_csv<W: std::io::Write>(out: &mut W, rows: &[SweepRow]) -> Result<()> {
    writeln!(out, "{SWEEP_CSV_HEADER}")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.a_min,
            r.a_max,
            r.beta,
            r.steps,
            r.modes,
            r.c_b,
            r.cap_b,
            r.bound_lower,
            r.bound_upper
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{NormalStream, AUX_LANE};
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn form(kappa: f64, modes: usize, steps: usize, t: f64, beta: f64) -> DiscreteForm {
        assemble_form(
            kappa,
            &TimeGrid::new(t, steps).unwrap(),
            &EigenBasis::new(modes).unwrap(),
            beta,
        )
        .unwrap()
    }

    /// One mode, one interval: GX by hand from the hats 1 - s/h and s/h.
    #[test]
    fn hand_computed_single_block() {
        let f = form(1.0, 1, 1, 0.5, 0.0);
        let blk = &f.blocks[0];
        let (l, h) = (PI * PI, 0.5);
        assert_relative_eq!(
            blk.gx[(0, 0)],
            l * h / 3.0 + 1.0 / (l * h) + 1.0,
            max_relative = 1e-14
        );
        assert_relative_eq!(
            blk.gx[(1, 1)],
            l * h / 3.0 + 1.0 / (l * h) + 1.0,
            max_relative = 1e-14
        );
        assert_relative_eq!(
            blk.gx[(0, 1)],
            l * h / 6.0 - 1.0 / (l * h),
            max_relative = 1e-14
        );
        assert_relative_eq!(blk.gy[(0, 0)], h * l);
        assert_eq!(blk.gy[(1, 1)], 1.0);
        assert_relative_eq!(blk.b[(0, 0)], 1.0 + l * h / 2.0);
        assert_relative_eq!(blk.b[(0, 1)], -1.0 + l * h / 2.0);
        assert_eq!((blk.b[(1, 0)], blk.b[(1, 1)]), (0.0, 1.0));
    }

    #[test]
    fn beta_is_diagonal_reweighting() {
        let f0 = form(1.3, 3, 5, 0.2, 0.0);
        let f1 = form(1.3, 3, 5, 0.2, 0.7);
        for (a, b) in f0.blocks.iter().zip(&f1.blocks) {
            let s = a.lambda.powf(0.7);
            assert_eq!(a.b, b.b);
            assert!((&a.gy * s - &b.gy).abs().max() < 1e-9 * b.gy.abs().max());
            assert!((&a.gx / s - &b.gx).abs().max() < 1e-12 * b.gx.abs().max());
        }
        let (c0, d0) = discrete_constants(&f0).unwrap();
        let (c1, d1) = discrete_constants(&f1).unwrap();
        assert_relative_eq!(c0, c1, max_relative = 1e-10);
        assert_relative_eq!(d0, d1, max_relative = 1e-10);
    }

    #[test]
    fn kappa_one_resolved_within_bounds() {
        let f = form(1.0, 8, 32, 0.01, 0.0);
        let (c, cap) = discrete_constants(&f).unwrap();
        assert!(c >= 0.5 && c <= cap, "{c}");
        assert!(cap <= 2f64.sqrt(), "{cap}");
    }

    /// Unresolved time steps (lambda h >> 1) make the lowest-order pairing
    /// lose stability: c_B decays with lambda h.
    #[test]
    fn cb_degrades_when_unresolved() {
        let vals: Vec<f64> = [0.1, 10.0, 100.0, 1000.0]
            .iter()
            .map(|&lh: &f64| {
                let g = TimeGrid::new(lh / (PI * PI) * 16.0, 16).unwrap();
                let f = assemble_form(1.0, &g, &EigenBasis::new(1).unwrap(), 0.0).unwrap();
                discrete_constants(&f).unwrap().0
            })
            .collect();
        assert!(vals.windows(2).all(|w| w[1] < w[0]), "{vals:?}");
        assert!(vals[3] < 0.1);
    }

    #[test]
    fn dense_equals_blockwise() {
        let f = form(0.7, 4, 6, 0.05, 0.0);
        let (b, gx, gy) = f.to_dense();
        let (c, cap) = dense_constants(&b, &gx, &gy).unwrap();
        let (cb, capb) = discrete_constants(&f).unwrap();
        assert_relative_eq!(c, cb, max_relative = 1e-10);
        assert_relative_eq!(cap, capb, max_relative = 1e-10);
    }

    #[test]
    fn swap_and_rectangular() {
        let f = form(1.0, 4, 8, 0.1, 0.0);
        assert!(swap_check(&f).unwrap() <= 1e-10);
        let mut bad = f.clone();
        bad.blocks[0].b = DMatrix::zeros(9, 8);
        assert!(matches!(
            swap_check(&bad),
            Err(Error::NonSquare { rows: 9, cols: 8 })
        ));
    }

    #[test]
    fn indefinite_gram_reported() {
        let mut f = form(1.0, 1, 2, 0.1, 0.0);
        f.blocks[0].gx[(0, 0)] = -1.0;
        assert!(matches!(
            discrete_constants(&f),
            Err(Error::IndefiniteGram { which: "test", .. })
        ));
    }

    /// Brute-force `min_y max_x y^T B x / (|y|_Y |x|_X)` for a single block
    /// over a discretized unit circle in each space.
    #[test]
    fn bnb2_brute_force_single_block() {
        for kappa in [1.0, 0.5] {
            let f = form(kappa, 1, 1, 0.1, 0.0);
            let blk = &f.blocks[0];
            let ly = blk.gy.clone().cholesky().unwrap().l();
            let lx = blk.gx.clone().cholesky().unwrap().l();
            let ly_inv_t = ly.try_inverse().unwrap().transpose();
            let lx_inv_t = lx.try_inverse().unwrap().transpose();
            let unit = |inv_t: &DMatrix<f64>, th: f64| {
                inv_t * nalgebra::DVector::from_vec(vec![th.cos(), th.sin()])
            };
            let ratio = |ty: f64, tx: f64| {
                let y = unit(&ly_inv_t, ty);
                let x = unit(&lx_inv_t, tx);
                (y.transpose() * &blk.b * x)[(0, 0)]
            };
            let sup_x = |ty: f64| {
                let n = 2048;
                let (mut best, mut arg) = (f64::NEG_INFINITY, 0.0);
                for k in 0..n {
                    let t = k as f64 * std::f64::consts::TAU / n as f64;
                    let v = ratio(ty, t);
                    if v > best {
                        best = v;
                        arg = t;
                    }
                }
                let step = std::f64::consts::TAU / n as f64;
                let (mut a, mut b) = (arg - step, arg + step);
                for _ in 0..100 {
                    let m1 = a + (b - a) / 3.0;
                    let m2 = b - (b - a) / 3.0;
                    if ratio(ty, m1) < ratio(ty, m2) {
                        a = m1;
                    } else {
                        b = m2;
                    }
                }
                ratio(ty, 0.5 * (a + b))
            };
            let n = 2048;
            let (mut worst, mut arg) = (f64::INFINITY, 0.0);
            for k in 0..n {
                let t = k as f64 * PI / n as f64;
                let v = sup_x(t);
                if v < worst {
                    worst = v;
                    arg = t;
                }
            }
            let step = PI / n as f64;
            let (mut a, mut b) = (arg - step, arg + step);
            for _ in 0..100 {
                let m1 = a + (b - a) / 3.0;
                let m2 = b - (b - a) / 3.0;
                if sup_x(m1) > sup_x(m2) {
                    a = m1;
                } else {
                    b = m2;
                }
            }
            let brute = sup_x(0.5 * (a + b));
            let svd = bnb2_check(&f).unwrap();
            assert!((brute - svd).abs() < 1e-6, "{brute} vs {svd}");
        }
    }

    #[test]
    fn embedding_on_random_functions() {
        let f = form(1.0, 6, 20, 1.0, 0.0);
        for p in 0..50 {
            let mut s = NormalStream::new(99, p, AUX_LANE);
            let nodal: Vec<Vec<f64>> = (0..6)
                .map(|_| {
                    let mut v = Vec::with_capacity(21);
                    while v.len() < 21 {
                        v.extend(s.block());
                    }
                    v.truncate(21);
                    v
                })
                .collect();
            assert!(embedding_ratio(&f, &nodal).unwrap() <= 1.0);
        }
        // a single hat at t = 0 pins the bound through the boundary term
        let mut nodal = vec![vec![0.0; 21]; 6];
        nodal[0][0] = 1.0;
        assert!(embedding_ratio(&f, &nodal).unwrap() <= 1.0);
    }

    #[test]
    fn sweep_csv_header() {
        let rows = infsup_sweep(&[SweepPoint {
            kappa: 2.0,
            beta: 0.0,
            steps: 8,
            modes: 2,
            t_end: 0.01,
        }])
        .unwrap();
        let mut buf = Vec::new();
        write_sweep_csv(&mut buf, &rows).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with(SWEEP_CSV_HEADER));
        assert_eq!(text.lines().count(), 2);
        assert_relative_eq!(rows[0].bound_lower, 0.25);
        assert_relative_eq!(rows[0].bound_upper, 8f64.sqrt());
    }

    fn spd(n: usize, seed: u64, lane: u32) -> DMatrix<f64> {
        let mut s = NormalStream::new(seed, 0, lane);
        let mut vals = Vec::new();
        while vals.len() < n * n {
            vals.extend(s.block());
        }
        vals.truncate(n * n);
        let a = DMatrix::from_vec(n, n, vals);
        &a * a.transpose() + DMatrix::identity(n, n) * (n as f64)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn swap_identity_random_spd(seed in 0u64..10_000, n in 2usize..9) {
            let mut f = form(1.0, 1, n - 1, 0.1, 0.0);
            let blk = &mut f.blocks[0];
            blk.gx = &blk.gx + spd(n, seed, 0) * 0.1;
            blk.gy = &blk.gy + spd(n, seed, 1) * 0.1;
            blk.b = &blk.b + spd(n, seed, 2) * 0.05;
            prop_assert!(swap_check(&f).unwrap() <= 1e-10);
        }
    }
}
