//! Exact per-mode Ornstein-Uhlenbeck integration of the mild solution.
//!
//! With `A = kappa A0` frozen on each interval, mode `j` evolves as
//! `u_{n+1} = e^{-x} u_n + f (1 - e^{-x}) / lambda + psi I_n` with
//! `x = kappa lambda_j h` and `I_n = int e^{-kappa lambda (t_{n+1} - s)} dW_j(s)`.
//! `I_n` is drawn from its Gaussian law conditioned on the pair `(dW, iW)`
//! consumed by the space-time solver, so both see the same omega.

use serde::{Deserialize, Serialize};

use crate::error::{ensure_len, Error, Result};
use crate::noise::{sample_noise, NoiseSample, QSpec, TimeGrid};
use crate::quad::GaussLegendre;
use crate::spacetime::{LoadSpec, OperatorSpec};
use crate::spectral::{EigenBasis, SpectralVec};
use crate::stats::{mc_values, summarize};

/// One exact step of `du = (-lambda u + f) dt + sigma dB` driven by a
/// standard normal `z`.
pub fn ou_step(u: f64, lambda_eff: f64, f: f64, sigma: f64, h: f64, z: f64) -> Result<f64> {
    if !(lambda_eff > 0.0) {
        return Err(Error::param("lambda_eff", "must be positive (coercivity)"));
    }
    if !(h > 0.0) {
        return Err(Error::param("h", "step must be positive"));
    }
    let x = lambda_eff * h;
    let gain = -(-x).exp_m1() / lambda_eff;
    let var = -(-2.0 * x).exp_m1() / (2.0 * lambda_eff);
    Ok((-x).exp() * u + f * gain + sigma * var.sqrt() * z)
}

/// `gamma (1 - e^{-2 lambda t}) / (2 lambda)`.
pub fn convolution_moment(lambda: f64, gamma: f64, t: f64) -> f64 {
    gamma * -(-2.0 * lambda * t).exp_m1() / (2.0 * lambda)
}

/// Linear coefficients of the conditional law of the OU integral.
///
/// `I = c_dw dW + c_iw iW + sqrt(gamma) resid_sd z` with `z` independent of
/// `(dW, iW)` reproduces the joint law of `(dW, iW, I)` for `Q`-eigenvalue
/// `gamma`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OuCoupling {
    pub decay: f64,
    pub forcing_gain: f64,
    pub c_dw: f64,
    pub c_iw: f64,
    pub resid_sd: f64,
}

impl OuCoupling {
    pub fn new(lambda_eff: f64, h: f64) -> Result<Self> {
        if !(lambda_eff > 0.0) {
            return Err(Error::param("lambda_eff", "must be positive (coercivity)"));
        }
        let x = lambda_eff * h;
        let em1 = -(-x).exp_m1(); // 1 - e^{-x}
                                  // Dimensionless moments of k(tau) = e^{-x (1 - tau)} on [0, 1].
        let (m0, m1, resid_var) = if x < 1.0 {
            let gl = GaussLegendre::on_interval(16, 0.0, 1.0);
            let k = |t: f64| (-x * (1.0 - t)).exp();
            let m0 = gl.integrate(k);
            let m1 = gl.integrate(|t| (t - 0.5) * k(t));
            let rv = gl.integrate(|t| (k(t) - m0 - 12.0 * m1 * (t - 0.5)).powi(2));
            (m0, m1, rv)
        } else {
            let m0 = em1 / x;
            let m1 = 0.5 * (1.0 + (-x).exp()) / x - em1 / (x * x);
            let k2 = -(-2.0 * x).exp_m1() / (2.0 * x);
            (m0, m1, k2 - m0 * m0 - 12.0 * m1 * m1)
        };
        // Projection on {1, s - h/2}: I = m0 dW + (12 m1 / h)(iW - h dW / 2) + residual.
        let c_iw = 12.0 * m1 / h;
        let c_dw = m0 - c_iw * h / 2.0;
        Ok(Self {
            decay: (-x).exp(),
            forcing_gain: em1 / lambda_eff,
            c_dw,
            c_iw,
            resid_sd: (h * resid_var.max(0.0)).sqrt(),
        })
    }

    #[inline]
    pub fn integral(&self, dw: f64, iw: f64, gamma: f64, z: f64) -> f64 {
        self.c_dw * dw + self.c_iw * iw + gamma.sqrt() * self.resid_sd * z
    }
}

/// Oracle values at every grid node.
#[derive(Debug, Clone, PartialEq)]
pub struct MildPath {
    pub values: Vec<SpectralVec>,
    pub seed: u64,
    pub path: u64,
}

/// Exact mild solution on the noise sample's grid.
///
/// Requires a piecewise-constant coefficient law and a sample that still
/// carries its conditioning draws whenever the noise is active.
#[allow(clippy::too_many_arguments)]
pub fn mild_solve(
    op: &OperatorSpec,
    load: &LoadSpec,
    q: &QSpec,
    noise: &NoiseSample,
    grid: &TimeGrid,
    basis: &EigenBasis,
    seed: u64,
    path: u64,
) -> Result<MildPath> {
    if !op.is_piecewise_constant() {
        return Err(Error::Hypothesis(
            "mild oracle is exact only for piecewise-constant coefficients".into(),
        ));
    }
    let modes = basis.len();
    let steps = grid.steps();
    ensure_len("load modes", modes, load.modes())?;
    ensure_len("Q spectrum", modes, q.len())?;
    ensure_len("noise modes", modes, noise.modes())?;
    ensure_len("noise intervals", steps, noise.grid().steps())?;
    let h = grid.h();
    let kappa = op.realize(grid, seed, path)?;
    let mut values = vec![load.u0.clone()];
    let mut cur = load.u0.clone().into_inner();
    // Coefficients only depend on kappa per interval; reuse across runs of equal values.
    let mut cache: Vec<Option<(f64, OuCoupling)>> = vec![None; modes];
    for n in 0..steps {
        let kap = kappa.values()[n];
        for j in 0..modes {
            let c = match cache[j] {
                Some((k, c)) if k == kap => c,
                _ => {
                    let c = OuCoupling::new(kap * basis.lambda(j), h)?;
                    cache[j] = Some((kap, c));
                    c
                }
            };
            let psi = load.psi_diag[j];
            let gamma = q.gammas()[j];
            let noise_term = if psi != 0.0 && gamma != 0.0 {
                let z = noise.aux_mode(j).ok_or(Error::MissingResidual)?[n];
                psi * c.integral(noise.dw(j, n), noise.iw(j, n), gamma, z)
            } else {
                0.0
            };
            cur[j] = c.decay * cur[j] + c.forcing_gain * load.f.coeff(n, j) + noise_term;
        }
        values.push(SpectralVec::from(cur.clone()));
    }
    Ok(MildPath { values, seed, path })
}

/// `E int_0^T |int_0^r S0(r-s) Psi dW|_V^2 dr` for one mode.
pub fn lemma_lhs1_mode(lambda: f64, gamma: f64, t: f64) -> f64 {
    // int_0^T lambda * gamma (1 - e^{-2 lambda r}) / (2 lambda) dr
    0.5 * gamma * (t - convolution_moment(lambda, 1.0, t))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChowReport {
    pub schema_version: u32,
    pub lhs1: f64,
    pub rhs1: f64,
    pub lhs2: f64,
    pub lhs2_se: f64,
    pub rhs2: f64,
    pub paths: usize,
    pub seed: u64,
    pub first_holds: bool,
    pub second_holds: bool,
}

pub const MIN_CHOW_PATHS: usize = 100;

/// Maximal-inequality constants for the stochastic convolution with `A0`.
///
/// `LHS1` is analytic, `LHS2 = E max_n |Z(t_n)|_H^2` is Monte Carlo over grid
/// nodes; the second inequality is checked as `LHS2 + 3 SE <= RHS2`.
pub fn chow_bounds_check(
    q: &QSpec,
    psi_diag: &[f64],
    grid: &TimeGrid,
    basis: &EigenBasis,
    paths: usize,
    seed: u64,
) -> Result<ChowReport> {
    if paths < MIN_CHOW_PATHS {
        return Err(Error::TooFewPaths {
            got: paths,
            min: MIN_CHOW_PATHS,
        });
    }
    let modes = basis.len();
    ensure_len("psi diagonal", modes, psi_diag.len())?;
    ensure_len("Q spectrum", modes, q.len())?;
    let t = grid.t_end();
    let hs2: f64 = psi_diag
        .iter()
        .zip(q.gammas())
        .map(|(p, g)| p * p * g)
        .sum();
    let lhs1: f64 = basis
        .lambdas()
        .iter()
        .zip(psi_diag)
        .zip(q.gammas())
        .map(|((l, p), g)| lemma_lhs1_mode(*l, p * p * g, t))
        .sum();
    let h = grid.h();
    let couplings = basis
        .lambdas()
        .iter()
        .map(|l| OuCoupling::new(*l, h))
        .collect::<Result<Vec<_>>>()?;
    let (values, secs) = mc_values(
        |p| {
            let noise = sample_noise(grid, q, seed, p);
            let mut z = vec![0.0; modes];
            let mut sup = 0.0f64;
            for n in 0..grid.steps() {
                let mut norm = 0.0;
                for j in 0..modes {
                    let psi = psi_diag[j];
                    let gamma = q.gammas()[j];
                    if psi == 0.0 || gamma == 0.0 {
                        continue;
                    }
                    let c = &couplings[j];
                    let aux = noise.aux_mode(j).ok_or(Error::MissingResidual)?[n];
                    z[j] = c.decay * z[j]
                        + psi * c.integral(noise.dw(j, n), noise.iw(j, n), gamma, aux);
                    norm += z[j] * z[j];
                }
                sup = sup.max(norm);
            }
            Ok(sup)
        },
        paths,
    )?;
    let mc = summarize(&values, seed, secs)?;
    let rhs1 = 0.5 * t * hs2;
    let rhs2 = 16.0 * t * hs2;
    Ok(ChowReport {
        schema_version: crate::SCHEMA_VERSION,
        lhs1,
        rhs1,
        lhs2: mc.estimate,
        lhs2_se: mc.std_error,
        rhs2,
        paths,
        seed,
        first_holds: lhs1 <= rhs1,
        second_holds: mc.estimate + 3.0 * mc.std_error <= rhs2,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quad::composite;
    use crate::rng::{NormalStream, AUX_LANE};
    use crate::spacetime::{Forcing, KappaLaw};
    use crate::stats::mc_expectation;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    #[test]
    fn ou_step_closed_forms() {
        let pi2 = PI * PI;
        assert_relative_eq!(
            ou_step(1.0, pi2, 0.0, 0.0, 0.1, 0.7).unwrap(),
            0.372_708,
            epsilon = 1e-6
        );
        for h in [0.01, 0.3, 2.0] {
            assert_relative_eq!(
                ou_step(0.0, pi2, pi2, 0.0, h, 0.0).unwrap(),
                1.0 - (-pi2 * h).exp(),
                max_relative = 1e-14
            );
        }
        assert!(ou_step(1.0, 0.0, 0.0, 0.0, 0.1, 0.0).is_err());
        assert!(ou_step(1.0, -1.0, 0.0, 0.0, 0.1, 0.0).is_err());
    }

    #[test]
    fn ou_step_variance_against_euler() {
        let pi2 = PI * PI;
        let var = -(-2.0 * pi2 * 0.1f64).exp_m1() / (2.0 * pi2);
        assert_relative_eq!(var, 0.043_623, epsilon = 1e-6);
        let m = 100_000;
        let s = mc_expectation(
            |p| {
                let z = NormalStream::new(4, p, AUX_LANE).block()[0];
                Ok(ou_step(0.0, pi2, 0.0, 1.0, 0.1, z).unwrap().powi(2))
            },
            m,
            4,
        )
        .unwrap();
        assert!((s.estimate - var).abs() < 3.0 * s.std_error);
        // Euler-Maruyama with h/256 has variance sum_k (1 - lambda dt)^{2k} dt.
        let dt = 0.1 / 256.0;
        let em: f64 = (0..256).map(|k| (1.0 - pi2 * dt).powi(2 * k) * dt).sum();
        assert_relative_eq!(em, var, max_relative = 0.02);
    }

    #[test]
    fn convolution_moment_limits() {
        assert_eq!(convolution_moment(3.0, 2.0, 0.0), 0.0);
        assert_relative_eq!(convolution_moment(3.0, 2.0, 1e3), 2.0 / 6.0);
        let pi2 = PI * PI;
        let v = convolution_moment(pi2, 1.0, 1.0);
        assert_relative_eq!(v, 0.050_660, epsilon = 1e-6);
        let quad = composite(|s| (-2.0 * pi2 * (1.0 - s)).exp(), 0.0, 1.0, 32, 8);
        assert_relative_eq!(v, quad, max_relative = 1e-12);
        let mut last = 0.0;
        for k in 0..50 {
            let m = convolution_moment(5.0, 1.0, k as f64 * 0.05);
            assert!(m >= last && m <= 0.1);
            last = m;
        }
    }

    /// Joint second moments of (dW, iW, I) from the coupling match the
    /// closed-form covariances of the three Wiener integrals.
    #[test]
    fn coupling_reproduces_joint_covariance() {
        for (lam, h) in [(PI * PI, 0.1), (40.0, 0.001), (4000.0, 0.05), (2.0, 0.3)] {
            let c = OuCoupling::new(lam, h).unwrap();
            let x = lam * h;
            let a1 = -(-x).exp_m1() / lam;
            let a2 = h / lam - a1 / lam;
            let a0 = -(-2.0 * x).exp_m1() / (2.0 * lam);
            // Cov(dW, I) = c_dw h + c_iw h^2/2, Cov(iW, I) = c_dw h^2/2 + c_iw h^3/3
            assert_relative_eq!(c.c_dw * h + c.c_iw * h * h / 2.0, a1, max_relative = 1e-10);
            assert_relative_eq!(
                c.c_dw * h * h / 2.0 + c.c_iw * h.powi(3) / 3.0,
                a2,
                max_relative = 1e-9
            );
            let v = c.c_dw.powi(2) * h
                + 2.0 * c.c_dw * c.c_iw * h * h / 2.0
                + c.c_iw.powi(2) * h.powi(3) / 3.0
                + c.resid_sd.powi(2);
            assert_relative_eq!(v, a0, max_relative = 1e-10);
        }
    }

    #[test]
    fn deterministic_decay() {
        let b = EigenBasis::new(3).unwrap();
        let g = TimeGrid::new(1.0, 10).unwrap();
        let op = OperatorSpec::constant(2.0).unwrap();
        let load = LoadSpec::new(SpectralVec::unit(3, 0), Forcing::Zero, vec![0.0; 3]).unwrap();
        let q = QSpec::zero(3).unwrap();
        let path = mild_solve(&op, &load, &q, &NoiseSample::zero(3, g), &g, &b, 0, 0).unwrap();
        for (n, v) in path.values.iter().enumerate() {
            assert_relative_eq!(
                v[0],
                (-2.0 * PI * PI * g.node(n)).exp(),
                max_relative = 1e-12
            );
            assert_eq!(v[1], 0.0);
        }
        let zero = mild_solve(
            &op,
            &LoadSpec::zero(3),
            &q,
            &NoiseSample::zero(3, g),
            &g,
            &b,
            0,
            0,
        )
        .unwrap();
        assert!(zero.values.iter().all(|v| v.norm_h() == 0.0));
    }

    #[test]
    fn rejects_smooth_kappa() {
        let b = EigenBasis::new(1).unwrap();
        let g = TimeGrid::new(1.0, 4).unwrap();
        let op = OperatorSpec::new(1.0, 2.0, KappaLaw::Smooth { amplitude: 0.5 }).unwrap();
        let q = QSpec::zero(1).unwrap();
        let r = mild_solve(
            &op,
            &LoadSpec::zero(1),
            &q,
            &NoiseSample::zero(1, g),
            &g,
            &b,
            0,
            0,
        );
        assert!(matches!(r, Err(Error::Hypothesis(_))));
    }

    #[test]
    fn coarsened_noise_is_rejected_when_active() {
        let b = EigenBasis::new(1).unwrap();
        let g = TimeGrid::new(1.0, 4).unwrap();
        let q = QSpec::new(vec![1.0]).unwrap();
        let coarse = sample_noise(&TimeGrid::new(1.0, 8).unwrap(), &q, 0, 0)
            .coarsen(2)
            .unwrap();
        let load = LoadSpec::new(SpectralVec::zeros(1), Forcing::Zero, vec![1.0]).unwrap();
        let op = OperatorSpec::constant(1.0).unwrap();
        let r = mild_solve(&op, &load, &q, &coarse, &g, &b, 0, 0);
        assert!(matches!(r, Err(Error::MissingResidual)));
    }

    #[test]
    fn second_moment_matches_ito_isometry() {
        let modes = 8;
        let b = EigenBasis::new(modes).unwrap();
        let g = TimeGrid::new(1.0, 16).unwrap();
        let q = QSpec::power_law(modes, 2.0).unwrap();
        let op = OperatorSpec::constant(1.0).unwrap();
        let load =
            LoadSpec::new(SpectralVec::zeros(modes), Forcing::Zero, vec![1.0; modes]).unwrap();
        let s = mc_expectation(
            |p| {
                let noise = sample_noise(&g, &q, 77, p);
                let path = mild_solve(&op, &load, &q, &noise, &g, &b, 77, p)?;
                Ok(path.values.last().unwrap().norm_h_sq())
            },
            10_000,
            77,
        )
        .unwrap();
        let exact: f64 = (0..modes)
            .map(|j| convolution_moment(b.lambda(j), q.gammas()[j], 1.0))
            .sum();
        assert!(
            (s.estimate - exact).abs() < 3.0 * s.std_error,
            "{} vs {exact} (se {})",
            s.estimate,
            s.std_error
        );
    }

    #[test]
    fn chow_zero_and_small_paths() {
        let b = EigenBasis::new(4).unwrap();
        let g = TimeGrid::new(1.0, 8).unwrap();
        let q = QSpec::power_law(4, 2.0).unwrap();
        let r = chow_bounds_check(&q, &[0.0; 4], &g, &b, 100, 1).unwrap();
        assert_eq!((r.lhs1, r.rhs1, r.lhs2, r.rhs2), (0.0, 0.0, 0.0, 0.0));
        assert!(r.first_holds && r.second_holds);
        assert!(matches!(
            chow_bounds_check(&q, &[1.0; 4], &g, &b, 99, 1),
            Err(Error::TooFewPaths { .. })
        ));
    }

    #[test]
    fn single_mode_lhs1() {
        let pi2 = PI * PI;
        let want = 0.5 * (1.0 - (1.0 - (-2.0 * pi2).exp()) / (2.0 * pi2));
        assert_relative_eq!(lemma_lhs1_mode(pi2, 1.0, 1.0), want, max_relative = 1e-14);
        let quad = composite(|r| pi2 * convolution_moment(pi2, 1.0, r), 0.0, 1.0, 64, 8);
        assert_relative_eq!(lemma_lhs1_mode(pi2, 1.0, 1.0), quad, max_relative = 1e-12);
    }
}
