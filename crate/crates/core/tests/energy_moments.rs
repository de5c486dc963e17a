//! Monte Carlo energies against per-mode second-moment recursions.
//!
//! For additive noise each mode is a scalar linear Gaussian recursion, so
//! the expected discrete energies follow from exact moment propagation with
//! the joint covariance of `(dm, im)`. The terminal moment is also compared
//! with the continuous value `e^{-2 lambda T} u0^2 + gamma (1 - e^{-2 lambda T}) / (2 lambda)`.

use std::f64::consts::PI;

use stheat_core::noise::sample_noise;
use stheat_core::spacetime::{assemble_and_solve, energy_norms};
use stheat_core::stats::mc_values;
use stheat_core::{EigenBasis, Forcing, LoadSpec, OperatorSpec, QSpec, SpectralVec, TimeGrid};

/// `(E sum_n h lambda U1_n^2, E U2(T)^2)` for one mode with `f = 0`.
fn mode_moments(lambda: f64, gamma: f64, u0: f64, h: f64, steps: usize) -> (f64, f64) {
    let r = 0.5 * lambda * h;
    let a = 1.0 / (1.0 + r);
    // xi1 = (dm - im/h)/(1+r) and e = im/h.
    let var_xi = gamma * h / 3.0 * a * a;
    let cov = gamma * h / 6.0 * a;
    let var_e = gamma * h / 3.0;
    let mut m2 = u0 * u0;
    let mut v_int = 0.0;
    for _ in 0..steps {
        v_int += h * lambda * (a * a * m2 + var_xi);
        let g = (1.0 - r) * a;
        m2 = g * g * m2 + (1.0 - r).powi(2) * var_xi + 2.0 * (1.0 - r) * cov + var_e;
    }
    (v_int, m2)
}

#[test]
fn energies_match_moment_recursion() {
    let (modes, steps, t_end) = (4, 1024, 1.0);
    let grid = TimeGrid::new(t_end, steps).unwrap();
    let basis = EigenBasis::new(modes).unwrap();
    let q = QSpec::power_law(modes, 2.0).unwrap();
    let op = OperatorSpec::constant(1.0).unwrap();
    let load = LoadSpec::new(SpectralVec::unit(modes, 0), Forcing::Zero, vec![1.0; modes]).unwrap();
    let seed = 4242;
    let (vals, _) = mc_values(
        |p| {
            let noise = sample_noise(&grid, &q, seed, p);
            let sol = assemble_and_solve(&op, &load, &noise, &grid, &basis, seed, p).unwrap();
            let (v, _) = energy_norms(&sol, &grid, &basis);
            Ok((v, sol.terminal().norm_h_sq()))
        },
        2000,
    )
    .unwrap();
    let stats = |k: usize| {
        let xs: Vec<f64> = vals
            .iter()
            .map(|x| if k == 0 { x.0 } else { x.1 })
            .collect();
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (mean, (var / n).sqrt())
    };
    let (mut v_exp, mut t_exp, mut t_cont) = (0.0, 0.0, 0.0);
    for j in 1..=modes {
        let lambda = (j as f64 * PI).powi(2);
        let gamma = (j as f64).powi(-2);
        let u0 = if j == 1 { 1.0 } else { 0.0 };
        let (v, t) = mode_moments(lambda, gamma, u0, t_end / steps as f64, steps);
        v_exp += v;
        t_exp += t;
        let decay = (-2.0 * lambda * t_end).exp();
        t_cont += decay * u0 * u0 + gamma * (1.0 - decay) / (2.0 * lambda);
    }
    let (v_mc, v_se) = stats(0);
    let (t_mc, t_se) = stats(1);
    assert!(
        (v_mc - v_exp).abs() <= 3.0 * v_se,
        "V energy {v_mc} +- {v_se} vs {v_exp}"
    );
    assert!(
        (t_mc - t_exp).abs() <= 3.0 * t_se,
        "terminal {t_mc} +- {t_se} vs {t_exp}"
    );
    // Resolved grid: the scheme's moment is within 1% of the continuous one.
    assert!(
        (t_exp - t_cont).abs() <= 0.01 * t_cont,
        "{t_exp} vs {t_cont}"
    );
}
