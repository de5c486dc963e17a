//! The experiment suite. Each runner is a pure function of the resolved
//! config and returns a report plus CSV tables; writing files is left to
//! the caller.

use std::fmt::Write as _;

use serde::Serialize;
use serde_json::json;

use crate::config::{Config, InitialDatum};
use crate::error::{Error, Result};
use crate::infsup::{infsup_sweep, write_sweep_csv, SweepPoint, SweepRow};
use crate::mild::{chow_bounds_check, lemma_lhs1_mode, mild_solve, ChowReport};
use crate::multiplicative::{
    first_mode_self_coupling, holder_bound, holder_bound_inverted, picard_solve, GSpec,
    PicardOptions, PicardTrace, PICARD_CSV_HEADER,
};
use crate::noise::{
    coupling_norm_beta, coupling_trend, hs_norm_psiq, sample_noise, write_noise_csv, QSpec,
    SeriesTrend, TimeGrid,
};
use crate::report::Report;
use crate::rng::{NormalStream, AUX_LANE};
use crate::spacetime::{
    assemble_and_solve, check_versions, energy_norms, energy_norms_beta, residual, Drive, Forcing,
    LoadSpec, OperatorSpec, SpaceTimeSolution,
};
use crate::spectral::{EigenBasis, SpectralVec};
use crate::stats::{ks_critical_1pct, ks_statistic, mc_values, summarize, McSummary};

/// Tolerance of the discrete identities checked on every path.
pub const IDENTITY_TOL: f64 = 1e-10;

/// A CSV table destined for `<out>/<file>`.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub file: String,
    pub contents: String,
}

#[derive(Debug, Clone)]
pub struct Output {
    pub report: Report,
    pub tables: Vec<Table>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Experiment {
    Energy,
    Regularity,
    MildEquiv,
    Infsup,
    LemmaConstants,
    Multiplicative,
    NoiseDump,
}

impl Experiment {
    pub const ALL: [Experiment; 7] = [
        Experiment::Energy,
        Experiment::Regularity,
        Experiment::MildEquiv,
        Experiment::Infsup,
        Experiment::LemmaConstants,
        Experiment::Multiplicative,
        Experiment::NoiseDump,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Experiment::Energy => "energy",
            Experiment::Regularity => "regularity",
            Experiment::MildEquiv => "mild_equiv",
            Experiment::Infsup => "infsup",
            Experiment::LemmaConstants => "lemma_constants",
            Experiment::Multiplicative => "multiplicative",
            Experiment::NoiseDump => "noise_dump",
        }
    }

    pub fn run(&self, cfg: &Config) -> Result<Output> {
        match self {
            Experiment::Energy => run_energy_bound(cfg),
            Experiment::Regularity => run_regularity(cfg),
            Experiment::MildEquiv => run_mild_equivalence(cfg),
            Experiment::Infsup => run_infsup_sweep(cfg),
            Experiment::LemmaConstants => run_lemma_constants(cfg),
            Experiment::Multiplicative => run_multiplicative(cfg),
            Experiment::NoiseDump => run_noise_dump(cfg),
        }
    }
}

fn table(file: impl Into<String>, contents: String) -> Table {
    Table {
        file: file.into(),
        contents,
    }
}

fn u0_name(u: InitialDatum) -> &'static str {
    match u {
        InitialDatum::Zero => "zero",
        InitialDatum::Phi1 => "phi1",
        InitialDatum::Decaying => "decaying",
    }
}

// ---------------------------------------------------------------- energy

#[derive(Debug, Clone, Serialize)]
pub struct EnergyRow {
    pub modes: usize,
    pub steps: usize,
    pub kappa: f64,
    pub rho: f64,
    pub u0: &'static str,
    pub lhs: McSummary,
    pub rhs: f64,
    /// `None` when both sides vanish.
    pub ratio: Option<f64>,
    /// 95% interval of the ratio from the LHS standard error.
    pub ratio_ci: Option<(f64, f64)>,
    pub max_identity_residual: f64,
    pub max_weak_residual: f64,
}

pub const ENERGY_CSV_HEADER: &str = "J,N,kappa,rho,u0,lhs,lhs_se,rhs,ratio,ratio_lo,ratio_hi";

/// Monte Carlo LHS and deterministic RHS of the energy bound for one point.
#[allow(clippy::too_many_arguments)]
pub fn energy_point(
    modes: usize,
    steps: usize,
    t_end: f64,
    kappa: f64,
    q: &QSpec,
    load: &LoadSpec,
    paths: usize,
    seed: u64,
) -> Result<EnergyRow> {
    let basis = EigenBasis::new(modes)?;
    let grid = TimeGrid::new(t_end, steps)?;
    let op = OperatorSpec::constant(kappa)?;
    let rhs = load.f.dual_energy(&basis, &grid)
        + load.u0.norm_h_sq()
        + t_end * hs_norm_psiq(&load.psi_diag, q, &basis, 0.0)?.powi(2);
    let (values, secs) = mc_values(
        |p| {
            let noise = sample_noise(&grid, q, seed, p);
            let sol = assemble_and_solve(&op, load, &noise, &grid, &basis, seed, p)?;
            let drive = Drive::additive(&load.psi_diag, &noise)?;
            let (v, s) = energy_norms(&sol, &grid, &basis);
            let ver = check_versions(&sol, load, &drive, &grid, &basis)?;
            let res = residual(&sol, load, &drive, &grid, &basis)?;
            Ok((v + s, ver.identity_residual, res.relative))
        },
        paths,
    )?;
    let lhs_values: Vec<f64> = values.iter().map(|v| v.0).collect();
    let lhs = summarize(&lhs_values, seed, secs)?;
    let (ratio, ratio_ci) = if rhs > 0.0 {
        let r = lhs.estimate / rhs;
        let w = 1.96 * lhs.std_error / rhs;
        (Some(r), Some((r - w, r + w)))
    } else {
        (None, None)
    };
    Ok(EnergyRow {
        modes,
        steps,
        kappa,
        rho: q.decay_exponent().unwrap_or(f64::NAN),
        u0: "",
        lhs,
        rhs,
        ratio,
        ratio_ci,
        max_identity_residual: values.iter().map(|v| v.1).fold(0.0, f64::max),
        max_weak_residual: values.iter().map(|v| v.2).fold(0.0, f64::max),
    })
}

pub fn run_energy_bound(cfg: &Config) -> Result<Output> {
    let e = &cfg.energy;
    let paths = cfg.paths_or(e.paths);
    let mut report = Report::new("energy", cfg)?;
    let mut rows = Vec::new();
    for &(modes, steps) in &e.levels {
        for pt in &e.points {
            let q = QSpec::power_law(modes, pt.rho)?;
            let f = if e.f_phi1 != 0.0 {
                Forcing::Constant {
                    coeffs: SpectralVec::unit(modes, 0).scaled(e.f_phi1),
                }
            } else {
                Forcing::Zero
            };
            let load = LoadSpec::new(pt.u0.coeffs(modes), f, vec![e.psi; modes])?;
            let mut row =
                energy_point(modes, steps, e.t_end, pt.kappa, &q, &load, paths, cfg.seed)?;
            row.rho = pt.rho;
            row.u0 = u0_name(pt.u0);
            rows.push(row);
        }
    }

    let per_level = e.points.len();
    let maxima: Vec<f64> = rows
        .chunks(per_level)
        .map(|c| {
            c.iter()
                .filter_map(|r| r.ratio)
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .collect();
    let finite = rows.iter().all(|r| r.ratio.is_none_or(f64::is_finite));
    report.assert(
        "ratio_finite",
        finite,
        format!("{} points x {} levels", per_level, e.levels.len()),
    );
    for (i, w) in maxima.windows(2).enumerate() {
        let ok = w[1] <= (1.0 + e.growth_tolerance) * w[0];
        let (a, b) = (e.levels[i], e.levels[i + 1]);
        report.assert(
            format!("max_ratio_no_growth_{}x{}_to_{}x{}", a.0, a.1, b.0, b.1),
            ok,
            format!(
                "max ratio {:.6} -> {:.6} (tolerance {:.0}%)",
                w[0],
                w[1],
                100.0 * e.growth_tolerance
            ),
        );
    }
    let ident = rows
        .iter()
        .map(|r| r.max_identity_residual)
        .fold(0.0, f64::max);
    report.assert(
        "versions_identity",
        ident <= IDENTITY_TOL,
        format!("max relative identity residual {ident:.3e} over all paths"),
    );
    let weak = rows.iter().map(|r| r.max_weak_residual).fold(0.0, f64::max);
    report.assert(
        "weak_residual",
        weak <= IDENTITY_TOL,
        format!("max relative weak residual {weak:.3e} over all paths"),
    );

    let mut csv = format!("{ENERGY_CSV_HEADER}\n");
    for r in &rows {
        let fmt = |v: Option<f64>| v.map_or(String::new(), |v| v.to_string());
        writeln!(
            csv,
            "{},{},{},{},{},{},{},{},{},{},{}",
            r.modes,
            r.steps,
            r.kappa,
            r.rho,
            r.u0,
            r.lhs.estimate,
            r.lhs.std_error,
            r.rhs,
            fmt(r.ratio),
            fmt(r.ratio_ci.map(|c| c.0)),
            fmt(r.ratio_ci.map(|c| c.1)),
        )
        .expect("writing to a String");
    }
    report.data = json!({ "paths": paths, "max_ratio_per_level": maxima, "rows": rows });
    Ok(Output {
        report,
        tables: vec![table("energy.csv", csv)],
    })
}

// ------------------------------------------------------------ regularity

#[derive(Debug, Clone, Serialize)]
pub struct RegularityLevel {
    pub modes: usize,
    pub coupling_norm: f64,
    /// `E sum_n h |U1_n|^2_{H^{beta+1}}`.
    pub integral: McSummary,
    /// `E max_n |U2(t_n)|^2_{H^beta}`.
    pub sup: McSummary,
}

#[derive(Debug, Clone, Serialize)]
pub struct RegularityCaseReport {
    pub rho: f64,
    pub beta: f64,
    pub coupling_trend: SeriesTrend,
    pub levels: Vec<RegularityLevel>,
    pub stable: bool,
    pub monotone: bool,
    pub divergent: bool,
}

pub const REGULARITY_CSV_HEADER: &str = "rho,beta,J,coupling_norm,integral,integral_se,sup,sup_se";

pub fn run_regularity(cfg: &Config) -> Result<Output> {
    let r = &cfg.regularity;
    let paths = cfg.paths_or(r.paths);
    let grid = TimeGrid::new(r.t_end, r.steps)?;
    let op = OperatorSpec::constant(r.kappa)?;
    let mut report = Report::new("regularity", cfg)?;
    let mut cases = Vec::new();
    for case in &r.cases {
        let setups = r
            .modes
            .iter()
            .map(|&j| {
                let basis = EigenBasis::new(j)?;
                let q = QSpec::power_law(j, case.rho)?;
                let load = LoadSpec::new(SpectralVec::zeros(j), Forcing::Zero, vec![1.0; j])?;
                Ok((basis, q, load))
            })
            .collect::<Result<Vec<_>>>()?;
        // Counter-based streams make the shared modes identical across J.
        let (values, secs) = mc_values(
            |p| {
                setups
                    .iter()
                    .map(|(basis, q, load)| {
                        let noise = sample_noise(&grid, q, cfg.seed, p);
                        let sol = assemble_and_solve(&op, load, &noise, &grid, basis, cfg.seed, p)?;
                        Ok(energy_norms_beta(&sol, &grid, basis, case.beta))
                    })
                    .collect::<Result<Vec<_>>>()
            },
            paths,
        )?;
        let mut levels = Vec::new();
        for (k, (basis, q, _)) in setups.iter().enumerate() {
            let a: Vec<f64> = values.iter().map(|v| v[k].0).collect();
            let b: Vec<f64> = values.iter().map(|v| v[k].1).collect();
            levels.push(RegularityLevel {
                modes: basis.len(),
                coupling_norm: coupling_norm_beta(q, basis, case.beta)?,
                integral: summarize(&a, cfg.seed, secs)?,
                sup: summarize(&b, cfg.seed, secs)?,
            });
        }
        let (basis, q, _) = setups.last().expect("validated non-empty");
        let trend = coupling_trend(q, basis, case.beta)?;
        let close = |a: &McSummary, b: &McSummary| {
            (b.estimate - a.estimate).abs()
                < r.se_factor * (a.std_error.powi(2) + b.std_error.powi(2)).sqrt()
        };
        let n = levels.len();
        let (prev, last) = (&levels[n - 2], &levels[n - 1]);
        let stable = close(&prev.integral, &last.integral) && close(&prev.sup, &last.sup);
        let monotone = levels.windows(2).all(|w| {
            w[1].integral.estimate > w[0].integral.estimate && w[1].sup.estimate > w[0].sup.estimate
        });
        let divergent = trend.divergent && monotone;
        let label = format!("rho={} beta={}", case.rho, case.beta);
        if trend.divergent {
            report.assert(
                format!("divergence_flagged {label}"),
                divergent,
                format!(
                    "coupling increment ratio {:.3}; integral {:?}; sup {:?}",
                    trend.increment_ratio,
                    levels
                        .iter()
                        .map(|l| l.integral.estimate)
                        .collect::<Vec<_>>(),
                    levels.iter().map(|l| l.sup.estimate).collect::<Vec<_>>()
                ),
            );
        } else {
            report.assert(
                format!("stable_under_J_doubling {label}"),
                stable,
                format!(
                    "J={}->{}: integral {:.6}->{:.6}, sup {:.6}->{:.6} (threshold {} combined SE)",
                    prev.modes,
                    last.modes,
                    prev.integral.estimate,
                    last.integral.estimate,
                    prev.sup.estimate,
                    last.sup.estimate,
                    r.se_factor
                ),
            );
        }
        cases.push(RegularityCaseReport {
            rho: case.rho,
            beta: case.beta,
            coupling_trend: trend,
            levels,
            stable,
            monotone,
            divergent,
        });
    }
    let mut csv = format!("{REGULARITY_CSV_HEADER}\n");
    for c in &cases {
        for l in &c.levels {
            writeln!(
                csv,
                "{},{},{},{},{},{},{},{}",
                c.rho,
                c.beta,
                l.modes,
                l.coupling_norm,
                l.integral.estimate,
                l.integral.std_error,
                l.sup.estimate,
                l.sup.std_error
            )
            .expect("writing to a String");
        }
    }
    report.data = json!({ "paths": paths, "cases": cases });
    Ok(Output {
        report,
        tables: vec![table("regularity.csv", csv)],
    })
}

// ------------------------------------------------------- mild equivalence

#[derive(Debug, Clone, Serialize)]
pub struct MildLevel {
    pub steps: usize,
    pub h: f64,
    /// `sqrt(E max_n |U2(t_n) - U_mild(t_n)|_H^2)`.
    pub rms_h_distance: f64,
    /// `sqrt(E sum_n h |U1_n - avg_n U_mild|_V^2)`.
    pub rms_v_distance: f64,
    /// `sqrt(E max_n |U1_n - avg_n U2|_H^2)`.
    pub rms_version_gap: f64,
    pub max_identity_residual: f64,
    /// Noise-free scheme error `max_n |U2(t_n) - e^{-kappa lambda_1 t_n}|`.
    pub deterministic_error: f64,
}

pub const MILD_CSV_HEADER: &str =
    "N,h,rms_h_distance,rms_v_distance,rms_version_gap,deterministic_error";

/// Per-path distances `(h_dist^2, v_dist^2, gap^2, identity)` at each level.
#[allow(clippy::too_many_arguments)]
fn mild_path(
    op: &OperatorSpec,
    load: &LoadSpec,
    q: &QSpec,
    fine: &TimeGrid,
    steps: &[usize],
    basis: &EigenBasis,
    seed: u64,
    path: u64,
) -> Result<Vec<[f64; 4]>> {
    let noise = sample_noise(fine, q, seed, path);
    let oracle = mild_solve(op, load, q, &noise, fine, basis, seed, path)?;
    let lam = basis.lambdas();
    steps
        .iter()
        .map(|&n| {
            let factor = fine.steps() / n;
            let grid = fine.coarsened(factor)?;
            let coarse = noise.coarsen(factor)?;
            let sol = assemble_and_solve(op, load, &coarse, &grid, basis, seed, path)?;
            let drive = Drive::additive(&load.psi_diag, &coarse)?;
            let ver = check_versions(&sol, load, &drive, &grid, basis)?;
            let h = grid.h();
            let mut hmax = 0.0f64;
            let mut vsum = 0.0;
            let mut gap = 0.0f64;
            for k in 0..=n {
                let o = oracle.values[k * factor].coeffs();
                let d: f64 = sol.u2(k).iter().zip(o).map(|(a, b)| (a - b).powi(2)).sum();
                hmax = hmax.max(d);
                if k < n {
                    let o2 = oracle.values[(k + 1) * factor].coeffs();
                    let mut dv = 0.0;
                    let mut dg = 0.0;
                    for j in 0..basis.len() {
                        let u1 = sol.u1(k)[j];
                        dv += lam[j] * (u1 - 0.5 * (o[j] + o2[j])).powi(2);
                        dg += (u1 - 0.5 * (sol.u2(k)[j] + sol.u2(k + 1)[j])).powi(2);
                    }
                    vsum += h * dv;
                    gap = gap.max(dg);
                }
            }
            Ok([hmax, vsum, gap, ver.identity_residual])
        })
        .collect()
}

fn deterministic_error(op: &OperatorSpec, modes: usize, t_end: f64, steps: usize) -> Result<f64> {
    let kappa = op
        .constant_value()
        .ok_or_else(|| Error::Hypothesis("coefficient must be constant".into()))?;
    let basis = EigenBasis::new(modes)?;
    let grid = TimeGrid::new(t_end, steps)?;
    let load = LoadSpec::new(SpectralVec::unit(modes, 0), Forcing::Zero, vec![0.0; modes])?;
    let noise = crate::noise::NoiseSample::zero(modes, grid);
    let sol = assemble_and_solve(op, &load, &noise, &grid, &basis, 0, 0)?;
    let lam = kappa * basis.lambda(0);
    Ok((0..=steps)
        .map(|n| (sol.u2(n)[0] - (-lam * grid.node(n)).exp()).abs())
        .fold(0.0, f64::max))
}

pub fn run_mild_equivalence(cfg: &Config) -> Result<Output> {
    let m = &cfg.mild_equiv;
    let paths = cfg.paths_or(m.paths);
    let op = m.operator.build()?;
    if op.constant_value().is_none() {
        return Err(Error::Hypothesis(
            "mild equivalence requires a deterministic, time-independent coefficient".into(),
        ));
    }
    let mut steps = m.steps.clone();
    steps.sort_unstable();
    steps.dedup();
    let fine = TimeGrid::new(m.t_end, *steps.last().expect("validated"))?;
    let basis = EigenBasis::new(m.modes)?;
    let q = QSpec::power_law(m.modes, m.rho)?;
    let load = LoadSpec::new(
        SpectralVec::zeros(m.modes),
        Forcing::Zero,
        vec![1.0; m.modes],
    )?;
    let mut report = Report::new("mild_equiv", cfg)?;

    let kernel = |p: u64| mild_path(&op, &load, &q, &fine, &steps, &basis, cfg.seed, p);
    let (values, _) = mc_values(kernel, paths)?;
    let rms = |k: usize, i: usize| {
        (crate::stats::neumaier_sum(values.iter().map(|v| v[k][i])) / paths as f64).sqrt()
    };
    let levels = steps
        .iter()
        .enumerate()
        .map(|(k, &n)| {
            Ok(MildLevel {
                steps: n,
                h: m.t_end / n as f64,
                rms_h_distance: rms(k, 0),
                rms_v_distance: rms(k, 1),
                rms_version_gap: rms(k, 2),
                max_identity_residual: values.iter().map(|v| v[k][3]).fold(0.0, f64::max),
                deterministic_error: deterministic_error(&op, m.modes, m.t_end, n)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let (lo, hi) = m.ratio_window;
    for w in levels.windows(2) {
        let r = w[0].rms_h_distance / w[1].rms_h_distance;
        report.assert(
            format!("h_distance_ratio_{}_to_{}", w[0].steps, w[1].steps),
            (lo..=hi).contains(&r),
            format!("ratio {r:.4}, window [{lo}, {hi}]"),
        );
    }
    let v_dec = levels
        .windows(2)
        .all(|w| w[1].rms_v_distance < w[0].rms_v_distance);
    report.assert(
        "v_distance_decreasing",
        v_dec,
        format!(
            "{:?}",
            levels.iter().map(|l| l.rms_v_distance).collect::<Vec<_>>()
        ),
    );
    let orders: Vec<f64> = levels
        .windows(2)
        .map(|w| {
            (w[0].deterministic_error / w[1].deterministic_error).log2()
                / (w[1].steps as f64 / w[0].steps as f64).log2()
        })
        .collect();
    let min_order = orders.iter().copied().fold(f64::INFINITY, f64::min);
    report.assert(
        "deterministic_order",
        min_order >= m.min_deterministic_order,
        format!(
            "orders {orders:?}, required >= {}",
            m.min_deterministic_order
        ),
    );
    let ident = levels
        .iter()
        .map(|l| l.max_identity_residual)
        .fold(0.0, f64::max);
    report.assert(
        "versions_identity",
        ident <= IDENTITY_TOL,
        format!("max relative identity residual {ident:.3e}"),
    );
    let gap_dec = levels
        .windows(2)
        .all(|w| w[1].rms_version_gap < w[0].rms_version_gap);
    report.assert(
        "version_gap_decreasing",
        gap_dec,
        format!(
            "{:?}",
            levels.iter().map(|l| l.rms_version_gap).collect::<Vec<_>>()
        ),
    );
    let rerun =
        (0..paths.min(8) as u64).all(|p| kernel(p).ok().as_ref() == Some(&values[p as usize]));
    report.assert("rerun_identical", rerun, "first paths recomputed bitwise");

    let mut csv = format!("{MILD_CSV_HEADER}\n");
    for l in &levels {
        writeln!(
            csv,
            "{},{},{},{},{},{}",
            l.steps,
            l.h,
            l.rms_h_distance,
            l.rms_v_distance,
            l.rms_version_gap,
            l.deterministic_error
        )
        .expect("writing to a String");
    }
    report.data = json!({
        "paths": paths,
        "levels": levels,
        "deterministic_orders": orders,
    });
    Ok(Output {
        report,
        tables: vec![table("mild_equiv.csv", csv)],
    })
}

// --------------------------------------------------------------- inf-sup

pub fn run_infsup_sweep(cfg: &Config) -> Result<Output> {
    let c = &cfg.infsup;
    let mut report = Report::new("infsup", cfg)?;
    let points_at = |t_end: f64| -> Vec<SweepPoint> {
        let mut pts = Vec::new();
        for &kappa in &c.kappas {
            for &beta in &c.betas {
                for &(modes, steps) in &c.levels {
                    pts.push(SweepPoint {
                        kappa,
                        beta,
                        steps,
                        modes,
                        t_end,
                    });
                }
            }
        }
        pts
    };
    let asserted = infsup_sweep(&points_at(c.t_end))?;
    let slack = 1.0 - c.lower_slack;

    let upper_fail: Vec<&SweepRow> = asserted.iter().filter(|r| !r.upper_holds()).collect();
    report.assert(
        "upper_bound",
        upper_fail.is_empty(),
        format!(
            "{} of {} points violate C_B <= bound",
            upper_fail.len(),
            asserted.len()
        ),
    );
    let lower_fail = asserted
        .iter()
        .filter(|r| r.c_b < slack * r.bound_lower)
        .count();
    report.record(
        "lower_bound_soft",
        lower_fail == 0,
        format!(
            "{lower_fail} of {} points below {slack} x bound",
            asserted.len()
        ),
    );
    let k1: Vec<&SweepRow> = asserted
        .iter()
        .filter(|r| r.a_min == 1.0 && r.a_max == 1.0)
        .collect();
    let k1_ok = !k1.is_empty() && k1.iter().all(|r| r.c_b >= 0.5 && r.cap_b <= 1.41422);
    report.assert(
        "kappa1_constants",
        k1_ok,
        format!(
            "min c_B {:.6}, max C_B {:.6}",
            k1.iter().map(|r| r.c_b).fold(f64::INFINITY, f64::min),
            k1.iter().map(|r| r.cap_b).fold(0.0, f64::max)
        ),
    );

    let mut all_rows = asserted.clone();
    let mut tables = Vec::new();
    let mut csv = Vec::new();
    write_sweep_csv(&mut csv, &asserted)?;
    tables.push(table(
        "infsup_sweep.csv",
        String::from_utf8(csv).expect("ascii"),
    ));
    for &t in &c.recorded_t_ends {
        let rows = infsup_sweep(&points_at(t))?;
        let upper = rows.iter().filter(|r| !r.upper_holds()).count();
        let lower = rows
            .iter()
            .filter(|r| r.c_b < slack * r.bound_lower)
            .count();
        report.record(
            format!("bounds_at_T={t}"),
            upper == 0 && lower == 0,
            format!(
                "{upper} upper and {lower} lower violations of {}; max lambda_J h {:.3}",
                rows.len(),
                rows.iter().map(|r| r.lambda_h_max).fold(0.0, f64::max)
            ),
        );
        let mut csv = Vec::new();
        write_sweep_csv(&mut csv, &rows)?;
        tables.push(table(
            format!("infsup_sweep_T{t}.csv"),
            String::from_utf8(csv).expect("ascii"),
        ));
        all_rows.extend(rows);
    }
    let swap = all_rows.iter().map(|r| r.swap_diff).fold(0.0, f64::max);
    report.assert(
        "swap_identity",
        swap <= IDENTITY_TOL,
        format!(
            "max |c_B - c_B swapped| = {swap:.3e} over {} points",
            all_rows.len()
        ),
    );
    report.data = json!({ "rows": all_rows });
    Ok(Output { report, tables })
}

// ------------------------------------------------------- lemma constants

#[derive(Debug, Clone, Serialize)]
pub struct Triple {
    pub lambda: f64,
    pub gamma: f64,
    pub t_end: f64,
    pub lhs1: f64,
    pub rhs1: f64,
}

/// Random `(lambda, gamma, T)` with `lambda` log-uniform on `[1, 1e4]`,
/// `gamma` uniform on `(0, 2)` and `T` uniform on `[0.01, 5]`.
pub fn random_triples(count: usize, seed: u64) -> Vec<Triple> {
    let mut s = NormalStream::new(seed, 0, AUX_LANE);
    (0..count)
        .map(|i| {
            s.seek(i as u64);
            let [a, b, c, _] = s.uniform_block();
            let lambda = 10f64.powf(4.0 * a);
            let gamma = 2.0 * b;
            let t_end = 0.01 + 4.99 * c;
            Triple {
                lambda,
                gamma,
                t_end,
                lhs1: lemma_lhs1_mode(lambda, gamma, t_end),
                rhs1: 0.5 * t_end * gamma,
            }
        })
        .collect()
}

pub fn run_lemma_constants(cfg: &Config) -> Result<Output> {
    let l = &cfg.lemma_constants;
    let paths = cfg.paths_or(l.paths);
    let mut report = Report::new("lemma_constants", cfg)?;
    let triples = random_triples(l.random_triples, cfg.seed);
    let bad = triples.iter().filter(|t| t.lhs1 > t.rhs1).count();
    report.assert(
        "lhs1_random_triples",
        bad == 0,
        format!(
            "{bad} of {} triples violate LHS1 <= T |Psi Q^1/2|^2 / 2",
            triples.len()
        ),
    );
    let pi2 = std::f64::consts::PI.powi(2);
    let single = lemma_lhs1_mode(pi2, 1.0, 1.0);
    report.record(
        "single_mode_lhs1",
        single <= 0.5,
        format!("LHS1 = {single:.6}, RHS1 = 0.5, ratio {:.6}", single / 0.5),
    );

    let basis = EigenBasis::new(l.modes)?;
    let q = l.q()?;
    let psi = vec![l.psi; l.modes];
    let mut chow: Vec<(usize, ChowReport)> = Vec::new();
    for &n in &l.steps {
        let grid = TimeGrid::new(l.t_end, n)?;
        let r = chow_bounds_check(&q, &psi, &grid, &basis, paths, cfg.seed)?;
        report.assert(
            format!("lhs1_bound_N={n}"),
            r.first_holds,
            format!("LHS1 {:.6} <= RHS1 {:.6}", r.lhs1, r.rhs1),
        );
        report.assert(
            format!("lhs2_bound_N={n}"),
            r.second_holds,
            format!(
                "LHS2 {:.6} + 3 SE {:.6} <= RHS2 {:.6}",
                r.lhs2,
                3.0 * r.lhs2_se,
                r.rhs2
            ),
        );
        chow.push((n, r));
    }
    if chow.len() >= 2 {
        let a = &chow[chow.len() - 2].1;
        let b = &chow[chow.len() - 1].1;
        let diff = (b.lhs2 - a.lhs2).abs();
        let se = (a.lhs2_se.powi(2) + b.lhs2_se.powi(2)).sqrt();
        report.record(
            "lhs2_refinement",
            diff <= 3.0 * se + 0.05 * b.lhs2,
            format!("LHS2 {:.6} -> {:.6} under N-doubling", a.lhs2, b.lhs2),
        );
    }
    let mut csv = String::from("lambda,gamma,T,lhs1,rhs1\n");
    for t in &triples {
        writeln!(
            csv,
            "{},{},{},{},{}",
            t.lambda, t.gamma, t.t_end, t.lhs1, t.rhs1
        )
        .expect("writing to a String");
    }
    report.data = json!({
        "paths": paths,
        "triples": triples,
        "single_mode": { "lhs1": single, "rhs1": 0.5 },
        "maximal": chow.iter().map(|(n, r)| json!({ "N": n, "report": r })).collect::<Vec<_>>(),
    });
    Ok(Output {
        report,
        tables: vec![table("lemma_triples.csv", csv)],
    })
}

// -------------------------------------------------------- multiplicative

#[derive(Debug, Clone, Serialize)]
pub struct ContractionPoint {
    pub t_end: f64,
    pub kappa: f64,
    pub max_ratio: f64,
    pub segments: usize,
    /// `kappa_g(T) T^{(p-2)/(2p)}`: square root of the Hoelder factor.
    pub predicted_factor: f64,
    pub predicted_factor_inverted: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct MomentResult {
    pub estimate: McSummary,
    pub coupling: f64,
    pub expected: f64,
    /// Same formula with `g0` in place of the projected coupling.
    pub expected_unprojected: f64,
}

fn multiplicative_setup(
    c: &crate::config::ContractionConfig,
    p: f64,
    t_end: f64,
    kappa: f64,
) -> Result<(OperatorSpec, LoadSpec, GSpec, QSpec, TimeGrid, EigenBasis)> {
    let g = GSpec {
        g0: c.g0,
        time: c.time,
        space: c.space,
        p,
        colloc: None,
    };
    g.validate()?;
    Ok((
        OperatorSpec::constant(kappa)?,
        LoadSpec::new(
            SpectralVec::unit(c.modes, 0),
            Forcing::Zero,
            vec![1.0; c.modes],
        )?,
        g,
        QSpec::power_law(c.modes, c.rho)?,
        TimeGrid::new(t_end, c.steps)?,
        EigenBasis::new(c.modes)?,
    ))
}

fn max_h_diff(a: &SpaceTimeSolution, b: &SpaceTimeSolution) -> f64 {
    (0..=a.steps())
        .map(|n| {
            a.u2(n)
                .iter()
                .zip(b.u2(n))
                .map(|(x, y)| (x - y).powi(2))
                .sum::<f64>()
                .sqrt()
        })
        .fold(0.0, f64::max)
}

fn max_h_norm(a: &SpaceTimeSolution) -> f64 {
    (0..=a.steps())
        .map(|n| a.u2_vec(n).norm_h())
        .fold(0.0, f64::max)
}

pub fn run_multiplicative(cfg: &Config) -> Result<Output> {
    let m = &cfg.multiplicative;
    let c = &m.contraction;
    let opts = PicardOptions {
        tol: m.tol,
        max_iter: m.max_iter,
        initial_segments: 1,
    };
    let mut report = Report::new("multiplicative", cfg)?;

    // (a) contraction on the reference point.
    let (op, load, g, q, grid, basis) = multiplicative_setup(c, m.p, c.t_end, c.kappa)?;
    let paths = c.paths.max(2);
    let (runs, _) = mc_values(
        |p| picard_solve(&op, &load, &g, &q, &grid, &basis, cfg.seed, p, &opts),
        paths,
    )?;
    let traces: Vec<&PicardTrace> = runs.iter().map(|r| &r.1).collect();
    let max_ratio = traces.iter().map(|t| t.max_ratio()).fold(0.0, f64::max);
    let single = traces
        .iter()
        .all(|t| t.segments.len() == 1 && t.segments[0].converged);
    report.assert(
        "contraction",
        single && max_ratio < 1.0,
        format!(
            "max increment ratio {max_ratio:.4} over {paths} paths; all single-segment: {single}"
        ),
    );
    let v_energy = runs
        .iter()
        .map(|r| max_h_norm(&r.0).powi(2))
        .fold(0.0, f64::max);
    let holder = json!({
        "v_energy": v_energy,
        "bound": holder_bound(v_energy, &g, &q, c.t_end)?,
        "bound_inverted_exponent": holder_bound_inverted(v_energy, &g, &q, c.t_end)?,
    });

    // (c) direct versus two subintervals.
    let split_opts = PicardOptions {
        initial_segments: 2,
        ..opts
    };
    let mut split_dev = 0.0f64;
    for (p, (sol, _)) in runs.iter().enumerate().take(4) {
        let (s2, _) = picard_solve(
            &op,
            &load,
            &g,
            &q,
            &grid,
            &basis,
            cfg.seed,
            p as u64,
            &split_opts,
        )?;
        split_dev = split_dev.max(max_h_diff(sol, &s2) / max_h_norm(sol).max(f64::MIN_POSITIVE));
    }
    report.assert(
        "split_invariance",
        split_dev <= 10.0 * m.tol,
        format!(
            "max relative deviation {split_dev:.3e}, limit {:.1e}",
            10.0 * m.tol
        ),
    );

    // Recorded sweep over (T, kappa).
    let mut sweep = Vec::new();
    for &(t, kappa) in &c.sweep {
        let (op, load, g, q, grid, basis) = multiplicative_setup(c, m.p, t, kappa)?;
        let (runs, _) = mc_values(
            |p| picard_solve(&op, &load, &g, &q, &grid, &basis, cfg.seed, p, &opts).map(|r| r.1),
            4,
        )?;
        let k = g.kappa_bound(&q, t);
        sweep.push(ContractionPoint {
            t_end: t,
            kappa,
            max_ratio: runs.iter().map(|t| t.max_ratio()).fold(0.0, f64::max),
            segments: runs.iter().map(|t| t.segments.len()).max().unwrap_or(0),
            predicted_factor: k * t.powf((m.p - 2.0) / (2.0 * m.p)),
            predicted_factor_inverted: k * t.powf(m.p / (2.0 * (m.p - 2.0))),
        });
    }
    report.record(
        "contraction_sweep",
        sweep.iter().all(|s| s.max_ratio < 1.0),
        format!("{} (T, kappa) points", sweep.len()),
    );

    // (b) single-mode second moment.
    let moment = single_mode_moment(cfg)?;
    let ok = (moment.estimate.estimate - moment.expected).abs() <= 3.0 * moment.estimate.std_error;
    report.assert(
        "single_mode_moment",
        ok,
        format!(
            "E U(T)^2 = {:.6} +- {:.6}, expected {:.6} (coupling {:.6})",
            moment.estimate.estimate, moment.estimate.std_error, moment.expected, moment.coupling
        ),
    );

    let mut csv = format!("{PICARD_CSV_HEADER}\n");
    let mut buf = Vec::new();
    for t in &traces {
        t.write_csv_rows(&mut buf)?;
    }
    csv.push_str(&String::from_utf8(buf).expect("ascii"));
    report.data = json!({
        "contraction": {
            "paths": paths,
            "max_ratio": max_ratio,
            "traces": traces,
        },
        "holder": holder,
        "split_deviation": split_dev,
        "sweep": sweep,
        "moment": moment,
    });
    Ok(Output {
        report,
        tables: vec![table("picard_trace.csv", csv)],
    })
}

/// `E U(T)^2` for one mode under a constant multiplier, with the exact
/// moment of the projected equation `du = -lambda u dt + c u dW`.
pub fn single_mode_moment(cfg: &Config) -> Result<MomentResult> {
    let m = &cfg.multiplicative;
    let s = &m.moment;
    let paths = cfg.paths_or(s.paths);
    let basis = EigenBasis::new(1)?;
    let grid = TimeGrid::new(s.t_end, s.steps)?;
    let q = QSpec::new(vec![s.gamma])?;
    let g = GSpec::constant(s.g0, m.p)?;
    let op = OperatorSpec::constant(1.0)?;
    let load = LoadSpec::new(SpectralVec::from(vec![s.u0]), Forcing::Zero, vec![1.0])?;
    let opts = PicardOptions {
        tol: m.tol,
        max_iter: m.max_iter,
        initial_segments: 1,
    };
    let (values, secs) = mc_values(
        |p| {
            let (sol, _) = picard_solve(&op, &load, &g, &q, &grid, &basis, cfg.seed, p, &opts)?;
            Ok(sol.terminal()[0].powi(2))
        },
        paths,
    )?;
    let lam = basis.lambda(0);
    let coupling = s.g0 * first_mode_self_coupling();
    let moment = |c: f64| s.u0 * s.u0 * ((-2.0 * lam + c * c * s.gamma) * s.t_end).exp();
    Ok(MomentResult {
        estimate: summarize(&values, cfg.seed, secs)?,
        coupling,
        expected: moment(coupling),
        expected_unprojected: moment(s.g0),
    })
}

// ------------------------------------------------------------ noise dump

#[derive(Debug, Clone, Serialize)]
pub struct ExactnessReport {
    pub samples: usize,
    pub substeps: usize,
    pub h: f64,
    pub ks_iw: f64,
    pub ks_dw: f64,
    pub ks_critical: f64,
    /// `(estimate, SE, exact)` of `E dW^2`, `E dW iW`, `E iW^2`.
    pub moments: [(f64, f64, f64); 3],
}

/// Compare the exact `(dW, iW)` sampler with a brute-force Riemann sum over
/// `substeps` Brownian increments drawn from an independent stream.
pub fn noise_exactness(
    samples: usize,
    substeps: usize,
    h: f64,
    seed: u64,
) -> Result<ExactnessReport> {
    let grid = TimeGrid::new(h, 1)?;
    let q = QSpec::new(vec![1.0])?;
    let (exact, _) = mc_values(
        |p| {
            let s = sample_noise(&grid, &q, seed, p);
            Ok((s.dw(0, 0), s.iw(0, 0)))
        },
        samples,
    )?;
    let dt = h / substeps as f64;
    let sd = dt.sqrt();
    let (brute, _) = mc_values(
        |p| {
            let mut s = NormalStream::new(seed, p, AUX_LANE);
            let (mut w, mut i) = (0.0, 0.0);
            for k in 0..substeps.div_ceil(4) {
                s.seek(k as u64);
                for (m, z) in s.block().into_iter().enumerate() {
                    let idx = 4 * k + m;
                    if idx >= substeps {
                        break;
                    }
                    let inc = sd * z;
                    w += inc;
                    i += (idx as f64 + 0.5) * dt * inc;
                }
            }
            Ok((w, i))
        },
        samples,
    )?;
    let col = |v: &[(f64, f64)], k: usize| -> Vec<f64> {
        v.iter().map(|x| if k == 0 { x.0 } else { x.1 }).collect()
    };
    let (dw, iw) = (col(&exact, 0), col(&exact, 1));
    let stat = |vals: Vec<f64>, exact: f64| -> Result<(f64, f64, f64)> {
        let s = summarize(&vals, seed, 0.0)?;
        Ok((s.estimate, s.std_error, exact))
    };
    let moments = [
        stat(dw.iter().map(|x| x * x).collect(), h)?,
        stat(
            dw.iter().zip(&iw).map(|(a, b)| a * b).collect(),
            h * h / 2.0,
        )?,
        stat(iw.iter().map(|x| x * x).collect(), h * h * h / 3.0)?,
    ];
    Ok(ExactnessReport {
        samples,
        substeps,
        h,
        ks_iw: ks_statistic(&iw, &col(&brute, 1)),
        ks_dw: ks_statistic(&dw, &col(&brute, 0)),
        ks_critical: ks_critical_1pct(samples, samples),
        moments,
    })
}

pub fn run_noise_dump(cfg: &Config) -> Result<Output> {
    let d = &cfg.noise_dump;
    let grid = TimeGrid::new(d.t_end, d.steps)?;
    let q = QSpec::power_law(d.modes, d.rho)?;
    let samples: Vec<_> = (0..cfg.paths_or(d.paths) as u64)
        .map(|p| sample_noise(&grid, &q, cfg.seed, p))
        .collect();
    let mut buf = Vec::new();
    write_noise_csv(&mut buf, &samples)?;

    let mut report = Report::new("noise_dump", cfg)?;
    let ex = noise_exactness(d.ks_samples, d.substeps, d.h, cfg.seed)?;
    report.assert(
        "ks_iw",
        ex.ks_iw <= ex.ks_critical,
        format!(
            "D = {:.5}, 1% critical value {:.5}",
            ex.ks_iw, ex.ks_critical
        ),
    );
    report.record(
        "ks_dw",
        ex.ks_dw <= ex.ks_critical,
        format!(
            "D = {:.5}, 1% critical value {:.5}",
            ex.ks_dw, ex.ks_critical
        ),
    );
    for (name, (est, se, exact)) in ["E dW^2", "E dW iW", "E iW^2"].iter().zip(ex.moments) {
        report.assert(
            format!("isometry {name}"),
            (est - exact).abs() <= 4.0 * se,
            format!("{est:.6e} +- {se:.2e}, exact {exact:.6e}"),
        );
    }
    report.data = json!({ "paths": samples.len(), "exactness": ex });
    Ok(Output {
        report,
        tables: vec![table("noise.csv", String::from_utf8(buf).expect("ascii"))],
    })
}

#[cfg(test)]
#[allow(clippy::field_reassign_with_default)]
mod tests {
    use super::*;
    use crate::config::{EnergyPoint, RegularityCase};

    fn small() -> Config {
        let mut c = Config::default();
        c.paths = Some(20);
        c.energy.levels = vec![(4, 8), (8, 16)];
        c.energy.points.truncate(2);
        c.regularity.modes = vec![4, 8];
        c.regularity.steps = 16;
        c.mild_equiv.modes = 4;
        c.mild_equiv.steps = vec![8, 16];
        c.mild_equiv.ratio_window = (0.0, f64::INFINITY);
        c.infsup.levels = vec![(2, 4)];
        c.lemma_constants.modes = 4;
        c.lemma_constants.steps = vec![16];
        c.lemma_constants.paths = 200;
        c.multiplicative.contraction.modes = 2;
        c.multiplicative.contraction.steps = 8;
        c.multiplicative.contraction.paths = 2;
        c.multiplicative.contraction.sweep = vec![(0.25, 1.0)];
        c.multiplicative.moment.steps = 16;
        c.noise_dump.ks_samples = 200;
        c.noise_dump.substeps = 8;
        c
    }

    #[test]
    fn every_experiment_runs_and_is_reproducible() {
        let mut cfg = small();
        cfg.paths = None;
        cfg.energy.paths = 20;
        cfg.regularity.paths = 20;
        cfg.mild_equiv.paths = 20;
        cfg.lemma_constants.paths = 200;
        cfg.multiplicative.moment.paths = 20;
        for e in Experiment::ALL {
            let a = e.run(&cfg).unwrap();
            let b = e.run(&cfg).unwrap();
            assert_eq!(a.report.experiment, e.name());
            assert_eq!(a.report.schema_version, crate::SCHEMA_VERSION);
            assert!(!a.report.checks.is_empty(), "{}", e.name());
            assert_eq!(a.tables, b.tables, "{}", e.name());
            for t in &a.tables {
                assert!(t.contents.lines().count() >= 2, "{}", t.file);
            }
        }
    }

    #[test]
    fn zero_data_ratio_is_undefined() {
        let mut cfg = small();
        cfg.energy.psi = 0.0;
        cfg.energy.points = vec![EnergyPoint {
            kappa: 1.0,
            rho: 2.0,
            u0: InitialDatum::Zero,
        }];
        let out = run_energy_bound(&cfg).unwrap();
        let rows = &out.report.data["rows"];
        assert_eq!(rows[0]["lhs"]["estimate"], 0.0);
        assert_eq!(rows[0]["rhs"], 0.0);
        assert!(rows[0]["ratio"].is_null());
        assert!(out.tables[0]
            .contents
            .lines()
            .nth(1)
            .unwrap()
            .ends_with(",,,"));
    }

    #[test]
    fn beta_zero_regularity_is_energy() {
        let mut cfg = small();
        cfg.regularity.cases = vec![RegularityCase {
            rho: 2.0,
            beta: 0.0,
        }];
        cfg.regularity.modes = vec![4, 8];
        let out = run_regularity(&cfg).unwrap();
        let lvl = &out.report.data["cases"][0]["levels"][1];
        let sum = lvl["integral"]["estimate"].as_f64().unwrap()
            + lvl["sup"]["estimate"].as_f64().unwrap();

        let load = LoadSpec::new(SpectralVec::zeros(8), Forcing::Zero, vec![1.0; 8]).unwrap();
        let q = QSpec::power_law(8, 2.0).unwrap();
        let row = energy_point(8, 16, 1.0, 1.0, &q, &load, 20, cfg.seed).unwrap();
        assert!((row.lhs.estimate - sum).abs() <= 1e-12 * sum);
    }

    #[test]
    fn mild_rejects_random_coefficient() {
        let mut cfg = small();
        cfg.mild_equiv.operator.a_min = 0.5;
        cfg.mild_equiv.operator.a_max = 2.0;
        cfg.mild_equiv.operator.law = "uniform".into();
        assert!(matches!(
            run_mild_equivalence(&cfg),
            Err(Error::Hypothesis(_))
        ));
    }

    #[test]
    fn triples_are_in_range_and_seeded() {
        let a = random_triples(20, 3);
        assert_eq!(a.len(), 20);
        for t in &a {
            assert!((1.0..=1e4).contains(&t.lambda));
            assert!((0.0..2.0).contains(&t.gamma));
            assert!((0.01..=5.0).contains(&t.t_end));
        }
        assert_eq!(a[5].lambda, random_triples(20, 3)[5].lambda);
        assert_ne!(a[5].lambda, random_triples(20, 4)[5].lambda);
    }
}
