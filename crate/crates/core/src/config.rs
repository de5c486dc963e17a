//! Experiment configuration (TOML). Unknown keys are rejected everywhere.
//!
//! Every section is optional and every key has a default, so an empty file
//! reproduces the reference runs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::multiplicative::{SpaceProfile, TimeProfile};
use crate::noise::QSpec;
use crate::spacetime::{KappaLaw, OperatorSpec};
use crate::spectral::SpectralVec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub seed: u64,
    pub paths: Option<usize>,
    pub energy: EnergyConfig,
    pub regularity: RegularityConfig,
    pub mild_equiv: MildEquivConfig,
    pub infsup: InfsupConfig,
    pub lemma_constants: LemmaConfig,
    pub multiplicative: MultiplicativeConfig,
    pub noise_dump: NoiseDumpConfig,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            seed: 20_240_601,
            paths: None,
            energy: EnergyConfig::default(),
            regularity: RegularityConfig::default(),
            mild_equiv: MildEquivConfig::default(),
            infsup: InfsupConfig::default(),
            lemma_constants: LemmaConfig::default(),
            multiplicative: MultiplicativeConfig::default(),
            noise_dump: NoiseDumpConfig::default(),
        }
    }
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Config = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    /// Apply command-line overrides of the seed and path count.
    pub fn with_overrides(mut self, seed: Option<u64>, paths: Option<usize>) -> Result<Self> {
        if let Some(s) = seed {
            self.seed = s;
        }
        if paths.is_some() {
            self.paths = paths;
        }
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(p) = self.paths {
            if p < 2 {
                return Err(Error::TooFewPaths { got: p, min: 2 });
            }
        }
        self.energy.validate()?;
        self.regularity.validate()?;
        self.mild_equiv.validate()?;
        self.infsup.validate()?;
        self.lemma_constants.validate()?;
        self.multiplicative.validate()?;
        self.noise_dump.validate()?;
        Ok(())
    }

    /// Section path count unless overridden globally.
    pub fn paths_or(&self, section: usize) -> usize {
        self.paths.unwrap_or(section)
    }
}

fn positive(name: &'static str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "`{name}` must be positive and finite, got {v}"
        )))
    }
}

fn nonzero(name: &'static str, v: usize) -> Result<()> {
    if v > 0 {
        Ok(())
    } else {
        Err(Error::Config(format!("`{name}` must be at least 1")))
    }
}

/// Initial datum families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialDatum {
    Zero,
    /// First eigenfunction.
    Phi1,
    /// Coefficients `j^{-2}`.
    Decaying,
}

impl InitialDatum {
    pub fn coeffs(&self, modes: usize) -> SpectralVec {
        match self {
            InitialDatum::Zero => SpectralVec::zeros(modes),
            InitialDatum::Phi1 => SpectralVec::unit(modes, 0),
            InitialDatum::Decaying => SpectralVec::from(
                (1..=modes)
                    .map(|j| 1.0 / (j * j) as f64)
                    .collect::<Vec<_>>(),
            ),
        }
    }
}

/// Law of the coefficient, as written in config files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OperatorConfig {
    pub a_min: f64,
    pub a_max: f64,
    /// `constant`, `uniform` or `smooth`.
    pub law: String,
    #[serde(default)]
    pub amplitude: f64,
}

impl OperatorConfig {
    pub fn constant(kappa: f64) -> Self {
        Self {
            a_min: kappa,
            a_max: kappa,
            law: "constant".into(),
            amplitude: 0.0,
        }
    }

    pub fn build(&self) -> Result<OperatorSpec> {
        let law = match self.law.as_str() {
            "constant" => {
                if self.a_min != self.a_max {
                    return Err(Error::Config("constant law needs a_min == a_max".into()));
                }
                KappaLaw::Constant { value: self.a_min }
            }
            "uniform" => KappaLaw::UniformIid,
            "smooth" => KappaLaw::Smooth {
                amplitude: self.amplitude,
            },
            other => {
                return Err(Error::Config(format!(
                    "unknown coefficient law `{other}` (expected constant, uniform or smooth)"
                )))
            }
        };
        OperatorSpec::new(self.a_min, self.a_max, law)
    }
}

/// One point of the energy sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnergyPoint {
    pub kappa: f64,
    pub rho: f64,
    pub u0: InitialDatum,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnergyConfig {
    pub t_end: f64,
    /// `(J, N)` refinement levels.
    pub levels: Vec<(usize, usize)>,
    pub points: Vec<EnergyPoint>,
    /// Coefficient of `phi_1` in a constant source term.
    pub f_phi1: f64,
    /// Constant diagonal of `Psi`.
    pub psi: f64,
    pub paths: usize,
    /// Allowed growth of the maximal ratio between consecutive levels.
    pub growth_tolerance: f64,
}

impl Default for EnergyConfig {
    fn default() -> Self {
        let mut points = Vec::new();
        for kappa in [0.5, 1.0, 2.0] {
            for (rho, u0) in [
                (2.0, InitialDatum::Zero),
                (3.0, InitialDatum::Phi1),
                (4.0, InitialDatum::Decaying),
            ] {
                points.push(EnergyPoint { kappa, rho, u0 });
            }
        }
        Self {
            t_end: 1.0,
            levels: vec![(16, 64), (32, 128)],
            points,
            f_phi1: 0.0,
            psi: 1.0,
            paths: 1000,
            growth_tolerance: 0.10,
        }
    }
}

impl EnergyConfig {
    fn validate(&self) -> Result<()> {
        positive("energy.t_end", self.t_end)?;
        if self.levels.is_empty() || self.points.is_empty() {
            return Err(Error::Config(
                "energy: levels and points must be non-empty".into(),
            ));
        }
        for &(j, n) in &self.levels {
            nonzero("energy.levels J", j)?;
            nonzero("energy.levels N", n)?;
        }
        for p in &self.points {
            positive("energy.points.kappa", p.kappa)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegularityCase {
    pub rho: f64,
    pub beta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RegularityConfig {
    pub t_end: f64,
    pub steps: usize,
    pub modes: Vec<usize>,
    pub cases: Vec<RegularityCase>,
    pub kappa: f64,
    pub paths: usize,
    /// Stability threshold in combined standard errors.
    pub se_factor: f64,
}

impl Default for RegularityConfig {
    fn default() -> Self {
        Self {
            t_end: 1.0,
            steps: 128,
            modes: vec![16, 32, 64],
            cases: vec![
                RegularityCase {
                    rho: 4.0,
                    beta: 1.0,
                },
                RegularityCase {
                    rho: 1.0,
                    beta: 1.0,
                },
            ],
            kappa: 1.0,
            paths: 1000,
            se_factor: 3.0,
        }
    }
}

impl RegularityConfig {
    fn validate(&self) -> Result<()> {
        positive("regularity.t_end", self.t_end)?;
        nonzero("regularity.steps", self.steps)?;
        positive("regularity.kappa", self.kappa)?;
        if self.modes.len() < 2 || self.modes.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config(
                "regularity.modes must list at least two increasing truncations".into(),
            ));
        }
        if self.modes[0] < 4 {
            return Err(Error::Config("regularity.modes must start at >= 4".into()));
        }
        for c in &self.cases {
            if !(c.beta >= 0.0) {
                return Err(Error::Config("regularity beta must be >= 0".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MildEquivConfig {
    pub t_end: f64,
    pub modes: usize,
    pub rho: f64,
    /// Step counts; each must divide the largest.
    pub steps: Vec<usize>,
    pub operator: OperatorConfig,
    pub paths: usize,
    /// Accepted window for error ratios under N-doubling.
    pub ratio_window: (f64, f64),
    pub min_deterministic_order: f64,
}

impl Default for MildEquivConfig {
    fn default() -> Self {
        Self {
            t_end: 1.0,
            modes: 16,
            rho: 3.0,
            steps: vec![64, 128, 256, 512],
            operator: OperatorConfig::constant(1.0),
            paths: 1000,
            ratio_window: (1.6, 2.6),
            min_deterministic_order: 1.0,
        }
    }
}

impl MildEquivConfig {
    fn validate(&self) -> Result<()> {
        positive("mild_equiv.t_end", self.t_end)?;
        nonzero("mild_equiv.modes", self.modes)?;
        if self.steps.len() < 2 {
            return Err(Error::Config(
                "mild_equiv.steps needs at least two levels".into(),
            ));
        }
        let fine = *self.steps.iter().max().unwrap_or(&1);
        if self
            .steps
            .iter()
            .any(|&n| n == 0 || !fine.is_multiple_of(n))
        {
            return Err(Error::Config(
                "mild_equiv.steps must be positive divisors of the finest level".into(),
            ));
        }
        self.operator.build()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InfsupConfig {
    pub kappas: Vec<f64>,
    pub betas: Vec<f64>,
    /// `(J, N)` pairs.
    pub levels: Vec<(usize, usize)>,
    /// Horizon on which the bounds are asserted.
    pub t_end: f64,
    /// Additional horizons swept and recorded only.
    pub recorded_t_ends: Vec<f64>,
    /// Relative slack on the recorded lower bound.
    pub lower_slack: f64,
}

impl Default for InfsupConfig {
    fn default() -> Self {
        Self {
            kappas: vec![0.5, 1.0, 2.0],
            betas: vec![0.0, 1.0],
            levels: vec![(8, 32), (16, 64), (32, 128)],
            t_end: 0.01,
            recorded_t_ends: vec![1.0],
            lower_slack: 0.05,
        }
    }
}

impl InfsupConfig {
    fn validate(&self) -> Result<()> {
        positive("infsup.t_end", self.t_end)?;
        for &t in &self.recorded_t_ends {
            positive("infsup.recorded_t_ends", t)?;
        }
        for &k in &self.kappas {
            positive("infsup.kappas", k)?;
        }
        for &b in &self.betas {
            if !(b >= 0.0) {
                return Err(Error::Config("infsup.betas must be >= 0".into()));
            }
        }
        for &(j, n) in &self.levels {
            nonzero("infsup.levels J", j)?;
            nonzero("infsup.levels N", n)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LemmaConfig {
    pub modes: usize,
    pub rho: f64,
    pub psi: f64,
    pub t_end: f64,
    /// Step counts for the node-sup estimate (refinement pair).
    pub steps: Vec<usize>,
    pub paths: usize,
    /// Number of random `(lambda, gamma, T)` triples for the analytic check.
    pub random_triples: usize,
}

impl Default for LemmaConfig {
    fn default() -> Self {
        Self {
            modes: 16,
            rho: 2.0,
            psi: 1.0,
            t_end: 1.0,
            steps: vec![128, 256],
            paths: 10_000,
            random_triples: 20,
        }
    }
}

impl LemmaConfig {
    fn validate(&self) -> Result<()> {
        nonzero("lemma_constants.modes", self.modes)?;
        positive("lemma_constants.t_end", self.t_end)?;
        if self.steps.is_empty() || self.steps.contains(&0) {
            return Err(Error::Config(
                "lemma_constants.steps must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn q(&self) -> Result<QSpec> {
        QSpec::power_law(self.modes, self.rho)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MultiplicativeConfig {
    /// Contraction run.
    pub contraction: ContractionConfig,
    /// Single-mode second-moment run.
    pub moment: MomentConfig,
    /// Exponent `p` of the temporal bound.
    pub p: f64,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for MultiplicativeConfig {
    fn default() -> Self {
        Self {
            contraction: ContractionConfig::default(),
            moment: MomentConfig::default(),
            p: 4.0,
            tol: 1e-8,
            max_iter: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ContractionConfig {
    pub t_end: f64,
    pub modes: usize,
    pub steps: usize,
    pub rho: f64,
    pub g0: f64,
    pub kappa: f64,
    pub time: TimeProfile,
    pub space: SpaceProfile,
    pub paths: usize,
    /// `(T, kappa)` pairs of the recorded contraction sweep.
    pub sweep: Vec<(f64, f64)>,
}

impl Default for ContractionConfig {
    fn default() -> Self {
        Self {
            t_end: 0.25,
            modes: 8,
            steps: 64,
            rho: 2.0,
            g0: 0.5,
            kappa: 1.0,
            time: TimeProfile::One,
            space: SpaceProfile::One,
            paths: 16,
            sweep: vec![
                (0.125, 1.0),
                (0.25, 1.0),
                (0.5, 1.0),
                (0.25, 0.5),
                (0.25, 2.0),
            ],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MomentConfig {
    pub t_end: f64,
    pub steps: usize,
    pub g0: f64,
    pub gamma: f64,
    pub u0: f64,
    pub paths: usize,
}

impl Default for MomentConfig {
    fn default() -> Self {
        Self {
            t_end: 0.25,
            steps: 512,
            g0: 1.5,
            gamma: 1.0,
            u0: 1.0,
            paths: 10_000,
        }
    }
}

impl MultiplicativeConfig {
    fn validate(&self) -> Result<()> {
        if !(self.p > 2.0) {
            return Err(Error::Config("multiplicative.p must exceed 2".into()));
        }
        positive("multiplicative.tol", self.tol)?;
        nonzero("multiplicative.max_iter", self.max_iter)?;
        let c = &self.contraction;
        positive("multiplicative.contraction.t_end", c.t_end)?;
        positive("multiplicative.contraction.kappa", c.kappa)?;
        nonzero("multiplicative.contraction.modes", c.modes)?;
        nonzero("multiplicative.contraction.steps", c.steps)?;
        for &(t, k) in &c.sweep {
            positive("multiplicative.contraction.sweep T", t)?;
            positive("multiplicative.contraction.sweep kappa", k)?;
        }
        let m = &self.moment;
        positive("multiplicative.moment.t_end", m.t_end)?;
        nonzero("multiplicative.moment.steps", m.steps)?;
        if !(m.gamma >= 0.0) {
            return Err(Error::Config(
                "multiplicative.moment.gamma must be >= 0".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseDumpConfig {
    pub modes: usize,
    pub steps: usize,
    pub t_end: f64,
    pub rho: f64,
    pub paths: usize,
    /// Samples per side of the exactness test.
    pub ks_samples: usize,
    /// Substeps of the brute-force reference construction.
    pub substeps: usize,
    /// Interval length of the exactness test.
    pub h: f64,
}

impl Default for NoiseDumpConfig {
    fn default() -> Self {
        Self {
            modes: 4,
            steps: 16,
            t_end: 1.0,
            rho: 2.0,
            paths: 2,
            ks_samples: 10_000,
            substeps: 256,
            h: 0.1,
        }
    }
}

impl NoiseDumpConfig {
    fn validate(&self) -> Result<()> {
        nonzero("noise_dump.modes", self.modes)?;
        nonzero("noise_dump.steps", self.steps)?;
        positive("noise_dump.t_end", self.t_end)?;
        nonzero("noise_dump.paths", self.paths)?;
        nonzero("noise_dump.substeps", self.substeps)?;
        positive("noise_dump.h", self.h)?;
        if self.ks_samples < 2 {
            return Err(Error::TooFewPaths {
                got: self.ks_samples,
                min: 2,
            });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(Config::from_toml("").unwrap(), Config::default());
    }

    #[test]
    fn unknown_keys_are_errors() {
        let e = Config::from_toml("sead = 3").unwrap_err();
        assert!(e.to_string().contains("sead"), "{e}");
        let e = Config::from_toml("[energy]\nt_ned = 1.0").unwrap_err();
        assert!(e.to_string().contains("t_ned"), "{e}");
        assert!(Config::from_toml("[bogus]\nx = 1").is_err());
    }

    #[test]
    fn sections_parse() {
        let cfg = Config::from_toml(
            r#"
seed = 7
paths = 50

[mild_equiv]
steps = [32, 64]
operator = { a_min = 2.0, a_max = 2.0, law = "constant" }

[multiplicative.moment]
g0 = 0.5

[energy]
points = [{ kappa = 1.0, rho = 2.0, u0 = "phi1" }]
"#,
        )
        .unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.paths_or(1000), 50);
        assert_eq!(cfg.mild_equiv.steps, vec![32, 64]);
        assert_eq!(cfg.multiplicative.moment.g0, 0.5);
        assert_eq!(cfg.energy.points[0].u0, InitialDatum::Phi1);
    }

    #[test]
    fn validation_errors() {
        assert!(Config::from_toml("paths = 1").is_err());
        assert!(Config::from_toml("[mild_equiv]\nsteps = [64, 100]").is_err());
        assert!(Config::from_toml("[multiplicative]\np = 2.0").is_err());
        assert!(Config::from_toml(
            "[mild_equiv.operator]\na_min = 1.0\na_max = 2.0\nlaw = \"gamma\""
        )
        .is_err());
    }

    #[test]
    fn overrides() {
        let c = Config::default().with_overrides(Some(5), Some(10)).unwrap();
        assert_eq!((c.seed, c.paths), (5, Some(10)));
        assert!(Config::default().with_overrides(None, Some(1)).is_err());
    }

    #[test]
    fn initial_data() {
        assert_eq!(
            InitialDatum::Decaying.coeffs(3).coeffs(),
            &[1.0, 0.25, 1.0 / 9.0]
        );
        assert_eq!(InitialDatum::Phi1.coeffs(2).coeffs(), &[1.0, 0.0]);
    }
}
