//! Shared fixtures for the benchmarks.

use stheat_core::noise::sample_noise;
use stheat_core::{
    EigenBasis, Forcing, LoadSpec, NoiseSample, OperatorSpec, QSpec, SpectralVec, TimeGrid,
};

/// Additive-noise problem with `Psi = I`, `gamma_j = j^{-2}` and `U0 = phi_1`.
pub struct Fixture {
    pub grid: TimeGrid,
    pub basis: EigenBasis,
    pub q: QSpec,
    pub op: OperatorSpec,
    pub load: LoadSpec,
}

impl Fixture {
    pub fn new(modes: usize, steps: usize) -> Self {
        Self {
            grid: TimeGrid::new(1.0, steps).expect("positive steps"),
            basis: EigenBasis::new(modes).expect("positive modes"),
            q: QSpec::power_law(modes, 2.0).expect("valid decay"),
            op: OperatorSpec::constant(1.0).expect("positive kappa"),
            load: LoadSpec::new(SpectralVec::unit(modes, 0), Forcing::Zero, vec![1.0; modes])
                .expect("matching lengths"),
        }
    }

    pub fn noise(&self, path: u64) -> NoiseSample {
        sample_noise(&self.grid, &self.q, 1, path)
    }
}
