//! Dirichlet Laplacian eigenbasis on the unit interval.
//!
//! Every field in the crate is a [`SpectralVec`] of coefficients against
//! `phi_j(x) = sqrt(2) sin(j pi x)`, with `A0 phi_j = lambda_j phi_j` and
//! `lambda_j = (j pi)^2`. The V inner product is `<A0^{1/2} u, A0^{1/2} v>`,
//! so fractional norms `|v|_s = (sum_j lambda_j^s v_j^2)^{1/2}` give H at
//! `s = 0`, V at `s = 1` and V* at `s = -1`.

use std::f64::consts::{PI, SQRT_2};
use std::ops::{Index, IndexMut};

use serde::{Deserialize, Serialize};

use crate::error::{ensure_len, Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct EigenBasis {
    lambdas: Vec<f64>,
}

/// Eigenvalue of the `index`-th mode (0-based), i.e. `((index + 1) pi)^2`.
#[inline]
pub fn dirichlet_eigenvalue(index: usize) -> f64 {
    let k = (index + 1) as f64 * PI;
    k * k
}

impl EigenBasis {
    pub fn new(modes: usize) -> Result<Self> {
        if modes == 0 {
            return Err(Error::InvalidTruncation);
        }
        Ok(Self {
            lambdas: (0..modes).map(dirichlet_eigenvalue).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.lambdas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lambdas.is_empty()
    }

    pub fn lambdas(&self) -> &[f64] {
        &self.lambdas
    }

    #[inline]
    pub fn lambda(&self, index: usize) -> f64 {
        self.lambdas[index]
    }

    /// `phi_{index+1}(xi)`.
    #[inline]
    pub fn eigenfunction(&self, index: usize, xi: f64) -> f64 {
        SQRT_2 * ((index + 1) as f64 * PI * xi).sin()
    }

    /// Point value of the field at `xi`.
    pub fn evaluate(&self, v: &SpectralVec, xi: f64) -> f64 {
        v.iter()
            .enumerate()
            .map(|(j, c)| c * self.eigenfunction(j, xi))
            .sum()
    }

    fn check(&self, v: &SpectralVec) -> Result<()> {
        ensure_len("spectral vector", self.len(), v.len())
    }

    /// `|v|_{H^s} = |A0^{s/2} v|_H`.
    pub fn frac_norm(&self, v: &SpectralVec, s: f64) -> Result<f64> {
        Ok(self.frac_norm_sq(v, s)?.sqrt())
    }

    pub fn frac_norm_sq(&self, v: &SpectralVec, s: f64) -> Result<f64> {
        self.check(v)?;
        Ok(weighted_sq(&self.lambdas, v.coeffs(), s))
    }

    /// `A0^s v`.
    pub fn apply_power(&self, v: &SpectralVec, s: f64) -> Result<SpectralVec> {
        self.check(v)?;
        Ok(SpectralVec(
            self.lambdas
                .iter()
                .zip(v.iter())
                .map(|(l, c)| power(*l, s) * c)
                .collect(),
        ))
    }
}

/// `lambda^s`, with the integer cases kept exact.
#[inline]
pub(crate) fn power(lambda: f64, s: f64) -> f64 {
    if s == 0.0 {
        1.0
    } else if s == 1.0 {
        lambda
    } else if s == -1.0 {
        1.0 / lambda
    } else if s == 2.0 {
        lambda * lambda
    } else {
        lambda.powf(s)
    }
}

pub(crate) fn weighted_sq(lambdas: &[f64], coeffs: &[f64], s: f64) -> f64 {
    lambdas
        .iter()
        .zip(coeffs)
        .map(|(l, c)| power(*l, s) * c * c)
        .sum()
}

/// Coefficients `v_j = <v, phi_j>` of an H-valued element.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SpectralVec(Vec<f64>);

impl SpectralVec {
    pub fn new(coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.iter().any(|c| !c.is_finite()) {
            return Err(Error::param("coeffs", "entries must be finite"));
        }
        Ok(Self(coeffs))
    }

    pub fn zeros(modes: usize) -> Self {
        Self(vec![0.0; modes])
    }

    /// Coefficient vector of `phi_{index+1}`.
    pub fn unit(modes: usize, index: usize) -> Self {
        let mut v = Self::zeros(modes);
        v.0[index] = 1.0;
        v
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.0
    }

    pub fn coeffs_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn iter(&self) -> std::slice::Iter<'_, f64> {
        self.0.iter()
    }

    /// H norm (Parseval).
    pub fn norm_h(&self) -> f64 {
        self.norm_h_sq().sqrt()
    }

    pub fn norm_h_sq(&self) -> f64 {
        self.0.iter().map(|c| c * c).sum()
    }

    /// `<u, v>` between V and V*; equals the H inner product on the truncation.
    pub fn dual_pairing(&self, other: &SpectralVec) -> Result<f64> {
        ensure_len("dual pairing operand", self.len(), other.len())?;
        Ok(self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum())
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self(self.0.iter().map(|c| c * factor).collect())
    }

    pub fn sub(&self, other: &SpectralVec) -> Result<Self> {
        ensure_len("difference operand", self.len(), other.len())?;
        Ok(Self(
            self.0.iter().zip(&other.0).map(|(a, b)| a - b).collect(),
        ))
    }

    pub fn add(&self, other: &SpectralVec) -> Result<Self> {
        ensure_len("sum operand", self.len(), other.len())?;
        Ok(Self(
            self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect(),
        ))
    }
}

impl From<Vec<f64>> for SpectralVec {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

impl Index<usize> for SpectralVec {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl IndexMut<usize> for SpectralVec {
    fn index_mut(&mut self, i: usize) -> &mut f64 {
        &mut self.0[i]
    }
}
