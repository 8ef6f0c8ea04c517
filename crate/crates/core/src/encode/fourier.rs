//! Random Fourier features for the Euclidean RBF kernel
//! `exp(-‖x - y‖² / (2σ²))`.

use alloc::format;
use alloc::vec::Vec;

use core::f64::consts::PI;
use libm::{cos, sqrt};

use crate::error::{Error, Result};
use crate::linalg::{dot, Matrix};
use crate::rng::{Fingerprint, SeededRng};

#[derive(Debug, Clone, PartialEq)]
pub struct FourierMap {
    /// `r × d`, entries drawn from `N(0, σ⁻²)`.
    omegas: Matrix,
    /// Uniform on `[0, 2π)`.
    offsets: Vec<f64>,
    sigma: f64,
    seed: u64,
}

impl FourierMap {
    pub fn dim(&self) -> usize {
        self.offsets.len()
    }

    pub fn input_dim(&self) -> usize {
        self.omegas.cols()
    }

    pub fn omegas(&self) -> &Matrix {
        &self.omegas
    }

    pub fn offsets(&self) -> &[f64] {
        &self.offsets
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn fingerprint(&self) -> u64 {
        let mut h = Fingerprint::default();
        h.write(b"fourier");
        h.write_u64(self.omegas.rows() as u64);
        h.write_u64(self.omegas.cols() as u64);
        h.write_f64(self.sigma);
        h.write_u64(self.seed);
        h.finish()
    }
}

/// Draws `r` frequencies (row-major) and then `r` offsets from `seed`.
pub fn fourier_fit(d: usize, sigma: f64, r: usize, seed: u64) -> Result<FourierMap> {
    if d == 0 {
        return Err(Error::param("d", "must be at least 1"));
    }
    if r == 0 {
        return Err(Error::param("r", "must be at least 1"));
    }
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(Error::param(
            "sigma",
            format!("must be positive, got {sigma}"),
        ));
    }
    let mut rng = SeededRng::new(seed);
    let mut omegas = Matrix::zeros(r, d);
    for i in 0..r {
        for j in 0..d {
            omegas[(i, j)] = rng.normal() / sigma;
        }
    }
    let offsets = (0..r).map(|_| 2.0 * PI * rng.uniform()).collect();
    Ok(FourierMap {
        omegas,
        offsets,
        sigma,
        seed,
    })
}

/// `√(2/r) · cos(ωᵀx + b)`.
pub fn fourier_map(x: &[f64], map: &FourierMap) -> Result<Vec<f64>> {
    if x.len() != map.input_dim() {
        return Err(Error::DimensionMismatch {
            expected: map.input_dim(),
            got: x.len(),
        });
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite);
    }
    let scale = sqrt(2.0 / map.dim() as f64);
    Ok((0..map.dim())
        .map(|i| scale * cos(dot(map.omegas.row(i), x) + map.offsets[i]))
        .collect())
}
