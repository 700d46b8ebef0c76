//! Learned pointwise nonlinearities: Gaussian radial-basis mixtures over an
//! equidistant center grid with a shared width.

use alloc::vec;
use alloc::vec::Vec;

use libm::exp;

use crate::error::{Error, Result};

/// Exponents below this produce exactly 0.0 from `exp`, so the call is
/// skipped without changing the sum.
const EXP_UNDERFLOW: f64 = -746.0;

/// Hyperparameters of the shared RBF grid: center count, half-range of the
/// equidistant centers on `[-range, range]`, and the Gaussian width.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RbfGrid {
    pub count: usize,
    pub range: f64,
    pub gamma: f64,
}

impl RbfGrid {
    /// Default grid for a given peak intensity: 63 centers on
    /// `[-310*peak/255, 310*peak/255]` with width equal to the center spacing.
    pub fn default_for_peak(peak: f64) -> RbfGrid {
        let range = 310.0 * peak / 255.0;
        let count = 63;
        let gamma = 2.0 * range / (count as f64 - 1.0);
        RbfGrid { count, range, gamma }
    }

    pub fn validate(&self) -> Result<()> {
        if self.count == 0 || !self.range.is_finite() || self.range < 0.0 {
            return Err(Error::BadInfluenceGrid);
        }
        if !(self.gamma.is_finite() && self.gamma > 0.0) {
            return Err(Error::BadInfluenceGrid);
        }
        if self.count > 1 && self.range <= 0.0 {
            return Err(Error::BadInfluenceGrid);
        }
        Ok(())
    }

    /// Equidistant centers on `[-range, range]`; a single center sits at 0.
    pub fn centers(&self) -> Vec<f64> {
        if self.count == 1 {
            return vec![0.0];
        }
        let spacing = 2.0 * self.range / (self.count as f64 - 1.0);
        (0..self.count).map(|j| -self.range + spacing * j as f64).collect()
    }
}

/// A pointwise nonlinearity `phi(z) = sum_j w_j exp(-(z - mu_j)^2 / (2 gamma^2))`.
#[derive(Debug, Clone, PartialEq)]
pub struct InfluenceFunction {
    weights: Vec<f64>,
    centers: Vec<f64>,
    gamma: f64,
}

impl InfluenceFunction {
    /// Validates that centers are strictly increasing and equidistant (to
    /// 1e-12 of the spacing) and that the width is positive.
    pub fn new(weights: Vec<f64>, centers: Vec<f64>, gamma: f64) -> Result<Self> {
        if centers.is_empty() || weights.len() != centers.len() {
            return Err(Error::BadInfluenceGrid);
        }
        if !(gamma.is_finite() && gamma > 0.0) {
            return Err(Error::BadInfluenceGrid);
        }
        if centers.len() > 1 {
            let spacing = centers[1] - centers[0];
            if !(spacing.is_finite() && spacing > 0.0) {
                return Err(Error::BadInfluenceGrid);
            }
            for w in centers.windows(2) {
                if (w[1] - w[0] - spacing).abs() > 1e-12 * spacing.abs().max(1.0) {
                    return Err(Error::BadInfluenceGrid);
                }
            }
        }
        if !weights.iter().all(|w| w.is_finite()) || !centers.iter().all(|c| c.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(InfluenceFunction { weights, centers, gamma })
    }

    /// Builds the function on an RBF grid with the given weights.
    pub fn on_grid(weights: Vec<f64>, grid: &RbfGrid) -> Result<Self> {
        grid.validate()?;
        if weights.len() != grid.count {
            return Err(Error::BadInfluenceGrid);
        }
        InfluenceFunction::new(weights, grid.centers(), grid.gamma)
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn centers(&self) -> &[f64] {
        &self.centers
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn basis_count(&self) -> usize {
        self.weights.len()
    }
}

#[inline]
fn gauss(z: f64, mu: f64, inv_two_gamma_sq: f64) -> f64 {
    let d = z - mu;
    let t = -d * d * inv_two_gamma_sq;
    if t > EXP_UNDERFLOW {
        exp(t)
    } else {
        0.0
    }
}

/// Evaluates `phi(z)`. The full sum over all centers is always computed.
pub fn phi(f: &InfluenceFunction, z: f64) -> f64 {
    let inv2g2 = 0.5 / (f.gamma * f.gamma);
    let mut acc = 0.0;
    for (w, mu) in f.weights.iter().zip(&f.centers) {
        acc += w * gauss(z, *mu, inv2g2);
    }
    acc
}

/// Analytic derivative of `phi` at `z`.
pub fn phi_prime(f: &InfluenceFunction, z: f64) -> f64 {
    let g2 = f.gamma * f.gamma;
    let inv2g2 = 0.5 / g2;
    let mut acc = 0.0;
    for (w, mu) in f.weights.iter().zip(&f.centers) {
        acc += w * gauss(z, *mu, inv2g2) * (mu - z) / g2;
    }
    acc
}

/// Basis responses at `z`: element `j` is `exp(-(z - mu_j)^2 / (2 gamma^2))`,
/// so `phi(z) == dot(weights, phi_weight_basis(z))`.
pub fn phi_weight_basis(f: &InfluenceFunction, z: f64) -> Vec<f64> {
    let inv2g2 = 0.5 / (f.gamma * f.gamma);
    f.centers.iter().map(|&mu| gauss(z, mu, inv2g2)).collect()
}

/// Fused per-pixel evaluation used by the diffusion and training loops:
/// computes each Gaussian term once and hands `(j, basis_j, d_basis_j)` to
/// the accumulator, where `d_basis_j` is the derivative of the basis term.
#[inline]
pub(crate) fn for_each_basis_term(
    f: &InfluenceFunction,
    z: f64,
    mut sink: impl FnMut(usize, f64, f64),
) {
    let g2 = f.gamma * f.gamma;
    let inv2g2 = 0.5 / g2;
    for (j, mu) in f.centers.iter().enumerate() {
        let b = gauss(z, *mu, inv2g2);
        sink(j, b, b * (mu - z) / g2);
    }
}

/// Solves the interpolation system `G w = targets` where
/// `G[g][j] = exp(-(mu_g - mu_j)^2 / (2 gamma^2))`, returning weights that
/// reproduce `targets` at the grid centers. Used to fit a nonlinearity to a
/// prescribed shape (e.g. a scaled identity) on the grid.
pub fn fit_weights(centers: &[f64], gamma: f64, targets: &[f64]) -> Result<Vec<f64>> {
    let n = centers.len();
    if n == 0 || targets.len() != n || !(gamma.is_finite() && gamma > 0.0) {
        return Err(Error::BadInfluenceGrid);
    }
    let inv2g2 = 0.5 / (gamma * gamma);
    let mut gram = vec![0.0; n * n];
    for g in 0..n {
        for j in 0..n {
            gram[g * n + j] = gauss(centers[g], centers[j], inv2g2);
        }
    }
    let mut rhs = targets.to_vec();
    cholesky_solve(&mut gram, n, &mut rhs)?;
    Ok(rhs)
}

/// In-place Cholesky factorization and solve for a symmetric positive
/// definite system. `a` is n*n row-major and is overwritten.
fn cholesky_solve(a: &mut [f64], n: usize, b: &mut [f64]) -> Result<()> {
    for j in 0..n {
        let mut d = a[j * n + j];
        for k in 0..j {
            d -= a[j * n + k] * a[j * n + k];
        }
        if !(d > 0.0) {
            return Err(Error::SingularSystem);
        }
        let d = libm::sqrt(d);
        a[j * n + j] = d;
        for i in j + 1..n {
            let mut v = a[i * n + j];
            for k in 0..j {
                v -= a[i * n + k] * a[j * n + k];
            }
            a[i * n + j] = v / d;
        }
    }
    // forward substitution L y = b
    for i in 0..n {
        let mut v = b[i];
        for k in 0..i {
            v -= a[i * n + k] * b[k];
        }
        b[i] = v / a[i * n + i];
    }
    // back substitution L^T x = y
    for i in (0..n).rev() {
        let mut v = b[i];
        for k in i + 1..n {
            v -= a[k * n + i] * b[k];
        }
        b[i] = v / a[i * n + i];
    }
    Ok(())
}
