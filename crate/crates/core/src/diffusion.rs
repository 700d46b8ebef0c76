//! The forward diffusion process: per-stage filtering through learned
//! nonlinearities followed by a closed-form Poisson proximal correction.
//!
//! One stage maps `u_t` to `u_{t+1}`:
//!
//! ```text
//! u~ = u_t - sum_i adjoint_i( phi_i( k_i * u_t ) )
//! u_{t+1} = prox(u~, lambda, f)     with lambda = exp(beta)
//! ```
//!
//! where `adjoint_i` is the exact transpose of the padded convolution by
//! `k_i`. The prox solves `min_u (u - u~)^2/2 + lambda*(u - f log u)`
//! pointwise and keeps every pixel with observed counts strictly positive.

use alloc::vec::Vec;

use libm::{exp, sqrt};

use crate::error::{Error, Result};
use crate::image::{conv2d_adjoint, conv2d_sym, Image, Kernel};
use crate::influence::{phi, InfluenceFunction, RbfGrid};

/// Parameters of one diffusion stage: the data weight in log form
/// (`lambda = exp(beta)`), the filters, and their paired nonlinearities.
#[derive(Debug, Clone, PartialEq)]
pub struct StageParams {
    pub beta: f64,
    pub filters: Vec<Kernel>,
    pub influences: Vec<InfluenceFunction>,
}

impl StageParams {
    pub fn new(beta: f64, filters: Vec<Kernel>, influences: Vec<InfluenceFunction>) -> Result<Self> {
        if !beta.is_finite() {
            return Err(Error::NonFinite);
        }
        if filters.len() != influences.len() {
            return Err(Error::BadStage);
        }
        Ok(StageParams { beta, filters, influences })
    }

    /// The data-term weight; positive by construction.
    pub fn lambda(&self) -> f64 {
        exp(self.beta)
    }

    pub fn filter_count(&self) -> usize {
        self.filters.len()
    }
}

/// An ordered sequence of diffusion stages plus the metadata needed to
/// reproduce them: filter size, the peak the model was trained for, and the
/// RBF grid shared by all nonlinearities.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionModel {
    pub stages: Vec<StageParams>,
    pub filter_size: usize,
    pub training_peak: f64,
    pub rbf: RbfGrid,
}

impl DiffusionModel {
    pub fn stage_count(&self) -> usize {
        self.stages.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.stages.is_empty() {
            return Err(Error::EmptyModel);
        }
        self.rbf.validate()?;
        if !(self.training_peak.is_finite() && self.training_peak > 0.0) {
            return Err(Error::NonPositivePeak);
        }
        let n_k = self.stages[0].filter_count();
        for stage in &self.stages {
            if stage.filter_count() != n_k {
                return Err(Error::BadStage);
            }
            for k in &stage.filters {
                if k.size() != self.filter_size {
                    return Err(Error::BadKernelSize { size: k.size() });
                }
            }
            for f in &stage.influences {
                if f.basis_count() != self.rbf.count {
                    return Err(Error::BadInfluenceGrid);
                }
            }
        }
        Ok(())
    }
}

/// Pointwise Poisson prox: the minimizer of
/// `(u - u_tilde)^2 / 2 + lambda * (u - f log u)` over `u > 0`.
///
/// Uses the algebraically equivalent quotient form when `u_tilde < lambda`
/// so the subtraction never cancels; this keeps the result strictly
/// positive whenever `f > 0`.
#[inline]
pub fn prox_poisson_scalar(u_tilde: f64, lambda: f64, f: f64) -> f64 {
    let d = u_tilde - lambda;
    let root = sqrt(d * d + 4.0 * lambda * f);
    if d < 0.0 {
        if f == 0.0 {
            0.0
        } else {
            2.0 * lambda * f / (root - d)
        }
    } else {
        0.5 * (d + root)
    }
}

/// Applies the Poisson prox at every pixel.
pub fn prox_poisson(u_tilde: &Image, lambda: f64, f: &Image) -> Result<Image> {
    if !(lambda.is_finite() && lambda > 0.0) {
        return Err(Error::NonPositiveLambda);
    }
    if !u_tilde.same_size(f) {
        return Err(Error::SizeMismatch);
    }
    if f.data().iter().any(|&v| v < 0.0) {
        return Err(Error::NegativeData);
    }
    let mut out = u_tilde.clone();
    for (v, &fv) in out.data_mut().iter_mut().zip(f.data()) {
        *v = prox_poisson_scalar(*v, lambda, fv);
    }
    Ok(out)
}

/// One filter's contribution to the diffusion term:
/// `adjoint( phi( k * u ) )` with the exact transpose as the outer operator.
pub fn filter_contribution(u: &Image, kernel: &Kernel, influence: &InfluenceFunction) -> Image {
    let response = conv2d_sym(u, kernel);
    let activated = response.map(|z| phi(influence, z));
    conv2d_adjoint(&activated, kernel)
}

/// Computes the filter responses and the diffused estimate for one stage.
/// Contributions are subtracted in filter-index order, so the result is
/// independent of how the per-filter work is scheduled.
pub(crate) fn stage_diffuse(u_t: &Image, stage: &StageParams) -> (Vec<Image>, Image) {
    let mut u_tilde = u_t.clone();
    let mut responses = Vec::with_capacity(stage.filters.len());
    for (kernel, influence) in stage.filters.iter().zip(&stage.influences) {
        let response = conv2d_sym(u_t, kernel);
        let activated = response.map(|z| phi(influence, z));
        let contribution = conv2d_adjoint(&activated, kernel);
        u_tilde.sub_assign(&contribution);
        responses.push(response);
    }
    (responses, u_tilde)
}

/// One diffusion stage. Returns `(u_next, u_tilde)`; the intermediate
/// `u_tilde` is what training differentiates through.
pub fn diffusion_step(u_t: &Image, f: &Image, stage: &StageParams) -> Result<(Image, Image)> {
    if !u_t.same_size(f) {
        return Err(Error::SizeMismatch);
    }
    let (_, u_tilde) = stage_diffuse(u_t, stage);
    let u_next = prox_poisson(&u_tilde, stage.lambda(), f)?;
    Ok((u_next, u_tilde))
}

/// Runs all stages in order from `u_0 = max(f, 0) = f`.
pub fn forward(f: &Image, model: &DiffusionModel) -> Result<Image> {
    model.validate()?;
    if f.data().iter().any(|&v| v < 0.0) {
        return Err(Error::NegativeData);
    }
    let mut u = f.clone();
    for stage in &model.stages {
        let (next, _) = diffusion_step(&u, f, stage)?;
        u = next;
    }
    Ok(u)
}


#[cfg(test)]
mod proptests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn prox_monotone_in_u_tilde(
            a in -10.0..10.0f64,
            delta in 0.0..10.0f64,
            lambda in 1e-3..5.0f64,
            f in 0.0..50.0f64,
        ) {
            let lo = prox_poisson_scalar(a, lambda, f);
            let hi = prox_poisson_scalar(a + delta, lambda, f);
            prop_assert!(hi >= lo - 1e-12);
        }

        #[test]
        fn prox_is_nonexpansive(
            a in -10.0..10.0f64,
            b in -10.0..10.0f64,
            lambda in 1e-3..5.0f64,
            f in 0.0..50.0f64,
        ) {
            let pa = prox_poisson_scalar(a, lambda, f);
            let pb = prox_poisson_scalar(b, lambda, f);
            prop_assert!((pa - pb).abs() <= (a - b).abs() + 1e-12);
        }
    }
}
