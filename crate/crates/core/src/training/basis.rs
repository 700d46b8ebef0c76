//! Trainable parameterization of a diffusion model.
//!
//! Filters are linear combinations of the orthonormal 2D DCT basis with the
//! constant atom removed, so every materialized kernel has exactly zero mean
//! and gradients live in basis-coefficient space. The coefficient form is
//! also what the model file stores, making save/load reconstruction exact.

use alloc::vec;
use alloc::vec::Vec;

use libm::{cos, sqrt};

use crate::diffusion::{DiffusionModel, StageParams};
use crate::error::{Error, Result};
use crate::image::Kernel;
use crate::influence::{fit_weights, InfluenceFunction, RbfGrid};

/// The zero-mean orthonormal filter basis for a given kernel size: the
/// `m*m - 1` DCT-II atoms orthogonal to the constant.
#[derive(Debug, Clone)]
pub struct FilterBasis {
    size: usize,
    atoms: Vec<Vec<f64>>,
}

impl FilterBasis {
    pub fn new(size: usize) -> Result<FilterBasis> {
        if size == 0 || size % 2 == 0 || size > crate::image::MAX_KERNEL {
            return Err(Error::BadKernelSize { size });
        }
        let m = size;
        let mf = m as f64;
        let alpha = |p: usize| if p == 0 { sqrt(1.0 / mf) } else { sqrt(2.0 / mf) };
        let mut atoms = Vec::with_capacity(m * m - 1);
        for p in 0..m {
            for q in 0..m {
                if p == 0 && q == 0 {
                    continue;
                }
                let mut atom = vec![0.0; m * m];
                for a in 0..m {
                    for b in 0..m {
                        let ca = cos(core::f64::consts::PI * (2.0 * a as f64 + 1.0) * p as f64
                            / (2.0 * mf));
                        let cb = cos(core::f64::consts::PI * (2.0 * b as f64 + 1.0) * q as f64
                            / (2.0 * mf));
                        atom[a * m + b] = alpha(p) * alpha(q) * ca * cb;
                    }
                }
                atoms.push(atom);
            }
        }
        Ok(FilterBasis { size, atoms })
    }

    pub fn kernel_size(&self) -> usize {
        self.size
    }

    /// Number of atoms, `m*m - 1`.
    pub fn atom_count(&self) -> usize {
        self.atoms.len()
    }

    pub fn atom(&self, j: usize) -> &[f64] {
        &self.atoms[j]
    }

    /// Materializes `k = sum_j coeffs[j] * atom_j` in fixed atom order.
    pub fn kernel_from_coeffs(&self, coeffs: &[f64]) -> Result<Kernel> {
        if coeffs.len() != self.atoms.len() {
            return Err(Error::DataLength { expected: self.atoms.len(), actual: coeffs.len() });
        }
        let mut taps = vec![0.0; self.size * self.size];
        for (c, atom) in coeffs.iter().zip(&self.atoms) {
            for (t, a) in taps.iter_mut().zip(atom) {
                *t += c * a;
            }
        }
        Kernel::new(self.size, taps)
    }

    /// Projects a kernel-space gradient onto the basis:
    /// `out[j] = <atom_j, tap_grad>`.
    pub fn project(&self, tap_grad: &[f64]) -> Vec<f64> {
        self.atoms
            .iter()
            .map(|atom| atom.iter().zip(tap_grad).map(|(a, g)| a * g).sum())
            .collect()
    }
}

/// One stage in coefficient form.
#[derive(Debug, Clone, PartialEq)]
pub struct StageCoeffs {
    pub beta: f64,
    /// Per filter: `m*m - 1` basis coefficients.
    pub filter_coeffs: Vec<Vec<f64>>,
    /// Per filter: one RBF weight per grid center.
    pub influence_weights: Vec<Vec<f64>>,
}

/// A diffusion model in its trainable/serializable parameterization.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub filter_size: usize,
    pub peak: f64,
    pub rbf: RbfGrid,
    pub stages: Vec<StageCoeffs>,
}

impl ModelParams {
    /// Default initialization: filter `i` is the `i`-th basis atom scaled by
    /// 0.1, every nonlinearity starts as the least-squares fit of `0.1 * z`
    /// on the grid centers, and `beta = 0` (unit data weight).
    pub fn init(stages: usize, filter_size: usize, peak: f64, rbf: Option<RbfGrid>) -> Result<ModelParams> {
        if stages == 0 {
            return Err(Error::EmptyModel);
        }
        if !(peak.is_finite() && peak > 0.0) {
            return Err(Error::NonPositivePeak);
        }
        let rbf = rbf.unwrap_or_else(|| RbfGrid::default_for_peak(peak));
        rbf.validate()?;
        let basis = FilterBasis::new(filter_size)?;
        let n_k = basis.atom_count();

        let centers = rbf.centers();
        let targets: Vec<f64> = centers.iter().map(|&c| 0.1 * c).collect();
        let weights = fit_weights(&centers, rbf.gamma, &targets)?;

        let stage = StageCoeffs {
            beta: 0.0,
            filter_coeffs: (0..n_k)
                .map(|i| {
                    let mut c = vec![0.0; n_k];
                    c[i] = 0.1;
                    c
                })
                .collect(),
            influence_weights: vec![weights; n_k],
        };
        Ok(ModelParams {
            filter_size,
            peak,
            rbf,
            stages: vec![stage; stages],
        })
    }

    pub fn stage_count(&self) -> usize {
        self.stages.len()
    }

    pub fn filter_count(&self) -> usize {
        self.stages.first().map_or(0, |s| s.filter_coeffs.len())
    }

    pub fn coeffs_per_filter(&self) -> usize {
        self.filter_size * self.filter_size - 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.stages.is_empty() {
            return Err(Error::EmptyModel);
        }
        if !(self.peak.is_finite() && self.peak > 0.0) {
            return Err(Error::NonPositivePeak);
        }
        self.rbf.validate()?;
        let n_k = self.filter_count();
        let n_c = self.coeffs_per_filter();
        for stage in &self.stages {
            if !stage.beta.is_finite() {
                return Err(Error::NonFinite);
            }
            if stage.filter_coeffs.len() != n_k || stage.influence_weights.len() != n_k {
                return Err(Error::BadStage);
            }
            for c in &stage.filter_coeffs {
                if c.len() != n_c {
                    return Err(Error::DataLength { expected: n_c, actual: c.len() });
                }
            }
            for w in &stage.influence_weights {
                if w.len() != self.rbf.count {
                    return Err(Error::DataLength { expected: self.rbf.count, actual: w.len() });
                }
            }
        }
        Ok(())
    }

    /// Builds the runnable model: kernels from coefficients, nonlinearities
    /// from weights on the shared grid.
    pub fn materialize(&self, basis: &FilterBasis) -> Result<DiffusionModel> {
        self.validate()?;
        if basis.kernel_size() != self.filter_size {
            return Err(Error::BadKernelSize { size: basis.kernel_size() });
        }
        let mut stages = Vec::with_capacity(self.stages.len());
        for sc in &self.stages {
            let filters = sc
                .filter_coeffs
                .iter()
                .map(|c| basis.kernel_from_coeffs(c))
                .collect::<Result<Vec<_>>>()?;
            let influences = sc
                .influence_weights
                .iter()
                .map(|w| InfluenceFunction::on_grid(w.clone(), &self.rbf))
                .collect::<Result<Vec<_>>>()?;
            stages.push(StageParams::new(sc.beta, filters, influences)?);
        }
        let model = DiffusionModel {
            stages,
            filter_size: self.filter_size,
            training_peak: self.peak,
            rbf: self.rbf,
        };
        model.validate()?;
        Ok(model)
    }

    /// Total number of scalar parameters.
    pub fn param_count(&self) -> usize {
        let n_k = self.filter_count();
        self.stages.len() * (1 + n_k * self.coeffs_per_filter() + n_k * self.rbf.count)
    }

    /// Flattens all parameters stage-major; within a stage: beta, then the
    /// filter coefficients filter by filter, then the influence weights
    /// filter by filter.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for stage in &self.stages {
            out.push(stage.beta);
            for c in &stage.filter_coeffs {
                out.extend_from_slice(c);
            }
            for w in &stage.influence_weights {
                out.extend_from_slice(w);
            }
        }
        out
    }

    /// Writes a flat vector (in [`flatten`](Self::flatten) order) back into
    /// the structured parameters.
    pub fn assign_from_flat(&mut self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.param_count() {
            return Err(Error::DataLength { expected: self.param_count(), actual: theta.len() });
        }
        let mut pos = 0;
        for stage in &mut self.stages {
            stage.beta = theta[pos];
            pos += 1;
            for c in &mut stage.filter_coeffs {
                let len = c.len();
                c.copy_from_slice(&theta[pos..pos + len]);
                pos += len;
            }
            for w in &mut stage.influence_weights {
                let len = w.len();
                w.copy_from_slice(&theta[pos..pos + len]);
                pos += len;
            }
        }
        debug_assert_eq!(pos, theta.len());
        Ok(())
    }
}
