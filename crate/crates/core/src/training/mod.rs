//! Loss, reverse-mode gradients through the diffusion process, gradient
//! checking, and the joint training driver.
//!
//! The backward sweep walks the stages in reverse. At each stage the
//! incoming adjoint first picks up the data-weight gradient, is scaled by
//! the pointwise prox Jacobian, and is then pushed through the diffusion
//! term: influence-weight gradients fall out of the RBF basis responses,
//! and filter gradients take one product-rule term per occurrence of the
//! kernel (the inner response convolution and the outer adjoint). Every
//! formula is certified against central finite differences; that check is
//! the module's authoritative oracle.

pub mod basis;
pub mod lbfgs;

use alloc::vec;
use alloc::vec::Vec;

use libm::sqrt;

use crate::diffusion::{prox_poisson, stage_diffuse, DiffusionModel};
use crate::error::{Error, Result};
use crate::image::{conv2d_adjoint, conv2d_kernel_grad, conv2d_sym, Image};
use crate::influence::for_each_basis_term;

pub use basis::{FilterBasis, ModelParams, StageCoeffs};
pub use lbfgs::{IterationInfo, LbfgsConfig, MinimizeOutcome};

/// Default relative FD step for gradient checking; the per-parameter step
/// is `h_rel * max(1, |theta|)`.
pub const DEFAULT_FD_STEP: f64 = 1e-3;

/// Components smaller than this fraction of a group's largest gradient are
/// measured against that fraction instead of their own magnitude, keeping
/// the relative-error report meaningful where finite differences bottom out
/// in roundoff.
const REL_ERR_FLOOR: f64 = 1e-2;

/// One degraded/clean training pair. Intensities are in the peak-scaled
/// domain of the model being trained.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSample {
    pub f: Image,
    pub u_gt: Image,
}

impl TrainingSample {
    pub fn new(f: Image, u_gt: Image) -> Result<Self> {
        if !f.same_size(&u_gt) {
            return Err(Error::SizeMismatch);
        }
        if f.data().iter().any(|&v| v < 0.0) || u_gt.data().iter().any(|&v| v < 0.0) {
            return Err(Error::NegativeData);
        }
        Ok(TrainingSample { f, u_gt })
    }
}

/// Quadratic training cost `1/2 * sum_p (u_t[p] - u_gt[p])^2`.
pub fn loss(u_t: &Image, u_gt: &Image) -> f64 {
    assert!(u_t.same_size(u_gt), "loss operands must share dimensions");
    u_t.data()
        .iter()
        .zip(u_gt.data())
        .map(|(a, b)| {
            let d = a - b;
            0.5 * d * d
        })
        .sum()
}

#[inline]
fn prox_jacobian_scalar(u_tilde: f64, lambda: f64, f: f64) -> f64 {
    let d = u_tilde - lambda;
    let root = sqrt(d * d + 4.0 * lambda * f);
    if root > 0.0 {
        0.5 * (1.0 + d / root)
    } else {
        0.5
    }
}

#[inline]
fn prox_beta_grad_scalar(u_tilde: f64, lambda: f64, f: f64) -> f64 {
    let d = u_tilde - lambda;
    let root = sqrt(d * d + 4.0 * lambda * f);
    if root > 0.0 {
        lambda * 0.5 * (-1.0 + ((lambda - u_tilde) + 2.0 * f) / root)
    } else {
        lambda * -0.5
    }
}

/// Pointwise derivative of the prox output with respect to its first
/// argument; every value lies in `[0, 1]`.
pub fn prox_jacobian_diag(u_tilde: &Image, lambda: f64, f: &Image) -> Image {
    debug_assert!(u_tilde.same_size(f));
    let mut out = u_tilde.clone();
    for (v, &fv) in out.data_mut().iter_mut().zip(f.data()) {
        *v = prox_jacobian_scalar(*v, lambda, fv);
    }
    out
}

/// Pointwise derivative of the prox output with respect to `beta` (the log
/// data weight, `lambda = exp(beta)`).
pub fn prox_lambda_grad(u_tilde: &Image, lambda: f64, f: &Image) -> Image {
    debug_assert!(u_tilde.same_size(f));
    let mut out = u_tilde.clone();
    for (v, &fv) in out.data_mut().iter_mut().zip(f.data()) {
        *v = prox_beta_grad_scalar(*v, lambda, fv);
    }
    out
}

/// Per-stage quantities cached by the forward pass and reused backward.
#[derive(Debug, Clone)]
pub struct StageTape {
    /// Stage input `u_t`.
    pub u_in: Image,
    /// Diffused estimate before the prox.
    pub u_tilde: Image,
    /// Pre-activation filter responses `k_i * u_t`.
    pub responses: Vec<Image>,
}

/// Everything backprop needs from one forward pass.
#[derive(Debug, Clone)]
pub struct BackpropTape {
    pub stages: Vec<StageTape>,
    pub output: Image,
}

/// Runs the diffusion process while recording the tape. The computed output
/// is bitwise identical to [`crate::diffusion::forward`].
pub fn forward_with_tape(f: &Image, model: &DiffusionModel) -> Result<(Image, BackpropTape)> {
    model.validate()?;
    if f.data().iter().any(|&v| v < 0.0) {
        return Err(Error::NegativeData);
    }
    let mut u = f.clone();
    let mut stages = Vec::with_capacity(model.stages.len());
    for stage in &model.stages {
        let (responses, u_tilde) = stage_diffuse(&u, stage);
        let u_next = prox_poisson(&u_tilde, stage.lambda(), f)?;
        stages.push(StageTape { u_in: u, u_tilde, responses });
        u = u_next;
    }
    Ok((u.clone(), BackpropTape { stages, output: u }))
}

/// Gradient of the loss for one stage, in the trainable parameterization.
#[derive(Debug, Clone, PartialEq)]
pub struct StageGradient {
    pub d_beta: f64,
    /// Per filter: gradient in basis-coefficient space.
    pub d_filter_coeffs: Vec<Vec<f64>>,
    /// Per filter: gradient of the RBF weights.
    pub d_influence_weights: Vec<Vec<f64>>,
}

/// Full parameter gradient, congruent to [`ModelParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGradient {
    pub stages: Vec<StageGradient>,
}

impl ParamGradient {
    fn zeros(stage_count: usize, n_k: usize, n_coeffs: usize, n_rbf: usize) -> ParamGradient {
        ParamGradient {
            stages: (0..stage_count)
                .map(|_| StageGradient {
                    d_beta: 0.0,
                    d_filter_coeffs: vec![vec![0.0; n_coeffs]; n_k],
                    d_influence_weights: vec![vec![0.0; n_rbf]; n_k],
                })
                .collect(),
        }
    }

    /// Same layout as [`ModelParams::flatten`].
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for stage in &self.stages {
            out.push(stage.d_beta);
            for c in &stage.d_filter_coeffs {
                out.extend_from_slice(c);
            }
            for w in &stage.d_influence_weights {
                out.extend_from_slice(w);
            }
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.stages.iter().all(|s| {
            s.d_beta.is_finite()
                && s.d_filter_coeffs.iter().flatten().all(|v| v.is_finite())
                && s.d_influence_weights.iter().flatten().all(|v| v.is_finite())
        })
    }
}

fn check_tape(model: &DiffusionModel, sample: &TrainingSample, tape: &BackpropTape) -> Result<()> {
    if tape.stages.len() != model.stages.len() {
        return Err(Error::TapeMismatch);
    }
    if !tape.output.same_size(&sample.f) {
        return Err(Error::TapeMismatch);
    }
    for (st, stage) in tape.stages.iter().zip(&model.stages) {
        if st.responses.len() != stage.filter_count()
            || !st.u_in.same_size(&sample.f)
            || !st.u_tilde.same_size(&sample.f)
        {
            return Err(Error::TapeMismatch);
        }
        if st.responses.iter().any(|r| !r.same_size(&sample.f)) {
            return Err(Error::TapeMismatch);
        }
    }
    Ok(())
}

/// Reverse-mode gradient of the quadratic loss with respect to every stage
/// parameter. The tape must come from a forward pass of `model` on
/// `sample.f`. Returns the loss together with the gradient; accumulation
/// order is fixed (stage-major, filter-minor).
pub fn backprop(
    model: &DiffusionModel,
    sample: &TrainingSample,
    tape: &BackpropTape,
) -> Result<(f64, ParamGradient)> {
    backprop_with_prox_grads(model, sample, tape, prox_jacobian_diag, prox_lambda_grad)
}

/// Backprop with injectable prox derivative maps. Production code goes
/// through [`backprop`]; tests substitute corrupted formulas to prove the
/// finite-difference oracle catches them.
fn backprop_with_prox_grads<J, Z>(
    model: &DiffusionModel,
    sample: &TrainingSample,
    tape: &BackpropTape,
    jacobian: J,
    beta_grad: Z,
) -> Result<(f64, ParamGradient)>
where
    J: Fn(&Image, f64, &Image) -> Image,
    Z: Fn(&Image, f64, &Image) -> Image,
{
    model.validate()?;
    check_tape(model, sample, tape)?;
    let basis = FilterBasis::new(model.filter_size)?;
    let stage_count = model.stages.len();
    let n_k = model.stages[0].filter_count();
    let m = model.filter_size;
    let loss_value = loss(&tape.output, &sample.u_gt);

    let mut grad = ParamGradient::zeros(stage_count, n_k, basis.atom_count(), model.rbf.count);

    // adjoint with respect to the current stage's output
    let mut v = {
        let mut d = tape.output.clone();
        d.sub_assign(&sample.u_gt);
        d
    };

    for t in (0..stage_count).rev() {
        let stage = &model.stages[t];
        let st = &tape.stages[t];
        let lambda = stage.lambda();

        // data-weight gradient uses the adjoint before the prox chain
        grad.stages[t].d_beta = beta_grad(&st.u_tilde, lambda, &sample.f).dot(&v);

        // pull the adjoint through the prox
        let y = jacobian(&st.u_tilde, lambda, &sample.f);
        let mut w_tilde = y;
        for (w, b) in w_tilde.data_mut().iter_mut().zip(v.data()) {
            *w *= b;
        }

        let mut v_prev = w_tilde.clone();
        for i in 0..n_k {
            let kernel = &stage.filters[i];
            let influence = &stage.influences[i];
            let weights = influence.weights();
            let response = &st.responses[i];

            let q = conv2d_sym(&w_tilde, kernel);

            // one pass over the pixels evaluates each RBF term once and
            // feeds all three consumers: phi (outer kernel term), phi'
            // (inner kernel term and adjoint propagation), and the
            // influence-weight gradient
            let mut activated = response.clone();
            let mut slope_weighted = response.clone();
            {
                let dw = &mut grad.stages[t].d_influence_weights[i];
                let act = activated.data_mut();
                let slw = slope_weighted.data_mut();
                for (p, (&z, &qp)) in response.data().iter().zip(q.data()).enumerate() {
                    let mut phi_v = 0.0;
                    let mut dphi_v = 0.0;
                    for_each_basis_term(influence, z, |j, b, db| {
                        phi_v += weights[j] * b;
                        dphi_v += weights[j] * db;
                        dw[j] -= b * qp;
                    });
                    act[p] = phi_v;
                    slw[p] = dphi_v * qp;
                }
            }

            // product rule over both occurrences of the kernel
            let outer = conv2d_kernel_grad(&activated, &w_tilde, m);
            let inner = conv2d_kernel_grad(&slope_weighted, &st.u_in, m);
            let mut taps = vec![0.0; m * m];
            for ((t_, a), b) in taps.iter_mut().zip(&outer).zip(&inner) {
                *t_ = -(a + b);
            }
            grad.stages[t].d_filter_coeffs[i] = basis.project(&taps);

            v_prev.sub_assign(&conv2d_adjoint(&slope_weighted, kernel));
        }
        v = v_prev;
    }

    Ok((loss_value, grad))
}

/// Per-group result of the finite-difference certification.
#[derive(Debug, Clone)]
pub struct FdGroupReport {
    pub stage: usize,
    pub group: &'static str,
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    pub analytic_inf_norm: f64,
    pub fd_inf_norm: f64,
}

#[derive(Debug, Clone)]
pub struct FdReport {
    pub groups: Vec<FdGroupReport>,
}

impl FdReport {
    pub fn max_rel_err(&self) -> f64 {
        self.groups.iter().fold(0.0_f64, |m, g| m.max(g.max_rel_err))
    }
}

fn sample_loss(params: &ModelParams, basis: &FilterBasis, sample: &TrainingSample) -> Result<f64> {
    let model = params.materialize(basis)?;
    let u_t = crate::diffusion::forward(&sample.f, &model)?;
    Ok(loss(&u_t, &sample.u_gt))
}

/// Compares the analytic gradient against central finite differences of the
/// forward loss, group by group (per stage: beta, filter coefficients,
/// influence weights). `h_rel` scales the step as `h = h_rel * max(1, |theta|)`.
pub fn finite_difference_check(
    params: &ModelParams,
    sample: &TrainingSample,
    h_rel: f64,
) -> Result<FdReport> {
    params.validate()?;
    let basis = FilterBasis::new(params.filter_size)?;
    let model = params.materialize(&basis)?;
    let (_, tape) = forward_with_tape(&sample.f, &model)?;
    let (_, grad) = backprop(&model, sample, &tape)?;
    let analytic = grad.flatten();

    let theta = params.flatten();
    let mut fd = vec![0.0; theta.len()];
    let mut work = params.clone();
    let mut probe = theta.clone();
    for i in 0..theta.len() {
        let h = h_rel * theta[i].abs().max(1.0);
        probe[i] = theta[i] + h;
        work.assign_from_flat(&probe)?;
        let plus = sample_loss(&work, &basis, sample)?;
        probe[i] = theta[i] - h;
        work.assign_from_flat(&probe)?;
        let minus = sample_loss(&work, &basis, sample)?;
        probe[i] = theta[i];
        fd[i] = (plus - minus) / (2.0 * h);
    }

    Ok(compare_gradients(params, &analytic, &fd))
}

/// Builds the per-group error report for two flat gradients laid out like
/// [`ModelParams::flatten`].
fn compare_gradients(params: &ModelParams, analytic: &[f64], fd: &[f64]) -> FdReport {
    let n_k = params.filter_count();
    let n_c = params.coeffs_per_filter();
    let n_w = params.rbf.count;
    let mut groups = Vec::new();
    let mut pos = 0;
    for stage in 0..params.stage_count() {
        for (name, len) in [
            ("beta", 1),
            ("filter_coeffs", n_k * n_c),
            ("influence_weights", n_k * n_w),
        ] {
            let a = &analytic[pos..pos + len];
            let f = &fd[pos..pos + len];
            pos += len;
            let scale = a
                .iter()
                .zip(f)
                .fold(0.0_f64, |m, (x, y)| m.max(x.abs()).max(y.abs()));
            let mut max_rel: f64 = 0.0;
            let mut max_abs: f64 = 0.0;
            for (x, y) in a.iter().zip(f) {
                let abs = (x - y).abs();
                max_abs = max_abs.max(abs);
                if scale > 0.0 {
                    let denom = x.abs().max(y.abs()).max(REL_ERR_FLOOR * scale);
                    max_rel = max_rel.max(abs / denom);
                }
            }
            groups.push(FdGroupReport {
                stage,
                group: name,
                max_rel_err: max_rel,
                max_abs_err: max_abs,
                analytic_inf_norm: a.iter().fold(0.0_f64, |m, v| m.max(v.abs())),
                fd_inf_norm: f.iter().fold(0.0_f64, |m, v| m.max(v.abs())),
            });
        }
    }
    FdReport { groups }
}

/// Loss and gradient for one sample, flattened.
#[derive(Debug, Clone)]
pub struct SampleEval {
    pub loss: f64,
    pub grad: Vec<f64>,
}

/// Maps a per-sample job over `0..count`. Implementations may run jobs in
/// parallel but must return results in index order; the trainer reduces
/// them sequentially so the total is independent of scheduling.
pub trait BatchRunner {
    fn run(
        &self,
        count: usize,
        job: &(dyn Fn(usize) -> Result<SampleEval> + Sync),
    ) -> Vec<Result<SampleEval>>;
}

/// Runs every sample on the calling thread.
pub struct SequentialRunner;

impl BatchRunner for SequentialRunner {
    fn run(
        &self,
        count: usize,
        job: &(dyn Fn(usize) -> Result<SampleEval> + Sync),
    ) -> Vec<Result<SampleEval>> {
        (0..count).map(job).collect()
    }
}

/// Training hyperparameters. `rbf: None` selects the default grid for the
/// peak.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub stages: usize,
    pub filter_size: usize,
    pub peak: f64,
    pub rbf: Option<crate::influence::RbfGrid>,
    pub lbfgs: LbfgsConfig,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: DiffusionModel,
    pub params: ModelParams,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
}

/// Joint training of all stage parameters against the summed quadratic
/// loss, single-threaded.
pub fn train_joint(dataset: &[TrainingSample], config: &TrainConfig) -> Result<TrainOutcome> {
    train_joint_with(dataset, config, &SequentialRunner, None)
}

/// Joint training with a caller-supplied batch runner (for parallel
/// per-sample evaluation) and an optional per-iteration observer. Results
/// are deterministic for a fixed dataset order regardless of the runner's
/// scheduling, because sample gradients are reduced in index order.
pub fn train_joint_with(
    dataset: &[TrainingSample],
    config: &TrainConfig,
    runner: &dyn BatchRunner,
    observer: Option<&mut dyn FnMut(&IterationInfo)>,
) -> Result<TrainOutcome> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut params = ModelParams::init(config.stages, config.filter_size, config.peak, config.rbf)?;
    let basis = FilterBasis::new(config.filter_size)?;
    let theta0 = params.flatten();

    let mut initial_loss = f64::NAN;
    let mut seen_first = false;
    let template = params.clone();

    let mut eval = |theta: &[f64]| -> Result<(f64, Vec<f64>)> {
        let mut p = template.clone();
        p.assign_from_flat(theta)?;
        let model = p.materialize(&basis)?;
        let job = |idx: usize| -> Result<SampleEval> {
            let sample = &dataset[idx];
            let (_, tape) = forward_with_tape(&sample.f, &model)?;
            let (l, g) = backprop(&model, sample, &tape)?;
            Ok(SampleEval { loss: l, grad: g.flatten() })
        };
        let results = runner.run(dataset.len(), &job);
        let mut total = 0.0;
        let mut grad = vec![0.0; theta.len()];
        for r in results {
            let ev = r?;
            total += ev.loss;
            for (g, d) in grad.iter_mut().zip(&ev.grad) {
                *g += d;
            }
        }
        if !seen_first {
            seen_first = true;
            initial_loss = total;
        }
        Ok((total, grad))
    };

    let outcome = lbfgs::minimize(&theta0, &config.lbfgs, &mut eval, observer)?;

    params.assign_from_flat(&outcome.theta)?;
    let model = params.materialize(&basis)?;
    Ok(TrainOutcome {
        model,
        params,
        initial_loss,
        final_loss: outcome.loss,
        iterations: outcome.iterations,
        evaluations: outcome.evaluations,
        converged: outcome.converged,
    })
}
