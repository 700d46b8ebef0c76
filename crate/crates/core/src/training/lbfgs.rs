//! Limited-memory BFGS with a strong-Wolfe line search.
//!
//! Two-loop recursion over a bounded history of curvature pairs gives the
//! search direction; steps are accepted when they satisfy the sufficient
//! decrease and strong curvature conditions. The minimizer keeps the
//! best-loss point seen across all evaluations and returns it.

use alloc::vec::Vec;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LbfgsConfig {
    /// Number of stored curvature pairs.
    pub history: usize,
    /// Cap on outer iterations.
    pub max_iters: usize,
    /// Sufficient-decrease constant.
    pub c1: f64,
    /// Curvature constant.
    pub c2: f64,
    /// Stop when the gradient infinity norm falls below this.
    pub grad_tol: f64,
    /// Cap on function evaluations inside one line search.
    pub max_line_search: usize,
}

impl Default for LbfgsConfig {
    fn default() -> Self {
        LbfgsConfig {
            history: 10,
            max_iters: 200,
            c1: 1e-4,
            c2: 0.9,
            grad_tol: 1e-8,
            max_line_search: 25,
        }
    }
}

#[derive(Debug, Clone)]
pub struct MinimizeOutcome {
    /// Best-loss point over every evaluation performed.
    pub theta: Vec<f64>,
    pub loss: f64,
    pub iterations: usize,
    pub evaluations: usize,
    /// True when the gradient tolerance was reached.
    pub converged: bool,
}

/// Progress snapshot handed to the observer once per outer iteration.
#[derive(Debug, Clone, Copy)]
pub struct IterationInfo {
    pub iteration: usize,
    pub loss: f64,
    pub grad_inf_norm: f64,
    pub evaluations: usize,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn inf_norm(a: &[f64]) -> f64 {
    a.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
}

fn axpy(out: &mut [f64], a: f64, x: &[f64]) {
    for (o, v) in out.iter_mut().zip(x) {
        *o += a * v;
    }
}

struct Tracker<'a> {
    eval: &'a mut dyn FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
    evaluations: usize,
    best_loss: f64,
    best_theta: Vec<f64>,
}

impl<'a> Tracker<'a> {
    fn call(&mut self, theta: &[f64]) -> Result<(f64, Vec<f64>)> {
        let (loss, grad) = (self.eval)(theta)?;
        self.evaluations += 1;
        if !loss.is_finite() || !grad.iter().all(|g| g.is_finite()) {
            return Err(Error::NonFiniteLoss { iteration: self.evaluations });
        }
        if loss < self.best_loss {
            self.best_loss = loss;
            self.best_theta.clear();
            self.best_theta.extend_from_slice(theta);
        }
        Ok((loss, grad))
    }
}

/// Minimizes `eval` starting from `theta0`. The evaluator returns the loss
/// and its gradient; any non-finite value aborts with a diagnostic error.
pub fn minimize(
    theta0: &[f64],
    config: &LbfgsConfig,
    eval: &mut dyn FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
    mut observer: Option<&mut dyn FnMut(&IterationInfo)>,
) -> Result<MinimizeOutcome> {
    let mut tracker = Tracker {
        eval,
        evaluations: 0,
        best_loss: f64::INFINITY,
        best_theta: theta0.to_vec(),
    };

    let mut x = theta0.to_vec();
    let (mut fx, mut grad) = tracker.call(&x)?;

    let mut s_hist: Vec<Vec<f64>> = Vec::new();
    let mut y_hist: Vec<Vec<f64>> = Vec::new();
    let mut rho_hist: Vec<f64> = Vec::new();

    let mut iterations = 0;
    let mut converged = inf_norm(&grad) <= config.grad_tol;

    while !converged && iterations < config.max_iters {
        let direction = two_loop(&grad, &s_hist, &y_hist, &rho_hist);
        let dg = dot(&direction, &grad);
        if dg >= 0.0 {
            // not a descent direction: drop the history and restart steepest
            s_hist.clear();
            y_hist.clear();
            rho_hist.clear();
            let steepest: Vec<f64> = grad.iter().map(|g| -g).collect();
            let dg2 = dot(&steepest, &grad);
            match line_search(&mut tracker, config, &x, fx, &steepest, dg2)? {
                Some(found) => apply_step(&mut x, &mut fx, &mut grad, found),
                None => break,
            }
        } else {
            match line_search(&mut tracker, config, &x, fx, &direction, dg)? {
                Some(found) => {
                    let (step_x, step_f, step_g) = found;
                    let s: Vec<f64> = step_x.iter().zip(&x).map(|(a, b)| a - b).collect();
                    let y: Vec<f64> = step_g.iter().zip(&grad).map(|(a, b)| a - b).collect();
                    let ys = dot(&y, &s);
                    let yy = dot(&y, &y);
                    if ys > 1e-10 * yy.max(1e-300) {
                        if s_hist.len() == config.history {
                            s_hist.remove(0);
                            y_hist.remove(0);
                            rho_hist.remove(0);
                        }
                        s_hist.push(s);
                        y_hist.push(y);
                        rho_hist.push(1.0 / ys);
                    }
                    apply_step(&mut x, &mut fx, &mut grad, (step_x, step_f, step_g));
                }
                None => break,
            }
        }

        iterations += 1;
        let gnorm = inf_norm(&grad);
        if let Some(obs) = observer.as_deref_mut() {
            obs(&IterationInfo {
                iteration: iterations,
                loss: fx,
                grad_inf_norm: gnorm,
                evaluations: tracker.evaluations,
            });
        }
        converged = gnorm <= config.grad_tol;
    }

    Ok(MinimizeOutcome {
        theta: tracker.best_theta,
        loss: tracker.best_loss,
        iterations,
        evaluations: tracker.evaluations,
        converged,
    })
}

fn apply_step(
    x: &mut Vec<f64>,
    fx: &mut f64,
    grad: &mut Vec<f64>,
    found: (Vec<f64>, f64, Vec<f64>),
) {
    *x = found.0;
    *fx = found.1;
    *grad = found.2;
}

/// Two-loop recursion: applies the implicit inverse-Hessian estimate to the
/// gradient and negates, yielding the search direction.
fn two_loop(
    grad: &[f64],
    s_hist: &[Vec<f64>],
    y_hist: &[Vec<f64>],
    rho_hist: &[f64],
) -> Vec<f64> {
    let mut q = grad.to_vec();
    let k = s_hist.len();
    if k == 0 {
        for v in q.iter_mut() {
            *v = -*v;
        }
        return q;
    }
    let mut alpha = Vec::with_capacity(k);
    alpha.resize(k, 0.0);
    for i in (0..k).rev() {
        let a = rho_hist[i] * dot(&s_hist[i], &q);
        alpha[i] = a;
        axpy(&mut q, -a, &y_hist[i]);
    }
    let ys = dot(&s_hist[k - 1], &y_hist[k - 1]);
    let yy = dot(&y_hist[k - 1], &y_hist[k - 1]);
    let gamma = if yy > 0.0 { ys / yy } else { 1.0 };
    for v in q.iter_mut() {
        *v *= gamma;
    }
    for i in 0..k {
        let beta = rho_hist[i] * dot(&y_hist[i], &q);
        axpy(&mut q, alpha[i] - beta, &s_hist[i]);
    }
    for v in q.iter_mut() {
        *v = -*v;
    }
    q
}

type Found = (Vec<f64>, f64, Vec<f64>);

/// Strong-Wolfe line search: bracket then zoom with cubic interpolation.
/// Returns the accepted point, or the best decreasing point when the Wolfe
/// pair could not be certified within the evaluation budget, or `None` when
/// no decrease was found at all.
fn line_search(
    tracker: &mut Tracker,
    config: &LbfgsConfig,
    x0: &[f64],
    f0: f64,
    d: &[f64],
    dg0: f64,
) -> Result<Option<Found>> {
    let point_at = |alpha: f64, x0: &[f64], d: &[f64]| -> Vec<f64> {
        x0.iter().zip(d).map(|(x, di)| x + alpha * di).collect()
    };

    let mut best_dec: Option<(f64, Found)> = None;
    let mut evals = 0;

    let mut alpha_prev = 0.0;
    let mut f_prev = f0;
    let mut dg_prev = dg0;
    let mut alpha = 1.0;
    let alpha_max = 1e6;

    let mut bracket: Option<(f64, f64, f64, f64, f64, f64)> = None; // (lo, f_lo, dg_lo, hi, f_hi, dg_hi)

    while evals < config.max_line_search {
        let xt = point_at(alpha, x0, d);
        let (ft, gt) = tracker.call(&xt)?;
        evals += 1;
        let dgt = dot(&gt, d);
        if ft < f0 && best_dec.as_ref().is_none_or(|(bf, _)| ft < *bf) {
            best_dec = Some((ft, (xt.clone(), ft, gt.clone())));
        }

        if ft > f0 + config.c1 * alpha * dg0 || (evals > 1 && ft >= f_prev) {
            bracket = Some((alpha_prev, f_prev, dg_prev, alpha, ft, dgt));
            break;
        }
        if dgt.abs() <= -config.c2 * dg0 {
            return Ok(Some((xt, ft, gt)));
        }
        if dgt >= 0.0 {
            bracket = Some((alpha, ft, dgt, alpha_prev, f_prev, dg_prev));
            break;
        }
        alpha_prev = alpha;
        f_prev = ft;
        dg_prev = dgt;
        alpha = (2.0 * alpha).min(alpha_max);
        if alpha >= alpha_max {
            break;
        }
    }

    if let Some((mut lo, mut f_lo, mut dg_lo, mut hi, mut f_hi, mut dg_hi)) = bracket {
        while evals < config.max_line_search {
            let mut at = cubic_min(lo, f_lo, dg_lo, hi, f_hi, dg_hi);
            let (left, right) = if lo < hi { (lo, hi) } else { (hi, lo) };
            let width = right - left;
            if !at.is_finite() || at <= left + 0.1 * width || at >= right - 0.1 * width {
                at = 0.5 * (left + right);
            }
            let xt = point_at(at, x0, d);
            let (ft, gt) = tracker.call(&xt)?;
            evals += 1;
            let dgt = dot(&gt, d);
            if ft < f0 && best_dec.as_ref().is_none_or(|(bf, _)| ft < *bf) {
                best_dec = Some((ft, (xt.clone(), ft, gt.clone())));
            }

            if ft > f0 + config.c1 * at * dg0 || ft >= f_lo {
                hi = at;
                f_hi = ft;
                dg_hi = dgt;
            } else {
                if dgt.abs() <= -config.c2 * dg0 {
                    return Ok(Some((xt, ft, gt)));
                }
                if dgt * (hi - lo) >= 0.0 {
                    hi = lo;
                    f_hi = f_lo;
                    dg_hi = dg_lo;
                }
                lo = at;
                f_lo = ft;
                dg_lo = dgt;
            }
            if width < 1e-14 * right.abs().max(1.0) {
                break;
            }
        }
    }

    Ok(best_dec.map(|(_, found)| found))
}

/// Minimizer of the cubic interpolant through two points with derivatives.
fn cubic_min(a: f64, fa: f64, dga: f64, b: f64, fb: f64, dgb: f64) -> f64 {
    let d1 = dga + dgb - 3.0 * (fa - fb) / (a - b);
    let d2sq = d1 * d1 - dga * dgb;
    if d2sq >= 0.0 {
        let d2 = libm::sqrt(d2sq) * if b > a { 1.0 } else { -1.0 };
        b - (b - a) * (dgb + d2 - d1) / (dgb - dga + 2.0 * d2)
    } else {
        f64::NAN
    }
}
