//! Scoped-thread drivers for the core's parallel contracts. Work is
//! assigned by static striping and every reduction walks results in index
//! order, so outputs are bitwise independent of the worker count.

use trdpd_core::diffusion::{filter_contribution, prox_poisson, DiffusionModel};
use trdpd_core::training::{BatchRunner, SampleEval};
use trdpd_core::{Error as CoreError, Image};

use crate::error::Result;

/// [`BatchRunner`] backed by `threads` scoped workers.
pub struct ThreadRunner {
    pub threads: usize,
}

impl ThreadRunner {
    pub fn new(threads: usize) -> ThreadRunner {
        ThreadRunner { threads: threads.max(1) }
    }
}

impl BatchRunner for ThreadRunner {
    fn run(
        &self,
        count: usize,
        job: &(dyn Fn(usize) -> std::result::Result<SampleEval, CoreError> + Sync),
    ) -> Vec<std::result::Result<SampleEval, CoreError>> {
        let workers = self.threads.min(count).max(1);
        if workers == 1 {
            return (0..count).map(job).collect();
        }
        let mut slots: Vec<Option<std::result::Result<SampleEval, CoreError>>> =
            (0..count).map(|_| None).collect();
        std::thread::scope(|scope| {
            let handles: Vec<_> = (0..workers)
                .map(|w| {
                    scope.spawn(move || {
                        let mut acc = Vec::new();
                        let mut i = w;
                        while i < count {
                            acc.push((i, job(i)));
                            i += workers;
                        }
                        acc
                    })
                })
                .collect();
            for handle in handles {
                for (i, r) in handle.join().expect("worker panicked") {
                    slots[i] = Some(r);
                }
            }
        });
        slots.into_iter().map(|s| s.expect("missing result slot")).collect()
    }
}

/// Multi-threaded forward pass: the per-filter contributions of each stage
/// are computed on separate workers, then subtracted in filter-index order.
/// Bitwise identical to [`trdpd_core::forward`].
pub fn forward_parallel(f: &Image, model: &DiffusionModel, threads: usize) -> Result<Image> {
    model.validate().map_err(crate::error::Error::Core)?;
    if f.data().iter().any(|&v| v < 0.0) {
        return Err(crate::error::Error::Core(CoreError::NegativeData));
    }
    let workers = threads.max(1);
    let mut u = f.clone();
    for stage in &model.stages {
        let n_k = stage.filter_count();
        let mut contribs: Vec<Option<Image>> = (0..n_k).map(|_| None).collect();
        if workers == 1 || n_k <= 1 {
            for (i, slot) in contribs.iter_mut().enumerate() {
                *slot = Some(filter_contribution(&u, &stage.filters[i], &stage.influences[i]));
            }
        } else {
            let u_ref = &u;
            std::thread::scope(|scope| {
                let w = workers.min(n_k);
                let handles: Vec<_> = (0..w)
                    .map(|start| {
                        scope.spawn(move || {
                            let mut acc = Vec::new();
                            let mut i = start;
                            while i < n_k {
                                acc.push((
                                    i,
                                    filter_contribution(
                                        u_ref,
                                        &stage.filters[i],
                                        &stage.influences[i],
                                    ),
                                ));
                                i += w;
                            }
                            acc
                        })
                    })
                    .collect();
                for handle in handles {
                    for (i, c) in handle.join().expect("worker panicked") {
                        contribs[i] = Some(c);
                    }
                }
            });
        }
        let mut u_tilde = u.clone();
        for c in contribs.into_iter() {
            u_tilde.sub_assign(&c.expect("missing contribution"));
        }
        u = prox_poisson(&u_tilde, stage.lambda(), f).map_err(crate::error::Error::Core)?;
    }
    Ok(u)
}
