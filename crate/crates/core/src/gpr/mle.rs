//! Type-II maximum likelihood for the kernel hyperparameters.
//!
//! The search runs in `(log eta, log l, log noise)` with a small Nelder-Mead
//! simplex from several seeded starts. When the caller declares the data
//! noise-free the noise stays pinned at zero and only two coordinates move.

use std::f64::consts::PI;

use rand_distr::{Distribution, StandardNormal};

use super::{factor_with_jitter, gram, Dataset};
use crate::kernel::KernelParams;
use crate::rng::{stream_rng, Stream};
use crate::Result;

const LOG_LENGTH_BOUNDS: (f64, f64) = (-6.0, 6.0);
const LOG_ETA_BOUNDS: (f64, f64) = (-20.0, 20.0);
const LOG_NOISE_BOUNDS: (f64, f64) = (-25.0, 5.0);

/// `log p(Y | X, params)`, summed over output components in force mode.
pub fn log_marginal_likelihood(data: &Dataset, params: &KernelParams) -> Result<f64> {
    if data.is_empty() {
        return Err(crate::Error::EmptyDataset);
    }
    let k = gram(data.locations(), params);
    let Some((chol, _)) = factor_with_jitter(&k, params.noise_var(), params.eta()) else {
        return Ok(f64::NEG_INFINITY);
    };
    let y = data.label_matrix();
    let n = data.len() as f64;
    let m = y.ncols() as f64;
    let white = chol
        .l_dirty()
        .solve_lower_triangular(&y)
        .expect("Cholesky factor has a positive diagonal");
    let fit = white.norm_squared();
    let log_det: f64 = chol.l_dirty().diagonal().iter().map(|v| 2.0 * v.ln()).sum();
    let lml = -0.5 * fit - 0.5 * m * log_det - 0.5 * m * n * (2.0 * PI).ln();
    Ok(if lml.is_finite() { lml } else { f64::NEG_INFINITY })
}

#[derive(Clone, Copy, Debug)]
pub struct MleOptions {
    /// Nelder-Mead iterations per start; zero returns the initial params.
    pub budget: usize,
    pub seed: u64,
    /// Keep the noise out of the search. It stays at zero, or at the same
    /// fraction of `eta` as in the initial parameters (a nugget).
    pub noise_free: bool,
    pub starts: usize,
}

impl Default for MleOptions {
    fn default() -> Self {
        MleOptions {
            budget: 60,
            seed: 0,
            noise_free: false,
            starts: 4,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct MleFit {
    pub params: KernelParams,
    pub log_likelihood: f64,
    /// Set when no start produced a finite likelihood and `init` was kept.
    pub fell_back: bool,
}

fn clamp(v: f64, (lo, hi): (f64, f64)) -> f64 {
    v.clamp(lo, hi)
}

/// `pinned` is the log noise-to-eta ratio held fixed in noise-free mode.
fn to_params(theta: &[f64], pinned: Option<f64>) -> KernelParams {
    let log_noise = if let Some(rel) = pinned {
        clamp(theta[0], LOG_ETA_BOUNDS) + rel
    } else {
        clamp(theta[2], LOG_NOISE_BOUNDS)
    };
    KernelParams::from_log(
        clamp(theta[0], LOG_ETA_BOUNDS),
        clamp(theta[1], LOG_LENGTH_BOUNDS),
        log_noise,
    )
}

pub fn optimize_hyperparams(data: &Dataset, init: KernelParams, opts: &MleOptions) -> MleFit {
    let init_lml = log_marginal_likelihood(data, &init).unwrap_or(f64::NEG_INFINITY);
    if opts.budget == 0 || data.len() < 3 {
        return MleFit {
            params: init,
            log_likelihood: init_lml,
            fell_back: false,
        };
    }

    let mut theta0 = vec![
        clamp(init.log_eta(), LOG_ETA_BOUNDS),
        clamp(init.log_length(), LOG_LENGTH_BOUNDS),
    ];
    if !opts.noise_free {
        let ln = if init.log_noise().is_finite() {
            init.log_noise()
        } else {
            init.log_eta() - 10.0
        };
        theta0.push(clamp(ln, LOG_NOISE_BOUNDS));
    }

    let pinned = opts.noise_free.then(|| init.log_noise() - init.log_eta());
    let objective = |theta: &[f64]| -> f64 {
        let p = to_params(theta, pinned);
        match log_marginal_likelihood(data, &p) {
            Ok(v) if v.is_finite() => -v,
            _ => f64::INFINITY,
        }
    };

    let mut rng = stream_rng(opts.seed, Stream::Mle, 0);
    let mut best: Option<(Vec<f64>, f64)> = None;
    for start in 0..opts.starts.max(1) {
        let x0: Vec<f64> = if start == 0 {
            theta0.clone()
        } else {
            theta0
                .iter()
                .map(|v| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    v + z
                })
                .collect()
        };
        let (x, f) = nelder_mead(&objective, &x0, 0.5, opts.budget);
        if f.is_finite() && best.as_ref().is_none_or(|(_, bf)| f < *bf) {
            best = Some((x, f));
        }
    }

    match best {
        Some((x, f)) if -f >= init_lml => MleFit {
            params: to_params(&x, pinned),
            log_likelihood: -f,
            fell_back: false,
        },
        Some(_) => MleFit {
            params: init,
            log_likelihood: init_lml,
            fell_back: false,
        },
        None => {
            log::warn!("hyperparameter search failed; keeping initial parameters");
            MleFit {
                params: init,
                log_likelihood: init_lml,
                fell_back: true,
            }
        }
    }
}

/// Minimises `f` with the standard Nelder-Mead simplex (reflection 1,
/// expansion 2, contraction 1/2, shrink 1/2).
pub(crate) fn nelder_mead<F>(f: &F, x0: &[f64], step: f64, iters: usize) -> (Vec<f64>, f64)
where
    F: Fn(&[f64]) -> f64,
{
    let n = x0.len();
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    simplex.push((x0.to_vec(), f(x0)));
    for i in 0..n {
        let mut x = x0.to_vec();
        x[i] += step;
        let fx = f(&x);
        simplex.push((x, fx));
    }

    let lerp = |a: &[f64], b: &[f64], t: f64| -> Vec<f64> {
        a.iter().zip(b).map(|(ai, bi)| ai + t * (bi - ai)).collect()
    };

    for _ in 0..iters {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let spread = simplex[n].1 - simplex[0].1;
        if spread.abs() < 1e-10 && simplex[0].1.is_finite() {
            break;
        }
        let mut centroid = vec![0.0; n];
        for (x, _) in &simplex[..n] {
            for (c, v) in centroid.iter_mut().zip(x) {
                *c += v / n as f64;
            }
        }
        let worst = simplex[n].0.clone();
        let reflected = lerp(&centroid, &worst, -1.0);
        let fr = f(&reflected);
        if fr < simplex[0].1 {
            let expanded = lerp(&centroid, &worst, -2.0);
            let fe = f(&expanded);
            simplex[n] = if fe < fr { (expanded, fe) } else { (reflected, fr) };
        } else if fr < simplex[n - 1].1 {
            simplex[n] = (reflected, fr);
        } else {
            let (contracted, fc) = if fr < simplex[n].1 {
                let c = lerp(&centroid, &reflected, 0.5);
                let fc = f(&c);
                (c, fc)
            } else {
                let c = lerp(&centroid, &worst, 0.5);
                let fc = f(&c);
                (c, fc)
            };
            if fc < simplex[n].1.min(fr) {
                simplex[n] = (contracted, fc);
            } else {
                let best = simplex[0].0.clone();
                for entry in simplex.iter_mut().skip(1) {
                    let x = lerp(&best, &entry.0, 0.5);
                    let fx = f(&x);
                    *entry = (x, fx);
                }
            }
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    simplex.swap_remove(0)
}
