//! Choosing where to query the true model next.
//!
//! The quantity of interest is the short future GAD path from the current
//! state. Paths are sampled from the current surrogate, the path entropy
//! under a candidate batch is approximated through a linearised transition
//! `z' = z + dt (alpha b + beta J)` whose variance only needs the diagonal
//! posterior variances of `(b, J)` given the batch, and the batch is moved by
//! SPSA to minimise that entropy.

mod paths;
mod spsa;

pub use paths::{sample_prior_paths, PriorPathSet};
pub use spsa::{spsa_maximize, SpsaOutcome, SpsaParams};

use std::f64::consts::{E, PI};

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, check_finite, Error, Result};
use crate::gpr::{DerivPosterior, DesignConditioner, GprModel, ObservationKind};
use crate::kernel::KernelParams;
use crate::rng::{stream_rng, sub_seed, Stream};
use crate::{Matrix, Vector};

/// Floor applied to every transition variance before taking logs.
pub const VARIANCE_FLOOR: f64 = 1e-12;

/// `N_D` candidate query locations.
#[derive(Clone, Debug, PartialEq)]
pub struct DesignBatch {
    points: Vec<Vector>,
}

impl DesignBatch {
    pub fn new(points: Vec<Vector>) -> Result<Self> {
        let Some(first) = points.first() else {
            return Err(Error::InvalidParameter("design batch must be nonempty".into()));
        };
        let d = first.len();
        for p in &points {
            check_dim(d, p.len())?;
            check_finite(p.as_slice(), "design point")?;
        }
        Ok(DesignBatch { points })
    }

    pub fn points(&self) -> &[Vector] {
        &self.points
    }

    pub fn into_points(self) -> Vec<Vector> {
        self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points[0].len()
    }

    pub(crate) fn flatten(&self) -> Vec<f64> {
        self.points.iter().flat_map(|p| p.iter().copied()).collect()
    }

    /// Inverse of `flatten`. Coordinates may be non-finite here; the
    /// objective is expected to reject them.
    pub(crate) fn from_flat(flat: &[f64], dim: usize) -> Self {
        DesignBatch {
            points: flat.chunks(dim).map(Vector::from_column_slice).collect(),
        }
    }
}

/// Coefficients of the linearised transition `dt (alpha b + beta J)`, where
/// `(beta J)_i = sum_j beta_j J_ji`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinCoeffs {
    pub alpha: f64,
    pub beta: Vec<f64>,
    /// Set when the least-squares fit was unavailable and `(1, 0)` is used.
    pub fallback: bool,
}

impl LinCoeffs {
    pub fn fallback(dim: usize) -> Self {
        LinCoeffs {
            alpha: 1.0,
            beta: vec![0.0; dim],
            fallback: true,
        }
    }
}

/// Least-squares `(alpha, beta)` from the last three positions and the
/// surrogate means at the two earlier ones.
///
/// `positions = [x_t, x_{t-1}, x_{t-2}]`, `mu_b = [mu_b(x_{t-1}), mu_b(x_{t-2})]`,
/// and likewise `mu_j`.
pub fn fit_lin_coeffs(
    positions: [&Vector; 3],
    mu_b: [&Vector; 2],
    mu_j: [&Matrix; 2],
    dt: f64,
) -> LinCoeffs {
    let d = positions[0].len();
    let mut a = Matrix::zeros(2 * d, d + 1);
    let mut rhs = Vector::zeros(2 * d);
    for s in 0..2 {
        for i in 0..d {
            let row = s * d + i;
            rhs[row] = (positions[s][i] - positions[s + 1][i]) / dt;
            a[(row, 0)] = mu_b[s][i];
            for j in 0..d {
                a[(row, 1 + j)] = mu_j[s][(j, i)];
            }
        }
    }
    if !(a.iter().all(|v| v.is_finite()) && rhs.iter().all(|v| v.is_finite())) {
        return LinCoeffs::fallback(d);
    }
    let svd = a.svd(true, true);
    let smax = svd.singular_values.max();
    let rank = svd
        .singular_values
        .iter()
        .filter(|s| **s > 1e-10 * smax)
        .count();
    if smax <= 0.0 || rank < d + 1 {
        return LinCoeffs::fallback(d);
    }
    match svd.solve(&rhs, 1e-10 * smax) {
        Ok(sol) if sol.iter().all(|v| v.is_finite()) => LinCoeffs {
            alpha: sol[0],
            beta: sol.iter().skip(1).copied().collect(),
            fallback: false,
        },
        _ => LinCoeffs::fallback(d),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Reliability {
    Reliable,
    Unreliable,
}

/// Flags the surrogate as unreliable when
/// `max_i |alpha Var(b_i) + sum_j beta_j Var(J_ji)| >= sigma_sur`.
pub fn reliability_check(post: &DerivPosterior, coeffs: &LinCoeffs, sigma_sur: f64) -> Reliability {
    let d = post.var_b.len();
    let worst = (0..d)
        .map(|i| {
            let r = coeffs.alpha * post.var_b[i]
                + (0..d)
                    .map(|j| coeffs.beta[j] * post.var_j[(j, i)])
                    .sum::<f64>();
            r.abs()
        })
        .fold(0.0, f64::max);
    if worst >= sigma_sur {
        Reliability::Unreliable
    } else {
        Reliability::Reliable
    }
}

/// Negative expected path entropy under batch `design`, averaged over the
/// sampled paths, with the transition covariance replaced by its diagonal.
/// Returns `-inf` when the batch cannot be factorised.
///
/// Diagonal entry `i` is the full variance of `alpha b_i + sum_j beta_j J_ji`,
/// including the `beta_j beta_k Cov(J_ji, J_ki)` terms. Dropping those (they
/// vanish in one dimension and in force mode) would make the entry a
/// non-variance that can grow when points are added to the batch.
pub fn utility_u1(
    design: &DesignBatch,
    paths: &PriorPathSet,
    coeffs: &LinCoeffs,
    params: &KernelParams,
    kind: ObservationKind,
    dt: f64,
) -> f64 {
    if design.points().iter().any(|p| !p.iter().all(|v| v.is_finite())) {
        return f64::NEG_INFINITY;
    }
    let Ok(cond) = DesignConditioner::new(*params, kind, design.points()) else {
        return f64::NEG_INFINITY;
    };
    let log_2pie = (2.0 * PI * E).ln();
    let (alpha, beta) = (coeffs.alpha, &coeffs.beta);
    let horizon = paths.horizon();
    let mut total = 0.0;
    for k in 0..horizon {
        let mut sum = 0.0;
        let mut count = 0usize;
        for z in paths.paths().iter().filter_map(|p| p.get(k)) {
            let Ok(var) = cond.variances(z.as_slice()) else {
                continue;
            };
            let d = z.len();
            let mut entropy = 0.0;
            for i in 0..d {
                let mut s = alpha * alpha * var.var_b[i];
                for j in 0..d {
                    s += 2.0 * alpha * beta[j] * var.cov_bj[(i, j)];
                    for k in 0..d {
                        s += beta[j] * beta[k] * var.jcol_cov[i][(j, k)];
                    }
                }
                let s = (dt * dt * s).max(VARIANCE_FLOOR);
                entropy += 0.5 * (log_2pie + s.ln());
            }
            sum += entropy;
            count += 1;
        }
        if count > 0 {
            total -= sum / count as f64;
        }
    }
    total
}

/// Settings for the active-learning loop and design step.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ActiveLearningConfig {
    /// Initial data size `N_0`.
    pub n0: usize,
    /// Batch size `N_D`.
    pub n_d: usize,
    /// Reliability threshold `sigma^2_sur`.
    pub sigma_sur: f64,
    pub n_paths: usize,
    /// Path time horizon `T`; the path length is `K = T / design_dt`.
    pub horizon_t: f64,
    pub design_dt: f64,
    /// Per-dimension variance of the initial data around the start.
    pub init_spread: f64,
    /// Observation noise variance of the true model.
    pub noise_var: f64,
    pub spsa: SpsaParams,
    /// Nelder-Mead iterations for the initial hyperparameter fit.
    pub mle_budget: usize,
    /// Iterations for each refit after a design update (warm started).
    pub mle_refit_budget: usize,
    /// Random restarts of the initial fit; refits use one warm start.
    pub mle_starts: usize,
    /// The run stops unconverged once this many updates have been made.
    pub max_updates: usize,
}

impl Default for ActiveLearningConfig {
    fn default() -> Self {
        ActiveLearningConfig {
            n0: 20,
            n_d: 10,
            sigma_sur: 0.2,
            n_paths: 20,
            horizon_t: 0.1,
            design_dt: 0.01,
            init_spread: 0.5,
            noise_var: 0.0,
            spsa: SpsaParams::default(),
            mle_budget: 80,
            mle_refit_budget: 30,
            mle_starts: 4,
            max_updates: 60,
        }
    }
}

impl ActiveLearningConfig {
    pub fn horizon_steps(&self) -> usize {
        ((self.horizon_t / self.design_dt).round() as usize).max(1)
    }

    pub fn validate(&self) -> Result<(), Vec<String>> {
        let mut errs = Vec::new();
        if self.n0 == 0 {
            errs.push("N0 must be >= 1".to_string());
        }
        if self.n_d == 0 {
            errs.push("N_D must be >= 1".to_string());
        }
        if self.n_paths == 0 {
            errs.push("n_paths must be >= 1".to_string());
        }
        if !(self.sigma_sur > 0.0) {
            errs.push("sigma_sur must be positive".to_string());
        }
        if !(self.horizon_t > 0.0 && self.horizon_t.is_finite()) {
            errs.push("horizon_T must be positive".to_string());
        }
        if !(self.design_dt > 0.0 && self.design_dt.is_finite()) {
            errs.push("design_dt must be positive".to_string());
        }
        if !(self.init_spread > 0.0 && self.init_spread.is_finite()) {
            errs.push("init_spread must be positive".to_string());
        }
        if !(self.noise_var >= 0.0 && self.noise_var.is_finite()) {
            errs.push("noise_var must be nonnegative".to_string());
        }
        if let Err(e) = self.spsa.validate() {
            errs.push(e);
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(errs)
        }
    }
}

/// Samples prior paths from `(x, v)`, then runs SPSA on the path-entropy
/// utility from a Gaussian initial batch of spread `0.5 sqrt(l)` around `x`.
pub fn propose_design(
    model: &GprModel,
    x: &Vector,
    v: &Vector,
    coeffs: &LinCoeffs,
    cfg: &ActiveLearningConfig,
    seed: u64,
) -> Result<DesignBatch> {
    let paths = sample_prior_paths(
        model,
        x,
        v,
        cfg.n_paths,
        cfg.horizon_steps(),
        cfg.design_dt,
        sub_seed(seed, 0),
    )?;
    let params = *model.params();
    let spread = 0.5 * params.length().sqrt();
    let mut rng = stream_rng(seed, Stream::Spsa, 1);
    let start = DesignBatch::new(
        (0..cfg.n_d)
            .map(|_| {
                Vector::from_fn(x.len(), |i, _| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    x[i] + spread * z
                })
            })
            .collect(),
    )?;
    let spsa = SpsaParams {
        seed: sub_seed(seed, 1),
        ..cfg.spsa
    };
    let out = spsa_maximize(
        |batch| utility_u1(batch, &paths, coeffs, &params, model.kind(), cfg.design_dt),
        &start,
        &spsa,
    );
    Ok(out.best)
}
