//! Gaussian-process surrogate for the force `b` and Jacobian `J`.
//!
//! In [`ObservationKind::Energy`] mode a single GP models the energy `u` and
//! `(b, J) = (-grad u, -hess u)` are obtained as derived processes. In
//! [`ObservationKind::Force`] mode each force component `b_i` is an
//! independent scalar GP observed directly; all components share the kernel
//! hyperparameters and hence the same Gram matrix, and `J_ij = d_j b_i`.

mod fast;
mod mle;
mod sample;

pub use fast::{fast_posterior_variance, DesignConditioner, FastVariance};
pub use mle::{log_marginal_likelihood, optimize_hyperparams, MleFit, MleOptions};
pub use sample::FieldSample;

use nalgebra::{Cholesky, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, check_finite, Error, Result};
use crate::kernel::{covariance, KernelParams, Observable};
use crate::{Matrix, Vector};

/// Relative jitter added to every Gram diagonal before factorisation.
pub const BASE_JITTER: f64 = 1e-10;
/// Largest relative jitter tried before giving up.
pub const MAX_JITTER: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObservationKind {
    /// Scalar energy labels.
    Energy,
    /// Force-vector labels, one component per dimension.
    Force,
}

/// Observed locations and labels plus the number of true-model calls made.
#[derive(Clone, Debug)]
pub struct Dataset {
    kind: ObservationKind,
    dim: usize,
    locations: Vec<Vector>,
    labels: Vec<Vector>,
    eval_count: u64,
}

impl Dataset {
    pub fn new(kind: ObservationKind, dim: usize) -> Self {
        Dataset {
            kind,
            dim,
            locations: Vec::new(),
            labels: Vec::new(),
            eval_count: 0,
        }
    }

    pub fn kind(&self) -> ObservationKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// 1 in energy mode, `dim` in force mode.
    pub fn label_dim(&self) -> usize {
        match self.kind {
            ObservationKind::Energy => 1,
            ObservationKind::Force => self.dim,
        }
    }

    pub fn len(&self) -> usize {
        self.locations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.locations.is_empty()
    }

    pub fn locations(&self) -> &[Vector] {
        &self.locations
    }

    pub fn labels(&self) -> &[Vector] {
        &self.labels
    }

    pub fn eval_count(&self) -> u64 {
        self.eval_count
    }

    /// Appends one labelled observation and counts one true-model call.
    pub fn push(&mut self, x: Vector, label: Vector) -> Result<()> {
        check_dim(self.dim, x.len())?;
        check_dim(self.label_dim(), label.len())?;
        check_finite(x.as_slice(), "dataset location")?;
        check_finite(label.as_slice(), "dataset label")?;
        self.locations.push(x);
        self.labels.push(label);
        self.eval_count += 1;
        Ok(())
    }

    /// Counts true-model calls whose result was not kept.
    pub fn record_discarded(&mut self, n: u64) {
        self.eval_count += n;
    }

    /// `n x m` label matrix, one column per component.
    pub(crate) fn label_matrix(&self) -> Matrix {
        let m = self.label_dim();
        Matrix::from_fn(self.len(), m, |k, c| self.labels[k][c])
    }
}

/// Posterior summary of `(b, J)` at one query point.
#[derive(Clone, Debug)]
pub struct DerivPosterior {
    pub mu_b: Vector,
    pub mu_j: Matrix,
    pub var_b: Vector,
    pub var_j: Matrix,
    /// Entry `(i, j)` is `Cov(b_i, J_ji)`.
    pub cov_bj: Matrix,
    /// `jcol_cov[i]` is the covariance of column `i` of `J`: entry `(j, k)`
    /// is `Cov(J_ji, J_ki)`.
    pub jcol_cov: Vec<Matrix>,
}

/// Gram matrix `k(X, X)` without noise or jitter.
pub(crate) fn gram(points: &[Vector], p: &KernelParams) -> Matrix {
    let n = points.len();
    let mut k = Matrix::zeros(n, n);
    for a in 0..n {
        k[(a, a)] = p.eta();
        for b in 0..a {
            let v = covariance(
                Observable::VALUE,
                points[a].as_slice(),
                Observable::VALUE,
                points[b].as_slice(),
                p,
            );
            k[(a, b)] = v;
            k[(b, a)] = v;
        }
    }
    k
}

/// Cholesky of `k + (noise + jitter) I`, escalating the jitter by decades
/// from `BASE_JITTER * scale` up to `MAX_JITTER * scale`.
///
/// A factor is refused when some squared pivot is within a small multiple of
/// the jitter: the matrix is then only positive definite because of
/// the jitter, which happens for repeated noise-free locations.
pub(crate) fn factor_with_jitter(
    k: &Matrix,
    noise: f64,
    scale: f64,
) -> Option<(Cholesky<f64, Dyn>, f64)> {
    let mut rel = BASE_JITTER;
    while rel <= MAX_JITTER * (1.0 + 1e-9) {
        let jitter = rel * scale;
        let mut kj = k.clone();
        for i in 0..kj.nrows() {
            kj[(i, i)] += noise + jitter;
        }
        if let Some(c) = kj.cholesky() {
            let floor = 10.0 * jitter;
            let min_pivot = c.l_dirty().diagonal().iter().fold(f64::INFINITY, |m, v| m.min(v * v));
            if min_pivot > floor {
                return Some((c, jitter));
            }
        }
        rel *= 10.0;
    }
    None
}

/// Index pairs of locations closer than `1e-3 sqrt(l)`, or the single
/// closest pair when none are.
pub(crate) fn near_duplicates(points: &[Vector], p: &KernelParams) -> Vec<(usize, usize)> {
    let tol = 1e-3 * p.length().sqrt();
    let mut pairs = Vec::new();
    let mut closest = None;
    let mut best = f64::INFINITY;
    for a in 0..points.len() {
        for b in 0..a {
            let dist = (&points[a] - &points[b]).norm();
            if dist < tol {
                pairs.push((b, a));
            }
            if dist < best {
                best = dist;
                closest = Some((b, a));
            }
        }
    }
    if pairs.is_empty() {
        pairs.extend(closest);
    }
    pairs
}

/// The observables predicted at a query point, in a fixed layout.
pub(crate) fn query_observables(kind: ObservationKind, d: usize) -> Vec<Observable> {
    match kind {
        ObservationKind::Energy => {
            let mut q: Vec<Observable> = (0..d).map(Observable::force).collect();
            for i in 0..d {
                for j in 0..d {
                    q.push(Observable::jacobian(i, j));
                }
            }
            q
        }
        ObservationKind::Force => {
            let mut q = vec![Observable::VALUE];
            q.extend((0..d).map(Observable::derivative));
            q
        }
    }
}

/// Posterior of `(b, J)` at `z` given value observations at `points` whose
/// (noisy, jittered) Gram matrix has lower Cholesky factor `l`. Means are
/// zero when `weights` is `None`.
pub(crate) fn condition_at(
    kind: ObservationKind,
    p: &KernelParams,
    points: &[Vector],
    l: &Matrix,
    weights: Option<&Matrix>,
    z: &[f64],
) -> DerivPosterior {
    let d = z.len();
    let q = query_observables(kind, d);
    let n = points.len();
    let cross = Matrix::from_fn(n, q.len(), |k, c| {
        covariance(Observable::VALUE, points[k].as_slice(), q[c], z, p)
    });
    let v = l
        .solve_lower_triangular(&cross)
        .expect("Cholesky factor has a positive diagonal");
    let prior = |a: Observable, b: Observable| covariance(a, z, b, z, p);
    let reduced = |a: usize, b: usize| v.column(a).dot(&v.column(b));

    let mut post = DerivPosterior {
        mu_b: Vector::zeros(d),
        mu_j: Matrix::zeros(d, d),
        var_b: Vector::zeros(d),
        var_j: Matrix::zeros(d, d),
        cov_bj: Matrix::zeros(d, d),
        jcol_cov: vec![Matrix::zeros(d, d); d],
    };
    match kind {
        ObservationKind::Energy => {
            let jcol = |i: usize, j: usize| d + i * d + j;
            if let Some(w) = weights {
                let mean = cross.tr_mul(&w.column(0));
                for i in 0..d {
                    post.mu_b[i] = mean[i];
                    for j in 0..d {
                        post.mu_j[(i, j)] = mean[jcol(i, j)];
                    }
                }
                // exact posterior mean of -hess u is symmetric
                post.mu_j = (&post.mu_j + post.mu_j.transpose()) * 0.5;
            }
            for i in 0..d {
                post.var_b[i] = (prior(q[i], q[i]) - reduced(i, i)).max(0.0);
                for j in 0..d {
                    let a = jcol(i, j);
                    post.var_j[(i, j)] = (prior(q[a], q[a]) - reduced(a, a)).max(0.0);
                    let c = jcol(j, i);
                    post.cov_bj[(i, j)] = prior(q[i], q[c]) - reduced(i, c);
                    for k in 0..d {
                        let e = jcol(k, i);
                        post.jcol_cov[i][(j, k)] = prior(q[c], q[e]) - reduced(c, e);
                    }
                }
            }
            for i in 0..d {
                for j in 0..d {
                    post.jcol_cov[i][(j, j)] = post.var_j[(j, i)];
                }
            }
        }
        ObservationKind::Force => {
            if let Some(w) = weights {
                let mean = cross.tr_mul(w);
                for i in 0..d {
                    post.mu_b[i] = mean[(0, i)];
                    for j in 0..d {
                        post.mu_j[(i, j)] = mean[(1 + j, i)];
                    }
                }
            }
            let var_value = (prior(q[0], q[0]) - reduced(0, 0)).max(0.0);
            for i in 0..d {
                post.var_b[i] = var_value;
                for j in 0..d {
                    post.var_j[(i, j)] = (prior(q[1 + j], q[1 + j]) - reduced(1 + j, 1 + j)).max(0.0);
                }
                // components are independent: only Cov(b_i, d_i b_i) survives
                post.cov_bj[(i, i)] = prior(q[0], q[1 + i]) - reduced(0, 1 + i);
            }
            for i in 0..d {
                for j in 0..d {
                    post.jcol_cov[i][(j, j)] = post.var_j[(j, i)];
                }
            }
        }
    }
    post
}

/// A fitted surrogate: cached Cholesky factor and weights `K^-1 Y`.
#[derive(Clone, Debug)]
pub struct GprModel {
    params: KernelParams,
    data: Dataset,
    chol: Cholesky<f64, Dyn>,
    weights: Matrix,
    jitter: f64,
}

impl GprModel {
    pub fn fit(data: Dataset, params: KernelParams) -> Result<GprModel> {
        if data.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let k = gram(data.locations(), &params);
        let (chol, jitter) = factor_with_jitter(&k, params.noise_var(), params.eta())
            .ok_or_else(|| Error::IllConditioned {
                pairs: near_duplicates(data.locations(), &params),
            })?;
        let weights = chol.solve(&data.label_matrix());
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::IllConditioned {
                pairs: near_duplicates(data.locations(), &params),
            });
        }
        Ok(GprModel {
            params,
            data,
            chol,
            weights,
            jitter,
        })
    }

    pub fn params(&self) -> &KernelParams {
        &self.params
    }

    pub fn data(&self) -> &Dataset {
        &self.data
    }

    pub fn kind(&self) -> ObservationKind {
        self.data.kind()
    }

    pub fn dim(&self) -> usize {
        self.data.dim()
    }

    /// Diagonal jitter that was needed to factorise the Gram matrix.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub(crate) fn chol_l(&self) -> &Matrix {
        self.chol.l_dirty()
    }

    fn check_query(&self, x: &[f64]) -> Result<()> {
        check_dim(self.dim(), x.len())?;
        check_finite(x, "query point")
    }

    /// Posterior mean and variances of `(b, J)` at `x`.
    pub fn predict_derivatives(&self, x: &[f64]) -> Result<DerivPosterior> {
        self.check_query(x)?;
        Ok(condition_at(
            self.kind(),
            &self.params,
            self.data.locations(),
            self.chol.l_dirty(),
            Some(&self.weights),
            x,
        ))
    }

    /// Posterior means of `(b, J)` only; `O(n)` per call.
    pub fn mean_derivatives(&self, x: &[f64]) -> Result<(Vector, Matrix)> {
        self.check_query(x)?;
        let d = self.dim();
        let q = query_observables(self.kind(), d);
        let mut acc = Matrix::zeros(q.len(), self.weights.ncols());
        for (k, xk) in self.data.locations().iter().enumerate() {
            for (c, obs) in q.iter().enumerate() {
                let cov = covariance(Observable::VALUE, xk.as_slice(), *obs, x, &self.params);
                for m in 0..self.weights.ncols() {
                    acc[(c, m)] += cov * self.weights[(k, m)];
                }
            }
        }
        let mut b = Vector::zeros(d);
        let mut j = Matrix::zeros(d, d);
        match self.kind() {
            ObservationKind::Energy => {
                for i in 0..d {
                    b[i] = acc[(i, 0)];
                    for jj in 0..d {
                        j[(i, jj)] = acc[(d + i * d + jj, 0)];
                    }
                }
                j = (&j + j.transpose()) * 0.5;
            }
            ObservationKind::Force => {
                for i in 0..d {
                    b[i] = acc[(0, i)];
                    for jj in 0..d {
                        j[(i, jj)] = acc[(1 + jj, i)];
                    }
                }
            }
        }
        Ok((b, j))
    }

    /// Posterior mean of the observed quantity (energy, or each force
    /// component) and its latent variance.
    pub fn predict_value(&self, x: &[f64]) -> Result<(Vector, f64)> {
        self.check_query(x)?;
        let kx = Vector::from_iterator(
            self.data.len(),
            self.data
                .locations()
                .iter()
                .map(|xk| covariance(Observable::VALUE, xk.as_slice(), Observable::VALUE, x, &self.params)),
        );
        let mean = self.weights.tr_mul(&kx);
        let v = self
            .chol
            .l_dirty()
            .solve_lower_triangular(&kx)
            .expect("Cholesky factor has a positive diagonal");
        let var = (self.params.eta() - v.norm_squared()).max(0.0);
        Ok((mean, var))
    }

    /// A seeded realisation of `(b, J)` consistent with this posterior.
    pub fn sample_field_realization(&self, seed: u64) -> FieldSample<'_> {
        FieldSample::new(self, seed)
    }
}
