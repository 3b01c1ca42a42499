//! Posterior variances of `(b, J)` conditioned on a candidate batch only.
//!
//! The historical training set is dropped, so the cost per batch is one
//! `N_D x N_D` factorisation plus `O(N_D^2)` per query point, independent
//! of how much data has been collected.

use nalgebra::{Cholesky, Dyn};

use super::{condition_at, factor_with_jitter, gram, near_duplicates, ObservationKind};
use crate::error::{check_dim, check_finite, Error, Result};
use crate::kernel::KernelParams;
use crate::{Matrix, Vector};

#[derive(Clone, Debug)]
pub struct FastVariance {
    pub var_b: Vector,
    pub var_j: Matrix,
    /// Entry `(i, j)` is `Cov(b_i, J_ji)`.
    pub cov_bj: Matrix,
    /// `jcol_cov[i]` has entries `Cov(J_ji, J_ki)`.
    pub jcol_cov: Vec<Matrix>,
}

/// A factorised design batch, reusable across many query points.
#[derive(Clone, Debug)]
pub struct DesignConditioner {
    params: KernelParams,
    kind: ObservationKind,
    points: Vec<Vector>,
    chol: Cholesky<f64, Dyn>,
}

impl DesignConditioner {
    pub fn new(params: KernelParams, kind: ObservationKind, points: &[Vector]) -> Result<Self> {
        let Some(first) = points.first() else {
            return Err(Error::EmptyDataset);
        };
        for x in points {
            check_dim(first.len(), x.len())?;
            check_finite(x.as_slice(), "design point")?;
        }
        let k = gram(points, &params);
        let (chol, _) = factor_with_jitter(&k, params.noise_var(), params.eta()).ok_or_else(|| {
            Error::IllConditioned {
                pairs: near_duplicates(points, &params),
            }
        })?;
        Ok(DesignConditioner {
            params,
            kind,
            points: points.to_vec(),
            chol,
        })
    }

    pub fn dim(&self) -> usize {
        self.points[0].len()
    }

    pub fn variances(&self, z: &[f64]) -> Result<FastVariance> {
        check_dim(self.dim(), z.len())?;
        check_finite(z, "query point")?;
        let post = condition_at(
            self.kind,
            &self.params,
            &self.points,
            self.chol.l_dirty(),
            None,
            z,
        );
        Ok(FastVariance {
            var_b: post.var_b,
            var_j: post.var_j,
            cov_bj: post.cov_bj,
            jcol_cov: post.jcol_cov,
        })
    }
}

pub fn fast_posterior_variance(
    params: &KernelParams,
    kind: ObservationKind,
    design: &[Vector],
    z: &[f64],
) -> Result<FastVariance> {
    DesignConditioner::new(*params, kind, design)?.variances(z)
}
