//! Sequentially conditioned realisations of `(b, J)`.
//!
//! A [`FieldSample`] behaves like one function drawn from the surrogate
//! posterior, revealed lazily: each evaluation draws the joint value at the
//! new point conditioned on the training data and on everything the handle
//! has already emitted. The Cholesky factor of all conditioning variables is
//! extended by one block per evaluation, so a path of `K` points costs
//! `O(K (n + K p)^2 p)` rather than a fresh factorisation per step.

use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{query_observables, GprModel, ObservationKind, BASE_JITTER, MAX_JITTER};
use crate::error::{check_dim, check_finite, Error, Result};
use crate::kernel::{covariance, DerivOp, Observable};
use crate::rng::{stream_rng, Stream};
use crate::{Matrix, Vector};

pub struct FieldSample<'m> {
    model: &'m GprModel,
    rng: ChaCha8Rng,
    /// Lower factor over training values followed by emitted variables.
    chol: Matrix,
    /// `L^-1 y` per output component.
    whitened: Vec<Vec<f64>>,
    emitted: Vec<(Vector, Observable)>,
    cache: Vec<(Vector, Vector, Matrix)>,
    ops: Vec<Observable>,
}

impl<'m> FieldSample<'m> {
    pub(super) fn new(model: &'m GprModel, seed: u64) -> Self {
        let chol = model.chol_l().lower_triangle();
        let y = model.data().label_matrix();
        let white = chol
            .solve_lower_triangular(&y)
            .expect("Cholesky factor has a positive diagonal");
        let whitened = (0..white.ncols())
            .map(|c| white.column(c).iter().copied().collect())
            .collect();
        let d = model.dim();
        let ops = match model.kind() {
            // J is symmetric: sample the upper triangle only
            ObservationKind::Energy => {
                let mut ops: Vec<Observable> = (0..d).map(Observable::force).collect();
                for i in 0..d {
                    for j in i..d {
                        ops.push(Observable::jacobian(i, j));
                    }
                }
                ops
            }
            ObservationKind::Force => query_observables(ObservationKind::Force, d),
        };
        FieldSample {
            model,
            rng: stream_rng(seed, Stream::Paths, 0),
            chol,
            whitened,
            emitted: Vec::new(),
            cache: Vec::new(),
            ops,
        }
    }

    /// Number of points evaluated so far (repeat points excluded).
    pub fn len(&self) -> usize {
        self.cache.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cache.is_empty()
    }

    /// Draws `(b, J)` at `z`.
    pub fn eval(&mut self, z: &[f64]) -> Result<(Vector, Matrix)> {
        let d = self.model.dim();
        check_dim(d, z.len())?;
        check_finite(z, "sample query point")?;
        if let Some((_, b, j)) = self.cache.iter().find(|(x, _, _)| x.as_slice() == z) {
            return Ok((b.clone(), j.clone()));
        }

        let params = self.model.params();
        let train = self.model.data().locations();
        let n_train = train.len();
        let n_total = self.chol.nrows();
        let p = self.ops.len();

        let mut cross = Matrix::zeros(n_total, p);
        for (c, op) in self.ops.iter().enumerate() {
            for (k, xk) in train.iter().enumerate() {
                cross[(k, c)] = covariance(Observable::VALUE, xk.as_slice(), *op, z, params);
            }
            for (k, (xe, oe)) in self.emitted.iter().enumerate() {
                cross[(n_train + k, c)] = covariance(*oe, xe.as_slice(), *op, z, params);
            }
        }
        let v = self
            .chol
            .solve_lower_triangular(&cross)
            .ok_or_else(|| Error::SurrogateUnusable("singular conditioning factor".into()))?;
        let prior = Matrix::from_fn(p, p, |a, b| covariance(self.ops[a], z, self.ops[b], z, params));
        let mut cond = &prior - v.tr_mul(&v);
        cond = (&cond + cond.transpose()) * 0.5;

        let scale = prior.diagonal().max();
        let mut rel = BASE_JITTER;
        let lc = loop {
            let mut cj = cond.clone();
            for i in 0..p {
                cj[(i, i)] += rel * scale;
            }
            if let Some(c) = cj.cholesky() {
                break c.unpack();
            }
            rel *= 10.0;
            if rel > MAX_JITTER * (1.0 + 1e-9) {
                return Err(Error::SurrogateUnusable(
                    "sample conditioning matrix is singular".into(),
                ));
            }
        };

        let mut values = Vec::with_capacity(self.whitened.len());
        for w in self.whitened.iter_mut() {
            let xi = Vector::from_fn(p, |_, _| StandardNormal.sample(&mut self.rng));
            let wv = Vector::from_column_slice(w);
            let mean = v.tr_mul(&wv);
            values.push(mean + &lc * &xi);
            w.extend(xi.iter());
        }

        let mut grown = Matrix::zeros(n_total + p, n_total + p);
        grown.view_mut((0, 0), (n_total, n_total)).copy_from(&self.chol);
        grown
            .view_mut((n_total, 0), (p, n_total))
            .copy_from(&v.transpose());
        grown.view_mut((n_total, n_total), (p, p)).copy_from(&lc);
        self.chol = grown;

        let zv = Vector::from_column_slice(z);
        for op in &self.ops {
            self.emitted.push((zv.clone(), *op));
        }

        let mut b = Vector::zeros(d);
        let mut jac = Matrix::zeros(d, d);
        match self.model.kind() {
            ObservationKind::Energy => {
                let vals = &values[0];
                for (c, op) in self.ops.iter().enumerate() {
                    match op.op {
                        DerivOp::First(i) => b[i] = vals[c],
                        DerivOp::Second(i, j) => {
                            jac[(i, j)] = vals[c];
                            jac[(j, i)] = vals[c];
                        }
                        DerivOp::Value => unreachable!(),
                    }
                }
            }
            ObservationKind::Force => {
                for (i, vals) in values.iter().enumerate() {
                    b[i] = vals[0];
                    for j in 0..d {
                        jac[(i, j)] = vals[1 + j];
                    }
                }
            }
        }
        self.cache.push((zv, b.clone(), jac.clone()));
        Ok((b, jac))
    }
}
