//! Squared-exponential kernel
//!
//! ```text
//! k(x, x') = eta * exp(-|x - x'|^2 / (2 l))
//! ```
//!
//! Note the denominator is `2 l`, not `2 l^2`: the length parameter `l` has
//! units of squared length, so the correlation distance is `sqrt(l)`.
//!
//! The surrogate lives on the energy `u`; the force and Jacobian are
//! `b = -grad u` and `J = -hess u`. Every covariance between linear
//! functionals of `u` is obtained from the closed-form derivatives of
//! `exp(-s |r|^2 / 2)` with `s = 1 / l` and `r = x - x'`:
//!
//! ```text
//! Cov(D^a u(x), D^b u(x')) = (-1)^|b| d^(a+b) g(r)
//! ```
//!
//! and the sign of `b`/`J` is applied on top of that.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, check_finite, Error, Result};
use crate::{Matrix, Vector};

/// Kernel hyperparameters, stored as logarithms so that unconstrained
/// optimisation cannot leave the admissible region. A noise variance of zero
/// is represented by `log_noise = -inf`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    log_eta: f64,
    log_length: f64,
    log_noise: f64,
}

impl KernelParams {
    pub fn new(eta: f64, length: f64, noise_var: f64) -> Result<Self> {
        if !(eta > 0.0 && eta.is_finite()) {
            return Err(Error::InvalidParameter(format!("eta must be positive, got {eta}")));
        }
        if !(length > 0.0 && length.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "length must be positive, got {length}"
            )));
        }
        if !(noise_var >= 0.0 && noise_var.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "noise variance must be nonnegative, got {noise_var}"
            )));
        }
        Ok(KernelParams {
            log_eta: eta.ln(),
            log_length: length.ln(),
            log_noise: noise_var.ln(),
        })
    }

    /// `log_noise` may be `-inf` (noise-free).
    pub fn from_log(log_eta: f64, log_length: f64, log_noise: f64) -> Self {
        KernelParams {
            log_eta,
            log_length,
            log_noise,
        }
    }

    pub fn eta(&self) -> f64 {
        self.log_eta.exp()
    }

    pub fn length(&self) -> f64 {
        self.log_length.exp()
    }

    pub fn noise_var(&self) -> f64 {
        self.log_noise.exp()
    }

    pub fn log_eta(&self) -> f64 {
        self.log_eta
    }

    pub fn log_length(&self) -> f64 {
        self.log_length
    }

    pub fn log_noise(&self) -> f64 {
        self.log_noise
    }

    pub fn with_eta(self, eta: f64) -> Self {
        KernelParams {
            log_eta: eta.ln(),
            ..self
        }
    }

    pub fn with_noise_var(self, noise_var: f64) -> Self {
        KernelParams {
            log_noise: noise_var.ln(),
            ..self
        }
    }

    pub(crate) fn inv_length(&self) -> f64 {
        (-self.log_length).exp()
    }
}

/// A linear differential operator applied to the underlying scalar field.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum DerivOp {
    Value,
    First(usize),
    Second(usize, usize),
}

impl DerivOp {
    pub fn order(&self) -> usize {
        match self {
            DerivOp::Value => 0,
            DerivOp::First(_) => 1,
            DerivOp::Second(..) => 2,
        }
    }

    fn push_indices(&self, out: &mut [usize; 4], len: &mut usize) {
        match *self {
            DerivOp::Value => {}
            DerivOp::First(i) => {
                out[*len] = i;
                *len += 1;
            }
            DerivOp::Second(i, j) => {
                out[*len] = i;
                out[*len + 1] = j;
                *len += 2;
            }
        }
    }
}

/// A signed derivative of the latent field, e.g. `b_i = -d_i u`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Observable {
    pub op: DerivOp,
    pub sign: f64,
}

impl Observable {
    /// The latent field itself (`u` in energy mode, one force component in
    /// force mode).
    pub const VALUE: Observable = Observable {
        op: DerivOp::Value,
        sign: 1.0,
    };

    /// `b_i = -d_i u`
    pub fn force(i: usize) -> Self {
        Observable {
            op: DerivOp::First(i),
            sign: -1.0,
        }
    }

    /// `J_ij = -d_i d_j u`
    pub fn jacobian(i: usize, j: usize) -> Self {
        Observable {
            op: DerivOp::Second(i, j),
            sign: -1.0,
        }
    }

    /// `d_j f` for a directly observed component `f` (force mode).
    pub fn derivative(j: usize) -> Self {
        Observable {
            op: DerivOp::First(j),
            sign: 1.0,
        }
    }
}

#[inline]
fn kd(i: usize, j: usize) -> f64 {
    if i == j {
        1.0
    } else {
        0.0
    }
}

/// Mixed partial derivative `d^idx exp(-s |r|^2 / 2)` for up to four indices.
pub(crate) fn se_derivative(r: &[f64], s: f64, idx: &[usize]) -> f64 {
    let sq: f64 = r.iter().map(|v| v * v).sum();
    let e = (-0.5 * s * sq).exp();
    let poly = match *idx {
        [] => 1.0,
        [i] => -s * r[i],
        [i, j] => s * s * r[i] * r[j] - s * kd(i, j),
        [i, j, k] => {
            -s * s * s * r[i] * r[j] * r[k]
                + s * s * (kd(i, j) * r[k] + kd(i, k) * r[j] + kd(j, k) * r[i])
        }
        [i, j, k, l] => {
            let s2 = s * s;
            let s3 = s2 * s;
            s2 * s2 * r[i] * r[j] * r[k] * r[l]
                - s3 * (kd(i, j) * r[k] * r[l]
                    + kd(i, k) * r[j] * r[l]
                    + kd(i, l) * r[j] * r[k]
                    + kd(j, k) * r[i] * r[l]
                    + kd(j, l) * r[i] * r[k]
                    + kd(k, l) * r[i] * r[j])
                + s2 * (kd(i, j) * kd(k, l) + kd(i, k) * kd(j, l) + kd(i, l) * kd(j, k))
        }
        _ => unreachable!("at most fourth-order derivatives are supported"),
    };
    poly * e
}

/// Covariance between observable `a` at `x` and observable `b` at `x2`.
/// Inputs are assumed to have matching dimension.
pub fn covariance(a: Observable, x: &[f64], b: Observable, x2: &[f64], p: &KernelParams) -> f64 {
    debug_assert_eq!(x.len(), x2.len());
    let mut idx = [0usize; 4];
    let mut len = 0;
    a.op.push_indices(&mut idx, &mut len);
    b.op.push_indices(&mut idx, &mut len);
    let parity = if b.op.order() % 2 == 1 { -1.0 } else { 1.0 };
    let s = p.inv_length();
    let r = Diff::new(x, x2);
    a.sign * b.sign * parity * p.eta() * se_derivative(r.as_slice(), s, &idx[..len])
}

/// `x - x2` without a heap allocation for the dimensions we care about.
struct Diff {
    buf: [f64; 8],
    heap: Vec<f64>,
    len: usize,
}

impl Diff {
    fn new(x: &[f64], x2: &[f64]) -> Self {
        let len = x.len();
        let mut buf = [0.0; 8];
        let mut heap = Vec::new();
        if len <= 8 {
            for k in 0..len {
                buf[k] = x[k] - x2[k];
            }
        } else {
            heap = x.iter().zip(x2).map(|(a, b)| a - b).collect();
        }
        Diff { buf, heap, len }
    }

    fn as_slice(&self) -> &[f64] {
        if self.len <= 8 {
            &self.buf[..self.len]
        } else {
            &self.heap
        }
    }
}

fn validate_pair(x: &[f64], x2: &[f64]) -> Result<()> {
    if x.is_empty() {
        return Err(Error::InvalidParameter("points must have dimension >= 1".into()));
    }
    check_dim(x.len(), x2.len())?;
    check_finite(x, "kernel input")?;
    check_finite(x2, "kernel input")
}

pub fn energy_kernel(x: &[f64], x2: &[f64], p: &KernelParams) -> Result<f64> {
    validate_pair(x, x2)?;
    Ok(covariance(Observable::VALUE, x, Observable::VALUE, x2, p))
}

/// Covariances between `u(x)` and the force / Jacobian at each point of `xs`.
#[derive(Clone, Debug)]
pub struct CrossBlocks {
    /// Row `k`: `Cov(u(x), b_i(xs[k]))`, `i = 0..d`.
    pub u_b: Matrix,
    /// Row `k`: `Cov(u(x), J_ij(xs[k]))` with `J` flattened row-major.
    pub u_j: Matrix,
}

pub fn cross_blocks(x: &[f64], xs: &[Vector], p: &KernelParams) -> Result<CrossBlocks> {
    let d = x.len();
    let mut u_b = Matrix::zeros(xs.len(), d);
    let mut u_j = Matrix::zeros(xs.len(), d * d);
    for (k, xk) in xs.iter().enumerate() {
        validate_pair(x, xk.as_slice())?;
        for i in 0..d {
            u_b[(k, i)] = covariance(Observable::VALUE, x, Observable::force(i), xk.as_slice(), p);
            for j in 0..d {
                u_j[(k, i * d + j)] =
                    covariance(Observable::VALUE, x, Observable::jacobian(i, j), xk.as_slice(), p);
            }
        }
    }
    Ok(CrossBlocks { u_b, u_j })
}

/// Covariances between `(b, J)` at `x` and `(b, J)` at `x2`.
#[derive(Clone, Debug)]
pub struct JointBlocks {
    /// `d x d`
    pub bb: Matrix,
    /// `d x d^2`
    pub bj: Matrix,
    /// `d^2 x d^2`
    pub jj: Matrix,
}

pub fn joint_blocks(x: &[f64], x2: &[f64], p: &KernelParams) -> Result<JointBlocks> {
    validate_pair(x, x2)?;
    let d = x.len();
    let jac = |a: usize| Observable::jacobian(a / d, a % d);
    let bb = Matrix::from_fn(d, d, |i, j| {
        covariance(Observable::force(i), x, Observable::force(j), x2, p)
    });
    let bj = Matrix::from_fn(d, d * d, |i, a| covariance(Observable::force(i), x, jac(a), x2, p));
    let jj = Matrix::from_fn(d * d, d * d, |a, c| covariance(jac(a), x, jac(c), x2, p));
    Ok(JointBlocks { bb, bj, jj })
}
