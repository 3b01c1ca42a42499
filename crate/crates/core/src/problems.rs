//! Analytic benchmark landscapes, noisy observation and a Newton-based
//! critical-point oracle for validating reported saddles.

use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};

use nalgebra::Schur;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::gpr::ObservationKind;
use crate::{Matrix, Vector};

type Evaluator = Box<dyn Fn(&[f64]) -> Vector + Send + Sync>;
type Derivatives = Box<dyn Fn(&[f64]) -> (Vector, Matrix) + Send + Sync>;

/// An expensive true model: its evaluator returns the energy (as a length-1
/// vector) or the force field, and every counted call goes through
/// [`Problem::observe`].
pub struct Problem {
    name: String,
    kind: ObservationKind,
    dim: usize,
    domain: Vec<(f64, f64)>,
    evaluator: Evaluator,
    analytic: Option<Derivatives>,
    evals: AtomicU64,
}

impl fmt::Debug for Problem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Problem")
            .field("name", &self.name)
            .field("kind", &self.kind)
            .field("dim", &self.dim)
            .field("domain", &self.domain)
            .field("evals", &self.eval_count())
            .finish()
    }
}

impl Problem {
    pub fn new<F>(name: &str, kind: ObservationKind, domain: Vec<(f64, f64)>, evaluator: F) -> Self
    where
        F: Fn(&[f64]) -> Vector + Send + Sync + 'static,
    {
        Problem {
            name: name.to_string(),
            kind,
            dim: domain.len(),
            domain,
            evaluator: Box::new(evaluator),
            analytic: None,
            evals: AtomicU64::new(0),
        }
    }

    /// Attaches exact `(b, J)`; otherwise derivatives use central differences.
    pub fn with_derivatives<F>(mut self, derivs: F) -> Self
    where
        F: Fn(&[f64]) -> (Vector, Matrix) + Send + Sync + 'static,
    {
        self.analytic = Some(Box::new(derivs));
        self
    }

    /// Gradient system with three minima and two index-1 saddles on
    /// `[-1, 7]^2`.
    pub fn example1() -> Self {
        Problem::new(
            "example1",
            ObservationKind::Energy,
            vec![(-1.0, 7.0); 2],
            |x| Vector::from_element(1, example1_energy(x)),
        )
        .with_derivatives(example1_derivatives)
    }

    /// Non-gradient 2-D field with two stable fixed points and one saddle.
    pub fn example2() -> Self {
        Problem::new(
            "example2",
            ObservationKind::Force,
            vec![(-1.0, 8.0); 2],
            example2_force,
        )
    }

    /// `u = (x1^2 - x2^2) / 2`: saddle at the origin with min-mode `e2`.
    pub fn quadratic_saddle() -> Self {
        Problem::new(
            "quadratic_saddle",
            ObservationKind::Energy,
            vec![(-2.0, 2.0); 2],
            |x| Vector::from_element(1, 0.5 * (x[0] * x[0] - x[1] * x[1])),
        )
        .with_derivatives(|x| {
            (
                Vector::from_vec(vec![-x[0], x[1]]),
                Matrix::from_diagonal(&Vector::from_vec(vec![-1.0, 1.0])),
            )
        })
    }

    pub fn by_name(name: &str) -> Option<Self> {
        match name {
            "example1" => Some(Problem::example1()),
            "example2" => Some(Problem::example2()),
            "quadratic_saddle" => Some(Problem::quadratic_saddle()),
            _ => None,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn kind(&self) -> ObservationKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn domain(&self) -> &[(f64, f64)] {
        &self.domain
    }

    /// Uncounted, noise-free evaluation.
    pub fn evaluate(&self, x: &[f64]) -> Vector {
        (self.evaluator)(x)
    }

    /// Counted evaluation with i.i.d. Gaussian noise of variance `noise_var`
    /// on every component.
    pub fn observe<R: Rng + ?Sized>(&self, x: &[f64], noise_var: f64, rng: &mut R) -> Vector {
        self.evals.fetch_add(1, Ordering::Relaxed);
        let mut y = self.evaluate(x);
        if noise_var > 0.0 {
            let sd = noise_var.sqrt();
            for v in y.iter_mut() {
                let z: f64 = StandardNormal.sample(rng);
                *v += sd * z;
            }
        }
        y
    }

    pub fn eval_count(&self) -> u64 {
        self.evals.load(Ordering::Relaxed)
    }

    pub fn reset_count(&self) {
        self.evals.store(0, Ordering::Relaxed);
    }

    /// Noise-free force `b` (uncounted).
    pub fn force(&self, x: &[f64]) -> Vector {
        match (&self.analytic, self.kind) {
            (Some(f), _) => f(x).0,
            (None, ObservationKind::Force) => self.evaluate(x),
            (None, ObservationKind::Energy) => {
                let grad = central_gradient(|y| self.evaluate(y)[0], x);
                -grad
            }
        }
    }

    /// Noise-free `(b, J)` (uncounted): analytic when attached, otherwise
    /// central differences of the force.
    pub fn derivatives(&self, x: &[f64]) -> (Vector, Matrix) {
        if let Some(f) = &self.analytic {
            return f(x);
        }
        let b = self.force(x);
        let j = fd_jacobian(|y| self.force(y), x);
        (b, j)
    }
}

/// Central-difference step for coordinate value `xi`.
pub fn fd_step(xi: f64) -> f64 {
    1e-4 * xi.abs().max(1.0)
}

fn central_gradient<F: Fn(&[f64]) -> f64>(f: F, x: &[f64]) -> Vector {
    let mut y = x.to_vec();
    Vector::from_fn(x.len(), |i, _| {
        let h = fd_step(x[i]);
        y[i] = x[i] + h;
        let fp = f(&y);
        y[i] = x[i] - h;
        let fm = f(&y);
        y[i] = x[i];
        (fp - fm) / (2.0 * h)
    })
}

/// Central-difference Jacobian, `(D f)_ij = d f_i / d x_j`.
pub fn fd_jacobian<F: FnMut(&[f64]) -> Vector>(mut f: F, x: &[f64]) -> Matrix {
    fd_jacobian_with_step(&mut f, x, fd_step)
}

pub(crate) fn fd_jacobian_with_step<F, H>(f: &mut F, x: &[f64], step: H) -> Matrix
where
    F: FnMut(&[f64]) -> Vector,
    H: Fn(f64) -> f64,
{
    let d = x.len();
    let mut jac = Matrix::zeros(d, d);
    let mut y = x.to_vec();
    for j in 0..d {
        let h = step(x[j]);
        y[j] = x[j] + h;
        let fp = f(&y);
        y[j] = x[j] - h;
        let fm = f(&y);
        y[j] = x[j];
        for i in 0..d {
            jac[(i, j)] = (fp[i] - fm[i]) / (2.0 * h);
        }
    }
    jac
}

const M1: [[f64; 2]; 2] = [[0.8, -0.2], [-0.2, 0.5]];
const A2: [[f64; 2]; 2] = [[0.8, -0.3], [-0.2, 0.5]];

/// `u(x) = x^T M x / 2 - 5 sum_i atan(x_i - 5)`.
pub fn example1_energy(x: &[f64]) -> f64 {
    let mut quad = 0.0;
    for i in 0..2 {
        for j in 0..2 {
            quad += x[i] * M1[i][j] * x[j];
        }
    }
    0.5 * quad - 5.0 * x.iter().map(|xi| (xi - 5.0).atan()).sum::<f64>()
}

/// Exact `b = -grad u` and `J = -hess u` for [`example1_energy`].
pub fn example1_derivatives(x: &[f64]) -> (Vector, Matrix) {
    let mut b = Vector::zeros(2);
    let mut j = Matrix::zeros(2, 2);
    for i in 0..2 {
        let s = x[i] - 5.0;
        let q = 1.0 + s * s;
        let grad = M1[i][0] * x[0] + M1[i][1] * x[1] - 5.0 / q;
        b[i] = -grad;
        for k in 0..2 {
            j[(i, k)] = -M1[i][k];
        }
        j[(i, i)] -= 10.0 * s / (q * q);
    }
    (b, j)
}

/// `b_i = -(A x)_i + 5 / (1 + (x_i - 5)^2)`.
///
/// With the `1/2` in front of `A x` the field has a single fixed point near
/// `(6.5, 6.9)`; without it the fixed points are `(0.59, 0.77)`,
/// `(1.80, 3.31)` and `(5.88, 6.25)`, the known benchmark layout.
pub fn example2_force(x: &[f64]) -> Vector {
    Vector::from_fn(2, |i, _| {
        let s = x[i] - 5.0;
        -(A2[i][0] * x[0] + A2[i][1] * x[1]) + 5.0 / (1.0 + s * s)
    })
}

/// A located critical point and its number of unstable directions.
#[derive(Clone, Debug, Serialize)]
pub struct CriticalPoint {
    pub point: Vec<f64>,
    pub index: usize,
}

/// Number of eigenvalues of `J` with positive real part, i.e. unstable
/// directions of `x' = b(x)`. For gradient systems this is the Morse index.
pub fn unstable_directions(j: &Matrix) -> usize {
    Schur::new(j.clone())
        .complex_eigenvalues()
        .iter()
        .filter(|l| l.re > 0.0)
        .count()
}

/// Newton's method on `b(x) = 0` from every node of a uniform
/// `grid_resolution^d` grid over the domain, deduplicated at `1e-4`.
pub fn oracle_critical_points(p: &Problem, grid_resolution: usize) -> Vec<CriticalPoint> {
    let d = p.dim();
    let g = grid_resolution.max(2);
    let mut roots: Vec<CriticalPoint> = Vec::new();
    let total = g.pow(d as u32);
    for flat in 0..total {
        let mut rem = flat;
        let seed: Vec<f64> = p
            .domain()
            .iter()
            .map(|&(lo, hi)| {
                let k = rem % g;
                rem /= g;
                lo + (hi - lo) * k as f64 / (g - 1) as f64
            })
            .collect();
        let Some(root) = newton(p, &seed) else {
            continue;
        };
        let inside = root
            .iter()
            .zip(p.domain())
            .all(|(v, &(lo, hi))| *v >= lo && *v <= hi);
        if !inside || roots.iter().any(|r| dist(&r.point, root.as_slice()) < 1e-4) {
            continue;
        }
        let (_, j) = p.derivatives(root.as_slice());
        roots.push(CriticalPoint {
            point: root.iter().copied().collect(),
            index: unstable_directions(&j),
        });
    }
    roots.sort_by(|a, b| {
        a.point
            .iter()
            .zip(&b.point)
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    roots
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

fn newton(p: &Problem, start: &[f64]) -> Option<Vector> {
    let mut x = Vector::from_column_slice(start);
    let span: f64 = p
        .domain()
        .iter()
        .map(|(lo, hi)| hi - lo)
        .fold(0.0, f64::max);
    for _ in 0..100 {
        let (b, j) = p.derivatives(x.as_slice());
        if b.norm() < 1e-11 {
            return Some(x);
        }
        let step = j.lu().solve(&b)?;
        x -= step;
        if !x.iter().all(|v| v.is_finite()) {
            return None;
        }
        let far = x
            .iter()
            .zip(p.domain())
            .any(|(v, &(lo, hi))| *v < lo - span || *v > hi + span);
        if far {
            return None;
        }
    }
    let (b, _) = p.derivatives(x.as_slice());
    (b.norm() < 1e-8).then_some(x)
}
