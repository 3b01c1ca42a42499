//! Independent oracles shared by the integration tests and the acceptance
//! target. Nothing here calls the closed-form derivative kernels: everything
//! is rebuilt from the scalar energy kernel by finite differences, or from
//! textbook scalar formulas.

#![allow(dead_code)]

use agpr_gad::kernel::{cross_blocks, energy_kernel, joint_blocks};
use agpr_gad::{KernelParams, Vector};

const H: f64 = 1e-4;

fn shifted(x: &[f64], i: usize, h: f64) -> Vec<f64> {
    let mut y = x.to_vec();
    y[i] += h;
    y
}

/// `d/dx_i f(x)` by central differences.
pub fn central<F: Fn(&[f64]) -> f64>(f: F, x: &[f64], i: usize) -> f64 {
    (f(&shifted(x, i, H)) - f(&shifted(x, i, -H))) / (2.0 * H)
}

/// Relative error measure `|a - b| / max(1, |b|)`.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1.0)
}

/// Largest discrepancies between the closed-form derivative covariances and
/// finite differences of lower-order ones, split into blocks obtained by one
/// difference (`u`-`b`, `b`-`b`, `b`-`J`) and by two (`u`-`J`, `J`-`J`).
pub fn kernel_fd_errors(x: &[f64], x2: &[f64], p: &KernelParams) -> (f64, f64) {
    let d = x.len();
    let xs2 = [Vector::from_column_slice(x2)];
    let cross = cross_blocks(x, &xs2, p).unwrap();
    let joint = joint_blocks(x, x2, p).unwrap();
    let mut first: f64 = 0.0;
    let mut second: f64 = 0.0;

    for i in 0..d {
        // Cov(u(x), b_i(x2)) = -d/dx2_i k(x, x2)
        let g = -central(|b: &[f64]| energy_kernel(x, b, p).unwrap(), x2, i);
        first = first.max(rel_err(cross.u_b[(0, i)], g));
        for j in 0..d {
            // Cov(u(x), J_ij(x2)) = -d2/dx2_i dx2_j k
            let h2 = -central(
                |b: &[f64]| central(|c: &[f64]| energy_kernel(x, c, p).unwrap(), b, j),
                x2,
                i,
            );
            second = second.max(rel_err(cross.u_j[(0, i * d + j)], h2));
        }
    }

    // one difference in x of Cov(u(x), .) gives Cov(-b_i(x), .)
    let u_b_at = |a: &[f64]| cross_blocks(a, &xs2, p).unwrap();
    for i in 0..d {
        for j in 0..d {
            let fd = -central(|a: &[f64]| u_b_at(a).u_b[(0, j)], x, i);
            first = first.max(rel_err(joint.bb[(i, j)], fd));
        }
        for a in 0..d * d {
            let fd = -central(|y: &[f64]| u_b_at(y).u_j[(0, a)], x, i);
            first = first.max(rel_err(joint.bj[(i, a)], fd));
        }
    }
    // J_ab = d_b b_a, so Cov(J_ab(x), .) = d/dx_b Cov(b_a(x), .)
    for a in 0..d {
        for b in 0..d {
            for c in 0..d * d {
                let fd = -central(
                    |y: &[f64]| -central(|z: &[f64]| u_b_at(z).u_j[(0, c)], y, a),
                    x,
                    b,
                );
                second = second.max(rel_err(joint.jj[(a * d + b, c)], -fd));
            }
        }
    }
    (first, second)
}

/// Scalar prior and posterior variances for the 1-d squared-exponential
/// kernel `eta exp(-r^2 / (2 l))`, written out by hand.
pub mod scalar {
    pub fn k(r: f64, eta: f64, l: f64) -> f64 {
        eta * (-r * r / (2.0 * l)).exp()
    }
    /// `Cov(u(z), b(x))` with `r = z - x`.
    pub fn k_ub(r: f64, eta: f64, l: f64) -> f64 {
        -(r / l) * k(r, eta, l)
    }
    /// `Cov(u(z), J(x))`, `J = -u''`.
    pub fn k_uj(r: f64, eta: f64, l: f64) -> f64 {
        -(r * r / (l * l) - 1.0 / l) * k(r, eta, l)
    }
    /// Prior variances of `b`, `J` and `Cov(b, J)` at one point.
    pub const fn prior_bj(eta: f64, l: f64) -> (f64, f64, f64) {
        (eta / l, 3.0 * eta / (l * l), 0.0)
    }
}
