//! Simultaneous perturbation stochastic approximation, ascent form.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::DesignBatch;
use crate::rng::{stream_rng, Stream};

/// Gain schedule `a_j = a / (A + j + 1)^alpha`, `c_j = c / (j + 1)^gamma`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpsaParams {
    pub a: f64,
    pub big_a: f64,
    pub alpha: f64,
    pub c: f64,
    pub gamma: f64,
    pub iters: usize,
    pub seed: u64,
}

impl Default for SpsaParams {
    fn default() -> Self {
        SpsaParams {
            a: 0.05,
            big_a: 100.0,
            alpha: 0.602,
            c: 1.0,
            gamma: 0.101,
            iters: 100,
            seed: 0,
        }
    }
}

impl SpsaParams {
    pub fn step_gain(&self, j: usize) -> f64 {
        self.a / (self.big_a + j as f64 + 1.0).powf(self.alpha)
    }

    pub fn perturbation_gain(&self, j: usize) -> f64 {
        self.c / (j as f64 + 1.0).powf(self.gamma)
    }

    pub fn validate(&self) -> Result<(), String> {
        let gains = [self.a, self.alpha, self.c, self.gamma];
        if gains.iter().all(|g| *g > 0.0 && g.is_finite()) && self.big_a >= 0.0 {
            Ok(())
        } else {
            Err(format!("SPSA gains must be positive: {self:?}"))
        }
    }
}

#[derive(Clone, Debug)]
pub struct SpsaOutcome {
    pub best: DesignBatch,
    pub best_value: f64,
    /// Iterations dropped because a perturbed objective was not finite.
    pub skipped: usize,
}

/// Maximises `objective` from `start` and returns the best iterate seen.
pub fn spsa_maximize<F>(mut objective: F, start: &DesignBatch, p: &SpsaParams) -> SpsaOutcome
where
    F: FnMut(&DesignBatch) -> f64,
{
    let dim = start.dim();
    let mut theta = start.flatten();
    let mut best = start.clone();
    let mut best_value = objective(start);
    let mut skipped = 0;
    let mut rng = stream_rng(p.seed, Stream::Spsa, 0);

    for j in 0..p.iters {
        let ak = p.step_gain(j);
        let ck = p.perturbation_gain(j);
        let delta: Vec<f64> = (0..theta.len())
            .map(|_| if rng.random_bool(0.5) { 1.0 } else { -1.0 })
            .collect();
        let plus: Vec<f64> = theta.iter().zip(&delta).map(|(t, d)| t + ck * d).collect();
        let minus: Vec<f64> = theta.iter().zip(&delta).map(|(t, d)| t - ck * d).collect();
        let yp = objective(&DesignBatch::from_flat(&plus, dim));
        let ym = objective(&DesignBatch::from_flat(&minus, dim));
        if !(yp.is_finite() && ym.is_finite()) {
            skipped += 1;
            continue;
        }
        let diff = (yp - ym) / (2.0 * ck);
        for (t, d) in theta.iter_mut().zip(&delta) {
            *t += ak * diff / d;
        }
        let current = DesignBatch::from_flat(&theta, dim);
        let value = objective(&current);
        if value.is_finite() && !(value <= best_value) {
            best_value = value;
            best = current;
        }
    }
    SpsaOutcome {
        best,
        best_value,
        skipped,
    }
}
