//! Single-direction gentlest ascent dynamics and the surrogate-driven loop.
//!
//! The continuous system is
//!
//! ```text
//! x' = b(x) - 2 <b(x), v> v / |v|^2
//! v' = J(x) v - <v, J(x) v> v
//! ```
//!
//! advanced by forward Euler. `run_reference_gad` drives it with a true
//! derivative source, `run_agpr_gad` with the posterior mean of a GP
//! surrogate that is retrained whenever its uncertainty at the walker
//! exceeds a threshold.

use log::{debug, info, warn};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::design::{
    fit_lin_coeffs, propose_design, reliability_check, ActiveLearningConfig, LinCoeffs,
    Reliability,
};
use crate::error::{check_dim, check_finite, Error, Result};
use crate::gpr::{optimize_hyperparams, Dataset, GprModel, MleOptions, ObservationKind};
use crate::kernel::KernelParams;
use crate::problems::{fd_jacobian_with_step, fd_step, Problem};
use crate::rng::{stream_rng, sub_seed, Stream};
use crate::{Matrix, Vector};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GadState {
    pub x: Vector,
    /// Unit direction.
    pub v: Vector,
    pub step: usize,
}

impl GadState {
    /// Normalises `v`; a zero or non-finite direction is rejected.
    pub fn new(x: Vector, v: Vector) -> Result<Self> {
        check_dim(x.len(), v.len())?;
        check_finite(x.as_slice(), "position")?;
        check_finite(v.as_slice(), "direction")?;
        let norm = v.norm();
        if !(norm > 0.0) {
            return Err(Error::InvalidParameter("direction must be nonzero".into()));
        }
        Ok(GadState {
            x,
            v: v / norm,
            step: 0,
        })
    }

    pub fn dim(&self) -> usize {
        self.x.len()
    }
}

/// The all-ones direction rotated in the `(0, 1)` plane by an angle drawn
/// from `seed`. In one dimension this is just `+1` or `-1`.
pub fn seeded_default_direction(dim: usize, seed: u64) -> Vector {
    let mut rng = stream_rng(seed, Stream::Direction, 0);
    let mut v = Vector::from_element(dim, 1.0 / (dim as f64).sqrt());
    if dim == 1 {
        if rng.random_bool(0.5) {
            v[0] = -1.0;
        }
        return v;
    }
    let theta = rng.random_range(0.0..std::f64::consts::TAU);
    let (s, c) = theta.sin_cos();
    let (a, b) = (v[0], v[1]);
    v[0] = c * a - s * b;
    v[1] = s * a + c * b;
    v
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GadConfig {
    pub dt: f64,
    pub tol: f64,
    pub t_max: usize,
}

impl GadConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::InvalidParameter(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.tol > 0.0) {
            return Err(Error::InvalidParameter(format!("tol must be positive, got {}", self.tol)));
        }
        if self.t_max == 0 {
            return Err(Error::InvalidParameter("t_max must be >= 1".into()));
        }
        Ok(())
    }
}

/// One queried design point and the label the true model returned.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DesignRecord {
    /// 0 for the initial data, `k` for the `k`-th active-learning update.
    pub update: usize,
    pub point: Vector,
    pub label: Vector,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GadResult {
    pub x_sp: Vector,
    pub trajectory: Vec<GadState>,
    pub converged: bool,
    pub cost: u64,
    pub updates: usize,
    pub designs: Vec<DesignRecord>,
    /// Hyperparameters of the final surrogate, if one was used.
    pub final_params: Option<KernelParams>,
}

impl GadResult {
    pub fn final_state(&self) -> &GadState {
        self.trajectory.last().expect("trajectory holds the start state")
    }
}

/// One forward-Euler step followed by renormalisation of `v`.
pub fn gad_step(state: &GadState, b: &Vector, j: &Matrix, dt: f64) -> Result<GadState> {
    let d = state.dim();
    check_dim(d, b.len())?;
    check_dim(d, j.nrows())?;
    check_dim(d, j.ncols())?;
    let v = &state.v;
    let vv = v.norm_squared();
    let bv = b.dot(v);
    let x_new = &state.x + (b - v * (2.0 * bv / vv)) * dt;
    let jv = j * v;
    let v_raw = v + (&jv - v * v.dot(&jv)) * dt;
    let norm = v_raw.norm();
    let next = GadState {
        x: x_new,
        v: v_raw / norm,
        step: state.step + 1,
    };
    let finite = next.x.iter().chain(next.v.iter()).all(|c| c.is_finite());
    if !finite || !(norm > 0.0) {
        return Err(Error::Divergence {
            state: Box::new(state.clone()),
            trajectory: Vec::new(),
        });
    }
    Ok(next)
}

/// `|x_c - x_p| + |v_c - v_p| < tol`.
pub fn check_convergence(prev: &GadState, curr: &GadState, tol: f64) -> bool {
    (&curr.x - &prev.x).norm() + (&curr.v - &prev.v).norm() < tol
}

/// Anything that can report `(b, J)` at a point.
pub trait DerivativeSource {
    fn derivatives(&mut self, x: &[f64]) -> Result<(Vector, Matrix)>;
}

/// Noise-free derivatives of a problem: analytic when available, central
/// differences of the force otherwise.
pub struct ExactDerivatives<'a>(pub &'a Problem);

impl DerivativeSource for ExactDerivatives<'_> {
    fn derivatives(&mut self, x: &[f64]) -> Result<(Vector, Matrix)> {
        Ok(self.0.derivatives(x))
    }
}

/// Force from one counted (noisy) observation and the Jacobian from `2d`
/// more, by central differences. Requires a force-observed problem.
pub struct NoisyFiniteDifference<'a> {
    problem: &'a Problem,
    noise_var: f64,
    min_step: f64,
    rng: ChaCha8Rng,
}

impl<'a> NoisyFiniteDifference<'a> {
    /// `min_step` lower-bounds the usual relative step, so noisy runs can
    /// use a difference step above the noise floor.
    pub fn new(problem: &'a Problem, noise_var: f64, min_step: f64, seed: u64) -> Result<Self> {
        if problem.kind() != ObservationKind::Force {
            return Err(Error::InvalidParameter(
                "finite-difference source needs a force-observed problem".into(),
            ));
        }
        Ok(NoisyFiniteDifference {
            problem,
            noise_var,
            min_step,
            rng: stream_rng(seed, Stream::Noise, 0),
        })
    }

    /// Number of true-model evaluations per call.
    pub fn evaluations_per_call(&self) -> u64 {
        1 + 2 * self.problem.dim() as u64
    }
}

impl DerivativeSource for NoisyFiniteDifference<'_> {
    fn derivatives(&mut self, x: &[f64]) -> Result<(Vector, Matrix)> {
        let (problem, noise, rng) = (self.problem, self.noise_var, &mut self.rng);
        let b = problem.observe(x, noise, rng);
        let min_step = self.min_step;
        let j = fd_jacobian_with_step(
            &mut |y: &[f64]| problem.observe(y, noise, rng),
            x,
            |xi| fd_step(xi).max(min_step),
        );
        Ok((b, j))
    }
}

/// Posterior mean of a fitted surrogate.
pub struct SurrogateMean<'a>(pub &'a GprModel);

impl DerivativeSource for SurrogateMean<'_> {
    fn derivatives(&mut self, x: &[f64]) -> Result<(Vector, Matrix)> {
        self.0.mean_derivatives(x)
    }
}

/// Plain GAD on a derivative source; `cost` is the number of source calls.
pub fn run_reference_gad<S: DerivativeSource>(
    source: &mut S,
    start: &GadState,
    cfg: &GadConfig,
) -> Result<GadResult> {
    cfg.validate()?;
    let mut trajectory = vec![start.clone()];
    let mut state = start.clone();
    let mut cost = 0u64;
    let mut converged = false;
    for _ in 0..cfg.t_max {
        let (b, j) = source.derivatives(state.x.as_slice())?;
        cost += 1;
        let next = match gad_step(&state, &b, &j, cfg.dt) {
            Ok(next) => next,
            Err(Error::Divergence { state, .. }) => {
                return Err(Error::Divergence { state, trajectory });
            }
            Err(e) => return Err(e),
        };
        let done = check_convergence(&state, &next, cfg.tol);
        trajectory.push(next.clone());
        state = next;
        if done {
            converged = true;
            break;
        }
    }
    Ok(GadResult {
        x_sp: state.x.clone(),
        trajectory,
        converged,
        cost,
        updates: 0,
        designs: Vec::new(),
        final_params: None,
    })
}

struct Learner<'a> {
    problem: &'a Problem,
    al: &'a ActiveLearningConfig,
    seed: u64,
    noise_rng: ChaCha8Rng,
    designs: Vec<DesignRecord>,
    model: GprModel,
}

impl Learner<'_> {
    fn mle_options(&self, budget: usize, index: u64) -> MleOptions {
        MleOptions {
            budget,
            seed: sub_seed(self.seed, 1000 + index),
            noise_free: self.al.noise_var == 0.0,
            starts: 1,
        }
    }

    fn label_into(
        problem: &Problem,
        al: &ActiveLearningConfig,
        rng: &mut ChaCha8Rng,
        data: &mut Dataset,
        designs: &mut Vec<DesignRecord>,
        points: Vec<Vector>,
        update: usize,
    ) -> Result<()> {
        for p in points {
            let y = problem.observe(p.as_slice(), al.noise_var, rng);
            if !y.iter().all(|v| v.is_finite()) {
                data.record_discarded(1);
                warn!("true model returned a non-finite label at {:?}", p.as_slice());
                continue;
            }
            designs.push(DesignRecord {
                update,
                point: p.clone(),
                label: y.clone(),
            });
            data.push(p, y)?;
        }
        Ok(())
    }

    /// Queries `points`, appends them and retrains with a warm-started MLE.
    fn update(&mut self, points: Vec<Vector>, update: usize) -> Result<()> {
        let mut data = self.model.data().clone();
        Self::label_into(
            self.problem,
            self.al,
            &mut self.noise_rng,
            &mut data,
            &mut self.designs,
            points,
            update,
        )?;
        let old = *self.model.params();
        let opts = self.mle_options(self.al.mle_refit_budget, update as u64);
        let fit = optimize_hyperparams(&data, old, &opts);
        self.model = match GprModel::fit(data.clone(), fit.params) {
            Ok(m) => m,
            Err(e) => {
                warn!("refit with new hyperparameters failed ({e}); keeping previous ones");
                fit_with_nugget(data, old)?
            }
        };
        debug!(
            "update {update}: n = {}, eta = {:.4e}, l = {:.4e}, noise = {:.3e}",
            self.model.data().len(),
            self.model.params().eta(),
            self.model.params().length(),
            self.model.params().noise_var()
        );
        Ok(())
    }
}

/// Fits at `params`, retrying with a noise floor of `NUGGET * eta` when
/// nearly coincident designs make the noise-free Gram matrix singular.
fn fit_with_nugget(data: Dataset, params: KernelParams) -> Result<GprModel> {
    match GprModel::fit(data.clone(), params) {
        Ok(m) => Ok(m),
        Err(Error::IllConditioned { pairs }) if params.noise_var() < NUGGET * params.eta() => {
            warn!("near-coincident designs {pairs:?}; adding a nugget");
            let p = KernelParams::new(params.eta(), params.length(), NUGGET * params.eta())?;
            GprModel::fit(data, p)
        }
        Err(e) => Err(e),
    }
}

const NUGGET: f64 = 1e-6;

fn initial_params(labels: &[Vector], noise_free: bool) -> Result<KernelParams> {
    let values: Vec<f64> = labels.iter().flat_map(|y| y.iter().copied()).collect();
    let n = values.len() as f64;
    let mean_sq = values.iter().map(|v| v * v).sum::<f64>() / n;
    let mean = values.iter().sum::<f64>() / n;
    let var = (mean_sq - mean * mean).max(0.0);
    let eta = mean_sq.max(1e-6);
    let noise = if noise_free { 0.0 } else { (0.1 * var).max(1e-6) };
    KernelParams::new(eta, 1.0, noise)
}

/// Surrogate-driven GAD with active learning. `cost` is the number of
/// true-model evaluations, `N0 + updates * N_D` when no label is discarded.
pub fn run_agpr_gad(
    problem: &Problem,
    start: &GadState,
    cfg: &GadConfig,
    al: &ActiveLearningConfig,
    seed: u64,
) -> Result<GadResult> {
    cfg.validate()?;
    al.validate().map_err(Error::Config)?;
    let d = problem.dim();
    check_dim(d, start.dim())?;

    let mut init_rng = stream_rng(seed, Stream::InitData, 0);
    let spread = al.init_spread.sqrt();
    let initial: Vec<Vector> = (0..al.n0)
        .map(|_| {
            Vector::from_fn(d, |i, _| {
                let z: f64 = StandardNormal.sample(&mut init_rng);
                start.x[i] + spread * z
            })
        })
        .collect();
    let mut lo = start.x.clone();
    let mut hi = start.x.clone();
    for p in &initial {
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    let guard_radius = 10.0 * (&hi - &lo).norm().max(f64::MIN_POSITIVE);

    let mut noise_rng = stream_rng(seed, Stream::Noise, 0);
    let mut data = Dataset::new(problem.kind(), d);
    let mut designs = Vec::new();
    Learner::label_into(problem, al, &mut noise_rng, &mut data, &mut designs, initial, 0)?;
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let init = initial_params(data.labels(), al.noise_var == 0.0)?;
    let opts = MleOptions {
        budget: al.mle_budget,
        seed: sub_seed(seed, 1000),
        noise_free: al.noise_var == 0.0,
        starts: al.mle_starts,
    };
    let fit = optimize_hyperparams(&data, init, &opts);
    let model = GprModel::fit(data, fit.params)?;
    let mut learner = Learner {
        problem,
        al,
        seed,
        noise_rng,
        designs,
        model,
    };

    let mut trajectory = vec![start.clone()];
    let mut state = start.clone();
    // positions x^(t), x^(t-1), x^(t-2) and the means used at the two earlier ones
    let mut positions: Vec<Vector> = vec![start.x.clone()];
    let mut means: Vec<(Vector, Matrix)> = Vec::new();
    let mut updates = 0usize;
    let mut converged = false;
    let mut forced_last = false;

    for _ in 0..cfg.t_max {
        let (b, j) = learner.model.mean_derivatives(state.x.as_slice())?;
        let stepped = gad_step(&state, &b, &j, cfg.dt)
            .ok()
            .filter(|n| (&n.x - &start.x).norm() <= guard_radius);
        let Some(next) = stepped else {
            if forced_last {
                warn!("surrogate diverged again after a forced update; aborting");
                break;
            }
            if updates >= al.max_updates {
                warn!("update budget exhausted at step {}", state.step);
                break;
            }
            info!("surrogate step diverged at step {}; forcing an update", state.step);
            let coeffs = LinCoeffs::fallback(d);
            updates += 1;
            let batch = propose_design(
                &learner.model,
                &state.x,
                &state.v,
                &coeffs,
                al,
                sub_seed(seed, updates as u64),
            )?;
            learner.update(batch.into_points(), updates)?;
            forced_last = true;
            continue;
        };
        forced_last = false;
        means.push((b, j));
        positions.push(next.x.clone());
        if means.len() > 2 {
            means.remove(0);
            positions.remove(0);
        }
        let done = check_convergence(&state, &next, cfg.tol);
        trajectory.push(next.clone());
        state = next;
        if done {
            converged = true;
            break;
        }

        let coeffs = if means.len() == 2 {
            fit_lin_coeffs(
                [&positions[2], &positions[1], &positions[0]],
                [&means[1].0, &means[0].0],
                [&means[1].1, &means[0].1],
                cfg.dt,
            )
        } else {
            LinCoeffs::fallback(d)
        };
        let post = learner.model.predict_derivatives(state.x.as_slice())?;
        if reliability_check(&post, &coeffs, al.sigma_sur) == Reliability::Unreliable {
            if updates >= al.max_updates {
                warn!("update budget exhausted at step {}", state.step);
                break;
            }
            updates += 1;
            debug!(
                "step {}: surrogate unreliable at {:?}, update {updates} (var_b {:?}, var_j {:?}, alpha {:.3}, beta {:?})",
                state.step,
                state.x.as_slice(),
                post.var_b.as_slice(),
                post.var_j.as_slice(),
                coeffs.alpha,
                coeffs.beta
            );
            let batch = propose_design(
                &learner.model,
                &state.x,
                &state.v,
                &coeffs,
                al,
                sub_seed(seed, updates as u64),
            )?;
            learner.update(batch.into_points(), updates)?;
        }
    }

    Ok(GadResult {
        x_sp: state.x.clone(),
        trajectory,
        converged,
        cost: learner.model.data().eval_count(),
        updates,
        designs: learner.designs,
        final_params: Some(*learner.model.params()),
    })
}
