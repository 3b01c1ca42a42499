//! GAD paths driven by sampled surrogate fields.

use crate::error::{check_dim, check_finite, Error, Result};
use crate::gad::{gad_step, GadState};
use crate::gpr::GprModel;
use crate::rng::sub_seed;
use crate::Vector;

/// `n` sampled paths, each holding the states `z^0 .. z^{K-1}` at which
/// transition entropies are evaluated. Paths that left the finite range are
/// truncated, so some may be shorter than `K`.
#[derive(Clone, Debug)]
pub struct PriorPathSet {
    paths: Vec<Vec<Vector>>,
    horizon: usize,
}

impl PriorPathSet {
    pub fn new(paths: Vec<Vec<Vector>>, horizon: usize) -> Result<Self> {
        if paths.is_empty() || paths.iter().any(|p| p.is_empty()) {
            return Err(Error::InvalidParameter("paths must be nonempty".into()));
        }
        let d = paths[0][0].len();
        for z in paths.iter().flatten() {
            check_dim(d, z.len())?;
            check_finite(z.as_slice(), "path point")?;
        }
        Ok(PriorPathSet { paths, horizon })
    }

    pub fn paths(&self) -> &[Vec<Vector>] {
        &self.paths
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn len(&self) -> usize {
        self.paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }
}

/// Integrates `K - 1` GAD steps from `(x, v)` on each of `n` independent
/// field draws. Path `k` uses the draw seeded by `sub_seed(seed, k)`.
pub fn sample_prior_paths(
    model: &GprModel,
    x: &Vector,
    v: &Vector,
    n: usize,
    horizon: usize,
    dt: f64,
    seed: u64,
) -> Result<PriorPathSet> {
    check_dim(model.dim(), x.len())?;
    check_dim(model.dim(), v.len())?;
    check_finite(x.as_slice(), "path start")?;
    if n == 0 || horizon == 0 {
        return Err(Error::InvalidParameter(
            "path count and horizon must be positive".into(),
        ));
    }
    let mut paths = Vec::with_capacity(n);
    for k in 0..n {
        let mut field = model.sample_field_realization(sub_seed(seed, k as u64));
        let mut state = GadState::new(x.clone(), v.clone())?;
        let mut path = vec![x.clone()];
        while path.len() < horizon {
            let Ok((b, j)) = field.eval(state.x.as_slice()) else {
                break;
            };
            match gad_step(&state, &b, &j, dt) {
                Ok(next) => {
                    path.push(next.x.clone());
                    state = next;
                }
                Err(_) => break,
            }
        }
        paths.push(path);
    }
    if horizon > 1 && paths.iter().all(|p| p.len() == 1) {
        return Err(Error::SurrogateUnusable(
            "every sampled path diverged at its first step".into(),
        ));
    }
    PriorPathSet::new(paths, horizon)
}
