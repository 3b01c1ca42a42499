//! Acceptance suite. Prints one `PASS`/`FAIL` line per criterion (with
//! indented detail lines) and exits non-zero if any criterion fails.

mod common;

use std::time::Instant;

use agpr_gad::design::{spsa_maximize, utility_u1, DesignBatch, LinCoeffs, PriorPathSet, SpsaParams};
use agpr_gad::experiment::{ExperimentConfig, Mode};
use agpr_gad::gad::{
    gad_step, run_agpr_gad, run_reference_gad, seeded_default_direction, DerivativeSource,
    ExactDerivatives, GadConfig, GadState, NoisyFiniteDifference,
};
use agpr_gad::gpr::{fast_posterior_variance, Dataset, GprModel, ObservationKind};
use agpr_gad::problems::Problem;
use agpr_gad::{KernelParams, Vector};
use common::scalar;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SEEDS: [u64; 3] = [0, 1, 2];

fn v2(a: f64, b: f64) -> Vector {
    Vector::from_vec(vec![a, b])
}

fn verdict(ok: bool) -> &'static str {
    if ok {
        "PASS"
    } else {
        "FAIL"
    }
}

struct Outcome {
    dist: f64,
    cost: u64,
    secs: f64,
    identity: bool,
}

/// One surrogate run with the benchmark's default settings. The update budget
/// is set so the cost cannot pass `cost_cap`: a run needing more updates fails
/// the cost target whatever it would have found.
fn agpr_run(problem: &str, start: [f64; 2], noise: f64, sigma: Option<f64>, target: [f64; 2], cost_cap: u64, seed: u64) -> Outcome {
    let mut cfg = ExperimentConfig::defaults(problem, Mode::Agpr, noise);
    cfg.start = start.to_vec();
    cfg.seed = seed;
    if let Some(s) = sigma {
        cfg.sigma_sur = s;
    }
    cfg.max_updates = (cost_cap as usize).saturating_sub(cfg.n0) / cfg.n_d;
    let al = cfg.active_learning();
    let p = Problem::by_name(problem).unwrap();
    let clock = Instant::now();
    let r = run_agpr_gad(&p, &cfg.start_state().unwrap(), &cfg.gad(), &al, seed).unwrap();
    let secs = clock.elapsed().as_secs_f64();
    let out = Outcome {
        dist: if r.converged { (&r.x_sp - v2(target[0], target[1])).norm() } else { f64::INFINITY },
        cost: r.cost,
        secs,
        identity: r.cost == (al.n0 + r.updates * al.n_d) as u64,
    };
    println!(
        "    {problem} noise {noise} from ({}, {}) seed {seed}: converged {}, x_sp ({:.3}, {:.3}), dist {:.3}, cost {}, updates {}, {:.1} s",
        start[0], start[1], r.converged, r.x_sp[0], r.x_sp[1], out.dist, r.cost, r.updates, secs
    );
    out
}

fn criterion1() -> bool {
    let p = Problem::example1();
    let mut cfg = ExperimentConfig::defaults("example1", Mode::Reference, 0.0);
    cfg.start = vec![0.46, 0.69];
    let mut all = true;
    for seed in SEEDS {
        cfg.seed = seed;
        let clock = Instant::now();
        let r = run_reference_gad(&mut ExactDerivatives(&p), &cfg.start_state().unwrap(), &cfg.gad());
        let secs = clock.elapsed().as_secs_f64();
        let ok = match &r {
            Ok(r) => {
                let dist = (&r.x_sp - v2(1.28, 3.44)).norm();
                let steps = r.trajectory.len() - 1;
                println!(
                    "    seed {seed}: converged {}, x_sp ({:.3}, {:.3}), dist {dist:.3}, steps {steps}, {secs:.2} s",
                    r.converged, r.x_sp[0], r.x_sp[1]
                );
                r.converged && dist < 0.02 && (steps as f64 - 305.0).abs() <= 0.3 * 305.0 && secs < 5.0
            }
            Err(e) => {
                println!("    seed {seed}: {e}");
                false
            }
        };
        all &= ok;
    }
    println!("{} criterion 1: reference GAD on example 1 from m1 reaches (1.28, 3.44) within 0.02 in 305 +- 30% steps", verdict(all));
    all
}

fn two_of_three(runs: &[Outcome], tol: f64, cost: u64) -> bool {
    runs.iter().filter(|o| o.dist < tol && o.cost <= cost).count() >= 2
}

fn criterion2() -> (bool, bool) {
    let cells = [
        ([0.46, 0.69], [1.28, 3.44], 200),
        ([2.20, 5.98], [3.56, 6.07], 100),
        ([5.71, 6.23], [3.56, 6.07], 150),
    ];
    let mut all = true;
    let mut identity = true;
    for (start, target, cap) in cells {
        let runs: Vec<Outcome> = SEEDS
            .iter()
            .map(|&s| agpr_run("example1", start, 0.0, None, target, cap, s))
            .collect();
        let ok = two_of_three(&runs, 0.25, cap) && runs.iter().all(|o| o.secs < 120.0);
        identity &= runs.iter().all(|o| o.identity);
        println!("  {} from ({}, {}): 2 of 3 within 0.25 of ({}, {}) at cost <= {cap}", verdict(ok), start[0], start[1], target[0], target[1]);
        all &= ok;
    }
    println!("{} criterion 2: aGPR-GAD on example 1 from m1, m2, m3", verdict(all));
    (all, identity)
}

/// True-model evaluations spent by finite-difference GAD before it first
/// comes within `radius` of `target`; the full budget if it never does.
fn noisy_reference_cost(start: [f64; 2], noise: f64, min_step: f64, seed: u64, target: [f64; 2], radius: f64) -> u64 {
    let p = Problem::example2();
    let mut src = NoisyFiniteDifference::new(&p, noise, min_step, seed).unwrap();
    let per_call = src.evaluations_per_call();
    let mut state = GadState::new(v2(start[0], start[1]), seeded_default_direction(2, seed)).unwrap();
    let budget = 20_000u64;
    for step in 0..budget {
        let (b, j) = src.derivatives(state.x.as_slice()).unwrap();
        state = match gad_step(&state, &b, &j, 0.01) {
            Ok(s) => s,
            Err(_) => return budget * per_call,
        };
        if (&state.x - v2(target[0], target[1])).norm() < radius {
            return (step + 1) * per_call;
        }
    }
    budget * per_call
}

fn criterion3() -> (bool, bool) {
    let target = [1.79, 3.30];
    let mut all = true;
    let mut identity = true;
    for (noise, sigma) in [(0.0, 0.005), (0.05, 0.007), (0.1, 0.010)] {
        let mut worst_agpr = 0u64;
        let mut agpr_ok = true;
        for (start, tol, cap) in [([0.59, 0.73], 0.15, 120), ([5.87, 6.25], 0.20, 600)] {
            let runs: Vec<Outcome> = SEEDS
                .iter()
                .map(|&s| agpr_run("example2", start, noise, Some(sigma), target, cap, s))
                .collect();
            let ok = two_of_three(&runs, tol, cap);
            identity &= runs.iter().all(|o| o.identity);
            let mut good: Vec<u64> = runs.iter().filter(|o| o.dist < tol).map(|o| o.cost).collect();
            good.sort();
            // the second-cheapest success is what "2 of 3 seeds" can promise
            worst_agpr = worst_agpr.max(good.get(1).copied().unwrap_or(u64::MAX));
            println!("  {} noise {noise} from ({}, {}): 2 of 3 within {tol} at cost <= {cap}", verdict(ok), start[0], start[1]);
            agpr_ok &= ok;
            all &= ok;
        }
        if noise > 0.0 {
            // the cheapest reference over seeds, starts and difference steps
            let mut best_ref = u64::MAX;
            for start in [[0.59, 0.73], [5.87, 6.25]] {
                for min_step in [0.0, 0.5] {
                    for &s in &SEEDS {
                        let c = noisy_reference_cost(start, noise, min_step, s, target, 0.20);
                        best_ref = best_ref.min(c);
                    }
                }
            }
            let ratio = best_ref as f64 / worst_agpr as f64;
            let ok = agpr_ok && ratio >= 5.0;
            println!("  {} noise {noise}: cheapest noisy reference {best_ref} evaluations vs aGPR {} ({ratio:.1}x)", verdict(ok),
                if worst_agpr == u64::MAX { "n/a".to_string() } else { worst_agpr.to_string() });
            all &= ok;
        }
    }
    println!("{} criterion 3: aGPR-GAD on example 2 in force mode with noisy observations", verdict(all));
    (all, identity)
}

// ---- property suite -------------------------------------------------------

fn check(name: &str, ok: bool) -> bool {
    println!("  {} {name}", verdict(ok));
    ok
}

fn spread(rng: &mut ChaCha8Rng, d: usize, n: usize) -> Vec<Vector> {
    (0..n).map(|_| Vector::from_fn(d, |_, _| rng.random_range(-2.0..2.0))).collect()
}

fn bumpy(x: &[f64]) -> f64 {
    x.iter().map(|v| (2.0 * v).sin()).sum::<f64>() + 0.3 * x.iter().map(|v| v * v).sum::<f64>()
}

fn energy_model(points: &[Vector], p: KernelParams) -> GprModel {
    let mut data = Dataset::new(ObservationKind::Energy, points[0].len());
    for x in points {
        data.push(x.clone(), Vector::from_element(1, bumpy(x.as_slice()))).unwrap();
    }
    GprModel::fit(data, p).unwrap()
}

fn line_paths() -> PriorPathSet {
    let paths = (0..4)
        .map(|p| (0..10).map(|s| v2(0.05 * s as f64, 0.02 * s as f64 + 0.01 * p as f64)).collect())
        .collect();
    PriorPathSet::new(paths, 10).unwrap()
}

fn kernel_fd(rng: &mut ChaCha8Rng) -> bool {
    let (mut first, mut second) = (0.0f64, 0.0f64);
    for d in 1..=3 {
        for _ in 0..10 {
            let x: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
            let y: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
            let p = KernelParams::new(rng.random_range(0.5..2.0), rng.random_range(0.5..2.0), 0.0).unwrap();
            let (a, b) = common::kernel_fd_errors(&x, &y, &p);
            first = first.max(a);
            second = second.max(b);
        }
    }
    println!("    max FD error: first order {first:.1e}, higher {second:.1e}");
    first < 1e-5 && second < 1e-4
}

fn interpolation(rng: &mut ChaCha8Rng) -> bool {
    let pts = spread(rng, 2, 15);
    let m = energy_model(&pts, KernelParams::new(2.0, 0.7, 0.0).unwrap());
    pts.iter().all(|x| (m.predict_value(x.as_slice()).unwrap().0[0] - bumpy(x.as_slice())).abs() < 1e-6)
}

fn variance_monotone(rng: &mut ChaCha8Rng) -> bool {
    let p = KernelParams::new(1.2, 0.9, 1e-4).unwrap();
    (0..20).all(|_| {
        let pts = spread(rng, 2, 6);
        let mut more = pts.clone();
        more.extend(spread(rng, 2, 1));
        let z = spread(rng, 2, 1).remove(0);
        let a = energy_model(&pts, p).predict_derivatives(z.as_slice()).unwrap();
        let b = energy_model(&more, p).predict_derivatives(z.as_slice()).unwrap();
        (0..2).all(|i| b.var_b[i] <= a.var_b[i] + 1e-9 && (0..2).all(|j| b.var_j[(i, j)] <= a.var_j[(i, j)] + 1e-9))
    })
}

fn quadratic_saddle() -> bool {
    let p = Problem::quadratic_saddle();
    let start = GadState::new(v2(1.0, 0.5), v2(0.0, 1.0)).unwrap();
    let cfg = GadConfig { dt: 0.1, tol: 1e-9, t_max: 10_000 };
    let r = run_reference_gad(&mut ExactDerivatives(&p), &start, &cfg).unwrap();
    r.converged && r.x_sp.norm() < 1e-6 && 1.0 - r.final_state().v[1].abs() < 1e-4
}

fn spsa_quadratic(rng: &mut ChaCha8Rng) -> bool {
    (0..5).all(|seed| {
        let target: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
        let f = |b: &DesignBatch| {
            -b.points().iter().flat_map(|p| p.iter().copied()).zip(&target).map(|(x, t)| (x - t) * (x - t)).sum::<f64>()
        };
        let start = DesignBatch::new(vec![Vector::zeros(2); 4]).unwrap();
        let params = SpsaParams { a: 2.0, iters: 200, seed, ..Default::default() };
        (-f(&spsa_maximize(f, &start, &params).best)).sqrt() < 0.05
    })
}

fn u1_properties(rng: &mut ChaCha8Rng) -> bool {
    let paths = line_paths();
    (0..40).all(|_| {
        let params = KernelParams::new(rng.random_range(0.5..3.0), rng.random_range(0.3..2.0), 1e-4).unwrap();
        let c = LinCoeffs { alpha: rng.random_range(-2.0..2.0), beta: vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)], fallback: false };
        let n = rng.random_range(1..5);
        let base: Vec<Vector> = (0..n).map(|_| v2(rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5))).collect();
        let mut all = base.clone();
        all.push(v2(rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5)));
        let u = |pts: &[Vector]| utility_u1(&DesignBatch::new(pts.to_vec()).unwrap(), &paths, &c, &params, ObservationKind::Energy, 0.01);
        let (small, big) = (u(&base), u(&all));
        let mut rev = all.clone();
        rev.reverse();
        big >= small - 1e-9 && (u(&rev) - big).abs() < 1e-8 * big.abs().max(1.0)
    })
}

fn scalar_oracles() -> bool {
    let (eta, l, s2) = (1.3, 0.7, 0.01);
    let params = KernelParams::new(eta, l, s2).unwrap();
    let (alpha, beta, z, x) = (0.8, 0.3, 0.2, 0.65);
    let design = [Vector::from_element(1, x)];
    let kk = eta + s2;
    let (kb, kj) = (scalar::k_ub(x - z, eta, l), scalar::k_uj(x - z, eta, l));
    let (vb0, vj0, c0) = scalar::prior_bj(eta, l);
    let (vb, vj, cbj) = (vb0 - kb * kb / kk, vj0 - kj * kj / kk, c0 - kb * kj / kk);
    let fv = fast_posterior_variance(&params, ObservationKind::Energy, &design, &[z]).unwrap();
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-8 * b.abs().max(1.0);
    let fast_ok = close(fv.var_b[0], vb) && close(fv.var_j[(0, 0)], vj) && close(fv.cov_bj[(0, 0)], cbj);
    let dt = 0.01;
    let s = dt * dt * (alpha * alpha * vb + beta * beta * vj + 2.0 * alpha * beta * cbj);
    let expected = -0.5 * ((2.0 * std::f64::consts::PI * std::f64::consts::E).ln() + s.ln());
    let paths = PriorPathSet::new(vec![vec![Vector::from_element(1, z)]], 1).unwrap();
    let c = LinCoeffs { alpha, beta: vec![beta], fallback: false };
    let u = utility_u1(&DesignBatch::new(design.to_vec()).unwrap(), &paths, &c, &params, ObservationKind::Energy, dt);
    fast_ok && close(u, expected)
}

fn bitwise_reruns() -> bool {
    let p = Problem::example1();
    let mut cfg = ExperimentConfig::defaults("example1", Mode::Agpr, 0.0);
    cfg.start = vec![5.71, 6.23];
    cfg.t_max = 1500;
    cfg.max_updates = 4;
    cfg.spsa.iters = 20;
    let run = || run_agpr_gad(&p, &cfg.start_state().unwrap(), &cfg.gad(), &cfg.active_learning(), 11).unwrap();
    let (a, b) = (run(), run());
    let same_designs = a.designs.len() == b.designs.len()
        && a.designs.iter().zip(&b.designs).all(|(x, y)| x.point == y.point && x.label == y.label);
    a.trajectory == b.trajectory && same_designs && a.cost == (cfg.n0 + a.updates * cfg.n_d) as u64
}

fn criterion5(identity: bool) -> bool {
    let clock = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut all = true;
    all &= check("derivative kernel blocks agree with finite differences", kernel_fd(&mut rng));
    all &= check("noise-free interpolation to 1e-6", interpolation(&mut rng));
    all &= check("posterior variance never grows when data is added (20 cases)", variance_monotone(&mut rng));
    all &= check("quadratic saddle found to 1e-6 with min-mode alignment 1e-4", quadratic_saddle());
    all &= check("SPSA recovers a concave quadratic optimum within 0.05", spsa_quadratic(&mut rng));
    all &= check("U1 grows with the batch and ignores point order", u1_properties(&mut rng));
    all &= check("d = 1 scalar oracles for U1 and the fast variance", scalar_oracles());
    all &= check("cost = N0 + updates * N_D on every surrogate run above", identity);
    all &= check("bit-identical reruns under a fixed seed", bitwise_reruns());
    let secs = clock.elapsed().as_secs_f64();
    all &= check(&format!("suite runtime {secs:.1} s under 3 min"), secs < 180.0);
    println!("{} criterion 5: property suite", verdict(all));
    all
}

fn main() {
    let c1 = criterion1();
    let (c2, id2) = criterion2();
    let (c3, id3) = criterion3();
    let c5 = criterion5(id2 && id3);
    println!("{} criterion 4: the molecular benchmark is replaced by the property suite of criterion 5", verdict(c5));
    let failed = [c1, c2, c3, c5].iter().filter(|ok| !**ok).count();
    println!("acceptance: {failed} of 5 criteria failed");
    if failed > 0 {
        std::process::exit(1);
    }
}
