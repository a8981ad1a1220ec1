//! Acceptance criteria 1-9. Runs as a plain binary so every criterion prints
//! one PASS/FAIL line; exits nonzero if any criterion fails.

use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use drlqg_core::ambiguity::{oracle_maximize, AmbiguitySpec, GelbrichBall};
use drlqg_core::files::trace_to_csv;
use drlqg_core::fixtures::{ones_profile, ones_system, random_instance};
use drlqg_core::frank_wolfe::{solve, solve_with_observer, FwConfig, FwTrace};
use drlqg_core::gradient::{fd_grad, grad_f};
use drlqg_core::instance::generate;
use drlqg_core::linalg::SymMatrix;
use drlqg_core::lqg::{assemble_controller, kalman_forward, lqg_value, riccati_backward, KalmanPolicy};
use drlqg_core::saddle::{saddle_check, Side};
use drlqg_core::simulate::{monte_carlo_cost, simulate, GaussianNoise};
use drlqg_core::stacked::{
    build_stacked, controller_cost_trace, output_to_purified, purified_from_rollout, purified_to_output,
    unroll_kalman, BlockLowerTriangular, LinearOutputController, LinearPurifiedController, OutputFeedbackPolicy,
};
use drlqg_core::system::TimeVaryingSystem;

type Outcome = Result<String, String>;

/// Name, check and runtime budget.
type Criterion = (&'static str, fn() -> Outcome, Duration);

fn check(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}

fn scalar(v: f64) -> DMatrix<f64> {
    DMatrix::from_element(1, 1, v)
}

// Criterion 1: hand-evaluated recursions on the all-ones instance.
fn scalar_suite() -> Outcome {
    let sys = ones_system();
    let cov = ones_profile();
    let ric = riccati_backward(&sys).map_err(|e| e.to_string())?;
    let kal = kalman_forward(&sys, &cov).map_err(|e| e.to_string())?;
    let f = lqg_value(&sys, &cov).map_err(|e| e.to_string())?;
    let u = unroll_kalman(&sys, &cov).map_err(|e| e.to_string())?;
    let got = [
        ("P_0", ric.p[0][(0, 0)], 1.5),
        ("K_0", ric.k[0][(0, 0)], -0.5),
        ("Sigma_0", kal.sigma[0][(0, 0)], 0.5),
        ("f", f, 2.75),
        ("U'", u.gain.block(0, 0)[(0, 0)], -0.25),
    ];
    for (name, value, want) in got {
        check((value - want).abs() <= 1e-12, format!("{name} = {value}, expected {want}"))?;
    }
    Ok("P_0, K_0, Sigma_0, f, U' exact to 1e-12".into())
}

// Criterion 2: reverse-pass gradient against central differences.
fn gradient_vs_fd() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let (n, m, p) = (rng.random_range(1..=3), rng.random_range(1..=3), rng.random_range(1..=3));
        let horizon = rng.random_range(1..=5);
        let (sys, cov) = random_instance(&mut rng, n, m, p, horizon);
        let g = grad_f(&sys, &cov).map_err(|e| e.to_string())?;
        let fd = fd_grad(&sys, &cov, 1e-5).map_err(|e| e.to_string())?;
        worst = worst.max(g.distance(&fd) / g.norm());
    }
    check(worst <= 1e-4, format!("max relative Frobenius error {worst:.3e} > 1e-4"))?;
    Ok(format!("max relative Frobenius error {worst:.3e} over 20 instances"))
}

// Criterion 3: recursive value equals the stacked trace cost of the unrolled controller.
fn separation_principle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(30);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let (n, m, p) = (rng.random_range(1..=4), rng.random_range(1..=4), rng.random_range(1..=4));
        let horizon = rng.random_range(1..=6);
        let (sys, cov) = random_instance(&mut rng, n, m, p, horizon);
        let st = build_stacked(&sys);
        let purified = output_to_purified(&unroll_kalman(&sys, &cov).map_err(|e| e.to_string())?, &st)
            .map_err(|e| e.to_string())?;
        let trace = controller_cost_trace(&st, &purified, &cov).map_err(|e| e.to_string())?;
        let value = lqg_value(&sys, &cov).map_err(|e| e.to_string())?;
        worst = worst.max(rel(trace, value));
    }
    check(worst <= 1e-8, format!("max relative error {worst:.3e} > 1e-8"))?;
    Ok(format!("max relative error {worst:.3e} over 20 instances"))
}

fn scalar_ball(zhat: f64, rho: f64) -> GelbrichBall {
    GelbrichBall::new(SymMatrix::from_diagonal(&[zhat]), rho).expect("valid ball")
}

// Criterion 4: bisection oracle against closed forms, grids and feasibility.
fn oracle_correctness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(40);
    let mut closed_err: f64 = 0.0;
    for _ in 0..50 {
        let (zhat, rho, c) = (rng.random_range(0.1..4.0), rng.random_range(0.01..1.5), rng.random_range(0.1..10.0));
        let ball = scalar_ball(zhat, rho);
        let reference = SymMatrix::from_diagonal(&[rng.random_range(zhat..(zhat.sqrt() + rho).powi(2))]);
        let res = oracle_maximize(&ball, &SymMatrix::from_diagonal(&[c]), &reference, 0.95).map_err(|e| e.to_string())?;
        closed_err = closed_err.max(rel(res.maximizer[(0, 0)], (zhat.sqrt() + rho).powi(2)));
    }
    check(closed_err <= 1e-8, format!("(a) closed-form relative error {closed_err:.3e}"))?;

    let mut worst_ratio = f64::INFINITY;
    for _ in 0..50 {
        let (zhat, rho, c): (f64, f64, f64) = (rng.random_range(0.1..4.0), rng.random_range(0.01..1.5), rng.random_range(0.1..10.0));
        let hi = (zhat.sqrt() + rho).powi(2);
        let z = rng.random_range(zhat..hi);
        // Brute force over 10^5 feasible points: [ẑ, (√ẑ+ρ)²] is the floored scalar ball.
        let grid_best = (0..100_000).map(|i| zhat + (hi - zhat) * i as f64 / 99_999.0).map(|l| c * (l - z)).fold(f64::MIN, f64::max);
        let res = oracle_maximize(&scalar_ball(zhat, rho), &SymMatrix::from_diagonal(&[c]), &SymMatrix::from_diagonal(&[z]), 0.95)
            .map_err(|e| e.to_string())?;
        check(
            res.gap_contribution >= 0.95 * grid_best - 1e-12 * c * hi,
            format!("(b) oracle gap {} below 0.95 x grid {}", res.gap_contribution, grid_best),
        )?;
        worst_ratio = worst_ratio.min(res.gap_contribution / grid_best);
    }

    let mut worst_violation: f64 = 0.0;
    for _ in 0..200 {
        let d = rng.random_range(1..=6);
        let rand_pd = |rng: &mut ChaCha8Rng| {
            let g = DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
            SymMatrix::new(&g * g.transpose() + DMatrix::identity(d, d) * 0.1)
        };
        let ball = GelbrichBall::new(rand_pd(&mut rng), rng.random_range(0.01..1.5)).map_err(|e| e.to_string())?;
        let grad = rand_pd(&mut rng);
        let res = oracle_maximize(&ball, &grad, ball.center(), 0.95).map_err(|e| e.to_string())?;
        check(ball.contains(&res.maximizer, 1e-8), "(c) oracle output outside its ball")?;
        let dist = drlqg_core::ambiguity::gelbrich_distance(&res.maximizer, ball.center()).map_err(|e| e.to_string())?;
        worst_violation = worst_violation.max(dist - ball.radius());
    }
    Ok(format!(
        "(a) closed-form error {closed_err:.2e}; (b) worst gap/grid ratio {worst_ratio:.4}; (c) max radius excess {worst_violation:.2e}"
    ))
}

/// Scalar T=1 value from the closed-form Riccati and Kalman steps.
fn scalar_value(s: &[f64; 6], x0: f64, w0: f64, v0: f64) -> f64 {
    let [a, b, c, q0, q1, r] = *s;
    let p1 = q1;
    let p0 = a * a * p1 + q0 - (a * b * p1).powi(2) / (r + b * b * p1);
    let sigma0 = x0 - (x0 * c).powi(2) / (c * c * x0 + v0);
    (q0 - p0) * sigma0 + p1 * (a * a * sigma0 + w0) + p0 * x0
}

// Criterion 5: Frank-Wolfe against an exhaustive grid over the scalar feasible box.
fn scalar_minimax() -> Outcome {
    let cases: [([f64; 6], [f64; 3], f64); 3] = [
        ([1.0, 1.0, 1.0, 1.0, 1.0, 1.0], [1.0, 1.0, 1.0], 0.1),
        ([0.7, 0.5, 1.3, 0.4, 2.0, 0.3], [1.5, 0.8, 1.2], 0.1),
        ([1.2, -0.8, 0.6, 1.5, 0.5, 2.0], [0.6, 1.7, 0.9], 0.3),
    ];
    let mut worst: f64 = 0.0;
    for (s, nominal, rho) in cases {
        let [a, b, c, q0, q1, r] = s;
        let sys = TimeVaryingSystem::new(
            vec![scalar(a)],
            vec![scalar(b)],
            vec![scalar(c)],
            vec![SymMatrix::from_diagonal(&[q0]), SymMatrix::from_diagonal(&[q1])],
            vec![SymMatrix::from_diagonal(&[r])],
        )
        .map_err(|e| e.to_string())?;
        let mut cov = ones_profile();
        cov.x0 = SymMatrix::from_diagonal(&[nominal[0]]);
        cov.w[0] = SymMatrix::from_diagonal(&[nominal[1]]);
        cov.v[0] = SymMatrix::from_diagonal(&[nominal[2]]);
        let sol = solve(&sys, &AmbiguitySpec::uniform(cov, rho), &FwConfig::default()).map_err(|e| e.to_string())?;

        let steps = 200;
        let axis = |zhat: f64| -> Vec<f64> {
            let hi = (zhat.sqrt() + rho).powi(2);
            (0..=steps).map(|i| zhat + (hi - zhat) * i as f64 / steps as f64).collect()
        };
        let (gx, gw, gv) = (axis(nominal[0]), axis(nominal[1]), axis(nominal[2]));
        let mut best = f64::MIN;
        for &x in &gx {
            for &w in &gw {
                for &v in &gv {
                    best = best.max(scalar_value(&s, x, w, v));
                }
            }
        }
        worst = worst.max(rel(sol.f_value, best));
    }
    check(worst <= 1e-3, format!("max relative deviation from grid maximum {worst:.3e}"))?;
    Ok(format!("max relative deviation from 201^3 grid maximum {worst:.3e} over 3 scalar instances"))
}

// Criterion 6: benchmark-scale convergence.
fn benchmark_convergence() -> Outcome {
    let problem = generate(10, 10, 10, 10, 2024, 0.1).and_then(|f| f.to_problem()).map_err(|e| e.to_string())?;
    let cfg = FwConfig { delta: 0.95, tol: 1e-3, max_iter: 200, parallel_oracles: true };
    let sol = solve(&problem.system, &problem.ambiguity, &cfg).map_err(|e| e.to_string())?;
    check(sol.converged(), format!("gap {:.3e} after {} iterations", sol.final_gap, sol.trace.len()))?;
    Ok(format!("gap {:.3e} after {} iterations (limit 200), f = {:.6}", sol.final_gap, sol.trace.len(), sol.f_value))
}

// Criterion 7: saddle-point property and its negative control.
fn saddle_suite() -> Outcome {
    let scalar_amb = AmbiguitySpec::uniform(ones_profile(), 0.1);
    let scalar_sol = solve(&ones_system(), &scalar_amb, &FwConfig::default()).map_err(|e| e.to_string())?;
    let r1 = saddle_check(&ones_system(), &scalar_amb, &scalar_sol, 100, 1).map_err(|e| e.to_string())?;
    check(r1.passed(), format!("scalar instance: {:?}", r1.violations))?;

    let problem = generate(3, 3, 3, 4, 11, 0.1).and_then(|f| f.to_problem()).map_err(|e| e.to_string())?;
    let (sys, amb) = (&problem.system, &problem.ambiguity);
    let sol = solve(sys, amb, &FwConfig::default()).map_err(|e| e.to_string())?;
    check(sol.converged(), "3x3 instance did not converge")?;
    let r2 = saddle_check(sys, amb, &sol, 100, 2).map_err(|e| e.to_string())?;
    check(r2.passed(), format!("3x3 instance: {:?}", r2.violations))?;

    // A run asked for 1e-5 but stopped after 5 iterations.
    let truncated = solve(sys, amb, &FwConfig { tol: 1e-5, max_iter: 5, ..Default::default() }).map_err(|e| e.to_string())?;
    let r3 = saddle_check(sys, amb, &truncated, 100, 3).map_err(|e| e.to_string())?;
    let flagged = r3.violations_on(Side::Nature);
    check(flagged >= 1, "truncated run produced no nature-side violation")?;
    Ok(format!("0 violations on scalar and 3x3/T=4 (100 samples each side); truncated run flagged {flagged} nature samples"))
}

// Criterion 8: Monte Carlo mean against the exact trace value.
fn monte_carlo() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(80);
    let mut details = Vec::new();
    for i in 0..5 {
        let (sys, cov) = random_instance(&mut rng, 2, 2, 2, 3);
        let (gains, exact) = if i < 3 {
            let ctrl = assemble_controller(&sys, &cov).map_err(|e| e.to_string())?;
            (ctrl.gains(), ctrl.value())
        } else {
            // Robust controller evaluated under the nominal covariances.
            let sol = solve(&sys, &AmbiguitySpec::uniform(cov.clone(), 0.3), &FwConfig::default()).map_err(|e| e.to_string())?;
            let st = build_stacked(&sys);
            let unrolled = drlqg_core::stacked::unroll_gains(&sys, &sol.controller.gains()).map_err(|e| e.to_string())?;
            let purified = output_to_purified(&unrolled, &st).map_err(|e| e.to_string())?;
            (sol.controller.gains(), controller_cost_trace(&st, &purified, &cov).map_err(|e| e.to_string())?)
        };
        let est = monte_carlo_cost(&sys, &mut KalmanPolicy::from_gains(&sys, &gains), &cov, 100_000, 800 + i)
            .map_err(|e| e.to_string())?;
        let z = (est.mean - exact) / est.std_err;
        check(est.agrees_with(exact, 3.0), format!("instance {i}: mean {} vs exact {exact} ({z:.2} SE)", est.mean))?;
        details.push(format!("{z:+.2}"));
    }
    Ok(format!("deviations in standard errors: {}", details.join(", ")))
}

fn trace_without_time(trace: &FwTrace) -> Vec<String> {
    String::from_utf8(trace_to_csv(trace))
        .expect("utf-8")
        .lines()
        .map(|l| l.rsplit_once(',').map(|(head, _)| head.to_string()).unwrap_or_default())
        .collect()
}

// Criterion 9: structural invariants.
fn structural() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(90);

    // Purified observations do not depend on the controller.
    let mut eta_err: f64 = 0.0;
    for _ in 0..10 {
        let (sys, cov) = random_instance(&mut rng, 3, 2, 2, 4);
        let noise = GaussianNoise::new(&cov).map_err(|e| e.to_string())?.sample(&mut rng);
        let kalman = assemble_controller(&sys, &cov).map_err(|e| e.to_string())?;
        let a = simulate(&sys, &mut kalman.policy(), &noise).map_err(|e| e.to_string())?;
        let mut gain = BlockLowerTriangular::zeros(4, 2, 2);
        for t in 0..4 {
            for s in 0..=t {
                *gain.block_mut(t, s) = DMatrix::from_fn(2, 2, |_, _| rng.random_range(-1.0..1.0));
            }
        }
        let other = LinearOutputController { gain, offset: DVector::from_fn(8, |_, _| rng.random_range(-1.0..1.0)) };
        let b = simulate(&sys, &mut OutputFeedbackPolicy::new(&other), &noise).map_err(|e| e.to_string())?;
        let ea = purified_from_rollout(&sys, &a.u, &a.y).map_err(|e| e.to_string())?;
        let eb = purified_from_rollout(&sys, &b.u, &b.y).map_err(|e| e.to_string())?;
        for (x, y) in ea.iter().zip(&eb) {
            eta_err = eta_err.max((x - y).amax() / x.amax().max(1.0));
        }
    }
    check(eta_err <= 1e-12, format!("purified observations differ by {eta_err:.3e}"))?;

    // Gain conversions round trip.
    let mut conv_err: f64 = 0.0;
    for _ in 0..20 {
        let (sys, _) = random_instance(&mut rng, 3, 2, 2, 4);
        let st = build_stacked(&sys);
        let mut gain = BlockLowerTriangular::zeros(4, 2, 2);
        for t in 0..4 {
            for s in 0..=t {
                *gain.block_mut(t, s) = DMatrix::from_fn(2, 2, |_, _| rng.random_range(-0.5..0.5));
            }
        }
        let u = LinearPurifiedController { gain, offset: DVector::from_fn(8, |_, _| rng.random_range(-1.0..1.0)) };
        let back = output_to_purified(&purified_to_output(&u, &st).map_err(|e| e.to_string())?, &st).map_err(|e| e.to_string())?;
        conv_err = conv_err.max((back.gain.to_dense() - u.gain.to_dense()).amax()).max((back.offset - &u.offset).amax());
    }
    check(conv_err <= 1e-10, format!("gain round trip error {conv_err:.3e}"))?;

    // Iterate feasibility and gap nonnegativity along a run.
    let (sys, cov) = random_instance(&mut rng, 3, 3, 3, 4);
    let amb = AmbiguitySpec::uniform(cov, 0.4);
    let cfg = FwConfig { tol: 1e-6, max_iter: 100, ..Default::default() };
    let (mut infeasible, mut min_gap) = (0usize, f64::INFINITY);
    let first = solve_with_observer(&sys, &amb, &cfg, |rec, it| {
        infeasible += amb.infeasible_blocks(it, 1e-7).map(|v| v.len()).unwrap_or(usize::MAX);
        min_gap = min_gap.min(rec.surrogate_gap / rec.f_value.abs().max(1.0));
    })
    .map_err(|e| e.to_string())?;
    check(infeasible == 0, format!("{infeasible} infeasible iterate blocks"))?;
    check(min_gap >= -1e-9, format!("scaled gap {min_gap:.3e} below -1e-9"))?;

    // Seeded runs are reproducible, serial or parallel.
    let second = solve(&sys, &amb, &cfg).map_err(|e| e.to_string())?;
    let serial = solve(&sys, &amb, &FwConfig { parallel_oracles: false, ..cfg }).map_err(|e| e.to_string())?;
    let reference = trace_without_time(&first.trace);
    check(reference == trace_without_time(&second.trace), "repeated runs differ")?;
    check(reference == trace_without_time(&serial.trace), "serial and parallel runs differ")?;

    Ok(format!(
        "eta error {eta_err:.1e}, round trip {conv_err:.1e}, feasible iterates over {} rows, min scaled gap {min_gap:.1e}, traces identical",
        first.trace.len()
    ))
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("hand-derived scalar suite", scalar_suite, Duration::from_secs(1)),
        ("gradient vs finite differences", gradient_vs_fd, Duration::from_secs(30)),
        ("separation principle", separation_principle, Duration::from_secs(30)),
        ("oracle correctness", oracle_correctness, Duration::from_secs(60)),
        ("scalar minimax vs grid", scalar_minimax, Duration::from_secs(60)),
        ("benchmark-scale convergence", benchmark_convergence, Duration::from_secs(600)),
        ("saddle-point property", saddle_suite, Duration::from_secs(120)),
        ("Monte Carlo consistency", monte_carlo, Duration::from_secs(120)),
        ("structural invariants", structural, Duration::from_secs(60)),
    ];
    let mut failures = 0;
    for (i, (name, run, budget)) in criteria.into_iter().enumerate() {
        let start = Instant::now();
        let outcome = run();
        let elapsed = start.elapsed();
        let outcome = outcome.and_then(|detail| {
            if elapsed > budget {
                Err(format!("exceeded the {}s runtime budget ({detail})", budget.as_secs()))
            } else {
                Ok(detail)
            }
        });
        match outcome {
            Ok(detail) => println!("criterion {} ({name}): PASS in {:.2}s: {detail}", i + 1, elapsed.as_secs_f64()),
            Err(detail) => {
                failures += 1;
                println!("criterion {} ({name}): FAIL in {:.2}s: {detail}", i + 1, elapsed.as_secs_f64());
            }
        }
    }
    if failures > 0 {
        println!("{failures} criterion/criteria failed");
        std::process::exit(1);
    }
    println!("all 9 criteria passed");
}
