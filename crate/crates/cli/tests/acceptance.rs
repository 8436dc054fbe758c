//! Acceptance suite. Prints one PASS/FAIL line per criterion.
//!
//! The process exits successfully even when a criterion fails so that the
//! full table is always produced; set `STATSEEK_ACCEPTANCE_STRICT=1` to turn
//! failures into a nonzero exit status.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use statseek_core::agents::lqr::{dare_solve, spectral_radius};
use statseek_core::engine::{
    k_in_from_fraction, run_replication, stats, ExperimentConfig, Learner, Phase, RunConfig, RunTrace,
};
use statseek_core::query::qp::box_kkt_residual;
use statseek_core::{
    batch_refit, brute_force_fixed_points, extragradient, qp_solve, stationarity_residual, CollectiveProfile,
    Game, KalmanBank, Polytope, SampleLog, TOL_FEAS,
};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn bundled(name: &str) -> (ExperimentConfig, RunConfig, Game) {
    let path = configs_dir().join(format!("{name}.json"));
    let text = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    let config = ExperimentConfig::from_json(&text).unwrap();
    let run = config.run_config().unwrap();
    let game = Game::build(&config.game_spec()).unwrap();
    (config, run, game)
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

fn first_active_below(trace: &RunTrace, k_in: usize, tol: f64) -> Option<usize> {
    trace
        .records
        .iter()
        .find(|r| r.phase == Phase::Active && r.residual < tol)
        .map(|r| r.k - k_in)
}

fn quadratic_game() -> Outcome {
    let (_, mut cfg, game) = bundled("quadratic10");
    cfg.k = 100;
    cfg.k_in = 10;
    cfg.beta = 1.0;
    let start = Instant::now();
    let pg = game.pseudo_gradient.as_ref().unwrap();
    let x0: Vec<f64> = game.omega.lower().iter().zip(game.omega.upper()).map(|(l, u)| 0.5 * (l + u)).collect();
    let reference = extragradient(pg, &x0, None, 1e-12, 1_000_000).unwrap();

    let mut converged = 0;
    let mut worst_gap: f64 = 0.0;
    let mut active: Vec<Option<usize>> = Vec::new();
    for rep in 0..20 {
        let Ok((trace, verdict)) = run_replication(&cfg, &game, rep) else {
            active.push(None);
            continue;
        };
        if verdict.converged {
            converged += 1;
            worst_gap = worst_gap.max(distance(&verdict.final_query, &reference));
        }
        active.push(first_active_below(&trace, cfg.k_in, 1e-6));
    }
    let elapsed = start.elapsed().as_secs_f64();
    let within = active.iter().filter(|a| a.is_some_and(|a| a <= 20)).count();
    let mut reached: Vec<usize> = active.iter().flatten().copied().collect();
    reached.sort_unstable();
    let median = reached.get(reached.len() / 2).copied();
    let pass = converged >= 18 && worst_gap <= 1e-4 && within == 20 && elapsed <= 10.0;
    outcome(
        pass,
        format!(
            "converged {converged}/20, max gap to extragradient {worst_gap:.2e}, \
             residual<1e-6 within 20 active iterations in {within}/20 runs \
             (median {median:?}, sorted {reached:?}), {elapsed:.2}s"
        ),
    )
}

fn certificate_signs() -> Outcome {
    let (_, cfg, game) = bundled("quadratic10");
    let mut lams = Vec::new();
    for rep in 0..20 {
        if let Ok((_, v)) = run_replication(&cfg, &game, rep) {
            if v.converged {
                lams.push(v.lambda_min_h.unwrap_or(f64::NAN));
            }
        }
    }
    let (_, icfg, igame) = bundled("internet");
    let inet = run_replication(&icfg, &igame, 0).ok().and_then(|(_, v)| v.converged.then_some(v));
    let inet_lam = inet.and_then(|v| v.lambda_min_h);
    let quad_ok = !lams.is_empty() && lams.iter().all(|&l| (0.02..=0.5).contains(&l));
    let lo = lams.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = lams.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    outcome(
        quad_ok && inet_lam.is_some_and(|l| l > 0.0),
        format!("quadratic λ_min in [{lo:.4}, {hi:.4}] over {} runs, internet λ_min {inet_lam:?}", lams.len()),
    )
}

fn internet_gnep() -> Outcome {
    let (_, cfg, game) = bundled("internet");
    let Ok((_, v)) = run_replication(&cfg, &game, 0) else {
        return outcome(false, "run aborted");
    };
    let profile = CollectiveProfile::new(v.final_query.clone(), game.partition.clone()).unwrap();
    let stat = stationarity_residual(&profile, &game.agents).unwrap();
    let total: f64 = v.final_query.iter().sum();
    let x1 = v.final_query[0];
    outcome(
        v.converged && total <= 1.0 + 1e-8 && (0.3..=0.5).contains(&x1) && stat <= 1e-8,
        format!("converged {}, 1ᵀx = {total:.10}, x₁ = {x1:?}, stationarity {stat:.2e}", v.converged),
    )
}

fn no_equilibrium() -> Outcome {
    let (_, cfg, game) = bundled("no_eq");
    let trace = match run_replication(&cfg, &game, 0) {
        Ok((trace, v)) if !v.converged => trace,
        Ok(_) => return outcome(false, "run reported convergence"),
        Err(e) => return outcome(false, format!("run aborted: {e}")),
    };
    let max_norm = |k: usize| {
        trace.records[k - 1]
            .theta_norms()
            .into_iter()
            .fold(0.0_f64, f64::max)
    };
    let (early, late) = (max_norm(200), max_norm(1000));
    let fixed = brute_force_fixed_points(&game.agents, &game.partition, &game.omega, 0.01, None).unwrap();
    outcome(
        trace.len() == 1000 && late > early && fixed.is_empty(),
        format!("max‖θ‖ {early:.3} at k=200, {late:.3} at k=1000; {} grid fixed points", fixed.len()),
    )
}

fn kalman_batch_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let n_own = rng.gen_range(1..=3);
        let n_others = rng.gen_range(1..=5);
        let alpha = 10f64.powf(rng.gen_range(0.0..4.0));
        let samples = rng.gen_range(1..=40);
        let mut bank = KalmanBank::new(n_own, n_others, alpha, 0.0).unwrap();
        let mut log = SampleLog::new(n_own, n_others);
        for t in 0..samples {
            let q: Vec<f64> = (0..n_others).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let r: Vec<f64> = (0..n_own).map(|_| rng.gen_range(-5.0..5.0)).collect();
            bank.kf_step(&q, &r).unwrap();
            log.push(t, q, r).unwrap();
        }
        let a = bank.theta();
        let b = batch_refit(&log, alpha).unwrap().theta();
        let norm = b.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-300);
        worst = worst.max(distance(&a, &b) / norm);
    }
    outcome(worst <= 1e-8, format!("max relative error {worst:.2e} over 100 logs"))
}

fn projected_gradient(h: &DMatrix<f64>, g: &DVector<f64>, lo: &[f64], hi: &[f64]) -> DVector<f64> {
    let step = 1.0 / h.symmetric_eigenvalues().max();
    let clip = |v: DVector<f64>| DVector::from_iterator(v.len(), v.iter().enumerate().map(|(j, x)| x.clamp(lo[j], hi[j])));
    let mut x = clip(DVector::zeros(g.len()));
    for _ in 0..2_000_000 {
        let next = clip(&x - (h * &x + g) * step);
        let moved = (&next - &x).amax();
        x = next;
        if moved < 1e-15 {
            break;
        }
    }
    x
}

fn qp_solver() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let (mut worst_kkt, mut worst_gap): (f64, f64) = (0.0, 0.0);
    for _ in 0..200 {
        let n = rng.gen_range(1..=20);
        let l = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        let h = &l * l.transpose() + DMatrix::identity(n, n) * rng.gen_range(0.1..1.0);
        let g = DVector::from_fn(n, |_, _| rng.gen_range(-5.0..5.0));
        let lo: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..0.0)).collect();
        let hi: Vec<f64> = lo.iter().map(|l| l + rng.gen_range(0.1..3.0)).collect();
        let omega = Polytope::from_box(lo.clone(), hi.clone()).unwrap();
        let sol = qp_solve(&h, &g, &omega, 0.0).unwrap();
        worst_kkt = worst_kkt.max(box_kkt_residual(&h, &g, &lo, &hi, &sol.x));
        worst_gap = worst_gap.max((&sol.x - projected_gradient(&h, &g, &lo, &hi)).amax());
    }
    outcome(
        worst_kkt <= 1e-8 && worst_gap <= 1e-6,
        format!("max KKT residual {worst_kkt:.2e}, max gap to projected gradient {worst_gap:.2e}"),
    )
}

fn riccati_residual(a: &DMatrix<f64>, b: &DMatrix<f64>, q: &DMatrix<f64>, r: &DMatrix<f64>, p: &DMatrix<f64>) -> f64 {
    let bpa = b.transpose() * p * a;
    let s = (r + b.transpose() * p * b).try_inverse().unwrap();
    (a.transpose() * p * a - bpa.transpose() * s * &bpa + q - p).norm()
}

fn dare() -> Outcome {
    let one = |v: f64| DMatrix::from_element(1, 1, v);
    let p = dare_solve(&one(0.5), &one(1.0), &one(1.0), &one(1.0)).unwrap()[(0, 0)];
    let closed_form = (0.25 + 4.0625_f64.sqrt()) / 2.0;
    let scalar_ok = (p - closed_form).abs() <= 1e-9 && format!("{p:.6}") == "1.132782";

    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let (mut worst_res, mut worst_rho): (f64, f64) = (0.0, 0.0);
    let mut solved = 0;
    while solved < 50 {
        let n = rng.gen_range(2..=6);
        let m = rng.gen_range(1..=3);
        let a = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0)) * 0.8;
        let b = DMatrix::from_fn(n, m, |_, _| rng.gen_range(-1.0..1.0));
        let w = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        let q = &w * w.transpose() + DMatrix::identity(n, n) * 0.1;
        let r = DMatrix::identity(m, m) * rng.gen_range(0.5..5.0);
        // keep plants whose uncontrollable part is stable
        let mut ctrb = b.clone();
        let mut block = b.clone();
        for _ in 1..n {
            block = &a * block;
            ctrb = DMatrix::from_columns(&ctrb.column_iter().chain(block.column_iter()).collect::<Vec<_>>());
        }
        if ctrb.rank(1e-9) < n {
            continue;
        }
        solved += 1;
        match dare_solve(&a, &b, &q, &r) {
            Ok(p) => {
                worst_res = worst_res.max(riccati_residual(&a, &b, &q, &r, &p) / (1.0 + p.norm()));
                let s = (&r + b.transpose() * &p * &b).try_inverse().unwrap();
                let k = s * b.transpose() * &p * &a;
                worst_rho = worst_rho.max(spectral_radius(&(&a - &b * k)));
            }
            Err(_) => worst_res = f64::INFINITY,
        }
    }
    outcome(
        scalar_ok && worst_res <= 1e-9 && worst_rho < 1.0,
        format!("scalar p = {p:.9}, worst relative residual {worst_res:.2e}, worst closed-loop radius {worst_rho:.4}"),
    )
}

fn lqr_synthesis() -> Outcome {
    let (config, cfg, game) = bundled("lqr_stats");
    let start = Instant::now();
    let s = stats(&cfg, &game, config.reps).unwrap();
    let elapsed = start.elapsed().as_secs_f64();
    let inst = game.lqr.as_ref().unwrap();
    let good: Vec<_> = s.verdicts.iter().filter(|v| v.converged).collect();
    let stat_ok = good.iter().all(|v| v.final_stationarity <= 1e-6);
    let lam_ok = good.iter().all(|v| v.lambda_min_h.is_some_and(|l| l > 0.0));
    let rho = good
        .iter()
        .map(|v| inst.closed_loop_radius(&v.final_query).unwrap())
        .fold(0.0_f64, f64::max);
    outcome(
        s.percent_converged > 0.0
            && stat_ok
            && lam_ok
            && rho < 1.0
            && s.same_profile == Some(true)
            && elapsed <= 300.0
            && config.reps == 100
            && cfg.beta == 2.0
            && cfg.k_in == k_in_from_fraction(0.1, cfg.k),
        format!(
            "{}% of {} converged, min λ_min {:?}, max ρ {rho:.4}, spread {:?}, max stationarity {:?}, {elapsed:.2}s",
            s.percent_converged, s.reps, s.min_lambda_min, s.max_profile_spread, s.max_stationarity
        ),
    )
}

fn statseek(args: &[&str]) -> bool {
    Command::new(env!("CARGO_BIN_EXE_statseek"))
        .args(args)
        .env("STATSEEK_LOG", "error")
        .output()
        .map(|o| o.status.success())
        .unwrap_or(false)
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let cfg = |name: &str| configs_dir().join(format!("{name}.json")).to_string_lossy().into_owned();
    let jobs: [(&str, &str, &[&str]); 4] = [
        ("run", "quadratic10", &["trace.csv", "verdict.json"]),
        ("run", "lqr_random", &["trace.csv", "verdict.json"]),
        ("sweep", "hyper_quadratic10", &["grid.csv"]),
        ("stats", "lqr_stats", &["stats.json"]),
    ];
    let mut mismatched = Vec::new();
    for (cmd, name, files) in jobs {
        let outs: Vec<PathBuf> = (0..2).map(|t| dir.path().join(format!("{name}-{t}"))).collect();
        for out in &outs {
            let out = out.to_string_lossy();
            if !statseek(&[cmd, "--config", &cfg(name), "--seed", "7", "--out", &out]) {
                mismatched.push(format!("{cmd} {name} failed"));
            }
        }
        for f in files {
            let a = std::fs::read(outs[0].join(f)).unwrap_or_default();
            let b = std::fs::read(outs[1].join(f)).unwrap_or_default();
            if a.is_empty() || a != b {
                mismatched.push(format!("{name}/{f}"));
            }
        }
    }
    outcome(mismatched.is_empty(), format!("4 commands repeated, differing outputs: {mismatched:?}"))
}

fn invariants() -> Outcome {
    let names = [
        "quadratic10",
        "quadratic10_stats",
        "hyper_quadratic10",
        "internet",
        "infinite_eq",
        "no_eq",
        "qp_gnep",
        "lqr_random",
        "hyper_lqr",
        "lqr_stats",
    ];
    let mut problems = Vec::new();
    let mut runs = 0;
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    for name in names {
        let (config, base, game) = bundled(name);
        let mut cfgs = Vec::new();
        if let Some(grid) = &config.sweep {
            for &beta in &grid.beta {
                for &f in &grid.k_in_fraction {
                    cfgs.push(RunConfig {
                        beta,
                        k_in: k_in_from_fraction(f, base.k),
                        ..base.clone()
                    });
                }
            }
        } else {
            cfgs.push(base.clone());
        }
        let reps = config.reps.clamp(1, 5) as u64;
        for cfg in &cfgs {
            for rep in 0..reps {
                runs += 1;
                let tag = format!("{name} β={} K_in={} rep {rep}", cfg.beta, cfg.k_in);
                let mut learner = Learner::new(&game, cfg, rep).unwrap();
                let step = |l: &mut Learner| if l.trace.is_empty() { l.init_phase() } else { l.step() };
                loop {
                    if let Err(e) = step(&mut learner) {
                        problems.push(format!("{tag}: {e}"));
                        break;
                    }
                    let row = learner.trace.last().unwrap();
                    if game.omega.max_violation(&row.x_hat).unwrap() > TOL_FEAS {
                        problems.push(format!("{tag}: infeasible query at k={}", row.k));
                    }
                    let y: Vec<f64> = row.x_hat.iter().map(|v| v + rng.gen_range(-1.0..1.0)).collect();
                    let once = game.omega.project(&y).unwrap();
                    let twice = game.omega.project(&once).unwrap();
                    if distance(&once, &twice) > 1e-9 {
                        problems.push(format!("{tag}: projection not idempotent"));
                    }
                    for bank in learner.banks() {
                        for c in 0..bank.output_dim() {
                            let p = bank.covariance(c);
                            if (p - p.transpose()).amax() > 0.0 || p.clone().cholesky().is_none() {
                                problems.push(format!("{tag}: covariance lost positivity at k={}", row.k));
                            }
                        }
                    }
                    if learner.trace.len() >= cfg.k || (cfg.early_stop && learner.converged()) {
                        break;
                    }
                }
                match learner.finish(rep) {
                    Ok(v) if v.converged && v.final_stationarity > 10.0 * cfg.tol_conv => {
                        problems.push(format!("{tag}: converged but not stationary"))
                    }
                    Ok(_) => {}
                    Err(e) => problems.push(format!("{tag}: {e}")),
                }
            }
        }
    }
    problems.dedup();
    let shown: Vec<_> = problems.iter().take(5).collect();
    outcome(problems.is_empty(), format!("{runs} runs over {} configs, problems: {shown:?}", names.len()))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("quadratic Nash game", quadratic_game),
        ("certificate signs", certificate_signs),
        ("internet-switching GNEP", internet_gnep),
        ("no-equilibrium game", no_equilibrium),
        ("Kalman/batch equivalence", kalman_batch_equivalence),
        ("QP solver", qp_solver),
        ("DARE", dare),
        ("LQR synthesis", lqr_synthesis),
        ("determinism", determinism),
        ("invariant suite", invariants),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let o = check();
        if !o.pass {
            failed += 1;
        }
        println!("{} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 && std::env::var_os("STATSEEK_ACCEPTANCE_STRICT").is_some_and(|v| v == "1") {
        std::process::exit(1);
    }
}
