//! Acceptance checks, one PASS/FAIL line per criterion. Runs without the
//! libtest harness so the lines always reach stdout:
//!
//! `cargo test --release --test acceptance`

use std::time::{Duration, Instant};

use hardy_bounds::behavior::{local_lp_oracle, Behavior};
use hardy_bounds::cli::{cmd_ideal, parse_csv, to_csv, SweepRow};
use hardy_bounds::jordan::{blockwise_behavior, decompose, random_block_pair, Observable};
use hardy_bounds::npa::{self, BoundStatus};
use hardy_bounds::quantum::{born_behavior, BinaryMeasurement, CMatrix, QuantumModel, State};
use hardy_bounds::qubitopt::{self, decode, VariationalPoint};
use hardy_bounds::sdp::{check_certificate, solve};
use hardy_bounds::selftest::{selftest_report, DirectSumHardyState};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const CLOSED_FORM: f64 = 0.0901699437;

struct Outcome {
    pass: bool,
    detail: String,
}

fn check(id: usize, name: &str, budget: Duration, f: impl FnOnce() -> Outcome) -> bool {
    let t = Instant::now();
    let out = f();
    let elapsed = t.elapsed();
    let pass = out.pass && elapsed < budget;
    println!(
        "{} criterion {id} ({name}): {} [{:.2}s, budget {}s]",
        if pass { "PASS" } else { "FAIL" },
        out.detail,
        elapsed.as_secs_f64(),
        budget.as_secs()
    );
    pass
}

fn max_cell_diff(a: &Behavior, b: &Behavior) -> f64 {
    a.cells().zip(b.cells()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn signaling(b: &Behavior) -> f64 {
    let mut worst: f64 = 0.0;
    for o in 0..2 {
        for input in 0..2 {
            worst = worst.max((b.alice_marginal(o, input, 0) - b.alice_marginal(o, input, 1)).abs());
            worst = worst.max((b.bob_marginal(o, input, 0) - b.bob_marginal(o, input, 1)).abs());
        }
    }
    worst
}

fn random_density(d: usize, rng: &mut impl Rng) -> CMatrix {
    let g = CMatrix::from_fn(d, d, |_, _| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
    let rho = &g * g.adjoint();
    let tr = rho.trace();
    rho / tr
}

fn measurement(o: &Observable) -> BinaryMeasurement {
    let d = o.dim();
    let effect = (o.matrix() + CMatrix::identity(d, d)) * Complex64::new(0.5, 0.0);
    BinaryMeasurement::new(effect).expect("effect of an involution")
}

fn ideal() -> Outcome {
    let r = cmd_ideal();
    let dev = (r.hardy - CLOSED_FORM).abs();
    let cells = r.cells.iter().fold(0.0f64, |m, c| m.max(c.abs()));
    Outcome {
        pass: dev <= 1e-10 && cells <= 1e-12,
        detail: format!("hardy {:.12}, |dev| {dev:.1e}, max constraint cell {cells:.1e}", r.hardy),
    }
}

fn npa_level3() -> Outcome {
    match npa::upper_bound(0.0, 3) {
        Ok(b) => {
            let v = b.value.unwrap_or(f64::NAN);
            Outcome {
                pass: b.solver_status != BoundStatus::Failed && (0.090169..=0.090270).contains(&v),
                detail: format!("upper {v:.10} ({:?}) in [0.090169, 0.090270]", b.solver_status),
            }
        }
        Err(e) => Outcome {
            pass: false,
            detail: format!("error {e}"),
        },
    }
}

fn sandwich() -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for eps in [0.02, 0.05, 0.10, 0.15, 0.20] {
        let up = npa::upper_bound(eps, 3).ok().and_then(|b| b.value);
        let lo = qubitopt::lower_bound(eps, 2000, 0).ok().filter(|r| r.feasible).map(|r| r.value);
        match (up, lo) {
            (Some(u), Some(l)) => {
                let ok = l <= u + 1e-6 && u - l <= 1e-3;
                pass &= ok;
                parts.push(format!("eps {eps}: {l:.8} <= {u:.8} gap {:.1e}", u - l));
            }
            _ => {
                pass = false;
                parts.push(format!("eps {eps}: missing bound"));
            }
        }
    }
    Outcome {
        pass,
        detail: parts.join("; "),
    }
}

fn local_lp() -> Outcome {
    let mut worst: f64 = 0.0;
    for i in 0..35 {
        let eps = i as f64 / 34.0 / 3.0;
        let v = local_lp_oracle(eps).unwrap_or(f64::NAN);
        let d = (v - 3.0 * eps).abs();
        worst = if d.is_nan() { f64::INFINITY } else { worst.max(d) };
    }
    let zero = local_lp_oracle(0.0).unwrap_or(f64::NAN);
    Outcome {
        pass: worst <= 1e-9 && zero == 0.0,
        detail: format!("35 points on [0, 1/3], max |LP - 3 eps| {worst:.1e}, LP(0) = {zero}"),
    }
}

fn random_weights(n: usize, rng: &mut impl Rng) -> Vec<f64> {
    let w: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..1.0)).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|x| x / s).collect()
}

fn selftest() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (mut fid, mut hardy) = (0.0f64, 0.0f64);
    for _ in 0..50 {
        let r = random_weights(rng.random_range(1..=3), &mut rng);
        let s = random_weights(rng.random_range(1..=3), &mut rng);
        let theta = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
        let state = DirectSumHardyState::new(r, s, theta).expect("valid weights");
        let rep = selftest_report(&state);
        fid = fid.max((rep.fidelity - 1.0).abs());
        hardy = hardy.max((rep.hardy - CLOSED_FORM).abs());
    }
    Outcome {
        pass: fid <= 1e-10 && hardy <= 1e-10,
        detail: format!("50 instances, max |F - 1| {fid:.1e}, max |hardy - optimum| {hardy:.1e}"),
    }
}

fn jordan() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let (mut recon, mut cells, mut max_block) = (0.0f64, 0.0f64, 0usize);
    for d in [2, 4, 6, 8] {
        for _ in 0..100 {
            let (a0, a1) = random_block_pair(d / 2, 0, &mut rng);
            let (b0, b1) = random_block_pair(d / 2, 0, &mut rng);
            let (da, db) = match (decompose(&a0, &a1), decompose(&b0, &b1)) {
                (Ok(x), Ok(y)) => (x, y),
                _ => return Outcome { pass: false, detail: format!("decomposition failed at d = {d}") },
            };
            recon = recon.max(da.reconstruction_error(&a0, &a1)).max(db.reconstruction_error(&b0, &b1));
            max_block = max_block.max(da.max_block()).max(db.max_block());
            let state = State::new(random_density(d * d, &mut rng), (d, d)).expect("density");
            let model = QuantumModel::new(state, [measurement(&a0), measurement(&a1)], [measurement(&b0), measurement(&b1)])
                .expect("model");
            match blockwise_behavior(&model, &da, &db) {
                Ok(split) => cells = cells.max(max_cell_diff(&born_behavior(&model), &split.recombined())),
                Err(e) => return Outcome { pass: false, detail: format!("blockwise split failed: {e}") },
            }
        }
    }
    Outcome {
        pass: recon <= 1e-9 && max_block <= 2 && cells <= 1e-9,
        detail: format!("400 pairs, max reconstruction {recon:.1e}, max block {max_block}, max cell error {cells:.1e}"),
    }
}

fn properties() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut parts = Vec::new();
    let mut pass = true;

    let mut ns: f64 = 0.0;
    for i in 0..200 {
        let p = VariationalPoint::random(i % 2 == 1, &mut rng);
        ns = ns.max(signaling(&born_behavior(&decode(&p))));
    }
    pass &= ns <= 1e-9;
    parts.push(format!("signaling {ns:.1e}"));

    let mut mono: f64 = f64::NEG_INFINITY;
    let mut worst_cert: f64 = 0.0;
    for eps in [0.0, 0.1, 0.25] {
        let mut prev = f64::INFINITY;
        for level in 1..=3 {
            let Ok(problem) = npa::build_problem(eps, level) else {
                pass = false;
                continue;
            };
            let Ok(sol) = solve(&problem.program) else {
                pass = false;
                continue;
            };
            let r = check_certificate(&problem.program, &sol);
            let gap = r.gap.abs() / (1.0 + sol.objective_value.abs());
            worst_cert = worst_cert
                .max(r.equality)
                .max(-r.min_eigenvalue)
                .max(r.dual_infeasibility)
                .max(-r.dual_min_eigenvalue)
                .max(gap);
            let v = npa::upper_bound(eps, level).ok().and_then(|b| b.value).unwrap_or(f64::NAN);
            mono = mono.max(v - prev);
            prev = v;
        }
    }
    pass &= mono <= 1e-7 && worst_cert <= 1e-8;
    parts.push(format!("level increase {mono:.1e}"));
    parts.push(format!("certificate residual {worst_cert:.1e}"));

    let mut recompute: f64 = 0.0;
    for eps in [0.0, 0.07, 0.2] {
        match qubitopt::lower_bound(eps, 30, 3) {
            Ok(r) if r.feasible => {
                let b = born_behavior(&decode(&r.best_point));
                recompute = recompute.max((b.get(0, 0, 1, 1) - r.value).abs());
            }
            _ => pass = false,
        }
    }
    pass &= recompute <= 1e-10;
    parts.push(format!("optimizer recompute {recompute:.1e}"));

    let rows: Vec<SweepRow> = (0..50)
        .map(|i| {
            let eps = rng.random_range(0.0..0.34);
            let upper = (i % 7 != 0).then(|| rng.random_range(0.0..1.0));
            let lower = (i % 5 != 0).then(|| rng.random_range(0.0..1.0));
            SweepRow {
                eps,
                local: (3.0f64 * eps).min(1.0),
                upper,
                lower,
                gap: upper.zip(lower).map(|(u, l)| u - l),
                level: 1 + i % 3,
                restarts: 200,
            }
        })
        .collect();
    let csv_ok = match to_csv(&rows).and_then(|t| parse_csv(&t).map(|b| (t, b))) {
        Ok((text, back)) => to_csv(&back).map(|again| again == text).unwrap_or(false),
        Err(_) => false,
    };
    pass &= csv_ok;
    parts.push(format!("CSV round trip {}", if csv_ok { "bit-exact" } else { "mismatch" }));

    Outcome {
        pass,
        detail: parts.join(", "),
    }
}

fn main() {
    let results = [
        check(1, "ideal optimum", Duration::from_secs(1), ideal),
        check(2, "NPA level 3 at eps = 0", Duration::from_secs(60), npa_level3),
        check(3, "upper/lower sandwich", Duration::from_secs(1800), sandwich),
        check(4, "local bound", Duration::from_secs(5), local_lp),
        check(5, "self-test of direct sums", Duration::from_secs(10), selftest),
        check(6, "Jordan blocks", Duration::from_secs(30), jordan),
        check(7, "property suite", Duration::from_secs(600), properties),
    ];
    let passed = results.iter().filter(|&&p| p).count();
    println!("{passed}/{} criteria passed", results.len());
    if passed != results.len() {
        std::process::exit(1);
    }
}
