//! The conic solver on its own: Tsirelson's bound for CHSH from the
//! 5x5 moment matrix of {1, A0, A1, B0, B1}.
//!
//! `cargo run --example chsh_sdp`

use hardy_bounds::sdp::{check_certificate, solve, ConicProgram, PsdBlock};

pub fn run_example() -> hardy_bounds::Result<()> {
    // Variables: <A0A1>, <B0B1>, four correlators <AxBy>, four marginals.
    let mut block = PsdBlock::new(5);
    for i in 0..5 {
        block.constant.push((i, i, 1.0));
    }
    block.linear.push((0, 1, 2, 1.0));
    block.linear.push((1, 3, 4, 1.0));
    for x in 0..2 {
        for y in 0..2 {
            block.linear.push((2 + 2 * x + y, 1 + x, 3 + y, 1.0));
        }
    }
    for k in 0..4 {
        block.linear.push((6 + k, 0, 1 + k, 1.0));
    }
    let program = ConicProgram {
        num_vars: 10,
        objective: vec![(2, 1.0), (3, 1.0), (4, 1.0), (5, -1.0)],
        psd_blocks: vec![block],
        ..Default::default()
    };
    let sol = solve(&program)?;
    let res = check_certificate(&program, &sol);
    println!("status {:?} after {} iterations", sol.status, sol.iterations);
    println!("CHSH value {:.12}  (2 sqrt 2 = {:.12})", sol.objective_value, 2.0 * 2f64.sqrt());
    println!("dual bound {:.12}", sol.dual_bound);
    println!(
        "residuals: equality {:.1e}, min eig {:.1e}, gap {:.1e}",
        res.equality, res.min_eigenvalue, res.gap
    );
    Ok(())
}

#[allow(dead_code)]
fn main() {
    if let Err(e) = run_example() {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
