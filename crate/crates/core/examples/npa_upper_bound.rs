//! NPA upper bounds on the Hardy probability at a few constraint levels.
//!
//! `cargo run --release --example npa_upper_bound`

use std::time::Instant;

use hardy_bounds::npa::{build_problem, upper_bound};
use hardy_bounds::quantum::hardy_max;

pub fn run_example() -> hardy_bounds::Result<()> {
    println!("closed-form optimum at eps = 0: {:.12}", hardy_max());
    for level in 1..=3 {
        let p = build_problem(0.0, level)?;
        println!(
            "level {level}: {} words, {} moment variables",
            p.dim(),
            p.moments.len()
        );
    }
    println!("{:>6} {:>5} {:>14} {:>10} {:>9} {:>6}", "eps", "level", "upper", "gap", "status", "ms");
    for eps in [0.0, 0.05, 0.1, 0.2, 1.0 / 3.0] {
        for level in 1..=3 {
            let t = Instant::now();
            let b = upper_bound(eps, level)?;
            println!(
                "{eps:>6.3} {level:>5} {:>14.10} {:>10.2e} {:>9?} {:>6}",
                b.value.unwrap_or(f64::NAN),
                b.residuals.gap,
                b.solver_status,
                t.elapsed().as_millis()
            );
        }
    }
    Ok(())
}

#[allow(dead_code)]
fn main() {
    if let Err(e) = run_example() {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
