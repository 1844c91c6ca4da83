//! Lower bounds from explicit two-qubit strategies, found by multistart
//! quasi-Newton search over states and projective measurements.
//!
//! `cargo run --release --example qubit_lower_bound`

use std::time::Instant;

use hardy_bounds::behavior::hardy_report;
use hardy_bounds::qubitopt::{decode, lower_bound};
use hardy_bounds::quantum::born_behavior;

pub fn run_example() -> hardy_bounds::Result<()> {
    println!("{:>6} {:>14} {:>12} {:>8}", "eps", "lower", "max cell", "ms");
    for eps in [0.0, 0.05, 0.1, 0.2] {
        let t = Instant::now();
        let res = lower_bound(eps, 40, 1)?;
        let model = decode(&res.best_point);
        let rep = hardy_report(&born_behavior(&model));
        println!(
            "{eps:>6.3} {:>14.10} {:>12.3e} {:>8}",
            res.value,
            rep.eps_star,
            t.elapsed().as_millis()
        );
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
