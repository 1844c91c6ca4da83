//! The two-qubit state and projectors that reach the Hardy maximum, with the
//! full behavior table recomputed from the Born rule.
//!
//! `cargo run --example ideal_optimum`

use hardy_bounds::behavior::{hardy_report, is_no_signaling};
use hardy_bounds::cli::cmd_ideal;
use hardy_bounds::quantum::{born_behavior, make_hardy_optimal};

pub fn run_example() -> hardy_bounds::Result<()> {
    let report = cmd_ideal();
    print!("{}", report.render());

    // The optimum does not depend on the relative phase of the |11> term.
    for theta in [0.7, -2.0] {
        let opt = make_hardy_optimal(theta);
        let b = born_behavior(&opt.model);
        let r = hardy_report(&b);
        println!(
            "theta = {theta:>4}: hardy = {:.12}, eps* = {:.1e}, no-signaling = {}",
            r.hardy,
            r.eps_star,
            is_no_signaling(&b)
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
