//! Best local strategy for relaxed Hardy constraints: an exact LP over the 16
//! deterministic strategies, compared with min(3 eps, 1).
//!
//! `cargo run --example local_bound`

use hardy_bounds::behavior::{constraint_cells, local_bound, local_lp_oracle, DeterministicStrategy, PLUS};

pub fn run_example() -> hardy_bounds::Result<()> {
    println!("deterministic strategies with p(++|11) = 1:");
    for s in DeterministicStrategy::all() {
        let b = s.behavior();
        if b.get(PLUS, PLUS, 1, 1) == 1.0 {
            let cells = constraint_cells(&b);
            println!("  alice {:?} bob {:?}  violated cells {:?}", s.alice, s.bob, cells);
        }
    }
    println!("{:>8} {:>12} {:>12}", "eps", "LP", "min(3e,1)");
    for i in 0..=8 {
        let eps = 0.05 * i as f64;
        let lp = local_lp_oracle(eps)?;
        println!("{eps:>8.3} {lp:>12.9} {:>12.9}", local_bound(eps)?);
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
