//! The three curves over a small eps grid, written as CSV and SVG into a
//! scratch directory. `hardy sweep` does the same from the command line.
//!
//! `cargo run --release --example hardy_sweep`

use hardy_bounds::cli::{compute_sweep, render_svg, to_csv, RunConfig};

pub fn run_example() -> hardy_bounds::Result<()> {
    let cfg = RunConfig {
        eps_min: 0.0,
        eps_max: 0.3,
        steps: 4,
        level: 2,
        restarts: 20,
        seed: 5,
        ..RunConfig::default()
    };
    let out = compute_sweep(&cfg)?;
    let csv = to_csv(&out.rows)?;
    print!("{csv}");
    for w in &out.warnings {
        println!("warning: {w}");
    }
    let dir = std::env::temp_dir().join("hardy_sweep_example");
    std::fs::create_dir_all(&dir)?;
    std::fs::write(dir.join("sweep.csv"), csv)?;
    std::fs::write(dir.join("sweep.svg"), render_svg(&out.rows))?;
    println!("wrote {}", dir.display());
    Ok(())
}

#[allow(dead_code)]
fn main() {
    if let Err(e) = run_example() {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
