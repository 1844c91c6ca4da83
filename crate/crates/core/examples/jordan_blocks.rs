//! Split a pair of involutions into blocks of size at most two, then check
//! that a model built from them is a convex mix of qubit behaviors.
//!
//! `cargo run --example jordan_blocks`

use hardy_bounds::behavior::hardy_report;
use hardy_bounds::jordan::{blockwise_behavior, decompose, random_block_pair, Observable};
use hardy_bounds::quantum::{born_behavior, BinaryMeasurement};
use hardy_bounds::selftest::DirectSumHardyState;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn run_example() -> hardy_bounds::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for d in [2, 3, 5, 8] {
        let (a0, a1) = random_block_pair(d / 2, d % 2, &mut rng);
        let dec = decompose(&a0, &a1)?;
        let dims: Vec<usize> = dec.blocks.iter().map(|b| b.dim()).collect();
        let phases: Vec<String> = dec.blocks.iter().map(|b| format!("{:.3}", b.phase)).collect();
        println!(
            "d = {d}: blocks {dims:?}, phases [{}], reconstruction {:.1e}",
            phases.join(", "),
            dec.reconstruction_error(&a0, &a1)
        );
    }

    // Two blocks per side: each pair of blocks sees an optimal Hardy behavior.
    let state = DirectSumHardyState::new(vec![0.3, 0.7], vec![0.5, 0.5], 0.4)?;
    let model = state.model();
    let obs = |m: &[BinaryMeasurement; 2]| -> hardy_bounds::Result<_> {
        Ok((
            Observable::from_measurement(&m[0])?,
            Observable::from_measurement(&m[1])?,
        ))
    };
    let (x0, x1) = obs(&model.alice)?;
    let (y0, y1) = obs(&model.bob)?;
    let split = blockwise_behavior(&model, &decompose(&x0, &x1)?, &decompose(&y0, &y1)?)?;
    for (i, row) in split.weights.iter().enumerate() {
        for (j, q) in row.iter().enumerate() {
            let h = split.behaviors[i][j].as_ref().map(|b| hardy_report(b).hardy);
            println!("block ({i},{j}): weight {q:.3}, hardy {h:?}");
        }
    }
    let direct = born_behavior(&model);
    let mixed = split.recombined();
    let err = direct.cells().zip(mixed.cells()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    println!("max cell difference after recombining: {err:.1e}");

    Ok(())
}

#[allow(dead_code)]
fn main() {
    if let Err(e) = run_example() {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
