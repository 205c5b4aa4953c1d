use sed_core::field::{build_field, FrequencyGrid, ModeRange};
use std::time::Instant;

fn main() {
    let grid = FrequencyGrid::new(10_000, 85_865).unwrap();
    let field = build_field(1, grid, 5.325e-5).unwrap();
    let range = ModeRange::new(1, 85_865);
    // warmup
    let mut acc = 0.0;
    for i in 0..20 {
        acc += field.eval_c(range, 100.0 + i as f64).x;
    }
    let t0 = Instant::now();
    let n = 200;
    for i in 0..n {
        acc += field.eval_c(range, 500.0 + i as f64 * 0.371).x;
    }
    let dt = t0.elapsed().as_secs_f64();
    println!(
        "eval_c: {:.3} ms/eval ({:.2} ns/mode)  [{acc:e}]",
        dt / n as f64 * 1e3,
        dt / n as f64 / 85_865.0 * 1e9
    );
}
