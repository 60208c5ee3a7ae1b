//! Finite-difference check of the scatter-layer gradients over a few seeds.

use svt_core::gradcheck::{gradcheck_layer, tiny_layer};

fn main() -> svt_core::Result<()> {
    let (cfg, dims) = tiny_layer()?;
    for seed in 0..3 {
        println!("seed {seed}");
        for c in gradcheck_layer(&cfg, dims, seed, false)? {
            println!("  {:<8} {:>4} elements  max rel err {:.2e}", c.name, c.elements, c.max_rel_error);
        }
    }
    Ok(())
}
