//! Parameter and multiply-accumulate tables for the model presets, plus a
//! forward pass of the tiny configuration.

use svt_core::model::{count_flops, count_params, svt_forward, ModelConfig, ModelParams};
use svt_core::synth::random_tensor;

fn main() -> svt_core::Result<()> {
    println!("model  params      GMACs  (attention scores share)");
    for name in ["ti", "xs", "s", "b"] {
        let cfg = ModelConfig::preset(name)?;
        let p = count_params(&cfg)?;
        let f = count_flops(&cfg)?;
        println!(
            "{name:<5}  {:>10}  {:.3}  ({:.1}%)",
            p.total(),
            f.gflops(),
            100.0 * f.attention_scores as f64 / f.total() as f64
        );
    }

    let cfg = ModelConfig::tiny();
    let params = ModelParams::init(&cfg, 0)?;
    println!("\ntiny: closed form {} vs instantiated {}", count_params(&cfg)?.total(), params.param_count());
    for (name, n) in count_params(&cfg)?.entries() {
        println!("  {name:<9} {n}");
    }
    let logits = svt_forward(&random_tensor(&[3, 32, 32], 1), &params, &cfg)?;
    println!("logits {:?}", logits.data().iter().map(|v| format!("{v:.4}")).collect::<Vec<_>>());
    Ok(())
}
