//! One scatter layer under each gating variant: parameter counts and how far
//! a lightly perturbed layer moves its input.

use svt_core::dtcwt::TransformConfig;
use svt_core::gating::{count_variant, scatter_layer_forward, ChannelSplit, GatingParams, GatingVariant, ScatterLayerConfig};
use svt_core::synth::random_tensor;

fn main() -> svt_core::Result<()> {
    let (c, s) = (16, 32);
    let x = random_tensor(&[c, s, s], 3);
    let base = ScatterLayerConfig::new(TransformConfig::with_levels(2)?, ChannelSplit::default_for(c)?);
    println!("input {c}x{s}x{s}, split {}x{}, M=2", base.split.blocks, base.split.block_dim);
    println!("variant  params    MACs      identity err  perturbed change");
    for v in GatingVariant::ablation_grid() {
        let cfg = base.clone().with_variant(v);
        let k = count_variant(&cfg, c, s, s);
        let id = scatter_layer_forward(&x, &GatingParams::identity(&cfg, c, s, s)?, &cfg)?;
        let p = GatingParams::perturbed_identity(&cfg, c, s, s, 0.05, 0.0, 9)?;
        let y = scatter_layer_forward(&x, &p, &cfg)?;
        println!(
            "{v}     {:<8}  {:<8}  {:.2e}      {:.3e}",
            k.total(),
            k.macs,
            id.relative_mse(&x)?,
            y.relative_mse(&x)?
        );
    }
    Ok(())
}
