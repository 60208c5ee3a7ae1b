//! Fits one scatter layer to the outputs of a frozen, randomly perturbed
//! copy of itself with plain gradient descent.

use svt_core::dtcwt::TransformConfig;
use svt_core::gating::{ChannelSplit, ScatterLayerConfig};
use svt_core::train::{fit_scatter_layer, teacher_student};

fn main() -> svt_core::Result<()> {
    let sigma: f64 = std::env::args().nth(1).map_or(0.1, |s| s.parse().expect("sigma"));
    let cfg = ScatterLayerConfig::new(TransformConfig::with_levels(1)?, ChannelSplit::new(4, 2)?);
    let (inputs, targets, student) = teacher_student(&cfg, [8, 8, 8], 16, sigma, 7)?;
    let t0 = std::time::Instant::now();
    let report = fit_scatter_layer(student, &cfg, &inputs, &targets, 0.1, 500)?;
    for (step, mse) in report.mse_history.iter().enumerate().step_by(50) {
        println!("step {step:>3}  mse {mse:.4e}");
    }
    println!(
        "final mse {:.4e}, reduction {:.2}% in {:.1?}",
        report.final_mse(),
        100.0 * report.reduction(),
        t0.elapsed()
    );
    Ok(())
}
