//! Validates the bundled filter set and measures the orientation of every
//! level-2 subband from the spectral peak of its impulse response.

use svt_core::baselines::spectral_peak_angle;
use svt_core::dtcwt::{impulse_response_2d, NOMINAL_ANGLES};
use svt_core::filters::{check_half_sample_delay, check_pr, default_filter_set, group_delay};

fn main() -> svt_core::Result<()> {
    let set = default_filter_set();
    println!("filter set {}", set.name);
    for (name, bank) in [
        ("level-1 tree a", &set.level1_tree_a),
        ("level-1 tree b", &set.level1_tree_b),
        ("q-shift tree a", &set.qshift_tree_a),
        ("q-shift tree b", &set.qshift_tree_b),
    ] {
        println!("  {name:<15} PR residual {:.3e}", check_pr(&bank.analysis, &bank.synthesis));
    }
    let da = group_delay(&set.qshift_tree_a.analysis.low)?;
    let db = group_delay(&set.qshift_tree_b.analysis.low)?;
    let err = check_half_sample_delay(&set.qshift_tree_a.analysis, &set.qshift_tree_b.analysis)?;
    println!("  q-shift group delays {da:.4} / {db:.4}, half-sample error {err:.2e}");

    println!("\norientation  nominal  measured");
    for (k, nominal) in NOMINAL_ANGLES.iter().enumerate() {
        let img = impulse_response_2d(&set, 2, k, 64)?;
        let angle = spectral_peak_angle(&img)?;
        println!("  {k}          {nominal:>5.1}    {angle:>6.2}");
    }
    Ok(())
}
