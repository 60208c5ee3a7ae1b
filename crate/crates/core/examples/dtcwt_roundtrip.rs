//! Forward and inverse DTCWT on a random feature map: pyramid shapes,
//! reconstruction error and per-subband energy.

use svt_core::dtcwt::{dtcwt_forward, dtcwt_inverse, subband_energy, TransformConfig};
use svt_core::synth::random_tensor;

fn main() -> svt_core::Result<()> {
    let x = random_tensor(&[4, 64, 64], 1);
    for levels in 1..=3 {
        let cfg = TransformConfig::with_levels(levels)?;
        let p = dtcwt_forward(&x, &cfg)?;
        let y = dtcwt_inverse(&p, &cfg)?;
        println!("M={levels}  lowpass {}", p.lowpass.shape());
        for (m, h) in p.highpass.iter().enumerate() {
            println!("      level {} highpass {}", m + 1, h.shape());
        }
        println!("      relative MSE after round trip {:.3e}", y.relative_mse(&x)?);
        let e = subband_energy(&p);
        let total_high: f64 = e.data().iter().sum();
        println!(
            "      energy: lowpass {:.1}, highpass {total_high:.1} (input {:.1})",
            p.lowpass.sum_sq(),
            x.sum_sq()
        );
    }
    Ok(())
}
