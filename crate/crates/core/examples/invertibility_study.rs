//! Reconstruction error of FFT, DWT and DTCWT round trips with quantized
//! coefficients on a smooth synthetic corpus.

use std::sync::Arc;

use svt_core::baselines::{reconstruction_report, Transform};
use svt_core::filters::default_filter_set;
use svt_core::synth::smooth_corpus;

fn main() -> svt_core::Result<()> {
    let set = Arc::new(default_filter_set());
    let images = smooth_corpus(10, 64, 3);
    let transforms = [
        Transform::Fft,
        Transform::Dwt(1),
        Transform::Dwt(2),
        Transform::Dwt(3),
        Transform::Dtcwt(1),
        Transform::Dtcwt(2),
        Transform::Dtcwt(3),
    ];
    for bits in [None, Some(8), Some(6)] {
        println!("quantization: {}", bits.map_or("none".to_string(), |b| format!("{b} bits")));
        for t in transforms {
            let mut mse = 0.0;
            for x in &images {
                mse += reconstruction_report(x, t, bits, 1.0, &set)?.mse;
            }
            mse /= images.len() as f64;
            println!("  {:<9} mse {mse:.3e}", t.to_string());
        }
    }
    Ok(())
}
