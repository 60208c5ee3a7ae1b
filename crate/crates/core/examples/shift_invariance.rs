//! Compares how much subband energies move under a one-pixel shift for the
//! DTCWT and a plain decimated DWT.

use std::sync::Arc;

use svt_core::baselines::{shift_sensitivity, Transform};
use svt_core::filters::default_filter_set;
use svt_core::synth::quarter_band_corpus;

fn main() -> svt_core::Result<()> {
    let set = Arc::new(default_filter_set());
    let images = quarter_band_corpus(10, 64, 11);
    let (mut sum_c, mut sum_d, mut wins) = (0.0, 0.0, 0);
    println!("image  dtcwt-M2  dwt-M2");
    for (i, x) in images.iter().enumerate() {
        let c = shift_sensitivity(x, Transform::Dtcwt(2), &set)?;
        let d = shift_sensitivity(x, Transform::Dwt(2), &set)?;
        println!("{i:>5}  {c:>8.4}  {d:>6.4}");
        sum_c += c;
        sum_d += d;
        wins += usize::from(c < d);
    }
    let n = images.len() as f64;
    println!("mean   {:>8.4}  {:>6.4}", sum_c / n, sum_d / n);
    println!("ratio {:.3}, dtcwt lower on {wins}/10 images", sum_c / sum_d);
    Ok(())
}
