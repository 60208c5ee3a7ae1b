//! The blocked contraction behind channel and token blending, checked
//! against an explicit loop.

use svt_core::synth::random_tensor;
use svt_core::tensor::Tensor;

fn naive(a: &Tensor, w: &Tensor) -> Tensor {
    let r = a.dims().len();
    let (b, d) = (a.dims()[r - 2], a.dims()[r - 1]);
    let lead: usize = a.dims()[..r - 2].iter().product();
    let mut out = vec![0.0; a.numel()];
    for l in 0..lead {
        for bi in 0..b {
            for o in 0..d {
                let mut acc = 0.0;
                for i in 0..d {
                    acc += a.data()[(l * b + bi) * d + i] * w.get(&[bi, i, o]);
                }
                out[(l * b + bi) * d + o] = acc;
            }
        }
    }
    Tensor::new(a.dims(), out).unwrap()
}

fn main() -> svt_core::Result<()> {
    let a = random_tensor(&[2, 6, 14, 14, 16, 4], 1);
    let w = random_tensor(&[16, 4, 4], 2);
    let fast = a.einstein_contract(&w)?;
    println!("{} x {} -> {}", a.shape(), w.shape(), fast.shape());
    println!("max deviation from loop: {:.2e}", fast.max_abs_diff(&naive(&a, &w))?);
    let id = Tensor::identity_stack(16, 4)?;
    println!("identity weights reproduce input: {}", a.einstein_contract(&id)? == a);
    Ok(())
}
