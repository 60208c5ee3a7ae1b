//! Central finite-difference check of the scatter-layer VJP.

use crate::dtcwt::TransformConfig;
use crate::error::Result;
use crate::gating::{scatter_layer_forward, scatter_layer_vjp, ChannelSplit, GatingParams, ScatterLayerConfig};
use crate::synth::random_tensor;
use crate::tensor::Tensor;

pub const FD_EPS: f64 = 1e-5;

/// Layer used by the check: C=8 split 4x2, 8x8 input, one level, TTEE.
pub fn tiny_layer() -> Result<(ScatterLayerConfig, [usize; 3])> {
    Ok((
        ScatterLayerConfig::new(TransformConfig::with_levels(1)?, ChannelSplit::new(4, 2)?),
        [8, 8, 8],
    ))
}

/// Outcome for one tensor: the largest finite-difference deviation
/// divided by the largest analytic gradient magnitude of that tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct TensorCheck {
    pub name: String,
    pub elements: usize,
    pub max_rel_error: f64,
}

fn rel_error(fd: &[f64], an: &[f64]) -> f64 {
    let scale = an.iter().chain(fd).fold(0.0f64, |m, v| m.max(v.abs()));
    let dev = fd.iter().zip(an).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    if scale == 0.0 {
        dev
    } else {
        dev / scale
    }
}

fn perturbed(t: &Tensor, i: usize, d: f64) -> Tensor {
    let mut v = t.data().to_vec();
    v[i] += d;
    Tensor::new(t.dims(), v).expect("finite")
}

/// Checks the gradient of `<g, layer(x; p)>` against central differences
/// for every parameter tensor and the input. Random parameters, input and
/// upstream gradient derive from `seed`. `corrupt` scales the analytic
/// token-bias gradient by 1.5 (a negative control).
pub fn gradcheck_layer(cfg: &ScatterLayerConfig, dims: [usize; 3], seed: u64, corrupt: bool) -> Result<Vec<TensorCheck>> {
    let [c, h, w] = dims;
    let params = GatingParams::perturbed_identity(cfg, c, h, w, 0.3, 0.3, seed)?;
    let x = random_tensor(&dims, seed.wrapping_mul(7919) + 1);
    let g = random_tensor(&dims, seed.wrapping_mul(7919) + 2);
    let (gx, mut gp) = scatter_layer_vjp(&x, &params, cfg, &g)?;
    if corrupt {
        gp = gp.map_tensors(|name, t| Ok(if name.starts_with("b_psi_t") { t.scale(1.5) } else { t.clone() }))?;
    }
    let f = |x: &Tensor, p: &GatingParams| -> Result<f64> { scatter_layer_forward(x, p, cfg)?.dot(&g) };

    let mut out = Vec::new();
    let names: Vec<String> = params.named_tensors().into_iter().map(|(n, _)| n).collect();
    let analytic: Vec<Tensor> = gp.named_tensors().into_iter().map(|(_, t)| t.clone()).collect();
    for (k, name) in names.iter().enumerate() {
        let base = params.named_tensors()[k].1.clone();
        let mut fd = Vec::with_capacity(base.numel());
        for i in 0..base.numel() {
            let shifted = |d: f64| {
                let mut j = 0;
                params.map_tensors(|_, t| {
                    let r = if j == k { perturbed(t, i, d) } else { t.clone() };
                    j += 1;
                    Ok(r)
                })
            };
            fd.push((f(&x, &shifted(FD_EPS)?)? - f(&x, &shifted(-FD_EPS)?)?) / (2.0 * FD_EPS));
        }
        out.push(TensorCheck {
            name: name.clone(),
            elements: base.numel(),
            max_rel_error: rel_error(&fd, analytic[k].data()),
        });
    }
    let mut fd = Vec::with_capacity(x.numel());
    for i in 0..x.numel() {
        fd.push((f(&perturbed(&x, i, FD_EPS), &params)? - f(&perturbed(&x, i, -FD_EPS), &params)?) / (2.0 * FD_EPS));
    }
    out.push(TensorCheck { name: "input".into(), elements: x.numel(), max_rel_error: rel_error(&fd, gx.data()) });
    Ok(out)
}
