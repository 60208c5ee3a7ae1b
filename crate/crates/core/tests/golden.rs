//! Scatter layer with seed-42 random parameters: checksums frozen in
//! `fixtures/scatter_golden.txt`, and an index-by-index loop version of
//! the gating that must agree with the tensor version.

use svt_core::config::parse_key_values;
use svt_core::dtcwt::{dtcwt_forward, dtcwt_inverse, TransformConfig};
use svt_core::gating::{scatter_layer_forward, ChannelSplit, GatingParams, HighGate, LowGate, ScatterLayerConfig};
use svt_core::synth::random_tensor;
use svt_core::tensor::Tensor;

const C: usize = 8;
const S: usize = 16;

fn setup(variant: &str) -> (Tensor, GatingParams, ScatterLayerConfig) {
    let cfg = ScatterLayerConfig::new(TransformConfig::with_levels(2).unwrap(), ChannelSplit::new(4, 2).unwrap())
        .with_variant(variant.parse().unwrap());
    let p = GatingParams::perturbed_identity(&cfg, C, S, S, 0.5, 0.5, 42).unwrap();
    (random_tensor(&[C, S, S], 42), p, cfg)
}

fn checksums(t: &Tensor) -> (f64, f64) {
    let weighted = t.data().iter().enumerate().map(|(i, v)| v * ((i % 7) as f64 - 3.0)).sum();
    (t.sum(), weighted)
}

/// Loop version of the Einstein stages on `[C, h, w]` (lowpass) or
/// `[6, C, h, w, 2]` (highpass) data, written against flat indices.
fn loop_mix(
    x: &[f64],
    lead: usize,
    h: usize,
    w: usize,
    trail: usize,
    channel: Option<(&Tensor, &Tensor)>,
    token: Option<(&Tensor, &Tensor)>,
) -> Vec<f64> {
    let (cb, cd) = (4, 2);
    let idx = |l: usize, c: usize, i: usize, j: usize, r: usize| (((l * C + c) * h + i) * w + j) * trail + r;
    let mut y = x.to_vec();
    if let Some((wc, bc)) = channel {
        for l in 0..lead {
            for i in 0..h {
                for j in 0..w {
                    for r in 0..trail {
                        for b in 0..cb {
                            for o in 0..cd {
                                let mut acc = bc.get(&[b, o]);
                                for d in 0..cd {
                                    acc += x[idx(l, b * cd + d, i, j, r)] * wc.get(&[b, d, o]);
                                }
                                y[idx(l, b * cd + o, i, j, r)] = acc;
                            }
                        }
                    }
                }
            }
        }
    }
    let mut z = y.clone();
    if let Some((wt, bt)) = token {
        for l in 0..lead {
            for c in 0..C {
                for j in 0..w {
                    for r in 0..trail {
                        for o in 0..h {
                            let mut acc = bt.get(&[j, o]);
                            for i in 0..h {
                                acc += y[idx(l, c, i, j, r)] * wt.get(&[j, i, o]);
                            }
                            z[idx(l, c, o, j, r)] = acc;
                        }
                    }
                }
            }
        }
    }
    z
}

fn loop_layer(x: &Tensor, p: &GatingParams, cfg: &ScatterLayerConfig) -> Tensor {
    let mut pyr = dtcwt_forward(x, &cfg.transform).unwrap();
    let lp = pyr.lowpass.clone();
    let (hl, wl) = (lp.dims()[1], lp.dims()[2]);
    let low = match &p.low {
        LowGate::Tensor(w) => lp.data().iter().zip(w.data()).map(|(a, b)| a * b).collect(),
        LowGate::Einstein { channel, token } => loop_mix(
            lp.data(),
            1,
            hl,
            wl,
            1,
            Some((&channel.weight, &channel.bias)),
            Some((&token.weight, &token.bias)),
        ),
    };
    pyr.lowpass = Tensor::new(lp.dims(), low).unwrap();
    let HighGate::Einstein { channel, token } = &p.high else { panic!("einstein high gate expected") };
    for (m, hp) in pyr.highpass.iter_mut().enumerate() {
        let (h, w) = (hp.dims()[2], hp.dims()[3]);
        let out = loop_mix(
            hp.data(),
            6,
            h,
            w,
            2,
            channel.as_ref().map(|c| (&c.weight, &c.bias)),
            token.get(m).map(|t| (&t.weight, &t.bias)),
        );
        *hp = Tensor::new(hp.dims(), out).unwrap();
    }
    dtcwt_inverse(&pyr, &cfg.transform).unwrap()
}

#[test]
fn loop_version_agrees_with_tensor_version() {
    for v in ["TTEE", "EEEE", "TTEX", "TTXE"] {
        let (x, p, cfg) = setup(v);
        let fast = scatter_layer_forward(&x, &p, &cfg).unwrap();
        let slow = loop_layer(&x, &p, &cfg);
        let scale = fast.max_abs();
        assert!(fast.max_abs_diff(&slow).unwrap() <= 1e-12 * scale, "{v}");
    }
}

#[test]
fn seed_42_checksums_are_stable() {
    let text = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures/scatter_golden.txt")).unwrap();
    let kv = parse_key_values(&text).unwrap();
    let get = |k: &str| kv[k].parse::<f64>().unwrap();
    let (x, p, cfg) = setup("TTEE");
    let y = scatter_layer_forward(&x, &p, &cfg).unwrap();
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-12 * b.abs().max(1.0);
    let (xs, xw) = checksums(&x);
    let (ys, yw) = checksums(&y);
    if std::env::var_os("SVT_PRINT_GOLDEN").is_some() {
        println!("input_sum={xs:.17e}\ninput_weighted={xw:.17e}\noutput_sum={ys:.17e}\noutput_weighted={yw:.17e}\noutput_sum_sq={:.17e}", y.sum_sq());
    }
    assert!(close(xs, get("input_sum")) && close(xw, get("input_weighted")), "input checksum changed");
    assert!(close(ys, get("output_sum")), "{ys:e}");
    assert!(close(yw, get("output_weighted")), "{yw:e}");
    assert!(close(y.sum_sq(), get("output_sum_sq")));
}
