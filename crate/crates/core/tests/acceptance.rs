//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any
//! criterion fails or runs over its time budget.

use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use svt_core::baselines::{
    dwt2_forward, dwt2_inverse, fft2_forward, fft2_inverse, reconstruction_report, shift_sensitivity,
    spectral_peak_angle, Transform,
};
use svt_core::dtcwt::{dtcwt_forward, dtcwt_inverse, impulse_response_2d, TransformConfig, NOMINAL_ANGLES};
use svt_core::filters::{check_half_sample_delay, default_filter_set};
use svt_core::gating::{count_gating_params, scatter_layer_forward, ChannelSplit, GatingCounts, GatingParams, ScatterLayerConfig};
use svt_core::gradcheck::{gradcheck_layer, tiny_layer};
use svt_core::model::{count_flops, count_params, ModelConfig, ModelParams};
use svt_core::synth::{quarter_band_corpus, random_tensor, smooth_corpus};
use svt_core::tensor::Tensor;
use svt_core::train::{fit_scatter_layer, teacher_student};

type Check = Result<String, String>;

fn ensure(ok: bool, detail: String) -> Check {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn perfect_reconstruction() -> Check {
    let set = Arc::new(default_filter_set());
    let mut worst_dtcwt = 0.0f64;
    let mut worst_other = 0.0f64;
    for m in 1..=3 {
        let cfg = TransformConfig::with_levels(m).unwrap();
        for c in [1, 4] {
            for (h, w) in [(32, 32), (48, 48), (64, 64), (32, 64), (64, 48)] {
                let x = random_tensor(&[c, h, w], (m * 100 + c * 10 + h + w) as u64);
                let y = dtcwt_inverse(&dtcwt_forward(&x, &cfg).unwrap(), &cfg).unwrap();
                worst_dtcwt = worst_dtcwt.max(y.relative_mse(&x).unwrap());
                let d = dwt2_inverse(&dwt2_forward(&x, m, &set).unwrap(), &set).unwrap();
                worst_other = worst_other.max(d.relative_mse(&x).unwrap());
                let f = fft2_inverse(&fft2_forward(&x).unwrap()).unwrap();
                worst_other = worst_other.max(f.relative_mse(&x).unwrap());
            }
        }
    }
    ensure(
        worst_dtcwt <= 1e-20 && worst_other <= 1e-18,
        format!("max relative MSE: DTCWT {worst_dtcwt:.2e} (<= 1e-20), DWT/FFT {worst_other:.2e} (<= 1e-18)"),
    )
}

fn invertibility_ordering() -> Check {
    let set = Arc::new(default_filter_set());
    let corpus = smooth_corpus(10, 64, 3);
    let mean_mse = |t: Transform, bits: u32| -> f64 {
        corpus
            .iter()
            .map(|x| reconstruction_report(x, t, Some(bits), 1.0, &set).unwrap().mse)
            .sum::<f64>()
            / corpus.len() as f64
    };
    let mut problems = Vec::new();
    let mut summary = Vec::new();
    for bits in [6, 8] {
        let c: Vec<f64> = (1..=3).map(|m| mean_mse(Transform::Dtcwt(m), bits)).collect();
        let d: Vec<f64> = (1..=3).map(|m| mean_mse(Transform::Dwt(m), bits)).collect();
        for j in 0..3 {
            if c[j] >= d[j] {
                problems.push(format!("{bits}-bit M{}: DTCWT {:.2e} >= DWT {:.2e}", j + 1, c[j], d[j]));
            }
        }
        for j in 0..2 {
            if c[j + 1] >= c[j] || d[j + 1] >= d[j] {
                problems.push(format!("{bits}-bit: MSE not decreasing from M{} to M{}", j + 1, j + 2));
            }
        }
        summary.push(format!("{bits}-bit DTCWT-M3 {:.2e} vs DWT-M3 {:.2e}", c[2], d[2]));
    }
    if problems.is_empty() {
        Ok(summary.join(", "))
    } else {
        Err(problems.join("; "))
    }
}

fn orientation_selectivity() -> Check {
    let set = default_filter_set();
    let mut worst = 0.0f64;
    let mut angles = Vec::new();
    for (k, nominal) in NOMINAL_ANGLES.iter().enumerate() {
        let a = spectral_peak_angle(&impulse_response_2d(&set, 2, k, 64).unwrap()).unwrap();
        worst = worst.max(((a - nominal + 90.0).rem_euclid(180.0) - 90.0).abs());
        angles.push(format!("{a:.1}"));
    }
    ensure(worst <= 10.0, format!("angles [{}], worst deviation {worst:.2} deg (<= 10)", angles.join(", ")))
}

fn half_sample_delay() -> Check {
    let set = default_filter_set();
    let err = check_half_sample_delay(&set.qshift_tree_a.analysis, &set.qshift_tree_b.analysis).unwrap();
    ensure(err <= 0.05, format!("|delay difference - 0.5| = {err:.4} (<= 0.05)"))
}

fn gradient_correctness() -> Check {
    let (cfg, dims) = tiny_layer().unwrap();
    let mut worst = (0.0f64, String::new());
    for seed in 0..20 {
        for c in gradcheck_layer(&cfg, dims, seed, false).unwrap() {
            if c.max_rel_error > worst.0 {
                worst = (c.max_rel_error, format!("{} seed {seed}", c.name));
            }
        }
    }
    ensure(worst.0 <= 1e-6, format!("max relative error {:.2e} at {} (<= 1e-6, 20 seeds)", worst.0, worst.1))
}

fn identity_gating() -> Check {
    let mut worst = 0.0f64;
    for m in [1, 2] {
        let cfg = ScatterLayerConfig::new(TransformConfig::with_levels(m).unwrap(), ChannelSplit::new(4, 2).unwrap());
        for seed in 0..3 {
            let x = random_tensor(&[8, 32, 32], seed);
            let p = GatingParams::identity(&cfg, 8, 32, 32).unwrap();
            let y = scatter_layer_forward(&x, &p, &cfg).unwrap();
            worst = worst.max((y.sub(&x).unwrap().sum_sq() / x.sum_sq()).sqrt());
        }
    }
    ensure(worst <= 1e-10, format!("max relative error {worst:.2e} (<= 1e-10, M in {{1,2}})"))
}

fn parameter_counts() -> Check {
    let cfg = ScatterLayerConfig::new(TransformConfig::with_levels(1).unwrap(), ChannelSplit::new(16, 4).unwrap());
    let k = count_gating_params(&cfg, 64, 56, 56);
    let want = GatingCounts { ebm_weights: 22208, ebm_biases: 848, naive_tbm_high: 602112, low_tbm: 200704 };
    if k != want {
        return Err(format!("worked example gave {k:?}"));
    }
    let mut points = 0;
    for c in [8, 16, 32, 64, 128, 256] {
        for s in [16, 28, 32, 56, 64] {
            for m in [1, 2] {
                let cfg = ScatterLayerConfig::new(TransformConfig::with_levels(m).unwrap(), ChannelSplit::default_for(c).unwrap());
                let size = s * 2;
                if cfg.transform.check_input(size, size).is_err() {
                    continue;
                }
                let k = count_gating_params(&cfg, c, size, size);
                points += 1;
                if k.ebm_weights + k.ebm_biases >= k.naive_tbm_high {
                    return Err(format!("EBM not below naive TBM at C={c}, {size}x{size}, M={m}"));
                }
            }
        }
    }
    Ok(format!("22208 / 848 / 602112 / 200704 reproduced; EBM < naive TBM at {points} grid points"))
}

fn model_bookkeeping() -> Check {
    let ti = ModelConfig::ti();
    let p = count_params(&ti).unwrap().total();
    let g = count_flops(&ti).unwrap().gflops();
    let instantiated = ModelParams::zeros(&ti).unwrap().param_count();
    let tiny = ModelConfig::tiny();
    let tiny_ok = ModelParams::zeros(&tiny).unwrap().param_count() == count_params(&tiny).unwrap().total();
    let ok = (p as f64 / 9.0e6 - 1.0).abs() <= 0.15 && (g / 1.8 - 1.0).abs() <= 0.25 && instantiated == p && tiny_ok;
    ensure(
        ok,
        format!("SVT-Ti {:.2}M params (9.0M +-15%), {g:.2} GFLOPs (1.8 +-25%), instantiated {instantiated}", p as f64 / 1e6),
    )
}

fn trainability() -> Check {
    let cfg = ScatterLayerConfig::new(TransformConfig::with_levels(1).unwrap(), ChannelSplit::new(4, 2).unwrap());
    let (inputs, targets, student) = teacher_student(&cfg, [8, 8, 8], 16, 0.1, 7).unwrap();
    let r = fit_scatter_layer(student, &cfg, &inputs, &targets, 0.1, 500).unwrap();
    ensure(
        r.reduction() >= 0.9,
        format!("MSE {:.3e} -> {:.3e}, reduction {:.1}% (>= 90%)", r.initial_mse(), r.final_mse(), 100.0 * r.reduction()),
    )
}

fn shift_invariance() -> Check {
    let set = Arc::new(default_filter_set());
    let images = quarter_band_corpus(10, 64, 11);
    let (mut sc, mut sd, mut wins) = (0.0, 0.0, 0);
    for x in &images {
        let c = shift_sensitivity(x, Transform::Dtcwt(2), &set).unwrap();
        let d = shift_sensitivity(x, Transform::Dwt(2), &set).unwrap();
        sc += c;
        sd += d;
        wins += usize::from(c < d);
    }
    let ratio = sc / sd;
    ensure(ratio < 0.5 && wins >= 9, format!("mean ratio {ratio:.3} (< 0.5), DTCWT lower on {wins}/10 (>= 9)"))
}

fn naive_contract(a: &Tensor, w: &Tensor) -> Tensor {
    let r = a.dims().len();
    let (b, d) = (a.dims()[r - 2], a.dims()[r - 1]);
    let lead = a.numel() / (b * d);
    let mut out = vec![0.0; a.numel()];
    for l in 0..lead {
        for bi in 0..b {
            for o in 0..d {
                for i in 0..d {
                    out[(l * b + bi) * d + o] += a.data()[(l * b + bi) * d + i] * w.data()[(bi * d + i) * d + o];
                }
            }
        }
    }
    Tensor::new(a.dims(), out).unwrap()
}

fn einstein_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst = 0.0f64;
    for t in 0..100 {
        let rank = rng.random_range(2..=5);
        let dims: Vec<usize> = (0..rank).map(|_| rng.random_range(1..=5)).collect();
        let (b, d) = (dims[rank - 2], dims[rank - 1]);
        let a = random_tensor(&dims, 1000 + t);
        let w = random_tensor(&[b, d, d], 2000 + t);
        worst = worst.max(a.einstein_contract(&w).unwrap().max_abs_diff(&naive_contract(&a, &w)).unwrap());
    }
    ensure(worst <= 1e-12, format!("max deviation {worst:.2e} over 100 shapes (<= 1e-12)"))
}

/// Name, check and runtime budget in seconds.
type Criterion = (&'static str, fn() -> Check, Option<u64>);

fn main() {
    let criteria: [Criterion; 11] = [
        ("1 perfect reconstruction", perfect_reconstruction, Some(10)),
        ("2 invertibility ordering", invertibility_ordering, Some(60)),
        ("3 orientation selectivity", orientation_selectivity, Some(10)),
        ("4 half-sample delay", half_sample_delay, None),
        ("5 gradient correctness", gradient_correctness, Some(60)),
        ("6 identity gating", identity_gating, None),
        ("7 parameter-count formulas", parameter_counts, None),
        ("8 model bookkeeping", model_bookkeeping, None),
        ("9 trainability", trainability, Some(120)),
        ("10 shift invariance", shift_invariance, None),
        ("11 einstein contraction oracle", einstein_oracle, None),
    ];
    let mut failures = 0;
    for (name, f, budget) in criteria {
        let t = Instant::now();
        let result = f();
        let elapsed = t.elapsed();
        let over = budget.is_some_and(|s| elapsed > Duration::from_secs(s));
        let (status, detail) = match (&result, over) {
            (Ok(d), false) => ("PASS", d.clone()),
            (Ok(d), true) => ("FAIL", format!("{d}; over the {}s budget", budget.unwrap())),
            (Err(d), _) => ("FAIL", d.clone()),
        };
        if status == "FAIL" {
            failures += 1;
        }
        println!("{status} criterion {name}: {detail} [{:.2}s]", elapsed.as_secs_f64());
    }
    println!("acceptance: {} of 11 criteria passed", 11 - failures);
    if failures > 0 {
        std::process::exit(1);
    }
}
