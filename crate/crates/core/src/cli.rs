//! Command implementations behind the `svt-bench` binary.
//!
//! Exit codes: 0 success, 1 usage or I/O error, 2 a checked property failed.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use sha2::{Digest, Sha256};

use crate::baselines::{psnr_db, lossy_round_trip, spectral_peak_angle, ReportRow, Transform, CSV_HEADER};
use crate::dtcwt::{dtcwt_forward, impulse_response_2d, lowpass_impulse_response, TransformConfig, NOMINAL_ANGLES};
use crate::error::{Error, Result};
use crate::filters::{bundled_library, parse_library, WaveletFilterSet, DEFAULT_SET};
use crate::gating::{
    count_gating_params, count_variant, ebm_highpass, scatter_layer_forward, ChannelSplit, GatingParams, GatingVariant,
    HighGate, ScatterLayerConfig,
};
use crate::gradcheck::{gradcheck_layer, tiny_layer};
use crate::image::{crop, read_pnm, reflect_pad, write_pgm, write_pgm_normalized};
use crate::model::{count_flops, count_params, dtcwt_macs, ModelConfig};
use crate::npt;
use crate::synth::{random_tensor, smooth_corpus};
use crate::tensor::Tensor;

#[derive(Parser, Debug)]
#[command(name = "svt-bench", version, about = "Wavelet scattering benchmarks and diagnostics")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Quantized round-trip error of FFT, DWT and DTCWT.
    BenchInvertibility {
        /// Directory of PGM/PPM images, or `synthetic:<count>x<size>`.
        #[arg(long)]
        images: String,
        #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
        levels: Vec<usize>,
        /// Comma-separated bit counts, or `none` for exact round trips.
        #[arg(long, value_delimiter = ',', default_value = "6,8")]
        quant_bits: Vec<String>,
        #[arg(long, default_value_t = 3)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Finite-difference check of the scatter-layer gradients.
    Gradcheck {
        #[arg(long, default_value = "tiny")]
        config: String,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// Corrupts the analytic gradient (negative control).
        #[arg(long, hide = true)]
        break_vjp: bool,
    },
    /// Parameter and multiply-accumulate tables.
    ParamCount {
        #[arg(long, value_enum)]
        grid: Grid,
        #[arg(long, default_value_t = 64)]
        channels: usize,
        #[arg(long, default_value_t = 56)]
        size: usize,
        #[arg(long, default_value_t = 1)]
        levels: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Impulse responses of the lowpass and the six oriented subbands.
    DumpFilters {
        #[arg(long, default_value = DEFAULT_SET)]
        set: String,
        /// Filter library file; the bundled library when absent.
        #[arg(long)]
        filters: Option<PathBuf>,
        #[arg(long, default_value_t = 2)]
        level: usize,
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Runs one scatter layer on an image.
    ScatterDemo {
        #[arg(long)]
        image: PathBuf,
        /// `identity`, `random:<seed>` or a directory of saved gating params.
        #[arg(long, default_value = "identity")]
        params: String,
        /// Keeps the first k orientation pairs.
        #[arg(long, default_value_t = 6)]
        orientations: usize,
        #[arg(long, default_value_t = 1)]
        levels: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Median and p90 wall time of one operation.
    Latency {
        #[arg(long, value_enum)]
        op: LatencyOp,
        /// `CxHxW`.
        #[arg(long)]
        shape: String,
        #[arg(long, default_value_t = 50)]
        iters: usize,
        #[arg(long, default_value_t = 1)]
        levels: usize,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Grid {
    Ablation,
    Models,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum LatencyOp {
    Dtcwt,
    Ebm,
    Tbm,
    ScatterLayer,
}

/// What a command reports besides its output files.
pub enum Outcome {
    Pass,
    /// A checked property failed; the messages go to stderr.
    Violated(Vec<String>),
}

/// Parses `args` (including the program name) and runs the command,
/// returning the process exit code.
pub fn run_from_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli.command) {
        Ok(Outcome::Pass) => 0,
        Ok(Outcome::Violated(msgs)) => {
            for m in msgs {
                eprintln!("check failed: {m}");
            }
            2
        }
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

pub fn run(cmd: Command) -> Result<Outcome> {
    match cmd {
        Command::BenchInvertibility { images, levels, quant_bits, seed, out } => {
            bench_invertibility(&images, &levels, &quant_bits, seed, &out)
        }
        Command::Gradcheck { config, seed, break_vjp } => gradcheck(&config, seed, break_vjp),
        Command::ParamCount { grid, channels, size, levels, out } => param_count(grid, channels, size, levels, &out),
        Command::DumpFilters { set, filters, level, size, out } => dump_filters(&set, filters.as_deref(), level, size, &out),
        Command::ScatterDemo { image, params, orientations, levels, out } => {
            scatter_demo(&image, &params, orientations, levels, &out)
        }
        Command::Latency { op, shape, iters, levels } => latency(op, &shape, iters, levels),
    }
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::file(parent, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::file(path, e))
}

fn load_corpus(source: &str, seed: u64) -> Result<Vec<Tensor>> {
    if let Some(rest) = source.strip_prefix("synthetic:") {
        let (n, s) = rest
            .split_once('x')
            .ok_or_else(|| Error::Parse(format!("synthetic corpus `{rest}`: expected <count>x<size>")))?;
        let parse = |v: &str| v.parse::<usize>().map_err(|e| Error::Parse(format!("synthetic corpus `{rest}`: {e}")));
        let (n, s) = (parse(n)?, parse(s)?);
        if n == 0 || s < 8 {
            return Err(Error::Config("synthetic corpus needs at least one image of side >= 8".into()));
        }
        return Ok(smooth_corpus(n, s, seed));
    }
    let dir = Path::new(source);
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::file(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "pgm" | "ppm" | "pnm"))
        })
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::Config(format!("no PGM/PPM images in {}", dir.display())));
    }
    paths.iter().map(|p| Ok(read_pnm(p)?.pixels)).collect()
}

fn parse_quant(values: &[String]) -> Result<Vec<Option<u32>>> {
    values
        .iter()
        .map(|v| match v.trim() {
            "none" => Ok(None),
            b => b
                .parse::<u32>()
                .ok()
                .filter(|&b| (1..=30).contains(&b))
                .map(Some)
                .ok_or_else(|| Error::Parse(format!("quant bits `{b}`: expected 1..=30 or none"))),
        })
        .collect()
}

/// Round trip on the reflectively padded image; error on the original crop.
fn padded_mse(x: &Tensor, t: Transform, bits: Option<u32>, set: &Arc<WaveletFilterSet>) -> Result<f64> {
    let (h, w) = (x.dims()[1], x.dims()[2]);
    let padded = reflect_pad(x, t.divisor())?;
    let y = crop(&lossy_round_trip(&padded, t, bits, set)?, h, w)?;
    Ok(y.sub(x)?.sum_sq() / x.numel() as f64)
}

fn bench_invertibility(images: &str, levels: &[usize], quant: &[String], seed: u64, out: &Path) -> Result<Outcome> {
    let corpus = load_corpus(images, seed)?;
    let quant = parse_quant(quant)?;
    let mut levels = levels.to_vec();
    levels.sort_unstable();
    levels.dedup();
    if levels.is_empty() || levels[0] == 0 {
        return Err(Error::Config("levels must be >= 1".into()));
    }
    let set = Arc::new(crate::filters::default_filter_set());
    let mut transforms = vec![Transform::Fft];
    transforms.extend(levels.iter().map(|&m| Transform::Dwt(m)));
    transforms.extend(levels.iter().map(|&m| Transform::Dtcwt(m)));

    let mut csv = format!("{CSV_HEADER}\n");
    let mut violations = Vec::new();
    for &bits in &quant {
        let mut mse_of = std::collections::HashMap::new();
        for &t in &transforms {
            let mut mse = 0.0;
            for x in &corpus {
                mse += padded_mse(x, t, bits, &set)?;
            }
            mse /= corpus.len() as f64;
            mse_of.insert(t, mse);
            let row = ReportRow { transform: t, quant_bits: bits, mse, psnr_db: psnr_db(mse, 1.0) };
            csv.push_str(&row.to_csv());
            csv.push('\n');
        }
        let q = bits.map_or("none".to_string(), |b| format!("{b}-bit"));
        match bits {
            None => {
                for (t, m) in &mse_of {
                    if *m > 1e-18 {
                        violations.push(format!("{t} exact round trip MSE {m:.3e} > 1e-18"));
                    }
                }
            }
            Some(_) => {
                for &m in &levels {
                    let (c, d) = (mse_of[&Transform::Dtcwt(m)], mse_of[&Transform::Dwt(m)]);
                    if c >= d {
                        violations.push(format!("{q}: DTCWT-M{m} MSE {c:.3e} not below DWT-M{m} {d:.3e}"));
                    }
                }
                for pair in levels.windows(2) {
                    for f in [Transform::Dwt as fn(usize) -> Transform, Transform::Dtcwt] {
                        let (a, b) = (f(pair[0]), f(pair[1]));
                        if mse_of[&b] >= mse_of[&a] {
                            violations.push(format!("{q}: {b} MSE {:.3e} not below {a} {:.3e}", mse_of[&b], mse_of[&a]));
                        }
                    }
                }
            }
        }
    }
    write_file(out, &csv)?;

    let mut hasher = Sha256::new();
    for x in &corpus {
        hasher.update(npt::to_bytes(x));
    }
    let digest: String = hasher.finalize().iter().map(|b| format!("{b:02x}")).collect();
    let mut meta = String::new();
    let _ = writeln!(meta, "corpus={images}");
    let _ = writeln!(meta, "images={}", corpus.len());
    let _ = writeln!(meta, "seed={seed}");
    let _ = writeln!(meta, "corpus_sha256={digest}");
    let _ = writeln!(meta, "filter_set={}", set.name);
    let _ = writeln!(meta, "ordering={}", if violations.is_empty() { "ok" } else { "violated" });
    let mut meta_path = out.as_os_str().to_owned();
    meta_path.push(".meta");
    write_file(Path::new(&meta_path), &meta)?;

    print!("{csv}");
    if violations.is_empty() {
        println!("ordering checks passed");
        Ok(Outcome::Pass)
    } else {
        Ok(Outcome::Violated(violations))
    }
}

fn gradcheck(config: &str, seed: u64, corrupt: bool) -> Result<Outcome> {
    if config != "tiny" {
        return Err(Error::Config(format!("unknown gradcheck config `{config}` (only `tiny`)")));
    }
    let (cfg, dims) = tiny_layer()?;
    let checks = gradcheck_layer(&cfg, dims, seed, corrupt)?;
    let mut failed = Vec::new();
    println!("tensor      elements  max_rel_error");
    for c in &checks {
        let ok = c.max_rel_error <= 1e-6;
        println!("{:<10}  {:>8}  {:.3e}  {}", c.name, c.elements, c.max_rel_error, if ok { "ok" } else { "FAIL" });
        if !ok {
            failed.push(format!("{} relative error {:.3e} > 1e-6", c.name, c.max_rel_error));
        }
    }
    Ok(if failed.is_empty() { Outcome::Pass } else { Outcome::Violated(failed) })
}

fn param_count(grid: Grid, c: usize, size: usize, levels: usize, out: &Path) -> Result<Outcome> {
    let mut violations = Vec::new();
    let mut csv = String::new();
    match grid {
        Grid::Ablation => {
            let split = ChannelSplit::default_for(c)?;
            let base = ScatterLayerConfig::new(TransformConfig::with_levels(levels)?, split);
            base.transform.check_input(size, size)?;
            let k = count_gating_params(&base, c, size, size);
            println!(
                "C={c} ({}x{}), {size}x{size}, M={levels}: ebm_weights={} ebm_biases={} naive_tbm_high={} low_tbm={}",
                split.blocks, split.block_dim, k.ebm_weights, k.ebm_biases, k.naive_tbm_high, k.low_tbm
            );
            csv.push_str("variant,low_weights,low_biases,high_weights,high_biases,total,macs\n");
            let naive = count_variant(&base.clone().with_variant("TTTT".parse()?), c, size, size);
            for v in GatingVariant::ablation_grid() {
                let n = count_variant(&base.clone().with_variant(v), c, size, size);
                let _ = writeln!(
                    csv,
                    "{v},{},{},{},{},{},{}",
                    n.low_weights,
                    n.low_biases,
                    n.high_weights,
                    n.high_biases,
                    n.total(),
                    n.macs
                );
                if !v.high_is_tensor() && n.high_weights + n.high_biases >= naive.high_weights {
                    violations.push(format!("{v} high-frequency parameters not below the Hadamard gate"));
                }
            }
        }
        Grid::Models => {
            csv.push_str("model,depth,heads,embed_dim,scatter_layers,params,params_m,gflops\n");
            for name in ["ti", "xs", "s", "b"] {
                let cfg = ModelConfig::preset(name)?;
                let p = count_params(&cfg)?.total();
                let f = count_flops(&cfg)?.gflops();
                let _ = writeln!(
                    csv,
                    "svt-{name},{},{},{},{},{p},{:.2},{f:.3}",
                    cfg.depth,
                    cfg.heads,
                    cfg.embed_dim,
                    cfg.scatter_layers,
                    p as f64 / 1e6
                );
            }
        }
    }
    write_file(out, &csv)?;
    print!("{csv}");
    Ok(if violations.is_empty() { Outcome::Pass } else { Outcome::Violated(violations) })
}

fn find_set(name: &str, file: Option<&Path>) -> Result<WaveletFilterSet> {
    let text = match file {
        Some(p) => std::fs::read_to_string(p).map_err(|e| Error::file(p, e))?,
        None => bundled_library().to_string(),
    };
    let set = parse_library(&text)?
        .into_iter()
        .find(|s| s.name == name)
        .ok_or_else(|| Error::Config(format!("unknown filter set `{name}`")))?;
    set.validate()?;
    Ok(set)
}

fn dump_filters(name: &str, file: Option<&Path>, level: usize, size: usize, out: &Path) -> Result<Outcome> {
    let set = find_set(name, file)?;
    std::fs::create_dir_all(out).map_err(|e| Error::file(out, e))?;
    write_pgm_normalized(out.join("lowpass.pgm"), &lowpass_impulse_response(&set, level, size)?)?;
    let mut csv = String::from("orientation,nominal_deg,measured_deg,error_deg\n");
    let mut violations = Vec::new();
    for (k, nominal) in NOMINAL_ANGLES.iter().enumerate() {
        let img = impulse_response_2d(&set, level, k, size)?;
        write_pgm_normalized(out.join(format!("orientation_{k}.pgm")), &img)?;
        let angle = spectral_peak_angle(&img)?;
        let d = (angle - nominal + 90.0).rem_euclid(180.0) - 90.0;
        let _ = writeln!(csv, "{k},{nominal:.1},{angle:.4},{d:.4}");
        if d.abs() > 10.0 {
            violations.push(format!("orientation {k}: {angle:.2} deg is {d:.2} from {nominal}"));
        }
    }
    write_file(&out.join("angles.csv"), &csv)?;
    print!("{csv}");
    Ok(if violations.is_empty() { Outcome::Pass } else { Outcome::Violated(violations) })
}

fn scatter_demo(image: &Path, params: &str, k: usize, levels: usize, out: &Path) -> Result<Outcome> {
    if !(1..=6).contains(&k) {
        return Err(Error::Config(format!("--orientations {k}: expected 1..=6")));
    }
    let img = read_pnm(image)?;
    let x0 = img.pixels.clone();
    let (c, h, w) = (img.channels(), img.height(), img.width());

    let (gating, cfg) = if params == "identity" || params.starts_with("random:") {
        let cfg = ScatterLayerConfig::new(TransformConfig::with_levels(levels)?, ChannelSplit::default_for(c)?);
        (None, cfg)
    } else {
        let (p, cfg, _) = GatingParams::load(params)?;
        (Some(p), cfg)
    };
    let cfg = cfg.with_first_orientations(k);
    let x = reflect_pad(&x0, 1 << cfg.levels())?;
    let (hp, wp) = (x.dims()[1], x.dims()[2]);
    let gating = match gating {
        Some(p) => p,
        None if params == "identity" => GatingParams::identity(&cfg, c, hp, wp)?,
        None => {
            let seed = params["random:".len()..]
                .parse::<u64>()
                .map_err(|e| Error::Parse(format!("--params {params}: {e}")))?;
            GatingParams::perturbed_identity(&cfg, c, hp, wp, 0.1, 0.1, seed)?
        }
    };
    let y = crop(&scatter_layer_forward(&x, &gating, &cfg)?, h, w)?;
    let mse = y.sub(&x0)?.sum_sq() / x0.numel() as f64;

    std::fs::create_dir_all(out).map_err(|e| Error::file(out, e))?;
    let gray = |t: &Tensor| -> Result<Tensor> {
        let (h, w) = (t.dims()[1], t.dims()[2]);
        let mut g = vec![0.0; h * w];
        for ch in 0..t.dims()[0] {
            for (o, v) in g.iter_mut().zip(&t.data()[ch * h * w..][..h * w]) {
                *o += v / t.dims()[0] as f64;
            }
        }
        Tensor::new(&[h, w], g)
    };
    write_pgm(out.join("output.pgm"), &gray(&y)?)?;
    let pyramid = dtcwt_forward(&x, &cfg.transform)?.mask_orientations(&cfg.orientations);
    let hp1 = &pyramid.highpass[0];
    let (s1, t1) = (hp1.dims()[2], hp1.dims()[3]);
    for o in 0..6 {
        let mut mag = vec![0.0; s1 * t1];
        for ch in 0..c {
            for (i, m) in mag.iter_mut().enumerate() {
                let re = hp1.get(&[o, ch, i / t1, i % t1, 0]);
                let im = hp1.get(&[o, ch, i / t1, i % t1, 1]);
                *m += (re * re + im * im).sqrt() / c as f64;
            }
        }
        write_pgm_normalized(out.join(format!("subband_{o}.pgm")), &Tensor::new(&[s1, t1], mag)?)?;
    }
    let report = format!(
        "image={}\nparams={params}\norientations={k}\nlevels={}\nmse_vs_input={mse:.6e}\n",
        image.display(),
        cfg.levels()
    );
    write_file(&out.join("report.txt"), &report)?;
    print!("{report}");
    Ok(Outcome::Pass)
}

fn parse_shape(s: &str) -> Result<[usize; 3]> {
    let parts: Vec<usize> = s
        .split('x')
        .map(|p| p.trim().parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::Parse(format!("shape `{s}`: {e}")))?;
    match parts[..] {
        [c, h, w] if c > 0 && h > 0 && w > 0 => Ok([c, h, w]),
        _ => Err(Error::Parse(format!("shape `{s}`: expected CxHxW with positive extents"))),
    }
}

fn time_op(iters: usize, mut f: impl FnMut() -> Result<()>) -> Result<(f64, f64)> {
    for _ in 0..10 {
        f()?;
    }
    let mut us = Vec::with_capacity(iters);
    for _ in 0..iters {
        let t = Instant::now();
        f()?;
        us.push(t.elapsed().as_secs_f64() * 1e6);
    }
    us.sort_by(f64::total_cmp);
    let pick = |q: f64| us[((q * (iters - 1) as f64).round() as usize).min(iters - 1)];
    Ok((pick(0.5), pick(0.9)))
}

fn latency(op: LatencyOp, shape: &str, iters: usize, levels: usize) -> Result<Outcome> {
    if iters < 10 {
        return Err(Error::Config(format!("--iters {iters}: at least 10 iterations required")));
    }
    let [c, h, w] = parse_shape(shape)?;
    let split = ChannelSplit::default_for(c)?;
    let cfg = ScatterLayerConfig::new(TransformConfig::with_levels(levels)?, split);
    let (name, (median, p90), flops) = match op {
        LatencyOp::Dtcwt => {
            cfg.transform.check_input(h, w)?;
            let x = random_tensor(&[c, h, w], 1);
            let t = time_op(iters, || dtcwt_forward(&x, &cfg.transform).map(drop))?;
            ("dtcwt", t, dtcwt_macs(cfg.transform.filters(), c, h, w, levels))
        }
        LatencyOp::Ebm => {
            if h != w {
                return Err(Error::NonSquareSpatial { height: h, width: w });
            }
            let x = random_tensor(&[6, c, h, w, 2], 1);
            // Token weights for an S x S highpass come from a 2S x 2S layer.
            let p = GatingParams::init(&cfg, c, 2 * h, 2 * w, 1)?;
            let HighGate::Einstein { channel, token } = &p.high else { unreachable!("TTEE") };
            let t = time_op(iters, || ebm_highpass(&x, split, channel.as_ref(), token.first()).map(drop))?;
            ("ebm", t, 12 * h * w * c * split.block_dim + 12 * c * w * h * h)
        }
        LatencyOp::Tbm => {
            let x = random_tensor(&[6, c, h, w, 2], 1);
            let wt = Tensor::ones(&[6, c, h, w, 2])?;
            let t = time_op(iters, || x.hadamard(&wt).map(drop))?;
            ("tbm", t, 12 * c * h * w)
        }
        LatencyOp::ScatterLayer => {
            let x = random_tensor(&[c, h, w], 1);
            let p = GatingParams::init(&cfg, c, h, w, 1)?;
            let t = time_op(iters, || scatter_layer_forward(&x, &p, &cfg).map(drop))?;
            let macs = count_variant(&cfg, c, h, w).macs + 2 * dtcwt_macs(cfg.transform.filters(), c, h, w, levels);
            ("scatter-layer", t, macs)
        }
    };
    let line = serde_json::json!({
        "op": name,
        "shape": format!("{c}x{h}x{w}"),
        "median_us": median,
        "p90_us": p90,
        "flops": flops,
    });
    println!("{line}");
    Ok(Outcome::Pass)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shapes_and_quant_parse() {
        assert_eq!(parse_shape("64x28x28").unwrap(), [64, 28, 28]);
        assert!(parse_shape("64x28").is_err());
        assert!(parse_shape("0x2x2").is_err());
        assert_eq!(parse_quant(&["6".into(), "none".into()]).unwrap(), vec![Some(6), None]);
        assert!(parse_quant(&["zero".into()]).is_err());
    }

    #[test]
    fn usage_errors_exit_one() {
        assert_eq!(run_from_args(["svt-bench", "no-such-command"]), 1);
        assert_eq!(run_from_args(["svt-bench", "latency", "--op", "tbm", "--shape", "4x8x8", "--iters", "0"]), 1);
    }
}
