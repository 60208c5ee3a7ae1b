//! Toy-scale vision model: patch embedding, scatter blocks, attention
//! blocks, mean pooling and a linear head. Also closed-form parameter and
//! multiply-accumulate counts.

use std::fmt::Write as _;
use std::path::Path;

use crate::config::parse_key_values;
use crate::dtcwt::TransformConfig;
use crate::error::{Error, Result};
use crate::filters::WaveletFilterSet;
use crate::gating::{count_variant, scatter_layer_forward, ChannelSplit, GatingParams, GatingVariant, ScatterLayerConfig};
use crate::npt;
use crate::synth::{normal_tensor, rng};
use crate::tensor::Tensor;

const LN_EPS: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub image_size: usize,
    pub patch_size: usize,
    pub in_channels: usize,
    pub embed_dim: usize,
    pub depth: usize,
    /// Number of leading scatter blocks (alpha).
    pub scatter_layers: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
    pub split: ChannelSplit,
    pub levels: usize,
    pub num_classes: usize,
    pub variant: GatingVariant,
}

impl ModelConfig {
    fn vanilla(depth: usize, heads: usize, embed_dim: usize) -> Self {
        ModelConfig {
            image_size: 224,
            patch_size: 16,
            in_channels: 3,
            embed_dim,
            depth,
            scatter_layers: 4,
            heads,
            mlp_ratio: 4,
            split: ChannelSplit::default_for(embed_dim).expect("nonzero width"),
            levels: 1,
            num_classes: 1000,
            variant: GatingVariant::TTEE,
        }
    }

    pub fn ti() -> Self {
        ModelConfig::vanilla(12, 4, 256)
    }

    pub fn xs() -> Self {
        ModelConfig::vanilla(12, 6, 384)
    }

    pub fn s() -> Self {
        ModelConfig::vanilla(19, 6, 384)
    }

    pub fn b() -> Self {
        ModelConfig::vanilla(19, 8, 512)
    }

    /// 32 px images, 4 px patches, 16 channels, 4 blocks (2 scatter).
    pub fn tiny() -> Self {
        ModelConfig {
            image_size: 32,
            patch_size: 4,
            in_channels: 3,
            embed_dim: 16,
            depth: 4,
            scatter_layers: 2,
            heads: 2,
            mlp_ratio: 4,
            split: ChannelSplit::default_for(16).expect("nonzero width"),
            levels: 1,
            num_classes: 10,
            variant: GatingVariant::TTEE,
        }
    }

    /// `ti`, `xs`, `s`, `b` or `tiny`.
    pub fn preset(name: &str) -> Result<Self> {
        match name.to_ascii_lowercase().as_str() {
            "ti" | "svt-ti" => Ok(ModelConfig::ti()),
            "xs" | "svt-xs" => Ok(ModelConfig::xs()),
            "s" | "svt-s" => Ok(ModelConfig::s()),
            "b" | "svt-b" => Ok(ModelConfig::b()),
            "tiny" => Ok(ModelConfig::tiny()),
            other => Err(Error::Config(format!("unknown model preset `{other}`"))),
        }
    }

    /// Parses `key=value` lines. An optional `preset` key picks the base
    /// (default `ti`); the channel split follows `embed_dim` unless `C_b`
    /// and `C_d` are given.
    pub fn from_key_values(text: &str) -> Result<Self> {
        let kv = parse_key_values(text)?;
        let mut cfg = ModelConfig::preset(kv.get("preset").map(String::as_str).unwrap_or("ti"))?;
        let mut split = None::<(usize, usize)>;
        for (k, v) in &kv {
            let num = || -> Result<usize> {
                v.parse().map_err(|e| Error::Parse(format!("model config `{k}`: {e}")))
            };
            match k.as_str() {
                "preset" => {}
                "image_size" => cfg.image_size = num()?,
                "patch_size" => cfg.patch_size = num()?,
                "in_channels" => cfg.in_channels = num()?,
                "embed_dim" => cfg.embed_dim = num()?,
                "depth" => cfg.depth = num()?,
                "scatter_layers" | "alpha" => cfg.scatter_layers = num()?,
                "heads" => cfg.heads = num()?,
                "mlp_ratio" => cfg.mlp_ratio = num()?,
                "levels" => cfg.levels = num()?,
                "num_classes" => cfg.num_classes = num()?,
                "variant" => cfg.variant = v.parse()?,
                "C_b" => split = Some((num()?, split.map_or(0, |s| s.1))),
                "C_d" => split = Some((split.map_or(0, |s| s.0), num()?)),
                other => return Err(Error::Config(format!("unknown model config key `{other}`"))),
            }
        }
        cfg.split = match split {
            Some((b, d)) if b > 0 && d > 0 => ChannelSplit::new(b, d)?,
            Some(_) => return Err(Error::Config("C_b and C_d must be given together".into())),
            None => ChannelSplit::default_for(cfg.embed_dim)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        ModelConfig::from_key_values(&text)
    }

    pub fn grid(&self) -> usize {
        self.image_size / self.patch_size
    }

    pub fn tokens(&self) -> usize {
        self.grid() * self.grid()
    }

    pub fn hidden_dim(&self) -> usize {
        self.embed_dim * self.mlp_ratio
    }

    pub fn patch_dim(&self) -> usize {
        self.in_channels * self.patch_size * self.patch_size
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.patch_size == 0 || self.image_size == 0 || !self.image_size.is_multiple_of(self.patch_size) {
            return bad(format!("image size {} not divisible by patch size {}", self.image_size, self.patch_size));
        }
        if self.embed_dim == 0 || self.in_channels == 0 || self.num_classes == 0 || self.mlp_ratio == 0 {
            return bad("widths must be >= 1".into());
        }
        if self.scatter_layers > self.depth {
            return bad(format!("{} scatter layers exceed depth {}", self.scatter_layers, self.depth));
        }
        if self.heads == 0 || !self.embed_dim.is_multiple_of(self.heads) {
            return bad(format!("embed_dim {} not divisible by {} heads", self.embed_dim, self.heads));
        }
        if self.split.channels() != self.embed_dim {
            return bad(format!(
                "channel split {}x{} does not factor embed_dim {}",
                self.split.blocks, self.split.block_dim, self.embed_dim
            ));
        }
        if self.scatter_layers > 0 {
            TransformConfig::with_levels(self.levels)?.check_input(self.grid(), self.grid())?;
        }
        Ok(())
    }

    /// Geometry of every scatter block.
    pub fn scatter_config(&self) -> Result<ScatterLayerConfig> {
        Ok(ScatterLayerConfig::new(TransformConfig::with_levels(self.levels)?, self.split).with_variant(self.variant))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerNorm {
    pub gamma: Tensor,
    pub beta: Tensor,
}

/// Two-layer perceptron with tanh-approximated GELU.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PatchEmbed {
    /// `C x (in_channels * p * p)`, patch pixels ordered (channel, row, col).
    pub proj_w: Tensor,
    pub proj_b: Tensor,
    /// `C x G x G`.
    pub pos: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub enum BlockParams {
    Scatter {
        norm1: LayerNorm,
        gating: GatingParams,
        norm2: LayerNorm,
        mlp: Mlp,
    },
    Attention {
        norm1: LayerNorm,
        /// `3C x C`, rows ordered (q, k, v).
        qkv_w: Tensor,
        qkv_b: Tensor,
        proj_w: Tensor,
        proj_b: Tensor,
        norm2: LayerNorm,
        mlp: Mlp,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub embed: PatchEmbed,
    pub blocks: Vec<BlockParams>,
    pub head_w: Tensor,
    pub head_b: Tensor,
}

#[derive(Clone, Copy)]
enum Init {
    Zero,
    Random(f64),
}

impl ModelParams {
    fn build(cfg: &ModelConfig, init: Init, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut r = rng(seed);
        let (c, g, hid) = (cfg.embed_dim, cfg.grid(), cfg.hidden_dim());
        let mut weight = |dims: &[usize]| -> Result<Tensor> {
            match init {
                Init::Zero => Tensor::zeros(dims),
                Init::Random(s) => Ok(normal_tensor(dims, &mut r, s)),
            }
        };
        let unit = |dims: &[usize]| match init {
            Init::Zero => Tensor::zeros(dims),
            Init::Random(_) => Tensor::ones(dims),
        };
        let embed = PatchEmbed {
            proj_w: weight(&[c, cfg.patch_dim()])?,
            proj_b: Tensor::zeros(&[c])?,
            pos: weight(&[c, g, g])?,
        };
        let scfg = cfg.scatter_config()?;
        let mut blocks = Vec::with_capacity(cfg.depth);
        for i in 0..cfg.depth {
            let norm1 = LayerNorm { gamma: unit(&[c])?, beta: Tensor::zeros(&[c])? };
            let norm2 = LayerNorm { gamma: unit(&[c])?, beta: Tensor::zeros(&[c])? };
            let mlp = Mlp {
                w1: weight(&[hid, c])?,
                b1: Tensor::zeros(&[hid])?,
                w2: weight(&[c, hid])?,
                b2: Tensor::zeros(&[c])?,
            };
            blocks.push(if i < cfg.scatter_layers {
                let gating = match init {
                    Init::Zero => GatingParams::zeros(&scfg, c, g, g)?,
                    Init::Random(_) => GatingParams::init(&scfg, c, g, g, seed.wrapping_add(1 + i as u64))?,
                };
                BlockParams::Scatter { norm1, gating, norm2, mlp }
            } else {
                BlockParams::Attention {
                    norm1,
                    qkv_w: weight(&[3 * c, c])?,
                    qkv_b: Tensor::zeros(&[3 * c])?,
                    proj_w: weight(&[c, c])?,
                    proj_b: Tensor::zeros(&[c])?,
                    norm2,
                    mlp,
                }
            });
        }
        Ok(ModelParams {
            embed,
            blocks,
            head_w: weight(&[cfg.num_classes, c])?,
            head_b: Tensor::zeros(&[cfg.num_classes])?,
        })
    }

    /// Gaussian weights (std 0.02), zero biases, unit norm scales,
    /// near-identity gating.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        ModelParams::build(cfg, Init::Random(0.02), seed)
    }

    pub fn zeros(cfg: &ModelConfig) -> Result<Self> {
        ModelParams::build(cfg, Init::Zero, 0)
    }

    /// Every tensor with a dotted component name, in a fixed order.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out: Vec<(String, &Tensor)> = vec![
            ("embed.proj_w".into(), &self.embed.proj_w),
            ("embed.proj_b".into(), &self.embed.proj_b),
            ("embed.pos".into(), &self.embed.pos),
        ];
        for (i, b) in self.blocks.iter().enumerate() {
            let p = format!("blocks.{i:02}");
            match b {
                BlockParams::Scatter { norm1, gating, norm2, mlp } => {
                    push_ln(&mut out, &p, "norm1", norm1);
                    for (n, t) in gating.named_tensors() {
                        out.push((format!("{p}.gating.{n}"), t));
                    }
                    push_ln(&mut out, &p, "norm2", norm2);
                    push_mlp(&mut out, &p, mlp);
                }
                BlockParams::Attention { norm1, qkv_w, qkv_b, proj_w, proj_b, norm2, mlp } => {
                    push_ln(&mut out, &p, "norm1", norm1);
                    out.push((format!("{p}.attn.qkv_w"), qkv_w));
                    out.push((format!("{p}.attn.qkv_b"), qkv_b));
                    out.push((format!("{p}.attn.proj_w"), proj_w));
                    out.push((format!("{p}.attn.proj_b"), proj_b));
                    push_ln(&mut out, &p, "norm2", norm2);
                    push_mlp(&mut out, &p, mlp);
                }
            }
        }
        out.push(("head.w".into(), &self.head_w));
        out.push(("head.b".into(), &self.head_b));
        out
    }

    pub fn param_count(&self) -> usize {
        self.named_tensors().iter().map(|(_, t)| t.numel()).sum()
    }

    /// Writes `<name>.npt` per tensor and `manifest.txt` with one
    /// `name dims` line each.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::file(dir, e))?;
        let mut manifest = String::new();
        for (name, t) in self.named_tensors() {
            npt::write(dir.join(format!("{name}.npt")), t)?;
            let dims: Vec<String> = t.dims().iter().map(ToString::to_string).collect();
            let _ = writeln!(manifest, "{name} {}", dims.join("x"));
        }
        let p = dir.join("manifest.txt");
        std::fs::write(&p, manifest).map_err(|e| Error::file(p, e))
    }

    /// Loads a store written by [`ModelParams::save`] for `cfg`, checking
    /// the manifest and every shape.
    pub fn load(dir: impl AsRef<Path>, cfg: &ModelConfig) -> Result<Self> {
        let dir = dir.as_ref();
        let p = dir.join("manifest.txt");
        let manifest = std::fs::read_to_string(&p).map_err(|e| Error::file(&p, e))?;
        let mut out = ModelParams::zeros(cfg)?;
        let expected: Vec<(String, Vec<usize>)> =
            out.named_tensors().into_iter().map(|(n, t)| (n, t.dims().to_vec())).collect();
        let listed: Vec<&str> = manifest.lines().filter(|l| !l.trim().is_empty()).collect();
        if listed.len() != expected.len() {
            return Err(Error::Parse(format!(
                "manifest lists {} tensors, config needs {}",
                listed.len(),
                expected.len()
            )));
        }
        let mut loaded = Vec::with_capacity(expected.len());
        for (line, (name, dims)) in listed.iter().zip(&expected) {
            if line.split_whitespace().next() != Some(name.as_str()) {
                return Err(Error::Parse(format!("manifest entry `{line}` where `{name}` was expected")));
            }
            let t = npt::read(dir.join(format!("{name}.npt")))?;
            if t.dims() != dims.as_slice() {
                return Err(Error::shape("model load", format!("{name}: got {}, expected {dims:?}", t.shape())));
            }
            loaded.push(t);
        }
        let mut it = loaded.into_iter();
        out.for_each_mut(&mut |t| *t = it.next().expect("count checked"))?;
        Ok(out)
    }

    /// Visits tensors in `named_tensors` order.
    fn for_each_mut(&mut self, f: &mut dyn FnMut(&mut Tensor)) -> Result<()> {
        f(&mut self.embed.proj_w);
        f(&mut self.embed.proj_b);
        f(&mut self.embed.pos);
        for b in &mut self.blocks {
            let ln = |l: &mut LayerNorm, f: &mut dyn FnMut(&mut Tensor)| {
                f(&mut l.gamma);
                f(&mut l.beta);
            };
            let mlp = |m: &mut Mlp, f: &mut dyn FnMut(&mut Tensor)| {
                f(&mut m.w1);
                f(&mut m.b1);
                f(&mut m.w2);
                f(&mut m.b2);
            };
            match b {
                BlockParams::Scatter { norm1, gating, norm2, mlp: m } => {
                    ln(norm1, f);
                    *gating = gating.map_tensors(|_, t| {
                        let mut t = t.clone();
                        f(&mut t);
                        Ok(t)
                    })?;
                    ln(norm2, f);
                    mlp(m, f);
                }
                BlockParams::Attention { norm1, qkv_w, qkv_b, proj_w, proj_b, norm2, mlp: m } => {
                    ln(norm1, f);
                    f(qkv_w);
                    f(qkv_b);
                    f(proj_w);
                    f(proj_b);
                    ln(norm2, f);
                    mlp(m, f);
                }
            }
        }
        f(&mut self.head_w);
        f(&mut self.head_b);
        Ok(())
    }
}

fn push_ln<'a>(out: &mut Vec<(String, &'a Tensor)>, p: &str, n: &str, ln: &'a LayerNorm) {
    out.push((format!("{p}.{n}.gamma"), &ln.gamma));
    out.push((format!("{p}.{n}.beta"), &ln.beta));
}

fn push_mlp<'a>(out: &mut Vec<(String, &'a Tensor)>, p: &str, m: &'a Mlp) {
    out.push((format!("{p}.mlp.w1"), &m.w1));
    out.push((format!("{p}.mlp.b1"), &m.b1));
    out.push((format!("{p}.mlp.w2"), &m.w2));
    out.push((format!("{p}.mlp.b2"), &m.b2));
}

/// `[C, G, G]` feature map to row-major `N x C` tokens.
fn to_tokens(x: &Tensor) -> Result<Vec<f64>> {
    Ok(x.permute(&[1, 2, 0])?.into_data())
}

fn from_tokens(tokens: Vec<f64>, c: usize, g: usize) -> Result<Tensor> {
    Tensor::new(&[g, g, c], tokens)?.permute(&[2, 0, 1])
}

/// `y[n, o] = sum_i x[n, i] w[o, i] + b[o]`.
fn linear(x: &[f64], w: &Tensor, b: &Tensor) -> Vec<f64> {
    let (out_dim, in_dim) = (w.dims()[0], w.dims()[1]);
    let mut y = Vec::with_capacity(x.len() / in_dim * out_dim);
    for row in x.chunks_exact(in_dim) {
        for (o, wr) in w.data().chunks_exact(in_dim).enumerate() {
            y.push(row.iter().zip(wr).map(|(a, b)| a * b).sum::<f64>() + b.data()[o]);
        }
    }
    y
}

fn layer_norm(x: &[f64], ln: &LayerNorm) -> Vec<f64> {
    let c = ln.gamma.numel();
    let mut y = Vec::with_capacity(x.len());
    for row in x.chunks_exact(c) {
        let mean = row.iter().sum::<f64>() / c as f64;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / c as f64;
        let inv = 1.0 / (var + LN_EPS).sqrt();
        for (i, v) in row.iter().enumerate() {
            y.push((v - mean) * inv * ln.gamma.data()[i] + ln.beta.data()[i]);
        }
    }
    y
}

fn gelu(x: f64) -> f64 {
    let k = (2.0 / std::f64::consts::PI).sqrt();
    0.5 * x * (1.0 + (k * (x + 0.044715 * x * x * x)).tanh())
}

fn mlp_forward(x: &[f64], m: &Mlp) -> Vec<f64> {
    let h: Vec<f64> = linear(x, &m.w1, &m.b1).into_iter().map(gelu).collect();
    linear(&h, &m.w2, &m.b2)
}

fn add_into(acc: &mut [f64], d: &[f64]) {
    for (a, b) in acc.iter_mut().zip(d) {
        *a += b;
    }
}

/// Linear projection of every non-overlapping patch plus the positional
/// table, as a `C x G x G` map.
pub fn patch_embed(image: &Tensor, embed: &PatchEmbed, cfg: &ModelConfig) -> Result<Tensor> {
    let (s, p, ci) = (cfg.image_size, cfg.patch_size, cfg.in_channels);
    if image.dims() != [ci, s, s] {
        return Err(Error::shape(
            "patch_embed",
            format!("image {} does not match {ci}x{s}x{s}", image.shape()),
        ));
    }
    let g = cfg.grid();
    let mut patches = Vec::with_capacity(g * g * cfg.patch_dim());
    for gi in 0..g {
        for gj in 0..g {
            for ch in 0..ci {
                for di in 0..p {
                    for dj in 0..p {
                        patches.push(image.get(&[ch, gi * p + di, gj * p + dj]));
                    }
                }
            }
        }
    }
    let tokens = linear(&patches, &embed.proj_w, &embed.proj_b);
    from_tokens(tokens, cfg.embed_dim, g)?.add(&embed.pos)
}

fn attention_parts(x: &Tensor, block: &BlockParams, heads: usize) -> Result<(Vec<Vec<f64>>, Vec<f64>, usize)> {
    let BlockParams::Attention { norm1, qkv_w, qkv_b, .. } = block else {
        return Err(Error::shape("attention", "block is not an attention block"));
    };
    let (c, g) = (x.dims()[0], x.dims()[1]);
    if c % heads != 0 || qkv_w.dims() != [3 * c, c] {
        return Err(Error::shape("attention", format!("width {c} incompatible with {heads} heads or weights")));
    }
    let n = g * g;
    let dh = c / heads;
    let qkv = linear(&layer_norm(&to_tokens(x)?, norm1), qkv_w, qkv_b);
    let scale = 1.0 / (dh as f64).sqrt();
    let mut weights = Vec::with_capacity(heads);
    for h in 0..heads {
        let mut a = vec![0.0; n * n];
        for i in 0..n {
            let q = &qkv[i * 3 * c + h * dh..][..dh];
            for j in 0..n {
                let k = &qkv[j * 3 * c + c + h * dh..][..dh];
                a[i * n + j] = q.iter().zip(k).map(|(x, y)| x * y).sum::<f64>() * scale;
            }
            let row = &mut a[i * n..(i + 1) * n];
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for v in row.iter_mut() {
                *v = (*v - mx).exp();
                z += *v;
            }
            for v in row.iter_mut() {
                *v /= z;
            }
        }
        weights.push(a);
    }
    Ok((weights, qkv, n))
}

/// Softmax attention weights `[heads, N, N]` of an attention block.
pub fn attention_weights(x: &Tensor, block: &BlockParams, heads: usize) -> Result<Tensor> {
    let (w, _, n) = attention_parts(x, block, heads)?;
    Tensor::new(&[heads, n, n], w.concat())
}

/// Pre-norm multi-head self-attention then pre-norm MLP, both residual.
pub fn attention_block_forward(x: &Tensor, block: &BlockParams, heads: usize) -> Result<Tensor> {
    let (weights, qkv, n) = attention_parts(x, block, heads)?;
    let BlockParams::Attention { proj_w, proj_b, norm2, mlp, .. } = block else {
        unreachable!("checked by attention_parts")
    };
    let (c, g) = (x.dims()[0], x.dims()[1]);
    let dh = c / heads;
    let mut mixed = vec![0.0; n * c];
    for (h, a) in weights.iter().enumerate() {
        for i in 0..n {
            let out = &mut mixed[i * c + h * dh..][..dh];
            for j in 0..n {
                let wij = a[i * n + j];
                let v = &qkv[j * 3 * c + 2 * c + h * dh..][..dh];
                for (o, vv) in out.iter_mut().zip(v) {
                    *o += wij * vv;
                }
            }
        }
    }
    let mut t = to_tokens(x)?;
    add_into(&mut t, &linear(&mixed, proj_w, proj_b));
    let m = mlp_forward(&layer_norm(&t, norm2), mlp);
    add_into(&mut t, &m);
    from_tokens(t, c, g)
}

/// `x + MLP(LN(scatter(LN(x))))`.
pub fn scatter_block_forward(x: &Tensor, block: &BlockParams, scfg: &ScatterLayerConfig) -> Result<Tensor> {
    let BlockParams::Scatter { norm1, gating, norm2, mlp } = block else {
        return Err(Error::shape("scatter block", "block is not a scatter block"));
    };
    let (c, g) = (x.dims()[0], x.dims()[1]);
    let normed = from_tokens(layer_norm(&to_tokens(x)?, norm1), c, g)?;
    let s = scatter_layer_forward(&normed, gating, scfg)?;
    let m = mlp_forward(&layer_norm(&to_tokens(&s)?, norm2), mlp);
    let mut t = to_tokens(x)?;
    add_into(&mut t, &m);
    from_tokens(t, c, g)
}

/// Features after the last block, `C x G x G`.
pub fn svt_features(image: &Tensor, params: &ModelParams, cfg: &ModelConfig) -> Result<Tensor> {
    cfg.validate()?;
    if params.blocks.len() != cfg.depth {
        return Err(Error::shape("svt_forward", format!("{} blocks for depth {}", params.blocks.len(), cfg.depth)));
    }
    let scfg = cfg.scatter_config()?;
    let mut x = patch_embed(image, &params.embed, cfg)?;
    for b in &params.blocks {
        x = match b {
            BlockParams::Scatter { .. } => scatter_block_forward(&x, b, &scfg)?,
            BlockParams::Attention { .. } => attention_block_forward(&x, b, cfg.heads)?,
        };
    }
    Ok(x)
}

/// Logits for one `in_channels x S x S` image.
pub fn svt_forward(image: &Tensor, params: &ModelParams, cfg: &ModelConfig) -> Result<Tensor> {
    let x = svt_features(image, params, cfg)?;
    let c = cfg.embed_dim;
    let n = cfg.tokens() as f64;
    let mut pooled = vec![0.0; c];
    for row in to_tokens(&x)?.chunks_exact(c) {
        add_into(&mut pooled, row);
    }
    pooled.iter_mut().for_each(|v| *v /= n);
    Tensor::new(&[cfg.num_classes], linear(&pooled, &params.head_w, &params.head_b))
}

/// Closed-form parameter totals per component.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamBreakdown {
    pub embedding: usize,
    pub blocks: Vec<usize>,
    pub head: usize,
}

impl ParamBreakdown {
    pub fn total(&self) -> usize {
        self.embedding + self.blocks.iter().sum::<usize>() + self.head
    }

    pub fn entries(&self) -> Vec<(String, usize)> {
        let mut v = vec![("embedding".to_string(), self.embedding)];
        v.extend(self.blocks.iter().enumerate().map(|(i, &n)| (format!("block_{i:02}"), n)));
        v.push(("head".into(), self.head));
        v
    }
}

pub fn count_params(cfg: &ModelConfig) -> Result<ParamBreakdown> {
    cfg.validate()?;
    let (c, g, hid) = (cfg.embed_dim, cfg.grid(), cfg.hidden_dim());
    let norms = 2 * 2 * c;
    let mlp = hid * c + hid + c * hid + c;
    let gating = count_variant(&cfg.scatter_config()?, c, g, g).total();
    let attn = 3 * c * c + 3 * c + c * c + c;
    let blocks = (0..cfg.depth)
        .map(|i| norms + mlp + if i < cfg.scatter_layers { gating } else { attn })
        .collect();
    Ok(ParamBreakdown {
        embedding: c * cfg.patch_dim() + c + c * g * g,
        blocks,
        head: cfg.num_classes * c + cfg.num_classes,
    })
}

/// Multiply-accumulate counts per operation class.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct FlopBreakdown {
    pub patch_projection: usize,
    pub dtcwt: usize,
    pub gating: usize,
    pub attention_qkv: usize,
    pub attention_scores: usize,
    pub attention_values: usize,
    pub attention_proj: usize,
    pub mlp: usize,
    pub head: usize,
}

impl FlopBreakdown {
    pub fn total(&self) -> usize {
        self.patch_projection
            + self.dtcwt
            + self.gating
            + self.attention_qkv
            + self.attention_scores
            + self.attention_values
            + self.attention_proj
            + self.mlp
            + self.head
    }

    pub fn gflops(&self) -> f64 {
        self.total() as f64 * 1e-9
    }
}

/// Filtering cost of one forward DTCWT on `c x h x w` at the declared tap
/// counts: three separable passes of lowpass plus highpass per level, the
/// level-1 pass at full resolution and each q-shift level on the
/// previous lowpass.
pub fn dtcwt_macs(set: &WaveletFilterSet, c: usize, h: usize, w: usize, levels: usize) -> usize {
    let l1 = set.level1_tree_a.analysis.low.len() + set.level1_tree_a.analysis.high.len();
    let q = set.qshift_tree_a.analysis.low.len() + set.qshift_tree_a.analysis.high.len();
    let mut total = 3 * h * w * l1;
    for m in 2..=levels {
        total += 3 * (h >> (m - 2)) * (w >> (m - 2)) * q / 2;
    }
    c * total
}

/// Multiply-accumulates of one forward pass (biases and normalization
/// excluded).
pub fn count_flops(cfg: &ModelConfig) -> Result<FlopBreakdown> {
    cfg.validate()?;
    let (c, g, hid, n) = (cfg.embed_dim, cfg.grid(), cfg.hidden_dim(), cfg.tokens());
    let scfg = cfg.scatter_config()?;
    let alpha = cfg.scatter_layers;
    let attn_blocks = cfg.depth - alpha;
    Ok(FlopBreakdown {
        patch_projection: n * c * cfg.patch_dim(),
        dtcwt: alpha * 2 * dtcwt_macs(scfg.transform.filters(), c, g, g, cfg.levels),
        gating: alpha * count_variant(&scfg, c, g, g).macs,
        attention_qkv: attn_blocks * n * 3 * c * c,
        attention_scores: attn_blocks * n * n * c,
        attention_values: attn_blocks * n * n * c,
        attention_proj: attn_blocks * n * c * c,
        mlp: cfg.depth * 2 * n * c * hid,
        head: cfg.num_classes * c,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::random_tensor;

    #[test]
    fn presets_validate() {
        for name in ["ti", "xs", "s", "b", "tiny"] {
            ModelConfig::preset(name).unwrap().validate().unwrap();
        }
        assert_eq!(ModelConfig::ti().grid(), 14);
        assert_eq!(ModelConfig::ti().split, ChannelSplit::new(32, 8).unwrap());
    }

    #[test]
    fn invalid_configs() {
        let mut c = ModelConfig::tiny();
        c.scatter_layers = 5;
        assert!(c.validate().is_err());
        let mut c = ModelConfig::tiny();
        c.heads = 3;
        assert!(c.validate().is_err());
        let mut c = ModelConfig::tiny();
        c.patch_size = 5;
        assert!(c.validate().is_err());
        let mut c = ModelConfig::ti();
        c.levels = 2;
        assert!(c.validate().is_err());
    }

    #[test]
    fn key_value_config() {
        let cfg = ModelConfig::from_key_values("preset=tiny\n# comment\ndepth=3\nembed_dim=32\nheads=4\n").unwrap();
        assert_eq!(cfg.depth, 3);
        assert_eq!(cfg.split.channels(), 32);
        assert!(ModelConfig::from_key_values("bogus=1").is_err());
        assert!(ModelConfig::from_key_values("C_b=4").is_err());
    }

    #[test]
    fn ti_totals_in_range() {
        let p = count_params(&ModelConfig::ti()).unwrap().total() as f64;
        assert!((p / 9.0e6 - 1.0).abs() <= 0.15, "{p}");
        let f = count_flops(&ModelConfig::ti()).unwrap().gflops();
        assert!((f / 1.8 - 1.0).abs() <= 0.25, "{f}");
    }

    #[test]
    fn closed_form_matches_instantiation() {
        for cfg in [ModelConfig::tiny(), ModelConfig::ti()] {
            let p = ModelParams::zeros(&cfg).unwrap();
            assert_eq!(p.param_count(), count_params(&cfg).unwrap().total());
        }
    }

    #[test]
    fn zero_depth_counts() {
        let mut cfg = ModelConfig::tiny();
        cfg.depth = 0;
        cfg.scatter_layers = 0;
        let b = count_params(&cfg).unwrap();
        assert!(b.blocks.is_empty());
        assert_eq!(b.total(), b.embedding + b.head);
        let f = count_flops(&cfg).unwrap();
        assert_eq!(f.total(), f.patch_projection + f.head);
    }

    #[test]
    fn score_macs_scale_with_token_count_squared() {
        let a = count_flops(&ModelConfig::ti()).unwrap();
        let mut cfg = ModelConfig::ti();
        cfg.patch_size = 8;
        let b = count_flops(&cfg).unwrap();
        let tokens = cfg.tokens() as f64 / ModelConfig::ti().tokens() as f64;
        let r = b.attention_scores as f64 / a.attention_scores as f64;
        assert!((r - tokens * tokens).abs() < 1e-9);
    }

    #[test]
    fn patch_embed_basics() {
        let cfg = ModelConfig::tiny();
        let zero = ModelParams::zeros(&cfg).unwrap();
        let img = Tensor::zeros(&[3, 32, 32]).unwrap();
        assert_eq!(patch_embed(&img, &zero.embed, &cfg).unwrap().sum_sq(), 0.0);
        // Identity-like projection copies the first patch pixels.
        let mut e = zero.embed.clone();
        e.proj_w = Tensor::from_fn(&[16, 48], |i| if i / 48 == i % 48 { 1.0 } else { 0.0 }).unwrap();
        let img = random_tensor(&[3, 32, 32], 4);
        let y = patch_embed(&img, &e, &cfg).unwrap();
        for k in 0..16 {
            assert_eq!(y.get(&[k, 1, 2]), img.get(&[0, 4 + k / 4, 8 + k % 4]));
        }
    }

    #[test]
    fn attention_rows_are_stochastic_and_equivariant() {
        let cfg = ModelConfig::tiny();
        let p = ModelParams::init(&cfg, 3).unwrap();
        let block = &p.blocks[3];
        let x = random_tensor(&[16, 8, 8], 5);
        let a = attention_weights(&x, block, cfg.heads).unwrap();
        for row in a.data().chunks_exact(64) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-10);
        }
        // Transposing the grid is a token permutation.
        let xt = x.permute(&[0, 2, 1]).unwrap();
        let y = attention_block_forward(&x, block, cfg.heads).unwrap();
        let yt = attention_block_forward(&xt, block, cfg.heads).unwrap();
        assert!(yt.max_abs_diff(&y.permute(&[0, 2, 1]).unwrap()).unwrap() < 1e-12);
    }

    #[test]
    fn zero_qkv_gives_uniform_rows() {
        let cfg = ModelConfig::tiny();
        let mut p = ModelParams::init(&cfg, 3).unwrap();
        if let BlockParams::Attention { qkv_w, .. } = &mut p.blocks[2] {
            *qkv_w = Tensor::zeros(qkv_w.dims()).unwrap();
        }
        let a = attention_weights(&random_tensor(&[16, 8, 8], 1), &p.blocks[2], 2).unwrap();
        assert!(a.data().iter().all(|v| (v - 1.0 / 64.0).abs() < 1e-15));
    }

    #[test]
    fn single_token_attention_is_identity_mixing() {
        let mut cfg = ModelConfig::tiny();
        cfg.image_size = 4;
        cfg.scatter_layers = 0;
        let p = ModelParams::init(&cfg, 1).unwrap();
        let BlockParams::Attention { qkv_w, qkv_b, proj_w, proj_b, norm1, norm2, mlp } = &p.blocks[0] else { panic!() };
        let x = random_tensor(&[16, 1, 1], 2);
        let y = attention_block_forward(&x, &p.blocks[0], 2).unwrap();
        let t = x.data().to_vec();
        let v = &linear(&layer_norm(&t, norm1), qkv_w, qkv_b)[32..];
        let mut want = t.clone();
        add_into(&mut want, &linear(v, proj_w, proj_b));
        let m = mlp_forward(&layer_norm(&want, norm2), mlp);
        add_into(&mut want, &m);
        assert!(y.data().iter().zip(&want).all(|(a, b)| (a - b).abs() < 1e-12));
    }

    #[test]
    fn forward_is_deterministic_and_finite() {
        let cfg = ModelConfig::tiny();
        let p = ModelParams::init(&cfg, 9).unwrap();
        let img = random_tensor(&[3, 32, 32], 1);
        let a = svt_forward(&img, &p, &cfg).unwrap();
        let b = svt_forward(&img, &ModelParams::init(&cfg, 9).unwrap(), &cfg).unwrap();
        assert_eq!(a.data(), b.data());
        assert!(a.data().iter().all(|v| v.is_finite()));
        assert_eq!(a.dims(), &[10]);
    }

    #[test]
    fn zero_head_gives_zero_logit() {
        let mut cfg = ModelConfig::tiny();
        cfg.num_classes = 1;
        let mut p = ModelParams::init(&cfg, 9).unwrap();
        p.head_w = Tensor::zeros(&[1, 16]).unwrap();
        for s in [1, 2] {
            let y = svt_forward(&random_tensor(&[3, 32, 32], s), &p, &cfg).unwrap();
            assert_eq!(y.data(), &[0.0]);
        }
    }

    #[test]
    fn identity_chain() {
        let cfg = ModelConfig::tiny();
        let mut p = ModelParams::init(&cfg, 2).unwrap();
        let scfg = cfg.scatter_config().unwrap();
        for b in &mut p.blocks {
            match b {
                BlockParams::Scatter { gating, mlp, .. } => {
                    *gating = GatingParams::identity(&scfg, 16, 8, 8).unwrap();
                    mlp.w2 = Tensor::zeros(mlp.w2.dims()).unwrap();
                }
                BlockParams::Attention { proj_w, mlp, .. } => {
                    *proj_w = Tensor::zeros(proj_w.dims()).unwrap();
                    mlp.w2 = Tensor::zeros(mlp.w2.dims()).unwrap();
                }
            }
        }
        let img = random_tensor(&[3, 32, 32], 3);
        let emb = patch_embed(&img, &p.embed, &cfg).unwrap();
        assert_eq!(svt_features(&img, &p, &cfg).unwrap(), emb);
    }

    #[test]
    fn blocks_preserve_token_grid() {
        let cfg = ModelConfig::tiny();
        let p = ModelParams::init(&cfg, 2).unwrap();
        let scfg = cfg.scatter_config().unwrap();
        let x = random_tensor(&[16, 8, 8], 1);
        for b in &p.blocks {
            let y = match b {
                BlockParams::Scatter { .. } => scatter_block_forward(&x, b, &scfg).unwrap(),
                BlockParams::Attention { .. } => attention_block_forward(&x, b, 2).unwrap(),
            };
            assert_eq!(y.dims(), x.dims());
        }
    }

    #[test]
    fn store_round_trip() {
        let cfg = ModelConfig::tiny();
        let p = ModelParams::init(&cfg, 5).unwrap();
        let dir = tempfile::tempdir().unwrap();
        p.save(dir.path()).unwrap();
        assert_eq!(ModelParams::load(dir.path(), &cfg).unwrap(), p);
        let mut other = cfg.clone();
        other.depth = 3;
        assert!(ModelParams::load(dir.path(), &other).is_err());
    }
}
