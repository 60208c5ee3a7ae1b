//! Spectral gating: Hadamard blending of the lowpass, Einstein channel and
//! token blending of the oriented highpass, wrapped around the DTCWT into
//! an invertible scatter layer with exact vector-Jacobian products.

use std::fmt;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use rand_chacha::ChaCha8Rng;

use crate::dtcwt::{dtcwt_adjoint, dtcwt_forward, dtcwt_inverse, dtcwt_inverse_adjoint, ScatterPyramid, TransformConfig};
use crate::error::{Error, Result};
use crate::npt;
use crate::synth::{normal_tensor, rng};
use crate::tensor::Tensor;

/// Factorization `C = C_b * C_d` used by the channel contraction.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ChannelSplit {
    pub blocks: usize,
    pub block_dim: usize,
}

impl ChannelSplit {
    /// Requires `C_b > C_d` unless `C_d = 1`.
    pub fn new(blocks: usize, block_dim: usize) -> Result<Self> {
        if blocks == 0 || block_dim == 0 {
            return Err(Error::Config("channel split extents must be >= 1".into()));
        }
        if block_dim > 1 && blocks <= block_dim {
            return Err(Error::Config(format!(
                "channel split needs C_b > C_d, got C_b={blocks}, C_d={block_dim}"
            )));
        }
        Ok(ChannelSplit { blocks, block_dim })
    }

    /// Largest `C_d` dividing `c` with `C_b >= 4 C_d`, falling back to
    /// `C_d = 1`.
    pub fn default_for(c: usize) -> Result<Self> {
        if c == 0 {
            return Err(Error::Config("zero channels".into()));
        }
        let d = (1..=c)
            .filter(|d| c.is_multiple_of(*d) && c / d >= 4 * d)
            .max()
            .unwrap_or(1);
        ChannelSplit::new(c / d, d)
    }

    pub fn channels(&self) -> usize {
        self.blocks * self.block_dim
    }
}

/// How the lowpass is blended.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum LowMix {
    Tensor,
    Einstein,
}

/// How one highpass mixing path is blended.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum HighMix {
    Einstein,
    Tensor,
    Off,
}

/// A row of the ablation grid, written as four letters: the low pair
/// (`TT` or `EE`) then the high channel and token paths (`TT`, `EE`, `EX`,
/// `XE`). A high `TT` is one full-shape Hadamard gate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct GatingVariant {
    pub low_mix: LowMix,
    pub high_channel: HighMix,
    pub high_token: HighMix,
}

impl GatingVariant {
    pub const TTEE: GatingVariant = GatingVariant {
        low_mix: LowMix::Tensor,
        high_channel: HighMix::Einstein,
        high_token: HighMix::Einstein,
    };

    /// The six ablation rows.
    pub fn ablation_grid() -> [GatingVariant; 6] {
        ["TTTT", "EETT", "EEEE", "TTEE", "TTEX", "TTXE"].map(|s| s.parse().expect("valid code"))
    }

    pub fn new(low_mix: LowMix, high_channel: HighMix, high_token: HighMix) -> Result<Self> {
        let tensor_high = high_channel == HighMix::Tensor || high_token == HighMix::Tensor;
        if tensor_high && high_channel != high_token {
            return Err(Error::Config(
                "Hadamard high-frequency gating covers both channel and token paths".into(),
            ));
        }
        Ok(GatingVariant { low_mix, high_channel, high_token })
    }

    pub fn high_is_tensor(&self) -> bool {
        self.high_channel == HighMix::Tensor
    }

    pub fn code(&self) -> String {
        let l = match self.low_mix {
            LowMix::Tensor => "TT",
            LowMix::Einstein => "EE",
        };
        let h = |m: HighMix| match m {
            HighMix::Einstein => 'E',
            HighMix::Tensor => 'T',
            HighMix::Off => 'X',
        };
        format!("{l}{}{}", h(self.high_channel), h(self.high_token))
    }
}

impl Default for GatingVariant {
    fn default() -> Self {
        GatingVariant::TTEE
    }
}

impl fmt::Display for GatingVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.code())
    }
}

impl FromStr for GatingVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let c: Vec<char> = s.trim().to_ascii_uppercase().chars().collect();
        let bad = || Error::Parse(format!("unknown gating variant `{s}`"));
        if c.len() != 4 {
            return Err(bad());
        }
        let low = match (c[0], c[1]) {
            ('T', 'T') => LowMix::Tensor,
            ('E', 'E') => LowMix::Einstein,
            _ => return Err(bad()),
        };
        let high = |ch: char| match ch {
            'E' => Ok(HighMix::Einstein),
            'T' => Ok(HighMix::Tensor),
            'X' => Ok(HighMix::Off),
            _ => Err(bad()),
        };
        GatingVariant::new(low, high(c[2])?, high(c[3])?).map_err(|_| bad())
    }
}

/// Layer geometry and gating choices.
#[derive(Clone, Debug)]
pub struct ScatterLayerConfig {
    pub transform: TransformConfig,
    pub variant: GatingVariant,
    pub split: ChannelSplit,
    /// Orientations kept before gating; all true by default.
    pub orientations: [bool; 6],
}

impl ScatterLayerConfig {
    /// TTEE gating over all six orientations.
    pub fn new(transform: TransformConfig, split: ChannelSplit) -> Self {
        ScatterLayerConfig {
            transform,
            variant: GatingVariant::TTEE,
            split,
            orientations: [true; 6],
        }
    }

    pub fn with_variant(mut self, variant: GatingVariant) -> Self {
        self.variant = variant;
        self
    }

    /// Keeps orientations `0..k`.
    pub fn with_first_orientations(mut self, k: usize) -> Self {
        for (i, o) in self.orientations.iter_mut().enumerate() {
            *o = i < k;
        }
        self
    }

    pub fn levels(&self) -> usize {
        self.transform.levels()
    }

    /// Lowpass and per-level highpass spatial extents for an `h x w` input.
    pub fn spatial(&self, h: usize, w: usize) -> ((usize, usize), Vec<(usize, usize)>) {
        let m = self.levels();
        ((h >> (m - 1), w >> (m - 1)), (1..=m).map(|l| (h >> l, w >> l)).collect())
    }
}

/// Einstein blending weights `(B, D, D)` with bias `(B, D)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Mix {
    pub weight: Tensor,
    pub bias: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub enum LowGate {
    Tensor(Tensor),
    Einstein { channel: Mix, token: Mix },
}

#[derive(Clone, Debug, PartialEq)]
pub enum HighGate {
    /// One full-shape Hadamard weight per level.
    Tensor(Vec<Tensor>),
    /// Channel weights shared by all levels; token weights per level
    /// (empty when the token path is off).
    Einstein { channel: Option<Mix>, token: Vec<Mix> },
}

/// Learnable blending weights of one scatter layer. Gradients use the
/// same type.
#[derive(Clone, Debug, PartialEq)]
pub struct GatingParams {
    pub split: ChannelSplit,
    pub variant: GatingVariant,
    pub low: LowGate,
    pub high: HighGate,
}

/// How each tensor is initialized by [`GatingParams::build`].
#[derive(Clone, Copy)]
enum Fill {
    /// Hadamard weights `1 + N(0, s)`, Einstein weights `I + N(0, s)`,
    /// biases `N(0, b)`.
    NearIdentity { weight_sigma: f64, bias_sigma: f64 },
    Zero,
}

impl GatingParams {
    fn build(cfg: &ScatterLayerConfig, c: usize, h: usize, w: usize, fill: Fill, r: &mut ChaCha8Rng) -> Result<Self> {
        if cfg.split.channels() != c {
            return Err(Error::Config(format!(
                "channel split {}x{} does not factor C={c}",
                cfg.split.blocks, cfg.split.block_dim
            )));
        }
        cfg.transform.check_input(h, w)?;
        let needs_square = cfg.variant.low_mix == LowMix::Einstein || cfg.variant.high_token == HighMix::Einstein;
        if needs_square && h != w {
            return Err(Error::NonSquareSpatial { height: h, width: w });
        }
        let ((hl, wl), high) = cfg.spatial(h, w);
        let (cb, cd) = (cfg.split.blocks, cfg.split.block_dim);
        let hadamard = |dims: &[usize], r: &mut ChaCha8Rng| -> Result<Tensor> {
            match fill {
                Fill::NearIdentity { weight_sigma, .. } => Ok(normal_tensor(dims, r, weight_sigma).map(|v| 1.0 + v)),
                Fill::Zero => Tensor::zeros(dims),
            }
        };
        let mix = |b: usize, d: usize, r: &mut ChaCha8Rng| -> Result<Mix> {
            match fill {
                Fill::NearIdentity { weight_sigma, bias_sigma } => Ok(Mix {
                    weight: Tensor::identity_stack(b, d)?.add(&normal_tensor(&[b, d, d], r, weight_sigma))?,
                    bias: normal_tensor(&[b, d], r, bias_sigma),
                }),
                Fill::Zero => Ok(Mix { weight: Tensor::zeros(&[b, d, d])?, bias: Tensor::zeros(&[b, d])? }),
            }
        };
        let low = match cfg.variant.low_mix {
            LowMix::Tensor => LowGate::Tensor(hadamard(&[c, hl, wl], r)?),
            LowMix::Einstein => {
                let channel = mix(cb, cd, r)?;
                let token = mix(wl, hl, r)?;
                LowGate::Einstein { channel, token }
            }
        };
        let high = if cfg.variant.high_is_tensor() {
            HighGate::Tensor(
                high.iter()
                    .map(|&(hm, wm)| hadamard(&[6, c, hm, wm, 2], r))
                    .collect::<Result<_>>()?,
            )
        } else {
            let channel = match cfg.variant.high_channel {
                HighMix::Einstein => Some(mix(cb, cd, r)?),
                _ => None,
            };
            let token = match cfg.variant.high_token {
                HighMix::Einstein => high.iter().map(|&(hm, wm)| mix(wm, hm, r)).collect::<Result<_>>()?,
                _ => Vec::new(),
            };
            HighGate::Einstein { channel, token }
        };
        Ok(GatingParams { split: cfg.split, variant: cfg.variant, low, high })
    }

    /// Parameters making the layer an identity map.
    pub fn identity(cfg: &ScatterLayerConfig, c: usize, h: usize, w: usize) -> Result<Self> {
        GatingParams::build(
            cfg,
            c,
            h,
            w,
            Fill::NearIdentity { weight_sigma: 0.0, bias_sigma: 0.0 },
            &mut rng(0),
        )
    }

    /// All-zero parameters (also the zero gradient).
    pub fn zeros(cfg: &ScatterLayerConfig, c: usize, h: usize, w: usize) -> Result<Self> {
        GatingParams::build(cfg, c, h, w, Fill::Zero, &mut rng(0))
    }

    /// Identity plus Gaussian perturbations of the weights (standard
    /// deviation `weight_sigma`) and Gaussian biases (`bias_sigma`).
    pub fn perturbed_identity(
        cfg: &ScatterLayerConfig,
        c: usize,
        h: usize,
        w: usize,
        weight_sigma: f64,
        bias_sigma: f64,
        seed: u64,
    ) -> Result<Self> {
        GatingParams::build(cfg, c, h, w, Fill::NearIdentity { weight_sigma, bias_sigma }, &mut rng(seed))
    }

    /// Training initialization: weights `identity + N(0, 0.02)`, zero biases.
    pub fn init(cfg: &ScatterLayerConfig, c: usize, h: usize, w: usize, seed: u64) -> Result<Self> {
        GatingParams::perturbed_identity(cfg, c, h, w, 0.02, 0.0, seed)
    }

    /// Tensors in a fixed order with their file stems.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out: Vec<(String, &Tensor)> = Vec::new();
        match &self.low {
            LowGate::Tensor(w) => out.push(("w_phi".into(), w)),
            LowGate::Einstein { channel, token } => {
                out.push(("w_phi_c".into(), &channel.weight));
                out.push(("b_phi_c".into(), &channel.bias));
                out.push(("w_phi_t".into(), &token.weight));
                out.push(("b_phi_t".into(), &token.bias));
            }
        }
        let level = |base: &str, m: usize| if m == 0 { base.to_string() } else { format!("{base}_m{}", m + 1) };
        match &self.high {
            HighGate::Tensor(ws) => {
                for (m, w) in ws.iter().enumerate() {
                    out.push((level("w_psi", m), w));
                }
            }
            HighGate::Einstein { channel, token } => {
                if let Some(c) = channel {
                    out.push(("w_psi_c".into(), &c.weight));
                    out.push(("b_psi_c".into(), &c.bias));
                }
                for (m, t) in token.iter().enumerate() {
                    out.push((level("w_psi_t", m), &t.weight));
                    out.push((level("b_psi_t", m), &t.bias));
                }
            }
        }
        out
    }

    /// Rebuilds the same structure with every tensor replaced by `f(name, t)`.
    pub fn map_tensors(&self, mut f: impl FnMut(&str, &Tensor) -> Result<Tensor>) -> Result<Self> {
        let names: Vec<String> = self.named_tensors().into_iter().map(|(n, _)| n).collect();
        let mut i = 0;
        let mut next = |t: &Tensor| {
            let r = f(&names[i], t);
            i += 1;
            r
        };
        let mix = |m: &Mix, next: &mut dyn FnMut(&Tensor) -> Result<Tensor>| -> Result<Mix> {
            Ok(Mix { weight: next(&m.weight)?, bias: next(&m.bias)? })
        };
        let low = match &self.low {
            LowGate::Tensor(w) => LowGate::Tensor(next(w)?),
            LowGate::Einstein { channel, token } => {
                let channel = mix(channel, &mut next)?;
                let token = mix(token, &mut next)?;
                LowGate::Einstein { channel, token }
            }
        };
        let high = match &self.high {
            HighGate::Tensor(ws) => HighGate::Tensor(ws.iter().map(&mut next).collect::<Result<_>>()?),
            HighGate::Einstein { channel, token } => {
                let channel = match channel {
                    Some(c) => Some(mix(c, &mut next)?),
                    None => None,
                };
                let token = token.iter().map(|t| mix(t, &mut next)).collect::<Result<_>>()?;
                HighGate::Einstein { channel, token }
            }
        };
        Ok(GatingParams { split: self.split, variant: self.variant, low, high })
    }

    /// Elementwise combination of two parameter sets of identical structure.
    pub fn zip_map(&self, other: &Self, f: impl Fn(&Tensor, &Tensor) -> Result<Tensor>) -> Result<Self> {
        let theirs = other.named_tensors();
        let mine = self.named_tensors();
        if mine.len() != theirs.len() || mine.iter().zip(&theirs).any(|(a, b)| a.0 != b.0) {
            return Err(Error::shape("gating params", "parameter structures differ"));
        }
        let mut i = 0;
        self.map_tensors(|_, t| {
            let r = f(t, theirs[i].1);
            i += 1;
            r
        })
    }

    /// `self + s * other`.
    pub fn axpy(&self, s: f64, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a.axpy(s, b))
    }

    /// Sum of squares over all tensors.
    pub fn sum_sq(&self) -> f64 {
        self.named_tensors().iter().map(|(_, t)| t.sum_sq()).sum()
    }

    pub fn dot(&self, other: &Self) -> Result<f64> {
        let a = self.named_tensors();
        let b = other.named_tensors();
        if a.len() != b.len() {
            return Err(Error::shape("gating params", "parameter structures differ"));
        }
        a.iter().zip(&b).map(|((_, x), (_, y))| x.dot(y)).sum()
    }

    pub fn param_count(&self) -> usize {
        self.named_tensors().iter().map(|(_, t)| t.numel()).sum()
    }

    /// Checks the tensors against the geometry of `cfg` for a `C x h x w`
    /// input.
    pub fn check(&self, cfg: &ScatterLayerConfig, c: usize, h: usize, w: usize) -> Result<()> {
        let reference = GatingParams::zeros(cfg, c, h, w)?;
        let mine = self.named_tensors();
        let want = reference.named_tensors();
        if self.variant != cfg.variant || self.split != cfg.split || mine.len() != want.len() {
            return Err(Error::shape(
                "gating params",
                format!("parameters for {} do not match layer variant {}", self.variant, cfg.variant),
            ));
        }
        for ((n, t), (_, r)) in mine.iter().zip(&want) {
            if t.dims() != r.dims() {
                return Err(Error::shape(
                    "gating params",
                    format!("{n} has shape {}, expected {}", t.shape(), r.shape()),
                ));
            }
            if let Some(index) = t.data().iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite { index });
            }
        }
        Ok(())
    }

    /// Writes one NPT file per tensor plus `gating_meta.txt`.
    pub fn save(&self, dir: impl AsRef<Path>, cfg: &ScatterLayerConfig, c: usize, h: usize, w: usize) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::file(dir, e))?;
        for (name, t) in self.named_tensors() {
            npt::write(dir.join(format!("{name}.npt")), t)?;
        }
        let mut meta = String::new();
        let _ = writeln!(meta, "C_b={}", self.split.blocks);
        let _ = writeln!(meta, "C_d={}", self.split.block_dim);
        let _ = writeln!(meta, "variant={}", self.variant);
        let _ = writeln!(meta, "levels={}", cfg.levels());
        let _ = writeln!(meta, "channels={c}");
        let _ = writeln!(meta, "height={h}");
        let _ = writeln!(meta, "width={w}");
        let p = dir.join("gating_meta.txt");
        std::fs::write(&p, meta).map_err(|e| Error::file(p, e))
    }

    /// Reads a directory written by [`GatingParams::save`], returning the
    /// parameters, the layer configuration (bundled filters) and the input
    /// geometry `(C, H, W)`.
    pub fn load(dir: impl AsRef<Path>) -> Result<(Self, ScatterLayerConfig, (usize, usize, usize))> {
        let dir = dir.as_ref();
        let p = dir.join("gating_meta.txt");
        let text = std::fs::read_to_string(&p).map_err(|e| Error::file(&p, e))?;
        let kv = crate::config::parse_key_values(&text)?;
        let num = |k: &str| -> Result<usize> {
            kv.get(k)
                .ok_or_else(|| Error::Parse(format!("gating_meta.txt: missing `{k}`")))?
                .parse()
                .map_err(|e| Error::Parse(format!("gating_meta.txt: `{k}`: {e}")))
        };
        let variant: GatingVariant = kv
            .get("variant")
            .ok_or_else(|| Error::Parse("gating_meta.txt: missing `variant`".into()))?
            .parse()?;
        let split = ChannelSplit::new(num("C_b")?, num("C_d")?)?;
        let (c, h, w) = (num("channels")?, num("height")?, num("width")?);
        let cfg = ScatterLayerConfig::new(TransformConfig::with_levels(num("levels")?)?, split).with_variant(variant);
        let params = GatingParams::zeros(&cfg, c, h, w)?.map_tensors(|name, _| npt::read(dir.join(format!("{name}.npt"))))?;
        params.check(&cfg, c, h, w)?;
        Ok((params, cfg, (c, h, w)))
    }
}

/// Hadamard gate of the lowpass.
pub fn tbm_low(x_phi: &Tensor, w_phi: &Tensor) -> Result<Tensor> {
    x_phi.hadamard(w_phi)
}

/// Channel blending of `2 x 6 x H x W x C_b x C_d` highpass coefficients.
pub fn ebm_channel(x_psi: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    x_psi.einstein_contract(w)?.broadcast_add_bias(b)
}

/// Token blending of `... x W x H` coefficients with `W x H x H` weights
/// and an `H x H` bias indexed `(w, h')`.
pub fn ebm_token(s: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    let r = s.dims().len();
    if r < 2 {
        return Err(Error::shape("ebm_token", "need at least two spatial axes"));
    }
    let (ws, hs) = (s.dims()[r - 2], s.dims()[r - 1]);
    if ws != hs {
        return Err(Error::NonSquareSpatial { height: hs, width: ws });
    }
    s.einstein_contract(w)?.broadcast_add_bias(b)
}

fn inverse_perm(p: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; p.len()];
    for (i, &a) in p.iter().enumerate() {
        inv[a] = i;
    }
    inv
}

// Canonical highpass [6, C, h, w, 2] -> [2, 6, h, w, C].
const HP_TO_CHANNEL: [usize; 5] = [4, 0, 2, 3, 1];
// [2, 6, h, w, C] -> [2, 6, C, w, h].
const CHANNEL_TO_TOKEN: [usize; 5] = [0, 1, 4, 3, 2];
// Lowpass [C, h, w] -> [h, w, C].
const LP_TO_CHANNEL: [usize; 3] = [1, 2, 0];
// [h, w, C] -> [C, w, h].
const LP_CHANNEL_TO_TOKEN: [usize; 3] = [2, 1, 0];

/// Intermediates of one Einstein path needed by its VJP.
struct EinsteinTape {
    /// Input of the channel contraction, `[..., C_b, C_d]`.
    channel_in: Option<Tensor>,
    /// Input of the token contraction, `[..., W, H]`.
    token_in: Option<Tensor>,
}

/// Runs channel then token Einstein blending on a tensor laid out with
/// `to_channel` / `channel_to_token` permutations; returns the result in
/// the original layout.
fn einstein_path(
    x: &Tensor,
    split: ChannelSplit,
    to_channel: &[usize],
    channel_to_token: &[usize],
    channel: Option<&Mix>,
    token: Option<&Mix>,
) -> Result<(Tensor, EinsteinTape)> {
    let mut t = x.permute(to_channel)?;
    let flat = t.dims().to_vec();
    let mut split_dims = flat[..flat.len() - 1].to_vec();
    split_dims.extend([split.blocks, split.block_dim]);
    let mut channel_in = None;
    if let Some(m) = channel {
        let a = t.into_reshape(&split_dims)?;
        t = ebm_channel(&a, &m.weight, &m.bias)?.into_reshape(&flat)?;
        channel_in = Some(a);
    }
    let mut s = t.permute(channel_to_token)?;
    let mut token_in = None;
    if let Some(m) = token {
        let y = ebm_token(&s, &m.weight, &m.bias)?;
        token_in = Some(s);
        s = y;
    }
    let back = inverse_perm(&compose(to_channel, channel_to_token));
    Ok((s.permute(&back)?, EinsteinTape { channel_in, token_in }))
}

/// Permutation equal to applying `a` then `b`.
fn compose(a: &[usize], b: &[usize]) -> Vec<usize> {
    b.iter().map(|&i| a[i]).collect()
}

/// VJP of [`einstein_path`]: returns the input gradient and the
/// (channel, token) parameter gradients.
fn einstein_path_vjp(
    g: &Tensor,
    to_channel: &[usize],
    channel_to_token: &[usize],
    channel: Option<&Mix>,
    token: Option<&Mix>,
    tape: &EinsteinTape,
) -> Result<(Tensor, Option<Mix>, Option<Mix>)> {
    let total = compose(to_channel, channel_to_token);
    let mut gs = g.permute(&total)?;
    let mut g_token = None;
    if let (Some(m), Some(s)) = (token, &tape.token_in) {
        let trailing = &gs.dims()[gs.dims().len() - 2..].to_vec();
        let gb = gs.sum_to_trailing(trailing)?;
        let (ga, gw) = s.einstein_contract_vjp(&m.weight, &gs)?;
        g_token = Some(Mix { weight: gw, bias: gb });
        gs = ga;
    }
    let mut gt = gs.permute(&inverse_perm(channel_to_token))?;
    let mut g_channel = None;
    if let (Some(m), Some(a)) = (channel, &tape.channel_in) {
        let flat = gt.dims().to_vec();
        let gsplit = gt.into_reshape(a.dims())?;
        let r = gsplit.dims().len();
        let gb = gsplit.sum_to_trailing(&gsplit.dims()[r - 2..])?;
        let (ga, gw) = a.einstein_contract_vjp(&m.weight, &gsplit)?;
        g_channel = Some(Mix { weight: gw, bias: gb });
        gt = ga.into_reshape(&flat)?;
    }
    Ok((gt.permute(&inverse_perm(to_channel))?, g_channel, g_token))
}

/// Channel then token Einstein blending of one canonical
/// `6 x C x H x W x 2` highpass level; either path may be skipped.
pub fn ebm_highpass(x: &Tensor, split: ChannelSplit, channel: Option<&Mix>, token: Option<&Mix>) -> Result<Tensor> {
    if x.dims().len() != 5 || x.dims()[0] != 6 || x.dims()[4] != 2 || x.dims()[1] != split.channels() {
        return Err(Error::shape(
            "ebm_highpass",
            format!("expected 6 x {} x H x W x 2, got {}", split.channels(), x.shape()),
        ));
    }
    Ok(einstein_path(x, split, &HP_TO_CHANNEL, &CHANNEL_TO_TOKEN, channel, token)?.0)
}

/// Everything the VJP needs from a forward pass through the gates.
struct GateTape {
    input: ScatterPyramid,
    low: Option<EinsteinTape>,
    high: Vec<Option<EinsteinTape>>,
}

fn gate_forward(p: &ScatterPyramid, params: &GatingParams) -> Result<(ScatterPyramid, GateTape)> {
    let split = params.split;
    let (lowpass, low_tape) = match &params.low {
        LowGate::Tensor(w) => (tbm_low(&p.lowpass, w)?, None),
        LowGate::Einstein { channel, token } => {
            let (y, t) = einstein_path(&p.lowpass, split, &LP_TO_CHANNEL, &LP_CHANNEL_TO_TOKEN, Some(channel), Some(token))?;
            (y, Some(t))
        }
    };
    let mut highpass = Vec::with_capacity(p.levels());
    let mut tapes = Vec::with_capacity(p.levels());
    for (m, x) in p.highpass.iter().enumerate() {
        match &params.high {
            HighGate::Tensor(ws) => {
                highpass.push(x.hadamard(&ws[m])?);
                tapes.push(None);
            }
            HighGate::Einstein { channel, token } => {
                let (y, t) = einstein_path(x, split, &HP_TO_CHANNEL, &CHANNEL_TO_TOKEN, channel.as_ref(), token.get(m))?;
                highpass.push(y);
                tapes.push(Some(t));
            }
        }
    }
    Ok((
        ScatterPyramid { lowpass, highpass, original: p.original },
        GateTape { input: p.clone(), low: low_tape, high: tapes },
    ))
}

fn gate_vjp(g: &ScatterPyramid, params: &GatingParams, tape: &GateTape) -> Result<(ScatterPyramid, GatingParams)> {
    let (g_low, low_grad) = match (&params.low, &tape.low) {
        (LowGate::Tensor(w), _) => (
            g.lowpass.hadamard(w)?,
            LowGate::Tensor(g.lowpass.hadamard(&tape.input.lowpass)?),
        ),
        (LowGate::Einstein { channel, token }, Some(t)) => {
            let (gx, gc, gt) = einstein_path_vjp(&g.lowpass, &LP_TO_CHANNEL, &LP_CHANNEL_TO_TOKEN, Some(channel), Some(token), t)?;
            (
                gx,
                LowGate::Einstein {
                    channel: gc.expect("channel path ran"),
                    token: gt.expect("token path ran"),
                },
            )
        }
        (LowGate::Einstein { .. }, None) => unreachable!("tape matches params"),
    };
    let mut g_high = Vec::with_capacity(g.levels());
    let high_grad = match &params.high {
        HighGate::Tensor(ws) => {
            let mut gws = Vec::with_capacity(ws.len());
            for (m, w) in ws.iter().enumerate() {
                g_high.push(g.highpass[m].hadamard(w)?);
                gws.push(g.highpass[m].hadamard(&tape.input.highpass[m])?);
            }
            HighGate::Tensor(gws)
        }
        HighGate::Einstein { channel, token } => {
            let mut gc_sum: Option<Mix> = None;
            let mut gts = Vec::with_capacity(token.len());
            for (m, gm) in g.highpass.iter().enumerate() {
                let t = tape.high[m].as_ref().expect("einstein tape");
                let (gx, gc, gt) = einstein_path_vjp(gm, &HP_TO_CHANNEL, &CHANNEL_TO_TOKEN, channel.as_ref(), token.get(m), t)?;
                g_high.push(gx);
                if let Some(gc) = gc {
                    gc_sum = Some(match gc_sum {
                        None => gc,
                        Some(acc) => Mix { weight: acc.weight.add(&gc.weight)?, bias: acc.bias.add(&gc.bias)? },
                    });
                }
                if let Some(gt) = gt {
                    gts.push(gt);
                }
            }
            HighGate::Einstein { channel: gc_sum, token: gts }
        }
    };
    Ok((
        ScatterPyramid { lowpass: g_low, highpass: g_high, original: g.original },
        GatingParams { split: params.split, variant: params.variant, low: low_grad, high: high_grad },
    ))
}

fn check_layer_input(x: &Tensor, params: &GatingParams, cfg: &ScatterLayerConfig) -> Result<()> {
    match x.dims() {
        &[c, h, w] => params.check(cfg, c, h, w),
        d => Err(Error::shape("scatter_layer", format!("expected C x H x W, got {d:?}"))),
    }
}

fn masked(p: ScatterPyramid, cfg: &ScatterLayerConfig) -> ScatterPyramid {
    if cfg.orientations.iter().all(|&k| k) {
        p
    } else {
        p.mask_orientations(&cfg.orientations)
    }
}

/// DTCWT, gating, inverse DTCWT.
pub fn scatter_layer_forward(x: &Tensor, params: &GatingParams, cfg: &ScatterLayerConfig) -> Result<Tensor> {
    check_layer_input(x, params, cfg)?;
    let p = masked(dtcwt_forward(x, &cfg.transform)?, cfg);
    let (gated, _) = gate_forward(&p, params)?;
    dtcwt_inverse(&gated, &cfg.transform)
}

/// Gradients of `<upstream, scatter_layer_forward(x)>` with respect to the
/// input and every parameter tensor.
pub fn scatter_layer_vjp(
    x: &Tensor,
    params: &GatingParams,
    cfg: &ScatterLayerConfig,
    upstream: &Tensor,
) -> Result<(Tensor, GatingParams)> {
    check_layer_input(x, params, cfg)?;
    if upstream.dims() != x.dims() {
        return Err(Error::shape(
            "scatter_layer_vjp",
            format!("upstream {} vs input {}", upstream.shape(), x.shape()),
        ));
    }
    let p = masked(dtcwt_forward(x, &cfg.transform)?, cfg);
    let (_, tape) = gate_forward(&p, params)?;
    let g_gated = dtcwt_inverse_adjoint(upstream, &cfg.transform)?;
    let (g_p, g_params) = gate_vjp(&g_gated, params, &tape)?;
    let g_x = dtcwt_adjoint(&masked(g_p, cfg), &cfg.transform)?;
    Ok((g_x, g_params))
}

/// Closed-form counts for the default (TTEE) layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GatingCounts {
    pub ebm_weights: usize,
    pub ebm_biases: usize,
    pub naive_tbm_high: usize,
    pub low_tbm: usize,
}

/// Counts with the token and naive terms taken at the highpass resolution
/// of every level and the lowpass term at the lowpass resolution.
pub fn count_gating_params(cfg: &ScatterLayerConfig, c: usize, h: usize, w: usize) -> GatingCounts {
    let ((hl, wl), high) = cfg.spatial(h, w);
    let (cb, cd) = (cfg.split.blocks, cfg.split.block_dim);
    GatingCounts {
        ebm_weights: cb * cd * cd + high.iter().map(|&(hm, wm)| wm * hm * hm).sum::<usize>(),
        ebm_biases: cb * cd + high.iter().map(|&(hm, wm)| wm * hm).sum::<usize>(),
        naive_tbm_high: high.iter().map(|&(hm, wm)| c * hm * wm * 6 * 2).sum(),
        low_tbm: c * hl * wl,
    }
}

/// Parameter and multiply-accumulate counts of one gating variant.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct VariantCounts {
    pub low_weights: usize,
    pub low_biases: usize,
    pub high_weights: usize,
    pub high_biases: usize,
    pub macs: usize,
}

impl VariantCounts {
    pub fn total(&self) -> usize {
        self.low_weights + self.low_biases + self.high_weights + self.high_biases
    }
}

pub fn count_variant(cfg: &ScatterLayerConfig, c: usize, h: usize, w: usize) -> VariantCounts {
    let ((hl, wl), high) = cfg.spatial(h, w);
    let (cb, cd) = (cfg.split.blocks, cfg.split.block_dim);
    let mut k = VariantCounts { low_weights: 0, low_biases: 0, high_weights: 0, high_biases: 0, macs: 0 };
    match cfg.variant.low_mix {
        LowMix::Tensor => {
            k.low_weights = c * hl * wl;
            k.macs += c * hl * wl;
        }
        LowMix::Einstein => {
            k.low_weights = cb * cd * cd + wl * hl * hl;
            k.low_biases = cb * cd + wl * hl;
            k.macs += hl * wl * c * cd + c * wl * hl * hl;
        }
    }
    if cfg.variant.high_is_tensor() {
        for &(hm, wm) in &high {
            k.high_weights += 12 * c * hm * wm;
            k.macs += 12 * c * hm * wm;
        }
    } else {
        if cfg.variant.high_channel == HighMix::Einstein {
            k.high_weights += cb * cd * cd;
            k.high_biases += cb * cd;
            k.macs += high.iter().map(|&(hm, wm)| 12 * hm * wm * c * cd).sum::<usize>();
        }
        if cfg.variant.high_token == HighMix::Einstein {
            for &(hm, wm) in &high {
                k.high_weights += wm * hm * hm;
                k.high_biases += wm * hm;
                k.macs += 12 * c * wm * hm * hm;
            }
        }
    }
    k
}
