//! Two-dimensional dual-tree complex wavelet transform.
//!
//! Level 1 filters undecimated with the odd-length biorthogonal pair and
//! forms the two trees from the even/odd samples of each 2x2 quad. Deeper
//! levels run the q-shift pair on the tree-interleaved lowpass: the
//! interleaved samples are reordered into one periodic sequence, filtered
//! and decimated there, and reordered back, which is exactly the two-tree
//! q-shift decimation with the trees kept in place.

use std::f64::consts::FRAC_1_SQRT_2;
use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::filters::{default_filter_set, Filter, WaveletFilterSet};
use crate::npt;
use crate::plane::{Axis, Plane};
use crate::tensor::Tensor;

/// Orientation index to nominal angle in degrees.
pub const NOMINAL_ANGLES: [f64; 6] = [15.0, 45.0, 75.0, 105.0, 135.0, 165.0];

/// Orientation pairs `(k, k')` produced by one q2c step, in the order
/// (vertical highpass, horizontal highpass, diagonal).
const PAIR_HL: (usize, usize) = (0, 5);
const PAIR_LH: (usize, usize) = (2, 3);
const PAIR_HH: (usize, usize) = (1, 4);

#[derive(Clone, Debug)]
pub struct TransformConfig {
    levels: usize,
    filters: Arc<WaveletFilterSet>,
}

impl TransformConfig {
    pub fn new(levels: usize, filters: Arc<WaveletFilterSet>) -> Result<Self> {
        if levels == 0 {
            return Err(Error::Config("levels must be >= 1".into()));
        }
        Ok(TransformConfig { levels, filters })
    }

    /// Bundled filters with the given depth.
    pub fn with_levels(levels: usize) -> Result<Self> {
        TransformConfig::new(levels, Arc::new(default_filter_set()))
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    pub fn filters(&self) -> &WaveletFilterSet {
        &self.filters
    }

    pub fn filters_arc(&self) -> Arc<WaveletFilterSet> {
        self.filters.clone()
    }

    /// Checks that an `h x w` input can be transformed.
    pub fn check_input(&self, h: usize, w: usize) -> Result<()> {
        let m = self.levels;
        let q = 1usize
            .checked_shl(m as u32)
            .ok_or_else(|| Error::Config(format!("{m} levels is too deep")))?;
        if !h.is_multiple_of(q) || !w.is_multiple_of(q) {
            return Err(Error::shape(
                "dtcwt_forward",
                format!("{h}x{w} is not divisible by 2^{m} = {q}"),
            ));
        }
        if h < 2 * q || w < 2 * q {
            return Err(Error::SignalTooSmall { height: h, width: w, levels: m });
        }
        Ok(())
    }
}

/// Lowpass `C x H/2^(M-1) x W/2^(M-1)` plus one `6 x C x H/2^m x W/2^m x 2`
/// tensor of complex oriented coefficients per level.
#[derive(Clone, Debug, PartialEq)]
pub struct ScatterPyramid {
    pub lowpass: Tensor,
    pub highpass: Vec<Tensor>,
    pub original: (usize, usize),
}

impl ScatterPyramid {
    pub fn levels(&self) -> usize {
        self.highpass.len()
    }

    pub fn channels(&self) -> usize {
        self.lowpass.dims()[0]
    }

    /// Expected shapes for the given input geometry.
    pub fn shapes(c: usize, h: usize, w: usize, levels: usize) -> (Vec<usize>, Vec<Vec<usize>>) {
        let low = vec![c, h >> (levels - 1), w >> (levels - 1)];
        let high = (1..=levels).map(|m| vec![6, c, h >> m, w >> m, 2]).collect();
        (low, high)
    }

    pub fn zeros(c: usize, h: usize, w: usize, levels: usize) -> Result<Self> {
        if levels == 0 {
            return Err(Error::Config("levels must be >= 1".into()));
        }
        let (low, high) = Self::shapes(c, h, w, levels);
        Ok(ScatterPyramid {
            lowpass: Tensor::zeros(&low)?,
            highpass: high.iter().map(|d| Tensor::zeros(d)).collect::<Result<_>>()?,
            original: (h, w),
        })
    }

    /// Verifies the shape law.
    pub fn validate(&self) -> Result<()> {
        let m = self.levels();
        if m == 0 || self.lowpass.dims().len() != 3 {
            return Err(Error::shape("pyramid", "need M >= 1 and a rank-3 lowpass"));
        }
        let (h, w) = self.original;
        let (low, high) = Self::shapes(self.channels(), h, w, m);
        if h % (1 << m) != 0 || w % (1 << m) != 0 || self.lowpass.dims() != low.as_slice() {
            return Err(Error::shape(
                "pyramid",
                format!("lowpass {} inconsistent with {h}x{w}, M={m}", self.lowpass.shape()),
            ));
        }
        for (i, (t, d)) in self.highpass.iter().zip(&high).enumerate() {
            if t.dims() != d.as_slice() {
                return Err(Error::shape(
                    "pyramid",
                    format!("level {} highpass {} expected {d:?}", i + 1, t.shape()),
                ));
            }
        }
        Ok(())
    }

    pub fn zeros_like(&self) -> Self {
        ScatterPyramid {
            lowpass: self.lowpass.zeros_like(),
            highpass: self.highpass.iter().map(Tensor::zeros_like).collect(),
            original: self.original,
        }
    }

    fn zip(&self, other: &Self, f: impl Fn(&Tensor, &Tensor) -> Result<Tensor>) -> Result<Self> {
        if self.levels() != other.levels() || self.original != other.original {
            return Err(Error::shape("pyramid", "pyramids differ in geometry"));
        }
        Ok(ScatterPyramid {
            lowpass: f(&self.lowpass, &other.lowpass)?,
            highpass: self
                .highpass
                .iter()
                .zip(&other.highpass)
                .map(|(a, b)| f(a, b))
                .collect::<Result<_>>()?,
            original: self.original,
        })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip(other, |a, b| a.add(b))
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip(other, |a, b| a.sub(b))
    }

    pub fn scale(&self, s: f64) -> Self {
        ScatterPyramid {
            lowpass: self.lowpass.scale(s),
            highpass: self.highpass.iter().map(|t| t.scale(s)).collect(),
            original: self.original,
        }
    }

    /// Applies `f` to every coefficient (lowpass and highpass).
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        ScatterPyramid {
            lowpass: self.lowpass.map(&f),
            highpass: self.highpass.iter().map(|t| t.map(&f)).collect(),
            original: self.original,
        }
    }

    /// Inner product summing every coefficient, real and imaginary parts.
    pub fn dot(&self, other: &Self) -> Result<f64> {
        if self.levels() != other.levels() {
            return Err(Error::shape("pyramid dot", "level counts differ"));
        }
        let mut s = self.lowpass.dot(&other.lowpass)?;
        for (a, b) in self.highpass.iter().zip(&other.highpass) {
            s += a.dot(b)?;
        }
        Ok(s)
    }

    pub fn sum_sq(&self) -> f64 {
        self.lowpass.sum_sq() + self.highpass.iter().map(Tensor::sum_sq).sum::<f64>()
    }

    pub fn max_abs_diff(&self, other: &Self) -> Result<f64> {
        let mut m = self.lowpass.max_abs_diff(&other.lowpass)?;
        for (a, b) in self.highpass.iter().zip(&other.highpass) {
            m = m.max(a.max_abs_diff(b)?);
        }
        Ok(m)
    }

    /// Keeps only the orientations flagged in `keep`, zeroing the others at
    /// every level.
    pub fn mask_orientations(&self, keep: &[bool; 6]) -> Self {
        let mut out = self.clone();
        for (t, orig) in out.highpass.iter_mut().zip(&self.highpass) {
            let block = orig.numel() / 6;
            let mut data = orig.data().to_vec();
            for (k, chunk) in data.chunks_exact_mut(block).enumerate() {
                if !keep[k] {
                    chunk.iter_mut().for_each(|v| *v = 0.0);
                }
            }
            *t = Tensor::from_raw(orig.dims(), data);
        }
        out
    }

    /// Writes `lowpass.npt`, `high_m<level>.npt` and `meta.txt` into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>, filter_set: &str) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::file(dir, e))?;
        npt::write(dir.join("lowpass.npt"), &self.lowpass)?;
        for (i, t) in self.highpass.iter().enumerate() {
            npt::write(dir.join(format!("high_m{}.npt", i + 1)), t)?;
        }
        let mut meta = String::new();
        let _ = writeln!(meta, "levels={}", self.levels());
        let _ = writeln!(meta, "height={}", self.original.0);
        let _ = writeln!(meta, "width={}", self.original.1);
        let _ = writeln!(meta, "filter_set={filter_set}");
        let p = dir.join("meta.txt");
        std::fs::write(&p, meta).map_err(|e| Error::file(p, e))
    }

    /// Reads a directory written by [`ScatterPyramid::save`]; returns the
    /// pyramid and the recorded filter-set name.
    pub fn load(dir: impl AsRef<Path>) -> Result<(Self, String)> {
        let dir = dir.as_ref();
        let p = dir.join("meta.txt");
        let text = std::fs::read_to_string(&p).map_err(|e| Error::file(&p, e))?;
        let kv = crate::config::parse_key_values(&text)?;
        let get = |k: &str| {
            kv.get(k)
                .ok_or_else(|| Error::Parse(format!("meta.txt: missing `{k}`")))
        };
        let num = |k: &str| -> Result<usize> {
            get(k)?
                .parse()
                .map_err(|e| Error::Parse(format!("meta.txt: `{k}`: {e}")))
        };
        let levels = num("levels")?;
        let original = (num("height")?, num("width")?);
        let name = get("filter_set")?.clone();
        let lowpass = npt::read(dir.join("lowpass.npt"))?;
        let highpass = (1..=levels)
            .map(|m| npt::read(dir.join(format!("high_m{m}.npt"))))
            .collect::<Result<_>>()?;
        let p = ScatterPyramid { lowpass, highpass, original };
        p.validate()?;
        Ok((p, name))
    }
}

/// Index into a `6 x C x h x w x 2` highpass buffer.
#[inline]
fn hp_index(k: usize, c: usize, i: usize, j: usize, nc: usize, h: usize, w: usize) -> usize {
    ((((k * nc + c) * h + i) * w) + j) * 2
}

/// Half-sample symmetric reflection into `0..n`.
#[inline]
fn reflect(i: isize, n: usize) -> usize {
    let p = 2 * n as isize;
    let r = i.rem_euclid(p) as usize;
    if r >= n {
        2 * n - 1 - r
    } else {
        r
    }
}

/// `out[n] = sum_j f[j] x[n + c - j]` with symmetric extension.
fn sym_gather(x: &[f64], f: &Filter, out: &mut [f64]) {
    let n = x.len();
    for (i, o) in out.iter_mut().enumerate() {
        let base = i as isize + f.center;
        let mut acc = 0.0;
        for (j, t) in f.taps.iter().enumerate() {
            acc += t * x[reflect(base - j as isize, n)];
        }
        *o = acc;
    }
}

/// Transpose of [`sym_gather`].
fn sym_scatter(y: &[f64], f: &Filter, out: &mut [f64]) {
    let n = out.len();
    out.iter_mut().for_each(|v| *v = 0.0);
    for (i, &v) in y.iter().enumerate() {
        let base = i as isize + f.center;
        for (j, t) in f.taps.iter().enumerate() {
            out[reflect(base - j as isize, n)] += t * v;
        }
    }
}

/// `[x1, x3, ..., x(r-1), x(r-2), ..., x2, x0]` when `odd_first`, else the
/// same with the parities swapped.
fn to_cyclic(x: &[f64], odd_first: bool, out: &mut [f64]) {
    let half = x.len() / 2;
    let (p, q) = if odd_first { (1, 0) } else { (0, 1) };
    for k in 0..half {
        out[k] = x[2 * k + p];
        out[x.len() - 1 - k] = x[2 * k + q];
    }
}

fn from_cyclic(a: &[f64], odd_first: bool, out: &mut [f64]) {
    let half = a.len() / 2;
    let (p, q) = if odd_first { (1, 0) } else { (0, 1) };
    for k in 0..half {
        out[2 * k + p] = a[k];
        out[2 * k + q] = a[a.len() - 1 - k];
    }
}

#[inline]
fn wrap(i: isize, r: usize) -> usize {
    i.rem_euclid(r as isize) as usize
}

/// Q-shift analysis of one lane: `x` (length r) to lowpass and highpass
/// halves.
fn q_gather(x: &[f64], f0: &Filter, f1: &Filter, lo: &mut [f64], hi: &mut [f64]) {
    let r = x.len();
    let mut a = vec![0.0; r];
    to_cyclic(x, true, &mut a);
    let half = r / 2;
    let mut la = vec![0.0; half];
    let mut ha = vec![0.0; half];
    for k in 0..half {
        let b0 = 2 * k as isize + f0.center;
        let b1 = 2 * k as isize + f1.center;
        let mut s0 = 0.0;
        for (j, t) in f0.taps.iter().enumerate() {
            s0 += t * a[wrap(b0 - j as isize, r)];
        }
        let mut s1 = 0.0;
        for (j, t) in f1.taps.iter().enumerate() {
            s1 += t * a[wrap(b1 - j as isize, r)];
        }
        la[k] = s0;
        ha[k] = s1;
    }
    from_cyclic(&la, true, lo);
    from_cyclic(&ha, false, hi);
}

/// Q-shift synthesis of one lane from lowpass and highpass halves.
fn q_scatter(lo: &[f64], hi: &[f64], f0: &Filter, f1: &Filter, out: &mut [f64]) {
    let half = lo.len();
    let r = 2 * half;
    let mut l = vec![0.0; half];
    let mut h = vec![0.0; half];
    to_cyclic(lo, true, &mut l);
    to_cyclic(hi, false, &mut h);
    let mut a = vec![0.0; r];
    for k in 0..half {
        let b0 = 2 * k as isize - f0.center;
        let b1 = 2 * k as isize - f1.center;
        for (j, t) in f0.taps.iter().enumerate() {
            a[wrap(b0 + j as isize, r)] += t * l[k];
        }
        for (j, t) in f1.taps.iter().enumerate() {
            a[wrap(b1 + j as isize, r)] += t * h[k];
        }
    }
    from_cyclic(&a, true, out);
}

/// Splits a `2h x 2w` plane into two complex `h x w` subbands.
fn q2c(y: &Plane, z1: &mut [(f64, f64)], z2: &mut [(f64, f64)]) {
    let (h, w) = (y.rows / 2, y.cols / 2);
    for i in 0..h {
        for j in 0..w {
            let a = y.data[2 * i * y.cols + 2 * j];
            let b = y.data[2 * i * y.cols + 2 * j + 1];
            let c = y.data[(2 * i + 1) * y.cols + 2 * j];
            let d = y.data[(2 * i + 1) * y.cols + 2 * j + 1];
            z1[i * w + j] = ((a - d) * FRAC_1_SQRT_2, (b + c) * FRAC_1_SQRT_2);
            z2[i * w + j] = ((a + d) * FRAC_1_SQRT_2, (b - c) * FRAC_1_SQRT_2);
        }
    }
}

/// Inverse (and transpose) of [`q2c`].
fn c2q(z1: &[(f64, f64)], z2: &[(f64, f64)], h: usize, w: usize) -> Plane {
    let mut y = Plane::zeros(2 * h, 2 * w);
    let cols = 2 * w;
    for i in 0..h {
        for j in 0..w {
            let (r1, i1) = z1[i * w + j];
            let (r2, i2) = z2[i * w + j];
            y.data[2 * i * cols + 2 * j] = (r1 + r2) * FRAC_1_SQRT_2;
            y.data[2 * i * cols + 2 * j + 1] = (i1 + i2) * FRAC_1_SQRT_2;
            y.data[(2 * i + 1) * cols + 2 * j] = (i1 - i2) * FRAC_1_SQRT_2;
            y.data[(2 * i + 1) * cols + 2 * j + 1] = (r2 - r1) * FRAC_1_SQRT_2;
        }
    }
    y
}

/// Lane operators for the pyramid-producing direction.
struct AnalysisOps {
    level1: Level1Op,
    q0: Filter,
    q1: Filter,
    q_mode: QMode,
}

/// Lane operators for the image-producing direction.
struct SynthesisOps {
    level1: Level1Op,
    q0: Filter,
    q1: Filter,
    q_mode: QMode,
}

#[derive(Clone)]
struct Level1Op {
    f0: Filter,
    f1: Filter,
    gather: bool,
}

#[derive(Clone, Copy)]
enum QMode {
    Gather,
    Scatter,
}

impl Level1Op {
    fn apply(&self, f: &Filter, x: &[f64], out: &mut [f64]) {
        if self.gather {
            sym_gather(x, f, out)
        } else {
            sym_scatter(x, f, out)
        }
    }
}

/// Six complex orientation bands of one level, row-major `(re, im)`.
type LevelBands = [Vec<(f64, f64)>; 6];

fn analyze_plane(x: &Plane, levels: usize, ops: &AnalysisOps) -> (Plane, Vec<LevelBands>) {
    let l1 = &ops.level1;
    let lo = x.map1(Axis::Cols, x.rows, |a, o| l1.apply(&l1.f0, a, o));
    let hi = x.map1(Axis::Cols, x.rows, |a, o| l1.apply(&l1.f1, a, o));
    let ll = lo.map1(Axis::Rows, x.cols, |a, o| l1.apply(&l1.f0, a, o));
    let lh = lo.map1(Axis::Rows, x.cols, |a, o| l1.apply(&l1.f1, a, o));
    let hl = hi.map1(Axis::Rows, x.cols, |a, o| l1.apply(&l1.f0, a, o));
    let hh = hi.map1(Axis::Rows, x.cols, |a, o| l1.apply(&l1.f1, a, o));
    let mut out = vec![pack_level(&lh, &hl, &hh)];
    let mut ll = ll;
    for _ in 2..=levels {
        let (q0, q1) = (&ops.q0, &ops.q1);
        let split = |a: &[f64], lo: &mut [f64], hi: &mut [f64]| match ops.q_mode {
            QMode::Gather => q_gather(a, q0, q1, lo, hi),
            QMode::Scatter => unreachable!("analysis direction never scatters"),
        };
        let (lo, hi) = ll.map2(Axis::Cols, ll.rows / 2, split);
        let (l2, lh) = lo.map2(Axis::Rows, ll.cols / 2, split);
        let (hl, hh) = hi.map2(Axis::Rows, ll.cols / 2, split);
        out.push(pack_level(&lh, &hl, &hh));
        ll = l2;
    }
    (ll, out)
}

fn pack_level(lh: &Plane, hl: &Plane, hh: &Plane) -> [Vec<(f64, f64)>; 6] {
    let n = (lh.rows / 2) * (lh.cols / 2);
    let mut bands: [Vec<(f64, f64)>; 6] = Default::default();
    for b in bands.iter_mut() {
        *b = vec![(0.0, 0.0); n];
    }
    for (plane, (k1, k2)) in [(hl, PAIR_HL), (lh, PAIR_LH), (hh, PAIR_HH)] {
        let mut z1 = vec![(0.0, 0.0); n];
        let mut z2 = vec![(0.0, 0.0); n];
        q2c(plane, &mut z1, &mut z2);
        bands[k1] = z1;
        bands[k2] = z2;
    }
    bands
}

fn synthesize_plane(low: Plane, bands: &[[Vec<(f64, f64)>; 6]], ops: &SynthesisOps) -> Plane {
    let mut ll = low;
    for lvl in (1..bands.len()).rev() {
        let b = &bands[lvl];
        let (h, w) = (ll.rows / 2, ll.cols / 2);
        let hl = c2q(&b[PAIR_HL.0], &b[PAIR_HL.1], h, w);
        let lh = c2q(&b[PAIR_LH.0], &b[PAIR_LH.1], h, w);
        let hh = c2q(&b[PAIR_HH.0], &b[PAIR_HH.1], h, w);
        let (q0, q1) = (&ops.q0, &ops.q1);
        let join = |lo: &[f64], hi: &[f64], out: &mut [f64]| match ops.q_mode {
            QMode::Scatter => q_scatter(lo, hi, q0, q1, out),
            QMode::Gather => unreachable!("synthesis direction never gathers"),
        };
        let lo = Plane::merge2(&ll, &lh, Axis::Rows, 2 * ll.cols, join);
        let hi = Plane::merge2(&hl, &hh, Axis::Rows, 2 * ll.cols, join);
        ll = Plane::merge2(&lo, &hi, Axis::Cols, 2 * ll.rows, join);
    }
    let b = &bands[0];
    let (h, w) = (ll.rows / 2, ll.cols / 2);
    let hl = c2q(&b[PAIR_HL.0], &b[PAIR_HL.1], h, w);
    let lh = c2q(&b[PAIR_LH.0], &b[PAIR_LH.1], h, w);
    let hh = c2q(&b[PAIR_HH.0], &b[PAIR_HH.1], h, w);
    let l1 = &ops.level1;
    let (rows, cols) = (ll.rows, ll.cols);
    let mut lo = ll.map1(Axis::Rows, cols, |a, o| l1.apply(&l1.f0, a, o));
    lo.add_assign(&lh.map1(Axis::Rows, cols, |a, o| l1.apply(&l1.f1, a, o)));
    let mut hi = hl.map1(Axis::Rows, cols, |a, o| l1.apply(&l1.f0, a, o));
    hi.add_assign(&hh.map1(Axis::Rows, cols, |a, o| l1.apply(&l1.f1, a, o)));
    let mut x = lo.map1(Axis::Cols, rows, |a, o| l1.apply(&l1.f0, a, o));
    x.add_assign(&hi.map1(Axis::Cols, rows, |a, o| l1.apply(&l1.f1, a, o)));
    x
}

fn run_analysis(x: &Tensor, levels: usize, ops: &AnalysisOps) -> Result<ScatterPyramid> {
    let (c, h, w) = chw(x, "dtcwt_forward")?;
    let (low_dims, high_dims) = ScatterPyramid::shapes(c, h, w, levels);
    let mut low = vec![0.0; low_dims.iter().product()];
    let mut high: Vec<Vec<f64>> = high_dims.iter().map(|d| vec![0.0; d.iter().product()]).collect();
    let plane_len = h * w;
    let low_len = low_dims[1] * low_dims[2];
    for ch in 0..c {
        let plane = Plane { rows: h, cols: w, data: x.data()[ch * plane_len..][..plane_len].to_vec() };
        let (ll, bands) = analyze_plane(&plane, levels, ops);
        low[ch * low_len..][..low_len].copy_from_slice(&ll.data);
        for (m, lvl) in bands.iter().enumerate() {
            let (hm, wm) = (high_dims[m][2], high_dims[m][3]);
            let buf = &mut high[m];
            for (k, band) in lvl.iter().enumerate() {
                for i in 0..hm {
                    for j in 0..wm {
                        let at = hp_index(k, ch, i, j, c, hm, wm);
                        let (re, im) = band[i * wm + j];
                        buf[at] = re;
                        buf[at + 1] = im;
                    }
                }
            }
        }
    }
    Ok(ScatterPyramid {
        lowpass: Tensor::from_raw(&low_dims, low),
        highpass: high.into_iter().zip(&high_dims).map(|(d, s)| Tensor::from_raw(s, d)).collect(),
        original: (h, w),
    })
}

fn run_synthesis(p: &ScatterPyramid, ops: &SynthesisOps) -> Result<Tensor> {
    p.validate()?;
    let c = p.channels();
    let (h, w) = p.original;
    let ld = p.lowpass.dims();
    let low_len = ld[1] * ld[2];
    let mut out = vec![0.0; c * h * w];
    for ch in 0..c {
        let low = Plane { rows: ld[1], cols: ld[2], data: p.lowpass.data()[ch * low_len..][..low_len].to_vec() };
        let bands: Vec<[Vec<(f64, f64)>; 6]> = p
            .highpass
            .iter()
            .map(|t| {
                let d = t.dims();
                let (hm, wm) = (d[2], d[3]);
                let mut lvl: [Vec<(f64, f64)>; 6] = Default::default();
                for (k, band) in lvl.iter_mut().enumerate() {
                    *band = (0..hm * wm)
                        .map(|ij| {
                            let at = hp_index(k, ch, ij / wm, ij % wm, c, hm, wm);
                            (t.data()[at], t.data()[at + 1])
                        })
                        .collect();
                }
                lvl
            })
            .collect();
        let x = synthesize_plane(low, &bands, ops);
        out[ch * h * w..][..h * w].copy_from_slice(&x.data);
    }
    Ok(Tensor::from_raw(&[c, h, w], out))
}

fn chw(x: &Tensor, op: &'static str) -> Result<(usize, usize, usize)> {
    match x.dims() {
        &[c, h, w] => Ok((c, h, w)),
        d => Err(Error::shape(op, format!("expected C x H x W, got {d:?}"))),
    }
}

/// Forward transform of a `C x H x W` tensor.
pub fn dtcwt_forward(x: &Tensor, cfg: &TransformConfig) -> Result<ScatterPyramid> {
    let (_, h, w) = chw(x, "dtcwt_forward")?;
    cfg.check_input(h, w)?;
    let f = cfg.filters();
    let ops = AnalysisOps {
        level1: Level1Op {
            f0: f.level1_tree_a.analysis.low.clone(),
            f1: f.level1_tree_a.analysis.high.clone(),
            gather: true,
        },
        q0: f.qshift_tree_a.analysis.low.clone(),
        q1: f.qshift_tree_a.analysis.high.clone(),
        q_mode: QMode::Gather,
    };
    run_analysis(x, cfg.levels, &ops)
}

/// Inverse transform; exact left inverse of [`dtcwt_forward`].
pub fn dtcwt_inverse(p: &ScatterPyramid, cfg: &TransformConfig) -> Result<Tensor> {
    check_levels(p, cfg)?;
    let f = cfg.filters();
    let ops = SynthesisOps {
        level1: Level1Op {
            f0: f.level1_tree_a.synthesis.low.scaled(0.5),
            f1: f.level1_tree_a.synthesis.high.scaled(0.5),
            gather: true,
        },
        q0: f.qshift_tree_a.synthesis.low.clone(),
        q1: f.qshift_tree_a.synthesis.high.clone(),
        q_mode: QMode::Scatter,
    };
    run_synthesis(p, &ops)
}

/// Exact transpose of [`dtcwt_forward`].
pub fn dtcwt_adjoint(p: &ScatterPyramid, cfg: &TransformConfig) -> Result<Tensor> {
    check_levels(p, cfg)?;
    let f = cfg.filters();
    let ops = SynthesisOps {
        level1: Level1Op {
            f0: f.level1_tree_a.analysis.low.clone(),
            f1: f.level1_tree_a.analysis.high.clone(),
            gather: false,
        },
        q0: f.qshift_tree_a.analysis.low.reversed(),
        q1: f.qshift_tree_a.analysis.high.reversed(),
        q_mode: QMode::Scatter,
    };
    run_synthesis(p, &ops)
}

/// Exact transpose of [`dtcwt_inverse`].
pub fn dtcwt_inverse_adjoint(g: &Tensor, cfg: &TransformConfig) -> Result<ScatterPyramid> {
    let (_, h, w) = chw(g, "dtcwt_inverse_adjoint")?;
    cfg.check_input(h, w)?;
    let f = cfg.filters();
    let ops = AnalysisOps {
        level1: Level1Op {
            f0: f.level1_tree_a.synthesis.low.scaled(0.5),
            f1: f.level1_tree_a.synthesis.high.scaled(0.5),
            gather: false,
        },
        q0: f.qshift_tree_a.synthesis.low.reversed(),
        q1: f.qshift_tree_a.synthesis.high.reversed(),
        q_mode: QMode::Gather,
    };
    run_analysis(g, cfg.levels, &ops)
}

fn check_levels(p: &ScatterPyramid, cfg: &TransformConfig) -> Result<()> {
    if p.levels() != cfg.levels {
        return Err(Error::shape(
            "dtcwt_inverse",
            format!("pyramid has {} levels, config {}", p.levels(), cfg.levels),
        ));
    }
    Ok(())
}

/// Per-level, per-orientation energy, `M x 6`.
pub fn subband_energy(p: &ScatterPyramid) -> Tensor {
    let m = p.levels();
    let mut e = vec![0.0; m * 6];
    for (lvl, t) in p.highpass.iter().enumerate() {
        let block = t.numel() / 6;
        for k in 0..6 {
            e[lvl * 6 + k] = t.data()[k * block..][..block].iter().map(|v| v * v).sum();
        }
    }
    Tensor::from_raw(&[m, 6], e)
}

/// Spatial response of a unit real coefficient at the centre of
/// orientation `orientation` of level `level`, on a `size x size` grid.
pub fn impulse_response_2d(set: &WaveletFilterSet, level: usize, orientation: usize, size: usize) -> Result<Tensor> {
    if orientation >= 6 {
        return Err(Error::Config(format!("orientation {orientation} not in 0..6")));
    }
    let cfg = TransformConfig::new(level, Arc::new(set.clone()))?;
    cfg.check_input(size, size)?;
    let mut p = ScatterPyramid::zeros(1, size, size, level)?;
    let s = size >> level;
    let t = &p.highpass[level - 1];
    let mut data = t.data().to_vec();
    data[hp_index(orientation, 0, s / 2, s / 2, 1, s, s)] = 1.0;
    p.highpass[level - 1] = Tensor::from_raw(t.dims(), data);
    dtcwt_inverse(&p, &cfg)?.reshape(&[size, size])
}

/// Spatial response of a unit coefficient at the centre of the lowpass.
pub fn lowpass_impulse_response(set: &WaveletFilterSet, level: usize, size: usize) -> Result<Tensor> {
    let cfg = TransformConfig::new(level, Arc::new(set.clone()))?;
    cfg.check_input(size, size)?;
    let mut p = ScatterPyramid::zeros(1, size, size, level)?;
    let s = size >> (level - 1);
    let mut data = p.lowpass.data().to_vec();
    data[(s / 2) * s + s / 2] = 1.0;
    p.lowpass = Tensor::from_raw(p.lowpass.dims(), data);
    dtcwt_inverse(&p, &cfg)?.reshape(&[size, size])
}
