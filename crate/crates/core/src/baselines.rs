//! FFT and separable DWT comparison transforms, plus the lossy
//! reconstruction protocol shared by all three families.

use std::fmt;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::dtcwt::{dtcwt_forward, dtcwt_inverse, subband_energy, TransformConfig};
use crate::error::{Error, Result};
use crate::filters::{highpass_phase, FilterBank, WaveletFilterSet};
use crate::plane::{Axis, Plane};
use crate::synth::signed_bin;
use crate::tensor::Tensor;

/// In-place 2-D DFT of a row-major `rows x cols` buffer. The inverse
/// includes the `1/(rows*cols)` factor.
pub fn fft2_inplace(buf: &mut [Complex64], rows: usize, cols: usize, inverse: bool) {
    let mut planner = FftPlanner::new();
    let (row_fft, col_fft) = if inverse {
        (planner.plan_fft_inverse(cols), planner.plan_fft_inverse(rows))
    } else {
        (planner.plan_fft_forward(cols), planner.plan_fft_forward(rows))
    };
    for row in buf.chunks_exact_mut(cols) {
        row_fft.process(row);
    }
    let mut col = vec![Complex64::new(0.0, 0.0); rows];
    for j in 0..cols {
        for i in 0..rows {
            col[i] = buf[i * cols + j];
        }
        col_fft.process(&mut col);
        for i in 0..rows {
            buf[i * cols + j] = col[i];
        }
    }
    if inverse {
        let s = 1.0 / (rows * cols) as f64;
        buf.iter_mut().for_each(|v| *v *= s);
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FourierSpectrum {
    pub real: Tensor,
    pub imag: Tensor,
}

fn chw(x: &Tensor, op: &'static str) -> Result<(usize, usize, usize)> {
    match x.dims() {
        &[c, h, w] => Ok((c, h, w)),
        d => Err(Error::shape(op, format!("expected C x H x W, got {d:?}"))),
    }
}

/// Unnormalized forward DFT per channel.
pub fn fft2_forward(x: &Tensor) -> Result<FourierSpectrum> {
    let (c, h, w) = chw(x, "fft2_forward")?;
    let mut re = Vec::with_capacity(x.numel());
    let mut im = Vec::with_capacity(x.numel());
    for plane in x.data().chunks_exact(h * w) {
        let mut buf: Vec<Complex64> = plane.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        fft2_inplace(&mut buf, h, w, false);
        re.extend(buf.iter().map(|z| z.re));
        im.extend(buf.iter().map(|z| z.im));
    }
    Ok(FourierSpectrum {
        real: Tensor::from_raw(&[c, h, w], re),
        imag: Tensor::from_raw(&[c, h, w], im),
    })
}

/// Inverse DFT per channel with the `1/(HW)` factor; returns the real part.
pub fn fft2_inverse(s: &FourierSpectrum) -> Result<Tensor> {
    let (c, h, w) = chw(&s.real, "fft2_inverse")?;
    if s.imag.dims() != s.real.dims() {
        return Err(Error::shape("fft2_inverse", "real and imaginary shapes differ"));
    }
    let mut out = Vec::with_capacity(s.real.numel());
    for (pr, pi) in s.real.data().chunks_exact(h * w).zip(s.imag.data().chunks_exact(h * w)) {
        let mut buf: Vec<Complex64> = pr.iter().zip(pi).map(|(&a, &b)| Complex64::new(a, b)).collect();
        fft2_inplace(&mut buf, h, w, true);
        out.extend(buf.iter().map(|z| z.re));
    }
    Ok(Tensor::from_raw(&[c, h, w], out))
}

/// Angle in degrees, in `[0, 180)`, of the strongest non-DC Fourier
/// coefficient of a `rows x cols` image, measured from the row-frequency
/// axis toward the column-frequency axis.
pub fn spectral_peak_angle(img: &Tensor) -> Result<f64> {
    let (h, w) = match img.dims() {
        &[h, w] => (h, w),
        &[1, h, w] => (h, w),
        d => return Err(Error::shape("spectral_peak_angle", format!("expected H x W, got {d:?}"))),
    };
    let mut buf: Vec<Complex64> = img.data().iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft2_inplace(&mut buf, h, w, false);
    let mut best = (0usize, -1.0f64);
    for (i, z) in buf.iter().enumerate().skip(1) {
        let m = z.norm();
        if m > best.1 {
            best = (i, m);
        }
    }
    let fu = signed_bin(best.0 / w, h) as f64 / h as f64;
    let fv = signed_bin(best.0 % w, w) as f64 / w as f64;
    Ok(fv.atan2(fu).to_degrees().rem_euclid(180.0))
}

/// Decimated separable DWT: lowpass `C x H/2^M x W/2^M`, and per level a
/// `3 x C x H/2^m x W/2^m` detail tensor ordered (LH, HL, HH), where LH is
/// lowpass along H and highpass along W.
#[derive(Clone, Debug, PartialEq)]
pub struct DwtPyramid {
    pub lowpass: Tensor,
    pub details: Vec<Tensor>,
    pub original: (usize, usize),
}

impl DwtPyramid {
    pub fn levels(&self) -> usize {
        self.details.len()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        DwtPyramid {
            lowpass: self.lowpass.map(&f),
            details: self.details.iter().map(|t| t.map(&f)).collect(),
            original: self.original,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.levels();
        let (h, w) = self.original;
        let c = self.lowpass.dims().first().copied().unwrap_or(0);
        if m == 0 || self.lowpass.dims() != [c, h >> m, w >> m] || h % (1 << m) != 0 || w % (1 << m) != 0 {
            return Err(Error::shape("dwt pyramid", format!("lowpass {} inconsistent", self.lowpass.shape())));
        }
        for (i, d) in self.details.iter().enumerate() {
            let l = i + 1;
            if d.dims() != [3, c, h >> l, w >> l] {
                return Err(Error::shape("dwt pyramid", format!("level {l} details {}", d.shape())));
            }
        }
        Ok(())
    }
}

/// Whole-sample symmetric periodic extension index for period `2n - 2`.
fn ws_index(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let p = 2 * n as isize - 2;
    let r = i.rem_euclid(p) as usize;
    if r >= n {
        2 * n - 2 - r
    } else {
        r
    }
}

fn dwt_split(x: &[f64], bank: &FilterBank, lo: &mut [f64], hi: &mut [f64]) {
    let n = x.len();
    let ph = highpass_phase(&bank.analysis);
    let (h0, h1) = (&bank.analysis.low, &bank.analysis.high);
    for k in 0..n / 2 {
        let b0 = 2 * k as isize + h0.center;
        let b1 = 2 * k as isize + ph + h1.center;
        lo[k] = h0.taps.iter().enumerate().map(|(j, t)| t * x[ws_index(b0 - j as isize, n)]).sum();
        hi[k] = h1.taps.iter().enumerate().map(|(j, t)| t * x[ws_index(b1 - j as isize, n)]).sum();
    }
}

fn dwt_merge(lo: &[f64], hi: &[f64], bank: &FilterBank, out: &mut [f64]) {
    let half = lo.len();
    let n = 2 * half;
    let p = (2 * n - 2).max(2);
    let ph = highpass_phase(&bank.analysis);
    let (g0, g1) = (&bank.synthesis.low, &bank.synthesis.high);
    // Subbands of the symmetric periodic signal over one full period.
    let lf: Vec<f64> = lo.iter().copied().chain(lo[1..].iter().rev().copied()).collect();
    let hf: Vec<f64> = hi
        .iter()
        .copied()
        .chain(hi[..half.saturating_sub(1)].iter().rev().copied())
        .collect();
    let mut y = vec![0.0; p];
    let wrap = |i: isize| i.rem_euclid(p as isize) as usize;
    for (k, &v) in lf.iter().enumerate() {
        let b = 2 * k as isize - g0.center;
        for (j, t) in g0.taps.iter().enumerate() {
            y[wrap(b + j as isize)] += t * v;
        }
    }
    for (k, &v) in hf.iter().enumerate() {
        let b = 2 * k as isize + ph - g1.center;
        for (j, t) in g1.taps.iter().enumerate() {
            y[wrap(b + j as isize)] += t * v;
        }
    }
    out.copy_from_slice(&y[..n]);
}

/// Forward DWT with the level-1 biorthogonal bank of `set`.
pub fn dwt2_forward(x: &Tensor, levels: usize, set: &WaveletFilterSet) -> Result<DwtPyramid> {
    let (c, h, w) = chw(x, "dwt2_forward")?;
    if levels == 0 {
        return Err(Error::Config("levels must be >= 1".into()));
    }
    if h % (1 << levels) != 0 || w % (1 << levels) != 0 {
        return Err(Error::shape(
            "dwt2_forward",
            format!("{h}x{w} is not divisible by 2^{levels}"),
        ));
    }
    let bank = &set.level1_tree_a;
    let split = |a: &[f64], lo: &mut [f64], hi: &mut [f64]| dwt_split(a, bank, lo, hi);
    let mut low_data = Vec::new();
    let mut det: Vec<Vec<[Vec<f64>; 3]>> = vec![Vec::with_capacity(c); levels];
    for plane in x.data().chunks_exact(h * w) {
        let mut ll = Plane { rows: h, cols: w, data: plane.to_vec() };
        for d in det.iter_mut() {
            let (l, hh_) = ll.map2(Axis::Cols, ll.rows / 2, split);
            let (l2, lh) = l.map2(Axis::Rows, ll.cols / 2, split);
            let (hl, hh) = hh_.map2(Axis::Rows, ll.cols / 2, split);
            d.push([lh.data, hl.data, hh.data]);
            ll = l2;
        }
        low_data.extend_from_slice(&ll.data);
    }
    let details = det
        .into_iter()
        .enumerate()
        .map(|(i, per_channel)| {
            let l = i + 1;
            let n = (h >> l) * (w >> l);
            let mut data = vec![0.0; 3 * c * n];
            for (ch, bands) in per_channel.iter().enumerate() {
                for (b, band) in bands.iter().enumerate() {
                    data[(b * c + ch) * n..][..n].copy_from_slice(band);
                }
            }
            Tensor::from_raw(&[3, c, h >> l, w >> l], data)
        })
        .collect();
    Ok(DwtPyramid {
        lowpass: Tensor::from_raw(&[c, h >> levels, w >> levels], low_data),
        details,
        original: (h, w),
    })
}

/// Inverse of [`dwt2_forward`].
pub fn dwt2_inverse(p: &DwtPyramid, set: &WaveletFilterSet) -> Result<Tensor> {
    p.validate()?;
    let bank = &set.level1_tree_a;
    let merge = |lo: &[f64], hi: &[f64], out: &mut [f64]| dwt_merge(lo, hi, bank, out);
    let c = p.lowpass.dims()[0];
    let (h, w) = p.original;
    let m = p.levels();
    let mut out = Vec::with_capacity(c * h * w);
    for ch in 0..c {
        let (lh0, lw0) = (h >> m, w >> m);
        let mut ll = Plane { rows: lh0, cols: lw0, data: p.lowpass.data()[ch * lh0 * lw0..][..lh0 * lw0].to_vec() };
        for lvl in (0..m).rev() {
            let d = &p.details[lvl];
            let (sh, sw) = (d.dims()[2], d.dims()[3]);
            let n = sh * sw;
            let band = |b: usize| Plane { rows: sh, cols: sw, data: d.data()[(b * c + ch) * n..][..n].to_vec() };
            let lo = Plane::merge2(&ll, &band(0), Axis::Rows, 2 * sw, merge);
            let hi = Plane::merge2(&band(1), &band(2), Axis::Rows, 2 * sw, merge);
            ll = Plane::merge2(&lo, &hi, Axis::Cols, 2 * sh, merge);
        }
        out.extend_from_slice(&ll.data);
    }
    Ok(Tensor::from_raw(&[c, h, w], out))
}

/// Transform families compared by the invertibility study.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Transform {
    Fft,
    Dwt(usize),
    Dtcwt(usize),
}

impl Transform {
    pub fn family(&self) -> &'static str {
        match self {
            Transform::Fft => "fft",
            Transform::Dwt(_) => "dwt",
            Transform::Dtcwt(_) => "dtcwt",
        }
    }

    pub fn levels(&self) -> usize {
        match *self {
            Transform::Fft => 0,
            Transform::Dwt(m) | Transform::Dtcwt(m) => m,
        }
    }

    /// Side length divisor the transform requires.
    pub fn divisor(&self) -> usize {
        1 << self.levels()
    }
}

impl fmt::Display for Transform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Transform::Fft => write!(f, "FFT"),
            Transform::Dwt(m) => write!(f, "DWT-M{m}"),
            Transform::Dtcwt(m) => write!(f, "DTCWT-M{m}"),
        }
    }
}

/// Rounds `v` to `bits` fractional bits.
pub fn quantize(v: f64, bits: u32) -> f64 {
    let s = (bits as f64).exp2();
    (v * s).round() / s
}

/// `10 log10(peak^2 / mse)`, capped at 300 dB when `mse < peak^2 * 1e-30`.
pub fn psnr_db(mse: f64, peak: f64) -> f64 {
    let p2 = peak * peak;
    if mse < p2 * 1e-30 {
        300.0
    } else {
        10.0 * (p2 / mse).log10()
    }
}

/// Forward transform, optional coefficient quantization, inverse.
pub fn lossy_round_trip(x: &Tensor, transform: Transform, quant_bits: Option<u32>, set: &Arc<WaveletFilterSet>) -> Result<Tensor> {
    let q = |v: f64| match quant_bits {
        Some(b) => quantize(v, b),
        None => v,
    };
    match transform {
        Transform::Fft => {
            let s = fft2_forward(x)?;
            fft2_inverse(&FourierSpectrum { real: s.real.map(q), imag: s.imag.map(q) })
        }
        Transform::Dwt(m) => dwt2_inverse(&dwt2_forward(x, m, set)?.map(q), set),
        Transform::Dtcwt(m) => {
            let cfg = TransformConfig::new(m, set.clone())?;
            dtcwt_inverse(&dtcwt_forward(x, &cfg)?.map(q), &cfg)
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Reconstruction {
    pub mse: f64,
    pub psnr_db: f64,
}

/// Mean squared reconstruction error and PSNR of one transform round trip.
pub fn reconstruction_report(
    x: &Tensor,
    transform: Transform,
    quant_bits: Option<u32>,
    peak: f64,
    set: &Arc<WaveletFilterSet>,
) -> Result<Reconstruction> {
    let y = lossy_round_trip(x, transform, quant_bits, set)?;
    let mse = y.sub(x)?.sum_sq() / x.numel() as f64;
    Ok(Reconstruction { mse, psnr_db: psnr_db(mse, peak) })
}

/// Per-level, per-orientation detail energy of a DWT, `M x 3`.
pub fn dwt_subband_energy(p: &DwtPyramid) -> Tensor {
    let m = p.levels();
    let mut e = vec![0.0; m * 3];
    for (lvl, t) in p.details.iter().enumerate() {
        let block = t.numel() / 3;
        for k in 0..3 {
            e[lvl * 3 + k] = t.data()[k * block..][..block].iter().map(|v| v * v).sum();
        }
    }
    Tensor::from_raw(&[m, 3], e)
}

/// Circular shift of a `C x H x W` tensor by `d` pixels along the width.
pub fn shift_width(x: &Tensor, d: usize) -> Result<Tensor> {
    let &[c, h, w] = x.dims() else {
        return Err(Error::shape("shift_width", format!("expected C x H x W, got {}", x.shape())));
    };
    let mut out = vec![0.0; x.numel()];
    for row in 0..c * h {
        for j in 0..w {
            out[row * w + (j + d) % w] = x.data()[row * w + j];
        }
    }
    Ok(Tensor::from_raw(&[c, h, w], out))
}

/// Largest relative change of any subband energy under a one-pixel
/// circular shift along the width. Subbands with zero energy are skipped.
pub fn shift_sensitivity(x: &Tensor, transform: Transform, set: &Arc<WaveletFilterSet>) -> Result<f64> {
    let energy = |y: &Tensor| -> Result<Tensor> {
        match transform {
            Transform::Fft => Err(Error::Config("shift sensitivity is defined for wavelet transforms".into())),
            Transform::Dwt(m) => Ok(dwt_subband_energy(&dwt2_forward(y, m, set)?)),
            Transform::Dtcwt(m) => Ok(subband_energy(&dtcwt_forward(y, &TransformConfig::new(m, set.clone())?)?)),
        }
    };
    let e0 = energy(x)?;
    let e1 = energy(&shift_width(x, 1)?)?;
    Ok(e0
        .data()
        .iter()
        .zip(e1.data())
        .filter(|(a, _)| **a > 0.0)
        .map(|(a, b)| (b - a).abs() / a)
        .fold(0.0, f64::max))
}

/// One CSV row of an invertibility report.
#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub transform: Transform,
    pub quant_bits: Option<u32>,
    pub mse: f64,
    pub psnr_db: f64,
}

pub const CSV_HEADER: &str = "transform,levels,quant_bits,mse,psnr_db";

impl ReportRow {
    pub fn to_csv(&self) -> String {
        let q = self.quant_bits.map_or_else(|| "none".to_string(), |b| b.to_string());
        format!(
            "{},{},{},{:.6e},{:.4}",
            self.transform.family(),
            self.transform.levels(),
            q,
            self.mse,
            self.psnr_db
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filters::default_filter_set;
    use crate::synth::random_tensor;

    fn set() -> Arc<WaveletFilterSet> {
        Arc::new(default_filter_set())
    }

    #[test]
    fn fft_examples() {
        let z = fft2_forward(&Tensor::zeros(&[1, 8, 8]).unwrap()).unwrap();
        assert_eq!(z.real.sum_sq() + z.imag.sum_sq(), 0.0);
        let c = 2.5;
        let s = fft2_forward(&Tensor::full(&[1, 16, 8], c).unwrap()).unwrap();
        assert!((s.real.data()[0] - c * 128.0).abs() < 1e-9);
        for i in 1..128 {
            assert!(s.real.data()[i].abs().max(s.imag.data()[i].abs()) <= 1e-9 * c * 128.0);
        }
        let x = random_tensor(&[1, 32, 32], 4);
        let y = fft2_inverse(&fft2_forward(&x).unwrap()).unwrap();
        assert!(y.relative_mse(&x).unwrap() <= 1e-24);
    }

    #[test]
    fn fft_matches_direct_dft() {
        let x = random_tensor(&[1, 4, 6], 7);
        let s = fft2_forward(&x).unwrap();
        let (u, v) = (3, 5);
        let (mut re, mut im) = (0.0, 0.0);
        for i in 0..4 {
            for j in 0..6 {
                let th = -2.0 * std::f64::consts::PI * ((u * i) as f64 / 4.0 + (v * j) as f64 / 6.0);
                re += x.get(&[0, i, j]) * th.cos();
                im += x.get(&[0, i, j]) * th.sin();
            }
        }
        assert!((s.real.get(&[0, u, v]) - re).abs() < 1e-12);
        assert!((s.imag.get(&[0, u, v]) - im).abs() < 1e-12);
    }

    #[test]
    fn dwt_shapes_and_round_trip() {
        let set = default_filter_set();
        let x = random_tensor(&[2, 64, 64], 5);
        let p = dwt2_forward(&x, 2, &set).unwrap();
        assert_eq!(p.lowpass.dims(), &[2, 16, 16]);
        assert_eq!(p.details[0].dims(), &[3, 2, 32, 32]);
        assert_eq!(p.details[1].dims(), &[3, 2, 16, 16]);
        for m in 1..=3 {
            let y = dwt2_inverse(&dwt2_forward(&x, m, &set).unwrap(), &set).unwrap();
            let r = y.relative_mse(&x).unwrap();
            assert!(r <= 1e-20, "M={m}: {r:e}");
        }
        assert!(dwt2_forward(&random_tensor(&[1, 36, 36], 1), 3, &set).is_err());
    }

    #[test]
    fn dwt_constant_has_no_detail() {
        let set = default_filter_set();
        let c = -1.25;
        let p = dwt2_forward(&Tensor::full(&[1, 32, 32], c).unwrap(), 3, &set).unwrap();
        for d in &p.details {
            assert!(d.max_abs() <= 1e-10 * c.abs());
        }
    }

    #[test]
    fn dwt_is_nearly_orthonormal() {
        // sqrt(2)-normalized near-symmetric pair: energy is close to preserved
        let set = default_filter_set();
        let x = random_tensor(&[1, 64, 64], 3);
        let p = dwt2_forward(&x, 1, &set).unwrap();
        let e = p.lowpass.sum_sq() + p.details[0].sum_sq();
        let r = e / x.sum_sq();
        assert!((0.8..1.25).contains(&r), "{r}");
    }

    #[test]
    fn psnr_rules() {
        assert_eq!(psnr_db(0.0, 1.0), 300.0);
        assert_eq!(psnr_db(1.0, 1.0), 0.0);
        assert!((psnr_db(1e-4, 1.0) - 40.0).abs() < 1e-12);
        assert!((psnr_db(1.0, 255.0) - 20.0 * 255f64.log10()).abs() < 1e-12);
    }

    #[test]
    fn quantize_rounds_to_grid() {
        assert_eq!(quantize(0.3, 2), 0.25);
        assert_eq!(quantize(-0.4, 1), -0.5);
        assert_eq!(quantize(1.0, 8), 1.0);
    }

    #[test]
    fn exact_reports_are_tiny() {
        let s = set();
        let x = random_tensor(&[1, 32, 32], 2).map(|v| 0.5 + 0.1 * v);
        for t in [Transform::Fft, Transform::Dwt(2), Transform::Dtcwt(2)] {
            let r = reconstruction_report(&x, t, None, 1.0, &s).unwrap();
            assert!(r.mse <= 1e-18, "{t}: {}", r.mse);
        }
    }

    #[test]
    fn csv_row_format() {
        let r = ReportRow { transform: Transform::Dtcwt(3), quant_bits: Some(8), mse: 1.5e-6, psnr_db: 58.239 };
        assert_eq!(r.to_csv(), "dtcwt,3,8,1.500000e-6,58.2390");
        let r = ReportRow { transform: Transform::Fft, quant_bits: None, mse: 0.0, psnr_db: 300.0 };
        assert_eq!(r.to_csv(), "fft,0,none,0.000000e0,300.0000");
        assert_eq!(Transform::Dwt(2).to_string(), "DWT-M2");
    }

    #[test]
    fn peak_angle_of_plane_waves() {
        let n = 32;
        for (u, v) in [(3i32, 0i32), (0, 3), (3, 3), (3, -3)] {
            let img = Tensor::from_fn(&[n, n], |i| {
                let (r, c) = ((i / n) as f64, (i % n) as f64);
                (2.0 * std::f64::consts::PI * (u as f64 * r + v as f64 * c) / n as f64).cos()
            })
            .unwrap();
            let a = spectral_peak_angle(&img).unwrap();
            let expect = (v as f64).atan2(u as f64).to_degrees().rem_euclid(180.0);
            assert!((a - expect).abs() < 1e-9, "({u},{v}): {a} vs {expect}");
        }
    }
}
