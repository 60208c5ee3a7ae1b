//! Seeded random tensors and synthetic image corpora.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::num_complex::Complex64;

use crate::baselines::fft2_inplace;
use crate::tensor::Tensor;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Standard normal entries.
pub fn random_tensor(dims: &[usize], seed: u64) -> Tensor {
    let mut r = rng(seed);
    normal_tensor(dims, &mut r, 1.0)
}

/// Entries `N(0, sigma^2)` drawn from `r`.
pub fn normal_tensor(dims: &[usize], r: &mut ChaCha8Rng, sigma: f64) -> Tensor {
    let n: usize = dims.iter().product();
    let data = (0..n)
        .map(|_| {
            let v: f64 = StandardNormal.sample(r);
            sigma * v
        })
        .collect();
    Tensor::new(dims, data).expect("finite samples")
}

/// White noise with every DFT bin outside `|k_row|, |k_col| <= max_bin`
/// removed, rescaled to `[0, 1]`. Returns a `size x size` row-major image.
pub fn bandlimited_image(size: usize, seed: u64, max_bin: usize) -> Vec<f64> {
    let mut r = rng(seed);
    let mut buf: Vec<Complex64> = (0..size * size)
        .map(|_| {
            let v: f64 = StandardNormal.sample(&mut r);
            Complex64::new(v, 0.0)
        })
        .collect();
    fft2_inplace(&mut buf, size, size, false);
    for i in 0..size {
        for j in 0..size {
            if signed_bin(i, size).unsigned_abs() > max_bin || signed_bin(j, size).unsigned_abs() > max_bin {
                buf[i * size + j] = Complex64::new(0.0, 0.0);
            }
        }
    }
    fft2_inplace(&mut buf, size, size, true);
    let re: Vec<f64> = buf.iter().map(|c| c.re).collect();
    let lo = re.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = re.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    re.iter().map(|v| (v - lo) / span).collect()
}

/// Signed frequency index of DFT bin `i` of an `n`-point transform.
pub fn signed_bin(i: usize, n: usize) -> isize {
    if i < n.div_ceil(2) {
        i as isize
    } else {
        i as isize - n as isize
    }
}

/// Smooth, low-contrast images (bins up to `size/32`, contrast 0.03 around
/// 0.5), each `1 x size x size`. Image `t` uses seed `seed * 1000 + t`.
pub fn smooth_corpus(count: usize, size: usize, seed: u64) -> Vec<Tensor> {
    (0..count)
        .map(|t| {
            let img = bandlimited_image(size, seed * 1000 + t as u64, (size / 32).max(1));
            let data = img.iter().map(|v| 0.5 + 0.03 * (v - 0.5)).collect();
            Tensor::new(&[1, size, size], data).expect("finite")
        })
        .collect()
}

/// Images keeping frequencies below a quarter of the sampling rate, each
/// `1 x size x size` in `[0, 1]`. Image `t` uses seed `seed + t`.
pub fn quarter_band_corpus(count: usize, size: usize, seed: u64) -> Vec<Tensor> {
    (0..count)
        .map(|t| {
            let img = bandlimited_image(size, seed + t as u64, (size / 4).saturating_sub(1));
            Tensor::new(&[1, size, size], img).expect("finite")
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_normalized() {
        assert_eq!(random_tensor(&[3, 4], 9), random_tensor(&[3, 4], 9));
        assert_ne!(random_tensor(&[3, 4], 9), random_tensor(&[3, 4], 10));
        let img = bandlimited_image(32, 1, 4);
        let lo = img.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = img.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert!(lo.abs() < 1e-12 && (hi - 1.0).abs() < 1e-12);
    }

    #[test]
    fn bandlimit_removes_high_bins() {
        let n = 32;
        let img = bandlimited_image(n, 3, 2);
        let mut buf: Vec<Complex64> = img.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        fft2_inplace(&mut buf, n, n, false);
        for i in 0..n {
            for j in 0..n {
                if signed_bin(i, n).abs() > 2 || signed_bin(j, n).abs() > 2 {
                    assert!(buf[i * n + j].norm() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn signed_bins() {
        assert_eq!(signed_bin(0, 8), 0);
        assert_eq!(signed_bin(3, 8), 3);
        assert_eq!(signed_bin(4, 8), -4);
        assert_eq!(signed_bin(7, 8), -1);
        assert_eq!(signed_bin(2, 5), 2);
        assert_eq!(signed_bin(3, 5), -2);
    }

    #[test]
    fn smooth_corpus_is_low_contrast() {
        let c = smooth_corpus(2, 64, 3);
        for t in &c {
            assert_eq!(t.dims(), &[1, 64, 64]);
            assert!(t.data().iter().all(|v| (v - 0.5).abs() <= 0.015 + 1e-12));
        }
    }
}
