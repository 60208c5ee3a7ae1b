//! PGM/PPM input and output, plus reflective padding to a size multiple.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use image::codecs::pnm::{PnmDecoder, PnmEncoder, PnmSubtype, SampleEncoding};
use image::{DynamicImage, ExtendedColorType, ImageEncoder};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Smallest accepted side length.
pub const MIN_SIDE: usize = 8;

/// A raster scaled to `[0, 1]` by its header's maximum sample value.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageFile {
    /// `channels x H x W`, one channel for PGM, three for PPM.
    pub pixels: Tensor,
    pub max_value: u32,
}

impl ImageFile {
    pub fn channels(&self) -> usize {
        self.pixels.dims()[0]
    }

    pub fn height(&self) -> usize {
        self.pixels.dims()[1]
    }

    pub fn width(&self) -> usize {
        self.pixels.dims()[2]
    }

    /// Channel mean, `1 x H x W`.
    pub fn to_gray(&self) -> Tensor {
        let (c, h, w) = (self.channels(), self.height(), self.width());
        let mut out = vec![0.0; h * w];
        for ch in 0..c {
            for (o, v) in out.iter_mut().zip(&self.pixels.data()[ch * h * w..][..h * w]) {
                *o += v / c as f64;
            }
        }
        Tensor::new(&[1, h, w], out).expect("finite")
    }
}

/// Reads plain or binary PGM/PPM (P2, P3, P5, P6).
pub fn read_pnm(path: impl AsRef<Path>) -> Result<ImageFile> {
    let path = path.as_ref();
    let f = File::open(path).map_err(|e| Error::file(path, e))?;
    let decoder = PnmDecoder::new(BufReader::new(f)).map_err(|e| Error::Image(format!("{}: {e}", path.display())))?;
    let max_value = decoder.into_inner().1.maximal_sample();
    let f = File::open(path).map_err(|e| Error::file(path, e))?;
    let decoder = PnmDecoder::new(BufReader::new(f)).map_err(|e| Error::Image(format!("{}: {e}", path.display())))?;
    let img = DynamicImage::from_decoder(decoder).map_err(|e| Error::Image(format!("{}: {e}", path.display())))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    if w < MIN_SIDE || h < MIN_SIDE {
        return Err(Error::Image(format!("{}: {w}x{h} is smaller than {MIN_SIDE}x{MIN_SIDE}", path.display())));
    }
    let color = img.color().has_color();
    let pixels = if color {
        let rgb = img.to_rgb16();
        let mut data = vec![0.0; 3 * h * w];
        for (i, p) in rgb.pixels().enumerate() {
            for ch in 0..3 {
                data[ch * h * w + i] = p.0[ch] as f64 / 65535.0;
            }
        }
        Tensor::new(&[3, h, w], data)?
    } else {
        let data = img.to_luma16().pixels().map(|p| p.0[0] as f64 / 65535.0).collect();
        Tensor::new(&[1, h, w], data)?
    };
    Ok(ImageFile { pixels, max_value })
}

fn plane_dims(t: &Tensor) -> Result<(usize, usize)> {
    match *t.dims() {
        [h, w] | [1, h, w] => Ok((h, w)),
        _ => Err(Error::shape("write_pgm", format!("expected H x W, got {}", t.shape()))),
    }
}

/// Writes a binary 8-bit PGM, clamping values to `[0, 1]`.
pub fn write_pgm(path: impl AsRef<Path>, plane: &Tensor) -> Result<()> {
    let path = path.as_ref();
    let (h, w) = plane_dims(plane)?;
    let bytes: Vec<u8> = plane.data().iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
    let f = File::create(path).map_err(|e| Error::file(path, e))?;
    PnmEncoder::new(BufWriter::new(f))
        .with_subtype(PnmSubtype::Graymap(SampleEncoding::Binary))
        .write_image(&bytes, w as u32, h as u32, ExtendedColorType::L8)
        .map_err(|e| Error::Image(format!("{}: {e}", path.display())))
}

/// Writes `|plane|` scaled so its maximum maps to white (all black if the
/// plane is zero).
pub fn write_pgm_normalized(path: impl AsRef<Path>, plane: &Tensor) -> Result<()> {
    let m = plane.max_abs();
    let s = if m > 0.0 { 1.0 / m } else { 0.0 };
    write_pgm(path, &plane.map(|v| v.abs() * s))
}

/// Half-sample symmetric index into `0..n`.
fn reflect(i: usize, n: usize) -> usize {
    let p = 2 * n;
    let r = i % p;
    if r < n {
        r
    } else {
        p - 1 - r
    }
}

/// Pads the trailing two axes of `C x H x W` up to multiples of `divisor`
/// by mirroring (edge sample repeated).
pub fn reflect_pad(x: &Tensor, divisor: usize) -> Result<Tensor> {
    let &[c, h, w] = x.dims() else {
        return Err(Error::shape("reflect_pad", format!("expected C x H x W, got {}", x.shape())));
    };
    let (hp, wp) = (h.div_ceil(divisor) * divisor, w.div_ceil(divisor) * divisor);
    let mut out = Vec::with_capacity(c * hp * wp);
    for ch in 0..c {
        for i in 0..hp {
            for j in 0..wp {
                out.push(x.data()[(ch * h + reflect(i, h)) * w + reflect(j, w)]);
            }
        }
    }
    Tensor::new(&[c, hp, wp], out)
}

/// Top-left `C x h x w` block.
pub fn crop(x: &Tensor, h: usize, w: usize) -> Result<Tensor> {
    let &[c, hx, wx] = x.dims() else {
        return Err(Error::shape("crop", format!("expected C x H x W, got {}", x.shape())));
    };
    if h > hx || w > wx {
        return Err(Error::shape("crop", format!("{h}x{w} exceeds {hx}x{wx}")));
    }
    let mut out = Vec::with_capacity(c * h * w);
    for ch in 0..c {
        for i in 0..h {
            out.extend_from_slice(&x.data()[(ch * hx + i) * wx..][..w]);
        }
    }
    Tensor::new(&[c, h, w], out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plain_pgm_respects_max_value() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.pgm");
        let mut text = String::from("P2\n8 8\n15\n");
        for i in 0..64 {
            text.push_str(&format!("{}\n", [0, 15, 5][i % 3]));
        }
        std::fs::write(&p, text).unwrap();
        let img = read_pnm(&p).unwrap();
        assert_eq!(img.max_value, 15);
        assert_eq!(img.pixels.dims(), &[1, 8, 8]);
        assert!((img.pixels.data()[1] - 1.0).abs() < 1e-6);
        assert!((img.pixels.data()[2] - 5.0 / 15.0).abs() < 1e-3);
    }

    #[test]
    fn binary_ppm_and_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.ppm");
        let mut bytes = b"P6\n8 9\n255\n".to_vec();
        for i in 0..72 {
            bytes.extend([i as u8, 255, 0]);
        }
        std::fs::write(&p, bytes).unwrap();
        let img = read_pnm(&p).unwrap();
        assert_eq!(img.pixels.dims(), &[3, 9, 8]);
        assert_eq!(img.pixels.get(&[1, 4, 4]), 1.0);
        assert_eq!(img.pixels.get(&[0, 0, 3]), 3.0 / 255.0);

        let g = dir.path().join("g.pgm");
        let plane = Tensor::from_fn(&[8, 8], |i| i as f64 / 63.0).unwrap();
        write_pgm(&g, &plane).unwrap();
        let back = read_pnm(&g).unwrap();
        assert!(back.pixels.max_abs_diff(&plane.reshape(&[1, 8, 8]).unwrap()).unwrap() <= 0.5 / 255.0 + 1e-7);
    }

    #[test]
    fn rejects_tiny_and_garbage() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.pgm");
        std::fs::write(&p, "P2\n4 4\n255\n0 0 0 0 0 0 0 0 0 0 0 0 0 0 0 0\n").unwrap();
        assert!(read_pnm(&p).is_err());
        std::fs::write(&p, "hello").unwrap();
        assert!(read_pnm(&p).is_err());
        assert!(read_pnm(dir.path().join("missing.pgm")).is_err());
    }

    #[test]
    fn pad_then_crop() {
        let x = Tensor::from_fn(&[2, 5, 7], |i| i as f64).unwrap();
        let p = reflect_pad(&x, 4).unwrap();
        assert_eq!(p.dims(), &[2, 8, 8]);
        assert_eq!(p.get(&[0, 5, 0]), x.get(&[0, 4, 0]));
        assert_eq!(p.get(&[1, 0, 7]), x.get(&[1, 0, 6]));
        assert_eq!(crop(&p, 5, 7).unwrap(), x);
        assert_eq!(reflect_pad(&x, 1).unwrap(), x);
    }
}
