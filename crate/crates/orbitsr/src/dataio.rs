//! Grayscale PGM IO, the bicubic degradation model for HR/LR pair
//! generation, and synthetic desk-scale datasets.

use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{bicubic_resize, Scalar, Tensor};

/// Single-channel integer image. `samples` are row-major, in
/// `[0, maxval]`; 16-bit samples are stored natively and serialized
/// big-endian per the PGM format.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GrayImage {
    pub h: usize,
    pub w: usize,
    pub maxval: u16,
    pub samples: Vec<u16>,
}

impl GrayImage {
    pub fn new(h: usize, w: usize, maxval: u16, samples: Vec<u16>) -> Result<GrayImage> {
        if maxval == 0 {
            return Err(Error::InvalidArgument("maxval must be >= 1".into()));
        }
        if samples.len() != h * w {
            return Err(Error::InvalidArgument(format!(
                "{}x{} image needs {} samples, got {}",
                h,
                w,
                h * w,
                samples.len()
            )));
        }
        if samples.iter().any(|&s| s > maxval) {
            return Err(Error::InvalidArgument("sample exceeds maxval".into()));
        }
        Ok(GrayImage {
            h,
            w,
            maxval,
            samples,
        })
    }

    pub fn depth(&self) -> u8 {
        if self.maxval > 255 {
            16
        } else {
            8
        }
    }

    pub fn at(&self, y: usize, x: usize) -> u16 {
        self.samples[y * self.w + x]
    }

    /// Normalized `[0, 1]` tensor of shape `(1, 1, h, w)`.
    pub fn to_tensor<E: Scalar>(&self) -> Tensor<E> {
        let inv = 1.0 / self.maxval as f64;
        let data = self
            .samples
            .iter()
            .map(|&s| E::from_f64(s as f64 * inv))
            .collect();
        Tensor::from_vec([1, 1, self.h, self.w], data).expect("length checked at construction")
    }

    /// Quantizes a normalized `(1, 1, h, w)` tensor back to integers:
    /// round half away from zero, then clamp to `[0, maxval]`.
    pub fn from_tensor<E: Scalar>(t: &Tensor<E>, maxval: u16) -> Result<GrayImage> {
        let [n, c, h, w] = t.shape();
        if n != 1 || c != 1 {
            return Err(Error::ShapeMismatch(format!(
                "expected (1, 1, h, w) tensor, got {:?}",
                t.shape()
            )));
        }
        let samples = t
            .data()
            .iter()
            .map(|&v| quantize(v.to_f64() * maxval as f64, maxval))
            .collect();
        GrayImage::new(h, w, maxval, samples)
    }

    pub fn flip_horizontal(&self) -> GrayImage {
        let mut samples = Vec::with_capacity(self.samples.len());
        for y in 0..self.h {
            for x in 0..self.w {
                samples.push(self.at(y, self.w - 1 - x));
            }
        }
        GrayImage {
            h: self.h,
            w: self.w,
            maxval: self.maxval,
            samples,
        }
    }
}

/// Round half away from zero, clamp to `[0, maxval]`.
fn quantize(v: f64, maxval: u16) -> u16 {
    let r = if v >= 0.0 {
        (v + 0.5).floor()
    } else {
        (v - 0.5).ceil()
    };
    r.clamp(0.0, maxval as f64) as u16
}

fn fmt_err(path: &Path, reason: impl Into<String>) -> Error {
    Error::ImageFormat {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

/// Whitespace/comment-aware token scanner over the PGM header bytes.
struct TokenReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> TokenReader<'a> {
    fn token(&mut self) -> Option<&'a [u8]> {
        loop {
            while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
                self.pos += 1;
            }
            if self.pos < self.bytes.len() && self.bytes[self.pos] == b'#' {
                while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                    self.pos += 1;
                }
                continue;
            }
            break;
        }
        if self.pos >= self.bytes.len() {
            return None;
        }
        let start = self.pos;
        while self.pos < self.bytes.len() && !self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        Some(&self.bytes[start..self.pos])
    }

    fn number(&mut self) -> Option<u64> {
        let t = self.token()?;
        std::str::from_utf8(t).ok()?.parse().ok()
    }
}

pub fn read_pgm(path: &Path) -> Result<GrayImage> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let mut tr = TokenReader {
        bytes: &bytes,
        pos: 0,
    };
    let magic = tr.token().ok_or_else(|| fmt_err(path, "empty file"))?;
    let binary = match magic {
        b"P5" => true,
        b"P2" => false,
        _ => return Err(fmt_err(path, "not a P2/P5 portable graymap")),
    };
    let w = tr.number().ok_or_else(|| fmt_err(path, "missing width"))? as usize;
    let h = tr.number().ok_or_else(|| fmt_err(path, "missing height"))? as usize;
    let maxval = tr.number().ok_or_else(|| fmt_err(path, "missing maxval"))?;
    if maxval == 0 || maxval > 65535 {
        return Err(fmt_err(path, format!("unsupported maxval {maxval}")));
    }
    if w == 0 || h == 0 {
        return Err(fmt_err(path, "zero dimension"));
    }
    let maxval = maxval as u16;
    let count = w * h;
    let samples = if binary {
        // Exactly one whitespace byte separates the header from the raster.
        let start = tr.pos + 1;
        let wide = maxval > 255;
        let need = count * if wide { 2 } else { 1 };
        if bytes.len() < start + need {
            return Err(fmt_err(path, "truncated pixel payload"));
        }
        let raster = &bytes[start..start + need];
        if wide {
            raster
                .chunks_exact(2)
                .map(|p| u16::from_be_bytes([p[0], p[1]]))
                .collect()
        } else {
            raster.iter().map(|&b| b as u16).collect()
        }
    } else {
        let mut v = Vec::with_capacity(count);
        for _ in 0..count {
            let s = tr
                .number()
                .ok_or_else(|| fmt_err(path, "truncated ASCII payload"))?;
            if s > maxval as u64 {
                return Err(fmt_err(path, format!("sample {s} exceeds maxval")));
            }
            v.push(s as u16);
        }
        v
    };
    if samples.iter().any(|&s| s > maxval) {
        return Err(fmt_err(path, "sample exceeds maxval"));
    }
    GrayImage::new(h, w, maxval, samples)
}

/// Writes binary P5 with big-endian 16-bit samples when maxval > 255.
pub fn write_pgm(img: &GrayImage, path: &Path) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write!(f, "P5\n{} {}\n{}\n", img.w, img.h, img.maxval)?;
    if img.maxval > 255 {
        for &s in &img.samples {
            f.write_all(&s.to_be_bytes())?;
        }
    } else {
        let raw: Vec<u8> = img.samples.iter().map(|&s| s as u8).collect();
        f.write_all(&raw)?;
    }
    Ok(())
}

/// Bicubically downsamples one source into an HR/LR pair. Both images come
/// from the same source; the source is first cropped so that the LR
/// dimensions are exactly the HR dimensions divided by the SR scale.
pub fn degrade_pair(
    src: &GrayImage,
    hr_factor: usize,
    lr_factor: usize,
) -> Result<(GrayImage, GrayImage)> {
    if hr_factor == 0 || lr_factor == 0 || lr_factor % hr_factor != 0 || lr_factor == hr_factor {
        return Err(Error::InvalidArgument(format!(
            "lr_factor ({lr_factor}) must be a proper multiple of hr_factor ({hr_factor})"
        )));
    }
    let crop_h = src.h / lr_factor * lr_factor;
    let crop_w = src.w / lr_factor * lr_factor;
    if crop_h == 0 || crop_w == 0 {
        return Err(Error::InvalidArgument(format!(
            "{}x{} source too small for downscale factor {lr_factor}",
            src.h, src.w
        )));
    }
    let mut t = Tensor::<f64>::zeros([1, 1, crop_h, crop_w]);
    let inv = 1.0 / src.maxval as f64;
    for y in 0..crop_h {
        for x in 0..crop_w {
            t.set(0, 0, y, x, src.at(y, x) as f64 * inv);
        }
    }
    let hr = bicubic_resize(&t, 1, hr_factor)?;
    let lr = bicubic_resize(&t, 1, lr_factor)?;
    Ok((
        GrayImage::from_tensor(&hr, src.maxval)?,
        GrayImage::from_tensor(&lr, src.maxval)?,
    ))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SynthKind {
    /// Random discs over a gentle ramp, plus pixel noise.
    Craters,
    /// Random-orientation linear ramps.
    Ramps,
    /// Random-phase checkerboards (harsh for upsamplers).
    Checkers,
}

impl std::str::FromStr for SynthKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<SynthKind> {
        match s {
            "craters" => Ok(SynthKind::Craters),
            "ramps" => Ok(SynthKind::Ramps),
            "checkers" => Ok(SynthKind::Checkers),
            other => Err(Error::InvalidArgument(format!(
                "unknown synthetic kind {other:?} (craters|ramps|checkers)"
            ))),
        }
    }
}

pub const SYNTH_HR_SIZE: usize = 96;

fn synth_hr(kind: SynthKind, rng: &mut ChaCha8Rng) -> GrayImage {
    let n = SYNTH_HR_SIZE;
    let mut v = vec![0.0f64; n * n];
    match kind {
        SynthKind::Craters => {
            let gx: f64 = rng.gen_range(-0.3..0.3);
            let gy: f64 = rng.gen_range(-0.3..0.3);
            for y in 0..n {
                for x in 0..n {
                    v[y * n + x] = 0.55 + gx * (x as f64 / n as f64 - 0.5)
                        + gy * (y as f64 / n as f64 - 0.5);
                }
            }
            let discs = rng.gen_range(6..14);
            for _ in 0..discs {
                let cy: f64 = rng.gen_range(0.0..n as f64);
                let cx: f64 = rng.gen_range(0.0..n as f64);
                let r: f64 = rng.gen_range(3.0..14.0);
                let depth: f64 = rng.gen_range(-0.45..0.45);
                for y in 0..n {
                    for x in 0..n {
                        let d2 = (y as f64 - cy).powi(2) + (x as f64 - cx).powi(2);
                        if d2 < r * r {
                            // raised rim, sunken floor
                            let t = (d2.sqrt() / r).powi(2);
                            v[y * n + x] += depth * (1.0 - t) - 0.3 * depth * t;
                        }
                    }
                }
            }
            for p in v.iter_mut() {
                *p += rng.gen_range(-0.02..0.02);
            }
        }
        SynthKind::Ramps => {
            let ang: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            let amp: f64 = rng.gen_range(0.5..1.0);
            let (s, c) = ang.sin_cos();
            for y in 0..n {
                for x in 0..n {
                    let t = (c * x as f64 + s * y as f64) / (n as f64 * std::f64::consts::SQRT_2);
                    v[y * n + x] = 0.5 + amp * t;
                }
            }
        }
        SynthKind::Checkers => {
            let cell = rng.gen_range(4..16usize);
            let phase_y = rng.gen_range(0..cell);
            let phase_x = rng.gen_range(0..cell);
            let (lo, hi): (f64, f64) = (rng.gen_range(0.0..0.2), rng.gen_range(0.75..1.0));
            for y in 0..n {
                for x in 0..n {
                    let parity = ((y + phase_y) / cell + (x + phase_x) / cell) % 2;
                    v[y * n + x] = if parity == 0 { lo } else { hi };
                }
            }
        }
    }
    let samples = v.iter().map(|&p| quantize(p * 255.0, 255)).collect();
    GrayImage::new(n, n, 255, samples).expect("synthetic geometry")
}

/// Deterministic synthetic HR/LR x2 pairs (HR 96x96, LR 48x48).
pub fn synth_dataset(kind: SynthKind, count: usize, seed: u64) -> Vec<(GrayImage, GrayImage)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let hr = synth_hr(kind, &mut rng);
            let lr_t = bicubic_resize(&hr.to_tensor::<f64>(), 1, 2).expect("96 -> 48");
            let lr = GrayImage::from_tensor(&lr_t, 255).expect("normalized values");
            (hr, lr)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tmp() -> tempfile::TempDir {
        tempfile::tempdir().unwrap()
    }

    #[test]
    fn p5_roundtrip_bitwise() {
        let dir = tmp();
        let p = dir.path().join("a.pgm");
        let img = GrayImage::new(2, 2, 255, vec![0, 128, 200, 255]).unwrap();
        write_pgm(&img, &p).unwrap();
        let back = read_pgm(&p).unwrap();
        assert_eq!(back, img);
        let q = dir.path().join("b.pgm");
        write_pgm(&back, &q).unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), std::fs::read(&q).unwrap());
    }

    #[test]
    fn p2_with_comments_parses() {
        let dir = tmp();
        let p = dir.path().join("c.pgm");
        std::fs::write(
            &p,
            "P2\n# a comment\n3 2 # trailing comment\n255\n0 10 20\n30 40 50\n",
        )
        .unwrap();
        let img = read_pgm(&p).unwrap();
        assert_eq!((img.w, img.h, img.maxval), (3, 2, 255));
        assert_eq!(img.samples, vec![0, 10, 20, 30, 40, 50]);
    }

    #[test]
    fn sixteen_bit_gradient_roundtrip() {
        let dir = tmp();
        let p = dir.path().join("g16.pgm");
        let samples: Vec<u16> = (0..64).map(|i| i * 1000).collect();
        let img = GrayImage::new(8, 8, 65535, samples).unwrap();
        write_pgm(&img, &p).unwrap();
        let back = read_pgm(&p).unwrap();
        assert_eq!(back, img);
        assert_eq!(back.depth(), 16);
        let q = dir.path().join("g16b.pgm");
        write_pgm(&back, &q).unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), std::fs::read(&q).unwrap());
    }

    #[test]
    fn sixteen_bit_samples_are_big_endian() {
        let dir = tmp();
        let p = dir.path().join("be.pgm");
        let img = GrayImage::new(1, 1, 65535, vec![0x0102]).unwrap();
        write_pgm(&img, &p).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        let raster = &bytes[bytes.len() - 2..];
        assert_eq!(raster, &[0x01, 0x02]);
    }

    #[test]
    fn malformed_files_rejected() {
        let dir = tmp();
        let bad = |name: &str, content: &[u8]| {
            let p = dir.path().join(name);
            std::fs::write(&p, content).unwrap();
            assert!(read_pgm(&p).is_err(), "{name} should fail");
        };
        bad("magic.pgm", b"P6\n2 2\n255\nxxxx");
        bad("trunc.pgm", b"P5\n4 4\n255\nab");
        bad("maxval.pgm", b"P5\n1 1\n70000\nxx");
        bad("overflow.pgm", b"P2\n1 1\n10\n99\n");
        bad("empty.pgm", b"");
    }

    #[test]
    fn quantize_rounds_half_away_from_zero() {
        assert_eq!(quantize(0.5, 255), 1);
        assert_eq!(quantize(1.5, 255), 2);
        assert_eq!(quantize(2.4999, 255), 2);
        assert_eq!(quantize(-0.7, 255), 0); // clamp
        assert_eq!(quantize(300.0, 255), 255); // clamp
        assert_eq!(quantize(254.5, 255), 255);
    }

    #[test]
    fn degrade_constant_source_stays_constant() {
        let img = GrayImage::new(32, 32, 255, vec![77; 1024]).unwrap();
        let (hr, lr) = degrade_pair(&img, 1, 2).unwrap();
        assert_eq!((hr.h, hr.w), (32, 32));
        assert_eq!((lr.h, lr.w), (16, 16));
        assert!(hr.samples.iter().all(|&s| s == 77));
        assert!(lr.samples.iter().all(|&s| s == 77));
    }

    #[test]
    fn degrade_dims_are_exact_after_crop() {
        let img = GrayImage::new(37, 41, 255, vec![10; 37 * 41]).unwrap();
        let (hr, lr) = degrade_pair(&img, 1, 2).unwrap();
        assert_eq!((hr.h, hr.w), (36, 40));
        assert_eq!((lr.h, lr.w), (18, 20));
        let (hr2, lr2) = degrade_pair(&img, 2, 4).unwrap();
        assert_eq!((hr2.h, hr2.w), (18, 20));
        assert_eq!((lr2.h, lr2.w), (9, 10));
    }

    #[test]
    fn lr_consistent_with_downscaled_hr() {
        // Cross-path oracle: lr should match bicubic(hr, 1, 2) within one
        // intensity step of double quantization.
        let ds = synth_dataset(SynthKind::Craters, 1, 5);
        let (hr, _) = &ds[0];
        let (hr2, lr2) = degrade_pair(hr, 1, 2).unwrap();
        assert_eq!((hr2.h, hr2.w), (96, 96));
        let redown = bicubic_resize(&hr2.to_tensor::<f64>(), 1, 2).unwrap();
        let redown = GrayImage::from_tensor(&redown, 255).unwrap();
        let max_diff = lr2
            .samples
            .iter()
            .zip(&redown.samples)
            .map(|(&a, &b)| (a as i32 - b as i32).abs())
            .max()
            .unwrap();
        assert!(max_diff <= 1, "max quantization drift {max_diff}");
    }

    #[test]
    fn degrade_commutes_with_horizontal_flip() {
        let ds = synth_dataset(SynthKind::Craters, 1, 8);
        let (src, _) = &ds[0];
        let (_, lr_a) = degrade_pair(&src.flip_horizontal(), 1, 2).unwrap();
        let (_, lr_b) = degrade_pair(src, 1, 2).unwrap();
        let lr_b = lr_b.flip_horizontal();
        let max_diff = lr_a
            .samples
            .iter()
            .zip(&lr_b.samples)
            .map(|(&a, &b)| (a as i32 - b as i32).abs())
            .max()
            .unwrap();
        assert!(max_diff <= 1, "flip drift {max_diff}");
    }

    #[test]
    fn synth_is_deterministic() {
        for kind in [SynthKind::Craters, SynthKind::Ramps, SynthKind::Checkers] {
            let a = synth_dataset(kind, 3, 99);
            let b = synth_dataset(kind, 3, 99);
            assert_eq!(a, b);
            let c = synth_dataset(kind, 3, 100);
            assert_ne!(a, c);
        }
        assert!(synth_dataset(SynthKind::Ramps, 0, 1).is_empty());
    }

    #[test]
    fn synth_pairs_have_toy_dims() {
        let ds = synth_dataset(SynthKind::Checkers, 2, 4);
        for (hr, lr) in &ds {
            assert_eq!((hr.h, hr.w), (96, 96));
            assert_eq!((lr.h, lr.w), (48, 48));
        }
    }

    #[test]
    fn crater_histogram_spans_half_the_range() {
        for seed in 0..5 {
            let ds = synth_dataset(SynthKind::Craters, 1, seed);
            let (hr, _) = &ds[0];
            let lo = *hr.samples.iter().min().unwrap();
            let hi = *hr.samples.iter().max().unwrap();
            assert!(
                hi - lo >= 128,
                "seed {seed}: span {} too narrow",
                hi - lo
            );
        }
    }
}
