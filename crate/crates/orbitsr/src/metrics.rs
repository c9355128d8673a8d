//! Quality metrics: PSNR, masked PSNR, PSNR-B with a blocking-effect
//! factor, SSIM, plus the L1 training loss. All pure functions; all return
//! f64 regardless of the tensor element type.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

fn check_same_shape<E: Scalar>(a: &Tensor<E>, b: &Tensor<E>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch(format!(
            "metric inputs {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

pub fn mse<E: Scalar>(a: &Tensor<E>, b: &Tensor<E>) -> Result<f64> {
    check_same_shape(a, b)?;
    let sum: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| {
            let d = x.to_f64() - y.to_f64();
            d * d
        })
        .sum();
    Ok(sum / a.numel() as f64)
}

pub fn l1_loss<E: Scalar>(a: &Tensor<E>, b: &Tensor<E>) -> Result<f64> {
    check_same_shape(a, b)?;
    let sum: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| (x.to_f64() - y.to_f64()).abs())
        .sum();
    Ok(sum / a.numel() as f64)
}

/// Peak signal-to-noise ratio in dB; +inf for identical inputs.
pub fn psnr<E: Scalar>(a: &Tensor<E>, b: &Tensor<E>, i_max: f64) -> Result<f64> {
    let m = mse(a, b)?;
    if m == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (i_max * i_max / m).log10())
}

/// Masked PSNR: `10 log10(numel * i_max^2 / sum(M * (hr - sr)^2))`. The
/// mask is `(1, 1, h, w)` and broadcasts over batch and channels. A uniform
/// mask of ones reduces this exactly to `psnr`.
pub fn mask_psnr<E: Scalar>(
    sr: &Tensor<E>,
    hr: &Tensor<E>,
    mask: &Tensor<E>,
    i_max: f64,
) -> Result<f64> {
    check_same_shape(sr, hr)?;
    let [n, c, h, w] = sr.shape();
    if mask.shape() != [1, 1, h, w] {
        return Err(Error::ShapeMismatch(format!(
            "mask must be [1, 1, {h}, {w}], got {:?}",
            mask.shape()
        )));
    }
    let mut sum = 0.0f64;
    for bn in 0..n {
        for ch in 0..c {
            for y in 0..h {
                for x in 0..w {
                    let d = hr.at(bn, ch, y, x).to_f64() - sr.at(bn, ch, y, x).to_f64();
                    sum += mask.at(0, 0, y, x).to_f64() * d * d;
                }
            }
        }
    }
    if sum == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (sr.numel() as f64 * i_max * i_max / sum).log10())
}

/// Blocking-effect factor of one image on a `block`-pixel grid.
///
/// `D_b` is the mean squared difference over adjacent pixel pairs that
/// straddle a grid boundary (columns/rows at multiples of `block`), `D_bc`
/// the same over all other adjacent pairs. When `D_b > D_bc` the factor is
/// `log2(block)/log2(min(h, w)) * (D_b - D_bc)`, otherwise zero.
pub fn bef<E: Scalar>(img: &Tensor<E>, block: usize) -> Result<f64> {
    let [n, c, h, w] = img.shape();
    if block < 2 || h < 2 || w < 2 {
        return Err(Error::InvalidArgument(
            "bef needs block >= 2 and an image of at least 2x2".into(),
        ));
    }
    let mut sb = 0.0f64;
    let mut nb = 0usize;
    let mut sc = 0.0f64;
    let mut nc = 0usize;
    for bn in 0..n {
        for ch in 0..c {
            for y in 0..h {
                for x in 0..w - 1 {
                    let d = img.at(bn, ch, y, x).to_f64() - img.at(bn, ch, y, x + 1).to_f64();
                    if (x + 1) % block == 0 {
                        sb += d * d;
                        nb += 1;
                    } else {
                        sc += d * d;
                        nc += 1;
                    }
                }
            }
            for y in 0..h - 1 {
                for x in 0..w {
                    let d = img.at(bn, ch, y, x).to_f64() - img.at(bn, ch, y + 1, x).to_f64();
                    if (y + 1) % block == 0 {
                        sb += d * d;
                        nb += 1;
                    } else {
                        sc += d * d;
                        nc += 1;
                    }
                }
            }
        }
    }
    if nb == 0 {
        return Ok(0.0);
    }
    let d_b = sb / nb as f64;
    let d_bc = if nc == 0 { 0.0 } else { sc / nc as f64 };
    if d_b > d_bc {
        let eta = (block as f64).log2() / (h.min(w) as f64).log2();
        Ok(eta * (d_b - d_bc))
    } else {
        Ok(0.0)
    }
}

/// Block-sensitive PSNR: the blocking-effect factor of `b` (the test
/// image) is added to the MSE before the log. Always `<= psnr`.
pub fn psnr_b<E: Scalar>(a: &Tensor<E>, b: &Tensor<E>, i_max: f64, block: usize) -> Result<f64> {
    let m = mse(a, b)?;
    let f = bef(b, block)?;
    if m + f == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (i_max * i_max / (m + f)).log10())
}

fn gaussian_window(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size - 1) as f64 / 2.0;
    let mut w: Vec<f64> = (0..size)
        .map(|i| (-(i as f64 - c).powi(2) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = w.iter().sum();
    for v in &mut w {
        *v /= s;
    }
    w
}

/// Mean local SSIM over all valid 11x11 Gaussian windows (sigma = 1.5),
/// with the standard stabilizers C1 = (0.01 i_max)^2, C2 = (0.03 i_max)^2.
pub fn ssim<E: Scalar>(a: &Tensor<E>, b: &Tensor<E>, i_max: f64) -> Result<f64> {
    check_same_shape(a, b)?;
    let [n, c, h, w] = a.shape();
    const WIN: usize = 11;
    if h < WIN || w < WIN {
        return Err(Error::InvalidArgument(format!(
            "ssim needs at least {WIN}x{WIN}, got {h}x{w}"
        )));
    }
    let g = gaussian_window(WIN, 1.5);
    let c1 = (0.01 * i_max).powi(2);
    let c2 = (0.03 * i_max).powi(2);
    let mut total = 0.0f64;
    let mut count = 0usize;
    for bn in 0..n {
        for ch in 0..c {
            for oy in 0..=h - WIN {
                for ox in 0..=w - WIN {
                    let (mut ma, mut mb) = (0.0f64, 0.0f64);
                    let (mut va, mut vb, mut cov) = (0.0f64, 0.0f64, 0.0f64);
                    for dy in 0..WIN {
                        for dx in 0..WIN {
                            let wgt = g[dy] * g[dx];
                            let xa = a.at(bn, ch, oy + dy, ox + dx).to_f64();
                            let xb = b.at(bn, ch, oy + dy, ox + dx).to_f64();
                            ma += wgt * xa;
                            mb += wgt * xb;
                            va += wgt * xa * xa;
                            vb += wgt * xb * xb;
                            cov += wgt * xa * xb;
                        }
                    }
                    va -= ma * ma;
                    vb -= mb * mb;
                    cov -= ma * mb;
                    let s = ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                        / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                    total += s;
                    count += 1;
                }
            }
        }
    }
    Ok(total / count as f64)
}

/// One row of evaluation results for a reference/test image pair.
#[derive(Clone, Copy, Debug)]
pub struct MetricsReport {
    pub psnr: f64,
    pub psnrb: f64,
    pub ssim: f64,
    pub mse: f64,
    pub bef: f64,
}

impl MetricsReport {
    pub fn compute<E: Scalar>(
        reference: &Tensor<E>,
        test: &Tensor<E>,
        i_max: f64,
        block: usize,
    ) -> Result<MetricsReport> {
        Ok(MetricsReport {
            psnr: psnr(reference, test, i_max)?,
            psnrb: psnr_b(reference, test, i_max, block)?,
            ssim: ssim(reference, test, i_max)?,
            mse: mse(reference, test)?,
            bef: bef(test, block)?,
        })
    }

    pub fn csv_header() -> &'static str {
        "image_id,psnr,psnrb,ssim,mse,bef"
    }

    pub fn csv_row(&self, image_id: &str) -> String {
        format!(
            "{},{:.6},{:.6},{:.6},{:.8},{:.8}",
            image_id, self.psnr, self.psnrb, self.ssim, self.mse, self.bef
        )
    }
}
