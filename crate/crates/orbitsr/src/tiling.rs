//! Patch tiling for memory-bounded inference and the masked training
//! window.
//!
//! Two modes. Non-overlap: the image is reflection-padded on the right and
//! bottom up to a patch multiple and cut at stride `patch`; border tiles
//! carry upsampling artifacts into the stitched result. Overlap: the image
//! is reflection-padded by `patch/4` on every side and cut at stride
//! `patch/2`; only the central half of each upsampled tile is kept, so
//! every output pixel comes from the interior of some tile.

use std::fmt;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TilePlan {
    pub patch: usize,
    pub scale: usize,
    pub overlap: bool,
    /// Original image height/width in LR pixels.
    pub height: usize,
    pub width: usize,
    /// Reflection padding added above/left (zero in non-overlap mode).
    pub pad_top: usize,
    pub pad_left: usize,
    pub padded_h: usize,
    pub padded_w: usize,
    /// Tile origins in padded coordinates, row-major grid.
    pub rows: Vec<usize>,
    pub cols: Vec<usize>,
}

impl TilePlan {
    pub fn tile_count(&self) -> usize {
        self.rows.len() * self.cols.len()
    }

    /// Origin of tile `i` (row-major) in padded coordinates.
    pub fn origin(&self, i: usize) -> (usize, usize) {
        (self.rows[i / self.cols.len()], self.cols[i % self.cols.len()])
    }
}

impl fmt::Display for TilePlan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "mode={} patch={} scale={} image={}x{} padded={}x{} grid={}x{} tiles={}",
            if self.overlap { "overlap" } else { "nonoverlap" },
            self.patch,
            self.scale,
            self.height,
            self.width,
            self.padded_h,
            self.padded_w,
            self.rows.len(),
            self.cols.len(),
            self.tile_count()
        )?;
        writeln!(f, "tile,row,col")?;
        for (i, &r) in self.rows.iter().enumerate() {
            for (j, &c) in self.cols.iter().enumerate() {
                writeln!(f, "{},{},{}", i * self.cols.len() + j, r, c)?;
            }
        }
        Ok(())
    }
}

fn axis_origins(padded: usize, patch: usize, stride: usize) -> Vec<usize> {
    let last = padded - patch;
    let mut origins: Vec<usize> = (0..=last).step_by(stride).collect();
    // Clamp a final tile flush with the edge when the stride overshoots.
    if *origins.last().expect("at least origin 0") != last {
        origins.push(last);
    }
    origins
}

pub fn plan_tiles(
    height: usize,
    width: usize,
    patch: usize,
    scale: usize,
    overlap: bool,
) -> Result<TilePlan> {
    if height == 0 || width == 0 {
        return Err(Error::InvalidArgument("empty image".into()));
    }
    if patch == 0 || scale == 0 {
        return Err(Error::InvalidArgument("patch and scale must be >= 1".into()));
    }
    if overlap && patch % 4 != 0 {
        return Err(Error::InvalidArgument(format!(
            "overlap tiling needs patch divisible by 4, got {patch}"
        )));
    }
    let (pad_top, pad_left, padded_h, padded_w, stride) = if overlap {
        let pad = patch / 4;
        // Tiny images still get one full patch.
        let ph = (height + 2 * pad).max(patch);
        let pw = (width + 2 * pad).max(patch);
        (pad, pad, ph, pw, patch / 2)
    } else {
        let ph = height.div_ceil(patch) * patch;
        let pw = width.div_ceil(patch) * patch;
        (0, 0, ph, pw, patch)
    };
    Ok(TilePlan {
        patch,
        scale,
        overlap,
        height,
        width,
        pad_top,
        pad_left,
        padded_h,
        padded_w,
        rows: axis_origins(padded_h, patch, stride),
        cols: axis_origins(padded_w, patch, stride),
    })
}

/// Symmetric reflection of an arbitrary (possibly negative or overshooting)
/// index into `[0, n)`: the signal is mirrored without repeating the edge
/// sample, then tiled with period `2n`.
fn reflect(idx: isize, n: usize) -> usize {
    let n = n as isize;
    let m = idx.rem_euclid(2 * n);
    (if m < n { m } else { 2 * n - 1 - m }) as usize
}

/// Cuts LR patches of `(n, c, patch, patch)` in row-major grid order,
/// reflection-padding outside the image.
pub fn extract_patches<E: Scalar>(img: &Tensor<E>, plan: &TilePlan) -> Result<Vec<Tensor<E>>> {
    let [n, c, h, w] = img.shape();
    if h != plan.height || w != plan.width {
        return Err(Error::ShapeMismatch(format!(
            "plan is for {}x{}, image is {h}x{w}",
            plan.height, plan.width
        )));
    }
    let p = plan.patch;
    let mut tiles = Vec::with_capacity(plan.tile_count());
    for &r in &plan.rows {
        for &cc in &plan.cols {
            let mut t = Tensor::zeros([n, c, p, p]);
            for bn in 0..n {
                for ch in 0..c {
                    for y in 0..p {
                        let sy = reflect((r + y) as isize - plan.pad_top as isize, h);
                        for x in 0..p {
                            let sx = reflect((cc + x) as isize - plan.pad_left as isize, w);
                            t.set(bn, ch, y, x, img.at(bn, ch, sy, sx));
                        }
                    }
                }
            }
            tiles.push(t);
        }
    }
    Ok(tiles)
}

fn check_tiles<E: Scalar>(tiles: &[Tensor<E>], plan: &TilePlan) -> Result<(usize, usize)> {
    if tiles.len() != plan.tile_count() {
        return Err(Error::ShapeMismatch(format!(
            "expected {} tiles, got {}",
            plan.tile_count(),
            tiles.len()
        )));
    }
    let ps = plan.patch * plan.scale;
    let [n, c, th, tw] = tiles[0].shape();
    if th != ps || tw != ps {
        return Err(Error::ShapeMismatch(format!(
            "tiles must be {ps}x{ps} after x{} upsampling, got {th}x{tw}",
            plan.scale
        )));
    }
    if tiles.iter().any(|t| t.shape() != [n, c, ps, ps]) {
        return Err(Error::ShapeMismatch("inconsistent tile shapes".into()));
    }
    Ok((n, c))
}

/// Reassembles non-overlap SR tiles and crops the right/bottom padding.
pub fn stitch_nonoverlap<E: Scalar>(tiles: &[Tensor<E>], plan: &TilePlan) -> Result<Tensor<E>> {
    if plan.overlap {
        return Err(Error::InvalidArgument(
            "plan is overlap mode; use stitch_overlap_center".into(),
        ));
    }
    let (n, c) = check_tiles(tiles, plan)?;
    let s = plan.scale;
    let (oh, ow) = (plan.height * s, plan.width * s);
    let mut out = Tensor::zeros([n, c, oh, ow]);
    let ps = plan.patch * s;
    for (i, tile) in tiles.iter().enumerate() {
        let (r, cc) = plan.origin(i);
        let (r, cc) = (r * s, cc * s);
        for bn in 0..n {
            for ch in 0..c {
                for y in 0..ps.min(oh.saturating_sub(r)) {
                    for x in 0..ps.min(ow.saturating_sub(cc)) {
                        out.set(bn, ch, r + y, cc + x, tile.at(bn, ch, y, x));
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Per-axis half-open intervals `(out_start, out_end, tile_offset)` such
/// that the intervals exactly partition `[0, out_len)`: each covers the
/// central strip of one tile, clipped against the previous coverage end
/// and the output boundary.
fn center_intervals(
    origins: &[usize],
    patch: usize,
    scale: usize,
    out_len: usize,
) -> Vec<(usize, usize, usize)> {
    let center = patch * scale / 2;
    let quarter = patch * scale / 4;
    let mut prev_end = 0usize;
    let mut iv = Vec::with_capacity(origins.len());
    for &o in origins {
        let nominal = o * scale; // padded coord o*scale + quarter, minus pad
        let start = nominal.max(prev_end);
        let end = (nominal + center).min(out_len);
        // Tile-local coordinate of `start` within the SR tile.
        let offset = quarter + (start - nominal);
        iv.push((start, end.max(start), offset));
        prev_end = prev_end.max(end);
    }
    iv
}

/// Reassembles overlap-mode SR tiles from their central crops; every output
/// pixel is written exactly once.
pub fn stitch_overlap_center<E: Scalar>(tiles: &[Tensor<E>], plan: &TilePlan) -> Result<Tensor<E>> {
    if !plan.overlap {
        return Err(Error::InvalidArgument(
            "plan is non-overlap mode; use stitch_nonoverlap".into(),
        ));
    }
    let (n, c) = check_tiles(tiles, plan)?;
    let s = plan.scale;
    let (oh, ow) = (plan.height * s, plan.width * s);
    let rows_iv = center_intervals(&plan.rows, plan.patch, s, oh);
    let cols_iv = center_intervals(&plan.cols, plan.patch, s, ow);
    let mut out = Tensor::zeros([n, c, oh, ow]);
    for (i, tile) in tiles.iter().enumerate() {
        let (ys, ye, yo) = rows_iv[i / plan.cols.len()];
        let (xs, xe, xo) = cols_iv[i % plan.cols.len()];
        for bn in 0..n {
            for ch in 0..c {
                for y in ys..ye {
                    for x in xs..xe {
                        out.set(bn, ch, y, x, tile.at(bn, ch, yo + y - ys, xo + x - xs));
                    }
                }
            }
        }
    }
    Ok(out)
}

/// N x N training mask: ones on the centered k x k box, then a linear decay
/// in Chebyshev distance `d` outside it, `m = 1 - d / (d_max + 1)`. With
/// `k >= n` the mask is all ones.
pub fn make_mask<E: Scalar>(n: usize, k: usize) -> Tensor<E> {
    let mut mask = Tensor::filled([1, 1, n, n], E::one());
    if k >= n || n == 0 {
        return mask;
    }
    let lo = (n - k) / 2;
    let hi = lo + k; // exclusive
    let axis_dist = |i: usize| -> usize {
        if i < lo {
            lo - i
        } else if i >= hi {
            i - (hi - 1)
        } else {
            0
        }
    };
    let d_max = axis_dist(0).max(axis_dist(n - 1));
    for y in 0..n {
        for x in 0..n {
            let d = axis_dist(y).max(axis_dist(x));
            let v = 1.0 - d as f64 / (d_max as f64 + 1.0);
            mask.set(0, 0, y, x, E::from_f64(v));
        }
    }
    mask
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ramp(h: usize, w: usize) -> Tensor<f64> {
        let mut t = Tensor::zeros([1, 1, h, w]);
        for y in 0..h {
            for x in 0..w {
                t.set(0, 0, y, x, (y * w + x) as f64 * 0.01 + 0.3);
            }
        }
        t
    }

    #[test]
    fn counts_910_patch_48() {
        let non = plan_tiles(910, 910, 48, 2, false).unwrap();
        assert_eq!(non.tile_count(), 361);
        assert_eq!(non.padded_h, 912);
        let ov = plan_tiles(910, 910, 48, 2, true).unwrap();
        assert_eq!(ov.tile_count(), 1444);
        assert_eq!(ov.padded_h, 934);
        assert_eq!(*ov.rows.last().unwrap(), 934 - 48);
    }

    #[test]
    fn count_formula_oracle() {
        // Independent per-axis count: non-overlap ceil(d/p); overlap
        // ceil((padded - patch) / stride) + 1.
        for &(h, w) in &[(96usize, 96usize), (910, 910), (100, 70), (48, 48), (5, 200)] {
            let p = 48;
            let non = plan_tiles(h, w, p, 2, false).unwrap();
            assert_eq!(
                non.tile_count(),
                h.div_ceil(p) * w.div_ceil(p)
            );
            let ov = plan_tiles(h, w, p, 2, true).unwrap();
            let axis = |d: usize| {
                let padded = (d + p / 2).max(p);
                (padded - p).div_ceil(p / 2) + 1
            };
            assert_eq!(ov.tile_count(), axis(h) * axis(w));
        }
    }

    #[test]
    fn overlap_96_is_16_tiles() {
        let plan = plan_tiles(96, 96, 48, 2, true).unwrap();
        assert_eq!(plan.rows.len(), 4);
        assert_eq!(plan.cols.len(), 4);
        assert_eq!(plan.tile_count(), 16);
    }

    #[test]
    fn reflect_is_symmetric_and_in_range() {
        // For n=4: ..., 2 1 0 | 0 1 2 3 | 3 2 1 0 | 0 1 ...
        assert_eq!(reflect(-1, 4), 0);
        assert_eq!(reflect(-2, 4), 1);
        assert_eq!(reflect(0, 4), 0);
        assert_eq!(reflect(3, 4), 3);
        assert_eq!(reflect(4, 4), 3);
        assert_eq!(reflect(5, 4), 2);
        for idx in -20..20 {
            let r = reflect(idx, 4);
            assert!(r < 4);
        }
        // Tiny signal: any pad stays valid.
        for idx in -9..9 {
            assert_eq!(reflect(idx, 1), 0);
        }
    }

    #[test]
    fn nonoverlap_identity_roundtrip() {
        let img = ramp(100, 70);
        let plan = plan_tiles(100, 70, 48, 1, false).unwrap();
        let tiles = extract_patches(&img, &plan).unwrap();
        let back = stitch_nonoverlap(&tiles, &plan).unwrap();
        assert_eq!(back, img);
    }

    #[test]
    fn overlap_identity_roundtrip() {
        for &(h, w) in &[(96usize, 96usize), (100, 70), (10, 10), (48, 31)] {
            let img = ramp(h, w);
            let plan = plan_tiles(h, w, 48, 1, true).unwrap();
            let tiles = extract_patches(&img, &plan).unwrap();
            let back = stitch_overlap_center(&tiles, &plan).unwrap();
            assert_eq!(back, img, "{h}x{w}");
        }
    }

    #[test]
    fn center_intervals_partition_output() {
        for &(d, patch, scale) in &[(910usize, 48usize, 2usize), (96, 48, 2), (10, 48, 3), (100, 8, 4)] {
            let plan = plan_tiles(d, d, patch, scale, true).unwrap();
            let iv = center_intervals(&plan.rows, patch, scale, d * scale);
            let mut cursor = 0;
            for &(s, e, off) in &iv {
                assert_eq!(s, cursor.min(s.max(cursor)));
                assert!(s >= cursor || e == s);
                if e > s {
                    assert_eq!(s, cursor, "gap or overlap before {s}");
                    cursor = e;
                }
                assert!(off + (e - s) <= patch * scale, "crop leaves the tile");
            }
            assert_eq!(cursor, d * scale, "intervals must cover the output");
        }
    }

    #[test]
    fn stitched_pixels_come_from_tile_interiors() {
        // Mark the outer quarter-border of every tile; none of it may
        // survive overlap stitching.
        let plan = plan_tiles(96, 96, 48, 1, true).unwrap();
        let q = 12; // patch/4
        let tiles: Vec<Tensor<f64>> = (0..plan.tile_count())
            .map(|_| {
                let mut t = Tensor::filled([1, 1, 48, 48], 1.0);
                for y in 0..48 {
                    for x in 0..48 {
                        if y < q || y >= 48 - q || x < q || x >= 48 - q {
                            t.set(0, 0, y, x, -1.0);
                        }
                    }
                }
                t
            })
            .collect();
        let out = stitch_overlap_center(&tiles, &plan).unwrap();
        assert!(out.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn scaled_roundtrip_with_nearest_upsample() {
        // x2 "SR" by pixel replication, then downsample the stitched output
        // and compare with the source: checks the scaled geometry end to end.
        let img = ramp(52, 36);
        for overlap in [false, true] {
            let plan = plan_tiles(52, 36, 16, 2, overlap).unwrap();
            let tiles = extract_patches(&img, &plan).unwrap();
            let up: Vec<Tensor<f64>> = tiles
                .iter()
                .map(|t| {
                    let mut u = Tensor::zeros([1, 1, 32, 32]);
                    for y in 0..32 {
                        for x in 0..32 {
                            u.set(0, 0, y, x, t.at(0, 0, y / 2, x / 2));
                        }
                    }
                    u
                })
                .collect();
            let out = if overlap {
                stitch_overlap_center(&up, &plan).unwrap()
            } else {
                stitch_nonoverlap(&up, &plan).unwrap()
            };
            assert_eq!(out.shape(), [1, 1, 104, 72]);
            for y in 0..104 {
                for x in 0..72 {
                    assert_eq!(out.at(0, 0, y, x), img.at(0, 0, y / 2, x / 2));
                }
            }
        }
    }

    #[test]
    fn mask_all_ones_when_k_covers() {
        for k in [96, 100, 200] {
            let m = make_mask::<f64>(96, k);
            assert!(m.data().iter().all(|&v| v == 1.0));
        }
    }

    #[test]
    fn mask_box_and_decay() {
        let n = 96;
        let k = 48;
        let m = make_mask::<f64>(n, k);
        let lo = (n - k) / 2;
        // interior box is exactly 1
        for y in lo..lo + k {
            for x in lo..lo + k {
                assert_eq!(m.at(0, 0, y, x), 1.0);
            }
        }
        // corner has the maximum Chebyshev distance d_max = lo
        let corner = m.at(0, 0, 0, 0);
        assert!((corner - (1.0 - lo as f64 / (lo as f64 + 1.0))).abs() < 1e-12);
        assert!(corner > 0.0);
        // symmetry under horizontal/vertical flips and transpose
        for y in 0..n {
            for x in 0..n {
                let v = m.at(0, 0, y, x);
                assert_eq!(v, m.at(0, 0, n - 1 - y, x));
                assert_eq!(v, m.at(0, 0, y, n - 1 - x));
                assert_eq!(v, m.at(0, 0, x, y));
            }
        }
        // monotone non-increasing along a row from center outwards
        let mid = n / 2;
        for x in mid..n - 1 {
            assert!(m.at(0, 0, mid, x) >= m.at(0, 0, mid, x + 1));
        }
    }

    #[test]
    fn mask_values_match_distance_formula() {
        let n = 20;
        let k = 8;
        let m = make_mask::<f64>(n, k);
        let lo = (n - k) / 2;
        let hi = lo + k;
        let dist = |i: usize| -> f64 {
            if i < lo {
                (lo - i) as f64
            } else if i >= hi {
                (i - (hi - 1)) as f64
            } else {
                0.0
            }
        };
        let d_max = dist(0).max(dist(n - 1));
        for y in 0..n {
            for x in 0..n {
                let d = dist(y).max(dist(x));
                assert!((m.at(0, 0, y, x) - (1.0 - d / (d_max + 1.0))).abs() < 1e-12);
            }
        }
    }

    proptest! {
        #[test]
        fn roundtrip_any_geometry(
            h in 1usize..140,
            w in 1usize..140,
            patch in prop::sample::select(vec![8usize, 16, 48]),
            overlap in any::<bool>(),
        ) {
            let img = ramp(h, w);
            let plan = plan_tiles(h, w, patch, 1, overlap).unwrap();
            let tiles = extract_patches(&img, &plan).unwrap();
            let back = if overlap {
                stitch_overlap_center(&tiles, &plan).unwrap()
            } else {
                stitch_nonoverlap(&tiles, &plan).unwrap()
            };
            prop_assert_eq!(back, img);
        }
    }
}
