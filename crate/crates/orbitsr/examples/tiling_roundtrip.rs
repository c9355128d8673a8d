//! Tiling geometry: plan tile grids for a 910x910 frame, show the tile
//! counts for both stitching modes, and verify that extract + stitch is
//! a bitwise identity when the "network" is a pass-through.

use orbitsr::tensor::Tensor;
use orbitsr::tiling::{extract_patches, plan_tiles, stitch_nonoverlap, stitch_overlap_center};

fn main() -> orbitsr::Result<()> {
    for overlap in [false, true] {
        let plan = plan_tiles(910, 910, 48, 2, overlap)?;
        let summary = plan.to_string();
        println!("{}", summary.lines().next().unwrap());
    }

    // Identity round-trip on an awkward prime-sized frame.
    let (h, w) = (197usize, 101usize);
    let img = Tensor::<f32>::from_vec(
        [1, 1, h, w],
        (0..h * w).map(|i| (i % 251) as f32 / 251.0).collect(),
    )?;
    for overlap in [false, true] {
        let plan = plan_tiles(h, w, 48, 1, overlap)?;
        let tiles = extract_patches(&img, &plan)?;
        let back = if overlap {
            stitch_overlap_center(&tiles, &plan)?
        } else {
            stitch_nonoverlap(&tiles, &plan)?
        };
        let bitwise = back.data() == img.data();
        println!(
            "{}x{} overlap={overlap}: {} tiles, round-trip bitwise identical: {bitwise}",
            h,
            w,
            plan.tile_count()
        );
        assert!(bitwise);
    }
    Ok(())
}
