//! Finite-difference verification of the full network gradient: builds
//! the small model in f64, differentiates both training losses through
//! every stage (dense blocks, non-local attention, gated residual,
//! upsampler), and compares against central differences.

use orbitsr::model::ModelConfig;
use orbitsr::trainer::{gradcheck_model, LossKind};

fn main() -> orbitsr::Result<()> {
    let cfg = ModelConfig::toy();
    println!(
        "config: {} blocks x {} layers, growth {}, base channels {} ({} parameters)",
        cfg.blocks,
        cfg.layers_per_block,
        cfg.growth,
        cfg.base_channels,
        orbitsr::model::param_count(&cfg)?
    );
    for loss in [LossKind::L1, LossKind::MaskPsnr] {
        let err = gradcheck_model(&cfg, loss, 1e-5, 3, 0)?;
        let verdict = if err < 1e-4 { "PASS" } else { "FAIL" };
        println!("{loss:?}: max relative error {err:.3e}  [{verdict}]");
    }
    Ok(())
}
