//! Analytic resource model: compare peak activation memory and MAC count
//! for whole-frame inference against 48-pixel tiling at flight scale,
//! and show that the estimator matches an instrumented run exactly.

use orbitsr::model::{Model, ModelConfig, Upsampler};
use orbitsr::pipeline::{estimate_macs, estimate_peak_activation_bytes};
use orbitsr::tensor::Tensor;

fn mib(b: u64) -> f64 {
    b as f64 / (1024.0 * 1024.0)
}

fn main() -> orbitsr::Result<()> {
    let full = ModelConfig::full(2, Upsampler::Deconv);
    let whole = estimate_peak_activation_bytes(&full, 910, 910)?;
    let patch = estimate_peak_activation_bytes(&full, 48, 48)?;
    println!("flight config, f32 activations:");
    println!("  whole 910x910 frame : {:>10.1} MiB peak", mib(whole));
    println!(
        "  one 48x48 tile      : {:>10.1} MiB peak ({:.2}% of whole-frame)",
        mib(patch),
        100.0 * patch as f64 / whole as f64
    );
    println!(
        "  MACs, whole frame   : {:.3e}",
        estimate_macs(&full, 910, 910)? as f64
    );

    // The estimator is exact, not approximate: the same graph walk that
    // executes inference also prices it.
    let toy = ModelConfig::toy();
    let model = Model::<f32>::new(toy, 0)?;
    let x = Tensor::filled([1, 1, 24, 24], 0.5f32);
    let (_, stats) = model.forward_with_stats(&x)?;
    let est_bytes = estimate_peak_activation_bytes(&toy, 24, 24)?;
    let est_macs = estimate_macs(&toy, 24, 24)?;
    println!("\nsmall config on a 24x24 input:");
    println!(
        "  peak bytes: estimated {est_bytes}, measured {} (equal: {})",
        stats.peak_activation_bytes,
        est_bytes == stats.peak_activation_bytes
    );
    println!(
        "  MACs:       estimated {est_macs}, measured {} (equal: {})",
        stats.total_macs,
        est_macs == stats.total_macs
    );
    Ok(())
}
