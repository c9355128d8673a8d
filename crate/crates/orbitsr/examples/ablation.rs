//! Architecture ablation: train every combination of the three design
//! toggles (coupled memory, local residual attention, global feature
//! blending) with identical data and seed, and compare final quality.

use orbitsr::dataio::{synth_dataset, SynthKind};
use orbitsr::model::ModelConfig;
use orbitsr::trainer::{ablate, toggle_lattice, TrainConfig};

fn main() -> orbitsr::Result<()> {
    let configs = toggle_lattice(ModelConfig::toy());
    let data = synth_dataset(SynthKind::Craters, 4, 3);
    let cfg = TrainConfig {
        steps: 50,
        lr: 1e-3,
        patch: 16,
        batch: 2,
        seed: 3,
        ..TrainConfig::default()
    };
    let rows = ablate(&configs, &data, &cfg)?;
    let onoff = |b: bool| if b { "on " } else { "off" };
    println!("cm   lra  gfb  final loss  PSNR (dB)");
    for r in &rows {
        println!(
            "{}  {}  {}  {:>10.5}  {:>9.3}",
            onoff(r.config.coupled_memory),
            onoff(r.config.local_residual_attention),
            onoff(r.config.global_feature_blending),
            r.final_loss,
            r.final_psnr
        );
    }
    Ok(())
}
