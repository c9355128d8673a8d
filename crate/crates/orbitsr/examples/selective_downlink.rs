//! Selective downlink: super-resolve frames on board, score each result
//! by gradient energy (a stand-in for a usefulness classifier), and
//! decide transmit-vs-discard under a bandwidth threshold.

use orbitsr::dataio::{synth_dataset, SynthKind};
use orbitsr::model::{Model, ModelConfig};
use orbitsr::pipeline::{run_pipeline, score_gradient_energy, SrMode, Verdict};

fn main() -> orbitsr::Result<()> {
    let model = Model::<f32>::new(ModelConfig::toy(), 7)?;
    let threshold = 0.015;
    println!("threshold {threshold}: frames scoring below are discarded\n");
    println!("frame  kind      score    verdict   tiles  peak bytes");
    let mut kept = 0;
    let frames: Vec<_> = [SynthKind::Craters, SynthKind::Ramps, SynthKind::Checkers]
        .into_iter()
        .flat_map(|k| synth_dataset(k, 2, 42).into_iter().map(move |p| (k, p)))
        .collect();
    for (i, (kind, (_, lr))) in frames.iter().enumerate() {
        let lr_t = lr.to_tensor::<f32>();
        let (_, d) = run_pipeline(
            &lr_t,
            &model,
            SrMode::PatchOverlap,
            16,
            &score_gradient_energy,
            threshold,
        )?;
        if d.verdict == Verdict::Transmit {
            kept += 1;
        }
        println!(
            "{i:>5}  {:<9} {:.5}  {:<9} {:>5}  {:>10}",
            format!("{kind:?}"),
            d.score,
            d.verdict.to_string(),
            d.resources.patch_count,
            d.resources.peak_activation_bytes,
        );
    }
    println!("\ntransmitted {kept}/{} frames", frames.len());
    Ok(())
}
