//! Selective-transmission pipeline: super-resolve on board, score the
//! result, and decide whether the image is worth downlinking. Also the
//! analytic resource model (peak activation bytes, MACs) that justifies
//! patch-wise over whole-image inference.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::model::{build_forward_graph, Model, ModelConfig, ParamLayout};
use crate::tensor::Tensor;
use crate::tiling::{extract_patches, plan_tiles, stitch_nonoverlap, stitch_overlap_center};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SrMode {
    Whole,
    PatchNonOverlap,
    PatchOverlap,
}

impl std::str::FromStr for SrMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<SrMode> {
        match s {
            "whole" => Ok(SrMode::Whole),
            "patch-nonoverlap" => Ok(SrMode::PatchNonOverlap),
            "patch-overlap" => Ok(SrMode::PatchOverlap),
            other => Err(Error::InvalidArgument(format!(
                "unknown mode {other:?} (whole|patch-nonoverlap|patch-overlap)"
            ))),
        }
    }
}

impl std::fmt::Display for SrMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SrMode::Whole => "whole",
            SrMode::PatchNonOverlap => "patch-nonoverlap",
            SrMode::PatchOverlap => "patch-overlap",
        })
    }
}

/// Measured resource use of one pipeline run. In patch mode the peak is
/// over tiles (tiles execute one at a time per worker); MACs accumulate.
#[derive(Clone, Debug, Default)]
pub struct ResourceLedger {
    pub patch_count: usize,
    pub peak_activation_bytes: u64,
    pub total_macs: u64,
    /// Per-op-kind MAC breakdown, summed across tiles.
    pub stages: Vec<(&'static str, u64)>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Verdict {
    Transmit,
    Discard,
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Verdict::Transmit => "transmit",
            Verdict::Discard => "discard",
        })
    }
}

#[derive(Clone, Debug)]
pub struct Decision {
    pub verdict: Verdict,
    pub score: f64,
    pub resources: ResourceLedger,
}

/// Normalized mean gradient energy of the SR image: `e / (1 + e)` where
/// `e` is the mean squared forward difference. Deterministic placeholder
/// for an on-board usefulness classifier.
pub fn score_gradient_energy(sr: &Tensor<f32>) -> f64 {
    let [n, c, h, w] = sr.shape();
    let mut sum = 0.0f64;
    let mut count = 0usize;
    for bn in 0..n {
        for ch in 0..c {
            for y in 0..h {
                for x in 0..w {
                    if x + 1 < w {
                        let d = (sr.at(bn, ch, y, x + 1) - sr.at(bn, ch, y, x)) as f64;
                        sum += d * d;
                        count += 1;
                    }
                    if y + 1 < h {
                        let d = (sr.at(bn, ch, y + 1, x) - sr.at(bn, ch, y, x)) as f64;
                        sum += d * d;
                        count += 1;
                    }
                }
            }
        }
    }
    if count == 0 {
        return 0.0;
    }
    let e = sum / count as f64;
    e / (1.0 + e)
}

/// Always returns the given score; useful for testing the decision logic.
pub fn score_constant(c: f64) -> impl Fn(&Tensor<f32>) -> f64 {
    move |_| c
}

/// Runs SR in the requested mode, scores the result, and decides
/// transmit-vs-discard (`score >= threshold` transmits). The SR image is
/// returned even on the discard path so it can be inspected.
pub fn run_pipeline(
    lr: &Tensor<f32>,
    model: &Model<f32>,
    mode: SrMode,
    patch: usize,
    score_fn: &(dyn Fn(&Tensor<f32>) -> f64 + Sync),
    threshold: f64,
) -> Result<(Tensor<f32>, Decision)> {
    let [_, _, h, w] = lr.shape();
    let mut ledger = ResourceLedger::default();
    let sr = match mode {
        SrMode::Whole => {
            let (sr, stats) = model.forward_with_stats(lr)?;
            ledger.patch_count = 1;
            ledger.peak_activation_bytes = stats.peak_activation_bytes;
            ledger.total_macs = stats.total_macs;
            ledger.stages = stage_breakdown(&model.config, h, w, 1)?;
            sr
        }
        SrMode::PatchNonOverlap | SrMode::PatchOverlap => {
            let overlap = mode == SrMode::PatchOverlap;
            let plan = plan_tiles(h, w, patch, model.config.scale, overlap)?;
            let tiles = extract_patches(lr, &plan)?;
            // Order-preserving parallel map keeps stitching deterministic.
            let results: Vec<_> = tiles
                .par_iter()
                .map(|t| model.forward_with_stats(t))
                .collect::<Result<_>>()?;
            ledger.patch_count = plan.tile_count();
            ledger.stages = stage_breakdown(&model.config, patch, patch, plan.tile_count() as u64)?;
            let mut sr_tiles = Vec::with_capacity(results.len());
            for (sr_tile, stats) in results {
                ledger.peak_activation_bytes =
                    ledger.peak_activation_bytes.max(stats.peak_activation_bytes);
                ledger.total_macs += stats.total_macs;
                sr_tiles.push(sr_tile);
            }
            if overlap {
                stitch_overlap_center(&sr_tiles, &plan)?
            } else {
                stitch_nonoverlap(&sr_tiles, &plan)?
            }
        }
    };
    let score = score_fn(&sr);
    let verdict = if score >= threshold {
        Verdict::Transmit
    } else {
        Verdict::Discard
    };
    Ok((
        sr,
        Decision {
            verdict,
            score,
            resources: ledger,
        },
    ))
}

/// Analytic per-op-kind MAC totals for `tiles` forward passes on an
/// `h x w` input; exact because the estimator and the instrumented run
/// share the same graph (see `estimate_matches_instrumented_run_exactly`).
fn stage_breakdown(
    config: &ModelConfig,
    h: usize,
    w: usize,
    tiles: u64,
) -> Result<Vec<(&'static str, u64)>> {
    let (g, _) = symbolic_graph(config, h, w)?;
    Ok(g.macs_by_kind()
        .into_iter()
        .map(|(k, m)| (k, m * tiles))
        .collect())
}

fn symbolic_graph(config: &ModelConfig, h: usize, w: usize) -> Result<(Graph<f32>, crate::graph::NodeId)> {
    let layout = ParamLayout::from_config(config)?;
    let mut g = Graph::<f32>::new();
    let x = g.leaf_shape([1, config.in_channels, h, w]);
    let pids: Vec<_> = layout.shapes().iter().map(|&s| g.param_shape(s)).collect();
    let out = build_forward_graph(&mut g, config, &layout, &pids, x)?;
    Ok((g, out))
}

/// Analytic peak activation footprint of one forward pass on an
/// `h x w` input: walks the op graph in execution order with last-use
/// liveness and reports the maximum live-tensor byte total (f32 elements).
/// Parameters are excluded; the NLB's L x L attention matrices are
/// included and dominate whole-image mode.
pub fn estimate_peak_activation_bytes(config: &ModelConfig, h: usize, w: usize) -> Result<u64> {
    let (g, out) = symbolic_graph(config, h, w)?;
    Ok(g.peak_activation_bytes(out))
}

/// Analytic multiply-accumulate count of one forward pass.
pub fn estimate_macs(config: &ModelConfig, h: usize, w: usize) -> Result<u64> {
    let (g, out) = symbolic_graph(config, h, w)?;
    Ok(g.macs_for(out))
}

pub fn pipeline_csv_header() -> &'static str {
    "mode,patch_count,peak_bytes,macs,score,verdict"
}

pub fn pipeline_csv_row(mode: SrMode, d: &Decision) -> String {
    format!(
        "{},{},{},{},{:.6},{}",
        mode,
        d.resources.patch_count,
        d.resources.peak_activation_bytes,
        d.resources.total_macs,
        d.score,
        d.verdict
    )
}
