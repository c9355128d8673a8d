//! Command-line driver: one thin subcommand per pipeline stage.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

use crate::dataio::{degrade_pair, read_pgm, synth_dataset, write_pgm, GrayImage, SynthKind};
use crate::error::{Error, Result};
use crate::metrics::MetricsReport;
use crate::model::{Model, ModelConfig};
use crate::pipeline::{
    pipeline_csv_header, pipeline_csv_row, run_pipeline, score_constant, score_gradient_energy,
    SrMode, Verdict,
};
use crate::tensor::Tensor;
use crate::tiling::plan_tiles;
use crate::trainer::{
    ablate, ablation_csv, gradcheck_model, toggle_lattice, train_toy, LossKind, TrainConfig,
};

#[derive(Parser)]
#[command(
    name = "orbitsr",
    about = "On-board super-resolution with selective downlink",
    version
)]
struct Cli {
    /// Worker threads for tile processing.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModeArg {
    Whole,
    Nonoverlap,
    Overlap,
}

impl From<ModeArg> for SrMode {
    fn from(m: ModeArg) -> SrMode {
        match m {
            ModeArg::Whole => SrMode::Whole,
            ModeArg::Nonoverlap => SrMode::PatchNonOverlap,
            ModeArg::Overlap => SrMode::PatchOverlap,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum LossArg {
    L1,
    MaskPsnr,
}

impl From<LossArg> for LossKind {
    fn from(l: LossArg) -> LossKind {
        match l {
            LossArg::L1 => LossKind::L1,
            LossArg::MaskPsnr => LossKind::MaskPsnr,
        }
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Bicubically degrade a source PGM into an HR/LR training pair.
    Degrade {
        #[arg(long = "in")]
        input: PathBuf,
        /// SR scale: LR is the source downscaled by this factor.
        #[arg(long, default_value_t = 2)]
        scale: usize,
        #[arg(long)]
        out_hr: PathBuf,
        #[arg(long)]
        out_lr: PathBuf,
    },
    /// Super-resolve a PGM with saved weights.
    Sr {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        weights: PathBuf,
        #[arg(long, value_enum, default_value_t = ModeArg::Overlap)]
        mode: ModeArg,
        /// LR tile side for patch modes.
        #[arg(long, default_value_t = 48)]
        patch: usize,
        #[arg(long)]
        out: PathBuf,
        /// Average the 8 dihedral self-ensemble predictions (whole mode).
        #[arg(long)]
        ensemble: bool,
    },
    /// Quality metrics between a reference and a test PGM.
    Metrics {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        #[arg(long, default_value_t = 255.0)]
        imax: f64,
        /// Block size for the PSNR-B blocking grid.
        #[arg(long, default_value_t = 48)]
        block: usize,
        /// Write a CSV report here instead of printing key: value lines.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Print the tiling plan for an image geometry.
    Tile {
        #[arg(long)]
        h: usize,
        #[arg(long)]
        w: usize,
        #[arg(long, default_value_t = 48)]
        patch: usize,
        #[arg(long, default_value_t = 2)]
        scale: usize,
        #[arg(long)]
        overlap: bool,
        /// Also print every tile origin.
        #[arg(long)]
        print_plan: bool,
    },
    /// Finite-difference check of the full network gradient (f64).
    Gradcheck {
        #[arg(long, default_value = "toy")]
        config_preset: String,
        #[arg(long, default_value_t = 1e-5)]
        eps: f64,
        /// Sampled coordinates per parameter tensor.
        #[arg(long, default_value_t = 3)]
        samples: usize,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train the toy model on synthetic data and save weights.
    Train {
        /// `synth:craters`, `synth:ramps`, or `synth:checkers`.
        #[arg(long, default_value = "synth:craters")]
        dataset: String,
        #[arg(long, default_value_t = 8)]
        count: usize,
        #[arg(long, value_enum, default_value_t = LossArg::L1)]
        loss: LossArg,
        /// Mask center box side k (HR pixels, mask_psnr loss).
        #[arg(long, default_value_t = 24)]
        k: usize,
        #[arg(long, default_value_t = 200)]
        steps: usize,
        #[arg(long, default_value_t = 1e-3)]
        lr: f64,
        #[arg(long, default_value_t = 2)]
        batch: usize,
        /// LR crop side per training sample.
        #[arg(long, default_value_t = 16)]
        patch: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        weights_out: PathBuf,
        #[arg(long)]
        history_csv: Option<PathBuf>,
    },
    /// Train the CM/LRA/GFB toggle lattice and report final PSNRs.
    Ablate {
        /// Comma-separated toggles to vary; the rest stay enabled.
        #[arg(long, default_value = "cm,lra,gfb")]
        lattice: String,
        #[arg(long, default_value = "synth:craters")]
        dataset: String,
        #[arg(long, default_value_t = 6)]
        count: usize,
        #[arg(long, default_value_t = 50)]
        steps: usize,
        #[arg(long, default_value_t = 1e-3)]
        lr: f64,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Super-resolve, score, and decide transmit (exit 0) or discard
    /// (exit 2).
    Pipeline {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        weights: PathBuf,
        #[arg(long, value_enum, default_value_t = ModeArg::Overlap)]
        mode: ModeArg,
        #[arg(long, default_value_t = 48)]
        patch: usize,
        #[arg(long, default_value_t = 0.5)]
        threshold: f64,
        /// Force a constant score instead of gradient energy.
        #[arg(long)]
        score_const: Option<f64>,
        #[arg(long)]
        report: Option<PathBuf>,
    },
}

fn resolve_seed(flag: Option<u64>) -> u64 {
    flag.or_else(|| {
        std::env::var("ORBITSR_SEED")
            .ok()
            .and_then(|s| s.parse().ok())
    })
    .unwrap_or(0)
}

fn parse_dataset(spec: &str) -> Result<SynthKind> {
    match spec.split_once(':') {
        Some(("synth", kind)) => kind.parse(),
        _ => Err(Error::InvalidArgument(format!(
            "unknown dataset {spec:?}; expected synth:<craters|ramps|checkers>"
        ))),
    }
}

fn require_file(p: &Path) -> Result<()> {
    if !p.is_file() {
        return Err(Error::InvalidArgument(format!(
            "no such file: {}",
            p.display()
        )));
    }
    Ok(())
}

fn load_image_tensor(path: &Path) -> Result<(GrayImage, Tensor<f32>)> {
    require_file(path)?;
    let img = read_pgm(path)?;
    let t = img.to_tensor::<f32>();
    Ok((img, t))
}

fn write_text(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => std::fs::write(p, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn preset(name: &str) -> Result<ModelConfig> {
    match name {
        "toy" => Ok(ModelConfig::toy()),
        other => Err(Error::InvalidArgument(format!(
            "unknown config preset {other:?} (available: toy)"
        ))),
    }
}

/// Executes the parsed command; `Ok` carries the process exit code so the
/// pipeline verdict can reach shell scripts.
fn dispatch(cmd: Cmd) -> Result<i32> {
    match cmd {
        Cmd::Degrade {
            input,
            scale,
            out_hr,
            out_lr,
        } => {
            require_file(&input)?;
            let src = read_pgm(&input)?;
            let (hr, lr) = degrade_pair(&src, 1, scale)?;
            write_pgm(&hr, &out_hr)?;
            write_pgm(&lr, &out_lr)?;
            println!(
                "hr {}x{} -> {} ; lr {}x{} -> {}",
                hr.w,
                hr.h,
                out_hr.display(),
                lr.w,
                lr.h,
                out_lr.display()
            );
            Ok(0)
        }
        Cmd::Sr {
            input,
            weights,
            mode,
            patch,
            out,
            ensemble,
        } => {
            let (img, lr) = load_image_tensor(&input)?;
            require_file(&weights)?;
            let model = Model::load_weights(&weights)?;
            let mode = SrMode::from(mode);
            let sr = if ensemble {
                if mode != SrMode::Whole {
                    return Err(Error::InvalidArgument(
                        "--ensemble requires --mode whole".into(),
                    ));
                }
                model.self_ensemble_forward(&lr)?
            } else {
                let score = score_constant(1.0);
                run_pipeline(&lr, &model, mode, patch, &score, 0.0)?.0
            };
            let out_img = GrayImage::from_tensor(&sr, img.maxval)?;
            write_pgm(&out_img, &out)?;
            println!("sr {}x{} -> {}", out_img.w, out_img.h, out.display());
            Ok(0)
        }
        Cmd::Metrics {
            a,
            b,
            imax,
            block,
            csv,
        } => {
            require_file(&a)?;
            require_file(&b)?;
            let ia = read_pgm(&a)?;
            let ib = read_pgm(&b)?;
            // compare raw integer intensities against the given i_max
            let ta = Tensor::<f64>::from_vec(
                [1, 1, ia.h, ia.w],
                ia.samples.iter().map(|&s| s as f64).collect(),
            )?;
            let tb = Tensor::<f64>::from_vec(
                [1, 1, ib.h, ib.w],
                ib.samples.iter().map(|&s| s as f64).collect(),
            )?;
            let r = MetricsReport::compute(&ta, &tb, imax, block)?;
            match csv {
                Some(path) => {
                    let id = b.file_stem().and_then(|s| s.to_str()).unwrap_or("image");
                    let text = format!("{}\n{}\n", MetricsReport::csv_header(), r.csv_row(id));
                    std::fs::write(path, text)?;
                }
                None => {
                    println!("psnr: {}", r.psnr);
                    println!("psnrb: {}", r.psnrb);
                    println!("ssim: {}", r.ssim);
                    println!("mse: {}", r.mse);
                    println!("bef: {}", r.bef);
                }
            }
            Ok(0)
        }
        Cmd::Tile {
            h,
            w,
            patch,
            scale,
            overlap,
            print_plan,
        } => {
            let plan = plan_tiles(h, w, patch, scale, overlap)?;
            println!("tiles: {}", plan.tile_count());
            if print_plan {
                print!("{plan}");
            }
            Ok(0)
        }
        Cmd::Gradcheck {
            config_preset,
            eps,
            samples,
            seed,
        } => {
            let cfg = preset(&config_preset)?;
            let seed = resolve_seed(seed);
            let mut worst = 0.0f64;
            for loss in [LossKind::L1, LossKind::MaskPsnr] {
                let err = gradcheck_model(&cfg, loss, eps, samples, seed)?;
                println!("{loss:?}: max rel err {err:.3e}");
                worst = worst.max(err);
            }
            if worst < 1e-4 {
                println!("gradcheck: PASS");
                Ok(0)
            } else {
                Err(Error::InvalidArgument(format!(
                    "gradcheck failed: max rel err {worst:.3e} >= 1e-4"
                )))
            }
        }
        Cmd::Train {
            dataset,
            count,
            loss,
            k,
            steps,
            lr,
            batch,
            patch,
            seed,
            weights_out,
            history_csv,
        } => {
            let kind = parse_dataset(&dataset)?;
            let seed = resolve_seed(seed);
            let data = synth_dataset(kind, count, seed);
            let mut model = Model::<f32>::new(ModelConfig::toy(), seed)?;
            let cfg = TrainConfig {
                steps,
                lr,
                loss: loss.into(),
                mask_k: k,
                batch,
                patch,
                seed,
            };
            let history = train_toy(&mut model, &data, &cfg)?;
            model.save_weights(&weights_out)?;
            if let Some(path) = history_csv {
                std::fs::write(path, history.csv())?;
            }
            println!(
                "trained {steps} steps; final loss {:.6}; eval psnr {:.3} dB; weights -> {}",
                history.records.last().expect("steps >= 1").loss,
                history.final_psnr,
                weights_out.display()
            );
            Ok(0)
        }
        Cmd::Ablate {
            lattice,
            dataset,
            count,
            steps,
            lr,
            seed,
            csv,
        } => {
            let kind = parse_dataset(&dataset)?;
            let seed = resolve_seed(seed);
            let varied: Vec<&str> = lattice.split(',').filter(|s| !s.is_empty()).collect();
            for t in &varied {
                if !matches!(*t, "cm" | "lra" | "gfb") {
                    return Err(Error::InvalidArgument(format!(
                        "unknown toggle {t:?} (cm|lra|gfb)"
                    )));
                }
            }
            if varied.is_empty() {
                return Err(Error::InvalidArgument("empty --lattice".into()));
            }
            let configs: Vec<ModelConfig> = toggle_lattice(ModelConfig::toy())
                .into_iter()
                .filter(|c| {
                    (varied.contains(&"cm") || c.coupled_memory)
                        && (varied.contains(&"lra") || c.local_residual_attention)
                        && (varied.contains(&"gfb") || c.global_feature_blending)
                })
                .collect();
            let data = synth_dataset(kind, count, seed);
            let cfg = TrainConfig {
                steps,
                lr,
                seed,
                patch: 16,
                ..TrainConfig::default()
            };
            let rows = ablate(&configs, &data, &cfg)?;
            write_text(csv.as_deref(), &ablation_csv(&rows))?;
            Ok(0)
        }
        Cmd::Pipeline {
            input,
            weights,
            mode,
            patch,
            threshold,
            score_const,
            report,
        } => {
            let (_, lr) = load_image_tensor(&input)?;
            require_file(&weights)?;
            let model = Model::load_weights(&weights)?;
            let mode = SrMode::from(mode);
            let (_, decision) = match score_const {
                Some(c) => {
                    let score = score_constant(c);
                    run_pipeline(&lr, &model, mode, patch, &score, threshold)?
                }
                None => run_pipeline(&lr, &model, mode, patch, &score_gradient_energy, threshold)?,
            };
            let text = format!(
                "{}\n{}\n",
                pipeline_csv_header(),
                pipeline_csv_row(mode, &decision)
            );
            match report {
                Some(path) => std::fs::write(path, text)?,
                None => print!("{text}"),
            }
            println!("score {:.6} -> {}", decision.score, decision.verdict);
            Ok(match decision.verdict {
                Verdict::Transmit => 0,
                Verdict::Discard => 2,
            })
        }
    }
}

/// Entry point for the binary; returns the process exit code.
pub fn run() -> i32 {
    let cli = Cli::parse();
    if cli.jobs >= 1 {
        // ignore the error if a pool is already installed
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(cli.jobs)
            .build_global();
    }
    match dispatch(cli.cmd) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}
