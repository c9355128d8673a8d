//! The residual dense non-local attention super-resolution network.
//!
//! The network is: shallow feature extraction (two 3x3 convs), a chain of
//! residual dense blocks gated by non-local attention, global feature
//! blending across all block outputs, a global residual attention stage,
//! an upsampler (transposed-conv or subpixel), and a final 3x3 conv.
//! Coupled memory (dense concatenation of the previous block's output into
//! every layer), the local attention gate, and global feature blending are
//! individually toggleable for ablation runs.

use std::io::{Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId, RunStats};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Upsampler {
    /// Transposed convolution, k=4/stride=2/pad=1 per x2 stage; x4 cascades
    /// two stages. No single-stage integer geometry exists for x3.
    Deconv,
    /// 3x3 conv to s^2 * base channels followed by one pixel shuffle.
    Subpixel,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelConfig {
    /// Number of residual dense attention blocks (P).
    pub blocks: usize,
    /// Conv layers per block (D).
    pub layers_per_block: usize,
    /// Growth rate: channels produced by each in-block conv (G).
    pub growth: usize,
    /// Base feature width for extraction/blending layers (G_b).
    pub base_channels: usize,
    pub scale: usize,
    pub upsampler: Upsampler,
    /// Coupled memory: previous block output feeds every in-block layer.
    pub coupled_memory: bool,
    /// Local residual attention: sigmoid non-local gate on each block.
    pub local_residual_attention: bool,
    /// Global feature blending of all block outputs before the residual.
    pub global_feature_blending: bool,
    pub in_channels: usize,
}

impl ModelConfig {
    /// Full-size configuration: P=16, D=6, G=32, G_b=64.
    pub fn full(scale: usize, upsampler: Upsampler) -> Self {
        ModelConfig {
            blocks: 16,
            layers_per_block: 6,
            growth: 32,
            base_channels: 64,
            scale,
            upsampler,
            coupled_memory: true,
            local_residual_attention: true,
            global_feature_blending: true,
            in_channels: 1,
        }
    }

    /// Small configuration for gradient checks and desk-scale training.
    pub fn toy() -> Self {
        ModelConfig {
            blocks: 2,
            layers_per_block: 2,
            growth: 4,
            base_channels: 8,
            scale: 2,
            upsampler: Upsampler::Deconv,
            coupled_memory: true,
            local_residual_attention: true,
            global_feature_blending: true,
            in_channels: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.blocks < 1
            || self.layers_per_block < 1
            || self.growth < 1
            || self.base_channels < 1
            || self.in_channels < 1
        {
            return Err(Error::InvalidConfig(
                "blocks, layers, growth, base channels, in_channels must all be >= 1".into(),
            ));
        }
        if !matches!(self.scale, 2 | 3 | 4) {
            return Err(Error::InvalidConfig(format!(
                "scale must be 2, 3 or 4, got {}",
                self.scale
            )));
        }
        if self.upsampler == Upsampler::Deconv && !matches!(self.scale, 2 | 4) {
            return Err(Error::InvalidConfig(
                "deconv upsampler supports scale 2 and 4 only".into(),
            ));
        }
        nlb_inter_channels(self.base_channels)?;
        Ok(())
    }
}

/// Non-local blocks halve the channel count; a single-channel tensor keeps
/// one channel, and any other odd width is rejected.
fn nlb_inter_channels(c: usize) -> Result<usize> {
    if c == 1 {
        Ok(1)
    } else if c % 2 != 0 {
        Err(Error::InvalidConfig(format!(
            "non-local block requires an even channel count, got {c}"
        )))
    } else {
        Ok(c / 2)
    }
}

/// A conv layer's kernel/bias slots in the parameter registry.
#[derive(Clone, Copy, Debug)]
pub struct ConvRef {
    pub w: usize,
    pub b: usize,
    pub pad: usize,
}

#[derive(Clone, Copy, Debug)]
struct NlbRef {
    theta: ConvRef,
    phi: ConvRef,
    g: ConvRef,
    out: ConvRef,
}

#[derive(Clone, Debug)]
struct BlockRef {
    stem: Option<ConvRef>,
    layers: Vec<ConvRef>,
    lfb: ConvRef,
    gate: Option<NlbRef>,
}

#[derive(Default)]
struct Registry {
    shapes: Vec<[usize; 4]>,
    fan_ins: Vec<usize>,
}

impl Registry {
    fn conv(&mut self, co: usize, ci: usize, k: usize, transposed: bool) -> ConvRef {
        let kernel = if transposed {
            [ci, co, k, k]
        } else {
            [co, ci, k, k]
        };
        self.shapes.push(kernel);
        self.fan_ins.push(ci * k * k);
        self.shapes.push([1, co, 1, 1]);
        self.fan_ins.push(0);
        ConvRef {
            w: self.shapes.len() - 2,
            b: self.shapes.len() - 1,
            pad: (k - 1) / 2,
        }
    }

    fn nlb(&mut self, c: usize) -> Result<NlbRef> {
        let inter = nlb_inter_channels(c)?;
        Ok(NlbRef {
            theta: self.conv(inter, c, 1, false),
            phi: self.conv(inter, c, 1, false),
            g: self.conv(inter, c, 1, false),
            out: self.conv(c, inter, 1, false),
        })
    }
}

/// Registry-ordered parameter shapes derived purely from the config.
#[derive(Clone, Debug)]
pub struct ParamLayout {
    shapes: Vec<[usize; 4]>,
    fan_ins: Vec<usize>,
    sfe1: ConvRef,
    sfe2: ConvRef,
    blocks: Vec<BlockRef>,
    gfb: Option<(ConvRef, ConvRef)>,
    gra_gate: NlbRef,
    gra_conv: ConvRef,
    upsampler: Vec<ConvRef>,
    out_conv: ConvRef,
}

impl ParamLayout {
    pub fn from_config(cfg: &ModelConfig) -> Result<ParamLayout> {
        cfg.validate()?;
        let gb = cfg.base_channels;
        let g = cfg.growth;
        let d = cfg.layers_per_block;
        let mut reg = Registry::default();
        let sfe1 = reg.conv(gb, cfg.in_channels, 3, false);
        let sfe2 = reg.conv(gb, gb, 3, false);
        let mut blocks = Vec::with_capacity(cfg.blocks);
        for _ in 0..cfg.blocks {
            let stem = if cfg.coupled_memory {
                None
            } else {
                Some(reg.conv(gb, gb, 3, false))
            };
            let layers = (0..d).map(|i| reg.conv(g, gb + i * g, 3, false)).collect();
            let lfb = reg.conv(gb, gb + d * g, 1, false);
            let gate = if cfg.local_residual_attention {
                Some(reg.nlb(gb)?)
            } else {
                None
            };
            blocks.push(BlockRef {
                stem,
                layers,
                lfb,
                gate,
            });
        }
        let gfb = if cfg.global_feature_blending {
            let fuse = reg.conv(gb, cfg.blocks * gb, 1, false);
            let refine = reg.conv(gb, gb, 3, false);
            Some((fuse, refine))
        } else {
            None
        };
        let gra_gate = reg.nlb(gb)?;
        let gra_conv = reg.conv(gb, gb, 3, false);
        let upsampler = match cfg.upsampler {
            Upsampler::Deconv => {
                let stages = if cfg.scale == 4 { 2 } else { 1 };
                (0..stages).map(|_| reg.conv(gb, gb, 4, true)).collect()
            }
            Upsampler::Subpixel => {
                vec![reg.conv(gb * cfg.scale * cfg.scale, gb, 3, false)]
            }
        };
        let out_conv = reg.conv(cfg.in_channels, gb, 3, false);
        let Registry { shapes, fan_ins } = reg;
        Ok(ParamLayout {
            shapes,
            fan_ins,
            sfe1,
            sfe2,
            blocks,
            gfb,
            gra_gate,
            gra_conv,
            upsampler,
            out_conv,
        })
    }

    pub fn shapes(&self) -> &[[usize; 4]] {
        &self.shapes
    }

    pub fn param_count(&self) -> usize {
        self.shapes.iter().map(|s| s.iter().product::<usize>()).sum()
    }
}

/// Total scalar parameter count for a configuration.
pub fn param_count(cfg: &ModelConfig) -> Result<usize> {
    Ok(ParamLayout::from_config(cfg)?.param_count())
}

pub struct Model<E: Scalar> {
    pub config: ModelConfig,
    layout: ParamLayout,
    pub params: Vec<Tensor<E>>,
}

impl<E: Scalar> Model<E> {
    /// Builds a model with He fan-in initialization, deterministically
    /// seeded. Biases start at zero.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Model<E>> {
        let layout = ParamLayout::from_config(&config)?;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let params = layout
            .shapes
            .iter()
            .zip(&layout.fan_ins)
            .map(|(&shape, &fan_in)| {
                if fan_in == 0 {
                    Tensor::zeros(shape)
                } else {
                    let std = (2.0 / fan_in as f64).sqrt();
                    let dist = Normal::new(0.0, std).expect("valid normal");
                    let len: usize = shape.iter().product();
                    let data = (0..len)
                        .map(|_| E::from_f64(dist.sample(&mut rng)))
                        .collect();
                    Tensor::from_vec(shape, data).expect("layout shape")
                }
            })
            .collect();
        Ok(Model {
            config,
            layout,
            params,
        })
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn param_count(&self) -> usize {
        self.layout.param_count()
    }

    /// Registers every parameter on a graph, in registry order.
    pub fn attach_params(&self, g: &mut Graph<E>) -> Vec<NodeId> {
        self.params.iter().map(|p| g.param(p.clone())).collect()
    }

    /// Records the forward graph from input node to the SR output node.
    pub fn build_forward(
        &self,
        g: &mut Graph<E>,
        pids: &[NodeId],
        x: NodeId,
    ) -> Result<NodeId> {
        build_forward_graph(g, &self.config, &self.layout, pids, x)
    }

    /// Runs the network on `(n, in_channels, h, w)` and returns the
    /// `(n, in_channels, h*scale, w*scale)` output.
    pub fn forward(&self, x: &Tensor<E>) -> Result<Tensor<E>> {
        Ok(self.forward_with_stats(x)?.0)
    }

    /// Forward pass that also reports measured peak activation bytes and
    /// total MACs for the run.
    pub fn forward_with_stats(&self, x: &Tensor<E>) -> Result<(Tensor<E>, RunStats)> {
        if x.channels() != self.config.in_channels {
            return Err(Error::ChannelMismatch {
                expected: self.config.in_channels,
                got: x.channels(),
            });
        }
        let mut g = Graph::new();
        let xid = g.leaf(x.clone());
        let pids = self.attach_params(&mut g);
        let out = self.build_forward(&mut g, &pids, xid)?;
        g.run_inference(out)
    }

    /// One block in isolation: `h_prev` must have `base_channels` channels.
    pub fn rdnlb_forward(&self, block: usize, h_prev: &Tensor<E>) -> Result<Tensor<E>> {
        if h_prev.channels() != self.config.base_channels {
            return Err(Error::ChannelMismatch {
                expected: self.config.base_channels,
                got: h_prev.channels(),
            });
        }
        let mut g = Graph::new();
        let xid = g.leaf(h_prev.clone());
        let pids = self.attach_params(&mut g);
        let out = build_block(&mut g, &self.layout.blocks[block], &pids, xid)?;
        Ok(g.run_inference(out)?.0)
    }

    /// The global-residual-stage non-local block applied to `x`, including
    /// its internal residual connection (no sigmoid).
    pub fn nonlocal_block(&self, x: &Tensor<E>) -> Result<Tensor<E>> {
        let mut g = Graph::new();
        let xid = g.leaf(x.clone());
        let pids = self.attach_params(&mut g);
        let out = build_nlb(&mut g, &self.layout.gra_gate, &pids, xid)?;
        Ok(g.run_inference(out)?.0)
    }

    /// Average of eight dihedral-transformed predictions, each mapped back
    /// to the original orientation before averaging.
    pub fn self_ensemble_forward(&self, x: &Tensor<E>) -> Result<Tensor<E>> {
        let mut acc: Option<Tensor<E>> = None;
        for t in 0..8u8 {
            let k = (t % 4) as usize;
            let flip = t >= 4;
            let xi = if flip { x.flip_w() } else { x.clone() };
            let xi = xi.rot90(k);
            let y = self.forward(&xi)?;
            let y = y.rot90((4 - k) % 4);
            let y = if flip { y.flip_w() } else { y };
            acc = Some(match acc {
                None => y,
                Some(a) => crate::tensor::ew_add(&a, &y)?,
            });
        }
        let eighth = E::from_f64(1.0 / 8.0);
        Ok(acc.expect("eight passes").map(|v| v * eighth))
    }
}

fn conv_node<E: Scalar>(
    g: &mut Graph<E>,
    pids: &[NodeId],
    c: &ConvRef,
    x: NodeId,
) -> Result<NodeId> {
    g.conv2d(x, pids[c.w], pids[c.b], c.pad, 1)
}

/// Embedded-Gaussian non-local block with channel reduction 2 and an
/// internal residual connection.
fn build_nlb<E: Scalar>(
    g: &mut Graph<E>,
    nlb: &NlbRef,
    pids: &[NodeId],
    x: NodeId,
) -> Result<NodeId> {
    let [n, _, h, w] = g.shape(x);
    let l = h * w;
    let theta = conv_node(g, pids, &nlb.theta, x)?;
    let inter = g.shape(theta)[1];
    let phi = conv_node(g, pids, &nlb.phi, x)?;
    let gx = conv_node(g, pids, &nlb.g, x)?;
    let theta_flat = g.reshape(theta, [n, 1, inter, l])?;
    let theta_t = g.transpose_mat(theta_flat)?;
    let phi_flat = g.reshape(phi, [n, 1, inter, l])?;
    let scores = g.matmul(theta_t, phi_flat)?;
    let attn = g.softmax_rows(scores);
    let g_flat = g.reshape(gx, [n, 1, inter, l])?;
    let g_t = g.transpose_mat(g_flat)?;
    let y = g.matmul(attn, g_t)?;
    let y_t = g.transpose_mat(y)?;
    let y_sp = g.reshape(y_t, [n, inter, h, w])?;
    let z = conv_node(g, pids, &nlb.out, y_sp)?;
    g.add(z, x)
}

fn build_block<E: Scalar>(
    g: &mut Graph<E>,
    block: &BlockRef,
    pids: &[NodeId],
    h_prev: NodeId,
) -> Result<NodeId> {
    // Coupled memory feeds h_prev itself into every concatenation; with it
    // ablated, a per-block conv stem stands in so channel arithmetic is
    // unchanged while the raw previous output stays decoupled.
    let base = match &block.stem {
        None => h_prev,
        Some(stem) => conv_node(g, pids, stem, h_prev)?,
    };
    let mut feats = vec![base];
    for layer in &block.layers {
        let cat = g.concat(&feats)?;
        let conv = conv_node(g, pids, layer, cat)?;
        feats.push(g.relu(conv));
    }
    let cat = g.concat(&feats)?;
    let h_lf = conv_node(g, pids, &block.lfb, cat)?;
    let h_lr = g.add(h_lf, h_prev)?;
    match &block.gate {
        Some(nlb) => {
            let attn = build_nlb(g, nlb, pids, h_prev)?;
            let gate = g.sigmoid(attn);
            g.mul(h_lr, gate)
        }
        None => Ok(h_lr),
    }
}

/// Records the full network graph; shared by real execution and symbolic
/// resource analysis.
pub fn build_forward_graph<E: Scalar>(
    g: &mut Graph<E>,
    cfg: &ModelConfig,
    layout: &ParamLayout,
    pids: &[NodeId],
    x: NodeId,
) -> Result<NodeId> {
    let h_m1 = conv_node(g, pids, &layout.sfe1, x)?;
    let h0 = conv_node(g, pids, &layout.sfe2, h_m1)?;
    let mut h_prev = h0;
    let mut block_outs = Vec::with_capacity(cfg.blocks);
    for block in &layout.blocks {
        h_prev = build_block(g, block, pids, h_prev)?;
        block_outs.push(h_prev);
    }
    let h_gfb = match &layout.gfb {
        Some((fuse, refine)) => {
            let cat = g.concat(&block_outs)?;
            let fused = conv_node(g, pids, fuse, cat)?;
            conv_node(g, pids, refine, fused)?
        }
        None => *block_outs.last().expect("at least one block"),
    };
    // Global residual attention: residual add first, gate from the shallow
    // features, then the 3x3 conv.
    let t = g.add(h_gfb, h_m1)?;
    let attn = build_nlb(g, &layout.gra_gate, pids, h_m1)?;
    let gate = g.sigmoid(attn);
    let gated = g.mul(t, gate)?;
    let h_dfb = conv_node(g, pids, &layout.gra_conv, gated)?;
    let mut up = h_dfb;
    match cfg.upsampler {
        Upsampler::Deconv => {
            for stage in &layout.upsampler {
                up = g.conv_transpose2d(up, pids[stage.w], pids[stage.b], 2, 1)?;
            }
        }
        Upsampler::Subpixel => {
            let expanded = conv_node(g, pids, &layout.upsampler[0], up)?;
            up = g.pixel_shuffle(expanded, cfg.scale)?;
        }
    }
    conv_node(g, pids, &layout.out_conv, up)
}

const MAGIC: &[u8; 7] = b"RDNLA1\0";

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

fn upsampler_code(u: Upsampler) -> u32 {
    match u {
        Upsampler::Deconv => 0,
        Upsampler::Subpixel => 1,
    }
}

impl Model<f32> {
    /// Writes magic, config words, the little-endian f32 payload in
    /// registry order, and a 64-bit FNV-1a payload checksum.
    pub fn save_weights(&self, path: &Path) -> Result<()> {
        let mut payload = Vec::with_capacity(self.param_count() * 4);
        for p in &self.params {
            for &v in p.data() {
                payload.extend_from_slice(&v.to_le_bytes());
            }
        }
        let cfg = &self.config;
        let toggles = (cfg.coupled_memory as u32)
            | ((cfg.local_residual_attention as u32) << 1)
            | ((cfg.global_feature_blending as u32) << 2);
        let words: [u32; 8] = [
            cfg.blocks as u32,
            cfg.layers_per_block as u32,
            cfg.growth as u32,
            cfg.base_channels as u32,
            cfg.scale as u32,
            upsampler_code(cfg.upsampler),
            toggles,
            cfg.in_channels as u32,
        ];
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        f.write_all(MAGIC)?;
        for w in words {
            f.write_all(&w.to_le_bytes())?;
        }
        f.write_all(&payload)?;
        f.write_all(&fnv1a64(&payload).to_le_bytes())?;
        Ok(())
    }

    pub fn load_weights(path: &Path) -> Result<Model<f32>> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        if bytes.len() < MAGIC.len() + 32 + 8 {
            return Err(Error::WeightFormat("file truncated: header incomplete".into()));
        }
        if &bytes[..7] != MAGIC {
            return Err(Error::WeightFormat("bad magic bytes".into()));
        }
        let mut words = [0u32; 8];
        for (i, w) in words.iter_mut().enumerate() {
            let off = 7 + i * 4;
            *w = u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap());
        }
        let upsampler = match words[5] {
            0 => Upsampler::Deconv,
            1 => Upsampler::Subpixel,
            other => {
                return Err(Error::WeightFormat(format!(
                    "unknown upsampler code {other}"
                )))
            }
        };
        let config = ModelConfig {
            blocks: words[0] as usize,
            layers_per_block: words[1] as usize,
            growth: words[2] as usize,
            base_channels: words[3] as usize,
            scale: words[4] as usize,
            upsampler,
            coupled_memory: words[6] & 1 != 0,
            local_residual_attention: words[6] & 2 != 0,
            global_feature_blending: words[6] & 4 != 0,
            in_channels: words[7] as usize,
        };
        let layout = ParamLayout::from_config(&config)
            .map_err(|e| Error::ConfigMismatch(format!("invalid stored config: {e}")))?;
        let expected_payload = layout.param_count() * 4;
        let body = &bytes[7 + 32..];
        if body.len() != expected_payload + 8 {
            return Err(Error::ConfigMismatch(format!(
                "payload length {} does not match config parameter count {} ({} bytes expected)",
                body.len().saturating_sub(8),
                layout.param_count(),
                expected_payload
            )));
        }
        let (payload, check) = body.split_at(expected_payload);
        let stored = u64::from_le_bytes(check.try_into().unwrap());
        if stored != fnv1a64(payload) {
            return Err(Error::WeightFormat("payload checksum mismatch".into()));
        }
        let mut params = Vec::with_capacity(layout.shapes.len());
        let mut off = 0;
        for &shape in &layout.shapes {
            let len: usize = shape.iter().product();
            let data = (0..len)
                .map(|i| {
                    let o = off + i * 4;
                    f32::from_le_bytes(payload[o..o + 4].try_into().unwrap())
                })
                .collect();
            off += len * 4;
            params.push(Tensor::from_vec(shape, data)?);
        }
        Ok(Model {
            config,
            layout,
            params,
        })
    }

    /// Loads weights and rejects files whose stored config differs.
    pub fn load_weights_expecting(path: &Path, expected: &ModelConfig) -> Result<Model<f32>> {
        let m = Self::load_weights(path)?;
        if m.config != *expected {
            return Err(Error::ConfigMismatch(format!(
                "stored config {:?} differs from expected {:?}",
                m.config, expected
            )));
        }
        Ok(m)
    }
}
