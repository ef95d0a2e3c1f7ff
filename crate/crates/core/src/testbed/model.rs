//! The multi-resolution encoder: forward pass, losses and backprop.
//!
//! Blocks run at descending then ascending resolution levels. Between
//! levels a downsample module (window average + affine) or an upsample
//! module (repeat + affine) changes the frame rate; each decoder level gets
//! the matching encoder output back through a skip connection.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::config::{ModelConfig, ResidualMode};
use super::ops::{self, AttentionCache, AttentionGrads, AttentionWeights, LayerNormCache};
use super::params::{ParamId, Params};
use crate::error::{Error, Result};
use crate::featio::FeatureDump;
use crate::scalar::Real;

/// Discrete target units at the base frame rate.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TargetStream {
    pub units: Vec<usize>,
    pub period_ms: u32,
}

impl TargetStream {
    pub fn new(units: Vec<usize>, period_ms: u32) -> Self {
        Self { units, period_ms }
    }

    /// Every `stride`-th unit, starting at the first.
    pub fn subsample(&self, stride: usize) -> Self {
        Self {
            units: self.units.iter().copied().step_by(stride).collect(),
            period_ms: self.period_ms * stride as u32,
        }
    }
}

/// Span masking: each frame starts a span of `span` frames with
/// probability `prob`. Errors when nothing ends up masked.
pub fn span_mask(len: usize, prob: f64, span: usize, seed: u64) -> Result<Vec<bool>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mask = vec![false; len];
    for i in 0..len {
        if rng.random::<f64>() < prob {
            for m in &mut mask[i..(i + span).min(len)] {
                *m = true;
            }
        }
    }
    if mask.iter().any(|&m| m) {
        Ok(mask)
    } else {
        Err(Error::NoMaskedFrames)
    }
}

#[derive(Debug, Clone)]
pub struct LayerOutput<T: Real> {
    pub layer_id: String,
    pub frame_period_ms: u32,
    pub data: DMatrix<T>,
}

#[derive(Debug, Clone)]
pub struct ForwardTrace<T: Real> {
    /// In execution order: `T0`, transformer layers `T1..`, and the
    /// sampling-module outputs `D{l}` / `U{l}` where they occur.
    pub layers: Vec<LayerOutput<T>>,
    /// `T x C`
    pub main_logits: DMatrix<T>,
    /// One per lower level when the auxiliary loss is on, coarsest last.
    pub aux_logits: Vec<DMatrix<T>>,
    pub mask: Vec<bool>,
}

impl<T: Real> ForwardTrace<T> {
    pub fn layer(&self, id: &str) -> Option<&LayerOutput<T>> {
        self.layers.iter().find(|l| l.layer_id == id)
    }

    pub fn layer_ids(&self) -> Vec<&str> {
        self.layers.iter().map(|l| l.layer_id.as_str()).collect()
    }

    pub fn to_dumps(&self) -> Result<Vec<FeatureDump>> {
        self.layers
            .iter()
            .map(|l| {
                FeatureDump::new(
                    l.layer_id.clone(),
                    l.frame_period_ms,
                    l.data.map(|v| v.to_f64_lossy()),
                )
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossBreakdown<T: Real> {
    pub main: T,
    /// One per lower level, coarsest last; empty when the auxiliary loss is off.
    pub aux: Vec<T>,
    pub total: T,
}

#[derive(Debug, Clone, Copy)]
struct LinearIds {
    w: ParamId,
    b: ParamId,
}

#[derive(Debug, Clone, Copy)]
struct LayerIds {
    ln1: LinearIds,
    wq: ParamId,
    bq: ParamId,
    wk: ParamId,
    wv: ParamId,
    bv: ParamId,
    wo: ParamId,
    bo: ParamId,
    ln2: LinearIds,
    ff1: LinearIds,
    ff2: LinearIds,
}

#[derive(Debug, Clone)]
struct Layout {
    input: LinearIds,
    mask_emb: ParamId,
    blocks: Vec<Vec<LayerIds>>,
    down: Vec<LinearIds>,
    up: Vec<LinearIds>,
    /// Norm and projection per lower level, indexed by level - 1.
    aux: Vec<(LinearIds, LinearIds)>,
    final_ln: LinearIds,
    head: LinearIds,
}

#[derive(Debug, Clone)]
pub struct Model<T: Real = f64> {
    config: ModelConfig,
    params: Params<T>,
    layout: Layout,
}

struct Init {
    rng: ChaCha8Rng,
}

impl Init {
    fn normal<T: Real>(&mut self, rows: usize, cols: usize, std: f64) -> DMatrix<T> {
        DMatrix::from_fn(rows, cols, |_, _| {
            let z: f64 = StandardNormal.sample(&mut self.rng);
            T::lit(std * z)
        })
    }
}

fn linear_params<T: Real>(p: &mut Params<T>, init: &mut Init, name: &str, fan_in: usize, fan_out: usize) -> LinearIds {
    let w = p.push(format!("{name}.w"), init.normal(fan_in, fan_out, 1.0 / (fan_in as f64).sqrt()));
    let b = p.push(format!("{name}.b"), DMatrix::zeros(1, fan_out));
    LinearIds { w, b }
}

fn norm_params<T: Real>(p: &mut Params<T>, name: &str, dim: usize) -> LinearIds {
    let w = p.push(format!("{name}.g"), DMatrix::from_element(1, dim, T::one()));
    let b = p.push(format!("{name}.b"), DMatrix::zeros(1, dim));
    LinearIds { w, b }
}

/// Near-identity affine for the sampling modules.
fn sampling_params<T: Real>(p: &mut Params<T>, init: &mut Init, name: &str, dim: usize) -> LinearIds {
    let noise: DMatrix<T> = init.normal(dim, dim, 0.1 / (dim as f64).sqrt());
    let w = p.push(format!("{name}.w"), DMatrix::identity(dim, dim) + noise);
    let b = p.push(format!("{name}.b"), DMatrix::zeros(1, dim));
    LinearIds { w, b }
}

struct LayerCache<T: Real> {
    ln1: LayerNormCache<T>,
    attn: AttentionCache<T>,
    ln2: LayerNormCache<T>,
    z2: DMatrix<T>,
    pre: DMatrix<T>,
    act: DMatrix<T>,
}

enum Step<T: Real> {
    Layer { block: usize, index: usize, cache: Box<LayerCache<T>> },
    Down { level: usize, averaged: DMatrix<T>, input_len: usize },
    Up { level: usize, repeated: DMatrix<T>, input_len: usize },
    SaveSkip(usize),
    AddSkip(usize),
    Aux { level: usize, ln: LayerNormCache<T>, normed: DMatrix<T> },
}

struct Tape<T: Real> {
    frames: DMatrix<T>,
    mask: Vec<bool>,
    steps: Vec<Step<T>>,
    final_ln: LayerNormCache<T>,
    normed: DMatrix<T>,
}

impl<T: Real> Model<T> {
    /// Fresh parameters drawn from `config.seed`.
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut init = Init {
            rng: ChaCha8Rng::seed_from_u64(config.seed),
        };
        let mut p = Params::default();
        let d = config.dim;
        let input = linear_params(&mut p, &mut init, "input", config.input_dim, d);
        let mask_emb = p.push("mask_emb", init.normal(1, d, 1.0));
        let mut blocks = Vec::new();
        let mut n = 0;
        for (b, &count) in config.layers_per_encoder.iter().enumerate() {
            let mut layers = Vec::new();
            for _ in 0..count {
                n += 1;
                let name = format!("block{b}.T{n}");
                let ln1 = norm_params(&mut p, &format!("{name}.ln1"), d);
                let q = linear_params(&mut p, &mut init, &format!("{name}.attn.q"), d, d);
                let k = p.push(format!("{name}.attn.k.w"), init.normal(d, d, 1.0 / (d as f64).sqrt()));
                let v = linear_params(&mut p, &mut init, &format!("{name}.attn.v"), d, d);
                let o = linear_params(&mut p, &mut init, &format!("{name}.attn.o"), d, d);
                let ln2 = norm_params(&mut p, &format!("{name}.ln2"), d);
                let ff1 = linear_params(&mut p, &mut init, &format!("{name}.ff1"), d, config.ffn_dim);
                let ff2 = linear_params(&mut p, &mut init, &format!("{name}.ff2"), config.ffn_dim, d);
                layers.push(LayerIds {
                    ln1,
                    wq: q.w,
                    bq: q.b,
                    wk: k,
                    wv: v.w,
                    bv: v.b,
                    wo: o.w,
                    bo: o.b,
                    ln2,
                    ff1,
                    ff2,
                });
            }
            blocks.push(layers);
        }
        let levels = config.levels();
        let down = (0..levels - 1)
            .map(|l| sampling_params(&mut p, &mut init, &format!("down{l}"), d))
            .collect();
        let up = (0..levels - 1)
            .map(|l| sampling_params(&mut p, &mut init, &format!("up{l}"), d))
            .collect();
        let aux = if config.aux_loss_enabled {
            (1..levels)
                .map(|l| {
                    let norm = norm_params(&mut p, &format!("aux{l}.ln"), d);
                    (norm, linear_params(&mut p, &mut init, &format!("aux{l}.proj"), d, config.num_classes))
                })
                .collect()
        } else {
            Vec::new()
        };
        let final_ln = norm_params(&mut p, "final_ln", d);
        let head = linear_params(&mut p, &mut init, "head", d, config.num_classes);
        Ok(Self {
            config,
            params: p,
            layout: Layout {
                input,
                mask_emb,
                blocks,
                down,
                up,
                aux,
                final_ln,
                head,
            },
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &Params<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut Params<T> {
        &mut self.params
    }

    /// Same architecture in another precision.
    pub fn cast<U: Real>(&self) -> Model<U> {
        Model {
            config: self.config.clone(),
            params: self.params.cast(),
            layout: self.layout.clone(),
        }
    }

    /// Copy every tensor whose name and shape match one in `other`.
    /// Returns how many were copied.
    pub fn copy_shared_from(&mut self, other: &Model<T>) -> usize {
        let mut copied = 0;
        for (name, src) in other.params.iter() {
            if let Some(id) = self.params.id(name) {
                let dst = &mut self.params.tensors_mut()[id.0];
                if dst.shape() == src.shape() {
                    dst.copy_from(src);
                    copied += 1;
                }
            }
        }
        copied
    }

    /// Sampling affines set to the identity (pure average / repeat).
    pub fn with_identity_sampling(mut self) -> Self {
        let d = self.config.dim;
        for ids in self.layout.down.iter().chain(&self.layout.up) {
            self.params.tensors_mut()[ids.w.0] = DMatrix::identity(d, d);
            self.params.tensors_mut()[ids.b.0] = DMatrix::zeros(1, d);
        }
        self
    }

    /// Zero every output projection of decoder block `block`, turning its
    /// layers into identity maps.
    pub fn zero_block_outputs(&mut self, block: usize) {
        for ids in &self.layout.blocks[block] {
            for id in [ids.wo, ids.bo, ids.ff2.w, ids.ff2.b] {
                self.params.tensors_mut()[id.0].fill(T::zero());
            }
        }
    }

    /// Names of the parameters in group `prefix` (e.g. `"down0"`, `"aux1"`).
    pub fn param_names_with_prefix(&self, prefix: &str) -> Vec<&str> {
        self.params
            .names()
            .iter()
            .filter(|n| n.starts_with(prefix))
            .map(String::as_str)
            .collect()
    }

    fn p(&self, id: ParamId) -> &DMatrix<T> {
        &self.params.tensors()[id.0]
    }

    fn check_inputs(&self, frames: &DMatrix<T>, mask: &[bool]) -> Result<()> {
        if frames.nrows() == 0 {
            return Err(Error::Shape("no input frames".into()));
        }
        if frames.ncols() != self.config.input_dim {
            return Err(Error::Shape(format!(
                "frames have {} features, config expects {}",
                frames.ncols(),
                self.config.input_dim
            )));
        }
        if mask.len() != frames.nrows() {
            return Err(Error::Shape(format!("mask has {} entries for {} frames", mask.len(), frames.nrows())));
        }
        if frames.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("input frames".into()));
        }
        Ok(())
    }

    fn layer_forward(&self, ids: &LayerIds, x: &DMatrix<T>) -> (DMatrix<T>, LayerCache<T>) {
        let (z1, ln1) = ops::layer_norm(x, self.p(ids.ln1.w), self.p(ids.ln1.b));
        let w = AttentionWeights {
            wq: self.p(ids.wq),
            bq: self.p(ids.bq),
            wk: self.p(ids.wk),
            wv: self.p(ids.wv),
            bv: self.p(ids.bv),
            wo: self.p(ids.wo),
            bo: self.p(ids.bo),
        };
        let (att, attn) = ops::attention(&z1, &w, self.config.heads);
        let h = x + att;
        let (z2, ln2) = ops::layer_norm(&h, self.p(ids.ln2.w), self.p(ids.ln2.b));
        let pre = ops::linear(&z2, self.p(ids.ff1.w), self.p(ids.ff1.b));
        let act = pre.map(ops::gelu);
        let y = h + ops::linear(&act, self.p(ids.ff2.w), self.p(ids.ff2.b));
        (
            y,
            LayerCache {
                ln1,
                attn,
                ln2,
                z2,
                pre,
                act,
            },
        )
    }

    fn run(&self, frames: &DMatrix<T>, mask: &[bool]) -> Result<(ForwardTrace<T>, Tape<T>)> {
        self.check_inputs(frames, mask)?;
        let cfg = &self.config;
        let lay = &self.layout;
        let t = frames.nrows();
        let levels = cfg.levels();
        let mut outputs = Vec::new();
        let mut steps = Vec::new();

        let mut x = ops::linear(frames, self.p(lay.input.w), self.p(lay.input.b));
        for (r, &m) in mask.iter().enumerate() {
            if m {
                x.row_mut(r).copy_from(self.p(lay.mask_emb));
            }
        }
        x += ops::sinusoidal_positions::<T>(t, cfg.dim);
        outputs.push(LayerOutput {
            layer_id: "T0".into(),
            frame_period_ms: cfg.period_ms(0),
            data: x.clone(),
        });

        let mut skips: Vec<Option<DMatrix<T>>> = vec![None; levels.saturating_sub(1)];
        let mut aux_logits = Vec::new();
        let mut n = 0;
        for (b, block) in lay.blocks.iter().enumerate() {
            let level = cfg.block_level(b);
            let period = cfg.period_ms(level);
            let decoder = b >= levels;
            if decoder {
                let len = cfg.length_at(t, level);
                let input_len = x.nrows();
                let repeated = ops::repeat_frames(&x, cfg.ratio(level), len)?;
                let ids = lay.up[level];
                x = ops::linear(&repeated, self.p(ids.w), self.p(ids.b));
                outputs.push(LayerOutput {
                    layer_id: format!("U{level}"),
                    frame_period_ms: period,
                    data: x.clone(),
                });
                steps.push(Step::Up {
                    level,
                    repeated,
                    input_len,
                });
                if cfg.residual_mode == ResidualMode::PreDecoder {
                    x += skips[level].as_ref().expect("encoder output saved");
                    steps.push(Step::AddSkip(level));
                }
            }
            for (i, ids) in block.iter().enumerate() {
                n += 1;
                let (y, cache) = self.layer_forward(ids, &x);
                x = y;
                steps.push(Step::Layer {
                    block: b,
                    index: i,
                    cache: Box::new(cache),
                });
                let last = i + 1 == block.len();
                if last && decoder && cfg.residual_mode == ResidualMode::PostDecoder {
                    x += skips[level].as_ref().expect("encoder output saved");
                    steps.push(Step::AddSkip(level));
                }
                outputs.push(LayerOutput {
                    layer_id: format!("T{n}"),
                    frame_period_ms: period,
                    data: x.clone(),
                });
            }
            if cfg.aux_loss_enabled && level >= 1 && b + 1 >= levels {
                let (norm, proj) = lay.aux[level - 1];
                let (normed, ln) = ops::layer_norm(&x, self.p(norm.w), self.p(norm.b));
                aux_logits.push((level, ops::linear(&normed, self.p(proj.w), self.p(proj.b))));
                steps.push(Step::Aux { level, ln, normed });
            }
            if b + 1 < levels {
                skips[level] = Some(x.clone());
                steps.push(Step::SaveSkip(level));
                let input_len = x.nrows();
                let averaged = ops::window_average(&x, cfg.ratio(level))?;
                let ids = lay.down[level];
                x = ops::linear(&averaged, self.p(ids.w), self.p(ids.b));
                outputs.push(LayerOutput {
                    layer_id: format!("D{level}"),
                    frame_period_ms: cfg.period_ms(level + 1),
                    data: x.clone(),
                });
                steps.push(Step::Down {
                    level,
                    averaged,
                    input_len,
                });
            }
        }
        let (normed, final_ln) = ops::layer_norm(&x, self.p(lay.final_ln.w), self.p(lay.final_ln.b));
        let main_logits = ops::linear(&normed, self.p(lay.head.w), self.p(lay.head.b));
        // coarsest level last
        aux_logits.sort_by_key(|(level, _)| *level);
        let trace = ForwardTrace {
            layers: outputs,
            main_logits,
            aux_logits: aux_logits.into_iter().map(|(_, l)| l).collect(),
            mask: mask.to_vec(),
        };
        if trace.layers.iter().any(|l| l.data.iter().any(|v| !v.is_finite())) {
            return Err(Error::NonFinite("layer output".into()));
        }
        let tape = Tape {
            frames: frames.clone(),
            mask: mask.to_vec(),
            steps,
            final_ln,
            normed,
        };
        Ok((trace, tape))
    }

    /// Forward pass with the given mask (`true` = replaced by the mask embedding).
    pub fn forward(&self, frames: &DMatrix<T>, mask: &[bool]) -> Result<ForwardTrace<T>> {
        Ok(self.run(frames, mask)?.0)
    }

    /// Forward pass without masking, as used for analysis.
    pub fn forward_unmasked(&self, frames: &DMatrix<T>) -> Result<ForwardTrace<T>> {
        self.forward(frames, &vec![false; frames.nrows()])
    }

    pub fn mask_for(&self, len: usize, mask_seed: u64) -> Result<Vec<bool>> {
        span_mask(len, self.config.mask_prob, self.config.mask_span, mask_seed)
    }

    fn check_targets(&self, targets: &TargetStream, len: usize) -> Result<()> {
        if targets.units.len() != len {
            return Err(Error::Shape(format!("{} targets for {len} frames", targets.units.len())));
        }
        if let Some(u) = targets.units.iter().find(|&&u| u >= self.config.num_classes) {
            return Err(Error::Invalid(format!(
                "target unit {u} outside [0, {})",
                self.config.num_classes
            )));
        }
        Ok(())
    }

    /// Losses plus their gradients with respect to the main and aux logits.
    fn losses(
        &self,
        trace: &ForwardTrace<T>,
        targets: &TargetStream,
    ) -> Result<(LossBreakdown<T>, DMatrix<T>, Vec<DMatrix<T>>)> {
        let mask = &trace.mask;
        let (main, dmain) =
            ops::masked_cross_entropy(&trace.main_logits, &targets.units, mask).ok_or(Error::NoMaskedFrames)?;
        let weight = T::lit(self.config.aux_loss_weight);
        let mut aux = Vec::new();
        let mut daux = Vec::new();
        for (i, logits) in trace.aux_logits.iter().enumerate() {
            let stride = self.config.cumulative_ratio(i + 1);
            let units: Vec<usize> = targets.units.iter().copied().step_by(stride).collect();
            let low_mask: Vec<bool> = mask.iter().copied().step_by(stride).collect();
            match ops::masked_cross_entropy(logits, &units, &low_mask) {
                Some((l, g)) => {
                    aux.push(l);
                    daux.push(g * weight);
                }
                None => {
                    aux.push(T::zero());
                    daux.push(DMatrix::zeros(logits.nrows(), logits.ncols()));
                }
            }
        }
        let total = aux.iter().fold(main, |acc, &a| acc + weight * a);
        Ok((LossBreakdown { main, aux, total }, dmain, daux))
    }

    pub fn loss(&self, frames: &DMatrix<T>, targets: &TargetStream, mask: &[bool]) -> Result<LossBreakdown<T>> {
        self.check_targets(targets, frames.nrows())?;
        let trace = self.forward(frames, mask)?;
        Ok(self.losses(&trace, targets)?.0)
    }

    /// Forward with a mask drawn from `mask_seed`, returning trace and losses.
    pub fn forward_with_seed(
        &self,
        frames: &DMatrix<T>,
        targets: &TargetStream,
        mask_seed: u64,
    ) -> Result<(ForwardTrace<T>, LossBreakdown<T>)> {
        self.check_targets(targets, frames.nrows())?;
        let mask = self.mask_for(frames.nrows(), mask_seed)?;
        let trace = self.forward(frames, &mask)?;
        let losses = self.losses(&trace, targets)?.0;
        Ok((trace, losses))
    }

    /// Total loss and its gradient with respect to every parameter.
    pub fn loss_and_grad(
        &self,
        frames: &DMatrix<T>,
        targets: &TargetStream,
        mask: &[bool],
    ) -> Result<(LossBreakdown<T>, Params<T>)> {
        self.check_targets(targets, frames.nrows())?;
        let (trace, tape) = self.run(frames, mask)?;
        let (losses, dmain, daux) = self.losses(&trace, targets)?;
        let grads = self.backward(tape, &dmain, daux);
        if !grads.all_finite() {
            return Err(Error::NonFinite("gradient".into()));
        }
        Ok((losses, grads))
    }

    fn backward(&self, tape: Tape<T>, dmain: &DMatrix<T>, daux: Vec<DMatrix<T>>) -> Params<T> {
        let lay = &self.layout;
        let cfg = &self.config;
        let mut grads = self.params.zeros_like();
        let g = grads.tensors_mut();

        let [gw, gb] = g.get_disjoint_mut([lay.head.w.0, lay.head.b.0]).expect("distinct ids");
        let dnormed = ops::linear_backward(&tape.normed, self.p(lay.head.w), dmain, gw, gb);
        let [gg, gb] = g.get_disjoint_mut([lay.final_ln.w.0, lay.final_ln.b.0]).expect("distinct ids");
        let mut dx = ops::layer_norm_backward(&tape.final_ln, self.p(lay.final_ln.w), &dnormed, gg, gb);

        let mut daux: Vec<Option<DMatrix<T>>> = daux.into_iter().map(Some).collect();
        let mut dskips: Vec<Option<DMatrix<T>>> = vec![None; cfg.levels().saturating_sub(1)];
        for step in tape.steps.into_iter().rev() {
            match step {
                Step::Aux { level, ln, normed } => {
                    let (norm, proj) = lay.aux[level - 1];
                    let dl = daux[level - 1].take().expect("one aux tap per level");
                    let [gw, gb] = g.get_disjoint_mut([proj.w.0, proj.b.0]).expect("distinct ids");
                    let dnormed = ops::linear_backward(&normed, self.p(proj.w), &dl, gw, gb);
                    let [gg, gb] = g.get_disjoint_mut([norm.w.0, norm.b.0]).expect("distinct ids");
                    dx += ops::layer_norm_backward(&ln, self.p(norm.w), &dnormed, gg, gb);
                }
                Step::AddSkip(level) => {
                    dskips[level] = Some(dx.clone());
                }
                Step::SaveSkip(level) => {
                    dx += dskips[level].take().expect("skip used by a decoder");
                }
                Step::Down {
                    level,
                    averaged,
                    input_len,
                } => {
                    let ids = lay.down[level];
                    let [gw, gb] = g.get_disjoint_mut([ids.w.0, ids.b.0]).expect("distinct ids");
                    let davg = ops::linear_backward(&averaged, self.p(ids.w), &dx, gw, gb);
                    dx = ops::window_average_backward(&davg, cfg.ratio(level), input_len);
                }
                Step::Up {
                    level,
                    repeated,
                    input_len,
                } => {
                    let ids = lay.up[level];
                    let [gw, gb] = g.get_disjoint_mut([ids.w.0, ids.b.0]).expect("distinct ids");
                    let drep = ops::linear_backward(&repeated, self.p(ids.w), &dx, gw, gb);
                    dx = ops::repeat_frames_backward(&drep, cfg.ratio(level), input_len);
                }
                Step::Layer { block, index, cache } => {
                    dx = self.layer_backward(&lay.blocks[block][index], &cache, g, &dx);
                }
            }
        }

        // input projection and mask embedding; positions are fixed
        let mut dproj = dx;
        for (r, &m) in tape.mask.iter().enumerate() {
            if m {
                g[lay.mask_emb.0] += dproj.row(r);
                dproj.row_mut(r).fill(T::zero());
            }
        }
        let [gw, gb] = g.get_disjoint_mut([lay.input.w.0, lay.input.b.0]).expect("distinct ids");
        ops::linear_backward(&tape.frames, self.p(lay.input.w), &dproj, gw, gb);
        grads
    }

    fn layer_backward(&self, ids: &LayerIds, cache: &LayerCache<T>, g: &mut [DMatrix<T>], dy: &DMatrix<T>) -> DMatrix<T> {
        let [gw, gb] = g.get_disjoint_mut([ids.ff2.w.0, ids.ff2.b.0]).expect("distinct ids");
        let dact = ops::linear_backward(&cache.act, self.p(ids.ff2.w), dy, gw, gb);
        let dpre = dact.zip_map(&cache.pre, |d, a| d * ops::gelu_grad(a));
        let [gw, gb] = g.get_disjoint_mut([ids.ff1.w.0, ids.ff1.b.0]).expect("distinct ids");
        let dz2 = ops::linear_backward(&cache.z2, self.p(ids.ff1.w), &dpre, gw, gb);
        let [gg, gb] = g.get_disjoint_mut([ids.ln2.w.0, ids.ln2.b.0]).expect("distinct ids");
        let dh = dy + ops::layer_norm_backward(&cache.ln2, self.p(ids.ln2.w), &dz2, gg, gb);

        let w = AttentionWeights {
            wq: self.p(ids.wq),
            bq: self.p(ids.bq),
            wk: self.p(ids.wk),
            wv: self.p(ids.wv),
            bv: self.p(ids.bv),
            wo: self.p(ids.wo),
            bo: self.p(ids.bo),
        };
        let [wq, bq, wk, wv, bv, wo, bo] = g
            .get_disjoint_mut([ids.wq.0, ids.bq.0, ids.wk.0, ids.wv.0, ids.bv.0, ids.wo.0, ids.bo.0])
            .expect("distinct ids");
        let grads = AttentionGrads {
            wq,
            bq,
            wk,
            wv,
            bv,
            wo,
            bo,
        };
        let dz1 = ops::attention_backward(&cache.attn, &w, grads, &dh, self.config.heads);
        let [gg, gb] = g.get_disjoint_mut([ids.ln1.w.0, ids.ln1.b.0]).expect("distinct ids");
        dh.clone() + ops::layer_norm_backward(&cache.ln1, self.p(ids.ln1.w), &dz1, gg, gb)
    }
}
