//! U-Net assembly for the five variants.
//!
//! Layout for `depth = d`, `c_l = base · 2^l`:
//!
//! ```text
//! enc l   (l < d): [conv → norm → act] × 2, keep as skip_l, maxpool2
//! bottom:          [conv → norm → act] × 2 with c_d channels
//! dec l   (l < d): upsample2 → up-conv (c_{l+1} → c_l) → crop skip_l →
//!                  concat(skip_l, up) → [conv → norm → act] × 2
//! head:            1×1 conv c_0 → out_channels (logits)
//! ```
//!
//! Convolutions that feed a normalization carry no bias (the normalization
//! removes it); the plain U-Net, up-convolutions and the head have biases.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::layers::{conv_output_size, Mode, PaddingMode};
use crate::norm::{self, CellStats, NormKind, NormSpec, NormVars, Running};
use crate::tensor::{Shape, Tape, Tensor, Var};
use crate::{Error, Exec, Result};

/// ELU `alpha`.
pub const ELU_ALPHA: f64 = 1.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Unet,
    Bnu,
    Lnu,
    Ibu,
    Gbu,
}

impl Variant {
    pub const ALL: [Variant; 5] = [Variant::Unet, Variant::Bnu, Variant::Lnu, Variant::Ibu, Variant::Gbu];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Unet => "unet",
            Variant::Bnu => "bnu",
            Variant::Lnu => "lnu",
            Variant::Ibu => "ibu",
            Variant::Gbu => "gbu",
        }
    }

    /// Normalization after convolution `_conv` (0 or 1) of `block`. Every
    /// convolution of a block gets the same kind.
    pub fn norm_kind(self, block: Block, _conv: usize) -> Option<NormKind> {
        match self {
            Variant::Unet => None,
            Variant::Bnu => Some(NormKind::Batch),
            Variant::Lnu => Some(NormKind::Layer),
            Variant::Ibu if block == Block::Encoder(0) => Some(NormKind::BlendInstanceBatch),
            Variant::Ibu => Some(NormKind::Batch),
            Variant::Gbu => Some(NormKind::BlendGroupBatch),
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown variant {s:?} (expected unet, bnu, lnu, ibu or gbu)")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Elu,
    Relu,
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Activation::Elu => "elu",
            Activation::Relu => "relu",
        })
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "elu" => Ok(Activation::Elu),
            "relu" => Ok(Activation::Relu),
            _ => Err(Error::InvalidConfig(format!("unknown activation {s:?} (expected elu or relu)"))),
        }
    }
}

/// Position of a double-convolution block.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Block {
    Encoder(usize),
    Bottleneck,
    Decoder(usize),
}

impl fmt::Display for Block {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Block::Encoder(l) => write!(f, "enc{l}"),
            Block::Bottleneck => f.write_str("bottleneck"),
            Block::Decoder(l) => write!(f, "dec{l}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UNetSpec {
    pub depth: usize,
    pub base_channels: usize,
    pub kernel_size: usize,
    pub padding: PaddingMode,
    pub variant: Variant,
    pub activation: Activation,
    pub dropconnect_rate: f64,
    pub in_channels: usize,
    pub out_channels: usize,
    /// Group count of the group-normalized kinds.
    pub groups: usize,
}

impl Default for UNetSpec {
    fn default() -> Self {
        Self {
            depth: 4,
            base_channels: 16,
            kernel_size: 3,
            padding: PaddingMode::Same,
            variant: Variant::Gbu,
            activation: Activation::Elu,
            dropconnect_rate: 0.1,
            in_channels: 1,
            out_channels: 1,
            groups: NormSpec::DEFAULT_GROUPS,
        }
    }
}

impl UNetSpec {
    pub fn new(variant: Variant) -> Self {
        Self { variant, ..Self::default() }
    }

    pub fn channels(&self, level: usize) -> usize {
        self.base_channels << level
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 {
            return Err(Error::InvalidConfig("depth must be at least 1".into()));
        }
        if self.base_channels == 0 || self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::InvalidConfig("channel counts must be positive".into()));
        }
        if !matches!(self.kernel_size, 2 | 3) {
            return Err(Error::InvalidConfig(format!("kernel size must be 2 or 3, got {}", self.kernel_size)));
        }
        if !(0.0..1.0).contains(&self.dropconnect_rate) {
            return Err(Error::InvalidConfig(format!(
                "drop-connect rate must be in [0, 1), got {}",
                self.dropconnect_rate
            )));
        }
        for (block, c) in self.blocks() {
            for conv in 0..2 {
                if let Some(kind) = self.variant.norm_kind(block, conv) {
                    self.norm_spec(kind, c).validate()?;
                }
            }
        }
        Ok(())
    }

    fn norm_spec(&self, kind: NormKind, channels: usize) -> NormSpec {
        NormSpec::new(kind, channels).with_groups(self.groups)
    }

    /// Double-convolution blocks in forward order with their output channels.
    pub fn blocks(&self) -> Vec<(Block, usize)> {
        let d = self.depth;
        let mut v: Vec<_> = (0..d).map(|l| (Block::Encoder(l), self.channels(l))).collect();
        v.push((Block::Bottleneck, self.channels(d)));
        v.extend((0..d).rev().map(|l| (Block::Decoder(l), self.channels(l))));
        v
    }

    /// Output `(H, W)` for an input of `(h, w)`, or an error naming the constraint.
    pub fn output_size(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let k = self.kernel_size;
        let p = self.padding;
        let shrink = |s: usize| -> Result<usize> {
            conv_output_size(s, k, p).filter(|&o| o > 0).ok_or_else(|| {
                Error::InvalidSize(format!("spatial size {s} is too small for a {k}x{k} {p:?} convolution"))
            })
        };
        let double = |s: usize| -> Result<usize> { shrink(shrink(s)?) };
        let mut size = [h, w];
        let mut skips = Vec::new();
        for _ in 0..self.depth {
            size = [double(size[0])?, double(size[1])?];
            if !size[0].is_multiple_of(2) || !size[1].is_multiple_of(2) {
                return Err(Error::InvalidSize(match p {
                    PaddingMode::Same => format!(
                        "input {h}x{w} must be divisible by 2^depth = {} in same-padding mode",
                        1 << self.depth
                    ),
                    PaddingMode::Valid => format!("input {h}x{w} gives an odd size {:?} before pooling", size),
                }));
            }
            skips.push(size);
            size = [size[0] / 2, size[1] / 2];
        }
        size = [double(size[0])?, double(size[1])?];
        for skip in skips.into_iter().rev() {
            size = [shrink(2 * size[0])?, shrink(2 * size[1])?];
            if size[0] > skip[0] || size[1] > skip[1] {
                return Err(Error::InvalidSize(format!("decoder map {size:?} exceeds skip connection {skip:?}")));
            }
            size = [double(size[0])?, double(size[1])?];
        }
        Ok((size[0], size[1]))
    }
}

/// One normalization layer of a model.
#[derive(Clone, Debug, PartialEq)]
pub struct NormLayer {
    pub name: String,
    pub spec: NormSpec,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunningStats {
    pub mean: Tensor,
    pub var: Tensor,
}

/// Parameters and running statistics of a built model.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelState {
    pub spec: UNetSpec,
    pub seed: u64,
    params: Vec<(String, Tensor)>,
    index: HashMap<String, usize>,
    norms: Vec<NormLayer>,
    /// Running statistics per entry of `norms` (batch kinds only, once updated).
    running: Vec<Option<RunningStats>>,
}

fn conv_name(block: Block, conv: usize) -> String {
    format!("{block}.conv{}", conv + 1)
}

fn norm_name(block: Block, conv: usize) -> String {
    format!("{block}.norm{}", conv + 1)
}

/// Parameter declaration: `(name, shape, fan_in)`; `fan_in == 0` means a
/// constant initialization given by the name suffix.
fn layout(spec: &UNetSpec) -> (Vec<(String, Shape, usize)>, Vec<NormLayer>) {
    let k = spec.kernel_size;
    let mut params = Vec::new();
    let mut norms = Vec::new();
    let conv = |params: &mut Vec<(String, Shape, usize)>, name: String, cin: usize, cout: usize, k: usize, bias: bool| {
        params.push((format!("{name}.weight"), Shape::new(cout, cin, k, k), cin * k * k));
        if bias {
            params.push((format!("{name}.bias"), Shape::channels(cout), 0));
        }
    };
    let mut in_ch = spec.in_channels;
    for (block, c) in spec.blocks() {
        if let Block::Decoder(_) = block {
            conv(&mut params, format!("{block}.up"), in_ch, c, k, true);
            in_ch = 2 * c;
        }
        for j in 0..2 {
            let kind = spec.variant.norm_kind(block, j);
            conv(&mut params, conv_name(block, j), if j == 0 { in_ch } else { c }, c, k, kind.is_none());
            if let Some(kind) = kind {
                let name = norm_name(block, j);
                params.push((format!("{name}.gamma"), Shape::channels(c), 0));
                params.push((format!("{name}.beta"), Shape::channels(c), 0));
                if kind.is_blend() {
                    params.push((format!("{name}.rho"), Shape::channels(c), 0));
                }
                norms.push(NormLayer { name, spec: spec.norm_spec(kind, c) });
            }
        }
        in_ch = c;
    }
    conv(&mut params, "head".into(), spec.channels(0), spec.out_channels, 1, true);
    (params, norms)
}

/// Initialize a model: He-uniform weights (`±sqrt(6 / fan_in)`), zero biases,
/// `gamma = 1`, `beta = 0`, `rho = 0`.
pub fn build(spec: &UNetSpec, seed: u64) -> Result<ModelState> {
    spec.validate()?;
    let (decls, norms) = layout(spec);
    let params: Vec<(String, Tensor)> = decls
        .into_iter()
        .enumerate()
        .map(|(i, (name, shape, fan_in))| {
            let t = if fan_in > 0 {
                let bound = (6.0 / fan_in as f64).sqrt();
                let mut rng = crate::rng::stream(seed, &[i as u64]);
                Tensor::from_fn(shape, |_, _, _, _| rng.random_range(-bound..bound))
            } else if name.ends_with(".gamma") {
                Tensor::full(shape, 1.0)
            } else {
                Tensor::zeros(shape)
            };
            (name, t)
        })
        .collect();
    let index = params.iter().enumerate().map(|(i, (n, _))| (n.clone(), i)).collect();
    let running = vec![None; norms.len()];
    Ok(ModelState { spec: spec.clone(), seed, params, index, norms, running })
}

/// What a differentiable forward pass left on the tape.
pub struct ForwardOutput {
    pub logits: Var,
    /// One handle per parameter, in [`ModelState::params`] order.
    pub params: Vec<Var>,
    /// Batch statistics per norm layer index (train mode, batch kinds).
    pub batch_stats: Vec<(usize, CellStats)>,
}

impl ModelState {
    pub fn params(&self) -> &[(String, Tensor)] {
        &self.params
    }

    pub fn param(&self, name: &str) -> Option<&Tensor> {
        self.index.get(name).map(|&i| &self.params[i].1)
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.index.get(name).map(|&i| &mut self.params[i].1)
    }

    pub fn param_at_mut(&mut self, i: usize) -> &mut Tensor {
        &mut self.params[i].1
    }

    /// Mutable views of every parameter, in [`ModelState::params`] order.
    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        self.params.iter_mut().map(|(_, t)| t.data_mut()).collect()
    }

    pub fn num_parameters(&self) -> usize {
        self.params.iter().map(|(_, t)| t.numel()).sum()
    }

    pub fn norm_layers(&self) -> &[NormLayer] {
        &self.norms
    }

    /// Initialized running statistics as `(name, tensor)`, mean before var,
    /// in layer order.
    pub fn buffers(&self) -> Vec<(String, Tensor)> {
        self.norms
            .iter()
            .zip(&self.running)
            .filter_map(|(n, r)| r.as_ref().map(|r| (n, r)))
            .flat_map(|(n, r)| {
                [(format!("{}.running_mean", n.name), r.mean.clone()), (format!("{}.running_var", n.name), r.var.clone())]
            })
            .collect()
    }

    /// Set one running statistic by buffer name.
    pub fn set_buffer(&mut self, name: &str, value: Tensor) -> Result<()> {
        let (layer, field) = name
            .rsplit_once('.')
            .ok_or_else(|| Error::InvalidConfig(format!("unknown buffer {name:?}")))?;
        let i = self
            .norms
            .iter()
            .position(|n| n.name == layer && n.spec.kind.uses_batch_statistics())
            .ok_or_else(|| Error::InvalidConfig(format!("unknown buffer {name:?}")))?;
        let c = self.norms[i].spec.channels;
        if value.shape() != Shape::channels(c) {
            return Err(Error::ShapeMismatch { left: Shape::channels(c), right: value.shape() });
        }
        let slot = self.running[i].get_or_insert_with(|| RunningStats {
            mean: Tensor::zeros(Shape::channels(c)),
            var: Tensor::full(Shape::channels(c), 1.0),
        });
        match field {
            "running_mean" => slot.mean = value,
            "running_var" if value.data().iter().all(|&v| v >= 0.0) => slot.var = value,
            "running_var" => return Err(Error::InvalidConfig(format!("{name} has negative entries"))),
            _ => return Err(Error::InvalidConfig(format!("unknown buffer {name:?}"))),
        }
        Ok(())
    }

    /// Fold train-mode batch statistics into the running estimates.
    pub fn update_running(&mut self, stats: &[(usize, CellStats)]) -> Result<()> {
        for (i, s) in stats {
            let layer = &self.norms[*i];
            let mut state = norm::NormState::new(&layer.spec);
            if let Some(r) = &self.running[*i] {
                state.running_mean = Some(r.mean.clone());
                state.running_var = Some(r.var.clone());
            }
            state.update_running(&s.mean, &s.var, layer.spec.momentum)?;
            self.running[*i] = Some(RunningStats { mean: state.running_mean.unwrap(), var: state.running_var.unwrap() });
        }
        Ok(())
    }

    /// Record the network on `tape`. Parameters become leaves that require
    /// gradients when `grads` is set. In train mode, drop-connect masks are
    /// drawn from `(seed, step, layer)`.
    pub fn forward_on_tape(&self, tape: &mut Tape, x: Var, mode: Mode, step: u64, grads: bool) -> Result<ForwardOutput> {
        let spec = &self.spec;
        let shape = tape.shape(x);
        if shape.c != spec.in_channels {
            return Err(Error::ChannelMismatch { expected: spec.in_channels, got: shape.c });
        }
        spec.output_size(shape.h, shape.w)?;

        let params: Vec<Var> = self
            .params
            .iter()
            .map(|(_, t)| if grads { tape.leaf(t.clone().with_requires_grad(true)) } else { tape.constant(t.clone()) })
            .collect();
        let (logits, batch_stats) = self.forward_vars(tape, x, &params, mode, step)?;
        Ok(ForwardOutput { logits, params, batch_stats })
    }

    /// As [`ModelState::forward_on_tape`], with parameter handles supplied by
    /// the caller (one per entry of [`ModelState::params`]).
    pub fn forward_vars(
        &self,
        tape: &mut Tape,
        x: Var,
        params: &[Var],
        mode: Mode,
        step: u64,
    ) -> Result<(Var, Vec<(usize, CellStats)>)> {
        let spec = &self.spec;
        if params.len() != self.params.len() {
            return Err(Error::InvalidConfig(format!("expected {} parameters, got {}", self.params.len(), params.len())));
        }
        for (&v, (name, t)) in params.iter().zip(&self.params) {
            if tape.shape(v) != t.shape() {
                return Err(Error::InvalidConfig(format!("parameter {name}: expected {}, got {}", t.shape(), tape.shape(v))));
            }
        }
        let shape = tape.shape(x);
        if shape.c != spec.in_channels {
            return Err(Error::ChannelMismatch { expected: spec.in_channels, got: shape.c });
        }
        spec.output_size(shape.h, shape.w)?;
        let mut ctx = Ctx { model: self, tape, params, mode, step, conv_index: 0, batch_stats: Vec::new() };

        let mut h = x;
        let mut skips = Vec::new();
        for (block, _) in spec.blocks() {
            if let Block::Decoder(_) = block {
                let up = ctx.tape.upsample2(h);
                let up = ctx.conv(&format!("{block}.up"), up, true)?;
                let skip: Var = skips.pop().expect("one skip per decoder level");
                let s = ctx.tape.shape(up);
                let skip = ctx.tape.crop_center(skip, s.h, s.w)?;
                h = ctx.tape.concat_channels(skip, up)?;
            }
            h = ctx.double_conv(block, h)?;
            if let Block::Encoder(_) = block {
                skips.push(h);
                h = ctx.tape.maxpool2(h)?;
            }
        }
        let logits = ctx.conv("head", h, true)?;
        Ok((logits, ctx.batch_stats))
    }

    /// Logits for `x` without recording gradients.
    pub fn forward(&self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        self.forward_with(Exec::default(), x, mode, 0)
    }

    pub fn forward_with(&self, exec: Exec, x: &Tensor, mode: Mode, step: u64) -> Result<Tensor> {
        let mut tape = Tape::with_exec(exec);
        let xv = tape.constant(x.clone());
        let out = self.forward_on_tape(&mut tape, xv, mode, step, false)?;
        Ok(tape.take(out.logits))
    }
}

struct Ctx<'a, 't> {
    model: &'a ModelState,
    tape: &'t mut Tape,
    params: &'a [Var],
    mode: Mode,
    step: u64,
    conv_index: u64,
    batch_stats: Vec<(usize, CellStats)>,
}

impl Ctx<'_, '_> {
    fn var(&self, name: &str) -> Var {
        self.params[self.model.index[name]]
    }

    fn conv(&mut self, name: &str, x: Var, bias: bool) -> Result<Var> {
        let spec = &self.model.spec;
        let mut w = self.var(&format!("{name}.weight"));
        let dc = crate::layers::DropConnectState {
            rate: spec.dropconnect_rate,
            mode: self.mode,
            rng_seed: crate::rng::derive_seed(self.model.seed, &[self.step, self.conv_index]),
        };
        self.conv_index += 1;
        if let Some(mask) = dc.mask(self.tape.shape(w).numel())? {
            let mask = Tensor::new(self.tape.shape(w), mask)?;
            w = self.tape.mul_const(w, &mask)?;
        }
        let b = bias.then(|| self.var(&format!("{name}.bias")));
        let padding = if name == "head" { PaddingMode::Same } else { spec.padding };
        self.tape.conv2d(x, w, b, padding)
    }

    fn double_conv(&mut self, block: Block, mut h: Var) -> Result<Var> {
        for j in 0..2 {
            let kind = self.model.spec.variant.norm_kind(block, j);
            h = self.conv(&conv_name(block, j), h, kind.is_none())?;
            if kind.is_some() {
                let name = norm_name(block, j);
                let li = self.model.norms.iter().position(|n| n.name == name).expect("layer in layout");
                let layer = &self.model.norms[li];
                let vars = NormVars {
                    gamma: self.var(&format!("{name}.gamma")),
                    beta: self.var(&format!("{name}.beta")),
                    rho: layer.spec.kind.is_blend().then(|| self.var(&format!("{name}.rho"))),
                };
                let running = self.model.running[li].as_ref().map(|r| Running { mean: &r.mean, var: &r.var });
                let out = norm::forward(self.tape, h, &layer.spec, &vars, running, self.mode)?;
                if let Some(stats) = out.batch_stats {
                    self.batch_stats.push((li, stats));
                }
                h = out.output;
            }
            h = match self.model.spec.activation {
                Activation::Elu => self.tape.elu(h, ELU_ALPHA),
                Activation::Relu => self.tape.relu(h),
            };
        }
        Ok(h)
    }
}
