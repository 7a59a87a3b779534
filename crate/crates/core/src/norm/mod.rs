//! Normalization layers.
//!
//! Four base kinds differ only in which elements share a statistic (see
//! [`Partition`]). The two blend kinds compute batch normalization and a
//! partner (group or instance normalization) side by side and mix the
//! pre-affine maps per channel with a learned ratio `sigmoid(rho)`, before a
//! single shared affine.
//!
//! Only the batch statistics need running estimates; the other kinds
//! normalize with the statistics of the current input in both modes.

mod ops;

use serde::{Deserialize, Serialize};

pub use ops::CellStats;

use crate::layers::Mode;
use crate::tensor::{Partition, Shape, Tape, Tensor, Var};
use crate::{Error, Exec, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormKind {
    Batch,
    Layer,
    Instance,
    Group,
    BlendGroupBatch,
    BlendInstanceBatch,
}

impl NormKind {
    pub const ALL: [NormKind; 6] = [
        NormKind::Batch,
        NormKind::Layer,
        NormKind::Instance,
        NormKind::Group,
        NormKind::BlendGroupBatch,
        NormKind::BlendInstanceBatch,
    ];

    pub fn uses_batch_statistics(self) -> bool {
        matches!(self, NormKind::Batch | NormKind::BlendGroupBatch | NormKind::BlendInstanceBatch)
    }

    pub fn is_blend(self) -> bool {
        matches!(self, NormKind::BlendGroupBatch | NormKind::BlendInstanceBatch)
    }

    pub fn uses_groups(self) -> bool {
        matches!(self, NormKind::Group | NormKind::BlendGroupBatch)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormSpec {
    pub kind: NormKind,
    /// Group count, used by the group kinds only.
    pub groups: usize,
    pub eps: f64,
    pub momentum: f64,
    pub channels: usize,
}

impl NormSpec {
    pub const DEFAULT_EPS: f64 = 1e-5;
    pub const DEFAULT_MOMENTUM: f64 = 0.9;
    pub const DEFAULT_GROUPS: usize = 8;

    pub fn new(kind: NormKind, channels: usize) -> Self {
        Self {
            kind,
            groups: Self::DEFAULT_GROUPS,
            eps: Self::DEFAULT_EPS,
            momentum: Self::DEFAULT_MOMENTUM,
            channels,
        }
    }

    pub fn with_groups(mut self, groups: usize) -> Self {
        self.groups = groups;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 {
            return Err(Error::InvalidConfig("normalization needs at least one channel".into()));
        }
        if !(self.eps > 0.0) {
            return Err(Error::InvalidConfig(format!("eps must be positive, got {}", self.eps)));
        }
        if !(self.momentum > 0.0 && self.momentum < 1.0) {
            return Err(Error::InvalidConfig(format!("momentum must be in (0, 1), got {}", self.momentum)));
        }
        if self.kind.uses_groups() && (self.groups == 0 || !self.channels.is_multiple_of(self.groups)) {
            return Err(Error::GroupsDoNotDivide { groups: self.groups, channels: self.channels });
        }
        Ok(())
    }

    /// Partition of the non-batch half (the kind itself for base kinds).
    fn partner_partition(&self) -> Option<Partition> {
        match self.kind {
            NormKind::Batch => None,
            NormKind::Layer => Some(Partition::Layer),
            NormKind::Instance | NormKind::BlendInstanceBatch => Some(Partition::Instance),
            NormKind::Group | NormKind::BlendGroupBatch => Some(Partition::Group(self.groups)),
        }
    }
}

/// Learnable parameters and running statistics of one normalization layer.
#[derive(Clone, Debug, PartialEq)]
pub struct NormState {
    pub gamma: Tensor,
    pub beta: Tensor,
    /// Raw blend logits, blend kinds only.
    pub rho: Option<Tensor>,
    /// `None` until the first [`NormState::update_running`].
    pub running_mean: Option<Tensor>,
    pub running_var: Option<Tensor>,
}

impl NormState {
    /// `gamma = 1`, `beta = 0`, `rho = 0` (ratio 0.5), no running statistics.
    pub fn new(spec: &NormSpec) -> Self {
        let c = spec.channels;
        Self {
            gamma: Tensor::full(Shape::channels(c), 1.0),
            beta: Tensor::zeros(Shape::channels(c)),
            rho: spec.kind.is_blend().then(|| Tensor::zeros(Shape::channels(c))),
            running_mean: None,
            running_var: None,
        }
    }

    /// Exponential moving average of the batch statistics. The first update
    /// copies the batch statistics outright.
    pub fn update_running(&mut self, batch_mean: &[f64], batch_var: &[f64], momentum: f64) -> Result<()> {
        let c = self.gamma.numel();
        if batch_mean.len() != c || batch_var.len() != c {
            return Err(Error::ChannelMismatch { expected: c, got: batch_mean.len() });
        }
        match (&mut self.running_mean, &mut self.running_var) {
            (Some(m), Some(v)) => {
                for (r, b) in m.data_mut().iter_mut().zip(batch_mean) {
                    *r = momentum * *r + (1.0 - momentum) * b;
                }
                for (r, b) in v.data_mut().iter_mut().zip(batch_var) {
                    *r = (momentum * *r + (1.0 - momentum) * b).max(0.0);
                }
            }
            _ => {
                self.running_mean = Some(Tensor::channel_vector(batch_mean.to_vec()));
                self.running_var = Some(Tensor::channel_vector(batch_var.to_vec()));
            }
        }
        Ok(())
    }
}

/// Per-channel blend ratio `sigmoid(rho)`.
pub fn blend_ratio(spec: &NormSpec, state: &NormState) -> Result<Tensor> {
    match (&state.rho, spec.kind.is_blend()) {
        (Some(rho), true) => {
            Ok(Tensor::channel_vector(rho.data().iter().map(|&r| crate::tensor::sigmoid(r)).collect()))
        }
        _ => Err(Error::NotBlendKind(format!("{:?}", spec.kind))),
    }
}

/// Tape handles of a layer's learnable parameters.
#[derive(Clone, Copy, Debug)]
pub struct NormVars {
    pub gamma: Var,
    pub beta: Var,
    pub rho: Option<Var>,
}

/// Running statistics as borrowed per-channel vectors.
#[derive(Clone, Copy, Debug)]
pub struct Running<'a> {
    pub mean: &'a Tensor,
    pub var: &'a Tensor,
}

impl<'a> Running<'a> {
    pub fn of(state: &'a NormState) -> Option<Self> {
        match (&state.running_mean, &state.running_var) {
            (Some(mean), Some(var)) => Some(Self { mean, var }),
            _ => None,
        }
    }
}

/// Output of a differentiable normalization.
pub struct NormOutput {
    pub output: Var,
    /// Normalized map before the affine.
    pub pre_affine: Var,
    /// Per-channel batch statistics, for kinds with a batch half in train mode.
    pub batch_stats: Option<CellStats>,
}

/// Differentiable normalization of `x`.
pub fn forward(
    tape: &mut Tape,
    x: Var,
    spec: &NormSpec,
    vars: &NormVars,
    running: Option<Running<'_>>,
    mode: Mode,
) -> Result<NormOutput> {
    spec.validate()?;
    let shape = tape.shape(x);
    if shape.c != spec.channels {
        return Err(Error::ChannelMismatch { expected: spec.channels, got: shape.c });
    }

    let mut batch_stats = None;
    let batch_half = if spec.kind.uses_batch_statistics() {
        Some(match mode {
            Mode::Train => {
                let (v, stats) = tape.standardize(x, Partition::Batch, spec.eps)?;
                batch_stats = Some(stats);
                v
            }
            Mode::Infer => {
                let r = running.ok_or(Error::StatisticsUninitialized)?;
                let scale: Vec<f64> = r.var.data().iter().map(|v| 1.0 / (v + spec.eps).sqrt()).collect();
                let shift: Vec<f64> = r.mean.data().iter().zip(&scale).map(|(m, s)| -m * s).collect();
                let scale = tape.constant(Tensor::channel_vector(scale));
                let shift = tape.constant(Tensor::channel_vector(shift));
                tape.channel_affine(x, scale, Some(shift))?
            }
        })
    } else {
        None
    };
    let partner = match spec.partner_partition() {
        Some(p) => Some(tape.standardize(x, p, spec.eps)?.0),
        None => None,
    };

    let pre_affine = match (batch_half, partner) {
        (Some(b), None) => b,
        (None, Some(p)) => p,
        (Some(b), Some(p)) => {
            let rho = vars.rho.ok_or_else(|| Error::InvalidConfig("blend kind without rho".into()))?;
            tape.blend(b, p, rho)?
        }
        (None, None) => unreachable!("every kind has at least one half"),
    };
    let output = tape.channel_affine(pre_affine, vars.gamma, Some(vars.beta))?;
    Ok(NormOutput { output, pre_affine, batch_stats })
}

fn evaluate(x: &Tensor, spec: &NormSpec, state: &NormState, mode: Mode, pre_affine: bool) -> Result<Tensor> {
    let mut tape = Tape::with_exec(Exec::Sequential);
    let xv = tape.constant(x.clone());
    let vars = NormVars {
        gamma: tape.constant(state.gamma.clone()),
        beta: tape.constant(state.beta.clone()),
        rho: state.rho.clone().map(|r| tape.constant(r)),
    };
    let out = forward(&mut tape, xv, spec, &vars, Running::of(state), mode)?;
    Ok(tape.take(if pre_affine { out.pre_affine } else { out.output }))
}

/// `gamma · normalized(x) + beta`, without recording gradients.
pub fn normalize(x: &Tensor, spec: &NormSpec, state: &NormState, mode: Mode) -> Result<Tensor> {
    evaluate(x, spec, state, mode, false)
}

/// The normalized map before `gamma` and `beta` are applied.
pub fn normalize_pre_affine(x: &Tensor, spec: &NormSpec, state: &NormState, mode: Mode) -> Result<Tensor> {
    evaluate(x, spec, state, mode, true)
}

/// Batch statistics `(mean, var)` per channel, as used by [`NormState::update_running`].
pub fn batch_statistics(x: &Tensor) -> Result<CellStats> {
    let m = crate::tensor::moments(x, Partition::Batch)?;
    Ok(CellStats { mean: m.mean.into_data(), var: m.var.into_data() })
}
