//! Stack of `linear → batch norm → activation` stages followed by a linear
//! head and an output activation. Shared by the adapter and the discriminator.

use std::ops::Range;

use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::{
    activation_apply, activation_backward, batchnorm_forward, Activation, ActivationCache, AdamConfig, BatchNorm,
    BatchNormCache, Linear, LinearCache, Matrix, Mode, ParamBlock,
};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub struct HiddenStage<T> {
    pub linear: Linear<T>,
    pub norm: BatchNorm<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Network<T> {
    pub stages: Vec<HiddenStage<T>>,
    pub head: Linear<T>,
    hidden_activation: Activation,
    output_activation: Activation,
}

#[derive(Clone, Debug)]
struct StageCache<T> {
    linear: LinearCache<T>,
    norm: BatchNormCache<T>,
    act: ActivationCache<T>,
}

#[derive(Clone, Debug)]
pub struct NetworkCache<T> {
    stages: Vec<StageCache<T>>,
    head: LinearCache<T>,
    out: ActivationCache<T>,
}

/// Pending running-statistics updates from a train-mode forward pass.
pub(crate) type RunningUpdates<T> = Vec<Option<(Vec<T>, Vec<T>)>>;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SegmentKind {
    Weight,
    Bias,
    NormScale,
    NormShift,
    RunningMean,
    RunningVar,
}

impl SegmentKind {
    pub fn is_batchnorm(self) -> bool {
        matches!(
            self,
            SegmentKind::NormScale | SegmentKind::NormShift | SegmentKind::RunningMean | SegmentKind::RunningVar
        )
    }

    pub fn is_learnable(self) -> bool {
        !matches!(self, SegmentKind::RunningMean | SegmentKind::RunningVar)
    }
}

/// One contiguous slice of the flat parameter vector.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Segment {
    pub name: String,
    pub kind: SegmentKind,
    pub range: Range<usize>,
}

/// Flat-vector layout for a stack with the given layer widths
/// `[input, hidden.., output]`.
pub fn layout_for(widths: &[usize]) -> Vec<Segment> {
    let mut segments = Vec::new();
    let mut offset = 0;
    let mut push = |name: String, kind: SegmentKind, len: usize| {
        segments.push(Segment {
            name,
            kind,
            range: offset..offset + len,
        });
        offset += len;
    };
    let n = widths.len();
    for i in 0..n.saturating_sub(2) {
        let (a, b) = (widths[i], widths[i + 1]);
        let s = i + 1;
        push(format!("linear{s}.weight"), SegmentKind::Weight, a * b);
        push(format!("linear{s}.bias"), SegmentKind::Bias, b);
        push(format!("norm{s}.gamma"), SegmentKind::NormScale, b);
        push(format!("norm{s}.beta"), SegmentKind::NormShift, b);
        push(format!("norm{s}.running_mean"), SegmentKind::RunningMean, b);
        push(format!("norm{s}.running_var"), SegmentKind::RunningVar, b);
    }
    if n >= 2 {
        let (a, b) = (widths[n - 2], widths[n - 1]);
        push("head.weight".into(), SegmentKind::Weight, a * b);
        push("head.bias".into(), SegmentKind::Bias, b);
    }
    segments
}

pub fn vector_len(widths: &[usize]) -> usize {
    layout_for(widths).last().map_or(0, |s| s.range.end)
}

impl<T: Scalar> Network<T> {
    pub fn init<R: Rng + ?Sized>(
        widths: &[usize],
        hidden_activation: Activation,
        output_activation: Activation,
        rng: &mut R,
    ) -> Self {
        Self::build(widths, hidden_activation, output_activation, |a, b| {
            Linear::init(a, b, rng)
        })
    }

    pub fn zeros(widths: &[usize], hidden_activation: Activation, output_activation: Activation) -> Self {
        Self::build(widths, hidden_activation, output_activation, Linear::zeros)
    }

    fn build(
        widths: &[usize],
        hidden_activation: Activation,
        output_activation: Activation,
        mut make: impl FnMut(usize, usize) -> Linear<T>,
    ) -> Self {
        assert!(widths.len() >= 2, "a network needs input and output widths");
        let n = widths.len();
        let stages = (0..n - 2)
            .map(|i| HiddenStage {
                linear: make(widths[i], widths[i + 1]),
                norm: BatchNorm::new(widths[i + 1]),
            })
            .collect();
        Network {
            stages,
            head: make(widths[n - 2], widths[n - 1]),
            hidden_activation,
            output_activation,
        }
    }

    pub fn widths(&self) -> Vec<usize> {
        let mut w: Vec<usize> = self.stages.iter().map(|s| s.linear.fan_in()).collect();
        w.push(self.head.fan_in());
        w.push(self.head.fan_out());
        w
    }

    pub fn input_width(&self) -> usize {
        self.widths()[0]
    }

    pub(crate) fn forward_pure(
        &self,
        x: &Matrix<T>,
        mode: Mode,
    ) -> Result<(Matrix<T>, NetworkCache<T>, RunningUpdates<T>)> {
        if x.cols() != self.input_width() {
            return Err(Error::dim("network input width", self.input_width(), x.cols()));
        }
        let mut h = x.clone();
        let mut caches = Vec::with_capacity(self.stages.len());
        let mut updates = Vec::with_capacity(self.stages.len());
        for stage in &self.stages {
            let (z, linear) = stage.linear.forward(&h)?;
            let bn = &stage.norm;
            let res = batchnorm_forward(
                &z,
                bn.gamma.value.as_slice(),
                bn.beta.value.as_slice(),
                &bn.running_mean,
                &bn.running_var,
                mode,
                bn.momentum,
                bn.eps,
            )?;
            let (a, act) = activation_apply(&res.out, self.hidden_activation)?;
            caches.push(StageCache {
                linear,
                norm: res.cache,
                act,
            });
            updates.push(res.running);
            h = a;
        }
        let (z, head) = self.head.forward(&h)?;
        let (out, out_cache) = activation_apply(&z, self.output_activation)?;
        Ok((
            out,
            NetworkCache {
                stages: caches,
                head,
                out: out_cache,
            },
            updates,
        ))
    }

    pub(crate) fn commit_running(&mut self, updates: RunningUpdates<T>) {
        for (stage, upd) in self.stages.iter_mut().zip(updates) {
            if let Some((m, v)) = upd {
                stage.norm.running_mean = m;
                stage.norm.running_var = v;
            }
        }
    }

    /// Forward pass; running statistics are committed only for
    /// `Mode::Train { update_running: true }`.
    pub fn forward(&mut self, x: &Matrix<T>, mode: Mode) -> Result<(Matrix<T>, NetworkCache<T>)> {
        let (out, cache, updates) = self.forward_pure(x, mode)?;
        if mode == Mode::TRAIN {
            self.commit_running(updates);
        }
        Ok((out, cache))
    }

    /// Accumulates parameter gradients, returns the input gradient.
    pub fn backward(&mut self, cache: &NetworkCache<T>, dout: &Matrix<T>) -> Result<Matrix<T>> {
        if cache.stages.len() != self.stages.len() {
            return Err(Error::dim(
                "network backward cache",
                self.stages.len(),
                cache.stages.len(),
            ));
        }
        let dz = activation_backward(&cache.out, dout)?;
        let mut dh = self.head.backward(&cache.head, &dz)?;
        for (stage, sc) in self.stages.iter_mut().zip(&cache.stages).rev() {
            let d_norm_out = activation_backward(&sc.act, &dh)?;
            let dz = stage.norm.backward(&sc.norm, &d_norm_out)?;
            dh = stage.linear.backward(&sc.linear, &dz)?;
        }
        Ok(dh)
    }

    fn blocks_mut(&mut self) -> Vec<&mut ParamBlock<T>> {
        let mut out = Vec::new();
        for s in &mut self.stages {
            out.extend(s.linear.blocks_mut());
            out.extend(s.norm.blocks_mut());
        }
        out.extend(self.head.blocks_mut());
        out
    }

    pub fn zero_grad(&mut self) {
        self.blocks_mut().into_iter().for_each(ParamBlock::zero_grad);
    }

    pub fn adam_step(&mut self, cfg: &AdamConfig) {
        self.blocks_mut().into_iter().for_each(|b| b.adam_step(cfg));
    }

    pub fn layout(&self) -> Vec<Segment> {
        layout_for(&self.widths())
    }

    pub fn vector_len(&self) -> usize {
        vector_len(&self.widths())
    }

    fn visit(&self, mut f: impl FnMut(&[T], Option<&[T]>)) {
        for s in &self.stages {
            f(s.linear.weight.value.as_slice(), Some(s.linear.weight.grad.as_slice()));
            f(s.linear.bias.value.as_slice(), Some(s.linear.bias.grad.as_slice()));
            f(s.norm.gamma.value.as_slice(), Some(s.norm.gamma.grad.as_slice()));
            f(s.norm.beta.value.as_slice(), Some(s.norm.beta.grad.as_slice()));
            f(&s.norm.running_mean, None);
            f(&s.norm.running_var, None);
        }
        f(
            self.head.weight.value.as_slice(),
            Some(self.head.weight.grad.as_slice()),
        );
        f(self.head.bias.value.as_slice(), Some(self.head.bias.grad.as_slice()));
    }

    pub fn to_vector(&self) -> Vec<T> {
        let mut v = Vec::with_capacity(self.vector_len());
        self.visit(|values, _| v.extend_from_slice(values));
        v
    }

    /// Accumulated gradients in the flat layout; running statistics read zero.
    pub fn grad_vector(&self) -> Vec<T> {
        let mut v = Vec::with_capacity(self.vector_len());
        self.visit(|values, grad| match grad {
            Some(g) => v.extend_from_slice(g),
            None => v.extend(std::iter::repeat_n(T::zero(), values.len())),
        });
        v
    }

    /// Overwrites every field from a flat vector; optimizer state is kept.
    pub fn load_vector(&mut self, v: &[T]) -> Result<()> {
        self.load_vector_where(v, |_| true)
    }

    /// Overwrites only the segments accepted by `keep`.
    pub fn load_vector_where(&mut self, v: &[T], keep: impl Fn(SegmentKind) -> bool) -> Result<()> {
        if v.len() != self.vector_len() {
            return Err(Error::dim("load_vector", self.vector_len(), v.len()));
        }
        let mut offset = 0;
        let mut take = |dst: &mut [T], kind: SegmentKind| {
            let n = dst.len();
            if keep(kind) {
                dst.copy_from_slice(&v[offset..offset + n]);
            }
            offset += n;
        };
        for s in &mut self.stages {
            take(s.linear.weight.value.as_mut_slice(), SegmentKind::Weight);
            take(s.linear.bias.value.as_mut_slice(), SegmentKind::Bias);
            take(s.norm.gamma.value.as_mut_slice(), SegmentKind::NormScale);
            take(s.norm.beta.value.as_mut_slice(), SegmentKind::NormShift);
            take(&mut s.norm.running_mean, SegmentKind::RunningMean);
            take(&mut s.norm.running_var, SegmentKind::RunningVar);
        }
        take(self.head.weight.value.as_mut_slice(), SegmentKind::Weight);
        take(self.head.bias.value.as_mut_slice(), SegmentKind::Bias);
        Ok(())
    }
}
