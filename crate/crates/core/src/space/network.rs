use rand::Rng;

use super::{ArchMatrix, OpSpec, SuperNetSpec};
use crate::rng::standard_normal;
use crate::tensor::{BnMode, BnStats, Graph, ParamId, ParamStore, Tensor, Var};
use crate::{Error, Result, Scalar};

/// Convolution followed by batchnorm.
#[derive(Clone, Debug)]
struct ConvBn {
    weight: ParamId,
    gamma: ParamId,
    beta: ParamId,
    slot: usize,
    stride: usize,
    padding: usize,
    groups: usize,
}

#[derive(Clone, Debug)]
enum OpModule {
    Mbconv {
        expand: ConvBn,
        depthwise: ConvBn,
        project: ConvBn,
    },
    Skip,
    Zero,
}

/// How a layer combines its candidates during a forward pass.
#[derive(Clone, Debug)]
pub enum LayerChoice {
    /// Run exactly one op.
    Fixed(usize),
    /// `Σ_{o ∈ active} arch[row, o] · op_o(x)`, where `arch` is an `[L, O]` var.
    Weighted {
        arch: Var,
        row: usize,
        active: Vec<usize>,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ForwardMode {
    /// Batchnorm on current-batch statistics.
    Train,
    /// As `Train`, and report the statistics for storage.
    Calibrate,
    /// Batchnorm on stored statistics.
    Eval,
}

/// A block whose output the masking probe can distort.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ProbeBlock {
    Stem,
    Layer(usize),
    Head,
}

/// Per-channel multipliers applied to one block's output.
#[derive(Clone, Copy, Debug)]
pub struct BlockMask<'a, S> {
    pub block: ProbeBlock,
    pub scales: &'a [S],
}

#[derive(Clone, Copy, Debug)]
pub struct ForwardOptions<'a, S> {
    pub mode: ForwardMode,
    pub mask: Option<BlockMask<'a, S>>,
}

impl<S> ForwardOptions<'_, S> {
    pub fn train() -> Self {
        Self {
            mode: ForwardMode::Train,
            mask: None,
        }
    }

    pub fn eval() -> Self {
        Self {
            mode: ForwardMode::Eval,
            mask: None,
        }
    }
}

pub struct ForwardOutput<S> {
    pub logits: Var,
    /// Candidate branches executed across all searchable layers.
    pub branches: usize,
    /// Batchnorm statistics by slot, filled in `Calibrate` mode.
    pub stats: Vec<(usize, BnStats<S>)>,
}

/// Executable supernet or discrete network with its own parameters.
///
/// Only materialized `(layer, op)` pairs own weights; a discrete network
/// built by [`Network::instantiate`] materializes one op per layer.
#[derive(Clone, Debug)]
pub struct Network<S> {
    spec: SuperNetSpec,
    store: ParamStore<S>,
    stem: ConvBn,
    ops: Vec<Vec<Option<OpModule>>>,
    head_weight: ParamId,
    head_bias: Option<ParamId>,
    bn_names: Vec<String>,
    bn_stats: Vec<Option<BnStats<S>>>,
}

struct Builder<'r, S, R: Rng> {
    store: ParamStore<S>,
    bn_names: Vec<String>,
    rng: &'r mut R,
}

impl<S: Scalar, R: Rng> Builder<'_, S, R> {
    fn normal(&mut self, name: String, shape: &[usize], std: f64) -> ParamId {
        let n: usize = shape.iter().product();
        let data = (0..n)
            .map(|_| S::of(standard_normal(self.rng) * std))
            .collect();
        self.store
            .add(name, Tensor::new(shape.to_vec(), data).expect("shape matches"))
    }

    #[allow(clippy::too_many_arguments)]
    fn conv_bn(
        &mut self,
        prefix: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        groups: usize,
        gamma_init: f64,
    ) -> ConvBn {
        let fan_in = (in_ch / groups) * kernel * kernel;
        let weight = self.normal(
            format!("{prefix}.weight"),
            &[out_ch, in_ch / groups, kernel, kernel],
            (2.0 / fan_in as f64).sqrt(),
        );
        let gamma = self
            .store
            .add(format!("{prefix}.bn.gamma"), Tensor::full(&[out_ch], S::of(gamma_init)));
        let beta = self
            .store
            .add(format!("{prefix}.bn.beta"), Tensor::zeros(&[out_ch]));
        self.bn_names.push(format!("{prefix}.bn"));
        ConvBn {
            weight,
            gamma,
            beta,
            slot: self.bn_names.len() - 1,
            stride,
            padding: (kernel - 1) / 2,
            groups,
        }
    }
}

impl<S: Scalar> Network<S> {
    /// Supernet with weights for every allowed candidate.
    pub fn supernet<R: Rng>(spec: &SuperNetSpec, rng: &mut R) -> Result<Self> {
        let materialize: Vec<Vec<bool>> = spec.layers.iter().map(|l| l.allowed.clone()).collect();
        Self::with_ops(spec, &materialize, rng)
    }

    /// Discrete network for a one-hot architecture.
    pub fn instantiate<R: Rng>(spec: &SuperNetSpec, arch: &ArchMatrix, rng: &mut R) -> Result<Self> {
        if arch.rows() != spec.num_layers() || arch.cols() != spec.num_ops() {
            return Err(Error::shape(
                "instantiate",
                format!(
                    "architecture {}x{} vs space {}x{}",
                    arch.rows(),
                    arch.cols(),
                    spec.num_layers(),
                    spec.num_ops()
                ),
            ));
        }
        if !arch.is_one_hot() {
            return Err(Error::InvalidArgument("instantiate needs a one-hot architecture".into()));
        }
        let choices = arch.argmax();
        let mut materialize = vec![vec![false; spec.num_ops()]; spec.num_layers()];
        for (l, &o) in choices.iter().enumerate() {
            if !spec.layers[l].allowed[o] {
                return Err(Error::Inadmissible {
                    layer: l,
                    op: o,
                    reason: format!("{} is not allowed here", spec.layers[l].candidates[o].label()),
                });
            }
            materialize[l][o] = true;
        }
        Self::with_ops(spec, &materialize, rng)
    }

    /// Network owning weights exactly for the `(layer, op)` pairs marked in
    /// `materialize`.
    pub fn with_ops<R: Rng>(spec: &SuperNetSpec, materialize: &[Vec<bool>], rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let mut b = Builder {
            store: ParamStore::new(),
            bn_names: Vec::new(),
            rng,
        };
        let s = &spec.stem;
        let stem = b.conv_bn("stem.conv", s.in_ch, s.out_ch, s.kernel, s.stride, 1, 1.0);
        let mut ops = Vec::with_capacity(spec.num_layers());
        for (l, layer) in spec.layers.iter().enumerate() {
            let mut row = Vec::with_capacity(layer.num_ops());
            for (o, op) in layer.candidates.iter().enumerate() {
                if !materialize[l][o] {
                    row.push(None);
                    continue;
                }
                if !layer.allowed[o] {
                    return Err(Error::Inadmissible {
                        layer: l,
                        op: o,
                        reason: format!("{} is not allowed here", op.label()),
                    });
                }
                let module = match *op {
                    OpSpec::Skip => OpModule::Skip,
                    OpSpec::Zero => OpModule::Zero,
                    OpSpec::Mbconv {
                        kernel,
                        expansion,
                        groups,
                    } => {
                        let (cin, cout) = (layer.in_channels, layer.out_channels);
                        let mid = cin * expansion;
                        let p = format!("layer{l}.op{o}");
                        // residual branches start as the identity
                        let last_gamma = if layer.is_residual() { 0.0 } else { 1.0 };
                        OpModule::Mbconv {
                            expand: b.conv_bn(&format!("{p}.expand"), cin, mid, 1, 1, groups, 1.0),
                            depthwise: b.conv_bn(&format!("{p}.depthwise"), mid, mid, kernel, layer.stride, mid, 1.0),
                            project: b.conv_bn(&format!("{p}.project"), mid, cout, 1, 1, groups, last_gamma),
                        }
                    }
                    OpSpec::Disallowed => unreachable!("disallowed entries are never allowed"),
                };
                row.push(Some(module));
            }
            ops.push(row);
        }
        let c = spec.final_channels();
        let head_weight = b.normal("head.fc.weight".into(), &[spec.num_classes, c], (1.0 / c as f64).sqrt());
        let head_bias = spec
            .head
            .bias
            .then(|| b.store.add("head.fc.bias", Tensor::zeros(&[spec.num_classes])));
        let bn_stats = vec![None; b.bn_names.len()];
        Ok(Self {
            spec: spec.clone(),
            store: b.store,
            stem,
            ops,
            head_weight,
            head_bias,
            bn_names: b.bn_names,
            bn_stats,
        })
    }

    pub fn spec(&self) -> &SuperNetSpec {
        &self.spec
    }

    pub fn params(&self) -> &ParamStore<S> {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<S> {
        &mut self.store
    }

    /// Scalar parameter count of the network.
    pub fn num_params(&self) -> usize {
        self.store.numel()
    }

    pub fn is_materialized(&self, layer: usize, op: usize) -> bool {
        self.ops
            .get(layer)
            .and_then(|r| r.get(op))
            .is_some_and(Option::is_some)
    }

    /// Op index per layer for a discrete network; `None` if any layer holds
    /// more than one materialized candidate.
    pub fn discrete_choices(&self) -> Option<Vec<usize>> {
        self.ops
            .iter()
            .map(|row| {
                let mut present = row.iter().enumerate().filter(|(_, m)| m.is_some());
                let first = present.next()?.0;
                present.next().is_none().then_some(first)
            })
            .collect()
    }

    pub fn bn_names(&self) -> &[String] {
        &self.bn_names
    }

    pub fn bn_stats(&self) -> &[Option<BnStats<S>>] {
        &self.bn_stats
    }

    pub fn set_bn_stats(&mut self, slot: usize, stats: BnStats<S>) {
        self.bn_stats[slot] = Some(stats);
    }

    pub fn is_calibrated(&self) -> bool {
        self.bn_stats.iter().all(Option::is_some)
    }

    /// Runs a forward pass over `choices` (one per layer) and returns logits.
    pub fn forward(
        &self,
        g: &mut Graph<S>,
        x: Var,
        choices: &[LayerChoice],
        opts: &ForwardOptions<'_, S>,
    ) -> Result<ForwardOutput<S>> {
        if choices.len() != self.spec.num_layers() {
            return Err(Error::shape(
                "forward",
                format!("{} layer choices for {} layers", choices.len(), self.spec.num_layers()),
            ));
        }
        let mut stats = Vec::new();
        let mut h = self.conv_bn(g, x, &self.stem, opts.mode, &mut stats)?;
        h = g.relu(h);
        h = self.apply_mask(g, h, ProbeBlock::Stem, opts)?;

        let mut branches = 0;
        let o_count = self.spec.num_ops();
        for (l, choice) in choices.iter().enumerate() {
            h = match choice {
                LayerChoice::Fixed(o) => {
                    branches += 1;
                    self.run_op(g, h, l, *o, opts, &mut stats)?
                }
                LayerChoice::Weighted { arch, row, active } => {
                    if active.is_empty() {
                        return Err(Error::InvalidArgument(format!("layer {l}: no active candidates")));
                    }
                    let mut acc: Option<Var> = None;
                    for &o in active {
                        branches += 1;
                        let y = self.run_op(g, h, l, o, opts, &mut stats)?;
                        let w = g.index(*arch, row * o_count + o)?;
                        let y = g.mul_scalar_var(y, w)?;
                        acc = Some(match acc {
                            Some(a) => g.add(a, y)?,
                            None => y,
                        });
                    }
                    acc.expect("nonempty")
                }
            };
        }

        let pooled = g.global_avg_pool(h)?;
        let w = g.param(&self.store, self.head_weight);
        let b = self.head_bias.map(|id| g.param(&self.store, id));
        let logits = g.linear(pooled, w, b)?;
        let logits = self.apply_mask(g, logits, ProbeBlock::Head, opts)?;
        Ok(ForwardOutput {
            logits,
            branches,
            stats,
        })
    }

    /// Forward pass of a discrete architecture given as op indices.
    pub fn forward_fixed(
        &self,
        g: &mut Graph<S>,
        x: Var,
        choices: &[usize],
        opts: &ForwardOptions<'_, S>,
    ) -> Result<ForwardOutput<S>> {
        let choices: Vec<LayerChoice> = choices.iter().map(|&o| LayerChoice::Fixed(o)).collect();
        self.forward(g, x, &choices, opts)
    }

    /// Measures batchnorm statistics of `choices` on `images` and stores them.
    pub fn calibrate(&mut self, images: &Tensor<S>, choices: &[usize]) -> Result<()> {
        let mut g = Graph::new();
        let x = g.constant(images.clone());
        let opts = ForwardOptions {
            mode: ForwardMode::Calibrate,
            mask: None,
        };
        let out = self.forward_fixed(&mut g, x, choices, &opts)?;
        for (slot, st) in out.stats {
            self.bn_stats[slot] = Some(st);
        }
        Ok(())
    }

    fn run_op(
        &self,
        g: &mut Graph<S>,
        x: Var,
        layer: usize,
        op: usize,
        opts: &ForwardOptions<'_, S>,
        stats: &mut Vec<(usize, BnStats<S>)>,
    ) -> Result<Var> {
        let module = self
            .ops
            .get(layer)
            .and_then(|r| r.get(op))
            .and_then(Option::as_ref)
            .ok_or_else(|| Error::Inadmissible {
                layer,
                op,
                reason: "candidate has no weights in this network".into(),
            })?;
        let residual = self.spec.layers[layer].is_residual();
        match module {
            OpModule::Skip => Ok(x),
            OpModule::Zero => {
                let l = &self.spec.layers[layer];
                let (h, w) = l.output_resolution();
                let n = g.shape(x)[0];
                Ok(g.constant(Tensor::zeros(&[n, l.out_channels, h, w])))
            }
            OpModule::Mbconv {
                expand,
                depthwise,
                project,
            } => {
                let mut h = self.conv_bn(g, x, expand, opts.mode, stats)?;
                h = g.relu(h);
                h = self.conv_bn(g, h, depthwise, opts.mode, stats)?;
                h = g.relu(h);
                h = self.conv_bn(g, h, project, opts.mode, stats)?;
                // the probe distorts the transform branch; the shortcut survives
                h = self.apply_mask(g, h, ProbeBlock::Layer(layer), opts)?;
                if residual {
                    g.residual_add(x, h)
                } else {
                    Ok(h)
                }
            }
        }
    }

    fn conv_bn(
        &self,
        g: &mut Graph<S>,
        x: Var,
        cb: &ConvBn,
        mode: ForwardMode,
        stats: &mut Vec<(usize, BnStats<S>)>,
    ) -> Result<Var> {
        let w = g.param(&self.store, cb.weight);
        let y = g.conv2d(x, w, cb.stride, cb.padding, cb.groups)?;
        let gamma = g.param(&self.store, cb.gamma);
        let beta = g.param(&self.store, cb.beta);
        let bn_mode = match mode {
            ForwardMode::Train | ForwardMode::Calibrate => BnMode::Train,
            ForwardMode::Eval => BnMode::Eval(self.bn_stats[cb.slot].as_ref().ok_or_else(|| {
                Error::State(format!(
                    "batchnorm `{}` has no calibration statistics",
                    self.bn_names[cb.slot]
                ))
            })?),
        };
        let (y, st) = g.batchnorm2d(y, gamma, beta, bn_mode)?;
        if mode == ForwardMode::Calibrate {
            stats.push((cb.slot, st));
        }
        Ok(y)
    }

    fn apply_mask(
        &self,
        g: &mut Graph<S>,
        x: Var,
        at: ProbeBlock,
        opts: &ForwardOptions<'_, S>,
    ) -> Result<Var> {
        match opts.mask {
            Some(m) if m.block == at => g.channel_scale(x, m.scales),
            _ => Ok(x),
        }
    }

    /// Channel count of a probe block's masked tensor.
    pub fn block_channels(&self, block: ProbeBlock) -> usize {
        match block {
            ProbeBlock::Stem => self.spec.stem.out_ch,
            ProbeBlock::Layer(l) => self.spec.layers[l].out_channels,
            ProbeBlock::Head => self.spec.num_classes,
        }
    }

    /// All parameters and batchnorm statistics as named tensors.
    pub fn named_tensors(&self) -> Vec<(String, Tensor<S>)> {
        let mut out: Vec<(String, Tensor<S>)> = self
            .store
            .iter()
            .map(|(n, t)| (n.to_string(), Tensor::new(t.shape().to_vec(), t.data().to_vec()).expect("valid")))
            .collect();
        for (name, st) in self.bn_names.iter().zip(&self.bn_stats) {
            if let Some(st) = st {
                out.push((format!("{name}.mean"), Tensor::from_vec(st.mean.clone())));
                out.push((format!("{name}.var"), Tensor::from_vec(st.var.clone())));
            }
        }
        out
    }

    /// Loads values saved by [`named_tensors`](Self::named_tensors). Every
    /// parameter must be present; statistics are optional.
    pub fn load_named_tensors(&mut self, tensors: &[(String, Tensor<S>)]) -> Result<()> {
        let find = |name: &str| tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t);
        let ids: Vec<ParamId> = self.store.ids().collect();
        for id in ids {
            let name = self.store.name(id).to_string();
            let t = find(&name).ok_or_else(|| Error::Checkpoint(format!("missing tensor `{name}`")))?;
            if t.shape() != self.store.get(id).shape() {
                return Err(Error::Checkpoint(format!(
                    "`{name}` has shape {:?}, network expects {:?}",
                    t.shape(),
                    self.store.get(id).shape()
                )));
            }
            self.store.set_data(id, t.data())?;
        }
        for slot in 0..self.bn_names.len() {
            let name = &self.bn_names[slot];
            if let (Some(m), Some(v)) = (find(&format!("{name}.mean")), find(&format!("{name}.var"))) {
                self.bn_stats[slot] = Some(BnStats {
                    mean: m.data().to_vec(),
                    var: v.data().to_vec(),
                });
            }
        }
        Ok(())
    }
}
