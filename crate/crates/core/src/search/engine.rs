use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::config::{anneal_tau, SearchConfig};
use crate::data::{Checkpoint, Dataset, Split};
use crate::proposal::{
    ensemble_arch, ensemble_arch_var, optimize_proposals, sample_arch, sample_arch_var, LogitMatrix, ProposalSet,
    Sampler,
};
use crate::rng::seeded;
use crate::space::{ArchMatrix, ForwardOptions, LayerChoice, Network, ResourceTable, SuperNetSpec};
use crate::tensor::{sgd_step, Adam, AdamConfig, Graph, ParamId, ParamStore, Tensor, Var};
use crate::train::batches;
use crate::vitality::{vital_by_rule, VitalSet};
use crate::{Error, Result, Scalar};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Vital,
    ProposalFit,
    Nonvital,
    Done,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepKind {
    Weights,
    Arch,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    Train,
    Val,
}

/// One optimization step of the search loop.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub phase: Phase,
    pub kind: StepKind,
    pub source: DataSource,
    pub iteration: u64,
    pub tau: f64,
    pub loss: f64,
    /// Candidate branches executed by the forward pass.
    pub branches: usize,
    /// Executed ops per layer of the network being trained.
    pub active: Vec<Vec<usize>>,
    /// Dataset indices of the batch.
    pub batch: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SearchState {
    pub phase: Phase,
    /// Steps taken so far (weight and architecture steps of both stages).
    pub iteration: u64,
    pub tau: f64,
    pub num_layers: usize,
    pub num_ops: usize,
    pub vital_layers: Vec<usize>,
    /// Op per vital layer, fixed once stage 1 ends.
    pub vital_choices: Vec<usize>,
    pub theta_vital: Option<LogitMatrix>,
    pub proposals: Option<ProposalSet>,
    pub weight_loss: Vec<f64>,
    pub arch_loss: Vec<f64>,
    /// Normalized target deviation of `A_Θ` at every stage-2 architecture step.
    pub deviation: Vec<f64>,
    pub log: Vec<StepRecord>,
}

impl SearchState {
    pub fn new(spec: &SuperNetSpec, vital_layers: Vec<usize>, cfg: &SearchConfig) -> Self {
        Self {
            phase: Phase::Vital,
            iteration: 0,
            tau: cfg.tau0,
            num_layers: spec.num_layers(),
            num_ops: spec.num_ops(),
            vital_layers,
            vital_choices: Vec::new(),
            theta_vital: None,
            proposals: None,
            weight_loss: Vec::new(),
            arch_loss: Vec::new(),
            deviation: Vec::new(),
            log: Vec::new(),
        }
    }

    pub fn nonvital_layers(&self) -> Vec<usize> {
        (0..self.num_layers).filter(|l| !self.vital_layers.contains(l)).collect()
    }

    fn tick(&mut self, cfg: &SearchConfig) {
        self.iteration += 1;
        self.tau = anneal_tau(cfg.tau0, cfg.tau_decay, self.iteration);
    }

    fn record(&mut self, kind: StepKind, batch: &[usize], loss: f64, branches: usize, active: Vec<Vec<usize>>) {
        match kind {
            StepKind::Weights => self.weight_loss.push(loss),
            StepKind::Arch => self.arch_loss.push(loss),
        }
        self.log.push(StepRecord {
            phase: self.phase,
            kind,
            source: match kind {
                StepKind::Weights => DataSource::Train,
                StepKind::Arch => DataSource::Val,
            },
            iteration: self.iteration,
            tau: self.tau,
            loss,
            branches,
            active,
            batch: batch.to_vec(),
        });
    }
}

/// Everything a finished search produces.
#[derive(Clone, Debug)]
pub struct SearchOutcome<S> {
    pub state: SearchState,
    pub arch: ArchMatrix,
    /// The stage-2 supernet (vital layers hold only their chosen op).
    pub supernet: Network<S>,
}

/// The minimal supernet: stem, the vital layers in order, head.
pub fn build_vital_supernet(spec: &SuperNetSpec, vital: &VitalSet) -> Result<SuperNetSpec> {
    for (l, layer) in spec.layers.iter().enumerate() {
        if !vital.contains(l) && !layer.is_residual() {
            return Err(Error::Space(format!(
                "layer {l} is omitted from the vital supernet but changes shape ({} -> {} channels, stride {})",
                layer.in_channels, layer.out_channels, layer.stride
            )));
        }
    }
    spec.select_layers(&vital.indices())
}

/// How one layer of a network runs in a step.
#[derive(Clone, Copy, Debug)]
enum Slot {
    Fixed(usize),
    /// Row of the searched architecture matrix.
    Row(usize),
}

fn shuffled<R: Rng>(indices: &[usize], rng: &mut R) -> Vec<usize> {
    let mut v = indices.to_vec();
    v.shuffle(rng);
    v
}

/// Forward pass with the searched rows weighted by `arch`; returns the
/// cross-entropy, the executed branch count and the active ops per layer.
fn forward_loss<S: Scalar>(
    net: &Network<S>,
    g: &mut Graph<S>,
    slots: &[Slot],
    arch: Var,
    data: &Dataset,
    batch: &[usize],
) -> Result<(Var, usize, Vec<Vec<usize>>)> {
    let cols = g.shape(arch)[1];
    let values: Vec<f64> = g.data(arch).iter().map(|v| v.to_f64_lossy()).collect();
    let differentiable = g.requires_grad(arch);
    let mut choices = Vec::with_capacity(slots.len());
    let mut active_log = Vec::with_capacity(slots.len());
    for slot in slots {
        match *slot {
            Slot::Fixed(o) => {
                choices.push(LayerChoice::Fixed(o));
                active_log.push(vec![o]);
            }
            Slot::Row(r) => {
                let active: Vec<usize> = (0..cols).filter(|&o| values[r * cols + o] > 0.0).collect();
                if active.is_empty() {
                    return Err(Error::State(format!("architecture row {r} selects no candidate")));
                }
                active_log.push(active.clone());
                // a constant one-hot row is just the chosen op
                if !differentiable && active.len() == 1 && values[r * cols + active[0]] == 1.0 {
                    choices.push(LayerChoice::Fixed(active[0]));
                } else {
                    choices.push(LayerChoice::Weighted { arch, row: r, active });
                }
            }
        }
    }
    let (images, labels) = data.batch::<S>(batch);
    let x = g.constant(images);
    let out = net.forward(g, x, &choices, &ForwardOptions::train())?;
    let loss = g.cross_entropy(out.logits, &labels)?;
    Ok((loss, out.branches, active_log))
}

/// SGD on the weights used by the sampled architecture `arch`.
fn weight_step<S: Scalar>(
    net: &mut Network<S>,
    slots: &[Slot],
    arch: &ArchMatrix,
    data: &Dataset,
    batch: &[usize],
    lr: f64,
) -> Result<(f64, usize, Vec<Vec<usize>>)> {
    let mut g = Graph::new();
    let a = g.constant(Tensor::new(
        vec![arch.rows(), arch.cols()],
        arch.data().iter().map(|&v| S::of(v)).collect(),
    )?);
    let (loss, branches, active) = forward_loss(net, &mut g, slots, a, data, batch)?;
    let value = g.data(loss)[0].to_f64_lossy();
    g.backward(loss)?;
    g.accumulate_param_grads(net.params_mut())?;
    let used = g.used_params();
    sgd_step(net.params_mut(), &used, S::of(lr))?;
    Ok((value, branches, active))
}

/// Current value of a logit parameter.
fn logits_of<S: Scalar>(store: &ParamStore<S>, id: ParamId) -> Result<LogitMatrix> {
    let t = store.get(id);
    let (rows, cols) = (t.shape()[0], t.shape()[1]);
    LogitMatrix::new(rows, cols, t.data().iter().map(|v| v.to_f64_lossy()).collect())
}

/// Copies gradients of graph leaves into the architecture store and steps Adam.
fn arch_update<S: Scalar>(
    g: &Graph<S>,
    leaves: &[(Var, ParamId)],
    store: &mut ParamStore<S>,
    adam: &mut Adam<S>,
) -> Result<()> {
    for &(v, id) in leaves {
        let grad = match g.grad(v) {
            Some(gr) => gr.to_vec(),
            None => vec![S::zero(); g.value(v).numel()],
        };
        store.get_mut(id).accumulate_grad(&grad)?;
    }
    let ids: Vec<ParamId> = leaves.iter().map(|&(_, id)| id).collect();
    adam.step(store, &ids)
}

fn check_split(split: &Split) -> Result<()> {
    if split.train.len() < 2 || split.val.len() < 2 {
        return Err(Error::Data(format!(
            "search needs at least two train and two validation samples, got {} and {}",
            split.train.len(),
            split.val.len()
        )));
    }
    Ok(())
}

fn save_epoch<S: Scalar>(
    dir: Option<&Path>,
    stage: &str,
    epoch: usize,
    state: &SearchState,
    net: &Network<S>,
    arch: &ParamStore<S>,
) -> Result<()> {
    let Some(dir) = dir else { return Ok(()) };
    let mut tensors = net.named_tensors();
    tensors.extend(arch.iter().map(|(n, t)| (format!("arch.{n}"), t.clone())));
    let meta = serde_json::json!({
        "stage": stage,
        "epoch": epoch,
        "iteration": state.iteration,
        "tau": state.tau,
    });
    Checkpoint::new(meta, &tensors).save(&dir.join(format!("{stage}_epoch{epoch}.ckpt")))
}

/// Stage 1: alternating weight and architecture updates on the minimal
/// supernet; fixes `state.vital_choices` (indices into the vital spec's rows).
#[allow(clippy::too_many_arguments)]
pub fn search_vital<S: Scalar>(
    vital_spec: &SuperNetSpec,
    data: &Dataset,
    split: &Split,
    cfg: &SearchConfig,
    state: &mut SearchState,
    checkpoint_dir: Option<&Path>,
) -> Result<Network<S>> {
    cfg.validate()?;
    check_split(split)?;
    if state.phase != Phase::Vital {
        return Err(Error::State(format!("vital search cannot run in phase {:?}", state.phase)));
    }
    let mut net = Network::<S>::supernet(vital_spec, &mut seeded(cfg.seed, 0x5e03))?;
    let allowed: Vec<Vec<bool>> = vital_spec.layers.iter().map(|l| l.allowed.clone()).collect();
    let mut arch_store = ParamStore::new();
    let theta_id = arch_store.add("theta_vital", LogitMatrix::uniform(&allowed)?.to_tensor());
    let mut adam = Adam::new(AdamConfig::with_lr(cfg.lr_arch));
    let searchable = allowed.iter().any(|r| r.iter().filter(|&&a| a).count() > 1);
    let slots: Vec<Slot> = (0..vital_spec.num_layers()).map(Slot::Row).collect();
    let mut order_rng = seeded(cfg.seed, 0x5e04);
    let mut sample_rng = seeded(cfg.seed, 0x5e01);
    let mut arch_rng = seeded(cfg.seed, 0x5e02);

    for epoch in 0..cfg.e_vital {
        let train = shuffled(&split.train, &mut order_rng);
        for b in batches(&train, cfg.batch_size) {
            let theta = logits_of(&arch_store, theta_id)?;
            let a = sample_arch(&theta, Sampler::new(cfg.sampler, state.tau)?, &mut sample_rng);
            let (loss, branches, active) = weight_step(&mut net, &slots, &a, data, b, cfg.lr_weights)?;
            state.record(StepKind::Weights, b, loss, branches, active);
            state.tick(cfg);
        }
        let val = shuffled(&split.val, &mut order_rng);
        for b in batches(&val, cfg.batch_size) {
            if !searchable {
                break;
            }
            let mut g = Graph::new();
            let theta = g.leaf(arch_store.get(theta_id).clone());
            let sampled = sample_arch_var(&mut g, theta, Sampler::new(cfg.sampler, state.tau)?, &mut arch_rng)?;
            let (loss, branches, active) = forward_loss(&net, &mut g, &slots, sampled.arch, data, b)?;
            let value = g.data(loss)[0].to_f64_lossy();
            g.backward(loss)?;
            arch_update(&g, &[(theta, theta_id)], &mut arch_store, &mut adam)?;
            state.record(StepKind::Arch, b, value, branches, active);
            state.tick(cfg);
        }
        save_epoch(checkpoint_dir, "vital", epoch, state, &net, &arch_store)?;
    }
    let theta = logits_of(&arch_store, theta_id)?;
    state.vital_choices = theta.argmax();
    state.theta_vital = Some(theta);
    state.phase = Phase::ProposalFit;
    Ok(net)
}

/// Fits proposals over the non-vital rows, with the vital choices folded
/// into the fixed cost.
pub fn fit_stage_proposals(table: &ResourceTable, cfg: &SearchConfig, state: &mut SearchState) -> Result<()> {
    if state.phase != Phase::ProposalFit {
        return Err(Error::State(format!("proposal fitting cannot run in phase {:?}", state.phase)));
    }
    let table_nv = nonvital_table(table, state)?;
    state.proposals = Some(optimize_proposals(&table_nv, &cfg.proposal_config())?);
    state.phase = Phase::Nonvital;
    Ok(())
}

fn nonvital_table(table: &ResourceTable, state: &SearchState) -> Result<ResourceTable> {
    let fixed: Vec<(usize, usize)> = state
        .vital_layers
        .iter()
        .copied()
        .zip(state.vital_choices.iter().copied())
        .collect();
    table.restrict(&state.nonvital_layers(), &fixed)
}

/// Copies stem, head and vital-layer weights of the stage-1 supernet.
fn inherit<S: Scalar>(net: &mut Network<S>, vital_net: &Network<S>, vital_layers: &[usize]) -> Result<()> {
    for (name, t) in vital_net.params().iter() {
        let target = match name.strip_prefix("layer") {
            Some(rest) => {
                let (ix, tail) = rest.split_once('.').expect("layer parameters are dotted");
                let ix: usize = ix.parse().expect("layer index");
                format!("layer{}.{tail}", vital_layers[ix])
            }
            None => name.to_string(),
        };
        if let Some(id) = net.params().find(&target) {
            net.params_mut().set_data(id, t.data())?;
        }
    }
    Ok(())
}

/// Stage 2: searches the non-vital layers inside the proposal ensemble with
/// the vital ops fixed. Updates `state.proposals` in place.
pub fn search_nonvital<S: Scalar>(
    spec: &SuperNetSpec,
    table: &ResourceTable,
    data: &Dataset,
    split: &Split,
    cfg: &SearchConfig,
    state: &mut SearchState,
    vital_net: Option<&Network<S>>,
    checkpoint_dir: Option<&Path>,
) -> Result<Network<S>> {
    cfg.validate()?;
    check_split(split)?;
    if state.phase != Phase::Nonvital {
        return Err(Error::State(format!("non-vital search cannot run in phase {:?}", state.phase)));
    }
    let nonvital = state.nonvital_layers();
    let proposals = state
        .proposals
        .clone()
        .ok_or_else(|| Error::State("no proposals fitted".into()))?;
    if proposals.layers != nonvital || proposals.thetas.iter().any(|t| t.cols() != spec.num_ops()) {
        return Err(Error::InvalidArgument(format!(
            "proposals cover layers {:?} but the non-vital layers are {nonvital:?}",
            proposals.layers
        )));
    }
    let table_nv = nonvital_table(table, state)?;

    let mut materialize: Vec<Vec<bool>> = spec.layers.iter().map(|l| l.allowed.clone()).collect();
    let mut slots = vec![Slot::Fixed(0); spec.num_layers()];
    for (&l, &o) in state.vital_layers.iter().zip(&state.vital_choices) {
        materialize[l] = (0..spec.num_ops()).map(|c| c == o).collect();
        slots[l] = Slot::Fixed(o);
    }
    for (r, &l) in nonvital.iter().enumerate() {
        slots[l] = Slot::Row(r);
    }
    let mut net = Network::<S>::with_ops(spec, &materialize, &mut seeded(cfg.seed, 0x5e13))?;
    if let Some(v) = vital_net {
        inherit(&mut net, v, &state.vital_layers)?;
    }

    let mut arch_store = ParamStore::<S>::new();
    let pi_id = arch_store.add(
        "pi",
        Tensor::new(vec![1, proposals.m()], proposals.pi_logits.iter().map(|&v| S::of(v)).collect())?,
    );
    let theta_ids: Vec<ParamId> = proposals
        .thetas
        .iter()
        .enumerate()
        .map(|(j, t)| arch_store.add(format!("theta{j}"), t.to_tensor()))
        .collect();
    let mut adam = Adam::new(AdamConfig::with_lr(cfg.lr_arch));
    let mut order_rng = seeded(cfg.seed, 0x5e14);
    let mut sample_rng = seeded(cfg.seed, 0x5e11);
    let mut arch_rng = seeded(cfg.seed, 0x5e12);

    for epoch in 0..cfg.stage2_epochs() {
        let train = shuffled(&split.train, &mut order_rng);
        for b in batches(&train, cfg.batch_size) {
            let sampler = Sampler::new(cfg.sampler, state.tau)?;
            let pi = logits_of(&arch_store, pi_id)?;
            let pi = sample_arch(&pi, sampler, &mut sample_rng);
            let thetas = theta_ids
                .iter()
                .map(|&id| logits_of(&arch_store, id))
                .collect::<Result<Vec<_>>>()?;
            let a = ensemble_arch(pi.data(), &thetas, sampler, &mut sample_rng)?;
            let (loss, branches, active) = weight_step(&mut net, &slots, &a, data, b, cfg.lr_weights)?;
            state.record(StepKind::Weights, b, loss, branches, active);
            state.tick(cfg);
        }
        let val = shuffled(&split.val, &mut order_rng);
        for b in batches(&val, cfg.batch_size) {
            let sampler = Sampler::new(cfg.sampler, state.tau)?;
            let mut g = Graph::new();
            let pi_leaf = g.leaf(arch_store.get(pi_id).clone());
            let theta_leaves: Vec<Var> = theta_ids.iter().map(|&id| g.leaf(arch_store.get(id).clone())).collect();
            let pi = sample_arch_var(&mut g, pi_leaf, sampler, &mut arch_rng)?;
            let archs = theta_leaves
                .iter()
                .map(|&t| sample_arch_var(&mut g, t, sampler, &mut arch_rng).map(|s| s.arch))
                .collect::<Result<Vec<_>>>()?;
            let a = ensemble_arch_var(&mut g, pi.arch, &archs)?;
            let (ce, branches, active) = forward_loss(&net, &mut g, &slots, a, data, b)?;
            let dev = table_nv.deviation_var(&mut g, a)?;
            let weighted = g.scale(dev, S::of(cfg.alpha));
            let loss = g.add(ce, weighted)?;
            let value = g.data(loss)[0].to_f64_lossy();
            state.deviation.push(g.data(dev)[0].to_f64_lossy());
            g.backward(loss)?;
            let mut leaves = vec![(pi_leaf, pi_id)];
            leaves.extend(theta_leaves.iter().copied().zip(theta_ids.iter().copied()));
            arch_update(&g, &leaves, &mut arch_store, &mut adam)?;
            state.record(StepKind::Arch, b, value, branches, active);
            state.tick(cfg);
        }
        save_epoch(checkpoint_dir, "nonvital", epoch, state, &net, &arch_store)?;
    }

    let mut fitted = proposals;
    fitted.pi_logits = logits_of(&arch_store, pi_id)?.data().to_vec();
    fitted.thetas = theta_ids
        .iter()
        .map(|&id| logits_of(&arch_store, id))
        .collect::<Result<_>>()?;
    state.proposals = Some(fitted);
    state.phase = Phase::Done;
    Ok(net)
}

/// Final one-hot architecture over every layer: vital layers keep their
/// stage-1 ops, the rest take the argmax of the most likely proposal.
pub fn derive_final(state: &SearchState) -> Result<ArchMatrix> {
    if state.phase != Phase::Done {
        return Err(Error::State(format!("cannot derive an architecture in phase {:?}", state.phase)));
    }
    let mut choices = vec![usize::MAX; state.num_layers];
    for (&l, &o) in state.vital_layers.iter().zip(&state.vital_choices) {
        choices[l] = o;
    }
    if let Some(p) = &state.proposals {
        let mut best = 0;
        for (j, &v) in p.pi_logits.iter().enumerate() {
            if v > p.pi_logits[best] {
                best = j;
            }
        }
        for (&l, o) in p.layers.iter().zip(p.thetas[best].argmax()) {
            choices[l] = o;
        }
    }
    if let Some(l) = choices.iter().position(|&c| c == usize::MAX) {
        return Err(Error::State(format!("layer {l} has no derived op")));
    }
    ArchMatrix::one_hot(&choices, state.num_ops)
}

/// Runs the whole pipeline on a split dataset. `table` must cover every
/// layer of `spec`.
pub fn run_search<S: Scalar>(
    spec: &SuperNetSpec,
    table: &ResourceTable,
    data: &Dataset,
    split: &Split,
    cfg: &SearchConfig,
    checkpoint_dir: Option<&Path>,
) -> Result<SearchOutcome<S>> {
    cfg.validate()?;
    if table.layers != (0..spec.num_layers()).collect::<Vec<_>>() || table.num_ops() != spec.num_ops() {
        return Err(Error::InvalidArgument("resource table does not cover the search space".into()));
    }
    let vital = if cfg.vital_priori {
        vital_by_rule(spec)
    } else {
        VitalSet::default()
    };
    let mut state = SearchState::new(spec, vital.indices(), cfg);
    let vital_net = if vital.layers.is_empty() {
        state.phase = Phase::ProposalFit;
        None
    } else {
        let vspec = build_vital_supernet(spec, &vital)?;
        Some(search_vital::<S>(&vspec, data, split, cfg, &mut state, checkpoint_dir)?)
    };
    let supernet = if state.nonvital_layers().is_empty() {
        state.phase = Phase::Done;
        match vital_net {
            Some(n) => n,
            None => return Err(Error::Space("the search space has no layers".into())),
        }
    } else {
        fit_stage_proposals(table, cfg, &mut state)?;
        search_nonvital(spec, table, data, split, cfg, &mut state, vital_net.as_ref(), checkpoint_dir)?
    };
    let arch = derive_final(&state)?;
    Ok(SearchOutcome { state, arch, supernet })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derive_needs_done_and_picks_best_proposal() {
        let spec = SuperNetSpec::default_miniature();
        let cfg = SearchConfig::default();
        let mut st = SearchState::new(&spec, vec![1, 4], &cfg);
        st.vital_choices = vec![3, 0];
        assert!(derive_final(&st).is_err());
        let rows = 5;
        let mk = |hot: usize| LogitMatrix::new(rows, 5, (0..rows * 5).map(|i| if i % 5 == hot { 1.0 } else { 0.0 }).collect()).unwrap();
        st.proposals = Some(ProposalSet {
            thetas: vec![mk(0), mk(2)],
            pi_logits: vec![0.1, 0.9],
            alpha: 5.0,
            beta: 0.01,
            tau: 1.0,
            objective_names: vec!["flops".into()],
            targets: vec![1.0],
            layers: vec![0, 2, 3, 5, 6],
            objective_trace: vec![],
            penalty_trace: vec![],
        });
        st.phase = Phase::Done;
        assert_eq!(derive_final(&st).unwrap().argmax(), vec![2, 3, 2, 2, 0, 2, 2]);
    }

    #[test]
    fn shape_changing_layers_cannot_be_omitted() {
        let spec = SuperNetSpec::default_miniature();
        let v = build_vital_supernet(&spec, &vital_by_rule(&spec)).unwrap();
        assert_eq!(v.num_layers(), 2);
        let wrong = VitalSet { layers: [1].into_iter().collect() };
        assert!(build_vital_supernet(&spec, &wrong).is_err());
        let all = VitalSet { layers: (0..7).collect() };
        assert_eq!(build_vital_supernet(&spec, &all).unwrap(), spec);
    }
}
