use std::path::{Path, PathBuf};

use hournas::data::Checkpoint;
use hournas::proposal::{optimize_proposals, sample_arch, scatter_csv, Sampler};
use hournas::rng::seeded;
use hournas::search::{architecture_json, network_resources, run_search};
use hournas::space::{resource_of, ArchMatrix, Network, SpaceFile, SuperNetSpec};
use hournas::train::{evaluate, retrain, TrainConfig};
use hournas::vitality::{probe_importance, vital_by_rule, ProbeConfig};
use serde_json::{json, Value};

use crate::config::Loaded;
use crate::error::CliError;
use crate::output::{create_dir, provenance, write_csv, write_json};

pub const ARCHITECTURE_FILE: &str = "architecture.json";
pub const PROPOSALS_FILE: &str = "proposals.json";
pub const SCATTER_FILE: &str = "scatter.csv";
pub const MODEL_FILE: &str = "model.ckpt";
pub const RETRAIN_FILE: &str = "retrain.json";
pub const EVAL_FILE: &str = "eval.json";
pub const PROBE_CSV: &str = "probe.csv";
pub const PROBE_PLOT: &str = "probe_plot.json";
/// Per-epoch search checkpoints go here, inside the output directory.
pub const SEARCH_CKPT_DIR: &str = "search_checkpoints";

/// Relative band used to summarize proposal concentration.
const BAND: f64 = 0.10;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Probe,
    Propose,
    Search,
    Retrain,
    Eval,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Probe => "probe",
            Command::Propose => "propose",
            Command::Search => "search",
            Command::Retrain => "retrain",
            Command::Eval => "eval",
        }
    }
}

/// Explicit artifact paths; defaults live in the output directory.
#[derive(Clone, Debug, Default)]
pub struct Artifacts {
    pub arch: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
}

/// Runs one command and returns the main JSON document it wrote.
pub fn run(cmd: Command, l: &Loaded, a: &Artifacts) -> Result<Value, CliError> {
    create_dir(&l.cfg.out)?;
    match cmd {
        Command::Search => search(l),
        Command::Propose => propose(l),
        Command::Retrain => retrain_cmd(l, a),
        Command::Eval => eval(l, a),
        Command::Probe => probe(l, a),
    }
}

fn stamp(cmd: Command, l: &Loaded) -> Value {
    provenance(cmd.name(), &l.hash, l.seed())
}

fn out(l: &Loaded, name: &str) -> PathBuf {
    l.cfg.out.join(name)
}

pub fn search(l: &Loaded) -> Result<Value, CliError> {
    let spec = l.spec()?;
    let table = l.table(&spec)?;
    let (ds, split) = l.dataset(&spec)?;
    let ckpt = out(l, SEARCH_CKPT_DIR);
    create_dir(&ckpt)?;
    let res = run_search::<f64>(&spec, &table, &ds, &split, &l.cfg.search, Some(&ckpt))?;
    let doc = architecture_json(&spec, &res.arch, &table, &l.cfg.search, &res.state)?;
    write_json(&out(l, ARCHITECTURE_FILE), doc, stamp(Command::Search, l))
}

pub fn propose(l: &Loaded) -> Result<Value, CliError> {
    let spec = l.spec()?;
    let table = l.table(&spec)?;
    let set = optimize_proposals(&table, &l.cfg.search.proposal_config())?;
    let n = l.cfg.propose.samples;
    let mut series = Vec::new();
    let mut concentration = Vec::new();
    for (i, &tau) in l.cfg.propose.tau_list.iter().enumerate() {
        let sampler = Sampler::gumbel_softmax(tau)?;
        let mut rng = seeded(l.seed(), 0x5ca7_0000 + i as u64);
        // proposals take turns so every one is represented equally
        let rows = (0..n)
            .map(|s| {
                let a = sample_arch(&set.thetas[s % set.m()], sampler, &mut rng);
                (0..table.num_objectives()).map(|o| resource_of(&a, &table, o)).collect()
            })
            .collect::<hournas::Result<Vec<Vec<f64>>>>()?;
        let inside = rows
            .iter()
            .filter(|r| r.iter().zip(&table.targets).all(|(v, t)| (v - t).abs() <= BAND * t))
            .count();
        concentration.push(json!({"tau": tau, "within_band": inside as f64 / n as f64}));
        series.push((tau, rows));
    }
    write_csv(&out(l, SCATTER_FILE), &scatter_csv(&table.objective_names, &series), &l.hash, l.seed())?;
    let doc = json!({
        "proposals": set.to_json(),
        "scatter": {"sampler": "gumbel_softmax", "samples_per_tau": n, "band": BAND, "concentration": concentration},
    });
    write_json(&out(l, PROPOSALS_FILE), doc, stamp(Command::Propose, l))
}

/// Per-layer op indices of an architecture file, checked against `spec`.
pub fn read_architecture(path: &Path, spec: &SuperNetSpec) -> Result<Vec<usize>, CliError> {
    if !path.exists() {
        return Err(CliError::Data(format!(
            "architecture file {} does not exist (run `search` first)",
            path.display()
        )));
    }
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let bad = |m: &str| CliError::Data(format!("{}: {m}", path.display()));
    let v: Value = serde_json::from_str(&text).map_err(|e| bad(&e.to_string()))?;
    let layers = v["layers"].as_array().ok_or_else(|| bad("no `layers` array"))?;
    if layers.len() != spec.num_layers() {
        return Err(bad(&format!("{} layers, the space has {}", layers.len(), spec.num_layers())));
    }
    layers
        .iter()
        .zip(&spec.layers)
        .enumerate()
        .map(|(i, (entry, layer))| {
            let o = entry["op_index"].as_u64().ok_or_else(|| bad(&format!("layer {i} has no op_index")))? as usize;
            let op = layer.candidates.get(o).ok_or_else(|| bad(&format!("layer {i}: op {o} out of range")))?;
            if let Some(label) = entry["chosen_op"].as_str() {
                if label != op.label() {
                    return Err(bad(&format!("layer {i}: op {o} is {}, file says {label}", op.label())));
                }
            }
            Ok(o)
        })
        .collect()
}

pub fn retrain_cmd(l: &Loaded, a: &Artifacts) -> Result<Value, CliError> {
    let spec = l.spec()?;
    let arch_path = a.arch.clone().unwrap_or_else(|| out(l, ARCHITECTURE_FILE));
    let choices = read_architecture(&arch_path, &spec)?;
    let arch = ArchMatrix::one_hot(&choices, spec.num_ops())?;
    let (ds, split) = l.dataset(&spec)?;
    let (eds, eidx, eval_name) = l.eval_set(&spec)?;
    let r = &l.cfg.retrain;
    let tc = TrainConfig {
        epochs: r.epochs,
        batch_size: r.batch_size,
        lr: r.lr,
        seed: l.seed(),
    };
    let (net, acc) = retrain::<f64>(&spec, &arch, &ds, &split.train, (&eds, &eidx), &tc)?;
    let meta = json!({
        "space": spec.to_file(),
        "choices": choices,
        "accuracy": acc,
        "eval_set": eval_name,
        "config_sha256": l.hash,
        "seed": l.seed(),
        "retrain": r,
    });
    let ckpt = a.checkpoint.clone().unwrap_or_else(|| out(l, MODEL_FILE));
    if let Some(dir) = ckpt.parent() {
        create_dir(dir)?;
    }
    Checkpoint::new(meta, &net.named_tensors()).save(&ckpt)?;
    let (flops, params) = network_resources(&spec, &arch)?;
    let doc = json!({
        "choices": choices,
        "resources": {"flops": flops, "params": params},
        "accuracy": acc,
        "eval_set": eval_name,
        "eval_samples": eidx.len(),
        "checkpoint": ckpt.display().to_string(),
    });
    write_json(&out(l, RETRAIN_FILE), doc, stamp(Command::Retrain, l))
}

/// A trained model restored from a checkpoint written by `retrain`.
pub struct Model {
    pub spec: SuperNetSpec,
    pub choices: Vec<usize>,
    pub net: Network<f64>,
    pub meta: Value,
}

pub fn load_model(path: &Path) -> Result<Model, CliError> {
    if !path.exists() {
        return Err(CliError::Data(format!(
            "checkpoint {} does not exist (run `retrain` first)",
            path.display()
        )));
    }
    let ck = Checkpoint::load(path)?;
    let bad = |m: String| CliError::Data(format!("{}: {m}", path.display()));
    let file: SpaceFile =
        serde_json::from_value(ck.meta["space"].clone()).map_err(|e| bad(format!("space metadata: {e}")))?;
    let spec = SuperNetSpec::from_file(file)?;
    let choices: Vec<usize> =
        serde_json::from_value(ck.meta["choices"].clone()).map_err(|e| bad(format!("choices metadata: {e}")))?;
    let arch = ArchMatrix::one_hot(&choices, spec.num_ops()).map_err(|e| bad(e.to_string()))?;
    let mut net = Network::instantiate(&spec, &arch, &mut seeded(0, 0)).map_err(|e| bad(e.to_string()))?;
    net.load_named_tensors(&ck.tensors_as::<f64>())?;
    if !net.is_calibrated() {
        return Err(bad("batchnorm statistics missing".into()));
    }
    Ok(Model { spec, choices, net, meta: ck.meta })
}

pub fn eval(l: &Loaded, a: &Artifacts) -> Result<Value, CliError> {
    let path = a.checkpoint.clone().unwrap_or_else(|| out(l, MODEL_FILE));
    let m = load_model(&path)?;
    let (eds, eidx, eval_name) = l.eval_set(&m.spec)?;
    let acc = evaluate(&m.net, &m.choices, &eds, Some(&eidx), None)?;
    let recorded = m.meta["accuracy"].as_f64();
    let doc = json!({
        "accuracy": acc,
        "recorded_accuracy": recorded,
        "matches_recorded": recorded == Some(acc),
        "eval_set": eval_name,
        "eval_samples": eidx.len(),
        "checkpoint": path.display().to_string(),
    });
    write_json(&out(l, EVAL_FILE), doc, stamp(Command::Eval, l))
}

pub fn probe(l: &Loaded, a: &Artifacts) -> Result<Value, CliError> {
    let path = a.checkpoint.clone().unwrap_or_else(|| out(l, MODEL_FILE));
    let m = load_model(&path)?;
    let (eds, eidx, _) = l.eval_set(&m.spec)?;
    let pc = ProbeConfig {
        p_levels: l.cfg.probe.p_levels.clone(),
        seeds: l.cfg.probe.seeds,
        seed: l.seed(),
    };
    let vital = vital_by_rule(&m.spec);
    let report = probe_importance(&m.net, &m.choices, &eds, &eidx, &vital, &pc)?;
    write_csv(&out(l, PROBE_CSV), &report.to_csv(), &l.hash, l.seed())?;
    write_json(&out(l, PROBE_PLOT), report.plot_json(), stamp(Command::Probe, l))
}
