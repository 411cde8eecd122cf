use std::fmt::Write as _;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::sampler::{sample_arch, sample_arch_var, LogitMatrix, Sampler, SamplerKind};
use crate::rng::{seeded, standard_normal};
use crate::space::{resource_of, ResourceTable};
use crate::tensor::{Adam, AdamConfig, Graph, ParamStore, Tensor, Var};
use crate::{Error, Result, Scalar};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProposalConfig {
    pub m: usize,
    pub iterations: usize,
    pub alpha: f64,
    pub beta: f64,
    /// Temperature of the fitting sampler.
    pub tau: f64,
    pub sampler: SamplerKind,
    pub lr: f64,
    /// Standard deviation of the initial logits.
    pub init_std: f64,
    /// Architectures drawn per proposal per step (their deviations are averaged).
    pub samples: usize,
    pub seed: u64,
}

impl Default for ProposalConfig {
    fn default() -> Self {
        Self {
            m: 8,
            iterations: 1000,
            alpha: 5.0,
            beta: 1e-2,
            tau: 1.0,
            sampler: SamplerKind::GumbelSoftmax,
            lr: 0.01,
            init_std: 1.0,
            samples: 16,
            seed: 0,
        }
    }
}

/// Fitted proposals `Θ` with mixture logits `Π` over the rows of a table.
#[derive(Clone, Debug, PartialEq)]
pub struct ProposalSet {
    pub thetas: Vec<LogitMatrix>,
    pub pi_logits: Vec<f64>,
    pub alpha: f64,
    pub beta: f64,
    pub tau: f64,
    pub objective_names: Vec<String>,
    pub targets: Vec<f64>,
    /// Supernet layer of each logit row.
    pub layers: Vec<usize>,
    pub objective_trace: Vec<f64>,
    pub penalty_trace: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProposalFile {
    m: usize,
    alpha: f64,
    beta: f64,
    tau: f64,
    /// `null` marks a pinned (`-inf`) entry.
    thetas: Vec<Vec<Vec<Option<f64>>>>,
    pi: Vec<f64>,
    objectives: Vec<String>,
    targets: Vec<f64>,
    layers: Vec<usize>,
    objective_trace: Vec<f64>,
    penalty_trace: Vec<f64>,
}

impl ProposalSet {
    pub fn m(&self) -> usize {
        self.thetas.len()
    }

    pub fn to_json(&self) -> serde_json::Value {
        let thetas = self
            .thetas
            .iter()
            .map(|t| {
                (0..t.rows())
                    .map(|r| t.row(r).iter().map(|&v| v.is_finite().then_some(v)).collect())
                    .collect()
            })
            .collect();
        let file = ProposalFile {
            m: self.m(),
            alpha: self.alpha,
            beta: self.beta,
            tau: self.tau,
            thetas,
            pi: self.pi_logits.clone(),
            objectives: self.objective_names.clone(),
            targets: self.targets.clone(),
            layers: self.layers.clone(),
            objective_trace: self.objective_trace.clone(),
            penalty_trace: self.penalty_trace.clone(),
        };
        serde_json::to_value(file).expect("plain data serializes")
    }

    pub fn from_json(value: serde_json::Value) -> Result<Self> {
        let f: ProposalFile = serde_json::from_value(value)?;
        if f.thetas.len() != f.m || f.pi.len() != f.m || f.m == 0 {
            return Err(Error::InvalidArgument(format!(
                "proposal file declares m={} but has {} thetas and {} mixture logits",
                f.m,
                f.thetas.len(),
                f.pi.len()
            )));
        }
        let thetas = f
            .thetas
            .into_iter()
            .map(|rows| {
                let cols = rows.first().map_or(0, Vec::len);
                let n = rows.len();
                let data = rows
                    .into_iter()
                    .flatten()
                    .map(|v| v.unwrap_or(f64::NEG_INFINITY))
                    .collect();
                LogitMatrix::new(n, cols, data)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            thetas,
            pi_logits: f.pi,
            alpha: f.alpha,
            beta: f.beta,
            tau: f.tau,
            objective_names: f.objectives,
            targets: f.targets,
            layers: f.layers,
            objective_trace: f.objective_trace,
            penalty_trace: f.penalty_trace,
        })
    }
}

/// Mean over proposals of the normalized target deviation of one
/// sample from each.
pub fn proposal_objective_var<S: Scalar, R: Rng + ?Sized>(
    g: &mut Graph<S>,
    thetas: &[Var],
    table: &ResourceTable,
    sampler: Sampler,
    rng: &mut R,
) -> Result<Var> {
    if thetas.is_empty() {
        return Err(Error::InvalidArgument("no proposals".into()));
    }
    let mut acc: Option<Var> = None;
    for &t in thetas {
        let a = sample_arch_var(g, t, sampler, rng)?;
        let d = table.deviation_var(g, a.arch)?;
        acc = Some(match acc {
            Some(x) => g.add(x, d)?,
            None => d,
        });
    }
    Ok(g.scale(acc.expect("nonempty"), S::of(1.0 / thetas.len() as f64)))
}

pub fn proposal_objective<R: Rng + ?Sized>(
    thetas: &[LogitMatrix],
    table: &ResourceTable,
    sampler: Sampler,
    rng: &mut R,
) -> Result<f64> {
    let mut g = Graph::<f64>::new();
    let vars: Vec<Var> = thetas.iter().map(|t| g.constant(t.to_tensor())).collect();
    let v = proposal_objective_var(&mut g, &vars, table, sampler, rng)?;
    Ok(g.data(v)[0])
}

/// Rows of the penalty matrix: row-wise softmax of each proposal, flattened
/// and scaled to unit length.
fn unit_rows<S: Scalar>(g: &mut Graph<S>, thetas: &[Var]) -> Result<Var> {
    let probs: Vec<Var> = thetas.iter().map(|&t| g.softmax(t)).collect();
    let stacked = g.stack_rows(&probs)?;
    g.normalize_rows(stacked)
}

/// `Σ |Θ Θᵀ − I|` over unit-normalized softmax rows. The diagonal of the Gram
/// matrix is exactly one by construction, so only off-diagonal entries are
/// summed; this keeps the single-proposal penalty at exactly zero.
pub fn orthogonality_penalty_var<S: Scalar>(g: &mut Graph<S>, thetas: &[Var]) -> Result<Var> {
    let m = thetas.len();
    if m == 0 {
        return Err(Error::InvalidArgument("no proposals".into()));
    }
    let rows = unit_rows(g, thetas)?;
    let t = g.transpose(rows)?;
    let gram = g.matmul(rows, t)?;
    let mut off = vec![S::one(); m * m];
    (0..m).for_each(|i| off[i * m + i] = S::zero());
    let off = g.constant(Tensor::new(vec![m, m], off)?);
    let masked = g.mul(gram, off)?;
    let abs = g.abs(masked);
    Ok(g.sum(abs))
}

pub fn orthogonality_penalty(thetas: &[LogitMatrix]) -> Result<f64> {
    let mut g = Graph::<f64>::new();
    let vars: Vec<Var> = thetas.iter().map(|t| g.constant(t.to_tensor())).collect();
    let v = orthogonality_penalty_var(&mut g, &vars)?;
    Ok(g.data(v)[0])
}

/// Mean `|⟨row_i, row_j⟩|` over pairs `i < j` of the penalty rows.
pub fn mean_abs_inner(thetas: &[LogitMatrix]) -> Result<f64> {
    let m = thetas.len();
    if m < 2 {
        return Ok(0.0);
    }
    let mut g = Graph::<f64>::new();
    let vars: Vec<Var> = thetas.iter().map(|t| g.constant(t.to_tensor())).collect();
    let rows = unit_rows(&mut g, &vars)?;
    let n = g.shape(rows)[1];
    let data = g.data(rows);
    let mut total = 0.0;
    for i in 0..m {
        for j in i + 1..m {
            let dot: f64 = (0..n).map(|k| data[i * n + k] * data[j * n + k]).sum();
            total += dot.abs();
        }
    }
    Ok(total / (m * (m - 1) / 2) as f64)
}

/// Fits `cfg.m` proposals to the targets of `table` with Adam. The
/// penalty enters the loss as its mean over off-diagonal entries.
pub fn optimize_proposals(table: &ResourceTable, cfg: &ProposalConfig) -> Result<ProposalSet> {
    if cfg.m == 0 || cfg.iterations == 0 || cfg.samples == 0 {
        return Err(Error::InvalidArgument(
            "proposal fitting needs m >= 1, iterations >= 1 and samples >= 1".into(),
        ));
    }
    let sampler = Sampler::new(cfg.sampler, cfg.tau)?;
    let mut init_rng = seeded(cfg.seed, 0);
    let mut noise_rng = seeded(cfg.seed, 1);
    let mut store = ParamStore::<f64>::new();
    let ids: Vec<_> = (0..cfg.m)
        .map(|j| {
            let t = LogitMatrix::from_fn(&table.allowed, |_, _| cfg.init_std * standard_normal(&mut init_rng))?;
            Ok(store.add(format!("theta{j}"), t.to_tensor()))
        })
        .collect::<Result<_>>()?;
    let mut adam = Adam::new(AdamConfig::with_lr(cfg.lr));
    // the penalty sums m(m-1) off-diagonal terms; averaging them keeps β
    // comparable to the per-proposal mean objective for any m
    let pen_scale = 1.0 / (cfg.m * (cfg.m - 1)).max(1) as f64;
    let mut objective_trace = Vec::with_capacity(cfg.iterations);
    let mut penalty_trace = Vec::with_capacity(cfg.iterations);
    for _ in 0..cfg.iterations {
        let mut g = Graph::new();
        let vars: Vec<Var> = ids.iter().map(|&id| g.param(&store, id)).collect();
        let mut obj = proposal_objective_var(&mut g, &vars, table, sampler, &mut noise_rng)?;
        for _ in 1..cfg.samples {
            let more = proposal_objective_var(&mut g, &vars, table, sampler, &mut noise_rng)?;
            obj = g.add(obj, more)?;
        }
        let obj = g.scale(obj, 1.0 / cfg.samples.max(1) as f64);
        let pen = orthogonality_penalty_var(&mut g, &vars)?;
        objective_trace.push(g.data(obj)[0]);
        penalty_trace.push(g.data(pen)[0]);
        let weighted = g.scale(pen, cfg.beta * pen_scale);
        let loss = g.add(obj, weighted)?;
        g.backward(loss)?;
        g.accumulate_param_grads(&mut store)?;
        adam.step(&mut store, &ids)?;
    }
    let thetas = ids
        .iter()
        .map(|&id| LogitMatrix::new(table.num_layers(), table.num_ops(), store.get(id).data().to_vec()))
        .collect::<Result<Vec<_>>>()?;
    Ok(ProposalSet {
        thetas,
        pi_logits: vec![0.0; cfg.m],
        alpha: cfg.alpha,
        beta: cfg.beta,
        tau: cfg.tau,
        objective_names: table.objective_names.clone(),
        targets: table.targets.clone(),
        layers: table.layers.clone(),
        objective_trace,
        penalty_trace,
    })
}

/// Costs (one per objective) of `n` architectures sampled from `theta`.
pub fn sample_costs<R: Rng + ?Sized>(
    theta: &LogitMatrix,
    table: &ResourceTable,
    sampler: Sampler,
    n: usize,
    rng: &mut R,
) -> Result<Vec<Vec<f64>>> {
    (0..n)
        .map(|_| {
            let a = sample_arch(theta, sampler, rng);
            (0..table.num_objectives()).map(|i| resource_of(&a, table, i)).collect()
        })
        .collect()
}

/// `tau,<objective>...` rows for scatter plots.
pub fn scatter_csv(objectives: &[String], series: &[(f64, Vec<Vec<f64>>)]) -> String {
    let mut out = String::from("tau");
    for o in objectives {
        out.push(',');
        out.push_str(o);
    }
    out.push('\n');
    for (tau, rows) in series {
        for r in rows {
            write!(out, "{tau}").expect("string write");
            for v in r {
                write!(out, ",{v:.3}").expect("string write");
            }
            out.push('\n');
        }
    }
    out
}
