use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{LayerSpec, OpSpec, SuperNetSpec};
use crate::tensor::{Graph, Var};
use crate::{Error, Result, Scalar};

/// A resource objective with a built-in cost model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    /// Multiply–accumulate count of one forward pass on a single image.
    Flops,
    /// Trainable scalars: weights, biases and batchnorm affine parameters.
    Params,
}

impl Objective {
    pub fn name(self) -> &'static str {
        match self {
            Objective::Flops => "flops",
            Objective::Params => "params",
        }
    }
}

impl fmt::Display for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Objective {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "flops" => Ok(Objective::Flops),
            "params" => Ok(Objective::Params),
            other => Err(Error::InvalidArgument(format!("unknown objective `{other}`"))),
        }
    }
}

/// A resource target, absolute or as a fraction of the objective's maximum.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Target {
    Absolute(f64),
    PercentOfMax(f64),
}

impl Target {
    pub fn resolve(self, max: f64) -> f64 {
        match self {
            Target::Absolute(v) => v,
            Target::PercentOfMax(p) => p / 100.0 * max,
        }
    }
}

impl FromStr for Target {
    type Err = Error;

    /// Accepts `"1.5e6"` or `"50%M"` / `"50%"`.
    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim();
        let bad = || Error::InvalidArgument(format!("cannot parse target `{s}`"));
        if let Some(p) = t.strip_suffix("%M").or_else(|| t.strip_suffix('%')) {
            let v: f64 = p.trim().parse().map_err(|_| bad())?;
            return Ok(Target::PercentOfMax(v));
        }
        t.parse().map(Target::Absolute).map_err(|_| bad())
    }
}

impl Serialize for Target {
    fn serialize<Ser: serde::Serializer>(&self, s: Ser) -> std::result::Result<Ser::Ok, Ser::Error> {
        match *self {
            Target::Absolute(v) => s.serialize_f64(v),
            Target::PercentOfMax(p) => s.serialize_str(&format!("{p}%M")),
        }
    }
}

impl<'de> Deserialize<'de> for Target {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(Target::Absolute(v)),
            Raw::Text(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

/// MACs of a bias-free convolution producing an `out_h × out_w` map.
pub fn conv_macs(
    out_h: usize,
    out_w: usize,
    in_ch: usize,
    out_ch: usize,
    kernel: usize,
    groups: usize,
) -> f64 {
    (out_h * out_w * (in_ch / groups) * out_ch * kernel * kernel) as f64
}

/// Weights of a bias-free convolution.
fn conv_params(in_ch: usize, out_ch: usize, kernel: usize, groups: usize) -> f64 {
    ((in_ch / groups) * out_ch * kernel * kernel) as f64
}

/// Cost of placing `op` in `layer` under `objective`.
pub fn op_cost(op: &OpSpec, layer: &LayerSpec, objective: Objective) -> Result<f64> {
    if let Some(reason) = op.inadmissible_reason(layer.in_channels, layer.out_channels, layer.stride) {
        let op_ix = layer.candidates.iter().position(|c| c == op).unwrap_or(usize::MAX);
        return Err(Error::Inadmissible {
            layer: layer.index,
            op: op_ix,
            reason,
        });
    }
    let &OpSpec::Mbconv {
        kernel,
        expansion,
        groups,
    } = op
    else {
        return Ok(0.0);
    };
    let (cin, cout) = (layer.in_channels, layer.out_channels);
    let mid = cin * expansion;
    let (h, w) = layer.input_resolution;
    let (ho, wo) = layer.output_resolution();
    Ok(match objective {
        Objective::Flops => {
            conv_macs(h, w, cin, mid, 1, groups)
                + conv_macs(ho, wo, mid, mid, kernel, mid)
                + conv_macs(ho, wo, mid, cout, 1, groups)
        }
        Objective::Params => {
            conv_params(cin, mid, 1, groups)
                + conv_params(mid, mid, kernel, mid)
                + conv_params(mid, cout, 1, groups)
                + 2.0 * (mid + mid + cout) as f64
        }
    })
}

/// Stem plus head cost, independent of the searched layers.
fn fixed_cost(net: &SuperNetSpec, objective: Objective) -> f64 {
    let s = &net.stem;
    let (ho, wo) = net.stem_output_resolution();
    let c = net.final_channels();
    let k = net.num_classes;
    match objective {
        Objective::Flops => conv_macs(ho, wo, s.in_ch, s.out_ch, s.kernel, 1) + (c * k) as f64,
        Objective::Params => {
            conv_params(s.in_ch, s.out_ch, s.kernel, 1)
                + 2.0 * s.out_ch as f64
                + (c * k) as f64
                + if net.head.bias { k as f64 } else { 0.0 }
        }
    }
}

/// Per-objective `L × O` cost grid with normalizers and targets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResourceTable {
    pub objective_names: Vec<String>,
    /// `costs[i][l][o]`; disallowed entries are zero.
    pub costs: Vec<Vec<Vec<f64>>>,
    /// Cost outside the searchable rows (stem, head, fixed layers).
    pub fixed: Vec<f64>,
    /// Largest attainable total per objective; always positive.
    pub max: Vec<f64>,
    pub targets: Vec<f64>,
    pub allowed: Vec<Vec<bool>>,
    /// Supernet layer index of each row.
    pub layers: Vec<usize>,
}

impl ResourceTable {
    /// Builds a table from arbitrary cost grids (e.g. measured latencies).
    pub fn from_costs(
        objective_names: Vec<String>,
        costs: Vec<Vec<Vec<f64>>>,
        fixed: Vec<f64>,
        targets: Vec<f64>,
        allowed: Vec<Vec<bool>>,
    ) -> Result<Self> {
        let n = objective_names.len();
        if n == 0 || costs.len() != n || fixed.len() != n || targets.len() != n {
            return Err(Error::InvalidArgument(
                "objective names, costs, fixed costs and targets must have equal nonzero length".into(),
            ));
        }
        let l = allowed.len();
        let o = allowed.first().map_or(0, Vec::len);
        for (i, grid) in costs.iter().enumerate() {
            if grid.len() != l || grid.iter().any(|r| r.len() != o) {
                return Err(Error::shape("resource_table", format!("objective {i} grid is not {l}x{o}")));
            }
            if grid.iter().flatten().any(|&c| !(c >= 0.0) || !c.is_finite()) {
                return Err(Error::InvalidArgument(format!("objective {i} has a negative or non-finite cost")));
            }
        }
        let mut costs = costs;
        for grid in &mut costs {
            for (row, ok) in grid.iter_mut().zip(&allowed) {
                row.iter_mut().zip(ok).filter(|(_, &a)| !a).for_each(|(c, _)| *c = 0.0);
            }
        }
        let mut table = Self {
            objective_names,
            costs,
            fixed,
            max: vec![0.0; n],
            targets,
            allowed,
            layers: (0..l).collect(),
        };
        table.refresh_max()?;
        Ok(table)
    }

    fn refresh_max(&mut self) -> Result<()> {
        for i in 0..self.num_objectives() {
            let body: f64 = self.costs[i]
                .iter()
                .zip(&self.allowed)
                .map(|(row, ok)| {
                    row.iter()
                        .zip(ok)
                        .filter(|(_, &a)| a)
                        .map(|(&c, _)| c)
                        .fold(0.0, f64::max)
                })
                .sum();
            self.max[i] = self.fixed[i] + body;
            if self.max[i] <= 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "objective `{}` has zero maximum cost",
                    self.objective_names[i]
                )));
            }
            if self.targets[i] > self.max[i] {
                return Err(Error::UnreachableTarget {
                    objective: self.objective_names[i].clone(),
                    target: self.targets[i],
                    max: self.max[i],
                });
            }
            if !(self.targets[i] >= 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "target for `{}` must be nonnegative",
                    self.objective_names[i]
                )));
            }
        }
        Ok(())
    }

    pub fn num_objectives(&self) -> usize {
        self.objective_names.len()
    }

    pub fn num_layers(&self) -> usize {
        self.allowed.len()
    }

    pub fn num_ops(&self) -> usize {
        self.allowed.first().map_or(0, Vec::len)
    }

    pub fn objective_index(&self, name: &str) -> Option<usize> {
        self.objective_names.iter().position(|n| n == name)
    }

    /// Minimum attainable total per objective (cheapest allowed op everywhere).
    pub fn min_cost(&self, i: usize) -> f64 {
        self.fixed[i]
            + self.costs[i]
                .iter()
                .zip(&self.allowed)
                .map(|(row, ok)| {
                    row.iter()
                        .zip(ok)
                        .filter(|(_, &a)| a)
                        .map(|(&c, _)| c)
                        .fold(f64::INFINITY, f64::min)
                })
                .sum::<f64>()
    }

    /// Keeps the rows for supernet layers `rows` (ascending) and folds the
    /// cost of each `(layer, op)` in `fixed_choices` into the fixed cost.
    pub fn restrict(&self, rows: &[usize], fixed_choices: &[(usize, usize)]) -> Result<Self> {
        let pos = |layer: usize| {
            self.layers
                .iter()
                .position(|&l| l == layer)
                .ok_or_else(|| Error::InvalidArgument(format!("layer {layer} is not a row of this table")))
        };
        let row_ix = rows.iter().map(|&l| pos(l)).collect::<Result<Vec<_>>>()?;
        let mut fixed = self.fixed.clone();
        for &(layer, op) in fixed_choices {
            let r = pos(layer)?;
            if !self.allowed[r].get(op).copied().unwrap_or(false) {
                return Err(Error::Inadmissible {
                    layer,
                    op,
                    reason: "fixed choice is not an allowed candidate".into(),
                });
            }
            for (i, f) in fixed.iter_mut().enumerate() {
                *f += self.costs[i][r][op];
            }
        }
        let mut table = Self {
            objective_names: self.objective_names.clone(),
            costs: self
                .costs
                .iter()
                .map(|grid| row_ix.iter().map(|&r| grid[r].clone()).collect())
                .collect(),
            fixed,
            max: vec![0.0; self.num_objectives()],
            targets: self.targets.clone(),
            allowed: row_ix.iter().map(|&r| self.allowed[r].clone()).collect(),
            layers: rows.to_vec(),
        };
        table.refresh_max()?;
        Ok(table)
    }

    /// Differentiable `sum(A ⊙ F_i) + fixed_i` for an `[L, O]` architecture var.
    pub fn resource_var<S: Scalar>(&self, g: &mut Graph<S>, arch: Var, i: usize) -> Result<Var> {
        let (l, o) = (self.num_layers(), self.num_ops());
        if g.shape(arch) != [l, o] {
            return Err(Error::shape(
                "resource_of",
                format!("architecture {:?} vs table {l}x{o}", g.shape(arch)),
            ));
        }
        let flat: Vec<S> = self.costs[i].iter().flatten().map(|&c| S::of(c)).collect();
        let weighted = g.mul_const(arch, &flat)?;
        let total = g.sum(weighted);
        Ok(g.add_scalar(total, S::of(self.fixed[i])))
    }

    /// Mean over objectives of `|R_i(A) − T_i| / M_i`, differentiable in `arch`.
    pub fn deviation_var<S: Scalar>(&self, g: &mut Graph<S>, arch: Var) -> Result<Var> {
        let n = self.num_objectives();
        let mut acc: Option<Var> = None;
        for i in 0..n {
            let r = self.resource_var(g, arch, i)?;
            let d = g.add_scalar(r, S::of(-self.targets[i]));
            let d = g.abs(d);
            let d = g.scale(d, S::of(1.0 / (self.max[i] * n as f64)));
            acc = Some(match acc {
                Some(a) => g.add(a, d)?,
                None => d,
            });
        }
        Ok(acc.expect("at least one objective"))
    }

    /// Plain-valued version of [`deviation_var`](Self::deviation_var).
    pub fn deviation(&self, arch: &ArchMatrix) -> Result<f64> {
        let n = self.num_objectives() as f64;
        let mut total = 0.0;
        for i in 0..self.num_objectives() {
            total += (resource_of(arch, self, i)? - self.targets[i]).abs() / self.max[i];
        }
        Ok(total / n)
    }

    /// Whether every objective of `arch` lies within `rel` of its target.
    pub fn within(&self, arch: &ArchMatrix, rel: f64) -> Result<bool> {
        for i in 0..self.num_objectives() {
            let r = resource_of(arch, self, i)?;
            if (r - self.targets[i]).abs() > rel * self.targets[i] {
                return Ok(false);
            }
        }
        Ok(true)
    }
}

/// Builds the cost table for `net` with one objective per target entry
/// (ordered by name).
pub fn build_resource_table(
    net: &SuperNetSpec,
    targets: &BTreeMap<Objective, Target>,
) -> Result<ResourceTable> {
    if targets.is_empty() {
        return Err(Error::InvalidArgument("at least one resource target is required".into()));
    }
    let allowed: Vec<Vec<bool>> = net.layers.iter().map(|l| l.allowed.clone()).collect();
    let mut names = Vec::new();
    let mut costs = Vec::new();
    let mut fixed = Vec::new();
    let mut resolved = Vec::new();
    for (&obj, &target) in targets {
        let grid = net
            .layers
            .iter()
            .map(|l| {
                l.candidates
                    .iter()
                    .zip(&l.allowed)
                    .map(|(op, &ok)| if ok { op_cost(op, l, obj) } else { Ok(0.0) })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        let fc = fixed_cost(net, obj);
        let max = fc
            + grid
                .iter()
                .map(|row| row.iter().copied().fold(0.0, f64::max))
                .sum::<f64>();
        names.push(obj.name().to_string());
        costs.push(grid);
        fixed.push(fc);
        resolved.push(target.resolve(max));
    }
    ResourceTable::from_costs(names, costs, fixed, resolved, allowed)
}

/// `L × O` architecture selection; rows are probability vectors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl ArchMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape(
                "arch_matrix",
                format!("{rows}x{cols} needs {} entries, got {}", rows * cols, data.len()),
            ));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn one_hot(choices: &[usize], cols: usize) -> Result<Self> {
        let mut data = vec![0.0; choices.len() * cols];
        for (r, &c) in choices.iter().enumerate() {
            if c >= cols {
                return Err(Error::InvalidArgument(format!("row {r}: choice {c} out of range {cols}")));
            }
            data[r * cols + c] = 1.0;
        }
        Ok(Self {
            rows: choices.len(),
            cols,
            data,
        })
    }

    /// Uniform over the allowed entries of each row.
    pub fn uniform(allowed: &[Vec<bool>]) -> Self {
        let cols = allowed.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(allowed.len() * cols);
        for row in allowed {
            let k = row.iter().filter(|&&a| a).count() as f64;
            data.extend(row.iter().map(|&a| if a { 1.0 / k } else { 0.0 }));
        }
        Self {
            rows: allowed.len(),
            cols,
            data,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn is_row_stochastic(&self, tol: f64) -> bool {
        (0..self.rows).all(|r| {
            let row = self.row(r);
            row.iter().all(|&v| v >= -tol) && (row.iter().sum::<f64>() - 1.0).abs() <= tol
        })
    }

    pub fn is_one_hot(&self) -> bool {
        (0..self.rows).all(|r| {
            let row = self.row(r);
            row.iter().filter(|&&v| v == 1.0).count() == 1 && row.iter().all(|&v| v == 0.0 || v == 1.0)
        })
    }

    /// Per-row argmax; ties go to the lowest index.
    pub fn argmax(&self) -> Vec<usize> {
        (0..self.rows).map(|r| argmax(self.row(r))).collect()
    }

    /// `λ·self + (1−λ)·other`.
    pub fn mix(&self, other: &Self, lambda: f64) -> Result<Self> {
        if (self.rows, self.cols) != (other.rows, other.cols) {
            return Err(Error::shape("arch_mix", "architectures differ in shape"));
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| lambda * a + (1.0 - lambda) * b)
            .collect();
        Ok(Self { data, ..*self })
    }
}

/// Index of the first maximum.
pub(crate) fn argmax<T: PartialOrd + Copy>(xs: &[T]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// `sum(A ⊙ F_i) + fixed_i`.
pub fn resource_of(arch: &ArchMatrix, table: &ResourceTable, objective: usize) -> Result<f64> {
    if arch.rows != table.num_layers() || arch.cols != table.num_ops() {
        return Err(Error::shape(
            "resource_of",
            format!(
                "architecture {}x{} vs table {}x{}",
                arch.rows,
                arch.cols,
                table.num_layers(),
                table.num_ops()
            ),
        ));
    }
    if objective >= table.num_objectives() {
        return Err(Error::InvalidArgument(format!("objective {objective} out of range")));
    }
    let body: f64 = table.costs[objective]
        .iter()
        .flatten()
        .zip(&arch.data)
        .map(|(c, a)| c * a)
        .sum();
    Ok(body + table.fixed[objective])
}
