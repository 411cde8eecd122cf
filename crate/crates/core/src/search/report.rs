use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::config::SearchConfig;
use super::engine::SearchState;
use crate::space::{build_resource_table, resource_of, ArchMatrix, Objective, ResourceTable, SuperNetSpec, Target};
use crate::Result;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerEntry {
    pub name: String,
    pub chosen_op: String,
    pub op_index: usize,
}

/// FLOPs and parameter count of a one-hot architecture.
pub fn network_resources(spec: &SuperNetSpec, arch: &ArchMatrix) -> Result<(f64, f64)> {
    let full: BTreeMap<Objective, Target> = [
        (Objective::Flops, Target::PercentOfMax(100.0)),
        (Objective::Params, Target::PercentOfMax(100.0)),
    ]
    .into();
    let table = build_resource_table(spec, &full)?;
    let f = resource_of(arch, &table, table.objective_index("flops").expect("present"))?;
    let p = resource_of(arch, &table, table.objective_index("params").expect("present"))?;
    Ok((f, p))
}

/// The architecture file written by a search run.
pub fn architecture_json(
    spec: &SuperNetSpec,
    arch: &ArchMatrix,
    table: &ResourceTable,
    cfg: &SearchConfig,
    state: &SearchState,
) -> Result<serde_json::Value> {
    let names = spec.block_names();
    let layers: Vec<LayerEntry> = arch
        .argmax()
        .into_iter()
        .enumerate()
        .map(|(l, o)| LayerEntry {
            name: names[l].clone(),
            chosen_op: spec.layers[l].candidates[o].label(),
            op_index: o,
        })
        .collect();
    let (flops, params) = network_resources(spec, arch)?;
    let targets: BTreeMap<&str, f64> = table
        .objective_names
        .iter()
        .map(String::as_str)
        .zip(table.targets.iter().copied())
        .collect();
    Ok(json!({
        "layers": layers,
        "resources": {"flops": flops, "params": params},
        "targets": targets,
        "vital_layers": state.vital_layers,
        "config": cfg,
        "seed": cfg.seed,
        "loss_traces": {
            "weights": state.weight_loss,
            "arch": state.arch_loss,
            "deviation": state.deviation,
        },
    }))
}
