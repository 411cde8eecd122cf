//! Serial supernet description, resource accounting, and executable networks.

mod cost;
mod network;
mod spec;

pub use cost::{
    build_resource_table, conv_macs, op_cost, resource_of, ArchMatrix, Objective, ResourceTable,
    Target,
};
pub use network::{BlockMask, ForwardMode, ForwardOptions, ForwardOutput, LayerChoice, Network, ProbeBlock};
pub use spec::{HeadSpec, LayerFile, LayerSpec, OpSpec, SpaceFile, StemSpec, SuperNetSpec};
