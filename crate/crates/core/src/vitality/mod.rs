//! Which blocks every input-to-output path runs through, and the
//! channel-masking probe that measures how much each block matters.

mod graph;
mod probe;

pub use graph::{enumerate_paths, vital_by_intersection, vital_by_rule, BlockGraph, BlockNode, VitalSet, MAX_RESIDUAL_BLOCKS};
pub use probe::{apply_channel_mask, draw_channel_mask, mask_channels, probe_importance, ProbeConfig, ProbeReport, ProbeRow, DEFAULT_P_LEVELS};
