use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::space::SuperNetSpec;
use crate::{Error, Result};

/// Largest shortcut count for which paths are enumerated.
pub const MAX_RESIDUAL_BLOCKS: usize = 20;

/// A node of the information-flow graph.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BlockNode {
    Input,
    Output,
    /// Where a block's transform and shortcut meet; not a block itself.
    Junction(usize),
    Stem,
    Layer(usize),
    Head,
}

impl BlockNode {
    pub fn is_block(self) -> bool {
        matches!(self, Self::Stem | Self::Layer(_) | Self::Head)
    }
}

/// Acyclic graph with one source and one sink.
///
/// A residual layer `y = F(x) + x` contributes two edges out of its input
/// junction: the transform through the layer node, and a shortcut straight
/// to the next junction.
#[derive(Clone, Debug)]
pub struct BlockGraph {
    nodes: Vec<BlockNode>,
    succ: Vec<Vec<usize>>,
    source: usize,
    sink: usize,
    shortcuts: usize,
}

impl BlockGraph {
    /// Builds and validates a graph from explicit edges.
    pub fn new(nodes: Vec<BlockNode>, edges: &[(usize, usize)]) -> Result<Self> {
        let n = nodes.len();
        let mut succ = vec![Vec::new(); n];
        let mut indeg = vec![0usize; n];
        for &(a, b) in edges {
            if a >= n || b >= n {
                return Err(Error::InvalidArgument(format!("edge ({a}, {b}) outside {n} nodes")));
            }
            succ[a].push(b);
            indeg[b] += 1;
        }
        let sources: Vec<usize> = (0..n).filter(|&i| indeg[i] == 0).collect();
        let sinks: Vec<usize> = (0..n).filter(|&i| succ[i].is_empty()).collect();
        if sources.len() != 1 || sinks.len() != 1 {
            return Err(Error::InvalidArgument(format!(
                "block graph needs one source and one sink, found {} and {}",
                sources.len(),
                sinks.len()
            )));
        }
        // Kahn's algorithm doubles as the cycle check
        let mut left = indeg.clone();
        let mut queue = sources.clone();
        let mut seen = 0;
        while let Some(v) = queue.pop() {
            seen += 1;
            for &w in &succ[v] {
                left[w] -= 1;
                if left[w] == 0 {
                    queue.push(w);
                }
            }
        }
        if seen != n {
            return Err(Error::InvalidArgument("block graph has a cycle".into()));
        }
        let shortcuts = edges
            .iter()
            .filter(|&&(a, b)| !nodes[a].is_block() && !nodes[b].is_block())
            .count();
        Ok(Self {
            nodes,
            succ,
            source: sources[0],
            sink: sinks[0],
            shortcuts,
        })
    }

    /// Serial chain `input → stem → layers → head → output` where layer `l`
    /// also has a shortcut iff `residual[l]`.
    pub fn serial(residual: &[bool]) -> Self {
        let l = residual.len();
        let mut nodes = vec![BlockNode::Input, BlockNode::Stem];
        nodes.extend((0..=l).map(BlockNode::Junction));
        nodes.extend((0..l).map(BlockNode::Layer));
        nodes.extend([BlockNode::Head, BlockNode::Output]);
        let junction = |i: usize| 2 + i;
        let layer = |i: usize| 3 + l + i;
        let (head, output) = (3 + 2 * l, 4 + 2 * l);
        let mut edges = vec![(0, 1), (1, junction(0))];
        for (i, &r) in residual.iter().enumerate() {
            edges.push((junction(i), layer(i)));
            edges.push((layer(i), junction(i + 1)));
            if r {
                edges.push((junction(i), junction(i + 1)));
            }
        }
        edges.extend([(junction(l), head), (head, output)]);
        Self::new(nodes, &edges).expect("serial graphs are well formed")
    }

    pub fn from_spec(spec: &SuperNetSpec) -> Self {
        let residual: Vec<bool> = spec.layers.iter().map(|l| l.is_residual()).collect();
        Self::serial(&residual)
    }

    pub fn nodes(&self) -> &[BlockNode] {
        &self.nodes
    }

    /// Number of shortcut edges (`m`).
    pub fn residual_blocks(&self) -> usize {
        self.shortcuts
    }
}

/// Every source-to-sink path as a list of node indices.
pub fn enumerate_paths(g: &BlockGraph) -> Result<Vec<Vec<usize>>> {
    if g.shortcuts > MAX_RESIDUAL_BLOCKS {
        return Err(Error::InvalidArgument(format!(
            "{} residual blocks would give 2^{} paths; enumeration is limited to {MAX_RESIDUAL_BLOCKS}",
            g.shortcuts, g.shortcuts
        )));
    }
    let mut paths = Vec::new();
    let mut stack = vec![g.source];
    fn walk(g: &BlockGraph, stack: &mut Vec<usize>, paths: &mut Vec<Vec<usize>>) {
        let v = *stack.last().expect("nonempty");
        if v == g.sink {
            paths.push(stack.clone());
            return;
        }
        for &w in &g.succ[v] {
            stack.push(w);
            walk(g, stack, paths);
            stack.pop();
        }
    }
    walk(g, &mut stack, &mut paths);
    Ok(paths)
}

/// Vital layer indices; the stem and the head are always vital.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct VitalSet {
    pub layers: BTreeSet<usize>,
}

impl VitalSet {
    pub fn contains(&self, layer: usize) -> bool {
        self.layers.contains(&layer)
    }

    pub fn indices(&self) -> Vec<usize> {
        self.layers.iter().copied().collect()
    }

    /// Layers of an `n`-layer network that are not vital.
    pub fn complement(&self, n: usize) -> Vec<usize> {
        (0..n).filter(|l| !self.contains(*l)).collect()
    }
}

/// Blocks present on every enumerated path.
pub fn vital_by_intersection(g: &BlockGraph) -> Result<VitalSet> {
    let paths = enumerate_paths(g)?;
    let mut common: BTreeSet<usize> = paths[0].iter().copied().collect();
    for p in &paths[1..] {
        let here: BTreeSet<usize> = p.iter().copied().collect();
        common.retain(|v| here.contains(v));
    }
    let on_all = |node: BlockNode| common.iter().any(|&i| g.nodes[i] == node);
    if !on_all(BlockNode::Stem) || !on_all(BlockNode::Head) {
        return Err(Error::InvalidArgument("stem and head must lie on every path".into()));
    }
    let layers = common
        .iter()
        .filter_map(|&i| match g.nodes[i] {
            BlockNode::Layer(l) => Some(l),
            _ => None,
        })
        .collect();
    Ok(VitalSet { layers })
}

/// Layers that downsample or change the channel count (the layers without a
/// shortcut).
pub fn vital_by_rule(spec: &SuperNetSpec) -> VitalSet {
    let layers = spec
        .layers
        .iter()
        .filter(|l| l.stride != 1 || l.out_channels != l.in_channels)
        .map(|l| l.index)
        .collect();
    VitalSet { layers }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn path_counts() {
        assert_eq!(enumerate_paths(&BlockGraph::serial(&[false; 4])).unwrap().len(), 1);
        assert_eq!(enumerate_paths(&BlockGraph::serial(&[true; 3])).unwrap().len(), 8);
        assert_eq!(enumerate_paths(&BlockGraph::serial(&[true; 10])).unwrap().len(), 1024);
        assert!(enumerate_paths(&BlockGraph::serial(&[true; 21])).is_err());
    }

    #[test]
    fn chain_and_single_residual() {
        let v = vital_by_intersection(&BlockGraph::serial(&[false; 3])).unwrap();
        assert_eq!(v.indices(), vec![0, 1, 2]);
        let v = vital_by_intersection(&BlockGraph::serial(&[false, true, false])).unwrap();
        assert_eq!(v.indices(), vec![0, 2]);
    }

    #[test]
    fn default_space_agrees() {
        let spec = SuperNetSpec::default_miniature();
        let rule = vital_by_rule(&spec);
        assert_eq!(rule.indices(), vec![1, 4]);
        assert_eq!(vital_by_intersection(&BlockGraph::from_spec(&spec)).unwrap(), rule);
    }

    #[test]
    fn rejects_two_sources_and_cycles() {
        use BlockNode::*;
        assert!(BlockGraph::new(vec![Input, Stem, Output], &[(0, 2)]).is_err());
        assert!(BlockGraph::new(vec![Input, Stem, Head, Output], &[(0, 1), (1, 2), (2, 1), (2, 3)]).is_err());
    }
}
