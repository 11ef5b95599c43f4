//! Block identification on a layer-dependency graph.
//!
//! Layers that neither are convolutions nor depend on one (input stems,
//! preprocessing) form the residue. The remaining layers are laid out in a
//! topological order keyed by (depth, declaration order), where depth is the
//! longest path from any source. Each convolution in that order is a
//! candidate cut, and a cut is kept only if every dependency edge that
//! crosses it starts at the layer just before the cut, so the block behind
//! the cut consumes a single tensor. Segments between kept cuts are the
//! elementary blocks: each one starts at its shallowest convolution, takes
//! every later layer that depends on it, and absorbs the next convolution
//! whenever a skip connection would otherwise leave a block from its middle
//! or bypass a whole block.
//!
//! Merging then fuses topologically adjacent elementary blocks down to a
//! requested count, minimising the largest merged parameter count and, among
//! those, the sum of squared block sizes.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Conv,
    NonConv,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub id: String,
    pub kind: LayerKind,
    pub param_count: u64,
}

/// Directed acyclic layer graph; edges are `(producer, consumer)` indices
/// into `layers`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGraph {
    layers: Vec<Layer>,
    edges: Vec<(usize, usize)>,
    order: Vec<usize>,
    depth: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum BlockifyError {
    #[error("graph has no layers")]
    Empty,
    #[error("duplicate layer id {0:?}")]
    DuplicateId(String),
    #[error("edge references unknown layer {0:?}")]
    UnknownLayer(String),
    #[error("edge index {0} out of range")]
    EdgeOutOfRange(usize),
    #[error("layer {0:?} depends on itself")]
    SelfLoop(String),
    #[error("graph is cyclic")]
    Cyclic,
    #[error("no blocks identifiable: graph has no convolutional layer")]
    NoConvLayers,
    #[error("target count must be at least 1")]
    ZeroTarget,
    #[error("target exceeds elementary blocks ({target} > {available})")]
    TargetExceedsElementary { target: usize, available: usize },
}

impl LayerGraph {
    pub fn new(layers: Vec<Layer>, edges: Vec<(usize, usize)>) -> Result<Self, BlockifyError> {
        if layers.is_empty() {
            return Err(BlockifyError::Empty);
        }
        let mut seen = BTreeMap::new();
        for (k, layer) in layers.iter().enumerate() {
            if seen.insert(layer.id.as_str(), k).is_some() {
                return Err(BlockifyError::DuplicateId(layer.id.clone()));
            }
        }
        for &(u, v) in &edges {
            for x in [u, v] {
                if x >= layers.len() {
                    return Err(BlockifyError::EdgeOutOfRange(x));
                }
            }
            if u == v {
                return Err(BlockifyError::SelfLoop(layers[u].id.clone()));
            }
        }
        let (order, depth) = topo_depth(layers.len(), &edges)?;
        Ok(LayerGraph {
            layers,
            edges,
            order,
            depth,
        })
    }

    /// Builds a graph whose edges name layers by id.
    pub fn from_ids<S: AsRef<str>>(
        layers: Vec<Layer>,
        edges: &[(S, S)],
    ) -> Result<Self, BlockifyError> {
        let index: BTreeMap<&str, usize> = layers
            .iter()
            .enumerate()
            .map(|(k, l)| (l.id.as_str(), k))
            .collect();
        let lookup = |id: &str| {
            index
                .get(id)
                .copied()
                .ok_or_else(|| BlockifyError::UnknownLayer(id.into()))
        };
        let edges = edges
            .iter()
            .map(|(u, v)| Ok((lookup(u.as_ref())?, lookup(v.as_ref())?)))
            .collect::<Result<Vec<_>, BlockifyError>>()?;
        LayerGraph::new(layers, edges)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    /// Longest-path distance from a source layer.
    pub fn depth(&self, layer: usize) -> usize {
        self.depth[layer]
    }

    /// Topological order, ties broken by depth and then declaration order.
    pub fn topological_order(&self) -> &[usize] {
        &self.order
    }
}

fn topo_depth(n: usize, edges: &[(usize, usize)]) -> Result<(Vec<usize>, Vec<usize>), BlockifyError> {
    let mut indegree = vec![0usize; n];
    let mut succ = vec![Vec::new(); n];
    for &(u, v) in edges {
        indegree[v] += 1;
        succ[u].push(v);
    }
    let mut depth = vec![0usize; n];
    let mut ready: Vec<usize> = (0..n).filter(|&v| indegree[v] == 0).collect();
    let mut visited = Vec::with_capacity(n);
    while let Some(u) = ready.pop() {
        visited.push(u);
        for &v in &succ[u] {
            depth[v] = depth[v].max(depth[u] + 1);
            indegree[v] -= 1;
            if indegree[v] == 0 {
                ready.push(v);
            }
        }
    }
    if visited.len() != n {
        return Err(BlockifyError::Cyclic);
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&v| (depth[v], v));
    Ok((order, depth))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Block {
    /// Layer indices in topological order; the first one is the entry layer
    /// and the last one the exit layer.
    pub layers: Vec<usize>,
    pub param_count: u64,
}

impl Block {
    pub fn entry(&self) -> usize {
        self.layers[0]
    }

    pub fn exit(&self) -> usize {
        self.layers[self.layers.len() - 1]
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockPartition {
    pub blocks: Vec<Block>,
    /// Layers outside every block, in topological order.
    pub residue: Vec<usize>,
}

/// Splits the graph into elementary blocks.
pub fn elementary_blocks(graph: &LayerGraph) -> Result<BlockPartition, BlockifyError> {
    let n = graph.layers.len();
    let mut conv_dependent = vec![false; n];
    let mut preds = vec![Vec::new(); n];
    for &(u, v) in &graph.edges {
        preds[v].push(u);
    }
    for &v in &graph.order {
        conv_dependent[v] = graph.layers[v].kind == LayerKind::Conv
            || preds[v].iter().any(|&u| conv_dependent[u]);
    }
    let residue: Vec<usize> = graph
        .order
        .iter()
        .copied()
        .filter(|&v| !conv_dependent[v])
        .collect();
    let body: Vec<usize> = graph
        .order
        .iter()
        .copied()
        .filter(|&v| conv_dependent[v])
        .collect();
    if body.is_empty() {
        return Err(BlockifyError::NoConvLayers);
    }
    // The shallowest conv-dependent layer is a convolution: any other one
    // has a conv ancestor of strictly smaller depth.
    debug_assert_eq!(graph.layers[body[0]].kind, LayerKind::Conv);

    let mut pos = vec![usize::MAX; n];
    for (p, &v) in body.iter().enumerate() {
        pos[v] = p;
    }
    // A cut at position c separates c - 1 from c. blocked[c] > 0 when an edge
    // crosses that cut from a layer other than c - 1.
    let mut blocked = vec![0isize; body.len() + 2];
    for &(u, v) in &graph.edges {
        if !(conv_dependent[u] && conv_dependent[v]) {
            continue;
        }
        let (pu, pv) = (pos[u], pos[v]);
        if pv >= pu + 2 {
            blocked[pu + 2] += 1;
            blocked[pv + 1] -= 1;
        }
    }
    let mut cuts = vec![0usize];
    let mut running = 0isize;
    for (p, &v) in body.iter().enumerate() {
        running += blocked[p];
        if p > 0 && running == 0 && graph.layers[v].kind == LayerKind::Conv {
            cuts.push(p);
        }
    }
    cuts.push(body.len());

    let blocks = cuts
        .windows(2)
        .map(|w| {
            let layers = body[w[0]..w[1]].to_vec();
            let param_count = layers.iter().map(|&v| graph.layers[v].param_count).sum();
            Block {
                layers,
                param_count,
            }
        })
        .collect();
    Ok(BlockPartition { blocks, residue })
}

/// Merges adjacent blocks until exactly `target_count` remain.
pub fn merge_blocks(
    partition: &BlockPartition,
    target_count: usize,
) -> Result<BlockPartition, BlockifyError> {
    let n = partition.blocks.len();
    if target_count == 0 {
        return Err(BlockifyError::ZeroTarget);
    }
    if target_count > n {
        return Err(BlockifyError::TargetExceedsElementary {
            target: target_count,
            available: n,
        });
    }
    let sizes: Vec<u64> = partition.blocks.iter().map(|b| b.param_count).collect();
    let groups = balanced_split(&sizes, target_count);
    let blocks = groups
        .windows(2)
        .map(|w| {
            let members = &partition.blocks[w[0]..w[1]];
            Block {
                layers: members.iter().flat_map(|b| b.layers.iter().copied()).collect(),
                param_count: members.iter().map(|b| b.param_count).sum(),
            }
        })
        .collect();
    Ok(BlockPartition {
        blocks,
        residue: partition.residue.clone(),
    })
}

/// Boundaries `0 = b_0 < b_1 < ... < b_k = n` of a contiguous split of
/// `sizes` into `k` groups with minimal maximum group sum, then minimal sum
/// of squared group sums. Ties prefer earlier boundaries.
pub fn balanced_split(sizes: &[u64], k: usize) -> Vec<usize> {
    let n = sizes.len();
    assert!(k >= 1 && k <= n);
    let mut prefix = vec![0u128; n + 1];
    for (i, &s) in sizes.iter().enumerate() {
        prefix[i + 1] = prefix[i] + s as u128;
    }
    let span = |a: usize, b: usize| prefix[b] - prefix[a];

    // best[g][i]: minimal max group sum splitting the first i items into g groups.
    const INF: u128 = u128::MAX;
    let mut best = vec![vec![INF; n + 1]; k + 1];
    best[0][0] = 0;
    for g in 1..=k {
        for i in g..=n {
            for s in (g - 1)..i {
                if best[g - 1][s] == INF {
                    continue;
                }
                let cand = best[g - 1][s].max(span(s, i));
                if cand < best[g][i] {
                    best[g][i] = cand;
                }
            }
        }
    }
    let cap = best[k][n];

    let mut cost = vec![vec![INF; n + 1]; k + 1];
    let mut from = vec![vec![0usize; n + 1]; k + 1];
    cost[0][0] = 0;
    for g in 1..=k {
        for i in g..=n {
            for s in (g - 1)..i {
                let w = span(s, i);
                if cost[g - 1][s] == INF || w > cap {
                    continue;
                }
                let cand = cost[g - 1][s] + w * w;
                if cand < cost[g][i] {
                    cost[g][i] = cand;
                    from[g][i] = s;
                }
            }
        }
    }
    let mut bounds = vec![n];
    let mut i = n;
    for g in (1..=k).rev() {
        i = from[g][i];
        bounds.push(i);
    }
    bounds.reverse();
    bounds
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PartitionViolation {
    #[error("layer {0:?} assigned more than once")]
    Overlap(String),
    #[error("layer {0:?} assigned nowhere")]
    Missing(String),
    #[error("block {0} is empty")]
    EmptyBlock(usize),
    #[error("edge {from:?} -> {to:?} runs backwards between blocks")]
    BackwardEdge { from: String, to: String },
    #[error("edge {from:?} -> {to:?} leaves a block before its exit layer")]
    LeavesMidBlock { from: String, to: String },
    #[error("edge {from:?} -> {to:?} bypasses a block")]
    BypassesBlock { from: String, to: String },
}

/// Verifies the structural invariants of a partition against its graph:
/// the blocks and residue cover every layer exactly once, inter-block edges
/// only run forward, and every edge between two blocks starts at the exit
/// layer of its block and ends in the block right after it.
pub fn check_partition(
    graph: &LayerGraph,
    partition: &BlockPartition,
) -> Result<(), PartitionViolation> {
    let n = graph.layers.len();
    const RESIDUE: usize = usize::MAX - 1;
    const UNSET: usize = usize::MAX;
    let mut owner = vec![UNSET; n];
    let name = |v: usize| graph.layers[v].id.clone();
    let assignments = partition
        .blocks
        .iter()
        .enumerate()
        .flat_map(|(b, blk)| blk.layers.iter().map(move |&v| (v, b)))
        .chain(partition.residue.iter().map(|&v| (v, RESIDUE)));
    for (v, b) in assignments {
        if owner[v] != UNSET {
            return Err(PartitionViolation::Overlap(name(v)));
        }
        owner[v] = b;
    }
    if let Some(v) = owner.iter().position(|&o| o == UNSET) {
        return Err(PartitionViolation::Missing(name(v)));
    }
    if let Some(b) = partition.blocks.iter().position(|b| b.layers.is_empty()) {
        return Err(PartitionViolation::EmptyBlock(b));
    }
    for &(u, v) in &graph.edges {
        let (bu, bv) = (owner[u], owner[v]);
        if bu == RESIDUE || bv == RESIDUE || bu == bv {
            continue;
        }
        if bu > bv {
            return Err(PartitionViolation::BackwardEdge {
                from: name(u),
                to: name(v),
            });
        }
        if partition.blocks[bu].exit() != u {
            return Err(PartitionViolation::LeavesMidBlock {
                from: name(u),
                to: name(v),
            });
        }
        if bv != bu + 1 {
            return Err(PartitionViolation::BypassesBlock {
                from: name(u),
                to: name(v),
            });
        }
    }
    Ok(())
}
