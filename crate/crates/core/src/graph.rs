//! Watershed graph: gauging-station nodes, directed downstream edges with
//! river distances, the proximity matrix, and the diffusion transition
//! matrices consumed by the convolution.

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::numerics::Tensor;
use crate::{Error, Result};

/// Directed edge `from -> to` following the flow direction, with the
/// along-channel river distance between the two stations.
#[derive(Clone, Debug, PartialEq)]
pub struct Edge {
    pub from: usize,
    pub to: usize,
    pub distance_km: f64,
}

/// Weighted directed watershed graph. `proximity[i][j] > 0` iff the edge
/// `i -> j` exists; weights are `exp(-d̃)` of the min-max standardized
/// river distance, so closer stations get larger weights.
#[derive(Clone, Debug)]
pub struct WatershedGraph {
    node_ids: Vec<String>,
    target: usize,
    edges: Vec<Edge>,
    proximity: Tensor,
}

impl WatershedGraph {
    pub fn new(node_ids: Vec<String>, target: usize, edges: Vec<Edge>) -> Result<Self> {
        if node_ids.is_empty() {
            return Err(Error::InvalidGraph("empty node set".into()));
        }
        if target >= node_ids.len() {
            return Err(Error::InvalidGraph(format!(
                "target index {target} out of range for {} nodes",
                node_ids.len()
            )));
        }
        let mut seen = HashSet::new();
        for e in &edges {
            if e.from >= node_ids.len() || e.to >= node_ids.len() {
                return Err(Error::InvalidGraph(format!(
                    "edge {} -> {} references a missing node",
                    e.from, e.to
                )));
            }
            if e.from == e.to {
                return Err(Error::InvalidGraph(format!("self-edge at node {}", e.from)));
            }
            if !(e.distance_km > 0.0) {
                return Err(Error::InvalidGraph(format!(
                    "edge {} -> {} has non-positive distance {}",
                    e.from, e.to, e.distance_km
                )));
            }
            if !seen.insert((e.from, e.to)) {
                return Err(Error::DuplicateEdge {
                    from: node_ids[e.from].clone(),
                    to: node_ids[e.to].clone(),
                });
            }
        }
        if has_cycle(node_ids.len(), &edges) {
            return Err(Error::InvalidGraph(
                "river network must be acyclic (edges point downstream)".into(),
            ));
        }
        let proximity = build_proximity(node_ids.len(), &edges)?;
        Ok(WatershedGraph {
            node_ids,
            target,
            edges,
            proximity,
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.node_ids.len()
    }

    pub fn node_ids(&self) -> &[String] {
        &self.node_ids
    }

    pub fn target(&self) -> usize {
        self.target
    }

    pub fn target_id(&self) -> &str {
        &self.node_ids[self.target]
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn proximity(&self) -> &Tensor {
        &self.proximity
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.node_ids.iter().position(|n| n == id)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let file: GraphFile = serde_json::from_str(&text)?;
        file.into_graph()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = GraphFile::from_graph(self);
        std::fs::write(path, serde_json::to_string_pretty(&file)?)?;
        Ok(())
    }
}

/// Proximity matrix: min-max standardize the edge distances, then
/// `A_ij = exp(-d̃_ij)` on edges and 0 elsewhere. When every edge shares
/// one distance the standardized distance is defined as 0 (weight 1).
pub fn build_proximity(n_nodes: usize, edges: &[Edge]) -> Result<Tensor> {
    if n_nodes == 0 {
        return Err(Error::InvalidGraph("empty node set".into()));
    }
    let mut a = Tensor::zeros(n_nodes, n_nodes);
    if edges.is_empty() {
        return Ok(a);
    }
    let min = edges.iter().map(|e| e.distance_km).fold(f64::INFINITY, f64::min);
    let max = edges
        .iter()
        .map(|e| e.distance_km)
        .fold(f64::NEG_INFINITY, f64::max);
    let span = max - min;
    for e in edges {
        let standardized = if span > 0.0 {
            (e.distance_km - min) / span
        } else {
            0.0
        };
        a.set(e.from, e.to, (-standardized).exp());
    }
    Ok(a)
}

/// Transition matrix `D_I⁻¹Aᵀ` and its precomputed powers for
/// k = 0..K-1. Rows of headwater nodes (no inflow) are all zero; the
/// k = 0 identity term still propagates their own features.
#[derive(Clone, Debug)]
pub struct TransitionSet {
    transition: Tensor,
    powers: Vec<Tensor>,
}

impl TransitionSet {
    pub fn k_steps(&self) -> usize {
        self.powers.len()
    }

    pub fn transition(&self) -> &Tensor {
        &self.transition
    }

    /// `(D_I⁻¹Aᵀ)^k`; `power(0)` is the identity.
    pub fn power(&self, k: usize) -> &Tensor {
        &self.powers[k]
    }
}

pub fn build_transitions(graph: &WatershedGraph, k_steps: usize) -> Result<TransitionSet> {
    if k_steps < 1 {
        return Err(Error::Contract("diffusion steps K must be >= 1".into()));
    }
    let n = graph.n_nodes();
    let a = graph.proximity();
    // In-degree of node i is the total proximity of edges flowing into it,
    // i.e. the i-th column sum of A.
    let mut transition = Tensor::zeros(n, n);
    for i in 0..n {
        let indeg: f64 = (0..n).map(|j| a.get(j, i)).sum();
        if indeg > 0.0 {
            for j in 0..n {
                transition.set(i, j, a.get(j, i) / indeg);
            }
        }
    }
    let mut powers = Vec::with_capacity(k_steps);
    powers.push(Tensor::identity(n));
    for k in 1..k_steps {
        let next = powers[k - 1].matmul(&transition)?;
        powers.push(next);
    }
    Ok(TransitionSet { transition, powers })
}

fn has_cycle(n: usize, edges: &[Edge]) -> bool {
    // Kahn's algorithm on out-edges.
    let mut indeg = vec![0usize; n];
    for e in edges {
        indeg[e.to] += 1;
    }
    let mut queue: Vec<usize> = (0..n).filter(|&i| indeg[i] == 0).collect();
    let mut visited = 0;
    while let Some(u) = queue.pop() {
        visited += 1;
        for e in edges.iter().filter(|e| e.from == u) {
            indeg[e.to] -= 1;
            if indeg[e.to] == 0 {
                queue.push(e.to);
            }
        }
    }
    visited != n
}

#[derive(Serialize, Deserialize)]
struct GraphFileNode {
    id: String,
    #[serde(default)]
    is_target: bool,
}

#[derive(Serialize, Deserialize)]
struct GraphFileEdge {
    from: String,
    to: String,
    distance_km: f64,
}

/// On-disk JSON form: `{"nodes": [{"id", "is_target"}], "edges": [{"from",
/// "to", "distance_km"}]}` with exactly one target node.
#[derive(Serialize, Deserialize)]
struct GraphFile {
    nodes: Vec<GraphFileNode>,
    edges: Vec<GraphFileEdge>,
}

impl GraphFile {
    fn from_graph(g: &WatershedGraph) -> Self {
        GraphFile {
            nodes: g
                .node_ids
                .iter()
                .enumerate()
                .map(|(i, id)| GraphFileNode {
                    id: id.clone(),
                    is_target: i == g.target,
                })
                .collect(),
            edges: g
                .edges
                .iter()
                .map(|e| GraphFileEdge {
                    from: g.node_ids[e.from].clone(),
                    to: g.node_ids[e.to].clone(),
                    distance_km: e.distance_km,
                })
                .collect(),
        }
    }

    fn into_graph(self) -> Result<WatershedGraph> {
        let node_ids: Vec<String> = self.nodes.iter().map(|n| n.id.clone()).collect();
        let targets: Vec<usize> = self
            .nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| n.is_target)
            .map(|(i, _)| i)
            .collect();
        if targets.len() != 1 {
            return Err(Error::InvalidGraph(format!(
                "graph file must mark exactly one target node, found {}",
                targets.len()
            )));
        }
        let resolve = |id: &str| {
            node_ids
                .iter()
                .position(|n| n == id)
                .ok_or_else(|| Error::InvalidGraph(format!("edge references unknown node {id}")))
        };
        let edges = self
            .edges
            .iter()
            .map(|e| {
                Ok(Edge {
                    from: resolve(&e.from)?,
                    to: resolve(&e.to)?,
                    distance_km: e.distance_km,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        WatershedGraph::new(node_ids, targets[0], edges)
    }
}
