//! Directed road graphs: loading, validation, shortest paths and the
//! bundled fixture generators.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Junction identifier. Ids are dense, starting at 0.
pub type JunctionId = usize;

#[derive(Debug, Error, PartialEq)]
pub enum GraphError {
    #[error("graph file is not valid JSON: {0}")]
    Parse(String),
    #[error("node ids must be dense from 0; id {0} is missing or duplicated")]
    NodeIds(usize),
    #[error("node {id} has a non-finite coordinate")]
    BadCoordinate { id: usize },
    #[error("edge {index} ({from} -> {to}) references missing node {missing}")]
    DanglingEndpoint {
        index: usize,
        from: usize,
        to: usize,
        missing: usize,
    },
    #[error("edge {index} ({from} -> {to}) has non-positive length {length}")]
    NonPositiveLength {
        index: usize,
        from: usize,
        to: usize,
        length: f64,
    },
    #[error("edge {index} ({from} -> {to}) is a self-loop")]
    SelfLoop { index: usize, from: usize, to: usize },
    #[error("edge {index} duplicates the directed edge {from} -> {to}")]
    DuplicateEdge { index: usize, from: usize, to: usize },
    #[error("graph has no edges")]
    NoEdges,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub from: JunctionId,
    pub to: JunctionId,
    pub length: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct NodeRecord {
    id: usize,
    x: f64,
    y: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct GraphFile {
    nodes: Vec<NodeRecord>,
    edges: Vec<Edge>,
}

/// A shortest route between two junctions.
#[derive(Debug, Clone, PartialEq)]
pub struct Route {
    pub length: f64,
    pub path: Vec<JunctionId>,
}

/// Validated directed graph with planar coordinates.
///
/// Outgoing edges of every junction are ordered by ascending destination id;
/// that order defines the action index of each edge. All-pairs
/// distances-to-destination are computed once on construction.
#[derive(Debug, Clone)]
pub struct RoadGraph {
    coords: Vec<(f64, f64)>,
    edges: Vec<Edge>,
    out: Vec<Vec<usize>>,
    incoming: Vec<Vec<usize>>,
    max_out_degree: usize,
    // dist_to[dest][v] = shortest distance v -> dest (infinite if unreachable)
    dist_to: Vec<Vec<f64>>,
    diameter: f64,
}

/// Relative slack for comparing floating path sums.
const TIE_EPS: f64 = 1e-9;

fn same_cost(a: f64, b: f64) -> bool {
    (a - b).abs() <= TIE_EPS * a.abs().max(b.abs()).max(1.0)
}

#[derive(Copy, Clone, PartialEq)]
struct HeapEntry {
    cost: f64,
    node: usize,
}

impl Eq for HeapEntry {}

impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .cost
            .total_cmp(&self.cost)
            .then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Parse and validate a graph file.
pub fn load_graph(text: &str) -> Result<RoadGraph, GraphError> {
    let file: GraphFile =
        serde_json::from_str(text).map_err(|e| GraphError::Parse(e.to_string()))?;
    let n = file.nodes.len();
    let mut coords = vec![None; n];
    for node in &file.nodes {
        if node.id >= n || coords[node.id].is_some() {
            return Err(GraphError::NodeIds(node.id.min(n)));
        }
        coords[node.id] = Some((node.x, node.y));
    }
    let coords: Vec<(f64, f64)> = coords.into_iter().map(|c| c.expect("dense ids")).collect();
    RoadGraph::new(coords, file.edges)
}

impl RoadGraph {
    pub fn new(coords: Vec<(f64, f64)>, edges: Vec<Edge>) -> Result<Self, GraphError> {
        let n = coords.len();
        for (id, &(x, y)) in coords.iter().enumerate() {
            if !x.is_finite() || !y.is_finite() {
                return Err(GraphError::BadCoordinate { id });
            }
        }
        if edges.is_empty() {
            return Err(GraphError::NoEdges);
        }
        let mut seen = HashSet::new();
        for (index, e) in edges.iter().enumerate() {
            for endpoint in [e.from, e.to] {
                if endpoint >= n {
                    return Err(GraphError::DanglingEndpoint {
                        index,
                        from: e.from,
                        to: e.to,
                        missing: endpoint,
                    });
                }
            }
            if !(e.length > 0.0) || !e.length.is_finite() {
                return Err(GraphError::NonPositiveLength {
                    index,
                    from: e.from,
                    to: e.to,
                    length: e.length,
                });
            }
            if e.from == e.to {
                return Err(GraphError::SelfLoop {
                    index,
                    from: e.from,
                    to: e.to,
                });
            }
            if !seen.insert((e.from, e.to)) {
                return Err(GraphError::DuplicateEdge {
                    index,
                    from: e.from,
                    to: e.to,
                });
            }
        }

        let mut out = vec![Vec::new(); n];
        let mut incoming = vec![Vec::new(); n];
        for (i, e) in edges.iter().enumerate() {
            out[e.from].push(i);
            incoming[e.to].push(i);
        }
        for list in &mut out {
            list.sort_by_key(|&i| edges[i].to);
        }
        let max_out_degree = out.iter().map(Vec::len).max().unwrap_or(0);

        let mut graph = RoadGraph {
            coords,
            edges,
            out,
            incoming,
            max_out_degree,
            dist_to: Vec::new(),
            diameter: 0.0,
        };
        graph.dist_to = (0..n)
            .map(|d| graph.distances_to(d, &[], &HashSet::new()))
            .collect();
        graph.diameter = graph
            .dist_to
            .iter()
            .flatten()
            .copied()
            .filter(|d| d.is_finite())
            .fold(0.0, f64::max);
        Ok(graph)
    }

    pub fn to_json(&self) -> String {
        let file = GraphFile {
            nodes: self
                .coords
                .iter()
                .enumerate()
                .map(|(id, &(x, y))| NodeRecord { id, x, y })
                .collect(),
            edges: self.edges.clone(),
        };
        serde_json::to_string_pretty(&file).expect("graph serializes")
    }

    pub fn node_count(&self) -> usize {
        self.coords.len()
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn coord(&self, j: JunctionId) -> Option<(f64, f64)> {
        self.coords.get(j).copied()
    }

    pub fn coords(&self) -> &[(f64, f64)] {
        &self.coords
    }

    /// m: the maximum out-degree, which fixes the action-space width.
    pub fn max_out_degree(&self) -> usize {
        self.max_out_degree
    }

    pub fn contains(&self, j: JunctionId) -> bool {
        j < self.coords.len()
    }

    /// Outgoing edges of `j`, in action-index order.
    pub fn outgoing(&self, j: JunctionId) -> impl Iterator<Item = &Edge> + '_ {
        self.out[j].iter().map(move |&i| &self.edges[i])
    }

    pub fn out_degree(&self, j: JunctionId) -> usize {
        self.out[j].len()
    }

    /// The `slot`-th outgoing edge of `j`, if it exists.
    pub fn out_edge(&self, j: JunctionId, slot: usize) -> Option<&Edge> {
        self.out[j].get(slot).map(|&i| &self.edges[i])
    }

    /// Action index of the edge `from -> to`.
    pub fn slot_of(&self, from: JunctionId, to: JunctionId) -> Option<usize> {
        self.outgoing(from).position(|e| e.to == to)
    }

    pub fn edge_between(&self, from: JunctionId, to: JunctionId) -> Option<&Edge> {
        if !self.contains(from) {
            return None;
        }
        self.outgoing(from).find(|e| e.to == to)
    }

    /// Largest finite shortest-path distance between any two junctions.
    pub fn diameter(&self) -> f64 {
        self.diameter
    }

    /// Shortest distance from `from` to `dest`; infinite when unreachable.
    pub fn distance(&self, from: JunctionId, dest: JunctionId) -> f64 {
        self.dist_to[dest][from]
    }

    /// Exact shortest path; among equal-length paths the lexicographically
    /// smallest junction sequence wins.
    pub fn shortest_path(&self, a: JunctionId, b: JunctionId) -> Option<Route> {
        let dist = &self.dist_to[b];
        self.greedy_walk(a, b, dist, &[], &HashSet::new())
    }

    /// Negative normalized cost of taking `edge` and then driving the
    /// shortest remaining route to `dest`; `-10` if `dest` is unreachable.
    pub fn edge_score(&self, edge: &Edge, dest: JunctionId) -> f64 {
        let rest = self.distance(edge.to, dest);
        if !rest.is_finite() {
            return UNREACHABLE_SCORE;
        }
        let scale = if self.diameter > 0.0 { self.diameter } else { 1.0 };
        -(edge.length + rest) / scale
    }

    pub fn path_length(&self, path: &[JunctionId]) -> Option<f64> {
        path.windows(2)
            .map(|w| self.edge_between(w[0], w[1]).map(|e| e.length))
            .sum()
    }

    /// Up to `k` loopless paths from `a` to `b` in order of increasing
    /// length (Yen's algorithm).
    pub fn k_shortest_paths(&self, a: JunctionId, b: JunctionId, k: usize) -> Vec<Route> {
        let mut accepted: Vec<Route> = Vec::new();
        let Some(first) = self.shortest_path(a, b) else {
            return accepted;
        };
        accepted.push(first);
        let mut candidates: Vec<Route> = Vec::new();

        while accepted.len() < k {
            let last = accepted.last().expect("non-empty").path.clone();
            for spur_idx in 0..last.len().saturating_sub(1) {
                let spur = last[spur_idx];
                let root = &last[..=spur_idx];
                let mut blocked_edges = HashSet::new();
                for r in &accepted {
                    if r.path.len() > spur_idx + 1 && &r.path[..=spur_idx] == root {
                        blocked_edges.insert((r.path[spur_idx], r.path[spur_idx + 1]));
                    }
                }
                let blocked_nodes = &root[..spur_idx];
                let dist = self.distances_to(b, blocked_nodes, &blocked_edges);
                let Some(tail) = self.greedy_walk(spur, b, &dist, blocked_nodes, &blocked_edges)
                else {
                    continue;
                };
                let mut path = root[..spur_idx].to_vec();
                path.extend_from_slice(&tail.path);
                let length = self.path_length(&path).expect("walk follows edges");
                let route = Route { length, path };
                if !candidates.contains(&route) && !accepted.contains(&route) {
                    candidates.push(route);
                }
            }
            if candidates.is_empty() {
                break;
            }
            let best = candidates
                .iter()
                .enumerate()
                .min_by(|(_, x), (_, y)| {
                    x.length
                        .total_cmp(&y.length)
                        .then_with(|| x.path.cmp(&y.path))
                })
                .map(|(i, _)| i)
                .expect("non-empty");
            accepted.push(candidates.swap_remove(best));
        }
        accepted
    }

    /// Reverse Dijkstra towards `dest`, skipping blocked nodes and edges.
    fn distances_to(
        &self,
        dest: JunctionId,
        blocked_nodes: &[JunctionId],
        blocked_edges: &HashSet<(JunctionId, JunctionId)>,
    ) -> Vec<f64> {
        let n = self.coords.len();
        let mut dist = vec![f64::INFINITY; n];
        if blocked_nodes.contains(&dest) {
            return dist;
        }
        let mut heap = BinaryHeap::new();
        dist[dest] = 0.0;
        heap.push(HeapEntry { cost: 0.0, node: dest });
        while let Some(HeapEntry { cost, node }) = heap.pop() {
            if cost > dist[node] {
                continue;
            }
            for &ei in &self.incoming[node] {
                let e = &self.edges[ei];
                if blocked_nodes.contains(&e.from) || blocked_edges.contains(&(e.from, e.to)) {
                    continue;
                }
                let next = cost + e.length;
                if next < dist[e.from] {
                    dist[e.from] = next;
                    heap.push(HeapEntry {
                        cost: next,
                        node: e.from,
                    });
                }
            }
        }
        dist
    }

    /// Walk from `a` along tight edges, always taking the smallest next id.
    fn greedy_walk(
        &self,
        a: JunctionId,
        b: JunctionId,
        dist: &[f64],
        blocked_nodes: &[JunctionId],
        blocked_edges: &HashSet<(JunctionId, JunctionId)>,
    ) -> Option<Route> {
        if !dist[a].is_finite() {
            return None;
        }
        let mut path = vec![a];
        let mut here = a;
        let mut length = 0.0;
        while here != b {
            let next = self
                .outgoing(here)
                .filter(|e| {
                    !blocked_nodes.contains(&e.to) && !blocked_edges.contains(&(e.from, e.to))
                })
                .find(|e| dist[e.to].is_finite() && same_cost(e.length + dist[e.to], dist[here]))?;
            length += next.length;
            here = next.to;
            path.push(here);
        }
        Some(Route { length, path })
    }
}

pub const UNREACHABLE_SCORE: f64 = -10.0;

/// N×N grid with bidirectional unit-spaced streets scaled by `spacing`.
/// Node id = row * n + col, coordinates (col, row) * spacing.
pub fn grid(n: usize, spacing: f64) -> RoadGraph {
    let mut coords = Vec::with_capacity(n * n);
    for row in 0..n {
        for col in 0..n {
            coords.push((col as f64 * spacing, row as f64 * spacing));
        }
    }
    let mut edges = Vec::new();
    for row in 0..n {
        for col in 0..n {
            let id = row * n + col;
            if col + 1 < n {
                edges.push(Edge { from: id, to: id + 1, length: spacing });
                edges.push(Edge { from: id + 1, to: id, length: spacing });
            }
            if row + 1 < n {
                edges.push(Edge { from: id, to: id + n, length: spacing });
                edges.push(Edge { from: id + n, to: id, length: spacing });
            }
        }
    }
    RoadGraph::new(coords, edges).expect("grid is valid")
}

/// Three junctions in a row, `0 -> 1 -> 2`, unit lengths.
pub fn line() -> RoadGraph {
    RoadGraph::new(
        vec![(0.0, 0.0), (1.0, 0.0), (2.0, 0.0)],
        vec![
            Edge { from: 0, to: 1, length: 1.0 },
            Edge { from: 1, to: 2, length: 1.0 },
        ],
    )
    .expect("line is valid")
}

/// Small irregular network: winding roads whose lengths exceed the
/// straight-line distance, a few one-way streets and a dead end.
pub fn hilly() -> RoadGraph {
    let coords = vec![
        (0.0, 0.0),
        (1.3, 0.4),
        (2.9, 0.1),
        (4.1, 0.9),
        (0.6, 1.8),
        (1.9, 2.2),
        (3.2, 1.9),
        (4.6, 2.6),
        (0.2, 3.5),
        (1.6, 3.9),
        (2.8, 3.4),
        (4.0, 4.2),
        (5.2, 3.8),
    ];
    // (a, b, winding factor, two-way)
    let roads: [(usize, usize, f64, bool); 19] = [
        (0, 1, 1.1, true),
        (1, 2, 1.3, true),
        (2, 3, 1.2, true),
        (0, 4, 1.4, true),
        (1, 5, 1.6, true),
        (2, 6, 1.5, false),
        (6, 3, 1.1, false),
        (4, 5, 1.2, true),
        (5, 6, 1.3, true),
        (6, 7, 1.8, true),
        (3, 7, 1.2, true),
        (4, 8, 1.5, true),
        (5, 9, 1.7, true),
        (8, 9, 1.2, true),
        (9, 10, 1.4, true),
        (10, 6, 1.9, false),
        (10, 11, 1.3, true),
        (7, 11, 1.6, false),
        (11, 12, 1.2, true),
    ];
    let mut edges = Vec::new();
    for &(a, b, wind, two_way) in &roads {
        let (ax, ay): (f64, f64) = coords[a];
        let (bx, by) = coords[b];
        let length = ((ax - bx).powi(2) + (ay - by).powi(2)).sqrt() * wind;
        let length = (length * 1000.0).round() / 1000.0;
        edges.push(Edge { from: a, to: b, length });
        if two_way {
            edges.push(Edge { from: b, to: a, length });
        }
    }
    RoadGraph::new(coords, edges).expect("hilly is valid")
}
