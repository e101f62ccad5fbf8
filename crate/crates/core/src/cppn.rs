//! Compositional pattern producing networks: genome representation,
//! feed-forward evaluation and hull generation.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::voxel::{BooleanLattice, Dims};

/// Input node ids, in the order `x, y, z, r, bias`.
pub const INPUT_IDS: [u32; 5] = [0, 1, 2, 3, 4];
pub const OUTPUT_ID: u32 = 5;
/// First id handed out to hidden nodes.
pub const FIRST_HIDDEN_ID: u32 = 6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CppnError {
    #[error("genome contains a cycle through node {0}")]
    Cycle(u32),
    #[error("connection {innovation} references unknown node {node}")]
    UnknownNode { innovation: u64, node: u32 },
    #[error("malformed genome: {0}")]
    Malformed(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeKind {
    Input,
    Hidden,
    Output,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    /// Pass-through, used only by input nodes.
    Identity,
    Sigmoid,
    Tanh,
    Sine,
    Gaussian,
    Abs,
}

impl Activation {
    /// Choices for hidden nodes.
    pub const HIDDEN: [Activation; 5] = [
        Activation::Sigmoid,
        Activation::Tanh,
        Activation::Sine,
        Activation::Gaussian,
        Activation::Abs,
    ];

    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Sigmoid => 1.0 / (1.0 + (-x).exp()),
            Activation::Tanh => x.tanh(),
            Activation::Sine => x.sin(),
            Activation::Gaussian => (-x * x).exp(),
            Activation::Abs => x.abs(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NodeGene {
    pub id: u32,
    pub kind: NodeKind,
    pub activation: Activation,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConnectionGene {
    pub innovation: u64,
    pub from: u32,
    pub to: u32,
    pub weight: f64,
    pub enabled: bool,
}

/// Nodes are kept sorted by id and connections by innovation number.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CppnGenome {
    pub nodes: Vec<NodeGene>,
    pub connections: Vec<ConnectionGene>,
    /// Novelty score, assigned by the search.
    pub fitness: f64,
}

impl CppnGenome {
    /// The five inputs and the output, without connections.
    pub fn minimal() -> Self {
        let mut nodes: Vec<NodeGene> = INPUT_IDS
            .iter()
            .map(|&id| NodeGene {
                id,
                kind: NodeKind::Input,
                activation: Activation::Identity,
            })
            .collect();
        nodes.push(NodeGene {
            id: OUTPUT_ID,
            kind: NodeKind::Output,
            activation: Activation::Sigmoid,
        });
        Self {
            nodes,
            connections: Vec::new(),
            fitness: 0.0,
        }
    }

    pub fn node(&self, id: u32) -> Option<&NodeGene> {
        self.nodes.binary_search_by_key(&id, |n| n.id).ok().map(|i| &self.nodes[i])
    }

    pub fn node_mut(&mut self, id: u32) -> Option<&mut NodeGene> {
        match self.nodes.binary_search_by_key(&id, |n| n.id) {
            Ok(i) => Some(&mut self.nodes[i]),
            Err(_) => None,
        }
    }

    pub fn connection(&self, innovation: u64) -> Option<&ConnectionGene> {
        self.connections
            .binary_search_by_key(&innovation, |c| c.innovation)
            .ok()
            .map(|i| &self.connections[i])
    }

    pub fn hidden_count(&self) -> usize {
        self.nodes.iter().filter(|n| n.kind == NodeKind::Hidden).count()
    }

    /// Inserts a node, keeping id order. Replaces an existing node with the same id.
    pub fn insert_node(&mut self, node: NodeGene) {
        match self.nodes.binary_search_by_key(&node.id, |n| n.id) {
            Ok(i) => self.nodes[i] = node,
            Err(i) => self.nodes.insert(i, node),
        }
    }

    /// Inserts a connection, keeping innovation order.
    pub fn insert_connection(&mut self, conn: ConnectionGene) {
        match self.connections.binary_search_by_key(&conn.innovation, |c| c.innovation) {
            Ok(i) => self.connections[i] = conn,
            Err(i) => self.connections.insert(i, conn),
        }
    }

    pub fn has_edge(&self, from: u32, to: u32) -> bool {
        self.connections.iter().any(|c| c.from == from && c.to == to)
    }

    /// Whether `to` can already reach `from` along existing connections, so
    /// that adding `from -> to` would close a cycle.
    pub fn creates_cycle(&self, from: u32, to: u32) -> bool {
        if from == to {
            return true;
        }
        let mut stack = vec![to];
        let mut seen = BTreeSet::new();
        while let Some(n) = stack.pop() {
            if n == from {
                return true;
            }
            if seen.insert(n) {
                stack.extend(self.connections.iter().filter(|c| c.from == n).map(|c| c.to));
            }
        }
        false
    }

    /// Checks node references, ordering, the fixed input/output layout and
    /// acyclicity over all connections, enabled or not.
    pub fn validate(&self) -> Result<(), CppnError> {
        if !self.nodes.windows(2).all(|w| w[0].id < w[1].id) {
            return Err(CppnError::Malformed("node ids not strictly increasing".into()));
        }
        if !self.connections.windows(2).all(|w| w[0].innovation < w[1].innovation) {
            return Err(CppnError::Malformed("innovation numbers not strictly increasing".into()));
        }
        for &id in &INPUT_IDS {
            if self.node(id).map(|n| n.kind) != Some(NodeKind::Input) {
                return Err(CppnError::Malformed(format!("missing input node {id}")));
            }
        }
        match self.node(OUTPUT_ID) {
            Some(n) if n.kind == NodeKind::Output && n.activation == Activation::Sigmoid => {}
            _ => return Err(CppnError::Malformed("output node must be sigmoid".into())),
        }
        let inputs = self.nodes.iter().filter(|n| n.kind == NodeKind::Input).count();
        let outputs = self.nodes.iter().filter(|n| n.kind == NodeKind::Output).count();
        if inputs != INPUT_IDS.len() || outputs != 1 {
            return Err(CppnError::Malformed(format!("{inputs} inputs and {outputs} outputs")));
        }
        for c in &self.connections {
            for node in [c.from, c.to] {
                if self.node(node).is_none() {
                    return Err(CppnError::UnknownNode {
                        innovation: c.innovation,
                        node,
                    });
                }
            }
            if self.node(c.to).map(|n| n.kind) == Some(NodeKind::Input) {
                return Err(CppnError::Malformed(format!("connection {} feeds an input", c.innovation)));
            }
        }
        topological_order(self, false).map(|_| ())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("genome serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, CppnError> {
        let g: Self = serde_json::from_str(s).map_err(|e| CppnError::Malformed(e.to_string()))?;
        g.validate()?;
        Ok(g)
    }
}

/// Kahn's algorithm with smallest-id-first tie breaking.
fn topological_order(genome: &CppnGenome, enabled_only: bool) -> Result<Vec<u32>, CppnError> {
    let mut indegree: BTreeMap<u32, usize> = genome.nodes.iter().map(|n| (n.id, 0)).collect();
    let edges = || genome.connections.iter().filter(|c| c.enabled || !enabled_only);
    for c in edges() {
        *indegree.get_mut(&c.to).ok_or(CppnError::UnknownNode {
            innovation: c.innovation,
            node: c.to,
        })? += 1;
    }
    let mut ready: BTreeSet<u32> = indegree.iter().filter(|(_, &d)| d == 0).map(|(&id, _)| id).collect();
    let mut order = Vec::with_capacity(indegree.len());
    while let Some(n) = ready.pop_first() {
        order.push(n);
        for c in edges().filter(|c| c.from == n) {
            let d = indegree.get_mut(&c.to).expect("checked above");
            *d -= 1;
            if *d == 0 {
                ready.insert(c.to);
            }
        }
    }
    if order.len() != indegree.len() {
        let stuck = indegree
            .iter()
            .find(|(id, &d)| d > 0 && !order.contains(id))
            .map(|(&id, _)| id)
            .unwrap_or(OUTPUT_ID);
        return Err(CppnError::Cycle(stuck));
    }
    Ok(order)
}

/// A genome flattened into slot-indexed evaluation steps.
#[derive(Debug, Clone)]
pub struct CompiledCppn {
    /// Per non-input node in topological order: (slot, activation, incoming range).
    steps: Vec<(usize, Activation, std::ops::Range<usize>)>,
    /// Incoming edges as (source slot, weight).
    edges: Vec<(usize, f64)>,
    slots: usize,
    output: usize,
}

impl CompiledCppn {
    pub fn new(genome: &CppnGenome) -> Result<Self, CppnError> {
        let order = topological_order(genome, true)?;
        let slot_of: BTreeMap<u32, usize> = order.iter().enumerate().map(|(s, &id)| (id, s)).collect();
        let mut steps = Vec::new();
        let mut edges = Vec::new();
        for &id in &order {
            let node = genome.node(id).expect("order built from nodes");
            if node.kind == NodeKind::Input {
                continue;
            }
            let start = edges.len();
            edges.extend(
                genome
                    .connections
                    .iter()
                    .filter(|c| c.enabled && c.to == id)
                    .map(|c| (slot_of[&c.from], c.weight)),
            );
            steps.push((slot_of[&id], node.activation, start..edges.len()));
        }
        let output = *slot_of
            .get(&OUTPUT_ID)
            .ok_or_else(|| CppnError::Malformed("no output node".into()))?;
        let mut input_slots = [0usize; 5];
        for (k, id) in INPUT_IDS.iter().enumerate() {
            input_slots[k] = *slot_of
                .get(id)
                .ok_or_else(|| CppnError::Malformed(format!("missing input node {id}")))?;
        }
        // Inputs have no incoming edges, so they occupy the first five slots
        // in id order.
        debug_assert_eq!(input_slots, [0, 1, 2, 3, 4]);
        Ok(Self {
            steps,
            edges,
            slots: order.len(),
            output,
        })
    }

    /// Evaluates at normalized coordinates, reusing `scratch` between calls.
    pub fn eval_with(&self, x: f64, y: f64, z: f64, scratch: &mut Vec<f64>) -> f64 {
        scratch.clear();
        scratch.resize(self.slots, 0.0);
        scratch[..5].copy_from_slice(&[x, y, z, (x * x + z * z).sqrt(), 1.0]);
        for (slot, act, range) in &self.steps {
            let sum: f64 = self.edges[range.clone()].iter().map(|&(s, w)| w * scratch[s]).sum();
            scratch[*slot] = act.apply(sum);
        }
        scratch[self.output]
    }

    pub fn eval(&self, x: f64, y: f64, z: f64) -> f64 {
        self.eval_with(x, y, z, &mut Vec::new())
    }
}

/// Output activation at normalized coordinates; `r` and `bias` are derived.
pub fn eval_network(genome: &CppnGenome, coords: (f64, f64, f64)) -> Result<f64, CppnError> {
    Ok(CompiledCppn::new(genome)?.eval(coords.0, coords.1, coords.2))
}

/// Maps index `i` of an axis with `dim` cells onto `[-1, 1]`.
pub fn normalize(i: usize, dim: usize) -> f64 {
    if dim <= 1 {
        0.0
    } else {
        2.0 * i as f64 / (dim - 1) as f64 - 1.0
    }
}

/// A voxel is filled iff the network output exceeds 0.5.
pub fn generate_hull(genome: &CppnGenome, dims: Dims) -> Result<BooleanLattice, CppnError> {
    let net = CompiledCppn::new(genome)?;
    let mut scratch = Vec::new();
    Ok(BooleanLattice::from_fn(dims, |x, y, z| {
        net.eval_with(
            normalize(x, dims.x),
            normalize(y, dims.y),
            normalize(z, dims.z),
            &mut scratch,
        ) > 0.5
    }))
}

/// Every input wired to the output with weights drawn from U(-1, 1).
/// Connection innovations are 0..5 in input order.
pub fn seed_genome_from<R: Rng + ?Sized>(rng: &mut R) -> CppnGenome {
    let mut g = CppnGenome::minimal();
    g.connections = INPUT_IDS
        .iter()
        .map(|&from| ConnectionGene {
            innovation: from as u64,
            from,
            to: OUTPUT_ID,
            weight: rng.random_range(-1.0..1.0),
            enabled: true,
        })
        .collect();
    g
}

pub fn seed_genome(rng_seed: u64) -> CppnGenome {
    seed_genome_from(&mut ChaCha8Rng::seed_from_u64(rng_seed))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(from: u32, weight: f64) -> CppnGenome {
        let mut g = CppnGenome::minimal();
        g.connections.push(ConnectionGene {
            innovation: from as u64,
            from,
            to: OUTPUT_ID,
            weight,
            enabled: true,
        });
        g
    }

    #[test]
    fn zero_weights_give_half() {
        let mut g = seed_genome(3);
        g.connections.iter_mut().for_each(|c| c.weight = 0.0);
        assert_eq!(eval_network(&g, (0.3, -0.2, 0.9)).unwrap(), 0.5);
        assert_eq!(generate_hull(&g, Dims::cube(5)).unwrap().count(), 0);
    }

    #[test]
    fn bias_connection_closed_form() {
        for w in [-2.0, 0.7, 10.0] {
            let out = eval_network(&single(4, w), (0.1, 0.2, 0.3)).unwrap();
            assert_eq!(out, 1.0 / (1.0 + (-w).exp()));
        }
        assert_eq!(generate_hull(&single(4, 10.0), Dims::cube(6)).unwrap().count(), 216);
    }

    #[test]
    fn radial_input() {
        let out = eval_network(&single(3, 1.0), (0.6, 0.0, 0.8)).unwrap();
        assert!((out - 1.0 / (1.0 + (-1.0f64).exp())).abs() < 1e-15);
    }

    #[test]
    fn seed_structure_and_determinism() {
        let g = seed_genome(7);
        assert_eq!((g.nodes.len(), g.connections.len()), (6, 5));
        assert_eq!(g, seed_genome(7));
        assert_ne!(g, seed_genome(8));
        assert!(g.connections.iter().all(|c| c.weight.abs() < 1.0));
        g.validate().unwrap();
    }

    #[test]
    fn disabled_connection_is_ignored() {
        let mut g = single(4, 10.0);
        g.connections[0].enabled = false;
        assert_eq!(eval_network(&g, (0.0, 0.0, 0.0)).unwrap(), 0.5);
    }

    #[test]
    fn cycle_is_rejected() {
        let mut g = CppnGenome::minimal();
        for id in [6, 7] {
            g.insert_node(NodeGene {
                id,
                kind: NodeKind::Hidden,
                activation: Activation::Tanh,
            });
        }
        for (innovation, from, to) in [(0, 6, 7), (1, 7, 6), (2, 7, OUTPUT_ID)] {
            g.insert_connection(ConnectionGene {
                innovation,
                from,
                to,
                weight: 1.0,
                enabled: true,
            });
        }
        assert!(matches!(eval_network(&g, (0.0, 0.0, 0.0)), Err(CppnError::Cycle(_))));
        assert!(g.validate().is_err());
    }

    #[test]
    fn creates_cycle_detection() {
        let mut g = single(0, 1.0);
        g.insert_node(NodeGene {
            id: 6,
            kind: NodeKind::Hidden,
            activation: Activation::Abs,
        });
        g.insert_connection(ConnectionGene {
            innovation: 9,
            from: OUTPUT_ID,
            to: 6,
            weight: 1.0,
            enabled: false,
        });
        assert!(g.creates_cycle(6, OUTPUT_ID));
        assert!(!g.creates_cycle(0, 6));
        assert!(g.creates_cycle(3, 3));
    }

    #[test]
    fn json_round_trip() {
        let mut g = seed_genome(11);
        g.fitness = 0.1 + 0.2;
        let back = CppnGenome::from_json(&g.to_json()).unwrap();
        assert_eq!(back, g);
        assert!(CppnGenome::from_json(r#"{"nodes":[],"connections":[],"fitness":0.0}"#).is_err());
    }

    #[test]
    fn normalization_endpoints() {
        assert_eq!(normalize(0, 20), -1.0);
        assert_eq!(normalize(19, 20), 1.0);
        assert_eq!(normalize(0, 1), 0.0);
    }
}
