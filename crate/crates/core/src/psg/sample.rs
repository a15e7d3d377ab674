use std::collections::VecDeque;
use std::path::Path;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use super::{EdgeKind, GLOBAL_FEATURES, SAMPLE_CAP};
use crate::error::{Error, Result};
use crate::moves::{enumerate_moves, Move, MoveKind};
use crate::vrp::{ProblemInstance, Solution};

/// Pool-unique node id: sample index in the high half, insertion counter in
/// the low half.
pub type NodeId = u64;

#[derive(Clone, Debug)]
pub struct PsgNode {
    pub id: NodeId,
    pub solution: Solution,
    /// Parent and the edge that produced this node. Kept after the parent is
    /// evicted, as a reference to a node outside the sample.
    pub parent: Option<(NodeId, EdgeKind)>,
    pub parent_evicted: bool,
    pub children: Vec<NodeId>,
    pub evicted_children: usize,
    /// Parent objective minus own objective; 0 for roots.
    pub improvement: f64,
    pub child_sum: f64,
    pub child_sq: f64,
    pub child_count: usize,
    best_moves: OnceLock<[Option<Move>; MoveKind::COUNT]>,
}

impl PsgNode {
    fn new(id: NodeId, solution: Solution, parent: Option<(NodeId, EdgeKind)>, improvement: f64) -> Self {
        Self {
            id,
            solution,
            parent,
            parent_evicted: false,
            children: Vec::new(),
            evicted_children: 0,
            improvement,
            child_sum: 0.0,
            child_sq: 0.0,
            child_count: 0,
            best_moves: OnceLock::new(),
        }
    }

    /// Objective used by every node feature: distance plus violation penalty.
    pub fn objective(&self) -> f64 {
        self.solution.penalized()
    }

    /// Raw global features, in the fixed layout
    /// `[objective, vehicles, customers, capacity, improvement, Σ child obj, Σ child obj², child count]`.
    pub fn global_features(&self, inst: &ProblemInstance) -> [f64; GLOBAL_FEATURES] {
        [
            self.objective(),
            self.solution.num_routes() as f64,
            inst.num_customers() as f64,
            inst.capacity(),
            self.improvement,
            self.child_sum,
            self.child_sq,
            self.child_count as f64,
        ]
    }

    /// Best candidate of each kind at this node, computed once.
    ///
    /// From a feasible solution only feasible results count; from an
    /// infeasible one the lowest penalized delta wins.
    pub fn best_moves(&self, inst: &ProblemInstance) -> &[Option<Move>; MoveKind::COUNT] {
        self.best_moves.get_or_init(|| {
            let feasible = self.solution.is_feasible();
            MoveKind::ALL.map(|k| {
                enumerate_moves(&self.solution, inst, k)
                    .into_iter()
                    .filter(|m| !feasible || m.result_feasible)
                    .min_by(|a, b| a.penalized_delta().total_cmp(&b.penalized_delta()))
            })
        })
    }

    pub fn move_mask(&self, inst: &ProblemInstance) -> [bool; MoveKind::COUNT] {
        let best = self.best_moves(inst);
        std::array::from_fn(|k| best[k].is_some())
    }
}

/// One connected component of the graph.
#[derive(Clone, Debug)]
pub struct PsgSample {
    index: usize,
    cap: usize,
    nodes: VecDeque<PsgNode>,
    next: u64,
    root: NodeId,
    best_id: NodeId,
    best: Solution,
}

impl PsgSample {
    pub fn new(index: usize, seed: Solution, cap: usize) -> Self {
        assert!(cap >= 1, "sample cap must be positive");
        let root = (index as u64) << 32;
        let mut nodes = VecDeque::with_capacity(cap + 1);
        nodes.push_back(PsgNode::new(root, seed.clone(), None, 0.0));
        Self { index, cap, nodes, next: 1, root, best_id: root, best: seed }
    }

    pub fn index(&self) -> usize {
        self.index
    }

    pub fn cap(&self) -> usize {
        self.cap
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Id of the node the sample started from, even if since evicted.
    pub fn root(&self) -> NodeId {
        self.root
    }

    /// Best node ever added to this sample (by penalized objective); the
    /// solution is kept even after the node leaves the window.
    pub fn local_best(&self) -> (NodeId, &Solution) {
        (self.best_id, &self.best)
    }

    pub fn newest(&self) -> &PsgNode {
        self.nodes.back().expect("samples are never empty")
    }

    pub fn nodes(&self) -> impl Iterator<Item = &PsgNode> {
        self.nodes.iter()
    }

    pub fn get(&self, id: NodeId) -> Option<&PsgNode> {
        self.position(id).map(|i| &self.nodes[i])
    }

    pub fn contains(&self, id: NodeId) -> bool {
        self.position(id).is_some()
    }

    fn position(&self, id: NodeId) -> Option<usize> {
        self.nodes.iter().position(|n| n.id == id)
    }

    /// Adds `solution` as a child of `parent`, evicting the oldest node when
    /// the sample grows past its cap.
    pub fn add_node(&mut self, parent: NodeId, edge: EdgeKind, solution: Solution) -> Result<NodeId> {
        let pi = self.position(parent).ok_or(Error::UnknownNode(parent))?;
        let id = ((self.index as u64) << 32) | self.next;
        self.next += 1;
        let obj = solution.penalized();
        let p = &mut self.nodes[pi];
        let improvement = p.objective() - obj;
        p.children.push(id);
        p.child_sum += obj;
        p.child_sq += obj * obj;
        p.child_count += 1;
        if obj < self.best.penalized() {
            self.best = solution.clone();
            self.best_id = id;
        }
        self.nodes.push_back(PsgNode::new(id, solution, Some((parent, edge)), improvement));
        while self.nodes.len() > self.cap {
            self.evict_oldest();
        }
        Ok(id)
    }

    fn evict_oldest(&mut self) {
        let Some(old) = self.nodes.pop_front() else { return };
        if let Some((pid, _)) = old.parent {
            if let Some(pi) = self.position(pid) {
                let p = &mut self.nodes[pi];
                p.children.retain(|&c| c != old.id);
                p.evicted_children += 1;
            }
        }
        for n in self.nodes.iter_mut() {
            if n.parent.is_some_and(|(pid, _)| pid == old.id) {
                n.parent_evicted = true;
            }
        }
    }

    /// Parent-to-child edges between retained nodes, as local indices.
    pub fn edges(&self) -> Vec<(usize, usize, EdgeKind)> {
        let mut out = Vec::new();
        for (ci, c) in self.nodes.iter().enumerate() {
            if let (Some((pid, kind)), false) = (c.parent, c.parent_evicted) {
                if let Some(pi) = self.position(pid) {
                    out.push((pi, ci, kind));
                }
            }
        }
        out
    }

    /// The retained nodes as an unlabelled model batch.
    pub fn subgraph(&self, inst: &ProblemInstance) -> SubgraphBatch {
        SubgraphBatch {
            node_ids: self.nodes.iter().map(|n| n.id).collect(),
            routes: self.nodes.iter().map(|n| n.solution.routes().to_vec()).collect(),
            global: self.nodes.iter().map(|n| n.global_features(inst)).collect(),
            edges: self.edges().into_iter().map(|(s, d, k)| (s, d, k.index())).collect(),
            move_mask: self.nodes.iter().map(|n| n.move_mask(inst)).collect(),
            node_labels: None,
            move_labels: None,
        }
    }
}

/// Model input drawn from one sample: nodes, edges, move availability and
/// optional selection labels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubgraphBatch {
    pub node_ids: Vec<NodeId>,
    pub routes: Vec<Vec<Vec<usize>>>,
    pub global: Vec<[f64; GLOBAL_FEATURES]>,
    /// `(src, dst, edge kind index)` over local node indices.
    pub edges: Vec<(usize, usize, usize)>,
    pub move_mask: Vec<[bool; MoveKind::COUNT]>,
    pub node_labels: Option<Vec<f64>>,
    pub move_labels: Option<Vec<[f64; MoveKind::COUNT]>>,
}

impl SubgraphBatch {
    pub fn len(&self) -> usize {
        self.node_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.node_ids.is_empty()
    }

    pub fn local_index(&self, id: NodeId) -> Option<usize> {
        self.node_ids.iter().position(|&n| n == id)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct JumpEdge {
    pub from: NodeId,
    pub to: NodeId,
    pub sample: usize,
}

/// One row of the serialized graph trace.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceNode {
    pub id: NodeId,
    pub sample: usize,
    pub parent: Option<NodeId>,
    pub edge: Option<String>,
    pub objective: f64,
    pub x_u: [f64; GLOBAL_FEATURES],
}

#[derive(Serialize)]
struct TraceFile<'a> {
    nodes: &'a [TraceNode],
    jumps: &'a [JumpEdge],
}

/// Every sample of one search run, the jump edges between them, and the
/// best feasible solution seen.
#[derive(Clone, Debug)]
pub struct PsgPool {
    cap: usize,
    samples: Vec<PsgSample>,
    jumps: Vec<JumpEdge>,
    best: Option<Solution>,
    trace: Vec<TraceNode>,
}

impl Default for PsgPool {
    fn default() -> Self {
        Self::new(SAMPLE_CAP)
    }
}

impl PsgPool {
    pub fn new(cap: usize) -> Self {
        Self { cap, samples: Vec::new(), jumps: Vec::new(), best: None, trace: Vec::new() }
    }

    /// Opens a new sample at `seed`. With an `origin`, a jump edge from that
    /// node to the new root is recorded.
    pub fn start_sample(&mut self, seed: Solution, origin: Option<NodeId>, inst: &ProblemInstance) -> usize {
        let index = self.samples.len();
        self.offer_best(&seed);
        let sample = PsgSample::new(index, seed, self.cap);
        let root = sample.root();
        if let Some(from) = origin {
            self.jumps.push(JumpEdge { from, to: root, sample: index });
        }
        let node = sample.get(root).expect("root present");
        self.trace.push(TraceNode {
            id: root,
            sample: index,
            parent: origin,
            edge: origin.map(|_| EdgeKind::Jump.to_string()),
            objective: node.objective(),
            x_u: node.global_features(inst),
        });
        self.samples.push(sample);
        index
    }

    pub fn add_node(
        &mut self,
        sample: usize,
        parent: NodeId,
        edge: EdgeKind,
        solution: Solution,
        inst: &ProblemInstance,
    ) -> Result<NodeId> {
        self.offer_best(&solution);
        let s = self.samples.get_mut(sample).ok_or(Error::UnknownNode(parent))?;
        let id = s.add_node(parent, edge, solution)?;
        let node = s.get(id).expect("just added");
        self.trace.push(TraceNode {
            id,
            sample,
            parent: Some(parent),
            edge: Some(edge.to_string()),
            objective: node.objective(),
            x_u: node.global_features(inst),
        });
        Ok(id)
    }

    fn offer_best(&mut self, s: &Solution) {
        if s.is_feasible() && self.best.as_ref().map_or(true, |b| s.objective() < b.objective()) {
            self.best = Some(s.clone());
        }
    }

    /// Best feasible solution added so far.
    pub fn best(&self) -> Option<&Solution> {
        self.best.as_ref()
    }

    pub fn samples(&self) -> &[PsgSample] {
        &self.samples
    }

    pub fn sample(&self, i: usize) -> &PsgSample {
        &self.samples[i]
    }

    pub fn jumps(&self) -> &[JumpEdge] {
        &self.jumps
    }

    pub fn trace(&self) -> &[TraceNode] {
        &self.trace
    }

    pub fn trace_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&TraceFile { nodes: &self.trace, jumps: &self.jumps })?)
    }

    pub fn write_trace(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.trace_json()?).map_err(|e| Error::io(path, e))
    }
}
