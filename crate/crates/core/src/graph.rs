//! Gate-level computation DAG of the unrolled two-layer LSTM.
//!
//! Nodes are whole gate vectors at one (layer, step) plus an input node (the
//! embedding varied by the distribution of interest) and the QoI node. Times
//! are model steps: step 0 consumes the begin-of-sentence token, so sentence
//! position `p` is consumed at step `p + 1`, and the scores for the verb at
//! position `t_verb` are read off `h^1` at step `t_verb`.
//!
//! Legal edges:
//!
//! ```text
//! Input(t)      -> {f,i,o,c~}(0,t)
//! {f,i,c~}(l,t) -> c(l,t)        c(l,t-1) -> c(l,t)
//! {o,c}(l,t)    -> h(l,t)
//! h(0,t)        -> {f,i,o,c~}(1,t)
//! h(l,t-1)      -> {f,i,o,c~}(l,t)
//! h(1,t_q)      -> QoI
//! ```

use std::collections::HashMap;
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use crate::corpus::TaskKind;
use crate::error::{Error, Result};
use crate::lstm::Gate;

/// Default cap on the number of enumerated paths.
pub const DEFAULT_PATH_CAP: u64 = 10_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum NodeKind {
    Input,
    Forget,
    InGate,
    OutGate,
    CandCell,
    Cell,
    Hidden,
    Qoi,
}

impl NodeKind {
    pub fn from_gate(g: Gate) -> Self {
        match g {
            Gate::Forget => NodeKind::Forget,
            Gate::Input => NodeKind::InGate,
            Gate::Output => NodeKind::OutGate,
            Gate::Cand => NodeKind::CandCell,
        }
    }

    pub fn gate(self) -> Option<Gate> {
        match self {
            NodeKind::Forget => Some(Gate::Forget),
            NodeKind::InGate => Some(Gate::Input),
            NodeKind::OutGate => Some(Gate::Output),
            NodeKind::CandCell => Some(Gate::Cand),
            _ => None,
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            NodeKind::Input => "input",
            NodeKind::Forget => "forget",
            NodeKind::InGate => "ingate",
            NodeKind::OutGate => "outgate",
            NodeKind::CandCell => "ccand",
            NodeKind::Cell => "cell",
            NodeKind::Hidden => "hidden",
            NodeKind::Qoi => "qoi",
        }
    }

    fn from_tag(tag: &str) -> Option<Self> {
        Some(match tag {
            "input" => NodeKind::Input,
            "forget" => NodeKind::Forget,
            "ingate" => NodeKind::InGate,
            "outgate" => NodeKind::OutGate,
            "ccand" => NodeKind::CandCell,
            "cell" => NodeKind::Cell,
            "hidden" => NodeKind::Hidden,
            "qoi" => NodeKind::Qoi,
            _ => return None,
        })
    }
}

/// A node of the unrolled graph. `layer` is `None` for Input and QoI, `time`
/// is `None` for QoI.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId {
    pub kind: NodeKind,
    pub layer: Option<usize>,
    pub time: Option<usize>,
}

impl NodeId {
    pub fn input(step: usize) -> Self {
        Self {
            kind: NodeKind::Input,
            layer: None,
            time: Some(step),
        }
    }

    pub fn qoi() -> Self {
        Self {
            kind: NodeKind::Qoi,
            layer: None,
            time: None,
        }
    }

    pub fn gate(gate: Gate, layer: usize, step: usize) -> Self {
        Self::inner(NodeKind::from_gate(gate), layer, step)
    }

    pub fn cell(layer: usize, step: usize) -> Self {
        Self::inner(NodeKind::Cell, layer, step)
    }

    pub fn hidden(layer: usize, step: usize) -> Self {
        Self::inner(NodeKind::Hidden, layer, step)
    }

    fn inner(kind: NodeKind, layer: usize, step: usize) -> Self {
        Self {
            kind,
            layer: Some(layer),
            time: Some(step),
        }
    }

    /// Sort key that is a topological order for every legal edge.
    fn topo_key(&self) -> (usize, usize, NodeKind) {
        match self.kind {
            NodeKind::Qoi => (usize::MAX, usize::MAX, self.kind),
            _ => (self.time.unwrap_or(0), self.layer.unwrap_or(0), self.kind),
        }
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.kind.tag())?;
        if let Some(l) = self.layer {
            write!(f, ":{l}")?;
        }
        if let Some(t) = self.time {
            write!(f, ":{t}")?;
        }
        Ok(())
    }
}

impl FromStr for NodeId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::PathMismatch(format!("malformed node id {s:?}"));
        let mut parts = s.split(':');
        let kind = NodeKind::from_tag(parts.next().ok_or_else(bad)?).ok_or_else(bad)?;
        let nums: Vec<usize> = parts
            .map(|p| p.parse::<usize>().map_err(|_| bad()))
            .collect::<Result<_>>()?;
        match (kind, nums.as_slice()) {
            (NodeKind::Qoi, []) => Ok(NodeId::qoi()),
            (NodeKind::Input, [t]) => Ok(NodeId::input(*t)),
            (NodeKind::Input | NodeKind::Qoi, _) => Err(bad()),
            (_, [l, t]) => Ok(NodeId::inner(kind, *l, *t)),
            _ => Err(bad()),
        }
    }
}

/// Structural class of a legal edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EdgeKind {
    /// Input embedding into a layer-0 gate.
    InputToGate(Gate),
    /// `h^0_t` into a layer-1 gate at the same step.
    LayerLift(Gate),
    /// `h^l_{t-1}` into a gate of the same layer.
    Recurrent(Gate),
    /// f, i or c̃ into the cell at the same step.
    GateToCell(Gate),
    /// `c_{t-1} -> c_t`.
    CellCarry,
    CellToHidden,
    OutToHidden,
    HiddenToQoi,
}

impl EdgeKind {
    /// Edges whose local Jacobian is diagonal.
    pub fn is_elementwise(self) -> bool {
        matches!(
            self,
            EdgeKind::GateToCell(_) | EdgeKind::CellCarry | EdgeKind::CellToHidden | EdgeKind::OutToHidden
        )
    }
}

/// Classifies `from -> to` against the edge rules. Input and QoI placement
/// is checked by the graph, not here.
pub fn classify_edge(from: NodeId, to: NodeId) -> Option<EdgeKind> {
    use NodeKind::*;
    let same_slot = from.layer == to.layer && from.time == to.time;
    match (from.kind, to.kind) {
        (Input, k) => {
            let g = k.gate()?;
            (to.layer == Some(0) && from.time == to.time).then_some(EdgeKind::InputToGate(g))
        }
        (Hidden, Qoi) => (from.layer == Some(1)).then_some(EdgeKind::HiddenToQoi),
        (Hidden, k) => {
            let g = k.gate()?;
            let (fl, ft) = (from.layer?, from.time?);
            let (tl, tt) = (to.layer?, to.time?);
            if fl == 0 && tl == 1 && ft == tt {
                Some(EdgeKind::LayerLift(g))
            } else if fl == tl && ft + 1 == tt {
                Some(EdgeKind::Recurrent(g))
            } else {
                None
            }
        }
        (Forget | InGate | CandCell, Cell) => {
            same_slot.then(|| EdgeKind::GateToCell(from.kind.gate().expect("gate kind")))
        }
        (Cell, Cell) => (from.layer == to.layer && from.time.map(|t| t + 1) == to.time).then_some(EdgeKind::CellCarry),
        (Cell, Hidden) => same_slot.then_some(EdgeKind::CellToHidden),
        (OutGate, Hidden) => same_slot.then_some(EdgeKind::OutToHidden),
        _ => None,
    }
}

/// A path from the input node to the QoI node.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Path {
    pub nodes: Vec<NodeId>,
}

impl Path {
    pub fn edges(&self) -> impl Iterator<Item = (NodeId, NodeId)> + '_ {
        self.nodes.windows(2).map(|w| (w[0], w[1]))
    }

    /// Node ids joined as in the path dump.
    pub fn label(&self) -> String {
        self.nodes.iter().map(|n| n.to_string()).collect::<Vec<_>>().join(" ")
    }
}

/// Pruned, topologically indexed DAG.
#[derive(Debug, Clone)]
pub struct UnrolledGraph {
    nodes: Vec<NodeId>,
    succ: Vec<Vec<usize>>,
    pred: Vec<Vec<usize>>,
    index: HashMap<NodeId, usize>,
    edges: Vec<(usize, usize)>,
    edge_index: HashMap<(usize, usize), usize>,
    input: usize,
    qoi: usize,
    /// Sentence position varied by the DoI, if built from a template.
    pub t_focus: Option<usize>,
    pub t_verb: Option<usize>,
}

/// Builds the pruned gate-level graph for a template, with the DoI on the
/// token at sentence position `t_focus` and the QoI on the verb at `t_verb`.
pub fn build_graph(task: TaskKind, t_focus: usize, t_verb: usize) -> Result<UnrolledGraph> {
    if t_focus >= t_verb {
        return Err(Error::Positions(format!(
            "focus position {t_focus} must precede verb position {t_verb}"
        )));
    }
    if t_verb >= task.template_len() {
        return Err(Error::Positions(format!(
            "verb position {t_verb} outside {task} template of length {}",
            task.template_len()
        )));
    }
    let mut g = build_lstm_graph(t_focus + 1, t_verb)?;
    g.t_focus = Some(t_focus);
    g.t_verb = Some(t_verb);
    Ok(g)
}

/// Graph over model steps: input at `input_step`, QoI on `h^1` at `qoi_step`.
pub fn build_lstm_graph(input_step: usize, qoi_step: usize) -> Result<UnrolledGraph> {
    if input_step > qoi_step {
        return Err(Error::Positions(format!(
            "input step {input_step} after QoI step {qoi_step}"
        )));
    }
    let mut nodes = vec![NodeId::input(input_step)];
    for t in 0..=qoi_step {
        for l in 0..2 {
            nodes.extend(Gate::ALL.iter().map(|&g| NodeId::gate(g, l, t)));
            nodes.push(NodeId::cell(l, t));
            nodes.push(NodeId::hidden(l, t));
        }
    }
    nodes.push(NodeId::qoi());
    let mut edges = Vec::new();
    for &from in &nodes {
        for &to in &nodes {
            let legal = match classify_edge(from, to) {
                Some(EdgeKind::HiddenToQoi) => from.time == Some(qoi_step),
                Some(_) => true,
                None => false,
            };
            if legal {
                edges.push((from, to));
            }
        }
    }
    UnrolledGraph::from_edges(NodeId::input(input_step), NodeId::qoi(), &edges)
}

impl UnrolledGraph {
    /// Builds a graph from an explicit edge list, keeping only nodes on some
    /// `input -> qoi` path. Edges are not checked against the LSTM rules.
    pub fn from_edges(input: NodeId, qoi: NodeId, edges: &[(NodeId, NodeId)]) -> Result<Self> {
        let mut fwd: HashMap<NodeId, Vec<NodeId>> = HashMap::new();
        let mut bwd: HashMap<NodeId, Vec<NodeId>> = HashMap::new();
        for &(a, b) in edges {
            fwd.entry(a).or_default().push(b);
            bwd.entry(b).or_default().push(a);
        }
        let reach = |start: NodeId, adj: &HashMap<NodeId, Vec<NodeId>>| {
            let mut seen = std::collections::HashSet::from([start]);
            let mut stack = vec![start];
            while let Some(n) = stack.pop() {
                for &m in adj.get(&n).into_iter().flatten() {
                    if seen.insert(m) {
                        stack.push(m);
                    }
                }
            }
            seen
        };
        let from_input = reach(input, &fwd);
        let to_qoi = reach(qoi, &bwd);
        if !from_input.contains(&qoi) {
            return Err(Error::Positions("QoI is not reachable from the input".into()));
        }
        let mut nodes: Vec<NodeId> = from_input.intersection(&to_qoi).copied().collect();
        nodes.sort_by_key(|n| n.topo_key());
        let index: HashMap<NodeId, usize> = nodes.iter().enumerate().map(|(i, &n)| (n, i)).collect();
        let mut succ = vec![Vec::new(); nodes.len()];
        let mut pred = vec![Vec::new(); nodes.len()];
        for &(a, b) in edges {
            if let (Some(&ia), Some(&ib)) = (index.get(&a), index.get(&b)) {
                if ia >= ib {
                    return Err(Error::Positions(format!("edge {a} -> {b} breaks the time order")));
                }
                succ[ia].push(ib);
                pred[ib].push(ia);
            }
        }
        let mut kept = Vec::new();
        for (a, s) in succ.iter_mut().enumerate() {
            s.sort_unstable();
            s.dedup();
            kept.extend(s.iter().map(|&b| (a, b)));
        }
        for p in &mut pred {
            p.sort_unstable();
            p.dedup();
        }
        let edge_index = kept.iter().enumerate().map(|(i, &e)| (e, i)).collect();
        Ok(Self {
            input: index[&input],
            qoi: index[&qoi],
            nodes,
            succ,
            pred,
            index,
            edges: kept,
            edge_index,
            t_focus: None,
            t_verb: None,
        })
    }

    pub fn nodes(&self) -> &[NodeId] {
        &self.nodes
    }

    pub fn node(&self, idx: usize) -> NodeId {
        self.nodes[idx]
    }

    pub fn index_of(&self, node: &NodeId) -> Option<usize> {
        self.index.get(node).copied()
    }

    pub fn successors(&self, idx: usize) -> &[usize] {
        &self.succ[idx]
    }

    pub fn predecessors(&self, idx: usize) -> &[usize] {
        &self.pred[idx]
    }

    /// Edges as `(from, to)` node indices, ordered by source then target.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn edge_id(&self, from: usize, to: usize) -> Option<usize> {
        self.edge_index.get(&(from, to)).copied()
    }

    pub fn input(&self) -> NodeId {
        self.nodes[self.input]
    }

    pub fn input_index(&self) -> usize {
        self.input
    }

    pub fn qoi(&self) -> NodeId {
        self.nodes[self.qoi]
    }

    pub fn qoi_index(&self) -> usize {
        self.qoi
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    /// Node indices in topological order (indices are already sorted so).
    pub fn topological_order(&self) -> Vec<usize> {
        (0..self.nodes.len()).collect()
    }

    /// Checks that every consecutive pair of `path` is an edge of this graph.
    pub fn validate_path(&self, path: &Path) -> Result<Vec<usize>> {
        if path.nodes.first() != Some(&self.input()) || path.nodes.last() != Some(&self.qoi()) {
            return Err(Error::PathMismatch(format!(
                "path must run from {} to {}",
                self.input(),
                self.qoi()
            )));
        }
        let idx: Vec<usize> = path
            .nodes
            .iter()
            .map(|n| {
                self.index_of(n)
                    .ok_or_else(|| Error::PathMismatch(format!("node {n} not in graph")))
            })
            .collect::<Result<_>>()?;
        for w in idx.windows(2) {
            if self.edge_id(w[0], w[1]).is_none() {
                return Err(Error::PathMismatch(format!(
                    "{} -> {} is not an edge",
                    self.nodes[w[0]], self.nodes[w[1]]
                )));
            }
        }
        Ok(idx)
    }
}

/// Number of input-to-QoI paths by dynamic programming over the topological
/// order. Saturates at `u128::MAX`.
pub fn count_paths(g: &UnrolledGraph) -> u128 {
    let mut counts = vec![0u128; g.num_nodes()];
    counts[g.qoi_index()] = 1;
    for v in g.topological_order().into_iter().rev() {
        if v == g.qoi_index() {
            continue;
        }
        counts[v] = g
            .successors(v)
            .iter()
            .fold(0u128, |acc, &s| acc.saturating_add(counts[s]));
    }
    counts[g.input_index()]
}

/// All input-to-QoI paths in depth-first order with successors visited in
/// ascending index order.
pub fn enumerate_paths(g: &UnrolledGraph) -> Result<Vec<Path>> {
    enumerate_paths_capped(g, DEFAULT_PATH_CAP)
}

pub fn enumerate_paths_capped(g: &UnrolledGraph, cap: u64) -> Result<Vec<Path>> {
    let mut out = Vec::new();
    let mut prefix = vec![g.input_index()];
    // Stack of (node, next successor slot).
    let mut stack: Vec<(usize, usize)> = vec![(g.input_index(), 0)];
    while let Some(&mut (node, ref mut next)) = stack.last_mut() {
        if node == g.qoi_index() {
            if out.len() as u64 >= cap {
                return Err(Error::PathCap { cap });
            }
            out.push(Path {
                nodes: prefix.iter().map(|&i| g.node(i)).collect(),
            });
            stack.pop();
            prefix.pop();
            continue;
        }
        match g.successors(node).get(*next) {
            Some(&s) => {
                *next += 1;
                stack.push((s, 0));
                prefix.push(s);
            }
            None => {
                stack.pop();
                prefix.pop();
            }
        }
    }
    Ok(out)
}

/// The primary path `x · c̃^0 · c^0 · h^0 · c̃^1 · (c^1)* · h^1 · QoI` of an
/// LSTM graph.
pub fn primary_path(g: &UnrolledGraph) -> Result<Path> {
    let t = g
        .input()
        .time
        .ok_or_else(|| Error::PathMismatch("input node has no time".into()))?;
    let tq = g
        .predecessors(g.qoi_index())
        .first()
        .and_then(|&p| g.node(p).time)
        .ok_or_else(|| Error::PathMismatch("QoI has no hidden-state predecessor".into()))?;
    let mut nodes = vec![
        g.input(),
        NodeId::gate(Gate::Cand, 0, t),
        NodeId::cell(0, t),
        NodeId::hidden(0, t),
        NodeId::gate(Gate::Cand, 1, t),
    ];
    nodes.extend((t..=tq).map(|s| NodeId::cell(1, s)));
    nodes.push(NodeId::hidden(1, tq));
    nodes.push(NodeId::qoi());
    let path = Path { nodes };
    g.validate_path(&path)?;
    Ok(path)
}

/// A path whose elementwise segment `nodes[start..=end]` is restricted to a
/// single neuron coordinate; the flanks stay whole vectors.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NeuronPath {
    pub parent: Path,
    pub start: usize,
    pub end: usize,
    pub neuron: usize,
}

impl NeuronPath {
    pub fn label(&self) -> String {
        let mut parts = Vec::with_capacity(self.parent.nodes.len());
        for (k, n) in self.parent.nodes.iter().enumerate() {
            if (self.start..=self.end).contains(&k) {
                parts.push(format!("{n}[{}]", self.neuron));
            } else {
                parts.push(n.to_string());
            }
        }
        parts.join(" ")
    }
}

/// Restricts `path.nodes[start..=end]` to coordinate `neuron`. Every edge
/// inside the segment must be elementwise.
pub fn refine_segment(path: &Path, start: usize, end: usize, neuron: usize, hidden: usize) -> Result<NeuronPath> {
    if neuron >= hidden {
        return Err(Error::Refine(format!("neuron {neuron} out of range 0..{hidden}")));
    }
    if start >= end || end >= path.nodes.len() {
        return Err(Error::Refine(format!(
            "segment {start}..={end} is empty or out of range"
        )));
    }
    for k in start..end {
        let (a, b) = (path.nodes[k], path.nodes[k + 1]);
        if !classify_edge(a, b).is_some_and(EdgeKind::is_elementwise) {
            return Err(Error::Refine(format!("edge {a} -> {b} is not elementwise")));
        }
    }
    Ok(NeuronPath {
        parent: path.clone(),
        start,
        end,
        neuron,
    })
}

/// Maximal elementwise segment around the first layer-1 cell node of `path`.
pub fn cell_chain_segment(path: &Path) -> Result<(usize, usize)> {
    let first = path
        .nodes
        .iter()
        .position(|n| n.kind == NodeKind::Cell && n.layer == Some(1))
        .ok_or_else(|| Error::Refine("path has no layer-1 cell node".into()))?;
    let elementwise = |k: usize| classify_edge(path.nodes[k], path.nodes[k + 1]).is_some_and(EdgeKind::is_elementwise);
    let mut start = first;
    while start > 0 && elementwise(start - 1) {
        start -= 1;
    }
    let mut end = first;
    while end + 1 < path.nodes.len() && elementwise(end) {
        end += 1;
    }
    if start == end {
        return Err(Error::Refine("layer-1 cell chain has no elementwise edge".into()));
    }
    Ok((start, end))
}

/// Refines the layer-1 cell chain `c̃^1 · (c^1)* · h^1` of `path` to `neuron`.
pub fn refine_cell_chain(path: &Path, neuron: usize, hidden: usize) -> Result<NeuronPath> {
    let (start, end) = cell_chain_segment(path)?;
    refine_segment(path, start, end, neuron, hidden)
}

/// Writes one JSON array of node-id strings per line.
pub fn write_path_dump<W: Write>(paths: &[Path], mut out: W) -> Result<()> {
    for p in paths {
        let ids: Vec<String> = p.nodes.iter().map(|n| n.to_string()).collect();
        serde_json::to_writer(&mut out, &ids)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_path_dump<R: BufRead>(input: R) -> Result<Vec<Path>> {
    let mut out = Vec::new();
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let ids: Vec<String> = serde_json::from_str(&line)?;
        let nodes = ids.iter().map(|s| s.parse()).collect::<Result<_>>()?;
        out.push(Path { nodes });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_one_counts() {
        for (task, t_focus, expected) in [
            (TaskKind::Simple, 1, 16u128),
            (TaskKind::NounPP, 1, 6946),
            (TaskKind::NounPPAdv, 1, 41561),
            (TaskKind::NounPP, 4, 16),
            (TaskKind::NounPPAdv, 4, 152),
        ] {
            let g = build_graph(task, t_focus, task.t_verb()).unwrap();
            assert_eq!(count_paths(&g), expected, "{task} focus {t_focus}");
        }
    }

    #[test]
    fn qoi_has_single_predecessor() {
        let g = build_graph(TaskKind::NounPP, 1, 5).unwrap();
        let preds = g.predecessors(g.qoi_index());
        assert_eq!(preds.len(), 1);
        assert_eq!(g.node(preds[0]), NodeId::hidden(1, 5));
    }

    #[test]
    fn two_node_graph_has_one_path() {
        let g =
            UnrolledGraph::from_edges(NodeId::input(0), NodeId::qoi(), &[(NodeId::input(0), NodeId::qoi())]).unwrap();
        assert_eq!(count_paths(&g), 1);
        assert_eq!(enumerate_paths(&g).unwrap().len(), 1);
    }

    #[test]
    fn cap_is_enforced() {
        let g = build_graph(TaskKind::NounPP, 1, 5).unwrap();
        assert!(matches!(
            enumerate_paths_capped(&g, 100),
            Err(Error::PathCap { cap: 100 })
        ));
    }

    #[test]
    fn invalid_positions() {
        assert!(build_graph(TaskKind::Simple, 2, 2).is_err());
        assert!(build_graph(TaskKind::Simple, 1, 3).is_err());
    }

    #[test]
    fn node_id_strings() {
        assert_eq!(NodeId::gate(Gate::Cand, 0, 1).to_string(), "ccand:0:1");
        assert_eq!(NodeId::cell(1, 3).to_string(), "cell:1:3");
        assert_eq!(NodeId::qoi().to_string(), "qoi");
        for s in ["ccand:0:1", "cell:1:3", "qoi", "input:2", "hidden:0:4"] {
            assert_eq!(s.parse::<NodeId>().unwrap().to_string(), s);
        }
        assert!("cell:1".parse::<NodeId>().is_err());
        assert!("bogus:1:2".parse::<NodeId>().is_err());
    }

    #[test]
    fn primary_path_refines_into_hidden_many() {
        let g = build_graph(TaskKind::NounPP, 1, 5).unwrap();
        let p = primary_path(&g).unwrap();
        let (s, e) = cell_chain_segment(&p).unwrap();
        assert_eq!(p.nodes[s], NodeId::gate(Gate::Cand, 1, 2));
        assert_eq!(p.nodes[e], NodeId::hidden(1, 5));
        let refined: Vec<_> = (0..64).map(|i| refine_cell_chain(&p, i, 64).unwrap()).collect();
        assert_eq!(refined.len(), 64);
        assert!(refine_cell_chain(&p, 64, 64).is_err());
    }

    #[test]
    fn refining_a_dense_segment_fails() {
        let g = build_graph(TaskKind::Simple, 1, 2).unwrap();
        let p = primary_path(&g).unwrap();
        // hidden:0 -> ccand:1 is dense
        assert!(refine_segment(&p, 2, 4, 0, 8).is_err());
    }

    #[test]
    fn simple_primary_chain_is_single_cell() {
        let g = build_graph(TaskKind::Simple, 1, 2).unwrap();
        let p = primary_path(&g).unwrap();
        let (s, e) = cell_chain_segment(&p).unwrap();
        assert_eq!(e - s, 2); // c̃^1 -> c^1 -> h^1
    }

    #[test]
    fn path_dump_round_trip() {
        let g = build_graph(TaskKind::Simple, 1, 2).unwrap();
        let paths = enumerate_paths(&g).unwrap();
        let mut buf = Vec::new();
        write_path_dump(&paths, &mut buf).unwrap();
        let first = std::str::from_utf8(&buf).unwrap().lines().next().unwrap().to_string();
        assert!(first.starts_with("[\"input:2\","), "{first}");
        assert_eq!(read_path_dump(buf.as_slice()).unwrap(), paths);
    }
}
