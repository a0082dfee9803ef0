//! Computational-graph data model shared by the generator, the trace
//! simulator, and the reconstruction stages.
//!
//! A [`ComputationalGraph`] stores nodes in framework execution order: the
//! stored order is the schedule the simulator replays, so it is data, not
//! something we recompute.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

/// The seven layer kinds the toolkit understands.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerKind {
    Conv,
    Fc,
    Bn,
    Relu,
    Pool,
    Add,
    Concat,
}

impl LayerKind {
    pub const ALL: [LayerKind; 7] = [
        LayerKind::Conv,
        LayerKind::Fc,
        LayerKind::Bn,
        LayerKind::Relu,
        LayerKind::Pool,
        LayerKind::Add,
        LayerKind::Concat,
    ];

    pub fn token(self) -> &'static str {
        match self {
            LayerKind::Conv => "conv",
            LayerKind::Fc => "fc",
            LayerKind::Bn => "bn",
            LayerKind::Relu => "relu",
            LayerKind::Pool => "pool",
            LayerKind::Add => "add",
            LayerKind::Concat => "concat",
        }
    }

    pub fn from_token(tok: &str) -> Option<LayerKind> {
        LayerKind::ALL.iter().copied().find(|k| k.token() == tok)
    }
}

impl fmt::Display for LayerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

/// Full dimension tuple of one layer.
///
/// Spatial fields of FC layers are fixed to 1 so one struct serves every
/// kind; `ic`/`oc` then denote neuron counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DimensionSpec {
    pub n: u64,
    pub ic: u64,
    pub ih: u64,
    pub iw: u64,
    pub oc: u64,
    pub oh: u64,
    pub ow: u64,
    pub k: u64,
    pub p: u64,
    pub s: u64,
}

impl DimensionSpec {
    /// Output spatial size of a sliding window: floor((in + 2p - k)/s) + 1.
    pub fn window_out(input: u64, k: u64, p: u64, s: u64) -> Option<u64> {
        let padded = input + 2 * p;
        if padded < k || s == 0 {
            return None;
        }
        Some((padded - k) / s + 1)
    }

    /// Input volume in elements, excluding batch.
    pub fn input_volume(&self) -> u64 {
        self.ic * self.ih * self.iw
    }

    /// Output volume in elements, excluding batch.
    pub fn output_volume(&self) -> u64 {
        self.oc * self.oh * self.ow
    }
}

/// One node of a computational graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerNode {
    pub id: u64,
    pub kind: LayerKind,
    pub dims: DimensionSpec,
}

/// A DAG of layers. `nodes` is ordered: the stored order is the execution
/// order the target framework would schedule, and the simulator honors it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComputationalGraph {
    pub nodes: Vec<LayerNode>,
    pub edges: Vec<(u64, u64)>,
}

impl ComputationalGraph {
    pub fn new() -> Self {
        ComputationalGraph { nodes: Vec::new(), edges: Vec::new() }
    }

    pub fn node(&self, id: u64) -> Option<&LayerNode> {
        self.nodes.iter().find(|n| n.id == id)
    }

    pub fn predecessors(&self, id: u64) -> Vec<u64> {
        self.edges.iter().filter(|(_, b)| *b == id).map(|(a, _)| *a).collect()
    }

    pub fn successors(&self, id: u64) -> Vec<u64> {
        self.edges.iter().filter(|(a, _)| *a == id).map(|(_, b)| *b).collect()
    }

    /// Element count of the whole-network input (batch included).
    pub fn input_size(&self) -> u64 {
        self.nodes
            .first()
            .map(|n| n.dims.n * n.dims.input_volume())
            .unwrap_or(0)
    }

    /// Element count of the final output (batch included).
    pub fn output_size(&self) -> u64 {
        self.nodes
            .last()
            .map(|n| n.dims.n * n.dims.output_volume())
            .unwrap_or(0)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("graph serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

impl Default for ComputationalGraph {
    fn default() -> Self {
        Self::new()
    }
}

/// Kinds of invariant violations reported by [`validate_graph`].
///
/// Violations are data, not errors: an invalid graph is a legitimate input
/// to validation.
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub node_id: Option<u64>,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.node_id {
            Some(id) => write!(f, "node {}: {}", id, self.message),
            None => f.write_str(&self.message),
        }
    }
}

fn violation(node_id: Option<u64>, message: impl Into<String>) -> Violation {
    Violation { node_id, message: message.into() }
}

/// Checks every structural and dimensional invariant; returns one entry per
/// violation, empty when the graph is valid.
pub fn validate_graph(g: &ComputationalGraph) -> Vec<Violation> {
    let mut out = Vec::new();

    // id uniqueness
    let mut seen = HashSet::new();
    for n in &g.nodes {
        if !seen.insert(n.id) {
            out.push(violation(Some(n.id), "duplicate node id"));
        }
    }

    let position: HashMap<u64, usize> =
        g.nodes.iter().enumerate().map(|(i, n)| (n.id, i)).collect();

    // edges reference known nodes and respect the stored order (which makes
    // the graph a DAG with the stored order as a topological order)
    let mut edge_set = BTreeSet::new();
    for &(a, b) in &g.edges {
        match (position.get(&a), position.get(&b)) {
            (Some(&pa), Some(&pb)) => {
                if pa >= pb {
                    out.push(violation(
                        Some(b),
                        format!("edge ({a},{b}) does not follow the stored node order"),
                    ));
                }
            }
            _ => out.push(violation(None, format!("edge ({a},{b}) references unknown node"))),
        }
        if !edge_set.insert((a, b)) {
            out.push(violation(None, format!("duplicate edge ({a},{b})")));
        }
    }

    if g.nodes.is_empty() {
        return out;
    }

    // source / sink counts
    let mut in_deg: HashMap<u64, usize> = g.nodes.iter().map(|n| (n.id, 0)).collect();
    let mut out_deg: HashMap<u64, usize> = in_deg.clone();
    for &(a, b) in &g.edges {
        if let Some(d) = out_deg.get_mut(&a) {
            *d += 1;
        }
        if let Some(d) = in_deg.get_mut(&b) {
            *d += 1;
        }
    }
    let sources: Vec<u64> =
        g.nodes.iter().filter(|n| in_deg[&n.id] == 0).map(|n| n.id).collect();
    let sinks: Vec<u64> =
        g.nodes.iter().filter(|n| out_deg[&n.id] == 0).map(|n| n.id).collect();
    if sources.len() != 1 {
        out.push(violation(None, format!("expected exactly one source, found {}", sources.len())));
    }
    if sinks.len() != 1 {
        out.push(violation(None, format!("expected exactly one sink, found {}", sinks.len())));
    }

    let batch = g.nodes[0].dims.n;

    for n in &g.nodes {
        let d = &n.dims;
        // field ranges
        for (name, v) in [
            ("n", d.n),
            ("ic", d.ic),
            ("ih", d.ih),
            ("iw", d.iw),
            ("oc", d.oc),
            ("oh", d.oh),
            ("ow", d.ow),
            ("k", d.k),
            ("s", d.s),
        ] {
            if v == 0 {
                out.push(violation(Some(n.id), format!("dimension field {name} must be >= 1")));
            }
        }
        if d.n != batch {
            out.push(violation(Some(n.id), "batch size differs across nodes"));
        }

        // per-kind dimension rules
        match n.kind {
            LayerKind::Conv | LayerKind::Pool => {
                match (
                    DimensionSpec::window_out(d.ih, d.k, d.p, d.s),
                    DimensionSpec::window_out(d.iw, d.k, d.p, d.s),
                ) {
                    (Some(oh), Some(ow)) => {
                        if oh != d.oh || ow != d.ow {
                            out.push(violation(
                                Some(n.id),
                                format!(
                                    "window formula gives {}x{} but node declares {}x{}",
                                    oh, ow, d.oh, d.ow
                                ),
                            ));
                        }
                    }
                    _ => out.push(violation(
                        Some(n.id),
                        "kernel larger than padded input feature map",
                    )),
                }
                if n.kind == LayerKind::Pool && d.oc != d.ic {
                    out.push(violation(Some(n.id), "pool must preserve channel count"));
                }
            }
            LayerKind::Bn | LayerKind::Relu => {
                if (d.oc, d.oh, d.ow) != (d.ic, d.ih, d.iw) {
                    out.push(violation(Some(n.id), "output dims must equal input dims"));
                }
            }
            LayerKind::Fc => {
                if d.ih != 1 || d.iw != 1 || d.oh != 1 || d.ow != 1 {
                    out.push(violation(Some(n.id), "fc spatial dims must be 1"));
                }
            }
            LayerKind::Add | LayerKind::Concat => {}
        }

        // arity rules
        let preds = g.predecessors(n.id);
        let expect_source = in_deg[&n.id] == 0;
        match n.kind {
            LayerKind::Add => {
                if preds.len() != 2 {
                    out.push(violation(
                        Some(n.id),
                        format!("add node must have exactly 2 incoming edges, found {}", preds.len()),
                    ));
                }
            }
            LayerKind::Concat => {
                if preds.len() < 2 {
                    out.push(violation(
                        Some(n.id),
                        format!("concat node must have >= 2 incoming edges, found {}", preds.len()),
                    ));
                }
            }
            _ => {
                if !expect_source && preds.len() != 1 {
                    out.push(violation(
                        Some(n.id),
                        format!("node must have exactly 1 incoming edge, found {}", preds.len()),
                    ));
                }
            }
        }

        // volume agreement along edges
        match n.kind {
            LayerKind::Add => {
                for &p in &preds {
                    if let Some(pn) = g.node(p) {
                        if (pn.dims.oc, pn.dims.oh, pn.dims.ow) != (d.oc, d.oh, d.ow)
                            || (d.ic, d.ih, d.iw) != (d.oc, d.oh, d.ow)
                        {
                            out.push(violation(
                                Some(n.id),
                                format!("add input from node {p} does not match output dims"),
                            ));
                        }
                    }
                }
            }
            LayerKind::Concat => {
                let mut c_sum = 0;
                for &p in &preds {
                    if let Some(pn) = g.node(p) {
                        c_sum += pn.dims.oc;
                        if (pn.dims.oh, pn.dims.ow) != (d.oh, d.ow) {
                            out.push(violation(
                                Some(n.id),
                                format!("concat branch from node {p} has mismatched spatial dims"),
                            ));
                        }
                    }
                }
                if !preds.is_empty() && c_sum != d.oc {
                    out.push(violation(
                        Some(n.id),
                        format!("concat output channels {} != sum of branch channels {}", d.oc, c_sum),
                    ));
                }
            }
            _ => {
                for &p in &preds {
                    if let Some(pn) = g.node(p) {
                        if pn.dims.output_volume() != d.input_volume() {
                            out.push(violation(
                                Some(n.id),
                                format!(
                                    "input volume {} does not match producer {} output volume {}",
                                    d.input_volume(),
                                    p,
                                    pn.dims.output_volume()
                                ),
                            ));
                        }
                    }
                }
            }
        }
    }

    out
}

/// Kinds of the nodes in stored (execution) order: the oracle label sequence.
pub fn layer_sequence_of(g: &ComputationalGraph) -> Vec<LayerKind> {
    g.nodes.iter().map(|n| n.kind).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dims(ic: u64, ih: u64, oc: u64, oh: u64, k: u64, p: u64, s: u64) -> DimensionSpec {
        DimensionSpec { n: 1, ic, ih, iw: ih, oc, oh, ow: oh, k, p, s }
    }

    fn conv_relu_chain() -> ComputationalGraph {
        ComputationalGraph {
            nodes: vec![
                LayerNode { id: 0, kind: LayerKind::Conv, dims: dims(3, 8, 4, 8, 3, 1, 1) },
                LayerNode { id: 1, kind: LayerKind::Relu, dims: dims(4, 8, 4, 8, 1, 0, 1) },
            ],
            edges: vec![(0, 1)],
        }
    }

    #[test]
    fn minimal_valid_chain() {
        assert!(validate_graph(&conv_relu_chain()).is_empty());
    }

    #[test]
    fn conv_formula_violation() {
        // IH=5, P=0, K=3, S=1 gives OH=3, a declared OH=4 must be flagged.
        let g = ComputationalGraph {
            nodes: vec![LayerNode {
                id: 0,
                kind: LayerKind::Conv,
                dims: dims(1, 5, 1, 4, 3, 0, 1),
            }],
            edges: vec![],
        };
        let v = validate_graph(&g);
        assert_eq!(v.len(), 1, "{v:?}");
        assert!(v[0].message.contains("3x3"));
    }

    #[test]
    fn add_arity_violation() {
        let mut g = ComputationalGraph::new();
        for id in 0..3u64 {
            g.nodes.push(LayerNode {
                id,
                kind: LayerKind::Relu,
                dims: dims(4, 8, 4, 8, 1, 0, 1),
            });
        }
        g.nodes.push(LayerNode { id: 3, kind: LayerKind::Add, dims: dims(4, 8, 4, 8, 1, 0, 1) });
        // Relu chain would normally be linear; wire all three into the Add.
        g.nodes[0].dims = dims(4, 8, 4, 8, 1, 0, 1);
        g.edges = vec![(0, 1), (0, 2), (0, 3), (1, 3), (2, 3)];
        let v = validate_graph(&g);
        assert!(
            v.iter().any(|v| v.message.contains("exactly 2 incoming")),
            "expected add arity violation, got {v:?}"
        );
    }

    #[test]
    fn layer_sequence_examples() {
        assert_eq!(
            layer_sequence_of(&conv_relu_chain()),
            vec![LayerKind::Conv, LayerKind::Relu]
        );
        assert!(layer_sequence_of(&ComputationalGraph::new()).is_empty());
    }

    #[test]
    fn window_formula_matches_sliding_window_count() {
        // Independent oracle: count the placements of a window of width k
        // stepping by s over an input of size ih padded by p on both sides.
        fn brute(ih: u64, k: u64, p: u64, s: u64) -> Option<u64> {
            let padded = ih + 2 * p;
            if padded < k {
                return None;
            }
            let mut count = 0;
            let mut start = 0;
            while start + k <= padded {
                count += 1;
                start += s;
            }
            Some(count)
        }
        for ih in 1..=12 {
            for k in 1..=8 {
                for p in 0..=3 {
                    for s in 1..=3 {
                        assert_eq!(
                            DimensionSpec::window_out(ih, k, p, s),
                            brute(ih, k, p, s),
                            "ih={ih} k={k} p={p} s={s}"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn json_roundtrip_and_unknown_field_rejection() {
        let g = conv_relu_chain();
        let text = g.to_json();
        let back = ComputationalGraph::from_json(&text).unwrap();
        assert_eq!(g, back);

        let bad = r#"{"nodes":[],"edges":[],"extra":1}"#;
        assert!(ComputationalGraph::from_json(bad).is_err());

        let bad_dim = r#"{"nodes":[{"id":0,"kind":"conv","dims":{"n":1,"ic":1,"ih":1,"iw":1,"oc":1,"oh":1,"ow":1,"k":1,"p":0,"s":1,"zz":2}}],"edges":[]}"#;
        assert!(ComputationalGraph::from_json(bad_dim).is_err());
    }

    #[test]
    fn kind_tokens_are_lowercase() {
        for k in LayerKind::ALL {
            let repr = serde_json::to_string(&k).unwrap();
            assert_eq!(repr, format!("\"{}\"", k.token()));
            assert_eq!(LayerKind::from_token(k.token()), Some(k));
        }
    }
}
