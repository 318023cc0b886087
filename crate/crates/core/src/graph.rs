//! Per-mode directed energy-flow graph and source/sink classification.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::config::Threshold;
use crate::def::SlopeEstimate;
use crate::error::{Error, Result};
use crate::spectrum::Mode;
use crate::waveform::{ElementKind, TerminalKey, Topology};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Source,
    Sink,
    Neutral,
}

impl Label {
    pub fn from_net(net: f64, eps: f64) -> Label {
        if net > eps {
            Label::Source
        } else if net < -eps {
            Label::Sink
        } else {
            Label::Neutral
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Source => "source",
            Label::Sink => "sink",
            Label::Neutral => "neutral",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectedEdge {
    pub from: String,
    pub to: String,
    pub edge: String,
    /// Magnitude of the deciding terminal's slope.
    pub wdot: f64,
    /// Node whose terminal decided the direction.
    pub measured_at: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeStatus {
    Directed,
    BelowThreshold,
    Unresolved,
}

/// Both ends of one line as seen by the graph builder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeEnds {
    pub edge: String,
    pub from: String,
    pub to: String,
    pub from_end: Option<SlopeEstimate>,
    pub to_end: Option<SlopeEstimate>,
    pub status: EdgeStatus,
}

impl EdgeEnds {
    /// Slope measured outward at `node`.
    pub fn at(&self, node: &str) -> Option<&SlopeEstimate> {
        if node == self.from {
            self.from_end.as_ref()
        } else if node == self.to {
            self.to_end.as_ref()
        } else {
            None
        }
    }

    /// The end used for the direction: lower stderr, `from` on ties.
    pub fn authoritative(&self) -> Option<(&str, &SlopeEstimate)> {
        match (&self.from_end, &self.to_end) {
            (Some(a), Some(b)) if b.stderr < a.stderr => Some((&self.to, b)),
            (Some(a), _) => Some((&self.from, a)),
            (None, Some(b)) => Some((&self.to, b)),
            (None, None) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeGraph {
    pub mode: Mode,
    pub directed_edges: Vec<DirectedEdge>,
    pub edges: Vec<EdgeEnds>,
    /// Net injection of each shunt element, outward into the network.
    pub shunt_slopes: BTreeMap<String, f64>,
    pub node_labels: BTreeMap<String, Label>,
    pub element_labels: BTreeMap<String, Label>,
    pub node_net: BTreeMap<String, f64>,
    pub element_net: BTreeMap<String, f64>,
    pub eps_edge: f64,
    pub eps_node: Option<f64>,
    pub unresolved: Vec<String>,
    pub warnings: Vec<String>,
    nodes: Vec<String>,
}

/// Directs each line by the sign of the outward slope at its authoritative end.
pub fn build_mode_graph(
    mode: Mode,
    slopes: &BTreeMap<TerminalKey, SlopeEstimate>,
    topo: &Topology,
    eps_edge: Threshold,
) -> Result<ModeGraph> {
    let mut shunt_slopes = BTreeMap::new();
    let mut line_max: f64 = 0.0;
    for (key, s) in slopes {
        if !topo.is_incident(&key.node, &key.element) {
            return Err(Error::Config(format!("slope for unknown terminal {key}")));
        }
        match topo.element_kind(&key.element) {
            Some(ElementKind::Shunt) => {
                shunt_slopes.insert(key.element.clone(), s.wdot);
            }
            _ => line_max = line_max.max(s.wdot.abs()),
        }
    }
    let eps = eps_edge.resolve(line_max);

    let mut edges = Vec::new();
    let mut directed_edges = Vec::new();
    let mut unresolved = Vec::new();
    let mut warnings = Vec::new();
    for e in topo.edges() {
        let mut ends = EdgeEnds {
            edge: e.id.clone(),
            from: e.from.clone(),
            to: e.to.clone(),
            from_end: slopes.get(&TerminalKey::new(&e.from, &e.id)).copied(),
            to_end: slopes.get(&TerminalKey::new(&e.to, &e.id)).copied(),
            status: EdgeStatus::Unresolved,
        };
        if let (Some(a), Some(b)) = (&ends.from_end, &ends.to_end) {
            if (a.wdot > eps && b.wdot > eps) || (a.wdot < -eps && b.wdot < -eps) {
                warnings.push(format!(
                    "{}: ends disagree on direction ({} at {}, {} at {})",
                    e.id, a.wdot, e.from, b.wdot, e.to
                ));
            }
        }
        match ends.authoritative() {
            None => unresolved.push(e.id.clone()),
            Some((node, s)) => {
                let other = e.other_end(node).expect("endpoint").to_string();
                let (from, to) = if s.wdot > eps {
                    (node.to_string(), other)
                } else if s.wdot < -eps {
                    (other, node.to_string())
                } else {
                    ends.status = EdgeStatus::BelowThreshold;
                    edges.push(ends);
                    continue;
                };
                directed_edges.push(DirectedEdge {
                    from,
                    to,
                    edge: e.id.clone(),
                    wdot: s.wdot.abs(),
                    measured_at: node.to_string(),
                });
                ends.status = EdgeStatus::Directed;
            }
        }
        edges.push(ends);
    }
    Ok(ModeGraph {
        mode,
        directed_edges,
        edges,
        shunt_slopes,
        node_labels: BTreeMap::new(),
        element_labels: BTreeMap::new(),
        node_net: BTreeMap::new(),
        element_net: BTreeMap::new(),
        eps_edge: eps,
        eps_node: None,
        unresolved,
        warnings,
        nodes: topo.nodes().to_vec(),
    })
}

/// Labels produced by [`classify_nodes`].
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Classification {
    pub node_labels: BTreeMap<String, Label>,
    pub element_labels: BTreeMap<String, Label>,
    pub node_net: BTreeMap<String, f64>,
    pub element_net: BTreeMap<String, f64>,
    pub eps_node: f64,
    pub unlabeled: Vec<String>,
}

/// Net outward energy rate of every node and element.
///
/// A shunt's net is its injection. A line's net is minus the sum of its two
/// outward end slopes, so an absorbing line is negative. A node's net is the
/// sum over its line terminals when all are measured, else the sum of its
/// shunt injections.
pub fn classify_nodes(
    g: &ModeGraph,
    topo: &Topology,
    shunt_slopes: &BTreeMap<String, f64>,
    eps_node: Threshold,
) -> Classification {
    let mut out = Classification::default();
    for s in topo.shunts() {
        match shunt_slopes.get(&s.id) {
            Some(&w) => {
                out.element_net.insert(s.id.clone(), w);
            }
            None => out.unlabeled.push(s.id.clone()),
        }
    }
    for ends in &g.edges {
        match (&ends.from_end, &ends.to_end) {
            (Some(a), Some(b)) => {
                out.element_net
                    .insert(ends.edge.clone(), -(a.wdot + b.wdot));
            }
            _ => out.unlabeled.push(ends.edge.clone()),
        }
    }
    for n in topo.nodes() {
        let mut line_sum = 0.0;
        let mut all_lines = true;
        let mut any_line = false;
        for e in topo.lines_at(n) {
            any_line = true;
            match g
                .edges
                .iter()
                .find(|x| x.edge == e.id)
                .and_then(|x| x.at(n))
            {
                Some(s) => line_sum += s.wdot,
                None => all_lines = false,
            }
        }
        let shunts: Vec<f64> = topo
            .shunts_at(n)
            .filter_map(|s| shunt_slopes.get(&s.id).copied())
            .collect();
        let net = if any_line && all_lines {
            Some(line_sum)
        } else if !shunts.is_empty() {
            Some(shunts.iter().sum())
        } else {
            None
        };
        match net {
            Some(v) => {
                out.node_net.insert(n.clone(), v);
            }
            None => out.unlabeled.push(n.clone()),
        }
    }
    let max = out.element_net.values().fold(0.0f64, |m, v| m.max(v.abs()));
    out.eps_node = eps_node.resolve(max);
    for (id, &v) in &out.element_net {
        out.element_labels
            .insert(id.clone(), Label::from_net(v, out.eps_node));
    }
    for (id, &v) in &out.node_net {
        out.node_labels
            .insert(id.clone(), Label::from_net(v, out.eps_node));
    }
    out
}

impl ModeGraph {
    /// Attaches a classification to the graph.
    pub fn with_labels(mut self, c: Classification) -> Self {
        self.node_labels = c.node_labels;
        self.element_labels = c.element_labels;
        self.node_net = c.node_net;
        self.element_net = c.element_net;
        self.eps_node = Some(c.eps_node);
        for id in c.unlabeled {
            self.warnings
                .push(format!("{id}: not enough measured terminals to label"));
        }
        self
    }

    pub fn nodes(&self) -> &[String] {
        &self.nodes
    }
}

fn quote(s: &str) -> String {
    format!("\"{}\"", s.replace('\\', "\\\\").replace('"', "\\\""))
}

/// DOT text of the graph and its structured record.
pub fn export_graph(g: &ModeGraph, topo: &Topology) -> (String, serde_json::Value) {
    let mut dot = String::new();
    let _ = writeln!(
        dot,
        "digraph {} {{",
        quote(&format!("mode_{}Hz", g.mode.label()))
    );
    let _ = writeln!(dot, "  label={};", quote(&format!("{:.2} Hz", g.mode.freq)));
    for n in &g.nodes {
        let mut text = n.clone();
        if let Some(l) = g.node_labels.get(n) {
            let _ = write!(text, "\\n{}", l.as_str());
        }
        for s in topo.shunts_at(n) {
            if let Some(l) = g.element_labels.get(&s.id) {
                let w = g.element_net.get(&s.id).copied().unwrap_or(0.0);
                let _ = write!(text, "\\n{}: {} ({:.4e})", s.id, l.as_str(), w);
            }
        }
        let _ = writeln!(dot, "  {} [label={}];", quote(n), quote(&text));
    }
    for e in &g.directed_edges {
        let mut text = format!("{} {:.4e}", e.edge, e.wdot);
        if let Some(l) = g.element_labels.get(&e.edge) {
            let _ = write!(text, " {}", l.as_str());
        }
        let _ = writeln!(
            dot,
            "  {} -> {} [label={}, wdot={:.6e}, freq={:.4}];",
            quote(&e.from),
            quote(&e.to),
            quote(&text),
            e.wdot,
            g.mode.freq
        );
    }
    dot.push_str("}\n");
    let record = serde_json::to_value(g).expect("graph serializes");
    (dot, record)
}
