//! Sampled waveforms, network topology, terminal measurements and their
//! columnar-text file formats.
//!
//! Waveform files are comma-separated with a `time` column followed by
//! channels named `V:<node>:<phase>` and `I:<node>:<element>:<phase>`. Optional
//! leading `# key: value` lines carry metadata (`fs`, `unit_v`, `unit_i`).
//! Currents are always the current flowing out of the node into the element.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative tolerance (in samples) used when mapping times onto the sample grid.
const GRID_TOLERANCE: f64 = 1e-6;

/// A uniformly sampled real-valued channel.
#[derive(Debug, Clone)]
pub struct SampleSeries {
    values: Vec<f64>,
    fs: f64,
    t0: f64,
}

impl SampleSeries {
    pub fn new(values: Vec<f64>, fs: f64, t0: f64) -> Result<Self> {
        if !(fs.is_finite() && fs > 0.0) {
            return Err(Error::Config(format!(
                "sampling rate must be positive, got {fs}"
            )));
        }
        if !t0.is_finite() {
            return Err(Error::Config(format!(
                "start time must be finite, got {t0}"
            )));
        }
        if values.len() < 2 {
            return Err(Error::InsufficientData(format!(
                "a series needs at least 2 samples, got {}",
                values.len()
            )));
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                channel: "<series>".into(),
                index,
            });
        }
        Ok(Self { values, fs, t0 })
    }

    /// Builds a series on the same grid as `self` with new values.
    ///
    /// The caller guarantees the values are finite and the length unchanged.
    pub(crate) fn with_values(&self, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), self.values.len());
        Self {
            values,
            fs: self.fs,
            t0: self.t0,
        }
    }

    /// Samples `f(t)` on `n` points starting at `t0`.
    pub fn from_fn(n: usize, fs: f64, t0: f64, f: impl Fn(f64) -> f64) -> Result<Self> {
        let values = (0..n).map(|k| f(t0 + k as f64 / fs)).collect();
        Self::new(values, fs, t0)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn fs(&self) -> f64 {
        self.fs
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.fs
    }

    /// Covered span is `[t0, end)`, one sample period past the last sample.
    pub fn end(&self) -> f64 {
        self.t0 + self.values.len() as f64 / self.fs
    }

    pub fn duration(&self) -> f64 {
        self.values.len() as f64 / self.fs
    }

    pub fn time(&self, k: usize) -> f64 {
        self.t0 + k as f64 / self.fs
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.values.len()).map(move |k| self.time(k))
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    pub fn rms(&self) -> f64 {
        (self.values.iter().map(|v| v * v).sum::<f64>() / self.values.len() as f64).sqrt()
    }

    pub fn scaled(&self, alpha: f64) -> Self {
        self.with_values(self.values.iter().map(|v| v * alpha).collect())
    }

    /// Index of the first sample at or after `t`, snapping to the grid when
    /// `t` falls on a sample instant up to rounding.
    pub fn index_at(&self, t: f64) -> i64 {
        let x = (t - self.t0) * self.fs;
        let r = x.round();
        if (x - r).abs() < GRID_TOLERANCE {
            r as i64
        } else {
            x.ceil() as i64
        }
    }

    pub fn same_grid(&self, other: &SampleSeries) -> bool {
        self.values.len() == other.values.len()
            && (self.fs - other.fs).abs() <= 1e-9 * self.fs
            && (self.t0 - other.t0).abs() <= GRID_TOLERANCE / self.fs
    }

    fn sample_range(&self, start: f64, end: f64) -> Result<(usize, usize)> {
        let range_err = || Error::Range {
            start,
            end,
            span_start: self.t0,
            span_end: self.end(),
        };
        if !(start.is_finite() && end.is_finite()) || end <= start {
            return Err(range_err());
        }
        let i0 = self.index_at(start);
        let i1 = self.index_at(end);
        if i0 < 0 || i1 > self.values.len() as i64 {
            return Err(range_err());
        }
        let (i0, i1) = (i0 as usize, i1 as usize);
        if i1 < i0 + 2 {
            return Err(Error::InsufficientData(format!(
                "slice [{start}, {end}) holds fewer than 2 samples at fs = {} Hz",
                self.fs
            )));
        }
        Ok((i0, i1))
    }

    /// Samples whose instants fall in `[start, end)`.
    pub fn slice(&self, start: f64, end: f64) -> Result<SampleSeries> {
        let (i0, i1) = self.sample_range(start, end)?;
        Ok(self.slice_indices(i0, i1))
    }

    pub(crate) fn slice_indices(&self, i0: usize, i1: usize) -> SampleSeries {
        SampleSeries {
            values: self.values[i0..i1].to_vec(),
            fs: self.fs,
            t0: self.time(i0),
        }
    }
}

/// Equal samples on the same grid; start instants may differ by rounding.
impl PartialEq for SampleSeries {
    fn eq(&self, other: &Self) -> bool {
        self.values == other.values
            && self.fs == other.fs
            && (self.t0 - other.t0).abs() <= GRID_TOLERANCE / self.fs
    }
}

/// Three phase channels on one shared sampling grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ThreePhaseSignal {
    pub a: SampleSeries,
    pub b: SampleSeries,
    pub c: SampleSeries,
}

impl ThreePhaseSignal {
    pub fn new(a: SampleSeries, b: SampleSeries, c: SampleSeries) -> Result<Self> {
        if !(a.same_grid(&b) && a.same_grid(&c)) {
            return Err(Error::Alignment(
                "phase channels differ in sampling rate, start time or length".into(),
            ));
        }
        Ok(Self { a, b, c })
    }

    pub fn phases(&self) -> [&SampleSeries; 3] {
        [&self.a, &self.b, &self.c]
    }

    pub fn fs(&self) -> f64 {
        self.a.fs()
    }

    pub fn t0(&self) -> f64 {
        self.a.t0()
    }

    pub fn len(&self) -> usize {
        self.a.len()
    }

    pub fn is_empty(&self) -> bool {
        self.a.is_empty()
    }

    pub fn same_grid(&self, other: &ThreePhaseSignal) -> bool {
        self.a.same_grid(&other.a)
    }

    pub fn scaled(&self, alpha: f64) -> Self {
        Self {
            a: self.a.scaled(alpha),
            b: self.b.scaled(alpha),
            c: self.c.scaled(alpha),
        }
    }

    pub fn slice(&self, start: f64, end: f64) -> Result<Self> {
        let (i0, i1) = self.a.sample_range(start, end)?;
        Ok(Self {
            a: self.a.slice_indices(i0, i1),
            b: self.b.slice_indices(i0, i1),
            c: self.c.slice_indices(i0, i1),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Edge {
    pub id: String,
    pub from: String,
    pub to: String,
}

impl Edge {
    /// The endpoint opposite `node`, if `node` is an endpoint.
    pub fn other_end(&self, node: &str) -> Option<&str> {
        if self.from == node {
            Some(&self.to)
        } else if self.to == node {
            Some(&self.from)
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shunt {
    pub id: String,
    pub node: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ElementKind {
    Line,
    Shunt,
}

/// Network nodes, lines between them, and shunt elements attached to them.
/// Declaration order is preserved and defines every report ordering.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Topology {
    nodes: Vec<String>,
    edges: Vec<Edge>,
    shunts: Vec<Shunt>,
}

impl Topology {
    pub fn new(nodes: Vec<String>, edges: Vec<Edge>, shunts: Vec<Shunt>) -> Result<Self> {
        let mut seen = HashSet::new();
        for n in &nodes {
            if !seen.insert(n.as_str()) {
                return Err(Error::Ingestion(format!("duplicate node id `{n}`")));
            }
        }
        let node_set: HashSet<&str> = nodes.iter().map(String::as_str).collect();
        let mut element_ids = HashSet::new();
        for e in &edges {
            if !element_ids.insert(e.id.as_str()) {
                return Err(Error::Ingestion(format!("duplicate element id `{}`", e.id)));
            }
            for end in [&e.from, &e.to] {
                if !node_set.contains(end.as_str()) {
                    return Err(Error::Ingestion(format!(
                        "edge `{}` references unknown node `{end}`",
                        e.id
                    )));
                }
            }
            if e.from == e.to {
                return Err(Error::Ingestion(format!("edge `{}` is a self-loop", e.id)));
            }
        }
        for s in &shunts {
            if !element_ids.insert(s.id.as_str()) {
                return Err(Error::Ingestion(format!("duplicate element id `{}`", s.id)));
            }
            if !node_set.contains(s.node.as_str()) {
                return Err(Error::Ingestion(format!(
                    "shunt `{}` references unknown node `{}`",
                    s.id, s.node
                )));
            }
        }
        Ok(Self {
            nodes,
            edges,
            shunts,
        })
    }

    pub fn nodes(&self) -> &[String] {
        &self.nodes
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn shunts(&self) -> &[Shunt] {
        &self.shunts
    }

    pub fn has_node(&self, id: &str) -> bool {
        self.nodes.iter().any(|n| n == id)
    }

    pub fn edge(&self, id: &str) -> Option<&Edge> {
        self.edges.iter().find(|e| e.id == id)
    }

    pub fn shunt(&self, id: &str) -> Option<&Shunt> {
        self.shunts.iter().find(|s| s.id == id)
    }

    pub fn element_kind(&self, id: &str) -> Option<ElementKind> {
        if self.edge(id).is_some() {
            Some(ElementKind::Line)
        } else if self.shunt(id).is_some() {
            Some(ElementKind::Shunt)
        } else {
            None
        }
    }

    /// Whether `element` attaches to `node`.
    pub fn is_incident(&self, node: &str, element: &str) -> bool {
        match (self.edge(element), self.shunt(element)) {
            (Some(e), _) => e.from == node || e.to == node,
            (_, Some(s)) => s.node == node,
            _ => false,
        }
    }

    pub fn lines_at<'a>(&'a self, node: &'a str) -> impl Iterator<Item = &'a Edge> + 'a {
        self.edges
            .iter()
            .filter(move |e| e.from == node || e.to == node)
    }

    pub fn shunts_at<'a>(&'a self, node: &'a str) -> impl Iterator<Item = &'a Shunt> + 'a {
        self.shunts.iter().filter(move |s| s.node == node)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut nodes = Vec::new();
        let mut edges = Vec::new();
        let mut shunts = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            let bad = || {
                Error::Ingestion(format!(
                    "topology line {}: cannot parse `{line}`",
                    lineno + 1
                ))
            };
            match fields.as_slice() {
                ["node", id] => nodes.push(id.to_string()),
                ["edge", id, from, to] => edges.push(Edge {
                    id: id.to_string(),
                    from: from.to_string(),
                    to: to.to_string(),
                }),
                ["shunt", id, node] => shunts.push(Shunt {
                    id: id.to_string(),
                    node: node.to_string(),
                }),
                _ => return Err(bad()),
            }
        }
        Self::new(nodes, edges, shunts)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for n in &self.nodes {
            let _ = writeln!(out, "node {n}");
        }
        for e in &self.edges {
            let _ = writeln!(out, "edge {} {} {}", e.id, e.from, e.to);
        }
        for s in &self.shunts {
            let _ = writeln!(out, "shunt {} {}", s.id, s.node);
        }
        out
    }
}

/// Node voltage and the current flowing out of that node into one element.
#[derive(Debug, Clone, PartialEq)]
pub struct TerminalMeasurement {
    pub node: String,
    pub element: String,
    pub v: ThreePhaseSignal,
    pub i: ThreePhaseSignal,
}

impl TerminalMeasurement {
    pub fn new(
        node: impl Into<String>,
        element: impl Into<String>,
        v: ThreePhaseSignal,
        i: ThreePhaseSignal,
    ) -> Result<Self> {
        let (node, element) = (node.into(), element.into());
        if !v.same_grid(&i) {
            return Err(Error::Alignment(format!(
                "voltage and current of terminal ({node}, {element}) are not time-aligned"
            )));
        }
        Ok(Self {
            node,
            element,
            v,
            i,
        })
    }

    pub fn key(&self) -> TerminalKey {
        TerminalKey::new(&self.node, &self.element)
    }

    pub fn fs(&self) -> f64 {
        self.v.fs()
    }

    pub fn t0(&self) -> f64 {
        self.v.t0()
    }

    pub fn end(&self) -> f64 {
        self.v.a.end()
    }

    pub fn scaled(&self, alpha: f64) -> Self {
        Self {
            node: self.node.clone(),
            element: self.element.clone(),
            v: self.v.scaled(alpha),
            i: self.i.scaled(alpha),
        }
    }
}

/// `(node, element)` pair identifying one measured terminal.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TerminalKey {
    pub node: String,
    pub element: String,
}

impl TerminalKey {
    pub fn new(node: &str, element: &str) -> Self {
        Self {
            node: node.to_string(),
            element: element.to_string(),
        }
    }
}

impl std::fmt::Display for TerminalKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}:{}", self.node, self.element)
    }
}

/// Restricts a measurement to `[start, end)`.
pub fn time_slice(m: &TerminalMeasurement, start: f64, end: f64) -> Result<TerminalMeasurement> {
    Ok(TerminalMeasurement {
        node: m.node.clone(),
        element: m.element.clone(),
        v: m.v.slice(start, end)?,
        i: m.i.slice(start, end)?,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Units {
    pub voltage: String,
    pub current: String,
}

impl Default for Units {
    fn default() -> Self {
        Self {
            voltage: "pu".into(),
            current: "pu".into(),
        }
    }
}

/// A topology plus all its terminal measurements on one sampling grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub topology: Topology,
    pub measurements: Vec<TerminalMeasurement>,
    pub units: Units,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeObservation {
    Both,
    Partial,
    Unobserved,
}

impl Dataset {
    pub fn new(
        topology: Topology,
        measurements: Vec<TerminalMeasurement>,
        units: Units,
    ) -> Result<Self> {
        let mut keys = HashSet::new();
        for m in &measurements {
            if !topology.has_node(&m.node) {
                return Err(Error::Ingestion(format!(
                    "measurement references unknown node `{}`",
                    m.node
                )));
            }
            if !topology.is_incident(&m.node, &m.element) {
                return Err(Error::Ingestion(format!(
                    "element `{}` is not incident to node `{}`",
                    m.element, m.node
                )));
            }
            if !keys.insert(m.key()) {
                return Err(Error::Ingestion(format!("duplicate terminal {}", m.key())));
            }
        }
        if let Some(first) = measurements.first() {
            for m in &measurements[1..] {
                if !m.v.same_grid(&first.v) {
                    return Err(Error::Alignment(format!(
                        "terminal {} is not on the sampling grid of terminal {}",
                        m.key(),
                        first.key()
                    )));
                }
            }
        }
        for s in topology.shunts() {
            if !keys.contains(&TerminalKey::new(&s.node, &s.id)) {
                return Err(Error::MissingChannel {
                    channel: format!("I:{}:{}:a", s.node, s.id),
                });
            }
        }
        Ok(Self {
            topology,
            measurements,
            units,
        })
    }

    pub fn measurement(&self, node: &str, element: &str) -> Option<&TerminalMeasurement> {
        self.measurements
            .iter()
            .find(|m| m.node == node && m.element == element)
    }

    /// How many ends of each edge carry a measurement.
    pub fn edge_observation(&self) -> BTreeMap<String, EdgeObservation> {
        self.topology
            .edges()
            .iter()
            .map(|e| {
                let n = [&e.from, &e.to]
                    .iter()
                    .filter(|end| self.measurement(end, &e.id).is_some())
                    .count();
                let obs = match n {
                    2 => EdgeObservation::Both,
                    1 => EdgeObservation::Partial,
                    _ => EdgeObservation::Unobserved,
                };
                (e.id.clone(), obs)
            })
            .collect()
    }

    /// Recording span `[start, end)` shared by all measurements.
    pub fn span(&self) -> Option<(f64, f64)> {
        self.measurements.first().map(|m| (m.t0(), m.end()))
    }

    pub fn fs(&self) -> Option<f64> {
        self.measurements.first().map(|m| m.fs())
    }

    pub fn time_slice(&self, start: f64, end: f64) -> Result<Dataset> {
        let measurements = self
            .measurements
            .iter()
            .map(|m| time_slice(m, start, end))
            .collect::<Result<Vec<_>>>()?;
        Ok(Dataset {
            topology: self.topology.clone(),
            measurements,
            units: self.units.clone(),
        })
    }

    pub fn scaled(&self, alpha: f64) -> Dataset {
        Dataset {
            topology: self.topology.clone(),
            measurements: self.measurements.iter().map(|m| m.scaled(alpha)).collect(),
            units: self.units.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
enum Channel {
    Voltage {
        node: String,
        phase: usize,
    },
    Current {
        node: String,
        element: String,
        phase: usize,
    },
}

fn phase_index(p: &str) -> Option<usize> {
    match p {
        "a" => Some(0),
        "b" => Some(1),
        "c" => Some(2),
        _ => None,
    }
}

const PHASES: [&str; 3] = ["a", "b", "c"];

fn parse_channel(name: &str) -> Option<Channel> {
    let parts: Vec<&str> = name.split(':').collect();
    match parts.as_slice() {
        ["V", node, p] => Some(Channel::Voltage {
            node: node.to_string(),
            phase: phase_index(p)?,
        }),
        ["I", node, element, p] => Some(Channel::Current {
            node: node.to_string(),
            element: element.to_string(),
            phase: phase_index(p)?,
        }),
        _ => None,
    }
}

/// Parsed waveform table before it is matched against a topology.
struct WaveformTable {
    fs: f64,
    t0: f64,
    units: Units,
    columns: HashMap<Channel, Vec<f64>>,
}

fn read_waveform_table(text: &str, path: &Path) -> Result<WaveformTable> {
    let mut meta = HashMap::new();
    let mut body_start = 0;
    for line in text.lines() {
        let trimmed = line.trim();
        if let Some(rest) = trimmed.strip_prefix('#') {
            if let Some((k, v)) = rest.split_once(':') {
                meta.insert(k.trim().to_string(), v.trim().to_string());
            }
            body_start += line.len() + 1;
        } else if trimmed.is_empty() {
            body_start += line.len() + 1;
        } else {
            break;
        }
    }
    let body = text.get(body_start.min(text.len())..).unwrap_or("");

    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(body.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| Error::parse(path, e.to_string()))?
        .clone();
    if headers.get(0) != Some("time") {
        return Err(Error::parse(path, "first column must be `time`"));
    }
    let mut channels = Vec::with_capacity(headers.len() - 1);
    for name in headers.iter().skip(1) {
        let ch = parse_channel(name)
            .ok_or_else(|| Error::Ingestion(format!("unrecognized channel name `{name}`")))?;
        channels.push((name.to_string(), ch));
    }

    let mut times = Vec::new();
    let mut data: Vec<Vec<f64>> = vec![Vec::new(); channels.len()];
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::parse(path, e.to_string()))?;
        if record.len() != headers.len() {
            return Err(Error::Alignment(format!(
                "row {row} has {} fields, header declares {}",
                record.len(),
                headers.len()
            )));
        }
        let parse = |s: &str, col: &str| {
            s.parse::<f64>().map_err(|_| {
                Error::parse(
                    path,
                    format!("row {row}, column `{col}`: `{s}` is not a number"),
                )
            })
        };
        times.push(parse(&record[0], "time")?);
        for (k, (name, _)) in channels.iter().enumerate() {
            data[k].push(parse(&record[k + 1], name)?);
        }
    }
    if times.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "{} holds fewer than 2 samples",
            path.display()
        )));
    }
    if let Some(index) = times.iter().position(|t| !t.is_finite()) {
        return Err(Error::NonFinite {
            channel: "time".into(),
            index,
        });
    }

    let t0 = times[0];
    let estimated = (times.len() - 1) as f64 / (times[times.len() - 1] - t0);
    let fs = match meta.get("fs") {
        Some(s) => {
            let fs: f64 = s
                .parse()
                .map_err(|_| Error::parse(path, format!("bad fs metadata `{s}`")))?;
            if (fs - estimated).abs() > 1e-6 * fs {
                return Err(Error::Alignment(format!(
                    "declared fs = {fs} Hz disagrees with time column ({estimated} Hz)"
                )));
            }
            fs
        }
        None => estimated,
    };
    if !(fs.is_finite() && fs > 0.0) {
        return Err(Error::Alignment("time column is not increasing".into()));
    }
    for (k, t) in times.iter().enumerate() {
        if ((t - t0) * fs - k as f64).abs() > 1e-3 {
            return Err(Error::Alignment(format!(
                "sample {k} at t = {t} s is off the uniform {fs} Hz grid"
            )));
        }
    }

    let mut columns = HashMap::new();
    for ((name, ch), values) in channels.into_iter().zip(data) {
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                channel: name,
                index,
            });
        }
        if columns.insert(ch, values).is_some() {
            return Err(Error::Ingestion(format!("channel `{name}` appears twice")));
        }
    }
    let mut units = Units::default();
    if let Some(u) = meta.get("unit_v") {
        units.voltage = u.clone();
    }
    if let Some(u) = meta.get("unit_i") {
        units.current = u.clone();
    }
    Ok(WaveformTable {
        fs,
        t0,
        units,
        columns,
    })
}

fn take_three_phase(
    columns: &mut HashMap<Channel, Vec<f64>>,
    make: impl Fn(usize) -> Channel,
    label: impl Fn(&str) -> String,
    fs: f64,
    t0: f64,
) -> Result<ThreePhaseSignal> {
    let mut phases = Vec::with_capacity(3);
    for (k, p) in PHASES.iter().enumerate() {
        let values = columns
            .get(&make(k))
            .cloned()
            .ok_or_else(|| Error::MissingChannel { channel: label(p) })?;
        phases.push(SampleSeries::new(values, fs, t0)?);
    }
    let c = phases.pop().expect("three phases");
    let b = phases.pop().expect("three phases");
    let a = phases.pop().expect("three phases");
    ThreePhaseSignal::new(a, b, c)
}

/// Reads a waveform table and matches it against `topology`.
pub fn read_dataset(waveform_text: &str, topology: Topology, source: &Path) -> Result<Dataset> {
    let mut table = read_waveform_table(waveform_text, source)?;
    let (fs, t0) = (table.fs, table.t0);

    let mut current_terminals: Vec<(String, String)> = Vec::new();
    for ch in table.columns.keys() {
        match ch {
            Channel::Current { node, element, .. } => {
                if !topology.has_node(node) {
                    return Err(Error::Ingestion(format!(
                        "channel references unknown node `{node}`"
                    )));
                }
                if topology.element_kind(element).is_none() {
                    return Err(Error::Ingestion(format!(
                        "channel references unknown element `{element}`"
                    )));
                }
                if !topology.is_incident(node, element) {
                    return Err(Error::Ingestion(format!(
                        "element `{element}` is not incident to node `{node}`"
                    )));
                }
                let key = (node.clone(), element.clone());
                if !current_terminals.contains(&key) {
                    current_terminals.push(key);
                }
            }
            Channel::Voltage { node, .. } => {
                if !topology.has_node(node) {
                    return Err(Error::Ingestion(format!(
                        "channel references unknown node `{node}`"
                    )));
                }
            }
        }
    }

    // Topology order: both ends of each edge, then shunts.
    let mut ordered: Vec<(String, String)> = Vec::new();
    for e in topology.edges() {
        for end in [&e.from, &e.to] {
            let key = (end.clone(), e.id.clone());
            if current_terminals.contains(&key) {
                ordered.push(key);
            }
        }
    }
    for s in topology.shunts() {
        let key = (s.node.clone(), s.id.clone());
        if current_terminals.contains(&key) {
            ordered.push(key);
        }
    }

    let mut voltages: HashMap<String, ThreePhaseSignal> = HashMap::new();
    let mut measurements = Vec::with_capacity(ordered.len());
    for (node, element) in ordered {
        if !voltages.contains_key(&node) {
            let v = take_three_phase(
                &mut table.columns,
                |phase| Channel::Voltage {
                    node: node.clone(),
                    phase,
                },
                |p| format!("V:{node}:{p}"),
                fs,
                t0,
            )?;
            voltages.insert(node.clone(), v);
        }
        let i = take_three_phase(
            &mut table.columns,
            |phase| Channel::Current {
                node: node.clone(),
                element: element.clone(),
                phase,
            },
            |p| format!("I:{node}:{element}:{p}"),
            fs,
            t0,
        )?;
        let v = voltages[&node].clone();
        measurements.push(TerminalMeasurement::new(node, element, v, i)?);
    }
    Dataset::new(topology, measurements, table.units)
}

/// Loads a waveform file and a topology file.
pub fn load_dataset(waveform_path: &Path, topology_path: &Path) -> Result<Dataset> {
    let topo_text = fs::read_to_string(topology_path).map_err(|e| Error::io(topology_path, e))?;
    let topology = Topology::parse(&topo_text)?;
    let mut text = String::new();
    fs::File::open(waveform_path)
        .and_then(|mut f| f.read_to_string(&mut text))
        .map_err(|e| Error::io(waveform_path, e))?;
    read_dataset(&text, topology, waveform_path)
}

/// Serializes the dataset's waveforms into the columnar text format.
pub fn waveforms_to_text(dataset: &Dataset) -> String {
    let Some(first) = dataset.measurements.first() else {
        return "time\n".into();
    };
    let mut columns: Vec<(String, &SampleSeries)> = Vec::new();
    let mut seen_nodes = HashSet::new();
    for m in &dataset.measurements {
        if seen_nodes.insert(m.node.clone()) {
            for (p, s) in PHASES.iter().zip(m.v.phases()) {
                columns.push((format!("V:{}:{p}", m.node), s));
            }
        }
    }
    for m in &dataset.measurements {
        for (p, s) in PHASES.iter().zip(m.i.phases()) {
            columns.push((format!("I:{}:{}:{p}", m.node, m.element), s));
        }
    }
    let n = first.v.len();
    let mut out = String::with_capacity(n * columns.len() * 20);
    let _ = writeln!(out, "# fs: {}", first.fs());
    let _ = writeln!(out, "# unit_v: {}", dataset.units.voltage);
    let _ = writeln!(out, "# unit_i: {}", dataset.units.current);
    out.push_str("time");
    for (name, _) in &columns {
        out.push(',');
        out.push_str(name);
    }
    out.push('\n');
    for k in 0..n {
        let _ = write!(out, "{}", first.v.a.time(k));
        for (_, s) in &columns {
            let _ = write!(out, ",{}", s.values()[k]);
        }
        out.push('\n');
    }
    out
}

/// Writes `waveforms.csv` and `topology.txt` into `dir`.
pub fn write_dataset(dir: &Path, dataset: &Dataset) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let wf = dir.join("waveforms.csv");
    fs::write(&wf, waveforms_to_text(dataset)).map_err(|e| Error::io(&wf, e))?;
    let tp = dir.join("topology.txt");
    fs::write(&tp, dataset.topology.to_text()).map_err(|e| Error::io(&tp, e))?;
    Ok(())
}
