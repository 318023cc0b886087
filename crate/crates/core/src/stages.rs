//! File-backed stages. Each stage reads the previous stage's output from the
//! run directory and writes its own, so `analyze` is exactly the three stages
//! run back to back.
//!
//! Run directory layout:
//!
//! ```text
//! modes.json            resolved config, reference frame, mode table
//! psd.csv               summed dq spectrum
//! def.json              config and modes used by the DEF stage
//! slopes.csv            per-window slopes, one row per (terminal, mode, window)
//! summary.csv           summary slope per (terminal, mode)
//! traces/<mode>.csv     decimated cumulative-energy traces
//! graphs/<mode>.gv      per-mode energy-flow graph
//! report.json           everything above plus graphs and labels
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::config::{AnalysisConfig, Threshold};
use crate::def::SlopeEstimate;
use crate::error::{Error, Result};
use crate::graph::export_graph;
use crate::pipeline::{
    compute_def, identify, mode_graph, prepare, ReferenceInfo, SlopeTable, TerminalDef,
};
use crate::spectrum::{Mode, Spectrum};
use crate::waveform::{load_dataset, Dataset, ElementKind, TerminalKey, Topology};

pub const MODES_FILE: &str = "modes.json";
pub const PSD_FILE: &str = "psd.csv";
pub const DEF_FILE: &str = "def.json";
pub const SLOPES_FILE: &str = "slopes.csv";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const TRACES_DIR: &str = "traces";
pub const GRAPHS_DIR: &str = "graphs";
pub const REPORT_FILE: &str = "report.json";

/// Rows kept per trace file.
const TRACE_ROWS: usize = 4000;

/// Waveform and topology files of one dataset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataPaths {
    pub waveforms: PathBuf,
    pub topology: PathBuf,
}

impl DataPaths {
    /// A directory means `<dir>/waveforms.csv` and `<dir>/topology.txt`; a
    /// file is the waveform file with `topology.txt` beside it unless given.
    pub fn resolve(data: &Path, topology: Option<&Path>) -> Self {
        let (waveforms, sibling) = if data.is_dir() {
            (data.join("waveforms.csv"), data.join("topology.txt"))
        } else {
            let dir = data.parent().map(Path::to_path_buf).unwrap_or_default();
            (data.to_path_buf(), dir.join("topology.txt"))
        };
        Self {
            waveforms,
            topology: topology.map(Path::to_path_buf).unwrap_or(sibling),
        }
    }

    pub fn load(&self) -> Result<Dataset> {
        load_dataset(&self.waveforms, &self.topology)
    }
}

/// Command-line overrides applied on top of a base configuration.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub f0: Option<f64>,
    pub ref_node: Option<String>,
    pub window: Option<[f64; 2]>,
    pub t_win: Option<f64>,
    pub eps_edge: Option<Threshold>,
    pub eps_node: Option<Threshold>,
    pub max_modes: Option<usize>,
    pub band_halfwidth: Option<f64>,
    pub filter_order: Option<usize>,
}

impl Overrides {
    pub fn apply(&self, mut cfg: AnalysisConfig) -> Result<AnalysisConfig> {
        if let Some(v) = self.f0 {
            cfg.f0 = v;
        }
        if let Some(v) = &self.ref_node {
            cfg.ref_node = Some(v.clone());
        }
        if let Some(v) = self.window {
            cfg.analysis_window = Some(v);
        }
        if let Some(v) = self.t_win {
            cfg.t_win = v;
        }
        if let Some(v) = self.eps_edge {
            cfg.eps_edge = v;
        }
        if let Some(v) = self.eps_node {
            cfg.eps_node = v;
        }
        if let Some(v) = self.max_modes {
            cfg.max_modes = v;
        }
        if let Some(v) = self.band_halfwidth {
            cfg.band_halfwidth = Some(v);
        }
        if let Some(v) = self.filter_order {
            cfg.filter_order = v;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Ok,
    NoSsciDetected,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModesRecord {
    pub status: Status,
    pub config: AnalysisConfig,
    pub data: DataPaths,
    pub topology: String,
    pub fs: f64,
    pub window: (f64, f64),
    pub reference: ReferenceInfo,
    pub modes: Vec<Mode>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DefRecord {
    pub config: AnalysisConfig,
    pub data: DataPaths,
    pub modes: Vec<Mode>,
    /// Positive DEF means energy leaving the node into a line, or leaving a
    /// shunt element into the network.
    pub orientation: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlopeRow {
    pub node: String,
    pub element: String,
    pub kind: ElementKind,
    pub mode_hz: f64,
    pub window_start: f64,
    pub window_end: f64,
    pub wdot: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub node: String,
    pub element: String,
    pub kind: ElementKind,
    pub mode_hz: f64,
    pub t_win: f64,
    pub reliable_start: f64,
    pub reliable_end: f64,
    pub window_start: f64,
    pub window_end: f64,
    pub wdot: f64,
    pub stderr: f64,
}

impl SummaryRow {
    pub fn estimate(&self) -> SlopeEstimate {
        SlopeEstimate {
            wdot: self.wdot,
            stderr: self.stderr,
            window: (self.window_start, self.window_end),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TerminalSlopes {
    pub node: String,
    pub element: String,
    pub kind: ElementKind,
    pub t_win: f64,
    pub reliable: (f64, f64),
    pub summary: SlopeEstimate,
    pub windows: Vec<SlopeEstimate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeReport {
    pub mode: Mode,
    pub slopes: Vec<TerminalSlopes>,
    pub graph_file: String,
    pub graph: serde_json::Value,
}

/// The structured report of one analysis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub status: Status,
    pub config: AnalysisConfig,
    pub data: DataPaths,
    pub fs: f64,
    pub window: (f64, f64),
    pub reference: ReferenceInfo,
    pub orientation: String,
    pub modes: Vec<ModeReport>,
    pub warnings: Vec<String>,
}

const ORIENTATION: &str =
    "line terminals: outward from the node into the line; shunt terminals: injection from the element into the network";

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("record serializes");
    text.push('\n');
    write_text(path, &text)
}

fn read_stage(path: &Path, prerequisite: &'static str) -> Result<String> {
    if !path.exists() {
        return Err(Error::MissingStage {
            path: path.to_path_buf(),
            prerequisite,
        });
    }
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn read_json<T: DeserializeOwned>(path: &Path, prerequisite: &'static str) -> Result<T> {
    let text = read_stage(path, prerequisite)?;
    serde_json::from_str(&text).map_err(|e| Error::parse(path, e.to_string()))
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T], headers: &[&str]) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(true)
        .from_writer(Vec::new());
    if rows.is_empty() {
        w.write_record(headers)
            .map_err(|e| Error::parse(path, e.to_string()))?;
    }
    for r in rows {
        w.serialize(r)
            .map_err(|e| Error::parse(path, e.to_string()))?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::parse(path, e.to_string()))?;
    write_text(
        path,
        &String::from_utf8(bytes).expect("csv output is UTF-8"),
    )
}

fn read_csv<T: DeserializeOwned>(path: &Path, prerequisite: &'static str) -> Result<Vec<T>> {
    let text = read_stage(path, prerequisite)?;
    csv::Reader::from_reader(text.as_bytes())
        .deserialize()
        .collect::<std::result::Result<Vec<T>, _>>()
        .map_err(|e| Error::parse(path, e.to_string()))
}

fn psd_text(s: &Spectrum) -> String {
    let mut out = String::from("freq_hz,psd\n");
    for (f, p) in s.freqs.iter().zip(&s.psd) {
        out.push_str(&format!("{f},{p}\n"));
    }
    out
}

/// Stage 1: dq transform and mode identification.
pub fn modes_stage(cfg: &AnalysisConfig, data: &DataPaths, out: &Path) -> Result<ModesRecord> {
    cfg.validate()?;
    let ds = data.load()?;
    let prep = prepare(&ds, cfg)?;
    let (spectrum, modes) = identify(&prep, cfg)?;
    let record = ModesRecord {
        status: if modes.is_empty() {
            Status::NoSsciDetected
        } else {
            Status::Ok
        },
        config: cfg.clone(),
        data: data.clone(),
        topology: ds.topology.to_text(),
        fs: ds.fs().expect("dataset has measurements"),
        window: prep.window,
        reference: prep.reference.clone(),
        modes,
    };
    write_json(&out.join(MODES_FILE), &record)?;
    write_text(&out.join(PSD_FILE), &psd_text(&spectrum))?;
    Ok(record)
}

/// Modes whose band contains `freq`.
pub fn select_modes(modes: &[Mode], freq: Option<f64>) -> Result<Vec<Mode>> {
    let Some(f) = freq else {
        return Ok(modes.to_vec());
    };
    let hit: Vec<Mode> = modes
        .iter()
        .filter(|m| m.band.0 <= f && f <= m.band.1)
        .copied()
        .collect();
    if hit.is_empty() {
        let known: Vec<String> = modes.iter().map(|m| format!("{:.2} Hz", m.freq)).collect();
        return Err(Error::Config(format!(
            "no identified mode covers {f} Hz (modes: {})",
            if known.is_empty() {
                "none".into()
            } else {
                known.join(", ")
            }
        )));
    }
    Ok(hit)
}

fn trace_text(defs: &[&TerminalDef]) -> String {
    let Some(first) = defs.first() else {
        return String::new();
    };
    let w = &first.trace.w;
    let step = w.len().div_ceil(TRACE_ROWS).max(1);
    let mut out = String::from("time");
    for d in defs {
        out.push_str(&format!(",{}", d.key()));
    }
    out.push('\n');
    for k in (0..w.len()).step_by(step) {
        out.push_str(&format!("{}", w.time(k)));
        for d in defs {
            out.push_str(&format!(",{}", d.trace.w.values()[k]));
        }
        out.push('\n');
    }
    out
}

const SLOPE_HEADERS: [&str; 8] = [
    "node",
    "element",
    "kind",
    "mode_hz",
    "window_start",
    "window_end",
    "wdot",
    "stderr",
];
const SUMMARY_HEADERS: [&str; 11] = [
    "node",
    "element",
    "kind",
    "mode_hz",
    "t_win",
    "reliable_start",
    "reliable_end",
    "window_start",
    "window_end",
    "wdot",
    "stderr",
];

/// Stage 2: per-mode filtering, DEF traces and slopes.
pub fn def_stage(
    overrides: &Overrides,
    base: Option<AnalysisConfig>,
    data: Option<DataPaths>,
    mode: Option<f64>,
    out: &Path,
) -> Result<DefRecord> {
    let modes_rec: ModesRecord = read_json(&out.join(MODES_FILE), "modes")?;
    let cfg = overrides.apply(base.unwrap_or_else(|| modes_rec.config.clone()))?;
    let data = data.unwrap_or_else(|| modes_rec.data.clone());
    let modes = select_modes(&modes_rec.modes, mode)?;
    let ds = data.load()?;
    let prep = prepare(&ds, &cfg)?;
    let defs = compute_def(&prep, &modes, &cfg)?;

    let mut slope_rows = Vec::new();
    let mut summary_rows = Vec::new();
    for d in &defs {
        let k = d.key();
        for w in &d.windows {
            slope_rows.push(SlopeRow {
                node: k.node.clone(),
                element: k.element.clone(),
                kind: d.kind,
                mode_hz: d.trace.mode.freq,
                window_start: w.window.0,
                window_end: w.window.1,
                wdot: w.wdot,
                stderr: w.stderr,
            });
        }
        summary_rows.push(SummaryRow {
            node: k.node.clone(),
            element: k.element.clone(),
            kind: d.kind,
            mode_hz: d.trace.mode.freq,
            t_win: d.t_win,
            reliable_start: d.trace.reliable.0,
            reliable_end: d.trace.reliable.1,
            window_start: d.summary.window.0,
            window_end: d.summary.window.1,
            wdot: d.summary.wdot,
            stderr: d.summary.stderr,
        });
    }
    write_csv(&out.join(SLOPES_FILE), &slope_rows, &SLOPE_HEADERS)?;
    write_csv(&out.join(SUMMARY_FILE), &summary_rows, &SUMMARY_HEADERS)?;
    for m in &modes {
        let of_mode: Vec<&TerminalDef> = defs.iter().filter(|d| d.trace.mode == *m).collect();
        write_text(
            &out.join(TRACES_DIR).join(format!("{}.csv", m.label())),
            &trace_text(&of_mode),
        )?;
    }
    let record = DefRecord {
        config: cfg,
        data,
        modes,
        orientation: ORIENTATION.into(),
    };
    write_json(&out.join(DEF_FILE), &record)?;
    Ok(record)
}

fn same_freq(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * a.abs().max(1.0)
}

/// Stage 3: graphs, labels and the report, from cached slopes only.
pub fn graph_stage(
    overrides: &Overrides,
    base: Option<AnalysisConfig>,
    out: &Path,
) -> Result<AnalysisReport> {
    let modes_rec: ModesRecord = read_json(&out.join(MODES_FILE), "modes")?;
    let def_rec: DefRecord = read_json(&out.join(DEF_FILE), "def")?;
    let cfg = overrides.apply(base.unwrap_or_else(|| def_rec.config.clone()))?;
    let summary: Vec<SummaryRow> = read_csv(&out.join(SUMMARY_FILE), "def")?;
    let windows: Vec<SlopeRow> = read_csv(&out.join(SLOPES_FILE), "def")?;
    let topo = Topology::parse(&modes_rec.topology)?;

    let mut modes = Vec::new();
    let mut warnings = Vec::new();
    for m in &def_rec.modes {
        let rows: Vec<&SummaryRow> = summary
            .iter()
            .filter(|r| same_freq(r.mode_hz, m.freq))
            .collect();
        let table: SlopeTable = rows
            .iter()
            .map(|r| (TerminalKey::new(&r.node, &r.element), r.estimate()))
            .collect();
        let g = mode_graph(*m, &table, &topo, &cfg)?;
        let (dot, record) = export_graph(&g, &topo);
        let graph_file = format!("{GRAPHS_DIR}/{}.gv", m.label());
        write_text(&out.join(&graph_file), &dot)?;
        warnings.extend(g.warnings.iter().map(|w| format!("{} Hz: {w}", m.label())));
        let slopes = rows
            .iter()
            .map(|r| TerminalSlopes {
                node: r.node.clone(),
                element: r.element.clone(),
                kind: r.kind,
                t_win: r.t_win,
                reliable: (r.reliable_start, r.reliable_end),
                summary: r.estimate(),
                windows: windows
                    .iter()
                    .filter(|w| {
                        w.node == r.node && w.element == r.element && same_freq(w.mode_hz, m.freq)
                    })
                    .map(|w| SlopeEstimate {
                        wdot: w.wdot,
                        stderr: w.stderr,
                        window: (w.window_start, w.window_end),
                    })
                    .collect(),
            })
            .collect();
        modes.push(ModeReport {
            mode: *m,
            slopes,
            graph_file,
            graph: record,
        });
    }
    let report = AnalysisReport {
        status: if def_rec.modes.is_empty() {
            Status::NoSsciDetected
        } else {
            Status::Ok
        },
        config: cfg,
        data: def_rec.data.clone(),
        fs: modes_rec.fs,
        window: modes_rec.window,
        reference: modes_rec.reference.clone(),
        orientation: ORIENTATION.into(),
        modes,
        warnings,
    };
    write_json(&out.join(REPORT_FILE), &report)?;
    Ok(report)
}

/// All three stages in order.
pub fn analyze_stage(cfg: &AnalysisConfig, data: &DataPaths, out: &Path) -> Result<AnalysisReport> {
    modes_stage(cfg, data, out)?;
    def_stage(&Overrides::default(), None, None, None, out)?;
    graph_stage(&Overrides::default(), None, out)
}
