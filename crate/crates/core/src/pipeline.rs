//! The analysis chain on in-memory data: dq transform, mode identification,
//! per-mode filtering, DEF and slopes, graphs and labels.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::AnalysisConfig;
use crate::def::{accumulate_def_with, def_slope, summarize, DefTrace, SlopeEstimate};
use crate::dq::{detrend, estimate_reference_phase, park_transform, DqReference};
use crate::error::{Error, Result};
use crate::graph::{build_mode_graph, classify_nodes, ModeGraph};
use crate::mode_filter::{BandPolicy, ModeFilter};
use crate::spectrum::{aggregate, compute_psd, identify_modes, Mode, ModeIdConfig, Spectrum};
use crate::waveform::{Dataset, ElementKind, SampleSeries, TerminalKey, Topology};

/// Upper bound on worker threads.
pub const THREADS_ENV: &str = "DEF_TRACER_THREADS";

/// A pool sized by `DEF_TRACER_THREADS` when set, else by rayon's default.
pub fn thread_pool() -> Result<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v.trim().parse().ok().filter(|n| *n > 0).ok_or_else(|| {
            Error::Config(format!(
                "{THREADS_ENV} must be a positive integer, got `{v}`"
            ))
        })?;
        b = b.num_threads(n);
    }
    b.build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))
}

/// Detrended dq components of one terminal. Currents keep the node-to-element
/// orientation of the measurement.
#[derive(Debug, Clone, PartialEq)]
pub struct DqTerminal {
    pub key: TerminalKey,
    pub kind: ElementKind,
    pub vd: SampleSeries,
    pub vq: SampleSeries,
    pub id: SampleSeries,
    pub iq: SampleSeries,
}

impl DqTerminal {
    pub fn channels(&self) -> [&SampleSeries; 4] {
        [&self.vd, &self.vq, &self.id, &self.iq]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceInfo {
    pub node: String,
    #[serde(flatten)]
    pub frame: DqReference,
    /// Start of the frame's angle clock, s.
    pub epoch: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prepared {
    pub reference: ReferenceInfo,
    pub window: (f64, f64),
    pub terminals: Vec<DqTerminal>,
}

fn stage<T>(name: &'static str, r: Result<T>) -> Result<T> {
    r.map_err(|e| e.in_stage(name))
}

/// Restricts the dataset to the analysis window, fixes the rotating frame on
/// the reference node voltage and moves every terminal into it.
pub fn prepare(ds: &Dataset, cfg: &AnalysisConfig) -> Result<Prepared> {
    stage("dq_transform", prepare_inner(ds, cfg))
}

fn prepare_inner(ds: &Dataset, cfg: &AnalysisConfig) -> Result<Prepared> {
    cfg.validate()?;
    let (span_start, span_end) = ds
        .span()
        .ok_or_else(|| Error::InsufficientData("dataset has no measurements".into()))?;
    let ds = match cfg.analysis_window {
        Some([a, b]) => ds.time_slice(a, b)?,
        None => ds.clone(),
    };
    let window = match cfg.analysis_window {
        Some([a, b]) => (a, b),
        None => (span_start, span_end),
    };
    let ref_node = match &cfg.ref_node {
        Some(n) => {
            if !ds.topology.has_node(n) {
                return Err(Error::Config(format!(
                    "reference node `{n}` is not in the topology"
                )));
            }
            n.clone()
        }
        None => ds
            .topology
            .nodes()
            .iter()
            .find(|n| ds.measurements.iter().any(|m| &m.node == *n))
            .cloned()
            .ok_or_else(|| Error::Reference("no node has a voltage measurement".into()))?,
    };
    let vref = ds
        .measurements
        .iter()
        .find(|m| m.node == ref_node)
        .ok_or_else(|| {
            Error::Reference(format!(
                "reference node `{ref_node}` has no voltage measurement"
            ))
        })?;
    let available = vref.end() - vref.t0();
    if available * cfg.f0 < 10.0 {
        return Err(Error::InsufficientData(format!(
            "{available} s of data is shorter than the 10 fundamental cycles needed for the reference angle"
        )));
    }
    let span = cfg.reference_span.min(available);
    let theta0 = estimate_reference_phase(&vref.v, cfg.f0, span)?;
    let reference = ReferenceInfo {
        node: ref_node,
        frame: DqReference { f0: cfg.f0, theta0 },
        epoch: vref.t0(),
    };
    let terminals = ds
        .measurements
        .iter()
        .map(|m| {
            let v = park_transform(&m.v, cfg.f0, theta0)?;
            let i = park_transform(&m.i, cfg.f0, theta0)?;
            let dt = |x: &SampleSeries| detrend(x, cfg.detrend, None);
            Ok(DqTerminal {
                key: m.key(),
                kind: ds
                    .topology
                    .element_kind(&m.element)
                    .expect("dataset validated the element"),
                vd: dt(&v.d)?,
                vq: dt(&v.q)?,
                id: dt(&i.d)?,
                iq: dt(&i.q)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Prepared {
        reference,
        window,
        terminals,
    })
}

pub fn mode_id_config(cfg: &AnalysisConfig) -> ModeIdConfig {
    ModeIdConfig {
        min_prominence_db: cfg.min_prominence_db,
        max_modes: cfg.max_modes,
        min_freq: cfg.min_mode_freq,
        dynamic_range_db: cfg.dynamic_range_db,
        bands: BandPolicy::fixed(cfg.band_halfwidth),
    }
}

/// Summed Welch spectrum of every dq channel and the modes picked from it.
pub fn identify(prep: &Prepared, cfg: &AnalysisConfig) -> Result<(Spectrum, Vec<Mode>)> {
    stage("mode_id", identify_inner(prep, cfg))
}

fn identify_inner(prep: &Prepared, cfg: &AnalysisConfig) -> Result<(Spectrum, Vec<Mode>)> {
    let first = prep
        .terminals
        .first()
        .ok_or_else(|| Error::InsufficientData("no terminals to analyse".into()))?;
    let segment = cfg.psd_segment.min(first.vd.duration());
    let spectra = prep
        .terminals
        .iter()
        .flat_map(|t| t.channels())
        .map(|x| compute_psd(x, segment, cfg.psd_overlap))
        .collect::<Result<Vec<_>>>()?;
    let modes = identify_modes(&spectra, &mode_id_config(cfg))?;
    Ok((aggregate(&spectra)?, modes))
}

/// Slope window actually used for a mode: `t_win`, raised to three periods.
pub fn effective_t_win(cfg: &AnalysisConfig, mode: &Mode) -> f64 {
    cfg.t_win.max(3.0 / mode.freq)
}

/// DEF of one terminal in one mode.
#[derive(Debug, Clone, PartialEq)]
pub struct TerminalDef {
    pub kind: ElementKind,
    pub trace: DefTrace,
    pub windows: Vec<SlopeEstimate>,
    pub summary: SlopeEstimate,
    pub t_win: f64,
}

impl TerminalDef {
    pub fn key(&self) -> &TerminalKey {
        &self.trace.terminal
    }
}

/// Filters the four dq channels around `mode` and integrates the energy.
/// Shunt terminals are integrated with the current reversed so their trace
/// reads as injection into the network; line terminals read outward from the
/// node into the line.
pub fn terminal_def(t: &DqTerminal, mode: &Mode, cfg: &AnalysisConfig) -> Result<TerminalDef> {
    let filter = ModeFilter::new(mode, cfg.filter_order, t.vd.fs())?;
    let sign = match t.kind {
        ElementKind::Line => 1.0,
        ElementKind::Shunt => -1.0,
    };
    let vd = filter.apply(&t.vd)?;
    let vq = filter.apply(&t.vq)?;
    let id = filter.apply(&t.id)?.scaled(sign);
    let iq = filter.apply(&t.iq)?.scaled(sign);
    let w = accumulate_def_with(cfg.def_rule, &id, &iq, &vd, &vq)?;
    let reliable = filter.reliable_span(&w);
    let trace = DefTrace::new(w, t.key.clone(), *mode, reliable);
    let t_win = effective_t_win(cfg, mode);
    let windows = def_slope(&trace, t_win)?;
    let summary = summarize(&windows).expect("def_slope yields at least one window");
    Ok(TerminalDef {
        kind: t.kind,
        trace,
        windows,
        summary,
        t_win,
    })
}

/// DEF of every (mode, terminal) pair, ordered by mode then terminal.
pub fn compute_def(
    prep: &Prepared,
    modes: &[Mode],
    cfg: &AnalysisConfig,
) -> Result<Vec<TerminalDef>> {
    let pairs: Vec<(&Mode, &DqTerminal)> = modes
        .iter()
        .flat_map(|m| prep.terminals.iter().map(move |t| (m, t)))
        .collect();
    let pool = thread_pool()?;
    let out = pool.install(|| {
        pairs
            .par_iter()
            .map(|(m, t)| terminal_def(t, m, cfg))
            .collect::<Result<Vec<_>>>()
    });
    stage("def_engine", out)
}

/// Summary slopes of one mode keyed by terminal.
pub type SlopeTable = BTreeMap<TerminalKey, SlopeEstimate>;

/// Graph and labels of one mode from its summary slope table.
pub fn mode_graph(
    mode: Mode,
    slopes: &SlopeTable,
    topo: &Topology,
    cfg: &AnalysisConfig,
) -> Result<ModeGraph> {
    let g = stage(
        "interaction_graph",
        build_mode_graph(mode, slopes, topo, cfg.eps_edge),
    )?;
    let shunts = g.shunt_slopes.clone();
    let c = classify_nodes(&g, topo, &shunts, cfg.eps_node);
    Ok(g.with_labels(c))
}

/// In-memory result of the whole chain.
#[derive(Debug, Clone)]
pub struct Analysis {
    pub prepared: Prepared,
    pub spectrum: Spectrum,
    pub modes: Vec<Mode>,
    pub defs: Vec<TerminalDef>,
    pub graphs: Vec<ModeGraph>,
}

impl Analysis {
    pub fn graph(&self, freq: f64) -> Option<&ModeGraph> {
        self.graphs
            .iter()
            .find(|g| g.mode.band.0 <= freq && freq <= g.mode.band.1)
    }

    pub fn summary(&self, freq: f64, node: &str, element: &str) -> Option<&SlopeEstimate> {
        self.defs
            .iter()
            .find(|d| {
                let m = &d.trace.mode;
                m.band.0 <= freq
                    && freq <= m.band.1
                    && d.key().node == node
                    && d.key().element == element
            })
            .map(|d| &d.summary)
    }
}

pub fn slope_tables(modes: &[Mode], defs: &[TerminalDef]) -> Vec<SlopeTable> {
    modes
        .iter()
        .map(|m| {
            defs.iter()
                .filter(|d| d.trace.mode == *m)
                .map(|d| (d.key().clone(), d.summary))
                .collect()
        })
        .collect()
}

/// Runs every stage on `ds`.
pub fn analyze(ds: &Dataset, cfg: &AnalysisConfig) -> Result<Analysis> {
    let prepared = prepare(ds, cfg)?;
    let (spectrum, modes) = identify(&prepared, cfg)?;
    let defs = compute_def(&prepared, &modes, cfg)?;
    let graphs = modes
        .iter()
        .zip(slope_tables(&modes, &defs))
        .map(|(m, t)| mode_graph(*m, &t, &ds.topology, cfg))
        .collect::<Result<Vec<_>>>()?;
    Ok(Analysis {
        prepared,
        spectrum,
        modes,
        defs,
        graphs,
    })
}
