//! Synthetic multi-terminal scenarios built in the phasor domain, with an
//! analytic energy-flow oracle.
//!
//! Every component is a balanced positive-sequence set at a signed frequency:
//! phase `p` of a component with phasor `X` and complex frequency `s` is
//! `Re(X·e^{s(t−t0)}·e^{−j2πp/3})`. A negative imaginary part of `s` is a
//! negative-sequence set at `|ω|`; lower sidebands of modes above `f0` land
//! there.

use std::collections::BTreeMap;
use std::f64::consts::TAU;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64 as C;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Label;
use crate::waveform::{
    Dataset, Edge, SampleSeries, Shunt, TerminalMeasurement, ThreePhaseSignal, Topology, Units,
};

const J: C = C::new(0.0, 1.0);

/// Phasors of the two sidebands of one mode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SidebandSpec {
    pub delta_f: f64,
    /// At `f0 − Δf`.
    pub lower: C,
    /// At `f0 + Δf`.
    pub upper: C,
}

impl SidebandSpec {
    /// Complex amplitudes `(D, Q)` of the d and q components at `Δf` in a frame
    /// whose angle at the phasor epoch is `theta0`.
    pub fn to_dq(&self, theta0: f64) -> (C, C) {
        let rot = C::from_polar(1.0, -theta0);
        let (u, l) = (self.upper * rot, self.lower * rot);
        (u + l.conj(), -J * (u - l.conj()))
    }
}

/// Cycle-averaged energy rate of dq components that are pure sinusoids at
/// `delta_f` with complex amplitudes `vd, vq, id, iq`.
pub fn analytic_def_rate_dq(vd: C, vq: C, id: C, iq: C, delta_f: f64) -> f64 {
    let w = TAU * delta_f;
    0.5 * w * (id * vq.conj() - iq * vd.conj()).im
}

/// Cycle-averaged energy rate of a terminal from its sideband phasors.
pub fn analytic_def_rate(v: &SidebandSpec, i: &SidebandSpec) -> f64 {
    assert!(
        (v.delta_f - i.delta_f).abs() <= 1e-12 * v.delta_f.abs().max(1.0),
        "voltage and current phasors belong to different modes"
    );
    let (vd, vq) = v.to_dq(0.0);
    let (id, iq) = i.to_dq(0.0);
    analytic_def_rate_dq(vd, vq, id, iq, v.delta_f)
}

/// The same rate written per sideband: `Δω·[Re(Vu·conj Iu) − Re(Vl·conj Il)]`.
pub fn sideband_def_rate(v: &SidebandSpec, i: &SidebandSpec) -> f64 {
    TAU * v.delta_f * ((v.upper * i.upper.conj()).re - (v.lower * i.lower.conj()).re)
}

/// Rate at the envelope epoch for components growing as `e^{σt}`:
/// `Σ Im(conj(I)·V·(σ + j(ω − ω0)))` over both sidebands.
pub fn growing_def_rate(v: &SidebandSpec, i: &SidebandSpec, sigma: f64) -> f64 {
    let dw = TAU * v.delta_f;
    let up = (i.upper.conj() * v.upper * C::new(sigma, dw)).im;
    let lo = (i.lower.conj() * v.lower * C::new(sigma, -dw)).im;
    up + lo
}

fn default_e0() -> C {
    C::new(1.0, 0.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LineSpec {
    pub id: String,
    pub from: String,
    pub to: String,
    /// Series resistance, pu.
    #[serde(default)]
    pub r: f64,
    /// Series reactance at `f0`, pu.
    pub x: f64,
    /// Series-capacitor reactance at `f0`, pu; no capacitor when zero.
    #[serde(default)]
    pub xc: f64,
}

impl LineSpec {
    pub fn impedance(&self, s: C, w0: f64) -> C {
        let mut z = C::new(self.r, 0.0) + s * (self.x / w0);
        if self.xc != 0.0 {
            z += C::new(self.xc * w0, 0.0) / s;
        }
        z
    }
}

/// A source behind an impedance at the fundamental; the same R-L impedance
/// sets its admittance at sideband frequencies unless a mode overrides it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShuntSpec {
    pub id: String,
    pub node: String,
    #[serde(default = "default_e0")]
    pub e0: C,
    /// `r0 + j·x0` at `f0`.
    pub z0: C,
}

impl ShuntSpec {
    pub fn admittance(&self, s: C, w0: f64) -> C {
        C::new(1.0, 0.0) / (C::new(self.z0.re, 0.0) + s * (self.z0.im / w0))
    }
}

/// What one shunt element does in one mode: a Norton current per sideband and
/// optionally its own admittance per sideband.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Injection {
    pub element: String,
    #[serde(default)]
    pub upper: C,
    #[serde(default)]
    pub lower: C,
    #[serde(default)]
    pub y_upper: Option<C>,
    #[serde(default)]
    pub y_lower: Option<C>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModeSpec {
    pub delta_f: f64,
    /// Envelope growth rate of the sidebands, 1/s.
    #[serde(default)]
    pub sigma: f64,
    #[serde(default)]
    pub injections: Vec<Injection>,
    /// Expected labels of elements, checked against the oracle by tests.
    #[serde(default)]
    pub intended: BTreeMap<String, Label>,
}

fn d_f0() -> f64 {
    60.0
}
fn d_fs() -> f64 {
    10_000.0
}
fn d_duration() -> f64 {
    4.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    #[serde(default)]
    pub name: String,
    #[serde(default = "d_f0")]
    pub f0: f64,
    #[serde(default = "d_fs")]
    pub fs: f64,
    #[serde(default = "d_duration")]
    pub duration: f64,
    #[serde(default)]
    pub t0: f64,
    /// White noise RMS as a fraction of each channel's RMS.
    #[serde(default)]
    pub noise: f64,
    #[serde(default)]
    pub seed: u64,
    pub nodes: Vec<String>,
    #[serde(default)]
    pub lines: Vec<LineSpec>,
    #[serde(default)]
    pub shunts: Vec<ShuntSpec>,
    #[serde(default)]
    pub modes: Vec<ModeSpec>,
}

fn scen(msg: impl Into<String>) -> Error {
    Error::Scenario(msg.into())
}

impl ScenarioSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: Self = toml::from_str(text).map_err(|e| scen(format!("scenario: {e}")))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    pub fn topology(&self) -> Result<Topology> {
        Topology::new(
            self.nodes.clone(),
            self.lines
                .iter()
                .map(|l| Edge {
                    id: l.id.clone(),
                    from: l.from.clone(),
                    to: l.to.clone(),
                })
                .collect(),
            self.shunts
                .iter()
                .map(|s| Shunt {
                    id: s.id.clone(),
                    node: s.node.clone(),
                })
                .collect(),
        )
        .map_err(|e| scen(e.to_string()))
    }

    fn w0(&self) -> f64 {
        TAU * self.f0
    }

    /// Complex frequencies `(lower, upper)` of a mode's sidebands.
    fn sideband_s(&self, m: &ModeSpec) -> (C, C) {
        let dw = TAU * m.delta_f;
        (
            C::new(m.sigma, self.w0() - dw),
            C::new(m.sigma, self.w0() + dw),
        )
    }

    pub fn validate(&self) -> Result<()> {
        let topo = self.topology()?;
        let pos = |v: f64| v.is_finite() && v > 0.0;
        if !pos(self.f0) || !pos(self.fs) || !pos(self.duration) {
            return Err(scen("f0, fs and duration must be positive"));
        }
        if !(self.noise.is_finite() && self.noise >= 0.0) {
            return Err(scen("noise must be non-negative"));
        }
        if !self.t0.is_finite() {
            return Err(scen("t0 must be finite"));
        }
        let max_df = self.modes.iter().map(|m| m.delta_f).fold(0.0, f64::max);
        if self.fs <= 4.0 * (self.f0 + max_df) {
            return Err(scen(format!(
                "fs = {} Hz must exceed 4·(f0 + max Δf) = {} Hz",
                self.fs,
                4.0 * (self.f0 + max_df)
            )));
        }
        if (self.duration * self.fs) < 2.0 {
            return Err(scen("duration holds fewer than two samples"));
        }
        let w0 = self.w0();
        let finite_nonzero = |z: C| z.re.is_finite() && z.im.is_finite() && z.norm() > 1e-12;
        let mut freqs = vec![C::new(0.0, w0)];
        for m in &self.modes {
            if !pos(m.delta_f) {
                return Err(scen(format!("Δf must be positive, got {}", m.delta_f)));
            }
            if (m.delta_f - self.f0).abs() < 1e-9 {
                return Err(scen("Δf equal to f0 puts the lower sideband at DC"));
            }
            if m.sigma.abs() > 0.5 {
                return Err(scen(format!(
                    "|σ| must not exceed 0.5 1/s, got {}",
                    m.sigma
                )));
            }
            let (sl, su) = self.sideband_s(m);
            freqs.extend([sl, su]);
            let mut seen = std::collections::HashSet::new();
            for inj in &m.injections {
                if topo.shunt(&inj.element).is_none() {
                    return Err(scen(format!(
                        "mode {} Hz: `{}` is not a shunt element",
                        m.delta_f, inj.element
                    )));
                }
                if !seen.insert(inj.element.as_str()) {
                    return Err(scen(format!(
                        "mode {} Hz: `{}` listed twice",
                        m.delta_f, inj.element
                    )));
                }
                for y in [inj.y_upper, inj.y_lower].into_iter().flatten() {
                    if !finite_nonzero(y) {
                        return Err(scen(format!(
                            "admittance of `{}` must be finite and nonzero",
                            inj.element
                        )));
                    }
                }
            }
            for id in m.intended.keys() {
                if topo.element_kind(id).is_none() {
                    return Err(scen(format!("intended label for unknown element `{id}`")));
                }
            }
        }
        for s in freqs {
            for l in &self.lines {
                let z = l.impedance(s, w0);
                if !finite_nonzero(z) || !finite_nonzero(C::new(1.0, 0.0) / z) {
                    return Err(scen(format!("line `{}` has a degenerate impedance", l.id)));
                }
            }
            for sh in &self.shunts {
                if !finite_nonzero(sh.admittance(s, w0)) {
                    return Err(scen(format!(
                        "shunt `{}` has a degenerate admittance",
                        sh.id
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Voltage and node-to-element current phasor of one terminal at one frequency.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TerminalPhasor {
    pub v: C,
    pub i: C,
}

/// Nodal solution at complex frequency `s`. `sources` maps shunt ids to
/// Norton currents, `overrides` to admittances replacing the default ones.
/// Returns terminal phasors keyed like the dataset, with node-to-element
/// current orientation.
pub fn solve_network(
    spec: &ScenarioSpec,
    s: C,
    sources: &BTreeMap<String, C>,
    overrides: &BTreeMap<String, C>,
) -> Result<BTreeMap<(String, String), TerminalPhasor>> {
    let w0 = spec.w0();
    let n = spec.nodes.len();
    let idx = |id: &str| {
        spec.nodes
            .iter()
            .position(|x| x == id)
            .expect("validated node")
    };
    let mut y = DMatrix::<C>::zeros(n, n);
    let mut inj = DVector::<C>::zeros(n);
    for l in &spec.lines {
        let ye = C::new(1.0, 0.0) / l.impedance(s, w0);
        let (a, b) = (idx(&l.from), idx(&l.to));
        y[(a, a)] += ye;
        y[(b, b)] += ye;
        y[(a, b)] -= ye;
        y[(b, a)] -= ye;
    }
    let mut ysh = BTreeMap::new();
    for sh in &spec.shunts {
        let ys = overrides
            .get(&sh.id)
            .copied()
            .unwrap_or_else(|| sh.admittance(s, w0));
        let k = idx(&sh.node);
        y[(k, k)] += ys;
        inj[k] += sources.get(&sh.id).copied().unwrap_or_default();
        ysh.insert(sh.id.clone(), ys);
    }
    let scale = y.iter().map(|v| v.norm()).fold(0.0, f64::max);
    let lu = y.lu();
    let v = lu
        .solve(&inj)
        .filter(|v| v.iter().all(|x| x.re.is_finite() && x.im.is_finite()))
        .ok_or_else(|| scen(format!("network is singular at s = {s}")))?;
    let det = lu.determinant().norm();
    if !(det > 1e-12 * scale.powi(n as i32)) {
        return Err(scen(format!("network is singular at s = {s}")));
    }
    let mut out = BTreeMap::new();
    for l in &spec.lines {
        let ye = C::new(1.0, 0.0) / l.impedance(s, w0);
        let (va, vb) = (v[idx(&l.from)], v[idx(&l.to)]);
        out.insert(
            (l.from.clone(), l.id.clone()),
            TerminalPhasor {
                v: va,
                i: ye * (va - vb),
            },
        );
        out.insert(
            (l.to.clone(), l.id.clone()),
            TerminalPhasor {
                v: vb,
                i: ye * (vb - va),
            },
        );
    }
    for sh in &spec.shunts {
        let vn = v[idx(&sh.node)];
        let src = sources.get(&sh.id).copied().unwrap_or_default();
        // into the element: the admittance draws y·v while the source pushes src out
        out.insert(
            (sh.node.clone(), sh.id.clone()),
            TerminalPhasor {
                v: vn,
                i: ysh[&sh.id] * vn - src,
            },
        );
    }
    Ok(out)
}

/// Analytic energy flow of one mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleMode {
    pub delta_f: f64,
    pub sigma: f64,
    /// Rate at `t0` per terminal `node:element`: outward into the line for
    /// line terminals, injection into the network for shunt terminals.
    pub terminal_wdot: BTreeMap<String, f64>,
    /// Sum of the two outward end rates of each line.
    pub line_absorption: BTreeMap<String, f64>,
    pub shunt_injection: BTreeMap<String, f64>,
    /// Net outward rate per element (lines: minus absorption).
    pub element_net: BTreeMap<String, f64>,
    pub node_net: BTreeMap<String, f64>,
    pub element_labels: BTreeMap<String, Label>,
    pub node_labels: BTreeMap<String, Label>,
    pub intended: BTreeMap<String, Label>,
    /// Sideband phasors `(voltage, node-to-element current)` per terminal.
    pub phasors: BTreeMap<String, (SidebandSpec, SidebandSpec)>,
}

impl OracleMode {
    /// Rate of terminal `node:element` at time `t`.
    pub fn rate_at(&self, key: &str, t: f64, t0: f64) -> Option<f64> {
        self.terminal_wdot
            .get(key)
            .map(|w| w * (2.0 * self.sigma * (t - t0)).exp())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleTruth {
    pub name: String,
    pub f0: f64,
    pub t0: f64,
    /// Relative threshold used for the oracle labels.
    pub eps_rel: f64,
    pub modes: Vec<OracleMode>,
}

impl OracleTruth {
    pub fn mode(&self, delta_f: f64) -> Option<&OracleMode> {
        self.modes
            .iter()
            .find(|m| (m.delta_f - delta_f).abs() < 1e-9)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("truth serializes")
    }
}

/// A sum of rotating components sampled into three phases.
fn three_phase(components: &[(C, C)], n: usize, fs: f64, t0: f64) -> Result<ThreePhaseSignal> {
    let shifts = [0.0, -TAU / 3.0, TAU / 3.0];
    let mut phases = Vec::with_capacity(3);
    for shift in shifts {
        let rot = C::from_polar(1.0, shift);
        let comps: Vec<(C, C)> = components.iter().map(|(s, x)| (*s, x * rot)).collect();
        let values = (0..n)
            .map(|k| {
                let tau = k as f64 / fs;
                comps.iter().map(|(s, x)| (x * (s * tau).exp()).re).sum()
            })
            .collect();
        phases.push(SampleSeries::new(values, fs, t0)?);
    }
    let c = phases.pop().expect("three phases");
    let b = phases.pop().expect("three phases");
    let a = phases.pop().expect("three phases");
    ThreePhaseSignal::new(a, b, c)
}

fn add_noise(x: &ThreePhaseSignal, rel: f64, rng: &mut ChaCha8Rng) -> Result<ThreePhaseSignal> {
    if rel == 0.0 {
        return Ok(x.clone());
    }
    let mut out = Vec::with_capacity(3);
    for p in x.phases() {
        let sigma = rel * p.rms();
        let d = Normal::new(0.0, sigma).map_err(|e| scen(e.to_string()))?;
        let values = p.values().iter().map(|v| v + d.sample(rng)).collect();
        out.push(SampleSeries::new(values, p.fs(), p.t0())?);
    }
    let c = out.pop().expect("three phases");
    let b = out.pop().expect("three phases");
    let a = out.pop().expect("three phases");
    ThreePhaseSignal::new(a, b, c)
}

/// Labels from net rates with a threshold relative to the largest element magnitude.
fn label_map(net: &BTreeMap<String, f64>, eps: f64) -> BTreeMap<String, Label> {
    net.iter()
        .map(|(k, v)| (k.clone(), Label::from_net(*v, eps)))
        .collect()
}

/// Time-domain dataset of every terminal in the scenario and its analytic
/// energy-flow oracle. Noise is drawn from a ChaCha stream seeded by `spec.seed`.
pub fn synthesize_scenario(spec: &ScenarioSpec) -> Result<(Dataset, OracleTruth)> {
    spec.validate()?;
    let topo = spec.topology()?;
    let w0 = spec.w0();
    let eps_rel = 0.05;

    // fundamental
    let fund_sources: BTreeMap<String, C> = spec
        .shunts
        .iter()
        .map(|s| (s.id.clone(), s.e0 / s.z0))
        .collect();
    let fund = solve_network(spec, C::new(0.0, w0), &fund_sources, &BTreeMap::new())?;

    let mut comps: BTreeMap<(String, String), Vec<(C, TerminalPhasor)>> = fund
        .iter()
        .map(|(k, p)| (k.clone(), vec![(C::new(0.0, w0), *p)]))
        .collect();

    let mut modes = Vec::new();
    for m in &spec.modes {
        let (sl, su) = spec.sideband_s(m);
        let src = |upper: bool| -> BTreeMap<String, C> {
            m.injections
                .iter()
                .map(|i| (i.element.clone(), if upper { i.upper } else { i.lower }))
                .collect()
        };
        let ovr = |upper: bool| -> BTreeMap<String, C> {
            m.injections
                .iter()
                .filter_map(|i| {
                    let y = if upper { i.y_upper } else { i.y_lower };
                    y.map(|y| (i.element.clone(), y))
                })
                .collect()
        };
        let up = solve_network(spec, su, &src(true), &ovr(true))?;
        let lo = solve_network(spec, sl, &src(false), &ovr(false))?;

        let mut terminal_wdot = BTreeMap::new();
        let mut phasors = BTreeMap::new();
        for (key, pu) in &up {
            let pl = lo[key];
            let v = SidebandSpec {
                delta_f: m.delta_f,
                lower: pl.v,
                upper: pu.v,
            };
            let mut i = SidebandSpec {
                delta_f: m.delta_f,
                lower: pl.i,
                upper: pu.i,
            };
            comps
                .get_mut(key)
                .expect("terminal")
                .extend([(su, *pu), (sl, pl)]);
            phasors.insert(format!("{}:{}", key.0, key.1), (v, i));
            if topo.shunt(&key.1).is_some() {
                i.lower = -i.lower;
                i.upper = -i.upper;
            }
            terminal_wdot.insert(
                format!("{}:{}", key.0, key.1),
                growing_def_rate(&v, &i, m.sigma),
            );
        }
        let key = |n: &str, e: &str| format!("{n}:{e}");
        let mut line_absorption = BTreeMap::new();
        let mut shunt_injection = BTreeMap::new();
        let mut element_net = BTreeMap::new();
        for l in &spec.lines {
            let a = terminal_wdot[&key(&l.from, &l.id)] + terminal_wdot[&key(&l.to, &l.id)];
            line_absorption.insert(l.id.clone(), a);
            element_net.insert(l.id.clone(), -a);
        }
        for s in &spec.shunts {
            let w = terminal_wdot[&key(&s.node, &s.id)];
            shunt_injection.insert(s.id.clone(), w);
            element_net.insert(s.id.clone(), w);
        }
        let mut node_net = BTreeMap::new();
        for n in &spec.nodes {
            let lines: Vec<f64> = topo
                .lines_at(n)
                .map(|e| terminal_wdot[&key(n, &e.id)])
                .collect();
            let net = if lines.is_empty() {
                topo.shunts_at(n)
                    .map(|s| terminal_wdot[&key(n, &s.id)])
                    .sum()
            } else {
                lines.iter().sum()
            };
            node_net.insert(n.clone(), net);
        }
        let max = element_net.values().fold(0.0f64, |a, v| a.max(v.abs()));
        let eps = eps_rel * max;
        modes.push(OracleMode {
            delta_f: m.delta_f,
            sigma: m.sigma,
            element_labels: label_map(&element_net, eps),
            node_labels: label_map(&node_net, eps),
            terminal_wdot,
            line_absorption,
            shunt_injection,
            element_net,
            node_net,
            intended: m.intended.clone(),
            phasors,
        });
    }

    let n = (spec.duration * spec.fs).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut node_v: BTreeMap<String, ThreePhaseSignal> = BTreeMap::new();
    for node in &spec.nodes {
        if let Some((_, list)) = comps.iter().find(|((nd, _), _)| nd == node) {
            let v: Vec<(C, C)> = list.iter().map(|(s, p)| (*s, p.v)).collect();
            let clean = three_phase(&v, n, spec.fs, spec.t0)?;
            node_v.insert(node.clone(), add_noise(&clean, spec.noise, &mut rng)?);
        }
    }
    let mut measurements = Vec::new();
    let order = topo
        .edges()
        .iter()
        .flat_map(|e| [(e.from.clone(), e.id.clone()), (e.to.clone(), e.id.clone())])
        .chain(topo.shunts().iter().map(|s| (s.node.clone(), s.id.clone())));
    for key in order {
        let list = &comps[&key];
        let i: Vec<(C, C)> = list.iter().map(|(s, p)| (*s, p.i)).collect();
        let clean = three_phase(&i, n, spec.fs, spec.t0)?;
        let i = add_noise(&clean, spec.noise, &mut rng)?;
        measurements.push(TerminalMeasurement::new(
            key.0.clone(),
            key.1.clone(),
            node_v[&key.0].clone(),
            i,
        )?);
    }
    let dataset = Dataset::new(topo, measurements, Units::default())?;
    Ok((
        dataset,
        OracleTruth {
            name: spec.name.clone(),
            f0: spec.f0,
            t0: spec.t0,
            eps_rel,
            modes,
        },
    ))
}

/// One randomly drawn terminal for oracle-equivalence checks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SingleTerminalCase {
    pub v: SidebandSpec,
    pub i: SidebandSpec,
}

impl SingleTerminalCase {
    /// Amplitudes uniform in `[0.01, 1]`, phases uniform, `Δf` an integer in `[10, 110]`.
    pub fn random(rng: &mut impl rand::Rng) -> Self {
        let delta_f = rng.random_range(10..=110) as f64;
        let mut ph = || C::from_polar(rng.random_range(0.01..=1.0), rng.random_range(0.0..TAU));
        let (vl, vu, il, iu) = (ph(), ph(), ph(), ph());
        Self {
            v: SidebandSpec {
                delta_f,
                lower: vl,
                upper: vu,
            },
            i: SidebandSpec {
                delta_f,
                lower: il,
                upper: iu,
            },
        }
    }

    pub fn oracle(&self) -> f64 {
        analytic_def_rate(&self.v, &self.i)
    }

    /// Dataset with a single measured line terminal `(1, e)` carrying the
    /// case's sidebands on top of a 1 pu fundamental.
    pub fn synthesize(
        &self,
        f0: f64,
        fs: f64,
        duration: f64,
        noise: f64,
        seed: u64,
    ) -> Result<Dataset> {
        let w0 = TAU * f0;
        let dw = TAU * self.v.delta_f;
        let (su, sl, s0) = (C::new(0.0, w0 + dw), C::new(0.0, w0 - dw), C::new(0.0, w0));
        let n = (duration * fs).round() as usize;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v = three_phase(
            &[
                (s0, C::new(1.0, 0.0)),
                (su, self.v.upper),
                (sl, self.v.lower),
            ],
            n,
            fs,
            0.0,
        )?;
        let i = three_phase(
            &[
                (s0, C::from_polar(0.5, -0.3)),
                (su, self.i.upper),
                (sl, self.i.lower),
            ],
            n,
            fs,
            0.0,
        )?;
        let v = add_noise(&v, noise, &mut rng)?;
        let i = add_noise(&i, noise, &mut rng)?;
        let topo = Topology::new(
            vec!["1".into(), "2".into()],
            vec![Edge {
                id: "e".into(),
                from: "1".into(),
                to: "2".into(),
            }],
            vec![],
        )?;
        Dataset::new(
            topo,
            vec![TerminalMeasurement::new("1", "e", v, i)?],
            Units::default(),
        )
    }
}

fn c(re: f64, im: f64) -> C {
    C::new(re, im)
}

fn three_node(name: &str) -> ScenarioSpec {
    let line = |id: &str, from: &str, to: &str, r: f64, x: f64, xc: f64| LineSpec {
        id: id.into(),
        from: from.into(),
        to: to.into(),
        r,
        x,
        xc,
    };
    ScenarioSpec {
        name: name.into(),
        f0: 60.0,
        fs: 10_000.0,
        duration: 4.0,
        t0: 0.0,
        noise: 0.0,
        seed: 0,
        nodes: vec!["1".into(), "2".into(), "3".into()],
        lines: vec![
            line("e12", "1", "2", 0.0, 1.7, 0.0),
            line("e23", "2", "3", 0.0, 0.5, 0.0),
            line("e13", "1", "3", 1.0, 0.25, 0.075),
        ],
        shunts: vec![
            ShuntSpec {
                id: "A".into(),
                node: "1".into(),
                e0: c(1.05, 0.0),
                z0: c(0.0, 0.125),
            },
            ShuntSpec {
                id: "B".into(),
                node: "2".into(),
                e0: C::from_polar(1.0, -0.2),
                z0: c(0.0, 0.36),
            },
        ],
        modes: Vec::new(),
    }
}

fn labels(items: &[(&str, Label)]) -> BTreeMap<String, Label> {
    items.iter().map(|(k, l)| (k.to_string(), *l)).collect()
}

/// Three nodes, two lossless lines and one lossy series-compensated line
/// (`e13`); shunt `A` at node 1, shunt `B` at node 2. At 25 Hz `A` injects and
/// `B` is dissipative; at 105 Hz the roles are reversed.
pub fn role_switch() -> ScenarioSpec {
    use Label::{Sink, Source};
    let mut s = three_node("role-switch");
    s.modes = vec![
        ModeSpec {
            delta_f: 25.0,
            sigma: 0.0,
            injections: vec![
                Injection {
                    element: "A".into(),
                    upper: c(0.2, 0.0),
                    lower: C::from_polar(0.06, 2.3),
                    y_upper: None,
                    y_lower: None,
                },
                Injection {
                    element: "B".into(),
                    upper: C::default(),
                    lower: C::default(),
                    y_upper: Some(c(2.7, 0.0)),
                    y_lower: Some(c(2.7, 0.0)),
                },
            ],
            intended: labels(&[("A", Source), ("B", Sink), ("e13", Sink)]),
        },
        ModeSpec {
            delta_f: 105.0,
            sigma: 0.0,
            injections: vec![
                Injection {
                    element: "B".into(),
                    upper: c(0.2, 0.0),
                    lower: C::from_polar(0.06, 1.5),
                    y_upper: None,
                    y_lower: None,
                },
                Injection {
                    element: "A".into(),
                    upper: C::default(),
                    lower: C::default(),
                    y_upper: Some(c(2.2, 0.0)),
                    y_lower: Some(c(2.2, 0.0)),
                },
            ],
            intended: labels(&[("A", Sink), ("B", Source), ("e13", Sink)]),
        },
    ];
    s
}

/// Same network with both shunts injecting at 25 Hz; only `e13` dissipates.
pub fn window_a() -> ScenarioSpec {
    use Label::{Sink, Source};
    let mut s = three_node("window-a");
    s.modes = vec![ModeSpec {
        delta_f: 25.0,
        sigma: 0.0,
        injections: vec![
            Injection {
                element: "A".into(),
                upper: c(0.2, 0.0),
                lower: C::from_polar(0.06, 2.3),
                y_upper: None,
                y_lower: None,
            },
            Injection {
                element: "B".into(),
                upper: C::from_polar(0.2, 3.6),
                lower: C::from_polar(0.06, 2.3 + 3.6),
                y_upper: None,
                y_lower: None,
            },
        ],
        intended: labels(&[("A", Source), ("B", Source), ("e13", Sink)]),
    }];
    s
}

/// Two nodes joined by one line of resistance `r`; shunt `S` at node 1 injects
/// a 25 Hz mode into a dissipative shunt `L` at node 2.
pub fn two_node(r: f64) -> ScenarioSpec {
    use Label::{Sink, Source};
    ScenarioSpec {
        name: if r == 0.0 {
            "two-node-lossless"
        } else {
            "two-node-dissipative"
        }
        .into(),
        f0: 60.0,
        fs: 10_000.0,
        duration: 4.0,
        t0: 0.0,
        noise: 0.0,
        seed: 0,
        nodes: vec!["1".into(), "2".into()],
        lines: vec![LineSpec {
            id: "e".into(),
            from: "1".into(),
            to: "2".into(),
            r,
            x: 0.4,
            xc: 0.0,
        }],
        shunts: vec![
            ShuntSpec {
                id: "S".into(),
                node: "1".into(),
                e0: c(1.02, 0.0),
                z0: c(0.0, 0.2),
            },
            ShuntSpec {
                id: "L".into(),
                node: "2".into(),
                e0: C::from_polar(1.0, -0.1),
                z0: c(0.0, 0.3),
            },
        ],
        modes: vec![ModeSpec {
            delta_f: 25.0,
            sigma: 0.0,
            injections: vec![
                Injection {
                    element: "S".into(),
                    upper: c(0.2, 0.0),
                    lower: C::from_polar(0.05, 0.8),
                    y_upper: None,
                    y_lower: None,
                },
                Injection {
                    element: "L".into(),
                    upper: C::default(),
                    lower: C::default(),
                    y_upper: Some(c(1.5, 0.0)),
                    y_lower: Some(c(1.5, 0.0)),
                },
            ],
            intended: labels(&[("S", Source), ("L", Sink)]),
        }],
    }
}

/// Named presets available from the command line.
pub fn preset(name: &str) -> Option<ScenarioSpec> {
    match name {
        "role-switch" => Some(role_switch()),
        "window-a" => Some(window_a()),
        "two-node-lossless" => Some(two_node(0.0)),
        "two-node-dissipative" => Some(two_node(0.1)),
        _ => None,
    }
}

pub const PRESETS: [&str; 4] = [
    "role-switch",
    "window-a",
    "two-node-lossless",
    "two-node-dissipative",
];
