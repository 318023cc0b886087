//! Per-mode band isolation of dq components.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filter::{butter_bandpass, Sos};
use crate::spectrum::Mode;
use crate::waveform::SampleSeries;

/// How wide a band each mode gets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandPolicy {
    pub min_halfwidth: f64,
    pub rel_halfwidth: f64,
    /// Overrides the two above when set.
    pub fixed_halfwidth: Option<f64>,
}

impl Default for BandPolicy {
    fn default() -> Self {
        Self {
            min_halfwidth: 2.0,
            rel_halfwidth: 0.1,
            fixed_halfwidth: None,
        }
    }
}

impl BandPolicy {
    pub fn fixed(hw: Option<f64>) -> Self {
        Self {
            fixed_halfwidth: hw,
            ..Self::default()
        }
    }

    pub fn halfwidth(&self, f: f64) -> f64 {
        self.fixed_halfwidth
            .unwrap_or_else(|| self.min_halfwidth.max(self.rel_halfwidth * f))
    }
}

/// Sets each mode's band from the policy, keeps it inside `(0, nyquist)`, and
/// trims overlapping neighbours at the midpoint between their centers.
pub fn assign_bands(modes: &mut [Mode], policy: &BandPolicy, nyquist: f64) {
    for m in modes.iter_mut() {
        let hw = policy.halfwidth(m.freq);
        let lo = (m.freq - hw).max(0.5 * m.freq);
        let hi = (m.freq + hw).min(0.5 * (m.freq + nyquist));
        m.band = (lo, hi);
    }
    let mut order: Vec<usize> = (0..modes.len()).collect();
    order.sort_by(|&a, &b| modes[a].freq.total_cmp(&modes[b].freq));
    for w in order.windows(2) {
        let (a, b) = (w[0], w[1]);
        if modes[a].band.1 >= modes[b].band.0 {
            let mid = 0.5 * (modes[a].freq + modes[b].freq);
            let gap = 1e-6 * mid;
            modes[a].band.1 = modes[a].band.1.min(mid - gap);
            modes[b].band.0 = modes[b].band.0.max(mid + gap);
        }
    }
}

/// Start and end samples near the edges that still carry filter transients, s.
pub fn edge_guard(mode: &Mode) -> f64 {
    3.0 / mode.bandwidth()
}

/// Shortest record that can be filtered for `mode`, s.
pub fn min_duration(mode: &Mode) -> f64 {
    10.0 / mode.bandwidth()
}

/// The bandpass designed for one mode at one sampling rate. The same instance
/// is applied to every channel of that mode.
#[derive(Debug, Clone)]
pub struct ModeFilter {
    mode: Mode,
    fs: f64,
    sos: Sos,
}

impl ModeFilter {
    pub fn new(mode: &Mode, order: usize, fs: f64) -> Result<Self> {
        let (lo, hi) = mode.band;
        if !(lo > 0.0 && hi > lo && hi < fs / 2.0) {
            return Err(Error::Config(format!(
                "band [{lo}, {hi}] Hz of the {} Hz mode is outside (0, {}) Hz",
                mode.freq,
                fs / 2.0
            )));
        }
        Ok(Self {
            mode: *mode,
            fs,
            sos: butter_bandpass(order, lo, hi, fs)?,
        })
    }

    pub fn mode(&self) -> &Mode {
        &self.mode
    }

    pub fn sos(&self) -> &Sos {
        &self.sos
    }

    pub fn apply(&self, x: &SampleSeries) -> Result<SampleSeries> {
        if (x.fs() - self.fs).abs() > 1e-9 * self.fs {
            return Err(Error::Config(format!(
                "filter designed for {} Hz applied to a {} Hz series",
                self.fs,
                x.fs()
            )));
        }
        let need = min_duration(&self.mode);
        if x.duration() < need {
            return Err(Error::InsufficientData(format!(
                "{:.3} s of data, the {:.2} Hz band needs at least {need:.3} s",
                x.duration(),
                self.mode.freq
            )));
        }
        let mean = x.mean();
        let centered: Vec<f64> = x.values().iter().map(|v| v - mean).collect();
        let mut y = self.sos.filtfilt(&centered, 0);
        let ym = y.iter().sum::<f64>() / y.len() as f64;
        for v in &mut y {
            *v -= ym;
        }
        Ok(x.with_values(y))
    }

    /// Time span of `x` outside the edge guards.
    pub fn reliable_span(&self, x: &SampleSeries) -> (f64, f64) {
        let g = edge_guard(&self.mode);
        (x.t0() + g, x.end() - g)
    }
}

/// Zero-phase bandpass of `x` around `mode`.
pub fn bandpass(x: &SampleSeries, mode: &Mode, order: usize) -> Result<SampleSeries> {
    ModeFilter::new(mode, order, x.fs())?.apply(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::TAU;

    const FS: f64 = 10_000.0;

    fn mode(f: f64) -> Mode {
        let mut m = [Mode {
            freq: f,
            band: (0.0, 0.0),
            prominence_db: 30.0,
        }];
        assign_bands(&mut m, &BandPolicy::default(), FS / 2.0);
        m[0]
    }

    fn rms(v: &[f64]) -> f64 {
        (v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64).sqrt()
    }

    #[test]
    fn default_bands() {
        assert_eq!(mode(25.0).band, (22.5, 27.5));
        assert_eq!(mode(12.0).band, (10.0, 14.0));
        let m = mode(105.0);
        assert!((m.band.0 - 94.5).abs() < 1e-12 && (m.band.1 - 115.5).abs() < 1e-12);
        assert!((edge_guard(&mode(25.0)) - 0.6).abs() < 1e-12);
    }

    #[test]
    fn overlapping_bands_are_split() {
        let mut ms = [mode(30.0), mode(25.0)];
        assign_bands(&mut ms, &BandPolicy::default(), FS / 2.0);
        assert!(ms[1].band.1 < ms[0].band.0);
        assert!(ms[1].band.1 < 27.5 && ms[0].band.0 > 27.5);
    }

    #[test]
    fn isolates_target_and_suppresses_neighbour() {
        let x = SampleSeries::from_fn(50_000, FS, 0.0, |t| {
            (TAU * 25.0 * t).sin() + (TAU * 105.0 * t).sin()
        })
        .unwrap();
        let m = mode(25.0);
        let f = ModeFilter::new(&m, 4, FS).unwrap();
        let y = f.apply(&x).unwrap();
        let (a, b) = f.reliable_span(&y);
        let y = y.slice(a, b).unwrap();
        let target: Vec<f64> = y.times().map(|t| (TAU * 25.0 * t).sin()).collect();
        let err: Vec<f64> = y.values().iter().zip(&target).map(|(u, v)| u - v).collect();
        assert!(
            rms(&err) / rms(&target) < 0.01,
            "{}",
            rms(&err) / rms(&target)
        );
    }

    #[test]
    fn pure_tone_passes_unchanged_in_interior() {
        let x = SampleSeries::from_fn(40_000, FS, 0.0, |t| 2.0 * (TAU * 105.0 * t + 0.3).cos())
            .unwrap();
        let m = mode(105.0);
        let f = ModeFilter::new(&m, 4, FS).unwrap();
        let y = f.apply(&x).unwrap();
        let (a, b) = f.reliable_span(&y);
        let amp = rms(y.slice(a, b).unwrap().values()) * 2f64.sqrt();
        assert!((amp - 2.0).abs() / 2.0 < 0.01);
    }

    #[test]
    fn too_short_is_insufficient() {
        let x = SampleSeries::from_fn(10_000, FS, 0.0, |t| (TAU * 25.0 * t).sin()).unwrap();
        assert!(matches!(
            bandpass(&x, &mode(25.0), 4),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn band_outside_nyquist_is_config_error() {
        let x = SampleSeries::from_fn(1000, 100.0, 0.0, |t| t).unwrap();
        let m = Mode {
            freq: 45.0,
            band: (40.0, 55.0),
            prominence_db: 20.0,
        };
        assert!(matches!(bandpass(&x, &m, 4), Err(Error::Config(_))));
    }
}
