//! Welch power spectral density and dominant-mode picking on dq channels.

use std::f64::consts::TAU;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mode_filter::{assign_bands, BandPolicy};
use crate::waveform::SampleSeries;

/// One-sided averaged periodogram.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    pub freqs: Vec<f64>,
    pub psd: Vec<f64>,
    pub resolution: f64,
    pub window_span: (f64, f64),
}

impl Spectrum {
    /// Integral of the density over the grid.
    pub fn total_power(&self) -> f64 {
        self.psd.iter().sum::<f64>() * self.resolution
    }

    pub fn same_grid(&self, other: &Spectrum) -> bool {
        self.freqs.len() == other.freqs.len()
            && (self.resolution - other.resolution).abs() <= 1e-12 * self.resolution
    }

    /// Index of the grid point nearest `f`.
    pub fn bin(&self, f: f64) -> usize {
        ((f / self.resolution).round() as usize).min(self.freqs.len() - 1)
    }
}

/// Welch estimate with periodic Hann segments of `segment_len` seconds, each
/// segment mean-removed before tapering.
pub fn compute_psd(x: &SampleSeries, segment_len: f64, overlap: f64) -> Result<Spectrum> {
    if !(0.0..1.0).contains(&overlap) {
        return Err(Error::Config(format!(
            "overlap must be in [0, 1), got {overlap}"
        )));
    }
    let fs = x.fs();
    let nseg = (segment_len * fs).round() as usize;
    if nseg < 4 {
        return Err(Error::Config(format!(
            "segment of {segment_len} s is too short"
        )));
    }
    if nseg > x.len() {
        return Err(Error::Config(format!(
            "segment of {segment_len} s exceeds the {} s series",
            x.duration()
        )));
    }
    let step = (((nseg as f64) * (1.0 - overlap)).round() as usize).max(1);
    let window: Vec<f64> = (0..nseg)
        .map(|k| 0.5 * (1.0 - (TAU * k as f64 / nseg as f64).cos()))
        .collect();
    let wss: f64 = window.iter().map(|w| w * w).sum();
    let fft = FftPlanner::<f64>::new().plan_fft_forward(nseg);
    let nbins = nseg / 2 + 1;
    let mut acc = vec![0.0; nbins];
    let mut buf = vec![Complex::new(0.0, 0.0); nseg];
    let mut count = 0usize;
    let values = x.values();
    let mut start = 0;
    while start + nseg <= values.len() {
        let seg = &values[start..start + nseg];
        let mean = seg.iter().sum::<f64>() / nseg as f64;
        for ((b, v), w) in buf.iter_mut().zip(seg).zip(&window) {
            *b = Complex::new((v - mean) * w, 0.0);
        }
        fft.process(&mut buf);
        for (a, b) in acc.iter_mut().zip(&buf) {
            *a += b.norm_sqr();
        }
        count += 1;
        start += step;
    }
    let scale = 1.0 / (fs * wss * count as f64);
    let psd: Vec<f64> = acc
        .iter()
        .enumerate()
        .map(|(k, p)| {
            let one_sided = if k == 0 || (nseg.is_multiple_of(2) && k == nseg / 2) {
                1.0
            } else {
                2.0
            };
            p * scale * one_sided
        })
        .collect();
    let resolution = fs / nseg as f64;
    Ok(Spectrum {
        freqs: (0..nbins).map(|k| k as f64 * resolution).collect(),
        psd,
        resolution,
        window_span: (x.t0(), x.end()),
    })
}

/// One identified oscillation mode and its analysis band.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mode {
    pub freq: f64,
    pub band: (f64, f64),
    pub prominence_db: f64,
}

impl Mode {
    pub fn bandwidth(&self) -> f64 {
        self.band.1 - self.band.0
    }

    /// Short label used in file names and report keys, e.g. `25.00`.
    pub fn label(&self) -> String {
        format!("{:.2}", self.freq)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModeIdConfig {
    pub min_prominence_db: f64,
    pub max_modes: usize,
    pub min_freq: f64,
    pub dynamic_range_db: f64,
    pub bands: BandPolicy,
}

impl Default for ModeIdConfig {
    fn default() -> Self {
        Self {
            min_prominence_db: 10.0,
            max_modes: 5,
            min_freq: 5.0,
            dynamic_range_db: 40.0,
            bands: BandPolicy::default(),
        }
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Sums the spectra bin by bin.
pub fn aggregate(spectra: &[Spectrum]) -> Result<Spectrum> {
    let first = spectra
        .first()
        .ok_or_else(|| Error::Config("no spectra to aggregate".into()))?;
    let mut psd = vec![0.0; first.psd.len()];
    for s in spectra {
        if !s.same_grid(first) {
            return Err(Error::Config(
                "spectra do not share a frequency grid".into(),
            ));
        }
        for (a, p) in psd.iter_mut().zip(&s.psd) {
            *a += p;
        }
    }
    Ok(Spectrum {
        freqs: first.freqs.clone(),
        psd,
        resolution: first.resolution,
        window_span: first.window_span,
    })
}

/// Peaks of the summed spectra that stand `min_prominence_db` above the median
/// floor, strongest first.
pub fn identify_modes(spectra: &[Spectrum], cfg: &ModeIdConfig) -> Result<Vec<Mode>> {
    if !(cfg.min_prominence_db > 0.0) {
        return Err(Error::Config("min_prominence_db must be positive".into()));
    }
    let agg = aggregate(spectra)?;
    let p = &agg.psd;
    let n = p.len();
    if n < 3 {
        return Ok(Vec::new());
    }
    let nyquist = agg.freqs[n - 1];
    let floor = median(p[1..].to_vec()).max(f64::MIN_POSITIVE);
    let strongest = p[1..].iter().copied().fold(0.0, f64::max);
    if strongest <= 0.0 {
        return Ok(Vec::new());
    }
    let range_floor = strongest * 10f64.powf(-cfg.dynamic_range_db / 10.0);

    let mut peaks = Vec::new();
    for k in 1..n - 1 {
        let f = agg.freqs[k];
        if f < cfg.min_freq || !(p[k] > p[k - 1] && p[k] >= p[k + 1]) {
            continue;
        }
        let prominence_db = 10.0 * (p[k] / floor).log10();
        if prominence_db < cfg.min_prominence_db || p[k] < range_floor {
            continue;
        }
        let hw = cfg.bands.halfwidth(f);
        if f + hw >= nyquist {
            continue;
        }
        let lo = agg.bin((f - hw).max(0.0));
        let hi = agg.bin(f + hw);
        if p[lo..=hi].iter().any(|&v| v > p[k]) {
            continue;
        }
        peaks.push(Mode {
            freq: refine(p, k) * agg.resolution,
            band: (f - hw, f + hw),
            prominence_db,
        });
    }
    peaks.sort_by(|a, b| {
        b.prominence_db
            .total_cmp(&a.prominence_db)
            .then(a.freq.total_cmp(&b.freq))
    });
    peaks.truncate(cfg.max_modes);
    assign_bands(&mut peaks, &cfg.bands, nyquist);
    Ok(peaks)
}

/// Fractional bin of a local maximum by a parabola through the log spectrum.
fn refine(p: &[f64], k: usize) -> f64 {
    let (l, c, r) = (p[k - 1], p[k], p[k + 1]);
    if l <= 0.0 || r <= 0.0 {
        return k as f64;
    }
    let (l, c, r) = (l.ln(), c.ln(), r.ln());
    let denom = l - 2.0 * c + r;
    if denom.abs() < 1e-300 {
        return k as f64;
    }
    let delta = 0.5 * (l - r) / denom;
    k as f64 + delta.clamp(-0.5, 0.5)
}
