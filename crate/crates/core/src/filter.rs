//! Butterworth designs as cascaded second-order sections, and zero-phase
//! (forward-backward) application.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{Error, Result};

/// One biquad: `(b0 + b1 z⁻¹ + b2 z⁻²) / (1 + a1 z⁻¹ + a2 z⁻²)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 2],
}

impl Biquad {
    fn response(&self, z_inv: Complex64) -> Complex64 {
        let z2 = z_inv * z_inv;
        (self.b[0] + z_inv * self.b[1] + z2 * self.b[2])
            / (1.0 + z_inv * self.a[0] + z2 * self.a[1])
    }

    /// Direct-form II transposed state after a long run of unit input.
    fn step_state(&self, u: f64) -> ([f64; 2], f64) {
        let [b0, b1, b2] = self.b;
        let [a1, a2] = self.a;
        let y = u * (b0 + b1 + b2) / (1.0 + a1 + a2);
        let s2 = b2 * u - a2 * y;
        let s1 = b1 * u - a1 * y + s2;
        ([s1, s2], y)
    }
}

/// A cascade of second-order sections.
#[derive(Debug, Clone, PartialEq)]
pub struct Sos {
    sections: Vec<Biquad>,
}

impl Sos {
    pub fn sections(&self) -> &[Biquad] {
        &self.sections
    }

    /// Complex gain at `f` Hz for sampling rate `fs`.
    pub fn response(&self, f: f64, fs: f64) -> Complex64 {
        let z_inv = Complex64::from_polar(1.0, -2.0 * PI * f / fs);
        self.sections.iter().map(|s| s.response(z_inv)).product()
    }

    /// Single causal pass, states starting at the step steady state for `x[0]`.
    pub fn filter(&self, x: &[f64]) -> Vec<f64> {
        let mut y = x.to_vec();
        if y.is_empty() {
            return y;
        }
        let mut level = y[0];
        for s in &self.sections {
            let ([mut z1, mut z2], out_level) = s.step_state(level);
            level = out_level;
            let [b0, b1, b2] = s.b;
            let [a1, a2] = s.a;
            for v in y.iter_mut() {
                let xin = *v;
                let out = b0 * xin + z1;
                z1 = b1 * xin - a1 * out + z2;
                z2 = b2 * xin - a2 * out;
                *v = out;
            }
        }
        y
    }

    /// Forward-backward application. With `padlen > 0` the input is extended
    /// at both ends by odd reflection before filtering.
    pub fn filtfilt(&self, x: &[f64], padlen: usize) -> Vec<f64> {
        let n = x.len();
        if n == 0 {
            return Vec::new();
        }
        let pad = padlen.min(n.saturating_sub(1));
        let mut ext = Vec::with_capacity(n + 2 * pad);
        ext.extend((1..=pad).rev().map(|k| 2.0 * x[0] - x[k]));
        ext.extend_from_slice(x);
        ext.extend((1..=pad).map(|k| 2.0 * x[n - 1] - x[n - 1 - k]));

        let mut y = self.filter(&ext);
        y.reverse();
        let mut y = self.filter(&y);
        y.reverse();
        y.drain(..pad);
        y.truncate(n);
        y
    }
}

fn butterworth_prototype(order: usize) -> Vec<Complex64> {
    (0..order)
        .map(|k| {
            let theta = PI * (2 * k + order + 1) as f64 / (2 * order) as f64;
            Complex64::from_polar(1.0, theta)
        })
        .collect()
}

fn prewarp(f: f64, fs: f64) -> f64 {
    2.0 * fs * (PI * f / fs).tan()
}

fn bilinear(s: Complex64, fs: f64) -> Complex64 {
    (2.0 * fs + s) / (2.0 * fs - s)
}

/// Groups z-plane poles into conjugate pairs (or pairs of real poles).
fn pair_poles(poles: Vec<Complex64>) -> Vec<[f64; 2]> {
    const IMAG_TOL: f64 = 1e-12;
    let mut complex: Vec<Complex64> = poles.iter().copied().filter(|p| p.im > IMAG_TOL).collect();
    let mut real: Vec<f64> = poles
        .iter()
        .filter(|p| p.im.abs() <= IMAG_TOL)
        .map(|p| p.re)
        .collect();
    complex.sort_by(|a, b| a.norm().total_cmp(&b.norm()));
    real.sort_by(f64::total_cmp);
    let mut out: Vec<[f64; 2]> = complex
        .into_iter()
        .map(|p| [-2.0 * p.re, p.norm_sqr()])
        .collect();
    for pair in real.chunks(2) {
        match pair {
            [p1, p2] => out.push([-(p1 + p2), p1 * p2]),
            [p] => out.push([-p, 0.0]),
            _ => unreachable!(),
        }
    }
    out
}

fn normalize(mut sections: Vec<Biquad>, f_ref: f64, fs: f64) -> Sos {
    let sos = Sos {
        sections: sections.clone(),
    };
    let g = sos.response(f_ref, fs).norm();
    let per = g.powf(1.0 / sections.len() as f64);
    for s in &mut sections {
        for b in &mut s.b {
            *b /= per;
        }
    }
    Sos { sections }
}

/// Butterworth low-pass of the given order, unity gain at DC.
pub fn butter_lowpass(order: usize, fc: f64, fs: f64) -> Result<Sos> {
    if order == 0 {
        return Err(Error::Config("filter order must be positive".into()));
    }
    if !(fc > 0.0 && fc < fs / 2.0) {
        return Err(Error::Config(format!(
            "low-pass cutoff {fc} Hz outside (0, {}) Hz",
            fs / 2.0
        )));
    }
    let wc = prewarp(fc, fs);
    let poles: Vec<Complex64> = butterworth_prototype(order)
        .into_iter()
        .map(|p| bilinear(p * wc, fs))
        .collect();
    let sections = pair_poles(poles)
        .into_iter()
        .map(|a| {
            // second-order sections carry a double zero at z = -1, a first-order one a single zero
            let b = if a[1] == 0.0 {
                [1.0, 1.0, 0.0]
            } else {
                [1.0, 2.0, 1.0]
            };
            Biquad { b, a }
        })
        .collect();
    Ok(normalize(sections, 0.0, fs))
}

/// Butterworth band-pass whose transfer function has order `order` (even),
/// unity gain at the geometric band center.
pub fn butter_bandpass(order: usize, f_lo: f64, f_hi: f64, fs: f64) -> Result<Sos> {
    if order == 0 || !order.is_multiple_of(2) {
        return Err(Error::Config(format!(
            "band-pass order must be a positive even number, got {order}"
        )));
    }
    if !(f_lo > 0.0 && f_lo < f_hi && f_hi < fs / 2.0) {
        return Err(Error::Config(format!(
            "band [{f_lo}, {f_hi}] Hz outside (0, {}) Hz",
            fs / 2.0
        )));
    }
    let (wl, wh) = (prewarp(f_lo, fs), prewarp(f_hi, fs));
    let w0 = (wl * wh).sqrt();
    let bw = wh - wl;
    let mut poles = Vec::with_capacity(order);
    for p in butterworth_prototype(order / 2) {
        let pb = p * bw;
        let disc = (pb * pb - 4.0 * w0 * w0).sqrt();
        poles.push(bilinear((pb + disc) / 2.0, fs));
        poles.push(bilinear((pb - disc) / 2.0, fs));
    }
    let sections = pair_poles(poles)
        .into_iter()
        .map(|a| Biquad {
            b: [1.0, 0.0, -1.0],
            a,
        })
        .collect();
    let f_center = fs / PI * (w0 / (2.0 * fs)).atan();
    Ok(normalize(sections, f_center, fs))
}
