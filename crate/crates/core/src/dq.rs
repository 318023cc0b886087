//! abc ↔ dq conversion under a fixed-frequency synchronous reference.
//!
//! Amplitude-invariant convention: `d + jq = (2/3)(a + b·α + c·α²)·e^{-jθ}` with
//! `α = e^{j2π/3}` and `θ(t) = 2π f0 (t − t0) + θ0`. A balanced set
//! `A·cos(θ + φ)` maps to `d = A cos φ`, `q = A sin φ`, so q lags d by 90°.

use std::f64::consts::{PI, TAU};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::config::DetrendMode;
use crate::error::{Error, Result};
use crate::filter::butter_lowpass;
use crate::waveform::{SampleSeries, ThreePhaseSignal};

const SQRT3_2: f64 = 0.866_025_403_784_438_6;

/// The rotating frame shared by every terminal of one analysis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DqReference {
    pub f0: f64,
    pub theta0: f64,
}

/// d/q components of one three-phase quantity.
#[derive(Debug, Clone, PartialEq)]
pub struct DqSignal {
    pub d: SampleSeries,
    pub q: SampleSeries,
    pub f0: f64,
    pub theta0: f64,
}

impl DqSignal {
    pub fn new(d: SampleSeries, q: SampleSeries, f0: f64, theta0: f64) -> Result<Self> {
        if !d.same_grid(&q) {
            return Err(Error::Alignment(
                "d and q components are not time-aligned".into(),
            ));
        }
        if !(f0.is_finite() && f0 > 0.0) {
            return Err(Error::Config(format!("f0 must be positive, got {f0}")));
        }
        Ok(Self {
            d,
            q,
            f0,
            theta0: wrap_angle(theta0),
        })
    }

    pub fn reference(&self) -> DqReference {
        DqReference {
            f0: self.f0,
            theta0: self.theta0,
        }
    }
}

/// Wraps an angle into `[−π, π)`.
pub fn wrap_angle(theta: f64) -> f64 {
    let w = (theta + PI).rem_euclid(TAU) - PI;
    if w >= PI {
        w - TAU
    } else {
        w
    }
}

fn check_f0(f0: f64) -> Result<()> {
    if f0.is_finite() && f0 > 0.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("f0 must be positive, got {f0}")))
    }
}

pub fn park_transform(x: &ThreePhaseSignal, f0: f64, theta0: f64) -> Result<DqSignal> {
    check_f0(f0)?;
    let n = x.len();
    let fs = x.fs();
    let (a, b, c) = (x.a.values(), x.b.values(), x.c.values());
    let mut d = Vec::with_capacity(n);
    let mut q = Vec::with_capacity(n);
    for k in 0..n {
        let theta = TAU * f0 * (k as f64 / fs) + theta0;
        let (s, co) = theta.sin_cos();
        // cos/sin of θ ∓ 2π/3
        let cos_m = -0.5 * co + SQRT3_2 * s;
        let cos_p = -0.5 * co - SQRT3_2 * s;
        let sin_m = -0.5 * s - SQRT3_2 * co;
        let sin_p = -0.5 * s + SQRT3_2 * co;
        d.push(2.0 / 3.0 * (a[k] * co + b[k] * cos_m + c[k] * cos_p));
        q.push(-2.0 / 3.0 * (a[k] * s + b[k] * sin_m + c[k] * sin_p));
    }
    DqSignal::new(x.a.with_values(d), x.a.with_values(q), f0, theta0)
}

pub fn inverse_park(x: &DqSignal) -> Result<ThreePhaseSignal> {
    check_f0(x.f0)?;
    let n = x.d.len();
    let fs = x.d.fs();
    let (d, q) = (x.d.values(), x.q.values());
    let mut a = Vec::with_capacity(n);
    let mut b = Vec::with_capacity(n);
    let mut c = Vec::with_capacity(n);
    for k in 0..n {
        let theta = TAU * x.f0 * (k as f64 / fs) + x.theta0;
        let (s, co) = theta.sin_cos();
        let cos_m = -0.5 * co + SQRT3_2 * s;
        let cos_p = -0.5 * co - SQRT3_2 * s;
        let sin_m = -0.5 * s - SQRT3_2 * co;
        let sin_p = -0.5 * s + SQRT3_2 * co;
        a.push(d[k] * co - q[k] * s);
        b.push(d[k] * cos_m - q[k] * sin_m);
        c.push(d[k] * cos_p - q[k] * sin_p);
    }
    ThreePhaseSignal::new(x.d.with_values(a), x.d.with_values(b), x.d.with_values(c))
}

/// Complex space vector `(2/3)(a + b·α + c·α²)` per sample.
pub fn space_vector(x: &ThreePhaseSignal) -> Vec<Complex64> {
    let alpha = Complex64::new(-0.5, SQRT3_2);
    let alpha2 = alpha.conj();
    x.a.values()
        .iter()
        .zip(x.b.values())
        .zip(x.c.values())
        .map(|((&a, &b), &c)| (a + alpha * b + alpha2 * c) * (2.0 / 3.0))
        .collect()
}

/// Phase of the positive-sequence fundamental of `v` over the first `span`
/// seconds, truncated to a whole number of cycles (at least 10).
pub fn estimate_reference_phase(v: &ThreePhaseSignal, f0: f64, span: f64) -> Result<f64> {
    check_f0(f0)?;
    let cycles = (span * f0 + 1e-9).floor();
    if cycles < 10.0 {
        return Err(Error::Config(format!(
            "reference span {span} s covers fewer than 10 cycles of {f0} Hz"
        )));
    }
    let fs = v.fs();
    let n = (cycles * fs / f0).round() as usize;
    if n > v.len() {
        return Err(Error::InsufficientData(format!(
            "reference span of {span} s exceeds the {} s record",
            v.a.duration()
        )));
    }
    let sv = space_vector(v);
    let rot = |k: usize| Complex64::from_polar(1.0, -TAU * f0 * k as f64 / fs);
    let phasor: Complex64 = sv[..n]
        .iter()
        .enumerate()
        .map(|(k, s)| s * rot(k))
        .sum::<Complex64>()
        / n as f64;
    let residual = (sv[..n]
        .iter()
        .enumerate()
        .map(|(k, s)| (s - phasor * rot(k).conj()).norm_sqr())
        .sum::<f64>()
        / n as f64)
        .sqrt();
    let floor = residual / (n as f64).sqrt();
    if !(phasor.norm().is_finite() && phasor.norm() > 10.0 * floor && phasor.norm() > 0.0) {
        return Err(Error::Reference(format!(
            "fundamental amplitude {:.3e} is below the noise floor {:.3e}",
            phasor.norm(),
            floor
        )));
    }
    Ok(wrap_angle(phasor.arg()))
}

/// Removes the mean, or a zero-phase low-pass trend. `lowest_mode_hz`, when
/// known, must exceed the low-pass cutoff.
pub fn detrend(
    x: &SampleSeries,
    mode: DetrendMode,
    lowest_mode_hz: Option<f64>,
) -> Result<SampleSeries> {
    match mode {
        DetrendMode::Mean => {
            let m = x.mean();
            Ok(x.with_values(x.values().iter().map(|v| v - m).collect()))
        }
        DetrendMode::Lowpass(fc) => {
            if let Some(lowest) = lowest_mode_hz {
                if fc >= lowest {
                    return Err(Error::Config(format!(
                        "detrend cutoff {fc} Hz must lie below the lowest mode at {lowest} Hz"
                    )));
                }
            }
            let sos = butter_lowpass(4, fc, x.fs())?;
            let padlen = ((3.0 * x.fs() / fc).ceil() as usize).min(x.len() - 1);
            let trend = sos.filtfilt(x.values(), padlen);
            Ok(x.with_values(x.values().iter().zip(&trend).map(|(v, t)| v - t).collect()))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const FS: f64 = 10_000.0;

    fn balanced(n: usize, f: f64, amp: f64, phase: f64) -> ThreePhaseSignal {
        let ph = |shift: f64| {
            SampleSeries::from_fn(n, FS, 0.0, |t| amp * (TAU * f * t + phase + shift).cos())
                .unwrap()
        };
        ThreePhaseSignal::new(ph(0.0), ph(-TAU / 3.0), ph(TAU / 3.0)).unwrap()
    }

    fn add(x: &ThreePhaseSignal, y: &ThreePhaseSignal) -> ThreePhaseSignal {
        let sum = |p: &SampleSeries, r: &SampleSeries| {
            p.with_values(
                p.values()
                    .iter()
                    .zip(r.values())
                    .map(|(u, v)| u + v)
                    .collect(),
            )
        };
        ThreePhaseSignal::new(sum(&x.a, &y.a), sum(&x.b, &y.b), sum(&x.c, &y.c)).unwrap()
    }

    #[test]
    fn aligned_balanced_set_maps_to_constant_d() {
        let x = balanced(5000, 60.0, 1.0, 0.3);
        let dq = park_transform(&x, 60.0, 0.3).unwrap();
        for k in 0..dq.d.len() {
            assert!((dq.d.values()[k] - 1.0).abs() < 1e-9);
            assert!(dq.q.values()[k].abs() < 1e-9);
        }
    }

    #[test]
    fn q_lags_d() {
        // phase +φ relative to the reference lands on +q
        let x = balanced(1000, 60.0, 2.0, 0.5);
        let dq = park_transform(&x, 60.0, 0.0).unwrap();
        assert!((dq.d.values()[10] - 2.0 * 0.5f64.cos()).abs() < 1e-9);
        assert!((dq.q.values()[10] - 2.0 * 0.5f64.sin()).abs() < 1e-9);
    }

    #[test]
    fn inverse_of_unit_d_is_balanced_cosine() {
        let n = 2000;
        let d = SampleSeries::new(vec![1.0; n], FS, 0.0).unwrap();
        let q = SampleSeries::new(vec![0.0; n], FS, 0.0).unwrap();
        let abc = inverse_park(&DqSignal::new(d, q, 60.0, 0.0).unwrap()).unwrap();
        let want = balanced(n, 60.0, 1.0, 0.0);
        for (got, exp) in abc.phases().iter().zip(want.phases()) {
            for (g, e) in got.values().iter().zip(exp.values()) {
                assert!((g - e).abs() < 1e-12);
            }
        }
        let zero = SampleSeries::new(vec![0.0; n], FS, 0.0).unwrap();
        let z = inverse_park(&DqSignal::new(zero.clone(), zero, 60.0, 1.0).unwrap()).unwrap();
        assert!(z
            .phases()
            .iter()
            .all(|p| p.values().iter().all(|v| *v == 0.0)));
    }

    #[test]
    fn reference_phase_estimates() {
        let phi = 0.7;
        let x = balanced(20_000, 60.0, 1.0, phi);
        let est = estimate_reference_phase(&x, 60.0, 1.0).unwrap();
        assert!((est - phi).abs() < 1e-6);

        let shifted = balanced(20_000, 60.0, 1.0, phi + PI / 2.0);
        let est2 = estimate_reference_phase(&shifted, 60.0, 1.0).unwrap();
        assert!((wrap_angle(est2 - est) - PI / 2.0).abs() < 1e-6);

        let with_sideband = add(&x, &balanced(20_000, 85.0, 0.1, 1.3));
        let est3 = estimate_reference_phase(&with_sideband, 60.0, 1.0).unwrap();
        assert!((est3 - phi).abs() < 1e-3);
    }

    #[test]
    fn reference_phase_errors() {
        let x = balanced(20_000, 60.0, 1.0, 0.0);
        assert!(matches!(
            estimate_reference_phase(&x, 60.0, 0.1),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            estimate_reference_phase(&x, 60.0, 5.0),
            Err(Error::InsufficientData(_))
        ));
        let silent = x.scaled(0.0);
        assert!(matches!(
            estimate_reference_phase(&silent, 60.0, 1.0),
            Err(Error::Reference(_))
        ));
    }

    #[test]
    fn mean_detrend() {
        let c = SampleSeries::new(vec![3.5; 100], 100.0, 0.0).unwrap();
        assert!(detrend(&c, DetrendMode::Mean, None)
            .unwrap()
            .values()
            .iter()
            .all(|v| v.abs() < 1e-15));
        let x = SampleSeries::from_fn(4000, 1000.0, 0.0, |t| 2.0 + (TAU * 25.0 * t).sin()).unwrap();
        let y = detrend(&x, DetrendMode::Mean, None).unwrap();
        for (k, v) in y.values().iter().enumerate() {
            assert!((v - (TAU * 25.0 * k as f64 / 1000.0).sin()).abs() < 1e-9);
        }
    }

    #[test]
    fn lowpass_detrend_recovers_tone() {
        let fs = 1000.0;
        let tone = |t: f64| (TAU * 25.0 * t).sin();
        let x = SampleSeries::from_fn(10_000, fs, 0.0, |t| 0.3 * t + 1.0 + tone(t)).unwrap();
        let y = detrend(&x, DetrendMode::Lowpass(5.0), Some(25.0)).unwrap();
        let trim = (fs * 1.0) as usize;
        let (mut err, mut pow) = (0.0, 0.0);
        for k in trim..y.len() - trim {
            let want = tone(k as f64 / fs);
            err += (y.values()[k] - want).powi(2);
            pow += want * want;
        }
        assert!((err / pow).sqrt() < 0.01, "{}", (err / pow).sqrt());
        assert!(matches!(
            detrend(&x, DetrendMode::Lowpass(30.0), Some(25.0)),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn wrap_is_half_open() {
        assert_eq!(wrap_angle(PI), -PI);
        assert!((wrap_angle(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-15);
        assert!((wrap_angle(-0.2) + 0.2).abs() < 1e-15);
    }

    fn random_dq(n: usize, comps: &[(f64, f64, f64, f64)]) -> (SampleSeries, SampleSeries) {
        let d = SampleSeries::from_fn(n, FS, 0.0, |t| {
            comps
                .iter()
                .map(|(f, ad, _, ph)| ad * (TAU * f * t + ph).cos())
                .sum()
        })
        .unwrap();
        let q = SampleSeries::from_fn(n, FS, 0.0, |t| {
            comps
                .iter()
                .map(|(f, _, aq, ph)| aq * (TAU * f * t + ph).sin())
                .sum()
        })
        .unwrap();
        (d, q)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn dq_roundtrip(
            theta0 in -PI..PI,
            comps in proptest::collection::vec((0.0f64..200.0, -1.0f64..1.0, -1.0f64..1.0, -PI..PI), 1..4),
        ) {
            let (d, q) = random_dq(600, &comps);
            let dq = DqSignal::new(d, q, 60.0, theta0).unwrap();
            let back = park_transform(&inverse_park(&dq).unwrap(), 60.0, theta0).unwrap();
            for (g, w) in back.d.values().iter().zip(dq.d.values()).chain(back.q.values().iter().zip(dq.q.values())) {
                prop_assert!((g - w).abs() < 1e-12);
            }
        }

        #[test]
        fn park_is_linear(alpha in -3.0f64..3.0, beta in -3.0f64..3.0, theta0 in -PI..PI) {
            let x = balanced(500, 60.0, 1.0, 0.2);
            let y = add(&balanced(500, 85.0, 0.3, 1.0), &balanced(500, 12.0, 0.2, -0.4));
            let combo = add(&x.scaled(alpha), &y.scaled(beta));
            let lhs = park_transform(&combo, 60.0, theta0).unwrap();
            let px = park_transform(&x, 60.0, theta0).unwrap();
            let py = park_transform(&y, 60.0, theta0).unwrap();
            for k in 0..500 {
                let d = alpha * px.d.values()[k] + beta * py.d.values()[k];
                let q = alpha * px.q.values()[k] + beta * py.q.values()[k];
                prop_assert!((lhs.d.values()[k] - d).abs() < 1e-12);
                prop_assert!((lhs.q.values()[k] - q).abs() < 1e-12);
            }
        }
    }
}
