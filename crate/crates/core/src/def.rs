//! Dissipating energy flow: cumulative energy per terminal and mode, and its
//! slope over sliding windows.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;

use crate::config::DefRule;
use crate::error::{Error, Result};
use crate::spectrum::Mode;
use crate::waveform::{SampleSeries, TerminalKey};

/// Cumulative energy of one terminal in one mode band.
#[derive(Debug, Clone, PartialEq)]
pub struct DefTrace {
    pub w: SampleSeries,
    pub terminal: TerminalKey,
    pub mode: Mode,
    /// Portion of `w` free of filter edge transients, s.
    pub reliable: (f64, f64),
}

impl DefTrace {
    pub fn new(w: SampleSeries, terminal: TerminalKey, mode: Mode, reliable: (f64, f64)) -> Self {
        Self {
            w,
            terminal,
            mode,
            reliable,
        }
    }
}

fn check_aligned(series: [&SampleSeries; 4]) -> Result<()> {
    let names = ["did", "diq", "dvd", "dvq"];
    for (s, name) in series.iter().zip(names).skip(1) {
        if !s.same_grid(series[0]) {
            return Err(Error::Alignment(format!(
                "{name} is not on the same time grid as did"
            )));
        }
    }
    Ok(())
}

/// `W[k+1] = W[k] + did[k]·(dvq[k+1] − dvq[k]) − diq[k]·(dvd[k+1] − dvd[k])`, `W[0] = 0`.
pub fn accumulate_def(
    did: &SampleSeries,
    diq: &SampleSeries,
    dvd: &SampleSeries,
    dvq: &SampleSeries,
) -> Result<SampleSeries> {
    accumulate_def_with(DefRule::Forward, did, diq, dvd, dvq)
}

/// Cumulative energy with the chosen discretization of the current factor.
pub fn accumulate_def_with(
    rule: DefRule,
    did: &SampleSeries,
    diq: &SampleSeries,
    dvd: &SampleSeries,
    dvq: &SampleSeries,
) -> Result<SampleSeries> {
    check_aligned([did, diq, dvd, dvq])?;
    let (id, iq, vd, vq) = (did.values(), diq.values(), dvd.values(), dvq.values());
    let n = id.len();
    let mut w = Vec::with_capacity(n);
    let mut acc = 0.0;
    w.push(acc);
    for k in 0..n - 1 {
        let (cd, cq) = match rule {
            DefRule::Forward => (id[k], iq[k]),
            DefRule::Trapezoidal => (0.5 * (id[k] + id[k + 1]), 0.5 * (iq[k] + iq[k + 1])),
        };
        acc += cd * (vq[k + 1] - vq[k]) - cq * (vd[k + 1] - vd[k]);
        w.push(acc);
    }
    Ok(did.with_values(w))
}

/// Energy rate fitted over `window`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlopeEstimate {
    pub wdot: f64,
    pub stderr: f64,
    pub window: (f64, f64),
}

/// Least-squares fit of `w = a + b·(t − tc) + ripple`, where the ripple terms
/// are sinusoids at `harmonics`. Returns `(b, stderr(b))`.
pub fn fit_slope(w: &SampleSeries, harmonics: &[f64]) -> Result<(f64, f64)> {
    let n = w.len();
    let p = 2 + 2 * harmonics.len();
    if n <= p {
        return Err(Error::InsufficientData(format!(
            "{n} samples cannot support a {p}-parameter fit"
        )));
    }
    let tc = 0.5 * (w.t0() + w.time(n - 1));
    let half = 0.5 * (w.time(n - 1) - w.t0()).max(w.dt());
    let y0 = w.values()[0];
    let x = DMatrix::from_fn(n, p, |k, j| {
        let t = w.time(k);
        match j {
            0 => 1.0,
            1 => (t - tc) / half,
            _ => {
                let f = harmonics[(j - 2) / 2];
                let arg = TAU * f * (t - tc);
                if j % 2 == 0 {
                    arg.cos()
                } else {
                    arg.sin()
                }
            }
        }
    });
    let y = DVector::from_iterator(n, w.values().iter().map(|v| v - y0));
    let xtx = x.tr_mul(&x);
    let xty = x.tr_mul(&y);
    let inv = xtx
        .try_inverse()
        .ok_or_else(|| Error::InsufficientData("slope regression is rank deficient".into()))?;
    let beta = &inv * xty;
    let resid = &y - &x * &beta;
    let sigma2 = resid.norm_squared() / (n - p) as f64;
    let var_b = (sigma2 * inv[(1, 1)]).max(0.0);
    Ok((beta[1] / half, var_b.sqrt() / half))
}

/// Frequencies of the ripple expected on a DEF trace for a mode at `f`.
pub fn ripple_harmonics(f: f64) -> [f64; 2] {
    [f, 2.0 * f]
}

/// Slopes over windows of `t_win` seconds stepped by `t_win / 2` across the
/// reliable span of the trace.
pub fn def_slope(trace: &DefTrace, t_win: f64) -> Result<Vec<SlopeEstimate>> {
    let f = trace.mode.freq;
    if !(t_win > 0.0) {
        return Err(Error::Config(format!(
            "t_win must be positive, got {t_win}"
        )));
    }
    if f > 0.0 && t_win * f < 3.0 - 1e-9 {
        return Err(Error::Config(format!(
            "t_win = {t_win} s covers fewer than 3 periods of the {f:.2} Hz mode"
        )));
    }
    let (a, b) = trace.reliable;
    let a = a.max(trace.w.t0());
    let b = b.min(trace.w.end());
    if b - a < t_win - 1e-9 {
        return Err(Error::InsufficientData(format!(
            "reliable span [{a:.3}, {b:.3}) s is shorter than t_win = {t_win} s"
        )));
    }
    let harmonics = ripple_harmonics(f);
    let stride = 0.5 * t_win;
    let count = ((b - a - t_win) / stride + 1e-9).floor() as usize + 1;
    let mut out = Vec::with_capacity(count);
    for k in 0..count {
        let start = a + k as f64 * stride;
        let end = (start + t_win).min(b);
        let seg = trace.w.slice(start, end)?;
        let (wdot, stderr) = fit_slope(&seg, &harmonics)?;
        out.push(SlopeEstimate {
            wdot,
            stderr,
            window: (start, end),
        });
    }
    Ok(out)
}

/// Median slope across windows. The uncertainty is the spread of the window
/// slopes over `√n`, never below the median per-window standard error.
pub fn summarize(windows: &[SlopeEstimate]) -> Option<SlopeEstimate> {
    let n = windows.len();
    if n == 0 {
        return None;
    }
    let mut slopes: Vec<f64> = windows.iter().map(|w| w.wdot).collect();
    let mut errs: Vec<f64> = windows.iter().map(|w| w.stderr).collect();
    let med = median(&mut slopes);
    let med_err = median(&mut errs);
    let spread = if n > 1 {
        let mean = windows.iter().map(|w| w.wdot).sum::<f64>() / n as f64;
        let var = windows.iter().map(|w| (w.wdot - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        (var / n as f64).sqrt()
    } else {
        0.0
    };
    Some(SlopeEstimate {
        wdot: med,
        stderr: spread.max(med_err),
        window: (windows[0].window.0, windows[n - 1].window.1),
    })
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const FS: f64 = 10_000.0;

    fn series(n: usize, f: impl Fn(f64) -> f64) -> SampleSeries {
        SampleSeries::from_fn(n, FS, 0.0, f).unwrap()
    }

    fn zeros(n: usize) -> SampleSeries {
        series(n, |_| 0.0)
    }

    fn mode(f: f64) -> Mode {
        Mode {
            freq: f,
            band: (f - 2.5, f + 2.5),
            prominence_db: 30.0,
        }
    }

    fn trace(w: SampleSeries, f: f64) -> DefTrace {
        let span = (w.t0(), w.end());
        DefTrace::new(w, TerminalKey::new("1", "e"), mode(f), span)
    }

    #[test]
    fn zero_inputs_give_zero_energy() {
        let z = zeros(1000);
        let w = accumulate_def(&z, &z, &z, &z).unwrap();
        assert_eq!(w.len(), 1000);
        assert!(w.values().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn constant_voltages_give_zero_energy() {
        let c = series(1000, |_| 0.7);
        let w = accumulate_def(&c, &c, &c, &c).unwrap();
        assert!(w.values().iter().all(|v| *v == 0.0));
    }

    /// Brute-force Riemann sum of `i_d dv_q/dt` on a grid ten times finer.
    fn brute_force_rate(a: f64, b: f64, f: f64, phi: f64, cycles: usize) -> f64 {
        let fs = 100_000.0;
        let w = TAU * f;
        let n = (cycles as f64 * fs / f).round() as usize;
        let dt = 1.0 / fs;
        let mut acc = 0.0;
        for k in 0..n {
            let t = (k as f64 + 0.5) * dt;
            acc += a * (w * t).cos() * (-b * w * (w * t + phi).sin()) * dt;
        }
        acc / (n as f64 * dt)
    }

    #[test]
    fn quadrature_pair_rate() {
        let (f, phi) = (25.0, -std::f64::consts::FRAC_PI_2);
        let oracle = brute_force_rate(1.0, 1.0, f, phi, 100);
        assert!((oracle - 25.0 * std::f64::consts::PI).abs() / oracle < 1e-3);
        let n = 40_000;
        let id = series(n, |t| (TAU * f * t).cos());
        let vq = series(n, |t| (TAU * f * t + phi).cos());
        let z = zeros(n);
        for rule in [DefRule::Forward, DefRule::Trapezoidal] {
            let w = accumulate_def_with(rule, &id, &z, &z, &vq).unwrap();
            let (slope, _) = fit_slope(&w, &ripple_harmonics(f)).unwrap();
            assert!((slope - oracle).abs() / oracle < 1e-3, "{rule:?}: {slope}");
        }
    }

    #[test]
    fn misaligned_inputs_are_rejected() {
        let a = zeros(100);
        let b = SampleSeries::new(vec![0.0; 100], FS, 1.0).unwrap();
        assert!(matches!(
            accumulate_def(&a, &a, &a, &b),
            Err(Error::Alignment(_))
        ));
    }

    #[test]
    fn exact_line_slope() {
        let t = trace(series(30_000, |t| 2.5 * t - 1.0), 25.0);
        let est = def_slope(&t, 0.5).unwrap();
        assert_eq!(est.len(), 11);
        for e in &est {
            assert!((e.wdot - 2.5).abs() < 1e-9);
            assert!(e.stderr < 1e-9);
        }
        let s = summarize(&est).unwrap();
        assert!((s.wdot - 2.5).abs() < 1e-9);
        assert_eq!(s.window, (0.0, 3.0));
    }

    #[test]
    fn zero_trace_has_zero_slope() {
        let est = def_slope(&trace(zeros(20_000), 25.0), 0.5).unwrap();
        assert!(est.iter().all(|e| e.wdot == 0.0 && e.stderr == 0.0));
    }

    #[test]
    fn ripple_is_rejected() {
        let (c, df) = (1.3, 25.0);
        let s = 10.0 * c * 0.5;
        let t = trace(series(30_000, |t| c * t + s * (TAU * df * t).sin()), df);
        for e in def_slope(&t, 0.5).unwrap() {
            assert!((e.wdot - c).abs() / c < 0.01, "{}", e.wdot);
        }
    }

    #[test]
    fn window_constraints() {
        let t = trace(series(20_000, |t| t), 25.0);
        assert!(matches!(def_slope(&t, 0.1), Err(Error::Config(_))));
        assert!(matches!(
            def_slope(&t, 3.0),
            Err(Error::InsufficientData(_))
        ));
        let mut short = t.clone();
        short.reliable = (0.5, 0.8);
        assert!(matches!(
            def_slope(&short, 0.5),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn windows_stay_inside_reliable_span() {
        let mut t = trace(series(40_000, |t| t), 25.0);
        t.reliable = (0.6, 3.4);
        for e in def_slope(&t, 0.5).unwrap() {
            assert!(e.window.0 >= 0.6 - 1e-12 && e.window.1 <= 3.4 + 1e-12);
        }
    }

    #[test]
    fn forward_rule_swap_defect_shrinks_with_step() {
        let f = 25.0;
        let defect = |fs: f64| {
            let n = (4.0 * fs / f).round() as usize + 1;
            let s = |amp: f64, ph: f64| {
                SampleSeries::from_fn(n, fs, 0.0, |t| amp * (TAU * f * t + ph).cos()).unwrap()
            };
            let (id, iq, vd, vq) = (s(0.8, 0.3), s(0.4, 1.9), s(0.6, 2.2), s(0.9, 4.0));
            let w = accumulate_def(&id, &iq, &vd, &vq).unwrap();
            let r = accumulate_def(&vq, &vd, &iq, &id).unwrap();
            (w.values()[n - 1] + r.values()[n - 1]).abs()
        };
        let (coarse, fine) = (defect(10_000.0), defect(100_000.0));
        assert!(coarse > 0.0);
        assert!((coarse / fine - 10.0).abs() < 0.5, "{coarse} {fine}");
    }

    fn sinus(n: usize, f: f64, amp: f64, ph: f64) -> SampleSeries {
        series(n, |t| amp * (TAU * f * t + ph).cos())
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn bilinear_in_current_and_voltage(
            alpha in 0.01f64..100.0,
            beta in 0.01f64..100.0,
            ph in proptest::array::uniform4(0.0f64..TAU),
        ) {
            let n = 2000;
            let f = 25.0;
            let (id, iq) = (sinus(n, f, 0.8, ph[0]), sinus(n, f, 0.3, ph[1]));
            let (vd, vq) = (sinus(n, f, 0.5, ph[2]), sinus(n, f, 0.9, ph[3]));
            let base = accumulate_def(&id, &iq, &vd, &vq).unwrap();
            let scaled = accumulate_def(
                &id.scaled(alpha), &iq.scaled(alpha), &vd.scaled(beta), &vq.scaled(beta),
            ).unwrap();
            let peak = base.values().iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
            for (a, b) in base.values().iter().zip(scaled.values()) {
                prop_assert!((a * alpha * beta - b).abs() <= 1e-9 * peak * alpha * beta);
            }
        }

        #[test]
        fn swapping_roles_negates_cycle_increment(
            ph in proptest::array::uniform4(0.0f64..TAU),
            amps in proptest::array::uniform4(0.1f64..1.0),
            cycles in 1usize..5,
        ) {
            let f = 25.0;
            let n = (cycles as f64 * FS / f).round() as usize + 1;
            let (id, iq) = (sinus(n, f, amps[0], ph[0]), sinus(n, f, amps[1], ph[1]));
            let (vd, vq) = (sinus(n, f, amps[2], ph[2]), sinus(n, f, amps[3], ph[3]));
            let rule = DefRule::Trapezoidal;
            let w = accumulate_def_with(rule, &id, &iq, &vd, &vq).unwrap();
            let s = accumulate_def_with(rule, &vq, &vd, &iq, &id).unwrap();
            let amp = w.values().iter().chain(s.values()).fold(0.0f64, |m, v| m.max(v.abs()));
            let (dw, ds) = (w.values()[n - 1], s.values()[n - 1]);
            prop_assert!((dw + ds).abs() <= 0.01 * amp.max(1e-12), "{dw} {ds} {amp}");
        }
    }
}
