use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// A slope threshold, either absolute or a fraction of the largest magnitude
/// in the table it is applied to. Written `0.1` or `0.05rel`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Threshold {
    Absolute(f64),
    Relative(f64),
}

impl Threshold {
    /// Resolves against the largest magnitude of the table being thresholded.
    pub fn resolve(self, max_abs: f64) -> f64 {
        match self {
            Threshold::Absolute(v) => v,
            Threshold::Relative(r) => r * max_abs,
        }
    }

    pub fn value(self) -> f64 {
        match self {
            Threshold::Absolute(v) | Threshold::Relative(v) => v,
        }
    }
}

impl fmt::Display for Threshold {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Threshold::Absolute(v) => write!(f, "{v}"),
            Threshold::Relative(v) => write!(f, "{v}rel"),
        }
    }
}

impl FromStr for Threshold {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (num, relative) = match s.strip_suffix("rel") {
            Some(n) => (n.trim(), true),
            None => (s, false),
        };
        let v: f64 = num
            .parse()
            .map_err(|_| Error::Config(format!("bad threshold `{s}`")))?;
        if !(v.is_finite() && v >= 0.0) {
            return Err(Error::Config(format!(
                "threshold must be non-negative, got `{s}`"
            )));
        }
        Ok(if relative {
            Threshold::Relative(v)
        } else {
            Threshold::Absolute(v)
        })
    }
}

impl Serialize for Threshold {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Threshold {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => format!("{v}").parse(),
            Raw::Text(t) => t.parse(),
        }
        .map_err(serde::de::Error::custom)
    }
}

/// Trend removal applied to dq components before spectral analysis and filtering.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DetrendMode {
    Mean,
    /// Subtract a zero-phase low-pass trend with this cutoff in Hz.
    Lowpass(f64),
}

impl fmt::Display for DetrendMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DetrendMode::Mean => f.write_str("mean"),
            DetrendMode::Lowpass(fc) => write!(f, "lowpass:{fc}"),
        }
    }
}

impl FromStr for DetrendMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "mean" => Ok(DetrendMode::Mean),
            other => other
                .strip_prefix("lowpass:")
                .and_then(|fc| fc.parse::<f64>().ok())
                .filter(|fc| fc.is_finite() && *fc > 0.0)
                .map(DetrendMode::Lowpass)
                .ok_or_else(|| Error::Config(format!("bad detrend mode `{other}`"))),
        }
    }
}

impl Serialize for DetrendMode {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for DetrendMode {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        String::deserialize(d)?
            .parse()
            .map_err(serde::de::Error::custom)
    }
}

/// Discretization of the energy integral.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DefRule {
    /// `W[k+1] = W[k] + i[k]·(v[k+1] − v[k])`, current taken at the left sample.
    Forward,
    /// Same increment with the current averaged over the step.
    Trapezoidal,
}

impl FromStr for DefRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "forward" => Ok(DefRule::Forward),
            "trapezoidal" => Ok(DefRule::Trapezoidal),
            other => Err(Error::Config(format!("bad DEF rule `{other}`"))),
        }
    }
}

/// Every tunable of the analysis. Missing keys in a config file take the
/// defaults below; the resolved value is embedded in each report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisConfig {
    /// Nominal frequency of the rotating reference, Hz.
    pub f0: f64,
    /// Node whose voltage sets the reference angle; first topology node if unset.
    pub ref_node: Option<String>,
    /// Span at the start of the analysis window used to estimate the reference angle, s.
    pub reference_span: f64,
    pub eps_edge: Threshold,
    pub eps_node: Threshold,
    /// Sliding window for slope fits, s.
    pub t_win: f64,
    /// `[start, end)` in s; the whole recording when unset.
    pub analysis_window: Option<[f64; 2]>,
    /// Welch segment length, s. Clamped to the window duration.
    pub psd_segment: f64,
    pub psd_overlap: f64,
    pub min_prominence_db: f64,
    /// Peaks further than this below the strongest one are ignored.
    pub dynamic_range_db: f64,
    pub max_modes: usize,
    /// Lowest admissible mode frequency, Hz.
    pub min_mode_freq: f64,
    /// Fixed band half-width in Hz; `max(2, 0.1·f)` when unset.
    pub band_halfwidth: Option<f64>,
    /// Order of the bandpass transfer function (even).
    pub filter_order: usize,
    pub detrend: DetrendMode,
    pub def_rule: DefRule,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            f0: 60.0,
            ref_node: None,
            reference_span: 1.0,
            eps_edge: Threshold::Relative(0.05),
            eps_node: Threshold::Relative(0.05),
            t_win: 0.5,
            analysis_window: None,
            psd_segment: 1.0,
            psd_overlap: 0.5,
            min_prominence_db: 10.0,
            dynamic_range_db: 40.0,
            max_modes: 5,
            min_mode_freq: 5.0,
            band_halfwidth: None,
            filter_order: 4,
            detrend: DetrendMode::Mean,
            def_rule: DefRule::Trapezoidal,
        }
    }
}

impl AnalysisConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.f0.is_finite() && self.f0 > 0.0) {
            return bad(format!("f0 must be positive, got {}", self.f0));
        }
        if !(self.t_win.is_finite() && self.t_win > 0.0) {
            return bad(format!("t_win must be positive, got {}", self.t_win));
        }
        if !(self.reference_span > 0.0) {
            return bad("reference_span must be positive".into());
        }
        if !(self.psd_segment > 0.0) {
            return bad("psd_segment must be positive".into());
        }
        if !(0.0..1.0).contains(&self.psd_overlap) {
            return bad(format!(
                "psd_overlap must be in [0, 1), got {}",
                self.psd_overlap
            ));
        }
        if !(self.min_prominence_db > 0.0) {
            return bad("min_prominence_db must be positive".into());
        }
        if !(self.dynamic_range_db > 0.0) {
            return bad("dynamic_range_db must be positive".into());
        }
        if self.max_modes == 0 {
            return bad("max_modes must be at least 1".into());
        }
        if self.filter_order == 0 || !self.filter_order.is_multiple_of(2) {
            return bad(format!(
                "filter_order must be a positive even number, got {}",
                self.filter_order
            ));
        }
        if let Some(hw) = self.band_halfwidth {
            if !(hw.is_finite() && hw > 0.0) {
                return bad(format!("band_halfwidth must be positive, got {hw}"));
            }
        }
        if let Some([a, b]) = self.analysis_window {
            if !(a.is_finite() && b.is_finite() && b > a) {
                return bad(format!("analysis window [{a}, {b}) is empty"));
            }
        }
        Ok(())
    }
}
