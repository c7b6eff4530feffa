//! Flat `key=value` run configuration with `#` comments.
//!
//! Command-line flags mirror the keys (`keep_fraction` ↔ `--keep-fraction`)
//! and are applied through [`PipelineConfig::set`] after the file, so they
//! take precedence.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::dct::Ordering;
use crate::postproc::{PostprocParams, WatershedParams};
use crate::stego::StegoConfig;
use crate::synth::{Placement, DEFAULT_MAX_ATTEMPTS};

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("unknown configuration key `{key}`")]
    UnknownKey { key: String },

    #[error("invalid value `{value}` for `{key}`: accepted {accepted}")]
    OutOfRange {
        key: String,
        value: String,
        accepted: String,
    },

    #[error("line {line}: expected key=value, found `{text}`")]
    Malformed { line: usize, text: String },

    #[error("cannot read config {path}: {reason}")]
    Read { path: PathBuf, reason: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    /// Built-in preset name or preset file path.
    pub preset: String,
    pub out_dir: PathBuf,
    pub count: usize,
    pub size: usize,
    pub keep_fraction: f64,
    pub ordering: Ordering,
    pub epsilon: f64,
    pub payload_side: usize,
    pub band_fraction: f64,
    pub max_hole_area: usize,
    pub min_marker_distance: f64,
    pub min_marker_height: f64,
    pub min_marker_dynamic: f64,
    /// `None` means the midpoint of the image range.
    pub threshold: Option<f64>,
    pub tau: Vec<f64>,
    pub seed: u64,
    /// Worker threads; 0 lets the pool pick.
    pub jobs: usize,
    pub max_attempts: usize,
    pub placement: Placement,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let stego = StegoConfig::default();
        let post = PostprocParams::default();
        PipelineConfig {
            preset: "dsb".into(),
            out_dir: PathBuf::from("out"),
            count: 50,
            size: 256,
            keep_fraction: 0.5,
            ordering: Ordering::Radial,
            epsilon: stego.epsilon,
            payload_side: stego.payload_side,
            band_fraction: stego.band_fraction,
            max_hole_area: post.max_hole_area,
            min_marker_distance: post.watershed.min_marker_distance,
            min_marker_height: post.watershed.min_marker_height,
            min_marker_dynamic: post.watershed.min_marker_dynamic,
            threshold: post.threshold,
            tau: vec![0.5, 0.75],
            seed: 0,
            jobs: 0,
            max_attempts: DEFAULT_MAX_ATTEMPTS,
            placement: Placement::AllowTouching,
        }
    }
}

pub const KEYS: [&str; 19] = [
    "preset",
    "out_dir",
    "count",
    "size",
    "keep_fraction",
    "ordering",
    "epsilon",
    "payload_side",
    "band_fraction",
    "max_hole_area",
    "min_marker_distance",
    "min_marker_height",
    "min_marker_dynamic",
    "threshold",
    "tau",
    "seed",
    "jobs",
    "max_attempts",
    "placement",
];

fn out_of_range(key: &str, value: &str, accepted: &str) -> ConfigError {
    ConfigError::OutOfRange {
        key: key.to_string(),
        value: value.to_string(),
        accepted: accepted.to_string(),
    }
}

fn parse_float(key: &str, value: &str, accepted: &str, ok: impl Fn(f64) -> bool) -> Result<f64, ConfigError> {
    match value.parse::<f64>() {
        Ok(v) if v.is_finite() && ok(v) => Ok(v),
        _ => Err(out_of_range(key, value, accepted)),
    }
}

fn parse_int(key: &str, value: &str, accepted: &str, min: usize) -> Result<usize, ConfigError> {
    match value.parse::<usize>() {
        Ok(v) if v >= min => Ok(v),
        _ => Err(out_of_range(key, value, accepted)),
    }
}

impl PipelineConfig {
    /// Applies one setting, validating it against its owning module's range.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let value = value.trim();
        match key {
            "preset" => {
                if value.is_empty() {
                    return Err(out_of_range(key, value, "a preset name or file path"));
                }
                self.preset = value.to_string();
            }
            "out_dir" => {
                if value.is_empty() {
                    return Err(out_of_range(key, value, "a directory path"));
                }
                self.out_dir = PathBuf::from(value);
            }
            "count" => self.count = parse_int(key, value, "an integer >= 1", 1)?,
            "size" => self.size = parse_int(key, value, "an integer >= 1", 1)?,
            "keep_fraction" => {
                self.keep_fraction = parse_float(key, value, "a number in [0, 1]", |v| (0.0..=1.0).contains(&v))?
            }
            "ordering" => {
                self.ordering = value
                    .parse()
                    .map_err(|_| out_of_range(key, value, "radial or diagonal"))?
            }
            "epsilon" => self.epsilon = parse_float(key, value, "a number > 0", |v| v > 0.0)?,
            "payload_side" => self.payload_side = parse_int(key, value, "an integer >= 1", 1)?,
            "band_fraction" => {
                self.band_fraction = parse_float(key, value, "a number in (0, 0.5]", |v| v > 0.0 && v <= 0.5)?
            }
            "max_hole_area" => self.max_hole_area = parse_int(key, value, "an integer >= 0", 0)?,
            "min_marker_distance" => self.min_marker_distance = parse_float(key, value, "a number >= 0", |v| v >= 0.0)?,
            "min_marker_height" => self.min_marker_height = parse_float(key, value, "a number >= 0", |v| v >= 0.0)?,
            "min_marker_dynamic" => self.min_marker_dynamic = parse_float(key, value, "a number >= 0", |v| v >= 0.0)?,
            "threshold" => {
                self.threshold = if value == "auto" {
                    None
                } else {
                    Some(parse_float(key, value, "a number or `auto`", |_| true)?)
                }
            }
            "tau" => {
                let accepted = "a comma-separated list of numbers in [0.5, 1]";
                let taus = value
                    .split(',')
                    .map(|t| parse_float(key, t.trim(), accepted, |v| (0.5..=1.0).contains(&v)))
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(|_| out_of_range(key, value, accepted))?;
                if taus.is_empty() {
                    return Err(out_of_range(key, value, accepted));
                }
                self.tau = taus;
            }
            "seed" => {
                self.seed = value
                    .parse()
                    .map_err(|_| out_of_range(key, value, "an unsigned 64-bit integer"))?
            }
            "jobs" => self.jobs = parse_int(key, value, "an integer >= 0", 0)?,
            "max_attempts" => self.max_attempts = parse_int(key, value, "an integer >= 1", 1)?,
            "placement" => {
                self.placement = match value {
                    "touching" => Placement::AllowTouching,
                    "separated" => Placement::Separated,
                    _ => return Err(out_of_range(key, value, "touching or separated")),
                }
            }
            _ => return Err(ConfigError::UnknownKey { key: key.to_string() }),
        }
        Ok(())
    }

    /// Applies every `key=value` line of `text` on top of `self`.
    pub fn apply_text(&mut self, text: &str) -> Result<(), ConfigError> {
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(ConfigError::Malformed {
                    line: idx + 1,
                    text: raw.to_string(),
                });
            };
            self.set(key.trim(), value)?;
        }
        self.validate()
    }

    pub fn from_text(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Read {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        Self::from_text(&text)
    }

    /// Checks constraints spanning several keys.
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.stego()
            .validate_for(self.size, self.size)
            .map_err(|e| out_of_range("payload_side", &self.payload_side.to_string(), &e.to_string()))
    }

    pub fn stego(&self) -> StegoConfig {
        StegoConfig {
            payload_side: self.payload_side,
            epsilon: self.epsilon,
            band_fraction: self.band_fraction,
        }
    }

    pub fn postproc(&self) -> PostprocParams {
        PostprocParams {
            threshold: self.threshold,
            max_hole_area: self.max_hole_area,
            watershed: WatershedParams {
                min_marker_distance: self.min_marker_distance,
                min_marker_height: self.min_marker_height,
                min_marker_dynamic: self.min_marker_dynamic,
            },
        }
    }

    /// Every key with its resolved value, one `key=value` per line, in
    /// [`KEYS`] order. Parsing the output yields the same configuration.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for key in KEYS {
            let _ = writeln!(s, "{key}={}", self.value_of(key));
        }
        s
    }

    fn value_of(&self, key: &str) -> String {
        match key {
            "preset" => self.preset.clone(),
            "out_dir" => self.out_dir.display().to_string(),
            "count" => self.count.to_string(),
            "size" => self.size.to_string(),
            "keep_fraction" => self.keep_fraction.to_string(),
            "ordering" => self.ordering.to_string(),
            "epsilon" => self.epsilon.to_string(),
            "payload_side" => self.payload_side.to_string(),
            "band_fraction" => self.band_fraction.to_string(),
            "max_hole_area" => self.max_hole_area.to_string(),
            "min_marker_distance" => self.min_marker_distance.to_string(),
            "min_marker_height" => self.min_marker_height.to_string(),
            "min_marker_dynamic" => self.min_marker_dynamic.to_string(),
            "threshold" => self.threshold.map_or("auto".into(), |t| t.to_string()),
            "tau" => self.tau.iter().map(|t| t.to_string()).collect::<Vec<_>>().join(","),
            "seed" => self.seed.to_string(),
            "jobs" => self.jobs.to_string(),
            "max_attempts" => self.max_attempts.to_string(),
            "placement" => match self.placement {
                Placement::AllowTouching => "touching".into(),
                Placement::Separated => "separated".into(),
            },
            _ => unreachable!("value_of called with a key outside KEYS"),
        }
    }
}
