//! Experiment configuration.
//!
//! A configuration is assembled in three layers: a scale preset, an optional
//! TOML recipe file, and dotted `key=value` overrides. The merged result is
//! deserialized once, so unknown keys are rejected wherever they come from.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use crate::channel::PropagationParams;
use crate::error::{Error, Result};
use crate::metrics::SinrModel;
use crate::precoders::{RobustSolveSettings, ThetaMode};

/// A scalar parameter or a list of values to sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Axis {
    Scalar(f64),
    List(Vec<f64>),
}

impl Axis {
    pub fn values(&self) -> Vec<f64> {
        match self {
            Axis::Scalar(v) => vec![*v],
            Axis::List(v) => v.clone(),
        }
    }

    pub fn is_list(&self) -> bool {
        matches!(self, Axis::List(_))
    }

    pub fn scalar(&self) -> Option<f64> {
        match self {
            Axis::Scalar(v) => Some(*v),
            Axis::List(_) => None,
        }
    }
}

/// The swept parameter of a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AxisName {
    SnrDb,
    SigmaE,
}

impl AxisName {
    pub fn as_str(self) -> &'static str {
        match self {
            AxisName::SnrDb => "snr_db",
            AxisName::SigmaE => "sigma_e",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "snr_db" => Ok(AxisName::SnrDb),
            "sigma_e" => Ok(AxisName::SigmaE),
            other => Err(Error::Config(format!("unknown axis `{other}`"))),
        }
    }
}

impl fmt::Display for AxisName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Scheme {
    /// Conventional MMSE on the full estimate.
    #[serde(rename = "MMSE")]
    Mmse,
    /// Network-wide robust MMSE.
    #[serde(rename = "MMSE-RB")]
    Robust,
    /// Robust MMSE on the AP-selected sparse estimate.
    #[serde(rename = "MMSE-RB-SP")]
    RobustSparse,
    /// Cluster-based reduced-dimension robust MMSE.
    #[serde(rename = "MMSE-RB-RD")]
    RobustClustered,
}

impl Scheme {
    pub const ALL: [Scheme; 4] = [
        Scheme::Mmse,
        Scheme::Robust,
        Scheme::RobustSparse,
        Scheme::RobustClustered,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Scheme::Mmse => "MMSE",
            Scheme::Robust => "MMSE-RB",
            Scheme::RobustSparse => "MMSE-RB-SP",
            Scheme::RobustClustered => "MMSE-RB-RD",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Scheme::ALL
            .into_iter()
            .find(|sc| sc.label() == s)
            .ok_or_else(|| Error::Config(format!("unknown scheme `{s}`")))
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    #[default]
    Desk,
    Paper,
}

impl Scale {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Scale::Desk),
            "paper" => Ok(Scale::Paper),
            other => Err(Error::Config(format!(
                "unknown scale `{other}` (expected desk or paper)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    /// Number of access points `N`.
    pub n_aps: usize,
    /// Number of users `K`.
    pub n_users: usize,
    /// APs kept per user by AP selection (`L`).
    pub aps_per_user: usize,
    /// APs two users must share to join each other's cluster (`N_a`).
    pub min_shared_aps: usize,
    /// Error standard deviation `σe`, or a list to sweep.
    pub sigma_e: Axis,
    /// Target SNR in dB, or a list to sweep.
    pub snr_db: Axis,
    pub n_channel_draws: usize,
    pub n_error_draws: usize,
    pub n_geometries: usize,
    pub schemes: Vec<Scheme>,
    pub seed: u64,
    #[serde(default)]
    pub theta_mode: ThetaMode,
    #[serde(default)]
    pub sinr_model: SinrModel,
    /// Side of the square deployment area, meters.
    pub area_side: f64,
    #[serde(default)]
    pub solver: RobustSolveSettings,
    #[serde(default)]
    pub propagation: PropagationParams,
}

impl SimConfig {
    /// 32 APs, 8 users, 20 channel estimates × 20 error draws.
    pub fn desk() -> Self {
        Self {
            n_aps: 32,
            n_users: 8,
            aps_per_user: 8,
            min_shared_aps: 2,
            sigma_e: Axis::Scalar(0.1f64.sqrt()),
            snr_db: Axis::Scalar(15.0),
            n_channel_draws: 20,
            n_error_draws: 20,
            n_geometries: 1,
            schemes: Scheme::ALL.to_vec(),
            seed: 1,
            theta_mode: ThetaMode::default(),
            sinr_model: SinrModel::default(),
            area_side: 1000.0,
            solver: RobustSolveSettings::default(),
            propagation: PropagationParams::default(),
        }
    }

    /// 128 APs, 16 users, 100 channel estimates × 100 error draws.
    pub fn paper() -> Self {
        Self {
            n_aps: 128,
            n_users: 16,
            aps_per_user: 32,
            min_shared_aps: 8,
            n_channel_draws: 100,
            n_error_draws: 100,
            ..Self::desk()
        }
    }

    pub fn preset(scale: Scale) -> Self {
        match scale {
            Scale::Desk => Self::desk(),
            Scale::Paper => Self::paper(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("n_aps", self.n_aps),
            ("n_users", self.n_users),
            ("aps_per_user", self.aps_per_user),
            ("n_channel_draws", self.n_channel_draws),
            ("n_error_draws", self.n_error_draws),
            ("n_geometries", self.n_geometries),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        if self.aps_per_user > self.n_aps {
            return Err(Error::Config(format!(
                "aps_per_user ({}) exceeds n_aps ({})",
                self.aps_per_user, self.n_aps
            )));
        }
        if self.min_shared_aps > self.aps_per_user {
            return Err(Error::Config(format!(
                "min_shared_aps ({}) exceeds aps_per_user ({})",
                self.min_shared_aps, self.aps_per_user
            )));
        }
        if self.sigma_e.is_list() && self.snr_db.is_list() {
            return Err(Error::Config(
                "only one of sigma_e and snr_db may be a list".into(),
            ));
        }
        if self.schemes.is_empty() {
            return Err(Error::Config("schemes must not be empty".into()));
        }
        let mut seen = self.schemes.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.schemes.len() {
            return Err(Error::Config("schemes contains duplicates".into()));
        }
        for (name, axis) in [("sigma_e", &self.sigma_e), ("snr_db", &self.snr_db)] {
            let values = axis.values();
            if values.is_empty() {
                return Err(Error::Config(format!("{name} list is empty")));
            }
            if values.iter().any(|v| !v.is_finite()) {
                return Err(Error::Config(format!("{name} values must be finite")));
            }
        }
        if self.sigma_e.values().iter().any(|&s| s < 0.0) {
            return Err(Error::Config("sigma_e must be nonnegative".into()));
        }
        if !(self.area_side > 0.0 && self.area_side.is_finite()) {
            return Err(Error::Config("area_side must be positive".into()));
        }
        self.solver.validate().map_err(as_config)?;
        self.propagation.validate().map_err(as_config)?;
        Ok(())
    }

    /// The swept axis, if any.
    pub fn swept_axis(&self) -> Option<AxisName> {
        if self.snr_db.is_list() {
            Some(AxisName::SnrDb)
        } else if self.sigma_e.is_list() {
            Some(AxisName::SigmaE)
        } else {
            None
        }
    }

    /// Copy with both axes fixed to the given values.
    pub fn at_point(&self, sigma_e: f64, snr_db: f64) -> SimConfig {
        SimConfig {
            sigma_e: Axis::Scalar(sigma_e),
            snr_db: Axis::Scalar(snr_db),
            ..self.clone()
        }
    }

    /// SHA-256 of the canonical JSON form, hex encoded.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes to JSON");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self)
            .map_err(|e| Error::Config(format!("cannot render config: {e}")))
    }
}

fn as_config(e: Error) -> Error {
    match e {
        Error::Domain(m) => Error::Config(m),
        other => other,
    }
}

/// Builds a configuration from a preset, an optional TOML document and
/// dotted `key=value` overrides, in that order of precedence.
pub fn resolve(scale: Scale, recipe: Option<&str>, overrides: &[String]) -> Result<SimConfig> {
    let mut merged = serde_json::to_value(SimConfig::preset(scale)).expect("preset serializes");
    if let Some(text) = recipe {
        let table: toml::Table =
            toml::from_str(text).map_err(|e| Error::Config(format!("malformed config: {e}")))?;
        let layer = serde_json::to_value(table)
            .map_err(|e| Error::Config(format!("malformed config: {e}")))?;
        merge(&mut merged, layer);
    }
    for raw in overrides {
        let (key, value) = parse_override(raw)?;
        set_dotted(&mut merged, &key, value)?;
    }
    let cfg: SimConfig =
        serde_json::from_value(merged).map_err(|e| Error::Config(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

/// Reads `path` and resolves it as in [`resolve`].
pub fn load(scale: Scale, path: Option<&Path>, overrides: &[String]) -> Result<SimConfig> {
    let text = match path {
        Some(p) => Some(std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?),
        None => None,
    };
    resolve(scale, text.as_deref(), overrides)
}

fn merge(base: &mut Value, layer: Value) {
    match (base, layer) {
        (Value::Object(b), Value::Object(l)) => {
            for (k, v) in l {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Splits `key=value`; the value is read as a TOML literal, falling back to
/// a bare string.
fn parse_override(raw: &str) -> Result<(String, Value)> {
    let (key, value) = raw
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{raw}` is not of the form key=value")))?;
    let key = key.trim();
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(Error::Config(format!("override `{raw}` has an empty key")));
    }
    let value = value.trim();
    let parsed = toml::from_str::<toml::Table>(&format!("v = {value}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .map(|v| serde_json::to_value(v).expect("TOML values convert to JSON"))
        .unwrap_or_else(|| Value::String(value.to_string()));
    Ok((key.to_string(), parsed))
}

fn set_dotted(root: &mut Value, key: &str, value: Value) -> Result<()> {
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().expect("split yields at least one part");
    let mut node = root;
    for part in parts {
        let obj = node.as_object_mut().ok_or_else(|| {
            Error::Config(format!("override key `{key}`: `{part}` is not a section"))
        })?;
        node = obj
            .entry(part.to_string())
            .or_insert_with(|| Value::Object(Map::new()));
    }
    let obj = node.as_object_mut().ok_or_else(|| {
        Error::Config(format!(
            "override key `{key}` does not name a section field"
        ))
    })?;
    obj.insert(last.to_string(), value);
    Ok(())
}
