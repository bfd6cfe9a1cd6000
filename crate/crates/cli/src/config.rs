//! Scenario configuration: strict JSON, dotted-path overrides, typed sections.

use std::collections::HashSet;
use std::fmt;
use std::path::Path;

use mnl_core::sde::Scheme;
use serde::de::{self, Deserializer, MapAccess, SeqAccess, Visitor};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{ConfigError, Diagnostic};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    Linear,
    Composite,
    Hopf,
    FreeMeasurement,
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scenario::Linear => "linear",
            Scenario::Composite => "composite",
            Scenario::Hopf => "hopf",
            Scenario::FreeMeasurement => "free-measurement",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DriftConfig {
    /// Row-major drift matrix.
    Matrix(Vec<Vec<f64>>),
    OscillatorPair { m: f64, k: f64 },
    Hopf { omega: f64, epsilon: f64, c: f64, d: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialConfig {
    Point(Vec<f64>),
    Gaussian { mean: Vec<f64>, cov: Vec<Vec<f64>> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleSection {
    pub n_traj: usize,
    pub dt: f64,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_final: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub record_times: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_records: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scheme: Option<Scheme>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub burn_in: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples_per_traj: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_bins: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<String>,
    #[serde(default = "yes")]
    pub timeseries: bool,
    #[serde(default = "yes")]
    pub histogram: bool,
}

fn yes() -> bool {
    true
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { dir: None, timeseries: true, histogram: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub scenario: Scenario,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub observable: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub drift: Option<DriftConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kappa: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial: Option<InitialConfig>,
    pub ensemble: EnsembleSection,
    #[serde(default)]
    pub outputs: OutputSection,
}

/// A parsed document together with the raw JSON it came from.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: ScenarioConfig,
    /// The document after overrides, echoed into the manifest.
    pub raw: Value,
}

pub fn load(path: &Path, overrides: &[String]) -> Result<LoadedConfig, ConfigError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ConfigError::Read { path: path.display().to_string(), message: e.to_string() })?;
    parse(&text, overrides)
}

/// Parses `text`, applies `key=value` overrides and checks the schema.
pub fn parse(text: &str, overrides: &[String]) -> Result<LoadedConfig, ConfigError> {
    reject_duplicates(text)?;
    let mut raw: Value = serde_json::from_str(text).map_err(|e| ConfigError::Syntax(e.to_string()))?;
    for o in overrides {
        apply_override(&mut raw, o)?;
    }
    let config = serde_path_to_error::deserialize(raw.clone()).map_err(|e| {
        ConfigError::Invalid(vec![Diagnostic::new(path_of(e.path()), e.inner().to_string())])
    })?;
    Ok(LoadedConfig { config, raw })
}

fn path_of(p: &serde_path_to_error::Path) -> String {
    let s = p.to_string();
    if s == "." {
        "(root)".into()
    } else {
        s
    }
}

/// Sets the existing entry at dotted path `key` to `value`, parsed as JSON
/// when possible and as a string otherwise.
pub fn apply_override(doc: &mut Value, assignment: &str) -> Result<(), ConfigError> {
    let (key, value) = assignment
        .split_once('=')
        .ok_or_else(|| ConfigError::Override { key: assignment.into(), message: "expected key=value".into() })?;
    let bad = |message: String| ConfigError::Override { key: key.into(), message };
    if key.is_empty() {
        return Err(bad("empty key".into()));
    }
    let mut node = doc;
    for part in key.split('.') {
        node = match node {
            Value::Object(map) => map.get_mut(part).ok_or_else(|| bad(format!("no existing key `{part}`")))?,
            Value::Array(items) => {
                let i: usize = part.parse().map_err(|_| bad(format!("`{part}` is not an array index")))?;
                let len = items.len();
                items.get_mut(i).ok_or_else(|| bad(format!("index {i} out of range for length {len}")))?
            }
            _ => return Err(bad(format!("cannot descend into a scalar at `{part}`"))),
        };
    }
    *node = serde_json::from_str(value).unwrap_or_else(|_| Value::String(value.into()));
    Ok(())
}

fn reject_duplicates(text: &str) -> Result<(), ConfigError> {
    let mut de = serde_json::Deserializer::from_str(text);
    match serde_path_to_error::deserialize::<_, Strict>(&mut de) {
        Ok(_) => de.end().map_err(|e| ConfigError::Syntax(e.to_string())),
        Err(e) if e.inner().is_data() => {
            Err(ConfigError::Invalid(vec![Diagnostic::new(path_of(e.path()), e.inner().to_string())]))
        }
        Err(e) => Err(ConfigError::Syntax(e.into_inner().to_string())),
    }
}

/// Walks a JSON document and fails on the first repeated object key.
struct Strict;

impl<'de> Deserialize<'de> for Strict {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        d.deserialize_any(StrictVisitor)
    }
}

struct StrictVisitor;

impl<'de> Visitor<'de> for StrictVisitor {
    type Value = Strict;

    fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("any JSON value")
    }

    fn visit_bool<E>(self, _: bool) -> Result<Strict, E> {
        Ok(Strict)
    }

    fn visit_i64<E>(self, _: i64) -> Result<Strict, E> {
        Ok(Strict)
    }

    fn visit_u64<E>(self, _: u64) -> Result<Strict, E> {
        Ok(Strict)
    }

    fn visit_f64<E>(self, _: f64) -> Result<Strict, E> {
        Ok(Strict)
    }

    fn visit_str<E>(self, _: &str) -> Result<Strict, E> {
        Ok(Strict)
    }

    fn visit_unit<E>(self) -> Result<Strict, E> {
        Ok(Strict)
    }

    fn visit_seq<A: SeqAccess<'de>>(self, mut seq: A) -> Result<Strict, A::Error> {
        while seq.next_element::<Strict>()?.is_some() {}
        Ok(Strict)
    }

    fn visit_map<A: MapAccess<'de>>(self, mut map: A) -> Result<Strict, A::Error> {
        let mut seen = HashSet::new();
        while let Some(key) = map.next_key::<String>()? {
            if !seen.insert(key.clone()) {
                return Err(de::Error::custom(format!("duplicate key `{key}`")));
            }
            map.next_value::<Strict>()?;
        }
        Ok(Strict)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const LINEAR: &str = r#"{
        "scenario": "linear",
        "observable": "p1",
        "drift": {"matrix": [[0, 1], [-1, -1]]},
        "kappa": 1,
        "ensemble": {"n_traj": 10, "dt": 0.01, "seed": 1, "t_final": 1}
    }"#;

    #[test]
    fn parses_minimal_linear_config() {
        let c = parse(LINEAR, &[]).unwrap().config;
        assert_eq!(c.scenario, Scenario::Linear);
        assert_eq!(c.drift, Some(DriftConfig::Matrix(vec![vec![0.0, 1.0], vec![-1.0, -1.0]])));
        assert!(c.outputs.timeseries && c.outputs.histogram);
    }

    #[test]
    fn unknown_keys_are_reported_with_path() {
        let text = LINEAR.replace("\"seed\": 1", "\"seed\": 1, \"sede\": 2");
        match parse(&text, &[]) {
            Err(ConfigError::Invalid(d)) => {
                assert_eq!(d[0].path, "ensemble.sede");
                assert!(d[0].message.contains("sede"), "{}", d[0].message);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn duplicate_keys_are_rejected() {
        let text = LINEAR.replace("\"kappa\": 1", "\"kappa\": 1, \"kappa\": 2");
        match parse(&text, &[]) {
            Err(ConfigError::Invalid(d)) => assert!(d[0].message.contains("duplicate key `kappa`")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn comments_and_trailing_garbage_are_syntax_errors() {
        assert!(matches!(parse(&format!("// hi\n{LINEAR}"), &[]), Err(ConfigError::Syntax(_))));
        assert!(matches!(parse(&format!("{LINEAR} x"), &[]), Err(ConfigError::Syntax(_))));
    }

    #[test]
    fn overrides_replace_existing_entries_only() {
        let c = parse(LINEAR, &["ensemble.seed=42".into(), "drift.matrix.1.1=-2".into(), "observable=q1".into()])
            .unwrap()
            .config;
        assert_eq!(c.ensemble.seed, 42);
        assert_eq!(c.drift, Some(DriftConfig::Matrix(vec![vec![0.0, 1.0], vec![-1.0, -2.0]])));
        assert_eq!(c.observable.as_deref(), Some("q1"));
        for bad in ["ensemble.threads=2", "drift.matrix.2.0=1", "kappa.x=1", "kappa"] {
            assert!(matches!(parse(LINEAR, &[bad.into()]), Err(ConfigError::Override { .. })), "{bad}");
        }
    }

    #[test]
    fn round_trips_through_serde() {
        let c = parse(LINEAR, &[]).unwrap().config;
        let back: ScenarioConfig = serde_json::from_str(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
    }
}
