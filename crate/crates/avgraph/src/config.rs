//! TOML model configs: schema, parsing, serialization, and fixture loading.
//!
//! A config has three sections. `[meta]` fixes the sizes `n`, `m`, the tail
//! cutoff and the noise flag `kappa`. `[rates.q_I_J]` gives one entry per
//! ordered pair of distinct states (1-based labels in keys); cross-class pairs
//! use the degeneracy fields `qbar`, `exponent`, `tail_left` and an optional
//! `beta` correction table, within-class pairs use a plain `table`. `[drifts.v_I]`
//! gives the per-state drift tables. Tables are lists of `[z, value]` pairs.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::model::{ChainFamily, ModelError, ModelParts, PiecewiseLinear, RateSpec};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("config syntax error: {0}")]
    Syntax(#[from] toml::de::Error),
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("bad key `{key}` in [{section}]: {reason}")]
    BadKey {
        section: &'static str,
        key: String,
        reason: String,
    },
    #[error("missing entry `{key}`")]
    MissingEntry { key: String },
    #[error("entry `{key}`: {reason}")]
    FormConflict { key: String, reason: String },
    #[error("entry `{key}`: {source}")]
    BadTable { key: String, source: ModelError },
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub meta: MetaSection,
    pub rates: BTreeMap<String, RateSection>,
    pub drifts: BTreeMap<String, DriftSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetaSection {
    pub n: usize,
    pub m: usize,
    pub cutoff: f64,
    pub kappa: u8,
}

/// One rate entry. Exactly one of the two profiles must be populated: the
/// degeneracy fields together, or `table` alone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct RateSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub qbar: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exponent: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tail_left: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<Vec<[f64; 2]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub table: Option<Vec<[f64; 2]>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriftSection {
    pub table: Vec<[f64; 2]>,
}

pub fn parse_model_config(text: &str) -> Result<ModelConfig, ConfigError> {
    Ok(toml::from_str(text)?)
}

pub fn serialize_model_config(config: &ModelConfig) -> String {
    toml::to_string_pretty(config).expect("model config serializes")
}

fn parse_pair_key(key: &str, n: usize) -> Result<(usize, usize), String> {
    let rest = key
        .strip_prefix("q_")
        .ok_or_else(|| "expected the form q_I_J".to_string())?;
    let (a, b) = rest
        .split_once('_')
        .ok_or_else(|| "expected the form q_I_J".to_string())?;
    let i: usize = a.parse().map_err(|_| format!("bad state label `{a}`"))?;
    let j: usize = b.parse().map_err(|_| format!("bad state label `{b}`"))?;
    if i == 0 || j == 0 || i > n || j > n {
        return Err(format!("state labels must lie in 1..={n}"));
    }
    if i == j {
        return Err("diagonal entries are not allowed".to_string());
    }
    Ok((i - 1, j - 1))
}

fn parse_drift_key(key: &str, n: usize) -> Result<usize, String> {
    let rest = key
        .strip_prefix("v_")
        .ok_or_else(|| "expected the form v_I".to_string())?;
    let i: usize = rest
        .parse()
        .map_err(|_| format!("bad state label `{rest}`"))?;
    if i == 0 || i > n {
        return Err(format!("state labels must lie in 1..={n}"));
    }
    Ok(i - 1)
}

fn table_to_pw(key: &str, rows: &[[f64; 2]]) -> Result<PiecewiseLinear, ConfigError> {
    let points: Vec<(f64, f64)> = rows.iter().map(|r| (r[0], r[1])).collect();
    PiecewiseLinear::new(&points).map_err(|source| ConfigError::BadTable {
        key: key.to_string(),
        source,
    })
}

/// Turns a parsed config into a validated model.
pub fn build_model(config: &ModelConfig) -> Result<ChainFamily, ConfigError> {
    let n = config.meta.n;
    let m = config.meta.m;
    if !(2..=crate::model::MAX_STATES).contains(&n) {
        return Err(ModelError::BadClassSplit { n, m }.into());
    }
    let class_of = |i: usize| if i < m { 1 } else { 2 };

    let mut rates: Vec<Option<RateSpec>> = vec![None; n * n];
    for (key, section) in &config.rates {
        let (i, j) = parse_pair_key(key, n).map_err(|reason| ConfigError::BadKey {
            section: "rates",
            key: key.clone(),
            reason,
        })?;
        let full_key = format!("rates.{key}");
        let degenerate_fields =
            section.qbar.is_some() || section.exponent.is_some() || section.tail_left.is_some();
        let spec = match (&section.table, degenerate_fields) {
            (Some(_), true) => {
                return Err(ConfigError::FormConflict {
                    key: full_key,
                    reason: "give either a table or the degeneracy fields, not both".into(),
                })
            }
            (Some(rows), false) => {
                if section.beta.is_some() {
                    return Err(ConfigError::FormConflict {
                        key: full_key,
                        reason: "beta only applies to the degeneracy profile".into(),
                    });
                }
                if class_of(i) != class_of(j) {
                    return Err(ConfigError::FormConflict {
                        key: full_key,
                        reason: "cross-class pairs must use the degeneracy fields".into(),
                    });
                }
                RateSpec::Table(table_to_pw(&full_key, rows)?)
            }
            (None, true) => {
                let (qbar, exponent, tail_left) =
                    match (section.qbar, section.exponent, section.tail_left) {
                        (Some(a), Some(b), Some(c)) => (a, b, c),
                        _ => {
                            return Err(ConfigError::FormConflict {
                                key: full_key,
                                reason:
                                    "the degeneracy profile needs qbar, exponent and tail_left"
                                        .into(),
                            })
                        }
                    };
                if class_of(i) == class_of(j) {
                    return Err(ConfigError::FormConflict {
                        key: full_key,
                        reason: "within-class pairs must use a table".into(),
                    });
                }
                let beta = match &section.beta {
                    Some(rows) => table_to_pw(&full_key, rows)?,
                    None => PiecewiseLinear::constant(0.0),
                };
                RateSpec::Degenerate {
                    qbar,
                    exponent,
                    beta,
                    tail_left,
                }
            }
            (None, false) => {
                return Err(ConfigError::FormConflict {
                    key: full_key,
                    reason: "empty rate entry".into(),
                })
            }
        };
        rates[i * n + j] = Some(spec);
    }
    for i in 0..n {
        for j in 0..n {
            if i != j && rates[i * n + j].is_none() {
                return Err(ConfigError::MissingEntry {
                    key: format!("rates.q_{}_{}", i + 1, j + 1),
                });
            }
        }
    }

    let mut drifts: Vec<Option<PiecewiseLinear>> = vec![None; n];
    for (key, section) in &config.drifts {
        let i = parse_drift_key(key, n).map_err(|reason| ConfigError::BadKey {
            section: "drifts",
            key: key.clone(),
            reason,
        })?;
        drifts[i] = Some(table_to_pw(&format!("drifts.{key}"), &section.table)?);
    }
    let drifts: Vec<PiecewiseLinear> = drifts
        .into_iter()
        .enumerate()
        .map(|(i, d)| {
            d.ok_or(ConfigError::MissingEntry {
                key: format!("drifts.v_{}", i + 1),
            })
        })
        .collect::<Result<_, _>>()?;

    let parts = ModelParts {
        n,
        m,
        cutoff: config.meta.cutoff,
        kappa: config.meta.kappa,
        rates,
        drifts,
    };
    Ok(ChainFamily::validate(parts)?)
}

/// Parses and validates a model from TOML text.
pub fn model_from_str(text: &str) -> Result<ChainFamily, ConfigError> {
    build_model(&parse_model_config(text)?)
}

/// A model loaded from disk, with the raw text and its content hash kept for
/// report provenance.
pub struct LoadedModel {
    pub model: ChainFamily,
    pub config: ModelConfig,
    pub raw: String,
    /// First 12 hex digits of the SHA-256 of the raw file.
    pub hash: String,
}

pub fn content_hash(raw: &str) -> String {
    let digest = Sha256::digest(raw.as_bytes());
    let mut s = String::with_capacity(12);
    for b in &digest[..6] {
        let _ = write!(s, "{b:02x}");
    }
    s
}

pub fn load_model(path: &Path) -> Result<LoadedModel, ConfigError> {
    let raw = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let config = parse_model_config(&raw)?;
    let model = build_model(&config)?;
    let hash = content_hash(&raw);
    Ok(LoadedModel {
        model,
        config,
        raw,
        hash,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    #[test]
    fn fixture_configs_round_trip() {
        for text in [fixtures::M2_TOML, fixtures::M3_TOML] {
            let parsed = parse_model_config(text).unwrap();
            let reparsed = parse_model_config(&serialize_model_config(&parsed)).unwrap();
            assert_eq!(parsed, reparsed);
        }
    }

    #[test]
    fn missing_pair_is_reported_by_key() {
        let text = fixtures::M2_TOML.replace("[rates.q_2_1]", "[rates.q_2_1_unused]");
        // Renaming the section header produces an unknown key, which the
        // parser rejects before pair completeness is even checked.
        assert!(parse_model_config(&text).is_ok());
        let err = build_model(&parse_model_config(&text).unwrap()).unwrap_err();
        match err {
            ConfigError::BadKey { .. } | ConfigError::MissingEntry { .. } => {}
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn within_class_degeneracy_fields_are_rejected() {
        let text = r#"
[meta]
n = 3
m = 2
cutoff = 1.0
kappa = 0

[rates.q_1_2]
qbar = 1.0
exponent = 1.0
tail_left = 1.0

[rates.q_2_1]
table = [[0.0, 1.0]]

[rates.q_1_3]
qbar = 1.0
exponent = 1.0
tail_left = 1.0

[rates.q_2_3]
qbar = 1.0
exponent = 1.0
tail_left = 1.0

[rates.q_3_1]
qbar = 1.0
exponent = 1.0
tail_left = 1.0

[rates.q_3_2]
qbar = 1.0
exponent = 1.0
tail_left = 1.0

[drifts.v_1]
table = [[0.0, 1.0]]

[drifts.v_2]
table = [[0.0, 1.0]]

[drifts.v_3]
table = [[0.0, 1.0]]
"#;
        let err = model_from_str(text).unwrap_err();
        match err {
            ConfigError::FormConflict { key, .. } => assert_eq!(key, "rates.q_1_2"),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let text = fixtures::M2_TOML.replace("kappa = 0", "kappa = 0\nextra = 1");
        assert!(parse_model_config(&text).is_err());
    }

    #[test]
    fn content_hash_is_stable() {
        assert_eq!(content_hash("abc"), "ba7816bf8f01");
    }
}
