//! JSON run configuration with dotted-path overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};

use super::synth::SynthConfig;
use crate::error::{Error, Result};
use crate::eval::{EngineConfig, EvalConfig};
use crate::identifiers::IdentifiersConfig;
use crate::search::SearchConfig;
use crate::seqmodel::ArConfig;
use crate::tokenizer::TokenizerConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub embeddings: PathBuf,
    pub labels: PathBuf,
    pub splits: PathBuf,
    /// Defaults to the largest label plus one.
    pub num_classes: Option<usize>,
    /// Directory for checkpoints, reports and manifests.
    pub artifacts: PathBuf,
    /// Parameters of `irgen synth`.
    pub synthetic: SynthConfig,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            embeddings: "data/embeddings.emb".into(),
            labels: "data/labels.txt".into(),
            splits: "data/splits.txt".into(),
            num_classes: None,
            artifacts: "artifacts".into(),
            synthetic: SynthConfig::default(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataConfig,
    pub tokenizer: TokenizerConfig,
    pub identifiers: IdentifiersConfig,
    pub ar: ArConfig,
    pub search: SearchConfig,
    pub eval: EvalConfig,
}

/// Maps a deserialisation failure to a config error keyed by its path.
fn config_err(e: serde_path_to_error::Error<serde_json::Error>) -> Error {
    let path = e.path().to_string();
    let msg = e.inner().to_string();
    let mut key = if path == "." { String::new() } else { path };
    if let Some(field) = msg
        .strip_prefix("unknown field `")
        .and_then(|rest| rest.split('`').next())
        .filter(|f| key.rsplit('.').next() != Some(*f))
    {
        if !key.is_empty() {
            key.push('.');
        }
        key.push_str(field);
    }
    if key.is_empty() {
        key.push('.');
    }
    Error::config(key, msg)
}

impl RunConfig {
    pub fn from_value(v: Value) -> Result<Self> {
        let cfg: RunConfig = serde_path_to_error::deserialize(v).map_err(config_err)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let mut de = serde_json::Deserializer::from_str(text);
        let cfg: RunConfig = serde_path_to_error::deserialize(&mut de).map_err(config_err)?;
        de.end().map_err(|e| Error::config(".", e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads `path` (or the defaults when `None`) and applies `overrides`
    /// of the form `section.key=value` in order.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let base = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                Self::from_json(&text)?
            }
            None => Self::default(),
        };
        base.with_overrides(overrides)
    }

    pub fn with_overrides(&self, overrides: &[String]) -> Result<Self> {
        if overrides.is_empty() {
            return Ok(self.clone());
        }
        let mut v = serde_json::to_value(self).expect("config serialises");
        for o in overrides {
            apply_override(&mut v, o)?;
        }
        Self::from_value(v)
    }

    pub fn validate(&self) -> Result<()> {
        self.tokenizer.validate()?;
        self.ar.validate()?;
        self.eval.validate()?;
        if self.search.beam_width == 0 {
            return Err(Error::config("search.beam_width", "must be at least 1"));
        }
        if self.search.k == 0 {
            return Err(Error::config("search.k", "must be at least 1"));
        }
        Ok(())
    }

    pub fn engine(&self) -> EngineConfig {
        EngineConfig {
            tokenizer: self.tokenizer.clone(),
            identifiers: self.identifiers.clone(),
            ar: self.ar.clone(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises")
    }

    /// SHA-256 of the compact JSON form.
    pub fn hash(&self) -> String {
        let text = serde_json::to_string(self).expect("config serialises");
        hex::encode(Sha256::digest(text.as_bytes()))
    }

    /// Every seed in the configuration, keyed by its path.
    pub fn seeds(&self) -> Vec<(String, u64)> {
        vec![
            ("data.synthetic.seed".into(), self.data.synthetic.seed),
            ("tokenizer.seed".into(), self.tokenizer.seed),
            ("identifiers.random_seed".into(), self.identifiers.random_seed),
            ("identifiers.hkm.seed".into(), self.identifiers.hkm.seed),
            ("ar.seed".into(), self.ar.seed),
            ("search.ivfpq.seed".into(), self.search.ivfpq.seed),
            ("eval.seed".into(), self.eval.seed),
        ]
    }
}

/// Sets the value at a dotted key path. The value is parsed as JSON, or
/// taken as a string when it is not valid JSON.
pub fn apply_override(root: &mut Value, spec: &str) -> Result<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::config(spec, "override must have the form section.key=value"))?;
    let key = key.trim();
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = root;
    for part in key.split('.') {
        node = node
            .as_object_mut()
            .and_then(|m| m.get_mut(part))
            .ok_or_else(|| Error::config(key, "unknown configuration key"))?;
    }
    *node = value;
    Ok(())
}

/// JSON schema of [`RunConfig`], derived from the defaults: every object
/// is closed and every leaf carries its JSON type.
pub fn schema() -> Value {
    fn walk(v: &Value) -> Value {
        match v {
            Value::Object(m) => {
                let props: Map<String, Value> = m.iter().map(|(k, v)| (k.clone(), walk(v))).collect();
                json!({"type": "object", "additionalProperties": false, "properties": props})
            }
            Value::Array(a) => match a.first() {
                Some(first) => json!({"type": "array", "items": walk(first)}),
                None => json!({"type": "array"}),
            },
            Value::String(_) => json!({"type": "string"}),
            Value::Bool(_) => json!({"type": "boolean"}),
            Value::Number(n) if n.is_u64() => json!({"type": "integer", "minimum": 0}),
            Value::Number(_) => json!({"type": "number"}),
            Value::Null => json!({}),
        }
    }
    let mut s = walk(&serde_json::to_value(RunConfig::default()).expect("config serialises"));
    s["$schema"] = json!("https://json-schema.org/draft/2020-12/schema");
    s["title"] = json!("irgen run configuration");
    s
}

/// Every leaf key path accepted by the schema, sorted.
pub fn schema_keys(schema: &Value) -> Vec<String> {
    fn walk(prefix: &str, s: &Value, out: &mut Vec<String>) {
        match s.get("properties").and_then(Value::as_object) {
            Some(props) => {
                for (k, v) in props {
                    let p = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                    walk(&p, v, out);
                }
            }
            None => out.push(prefix.to_string()),
        }
    }
    let mut out = Vec::new();
    walk("", schema, &mut out);
    out.sort();
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let c = RunConfig::default();
        assert_eq!(RunConfig::from_json(&c.to_json()).unwrap(), c);
        assert_eq!(RunConfig::from_json("{}").unwrap(), c);
    }

    #[test]
    fn unknown_key_names_its_path() {
        let err = RunConfig::from_json(r#"{"tokenizer": {"levelz": 3}}"#).unwrap_err();
        match err {
            Error::Config { key, .. } => assert_eq!(key, "tokenizer.levelz"),
            other => panic!("{other:?}"),
        }
        let err = RunConfig::from_json(r#"{"search": {"ivfpq": {"probe": 3}}}"#).unwrap_err();
        assert!(matches!(err, Error::Config { ref key, .. } if key == "search.ivfpq.probe"), "{err}");
        let err = RunConfig::from_json(r#"{"extra": 1}"#).unwrap_err();
        assert!(matches!(err, Error::Config { ref key, .. } if key == "extra"), "{err}");
    }

    #[test]
    fn wrong_type_names_its_path() {
        let err = RunConfig::from_json(r#"{"ar": {"hidden": "wide"}}"#).unwrap_err();
        assert!(matches!(err, Error::Config { ref key, .. } if key == "ar.hidden"), "{err}");
    }

    #[test]
    fn overrides() {
        let c = RunConfig::default()
            .with_overrides(&[
                "tokenizer.levels=2".into(),
                "identifiers.scheme=random".into(),
                "eval.ks=[1,5]".into(),
                "data.artifacts=out/run1".into(),
            ])
            .unwrap();
        assert_eq!(c.tokenizer.levels, 2);
        assert_eq!(c.identifiers.scheme, crate::identifiers::IdScheme::Random);
        assert_eq!(c.eval.ks, vec![1, 5]);
        assert_eq!(c.data.artifacts, PathBuf::from("out/run1"));
        let err = RunConfig::default().with_overrides(&["tokenizer.nope=1".into()]).unwrap_err();
        assert!(matches!(err, Error::Config { ref key, .. } if key == "tokenizer.nope"));
        assert!(RunConfig::default().with_overrides(&["ar.hidden=0".into()]).is_err());
    }

    #[test]
    fn hash_tracks_content() {
        let a = RunConfig::default();
        let b = a.with_overrides(&["ar.seed=1".into()]).unwrap();
        assert_eq!(a.hash(), RunConfig::default().hash());
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn schema_covers_every_key() {
        let keys = schema_keys(&schema());
        assert!(keys.contains(&"tokenizer.lambda2".to_string()));
        assert!(keys.contains(&"search.ivfpq.n_probe".to_string()));
        for k in &keys {
            let c = RunConfig::default();
            let mut v = serde_json::to_value(&c).unwrap();
            let current = k.split('.').fold(&v, |n, p| &n[p]).clone();
            apply_override(&mut v, &format!("{k}={current}")).unwrap();
            assert_eq!(RunConfig::from_value(v).unwrap(), c, "{k}");
        }
    }
}
