//! Run configuration: JSON file, `key=value` overrides and typed parameters.

use std::collections::BTreeSet;
use std::fmt;
use std::path::PathBuf;

use serde::de::{DeserializeSeed, Deserializer, MapAccess, SeqAccess, Visitor};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::commands::{CommandName, Task};

/// Configuration problems; always reported as usage errors.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

fn err<T>(msg: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError(msg.into()))
}

/// A fully resolved run.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub workers: Option<usize>,
    pub task: Task,
}

/// On-disk shape of [`RunConfig`].
#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    command: Option<CommandName>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    out: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    workers: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    params: Option<Value>,
}

/// Values given on the command line; each overrides the file.
#[derive(Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub workers: Option<usize>,
    /// `dotted.key=value` assignments; values parse as JSON, else as strings.
    pub assignments: Vec<String>,
}

impl RunConfig {
    pub fn command(&self) -> CommandName {
        self.task.name()
    }

    /// Builds a config from optional file text and command-line overrides.
    pub fn resolve(command: CommandName, file: Option<&str>, flags: &Overrides) -> Result<Self, ConfigError> {
        let mut raw = match file {
            Some(text) if !text.trim().is_empty() => {
                let tree = parse_strict(text)?;
                from_value::<FileConfig>(tree, "")?
            }
            _ => FileConfig::default(),
        };
        if let Some(c) = raw.command {
            if c != command {
                return err(format!("config file is for `{}`, not `{}`", c.as_str(), command.as_str()));
            }
        }
        // Defaults first; file keys replace whole top-level values, so a region
        // of another kind never inherits stray default fields.
        let mut params = Task::defaults(command).params_value();
        match raw.params.take() {
            None => {}
            Some(Value::Object(file_params)) => {
                let Value::Object(map) = &mut params else { unreachable!("parameters are objects") };
                map.extend(file_params);
            }
            Some(_) => return err("params: expected an object"),
        }
        let mut seen = BTreeSet::new();
        for a in &flags.assignments {
            let Some((key, value)) = a.split_once('=') else {
                return err(format!("expected KEY=VALUE, got `{a}`"));
            };
            let key = key.trim();
            if !seen.insert(key.to_string()) {
                return err(format!("duplicate key `{key}` on the command line"));
            }
            let value = serde_json::from_str(value).unwrap_or_else(|_| Value::String(value.to_string()));
            match key {
                "seed" => raw.seed = Some(from_value(value, "seed")?),
                "workers" => raw.workers = Some(from_value(value, "workers")?),
                "out" => raw.out = Some(from_value(value, "out")?),
                "command" => return err("`command` is set by the subcommand"),
                _ => set_path(&mut params, key.strip_prefix("params.").unwrap_or(key), value)?,
            }
        }
        let task = Task::from_params(command, params)?;
        let cfg = RunConfig {
            seed: flags.seed.or(raw.seed).unwrap_or(0),
            out: flags.out.clone().or(raw.out),
            workers: flags.workers.or(raw.workers),
            task,
        };
        if cfg.workers == Some(0) {
            return err("workers: must be at least 1");
        }
        cfg.task.validate()?;
        Ok(cfg)
    }

    /// Canonical JSON; parsing it back yields an identical config.
    pub fn to_json(&self) -> String {
        let file = FileConfig {
            command: Some(self.command()),
            seed: Some(self.seed),
            out: self.out.clone(),
            workers: self.workers,
            params: Some(self.task.params_value()),
        };
        let mut s = serde_json::to_string_pretty(&file).expect("config serializes");
        s.push('\n');
        s
    }
}

pub(crate) fn from_value<T: serde::de::DeserializeOwned>(v: Value, prefix: &str) -> Result<T, ConfigError> {
    serde_path_to_error::deserialize(v).map_err(|e| {
        let inner = e.path().to_string();
        let path = match (prefix.is_empty(), inner == ".") {
            (true, _) => inner,
            (false, true) => prefix.to_string(),
            (false, false) => format!("{prefix}.{inner}"),
        };
        ConfigError(format!("{path}: {}", e.into_inner()))
    })
}

fn set_path(root: &mut Value, key: &str, value: Value) -> Result<(), ConfigError> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return err(format!("malformed key `{key}`"));
    }
    let mut node = root;
    for (i, part) in parts.iter().enumerate() {
        let Value::Object(map) = node else {
            return err(format!("`{}` is not an object", parts[..i].join(".")));
        };
        if i + 1 == parts.len() {
            map.insert(part.to_string(), value);
            return Ok(());
        }
        node = map.entry(part.to_string()).or_insert_with(|| Value::Object(Map::new()));
    }
    unreachable!("key has at least one part")
}

/// Parses JSON, rejecting duplicate object keys by name.
pub fn parse_strict(text: &str) -> Result<Value, ConfigError> {
    let mut de = serde_json::Deserializer::from_str(text);
    let v = StrictValue { path: String::new() }.deserialize(&mut de).map_err(|e| ConfigError(e.to_string()))?;
    de.end().map_err(|e| ConfigError(e.to_string()))?;
    Ok(v)
}

struct StrictValue {
    path: String,
}

impl StrictValue {
    fn child(&self, key: &str) -> String {
        if self.path.is_empty() {
            key.to_string()
        } else {
            format!("{}.{key}", self.path)
        }
    }
}

impl<'de> DeserializeSeed<'de> for StrictValue {
    type Value = Value;

    fn deserialize<D: Deserializer<'de>>(self, d: D) -> Result<Value, D::Error> {
        d.deserialize_any(self)
    }
}

impl<'de> Visitor<'de> for StrictValue {
    type Value = Value;

    fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
        f.write_str("a JSON value")
    }

    fn visit_bool<E>(self, v: bool) -> Result<Value, E> {
        Ok(Value::Bool(v))
    }

    fn visit_i64<E>(self, v: i64) -> Result<Value, E> {
        Ok(v.into())
    }

    fn visit_u64<E>(self, v: u64) -> Result<Value, E> {
        Ok(v.into())
    }

    fn visit_f64<E: serde::de::Error>(self, v: f64) -> Result<Value, E> {
        serde_json::Number::from_f64(v).map(Value::Number).ok_or_else(|| E::custom("non-finite number"))
    }

    fn visit_str<E>(self, v: &str) -> Result<Value, E> {
        Ok(Value::String(v.to_string()))
    }

    fn visit_string<E>(self, v: String) -> Result<Value, E> {
        Ok(Value::String(v))
    }

    fn visit_unit<E>(self) -> Result<Value, E> {
        Ok(Value::Null)
    }

    fn visit_seq<A: SeqAccess<'de>>(self, mut seq: A) -> Result<Value, A::Error> {
        let mut out = Vec::new();
        while let Some(v) = seq.next_element_seed(StrictValue { path: self.child(&out.len().to_string()) })? {
            out.push(v);
        }
        Ok(Value::Array(out))
    }

    fn visit_map<A: MapAccess<'de>>(self, mut map: A) -> Result<Value, A::Error> {
        let mut out = Map::new();
        while let Some(key) = map.next_key::<String>()? {
            let path = self.child(&key);
            if out.contains_key(&key) {
                return Err(serde::de::Error::custom(format!("duplicate key `{path}`")));
            }
            let v = map.next_value_seed(StrictValue { path })?;
            out.insert(key, v);
        }
        Ok(Value::Object(out))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicate_keys_are_named() {
        let e = parse_strict(r#"{"params": {"n": 2, "n": 3}}"#).unwrap_err();
        assert!(e.0.contains("duplicate key `params.n`"), "{e}");
    }

    #[test]
    fn dotted_assignment_builds_nested_objects() {
        let mut v = Value::Object(Map::new());
        set_path(&mut v, "region.level", Value::from(2.0)).unwrap();
        assert_eq!(v["region"]["level"], Value::from(2.0));
    }
}
