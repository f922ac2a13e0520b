//! Config layering: preset defaults < config file < `--set` overrides < flags.

use std::path::Path;

use anyhow::{bail, Context, Result};
use serde_json::Value;
use shockfuse::experiment::ExperimentConfig;

/// Sets `path` (dot-separated, numeric segments index arrays) to `value`.
pub fn set_path(root: &mut Value, path: &str, value: Value) -> Result<()> {
    let mut cur = root;
    let parts: Vec<&str> = path.split('.').collect();
    for (k, part) in parts.iter().enumerate() {
        let last = k + 1 == parts.len();
        cur = match cur {
            Value::Object(map) => {
                if !map.contains_key(*part) {
                    if last {
                        map.insert(part.to_string(), Value::Null);
                    } else {
                        map.insert(part.to_string(), Value::Object(Default::default()));
                    }
                }
                map.get_mut(*part).unwrap()
            }
            Value::Array(items) => {
                let idx: usize = part
                    .parse()
                    .with_context(|| format!("`{part}` in `{path}` is not an array index"))?;
                let len = items.len();
                items
                    .get_mut(idx)
                    .with_context(|| format!("index {idx} out of range (len {len}) in `{path}`"))?
            }
            Value::Null => {
                *cur = Value::Object(Default::default());
                let Value::Object(map) = cur else { unreachable!() };
                map.entry(part.to_string()).or_insert(Value::Null)
            }
            _ => bail!("cannot descend into `{part}` of `{path}`: parent is a scalar"),
        };
    }
    *cur = value;
    Ok(())
}

/// Parses `key=value`; the value is read as JSON, falling back to a string.
pub fn parse_override(s: &str) -> Result<(String, Value)> {
    let (k, v) = s
        .split_once('=')
        .with_context(|| format!("override `{s}` is not of the form key=value"))?;
    let value = serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.to_string()));
    Ok((k.trim().to_string(), value))
}

/// Recursively overlays `patch` onto `base`.
pub fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                merge(b.entry(k).or_insert(Value::Null), v);
            }
        }
        (slot, v) => *slot = v,
    }
}

pub fn load(
    preset: ExperimentConfig,
    file: Option<&Path>,
    overrides: &[String],
) -> Result<ExperimentConfig> {
    let mut value = serde_json::to_value(&preset)?;
    if let Some(path) = file {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let patch: Value = serde_json::from_str(&text)
            .with_context(|| format!("parsing config {}", path.display()))?;
        merge(&mut value, patch);
    }
    for o in overrides {
        let (k, v) = parse_override(o)?;
        set_path(&mut value, &k, v)?;
    }
    let cfg: ExperimentConfig =
        serde_json::from_value(value).context("config does not match the expected schema")?;
    cfg.validate()?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn overrides_reach_nested_keys() {
        let mut v = json!({"train": {"phases": [{"max_epochs": 200}], "seed": 0}});
        set_path(&mut v, "train.phases.0.max_epochs", json!(5)).unwrap();
        set_path(&mut v, "train.seed", json!(7)).unwrap();
        set_path(&mut v, "arch.dropout", json!(0.1)).unwrap();
        assert_eq!(v["train"]["phases"][0]["max_epochs"], 5);
        assert_eq!(v["train"]["seed"], 7);
        assert_eq!(v["arch"]["dropout"], 0.1);
        assert!(set_path(&mut v, "train.phases.3.max_epochs", json!(1)).is_err());
    }

    #[test]
    fn override_values_parse_as_json_or_string() {
        assert_eq!(parse_override("a.b=3").unwrap(), ("a.b".into(), json!(3)));
        assert_eq!(parse_override("m=vanilla").unwrap(), ("m".into(), json!("vanilla")));
        assert!(parse_override("novalue").is_err());
    }

    #[test]
    fn file_then_overrides() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, r#"{"train": {"batch_size": 64, "seed": 3}}"#).unwrap();
        let cfg = load(ExperimentConfig::default(), Some(&path), &["train.seed=9".into()]).unwrap();
        assert_eq!(cfg.train.batch_size, 64);
        assert_eq!(cfg.train.seed, 9);
    }
}
