//! Layered configuration: defaults, then a JSON file, then `--dotted.key`
//! flags. Keys are the serialized field names of [`PipelineConfig`].

use std::path::Path;

use anyhow::{anyhow, Context};
use nidt_core::pipeline::PipelineConfig;
use serde_json::{Map, Value};

use crate::Failure;

/// Every settable leaf of the configuration tree, dotted.
pub fn config_keys() -> Vec<String> {
    let mut out = Vec::new();
    let tree = serde_json::to_value(PipelineConfig::default()).expect("config serializes");
    collect_keys(&tree, String::new(), &mut out);
    out
}

fn collect_keys(v: &Value, prefix: String, out: &mut Vec<String>) {
    match v {
        Value::Object(m) => {
            for (k, child) in m {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                collect_keys(child, key, out);
            }
        }
        _ => out.push(prefix),
    }
}

fn merge(base: &mut Map<String, Value>, layer: Map<String, Value>, prefix: &str) -> anyhow::Result<()> {
    for (k, v) in layer {
        let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match (base.get_mut(&k), v) {
            (None, _) => return Err(anyhow!("unknown key `{key}`")),
            (Some(Value::Object(b)), Value::Object(l)) => merge(b, l, &key)?,
            (Some(Value::Object(_)), _) => return Err(anyhow!("key `{key}` must be an object")),
            (Some(slot), v) => *slot = v,
        }
    }
    Ok(())
}

fn set(tree: &mut Value, key: &str, raw: &str) -> anyhow::Result<()> {
    let mut node = tree;
    for part in key.split('.') {
        node = node
            .as_object_mut()
            .and_then(|m| m.get_mut(part))
            .ok_or_else(|| anyhow!("unknown option `--{key}`"))?;
    }
    if node.is_object() {
        return Err(anyhow!("option `--{key}` names a section, not a value"));
    }
    // Bare words that are not JSON are taken as strings.
    *node = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    Ok(())
}

/// Builds the effective configuration. File problems are data errors;
/// bad flags are usage errors.
pub fn load(file: Option<&Path>, overrides: &[(String, String)]) -> Result<PipelineConfig, Failure> {
    let mut tree = serde_json::to_value(PipelineConfig::default()).expect("config serializes");
    if let Some(path) = file {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))
            .map_err(Failure::data)?;
        let layer: Value = serde_json::from_str(&text)
            .with_context(|| format!("parsing config {}", path.display()))
            .map_err(Failure::data)?;
        let Value::Object(layer) = layer else {
            return Err(Failure::data(anyhow!("config {} must be a JSON object", path.display())));
        };
        let Value::Object(base) = &mut tree else { unreachable!() };
        merge(base, layer, "")
            .with_context(|| format!("config {}", path.display()))
            .map_err(Failure::data)?;
    }
    for (k, v) in overrides {
        set(&mut tree, k, v).map_err(Failure::usage)?;
    }
    serde_path_to_error::deserialize(tree).map_err(|e| {
        let key = e.path().to_string();
        let err = anyhow!("key `{key}`: {}", e.inner());
        if overrides.iter().any(|(k, _)| *k == key) {
            Failure::usage(err)
        } else {
            Failure::data(err)
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn keys_cover_nested_fields() {
        let keys = config_keys();
        for k in ["paths.workdir", "model.K", "dt.learning_rate", "synth.pattern_byte", "policy", "bc.hidden"] {
            assert!(keys.iter().any(|x| x == k), "{k}");
        }
    }

    #[test]
    fn precedence_flag_over_file_over_default() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, r#"{"dt": {"steps": 7, "learning_rate": 0.5}, "policy": "random"}"#).unwrap();
        let cfg = load(Some(&path), &[("dt.steps".into(), "9".into())]).unwrap();
        assert_eq!(cfg.dt.steps, 9);
        assert_eq!(cfg.dt.learning_rate, 0.5);
        assert_eq!(cfg.dt.batch_size, PipelineConfig::default().dt.batch_size);
        assert_eq!(cfg.policy.name(), "Random");
    }

    #[test]
    fn errors_name_the_key() {
        let e = load(None, &[("dt.steps".into(), "many".into())]).unwrap_err();
        assert_eq!(e.code, 1);
        assert!(e.error.to_string().contains("dt.steps"), "{}", e.error);
        let e = load(None, &[("dt.nope".into(), "1".into())]).unwrap_err();
        assert_eq!(e.code, 1);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, r#"{"model": {"d_ff": "wide"}}"#).unwrap();
        let e = load(Some(&path), &[]).unwrap_err();
        assert_eq!(e.code, 2);
        assert!(e.error.to_string().contains("model.d_ff"), "{}", e.error);
        std::fs::write(&path, r#"{"model": {"dff": 3}}"#).unwrap();
        let e = load(Some(&path), &[]).unwrap_err();
        assert!(format!("{:#}", e.error).contains("model.dff"), "{:#}", e.error);
    }

    #[test]
    fn round_trip() {
        let mut cfg = load(None, &[("seeds.eval".into(), "99".into()), ("paths.capture".into(), "x.pcap".into())]).unwrap();
        cfg.dt.grad_clip = None;
        let text = serde_json::to_string_pretty(&cfg).unwrap();
        let back: PipelineConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, cfg);
    }
}
