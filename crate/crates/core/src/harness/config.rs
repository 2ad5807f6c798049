//! JSON run configuration with dotted-path overrides.

use std::fs;
use std::path::Path;

use serde_json::Value;

use super::HarnessError;
use crate::trainer::TrainConfig;

/// Parse a config file. Missing fields take their defaults; unknown fields
/// are rejected.
pub fn load_config(path: &Path) -> Result<TrainConfig, HarnessError> {
    let text = fs::read_to_string(path).map_err(|e| HarnessError::Io(format!("{}: {e}", path.display())))?;
    parse_config(&text).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))
}

pub fn parse_config(text: &str) -> Result<TrainConfig, String> {
    serde_json::from_str(text).map_err(|e| e.to_string())
}

/// Apply `a.b.c=value` to a config. The value is read as JSON when it
/// parses (`3`, `true`, `null`, `[1,2]`), otherwise as a bare string.
pub fn apply_override(config: &TrainConfig, assignment: &str) -> Result<TrainConfig, HarnessError> {
    let bad = |m: String| HarnessError::Config(format!("override {assignment:?}: {m}"));
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| bad("expected dotted.path=value".into()))?;
    let value: Value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut root = serde_json::to_value(config).expect("config serializes");
    let mut node = &mut root;
    let keys: Vec<&str> = path.split('.').collect();
    for (i, key) in keys.iter().enumerate() {
        let obj = match node {
            Value::Object(map) => map,
            Value::Null => {
                *node = Value::Object(Default::default());
                node.as_object_mut().expect("just created")
            }
            _ => return Err(bad(format!("{} is not an object", keys[..i].join(".")))),
        };
        if i + 1 == keys.len() {
            if !obj.contains_key(*key) && i == 0 {
                return Err(bad(format!("unknown field {key:?}")));
            }
            obj.insert(key.to_string(), value.clone());
            break;
        }
        node = obj.entry(key.to_string()).or_insert(Value::Null);
    }
    serde_json::from_value(root).map_err(|e| bad(e.to_string()))
}

pub fn apply_overrides<'a>(
    config: TrainConfig,
    assignments: impl IntoIterator<Item = &'a str>,
) -> Result<TrainConfig, HarnessError> {
    assignments
        .into_iter()
        .try_fold(config, |c, a| apply_override(&c, a))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trainer::Mode;

    #[test]
    fn overrides() {
        let c = TrainConfig::default();
        let c = apply_override(&c, "epochs=20").unwrap();
        assert_eq!(c.epochs, 20);
        let c = apply_override(&c, "mode=fixed-alpha:0.5").unwrap();
        assert_eq!(c.mode, Mode::FixedAlpha(0.5));
        let c = apply_override(&c, "reward.shaping=0.5").unwrap();
        assert_eq!(c.reward.shaping, 0.5);
        let c = apply_override(&c, "reward.congestion=0.2").unwrap();
        assert_eq!(c.reward.congestion, Some(0.2));
        assert!(apply_override(&c, "epochz=1").is_err());
        assert!(apply_override(&c, "epochs").is_err());
        assert!(apply_override(&c, "epochs=many").is_err());
    }

    #[test]
    fn partial_file_takes_defaults() {
        let c = parse_config(r#"{"epochs": 3, "mode": "ippo", "provider": "none"}"#).unwrap();
        assert_eq!(c.epochs, 3);
        assert_eq!(c.lr, 3e-4);
        assert!(parse_config(r#"{"bogus": 1}"#).is_err());
    }
}
