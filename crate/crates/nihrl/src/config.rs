//! TOML run configurations with dotted-key overrides.
//!
//! Sections mirror the fields of [`RunConfig`]: `network`, `skill`,
//! `activity`, `body` (with `body.weights`), `pretrain`, `tasktrain`, `hrl`
//! and `task`. Missing keys take their defaults; unknown keys are errors.

use std::fs;
use std::path::Path;

use nihrl_core::train::{RunConfig, TrainError};
use serde_json::{Map, Value};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("config file `{0}` not found")]
    Missing(String),
    #[error("cannot read `{path}`: {message}")]
    Read { path: String, message: String },
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("override `{0}` is not of the form key=value")]
    Override(String),
    #[error("invalid `{key}`: {message}")]
    Invalid { key: String, message: String },
}

impl ConfigError {
    /// Dotted key the error is about, when there is one.
    pub fn key(&self) -> Option<&str> {
        match self {
            ConfigError::UnknownKey(k) | ConfigError::Invalid { key: k, .. } => Some(k),
            _ => None,
        }
    }
}

/// Reads `path` (defaults when `None`), applies `key=value` overrides in
/// order, and validates the result.
pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<RunConfig, ConfigError> {
    let mut value = match path {
        None => Value::Object(Map::new()),
        Some(p) => {
            if !p.is_file() {
                return Err(ConfigError::Missing(p.display().to_string()));
            }
            let text = fs::read_to_string(p).map_err(|e| ConfigError::Read { path: p.display().to_string(), message: e.to_string() })?;
            parse_toml(&text).map_err(|message| ConfigError::Read { path: p.display().to_string(), message })?
        }
    };
    for o in overrides {
        apply_override(&mut value, o)?;
    }
    resolve(value)
}

/// Deserializes an already merged tree, checking keys and values.
pub fn resolve(value: Value) -> Result<RunConfig, ConfigError> {
    let defaults = serde_json::to_value(RunConfig::default()).expect("defaults serialize");
    check_keys(&value, &defaults, "")?;
    let cfg: RunConfig = serde_path_to_error::deserialize(value).map_err(|e| ConfigError::Invalid {
        key: e.path().to_string(),
        message: e.inner().to_string(),
    })?;
    cfg.validate().map_err(|e| match e {
        TrainError::Config { key, message } => ConfigError::Invalid { key, message },
        other => ConfigError::Invalid { key: String::new(), message: other.to_string() },
    })?;
    Ok(cfg)
}

fn parse_toml(text: &str) -> Result<Value, String> {
    let table: toml::Table = toml::from_str(text).map_err(|e| e.to_string())?;
    serde_json::to_value(table).map_err(|e| e.to_string())
}

/// `a.b.c=v`: `v` is read as a TOML value, or as a bare string when it is
/// not one (so `task.kind=goals` works without quotes).
pub fn apply_override(root: &mut Value, raw: &str) -> Result<(), ConfigError> {
    let (key, text) = raw.split_once('=').ok_or_else(|| ConfigError::Override(raw.into()))?;
    let key = key.trim();
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(ConfigError::Override(raw.into()));
    }
    let v = match parse_toml(&format!("v = {}", text.trim())) {
        Ok(Value::Object(mut m)) => m.remove("v").unwrap_or(Value::Null),
        _ => Value::String(text.trim().into()),
    };
    let mut node = root;
    let parts: Vec<&str> = key.split('.').collect();
    for part in &parts[..parts.len() - 1] {
        let map = node.as_object_mut().ok_or_else(|| ConfigError::Override(raw.into()))?;
        node = map.entry(part.to_string()).or_insert_with(|| Value::Object(Map::new()));
    }
    let map = node.as_object_mut().ok_or_else(|| ConfigError::Override(raw.into()))?;
    map.insert(parts[parts.len() - 1].to_string(), v);
    Ok(())
}

fn check_keys(value: &Value, defaults: &Value, prefix: &str) -> Result<(), ConfigError> {
    let (Value::Object(given), Value::Object(known)) = (value, defaults) else {
        return Ok(());
    };
    for (k, v) in given {
        let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match known.get(k) {
            None => return Err(ConfigError::UnknownKey(path)),
            Some(d) => check_keys(v, d, &path)?,
        }
    }
    Ok(())
}

/// The resolved configuration as TOML, loadable again with [`load`].
pub fn to_toml(cfg: &RunConfig) -> String {
    toml::to_string(cfg).expect("configuration serializes to TOML")
}

#[cfg(test)]
mod tests {
    use super::*;
    use nihrl_core::activity::Preset;
    use nihrl_core::env::TaskKind;

    fn write(text: &str) -> tempfile::NamedTempFile {
        let f = tempfile::NamedTempFile::new().unwrap();
        fs::write(f.path(), text).unwrap();
        f
    }

    #[test]
    fn empty_file_gives_defaults() {
        let f = write("");
        assert_eq!(load(Some(f.path()), &[]).unwrap(), RunConfig::default());
    }

    #[test]
    fn table_symbols_have_dotted_keys() {
        let f = write("[pretrain]\nbeta = 0.25\n[skill]\nsigma_z = 0.1\n[hrl]\nk = 5\n");
        let c = load(Some(f.path()), &[]).unwrap();
        assert_eq!((c.pretrain.beta, c.skill.sigma_z, c.hrl.k), (0.25, 0.1, 5));
    }

    #[test]
    fn overrides_apply_in_order_and_accept_bare_strings() {
        let f = write("seed = 3\n");
        let o = ["task.kind=hurdles", "activity.preset=mild_pd", "network.hidden=[32, 16]", "seed=9", "seed=11"].map(String::from);
        let c = load(Some(f.path()), &o).unwrap();
        assert_eq!(c.task.kind, TaskKind::Hurdles);
        assert_eq!(c.activity.preset, Preset::MildPd);
        assert_eq!(c.network.hidden, vec![32, 16]);
        assert_eq!(c.seed, 11);
    }

    #[test]
    fn unknown_keys_are_named() {
        let f = write("[pretrain]\nbetta = 0.5\n");
        let e = load(Some(f.path()), &[]).unwrap_err();
        assert_eq!(e.key(), Some("pretrain.betta"));
        let e = load(None, &["body.weights.w_q=1".into()]).unwrap_err();
        assert_eq!(e.key(), Some("body.weights.w_q"));
    }

    #[test]
    fn invalid_values_are_named() {
        let e = load(None, &["pretrain.beta=1.5".into()]).unwrap_err();
        assert_eq!(e.key(), Some("pretrain.beta"));
        let e = load(None, &["hrl.k=\"three\"".into()]).unwrap_err();
        assert_eq!(e.key(), Some("hrl.k"));
    }

    #[test]
    fn missing_file_and_bad_override() {
        assert!(matches!(load(Some(Path::new("/nonexistent/x.toml")), &[]), Err(ConfigError::Missing(_))));
        assert!(matches!(load(None, &["novalue".into()]), Err(ConfigError::Override(_))));
    }

    #[test]
    fn resolved_config_round_trips() {
        let mut c = RunConfig::default();
        c.activity.preset = Preset::Custom;
        c.activity.b_glu = Some(0.7);
        c.seed = 42;
        let f = write(&to_toml(&c));
        assert_eq!(load(Some(f.path()), &[]).unwrap(), c);
        let f = write(&to_toml(&RunConfig::default()));
        assert_eq!(load(Some(f.path()), &[]).unwrap(), RunConfig::default());
    }
}
