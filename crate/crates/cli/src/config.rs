//! Training config resolution: preset or file, then `key.path=value`
//! overrides applied to the TOML document before it is typed.

use std::path::Path;

use anyhow::{anyhow, bail, Context};
use viewsynth_core::training::TrainConfig;

/// Splits `a.b.c=value`; the value is read as a TOML literal when it parses
/// as one and as a bare string otherwise.
fn parse_override(raw: &str) -> anyhow::Result<(Vec<String>, toml::Value)> {
    let (key, value) = raw.split_once('=').ok_or_else(|| anyhow!("override `{raw}` is not key=value"))?;
    let path: Vec<String> = key.trim().split('.').map(str::to_string).collect();
    if path.iter().any(String::is_empty) {
        bail!("override `{raw}` has an empty key segment");
    }
    let value = value.trim();
    let parsed = toml::from_str::<toml::Table>(&format!("v = {value}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(value.to_string()));
    Ok((path, parsed))
}

fn apply(doc: &mut toml::Table, path: &[String], value: toml::Value) -> anyhow::Result<()> {
    let (last, parents) = path.split_last().expect("non-empty path");
    let mut table = doc;
    for p in parents {
        let entry = table.entry(p.clone()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry.as_table_mut().ok_or_else(|| anyhow!("`{p}` is not a table"))?;
    }
    table.insert(last.clone(), value);
    Ok(())
}

pub fn resolve(config: Option<&Path>, preset: &str, overrides: &[String]) -> anyhow::Result<TrainConfig> {
    let text = match config {
        Some(p) => std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?,
        None => TrainConfig::preset(preset)?.to_toml()?,
    };
    let mut doc: toml::Table = if text.trim_start().starts_with('{') {
        let cfg = TrainConfig::parse(&text)?;
        toml::from_str(&cfg.to_toml()?)?
    } else {
        toml::from_str(&text).with_context(|| "parsing config")?
    };
    for raw in overrides {
        let (path, value) = parse_override(raw)?;
        apply(&mut doc, &path, value)?;
    }
    let mut cfg: TrainConfig = toml::from_str(&toml::to_string(&doc)?).with_context(|| "typing config")?;
    // the embedding grid always follows the model resolution
    cfg.model = cfg.model.at_resolution(cfg.model.height, cfg.model.width);
    cfg.validate()?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_reach_nested_fields() {
        let cfg = resolve(None, "desk", &["epochs=3".into(), "model.height=32".into(), "model.width=32".into()]).unwrap();
        assert_eq!(cfg.epochs, 3);
        assert_eq!((cfg.model.height, cfg.model.width), (32, 32));
        assert!(resolve(None, "desk", &["epochs".into()]).is_err());
        assert!(resolve(None, "desk", &["batch_size=0".into()]).is_err());
        assert!(resolve(None, "desk", &["epochs=0".into()]).is_err());
        assert!(resolve(None, "nope", &[]).is_err());
    }
}
