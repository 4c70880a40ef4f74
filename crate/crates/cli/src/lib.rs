//! Command-line pipeline around `ipaths-core`: configuration, artifact
//! provenance, pipeline stages and report rendering.

pub mod config;
pub mod pipeline;
pub mod provenance;
pub mod report;

use anyhow::{bail, Context, Result};

/// Applies `section.key=value` overrides to TOML text. Values are parsed as
/// TOML and fall back to strings.
pub fn apply_overrides(text: &str, overrides: &[String]) -> Result<String> {
    let mut doc: toml::Table = toml::from_str(text).context("parsing configuration")?;
    for o in overrides {
        let (key, raw) = o
            .split_once('=')
            .with_context(|| format!("override {o:?} is not KEY=VALUE"))?;
        let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| toml::Value::String(raw.to_string()));
        let parts: Vec<&str> = key.trim().split('.').collect();
        let (last, sections) = parts.split_last().expect("split yields one part");
        let mut table = &mut doc;
        for s in sections {
            let entry = table
                .entry(s.to_string())
                .or_insert_with(|| toml::Value::Table(Default::default()));
            table = match entry {
                toml::Value::Table(t) => t,
                _ => bail!("override {o:?}: {s} is not a section"),
            };
        }
        table.insert(last.to_string(), value);
    }
    Ok(toml::to_string(&doc)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::RunConfig;

    #[test]
    fn overrides_replace_file_values() {
        let text = apply_overrides(
            "[model]\nhidden = 8\n",
            &[
                "model.hidden=16".into(),
                "compression.span=strict".into(),
                "train.learning_rate=0.01".into(),
            ],
        )
        .unwrap();
        let c = RunConfig::from_toml(&text).unwrap();
        assert_eq!(c.model.hidden, 16);
        assert_eq!(c.train.learning_rate, 0.01);
        assert_eq!(c.compression.span, ipaths_core::compression::SpanMode::Strict);
        assert!(apply_overrides("", &["nokey".into()]).is_err());
        assert!(apply_overrides("[model]\nhidden = 8\n", &["model.hidden.x=1".into()]).is_err());
    }
}
