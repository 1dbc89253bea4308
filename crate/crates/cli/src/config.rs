//! Optional `--config` file, JSON or TOML by extension.

use std::path::Path;

use mnar_cate::dgp::ScenarioConfig;
use mnar_cate::harness::StudyConfig;
use mnar_cate::np2sls::{RegularizationConfig, SieveConfig};
use mnar_cate::param_em::{EmConfig, OutcomeFamily};
use serde::{de::DeserializeOwned, Deserialize};

use crate::CliError;

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    /// Full scenario for `simulate`, with `ScenarioConfig` field names.
    pub scenario: Option<ScenarioConfig>,
    /// Full study for `bench`.
    pub study: Option<StudyConfig>,
    pub model: ModelConfig,
}

/// Estimation settings shared by `estimate` and `sensitivity`.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub assumption: Option<String>,
    pub family: Option<OutcomeFamily>,
    /// Outcome regression terms, e.g. `1 + t + x1 + t:x1`.
    pub outcome_formula: Option<String>,
    /// Outcome-response regression terms, e.g. `1 + x1 + y`.
    pub response_formula: Option<String>,
    pub x: Option<Vec<f64>>,
    pub t1: Option<f64>,
    pub t0: Option<f64>,
    pub delta_grid: Option<Vec<f64>>,
    pub em: EmConfig,
    pub sieve: SieveConfig,
    pub reg: RegularizationConfig,
}

fn parse<T: DeserializeOwned>(path: &Path, text: &str) -> Result<T, CliError> {
    let bad = |e: String| CliError::Config(format!("{}: {e}", path.display()));
    match path.extension().and_then(|e| e.to_str()) {
        Some("toml") => toml::from_str(text).map_err(|e| bad(e.to_string())),
        Some("json") => serde_json::from_str(text).map_err(|e| bad(e.to_string())),
        _ => Err(bad("config must end in .json or .toml".into())),
    }
}

pub fn load(path: Option<&Path>) -> Result<FileConfig, CliError> {
    let Some(path) = path else {
        return Ok(FileConfig::default());
    };
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    parse(path, &text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_and_json_agree() {
        let toml_text = "[model]\nassumption = \"A2\"\nx = [1.0]\n\n[model.em]\nm = 20\n";
        let json_text = r#"{"model": {"assumption": "A2", "x": [1.0], "em": {"m": 20}}}"#;
        let a: FileConfig = parse(Path::new("c.toml"), toml_text).unwrap();
        let b: FileConfig = parse(Path::new("c.json"), json_text).unwrap();
        assert_eq!(a.model.assumption, b.model.assumption);
        assert_eq!(a.model.em, b.model.em);
        assert_eq!(a.model.em.m, 20);
        assert_eq!(a.model.em.tol, EmConfig::default().tol);
    }

    #[test]
    fn unknown_fields_and_extensions_are_config_errors() {
        assert!(matches!(
            parse::<FileConfig>(Path::new("c.json"), r#"{"modle": {}}"#),
            Err(CliError::Config(_))
        ));
        assert!(matches!(parse::<FileConfig>(Path::new("c.yaml"), ""), Err(CliError::Config(_))));
    }
}
