//! Run configuration for the `pipeline` command.

use std::path::{Path, PathBuf};

use anyhow::Result;
use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use solidarity_core::model::Hyperparams;
use solidarity_core::weak_supervision::AutoLabelConfig;
use solidarity_core::Lang;

use crate::run::usage;
use crate::splits::SplitSizes;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum TranslatorKind {
    /// Reverses word order and tags the language pair; for dry runs.
    #[default]
    Mock,
    /// Returns the input unchanged.
    Identity,
    /// JSON translation service over HTTP.
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TranslatorConfig {
    pub kind: TranslatorKind,
    pub url: Option<String>,
    /// Environment variable holding the API key.
    pub key_env: String,
    pub timeout_ms: u64,
}

impl Default for TranslatorConfig {
    fn default() -> Self {
        TranslatorConfig {
            kind: TranslatorKind::Mock,
            url: None,
            key_env: "SOLIDARITY_TRANSLATE_KEY".into(),
            timeout_ms: 30_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    pub oversample: bool,
    pub back_translate: bool,
    pub pivot: Lang,
    pub drop_identical: bool,
    pub translator: TranslatorConfig,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            oversample: false,
            back_translate: false,
            pivot: Lang::De,
            drop_identical: false,
            translator: TranslatorConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrendsConfig {
    pub zero_fill: bool,
    /// Add a centered 7-day moving average of the S/A ratio to the long table.
    pub smooth: bool,
    /// Daily metric correlated with the external series: `S`, `A`, `O` or `sa_ratio`.
    pub metric: String,
    pub from: Option<NaiveDate>,
    pub to: Option<NaiveDate>,
}

impl Default for TrendsConfig {
    fn default() -> Self {
        TrendsConfig {
            zero_fill: false,
            smooth: false,
            metric: "A".into(),
            from: None,
            to: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub corpus: PathBuf,
    pub expert: PathBuf,
    pub adjudications: Option<PathBuf>,
    pub crowd: Option<PathBuf>,
    pub external_series: Option<PathBuf>,
    pub out_dir: PathBuf,
    /// Master seed; every other seed is derived from it and recorded.
    pub seed: u64,
    pub splits: SplitSizes,
    pub autolabel: AutoLabelConfig,
    /// Baseline variants trained per stage.
    pub pool_candidates: usize,
    pub ensemble_size: usize,
    pub hyperparams: Hyperparams,
    pub granularity: u8,
    pub lenient_ingest: bool,
    pub augment: AugmentConfig,
    pub trends: TrendsConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            corpus: PathBuf::from("corpus.jsonl"),
            expert: PathBuf::from("expert.csv"),
            adjudications: None,
            crowd: None,
            external_series: None,
            out_dir: PathBuf::from("run"),
            seed: 13,
            splits: SplitSizes::default(),
            autolabel: AutoLabelConfig::default(),
            pool_candidates: 15,
            ensemble_size: 15,
            hyperparams: Hyperparams::default(),
            granularity: 3,
            lenient_ingest: false,
            augment: AugmentConfig::default(),
            trends: TrendsConfig::default(),
        }
    }
}

impl RunConfig {
    /// Loads a config file, applies `key.path=value` overrides and resolves
    /// relative paths against the file's directory.
    pub fn load(path: &Path, data: &[u8], overrides: &[String]) -> Result<Self> {
        let mut value: Value =
            serde_json::from_slice(data).map_err(|e| usage(format!("{}: invalid JSON: {e}", path.display())))?;
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        let mut cfg: RunConfig =
            serde_json::from_value(value).map_err(|e| usage(format!("{}: invalid config: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.resolve(base);
        cfg.validate()?;
        Ok(cfg)
    }

    fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.corpus);
        fix(&mut self.expert);
        fix(&mut self.out_dir);
        for p in [&mut self.adjudications, &mut self.crowd, &mut self.external_series].into_iter().flatten() {
            fix(p);
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.autolabel.validate().map_err(|e| usage(e.to_string()))?;
        self.hyperparams.validate().map_err(|e| usage(e.to_string()))?;
        if self.pool_candidates < self.autolabel.n || self.pool_candidates < self.ensemble_size {
            return Err(usage(format!(
                "pool_candidates ({}) must cover autolabel.n ({}) and ensemble_size ({})",
                self.pool_candidates, self.autolabel.n, self.ensemble_size
            )));
        }
        if self.ensemble_size == 0 {
            return Err(usage("ensemble_size must be at least 1"));
        }
        if !matches!(self.granularity, 3 | 4) {
            return Err(usage("granularity must be 3 or 4"));
        }
        if !matches!(self.trends.metric.as_str(), "S" | "A" | "O" | "sa_ratio") {
            return Err(usage("trends.metric must be S, A, O or sa_ratio"));
        }
        let mut required = vec![&self.corpus, &self.expert];
        required.extend(self.adjudications.iter());
        required.extend(self.crowd.iter());
        required.extend(self.external_series.iter());
        for p in required {
            if !p.is_file() {
                return Err(usage(format!("config references a missing file: {}", p.display())));
            }
        }
        Ok(())
    }
}

/// Sets `a.b.c=value` in a JSON object tree. The value is parsed as JSON
/// when possible and taken as a string otherwise.
pub fn apply_override(root: &mut Value, assignment: &str) -> Result<()> {
    let Some((key, raw)) = assignment.split_once('=') else {
        return Err(usage(format!("override `{assignment}` is not key=value")));
    };
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(usage(format!("override key `{key}` is malformed")));
    }
    let mut node = root;
    for part in &parts[..parts.len() - 1] {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| usage(format!("override `{key}`: `{part}` is not inside an object")))?;
        node = obj.entry(part.to_string()).or_insert_with(|| Value::Object(Default::default()));
    }
    let obj = node
        .as_object_mut()
        .ok_or_else(|| usage(format!("override `{key}` does not address an object field")))?;
    obj.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn overrides_nested_and_typed() {
        let mut v = json!({"autolabel": {"k": 7}});
        apply_override(&mut v, "autolabel.k=5").unwrap();
        apply_override(&mut v, "splits.dev=40").unwrap();
        apply_override(&mut v, "trends.metric=sa_ratio").unwrap();
        assert_eq!(v, json!({"autolabel": {"k": 5}, "splits": {"dev": 40}, "trends": {"metric": "sa_ratio"}}));
        assert!(apply_override(&mut v, "novalue").is_err());
        assert!(apply_override(&mut v, "autolabel.k.x=1").is_err());
    }

    #[test]
    fn unknown_keys_rejected() {
        let r: Result<RunConfig, _> = serde_json::from_value(json!({"sede": 1}));
        assert!(r.is_err());
        let cfg: RunConfig = serde_json::from_value(json!({"autolabel": {"cap": 5}})).unwrap();
        assert_eq!(cfg.autolabel.k, 7);
        assert_eq!(cfg.autolabel.cap, 5);
        assert_eq!(cfg.splits, SplitSizes::default());
    }
}
