//! Flat key-value run configuration shared by all subcommands.
//!
//! Files use TOML syntax without tables:
//!
//! ```toml
//! kind = "seq2seq"
//! splits = "data/splits"
//! hidden = 100
//! epochs = 300
//! ```
//!
//! Command-line overrides are merged key by key before deserialization, so a
//! flag and a file entry are validated the same way.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::baseline::{BaselineConfig, FeatureConfig};
use crate::corpus::SplitStrategy;
use crate::error::{Error, Result};
use crate::metrics::{default_inventory, AffixMatch};
use crate::parallel::Execution;
use crate::seq2seq::Seq2SeqConfig;

/// Environment variable naming the config file used when none is given.
pub const CONFIG_ENV: &str = "PARADIGM_CONFIG";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Baseline,
    #[default]
    Seq2seq,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Baseline => "baseline",
            ModelKind::Seq2seq => "seq2seq",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline" => Ok(ModelKind::Baseline),
            "seq2seq" => Ok(ModelKind::Seq2seq),
            _ => Err(Error::Config(format!("unknown model kind `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Raw triples for `split`.
    pub data: Option<PathBuf>,
    /// Directory holding `train.tsv`, `dev.tsv`, `test.tsv`.
    pub splits: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub kind: ModelKind,
    pub seed: u64,
    pub strategy: SplitStrategy,
    pub execution: Execution,

    pub embedding: usize,
    pub hidden: usize,
    pub attention: usize,
    pub readout: usize,
    pub batch_size: usize,
    pub beam: usize,
    pub rho: f64,
    pub eps: f64,
    pub clip: Option<f64>,
    pub init_scale: f64,
    pub max_extra_len: usize,

    /// Training epochs; unset means 300 for seq2seq and 10 for the baseline.
    pub epochs: Option<usize>,

    pub window: usize,
    pub history: usize,
    pub per_tag: bool,
    pub max_insertions: usize,

    /// Hypotheses written per input by `predict`.
    pub predict_k: usize,
    /// Cutoff for k-best accuracy in `evaluate`.
    pub k: usize,
    /// One suffix per line; the built-in inventory when unset.
    pub affixes: Option<PathBuf>,
    pub affix_match: AffixMatch,
}

impl Default for RunConfig {
    fn default() -> Self {
        let s = Seq2SeqConfig::default();
        let b = BaselineConfig::default();
        RunConfig {
            data: None,
            splits: None,
            model: None,
            output: None,
            kind: ModelKind::default(),
            seed: 1,
            strategy: SplitStrategy::default(),
            execution: Execution::default(),
            embedding: s.embedding,
            hidden: s.hidden,
            attention: s.attention,
            readout: s.readout,
            batch_size: s.batch_size,
            beam: s.beam,
            rho: s.rho,
            eps: s.eps,
            clip: s.clip,
            init_scale: s.init_scale,
            max_extra_len: s.max_extra_len,
            epochs: None,
            window: b.features.window,
            history: b.features.history,
            per_tag: b.per_tag,
            max_insertions: b.max_insertions,
            predict_k: 1,
            k: 10,
            affixes: None,
            affix_match: AffixMatch::default(),
        }
    }
}

fn parse_table(text: &str, origin: &str) -> Result<toml::Table> {
    text.parse::<toml::Table>()
        .map_err(|e| Error::Config(format!("{origin}: {}", e.message())))
}

/// Parses a `key=value` override. Values that are not valid TOML literals
/// are taken as bare strings, so `kind=baseline` and `splits=out/` work.
pub fn parse_override(item: &str) -> Result<(String, toml::Value)> {
    let (key, raw) = item
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("expected key=value, got `{item}`")))?;
    let key = key.trim().to_string();
    let raw = raw.trim();
    let value = match parse_table(&format!("v = {raw}"), "override") {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.to_string())),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    Ok((key, value))
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        Self::from_parts(text, "config", &[])
    }

    /// Parses `text`, applies `overrides` on top and validates the result.
    pub fn from_parts(text: &str, origin: &str, overrides: &[(String, toml::Value)]) -> Result<Self> {
        let mut table = parse_table(text, origin)?;
        if let Some((key, _)) = table.iter().find(|(_, v)| v.is_table()) {
            return Err(Error::Config(format!(
                "{origin}: `{key}` is a table; the format is flat"
            )));
        }
        for (key, value) in overrides {
            table.insert(key.clone(), value.clone());
        }
        let config: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(format!("{origin}: {}", e.message())))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>, overrides: &[(String, toml::Value)]) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        Self::from_parts(&text, &path.display().to_string(), overrides)
    }

    /// Loads `explicit`, else the file named by [`CONFIG_ENV`], else defaults.
    pub fn resolve(explicit: Option<&Path>, overrides: &[(String, toml::Value)]) -> Result<Self> {
        let from_env = std::env::var_os(CONFIG_ENV)
            .filter(|v| !v.is_empty())
            .map(PathBuf::from);
        match explicit.map(Path::to_path_buf).or(from_env) {
            Some(path) => Self::load(path, overrides),
            None => Self::from_parts("", "defaults", overrides),
        }
    }

    pub fn epochs(&self) -> usize {
        self.epochs.unwrap_or(match self.kind {
            ModelKind::Seq2seq => Seq2SeqConfig::default().epochs,
            ModelKind::Baseline => BaselineConfig::default().epochs,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let shared = [("epochs", self.epochs()), ("predict_k", self.predict_k), ("k", self.k)];
        if let Some((name, _)) = shared.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        match self.kind {
            ModelKind::Seq2seq => self.seq2seq().validate(),
            ModelKind::Baseline => {
                if self.window == 0 || self.history == 0 || self.max_insertions == 0 {
                    return Err(Error::Config(
                        "window, history and max_insertions must be positive".into(),
                    ));
                }
                Ok(())
            }
        }
    }

    pub fn seq2seq(&self) -> Seq2SeqConfig {
        Seq2SeqConfig {
            embedding: self.embedding,
            hidden: self.hidden,
            attention: self.attention,
            readout: self.readout,
            batch_size: self.batch_size,
            epochs: self.epochs(),
            beam: self.beam,
            rho: self.rho,
            eps: self.eps,
            clip: self.clip,
            init_scale: self.init_scale,
            seed: self.seed,
            max_extra_len: self.max_extra_len,
        }
    }

    pub fn baseline(&self) -> BaselineConfig {
        BaselineConfig {
            features: FeatureConfig {
                window: self.window,
                history: self.history,
            },
            epochs: self.epochs(),
            seed: self.seed,
            per_tag: self.per_tag,
            max_insertions: self.max_insertions,
        }
    }

    /// The affix inventory named by `affixes`, or the built-in one.
    pub fn inventory(&self) -> Result<Vec<String>> {
        match &self.affixes {
            None => Ok(default_inventory()),
            Some(path) => {
                let text = fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
                let list: Vec<String> = text
                    .lines()
                    .map(|l| l.trim().trim_start_matches('-'))
                    .filter(|l| !l.is_empty() && !l.starts_with('#'))
                    .map(str::to_string)
                    .collect();
                if list.is_empty() {
                    return Err(Error::malformed(path, 1, "empty affix inventory"));
                }
                Ok(list)
            }
        }
    }

    /// Hyperparameters of the selected model kind as `key=value` pairs.
    pub fn header(&self) -> String {
        match self.kind {
            ModelKind::Seq2seq => {
                let clip = self.clip.map_or_else(|| "none".to_string(), |c| c.to_string());
                format!(
                    "kind=seq2seq embedding={} hidden={} attention={} readout={} batch_size={} beam={} epochs={} \
                     rho={} eps={} clip={clip} init_scale={} seed={}",
                    self.embedding,
                    self.hidden,
                    self.attention,
                    self.readout,
                    self.batch_size,
                    self.beam,
                    self.epochs(),
                    self.rho,
                    self.eps,
                    self.init_scale,
                    self.seed
                )
            }
            ModelKind::Baseline => format!(
                "kind=baseline window={} history={} epochs={} per_tag={} max_insertions={} seed={}",
                self.window,
                self.history,
                self.epochs(),
                self.per_tag,
                self.max_insertions,
                self.seed
            ),
        }
    }
}
