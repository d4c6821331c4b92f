//! Flat key=value config files for the generator and the trainer. Flags
//! override file keys, so these only fill in what the file mentions.

use std::collections::BTreeMap;
use std::path::Path;

use crate::corpus::LabelScheme;
use crate::error::{Result, SmanError};
use crate::graphs::DiffusionPattern;
use crate::model::{Ablation, MaskMode};
use crate::synth::GenConfig;
use crate::train::TrainConfig;

/// Parsed key=value file. Lines starting with `#` and blank lines are
/// ignored; keys must be unique.
#[derive(Debug, Clone, Default)]
pub struct ConfigFile {
    values: BTreeMap<String, String>,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<ConfigFile> {
        let mut values = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or(SmanError::Parse {
                line: i + 1,
                msg: format!("expected key = value, got {:?}", raw),
            })?;
            let key = k.trim().to_string();
            if key.is_empty() {
                return Err(SmanError::Parse {
                    line: i + 1,
                    msg: "empty key".into(),
                });
            }
            if values.insert(key.clone(), v.trim().to_string()).is_some() {
                return Err(SmanError::Parse {
                    line: i + 1,
                    msg: format!("duplicate key {:?}", key),
                });
            }
        }
        Ok(ConfigFile { values })
    }

    pub fn load(path: &Path) -> Result<ConfigFile> {
        ConfigFile::parse(&std::fs::read_to_string(path)?)
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(|s| s.as_str())
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.values.keys().map(|s| s.as_str())
    }

    fn parsed<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        match self.values.get(key) {
            None => Ok(None),
            Some(v) => v.parse().map(Some).map_err(|e| {
                SmanError::Config(format!("bad value for {}: {}", key, e))
            }),
        }
    }

    /// Overlay the file's generator keys onto `cfg`; unknown keys are
    /// rejected so typos fail loudly.
    pub fn apply_gen(&self, cfg: &mut GenConfig) -> Result<()> {
        const KNOWN: &[&str] = &[
            "publishers",
            "users",
            "news",
            "vocab",
            "unreliable_frac",
            "lowrep_frac",
            "p_signal",
            "token_signal",
            "k_max",
            "min_reposts",
            "scheme",
            "tokens_per_news",
            "time_spread",
        ];
        self.check_known(KNOWN)?;
        if let Some(v) = self.parsed("publishers")? {
            cfg.publishers = v;
        }
        if let Some(v) = self.parsed("users")? {
            cfg.users = v;
        }
        if let Some(v) = self.parsed("news")? {
            cfg.news = v;
        }
        if let Some(v) = self.parsed("vocab")? {
            cfg.vocab = v;
        }
        if let Some(v) = self.parsed("unreliable_frac")? {
            cfg.unreliable_frac = v;
        }
        if let Some(v) = self.parsed("lowrep_frac")? {
            cfg.lowrep_frac = v;
        }
        if let Some(v) = self.parsed("p_signal")? {
            cfg.p_signal = v;
        }
        if let Some(v) = self.parsed("token_signal")? {
            cfg.token_signal = v;
        }
        if let Some(v) = self.parsed("k_max")? {
            cfg.k_max = v;
        }
        if let Some(v) = self.parsed("min_reposts")? {
            cfg.min_reposts = v;
        }
        if let Some(s) = self.get("scheme") {
            cfg.scheme = LabelScheme::parse(s)
                .ok_or_else(|| SmanError::Config(format!("bad value for scheme: {:?}", s)))?;
        }
        if let Some(v) = self.parsed("tokens_per_news")? {
            cfg.tokens_per_news = v;
        }
        if let Some(v) = self.parsed("time_spread")? {
            cfg.time_spread = v;
        }
        Ok(())
    }

    /// Overlay the file's training keys onto `cfg`.
    pub fn apply_train(&self, cfg: &mut TrainConfig) -> Result<()> {
        const KNOWN: &[&str] = &[
            "d",
            "d_w",
            "heads",
            "k",
            "windows",
            "scheme",
            "mask_mode",
            "lambda",
            "pattern",
            "lr",
            "epochs",
            "batch_size",
            "seed",
            "ablation",
        ];
        self.check_known(KNOWN)?;
        if let Some(v) = self.parsed("d")? {
            cfg.model.d = v;
        }
        if let Some(v) = self.parsed("d_w")? {
            cfg.model.d_w = v;
        }
        if let Some(v) = self.parsed("heads")? {
            cfg.model.heads = v;
        }
        if let Some(v) = self.parsed("k")? {
            cfg.model.k = v;
        }
        if let Some(s) = self.get("windows") {
            cfg.model.windows = s
                .split(',')
                .map(|w| w.trim().parse::<usize>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| SmanError::Config(format!("bad value for windows: {}", e)))?;
        }
        if let Some(s) = self.get("scheme") {
            cfg.model.scheme = LabelScheme::parse(s)
                .ok_or_else(|| SmanError::Config(format!("bad value for scheme: {:?}", s)))?;
        }
        if let Some(s) = self.get("mask_mode") {
            cfg.model.mask_mode = MaskMode::parse(s)
                .ok_or_else(|| SmanError::Config(format!("bad value for mask_mode: {:?}", s)))?;
        }
        if let Some(v) = self.parsed("lambda")? {
            cfg.model.lambda = v;
        }
        if let Some(s) = self.get("pattern") {
            cfg.model.pattern = DiffusionPattern::parse(s)
                .ok_or_else(|| SmanError::Config(format!("bad value for pattern: {:?}", s)))?;
        }
        if let Some(v) = self.parsed("lr")? {
            cfg.lr = v;
        }
        if let Some(v) = self.parsed("epochs")? {
            cfg.epochs = v;
        }
        if let Some(v) = self.parsed("batch_size")? {
            cfg.batch_size = v;
        }
        if let Some(v) = self.parsed("seed")? {
            cfg.seed = v;
        }
        if let Some(s) = self.get("ablation") {
            cfg.ablation = Ablation::parse(s)
                .ok_or_else(|| SmanError::Config(format!("bad value for ablation: {:?}", s)))?;
        }
        Ok(())
    }

    fn check_known(&self, known: &[&str]) -> Result<()> {
        for key in self.keys() {
            if !known.contains(&key) {
                return Err(SmanError::Config(format!("unknown config key {:?}", key)));
            }
        }
        Ok(())
    }
}
