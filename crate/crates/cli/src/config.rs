use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use umd2_core::dataset::{HarvestConfig, SyntheticSpec};
use umd2_core::pipeline::PretrainConfig;
use umd2_core::prop::PropEmbedConfig;
use umd2_core::source::SourceEmbedConfig;
use umd2_core::text::TextAeConfig;
use umd2_core::umd2::Umd2Config;
use umd2_core::user::DgiConfig;

use crate::UsageError;

pub const SEED_ENV: &str = "UMD2_SEED";

/// Every module configuration plus default paths and a global seed. Any
/// section may be omitted; unknown keys are rejected.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub paths: Paths,
    pub source: SourceEmbedConfig,
    pub text: TextAeConfig,
    pub prop: PropEmbedConfig,
    pub user: DgiConfig,
    pub umd2: Umd2Config,
    pub harvest: HarvestConfig,
    pub synth: SyntheticSpec,
}

/// Fallbacks for the path flags of the same names.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub records: Option<PathBuf>,
    pub profiles: Option<PathBuf>,
    pub credibility: Option<PathBuf>,
    pub lexicons: Option<PathBuf>,
    pub gold: Option<PathBuf>,
    pub dump: Option<PathBuf>,
    pub articles: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        let Some(path) = path else {
            return Ok(RunConfig::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| UsageError(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| UsageError(format!("config {}: {e}", path.display())).into())
    }

    /// Seed precedence: flag, then config, then `UMD2_SEED`. The winner is
    /// written into every module section.
    pub fn resolve_seed(&mut self, flag: Option<u64>) -> anyhow::Result<()> {
        let env = match std::env::var(SEED_ENV) {
            Ok(v) => Some(v.trim().parse::<u64>().map_err(|_| UsageError(format!("{SEED_ENV}=`{v}` is not a u64")))?),
            Err(_) => None,
        };
        self.seed = flag.or(self.seed).or(env);
        if let Some(seed) = self.seed {
            let p = self.pretrain().with_seed(seed);
            self.source = p.source;
            self.text = p.text;
            self.prop = p.prop;
            self.user = p.user;
            self.umd2.seed = seed;
            self.synth.seed = seed;
        }
        Ok(())
    }

    pub fn pretrain(&self) -> PretrainConfig {
        PretrainConfig {
            source: self.source.clone(),
            text: self.text.clone(),
            prop: self.prop.clone(),
            user: self.user.clone(),
        }
    }

    /// Logs the resolved configuration and writes it to `path`.
    pub fn record(&self, path: &Path) -> anyhow::Result<()> {
        let json = serde_json::to_string_pretty(self)?;
        log::info!("resolved config:\n{json}");
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(path, json)?;
        Ok(())
    }
}

/// Flag value, else the config path, else a usage error naming the flag.
pub fn pick(flag: &Option<PathBuf>, fallback: &mut Option<PathBuf>, name: &str) -> anyhow::Result<PathBuf> {
    if let Some(p) = flag {
        *fallback = Some(p.clone());
    }
    fallback.clone().ok_or_else(|| UsageError(format!("--{name} is required (or paths.{name} in the config)")).into())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(serde_json::from_str::<RunConfig>(r#"{"umd2": {"epochs": 3}}"#).is_ok());
        assert!(serde_json::from_str::<RunConfig>(r#"{"umd2": {"epoch": 3}}"#).is_err());
        assert!(serde_json::from_str::<RunConfig>(r#"{"extra": 1}"#).is_err());
    }

    #[test]
    fn flag_seed_reaches_every_module() {
        let mut c: RunConfig = serde_json::from_str(r#"{"seed": 4}"#).unwrap();
        c.resolve_seed(Some(9)).unwrap();
        assert_eq!(c.seed, Some(9));
        assert_eq!((c.source.seed, c.text.seed, c.prop.seed, c.user.seed), (9, 10, 11, 12));
        assert_eq!((c.umd2.seed, c.synth.seed), (9, 9));
    }

    #[test]
    fn flags_win_over_config_paths() {
        let mut slot = Some(PathBuf::from("from_config"));
        assert_eq!(pick(&None, &mut slot, "records").unwrap(), PathBuf::from("from_config"));
        assert_eq!(pick(&Some("flag".into()), &mut slot, "records").unwrap(), PathBuf::from("flag"));
        assert_eq!(slot, Some(PathBuf::from("flag")));
        assert!(pick(&None, &mut None, "records").is_err());
    }
}
