//! Run configuration: an optional TOML file overlaid by command-line flags.

use std::path::{Path, PathBuf};
use std::time::Duration;

use faultline::gateway::{BackendConfig, Gateway, MockRule, RemoteConfig, DEFAULT_API_KEY_ENV};
use faultline::reward::RewardConfig;
use serde::Deserialize;

use crate::error::{CliError, CliResult};
use crate::GlobalArgs;

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RemoteSection {
    pub base_url: String,
    pub api_key_env: String,
    pub model: String,
    pub timeout_secs: u64,
    pub max_retries: u32,
    pub backoff_ms: u64,
}

impl Default for RemoteSection {
    fn default() -> Self {
        RemoteSection {
            base_url: "https://api.openai.com".into(),
            api_key_env: DEFAULT_API_KEY_ENV.into(),
            model: "gpt-4o-mini".into(),
            timeout_secs: 60,
            max_retries: 3,
            backoff_ms: 1000,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Seeds {
    pub plans: u64,
    pub splits: u64,
    pub sim: u64,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// `mock:<rule>` or `remote`.
    pub backend: Option<String>,
    pub remote: RemoteSection,
    pub seeds: Seeds,
    pub reward: RewardConfig,
    pub parallel: usize,
    pub max_in_flight: usize,
    pub out: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            backend: None,
            remote: RemoteSection::default(),
            seeds: Seeds::default(),
            reward: RewardConfig::default(),
            parallel: 4,
            max_in_flight: 4,
            out: None,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("reading config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Usage(format!("parsing config {}: {e}", path.display())))
    }

    /// Loads `--config` if given, then applies flag overrides.
    pub fn resolve(args: &GlobalArgs) -> CliResult<Self> {
        let mut cfg = match &args.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if let Some(b) = &args.backend {
            cfg.backend = Some(b.clone());
        }
        if let Some(s) = args.seed_plans {
            cfg.seeds.plans = s;
        }
        if let Some(s) = args.seed_splits {
            cfg.seeds.splits = s;
        }
        if let Some(s) = args.seed_sim {
            cfg.seeds.sim = s;
        }
        if let Some(p) = args.parallel {
            cfg.parallel = p;
        }
        if let Some(o) = &args.out {
            cfg.out = Some(o.clone());
        }
        if cfg.parallel == 0 {
            return Err(CliError::Usage("--parallel must be at least 1".into()));
        }
        cfg.reward.validate()?;
        Ok(cfg)
    }

    pub fn out_dir(&self) -> CliResult<&Path> {
        self.out.as_deref().ok_or_else(|| CliError::Usage("--out is required".into()))
    }

    pub fn backend_config(&self) -> CliResult<Option<BackendConfig>> {
        let Some(spec) = self.backend.as_deref() else {
            return Ok(None);
        };
        if let Some(rule) = spec.strip_prefix("mock:") {
            let rule: MockRule = rule.parse()?;
            return Ok(Some(BackendConfig::Mock(rule)));
        }
        if spec == "remote" {
            let r = &self.remote;
            let mut remote = RemoteConfig::new(r.base_url.clone());
            remote.api_key_env = r.api_key_env.clone();
            remote.timeout = Duration::from_secs(r.timeout_secs);
            remote.max_retries = r.max_retries;
            remote.backoff_base = Duration::from_millis(r.backoff_ms);
            return Ok(Some(BackendConfig::Remote(remote)));
        }
        Err(CliError::Usage(format!("--backend must be mock:<rule> or remote, got {spec:?}")))
    }

    /// The configured gateway, if any. Remote backends fail fast when the
    /// credential variable is unset.
    pub fn gateway(&self) -> CliResult<Option<Gateway>> {
        let Some(cfg) = self.backend_config()? else {
            return Ok(None);
        };
        if let BackendConfig::Remote(remote) = &cfg {
            if std::env::var(&remote.api_key_env).map(|v| v.trim().is_empty()).unwrap_or(true) {
                return Err(CliError::Backend(format!("environment variable {} is not set", remote.api_key_env)));
            }
        }
        Ok(Some(
            Gateway::new(cfg)?
                .with_model(self.remote.model.clone())
                .with_max_in_flight(self.max_in_flight)
                .with_seed(self.seeds.sim),
        ))
    }

    pub fn require_gateway(&self) -> CliResult<Gateway> {
        self.gateway()?
            .ok_or_else(|| CliError::Usage("this command needs --backend mock:<rule> or --backend remote".into()))
    }
}
