//! Run configuration resolved from flags, a TOML file, the environment and
//! built-in defaults, in that order of precedence.

use std::path::{Path, PathBuf};

use harmony_core::harmonizer::FailurePolicy;
use harmony_vlm::AgentConfig;
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const ENV_WORKERS: &str = "HARMONIZER_WORKERS";
pub const ENV_POLICY: &str = "HARMONIZER_POLICY";
pub const ENV_LOG: &str = "HARMONIZER_LOG";
pub const ENV_SEED: &str = "HARMONIZER_SEED";
pub const ENV_VLM_ENDPOINT: &str = "HARMONIZER_VLM_ENDPOINT";
pub const ENV_VLM_MODEL: &str = "HARMONIZER_VLM_MODEL";

/// Contents of a `--config` TOML file. Every key is optional.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub workers: Option<usize>,
    pub policy: Option<String>,
    pub log_level: Option<String>,
    pub seed: Option<u64>,
    #[serde(default)]
    pub vlm: VlmSection,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VlmSection {
    pub endpoint: Option<String>,
    pub model: Option<String>,
    pub api_key_env: Option<String>,
    pub timeout_secs: Option<u64>,
    pub max_retries: Option<u32>,
    pub max_concurrency: Option<usize>,
    pub temperature: Option<f64>,
    pub backoff_base_ms: Option<u64>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
    }
}

/// Source of environment values; tests substitute a map.
pub trait Env {
    fn get(&self, key: &str) -> Option<String>;
}

pub struct ProcessEnv;

impl Env for ProcessEnv {
    fn get(&self, key: &str) -> Option<String> {
        std::env::var(key).ok().filter(|v| !v.is_empty())
    }
}

impl Env for std::collections::BTreeMap<String, String> {
    fn get(&self, key: &str) -> Option<String> {
        std::collections::BTreeMap::get(self, key).cloned()
    }
}

fn parse_env<T: std::str::FromStr>(env: &dyn Env, key: &str) -> Result<Option<T>, CliError> {
    env.get(key)
        .map(|v| {
            v.parse()
                .map_err(|_| CliError::Usage(format!("{key}={v:?} is not valid")))
        })
        .transpose()
}

/// Settings shared by the subcommands after precedence is applied.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Resolved {
    pub workers: usize,
    pub policy: String,
    pub log_level: String,
    pub seed: u64,
    pub vlm: AgentConfig,
}

/// Flag values that take part in precedence resolution.
#[derive(Debug, Clone, Default)]
pub struct FlagValues {
    pub workers: Option<usize>,
    pub policy: Option<String>,
    pub log_level: Option<String>,
    pub seed: Option<u64>,
    pub endpoint: Option<String>,
    pub model: Option<String>,
    pub max_retries: Option<u32>,
    pub max_concurrency: Option<usize>,
    pub timeout_secs: Option<u64>,
}

pub fn default_workers() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

pub fn resolve(flags: &FlagValues, file: &FileConfig, env: &dyn Env) -> Result<Resolved, CliError> {
    let workers = flags
        .workers
        .or(file.workers)
        .or(parse_env(env, ENV_WORKERS)?)
        .unwrap_or_else(default_workers);
    if workers == 0 {
        return Err(CliError::Usage("worker count must be at least 1".into()));
    }
    let policy = flags
        .policy
        .clone()
        .or_else(|| file.policy.clone())
        .or_else(|| env.get(ENV_POLICY))
        .unwrap_or_else(|| FailurePolicy::default().to_string());
    policy.parse::<FailurePolicy>().map_err(CliError::Usage)?;
    let log_level = flags
        .log_level
        .clone()
        .or_else(|| file.log_level.clone())
        .or_else(|| env.get(ENV_LOG))
        .unwrap_or_else(|| "warn".into());
    let seed = flags.seed.or(file.seed).or(parse_env(env, ENV_SEED)?).unwrap_or(0);

    let d = AgentConfig::default();
    let v = &file.vlm;
    let vlm = AgentConfig {
        endpoint: flags
            .endpoint
            .clone()
            .or_else(|| v.endpoint.clone())
            .or_else(|| env.get(ENV_VLM_ENDPOINT))
            .unwrap_or(d.endpoint),
        model: flags
            .model
            .clone()
            .or_else(|| v.model.clone())
            .or_else(|| env.get(ENV_VLM_MODEL))
            .unwrap_or(d.model),
        api_key_env: v.api_key_env.clone().unwrap_or(d.api_key_env),
        timeout_secs: flags.timeout_secs.or(v.timeout_secs).unwrap_or(d.timeout_secs),
        max_retries: flags.max_retries.or(v.max_retries).unwrap_or(d.max_retries),
        max_concurrency: flags.max_concurrency.or(v.max_concurrency).unwrap_or(d.max_concurrency),
        temperature: v.temperature.unwrap_or(d.temperature),
        backoff_base_ms: v.backoff_base_ms.unwrap_or(d.backoff_base_ms),
    };
    Ok(Resolved {
        workers,
        policy,
        log_level,
        seed,
        vlm,
    })
}

/// Loads the file named by `--config`, or an empty config.
pub fn load_file(path: Option<&PathBuf>) -> Result<FileConfig, CliError> {
    path.map(|p| FileConfig::load(p))
        .transpose()
        .map(Option::unwrap_or_default)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    fn env(pairs: &[(&str, &str)]) -> BTreeMap<String, String> {
        pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    #[test]
    fn precedence_flag_file_env_default() {
        let file: FileConfig =
            toml::from_str("workers = 3\npolicy = \"identity_page\"\n[vlm]\nmodel = \"file-model\"").unwrap();
        let e = env(&[
            (ENV_WORKERS, "5"),
            (ENV_POLICY, "fail_job"),
            (ENV_SEED, "9"),
            (ENV_VLM_MODEL, "env-model"),
        ]);

        let r = resolve(&FlagValues::default(), &FileConfig::default(), &BTreeMap::new()).unwrap();
        assert_eq!(r.policy, "retry_2_then_identity");
        assert_eq!(r.seed, 0);
        assert_eq!(r.vlm, AgentConfig::default());

        let r = resolve(&FlagValues::default(), &FileConfig::default(), &e).unwrap();
        assert_eq!((r.workers, r.policy.as_str(), r.seed), (5, "fail_job", 9));
        assert_eq!(r.vlm.model, "env-model");

        let r = resolve(&FlagValues::default(), &file, &e).unwrap();
        assert_eq!((r.workers, r.policy.as_str()), (3, "identity_page"));
        assert_eq!(r.vlm.model, "file-model");

        let flags = FlagValues {
            workers: Some(1),
            model: Some("flag-model".into()),
            ..FlagValues::default()
        };
        let r = resolve(&flags, &file, &e).unwrap();
        assert_eq!(r.workers, 1);
        assert_eq!(r.vlm.model, "flag-model");
    }

    #[test]
    fn invalid_values_are_usage_errors() {
        let bad = env(&[(ENV_WORKERS, "many")]);
        assert!(matches!(
            resolve(&FlagValues::default(), &FileConfig::default(), &bad),
            Err(CliError::Usage(_))
        ));
        let flags = FlagValues {
            policy: Some("sometimes".into()),
            ..FlagValues::default()
        };
        assert!(resolve(&flags, &FileConfig::default(), &BTreeMap::new()).is_err());
        let flags = FlagValues {
            workers: Some(0),
            ..FlagValues::default()
        };
        assert!(resolve(&flags, &FileConfig::default(), &BTreeMap::new()).is_err());
        assert!(toml::from_str::<FileConfig>("unknown = 1").is_err());
    }
}
