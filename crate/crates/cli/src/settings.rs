//! Option resolution: command-line flag, then `ICLQ_*` environment
//! variable, then a `key=value` config file, then the built-in default.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use clap::Args;
use iclq_core::aggregate::DEFAULT_MODE;
use iclq_core::metrics::DEFAULT_TAU;
use iclq_core::EntropyBase;

/// Error that maps to exit status 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

/// Flags shared by the analysis subcommands.
#[derive(Debug, Clone, Default, Args)]
pub struct Common {
    /// Logarithm base for entropies: nat or bit [env: ICLQ_BASE]
    #[arg(long)]
    pub base: Option<String>,
    /// Threshold on |ΔU| for the shift analysis [env: ICLQ_TAU]
    #[arg(long)]
    pub tau: Option<String>,
    /// Beam aggregation mode: mean or score_weighted [env: ICLQ_MODE]
    #[arg(long)]
    pub mode: Option<String>,
    #[command(flatten)]
    pub runtime: Runtime,
}

/// Flags every subcommand accepts.
#[derive(Debug, Clone, Default, Args)]
pub struct Runtime {
    /// Worker threads (default: one per core) [env: ICLQ_JOBS]
    #[arg(long)]
    pub jobs: Option<String>,
    /// key=value file read after flags and environment [env: ICLQ_CONFIG]
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    pub base: EntropyBase,
    pub tau: f64,
    pub mode: String,
    pub jobs: Option<usize>,
}

const KEYS: [&str; 4] = ["base", "tau", "mode", "jobs"];

pub fn parse_config(text: &str, origin: &Path) -> anyhow::Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| usage(format!("{}:{}: expected key=value", origin.display(), i + 1)))?;
        let k = k.trim();
        if !KEYS.contains(&k) {
            return Err(usage(format!(
                "{}:{}: unknown key {k:?} (expected one of {})",
                origin.display(),
                i + 1,
                KEYS.join(", ")
            )));
        }
        out.insert(k.to_string(), v.trim().to_string());
    }
    Ok(out)
}

struct Sources<'a> {
    flags: BTreeMap<&'static str, Option<String>>,
    env: &'a dyn Fn(&str) -> Option<String>,
    file: BTreeMap<String, String>,
}

impl Sources<'_> {
    fn get(&self, key: &'static str) -> Option<(String, String)> {
        if let Some(v) = self.flags.get(key).cloned().flatten() {
            return Some((v, format!("--{key}")));
        }
        let var = format!("ICLQ_{}", key.to_uppercase());
        if let Some(v) = (self.env)(&var) {
            return Some((v, var));
        }
        self.file.get(key).map(|v| (v.clone(), format!("config key {key}")))
    }
}

impl Settings {
    pub fn resolve(common: &Common, env: &dyn Fn(&str) -> Option<String>) -> anyhow::Result<Self> {
        let config = common.runtime.config.clone().or_else(|| env("ICLQ_CONFIG").map(PathBuf::from));
        let file = match &config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| usage(format!("cannot read config {}: {e}", path.display())))?;
                parse_config(&text, path)?
            }
            None => BTreeMap::new(),
        };
        let flags = BTreeMap::from([
            ("base", common.base.clone()),
            ("tau", common.tau.clone()),
            ("mode", common.mode.clone()),
            ("jobs", common.runtime.jobs.clone()),
        ]);
        let src = Sources { flags, env, file };

        let base = match src.get("base") {
            Some((v, from)) => v.parse().map_err(|_| usage(format!("{from}: expected nat or bit, got {v:?}")))?,
            None => EntropyBase::Nat,
        };
        let tau = match src.get("tau") {
            Some((v, from)) => match v.parse::<f64>() {
                Ok(t) if t.is_finite() && t >= 0.0 => t,
                _ => return Err(usage(format!("{from}: expected a nonnegative number, got {v:?}"))),
            },
            None => DEFAULT_TAU,
        };
        let mode = src.get("mode").map_or_else(|| DEFAULT_MODE.to_string(), |(v, _)| v);
        let jobs = match src.get("jobs") {
            Some((v, from)) => match v.parse::<usize>() {
                Ok(j) if j > 0 => Some(j),
                _ => return Err(usage(format!("{from}: expected a positive integer, got {v:?}"))),
            },
            None => None,
        };
        Ok(Self { base, tau, mode, jobs })
    }

    pub fn from_env(common: &Common) -> anyhow::Result<Self> {
        Self::resolve(common, &|k| std::env::var(k).ok())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn env_of(pairs: &'static [(&'static str, &'static str)]) -> impl Fn(&str) -> Option<String> {
        move |k| pairs.iter().find(|(n, _)| *n == k).map(|(_, v)| v.to_string())
    }

    #[test]
    fn defaults() {
        let s = Settings::resolve(&Common::default(), &env_of(&[])).unwrap();
        assert_eq!(s.base, EntropyBase::Nat);
        assert_eq!(s.tau, DEFAULT_TAU);
        assert_eq!(s.mode, "mean");
        assert_eq!(s.jobs, None);
    }

    #[test]
    fn flag_beats_env_beats_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("iclq.conf");
        std::fs::write(&path, "# comment\nbase = bit\ntau=0.2\njobs=3\n").unwrap();
        let common = Common {
            tau: Some("0.1".into()),
            runtime: Runtime {
                config: Some(path),
                ..Default::default()
            },
            ..Default::default()
        };
        let s = Settings::resolve(&common, &env_of(&[("ICLQ_JOBS", "2"), ("ICLQ_TAU", "0.3")])).unwrap();
        assert_eq!(s.tau, 0.1);
        assert_eq!(s.jobs, Some(2));
        assert_eq!(s.base, EntropyBase::Bit);
    }

    #[test]
    fn bad_values_are_usage_errors() {
        for env in [&[("ICLQ_BASE", "ten")][..], &[("ICLQ_JOBS", "0")], &[("ICLQ_TAU", "-1")]] {
            let pairs: &'static [(&str, &str)] = Box::leak(env.to_vec().into_boxed_slice());
            let err = Settings::resolve(&Common::default(), &env_of(pairs)).unwrap_err();
            assert!(err.downcast_ref::<UsageError>().is_some(), "{err}");
        }
    }

    #[test]
    fn config_rejects_unknown_keys() {
        assert!(parse_config("colour=red\n", Path::new("c")).is_err());
        assert!(parse_config("no equals sign\n", Path::new("c")).is_err());
    }
}
