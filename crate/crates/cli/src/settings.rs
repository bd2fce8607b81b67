//! Effective configuration: defaults, then a flat `key = value` file, then
//! explicit flags.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use fspnet::training::parse_kv;

use crate::CliError;

pub const SEED_ENV: &str = "FSPNET_SEED";

#[derive(Clone, Debug, Default)]
pub struct Settings {
    values: BTreeMap<String, String>,
    allowed: Vec<&'static str>,
}

impl Settings {
    /// `defaults` names every key the subcommand accepts. `seed` defaults to
    /// `FSPNET_SEED` when set.
    pub fn new(defaults: &[(&'static str, String)]) -> Result<Self, CliError> {
        let mut values: BTreeMap<String, String> = defaults
            .iter()
            .map(|(k, v)| (k.to_string(), v.clone()))
            .collect();
        let takes_seed = defaults.iter().any(|(k, _)| *k == "seed");
        if let (true, Ok(env)) = (takes_seed, std::env::var(SEED_ENV)) {
            env.trim().parse::<u64>().map_err(|_| {
                CliError::Usage(format!("{SEED_ENV}={env} is not an unsigned integer"))
            })?;
            values.insert("seed".into(), env.trim().to_string());
        }
        Ok(Self {
            values,
            allowed: defaults.iter().map(|(k, _)| *k).collect(),
        })
    }

    pub fn apply_file(&mut self, path: Option<&Path>) -> Result<(), CliError> {
        let Some(path) = path else { return Ok(()) };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        let kv =
            parse_kv(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        for (k, v) in kv {
            self.set(&k, v)?;
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: String) -> Result<(), CliError> {
        if !self.allowed.contains(&key) {
            return Err(CliError::Usage(format!("unknown config key `{key}`")));
        }
        self.values.insert(key.to_string(), value);
        Ok(())
    }

    /// Overrides `key` when the flag was given.
    pub fn flag<T: Display>(&mut self, key: &str, value: Option<T>) -> Result<(), CliError> {
        match value {
            Some(v) => self.set(key, v.to_string()),
            None => Ok(()),
        }
    }

    pub fn raw(&self, key: &str) -> &str {
        self.values.get(key).map_or("", String::as_str)
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<T, CliError>
    where
        T::Err: Display,
    {
        let raw = self.raw(key);
        raw.parse()
            .map_err(|e| CliError::Usage(format!("config key `{key}` = `{raw}`: {e}")))
    }

    /// Empty values mean "not set".
    pub fn optional<T: FromStr>(&self, key: &str) -> Result<Option<T>, CliError>
    where
        T::Err: Display,
    {
        if self.raw(key).is_empty() {
            Ok(None)
        } else {
            self.get(key).map(Some)
        }
    }

    pub fn positive(&self, key: &str) -> Result<usize, CliError> {
        match self.get::<usize>(key)? {
            0 => Err(CliError::Usage(format!(
                "config key `{key}` must be positive"
            ))),
            v => Ok(v),
        }
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, &str)> {
        self.values.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    pub fn render(&self) -> String {
        self.entries()
            .filter(|(_, v)| !v.is_empty())
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    /// Echo into `outdir/config.txt`.
    pub fn echo(&self, outdir: &Path) -> Result<(), CliError> {
        std::fs::create_dir_all(outdir).map_err(|e| CliError::io(outdir, e))?;
        let path = outdir.join("config.txt");
        std::fs::write(&path, self.render()).map_err(|e| CliError::io(&path, e))
    }
}

pub fn d<T: Display>(v: T) -> String {
    v.to_string()
}

/// Rejects a path argument that names an existing directory where a file
/// is expected, before any work starts.
pub fn output_file(path: &Path) -> Result<PathBuf, CliError> {
    if path.is_dir() {
        return Err(CliError::Usage(format!(
            "{} is a directory",
            path.display()
        )));
    }
    Ok(path.to_path_buf())
}
