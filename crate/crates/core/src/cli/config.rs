//! Flat `key=value` run configuration: loaded from an optional file,
//! overridden by flags, with every key accounted for. Section prefixes
//! (`pretrain.tau=0.03`) keep one file usable across commands.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use super::CliError;

#[derive(Debug, Default)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
    consumed: BTreeSet<String>,
}

impl RunConfig {
    /// Parses the config file when given; `None` yields an empty config.
    /// Lines are `key = value`; blank lines and `#` comments are skipped;
    /// duplicate keys are rejected so experiment records stay unambiguous.
    pub fn from_file(path: Option<&Path>) -> Result<Self, CliError> {
        let mut config = Self::default();
        let Some(path) = path else {
            return Ok(config);
        };
        let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
            path: path.display().to_string(),
            source,
        })?;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(CliError::Config(format!(
                    "{}:{}: expected key=value, got {line:?}",
                    path.display(),
                    i + 1
                )));
            };
            let key = key.trim().to_string();
            let value = value.trim().to_string();
            if key.is_empty() {
                return Err(CliError::Config(format!(
                    "{}:{}: empty key",
                    path.display(),
                    i + 1
                )));
            }
            if config.values.insert(key.clone(), value).is_some() {
                return Err(CliError::Config(format!(
                    "{}:{}: duplicate key {key:?}",
                    path.display(),
                    i + 1
                )));
            }
        }
        Ok(config)
    }

    /// Flag override: replaces any file-provided value.
    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.values.insert(key.to_string(), value.to_string());
    }

    /// Whether the user supplied this key (file or flag), independent
    /// of whether it has been read yet.
    pub fn provided(&self, key: &str) -> bool {
        self.values.contains_key(key)
    }

    /// Drops a provided key entirely (for warned-and-ignored keys):
    /// later reads see the default and the echoed config omits it.
    pub fn discard(&mut self, key: &str) {
        self.values.remove(key);
    }

    pub fn get_str(&mut self, key: &str) -> Option<String> {
        self.consumed.insert(key.to_string());
        self.values.get(key).cloned()
    }

    fn parse_with<T>(&mut self, key: &str, kind: &str) -> Result<Option<T>, CliError>
    where
        T: std::str::FromStr,
    {
        match self.get_str(key) {
            None => Ok(None),
            Some(raw) => raw.parse::<T>().map(Some).map_err(|_| {
                CliError::Config(format!("key {key:?}: expected {kind}, got {raw:?}"))
            }),
        }
    }

    pub fn get_f64(&mut self, key: &str) -> Result<Option<f64>, CliError> {
        self.parse_with(key, "a number")
    }

    pub fn get_usize(&mut self, key: &str) -> Result<Option<usize>, CliError> {
        self.parse_with(key, "a non-negative integer")
    }

    pub fn get_bool(&mut self, key: &str) -> Result<Option<bool>, CliError> {
        match self.get_str(key) {
            None => Ok(None),
            Some(raw) => match raw.as_str() {
                "true" => Ok(Some(true)),
                "false" => Ok(Some(false)),
                other => Err(CliError::Config(format!(
                    "key {key:?}: expected true or false, got {other:?}"
                ))),
            },
        }
    }

    pub fn f64_or(&mut self, key: &str, default: f64) -> Result<f64, CliError> {
        Ok(self.get_f64(key)?.unwrap_or(default))
    }

    pub fn usize_or(&mut self, key: &str, default: usize) -> Result<usize, CliError> {
        Ok(self.get_usize(key)?.unwrap_or(default))
    }

    pub fn bool_or(&mut self, key: &str, default: bool) -> Result<bool, CliError> {
        Ok(self.get_bool(key)?.unwrap_or(default))
    }

    /// Removes and returns every `prefix`-keyed entry (e.g. feature
    /// bounds under `bounds.`), marking them consumed.
    pub fn drain_prefix(&mut self, prefix: &str) -> Vec<(String, String)> {
        let keys: Vec<String> = self
            .values
            .keys()
            .filter(|k| k.starts_with(prefix))
            .cloned()
            .collect();
        keys.into_iter()
            .map(|k| {
                self.consumed.insert(k.clone());
                let v = self.values.get(&k).cloned().unwrap_or_default();
                (k, v)
            })
            .collect()
    }

    /// Errors if any provided key was never consumed: typos in config
    /// files fail loudly instead of silently running defaults.
    pub fn reject_unknown(&self) -> Result<(), CliError> {
        let unknown: Vec<&String> = self
            .values
            .keys()
            .filter(|k| !self.consumed.contains(*k))
            .collect();
        if unknown.is_empty() {
            Ok(())
        } else {
            let list = unknown
                .iter()
                .map(|k| format!("{k:?}"))
                .collect::<Vec<_>>()
                .join(", ");
            Err(CliError::Config(format!("unknown config keys: {list}")))
        }
    }

    /// The fully resolved key/value view, echoed into reports.
    pub fn echo(&self) -> &BTreeMap<String, String> {
        &self.values
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_config(text: &str) -> tempfile::NamedTempFile {
        use std::io::Write;
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(text.as_bytes()).unwrap();
        f
    }

    #[test]
    fn parses_trims_and_skips_comments() {
        let f = write_config("# run A\n\npretrain.tau = 0.03\nsynth.n_stays=100\n");
        let mut c = RunConfig::from_file(Some(f.path())).unwrap();
        assert_eq!(c.get_f64("pretrain.tau").unwrap(), Some(0.03));
        assert_eq!(c.get_usize("synth.n_stays").unwrap(), Some(100));
        c.reject_unknown().unwrap();
    }

    #[test]
    fn flags_override_file_values() {
        let f = write_config("pretrain.lr=0.01\n");
        let mut c = RunConfig::from_file(Some(f.path())).unwrap();
        c.set("pretrain.lr", 0.05);
        assert_eq!(c.get_f64("pretrain.lr").unwrap(), Some(0.05));
    }

    #[test]
    fn rejects_duplicates_malformed_lines_and_bad_values() {
        let dup = write_config("a=1\na=2\n");
        assert!(matches!(
            RunConfig::from_file(Some(dup.path())),
            Err(CliError::Config(_))
        ));
        let bare = write_config("just-a-word\n");
        assert!(matches!(
            RunConfig::from_file(Some(bare.path())),
            Err(CliError::Config(_))
        ));
        let f = write_config("pretrain.epochs=soon\n");
        let mut c = RunConfig::from_file(Some(f.path())).unwrap();
        assert!(c.get_usize("pretrain.epochs").is_err());
    }

    #[test]
    fn unconsumed_keys_are_reported() {
        let f = write_config("pretrain.tau=0.1\npretrain.tua=0.2\n");
        let mut c = RunConfig::from_file(Some(f.path())).unwrap();
        let _ = c.get_f64("pretrain.tau").unwrap();
        let err = c.reject_unknown().unwrap_err();
        assert!(err.to_string().contains("pretrain.tua"), "{err}");
    }

    #[test]
    fn drain_prefix_collects_and_consumes() {
        let f = write_config("bounds.hr=20,250\nbounds.temp=30,45\nother=1\n");
        let mut c = RunConfig::from_file(Some(f.path())).unwrap();
        let bounds = c.drain_prefix("bounds.");
        assert_eq!(bounds.len(), 2);
        assert_eq!(bounds[0], ("bounds.hr".to_string(), "20,250".to_string()));
        let _ = c.get_usize("other").unwrap();
        c.reject_unknown().unwrap();
    }

    #[test]
    fn missing_file_is_an_io_error() {
        let err = RunConfig::from_file(Some(Path::new("/nonexistent/run.conf"))).unwrap_err();
        assert!(matches!(err, CliError::Io { .. }));
        assert_eq!(err.exit_code(), 2);
    }
}
