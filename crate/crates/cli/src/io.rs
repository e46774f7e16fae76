//! File access, config loading, seed resolution and config snapshots.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{CliResult, Failure};
use crate::SEED_ENV;

pub fn read_text(path: &Path) -> CliResult<String> {
    std::fs::read_to_string(path).map_err(|e| Failure::input(path.display(), e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    serde_json::from_str(&read_text(path)?).map_err(|e| Failure::input(path.display(), e))
}

/// A path that names a file is read as hex text; anything else is taken as
/// literal hex.
pub fn bytecode_text(input: &str) -> CliResult<String> {
    let p = Path::new(input);
    if p.is_file() {
        Ok(read_text(p)?.trim().to_owned())
    } else {
        Ok(input.trim().to_owned())
    }
}

pub fn default_contract_id(input: &str) -> String {
    let p = Path::new(input);
    if p.is_file() {
        if let Some(stem) = p.file_stem().and_then(|s| s.to_str()) {
            return stem.to_owned();
        }
    }
    "contract".to_owned()
}

/// TOML unless the extension is `.json`; missing keys take defaults and
/// unknown keys are rejected by the config types.
pub fn load_config<C: DeserializeOwned + Default>(path: Option<&Path>) -> CliResult<C> {
    let Some(path) = path else { return Ok(C::default()) };
    let text = read_text(path)?;
    let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
    if is_json {
        serde_json::from_str(&text).map_err(|e| Failure::input(path.display(), e))
    } else {
        toml::from_str(&text).map_err(|e| Failure::input(path.display(), e))
    }
}

/// EXDOS_SEED, then `--seed`, then none.
pub fn resolve_seed(flag: Option<u64>) -> CliResult<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| Failure::Usage(format!("{SEED_ENV}={v:?} is not an unsigned integer"))),
        Err(std::env::VarError::NotPresent) => Ok(flag),
        Err(e) => Err(Failure::Usage(format!("{SEED_ENV}: {e}"))),
    }
}

pub struct Outputs {
    pub out_dir: Option<PathBuf>,
}

impl Outputs {
    pub fn resolve(&self, p: &Path) -> PathBuf {
        match &self.out_dir {
            Some(dir) if p.is_relative() => dir.join(p),
            _ => p.to_path_buf(),
        }
    }

    /// `--out` if given, else `default` when there is one.
    pub fn target(&self, out: Option<&Path>, default: Option<&str>) -> Option<PathBuf> {
        match (out, default) {
            (Some(p), _) => Some(self.resolve(p)),
            (None, Some(name)) => Some(self.dir().join(name)),
            (None, None) => None,
        }
    }

    pub fn dir(&self) -> PathBuf {
        self.out_dir.clone().unwrap_or_else(|| PathBuf::from("."))
    }

    pub fn write(&self, path: &Path, text: &str) -> CliResult<()> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(|e| Failure::input(parent.display(), e))?;
        }
        std::fs::write(path, text).map_err(|e| Failure::input(path.display(), e))?;
        log::info!("wrote {}", path.display());
        Ok(())
    }

    /// Writes to `path`, or to standard output when there is none.
    pub fn emit(&self, path: Option<&Path>, text: &str) -> CliResult<()> {
        match path {
            Some(p) => self.write(p, text),
            None => {
                print!("{text}");
                Ok(())
            }
        }
    }

    /// Resolved-config snapshot in the directory of the primary output, or in
    /// --out-dir when the output went to standard output.
    pub fn snapshot(&self, primary: Option<&Path>, subcommand: &str, value: &impl Serialize) -> CliResult<()> {
        let dir = match primary {
            Some(p) => p.parent().map(Path::to_path_buf).unwrap_or_default(),
            None => match &self.out_dir {
                Some(d) => d.clone(),
                None => {
                    log::debug!("output on stdout and no --out-dir; config snapshot skipped");
                    return Ok(());
                }
            },
        };
        let path = dir.join(format!("exdos-{subcommand}.resolved.json"));
        self.write(&path, &(serde_json::to_string_pretty(value)? + "\n"))
    }
}

/// `<dir>/<stem>.<suffix>` next to `path`.
pub fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("output");
    path.with_file_name(format!("{stem}.{suffix}"))
}

pub fn to_json_line(value: &impl Serialize) -> CliResult<String> {
    Ok(serde_json::to_string_pretty(value)? + "\n")
}
