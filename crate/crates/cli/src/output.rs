//! Report files: atomic writes and run manifests.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::CliError;

/// Writes `contents` to `dir/name` through a temporary file in the same
/// directory, so readers never see a partial report.
pub fn write_atomic(dir: &Path, name: &str, contents: &[u8]) -> Result<PathBuf, CliError> {
    let target = dir.join(name);
    let tmp = dir.join(format!(".{name}.tmp"));
    let fail =
        |e: std::io::Error| CliError::config(format!("cannot write {}: {e}", target.display()));
    let mut f = fs::File::create(&tmp).map_err(fail)?;
    f.write_all(contents).map_err(fail)?;
    f.sync_all().map_err(fail)?;
    drop(f);
    fs::rename(&tmp, &target).map_err(fail)?;
    Ok(target)
}

pub fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<PathBuf, CliError> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::config(format!("cannot serialize {name}: {e}")))?;
    text.push('\n');
    write_atomic(dir, name, text.as_bytes())
}

pub fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| {
        CliError::config(format!(
            "cannot create output directory {}: {e}",
            dir.display()
        ))
    })
}

#[derive(Serialize)]
struct Versions {
    rmss_core: &'static str,
    rmss_cli: &'static str,
}

#[derive(Serialize)]
struct Manifest<'a, C: Serialize> {
    command: &'a str,
    argv: Vec<String>,
    versions: Versions,
    seed: Option<u64>,
    config: &'a C,
    outputs: Vec<String>,
}

/// `<command>_manifest.json`: the parsed configuration, the command line,
/// crate versions and the seed.
pub fn write_manifest<C: Serialize>(
    dir: &Path,
    command: &str,
    seed: Option<u64>,
    config: &C,
    outputs: &[PathBuf],
) -> Result<(), CliError> {
    let manifest = Manifest {
        command,
        argv: std::env::args().collect(),
        versions: Versions {
            rmss_core: rmss_core::VERSION,
            rmss_cli: env!("CARGO_PKG_VERSION"),
        },
        seed,
        config,
        outputs: outputs
            .iter()
            .filter_map(|p| p.file_name().map(|n| n.to_string_lossy().into_owned()))
            .collect(),
    };
    write_json(dir, &format!("{command}_manifest.json"), &manifest).map(|_| ())
}
