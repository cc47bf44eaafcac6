use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use serde_json::Value;

use crate::Failure;

/// Run record written next to every output. The only file carrying a
/// timestamp; payloads stay byte-identical across reruns.
#[derive(Debug, Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'a str,
    argv: &'a [String],
    config: &'a Value,
    seed: Option<u64>,
    threads: usize,
    outputs: Vec<String>,
    created_unix_seconds: u64,
}

/// `dir/manifest.json` for directory outputs, `name.manifest.json` next to
/// a file output.
pub fn path_for(out: &Path, is_dir: bool) -> PathBuf {
    if is_dir {
        out.join("manifest.json")
    } else {
        out.with_extension("manifest.json")
    }
}

pub fn write(
    path: &Path,
    command: &str,
    argv: &[String],
    config: &Value,
    seed: Option<u64>,
    outputs: &[PathBuf],
) -> Result<(), Failure> {
    let created = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    let m = Manifest {
        tool: "corrcv",
        version: env!("CARGO_PKG_VERSION"),
        command,
        argv: argv.get(1..).unwrap_or(&[]),
        config,
        seed,
        threads: rayon::current_num_threads(),
        outputs: outputs.iter().map(|p| p.display().to_string()).collect(),
        created_unix_seconds: created,
    };
    corrcv::io::write_json(path, &m).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))
}
