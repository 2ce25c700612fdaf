//! File plumbing shared by the subcommands: atomic writes, input discovery,
//! token-file parsing and the run manifest.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use remiforge_core::remi::{ids_from_text, to_ids, tokens_from_text, Vocabulary};
use remiforge_core::{encode, parse_midi, Score};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

/// Writes through a sibling temp file and a rename, so readers never see a
/// partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    let name = path.file_name().ok_or_else(|| CliError::usage(format!("{} is not a file path", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    let write = || -> std::io::Result<()> {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    };
    write().map_err(|e| {
        let _ = fs::remove_file(&tmp);
        CliError::at(path, e)
    })
}

/// Sends results to `out` when given, otherwise to standard output.
pub fn emit(out: Option<&Path>, bytes: &[u8]) -> Result<()> {
    match out {
        Some(p) => write_atomic(p, bytes),
        None => std::io::stdout().write_all(bytes).map_err(CliError::data),
    }
}

pub fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| CliError::at(path, e))
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| CliError::at(path, e))
}

pub fn to_json<T: Serialize>(value: &T) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(value).expect("report serializes");
    out.push(b'\n');
    out
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn is_midi(path: &Path) -> bool {
    matches!(
        path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref(),
        Some("mid" | "midi")
    )
}

/// MIDI files directly inside `dir`, sorted by name.
pub fn midi_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| CliError::at(dir, e))?;
    let mut out = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| CliError::at(dir, e))?.path();
        if path.is_file() && is_midi(&path) {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

pub fn load_score(path: &Path) -> Result<Score> {
    parse_midi(&read(path)?).map_err(|e| CliError::at(path, e))
}

/// Reads token ids from a MIDI file, a token text file or an id file. Text
/// whose lines are all integers is taken as ids.
pub fn load_ids(path: &Path, vocab: &Vocabulary) -> Result<Vec<u32>> {
    if is_midi(path) {
        let tokens = encode(&load_score(path)?).map_err(|e| CliError::at(path, e))?;
        return to_ids(&tokens, vocab).map_err(|e| CliError::at(path, e));
    }
    let text = read_text(path)?;
    if looks_like_ids(&text) {
        let ids = ids_from_text(&text).map_err(|e| CliError::at(path, e))?;
        for &id in &ids {
            vocab.token(id).map_err(|e| CliError::at(path, e))?;
        }
        Ok(ids)
    } else {
        let tokens = tokens_from_text(&text).map_err(|e| CliError::at(path, e))?;
        to_ids(&tokens, vocab).map_err(|e| CliError::at(path, e))
    }
}

pub fn looks_like_ids(text: &str) -> bool {
    let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty()).peekable();
    lines.peek().is_some() && lines.all(|l| l.bytes().all(|b| b.is_ascii_digit()))
}

/// Provenance record written next to the outputs when `--manifest` is given.
/// It carries the wall time, so it is the one output that differs between
/// otherwise identical runs.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub config_hash: String,
    pub seed: Option<u64>,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub wall_time_seconds: f64,
    pub tool_version: String,
}

/// What a subcommand reports back for the manifest.
#[derive(Debug, Default)]
pub struct RunRecord {
    /// Canonical description of the invocation; hashed into the manifest.
    pub config: String,
    pub seed: Option<u64>,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
}

pub fn write_manifest(path: &Path, subcommand: &str, record: RunRecord, started: Instant) -> Result<()> {
    let manifest = RunManifest {
        subcommand: subcommand.to_string(),
        config_hash: sha256_hex(record.config.as_bytes()),
        seed: record.seed,
        inputs: record.inputs,
        outputs: record.outputs,
        wall_time_seconds: started.elapsed().as_secs_f64(),
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
    };
    write_atomic(path, &to_json(&manifest))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn id_detection() {
        assert!(looks_like_ids("4\n11\n\n1\n"));
        assert!(!looks_like_ids("Composer_None\n"));
        assert!(!looks_like_ids("\n"));
    }

    #[test]
    fn atomic_write_replaces_and_leaves_no_temp() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("out.txt");
        write_atomic(&path, b"one").unwrap();
        write_atomic(&path, b"two").unwrap();
        assert_eq!(fs::read(&path).unwrap(), b"two");
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}
