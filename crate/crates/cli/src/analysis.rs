use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use remiforge_core::metrics::{quality_report, QualityReport};
use remiforge_core::style::{
    extract_chords, frechet_distance, map_at_k, mine_progressions, ndcg_at_k, topn_overlap, EmbeddingSet, ProgressionTable,
    StyleError,
};
use serde::Serialize;
use serde_json::{json, Map, Value};

use crate::error::{CliError, Result};
use crate::io::{self, RunRecord};

fn file_name(path: &Path) -> String {
    path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
}

fn record(inputs: Vec<PathBuf>, out: Option<&Path>) -> RunRecord {
    RunRecord {
        inputs,
        outputs: out.map(Into::into).into_iter().collect(),
        ..Default::default()
    }
}

#[derive(Debug, Serialize)]
struct FileMetrics {
    file: String,
    #[serde(flatten)]
    report: QualityReport,
}

/// Files the metrics cannot be computed for (too short, no notes) are
/// reported on stderr and left out.
pub fn metrics(dir: &Path, out: Option<&Path>) -> Result<RunRecord> {
    let files = io::midi_files(dir)?;
    let mut rows = Vec::new();
    for path in &files {
        let score = io::load_score(path)?;
        match quality_report(&score) {
            Ok(report) => rows.push(FileMetrics {
                file: file_name(path),
                report,
            }),
            Err(e) => eprintln!("skipping {}: {e}", path.display()),
        }
    }
    if rows.is_empty() {
        return Err(CliError::at(dir, "no MIDI file yielded metrics"));
    }
    io::emit(out, &io::to_json(&rows))?;
    Ok(record(files, out))
}

#[derive(Debug, Serialize)]
struct BarChord {
    bar: usize,
    chord: Option<String>,
}

#[derive(Debug, Serialize)]
struct FileChords {
    file: String,
    bars: Vec<BarChord>,
}

pub fn chords(dir: &Path, out: Option<&Path>) -> Result<RunRecord> {
    let files = io::midi_files(dir)?;
    let mut rows = Vec::new();
    for path in &files {
        let score = io::load_score(path)?;
        let bars = extract_chords(&score)
            .into_iter()
            .map(|(bar, chord)| BarChord {
                bar,
                chord: chord.map(|c| c.to_string()),
            })
            .collect();
        rows.push(FileChords {
            file: file_name(path),
            bars,
        });
    }
    io::emit(out, &io::to_json(&rows))?;
    Ok(record(files, out))
}

/// Pools the progression counts of every file; files with fewer than four
/// recognized chords contribute nothing.
fn progression_table(files: &[PathBuf]) -> Result<ProgressionTable> {
    let mut table = ProgressionTable::default();
    for path in files {
        let chords: Vec<_> = extract_chords(&io::load_score(path)?).into_iter().map(|(_, c)| c).collect();
        match mine_progressions(&chords) {
            Ok(t) => table.merge(&t),
            Err(StyleError::TooFewChords { .. }) => {}
            Err(e) => return Err(CliError::at(path, e)),
        }
    }
    Ok(table)
}

/// Group name → files. Subdirectories form groups; a directory without any
/// is a single group named `all`.
fn groups(dir: &Path) -> Result<BTreeMap<String, Vec<PathBuf>>> {
    let entries = fs::read_dir(dir).map_err(|e| CliError::at(dir, e))?;
    let mut subdirs = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| CliError::at(dir, e))?.path();
        if path.is_dir() {
            subdirs.push(path);
        }
    }
    let mut out = BTreeMap::new();
    if subdirs.is_empty() {
        out.insert("all".to_string(), io::midi_files(dir)?);
    } else {
        for sub in subdirs {
            out.insert(file_name(&sub).to_lowercase(), io::midi_files(&sub)?);
        }
    }
    Ok(out)
}

pub fn progressions(real: &Path, model: &Path, topn: &[usize], k: usize, out: Option<&Path>) -> Result<RunRecord> {
    if topn.is_empty() || topn.contains(&0) || k == 0 {
        return Err(CliError::usage("--topn values and --k must be positive"));
    }
    let real_groups = groups(real)?;
    let model_groups = groups(model)?;
    let mut report = Map::new();
    let mut inputs = Vec::new();
    for (name, real_files) in &real_groups {
        let model_files = model_groups
            .get(name)
            .ok_or_else(|| CliError::at(model, format!("no `{name}` group to match the real data")))?;
        inputs.extend(real_files.iter().chain(model_files).cloned());
        let real_table = progression_table(real_files)?;
        let model_table = progression_table(model_files)?;
        let mut row = Map::new();
        let mut truncated = Vec::new();
        for &n in topn {
            let o = topn_overlap(&model_table, &real_table, n);
            row.insert(format!("overlap@{n}"), json!(o.value));
            if o.truncated {
                truncated.push(n);
            }
        }
        let relevant: HashSet<_> = real_table.top(k).into_iter().collect();
        let ranked = model_table.top(k);
        row.insert(format!("mAP@{k}"), json!(map_at_k(&ranked, &relevant, k)));
        row.insert(format!("NDCG@{k}"), json!(ndcg_at_k(&ranked, &relevant, k)));
        row.insert("truncated".into(), json!(truncated));
        row.insert("real_progressions".into(), json!(real_table.len()));
        row.insert("model_progressions".into(), json!(model_table.len()));
        let names = |t: &ProgressionTable| t.top(k).iter().map(|p| p.to_string()).collect::<Vec<_>>();
        row.insert("real_top".into(), json!(names(&real_table)));
        row.insert("model_top".into(), json!(names(&model_table)));
        report.insert(name.clone(), Value::Object(row));
    }
    for name in model_groups.keys().filter(|n| !real_groups.contains_key(*n)) {
        eprintln!("ignoring model group `{name}`: no real counterpart");
    }
    io::emit(out, &io::to_json(&report))?;
    Ok(record(inputs, out))
}

pub fn fad(a: &Path, b: &Path) -> Result<RunRecord> {
    let ea = EmbeddingSet::read(a).map_err(|e| CliError::at(a, e))?;
    let eb = EmbeddingSet::read(b).map_err(|e| CliError::at(b, e))?;
    // Round-off can push a zero distance slightly negative.
    let d = frechet_distance(&ea, &eb).map_err(CliError::data)?.max(0.0);
    println!("{d:.6}");
    Ok(record(vec![a.into(), b.into()], None))
}
