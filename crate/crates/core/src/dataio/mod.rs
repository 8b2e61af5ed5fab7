//! On-disk formats for datasets, rollout logs and generic JSON artifacts.
//!
//! A dataset directory holds `manifest.json` (pretty JSON) and one
//! `trajectories/<traj_id>.jsonl` per index entry: a header record on the
//! first line, then one step per line. Floats are written as shortest
//! round-trip decimals and struct keys in declaration order, so saving is a
//! pure function of the input. Layouts are documented in `docs/formats.md`.

mod report;

use std::collections::{HashMap, HashSet};
use std::fs;
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::trajmodel::{
    trajectory_file, validate_manifest_structure, validate_trajectory, DatasetManifest, Scene,
    Source, Step, Trajectory, TrajectorySource, Violation,
};

pub use report::{export_report, Report, ReportFormat, CSV_RISK_COLUMNS, CSV_SUCCESS_COLUMNS};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const TRAJECTORY_FORMAT: &str = "tailgraft.trajectory/1";
const LOCK_FILE: &str = ".tailgraft.lock";

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("parse error in {path} at line {line}, column {column} (byte {offset}): {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        column: usize,
        offset: usize,
        message: String,
    },
    #[error("schema error in {path} at line {line}: {message}")]
    Schema {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("index error for trajectory {traj_id}: {reason}")]
    Index { traj_id: String, reason: String },
    #[error("missing file {path}")]
    MissingFile { path: PathBuf },
    #[error("duplicate rollout record (task_id={task_id}, seed={seed}, episode={episode})")]
    Duplicate {
        task_id: String,
        seed: u64,
        episode: u64,
    },
    #[error("unknown outcome {value:?} at line {line}")]
    UnknownOutcome { line: usize, value: String },
    #[error("invalid {what}: {}", summarize(.violations))]
    Invalid {
        what: String,
        violations: Vec<Violation>,
    },
    #[error("dataset directory {path} is locked by another writer")]
    Locked { path: PathBuf },
}

fn summarize(v: &[Violation]) -> String {
    let mut s: Vec<String> = v.iter().take(3).map(|x| x.to_string()).collect();
    if v.len() > 3 {
        s.push(format!("and {} more", v.len() - 3));
    }
    s.join("; ")
}

impl DataError {
    pub fn code(&self) -> &'static str {
        match self {
            DataError::Io { .. } => "dataio/io",
            DataError::Parse { .. } => "dataio/parse",
            DataError::Schema { .. } => "dataio/schema",
            DataError::Index { .. } | DataError::MissingFile { .. } => "dataio/index",
            DataError::Duplicate { .. } => "dataio/duplicate",
            DataError::UnknownOutcome { .. } => "dataio/enum",
            DataError::Invalid { .. } => "dataio/invalid",
            DataError::Locked { .. } => "dataio/locked",
        }
    }

    fn io(path: &Path, source: io::Error) -> Self {
        if source.kind() == io::ErrorKind::NotFound {
            DataError::MissingFile { path: path.to_path_buf() }
        } else {
            DataError::Io { path: path.to_path_buf(), source }
        }
    }

    /// Maps a serde_json error to a parse or schema error. `text` is the
    /// document (or line) that failed and `line_base` the number of lines
    /// preceding it in the file.
    fn json(path: &Path, text: &str, line_base: usize, err: serde_json::Error) -> Self {
        use serde_json::error::Category;
        let line = err.line().max(1);
        let column = err.column();
        match err.classify() {
            Category::Data => DataError::Schema {
                path: path.to_path_buf(),
                line: line_base + line,
                message: err.to_string(),
            },
            _ => {
                let before: usize = text.split_inclusive('\n').take(line - 1).map(str::len).sum();
                DataError::Parse {
                    path: path.to_path_buf(),
                    line: line_base + line,
                    column,
                    offset: before + column.saturating_sub(1),
                    message: err.to_string(),
                }
            }
        }
    }
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, DataError> {
    let text = fs::read_to_string(path).map_err(|e| DataError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| DataError::json(path, &text, 0, e))
}

/// Pretty JSON with a trailing newline, written through a temp file and
/// renamed into place.
pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<(), DataError> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable value");
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), DataError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| DataError::io(parent, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(|e| DataError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| DataError::io(path, e))
}

#[derive(Serialize, Deserialize)]
struct TrajectoryHeader {
    format: String,
    traj_id: String,
    task_id: String,
    instruction: String,
    scene: Scene,
    length: usize,
    source: Source,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    phase_boundary: Option<usize>,
}

pub fn encode_trajectory(traj: &Trajectory) -> String {
    let header = TrajectoryHeader {
        format: TRAJECTORY_FORMAT.to_string(),
        traj_id: traj.traj_id.clone(),
        task_id: traj.task_id.clone(),
        instruction: traj.instruction.clone(),
        scene: traj.scene.clone(),
        length: traj.steps.len(),
        source: traj.source,
        phase_boundary: traj.phase_boundary,
    };
    let mut out = serde_json::to_string(&header).expect("serializable header");
    out.push('\n');
    for step in &traj.steps {
        out.push_str(&serde_json::to_string(step).expect("serializable step"));
        out.push('\n');
    }
    out
}

pub fn decode_trajectory(path: &Path, text: &str) -> Result<Trajectory, DataError> {
    let mut lines = text.lines().enumerate();
    let (_, first) = lines.next().ok_or_else(|| DataError::Schema {
        path: path.to_path_buf(),
        line: 1,
        message: "empty trajectory file".into(),
    })?;
    let header: TrajectoryHeader =
        serde_json::from_str(first).map_err(|e| DataError::json(path, first, 0, e))?;
    if header.format != TRAJECTORY_FORMAT {
        return Err(DataError::Schema {
            path: path.to_path_buf(),
            line: 1,
            message: format!("unsupported format {:?}", header.format),
        });
    }
    let mut steps = Vec::with_capacity(header.length);
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let step: Step = serde_json::from_str(line).map_err(|e| DataError::json(path, line, i, e))?;
        steps.push(step);
    }
    if steps.len() != header.length {
        return Err(DataError::Schema {
            path: path.to_path_buf(),
            line: 1,
            message: format!("header length {} but {} steps", header.length, steps.len()),
        });
    }
    Ok(Trajectory {
        traj_id: header.traj_id,
        task_id: header.task_id,
        instruction: header.instruction,
        scene: header.scene,
        steps,
        source: header.source,
        phase_boundary: header.phase_boundary,
    })
}

pub fn read_trajectory(path: &Path) -> Result<Trajectory, DataError> {
    let text = fs::read_to_string(path).map_err(|e| DataError::io(path, e))?;
    decode_trajectory(path, &text)
}

/// A loaded dataset directory. Trajectories are read on demand.
#[derive(Debug, Clone)]
pub struct Dataset {
    root: PathBuf,
    pub manifest: DatasetManifest,
    files: HashMap<String, String>,
}

impl Dataset {
    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Loads every indexed trajectory, in index order.
    pub fn load_all(&self) -> Result<Vec<Trajectory>, DataError> {
        use rayon::prelude::*;
        self.manifest
            .trajectory_index
            .par_iter()
            .map(|e| self.load(&e.traj_id))
            .collect()
    }
}

impl TrajectorySource for Dataset {
    fn load(&self, traj_id: &str) -> Result<Trajectory, DataError> {
        let file = self.files.get(traj_id).ok_or_else(|| DataError::Index {
            traj_id: traj_id.to_string(),
            reason: "not in manifest index".into(),
        })?;
        let path = self.root.join(file);
        let traj = read_trajectory(&path).map_err(|e| match e {
            DataError::MissingFile { .. } => DataError::Index {
                traj_id: traj_id.to_string(),
                reason: format!("file {} is missing", path.display()),
            },
            other => other,
        })?;
        if traj.traj_id != traj_id {
            return Err(DataError::Index {
                traj_id: traj_id.to_string(),
                reason: format!("file holds trajectory {}", traj.traj_id),
            });
        }
        Ok(traj)
    }
}

/// Opens a dataset directory. The manifest is structurally validated and
/// every index entry's file must exist; trajectories themselves are loaded
/// lazily through the returned [`Dataset`].
pub fn load_dataset(root: &Path) -> Result<Dataset, DataError> {
    let manifest = load_manifest(root)?;
    let violations = validate_manifest_structure(&manifest);
    if !violations.is_empty() {
        return Err(DataError::Invalid { what: "manifest".into(), violations });
    }
    let mut files = HashMap::with_capacity(manifest.trajectory_index.len());
    for e in &manifest.trajectory_index {
        if e.file.starts_with('/') || e.file.split('/').any(|c| c == "..") {
            return Err(DataError::Index {
                traj_id: e.traj_id.clone(),
                reason: format!("file reference {:?} escapes the dataset root", e.file),
            });
        }
        if !root.join(&e.file).is_file() {
            return Err(DataError::Index {
                traj_id: e.traj_id.clone(),
                reason: format!("file {} is missing", e.file),
            });
        }
        files.insert(e.traj_id.clone(), e.file.clone());
    }
    Ok(Dataset { root: root.to_path_buf(), manifest, files })
}

pub fn load_manifest(root: &Path) -> Result<DatasetManifest, DataError> {
    read_json(&root.join(MANIFEST_FILE))
}

/// Exclusive writer lock on a dataset directory, released on drop.
pub struct DirLock {
    path: PathBuf,
}

impl DirLock {
    pub fn acquire(root: &Path) -> Result<Self, DataError> {
        fs::create_dir_all(root).map_err(|e| DataError::io(root, e))?;
        let path = root.join(LOCK_FILE);
        match fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(Self { path })
            }
            Err(e) if e.kind() == io::ErrorKind::AlreadyExists => {
                Err(DataError::Locked { path: root.to_path_buf() })
            }
            Err(e) => Err(DataError::io(&path, e)),
        }
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

/// Writes a dataset directory. Every trajectory is validated and matched
/// against the index before anything touches the disk. File references in
/// the written manifest are normalized to `trajectories/<traj_id>.jsonl`.
pub fn save_dataset<'a>(
    root: &Path,
    manifest: &DatasetManifest,
    trajectories: impl IntoIterator<Item = &'a Trajectory>,
) -> Result<PathBuf, DataError> {
    let trajectories: Vec<&Trajectory> = trajectories.into_iter().collect();

    let mut violations = validate_manifest_structure(manifest);
    let by_id: HashMap<&str, &Trajectory> =
        trajectories.iter().map(|t| (t.traj_id.as_str(), *t)).collect();
    let indexed: HashSet<&str> = manifest.trajectory_index.iter().map(|e| e.traj_id.as_str()).collect();
    for t in &trajectories {
        let mut v = validate_trajectory(t);
        for x in &mut v {
            x.traj_id = Some(t.traj_id.clone());
        }
        violations.extend(v);
        if !indexed.contains(t.traj_id.as_str()) {
            return Err(DataError::Index {
                traj_id: t.traj_id.clone(),
                reason: "trajectory supplied but not indexed".into(),
            });
        }
    }
    for e in &manifest.trajectory_index {
        let t = by_id.get(e.traj_id.as_str()).ok_or_else(|| DataError::Index {
            traj_id: e.traj_id.clone(),
            reason: "indexed but not supplied".into(),
        })?;
        if t.task_id != e.task_id || t.source != e.source {
            return Err(DataError::Index {
                traj_id: e.traj_id.clone(),
                reason: "task_id or source disagrees with the index".into(),
            });
        }
    }
    if !violations.is_empty() {
        return Err(DataError::Invalid { what: "dataset".into(), violations });
    }

    let mut manifest = manifest.clone();
    for e in &mut manifest.trajectory_index {
        e.file = trajectory_file(&e.traj_id);
    }

    let _lock = DirLock::acquire(root)?;
    let traj_dir = root.join("trajectories");
    fs::create_dir_all(&traj_dir).map_err(|e| DataError::io(&traj_dir, e))?;
    {
        use rayon::prelude::*;
        manifest
            .trajectory_index
            .par_iter()
            .map(|e| {
                let t = by_id[e.traj_id.as_str()];
                write_atomic(&root.join(&e.file), encode_trajectory(t).as_bytes())
            })
            .collect::<Result<(), _>>()?;
    }
    write_json(&root.join(MANIFEST_FILE), &manifest)?;
    Ok(root.to_path_buf())
}

/// Rewrites only `manifest.json`, under the directory lock.
pub fn save_manifest(root: &Path, manifest: &DatasetManifest) -> Result<(), DataError> {
    let violations = validate_manifest_structure(manifest);
    if !violations.is_empty() {
        return Err(DataError::Invalid { what: "manifest".into(), violations });
    }
    let _lock = DirLock::acquire(root)?;
    write_json(&root.join(MANIFEST_FILE), manifest)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    FailApproach,
    FailExecution,
    Success,
}

impl Outcome {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "fail_approach" => Some(Outcome::FailApproach),
            "fail_execution" => Some(Outcome::FailExecution),
            "success" => Some(Outcome::Success),
            _ => None,
        }
    }
}

/// One evaluation episode.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RolloutRecord {
    pub task_id: String,
    pub seed: u64,
    pub episode: u64,
    pub outcome: Outcome,
}

#[derive(Deserialize)]
struct RawRollout {
    task_id: String,
    seed: u64,
    episode: u64,
    outcome: String,
}

/// Reads a JSONL rollout log. Blank lines are skipped; records keep file
/// order and `(task_id, seed, episode)` must be unique.
pub fn load_rollout_log(path: &Path) -> Result<Vec<RolloutRecord>, DataError> {
    let file = fs::File::open(path).map_err(|e| DataError::io(path, e))?;
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| DataError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawRollout = serde_json::from_str(&line).map_err(|e| DataError::json(path, &line, i, e))?;
        let outcome = Outcome::parse(&raw.outcome)
            .ok_or_else(|| DataError::UnknownOutcome { line: i + 1, value: raw.outcome.clone() })?;
        if !seen.insert((raw.task_id.clone(), raw.seed, raw.episode)) {
            return Err(DataError::Duplicate { task_id: raw.task_id, seed: raw.seed, episode: raw.episode });
        }
        out.push(RolloutRecord { task_id: raw.task_id, seed: raw.seed, episode: raw.episode, outcome });
    }
    Ok(out)
}

pub fn write_rollout_log(path: &Path, records: &[RolloutRecord]) -> Result<(), DataError> {
    let mut text = String::new();
    for r in records {
        text.push_str(&serde_json::to_string(r).expect("serializable record"));
        text.push('\n');
    }
    write_atomic(path, text.as_bytes())
}
