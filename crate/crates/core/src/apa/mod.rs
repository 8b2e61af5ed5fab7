//! Approaching-phase augmentation.
//!
//! 1. Harvest approach prefixes `[0, b)` from a random pool of head-task
//!    demonstrations.
//! 2. Graft a tail task's target object into each prefix: the object keeps
//!    the source object's initial position, takes the tail object's
//!    rotation, and the action/proprio streams are copied verbatim. Frames
//!    are left as pending-render tokens for the render bridge.
//! 3. Rewrite original instructions into two-phase form and add a fixed
//!    number of grafted demonstrations per tail task.

mod instruction;

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use serde_json::json;

pub use instruction::{
    approach_phrase, format_instruction, is_two_phase, normalize, parse_instruction, rewrite_two_phase,
    ParseError, ParsedInstruction, TemplateKind, VERB_LEXICON,
};

use crate::dataio::DataError;
use crate::phaseseg::{PhaseSplit, SplitSet};
use crate::rng::{derive_seed, SplitMix64};
use crate::trajmodel::{
    trajectory_file, DatasetManifest, IndexEntry, SceneObject, Source, TaskGroup, TaskSpec, Trajectory,
    TrajectorySource,
};

/// Grafted demonstrations added per tail task unless configured otherwise.
pub const DEFAULT_PER_TASK: usize = 6;

pub const PENDING_PREFIX: &str = "pending:";

#[derive(Debug, thiserror::Error)]
pub enum ApaError {
    #[error("{what} {task_id}: need {requested}, only {available} available")]
    Capacity {
        what: &'static str,
        task_id: String,
        requested: usize,
        available: usize,
    },
    #[error("lookup failed: {0}")]
    Lookup(String),
    #[error("no phase split for trajectory {0}")]
    MissingSplit(String),
    #[error("manifest has no head/tail partition")]
    NoPartition,
    #[error("instruction for task {task_id}: {source}")]
    Parse {
        task_id: String,
        #[source]
        source: ParseError,
    },
    #[error(transparent)]
    Data(#[from] DataError),
}

impl ApaError {
    pub fn code(&self) -> &'static str {
        match self {
            ApaError::Capacity { .. } => "apa/capacity",
            ApaError::Lookup(_) => "apa/lookup",
            ApaError::MissingSplit(_) => "apa/missing-split",
            ApaError::NoPartition => "apa/no-partition",
            ApaError::Parse { .. } => "apa/parse",
            ApaError::Data(e) => e.code(),
        }
    }
}

/// Template slots for a task: the manifest override if present, otherwise
/// the parsed instruction (using the task's object hint).
pub fn task_parse(task: &TaskSpec) -> Result<ParsedInstruction, ApaError> {
    if let Some(p) = &task.parsed {
        return Ok(p.clone());
    }
    parse_instruction(&task.instruction, task.object_hint.as_deref())
        .map_err(|source| ApaError::Parse { task_id: task.task_id.clone(), source })
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadSegment {
    /// The source trajectory truncated to its approach phase.
    pub prefix: Trajectory,
    pub split: PhaseSplit,
}

/// Samples `pool_size` head-task demonstrations uniformly without
/// replacement (stream `derive_seed(seed, "apa/head-pool")` over head index
/// entries in manifest order) and truncates each to `[0, b)`.
pub fn collect_head_segments(
    manifest: &DatasetManifest,
    splits: &SplitSet,
    pool_size: usize,
    seed: u64,
    source: &dyn TrajectorySource,
) -> Result<Vec<HeadSegment>, ApaError> {
    if manifest.partition.is_none() {
        return Err(ApaError::NoPartition);
    }
    let head: Vec<&IndexEntry> = manifest
        .trajectory_index
        .iter()
        .filter(|e| e.source == Source::Demonstration && manifest.group_of(&e.task_id) == Some(TaskGroup::Head))
        .collect();
    if pool_size > head.len() {
        return Err(ApaError::Capacity {
            what: "head pool",
            task_id: "head".into(),
            requested: pool_size,
            available: head.len(),
        });
    }
    let mut rng = SplitMix64::new(derive_seed(seed, "apa/head-pool"));
    let mut chosen = rng.sample_indices(head.len(), pool_size);
    chosen.sort_unstable();

    use rayon::prelude::*;
    chosen
        .par_iter()
        .map(|&i| {
            let entry = head[i];
            let split = splits
                .get(&entry.traj_id)
                .cloned()
                .ok_or_else(|| ApaError::MissingSplit(entry.traj_id.clone()))?;
            let mut prefix = source.load(&entry.traj_id)?;
            prefix.steps.truncate(split.boundary);
            prefix.phase_boundary = None;
            Ok(HeadSegment { prefix, split })
        })
        .collect()
}

/// The object a tail task is about, taken from its first demonstration.
pub fn resolve_tail_object(
    manifest: &DatasetManifest,
    task_id: &str,
    source: &dyn TrajectorySource,
) -> Result<SceneObject, ApaError> {
    let entry = manifest
        .entries_for(task_id)
        .find(|e| e.source == Source::Demonstration)
        .ok_or_else(|| ApaError::Lookup(format!("task {task_id} has no demonstrations")))?;
    let traj = source.load(&entry.traj_id)?;
    traj.scene
        .target()
        .cloned()
        .ok_or_else(|| ApaError::Lookup(format!("target of {} not in its scene", traj.traj_id)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RenderStatus {
    Pending,
    Rendered,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraftRecord {
    pub graft_id: String,
    pub source_traj_id: String,
    pub tail_task_id: String,
    pub segment_end: usize,
    pub source_object_id: String,
    pub source_asset_label: String,
    pub grafted_object_id: String,
    pub grafted_asset_label: String,
    pub inherited_position: [f64; 3],
    pub target_rotation: [f64; 3],
    pub instruction: String,
    pub render_status: RenderStatus,
    #[serde(default)]
    pub obs_refs: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub job_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure_reason: Option<String>,
}

pub fn graft_id(tail_task_id: &str, source_traj_id: &str) -> String {
    format!("{tail_task_id}__{source_traj_id}")
}

pub fn pending_ref(graft_id: &str, t: usize) -> String {
    format!("{PENDING_PREFIX}{graft_id}/{t:04}")
}

/// Builds one augmented trajectory from a head approach prefix and a tail
/// object.
pub fn graft(
    segment: &HeadSegment,
    tail_task: &TaskSpec,
    tail_object: &SceneObject,
) -> Result<(GraftRecord, Trajectory), ApaError> {
    let src = &segment.prefix;
    let source_object = src
        .scene
        .target()
        .ok_or_else(|| ApaError::Lookup(format!("target of {} not in its scene", src.traj_id)))?
        .clone();
    let parsed = task_parse(tail_task)?;
    let instruction = format_instruction(&parsed, TemplateKind::Augmented);
    let id = graft_id(&tail_task.task_id, &src.traj_id);

    let clashes = src
        .scene
        .objects
        .iter()
        .any(|o| o.object_id != source_object.object_id && o.object_id == tail_object.object_id);
    let grafted_object_id =
        if clashes { format!("{}_grafted", tail_object.object_id) } else { tail_object.object_id.clone() };

    let mut scene = src.scene.clone();
    for obj in &mut scene.objects {
        if obj.object_id == source_object.object_id {
            *obj = SceneObject {
                object_id: grafted_object_id.clone(),
                asset_label: tail_object.asset_label.clone(),
                init_position: source_object.init_position,
                init_rotation: tail_object.init_rotation,
            };
        }
    }
    scene.target_object_id = grafted_object_id.clone();

    let steps = src
        .steps
        .iter()
        .map(|s| {
            let mut s = s.clone();
            s.obs_ref = pending_ref(&id, s.t);
            s
        })
        .collect();

    let traj = Trajectory {
        traj_id: id.clone(),
        task_id: tail_task.task_id.clone(),
        instruction: instruction.clone(),
        scene,
        steps,
        source: Source::Augmented,
        phase_boundary: None,
    };
    let record = GraftRecord {
        graft_id: id,
        source_traj_id: src.traj_id.clone(),
        tail_task_id: tail_task.task_id.clone(),
        segment_end: segment.split.boundary,
        source_object_id: source_object.object_id,
        source_asset_label: source_object.asset_label,
        grafted_object_id,
        grafted_asset_label: tail_object.asset_label.clone(),
        inherited_position: source_object.init_position,
        target_rotation: tail_object.init_rotation,
        instruction,
        render_status: RenderStatus::Pending,
        obs_refs: Vec::new(),
        job_id: None,
        failure_reason: None,
    };
    Ok((record, traj))
}

/// Every (tail task, pool segment) graft, ordered by tail task then pool
/// position.
pub fn candidate_grafts(
    manifest: &DatasetManifest,
    pool: &[HeadSegment],
    source: &dyn TrajectorySource,
) -> Result<Vec<(GraftRecord, Trajectory)>, ApaError> {
    if manifest.partition.is_none() {
        return Err(ApaError::NoPartition);
    }
    let mut out = Vec::new();
    for task in manifest.tasks_in(TaskGroup::Tail) {
        let object = resolve_tail_object(manifest, &task.task_id, source)?;
        use rayon::prelude::*;
        let grafts: Vec<_> = pool.par_iter().map(|seg| graft(seg, task, &object)).collect::<Result<_, _>>()?;
        out.extend(grafts);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Toggles {
    pub formatting: bool,
    pub augmentation: bool,
}

impl Default for Toggles {
    fn default() -> Self {
        Self { formatting: true, augmentation: true }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoTrainSet {
    pub manifest: DatasetManifest,
    /// Every indexed trajectory, in index order.
    pub trajectories: Vec<Trajectory>,
    /// Records for the grafts that were added.
    pub grafts: Vec<GraftRecord>,
}

/// Order-independent pseudo-random ranking key for a graft.
fn selection_key(graft_id: &str) -> u64 {
    derive_seed(0, graft_id)
}

/// Builds the co-training set from the long-tail originals and candidate
/// grafts. With formatting on, every original instruction (trajectory and
/// task) is rewritten to two-phase form; with augmentation on,
/// `per_task_count` grafts are added per tail task, chosen by a hash
/// ranking of graft ids.
pub fn assemble_cotrain(
    lt_manifest: &DatasetManifest,
    originals: &[Trajectory],
    grafts: &[(GraftRecord, Trajectory)],
    per_task_count: usize,
    toggles: Toggles,
) -> Result<CoTrainSet, ApaError> {
    if !toggles.formatting && !toggles.augmentation {
        return Ok(CoTrainSet { manifest: lt_manifest.clone(), trajectories: originals.to_vec(), grafts: Vec::new() });
    }

    let mut manifest = lt_manifest.clone();
    let mut trajectories = originals.to_vec();

    if toggles.formatting {
        let tasks: HashMap<&str, &TaskSpec> = lt_manifest.tasks.iter().map(|t| (t.task_id.as_str(), t)).collect();
        for traj in &mut trajectories {
            if traj.source != Source::Demonstration {
                continue;
            }
            let task = tasks
                .get(traj.task_id.as_str())
                .ok_or_else(|| ApaError::Lookup(format!("task {} not in manifest", traj.task_id)))?;
            let same = normalize(&traj.instruction) == normalize(&task.instruction);
            traj.instruction = rewrite_two_phase(
                &traj.instruction,
                task.object_hint.as_deref(),
                task.parsed.as_ref().filter(|_| same),
            )
            .map_err(|source| ApaError::Parse { task_id: task.task_id.clone(), source })?;
        }
        for task in &mut manifest.tasks {
            task.instruction = rewrite_two_phase(&task.instruction, task.object_hint.as_deref(), task.parsed.as_ref())
                .map_err(|source| ApaError::Parse { task_id: task.task_id.clone(), source })?;
        }
    }

    let mut added = Vec::new();
    if toggles.augmentation {
        if lt_manifest.partition.is_none() {
            return Err(ApaError::NoPartition);
        }
        let mut by_task: BTreeMap<&str, Vec<&(GraftRecord, Trajectory)>> = BTreeMap::new();
        for g in grafts {
            by_task.entry(g.0.tail_task_id.as_str()).or_default().push(g);
        }
        for task in lt_manifest.tasks_in(TaskGroup::Tail) {
            let mut cands = by_task.remove(task.task_id.as_str()).unwrap_or_default();
            if cands.len() < per_task_count {
                return Err(ApaError::Capacity {
                    what: "grafts for tail task",
                    task_id: task.task_id.clone(),
                    requested: per_task_count,
                    available: cands.len(),
                });
            }
            cands.sort_by(|a, b| {
                selection_key(&a.0.graft_id)
                    .cmp(&selection_key(&b.0.graft_id))
                    .then_with(|| a.0.graft_id.cmp(&b.0.graft_id))
            });
            cands.truncate(per_task_count);
            cands.sort_by(|a, b| a.0.graft_id.cmp(&b.0.graft_id));
            added.extend(cands.into_iter().cloned());
        }
    }

    for (record, traj) in &added {
        manifest.trajectory_index.push(IndexEntry {
            traj_id: record.graft_id.clone(),
            task_id: record.tail_task_id.clone(),
            file: trajectory_file(&record.graft_id),
            source: Source::Augmented,
        });
        trajectories.push(traj.clone());
    }
    manifest.recount();
    manifest.provenance.insert(
        "apa".into(),
        json!({
            "formatting": toggles.formatting,
            "augmentation": toggles.augmentation,
            "per_task_count": per_task_count,
            "grafts_added": added.len(),
        }),
    );
    manifest.provenance.insert("parent".into(), json!(lt_manifest.name));

    Ok(CoTrainSet { manifest, trajectories, grafts: added.into_iter().map(|(r, _)| r).collect() })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AugmentParams {
    pub pool_size: usize,
    pub per_task_count: usize,
    pub seed: u64,
    pub toggles: Toggles,
}

/// Steps 1 to 3 over a loaded long-tail dataset.
pub fn augment_dataset(
    manifest: &DatasetManifest,
    source: &dyn TrajectorySource,
    splits: &SplitSet,
    params: AugmentParams,
) -> Result<CoTrainSet, ApaError> {
    use rayon::prelude::*;
    let originals: Vec<Trajectory> = manifest
        .trajectory_index
        .par_iter()
        .map(|e| source.load(&e.traj_id))
        .collect::<Result<_, _>>()?;
    let candidates = if params.toggles.augmentation {
        let pool = collect_head_segments(manifest, splits, params.pool_size, params.seed, source)?;
        candidate_grafts(manifest, &pool, source)?
    } else {
        Vec::new()
    };
    assemble_cotrain(manifest, &originals, &candidates, params.per_task_count, params.toggles)
}
