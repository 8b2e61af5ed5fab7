//! Core domain types shared by every pipeline stage, plus structural
//! validation.
//!
//! Conventions:
//! - positions in meters, angles in radians;
//! - `drot` is an intrinsic XYZ (roll, pitch, yaw) Euler triple;
//! - gripper values are continuous in `[0, 1]`, 1 = fully open, and a value
//!   `<= 0.5` counts as closed;
//! - visual observations are held by reference (`obs_ref`), never decoded.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::f64::consts::PI;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::apa::ParsedInstruction;

pub type Vec3 = [f64; 3];

/// Gripper commands at or below this value count as closed.
pub const GRIPPER_CLOSED_AT: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionStep {
    pub dpos: Vec3,
    pub drot: Vec3,
    pub gripper: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProprioState {
    pub gripper_openness: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ee_position: Option<Vec3>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub joint_angles: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub t: usize,
    pub proprio: ProprioState,
    pub action: ActionStep,
    pub obs_ref: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub object_id: String,
    pub asset_label: String,
    pub init_position: Vec3,
    pub init_rotation: Vec3,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub objects: Vec<SceneObject>,
    pub target_object_id: String,
}

impl Scene {
    pub fn object(&self, object_id: &str) -> Option<&SceneObject> {
        self.objects.iter().find(|o| o.object_id == object_id)
    }

    pub fn target(&self) -> Option<&SceneObject> {
        self.object(&self.target_object_id)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    #[default]
    Demonstration,
    Augmented,
}

/// One demonstration. The trajectory length `T` is `steps.len()`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub traj_id: String,
    pub task_id: String,
    pub instruction: String,
    pub scene: Scene,
    pub steps: Vec<Step>,
    pub source: Source,
    pub phase_boundary: Option<usize>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub task_id: String,
    pub instruction: String,
    /// Full object description when it carries a locative qualifier the
    /// instruction parser would otherwise strip ("the black bowl next to the
    /// plate").
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub object_hint: Option<String>,
    /// Manifest-level override of the parsed instruction.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parsed: Option<ParsedInstruction>,
    pub demo_count: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub traj_id: String,
    pub task_id: String,
    pub file: String,
    #[serde(default)]
    pub source: Source,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskGroup {
    Head,
    Tail,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub name: String,
    pub tasks: Vec<TaskSpec>,
    pub trajectory_index: Vec<IndexEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub partition: Option<BTreeMap<String, TaskGroup>>,
    #[serde(default)]
    pub provenance: BTreeMap<String, serde_json::Value>,
}

impl DatasetManifest {
    pub fn empty(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            tasks: Vec::new(),
            trajectory_index: Vec::new(),
            partition: None,
            provenance: BTreeMap::new(),
        }
    }

    pub fn task(&self, task_id: &str) -> Option<&TaskSpec> {
        self.tasks.iter().find(|t| t.task_id == task_id)
    }

    /// 1-based position of a task in the manifest's task order.
    pub fn task_rank(&self, task_id: &str) -> Option<usize> {
        self.tasks.iter().position(|t| t.task_id == task_id).map(|i| i + 1)
    }

    pub fn entries_for<'a>(&'a self, task_id: &'a str) -> impl Iterator<Item = &'a IndexEntry> + 'a {
        self.trajectory_index.iter().filter(move |e| e.task_id == task_id)
    }

    pub fn group_of(&self, task_id: &str) -> Option<TaskGroup> {
        self.partition.as_ref()?.get(task_id).copied()
    }

    /// Task ids labeled `group`, in manifest task order.
    pub fn tasks_in(&self, group: TaskGroup) -> Vec<&TaskSpec> {
        self.tasks
            .iter()
            .filter(|t| self.group_of(&t.task_id) == Some(group))
            .collect()
    }

    /// Recomputes every `demo_count` from the trajectory index.
    pub fn recount(&mut self) {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for e in &self.trajectory_index {
            *counts.entry(e.task_id.as_str()).or_default() += 1;
        }
        for t in &mut self.tasks {
            t.demo_count = counts.get(t.task_id.as_str()).copied().unwrap_or(0);
        }
    }
}

/// Relative path of a trajectory file inside a dataset directory.
pub fn trajectory_file(traj_id: &str) -> String {
    format!("trajectories/{traj_id}.jsonl")
}

/// Identifiers double as file names, so they are restricted to
/// `[A-Za-z0-9_.-]` and may not start with a dot.
pub fn is_safe_id(id: &str) -> bool {
    !id.is_empty()
        && !id.starts_with('.')
        && id.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.'))
}

/// A single broken rule, located by trajectory, step and field.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub traj_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step: Option<usize>,
    pub field: String,
    pub rule: String,
}

impl Violation {
    fn new(field: impl Into<String>, rule: impl Into<String>) -> Self {
        Self {
            traj_id: None,
            step: None,
            field: field.into(),
            rule: rule.into(),
        }
    }

    fn at(mut self, step: usize) -> Self {
        self.step = Some(step);
        self
    }

    fn in_traj(mut self, traj_id: &str) -> Self {
        self.traj_id = Some(traj_id.to_string());
        self
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(id) = &self.traj_id {
            write!(f, "{id}: ")?;
        }
        if let Some(step) = self.step {
            write!(f, "step {step}: ")?;
        }
        write!(f, "{} violates {}", self.field, self.rule)
    }
}

fn check_finite(out: &mut Vec<Violation>, step: usize, field: &str, values: &[f64]) {
    if values.iter().any(|v| !v.is_finite()) {
        out.push(Violation::new(field, "finite").at(step));
    }
}

fn check_unit(out: &mut Vec<Violation>, step: usize, field: &str, value: f64) {
    if value.is_finite() && !(0.0..=1.0).contains(&value) {
        out.push(Violation::new(field, "∈ [0,1]").at(step));
    }
}

/// Checks every Trajectory/Step/ActionStep invariant. An empty list means
/// the trajectory is well formed.
pub fn validate_trajectory(traj: &Trajectory) -> Vec<Violation> {
    let mut out = Vec::new();

    if !is_safe_id(&traj.traj_id) {
        out.push(Violation::new("traj_id", "non-empty [A-Za-z0-9_.-]"));
    }
    if traj.task_id.is_empty() {
        out.push(Violation::new("task_id", "non-empty"));
    }
    if traj.steps.is_empty() {
        out.push(Violation::new("steps", "T ≥ 1"));
    }

    let mut seen = HashSet::new();
    for obj in &traj.scene.objects {
        if !seen.insert(obj.object_id.as_str()) {
            out.push(Violation::new(
                format!("scene.objects[{}]", obj.object_id),
                "object_id unique within scene",
            ));
        }
        if obj.init_position.iter().chain(&obj.init_rotation).any(|v| !v.is_finite()) {
            out.push(Violation::new(format!("scene.objects[{}]", obj.object_id), "finite"));
        }
    }
    if traj.scene.target().is_none() {
        out.push(Violation::new("scene.target_object_id", "refers to a scene object"));
    }

    let mut expected = 0usize;
    for (i, step) in traj.steps.iter().enumerate() {
        if step.t > expected {
            let gap = if step.t - expected == 1 {
                format!("gap at t={expected}")
            } else {
                format!("gap at t={}..{}", expected, step.t - 1)
            };
            out.push(Violation::new("t", gap).at(i));
            expected = step.t + 1;
        } else if step.t < expected {
            out.push(Violation::new("t", "strictly increasing").at(i));
        } else {
            expected += 1;
        }

        let t = step.t;
        let a = &step.action;
        check_finite(&mut out, t, "action.dpos", &a.dpos);
        check_finite(&mut out, t, "action.drot", &a.drot);
        check_finite(&mut out, t, "action.gripper", &[a.gripper]);
        check_unit(&mut out, t, "action.gripper", a.gripper);
        if a.drot.iter().any(|v| v.is_finite() && !(-PI..=PI).contains(v)) {
            out.push(Violation::new("action.drot", "∈ [−π, π]").at(t));
        }

        let p = &step.proprio;
        check_finite(&mut out, t, "proprio.gripper_openness", &[p.gripper_openness]);
        check_unit(&mut out, t, "proprio.gripper_openness", p.gripper_openness);
        if let Some(ee) = &p.ee_position {
            check_finite(&mut out, t, "proprio.ee_position", ee);
        }
        if let Some(q) = &p.joint_angles {
            check_finite(&mut out, t, "proprio.joint_angles", q);
        }
    }

    if let Some(b) = traj.phase_boundary {
        if b == 0 || b >= traj.len() {
            out.push(Violation::new("phase_boundary", "0 < b < T"));
        }
    }
    out
}

/// Lazy access to the trajectories a manifest indexes.
pub trait TrajectorySource: Sync {
    fn load(&self, traj_id: &str) -> Result<Trajectory, crate::dataio::DataError>;
}

impl TrajectorySource for HashMap<String, Trajectory> {
    fn load(&self, traj_id: &str) -> Result<Trajectory, crate::dataio::DataError> {
        self.get(traj_id)
            .cloned()
            .ok_or_else(|| crate::dataio::DataError::Index {
                traj_id: traj_id.to_string(),
                reason: "not present in memory".into(),
            })
    }
}

/// Checks manifest-level invariants, then loads and validates every indexed
/// trajectory. Load failures are returned as errors, rule breaks as
/// violations.
pub fn validate_manifest(
    manifest: &DatasetManifest,
    trajectories: &dyn TrajectorySource,
) -> Result<Vec<Violation>, crate::dataio::DataError> {
    let mut out = validate_manifest_structure(manifest);

    use rayon::prelude::*;
    let per_traj: Vec<Result<Vec<Violation>, _>> = manifest
        .trajectory_index
        .par_iter()
        .map(|entry| {
            let traj = trajectories.load(&entry.traj_id)?;
            let mut v: Vec<Violation> = validate_trajectory(&traj)
                .into_iter()
                .map(|x| x.in_traj(&entry.traj_id))
                .collect();
            if traj.traj_id != entry.traj_id {
                v.push(Violation::new("traj_id", "matches index entry").in_traj(&entry.traj_id));
            }
            if traj.task_id != entry.task_id {
                v.push(Violation::new("task_id", "matches index entry").in_traj(&entry.traj_id));
            }
            if traj.source != entry.source {
                v.push(Violation::new("source", "matches index entry").in_traj(&entry.traj_id));
            }
            Ok(v)
        })
        .collect();
    for r in per_traj {
        out.extend(r?);
    }
    Ok(out)
}

/// The manifest checks that need no trajectory access.
pub fn validate_manifest_structure(manifest: &DatasetManifest) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut task_ids = HashSet::new();
    for t in &manifest.tasks {
        if !task_ids.insert(t.task_id.as_str()) {
            out.push(Violation::new(format!("tasks[{}]", t.task_id), "task_id unique"));
        }
    }

    let mut counts: HashMap<&str, usize> = HashMap::new();
    let mut traj_ids = HashSet::new();
    for e in &manifest.trajectory_index {
        if !task_ids.contains(e.task_id.as_str()) {
            out.push(
                Violation::new("trajectory_index.task_id", format!("unknown task {}", e.task_id))
                    .in_traj(&e.traj_id),
            );
        }
        if !traj_ids.insert(e.traj_id.as_str()) {
            out.push(Violation::new("trajectory_index.traj_id", "unique").in_traj(&e.traj_id));
        }
        if !is_safe_id(&e.traj_id) {
            out.push(Violation::new("trajectory_index.traj_id", "[A-Za-z0-9_.-]").in_traj(&e.traj_id));
        }
        *counts.entry(e.task_id.as_str()).or_default() += 1;
    }

    for t in &manifest.tasks {
        let indexed = counts.get(t.task_id.as_str()).copied().unwrap_or(0);
        if t.demo_count != indexed {
            out.push(Violation::new(
                format!("tasks[{}].demo_count", t.task_id),
                format!("count mismatch: declared {} but {} indexed", t.demo_count, indexed),
            ));
        }
    }

    if let Some(partition) = &manifest.partition {
        for t in &manifest.tasks {
            if !partition.contains_key(&t.task_id) {
                out.push(Violation::new(
                    format!("partition[{}]", t.task_id),
                    "partition covers every task",
                ));
            }
        }
        for key in partition.keys() {
            if !task_ids.contains(key.as_str()) {
                out.push(Violation::new(format!("partition[{key}]"), format!("unknown task {key}")));
            }
        }
    }
    out
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;

    pub fn step(t: usize, gripper: f64) -> Step {
        Step {
            t,
            proprio: ProprioState {
                gripper_openness: gripper,
                ee_position: Some([0.0, 0.0, 0.1 * t as f64]),
                joint_angles: None,
            },
            action: ActionStep {
                dpos: [0.0, 0.0, 0.1],
                drot: [0.0, 0.0, 0.0],
                gripper,
            },
            obs_ref: format!("frames/{t:04}.png"),
        }
    }

    pub fn trajectory(traj_id: &str, task_id: &str, grippers: &[f64]) -> Trajectory {
        Trajectory {
            traj_id: traj_id.into(),
            task_id: task_id.into(),
            instruction: "Pick up the ketchup and place it in the basket".into(),
            scene: Scene {
                objects: vec![SceneObject {
                    object_id: "ketchup_1".into(),
                    asset_label: "ketchup".into(),
                    init_position: [0.1, 0.2, 0.0],
                    init_rotation: [0.0, 0.0, 0.5],
                }],
                target_object_id: "ketchup_1".into(),
            },
            steps: grippers.iter().enumerate().map(|(t, &g)| step(t, g)).collect(),
            source: Source::Demonstration,
            phase_boundary: None,
        }
    }
}
