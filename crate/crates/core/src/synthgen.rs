//! Synthetic demonstrations with known phase boundaries.
//!
//! The end-effector travels along a straight line toward the target object.
//! Its distance to the target shrinks linearly until step `b - 1`, where it
//! still sits at `radius + 0.02 + 2·noise·√3`, and reaches `radius / 2` at
//! step `b`. With per-axis noise bounded by `noise` and `noise·√3 <
//! radius / 2`, the first step inside the radius is exactly `b`.
//!
//! Pick-and-place commands an open gripper before `b` and a closed one from
//! `b` on (the measured openness lags one step). Push keeps the gripper
//! closed throughout, so only the proximity rule can see its boundary.

use serde::{Deserialize, Serialize};

use crate::rng::{derive_seed, SplitMix64};
use crate::trajmodel::{
    trajectory_file, ActionStep, DatasetManifest, IndexEntry, ProprioState, Scene, SceneObject, Source, Step,
    TaskSpec, Trajectory, Vec3,
};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SynthError {
    #[error("invalid scenario: {0}")]
    InvalidSpec(String),
    #[error("unknown preset {0:?}")]
    UnknownPreset(String),
}

impl SynthError {
    pub fn code(&self) -> &'static str {
        match self {
            SynthError::InvalidSpec(_) => "synthgen/spec",
            SynthError::UnknownPreset(_) => "synthgen/preset",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Archetype {
    PickPlace,
    Push,
}

/// Steps the gripper must stay closed after the boundary for the grasp
/// detector to fire.
const MIN_EXEC: usize = 3;
const CLEARANCE: f64 = 0.02;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub archetype: Archetype,
    /// Target initial position; drawn from the workspace when absent.
    #[serde(default)]
    pub target_position: Option<Vec3>,
    /// End-effector start; drawn around the target when absent.
    #[serde(default)]
    pub start_position: Option<Vec3>,
    /// Inclusive range the boundary is drawn from.
    pub approach_len: (usize, usize),
    /// Fixed boundary, overriding `approach_len`.
    #[serde(default)]
    pub grasp_step: Option<usize>,
    /// Inclusive range of execution-phase lengths.
    pub exec_len: (usize, usize),
    pub noise: f64,
    pub proximity_radius: f64,
    pub seed: u64,
}

impl ScenarioSpec {
    pub fn new(archetype: Archetype, seed: u64) -> Self {
        Self {
            archetype,
            target_position: None,
            start_position: None,
            approach_len: (20, 60),
            grasp_step: None,
            exec_len: (15, 40),
            noise: 0.005,
            proximity_radius: 0.05,
            seed,
        }
    }

    fn last_approach_distance(&self) -> f64 {
        self.proximity_radius + CLEARANCE + 2.0 * self.noise * 3f64.sqrt()
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidSpec(m));
        let (lo, hi) = self.approach_len;
        if lo < 1 || lo > hi {
            return bad(format!("approach_len ({lo}, {hi}) must satisfy 1 <= lo <= hi"));
        }
        if let Some(b) = self.grasp_step {
            if b < lo || b > hi {
                return bad(format!("grasp_step {b} outside approach_len ({lo}, {hi})"));
            }
        }
        let (elo, ehi) = self.exec_len;
        if elo < MIN_EXEC || elo > ehi {
            return bad(format!("exec_len ({elo}, {ehi}) must satisfy {MIN_EXEC} <= lo <= hi"));
        }
        if !(self.proximity_radius > 0.0 && self.proximity_radius.is_finite()) {
            return bad(format!("proximity_radius {} must be positive", self.proximity_radius));
        }
        if !(self.noise >= 0.0 && self.noise * 3f64.sqrt() < self.proximity_radius / 2.0) {
            return bad(format!("noise {} must satisfy 0 <= noise·√3 < radius/2", self.noise));
        }
        if let (Some(s), Some(p)) = (self.start_position, self.target_position) {
            if dist(s, p) < self.last_approach_distance() {
                return bad(format!("start lies within {:.4} m of the target", self.last_approach_distance()));
            }
        }
        Ok(())
    }
}

fn dist(a: Vec3, b: Vec3) -> f64 {
    a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn add(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

fn scale(a: Vec3, k: f64) -> Vec3 {
    [a[0] * k, a[1] * k, a[2] * k]
}

fn lerp(a: Vec3, b: Vec3, s: f64) -> Vec3 {
    [a[0] + (b[0] - a[0]) * s, a[1] + (b[1] - a[1]) * s, a[2] + (b[2] - a[2]) * s]
}

/// Task-level description shared by all of a task's demonstrations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskTemplate {
    pub task_id: String,
    pub instruction: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub object_hint: Option<String>,
    pub target_asset: String,
    #[serde(default)]
    pub distractors: Vec<String>,
    pub archetype: Archetype,
}

impl TaskTemplate {
    fn new(task_id: &str, instruction: &str, hint: Option<&str>, asset: &str, distractors: &[&str], archetype: Archetype) -> Self {
        Self {
            task_id: task_id.into(),
            instruction: instruction.into(),
            object_hint: hint.map(Into::into),
            target_asset: asset.into(),
            distractors: distractors.iter().map(|s| s.to_string()).collect(),
            archetype,
        }
    }
}

fn object_id(asset: &str, k: usize) -> String {
    format!("{}_{k}", asset.replace(' ', "_"))
}

fn workspace_point(rng: &mut SplitMix64) -> Vec3 {
    [rng.range_f64(0.3, 0.7), rng.range_f64(-0.3, 0.3), 0.0]
}

/// Generates one demonstration. `phase_boundary` holds the ground truth.
pub fn gen_trajectory(traj_id: &str, task: &TaskTemplate, spec: &ScenarioSpec) -> Result<Trajectory, SynthError> {
    spec.validate()?;
    let mut rng = SplitMix64::new(spec.seed);
    let b = match spec.grasp_step {
        Some(b) => b,
        None => rng.range_usize(spec.approach_len.0, spec.approach_len.1),
    };
    let exec = rng.range_usize(spec.exec_len.0, spec.exec_len.1);
    let len = b + exec;

    let target = spec.target_position.unwrap_or_else(|| workspace_point(&mut rng));
    let d_last = spec.last_approach_distance();
    let start = match spec.start_position {
        Some(s) => s,
        None => {
            let theta = rng.range_f64(0.0, std::f64::consts::TAU);
            let elev = rng.range_f64(0.4, 1.2);
            let dir = [elev.cos() * theta.cos(), elev.cos() * theta.sin(), elev.sin()];
            add(target, scale(dir, rng.range_f64(d_last.max(0.2), d_last.max(0.2) + 0.25)))
        }
    };
    let d0 = dist(start, target);
    let u = scale([start[0] - target[0], start[1] - target[1], start[2] - target[2]], 1.0 / d0);

    let end = match spec.archetype {
        Archetype::PickPlace => add(target, [rng.range_f64(-0.2, 0.2), rng.range_f64(-0.2, 0.2), 0.1]),
        Archetype::Push => {
            let a = rng.range_f64(0.0, std::f64::consts::TAU);
            add(target, [0.15 * a.cos(), 0.15 * a.sin(), 0.0])
        }
    };

    let mut ee = Vec::with_capacity(len);
    for t in 0..len {
        let ideal = if t < b {
            let d = if b == 1 { d0 } else { d0 + (d_last - d0) * t as f64 / (b - 1) as f64 };
            add(target, scale(u, d))
        } else if t == b {
            add(target, scale(u, spec.proximity_radius / 2.0))
        } else {
            let from = add(target, scale(u, spec.proximity_radius / 2.0));
            lerp(from, end, (t - b) as f64 / (len - 1 - b) as f64)
        };
        let n = spec.noise;
        let jitter = [rng.range_f64(-n, n), rng.range_f64(-n, n), rng.range_f64(-n, n)];
        ee.push(add(ideal, jitter));
    }

    let command = |t: usize| match spec.archetype {
        Archetype::PickPlace if t < b => 1.0,
        _ => 0.0,
    };
    let steps = (0..len)
        .map(|t| {
            let dpos = if t + 1 < len {
                [ee[t + 1][0] - ee[t][0], ee[t + 1][1] - ee[t][1], ee[t + 1][2] - ee[t][2]]
            } else {
                [0.0; 3]
            };
            Step {
                t,
                proprio: ProprioState {
                    gripper_openness: command(t.saturating_sub(1)),
                    ee_position: Some(ee[t]),
                    joint_angles: None,
                },
                action: ActionStep { dpos, drot: [0.0; 3], gripper: command(t) },
                obs_ref: format!("synth/{traj_id}/{t:04}.png"),
            }
        })
        .collect();

    let target_id = object_id(&task.target_asset, 1);
    let mut objects = vec![SceneObject {
        object_id: target_id.clone(),
        asset_label: task.target_asset.clone(),
        init_position: target,
        init_rotation: [0.0, 0.0, rng.range_f64(-std::f64::consts::PI, std::f64::consts::PI)],
    }];
    for (k, asset) in task.distractors.iter().enumerate() {
        let mut id = object_id(asset, 1);
        if objects.iter().any(|o| o.object_id == id) {
            id = object_id(asset, k + 2);
        }
        objects.push(SceneObject {
            object_id: id,
            asset_label: asset.clone(),
            init_position: workspace_point(&mut rng),
            init_rotation: [0.0, 0.0, rng.range_f64(-std::f64::consts::PI, std::f64::consts::PI)],
        });
    }

    Ok(Trajectory {
        traj_id: traj_id.into(),
        task_id: task.task_id.clone(),
        instruction: task.instruction.clone(),
        scene: Scene { objects, target_object_id: target_id },
        steps,
        source: Source::Demonstration,
        phase_boundary: Some(b),
    })
}

/// Scenario ranges applied to every demonstration of a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioParams {
    pub approach_len: (usize, usize),
    pub exec_len: (usize, usize),
    pub noise: f64,
    pub proximity_radius: f64,
}

impl Default for ScenarioParams {
    fn default() -> Self {
        let s = ScenarioSpec::new(Archetype::PickPlace, 0);
        Self { approach_len: s.approach_len, exec_len: s.exec_len, noise: s.noise, proximity_radius: s.proximity_radius }
    }
}

/// Input of `synth --spec`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub name: String,
    pub tasks: Vec<TaskTemplate>,
    pub counts: Vec<usize>,
    #[serde(default)]
    pub scenario: ScenarioParams,
}

pub const PRESETS: [&str; 2] = ["libero-core-full", "real-world"];

/// Built-in dataset layouts. `libero-core-full` has the ten core LIBERO
/// tasks with their full demonstration counts; `real-world` has the six
/// tabletop tasks with 25 demonstrations each.
pub fn preset(name: &str) -> Result<SynthConfig, SynthError> {
    use Archetype::*;
    let (tasks, counts) = match name {
        "libero-core-full" => (
            vec![
                TaskTemplate::new("task01", "Pick up the black bowl next to the plate and place it on the plate", Some("the black bowl next to the plate"), "black bowl", &["plate", "cookie box"], PickPlace),
                TaskTemplate::new("task02", "Pick up the black bowl next to the cookie box and place it on the plate", Some("the black bowl next to the cookie box"), "black bowl", &["cookie box", "plate"], PickPlace),
                TaskTemplate::new("task03", "Pick up the black bowl on the cookie box and place it on the plate", Some("the black bowl on the cookie box"), "black bowl", &["cookie box", "plate"], PickPlace),
                TaskTemplate::new("task04", "Pick up the ketchup and place it in the basket", None, "ketchup", &["basket"], PickPlace),
                TaskTemplate::new("task05", "Pick up the alphabet soup and place it in the basket", None, "alphabet soup", &["basket"], PickPlace),
                TaskTemplate::new("task06", "Push the plate to the front of the stove", None, "plate", &["stove"], Push),
                TaskTemplate::new("task07", "Put the bowl on top of the cabinet", None, "bowl", &["cabinet"], PickPlace),
                TaskTemplate::new("task08", "Put the cream cheese in the bowl", None, "cream cheese", &["bowl"], PickPlace),
                TaskTemplate::new("task09", "Put the wine bottle on top of the cabinet", None, "wine bottle", &["cabinet"], PickPlace),
                TaskTemplate::new("task10", "Put the wine bottle on the rack", None, "wine bottle", &["rack"], PickPlace),
            ],
            vec![46, 47, 45, 42, 47, 39, 47, 39, 45, 38],
        ),
        "real-world" => (
            vec![
                TaskTemplate::new("rw01", "Pick up the spitball and place it in the basket", None, "spitball", &["basket"], PickPlace),
                TaskTemplate::new("rw02", "Pick up the cylinder and place it in the basket", None, "cylinder", &["basket"], PickPlace),
                TaskTemplate::new("rw03", "Put the bowl on the plate", None, "bowl", &["plate"], PickPlace),
                TaskTemplate::new("rw04", "Put the lemon on the plate", None, "lemon", &["plate"], PickPlace),
                TaskTemplate::new("rw05", "Put the cup on the plate", None, "cup", &["plate"], PickPlace),
                TaskTemplate::new("rw06", "Pick up the bread and place it in the basket", None, "bread", &["basket"], PickPlace),
            ],
            vec![25; 6],
        ),
        other => return Err(SynthError::UnknownPreset(other.into())),
    };
    Ok(SynthConfig { name: name.into(), tasks, counts, scenario: ScenarioParams::default() })
}

pub fn demo_id(task_id: &str, k: usize) -> String {
    format!("{task_id}_demo{k:03}")
}

/// Generates a full dataset. Demonstration `k` of a task uses the seed
/// `derive_seed(seed, demo_id)`, so each trajectory is independent of the
/// others.
pub fn gen_dataset(config: &SynthConfig, seed: u64) -> Result<(DatasetManifest, Vec<Trajectory>), SynthError> {
    if config.tasks.len() != config.counts.len() {
        return Err(SynthError::InvalidSpec(format!(
            "{} tasks but {} counts",
            config.tasks.len(),
            config.counts.len()
        )));
    }
    if let Some(i) = config.counts.iter().position(|&n| n == 0) {
        return Err(SynthError::InvalidSpec(format!("count for {} must be positive", config.tasks[i].task_id)));
    }
    let jobs: Vec<(String, &TaskTemplate)> = config
        .tasks
        .iter()
        .zip(&config.counts)
        .flat_map(|(t, &n)| (0..n).map(move |k| (demo_id(&t.task_id, k), t)))
        .collect();

    use rayon::prelude::*;
    let p = &config.scenario;
    let trajectories: Vec<Trajectory> = jobs
        .par_iter()
        .map(|(id, task)| {
            let spec = ScenarioSpec {
                archetype: task.archetype,
                target_position: None,
                start_position: None,
                approach_len: p.approach_len,
                grasp_step: None,
                exec_len: p.exec_len,
                noise: p.noise,
                proximity_radius: p.proximity_radius,
                seed: derive_seed(seed, id),
            };
            gen_trajectory(id, task, &spec)
        })
        .collect::<Result<_, _>>()?;

    let mut manifest = DatasetManifest::empty(config.name.clone());
    manifest.tasks = config
        .tasks
        .iter()
        .zip(&config.counts)
        .map(|(t, &n)| TaskSpec {
            task_id: t.task_id.clone(),
            instruction: t.instruction.clone(),
            object_hint: t.object_hint.clone(),
            parsed: None,
            demo_count: n,
        })
        .collect();
    manifest.trajectory_index = trajectories
        .iter()
        .map(|t| IndexEntry {
            traj_id: t.traj_id.clone(),
            task_id: t.task_id.clone(),
            file: trajectory_file(&t.traj_id),
            source: Source::Demonstration,
        })
        .collect();
    manifest.provenance.insert("generator".into(), serde_json::json!({ "kind": "synthgen", "seed": seed }));
    Ok((manifest, trajectories))
}
