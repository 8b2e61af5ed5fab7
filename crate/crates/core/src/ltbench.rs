//! Long-tail training-set construction and head/tail partitioning.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::dataio::{self, DataError};
use crate::rng::{derive_seed, SplitMix64};
use crate::trajmodel::{DatasetManifest, TaskGroup, TaskSpec};

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error("task {task_id} needs {requested} demonstrations but only {available} exist")]
    Capacity {
        task_id: String,
        requested: usize,
        available: usize,
    },
    #[error("unknown task {0}")]
    Lookup(String),
    #[error("invalid profile: {0}")]
    Profile(String),
    #[error("unknown bundled profile {0:?}")]
    UnknownProfile(String),
    #[error(transparent)]
    Data(#[from] DataError),
}

impl BenchError {
    pub fn code(&self) -> &'static str {
        match self {
            BenchError::Capacity { .. } => "ltbench/capacity",
            BenchError::Lookup(_) => "ltbench/lookup",
            BenchError::Profile(_) | BenchError::UnknownProfile(_) => "ltbench/profile",
            BenchError::Data(e) => e.code(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProfileKind {
    ExplicitCounts,
    PowerLaw,
}

/// Per-task demonstration allocation, by task rank.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingProfile {
    pub kind: ProfileKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub counts: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exponent: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_count: Option<usize>,
}

impl SamplingProfile {
    pub fn explicit(counts: Vec<usize>) -> Self {
        Self { kind: ProfileKind::ExplicitCounts, counts: Some(counts), exponent: None, max_count: None }
    }

    pub fn power_law(exponent: f64, max_count: usize) -> Self {
        Self { kind: ProfileKind::PowerLaw, counts: None, exponent: Some(exponent), max_count: Some(max_count) }
    }

    /// Resolves the profile to one count per rank.
    pub fn counts_for(&self, num_tasks: usize) -> Result<Vec<usize>, BenchError> {
        match self.kind {
            ProfileKind::ExplicitCounts => {
                let counts = self
                    .counts
                    .clone()
                    .ok_or_else(|| BenchError::Profile("explicit_counts requires counts".into()))?;
                if counts.iter().any(|&c| c == 0) {
                    return Err(BenchError::Profile("counts must all be ≥ 1".into()));
                }
                if counts.windows(2).any(|w| w[1] > w[0]) {
                    return Err(BenchError::Profile("counts must be non-increasing".into()));
                }
                if counts.len() != num_tasks {
                    return Err(BenchError::Profile(format!(
                        "profile has {} counts for {num_tasks} tasks",
                        counts.len()
                    )));
                }
                Ok(counts)
            }
            ProfileKind::PowerLaw => {
                let (Some(exponent), Some(max_count)) = (self.exponent, self.max_count) else {
                    return Err(BenchError::Profile("power_law requires exponent and max_count".into()));
                };
                if !(exponent.is_finite() && exponent >= 0.0) {
                    return Err(BenchError::Profile("exponent must be a non-negative real".into()));
                }
                Ok(power_law_counts(exponent, max_count, num_tasks))
            }
        }
    }
}

/// `count_j = max(1, round(max_count * j^-exponent))` for ranks `j = 1..=n`,
/// rounding half up.
pub fn power_law_counts(exponent: f64, max_count: usize, num_tasks: usize) -> Vec<usize> {
    (1..=num_tasks)
        .map(|j| {
            let raw = max_count as f64 * (j as f64).powf(-exponent);
            ((raw + 0.5).floor() as usize).max(1)
        })
        .collect()
}

/// A profile shipped with the toolkit, optionally with the task order it
/// was designed for.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileResource {
    pub name: String,
    #[serde(default)]
    pub description: String,
    pub profile: SamplingProfile,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub default_order: Option<Vec<String>>,
}

const BUNDLED: [(&str, &str); 3] = [
    ("libero-core-lt", include_str!("../resources/profiles/libero-core-lt.json")),
    ("libero-core-lt-shuffled", include_str!("../resources/profiles/libero-core-lt-shuffled.json")),
    ("real-world-lt", include_str!("../resources/profiles/real-world-lt.json")),
];

pub fn bundled_profile_names() -> Vec<&'static str> {
    BUNDLED.iter().map(|(n, _)| *n).collect()
}

pub fn bundled_profile(name: &str) -> Result<ProfileResource, BenchError> {
    let (_, text) = BUNDLED
        .iter()
        .find(|(n, _)| *n == name)
        .ok_or_else(|| BenchError::UnknownProfile(name.to_string()))?;
    Ok(serde_json::from_str(text).expect("bundled profile is valid JSON"))
}

/// A bundled profile name, or a path to a JSON file holding either a
/// [`ProfileResource`] or a bare [`SamplingProfile`].
pub fn resolve_profile(name_or_path: &str) -> Result<ProfileResource, BenchError> {
    if let Ok(p) = bundled_profile(name_or_path) {
        return Ok(p);
    }
    let path = Path::new(name_or_path);
    if !path.exists() {
        return Err(BenchError::UnknownProfile(name_or_path.to_string()));
    }
    let value: serde_json::Value = dataio::read_json(path)?;
    if value.get("profile").is_some() {
        serde_json::from_value(value).map_err(|e| BenchError::Profile(e.to_string()))
    } else {
        let profile: SamplingProfile = serde_json::from_value(value).map_err(|e| BenchError::Profile(e.to_string()))?;
        Ok(ProfileResource { name: name_or_path.to_string(), description: String::new(), profile, default_order: None })
    }
}

/// Selects `count_j` trajectories for the task at rank `j`, uniformly
/// without replacement. Each task draws from its own stream seeded with
/// `derive_seed(seed, task_id)` over its index entries in manifest order;
/// chosen entries keep that order.
pub fn build_longtail(
    full: &DatasetManifest,
    profile: &SamplingProfile,
    task_order: &[String],
    seed: u64,
) -> Result<DatasetManifest, BenchError> {
    let counts = profile.counts_for(task_order.len())?;

    let mut tasks = Vec::with_capacity(task_order.len());
    let mut index = Vec::new();
    for (task_id, &count) in task_order.iter().zip(&counts) {
        let spec = full.task(task_id).ok_or_else(|| BenchError::Lookup(task_id.clone()))?;
        let candidates: Vec<_> = full.entries_for(task_id).collect();
        if count > candidates.len() {
            return Err(BenchError::Capacity {
                task_id: task_id.clone(),
                requested: count,
                available: candidates.len(),
            });
        }
        let mut rng = SplitMix64::new(derive_seed(seed, task_id));
        let mut chosen = rng.sample_indices(candidates.len(), count);
        chosen.sort_unstable();
        index.extend(chosen.into_iter().map(|i| candidates[i].clone()));
        tasks.push(TaskSpec { demo_count: count, ..spec.clone() });
    }

    let mut provenance = BTreeMap::new();
    provenance.insert("parent".to_string(), json!(full.name));
    provenance.insert("profile".to_string(), serde_json::to_value(profile).expect("serializable"));
    provenance.insert("seed".to_string(), json!(seed));
    provenance.insert("task_order".to_string(), json!(task_order));

    Ok(DatasetManifest {
        name: format!("{}-lt", full.name),
        tasks,
        trajectory_index: index,
        partition: None,
        provenance,
    })
}

/// Labels the `max(1, round(head_fraction * C))` tasks with the most
/// demonstrations as head (ties by ascending task id), the rest as tail.
pub fn partition_head_tail(manifest: &DatasetManifest, head_fraction: f64) -> DatasetManifest {
    let mut ranked: Vec<&TaskSpec> = manifest.tasks.iter().collect();
    ranked.sort_by(|a, b| b.demo_count.cmp(&a.demo_count).then_with(|| a.task_id.cmp(&b.task_id)));
    let head_size = head_size(head_fraction, ranked.len());
    let partition = ranked
        .iter()
        .enumerate()
        .map(|(i, t)| (t.task_id.clone(), if i < head_size { TaskGroup::Head } else { TaskGroup::Tail }))
        .collect();
    let mut out = manifest.clone();
    out.partition = Some(partition);
    out.provenance.insert("head_fraction".into(), json!(head_fraction));
    out
}

pub fn head_size(head_fraction: f64, num_tasks: usize) -> usize {
    if num_tasks == 0 {
        return 0;
    }
    (((head_fraction * num_tasks as f64) + 0.5).floor() as usize).clamp(1, num_tasks)
}
