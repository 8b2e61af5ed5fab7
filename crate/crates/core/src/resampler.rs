//! Class-balanced re-sampling at trajectory granularity.
//!
//! A task with `n_j` demonstrations is drawn with probability
//! `p_j = n_j^q / sum_i n_i^q`. `q = 1` reproduces the data distribution,
//! `q = 0` is uniform over tasks, and values in between shift mass toward
//! tail tasks.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::rng::SplitMix64;
use crate::trajmodel::DatasetManifest;

/// `q` values of the standard re-sampling sweep.
pub const Q_PRESETS: [(&str, f64); 3] = [("q075", 0.75), ("q050", 0.5), ("q025", 0.25)];

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ResampleError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("task {0} has positive weight but no trajectories")]
    Consistency(String),
}

impl ResampleError {
    pub fn code(&self) -> &'static str {
        match self {
            ResampleError::Domain(_) => "resampler/domain",
            ResampleError::Consistency(_) => "resampler/consistency",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingWeights {
    pub q: f64,
    pub probs: BTreeMap<String, f64>,
}

pub fn sampling_probs(counts: &BTreeMap<String, u64>, q: f64) -> Result<SamplingWeights, ResampleError> {
    if !(0.0..=1.0).contains(&q) {
        return Err(ResampleError::Domain(format!("q = {q} outside [0, 1]")));
    }
    if counts.is_empty() {
        return Err(ResampleError::Domain("no tasks".into()));
    }
    if let Some((task, _)) = counts.iter().find(|(_, &n)| n == 0) {
        return Err(ResampleError::Domain(format!("task {task} has zero demonstrations")));
    }
    let powered: Vec<(&String, f64)> = counts.iter().map(|(t, &n)| (t, (n as f64).powf(q))).collect();
    let total: f64 = powered.iter().map(|(_, w)| w).sum();
    let probs = powered.into_iter().map(|(t, w)| (t.clone(), w / total)).collect();
    Ok(SamplingWeights { q, probs })
}

/// Demonstration counts per task, read from the manifest index.
pub fn manifest_counts(manifest: &DatasetManifest) -> BTreeMap<String, u64> {
    manifest
        .tasks
        .iter()
        .map(|t| (t.task_id.clone(), manifest.entries_for(&t.task_id).count() as u64))
        .collect()
}

/// Draws `num_draws` trajectory ids with replacement.
///
/// Each draw consumes one `next_f64` to pick a task (inverse CDF over
/// `probs` in task-id order; the last task absorbs rounding) and one
/// `next_below(len)` to pick a trajectory of that task in index order.
pub fn make_schedule(
    weights: &SamplingWeights,
    manifest: &DatasetManifest,
    num_draws: usize,
    seed: u64,
) -> Result<Vec<String>, ResampleError> {
    let mut buckets: Vec<(f64, Vec<&str>)> = Vec::with_capacity(weights.probs.len());
    for (task, &p) in &weights.probs {
        let ids: Vec<&str> = manifest.entries_for(task).map(|e| e.traj_id.as_str()).collect();
        if ids.is_empty() && p > 0.0 {
            return Err(ResampleError::Consistency(task.clone()));
        }
        buckets.push((p, ids));
    }
    let mut cdf = Vec::with_capacity(buckets.len());
    let mut acc = 0.0;
    for (p, _) in &buckets {
        acc += p;
        cdf.push(acc);
    }

    let mut rng = SplitMix64::new(seed);
    let mut out = Vec::with_capacity(num_draws);
    for _ in 0..num_draws {
        let u = rng.next_f64();
        let mut k = cdf.partition_point(|&c| c <= u).min(buckets.len() - 1);
        while buckets[k].1.is_empty() {
            k -= 1;
        }
        let ids = &buckets[k].1;
        let j = rng.next_below(ids.len() as u64) as usize;
        out.push(ids[j].to_string());
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub dataset: String,
    pub q: f64,
    pub seed: u64,
    pub num_draws: usize,
    pub probs: BTreeMap<String, f64>,
    pub schedule: Vec<String>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trajmodel::{trajectory_file, IndexEntry, Source, TaskSpec};

    pub(crate) const LT_COUNTS: [u64; 10] = [46, 28, 19, 15, 11, 9, 8, 7, 6, 5];

    fn lt_counts() -> BTreeMap<String, u64> {
        LT_COUNTS.iter().enumerate().map(|(i, &n)| (format!("task{:02}", i + 1), n)).collect()
    }

    fn manifest(counts: &BTreeMap<String, u64>) -> DatasetManifest {
        let mut m = DatasetManifest::empty("m");
        for (task, &n) in counts {
            m.tasks.push(TaskSpec { task_id: task.clone(), instruction: "x".into(), object_hint: None, parsed: None, demo_count: n as usize });
            for i in 0..n {
                let id = format!("{task}_{i}");
                m.trajectory_index.push(IndexEntry { file: trajectory_file(&id), traj_id: id, task_id: task.clone(), source: Source::Demonstration });
            }
        }
        m
    }

    #[test]
    fn q_zero_is_uniform() {
        let w = sampling_probs(&lt_counts(), 0.0).unwrap();
        assert!(w.probs.values().all(|&p| (p - 0.1).abs() < 1e-15));
    }

    #[test]
    fn q_one_matches_data_distribution() {
        let w = sampling_probs(&lt_counts(), 1.0).unwrap();
        assert!((w.probs["task01"] - 0.2987012987012987).abs() < 1e-15);
        assert!((w.probs.values().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn quarter_power_ratio() {
        let w = sampling_probs(&lt_counts(), 0.25).unwrap();
        let r = w.probs["task01"] / w.probs["task10"];
        assert!((r - 1.741594148365405).abs() < 1e-12, "{r}");
    }

    #[test]
    fn domain_errors() {
        assert!(sampling_probs(&lt_counts(), 1.5).is_err());
        assert!(sampling_probs(&lt_counts(), -0.1).is_err());
        assert!(sampling_probs(&BTreeMap::new(), 0.5).is_err());
        let mut c = lt_counts();
        c.insert("zero".into(), 0);
        assert_eq!(sampling_probs(&c, 0.5).unwrap_err().code(), "resampler/domain");
    }

    #[test]
    fn schedule_edges() {
        let counts = lt_counts();
        let m = manifest(&counts);
        let w = sampling_probs(&counts, 0.5).unwrap();
        assert!(make_schedule(&w, &m, 0, 1).unwrap().is_empty());

        let single: BTreeMap<String, u64> = [("solo".to_string(), 3)].into();
        let ms = manifest(&single);
        let ws = sampling_probs(&single, 0.5).unwrap();
        let s = make_schedule(&ws, &ms, 50, 9).unwrap();
        assert!(s.iter().all(|id| id.starts_with("solo_")));

        let mut empty_task = m.clone();
        empty_task.trajectory_index.retain(|e| e.task_id != "task03");
        assert_eq!(make_schedule(&w, &empty_task, 10, 1).unwrap_err(), ResampleError::Consistency("task03".into()));
    }

    #[test]
    fn schedule_is_seed_determined() {
        let counts = lt_counts();
        let m = manifest(&counts);
        let w = sampling_probs(&counts, 0.25).unwrap();
        assert_eq!(make_schedule(&w, &m, 500, 3).unwrap(), make_schedule(&w, &m, 500, 3).unwrap());
        assert_ne!(make_schedule(&w, &m, 500, 3).unwrap(), make_schedule(&w, &m, 500, 4).unwrap());
    }
}
