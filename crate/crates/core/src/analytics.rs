//! Phase-wise failure analytics over rollout logs.
//!
//! Every rollout ends in exactly one of three outcomes: it failed while
//! approaching the target, it reached the target but failed afterwards, or
//! it succeeded. From the counts `(n_appr, n_exec, n_succ)`:
//!
//! ```text
//! p_appr = n_appr / (n_appr + n_exec + n_succ)
//! p_exec = n_exec / (n_exec + n_succ)          (undefined when both are 0)
//! ```
//!
//! The relative risk of a phase compares the long-tail condition against
//! the full-data condition, `rr = p_lt / p_full`, and tail tasks are
//! summarized by the geometric mean of their per-task ratios.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::dataio::{Outcome, RolloutRecord};

/// Attached to every risk report.
pub const EXEC_DISCREPANCY_NOTE: &str = "rr_exec_geomean is the geometric mean of per-task \
execution-phase ratios exactly as defined; the LIBERO-Core tail aggregate \
of 164.34% cannot be derived from the per-task execution probabilities, which give about 84.2%";

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AnalyticsError {
    #[error("no defined {phase} ratios in tail range {m}..={n}")]
    EmptyDomain { phase: Phase, m: usize, n: usize },
    #[error("cannot pair stats for task {lt} with stats for task {full}")]
    Pairing { lt: String, full: String },
    #[error("invalid tail range {m}..={n}")]
    InvalidRange { m: usize, n: usize },
}

impl AnalyticsError {
    pub fn code(&self) -> &'static str {
        match self {
            AnalyticsError::EmptyDomain { .. } => "analytics/empty-domain",
            AnalyticsError::Pairing { .. } => "analytics/pairing",
            AnalyticsError::InvalidRange { .. } => "analytics/range",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Approach,
    Execution,
}

impl std::fmt::Display for Phase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Phase::Approach => "approach",
            Phase::Execution => "execution",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregationMode {
    /// Sum the counts over all seeds, then apply the ratios once.
    #[default]
    Pooled,
    /// Apply the ratios per seed, then take the arithmetic mean.
    PerSeedMean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseStats {
    pub task_id: String,
    pub n_appr: u64,
    pub n_exec: u64,
    pub n_succ: u64,
    pub p_appr: f64,
    /// `None` when no rollout reached the execution phase.
    pub p_exec: Option<f64>,
    pub success_rate: f64,
    /// Population standard deviation of per-seed success rates.
    pub success_std: f64,
    pub seeds: usize,
}

#[derive(Debug, Clone, Copy, Default)]
struct Counts {
    appr: u64,
    exec: u64,
    succ: u64,
}

impl Counts {
    fn add(&mut self, o: Outcome) {
        match o {
            Outcome::FailApproach => self.appr += 1,
            Outcome::FailExecution => self.exec += 1,
            Outcome::Success => self.succ += 1,
        }
    }

    fn total(&self) -> u64 {
        self.appr + self.exec + self.succ
    }

    fn p_appr(&self) -> f64 {
        self.appr as f64 / self.total() as f64
    }

    fn p_exec(&self) -> Option<f64> {
        let reached = self.exec + self.succ;
        (reached > 0).then(|| self.exec as f64 / reached as f64)
    }

    fn success(&self) -> f64 {
        self.succ as f64 / self.total() as f64
    }
}

impl PhaseStats {
    /// Stats known only as probabilities (e.g. transcribed from a table).
    pub fn from_probabilities(task_id: &str, p_appr: f64, p_exec: Option<f64>, success_rate: f64) -> Self {
        Self {
            task_id: task_id.to_string(),
            n_appr: 0,
            n_exec: 0,
            n_succ: 0,
            p_appr,
            p_exec,
            success_rate,
            success_std: 0.0,
            seeds: 0,
        }
    }

    pub fn from_counts(task_id: &str, n_appr: u64, n_exec: u64, n_succ: u64) -> Self {
        let c = Counts { appr: n_appr, exec: n_exec, succ: n_succ };
        Self {
            task_id: task_id.to_string(),
            n_appr,
            n_exec,
            n_succ,
            p_appr: c.p_appr(),
            p_exec: c.p_exec(),
            success_rate: c.success(),
            success_std: 0.0,
            seeds: 1,
        }
    }

    pub fn total(&self) -> u64 {
        self.n_appr + self.n_exec + self.n_succ
    }

    pub fn probability(&self, phase: Phase) -> Option<f64> {
        match phase {
            Phase::Approach => Some(self.p_appr),
            Phase::Execution => self.p_exec,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsTable {
    pub mode: AggregationMode,
    pub stats: Vec<PhaseStats>,
    pub warnings: Vec<String>,
}

impl StatsTable {
    pub fn get(&self, task_id: &str) -> Option<&PhaseStats> {
        self.stats.iter().find(|s| s.task_id == task_id)
    }
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Per-task phase statistics. Tasks are reported in first-appearance
/// order, followed by any `expected` task that has no rollouts, which is
/// omitted with a warning.
pub fn phase_stats(records: &[RolloutRecord], mode: AggregationMode, expected: &[String]) -> StatsTable {
    let mut order: Vec<&str> = Vec::new();
    let mut per_seed: BTreeMap<&str, BTreeMap<u64, Counts>> = BTreeMap::new();
    for r in records {
        let seeds = per_seed.entry(&r.task_id).or_insert_with(|| {
            order.push(&r.task_id);
            BTreeMap::new()
        });
        seeds.entry(r.seed).or_default().add(r.outcome);
    }

    let mut warnings = Vec::new();
    for t in expected {
        if !per_seed.contains_key(t.as_str()) {
            warnings.push(format!("task {t} has no rollouts; omitted"));
        }
    }

    let mut stats = Vec::with_capacity(order.len());
    for task in order {
        let seeds = &per_seed[task];
        let mut pooled = Counts::default();
        for c in seeds.values() {
            pooled.appr += c.appr;
            pooled.exec += c.exec;
            pooled.succ += c.succ;
        }
        let successes: Vec<f64> = seeds.values().map(Counts::success).collect();
        let (success_mean, success_std) = mean_std(&successes);

        let (p_appr, p_exec, success_rate) = match mode {
            AggregationMode::Pooled => (pooled.p_appr(), pooled.p_exec(), pooled.success()),
            AggregationMode::PerSeedMean => {
                let appr: Vec<f64> = seeds.values().map(Counts::p_appr).collect();
                let exec: Vec<f64> = seeds.values().filter_map(Counts::p_exec).collect();
                if !exec.is_empty() && exec.len() < seeds.len() {
                    warnings.push(format!(
                        "task {task}: p_exec undefined for {} of {} seeds; averaged over the rest",
                        seeds.len() - exec.len(),
                        seeds.len()
                    ));
                }
                let p_exec = (!exec.is_empty()).then(|| mean_std(&exec).0);
                (mean_std(&appr).0, p_exec, success_mean)
            }
        };
        if p_exec.is_none() {
            warnings.push(format!("task {task}: p_exec undefined (no rollout passed the approach phase)"));
        }
        stats.push(PhaseStats {
            task_id: task.to_string(),
            n_appr: pooled.appr,
            n_exec: pooled.exec,
            n_succ: pooled.succ,
            p_appr,
            p_exec,
            success_rate,
            success_std,
            seeds: seeds.len(),
        });
    }
    StatsTable { mode, stats, warnings }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskRisk {
    pub task_id: String,
    pub rr_appr: Option<f64>,
    pub rr_exec: Option<f64>,
    pub warnings: Vec<String>,
}

impl TaskRisk {
    pub fn ratio(&self, phase: Phase) -> Option<f64> {
        match phase {
            Phase::Approach => self.rr_appr,
            Phase::Execution => self.rr_exec,
        }
    }
}

fn ratio(task: &str, phase: Phase, lt: Option<f64>, full: Option<f64>, warnings: &mut Vec<String>) -> Option<f64> {
    let (lt, full) = match (lt, full) {
        (Some(a), Some(b)) if a.is_finite() && b.is_finite() => (a, b),
        _ => {
            warnings.push(format!("task {task}: {phase} probability undefined; ratio undefined"));
            return None;
        }
    };
    if full == 0.0 {
        warnings.push(format!("task {task}: {phase} baseline probability is 0; ratio undefined"));
        None
    } else {
        if lt == 0.0 {
            warnings.push(format!("task {task}: {phase} long-tail probability is 0; ratio is 0"));
        }
        Some(lt / full)
    }
}

/// Relative risk of each phase for one task, long-tail over full.
pub fn relative_risk(lt: &PhaseStats, full: &PhaseStats) -> Result<TaskRisk, AnalyticsError> {
    if lt.task_id != full.task_id {
        return Err(AnalyticsError::Pairing { lt: lt.task_id.clone(), full: full.task_id.clone() });
    }
    let mut warnings = Vec::new();
    let rr_appr = ratio(&lt.task_id, Phase::Approach, Some(lt.p_appr), Some(full.p_appr), &mut warnings);
    let rr_exec = ratio(&lt.task_id, Phase::Execution, lt.p_exec, full.p_exec, &mut warnings);
    Ok(TaskRisk { task_id: lt.task_id.clone(), rr_appr, rr_exec, warnings })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeoMean {
    pub value: f64,
    /// Number of defined ratios that entered the mean.
    pub used: usize,
    pub warnings: Vec<String>,
}

/// Geometric mean of the ratios whose 1-based rank lies in `m..=n`,
/// evaluated as `exp(mean(ln rr))`. Undefined ratios are skipped and the
/// root is taken over the defined count; a zero ratio forces the result
/// to 0.
pub fn geometric_mean_rr(
    per_task: &[(usize, TaskRisk)],
    tail_range: (usize, usize),
    phase: Phase,
) -> Result<GeoMean, AnalyticsError> {
    let (m, n) = tail_range;
    if m == 0 || m > n {
        return Err(AnalyticsError::InvalidRange { m, n });
    }
    let mut warnings = Vec::new();
    let mut in_range = 0usize;
    let mut values = Vec::new();
    for (rank, risk) in per_task {
        if !(m..=n).contains(rank) {
            continue;
        }
        in_range += 1;
        match risk.ratio(phase) {
            Some(v) => values.push(v),
            None => warnings.push(format!("task {} ({phase}) undefined; excluded", risk.task_id)),
        }
    }
    if in_range < n - m + 1 {
        warnings.push(format!("only {in_range} of {} ranks in {m}..={n} present", n - m + 1));
    }
    if values.is_empty() {
        return Err(AnalyticsError::EmptyDomain { phase, m, n });
    }
    let used = values.len();
    if values.iter().any(|&v| v == 0.0) {
        warnings.push(format!("a {phase} ratio is 0; geometric mean is 0"));
        return Ok(GeoMean { value: 0.0, used, warnings });
    }
    let mean_log = values.iter().map(|v| v.ln()).sum::<f64>() / used as f64;
    Ok(GeoMean { value: mean_log.exp(), used, warnings })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskEntry {
    pub task_id: String,
    pub rank: usize,
    pub full: Option<PhaseStats>,
    pub lt: Option<PhaseStats>,
    pub rr_appr: Option<f64>,
    pub rr_exec: Option<f64>,
    /// True when either ratio could not be computed.
    pub undefined: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelativeRiskReport {
    pub mode: AggregationMode,
    pub tail_range: (usize, usize),
    pub per_task: Vec<RiskEntry>,
    pub rr_appr_geomean: Option<f64>,
    pub rr_exec_geomean: Option<f64>,
    pub warnings: Vec<String>,
    pub notes: Vec<String>,
}

impl RelativeRiskReport {
    pub fn empty(mode: AggregationMode, tail_range: (usize, usize)) -> Self {
        Self {
            mode,
            tail_range,
            per_task: Vec::new(),
            rr_appr_geomean: None,
            rr_exec_geomean: None,
            warnings: Vec::new(),
            notes: vec![EXEC_DISCREPANCY_NOTE.to_string()],
        }
    }
}

/// Assembles the full report. `task_order` fixes ranks (1-based); ratios
/// are computed for every task present in both tables.
pub fn risk_report(
    full: &StatsTable,
    lt: &StatsTable,
    task_order: &[String],
    tail_range: (usize, usize),
) -> Result<RelativeRiskReport, AnalyticsError> {
    let (m, n) = tail_range;
    if m == 0 || m > n {
        return Err(AnalyticsError::InvalidRange { m, n });
    }
    let mut report = RelativeRiskReport::empty(lt.mode, tail_range);
    report.warnings.extend(full.warnings.iter().map(|w| format!("full: {w}")));
    report.warnings.extend(lt.warnings.iter().map(|w| format!("lt: {w}")));

    let mut ranked = Vec::new();
    for (i, task) in task_order.iter().enumerate() {
        let rank = i + 1;
        let f = full.get(task);
        let l = lt.get(task);
        let risk = match (l, f) {
            (Some(l), Some(f)) => Some(relative_risk(l, f)?),
            _ => None,
        };
        if let Some(r) = &risk {
            report.warnings.extend(r.warnings.iter().cloned());
            ranked.push((rank, r.clone()));
        }
        let rr_appr = risk.as_ref().and_then(|r| r.rr_appr);
        let rr_exec = risk.as_ref().and_then(|r| r.rr_exec);
        report.per_task.push(RiskEntry {
            task_id: task.clone(),
            rank,
            full: f.cloned(),
            lt: l.cloned(),
            rr_appr,
            rr_exec,
            undefined: rr_appr.is_none() || rr_exec.is_none(),
        });
    }

    for phase in [Phase::Approach, Phase::Execution] {
        let value = match geometric_mean_rr(&ranked, tail_range, phase) {
            Ok(g) => {
                report.warnings.extend(g.warnings);
                Some(g.value)
            }
            Err(e) => {
                report.warnings.push(e.to_string());
                None
            }
        };
        match phase {
            Phase::Approach => report.rr_appr_geomean = value,
            Phase::Execution => report.rr_exec_geomean = value,
        }
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuccessCell {
    pub mean: f64,
    pub std: f64,
    pub seeds: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuccessRow {
    pub task_id: String,
    /// One cell per dataset, aligned with `SuccessTable::datasets`.
    pub cells: Vec<Option<SuccessCell>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuccessTable {
    pub datasets: Vec<String>,
    pub rows: Vec<SuccessRow>,
    pub warnings: Vec<String>,
}

/// Mean and population standard deviation of per-seed success rates, per
/// task and dataset. Rates are fractions in `[0, 1]`.
pub fn success_table(logs: &[(String, Vec<RolloutRecord>)]) -> SuccessTable {
    let mut order: Vec<String> = Vec::new();
    let mut cells: BTreeMap<(String, usize), SuccessCell> = BTreeMap::new();
    let mut warnings = Vec::new();
    for (d, (label, records)) in logs.iter().enumerate() {
        let table = phase_stats(records, AggregationMode::Pooled, &[]);
        for s in table.stats {
            if !order.contains(&s.task_id) {
                order.push(s.task_id.clone());
            }
            let seeds: Vec<f64> = {
                let mut per: BTreeMap<u64, Counts> = BTreeMap::new();
                for r in records.iter().filter(|r| r.task_id == s.task_id) {
                    per.entry(r.seed).or_default().add(r.outcome);
                }
                per.values().map(Counts::success).collect()
            };
            if seeds.len() == 1 {
                warnings.push(format!("{label}/{}: single seed; std reported as 0", s.task_id));
            }
            let (mean, std) = mean_std(&seeds);
            cells.insert((s.task_id.clone(), d), SuccessCell { mean, std, seeds: seeds.len() });
        }
    }
    let rows = order
        .into_iter()
        .map(|task| SuccessRow {
            cells: (0..logs.len()).map(|d| cells.get(&(task.clone(), d)).cloned()).collect(),
            task_id: task,
        })
        .collect();
    SuccessTable { datasets: logs.iter().map(|(l, _)| l.clone()).collect(), rows, warnings }
}
