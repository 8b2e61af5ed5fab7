//! Splits a trajectory into its target-approaching prefix `[0, b)` and the
//! execution suffix `[b, T)`.
//!
//! Three strategies are available and are usually chained with fallback:
//! an external annotation, the first debounced open-to-closed gripper
//! transition, and the first step at which the end-effector comes within a
//! radius of the target object's initial position.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::trajmodel::{Trajectory, GRIPPER_CLOSED_AT};

pub const DEFAULT_RADIUS: f64 = 0.05;
pub const DEFAULT_MIN_HOLD: usize = 3;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SegmentError {
    #[error("no open-to-closed gripper transition held for {min_hold} steps")]
    NoGraspEvent { min_hold: usize },
    #[error("end-effector never within {radius} m of the target")]
    NoApproachEvent { radius: f64 },
    #[error("no phase annotation")]
    NoAnnotation,
    #[error("annotated boundary {boundary} outside (0, {len})")]
    BadAnnotation { boundary: usize, len: usize },
    #[error("trajectory has {len} steps; at least {needed} required")]
    TooShort { len: usize, needed: usize },
    #[error("data error: {0}")]
    Data(String),
    #[error("empty strategy chain")]
    EmptyChain,
    #[error("all strategies failed: {}", .0.iter().map(|(s, e)| format!("{s}: {e}")).collect::<Vec<_>>().join("; "))]
    AllFailed(Vec<(StrategyKind, SegmentError)>),
}

impl SegmentError {
    pub fn code(&self) -> &'static str {
        match self {
            SegmentError::NoGraspEvent { .. } => "phaseseg/no-grasp",
            SegmentError::NoApproachEvent { .. } => "phaseseg/no-approach",
            SegmentError::NoAnnotation | SegmentError::BadAnnotation { .. } => "phaseseg/annotation",
            SegmentError::TooShort { .. } => "phaseseg/too-short",
            SegmentError::Data(_) => "phaseseg/data",
            SegmentError::EmptyChain => "phaseseg/chain",
            SegmentError::AllFailed(_) => "phaseseg/all-failed",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    Gripper,
    Proximity,
    Annotated,
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StrategyKind::Gripper => "gripper",
            StrategyKind::Proximity => "proximity",
            StrategyKind::Annotated => "annotated",
        })
    }
}

impl FromStr for StrategyKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "gripper" => Ok(StrategyKind::Gripper),
            "proximity" => Ok(StrategyKind::Proximity),
            "annotated" => Ok(StrategyKind::Annotated),
            other => Err(format!("unknown strategy {other:?}")),
        }
    }
}

/// Which gripper signal the grasp detector reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GripperSignal {
    /// The commanded `action.gripper`; commands lead the measured state.
    #[default]
    Action,
    /// The measured `proprio.gripper_openness`.
    Proprio,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GripperParams {
    pub close_threshold: f64,
    pub min_hold: usize,
    pub signal: GripperSignal,
}

impl Default for GripperParams {
    fn default() -> Self {
        Self { close_threshold: GRIPPER_CLOSED_AT, min_hold: DEFAULT_MIN_HOLD, signal: GripperSignal::Action }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "strategy", rename_all = "snake_case")]
pub enum Strategy {
    Gripper(GripperParams),
    Proximity { radius: f64 },
    Annotated,
}

impl Strategy {
    pub fn kind(&self) -> StrategyKind {
        match self {
            Strategy::Gripper(_) => StrategyKind::Gripper,
            Strategy::Proximity { .. } => StrategyKind::Proximity,
            Strategy::Annotated => StrategyKind::Annotated,
        }
    }

    pub fn with_defaults(kind: StrategyKind) -> Self {
        match kind {
            StrategyKind::Gripper => Strategy::Gripper(GripperParams::default()),
            StrategyKind::Proximity => Strategy::Proximity { radius: DEFAULT_RADIUS },
            StrategyKind::Annotated => Strategy::Annotated,
        }
    }
}

/// `[annotated, gripper, proximity]` with default parameters.
pub fn default_chain() -> Vec<Strategy> {
    [StrategyKind::Annotated, StrategyKind::Gripper, StrategyKind::Proximity]
        .into_iter()
        .map(Strategy::with_defaults)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseSplit {
    pub traj_id: String,
    /// First index of the execution phase.
    pub boundary: usize,
    pub params: Strategy,
}

impl PhaseSplit {
    pub fn strategy(&self) -> StrategyKind {
        self.params.kind()
    }
}

/// First `t >= 1` where the gripper signal is closed for `min_hold`
/// consecutive steps starting at `t` and was open at `t - 1`.
pub fn segment_by_gripper(traj: &Trajectory, params: GripperParams) -> Result<PhaseSplit, SegmentError> {
    let min_hold = params.min_hold.max(1);
    let len = traj.len();
    if len < min_hold + 1 {
        return Err(SegmentError::TooShort { len, needed: min_hold + 1 });
    }
    let signal: Vec<f64> = traj
        .steps
        .iter()
        .map(|s| match params.signal {
            GripperSignal::Action => s.action.gripper,
            GripperSignal::Proprio => s.proprio.gripper_openness,
        })
        .collect();
    let closed = |i: usize| signal[i] <= params.close_threshold;
    (1..=len - min_hold)
        .find(|&t| !closed(t - 1) && (t..t + min_hold).all(closed))
        .map(|boundary| PhaseSplit { traj_id: traj.traj_id.clone(), boundary, params: Strategy::Gripper(params) })
        .ok_or(SegmentError::NoGraspEvent { min_hold })
}

/// First step whose end-effector lies within `radius` of the target's
/// initial position. A trajectory that starts inside the radius gets
/// `b = 1`, since step 0 always belongs to the approach.
pub fn segment_by_proximity(traj: &Trajectory, radius: f64) -> Result<PhaseSplit, SegmentError> {
    let target = traj
        .scene
        .target()
        .ok_or_else(|| SegmentError::Data(format!("target {} not in scene", traj.scene.target_object_id)))?;
    let len = traj.len();
    if len < 2 {
        return Err(SegmentError::TooShort { len, needed: 2 });
    }
    for (i, step) in traj.steps.iter().enumerate() {
        let ee = step
            .proprio
            .ee_position
            .ok_or_else(|| SegmentError::Data(format!("step {i} has no ee_position")))?;
        let d = ee
            .iter()
            .zip(&target.init_position)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        if d <= radius {
            return Ok(PhaseSplit {
                traj_id: traj.traj_id.clone(),
                boundary: i.max(1),
                params: Strategy::Proximity { radius },
            });
        }
    }
    Err(SegmentError::NoApproachEvent { radius })
}

pub fn segment_by_annotation(traj: &Trajectory) -> Result<PhaseSplit, SegmentError> {
    let boundary = traj.phase_boundary.ok_or(SegmentError::NoAnnotation)?;
    if boundary == 0 || boundary >= traj.len() {
        return Err(SegmentError::BadAnnotation { boundary, len: traj.len() });
    }
    Ok(PhaseSplit { traj_id: traj.traj_id.clone(), boundary, params: Strategy::Annotated })
}

pub fn segment_with(traj: &Trajectory, strategy: &Strategy) -> Result<PhaseSplit, SegmentError> {
    match strategy {
        Strategy::Gripper(p) => segment_by_gripper(traj, *p),
        Strategy::Proximity { radius } => segment_by_proximity(traj, *radius),
        Strategy::Annotated => segment_by_annotation(traj),
    }
}

/// Tries each strategy in order; the first success wins.
pub fn segment(traj: &Trajectory, chain: &[Strategy]) -> Result<PhaseSplit, SegmentError> {
    if chain.is_empty() {
        return Err(SegmentError::EmptyChain);
    }
    let mut causes = Vec::new();
    for s in chain {
        match segment_with(traj, s) {
            Ok(split) => return Ok(split),
            Err(e) => causes.push((s.kind(), e)),
        }
    }
    Err(SegmentError::AllFailed(causes))
}

/// Parses `"annotated,gripper,proximity"`.
pub fn parse_chain(text: &str, gripper: GripperParams, radius: f64) -> Result<Vec<Strategy>, String> {
    let chain: Vec<Strategy> = text
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| {
            s.parse::<StrategyKind>().map(|k| match k {
                StrategyKind::Gripper => Strategy::Gripper(gripper),
                StrategyKind::Proximity => Strategy::Proximity { radius },
                StrategyKind::Annotated => Strategy::Annotated,
            })
        })
        .collect::<Result<_, _>>()?;
    if chain.is_empty() {
        return Err("empty strategy chain".into());
    }
    Ok(chain)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentFailure {
    pub traj_id: String,
    pub error: String,
}

/// Contents of `splits.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSet {
    pub chain: Vec<Strategy>,
    pub splits: Vec<PhaseSplit>,
    #[serde(default)]
    pub failures: Vec<SegmentFailure>,
}

impl SplitSet {
    pub fn get(&self, traj_id: &str) -> Option<&PhaseSplit> {
        self.splits.iter().find(|s| s.traj_id == traj_id)
    }
}

/// Segments a batch in parallel; results keep input order.
pub fn segment_all(trajs: &[Trajectory], chain: &[Strategy]) -> SplitSet {
    use rayon::prelude::*;
    let results: Vec<_> = trajs.par_iter().map(|t| (t.traj_id.clone(), segment(t, chain))).collect();
    let mut set = SplitSet { chain: chain.to_vec(), splits: Vec::new(), failures: Vec::new() };
    for (traj_id, r) in results {
        match r {
            Ok(s) => set.splits.push(s),
            Err(e) => set.failures.push(SegmentFailure { traj_id, error: e.to_string() }),
        }
    }
    set
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trajmodel::fixtures::trajectory;

    fn with_grippers(g: &[f64]) -> Trajectory {
        trajectory("g", "task", g)
    }

    /// Direct scan of the detection rule, kept separate from the
    /// implementation under test.
    fn brute_force_gripper(g: &[f64], thr: f64, hold: usize) -> Option<usize> {
        let mut best = None;
        for t in 1..g.len() {
            if t + hold > g.len() {
                break;
            }
            let opened_before = g[t - 1] > thr;
            let mut held = true;
            for k in 0..hold {
                if g[t + k] > thr {
                    held = false;
                }
            }
            if opened_before && held {
                best = Some(t);
                break;
            }
        }
        best
    }

    #[test]
    fn gripper_open_then_closed() {
        let mut g = vec![1.0; 17];
        g.extend(vec![0.0; 10]);
        let s = segment_by_gripper(&with_grippers(&g), GripperParams::default()).unwrap();
        assert_eq!(s.boundary, 17);
        assert_eq!(s.strategy(), StrategyKind::Gripper);
    }

    #[test]
    fn gripper_closed_from_start() {
        let t = with_grippers(&[0.0; 12]);
        assert_eq!(
            segment_by_gripper(&t, GripperParams::default()).unwrap_err(),
            SegmentError::NoGraspEvent { min_hold: 3 }
        );
    }

    #[test]
    fn gripper_chatter_is_debounced() {
        let mut g = vec![1.0; 30];
        g[10] = 0.0;
        g[11] = 0.0;
        for x in g.iter_mut().skip(20) {
            *x = 0.0;
        }
        assert_eq!(brute_force_gripper(&g, 0.5, 3), Some(20));
        let s = segment_by_gripper(&with_grippers(&g), GripperParams::default()).unwrap();
        assert_eq!(s.boundary, 20);
    }

    #[test]
    fn gripper_too_short() {
        let t = with_grippers(&[1.0, 0.0, 0.0]);
        assert!(matches!(
            segment_by_gripper(&t, GripperParams::default()),
            Err(SegmentError::TooShort { .. })
        ));
    }

    #[test]
    fn gripper_matches_brute_force_on_random_signals() {
        let mut rng = crate::rng::SplitMix64::new(12);
        for _ in 0..500 {
            let len = rng.range_usize(4, 40);
            let g: Vec<f64> = (0..len).map(|_| if rng.next_f64() < 0.5 { 0.0 } else { 1.0 }).collect();
            let hold = rng.range_usize(1, 3);
            let params = GripperParams { min_hold: hold, ..Default::default() };
            let got = segment_by_gripper(&with_grippers(&g), params).ok().map(|s| s.boundary);
            assert_eq!(got, brute_force_gripper(&g, 0.5, hold), "{g:?}");
        }
    }

    #[test]
    fn proprio_signal_variant() {
        let mut t = with_grippers(&[1.0; 10]);
        for s in t.steps.iter_mut().skip(4) {
            s.proprio.gripper_openness = 0.1;
        }
        let p = GripperParams { signal: GripperSignal::Proprio, ..Default::default() };
        assert_eq!(segment_by_gripper(&t, p).unwrap().boundary, 4);
        assert!(segment_by_gripper(&t, GripperParams::default()).is_err());
    }

    fn line_towards_target(start: f64, len: usize, step: f64) -> Trajectory {
        let mut t = with_grippers(&vec![1.0; len]);
        t.scene.objects[0].init_position = [0.0, 0.0, 0.0];
        for (i, s) in t.steps.iter_mut().enumerate() {
            s.proprio.ee_position = Some([start - step * i as f64, 0.0, 0.0]);
        }
        t
    }

    #[test]
    fn proximity_first_crossing() {
        // x = 0.5 - 0.02 i, first i with x <= 0.05 is 23 (x = 0.04)
        let t = line_towards_target(0.5, 40, 0.02);
        assert_eq!(segment_by_proximity(&t, 0.05).unwrap().boundary, 23);
    }

    #[test]
    fn proximity_degenerate_start_and_zero_radius() {
        let t = line_towards_target(0.01, 5, 0.0);
        assert_eq!(segment_by_proximity(&t, 0.05).unwrap().boundary, 1);

        let mut noisy = line_towards_target(0.5, 40, 0.02);
        for s in noisy.steps.iter_mut() {
            if let Some(ee) = s.proprio.ee_position.as_mut() {
                ee[1] = 1e-4;
            }
        }
        assert_eq!(
            segment_by_proximity(&noisy, 0.0).unwrap_err(),
            SegmentError::NoApproachEvent { radius: 0.0 }
        );
    }

    #[test]
    fn proximity_missing_ee_position() {
        let mut t = line_towards_target(0.5, 10, 0.01);
        t.steps[3].proprio.ee_position = None;
        assert_eq!(segment_by_proximity(&t, 0.05).unwrap_err().code(), "phaseseg/data");
    }

    #[test]
    fn proximity_boundary_is_monotone_in_radius() {
        let t = line_towards_target(0.5, 40, 0.013);
        let mut last = usize::MAX;
        for k in 0..60 {
            let r = 0.01 * k as f64;
            if let Ok(s) = segment_by_proximity(&t, r) {
                assert!(s.boundary <= last);
                last = s.boundary;
            }
        }
    }

    #[test]
    fn chain_falls_back_to_proximity_for_push() {
        let mut t = line_towards_target(0.5, 40, 0.02);
        for s in t.steps.iter_mut() {
            s.action.gripper = 0.0;
        }
        let chain = parse_chain("gripper,proximity", GripperParams::default(), 0.05).unwrap();
        let s = segment(&t, &chain).unwrap();
        assert_eq!(s.strategy(), StrategyKind::Proximity);
        assert_eq!(s.boundary, 23);

        let err = segment(&t, &[Strategy::with_defaults(StrategyKind::Gripper)]).unwrap_err();
        match err {
            SegmentError::AllFailed(causes) => assert_eq!(causes.len(), 1),
            e => panic!("{e:?}"),
        }
    }

    #[test]
    fn chain_annotated() {
        let mut t = with_grippers(&[1.0; 20]);
        t.phase_boundary = Some(12);
        let s = segment(&t, &[Strategy::Annotated]).unwrap();
        assert_eq!((s.boundary, s.strategy()), (12, StrategyKind::Annotated));
        assert_eq!(segment(&t, &[]).unwrap_err(), SegmentError::EmptyChain);
    }

    #[test]
    fn parse_chain_rejects_unknown() {
        assert!(parse_chain("gripper,vision", GripperParams::default(), 0.05).is_err());
        assert_eq!(
            parse_chain("annotated,gripper,proximity", GripperParams::default(), DEFAULT_RADIUS).unwrap(),
            default_chain()
        );
    }

    #[test]
    fn split_set_serializes_params() {
        let set = SplitSet {
            chain: default_chain(),
            splits: vec![PhaseSplit { traj_id: "a".into(), boundary: 3, params: Strategy::Proximity { radius: 0.05 } }],
            failures: vec![],
        };
        let v = serde_json::to_value(&set).unwrap();
        assert_eq!(v["splits"][0]["params"]["strategy"], "proximity");
        let back: SplitSet = serde_json::from_value(v).unwrap();
        assert_eq!(back, set);
    }
}
