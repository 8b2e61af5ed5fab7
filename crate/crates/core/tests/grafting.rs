use std::collections::{HashMap, HashSet};

use tailgraft::apa::{augment_dataset, is_two_phase, AugmentParams, Toggles};
use tailgraft::ltbench::{build_longtail, bundled_profile, partition_head_tail};
use tailgraft::phaseseg::{default_chain, segment_all};
use tailgraft::synthgen::{gen_dataset, preset};
use tailgraft::trajmodel::{validate_manifest, validate_manifest_structure, Source, TaskGroup, Trajectory};

struct Lt {
    manifest: tailgraft::trajmodel::DatasetManifest,
    store: HashMap<String, Trajectory>,
}

fn libero_lt(seed: u64) -> Lt {
    let (full, trajs) = gen_dataset(&preset("libero-core-full").unwrap(), seed).unwrap();
    let profile = bundled_profile("libero-core-lt").unwrap();
    let lt = build_longtail(&full, &profile.profile, &profile.default_order.unwrap(), seed).unwrap();
    let lt = partition_head_tail(&lt, 0.3);
    let keep: HashSet<&str> = lt.trajectory_index.iter().map(|e| e.traj_id.as_str()).collect();
    let store = trajs.into_iter().filter(|t| keep.contains(t.traj_id.as_str())).map(|t| (t.traj_id.clone(), t)).collect();
    Lt { manifest: lt, store }
}

#[test]
fn grafts_preserve_source_streams() {
    let lt = libero_lt(11);
    assert_eq!(lt.manifest.tasks_in(TaskGroup::Head).len(), 3);
    let head_trajs: usize = lt.manifest.tasks_in(TaskGroup::Head).iter().map(|t| t.demo_count).sum();
    assert_eq!(head_trajs, 93);

    let trajs: Vec<Trajectory> = lt.store.values().cloned().collect();
    let splits = segment_all(&trajs, &default_chain());
    assert!(splits.failures.is_empty());
    let params = AugmentParams { pool_size: 42, per_task_count: 6, seed: 5, toggles: Toggles::default() };
    let set = augment_dataset(&lt.manifest, &lt.store, &splits, params).unwrap();

    assert_eq!(set.grafts.len(), 42);
    assert!(validate_manifest_structure(&set.manifest).is_empty());
    let by_id: HashMap<&str, &Trajectory> = set.trajectories.iter().map(|t| (t.traj_id.as_str(), t)).collect();
    assert!(validate_manifest(&set.manifest, &by_id.iter().map(|(k, v)| (k.to_string(), (*v).clone())).collect::<HashMap<_, _>>()).unwrap().is_empty());

    for rec in &set.grafts {
        let source = &lt.store[&rec.source_traj_id];
        let graft = by_id[rec.graft_id.as_str()];
        assert_eq!(rec.segment_end, splits.get(&source.traj_id).unwrap().boundary);
        assert_eq!(graft.len(), rec.segment_end);
        for (g, s) in graft.steps.iter().zip(&source.steps) {
            assert_eq!(g.action, s.action);
            assert_eq!(g.proprio, s.proprio);
        }
        let src_target = source.scene.target().unwrap();
        assert_eq!(rec.inherited_position.map(f64::to_bits), src_target.init_position.map(f64::to_bits));
        assert_eq!(graft.scene.target().unwrap().init_position, src_target.init_position);
        assert_eq!(graft.source, Source::Augmented);
    }
    for t in set.trajectories.iter().filter(|t| t.source == Source::Demonstration) {
        assert!(is_two_phase(&t.instruction), "{}", t.instruction);
    }
}

#[test]
fn pool_is_deterministic_and_capacity_checked() {
    let lt = libero_lt(3);
    let trajs: Vec<Trajectory> = lt.store.values().cloned().collect();
    let splits = segment_all(&trajs, &default_chain());
    let params = AugmentParams { pool_size: 42, per_task_count: 6, seed: 9, toggles: Toggles::default() };
    let a = augment_dataset(&lt.manifest, &lt.store, &splits, params).unwrap();
    let b = augment_dataset(&lt.manifest, &lt.store, &splits, params).unwrap();
    assert_eq!(a, b);

    let too_many = AugmentParams { pool_size: 94, ..params };
    assert_eq!(augment_dataset(&lt.manifest, &lt.store, &splits, too_many).unwrap_err().code(), "apa/capacity");
    let too_few = AugmentParams { pool_size: 5, ..params };
    assert_eq!(augment_dataset(&lt.manifest, &lt.store, &splits, too_few).unwrap_err().code(), "apa/capacity");
}
