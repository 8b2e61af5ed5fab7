use std::fs;
use std::path::{Path, PathBuf};

use proptest::prelude::*;
use tailgraft::dataio::{decode_trajectory, encode_trajectory, load_dataset, save_dataset};
use tailgraft::synthgen::{gen_dataset, preset};
use tailgraft::trajmodel::{ActionStep, ProprioState, Scene, SceneObject, Source, Step, Trajectory};

fn any_float() -> impl Strategy<Value = f64> {
    prop_oneof![
        prop::num::f64::NORMAL,
        prop::num::f64::SUBNORMAL,
        prop::num::f64::ZERO,
        -1.0f64..1.0,
    ]
}

fn vec3() -> impl Strategy<Value = [f64; 3]> {
    [any_float(), any_float(), any_float()]
}

fn step() -> impl Strategy<Value = Step> {
    (
        vec3(),
        vec3(),
        0.0f64..=1.0,
        0.0f64..=1.0,
        prop::option::of(vec3()),
        prop::option::of(prop::collection::vec(any_float(), 0..8)),
        "[a-z0-9/._-]{0,20}",
    )
        .prop_map(|(dpos, drot, g, o, ee, joints, obs)| Step {
            t: 0,
            proprio: ProprioState { gripper_openness: o, ee_position: ee, joint_angles: joints },
            action: ActionStep { dpos, drot, gripper: g },
            obs_ref: obs,
        })
}

fn trajectory() -> impl Strategy<Value = Trajectory> {
    (
        "[a-z][a-z0-9_]{0,12}",
        "\\PC{0,40}",
        prop::collection::vec(step(), 1..30),
        vec3(),
        any::<bool>(),
        prop::option::of(1usize..40),
    )
        .prop_map(|(id, instruction, mut steps, pos, aug, b)| {
            for (t, s) in steps.iter_mut().enumerate() {
                s.t = t;
            }
            Trajectory {
                traj_id: id.clone(),
                task_id: "task".into(),
                instruction,
                scene: Scene {
                    objects: vec![SceneObject {
                        object_id: "o".into(),
                        asset_label: "thing \"quoted\"".into(),
                        init_position: pos,
                        init_rotation: [0.0, 0.0, 0.25],
                    }],
                    target_object_id: "o".into(),
                },
                steps,
                source: if aug { Source::Augmented } else { Source::Demonstration },
                phase_boundary: b,
            }
        })
}

proptest! {
    #[test]
    fn encode_decode_is_lossless(t in trajectory()) {
        let text = encode_trajectory(&t);
        let back = decode_trajectory(Path::new("mem"), &text).unwrap();
        prop_assert_eq!(&back, &t);
        prop_assert_eq!(encode_trajectory(&back), text);
    }
}

fn tree(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in fs::read_dir(&dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn save_load_save_is_byte_identical() {
    let mut config = preset("libero-core-full").unwrap();
    config.counts = vec![50; 10];
    let (manifest, trajs) = gen_dataset(&config, 77).unwrap();
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    save_dataset(&a, &manifest, &trajs).unwrap();
    let loaded = load_dataset(&a).unwrap();
    let again = loaded.load_all().unwrap();
    assert_eq!(again, trajs);
    save_dataset(&b, &loaded.manifest, &again).unwrap();
    let (ta, tb) = (tree(&a), tree(&b));
    assert_eq!(ta.len(), 501);
    assert!(ta == tb);
}

#[test]
fn corrupted_step_reports_location() {
    let (m, trajs) = gen_dataset(&preset("real-world").unwrap(), 1).unwrap();
    let tmp = tempfile::tempdir().unwrap();
    save_dataset(tmp.path(), &m, &trajs).unwrap();
    let path = tmp.path().join("trajectories/rw01_demo000.jsonl");
    let mut lines: Vec<String> = fs::read_to_string(&path).unwrap().lines().map(String::from).collect();
    lines[3] = "{\"t\": 2, \"proprio\": ".into();
    fs::write(&path, lines.join("\n")).unwrap();
    let err = tailgraft::dataio::read_trajectory(&path).unwrap_err();
    assert_eq!(err.code(), "dataio/parse");
    assert!(err.to_string().contains("line 4"), "{err}");
}
