use proptest::prelude::*;
use tailgraft::phaseseg::{default_chain, segment, segment_by_gripper, segment_by_proximity, GripperParams, StrategyKind};
use tailgraft::synthgen::{gen_trajectory, Archetype, ScenarioSpec, TaskTemplate};

fn template(archetype: Archetype) -> TaskTemplate {
    serde_json::from_value(serde_json::json!({
        "task_id": "t",
        "instruction": "Push the plate to the front of the stove",
        "target_asset": "plate",
        "distractors": ["stove"],
        "archetype": archetype,
    }))
    .unwrap()
}

fn spec() -> impl Strategy<Value = ScenarioSpec> {
    (any::<bool>(), 1usize..80, 0usize..40, 3usize..40, 0.0f64..0.014, any::<u64>()).prop_map(
        |(push, lo, span, exec_lo, noise, seed)| {
            let mut s = ScenarioSpec::new(if push { Archetype::Push } else { Archetype::PickPlace }, seed);
            s.approach_len = (lo, lo + span);
            s.exec_len = (exec_lo, exec_lo + 10);
            s.noise = noise;
            s
        },
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn default_chain_recovers_ground_truth(s in spec()) {
        let mut t = gen_trajectory("x", &template(s.archetype), &s).unwrap();
        let truth = t.phase_boundary.take().unwrap();
        prop_assert!(truth > 0 && truth < t.len());
        let split = segment(&t, &default_chain()).unwrap();
        prop_assert_eq!(split.boundary, truth);
        let expected = match s.archetype {
            Archetype::PickPlace => StrategyKind::Gripper,
            Archetype::Push => StrategyKind::Proximity,
        };
        prop_assert_eq!(split.strategy(), expected);
        prop_assert_eq!(segment_by_proximity(&t, s.proximity_radius).unwrap().boundary, truth);
        if s.archetype == Archetype::PickPlace {
            prop_assert_eq!(segment_by_gripper(&t, GripperParams::default()).unwrap().boundary, truth);
        }
    }

    #[test]
    fn actions_integrate_to_positions(s in spec()) {
        let t = gen_trajectory("x", &template(s.archetype), &s).unwrap();
        let mut pos = t.steps[0].proprio.ee_position.unwrap();
        for w in t.steps.windows(2) {
            for k in 0..3 {
                pos[k] += w[0].action.dpos[k];
            }
            let actual = w[1].proprio.ee_position.unwrap();
            for k in 0..3 {
                prop_assert!((pos[k] - actual[k]).abs() < 1e-9);
            }
        }
    }
}
