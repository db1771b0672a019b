//! Scenario pipeline: determinism, config round trip and topology equivalence.

use platoon::controller::ControllerSpec;
use platoon::io::write_trajectory_csv;
use platoon::scenario::{
    builtin, AnalysisConfig, ControllerConfig, InitialConfig, PolicyConfig, RoadConfig, ScenarioConfig, SimConfig,
    TopologyConfig, BUILTIN_IDS,
};
use platoon::simulator::{ExpSegment, LeaderProfile, PlatoonState, SimSettings, Simulation, Topology};
use platoon::spacing_policy::PiecewiseG;
use proptest::prelude::*;

fn csv_bytes(cfg: &ScenarioConfig) -> Vec<u8> {
    let out = cfg.validate().unwrap().run().unwrap();
    let mut buf = Vec::new();
    write_trajectory_csv(&mut buf, &out.trajectory, &out.safety.phi, &out.lyapunov).unwrap();
    buf
}

#[test]
fn identical_configs_give_identical_csv() {
    for id in ["s2_nl", "ring", "s3_ctg"] {
        let mut cfg = builtin(id).unwrap();
        cfg.sim.horizon = Some(20.0);
        let first = csv_bytes(&cfg);
        let reparsed = ScenarioConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(first, csv_bytes(&reparsed), "{id}");
        assert_eq!(first, csv_bytes(&cfg), "{id}");
    }
}

#[test]
fn open_road_fed_by_ring_reproduces_ring() {
    let policy = PiecewiseG::ramp(5.0, 7.1, 19.0, 0.26).unwrap();
    let spec = ControllerSpec::nonlinear_acc(policy, 2.0).unwrap();
    let dt = 1e-3;
    let ring = Simulation {
        spec: spec.clone(),
        topology: Topology::Ring { length: 43.0 },
        leader: LeaderProfile::Constant { speed: 0.0 },
        settings: SimSettings { dt, horizon: 20.0, output_stride: 1, halt_on_violation: false },
    }
    .run(&PlatoonState::new(vec![10.0, 11.0, 12.0, 10.0], vec![0.8, 1.5, 1.25, 0.75]).unwrap())
    .unwrap();
    let n = ring.n;

    // With twice the step, every RK4 stage time of the open run is a recorded sample.
    let leader = LeaderProfile::Tabulated { times: ring.times.clone(), speeds: ring.speed_series(n - 1) };
    let open = Simulation {
        spec,
        topology: Topology::Open,
        leader,
        settings: SimSettings { dt: 2.0 * dt, horizon: 20.0, output_stride: 1, halt_on_violation: false },
    }
    .run(&PlatoonState::new(ring.s_at(0)[..n - 1].to_vec(), ring.v_at(0)[..n - 1].to_vec()).unwrap())
    .unwrap();

    assert_eq!(open.len(), (ring.len() - 1) / 2 + 1);
    let mut worst: f64 = 0.0;
    for j in 0..open.len() {
        let r = 2 * j;
        assert!((open.times[j] - ring.times[r]).abs() < 1e-9);
        for i in 0..n - 1 {
            worst = worst.max((open.s_at(j)[i] - ring.s_at(r)[i]).abs());
            worst = worst.max((open.v_at(j)[i] - ring.v_at(r)[i]).abs());
        }
    }
    assert!(worst < 1e-9, "worst deviation {worst:e}");
}

#[test]
fn every_builtin_config_round_trips() {
    for id in BUILTIN_IDS {
        let cfg = builtin(id).unwrap();
        assert_eq!(ScenarioConfig::from_toml(&cfg.to_toml().unwrap()).unwrap(), cfg);
    }
}

fn finite() -> impl Strategy<Value = f64> {
    -1e6..1e6f64
}

fn policy_config() -> impl Strategy<Value = PolicyConfig> {
    prop_oneof![
        (finite(), finite(), finite()).prop_map(|(lambda, gamma, g_max)| PolicyConfig::Ramp { lambda, gamma, g_max }),
        (prop::collection::vec((finite(), finite()), 0..5), finite())
            .prop_map(|(k, tail_rate)| PolicyConfig::Tabulated { knots: k.into_iter().map(|(a, b)| [a, b]).collect(), tail_rate }),
    ]
}

fn controller_config() -> impl Strategy<Value = ControllerConfig> {
    prop_oneof![
        (finite(), any::<bool>(), policy_config())
            .prop_map(|(k, allow_invalid, policy)| ControllerConfig::NonlinearAcc { k, allow_invalid, policy }),
        (finite(), finite(), finite()).prop_map(|(k, gain, standstill)| ControllerConfig::Ctg { k, gain, standstill }),
    ]
}

fn leader_config() -> impl Strategy<Value = Option<LeaderProfile>> {
    prop_oneof![
        Just(None),
        finite().prop_map(|speed| Some(LeaderProfile::Constant { speed })),
        (finite(), finite(), finite())
            .prop_map(|(initial, target, rate)| Some(LeaderProfile::ExpApproach { initial, target, rate })),
        (finite(), prop::collection::vec((finite(), finite(), finite()), 0..4)).prop_map(|(initial, segs)| {
            let segments = segs.into_iter().map(|(start, target, rate)| ExpSegment { start, target, rate }).collect();
            Some(LeaderProfile::PiecewiseExp { initial, segments })
        }),
    ]
}

fn scenario_config() -> impl Strategy<Value = ScenarioConfig> {
    let head = (
        "[a-z][a-z0-9_ -]{0,12}",
        0usize..10,
        prop_oneof![Just(TopologyConfig::Open), finite().prop_map(|length| TopologyConfig::Ring { length })],
        (finite(), prop::option::of(finite())).prop_map(|(min_gap, speed_limit)| RoadConfig { min_gap, speed_limit }),
        controller_config(),
        leader_config(),
    );
    let tail = (
        (prop::collection::vec(finite(), 0..6), prop::collection::vec(finite(), 0..6), any::<bool>())
            .prop_map(|(s, v, allow_unsafe_start)| InitialConfig { s, v, allow_unsafe_start }),
        (finite(), prop::option::of(finite()), 1usize..1000, any::<bool>()).prop_map(
            |(dt, horizon, output_stride, halt_on_violation)| SimConfig { dt, horizon, output_stride, halt_on_violation },
        ),
        (
            prop::collection::vec(finite(), 0..5),
            finite(),
            prop::option::of(finite()),
            prop::option::of(finite()),
            prop::option::of(finite()),
            prop::option::of(finite()),
        )
            .prop_map(|(q_grid, c, ring_c, p, m, v_star)| AnalysisConfig { q_grid, c, ring_c, p, m, v_star }),
    );
    (head, tail).prop_map(|((name, n, topology, road, controller, leader), (initial, sim, analysis))| ScenarioConfig {
        name,
        n,
        topology,
        road,
        controller,
        leader,
        initial,
        sim,
        analysis,
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn config_round_trip_is_identity(cfg in scenario_config()) {
        let text = cfg.to_toml().unwrap();
        let back = ScenarioConfig::from_toml(&text).unwrap();
        prop_assert_eq!(&back, &cfg);
        prop_assert_eq!(back.to_toml().unwrap(), text);
    }
}
