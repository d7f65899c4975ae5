//! Acceptance suite: every release-gate criterion as one test, each printing
//! a PASS line with its measured values (run with `--nocapture` to see them).

use herdsim::abstraction::{state_space_size, AbstractionParams};
use herdsim::coordinator::MessageBody;
use herdsim::goalsearch::{builtin_goal_world, run_goalsearch_experiment, GsParams, TrialConfig};
use herdsim::harness::{
    compare, compare_report_text, parse_config, run_scenario_sim, ScenarioConfig, TransferOutcome,
};
use herdsim::validate::{run_all, CheckResult};

fn check(results: &[CheckResult], name: &str) {
    let r = results
        .iter()
        .find(|c| c.name == name)
        .unwrap_or_else(|| panic!("unknown check {name}"));
    assert!(r.passed(), "check {name} failed: {:?}", r.result);
}

/// The full (non-quick) invariant suite is shared by several criteria; run
/// it once.
fn full_suite() -> &'static [CheckResult] {
    use std::sync::OnceLock;
    static SUITE: OnceLock<Vec<CheckResult>> = OnceLock::new();
    SUITE.get_or_init(|| run_all(false))
}

#[test]
fn criterion_1_state_space_counts() {
    let one = AbstractionParams::new(10.0, 5.0, 100.0).unwrap();
    let two = AbstractionParams::new(20.0, 10.0, 100.0).unwrap();
    assert_eq!(state_space_size(&one), 7056);
    assert_eq!(state_space_size(&two), 882);
    println!("[acceptance] criterion 1 (state-space counts 7056 / 882): PASS");
}

#[test]
fn criterion_2_fusion_oracle_equivalence() {
    // 1,000 randomized instances vs the brute-force weighted mean at 1e-12,
    // plus exact permutation invariance and idempotence (validate suite).
    check(full_suite(), "fusion-oracle");
    println!("[acceptance] criterion 2 (fusion oracle, permutation, idempotence): PASS");
}

#[test]
fn criterion_3_q_learning_vs_value_iteration() {
    // 10 seeds on the 5x5 deterministic gridworld; greedy policy must be
    // optimal at every state.
    check(full_suite(), "greedy-policy-oracle");
    println!("[acceptance] criterion 3 (greedy policy matches value iteration, 10 seeds): PASS");
}

/// The pinned desk-scale transfer scenario (criterion 4): 30x30 world,
/// 16 cows, 20 obstacles, 2 agents, d=6, a=10, 5,000 iterations.
fn desk_scenario(seed: u64) -> ScenarioConfig {
    let mut cfg = ScenarioConfig::default();
    for (k, v) in [
        ("side", "30"),
        ("cows", "16"),
        ("obstacles", "20"),
        ("agents", "2"),
        ("d", "6"),
        ("a", "10"),
        ("iterations", "5000"),
        ("sample_every", "25"),
        ("w_random", "0.6"),
        ("reward_mode", "delta"),
        ("alpha", "0.5"),
    ] {
        cfg.set(k, v).unwrap();
    }
    cfg.seed = seed;
    cfg
}

#[test]
fn criterion_4_desk_scale_transfer_effect() {
    let seeds = [1u64, 2, 3, 4, 5];
    let mut positive = 0;
    let mut jump_with = Vec::new();
    let mut jump_without = Vec::new();
    let mut rates = Vec::new();
    for &seed in &seeds {
        let result = compare(&desk_scenario(seed)).unwrap();
        match result.rate {
            TransferOutcome::Rate(r) => {
                if r > 0.0 {
                    positive += 1;
                }
                rates.push(r);
            }
            TransferOutcome::NoBaseline => rates.push(f64::NAN),
        }
        jump_with.push(result.with_report.jumpstart.expect("desk curves cover the window"));
        jump_without.push(result.without_report.jumpstart.expect("desk curves cover the window"));
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let mw = mean(&jump_with);
    let mo = mean(&jump_without);
    assert!(
        positive >= 4,
        "transfer rate positive in only {positive}/5 pairs (rates {rates:?})"
    );
    assert!(
        mw >= mo,
        "mean with-transfer jumpstart {mw} below without-transfer {mo}"
    );
    println!(
        "[acceptance] criterion 4 (desk transfer: {positive}/5 positive, rates {rates:?}, \
         jumpstart {mw:.3} vs {mo:.3}): PASS"
    );
}

#[test]
fn criterion_5_behavior_decomposition_totality() {
    check(full_suite(), "behavior-totality");
    println!("[acceptance] criterion 5 (behavior totality and hysteresis sweep): PASS");
}

#[test]
fn criterion_6_goal_search_trends() {
    let world = builtin_goal_world();
    let fused_cfg = TrialConfig {
        episodes: 500,
        trials: 40,
        params: GsParams { fusion: true, ..GsParams::default() },
        seed: 1,
    };
    let plain_cfg = TrialConfig {
        params: GsParams { fusion: false, ..GsParams::default() },
        ..fused_cfg.clone()
    };
    let fused = run_goalsearch_experiment(&world, &fused_cfg).unwrap();
    let plain = run_goalsearch_experiment(&world, &plain_cfg).unwrap();

    // (a) The agent starting nearest the goal outperforms the detour agent
    // early on.
    let a1_32 = fused.at_episode(0, 32);
    let a2_32 = fused.at_episode(1, 32);
    assert!(a2_32 < a1_32, "agent-2 at ep 32 ({a2_32}) not below agent-1 ({a1_32})");

    // (b) The detour agents more than halve their early step counts.
    let a1_218 = fused.at_episode(0, 218);
    let a3_32 = fused.at_episode(2, 32);
    let a3_218 = fused.at_episode(2, 218);
    assert!(
        a1_218 < 0.5 * a1_32,
        "agent-1 ep 218 ({a1_218}) not below half of ep 32 ({a1_32})"
    );
    assert!(
        a3_218 < 0.5 * a3_32,
        "agent-3 ep 218 ({a3_218}) not below half of ep 32 ({a3_32})"
    );

    // (c) Fusion beats no-fusion for the detour agent at episode 94.
    let fused_94 = fused.at_episode(0, 94);
    let plain_94 = plain.at_episode(0, 94);
    assert!(
        fused_94 < plain_94,
        "fused agent-1 ep 94 ({fused_94}) not below unfused ({plain_94})"
    );

    println!(
        "[acceptance] criterion 6 (goal-search trends: a2@32 {a2_32:.1} < a1@32 {a1_32:.1}; \
         a1@218 {a1_218:.1} < {:.1}; a3@218 {a3_218:.1} < {:.1}; fused a1@94 {fused_94:.1} < \
         unfused {plain_94:.1}): PASS",
        0.5 * a1_32,
        0.5 * a3_32
    );
}

#[test]
fn criterion_7_compare_determinism() {
    let cfg = desk_scenario(1);
    let a = compare(&cfg).unwrap();
    let b = compare(&cfg).unwrap();
    assert_eq!(a.with_curve.to_csv().into_bytes(), b.with_curve.to_csv().into_bytes());
    assert_eq!(a.without_curve.to_csv().into_bytes(), b.without_curve.to_csv().into_bytes());
    assert_eq!(
        compare_report_text(&a, &cfg).into_bytes(),
        compare_report_text(&b, &cfg).into_bytes()
    );
    println!("[acceptance] criterion 7 (byte-identical compare outputs): PASS");
}

#[test]
fn criterion_8_metric_closed_forms() {
    check(full_suite(), "metric-closed-forms");
    println!("[acceptance] criterion 8 (transfer-rate and jumpstart closed forms): PASS");
}

#[test]
fn criterion_9_coordinator_protocol_and_replay() {
    // A 3-agent traced run long enough to get well past entrance detection.
    let mut cfg = desk_scenario(3);
    cfg.set("agents", "3").unwrap();
    cfg.set("iterations", "400").unwrap();
    let (_, sim) = run_scenario_sim(&cfg, true).unwrap();

    let trace = sim.trace_file().expect("tracing was on");
    let coordinates = trace
        .messages
        .iter()
        .filter(|m| matches!(m.body, MessageBody::Coordinate { .. }))
        .count();
    assert_eq!(coordinates, 3, "exactly one Coordinate per agent");
    let notify_positions: Vec<usize> = trace
        .messages
        .iter()
        .enumerate()
        .filter(|(_, m)| matches!(m.body, MessageBody::CloserNotify))
        .map(|(i, _)| i)
        .collect();
    assert_eq!(notify_positions.len(), 1, "exactly one CloserNotify in the whole run");
    let last_coordinate = trace
        .messages
        .iter()
        .rposition(|m| matches!(m.body, MessageBody::Coordinate { .. }))
        .unwrap();
    assert!(notify_positions[0] > last_coordinate, "notify follows the third coordinate");
    assert_eq!(sim.coordinator.counter1, 3);
    assert!(sim.coordinator.closer_elected, "election happened");

    // With transfer on, steps in the learning phase carry exactly N shares
    // and one fused broadcast.
    let sharing_steps: Vec<_> =
        sim.step_message_counts.iter().filter(|(_, shares, _, _)| *shares > 0).collect();
    assert!(!sharing_steps.is_empty(), "knowledge sharing happened");
    for (step, shares, broadcasts, _) in &sharing_steps {
        assert_eq!(*shares, 3, "step {step}: expected 3 QTableShare messages");
        assert_eq!(*broadcasts, 1, "step {step}: expected 1 FusedTablesBroadcast");
    }

    // Replaying the logged trace reproduces the coordinator state bitwise.
    let replayed = trace.replay().unwrap();
    assert_eq!(replayed, sim.coordinator);
    assert_eq!(replayed.canonical_string(), sim.coordinator.canonical_string());

    // Round-trip through the on-disk encoding as well.
    let reparsed = herdsim::coordinator::TraceFile::from_text(&trace.to_text()).unwrap();
    assert_eq!(reparsed, trace);
    let replayed2 = reparsed.replay().unwrap();
    assert_eq!(replayed2.canonical_string(), sim.coordinator.canonical_string());

    println!(
        "[acceptance] criterion 9 (election, {} sharing steps with 3 shares + 1 broadcast, \
         bitwise replay): PASS",
        sharing_steps.len()
    );
}

#[test]
fn bundled_desk_config_matches_the_pinned_scenario() {
    // configs/desk.cfg must stay in sync with the criterion-4 scenario.
    let text = std::fs::read_to_string(
        std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/desk.cfg"),
    )
    .unwrap();
    let mut from_file = parse_config(&text).unwrap();
    from_file.seed = 1;
    assert_eq!(from_file, desk_scenario(1));
}
