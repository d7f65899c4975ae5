//! Runtime invariant suite: the module-level properties bundled behind one
//! entry point so the CLI can re-verify a build and the acceptance tests
//! can reuse the independent oracles.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::abstraction::{
    abstract_joint_action, bin_angle, bin_distance, decompose_behavior, group_state, solo_state,
    state_space_size, AbstractState, AbstractionParams, Behavior, Zone, ALL_BEHAVIORS,
};
use crate::geom::{angle_at_vertex, Cell, Rect, Vec2};
use crate::harness::{jumpstart, transfer_rate, LearningCurve, TransferOutcome};
use crate::learning::{
    fuse_tables, q_update, LearningParams, QEntry, QTable, TableTag,
};
use crate::world::{
    build_map, check_world, predict_cows, spawn_world, step_world, success_percent, update_cows,
    CowParams, GridMap, MoveAction, WorldState, ALL_ACTIONS,
};

/// Outcome of one named check.
#[derive(Debug)]
pub struct CheckResult {
    pub name: &'static str,
    pub result: Result<(), String>,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.result.is_ok()
    }
}

type Check = fn(bool) -> Result<(), String>;

/// Run the full suite; `quick` shrinks the sample counts for smoke use.
pub fn run_all(quick: bool) -> Vec<CheckResult> {
    let checks: Vec<(&'static str, Check)> = vec![
        ("state-space-counts", check_state_space_counts),
        ("bin-bounds", check_bin_bounds),
        ("behavior-totality", check_behavior_totality),
        ("rigid-motion-invariance", check_rigid_motion),
        ("group-solo-consistency", check_group_solo),
        ("joint-action-quantization", check_joint_action),
        ("fusion-oracle", check_fusion_oracle),
        ("greedy-policy-oracle", check_greedy_policy_oracle),
        ("argmax-invariance", check_argmax_invariance),
        ("world-occupancy", check_world_occupancy),
        ("world-determinism", check_world_determinism),
        ("prediction-consistency", check_prediction_consistency),
        ("metric-closed-forms", check_metric_closed_forms),
    ];
    checks
        .into_iter()
        .map(|(name, f)| CheckResult { name, result: f(quick) })
        .collect()
}

fn err(msg: impl Into<String>) -> Result<(), String> {
    Err(msg.into())
}

fn check_state_space_counts(_quick: bool) -> Result<(), String> {
    let one = AbstractionParams::new(10.0, 5.0, 100.0).map_err(|e| e.to_string())?;
    let two = AbstractionParams::new(20.0, 10.0, 100.0).map_err(|e| e.to_string())?;
    if state_space_size(&one) != 7056 {
        return err(format!("state space 1: expected 7056, got {}", state_space_size(&one)));
    }
    if state_space_size(&two) != 882 {
        return err(format!("state space 2: expected 882, got {}", state_space_size(&two)));
    }
    Ok(())
}

fn check_bin_bounds(quick: bool) -> Result<(), String> {
    let p = AbstractionParams::new(6.0, 10.0, 30.0).map_err(|e| e.to_string())?;
    let n = if quick { 100_000 } else { 1_000_000 };
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let diag = p.r * std::f64::consts::SQRT_2;
    for _ in 0..n {
        let d = rng.gen_range(0.0..=diag);
        let a = rng.gen_range(0.0..=180.0);
        let bd = bin_distance(d, &p).map_err(|e| e.to_string())?;
        let ba = bin_angle(a, &p).map_err(|e| e.to_string())?;
        if !(1..=p.distance_bins()).contains(&bd) {
            return err(format!("distance bin {bd} outside 1..={}", p.distance_bins()));
        }
        if !(1..=p.angle_bins()).contains(&ba) {
            return err(format!("angle bin {ba} outside 1..={}", p.angle_bins()));
        }
    }
    // The closed form equals the exhaustive count of distinct triples.
    let total = p.distance_bins() as u64 * p.distance_bins() as u64 * p.angle_bins() as u64;
    if total != state_space_size(&p) {
        return err("closed-form state count mismatch");
    }
    Ok(())
}

fn check_behavior_totality(quick: bool) -> Result<(), String> {
    let n = if quick { 10_000 } else { 100_000 };
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for _ in 0..n {
        let group_size = rng.gen_range(1..=5usize);
        let zone = if rng.gen::<bool>() { Zone::A } else { Zone::B };
        let alpha = rng.gen_range(0.0..=180.0);
        let previous =
            if rng.gen::<bool>() { Some(ALL_BEHAVIORS[rng.gen_range(0..6)]) } else { None };
        let b = decompose_behavior(group_size, zone, alpha, previous);
        if !ALL_BEHAVIORS.contains(&b) {
            return err("behavior outside the six-element set");
        }
        if group_size == 1 && b.is_group() {
            return err("solo group size produced a group behavior");
        }
        if group_size > 1 && !b.is_group() {
            return err("group size produced a solo behavior");
        }
    }
    // Monotone sweeps switch at most twice per direction.
    for band in [0.0, 10.0] {
        let mut prev: Option<Behavior> = None;
        let mut switches = 0;
        let steps: Vec<f64> = (0..=720).map(|i| i as f64 * 0.25).collect();
        for &alpha in &steps {
            let b = crate::abstraction::decompose_behavior_with(1, Zone::A, alpha, prev, band);
            if prev.is_some() && prev != Some(b) {
                switches += 1;
            }
            prev = Some(b);
        }
        if switches > 2 {
            return err(format!("up-sweep switched {switches} times (band {band})"));
        }
        switches = 0;
        for &alpha in steps.iter().rev() {
            let b = crate::abstraction::decompose_behavior_with(1, Zone::A, alpha, prev, band);
            if prev != Some(b) {
                switches += 1;
            }
            prev = Some(b);
        }
        if switches > 2 {
            return err(format!("down-sweep switched {switches} times (band {band})"));
        }
    }
    Ok(())
}

fn check_rigid_motion(quick: bool) -> Result<(), String> {
    let p = AbstractionParams::new(20.0, 10.0, 100.0).map_err(|e| e.to_string())?;
    let n = if quick { 200 } else { 2000 };
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..n {
        let agent = Vec2::new(rng.gen_range(20.0..40.0), rng.gen_range(20.0..40.0));
        let gcm = Vec2::new(rng.gen_range(20.0..40.0), rng.gen_range(20.0..40.0));
        let target = Cell::new(rng.gen_range(20..40), rng.gen_range(20..40));
        let base = solo_state(agent, target, gcm, &p).map_err(|e| e.to_string())?;

        let theta: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
        let pivot = Vec2::new(30.0, 30.0);
        let rot = |v: Vec2| {
            let d = v - pivot;
            pivot + Vec2::new(
                d.x * theta.cos() - d.y * theta.sin(),
                d.x * theta.sin() + d.y * theta.cos(),
            )
        };
        let (a2, g2, t2) = (rot(agent), rot(gcm), rot(target.to_vec2()));
        let rotated = AbstractState::new(
            bin_distance(a2.distance(t2), &p).map_err(|e| e.to_string())?,
            bin_distance(a2.distance(g2), &p).map_err(|e| e.to_string())?,
            bin_angle(angle_at_vertex(g2, a2, t2), &p).map_err(|e| e.to_string())?,
        );
        if base != rotated {
            return err(format!("rotation changed the state: {base} vs {rotated}"));
        }
    }
    Ok(())
}

fn check_group_solo(_quick: bool) -> Result<(), String> {
    let p = AbstractionParams::new(20.0, 10.0, 100.0).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    for _ in 0..500 {
        let point = Cell::new(rng.gen_range(0..100), rng.gen_range(0..100));
        let target = Cell::new(rng.gen_range(0..100), rng.gen_range(0..100));
        let gcm = Vec2::new(rng.gen_range(0.0..100.0), rng.gen_range(0.0..100.0));
        let solo = solo_state(point.to_vec2(), target, gcm, &p).map_err(|e| e.to_string())?;
        let members = vec![point; rng.gen_range(2..=6)];
        let group = group_state(&members, target, gcm, &p).map_err(|e| e.to_string())?;
        if solo != group {
            return err(format!("coincident group state {group} differs from solo {solo}"));
        }
    }
    Ok(())
}

fn check_joint_action(_quick: bool) -> Result<(), String> {
    // Oracle over all 81 member pairs: nearest direction by angle.
    for a in ALL_ACTIONS {
        for b in ALL_ACTIONS {
            let (ax, ay) = a.displacement();
            let (bx, by) = b.displacement();
            let v = Vec2::new((ax + bx) as f64, (ay + by) as f64);
            let expect = if v.x == 0.0 && v.y == 0.0 {
                MoveAction::Skip
            } else {
                let mut best = (f64::INFINITY, MoveAction::Skip);
                for cand in &ALL_ACTIONS[1..] {
                    let (cx, cy) = cand.displacement();
                    let ang = crate::geom::angle_between(v, Vec2::new(cx as f64, cy as f64));
                    if ang + 1e-12 < best.0 {
                        best = (ang, *cand);
                    }
                }
                best.1
            };
            let got = abstract_joint_action(&[a, b]);
            if got != expect {
                return err(format!("joint action {a:?}+{b:?}: got {got:?}, want {expect:?}"));
            }
        }
    }
    Ok(())
}

/// 1,000 randomized fusion instances against an independent brute-force
/// weighted mean, plus exact permutation invariance and idempotence.
fn check_fusion_oracle(quick: bool) -> Result<(), String> {
    let instances = if quick { 100 } else { 1000 };
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..instances {
        let n_tables = rng.gen_range(1..=10usize);
        let n_keys = rng.gen_range(1..=200usize);
        let keys: Vec<(AbstractState, MoveAction)> = (0..n_keys)
            .map(|_| {
                (
                    AbstractState::new(
                        rng.gen_range(1..30),
                        rng.gen_range(1..30),
                        rng.gen_range(1..37),
                    ),
                    ALL_ACTIONS[rng.gen_range(0..9)],
                )
            })
            .collect();
        let tables: Vec<QTable> = (0..n_tables)
            .map(|_| {
                let mut t = QTable::new(TableTag::Behavior(Behavior::SoloHerding));
                for &(s, a) in &keys {
                    if rng.gen::<f64>() < 0.7 {
                        let visits = rng.gen_range(0..1000u64);
                        let q = if visits == 0 { 0.0 } else { rng.gen_range(-100.0..100.0) };
                        t.set(s, a, QEntry { q, visits });
                    }
                }
                t
            })
            .collect();
        let refs: Vec<&QTable> = tables.iter().collect();
        let fused = fuse_tables(&refs).map_err(|e| e.to_string())?;

        // Brute-force oracle in input order.
        for &(s, a) in &keys {
            let mut num = 0.0;
            let mut den = 0u64;
            for t in &tables {
                let e = t.get(s, a);
                num += e.q * e.visits as f64;
                den += e.visits;
            }
            let got = fused.get(s, a);
            if den == 0 {
                if got.q != 0.0 || got.visits != 0 {
                    return err("zero-visit key not (0, 0)");
                }
            } else {
                let want = num / den as f64;
                if (got.q - want).abs() > 1e-12 {
                    return err(format!("fusion mismatch: got {}, want {want}", got.q));
                }
                if got.visits != den {
                    return err("fused visit sum mismatch");
                }
            }
        }

        // Permutation invariance must be exact.
        let mut perm: Vec<&QTable> = tables.iter().collect();
        perm.reverse();
        let fused_perm = fuse_tables(&perm).map_err(|e| e.to_string())?;
        if fused_perm != fused {
            return err("fusion is not permutation invariant");
        }

        // Idempotence: fusing N copies of one table keeps its q values.
        let copies: Vec<&QTable> = std::iter::repeat_n(&tables[0], 3).collect();
        let idem = fuse_tables(&copies).map_err(|e| e.to_string())?;
        for ((s, a), e) in tables[0].iter() {
            let f = idem.get(*s, *a);
            if e.visits > 0 && f.q != e.q {
                return err("fusion of identical tables changed a q value");
            }
            if f.visits != e.visits.saturating_mul(3) {
                return err("idempotent fusion visit scaling violated");
            }
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// 5x5 gridworld value-iteration oracle
// ---------------------------------------------------------------------------

const ORACLE_SIDE: i32 = 5;
const ORACLE_GOAL: Cell = Cell { x: 4, y: 4 };
const ORACLE_GAMMA: f64 = 0.9;
const ORACLE_REWARD: f64 = 100.0;

fn oracle_next(pos: Cell, action: MoveAction) -> Cell {
    let c = action.apply(pos);
    if c.x < 0 || c.y < 0 || c.x >= ORACLE_SIDE || c.y >= ORACLE_SIDE {
        pos
    } else {
        c
    }
}

fn cell_state(c: Cell) -> AbstractState {
    AbstractState::new(c.x as u32 + 1, c.y as u32 + 1, 1)
}

/// Value iteration to the exact fixed point; returns, per non-goal cell, the
/// set of optimal actions.
fn value_iteration_optimal_sets() -> Vec<(Cell, Vec<MoveAction>)> {
    let cells: Vec<Cell> = (0..ORACLE_SIDE)
        .flat_map(|x| (0..ORACLE_SIDE).map(move |y| Cell::new(x, y)))
        .collect();
    let idx = |c: Cell| (c.x * ORACLE_SIDE + c.y) as usize;
    let mut values = vec![0.0f64; cells.len()];
    loop {
        let mut next = values.clone();
        let mut delta = 0.0f64;
        for &c in &cells {
            if c == ORACLE_GOAL {
                next[idx(c)] = 0.0;
                continue;
            }
            let mut best = f64::NEG_INFINITY;
            for a in ALL_ACTIONS {
                let n = oracle_next(c, a);
                let r = if n == ORACLE_GOAL { ORACLE_REWARD } else { 0.0 };
                let q = r + ORACLE_GAMMA * values[idx(n)];
                if q > best {
                    best = q;
                }
            }
            delta = delta.max((best - values[idx(c)]).abs());
            next[idx(c)] = best;
        }
        values = next;
        if delta == 0.0 {
            break;
        }
    }
    cells
        .into_iter()
        .filter(|c| *c != ORACLE_GOAL)
        .map(|c| {
            let mut qa: Vec<(MoveAction, f64)> = ALL_ACTIONS
                .iter()
                .map(|&a| {
                    let n = oracle_next(c, a);
                    let r = if n == ORACLE_GOAL { ORACLE_REWARD } else { 0.0 };
                    (a, r + ORACLE_GAMMA * values[idx(n)])
                })
                .collect();
            let best = qa.iter().map(|(_, q)| *q).fold(f64::NEG_INFINITY, f64::max);
            qa.retain(|(_, q)| (best - *q).abs() <= 1e-9);
            (c, qa.into_iter().map(|(a, _)| a).collect())
        })
        .collect()
}

/// Q-learning on the oracle gridworld: a pure random walk driving `q_update`
/// with a learning rate of 1 reaches the exact fixed point, and the greedy
/// policy must then be optimal at every state.
fn check_greedy_policy_oracle(quick: bool) -> Result<(), String> {
    let optimal = value_iteration_optimal_sets();
    let seeds = if quick { 3 } else { 10 };
    let updates = 20_000;
    for seed in 0..seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let params = LearningParams {
            alpha: 1.0,
            gamma: ORACLE_GAMMA,
            ..LearningParams::default()
        };
        let mut table = QTable::new(TableTag::Behavior(Behavior::SoloHerding));
        let mut pos = Cell::new(0, 0);
        for _ in 0..updates {
            if pos == ORACLE_GOAL {
                pos = Cell::new(rng.gen_range(0..ORACLE_SIDE), rng.gen_range(0..ORACLE_SIDE));
                continue;
            }
            let a = ALL_ACTIONS[rng.gen_range(0..9)];
            let n = oracle_next(pos, a);
            let r = if n == ORACLE_GOAL { ORACLE_REWARD } else { 0.0 };
            // Terminal: the goal state's value is pinned to zero by never
            // updating from it, so bootstrap reads 0 there.
            q_update(&mut table, cell_state(pos), a, r, cell_state(n), &params);
            pos = n;
        }
        for (c, optimal_actions) in &optimal {
            let greedy = table.greedy(cell_state(*c));
            if !optimal_actions.contains(&greedy) {
                return err(format!(
                    "seed {seed}: greedy action {greedy:?} at {c} is not optimal ({optimal_actions:?})"
                ));
            }
        }
    }
    Ok(())
}

fn check_argmax_invariance(_quick: bool) -> Result<(), String> {
    // Dyadic q values and shift keep f64 addition exact, so the greedy
    // choice must be exactly preserved.
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..2000 {
        let s = AbstractState::new(1, 2, 3);
        let mut t = QTable::new(TableTag::Behavior(Behavior::SoloHerding));
        let mut shifted = QTable::new(TableTag::Behavior(Behavior::SoloHerding));
        let shift = 2.0f64.powi(rng.gen_range(0..8));
        for a in ALL_ACTIONS {
            let q = rng.gen_range(0..256) as f64 * 0.125;
            t.set(s, a, QEntry { q, visits: 1 });
            shifted.set(s, a, QEntry { q: q + shift, visits: 1 });
        }
        if t.greedy(s) != shifted.greedy(s) {
            return err("constant shift changed the greedy action");
        }
    }
    Ok(())
}

fn desk_map() -> (GridMap, WorldState) {
    let map = build_map(30, 20, Rect::new(12, 12, 17, 17), 77).expect("valid map");
    let world = spawn_world(&map, 16, 2, 77).expect("valid world");
    (map, world)
}

fn check_world_occupancy(quick: bool) -> Result<(), String> {
    let steps = if quick { 10_000 } else { 100_000 };
    let (map, mut world) = desk_map();
    let params = CowParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let cows0 = world.cows.len();
    let agents0 = world.agents.len();
    let mut last_success = success_percent(&world, &map).map_err(|e| e.to_string())?;
    for i in 0..steps {
        let actions: Vec<MoveAction> =
            (0..agents0).map(|_| ALL_ACTIONS[rng.gen_range(0..9)]).collect();
        world = step_world(&world, &map, &actions, &params).map_err(|e| e.to_string())?;
        check_world(&world, &map).map_err(|e| format!("step {i}: {e}"))?;
        if world.cows.len() != cows0 || world.agents.len() != agents0 {
            return err(format!("entity conservation violated at step {i}"));
        }
        let s = success_percent(&world, &map).map_err(|e| e.to_string())?;
        if s < last_success {
            return err(format!("success decreased at step {i}: {last_success} -> {s}"));
        }
        last_success = s;
    }
    Ok(())
}

fn check_world_determinism(_quick: bool) -> Result<(), String> {
    let run = || -> Result<Vec<WorldState>, String> {
        let (map, mut world) = desk_map();
        let params = CowParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut states = Vec::new();
        for _ in 0..400 {
            let actions: Vec<MoveAction> =
                (0..world.agents.len()).map(|_| ALL_ACTIONS[rng.gen_range(0..9)]).collect();
            world = step_world(&world, &map, &actions, &params).map_err(|e| e.to_string())?;
            states.push(world.clone());
        }
        Ok(states)
    };
    if run()? != run()? {
        return err("identical seeds and actions produced different trajectories");
    }
    Ok(())
}

fn check_prediction_consistency(_quick: bool) -> Result<(), String> {
    // With the random weight zeroed, the world's cow step must equal the
    // predictor exactly: they share one implementation.
    let (map, world) = desk_map();
    let params = CowParams { w_random: 0.0, ..CowParams::default() };
    let from_world = update_cows(&world, &map, &params);
    let predicted = predict_cows(&world.cows, &world.agents, &map, &params);
    if from_world != predicted {
        return err("predictor diverges from the world cow model");
    }
    Ok(())
}

fn check_metric_closed_forms(_quick: bool) -> Result<(), String> {
    let constant = |v: f64| {
        LearningCurve::new((0..100).map(|i| (i as u64 * 10, v)).collect()).expect("valid curve")
    };
    let c29 = constant(29.0);
    let c58 = constant(58.0);
    match transfer_rate(&c29, &c29).map_err(|e| e.to_string())? {
        TransferOutcome::Rate(0.0) => {}
        other => return err(format!("identical curves: expected rate 0, got {other:?}")),
    }
    match transfer_rate(&c58, &c29).map_err(|e| e.to_string())? {
        TransferOutcome::Rate(1.0) => {}
        other => return err(format!("doubled curve: expected rate 1, got {other:?}")),
    }
    let j = jumpstart(&c29, 0.05).map_err(|e| e.to_string())?;
    if j != 29.0 {
        return err(format!("jumpstart of constant 29 curve: got {j}"));
    }
    Ok(())
}
