//! The cooperative goal-search benchmark: three agents with per-area
//! Q-tables, per-step visit-weighted fusion, and the trial protocol behind
//! the comparison curves.

use std::collections::{BTreeMap, HashSet};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::abstraction::AbstractState;
use crate::error::{Error, Result};
use crate::geom::{Cell, Rect, Vec2};
use crate::learning::{fuse_contributions, QEntry, QTable, TableTag};
use crate::rng::named_stream;
use crate::world::MoveAction;

/// The four-move action space, in canonical index order.
pub const GS_ACTIONS: [MoveAction; 4] =
    [MoveAction::East, MoveAction::North, MoveAction::West, MoveAction::South];

/// Episodes reported by the comparison tables.
pub const REPORT_EPISODES: [usize; 6] = [32, 94, 218, 280, 404, 466];

/// The goal-search arena: a walled square with obstacles, three 10x10 start
/// areas, and a goal region.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GoalWorld {
    pub side: i32,
    pub obstacles: HashSet<Cell>,
    pub starts: [Rect; 3],
    pub goal: Rect,
}

impl GoalWorld {
    pub fn in_bounds(&self, c: Cell) -> bool {
        c.x >= 0 && c.y >= 0 && c.x < self.side && c.y < self.side
    }

    pub fn is_free(&self, c: Cell) -> bool {
        self.in_bounds(c) && !self.obstacles.contains(&c)
    }

    pub fn goal_center(&self) -> Vec2 {
        self.goal.center()
    }

    /// Which of the three areas a cell belongs to: the map's vertical
    /// thirds, ordered like the start areas.
    pub fn area_of(&self, c: Cell) -> u8 {
        let third = self.side / 3;
        ((c.x / third).clamp(0, 2)) as u8
    }
}

/// Structural checks: start areas and goal disjoint and obstacle-free.
pub fn validate_goal_world(w: &GoalWorld) -> Result<()> {
    let mut regions: Vec<(&str, Rect)> = vec![("goal", w.goal)];
    for (i, r) in w.starts.iter().enumerate() {
        regions.push((["R1", "R2", "R3"][i], *r));
    }
    for (name, r) in &regions {
        if !(r.is_valid() && w.in_bounds(Cell::new(r.x1, r.y1)) && w.in_bounds(Cell::new(r.x2, r.y2))) {
            return Err(Error::Config(format!("{name} region {r:?} is out of bounds")));
        }
        if r.cells().any(|c| w.obstacles.contains(&c)) {
            return Err(Error::Config(format!("{name} region overlaps an obstacle")));
        }
    }
    for i in 0..regions.len() {
        for j in (i + 1)..regions.len() {
            let (an, a) = regions[i];
            let (bn, b) = regions[j];
            let disjoint = a.x2 < b.x1 || b.x2 < a.x1 || a.y2 < b.y1 || b.y2 < a.y1;
            if !disjoint {
                return Err(Error::Config(format!("regions {an} and {bn} overlap")));
            }
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Map file: world snapshot format plus `G x1 y1 x2 y2` and `R1/R2/R3`
// records (the corral header fields are unused here and written as zeros).
// ---------------------------------------------------------------------------

const BUILTIN_MAP: &str = include_str!("../data/goalsearch.map");

pub fn parse_goal_map(text: &str) -> Result<GoalWorld> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines.next().ok_or_else(|| Error::Parse("empty goal map".into()))?;
    let tok: Vec<&str> = header.split_whitespace().collect();
    if tok.len() != 7 || tok[2] != "corral" {
        return Err(Error::Parse(format!("bad goal map header: {header}")));
    }
    let num = |s: &str| -> Result<i32> {
        s.parse().map_err(|_| Error::Parse(format!("bad number `{s}` in goal map")))
    };
    let side = num(tok[0])?;
    let declared = num(tok[1])? as usize;

    let mut obstacles = HashSet::new();
    let mut goal: Option<Rect> = None;
    let mut starts: [Option<Rect>; 3] = [None, None, None];
    for line in lines {
        let t: Vec<&str> = line.split_whitespace().collect();
        match t.as_slice() {
            ["O", x, y] => {
                obstacles.insert(Cell::new(num(x)?, num(y)?));
            }
            ["G", x1, y1, x2, y2] => {
                goal = Some(Rect::new(num(x1)?, num(y1)?, num(x2)?, num(y2)?));
            }
            [r @ ("R1" | "R2" | "R3"), x1, y1, x2, y2] => {
                let idx = match *r {
                    "R1" => 0,
                    "R2" => 1,
                    _ => 2,
                };
                starts[idx] = Some(Rect::new(num(x1)?, num(y1)?, num(x2)?, num(y2)?));
            }
            _ => return Err(Error::Parse(format!("bad goal map record: {line}"))),
        }
    }
    if obstacles.len() != declared {
        return Err(Error::Parse(format!(
            "goal map declares {declared} obstacles, found {}",
            obstacles.len()
        )));
    }
    let goal = goal.ok_or_else(|| Error::Parse("goal map lacks a G record".into()))?;
    let starts = [
        starts[0].ok_or_else(|| Error::Parse("goal map lacks R1".into()))?,
        starts[1].ok_or_else(|| Error::Parse("goal map lacks R2".into()))?,
        starts[2].ok_or_else(|| Error::Parse("goal map lacks R3".into()))?,
    ];
    let world = GoalWorld { side, obstacles, starts, goal };
    validate_goal_world(&world)?;
    Ok(world)
}

pub fn goal_map_to_string(w: &GoalWorld) -> String {
    let mut out = format!("{} {} corral 0 0 0 0\n", w.side, w.obstacles.len());
    let mut obs: Vec<Cell> = w.obstacles.iter().copied().collect();
    obs.sort();
    for o in obs {
        out.push_str(&format!("O {} {}\n", o.x, o.y));
    }
    let g = w.goal;
    out.push_str(&format!("G {} {} {} {}\n", g.x1, g.y1, g.x2, g.y2));
    for (i, r) in w.starts.iter().enumerate() {
        out.push_str(&format!("R{} {} {} {} {}\n", i + 1, r.x1, r.y1, r.x2, r.y2));
    }
    out
}

/// The bundled arena: a horizontal barrier with one corridor above the
/// middle start area, goal behind the barrier.
pub fn builtin_goal_world() -> GoalWorld {
    parse_goal_map(BUILTIN_MAP).expect("bundled goal map is valid")
}

// ---------------------------------------------------------------------------
// State calculation
// ---------------------------------------------------------------------------

/// Goal-search state: distance-to-goal bin and the bin of the angle between
/// the ray agent->goal and the positive x-axis, measured in [0, 360).
///
/// The pair is carried in an `AbstractState` with the unused middle
/// component pinned to 1.
pub fn gs_state(pos: Cell, goal_center: Vec2, d: f64, a: f64, side: i32) -> AbstractState {
    let v = goal_center - pos.to_vec2();
    let dist = v.norm();
    let diag = (side as f64) * std::f64::consts::SQRT_2;
    let dist_bins = (diag / d).floor().max(1.0) as u32;
    let dist_bin = ((dist / d).ceil() as u32).max(1).min(dist_bins);

    let angle_bins = (360.0 / a).floor().max(1.0) as u32;
    let theta = if dist == 0.0 {
        0.0
    } else {
        let t = v.y.atan2(v.x).to_degrees();
        if t < 0.0 {
            t + 360.0
        } else {
            t
        }
    };
    let angle_bin = ((theta / a).ceil() as u32).max(1).min(angle_bins);
    AbstractState::new(dist_bin, 1, angle_bin)
}

// ---------------------------------------------------------------------------
// Episode engine
// ---------------------------------------------------------------------------

/// Benchmark parameters.
#[derive(Debug, Clone, Copy)]
pub struct GsParams {
    pub d: f64,
    pub a: f64,
    pub alpha: f64,
    pub gamma: f64,
    pub epsilon0: f64,
    pub epsilon_min: f64,
    /// Episodes over which epsilon decays linearly.
    pub decay_episodes: u64,
    pub step_cap: u32,
    pub fusion: bool,
    pub goal_reward: f64,
}

impl Default for GsParams {
    fn default() -> Self {
        GsParams {
            d: 20.0,
            a: 15.0,
            alpha: 0.3,
            gamma: 0.95,
            epsilon0: 1.0,
            epsilon_min: 0.05,
            decay_episodes: 150,
            step_cap: 2000,
            fusion: true,
            goal_reward: 100.0,
        }
    }
}

fn gs_epsilon(episode: u64, p: &GsParams) -> f64 {
    if p.decay_episodes == 0 || episode >= p.decay_episodes {
        return p.epsilon_min;
    }
    let frac = episode as f64 / p.decay_episodes as f64;
    p.epsilon0 + (p.epsilon_min - p.epsilon0) * frac
}

/// One agent's learning state: a Q-table per area holding its own
/// experience (its own visit counts are exactly the fusion weights).
#[derive(Debug, Clone)]
pub struct GsAgent {
    pub tables: [QTable; 3],
    rng: ChaCha8Rng,
    pos: Cell,
    steps: u32,
    done: bool,
}

type FusedView = BTreeMap<(AbstractState, MoveAction), QEntry>;

/// The team: per-agent tables plus the incrementally maintained fused view
/// per area. The view always equals `fuse_tables` over the agents' tables
/// (a key is recomputed from its three contributions whenever one changes).
#[derive(Debug, Clone)]
pub struct GsTeam {
    pub agents: [GsAgent; 3],
    fused: [FusedView; 3],
}

impl GsTeam {
    pub fn new(master_seed: u64, trial: usize) -> Self {
        let mk_agent = |i: usize| GsAgent {
            tables: [
                QTable::new(TableTag::Area(0)),
                QTable::new(TableTag::Area(1)),
                QTable::new(TableTag::Area(2)),
            ],
            rng: named_stream(master_seed, &format!("gs-trial{trial}-agent{i}")),
            pos: Cell::new(0, 0),
            steps: 0,
            done: false,
        };
        GsTeam {
            agents: [mk_agent(0), mk_agent(1), mk_agent(2)],
            fused: [BTreeMap::new(), BTreeMap::new(), BTreeMap::new()],
        }
    }

    fn refresh_fused_key(&mut self, area: usize, s: AbstractState, a: MoveAction) {
        let mut contributions: Vec<(f64, u64)> = Vec::with_capacity(3);
        for agent in &self.agents {
            let e = agent.tables[area].get(s, a);
            if e.visits > 0 {
                contributions.push((e.q, e.visits));
            }
        }
        self.fused[area].insert((s, a), fuse_contributions(&mut contributions));
    }

    /// The value an agent acts on: the fused view when fusion is enabled,
    /// the agent's own table otherwise.
    fn effective_q(
        &self,
        agent: usize,
        area: usize,
        s: AbstractState,
        a: MoveAction,
        fusion: bool,
    ) -> f64 {
        if fusion {
            self.fused[area].get(&(s, a)).map_or(0.0, |e| e.q)
        } else {
            self.agents[agent].tables[area].get(s, a).q
        }
    }

    fn effective_max(&self, agent: usize, area: usize, s: AbstractState, fusion: bool) -> f64 {
        let mut best = 0.0f64;
        for a in GS_ACTIONS {
            let q = self.effective_q(agent, area, s, a, fusion);
            if q > best {
                best = q;
            }
        }
        best
    }

    /// Greedy with a uniform random tie-break among the maximal actions: a
    /// fixed-index tie-break would give fresh (all-zero) states a permanent
    /// directional drift.
    fn effective_greedy(
        &mut self,
        agent: usize,
        area: usize,
        s: AbstractState,
        fusion: bool,
    ) -> MoveAction {
        let mut best_q = f64::NEG_INFINITY;
        let mut ties: [MoveAction; 4] = [MoveAction::Skip; 4];
        let mut n_ties = 0usize;
        for &a in &GS_ACTIONS {
            let q = self.effective_q(agent, area, s, a, fusion);
            if q > best_q {
                best_q = q;
                ties[0] = a;
                n_ties = 1;
            } else if q == best_q {
                ties[n_ties] = a;
                n_ties += 1;
            }
        }
        if n_ties == 1 {
            ties[0]
        } else {
            ties[self.agents[agent].rng.gen_range(0..n_ties)]
        }
    }

    /// Direct access to a fused view for tests.
    pub fn fused_view(&self, area: usize) -> &FusedView {
        &self.fused[area]
    }
}

/// Run one synchronized episode: every agent starts from a uniform random
/// cell of its start area and walks until it reaches the goal or the step
/// cap; Q-updates go to the table of the area the agent currently occupies,
/// and every update refreshes the fused view at the touched key.
/// Returns the steps each agent took.
pub fn run_episode(
    world: &GoalWorld,
    team: &mut GsTeam,
    params: &GsParams,
    episode: u64,
) -> [u32; 3] {
    let goal_center = world.goal_center();
    for (i, agent) in team.agents.iter_mut().enumerate() {
        let r = world.starts[i];
        let x = agent.rng.gen_range(r.x1..=r.x2);
        let y = agent.rng.gen_range(r.y1..=r.y2);
        agent.pos = Cell::new(x, y);
        agent.steps = 0;
        agent.done = world.goal.contains(agent.pos);
    }
    let eps = gs_epsilon(episode, params);

    for _ in 0..params.step_cap {
        if team.agents.iter().all(|a| a.done) {
            break;
        }
        for i in 0..3 {
            if team.agents[i].done {
                continue;
            }
            let pos = team.agents[i].pos;
            let area = world.area_of(pos) as usize;
            let s = gs_state(pos, goal_center, params.d, params.a, world.side);

            let explore = team.agents[i].rng.gen::<f64>() < eps;
            let action = if explore {
                GS_ACTIONS[team.agents[i].rng.gen_range(0..GS_ACTIONS.len())]
            } else {
                team.effective_greedy(i, area, s, params.fusion)
            };

            let next = action.apply(pos);
            let next = if world.is_free(next) { next } else { pos };
            let reached = world.goal.contains(next);
            let s_next = gs_state(next, goal_center, params.d, params.a, world.side);
            let next_area = world.area_of(next) as usize;

            let reward = if reached { params.goal_reward } else { 0.0 };
            let max_next = if reached {
                0.0
            } else {
                team.effective_max(i, next_area, s_next, params.fusion)
            };
            let entry = team.agents[i].tables[area].get(s, action);
            let updated = QEntry {
                q: entry.q + params.alpha * (reward + params.gamma * max_next - entry.q),
                visits: entry.visits.saturating_add(1),
            };
            team.agents[i].tables[area].set(s, action, updated);
            team.refresh_fused_key(area, s, action);

            team.agents[i].pos = next;
            team.agents[i].steps += 1;
            if reached {
                team.agents[i].done = true;
            }
        }
    }
    for agent in team.agents.iter_mut() {
        if !agent.done {
            agent.steps = params.step_cap;
            agent.done = true;
        }
    }
    [team.agents[0].steps, team.agents[1].steps, team.agents[2].steps]
}

// ---------------------------------------------------------------------------
// Experiment protocol
// ---------------------------------------------------------------------------

/// Trial/episode counts and seeds for the benchmark.
#[derive(Debug, Clone)]
pub struct TrialConfig {
    pub episodes: usize,
    pub trials: usize,
    pub params: GsParams,
    pub seed: u64,
}

impl Default for TrialConfig {
    fn default() -> Self {
        TrialConfig { episodes: 500, trials: 40, params: GsParams::default(), seed: 1 }
    }
}

impl TrialConfig {
    pub fn validate(&self) -> Result<()> {
        if self.episodes == 0 || self.trials == 0 || self.params.step_cap == 0 {
            return Err(Error::Config("episodes, trials, and step cap must be positive".into()));
        }
        Ok(())
    }
}

/// Per-agent mean steps per episode, averaged over trials.
#[derive(Debug, Clone, PartialEq)]
pub struct GsCurves {
    pub episodes: usize,
    pub mean_steps: [Vec<f64>; 3],
}

impl GsCurves {
    /// Mean steps of `agent` (0-based) at a 1-based episode index.
    pub fn at_episode(&self, agent: usize, episode_1based: usize) -> f64 {
        self.mean_steps[agent][episode_1based - 1]
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("# herdsim goalsearch curve v1\nepisode,agent,mean_steps\n");
        for ep in 0..self.episodes {
            for agent in 0..3 {
                out.push_str(&format!("{},{},{}\n", ep + 1, agent + 1, self.mean_steps[agent][ep]));
            }
        }
        out
    }
}

/// Run one trial and return steps[agent][episode].
pub fn run_trial(world: &GoalWorld, config: &TrialConfig, trial: usize) -> [Vec<u32>; 3] {
    let mut team = GsTeam::new(config.seed, trial);
    let mut steps: [Vec<u32>; 3] = [
        Vec::with_capacity(config.episodes),
        Vec::with_capacity(config.episodes),
        Vec::with_capacity(config.episodes),
    ];
    for ep in 0..config.episodes {
        let s = run_episode(world, &mut team, &config.params, ep as u64);
        for (i, v) in s.iter().enumerate() {
            steps[i].push(*v);
        }
    }
    steps
}

/// The full protocol: independent trials (parallelized; per-trial streams
/// derive from the master seed, so execution order cannot matter), averaged
/// per episode index.
pub fn run_goalsearch_experiment(world: &GoalWorld, config: &TrialConfig) -> Result<GsCurves> {
    config.validate()?;
    let trials: Vec<[Vec<u32>; 3]> = (0..config.trials)
        .into_par_iter()
        .map(|t| run_trial(world, config, t))
        .collect();

    let mut mean_steps: [Vec<f64>; 3] = [
        vec![0.0; config.episodes],
        vec![0.0; config.episodes],
        vec![0.0; config.episodes],
    ];
    // Sum in trial order for bit-stable aggregates.
    for trial in &trials {
        for agent in 0..3 {
            for ep in 0..config.episodes {
                mean_steps[agent][ep] += trial[agent][ep] as f64;
            }
        }
    }
    for agent_curve in mean_steps.iter_mut() {
        for v in agent_curve.iter_mut() {
            *v /= config.trials as f64;
        }
    }
    Ok(GsCurves { episodes: config.episodes, mean_steps })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learning::fuse_tables;

    #[test]
    fn builtin_map_parses_and_validates() {
        let w = builtin_goal_world();
        assert_eq!(w.side, 300);
        assert_eq!(w.obstacles.len(), 239);
        validate_goal_world(&w).unwrap();
        // Round-trips through the serializer.
        let text = goal_map_to_string(&w);
        assert_eq!(parse_goal_map(&text).unwrap(), w);
    }

    #[test]
    fn area_attribution_is_total_and_matches_thirds() {
        let w = builtin_goal_world();
        assert_eq!(w.area_of(Cell::new(0, 0)), 0);
        assert_eq!(w.area_of(Cell::new(99, 250)), 0);
        assert_eq!(w.area_of(Cell::new(100, 0)), 1);
        assert_eq!(w.area_of(Cell::new(199, 10)), 1);
        assert_eq!(w.area_of(Cell::new(200, 10)), 2);
        assert_eq!(w.area_of(Cell::new(299, 299)), 2);
        // Start areas sit in their own thirds.
        for (i, r) in w.starts.iter().enumerate() {
            assert_eq!(w.area_of(Cell::new(r.x1, r.y1)), i as u8);
            assert_eq!(w.area_of(Cell::new(r.x2, r.y2)), i as u8);
        }
    }

    #[test]
    fn gs_state_examples() {
        // Distance 50 with d=20 -> bin 3.
        let s = gs_state(Cell::new(0, 0), Vec2::new(30.0, 40.0), 20.0, 10.0, 300);
        assert_eq!(s.dist_target, 3);
        // Goal due east -> angle bin 1.
        let east = gs_state(Cell::new(10, 10), Vec2::new(40.0, 10.0), 20.0, 10.0, 300);
        assert_eq!(east.angle, 1);
        // Goal due north with a=10 -> bin 9.
        let north = gs_state(Cell::new(10, 10), Vec2::new(10.0, 60.0), 20.0, 10.0, 300);
        assert_eq!(north.angle, 9);
        // At the goal center: distance bin 1, angle defined as 0.
        let at = gs_state(Cell::new(30, 40), Vec2::new(30.0, 40.0), 20.0, 10.0, 300);
        assert_eq!((at.dist_target, at.angle), (1, 1));
        // West of the goal center: angle wraps into (180, 360).
        let west_of = gs_state(Cell::new(50, 10), Vec2::new(10.0, 9.0), 20.0, 10.0, 300);
        assert!(west_of.angle > 18);
    }

    fn toy_world(goal: Rect, walled: bool) -> GoalWorld {
        let mut obstacles = HashSet::new();
        if walled {
            for x in (goal.x1 - 1)..=(goal.x2 + 1) {
                obstacles.insert(Cell::new(x, goal.y1 - 1));
                obstacles.insert(Cell::new(x, goal.y2 + 1));
            }
            for y in (goal.y1 - 1)..=(goal.y2 + 1) {
                obstacles.insert(Cell::new(goal.x1 - 1, y));
                obstacles.insert(Cell::new(goal.x2 + 1, y));
            }
        }
        GoalWorld {
            side: 60,
            obstacles,
            starts: [Rect::new(2, 2, 5, 5), Rect::new(22, 2, 25, 5), Rect::new(42, 2, 45, 5)],
            goal,
        }
    }

    #[test]
    fn agent_starting_inside_goal_takes_zero_steps() {
        // Start area equal to the goal region (validation bypassed on
        // purpose: the contract is about placement, not map hygiene).
        let goal = Rect::new(22, 2, 25, 5);
        let mut w = toy_world(goal, false);
        w.starts[1] = goal;
        let mut team = GsTeam::new(3, 0);
        let params = GsParams { step_cap: 50, ..GsParams::default() };
        let steps = run_episode(&w, &mut team, &params, 0);
        assert_eq!(steps[1], 0);
    }

    #[test]
    fn unreachable_goal_hits_exactly_the_cap() {
        let w = toy_world(Rect::new(30, 30, 33, 33), true);
        let mut team = GsTeam::new(4, 0);
        let params = GsParams { step_cap: 100, ..GsParams::default() };
        let steps = run_episode(&w, &mut team, &params, 0);
        assert_eq!(steps, [100, 100, 100]);
    }

    #[test]
    fn fusion_gating_identical_when_no_reward_exists() {
        // With the goal walled off no q-value ever becomes nonzero, so the
        // fused view of zeros cannot change any decision: both arms must
        // produce identical trajectories for every episode.
        let w = toy_world(Rect::new(30, 30, 33, 33), true);
        let params_on = GsParams { step_cap: 60, fusion: true, ..GsParams::default() };
        let params_off = GsParams { step_cap: 60, fusion: false, ..GsParams::default() };
        let mut on = GsTeam::new(11, 0);
        let mut off = GsTeam::new(11, 0);
        for ep in 0..5 {
            let a = run_episode(&w, &mut on, &params_on, ep);
            let b = run_episode(&w, &mut off, &params_off, ep);
            assert_eq!(a, b);
        }
    }

    #[test]
    fn incremental_fused_view_equals_full_fusion() {
        let w = builtin_goal_world();
        let mut team = GsTeam::new(7, 0);
        let params = GsParams { step_cap: 400, ..GsParams::default() };
        for ep in 0..3 {
            run_episode(&w, &mut team, &params, ep);
        }
        for area in 0..3 {
            let tables: Vec<&QTable> = team.agents.iter().map(|a| &a.tables[area]).collect();
            let fused = fuse_tables(&tables).unwrap();
            // Every key in the batch fusion must match the incremental view
            // bit for bit.
            for ((s, a), e) in fused.iter() {
                let inc = team.fused_view(area).get(&(*s, *a));
                if e.visits == 0 {
                    if let Some(v) = inc {
                        assert_eq!(v.visits, 0);
                    }
                    continue;
                }
                let v = inc.expect("incremental view has the key");
                assert_eq!(v.q.to_bits(), e.q.to_bits());
                assert_eq!(v.visits, e.visits);
            }
        }
    }

    #[test]
    fn experiment_is_deterministic_under_parallel_trials() {
        let w = builtin_goal_world();
        let config = TrialConfig {
            episodes: 6,
            trials: 4,
            params: GsParams { step_cap: 150, ..GsParams::default() },
            seed: 5,
        };
        let a = run_goalsearch_experiment(&w, &config).unwrap();
        let b = run_goalsearch_experiment(&w, &config).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.to_csv(), b.to_csv());
    }

    #[test]
    fn trial_config_validation() {
        let c = TrialConfig { trials: 0, ..TrialConfig::default() };
        assert!(c.validate().is_err());
    }
}
