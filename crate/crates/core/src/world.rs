//! The herding gridworld: terrain, flocking cows, agent movement,
//! perception, and the corral success measure.

use std::collections::HashSet;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geom::{chebyshev, Cell, Rect, Vec2};
use crate::rng::named_stream;

/// Line-of-sight radius (Chebyshev) of every player agent.
pub const SENSE_RADIUS: i32 = 8;

/// One of the nine moves: skip plus the eight compass directions.
///
/// The discriminant is the canonical action index used by every
/// lowest-index tie-break in the crate. Directions are ordered
/// counterclockwise from East.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[repr(u8)]
pub enum MoveAction {
    Skip = 0,
    East = 1,
    NorthEast = 2,
    North = 3,
    NorthWest = 4,
    West = 5,
    SouthWest = 6,
    South = 7,
    SouthEast = 8,
}

/// All nine actions in index order.
pub const ALL_ACTIONS: [MoveAction; 9] = [
    MoveAction::Skip,
    MoveAction::East,
    MoveAction::NorthEast,
    MoveAction::North,
    MoveAction::NorthWest,
    MoveAction::West,
    MoveAction::SouthWest,
    MoveAction::South,
    MoveAction::SouthEast,
];

impl MoveAction {
    /// Unit displacement vector of the move.
    pub fn displacement(self) -> (i32, i32) {
        match self {
            MoveAction::Skip => (0, 0),
            MoveAction::East => (1, 0),
            MoveAction::NorthEast => (1, 1),
            MoveAction::North => (0, 1),
            MoveAction::NorthWest => (-1, 1),
            MoveAction::West => (-1, 0),
            MoveAction::SouthWest => (-1, -1),
            MoveAction::South => (0, -1),
            MoveAction::SouthEast => (1, -1),
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<MoveAction> {
        ALL_ACTIONS.get(i).copied()
    }

    pub fn apply(self, c: Cell) -> Cell {
        let (dx, dy) = self.displacement();
        c.offset(dx, dy)
    }
}

/// Quantize a preferred displacement to the nearest of the nine unit
/// displacements by Euclidean distance; ties go to the lower action index.
///
/// Used for cow motion: a weak preference (max projection below 0.5) is
/// nearest to the zero vector and quantizes to skip.
pub fn quantize_euclidean(v: Vec2) -> MoveAction {
    let mut best = MoveAction::Skip;
    let mut best_d2 = f64::INFINITY;
    for a in ALL_ACTIONS {
        let (dx, dy) = a.displacement();
        let ddx = v.x - dx as f64;
        let ddy = v.y - dy as f64;
        let d2 = ddx * ddx + ddy * ddy;
        if d2 < best_d2 {
            best_d2 = d2;
            best = a;
        }
    }
    best
}

/// Quantize a nonzero vector to the compass direction with minimal angular
/// distance (ties to the lower action index); the zero vector becomes skip.
///
/// Used for joint-action abstraction, where only the direction of the summed
/// member displacements matters.
pub fn quantize_angular(v: Vec2) -> MoveAction {
    if v.x == 0.0 && v.y == 0.0 {
        return MoveAction::Skip;
    }
    let mut best = MoveAction::Skip;
    let mut best_angle = f64::INFINITY;
    for a in &ALL_ACTIONS[1..] {
        let (dx, dy) = a.displacement();
        let ang = crate::geom::angle_between(v, Vec2::new(dx as f64, dy as f64));
        if ang < best_angle - 1e-12 {
            best_angle = ang;
            best = *a;
        }
    }
    best
}

/// Static terrain: a square grid with obstacles and a corral rectangle.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GridMap {
    pub side: i32,
    pub obstacles: HashSet<Cell>,
    pub corral: Rect,
}

impl GridMap {
    pub fn in_bounds(&self, c: Cell) -> bool {
        c.x >= 0 && c.y >= 0 && c.x < self.side && c.y < self.side
    }

    pub fn is_obstacle(&self, c: Cell) -> bool {
        self.obstacles.contains(&c)
    }

    /// A cell an entity may stand on: in bounds and not an obstacle.
    pub fn is_free(&self, c: Cell) -> bool {
        self.in_bounds(c) && !self.is_obstacle(c)
    }

    /// Obstacles in deterministic order, for serialization and tests.
    pub fn sorted_obstacles(&self) -> Vec<Cell> {
        let mut v: Vec<Cell> = self.obstacles.iter().copied().collect();
        v.sort();
        v
    }
}

/// Dynamic state: cow and agent positions plus the cow random stream.
#[derive(Debug, Clone, PartialEq)]
pub struct WorldState {
    pub step: u64,
    pub cows: Vec<Cell>,
    pub agents: Vec<Cell>,
    /// Name of the cow random stream (for reporting).
    pub stream_name: String,
    /// The cow stream itself; owned by the world so trajectories replay.
    pub cow_rng: ChaCha8Rng,
}

/// Flocking-rule parameters for cow motion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CowParams {
    pub flee_radius: f64,
    pub cohesion_radius: f64,
    pub separation_radius: f64,
    pub w_flee: f64,
    pub w_cohesion: f64,
    pub w_separation: f64,
    pub w_random: f64,
}

impl Default for CowParams {
    fn default() -> Self {
        CowParams {
            flee_radius: 6.0,
            cohesion_radius: 5.0,
            separation_radius: 2.0,
            w_flee: 1.0,
            w_cohesion: 0.6,
            w_separation: 0.8,
            w_random: 0.3,
        }
    }
}

impl CowParams {
    pub fn validate(&self) -> Result<()> {
        if self.separation_radius >= self.cohesion_radius {
            return Err(Error::Config(format!(
                "separation_radius ({}) must be smaller than cohesion_radius ({})",
                self.separation_radius, self.cohesion_radius
            )));
        }
        let ws = [self.w_flee, self.w_cohesion, self.w_separation, self.w_random];
        if ws.iter().any(|w| *w < 0.0) {
            return Err(Error::Config("cow rule weights must be nonnegative".into()));
        }
        if ws.iter().all(|w| *w == 0.0) {
            return Err(Error::Config("at least one cow rule weight must be positive".into()));
        }
        Ok(())
    }
}

/// What an agent sees: the radius-8 Chebyshev window around it, clipped at
/// the map border. All lists are sorted for determinism.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Percept {
    pub agent_id: usize,
    pub step: u64,
    pub origin: Cell,
    pub cows: Vec<Cell>,
    /// Other agents in sight, as (id, position).
    pub others: Vec<(usize, Cell)>,
    pub obstacles: Vec<Cell>,
    pub corral_cells: Vec<Cell>,
}

impl Percept {
    pub fn sees(&self, c: Cell) -> bool {
        chebyshev(self.origin, c) <= SENSE_RADIUS
    }
}

/// Build a map with `obstacle_count` obstacles placed uniformly at random
/// (without replacement) outside the corral, from the "map" stream of `seed`.
pub fn build_map(side: i32, obstacle_count: usize, corral: Rect, seed: u64) -> Result<GridMap> {
    if side < 3 {
        return Err(Error::Config(format!("side ({side}) must be at least 3")));
    }
    if !corral.is_valid() {
        return Err(Error::Config(format!("corral rectangle {corral:?} is empty")));
    }
    // Strictly inside: a one-cell margin so the perimeter ring exists.
    if corral.x1 < 1 || corral.y1 < 1 || corral.x2 > side - 2 || corral.y2 > side - 2 {
        return Err(Error::Config(format!(
            "corral {corral:?} must lie strictly inside the {side}x{side} grid"
        )));
    }
    let capacity = side as i64 * side as i64 - corral.area();
    if (obstacle_count as i64) >= capacity {
        return Err(Error::Config(format!(
            "obstacle count {obstacle_count} exceeds capacity {capacity} \
             (side^2 minus corral area)"
        )));
    }

    // Candidate cells in row-major order, excluding the corral.
    let mut candidates: Vec<Cell> = Vec::with_capacity(capacity as usize);
    for y in 0..side {
        for x in 0..side {
            let c = Cell::new(x, y);
            if !corral.contains(c) {
                candidates.push(c);
            }
        }
    }
    let mut rng = named_stream(seed, "map");
    let picked = rand::seq::index::sample(&mut rng, candidates.len(), obstacle_count);
    let obstacles: HashSet<Cell> = picked.iter().map(|i| candidates[i]).collect();
    Ok(GridMap { side, obstacles, corral })
}

/// Place `agent_count` agents and then `cow_count` cows uniformly at random
/// on free cells outside the corral, from the "spawn" stream of `seed`.
pub fn spawn_world(map: &GridMap, cow_count: usize, agent_count: usize, seed: u64) -> Result<WorldState> {
    if cow_count == 0 {
        return Err(Error::Config("cow count must be positive".into()));
    }
    let mut free: Vec<Cell> = Vec::new();
    for y in 0..map.side {
        for x in 0..map.side {
            let c = Cell::new(x, y);
            if map.is_free(c) && !map.corral.contains(c) {
                free.push(c);
            }
        }
    }
    let need = cow_count + agent_count;
    if need > free.len() {
        return Err(Error::Config(format!(
            "cannot place {need} entities on {} free non-corral cells",
            free.len()
        )));
    }
    let mut rng = named_stream(seed, "spawn");
    let picked = rand::seq::index::sample(&mut rng, free.len(), need);
    let cells: Vec<Cell> = picked.iter().map(|i| free[i]).collect();
    let agents = cells[..agent_count].to_vec();
    let cows = cells[agent_count..].to_vec();
    Ok(WorldState {
        step: 0,
        cows,
        agents,
        stream_name: "cows".into(),
        cow_rng: named_stream(seed, "cows"),
    })
}

/// The deterministic part of the cow rule sum for one cow: flee from the
/// nearest agent in range, cohere toward the nearest other cow in range,
/// separate from crowding cows. The random term is added by the caller.
fn cow_rule_sum(idx: usize, cows: &[Cell], agents: &[Cell], params: &CowParams) -> Vec2 {
    let me = cows[idx].to_vec2();
    let mut sum = Vec2::ZERO;

    // Flee: away from the nearest agent within flee_radius (tie: lowest id).
    let mut nearest_agent: Option<(f64, Cell)> = None;
    for &a in agents {
        let d = me.distance(a.to_vec2());
        if d <= params.flee_radius && nearest_agent.is_none_or(|(bd, _)| d < bd) {
            nearest_agent = Some((d, a));
        }
    }
    if let Some((_, a)) = nearest_agent {
        sum = sum + (me - a.to_vec2()).unit().scale(params.w_flee);
    }

    // Cohesion: toward the nearest other cow within cohesion_radius.
    let mut nearest_cow: Option<(f64, Cell)> = None;
    for (j, &c) in cows.iter().enumerate() {
        if j == idx {
            continue;
        }
        let d = me.distance(c.to_vec2());
        if d <= params.cohesion_radius && nearest_cow.is_none_or(|(bd, _)| d < bd) {
            nearest_cow = Some((d, c));
        }
    }
    if let Some((_, c)) = nearest_cow {
        sum = sum + (c.to_vec2() - me).unit().scale(params.w_cohesion);
    }

    // Separation: away from every cow within separation_radius.
    let mut sep = Vec2::ZERO;
    for (j, &c) in cows.iter().enumerate() {
        if j == idx {
            continue;
        }
        if me.distance(c.to_vec2()) <= params.separation_radius {
            sep = sep + (me - c.to_vec2()).unit();
        }
    }
    sum = sum + sep.scale(params.w_separation);

    sum
}

/// Advance cows one step. Preferences are computed from the entry snapshot;
/// moves apply sequentially in ascending cow index, blocked moves degrade to
/// skip, and cows inside the corral are frozen (one-way gate). `randoms`
/// holds one unit vector per cow (None for the zero vector).
fn apply_cow_rules(
    cows: &[Cell],
    agents: &[Cell],
    map: &GridMap,
    params: &CowParams,
    randoms: &[Option<Vec2>],
) -> Vec<Cell> {
    debug_assert_eq!(cows.len(), randoms.len());
    let preferred: Vec<MoveAction> = cows
        .iter()
        .enumerate()
        .map(|(i, &c)| {
            if map.corral.contains(c) {
                return MoveAction::Skip;
            }
            let mut v = cow_rule_sum(i, cows, agents, params);
            if let Some(r) = randoms[i] {
                v = v + r.scale(params.w_random);
            }
            quantize_euclidean(v)
        })
        .collect();

    let mut occupied: HashSet<Cell> = agents.iter().copied().collect();
    occupied.extend(cows.iter().copied());
    let mut out = cows.to_vec();
    for i in 0..out.len() {
        let action = preferred[i];
        if action == MoveAction::Skip {
            continue;
        }
        let from = out[i];
        let to = action.apply(from);
        if map.is_free(to) && !occupied.contains(&to) {
            occupied.remove(&from);
            occupied.insert(to);
            out[i] = to;
        }
    }
    out
}

fn draw_cow_randoms(cows: &[Cell], corral: &Rect, rng: &mut ChaCha8Rng) -> Vec<Option<Vec2>> {
    cows.iter()
        .map(|c| {
            if corral.contains(*c) {
                None // frozen cows draw nothing
            } else {
                let theta = rng.gen::<f64>() * std::f64::consts::TAU;
                Some(Vec2::new(theta.cos(), theta.sin()))
            }
        })
        .collect()
}

/// New cow positions for one step, without consuming the world's stream
/// (the internal clone advances instead). `step_world` performs the same
/// computation while advancing the real stream.
pub fn update_cows(world: &WorldState, map: &GridMap, params: &CowParams) -> Vec<Cell> {
    let mut rng = world.cow_rng.clone();
    let randoms = draw_cow_randoms(&world.cows, &map.corral, &mut rng);
    apply_cow_rules(&world.cows, &world.agents, map, params, &randoms)
}

/// One-step cow prediction with the random component zeroed — the same
/// rule-sum and quantization as `update_cows`, usable by agents that cannot
/// know the cow stream.
pub fn predict_cows(cows: &[Cell], agents: &[Cell], map: &GridMap, params: &CowParams) -> Vec<Cell> {
    let randoms = vec![None; cows.len()];
    apply_cow_rules(cows, agents, map, params, &randoms)
}

/// Advance the world one step: agents move first in ascending id order
/// (blocked moves degrade to skip), then cows update, then the step counter
/// increments.
pub fn step_world(
    world: &WorldState,
    map: &GridMap,
    actions: &[MoveAction],
    params: &CowParams,
) -> Result<WorldState> {
    if actions.len() != world.agents.len() {
        return Err(Error::Protocol(format!(
            "got {} actions for {} agents",
            actions.len(),
            world.agents.len()
        )));
    }
    let mut next = world.clone();
    let mut occupied: HashSet<Cell> = next.agents.iter().copied().collect();
    occupied.extend(next.cows.iter().copied());

    for (i, action) in actions.iter().enumerate() {
        if *action == MoveAction::Skip {
            continue;
        }
        let from = next.agents[i];
        let to = action.apply(from);
        if map.is_free(to) && !occupied.contains(&to) {
            occupied.remove(&from);
            occupied.insert(to);
            next.agents[i] = to;
        }
    }

    let randoms = draw_cow_randoms(&next.cows, &map.corral, &mut next.cow_rng);
    next.cows = apply_cow_rules(&next.cows, &next.agents, map, params, &randoms);
    next.step += 1;
    Ok(next)
}

/// The radius-8 window around the agent, clipped at the border.
pub fn perceive(world: &WorldState, map: &GridMap, agent_id: usize) -> Result<Percept> {
    let origin = *world
        .agents
        .get(agent_id)
        .ok_or_else(|| Error::Protocol(format!("unknown agent id {agent_id}")))?;
    let visible = |c: Cell| chebyshev(origin, c) <= SENSE_RADIUS && map.in_bounds(c);

    let mut cows: Vec<Cell> = world.cows.iter().copied().filter(|c| visible(*c)).collect();
    cows.sort();
    let mut others: Vec<(usize, Cell)> = world
        .agents
        .iter()
        .copied()
        .enumerate()
        .filter(|(id, c)| *id != agent_id && visible(*c))
        .collect();
    others.sort();
    let mut obstacles: Vec<Cell> = map.obstacles.iter().copied().filter(|c| visible(*c)).collect();
    obstacles.sort();
    let mut corral_cells: Vec<Cell> = map.corral.cells().filter(|c| visible(*c)).collect();
    corral_cells.sort();

    Ok(Percept {
        agent_id,
        step: world.step,
        origin,
        cows,
        others,
        obstacles,
        corral_cells,
    })
}

/// Percentage of cows inside the corral, in [0, 100].
pub fn success_percent(world: &WorldState, map: &GridMap) -> Result<f64> {
    if world.cows.is_empty() {
        return Err(Error::Config("success is undefined with zero cows".into()));
    }
    let inside = world.cows.iter().filter(|c| map.corral.contains(**c)).count();
    Ok(100.0 * inside as f64 / world.cows.len() as f64)
}

/// Check the world invariants: bounds, obstacle avoidance, unique occupancy.
pub fn check_world(world: &WorldState, map: &GridMap) -> Result<()> {
    let mut seen = HashSet::new();
    for (kind, cells) in [("cow", &world.cows), ("agent", &world.agents)] {
        for &c in cells.iter() {
            if !map.in_bounds(c) {
                return Err(Error::Domain(format!("{kind} at {c} is out of bounds")));
            }
            if map.is_obstacle(c) {
                return Err(Error::Domain(format!("{kind} at {c} sits on an obstacle")));
            }
            if !seen.insert(c) {
                return Err(Error::Domain(format!("two entities share cell {c}")));
            }
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Snapshot format: header `side obstacles corral x1 y1 x2 y2`, then one
// `O x y` / `C x y` / `A id x y` record per line.
// ---------------------------------------------------------------------------

/// A parsed map/world snapshot (entity records are optional in the format).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Snapshot {
    pub map: GridMap,
    pub cows: Vec<Cell>,
    pub agents: Vec<Cell>,
}

pub fn snapshot_to_string(map: &GridMap, world: Option<&WorldState>) -> String {
    let mut out = String::new();
    let c = map.corral;
    out.push_str(&format!(
        "{} {} corral {} {} {} {}\n",
        map.side,
        map.obstacles.len(),
        c.x1,
        c.y1,
        c.x2,
        c.y2
    ));
    for o in map.sorted_obstacles() {
        out.push_str(&format!("O {} {}\n", o.x, o.y));
    }
    if let Some(w) = world {
        for cow in &w.cows {
            out.push_str(&format!("C {} {}\n", cow.x, cow.y));
        }
        for (id, a) in w.agents.iter().enumerate() {
            out.push_str(&format!("A {} {} {}\n", id, a.x, a.y));
        }
    }
    out
}

pub fn parse_snapshot(text: &str) -> Result<Snapshot> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines
        .next()
        .ok_or_else(|| Error::Parse("empty snapshot".into()))?;
    let tok: Vec<&str> = header.split_whitespace().collect();
    if tok.len() != 7 || tok[2] != "corral" {
        return Err(Error::Parse(format!(
            "bad snapshot header (want `side obstacles corral x1 y1 x2 y2`): {header}"
        )));
    }
    let num = |s: &str| -> Result<i32> {
        s.parse::<i32>()
            .map_err(|_| Error::Parse(format!("bad number `{s}` in snapshot")))
    };
    let side = num(tok[0])?;
    let n_obstacles = num(tok[1])? as usize;
    let corral = Rect::new(num(tok[3])?, num(tok[4])?, num(tok[5])?, num(tok[6])?);

    let mut obstacles = HashSet::new();
    let mut cows = Vec::new();
    let mut agents: Vec<(usize, Cell)> = Vec::new();
    for line in lines {
        let t: Vec<&str> = line.split_whitespace().collect();
        match t.as_slice() {
            ["O", x, y] => {
                obstacles.insert(Cell::new(num(x)?, num(y)?));
            }
            ["C", x, y] => cows.push(Cell::new(num(x)?, num(y)?)),
            ["A", id, x, y] => {
                let id = id
                    .parse::<usize>()
                    .map_err(|_| Error::Parse(format!("bad agent id in `{line}`")))?;
                agents.push((id, Cell::new(num(x)?, num(y)?)));
            }
            _ => return Err(Error::Parse(format!("bad snapshot record: {line}"))),
        }
    }
    if obstacles.len() != n_obstacles {
        return Err(Error::Parse(format!(
            "snapshot header declares {n_obstacles} obstacles, found {}",
            obstacles.len()
        )));
    }
    agents.sort();
    if agents.iter().enumerate().any(|(i, (id, _))| i != *id) {
        return Err(Error::Parse("agent ids must be 0..n without gaps".into()));
    }
    Ok(Snapshot {
        map: GridMap { side, obstacles, corral },
        cows,
        agents: agents.into_iter().map(|(_, c)| c).collect(),
    })
}
