//! The player-agent controller: entrance detection, herd clustering and
//! aggregation, reward computation, action mapping of transferred
//! knowledge, the two heuristic policies, and the per-step agent program.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::abstraction::{
    decompose_behavior_with, group_state, solo_state, AbstractState, AbstractionParams, Behavior,
    BehaviorFamily, Zone, ALL_BEHAVIORS,
};
use crate::coordinator::{Message, MessageBody, Recipient};
use crate::error::{Error, Result};
use crate::geom::{angle_at_vertex, angle_between, euclid, Cell, Rect, Vec2};
use crate::learning::{epsilon_at, q_update, LearningParams, QEntry, QTable, TableTag};
use crate::rng::named_stream;
use crate::world::{
    predict_cows, success_percent, CowParams, GridMap, MoveAction, Percept, WorldState,
    ALL_ACTIONS,
};

/// Steps of lost mutual sight after which a cooperation link dissolves.
pub const GROUP_DISSOLVE_STEPS: u32 = 5;

/// A cluster of cows and its center of mass.
#[derive(Debug, Clone, PartialEq)]
pub struct Herd {
    members: Vec<Cell>,
    gcm: Vec2,
}

impl Herd {
    /// Build a herd from member cells; members are kept sorted so the
    /// centroid sum is order-independent.
    pub fn new(mut members: Vec<Cell>) -> Option<Herd> {
        if members.is_empty() {
            return None;
        }
        members.sort();
        members.dedup();
        let mut sum = Vec2::ZERO;
        for m in &members {
            sum = sum + m.to_vec2();
        }
        let gcm = sum.scale(1.0 / members.len() as f64);
        Some(Herd { members, gcm })
    }

    pub fn members(&self) -> &[Cell] {
        &self.members
    }

    pub fn gcm(&self) -> Vec2 {
        self.gcm
    }

    pub fn size(&self) -> usize {
        self.members.len()
    }
}

/// Single-linkage clustering of the cows in sight at the given proximity
/// threshold; returns the most populous cluster (ties: the cluster whose
/// center is nearest the agent, then the one containing the lowest input
/// index). Empty sight yields None.
pub fn cluster_herd(cows: &[Cell], threshold: f64, agent: Cell) -> Option<Herd> {
    if cows.is_empty() {
        return None;
    }
    // Union-find over cow indices.
    let mut parent: Vec<usize> = (0..cows.len()).collect();
    fn find(parent: &mut Vec<usize>, i: usize) -> usize {
        if parent[i] != i {
            let r = find(parent, parent[i]);
            parent[i] = r;
        }
        parent[i]
    }
    for i in 0..cows.len() {
        for j in (i + 1)..cows.len() {
            if euclid(cows[i], cows[j]) <= threshold {
                let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                if ri != rj {
                    parent[ri] = rj;
                }
            }
        }
    }
    let mut clusters: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in 0..cows.len() {
        let r = find(&mut parent, i);
        clusters.entry(r).or_default().push(i);
    }

    let mut best: Option<(usize, f64, usize, Vec<usize>)> = None; // size, dist, min index
    for members in clusters.into_values() {
        let herd = Herd::new(members.iter().map(|&i| cows[i]).collect()).unwrap();
        let dist = herd.gcm().distance(agent.to_vec2());
        let min_idx = *members.iter().min().unwrap();
        let better = match &best {
            None => true,
            Some((bs, bd, bi, _)) => {
                members.len() > *bs
                    || (members.len() == *bs && dist < *bd)
                    || (members.len() == *bs && dist == *bd && min_idx < *bi)
            }
        };
        if better {
            best = Some((members.len(), dist, min_idx, members));
        }
    }
    let (_, _, _, members) = best.unwrap();
    Herd::new(members.into_iter().map(|i| cows[i]).collect())
}

/// Union of cooperating agents' herds (duplicates removed, center
/// recomputed). An empty union yields None.
pub fn aggregate_herds(herds: &[Herd]) -> Option<Herd> {
    let mut all: Vec<Cell> = Vec::new();
    for h in herds {
        all.extend_from_slice(h.members());
    }
    Herd::new(all)
}

/// The corral entrance nearest to the herd center (ties: lowest list index).
pub fn select_target_entrance(entrances: &[Cell], gcm: Vec2) -> Result<Cell> {
    let mut best: Option<(f64, Cell)> = None;
    for &e in entrances {
        let d = e.to_vec2().distance(gcm);
        if best.is_none_or(|(bd, _)| d < bd) {
            best = Some((d, e));
        }
    }
    best.map(|(_, e)| e).ok_or_else(|| {
        Error::Config("no corral entrances known; entrance detection incomplete".into())
    })
}

/// How the per-step reward is derived from the success measure.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RewardMode {
    /// The current success percentage (the corral is one-way, so the level
    /// is nondecreasing along a run).
    Level,
    /// The change in success percentage across the step.
    Delta,
}

/// Reward observed across one world step.
pub fn compute_reward(
    before: &WorldState,
    after: &WorldState,
    map: &GridMap,
    mode: RewardMode,
) -> Result<f64> {
    let level = success_percent(after, map)?;
    Ok(match mode {
        RewardMode::Level => level,
        RewardMode::Delta => level - success_percent(before, map)?,
    })
}

// ---------------------------------------------------------------------------
// Action mapping (transferred abstract action -> concrete move)
// ---------------------------------------------------------------------------

/// Everything the mapper may consult: the agent's local view of the scene.
#[derive(Debug)]
pub struct ActionView<'a> {
    pub agent_pos: Cell,
    /// All cows in sight; herd members are indices into this list.
    pub visible_cows: &'a [Cell],
    pub herd_indices: &'a [usize],
    /// Other visible agents (group members or not).
    pub other_agents: &'a [Cell],
    /// Known positions of the agent's other group members (empty when solo).
    pub group_members: &'a [Cell],
    pub target: Cell,
    pub map: &'a GridMap,
}

fn herd_gcm(cows: &[Cell], herd_indices: &[usize]) -> Vec2 {
    let mut sum = Vec2::ZERO;
    for &i in herd_indices {
        sum = sum + cows[i].to_vec2();
    }
    sum.scale(1.0 / herd_indices.len() as f64)
}

/// The pre-binning state quantities in bin units: distance to target over d,
/// distance to herd center over d, vertex angle over a. Group mode averages
/// the member sums exactly like the binned state.
fn continuous_state(agent: Cell, view: &ActionView<'_>, gcm: Vec2, params: &AbstractionParams) -> [f64; 3] {
    let target = view.target.to_vec2();
    let mut members = vec![agent];
    members.extend_from_slice(view.group_members);
    let m = members.len() as f64;
    let mut sum_t = 0.0;
    let mut sum_h = 0.0;
    let mut sum_a = 0.0;
    for c in &members {
        let p = c.to_vec2();
        sum_t += p.distance(target);
        sum_h += p.distance(gcm);
        sum_a += angle_at_vertex(gcm, p, target);
    }
    [sum_t / (m * params.d), sum_h / (m * params.d), sum_a / (m * params.a)]
}

/// Moves that are legal from `origin` given the static map and the visible
/// entities. Skip is always included.
pub fn legal_actions(origin: Cell, occupied: &HashSet<Cell>, map: &GridMap) -> Vec<MoveAction> {
    ALL_ACTIONS
        .iter()
        .copied()
        .filter(|a| {
            let c = a.apply(origin);
            c == origin || (map.is_free(c) && !occupied.contains(&c))
        })
        .collect()
}

/// Map a Q-table action to the concrete move whose predicted state change
/// is L1-closest (in bin units) to the intended change. The intended change
/// is the learned bin delta when one was stored with the entry; otherwise
/// the geometric effect of the action itself (agent displaced, cows frozen).
/// Predictions run the shared cow model one step with the random term
/// zeroed.
///
/// Candidates are scored at sub-bin resolution: a single step rarely crosses
/// a whole bin, so integer bin deltas would tie nearly every candidate at
/// zero and the tie-break would freeze the policy. Fractional deltas rank
/// the same geometry without the degeneracy; exact ties still fall to the
/// lowest action index.
pub fn map_action(
    q_action: MoveAction,
    current: AbstractState,
    intended: Option<[i64; 3]>,
    view: &ActionView<'_>,
    params: &AbstractionParams,
    cow_params: &CowParams,
) -> Result<MoveAction> {
    let _ = current;
    let gcm_now = herd_gcm(view.visible_cows, view.herd_indices);
    let now = continuous_state(view.agent_pos, view, gcm_now, params);

    let intended: [f64; 3] = match intended {
        Some(d) => [d[0] as f64, d[1] as f64, d[2] as f64],
        None => {
            let moved = q_action.apply(view.agent_pos);
            let pos = if view.map.is_free(moved) { moved } else { view.agent_pos };
            let there = continuous_state(pos, view, gcm_now, params);
            [there[0] - now[0], there[1] - now[1], there[2] - now[2]]
        }
    };

    let mut occupied: HashSet<Cell> = view.visible_cows.iter().copied().collect();
    occupied.extend(view.other_agents.iter().copied());
    let candidates = legal_actions(view.agent_pos, &occupied, view.map);

    let mut agents_after: Vec<Cell> = Vec::with_capacity(1 + view.other_agents.len());
    let mut best: Option<(f64, MoveAction)> = None;
    for a in candidates {
        let pos = a.apply(view.agent_pos);
        agents_after.clear();
        agents_after.push(pos);
        agents_after.extend_from_slice(view.other_agents);
        let cows_after = predict_cows(view.visible_cows, &agents_after, view.map, cow_params);
        let gcm_after = herd_gcm(&cows_after, view.herd_indices);
        let predicted = continuous_state(pos, view, gcm_after, params);
        let score: f64 = predicted
            .iter()
            .zip(now.iter())
            .zip(intended.iter())
            .map(|((p, n), i)| ((p - n) - i).abs())
            .sum();
        if best.is_none_or(|(bs, _)| score < bs) {
            best = Some((score, a));
        }
    }
    // Skip is always a candidate, so a best action exists.
    Ok(best.expect("candidate list is never empty").1)
}

// ---------------------------------------------------------------------------
// Heuristic policies
// ---------------------------------------------------------------------------

/// Rotational-motion heuristic (following behaviors): move along the circle
/// around the herd center toward the drive post behind the herd.
///
/// The desired post is `gcm - rho * unit(target - gcm)` with `rho` the
/// current agent distance from the center. Candidates that would shrink the
/// radius below `rho - 1` are excluded; the rest are scored by arc
/// deviation — the angular gap (degrees) between the candidate position and
/// the post as seen from the center, plus the radial drift in cells — and
/// ties go to the lowest action index.
pub fn heuristic_rotational(
    agent: Cell,
    herd: &Herd,
    target: Cell,
    legal: &[MoveAction],
) -> MoveAction {
    let gcm = herd.gcm();
    let to_target = target.to_vec2() - gcm;
    if to_target.norm() == 0.0 {
        return MoveAction::Skip;
    }
    let rho = agent.to_vec2().distance(gcm);
    if rho < 1e-9 {
        return MoveAction::Skip;
    }
    let post_dir = to_target.unit().scale(-1.0);
    let mut best: Option<(f64, MoveAction)> = None;
    for &a in legal {
        let p = a.apply(agent).to_vec2();
        let radius = p.distance(gcm);
        if radius < rho - 1.0 {
            continue;
        }
        let gap = angle_between(p - gcm, post_dir);
        let score = gap + (radius - rho).abs();
        if best.is_none_or(|(bs, _)| score < bs) {
            best = Some((score, a));
        }
    }
    best.map_or(MoveAction::Skip, |(_, a)| a)
}

/// Middle-action heuristic (herding behaviors): move in the direction
/// closest to the line from the herd center to the target.
pub fn heuristic_middle(agent: Cell, herd: &Herd, target: Cell, legal: &[MoveAction]) -> MoveAction {
    let _ = agent;
    let dir = target.to_vec2() - herd.gcm();
    if dir.norm() == 0.0 {
        return MoveAction::Skip;
    }
    let mut best: Option<(f64, MoveAction)> = None;
    for &a in legal {
        if a == MoveAction::Skip {
            continue;
        }
        let (dx, dy) = a.displacement();
        let dev = angle_between(Vec2::new(dx as f64, dy as f64), dir);
        if best.is_none_or(|(bs, _)| dev < bs) {
            best = Some((dev, a));
        }
    }
    best.map_or(MoveAction::Skip, |(_, a)| a)
}

// ---------------------------------------------------------------------------
// Corral perimeter exploration
// ---------------------------------------------------------------------------

/// The ring of cells immediately outside the corral, enumerated clockwise
/// from the top-left corner.
fn perimeter_ring(corral: Rect) -> Vec<Cell> {
    let r = Rect::new(corral.x1 - 1, corral.y1 - 1, corral.x2 + 1, corral.y2 + 1);
    let mut ring = Vec::new();
    for x in r.x1..=r.x2 {
        ring.push(Cell::new(x, r.y2)); // top edge, left -> right
    }
    for y in (r.y1..r.y2).rev() {
        ring.push(Cell::new(r.x2, y)); // right edge, top -> bottom
    }
    for x in (r.x1..r.x2).rev() {
        ring.push(Cell::new(x, r.y1)); // bottom edge, right -> left
    }
    for y in (r.y1 + 1)..r.y2 {
        ring.push(Cell::new(r.x1, y)); // left edge, bottom -> top
    }
    ring
}

/// A border cell is an entrance when at least one of its outward 4-adjacent
/// outside cells is obstacle-free.
pub fn is_entrance(border_cell: Cell, map: &GridMap) -> bool {
    let c = map.corral;
    let mut outward = Vec::with_capacity(2);
    if border_cell.x == c.x1 {
        outward.push(border_cell.offset(-1, 0));
    }
    if border_cell.x == c.x2 {
        outward.push(border_cell.offset(1, 0));
    }
    if border_cell.y == c.y1 {
        outward.push(border_cell.offset(0, -1));
    }
    if border_cell.y == c.y2 {
        outward.push(border_cell.offset(0, 1));
    }
    !outward.is_empty() && outward.iter().any(|o| map.is_free(*o))
}

/// Progress of the detector's lap around the corral.
#[derive(Debug, Clone, PartialEq)]
struct PerimeterWalk {
    ring: Vec<Cell>,
    target_idx: usize,
    waypoints_left: usize,
    steps: u64,
    entered: bool,
    found: BTreeSet<Cell>,
}

impl PerimeterWalk {
    fn new(corral: Rect) -> Self {
        let ring = perimeter_ring(corral);
        let n = ring.len();
        PerimeterWalk {
            ring,
            target_idx: 0,
            waypoints_left: n,
            steps: 0,
            entered: false,
            found: BTreeSet::new(),
        }
    }

    fn step_cap(&self) -> u64 {
        8 * self.ring.len() as u64 + 64
    }
}

/// One step of the detector's perimeter walk. Records, as it passes, the
/// border cells whose outward cells are obstacle-free; `done` becomes true
/// when the lap is complete (or the safety cap fires on a pathological map).
/// Entrances accumulate in `agent.entrances` in discovery order.
pub fn explore_corral_perimeter(
    agent: &mut AgentState,
    percept: &Percept,
    map: &GridMap,
) -> (MoveAction, bool) {
    if agent.walk.is_none() {
        agent.walk = Some(PerimeterWalk::new(map.corral));
    }
    let walk = agent.walk.as_mut().expect("walk initialized above");
    let pos = percept.origin;
    walk.steps += 1;

    // Record border cells the agent is currently passing.
    for b in map.corral.border_cells() {
        if crate::geom::chebyshev(pos, b) <= 2 && is_entrance(b, map) && walk.found.insert(b) {
            agent.entrances.push(b);
        }
    }

    // First reach the nearest walkable ring cell.
    if !walk.entered {
        let entry = walk
            .ring
            .iter()
            .enumerate()
            .filter(|(_, c)| map.is_free(**c))
            .min_by(|(_, a), (_, b)| euclid(pos, **a).total_cmp(&euclid(pos, **b)))
            .map(|(i, _)| i);
        match entry {
            None => return (MoveAction::Skip, true), // perimeter fully blocked
            Some(idx) => {
                if walk.ring[idx] == pos {
                    walk.entered = true;
                    walk.target_idx = idx;
                    // The entry waypoint counts as visited.
                    walk.waypoints_left -= 1;
                    advance_waypoint(walk, map);
                } else if walk.steps > walk.step_cap() {
                    return (MoveAction::Skip, true);
                } else {
                    walk.target_idx = idx;
                    let goal = walk.ring[idx];
                    return (walk_toward(pos, goal, percept, map), false);
                }
            }
        }
    }

    // On the lap: consume waypoints as they are reached.
    while walk.waypoints_left > 0 && pos == walk.ring[walk.target_idx] {
        walk.waypoints_left -= 1;
        advance_waypoint(walk, map);
    }
    if walk.waypoints_left == 0 || walk.steps > walk.step_cap() {
        return (MoveAction::Skip, true);
    }
    let goal = walk.ring[walk.target_idx];
    (walk_toward(pos, goal, percept, map), false)
}

/// Advance the waypoint pointer, consuming obstacle cells that cannot be
/// stood on.
fn advance_waypoint(walk: &mut PerimeterWalk, map: &GridMap) {
    while walk.waypoints_left > 0 {
        walk.target_idx = (walk.target_idx + 1) % walk.ring.len();
        if map.is_free(walk.ring[walk.target_idx]) {
            break;
        }
        walk.waypoints_left -= 1;
    }
}

/// The legal move that brings the agent closest to `goal` (ties: lowest
/// action index).
fn walk_toward(pos: Cell, goal: Cell, percept: &Percept, map: &GridMap) -> MoveAction {
    let mut occupied: HashSet<Cell> = percept.cows.iter().copied().collect();
    occupied.extend(percept.others.iter().map(|(_, c)| *c));
    let mut best = (f64::INFINITY, MoveAction::Skip);
    for a in legal_actions(pos, &occupied, map) {
        let d = euclid(a.apply(pos), goal);
        if d < best.0 {
            best = (d, a);
        }
    }
    best.1
}

// ---------------------------------------------------------------------------
// The agent program (one call per world step)
// ---------------------------------------------------------------------------

/// Static per-run configuration shared by all player agents.
#[derive(Debug, Clone)]
pub struct AgentConfig {
    pub abstraction: AbstractionParams,
    pub learning: LearningParams,
    pub cow_params: CowParams,
    pub proximity_threshold: f64,
    pub heuristics_enabled: bool,
    pub hysteresis_band: f64,
    pub reward_mode: RewardMode,
}

/// Per-step inputs computed by the round driver.
#[derive(Debug, Clone, Copy)]
pub struct StepContext {
    /// 1-based world step about to be taken.
    pub step: u64,
    /// Reward observed for the previous transition.
    pub reward: f64,
}

/// What the previous step committed to; resolved into a (state, action)
/// table key when the successor state is known.
#[derive(Debug, Clone, PartialEq)]
enum PendingAction {
    /// Solo: the abstract action chosen (exploration actions are their own
    /// abstraction).
    Fixed(MoveAction),
    /// Group: the joint action is the quantized sum of the members' observed
    /// displacements, known only after the step resolves.
    JointObserved { member_snapshot: Vec<(usize, Cell)>, own_before: Cell },
}

#[derive(Debug, Clone, PartialEq)]
struct Transition {
    behavior: Behavior,
    state: AbstractState,
    pending: PendingAction,
}

/// Counters used by trace-level invariant checks.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AgentStats {
    pub q_updates: u64,
    pub coop_messages_sent: u64,
    pub rotational_calls: u64,
    pub middle_calls: u64,
}

/// A player agent's private state.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentState {
    pub id: usize,
    pub detector: bool,
    pub entrances: Vec<Cell>,
    pub tables: BTreeMap<Behavior, QTable>,
    pub group: BTreeSet<usize>,
    pub stats: AgentStats,
    coop_sent: BTreeSet<usize>,
    lost_sight: BTreeMap<usize, u32>,
    known_member_pos: BTreeMap<usize, Cell>,
    last_transition: Option<Transition>,
    prev_behavior: Option<Behavior>,
    last_updated: Option<Behavior>,
    /// The agent's own visit counts per table entry. Broadcast tables carry
    /// aggregated team counts; Eq.-5 shares must weight by the agent's own
    /// experience, so those are tracked separately from the assigned tables.
    own_visits: BTreeMap<(Behavior, AbstractState, MoveAction), u64>,
    deltas: BTreeMap<(Behavior, AbstractState, MoveAction), [i64; 3]>,
    walk: Option<PerimeterWalk>,
    walk_done: bool,
    coop_herds_inbox: Vec<Herd>,
    rng: ChaCha8Rng,
}

impl AgentState {
    pub fn new(id: usize, master_seed: u64) -> Self {
        let tables = ALL_BEHAVIORS
            .iter()
            .map(|b| (*b, QTable::new(TableTag::Behavior(*b))))
            .collect();
        AgentState {
            id,
            detector: false,
            entrances: Vec::new(),
            tables,
            group: BTreeSet::new(),
            stats: AgentStats::default(),
            coop_sent: BTreeSet::new(),
            lost_sight: BTreeMap::new(),
            known_member_pos: BTreeMap::new(),
            last_transition: None,
            prev_behavior: None,
            last_updated: None,
            own_visits: BTreeMap::new(),
            deltas: BTreeMap::new(),
            walk: None,
            walk_done: false,
            coop_herds_inbox: Vec::new(),
            rng: named_stream(master_seed, &format!("agent-{id}")),
        }
    }

    /// True once the agent knows the corral entrances (learning phase).
    pub fn learning_active(&self) -> bool {
        !self.entrances.is_empty()
    }

    /// Table snapshot to share with the coordinator this round: the table
    /// last updated (or the solo-herding table before any update happened),
    /// restricted to the entries this agent has visited itself, with its own
    /// visit counts as the fusion weights.
    pub fn share_table(&self) -> QTable {
        let behavior = self.last_updated.unwrap_or(Behavior::SoloHerding);
        let mut share = QTable::new(TableTag::Behavior(behavior));
        let table = &self.tables[&behavior];
        for ((b, s, a), visits) in self.own_visits.range(
            (behavior, AbstractState::new(0, 0, 0), MoveAction::Skip)
                ..=(behavior, AbstractState::new(u32::MAX, u32::MAX, u32::MAX), MoveAction::SouthEast),
        ) {
            debug_assert_eq!(*b, behavior);
            if *visits > 0 {
                share.set(*s, *a, QEntry { q: table.get(*s, *a).q, visits: *visits });
            }
        }
        share
    }

    /// Learned bin delta for a table entry, if any.
    pub fn learned_delta(
        &self,
        behavior: Behavior,
        s: AbstractState,
        a: MoveAction,
    ) -> Option<[i64; 3]> {
        self.deltas.get(&(behavior, s, a)).copied()
    }

    fn random_among(&mut self, actions: &[MoveAction]) -> MoveAction {
        actions[self.rng.gen_range(0..actions.len())]
    }
}

fn zone_of_point(p: Vec2, corral: Rect, entrance: Cell) -> Zone {
    // Same split as abstraction::zone_of, for the real-valued herd center.
    let cell = Cell::new(p.x.round() as i32, p.y.round() as i32);
    let c = corral;
    let outward = if entrance.x == c.x2 {
        cell.x > c.x2
    } else if entrance.x == c.x1 {
        cell.x < c.x1
    } else if entrance.y == c.y2 {
        cell.y > c.y2
    } else {
        cell.y < c.y1
    };
    if outward {
        Zone::A
    } else {
        Zone::B
    }
}

/// Run one step of the agent program. Returns the move to submit and the
/// outgoing messages.
pub fn agent_step(
    agent: &mut AgentState,
    percept: &Percept,
    inbox: &[Message],
    map: &GridMap,
    cfg: &AgentConfig,
    ctx: StepContext,
) -> Result<(MoveAction, Vec<Message>)> {
    let mut outbox: Vec<Message> = Vec::new();
    let pos = percept.origin;

    // Deliverable message kinds for a player agent.
    for msg in inbox {
        match &msg.body {
            MessageBody::CloserNotify => agent.detector = true,
            MessageBody::EntrancesBroadcast { entrances } => {
                agent.entrances = entrances.clone();
            }
            MessageBody::FusedTablesBroadcast { tables } => {
                for t in tables {
                    if let TableTag::Behavior(b) = t.tag {
                        agent.tables.insert(b, t.clone());
                    }
                }
            }
            MessageBody::Cooperation { herd, .. } => {
                if let crate::coordinator::Endpoint::Agent(sender) = msg.sender {
                    agent.group.insert(sender);
                    agent.lost_sight.insert(sender, 0);
                }
                agent.coop_herds_inbox.push(herd.clone());
            }
            other => {
                return Err(Error::Protocol(format!(
                    "agent {} cannot handle message kind {}",
                    agent.id,
                    other.kind_name()
                )))
            }
        }
    }

    // Track group members' visibility and last known positions.
    let visible: BTreeMap<usize, Cell> = percept.others.iter().copied().collect();
    let members: Vec<usize> = agent.group.iter().copied().collect();
    for m in members {
        if let Some(c) = visible.get(&m) {
            agent.known_member_pos.insert(m, *c);
            agent.lost_sight.insert(m, 0);
        } else {
            let n = agent.lost_sight.entry(m).or_insert(0);
            *n += 1;
            if *n > GROUP_DISSOLVE_STEPS {
                agent.group.remove(&m);
                agent.lost_sight.remove(&m);
                agent.known_member_pos.remove(&m);
            }
        }
    }

    // Step 1: report coordinates and wait.
    if ctx.step == 1 {
        outbox.push(Message {
            step: ctx.step,
            sender: crate::coordinator::Endpoint::Agent(agent.id),
            recipient: Recipient::Coordinator,
            body: MessageBody::Coordinate { pos },
        });
        return Ok((MoveAction::Skip, outbox));
    }

    // Detector phase: lap the corral, then report the entrances.
    if agent.detector {
        let (action, done) = explore_corral_perimeter(agent, percept, map);
        if done {
            agent.detector = false;
            agent.walk_done = true;
            outbox.push(Message {
                step: ctx.step,
                sender: crate::coordinator::Endpoint::Agent(agent.id),
                recipient: Recipient::Coordinator,
                body: MessageBody::EntrancesReport { entrances: agent.entrances.clone() },
            });
            // Local knowledge arrives with everyone else's broadcast.
            agent.entrances.clear();
            return Ok((MoveAction::Skip, outbox));
        }
        return Ok((action, outbox));
    }

    let mut occupied: HashSet<Cell> = percept.cows.iter().copied().collect();
    occupied.extend(percept.others.iter().map(|(_, c)| *c));
    let legal = legal_actions(pos, &occupied, map);

    // Warm-up: no entrances known yet, wander randomly.
    if agent.entrances.is_empty() {
        agent.coop_herds_inbox.clear();
        agent.last_transition = None;
        return Ok((agent.random_among(&legal), outbox));
    }

    // Learning phase. Detect the herd among the loose cows (cows already
    // inside the corral are delivered and no longer steerable), adding any
    // herds received with cooperation invitations this step.
    let loose_cows: Vec<Cell> =
        percept.cows.iter().copied().filter(|c| !map.corral.contains(*c)).collect();
    let own_herd = cluster_herd(&loose_cows, cfg.proximity_threshold, pos);
    let mut herds: Vec<Herd> = agent.coop_herds_inbox.drain(..).collect();
    if let Some(h) = own_herd.clone() {
        herds.push(h);
    }
    // Teammate herds may be a step stale; re-filter the union.
    let herd = aggregate_herds(&herds).and_then(|h| {
        Herd::new(h.members().iter().copied().filter(|c| !map.corral.contains(*c)).collect())
    });
    let herd = match herd {
        None => {
            // Nothing to steer: drop any pending transition and wander.
            agent.last_transition = None;
            return Ok((agent.random_among(&legal), outbox));
        }
        Some(h) => h,
    };

    let target = select_target_entrance(&agent.entrances, herd.gcm())?;

    // Group geometry: self plus last known member positions.
    let member_pos: Vec<(usize, Cell)> = agent
        .group
        .iter()
        .filter_map(|m| agent.known_member_pos.get(m).map(|c| (*m, *c)))
        .collect();
    let group_size = 1 + member_pos.len();

    let zone = zone_of_point(herd.gcm(), map.corral, target);
    let alpha = if group_size == 1 {
        angle_at_vertex(herd.gcm(), pos.to_vec2(), target.to_vec2())
    } else {
        let mut sum = angle_at_vertex(herd.gcm(), pos.to_vec2(), target.to_vec2());
        for (_, c) in &member_pos {
            sum += angle_at_vertex(herd.gcm(), c.to_vec2(), target.to_vec2());
        }
        sum / group_size as f64
    };
    let behavior =
        decompose_behavior_with(group_size, zone, alpha, agent.prev_behavior, cfg.hysteresis_band);
    let state = if group_size == 1 {
        solo_state(pos.to_vec2(), target, herd.gcm(), &cfg.abstraction)?
    } else {
        let mut cells = vec![pos];
        cells.extend(member_pos.iter().map(|(_, c)| *c));
        group_state(&cells, target, herd.gcm(), &cfg.abstraction)?
    };

    // Settle the previous transition now that its successor state is known.
    if let Some(tr) = agent.last_transition.take() {
        let action = match &tr.pending {
            PendingAction::Fixed(a) => *a,
            PendingAction::JointObserved { member_snapshot, own_before } => {
                let mut sum_x = (pos.x - own_before.x) as i64;
                let mut sum_y = (pos.y - own_before.y) as i64;
                for (m, before) in member_snapshot {
                    let now = agent.known_member_pos.get(m).copied().unwrap_or(*before);
                    sum_x += (now.x - before.x) as i64;
                    sum_y += (now.y - before.y) as i64;
                }
                crate::world::quantize_angular(Vec2::new(sum_x as f64, sum_y as f64))
            }
        };
        let table = agent.tables.get_mut(&tr.behavior).expect("all behavior tables exist");
        q_update(table, tr.state, action, ctx.reward, state, &cfg.learning);
        let own = agent.own_visits.entry((tr.behavior, tr.state, action)).or_insert(0);
        *own = own.saturating_add(1);
        agent.deltas.insert((tr.behavior, tr.state, action), state.delta_from(&tr.state));
        agent.last_updated = Some(tr.behavior);
        agent.stats.q_updates += 1;
    }

    // Choose this step's action. The mapper's cow list is everything the
    // agent knows: its percept plus herd members reported by teammates.
    let mut known_cows: Vec<Cell> = percept.cows.clone();
    known_cows.extend(herd.members().iter().copied());
    known_cows.sort();
    known_cows.dedup();
    let herd_indices: Vec<usize> = known_cows
        .iter()
        .enumerate()
        .filter(|(_, c)| herd.members().contains(c))
        .map(|(i, _)| i)
        .collect();
    let other_cells: Vec<Cell> = percept.others.iter().map(|(_, c)| *c).collect();
    let member_cells: Vec<Cell> = member_pos.iter().map(|(_, c)| *c).collect();
    let view = ActionView {
        agent_pos: pos,
        visible_cows: &known_cows,
        herd_indices: &herd_indices,
        other_agents: &other_cells,
        group_members: &member_cells,
        target,
        map,
    };

    let (concrete, abstract_intent) = match (cfg.heuristics_enabled, behavior.family()) {
        (true, BehaviorFamily::Following) => {
            agent.stats.rotational_calls += 1;
            let a = heuristic_rotational(pos, &herd, target, &legal);
            (a, a)
        }
        (true, BehaviorFamily::Herding) => {
            agent.stats.middle_calls += 1;
            let a = heuristic_middle(pos, &herd, target, &legal);
            (a, a)
        }
        _ => {
            let eps = epsilon_at(ctx.step.saturating_sub(1), &cfg.learning);
            if agent.rng.gen::<f64>() < eps {
                let a = agent.random_among(&legal);
                (a, a)
            } else {
                let intent = agent.tables[&behavior].greedy(state);
                let learned = agent.learned_delta(behavior, state, intent);
                let mapped =
                    map_action(intent, state, learned, &view, &cfg.abstraction, &cfg.cow_params)?;
                (mapped, intent)
            }
        }
    };

    agent.last_transition = Some(Transition {
        behavior,
        state,
        pending: if group_size >= 2 {
            PendingAction::JointObserved { member_snapshot: member_pos.clone(), own_before: pos }
        } else {
            PendingAction::Fixed(abstract_intent)
        },
    });
    agent.prev_behavior = Some(behavior);

    // Cooperation invitations: once per ally, when in sight with a herd.
    if let Some(inviting_herd) = own_herd {
        for (oid, ocell) in &percept.others {
            if !agent.coop_sent.contains(oid) {
                agent.coop_sent.insert(*oid);
                agent.group.insert(*oid);
                agent.lost_sight.insert(*oid, 0);
                agent.known_member_pos.insert(*oid, *ocell);
                agent.stats.coop_messages_sent += 1;
                outbox.push(Message {
                    step: ctx.step,
                    sender: crate::coordinator::Endpoint::Agent(agent.id),
                    recipient: Recipient::Agent(*oid),
                    body: MessageBody::Cooperation {
                        herd: inviting_herd.clone(),
                        invited: vec![*oid],
                    },
                });
            }
        }
    }

    Ok((concrete, outbox))
}
