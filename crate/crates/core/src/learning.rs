//! Tabular Q-learning over abstract states, the exploration policy, and
//! visit-count-weighted Q-table fusion.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, Write};

use rand::Rng;

use crate::abstraction::{AbstractState, Behavior};
use crate::error::{Error, Result};
use crate::world::{MoveAction, ALL_ACTIONS};

/// What a Q-table is about: one of the six herding behaviors, or one of the
/// goal-search areas.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum TableTag {
    Behavior(Behavior),
    Area(u8),
}

impl fmt::Display for TableTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TableTag::Behavior(b) => write!(f, "{b}"),
            TableTag::Area(i) => write!(f, "area-{i}"),
        }
    }
}

impl std::str::FromStr for TableTag {
    type Err = Error;
    fn from_str(s: &str) -> Result<TableTag> {
        if let Some(rest) = s.strip_prefix("area-") {
            let i = rest
                .parse::<u8>()
                .map_err(|_| Error::Parse(format!("bad area tag `{s}`")))?;
            return Ok(TableTag::Area(i));
        }
        Ok(TableTag::Behavior(s.parse()?))
    }
}

/// One table entry: the action value and how often the pair was visited.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QEntry {
    pub q: f64,
    pub visits: u64,
}

/// An associative Q-table keyed by (state, action).
///
/// Missing entries read as (0.0, 0). A BTreeMap keeps iteration order
/// deterministic for fusion, snapshots, and traces.
#[derive(Debug, Clone, PartialEq)]
pub struct QTable {
    pub tag: TableTag,
    entries: BTreeMap<(AbstractState, MoveAction), QEntry>,
}

impl QTable {
    pub fn new(tag: TableTag) -> Self {
        QTable { tag, entries: BTreeMap::new() }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, s: AbstractState, a: MoveAction) -> QEntry {
        self.entries
            .get(&(s, a))
            .copied()
            .unwrap_or(QEntry { q: 0.0, visits: 0 })
    }

    pub fn set(&mut self, s: AbstractState, a: MoveAction, entry: QEntry) {
        self.entries.insert((s, a), entry);
    }

    pub fn iter(&self) -> impl Iterator<Item = (&(AbstractState, MoveAction), &QEntry)> {
        self.entries.iter()
    }

    /// Max over the nine actions at `s`, with missing actions read as 0.
    pub fn max_q(&self, s: AbstractState) -> f64 {
        let mut best = 0.0f64;
        for a in ALL_ACTIONS {
            let q = self.get(s, a).q;
            if q > best {
                best = q;
            }
        }
        best
    }

    /// Greedy action over the given candidates (missing entries read 0);
    /// ties break to the lowest action index.
    pub fn greedy_among(&self, s: AbstractState, candidates: &[MoveAction]) -> MoveAction {
        debug_assert!(!candidates.is_empty());
        let mut best = candidates[0];
        let mut best_q = self.get(s, best).q;
        for &a in &candidates[1..] {
            let q = self.get(s, a).q;
            if q > best_q || (q == best_q && a.index() < best.index()) {
                best = a;
                best_q = q;
            }
        }
        best
    }

    /// Greedy action over all nine moves.
    pub fn greedy(&self, s: AbstractState) -> MoveAction {
        self.greedy_among(s, &ALL_ACTIONS)
    }
}

/// Learning-rate, discount, and exploration-schedule parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LearningParams {
    pub alpha: f64,
    pub gamma: f64,
    pub epsilon0: f64,
    pub epsilon_min: f64,
    /// Steps over which epsilon decays linearly from epsilon0 to
    /// epsilon_min; constant afterwards.
    pub decay_horizon: u64,
    pub seed: u64,
}

impl Default for LearningParams {
    fn default() -> Self {
        LearningParams {
            alpha: 0.1,
            gamma: 0.9,
            epsilon0: 1.0,
            epsilon_min: 0.05,
            decay_horizon: 30_000, // 60% of the default 50,000 iterations
            seed: 0,
        }
    }
}

impl LearningParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::Config(format!(
                "learning rate ({}) must be in (0, 1]",
                self.alpha
            )));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::Config(format!(
                "discount ({}) must be in [0, 1); values >= 1 diverge",
                self.gamma
            )));
        }
        for (name, e) in [("epsilon0", self.epsilon0), ("epsilon_min", self.epsilon_min)] {
            if !(0.0..=1.0).contains(&e) {
                return Err(Error::Config(format!("{name} ({e}) must be in [0, 1]")));
            }
        }
        Ok(())
    }
}

/// Exploration probability at a step: linear decay over the horizon, then
/// constant at the floor.
pub fn epsilon_at(step: u64, params: &LearningParams) -> f64 {
    if params.decay_horizon == 0 || step >= params.decay_horizon {
        return params.epsilon_min;
    }
    let frac = step as f64 / params.decay_horizon as f64;
    params.epsilon0 + (params.epsilon_min - params.epsilon0) * frac
}

/// The one-step backup: q + alpha * (r + gamma * max_next - q).
pub fn q_backup(q: f64, reward: f64, max_next: f64, params: &LearningParams) -> f64 {
    q + params.alpha * (reward + params.gamma * max_next - q)
}

/// Apply one Q-learning update to (s, a); only that entry changes, and its
/// visit count increments by one.
pub fn q_update(
    table: &mut QTable,
    s: AbstractState,
    a: MoveAction,
    reward: f64,
    s_next: AbstractState,
    params: &LearningParams,
) {
    let max_next = table.max_q(s_next);
    let entry = table.get(s, a);
    table.set(
        s,
        a,
        QEntry {
            q: q_backup(entry.q, reward, max_next, params),
            visits: entry.visits.saturating_add(1),
        },
    );
}

/// Epsilon-greedy action selection over the nine moves: with probability
/// epsilon(step) a uniform random action, otherwise the greedy action with
/// lowest-index tie-breaks.
pub fn select_action(
    table: &QTable,
    s: AbstractState,
    step: u64,
    params: &LearningParams,
    rng: &mut impl Rng,
) -> MoveAction {
    let eps = epsilon_at(step, params);
    if rng.gen::<f64>() < eps {
        ALL_ACTIONS[rng.gen_range(0..ALL_ACTIONS.len())]
    } else {
        table.greedy(s)
    }
}

/// Fuse same-tagged tables: for every key present anywhere, the fused value
/// is the visit-weighted mean of the inputs and the fused visit count is the
/// (saturating) sum. Keys with zero total visits keep (0.0, 0).
///
/// Per-key contributions are summed in a value-sorted order so that any
/// permutation of the input tables produces a bit-identical result.
pub fn fuse_tables(tables: &[&QTable]) -> Result<QTable> {
    let first = tables
        .first()
        .ok_or_else(|| Error::Protocol("fuse_tables needs at least one table".into()))?;
    let tag = first.tag;
    if let Some(t) = tables.iter().find(|t| t.tag != tag) {
        return Err(Error::Protocol(format!(
            "cannot fuse mixed table tags ({} vs {})",
            t.tag, tag
        )));
    }

    let mut fused = QTable::new(tag);
    let mut keys: Vec<(AbstractState, MoveAction)> = Vec::new();
    for t in tables {
        keys.extend(t.iter().map(|(k, _)| *k));
    }
    keys.sort();
    keys.dedup();

    let mut contributions: Vec<(f64, u64)> = Vec::with_capacity(tables.len());
    for key in keys {
        contributions.clear();
        for t in tables {
            let e = t.get(key.0, key.1);
            if e.visits > 0 {
                contributions.push((e.q, e.visits));
            }
        }
        fused.set(key.0, key.1, fuse_contributions(&mut contributions));
    }
    Ok(fused)
}

/// The per-key fusion arithmetic: visit-weighted mean over the nonzero
/// contributions, summed in value-sorted order for permutation invariance,
/// with saturating visit totals. Shared by `fuse_tables` and the
/// incrementally maintained fused views.
pub fn fuse_contributions(contributions: &mut [(f64, u64)]) -> QEntry {
    if contributions.is_empty() {
        return QEntry { q: 0.0, visits: 0 };
    }
    contributions.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut visits: u64 = 0;
    for &(_, m) in contributions.iter() {
        visits = visits.saturating_add(m);
    }
    // All-equal values fuse to exactly that value (the sorted order makes
    // the check O(1)); this keeps idempotence exact in f64.
    let first = contributions[0].0;
    let last = contributions[contributions.len() - 1].0;
    if first == last {
        return QEntry { q: first, visits };
    }
    let mut num = 0.0f64;
    let mut den = 0.0f64;
    for &(q, m) in contributions.iter() {
        num += q * m as f64;
        den += m as f64;
    }
    QEntry { q: num / den, visits }
}

// ---------------------------------------------------------------------------
// Snapshot format: one `tag s1 s2 s3 action q visits` record per line, with
// q printed at full precision so files round-trip losslessly.
// ---------------------------------------------------------------------------

pub fn write_qtable(w: &mut impl Write, table: &QTable) -> Result<()> {
    for ((s, a), e) in table.iter() {
        writeln!(
            w,
            "{} {} {} {} {} {:.17e} {}",
            table.tag,
            s.dist_target,
            s.dist_herd,
            s.angle,
            a.index(),
            e.q,
            e.visits
        )?;
    }
    Ok(())
}

pub fn read_qtable(r: &mut impl BufRead, tag: TableTag) -> Result<QTable> {
    let mut table = QTable::new(tag);
    for line in r.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let entry = parse_qtable_line(&line)?;
        let (line_tag, s, a, e) = entry;
        if line_tag != tag {
            return Err(Error::Parse(format!(
                "expected table tag {tag}, found {line_tag}"
            )));
        }
        table.set(s, a, e);
    }
    Ok(table)
}

pub fn parse_qtable_line(line: &str) -> Result<(TableTag, AbstractState, MoveAction, QEntry)> {
    let t: Vec<&str> = line.split_whitespace().collect();
    if t.len() != 7 {
        return Err(Error::Parse(format!("bad q-table record: {line}")));
    }
    let tag: TableTag = t[0].parse()?;
    let mut nums = [0u32; 3];
    for (i, s) in t[1..4].iter().enumerate() {
        nums[i] = s
            .parse()
            .map_err(|_| Error::Parse(format!("bad state bin `{s}` in `{line}`")))?;
    }
    let action_idx: usize = t[4]
        .parse()
        .map_err(|_| Error::Parse(format!("bad action `{}` in `{line}`", t[4])))?;
    let action = MoveAction::from_index(action_idx)
        .ok_or_else(|| Error::Parse(format!("action index {action_idx} out of range")))?;
    let q: f64 = t[5]
        .parse()
        .map_err(|_| Error::Parse(format!("bad q value `{}` in `{line}`", t[5])))?;
    let visits: u64 = t[6]
        .parse()
        .map_err(|_| Error::Parse(format!("bad visit count `{}` in `{line}`", t[6])))?;
    Ok((tag, AbstractState::new(nums[0], nums[1], nums[2]), action, QEntry { q, visits }))
}
