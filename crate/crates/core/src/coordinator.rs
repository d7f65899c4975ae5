//! The coordinator agent: closer-agent election, entrance broadcast, and
//! per-behavior Q-table aggregation, over a deterministic in-process
//! message bus with a serializable line format for trace logging and replay.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::agents::{agent_step, AgentConfig, AgentState, Herd, RewardMode, StepContext};
use crate::error::{Error, Result};
use crate::geom::{Cell, Vec2};
use crate::learning::{fuse_tables, parse_qtable_line, QTable, TableTag};
use crate::world::{perceive, step_world, success_percent, GridMap, MoveAction, WorldState};

/// A message source.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Endpoint {
    Coordinator,
    Agent(usize),
}

/// A message destination.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Recipient {
    Coordinator,
    Agent(usize),
    AllAgents,
}

/// Typed payloads of the coordinator/player protocol.
#[derive(Debug, Clone, PartialEq)]
pub enum MessageBody {
    Coordinate { pos: Cell },
    CloserNotify,
    EntrancesReport { entrances: Vec<Cell> },
    EntrancesBroadcast { entrances: Vec<Cell> },
    QTableShare { table: QTable },
    FusedTablesBroadcast { tables: Vec<QTable> },
    Cooperation { herd: Herd, invited: Vec<usize> },
}

impl MessageBody {
    pub fn kind_name(&self) -> &'static str {
        match self {
            MessageBody::Coordinate { .. } => "coordinate",
            MessageBody::CloserNotify => "closer-notify",
            MessageBody::EntrancesReport { .. } => "entrances-report",
            MessageBody::EntrancesBroadcast { .. } => "entrances-broadcast",
            MessageBody::QTableShare { .. } => "qtable-share",
            MessageBody::FusedTablesBroadcast { .. } => "fused-broadcast",
            MessageBody::Cooperation { .. } => "cooperation",
        }
    }
}

/// One bus message.
#[derive(Debug, Clone, PartialEq)]
pub struct Message {
    pub step: u64,
    pub sender: Endpoint,
    pub recipient: Recipient,
    pub body: MessageBody,
}

/// True when `p1` is strictly closer to the corral middle than `p2`
/// (ties keep the incumbent).
pub fn is_closer(p1: Cell, p2: Cell, corral_mid: Vec2) -> bool {
    p1.to_vec2().distance(corral_mid) < p2.to_vec2().distance(corral_mid)
}

/// The analyzer unit's state.
#[derive(Debug, Clone, PartialEq)]
pub struct CoordinatorState {
    pub n_agents: usize,
    pub counter1: usize,
    pub counter2: usize,
    pub closer: usize,
    pub closer_pos: Option<Cell>,
    pub closer_elected: bool,
    pub entrances: Vec<Cell>,
    corral_mid: Vec2,
    staged: BTreeMap<TableTag, Vec<QTable>>,
    shared_this_round: Vec<bool>,
}

impl CoordinatorState {
    pub fn new(n_agents: usize, corral_mid: Vec2) -> Self {
        CoordinatorState {
            n_agents,
            counter1: 0,
            counter2: 0,
            closer: 0,
            closer_pos: None,
            closer_elected: false,
            entrances: Vec::new(),
            corral_mid,
            staged: BTreeMap::new(),
            shared_this_round: vec![false; n_agents],
        }
    }

    /// Canonical serialization of the full state, used for bitwise replay
    /// comparison and digests.
    pub fn canonical_string(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "n={} c1={} c2={} closer={} elected={} mid={:.17e},{:.17e}",
            self.n_agents,
            self.counter1,
            self.counter2,
            self.closer,
            self.closer_elected,
            self.corral_mid.x,
            self.corral_mid.y
        );
        if let Some(p) = self.closer_pos {
            let _ = writeln!(out, "closer_pos={} {}", p.x, p.y);
        }
        for e in &self.entrances {
            let _ = writeln!(out, "entrance={} {}", e.x, e.y);
        }
        for (tag, tables) in &self.staged {
            for t in tables {
                let _ = writeln!(out, "staged tag={tag} entries={}", t.len());
                let mut buf = Vec::new();
                let _ = crate::learning::write_qtable(&mut buf, t);
                out.push_str(&String::from_utf8_lossy(&buf));
            }
        }
        for (i, s) in self.shared_this_round.iter().enumerate() {
            let _ = writeln!(out, "shared[{i}]={s}");
        }
        out
    }
}

/// Process one inbound message per Algorithm 1: count coordinates and elect
/// the closer agent, forward entrance reports as broadcasts, and stage
/// Q-table shares until every agent has shared, then fuse per behavior and
/// broadcast the fused set.
pub fn handle_message(state: &mut CoordinatorState, msg: &Message) -> Result<Vec<Message>> {
    let mut out = Vec::new();
    let sender_id = match msg.sender {
        Endpoint::Agent(id) if id < state.n_agents => id,
        Endpoint::Agent(id) => {
            return Err(Error::Protocol(format!("message from unknown agent {id}")))
        }
        Endpoint::Coordinator => {
            return Err(Error::Protocol("coordinator cannot message itself".into()))
        }
    };

    match &msg.body {
        MessageBody::Coordinate { pos } => {
            state.counter1 += 1;
            match state.closer_pos {
                None => {
                    state.closer = sender_id;
                    state.closer_pos = Some(*pos);
                }
                Some(best) => {
                    if is_closer(*pos, best, state.corral_mid) {
                        state.closer = sender_id;
                        state.closer_pos = Some(*pos);
                    }
                }
            }
            if state.counter1 == state.n_agents && !state.closer_elected {
                state.closer_elected = true;
                out.push(Message {
                    step: msg.step,
                    sender: Endpoint::Coordinator,
                    recipient: Recipient::Agent(state.closer),
                    body: MessageBody::CloserNotify,
                });
            }
        }
        MessageBody::EntrancesReport { entrances } => {
            state.entrances = entrances.clone();
            out.push(Message {
                step: msg.step,
                sender: Endpoint::Coordinator,
                recipient: Recipient::AllAgents,
                body: MessageBody::EntrancesBroadcast { entrances: entrances.clone() },
            });
        }
        MessageBody::QTableShare { table } => {
            if state.shared_this_round[sender_id] {
                return Err(Error::Protocol(format!(
                    "agent {sender_id} already shared a Q-table this round"
                )));
            }
            state.shared_this_round[sender_id] = true;
            state.counter2 += 1;
            state.staged.entry(table.tag).or_default().push(table.clone());
            if state.counter2 == state.n_agents {
                let mut fused_set = Vec::new();
                for (_, tables) in std::mem::take(&mut state.staged) {
                    let refs: Vec<&QTable> = tables.iter().collect();
                    fused_set.push(fuse_tables(&refs)?);
                }
                out.push(Message {
                    step: msg.step,
                    sender: Endpoint::Coordinator,
                    recipient: Recipient::AllAgents,
                    body: MessageBody::FusedTablesBroadcast { tables: fused_set },
                });
                state.counter2 = 0;
                state.shared_this_round = vec![false; state.n_agents];
            }
        }
        other => {
            return Err(Error::Protocol(format!(
                "coordinator cannot handle message kind {}",
                other.kind_name()
            )));
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Round driver
// ---------------------------------------------------------------------------

/// Run-level options for the coordinator round loop.
#[derive(Debug, Clone)]
pub struct SimConfig {
    pub agent: AgentConfig,
    pub transfer_enabled: bool,
    /// Fuse every k-th step (k >= 1).
    pub fusion_period: u64,
}

/// Everything that advances together in one simulation.
#[derive(Debug, Clone)]
pub struct Simulation {
    pub map: GridMap,
    pub world: WorldState,
    pub agents: Vec<AgentState>,
    pub coordinator: CoordinatorState,
    pub cfg: SimConfig,
    pending_to_agents: Vec<Message>,
    last_level: Option<f64>,
    /// Messages the coordinator processed, in order (kept when tracing).
    pub trace: Option<Vec<Message>>,
    /// Per-step counts of (qtable-shares, fused-broadcasts, cooperation)
    /// for protocol tests, kept only while tracing.
    pub step_message_counts: Vec<(u64, usize, usize, usize)>,
}

impl Simulation {
    pub fn new(
        map: GridMap,
        world: WorldState,
        cfg: SimConfig,
        master_seed: u64,
        trace: bool,
    ) -> Self {
        let n = world.agents.len();
        let agents: Vec<AgentState> = (0..n).map(|i| AgentState::new(i, master_seed)).collect();
        let coordinator = CoordinatorState::new(n, map.corral.center());
        Simulation {
            map,
            world,
            agents,
            coordinator,
            cfg,
            pending_to_agents: Vec::new(),
            last_level: None,
            trace: if trace { Some(Vec::new()) } else { None },
            step_message_counts: Vec::new(),
        }
    }

    /// Success level of the current world.
    pub fn success(&self) -> Result<f64> {
        success_percent(&self.world, &self.map)
    }

    /// One global step: deliver pending broadcasts, run every agent, advance
    /// the world, collect Q-table shares, and let the coordinator process
    /// the round's messages in (sender id, emission order) order.
    pub fn step(&mut self) -> Result<()> {
        let step = self.world.step + 1;
        let n = self.agents.len();

        // Deliver messages produced last round.
        let pending = std::mem::take(&mut self.pending_to_agents);
        let mut inboxes: Vec<Vec<Message>> = vec![Vec::new(); n];
        for msg in pending {
            match msg.recipient {
                Recipient::Agent(i) => {
                    if i >= n {
                        return Err(Error::Protocol(format!("message to unknown agent {i}")));
                    }
                    inboxes[i].push(msg);
                }
                Recipient::AllAgents => {
                    for inbox in inboxes.iter_mut() {
                        inbox.push(msg.clone());
                    }
                }
                Recipient::Coordinator => {
                    return Err(Error::Protocol(
                        "pending agent delivery addressed to coordinator".into(),
                    ))
                }
            }
        }

        // All percepts observe the same pre-step world.
        let mut percepts = Vec::with_capacity(n);
        for i in 0..n {
            percepts.push(perceive(&self.world, &self.map, i)?);
        }
        // Reward for the transition that produced the current world.
        let level = success_percent(&self.world, &self.map)?;
        let reward = match self.cfg.agent.reward_mode {
            RewardMode::Level => level,
            RewardMode::Delta => level - self.last_level.unwrap_or(level),
        };
        self.last_level = Some(level);

        let mut actions: Vec<MoveAction> = Vec::with_capacity(n);
        let mut to_coordinator: Vec<Message> = Vec::new();
        let mut coop_count = 0usize;
        for i in 0..n {
            let inbox = std::mem::take(&mut inboxes[i]);
            let (action, outbox) = agent_step(
                &mut self.agents[i],
                &percepts[i],
                &inbox,
                &self.map,
                &self.cfg.agent,
                StepContext { step, reward },
            )?;
            actions.push(action);
            for msg in outbox {
                match msg.recipient {
                    Recipient::Coordinator => to_coordinator.push(msg),
                    Recipient::Agent(_) => {
                        if matches!(msg.body, MessageBody::Cooperation { .. }) {
                            coop_count += 1;
                        }
                        self.pending_to_agents.push(msg);
                    }
                    Recipient::AllAgents => {
                        return Err(Error::Protocol("agents cannot broadcast".into()))
                    }
                }
            }
        }

        // World advances behind the barrier.
        self.world = step_world(&self.world, &self.map, &actions, &self.cfg.agent.cow_params)?;

        // Knowledge sharing: one QTableShare per agent per fusion round.
        let mut shares = 0usize;
        if self.cfg.transfer_enabled
            && step.is_multiple_of(self.cfg.fusion_period.max(1))
            && self.agents.iter().all(|a| a.learning_active())
        {
            for agent in &self.agents {
                shares += 1;
                to_coordinator.push(Message {
                    step,
                    sender: Endpoint::Agent(agent.id),
                    recipient: Recipient::Coordinator,
                    body: MessageBody::QTableShare { table: agent.share_table() },
                });
            }
        }

        // The coordinator processes the round in total order: messages were
        // emitted in ascending sender id within each phase, and shares after
        // reports; sort stably by sender id to fix the order.
        to_coordinator.sort_by_key(|m| match m.sender {
            Endpoint::Agent(id) => id,
            Endpoint::Coordinator => usize::MAX,
        });

        let mut broadcasts = 0usize;
        for msg in to_coordinator {
            if let Some(t) = self.trace.as_mut() {
                t.push(msg.clone());
            }
            let replies = handle_message(&mut self.coordinator, &msg)?;
            for r in replies {
                if matches!(r.body, MessageBody::FusedTablesBroadcast { .. }) {
                    broadcasts += 1;
                }
                if let Some(t) = self.trace.as_mut() {
                    t.push(r.clone());
                }
                self.pending_to_agents.push(r);
            }
        }
        if self.trace.is_some() {
            self.step_message_counts.push((step, shares, broadcasts, coop_count));
        }
        Ok(())
    }

    /// Run `iterations` steps.
    pub fn run(&mut self, iterations: u64) -> Result<()> {
        for _ in 0..iterations {
            self.step()?;
        }
        Ok(())
    }

    /// The coordinator-inbound trace as a replayable file, when tracing.
    pub fn trace_file(&self) -> Option<TraceFile> {
        self.trace.as_ref().map(|messages| TraceFile {
            n_agents: self.agents.len(),
            corral_mid: self.map.corral.center(),
            messages: messages.clone(),
        })
    }
}

// ---------------------------------------------------------------------------
// Trace encoding: one self-describing line per message.
// ---------------------------------------------------------------------------

fn cells_to_str(cells: &[Cell]) -> String {
    let mut s = String::new();
    let _ = write!(s, "{}", cells.len());
    for c in cells {
        let _ = write!(s, " {} {}", c.x, c.y);
    }
    s
}

fn endpoint_to_str(e: Endpoint) -> String {
    match e {
        Endpoint::Coordinator => "coord".into(),
        Endpoint::Agent(i) => format!("agent:{i}"),
    }
}

fn recipient_to_str(r: Recipient) -> String {
    match r {
        Recipient::Coordinator => "coord".into(),
        Recipient::Agent(i) => format!("agent:{i}"),
        Recipient::AllAgents => "all".into(),
    }
}

/// Encode one message as a single trace line.
pub fn message_to_line(msg: &Message) -> String {
    let mut s = format!(
        "{} {} {} {}",
        msg.step,
        endpoint_to_str(msg.sender),
        recipient_to_str(msg.recipient),
        msg.body.kind_name()
    );
    match &msg.body {
        MessageBody::Coordinate { pos } => {
            let _ = write!(s, " {} {}", pos.x, pos.y);
        }
        MessageBody::CloserNotify => {}
        MessageBody::EntrancesReport { entrances } | MessageBody::EntrancesBroadcast { entrances } => {
            let _ = write!(s, " {}", cells_to_str(entrances));
        }
        MessageBody::QTableShare { table } => {
            let _ = write!(s, " {} {}", table.tag, table.len());
            for ((st, a), e) in table.iter() {
                let _ = write!(
                    s,
                    " {} {} {} {} {:.17e} {}",
                    st.dist_target,
                    st.dist_herd,
                    st.angle,
                    a.index(),
                    e.q,
                    e.visits
                );
            }
        }
        MessageBody::FusedTablesBroadcast { tables } => {
            let _ = write!(s, " {}", tables.len());
            for t in tables {
                let _ = write!(s, " {} {}", t.tag, t.len());
                for ((st, a), e) in t.iter() {
                    let _ = write!(
                        s,
                        " {} {} {} {} {:.17e} {}",
                        st.dist_target,
                        st.dist_herd,
                        st.angle,
                        a.index(),
                        e.q,
                        e.visits
                    );
                }
            }
        }
        MessageBody::Cooperation { herd, invited } => {
            let _ = write!(s, " {}", invited.len());
            for i in invited {
                let _ = write!(s, " {i}");
            }
            let _ = write!(s, " {}", cells_to_str(herd.members()));
        }
    }
    s
}

fn parse_endpoint(tok: &str) -> Result<Endpoint> {
    if tok == "coord" {
        return Ok(Endpoint::Coordinator);
    }
    tok.strip_prefix("agent:")
        .and_then(|s| s.parse().ok())
        .map(Endpoint::Agent)
        .ok_or_else(|| Error::Parse(format!("bad endpoint `{tok}`")))
}

fn parse_recipient(tok: &str) -> Result<Recipient> {
    if tok == "coord" {
        return Ok(Recipient::Coordinator);
    }
    if tok == "all" {
        return Ok(Recipient::AllAgents);
    }
    tok.strip_prefix("agent:")
        .and_then(|s| s.parse().ok())
        .map(Recipient::Agent)
        .ok_or_else(|| Error::Parse(format!("bad recipient `{tok}`")))
}

struct TokenCursor<'a> {
    toks: Vec<&'a str>,
    at: usize,
}

impl<'a> TokenCursor<'a> {
    fn next(&mut self) -> Result<&'a str> {
        let t = self
            .toks
            .get(self.at)
            .ok_or_else(|| Error::Parse("truncated trace line".into()))?;
        self.at += 1;
        Ok(t)
    }

    fn next_num<T: std::str::FromStr>(&mut self) -> Result<T> {
        let t = self.next()?;
        t.parse()
            .map_err(|_| Error::Parse(format!("bad number `{t}` in trace line")))
    }

    fn next_cells(&mut self) -> Result<Vec<Cell>> {
        let n: usize = self.next_num()?;
        let mut cells = Vec::with_capacity(n);
        for _ in 0..n {
            let x: i32 = self.next_num()?;
            let y: i32 = self.next_num()?;
            cells.push(Cell::new(x, y));
        }
        Ok(cells)
    }

    fn next_table(&mut self) -> Result<QTable> {
        let tag: TableTag = self.next()?.parse()?;
        let n: usize = self.next_num()?;
        let mut table = QTable::new(tag);
        for _ in 0..n {
            // Reuse the snapshot-record parser by reassembling its line shape.
            let line = format!(
                "{tag} {} {} {} {} {} {}",
                self.next()?,
                self.next()?,
                self.next()?,
                self.next()?,
                self.next()?,
                self.next()?
            );
            let (_, s, a, e) = parse_qtable_line(&line)?;
            table.set(s, a, e);
        }
        Ok(table)
    }
}

/// Decode one trace line.
pub fn message_from_line(line: &str) -> Result<Message> {
    let mut cur = TokenCursor { toks: line.split_whitespace().collect(), at: 0 };
    let step: u64 = cur.next_num()?;
    let sender = parse_endpoint(cur.next()?)?;
    let recipient = parse_recipient(cur.next()?)?;
    let kind = cur.next()?;
    let body = match kind {
        "coordinate" => {
            let x: i32 = cur.next_num()?;
            let y: i32 = cur.next_num()?;
            MessageBody::Coordinate { pos: Cell::new(x, y) }
        }
        "closer-notify" => MessageBody::CloserNotify,
        "entrances-report" => MessageBody::EntrancesReport { entrances: cur.next_cells()? },
        "entrances-broadcast" => MessageBody::EntrancesBroadcast { entrances: cur.next_cells()? },
        "qtable-share" => MessageBody::QTableShare { table: cur.next_table()? },
        "fused-broadcast" => {
            let n: usize = cur.next_num()?;
            let mut tables = Vec::with_capacity(n);
            for _ in 0..n {
                tables.push(cur.next_table()?);
            }
            MessageBody::FusedTablesBroadcast { tables }
        }
        "cooperation" => {
            let n: usize = cur.next_num()?;
            let mut invited = Vec::with_capacity(n);
            for _ in 0..n {
                invited.push(cur.next_num()?);
            }
            let members = cur.next_cells()?;
            let herd = Herd::new(members)
                .ok_or_else(|| Error::Parse("cooperation message with empty herd".into()))?;
            MessageBody::Cooperation { herd, invited }
        }
        other => return Err(Error::Parse(format!("unknown message kind `{other}`"))),
    };
    Ok(Message { step, sender, recipient, body })
}

/// A logged coordinator-inbound trace plus the context needed to replay it.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceFile {
    pub n_agents: usize,
    pub corral_mid: Vec2,
    pub messages: Vec<Message>,
}

impl TraceFile {
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "# herdsim trace v1 agents={} mid={:.17e},{:.17e}\n",
            self.n_agents, self.corral_mid.x, self.corral_mid.y
        );
        for m in &self.messages {
            out.push_str(&message_to_line(m));
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<TraceFile> {
        let header = text
            .lines()
            .next()
            .ok_or_else(|| Error::Parse("empty trace file".into()))?;
        if !header.starts_with("# herdsim trace v1") {
            return Err(Error::Parse(format!("bad trace header: {header}")));
        }
        let mut n_agents: Option<usize> = None;
        let mut mid: Option<Vec2> = None;
        for tok in header.split_whitespace() {
            if let Some(v) = tok.strip_prefix("agents=") {
                n_agents =
                    Some(v.parse().map_err(|_| Error::Parse(format!("bad agents `{v}`")))?);
            }
            if let Some(v) = tok.strip_prefix("mid=") {
                let (x, y) = v
                    .split_once(',')
                    .ok_or_else(|| Error::Parse(format!("bad mid `{v}`")))?;
                mid = Some(Vec2::new(
                    x.parse().map_err(|_| Error::Parse(format!("bad mid x `{x}`")))?,
                    y.parse().map_err(|_| Error::Parse(format!("bad mid y `{y}`")))?,
                ));
            }
        }
        let messages: Vec<Message> = text
            .lines()
            .skip(1)
            .filter(|l| !l.trim().is_empty() && !l.starts_with('#'))
            .map(message_from_line)
            .collect::<Result<_>>()?;
        Ok(TraceFile {
            n_agents: n_agents.ok_or_else(|| Error::Parse("trace header lacks agents=".into()))?,
            corral_mid: mid.ok_or_else(|| Error::Parse("trace header lacks mid=".into()))?,
            messages,
        })
    }

    /// Replay against a fresh coordinator.
    pub fn replay(&self) -> Result<CoordinatorState> {
        replay_trace(&self.messages, self.n_agents, self.corral_mid)
    }
}

/// Replay a coordinator-inbound trace against a fresh coordinator and
/// return the resulting state.
pub fn replay_trace(
    messages: &[Message],
    n_agents: usize,
    corral_mid: Vec2,
) -> Result<CoordinatorState> {
    let mut state = CoordinatorState::new(n_agents, corral_mid);
    for msg in messages {
        if msg.recipient != Recipient::Coordinator {
            continue;
        }
        handle_message(&mut state, msg)?;
    }
    Ok(state)
}
