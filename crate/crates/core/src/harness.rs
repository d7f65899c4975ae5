//! Experiment runner: scenario configuration, the paired transfer
//! comparison, transfer metrics, and the CSV/report file formats.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::abstraction::AbstractionParams;
use crate::agents::{AgentConfig, RewardMode};
use crate::coordinator::{SimConfig, Simulation};
use crate::error::{Error, Result};
use crate::geom::Rect;
use crate::learning::LearningParams;
use crate::world::{build_map, spawn_world, CowParams};

/// Everything that defines one herding run.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub side: i32,
    pub cows: usize,
    pub obstacles: usize,
    pub agents: usize,
    pub d: f64,
    pub a: f64,
    pub transfer: bool,
    pub heuristics: bool,
    pub iterations: u64,
    pub sample_every: u64,
    pub seed: u64,
    /// None derives a centered square of side max(4, side/5).
    pub corral: Option<Rect>,
    pub cow_params: CowParams,
    pub alpha: f64,
    pub gamma: f64,
    pub epsilon0: f64,
    pub epsilon_min: f64,
    /// 0 means auto: 60% of the iteration count.
    pub decay_horizon: u64,
    pub proximity_threshold: f64,
    pub reward_mode: RewardMode,
    pub hysteresis_band: f64,
    pub fusion_period: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            side: 100,
            cows: 130,
            obstacles: 160,
            agents: 2,
            d: 20.0,
            a: 10.0,
            transfer: true,
            heuristics: false,
            iterations: 50_000,
            sample_every: 50,
            seed: 1,
            corral: None,
            cow_params: CowParams::default(),
            alpha: 0.1,
            gamma: 0.9,
            epsilon0: 1.0,
            epsilon_min: 0.05,
            decay_horizon: 0,
            proximity_threshold: 3.0,
            reward_mode: RewardMode::Level,
            hysteresis_band: 10.0,
            fusion_period: 1,
        }
    }
}

impl ScenarioConfig {
    pub fn corral_rect(&self) -> Rect {
        self.corral.unwrap_or_else(|| {
            let c = (self.side / 5).max(4);
            let lo = (self.side - c) / 2;
            Rect::new(lo, lo, lo + c - 1, lo + c - 1)
        })
    }

    pub fn resolved_decay_horizon(&self) -> u64 {
        if self.decay_horizon == 0 {
            (self.iterations * 60) / 100
        } else {
            self.decay_horizon
        }
    }

    pub fn learning_params(&self) -> LearningParams {
        LearningParams {
            alpha: self.alpha,
            gamma: self.gamma,
            epsilon0: self.epsilon0,
            epsilon_min: self.epsilon_min,
            decay_horizon: self.resolved_decay_horizon(),
            seed: self.seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.cows == 0 {
            return Err(Error::Config("cows must be positive".into()));
        }
        if self.agents == 0 {
            return Err(Error::Config("agents must be positive".into()));
        }
        if self.iterations == 0 || self.sample_every == 0 {
            return Err(Error::Config("iterations and sample_every must be positive".into()));
        }
        if self.fusion_period == 0 {
            return Err(Error::Config("fusion_period must be at least 1".into()));
        }
        AbstractionParams::new(self.d, self.a, self.side as f64)?;
        self.cow_params.validate()?;
        self.learning_params().validate()?;
        let c = self.corral_rect();
        if !c.is_valid() {
            return Err(Error::Config(format!("corral {c:?} is empty")));
        }
        Ok(())
    }

    /// Canonical flat `key = value` serialization (sorted keys); the config
    /// digest hashes exactly this text.
    pub fn canonical_string(&self) -> String {
        let c = self.corral_rect();
        let mut kv: Vec<(&str, String)> = vec![
            ("a", format!("{}", self.a)),
            ("agents", format!("{}", self.agents)),
            ("alpha", format!("{}", self.alpha)),
            ("cohesion_radius", format!("{}", self.cow_params.cohesion_radius)),
            ("corral_x1", format!("{}", c.x1)),
            ("corral_x2", format!("{}", c.x2)),
            ("corral_y1", format!("{}", c.y1)),
            ("corral_y2", format!("{}", c.y2)),
            ("cows", format!("{}", self.cows)),
            ("d", format!("{}", self.d)),
            ("decay_horizon", format!("{}", self.resolved_decay_horizon())),
            ("epsilon0", format!("{}", self.epsilon0)),
            ("epsilon_min", format!("{}", self.epsilon_min)),
            ("flee_radius", format!("{}", self.cow_params.flee_radius)),
            ("fusion_period", format!("{}", self.fusion_period)),
            ("gamma", format!("{}", self.gamma)),
            ("heuristics", format!("{}", self.heuristics)),
            ("hysteresis_band", format!("{}", self.hysteresis_band)),
            ("iterations", format!("{}", self.iterations)),
            ("obstacles", format!("{}", self.obstacles)),
            ("proximity_threshold", format!("{}", self.proximity_threshold)),
            (
                "reward_mode",
                match self.reward_mode {
                    RewardMode::Level => "level".into(),
                    RewardMode::Delta => "delta".into(),
                },
            ),
            ("sample_every", format!("{}", self.sample_every)),
            ("seed", format!("{}", self.seed)),
            ("separation_radius", format!("{}", self.cow_params.separation_radius)),
            ("side", format!("{}", self.side)),
            ("transfer", format!("{}", self.transfer)),
            ("w_cohesion", format!("{}", self.cow_params.w_cohesion)),
            ("w_flee", format!("{}", self.cow_params.w_flee)),
            ("w_random", format!("{}", self.cow_params.w_random)),
            ("w_separation", format!("{}", self.cow_params.w_separation)),
        ];
        kv.sort_by(|x, y| x.0.cmp(y.0));
        let mut out = String::new();
        for (k, v) in kv {
            out.push_str(&format!("{k} = {v}\n"));
        }
        out
    }

    pub fn digest(&self) -> String {
        let hash = Sha256::digest(self.canonical_string().as_bytes());
        hash.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Apply one `key = value` assignment.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse()
                .map_err(|_| Error::Config(format!("bad value `{v}` for key `{key}`")))
        }
        let v = value.trim();
        match key {
            "side" => self.side = num(key, v)?,
            "cows" => self.cows = num(key, v)?,
            "obstacles" => self.obstacles = num(key, v)?,
            "agents" => self.agents = num(key, v)?,
            "d" => self.d = num(key, v)?,
            "a" => self.a = num(key, v)?,
            "transfer" => self.transfer = parse_bool(key, v)?,
            "heuristics" => self.heuristics = parse_bool(key, v)?,
            "iterations" => self.iterations = num(key, v)?,
            "sample_every" => self.sample_every = num(key, v)?,
            "seed" => self.seed = num(key, v)?,
            "corral_x1" => self.corral_mut().x1 = num(key, v)?,
            "corral_y1" => self.corral_mut().y1 = num(key, v)?,
            "corral_x2" => self.corral_mut().x2 = num(key, v)?,
            "corral_y2" => self.corral_mut().y2 = num(key, v)?,
            "flee_radius" => self.cow_params.flee_radius = num(key, v)?,
            "cohesion_radius" => self.cow_params.cohesion_radius = num(key, v)?,
            "separation_radius" => self.cow_params.separation_radius = num(key, v)?,
            "w_flee" => self.cow_params.w_flee = num(key, v)?,
            "w_cohesion" => self.cow_params.w_cohesion = num(key, v)?,
            "w_separation" => self.cow_params.w_separation = num(key, v)?,
            "w_random" => self.cow_params.w_random = num(key, v)?,
            "alpha" => self.alpha = num(key, v)?,
            "gamma" => self.gamma = num(key, v)?,
            "epsilon0" => self.epsilon0 = num(key, v)?,
            "epsilon_min" => self.epsilon_min = num(key, v)?,
            "decay_horizon" => self.decay_horizon = num(key, v)?,
            "proximity_threshold" => self.proximity_threshold = num(key, v)?,
            "hysteresis_band" => self.hysteresis_band = num(key, v)?,
            "fusion_period" => self.fusion_period = num(key, v)?,
            "reward_mode" => {
                self.reward_mode = match v {
                    "level" => RewardMode::Level,
                    "delta" => RewardMode::Delta,
                    other => {
                        return Err(Error::Config(format!(
                            "reward_mode must be `level` or `delta`, got `{other}`"
                        )))
                    }
                }
            }
            other => return Err(Error::Config(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    fn corral_mut(&mut self) -> &mut Rect {
        if self.corral.is_none() {
            self.corral = Some(self.corral_rect());
        }
        self.corral.as_mut().expect("just set")
    }
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" => Ok(true),
        "false" => Ok(false),
        other => Err(Error::Config(format!(
            "key `{key}` needs `true` or `false`, got `{other}`"
        ))),
    }
}

/// Parse a flat `key = value` config file (# starts a comment).
pub fn parse_config(text: &str) -> Result<ScenarioConfig> {
    let mut cfg = ScenarioConfig::default();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::Config(format!("line {}: expected `key = value`, got `{raw}`", lineno + 1))
        })?;
        cfg.set(key.trim(), value.trim())?;
    }
    Ok(cfg)
}

// ---------------------------------------------------------------------------
// Curves and metrics
// ---------------------------------------------------------------------------

/// Sampled (iteration, success-percent) series.
#[derive(Debug, Clone, PartialEq)]
pub struct LearningCurve {
    pub samples: Vec<(u64, f64)>,
}

impl LearningCurve {
    pub fn new(samples: Vec<(u64, f64)>) -> Result<Self> {
        for w in samples.windows(2) {
            if w[1].0 <= w[0].0 {
                return Err(Error::Domain("curve iterations must strictly increase".into()));
            }
        }
        if samples.iter().any(|(_, s)| !(0.0..=100.0).contains(s)) {
            return Err(Error::Domain("success values must lie in [0, 100]".into()));
        }
        Ok(LearningCurve { samples })
    }

    pub fn final_success(&self) -> f64 {
        self.samples.last().map_or(0.0, |(_, s)| *s)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("# herdsim curve v1\niteration,success\n");
        for (it, s) in &self.samples {
            out.push_str(&format!("{it},{s}\n"));
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<LearningCurve> {
        let mut samples = Vec::new();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') || line == "iteration,success" {
                continue;
            }
            let (it, s) = line
                .split_once(',')
                .ok_or_else(|| Error::Parse(format!("bad curve row `{line}`")))?;
            let it: u64 = it
                .parse()
                .map_err(|_| Error::Parse(format!("bad iteration `{it}`")))?;
            let s: f64 = s.parse().map_err(|_| Error::Parse(format!("bad success `{s}`")))?;
            samples.push((it, s));
        }
        LearningCurve::new(samples)
    }
}

/// Trapezoidal area under the sampled curve.
fn auc(curve: &LearningCurve) -> f64 {
    let mut area = 0.0;
    for w in curve.samples.windows(2) {
        let dx = (w[1].0 - w[0].0) as f64;
        area += dx * (w[0].1 + w[1].1) / 2.0;
    }
    area
}

/// Outcome of the transfer-rate computation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TransferOutcome {
    Rate(f64),
    /// The baseline area is zero, so the ratio is undefined.
    NoBaseline,
}

impl fmt::Display for TransferOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TransferOutcome::Rate(r) => write!(f, "{r}"),
            TransferOutcome::NoBaseline => write!(f, "no-baseline"),
        }
    }
}

/// Relative area-under-curve gain of the with-transfer curve. Both curves
/// must be sampled on the identical iteration grid (resampling is refused
/// rather than silently biased).
pub fn transfer_rate(with: &LearningCurve, without: &LearningCurve) -> Result<TransferOutcome> {
    let grid_with: Vec<u64> = with.samples.iter().map(|(i, _)| *i).collect();
    let grid_without: Vec<u64> = without.samples.iter().map(|(i, _)| *i).collect();
    if grid_with != grid_without {
        return Err(Error::Config(
            "transfer_rate needs both curves on the identical iteration grid".into(),
        ));
    }
    let base = auc(without);
    if base == 0.0 {
        return Ok(TransferOutcome::NoBaseline);
    }
    Ok(TransferOutcome::Rate((auc(with) - base) / base))
}

/// Mean success over the first `window_fraction` of the samples.
pub fn jumpstart(curve: &LearningCurve, window_fraction: f64) -> Result<f64> {
    let n = curve.samples.len();
    let k = ((n as f64) * window_fraction).floor() as usize;
    if k < 2 {
        return Err(Error::Domain(format!(
            "jumpstart window must cover at least 2 samples (got {k} of {n})"
        )));
    }
    Ok(curve.samples[..k].iter().map(|(_, s)| *s).sum::<f64>() / k as f64)
}

/// First sampled iteration after which the trailing moving average stays
/// within `tolerance` points of its final value.
pub fn convergence_iteration(curve: &LearningCurve, tolerance: f64, smooth_window: usize) -> u64 {
    let n = curve.samples.len();
    if n == 0 {
        return 0;
    }
    let w = smooth_window.max(1);
    let mut ma = Vec::with_capacity(n);
    let mut running = 0.0;
    for i in 0..n {
        running += curve.samples[i].1;
        if i >= w {
            running -= curve.samples[i - w].1;
        }
        let len = (i + 1).min(w) as f64;
        ma.push(running / len);
    }
    let final_ma = *ma.last().expect("nonempty");
    let mut j = n - 1;
    while j > 0 {
        if (ma[j - 1] - final_ma).abs() <= tolerance {
            j -= 1;
        } else {
            break;
        }
    }
    curve.samples[j].0
}

/// Metrics of one finished run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub final_success: f64,
    pub convergence_iteration: u64,
    /// Absent when the curve has too few samples for the window.
    pub jumpstart: Option<f64>,
    /// Present only when the run was half of a paired comparison.
    pub transfer_rate: Option<TransferOutcome>,
    pub seed: u64,
    pub config_digest: String,
}

/// Defaults fixed by the metric definitions.
pub const JUMPSTART_WINDOW: f64 = 0.05;
pub const CONVERGENCE_TOLERANCE: f64 = 2.0;
pub const CONVERGENCE_WINDOW: usize = 20;

/// Metrics of a finished curve under the standard windows.
pub fn make_report(curve: &LearningCurve, cfg: &ScenarioConfig) -> RunReport {
    RunReport {
        final_success: curve.final_success(),
        convergence_iteration: convergence_iteration(curve, CONVERGENCE_TOLERANCE, CONVERGENCE_WINDOW),
        jumpstart: jumpstart(curve, JUMPSTART_WINDOW).ok(),
        transfer_rate: None,
        seed: cfg.seed,
        config_digest: cfg.digest(),
    }
}

/// Run one scenario to completion and sample its learning curve.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<(LearningCurve, RunReport)> {
    let (curve, _) = run_scenario_sim(cfg, false)?;
    let report = make_report(&curve, cfg);
    Ok((curve, report))
}

/// Run a scenario, optionally keeping the message trace; exposed for the
/// protocol tests and the trace/replay tooling.
pub fn run_scenario_sim(cfg: &ScenarioConfig, trace: bool) -> Result<(LearningCurve, Simulation)> {
    cfg.validate()?;
    let corral = cfg.corral_rect();
    let map = build_map(cfg.side, cfg.obstacles, corral, cfg.seed)?;
    let world = spawn_world(&map, cfg.cows, cfg.agents, cfg.seed)?;
    let agent_cfg = AgentConfig {
        abstraction: AbstractionParams::new(cfg.d, cfg.a, cfg.side as f64)?,
        learning: cfg.learning_params(),
        cow_params: cfg.cow_params,
        proximity_threshold: cfg.proximity_threshold,
        heuristics_enabled: cfg.heuristics,
        hysteresis_band: cfg.hysteresis_band,
        reward_mode: cfg.reward_mode,
    };
    let sim_cfg = SimConfig {
        agent: agent_cfg,
        transfer_enabled: cfg.transfer,
        fusion_period: cfg.fusion_period,
    };
    let mut sim = Simulation::new(map, world, sim_cfg, cfg.seed, trace);

    let mut samples = vec![(0u64, sim.success()?)];
    for step in 1..=cfg.iterations {
        sim.step()?;
        if step % cfg.sample_every == 0 || step == cfg.iterations {
            samples.push((step, sim.success()?));
        }
    }
    Ok((LearningCurve::new(samples)?, sim))
}

/// Output of a paired with/without-transfer comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct CompareResult {
    pub with_curve: LearningCurve,
    pub without_curve: LearningCurve,
    pub with_report: RunReport,
    pub without_report: RunReport,
    pub rate: TransferOutcome,
}

/// Run the identical scenario twice — transfer on and off — sharing the
/// master seed (and therefore the map, spawn, cow stream, and exploration
/// streams); only the knowledge-sharing gate differs.
pub fn compare(cfg: &ScenarioConfig) -> Result<CompareResult> {
    let mut with_cfg = cfg.clone();
    with_cfg.transfer = true;
    let mut without_cfg = cfg.clone();
    without_cfg.transfer = false;

    let (with_curve, mut with_report) = run_scenario(&with_cfg)?;
    let (without_curve, mut without_report) = run_scenario(&without_cfg)?;
    let rate = transfer_rate(&with_curve, &without_curve)?;
    with_report.transfer_rate = Some(rate);
    without_report.transfer_rate = Some(rate);
    Ok(CompareResult { with_curve, without_curve, with_report, without_report, rate })
}

// ---------------------------------------------------------------------------
// Report and file output
// ---------------------------------------------------------------------------

pub const CODE_VERSION: &str = env!("CARGO_PKG_VERSION");

fn report_lines(prefix: &str, report: &RunReport, out: &mut BTreeMap<String, String>) {
    out.insert(format!("{prefix}final_success"), format!("{}", report.final_success));
    out.insert(
        format!("{prefix}convergence_iteration"),
        format!("{}", report.convergence_iteration),
    );
    out.insert(
        format!("{prefix}jumpstart"),
        report.jumpstart.map_or("absent".into(), |j| format!("{j}")),
    );
    out.insert(
        format!("{prefix}transfer_rate"),
        report.transfer_rate.map_or("absent".into(), |t| format!("{t}")),
    );
    out.insert(format!("{prefix}seed"), format!("{}", report.seed));
}

/// `key=value` report for a single run.
pub fn run_report_text(report: &RunReport) -> String {
    let mut kv = BTreeMap::new();
    kv.insert("code_version".to_string(), CODE_VERSION.to_string());
    kv.insert("config_digest".to_string(), report.config_digest.clone());
    report_lines("", report, &mut kv);
    kv.into_iter().map(|(k, v)| format!("{k}={v}\n")).collect()
}

/// `key=value` report for a paired comparison.
pub fn compare_report_text(result: &CompareResult, cfg: &ScenarioConfig) -> String {
    let mut kv = BTreeMap::new();
    kv.insert("code_version".to_string(), CODE_VERSION.to_string());
    kv.insert("config_digest".to_string(), cfg.digest());
    kv.insert("transfer_rate".to_string(), format!("{}", result.rate));
    report_lines("with_", &result.with_report, &mut kv);
    report_lines("without_", &result.without_report, &mut kv);
    kv.into_iter().map(|(k, v)| format!("{k}={v}\n")).collect()
}

/// Write a file atomically (temp file in the same directory, then rename).
pub fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, contents)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}
