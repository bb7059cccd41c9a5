//! A deterministic 2D grid game with scripted agents, per-frame binary
//! feature extraction, and JSONL rollout recording.
//!
//! One tick = one action. The player starts with 20 points and loses one per
//! tick; a goldcoin grants 5 bonus points, colliding with the enemy grants 9
//! if the powerup was collected beforehand and otherwise ends the game with a
//! score of -20; reaching the goal ends the game.

use std::io::{BufRead, Write};

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, TsceError};

pub const ROLLOUT_FORMAT_VERSION: u32 = 1;

/// Frame variable names in canonical order; `score` is the only non-binary
/// variable and comes last.
pub const FRAME_VARS: [&str; 15] = [
    "targeting_enemy",
    "targeting_goal",
    "targeting_goldcoin",
    "targeting_powerup",
    "collide_enemy",
    "collide_goal",
    "collide_goldcoin",
    "collide_powerup",
    "enemy_exists",
    "powerup_exists",
    "goldcoin_exists",
    "powerup_collected",
    "enemy_killed",
    "terminated",
    "score",
];

pub type Cell = (i32, i32);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GameConfig {
    pub width: i32,
    pub height: i32,
    pub enemy: bool,
    pub powerup: bool,
    pub goldcoin: bool,
}

impl Default for GameConfig {
    fn default() -> Self {
        GameConfig {
            width: 10,
            height: 10,
            enemy: true,
            powerup: true,
            goldcoin: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GameState {
    pub width: i32,
    pub height: i32,
    pub player: Cell,
    pub goldcoin: Option<Cell>,
    pub powerup: Option<Cell>,
    pub enemy: Option<Cell>,
    pub goal: Cell,
    pub score: f64,
    pub powerup_collected: bool,
    pub enemy_killed: bool,
    pub terminated: bool,
    pub tick: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Action {
    Up,
    Down,
    Left,
    Right,
    Stay,
}

impl Action {
    pub const ALL: [Action; 5] = [
        Action::Up,
        Action::Down,
        Action::Left,
        Action::Right,
        Action::Stay,
    ];

    pub fn delta(self) -> Cell {
        match self {
            Action::Up => (0, -1),
            Action::Down => (0, 1),
            Action::Left => (-1, 0),
            Action::Right => (1, 0),
            Action::Stay => (0, 0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Behaviour {
    Killer,
    Coincollector,
    Optimal,
}

impl std::str::FromStr for Behaviour {
    type Err = TsceError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "killer" => Ok(Behaviour::Killer),
            "coincollector" => Ok(Behaviour::Coincollector),
            "optimal" => Ok(Behaviour::Optimal),
            other => Err(TsceError::InvalidArgument(format!(
                "unknown agent behaviour {other:?}"
            ))),
        }
    }
}

/// One recorded tick. `score` is the score at the *start* of the tick, i.e.
/// before this frame's collision effects are applied — so every score effect
/// (the -1 per tick, +5 coins, +9 kills) appears with lag 1 in the stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub tick: usize,
    pub targeting_enemy: u8,
    pub targeting_goal: u8,
    pub targeting_goldcoin: u8,
    pub targeting_powerup: u8,
    pub collide_enemy: u8,
    pub collide_goal: u8,
    pub collide_goldcoin: u8,
    pub collide_powerup: u8,
    pub enemy_exists: u8,
    pub powerup_exists: u8,
    pub goldcoin_exists: u8,
    pub powerup_collected: u8,
    pub enemy_killed: u8,
    pub terminated: u8,
    pub score: f64,
}

impl Frame {
    /// Values in `FRAME_VARS` order.
    pub fn values(&self) -> Vec<f64> {
        vec![
            self.targeting_enemy as f64,
            self.targeting_goal as f64,
            self.targeting_goldcoin as f64,
            self.targeting_powerup as f64,
            self.collide_enemy as f64,
            self.collide_goal as f64,
            self.collide_goldcoin as f64,
            self.collide_powerup as f64,
            self.enemy_exists as f64,
            self.powerup_exists as f64,
            self.goldcoin_exists as f64,
            self.powerup_collected as f64,
            self.enemy_killed as f64,
            self.terminated as f64,
            self.score,
        ]
    }

    pub fn get(&self, var: &str) -> Result<f64> {
        FRAME_VARS
            .iter()
            .position(|v| *v == var)
            .map(|i| self.values()[i])
            .ok_or_else(|| TsceError::VariableNotFound(var.to_string()))
    }

    pub fn targeting_count(&self) -> u8 {
        self.targeting_enemy + self.targeting_goal + self.targeting_goldcoin + self.targeting_powerup
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    pub id: usize,
    pub seed: u64,
    pub agent: Behaviour,
    pub epsilon: f64,
    pub config: GameConfig,
    pub frames: Vec<Frame>,
    pub final_score: f64,
}

// ---------------------------------------------------------------------------
// Game mechanics
// ---------------------------------------------------------------------------

pub fn init_game(seed: u64, config: &GameConfig) -> Result<GameState> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    init_game_with_rng(&mut rng, config)
}

fn init_game_with_rng(rng: &mut ChaCha8Rng, config: &GameConfig) -> Result<GameState> {
    let (w, h) = (config.width, config.height);
    if w < 3 || h < 3 {
        return Err(TsceError::Simulation(format!(
            "grid {w}x{h} is too small (minimum 3x3)"
        )));
    }
    let corners = [(0, 0), (w - 1, 0), (0, h - 1), (w - 1, h - 1)];
    let goal = corners[rng.gen_range(0..4)];
    let mut taken = vec![goal];
    let place = |rng: &mut ChaCha8Rng, taken: &mut Vec<Cell>| -> Cell {
        loop {
            let c = (rng.gen_range(0..w), rng.gen_range(0..h));
            if !taken.contains(&c) {
                taken.push(c);
                return c;
            }
        }
    };
    let player = place(rng, &mut taken);
    let goldcoin = config.goldcoin.then(|| place(rng, &mut taken));
    let powerup = config.powerup.then(|| place(rng, &mut taken));
    let enemy = config.enemy.then(|| place(rng, &mut taken));
    Ok(GameState {
        width: w,
        height: h,
        player,
        goldcoin,
        powerup,
        enemy,
        goal,
        score: 20.0,
        powerup_collected: false,
        enemy_killed: false,
        terminated: false,
        tick: 0,
    })
}

pub fn step(state: &GameState, action: Action) -> Result<GameState> {
    if state.terminated {
        return Err(TsceError::Simulation(
            "cannot step a terminated game".into(),
        ));
    }
    let mut s = state.clone();
    let (dx, dy) = action.delta();
    s.player = (
        (s.player.0 + dx).clamp(0, s.width - 1),
        (s.player.1 + dy).clamp(0, s.height - 1),
    );
    s.score -= 1.0;
    s.tick += 1;
    if s.goldcoin == Some(s.player) {
        s.score += 5.0;
        s.goldcoin = None;
    }
    if s.powerup == Some(s.player) {
        s.powerup_collected = true;
        s.powerup = None;
    }
    if s.enemy == Some(s.player) {
        if s.powerup_collected {
            s.score += 9.0;
            s.enemy = None;
            s.enemy_killed = true;
        } else {
            s.score = -20.0;
            s.terminated = true;
        }
    }
    if s.player == s.goal {
        s.terminated = true;
    }
    Ok(s)
}

/// Cosine-similarity targeting: the existing sprite whose direction from the
/// player's previous position best aligns with the movement vector, provided
/// the best similarity is positive and a strict maximum.
fn targeting_bits(prev: &GameState, movement: Cell) -> [u8; 4] {
    let mut bits = [0u8; 4];
    if movement == (0, 0) {
        return bits;
    }
    let sprites: [(usize, Option<Cell>); 4] = [
        (0, prev.enemy),
        (1, Some(prev.goal)),
        (2, prev.goldcoin),
        (3, prev.powerup),
    ];
    let (mx, my) = (movement.0 as f64, movement.1 as f64);
    let m_norm = (mx * mx + my * my).sqrt();
    let mut best: Option<(usize, f64)> = None;
    let mut tied = false;
    for (idx, pos) in sprites.into_iter() {
        let Some((sx, sy)) = pos else { continue };
        let (vx, vy) = ((sx - prev.player.0) as f64, (sy - prev.player.1) as f64);
        let v_norm = (vx * vx + vy * vy).sqrt();
        if v_norm == 0.0 {
            continue;
        }
        let cos = (mx * vx + my * vy) / (m_norm * v_norm);
        match best {
            Some((_, b)) if (cos - b).abs() <= 1e-12 => tied = true,
            Some((_, b)) if cos > b => {
                best = Some((idx, cos));
                tied = false;
            }
            None => best = Some((idx, cos)),
            _ => {}
        }
    }
    if let Some((idx, cos)) = best {
        if cos > 0.0 && !tied {
            bits[idx] = 1;
        }
    }
    bits
}

/// Builds the frame for the transition `prev --action--> state`. Collision
/// bits record what the step ran into; existence bits and the score are
/// pre-step (so pickups and kills propagate to existence and score with lag
/// 1, see `Frame`); the status flags (collected/killed/terminated) are
/// post-step.
pub fn extract_frame(prev: &GameState, action: Action, state: &GameState) -> Frame {
    let movement = (state.player.0 - prev.player.0, state.player.1 - prev.player.1);
    let _ = action; // targeting uses the realized movement, not the intent
    let t = targeting_bits(prev, movement);
    let entered = |pos: Option<Cell>| u8::from(pos == Some(state.player));
    Frame {
        tick: state.tick,
        targeting_enemy: t[0],
        targeting_goal: t[1],
        targeting_goldcoin: t[2],
        targeting_powerup: t[3],
        collide_enemy: entered(prev.enemy),
        collide_goal: u8::from(state.player == prev.goal && movement != (0, 0)),
        collide_goldcoin: entered(prev.goldcoin),
        collide_powerup: entered(prev.powerup),
        enemy_exists: u8::from(prev.enemy.is_some()),
        powerup_exists: u8::from(prev.powerup.is_some()),
        goldcoin_exists: u8::from(prev.goldcoin.is_some()),
        powerup_collected: u8::from(state.powerup_collected),
        enemy_killed: u8::from(state.enemy_killed),
        terminated: u8::from(state.terminated),
        score: prev.score,
    }
}

fn initial_frame(state: &GameState) -> Frame {
    Frame {
        tick: 0,
        targeting_enemy: 0,
        targeting_goal: 0,
        targeting_goldcoin: 0,
        targeting_powerup: 0,
        collide_enemy: 0,
        collide_goal: 0,
        collide_goldcoin: 0,
        collide_powerup: 0,
        enemy_exists: u8::from(state.enemy.is_some()),
        powerup_exists: u8::from(state.powerup.is_some()),
        goldcoin_exists: u8::from(state.goldcoin.is_some()),
        powerup_collected: 0,
        enemy_killed: 0,
        terminated: 0,
        score: state.score,
    }
}

// ---------------------------------------------------------------------------
// Agents
// ---------------------------------------------------------------------------

/// Moves along the axis of largest absolute displacement toward `to`, ties
/// broken horizontal-first.
fn greedy_action(from: Cell, to: Cell) -> Action {
    let (dx, dy) = (to.0 - from.0, to.1 - from.1);
    if dx == 0 && dy == 0 {
        Action::Stay
    } else if dx.abs() >= dy.abs() && dx != 0 {
        if dx > 0 {
            Action::Right
        } else {
            Action::Left
        }
    } else if dy > 0 {
        Action::Down
    } else {
        Action::Up
    }
}

fn manhattan(a: Cell, b: Cell) -> i32 {
    (a.0 - b.0).abs() + (a.1 - b.1).abs()
}

fn objective(behaviour: Behaviour, s: &GameState) -> Cell {
    match behaviour {
        Behaviour::Killer => {
            if let Some(p) = s.powerup {
                p
            } else if s.powerup_collected {
                s.enemy.unwrap_or(s.goal)
            } else {
                s.goal
            }
        }
        Behaviour::Coincollector => s.goldcoin.unwrap_or(s.goal),
        Behaviour::Optimal => {
            // value-greedy: net gain of each remaining pickup over walking
            // straight to the goal, counting the ticks spent on the detour
            let mut best: Option<(i32, Cell)> = None;
            let mut consider = |value: i32, pos: Option<Cell>| {
                if let Some(p) = pos {
                    let gain = value - manhattan(s.player, p);
                    if gain > 0 && best.map_or(true, |(g, _)| gain > g) {
                        best = Some((gain, p));
                    }
                }
            };
            consider(5, s.goldcoin);
            if s.enemy.is_some() {
                if s.powerup_collected {
                    consider(9, s.enemy);
                } else {
                    consider(9, s.powerup);
                }
            }
            best.map(|(_, p)| p).unwrap_or(s.goal)
        }
    }
}

/// True if taking `action` would hit the enemy without a powerup.
fn is_fatal(s: &GameState, action: Action) -> bool {
    if s.powerup_collected || s.enemy.is_none() {
        return false;
    }
    let (dx, dy) = action.delta();
    let next = (
        (s.player.0 + dx).clamp(0, s.width - 1),
        (s.player.1 + dy).clamp(0, s.height - 1),
    );
    s.enemy == Some(next)
}

fn policy_action(behaviour: Behaviour, s: &GameState) -> Action {
    let target = objective(behaviour, s);
    let preferred = greedy_action(s.player, target);
    if !is_fatal(s, preferred) {
        return preferred;
    }
    // sidestep the enemy; any non-fatal move keeps the greedy policy live
    for a in Action::ALL {
        if a != preferred && !is_fatal(s, a) {
            return a;
        }
    }
    Action::Stay
}

/// Runs one episode. Each step the scripted action is replaced by a uniform
/// random one with probability `epsilon`. Episodes are capped at
/// `width * height * 10` ticks; a capped episode is force-terminated.
pub fn run_agent(
    behaviour: Behaviour,
    id: usize,
    seed: u64,
    epsilon: f64,
    config: &GameConfig,
) -> Result<Rollout> {
    run_agent_traced(behaviour, id, seed, epsilon, config, None)
}

/// Like `run_agent`, but optionally records an ASCII grid per frame.
pub fn run_agent_traced(
    behaviour: Behaviour,
    id: usize,
    seed: u64,
    epsilon: f64,
    config: &GameConfig,
    mut trace: Option<&mut Vec<String>>,
) -> Result<Rollout> {
    if !(0.0..1.0).contains(&epsilon) {
        return Err(TsceError::InvalidArgument(format!(
            "epsilon must be in [0, 1), got {epsilon}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut state = init_game_with_rng(&mut rng, config)?;
    if let Some(t) = trace.as_deref_mut() {
        t.push(render_state(&state));
    }
    let mut frames = vec![initial_frame(&state)];
    let cap = (config.width * config.height * 10) as usize;
    while !state.terminated {
        let action = if epsilon > 0.0 && rng.gen::<f64>() < epsilon {
            Action::ALL[rng.gen_range(0..5)]
        } else {
            policy_action(behaviour, &state)
        };
        let next = step(&state, action)?;
        frames.push(extract_frame(&state, action, &next));
        state = next;
        if let Some(t) = trace.as_deref_mut() {
            t.push(render_state(&state));
        }
        if state.tick >= cap && !state.terminated {
            state.terminated = true;
            frames.last_mut().expect("nonempty").terminated = 1;
        }
    }
    Ok(Rollout {
        id,
        seed,
        agent: behaviour,
        epsilon,
        config: config.clone(),
        final_score: state.score,
        frames,
    })
}

/// Runs `n` episodes with per-rollout seeds derived from `seed`.
pub fn run_rollouts(
    behaviour: Behaviour,
    n: usize,
    seed: u64,
    epsilon: f64,
    config: &GameConfig,
) -> Result<Vec<Rollout>> {
    (0..n)
        .map(|i| run_agent(behaviour, i, seed.wrapping_add(i as u64), epsilon, config))
        .collect()
}

// ---------------------------------------------------------------------------
// JSONL I/O and rendering
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct RolloutHeader {
    version: u32,
    id: usize,
    seed: u64,
    agent: Behaviour,
    epsilon: f64,
    config: GameConfig,
    final_score: f64,
    frame_count: usize,
}

/// One header line per rollout followed by one line per frame.
pub fn write_rollouts<W: Write>(mut w: W, rollouts: &[Rollout]) -> Result<()> {
    for r in rollouts {
        let header = RolloutHeader {
            version: ROLLOUT_FORMAT_VERSION,
            id: r.id,
            seed: r.seed,
            agent: r.agent,
            epsilon: r.epsilon,
            config: r.config.clone(),
            final_score: r.final_score,
            frame_count: r.frames.len(),
        };
        writeln!(w, "{}", serde_json::to_string(&header)?)?;
        for f in &r.frames {
            writeln!(w, "{}", serde_json::to_string(f)?)?;
        }
    }
    Ok(())
}

pub fn read_rollouts<R: BufRead>(r: R) -> Result<Vec<Rollout>> {
    let mut rollouts: Vec<Rollout> = Vec::new();
    let mut expected = 0usize;
    for (lineno, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        if expected == 0 {
            let h: RolloutHeader = serde_json::from_str(&line).map_err(|e| {
                TsceError::Dataset(format!("line {}: expected rollout header: {e}", lineno + 1))
            })?;
            if h.version != ROLLOUT_FORMAT_VERSION {
                return Err(TsceError::Dataset(format!(
                    "unsupported rollout format version {}",
                    h.version
                )));
            }
            if h.frame_count == 0 {
                return Err(TsceError::Dataset(format!("rollout {} has no frames", h.id)));
            }
            expected = h.frame_count;
            rollouts.push(Rollout {
                id: h.id,
                seed: h.seed,
                agent: h.agent,
                epsilon: h.epsilon,
                config: h.config,
                final_score: h.final_score,
                frames: Vec::with_capacity(h.frame_count),
            });
        } else {
            let f: Frame = serde_json::from_str(&line)?;
            rollouts.last_mut().expect("header seen").frames.push(f);
            expected -= 1;
        }
    }
    if expected != 0 {
        return Err(TsceError::Dataset("truncated rollout file".into()));
    }
    Ok(rollouts)
}

/// ASCII grid for one state: P player, E enemy, C goldcoin, U powerup,
/// G goal, . empty.
pub fn render_state(s: &GameState) -> String {
    let mut out = String::new();
    for y in 0..s.height {
        for x in 0..s.width {
            let c = if s.player == (x, y) {
                'P'
            } else if s.enemy == Some((x, y)) {
                'E'
            } else if s.goldcoin == Some((x, y)) {
                'C'
            } else if s.powerup == Some((x, y)) {
                'U'
            } else if s.goal == (x, y) {
                'G'
            } else {
                '.'
            };
            out.push(c);
        }
        out.push('\n');
    }
    out
}

/// Checks the score-accounting identity:
/// final = 20 - ticks + 5 * coins + 9 * powered_kill, or exactly -20 on an
/// unpowered enemy collision.
pub fn check_score_identity(r: &Rollout) -> Result<()> {
    let last = r.frames.last().ok_or_else(|| {
        TsceError::Simulation(format!("rollout {} has no frames", r.id))
    })?;
    let ticks = (r.frames.len() - 1) as f64;
    let coins = r
        .frames
        .iter()
        .map(|f| f.collide_goldcoin as f64)
        .sum::<f64>();
    let killed = last.enemy_killed as f64;
    let died = r
        .frames
        .iter()
        .any(|f| f.collide_enemy == 1 && f.powerup_collected == 0);
    let expected = if died {
        -20.0
    } else {
        20.0 - ticks + 5.0 * coins + 9.0 * killed
    };
    if (r.final_score - expected).abs() > 1e-9 {
        return Err(TsceError::Simulation(format!(
            "rollout {}: final score {} does not match the accounting identity ({expected})",
            r.id, r.final_score
        )));
    }
    Ok(())
}
