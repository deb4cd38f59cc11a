//! Built-in continuous-control tasks.
//!
//! * `StationaryReach2D`: point mass on `[-1, 1]^2` reaching the origin.
//! * `GoalReach2D-K`: same dynamics, goal drawn per episode from `K` fixed
//!   locations on a circle and never observed.
//! * `DriftingMass`: 1-D double integrator pushed towards `x = 1`, with
//!   hidden per-episode mass and friction.
//!
//! Hidden quantities are only reported through [`StepResult::info`] and
//! [`Environment::hidden`], which agents are not given.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt::Write as _;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_MAX_STEPS: usize = 100;
pub const DEFAULT_GOALS: usize = 10;
pub const GOAL_RADIUS: f64 = 0.6;
pub const SUCCESS_RADIUS: f64 = 0.05;
pub const MAX_SPEED: f64 = 0.1;

pub const MASS_RANGE: (f64, f64) = (0.5, 2.0);
pub const FRICTION_RANGE: (f64, f64) = (0.0, 1.0);
pub const MASS_DT: f64 = 0.1;
pub const MASS_TARGET: f64 = 1.0;
pub const MASS_BOUNDS: (f64, f64) = (-2.0, 3.0);

#[derive(Debug, Clone, PartialEq)]
pub struct EnvSpec {
    pub name: String,
    pub obs_dim: usize,
    pub action_dim: usize,
    pub action_low: Vec<f64>,
    pub action_high: Vec<f64>,
    pub max_steps: usize,
    pub stationary: bool,
}

impl EnvSpec {
    /// Maps `a` in `[-1, 1]` onto the action box.
    pub fn rescale(&self, a: &[f64]) -> Vec<f64> {
        a.iter()
            .zip(self.action_low.iter().zip(&self.action_high))
            .map(|(&x, (&lo, &hi))| lo + 0.5 * (x + 1.0) * (hi - lo))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub obs: Vec<f64>,
    pub reward: f64,
    pub done: bool,
    pub info: BTreeMap<String, f64>,
}

/// Gym-style episodic environment.
pub trait Environment {
    fn spec(&self) -> &EnvSpec;

    /// Starts a new episode; hidden parameters are resampled from `rng`.
    fn reset(&mut self, rng: &mut dyn RngCore) -> Vec<f64>;

    fn step(&mut self, action: &[f64]) -> Result<StepResult>;

    /// Hidden task parameters of the current episode.
    fn hidden(&self) -> BTreeMap<String, f64>;

    /// Action of the controller that knows the hidden parameters.
    fn oracle_action(&self) -> Vec<f64>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvConfig {
    /// `StationaryReach2D`, `GoalReach2D-K` or `DriftingMass`.
    pub name: String,
    pub max_steps: usize,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            name: format!("GoalReach2D-{DEFAULT_GOALS}"),
            max_steps: DEFAULT_MAX_STEPS,
        }
    }
}

impl EnvConfig {
    pub fn named(name: &str) -> Self {
        EnvConfig {
            name: name.to_string(),
            ..EnvConfig::default()
        }
    }

    pub fn build(&self) -> Result<EnvInstance> {
        if self.max_steps < 2 {
            return Err(Error::Config("env.max_steps must be at least 2".into()));
        }
        let env = match self.name.as_str() {
            "StationaryReach2D" => EnvInstance::Reach(Reach2D::stationary(self.max_steps)),
            "DriftingMass" => EnvInstance::Mass(DriftingMass::new(self.max_steps)),
            "GoalReach2D" => EnvInstance::Reach(Reach2D::goals(DEFAULT_GOALS, self.max_steps)),
            other => {
                let k = other
                    .strip_prefix("GoalReach2D-")
                    .and_then(|k| k.parse::<usize>().ok())
                    .filter(|&k| k >= 1)
                    .ok_or_else(|| Error::Config(format!("env.name: unknown environment {other:?}")))?;
                EnvInstance::Reach(Reach2D::goals(k, self.max_steps))
            }
        };
        Ok(env)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Phase {
    Fresh,
    Running,
    Done,
}

fn check_step(spec: &EnvSpec, phase: Phase, action: &[f64]) -> Result<Vec<f64>> {
    match phase {
        Phase::Fresh => return Err(Error::contract(format!("{}: step before reset", spec.name))),
        Phase::Done => return Err(Error::contract(format!("{}: step after episode end", spec.name))),
        Phase::Running => {}
    }
    if action.len() != spec.action_dim {
        return Err(Error::dim("env_step", &[spec.action_dim], &[action.len()]));
    }
    if action.iter().any(|a| !a.is_finite()) {
        return Err(Error::NonFinite(format!("{}: action", spec.name)));
    }
    let clipped: Vec<f64> = action
        .iter()
        .zip(spec.action_low.iter().zip(&spec.action_high))
        .map(|(&a, (&lo, &hi))| a.clamp(lo, hi))
        .collect();
    if clipped != action {
        log::warn!("{}: action {:?} clipped to bounds", spec.name, action);
    }
    Ok(clipped)
}

/// Point mass in the unit box steered by velocity commands.
#[derive(Debug, Clone, PartialEq)]
pub struct Reach2D {
    spec: EnvSpec,
    goals: Vec<[f64; 2]>,
    goal: usize,
    pos: [f64; 2],
    t: usize,
    phase: Phase,
}

impl Reach2D {
    pub fn stationary(max_steps: usize) -> Self {
        Self::build("StationaryReach2D".into(), vec![[0.0, 0.0]], true, max_steps)
    }

    /// `k` goals evenly spaced on the circle of radius [`GOAL_RADIUS`].
    pub fn goals(k: usize, max_steps: usize) -> Self {
        let goals = (0..k)
            .map(|i| {
                let th = 2.0 * PI * i as f64 / k as f64;
                [GOAL_RADIUS * th.cos(), GOAL_RADIUS * th.sin()]
            })
            .collect();
        Self::build(format!("GoalReach2D-{k}"), goals, false, max_steps)
    }

    fn build(name: String, goals: Vec<[f64; 2]>, stationary: bool, max_steps: usize) -> Self {
        Reach2D {
            spec: EnvSpec {
                name,
                obs_dim: 2,
                action_dim: 2,
                action_low: vec![-1.0; 2],
                action_high: vec![1.0; 2],
                max_steps,
                stationary,
            },
            goals,
            goal: 0,
            pos: [0.0; 2],
            t: 0,
            phase: Phase::Fresh,
        }
    }

    pub fn goal_list(&self) -> &[[f64; 2]] {
        &self.goals
    }

    pub fn goal(&self) -> [f64; 2] {
        self.goals[self.goal]
    }

    pub fn position(&self) -> [f64; 2] {
        self.pos
    }

    /// Places the agent and goal directly, bypassing the random draw.
    pub fn reset_to(&mut self, pos: [f64; 2], goal: usize) -> Vec<f64> {
        assert!(goal < self.goals.len(), "goal index out of range");
        self.pos = pos.map(|p| p.clamp(-1.0, 1.0));
        self.goal = goal;
        self.t = 0;
        self.phase = Phase::Running;
        self.pos.to_vec()
    }

    pub fn distance(&self) -> f64 {
        let g = self.goal();
        ((self.pos[0] - g[0]).powi(2) + (self.pos[1] - g[1]).powi(2)).sqrt()
    }

    pub fn reward_bound() -> f64 {
        2.0 * 2f64.sqrt()
    }
}

impl Environment for Reach2D {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, rng: &mut dyn RngCore) -> Vec<f64> {
        let goal = if self.goals.len() > 1 {
            rng.random_range(0..self.goals.len())
        } else {
            0
        };
        let pos = [rng.random_range(-1.0..=1.0), rng.random_range(-1.0..=1.0)];
        self.reset_to(pos, goal)
    }

    fn step(&mut self, action: &[f64]) -> Result<StepResult> {
        let a = check_step(&self.spec, self.phase, action)?;
        let mut v = [MAX_SPEED * a[0], MAX_SPEED * a[1]];
        let speed = (v[0] * v[0] + v[1] * v[1]).sqrt();
        if speed > MAX_SPEED {
            v = v.map(|x| x * MAX_SPEED / speed);
        }
        for (p, dv) in self.pos.iter_mut().zip(v) {
            *p = (*p + dv).clamp(-1.0, 1.0);
        }
        self.t += 1;
        let dist = self.distance();
        let success = dist < SUCCESS_RADIUS;
        let done = success || self.t >= self.spec.max_steps;
        if done {
            self.phase = Phase::Done;
        }
        let mut info = self.hidden();
        info.insert("distance".into(), dist);
        info.insert("success".into(), f64::from(u8::from(success)));
        Ok(StepResult {
            obs: self.pos.to_vec(),
            reward: -dist,
            done,
            info,
        })
    }

    fn hidden(&self) -> BTreeMap<String, f64> {
        let g = self.goal();
        BTreeMap::from([
            ("goal_index".to_string(), self.goal as f64),
            ("goal_x".to_string(), g[0]),
            ("goal_y".to_string(), g[1]),
        ])
    }

    fn oracle_action(&self) -> Vec<f64> {
        let g = self.goal();
        let mut a = [(g[0] - self.pos[0]) / MAX_SPEED, (g[1] - self.pos[1]) / MAX_SPEED];
        let n = (a[0] * a[0] + a[1] * a[1]).sqrt();
        if n > 1.0 {
            a = a.map(|x| x / n);
        }
        a.to_vec()
    }
}

/// 1-D double integrator driven to `x = 1` under hidden mass and friction.
#[derive(Debug, Clone, PartialEq)]
pub struct DriftingMass {
    spec: EnvSpec,
    mass: f64,
    friction: f64,
    x: f64,
    v: f64,
    t: usize,
    phase: Phase,
}

impl DriftingMass {
    pub fn new(max_steps: usize) -> Self {
        DriftingMass {
            spec: EnvSpec {
                name: "DriftingMass".into(),
                obs_dim: 2,
                action_dim: 1,
                action_low: vec![-1.0],
                action_high: vec![1.0],
                max_steps,
                stationary: false,
            },
            mass: 1.0,
            friction: 0.0,
            x: 0.0,
            v: 0.0,
            t: 0,
            phase: Phase::Fresh,
        }
    }

    pub fn reset_with(&mut self, mass: f64, friction: f64) -> Vec<f64> {
        self.mass = mass;
        self.friction = friction;
        self.x = 0.0;
        self.v = 0.0;
        self.t = 0;
        self.phase = Phase::Running;
        vec![self.x, self.v]
    }

    pub fn reward_bound() -> f64 {
        (MASS_BOUNDS.1 - MASS_TARGET).max(MASS_TARGET - MASS_BOUNDS.0) + 0.01
    }
}

impl Environment for DriftingMass {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, rng: &mut dyn RngCore) -> Vec<f64> {
        let mass = rng.random_range(MASS_RANGE.0..=MASS_RANGE.1);
        let friction = rng.random_range(FRICTION_RANGE.0..=FRICTION_RANGE.1);
        self.reset_with(mass, friction)
    }

    fn step(&mut self, action: &[f64]) -> Result<StepResult> {
        let a = check_step(&self.spec, self.phase, action)?[0];
        self.v += MASS_DT * (a / self.mass - self.friction * self.v);
        self.x += MASS_DT * self.v;
        if self.x < MASS_BOUNDS.0 || self.x > MASS_BOUNDS.1 {
            self.x = self.x.clamp(MASS_BOUNDS.0, MASS_BOUNDS.1);
            self.v = 0.0;
        }
        self.t += 1;
        let done = self.t >= self.spec.max_steps;
        if done {
            self.phase = Phase::Done;
        }
        let mut info = self.hidden();
        info.insert("distance".into(), (self.x - MASS_TARGET).abs());
        Ok(StepResult {
            obs: vec![self.x, self.v],
            reward: -(self.x - MASS_TARGET).abs() - 0.01 * a * a,
            done,
            info,
        })
    }

    fn hidden(&self) -> BTreeMap<String, f64> {
        BTreeMap::from([
            ("friction".to_string(), self.friction),
            ("mass".to_string(), self.mass),
        ])
    }

    /// Proportional velocity target, met exactly when the force allows.
    fn oracle_action(&self) -> Vec<f64> {
        let v_want = ((MASS_TARGET - self.x) / MASS_DT).clamp(-1.0, 1.0) * 0.5;
        let a = self.mass * ((v_want - self.v) / MASS_DT + self.friction * self.v);
        vec![a.clamp(-1.0, 1.0)]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum EnvInstance {
    Reach(Reach2D),
    Mass(DriftingMass),
}

impl EnvInstance {
    fn inner(&self) -> &dyn Environment {
        match self {
            EnvInstance::Reach(e) => e,
            EnvInstance::Mass(e) => e,
        }
    }

    fn inner_mut(&mut self) -> &mut dyn Environment {
        match self {
            EnvInstance::Reach(e) => e,
            EnvInstance::Mass(e) => e,
        }
    }

    pub fn reward_bound(&self) -> f64 {
        match self {
            EnvInstance::Reach(_) => Reach2D::reward_bound(),
            EnvInstance::Mass(_) => DriftingMass::reward_bound(),
        }
    }
}

impl Environment for EnvInstance {
    fn spec(&self) -> &EnvSpec {
        self.inner().spec()
    }

    fn reset(&mut self, rng: &mut dyn RngCore) -> Vec<f64> {
        self.inner_mut().reset(rng)
    }

    fn step(&mut self, action: &[f64]) -> Result<StepResult> {
        self.inner_mut().step(action)
    }

    fn hidden(&self) -> BTreeMap<String, f64> {
        self.inner().hidden()
    }

    fn oracle_action(&self) -> Vec<f64> {
        self.inner().oracle_action()
    }
}

/// Return of the hidden-information controller on the episode seeded by
/// `seed`.
pub fn optimal_return_oracle(env: &mut dyn Environment, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    env.reset(&mut rng);
    let mut ret = 0.0;
    loop {
        let a = env.oracle_action();
        let r = env.step(&a)?;
        ret += r.reward;
        if r.done {
            return Ok(ret);
        }
    }
}

/// Per-step record of one episode.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EpisodeTrace {
    pub rows: Vec<(Vec<f64>, Vec<f64>, f64, bool)>,
}

impl EpisodeTrace {
    pub fn push(&mut self, obs: &[f64], action: &[f64], reward: f64, done: bool) {
        self.rows.push((obs.to_vec(), action.to_vec(), reward, done));
    }

    pub fn total_reward(&self) -> f64 {
        self.rows.iter().map(|r| r.2).sum()
    }

    /// `step,obs_0..,action_0..,reward,done`
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let (od, ad) = self
            .rows
            .first()
            .map_or((0, 0), |(o, a, _, _)| (o.len(), a.len()));
        out.push_str("step");
        for i in 0..od {
            let _ = write!(out, ",obs_{i}");
        }
        for i in 0..ad {
            let _ = write!(out, ",action_{i}");
        }
        out.push_str(",reward,done\n");
        for (t, (o, a, r, d)) in self.rows.iter().enumerate() {
            let _ = write!(out, "{t}");
            for v in o.iter().chain(a) {
                let _ = write!(out, ",{v}");
            }
            let _ = writeln!(out, ",{r},{}", u8::from(*d));
        }
        out
    }
}
