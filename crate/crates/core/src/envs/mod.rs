//! Object-centric grid environments with dual observations.
//!
//! Every environment exposes a stack of occupancy-grid frames ([`RawState`])
//! for the neural side and an object matrix ([`ObjectState`]) for the logic
//! side, both rendered from the same internal state.

mod kangaroo;
mod seaquest;

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::valuation::{ObjectState, OBJECTNESS, PLAYER_SLOT};

pub use kangaroo::KangarooState;
pub use seaquest::SeaquestState;

pub const MAX_NOISE_RATE: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EnvError {
    #[error("invalid environment spec: {0}")]
    Spec(String),
    #[error("step called on a finished episode; call reset first")]
    StepAfterDone,
    #[error("action {action} outside action set of size {size}")]
    BadAction { action: usize, size: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EnvName {
    #[serde(rename = "mini-kangaroo")]
    MiniKangaroo,
    #[serde(rename = "mini-seaquest")]
    MiniSeaquest,
}

impl EnvName {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::MiniKangaroo => "mini-kangaroo",
            Self::MiniSeaquest => "mini-seaquest",
        }
    }

    pub fn action_names(&self) -> &'static [&'static str] {
        match self {
            Self::MiniKangaroo => &kangaroo::ACTIONS,
            Self::MiniSeaquest => &seaquest::ACTIONS,
        }
    }

    pub fn num_channels(&self) -> usize {
        match self {
            Self::MiniKangaroo => kangaroo::CHANNELS,
            Self::MiniSeaquest => seaquest::CHANNELS,
        }
    }

    pub fn slots(&self) -> Vec<String> {
        match self {
            Self::MiniKangaroo => kangaroo::slots(),
            Self::MiniSeaquest => seaquest::slots(),
        }
    }
}

impl fmt::Display for EnvName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EnvName {
    type Err = EnvError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mini-kangaroo" => Ok(Self::MiniKangaroo),
            "mini-seaquest" => Ok(Self::MiniSeaquest),
            other => Err(EnvError::Spec(format!("unknown environment `{other}`"))),
        }
    }
}

/// Environment modification flags.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Modifications {
    pub no_enemies: bool,
    pub relocated_ladders: bool,
    pub random_position: bool,
    pub disable_falling_coconut: bool,
    /// Per-object probability of dropping an object from the object-centric
    /// observation (evaluation-time ablation).
    pub objectness_noise: f64,
}

impl Modifications {
    /// Parses a comma-separated flag list such as `no_enemies,relocated_ladders`.
    pub fn parse_flags(list: &str) -> Result<Self, EnvError> {
        let mut m = Self::default();
        for flag in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            match flag {
                "no_enemies" => m.no_enemies = true,
                "relocated_ladders" => m.relocated_ladders = true,
                "random_position" => m.random_position = true,
                "disable_falling_coconut" => m.disable_falling_coconut = true,
                other => return Err(EnvError::Spec(format!("unknown modification `{other}`"))),
            }
        }
        Ok(m)
    }

    pub fn flag_names(&self) -> Vec<&'static str> {
        let mut v = Vec::new();
        if self.no_enemies {
            v.push("no_enemies");
        }
        if self.relocated_ladders {
            v.push("relocated_ladders");
        }
        if self.random_position {
            v.push("random_position");
        }
        if self.disable_falling_coconut {
            v.push("disable_falling_coconut");
        }
        v
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvSpec {
    pub name: EnvName,
    pub width: usize,
    pub height: usize,
    pub max_steps: usize,
    pub frame_stack: usize,
    pub mods: Modifications,
    pub seed: u64,
}

impl EnvSpec {
    pub fn new(name: EnvName) -> Self {
        Self {
            name,
            width: 16,
            height: 12,
            max_steps: 512,
            frame_stack: 4,
            mods: Modifications::default(),
            seed: 0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_mods(mut self, mods: Modifications) -> Self {
        self.mods = mods;
        self
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        if self.width != 16 || self.height != 12 {
            return Err(EnvError::Spec(format!(
                "{} supports only the 16x12 layout, got {}x{}",
                self.name, self.width, self.height
            )));
        }
        if self.frame_stack == 0 {
            return Err(EnvError::Spec("frame_stack must be >= 1".into()));
        }
        if self.max_steps == 0 {
            return Err(EnvError::Spec("max_steps must be >= 1".into()));
        }
        let noise = self.mods.objectness_noise;
        if !(0.0..=MAX_NOISE_RATE).contains(&noise) {
            return Err(EnvError::Spec(format!(
                "objectness noise {noise} outside [0, {MAX_NOISE_RATE}]"
            )));
        }
        if self.name == EnvName::MiniSeaquest
            && (self.mods.relocated_ladders || self.mods.disable_falling_coconut)
        {
            return Err(EnvError::Spec(
                "relocated_ladders and disable_falling_coconut apply to mini-kangaroo only".into(),
            ));
        }
        Ok(())
    }

    pub fn raw_len(&self) -> usize {
        self.frame_stack * self.width * self.height * self.name.num_channels()
    }

    pub fn num_actions(&self) -> usize {
        self.name.action_names().len()
    }
}

/// Stack of the last `F` occupancy frames, oldest first. Each frame is laid
/// out `W x H x C` with index `(x * H + y) * C + c`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawState {
    pub frames: usize,
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl RawState {
    pub fn frame_len(&self) -> usize {
        self.width * self.height * self.channels
    }

    pub fn index(&self, frame: usize, x: usize, y: usize, c: usize) -> usize {
        frame * self.frame_len() + (x * self.height + y) * self.channels + c
    }

    pub fn get(&self, frame: usize, x: usize, y: usize, c: usize) -> f64 {
        self.data[self.index(frame, x, y, c)]
    }

    pub fn newest(&self, x: usize, y: usize, c: usize) -> f64 {
        self.get(self.frames - 1, x, y, c)
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            data: vec![0.0; self.data.len()],
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub raw: RawState,
    pub objects: ObjectState,
}

#[derive(Debug, Clone)]
pub struct Transition {
    pub obs: Observation,
    pub reward: f64,
    pub done: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Game {
    Kangaroo(KangarooState),
    Seaquest(SeaquestState),
}

/// Single environment instance with frame stacking and noise.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Env {
    spec: EnvSpec,
    game: Game,
    rng: ChaCha8Rng,
    noise_rng: ChaCha8Rng,
    frames: VecDeque<Vec<f64>>,
    steps: usize,
    done: bool,
    episode_return: f64,
}

/// Drops each non-player object from the observation with probability `rate`.
pub fn apply_objectness_noise<R: Rng>(z: &ObjectState, rate: f64, rng: &mut R) -> Result<ObjectState, EnvError> {
    if !(0.0..=MAX_NOISE_RATE).contains(&rate) {
        return Err(EnvError::Spec(format!("noise rate {rate} outside [0, {MAX_NOISE_RATE}]")));
    }
    let mut out = z.clone();
    if rate == 0.0 {
        return Ok(out);
    }
    for (row, slot) in out.rows.iter_mut().zip(&z.slots) {
        if slot == PLAYER_SLOT {
            continue;
        }
        if rng.gen::<f64>() < rate {
            row[OBJECTNESS] = 0.0;
        }
    }
    Ok(out)
}

impl Env {
    /// Creates the environment and performs the initial reset.
    pub fn new(spec: EnvSpec) -> Result<Self, EnvError> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let noise_rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x6e6f_6973_6500_0000);
        let game = Self::fresh_game(&spec, &mut rng);
        let mut env = Self {
            spec,
            game,
            rng,
            noise_rng,
            frames: VecDeque::new(),
            steps: 0,
            done: false,
            episode_return: 0.0,
        };
        env.fill_frames();
        Ok(env)
    }

    fn fresh_game(spec: &EnvSpec, rng: &mut ChaCha8Rng) -> Game {
        match spec.name {
            EnvName::MiniKangaroo => Game::Kangaroo(KangarooState::new(&spec.mods, rng)),
            EnvName::MiniSeaquest => Game::Seaquest(SeaquestState::new(&spec.mods, rng)),
        }
    }

    fn fill_frames(&mut self) {
        let f = self.render();
        self.frames = std::iter::repeat(f).take(self.spec.frame_stack).collect();
    }

    pub fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    pub fn game(&self) -> &Game {
        &self.game
    }

    /// Direct access to the simulation state, e.g. for scripted scenarios.
    pub fn game_mut(&mut self) -> &mut Game {
        &mut self.game
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn episode_return(&self) -> f64 {
        self.episode_return
    }

    pub fn action_names(&self) -> &'static [&'static str] {
        self.spec.name.action_names()
    }

    /// Starts a new episode; the random stream continues from the previous one.
    pub fn reset(&mut self) -> Observation {
        self.game = Self::fresh_game(&self.spec, &mut self.rng);
        self.steps = 0;
        self.done = false;
        self.episode_return = 0.0;
        self.fill_frames();
        self.observe()
    }

    fn render(&self) -> Vec<f64> {
        let (w, h, c) = (self.spec.width, self.spec.height, self.spec.name.num_channels());
        let mut frame = vec![0.0; w * h * c];
        let cells = match &self.game {
            Game::Kangaroo(g) => g.cells(),
            Game::Seaquest(g) => g.cells(),
        };
        for (x, y, ch) in cells {
            if x >= 0 && (x as usize) < w && y >= 0 && (y as usize) < h {
                frame[((x as usize) * h + y as usize) * c + ch] = 1.0;
            }
        }
        frame
    }

    /// Noise-free object matrix of the current state.
    pub fn objects(&self) -> ObjectState {
        match &self.game {
            Game::Kangaroo(g) => g.objects(),
            Game::Seaquest(g) => g.objects(),
        }
    }

    fn raw(&self) -> RawState {
        RawState {
            frames: self.spec.frame_stack,
            width: self.spec.width,
            height: self.spec.height,
            channels: self.spec.name.num_channels(),
            data: self.frames.iter().flat_map(|f| f.iter().copied()).collect(),
        }
    }

    /// Current observation; applies objectness noise when configured.
    pub fn observe(&mut self) -> Observation {
        let clean = self.objects();
        let objects = apply_objectness_noise(&clean, self.spec.mods.objectness_noise, &mut self.noise_rng)
            .expect("noise rate validated with the spec");
        Observation {
            raw: self.raw(),
            objects,
        }
    }

    pub fn step(&mut self, action: usize) -> Result<Transition, EnvError> {
        if self.done {
            return Err(EnvError::StepAfterDone);
        }
        let size = self.spec.num_actions();
        if action >= size {
            return Err(EnvError::BadAction { action, size });
        }
        let (reward, terminal) = match &mut self.game {
            Game::Kangaroo(g) => g.step(action, &self.spec.mods, &mut self.rng),
            Game::Seaquest(g) => g.step(action, &self.spec.mods, &mut self.rng),
        };
        self.steps += 1;
        self.done = terminal || self.steps >= self.spec.max_steps;
        self.episode_return += reward;
        let f = self.render();
        self.frames.pop_front();
        self.frames.push_back(f);
        Ok(Transition {
            obs: self.observe(),
            reward,
            done: self.done,
        })
    }
}

/// `N` environments stepped in lockstep with automatic reset.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VecEnv {
    pub envs: Vec<Env>,
}

/// Result of stepping one member of a [`VecEnv`]. When `done` is set the
/// observation is already the first one of the next episode and
/// `episode_return` holds the finished episode's total.
#[derive(Debug, Clone)]
pub struct VecStep {
    pub obs: Observation,
    pub reward: f64,
    pub done: bool,
    pub episode_return: Option<f64>,
    pub episode_length: Option<usize>,
}

impl VecEnv {
    /// Environment `i` is seeded with `spec.seed + i`.
    pub fn new(spec: &EnvSpec, n: usize) -> Result<Self, EnvError> {
        let envs = (0..n)
            .map(|i| Env::new(spec.clone().with_seed(spec.seed.wrapping_add(i as u64))))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self { envs })
    }

    pub fn len(&self) -> usize {
        self.envs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.envs.is_empty()
    }

    pub fn observe(&mut self) -> Vec<Observation> {
        self.envs.iter_mut().map(Env::observe).collect()
    }

    /// Steps every environment; results are ordered by environment index.
    pub fn step(&mut self, actions: &[usize]) -> Result<Vec<VecStep>, EnvError> {
        assert_eq!(actions.len(), self.envs.len());
        let mut out = Vec::with_capacity(self.envs.len());
        for (env, &a) in self.envs.iter_mut().zip(actions) {
            let t = env.step(a)?;
            if t.done {
                let ret = env.episode_return();
                let len = env.steps();
                let obs = env.reset();
                out.push(VecStep {
                    obs,
                    reward: t.reward,
                    done: true,
                    episode_return: Some(ret),
                    episode_length: Some(len),
                });
            } else {
                out.push(VecStep {
                    obs: t.obs,
                    reward: t.reward,
                    done: false,
                    episode_return: None,
                    episode_length: None,
                });
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::valuation::POS_X;

    #[test]
    fn noise_identity_and_bounds() {
        let env = Env::new(EnvSpec::new(EnvName::MiniKangaroo)).unwrap();
        let z = env.objects();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(apply_objectness_noise(&z, 0.0, &mut rng).unwrap(), z);
        assert!(apply_objectness_noise(&z, 1.0, &mut rng).is_err());
    }

    #[test]
    fn noise_rate_monte_carlo() {
        let mut z = ObjectState::new(vec!["player".into(), "a".into()]);
        z.rows[0][OBJECTNESS] = 1.0;
        z.rows[1][OBJECTNESS] = 1.0;
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let n = 10_000;
        let mut dropped = 0;
        for _ in 0..n {
            let out = apply_objectness_noise(&z, 0.1, &mut rng).unwrap();
            assert_eq!(out.rows[0][OBJECTNESS], 1.0);
            if out.rows[1][OBJECTNESS] == 0.0 {
                dropped += 1;
            }
        }
        let frac = dropped as f64 / n as f64;
        assert!((frac - 0.1).abs() < 0.01, "{frac}");
    }

    #[test]
    fn invalid_flag_combination() {
        let mods = Modifications::parse_flags("relocated_ladders").unwrap();
        assert!(Env::new(EnvSpec::new(EnvName::MiniSeaquest).with_mods(mods)).is_err());
        assert!(Modifications::parse_flags("no_gravity").is_err());
    }

    #[test]
    fn step_after_done_is_usage_error() {
        let mut spec = EnvSpec::new(EnvName::MiniSeaquest);
        spec.max_steps = 1;
        let mut env = Env::new(spec).unwrap();
        assert!(env.step(0).unwrap().done);
        assert_eq!(env.step(0).unwrap_err(), EnvError::StepAfterDone);
        assert!(matches!(env.step(0), Err(EnvError::StepAfterDone)));
        env.reset();
        assert!(matches!(env.step(17), Err(EnvError::BadAction { .. })));
    }

    fn check_consistency(env: &mut Env) {
        let obs = env.observe();
        let z = &obs.objects;
        for r in 0..z.num_objects() {
            if z.rows[r][OBJECTNESS] == 1.0 {
                let x = z.rows[r][POS_X].round() as usize;
                let y = env.game_cell_y(r);
                let c = env.channel_of_slot(&z.slots[r]);
                if let (Some(c), Some(y)) = (c, y) {
                    assert_eq!(obs.raw.newest(x, y, c), 1.0, "slot {} at ({x},{y})", z.slots[r]);
                }
            }
        }
    }

    impl Env {
        fn game_cell_y(&self, row: usize) -> Option<usize> {
            match &self.game {
                Game::Kangaroo(g) => g.cell_y(row),
                Game::Seaquest(g) => g.cell_y(row),
            }
        }

        fn channel_of_slot(&self, slot: &str) -> Option<usize> {
            match &self.game {
                Game::Kangaroo(_) => kangaroo::channel_of_slot(slot),
                Game::Seaquest(_) => seaquest::channel_of_slot(slot),
            }
        }
    }

    #[test]
    fn dual_observation_consistency_and_determinism() {
        for name in [EnvName::MiniKangaroo, EnvName::MiniSeaquest] {
            let mut a = Env::new(EnvSpec::new(name).with_seed(5)).unwrap();
            let mut b = Env::new(EnvSpec::new(name).with_seed(5)).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(9);
            for _ in 0..2000 {
                let act = rng.gen_range(0..a.spec().num_actions());
                check_consistency(&mut a);
                let ta = a.step(act).unwrap();
                let tb = b.step(act).unwrap();
                assert_eq!(ta.reward, tb.reward);
                assert_eq!(ta.obs.objects, tb.obs.objects);
                assert_eq!(ta.obs.raw, tb.obs.raw);
                assert!((-10.0..=100.0).contains(&ta.reward), "{}", ta.reward);
                assert!(a.steps() <= a.spec().max_steps);
                if ta.done {
                    a.reset();
                    b.reset();
                }
            }
        }
    }

    #[test]
    fn no_enemies_never_terminates_by_contact() {
        for name in [EnvName::MiniKangaroo, EnvName::MiniSeaquest] {
            let mods = Modifications {
                no_enemies: true,
                disable_falling_coconut: name == EnvName::MiniKangaroo,
                ..Default::default()
            };
            let mut env = Env::new(EnvSpec::new(name).with_mods(mods).with_seed(3)).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(1);
            for _ in 0..5000 {
                let t = env.step(rng.gen_range(0..6)).unwrap();
                if t.done {
                    let contact = match env.game() {
                        Game::Kangaroo(g) => g.killed_by_enemy,
                        Game::Seaquest(g) => g.killed_by_enemy,
                    };
                    assert!(!contact);
                    env.reset();
                }
            }
        }
    }

    #[test]
    fn vec_env_orders_by_index_and_resets() {
        let spec = EnvSpec::new(EnvName::MiniSeaquest);
        let mut v = VecEnv::new(&spec, 3).unwrap();
        let mut single = Env::new(spec.clone().with_seed(1)).unwrap();
        for _ in 0..50 {
            let out = v.step(&[3, 3, 3]).unwrap();
            let t = single.step(3).unwrap();
            assert_eq!(out[1].reward, t.reward);
            if t.done {
                single.reset();
            }
        }
    }
}
