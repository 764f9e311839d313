//! MiniSeaquest: dive, collect divers, surface before oxygen runs out and
//! shoot or dodge sharks.
//!
//! Row 0 is the surface. Divers and sharks cross the water rows
//! horizontally and respawn after a random delay.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Modifications;
use crate::valuation::ObjectState;

pub const ACTIONS: [&str; 6] = ["noop", "left", "right", "up", "down", "fire"];
pub const CHANNELS: usize = 5;

const WIDTH: i32 = 16;
const HEIGHT: i32 = 12;
pub const MAX_OXYGEN: i32 = 100;
pub const DIVER_CAPACITY: i32 = 4;
const START: (i32, i32) = (8, 0);
const N_DIVERS: usize = 3;
const N_SHARKS: usize = 3;
const DIVER_PERIOD: usize = 2;
const SHARK_PERIOD: usize = 2;
const MIN_LANE: i32 = 2;
const RESPAWN: std::ops::Range<u32> = 8..32;

const REWARD_DIVER: f64 = 5.0;
const REWARD_SURFACE_PER_DIVER: f64 = 20.0;
const REWARD_EMPTY_SURFACE: f64 = -5.0;
const REWARD_SHOT: f64 = 2.0;
const REWARD_DEATH: f64 = -10.0;

const LEFT: usize = 1;
const RIGHT: usize = 2;
const UP: usize = 3;
const DOWN: usize = 4;
const FIRE: usize = 5;

pub(crate) fn slots() -> Vec<String> {
    let mut v = vec!["player".to_string(), "collected".to_string()];
    v.extend((1..=N_DIVERS).map(|i| format!("diver{i}")));
    v.extend((1..=N_SHARKS).map(|i| format!("shark{i}")));
    v
}

#[cfg(test)]
pub(crate) fn channel_of_slot(slot: &str) -> Option<usize> {
    match slot {
        "player" => Some(0),
        s if s.starts_with("diver") => Some(1),
        s if s.starts_with("shark") => Some(2),
        _ => None,
    }
}

/// A horizontally moving swimmer; `cooldown` counts down to respawn while
/// the swimmer is inactive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Swimmer {
    pub x: i32,
    pub y: i32,
    pub dir: i32,
    pub active: bool,
    pub cooldown: u32,
}

impl Swimmer {
    fn inactive(rng: &mut ChaCha8Rng) -> Self {
        Self {
            x: 0,
            y: 0,
            dir: 1,
            active: false,
            cooldown: rng.gen_range(RESPAWN),
        }
    }

    fn spawn(&mut self, rng: &mut ChaCha8Rng) {
        self.dir = if rng.gen_bool(0.5) { 1 } else { -1 };
        self.x = if self.dir > 0 { 0 } else { WIDTH - 1 };
        self.y = rng.gen_range(MIN_LANE..HEIGHT);
        self.active = true;
    }

    fn advance(&mut self, moves: bool, rng: &mut ChaCha8Rng) {
        if !self.active {
            if self.cooldown == 0 {
                self.spawn(rng);
            } else {
                self.cooldown -= 1;
            }
            return;
        }
        if moves {
            self.x += self.dir;
            if !(0..WIDTH).contains(&self.x) {
                *self = Self::inactive(rng);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeaquestState {
    pub player: (i32, i32),
    pub orientation: i32,
    pub oxygen: i32,
    pub carried: i32,
    pub divers: Vec<Swimmer>,
    pub sharks: Vec<Swimmer>,
    pub t: usize,
    pub no_enemies: bool,
    pub killed_by_enemy: bool,
}

impl SeaquestState {
    pub fn new(mods: &Modifications, rng: &mut ChaCha8Rng) -> Self {
        let divers = (0..N_DIVERS).map(|_| Swimmer::inactive(rng)).collect();
        let sharks = (0..N_SHARKS).map(|_| Swimmer::inactive(rng)).collect();
        Self {
            player: START,
            orientation: 1,
            oxygen: MAX_OXYGEN,
            carried: 0,
            divers,
            sharks,
            t: 0,
            no_enemies: mods.no_enemies,
            killed_by_enemy: false,
        }
    }

    fn shark_hit(&self) -> bool {
        self.sharks.iter().any(|s| s.active && (s.x, s.y) == self.player)
    }

    fn collect(&mut self) -> f64 {
        let mut reward = 0.0;
        for d in self.divers.iter_mut() {
            if d.active && (d.x, d.y) == self.player && self.carried < DIVER_CAPACITY {
                d.active = false;
                d.cooldown = RESPAWN.start;
                self.carried += 1;
                reward += REWARD_DIVER;
            }
        }
        reward
    }

    pub(crate) fn step(&mut self, action: usize, _mods: &Modifications, rng: &mut ChaCha8Rng) -> (f64, bool) {
        self.t += 1;
        let mut reward = 0.0;
        let (x, y) = self.player;
        match action {
            LEFT | RIGHT => {
                let d = if action == LEFT { -1 } else { 1 };
                self.orientation = d;
                self.player.0 = (x + d).clamp(0, WIDTH - 1);
            }
            UP => self.player.1 = (y - 1).max(0),
            DOWN => self.player.1 = (y + 1).min(HEIGHT - 1),
            FIRE => {
                let target = self
                    .sharks
                    .iter_mut()
                    .filter(|s| s.active && s.y == y)
                    .min_by_key(|s| (s.x - x).abs());
                if let Some(s) = target {
                    *s = Swimmer::inactive(rng);
                    reward += REWARD_SHOT;
                }
            }
            _ => {}
        }
        if y > 0 && self.player.1 == 0 {
            if self.carried > 0 {
                reward += REWARD_SURFACE_PER_DIVER * self.carried as f64;
                self.carried = 0;
            } else {
                reward += REWARD_EMPTY_SURFACE;
            }
        }
        if self.player.1 == 0 {
            self.oxygen = MAX_OXYGEN;
        } else {
            self.oxygen -= 1;
            if self.oxygen <= 0 {
                self.oxygen = 0;
                return (reward + REWARD_DEATH, true);
            }
        }
        if self.shark_hit() {
            self.killed_by_enemy = true;
            return (reward + REWARD_DEATH, true);
        }
        reward += self.collect();

        let move_divers = self.t % DIVER_PERIOD == 0;
        for d in self.divers.iter_mut() {
            d.advance(move_divers, rng);
        }
        if !self.no_enemies {
            let move_sharks = self.t % SHARK_PERIOD == 1;
            for s in self.sharks.iter_mut() {
                s.advance(move_sharks, rng);
            }
        }
        reward += self.collect();
        if self.shark_hit() {
            self.killed_by_enemy = true;
            return (reward + REWARD_DEATH, true);
        }
        (reward, false)
    }

    pub(crate) fn cells(&self) -> Vec<(i32, i32, usize)> {
        let mut out = vec![(self.player.0, self.player.1, 0)];
        out.extend(self.divers.iter().filter(|d| d.active).map(|d| (d.x, d.y, 1)));
        out.extend(self.sharks.iter().filter(|s| s.active).map(|s| (s.x, s.y, 2)));
        // HUD rows: oxygen gauge on row 0, carried divers on row 1.
        let gauge = (self.oxygen * WIDTH + MAX_OXYGEN - 1) / MAX_OXYGEN;
        out.extend((0..gauge).map(|x| (x, 0, 3)));
        out.extend((0..self.carried).map(|x| (x, 1, 4)));
        out
    }

    #[cfg(test)]
    pub(crate) fn cell_y(&self, row: usize) -> Option<usize> {
        let y = match row {
            0 => self.player.1,
            2..=4 => self.divers[row - 2].y,
            5..=7 => self.sharks[row - 5].y,
            _ => return None,
        };
        Some(y as usize)
    }

    pub(crate) fn objects(&self) -> ObjectState {
        let mut z = ObjectState::new(slots());
        z.rows[0] = [
            1.0,
            self.player.0 as f64,
            self.player.1 as f64,
            self.orientation as f64,
            self.oxygen as f64,
        ];
        z.rows[1] = [1.0, 0.0, 0.0, 0.0, self.carried as f64];
        for (i, d) in self.divers.iter().enumerate().filter(|(_, d)| d.active) {
            z.rows[2 + i] = [1.0, d.x as f64, d.y as f64, d.dir as f64, 0.0];
        }
        for (i, s) in self.sharks.iter().enumerate().filter(|(_, s)| s.active) {
            z.rows[2 + N_DIVERS + i] = [1.0, s.x as f64, s.y as f64, s.dir as f64, 0.0];
        }
        z
    }
}
