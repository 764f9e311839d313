//! MiniKangaroo: climb three floors of ladders to reach the joey while
//! punching or dodging monkeys and falling coconuts.
//!
//! Row 0 is the top of the grid. Floors sit on rows 11, 7 and 3; ladder `k`
//! leads from floor `k` to the floor above, the last one to the goal cell
//! directly under the joey.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Modifications;
use crate::valuation::ObjectState;

pub const ACTIONS: [&str; 6] = ["noop", "left", "right", "up", "down", "punch"];
pub const CHANNELS: usize = 5;

const WIDTH: i32 = 16;
pub const FLOORS: [i32; 3] = [11, 7, 3];
pub const LADDER_COLUMNS: [i32; 3] = [13, 2, 12];
const GOAL_ROW: i32 = 1;
const JOEY_ROW: i32 = 0;
const START: (i32, i32) = (1, 11);
const MONKEY_STARTS: [(i32, i32); 2] = [(15, 11), (0, 7)];
const MONKEY_PERIOD: usize = 12;
const COCONUT_PERIOD: usize = 40;
const COCONUT_OFFSET: usize = 30;
const COCONUT_COLUMNS: [i32; 4] = [11, 9, 12, 10];
/// Coconuts shatter after passing this row, so only the upper floors are hit.
const COCONUT_LAST_ROW: i32 = 7;

const REWARD_GOAL: f64 = 100.0;
const REWARD_PUNCH: f64 = 5.0;
const REWARD_DEATH: f64 = -10.0;

const NOOP: usize = 0;
const LEFT: usize = 1;
const RIGHT: usize = 2;
const UP: usize = 3;
const DOWN: usize = 4;
const PUNCH: usize = 5;

pub(crate) fn slots() -> Vec<String> {
    [
        "player", "joey", "ladder1", "ladder2", "ladder3", "monkey1", "monkey2", "coconut1", "coconut2",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect()
}

#[cfg(test)]
pub(crate) fn channel_of_slot(slot: &str) -> Option<usize> {
    match slot {
        "player" => Some(0),
        "joey" => Some(1),
        s if s.starts_with("ladder") => Some(2),
        s if s.starts_with("monkey") => Some(3),
        s if s.starts_with("coconut") => Some(4),
        _ => None,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Monkey {
    pub x: i32,
    pub y: i32,
    pub alive: bool,
    pub dir: i32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KangarooState {
    pub player: (i32, i32),
    pub orientation: i32,
    pub ladders: [i32; 3],
    pub monkeys: Vec<Monkey>,
    pub coconuts: Vec<Option<(i32, i32)>>,
    pub t: usize,
    pub killed_by_enemy: bool,
    pub reached_goal: bool,
}

/// Topmost row reachable on ladder `k`.
fn ladder_top(k: usize) -> i32 {
    if k + 1 < FLOORS.len() {
        FLOORS[k + 1]
    } else {
        GOAL_ROW
    }
}

/// Index of the floor whose section (floor row and the rows above it up to
/// the next floor) contains row `y`.
fn floor_of(y: i32) -> usize {
    FLOORS.iter().position(|&f| y <= f && y > f - 4).unwrap_or(FLOORS.len() - 1)
}

impl KangarooState {
    pub fn new(mods: &Modifications, rng: &mut ChaCha8Rng) -> Self {
        let ladders = if mods.relocated_ladders {
            LADDER_COLUMNS.map(|c| WIDTH - 1 - c)
        } else {
            LADDER_COLUMNS
        };
        let player = if mods.random_position {
            loop {
                let floor = FLOORS[rng.gen_range(0..2)];
                let x = rng.gen_range(0..WIDTH);
                let near_monkey = MONKEY_STARTS.iter().any(|&(mx, my)| my == floor && (mx - x).abs() <= 2);
                if !near_monkey {
                    break (x, floor);
                }
            }
        } else {
            START
        };
        let monkeys = MONKEY_STARTS
            .iter()
            .map(|&(x, y)| Monkey {
                x,
                y,
                alive: !mods.no_enemies,
                dir: if x == 0 { 1 } else { -1 },
            })
            .collect();
        Self {
            player,
            orientation: 1,
            ladders,
            monkeys,
            coconuts: vec![None; 2],
            t: 0,
            killed_by_enemy: false,
            reached_goal: false,
        }
    }

    pub fn goal_cell(&self) -> (i32, i32) {
        (self.ladders[2], GOAL_ROW)
    }

    fn on_ladder_span(&self, x: i32, y: i32, going_up: bool) -> bool {
        (0..3).any(|k| {
            let (top, bottom) = (ladder_top(k), FLOORS[k]);
            self.ladders[k] == x && if going_up { y > top && y <= bottom } else { y >= top && y < bottom }
        })
    }

    fn hit(&self) -> bool {
        let p = self.player;
        self.monkeys.iter().any(|m| m.alive && (m.x, m.y) == p) || self.coconuts.iter().flatten().any(|&c| c == p)
    }

    /// Applies one action; returns `(reward, terminal)`.
    pub(crate) fn step(&mut self, action: usize, mods: &Modifications, _rng: &mut ChaCha8Rng) -> (f64, bool) {
        self.t += 1;
        let mut reward = 0.0;
        let (x, y) = self.player;
        match action {
            NOOP => {}
            LEFT | RIGHT => {
                let d = if action == LEFT { -1 } else { 1 };
                self.orientation = d;
                let nx = (x + d).clamp(0, WIDTH - 1);
                // monkeys block the way; contact happens when they step in
                let blocked = self.monkeys.iter().any(|m| m.alive && (m.x, m.y) == (nx, y));
                if FLOORS.contains(&y) && !blocked {
                    self.player.0 = nx;
                }
            }
            UP => {
                if self.on_ladder_span(x, y, true) {
                    self.player.1 = y - 1;
                }
            }
            DOWN => {
                if self.on_ladder_span(x, y, false) {
                    self.player.1 = y + 1;
                }
            }
            PUNCH => {
                let target = self
                    .monkeys
                    .iter_mut()
                    .filter(|m| m.alive && m.y == y && (m.x - x).abs() <= 1)
                    .min_by_key(|m| (m.x - x).abs());
                if let Some(m) = target {
                    m.alive = false;
                    reward += REWARD_PUNCH;
                }
            }
            _ => unreachable!("action validated by caller"),
        }
        if self.player == self.goal_cell() {
            self.reached_goal = true;
            return (reward + REWARD_GOAL, true);
        }
        if self.hit() {
            self.killed_by_enemy = true;
            return (reward + REWARD_DEATH, true);
        }

        let player_floor = floor_of(self.player.1);
        if self.t % MONKEY_PERIOD == 0 {
            for m in self.monkeys.iter_mut().filter(|m| m.alive) {
                if floor_of(m.y) == player_floor && m.x != self.player.0 {
                    m.dir = (self.player.0 - m.x).signum();
                    m.x += m.dir;
                }
            }
        }
        for c in self.coconuts.iter_mut() {
            if let Some((_, cy)) = c {
                *cy += 1;
                if *cy > COCONUT_LAST_ROW {
                    *c = None;
                }
            }
        }
        if !mods.no_enemies && !mods.disable_falling_coconut && self.t % COCONUT_PERIOD == COCONUT_OFFSET % COCONUT_PERIOD {
            let col = COCONUT_COLUMNS[(self.t / COCONUT_PERIOD) % COCONUT_COLUMNS.len()];
            if let Some(slot) = self.coconuts.iter_mut().find(|c| c.is_none()) {
                *slot = Some((col, 0));
            }
        }
        if self.hit() {
            self.killed_by_enemy = true;
            return (reward + REWARD_DEATH, true);
        }
        (reward, false)
    }

    pub(crate) fn cells(&self) -> Vec<(i32, i32, usize)> {
        let mut out = vec![(self.player.0, self.player.1, 0), (self.ladders[2], JOEY_ROW, 1)];
        for k in 0..3 {
            for y in ladder_top(k)..=FLOORS[k] {
                out.push((self.ladders[k], y, 2));
            }
        }
        for m in self.monkeys.iter().filter(|m| m.alive) {
            out.push((m.x, m.y, 3));
        }
        for &(cx, cy) in self.coconuts.iter().flatten() {
            out.push((cx, cy, 4));
        }
        out
    }

    #[cfg(test)]
    pub(crate) fn cell_y(&self, row: usize) -> Option<usize> {
        let y = match row {
            0 => self.player.1,
            1 => JOEY_ROW,
            2..=4 => FLOORS[row - 2] - 1,
            5 | 6 => self.monkeys[row - 5].y,
            7 | 8 => self.coconuts[row - 7]?.1,
            _ => return None,
        };
        Some(y as usize)
    }

    pub(crate) fn objects(&self) -> ObjectState {
        let mut z = ObjectState::new(slots());
        z.rows[0] = [1.0, self.player.0 as f64, self.player.1 as f64, self.orientation as f64, 0.0];
        z.rows[1] = [1.0, self.ladders[2] as f64, JOEY_ROW as f64, 0.0, 0.0];
        for k in 0..3 {
            // Ladders sit at the middle of the section they climb so that
            // same-floor tests against them work from anywhere on it.
            z.rows[2 + k] = [1.0, self.ladders[k] as f64, FLOORS[k] as f64 - 1.5, 0.0, 0.0];
        }
        for (i, m) in self.monkeys.iter().enumerate() {
            if m.alive {
                z.rows[5 + i] = [1.0, m.x as f64, m.y as f64, m.dir as f64, 0.0];
            }
        }
        for (i, c) in self.coconuts.iter().enumerate() {
            if let Some((cx, cy)) = c {
                z.rows[7 + i] = [1.0, *cx as f64, *cy as f64, 0.0, 0.0];
            }
        }
        z
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{Env, EnvName, EnvSpec, Game};
    use crate::valuation::OBJECTNESS;

    fn kangaroo(env: &mut Env) -> &mut KangarooState {
        match env.game_mut() {
            Game::Kangaroo(g) => g,
            _ => unreachable!(),
        }
    }

    #[test]
    fn default_layout() {
        let mut env = Env::new(EnvSpec::new(EnvName::MiniKangaroo)).unwrap();
        let g = kangaroo(&mut env).clone();
        assert_eq!(g.player.1, FLOORS[0]);
        assert_eq!(g.ladders.len(), 3);
        let z = env.objects();
        let joey = z.row_of("joey").unwrap();
        assert_eq!(z.rows[joey][2], 0.0);
    }

    #[test]
    fn random_position_differs_by_seed() {
        let mods = Modifications::parse_flags("random_position").unwrap();
        let starts: Vec<_> = (0..2)
            .map(|s| {
                let mut e = Env::new(EnvSpec::new(EnvName::MiniKangaroo).with_mods(mods.clone()).with_seed(s)).unwrap();
                kangaroo(&mut e).player
            })
            .collect();
        assert_ne!(starts[0], starts[1]);
    }

    #[test]
    fn no_enemies_hides_monkeys() {
        let mods = Modifications::parse_flags("no_enemies").unwrap();
        let env = Env::new(EnvSpec::new(EnvName::MiniKangaroo).with_mods(mods)).unwrap();
        let z = env.objects();
        for s in ["monkey1", "monkey2"] {
            assert_eq!(z.rows[z.row_of(s).unwrap()][OBJECTNESS], 0.0);
        }
    }

    #[test]
    fn reaching_goal_pays_and_ends() {
        let mut env = Env::new(EnvSpec::new(EnvName::MiniKangaroo)).unwrap();
        let g = kangaroo(&mut env);
        g.player = (g.ladders[2], GOAL_ROW + 1);
        let t = env.step(UP).unwrap();
        assert_eq!(t.reward, 100.0);
        assert!(t.done);
    }

    #[test]
    fn climbing_only_on_ladders() {
        let mut env = Env::new(EnvSpec::new(EnvName::MiniKangaroo)).unwrap();
        kangaroo(&mut env).player = (5, 11);
        env.step(UP).unwrap();
        assert_eq!(kangaroo(&mut env).player, (5, 11));
        let lx = kangaroo(&mut env).ladders[0];
        kangaroo(&mut env).player = (lx, 11);
        env.step(UP).unwrap();
        assert_eq!(kangaroo(&mut env).player, (lx, 10));
        // no sideways moves off the floor rows
        env.step(LEFT).unwrap();
        assert_eq!(kangaroo(&mut env).player, (lx, 10));
        env.step(DOWN).unwrap();
        env.step(DOWN).unwrap();
        assert_eq!(kangaroo(&mut env).player, (lx, 11));
    }

    #[test]
    fn punch_and_contact() {
        let mut env = Env::new(EnvSpec::new(EnvName::MiniKangaroo)).unwrap();
        let g = kangaroo(&mut env);
        g.player = (14, 11);
        let t = env.step(PUNCH).unwrap();
        assert_eq!(t.reward, 5.0);
        assert!(!kangaroo(&mut env).monkeys[0].alive);

        let mut env = Env::new(EnvSpec::new(EnvName::MiniKangaroo)).unwrap();
        kangaroo(&mut env).player = (14, 11);
        let t = env.step(RIGHT).unwrap();
        assert_eq!(kangaroo(&mut env).player, (14, 11));
        assert!(!t.done);
        for _ in 1..MONKEY_PERIOD - 1 {
            env.step(NOOP).unwrap();
        }
        let t = env.step(NOOP).unwrap();
        assert_eq!(t.reward, -10.0);
        assert!(t.done);
        assert!(kangaroo(&mut env).killed_by_enemy);
    }

    #[test]
    fn monkeys_chase_on_same_floor_only() {
        let mut env = Env::new(EnvSpec::new(EnvName::MiniKangaroo)).unwrap();
        for _ in 0..MONKEY_PERIOD {
            env.step(NOOP).unwrap();
        }
        let g = kangaroo(&mut env);
        assert_eq!(g.monkeys[0].x, 14);
        assert_eq!(g.monkeys[1].x, 0);
    }

    #[test]
    fn relocated_ladders_mirror_columns() {
        let mods = Modifications::parse_flags("relocated_ladders").unwrap();
        let mut env = Env::new(EnvSpec::new(EnvName::MiniKangaroo).with_mods(mods)).unwrap();
        assert_eq!(kangaroo(&mut env).ladders, [2, 13, 3]);
    }
}
