//! Object-centric states and the differentiable valuation functions that turn
//! them into truth values of ground state atoms.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lang::PredicateKind;
use crate::math::sigmoid;
use crate::reason::{AtomValues, GroundProgram};

/// Columns of an [`ObjectState`] row.
pub const OBJECTNESS: usize = 0;
pub const POS_X: usize = 1;
pub const POS_Y: usize = 2;
pub const ORIENTATION: usize = 3;
pub const VALUE: usize = 4;
pub const NUM_PROPS: usize = 5;

/// Name of the slot that is never objectness-gated or dropped by noise.
pub const PLAYER_SLOT: &str = "player";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ValuationError {
    #[error("no valuation registered for state predicate `{0}`")]
    Unregistered(String),
    #[error("atom `{atom}` refers to `{constant}`, which has no object slot")]
    MissingSlot { atom: String, constant: String },
    #[error("valuation `{predicate}` has no parameter `{key}`")]
    UnknownParam { predicate: String, key: String },
    #[error("object slot `{0}` not present in state")]
    UnknownSlot(String),
}

/// `n x 5` object matrix: `[objectness, x, y, orientation, value]` per slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectState {
    pub rows: Vec<[f64; NUM_PROPS]>,
    pub slots: Vec<String>,
}

impl ObjectState {
    pub fn new(slots: Vec<String>) -> Self {
        Self {
            rows: vec![[0.0; NUM_PROPS]; slots.len()],
            slots,
        }
    }

    pub fn num_objects(&self) -> usize {
        self.rows.len()
    }

    pub fn row_of(&self, slot: &str) -> Option<usize> {
        self.slots.iter().position(|s| s == slot)
    }

    pub fn flat(&self) -> Vec<f64> {
        self.rows.iter().flat_map(|r| r.iter().copied()).collect()
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.rows[row][col]
    }

    pub fn set(&mut self, row: usize, col: usize, v: f64) {
        self.rows[row][col] = v;
    }
}

/// Sparse partial derivatives `(row, column, d value)`.
type Grad = Vec<(usize, usize, f64)>;

/// One valuation template with its fixed parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Valuation {
    /// `sigmoid((d - dist) / tau)` between the two arguments.
    CloseBy { d: f64, tau: f64 },
    /// Player left of object: `sigmoid((obj_x - p_x) / tau)`.
    LeftOf { tau: f64 },
    RightOf { tau: f64 },
    /// Player above object (smaller row index): `sigmoid((obj_y - p_y) / tau)`.
    Above { tau: f64 },
    Below { tau: f64 },
    /// Same as `Below`, named for underwater depth.
    DeeperThan { tau: f64 },
    HigherThan { tau: f64 },
    /// `sigmoid((h - |p_y - obj_y|) / tau)`.
    SameFloor { h: f64, tau: f64 },
    /// `sigmoid((w - |p_x - obj_x|) / tau) * same_floor`.
    OnLadder { w: f64, h: f64, tau: f64 },
    /// `sigmoid((alpha - v) / tau)` on the value column of `source`.
    Low { alpha: f64, tau: f64, source: String },
    /// `sigmoid((v - threshold) / tau)` on the value column of `source`.
    Full { threshold: f64, tau: f64, source: String },
    /// `1 - Full`.
    NotFull { threshold: f64, tau: f64, source: String },
    /// `prod_o (1 - close_by(player, o) * objectness_o)` over slots whose
    /// name starts with one of `prefixes`.
    NothingAround { d: f64, tau: f64, prefixes: Vec<String> },
    /// Constant 1 before objectness gating, i.e. the objectness itself.
    Visible,
}

pub const DEFAULT_D: f64 = 2.0;
pub const DEFAULT_TAU: f64 = 0.5;
pub const DEFAULT_ALPHA: f64 = 16.0;
pub const DEFAULT_H: f64 = 0.5;
pub const DEFAULT_W: f64 = 0.5;

impl Valuation {
    pub fn close_by() -> Self {
        Self::CloseBy {
            d: DEFAULT_D,
            tau: DEFAULT_TAU,
        }
    }

    pub fn same_floor() -> Self {
        Self::SameFloor {
            h: DEFAULT_H,
            tau: DEFAULT_TAU,
        }
    }

    pub fn on_ladder() -> Self {
        Self::OnLadder {
            w: DEFAULT_W,
            h: DEFAULT_H,
            tau: DEFAULT_TAU,
        }
    }

    pub fn low(source: &str) -> Self {
        Self::Low {
            alpha: DEFAULT_ALPHA,
            tau: 4.0,
            source: source.into(),
        }
    }

    /// Overrides one numeric parameter by name.
    pub fn set_param(&mut self, key: &str, value: f64) -> bool {
        let slot: Option<&mut f64> = match (self, key) {
            (Self::CloseBy { d, .. }, "d") | (Self::NothingAround { d, .. }, "d") => Some(d),
            (Self::SameFloor { h, .. }, "h") | (Self::OnLadder { h, .. }, "h") => Some(h),
            (Self::OnLadder { w, .. }, "w") => Some(w),
            (Self::Low { alpha, .. }, "alpha") => Some(alpha),
            (Self::Full { threshold, .. }, "threshold")
            | (Self::NotFull { threshold, .. }, "threshold") => Some(threshold),
            (
                Self::CloseBy { tau, .. }
                | Self::LeftOf { tau }
                | Self::RightOf { tau }
                | Self::Above { tau }
                | Self::Below { tau }
                | Self::DeeperThan { tau }
                | Self::HigherThan { tau }
                | Self::SameFloor { tau, .. }
                | Self::OnLadder { tau, .. }
                | Self::Low { tau, .. }
                | Self::Full { tau, .. }
                | Self::NotFull { tau, .. }
                | Self::NothingAround { tau, .. },
                "tau",
            ) => Some(tau),
            _ => None,
        };
        match slot {
            Some(s) => {
                *s = value;
                true
            }
            None => false,
        }
    }

    /// Raw (ungated) value and its gradient.
    fn eval(&self, z: &ObjectState, args: &[Option<usize>]) -> (f64, Grad) {
        let pair = || (args[0].unwrap_or(0), args.get(1).copied().flatten().unwrap_or(0));
        match self {
            Self::CloseBy { d, tau } => {
                let (p, o) = pair();
                close_by(z, p, o, *d, *tau)
            }
            Self::LeftOf { tau } => directional(z, pair(), POS_X, 1.0, *tau),
            Self::RightOf { tau } => directional(z, pair(), POS_X, -1.0, *tau),
            Self::Above { tau } | Self::HigherThan { tau } => directional(z, pair(), POS_Y, 1.0, *tau),
            Self::Below { tau } | Self::DeeperThan { tau } => directional(z, pair(), POS_Y, -1.0, *tau),
            Self::SameFloor { h, tau } => {
                let (p, o) = pair();
                band(z, p, o, POS_Y, *h, *tau)
            }
            Self::OnLadder { w, h, tau } => {
                let (p, o) = pair();
                let (a, ga) = band(z, p, o, POS_X, *w, *tau);
                let (b, gb) = band(z, p, o, POS_Y, *h, *tau);
                let mut g: Grad = ga.into_iter().map(|(r, c, v)| (r, c, v * b)).collect();
                g.extend(gb.into_iter().map(|(r, c, v)| (r, c, v * a)));
                (a * b, g)
            }
            Self::Low { alpha, tau, source } => match z.row_of(source) {
                Some(r) => {
                    let s = sigmoid((alpha - z.get(r, VALUE)) / tau);
                    (s, vec![(r, VALUE, -s * (1.0 - s) / tau)])
                }
                None => (0.0, Vec::new()),
            },
            Self::Full {
                threshold,
                tau,
                source,
            } => match z.row_of(source) {
                Some(r) => {
                    let s = sigmoid((z.get(r, VALUE) - threshold) / tau);
                    (s, vec![(r, VALUE, s * (1.0 - s) / tau)])
                }
                None => (0.0, Vec::new()),
            },
            Self::NotFull {
                threshold,
                tau,
                source,
            } => match z.row_of(source) {
                Some(r) => {
                    let s = sigmoid((z.get(r, VALUE) - threshold) / tau);
                    (1.0 - s, vec![(r, VALUE, -s * (1.0 - s) / tau)])
                }
                None => (1.0, Vec::new()),
            },
            Self::NothingAround { d, tau, prefixes } => {
                let p = args[0].unwrap_or(0);
                let objs: Vec<usize> = (0..z.num_objects())
                    .filter(|&o| o != p && prefixes.iter().any(|pre| z.slots[o].starts_with(pre.as_str())))
                    .collect();
                // factors f_o = 1 - c_o * obj_o
                let mut factors = Vec::with_capacity(objs.len());
                let mut parts = Vec::with_capacity(objs.len());
                for &o in &objs {
                    let (c, gc) = close_by(z, p, o, *d, *tau);
                    let ob = z.get(o, OBJECTNESS);
                    factors.push(1.0 - c * ob);
                    parts.push((o, c, ob, gc));
                }
                let total: f64 = factors.iter().product();
                let mut g = Grad::new();
                for (k, (o, c, ob, gc)) in parts.into_iter().enumerate() {
                    let others: f64 = factors
                        .iter()
                        .enumerate()
                        .filter(|(m, _)| *m != k)
                        .map(|(_, f)| f)
                        .product();
                    for (r, col, v) in gc {
                        g.push((r, col, -others * v * ob));
                    }
                    g.push((o, OBJECTNESS, -others * c));
                }
                (total, g)
            }
            Self::Visible => (1.0, Vec::new()),
        }
    }
}

fn close_by(z: &ObjectState, p: usize, o: usize, d: f64, tau: f64) -> (f64, Grad) {
    let dx = z.get(p, POS_X) - z.get(o, POS_X);
    let dy = z.get(p, POS_Y) - z.get(o, POS_Y);
    let dist = (dx * dx + dy * dy).sqrt();
    let s = sigmoid((d - dist) / tau);
    if dist == 0.0 {
        return (s, Vec::new());
    }
    let k = -s * (1.0 - s) / tau / dist;
    (
        s,
        vec![
            (p, POS_X, k * dx),
            (p, POS_Y, k * dy),
            (o, POS_X, -k * dx),
            (o, POS_Y, -k * dy),
        ],
    )
}

/// `sigmoid(sign * (obj_c - p_c) / tau)`.
fn directional(z: &ObjectState, (p, o): (usize, usize), col: usize, sign: f64, tau: f64) -> (f64, Grad) {
    let s = sigmoid(sign * (z.get(o, col) - z.get(p, col)) / tau);
    let k = sign * s * (1.0 - s) / tau;
    (s, vec![(o, col, k), (p, col, -k)])
}

/// `sigmoid((width - |p_c - obj_c|) / tau)`.
fn band(z: &ObjectState, p: usize, o: usize, col: usize, width: f64, tau: f64) -> (f64, Grad) {
    let diff = z.get(p, col) - z.get(o, col);
    let s = sigmoid((width - diff.abs()) / tau);
    let k = -s * (1.0 - s) / tau * diff.signum() * if diff == 0.0 { 0.0 } else { 1.0 };
    (s, vec![(p, col, k), (o, col, -k)])
}

/// State predicate name to valuation function.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ValuationRegistry {
    entries: BTreeMap<String, Valuation>,
}

impl ValuationRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, predicate: &str, v: Valuation) -> &mut Self {
        self.entries.insert(predicate.to_string(), v);
        self
    }

    pub fn get(&self, predicate: &str) -> Option<&Valuation> {
        self.entries.get(predicate)
    }

    pub fn predicates(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// Applies an override such as `closeby.d = 2.0` (key `"closeby.d"`).
    pub fn apply_override(&mut self, key: &str, value: f64) -> Result<(), ValuationError> {
        let (pred, param) = key.rsplit_once('.').ok_or_else(|| ValuationError::UnknownParam {
            predicate: key.to_string(),
            key: String::new(),
        })?;
        let v = self
            .entries
            .get_mut(pred)
            .ok_or_else(|| ValuationError::Unregistered(pred.to_string()))?;
        if v.set_param(param, value) {
            Ok(())
        } else {
            Err(ValuationError::UnknownParam {
                predicate: pred.to_string(),
                key: param.to_string(),
            })
        }
    }
}

/// Per-atom derivatives `d x0[atom] / d z[row][col]`, stored sparsely.
#[derive(Debug, Clone, PartialEq)]
pub struct StateJacobian {
    pub rows: usize,
    pub entries: Vec<Vec<(usize, usize, f64)>>,
}

impl StateJacobian {
    /// `sum_i grad_atoms[i] * d x0[i] / d z`, shaped like `z`.
    pub fn vjp(&self, grad_atoms: &[f64]) -> Vec<[f64; NUM_PROPS]> {
        let mut out = vec![[0.0; NUM_PROPS]; self.rows];
        for (i, entries) in self.entries.iter().enumerate() {
            let g = grad_atoms[i];
            if g == 0.0 {
                continue;
            }
            for &(r, c, v) in entries {
                out[r][c] += g * v;
            }
        }
        out
    }

    pub fn get(&self, atom: usize, row: usize, col: usize) -> f64 {
        self.entries[atom]
            .iter()
            .filter(|(r, c, _)| *r == row && *c == col)
            .map(|e| e.2)
            .sum()
    }
}

#[derive(Debug, Clone)]
struct Plan {
    atom: usize,
    valuation: Valuation,
    args: Vec<Option<usize>>,
    /// Rows whose objectness multiplies the raw value.
    gates: Vec<usize>,
}

/// A program's state atoms bound to valuation functions and slot rows.
/// Build once per (program, slot layout) and evaluate per state.
#[derive(Debug, Clone)]
pub struct StateEncoder {
    num_atoms: usize,
    num_rows: usize,
    plans: Vec<Plan>,
}

impl StateEncoder {
    pub fn new(gp: &GroundProgram, reg: &ValuationRegistry, slots: &[String]) -> Result<Self, ValuationError> {
        let lang = gp.language();
        let mut plans = Vec::new();
        for (i, atom) in gp.atoms().iter().enumerate() {
            let pred = lang.predicate(atom.predicate);
            if pred.kind != PredicateKind::State {
                continue;
            }
            let valuation = reg
                .get(&pred.name)
                .ok_or_else(|| ValuationError::Unregistered(pred.name.clone()))?
                .clone();
            let args: Vec<Option<usize>> = atom
                .args
                .iter()
                .map(|c| {
                    let name = &lang.constant(*c).name;
                    slots.iter().position(|s| s == name)
                })
                .collect();
            let needs_rows = matches!(
                valuation,
                Valuation::CloseBy { .. }
                    | Valuation::LeftOf { .. }
                    | Valuation::RightOf { .. }
                    | Valuation::Above { .. }
                    | Valuation::Below { .. }
                    | Valuation::DeeperThan { .. }
                    | Valuation::HigherThan { .. }
                    | Valuation::SameFloor { .. }
                    | Valuation::OnLadder { .. }
            );
            let wanted = if needs_rows { 2 } else { 0 };
            for (k, a) in args.iter().enumerate().take(wanted) {
                if a.is_none() {
                    return Err(ValuationError::MissingSlot {
                        atom: gp.atom_name(i),
                        constant: lang.constant(atom.args[k]).name.clone(),
                    });
                }
            }
            if matches!(valuation, Valuation::Visible) && args.iter().all(Option::is_none) {
                return Err(ValuationError::MissingSlot {
                    atom: gp.atom_name(i),
                    constant: lang.constant(atom.args[0]).name.clone(),
                });
            }
            let gates = args
                .iter()
                .flatten()
                .copied()
                .filter(|&r| slots[r] != PLAYER_SLOT)
                .collect();
            plans.push(Plan {
                atom: i,
                valuation,
                args,
                gates,
            });
        }
        Ok(Self {
            num_atoms: gp.atoms().len(),
            num_rows: slots.len(),
            plans,
        })
    }

    fn eval_plan(&self, plan: &Plan, z: &ObjectState, want_grad: bool) -> (f64, Grad) {
        let (raw, graw) = plan.valuation.eval(z, &plan.args);
        let gate: f64 = plan.gates.iter().map(|&r| z.get(r, OBJECTNESS)).product();
        if !want_grad {
            return (raw * gate, Vec::new());
        }
        let mut g: Grad = graw.into_iter().map(|(r, c, v)| (r, c, v * gate)).collect();
        for (k, &r) in plan.gates.iter().enumerate() {
            let others: f64 = plan
                .gates
                .iter()
                .enumerate()
                .filter(|(m, _)| *m != k)
                .map(|(_, &q)| z.get(q, OBJECTNESS))
                .product();
            g.push((r, OBJECTNESS, raw * others));
        }
        (raw * gate, g)
    }

    /// `x0` with state atoms filled and all other atoms at 0.
    pub fn encode(&self, z: &ObjectState) -> Vec<f64> {
        debug_assert_eq!(z.num_objects(), self.num_rows);
        let mut x = vec![0.0; self.num_atoms];
        for p in &self.plans {
            x[p.atom] = self.eval_plan(p, z, false).0;
        }
        x
    }

    pub fn encode_with_jacobian(&self, z: &ObjectState) -> (Vec<f64>, StateJacobian) {
        let mut x = vec![0.0; self.num_atoms];
        let mut entries = vec![Vec::new(); self.num_atoms];
        for p in &self.plans {
            let (v, g) = self.eval_plan(p, z, true);
            x[p.atom] = v;
            entries[p.atom] = g;
        }
        (
            x,
            StateJacobian {
                rows: self.num_rows,
                entries,
            },
        )
    }
}

pub fn evaluate_state_atoms(
    z: &ObjectState,
    reg: &ValuationRegistry,
    gp: &GroundProgram,
) -> Result<AtomValues, ValuationError> {
    let enc = StateEncoder::new(gp, reg, &z.slots)?;
    Ok(AtomValues::new(enc.encode(z)))
}

pub fn valuation_gradients(
    z: &ObjectState,
    reg: &ValuationRegistry,
    gp: &GroundProgram,
) -> Result<StateJacobian, ValuationError> {
    let enc = StateEncoder::new(gp, reg, &z.slots)?;
    Ok(enc.encode_with_jacobian(z).1)
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::lang::{parse_language, parse_rules, RuleSet};
    use crate::reason::ground_program;

    fn program() -> crate::reason::GroundProgram {
        let lang = Arc::new(
            parse_language(
                "type image. type player. type monkey. type hud.
                 const img:image. const player:player. const monkey1:monkey. const oxygen:hud.
                 pred up/1 action (image).
                 pred closeby/2 state (player,monkey).
                 pred left_of/2 state (player,monkey).
                 pred is_empty/1 state (hud).",
            )
            .unwrap(),
        );
        let rs: RuleSet = parse_rules("up(X):-closeby(P,M),is_empty(O),left_of(P,M).", lang).unwrap();
        ground_program(&rs).unwrap()
    }

    fn registry() -> ValuationRegistry {
        let mut reg = ValuationRegistry::new();
        reg.insert("closeby", Valuation::close_by())
            .insert("left_of", Valuation::LeftOf { tau: DEFAULT_TAU })
            .insert("is_empty", Valuation::low("oxygen"));
        reg
    }

    fn state(monkey_obj: f64) -> ObjectState {
        let mut z = ObjectState::new(vec!["player".into(), "monkey1".into(), "oxygen".into()]);
        z.rows[0] = [1.0, 5.0, 3.0, 1.0, 0.0];
        z.rows[1] = [monkey_obj, 6.0, 3.0, -1.0, 0.0];
        z.rows[2] = [1.0, 0.0, 0.0, 0.0, 0.0];
        z
    }

    #[test]
    fn closeby_closed_form() {
        let gp = program();
        let x = evaluate_state_atoms(&state(1.0), &registry(), &gp).unwrap();
        let i = gp.find("closeby", &["player", "monkey1"]).unwrap();
        assert!((x.values[i] - sigmoid(2.0)).abs() < 1e-12);
        assert!((x.values[i] - 0.8808).abs() < 1e-4);
    }

    #[test]
    fn zero_objectness_gates_to_zero() {
        let gp = program();
        let x = evaluate_state_atoms(&state(0.0), &registry(), &gp).unwrap();
        assert_eq!(x.values[gp.find("closeby", &["player", "monkey1"]).unwrap()], 0.0);
        assert_eq!(x.values[gp.find("left_of", &["player", "monkey1"]).unwrap()], 0.0);
    }

    #[test]
    fn is_empty_closed_form() {
        let gp = program();
        let reg = {
            let mut r = registry();
            r.insert(
                "is_empty",
                Valuation::Low {
                    alpha: 16.0,
                    tau: 4.0,
                    source: "oxygen".into(),
                },
            );
            r
        };
        let x = evaluate_state_atoms(&state(1.0), &reg, &gp).unwrap();
        let v = x.values[gp.find("is_empty", &["oxygen"]).unwrap()];
        assert!((v - 0.9820).abs() < 1e-4, "{v}");
        let jac = valuation_gradients(&state(1.0), &reg, &gp).unwrap();
        let g = jac.get(gp.find("is_empty", &["oxygen"]).unwrap(), 2, VALUE);
        assert!(g < 0.0);
        assert!((g + v * (1.0 - v) / 4.0).abs() < 1e-12);
    }

    #[test]
    fn unregistered_predicate_errors() {
        let gp = program();
        let mut reg = registry();
        reg.entries.remove("left_of");
        assert_eq!(
            evaluate_state_atoms(&state(1.0), &reg, &gp).unwrap_err(),
            ValuationError::Unregistered("left_of".into())
        );
    }

    #[test]
    fn gated_atom_gradient() {
        let gp = program();
        let jac = valuation_gradients(&state(0.0), &registry(), &gp).unwrap();
        let i = gp.find("closeby", &["player", "monkey1"]).unwrap();
        assert_eq!(jac.get(i, 1, POS_X), 0.0);
        assert_eq!(jac.get(i, 0, POS_X), 0.0);
        assert!((jac.get(i, 1, OBJECTNESS) - sigmoid(2.0)).abs() < 1e-12);
    }

    #[test]
    fn closeby_gradient_matches_finite_difference() {
        let gp = program();
        let reg = registry();
        let i = gp.find("closeby", &["player", "monkey1"]).unwrap();
        let jac = valuation_gradients(&state(1.0), &reg, &gp).unwrap();
        let h = 1e-6;
        let mut zp = state(1.0);
        zp.rows[1][POS_X] += h;
        let mut zm = state(1.0);
        zm.rows[1][POS_X] -= h;
        let fd = (evaluate_state_atoms(&zp, &reg, &gp).unwrap().values[i]
            - evaluate_state_atoms(&zm, &reg, &gp).unwrap().values[i])
            / (2.0 * h);
        let an = jac.get(i, 1, POS_X);
        assert!(an < 0.0);
        assert!(((an - fd) / fd).abs() < 1e-4, "{an} vs {fd}");
    }

    #[test]
    fn overrides() {
        let mut reg = registry();
        reg.apply_override("closeby.d", 3.0).unwrap();
        assert_eq!(reg.get("closeby"), Some(&Valuation::CloseBy { d: 3.0, tau: DEFAULT_TAU }));
        assert!(reg.apply_override("closeby.alpha", 1.0).is_err());
        assert!(reg.apply_override("nope.d", 1.0).is_err());
    }
}
