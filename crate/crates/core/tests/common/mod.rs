//! Shared oracles for the integration and acceptance tests.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use nsrl::assets;
use nsrl::envs::{Env, EnvName, EnvSpec};
use nsrl::lang::{parse_language, parse_rules, Atom, ConstId, Language, PredId, PredicateKind, Rule, RuleSet, Term};
use nsrl::policy::{build_policy, BlendPolicy, BlenderMode, OutputGrads};
use nsrl::reason::{build_graph, ground_program, GroundAtom};
use nsrl::valuation::{ObjectState, StateEncoder, NUM_PROPS};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;
pub const GRAD_FLOOR: f64 = 1e-5;

pub type Fact = (PredId, Vec<ConstId>);

/// A random function-free definite program with a random fact base.
pub struct RandomProgram {
    pub rules: RuleSet,
    pub facts: BTreeSet<Fact>,
}

/// Up to 6 predicates, 8 constants over 1-2 types and 10 rules; rule
/// bodies may mention derived predicates, so recursion occurs.
pub fn random_program(seed: u64) -> RandomProgram {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut lang = Language::new();
    let n_types = rng.gen_range(1..=2);
    let types: Vec<String> = (0..n_types).map(|t| format!("t{t}")).collect();
    for t in &types {
        lang.add_type(t).unwrap();
    }
    let n_consts = rng.gen_range(n_types..=8);
    for c in 0..n_consts {
        // every type gets at least one constant
        let ty = if c < n_types { c } else { rng.gen_range(0..n_types) };
        lang.add_constant(&format!("c{c}"), &types[ty]).unwrap();
    }
    let n_preds = rng.gen_range(1..=6);
    for p in 0..n_preds {
        let arity = rng.gen_range(1..=2);
        let args: Vec<&str> = (0..arity).map(|_| types[rng.gen_range(0..n_types)].as_str()).collect();
        lang.add_predicate(&format!("p{p}"), PredicateKind::State, &args).unwrap();
    }
    let lang = Arc::new(lang);
    let preds: Vec<PredId> = (0..n_preds).map(|p| lang.predicate_id(&format!("p{p}")).unwrap()).collect();
    let consts_of = |ty: &str| lang.constants_of_type(lang.type_id(ty).unwrap());

    let n_rules = rng.gen_range(0..=10);
    let mut rules = Vec::new();
    for _ in 0..n_rules {
        let mut var_types: BTreeMap<String, usize> = BTreeMap::new();
        let term = |ty: usize, rng: &mut ChaCha8Rng, var_types: &mut BTreeMap<String, usize>| -> Term {
            if rng.gen_bool(0.15) {
                let cs = consts_of(&types[ty]);
                return Term::Const(*cs.choose(rng).unwrap());
            }
            let same: Vec<String> = var_types.iter().filter(|(_, &t)| t == ty).map(|(v, _)| v.clone()).collect();
            if !same.is_empty() && rng.gen_bool(0.6) {
                return Term::Var(same.choose(rng).unwrap().clone());
            }
            let v = format!("V{}", var_types.len());
            var_types.insert(v.clone(), ty);
            Term::Var(v)
        };
        let arg_types = |p: PredId| -> Vec<usize> {
            lang.predicate(p)
                .arg_types
                .iter()
                .map(|t| types.iter().position(|n| n == lang.type_name(*t)).unwrap())
                .collect()
        };
        let body_len = rng.gen_range(1..=3);
        let mut body = Vec::new();
        for _ in 0..body_len {
            let p = *preds.choose(&mut rng).unwrap();
            let args = arg_types(p).into_iter().map(|ty| term(ty, &mut rng, &mut var_types)).collect();
            body.push(Atom { predicate: p, args });
        }
        let hp = *preds.choose(&mut rng).unwrap();
        let head_args = arg_types(hp)
            .into_iter()
            .map(|ty| {
                let same: Vec<&String> = var_types.iter().filter(|(_, &t)| t == ty).map(|(v, _)| v).collect();
                if same.is_empty() || rng.gen_bool(0.1) {
                    Term::Const(*consts_of(&types[ty]).choose(&mut rng).unwrap())
                } else {
                    Term::Var((*same.choose(&mut rng).unwrap()).clone())
                }
            })
            .collect();
        rules.push(Rule {
            weight: 1.0,
            head: Atom { predicate: hp, args: head_args },
            body,
        });
    }
    let rules = RuleSet::new(lang.clone(), rules).unwrap();

    let mut facts = BTreeSet::new();
    for &p in &preds {
        for args in all_args(&lang, p) {
            if rng.gen_bool(0.3) {
                facts.insert((p, args));
            }
        }
    }
    RandomProgram { rules, facts }
}

fn all_args(lang: &Language, p: PredId) -> Vec<Vec<ConstId>> {
    let mut out = vec![Vec::new()];
    for &ty in &lang.predicate(p).arg_types {
        let cs = lang.constants_of_type(ty);
        out = out
            .into_iter()
            .flat_map(|prefix| {
                cs.iter().map(move |&c| {
                    let mut v = prefix.clone();
                    v.push(c);
                    v
                })
            })
            .collect();
    }
    out
}

fn unify(atom: &Atom, fact: &[ConstId], sub: &BTreeMap<String, ConstId>) -> Option<BTreeMap<String, ConstId>> {
    let mut s = sub.clone();
    for (t, &c) in atom.args.iter().zip(fact) {
        match t {
            Term::Const(k) if *k != c => return None,
            Term::Const(_) => {}
            Term::Var(v) => match s.get(v) {
                Some(&b) if b != c => return None,
                Some(_) => {}
                None => {
                    s.insert(v.clone(), c);
                }
            },
        }
    }
    Some(s)
}

/// Least fixpoint of the immediate consequence operator by naive
/// iteration over fact joins. Returns the closure and the number of rounds
/// that added facts.
pub fn brute_force_closure(rules: &RuleSet, facts: &BTreeSet<Fact>) -> (BTreeSet<Fact>, usize) {
    let mut known = facts.clone();
    let mut rounds = 0;
    loop {
        let mut new = BTreeSet::new();
        for r in rules.rules() {
            let mut subs = vec![BTreeMap::new()];
            for b in &r.body {
                let mut next = Vec::new();
                for s in &subs {
                    for (p, args) in &known {
                        if *p == b.predicate {
                            if let Some(s2) = unify(b, args, s) {
                                next.push(s2);
                            }
                        }
                    }
                }
                subs = next;
            }
            for s in subs {
                let args: Vec<ConstId> = r
                    .head
                    .args
                    .iter()
                    .map(|t| match t {
                        Term::Const(c) => *c,
                        Term::Var(v) => s[v],
                    })
                    .collect();
                let f = (r.head.predicate, args);
                if !known.contains(&f) {
                    new.insert(f);
                }
            }
        }
        if new.is_empty() {
            return (known, rounds);
        }
        rounds += 1;
        known.extend(new);
    }
}

/// Soft inference thresholded at 0.5, run for `steps` rounds.
pub fn soft_closure(rules: &RuleSet, facts: &BTreeSet<Fact>, steps: usize) -> BTreeSet<Fact> {
    let gp = ground_program(rules).unwrap();
    let graph = build_graph(&gp);
    let mut x0 = vec![0.0; gp.atoms().len()];
    let mut out = BTreeSet::new();
    for (p, args) in facts {
        let atom = GroundAtom {
            predicate: *p,
            args: args.clone(),
        };
        match gp.atom_index(&atom) {
            Some(i) => x0[i] = 1.0,
            // facts outside every ground rule stay true
            None => {
                out.insert((*p, args.clone()));
            }
        }
    }
    let w = vec![1.0; rules.len()];
    let tape = graph.forward(&x0, &w, steps.max(1), 0.01).unwrap();
    for (i, &v) in tape.output().iter().enumerate() {
        if v > 0.5 {
            let a = &gp.atoms()[i];
            out.insert((a.predicate, a.args.clone()));
        }
    }
    out
}

/// Compares soft and hard closure for one random program.
pub fn tc_case(seed: u64) -> Result<(), String> {
    let p = random_program(seed);
    let (hard, rounds) = brute_force_closure(&p.rules, &p.facts);
    let steps = nsrl::reason::default_steps(&p.rules).max(rounds + 1);
    let soft = soft_closure(&p.rules, &p.facts, steps);
    if soft == hard {
        Ok(())
    } else {
        Err(format!(
            "seed {seed}: soft-only {:?}, hard-only {:?}\n{}",
            soft.difference(&hard).collect::<Vec<_>>(),
            hard.difference(&soft).collect::<Vec<_>>(),
            p.rules.format()
        ))
    }
}

/// `|a - b| / max(|a|, |b|, floor)`; the floor keeps finite-difference
/// round-off on near-zero gradients from dominating.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

pub fn kangaroo_rules(ladders: usize) -> RuleSet {
    let mut src = String::from(
        "type image. type player. type ladder.
         const img:image. const player:player.
         pred up/1 action (image). pred right/1 action (image). pred left/1 action (image).
         pred on_ladder/2 state (player,ladder). pred same_floor/2 state (player,ladder).
         pred left_of/2 state (player,ladder). pred right_of/2 state (player,ladder).\n",
    );
    for l in 1..=ladders {
        src.push_str(&format!("const ladder{l}:ladder.\n"));
    }
    let lang = Arc::new(parse_language(&src).unwrap());
    parse_rules(
        "1.0 up(X):-on_ladder(Player,Ladder),same_floor(Player,Ladder).
         1.0 right(X):-left_of(Player,Ladder),same_floor(Player,Ladder).
         1.0 left(X):-right_of(Player,Ladder),same_floor(Player,Ladder).",
        lang,
    )
    .unwrap()
}

/// Graph node+edge counts for the ladder program with `n` ladders.
pub fn kangaroo_graph_size(ladders: usize) -> (usize, usize) {
    let rs = kangaroo_rules(ladders);
    let gp = ground_program(&rs).unwrap();
    let g = build_graph(&gp);
    (gp.ground_rules().len(), g.node_count() + g.edge_count())
}

/// A program with inputs and weights drawn away from the clamp boundaries,
/// plus a random linear read-out of the final atom values.
fn reasoning_instance(seed: u64) -> (RuleSet, Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let rules = if seed % 2 == 0 {
        kangaroo_rules(rng.gen_range(1..=4))
    } else {
        let mut p = random_program(seed);
        while p.rules.is_empty() {
            p = random_program(p.facts.len() as u64 + seed * 31 + 1);
        }
        p.rules
    };
    let gp = ground_program(&rules).unwrap();
    let x0: Vec<f64> = (0..gp.atoms().len()).map(|_| rng.gen_range(0.05..0.6)).collect();
    let w: Vec<f64> = (0..rules.len()).map(|_| rng.gen_range(0.1..0.9)).collect();
    let c: Vec<f64> = (0..gp.atoms().len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    (rules, x0, w, c)
}

fn readout(rules: &RuleSet, x0: &[f64], w: &[f64], c: &[f64]) -> f64 {
    let gp = ground_program(rules).unwrap();
    let g = build_graph(&gp);
    let steps = nsrl::reason::default_steps(rules);
    let tape = g.forward(x0, w, steps, 0.01).unwrap();
    tape.output().iter().zip(c).map(|(a, b)| a * b).sum()
}

/// Max relative error of d(readout)/d(weights) and d(readout)/d(x0)
/// against central differences.
pub fn reasoning_gradient_errors(seed: u64) -> (f64, f64) {
    let (rules, x0, w, c) = reasoning_instance(seed);
    let gp = ground_program(&rules).unwrap();
    let g = build_graph(&gp);
    let steps = nsrl::reason::default_steps(&rules);
    let tape = g.forward(&x0, &w, steps, 0.01).unwrap();
    let (gw, gx) = g.backward(&tape, &w, &c);
    let h = FD_STEP;
    let mut ew: f64 = 0.0;
    for r in 0..w.len() {
        let (mut wp, mut wm) = (w.clone(), w.clone());
        wp[r] += h;
        wm[r] -= h;
        let fd = (readout(&rules, &x0, &wp, &c) - readout(&rules, &x0, &wm, &c)) / (2.0 * h);
        ew = ew.max(rel_err(fd, gw[r], GRAD_FLOOR));
    }
    let mut ex: f64 = 0.0;
    for k in 0..x0.len() {
        let (mut xp, mut xm) = (x0.clone(), x0.clone());
        xp[k] += h;
        xm[k] -= h;
        let fd = (readout(&rules, &xp, &w, &c) - readout(&rules, &xm, &w, &c)) / (2.0 * h);
        ex = ex.max(rel_err(fd, gx[k], GRAD_FLOOR));
    }
    (ew, ex)
}

/// Random object state for `env` with every slot present.
pub fn random_object_state(env: EnvName, rng: &mut ChaCha8Rng) -> ObjectState {
    let mut z = ObjectState::new(env.slots());
    for row in z.rows.iter_mut() {
        *row = [
            rng.gen_range(0.2..1.0),
            rng.gen_range(0.0..16.0),
            rng.gen_range(0.0..12.0),
            if rng.gen_bool(0.5) { 1.0 } else { -1.0 },
            rng.gen_range(0.0..100.0),
        ];
    }
    if env == EnvName::MiniSeaquest {
        z.rows[1][4] = rng.gen_range(0.0..5.0);
    }
    z
}

/// Max relative error of the valuation Jacobian against central differences.
pub fn valuation_gradient_error(seed: u64) -> f64 {
    let env = if seed % 2 == 0 { EnvName::MiniKangaroo } else { EnvName::MiniSeaquest };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let b = assets::bundle(env).unwrap();
    let gp = ground_program(&b.action_rules).unwrap();
    let enc = StateEncoder::new(&gp, &b.valuations, &env.slots()).unwrap();
    let z = random_object_state(env, &mut rng);
    let c: Vec<f64> = (0..gp.atoms().len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let f = |z: &ObjectState| -> f64 { enc.encode(z).iter().zip(&c).map(|(a, b)| a * b).sum() };
    let (_, jac) = enc.encode_with_jacobian(&z);
    let an = jac.vjp(&c);
    let h = FD_STEP;
    let mut err: f64 = 0.0;
    for r in 0..z.num_objects() {
        for col in 0..NUM_PROPS {
            let (mut zp, mut zm) = (z.clone(), z.clone());
            zp.rows[r][col] += h;
            zm.rows[r][col] -= h;
            let fd = (f(&zp) - f(&zm)) / (2.0 * h);
            err = err.max(rel_err(fd, an[r][col], GRAD_FLOOR));
        }
    }
    err
}

/// Max relative error of the full `log pi(a) + 0.5 V + 0.1 beta` gradient
/// over a sample of every parameter tensor.
pub fn policy_gradient_error(seed: u64) -> f64 {
    let env = if seed % 3 == 2 { EnvName::MiniSeaquest } else { EnvName::MiniKangaroo };
    let mode = if seed % 2 == 0 { BlenderMode::Logic } else { BlenderMode::Neural };
    let spec = EnvSpec::new(env).with_seed(seed);
    let mut p = build_policy(&assets::bundle(env).unwrap(), &spec, mode, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut e = Env::new(spec).unwrap();
    for _ in 0..rng.gen_range(0..40) {
        if e.step(rng.gen_range(0..6)).unwrap().done {
            e.reset();
        }
    }
    let obs = e.observe();
    let a = rng.gen_range(0..6);
    let f = |p: &BlendPolicy| -> f64 {
        let out = p.step(&obs).unwrap();
        out.dist[a].ln() + 0.5 * out.value + 0.1 * out.beta
    };
    let (out, cache) = p.forward(&obs).unwrap();
    let mut gdist = vec![0.0; out.dist.len()];
    gdist[a] = 1.0 / out.dist[a];
    let mut grads = p.zero_grads();
    p.backward(
        &out,
        &cache,
        &OutputGrads {
            dist: gdist,
            beta: 0.1,
            value: 0.5,
        },
        &mut grads,
    );
    let h = FD_STEP;
    let mut err: f64 = 0.0;
    for t in 0..6 {
        let n = p.tensors()[t].len();
        let picks: Vec<usize> = if n <= 16 {
            (0..n).collect()
        } else {
            (0..8).map(|_| rng.gen_range(0..n)).collect()
        };
        for i in picks {
            let orig = p.tensors()[t][i];
            p.tensors_mut()[t][i] = orig + h;
            let fp = f(&p);
            p.tensors_mut()[t][i] = orig - h;
            let fm = f(&p);
            p.tensors_mut()[t][i] = orig;
            let fd = (fp - fm) / (2.0 * h);
            err = err.max(rel_err(fd, grads.tensors[t][i], GRAD_FLOOR));
        }
    }
    err
}
