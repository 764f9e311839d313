//! Grounding and differentiable forward chaining on a bipartite reasoning
//! graph.
//!
//! A [`RuleSet`] is grounded into a [`GroundProgram`] by enumerating every
//! type-valid substitution. The program becomes a [`ReasoningGraph`] with one
//! node per ground atom and one conjunction node per ground rule, so memory
//! grows with `|atoms| + |ground rules|` rather than their product.
//!
//! Inference alternates two message-passing directions for `T` steps:
//!
//! ```text
//! conj_j  <- softor(conj_j, prod_{k in body(j)} atom_k)
//! atom_i  <- softor(atom_i, w_{rule(j)} * conj_j  for j -> i)
//! ```
//!
//! Values are clamped to `[0, 1]` after every step since `softor` upper-bounds
//! the maximum.

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;
use std::sync::Arc;

use thiserror::Error;

use crate::lang::{ConstId, Language, PredId, PredicateKind, RuleSet, Term};
use crate::math::logsumexp_scaled;

pub const DEFAULT_GAMMA: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GroundError {
    #[error("rule {rule}: variable `{variable}` has type `{ty}` with no constants")]
    EmptyType {
        rule: usize,
        variable: String,
        ty: String,
    },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ReasonError {
    #[error("dimension mismatch for {what}: expected {expected}, found {found}")]
    Dimension {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("invalid parameter: {0}")]
    Parameter(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct GroundAtom {
    pub predicate: PredId,
    pub args: Vec<ConstId>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroundRule {
    /// Index of the source rule in its [`RuleSet`].
    pub rule: usize,
    pub head: usize,
    pub body: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct GroundProgram {
    language: Arc<Language>,
    atoms: Vec<GroundAtom>,
    index: HashMap<GroundAtom, usize>,
    rules: Vec<GroundRule>,
    rule_count: usize,
}

impl GroundProgram {
    pub fn language(&self) -> &Arc<Language> {
        &self.language
    }

    pub fn atoms(&self) -> &[GroundAtom] {
        &self.atoms
    }

    pub fn ground_rules(&self) -> &[GroundRule] {
        &self.rules
    }

    /// Number of (non-ground) rules the program was built from.
    pub fn rule_count(&self) -> usize {
        self.rule_count
    }

    pub fn atom_index(&self, atom: &GroundAtom) -> Option<usize> {
        self.index.get(atom).copied()
    }

    /// Finds a ground atom by predicate and constant names.
    pub fn find(&self, predicate: &str, args: &[&str]) -> Option<usize> {
        let p = self.language.predicate_id(predicate)?;
        let args = args
            .iter()
            .map(|a| self.language.constant_id(a))
            .collect::<Option<Vec<_>>>()?;
        self.atom_index(&GroundAtom { predicate: p, args })
    }

    /// Indices of all ground atoms of one predicate, in grounding order.
    pub fn atoms_of(&self, predicate: PredId) -> Vec<usize> {
        self.atoms
            .iter()
            .enumerate()
            .filter(|(_, a)| a.predicate == predicate)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn atom_kind(&self, i: usize) -> PredicateKind {
        self.language.predicate(self.atoms[i].predicate).kind
    }

    pub fn atom_name(&self, i: usize) -> String {
        let a = &self.atoms[i];
        let args: Vec<&str> = a
            .args
            .iter()
            .map(|c| self.language.constant(*c).name.as_str())
            .collect();
        format!("{}({})", self.language.predicate(a.predicate).name, args.join(","))
    }

    /// Ground rule rendered as `head:-b1,...,bn` (without weight).
    pub fn ground_rule_text(&self, j: usize) -> String {
        let r = &self.rules[j];
        let body: Vec<String> = r.body.iter().map(|&b| self.atom_name(b)).collect();
        format!("{}:-{}", self.atom_name(r.head), body.join(","))
    }
}

fn cartesian(domains: &[Vec<ConstId>]) -> Vec<Vec<ConstId>> {
    let mut out = vec![Vec::with_capacity(domains.len())];
    for d in domains {
        let mut next = Vec::with_capacity(out.len() * d.len());
        for prefix in &out {
            for &c in d {
                let mut p = prefix.clone();
                p.push(c);
                next.push(p);
            }
        }
        out = next;
    }
    out
}

/// Grounds every rule over all type-valid substitutions.
///
/// Atoms are enumerated per predicate in declaration order with arguments in
/// lexicographic constant order; ground rules are ordered by rule index, then
/// lexicographically by substitution (variables in first-occurrence order).
pub fn ground_program(rules: &RuleSet) -> Result<GroundProgram, GroundError> {
    let lang = rules.language().clone();
    let mut atoms = Vec::new();
    let mut index = HashMap::new();
    for (pi, p) in lang.predicates().iter().enumerate() {
        let domains: Vec<Vec<ConstId>> = p
            .arg_types
            .iter()
            .map(|&t| lang.constants_of_type(t))
            .collect();
        for args in cartesian(&domains) {
            let a = GroundAtom {
                predicate: PredId(pi),
                args,
            };
            index.insert(a.clone(), atoms.len());
            atoms.push(a);
        }
    }

    let mut ground = Vec::new();
    for (ri, rule) in rules.rules().iter().enumerate() {
        let vars = rule.variables();
        let mut var_ty = HashMap::new();
        for atom in std::iter::once(&rule.head).chain(&rule.body) {
            let p = lang.predicate(atom.predicate);
            for (t, &ty) in atom.args.iter().zip(&p.arg_types) {
                if let Term::Var(v) = t {
                    var_ty.entry(v.as_str()).or_insert(ty);
                }
            }
        }
        let mut domains = Vec::with_capacity(vars.len());
        for v in &vars {
            let ty = var_ty[v];
            let consts = lang.constants_of_type(ty);
            if consts.is_empty() {
                return Err(GroundError::EmptyType {
                    rule: ri,
                    variable: v.to_string(),
                    ty: lang.type_name(ty).to_string(),
                });
            }
            domains.push(consts);
        }
        for subst in cartesian(&domains) {
            let resolve = |atom: &crate::lang::Atom| -> usize {
                let args = atom
                    .args
                    .iter()
                    .map(|t| match t {
                        Term::Const(c) => *c,
                        Term::Var(v) => subst[vars.iter().position(|w| w == v).unwrap()],
                    })
                    .collect();
                index[&GroundAtom {
                    predicate: atom.predicate,
                    args,
                }]
            };
            let head = resolve(&rule.head);
            let mut body: Vec<usize> = Vec::with_capacity(rule.body.len());
            for b in &rule.body {
                let i = resolve(b);
                if !body.contains(&i) {
                    body.push(i);
                }
            }
            ground.push(GroundRule {
                rule: ri,
                head,
                body,
            });
        }
    }
    Ok(GroundProgram {
        language: lang,
        atoms,
        index,
        rules: ground,
        rule_count: rules.len(),
    })
}

/// Default number of inference steps: distinct predicates used by the rules
/// plus one.
pub fn default_steps(rules: &RuleSet) -> usize {
    let mut preds = BTreeSet::new();
    for r in rules.rules() {
        preds.insert(r.head.predicate);
        for b in &r.body {
            preds.insert(b.predicate);
        }
    }
    preds.len() + 1
}

/// Bipartite atom/conjunction graph. Conjunction node `j` corresponds to
/// ground rule `j` of the program it was built from.
#[derive(Debug, Clone)]
pub struct ReasoningGraph {
    num_atoms: usize,
    num_rules: usize,
    conj_body: Vec<Vec<usize>>,
    conj_head: Vec<usize>,
    conj_rule: Vec<usize>,
    atom_in: Vec<Vec<usize>>,
}

pub fn build_graph(gp: &GroundProgram) -> ReasoningGraph {
    let n = gp.atoms().len();
    let mut atom_in = vec![Vec::new(); n];
    let mut conj_body = Vec::with_capacity(gp.ground_rules().len());
    let mut conj_head = Vec::with_capacity(gp.ground_rules().len());
    let mut conj_rule = Vec::with_capacity(gp.ground_rules().len());
    for (j, r) in gp.ground_rules().iter().enumerate() {
        conj_body.push(r.body.clone());
        conj_head.push(r.head);
        conj_rule.push(r.rule);
        atom_in[r.head].push(j);
    }
    ReasoningGraph {
        num_atoms: n,
        num_rules: gp.rule_count(),
        conj_body,
        conj_head,
        conj_rule,
        atom_in,
    }
}

impl ReasoningGraph {
    pub fn num_atom_nodes(&self) -> usize {
        self.num_atoms
    }

    pub fn num_conj_nodes(&self) -> usize {
        self.conj_head.len()
    }

    pub fn num_rules(&self) -> usize {
        self.num_rules
    }

    pub fn atom_to_conj_edges(&self) -> usize {
        self.conj_body.iter().map(Vec::len).sum()
    }

    pub fn conj_to_atom_edges(&self) -> usize {
        self.conj_head.len()
    }

    pub fn node_count(&self) -> usize {
        self.num_atom_nodes() + self.num_conj_nodes()
    }

    pub fn edge_count(&self) -> usize {
        self.atom_to_conj_edges() + self.conj_to_atom_edges()
    }

    pub fn conj_body(&self, j: usize) -> &[usize] {
        &self.conj_body[j]
    }

    pub fn conj_head(&self, j: usize) -> usize {
        self.conj_head[j]
    }

    pub fn conj_rule(&self, j: usize) -> usize {
        self.conj_rule[j]
    }

    /// Conjunction nodes with an edge into atom `i`.
    pub fn incoming(&self, i: usize) -> &[usize] {
        &self.atom_in[i]
    }

    /// Line-oriented dump: one `atom`, `conj`, or `edge` record per line.
    pub fn dump(&self, gp: &GroundProgram) -> String {
        let mut s = String::new();
        for i in 0..self.num_atoms {
            let _ = writeln!(s, "atom {i} {}", gp.atom_name(i));
        }
        for j in 0..self.num_conj_nodes() {
            let _ = writeln!(s, "conj {j} rule={}", self.conj_rule[j]);
        }
        for j in 0..self.num_conj_nodes() {
            for &b in &self.conj_body[j] {
                let _ = writeln!(s, "edge atom:{b} -> conj:{j}");
            }
            let _ = writeln!(
                s,
                "edge conj:{j} -> atom:{} w={}",
                self.conj_head[j], self.conj_rule[j]
            );
        }
        s
    }
}

/// Truth values indexed like the ground atoms of a program.
#[derive(Debug, Clone, PartialEq)]
pub struct AtomValues {
    pub values: Vec<f64>,
    pub step: usize,
}

impl AtomValues {
    pub fn new(values: Vec<f64>) -> Self {
        Self { values, step: 0 }
    }

    pub fn zeros(n: usize) -> Self {
        Self::new(vec![0.0; n])
    }
}

/// Smooth maximum `gamma * ln(sum_i exp(x_i / gamma))`.
pub fn softor(values: &[f64], gamma: f64) -> Result<f64, ReasonError> {
    if !(gamma > 0.0) {
        return Err(ReasonError::Parameter(format!("gamma must be > 0, got {gamma}")));
    }
    if values.is_empty() {
        return Err(ReasonError::Parameter("softor of an empty set".into()));
    }
    Ok(logsumexp_scaled(values, gamma))
}

/// Intermediate values recorded by a forward pass, consumed by
/// [`ReasoningGraph::backward`].
#[derive(Debug, Clone)]
pub struct ReasonTape {
    pub gamma: f64,
    /// Atom values `x^(0..=T)`.
    pub atoms: Vec<Vec<f64>>,
    /// Conjunction values `c^(0..=T)`, with `c^(0) = 0`.
    pub conjs: Vec<Vec<f64>>,
    /// Pre-clamp atom softor outputs for steps `1..=T`.
    atom_raw: Vec<Vec<f64>>,
    conj_raw: Vec<Vec<f64>>,
}

impl ReasonTape {
    pub fn output(&self) -> &[f64] {
        self.atoms.last().expect("tape has at least the input")
    }

    pub fn steps(&self) -> usize {
        self.atoms.len() - 1
    }

    /// Final conjunction node values.
    pub fn conj_output(&self) -> &[f64] {
        self.conjs.last().expect("tape has at least the initial conj values")
    }
}

impl ReasoningGraph {
    fn check(&self, x0: &[f64], weights: &[f64], steps: usize, gamma: f64) -> Result<(), ReasonError> {
        if x0.len() != self.num_atoms {
            return Err(ReasonError::Dimension {
                what: "atom values",
                expected: self.num_atoms,
                found: x0.len(),
            });
        }
        if weights.len() != self.num_rules {
            return Err(ReasonError::Dimension {
                what: "rule weights",
                expected: self.num_rules,
                found: weights.len(),
            });
        }
        if steps == 0 {
            return Err(ReasonError::Parameter("inference steps must be >= 1".into()));
        }
        if !(gamma > 0.0) {
            return Err(ReasonError::Parameter(format!("gamma must be > 0, got {gamma}")));
        }
        Ok(())
    }

    /// Runs `steps` rounds of message passing and records a tape.
    pub fn forward(
        &self,
        x0: &[f64],
        weights: &[f64],
        steps: usize,
        gamma: f64,
    ) -> Result<ReasonTape, ReasonError> {
        self.check(x0, weights, steps, gamma)?;
        let nc = self.num_conj_nodes();
        let mut tape = ReasonTape {
            gamma,
            atoms: Vec::with_capacity(steps + 1),
            conjs: Vec::with_capacity(steps + 1),
            atom_raw: Vec::with_capacity(steps),
            conj_raw: Vec::with_capacity(steps),
        };
        tape.atoms.push(x0.to_vec());
        tape.conjs.push(vec![0.0; nc]);
        let mut buf = Vec::new();
        for _ in 0..steps {
            let x = tape.atoms.last().unwrap();
            let c_prev = tape.conjs.last().unwrap();
            let mut c_raw = Vec::with_capacity(nc);
            for j in 0..nc {
                let prod: f64 = self.conj_body[j].iter().map(|&k| x[k]).product();
                c_raw.push(logsumexp_scaled(&[c_prev[j], prod], gamma));
            }
            let c_new: Vec<f64> = c_raw.iter().map(|&v| v.clamp(0.0, 1.0)).collect();
            let mut a_raw = Vec::with_capacity(self.num_atoms);
            for i in 0..self.num_atoms {
                if self.atom_in[i].is_empty() {
                    a_raw.push(x[i]);
                    continue;
                }
                buf.clear();
                buf.push(x[i]);
                for &j in &self.atom_in[i] {
                    buf.push(weights[self.conj_rule[j]] * c_new[j]);
                }
                a_raw.push(logsumexp_scaled(&buf, gamma));
            }
            let a_new: Vec<f64> = a_raw.iter().map(|&v| v.clamp(0.0, 1.0)).collect();
            tape.conj_raw.push(c_raw);
            tape.atom_raw.push(a_raw);
            tape.conjs.push(c_new);
            tape.atoms.push(a_new);
        }
        Ok(tape)
    }

    /// Reverse-mode pass: maps `dL/dx^(T)` to `(dL/dweights, dL/dx^(0))`.
    pub fn backward(&self, tape: &ReasonTape, weights: &[f64], grad_out: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let gamma = tape.gamma;
        let nc = self.num_conj_nodes();
        let mut gw = vec![0.0; self.num_rules];
        let mut gx = grad_out.to_vec();
        let mut gc = vec![0.0; nc];
        for t in (0..tape.steps()).rev() {
            let x = &tape.atoms[t];
            let c_new = &tape.conjs[t + 1];
            let c_prev = &tape.conjs[t];
            let a_raw = &tape.atom_raw[t];
            let c_raw = &tape.conj_raw[t];

            // atom update: x^(t+1)_i = clamp(softor(x^t_i, w c^(t+1)_j ...))
            let mut gx_prev = vec![0.0; self.num_atoms];
            for i in 0..self.num_atoms {
                let g = gx[i];
                if g == 0.0 {
                    continue;
                }
                if self.atom_in[i].is_empty() {
                    gx_prev[i] += g;
                    continue;
                }
                if a_raw[i] > 1.0 {
                    continue;
                }
                let s = a_raw[i];
                gx_prev[i] += g * ((x[i] - s) / gamma).exp();
                for &j in &self.atom_in[i] {
                    let w = weights[self.conj_rule[j]];
                    let p = ((w * c_new[j] - s) / gamma).exp();
                    gc[j] += g * p * w;
                    gw[self.conj_rule[j]] += g * p * c_new[j];
                }
            }

            // conj update: c^(t+1)_j = clamp(softor(c^t_j, prod_k x^t_k))
            let mut gc_prev = vec![0.0; nc];
            for j in 0..nc {
                let g = gc[j];
                if g == 0.0 || c_raw[j] > 1.0 {
                    continue;
                }
                let s = c_raw[j];
                let body = &self.conj_body[j];
                let prod: f64 = body.iter().map(|&k| x[k]).product();
                gc_prev[j] += g * ((c_prev[j] - s) / gamma).exp();
                let gp = g * ((prod - s) / gamma).exp();
                for (a, &k) in body.iter().enumerate() {
                    let others: f64 = body
                        .iter()
                        .enumerate()
                        .filter(|(b, _)| *b != a)
                        .map(|(_, &m)| x[m])
                        .product();
                    gx_prev[k] += gp * others;
                }
            }
            gx = gx_prev;
            gc = gc_prev;
        }
        (gw, gx)
    }
}

/// Differentiable forward chaining; returns `x^(T)`.
pub fn forward_reason(
    graph: &ReasoningGraph,
    x0: &AtomValues,
    weights: &[f64],
    steps: usize,
    gamma: f64,
) -> Result<AtomValues, ReasonError> {
    let tape = graph.forward(&x0.values, weights, steps, gamma)?;
    Ok(AtomValues {
        values: tape.output().to_vec(),
        step: x0.step + steps,
    })
}

/// Evaluates many input columns against one graph; columns are independent.
pub fn forward_reason_batch(
    graph: &ReasoningGraph,
    x0s: &[AtomValues],
    weights: &[f64],
    steps: usize,
    gamma: f64,
) -> Result<Vec<AtomValues>, ReasonError> {
    x0s.iter()
        .map(|x0| forward_reason(graph, x0, weights, steps, gamma))
        .collect()
}

/// Full Jacobians of the outputs `x^(T)`.
#[derive(Debug, Clone)]
pub struct ReasonJacobians {
    /// `d_weights[i][r] = d x^(T)_i / d w_r`
    pub d_weights: Vec<Vec<f64>>,
    /// `d_inputs[i][k] = d x^(T)_i / d x^(0)_k`
    pub d_inputs: Vec<Vec<f64>>,
}

pub fn reason_gradients(
    graph: &ReasoningGraph,
    x0: &AtomValues,
    weights: &[f64],
    steps: usize,
    gamma: f64,
) -> Result<ReasonJacobians, ReasonError> {
    let tape = graph.forward(&x0.values, weights, steps, gamma)?;
    let n = graph.num_atom_nodes();
    let mut d_weights = Vec::with_capacity(n);
    let mut d_inputs = Vec::with_capacity(n);
    let mut onehot = vec![0.0; n];
    for i in 0..n {
        onehot[i] = 1.0;
        let (gw, gx) = graph.backward(&tape, weights, &onehot);
        onehot[i] = 0.0;
        d_weights.push(gw);
        d_inputs.push(gx);
    }
    Ok(ReasonJacobians { d_weights, d_inputs })
}
