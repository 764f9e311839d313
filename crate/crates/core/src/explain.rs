//! Dual explanations for a blended policy decision.
//!
//! The logic side is explained with exact gradients through the reasoner and
//! the valuation functions; the neural side with integrated gradients over
//! the raw occupancy grid. The two maps are kept separate and each is
//! annotated with the share of the decision it carries (`beta` for neural,
//! `1 - beta` for logic).

use std::fmt::Write as _;
use std::path::Path;

use crate::envs::Observation;
use crate::lang::PredicateKind;
use crate::math::{argmax, softmax};
use crate::policy::{BlendPolicy, LogicPolicy, PolicyError};
use crate::valuation::{ObjectState, NUM_PROPS};

pub const DEFAULT_TOP_K: usize = 3;
pub const DEFAULT_IG_STEPS: usize = 64;

const PROP_NAMES: [&str; NUM_PROPS] = ["objectness", "x", "y", "orientation", "value"];

#[derive(Debug, thiserror::Error)]
pub enum ExplainError {
    #[error("action index {index} out of range for {num_actions} actions")]
    Action { index: usize, num_actions: usize },
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error("writing report: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, ExplainError>;

fn check_action(action: usize, n: usize) -> Result<()> {
    if action >= n {
        return Err(ExplainError::Action {
            index: action,
            num_actions: n,
        });
    }
    Ok(())
}

/// Gradient-based attribution of one logic action.
#[derive(Debug, Clone, PartialEq)]
pub struct LogicAttribution {
    pub action: usize,
    /// `pi_logic(action | z)`.
    pub prob: f64,
    /// `d v_action / d x0` for every ground atom; only state atoms feeding a
    /// rule for `action` are nonzero.
    pub atoms: Vec<f64>,
    /// `d pi_logic(action | z) / d z`, shaped like `z`.
    pub properties: Vec<[f64; NUM_PROPS]>,
}

pub fn logic_attribution(logic: &LogicPolicy, z: &ObjectState, action: usize) -> Result<LogicAttribution> {
    let n = logic.num_actions();
    check_action(action, n)?;
    let program = &logic.program;
    let inf = program.infer(z, true)?;
    let out = inf.output();
    let values = logic.action_values(out);
    let p = softmax(&values);

    let mut onehot = vec![0.0; n];
    onehot[action] = 1.0;
    let g_out = logic.action_values_backward(out, &onehot);
    let (_, mut atoms) = program.backward(&inf, &g_out);
    let gp = program.ground();
    for (i, g) in atoms.iter_mut().enumerate() {
        if gp.atom_kind(i) != PredicateKind::State {
            *g = 0.0;
        }
    }

    // d p_a / d v_b = p_a (delta_ab - p_b)
    let dv: Vec<f64> = (0..n)
        .map(|b| p[action] * (if b == action { 1.0 } else { 0.0 } - p[b]))
        .collect();
    let g_out = logic.action_values_backward(out, &dv);
    let (_, gx0) = program.backward(&inf, &g_out);
    let jac = inf.jacobian.as_ref().expect("requested with jacobian");
    Ok(LogicAttribution {
        action,
        prob: p[action],
        atoms,
        properties: jac.vjp(&gx0),
    })
}

/// Integrated gradients of a scalar function `f` along the straight path
/// from `baseline` to `x`, midpoint rule with `steps` points.
/// `grad(p)` returns `df/dp`.
pub fn integrated_gradients_with<F>(x: &[f64], baseline: &[f64], steps: usize, mut grad: F) -> Vec<f64>
where
    F: FnMut(&[f64]) -> Vec<f64>,
{
    assert_eq!(x.len(), baseline.len());
    let steps = steps.max(1);
    let diff: Vec<f64> = x.iter().zip(baseline).map(|(a, b)| a - b).collect();
    let mut acc = vec![0.0; x.len()];
    if diff.iter().all(|&d| d == 0.0) {
        return acc;
    }
    let mut point = vec![0.0; x.len()];
    for k in 0..steps {
        let alpha = (k as f64 + 0.5) / steps as f64;
        for ((p, b), d) in point.iter_mut().zip(baseline).zip(&diff) {
            *p = b + alpha * d;
        }
        for (a, g) in acc.iter_mut().zip(grad(&point)) {
            *a += g;
        }
    }
    acc.iter().zip(&diff).map(|(a, d)| a / steps as f64 * d).collect()
}

/// `pi_neural(action | x)` and its gradient with respect to `x`.
pub fn neural_prob_grad(policy: &BlendPolicy, x: &[f64], action: usize) -> (f64, Vec<f64>) {
    let trunk = policy.trunk.forward(x);
    let actor = policy.actor.forward(trunk.output());
    let p = softmax(actor.output());
    let g_logits: Vec<f64> = (0..p.len())
        .map(|b| p[action] * (if b == action { 1.0 } else { 0.0 } - p[b]))
        .collect();
    let mut scratch = vec![0.0; policy.actor.params.len()];
    let g_h = policy
        .actor
        .backward(&actor, &g_logits, &mut scratch, true)
        .expect("input gradient");
    let mut scratch = vec![0.0; policy.trunk.params.len()];
    let g_x = policy
        .trunk
        .backward(&trunk, &g_h, &mut scratch, true)
        .expect("input gradient");
    (p[action], g_x)
}

/// Integrated gradients of `pi_neural(action | x)` from the all-zero grid.
pub fn integrated_gradients(policy: &BlendPolicy, x: &[f64], action: usize, steps: usize) -> Result<Vec<f64>> {
    check_action(action, policy.num_actions())?;
    if x.len() != policy.raw_len() {
        return Err(PolicyError::Shape {
            what: "raw observation",
            expected: policy.raw_len(),
            found: x.len(),
        }
        .into());
    }
    let baseline = vec![0.0; x.len()];
    Ok(integrated_gradients_with(x, &baseline, steps, |p| {
        neural_prob_grad(policy, p, action).1
    }))
}

#[derive(Debug, Clone, PartialEq)]
pub struct FiredRule {
    pub ground_rule: usize,
    pub head: String,
    /// Ground rule in rule syntax, prefixed by its learned weight.
    pub text: String,
    /// Conjunction value times rule weight.
    pub score: f64,
}

/// Ground rules ranked by firing score, highest first, ties by index.
pub fn fired_rules(logic: &LogicPolicy, z: &ObjectState, k: usize) -> Result<Vec<FiredRule>> {
    let program = &logic.program;
    let inf = program.infer(z, false)?;
    let w = program.weights();
    let gp = program.ground();
    let mut fired: Vec<FiredRule> = inf
        .tape
        .conj_output()
        .iter()
        .enumerate()
        .map(|(j, &c)| {
            let r = &gp.ground_rules()[j];
            let weight = w[r.rule];
            FiredRule {
                ground_rule: j,
                head: gp.language().predicate(gp.atoms()[r.head].predicate).name.clone(),
                text: format!("{weight:.2} {}.", gp.ground_rule_text(j)),
                score: c * weight,
            }
        })
        .collect();
    fired.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.ground_rule.cmp(&b.ground_rule)));
    fired.truncate(k);
    Ok(fired)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Explanation {
    pub action: usize,
    pub action_names: Vec<String>,
    pub beta: f64,
    pub dist: Vec<f64>,
    pub logic_dist: Vec<f64>,
    pub neural_dist: Vec<f64>,
    pub fired: Vec<FiredRule>,
    pub logic: LogicAttribution,
    pub atom_names: Vec<String>,
    pub slots: Vec<String>,
    /// Integrated gradients, laid out like the raw observation.
    pub neural: Vec<f64>,
    pub grid: (usize, usize, usize, usize),
    pub report: String,
}

pub fn action_names(logic: &LogicPolicy) -> Vec<String> {
    let lang = logic.program.ground().language();
    lang.predicates_of_kind(PredicateKind::Action)
        .into_iter()
        .map(|p| lang.predicate(p).name.clone())
        .collect()
}

/// Explains the greedy action of `policy` on `obs`.
pub fn explain_state(policy: &BlendPolicy, obs: &Observation, k: usize, ig_steps: usize) -> Result<Explanation> {
    let out = policy.step(obs)?;
    let action = argmax(&out.dist);
    let logic = logic_attribution(&policy.logic, &obs.objects, action)?;
    let neural = integrated_gradients(policy, &obs.raw.data, action, ig_steps)?;
    let fired = fired_rules(&policy.logic, &obs.objects, k)?;
    let gp = policy.logic.program.ground();
    let mut e = Explanation {
        action,
        action_names: action_names(&policy.logic),
        beta: out.beta,
        dist: out.dist,
        logic_dist: out.logic_dist,
        neural_dist: out.neural_dist,
        fired,
        logic,
        atom_names: (0..gp.atoms().len()).map(|i| gp.atom_name(i)).collect(),
        slots: obs.objects.slots.clone(),
        neural,
        grid: (obs.raw.frames, obs.raw.width, obs.raw.height, obs.raw.channels),
        report: String::new(),
    };
    e.report = render_report(&e, k);
    Ok(e)
}

fn logic_section(e: &Explanation, s: &mut String) {
    let _ = writeln!(s, "[logic] weight {:.3}", 1.0 - e.beta);
    let _ = writeln!(s, "  pi_logic({}) = {:.4}", e.action_names[e.action], e.logic.prob);
    let _ = writeln!(s, "  fired rules:");
    for r in &e.fired {
        let _ = writeln!(s, "    {:.4}  {}", r.score, r.text);
    }
    let mut atoms: Vec<(usize, f64)> = e
        .logic
        .atoms
        .iter()
        .enumerate()
        .filter(|(_, g)| **g != 0.0)
        .map(|(i, &g)| (i, g))
        .collect();
    atoms.sort_by(|a, b| b.1.abs().total_cmp(&a.1.abs()).then(a.0.cmp(&b.0)));
    let _ = writeln!(s, "  atom attribution:");
    for (i, g) in atoms {
        let _ = writeln!(s, "    {:+.4}  {}", g, e.atom_names[i]);
    }
}

fn neural_section(e: &Explanation, k: usize, s: &mut String) {
    let _ = writeln!(s, "[neural] weight {:.3}", e.beta);
    let _ = writeln!(s, "  pi_neural({}) = {:.4}", e.action_names[e.action], e.neural_dist[e.action]);
    let total: f64 = e.neural.iter().sum();
    let _ = writeln!(s, "  attribution sum {total:+.4}");
    let (_, w, h, c) = e.grid;
    let mut cells: Vec<(usize, f64)> = e.neural.iter().enumerate().filter(|(_, v)| **v != 0.0).map(|(i, &v)| (i, v)).collect();
    cells.sort_by(|a, b| b.1.abs().total_cmp(&a.1.abs()).then(a.0.cmp(&b.0)));
    for (i, v) in cells.into_iter().take(k) {
        let ch = i % c;
        let cell = i / c;
        let (f, rest) = (cell / (w * h), cell % (w * h));
        let _ = writeln!(s, "    {v:+.4}  frame {f} x {} y {} channel {ch}", rest / h, rest % h);
    }
}

fn render_report(e: &Explanation, k: usize) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "action {} (p = {:.4})", e.action_names[e.action], e.dist[e.action]);
    let _ = writeln!(s, "beta {:.4}", e.beta);
    let fmt = |d: &[f64]| d.iter().map(|p| format!("{p:.3}")).collect::<Vec<_>>().join(" ");
    let _ = writeln!(s, "actions {}", e.action_names.join(" "));
    let _ = writeln!(s, "blended {}", fmt(&e.dist));
    let _ = writeln!(s, "logic   {}", fmt(&e.logic_dist));
    let _ = writeln!(s, "neural  {}", fmt(&e.neural_dist));
    if e.beta < 0.5 {
        logic_section(e, &mut s);
        neural_section(e, k, &mut s);
    } else {
        neural_section(e, k, &mut s);
        logic_section(e, &mut s);
    }
    s
}

impl Explanation {
    /// Property saliency as CSV, one row per object slot.
    pub fn logic_csv(&self) -> String {
        let mut s = format!("slot,{}\n", PROP_NAMES.join(","));
        for (slot, row) in self.slots.iter().zip(&self.logic.properties) {
            let vals: Vec<String> = row.iter().map(|v| format!("{v:e}")).collect();
            let _ = writeln!(s, "{slot},{}", vals.join(","));
        }
        s
    }

    /// Neural attribution summed over stacked frames, one W x H block per
    /// channel (rows are y, columns are x).
    pub fn neural_csv(&self) -> String {
        let (frames, w, h, c) = self.grid;
        let mut s = String::new();
        for ch in 0..c {
            let _ = writeln!(s, "# channel {ch}");
            for y in 0..h {
                let row: Vec<String> = (0..w)
                    .map(|x| {
                        let v: f64 = (0..frames).map(|f| self.neural[((f * w + x) * h + y) * c + ch]).sum();
                        format!("{v:e}")
                    })
                    .collect();
                let _ = writeln!(s, "{}", row.join(","));
            }
        }
        s
    }

    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("report.txt"), &self.report)?;
        std::fs::write(dir.join("logic_attrib.csv"), self.logic_csv())?;
        std::fs::write(dir.join("neural_attrib.csv"), self.neural_csv())?;
        Ok(())
    }
}
