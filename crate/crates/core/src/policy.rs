//! Logic, neural and blended policies with a hybrid critic.
//!
//! A [`BlendPolicy`] owns every trainable tensor: rule-weight logits of the
//! action and blending programs, the actor trunk with its policy and value
//! heads, the object-centric critic and (optionally) a neural blender. The
//! forward pass returns a [`BlendedPolicyOutput`] and a cache which
//! [`BlendPolicy::backward`] turns into gradients for all tensors.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assets::Bundle;
use crate::envs::{EnvSpec, Observation, RawState};
use crate::lang::{PredicateKind, RuleSet};
use crate::math::{argmax, sigmoid, softmax, softmax_backward, weight_to_logit};
use crate::nn::{Mlp, MlpCache};
use crate::reason::{
    build_graph, default_steps, ground_program, AtomValues, GroundError, GroundProgram, ReasonError, ReasonTape,
    ReasoningGraph, DEFAULT_GAMMA,
};
use crate::valuation::{ObjectState, StateEncoder, StateJacobian, ValuationError, ValuationRegistry, NUM_PROPS};

pub const TRUNK_WIDTH: usize = 512;
pub const OC_CRITIC_HIDDEN: [usize; 2] = [120, 60];
pub const BLENDER_HIDDEN: usize = 64;

/// Per-column scale applied to object properties before the critic.
const OC_FEATURE_SCALE: [f64; NUM_PROPS] = [1.0, 1.0 / 16.0, 1.0 / 16.0, 1.0, 1.0 / 16.0];

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("policy configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Ground(#[from] GroundError),
    #[error(transparent)]
    Valuation(#[from] ValuationError),
    #[error(transparent)]
    Reason(#[from] ReasonError),
    #[error("{what}: expected size {expected}, found {found}")]
    Shape {
        what: &'static str,
        expected: usize,
        found: usize,
    },
}

pub type Result<T> = std::result::Result<T, PolicyError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BlenderMode {
    Logic,
    Neural,
    Rigid,
}

impl std::str::FromStr for BlenderMode {
    type Err = PolicyError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "logic" => Ok(Self::Logic),
            "neural" => Ok(Self::Neural),
            "rigid" | "rigid-logic" => Ok(Self::Rigid),
            other => Err(PolicyError::Config(format!("unknown blender mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamGroup {
    Neural,
    Logic,
    Blender,
}

impl std::str::FromStr for ParamGroup {
    type Err = PolicyError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "neural" => Ok(Self::Neural),
            "logic" => Ok(Self::Logic),
            "blender" => Ok(Self::Blender),
            other => Err(PolicyError::Config(format!("unknown parameter group `{other}`"))),
        }
    }
}

/// A rule set compiled for one object slot layout. Rule weights are held as
/// logits so that gradient steps keep them inside (0, 1).
#[derive(Debug, Clone)]
pub struct RuleProgram {
    rules: RuleSet,
    ground: GroundProgram,
    graph: ReasoningGraph,
    encoder: StateEncoder,
    pub steps: usize,
    pub gamma: f64,
    pub logits: Vec<f64>,
}

/// Result of running a [`RuleProgram`] on one state.
#[derive(Debug, Clone)]
pub struct Inference {
    pub tape: ReasonTape,
    pub jacobian: Option<StateJacobian>,
}

impl Inference {
    pub fn output(&self) -> &[f64] {
        self.tape.output()
    }

    pub fn input(&self) -> &[f64] {
        &self.tape.atoms[0]
    }
}

impl RuleProgram {
    pub fn new(rules: RuleSet, reg: &ValuationRegistry, slots: &[String]) -> Result<Self> {
        let ground = ground_program(&rules)?;
        let graph = build_graph(&ground);
        let encoder = StateEncoder::new(&ground, reg, slots)?;
        let steps = default_steps(&rules);
        let logits = rules.weights().iter().map(|&w| weight_to_logit(w)).collect();
        Ok(Self {
            rules,
            ground,
            graph,
            encoder,
            steps,
            gamma: DEFAULT_GAMMA,
            logits,
        })
    }

    pub fn weights(&self) -> Vec<f64> {
        self.logits.iter().map(|&l| sigmoid(l)).collect()
    }

    /// The rule set with its weights replaced by the current learned ones.
    pub fn rules(&self) -> RuleSet {
        self.rules.with_weights(&self.weights())
    }

    pub fn ground(&self) -> &GroundProgram {
        &self.ground
    }

    pub fn graph(&self) -> &ReasoningGraph {
        &self.graph
    }

    pub fn encoder(&self) -> &StateEncoder {
        &self.encoder
    }

    pub fn infer(&self, z: &ObjectState, with_state_jacobian: bool) -> Result<Inference> {
        let (x0, jacobian) = if with_state_jacobian {
            let (x, j) = self.encoder.encode_with_jacobian(z);
            (x, Some(j))
        } else {
            (self.encoder.encode(z), None)
        };
        let tape = self.graph.forward(&x0, &self.weights(), self.steps, self.gamma)?;
        Ok(Inference { tape, jacobian })
    }

    /// Maps `dL/dx^(T)` to `(dL/dlogits, dL/dx^(0))`.
    pub fn backward(&self, inf: &Inference, grad_out: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let w = self.weights();
        let (gw, gx) = self.graph.backward(&inf.tape, &w, grad_out);
        let gl = gw.iter().zip(&w).map(|(g, w)| g * w * (1.0 - w)).collect();
        (gl, gx)
    }
}

/// Smooth disjunction used to merge several groundings of one action.
fn merge(values: &[f64], gamma: f64) -> (f64, Vec<f64>) {
    if values.len() == 1 {
        return (values[0], vec![1.0]);
    }
    let m = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = values.iter().map(|v| ((v - m) / gamma).exp()).sum();
    let s = m + gamma * sum.ln();
    (s, values.iter().map(|v| ((v - s) / gamma).exp()).collect())
}

/// Action distribution from the action rules: softmax over per-action values.
#[derive(Debug, Clone)]
pub struct LogicPolicy {
    pub program: RuleProgram,
    action_atoms: Vec<Vec<usize>>,
}

impl LogicPolicy {
    /// `actions` is the environment's action set; the language must declare
    /// exactly these action predicates in the same order.
    pub fn new(program: RuleProgram, actions: &[&str]) -> Result<Self> {
        let lang = program.ground.language().clone();
        let preds = lang.predicates_of_kind(PredicateKind::Action);
        let names: Vec<&str> = preds.iter().map(|&p| lang.predicate(p).name.as_str()).collect();
        if names != actions {
            return Err(PolicyError::Config(format!(
                "action predicates {names:?} do not match environment actions {actions:?}"
            )));
        }
        let mut action_atoms = Vec::with_capacity(preds.len());
        for &p in &preds {
            let atoms = program.ground.atoms_of(p);
            if atoms.is_empty() {
                return Err(PolicyError::Config(format!(
                    "action `{}` has no ground atoms",
                    lang.predicate(p).name
                )));
            }
            action_atoms.push(atoms);
        }
        Ok(Self { program, action_atoms })
    }

    pub fn num_actions(&self) -> usize {
        self.action_atoms.len()
    }

    pub fn action_atoms(&self, a: usize) -> &[usize] {
        &self.action_atoms[a]
    }

    /// Per-action values from final atom values.
    pub fn action_values(&self, atoms: &[f64]) -> Vec<f64> {
        self.action_atoms
            .iter()
            .map(|ids| {
                let vals: Vec<f64> = ids.iter().map(|&i| atoms[i]).collect();
                merge(&vals, self.program.gamma).0
            })
            .collect()
    }

    /// Pulls a gradient on action values back onto atom values.
    pub fn action_values_backward(&self, atoms: &[f64], grad_values: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; atoms.len()];
        for (ids, gv) in self.action_atoms.iter().zip(grad_values) {
            let vals: Vec<f64> = ids.iter().map(|&i| atoms[i]).collect();
            let (_, d) = merge(&vals, self.program.gamma);
            for (&i, di) in ids.iter().zip(d) {
                g[i] += gv * di;
            }
        }
        g
    }

    pub fn distribution(&self, z: &ObjectState) -> Result<Vec<f64>> {
        let inf = self.program.infer(z, false)?;
        Ok(softmax(&self.action_values(inf.output())))
    }
}

/// State-dependent mixing weight for the neural policy.
#[derive(Debug, Clone)]
pub enum Blender {
    /// Blending rules deduce `neural(img)` and `logic(img)`;
    /// `beta = softmax([v_neural, v_logic])[0]`.
    Rules {
        program: RuleProgram,
        neural_atom: usize,
        logic_atom: usize,
    },
    /// `beta = sigmoid(mlp(x))` on the raw observation.
    Net(Mlp),
}

impl Blender {
    pub fn from_rules(program: RuleProgram) -> Result<Self> {
        let lang = program.ground.language().clone();
        let find = |name: &str| -> Result<usize> {
            let p = lang
                .predicate_id(name)
                .filter(|&p| lang.predicate(p).kind == PredicateKind::Blend)
                .ok_or_else(|| PolicyError::Config(format!("blending rules need a `{name}/1` predicate")))?;
            let atoms = program.ground.atoms_of(p);
            match atoms.as_slice() {
                [a] => Ok(*a),
                _ => Err(PolicyError::Config(format!(
                    "`{name}` must have exactly one ground atom, found {}",
                    atoms.len()
                ))),
            }
        };
        let neural_atom = find("neural")?;
        let logic_atom = find("logic")?;
        Ok(Self::Rules {
            program,
            neural_atom,
            logic_atom,
        })
    }
}

pub fn blend_from_values(v_neural: f64, v_logic: f64) -> f64 {
    sigmoid(v_neural - v_logic)
}

/// Everything the blended forward pass produces for one state.
#[derive(Debug, Clone)]
pub struct BlendedPolicyOutput {
    pub dist: Vec<f64>,
    pub beta: f64,
    pub value: f64,
    pub logic_dist: Vec<f64>,
    pub neural_dist: Vec<f64>,
    pub action_values: Vec<f64>,
    /// Final atom values of the action program.
    pub atom_values: AtomValues,
    pub value_raw: f64,
    pub value_oc: f64,
}

/// Intermediate values needed by [`BlendPolicy::backward`].
#[derive(Debug, Clone)]
pub struct BlendCache {
    trunk: MlpCache,
    actor: MlpCache,
    critic: MlpCache,
    oc: MlpCache,
    logic: Inference,
    blend: Option<BlendForward>,
}

#[derive(Debug, Clone)]
enum BlendForward {
    Rules(Inference),
    Net(MlpCache),
}

/// Upstream gradients of a scalar loss with respect to one output.
#[derive(Debug, Clone, Default)]
pub struct OutputGrads {
    pub dist: Vec<f64>,
    pub beta: f64,
    pub value: f64,
}

/// Gradient buffers with the same layout as the policy's tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyGrads {
    pub tensors: Vec<Vec<f64>>,
}

impl PolicyGrads {
    pub fn slices(&self) -> Vec<&[f64]> {
        self.tensors.iter().map(Vec::as_slice).collect()
    }

    pub fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        self.tensors.iter_mut().map(Vec::as_mut_slice).collect()
    }

    pub fn scale(&mut self, s: f64) {
        self.tensors.iter_mut().flatten().for_each(|g| *g *= s);
    }

    pub fn flat(&self) -> Vec<f64> {
        self.tensors.iter().flatten().copied().collect()
    }
}

pub fn oc_features(z: &ObjectState) -> Vec<f64> {
    z.rows
        .iter()
        .flat_map(|r| r.iter().zip(OC_FEATURE_SCALE).map(|(v, s)| v * s))
        .collect()
}

#[derive(Debug, Clone)]
pub struct BlendPolicy {
    pub logic: LogicPolicy,
    pub blender: Blender,
    pub mode: BlenderMode,
    /// Bypasses the blender with a constant weight (ablations).
    pub force_beta: Option<f64>,
    pub trunk: Mlp,
    pub actor: Mlp,
    pub critic: Mlp,
    pub oc_critic: Mlp,
}

/// Names of the tensors in [`BlendPolicy::tensors`] order.
pub const TENSOR_NAMES: [&str; 6] = ["trunk", "actor", "critic", "oc_critic", "action_logits", "blend"];

impl BlendPolicy {
    /// Builds a policy with freshly initialised networks.
    ///
    /// `blend_rules` is required for the logic and rigid blenders.
    pub fn new<R: Rng>(
        logic: LogicPolicy,
        blend_rules: Option<RuleProgram>,
        mode: BlenderMode,
        raw_len: usize,
        num_objects: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let a = logic.num_actions();
        let trunk = Mlp::new(&[raw_len, TRUNK_WIDTH], true, 1.0, rng);
        let actor = Mlp::new(&[TRUNK_WIDTH, a], false, 0.01, rng);
        let critic = Mlp::new(&[TRUNK_WIDTH, 1], false, 1.0, rng);
        let oc_in = num_objects * NUM_PROPS;
        let oc_critic = Mlp::new(&[oc_in, OC_CRITIC_HIDDEN[0], OC_CRITIC_HIDDEN[1], 1], false, 1.0, rng);
        let blender = match mode {
            BlenderMode::Logic | BlenderMode::Rigid => {
                let program = blend_rules.ok_or_else(|| {
                    PolicyError::Config(format!("{mode:?} blender requires blending rules").to_lowercase())
                })?;
                Blender::from_rules(program)?
            }
            BlenderMode::Neural => Blender::Net(Mlp::new(&[raw_len, BLENDER_HIDDEN, 1], false, 0.01, rng)),
        };
        Ok(Self {
            logic,
            blender,
            mode,
            force_beta: None,
            trunk,
            actor,
            critic,
            oc_critic,
        })
    }

    pub fn num_actions(&self) -> usize {
        self.logic.num_actions()
    }

    pub fn raw_len(&self) -> usize {
        self.trunk.input_size()
    }

    fn check_inputs(&self, x: &RawState, z: &ObjectState) -> Result<()> {
        if x.data.len() != self.raw_len() {
            return Err(PolicyError::Shape {
                what: "raw observation",
                expected: self.raw_len(),
                found: x.data.len(),
            });
        }
        let oc_in = self.oc_critic.input_size();
        if z.num_objects() * NUM_PROPS != oc_in {
            return Err(PolicyError::Shape {
                what: "object state",
                expected: oc_in / NUM_PROPS,
                found: z.num_objects(),
            });
        }
        Ok(())
    }

    pub fn neural_distribution(&self, x: &RawState) -> Result<Vec<f64>> {
        if x.data.len() != self.raw_len() {
            return Err(PolicyError::Shape {
                what: "raw observation",
                expected: self.raw_len(),
                found: x.data.len(),
            });
        }
        let h = self.trunk.predict(&x.data);
        Ok(softmax(&self.actor.predict(&h)))
    }

    /// Blend weight from the configured blender, ignoring `force_beta`.
    pub fn blend_weight(&self, z: &ObjectState, x: &RawState) -> Result<f64> {
        Ok(self.blend_forward(z, x)?.0)
    }

    fn blend_forward(&self, z: &ObjectState, x: &RawState) -> Result<(f64, BlendForward)> {
        match &self.blender {
            Blender::Rules {
                program,
                neural_atom,
                logic_atom,
            } => {
                let inf = program.infer(z, false)?;
                let out = inf.output();
                let soft = blend_from_values(out[*neural_atom], out[*logic_atom]);
                let beta = if self.mode == BlenderMode::Rigid {
                    if soft > 0.5 {
                        1.0
                    } else {
                        0.0
                    }
                } else {
                    soft
                };
                Ok((beta, BlendForward::Rules(inf)))
            }
            Blender::Net(net) => {
                let cache = net.forward(&x.data);
                Ok((sigmoid(cache.output()[0]), BlendForward::Net(cache)))
            }
        }
    }

    pub fn forward(&self, obs: &Observation) -> Result<(BlendedPolicyOutput, BlendCache)> {
        let (x, z) = (&obs.raw, &obs.objects);
        self.check_inputs(x, z)?;
        let trunk = self.trunk.forward(&x.data);
        let actor = self.actor.forward(trunk.output());
        let critic = self.critic.forward(trunk.output());
        let oc = self.oc_critic.forward(&oc_features(z));
        let logic = self.logic.program.infer(z, false)?;
        let action_values = self.logic.action_values(logic.output());
        let logic_dist = softmax(&action_values);
        let neural_dist = softmax(actor.output());
        let (beta, blend) = match self.force_beta {
            Some(b) => (b, None),
            None => {
                let (b, f) = self.blend_forward(z, x)?;
                (b, Some(f))
            }
        };
        let dist = neural_dist
            .iter()
            .zip(&logic_dist)
            .map(|(n, l)| beta * n + (1.0 - beta) * l)
            .collect();
        let value_raw = critic.output()[0];
        let value_oc = oc.output()[0];
        let out = BlendedPolicyOutput {
            dist,
            beta,
            value: beta * value_raw + (1.0 - beta) * value_oc,
            logic_dist,
            neural_dist,
            action_values,
            atom_values: AtomValues {
                values: logic.output().to_vec(),
                step: self.logic.program.steps,
            },
            value_raw,
            value_oc,
        };
        let cache = BlendCache {
            trunk,
            actor,
            critic,
            oc,
            logic,
            blend,
        };
        Ok((out, cache))
    }

    pub fn step(&self, obs: &Observation) -> Result<BlendedPolicyOutput> {
        Ok(self.forward(obs)?.0)
    }

    /// Trainable tensors in a fixed order (see [`TENSOR_NAMES`]).
    pub fn tensors(&self) -> Vec<&[f64]> {
        vec![
            &self.trunk.params,
            &self.actor.params,
            &self.critic.params,
            &self.oc_critic.params,
            &self.logic.program.logits,
            self.blend_params(),
        ]
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let blend: &mut [f64] = match &mut self.blender {
            Blender::Rules { program, .. } => &mut program.logits,
            Blender::Net(net) => &mut net.params,
        };
        vec![
            &mut self.trunk.params,
            &mut self.actor.params,
            &mut self.critic.params,
            &mut self.oc_critic.params,
            &mut self.logic.program.logits,
            blend,
        ]
    }

    fn blend_params(&self) -> &[f64] {
        match &self.blender {
            Blender::Rules { program, .. } => &program.logits,
            Blender::Net(net) => &net.params,
        }
    }

    /// Group each tensor belongs to. The object-centric critic trains with
    /// the logic group since it only serves the logic side of the value.
    pub fn tensor_groups() -> [ParamGroup; 6] {
        use ParamGroup::*;
        [Neural, Neural, Neural, Logic, Logic, Blender]
    }

    pub fn zero_grads(&self) -> PolicyGrads {
        PolicyGrads {
            tensors: self.tensors().iter().map(|t| vec![0.0; t.len()]).collect(),
        }
    }

    /// Accumulates parameter gradients for upstream gradients `g`.
    pub fn backward(
        &self,
        out: &BlendedPolicyOutput,
        cache: &BlendCache,
        g: &OutputGrads,
        grads: &mut PolicyGrads,
    ) {
        let beta = out.beta;
        let g_neural: Vec<f64> = g.dist.iter().map(|d| beta * d).collect();
        let g_logic: Vec<f64> = g.dist.iter().map(|d| (1.0 - beta) * d).collect();
        let mut g_beta = g.beta;
        g_beta += g
            .dist
            .iter()
            .zip(out.neural_dist.iter().zip(&out.logic_dist))
            .map(|(d, (n, l))| d * (n - l))
            .sum::<f64>();
        g_beta += g.value * (out.value_raw - out.value_oc);

        let [t_trunk, t_actor, t_critic, t_oc, t_logic, t_blend] = grads_split(grads);

        // neural path
        let g_logits = softmax_backward(&out.neural_dist, &g_neural);
        let mut g_h = self
            .actor
            .backward(&cache.actor, &g_logits, t_actor, true)
            .expect("input gradient requested");
        let g_h2 = self
            .critic
            .backward(&cache.critic, &[beta * g.value], t_critic, true)
            .expect("input gradient requested");
        for (a, b) in g_h.iter_mut().zip(g_h2) {
            *a += b;
        }
        self.trunk.backward(&cache.trunk, &g_h, t_trunk, false);

        // logic path
        self.oc_critic
            .backward(&cache.oc, &[(1.0 - beta) * g.value], t_oc, false);
        let g_values = softmax_backward(&out.logic_dist, &g_logic);
        let atoms = cache.logic.output();
        let g_atoms = self.logic.action_values_backward(atoms, &g_values);
        let (gl, _) = self.logic.program.backward(&cache.logic, &g_atoms);
        for (a, b) in t_logic.iter_mut().zip(gl) {
            *a += b;
        }

        // blender
        if self.force_beta.is_some() || self.mode == BlenderMode::Rigid {
            return;
        }
        let g_pre = g_beta * beta * (1.0 - beta);
        match (&self.blender, &cache.blend) {
            (
                Blender::Rules {
                    program,
                    neural_atom,
                    logic_atom,
                },
                Some(BlendForward::Rules(inf)),
            ) => {
                let mut g_out = vec![0.0; inf.output().len()];
                g_out[*neural_atom] += g_pre;
                g_out[*logic_atom] -= g_pre;
                let (gl, _) = program.backward(inf, &g_out);
                for (a, b) in t_blend.iter_mut().zip(gl) {
                    *a += b;
                }
            }
            (Blender::Net(net), Some(BlendForward::Net(c))) => {
                net.backward(c, &[g_pre], t_blend, false);
            }
            _ => unreachable!("blend cache matches blender"),
        }
    }
}

/// Policy for `spec` from parsed assets, with networks seeded by `seed`.
pub fn build_policy(bundle: &Bundle, spec: &EnvSpec, mode: BlenderMode, seed: u64) -> Result<BlendPolicy> {
    let slots = spec.name.slots();
    let action = RuleProgram::new(bundle.action_rules.clone(), &bundle.valuations, &slots)?;
    let logic = LogicPolicy::new(action, spec.name.action_names())?;
    let blend = match mode {
        BlenderMode::Neural => None,
        _ => Some(RuleProgram::new(bundle.blend_rules.clone(), &bundle.valuations, &slots)?),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    BlendPolicy::new(logic, blend, mode, spec.raw_len(), slots.len(), &mut rng)
}

fn grads_split(grads: &mut PolicyGrads) -> [&mut [f64]; 6] {
    let v: Vec<&mut [f64]> = grads.slices_mut();
    v.try_into().unwrap_or_else(|_| panic!("policy has 6 tensors"))
}

/// Samples an action index and returns it with its log-probability.
pub fn sample_action<R: Rng>(dist: &[f64], rng: &mut R) -> (usize, f64) {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut pick = None;
    for (i, &p) in dist.iter().enumerate() {
        acc += p;
        if u < acc && p > 0.0 {
            pick = Some(i);
            break;
        }
    }
    // rounding can leave u >= acc; fall back to the last positive entry
    let a = pick.unwrap_or_else(|| dist.iter().rposition(|&p| p > 0.0).unwrap_or(argmax(dist)));
    (a, dist[a].ln())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assets;
    use crate::envs::{Env, EnvName, EnvSpec};
    use crate::lang::{parse_language, parse_rules};
    use std::sync::Arc;

    fn kangaroo_policy(mode: BlenderMode) -> (BlendPolicy, Env) {
        let env = Env::new(EnvSpec::new(EnvName::MiniKangaroo)).unwrap();
        let bundle = assets::bundle(EnvName::MiniKangaroo).unwrap();
        let slots = EnvName::MiniKangaroo.slots();
        let action = RuleProgram::new(bundle.action_rules.clone(), &bundle.valuations, &slots).unwrap();
        let blend = RuleProgram::new(bundle.blend_rules.clone(), &bundle.valuations, &slots).unwrap();
        let logic = LogicPolicy::new(action, EnvName::MiniKangaroo.action_names()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = BlendPolicy::new(logic, Some(blend), mode, env.spec().raw_len(), slots.len(), &mut rng).unwrap();
        (p, env)
    }

    #[test]
    fn worked_example_softmax() {
        let p = softmax(&[0.27, 0.72, 0.0]);
        for (a, b) in p.iter().zip([0.30015, 0.47073, 0.22913]) {
            assert!((a - b).abs() < 1e-3);
        }
    }

    #[test]
    fn beta_closed_forms() {
        assert!((blend_from_values(1.0, 0.0) - 0.7311).abs() < 1e-4);
        assert_eq!(blend_from_values(0.3, 0.3), 0.5);
    }

    #[test]
    fn action_set_mismatch_is_config_error() {
        let lang = Arc::new(parse_language("type image. const img:image. pred go/1 action (image).").unwrap());
        let rules = parse_rules("", lang).unwrap();
        let prog = RuleProgram::new(rules, &ValuationRegistry::new(), &[]).unwrap();
        assert!(matches!(LogicPolicy::new(prog, &["stay"]), Err(PolicyError::Config(_))));
    }

    #[test]
    fn missing_blend_atoms_is_config_error() {
        let lang = Arc::new(parse_language("type image. const img:image. pred go/1 action (image).").unwrap());
        let rules = parse_rules("", lang).unwrap();
        let prog = RuleProgram::new(rules, &ValuationRegistry::new(), &[]).unwrap();
        assert!(matches!(Blender::from_rules(prog), Err(PolicyError::Config(_))));
    }

    #[test]
    fn blended_output_invariants_and_endpoints() {
        let (mut p, mut env) = kangaroo_policy(BlenderMode::Logic);
        let obs = env.observe();
        let out = p.step(&obs).unwrap();
        for d in [&out.dist, &out.logic_dist, &out.neural_dist] {
            assert!((d.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
        for i in 0..out.dist.len() {
            let lo = out.logic_dist[i].min(out.neural_dist[i]);
            let hi = out.logic_dist[i].max(out.neural_dist[i]);
            assert!(out.dist[i] >= lo - 1e-12 && out.dist[i] <= hi + 1e-12);
        }
        p.force_beta = Some(1.0);
        let out = p.step(&obs).unwrap();
        assert_eq!(out.dist, out.neural_dist);
        assert_eq!(out.value, out.value_raw);
        p.force_beta = Some(0.0);
        let out = p.step(&obs).unwrap();
        assert_eq!(out.dist, out.logic_dist);
        assert_eq!(out.value, out.value_oc);
    }

    #[test]
    fn zero_output_layer_gives_uniform_neural_dist() {
        let (mut p, mut env) = kangaroo_policy(BlenderMode::Logic);
        p.actor.zero_output_layer();
        let d = p.neural_distribution(&env.observe().raw).unwrap();
        assert!(d.iter().all(|&x| (x - 1.0 / 6.0).abs() < 1e-12));
    }

    #[test]
    fn rigid_matches_soft_threshold() {
        let (soft, mut env) = kangaroo_policy(BlenderMode::Logic);
        let (rigid, _) = kangaroo_policy(BlenderMode::Rigid);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..300 {
            let obs = env.observe();
            let b = soft.blend_weight(&obs.objects, &obs.raw).unwrap();
            let r = rigid.blend_weight(&obs.objects, &obs.raw).unwrap();
            assert_eq!(r, if b > 0.5 { 1.0 } else { 0.0 });
            if env.step(rng.gen_range(0..6)).unwrap().done {
                env.reset();
            }
        }
    }

    #[test]
    fn logic_argmax_preserved_under_weight_scaling() {
        let (mut p, mut env) = kangaroo_policy(BlenderMode::Logic);
        let z = env.observe().objects;
        let before = argmax(&p.logic.distribution(&z).unwrap());
        let w: Vec<f64> = p.logic.program.weights().iter().map(|w| w * 0.5).collect();
        p.logic.program.logits = w.iter().map(|&w| weight_to_logit(w)).collect();
        assert_eq!(argmax(&p.logic.distribution(&z).unwrap()), before);
    }

    #[test]
    fn sampling_contracts() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(sample_action(&[1.0, 0.0, 0.0], &mut rng), (0, 0.0));
        let n = 100_000;
        let mut counts = [0usize; 4];
        for _ in 0..n {
            counts[sample_action(&[0.25; 4], &mut rng).0] += 1;
        }
        for c in counts {
            assert!((c as f64 / n as f64 - 0.25).abs() < 0.02);
        }
        let a = sample_action(&[0.2, 0.3, 0.5], &mut ChaCha8Rng::seed_from_u64(9));
        let b = sample_action(&[0.2, 0.3, 0.5], &mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(a, b);
    }

    /// log pi(a) through every path against central differences.
    fn check_log_pi_gradients(mode: BlenderMode) {
        let (p, mut env) = kangaroo_policy(mode);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..7 {
            env.step(rng.gen_range(0..6)).unwrap();
        }
        let obs = env.observe();
        let a = 2;
        let f = |p: &BlendPolicy| -> f64 {
            let out = p.step(&obs).unwrap();
            out.dist[a].ln() + 0.3 * out.value
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
                beta: 0.0,
                value: 0.3,
            },
            &mut grads,
        );
        let h = 1e-6;
        for t in 0..6 {
            let n = p.tensors()[t].len();
            let picks: Vec<usize> = if n <= 16 { (0..n).collect() } else { (0..12).map(|k| (k * 7919) % n).collect() };
            for i in picks {
                let mut pp = p.clone();
                pp.tensors_mut()[t][i] += h;
                let mut pm = p.clone();
                pm.tensors_mut()[t][i] -= h;
                let fd = (f(&pp) - f(&pm)) / (2.0 * h);
                let an = grads.tensors[t][i];
                assert!(
                    (fd - an).abs() <= 1e-3 * fd.abs().max(an.abs()) + 1e-8,
                    "{mode:?} tensor {} [{i}]: fd {fd} vs analytic {an}",
                    TENSOR_NAMES[t]
                );
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        check_log_pi_gradients(BlenderMode::Logic);
        check_log_pi_gradients(BlenderMode::Neural);
    }
}
