//! PPO training of rule weights, networks and the blender.
//!
//! One iteration collects `num_envs x num_steps` transitions with the
//! blended policy, computes GAE advantages per environment and runs
//! `update_epochs` passes of minibatch updates over the shuffled batch.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::envs::{Env, EnvError, EnvSpec, Observation, VecEnv};
use crate::math::{binary_entropy, entropy, mean, std_dev};
use crate::nn::{clip_global_norm, Adam};
use crate::policy::{sample_action, BlendPolicy, BlenderMode, OutputGrads, ParamGroup, PolicyError, PolicyGrads};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("blend weight {0} outside [0, 1]")]
    BetaRange(f64),
    #[error("non-finite loss at iteration {iteration}: {detail}")]
    NonFinite { iteration: u64, detail: String },
    #[error("environment error at iteration {iteration}, step {step}: {source}")]
    Env {
        iteration: u64,
        step: u64,
        source: EnvError,
    },
    #[error(transparent)]
    Policy(#[from] PolicyError),
}

pub type Result<T> = std::result::Result<T, TrainError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub gamma: f64,
    pub gae_lambda: f64,
    pub learning_rate: f64,
    pub clip_coef: f64,
    pub ent_coef: f64,
    pub blend_ent_coef: f64,
    pub vf_coef: f64,
    pub max_grad_norm: f64,
    pub num_envs: usize,
    pub num_steps: usize,
    pub total_timesteps: u64,
    pub update_epochs: usize,
    pub num_minibatches: usize,
    pub norm_adv: bool,
    pub seed: u64,
    pub frozen: BTreeSet<ParamGroup>,
    pub force_beta: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            gae_lambda: 0.95,
            learning_rate: 2.5e-4,
            clip_coef: 0.1,
            ent_coef: 0.01,
            blend_ent_coef: 0.01,
            vf_coef: 0.5,
            max_grad_norm: 0.5,
            num_envs: 8,
            num_steps: 128,
            total_timesteps: 300_000,
            update_epochs: 4,
            num_minibatches: 4,
            norm_adv: true,
            seed: 0,
            frozen: BTreeSet::new(),
            force_beta: None,
        }
    }
}

impl TrainConfig {
    pub fn batch_size(&self) -> usize {
        self.num_envs * self.num_steps
    }

    pub fn num_iterations(&self) -> u64 {
        self.total_timesteps / self.batch_size() as u64
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(TrainError::Config(m));
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad(format!("gamma must be in (0, 1], got {}", self.gamma));
        }
        if !(0.0..=1.0).contains(&self.gae_lambda) {
            return bad(format!("gae_lambda must be in [0, 1], got {}", self.gae_lambda));
        }
        for (name, v) in [
            ("learning_rate", self.learning_rate),
            ("clip_coef", self.clip_coef),
            ("ent_coef", self.ent_coef),
            ("blend_ent_coef", self.blend_ent_coef),
            ("vf_coef", self.vf_coef),
            ("max_grad_norm", self.max_grad_norm),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be a finite value >= 0, got {v}"));
            }
        }
        if self.num_envs == 0 || self.num_steps == 0 || self.update_epochs == 0 || self.num_minibatches == 0 {
            return bad("num_envs, num_steps, update_epochs and num_minibatches must be >= 1".into());
        }
        if self.batch_size() % self.num_minibatches != 0 {
            return bad(format!(
                "batch size {} is not divisible by {} minibatches",
                self.batch_size(),
                self.num_minibatches
            ));
        }
        if self.total_timesteps < self.batch_size() as u64 {
            return bad(format!(
                "total_timesteps {} is smaller than one batch ({})",
                self.total_timesteps,
                self.batch_size()
            ));
        }
        if let Some(b) = self.force_beta {
            if !(0.0..=1.0).contains(&b) {
                return bad(format!("force_beta must be in [0, 1], got {b}"));
            }
        }
        Ok(())
    }
}

/// `-b ln b - (1 - b) ln(1 - b)` with `0 ln 0 = 0`.
pub fn blend_entropy(beta: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&beta) {
        return Err(TrainError::BetaRange(beta));
    }
    Ok(binary_entropy(beta))
}

/// `d blend_entropy / d beta`.
pub fn blend_entropy_grad(beta: f64) -> f64 {
    ((1.0 - beta) / beta).ln()
}

/// GAE over one environment's trajectory. `dones[t]` marks that transition
/// `t` ended an episode; `bootstrap` is the value of the state after the
/// last transition.
pub fn compute_advantages(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    bootstrap: f64,
    gamma: f64,
    lambda: f64,
) -> (Vec<f64>, Vec<f64>) {
    let n = rewards.len();
    let mut adv = vec![0.0; n];
    let mut next_adv = 0.0;
    let mut next_value = bootstrap;
    for t in (0..n).rev() {
        let live = if dones[t] { 0.0 } else { 1.0 };
        let delta = rewards[t] + gamma * next_value * live - values[t];
        next_adv = delta + gamma * lambda * live * next_adv;
        adv[t] = next_adv;
        next_value = values[t];
    }
    let returns = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    (adv, returns)
}

/// `min(r A, clip(r, 1-eps, 1+eps) A)`.
pub fn clipped_surrogate(ratio: f64, advantage: f64, clip: f64) -> f64 {
    (ratio * advantage).min(ratio.clamp(1.0 - clip, 1.0 + clip) * advantage)
}

/// Mean 0 / std 1 normalisation; constant inputs are only centred.
pub fn normalize(xs: &mut [f64]) {
    let m = mean(xs);
    let s = std_dev(xs);
    for x in xs.iter_mut() {
        *x -= m;
        if s > 1e-12 {
            *x /= s;
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct RolloutBuffer {
    pub num_envs: usize,
    pub num_steps: usize,
    /// Indexed `[step * num_envs + env]`.
    pub obs: Vec<Observation>,
    pub actions: Vec<usize>,
    pub logprobs: Vec<f64>,
    pub rewards: Vec<f64>,
    pub dones: Vec<bool>,
    pub values: Vec<f64>,
    pub betas: Vec<f64>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

impl RolloutBuffer {
    pub fn new(num_envs: usize, num_steps: usize) -> Self {
        let cap = num_envs * num_steps;
        Self {
            num_envs,
            num_steps,
            obs: Vec::with_capacity(cap),
            actions: Vec::with_capacity(cap),
            logprobs: Vec::with_capacity(cap),
            rewards: Vec::with_capacity(cap),
            dones: Vec::with_capacity(cap),
            values: Vec::with_capacity(cap),
            betas: Vec::with_capacity(cap),
            advantages: Vec::new(),
            returns: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.len() == self.num_envs * self.num_steps
    }

    /// Fills `advantages` and `returns`; `bootstrap[e]` is the value of
    /// environment `e`'s state after the last step.
    pub fn finish(&mut self, bootstrap: &[f64], gamma: f64, lambda: f64) {
        assert!(self.is_full(), "rollout buffer must be full before computing advantages");
        let (ne, ns) = (self.num_envs, self.num_steps);
        self.advantages = vec![0.0; ne * ns];
        self.returns = vec![0.0; ne * ns];
        for e in 0..ne {
            let idx: Vec<usize> = (0..ns).map(|t| t * ne + e).collect();
            let r: Vec<f64> = idx.iter().map(|&i| self.rewards[i]).collect();
            let v: Vec<f64> = idx.iter().map(|&i| self.values[i]).collect();
            let d: Vec<bool> = idx.iter().map(|&i| self.dones[i]).collect();
            let (a, ret) = compute_advantages(&r, &v, &d, bootstrap[e], gamma, lambda);
            for (k, &i) in idx.iter().enumerate() {
                self.advantages[i] = a[k];
                self.returns[i] = ret[k];
            }
        }
    }
}

/// One training sample as consumed by [`ppo_objective`].
#[derive(Debug, Clone, Copy)]
pub struct Sample<'a> {
    pub obs: &'a Observation,
    pub action: usize,
    pub old_logprob: f64,
    pub advantage: f64,
    pub ret: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LossStats {
    pub loss: f64,
    pub loss_policy: f64,
    pub loss_value: f64,
    pub entropy: f64,
    pub blend_entropy: f64,
    pub grad_norm: f64,
    pub clip_frac: f64,
}

fn beta_is_learned(policy: &BlendPolicy) -> bool {
    policy.force_beta.is_none() && policy.mode != BlenderMode::Rigid
}

/// Loss and gradients of one minibatch (advantages already normalised).
/// Frozen groups get zero gradients; the remaining global norm is clipped
/// to `cfg.max_grad_norm`.
pub fn ppo_objective(policy: &BlendPolicy, batch: &[Sample], cfg: &TrainConfig) -> Result<(LossStats, PolicyGrads)> {
    let b = batch.len() as f64;
    let mut grads = policy.zero_grads();
    let mut st = LossStats::default();
    let learn_beta = beta_is_learned(policy);
    for s in batch {
        let (out, cache) = policy.forward(s.obs)?;
        let p = out.dist[s.action];
        let logp = p.ln();
        let ratio = (logp - s.old_logprob).exp();
        let surr = clipped_surrogate(ratio, s.advantage, cfg.clip_coef);
        let unclipped = ratio * s.advantage <= surr;
        if (ratio - 1.0).abs() > cfg.clip_coef {
            st.clip_frac += 1.0 / b;
        }
        let h = entropy(&out.dist);
        let bh = binary_entropy(out.beta);
        let verr = out.value - s.ret;
        st.loss_policy -= surr / b;
        st.loss_value += verr * verr / b;
        st.entropy += h / b;
        st.blend_entropy += bh / b;

        let mut g_dist: Vec<f64> = out
            .dist
            .iter()
            .map(|&q| if q > 0.0 { cfg.ent_coef * (q.ln() + 1.0) / b } else { 0.0 })
            .collect();
        if unclipped {
            g_dist[s.action] += -s.advantage * ratio / b / p;
        }
        let g_beta = if learn_beta && out.beta > 0.0 && out.beta < 1.0 {
            -cfg.blend_ent_coef * blend_entropy_grad(out.beta) / b
        } else {
            0.0
        };
        let g = OutputGrads {
            dist: g_dist,
            beta: g_beta,
            value: 2.0 * cfg.vf_coef * verr / b,
        };
        policy.backward(&out, &cache, &g, &mut grads);
    }
    st.loss = st.loss_policy + cfg.vf_coef * st.loss_value - cfg.ent_coef * st.entropy - cfg.blend_ent_coef * st.blend_entropy;
    if !st.loss.is_finite() {
        return Err(TrainError::NonFinite {
            iteration: 0,
            detail: format!("{st:?}"),
        });
    }
    for (g, group) in grads.tensors.iter_mut().zip(BlendPolicy::tensor_groups()) {
        if cfg.frozen.contains(&group) {
            g.iter_mut().for_each(|x| *x = 0.0);
        }
    }
    st.grad_norm = clip_global_norm(&mut grads.slices_mut(), cfg.max_grad_norm);
    Ok((st, grads))
}

/// Per-iteration telemetry, written as one JSON line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub iteration: u64,
    pub global_step: u64,
    /// Mean return of episodes finished during this iteration's rollout.
    pub mean_return: Option<f64>,
    pub episodes: usize,
    pub beta_mean: f64,
    pub beta_entropy: f64,
    pub logic_usage_frac: f64,
    pub loss_policy: f64,
    pub loss_value: f64,
    pub entropy: f64,
    pub blend_reg: f64,
}

/// Everything besides the policy tensors needed to resume training.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainerState {
    pub iteration: u64,
    pub global_step: u64,
    pub rng: ChaCha8Rng,
    pub envs: VecEnv,
    pub obs: Vec<Observation>,
    pub optim: Vec<Adam>,
}

pub struct Trainer {
    pub cfg: TrainConfig,
    pub policy: BlendPolicy,
    pub state: TrainerState,
}

impl Trainer {
    pub fn new(cfg: TrainConfig, mut policy: BlendPolicy, env_spec: &EnvSpec) -> Result<Self> {
        cfg.validate()?;
        if env_spec.num_actions() != policy.num_actions() {
            return Err(TrainError::Config(format!(
                "environment has {} actions, policy has {}",
                env_spec.num_actions(),
                policy.num_actions()
            )));
        }
        policy.force_beta = cfg.force_beta;
        let mut envs = VecEnv::new(&env_spec.clone().with_seed(cfg.seed), cfg.num_envs).map_err(|source| TrainError::Env {
            iteration: 0,
            step: 0,
            source,
        })?;
        let obs = envs.observe();
        let optim = policy
            .tensors()
            .iter()
            .map(|t| Adam::new(t.len(), cfg.learning_rate))
            .collect();
        let state = TrainerState {
            iteration: 0,
            global_step: 0,
            rng: ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ 0x7472_6169_6e),
            envs,
            obs,
            optim,
        };
        Ok(Self { cfg, policy, state })
    }

    pub fn from_parts(cfg: TrainConfig, mut policy: BlendPolicy, state: TrainerState) -> Result<Self> {
        cfg.validate()?;
        policy.force_beta = cfg.force_beta;
        Ok(Self { cfg, policy, state })
    }

    pub fn is_finished(&self) -> bool {
        self.state.iteration >= self.cfg.num_iterations()
    }

    fn collect(&mut self) -> Result<(RolloutBuffer, Vec<f64>)> {
        let ne = self.cfg.num_envs;
        let mut buf = RolloutBuffer::new(ne, self.cfg.num_steps);
        let mut finished = Vec::new();
        for _ in 0..self.cfg.num_steps {
            let mut actions = Vec::with_capacity(ne);
            for o in &self.state.obs {
                let out = self.policy.step(o)?;
                let (a, logp) = sample_action(&out.dist, &mut self.state.rng);
                actions.push(a);
                buf.logprobs.push(logp);
                buf.values.push(out.value);
                buf.betas.push(out.beta);
            }
            let steps = self.state.envs.step(&actions).map_err(|source| TrainError::Env {
                iteration: self.state.iteration,
                step: self.state.global_step,
                source,
            })?;
            self.state.global_step += ne as u64;
            for (e, s) in steps.into_iter().enumerate() {
                buf.rewards.push(s.reward);
                buf.dones.push(s.done);
                if let Some(r) = s.episode_return {
                    finished.push(r);
                }
                let prev = std::mem::replace(&mut self.state.obs[e], s.obs);
                buf.obs.push(prev);
            }
            buf.actions.extend(actions);
        }
        let bootstrap = self
            .state
            .obs
            .iter()
            .map(|o| Ok(self.policy.step(o)?.value))
            .collect::<Result<Vec<f64>>>()?;
        buf.finish(&bootstrap, self.cfg.gamma, self.cfg.gae_lambda);
        Ok((buf, finished))
    }

    fn apply(&mut self, grads: &PolicyGrads) {
        let groups = BlendPolicy::tensor_groups();
        let mut tensors = self.policy.tensors_mut();
        for (k, t) in tensors.iter_mut().enumerate() {
            if self.cfg.frozen.contains(&groups[k]) {
                continue;
            }
            self.state.optim[k].step(t, &grads.tensors[k]);
        }
    }

    /// Runs one rollout + update cycle.
    pub fn iterate(&mut self) -> Result<Metrics> {
        let (buf, finished) = self.collect()?;
        let n = buf.len();
        let mb = n / self.cfg.num_minibatches;
        let mut idx: Vec<usize> = (0..n).collect();
        let mut acc = LossStats::default();
        let mut count = 0.0;
        for _ in 0..self.cfg.update_epochs {
            idx.shuffle(&mut self.state.rng);
            for chunk in idx.chunks(mb) {
                let mut adv: Vec<f64> = chunk.iter().map(|&i| buf.advantages[i]).collect();
                if self.cfg.norm_adv {
                    normalize(&mut adv);
                }
                let batch: Vec<Sample> = chunk
                    .iter()
                    .zip(&adv)
                    .map(|(&i, &a)| Sample {
                        obs: &buf.obs[i],
                        action: buf.actions[i],
                        old_logprob: buf.logprobs[i],
                        advantage: a,
                        ret: buf.returns[i],
                    })
                    .collect();
                let (st, grads) = ppo_objective(&self.policy, &batch, &self.cfg).map_err(|e| match e {
                    TrainError::NonFinite { detail, .. } => TrainError::NonFinite {
                        iteration: self.state.iteration,
                        detail,
                    },
                    other => other,
                })?;
                self.apply(&grads);
                acc.loss_policy += st.loss_policy;
                acc.loss_value += st.loss_value;
                acc.entropy += st.entropy;
                acc.blend_entropy += st.blend_entropy;
                count += 1.0;
            }
        }
        self.state.iteration += 1;
        let betas = &buf.betas;
        let beta_entropy = betas.iter().map(|&b| binary_entropy(b)).sum::<f64>() / n as f64;
        Ok(Metrics {
            iteration: self.state.iteration,
            global_step: self.state.global_step,
            mean_return: if finished.is_empty() { None } else { Some(mean(&finished)) },
            episodes: finished.len(),
            beta_mean: mean(betas),
            beta_entropy,
            logic_usage_frac: betas.iter().filter(|&&b| b < 0.5).count() as f64 / n as f64,
            loss_policy: acc.loss_policy / count,
            loss_value: acc.loss_value / count,
            entropy: acc.entropy / count,
            blend_reg: -self.cfg.blend_ent_coef * acc.blend_entropy / count,
        })
    }

    /// Iterates until `total_timesteps`, handing each iteration's metrics to `sink`.
    pub fn run(&mut self, mut sink: impl FnMut(&Self, &Metrics) -> Result<()>) -> Result<()> {
        while !self.is_finished() {
            let m = self.iterate()?;
            sink(self, &m)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub episodes: usize,
    pub returns: Vec<f64>,
    pub mean_return: f64,
    pub std_return: f64,
    pub lengths: Vec<usize>,
    pub mean_length: f64,
    pub std_length: f64,
    pub beta_mean: f64,
}

/// Runs `episodes` episodes sampling from the blended policy. Episode `i`
/// uses environment seed `seed + i`.
pub fn evaluate(policy: &BlendPolicy, spec: &EnvSpec, episodes: usize, seed: u64) -> Result<EvalSummary> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6576_616c);
    let mut returns = Vec::with_capacity(episodes);
    let mut lengths = Vec::with_capacity(episodes);
    let mut betas = Vec::new();
    for i in 0..episodes {
        let mut env = Env::new(spec.clone().with_seed(seed.wrapping_add(i as u64))).map_err(|source| TrainError::Env {
            iteration: 0,
            step: 0,
            source,
        })?;
        let mut obs = env.observe();
        loop {
            let out = policy.step(&obs)?;
            betas.push(out.beta);
            let (a, _) = sample_action(&out.dist, &mut rng);
            let t = env.step(a).map_err(|source| TrainError::Env {
                iteration: 0,
                step: env.steps() as u64,
                source,
            })?;
            obs = t.obs;
            if t.done {
                break;
            }
        }
        returns.push(env.episode_return());
        lengths.push(env.steps());
    }
    let lf: Vec<f64> = lengths.iter().map(|&l| l as f64).collect();
    Ok(EvalSummary {
        episodes,
        mean_return: mean(&returns),
        std_return: std_dev(&returns),
        returns,
        mean_length: mean(&lf),
        std_length: std_dev(&lf),
        lengths,
        beta_mean: mean(&betas),
    })
}
