//! Soft actor-critic: squashed-Gaussian actor, twin critics with soft
//! target updates, and a bounded FIFO replay buffer.

use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::nn::{
    adam_step, init_uniform, AdamParams, AdamState, Graph, ParamStore, Tensor, Var,
};
use crate::rng::RngHub;
use crate::{Error, Result, Scalar};

const LOG_2PI: f64 = 1.8378770664093453;
/// Floor inside the tanh-Jacobian log term.
const SQUASH_EPS: f64 = 1e-6;

/// SAC hyperparameters. Defaults: discount 0.99, target update rate 0.005,
/// fixed temperature 0.2, learning rates 3e-4, buffer capacity 100k,
/// 3-layer MLPs with 128 hidden units, batch 64, 2-dimensional action.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct SacConfig {
    pub gamma: f64,
    pub tau: f64,
    pub alpha_temp: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub buffer_capacity: usize,
    pub hidden: usize,
    pub batch: usize,
    pub action_dim: usize,
    /// Environment steps with uniform random actions before updates begin.
    pub warmup_steps: usize,
    pub updates_per_step: usize,
    /// Include the entropy bonus in the critic target (the temperature is
    /// meaningless without it; `false` gives the bare bootstrap target).
    pub entropy_in_target: bool,
    pub log_std_min: f64,
    pub log_std_max: f64,
}

impl Default for SacConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            tau: 0.005,
            alpha_temp: 0.2,
            actor_lr: 3e-4,
            critic_lr: 3e-4,
            buffer_capacity: 100_000,
            hidden: 128,
            batch: 64,
            action_dim: 2,
            warmup_steps: 1000,
            updates_per_step: 1,
            entropy_in_target: true,
            log_std_min: -20.0,
            log_std_max: 2.0,
        }
    }
}

impl SacConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::Config(format!("gamma {} outside (0, 1)", self.gamma)));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(Error::Config(format!("tau {} outside (0, 1]", self.tau)));
        }
        if self.action_dim != 2 {
            return Err(Error::Config("action_dim is fixed at 2 (RAN, AI)".into()));
        }
        if self.batch == 0 || self.buffer_capacity < self.batch {
            return Err(Error::Config("batch must fit inside the buffer".into()));
        }
        Ok(())
    }
}

/// One `(s, a, r, s', done)` transition.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition<S: Scalar> {
    pub state: Vec<S>,
    pub action: [S; 2],
    pub reward: S,
    pub next_state: Vec<S>,
    pub done: bool,
}

/// Fixed-capacity ring buffer; oldest transitions are evicted first.
pub struct ReplayBuffer<S: Scalar> {
    data: Vec<Transition<S>>,
    capacity: usize,
    head: usize,
}

impl<S: Scalar> ReplayBuffer<S> {
    pub fn new(capacity: usize) -> Self {
        Self { data: Vec::with_capacity(capacity.min(1 << 20)), capacity, head: 0 }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn get(&self, idx: usize) -> &Transition<S> {
        &self.data[idx]
    }

    /// Append, evicting the oldest transition when full. Non-finite fields
    /// are rejected.
    pub fn store(&mut self, t: Transition<S>) -> Result<()> {
        let finite = t.reward.is_finite()
            && t.action.iter().all(|a| a.is_finite())
            && t.state.iter().all(|v| v.is_finite())
            && t.next_state.iter().all(|v| v.is_finite());
        if !finite {
            return Err(Error::NonFinite("replay transition contains NaN/Inf".into()));
        }
        if self.data.len() < self.capacity {
            self.data.push(t);
        } else {
            self.data[self.head] = t;
            self.head = (self.head + 1) % self.capacity;
        }
        Ok(())
    }

    /// Uniform sample of `k` distinct indices.
    pub fn sample_indices(&self, rng: &mut impl Rng, k: usize) -> Vec<usize> {
        rand::seq::index::sample(rng, self.data.len(), k.min(self.data.len())).into_vec()
    }
}

/// Three-layer ReLU MLP over a named parameter store.
#[derive(Debug, Clone, Copy)]
pub struct MlpSpec {
    pub input: usize,
    pub hidden: usize,
    pub output: usize,
}

impl MlpSpec {
    fn shapes(&self) -> [(&'static str, Vec<usize>, usize); 6] {
        [
            ("l1.w", vec![self.hidden, self.input], self.input),
            ("l1.b", vec![self.hidden], self.input),
            ("l2.w", vec![self.hidden, self.hidden], self.hidden),
            ("l2.b", vec![self.hidden], self.hidden),
            ("out.w", vec![self.output, self.hidden], self.hidden),
            ("out.b", vec![self.output], self.hidden),
        ]
    }

    /// Fan-in uniform init; `out_scale` shrinks the final layer (a small
    /// actor head starts the policy near zero action).
    pub fn init<S: Scalar, R: Rng>(&self, rng: &mut R, out_scale: f64) -> ParamStore<S> {
        let mut store = ParamStore::new();
        for (name, shape, fan_in) in self.shapes() {
            let scale = if name.starts_with("out") { out_scale } else { 1.0 };
            store.insert(name, init_uniform(shape, fan_in, scale, rng));
        }
        store
    }

    /// Forward pass; `frozen` binds parameters as constants so no weight
    /// gradients are computed (activation gradients still flow).
    pub fn forward<S: Scalar>(
        &self,
        g: &mut Graph<S>,
        store: &ParamStore<S>,
        group: usize,
        x: Var,
        frozen: bool,
    ) -> Result<Var> {
        let bind = |g: &mut Graph<S>, name: &str| {
            let id = store.id(name).expect("mlp parameter");
            if frozen {
                g.frozen_param(store, id)
            } else {
                g.param(store, group, id)
            }
        };
        let w1 = bind(g, "l1.w");
        let b1 = bind(g, "l1.b");
        let w2 = bind(g, "l2.w");
        let b2 = bind(g, "l2.b");
        let wo = bind(g, "out.w");
        let bo = bind(g, "out.b");
        let h = g.dense(x, w1, b1)?;
        let h = g.relu(h);
        let h = g.dense(h, w2, b2)?;
        let h = g.relu(h);
        g.dense(h, wo, bo)
    }
}

/// Split the actor's output into `(mean, log_std)` with the log-std clamped
/// to the configured interval.
pub fn actor_heads<S: Scalar>(
    g: &mut Graph<S>,
    spec: MlpSpec,
    store: &ParamStore<S>,
    group: usize,
    s: Var,
    cfg: &SacConfig,
    frozen: bool,
) -> Result<(Var, Var)> {
    let out = spec.forward(g, store, group, s, frozen)?;
    let mean = g.slice_cols(out, 0, cfg.action_dim)?;
    let log_std = g.slice_cols(out, cfg.action_dim, 2 * cfg.action_dim)?;
    let log_std = g.clamp(log_std, cfg.log_std_min, cfg.log_std_max);
    Ok((mean, log_std))
}

/// Reparameterized squashed-Gaussian sample: `a = tanh(mean + std * eps)`
/// plus its log-probability (Gaussian log-density with the tanh Jacobian
/// correction), summed over action dimensions into a `(B, 1)` node.
pub fn squashed_sample<S: Scalar>(
    g: &mut Graph<S>,
    mean: Var,
    log_std: Var,
    noise: &Tensor<S>,
) -> Result<(Var, Var)> {
    let eps = g.constant(noise.clone());
    let std = g.exp(log_std);
    let scaled = g.mul(std, eps)?;
    let u = g.add(mean, scaled)?;
    let action = g.tanh(u);

    // -0.5*eps^2 - 0.5*ln(2пи) is constant under the reparameterization;
    // the explicit -log_std term carries the scale gradient.
    let base = noise.map(|e| S::c(-0.5) * e * e - S::c(0.5 * LOG_2PI));
    let base = g.constant(base);
    let neg_log_std = g.neg(log_std);
    let gauss = g.add(base, neg_log_std)?;
    let a_sq = g.square(action);
    let neg_a_sq = g.neg(a_sq);
    let jac_arg = g.add_scalar(neg_a_sq, 1.0 + SQUASH_EPS);
    let jac = g.ln(jac_arg);
    let per_dim = g.sub(gauss, jac)?;
    let logp = g.sum_cols(per_dim);
    Ok((action, logp))
}

/// Log-density of the squashed Gaussian at pre-squash value `u`, summed
/// over dimensions (value-level; used by tests and diagnostics).
pub fn squashed_log_prob(mean: &[f64], log_std: &[f64], u: &[f64]) -> f64 {
    let mut lp = 0.0;
    for d in 0..mean.len() {
        let std = log_std[d].exp();
        let z = (u[d] - mean[d]) / std;
        lp += -0.5 * z * z - log_std[d] - 0.5 * LOG_2PI;
        let a = u[d].tanh();
        lp -= (1.0 + SQUASH_EPS - a * a).ln();
    }
    lp
}

/// Bootstrap target `r + gamma * (1 - done) * (min_q' - alpha * logp')`
/// (the entropy term only when enabled).
pub fn critic_target(
    reward: f64,
    done: bool,
    min_q_next: f64,
    logp_next: f64,
    cfg: &SacConfig,
) -> f64 {
    let cont = if done { 0.0 } else { cfg.gamma };
    let entropy = if cfg.entropy_in_target { cfg.alpha_temp * logp_next } else { 0.0 };
    reward + cont * (min_q_next - entropy)
}

/// Losses from one gradient update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpdateStats {
    pub critic_loss: f64,
    pub actor_loss: f64,
}

/// The agent: actor, twin critics, their targets and optimizer state.
pub struct SacAgent<S: Scalar> {
    cfg: SacConfig,
    state_dim: usize,
    actor_spec: MlpSpec,
    critic_spec: MlpSpec,
    actor: ParamStore<S>,
    critic1: ParamStore<S>,
    critic2: ParamStore<S>,
    target1: ParamStore<S>,
    target2: ParamStore<S>,
    actor_adam: AdamState<S>,
    critic1_adam: AdamState<S>,
    critic2_adam: AdamState<S>,
    policy_rng: ChaCha8Rng,
    buffer_rng: ChaCha8Rng,
}

impl<S: Scalar> SacAgent<S> {
    pub fn new(state_dim: usize, cfg: SacConfig, hub: &RngHub) -> Result<Self> {
        cfg.validate()?;
        let actor_spec =
            MlpSpec { input: state_dim, hidden: cfg.hidden, output: 2 * cfg.action_dim };
        let critic_spec =
            MlpSpec { input: state_dim + cfg.action_dim, hidden: cfg.hidden, output: 1 };
        let mut init_rng = hub.stream("sac.init");
        let actor = actor_spec.init(&mut init_rng, 0.01);
        let critic1 = critic_spec.init(&mut init_rng, 1.0);
        let critic2 = critic_spec.init(&mut init_rng, 1.0);
        let mut target1 = critic_spec.init(&mut init_rng, 1.0);
        let mut target2 = critic_spec.init(&mut init_rng, 1.0);
        target1.copy_values_from(&critic1);
        target2.copy_values_from(&critic2);
        let actor_adam = AdamState::new(&actor);
        let critic1_adam = AdamState::new(&critic1);
        let critic2_adam = AdamState::new(&critic2);
        Ok(Self {
            cfg,
            state_dim,
            actor_spec,
            critic_spec,
            actor,
            critic1,
            critic2,
            target1,
            target2,
            actor_adam,
            critic1_adam,
            critic2_adam,
            policy_rng: hub.stream("sac.policy"),
            buffer_rng: hub.stream("sac.buffer"),
        })
    }

    pub fn config(&self) -> &SacConfig {
        &self.cfg
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn actor_params(&self) -> &ParamStore<S> {
        &self.actor
    }

    /// Uniform random action in `[-1, 1]^2` from the policy stream
    /// (exploration warmup).
    pub fn random_action(&mut self) -> [S; 2] {
        [
            S::c(self.policy_rng.gen_range(-1.0..1.0)),
            S::c(self.policy_rng.gen_range(-1.0..1.0)),
        ]
    }

    /// Policy action for a state. Stochastic mode draws a reparameterized
    /// sample; deterministic mode squashes the mean.
    pub fn act(&mut self, state: &[S], stochastic: bool) -> Result<[S; 2]> {
        if state.len() != self.state_dim {
            return Err(Error::Shape(format!(
                "state of {} entries, expected {}",
                state.len(),
                self.state_dim
            )));
        }
        let mut g = Graph::new();
        let s = g.constant(Tensor::new(vec![1, self.state_dim], state.to_vec())?);
        let (mean, log_std) =
            actor_heads(&mut g, self.actor_spec, &self.actor, 0, s, &self.cfg, true)?;
        let a = if stochastic {
            let noise = self.gaussian_noise(1);
            let (action, _) = squashed_sample(&mut g, mean, log_std, &noise)?;
            action
        } else {
            g.tanh(mean)
        };
        let v = g.value(a).values();
        Ok([v[0], v[1]])
    }

    fn gaussian_noise(&mut self, rows: usize) -> Tensor<S> {
        let n = rows * self.cfg.action_dim;
        let values =
            (0..n).map(|_| S::c(self.policy_rng.sample::<f64, _>(StandardNormal))).collect();
        Tensor::new(vec![rows, self.cfg.action_dim], values).expect("finite noise")
    }

    /// One SAC gradient step from a uniformly sampled minibatch. Returns
    /// `None` (no-op) while the buffer holds fewer than `batch` transitions.
    pub fn update(&mut self, buffer: &ReplayBuffer<S>) -> Result<Option<UpdateStats>> {
        if buffer.len() < self.cfg.batch {
            return Ok(None);
        }
        let b = self.cfg.batch;
        let idx = buffer.sample_indices(&mut self.buffer_rng, b);
        let mut s_vals = Vec::with_capacity(b * self.state_dim);
        let mut a_vals = Vec::with_capacity(b * 2);
        let mut s2_vals = Vec::with_capacity(b * self.state_dim);
        let mut rewards = Vec::with_capacity(b);
        let mut dones = Vec::with_capacity(b);
        for &i in &idx {
            let tr = buffer.get(i);
            s_vals.extend_from_slice(&tr.state);
            a_vals.extend_from_slice(&tr.action);
            s2_vals.extend_from_slice(&tr.next_state);
            rewards.push(tr.reward);
            dones.push(tr.done);
        }
        let s = Tensor::new(vec![b, self.state_dim], s_vals)?;
        let a = Tensor::new(vec![b, 2], a_vals)?;
        let s2 = Tensor::new(vec![b, self.state_dim], s2_vals)?;

        // Targets: fresh next-state actions from the current policy against
        // the target critics; values only, nothing differentiated.
        let noise2 = self.gaussian_noise(b);
        let y = {
            let mut g = Graph::new();
            let s2v = g.constant(s2.clone());
            let (mean2, log_std2) =
                actor_heads(&mut g, self.actor_spec, &self.actor, 0, s2v, &self.cfg, true)?;
            let (a2, logp2) = squashed_sample(&mut g, mean2, log_std2, &noise2)?;
            let sa2 = g.concat_cols(s2v, a2)?;
            let q1t = self.critic_spec.forward(&mut g, &self.target1, 0, sa2, true)?;
            let q2t = self.critic_spec.forward(&mut g, &self.target2, 0, sa2, true)?;
            let minq = g.min_elem(q1t, q2t)?;
            let minq = g.value(minq).values().to_vec();
            let logp2 = g.value(logp2).values().to_vec();
            let mut y = Vec::with_capacity(b);
            for i in 0..b {
                y.push(S::c(critic_target(
                    rewards[i].f64(),
                    dones[i],
                    minq[i].f64(),
                    logp2[i].f64(),
                    &self.cfg,
                )));
            }
            Tensor::new(vec![b, 1], y)?
        };

        // Twin critic regression toward the shared target.
        let critic_loss = {
            let mut g = Graph::new();
            let sv = g.constant(s.clone());
            let av = g.constant(a.clone());
            let sa = g.concat_cols(sv, av)?;
            let yv = g.constant(y);
            let q1 = self.critic_spec.forward(&mut g, &self.critic1, 1, sa, false)?;
            let q2 = self.critic_spec.forward(&mut g, &self.critic2, 2, sa, false)?;
            let l1 = g.mse(q1, yv)?;
            let l2 = g.mse(q2, yv)?;
            let loss = g.add(l1, l2)?;
            let loss_v = g.value(loss).item().f64();
            if !loss_v.is_finite() {
                return Err(Error::Diverged("critic loss is not finite".into()));
            }
            g.backward(loss)?;
            g.apply_grads(&mut self.critic1, 1);
            g.apply_grads(&mut self.critic2, 2);
            adam_step(&mut self.critic1, &mut self.critic1_adam, self.cfg.critic_lr, AdamParams::default())?;
            adam_step(&mut self.critic2, &mut self.critic2_adam, self.cfg.critic_lr, AdamParams::default())?;
            loss_v
        };

        // Actor ascends E[min_q(s, pi(s)) - alpha * log pi]; critics frozen.
        let noise = self.gaussian_noise(b);
        let actor_loss = {
            let mut g = Graph::new();
            let sv = g.constant(s);
            let (mean, log_std) =
                actor_heads(&mut g, self.actor_spec, &self.actor, 0, sv, &self.cfg, false)?;
            let (a_pi, logp) = squashed_sample(&mut g, mean, log_std, &noise)?;
            let sa = g.concat_cols(sv, a_pi)?;
            let q1 = self.critic_spec.forward(&mut g, &self.critic1, 1, sa, true)?;
            let q2 = self.critic_spec.forward(&mut g, &self.critic2, 2, sa, true)?;
            let minq = g.min_elem(q1, q2)?;
            let ent = g.mul_scalar(logp, self.cfg.alpha_temp);
            let gap = g.sub(ent, minq)?;
            let loss = g.mean_all(gap);
            let loss_v = g.value(loss).item().f64();
            if !loss_v.is_finite() {
                return Err(Error::Diverged("actor loss is not finite".into()));
            }
            g.backward(loss)?;
            g.apply_grads(&mut self.actor, 0);
            adam_step(&mut self.actor, &mut self.actor_adam, self.cfg.actor_lr, AdamParams::default())?;
            loss_v
        };

        self.target1.soft_update_from(&self.critic1, self.cfg.tau);
        self.target2.soft_update_from(&self.critic2, self.cfg.tau);

        Ok(Some(UpdateStats { critic_loss, actor_loss }))
    }

    /// Persist every network in one self-describing checkpoint.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut store = ParamStore::<S>::new();
        let mut copy = |prefix: &str, src: &ParamStore<S>| {
            for (name, value) in src.iter() {
                store.insert(&format!("{prefix}.{name}"), value.clone());
            }
        };
        copy("actor", &self.actor);
        copy("critic1", &self.critic1);
        copy("critic2", &self.critic2);
        copy("target1", &self.target1);
        copy("target2", &self.target2);
        store.insert("meta.state_dim", Tensor::scalar(S::c(self.state_dim as f64)));
        store.insert("meta.hidden", Tensor::scalar(S::c(self.cfg.hidden as f64)));
        crate::nn::save(&store, path)
    }

    /// Restore from [`SacAgent::save`] output. Optimizer state restarts
    /// fresh; network weights and shapes come from the checkpoint.
    pub fn load(path: &Path, mut cfg: SacConfig, hub: &RngHub) -> Result<Self> {
        let all: ParamStore<S> = crate::nn::load(path)?;
        let meta = |name: &str| -> Result<f64> {
            all.id(name)
                .map(|id| all.value(id).item().f64())
                .ok_or_else(|| Error::Checkpoint(format!("missing {name}")))
        };
        let state_dim = meta("meta.state_dim")? as usize;
        cfg.hidden = meta("meta.hidden")? as usize;
        let mut agent = Self::new(state_dim, cfg, hub)?;
        let extract = |prefix: &str, dst: &mut ParamStore<S>| -> Result<()> {
            for id in dst.ids().collect::<Vec<_>>() {
                let name = format!("{prefix}.{}", dst.name(id));
                let src_id = all
                    .id(&name)
                    .ok_or_else(|| Error::Checkpoint(format!("missing parameter {name}")))?;
                if all.value(src_id).shape() != dst.value(id).shape() {
                    return Err(Error::Checkpoint(format!("shape mismatch for {name}")));
                }
                dst.value_mut(id)
                    .values_mut()
                    .copy_from_slice(all.value(src_id).values());
            }
            Ok(())
        };
        extract("actor", &mut agent.actor)?;
        extract("critic1", &mut agent.critic1)?;
        extract("critic2", &mut agent.critic2)?;
        extract("target1", &mut agent.target1)?;
        extract("target2", &mut agent.target2)?;
        Ok(agent)
    }
}
