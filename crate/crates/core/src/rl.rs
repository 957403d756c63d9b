//! Soft actor-critic conditioned on a context embedding.
//!
//! The losses are exposed as tape builders so the caller can route the
//! critic loss gradient into a context encoder that produced the embedding
//! node; value-only wrappers are provided for evaluation and tests.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::encoder::ContextEmbedding;
use crate::error::{Error, Result};
use crate::numerics::{AdamConfig, AdamState, Mlp, ParamSet, Tape, Tensor, TensorRecord, Var};
use crate::replay::Transition;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SacConfig {
    pub hidden: Vec<usize>,
    pub gamma: f64,
    pub critic_target_rate: f64,
    pub actor_target_rate: f64,
    pub learning_rate: f64,
    pub initial_alpha: f64,
    pub auto_entropy: bool,
    /// Defaults to `−action_dim`.
    pub target_entropy: Option<f64>,
    pub log_std_min: f64,
    pub log_std_max: f64,
    /// Also backpropagate the actor loss into the context encoder.
    pub encoder_from_actor: bool,
}

impl Default for SacConfig {
    fn default() -> Self {
        Self {
            hidden: vec![128, 128],
            gamma: 0.99,
            critic_target_rate: 0.01,
            actor_target_rate: 0.05,
            learning_rate: 1e-3,
            initial_alpha: 1.0,
            auto_entropy: true,
            target_entropy: None,
            log_std_min: -20.0,
            log_std_max: 2.0,
            encoder_from_actor: false,
        }
    }
}

impl SacConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::InvalidArgument(format!("gamma {} outside [0, 1)", self.gamma)));
        }
        for (name, r) in [
            ("critic_target_rate", self.critic_target_rate),
            ("actor_target_rate", self.actor_target_rate),
        ] {
            if !(0.0..=1.0).contains(&r) {
                return Err(Error::InvalidArgument(format!("{name} {r} outside [0, 1]")));
            }
        }
        if !(self.learning_rate > 0.0 && self.initial_alpha > 0.0) || self.log_std_min >= self.log_std_max {
            return Err(Error::InvalidArgument("invalid SAC hyperparameters".into()));
        }
        Ok(())
    }

    pub fn target_entropy_for(&self, action_dim: usize) -> f64 {
        self.target_entropy.unwrap_or(-(action_dim as f64))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SacParams {
    pub state_dim: usize,
    pub action_dim: usize,
    pub embedding_dim: usize,
    /// `[state, embedding] → [mean, log_std]`.
    pub actor: Mlp,
    /// `[state, action, embedding] → Q`.
    pub critic1: Mlp,
    pub critic2: Mlp,
    pub target_actor: Mlp,
    pub target_critic1: Mlp,
    pub target_critic2: Mlp,
    pub log_alpha: Tensor,
}

impl SacParams {
    pub fn new<R: Rng + ?Sized>(
        state_dim: usize,
        action_dim: usize,
        embedding_dim: usize,
        cfg: &SacConfig,
        rng: &mut R,
    ) -> Self {
        let actor = Mlp::new(state_dim + embedding_dim, &cfg.hidden, 2 * action_dim, rng);
        let critic_in = state_dim + action_dim + embedding_dim;
        let critic1 = Mlp::new(critic_in, &cfg.hidden, 1, rng);
        let critic2 = Mlp::new(critic_in, &cfg.hidden, 1, rng);
        Self {
            state_dim,
            action_dim,
            embedding_dim,
            target_actor: actor.clone(),
            target_critic1: critic1.clone(),
            target_critic2: critic2.clone(),
            actor,
            critic1,
            critic2,
            log_alpha: Tensor::scalar(cfg.initial_alpha.ln()),
        }
    }

    pub fn alpha(&self) -> f64 {
        self.log_alpha.data()[0].exp()
    }

    pub fn to_record(&self) -> TensorRecord {
        let mut r = TensorRecord::from_params(&self.actor, "actor.");
        r.extend(&self.critic1, "critic1.");
        r.extend(&self.critic2, "critic2.");
        r.extend(&self.target_actor, "target_actor.");
        r.extend(&self.target_critic1, "target_critic1.");
        r.extend(&self.target_critic2, "target_critic2.");
        r.tensors.push(crate::numerics::NamedTensor {
            name: "log_alpha".into(),
            tensor: self.log_alpha.clone(),
        });
        r
    }

    pub fn load_record(&mut self, record: &TensorRecord) -> Result<()> {
        record.load_into(&mut self.actor, "actor.")?;
        record.load_into(&mut self.critic1, "critic1.")?;
        record.load_into(&mut self.critic2, "critic2.")?;
        record.load_into(&mut self.target_actor, "target_actor.")?;
        record.load_into(&mut self.target_critic1, "target_critic1.")?;
        record.load_into(&mut self.target_critic2, "target_critic2.")?;
        let la = record
            .tensors
            .iter()
            .find(|t| t.name == "log_alpha")
            .ok_or_else(|| Error::Checkpoint("missing tensor `log_alpha`".into()))?;
        self.log_alpha = la.tensor.clone();
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PolicyOutput {
    pub action: Vec<f64>,
    pub log_prob: f64,
}

/// Squashed-Gaussian head: returns `(action [B, A], log_prob [B, 1])` for
/// the pre-drawn standard-normal noise `eps [B, A]`.
pub fn policy_on_tape(
    tape: &mut Tape<'_>,
    actor: &[Var],
    inputs: Var,
    eps: Var,
    cfg: &SacConfig,
) -> Result<(Var, Var)> {
    let out = Mlp::forward(tape, actor, inputs)?;
    let a = tape.value(out).cols() / 2;
    if tape.value(eps).cols() != a || tape.value(eps).rows() != tape.value(out).rows() {
        return Err(Error::Shape {
            op: "policy",
            shapes: vec![tape.value(out).shape().to_vec(), tape.value(eps).shape().to_vec()],
        });
    }
    let mean = tape.slice_cols(out, 0, a)?;
    let log_std = tape.slice_cols(out, a, 2 * a)?;
    let log_std = tape.clamp(log_std, cfg.log_std_min, cfg.log_std_max);
    let std = tape.exp(log_std);
    let noise = tape.mul(std, eps)?;
    let u = tape.add(mean, noise)?;
    let action = tape.tanh(u);

    // log N(u; mean, std) = −eps²/2 − log_std − ln(2π)/2
    let eps_sq = tape.square(eps);
    let eps_sq = tape.scale(eps_sq, -0.5);
    let gauss = tape.sub(eps_sq, log_std)?;
    let gauss = tape.add_scalar(gauss, -HALF_LN_2PI);
    // log(1 − tanh²u) = 2(ln 2 − u − softplus(−2u))
    let m2u = tape.scale(u, -2.0);
    let sp = tape.softplus(m2u);
    let corr = tape.add(u, sp)?;
    let corr = tape.scale(corr, -2.0);
    let corr = tape.add_scalar(corr, 2.0 * std::f64::consts::LN_2);
    let per_dim = tape.sub(gauss, corr)?;
    let log_prob = tape.sum_cols(per_dim);
    Ok((action, log_prob))
}

fn check_embedding(params: &SacParams, state: &[f64], embedding: &ContextEmbedding) -> Result<()> {
    if embedding.dim() != params.embedding_dim || state.len() != params.state_dim {
        return Err(Error::Shape {
            op: "act",
            shapes: vec![vec![state.len()], vec![embedding.dim()]],
        });
    }
    Ok(())
}

/// One action for `state` under `embedding`; `tanh(mean)` when deterministic.
pub fn act<R: Rng + ?Sized>(
    params: &SacParams,
    cfg: &SacConfig,
    state: &[f64],
    embedding: &ContextEmbedding,
    deterministic: bool,
    rng: &mut R,
) -> Result<PolicyOutput> {
    check_embedding(params, state, embedding)?;
    let eps: Vec<f64> = if deterministic {
        vec![0.0; params.action_dim]
    } else {
        (0..params.action_dim).map(|_| rng.sample(StandardNormal)).collect()
    };
    let mut tape = Tape::new();
    let vars = params.actor.bind(&mut tape, false);
    let mut input = state.to_vec();
    input.extend_from_slice(embedding.values());
    let x = tape.constant(Tensor::row(input));
    let e = tape.constant(Tensor::row(eps));
    let (a, lp) = policy_on_tape(&mut tape, &vars, x, e, cfg)?;
    let action = tape.value(a).data().to_vec();
    let log_prob = tape.scalar(lp);
    if action.iter().any(|v| !v.is_finite()) || !log_prob.is_finite() {
        return Err(Error::NonFinite("policy network"));
    }
    Ok(PolicyOutput { action, log_prob })
}

/// Stacked transitions; every field is `[B, ·]`.
#[derive(Clone, Debug, PartialEq)]
pub struct TransitionBatch {
    pub states: Tensor,
    pub actions: Tensor,
    pub rewards: Tensor,
    pub next_states: Tensor,
    pub dones: Tensor,
}

impl TransitionBatch {
    pub fn from_transitions(steps: &[&Transition]) -> Result<Self> {
        let Some(first) = steps.first() else {
            return Err(Error::Empty("transition batch"));
        };
        let (s, a) = (first.state.len(), first.action.len());
        let b = steps.len();
        let mut states = Vec::with_capacity(b * s);
        let mut actions = Vec::with_capacity(b * a);
        let mut next_states = Vec::with_capacity(b * s);
        for t in steps {
            if t.state.len() != s || t.next_state.len() != s || t.action.len() != a {
                return Err(Error::Shape {
                    op: "transition batch",
                    shapes: vec![t.state.len(), t.action.len(), t.next_state.len()]
                        .into_iter()
                        .map(|n| vec![n])
                        .collect(),
                });
            }
            states.extend_from_slice(&t.state);
            actions.extend_from_slice(&t.action);
            next_states.extend_from_slice(&t.next_state);
        }
        Ok(Self {
            states: Tensor::matrix(b, s, states)?,
            actions: Tensor::matrix(b, a, actions)?,
            rewards: Tensor::column(steps.iter().map(|t| t.reward).collect()),
            next_states: Tensor::matrix(b, s, next_states)?,
            dones: Tensor::column(steps.iter().map(|t| if t.done { 1.0 } else { 0.0 }).collect()),
        })
    }

    pub fn len(&self) -> usize {
        self.states.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn min_twin(tape: &mut Tape<'_>, c1: &[Var], c2: &[Var], input: Var) -> Result<(Var, Var, Var)> {
    let q1 = Mlp::forward(tape, c1, input)?;
    let q2 = Mlp::forward(tape, c2, input)?;
    let q = tape.minimum(q1, q2)?;
    Ok((q1, q2, q))
}

/// Soft Bellman target `r + γ(1 − done)(min Q̄(s', a') − α log π(a'|s'))`
/// with `a'` from the target actor; `[B, 1]`.
pub fn bellman_target(
    params: &SacParams,
    cfg: &SacConfig,
    batch: &TransitionBatch,
    next_embedding: &Tensor,
    eps_next: &Tensor,
) -> Result<Tensor> {
    let mut tape = Tape::new();
    let ta = params.target_actor.bind(&mut tape, false);
    let tc1 = params.target_critic1.bind(&mut tape, false);
    let tc2 = params.target_critic2.bind(&mut tape, false);
    let s2 = tape.constant_ref(&batch.next_states);
    let e2 = tape.constant_ref(next_embedding);
    let eps = tape.constant_ref(eps_next);
    let pin = tape.concat(&[s2, e2])?;
    let (a2, logp2) = policy_on_tape(&mut tape, &ta, pin, eps, cfg)?;
    let qin = tape.concat(&[s2, a2, e2])?;
    let (_, _, qmin) = min_twin(&mut tape, &tc1, &tc2, qin)?;
    let alpha = params.alpha();
    let q = tape.value(qmin).data();
    let lp = tape.value(logp2).data();
    let y = (0..batch.len())
        .map(|i| {
            let r = batch.rewards.data()[i];
            let not_done = 1.0 - batch.dones.data()[i];
            r + cfg.gamma * not_done * (q[i] - alpha * lp[i])
        })
        .collect();
    let y = Tensor::column(y);
    if !y.is_finite() {
        return Err(Error::NonFinite("bellman target"));
    }
    Ok(y)
}

/// `½(mean (Q₁ − y)² + mean (Q₂ − y)²)`; `embedding` may carry encoder
/// gradients.
#[allow(clippy::too_many_arguments)]
pub fn critic_loss_on_tape(
    tape: &mut Tape<'_>,
    critic1: &[Var],
    critic2: &[Var],
    states: Var,
    actions: Var,
    embedding: Var,
    target: Var,
) -> Result<Var> {
    let input = tape.concat(&[states, actions, embedding])?;
    let (q1, q2, _) = min_twin(tape, critic1, critic2, input)?;
    let d1 = tape.sub(q1, target)?;
    let d2 = tape.sub(q2, target)?;
    let s1 = tape.square(d1);
    let s2 = tape.square(d2);
    let m1 = tape.mean(s1);
    let m2 = tape.mean(s2);
    let total = tape.add(m1, m2)?;
    Ok(tape.scale(total, 0.5))
}

/// `mean(α log π(ã|s) − min Q(s, ã))` with reparameterized `ã`; returns the
/// loss and the per-sample log-probabilities.
#[allow(clippy::too_many_arguments)]
pub fn actor_loss_on_tape(
    tape: &mut Tape<'_>,
    actor: &[Var],
    critic1: &[Var],
    critic2: &[Var],
    states: Var,
    embedding: Var,
    eps: Var,
    alpha: f64,
    cfg: &SacConfig,
) -> Result<(Var, Var)> {
    let pin = tape.concat(&[states, embedding])?;
    let (a, logp) = policy_on_tape(tape, actor, pin, eps, cfg)?;
    let qin = tape.concat(&[states, a, embedding])?;
    let (_, _, q) = min_twin(tape, critic1, critic2, qin)?;
    let scaled = tape.scale(logp, alpha);
    let diff = tape.sub(scaled, q)?;
    Ok((tape.mean(diff), logp))
}

/// Value of the critic loss with the embeddings as constants.
pub fn critic_loss(
    params: &SacParams,
    cfg: &SacConfig,
    batch: &TransitionBatch,
    embedding: &Tensor,
    next_embedding: &Tensor,
    eps_next: &Tensor,
) -> Result<f64> {
    let y = bellman_target(params, cfg, batch, next_embedding, eps_next)?;
    let mut tape = Tape::new();
    let c1 = params.critic1.bind(&mut tape, true);
    let c2 = params.critic2.bind(&mut tape, true);
    let s = tape.constant_ref(&batch.states);
    let a = tape.constant_ref(&batch.actions);
    let e = tape.constant_ref(embedding);
    let y = tape.constant(y);
    let loss = critic_loss_on_tape(&mut tape, &c1, &c2, s, a, e, y)?;
    Ok(tape.scalar(loss))
}

pub fn actor_loss(
    params: &SacParams,
    cfg: &SacConfig,
    states: &Tensor,
    embedding: &Tensor,
    eps: &Tensor,
) -> Result<f64> {
    let mut tape = Tape::new();
    let av = params.actor.bind(&mut tape, true);
    let c1 = params.critic1.bind(&mut tape, false);
    let c2 = params.critic2.bind(&mut tape, false);
    let s = tape.constant_ref(states);
    let e = tape.constant_ref(embedding);
    let n = tape.constant_ref(eps);
    let (loss, _) = actor_loss_on_tape(&mut tape, &av, &c1, &c2, s, e, n, params.alpha(), cfg)?;
    Ok(tape.scalar(loss))
}

/// Polyak-averages the target networks at their configured rates.
pub fn update_targets(params: &mut SacParams, cfg: &SacConfig) -> Result<()> {
    params
        .target_critic1
        .soft_update_from(&params.critic1, cfg.critic_target_rate)?;
    params
        .target_critic2
        .soft_update_from(&params.critic2, cfg.critic_target_rate)?;
    params
        .target_actor
        .soft_update_from(&params.actor, cfg.actor_target_rate)
}

/// Gradient of `−log α · (mean log π + target_entropy)` with respect to
/// `log α`.
pub fn entropy_gradient(mean_log_prob: f64, target_entropy: f64) -> f64 {
    -(mean_log_prob + target_entropy)
}

/// Optimizer state for the actor, both critics and the temperature.
#[derive(Clone, Debug)]
pub struct SacOptimizers {
    pub actor: AdamState,
    pub critic: AdamState,
    pub alpha: AdamState,
}

impl SacOptimizers {
    pub fn new(params: &SacParams, cfg: &SacConfig) -> Self {
        let adam = AdamConfig {
            lr: cfg.learning_rate,
            ..AdamConfig::default()
        };
        let critic_params: Vec<&Tensor> = params
            .critic1
            .params()
            .into_iter()
            .chain(params.critic2.params())
            .collect();
        Self {
            actor: AdamState::new(&params.actor.params(), adam),
            critic: AdamState::new(&critic_params, adam),
            alpha: AdamState::new(&[&params.log_alpha], adam),
        }
    }
}

/// One Adam step on `log α`; returns the new α.
pub fn tune_entropy(
    params: &mut SacParams,
    opt: &mut AdamState,
    mean_log_prob: f64,
    target_entropy: f64,
) -> Result<f64> {
    let g = Tensor::scalar(entropy_gradient(mean_log_prob, target_entropy));
    opt.step(&mut [&mut params.log_alpha], &[g], &["log_alpha".into()])?;
    Ok(params.alpha())
}
