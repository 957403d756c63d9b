//! Meta-training: per-episode task sampling, rollouts into a return-ranked
//! buffer, and periodic rounds of SAC plus contrastive encoder updates.

use std::collections::HashMap;
use std::time::Instant;

use rand::seq::index;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use sami_core::encoder::{encode_batch_on_tape, EncoderParams};
use sami_core::envs::{sample_task, SplitName};
use sami_core::estimators::{contrastive_on_tape, soft_sance_on_tape, SoftSanceConfig};
use sami_core::numerics::{collect_grads, AdamConfig, AdamState, ParamSet, Tape, Tensor, Var};
use sami_core::replay::{CrossTaskPool, RankedBuffer, TaskId, Trajectory, Transition};
use sami_core::rl::{
    actor_loss_on_tape, bellman_target, critic_loss_on_tape, tune_entropy, update_targets, SacOptimizers,
    TransitionBatch,
};

use crate::agent::{rollout, stream, Agent, AgentPolicy, Checkpoint, Policy, RandomPolicy, Stream};
use crate::config::{ContrastiveMode, ExperimentConfig, Variant};
use crate::error::Result;
use crate::eval::{meta_test, probe, SplitResult};
use crate::io::ResultHeader;

/// Averages over the gradient steps of one training round.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundMetrics {
    pub env_steps: u64,
    pub episodes: u64,
    pub gradient_steps: u64,
    pub critic_loss: f64,
    pub actor_loss: f64,
    pub entropy_alpha: f64,
    pub policy_entropy: f64,
    pub contrastive_loss: Option<f64>,
    /// Mean contrastive estimate over the round's batches.
    pub estimate: Option<f64>,
    pub buffer_transitions: usize,
    pub recent_return: f64,
    pub recent_success: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeRecord {
    pub env_steps: u64,
    pub split: SplitName,
    pub success_rate: f64,
    pub mean_return: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimatorDiagnostics {
    pub log_k: f64,
    /// `(env_steps, mean estimate)` per round with a contrastive term.
    pub estimates: Vec<(u64, f64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub header: ResultHeader,
    pub config: ExperimentConfig,
    pub variant: Variant,
    pub seed: u64,
    pub env_steps: u64,
    pub episodes: u64,
    pub gradient_steps: u64,
    /// `(env_steps, stored transitions)` after each episode.
    pub buffer_fill: Vec<(u64, usize)>,
    pub probes: Vec<ProbeRecord>,
    pub evaluation: Vec<SplitResult>,
    pub diagnostics: EstimatorDiagnostics,
    pub wall_clock_seconds: f64,
}

impl RunResult {
    /// The result with timing zeroed; equal across repeated runs.
    pub fn without_timing(&self) -> Self {
        Self {
            wall_clock_seconds: 0.0,
            ..self.clone()
        }
    }

    pub fn split(&self, name: SplitName) -> Option<&SplitResult> {
        self.evaluation.iter().find(|r| r.split == name)
    }
}

pub struct TrainOutput {
    pub agent: Agent,
    pub checkpoint: Checkpoint,
    pub result: RunResult,
    pub metrics: Vec<RoundMetrics>,
}

/// Which evaluations to run after training.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TrainOptions {
    pub probes: bool,
    pub final_evaluation: bool,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            probes: true,
            final_evaluation: true,
        }
    }
}

/// One contrastive batch: a query trajectory and its `K` keys, the positive
/// first.
struct ContrastiveItem<'b> {
    query: &'b Trajectory,
    keys: Vec<&'b Trajectory>,
}

#[derive(Default)]
struct StepStats {
    critic_loss: f64,
    actor_loss: f64,
    mean_log_prob: f64,
    contrastive_loss: Option<f64>,
    estimate: Option<f64>,
}

/// Deduplicated encoder input sequences, keyed by trajectory identity.
#[derive(Default)]
struct Sequences {
    index: HashMap<*const Trajectory, usize>,
    inputs: Vec<Vec<Vec<f64>>>,
}

impl Sequences {
    fn slot(&mut self, t: &Trajectory) -> usize {
        let key = t as *const Trajectory;
        if let Some(&i) = self.index.get(&key) {
            return i;
        }
        self.inputs.push(t.encoder_inputs());
        self.index.insert(key, self.inputs.len() - 1);
        self.inputs.len() - 1
    }

    fn as_slices(&self) -> Vec<&[Vec<f64>]> {
        self.inputs.iter().map(Vec::as_slice).collect()
    }
}

fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Result<Tensor> {
    let data = (0..rows * cols).map(|_| rng.sample(StandardNormal)).collect();
    Ok(Tensor::matrix(rows, cols, data)?)
}

fn rows_of(t: &Tensor, start: usize, end: usize) -> Result<Tensor> {
    let c = t.cols();
    Ok(Tensor::matrix(end - start, c, t.data()[start * c..end * c].to_vec())?)
}

fn adam_step<P: ParamSet>(opt: &mut AdamState, params: &mut P, grads: &[Tensor]) -> Result<()> {
    let names = params.param_names();
    let mut ps = params.params_mut();
    opt.step(&mut ps, grads, &names)?;
    Ok(())
}

struct Trainer<'c> {
    cfg: &'c ExperimentConfig,
    agent: Agent,
    sac_opt: SacOptimizers,
    encoder_opt: AdamState,
    contrastive_opt: AdamState,
    target_entropy: f64,
    buffer_rng: ChaCha8Rng,
    update_rng: ChaCha8Rng,
    contrastive_rng: ChaCha8Rng,
}

impl<'c> Trainer<'c> {
    fn new(cfg: &'c ExperimentConfig, seed: u64) -> Self {
        let agent = Agent::new(cfg, &mut stream(seed, Stream::Init));
        let sac_opt = SacOptimizers::new(&agent.sac, &cfg.sac);
        let enc_adam = AdamConfig {
            lr: cfg.encoder.learning_rate,
            ..AdamConfig::default()
        };
        let encoder_opt = AdamState::new(&agent.encoder.params(), enc_adam);
        let contrastive_opt = AdamState::new(&agent.encoder.params(), enc_adam);
        Self {
            target_entropy: cfg.sac.target_entropy_for(agent.sac.action_dim),
            cfg,
            agent,
            sac_opt,
            encoder_opt,
            contrastive_opt,
            buffer_rng: stream(seed, Stream::Buffer),
            update_rng: stream(seed, Stream::Update),
            contrastive_rng: stream(seed, Stream::Contrastive),
        }
    }

    fn contrastive_plan<'b>(&mut self, buffer: &'b RankedBuffer) -> Result<Vec<ContrastiveItem<'b>>> {
        let mode = self.cfg.variant.spec().contrastive;
        let k = self.cfg.contrastive.batch_size;
        let all_tasks = buffer.tasks();
        let cross_needed = matches!(
            mode,
            ContrastiveMode::InfonceCrossTask | ContrastiveMode::SancePlusInfonce
        );
        if cross_needed && all_tasks.len() < 2 {
            return Ok(Vec::new());
        }
        let eligible: Vec<TaskId> = all_tasks.into_iter().filter(|&t| buffer.task_len(t) >= 2).collect();
        if eligible.is_empty() {
            return Ok(Vec::new());
        }
        let rng = &mut self.contrastive_rng;
        let chosen: Vec<TaskId> = match self.cfg.contrastive.tasks_per_step {
            Some(n) if n < eligible.len() => {
                let mut idx = index::sample(rng, eligible.len(), n).into_vec();
                idx.sort_unstable();
                idx.into_iter().map(|i| eligible[i]).collect()
            }
            _ => eligible,
        };
        let mut items = Vec::with_capacity(chosen.len());
        for task in chosen {
            let item = match mode {
                ContrastiveMode::None => unreachable!("plan requested without a contrastive term"),
                ContrastiveMode::InfonceCrossTask => {
                    let query = buffer.sample_from_task(task, rng)?;
                    let positive = buffer.sample_from_task(task, rng)?;
                    let mut keys = vec![positive];
                    keys.extend(buffer.sample_cross_task(task, k - 1, CrossTaskPool::Whole, rng)?);
                    ContrastiveItem { query, keys }
                }
                ContrastiveMode::SanceIntraTask => {
                    let s = buffer.sample_skill_aware(task, k, rng)?;
                    let mut keys = vec![s.positive];
                    keys.extend(s.negatives);
                    ContrastiveItem { query: s.query, keys }
                }
                ContrastiveMode::SancePlusInfonce => {
                    let intra = (k - 1).div_ceil(2);
                    let s = buffer.sample_skill_aware(task, intra + 1, rng)?;
                    let mut keys = vec![s.positive];
                    keys.extend(s.negatives);
                    let cross = k - 1 - intra;
                    if cross > 0 {
                        keys.extend(buffer.sample_cross_task(task, cross, CrossTaskPool::LowReturn, rng)?);
                    }
                    ContrastiveItem { query: s.query, keys }
                }
            };
            items.push(item);
        }
        Ok(items)
    }

    /// Final-step momentum-encoder embeddings of every key, stacked in plan
    /// order.
    fn key_embeddings(momentum: &EncoderParams, plan: &[ContrastiveItem<'_>]) -> Result<Tensor> {
        let mut seqs = Sequences::default();
        let mut picks = Vec::new();
        for item in plan {
            for t in &item.keys {
                let s = seqs.slot(t);
                picks.push((s, t.len()));
            }
        }
        let mut tape = Tape::new();
        let vars = momentum.bind(&mut tape, false);
        let slices = seqs.as_slices();
        let out = encode_batch_on_tape(&mut tape, momentum, &vars, &slices, &picks)?;
        Ok(tape.value(out).clone())
    }

    /// Adds the contrastive losses for `plan` to `tape`. `query_rows[j]` is
    /// the row of `embeddings` holding item `j`'s query embedding.
    fn contrastive_on(
        &self,
        tape: &mut Tape<'_>,
        embeddings: Var,
        query_rows: &[usize],
        plan: &[ContrastiveItem<'_>],
        keys: Tensor,
    ) -> Result<(Var, f64)> {
        let mode = self.cfg.variant.spec().contrastive;
        let soft = SoftSanceConfig {
            similarity: self.cfg.contrastive.similarity,
            distance: self.cfg.contrastive.distance,
            detach_multiplier: self.cfg.contrastive.detach_multiplier,
        };
        let all_keys = tape.constant(keys);
        let mut offset = 0;
        let mut total: Option<Var> = None;
        let mut estimate = 0.0;
        for (item, &row) in plan.iter().zip(query_rows) {
            let k = item.keys.len();
            let rows: Vec<usize> = (offset..offset + k).collect();
            offset += k;
            let q = tape.gather_rows(embeddings, &[row])?;
            let keys = tape.gather_rows(all_keys, &rows)?;
            let value = contrastive_on_tape(tape, q, keys, &soft.similarity)?;
            estimate += tape.scalar(value);
            let loss = match mode {
                ContrastiveMode::InfonceCrossTask => tape.neg(value),
                _ => {
                    let positives = tape.pick_rows(&[(q, 0), (keys, 0)])?;
                    let negs: Vec<usize> = (1..k).collect();
                    let negatives = tape.gather_rows(keys, &negs)?;
                    soft_sance_on_tape(tape, positives, negatives, value, &soft)?
                }
            };
            total = Some(match total {
                Some(t) => tape.add(t, loss)?,
                None => loss,
            });
        }
        let n = plan.len() as f64;
        let mean = tape.scale(total.expect("non-empty plan"), 1.0 / n);
        Ok((mean, estimate / n))
    }

    fn gradient_step(&mut self, buffer: &RankedBuffer) -> Result<StepStats> {
        let cfg = self.cfg;
        let b = cfg.training.batch_size;
        let refs = buffer.sample_rl_batch(b, cfg.training.transitions_per_trajectory, &mut self.buffer_rng)?;
        let trajs: Vec<&Trajectory> = refs
            .iter()
            .map(|r| buffer.get(r.trajectory).expect("sampled id is stored"))
            .collect();
        let steps: Vec<&Transition> = refs.iter().zip(&trajs).map(|(r, t)| &t.steps[r.step]).collect();
        let batch = TransitionBatch::from_transitions(&steps)?;

        let plan = if cfg.contrastive_active() {
            self.contrastive_plan(buffer)?
        } else {
            Vec::new()
        };
        let keys = if plan.is_empty() {
            None
        } else {
            Some(Self::key_embeddings(&self.agent.momentum.params, &plan)?)
        };
        let combined = cfg.contrastive.combined_backward;

        let mut seqs = Sequences::default();
        let mut picks: Vec<(usize, usize)> = Vec::with_capacity(2 * b + plan.len());
        let slots: Vec<usize> = trajs.iter().map(|t| seqs.slot(t)).collect();
        picks.extend(slots.iter().zip(&refs).map(|(&s, r)| (s, r.step)));
        picks.extend(slots.iter().zip(&refs).map(|(&s, r)| (s, r.step + 1)));
        let mut query_rows = Vec::new();
        if combined {
            for item in &plan {
                query_rows.push(picks.len());
                let s = seqs.slot(item.query);
                picks.push((s, item.query.len()));
            }
        }

        let a_dim = self.agent.sac.action_dim;
        let eps_next = gaussian(&mut self.update_rng, b, a_dim)?;
        let eps_actor = gaussian(&mut self.update_rng, b, a_dim)?;
        let alpha = self.agent.sac.alpha();

        let mut stats = StepStats::default();
        let (enc_grads, c1_grads, c2_grads, actor_grads) = {
            let agent = &self.agent;
            let mut tape = Tape::new();
            let enc_vars = agent.encoder.bind(&mut tape, true);
            let slices = seqs.as_slices();
            let emb_all = encode_batch_on_tape(&mut tape, &agent.encoder, &enc_vars, &slices, &picks)?;
            let current: Vec<usize> = (0..b).collect();
            let emb_t = tape.gather_rows(emb_all, &current)?;
            let emb_next = rows_of(tape.value(emb_all), b, 2 * b)?;
            let target = bellman_target(&agent.sac, &cfg.sac, &batch, &emb_next, &eps_next)?;

            let c1 = agent.sac.critic1.bind(&mut tape, true);
            let c2 = agent.sac.critic2.bind(&mut tape, true);
            let s = tape.constant_ref(&batch.states);
            let a = tape.constant_ref(&batch.actions);
            let y = tape.constant(target);
            let critic = critic_loss_on_tape(&mut tape, &c1, &c2, s, a, emb_t, y)?;

            let actor_vars = agent.sac.actor.bind(&mut tape, true);
            let c1_const = agent.sac.critic1.bind(&mut tape, false);
            let c2_const = agent.sac.critic2.bind(&mut tape, false);
            let emb_actor = if cfg.sac.encoder_from_actor {
                emb_t
            } else {
                tape.detach(emb_t)
            };
            let eps = tape.constant(eps_actor);
            let (actor, logp) = actor_loss_on_tape(
                &mut tape,
                &actor_vars,
                &c1_const,
                &c2_const,
                s,
                emb_actor,
                eps,
                alpha,
                &cfg.sac,
            )?;
            stats.critic_loss = tape.scalar(critic);
            stats.actor_loss = tape.scalar(actor);
            let lp = tape.value(logp).data();
            stats.mean_log_prob = lp.iter().sum::<f64>() / lp.len() as f64;

            let mut root = tape.add(critic, actor)?;
            if let (true, Some(keys)) = (combined, keys.clone()) {
                let (loss, estimate) = self.contrastive_on(&mut tape, emb_all, &query_rows, &plan, keys)?;
                stats.contrastive_loss = Some(tape.scalar(loss));
                stats.estimate = Some(estimate);
                let weighted = tape.scale(loss, cfg.contrastive.alpha);
                root = tape.add(root, weighted)?;
            }
            let mut grads = tape.backward(root)?;
            (
                collect_grads(&mut grads, &enc_vars, &agent.encoder.params()),
                collect_grads(&mut grads, &c1, &agent.sac.critic1.params()),
                collect_grads(&mut grads, &c2, &agent.sac.critic2.params()),
                collect_grads(&mut grads, &actor_vars, &agent.sac.actor.params()),
            )
        };

        let sac = &mut self.agent.sac;
        {
            let names: Vec<String> = sac
                .critic1
                .param_names()
                .into_iter()
                .map(|n| format!("critic1.{n}"))
                .chain(sac.critic2.param_names().into_iter().map(|n| format!("critic2.{n}")))
                .collect();
            let mut ps: Vec<&mut Tensor> = sac.critic1.params_mut();
            ps.extend(sac.critic2.params_mut());
            let grads: Vec<Tensor> = c1_grads.into_iter().chain(c2_grads).collect();
            self.sac_opt.critic.step(&mut ps, &grads, &names)?;
        }
        adam_step(&mut self.sac_opt.actor, &mut sac.actor, &actor_grads)?;
        adam_step(&mut self.encoder_opt, &mut self.agent.encoder, &enc_grads)?;
        if cfg.sac.auto_entropy {
            tune_entropy(sac, &mut self.sac_opt.alpha, stats.mean_log_prob, self.target_entropy)?;
        }

        if let (false, Some(keys)) = (combined, keys) {
            let grads = {
                let agent = &self.agent;
                let mut seqs = Sequences::default();
                let picks: Vec<(usize, usize)> = plan.iter().map(|i| (seqs.slot(i.query), i.query.len())).collect();
                let rows: Vec<usize> = (0..plan.len()).collect();
                let mut tape = Tape::new();
                let enc_vars = agent.encoder.bind(&mut tape, true);
                let slices = seqs.as_slices();
                let emb = encode_batch_on_tape(&mut tape, &agent.encoder, &enc_vars, &slices, &picks)?;
                let (loss, estimate) = self.contrastive_on(&mut tape, emb, &rows, &plan, keys)?;
                stats.contrastive_loss = Some(tape.scalar(loss));
                stats.estimate = Some(estimate);
                let weighted = tape.scale(loss, cfg.contrastive.alpha);
                let mut grads = tape.backward(weighted)?;
                collect_grads(&mut grads, &enc_vars, &agent.encoder.params())
            };
            adam_step(&mut self.contrastive_opt, &mut self.agent.encoder, &grads)?;
        }

        update_targets(&mut self.agent.sac, &cfg.sac)?;
        self.agent.momentum.momentum_update(&self.agent.encoder)?;
        Ok(stats)
    }
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

/// Runs meta-training for `seed`, reporting each round to `on_round`.
pub fn meta_train_with(
    config: &ExperimentConfig,
    seed: u64,
    options: TrainOptions,
    on_round: &mut dyn FnMut(&RoundMetrics),
) -> Result<TrainOutput> {
    config.validate()?;
    let started = Instant::now();
    let cfg = config;
    let t = &cfg.training;
    let mut trainer = Trainer::new(cfg, seed);
    let mut task_rng = stream(seed, Stream::Task);
    let mut env_rng = stream(seed, Stream::Env);
    let mut actor_rng = stream(seed, Stream::Actor);
    let mut probe_rng = stream(seed, Stream::Probe);
    let mut buffer = RankedBuffer::new(cfg.replay.clone())?;
    let train_split = &cfg.splits.train;

    let mut env_steps = 0u64;
    let mut episodes = 0u64;
    let mut gradient_steps = 0u64;
    let mut next_round = t.train_every;
    let mut next_probe = t.probe_every;
    let mut fill = Vec::new();
    let mut probes = Vec::new();
    let mut metrics = Vec::new();
    let mut estimates = Vec::new();
    let mut recent: std::collections::VecDeque<(f64, bool)> = std::collections::VecDeque::new();

    while env_steps < t.total_timesteps {
        let features = sample_task(train_split, &mut task_rng)?;
        let task_id = train_split.task_id(&features).expect("sampled from the train split");
        let episode = if env_steps < t.learning_starts {
            rollout(
                &mut RandomPolicy,
                task_id,
                &features,
                &cfg.physics,
                &mut env_rng,
                &mut actor_rng,
            )?
        } else {
            let mut policy = AgentPolicy::new(&trainer.agent, &cfg.sac, false);
            rollout(
                &mut policy,
                task_id,
                &features,
                &cfg.physics,
                &mut env_rng,
                &mut actor_rng,
            )?
        };
        env_steps += episode.trajectory.len() as u64;
        episodes += 1;
        recent.push_back((episode.trajectory.episode_return, episode.success));
        if recent.len() > 100 {
            recent.pop_front();
        }
        buffer.push(episode.trajectory)?;
        fill.push((env_steps, buffer.num_transitions()));

        while env_steps >= next_round {
            next_round += t.train_every;
            if env_steps < t.learning_starts {
                continue;
            }
            let mut round = Vec::with_capacity(t.gradient_steps);
            for _ in 0..t.gradient_steps {
                round.push(trainer.gradient_step(&buffer)?);
                gradient_steps += 1;
            }
            let estimate = round
                .iter()
                .any(|s| s.estimate.is_some())
                .then(|| mean(round.iter().filter_map(|s| s.estimate)));
            if let Some(e) = estimate {
                estimates.push((env_steps, e));
            }
            let m = RoundMetrics {
                env_steps,
                episodes,
                gradient_steps,
                critic_loss: mean(round.iter().map(|s| s.critic_loss)),
                actor_loss: mean(round.iter().map(|s| s.actor_loss)),
                entropy_alpha: trainer.agent.sac.alpha(),
                policy_entropy: -mean(round.iter().map(|s| s.mean_log_prob)),
                contrastive_loss: round
                    .iter()
                    .any(|s| s.contrastive_loss.is_some())
                    .then(|| mean(round.iter().filter_map(|s| s.contrastive_loss))),
                estimate,
                buffer_transitions: buffer.num_transitions(),
                recent_return: mean(recent.iter().map(|r| r.0)),
                recent_success: mean(recent.iter().map(|r| f64::from(u8::from(r.1)))),
            };
            on_round(&m);
            metrics.push(m);
        }

        while env_steps >= next_probe {
            next_probe += t.probe_every;
            if !options.probes {
                continue;
            }
            for split in SplitName::ALL {
                let mut policy = AgentPolicy::new(&trainer.agent, &cfg.sac, true);
                let r = probe(
                    &mut policy,
                    cfg.splits.get(split),
                    &cfg.physics,
                    t.probe_episodes,
                    &mut probe_rng,
                )?;
                probes.push(ProbeRecord {
                    env_steps,
                    split,
                    success_rate: r.success_rate,
                    mean_return: r.mean_return,
                });
            }
        }
    }

    let agent = trainer.agent;
    let mut evaluation = Vec::new();
    if options.final_evaluation {
        let mut eval_rng = stream(seed, Stream::Eval);
        for split in SplitName::ALL {
            let mut policy = AgentPolicy::new(&agent, &cfg.sac, true);
            evaluation.push(meta_test(
                &mut policy,
                cfg,
                split,
                t.eval_episodes_per_task,
                &mut eval_rng,
            )?);
        }
    }
    let checkpoint = Checkpoint::from_agent(&agent, cfg, seed, env_steps)?;
    let result = RunResult {
        header: ResultHeader::new(cfg, seed)?,
        config: cfg.clone(),
        variant: cfg.variant,
        seed,
        env_steps,
        episodes,
        gradient_steps,
        buffer_fill: fill,
        probes,
        evaluation,
        diagnostics: EstimatorDiagnostics {
            log_k: (cfg.contrastive.batch_size as f64).ln(),
            estimates,
        },
        wall_clock_seconds: started.elapsed().as_secs_f64(),
    };
    Ok(TrainOutput {
        agent,
        checkpoint,
        result,
        metrics,
    })
}

pub fn meta_train(config: &ExperimentConfig, seed: u64) -> Result<TrainOutput> {
    meta_train_with(config, seed, TrainOptions::default(), &mut |_| {})
}

/// Evaluates a trained agent without further updates.
pub fn evaluate_agent(
    agent: &Agent,
    config: &ExperimentConfig,
    split: SplitName,
    episodes_per_task: usize,
    rng: &mut ChaCha8Rng,
) -> Result<SplitResult> {
    let mut policy = AgentPolicy::new(agent, &config.sac, true);
    meta_test(&mut policy as &mut dyn Policy, config, split, episodes_per_task, rng)
}
