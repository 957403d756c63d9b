//! Agent parameters, checkpoints, policies and episode rollouts.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use sami_core::encoder::{encode_step, ContextEmbedding, EncoderParams, EncoderState, MomentumEncoder};
use sami_core::envs::{
    self, crippled_step, reset, scripted_lift, scripted_oracle, scripted_push, BlockRelocateState, Physics,
    TaskFeatures, ACTION_DIM, OBS_DIM,
};
use sami_core::numerics::TensorRecord;
use sami_core::replay::{TaskId, Trajectory, Transition};
use sami_core::rl::{self, SacConfig, SacParams};

use crate::config::ExperimentConfig;
use crate::error::{HarnessError, Result};
use crate::io::{read_json, write_json, ResultHeader};

/// `[s_t, a_{t−1}, r_{t−1}]`.
pub const ENCODER_INPUT_DIM: usize = OBS_DIM + ACTION_DIM + 1;

/// Independent random streams derived from one run seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stream {
    Init = 0,
    Task = 1,
    Env = 2,
    Actor = 3,
    Buffer = 4,
    Update = 5,
    Contrastive = 6,
    Probe = 7,
    Eval = 8,
}

pub fn stream(seed: u64, purpose: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(purpose as u64);
    rng
}

#[derive(Clone, Debug, PartialEq)]
pub struct Agent {
    pub encoder: EncoderParams,
    pub momentum: MomentumEncoder,
    pub sac: SacParams,
}

impl Agent {
    pub fn new<R: Rng + ?Sized>(config: &ExperimentConfig, rng: &mut R) -> Self {
        let e = &config.encoder;
        let encoder = EncoderParams::new(ENCODER_INPUT_DIM, e.hidden_dim, e.embedding_dim, rng);
        let momentum = MomentumEncoder::new(&encoder, e.momentum_rate);
        let sac = SacParams::new(OBS_DIM, ACTION_DIM, e.embedding_dim, &config.sac, rng);
        Self { encoder, momentum, sac }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Checkpoint {
    pub header: ResultHeader,
    pub config: ExperimentConfig,
    pub env_steps: u64,
    pub encoder: TensorRecord,
    pub momentum: TensorRecord,
    pub sac: TensorRecord,
}

impl Checkpoint {
    pub fn from_agent(agent: &Agent, config: &ExperimentConfig, seed: u64, env_steps: u64) -> Result<Self> {
        Ok(Self {
            header: ResultHeader::new(config, seed)?,
            config: config.clone(),
            env_steps,
            encoder: agent.encoder.to_record(),
            momentum: agent.momentum.params.to_record(),
            sac: agent.sac.to_record(),
        })
    }

    pub fn to_agent(&self) -> Result<Agent> {
        self.config.validate()?;
        let mut agent = Agent::new(&self.config, &mut ChaCha8Rng::seed_from_u64(0));
        agent.encoder.load_record(&self.encoder)?;
        agent.momentum.params.load_record(&self.momentum)?;
        agent.sac.load_record(&self.sac)?;
        Ok(agent)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ckpt: Self = read_json(path)?;
        ckpt.to_agent()
            .map_err(|e| HarnessError::Checkpoint(format!("{}: {e}", path.display())))?;
        Ok(ckpt)
    }
}

/// Acts in the block-relocate environment one step at a time.
pub trait Policy {
    /// Resets per-episode state. Only scripted substitutes may read the
    /// features.
    fn begin_episode(&mut self, features: &TaskFeatures) -> Result<()>;

    fn act(
        &mut self,
        state: &BlockRelocateState,
        observation: &[f64],
        rng: &mut ChaCha8Rng,
    ) -> Result<[f64; ACTION_DIM]>;

    /// Records the executed action and its reward.
    fn observe(&mut self, _action: &[f64], _reward: f64) {}

    /// Embedding after the terminal observation, for policies that keep one.
    fn final_embedding(&mut self, _observation: &[f64]) -> Result<Option<ContextEmbedding>> {
        Ok(None)
    }
}

/// The learned agent: the context embedding is refreshed every step from the
/// growing episode prefix.
pub struct AgentPolicy<'a> {
    agent: &'a Agent,
    sac: &'a SacConfig,
    deterministic: bool,
    state: EncoderState,
    prev_action: [f64; ACTION_DIM],
    prev_reward: f64,
}

impl<'a> AgentPolicy<'a> {
    pub fn new(agent: &'a Agent, sac: &'a SacConfig, deterministic: bool) -> Self {
        Self {
            agent,
            sac,
            deterministic,
            state: EncoderState::zeros(agent.encoder.hidden_dim()),
            prev_action: [0.0; ACTION_DIM],
            prev_reward: 0.0,
        }
    }

    fn advance(&mut self, observation: &[f64]) -> Result<ContextEmbedding> {
        let mut input = Vec::with_capacity(ENCODER_INPUT_DIM);
        input.extend_from_slice(observation);
        input.extend_from_slice(&self.prev_action);
        input.push(self.prev_reward);
        let (state, emb) = encode_step(&self.agent.encoder, &self.state, &input)?;
        self.state = state;
        Ok(emb)
    }
}

impl Policy for AgentPolicy<'_> {
    fn begin_episode(&mut self, _features: &TaskFeatures) -> Result<()> {
        self.state = EncoderState::zeros(self.agent.encoder.hidden_dim());
        self.prev_action = [0.0; ACTION_DIM];
        self.prev_reward = 0.0;
        Ok(())
    }

    fn act(
        &mut self,
        _state: &BlockRelocateState,
        observation: &[f64],
        rng: &mut ChaCha8Rng,
    ) -> Result<[f64; ACTION_DIM]> {
        let emb = self.advance(observation)?;
        let out = rl::act(&self.agent.sac, self.sac, observation, &emb, self.deterministic, rng)?;
        let mut action = [0.0; ACTION_DIM];
        action.copy_from_slice(&out.action);
        Ok(action)
    }

    fn observe(&mut self, action: &[f64], reward: f64) {
        self.prev_action.copy_from_slice(action);
        self.prev_reward = reward;
    }

    fn final_embedding(&mut self, observation: &[f64]) -> Result<Option<ContextEmbedding>> {
        self.advance(observation).map(Some)
    }
}

pub struct RandomPolicy;

impl Policy for RandomPolicy {
    fn begin_episode(&mut self, _features: &TaskFeatures) -> Result<()> {
        Ok(())
    }

    fn act(&mut self, _: &BlockRelocateState, _: &[f64], rng: &mut ChaCha8Rng) -> Result<[f64; ACTION_DIM]> {
        Ok(std::array::from_fn(|_| rng.random_range(-1.0..=1.0)))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScriptedKind {
    Push,
    Lift,
    Oracle,
}

impl std::str::FromStr for ScriptedKind {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "push" => Ok(Self::Push),
            "lift" => Ok(Self::Lift),
            "oracle" => Ok(Self::Oracle),
            other => Err(HarnessError::Config(format!("unknown scripted policy `{other}`"))),
        }
    }
}

/// Hand-written controllers standing in for a checkpoint.
pub struct ScriptedPolicy {
    pub kind: ScriptedKind,
    pub physics: Physics,
    features: Option<TaskFeatures>,
}

impl ScriptedPolicy {
    pub fn new(kind: ScriptedKind, physics: Physics) -> Self {
        Self {
            kind,
            physics,
            features: None,
        }
    }
}

impl Policy for ScriptedPolicy {
    fn begin_episode(&mut self, features: &TaskFeatures) -> Result<()> {
        self.features = Some(features.clone());
        Ok(())
    }

    fn act(&mut self, state: &BlockRelocateState, _: &[f64], _: &mut ChaCha8Rng) -> Result<[f64; ACTION_DIM]> {
        Ok(match self.kind {
            ScriptedKind::Push => scripted_push(state),
            ScriptedKind::Lift => scripted_lift(state, &self.physics),
            ScriptedKind::Oracle => {
                let f = self
                    .features
                    .as_ref()
                    .ok_or_else(|| HarnessError::Config("scripted policy used before begin_episode".into()))?;
                scripted_oracle(state, f, &self.physics)
            }
        })
    }
}

#[derive(Clone, Debug)]
pub struct Episode {
    pub trajectory: Trajectory,
    pub success: bool,
    pub final_embedding: Option<ContextEmbedding>,
}

/// Runs one episode of `features` with `policy`, drawing the initial state
/// from `env_rng` and action noise from `act_rng`.
pub fn rollout<P: Policy + ?Sized>(
    policy: &mut P,
    task_id: TaskId,
    features: &TaskFeatures,
    physics: &Physics,
    env_rng: &mut ChaCha8Rng,
    act_rng: &mut ChaCha8Rng,
) -> Result<Episode> {
    policy.begin_episode(features)?;
    let mut state = reset(features, physics, env_rng)?;
    let mut obs = state.observation(physics);
    let mut steps = Vec::with_capacity(physics.episode_len);
    let success = loop {
        let action = policy.act(&state, &obs, act_rng)?;
        let out = crippled_step(&state, &action, features, physics)?;
        policy.observe(&action, out.reward);
        let next_obs = out.state.observation(physics);
        steps.push(Transition {
            state: obs,
            action: action.to_vec(),
            reward: out.reward,
            next_state: next_obs.clone(),
            done: out.success,
        });
        state = out.state;
        obs = next_obs;
        if out.done {
            break out.success;
        }
    };
    let final_embedding = policy.final_embedding(&obs)?;
    let mut trajectory = Trajectory::new(task_id, features.clone(), steps)?;
    trajectory.skill_label = Some(envs::classify_skill(&trajectory, physics));
    Ok(Episode {
        trajectory,
        success,
        final_embedding,
    })
}
