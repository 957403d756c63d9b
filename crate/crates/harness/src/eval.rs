//! Frozen-parameter evaluation over a split's task cells.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use sami_core::encoder::ContextEmbedding;
use sami_core::envs::{sample_task, Physics, Skill, SplitName, TaskFeatures, TaskSplit};
use sami_core::replay::TaskId;

use crate::agent::{rollout, Policy};
use crate::config::ExperimentConfig;
use crate::error::{HarnessError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub split: SplitName,
    pub features: TaskFeatures,
    pub task_id: TaskId,
    pub episode_return: f64,
    pub success: bool,
    pub skill: Skill,
    pub length: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkillHistogram {
    pub push: usize,
    pub lift: usize,
    pub other: usize,
}

impl SkillHistogram {
    pub fn add(&mut self, skill: Skill) {
        match skill {
            Skill::Push => self.push += 1,
            Skill::Lift => self.lift += 1,
            Skill::Other => self.other += 1,
        }
    }

    pub fn total(&self) -> usize {
        self.push + self.lift + self.other
    }

    pub fn merge(&mut self, other: &SkillHistogram) {
        self.push += other.push;
        self.lift += other.lift;
        self.other += other.other;
    }

    pub fn fraction(&self, skill: Skill) -> f64 {
        let n = match skill {
            Skill::Push => self.push,
            Skill::Lift => self.lift,
            Skill::Other => self.other,
        };
        if self.total() == 0 {
            0.0
        } else {
            n as f64 / self.total() as f64
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub split: SplitName,
    pub mass: f64,
    pub friction: f64,
    pub episodes: usize,
    pub successes: usize,
    pub success_rate: f64,
    pub mean_return: f64,
    pub skills: SkillHistogram,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitResult {
    pub split: SplitName,
    pub episodes_per_task: usize,
    pub cells: Vec<CellSummary>,
    /// Mean of the per-cell success rates.
    pub success_rate: f64,
    pub mean_return: f64,
    pub skills: SkillHistogram,
    pub episodes: Vec<EpisodeRecord>,
}

impl SplitResult {
    fn from_episodes(split: &TaskSplit, episodes_per_task: usize, episodes: Vec<EpisodeRecord>) -> Self {
        let mut cells: Vec<CellSummary> = split
            .cells()
            .into_iter()
            .map(|(mass, friction)| CellSummary {
                split: split.name,
                mass,
                friction,
                episodes: 0,
                successes: 0,
                success_rate: 0.0,
                mean_return: 0.0,
                skills: SkillHistogram::default(),
            })
            .collect();
        for e in &episodes {
            let i = split
                .cell_index(&e.features)
                .expect("episode drawn from the split grid");
            let c = &mut cells[i];
            c.episodes += 1;
            c.successes += usize::from(e.success);
            c.mean_return += e.episode_return;
            c.skills.add(e.skill);
        }
        let mut skills = SkillHistogram::default();
        for c in &mut cells {
            if c.episodes > 0 {
                c.success_rate = c.successes as f64 / c.episodes as f64;
                c.mean_return /= c.episodes as f64;
            }
            skills.merge(&c.skills);
        }
        let visited: Vec<&CellSummary> = cells.iter().filter(|c| c.episodes > 0).collect();
        let n = visited.len().max(1) as f64;
        let success_rate = visited.iter().map(|c| c.success_rate).sum::<f64>() / n;
        let mean_return = visited.iter().map(|c| c.mean_return).sum::<f64>() / n;
        Self {
            split: split.name,
            episodes_per_task,
            cells,
            success_rate,
            mean_return,
            skills,
            episodes,
        }
    }
}

fn record(split: &TaskSplit, ep: &crate::agent::Episode) -> EpisodeRecord {
    EpisodeRecord {
        split: split.name,
        features: ep.trajectory.features.clone(),
        task_id: ep.trajectory.task_id,
        episode_return: ep.trajectory.episode_return,
        success: ep.success,
        skill: ep.trajectory.skill_label.unwrap_or(Skill::Other),
        length: ep.trajectory.len(),
    }
}

/// Features for one episode of cell `(mass, friction)`, with a fresh
/// crippled mask when the split cripples actuators.
fn cell_features(split: &TaskSplit, mass: f64, friction: f64, rng: &mut ChaCha8Rng) -> Result<TaskFeatures> {
    let single = TaskSplit {
        name: split.name,
        grid: vec![sami_core::envs::GridBlock {
            mass: vec![mass],
            friction: vec![friction],
        }],
        crippled_count: split.crippled_count,
    };
    Ok(sample_task(&single, rng)?)
}

fn episode_rngs(rng: &mut ChaCha8Rng) -> (ChaCha8Rng, ChaCha8Rng) {
    let seed: u64 = rng.random();
    let env = ChaCha8Rng::seed_from_u64(seed);
    let mut act = ChaCha8Rng::seed_from_u64(seed);
    act.set_stream(1);
    (env, act)
}

/// Evaluation episodes together with their final-step embeddings.
pub struct DetailedSplit {
    pub result: SplitResult,
    pub embeddings: Vec<Option<ContextEmbedding>>,
}

/// `episodes_per_task` episodes in every cell of `split`, no parameter
/// updates. Identical inputs give identical results.
pub fn meta_test_detailed<P: Policy + ?Sized>(
    policy: &mut P,
    split: &TaskSplit,
    physics: &Physics,
    episodes_per_task: usize,
    rng: &mut ChaCha8Rng,
) -> Result<DetailedSplit> {
    split.validate()?;
    if episodes_per_task == 0 {
        return Err(HarnessError::Config("episodes_per_task must be positive".into()));
    }
    let mut episodes = Vec::new();
    let mut embeddings = Vec::new();
    for (mass, friction) in split.cells() {
        for _ in 0..episodes_per_task {
            let features = cell_features(split, mass, friction, rng)?;
            let task_id = split.task_id(&features).expect("cell belongs to split");
            let (mut env_rng, mut act_rng) = episode_rngs(rng);
            let ep = rollout(policy, task_id, &features, physics, &mut env_rng, &mut act_rng)?;
            episodes.push(record(split, &ep));
            embeddings.push(ep.final_embedding);
        }
    }
    Ok(DetailedSplit {
        result: SplitResult::from_episodes(split, episodes_per_task, episodes),
        embeddings,
    })
}

pub fn meta_test<P: Policy + ?Sized>(
    policy: &mut P,
    config: &ExperimentConfig,
    split: SplitName,
    episodes_per_task: usize,
    rng: &mut ChaCha8Rng,
) -> Result<SplitResult> {
    Ok(meta_test_detailed(
        policy,
        config.splits.get(split),
        &config.physics,
        episodes_per_task,
        rng,
    )?
    .result)
}

/// Parses a split name, rejecting unknown ones.
pub fn parse_split(name: &str) -> Result<SplitName> {
    Ok(name.parse::<SplitName>()?)
}

/// `episodes` episodes on uniformly drawn cells, for learning-curve probes.
pub fn probe<P: Policy + ?Sized>(
    policy: &mut P,
    split: &TaskSplit,
    physics: &Physics,
    episodes: usize,
    rng: &mut ChaCha8Rng,
) -> Result<SplitResult> {
    let mut out = Vec::with_capacity(episodes);
    for _ in 0..episodes {
        let features = sample_task(split, rng)?;
        let task_id = split.task_id(&features).expect("sampled from split");
        let (mut env_rng, mut act_rng) = episode_rngs(rng);
        let ep = rollout(policy, task_id, &features, physics, &mut env_rng, &mut act_rng)?;
        out.push(record(split, &ep));
    }
    Ok(SplitResult::from_episodes(split, 0, out))
}

/// Success rates keyed by split, for reports.
pub fn success_by_split(results: &[SplitResult]) -> BTreeMap<SplitName, f64> {
    results.iter().map(|r| (r.split, r.success_rate)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::{Agent, AgentPolicy, ScriptedKind, ScriptedPolicy};

    #[test]
    fn random_checkpoint_runs_and_is_deterministic() {
        let mut cfg = ExperimentConfig::default();
        cfg.encoder.hidden_dim = 8;
        cfg.sac.hidden = vec![8];
        let agent = Agent::new(&cfg, &mut ChaCha8Rng::seed_from_u64(0));
        let run = || {
            let mut policy = AgentPolicy::new(&agent, &cfg.sac, true);
            meta_test(
                &mut policy,
                &cfg,
                SplitName::Moderate,
                2,
                &mut ChaCha8Rng::seed_from_u64(5),
            )
            .unwrap()
        };
        let a = run();
        assert_eq!(a, run());
        assert_eq!(a.episodes.len(), 2 * cfg.splits.moderate.cells().len());
        assert!(a.episodes.iter().all(|e| e.episode_return.is_finite()));
        assert!(a.episodes.iter().all(|e| cfg.splits.moderate.contains(&e.features)));
    }

    #[test]
    fn success_rate_is_exact_ratio() {
        let cfg = ExperimentConfig::default();
        let mut policy = ScriptedPolicy::new(ScriptedKind::Push, cfg.physics);
        let r = meta_test(
            &mut policy,
            &cfg,
            SplitName::Train,
            3,
            &mut ChaCha8Rng::seed_from_u64(1),
        )
        .unwrap();
        for c in &r.cells {
            assert_eq!(c.episodes, 3);
            assert_eq!(c.success_rate, c.successes as f64 / 3.0);
            assert_eq!(c.skills.total(), 3);
        }
        let mean = r.cells.iter().map(|c| c.success_rate).sum::<f64>() / r.cells.len() as f64;
        assert_eq!(r.success_rate, mean);
    }

    #[test]
    fn unknown_split_rejected() {
        assert!(parse_split("hard").is_err());
        assert_eq!(parse_split("extreme").unwrap(), SplitName::Extreme);
    }
}
