//! Trajectory storage with per-task return rankings.
//!
//! One physical FIFO store backs two views: uniform transition sampling for
//! the RL losses and return-ranked per-task sampling for the contrastive
//! losses.

use std::collections::{BTreeMap, VecDeque};
use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::envs::{Skill, TaskFeatures};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TaskId(pub u32);

impl std::fmt::Display for TaskId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_state: Vec<f64>,
    /// True only for true terminal states, never for time limits.
    pub done: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub task_id: TaskId,
    pub features: TaskFeatures,
    pub steps: Vec<Transition>,
    pub episode_return: f64,
    pub skill_label: Option<Skill>,
}

impl Trajectory {
    pub fn new(task_id: TaskId, features: TaskFeatures, steps: Vec<Transition>) -> Result<Self> {
        if steps.is_empty() {
            return Err(Error::Empty("trajectory steps"));
        }
        let episode_return = steps.iter().map(|s| s.reward).sum();
        Ok(Self {
            task_id,
            features,
            steps,
            episode_return,
            skill_label: None,
        })
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps.is_empty() {
            return Err(Error::Empty("trajectory steps"));
        }
        let total: f64 = self.steps.iter().map(|s| s.reward).sum();
        if (total - self.episode_return).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "episode return {} differs from reward sum {total}",
                self.episode_return
            )));
        }
        Ok(())
    }

    pub fn state_dim(&self) -> usize {
        self.steps[0].state.len()
    }

    pub fn action_dim(&self) -> usize {
        self.steps[0].action.len()
    }

    /// Encoder input at step `t` in `0..=len`: `[s_t, a_{t-1}, r_{t-1}]`,
    /// with the previous action and reward zero at `t = 0`.
    pub fn encoder_input(&self, t: usize) -> Vec<f64> {
        let n = self.steps.len();
        let state = if t < n {
            &self.steps[t].state
        } else {
            &self.steps[n - 1].next_state
        };
        let mut x = Vec::with_capacity(state.len() + self.action_dim() + 1);
        x.extend_from_slice(state);
        if t == 0 {
            x.extend(std::iter::repeat_n(0.0, self.action_dim() + 1));
        } else {
            let prev = &self.steps[t - 1];
            x.extend_from_slice(&prev.action);
            x.push(prev.reward);
        }
        x
    }

    /// All `len + 1` encoder inputs, ending with the final next state.
    pub fn encoder_inputs(&self) -> Vec<Vec<f64>> {
        (0..=self.steps.len()).map(|t| self.encoder_input(t)).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReplayConfig {
    /// Maximum number of stored transitions.
    pub capacity: usize,
    pub top_fraction: f64,
    pub bottom_fraction: f64,
    /// Draw the positive from the top pool excluding the query itself.
    pub distinct_query_positive: bool,
}

impl Default for ReplayConfig {
    fn default() -> Self {
        Self {
            capacity: 100_000,
            top_fraction: 0.2,
            bottom_fraction: 0.5,
            distinct_query_positive: false,
        }
    }
}

impl ReplayConfig {
    pub fn validate(&self) -> Result<()> {
        let frac_ok = |f: f64| f > 0.0 && f <= 1.0;
        if self.capacity == 0 || !frac_ok(self.top_fraction) || !frac_ok(self.bottom_fraction) {
            return Err(Error::InvalidArgument(format!("replay config out of range: {self:?}")));
        }
        Ok(())
    }
}

fn pool_size(fraction: f64, n: usize) -> usize {
    ((fraction * n as f64 - 1e-9).ceil() as usize).clamp(1, n.max(1))
}

/// Trajectories drawn for one skill-aware contrastive batch.
#[derive(Clone, Debug)]
pub struct SkillAwareSample<'a> {
    pub query: &'a Trajectory,
    pub positive: &'a Trajectory,
    pub negatives: Vec<&'a Trajectory>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CrossTaskPool {
    /// Every stored trajectory of the other tasks.
    Whole,
    /// The low-return pools of the other tasks.
    LowReturn,
}

/// One sampled transition: trajectory id and step index.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TransitionRef {
    pub trajectory: u64,
    pub step: usize,
}

#[derive(Clone, Debug)]
pub struct RankedBuffer {
    config: ReplayConfig,
    trajectories: VecDeque<Trajectory>,
    /// Cumulative transition count at the end of each stored trajectory.
    ends: VecDeque<u64>,
    first_id: u64,
    evicted_transitions: u64,
    transitions: usize,
    pushes: u64,
    evictions: u64,
    /// Per-task ids ordered by return descending, ties by insertion order.
    rankings: BTreeMap<TaskId, Vec<u64>>,
}

impl RankedBuffer {
    pub fn new(config: ReplayConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            trajectories: VecDeque::new(),
            ends: VecDeque::new(),
            first_id: 0,
            evicted_transitions: 0,
            transitions: 0,
            pushes: 0,
            evictions: 0,
            rankings: BTreeMap::new(),
        })
    }

    pub fn config(&self) -> &ReplayConfig {
        &self.config
    }

    pub fn num_trajectories(&self) -> usize {
        self.trajectories.len()
    }

    pub fn num_transitions(&self) -> usize {
        self.transitions
    }

    pub fn pushes(&self) -> u64 {
        self.pushes
    }

    pub fn evictions(&self) -> u64 {
        self.evictions
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn get(&self, id: u64) -> Option<&Trajectory> {
        id.checked_sub(self.first_id)
            .and_then(|i| self.trajectories.get(i as usize))
    }

    fn by_id(&self, id: u64) -> &Trajectory {
        &self.trajectories[(id - self.first_id) as usize]
    }

    pub fn tasks(&self) -> Vec<TaskId> {
        self.rankings.keys().copied().collect()
    }

    pub fn task_len(&self, task: TaskId) -> usize {
        self.rankings.get(&task).map_or(0, Vec::len)
    }

    /// Stored trajectories of `task`, best return first.
    pub fn ranked(&self, task: TaskId) -> Vec<&Trajectory> {
        self.rankings
            .get(&task)
            .map(|ids| ids.iter().map(|&id| self.by_id(id)).collect())
            .unwrap_or_default()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Trajectory> {
        self.trajectories.iter()
    }

    pub fn push(&mut self, traj: Trajectory) -> Result<()> {
        traj.validate()?;
        let id = self.first_id + self.trajectories.len() as u64;
        let len = traj.len();
        let ret = traj.episode_return;
        let task = traj.task_id;
        let last_end = self.ends.back().copied().unwrap_or(self.evicted_transitions);
        self.trajectories.push_back(traj);
        self.ends.push_back(last_end + len as u64);
        self.transitions += len;
        self.pushes += 1;

        let ranking = self.rankings.entry(task).or_default();
        let first_id = self.first_id;
        let trajectories = &self.trajectories;
        let pos = ranking.partition_point(|&other| trajectories[(other - first_id) as usize].episode_return >= ret);
        ranking.insert(pos, id);

        while self.transitions > self.config.capacity && self.trajectories.len() > 1 {
            self.evict_oldest();
        }
        Ok(())
    }

    fn evict_oldest(&mut self) {
        let Some(old) = self.trajectories.pop_front() else {
            return;
        };
        self.ends.pop_front();
        let id = self.first_id;
        self.first_id += 1;
        self.transitions -= old.len();
        self.evicted_transitions += old.len() as u64;
        self.evictions += 1;
        if let Some(ranking) = self.rankings.get_mut(&old.task_id) {
            ranking.retain(|&x| x != id);
            if ranking.is_empty() {
                self.rankings.remove(&old.task_id);
            }
        }
    }

    /// Rank ranges of the positive and negative pools for `task`.
    pub fn pool_ranks(&self, task: TaskId) -> Option<(std::ops::Range<usize>, std::ops::Range<usize>)> {
        let n = self.task_len(task);
        if n == 0 {
            return None;
        }
        let top = pool_size(self.config.top_fraction, n);
        let bottom = pool_size(self.config.bottom_fraction, n);
        Some((0..top, n - bottom..n))
    }

    /// Query is the best trajectory of `task`; the positive is uniform over
    /// the top pool and the `k − 1` negatives are uniform (with replacement)
    /// over the bottom pool.
    pub fn sample_skill_aware<R: Rng + ?Sized>(
        &self,
        task: TaskId,
        k: usize,
        rng: &mut R,
    ) -> Result<SkillAwareSample<'_>> {
        if k < 2 {
            return Err(Error::SampleSize(k));
        }
        let ids = self.rankings.get(&task).map(Vec::as_slice).unwrap_or(&[]);
        let n = ids.len();
        if n < 2 {
            return Err(Error::InsufficientSamples { task: task.0, have: n });
        }
        let (top, bottom) = self.pool_ranks(task).expect("task is populated");
        let pos_rank = if self.config.distinct_query_positive {
            if top.len() > 1 {
                rng.random_range(1..top.end)
            } else {
                1
            }
        } else {
            rng.random_range(top)
        };
        let neg_pool: Vec<usize> = bottom.filter(|&r| r != pos_rank).collect();
        let neg_pool = if neg_pool.is_empty() {
            (0..n).filter(|&r| r != pos_rank).collect()
        } else {
            neg_pool
        };
        let negatives = (0..k - 1)
            .map(|_| self.by_id(ids[neg_pool[rng.random_range(0..neg_pool.len())]]))
            .collect();
        Ok(SkillAwareSample {
            query: self.by_id(ids[0]),
            positive: self.by_id(ids[pos_rank]),
            negatives,
        })
    }

    /// Uniform draw among the stored trajectories of `task`.
    pub fn sample_from_task<R: Rng + ?Sized>(&self, task: TaskId, rng: &mut R) -> Result<&Trajectory> {
        let ids = self.rankings.get(&task).map(Vec::as_slice).unwrap_or(&[]);
        if ids.is_empty() {
            return Err(Error::InsufficientSamples { task: task.0, have: 0 });
        }
        Ok(self.by_id(ids[rng.random_range(0..ids.len())]))
    }

    /// `count` trajectories drawn uniformly (with replacement) over the union
    /// of the other tasks' pools.
    pub fn sample_cross_task<R: Rng + ?Sized>(
        &self,
        current: TaskId,
        count: usize,
        pool: CrossTaskPool,
        rng: &mut R,
    ) -> Result<Vec<&Trajectory>> {
        let mut candidates: Vec<u64> = Vec::new();
        for (&task, ids) in &self.rankings {
            if task == current {
                continue;
            }
            match pool {
                CrossTaskPool::Whole => candidates.extend_from_slice(ids),
                CrossTaskPool::LowReturn => {
                    let (_, bottom) = self.pool_ranks(task).expect("task is populated");
                    candidates.extend_from_slice(&ids[bottom]);
                }
            }
        }
        if candidates.is_empty() {
            return Err(Error::NoOtherTask(current.0));
        }
        Ok((0..count)
            .map(|_| self.by_id(candidates[rng.random_range(0..candidates.len())]))
            .collect())
    }

    /// `batch_size` transitions, uniform over all stored transitions.
    ///
    /// With `per_trajectory > 1` a trajectory is drawn with probability
    /// proportional to its length and several steps are taken from it
    /// uniformly; the marginal stays uniform over transitions. Refs from one
    /// trajectory are adjacent in the output.
    pub fn sample_rl_batch<R: Rng + ?Sized>(
        &self,
        batch_size: usize,
        per_trajectory: usize,
        rng: &mut R,
    ) -> Result<Vec<TransitionRef>> {
        if self.transitions == 0 {
            return Err(Error::EmptyBuffer);
        }
        let per = per_trajectory.max(1);
        let mut out = Vec::with_capacity(batch_size);
        while out.len() < batch_size {
            let u = self.evicted_transitions + rng.random_range(0..self.transitions as u64);
            let idx = self.ends.partition_point(|&end| end <= u);
            let traj = &self.trajectories[idx];
            let id = self.first_id + idx as u64;
            let start = self.ends[idx] - traj.len() as u64;
            out.push(TransitionRef {
                trajectory: id,
                step: (u - start) as usize,
            });
            for _ in 1..per.min(batch_size - out.len() + 1) {
                out.push(TransitionRef {
                    trajectory: id,
                    step: rng.random_range(0..traj.len()),
                });
            }
        }
        Ok(out)
    }

    /// One JSON object per stored trajectory, oldest first.
    pub fn export_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        #[derive(Serialize)]
        struct Line<'a> {
            id: u64,
            task_id: TaskId,
            features: &'a TaskFeatures,
            length: usize,
            episode_return: f64,
            skill_label: Option<Skill>,
        }
        for (i, t) in self.trajectories.iter().enumerate() {
            let line = Line {
                id: self.first_id + i as u64,
                task_id: t.task_id,
                features: &t.features,
                length: t.len(),
                episode_return: t.episode_return,
                skill_label: t.skill_label,
            };
            serde_json::to_writer(&mut out, &line)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn traj(task: u32, rewards: &[f64]) -> Trajectory {
        let steps = rewards
            .iter()
            .map(|&r| Transition {
                state: vec![0.0, 1.0],
                action: vec![0.5],
                reward: r,
                next_state: vec![1.0, 0.0],
                done: false,
            })
            .collect();
        Trajectory::new(TaskId(task), TaskFeatures::new(1.0, 1.0), steps).unwrap()
    }

    fn buffer(capacity: usize) -> RankedBuffer {
        RankedBuffer::new(ReplayConfig {
            capacity,
            ..ReplayConfig::default()
        })
        .unwrap()
    }

    fn returns(b: &RankedBuffer, task: u32) -> Vec<f64> {
        b.ranked(TaskId(task)).iter().map(|t| t.episode_return).collect()
    }

    #[test]
    fn ranks_by_return() {
        let mut b = buffer(100);
        for r in [3.0, 1.0, 5.0] {
            b.push(traj(0, &[r])).unwrap();
        }
        assert_eq!(returns(&b, 0), vec![5.0, 3.0, 1.0]);
    }

    #[test]
    fn fifo_eviction() {
        let mut b = buffer(3);
        for r in [1.0, 2.0, 3.0, 4.0] {
            b.push(traj(0, &[r])).unwrap();
        }
        assert_eq!(b.num_trajectories(), 3);
        assert_eq!(returns(&b, 0), vec![4.0, 3.0, 2.0]);
        assert_eq!(b.evictions(), 1);
    }

    #[test]
    fn ties_rank_by_insertion_order() {
        let mut b = buffer(100);
        let mut first = traj(0, &[2.0]);
        first.steps[0].state = vec![7.0, 7.0];
        b.push(first).unwrap();
        b.push(traj(0, &[2.0])).unwrap();
        assert_eq!(b.ranked(TaskId(0))[0].steps[0].state, vec![7.0, 7.0]);
    }

    #[test]
    fn episode_return_matches_rewards() {
        let t = traj(0, &[0.1, 0.2, 0.3]);
        assert!((t.episode_return - 0.6).abs() < 1e-12);
        assert!(Trajectory::new(TaskId(0), TaskFeatures::new(1.0, 1.0), vec![]).is_err());
    }

    #[test]
    fn encoder_inputs_are_shifted_and_padded() {
        let t = traj(0, &[0.25, 0.5]);
        let xs = t.encoder_inputs();
        assert_eq!(xs.len(), 3);
        assert_eq!(xs[0], vec![0.0, 1.0, 0.0, 0.0]);
        assert_eq!(xs[1], vec![0.0, 1.0, 0.5, 0.25]);
        assert_eq!(xs[2], vec![1.0, 0.0, 0.5, 0.5]);
    }

    #[test]
    fn skill_aware_fraction_arithmetic() {
        let mut b = RankedBuffer::new(ReplayConfig {
            top_fraction: 1.0 / 3.0,
            bottom_fraction: 1.0 / 3.0,
            ..ReplayConfig::default()
        })
        .unwrap();
        for r in [9.0, 5.0, 1.0] {
            b.push(traj(0, &[r])).unwrap();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..20 {
            let s = b.sample_skill_aware(TaskId(0), 2, &mut rng).unwrap();
            assert_eq!(s.query.episode_return, 9.0);
            assert_eq!(s.positive.episode_return, 9.0);
            assert_eq!(s.negatives.len(), 1);
            assert_eq!(s.negatives[0].episode_return, 1.0);
        }
    }

    #[test]
    fn pool_sizes_for_hundred() {
        let mut b = buffer(10_000);
        for i in 0..100 {
            b.push(traj(0, &[i as f64])).unwrap();
        }
        let (top, bottom) = b.pool_ranks(TaskId(0)).unwrap();
        assert_eq!(top.len(), 20);
        assert_eq!(bottom.len(), 50);
    }

    #[test]
    fn equal_returns_still_sample() {
        let mut b = buffer(100);
        for _ in 0..4 {
            b.push(traj(0, &[1.0])).unwrap();
        }
        let s = b
            .sample_skill_aware(TaskId(0), 5, &mut ChaCha8Rng::seed_from_u64(1))
            .unwrap();
        assert_eq!(s.negatives.len(), 4);
    }

    #[test]
    fn too_few_trajectories() {
        let mut b = buffer(100);
        b.push(traj(0, &[1.0])).unwrap();
        let err = b
            .sample_skill_aware(TaskId(0), 2, &mut ChaCha8Rng::seed_from_u64(1))
            .unwrap_err();
        assert!(matches!(err, Error::InsufficientSamples { task: 0, have: 1 }));
    }

    #[test]
    fn distinct_query_positive_flag() {
        let mut b = RankedBuffer::new(ReplayConfig {
            distinct_query_positive: true,
            ..ReplayConfig::default()
        })
        .unwrap();
        for r in [4.0, 3.0, 2.0, 1.0] {
            b.push(traj(0, &[r])).unwrap();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let s = b.sample_skill_aware(TaskId(0), 2, &mut rng).unwrap();
            assert!(!std::ptr::eq(s.query, s.positive));
        }
    }

    #[test]
    fn cross_task_excludes_current() {
        let mut b = buffer(1000);
        for i in 0..5 {
            b.push(traj(0, &[i as f64])).unwrap();
            b.push(traj(1, &[i as f64])).unwrap();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let negs = b
            .sample_cross_task(TaskId(0), 1, CrossTaskPool::Whole, &mut rng)
            .unwrap();
        assert_eq!(negs.len(), 1);
        for pool in [CrossTaskPool::Whole, CrossTaskPool::LowReturn] {
            let negs = b.sample_cross_task(TaskId(0), 50, pool, &mut rng).unwrap();
            assert!(negs.iter().all(|t| t.task_id == TaskId(1)));
        }
        let low = b
            .sample_cross_task(TaskId(0), 50, CrossTaskPool::LowReturn, &mut rng)
            .unwrap();
        assert!(low.iter().all(|t| t.episode_return <= 2.0));
    }

    #[test]
    fn cross_task_needs_another_task() {
        let mut b = buffer(1000);
        b.push(traj(0, &[1.0])).unwrap();
        let err = b
            .sample_cross_task(TaskId(0), 1, CrossTaskPool::Whole, &mut ChaCha8Rng::seed_from_u64(0))
            .unwrap_err();
        assert!(matches!(err, Error::NoOtherTask(0)));
    }

    #[test]
    fn cross_task_is_balanced() {
        let mut b = buffer(10_000);
        for task in 0..3 {
            for i in 0..10 {
                b.push(traj(task, &[i as f64])).unwrap();
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let negs = b
            .sample_cross_task(TaskId(0), 3000, CrossTaskPool::Whole, &mut rng)
            .unwrap();
        let ones = negs.iter().filter(|t| t.task_id == TaskId(1)).count() as f64 / 3000.0;
        assert!((ones - 0.5).abs() < 0.05, "{ones}");
    }

    #[test]
    fn rl_batch_bounds_and_uniformity() {
        let mut b = buffer(10_000);
        b.push(traj(0, &[0.0; 10])).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let batch = b.sample_rl_batch(4, 1, &mut rng).unwrap();
        assert_eq!(batch.len(), 4);
        assert!(batch.iter().all(|r| r.step < 10));

        let mut b = buffer(10_000);
        b.push(traj(0, &[0.0; 30])).unwrap();
        b.push(traj(1, &[0.0; 10])).unwrap();
        b.push(traj(1, &[0.0; 20])).unwrap();
        for per in [1, 4] {
            let batch = b.sample_rl_batch(10_000, per, &mut rng).unwrap();
            assert_eq!(batch.len(), 10_000);
            let task0 = batch
                .iter()
                .filter(|r| b.get(r.trajectory).unwrap().task_id == TaskId(0))
                .count() as f64
                / 10_000.0;
            assert!((task0 - 0.5).abs() < 0.03, "{task0}");
        }
        assert!(matches!(
            buffer(10).sample_rl_batch(1, 1, &mut rng),
            Err(Error::EmptyBuffer)
        ));
    }

    #[test]
    fn rl_batch_after_eviction() {
        let mut b = buffer(25);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for i in 0..10 {
            b.push(traj(i, &[0.0; 10])).unwrap();
            let batch = b.sample_rl_batch(64, 2, &mut rng).unwrap();
            for r in batch {
                let t = b.get(r.trajectory).expect("sampled id is live");
                assert!(r.step < t.len());
            }
        }
        assert!(b.num_transitions() <= 25);
    }

    #[test]
    fn export_writes_one_line_per_trajectory() {
        let mut b = buffer(100);
        b.push(traj(0, &[1.0])).unwrap();
        b.push(traj(1, &[2.0, 3.0])).unwrap();
        let mut out = Vec::new();
        b.export_jsonl(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        let v: serde_json::Value = serde_json::from_str(lines[1]).unwrap();
        assert_eq!(v["episode_return"], 5.0);
    }
}
