//! Block relocation: a point-mass block on a table that must be moved to a
//! goal on the surface, either by sliding it (Push) or by grasping, lifting
//! and carrying it (Lift).
//!
//! Mass, friction and crippled actuators are hidden task features. They shape
//! the dynamics only and never appear in the observation vector.

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::replay::{TaskId, Trajectory, Transition};

pub const ENV_VERSION: &str = "block-relocate-v1";

/// Actuators, in action order: horizontal force, vertical force, grasp.
pub const ACTION_DIM: usize = 3;
pub const OBS_DIM: usize = 10;

pub mod obs {
    pub const X: usize = 0;
    pub const Z: usize = 1;
    pub const VX: usize = 2;
    pub const VZ: usize = 3;
    pub const EFFECTOR_X: usize = 4;
    pub const EFFECTOR_Z: usize = 5;
    pub const GRASPED: usize = 6;
    pub const GOAL_X: usize = 7;
    pub const GOAL_Z: usize = 8;
    pub const REMAINING: usize = 9;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskFeatures {
    pub mass: f64,
    pub friction: f64,
    pub crippled_mask: Vec<bool>,
}

impl TaskFeatures {
    pub fn new(mass: f64, friction: f64) -> Self {
        Self {
            mass,
            friction,
            crippled_mask: vec![false; ACTION_DIM],
        }
    }

    pub fn with_mask(mut self, mask: Vec<bool>) -> Self {
        self.crippled_mask = mask;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mass.is_finite() && self.mass > 0.0) {
            return Err(Error::InvalidFeatures(format!("mass {} must be > 0", self.mass)));
        }
        if !(self.friction.is_finite() && self.friction >= 0.0) {
            return Err(Error::InvalidFeatures(format!(
                "friction {} must be >= 0",
                self.friction
            )));
        }
        if self.crippled_mask.len() != ACTION_DIM {
            return Err(Error::InvalidFeatures(format!(
                "crippled mask has {} entries, expected {ACTION_DIM}",
                self.crippled_mask.len()
            )));
        }
        Ok(())
    }

    pub fn mask_bits(&self) -> u32 {
        self.crippled_mask
            .iter()
            .enumerate()
            .filter(|(_, &m)| m)
            .map(|(i, _)| 1u32 << i)
            .sum()
    }

    pub fn crippled_count(&self) -> usize {
        self.crippled_mask.iter().filter(|m| **m).count()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Physics {
    pub gravity: f64,
    pub max_force: f64,
    pub lift_gain: f64,
    pub dt: f64,
    /// Height above which a carried block counts as lifted.
    pub lift_height: f64,
    pub success_radius: f64,
    pub success_bonus: f64,
    pub episode_len: usize,
    pub goal_min: f64,
    pub goal_max: f64,
    pub max_height: f64,
    /// Minimum reduction of the goal distance for an episode to count as a
    /// Push or Lift rather than Other.
    pub min_progress: f64,
}

impl Default for Physics {
    fn default() -> Self {
        Self {
            gravity: 9.8,
            max_force: 50.0,
            lift_gain: 1.0,
            dt: 0.05,
            lift_height: 0.1,
            success_radius: 0.05,
            success_bonus: 10.0,
            episode_len: 100,
            goal_min: 0.5,
            goal_max: 1.5,
            max_height: 1.0,
            min_progress: 0.01,
        }
    }
}

impl Physics {
    /// Full horizontal force exceeds static friction.
    pub fn pushable(&self, f: &TaskFeatures) -> bool {
        self.max_force > f.friction * f.mass * self.gravity
    }

    /// Full vertical force exceeds the block's weight.
    pub fn liftable(&self, f: &TaskFeatures) -> bool {
        self.max_force * self.lift_gain > f.mass * self.gravity
    }
}

/// The effector stays in contact with the block, so its position is the
/// block's contact point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockRelocateState {
    pub x: f64,
    pub z: f64,
    pub vx: f64,
    pub vz: f64,
    pub effector_x: f64,
    pub effector_z: f64,
    pub grasped: bool,
    pub goal_x: f64,
    pub goal_z: f64,
    pub remaining: usize,
}

impl BlockRelocateState {
    pub fn distance(&self) -> f64 {
        ((self.x - self.goal_x).powi(2) + (self.z - self.goal_z).powi(2)).sqrt()
    }

    pub fn observation(&self, physics: &Physics) -> Vec<f64> {
        vec![
            self.x,
            self.z,
            self.vx,
            self.vz,
            self.effector_x,
            self.effector_z,
            if self.grasped { 1.0 } else { 0.0 },
            self.goal_x,
            self.goal_z,
            self.remaining as f64 / physics.episode_len as f64,
        ]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepOutcome {
    pub state: BlockRelocateState,
    pub reward: f64,
    pub done: bool,
    pub success: bool,
}

pub fn reset<R: Rng + ?Sized>(features: &TaskFeatures, physics: &Physics, rng: &mut R) -> Result<BlockRelocateState> {
    features.validate()?;
    let goal_x = rng.random_range(physics.goal_min..=physics.goal_max);
    Ok(BlockRelocateState {
        x: 0.0,
        z: 0.0,
        vx: 0.0,
        vz: 0.0,
        effector_x: 0.0,
        effector_z: 0.0,
        grasped: false,
        goal_x,
        goal_z: 0.0,
        remaining: physics.episode_len,
    })
}

/// Raw dynamics; ignores the crippled mask (see [`crippled_step`]).
pub fn step(
    state: &BlockRelocateState,
    action: &[f64],
    features: &TaskFeatures,
    physics: &Physics,
) -> Result<StepOutcome> {
    if action.len() != ACTION_DIM || action.iter().any(|a| !a.is_finite()) {
        return Err(Error::NonFiniteAction(action.to_vec()));
    }
    let fx_cmd = action[0].clamp(-1.0, 1.0);
    let fz_cmd = action[1].clamp(-1.0, 1.0);
    let grasped = action[2] > 0.0;

    let m = features.mass;
    let g = physics.gravity;
    let weight = m * g;
    let dt = physics.dt;
    let airborne = state.z > 0.0;

    // Vertical: only a grasped block can be driven upward.
    let az = if grasped {
        let lift = fz_cmd * physics.max_force * physics.lift_gain;
        if airborne || lift > weight {
            (lift - weight) / m
        } else {
            0.0
        }
    } else if airborne {
        -g
    } else {
        0.0
    };
    let mut vz = state.vz + az * dt;
    let mut z = state.z + vz * dt;
    if z <= 0.0 {
        z = 0.0;
        vz = 0.0;
    } else if z >= physics.max_height {
        z = physics.max_height;
        vz = vz.min(0.0);
    }

    // Horizontal: the effector pushes while it holds the block or while the
    // block rests on the table; a falling block is out of reach.
    let fx = if grasped || !airborne {
        fx_cmd * physics.max_force
    } else {
        0.0
    };
    let vx = if airborne {
        state.vx + fx / m * dt
    } else {
        let friction = features.friction * weight;
        if state.vx == 0.0 {
            if fx.abs() > friction {
                (fx - fx.signum() * friction) / m * dt
            } else {
                0.0
            }
        } else {
            let v = state.vx + (fx - state.vx.signum() * friction) / m * dt;
            if v * state.vx < 0.0 {
                0.0
            } else {
                v
            }
        }
    };
    let x = state.x + vx * dt;

    let mut next = BlockRelocateState {
        x,
        z,
        vx,
        vz,
        effector_x: x,
        effector_z: z,
        grasped,
        goal_x: state.goal_x,
        goal_z: state.goal_z,
        remaining: state.remaining.saturating_sub(1),
    };
    let distance = next.distance();
    let success = distance < physics.success_radius;
    let mut reward = -distance;
    if success {
        reward += physics.success_bonus;
    }
    let done = success || next.remaining == 0;
    if done && !success {
        next.remaining = 0;
    }
    Ok(StepOutcome {
        state: next,
        reward,
        done,
        success,
    })
}

/// [`step`] with the crippled actuators' commands forced to zero.
pub fn crippled_step(
    state: &BlockRelocateState,
    action: &[f64],
    features: &TaskFeatures,
    physics: &Physics,
) -> Result<StepOutcome> {
    let masked: Vec<f64> = action
        .iter()
        .zip(features.crippled_mask.iter().chain(std::iter::repeat(&false)))
        .map(|(&a, &crippled)| if crippled { 0.0 } else { a })
        .collect();
    step(state, &masked, features, physics)
}

// ── task splits ───────────────────────────────────────────────────────

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitName {
    Train,
    Moderate,
    Extreme,
}

impl SplitName {
    pub const ALL: [SplitName; 3] = [SplitName::Train, SplitName::Moderate, SplitName::Extreme];

    pub fn as_str(self) -> &'static str {
        match self {
            SplitName::Train => "train",
            SplitName::Moderate => "moderate",
            SplitName::Extreme => "extreme",
        }
    }
}

impl std::str::FromStr for SplitName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(SplitName::Train),
            "moderate" => Ok(SplitName::Moderate),
            "extreme" => Ok(SplitName::Extreme),
            other => Err(Error::InvalidArgument(format!("unknown split `{other}`"))),
        }
    }
}

impl std::fmt::Display for SplitName {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Cartesian product of the listed masses and frictions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridBlock {
    pub mass: Vec<f64>,
    pub friction: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSplit {
    pub name: SplitName,
    pub grid: Vec<GridBlock>,
    /// Number of actuators crippled in every task of this split.
    #[serde(default)]
    pub crippled_count: usize,
}

impl TaskSplit {
    pub fn train() -> Self {
        Self {
            name: SplitName::Train,
            grid: vec![GridBlock {
                mass: vec![1.0, 5.0, 10.0],
                friction: vec![0.1, 1.0, 5.0],
            }],
            crippled_count: 0,
        }
    }

    /// Interpolates between the training values.
    pub fn moderate() -> Self {
        Self {
            name: SplitName::Moderate,
            grid: vec![GridBlock {
                mass: vec![2.5, 7.5],
                friction: vec![0.5, 2.5],
            }],
            crippled_count: 0,
        }
    }

    /// Extrapolates beyond the training values.
    pub fn extreme() -> Self {
        Self {
            name: SplitName::Extreme,
            grid: vec![
                GridBlock {
                    mass: vec![30.0],
                    friction: vec![0.1, 1.0, 5.0, 30.0],
                },
                GridBlock {
                    mass: vec![1.0, 5.0, 10.0, 30.0],
                    friction: vec![30.0],
                },
            ],
            crippled_count: 0,
        }
    }

    pub fn default_for(name: SplitName) -> Self {
        match name {
            SplitName::Train => Self::train(),
            SplitName::Moderate => Self::moderate(),
            SplitName::Extreme => Self::extreme(),
        }
    }

    /// Distinct `(mass, friction)` cells in declaration order.
    pub fn cells(&self) -> Vec<(f64, f64)> {
        let mut out: Vec<(f64, f64)> = Vec::new();
        for block in &self.grid {
            for &m in &block.mass {
                for &mu in &block.friction {
                    if !out.contains(&(m, mu)) {
                        out.push((m, mu));
                    }
                }
            }
        }
        out
    }

    pub fn cell_index(&self, features: &TaskFeatures) -> Option<usize> {
        self.cells()
            .iter()
            .position(|&(m, mu)| m == features.mass && mu == features.friction)
    }

    pub fn contains(&self, features: &TaskFeatures) -> bool {
        self.cell_index(features).is_some() && features.crippled_count() == self.crippled_count
    }

    /// Stable identifier of a task within this split.
    pub fn task_id(&self, features: &TaskFeatures) -> Option<TaskId> {
        self.cell_index(features)
            .map(|i| TaskId(i as u32 * (1 << ACTION_DIM) + features.mask_bits()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.cells().is_empty() {
            return Err(Error::InvalidArgument(format!(
                "split `{}` has an empty feature grid",
                self.name
            )));
        }
        if self.crippled_count > ACTION_DIM {
            return Err(Error::InvalidArgument(format!(
                "split `{}` cripples {} of {ACTION_DIM} actuators",
                self.name, self.crippled_count
            )));
        }
        for (m, mu) in self.cells() {
            TaskFeatures::new(m, mu).validate()?;
        }
        Ok(())
    }
}

/// Uniform draw over the split's cells; crippled actuators are a uniform
/// subset of the configured size.
pub fn sample_task<R: Rng + ?Sized>(split: &TaskSplit, rng: &mut R) -> Result<TaskFeatures> {
    let cells = split.cells();
    if cells.is_empty() {
        return Err(Error::Empty("task split grid"));
    }
    let (mass, friction) = cells[rng.random_range(0..cells.len())];
    let mut mask = vec![false; ACTION_DIM];
    if split.crippled_count > 0 {
        for i in index::sample(rng, ACTION_DIM, split.crippled_count.min(ACTION_DIM)) {
            mask[i] = true;
        }
    }
    Ok(TaskFeatures::new(mass, friction).with_mask(mask))
}

// ── skills ────────────────────────────────────────────────────────────

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Skill {
    Push,
    Lift,
    Other,
}

impl Skill {
    pub const ALL: [Skill; 3] = [Skill::Push, Skill::Lift, Skill::Other];

    pub fn as_str(self) -> &'static str {
        match self {
            Skill::Push => "push",
            Skill::Lift => "lift",
            Skill::Other => "other",
        }
    }
}

fn goal_distance(obs: &[f64]) -> f64 {
    ((obs[obs::X] - obs[obs::GOAL_X]).powi(2) + (obs[obs::Z] - obs[obs::GOAL_Z]).powi(2)).sqrt()
}

/// Lift when the block rose above the lift height and ended closer to the
/// goal; Push when it ended closer while never rising above it; Other
/// otherwise.
pub fn classify_skill(traj: &Trajectory, physics: &Physics) -> Skill {
    let (Some(first), Some(last)) = (traj.steps.first(), traj.steps.last()) else {
        return Skill::Other;
    };
    let initial = goal_distance(&first.state);
    let final_distance = goal_distance(&last.next_state);
    let approached = final_distance < initial - physics.min_progress;
    let max_height = traj
        .steps
        .iter()
        .flat_map(|s| [s.state[obs::Z], s.next_state[obs::Z]])
        .fold(0.0, f64::max);
    match (approached, max_height > physics.lift_height) {
        (true, true) => Skill::Lift,
        (true, false) => Skill::Push,
        _ => Skill::Other,
    }
}

// ── scripted controllers ──────────────────────────────────────────────

/// Slides the block toward the goal with a velocity-tracking force.
pub fn scripted_push(state: &BlockRelocateState) -> [f64; ACTION_DIM] {
    let dx = state.goal_x - state.x;
    let target_v = (3.0 * dx).clamp(-1.5, 1.5);
    let fx = if dx.abs() < 0.02 && state.vx.abs() < 0.05 {
        0.0
    } else {
        (2.0 * (target_v - state.vx)).clamp(-1.0, 1.0)
    };
    [fx, 0.0, -1.0]
}

/// Grasps, lifts above the lift height, carries the block over the goal and
/// releases it.
pub fn scripted_lift(state: &BlockRelocateState, physics: &Physics) -> [f64; ACTION_DIM] {
    let dx = state.goal_x - state.x;
    let over_goal = dx.abs() < 0.03 && state.vx.abs() < 0.3;
    if over_goal {
        return [0.0, 0.0, -1.0];
    }
    if state.z <= physics.lift_height * 1.5 && !(state.grasped && state.z > physics.lift_height) {
        return [0.0, 1.0, 1.0];
    }
    let target_v = (3.0 * dx).clamp(-1.5, 1.5);
    let fx = (0.5 * (target_v - state.vx)).clamp(-1.0, 1.0);
    [fx, 1.0, 1.0]
}

/// The better-suited scripted skill given full knowledge of the features.
pub fn scripted_oracle(state: &BlockRelocateState, features: &TaskFeatures, physics: &Physics) -> [f64; ACTION_DIM] {
    if physics.liftable(features) && !features.crippled_mask[1] && !features.crippled_mask[2] {
        scripted_lift(state, physics)
    } else {
        scripted_push(state)
    }
}

/// Runs one episode with `policy` and returns the recorded trajectory.
pub fn run_episode<R, P>(
    task_id: TaskId,
    features: &TaskFeatures,
    physics: &Physics,
    rng: &mut R,
    mut policy: P,
) -> Result<Trajectory>
where
    R: Rng + ?Sized,
    P: FnMut(&BlockRelocateState) -> [f64; ACTION_DIM],
{
    let mut state = reset(features, physics, rng)?;
    let mut steps = Vec::with_capacity(physics.episode_len);
    loop {
        let action = policy(&state);
        let out = crippled_step(&state, &action, features, physics)?;
        steps.push(Transition {
            state: state.observation(physics),
            action: action.to_vec(),
            reward: out.reward,
            next_state: out.state.observation(physics),
            done: out.success,
        });
        state = out.state;
        if out.done {
            break;
        }
    }
    let mut traj = Trajectory::new(task_id, features.clone(), steps)?;
    traj.skill_label = Some(classify_skill(&traj, physics));
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn physics() -> Physics {
        Physics::default()
    }

    #[test]
    fn reset_is_deterministic_and_goal_on_surface() {
        let f = TaskFeatures::new(1.0, 0.1);
        let a = reset(&f, &physics(), &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let b = reset(&f, &physics(), &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!(a, b);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..100 {
            let s = reset(&f, &physics(), &mut rng).unwrap();
            assert_eq!(s.goal_z, 0.0);
            assert_eq!((s.x, s.z, s.vx, s.vz), (0.0, 0.0, 0.0, 0.0));
        }
    }

    #[test]
    fn goal_is_uniform_over_declared_range() {
        let p = physics();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let f = TaskFeatures::new(1.0, 0.1);
        let bins = 4;
        let mut counts = vec![0usize; bins];
        for _ in 0..1000 {
            let s = reset(&f, &p, &mut rng).unwrap();
            assert!(s.goal_x >= p.goal_min && s.goal_x <= p.goal_max);
            let u = (s.goal_x - p.goal_min) / (p.goal_max - p.goal_min);
            counts[((u * bins as f64) as usize).min(bins - 1)] += 1;
        }
        for c in counts {
            let frac = c as f64 / 1000.0;
            assert!((frac - 0.25).abs() < 0.05, "bin fraction {frac}");
        }
    }

    #[test]
    fn invalid_features_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(reset(&TaskFeatures::new(0.0, 1.0), &physics(), &mut rng).is_err());
        assert!(reset(&TaskFeatures::new(1.0, -1.0), &physics(), &mut rng).is_err());
        let bad_mask = TaskFeatures::new(1.0, 1.0).with_mask(vec![true]);
        assert!(reset(&bad_mask, &physics(), &mut rng).is_err());
    }

    #[test]
    fn non_finite_action_is_error() {
        let p = physics();
        let f = TaskFeatures::new(1.0, 0.1);
        let s = reset(&f, &p, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert!(step(&s, &[f64::NAN, 0.0, 0.0], &f, &p).is_err());
    }

    #[test]
    fn unpushable_block_stays_put() {
        let p = physics();
        // mu * m * g = 2 * F_max
        let mass = 2.0;
        let friction = 2.0 * p.max_force / (mass * p.gravity);
        let f = TaskFeatures::new(mass, friction);
        let mut s = reset(&f, &p, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        for _ in 0..20 {
            s = step(&s, &[1.0, 0.0, -1.0], &f, &p).unwrap().state;
            assert_eq!(s.vx, 0.0);
            assert_eq!(s.x, 0.0);
        }
    }

    #[test]
    fn unliftable_block_stays_on_table() {
        let p = physics();
        let mass = 1.5 * p.max_force / p.gravity;
        let f = TaskFeatures::new(mass, 0.1);
        let mut s = reset(&f, &p, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        for _ in 0..20 {
            s = step(&s, &[0.0, 1.0, 1.0], &f, &p).unwrap().state;
            assert_eq!(s.z, 0.0);
        }
    }

    #[test]
    fn frictionless_block_coasts() {
        let p = physics();
        let f = TaskFeatures::new(3.0, 0.0);
        let mut s = reset(&f, &p, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        s.goal_x = 100.0;
        s.vx = 0.4;
        for _ in 0..10 {
            let next = step(&s, &[0.0, 0.0, -1.0], &f, &p).unwrap().state;
            assert_eq!(next.vx, 0.4);
            assert!((next.x - s.x - 0.4 * p.dt).abs() < 1e-12);
            s = next;
        }
    }

    #[test]
    fn dynamics_are_bitwise_deterministic() {
        let p = physics();
        let f = TaskFeatures::new(5.0, 1.0);
        let s = reset(&f, &p, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let a = step(&s, &[0.7, 0.9, 1.0], &f, &p).unwrap();
        let b = step(&s, &[0.7, 0.9, 1.0], &f, &p).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn crippled_mask_zeroes_actions() {
        let p = physics();
        let f = TaskFeatures::new(1.0, 0.1);
        let s = reset(&f, &p, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let action = [0.8, 1.0, 1.0];
        assert_eq!(
            crippled_step(&s, &action, &f, &p).unwrap(),
            step(&s, &action, &f, &p).unwrap()
        );

        // Vertical actuator crippled: lifting never happens.
        let no_lift = f.clone().with_mask(vec![false, true, false]);
        let mut st = s.clone();
        for _ in 0..100 {
            let out = crippled_step(&st, &[0.0, 1.0, 1.0], &no_lift, &p).unwrap();
            assert_eq!(out.state.z, 0.0);
            st = out.state;
            if out.done {
                break;
            }
        }

        // Horizontal actuator crippled: sliding impossible, lifting still works.
        let no_push = TaskFeatures::new(1.0, 1.0).with_mask(vec![true, false, false]);
        let mut st = s.clone();
        for _ in 0..10 {
            st = crippled_step(&st, &[1.0, 0.0, -1.0], &no_push, &p).unwrap().state;
            assert_eq!(st.x, 0.0);
        }
        for _ in 0..10 {
            st = crippled_step(&st, &[1.0, 1.0, 1.0], &no_push, &p).unwrap().state;
        }
        assert!(st.z > p.lift_height);
        assert_eq!(st.x, 0.0);
    }

    #[test]
    fn train_grid_sampling_is_uniform() {
        let split = TaskSplit::train();
        let cells = split.cells();
        assert_eq!(cells.len(), 9);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut counts = vec![0usize; 9];
        for _ in 0..9000 {
            let f = sample_task(&split, &mut rng).unwrap();
            counts[split.cell_index(&f).unwrap()] += 1;
        }
        for c in counts {
            assert!((c as f64 / 9000.0 - 1.0 / 9.0).abs() < 0.015, "{c}");
        }
    }

    #[test]
    fn extreme_split_disjoint_from_train() {
        let train = TaskSplit::train();
        let extreme = TaskSplit::extreme();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..2000 {
            let f = sample_task(&extreme, &mut rng).unwrap();
            assert!(train.cell_index(&f).is_none());
        }
        assert_eq!(extreme.cells().len(), 7);
    }

    #[test]
    fn crippled_split_masks_exact_count() {
        let mut split = TaskSplit::train();
        split.crippled_count = 2;
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..200 {
            assert_eq!(sample_task(&split, &mut rng).unwrap().crippled_count(), 2);
        }
    }

    #[test]
    fn classifier_labels() {
        let p = physics();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let push = run_episode(TaskId(0), &TaskFeatures::new(10.0, 0.1), &p, &mut rng, |s| {
            scripted_push(s)
        })
        .unwrap();
        assert_eq!(push.skill_label, Some(Skill::Push));

        let lift = run_episode(TaskId(0), &TaskFeatures::new(1.0, 5.0), &p, &mut rng, |s| {
            scripted_lift(s, &p)
        })
        .unwrap();
        assert_eq!(lift.skill_label, Some(Skill::Lift));

        let idle = run_episode(TaskId(0), &TaskFeatures::new(1.0, 1.0), &p, &mut rng, |_| {
            [0.0, 0.0, -1.0]
        })
        .unwrap();
        assert_eq!(idle.skill_label, Some(Skill::Other));
    }

    #[test]
    fn feature_hiding_at_reset() {
        let p = physics();
        let a = reset(&TaskFeatures::new(1.0, 0.1), &p, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let b = reset(&TaskFeatures::new(30.0, 30.0), &p, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(a.observation(&p), b.observation(&p));
    }

    #[test]
    fn episode_return_telescopes() {
        let p = physics();
        let f = TaskFeatures::new(5.0, 0.1);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut state = reset(&f, &p, &mut rng).unwrap();
        let mut env_return = 0.0;
        let mut steps = Vec::new();
        loop {
            let a = scripted_push(&state);
            let out = step(&state, &a, &f, &p).unwrap();
            env_return += out.reward;
            steps.push(Transition {
                state: state.observation(&p),
                action: a.to_vec(),
                reward: out.reward,
                next_state: out.state.observation(&p),
                done: out.success,
            });
            state = out.state;
            if out.done {
                break;
            }
        }
        let traj = Trajectory::new(TaskId(0), f, steps).unwrap();
        assert!((traj.episode_return - env_return).abs() < 1e-9);
    }
}
