//! Numerical checks on the estimators and the task family, runnable from
//! the CLI and reused by the acceptance suite.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use sami_core::encoder::{ContextEmbedding, SimilarityConfig};
use sami_core::envs::{self, Physics, Skill, TaskFeatures};
use sami_core::estimators::{
    exact_mi, exact_sami, infonce, optimal_critic_infonce, sance, DiscreteJoint, EstimatorBatch, McEstimate,
    Provenance, SampleSpaceSpec,
};
use sami_core::replay::{RankedBuffer, ReplayConfig, TaskId, Trajectory, Transition};

use crate::config::Splits;
use crate::error::{HarnessError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Suite {
    Bounds,
    Oracle,
    Tightness,
}

impl std::str::FromStr for Suite {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bounds" => Ok(Suite::Bounds),
            "oracle" => Ok(Suite::Oracle),
            "tightness" => Ok(Suite::Tightness),
            other => Err(HarnessError::Config(format!("unknown estimator suite `{other}`"))),
        }
    }
}

/// A suite's output as CSV columns and rows, plus an overall verdict.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteTable {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
    pub passed: bool,
}

// ── log-K bound ───────────────────────────────────────────────────────

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundsRow {
    pub k: usize,
    pub beta: f64,
    pub batches: usize,
    pub log_k: f64,
    pub max_infonce: f64,
    pub max_sance: f64,
    pub holds: bool,
}

fn random_embedding(rng: &mut ChaCha8Rng, dim: usize) -> ContextEmbedding {
    ContextEmbedding::new((0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()).expect("finite draw")
}

/// Largest InfoNCE and SaNCE values over `batches` random Gaussian batches
/// per `(K, β)` setting, against the `log K` ceiling.
pub fn bounds(ks: &[usize], betas: &[f64], batches: usize, dim: usize, seed: u64) -> Result<Vec<BoundsRow>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::new();
    for &k in ks {
        for &beta in betas {
            let cfg = SimilarityConfig { beta, normalize: false };
            let (mut max_i, mut max_s) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
            for _ in 0..batches {
                let q = random_embedding(&mut rng, dim);
                let p = random_embedding(&mut rng, dim);
                let n = (1..k).map(|_| random_embedding(&mut rng, dim)).collect();
                let batch = EstimatorBatch::new(q, p, n).with_provenance(vec![
                    Provenance {
                        task: TaskId(0),
                        skill: None
                    };
                    k + 1
                ]);
                max_i = max_i.max(infonce(&batch, &cfg)?);
                max_s = max_s.max(sance(&batch, &cfg)?);
            }
            let log_k = (k as f64).ln();
            rows.push(BoundsRow {
                k,
                beta,
                batches,
                log_k,
                max_infonce: max_i,
                max_sance: max_s,
                holds: max_i <= log_k + 1e-9 && max_s <= log_k + 1e-9,
            });
        }
    }
    Ok(rows)
}

// ── interaction-information sandwich ──────────────────────────────────

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SandwichSummary {
    pub joints: usize,
    pub violations: usize,
    pub min_sami: f64,
    /// Largest `SaMI − I(c;τ)`; never positive when the bound holds.
    pub max_excess: f64,
}

fn random_distribution(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    // Exponential draws normalize to a flat Dirichlet sample.
    let w: Vec<f64> = (0..n).map(|_| -(1.0 - rng.random::<f64>()).ln() + 1e-12).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|x| x / s).collect()
}

/// Random common-cause joint `p(c) p(π|c) p(τ|c)` with arities in `1..=max_arity`.
pub fn random_common_cause(rng: &mut ChaCha8Rng, max_arity: usize) -> Result<DiscreteJoint> {
    let nc = rng.random_range(1..=max_arity);
    let npi = rng.random_range(1..=max_arity);
    let ntau = rng.random_range(1..=max_arity);
    let pc = random_distribution(rng, nc);
    let ppi: Vec<Vec<f64>> = (0..nc).map(|_| random_distribution(rng, npi)).collect();
    let ptau: Vec<Vec<f64>> = (0..nc).map(|_| random_distribution(rng, ntau)).collect();
    Ok(DiscreteJoint::common_cause(&pc, &ppi, &ptau)?)
}

pub fn sandwich(joints: usize, max_arity: usize, seed: u64) -> Result<SandwichSummary> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = SandwichSummary {
        joints,
        violations: 0,
        min_sami: f64::INFINITY,
        max_excess: f64::NEG_INFINITY,
    };
    for _ in 0..joints {
        let joint = random_common_cause(&mut rng, max_arity)?;
        let sami = exact_sami(&joint)?;
        let mi = exact_mi(&joint.pair(0, 2)?)?;
        out.min_sami = out.min_sami.min(sami);
        out.max_excess = out.max_excess.max(sami - mi);
        if sami < -1e-12 || sami > mi + 1e-12 {
            out.violations += 1;
        }
    }
    Ok(out)
}

// ── optimal-critic tightness ──────────────────────────────────────────

/// `X = Y` uniform over `symbols` values.
pub fn identity_joint(symbols: usize) -> Result<DiscreteJoint> {
    let mut p = vec![0.0; symbols * symbols];
    for i in 0..symbols {
        p[i * symbols + i] = 1.0 / symbols as f64;
    }
    Ok(DiscreteJoint::new(vec![symbols, symbols], p)?)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TightnessRow {
    pub symbols: usize,
    pub k: usize,
    pub true_mi: f64,
    pub log_k: f64,
    /// `I − log(K − 1) + log K`.
    pub reference: f64,
    /// Exact expectation of the optimal-critic estimate for `X = Y` uniform.
    pub exact_expectation: f64,
    pub estimate: McEstimate,
}

/// `E[log(K / (1 + N))]` with `N ~ Binomial(K − 1, 1/symbols)`: the
/// optimal-critic InfoNCE value when `X = Y` is uniform.
pub fn identity_expectation(symbols: usize, k: usize) -> f64 {
    let n = k - 1;
    let q = 1.0 / symbols as f64;
    let mut log_choose = 0.0;
    let mut total = 0.0;
    for j in 0..=n {
        if j > 0 {
            log_choose += ((n - j + 1) as f64).ln() - (j as f64).ln();
        }
        let log_pmf = log_choose + j as f64 * q.ln() + (n - j) as f64 * (1.0 - q).ln();
        total += log_pmf.exp() * (k as f64 / (1 + j) as f64).ln();
    }
    total
}

pub fn tightness(symbols: usize, ks: &[usize], samples: usize, seed: u64) -> Result<Vec<TightnessRow>> {
    let joint = identity_joint(symbols)?;
    let true_mi = exact_mi(&joint)?;
    ks.iter()
        .map(|&k| {
            let estimate = optimal_critic_infonce(&joint, k, samples, seed.wrapping_add(k as u64))?;
            Ok(TightnessRow {
                symbols,
                k,
                true_mi,
                log_k: (k as f64).ln(),
                reference: true_mi - ((k - 1) as f64).ln() + (k as f64).ln(),
                exact_expectation: identity_expectation(symbols, k),
                estimate,
            })
        })
        .collect()
}

// ── sample-space accounting ───────────────────────────────────────────

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleSpaceCounts {
    pub spec: SampleSpaceSpec,
    /// Distinct trajectories an intra-task estimator draws from, per task.
    pub sance: Vec<usize>,
    pub infonce: usize,
    /// Current task plus the negative-skill trajectories of the others.
    pub sa_plus_infonce: Vec<usize>,
    pub expected_sance: usize,
    pub expected_infonce: usize,
    pub expected_sa_plus_infonce: usize,
}

/// A buffer with `multiplicity` trajectories per (task, skill); skill `i`
/// of every task earns return `−i`, so skill 0 is the positive skill.
pub fn synthetic_skill_buffer(spec: &SampleSpaceSpec) -> Result<RankedBuffer> {
    if spec.num_skills > Skill::ALL.len() {
        return Err(HarnessError::Config(format!("at most {} skills", Skill::ALL.len())));
    }
    let total = spec.num_contexts * spec.num_skills * spec.multiplicity;
    let mut buffer = RankedBuffer::new(ReplayConfig {
        capacity: total,
        ..ReplayConfig::default()
    })?;
    for c in 0..spec.num_contexts {
        for s in 0..spec.num_skills {
            for m in 0..spec.multiplicity {
                let reward = -(s as f64) - 1e-3 * m as f64;
                let step = Transition {
                    state: vec![c as f64, s as f64, m as f64],
                    action: vec![0.0],
                    reward,
                    next_state: vec![c as f64, s as f64, m as f64],
                    done: true,
                };
                let mut t = Trajectory::new(TaskId(c as u32), TaskFeatures::new(1.0 + c as f64, 0.1), vec![step])?;
                t.skill_label = Some(Skill::ALL[s]);
                buffer.push(t)?;
            }
        }
    }
    Ok(buffer)
}

fn positive_skill(buffer: &RankedBuffer, task: TaskId) -> Option<Skill> {
    buffer.ranked(task).first().and_then(|t| t.skill_label)
}

/// Counts the sample spaces each estimator draws from in `buffer`.
pub fn sample_space_counts(buffer: &RankedBuffer, spec: SampleSpaceSpec) -> SampleSpaceCounts {
    let tasks = buffer.tasks();
    let sance: Vec<usize> = tasks.iter().map(|&t| buffer.ranked(t).len()).collect();
    let negatives_of = |task: TaskId| -> usize {
        let pos = positive_skill(buffer, task);
        buffer.ranked(task).iter().filter(|t| t.skill_label != pos).count()
    };
    let sa_plus: Vec<usize> = tasks
        .iter()
        .map(|&cur| {
            buffer.ranked(cur).len()
                + tasks
                    .iter()
                    .filter(|&&t| t != cur)
                    .map(|&t| negatives_of(t))
                    .sum::<usize>()
        })
        .collect();
    let negative_skills = vec![spec.num_skills - 1; spec.num_contexts];
    SampleSpaceCounts {
        spec,
        sance,
        infonce: buffer.num_trajectories(),
        sa_plus_infonce: sa_plus,
        expected_sance: spec.k_star_sance(),
        expected_infonce: spec.k_star_infonce(),
        expected_sa_plus_infonce: spec.k_star_sa_plus_infonce(&negative_skills, 1),
    }
}

// ── skill structure of the task family ────────────────────────────────

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkillCell {
    pub mass: f64,
    pub friction: f64,
    pub pushable: bool,
    pub liftable: bool,
    pub push_return: f64,
    pub lift_return: f64,
}

impl SkillCell {
    /// Lift-only cells need Lift to win, push-only cells need Push to win.
    pub fn consistent(&self) -> bool {
        match (self.pushable, self.liftable) {
            (false, true) => self.lift_return > self.push_return,
            (true, false) => self.push_return > self.lift_return,
            _ => true,
        }
    }
}

/// Mean scripted Push and Lift returns on every cell of every split, with
/// matched initial states.
pub fn skill_structure(splits: &Splits, physics: &Physics, episodes: usize, seed: u64) -> Result<Vec<SkillCell>> {
    let mut out = Vec::new();
    for (i, (mass, friction)) in all_cells(splits).into_iter().enumerate() {
        let f = TaskFeatures::new(mass, friction);
        let run = |lift: bool| -> Result<f64> {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(i as u64));
            let mut total = 0.0;
            for _ in 0..episodes {
                let traj = if lift {
                    envs::run_episode(TaskId(0), &f, physics, &mut rng, |s| envs::scripted_lift(s, physics))?
                } else {
                    envs::run_episode(TaskId(0), &f, physics, &mut rng, envs::scripted_push)?
                };
                total += traj.episode_return;
            }
            Ok(total / episodes as f64)
        };
        out.push(SkillCell {
            mass,
            friction,
            pushable: physics.pushable(&f),
            liftable: physics.liftable(&f),
            push_return: run(false)?,
            lift_return: run(true)?,
        });
    }
    Ok(out)
}

/// Union of cells across the declared splits.
pub fn all_cells(splits: &Splits) -> Vec<(f64, f64)> {
    let mut out: Vec<(f64, f64)> = Vec::new();
    for s in [&splits.train, &splits.moderate, &splits.extreme] {
        for c in s.cells() {
            if !out.contains(&c) {
                out.push(c);
            }
        }
    }
    out
}

// ── CLI tables ────────────────────────────────────────────────────────

fn strings<const N: usize>(cols: [&str; N]) -> Vec<String> {
    cols.iter().map(|s| s.to_string()).collect()
}

pub fn run_suite(suite: Suite, seed: u64) -> Result<SuiteTable> {
    match suite {
        Suite::Bounds => {
            let rows = bounds(&[2, 4, 8, 64], &[0.1, 1.0], 1000, 6, seed)?;
            Ok(SuiteTable {
                columns: strings(["k", "beta", "batches", "log_k", "max_infonce", "max_sance", "holds"]),
                passed: rows.iter().all(|r| r.holds),
                rows: rows
                    .iter()
                    .map(|r| {
                        vec![
                            r.k.to_string(),
                            r.beta.to_string(),
                            r.batches.to_string(),
                            r.log_k.to_string(),
                            r.max_infonce.to_string(),
                            r.max_sance.to_string(),
                            r.holds.to_string(),
                        ]
                    })
                    .collect(),
            })
        }
        Suite::Oracle => {
            let s = sandwich(1000, 4, seed)?;
            Ok(SuiteTable {
                columns: strings(["joints", "violations", "min_sami", "max_excess"]),
                passed: s.violations == 0,
                rows: vec![vec![
                    s.joints.to_string(),
                    s.violations.to_string(),
                    s.min_sami.to_string(),
                    s.max_excess.to_string(),
                ]],
            })
        }
        Suite::Tightness => {
            let rows = tightness(64, &[2, 8, 32, 128, 512], 100_000, seed)?;
            Ok(SuiteTable {
                columns: strings([
                    "symbols",
                    "k",
                    "true_mi",
                    "log_k",
                    "reference",
                    "exact_expectation",
                    "estimate",
                    "std_err",
                ]),
                passed: rows
                    .iter()
                    .all(|r| (r.estimate.mean - r.exact_expectation).abs() < 5.0 * r.estimate.std_err + 1e-9),
                rows: rows
                    .iter()
                    .map(|r| {
                        vec![
                            r.symbols.to_string(),
                            r.k.to_string(),
                            r.true_mi.to_string(),
                            r.log_k.to_string(),
                            r.reference.to_string(),
                            r.exact_expectation.to_string(),
                            r.estimate.mean.to_string(),
                            r.estimate.std_err.to_string(),
                        ]
                    })
                    .collect(),
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_expectation_matches_brute_force() {
        // Enumerate all negative draws for a tiny alphabet.
        let (symbols, k) = (3usize, 4usize);
        let mut total = 0.0;
        let draws = symbols.pow((k - 1) as u32);
        for code in 0..draws {
            let mut c = code;
            let mut hits = 0;
            for _ in 0..k - 1 {
                if c % symbols == 0 {
                    hits += 1;
                }
                c /= symbols;
            }
            total += (k as f64 / (1 + hits) as f64).ln();
        }
        let brute = total / draws as f64;
        assert!((identity_expectation(symbols, k) - brute).abs() < 1e-12);
    }

    #[test]
    fn bounds_hold_on_small_run() {
        let rows = bounds(&[2, 8], &[0.1, 1.0], 50, 4, 1).unwrap();
        assert_eq!(rows.len(), 4);
        assert!(rows.iter().all(|r| r.holds));
    }

    #[test]
    fn sandwich_small_run() {
        let s = sandwich(100, 4, 2).unwrap();
        assert_eq!(s.violations, 0);
    }

    #[test]
    fn sample_space_counts_match_formulae() {
        let spec = SampleSpaceSpec::new(3, 2, 5).unwrap();
        let buffer = synthetic_skill_buffer(&spec).unwrap();
        let counts = sample_space_counts(&buffer, spec);
        assert_eq!(counts.sance, vec![10, 10, 10]);
        assert_eq!(counts.infonce, 30);
        assert_eq!(counts.sa_plus_infonce, vec![20, 20, 20]);
        assert_eq!(counts.expected_sa_plus_infonce, 20);
    }

    #[test]
    fn suite_names_parse() {
        assert_eq!("tightness".parse::<Suite>().unwrap(), Suite::Tightness);
        assert!("exact".parse::<Suite>().is_err());
    }
}
