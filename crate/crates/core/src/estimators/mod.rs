//! K-sample contrastive mutual-information estimators.
//!
//! Every estimator here has the same per-batch form
//! `log K + s⁺ − log Σₖ exp(sₖ)` with scores `sₖ = q·yₖ / β`. They differ in
//! where the positive and negatives come from, which is recorded in each
//! batch's provenance and checked where an estimator requires it.

pub mod discrete;

use serde::{Deserialize, Serialize};

use crate::encoder::{ContextEmbedding, SimilarityConfig};
use crate::envs::Skill;
use crate::error::{Error, Result};
use crate::numerics::{Tape, Tensor, Var};
use crate::replay::TaskId;

pub use discrete::{exact_mi, exact_sami, optimal_critic_infonce, DiscreteJoint, McEstimate};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub task: TaskId,
    pub skill: Option<Skill>,
}

/// Query, one positive and the negatives; `provenance` is either empty or
/// lists query, positive and then each negative.
#[derive(Clone, Debug, PartialEq)]
pub struct EstimatorBatch {
    pub query: ContextEmbedding,
    pub positive: ContextEmbedding,
    pub negatives: Vec<ContextEmbedding>,
    pub provenance: Vec<Provenance>,
}

impl EstimatorBatch {
    pub fn new(query: ContextEmbedding, positive: ContextEmbedding, negatives: Vec<ContextEmbedding>) -> Self {
        Self {
            query,
            positive,
            negatives,
            provenance: Vec::new(),
        }
    }

    pub fn with_provenance(mut self, provenance: Vec<Provenance>) -> Self {
        self.provenance = provenance;
        self
    }

    pub fn k(&self) -> usize {
        1 + self.negatives.len()
    }

    fn check_dims(&self, extra: &[ContextEmbedding]) -> Result<()> {
        let d = self.query.dim();
        let all = std::iter::once(&self.positive).chain(&self.negatives).chain(extra);
        if all.clone().any(|e| e.dim() != d) {
            return Err(Error::Shape {
                op: "estimator batch",
                shapes: std::iter::once(&self.query).chain(all).map(|e| vec![e.dim()]).collect(),
            });
        }
        if !self.provenance.is_empty() && self.provenance.len() != self.k() + 1 {
            return Err(Error::InvalidArgument(format!(
                "provenance has {} entries for a batch of {} embeddings",
                self.provenance.len(),
                self.k() + 1
            )));
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.k() < 2 {
            return Err(Error::SampleSize(self.k()));
        }
        self.check_dims(&[])
    }

    /// Every recorded sample comes from the query's task.
    fn check_intra_task(&self) -> Result<()> {
        let Some(first) = self.provenance.first() else {
            return Err(Error::InvalidArgument(
                "SaNCE batch requires provenance to verify the intra-task contract".into(),
            ));
        };
        if self.provenance.iter().any(|p| p.task != first.task) {
            return Err(Error::MixedTasks);
        }
        Ok(())
    }

    /// Keys `[K, d]` with the positive in row 0.
    fn keys(&self, extra: &[ContextEmbedding]) -> Tensor {
        let d = self.query.dim();
        let rows: Vec<f64> = std::iter::once(&self.positive)
            .chain(&self.negatives)
            .chain(extra)
            .flat_map(|e| e.values().iter().copied())
            .collect();
        Tensor::matrix(rows.len() / d.max(1), d, rows).expect("dimensions checked")
    }
}

/// Row-normalizes `x` on the tape; zero rows stay zero.
pub fn normalize_rows(tape: &mut Tape<'_>, x: Var) -> Result<Var> {
    let n = tape.l2_norm(x);
    let n = tape.max_scalar(n, 1e-12);
    let inv = tape.recip(n);
    tape.mul_col(x, inv)
}

/// `log K + s⁺ − LSE(s)` for each query row against its own keys.
///
/// `query: [1, d]`, `keys: [K, d]` with the positive in row 0; returns a
/// `[1, 1]` node.
pub fn contrastive_on_tape(tape: &mut Tape<'_>, query: Var, keys: Var, cfg: &SimilarityConfig) -> Result<Var> {
    cfg.validate()?;
    let k = tape.value(keys).rows();
    if k < 2 {
        return Err(Error::SampleSize(k));
    }
    let (q, y) = if cfg.normalize {
        (normalize_rows(tape, query)?, normalize_rows(tape, keys)?)
    } else {
        (query, keys)
    };
    let yt = tape.transpose(y);
    let s = tape.matmul(q, yt)?;
    let s = tape.scale(s, 1.0 / cfg.beta);
    let lse = tape.logsumexp(s);
    let pos = tape.slice_cols(s, 0, 1)?;
    let diff = tape.sub(pos, lse)?;
    Ok(tape.add_scalar(diff, (k as f64).ln()))
}

fn evaluate(query: &ContextEmbedding, keys: Tensor, cfg: &SimilarityConfig) -> Result<f64> {
    let mut tape = Tape::new();
    let q = tape.constant(query.to_tensor());
    let y = tape.constant(keys);
    let out = contrastive_on_tape(&mut tape, q, y, cfg)?;
    let v = tape.scalar(out);
    if !v.is_finite() {
        return Err(Error::NonFinite("contrastive estimator"));
    }
    Ok(v)
}

/// InfoNCE on a single batch: `log( f(q,p) / ((1/K)·[f(q,p) + Σ f(q,nₖ)]) )`.
pub fn infonce(batch: &EstimatorBatch, cfg: &SimilarityConfig) -> Result<f64> {
    batch.validate()?;
    evaluate(&batch.query, batch.keys(&[]), cfg)
}

/// SaNCE: the same per-batch value as [`infonce`], restricted to batches
/// whose samples all come from one task.
pub fn sance(batch: &EstimatorBatch, cfg: &SimilarityConfig) -> Result<f64> {
    batch.validate()?;
    batch.check_intra_task()?;
    evaluate(&batch.query, batch.keys(&[]), cfg)
}

/// Contrastive value over the union of intra-task negatives and
/// cross-task negatives.
pub fn sa_plus_infonce(
    intra: &EstimatorBatch,
    cross_negatives: &[ContextEmbedding],
    cfg: &SimilarityConfig,
) -> Result<f64> {
    let k = intra.k() + cross_negatives.len();
    if k < 2 {
        return Err(Error::SampleSize(k));
    }
    intra.check_dims(cross_negatives)?;
    if let (Some(q), Some(p)) = (intra.provenance.first(), intra.provenance.get(1)) {
        if q.task != p.task {
            return Err(Error::MixedTasks);
        }
    }
    evaluate(&intra.query, intra.keys(cross_negatives), cfg)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceMode {
    /// Distance between the mean positive and the mean negative embedding.
    #[default]
    MeanEmbedding,
    /// Mean of all positive–negative pairwise distances.
    MeanPairwise,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SoftSanceConfig {
    pub similarity: SimilarityConfig,
    pub distance: DistanceMode,
    /// Stop gradients through the distance multiplier.
    pub detach_multiplier: bool,
}

/// Distance between the positive set `[P, d]` and negative set `[N, d]`.
pub fn set_distance_on_tape(tape: &mut Tape<'_>, positives: Var, negatives: Var, mode: DistanceMode) -> Result<Var> {
    match mode {
        DistanceMode::MeanEmbedding => {
            let mp = tape.mean_rows(positives);
            let mn = tape.mean_rows(negatives);
            let diff = tape.sub(mp, mn)?;
            Ok(tape.l2_norm(diff))
        }
        DistanceMode::MeanPairwise => {
            let (p, n) = (tape.value(positives).rows(), tape.value(negatives).rows());
            let left: Vec<usize> = (0..p).flat_map(|i| std::iter::repeat_n(i, n)).collect();
            let right: Vec<usize> = (0..p).flat_map(|_| 0..n).collect();
            let a = tape.gather_rows(positives, &left)?;
            let b = tape.gather_rows(negatives, &right)?;
            let diff = tape.sub(a, b)?;
            let d = tape.l2_norm(diff);
            Ok(tape.mean(d))
        }
    }
}

/// `−max(d, 1) · I` given the estimator node `value`.
pub fn soft_sance_on_tape(
    tape: &mut Tape<'_>,
    positives: Var,
    negatives: Var,
    value: Var,
    cfg: &SoftSanceConfig,
) -> Result<Var> {
    if tape.value(positives).rows() == 0 || tape.value(negatives).rows() == 0 {
        return Err(Error::Empty("soft SaNCE positive or negative set"));
    }
    let d = set_distance_on_tape(tape, positives, negatives, cfg.distance)?;
    let mut mult = tape.max_scalar(d, 1.0);
    if cfg.detach_multiplier {
        mult = tape.detach(mult);
    }
    let weighted = tape.mul(mult, value)?;
    Ok(tape.neg(weighted))
}

fn stack(embs: &[ContextEmbedding], what: &'static str) -> Result<Tensor> {
    let Some(first) = embs.first() else {
        return Err(Error::Empty(what));
    };
    let d = first.dim();
    if embs.iter().any(|e| e.dim() != d) {
        return Err(Error::Shape {
            op: "soft_sance_loss",
            shapes: embs.iter().map(|e| vec![e.dim()]).collect(),
        });
    }
    Tensor::matrix(
        embs.len(),
        d,
        embs.iter().flat_map(|e| e.values().iter().copied()).collect(),
    )
}

/// Soft SaNCE loss `−max(d, 1) · I_SaNCE` for one intra-task batch.
pub fn soft_sance_loss(
    positives: &[ContextEmbedding],
    negatives: &[ContextEmbedding],
    batch: &EstimatorBatch,
    cfg: &SoftSanceConfig,
) -> Result<f64> {
    let pos = stack(positives, "soft SaNCE positive set")?;
    let neg = stack(negatives, "soft SaNCE negative set")?;
    if pos.cols() != batch.query.dim() || neg.cols() != batch.query.dim() {
        return Err(Error::Shape {
            op: "soft_sance_loss",
            shapes: vec![pos.shape().to_vec(), neg.shape().to_vec(), vec![batch.query.dim()]],
        });
    }
    let value = sance(batch, &cfg.similarity)?;
    let mut tape = Tape::new();
    let p = tape.constant(pos);
    let n = tape.constant(neg);
    let v = tape.constant(Tensor::scalar(value));
    let loss = soft_sance_on_tape(&mut tape, p, n, v, cfg)?;
    Ok(tape.scalar(loss))
}

/// Sizes of the sample spaces an estimator must cover to be tight.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleSpaceSpec {
    pub num_contexts: usize,
    pub num_skills: usize,
    /// Trajectories per (context, skill) pair.
    pub multiplicity: usize,
}

impl SampleSpaceSpec {
    pub fn new(num_contexts: usize, num_skills: usize, multiplicity: usize) -> Result<Self> {
        if num_contexts == 0 || num_skills == 0 || multiplicity == 0 {
            return Err(Error::InvalidArgument("sample-space sizes must be positive".into()));
        }
        Ok(Self {
            num_contexts,
            num_skills,
            multiplicity,
        })
    }

    pub fn k_star_sance(&self) -> usize {
        self.num_skills * self.multiplicity
    }

    pub fn k_star_infonce(&self) -> usize {
        self.num_contexts * self.num_skills * self.multiplicity
    }

    /// `(Σᵢ |π⁻ᵢ| + |π⁺|) · M` over the negative-skill counts of each context.
    pub fn k_star_sa_plus_infonce(&self, negative_skills: &[usize], positive_skills: usize) -> usize {
        (negative_skills.iter().sum::<usize>() + positive_skills) * self.multiplicity
    }
}
