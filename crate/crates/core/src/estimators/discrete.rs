//! Exact information quantities over small discrete joints, and a
//! Monte-Carlo InfoNCE evaluation with the density-ratio critic.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major probability table over two or three variables.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscreteJoint {
    arities: Vec<usize>,
    probs: Vec<f64>,
}

impl DiscreteJoint {
    pub fn new(arities: Vec<usize>, probs: Vec<f64>) -> Result<Self> {
        if !(2..=3).contains(&arities.len()) || arities.contains(&0) {
            return Err(Error::InvalidDistribution(format!(
                "arities {arities:?} must name 2 or 3 non-empty variables"
            )));
        }
        let n: usize = arities.iter().product();
        if probs.len() != n {
            return Err(Error::InvalidDistribution(format!(
                "{} entries for arities {arities:?}",
                probs.len()
            )));
        }
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::InvalidDistribution("negative or non-finite entry".into()));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidDistribution(format!("entries sum to {total}")));
        }
        Ok(Self { arities, probs })
    }

    /// Two-variable table from nested rows `p[x][y]`.
    pub fn from_table(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::InvalidDistribution("ragged table".into()));
        }
        Self::new(vec![rows.len(), cols], rows.concat())
    }

    /// `p(c) p(π|c) p(τ|c)` over `(c, π, τ)`.
    pub fn common_cause(p_c: &[f64], p_pi_given_c: &[Vec<f64>], p_tau_given_c: &[Vec<f64>]) -> Result<Self> {
        let nc = p_c.len();
        if p_pi_given_c.len() != nc || p_tau_given_c.len() != nc || nc == 0 {
            return Err(Error::InvalidDistribution(
                "conditional tables must have one row per c".into(),
            ));
        }
        let npi = p_pi_given_c[0].len();
        let ntau = p_tau_given_c[0].len();
        let mut probs = Vec::with_capacity(nc * npi * ntau);
        for c in 0..nc {
            if p_pi_given_c[c].len() != npi || p_tau_given_c[c].len() != ntau {
                return Err(Error::InvalidDistribution("ragged conditional table".into()));
            }
            for &pp in &p_pi_given_c[c] {
                for &pt in &p_tau_given_c[c] {
                    probs.push(p_c[c] * pp * pt);
                }
            }
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() <= 1e-9 && total > 0.0 {
            probs.iter_mut().for_each(|p| *p /= total);
        }
        Self::new(vec![nc, npi, ntau], probs)
    }

    pub fn arities(&self) -> &[usize] {
        &self.arities
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    fn index(&self, idx: &[usize]) -> usize {
        idx.iter().zip(&self.arities).fold(0, |acc, (&i, &a)| acc * a + i)
    }

    pub fn p(&self, idx: &[usize]) -> f64 {
        self.probs[self.index(idx)]
    }

    fn unravel(&self, mut flat: usize) -> Vec<usize> {
        let mut idx = vec![0; self.arities.len()];
        for (slot, &a) in idx.iter_mut().zip(&self.arities).rev() {
            *slot = flat % a;
            flat /= a;
        }
        idx
    }

    /// Marginal table over the listed variables, in the listed order.
    pub fn marginal(&self, keep: &[usize]) -> Vec<f64> {
        let dims: Vec<usize> = keep.iter().map(|&k| self.arities[k]).collect();
        let mut out = vec![0.0; dims.iter().product()];
        for (flat, &p) in self.probs.iter().enumerate() {
            let idx = self.unravel(flat);
            let j = keep.iter().zip(&dims).fold(0, |acc, (&k, &d)| acc * d + idx[k]);
            out[j] += p;
        }
        out
    }

    /// Two-variable joint over variables `a` and `b`.
    pub fn pair(&self, a: usize, b: usize) -> Result<Self> {
        Self::new(vec![self.arities[a], self.arities[b]], self.marginal(&[a, b]))
    }
}

fn require_vars(joint: &DiscreteJoint, n: usize) -> Result<()> {
    if joint.arities.len() != n {
        return Err(Error::InvalidDistribution(format!(
            "expected a {n}-variable table, got arities {:?}",
            joint.arities
        )));
    }
    Ok(())
}

/// `Σ p(x,y) log(p(x,y) / (p(x) p(y)))`, natural log.
pub fn exact_mi(joint: &DiscreteJoint) -> Result<f64> {
    require_vars(joint, 2)?;
    let px = joint.marginal(&[0]);
    let py = joint.marginal(&[1]);
    let mut mi = 0.0;
    for (x, &pxv) in px.iter().enumerate() {
        for (y, &pyv) in py.iter().enumerate() {
            let pxy = joint.p(&[x, y]);
            if pxy > 0.0 {
                mi += pxy * (pxy / (pxv * pyv)).ln();
            }
        }
    }
    Ok(mi.max(0.0))
}

/// Interaction information `I(c;τ) − I(c;τ|π)` over `(c, π, τ)`.
pub fn exact_sami(joint: &DiscreteJoint) -> Result<f64> {
    require_vars(joint, 3)?;
    let i_c_tau = exact_mi(&joint.pair(0, 2)?)?;
    let a = joint.arities();
    let p_pi = joint.marginal(&[1]);
    let p_c_pi = joint.marginal(&[0, 1]);
    let p_pi_tau = joint.marginal(&[1, 2]);
    let mut conditional = 0.0;
    for c in 0..a[0] {
        for pi in 0..a[1] {
            for tau in 0..a[2] {
                let p = joint.p(&[c, pi, tau]);
                if p > 0.0 {
                    let num = p * p_pi[pi];
                    let den = p_c_pi[c * a[1] + pi] * p_pi_tau[pi * a[2] + tau];
                    conditional += p * (num / den).ln();
                }
            }
        }
    }
    Ok(i_c_tau - conditional)
}

/// Mean and standard error of a Monte-Carlo average.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub mean: f64,
    pub std_err: f64,
    pub samples: usize,
}

/// InfoNCE with the critic `f*(x,y) = p(x,y) / (p(x) p(y))`, averaged over
/// `num_mc` batches: one `(x, y₁)` from the joint and `K − 1` negatives
/// `yₖ` from the marginal `p(y)`.
pub fn optimal_critic_infonce(joint: &DiscreteJoint, k: usize, num_mc: usize, seed: u64) -> Result<McEstimate> {
    require_vars(joint, 2)?;
    if k < 2 {
        return Err(Error::SampleSize(k));
    }
    if num_mc == 0 {
        return Err(Error::InvalidArgument("num_mc must be positive".into()));
    }
    let ny = joint.arities[1];
    let px = joint.marginal(&[0]);
    let py = joint.marginal(&[1]);
    let pair_dist =
        WeightedIndex::new(joint.probs.iter().copied()).map_err(|e| Error::InvalidDistribution(e.to_string()))?;
    let y_dist = WeightedIndex::new(py.iter().copied()).map_err(|e| Error::InvalidDistribution(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let critic = |x: usize, y: usize| -> f64 {
        let denom = px[x] * py[y];
        if denom > 0.0 {
            joint.probs[x * ny + y] / denom
        } else {
            0.0
        }
    };

    let (mut sum, mut sum_sq, mut used) = (0.0, 0.0, 0usize);
    for _ in 0..num_mc {
        let flat = pair_dist.sample(&mut rng);
        let (x, y1) = (flat / ny, flat % ny);
        let f1 = critic(x, y1);
        let mut total = f1;
        for _ in 1..k {
            total += critic(x, y_dist.sample(&mut rng));
        }
        if f1 <= 0.0 || total <= 0.0 {
            continue;
        }
        let v = (f1 / (total / k as f64)).ln();
        sum += v;
        sum_sq += v * v;
        used += 1;
    }
    if used == 0 {
        return Err(Error::InvalidDistribution(
            "every Monte-Carlo sample had zero critic value".into(),
        ));
    }
    let n = used as f64;
    let mean = sum / n;
    let var = if used > 1 {
        ((sum_sq - n * mean * mean) / (n - 1.0)).max(0.0)
    } else {
        0.0
    };
    Ok(McEstimate {
        mean,
        std_err: (var / n).sqrt(),
        samples: used,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::LN_2;

    fn uniform_identity(n: usize) -> DiscreteJoint {
        let mut probs = vec![0.0; n * n];
        for i in 0..n {
            probs[i * n + i] = 1.0 / n as f64;
        }
        DiscreteJoint::new(vec![n, n], probs).unwrap()
    }

    #[test]
    fn independent_table_has_zero_mi() {
        let j = DiscreteJoint::from_table(&[vec![0.06, 0.14], vec![0.24, 0.56]]).unwrap();
        assert!(exact_mi(&j).unwrap().abs() < 1e-12);
    }

    #[test]
    fn identity_binary_is_log_two() {
        assert!((exact_mi(&uniform_identity(2)).unwrap() - LN_2).abs() < 1e-12);
    }

    #[test]
    fn four_term_table() {
        let j = DiscreteJoint::from_table(&[vec![0.4, 0.1], vec![0.1, 0.4]]).unwrap();
        let expected = 2.0 * 0.4 * (0.4f64 / 0.25).ln() + 2.0 * 0.1 * (0.1f64 / 0.25).ln();
        assert!((exact_mi(&j).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn invalid_tables_rejected() {
        assert!(DiscreteJoint::from_table(&[vec![0.5, 0.6]]).is_err());
        assert!(DiscreteJoint::from_table(&[vec![-0.1, 1.1]]).is_err());
        assert!(DiscreteJoint::new(vec![4], vec![0.25; 4]).is_err());
        let three = DiscreteJoint::new(vec![2, 1, 1], vec![0.5, 0.5]).unwrap();
        assert!(exact_mi(&three).is_err());
        assert!(exact_sami(&uniform_identity(2)).is_err());
    }

    #[test]
    fn sami_with_independent_skill_is_zero() {
        // π independent of (c, τ)
        let base = [[0.4, 0.1], [0.1, 0.4]];
        let p_pi = [0.3, 0.7];
        let mut probs = Vec::new();
        for row in base {
            for &q in &p_pi {
                for v in row {
                    probs.push(v * q);
                }
            }
        }
        let j = DiscreteJoint::new(vec![2, 2, 2], probs).unwrap();
        assert!(exact_sami(&j).unwrap().abs() < 1e-12);
    }

    #[test]
    fn sami_deterministic_common_cause_is_log_two() {
        let j = DiscreteJoint::common_cause(
            &[0.5, 0.5],
            &[vec![1.0, 0.0], vec![0.0, 1.0]],
            &[vec![1.0, 0.0], vec![0.0, 1.0]],
        )
        .unwrap();
        assert!((exact_sami(&j).unwrap() - LN_2).abs() < 1e-12);
    }

    #[test]
    fn optimal_critic_independent_is_zero() {
        let j = DiscreteJoint::from_table(&[vec![0.06, 0.14], vec![0.24, 0.56]]).unwrap();
        for k in [2, 8] {
            let est = optimal_critic_infonce(&j, k, 2000, 1).unwrap();
            assert!(est.mean.abs() < 1e-12);
        }
    }

    #[test]
    fn optimal_critic_matches_binomial_expectation() {
        // X = Y uniform over n: f* = n·[x = y], so the batch value is
        // log(K / (1 + B)) with B ~ Binomial(K − 1, 1/n).
        let (n, k) = (8usize, 16usize);
        let p = 1.0 / n as f64;
        let mut expected = 0.0;
        let mut log_binom = 0.0f64;
        for b in 0..k {
            if b > 0 {
                log_binom += ((k - b) as f64).ln() - (b as f64).ln();
            }
            let prob = (log_binom + b as f64 * p.ln() + (k - 1 - b) as f64 * (1.0 - p).ln()).exp();
            expected += prob * (k as f64 / (1.0 + b as f64)).ln();
        }
        let est = optimal_critic_infonce(&uniform_identity(n), k, 40_000, 3).unwrap();
        assert!(
            (est.mean - expected).abs() < 4.0 * est.std_err + 1e-3,
            "{} vs {expected} (se {})",
            est.mean,
            est.std_err
        );
        assert!(est.mean <= (k as f64).ln() + 3.0 * est.std_err);
    }
}
