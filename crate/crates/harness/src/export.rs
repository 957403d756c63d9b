//! Final-step context embeddings of evaluation episodes with a 2-D PCA
//! projection.

use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use sami_core::envs::{Skill, SplitName};

use crate::agent::{Agent, AgentPolicy};
use crate::config::ExperimentConfig;
use crate::error::{HarnessError, Result};
use crate::eval::meta_test_detailed;
use crate::io::{write_csv, ResultHeader};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pca {
    pub mean: Vec<f64>,
    /// Principal axes, one row per retained component.
    pub components: Vec<Vec<f64>>,
    /// All covariance eigenvalues, largest first.
    pub eigenvalues: Vec<f64>,
}

impl Pca {
    /// Exact eigendecomposition of the sample covariance of `rows`.
    pub fn fit(rows: &[Vec<f64>], keep: usize) -> Result<Self> {
        let Some(first) = rows.first() else {
            return Err(HarnessError::Stats("PCA of zero rows".into()));
        };
        let d = first.len();
        if rows.iter().any(|r| r.len() != d) {
            return Err(HarnessError::Stats("PCA rows differ in dimension".into()));
        }
        if keep > d {
            return Err(HarnessError::Stats(format!("cannot keep {keep} of {d} components")));
        }
        let n = rows.len();
        let mean: Vec<f64> = (0..d)
            .map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n as f64)
            .collect();
        let centered = DMatrix::from_fn(n, d, |i, j| rows[i][j] - mean[j]);
        let denom = (n.max(2) - 1) as f64;
        let cov = (centered.transpose() * &centered) / denom;
        let eig = SymmetricEigen::new(cov);
        let mut order: Vec<usize> = (0..d).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let components = order[..keep]
            .iter()
            .map(|&k| {
                let mut v: Vec<f64> = eig.eigenvectors.column(k).iter().copied().collect();
                // Deterministic sign: the largest-magnitude entry is positive.
                let big = v
                    .iter()
                    .copied()
                    .fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
                if big < 0.0 {
                    v.iter_mut().for_each(|x| *x = -*x);
                }
                v
            })
            .collect();
        Ok(Self {
            mean,
            components,
            eigenvalues: order.iter().map(|&k| eig.eigenvalues[k]).collect(),
        })
    }

    pub fn project(&self, row: &[f64]) -> Vec<f64> {
        self.components
            .iter()
            .map(|c| c.iter().zip(row).zip(&self.mean).map(|((a, x), m)| a * (x - m)).sum())
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingRow {
    pub split: SplitName,
    pub mass: f64,
    pub friction: f64,
    pub crippled_mask: u32,
    pub skill: Skill,
    pub success: bool,
    pub embedding: Vec<f64>,
    pub projection: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingExport {
    pub rows: Vec<EmbeddingRow>,
    pub pca: Pca,
}

/// One row per evaluation episode of `split`, using the embedding after the
/// final observation.
pub fn export_embeddings(
    agent: &Agent,
    config: &ExperimentConfig,
    split: SplitName,
    episodes_per_task: usize,
    rng: &mut ChaCha8Rng,
) -> Result<EmbeddingExport> {
    let mut policy = AgentPolicy::new(agent, &config.sac, true);
    let detailed = meta_test_detailed(
        &mut policy,
        config.splits.get(split),
        &config.physics,
        episodes_per_task,
        rng,
    )?;
    let embeddings: Vec<Vec<f64>> = detailed
        .embeddings
        .iter()
        .map(|e| {
            e.as_ref()
                .map(|e| e.values().to_vec())
                .expect("agent policy keeps an embedding")
        })
        .collect();
    let pca = Pca::fit(&embeddings, 2.min(config.encoder.embedding_dim))?;
    let rows = detailed
        .result
        .episodes
        .iter()
        .zip(embeddings)
        .map(|(e, emb)| EmbeddingRow {
            split: e.split,
            mass: e.features.mass,
            friction: e.features.friction,
            crippled_mask: e.features.mask_bits(),
            skill: e.skill,
            success: e.success,
            projection: pca.project(&emb),
            embedding: emb,
        })
        .collect();
    Ok(EmbeddingExport { rows, pca })
}

pub fn write_embeddings_csv(path: &Path, header: &ResultHeader, export: &EmbeddingExport) -> Result<()> {
    let Some(first) = export.rows.first() else {
        return write_csv(path, Some(header), &["split"], &[]);
    };
    let mut columns: Vec<String> = ["split", "mass", "friction", "crippled_mask", "skill", "success"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    columns.extend((0..first.embedding.len()).map(|i| format!("e{i}")));
    columns.extend((0..first.projection.len()).map(|i| format!("pc{}", i + 1)));
    let rows: Vec<Vec<String>> = export
        .rows
        .iter()
        .map(|r| {
            let mut v = vec![
                r.split.to_string(),
                r.mass.to_string(),
                r.friction.to_string(),
                r.crippled_mask.to_string(),
                r.skill.as_str().to_string(),
                r.success.to_string(),
            ];
            v.extend(r.embedding.iter().chain(&r.projection).map(|x| x.to_string()));
            v
        })
        .collect();
    let cols: Vec<&str> = columns.iter().map(String::as_str).collect();
    write_csv(path, Some(header), &cols, &rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_distr::StandardNormal;

    #[test]
    fn identical_rows_project_to_zero() {
        let rows = vec![vec![0.3, -1.0, 2.0, 0.0, 1.0, 5.0]; 20];
        let pca = Pca::fit(&rows, 2).unwrap();
        for r in &rows {
            assert!(pca.project(r).iter().all(|x| x.abs() < 1e-12));
        }
    }

    #[test]
    fn points_on_a_line_have_no_second_coordinate() {
        let dir = [1.0, 2.0, -1.0, 0.5, 0.0, 3.0];
        let rows: Vec<Vec<f64>> = (0..30)
            .map(|i| dir.iter().map(|d| 0.7 + d * (i as f64 - 11.0) * 0.1).collect())
            .collect();
        let pca = Pca::fit(&rows, 2).unwrap();
        for r in &rows {
            assert!(pca.project(r)[1].abs() < 1e-9);
        }
    }

    #[test]
    fn projection_variance_matches_top_eigenvalues() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let scales = [3.0, 2.0, 1.0, 0.5, 0.3, 0.1];
        let rows: Vec<Vec<f64>> = (0..2000)
            .map(|_| {
                scales
                    .iter()
                    .map(|s| s * rng.sample::<f64, _>(StandardNormal))
                    .collect()
            })
            .collect();
        let pca = Pca::fit(&rows, 2).unwrap();
        let proj: Vec<Vec<f64>> = rows.iter().map(|r| pca.project(r)).collect();
        for axis in 0..2 {
            let xs: Vec<f64> = proj.iter().map(|p| p[axis]).collect();
            let (m, sd) = crate::stats::mean_std(&xs);
            assert!(m.abs() < 1e-9);
            assert!((sd * sd - pca.eigenvalues[axis]).abs() < 1e-9 * pca.eigenvalues[axis]);
        }
        assert!(pca.eigenvalues.windows(2).all(|w| w[0] >= w[1]));
    }
}
