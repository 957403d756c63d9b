//! One-axis hyperparameter sweeps over seeds.

use serde::{Deserialize, Serialize};

use sami_core::envs::SplitName;

use crate::config::ExperimentConfig;
use crate::error::{HarnessError, Result};
use crate::stats::mean_std;
use crate::train::{meta_train, RunResult};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    BufferSize,
    ContrastiveBatch,
    Alpha,
    /// Alias of `contrastive_batch`: the number of contrastive keys.
    K,
}

impl SweepAxis {
    pub fn as_str(self) -> &'static str {
        match self {
            SweepAxis::BufferSize => "buffer_size",
            SweepAxis::ContrastiveBatch => "contrastive_batch",
            SweepAxis::Alpha => "alpha",
            SweepAxis::K => "K",
        }
    }

    /// `config` with this axis set to `value`.
    pub fn apply(self, config: &ExperimentConfig, value: f64) -> Result<ExperimentConfig> {
        let mut cfg = config.clone();
        let as_count = |v: f64| -> Result<usize> {
            if v >= 1.0 && v.fract() == 0.0 && v <= usize::MAX as f64 {
                Ok(v as usize)
            } else {
                Err(HarnessError::Config(format!(
                    "{} needs a positive integer, got {v}",
                    self.as_str()
                )))
            }
        };
        match self {
            SweepAxis::BufferSize => cfg.replay.capacity = as_count(value)?,
            SweepAxis::ContrastiveBatch | SweepAxis::K => cfg.contrastive.batch_size = as_count(value)?,
            SweepAxis::Alpha => cfg.contrastive.alpha = value,
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

impl std::str::FromStr for SweepAxis {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "buffer_size" => Ok(SweepAxis::BufferSize),
            "contrastive_batch" => Ok(SweepAxis::ContrastiveBatch),
            "alpha" => Ok(SweepAxis::Alpha),
            "K" | "k" => Ok(SweepAxis::K),
            other => Err(HarnessError::Config(format!("unknown sweep axis `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRun {
    pub value: f64,
    pub seed: u64,
    pub config: ExperimentConfig,
}

/// Every `(value, seed)` pair, values outermost.
pub fn plan(base: &ExperimentConfig, axis: SweepAxis, values: &[f64]) -> Result<Vec<SweepRun>> {
    if values.is_empty() {
        return Err(HarnessError::Config("sweep needs at least one value".into()));
    }
    let mut runs = Vec::new();
    for &value in values {
        let config = axis.apply(base, value)?;
        for &seed in &base.seeds {
            runs.push(SweepRun {
                value,
                seed,
                config: config.clone(),
            });
        }
    }
    Ok(runs)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub axis: SweepAxis,
    pub value: f64,
    pub runs: usize,
    pub split: SplitName,
    pub success_mean: f64,
    pub success_std: f64,
    pub return_mean: f64,
    pub return_std: f64,
}

/// Mean and standard deviation over seeds for every value and split, in the
/// order values first appear.
pub fn aggregate(axis: SweepAxis, results: &[(f64, RunResult)]) -> Vec<SweepRow> {
    let mut values: Vec<f64> = Vec::new();
    for (v, _) in results {
        if !values.contains(v) {
            values.push(*v);
        }
    }
    let mut rows = Vec::new();
    for value in values {
        let group: Vec<&RunResult> = results.iter().filter(|(v, _)| *v == value).map(|(_, r)| r).collect();
        for split in SplitName::ALL {
            let evals: Vec<_> = group.iter().filter_map(|r| r.split(split)).collect();
            if evals.is_empty() {
                continue;
            }
            let succ: Vec<f64> = evals.iter().map(|e| e.success_rate).collect();
            let ret: Vec<f64> = evals.iter().map(|e| e.mean_return).collect();
            let (success_mean, success_std) = mean_std(&succ);
            let (return_mean, return_std) = mean_std(&ret);
            rows.push(SweepRow {
                axis,
                value,
                runs: evals.len(),
                split,
                success_mean,
                success_std,
                return_mean,
                return_std,
            });
        }
    }
    rows
}

pub const SWEEP_COLUMNS: [&str; 8] = [
    "axis",
    "value",
    "runs",
    "split",
    "success_mean",
    "success_std",
    "return_mean",
    "return_std",
];

pub fn row_fields(r: &SweepRow) -> Vec<String> {
    vec![
        r.axis.as_str().to_string(),
        r.value.to_string(),
        r.runs.to_string(),
        r.split.to_string(),
        r.success_mean.to_string(),
        r.success_std.to_string(),
        r.return_mean.to_string(),
        r.return_std.to_string(),
    ]
}

/// Runs the whole sweep in this process, one run after another.
/// Every (value, result) pair and the aggregated rows.
pub type SweepOutcome = (Vec<(f64, RunResult)>, Vec<SweepRow>);

pub fn run_in_process(base: &ExperimentConfig, axis: SweepAxis, values: &[f64]) -> Result<SweepOutcome> {
    let mut results = Vec::new();
    for run in plan(base, axis, values)? {
        let out = meta_train(&run.config, run.seed)?;
        results.push((run.value, out.result));
    }
    let rows = aggregate(axis, &results);
    Ok((results, rows))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plan_sizes() {
        let base = ExperimentConfig::default();
        let runs = plan(&base, SweepAxis::BufferSize, &[1000.0, 10000.0, 100000.0]).unwrap();
        assert_eq!(runs.len(), 15);
        assert_eq!(runs[0].config.replay.capacity, 1000);
        assert_eq!(runs[14].config.replay.capacity, 100000);
        let mut single = base.clone();
        single.seeds = vec![3];
        assert_eq!(plan(&single, SweepAxis::Alpha, &[0.5]).unwrap().len(), 1);
    }

    #[test]
    fn k_aliases_contrastive_batch() {
        let base = ExperimentConfig::default();
        let a = SweepAxis::K.apply(&base, 16.0).unwrap();
        let b = SweepAxis::ContrastiveBatch.apply(&base, 16.0).unwrap();
        assert_eq!(a, b);
        assert!(SweepAxis::K.apply(&base, 1.5).is_err());
        assert!(SweepAxis::ContrastiveBatch.apply(&base, 1.0).is_err());
        assert_eq!("K".parse::<SweepAxis>().unwrap(), SweepAxis::K);
        assert!("depth".parse::<SweepAxis>().is_err());
    }

    #[test]
    fn tiny_sweep_aggregates_each_value() {
        let mut base = ExperimentConfig {
            variant: crate::config::Variant::Satesac,
            seeds: vec![0],
            ..Default::default()
        };
        base.encoder.hidden_dim = 4;
        base.sac.hidden = vec![8];
        base.training.total_timesteps = 400;
        base.training.learning_starts = 200;
        base.training.batch_size = 16;
        base.training.gradient_steps = 1;
        base.training.transitions_per_trajectory = 8;
        base.training.eval_episodes_per_task = 1;
        base.training.probe_every = 1_000_000;
        base.contrastive.tasks_per_step = Some(1);
        let (results, rows) = run_in_process(&base, SweepAxis::ContrastiveBatch, &[4.0, 8.0]).unwrap();
        assert_eq!(results.len(), 2);
        assert_eq!(rows.len(), 2 * SplitName::ALL.len());
        assert!(rows.iter().all(|r| r.runs == 1 && r.success_std == 0.0));
        assert_eq!(results[1].1.config.contrastive.batch_size, 8);
    }
}
