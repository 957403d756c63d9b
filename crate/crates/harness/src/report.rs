//! Per-split comparison tables aggregated from run result files.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use sami_core::envs::{Skill, SplitName};

use crate::config::Variant;
use crate::error::{HarnessError, Result};
use crate::io::read_json;
use crate::stats::{mean_std, paired_t_test, PairedTTest};
use crate::train::RunResult;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariantRow {
    pub split: SplitName,
    pub variant: Variant,
    pub seeds: Vec<u64>,
    pub success_mean: f64,
    pub success_std: f64,
    pub return_mean: f64,
    pub return_std: f64,
    pub push_fraction: f64,
    pub lift_fraction: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub split: SplitName,
    pub variant: Variant,
    pub baseline: Variant,
    /// Seeds present for both variants.
    pub seeds: Vec<u64>,
    pub test: Option<PairedTTest>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub rows: Vec<VariantRow>,
    pub comparisons: Vec<Comparison>,
}

/// Variant pairs compared by paired t-tests over matching seeds.
pub const COMPARISONS: [(Variant, Variant); 4] = [
    (Variant::Satesac, Variant::Tesac),
    (Variant::Saccm, Variant::Ccm),
    (Variant::Ccm, Variant::Tesac),
    (Variant::Saccm, Variant::Tesac),
];

/// Every `*.json` run result under `dir`, sorted by path.
pub fn load_results(dir: &Path) -> Result<Vec<RunResult>> {
    let mut paths: Vec<PathBuf> = Vec::new();
    collect_json(dir, &mut paths)?;
    paths.sort();
    let mut out = Vec::new();
    for p in paths {
        let value: serde_json::Value = read_json(&p)?;
        // Checkpoints and other JSON files sit alongside results.
        if value.get("evaluation").is_some() && value.get("buffer_fill").is_some() {
            out.push(serde_json::from_value(value).map_err(|source| HarnessError::Json { path: p, source })?);
        }
    }
    Ok(out)
}

fn collect_json(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let entries = std::fs::read_dir(dir).map_err(|e| HarnessError::io(dir, e))?;
    for entry in entries {
        let path = entry.map_err(|e| HarnessError::io(dir, e))?.path();
        if path.is_dir() {
            collect_json(&path, out)?;
        } else if path.extension().is_some_and(|e| e == "json") {
            out.push(path);
        }
    }
    Ok(())
}

/// Seed → (success, return, push fraction, lift fraction).
type BySeed = BTreeMap<u64, (f64, f64, f64, f64)>;

pub fn build(results: &[RunResult]) -> Result<Report> {
    let mut table: BTreeMap<(SplitName, Variant), BySeed> = BTreeMap::new();
    for r in results {
        for s in &r.evaluation {
            let cell = (
                s.success_rate,
                s.mean_return,
                s.skills.fraction(Skill::Push),
                s.skills.fraction(Skill::Lift),
            );
            if table
                .entry((s.split, r.variant))
                .or_default()
                .insert(r.seed, cell)
                .is_some()
            {
                return Err(HarnessError::Stats(format!(
                    "duplicate result for variant {} seed {} split {}",
                    r.variant, r.seed, s.split
                )));
            }
        }
    }
    let mut rows = Vec::new();
    for ((split, variant), by_seed) in &table {
        let col = |f: fn(&(f64, f64, f64, f64)) -> f64| by_seed.values().map(f).collect::<Vec<f64>>();
        let (success_mean, success_std) = mean_std(&col(|c| c.0));
        let (return_mean, return_std) = mean_std(&col(|c| c.1));
        rows.push(VariantRow {
            split: *split,
            variant: *variant,
            seeds: by_seed.keys().copied().collect(),
            success_mean,
            success_std,
            return_mean,
            return_std,
            push_fraction: mean_std(&col(|c| c.2)).0,
            lift_fraction: mean_std(&col(|c| c.3)).0,
        });
    }
    let mut comparisons = Vec::new();
    for split in SplitName::ALL {
        for (variant, baseline) in COMPARISONS {
            let (Some(a), Some(b)) = (table.get(&(split, variant)), table.get(&(split, baseline))) else {
                continue;
            };
            let seeds: Vec<u64> = a.keys().filter(|s| b.contains_key(s)).copied().collect();
            let xs: Vec<f64> = seeds.iter().map(|s| a[s].0).collect();
            let ys: Vec<f64> = seeds.iter().map(|s| b[s].0).collect();
            let test = if seeds.len() >= 2 {
                Some(paired_t_test(&xs, &ys)?)
            } else {
                None
            };
            comparisons.push(Comparison {
                split,
                variant,
                baseline,
                seeds,
                test,
            });
        }
    }
    Ok(Report { rows, comparisons })
}

impl Report {
    /// Markdown tables, one per split.
    pub fn to_markdown(&self) -> String {
        let mut out = String::new();
        for split in SplitName::ALL {
            let rows: Vec<&VariantRow> = self.rows.iter().filter(|r| r.split == split).collect();
            if rows.is_empty() {
                continue;
            }
            let _ = writeln!(out, "## {split}\n");
            let _ = writeln!(out, "| variant | seeds | success | return | push | lift |");
            let _ = writeln!(out, "|---|---|---|---|---|---|");
            for r in rows {
                let _ = writeln!(
                    out,
                    "| {} | {} | {:.3} ± {:.3} | {:.2} ± {:.2} | {:.3} | {:.3} |",
                    r.variant,
                    r.seeds.len(),
                    r.success_mean,
                    r.success_std,
                    r.return_mean,
                    r.return_std,
                    r.push_fraction,
                    r.lift_fraction
                );
            }
            let cmps: Vec<&Comparison> = self.comparisons.iter().filter(|c| c.split == split).collect();
            if !cmps.is_empty() {
                let _ = writeln!(out, "\n| comparison | pairs | mean diff | t | p |");
                let _ = writeln!(out, "|---|---|---|---|---|");
                for c in cmps {
                    match &c.test {
                        Some(t) => {
                            let _ = writeln!(
                                out,
                                "| {} vs {} | {} | {:+.3} | {:.3} | {:.4} |",
                                c.variant, c.baseline, t.n, t.mean_difference, t.t, t.p
                            );
                        }
                        None => {
                            let _ = writeln!(
                                out,
                                "| {} vs {} | {} | n/a | n/a | n/a |",
                                c.variant,
                                c.baseline,
                                c.seeds.len()
                            );
                        }
                    }
                }
            }
            out.push('\n');
        }
        out
    }

    pub fn csv_rows(&self) -> Vec<Vec<String>> {
        self.rows
            .iter()
            .map(|r| {
                let p = self
                    .comparisons
                    .iter()
                    .find(|c| c.split == r.split && c.variant == r.variant && c.baseline == Variant::Tesac)
                    .and_then(|c| c.test)
                    .map(|t| t.p.to_string())
                    .unwrap_or_default();
                vec![
                    r.split.to_string(),
                    r.variant.to_string(),
                    r.seeds.len().to_string(),
                    r.success_mean.to_string(),
                    r.success_std.to_string(),
                    r.return_mean.to_string(),
                    r.return_std.to_string(),
                    r.push_fraction.to_string(),
                    r.lift_fraction.to_string(),
                    p,
                ]
            })
            .collect()
    }
}

pub const REPORT_COLUMNS: [&str; 10] = [
    "split",
    "variant",
    "seeds",
    "success_mean",
    "success_std",
    "return_mean",
    "return_std",
    "push_fraction",
    "lift_fraction",
    "p_vs_tesac",
];
