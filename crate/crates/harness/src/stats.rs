//! Summary statistics and the paired t-test used to compare variants.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{HarnessError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairedTTest {
    pub n: usize,
    pub mean_difference: f64,
    pub t: f64,
    /// Two-sided.
    pub p: f64,
}

/// Two-sided paired t-test on `a − b` with `n − 1` degrees of freedom.
///
/// Zero variance of the differences gives `p = 1` when their mean is zero
/// and `p = 0` otherwise.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<PairedTTest> {
    if a.len() != b.len() {
        return Err(HarnessError::Stats(format!(
            "paired samples differ in length: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    let n = a.len();
    if n < 2 {
        return Err(HarnessError::Stats(format!(
            "paired t-test needs at least 2 pairs, got {n}"
        )));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(HarnessError::Stats("non-finite sample".into()));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let (mean, sd) = mean_std(&d);
    if sd == 0.0 {
        let (t, p) = if mean == 0.0 {
            (0.0, 1.0)
        } else {
            (mean.signum() * f64::INFINITY, 0.0)
        };
        return Ok(PairedTTest {
            n,
            mean_difference: mean,
            t,
            p,
        });
    }
    let t = mean / (sd / (n as f64).sqrt());
    let dist = StudentsT::new(0.0, 1.0, (n - 1) as f64).map_err(|e| HarnessError::Stats(e.to_string()))?;
    let p = (2.0 * dist.sf(t.abs())).min(1.0);
    Ok(PairedTTest {
        n,
        mean_difference: mean,
        t,
        p,
    })
}

/// Mean and sample standard deviation (`n − 1` denominator; zero for a
/// single value).
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() == 1 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}
