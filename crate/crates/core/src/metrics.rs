//! Trial metrics and the paired signed-rank test.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::geometry::angle_diff;

/// Largest sample for which the signed-rank p-value is computed exactly.
pub const WILCOXON_EXACT_MAX_N: usize = 20;

/// A rate that may be undefined because its time base is zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalized {
    pub value: f64,
    pub defined: bool,
}

/// Total absolute heading change up to `t_min`, divided by the elapsed time.
/// Differences are wrap-aware. Samples after `t_min` are ignored.
pub fn angle_swept_rate(times: &[f64], thetas: &[f64], t_min: f64) -> Result<Normalized> {
    if times.len() != thetas.len() || times.is_empty() {
        return Err(Error::invalid("need matching, non-empty time and angle series"));
    }
    let t_start = times[0];
    if !(t_min > t_start) {
        return Ok(Normalized {
            value: 0.0,
            defined: false,
        });
    }
    let mut swept = 0.0;
    for i in 1..times.len() {
        if times[i] > t_min {
            break;
        }
        swept += angle_diff(thetas[i], thetas[i - 1])?.abs();
    }
    Ok(Normalized {
        value: swept / (t_min - t_start),
        defined: true,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanSe {
    pub mean: f64,
    pub se: f64,
    pub n: usize,
}

/// Mean of per-group means of `|x|`, with the standard error across groups.
/// Empty groups are skipped.
pub fn mean_abs_across_groups<'a>(groups: impl IntoIterator<Item = &'a [f64]>) -> MeanSe {
    let means: Vec<f64> = groups
        .into_iter()
        .filter(|g| !g.is_empty())
        .map(|g| g.iter().map(|v| v.abs()).sum::<f64>() / g.len() as f64)
        .collect();
    let n = means.len();
    if n == 0 {
        return MeanSe {
            mean: f64::NAN,
            se: f64::NAN,
            n,
        };
    }
    let mean = means.iter().sum::<f64>() / n as f64;
    let se = if n > 1 {
        let var = means.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        (var / n as f64).sqrt()
    } else {
        f64::NAN
    };
    MeanSe { mean, se, n }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WilcoxonResult {
    /// Non-zero differences used.
    pub n: usize,
    pub w_plus: f64,
    pub w_minus: f64,
    /// `min(W+, W-)`.
    pub statistic: f64,
    /// `P(W+ >= observed)` under the null.
    pub p_greater: f64,
    /// `P(W+ <= observed)` under the null.
    pub p_less: f64,
    pub p_two_sided: f64,
    pub exact: bool,
}

/// Midranks of `|d|`, doubled so that ties stay integral.
fn doubled_ranks(abs: &[f64]) -> Vec<u64> {
    let mut idx: Vec<usize> = (0..abs.len()).collect();
    idx.sort_by(|&a, &b| abs[a].total_cmp(&abs[b]));
    let mut ranks = vec![0u64; abs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && abs[idx[j + 1]] == abs[idx[i]] {
            j += 1;
        }
        // ranks i+1 ..= j+1 averaged, times two
        let r2 = (i + 1 + j + 1) as u64;
        for &k in &idx[i..=j] {
            ranks[k] = r2;
        }
        i = j + 1;
    }
    ranks
}

/// Wilcoxon signed-rank test on paired samples. Zero differences are dropped;
/// with none left the test is undefined.
pub fn wilcoxon_signed_rank(pairs: &[(f64, f64)]) -> Result<WilcoxonResult> {
    let d: Vec<f64> = pairs.iter().map(|(a, b)| a - b).filter(|v| *v != 0.0).collect();
    if d.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite paired difference"));
    }
    let n = d.len();
    if n == 0 {
        return Err(Error::Undefined("all paired differences are zero".into()));
    }
    let abs: Vec<f64> = d.iter().map(|v| v.abs()).collect();
    let r2 = doubled_ranks(&abs);
    let total2: u64 = r2.iter().sum();
    let wp2: u64 = d.iter().zip(&r2).filter(|(v, _)| **v > 0.0).map(|(_, r)| r).sum();
    let (w_plus, w_minus) = (wp2 as f64 / 2.0, (total2 - wp2) as f64 / 2.0);

    let (p_greater, p_less, exact) = if n <= WILCOXON_EXACT_MAX_N {
        // counts[s] = number of sign patterns whose doubled positive rank sum is s
        let mut counts = vec![0f64; total2 as usize + 1];
        counts[0] = 1.0;
        let mut reach = 0usize;
        for &r in &r2 {
            let r = r as usize;
            for s in (0..=reach).rev() {
                if counts[s] != 0.0 {
                    counts[s + r] += counts[s];
                }
            }
            reach += r;
        }
        let all = 2f64.powi(n as i32);
        let ge: f64 = counts[wp2 as usize..].iter().sum();
        let le: f64 = counts[..=wp2 as usize].iter().sum();
        (ge / all, le / all, true)
    } else {
        let nf = n as f64;
        let mean = nf * (nf + 1.0) / 4.0;
        let mut tie = 0.0;
        let mut sorted = r2.clone();
        sorted.sort_unstable();
        let mut i = 0;
        while i < sorted.len() {
            let j = sorted[i..].iter().take_while(|&&r| r == sorted[i]).count();
            let t = j as f64;
            tie += t * t * t - t;
            i += j;
        }
        let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie / 48.0;
        let z = (w_plus - mean) / var.sqrt();
        let norm = Normal::standard();
        (1.0 - norm.cdf(z), norm.cdf(z), false)
    };
    Ok(WilcoxonResult {
        n,
        w_plus,
        w_minus,
        statistic: w_plus.min(w_minus),
        p_greater,
        p_less,
        p_two_sided: (2.0 * p_greater.min(p_less)).min(1.0),
        exact,
    })
}
