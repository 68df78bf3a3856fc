//! Mixing diagnostics over post-burn-in chain output.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mcmc::ChainTrace;
use crate::scalar::Real;

/// Root-mean-square difference of two equal-length vectors.
pub fn rmse<F: Real>(predictions: &[F], y: &[F]) -> Result<F> {
    if predictions.len() != y.len() || y.is_empty() {
        return Err(Error::InvalidInput(format!(
            "rmse needs equal nonempty lengths, got {} and {}",
            predictions.len(),
            y.len()
        )));
    }
    let ss: F = predictions
        .iter()
        .zip(y)
        .map(|(&p, &t)| (p - t) * (p - t))
        .sum();
    Ok((ss / F::of_usize(y.len())).sqrt())
}

fn mean<F: Real>(xs: &[F]) -> F {
    xs.iter().copied().sum::<F>() / F::of_usize(xs.len())
}

/// Gelman-Rubin statistic of `J >= 2` chains of equal length `L >= 2`:
///
/// ```text
/// W = (1/J) sum_j (1/(L-1)) sum_i (x_ij - mean_j)^2
/// B = (L/(J-1)) sum_j (mean_j - mean)^2
/// R = ((L-1)/L W + B/L) / W
/// ```
pub fn gelman_rubin<F: Real, C: AsRef<[F]>>(chains: &[C]) -> Result<F> {
    let j = chains.len();
    if j < 2 {
        return Err(Error::InvalidInput(format!(
            "gelman-rubin needs at least 2 chains, got {j}"
        )));
    }
    let l = chains[0].as_ref().len();
    if l < 2 {
        return Err(Error::InvalidInput(format!(
            "gelman-rubin needs at least 2 samples, got {l}"
        )));
    }
    if chains.iter().any(|c| c.as_ref().len() != l) {
        return Err(Error::InvalidInput("chains have unequal lengths".into()));
    }
    let lf = F::of_usize(l);
    let jf = F::of_usize(j);
    let means: Vec<F> = chains.iter().map(|c| mean(c.as_ref())).collect();
    let grand = mean(&means);
    let w = chains
        .iter()
        .zip(&means)
        .map(|(c, &m)| c.as_ref().iter().map(|&x| (x - m) * (x - m)).sum::<F>() / (lf - F::one()))
        .sum::<F>()
        / jf;
    if !(w > F::zero()) {
        return Err(Error::DegenerateChains);
    }
    let b = lf / (jf - F::one()) * means.iter().map(|&m| (m - grand) * (m - grand)).sum::<F>();
    Ok(((lf - F::one()) / lf * w + b / lf) / w)
}

/// Running sums of deviations from the chain mean; the last entry is zero up
/// to rounding.
pub fn cusum<F: Real>(chain: &[F]) -> Vec<F> {
    if chain.is_empty() {
        return Vec::new();
    }
    let m = mean(chain);
    chain
        .iter()
        .scan(F::zero(), |acc, &x| {
            *acc = *acc + (x - m);
            Some(*acc)
        })
        .collect()
}

/// Root split feature, `None` for a single-leaf tree.
pub type RootLabel = Option<usize>;

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RootSplitStats {
    pub histogram: BTreeMap<RootLabel, usize>,
    /// Consecutive pairs whose labels differ.
    pub changes: usize,
    pub iterations: usize,
}

impl RootSplitStats {
    pub fn from_labels(labels: &[RootLabel]) -> Self {
        let mut histogram = BTreeMap::new();
        for &l in labels {
            *histogram.entry(l).or_insert(0) += 1;
        }
        let changes = labels.windows(2).filter(|w| w[0] != w[1]).count();
        Self {
            histogram,
            changes,
            iterations: labels.len(),
        }
    }

    /// Changes per consecutive pair.
    pub fn change_fraction(&self) -> f64 {
        if self.iterations < 2 {
            0.0
        } else {
            self.changes as f64 / (self.iterations - 1) as f64
        }
    }

    pub fn count(&self, label: RootLabel) -> usize {
        self.histogram.get(&label).copied().unwrap_or(0)
    }
}

/// Root-split histogram and change count of tree `tree_index` over the
/// post-burn-in rows of a trace.
pub fn root_split_stats(trace: &ChainTrace, tree_index: usize) -> RootSplitStats {
    let labels: Vec<RootLabel> = trace
        .samples()
        .map(|r| r.roots.get(tree_index).copied().flatten())
        .collect();
    RootSplitStats::from_labels(&labels)
}

/// Display key of a root label: `empty` or the one-based feature.
pub fn root_label_key(label: RootLabel) -> String {
    match label {
        None => "empty".into(),
        Some(v) => (v + 1).to_string(),
    }
}

/// Linear-interpolation quantile; `xs` need not be sorted.
pub fn quantile<F: Real>(xs: &[F], p: F) -> Option<F> {
    if xs.is_empty() {
        return None;
    }
    let mut s = xs.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let h = F::of_usize(s.len() - 1) * p;
    let lo = h.floor().to_usize().unwrap_or(0).min(s.len() - 1);
    let hi = (lo + 1).min(s.len() - 1);
    Some(s[lo] + (h - F::of_usize(lo)) * (s[hi] - s[lo]))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainSummary {
    pub samples: usize,
    pub mean_rmse: Option<f64>,
    pub sd_rmse: Option<f64>,
    pub q05_rmse: Option<f64>,
    pub q50_rmse: Option<f64>,
    pub q95_rmse: Option<f64>,
    /// First tree's root-split counts keyed by `empty` or one-based feature.
    pub root_histogram: BTreeMap<String, usize>,
    pub root_changes: usize,
    pub root_change_fraction: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    /// Gelman-Rubin on post-burn-in test RMSE; `None` when undefined.
    pub gelman_rubin: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
    pub per_chain: Vec<ChainSummary>,
    pub cusum: Vec<Vec<f64>>,
}

fn summarize(trace: &ChainTrace) -> ChainSummary {
    let r = trace.sample_rmse();
    let roots = root_split_stats(trace, 0);
    let sd = (r.len() >= 2).then(|| {
        let m = mean(&r);
        (r.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (r.len() - 1) as f64).sqrt()
    });
    ChainSummary {
        samples: trace.samples().count(),
        mean_rmse: (!r.is_empty()).then(|| mean(&r)),
        sd_rmse: sd,
        q05_rmse: quantile(&r, 0.05),
        q50_rmse: quantile(&r, 0.5),
        q95_rmse: quantile(&r, 0.95),
        root_histogram: roots
            .histogram
            .iter()
            .map(|(&l, &c)| (root_label_key(l), c))
            .collect(),
        root_changes: roots.changes,
        root_change_fraction: roots.change_fraction(),
    }
}

/// Per-chain summaries, cusum paths of test RMSE, and Gelman-Rubin across chains.
pub fn diagnose(traces: &[ChainTrace]) -> DiagnosticsReport {
    let rmse: Vec<Vec<f64>> = traces.iter().map(ChainTrace::sample_rmse).collect();
    let (gelman_rubin, warning) = if traces.len() < 2 {
        (
            None,
            Some("gelman-rubin needs at least two chains".to_string()),
        )
    } else {
        match gelman_rubin(&rmse) {
            Ok(r) => (Some(r), None),
            Err(e) => (None, Some(e.to_string())),
        }
    };
    DiagnosticsReport {
        gelman_rubin,
        warning,
        per_chain: traces.iter().map(summarize).collect(),
        cusum: rmse.iter().map(|c| cusum(c)).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rmse_values() {
        assert_eq!(rmse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        let r: f64 = rmse(&[0.0, 0.0], &[3.0, 4.0]).unwrap();
        assert!((r - 12.5f64.sqrt()).abs() < 1e-15);
        assert!(rmse(&[0.0], &[1.0, 2.0]).is_err());
        assert!(rmse::<f64>(&[], &[]).is_err());
    }

    #[test]
    fn gelman_rubin_hand_values() {
        let same = [vec![0.0, 2.0], vec![0.0, 2.0]];
        assert_eq!(gelman_rubin(&same).unwrap(), 0.5);
        let apart = [vec![0.0, 2.0], vec![2.0, 4.0]];
        assert_eq!(gelman_rubin(&apart).unwrap(), 1.5);
        let f32s = [vec![0.0f32, 2.0], vec![2.0, 4.0]];
        assert_eq!(gelman_rubin(&f32s).unwrap(), 1.5f32);
    }

    #[test]
    fn gelman_rubin_rejects_degenerate_input() {
        assert!(matches!(
            gelman_rubin(&[vec![1.0, 1.0], vec![2.0, 2.0]]),
            Err(Error::DegenerateChains)
        ));
        assert!(gelman_rubin(&[vec![1.0, 2.0]]).is_err());
        assert!(gelman_rubin(&[vec![1.0], vec![2.0]]).is_err());
        assert!(gelman_rubin(&[vec![1.0, 2.0], vec![2.0, 3.0, 4.0]]).is_err());
    }

    #[test]
    fn cusum_values() {
        assert_eq!(cusum(&[3.0, 3.0, 3.0]), vec![0.0, 0.0, 0.0]);
        assert_eq!(cusum(&[1.0, 3.0]), vec![-1.0, 0.0]);
        assert_eq!(cusum(&[0.0, 2.0, 4.0, 2.0]), vec![-2.0, -2.0, 0.0, 0.0]);
        assert!(cusum::<f64>(&[]).is_empty());
    }

    #[test]
    fn root_changes_scan() {
        let s = RootSplitStats::from_labels(&[Some(0), Some(0), Some(1), None, Some(1)]);
        assert_eq!(s.changes, 3);
        assert_eq!(s.count(Some(0)), 2);
        assert_eq!(s.count(Some(1)), 2);
        assert_eq!(s.count(None), 1);
        let c = RootSplitStats::from_labels(&[Some(2); 7]);
        assert_eq!(c.changes, 0);
        assert_eq!(c.count(Some(2)), 7);
    }

    #[test]
    fn quantiles() {
        assert_eq!(quantile(&[3.0, 1.0, 2.0], 0.5), Some(2.0));
        assert_eq!(quantile(&[1.0, 2.0], 0.25), Some(1.25));
        assert_eq!(quantile::<f64>(&[], 0.5), None);
    }
}
