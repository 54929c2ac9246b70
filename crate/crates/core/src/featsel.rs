//! Information-theoretic feature ranking.
//!
//! Features are discretized into equal-width bins, then ranked by greedy
//! joint mutual information: the first pick maximizes `I(X_f; Y)`, every
//! later pick maximizes `sum_{j in S} I((X_f, X_j); Y)` over the features
//! already selected. All quantities are plug-in estimates in bits.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_BINS: usize = 10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SelectError {
    #[error("need at least 2 bins, got {0}")]
    TooFewBins(usize),
    #[error("non-finite value in feature {feature}, row {row}")]
    NonFinite { feature: usize, row: usize },
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("empty input")]
    Empty,
    #[error("requested {k} features but only {available} exist")]
    TooManyRequested { k: usize, available: usize },
    #[error("row {row} has {got} features, expected {expected}")]
    RaggedRow { row: usize, got: usize, expected: usize },
}

/// Per-feature bin labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscretizedMatrix {
    /// `columns[f][row]` is the bin of feature `f` in `row`.
    pub columns: Vec<Vec<usize>>,
    pub n_bins: usize,
    /// `n_bins + 1` strictly increasing boundaries per feature.
    pub edges: Vec<Vec<f64>>,
}

impl DiscretizedMatrix {
    pub fn n_features(&self) -> usize {
        self.columns.len()
    }

    pub fn n_rows(&self) -> usize {
        self.columns.first().map_or(0, Vec::len)
    }

    /// Paired variable of two features, labelled `a * n_bins + b`.
    pub fn joint(&self, f: usize, j: usize) -> Vec<usize> {
        self.columns[f]
            .iter()
            .zip(&self.columns[j])
            .map(|(&a, &b)| a * self.n_bins + b)
            .collect()
    }
}

/// Equal-width binning of each column over its own `[min, max]`; the last
/// bin is closed on the right. Constant columns land entirely in bin 0.
pub fn discretize(rows: &[Vec<f64>], n_bins: usize) -> Result<DiscretizedMatrix, SelectError> {
    if n_bins < 2 {
        return Err(SelectError::TooFewBins(n_bins));
    }
    let n_features = rows.first().ok_or(SelectError::Empty)?.len();
    for (row, r) in rows.iter().enumerate() {
        if r.len() != n_features {
            return Err(SelectError::RaggedRow {
                row,
                got: r.len(),
                expected: n_features,
            });
        }
        if let Some(feature) = r.iter().position(|v| !v.is_finite()) {
            return Err(SelectError::NonFinite { feature, row });
        }
    }

    let mut columns = Vec::with_capacity(n_features);
    let mut edges = Vec::with_capacity(n_features);
    for f in 0..n_features {
        let (lo, hi) = rows
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| (lo.min(r[f]), hi.max(r[f])));
        let width = if hi > lo { (hi - lo) / n_bins as f64 } else { 1.0 / n_bins as f64 };
        let mut e: Vec<f64> = (0..=n_bins).map(|i| lo + i as f64 * width).collect();
        if hi > lo {
            e[n_bins] = hi;
        }
        let labels = rows
            .iter()
            .map(|r| {
                if hi > lo {
                    (((r[f] - lo) / width).floor() as usize).min(n_bins - 1)
                } else {
                    0
                }
            })
            .collect();
        columns.push(labels);
        edges.push(e);
    }
    Ok(DiscretizedMatrix {
        columns,
        n_bins,
        edges,
    })
}

/// Plug-in entropy in bits.
pub fn entropy(x: &[usize]) -> f64 {
    let m = x.len() as f64;
    let mut counts: HashMap<usize, usize> = HashMap::new();
    for &v in x {
        *counts.entry(v).or_default() += 1;
    }
    let mut cs: Vec<usize> = counts.into_values().collect();
    cs.sort_unstable();
    -cs.iter()
        .map(|&c| {
            let p = c as f64 / m;
            p * p.log2()
        })
        .sum::<f64>()
}

/// Plug-in mutual information `I(X; Y)` in bits over observed cells.
pub fn mutual_information(x: &[usize], y: &[usize]) -> Result<f64, SelectError> {
    if x.len() != y.len() {
        return Err(SelectError::LengthMismatch(x.len(), y.len()));
    }
    if x.is_empty() {
        return Err(SelectError::Empty);
    }
    let xs = compact(x);
    let ys = compact(y);
    let nx = xs.iter().max().map_or(0, |m| m + 1);
    let ny = ys.iter().max().map_or(0, |m| m + 1);

    let mut cx = vec![0u64; nx];
    let mut cy = vec![0u64; ny];
    let mut cxy: HashMap<(usize, usize), u64> = HashMap::new();
    for (&a, &b) in xs.iter().zip(&ys) {
        cx[a] += 1;
        cy[b] += 1;
        *cxy.entry((a, b)).or_default() += 1;
    }
    let mut cells: Vec<((usize, usize), u64)> = cxy.into_iter().collect();
    cells.sort_unstable();

    let m = x.len() as f64;
    let mi = cells
        .iter()
        .map(|&((a, b), c)| {
            let c = c as f64;
            // counts are exact in f64, so independent cells give a ratio of exactly 1
            (c / m) * ((c * m) / (cx[a] as f64 * cy[b] as f64)).log2()
        })
        .sum::<f64>();
    Ok(mi)
}

/// Relabels values to `0..distinct` in ascending order.
fn compact(v: &[usize]) -> Vec<usize> {
    let mut distinct: Vec<usize> = v.to_vec();
    distinct.sort_unstable();
    distinct.dedup();
    v.iter()
        .map(|x| distinct.binary_search(x).expect("present"))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingResult {
    /// Feature indices in selection order.
    pub order: Vec<usize>,
    /// Criterion value of each pick.
    pub scores: Vec<f64>,
}

/// Greedy JMI forward selection of `k` features. Ties go to the lowest index.
pub fn jmi_rank(features: &DiscretizedMatrix, labels: &[usize], k: usize) -> Result<RankingResult, SelectError> {
    let n = features.n_features();
    if k > n {
        return Err(SelectError::TooManyRequested { k, available: n });
    }
    if features.n_rows() != labels.len() {
        return Err(SelectError::LengthMismatch(features.n_rows(), labels.len()));
    }
    let mut order: Vec<usize> = Vec::with_capacity(k);
    let mut scores = Vec::with_capacity(k);
    // running sum of I((X_f, X_j); Y) over selected j, per candidate f
    let mut accum = vec![0.0; n];
    let mut selected = vec![false; n];

    for step in 0..k {
        let candidates: Vec<usize> = (0..n).filter(|&f| !selected[f]).collect();
        let gains: Vec<f64> = candidates
            .par_iter()
            .map(|&f| {
                if step == 0 {
                    mutual_information(&features.columns[f], labels)
                } else {
                    let last = *order.last().expect("non-empty after first step");
                    mutual_information(&features.joint(f, last), labels)
                }
            })
            .collect::<Result<_, _>>()?;

        let mut best: Option<(usize, f64)> = None;
        for (&f, &g) in candidates.iter().zip(&gains) {
            let score = if step == 0 { g } else { accum[f] + g };
            if step > 0 {
                accum[f] = score;
            }
            if best.is_none_or(|(_, s)| score > s) {
                best = Some((f, score));
            }
        }
        let (f, score) = best.expect("k <= n leaves a candidate");
        selected[f] = true;
        order.push(f);
        scores.push(score);
    }
    Ok(RankingResult { order, scores })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn right_closed_last_bin() {
        let d = discretize(&[vec![0.0], vec![0.5], vec![1.0]], 2).unwrap();
        assert_eq!(d.columns[0], vec![0, 1, 1]);
        assert_eq!(d.edges[0], vec![0.0, 0.5, 1.0]);
    }

    #[test]
    fn constant_column_maps_to_zero() {
        let rows = vec![vec![3.0, 1.0], vec![3.0, 2.0], vec![3.0, 5.0]];
        let d = discretize(&rows, 4).unwrap();
        assert_eq!(d.columns[0], vec![0, 0, 0]);
        assert!(d.edges[0].windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn discretize_errors() {
        assert_eq!(discretize(&[vec![1.0]], 1), Err(SelectError::TooFewBins(1)));
        assert_eq!(
            discretize(&[vec![1.0], vec![f64::INFINITY]], 3),
            Err(SelectError::NonFinite { feature: 0, row: 1 })
        );
        assert_eq!(discretize(&[], 3), Err(SelectError::Empty));
    }

    #[test]
    fn self_information_is_entropy() {
        let x = vec![0, 1, 1, 2, 2, 2, 3, 0, 1, 2];
        let mi = mutual_information(&x, &x).unwrap();
        assert!((mi - entropy(&x)).abs() < 1e-12);
    }

    #[test]
    fn factorial_independence_is_exactly_zero() {
        let (mut x, mut y) = (Vec::new(), Vec::new());
        for _ in 0..7 {
            for a in 0..2 {
                for b in 0..2 {
                    x.push(a);
                    y.push(b);
                }
            }
        }
        assert_eq!(mutual_information(&x, &y).unwrap(), 0.0);
    }

    #[test]
    fn identical_balanced_binaries_share_one_bit() {
        let x: Vec<usize> = (0..1000).map(|i| i % 2).collect();
        assert!((mutual_information(&x, &x).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn mi_length_mismatch() {
        assert_eq!(mutual_information(&[0, 1], &[0]), Err(SelectError::LengthMismatch(2, 1)));
    }

    #[test]
    fn first_pick_is_max_relevance() {
        let y: Vec<usize> = (0..40).map(|i| i % 4).collect();
        let rows: Vec<Vec<f64>> = (0..40)
            .map(|i| vec![((i * 7) % 3) as f64, (i % 4) as f64, (i % 2) as f64])
            .collect();
        let d = discretize(&rows, 4).unwrap();
        let r = jmi_rank(&d, &y, 1).unwrap();
        assert_eq!(r.order, vec![1]);
        assert!((r.scores[0] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn independent_feature_ranks_last() {
        // column 0 independent of y by construction, column 1 informative
        let mut rows = Vec::new();
        let mut y = Vec::new();
        for a in 0..2 {
            for b in 0..2 {
                rows.push(vec![a as f64, b as f64]);
                y.push(b);
            }
        }
        let d = discretize(&rows, 2).unwrap();
        let r = jmi_rank(&d, &y, 2).unwrap();
        assert_eq!(r.order, vec![1, 0]);
    }

    #[test]
    fn too_many_requested() {
        let d = discretize(&[vec![0.0], vec![1.0]], 2).unwrap();
        assert!(matches!(jmi_rank(&d, &[0, 1], 2), Err(SelectError::TooManyRequested { .. })));
    }

    proptest! {
        #[test]
        fn mi_symmetric_and_nonnegative(pairs in proptest::collection::vec((0usize..5, 0usize..4), 1..200)) {
            let (x, y): (Vec<usize>, Vec<usize>) = pairs.into_iter().unzip();
            let a = mutual_information(&x, &y).unwrap();
            let b = mutual_information(&y, &x).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
            prop_assert!(a >= -1e-12);
        }

        #[test]
        fn bijective_relabeling_keeps_mi(pairs in proptest::collection::vec((0usize..5, 0usize..4), 1..200)) {
            let (x, y): (Vec<usize>, Vec<usize>) = pairs.into_iter().unzip();
            let perm = [3usize, 17, 0, 9, 4];
            let relabeled: Vec<usize> = x.iter().map(|&v| perm[v]).collect();
            let a = mutual_information(&x, &y).unwrap();
            let b = mutual_information(&relabeled, &y).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
        }

        #[test]
        fn histogram_partitions_rows(col in proptest::collection::vec(-1e3f64..1e3, 1..300)) {
            let rows: Vec<Vec<f64>> = col.iter().map(|&v| vec![v]).collect();
            let d = discretize(&rows, 10).unwrap();
            let mut hist = [0usize; 10];
            for &l in &d.columns[0] {
                prop_assert!(l < 10);
                hist[l] += 1;
            }
            prop_assert_eq!(hist.iter().sum::<usize>(), rows.len());
        }

        #[test]
        fn ranking_is_deterministic(seed_rows in proptest::collection::vec(proptest::collection::vec(0.0f64..1.0, 4), 10..60)) {
            let y: Vec<usize> = (0..seed_rows.len()).map(|i| i % 3).collect();
            let d = discretize(&seed_rows, 5).unwrap();
            let a = jmi_rank(&d, &y, 4).unwrap();
            let b = jmi_rank(&d, &y, 4).unwrap();
            prop_assert_eq!(&a, &b);
            let mut sorted = a.order.clone();
            sorted.sort_unstable();
            sorted.dedup();
            prop_assert_eq!(sorted.len(), 4);
        }
    }
}
