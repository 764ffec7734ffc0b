//! kNN label-agreement filtering followed by a standard logistic fit.
//!
//! A neighbourhood of size `k` is the row itself plus its `k - 1` nearest
//! other rows (Euclidean, implicit zeros included, ties to the lower row
//! index). A row survives when its whole neighbourhood carries one label, so
//! `k = 1` filters nothing.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{SparseDataset, SparseRow};
use crate::error::{Error, Result};
use crate::robust::{predict_classes, ThetaPenalty};
use crate::solver::{fit_penalized, GlmFit, SolverOptions};

/// Candidate neighbourhood sizes searched on a development split.
pub const DEFAULT_K_GRID: [usize; 6] = [1, 2, 3, 5, 7, 9];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterConfig {
    pub k: usize,
}

impl FilterConfig {
    pub fn new(k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidArgument("k must be at least 1".into()));
        }
        Ok(Self { k })
    }
}

/// Squared Euclidean distance between two sparse rows.
pub fn squared_distance(a: &SparseRow, b: &SparseRow) -> f64 {
    let (ai, av, bi, bv) = (a.indices(), a.values(), b.indices(), b.values());
    let (mut p, mut q, mut sum) = (0, 0, 0.0);
    while p < ai.len() || q < bi.len() {
        let diff = if q == bi.len() || (p < ai.len() && ai[p] < bi[q]) {
            p += 1;
            av[p - 1]
        } else if p == ai.len() || bi[q] < ai[p] {
            q += 1;
            -bv[q - 1]
        } else {
            p += 1;
            q += 1;
            av[p - 1] - bv[q - 1]
        };
        sum += diff * diff;
    }
    sum
}

/// The `max_k - 1` nearest other rows of every row, nearest first.
#[derive(Debug, Clone)]
pub struct NeighborTable {
    neighbors: Vec<Vec<usize>>,
    max_k: usize,
}

impl NeighborTable {
    pub fn build(d: &SparseDataset, max_k: usize) -> Result<Self> {
        if max_k == 0 || max_k >= d.n_rows() {
            return Err(Error::InvalidArgument(format!(
                "k = {max_k} needs 1 <= k < n_rows = {}",
                d.n_rows()
            )));
        }
        let rows = d.rows();
        let n_others = max_k - 1;
        let neighbors = (0..rows.len())
            .into_par_iter()
            .map(|i| {
                if n_others == 0 {
                    return Vec::new();
                }
                let mut cand: Vec<(f64, usize)> = rows
                    .iter()
                    .enumerate()
                    .filter(|&(j, _)| j != i)
                    .map(|(j, r)| (squared_distance(&rows[i], r), j))
                    .collect();
                let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
                cand.select_nth_unstable_by(n_others - 1, cmp);
                cand.truncate(n_others);
                cand.sort_by(cmp);
                cand.into_iter().map(|(_, j)| j).collect()
            })
            .collect();
        Ok(Self { neighbors, max_k })
    }

    pub fn max_k(&self) -> usize {
        self.max_k
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    /// Rows discarded at neighbourhood size `k`, ascending.
    pub fn discarded(&self, labels: &[u8], k: usize) -> Result<Vec<usize>> {
        if k == 0 || k > self.max_k {
            return Err(Error::InvalidArgument(format!("k = {k} outside 1..={}", self.max_k)));
        }
        Ok((0..self.neighbors.len())
            .filter(|&i| self.neighbors[i][..k - 1].iter().any(|&j| labels[j] != labels[i]))
            .collect())
    }
}

fn complement(n: usize, discarded: &[usize]) -> Vec<usize> {
    let mut keep = vec![true; n];
    for &i in discarded {
        keep[i] = false;
    }
    (0..n).filter(|&i| keep[i]).collect()
}

/// Filtered dataset and the discarded row indices.
pub fn knn_filter(d: &SparseDataset, cfg: FilterConfig) -> Result<(SparseDataset, Vec<usize>)> {
    if cfg.k >= d.n_rows() {
        return Err(Error::InvalidArgument(format!(
            "k = {} must be smaller than the number of rows {}",
            cfg.k,
            d.n_rows()
        )));
    }
    if cfg.k == 1 {
        return Ok((d.clone(), Vec::new()));
    }
    let table = NeighborTable::build(d, cfg.k)?;
    let discarded = table.discarded(d.labels(), cfg.k)?;
    Ok((d.subset(&complement(d.n_rows(), &discarded)), discarded))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrefilterFit {
    pub theta: GlmFit,
    pub k: usize,
    pub discarded: Vec<usize>,
}

fn fit_kept(
    d: &SparseDataset,
    k: usize,
    discarded: Vec<usize>,
    theta_penalty: ThetaPenalty,
    opts: &SolverOptions,
) -> Result<PrefilterFit> {
    let kept = d.subset(&complement(d.n_rows(), &discarded));
    if !kept.has_both_classes() {
        return Err(Error::EmptyClass {
            class0: kept.n_negative(),
            class1: kept.n_positive(),
        });
    }
    let theta = fit_penalized(&kept, &theta_penalty.glm_penalty(), opts)?;
    Ok(PrefilterFit { theta, k, discarded })
}

pub fn fit_prefiltered(
    d: &SparseDataset,
    cfg: FilterConfig,
    theta_penalty: ThetaPenalty,
    opts: &SolverOptions,
) -> Result<PrefilterFit> {
    let (_, discarded) = knn_filter(d, cfg)?;
    fit_kept(d, cfg.k, discarded, theta_penalty, opts)
}

#[derive(Debug, Clone, PartialEq)]
pub struct KSelection {
    pub fit: PrefilterFit,
    /// `(k, dev accuracy)` for every feasible grid value.
    pub scores: Vec<(usize, f64)>,
}

/// Picks `k` by accuracy on `dev`; ties go to the smaller `k`. Grid values
/// that are too large for the data or that empty a class are skipped.
pub fn select_k(
    train: &SparseDataset,
    dev: &SparseDataset,
    grid: &[usize],
    theta_penalty: ThetaPenalty,
    opts: &SolverOptions,
) -> Result<KSelection> {
    let mut grid: Vec<usize> = grid.iter().copied().filter(|&k| k >= 1 && k < train.n_rows()).collect();
    grid.sort_unstable();
    grid.dedup();
    let Some(&max_k) = grid.last() else {
        return Err(Error::InvalidArgument("no feasible k in grid".into()));
    };
    let table = NeighborTable::build(train, max_k)?;
    let mut best: Option<(f64, PrefilterFit)> = None;
    let mut scores = Vec::new();
    for k in grid {
        let discarded = table.discarded(train.labels(), k)?;
        let fit = match fit_kept(train, k, discarded, theta_penalty, opts) {
            Ok(f) => f,
            Err(Error::EmptyClass { class0, class1 }) => {
                log::info!("k = {k} skipped: filtered set has {class0}/{class1} rows per class");
                continue;
            }
            Err(e) => return Err(e),
        };
        let predicted = predict_classes(&fit.theta, dev)?;
        let correct = predicted.iter().zip(dev.labels()).filter(|(p, y)| p == y).count();
        let acc = correct as f64 / dev.n_rows().max(1) as f64;
        scores.push((k, acc));
        if best.as_ref().is_none_or(|(b, _)| acc > *b) {
            best = Some((acc, fit));
        }
    }
    let (_, fit) = best.ok_or_else(|| Error::Validation("every k emptied a class".into()))?;
    Ok(KSelection { fit, scores })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solver::PenaltySpec;

    fn four_points(labels: Vec<u8>) -> SparseDataset {
        SparseDataset::from_dense(&[vec![0.0], vec![0.1], vec![5.0], vec![5.1]], labels).unwrap()
    }

    #[test]
    fn k1_is_identity() {
        let d = four_points(vec![0, 1, 1, 0]);
        let (out, disc) = knn_filter(&d, FilterConfig::new(1).unwrap()).unwrap();
        assert_eq!(out, d);
        assert!(disc.is_empty());
    }

    #[test]
    fn homogeneous_neighbourhoods_keep_everything() {
        let d = four_points(vec![0, 0, 1, 1]);
        let (out, disc) = knn_filter(&d, FilterConfig::new(2).unwrap()).unwrap();
        assert!(disc.is_empty());
        assert_eq!(out.n_rows(), 4);
    }

    #[test]
    fn relabelled_point_discards_its_pair() {
        let d = four_points(vec![0, 1, 1, 1]);
        let (out, disc) = knn_filter(&d, FilterConfig::new(2).unwrap()).unwrap();
        assert_eq!(disc, vec![0, 1]);
        assert_eq!(out.labels(), &[1, 1]);
    }

    #[test]
    fn k_too_large_or_zero() {
        let d = four_points(vec![0, 0, 1, 1]);
        assert!(knn_filter(&d, FilterConfig { k: 4 }).is_err());
        assert!(FilterConfig::new(0).is_err());
    }

    #[test]
    fn ties_prefer_lower_index() {
        // rows 0 and 2 are equidistant from row 1
        let d = SparseDataset::from_dense(&[vec![-1.0], vec![0.0], vec![1.0], vec![9.0]], vec![0, 0, 1, 1]).unwrap();
        let t = NeighborTable::build(&d, 3).unwrap();
        assert_eq!(t.neighbors(1), &[0, 2]);
    }

    #[test]
    fn sparse_distance_counts_implicit_zeros() {
        let a = SparseRow::new(vec![0, 3], vec![1.0, 2.0]).unwrap();
        let b = SparseRow::new(vec![1, 3], vec![4.0, -1.0]).unwrap();
        assert_eq!(squared_distance(&a, &b), 1.0 + 16.0 + 9.0);
        assert_eq!(squared_distance(&a, &a), 0.0);
    }

    #[test]
    fn prefilter_k1_matches_standard_fit() {
        let d = four_points(vec![0, 1, 0, 1]);
        let opts = SolverOptions::default();
        let p = fit_prefiltered(
            &d,
            FilterConfig::new(1).unwrap(),
            ThetaPenalty::L2 { sigma2: 1.0 },
            &opts,
        )
        .unwrap();
        let s = fit_penalized(&d, &PenaltySpec::l2_sigma2(1.0), &opts).unwrap();
        assert_eq!(p.theta, s);
    }

    #[test]
    fn emptied_class_is_reported() {
        // lone positive among negatives is always discarded
        let d = SparseDataset::from_dense(&[vec![0.0], vec![0.1], vec![0.2], vec![0.3]], vec![0, 0, 1, 0]).unwrap();
        let err = fit_prefiltered(
            &d,
            FilterConfig::new(2).unwrap(),
            ThetaPenalty::None,
            &SolverOptions::default(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::EmptyClass { class1: 0, .. }), "{err}");
    }
}
