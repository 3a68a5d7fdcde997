use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use crate::bm_path::{certify_sign_on_interval, DyadicPath, IntervalVerdict, TimeKey};
use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum ContinuumVerdict {
    /// Sum of per-interval bridge bounds, capped at 1.
    Certified { residual: f64, refinements: usize },
    /// A refined value was nonpositive, or the depth budget ran out.
    Failed { refinements: usize, depth_exhausted: bool },
}

impl ContinuumVerdict {
    pub fn is_certified(&self) -> bool {
        matches!(self, ContinuumVerdict::Certified { .. })
    }
}

struct Pending {
    bound: f64,
    left: TimeKey,
    right: TimeKey,
    depth: usize,
}

impl PartialEq for Pending {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Pending {}

impl PartialOrd for Pending {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Pending {
    fn cmp(&self, other: &Self) -> Ordering {
        self.bound
            .total_cmp(&other.bound)
            .then_with(|| other.left.cmp(&self.left))
    }
}

/// Extends a grid certificate to the whole interval `[grid[0], grid[last]]`.
///
/// The intervals between consecutive grid times are bounded with the bridge estimate; the worst
/// interval is split at its midpoint (sampled by bridge conditioning) until the bounds sum to at
/// most `eps`. An interval is split at most `max_depth` times.
pub fn certify_continuum<T: Real>(
    path: &mut DyadicPath<T>,
    u: &[T],
    grid: &[TimeKey],
    eps: f64,
    max_depth: usize,
) -> Result<ContinuumVerdict> {
    if !(eps > 0.0) {
        return Err(Error::InvalidArgument(format!("eps must be positive, got {eps}")));
    }
    if grid.len() < 2 {
        return Ok(ContinuumVerdict::Certified { residual: 0.0, refinements: 0 });
    }
    for t in grid {
        if !(path.inner(u, t)? > T::zero()) {
            return Ok(ContinuumVerdict::Failed { refinements: 0, depth_exhausted: false });
        }
    }
    // the grid points may have stored keys between them; start from adjacent stored pairs
    let (first, last) = (grid[0], grid[grid.len() - 1]);
    let keys: Vec<TimeKey> = path.keys().copied().filter(|k| *k >= first && *k <= last).collect();
    let mut heap = BinaryHeap::new();
    let mut total = 0.0;
    for w in keys.windows(2) {
        match certify_sign_on_interval(path, u, &w[0], &w[1], 0.0)? {
            IntervalVerdict::Failed => {
                return Ok(ContinuumVerdict::Failed { refinements: 0, depth_exhausted: false })
            }
            IntervalVerdict::Certified { bound } | IntervalVerdict::Refine { bound, .. } => {
                total += bound;
                heap.push(Pending { bound, left: w[0], right: w[1], depth: 0 });
            }
        }
    }
    let mut refinements = 0;
    while total.min(1.0) > eps {
        let Some(worst) = heap.pop() else { break };
        total -= worst.bound;
        if worst.depth >= max_depth {
            return Ok(ContinuumVerdict::Failed { refinements, depth_exhausted: true });
        }
        let mid = match certify_sign_on_interval(path, u, &worst.left, &worst.right, 0.0)? {
            IntervalVerdict::Refine { midpoint, .. } => midpoint,
            _ => return Ok(ContinuumVerdict::Failed { refinements, depth_exhausted: true }),
        };
        path.bridge_refine(mid)?;
        refinements += 1;
        for (a, b) in [(worst.left, mid), (mid, worst.right)] {
            match certify_sign_on_interval(path, u, &a, &b, 0.0)? {
                IntervalVerdict::Failed => {
                    return Ok(ContinuumVerdict::Failed { refinements, depth_exhausted: false })
                }
                IntervalVerdict::Certified { bound } | IntervalVerdict::Refine { bound, .. } => {
                    total += bound;
                    heap.push(Pending { bound, left: a, right: b, depth: worst.depth + 1 });
                }
            }
        }
    }
    // recompute the sum to shed accumulated rounding
    let residual: f64 = heap.iter().map(|p| p.bound).sum::<f64>().min(1.0);
    Ok(ContinuumVerdict::Certified { residual, refinements })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bm_path::bridge_exceedance_prob;
    use crate::rng::RngStream;

    /// First seed whose one-dimensional path is positive on `grid`, with `u = 1`.
    fn positive_path(grid: &[TimeKey]) -> DyadicPath<f64> {
        (0..)
            .map(|s| DyadicPath::<f64>::init(1, grid, RngStream::new(s, 0)).unwrap())
            .find(|p| grid.iter().all(|t| p.get(t).unwrap()[0] > 0.0))
            .unwrap()
    }

    fn integer_grid(m: i64) -> Vec<TimeKey> {
        (0..m).map(|i| TimeKey::exp(i, 0)).collect()
    }

    #[test]
    fn eps_one_is_immediate() {
        let grid = integer_grid(4);
        let mut path = positive_path(&grid);
        let before = path.len();
        let v = certify_continuum(&mut path, &[1.0], &grid, 1.0, 4).unwrap();
        assert!(matches!(v, ContinuumVerdict::Certified { residual, refinements: 0 } if residual <= 1.0));
        assert_eq!(path.len(), before);
    }

    #[test]
    fn negative_grid_value_fails() {
        let grid = integer_grid(4);
        let mut path = positive_path(&grid);
        let v = certify_continuum(&mut path, &[-1.0], &grid, 0.1, 4).unwrap();
        assert_eq!(v, ContinuumVerdict::Failed { refinements: 0, depth_exhausted: false });
    }

    #[test]
    fn residual_matches_interval_bounds() {
        let grid = integer_grid(3);
        let mut path = positive_path(&grid);
        let vals: Vec<f64> = grid.iter().map(|t| path.get(t).unwrap()[0]).collect();
        let expect = bridge_exceedance_prob(vals[0].min(vals[1])).unwrap()
            + bridge_exceedance_prob(vals[1].min(vals[2]) / 2f64.sqrt()).unwrap();
        let v = certify_continuum(&mut path, &[1.0], &grid, 1.0, 0).unwrap();
        match v {
            ContinuumVerdict::Certified { residual, .. } => assert!((residual - expect.min(1.0)).abs() < 1e-15),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn refinement_reaches_budget_or_fails_honestly() {
        let grid = integer_grid(5);
        let mut path = positive_path(&grid);
        let v = certify_continuum(&mut path, &[1.0], &grid, 1e-3, 20).unwrap();
        match v {
            ContinuumVerdict::Certified { residual, refinements } => {
                assert!(residual <= 1e-3);
                assert_eq!(path.len(), 6 + refinements);
                // the certificate only holds if every stored value stayed positive
                assert!(path.keys().filter(|k| **k >= grid[0]).all(|k| path.get(k).unwrap()[0] > 0.0));
            }
            ContinuumVerdict::Failed { depth_exhausted, .. } => {
                if !depth_exhausted {
                    assert!(path.keys().any(|k| path.get(k).unwrap()[0] <= 0.0 && *k > grid[0]));
                }
            }
        }
    }

    #[test]
    fn zero_depth_budget_is_exhausted() {
        let grid = integer_grid(3);
        let mut path = positive_path(&grid);
        let v = certify_continuum(&mut path, &[1.0], &grid, 1e-300, 0).unwrap();
        assert_eq!(v, ContinuumVerdict::Failed { refinements: 0, depth_exhausted: true });
    }
}
