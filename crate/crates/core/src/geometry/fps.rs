use serde::{Deserialize, Serialize};

use super::{centroid, dist2, Point3};
use crate::error::{Error, Result};

/// How the first farthest-point sample is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeedRule {
    /// Start from index 0.
    #[default]
    FirstIndex,
    /// Start from the point farthest from the centroid; the selected set is
    /// then independent of input order.
    FarthestFromCentroid,
}

/// Greedy farthest point sampling. Returns `m` indices in selection order;
/// ties go to the lowest index. Duplicate locations are allowed and each
/// index is selected at most once.
pub fn fps(points: &[Point3], m: usize, seed: SeedRule) -> Result<Vec<usize>> {
    let n = points.len();
    if m == 0 || m > n {
        return Err(Error::Argument(format!(
            "fps: cannot select {m} of {n} points"
        )));
    }
    let first = match seed {
        SeedRule::FirstIndex => 0,
        SeedRule::FarthestFromCentroid => {
            let c = centroid(points);
            argmax((0..n).map(|i| dist2(points[i], c)))
        }
    };
    let mut selected = vec![false; n];
    let mut min_d = vec![f64::INFINITY; n];
    let mut out = Vec::with_capacity(m);
    let mut cur = first;
    loop {
        selected[cur] = true;
        out.push(cur);
        if out.len() == m {
            break;
        }
        let p = points[cur];
        let mut best = usize::MAX;
        let mut best_d = f64::NEG_INFINITY;
        for i in 0..n {
            let d = dist2(points[i], p);
            if d < min_d[i] {
                min_d[i] = d;
            }
            if !selected[i] && min_d[i] > best_d {
                best_d = min_d[i];
                best = i;
            }
        }
        cur = best;
    }
    Ok(out)
}

fn argmax(values: impl Iterator<Item = f64>) -> usize {
    let mut best = 0;
    let mut best_v = f64::NEG_INFINITY;
    for (i, v) in values.enumerate() {
        if v > best_v {
            best_v = v;
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::fixtures::deterministic_points;

    #[test]
    fn square_corners_pick_the_diagonal() {
        let pts = [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [1.0, 1.0, 0.0]];
        assert_eq!(fps(&pts, 2, SeedRule::FirstIndex).unwrap(), vec![0, 3]);
    }

    #[test]
    fn exhausting_returns_a_permutation() {
        let pts = deterministic_points(17, 3);
        let mut idx = fps(&pts, 17, SeedRule::FirstIndex).unwrap();
        idx.sort_unstable();
        assert_eq!(idx, (0..17).collect::<Vec<_>>());
    }

    #[test]
    fn duplicates_are_selected_once_each() {
        let pts = [[0.0; 3], [0.0; 3], [1.0, 0.0, 0.0]];
        let mut idx = fps(&pts, 3, SeedRule::FirstIndex).unwrap();
        assert_eq!(idx, vec![0, 2, 1]);
        idx.sort_unstable();
        assert_eq!(idx, vec![0, 1, 2]);
    }

    #[test]
    fn rejects_bad_counts() {
        let pts = deterministic_points(4, 1);
        assert!(fps(&pts, 5, SeedRule::FirstIndex).is_err());
        assert!(fps(&pts, 0, SeedRule::FirstIndex).is_err());
    }
}
