//! Rectangular linear sum assignment by shortest augmenting paths with dual
//! potentials (Jonker-Volgenant style, one augmentation per row).

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Assigns every row of `cost` to a distinct column minimising the total.
/// Requires `rows <= cols`; returns the column chosen for each row.
pub fn solve(cost: &DMatrix<f64>) -> Result<Vec<usize>> {
    let (nr, nc) = cost.shape();
    if nr > nc {
        return Err(Error::InvalidArgument(format!("{nr} rows cannot be assigned to {nc} columns")));
    }
    if cost.iter().any(|c| !c.is_finite()) {
        return Err(Error::InvalidArgument("assignment costs must be finite".into()));
    }

    let mut u = vec![0.0; nr];
    let mut v = vec![0.0; nc];
    let mut col4row = vec![usize::MAX; nr];
    let mut row4col = vec![usize::MAX; nc];
    let mut path = vec![usize::MAX; nc];
    let mut dist = vec![f64::INFINITY; nc];
    let mut seen_row = vec![false; nr];
    let mut seen_col = vec![false; nc];
    let mut remaining = Vec::with_capacity(nc);

    for cur in 0..nr {
        dist.fill(f64::INFINITY);
        seen_row.fill(false);
        seen_col.fill(false);
        remaining.clear();
        remaining.extend((0..nc).rev());

        let mut min_val = 0.0;
        let mut i = cur;
        let sink = loop {
            seen_row[i] = true;
            let mut best = usize::MAX;
            let mut lowest = f64::INFINITY;
            for (k, &j) in remaining.iter().enumerate() {
                let r = min_val + cost[(i, j)] - u[i] - v[j];
                if r < dist[j] {
                    path[j] = i;
                    dist[j] = r;
                }
                if dist[j] < lowest || (dist[j] == lowest && row4col[j] == usize::MAX) {
                    lowest = dist[j];
                    best = k;
                }
            }
            if best == usize::MAX {
                return Err(Error::Numerical("no augmenting path".into()));
            }
            min_val = lowest;
            let j = remaining.swap_remove(best);
            seen_col[j] = true;
            if row4col[j] == usize::MAX {
                break j;
            }
            i = row4col[j];
        };

        u[cur] += min_val;
        for r in 0..nr {
            if seen_row[r] && r != cur {
                u[r] += min_val - dist[col4row[r]];
            }
        }
        for c in 0..nc {
            if seen_col[c] {
                v[c] -= min_val - dist[c];
            }
        }

        let mut j = sink;
        loop {
            let r = path[j];
            row4col[j] = r;
            std::mem::swap(&mut col4row[r], &mut j);
            if r == cur {
                break;
            }
        }
    }
    Ok(col4row)
}
