//! Reverse Cuthill-McKee ordering and symmetric permutation.
//!
//! Reordering pulls a matrix's nonzeros toward the diagonal, which shrinks
//! the halo a row-block partition has to exchange. The permutation is
//! returned as a sequence `p` with `p[new] = old`.

use super::{coo_to_csr, CooTriples, CsrMatrix, SparseError};

/// Maximum |row - column| over all stored entries; 0 for an empty matrix.
pub fn matrix_bandwidth(a: &CsrMatrix) -> usize {
    let mut bw = 0usize;
    for i in 0..a.n_rows {
        for &c in a.row(i).0 {
            bw = bw.max(i.abs_diff(c as usize));
        }
    }
    bw
}

/// Reverse Cuthill-McKee ordering of a square matrix's adjacency graph.
///
/// The pattern is symmetrized internally, so unsymmetric inputs are fine.
/// Each connected component is traversed breadth-first from its vertex of
/// minimum degree (ties broken toward the lowest index), neighbors visited
/// in ascending-degree order, and the component's visit order is reversed.
/// An isolated vertex is its own component, so a diagonal matrix maps to the
/// identity permutation.
pub fn rcm_permutation(a: &CsrMatrix) -> Result<Vec<usize>, SparseError> {
    if a.n_rows != a.n_cols {
        return Err(SparseError::DimensionMismatch {
            context: "ordering needs a square matrix",
            expected: a.n_rows,
            got: a.n_cols,
        });
    }
    let n = a.n_rows;

    // symmetrized adjacency, self-loops dropped, deduplicated
    let mut adj: Vec<Vec<u32>> = vec![Vec::new(); n];
    for i in 0..n {
        for &c in a.row(i).0 {
            let j = c as usize;
            if i != j {
                adj[i].push(c);
                adj[j].push(i as u32);
            }
        }
    }
    for list in &mut adj {
        list.sort_unstable();
        list.dedup();
    }
    let degree: Vec<usize> = adj.iter().map(Vec::len).collect();
    // within each list, expansion order is ascending degree, then index
    for list in &mut adj {
        list.sort_by_key(|&v| (degree[v as usize], v));
    }
    let mut start_order: Vec<usize> = (0..n).collect();
    start_order.sort_by_key(|&v| (degree[v], v));

    let mut perm = Vec::with_capacity(n);
    let mut visited = vec![false; n];
    let mut queue = std::collections::VecDeque::new();
    for &start in &start_order {
        if visited[start] {
            continue;
        }
        let component_begin = perm.len();
        visited[start] = true;
        queue.push_back(start);
        while let Some(v) = queue.pop_front() {
            perm.push(v);
            for &w in &adj[v] {
                if !visited[w as usize] {
                    visited[w as usize] = true;
                    queue.push_back(w as usize);
                }
            }
        }
        perm[component_begin..].reverse();
    }
    Ok(perm)
}

fn check_permutation(p: &[usize], n: usize) -> Result<Vec<usize>, SparseError> {
    if p.len() != n {
        return Err(SparseError::InvalidPermutation(format!(
            "length {} != dimension {n}",
            p.len()
        )));
    }
    let mut inverse = vec![usize::MAX; n];
    for (new, &old) in p.iter().enumerate() {
        if old >= n {
            return Err(SparseError::InvalidPermutation(format!(
                "entry {old} out of range for dimension {n}"
            )));
        }
        if inverse[old] != usize::MAX {
            return Err(SparseError::InvalidPermutation(format!(
                "entry {old} appears twice"
            )));
        }
        inverse[old] = new;
    }
    Ok(inverse)
}

/// Symmetric permutation P A Pᵀ: new row/column k holds old row/column
/// `p[k]`. The result is rebuilt in canonical form.
pub fn permute(a: &CsrMatrix, p: &[usize]) -> Result<CsrMatrix, SparseError> {
    if a.n_rows != a.n_cols {
        return Err(SparseError::DimensionMismatch {
            context: "symmetric permutation needs a square matrix",
            expected: a.n_rows,
            got: a.n_cols,
        });
    }
    let inverse = check_permutation(p, a.n_rows)?;
    let mut t = CooTriples::new(a.n_rows, a.n_cols);
    for i in 0..a.n_rows {
        let (cols, vals) = a.row(i);
        for (c, v) in cols.iter().zip(vals) {
            t.push(inverse[i], inverse[*c as usize], *v);
        }
    }
    coo_to_csr(&t)
}

/// Applies the same reordering to a vector: `out[new] = x[p[new]]`.
pub fn permute_vec(x: &[f64], p: &[usize]) -> Result<Vec<f64>, SparseError> {
    check_permutation(p, x.len())?;
    Ok(p.iter().map(|&old| x[old]).collect())
}
