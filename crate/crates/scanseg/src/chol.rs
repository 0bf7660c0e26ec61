//! Sparse LDL^T factorization for symmetric positive definite systems.
//!
//! Up-looking factorization over the elimination tree, preceded by a
//! reverse Cuthill-McKee reordering to keep fill-in low on mesh graphs.
//! This backs the shift-invert eigensolver; one factorization per mesh,
//! many solves.

use crate::error::{Error, Result};
use crate::sparse::SparseOperator;
use std::collections::VecDeque;

/// Factorized P A P^T = L D L^T with unit lower-triangular L.
pub struct LdlFactor {
    n: usize,
    perm: Vec<usize>,    // new -> old
    iperm: Vec<usize>,   // old -> new
    col_ptr: Vec<usize>, // L in CSC, strictly lower part
    row_idx: Vec<u32>,
    values: Vec<f64>,
    diag: Vec<f64>,
}

/// Reverse Cuthill-McKee ordering of the operator's adjacency graph.
/// Returns the permutation as new -> old.
pub fn rcm_order(a: &SparseOperator) -> Vec<usize> {
    let n = a.dim();
    let degree: Vec<usize> = (0..n).map(|r| a.row(r).0.len()).collect();
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    // process each connected component from a minimum-degree start
    let mut starts: Vec<usize> = (0..n).collect();
    starts.sort_unstable_by_key(|&i| degree[i]);
    for &start in &starts {
        if visited[start] {
            continue;
        }
        visited[start] = true;
        let mut queue = VecDeque::new();
        queue.push_back(start);
        while let Some(u) = queue.pop_front() {
            order.push(u);
            let (cols, _) = a.row(u);
            let mut nbrs: Vec<usize> = cols
                .iter()
                .map(|&c| c as usize)
                .filter(|&c| c != u && !visited[c])
                .collect();
            nbrs.sort_unstable_by_key(|&c| (degree[c], c));
            for c in nbrs {
                visited[c] = true;
                queue.push_back(c);
            }
        }
    }
    order.reverse();
    order
}

impl LdlFactor {
    /// Factor a symmetric positive definite operator.
    pub fn new(a: &SparseOperator) -> Result<Self> {
        let n = a.dim();
        let perm = rcm_order(a);
        let mut iperm = vec![0usize; n];
        for (new, &old) in perm.iter().enumerate() {
            iperm[old] = new;
        }

        // permuted upper triangle in CSC: column j holds rows i <= j.
        // For the symmetric input, column j of the upper triangle equals
        // the entries (r, c) with iperm-ordered indices i = iperm[r] <= j.
        let mut cols: Vec<Vec<(u32, f64)>> = vec![Vec::new(); n];
        for (r, c, v) in a.iter() {
            let (i, j) = (iperm[r], iperm[c]);
            if i <= j {
                cols[j].push((i as u32, v));
            }
        }
        for col in &mut cols {
            col.sort_unstable_by_key(|&(i, _)| i);
        }

        // symbolic: elimination tree and column counts
        let mut parent = vec![usize::MAX; n];
        let mut flag = vec![usize::MAX; n];
        let mut lnz = vec![0usize; n];
        for j in 0..n {
            flag[j] = j;
            for &(i0, _) in &cols[j] {
                let mut i = i0 as usize;
                while i < j && flag[i] != j {
                    if parent[i] == usize::MAX {
                        parent[i] = j;
                    }
                    lnz[i] += 1;
                    flag[i] = j;
                    i = parent[i];
                }
            }
        }
        let mut col_ptr = vec![0usize; n + 1];
        for j in 0..n {
            col_ptr[j + 1] = col_ptr[j] + lnz[j];
        }
        let nnz = col_ptr[n];
        let mut row_idx = vec![0u32; nnz];
        let mut values = vec![0.0f64; nnz];
        let mut diag = vec![0.0f64; n];

        // numeric: up-looking, one column of L per step
        let mut y = vec![0.0f64; n];
        let mut pattern = vec![0usize; n];
        let mut fill = vec![0usize; n]; // entries already placed per column
        let mut flag = vec![usize::MAX; n];
        for j in 0..n {
            let mut top = n;
            flag[j] = j;
            for &(i0, v) in &cols[j] {
                let mut i = i0 as usize;
                y[i] += v;
                let mut len = 0usize;
                while i < j && flag[i] != j {
                    pattern[len] = i;
                    len += 1;
                    flag[i] = j;
                    i = parent[i];
                }
                while len > 0 {
                    len -= 1;
                    top -= 1;
                    pattern[top] = pattern[len];
                }
            }
            diag[j] = y[j];
            y[j] = 0.0;
            for &i in &pattern[top..n] {
                let yi = y[i];
                y[i] = 0.0;
                let p2 = col_ptr[i] + fill[i];
                for p in col_ptr[i]..p2 {
                    y[row_idx[p] as usize] -= values[p] * yi;
                }
                let lji = yi / diag[i];
                diag[j] -= lji * yi;
                row_idx[p2] = j as u32;
                values[p2] = lji;
                fill[i] += 1;
            }
            if !(diag[j] > 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "matrix not positive definite (pivot {j} = {:.3e})",
                    diag[j]
                )));
            }
        }

        Ok(LdlFactor {
            n,
            perm,
            iperm,
            col_ptr,
            row_idx,
            values,
            diag,
        })
    }

    /// Solve A x = b.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        assert_eq!(b.len(), self.n);
        let n = self.n;
        let mut x: Vec<f64> = (0..n).map(|j| b[self.perm[j]]).collect();
        // L z = b
        for j in 0..n {
            let xj = x[j];
            for p in self.col_ptr[j]..self.col_ptr[j + 1] {
                x[self.row_idx[p] as usize] -= self.values[p] * xj;
            }
        }
        // D w = z
        for j in 0..n {
            x[j] /= self.diag[j];
        }
        // L^T y = w
        for j in (0..n).rev() {
            let mut acc = x[j];
            for p in self.col_ptr[j]..self.col_ptr[j + 1] {
                acc -= self.values[p] * x[self.row_idx[p] as usize];
            }
            x[j] = acc;
        }
        // un-permute
        let mut out = vec![0.0f64; n];
        for j in 0..n {
            out[self.perm[j]] = x[j];
        }
        out
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn factor_nnz(&self) -> usize {
        self.values.len()
    }

    #[allow(dead_code)]
    pub(crate) fn iperm(&self) -> &[usize] {
        &self.iperm
    }
}
