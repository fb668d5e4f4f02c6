//! Sparse LDLᵀ factorization of symmetric quasi-definite matrices with a
//! minimum-degree fill-reducing ordering.
//!
//! The numeric phase follows the up-looking elimination-tree algorithm used
//! by QDLDL. Pivots whose sign disagrees with the expected inertia are
//! replaced by a small regularization value of the right sign.

use std::collections::BTreeSet;

/// Minimum-degree ordering of a symmetric sparsity pattern.
///
/// `adj[i]` lists the neighbours of node `i` (no self loops required).
/// Ties are broken by the smallest node index so the ordering is
/// deterministic. Returns `perm` with `perm[k]` = node eliminated at step k.
pub fn minimum_degree(adj: &[Vec<usize>]) -> Vec<usize> {
    let n = adj.len();
    let mut graph: Vec<BTreeSet<usize>> = adj
        .iter()
        .enumerate()
        .map(|(i, nb)| nb.iter().copied().filter(|&j| j != i).collect())
        .collect();
    // make symmetric
    for i in 0..n {
        let nb: Vec<usize> = graph[i].iter().copied().collect();
        for j in nb {
            graph[j].insert(i);
        }
    }
    let mut queue: BTreeSet<(usize, usize)> = (0..n).map(|i| (graph[i].len(), i)).collect();
    let mut eliminated = vec![false; n];
    let mut perm = Vec::with_capacity(n);
    while let Some((_, v)) = queue.pop_first() {
        eliminated[v] = true;
        perm.push(v);
        let nb: Vec<usize> = std::mem::take(&mut graph[v]).into_iter().collect();
        for &u in &nb {
            let old = graph[u].len();
            graph[u].remove(&v);
            for &w in &nb {
                if w != u {
                    graph[u].insert(w);
                }
            }
            let new = graph[u].len();
            if new != old {
                queue.remove(&(old, u));
                queue.insert((new, u));
            }
        }
    }
    debug_assert!(eliminated.iter().all(|&e| e));
    perm
}

pub fn invert_permutation(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (k, &p) in perm.iter().enumerate() {
        inv[p] = k;
    }
    inv
}

/// Upper-triangular CSC pattern + values of a symmetric matrix.
#[derive(Debug, Clone)]
pub struct UpperCsc {
    pub n: usize,
    pub colptr: Vec<usize>,
    pub rowval: Vec<usize>,
    pub nzval: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SingularPivot(pub usize);

/// LDLᵀ factors with a precomputed symbolic structure.
#[derive(Debug, Clone)]
pub struct LdlFactor {
    n: usize,
    etree: Vec<Option<usize>>,
    lnz: Vec<usize>,
    lp: Vec<usize>,
    li: Vec<usize>,
    lx: Vec<f64>,
    d: Vec<f64>,
    dinv: Vec<f64>,
    /// Expected pivot sign per (permuted) column.
    signs: Vec<f64>,
    pub dynamic_regularization: f64,
    pub dynamic_threshold: f64,
    pub regularized_count: usize,
}

impl LdlFactor {
    /// Symbolic analysis of an upper-triangular pattern.
    pub fn analyze(a: &UpperCsc, signs: Vec<f64>) -> Self {
        let n = a.n;
        let mut etree = vec![None; n];
        let mut lnz = vec![0usize; n];
        let mut work = vec![usize::MAX; n];
        for j in 0..n {
            work[j] = j;
            for p in a.colptr[j]..a.colptr[j + 1] {
                let mut i = a.rowval[p];
                debug_assert!(i <= j, "matrix must be upper triangular");
                while work[i] != j {
                    if etree[i].is_none() {
                        etree[i] = Some(j);
                    }
                    lnz[i] += 1;
                    work[i] = j;
                    i = etree[i].unwrap();
                }
            }
        }
        let mut lp = vec![0usize; n + 1];
        for i in 0..n {
            lp[i + 1] = lp[i] + lnz[i];
        }
        let total = lp[n];
        LdlFactor {
            n,
            etree,
            lnz,
            lp,
            li: vec![0; total],
            lx: vec![0.0; total],
            d: vec![0.0; n],
            dinv: vec![0.0; n],
            signs,
            dynamic_regularization: 1e-7,
            dynamic_threshold: 1e-13,
            regularized_count: 0,
        }
    }

    #[cfg(test)]
    pub fn nnz_l(&self) -> usize {
        self.lp[self.n]
    }

    /// Numeric factorization; `a` must have the analyzed pattern.
    pub fn factor(&mut self, a: &UpperCsc) -> Result<(), SingularPivot> {
        let n = self.n;
        const UNUSED: bool = false;
        let mut y_markers = vec![UNUSED; n];
        let mut y_vals = vec![0.0; n];
        let mut y_idx = vec![0usize; n];
        let mut elim_buffer = vec![0usize; n];
        let mut next_space: Vec<usize> = self.lp[..n].to_vec();
        self.regularized_count = 0;
        debug_assert_eq!(self.lnz.len(), n);

        for k in 0..n {
            let mut nnz_y = 0;
            self.d[k] = 0.0;
            for p in a.colptr[k]..a.colptr[k + 1] {
                let bidx = a.rowval[p];
                if bidx == k {
                    self.d[k] = a.nzval[p];
                    continue;
                }
                y_vals[bidx] = a.nzval[p];
                if !y_markers[bidx] {
                    y_markers[bidx] = true;
                    elim_buffer[0] = bidx;
                    let mut nnz_e = 1;
                    let mut next = self.etree[bidx];
                    while let Some(ni) = next {
                        if ni >= k || y_markers[ni] {
                            break;
                        }
                        y_markers[ni] = true;
                        elim_buffer[nnz_e] = ni;
                        nnz_e += 1;
                        next = self.etree[ni];
                    }
                    while nnz_e > 0 {
                        nnz_e -= 1;
                        y_idx[nnz_y] = elim_buffer[nnz_e];
                        nnz_y += 1;
                    }
                }
            }
            for i in (0..nnz_y).rev() {
                let cidx = y_idx[i];
                let tmp = next_space[cidx];
                let yc = y_vals[cidx];
                for j in self.lp[cidx]..tmp {
                    y_vals[self.li[j]] -= self.lx[j] * yc;
                }
                self.li[tmp] = k;
                let lval = yc * self.dinv[cidx];
                self.lx[tmp] = lval;
                self.d[k] -= yc * lval;
                next_space[cidx] += 1;
                y_vals[cidx] = 0.0;
                y_markers[cidx] = UNUSED;
            }
            let sign = self.signs[k];
            if self.d[k] * sign <= self.dynamic_threshold {
                self.d[k] = sign * self.dynamic_regularization;
                self.regularized_count += 1;
            }
            if !self.d[k].is_finite() || self.d[k] == 0.0 {
                return Err(SingularPivot(k));
            }
            self.dinv[k] = 1.0 / self.d[k];
        }
        Ok(())
    }

    /// Solves `L D Lᵀ x = b` in place (permuted coordinates).
    pub fn solve_in_place(&self, x: &mut [f64]) {
        let n = self.n;
        for i in 0..n {
            let xi = x[i];
            if xi != 0.0 {
                for j in self.lp[i]..self.lp[i + 1] {
                    x[self.li[j]] -= self.lx[j] * xi;
                }
            }
        }
        for i in 0..n {
            x[i] *= self.dinv[i];
        }
        for i in (0..n).rev() {
            let mut acc = x[i];
            for j in self.lp[i]..self.lp[i + 1] {
                acc -= self.lx[j] * x[self.li[j]];
            }
            x[i] = acc;
        }
    }
}
