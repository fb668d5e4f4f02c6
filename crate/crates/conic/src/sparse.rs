//! Compressed sparse column matrices.

/// A sparse matrix in compressed sparse column form.
///
/// Row indices within each column are sorted and unique.
#[derive(Debug, Clone, PartialEq)]
pub struct CscMatrix {
    pub nrows: usize,
    pub ncols: usize,
    pub colptr: Vec<usize>,
    pub rowval: Vec<usize>,
    pub nzval: Vec<f64>,
}

impl CscMatrix {
    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        CscMatrix {
            nrows,
            ncols,
            colptr: vec![0; ncols + 1],
            rowval: Vec::new(),
            nzval: Vec::new(),
        }
    }

    /// Builds a matrix from `(row, col, value)` triplets. Duplicate entries
    /// are summed; explicit zeros are kept so that the sparsity pattern is
    /// independent of the values.
    ///
    /// Panics if an index is out of range.
    pub fn from_triplets(nrows: usize, ncols: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut counts = vec![0usize; ncols + 1];
        for &(r, c, _) in triplets {
            assert!(r < nrows && c < ncols, "triplet ({r}, {c}) outside {nrows}x{ncols}");
            counts[c + 1] += 1;
        }
        for j in 0..ncols {
            counts[j + 1] += counts[j];
        }
        let mut next = counts.clone();
        let mut rows = vec![0usize; triplets.len()];
        let mut vals = vec![0.0; triplets.len()];
        for &(r, c, v) in triplets {
            let p = next[c];
            rows[p] = r;
            vals[p] = v;
            next[c] += 1;
        }

        // sort each column by row and merge duplicates
        let mut colptr = Vec::with_capacity(ncols + 1);
        let mut rowval = Vec::with_capacity(triplets.len());
        let mut nzval = Vec::with_capacity(triplets.len());
        colptr.push(0);
        let mut scratch: Vec<(usize, f64)> = Vec::new();
        for j in 0..ncols {
            scratch.clear();
            scratch.extend((counts[j]..counts[j + 1]).map(|p| (rows[p], vals[p])));
            scratch.sort_by_key(|&(r, _)| r);
            for &(r, v) in &scratch {
                if rowval.len() > colptr[j] && *rowval.last().unwrap() == r {
                    *nzval.last_mut().unwrap() += v;
                } else {
                    rowval.push(r);
                    nzval.push(v);
                }
            }
            colptr.push(rowval.len());
        }
        CscMatrix {
            nrows,
            ncols,
            colptr,
            rowval,
            nzval,
        }
    }

    pub fn nnz(&self) -> usize {
        self.nzval.len()
    }

    /// Iterates over `(row, col, value)` in column-major order.
    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.ncols).flat_map(move |j| {
            (self.colptr[j]..self.colptr[j + 1]).map(move |p| (self.rowval[p], j, self.nzval[p]))
        })
    }

    /// `y += alpha * A * x`
    pub fn gemv(&self, alpha: f64, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.ncols);
        debug_assert_eq!(y.len(), self.nrows);
        for j in 0..self.ncols {
            let xj = alpha * x[j];
            if xj == 0.0 {
                continue;
            }
            for p in self.colptr[j]..self.colptr[j + 1] {
                y[self.rowval[p]] += self.nzval[p] * xj;
            }
        }
    }

    /// `y += alpha * A^T * x`
    pub fn gemv_t(&self, alpha: f64, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.nrows);
        debug_assert_eq!(y.len(), self.ncols);
        for j in 0..self.ncols {
            let mut acc = 0.0;
            for p in self.colptr[j]..self.colptr[j + 1] {
                acc += self.nzval[p] * x[self.rowval[p]];
            }
            y[j] += alpha * acc;
        }
    }

    /// Returns `A * x` as a new vector.
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.nrows];
        self.gemv(1.0, x, &mut y);
        y
    }

    /// Returns `A^T * x` as a new vector.
    pub fn tmul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.ncols];
        self.gemv_t(1.0, x, &mut y);
        y
    }

    /// Multiplies row `i` by `row_scale[i]` and column `j` by `col_scale[j]`.
    pub fn scale(&mut self, row_scale: &[f64], col_scale: &[f64]) {
        for j in 0..self.ncols {
            for p in self.colptr[j]..self.colptr[j + 1] {
                self.nzval[p] *= row_scale[self.rowval[p]] * col_scale[j];
            }
        }
    }

    /// Maximum absolute value in each row.
    pub fn row_norms_inf(&self) -> Vec<f64> {
        let mut out = vec![0.0f64; self.nrows];
        for (p, &r) in self.rowval.iter().enumerate() {
            out[r] = out[r].max(self.nzval[p].abs());
        }
        out
    }

    /// Maximum absolute value in each column.
    pub fn col_norms_inf(&self) -> Vec<f64> {
        (0..self.ncols)
            .map(|j| {
                self.nzval[self.colptr[j]..self.colptr[j + 1]]
                    .iter()
                    .fold(0.0f64, |m, v| m.max(v.abs()))
            })
            .collect()
    }

    /// Stacks `self` on top of `other` (both must have the same column count).
    pub fn vstack(&self, other: &CscMatrix) -> CscMatrix {
        assert_eq!(self.ncols, other.ncols);
        let mut colptr = Vec::with_capacity(self.ncols + 1);
        let mut rowval = Vec::with_capacity(self.nnz() + other.nnz());
        let mut nzval = Vec::with_capacity(self.nnz() + other.nnz());
        colptr.push(0);
        for j in 0..self.ncols {
            for p in self.colptr[j]..self.colptr[j + 1] {
                rowval.push(self.rowval[p]);
                nzval.push(self.nzval[p]);
            }
            for p in other.colptr[j]..other.colptr[j + 1] {
                rowval.push(other.rowval[p] + self.nrows);
                nzval.push(other.nzval[p]);
            }
            colptr.push(rowval.len());
        }
        CscMatrix {
            nrows: self.nrows + other.nrows,
            ncols: self.ncols,
            colptr,
            rowval,
            nzval,
        }
    }

    /// Selects a subset of rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> CscMatrix {
        let mut map = vec![usize::MAX; self.nrows];
        for (new, &old) in rows.iter().enumerate() {
            map[old] = new;
        }
        let trip: Vec<_> = self
            .triplets()
            .filter(|&(r, _, _)| map[r] != usize::MAX)
            .map(|(r, c, v)| (map[r], c, v))
            .collect();
        CscMatrix::from_triplets(rows.len(), self.ncols, &trip)
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.ncols]; self.nrows];
        for (r, c, v) in self.triplets() {
            d[r][c] += v;
        }
        d
    }

    pub fn all_finite(&self) -> bool {
        self.nzval.iter().all(|v| v.is_finite())
    }
}

pub(crate) fn norm_inf(x: &[f64]) -> f64 {
    x.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm2(x: &[f64]) -> f64 {
    dot(x, x).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn triplets_merge_duplicates_and_sort() {
        let m = CscMatrix::from_triplets(3, 2, &[(2, 0, 1.0), (0, 0, 2.0), (2, 0, 3.0), (1, 1, -1.0)]);
        assert_eq!(m.colptr, vec![0, 2, 3]);
        assert_eq!(m.rowval, vec![0, 2, 1]);
        assert_eq!(m.nzval, vec![2.0, 4.0, -1.0]);
    }

    #[test]
    fn gemv_matches_dense() {
        let m = CscMatrix::from_triplets(2, 3, &[(0, 0, 1.0), (1, 2, 2.0), (0, 1, -3.0)]);
        assert_eq!(m.mul_vec(&[1.0, 1.0, 1.0]), vec![-2.0, 2.0]);
        assert_eq!(m.tmul_vec(&[1.0, 2.0]), vec![1.0, -3.0, 4.0]);
    }

    #[test]
    fn vstack_and_select() {
        let a = CscMatrix::from_triplets(1, 2, &[(0, 0, 1.0)]);
        let b = CscMatrix::from_triplets(2, 2, &[(1, 1, 5.0), (0, 0, 2.0)]);
        let s = a.vstack(&b);
        assert_eq!(s.to_dense(), vec![vec![1.0, 0.0], vec![2.0, 0.0], vec![0.0, 5.0]]);
        let r = s.select_rows(&[2, 0]);
        assert_eq!(r.to_dense(), vec![vec![0.0, 5.0], vec![1.0, 0.0]]);
    }
}
