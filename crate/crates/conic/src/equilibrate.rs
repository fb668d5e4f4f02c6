//! Ruiz equilibration of the constraint data.
//!
//! Produces diagonal scalings `D` (columns), `E` (equality rows) and `F`
//! (cone rows, constant within each second-order block) so that
//! `Ã = E A D` and `G̃ = F G D` have rows and columns of roughly unit
//! infinity norm.

use crate::cones::Block;
use crate::sparse::CscMatrix;

const MIN_NORM: f64 = 1e-4;
const MAX_NORM: f64 = 1e4;

#[derive(Debug, Clone)]
pub(crate) struct Equilibration {
    pub d: Vec<f64>,
    pub e: Vec<f64>,
    pub f: Vec<f64>,
}

fn inv_sqrt(norm: f64) -> f64 {
    if norm == 0.0 {
        1.0
    } else {
        1.0 / norm.clamp(MIN_NORM, MAX_NORM).sqrt()
    }
}

pub(crate) fn ruiz(a: &mut CscMatrix, g: &mut CscMatrix, blocks: &[Block], iters: usize) -> Equilibration {
    let n = a.ncols;
    let mut eq = Equilibration {
        d: vec![1.0; n],
        e: vec![1.0; a.nrows],
        f: vec![1.0; g.nrows],
    };
    for _ in 0..iters {
        let ca = a.col_norms_inf();
        let cg = g.col_norms_inf();
        let dk: Vec<f64> = ca.iter().zip(&cg).map(|(x, y)| inv_sqrt(x.max(*y))).collect();
        let ek: Vec<f64> = a.row_norms_inf().into_iter().map(inv_sqrt).collect();
        let rg = g.row_norms_inf();
        let mut fk = vec![1.0; g.nrows];
        for b in blocks {
            let r = b.range();
            match b {
                Block::NonNeg { .. } => {
                    for i in r {
                        fk[i] = inv_sqrt(rg[i]);
                    }
                }
                Block::Soc { .. } => {
                    let mx = rg[r.clone()].iter().fold(0.0f64, |m, v| m.max(*v));
                    let s = inv_sqrt(mx);
                    fk[r].iter_mut().for_each(|v| *v = s);
                }
            }
        }
        a.scale(&ek, &dk);
        g.scale(&fk, &dk);
        for (t, k) in eq.d.iter_mut().zip(&dk) {
            *t *= k;
        }
        for (t, k) in eq.e.iter_mut().zip(&ek) {
            *t *= k;
        }
        for (t, k) in eq.f.iter_mut().zip(&fk) {
            *t *= k;
        }
    }
    eq
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn badly_scaled_rows_are_balanced() {
        let mut a = CscMatrix::from_triplets(2, 2, &[(0, 0, 1e4), (0, 1, 2e4), (1, 1, 1e-3)]);
        let mut g = CscMatrix::from_triplets(2, 2, &[(0, 0, 5.0), (1, 1, 7.0)]);
        let blocks = vec![Block::Soc { offset: 0, dim: 2 }];
        let orig_a = a.clone();
        let eq = ruiz(&mut a, &mut g, &blocks, 15);
        for v in a.row_norms_inf().into_iter().chain(a.col_norms_inf()) {
            assert!(v > 0.1 && v < 10.0, "norm {v}");
        }
        assert_eq!(eq.f[0], eq.f[1]);
        // Ã = E A D
        for (i, j, v) in orig_a.triplets() {
            let p = (a.colptr[j]..a.colptr[j + 1]).find(|&p| a.rowval[p] == i).unwrap();
            assert!((a.nzval[p] - eq.e[i] * v * eq.d[j]).abs() <= 1e-12 * a.nzval[p].abs());
        }
    }
}
