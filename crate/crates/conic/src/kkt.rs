//! Reduced KKT system
//!
//! ```text
//! [ 0  Aᵀ  Gᵀ  ] [dx]   [rx]
//! [ A  0   0   ] [dy] = [ry]
//! [ G  0  -W²  ] [dz]   [rz]
//! ```
//!
//! factored as a permuted quasi-definite matrix with static regularization
//! and solved with iterative refinement against the unregularized system.

use crate::cones::{Block, NtScaling};
use crate::ldl::{invert_permutation, minimum_degree, LdlFactor, SingularPivot, UpperCsc};
use crate::sparse::{norm_inf, CscMatrix};

pub(crate) struct KktSystem {
    n: usize,
    p: usize,
    m: usize,
    a: CscMatrix,
    g: CscMatrix,
    blocks: Vec<Block>,
    perm: Vec<usize>,
    mat: UpperCsc,
    factor: LdlFactor,
    /// nzval positions of the `-W²` entries, per block, row-major upper part.
    wpos: Vec<Vec<usize>>,
    /// nzval positions of the y diagonal.
    ydiag: Vec<usize>,
    xdiag: Vec<usize>,
    static_reg: f64,
    refine_steps: usize,
    scaling: Option<NtScaling>,
}

impl KktSystem {
    pub fn new(a: CscMatrix, g: CscMatrix, blocks: Vec<Block>, static_reg: f64, refine_steps: usize) -> Self {
        let n = a.ncols;
        let p = a.nrows;
        let m = g.nrows;
        let dim = n + p + m;

        // upper-triangular triplets in the natural ordering: (row, col, tag)
        #[derive(Clone, Copy)]
        enum Tag {
            Fixed(f64),
            XDiag,
            YDiag,
            W(usize, usize),
        }
        let mut trip: Vec<(usize, usize, Tag)> = Vec::new();
        for j in 0..n {
            trip.push((j, j, Tag::XDiag));
        }
        for (i, j, v) in a.triplets() {
            trip.push((j, n + i, Tag::Fixed(v)));
        }
        for i in 0..p {
            trip.push((n + i, n + i, Tag::YDiag));
        }
        for (i, j, v) in g.triplets() {
            trip.push((j, n + p + i, Tag::Fixed(v)));
        }
        let mut wcount = Vec::with_capacity(blocks.len());
        for (k, b) in blocks.iter().enumerate() {
            let r = b.range();
            let base = n + p + r.start;
            let d = r.len();
            match b {
                Block::NonNeg { .. } => {
                    for i in 0..d {
                        trip.push((base + i, base + i, Tag::W(k, i * d + i)));
                    }
                }
                Block::Soc { .. } => {
                    for j in 0..d {
                        for i in 0..=j {
                            trip.push((base + i, base + j, Tag::W(k, i * d + j)));
                        }
                    }
                }
            }
            wcount.push(d * d);
        }

        // fill-reducing ordering on the symmetric pattern
        let mut adj = vec![Vec::new(); dim];
        for &(r, c, _) in &trip {
            if r != c {
                adj[r].push(c);
                adj[c].push(r);
            }
        }
        let perm = minimum_degree(&adj);
        let pinv = invert_permutation(&perm);

        let mut entries: Vec<(usize, usize, usize)> = trip
            .iter()
            .enumerate()
            .map(|(t, &(r, c, _))| {
                let (pr, pc) = (pinv[r], pinv[c]);
                if pr <= pc {
                    (pc, pr, t)
                } else {
                    (pr, pc, t)
                }
            })
            .collect();
        entries.sort_unstable();
        let mut colptr = vec![0usize; dim + 1];
        let mut rowval = Vec::with_capacity(entries.len());
        let mut nzval = vec![0.0; entries.len()];
        let mut pos_of = vec![0usize; trip.len()];
        for (q, &(col, row, t)) in entries.iter().enumerate() {
            colptr[col + 1] += 1;
            rowval.push(row);
            pos_of[t] = q;
        }
        for j in 0..dim {
            colptr[j + 1] += colptr[j];
        }

        let mut wpos: Vec<Vec<usize>> = wcount.iter().map(|&c| vec![usize::MAX; c]).collect();
        let mut xdiag = vec![0; n];
        let mut ydiag = vec![0; p];
        for (t, &(r, _, tag)) in trip.iter().enumerate() {
            let q = pos_of[t];
            match tag {
                Tag::Fixed(v) => nzval[q] = v,
                Tag::XDiag => xdiag[r] = q,
                Tag::YDiag => ydiag[r - n] = q,
                Tag::W(k, idx) => wpos[k][idx] = q,
            }
        }
        let mat = UpperCsc {
            n: dim,
            colptr,
            rowval,
            nzval,
        };
        let signs: Vec<f64> = perm.iter().map(|&i| if i < n { 1.0 } else { -1.0 }).collect();
        let factor = LdlFactor::analyze(&mat, signs);
        KktSystem {
            n,
            p,
            m,
            a,
            g,
            blocks,
            perm,
            mat,
            factor,
            wpos,
            ydiag,
            xdiag,
            static_reg,
            refine_steps,
            scaling: None,
        }
    }

    pub fn dim(&self) -> usize {
        self.n + self.p + self.m
    }

    /// Refreshes the `-W²` block and refactors.
    pub fn update(&mut self, scaling: &NtScaling) -> Result<(), SingularPivot> {
        let delta = self.static_reg;
        for &q in &self.xdiag {
            self.mat.nzval[q] = delta;
        }
        for &q in &self.ydiag {
            self.mat.nzval[q] = -delta;
        }
        for (k, pos) in self.wpos.iter().enumerate() {
            let w2 = scaling.block_squared(k);
            let d = (pos.len() as f64).sqrt() as usize;
            for i in 0..d {
                for j in i..d {
                    let q = pos[i * d + j];
                    if q == usize::MAX {
                        continue;
                    }
                    let mut v = -w2[i * d + j];
                    if i == j {
                        v -= delta;
                    }
                    self.mat.nzval[q] = v;
                }
            }
        }
        self.scaling = Some(scaling.clone());
        self.factor.factor(&self.mat)
    }

    /// Unregularized `K v`.
    fn multiply(&self, v: &[f64], out: &mut [f64]) {
        let (n, p) = (self.n, self.p);
        let (vx, rest) = v.split_at(n);
        let (vy, vz) = rest.split_at(p);
        out.iter_mut().for_each(|o| *o = 0.0);
        {
            let (ox, rest) = out.split_at_mut(n);
            let (oy, oz) = rest.split_at_mut(p);
            self.a.gemv_t(1.0, vy, ox);
            self.g.gemv_t(1.0, vz, ox);
            self.a.gemv(1.0, vx, oy);
            self.g.gemv(1.0, vx, oz);
            let sc = self.scaling.as_ref().expect("update before solve");
            let mut t1 = vec![0.0; vz.len()];
            let mut t2 = vec![0.0; vz.len()];
            sc.apply(&self.blocks, vz, &mut t1);
            sc.apply(&self.blocks, &t1, &mut t2);
            for (o, t) in oz.iter_mut().zip(&t2) {
                *o -= t;
            }
        }
    }

    fn solve_factored(&self, rhs: &[f64], out: &mut [f64]) {
        let mut tmp: Vec<f64> = self.perm.iter().map(|&i| rhs[i]).collect();
        self.factor.solve_in_place(&mut tmp);
        for (k, &i) in self.perm.iter().enumerate() {
            out[i] = tmp[k];
        }
    }

    /// Solves `K sol = rhs` with iterative refinement.
    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let dim = self.dim();
        let mut sol = vec![0.0; dim];
        self.solve_factored(rhs, &mut sol);
        let target = 1e-14 * (1.0 + norm_inf(rhs));
        let mut kx = vec![0.0; dim];
        let mut corr = vec![0.0; dim];
        let mut err = vec![0.0; dim];
        let mut best = sol.clone();
        let mut best_err = f64::INFINITY;
        for step in 0..=self.refine_steps {
            self.multiply(&sol, &mut kx);
            for i in 0..dim {
                err[i] = rhs[i] - kx[i];
            }
            let e = norm_inf(&err);
            if e < best_err {
                best_err = e;
                best.copy_from_slice(&sol);
            } else {
                break;
            }
            if e <= target || step == self.refine_steps {
                break;
            }
            self.solve_factored(&err, &mut corr);
            for (s, c) in sol.iter_mut().zip(&corr) {
                *s += c;
            }
        }
        best
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn solves_small_system_with_soc_block() {
        let a = CscMatrix::from_triplets(1, 3, &[(0, 0, 1.0), (0, 1, 1.0)]);
        let g = CscMatrix::from_triplets(3, 3, &[(0, 0, -1.0), (1, 1, -1.0), (2, 2, -1.0), (2, 0, 0.5)]);
        let blocks = vec![Block::Soc { offset: 0, dim: 3 }];
        let mut k = KktSystem::new(a.clone(), g.clone(), blocks.clone(), 1e-9, 3);
        let s = [2.0, 0.5, -0.3];
        let z = [1.5, -0.2, 0.4];
        let w = NtScaling::new(&blocks, &s, &z).unwrap();
        k.update(&w).unwrap();
        let rhs = [1.0, -2.0, 0.5, 3.0, 0.1, 0.2, -0.7];
        let sol = k.solve(&rhs);
        let mut back = vec![0.0; 7];
        k.multiply(&sol, &mut back);
        for i in 0..7 {
            assert_relative_eq!(back[i], rhs[i], epsilon = 1e-9);
        }
    }
}

