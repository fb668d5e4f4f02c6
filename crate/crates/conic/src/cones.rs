//! Symmetric-cone algebra used by the interior-point iteration: Jordan
//! products, Nesterov–Todd scalings and step-to-boundary computations for
//! the nonnegative orthant and second-order cones.

use crate::sparse::{dot, norm2};

/// A cone block inside the stacked slack vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Block {
    NonNeg { offset: usize, dim: usize },
    Soc { offset: usize, dim: usize },
}

impl Block {
    pub fn range(&self) -> std::ops::Range<usize> {
        match *self {
            Block::NonNeg { offset, dim } | Block::Soc { offset, dim } => offset..offset + dim,
        }
    }

    /// Barrier degree contribution.
    pub fn degree(&self) -> usize {
        match *self {
            Block::NonNeg { dim, .. } => dim,
            Block::Soc { .. } => 1,
        }
    }
}

/// `(u0 - ‖u1‖)(u0 + ‖u1‖)`, evaluated without cancellation.
pub(crate) fn soc_residual(u: &[f64]) -> f64 {
    let n = norm2(&u[1..]);
    (u[0] - n) * (u[0] + n)
}

/// Smallest "eigenvalue" of each block, minimized over all blocks.
pub(crate) fn min_eig(blocks: &[Block], u: &[f64]) -> f64 {
    let mut m = f64::INFINITY;
    for b in blocks {
        let r = b.range();
        let v = &u[r];
        m = m.min(match b {
            Block::NonNeg { .. } => v.iter().fold(f64::INFINITY, |a, x| a.min(*x)),
            Block::Soc { .. } => v[0] - norm2(&v[1..]),
        });
    }
    m
}

/// `u += a·e` with `e` the identity element of the cone product.
pub(crate) fn add_identity(blocks: &[Block], u: &mut [f64], a: f64) {
    for b in blocks {
        match *b {
            Block::NonNeg { offset, dim } => u[offset..offset + dim].iter_mut().for_each(|x| *x += a),
            Block::Soc { offset, .. } => u[offset] += a,
        }
    }
}

/// Jordan product `out = u ∘ v`.
pub(crate) fn jordan_product(blocks: &[Block], u: &[f64], v: &[f64], out: &mut [f64]) {
    for b in blocks {
        let r = b.range();
        match b {
            Block::NonNeg { .. } => {
                for i in r {
                    out[i] = u[i] * v[i];
                }
            }
            Block::Soc { offset, .. } => {
                let o = *offset;
                let (u, v) = (&u[r.clone()], &v[r.clone()]);
                out[o] = dot(u, v);
                for i in 1..u.len() {
                    out[o + i] = u[0] * v[i] + v[0] * u[i];
                }
            }
        }
    }
}

/// Solves `lambda ∘ out = d` for `out` (inverse Jordan product).
pub(crate) fn jordan_div(blocks: &[Block], lambda: &[f64], d: &[f64], out: &mut [f64]) {
    for b in blocks {
        let r = b.range();
        match b {
            Block::NonNeg { .. } => {
                for i in r {
                    out[i] = d[i] / lambda[i];
                }
            }
            Block::Soc { offset, .. } => {
                let o = *offset;
                let (l, dd) = (&lambda[r.clone()], &d[r.clone()]);
                let det = soc_residual(l);
                let l1d1 = dot(&l[1..], &dd[1..]);
                let u0 = (l[0] * dd[0] - l1d1) / det;
                out[o] = u0;
                for i in 1..l.len() {
                    out[o + i] = (dd[i] - u0 * l[i]) / l[0];
                }
            }
        }
    }
}

/// Nesterov–Todd scaling of one cone block: `W z = W⁻¹ s = λ`.
#[derive(Debug, Clone)]
pub(crate) enum BlockScaling {
    /// `W = diag(w)`, `w = sqrt(s / z)`.
    NonNeg(Vec<f64>),
    /// `W = eta · [w0, w1ᵀ; w1, I + w1 w1ᵀ / (1 + w0)]` with `wᵀJw = 1`.
    Soc { eta: f64, w: Vec<f64> },
}

#[derive(Debug, Clone)]
pub(crate) struct NtScaling {
    pub blocks: Vec<BlockScaling>,
}

/// Error raised when an iterate has left the cone interior.
#[derive(Debug, Clone, Copy)]
pub(crate) struct NotInterior;

impl NtScaling {
    /// `W = I` on every block.
    pub fn identity(blocks: &[Block]) -> Self {
        let blocks = blocks
            .iter()
            .map(|b| match *b {
                Block::NonNeg { dim, .. } => BlockScaling::NonNeg(vec![1.0; dim]),
                Block::Soc { dim, .. } => {
                    let mut w = vec![0.0; dim];
                    w[0] = 1.0;
                    BlockScaling::Soc { eta: 1.0, w }
                }
            })
            .collect();
        NtScaling { blocks }
    }

    pub fn new(blocks: &[Block], s: &[f64], z: &[f64]) -> Result<Self, NotInterior> {
        let mut out = Vec::with_capacity(blocks.len());
        for b in blocks {
            let r = b.range();
            let (s, z) = (&s[r.clone()], &z[r.clone()]);
            match b {
                Block::NonNeg { .. } => {
                    let mut w = Vec::with_capacity(s.len());
                    for (si, zi) in s.iter().zip(z) {
                        if *si <= 0.0 || *zi <= 0.0 {
                            return Err(NotInterior);
                        }
                        w.push((si / zi).sqrt());
                    }
                    out.push(BlockScaling::NonNeg(w));
                }
                Block::Soc { .. } => {
                    let sres = soc_residual(s);
                    let zres = soc_residual(z);
                    if sres <= 0.0 || zres <= 0.0 || s[0] <= 0.0 || z[0] <= 0.0 {
                        return Err(NotInterior);
                    }
                    let snorm = sres.sqrt();
                    let znorm = zres.sqrt();
                    let sb: Vec<f64> = s.iter().map(|v| v / snorm).collect();
                    let zb: Vec<f64> = z.iter().map(|v| v / znorm).collect();
                    let gamma = ((1.0 + dot(&sb, &zb)) / 2.0).sqrt();
                    let mut w: Vec<f64> = Vec::with_capacity(s.len());
                    w.push((sb[0] + zb[0]) / (2.0 * gamma));
                    for i in 1..s.len() {
                        w.push((sb[i] - zb[i]) / (2.0 * gamma));
                    }
                    // renormalize against rounding so that wᵀJw = 1
                    let wn = norm2(&w[1..]);
                    w[0] = (1.0 + wn * wn).sqrt();
                    let eta = (sres / zres).sqrt().sqrt();
                    out.push(BlockScaling::Soc { eta, w });
                }
            }
        }
        Ok(NtScaling { blocks: out })
    }

    /// `out = W x`
    pub fn apply(&self, blocks: &[Block], x: &[f64], out: &mut [f64]) {
        self.apply_impl(blocks, x, out, false)
    }

    /// `out = W⁻¹ x`
    #[cfg(test)]
    pub fn apply_inv(&self, blocks: &[Block], x: &[f64], out: &mut [f64]) {
        self.apply_impl(blocks, x, out, true)
    }

    fn apply_impl(&self, blocks: &[Block], x: &[f64], out: &mut [f64], inverse: bool) {
        for (b, sc) in blocks.iter().zip(&self.blocks) {
            let r = b.range();
            let o = r.start;
            let x = &x[r];
            match sc {
                BlockScaling::NonNeg(w) => {
                    for i in 0..w.len() {
                        out[o + i] = if inverse { x[i] / w[i] } else { x[i] * w[i] };
                    }
                }
                BlockScaling::Soc { eta, w } => {
                    let sign = if inverse { -1.0 } else { 1.0 };
                    let k = if inverse { 1.0 / eta } else { *eta };
                    let w1x1 = dot(&w[1..], &x[1..]);
                    out[o] = k * (w[0] * x[0] + sign * w1x1);
                    let c = sign * x[0] + w1x1 / (1.0 + w[0]);
                    for i in 1..w.len() {
                        out[o + i] = k * (x[i] + c * w[i]);
                    }
                }
            }
        }
    }

    /// Dense `W²` of one block, row-major.
    pub fn block_squared(&self, k: usize) -> Vec<f64> {
        match &self.blocks[k] {
            BlockScaling::NonNeg(w) => {
                let d = w.len();
                let mut m = vec![0.0; d * d];
                for i in 0..d {
                    m[i * d + i] = w[i] * w[i];
                }
                m
            }
            BlockScaling::Soc { eta, w } => {
                // W² = eta² (2 w wᵀ − J)
                let d = w.len();
                let e2 = eta * eta;
                let mut m = vec![0.0; d * d];
                for i in 0..d {
                    for j in 0..d {
                        let mut v = 2.0 * w[i] * w[j];
                        if i == j {
                            v += if i == 0 { -1.0 } else { 1.0 };
                        }
                        m[i * d + j] = e2 * v;
                    }
                }
                m
            }
        }
    }
}

/// Largest `alpha` such that `lambda + alpha·delta` stays in the cone,
/// given `lambda` in the interior. Returns `f64::INFINITY` when unbounded.
pub(crate) fn max_step(blocks: &[Block], lambda: &[f64], delta: &[f64]) -> f64 {
    let mut alpha = f64::INFINITY;
    for b in blocks {
        let r = b.range();
        let (l, d) = (&lambda[r.clone()], &delta[r]);
        match b {
            Block::NonNeg { .. } => {
                for (li, di) in l.iter().zip(d) {
                    if *di < 0.0 {
                        alpha = alpha.min(-li / di);
                    }
                }
            }
            Block::Soc { .. } => {
                let lnorm = soc_residual(l).max(f64::MIN_POSITIVE).sqrt();
                let lb: Vec<f64> = l.iter().map(|v| v / lnorm).collect();
                let rho0 = (lb[0] * d[0] - dot(&lb[1..], &d[1..])) / lnorm;
                let factor = (rho0 + d[0] / lnorm) / (lb[0] + 1.0);
                let mut rho1_sq = 0.0;
                for i in 1..l.len() {
                    let v = d[i] / lnorm - factor * lb[i];
                    rho1_sq += v * v;
                }
                let sigma = rho1_sq.sqrt() - rho0;
                if sigma > 0.0 {
                    alpha = alpha.min(1.0 / sigma);
                }
            }
        }
    }
    alpha
}
