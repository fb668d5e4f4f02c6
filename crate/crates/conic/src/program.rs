//! Problem representation and builder.
//!
//! A program has the form
//!
//! ```text
//! minimize    c^T x
//! subject to  A x = b
//!             h - G x ∈ K = K_1 × ... × K_q
//! ```
//!
//! where each `K_i` is a zero cone, a nonnegative orthant or a second-order
//! cone `{(t, u) : ‖u‖₂ ≤ t}`.

use crate::sparse::{norm2, CscMatrix};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ConeKind {
    Zero(usize),
    Nonnegative(usize),
    /// Second-order cone; the first entry is the scalar bound.
    SecondOrder(usize),
}

impl ConeKind {
    pub fn dim(&self) -> usize {
        match *self {
            ConeKind::Zero(d) | ConeKind::Nonnegative(d) | ConeKind::SecondOrder(d) => d,
        }
    }

    fn validate(&self) -> Result<(), BuildError> {
        match *self {
            ConeKind::SecondOrder(d) if d < 2 => Err(BuildError::SocTooSmall(d)),
            k if k.dim() == 0 => Err(BuildError::EmptyCone),
            _ => Ok(()),
        }
    }

    /// Distance of `u` outside the cone (0 when inside).
    pub fn violation(&self, u: &[f64]) -> f64 {
        match self {
            ConeKind::Zero(_) => u.iter().fold(0.0f64, |m, v| m.max(v.abs())),
            ConeKind::Nonnegative(_) => u.iter().fold(0.0f64, |m, v| m.max(-v)),
            ConeKind::SecondOrder(_) => (norm2(&u[1..]) - u[0]).max(0.0),
        }
    }
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum BuildError {
    #[error("variable index {index} out of range (num_vars = {num_vars})")]
    IndexOutOfRange { index: usize, num_vars: usize },
    #[error("second-order cone of dimension {0} (must be at least 2)")]
    SocTooSmall(usize),
    #[error("cone of dimension 0")]
    EmptyCone,
    #[error("cone expects {expected} rows but {got} were given")]
    ConeRowMismatch { expected: usize, got: usize },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
}

/// Affine expression `constant + Σ coef·x[index]`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LinExpr {
    pub terms: Vec<(usize, f64)>,
    pub constant: f64,
}

impl LinExpr {
    pub fn constant(c: f64) -> Self {
        LinExpr {
            terms: Vec::new(),
            constant: c,
        }
    }

    pub fn var(index: usize) -> Self {
        Self::term(index, 1.0)
    }

    pub fn term(index: usize, coef: f64) -> Self {
        LinExpr {
            terms: vec![(index, coef)],
            constant: 0.0,
        }
    }

    pub fn add_term(mut self, index: usize, coef: f64) -> Self {
        self.terms.push((index, coef));
        self
    }

    pub fn add_const(mut self, c: f64) -> Self {
        self.constant += c;
        self
    }

    pub fn scaled(mut self, k: f64) -> Self {
        for t in &mut self.terms {
            t.1 *= k;
        }
        self.constant *= k;
        self
    }

    pub fn plus(mut self, other: &LinExpr) -> Self {
        self.terms.extend_from_slice(&other.terms);
        self.constant += other.constant;
        self
    }

    pub fn minus(self, other: &LinExpr) -> Self {
        self.plus(&other.clone().scaled(-1.0))
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.constant + self.terms.iter().map(|&(j, a)| a * x[j]).sum::<f64>()
    }
}

/// A finalized cone program. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct ConicProgram {
    pub num_vars: usize,
    pub c: Vec<f64>,
    pub a: CscMatrix,
    pub b: Vec<f64>,
    pub g: CscMatrix,
    pub h: Vec<f64>,
    pub cones: Vec<ConeKind>,
}

/// Violations of a candidate point, see [`ConicProgram::residuals`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointResiduals {
    /// Max-norm of `A x - b`.
    pub eq_violation: f64,
    /// Worst distance of `h - G x` outside its cone.
    pub cone_violation: f64,
}

impl ConicProgram {
    /// Assembles a program from its parts, checking all invariants.
    pub fn from_parts(
        c: Vec<f64>,
        a: CscMatrix,
        b: Vec<f64>,
        g: CscMatrix,
        h: Vec<f64>,
        cones: Vec<ConeKind>,
    ) -> Result<Self, BuildError> {
        let n = c.len();
        if a.ncols != n || g.ncols != n {
            return Err(BuildError::DimensionMismatch(format!(
                "c has {} entries but A has {} and G has {} columns",
                n, a.ncols, g.ncols
            )));
        }
        if a.nrows != b.len() {
            return Err(BuildError::DimensionMismatch(format!(
                "A has {} rows but b has {} entries",
                a.nrows,
                b.len()
            )));
        }
        if g.nrows != h.len() {
            return Err(BuildError::DimensionMismatch(format!(
                "G has {} rows but h has {} entries",
                g.nrows,
                h.len()
            )));
        }
        for k in &cones {
            k.validate()?;
        }
        let cone_rows: usize = cones.iter().map(|k| k.dim()).sum();
        if cone_rows != h.len() {
            return Err(BuildError::DimensionMismatch(format!(
                "cones cover {} rows but h has {} entries",
                cone_rows,
                h.len()
            )));
        }
        if !c.iter().all(|v| v.is_finite()) {
            return Err(BuildError::NonFinite("c"));
        }
        if !b.iter().all(|v| v.is_finite()) || !a.all_finite() {
            return Err(BuildError::NonFinite("A, b"));
        }
        if !h.iter().all(|v| v.is_finite()) || !g.all_finite() {
            return Err(BuildError::NonFinite("G, h"));
        }
        Ok(ConicProgram {
            num_vars: n,
            c,
            a,
            b,
            g,
            h,
            cones,
        })
    }

    pub fn num_eq(&self) -> usize {
        self.b.len()
    }

    pub fn num_cone_rows(&self) -> usize {
        self.h.len()
    }

    pub fn objective(&self, x: &[f64]) -> f64 {
        crate::sparse::dot(&self.c, x)
    }

    /// Equality and cone violations of a candidate point.
    pub fn residuals(&self, x: &[f64]) -> PointResiduals {
        assert_eq!(x.len(), self.num_vars, "candidate length must equal num_vars");
        let mut ax = self.a.mul_vec(x);
        for (r, bi) in ax.iter_mut().zip(&self.b) {
            *r -= bi;
        }
        let eq_violation = crate::sparse::norm_inf(&ax);
        let mut s = self.h.clone();
        self.g.gemv(-1.0, x, &mut s);
        let mut offset = 0;
        let mut cone_violation = 0.0f64;
        for k in &self.cones {
            let d = k.dim();
            cone_violation = cone_violation.max(k.violation(&s[offset..offset + d]));
            offset += d;
        }
        PointResiduals {
            eq_violation,
            cone_violation,
        }
    }

    /// Serializes the program to the plain-text triplet format.
    ///
    /// ```text
    /// conic-program v1
    /// vars <n> eqs <p> cone_rows <m> cones <q>
    /// c <j> <value>
    /// A <i> <j> <value>
    /// b <i> <value>
    /// cone <zero|nonneg|soc> <dim>
    /// G <i> <j> <value>
    /// h <i> <value>
    /// ```
    ///
    /// Only nonzero `c`, `b` and `h` entries are written. Floats use the
    /// shortest representation that parses back to the same value.
    pub fn to_text(&self) -> String {
        use std::fmt::Write;
        let mut out = String::new();
        writeln!(out, "conic-program v1").unwrap();
        writeln!(
            out,
            "vars {} eqs {} cone_rows {} cones {}",
            self.num_vars,
            self.num_eq(),
            self.num_cone_rows(),
            self.cones.len()
        )
        .unwrap();
        for (j, v) in self.c.iter().enumerate().filter(|(_, v)| **v != 0.0) {
            writeln!(out, "c {j} {v:?}").unwrap();
        }
        for (i, j, v) in self.a.triplets() {
            writeln!(out, "A {i} {j} {v:?}").unwrap();
        }
        for (i, v) in self.b.iter().enumerate().filter(|(_, v)| **v != 0.0) {
            writeln!(out, "b {i} {v:?}").unwrap();
        }
        for k in &self.cones {
            let (name, d) = match *k {
                ConeKind::Zero(d) => ("zero", d),
                ConeKind::Nonnegative(d) => ("nonneg", d),
                ConeKind::SecondOrder(d) => ("soc", d),
            };
            writeln!(out, "cone {name} {d}").unwrap();
        }
        for (i, j, v) in self.g.triplets() {
            writeln!(out, "G {i} {j} {v:?}").unwrap();
        }
        for (i, v) in self.h.iter().enumerate().filter(|(_, v)| **v != 0.0) {
            writeln!(out, "h {i} {v:?}").unwrap();
        }
        out
    }

    /// Parses the format written by [`ConicProgram::to_text`].
    pub fn from_text(text: &str) -> Result<Self, ParseProgramError> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| {
            let t = l.trim();
            !t.is_empty() && !t.starts_with('#')
        });
        let bad = |line: usize, msg: &str| ParseProgramError {
            line: line + 1,
            message: msg.to_string(),
        };
        match lines.next() {
            Some((_, l)) if l.trim() == "conic-program v1" => {}
            Some((i, _)) => return Err(bad(i, "expected header 'conic-program v1'")),
            None => return Err(bad(0, "empty input")),
        }
        let (hi, header) = lines.next().ok_or_else(|| bad(1, "missing size line"))?;
        let f: Vec<&str> = header.split_whitespace().collect();
        if f.len() != 8 || f[0] != "vars" || f[2] != "eqs" || f[4] != "cone_rows" || f[6] != "cones" {
            return Err(bad(hi, "malformed size line"));
        }
        let num = |s: &str| s.parse::<usize>().map_err(|_| bad(hi, "bad integer"));
        let (n, p, m, q) = (num(f[1])?, num(f[3])?, num(f[5])?, num(f[7])?);

        let mut c = vec![0.0; n];
        let mut b = vec![0.0; p];
        let mut h = vec![0.0; m];
        let mut at = Vec::new();
        let mut gt = Vec::new();
        let mut cones = Vec::with_capacity(q);
        for (i, line) in lines {
            let f: Vec<&str> = line.split_whitespace().collect();
            let idx = |s: &str, bound: usize| -> Result<usize, ParseProgramError> {
                let v = s.parse::<usize>().map_err(|_| bad(i, "bad index"))?;
                if v >= bound {
                    return Err(bad(i, "index out of range"));
                }
                Ok(v)
            };
            let val = |s: &str| s.parse::<f64>().map_err(|_| bad(i, "bad number"));
            match (f.first().copied(), f.len()) {
                (Some("c"), 3) => c[idx(f[1], n)?] = val(f[2])?,
                (Some("b"), 3) => b[idx(f[1], p)?] = val(f[2])?,
                (Some("h"), 3) => h[idx(f[1], m)?] = val(f[2])?,
                (Some("A"), 4) => at.push((idx(f[1], p)?, idx(f[2], n)?, val(f[3])?)),
                (Some("G"), 4) => gt.push((idx(f[1], m)?, idx(f[2], n)?, val(f[3])?)),
                (Some("cone"), 3) => {
                    let d = f[2].parse::<usize>().map_err(|_| bad(i, "bad cone dimension"))?;
                    cones.push(match f[1] {
                        "zero" => ConeKind::Zero(d),
                        "nonneg" => ConeKind::Nonnegative(d),
                        "soc" => ConeKind::SecondOrder(d),
                        _ => return Err(bad(i, "unknown cone kind")),
                    });
                }
                _ => return Err(bad(i, "unrecognized line")),
            }
        }
        if cones.len() != q {
            return Err(bad(0, "cone count does not match header"));
        }
        let a = CscMatrix::from_triplets(p, n, &at);
        let g = CscMatrix::from_triplets(m, n, &gt);
        ConicProgram::from_parts(c, a, b, g, h, cones).map_err(|e| bad(0, &e.to_string()))
    }
}

#[derive(Debug, Error, PartialEq)]
#[error("line {line}: {message}")]
pub struct ParseProgramError {
    pub line: usize,
    pub message: String,
}

/// Incremental construction of a [`ConicProgram`].
#[derive(Debug, Clone)]
pub struct ProgramBuilder {
    num_vars: usize,
    c: Vec<f64>,
    a_trip: Vec<(usize, usize, f64)>,
    b: Vec<f64>,
    g_trip: Vec<(usize, usize, f64)>,
    h: Vec<f64>,
    cones: Vec<ConeKind>,
    error: Option<BuildError>,
}

impl ProgramBuilder {
    pub fn new(num_vars: usize) -> Self {
        ProgramBuilder {
            num_vars,
            c: vec![0.0; num_vars],
            a_trip: Vec::new(),
            b: Vec::new(),
            g_trip: Vec::new(),
            h: Vec::new(),
            cones: Vec::new(),
            error: None,
        }
    }

    pub fn num_vars(&self) -> usize {
        self.num_vars
    }

    fn check_index(&mut self, j: usize) -> bool {
        if j >= self.num_vars {
            if self.error.is_none() {
                self.error = Some(BuildError::IndexOutOfRange {
                    index: j,
                    num_vars: self.num_vars,
                });
            }
            false
        } else {
            true
        }
    }

    /// Adds `coef` to the cost of variable `j`.
    pub fn add_cost(&mut self, j: usize, coef: f64) -> &mut Self {
        if self.check_index(j) {
            self.c[j] += coef;
        }
        self
    }

    /// Adds the equality `expr = 0`.
    pub fn add_equality(&mut self, expr: &LinExpr) -> &mut Self {
        let row = self.b.len();
        for &(j, a) in &expr.terms {
            if self.check_index(j) {
                self.a_trip.push((row, j, a));
            }
        }
        self.b.push(-expr.constant);
        self
    }

    /// Adds the constraint `(rows[0], ..., rows[d-1]) ∈ kind` where each
    /// entry is an affine expression in the variables.
    pub fn add_cone(&mut self, kind: ConeKind, rows: &[LinExpr]) -> &mut Self {
        if let Err(e) = kind.validate() {
            self.error.get_or_insert(e);
            return self;
        }
        if rows.len() != kind.dim() {
            self.error.get_or_insert(BuildError::ConeRowMismatch {
                expected: kind.dim(),
                got: rows.len(),
            });
            return self;
        }
        for expr in rows {
            let row = self.h.len();
            for &(j, a) in &expr.terms {
                if self.check_index(j) {
                    self.g_trip.push((row, j, -a));
                }
            }
            self.h.push(expr.constant);
        }
        self.cones.push(kind);
        self
    }

    /// Adds `expr >= 0`.
    pub fn add_nonneg(&mut self, expr: LinExpr) -> &mut Self {
        self.add_cone(ConeKind::Nonnegative(1), &[expr])
    }

    /// Adds `‖rest‖₂ ≤ bound`.
    pub fn add_soc(&mut self, bound: LinExpr, rest: &[LinExpr]) -> &mut Self {
        let mut rows = Vec::with_capacity(rest.len() + 1);
        rows.push(bound);
        rows.extend_from_slice(rest);
        self.add_cone(ConeKind::SecondOrder(rows.len()), &rows)
    }

    /// Adds the rotated cone `x·y ≥ ‖z‖²`, `x, y ≥ 0`, encoded as
    /// `‖(2z, x − y)‖ ≤ x + y`.
    pub fn add_rotated_soc(&mut self, x: &LinExpr, y: &LinExpr, z: &[LinExpr]) -> &mut Self {
        let bound = x.clone().plus(y);
        let mut rest: Vec<LinExpr> = z.iter().map(|e| e.clone().scaled(2.0)).collect();
        rest.push(x.clone().minus(y));
        self.add_soc(bound, &rest)
    }

    /// Validates and freezes the program.
    pub fn finalize(self) -> Result<ConicProgram, BuildError> {
        if let Some(e) = self.error {
            return Err(e);
        }
        let p = self.b.len();
        let m = self.h.len();
        let a = CscMatrix::from_triplets(p, self.num_vars, &self.a_trip);
        let g = CscMatrix::from_triplets(m, self.num_vars, &self.g_trip);
        ConicProgram::from_parts(self.c, a, self.b, g, self.h, self.cones)
    }
}
