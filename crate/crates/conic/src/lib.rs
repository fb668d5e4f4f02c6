//! Second-order cone programming: a sparse problem builder and an embedded
//! interior-point solver.
//!
//! ```
//! use laptime_conic::{solve, LinExpr, ProgramBuilder, SolveStatus, SolverSettings};
//!
//! // minimize t subject to ‖(3, 4)‖ ≤ t
//! let mut b = ProgramBuilder::new(1);
//! b.add_cost(0, 1.0);
//! b.add_soc(LinExpr::var(0), &[LinExpr::constant(3.0), LinExpr::constant(4.0)]);
//! let sol = solve(&b.finalize().unwrap(), &SolverSettings::default());
//! assert_eq!(sol.status, SolveStatus::Optimal);
//! assert!((sol.x[0] - 5.0).abs() < 1e-7);
//! ```

mod cones;
mod equilibrate;
mod ipm;
mod kkt;
mod ldl;
mod program;
mod sparse;

pub use ipm::{solve, ConicSolution, Residuals, SolveStatus, SolverSettings};
pub use program::{BuildError, ConeKind, ConicProgram, LinExpr, ParseProgramError, PointResiduals, ProgramBuilder};
pub use sparse::CscMatrix;
