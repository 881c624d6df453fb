//! Solver contracts used by the controllers: a dense convex QP for the online
//! problems and a barrier-method SDP for offline synthesis.

pub mod kkt;
pub mod lmi;
pub mod qp;

pub use kkt::{kkt_residuals, KktResiduals};
pub use lmi::{
    solve_lmi, AffineMatrix, DecisionVars, LmiConstraint, LmiObjective, LmiProblem, LmiSettings, LmiSolution,
    MatrixVar,
};
pub use qp::{solve_qp, QpSettings, QpSolution, QpStatus, QuadraticProgram};
