//! Bilevel estimation of partially linear dynamical systems.
//!
//! Linear coefficients `p` are eliminated by a convex inner solve; the
//! nonlinear parameters `phi` are fitted by a trust-region outer loop whose
//! gradient and curvature come from implicit differentiation of the inner
//! optimality conditions.

pub mod benchmarks;
pub mod design;
pub mod discovery;
pub mod dual;
pub mod error;
pub mod expr;
pub mod implicit;
pub mod inner;
pub mod interp;
pub mod outer;
pub mod problem;

pub use design::{DesignDerivative, DesignJacobian, IntegratedDesign, Workspace};
pub use dual::{Dual, Scalar};
pub use error::{Error, Result};
pub use expr::{EvalPoint, Expr};
pub use implicit::{kkt_jvp, KktJvpResult};
pub use inner::{solve_inner, InnerSolution, KktResidual, KktTangent};
pub use interp::{cumulative_quadrature, fit_interpolants, CubicSpline, InterpolantSet, QuadratureGrid};
pub use outer::{optimize_outer, outer_eval, outer_objective, HessianMode, OuterEvaluation, OuterOptions};
pub use problem::{
    validate_problem, BasisField, ConstraintSet, ConvergenceFlag, ModelStructure, ParameterEstimate, Problem,
    Trajectory,
};
pub use benchmarks::{make_problem, simulate_model, validate_estimate, BenchmarkName, ProblemSpec, ValidationReport};
pub use discovery::{
    build_discovery_problem, stlsq_discover, term_index, DiscoveryConfig, DiscoveryOutcome, DiscoveryState, DiscoveryStatus,
    LibrarySpec,
};
