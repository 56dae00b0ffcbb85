//! Martingale optimal transport with a general reference measure `q`.
//!
//! The crate computes, on finitely supported measures:
//!
//! * the primal value `P^q(mu, nu) = sup over martingale transports of
//!   the integrated maximal covariance against `q`, as one exact LP
//!   ([`solver::solve_primal_lp`]);
//! * the convex dual `D^q(mu, nu)` over convex potentials living on the
//!   support of `nu`, by subgradient descent ([`solver::solve_dual`]);
//! * `q`-Bass martingales `(v_hat, alpha_hat)` generated by smooth strictly
//!   convex functions, their verification and simulation, and an
//!   experimental fixed-point solver for the inverse problem ([`bass`]).
//!
//! Supporting layers: discrete measures with convex-order and
//! irreducibility predicates ([`measures`]), a convex-function calculus
//! with exact one-dimensional conjugation ([`convexfn`]), optimal
//! couplings and Brenier maps ([`ot`]), and in-repo LP solvers ([`lp`]).
//!
//! Every operation is a pure function of its inputs and all public values
//! are immutable after construction, so they are safe to share across
//! threads; solver-internal mutable state is confined to one invocation.

pub mod bass;
pub mod convexfn;
pub mod geom;
pub mod lp;
pub mod measures;
pub mod ot;
pub mod quantize;
pub mod solver;

pub use convexfn::ConvexFunction;
pub use measures::DiscreteMeasure;
pub use ot::Coupling;
pub use solver::{DualPotential, MartingaleKernel};
