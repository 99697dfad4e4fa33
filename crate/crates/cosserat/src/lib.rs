//! Numerical laboratory for a geometrically nonlinear micropolar (Cosserat)
//! continuum. A configuration couples a deformation `phi: Omega -> R^3` with
//! an independent microrotation field `R: Omega -> SO(3)`, and the energy
//!
//! ```text
//! J(phi, R) = Int  |P(R^t Dphi - I)|^2  +  |DR|^p  +  phi . f  +  <R, M>  dx
//! ```
//!
//! weighs the strain `R^t Dphi - I` through the material map `P` and the
//! rotation gradient through a p-Dirichlet term. The crate discretizes such
//! configurations on cubic lattices over box and ball domains (optionally
//! punctured at the origin), evaluates energies, exact discrete gradients and
//! Euler-Lagrange residuals, minimizes by Riemannian descent on R^3 x S^3,
//! and ships the analytic reference fields and coefficient scans used to
//! probe the known singular configuration and the nonexistence window of the
//! associated tangent-map problem.

pub mod algebra;
pub mod analysis;
pub mod cli;
pub mod energy;
pub mod fields;
pub mod optimize;
