//! Riemannian gradient descent on the product manifold of node
//! displacements and unit node quaternions.
//!
//! The descent direction is minus the exact discrete gradient; quaternions
//! move by the metric-projection retraction `q <- (q + v)/|q + v|`; step
//! sizes come from a backtracking Armijo line search with warm restart.
//! Dirichlet nodes never move (their gradient entries are zero and the
//! update skips untouched nodes entirely, so their stored bits are
//! preserved).

use crate::algebra::{add3, retract, scale3};
use crate::energy::{gradient, total_energy, EnergyBreakdown, EnergyError, TangentField};
use crate::fields::GridState;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum OptimizeError {
    #[error(transparent)]
    Energy(#[from] EnergyError),
    #[error(transparent)]
    Algebra(#[from] crate::algebra::AlgebraError),
    #[error("invalid optimizer parameter: {0}")]
    InvalidParams(String),
}

/// Line-search and stopping knobs.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerParams {
    /// Maximum number of accepted descent steps.
    pub max_iters: usize,
    /// Convergence threshold on the `h^{3/2}`-scaled gradient norm.
    pub grad_tol: f64,
    /// Initial trial step.
    pub step0: f64,
    /// Armijo sufficient-decrease coefficient.
    pub armijo_c: f64,
    /// Step shrink factor per rejected trial.
    pub backtrack: f64,
    /// Trials per line search before giving up.
    pub max_backtracks: usize,
}

impl Default for OptimizerParams {
    fn default() -> Self {
        OptimizerParams {
            max_iters: 500,
            grad_tol: 1e-8,
            step0: 1.0,
            armijo_c: 1e-4,
            backtrack: 0.5,
            max_backtracks: 60,
        }
    }
}

impl OptimizerParams {
    pub fn validate(&self) -> Result<(), OptimizeError> {
        if !(self.grad_tol >= 0.0) || !self.grad_tol.is_finite() {
            return Err(OptimizeError::InvalidParams(format!(
                "grad_tol = {} must be finite and >= 0",
                self.grad_tol
            )));
        }
        if !(self.step0 > 0.0) || !self.step0.is_finite() {
            return Err(OptimizeError::InvalidParams(format!(
                "step0 = {} must be finite and > 0",
                self.step0
            )));
        }
        if !(self.armijo_c > 0.0 && self.armijo_c < 1.0) {
            return Err(OptimizeError::InvalidParams(format!(
                "armijo_c = {} must lie in (0, 1)",
                self.armijo_c
            )));
        }
        if !(self.backtrack > 0.0 && self.backtrack < 1.0) {
            return Err(OptimizeError::InvalidParams(format!(
                "backtrack = {} must lie in (0, 1)",
                self.backtrack
            )));
        }
        if self.max_backtracks == 0 {
            return Err(OptimizeError::InvalidParams(
                "max_backtracks must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// Why the descent loop stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    /// Scaled gradient norm fell below `grad_tol`.
    Converged,
    /// Budget of accepted steps exhausted.
    MaxIters,
    /// A line search ran out of backtracks.
    LineSearchFailed,
}

/// One iterate of the descent history.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct TraceRow {
    pub iter: usize,
    /// Total energy at this iterate.
    pub energy: f64,
    /// `h^{3/2}`-scaled l2 norm of the gradient at this iterate.
    pub grad_norm: f64,
    /// Accepted step length that produced this iterate (0 for the initial
    /// state).
    pub step: f64,
}

#[derive(Debug)]
pub struct MinimizeResult {
    pub state: GridState,
    pub trace: Vec<TraceRow>,
    pub reason: StopReason,
    pub final_energy: EnergyBreakdown,
}

fn inner(a: &TangentField, b: &TangentField) -> f64 {
    let mut acc = 0.0;
    for (x, y) in a.phi.iter().zip(&b.phi) {
        acc += x[0] * y[0] + x[1] * y[1] + x[2] * y[2];
    }
    for (x, y) in a.rot.iter().zip(&b.rot) {
        acc += x[0] * y[0] + x[1] * y[1] + x[2] * y[2] + x[3] * y[3];
    }
    acc
}

/// Move every touched node by `s` along `d`; nodes with an identically zero
/// direction (Dirichlet nodes in particular) are not rewritten, so their
/// bits never change.
fn apply_step(state: &GridState, d: &TangentField, s: f64) -> Result<GridState, OptimizeError> {
    let mut out = state.clone();
    for idx in state.grid.active_nodes() {
        let dp = d.phi[idx];
        if dp != [0.0; 3] {
            out.phi[idx] = add3(&state.phi[idx], &scale3(&dp, s));
        }
        let dr = d.rot[idx];
        if dr != [0.0; 4] {
            let v = [s * dr[0], s * dr[1], s * dr[2], s * dr[3]];
            out.quat[idx] = retract(&state.quat[idx], &v)?;
        }
    }
    Ok(out)
}

/// Successful line-search outcome.
pub struct LineSearchOutcome {
    pub state: GridState,
    pub energy: EnergyBreakdown,
    pub step: f64,
    /// Energy evaluations spent.
    pub evals: usize,
}

/// Backtracking Armijo search along `direction` from `state`.
///
/// Accepts the first trial step with
/// `E(new) <= E(old) + armijo_c * step * <grad, direction>`; returns `None`
/// if `max_backtracks` trials all fail. A zero direction is accepted
/// immediately (the condition holds with equality). An ascent direction
/// (`<grad, direction> > 0`) fails outright: sufficient decrease is
/// unachievable in exact arithmetic, and shrinking the step until the
/// energy difference underflows must not count as success.
pub fn line_search(
    state: &GridState,
    c: &crate::algebra::MaterialParams,
    loads: &crate::energy::LoadSpec,
    grad: &TangentField,
    direction: &TangentField,
    energy0: f64,
    start_step: f64,
    params: &OptimizerParams,
) -> Result<Option<LineSearchOutcome>, OptimizeError> {
    params.validate()?;
    let slope = inner(grad, direction);
    if slope > 0.0 {
        return Ok(None);
    }
    let mut step = start_step;
    for trial in 0..params.max_backtracks {
        let candidate = apply_step(state, direction, step)?;
        let energy = total_energy(&candidate, c, loads)?;
        if energy.total <= energy0 + params.armijo_c * step * slope {
            return Ok(Some(LineSearchOutcome {
                state: candidate,
                energy,
                step,
                evals: trial + 1,
            }));
        }
        step *= params.backtrack;
    }
    Ok(None)
}

/// Gradient descent until the scaled gradient norm drops below `grad_tol`,
/// the step budget runs out, or a line search fails. The energy trace is
/// strictly monotone decreasing over accepted steps by construction.
pub fn minimize(
    state: &GridState,
    c: &crate::algebra::MaterialParams,
    loads: &crate::energy::LoadSpec,
    params: &OptimizerParams,
) -> Result<MinimizeResult, OptimizeError> {
    params.validate()?;
    let mut current = state.clone();
    let mut energy = total_energy(&current, c, loads)?;
    let norm_scale = current.grid.h().powf(1.5);
    let mut trace = Vec::with_capacity(params.max_iters.min(1_000_000) + 1);
    let mut last_step = 0.0f64;
    let mut steps_taken = 0usize;

    let reason = loop {
        let grad = gradient(&current, c, loads)?;
        let grad_norm = norm_scale * grad.norm_sq().sqrt();
        trace.push(TraceRow {
            iter: steps_taken,
            energy: energy.total,
            grad_norm,
            step: last_step,
        });
        if grad_norm <= params.grad_tol {
            break StopReason::Converged;
        }
        if steps_taken >= params.max_iters {
            break StopReason::MaxIters;
        }
        let direction = grad.negated();
        let start_step = if steps_taken == 0 {
            params.step0
        } else {
            (last_step / params.backtrack).min(params.step0)
        };
        match line_search(
            &current,
            c,
            loads,
            &grad,
            &direction,
            energy.total,
            start_step,
            params,
        )? {
            Some(outcome) => {
                current = outcome.state;
                energy = outcome.energy;
                last_step = outcome.step;
                steps_taken += 1;
            }
            None => break StopReason::LineSearchFailed,
        }
    };

    Ok(MinimizeResult {
        state: current,
        trace,
        reason,
        final_energy: energy,
    })
}
