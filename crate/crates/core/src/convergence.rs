//! Stopping rule shared by the exact and tensor backends.

use serde::{Deserialize, Serialize};

use crate::linalg::{trace_distance, CMatrix};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub sweeps_run: usize,
    pub converged: bool,
    /// Residual between the last two sweeps.
    pub final_residual: f64,
    pub residual_history: Vec<f64>,
    /// Stopped early because the residual stopped improving.
    #[serde(default)]
    pub stalled: bool,
}

/// The pair of sites whose reduced state enters the residual.
pub fn central_pair(n_sites: usize) -> (usize, usize) {
    let c = (n_sites / 2).max(1);
    (c - 1, c)
}

/// What the stopping rule looks at after each sweep.
#[derive(Clone, Debug)]
pub struct Snapshot {
    pub profile: Vec<f64>,
    pub central_rdm: CMatrix,
}

impl Snapshot {
    /// `max_i |Δn_i|` plus the trace distance of the central two-site states.
    pub fn residual(&self, previous: &Snapshot) -> f64 {
        let dn = self
            .profile
            .iter()
            .zip(&previous.profile)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        dn + trace_distance(&self.central_rdm, &previous.central_rdm)
    }
}

/// Drives `step` until the residual drops below `tol` or `max_sweeps` is hit.
/// With a `stall_window`, also gives up once the best residual has not
/// improved for that many sweeps (a truncated evolution can settle into a
/// cycle above `tol`).
pub(crate) fn iterate_until_stationary<E>(
    tol: f64,
    max_sweeps: usize,
    stall_window: Option<usize>,
    initial: Snapshot,
    mut step: impl FnMut() -> Result<Snapshot, E>,
) -> Result<ConvergenceReport, E> {
    let mut report = ConvergenceReport {
        final_residual: f64::INFINITY,
        ..Default::default()
    };
    let mut previous = initial;
    let (mut best, mut best_at) = (f64::INFINITY, 0);
    while report.sweeps_run < max_sweeps {
        let next = step()?;
        report.sweeps_run += 1;
        let r = next.residual(&previous);
        report.residual_history.push(r);
        report.final_residual = r;
        previous = next;
        if r < tol {
            report.converged = true;
            break;
        }
        if r < best {
            (best, best_at) = (r, report.sweeps_run);
        } else if stall_window.is_some_and(|w| report.sweeps_run - best_at >= w) {
            report.stalled = true;
            break;
        }
    }
    Ok(report)
}
