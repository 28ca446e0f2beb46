//! Single runs, time series and grid scans.

use std::time::Instant;

use qca_core::classical::{build_mpa, classify_phase, mpa_profile};
use qca_core::correlations::{
    central_site, half_system_negativity, max_two_site_coherence, max_two_site_lqu,
    ppt_moments_dense, Bipartition, CorrelationRecord, TwoSiteStates,
};
use qca_core::tensor::{half_system_ppt_moments, SweepDiagnostics};
use qca_core::{
    evolve_mpo_to_ness, evolve_to_ness, ConvergenceReport, DensityMatrixState, ModelParams,
    MpoState,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{Backend, ExperimentConfig, Observable};
use crate::error::{HarnessError, Result};

/// Everything measured at one parameter point.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    pub config: ExperimentConfig,
    /// The point actually evaluated (differs from `config.params` in scans).
    pub params: ModelParams,
    pub profile: Vec<f64>,
    pub mean_density: Option<f64>,
    pub correlations: CorrelationRecord,
    pub convergence: ConvergenceReport,
    pub bond_dims: Vec<usize>,
    pub diagnostics: Vec<SweepDiagnostics>,
    /// Infinite-size classical phase of `(α, β, τ)`.
    pub phase: String,
    pub wall_time_s: f64,
    pub error: Option<String>,
}

impl RunRecord {
    fn new(config: &ExperimentConfig, params: ModelParams, run_id: &str) -> Self {
        Self {
            run_id: run_id.to_owned(),
            config: config.clone(),
            params,
            profile: Vec::new(),
            mean_density: None,
            correlations: CorrelationRecord::default(),
            convergence: ConvergenceReport::default(),
            bond_dims: Vec::new(),
            diagnostics: Vec::new(),
            phase: classify_phase(params.alpha, params.beta, params.tau).to_string(),
            wall_time_s: 0.0,
            error: None,
        }
    }

    pub fn max_bond_dim(&self) -> Option<usize> {
        self.bond_dims.iter().copied().max()
    }

    /// Converged and free of errors.
    pub fn is_usable(&self) -> bool {
        self.error.is_none() && self.convergence.converged
    }
}

fn two_site_measures(
    state: &impl TwoSiteStates,
    config: &ExperimentConfig,
    out: &mut CorrelationRecord,
) -> Result<()> {
    let center = central_site(state.n_sites());
    if config.wants(Observable::Lqu) {
        let (v, j) = max_two_site_lqu(state, center, config.lqu_side.into())?;
        out.lqu_max = Some(v);
        out.lqu_argmax_site = Some(j);
    }
    if config.wants(Observable::Coherence) {
        let (v, j) = max_two_site_coherence(state, center)?;
        out.coherence_max = Some(v);
        out.coherence_argmax_site = Some(j);
    }
    Ok(())
}

fn exact_correlations(state: &DensityMatrixState, config: &ExperimentConfig) -> Result<CorrelationRecord> {
    let mut out = CorrelationRecord::default();
    if config.wants(Observable::Negativity) {
        out.negativity = Some(half_system_negativity(state)?);
    }
    if config.wants(Observable::Ppt) {
        let bip = Bipartition::half(state.n_sites())?;
        out.ppt_ratio = Some(ppt_moments_dense(&state.to_matrix(), &bip)?.ratio());
    }
    two_site_measures(state, config, &mut out)?;
    Ok(out)
}

fn mpo_correlations(state: &MpoState, config: &ExperimentConfig) -> Result<CorrelationRecord> {
    let mut out = CorrelationRecord::default();
    if config.wants(Observable::Negativity) {
        out.negativity = Some(half_system_negativity(&state.to_dense()?)?);
    }
    if config.wants(Observable::Ppt) {
        out.ppt_ratio = Some(half_system_ppt_moments(state)?.ratio());
    }
    two_site_measures(state, config, &mut out)?;
    Ok(out)
}

fn fill(record: &mut RunRecord, config: &ExperimentConfig) -> Result<()> {
    let params = record.params;
    let n = params.n_sites;
    match config.backend {
        Backend::Exact => {
            let init = DensityMatrixState::init(n, &config.initial)?;
            let (state, report) = evolve_to_ness(init, &params, config.tol, config.max_sweeps)?;
            record.convergence = report;
            record.profile = state.density_profile();
            record.correlations = exact_correlations(&state, config)?;
        }
        Backend::Mpo => {
            let init = MpoState::from_product(n, &config.initial, config.policy)?;
            let (state, report) = evolve_mpo_to_ness(init, &params, config.tol, config.max_sweeps)?;
            record.convergence = report;
            record.profile = state.density_profile();
            record.bond_dims = state.bond_dims();
            record.diagnostics = state.diagnostics().to_vec();
            record.correlations = mpo_correlations(&state, config)?;
        }
        Backend::ClassicalMpa => {
            let mpa = build_mpa(params.alpha, params.beta, params.tau, config.mpa_chi)?;
            record.profile = mpa_profile(&mpa, n)?;
            record.convergence = ConvergenceReport {
                converged: true,
                final_residual: 0.0,
                ..Default::default()
            };
        }
    }
    record.mean_density = Some(record.profile.iter().sum::<f64>() / n as f64);
    Ok(())
}

/// Evolves one point and measures the requested observables. Failures of
/// the evolution end up in `error`, not in the return value.
pub fn evaluate_point(config: &ExperimentConfig, params: ModelParams, run_id: &str) -> RunRecord {
    let start = Instant::now();
    let mut record = RunRecord::new(config, params, run_id);
    if let Err(e) = fill(&mut record, config) {
        log::warn!(
            "point (N = {}, alpha = {}, beta = {}) failed: {e}",
            params.n_sites,
            params.alpha,
            params.beta
        );
        record.error = Some(e.to_string());
    }
    if !record.convergence.converged && record.error.is_none() {
        log::warn!(
            "point (N = {}, alpha = {}, beta = {}) stopped after {} sweeps at residual {:.3e}",
            params.n_sites,
            params.alpha,
            params.beta,
            record.convergence.sweeps_run,
            record.convergence.final_residual
        );
    }
    record.wall_time_s = start.elapsed().as_secs_f64();
    record
}

pub fn run_single(config: &ExperimentConfig) -> Result<RunRecord> {
    config.validate()?;
    Ok(evaluate_point(config, config.params, &config.run_id()))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ScanResult {
    pub run_id: String,
    pub config: ExperimentConfig,
    /// Ordered by `(α, β)`.
    pub records: Vec<RunRecord>,
    pub wall_time_s: f64,
}

/// Every grid point, evaluated in parallel; results come back in grid order.
pub fn run_scan(config: &ExperimentConfig) -> Result<ScanResult> {
    config.validate()?;
    let grid = config
        .grid
        .ok_or_else(|| HarnessError::Config("a scan needs a grid".into()))?;
    let run_id = config.run_id();
    let start = Instant::now();
    let records = grid
        .points()
        .into_par_iter()
        .map(|(alpha, beta)| {
            let params = ModelParams {
                alpha,
                beta,
                ..config.params
            };
            evaluate_point(config, params, &run_id)
        })
        .collect();
    Ok(ScanResult {
        run_id,
        config: config.clone(),
        records,
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeseriesRow {
    pub sweep: usize,
    pub negativity: Option<f64>,
    pub lqu_max: Option<f64>,
    pub coherence_max: Option<f64>,
}

impl TimeseriesRow {
    fn from_record(sweep: usize, c: CorrelationRecord) -> Self {
        Self {
            sweep,
            negativity: c.negativity,
            lqu_max: c.lqu_max,
            coherence_max: c.coherence_max,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Timeseries {
    pub run_id: String,
    pub config: ExperimentConfig,
    /// Sweep 0 is the initial state.
    pub rows: Vec<TimeseriesRow>,
    pub wall_time_s: f64,
}

/// Correlations after each of `config.steps` sweeps from the initial state.
pub fn run_timeseries(config: &ExperimentConfig) -> Result<Timeseries> {
    config.validate()?;
    let start = Instant::now();
    let params = config.params;
    let n = params.n_sites;
    let mut rows = Vec::with_capacity(config.steps + 1);
    match config.backend {
        Backend::Exact => {
            let channels = qca_core::model::SweepChannels::new(&params)?;
            let mut state = DensityMatrixState::init(n, &config.initial)?;
            rows.push(TimeseriesRow::from_record(0, exact_correlations(&state, config)?));
            for sweep in 1..=config.steps {
                state.sweep(&channels)?;
                rows.push(TimeseriesRow::from_record(sweep, exact_correlations(&state, config)?));
            }
        }
        Backend::Mpo => {
            let channels = qca_core::model::SweepChannels::new(&params)?;
            let mut state = MpoState::from_product(n, &config.initial, config.policy)?;
            rows.push(TimeseriesRow::from_record(0, mpo_correlations(&state, config)?));
            for sweep in 1..=config.steps {
                state.sweep(&channels)?;
                rows.push(TimeseriesRow::from_record(sweep, mpo_correlations(&state, config)?));
            }
        }
        Backend::ClassicalMpa => {
            return Err(HarnessError::Config(
                "time series need the exact or mpo backend".into(),
            ))
        }
    }
    Ok(Timeseries {
        run_id: config.run_id(),
        config: config.clone(),
        rows,
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}

/// Number of sweeps during which `values` stays above half its maximum,
/// with linear interpolation of the two half-maximum crossings. Sweep `k`
/// sits at position `k` of `values`.
pub fn full_width_half_max(values: &[f64]) -> Option<f64> {
    let (peak_at, &peak) = values
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))?;
    if !(peak > 0.0) {
        return None;
    }
    let half = peak / 2.0;
    let cross = |i: usize, j: usize| {
        let (a, b) = (values[i], values[j]);
        i as f64 + (half - a) / (b - a) * (j as f64 - i as f64)
    };
    let left = (0..peak_at)
        .rev()
        .find(|&i| values[i] < half)
        .map(|i| cross(i, i + 1))
        .unwrap_or(0.0);
    let right = (peak_at + 1..values.len())
        .find(|&i| values[i] < half)
        .map(|i| cross(i - 1, i))?;
    Some(right - left)
}
