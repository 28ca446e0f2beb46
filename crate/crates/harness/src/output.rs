//! Files written by each mode: a JSON manifest, CSV tables and SVG figures.
//!
//! Floats in CSV use 17 significant digits so that values survive a round
//! trip; missing values are empty cells.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::{ExperimentConfig, Mode, Observable};
use crate::error::{HarnessError, Result};
use crate::fss::FssResult;
use crate::plot::{heatmap, line_plot, Series};
use crate::run::{RunRecord, ScanResult, Timeseries};

pub const SCAN_HEADER: [&str; 14] = [
    "run_id",
    "alpha",
    "beta",
    "tau",
    "omega",
    "n_sites",
    "backend",
    "mean_density",
    "coherence_max",
    "lqu_max",
    "ppt_ratio",
    "converged",
    "sweeps",
    "max_bond_dim",
];

pub const TIMESERIES_HEADER: [&str; 5] = ["run_id", "sweep", "negativity", "lqu_max", "coherence_max"];

pub fn float(x: f64) -> String {
    format!("{x:.16e}")
}

fn opt_float(x: Option<f64>) -> String {
    x.map(float).unwrap_or_default()
}

fn opt_int(x: Option<usize>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

#[derive(Serialize)]
struct Manifest<'a, T: Serialize> {
    tool: &'static str,
    version: &'static str,
    core_version: &'static str,
    mode: &'static str,
    run_id: &'a str,
    config: &'a ExperimentConfig,
    result: &'a T,
}

/// Collects the paths of everything written into one output directory.
pub struct OutputDir {
    dir: PathBuf,
    written: Vec<PathBuf>,
}

impl OutputDir {
    pub fn create(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
        Ok(Self {
            dir: dir.to_owned(),
            written: Vec::new(),
        })
    }

    pub fn written(&self) -> &[PathBuf] {
        &self.written
    }

    pub fn into_written(self) -> Vec<PathBuf> {
        self.written
    }

    fn path(&mut self, name: String) -> PathBuf {
        let p = self.dir.join(name);
        self.written.push(p.clone());
        p
    }

    fn manifest<T: Serialize>(&mut self, mode: Mode, config: &ExperimentConfig, run_id: &str, result: &T) -> Result<()> {
        let path = self.path(format!("{}_{run_id}.json", mode.name()));
        let manifest = Manifest {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            core_version: qca_core::VERSION,
            mode: mode.name(),
            run_id,
            config,
            result,
        };
        let text = serde_json::to_string_pretty(&manifest).map_err(|e| HarnessError::output(&path, e))?;
        fs::write(&path, text).map_err(|e| HarnessError::io(&path, e))
    }

    fn csv(&mut self, name: String, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
        let path = self.path(name);
        let fail = |e: csv::Error| HarnessError::output(&path, e);
        let mut w = csv::Writer::from_path(&path).map_err(fail)?;
        w.write_record(header).map_err(fail)?;
        for row in rows {
            w.write_record(&row).map_err(fail)?;
        }
        w.flush().map_err(|e| HarnessError::io(&path, e))
    }

    fn line(&mut self, name: String, title: &str, x: &str, y: &str, series: &[Series]) -> Result<()> {
        let path = self.path(name);
        line_plot(&path, title, x, y, series)
    }

    fn profile(&mut self, mode: Mode, record: &RunRecord) -> Result<()> {
        if record.profile.is_empty() {
            return Ok(());
        }
        let id = &record.run_id;
        self.csv(
            format!("{}_profile_{id}.csv", mode.name()),
            &["run_id", "site", "occupation"],
            record
                .profile
                .iter()
                .enumerate()
                .map(|(i, &n)| vec![id.clone(), i.to_string(), float(n)]),
        )?;
        let points = record.profile.iter().enumerate().map(|(i, &n)| (i as f64, n)).collect();
        self.line(
            format!("{}_profile_{id}.svg", mode.name()),
            &format!("density profile, N = {}", record.params.n_sites),
            "site",
            "occupation",
            &[Series {
                label: format!("N = {}", record.params.n_sites),
                points,
            }],
        )
    }

    fn diagnostics<'a>(&mut self, mode: Mode, run_id: &str, records: impl IntoIterator<Item = &'a RunRecord>) -> Result<()> {
        let rows: Vec<Vec<String>> = records
            .into_iter()
            .flat_map(|r| {
                r.diagnostics.iter().map(move |d| {
                    vec![
                        run_id.to_owned(),
                        float(r.params.alpha),
                        float(r.params.beta),
                        r.params.n_sites.to_string(),
                        d.sweep.to_string(),
                        d.max_bond_dim.to_string(),
                        float(d.discarded_weight),
                        float(d.trace_drift),
                    ]
                })
            })
            .collect();
        if rows.is_empty() {
            return Ok(());
        }
        self.csv(
            format!("{}_diagnostics_{run_id}.csv", mode.name()),
            &["run_id", "alpha", "beta", "n_sites", "sweep", "max_bond_dim", "discarded_weight", "trace_drift"],
            rows,
        )
    }
}

pub fn scan_row(r: &RunRecord) -> Vec<String> {
    vec![
        r.run_id.clone(),
        float(r.params.alpha),
        float(r.params.beta),
        float(r.params.tau),
        float(r.params.omega),
        r.params.n_sites.to_string(),
        r.config.backend.to_string(),
        opt_float(r.mean_density),
        opt_float(r.correlations.coherence_max),
        opt_float(r.correlations.lqu_max),
        opt_float(r.correlations.ppt_ratio),
        r.convergence.converged.to_string(),
        r.convergence.sweeps_run.to_string(),
        opt_int(r.max_bond_dim()),
    ]
}

pub fn write_single(dir: &Path, record: &RunRecord) -> Result<Vec<PathBuf>> {
    let mode = record.config.mode;
    let mut out = OutputDir::create(dir)?;
    out.manifest(mode, &record.config, &record.run_id, record)?;
    out.profile(mode, record)?;
    out.diagnostics(mode, &record.run_id, [record])?;
    Ok(out.into_written())
}

pub fn write_scan(dir: &Path, scan: &ScanResult) -> Result<Vec<PathBuf>> {
    let mode = scan.config.mode;
    let id = &scan.run_id;
    let mut out = OutputDir::create(dir)?;
    out.manifest(mode, &scan.config, id, scan)?;
    out.csv(format!("{}_{id}.csv", mode.name()), &SCAN_HEADER, scan.records.iter().map(scan_row))?;
    out.diagnostics(mode, id, &scan.records)?;

    let Some(grid) = scan.config.grid else {
        return Ok(out.into_written());
    };
    let (alphas, betas) = (grid.alpha.values(), grid.beta.values());
    let maps: [(&str, Observable, fn(&RunRecord) -> Option<f64>); 5] = [
        ("mean_density", Observable::Profile, |r| r.mean_density),
        ("negativity", Observable::Negativity, |r| r.correlations.negativity),
        ("lqu", Observable::Lqu, |r| r.correlations.lqu_max),
        ("coherence", Observable::Coherence, |r| r.correlations.coherence_max),
        ("ppt_ratio", Observable::Ppt, |r| r.correlations.ppt_ratio),
    ];
    for (name, obs, get) in maps {
        if !scan.config.wants(obs) {
            continue;
        }
        let values: Vec<Option<f64>> = scan.records.iter().map(get).collect();
        if values.iter().all(Option::is_none) {
            continue;
        }
        let path = out.path(format!("{}_{name}_{id}.svg", mode.name()));
        let title = format!(
            "{name}, N = {}, tau = {}, omega = {:.4}",
            scan.config.params.n_sites, scan.config.params.tau, scan.config.params.omega
        );
        heatmap(&path, &title, &alphas, &betas, &values)?;
    }
    Ok(out.into_written())
}

pub fn write_timeseries(dir: &Path, ts: &Timeseries) -> Result<Vec<PathBuf>> {
    let id = &ts.run_id;
    let mut out = OutputDir::create(dir)?;
    out.manifest(Mode::Timeseries, &ts.config, id, ts)?;
    out.csv(
        format!("timeseries_{id}.csv"),
        &TIMESERIES_HEADER,
        ts.rows.iter().map(|r| {
            vec![
                id.clone(),
                r.sweep.to_string(),
                opt_float(r.negativity),
                opt_float(r.lqu_max),
                opt_float(r.coherence_max),
            ]
        }),
    )?;
    let columns: [(&str, fn(&crate::run::TimeseriesRow) -> Option<f64>); 3] = [
        ("negativity", |r| r.negativity),
        ("lqu", |r| r.lqu_max),
        ("coherence", |r| r.coherence_max),
    ];
    for (name, get) in columns {
        let points: Vec<(f64, f64)> = ts
            .rows
            .iter()
            .filter_map(|r| get(r).map(|v| (r.sweep as f64, v)))
            .collect();
        if points.is_empty() {
            continue;
        }
        out.line(
            format!("timeseries_{name}_{id}.svg"),
            &format!("{name}, N = {}", ts.config.params.n_sites),
            "sweep",
            name,
            &[Series {
                label: name.into(),
                points,
            }],
        )?;
    }
    Ok(out.into_written())
}

pub fn write_fss(dir: &Path, fss: &FssResult) -> Result<Vec<PathBuf>> {
    let id = &fss.run_id;
    let mut out = OutputDir::create(dir)?;
    out.manifest(Mode::Fss, &fss.config, id, fss)?;
    out.csv(
        format!("fss_curves_{id}.csv"),
        &["run_id", "n_sites", fss.axis.name(), fss.config.quantity.name(), "converged"],
        fss.curves.iter().flat_map(|c| {
            c.points.iter().map(move |p| {
                vec![
                    id.clone(),
                    c.n_sites.to_string(),
                    float(p.x),
                    opt_float(p.value),
                    p.converged.to_string(),
                ]
            })
        }),
    )?;
    out.csv(
        format!("fss_crossings_{id}.csv"),
        &["run_id", "n_small", "n_large", fss.axis.name(), "jump", "principal"],
        fss.crossings.iter().map(|c| {
            vec![
                id.clone(),
                c.n_small.to_string(),
                c.n_large.to_string(),
                float(c.x),
                float(c.jump),
                c.principal.to_string(),
            ]
        }),
    )?;
    out.diagnostics(Mode::Fss, id, &fss.records)?;
    let series: Vec<Series> = fss
        .curves
        .iter()
        .map(|c| Series {
            label: format!("N = {}", c.n_sites),
            points: c.points.iter().filter_map(|p| p.value.map(|v| (p.x, v))).collect(),
        })
        .collect();
    let q = fss.config.quantity.name();
    out.line(format!("fss_{q}_{id}.svg"), &format!("{q} along the cut"), fss.axis.name(), q, &series)?;
    Ok(out.into_written())
}
