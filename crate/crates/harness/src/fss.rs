//! Finite-size scaling along a one-parameter cut of the phase diagram.

use std::time::Instant;

use qca_core::ModelParams;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, Quantity};
use crate::error::{HarnessError, Result};
use crate::run::{evaluate_point, RunRecord};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CutAxis {
    Alpha,
    Beta,
}

impl CutAxis {
    pub fn name(self) -> &'static str {
        match self {
            CutAxis::Alpha => "alpha",
            CutAxis::Beta => "beta",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub x: f64,
    pub value: Option<f64>,
    /// False when any contributing point failed or did not converge.
    pub converged: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Curve {
    pub n_sites: usize,
    pub points: Vec<CurvePoint>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Crossing {
    pub n_small: usize,
    pub n_large: usize,
    pub x: f64,
    /// Change of the difference curve across the bracketing interval.
    pub jump: f64,
    /// The steepest crossing of this pair of sizes.
    pub principal: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FssResult {
    pub run_id: String,
    pub config: ExperimentConfig,
    pub axis: CutAxis,
    pub curves: Vec<Curve>,
    pub crossings: Vec<Crossing>,
    pub records: Vec<RunRecord>,
    pub wall_time_s: f64,
}

impl FssResult {
    pub fn principal_crossings(&self) -> impl Iterator<Item = &Crossing> {
        self.crossings.iter().filter(|c| c.principal)
    }
}

fn quantity_of(record: &RunRecord, quantity: Quantity) -> Option<f64> {
    if record.error.is_some() {
        return None;
    }
    match quantity {
        Quantity::MeanDensity | Quantity::Derivative => record.mean_density,
        Quantity::Lqu => record.correlations.lqu_max,
        Quantity::Coherence => record.correlations.coherence_max,
    }
}

/// Curve of one size from its records, ordered along the cut.
fn build_curve(n_sites: usize, xs: &[f64], records: &[RunRecord], quantity: Quantity) -> Curve {
    let raw: Vec<CurvePoint> = xs
        .iter()
        .zip(records)
        .map(|(&x, r)| CurvePoint {
            x,
            value: quantity_of(r, quantity),
            converged: r.is_usable(),
        })
        .collect();
    let points = if quantity == Quantity::Derivative {
        raw.windows(2)
            .map(|w| CurvePoint {
                x: 0.5 * (w[0].x + w[1].x),
                value: w[0].value.zip(w[1].value).map(|(a, b)| (b - a) / (w[1].x - w[0].x)),
                converged: w[0].converged && w[1].converged,
            })
            .collect()
    } else {
        raw
    };
    Curve { n_sites, points }
}

/// Sign changes of `large − small` between neighbouring usable points,
/// located by linear interpolation.
pub fn find_crossings(small: &Curve, large: &Curve) -> Vec<Crossing> {
    let diff: Vec<Option<(f64, f64)>> = small
        .points
        .iter()
        .zip(&large.points)
        .map(|(a, b)| match (a.value, b.value) {
            (Some(u), Some(v)) if a.converged && b.converged => Some((a.x, v - u)),
            _ => None,
        })
        .collect();
    let mut out: Vec<Crossing> = Vec::new();
    let last = diff.len().saturating_sub(2);
    for (i, w) in diff.windows(2).enumerate() {
        let (Some((x0, d0)), Some((x1, d1))) = (w[0], w[1]) else {
            continue;
        };
        // an exact zero is reported once, from the interval it opens
        let x = if d0 == 0.0 {
            if out.last().is_some_and(|c| c.x == x0) {
                continue;
            }
            x0
        } else if d1 == 0.0 && i == last {
            x1
        } else if d0 * d1 < 0.0 {
            x0 + (x1 - x0) * d0 / (d0 - d1)
        } else {
            continue;
        };
        out.push(Crossing {
            n_small: small.n_sites,
            n_large: large.n_sites,
            x,
            jump: (d1 - d0).abs(),
            principal: false,
        });
    }
    if let Some(best) = out
        .iter_mut()
        .max_by(|a, b| a.jump.total_cmp(&b.jump))
    {
        best.principal = true;
    }
    out
}

pub fn run_fss(config: &ExperimentConfig) -> Result<FssResult> {
    config.validate()?;
    let grid = config
        .grid
        .ok_or_else(|| HarnessError::Config("fss needs a grid".into()))?;
    let axis = if grid.alpha.count() > 1 {
        CutAxis::Alpha
    } else {
        CutAxis::Beta
    };
    let run_id = config.run_id();
    let start = Instant::now();
    let points = grid.points();
    let sizes = config.all_sizes();
    let jobs: Vec<(usize, f64, f64)> = sizes
        .iter()
        .flat_map(|&n| points.iter().map(move |&(a, b)| (n, a, b)))
        .collect();
    let records: Vec<RunRecord> = jobs
        .into_par_iter()
        .map(|(n_sites, alpha, beta)| {
            let params = ModelParams {
                n_sites,
                alpha,
                beta,
                ..config.params
            };
            evaluate_point(config, params, &run_id)
        })
        .collect();
    let xs: Vec<f64> = points
        .iter()
        .map(|&(a, b)| match axis {
            CutAxis::Alpha => a,
            CutAxis::Beta => b,
        })
        .collect();
    let curves: Vec<Curve> = sizes
        .iter()
        .zip(records.chunks(points.len()))
        .map(|(&n, recs)| build_curve(n, &xs, recs, config.quantity))
        .collect();
    let crossings = curves
        .windows(2)
        .flat_map(|w| find_crossings(&w[0], &w[1]))
        .collect();
    Ok(FssResult {
        run_id,
        config: config.clone(),
        axis,
        curves,
        crossings,
        records,
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn curve(n: usize, values: &[f64]) -> Curve {
        Curve {
            n_sites: n,
            points: values
                .iter()
                .enumerate()
                .map(|(i, &v)| CurvePoint {
                    x: i as f64,
                    value: Some(v),
                    converged: true,
                })
                .collect(),
        }
    }

    #[test]
    fn interpolated_crossing() {
        let a = curve(4, &[0.0, 1.0, 2.0]);
        let b = curve(8, &[1.0, 1.0, 1.0]);
        let c = find_crossings(&a, &b);
        assert_eq!(c.len(), 1);
        assert!((c[0].x - 1.0).abs() < 1e-15);

        let b = curve(8, &[0.5, 0.5, 0.5]);
        let c = find_crossings(&a, &b);
        assert_eq!(c.len(), 1);
        assert!((c[0].x - 0.5).abs() < 1e-15);
        assert!(c[0].principal);
    }

    #[test]
    fn steepest_crossing_is_principal() {
        let a = curve(4, &[0.0, 0.1, 0.0, 1.0, 0.5]);
        let b = curve(8, &[0.05; 5]);
        let c = find_crossings(&a, &b);
        assert_eq!(c.len(), 3);
        let p: Vec<_> = c.iter().filter(|c| c.principal).collect();
        assert_eq!(p.len(), 1);
        assert!(p[0].x > 2.0 && p[0].x < 3.0);
    }

    #[test]
    fn unconverged_points_are_skipped() {
        let a = curve(4, &[0.0, 1.0, 2.0]);
        let mut b = curve(8, &[0.5, 0.5, 0.5]);
        b.points[0].converged = false;
        assert!(find_crossings(&a, &b).is_empty());
    }
}
