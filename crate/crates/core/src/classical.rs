//! Classical discrete-time TASEP with forward sequential update.
//!
//! Two independent routes to the stationary state: the truncated matrix
//! product solution obtained by mapping the update algebra onto the PASEP
//! algebra, and a brute-force Markov chain over all `2^N` configurations.

use std::collections::BTreeMap;
use std::fmt;

use nalgebra::{DMatrix, DVector};
use petgraph::algo::tarjan_scc;
use petgraph::graph::DiGraph;
use serde::{Deserialize, Serialize};

use crate::error::{check_probability, Error, Result};
use crate::linalg::{CMatrix, C64, ONE};
use crate::model::ModelParams;

pub const DEFAULT_CHI: usize = 40;

/// Largest lattice for which the dense transition matrix is built.
pub const MAX_MARKOV_SITES: usize = 12;

const MAX_POWER_ITERATIONS: usize = 10_000_000;

/// Truncated representation of the stationary algebra. `f` is bound to the
/// occupied site state, `e` to the vacant one; both boundary vectors are `|0⟩`.
#[derive(Clone, Debug)]
pub struct MpaMatrices {
    pub chi: usize,
    pub f: CMatrix,
    pub e: CMatrix,
    pub boundary_vector: DVector<C64>,
    pub alpha: f64,
    pub beta: f64,
    pub tau: f64,
    /// `α/τ`
    pub alpha_prime: f64,
    /// `β(1−τ)/(τ(1−β))`, infinite at β = 1.
    pub beta_prime: f64,
    /// `−τ/√(1−τ)`
    pub lambda: f64,
}

pub fn build_mpa(alpha: f64, beta: f64, tau: f64, chi: usize) -> Result<MpaMatrices> {
    check_probability("alpha", alpha)?;
    check_probability("beta", beta)?;
    check_probability("tau", tau)?;
    if tau == 0.0 || tau == 1.0 {
        return Err(Error::ParameterOutOfRange {
            name: "tau",
            value: tau,
            range: "(0, 1)",
        });
    }
    if alpha == 0.0 {
        return Err(Error::Degenerate("alpha = 0 leaves the lattice empty".into()));
    }
    if beta == 0.0 {
        return Err(Error::Degenerate("beta = 0 leaves the lattice full".into()));
    }
    if chi < 2 {
        return Err(Error::ParameterOutOfRange {
            name: "chi",
            value: chi as f64,
            range: "[2, inf)",
        });
    }
    let alpha_prime = alpha / tau;
    let (beta_prime, inv_beta_prime) = if beta == 1.0 {
        (f64::INFINITY, 0.0)
    } else {
        let bp = beta * (1.0 - tau) / (tau * (1.0 - beta));
        (bp, 1.0 / bp)
    };
    let inv_alpha_prime = 1.0 / alpha_prime;
    // (α'+β'−1)/(α'β') = 1/β' + 1/α' − 1/(α'β'), finite also for β' → ∞
    let coupling = C64::new(
        inv_alpha_prime + inv_beta_prime - inv_alpha_prime * inv_beta_prime,
        0.0,
    )
    .sqrt();

    let mut shift = CMatrix::identity(chi, chi);
    for n in 1..chi - 1 {
        shift[(n, n + 1)] = ONE;
    }
    shift[(0, 1)] = coupling;
    let sq = (1.0 - tau).sqrt();
    let mut f = shift.clone();
    f[(0, 0)] += C64::new(inv_beta_prime - 1.0, 0.0);
    let mut e = shift.transpose();
    e[(0, 0)] += C64::new(inv_alpha_prime - 1.0, 0.0);
    let mut boundary_vector = DVector::zeros(chi);
    boundary_vector[0] = ONE;
    Ok(MpaMatrices {
        chi,
        f: f.scale(sq),
        e: e.unscale(sq),
        boundary_vector,
        alpha,
        beta,
        tau,
        alpha_prime,
        beta_prime,
        lambda: -tau / sq,
    })
}

impl MpaMatrices {
    /// `F/√(1−τ)` and `√(1−τ) E`
    pub fn rescaled(&self) -> (CMatrix, CMatrix) {
        let sq = (1.0 - self.tau).sqrt();
        (self.f.unscale(sq), self.e.scale(sq))
    }

    /// `F'E' − F' − E'`; vanishes except in the last row/column.
    pub fn bulk_residual(&self) -> CMatrix {
        let (fp, ep) = self.rescaled();
        &fp * &ep - &fp - &ep
    }

    /// Max deviations of `⟨W|E' = ⟨W|/α'` and `F'|V⟩ = |V⟩/β'`.
    pub fn boundary_residuals(&self) -> (f64, f64) {
        let (fp, ep) = self.rescaled();
        let w = &self.boundary_vector;
        let left = ep.transpose() * w - w.unscale(self.alpha_prime);
        let inv_bp = if self.beta_prime.is_infinite() {
            0.0
        } else {
            1.0 / self.beta_prime
        };
        let right = &fp * w - w.scale(inv_bp);
        let worst = |v: DVector<C64>| v.iter().fold(0.0, |a: f64, z| a.max(z.norm()));
        (worst(left), worst(right))
    }

    pub fn transfer(&self) -> CMatrix {
        &self.f + &self.e
    }
}

/// Site occupations `⟨W|C^i F C^{N−1−i}|V⟩ / ⟨W|C^N|V⟩` with `C = F + E`.
pub fn mpa_profile(mpa: &MpaMatrices, n_sites: usize) -> Result<Vec<f64>> {
    if n_sites < 2 {
        return Err(Error::TooFewSites {
            min: 2,
            found: n_sites,
        });
    }
    let c = mpa.transfer();
    let ct = c.transpose();
    // left[i] ∝ ⟨W| C^i, right[j] ∝ C^j |V⟩, each kept at unit norm
    let normalize = |v: DVector<C64>| {
        let n = v.norm();
        if n > 0.0 {
            v.unscale(n)
        } else {
            v
        }
    };
    let mut left = vec![mpa.boundary_vector.clone()];
    let mut right = vec![mpa.boundary_vector.clone()];
    for _ in 1..n_sites {
        left.push(normalize(&ct * left.last().unwrap()));
        right.push(normalize(&c * right.last().unwrap()));
    }
    (0..n_sites)
        .map(|i| {
            let l = &left[i];
            let r = &right[n_sites - 1 - i];
            let norm = l.dot(&(&c * r));
            let occ = l.dot(&(&mpa.f * r));
            if norm.norm() < 1e-300 {
                return Err(Error::Degenerate(format!(
                    "vanishing normalization at (α, β, τ) = ({}, {}, {})",
                    mpa.alpha, mpa.beta, mpa.tau
                )));
            }
            let n = occ / norm;
            if n.im.abs() > 1e-9 {
                return Err(Error::Numerical(format!(
                    "occupation of site {i} has imaginary part {:.3e}",
                    n.im
                )));
            }
            Ok(n.re)
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    LowDensity,
    HighDensity,
    MaximalCurrent,
    Coexistence,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Phase::LowDensity => "LD",
            Phase::HighDensity => "HD",
            Phase::MaximalCurrent => "MC",
            Phase::Coexistence => "coexistence-line",
        };
        f.write_str(s)
    }
}

/// `α⋆ = β⋆ = 1 − √(1−τ)`
pub fn critical_rate(tau: f64) -> f64 {
    1.0 - (1.0 - tau).sqrt()
}

/// Phase of the infinite system. Points on the LD/HD–MC lines (a rate equal
/// to `α⋆` while the other is at least `α⋆`) are labelled MC.
pub fn classify_phase(alpha: f64, beta: f64, tau: f64) -> Phase {
    let star = critical_rate(tau);
    if alpha == beta && alpha < star {
        Phase::Coexistence
    } else if alpha < beta && alpha < star {
        Phase::LowDensity
    } else if beta < alpha && beta < star {
        Phase::HighDensity
    } else {
        Phase::MaximalCurrent
    }
}

/// Column-stochastic transition matrix of one full sequential update.
#[derive(Clone, Debug)]
pub struct MarkovModel {
    pub n_sites: usize,
    pub matrix: DMatrix<f64>,
}

type Distribution = BTreeMap<usize, f64>;

fn branch(dist: &Distribution, mut step: impl FnMut(usize) -> [(usize, f64); 2]) -> Distribution {
    let mut out = Distribution::new();
    for (&x, &p) in dist {
        for (y, q) in step(x) {
            if q > 0.0 {
                *out.entry(y).or_insert(0.0) += p * q;
            }
        }
    }
    out
}

pub fn build_markov(params: &ModelParams) -> Result<MarkovModel> {
    params.validate()?;
    if params.omega != 0.0 {
        return Err(Error::Unsupported(
            "the Markov chain describes the omega = 0 dynamics only".into(),
        ));
    }
    let n = params.n_sites;
    if n > MAX_MARKOV_SITES {
        return Err(Error::TooManySites {
            what: "Markov transition matrix",
            n_sites: n,
            limit: MAX_MARKOV_SITES,
        });
    }
    let bit = |site: usize| 1usize << (n - 1 - site);
    let (a, b, t) = (params.alpha, params.beta, params.tau);
    let dim = 1usize << n;
    let mut matrix = DMatrix::zeros(dim, dim);
    for start in 0..dim {
        let mut dist = Distribution::from([(start, 1.0)]);
        dist = branch(&dist, |x| {
            if x & bit(0) == 0 {
                [(x | bit(0), a), (x, 1.0 - a)]
            } else {
                [(x, 1.0), (x, 0.0)]
            }
        });
        for j in 0..n - 1 {
            dist = branch(&dist, |x| {
                if x & bit(j) != 0 && x & bit(j + 1) == 0 {
                    [(x ^ bit(j) ^ bit(j + 1), t), (x, 1.0 - t)]
                } else {
                    [(x, 1.0), (x, 0.0)]
                }
            });
        }
        dist = branch(&dist, |x| {
            if x & bit(n - 1) != 0 {
                [(x ^ bit(n - 1), b), (x, 1.0 - b)]
            } else {
                [(x, 1.0), (x, 0.0)]
            }
        });
        for (end, p) in dist {
            matrix[(end, start)] += p;
        }
    }
    Ok(MarkovModel { n_sites: n, matrix })
}

#[derive(Clone, Debug, PartialEq)]
pub struct StationaryDistribution {
    pub probabilities: Vec<f64>,
    pub iterations: usize,
    /// False when the chain has more than one closed communicating class;
    /// the returned vector then depends on the uniform starting point.
    pub unique: bool,
}

impl MarkovModel {
    /// Number of closed communicating classes of the transition graph.
    pub fn closed_classes(&self) -> usize {
        let dim = self.matrix.nrows();
        let mut graph = DiGraph::<(), ()>::with_capacity(dim, dim * 4);
        let nodes: Vec<_> = (0..dim).map(|_| graph.add_node(())).collect();
        for col in 0..dim {
            for row in 0..dim {
                if row != col && self.matrix[(row, col)] > 0.0 {
                    graph.add_edge(nodes[col], nodes[row], ());
                }
            }
        }
        let sccs = tarjan_scc(&graph);
        let mut component = vec![0; dim];
        for (k, scc) in sccs.iter().enumerate() {
            for node in scc {
                component[node.index()] = k;
            }
        }
        sccs.iter()
            .enumerate()
            .filter(|(k, scc)| {
                scc.iter().all(|node| {
                    graph
                        .neighbors(*node)
                        .all(|next| component[next.index()] == *k)
                })
            })
            .count()
    }

    /// Marginal occupation of every site under a configuration distribution.
    pub fn occupations(&self, probabilities: &[f64]) -> Vec<f64> {
        let n = self.n_sites;
        (0..n)
            .map(|site| {
                probabilities
                    .iter()
                    .enumerate()
                    .filter(|(x, _)| x & (1 << (n - 1 - site)) != 0)
                    .map(|(_, p)| p)
                    .sum()
            })
            .collect()
    }
}

/// Power iteration from the uniform distribution until `‖p_{t+1} − p_t‖₁ < tol`.
pub fn stationary_distribution(model: &MarkovModel, tol: f64) -> Result<StationaryDistribution> {
    if !(tol > 0.0) {
        return Err(Error::ParameterOutOfRange {
            name: "tol",
            value: tol,
            range: "(0, inf)",
        });
    }
    let dim = model.matrix.nrows();
    let columns: Vec<Vec<(usize, f64)>> = (0..dim)
        .map(|c| {
            (0..dim)
                .filter_map(|r| {
                    let v = model.matrix[(r, c)];
                    (v != 0.0).then_some((r, v))
                })
                .collect()
        })
        .collect();
    let mut p = vec![1.0 / dim as f64; dim];
    let mut next = vec![0.0; dim];
    for it in 1..=MAX_POWER_ITERATIONS {
        next.iter_mut().for_each(|x| *x = 0.0);
        for (c, col) in columns.iter().enumerate() {
            for &(r, v) in col {
                next[r] += v * p[c];
            }
        }
        let total: f64 = next.iter().sum();
        next.iter_mut().for_each(|x| *x /= total);
        let diff: f64 = next.iter().zip(&p).map(|(a, b)| (a - b).abs()).sum();
        std::mem::swap(&mut p, &mut next);
        if diff < tol {
            return Ok(StationaryDistribution {
                probabilities: p,
                iterations: it,
                unique: model.closed_classes() == 1,
            });
        }
    }
    Err(Error::NoConvergence(MAX_POWER_ITERATIONS))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn results_are_shareable() {
        fn check<T: Send + Sync>() {}
        check::<MpaMatrices>();
        check::<MarkovModel>();
    }

    #[test]
    fn boundary_relations_exact() {
        for &(a, b, t) in &[(0.3, 0.7, 0.75), (0.2, 0.2, 0.75), (0.9, 0.4, 0.3), (0.5, 1.0, 0.6)] {
            let mpa = build_mpa(a, b, t, 12).unwrap();
            let (l, r) = mpa.boundary_residuals();
            assert!(l < 1e-14 && r < 1e-14, "{a} {b} {t}: {l} {r}");
        }
    }

    #[test]
    fn bulk_residual_lives_in_last_corner() {
        let mpa = build_mpa(0.6, 0.6, 0.75, 10).unwrap();
        let res = mpa.bulk_residual();
        for r in 0..10 {
            for c in 0..10 {
                if (r, c) != (9, 9) {
                    assert!(res[(r, c)].norm() < 1e-12, "({r},{c}) = {}", res[(r, c)]);
                }
            }
        }
        assert!(res[(9, 9)].norm() > 0.5);
    }

    #[test]
    fn profile_stable_in_chi() {
        for (a, b) in [(0.2, 0.6), (0.6, 0.2), (0.7, 0.7), (0.3, 0.3)] {
            let p40 = mpa_profile(&build_mpa(a, b, 0.75, DEFAULT_CHI).unwrap(), 64).unwrap();
            let p60 = mpa_profile(&build_mpa(a, b, 0.75, 60).unwrap(), 64).unwrap();
            let dev = p40.iter().zip(&p60).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
            assert!(dev < 1e-9, "({a}, {b}): {dev:e}");
        }
    }

    #[test]
    fn complex_representation_gives_real_profile() {
        let mpa = build_mpa(0.2, 0.2, 0.75, 20).unwrap();
        assert!(mpa.f[(0, 1)].im.abs() > 0.0);
        let p = mpa_profile(&mpa, 5).unwrap();
        assert!(p.iter().all(|x| (-1e-9..=1.0 + 1e-9).contains(x)));
    }

    #[test]
    fn mpa_rejects_degenerate_inputs() {
        assert!(build_mpa(0.5, 0.5, 0.0, 10).is_err());
        assert!(build_mpa(0.5, 0.5, 1.0, 10).is_err());
        assert!(matches!(build_mpa(0.0, 0.5, 0.5, 10), Err(Error::Degenerate(_))));
        assert!(matches!(build_mpa(0.5, 0.0, 0.5, 10), Err(Error::Degenerate(_))));
        assert!(build_mpa(0.5, 0.5, 0.5, 1).is_err());
        let mpa = build_mpa(0.5, 0.5, 0.5, 4).unwrap();
        assert!(mpa_profile(&mpa, 1).is_err());
    }

    #[test]
    fn phase_labels() {
        assert!((critical_rate(0.75) - 0.5).abs() < 1e-15);
        assert_eq!(classify_phase(0.2, 0.6, 0.75), Phase::LowDensity);
        assert_eq!(classify_phase(0.6, 0.2, 0.75), Phase::HighDensity);
        assert_eq!(classify_phase(0.7, 0.7, 0.75), Phase::MaximalCurrent);
        assert_eq!(classify_phase(0.3, 0.3, 0.75), Phase::Coexistence);
        assert_eq!(classify_phase(0.5, 0.8, 0.75), Phase::MaximalCurrent);
        assert_eq!(classify_phase(0.8, 0.5, 0.75), Phase::MaximalCurrent);
    }

    #[test]
    fn markov_columns_stochastic() {
        let p = ModelParams::new(5, 0.3, 0.6, 0.75, 0.0).unwrap();
        let m = build_markov(&p).unwrap();
        for c in 0..32 {
            let s: f64 = m.matrix.column(c).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
        assert!(m.matrix.iter().all(|&x| (0.0..=1.0).contains(&x)));
    }

    #[test]
    fn markov_trivial_chain_is_identity() {
        let p = ModelParams::new(3, 0.0, 0.0, 0.0, 0.0).unwrap();
        let m = build_markov(&p).unwrap();
        assert_eq!(m.matrix, DMatrix::identity(8, 8));
        let st = stationary_distribution(&m, 1e-12).unwrap();
        assert!(!st.unique);
        assert!(st.probabilities.iter().all(|&x| (x - 0.125).abs() < 1e-15));
    }

    #[test]
    fn markov_deterministic_step() {
        // inject, hop and eject within one update: ∘∘ stays ∘∘
        let p = ModelParams::new(2, 1.0, 1.0, 1.0, 0.0).unwrap();
        let m = build_markov(&p).unwrap();
        assert_eq!(m.matrix[(0b00, 0b00)], 1.0);
        // •∘: injection blocked, hop, ejection → ∘∘
        assert_eq!(m.matrix[(0b00, 0b10)], 1.0);
        // ∘•: eject last site after injecting the first → •∘
        assert_eq!(m.matrix[(0b10, 0b01)], 1.0);
    }

    #[test]
    fn markov_guards() {
        let p = ModelParams::new(3, 0.3, 0.3, 0.3, 0.1).unwrap();
        assert!(matches!(build_markov(&p), Err(Error::Unsupported(_))));
        let p = ModelParams::new(13, 0.3, 0.3, 0.3, 0.0).unwrap();
        assert!(matches!(build_markov(&p), Err(Error::TooManySites { .. })));
    }

    #[test]
    fn stationary_is_a_distribution() {
        let p = ModelParams::new(4, 0.3, 0.7, 0.75, 0.0).unwrap();
        let m = build_markov(&p).unwrap();
        let st = stationary_distribution(&m, 1e-14).unwrap();
        assert!(st.unique);
        assert!(st.probabilities.iter().all(|&x| x >= 0.0));
        assert!((st.probabilities.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
