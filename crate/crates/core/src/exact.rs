//! Dense density-matrix backend.
//!
//! `ρ` is stored as a row-major vector of length `4^N` (`index = ket * 2^N +
//! bra`), site 0 in the most significant bit of both ket and bra. Channels are
//! applied by index arithmetic on the affected sites only.

use crate::convergence::{central_pair, iterate_until_stationary, ConvergenceReport, Snapshot};
use crate::error::{Error, Result};
use crate::linalg::{hermitian_eigenvalues, CMatrix, C64, ONE, ZERO};
use crate::model::{config_index, parse_pattern, KrausChannel, ModelParams, Superoperator, SweepChannels};

/// `4^14` complex entries is already 4 GiB.
pub const MAX_EXACT_SITES: usize = 14;

/// Positivity is only checked on demand up to this size.
pub const MAX_POSITIVITY_SITES: usize = 8;

#[derive(Clone, Debug, PartialEq)]
pub struct DensityMatrixState {
    n_sites: usize,
    data: Vec<C64>,
}

fn check_size(n_sites: usize) -> Result<()> {
    if n_sites == 0 {
        return Err(Error::TooFewSites { min: 1, found: 0 });
    }
    if n_sites > MAX_EXACT_SITES {
        return Err(Error::TooManySites {
            what: "exact backend",
            n_sites,
            limit: MAX_EXACT_SITES,
        });
    }
    Ok(())
}

impl DensityMatrixState {
    /// Pure product state `|pattern⟩⟨pattern|`.
    pub fn init(n_sites: usize, pattern: &str) -> Result<Self> {
        check_size(n_sites)?;
        let config = config_index(&parse_pattern(n_sites, pattern)?);
        let dim = 1usize << n_sites;
        let mut data = vec![ZERO; dim * dim];
        data[config * dim + config] = ONE;
        Ok(Self { n_sites, data })
    }

    pub fn from_vectorized(n_sites: usize, data: Vec<C64>) -> Result<Self> {
        check_size(n_sites)?;
        let expected = 1usize << (2 * n_sites);
        if data.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                found: data.len(),
            });
        }
        Ok(Self { n_sites, data })
    }

    pub fn from_matrix(rho: &CMatrix) -> Result<Self> {
        let dim = rho.nrows();
        if !dim.is_power_of_two() || rho.ncols() != dim || dim < 2 {
            return Err(Error::DimensionMismatch {
                expected: dim.next_power_of_two().max(2),
                found: dim,
            });
        }
        let n_sites = dim.trailing_zeros() as usize;
        let data = (0..dim * dim).map(|i| rho[(i / dim, i % dim)]).collect();
        Self::from_vectorized(n_sites, data)
    }

    pub fn n_sites(&self) -> usize {
        self.n_sites
    }

    pub fn dim(&self) -> usize {
        1 << self.n_sites
    }

    pub fn data(&self) -> &[C64] {
        &self.data
    }

    pub fn to_matrix(&self) -> CMatrix {
        let d = self.dim();
        CMatrix::from_fn(d, d, |r, c| self.data[r * d + c])
    }

    pub fn trace(&self) -> C64 {
        let d = self.dim();
        (0..d).map(|i| self.data[i * d + i]).sum()
    }

    pub fn hermiticity_defect(&self) -> f64 {
        let d = self.dim();
        let mut worst: f64 = 0.0;
        for r in 0..d {
            for c in r..d {
                worst = worst.max((self.data[r * d + c] - self.data[c * d + r].conj()).norm());
            }
        }
        worst
    }

    /// Largest off-diagonal magnitude.
    pub fn max_coherence(&self) -> f64 {
        let d = self.dim();
        self.data
            .iter()
            .enumerate()
            .filter(|(i, _)| i / d != i % d)
            .map(|(_, z)| z.norm())
            .fold(0.0, f64::max)
    }

    pub fn min_eigenvalue(&self) -> Result<f64> {
        if self.n_sites > MAX_POSITIVITY_SITES {
            return Err(Error::TooManySites {
                what: "positivity check",
                n_sites: self.n_sites,
                limit: MAX_POSITIVITY_SITES,
            });
        }
        Ok(hermitian_eigenvalues(&self.to_matrix())[0])
    }

    /// `ρ ← Σ_x K_x ρ K_x†` on sites `leftmost .. leftmost + support`.
    pub fn apply_channel(&mut self, channel: &KrausChannel, leftmost: usize) -> Result<()> {
        self.apply_superoperator(&channel.superoperator(), leftmost)
    }

    pub fn apply_superoperator(&mut self, sup: &Superoperator, leftmost: usize) -> Result<()> {
        let s = sup.support();
        if leftmost + s > self.n_sites {
            return Err(Error::SiteOutOfRange {
                site: leftmost + s - 1,
                n_sites: self.n_sites,
            });
        }
        let n = self.n_sites;
        let shift = n - leftmost - s;
        let d = 1usize << s;
        let rest_bits = n - s;
        let low_mask = (1usize << shift) - 1;
        let insert_zeros = |x: usize| ((x >> shift) << (shift + s)) | (x & low_mask);
        let offsets: Vec<usize> = (0..d * d)
            .map(|loc| (((loc / d) << shift) << n) | ((loc % d) << shift))
            .collect();
        let mut local = vec![ZERO; d * d];
        let mut out = vec![ZERO; d * d];
        for r in 0..(1usize << (2 * rest_bits)) {
            let ket = insert_zeros(r >> rest_bits);
            let bra = insert_zeros(r & ((1 << rest_bits) - 1));
            let base = (ket << n) | bra;
            for (l, off) in local.iter_mut().zip(&offsets) {
                *l = self.data[base | off];
            }
            if local.iter().all(|z| *z == ZERO) {
                continue;
            }
            sup.apply_local(&local, &mut out);
            for (o, off) in out.iter().zip(&offsets) {
                self.data[base | off] = *o;
            }
        }
        Ok(())
    }

    /// One global update: left drive on site 0, bulk channels on bonds
    /// (0,1) … (N−2,N−1) in order, right drive on site N−1.
    pub fn sweep(&mut self, channels: &SweepChannels) -> Result<()> {
        if self.n_sites < 2 {
            return Err(Error::TooFewSites {
                min: 2,
                found: self.n_sites,
            });
        }
        self.apply_superoperator(&channels.left_super, 0)?;
        for bond in 0..self.n_sites - 1 {
            self.apply_superoperator(&channels.bulk_super, bond)?;
        }
        self.apply_superoperator(&channels.right_super, self.n_sites - 1)
    }

    pub fn sweep_with(&mut self, params: &ModelParams) -> Result<()> {
        self.check_params(params)?;
        self.sweep(&SweepChannels::new(params)?)
    }

    fn check_params(&self, params: &ModelParams) -> Result<()> {
        if params.n_sites != self.n_sites {
            return Err(Error::DimensionMismatch {
                expected: self.n_sites,
                found: params.n_sites,
            });
        }
        Ok(())
    }

    pub fn occupation(&self, site: usize) -> Result<f64> {
        if site >= self.n_sites {
            return Err(Error::SiteOutOfRange {
                site,
                n_sites: self.n_sites,
            });
        }
        let d = self.dim();
        let bit = 1 << (self.n_sites - 1 - site);
        Ok((0..d)
            .filter(|i| i & bit != 0)
            .map(|i| self.data[i * d + i].re)
            .sum())
    }

    pub fn density_profile(&self) -> Vec<f64> {
        let d = self.dim();
        let mut profile = vec![0.0; self.n_sites];
        for i in 0..d {
            let p = self.data[i * d + i].re;
            for (site, n) in profile.iter_mut().enumerate() {
                if i & (1 << (self.n_sites - 1 - site)) != 0 {
                    *n += p;
                }
            }
        }
        profile
    }

    pub fn mean_density(&self) -> f64 {
        let p = self.density_profile();
        p.iter().sum::<f64>() / p.len() as f64
    }

    /// Probabilities of the classical configurations (the diagonal of ρ).
    pub fn diagonal(&self) -> Vec<f64> {
        let d = self.dim();
        (0..d).map(|i| self.data[i * d + i].re).collect()
    }

    /// Partial trace onto `sites` (strictly increasing); the first listed
    /// site is the most significant qubit of the result.
    pub fn reduced_density_matrix(&self, sites: &[usize]) -> Result<CMatrix> {
        if sites.is_empty() {
            return Err(Error::BadSiteList("no sites given".into()));
        }
        if sites.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::BadSiteList(format!(
                "{sites:?} is not strictly increasing"
            )));
        }
        if let Some(&bad) = sites.iter().find(|&&s| s >= self.n_sites) {
            return Err(Error::SiteOutOfRange {
                site: bad,
                n_sites: self.n_sites,
            });
        }
        let n = self.n_sites;
        let k = sites.len();
        let complement: Vec<usize> = (0..n).filter(|s| !sites.contains(s)).collect();
        let spread = |x: usize, positions: &[usize]| {
            positions
                .iter()
                .enumerate()
                .fold(0usize, |acc, (j, &site)| {
                    let b = (x >> (positions.len() - 1 - j)) & 1;
                    acc | (b << (n - 1 - site))
                })
        };
        let kept: Vec<usize> = (0..1 << k).map(|a| spread(a, sites)).collect();
        let traced: Vec<usize> = (0..1 << complement.len())
            .map(|c| spread(c, &complement))
            .collect();
        let dim = self.dim();
        let m = 1 << k;
        let mut out = CMatrix::zeros(m, m);
        for a in 0..m {
            for b in 0..m {
                out[(a, b)] = traced
                    .iter()
                    .map(|&c| self.data[(kept[a] | c) * dim + (kept[b] | c)])
                    .sum();
            }
        }
        Ok(out)
    }

    pub fn snapshot(&self) -> Snapshot {
        let (a, b) = central_pair(self.n_sites);
        Snapshot {
            profile: self.density_profile(),
            central_rdm: self
                .reduced_density_matrix(&[a, b])
                .expect("central pair is always valid"),
        }
    }
}

/// Repeats global updates until the stationarity residual drops below `tol`.
/// Non-convergence is reported, not raised.
pub fn evolve_to_ness(
    mut state: DensityMatrixState,
    params: &ModelParams,
    tol: f64,
    max_sweeps: usize,
) -> Result<(DensityMatrixState, ConvergenceReport)> {
    if !(tol > 0.0) {
        return Err(Error::ParameterOutOfRange {
            name: "tol",
            value: tol,
            range: "(0, inf)",
        });
    }
    state.check_params(params)?;
    let channels = SweepChannels::new(params)?;
    let initial = state.snapshot();
    let report = iterate_until_stationary(tol, max_sweeps, None, initial, || {
        state.sweep(&channels)?;
        Ok::<_, Error>(state.snapshot())
    })?;
    Ok((state, report))
}

/// Checks the state invariants; returns the worst (trace, Hermiticity) defects.
pub fn validity_defects(state: &DensityMatrixState) -> (f64, f64) {
    ((state.trace() - ONE).norm(), state.hermiticity_defect())
}
