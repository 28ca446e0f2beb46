//! Matrix-product-operator backend.
//!
//! Each site tensor carries a vectorized local operator index `p = 2·ket + bra`
//! between two bond indices. The density operator is kept in mixed canonical
//! form (Hilbert–Schmidt inner product) around `canonical_center`, so the bond
//! updates of a left-to-right sweep truncate optimally.

use faer::{Mat, MatRef};
use serde::{Deserialize, Serialize};

use crate::convergence::{central_pair, iterate_until_stationary, ConvergenceReport, Snapshot};
use crate::correlations::{Bipartition, PptMoments, TwoSiteStates};
use crate::error::{Error, Result};
use crate::exact::{DensityMatrixState, MAX_POSITIVITY_SITES};
use crate::linalg::{hermitian_eigenvalues, hermiticity_defect, hermitize, CMatrix, C64, ONE, ZERO};
use crate::model::{parse_pattern, KrausChannel, ModelParams, Superoperator, SweepChannels};

/// Largest chain that [`MpoState::to_dense`] will expand.
pub const MAX_DENSE_SITES: usize = MAX_POSITIVITY_SITES;

/// Extracted RDMs with an eigenvalue below this trigger a warning.
pub const NEGATIVITY_WARN_TOL: f64 = 1e-6;

/// Discarded-weight fraction used when only the gauge moves: drops rounding
/// noise, never physics.
const GAUGE_CUTOFF: f64 = 1e-30;

/// Sweeps without a new best residual before a truncated evolution is
/// declared stalled.
pub const STALL_WINDOW: usize = 200;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruncationPolicy {
    pub chi_max: usize,
    /// Largest discarded fraction of the squared singular values per split.
    pub svd_cutoff: f64,
    pub renormalize_trace: bool,
}

impl Default for TruncationPolicy {
    fn default() -> Self {
        Self {
            chi_max: 64,
            svd_cutoff: 1e-12,
            renormalize_trace: true,
        }
    }
}

impl TruncationPolicy {
    pub fn new(chi_max: usize, svd_cutoff: f64) -> Result<Self> {
        let p = Self {
            chi_max,
            svd_cutoff,
            renormalize_trace: true,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.chi_max < 1 {
            return Err(Error::ParameterOutOfRange {
                name: "chi_max",
                value: self.chi_max as f64,
                range: "[1, inf)",
            });
        }
        if !(0.0..1.0).contains(&self.svd_cutoff) {
            return Err(Error::ParameterOutOfRange {
                name: "svd_cutoff",
                value: self.svd_cutoff,
                range: "[0, 1)",
            });
        }
        Ok(())
    }
}

/// One site tensor, stored row-major as `[left][p][right]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SiteTensor {
    left: usize,
    right: usize,
    data: Vec<C64>,
}

impl SiteTensor {
    fn zeros(left: usize, right: usize) -> Self {
        Self {
            left,
            right,
            data: vec![ZERO; left * 4 * right],
        }
    }

    pub fn left_dim(&self) -> usize {
        self.left
    }

    pub fn right_dim(&self) -> usize {
        self.right
    }

    /// Element `(left, ket, bra, right)`.
    pub fn get(&self, l: usize, ket: usize, bra: usize, r: usize) -> C64 {
        self.data[self.idx(l, 2 * ket + bra, r)]
    }

    fn idx(&self, l: usize, p: usize, r: usize) -> usize {
        (l * 4 + p) * self.right + r
    }

    /// `Σ_p w_p A[:, p, :]` as a `left × right` matrix.
    fn slice(&self, weights: [C64; 4]) -> Mat<C64> {
        Mat::from_fn(self.left, self.right, |l, r| {
            (0..4)
                .filter(|&p| weights[p] != ZERO)
                .map(|p| weights[p] * self.data[self.idx(l, p, r)])
                .sum()
        })
    }

    fn component(&self, p: usize) -> Mat<C64> {
        Mat::from_fn(self.left, self.right, |l, r| self.data[self.idx(l, p, r)])
    }

    /// `(left·4) × right` view.
    fn as_left_matrix(&self) -> MatRef<'_, C64> {
        MatRef::from_row_major_slice(&self.data, self.left * 4, self.right)
    }

    /// `left × (4·right)` view.
    fn as_right_matrix(&self) -> MatRef<'_, C64> {
        MatRef::from_row_major_slice(&self.data, self.left, 4 * self.right)
    }

    fn from_row_major(left: usize, right: usize, m: MatRef<'_, C64>) -> Self {
        let mut data = Vec::with_capacity(m.nrows() * m.ncols());
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                data.push(m[(i, j)]);
            }
        }
        debug_assert_eq!(data.len(), left * 4 * right);
        Self { left, right, data }
    }

    fn scale(&mut self, f: C64) {
        self.data.iter_mut().for_each(|z| *z *= f);
    }
}

const IDENTITY_WEIGHTS: [C64; 4] = [ONE, ZERO, ZERO, ONE];
const OCCUPIED_WEIGHTS: [C64; 4] = [ZERO, ZERO, ZERO, ONE];

/// Per-sweep record for the diagnostics stream.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepDiagnostics {
    pub sweep: usize,
    pub max_bond_dim: usize,
    /// Sum over all splits of the discarded squared-weight fraction.
    pub discarded_weight: f64,
    /// `|tr ρ − 1|` before renormalization.
    pub trace_drift: f64,
}

/// Health of an extracted two-site state, measured before Hermitization.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RdmQuality {
    pub hermiticity_defect: f64,
    pub min_eigenvalue: f64,
}

#[derive(Clone, Debug)]
pub struct MpoState {
    n_sites: usize,
    tensors: Vec<SiteTensor>,
    canonical_center: Option<usize>,
    policy: TruncationPolicy,
    diagnostics: Vec<SweepDiagnostics>,
    pending_discard: f64,
}

struct Split {
    u: Mat<C64>,
    s: Vec<f64>,
    vh: Mat<C64>,
    discarded: f64,
}

fn truncated_svd(theta: MatRef<'_, C64>, policy: &TruncationPolicy) -> Result<Split> {
    let svd = theta
        .thin_svd()
        .map_err(|e| Error::Numerical(format!("SVD failed: {e:?}")))?;
    let sv = svd.S().column_vector();
    let s: Vec<f64> = (0..sv.nrows()).map(|i| sv[i].re).collect();
    let total: f64 = s.iter().map(|x| x * x).sum();
    if !(total > 0.0) {
        return Err(Error::Degenerate("the operator vanished".into()));
    }
    // tails[k] = Σ_{i ≥ k} s_i², summed from the small end so that a zero
    // cutoff really keeps everything
    let mut tails = vec![0.0; s.len() + 1];
    for i in (0..s.len()).rev() {
        tails[i] = tails[i + 1] + s[i] * s[i];
    }
    let k = (0..=s.len())
        .find(|&k| tails[k] <= policy.svd_cutoff * total)
        .unwrap_or(s.len())
        .clamp(1, policy.chi_max);
    let discarded = tails[k] / total;
    let (u, v) = (svd.U(), svd.V());
    Ok(Split {
        u: Mat::from_fn(u.nrows(), k, |i, j| u[(i, j)]),
        s: s[..k].to_vec(),
        vh: Mat::from_fn(k, v.nrows(), |i, j| v[(j, i)].conj()),
        discarded,
    })
}

/// Maps the pair index `4·p1 + p2` to the superoperator's local index
/// `ket·4 + bra` with `ket = 2k1 + k2`, `bra = 2b1 + b2`.
fn pair_to_local(pair: usize) -> usize {
    let (p1, p2) = (pair / 4, pair % 4);
    let (k1, b1, k2, b2) = (p1 / 2, p1 % 2, p2 / 2, p2 % 2);
    8 * k1 + 4 * k2 + 2 * b1 + b2
}

impl MpoState {
    /// Bond-dimension-one MPO of a classical configuration.
    pub fn from_product(n_sites: usize, pattern: &str, policy: TruncationPolicy) -> Result<Self> {
        policy.validate()?;
        let sites = parse_pattern(n_sites, pattern)?;
        let tensors = sites
            .iter()
            .map(|occ| {
                let mut t = SiteTensor::zeros(1, 1);
                t.data[3 * occ.bit()] = ONE;
                t
            })
            .collect();
        Ok(Self {
            n_sites,
            tensors,
            canonical_center: None,
            policy,
            diagnostics: Vec::new(),
            pending_discard: 0.0,
        })
    }

    /// Compresses a dense state by successive SVDs (left to right).
    pub fn from_dense(state: &DensityMatrixState, policy: TruncationPolicy) -> Result<Self> {
        policy.validate()?;
        let n = state.n_sites();
        if n > MAX_DENSE_SITES {
            return Err(Error::TooManySites {
                what: "dense-to-MPO conversion",
                n_sites: n,
                limit: MAX_DENSE_SITES,
            });
        }
        let d = state.dim();
        // reorder ρ[ket, bra] into the site-interleaved index Σ_s p_s 4^(N−1−s)
        let mut interleaved = vec![ZERO; d * d];
        for ket in 0..d {
            for bra in 0..d {
                let mut idx = 0;
                for s in 0..n {
                    let shift = n - 1 - s;
                    idx = idx * 4 + 2 * ((ket >> shift) & 1) + ((bra >> shift) & 1);
                }
                interleaved[idx] = state.data()[ket * d + bra];
            }
        }
        let mut tensors = Vec::with_capacity(n);
        let mut rest = interleaved;
        let mut left = 1;
        for _ in 0..n - 1 {
            let cols = rest.len() / (left * 4);
            let theta = MatRef::from_row_major_slice(&rest, left * 4, cols);
            let split = truncated_svd(theta, &policy)?;
            let k = split.s.len();
            tensors.push(SiteTensor::from_row_major(left, k, split.u.as_ref()));
            rest = Vec::with_capacity(k * cols);
            for i in 0..k {
                for j in 0..cols {
                    rest.push(split.vh[(i, j)] * split.s[i]);
                }
            }
            left = k;
        }
        tensors.push(SiteTensor {
            left,
            right: 1,
            data: rest,
        });
        Ok(Self {
            n_sites: n,
            tensors,
            canonical_center: Some(n - 1),
            policy,
            diagnostics: Vec::new(),
            pending_discard: 0.0,
        })
    }

    pub fn n_sites(&self) -> usize {
        self.n_sites
    }

    pub fn tensors(&self) -> &[SiteTensor] {
        &self.tensors
    }

    pub fn bond_dims(&self) -> Vec<usize> {
        self.tensors[..self.n_sites - 1]
            .iter()
            .map(|t| t.right)
            .collect()
    }

    pub fn max_bond_dim(&self) -> usize {
        self.bond_dims().into_iter().max().unwrap_or(1)
    }

    pub fn canonical_center(&self) -> Option<usize> {
        self.canonical_center
    }

    pub fn policy(&self) -> &TruncationPolicy {
        &self.policy
    }

    pub fn set_policy(&mut self, policy: TruncationPolicy) -> Result<()> {
        policy.validate()?;
        self.policy = policy;
        Ok(())
    }

    /// One record per completed sweep.
    pub fn diagnostics(&self) -> &[SweepDiagnostics] {
        &self.diagnostics
    }

    fn check_site(&self, site: usize) -> Result<()> {
        if site >= self.n_sites {
            return Err(Error::SiteOutOfRange {
                site,
                n_sites: self.n_sites,
            });
        }
        Ok(())
    }

    /// Full contraction against the identity.
    pub fn trace(&self) -> C64 {
        let mut v = Mat::<C64>::from_fn(1, 1, |_, _| ONE);
        for t in &self.tensors {
            v = &v * &t.slice(IDENTITY_WEIGHTS);
        }
        v[(0, 0)]
    }

    /// Single-site channel; no truncation involved.
    pub fn apply_site_superoperator(&mut self, sup: &Superoperator, site: usize) -> Result<()> {
        if sup.support() != 1 {
            return Err(Error::DimensionMismatch {
                expected: 1,
                found: sup.support(),
            });
        }
        self.check_site(site)?;
        let t = &mut self.tensors[site];
        let (left, right) = (t.left, t.right);
        let mut out = SiteTensor::zeros(left, right);
        for &(row, col, v) in sup.nonzeros() {
            for l in 0..left {
                for r in 0..right {
                    out.data[(l * 4 + row) * right + r] += v * t.data[(l * 4 + col) * right + r];
                }
            }
        }
        *t = out;
        if self.canonical_center != Some(site) {
            self.canonical_center = None;
        }
        Ok(())
    }

    pub fn apply_site_channel(&mut self, channel: &KrausChannel, site: usize) -> Result<()> {
        self.apply_site_superoperator(&channel.superoperator(), site)
    }

    /// Two-site channel on sites `(bond, bond + 1)`, split and truncated by
    /// SVD; the canonical center ends on `bond + 1`. Returns the discarded
    /// weight fraction.
    pub fn apply_bond_superoperator(&mut self, sup: &Superoperator, bond: usize) -> Result<f64> {
        if sup.support() != 2 {
            return Err(Error::DimensionMismatch {
                expected: 2,
                found: sup.support(),
            });
        }
        if bond + 1 >= self.n_sites {
            return Err(Error::SiteOutOfRange {
                site: bond + 1,
                n_sites: self.n_sites,
            });
        }
        if !matches!(self.canonical_center, Some(c) if c == bond || c == bond + 1) {
            self.move_center(bond)?;
        }
        let (a, b) = (&self.tensors[bond], &self.tensors[bond + 1]);
        let (left, right) = (a.left, b.right);
        // θ rows (l, p1), cols (p2, r)
        let theta = a.as_left_matrix() * b.as_right_matrix();
        let cols = 4 * right;
        let mut updated = Mat::<C64>::zeros(left * 4, cols);
        let mut local_to_pair = [0usize; 16];
        for pair in 0..16 {
            local_to_pair[pair_to_local(pair)] = pair;
        }
        for &(row, col, v) in sup.nonzeros() {
            let (out_pair, in_pair) = (local_to_pair[row], local_to_pair[col]);
            let (o1, o2) = (out_pair / 4, out_pair % 4);
            let (i1, i2) = (in_pair / 4, in_pair % 4);
            for l in 0..left {
                for r in 0..right {
                    updated[(l * 4 + o1, o2 * right + r)] += v * theta[(l * 4 + i1, i2 * right + r)];
                }
            }
        }
        let split = truncated_svd(updated.as_ref(), &self.policy)?;
        let k = split.s.len();
        self.tensors[bond] = SiteTensor::from_row_major(left, k, split.u.as_ref());
        let sv = Mat::from_fn(k, cols, |i, j| split.vh[(i, j)] * split.s[i]);
        self.tensors[bond + 1] = SiteTensor::from_row_major(k, right, sv.as_ref());
        self.canonical_center = Some(bond + 1);
        self.pending_discard += split.discarded;
        Ok(split.discarded)
    }

    pub fn apply_bond_channel(&mut self, channel: &KrausChannel, bond: usize) -> Result<f64> {
        self.apply_bond_superoperator(&channel.superoperator(), bond)
    }

    fn gauge_policy(&self) -> TruncationPolicy {
        TruncationPolicy {
            svd_cutoff: GAUGE_CUTOFF.min(self.policy.svd_cutoff),
            ..self.policy
        }
    }

    /// Moves the orthogonality center to `target`. Only `chi_max` and
    /// rounding noise limit these splits; the physical truncation happens in
    /// the bond updates. Establishes canonical form from scratch when needed.
    pub fn move_center(&mut self, target: usize) -> Result<()> {
        self.check_site(target)?;
        let (from_left, from_right) = match self.canonical_center {
            Some(c) => (c, c),
            None => (0, self.n_sites - 1),
        };
        for s in from_left..target {
            self.shift_right(s)?;
        }
        for s in (target + 1..=from_right).rev() {
            self.shift_left(s)?;
        }
        self.canonical_center = Some(target);
        Ok(())
    }

    fn shift_right(&mut self, site: usize) -> Result<()> {
        let t = &self.tensors[site];
        let left = t.left;
        let split = truncated_svd(t.as_left_matrix(), &self.gauge_policy())?;
        let k = split.s.len();
        let sv = Mat::from_fn(k, split.vh.ncols(), |i, j| split.vh[(i, j)] * split.s[i]);
        self.tensors[site] = SiteTensor::from_row_major(left, k, split.u.as_ref());
        let next = &self.tensors[site + 1];
        let right = next.right;
        let merged = &sv * next.as_right_matrix();
        self.tensors[site + 1] = SiteTensor::from_row_major(k, right, merged.as_ref());
        self.pending_discard += split.discarded;
        Ok(())
    }

    fn shift_left(&mut self, site: usize) -> Result<()> {
        let t = &self.tensors[site];
        let right = t.right;
        let split = truncated_svd(t.as_right_matrix(), &self.gauge_policy())?;
        let k = split.s.len();
        let us = Mat::from_fn(split.u.nrows(), k, |i, j| split.u[(i, j)] * split.s[j]);
        self.tensors[site] = SiteTensor::from_row_major(k, right, split.vh.as_ref());
        let prev = &self.tensors[site - 1];
        let left = prev.left;
        let merged = prev.as_left_matrix() * &us;
        self.tensors[site - 1] = SiteTensor::from_row_major(left, k, merged.as_ref());
        self.pending_discard += split.discarded;
        Ok(())
    }

    /// One global update (left drive, bulk bonds left to right, right drive),
    /// then re-canonicalization to site 0 and trace renormalization.
    pub fn sweep(&mut self, channels: &SweepChannels) -> Result<()> {
        if self.n_sites < 2 {
            return Err(Error::TooFewSites {
                min: 2,
                found: self.n_sites,
            });
        }
        self.pending_discard = 0.0;
        self.move_center(0)?;
        self.apply_site_superoperator(&channels.left_super, 0)?;
        for bond in 0..self.n_sites - 1 {
            self.apply_bond_superoperator(&channels.bulk_super, bond)?;
        }
        self.apply_site_superoperator(&channels.right_super, self.n_sites - 1)?;
        self.move_center(0)?;
        let tr = self.trace();
        if self.policy.renormalize_trace {
            if tr == ZERO {
                return Err(Error::Degenerate("trace vanished".into()));
            }
            self.tensors[0].scale(ONE / tr);
        }
        self.diagnostics.push(SweepDiagnostics {
            sweep: self.diagnostics.len() + 1,
            max_bond_dim: self.max_bond_dim(),
            discarded_weight: self.pending_discard,
            trace_drift: (tr - ONE).norm(),
        });
        Ok(())
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

    /// `L[s]`: contraction of sites `< s` with the identity, as a row vector.
    fn left_environments(&self) -> Vec<Mat<C64>> {
        let mut envs = Vec::with_capacity(self.n_sites);
        let mut v = Mat::<C64>::from_fn(1, 1, |_, _| ONE);
        for t in &self.tensors {
            envs.push(v.clone());
            v = &v * &t.slice(IDENTITY_WEIGHTS);
        }
        envs
    }

    /// `R[s]`: contraction of sites `> s` with the identity, as a column vector.
    fn right_environments(&self) -> Vec<Mat<C64>> {
        let mut envs = vec![Mat::<C64>::zeros(0, 0); self.n_sites];
        let mut v = Mat::<C64>::from_fn(1, 1, |_, _| ONE);
        for (s, t) in self.tensors.iter().enumerate().rev() {
            envs[s] = v.clone();
            v = &t.slice(IDENTITY_WEIGHTS) * &v;
        }
        envs
    }

    pub fn occupation(&self, site: usize) -> Result<f64> {
        self.check_site(site)?;
        Ok(self.density_profile()[site])
    }

    /// `⟨n_i⟩` for every site, normalized by the trace.
    pub fn density_profile(&self) -> Vec<f64> {
        let (lefts, rights) = (self.left_environments(), self.right_environments());
        let tr = self.trace();
        self.tensors
            .iter()
            .enumerate()
            .map(|(s, t)| {
                let v = &lefts[s] * &t.slice(OCCUPIED_WEIGHTS) * &rights[s];
                (v[(0, 0)] / tr).re
            })
            .collect()
    }

    pub fn mean_density(&self) -> f64 {
        let p = self.density_profile();
        p.iter().sum::<f64>() / p.len() as f64
    }

    /// Raw (unsymmetrized, unnormalized) two-site contraction, `i < j`.
    fn raw_two_site(&self, i: usize, j: usize) -> Result<CMatrix> {
        if i >= j {
            return Err(Error::BadSiteList(format!("need i < j, got ({i}, {j})")));
        }
        self.check_site(j)?;
        let (lefts, rights) = (self.left_environments(), self.right_environments());
        let mut middle = Mat::<C64>::identity(self.tensors[i].right, self.tensors[i].right);
        for t in &self.tensors[i + 1..j] {
            middle = &middle * &t.slice(IDENTITY_WEIGHTS);
        }
        let tail: Vec<Mat<C64>> = (0..4)
            .map(|pj| &self.tensors[j].component(pj) * &rights[j])
            .collect();
        let mut out = CMatrix::zeros(4, 4);
        for pi in 0..4 {
            let head = &lefts[i] * &self.tensors[i].component(pi) * &middle;
            for (pj, t) in tail.iter().enumerate() {
                let v = (&head * t)[(0, 0)];
                let (ki, bi, kj, bj) = (pi / 2, pi % 2, pj / 2, pj % 2);
                out[(2 * ki + kj, 2 * bi + bj)] = v;
            }
        }
        Ok(out)
    }

    /// Hermitized, trace-normalized two-site state plus its raw quality.
    pub fn two_site_rdm_checked(&self, i: usize, j: usize) -> Result<(CMatrix, RdmQuality)> {
        let raw = self.raw_two_site(i, j)?;
        let tr = crate::linalg::trace(&raw);
        if tr == ZERO {
            return Err(Error::Degenerate("two-site trace vanished".into()));
        }
        let raw = raw.map(|z| z / tr);
        let defect = hermiticity_defect(&raw);
        let rdm = hermitize(&raw);
        let min_eig = hermitian_eigenvalues(&rdm)[0];
        if min_eig < -NEGATIVITY_WARN_TOL {
            log::warn!(
                "two-site state ({i}, {j}) has eigenvalue {min_eig:.3e}; \
                 truncation (chi_max = {}) is damaging positivity",
                self.policy.chi_max
            );
        }
        Ok((
            rdm,
            RdmQuality {
                hermiticity_defect: defect,
                min_eigenvalue: min_eig,
            },
        ))
    }

    pub fn two_site_rdm(&self, i: usize, j: usize) -> Result<CMatrix> {
        Ok(self.two_site_rdm_checked(i, j)?.0)
    }

    pub fn snapshot(&self) -> Snapshot {
        let (a, b) = central_pair(self.n_sites);
        let raw = self
            .raw_two_site(a, b)
            .expect("central pair is always valid");
        let tr = crate::linalg::trace(&raw);
        Snapshot {
            profile: self.density_profile(),
            central_rdm: hermitize(&raw.map(|z| z / tr)),
        }
    }

    /// `tr((ρ^Γ)^n)` for `n ≤ max_order`, with Γ transposing sites `< cut`.
    pub fn ppt_moments(&self, cut: usize, max_order: usize) -> Result<PptMoments> {
        if cut == 0 || cut >= self.n_sites {
            return Err(Error::SiteOutOfRange {
                site: cut,
                n_sites: self.n_sites,
            });
        }
        if !(2..=3).contains(&max_order) {
            return Err(Error::Unsupported(format!(
                "PPT moments of order {max_order}; only 2 and 3 are implemented"
            )));
        }
        // X[s][a][b]: the (a, b) operator component of ρ^Γ at site s
        let comps: Vec<[[Mat<C64>; 2]; 2]> = self
            .tensors
            .iter()
            .enumerate()
            .map(|(s, t)| {
                let swap = s < cut;
                std::array::from_fn(|a| {
                    std::array::from_fn(|b| {
                        if swap {
                            t.component(2 * b + a)
                        } else {
                            t.component(2 * a + b)
                        }
                    })
                })
            })
            .collect();
        let p1 = self.trace().re;
        let p2 = second_moment(&comps);
        let p3 = if max_order >= 3 {
            third_moment(&comps)
        } else {
            f64::NAN
        };
        Ok(PptMoments { p1, p2, p3 })
    }

    /// Full contraction to a dense density matrix (bit order as the exact
    /// backend).
    pub fn to_dense(&self) -> Result<DensityMatrixState> {
        let n = self.n_sites;
        if n > MAX_DENSE_SITES {
            return Err(Error::TooManySites {
                what: "MPO-to-dense conversion",
                n_sites: n,
                limit: MAX_DENSE_SITES,
            });
        }
        // rows: interleaved physical index so far, cols: open bond
        let mut acc = Mat::<C64>::from_fn(1, 1, |_, _| ONE);
        for t in &self.tensors {
            let prod = &acc * t.as_right_matrix();
            // (P, (p, r)) → ((P, p), r)
            let rows = acc.nrows();
            acc = Mat::from_fn(rows * 4, t.right, |row, r| prod[(row / 4, (row % 4) * t.right + r)]);
        }
        let d = 1usize << n;
        let mut data = vec![ZERO; d * d];
        for (idx, z) in (0..acc.nrows()).map(|i| (i, acc[(i, 0)])) {
            let (mut ket, mut bra) = (0, 0);
            for s in 0..n {
                let p = (idx >> (2 * (n - 1 - s))) & 3;
                ket = (ket << 1) | (p >> 1);
                bra = (bra << 1) | (p & 1);
            }
            data[ket * d + bra] = z;
        }
        DensityMatrixState::from_vectorized(n, data)
    }
}

/// `tr(X²) = Π_s Σ_{a,b} X_s[a,b] ⊗ X_s[b,a]` contracted left to right.
fn second_moment(comps: &[[[Mat<C64>; 2]; 2]]) -> f64 {
    let mut env = Mat::<C64>::from_fn(1, 1, |_, _| ONE);
    for x in comps {
        let mut next = Mat::<C64>::zeros(x[0][0].ncols(), x[0][0].ncols());
        for a in 0..2 {
            for b in 0..2 {
                next += x[a][b].transpose() * &env * &x[b][a];
            }
        }
        env = next;
    }
    env[(0, 0)].re
}

/// `tr(X³)` with a three-index environment `E[l1][l2][l3]`, contracted one
/// copy at a time so every step is a matrix product.
fn third_moment(comps: &[[[Mat<C64>; 2]; 2]]) -> f64 {
    // env stored as rows l1, cols (l2, l3)
    let mut env = Mat::<C64>::from_fn(1, 1, |_, _| ONE);
    for x in comps {
        let (dl, dr) = (x[0][0].nrows(), x[0][0].ncols());
        // step 1: F_ab[r1, (l2, l3)] = Σ_l1 X_ab[l1, r1] E[l1, (l2, l3)]
        let f: [[Mat<C64>; 2]; 2] =
            std::array::from_fn(|a| std::array::from_fn(|b| x[a][b].transpose() * &env));
        // step 2: G_ac[(r1, l3), r2] = Σ_b Σ_l2 F_ab[r1, (l2, l3)] X_bc[l2, r2]
        let regroup = |m: &Mat<C64>| Mat::from_fn(dr * dl, dl, |row, l2| m[(row / dl, l2 * dl + row % dl)]);
        let fr: [[Mat<C64>; 2]; 2] = std::array::from_fn(|a| std::array::from_fn(|b| regroup(&f[a][b])));
        let g: [[Mat<C64>; 2]; 2] = std::array::from_fn(|a| {
            std::array::from_fn(|c| &fr[a][0] * &x[0][c] + &fr[a][1] * &x[1][c])
        })
        ;
        // step 3: E'[(r1, r2), r3] = Σ_{a,c} Σ_l3 G_ac[(r1, l3), r2] X_ca[l3, r3]
        let mut next = Mat::<C64>::zeros(dr * dr, dr);
        for a in 0..2 {
            for c in 0..2 {
                let gr = Mat::from_fn(dr * dr, dl, |row, l3| g[a][c][((row / dr) * dl + l3, row % dr)]);
                next += &gr * &x[c][a];
            }
        }
        env = Mat::from_fn(dr, dr * dr, |r1, col| next[(r1 * dr + col / dr, col % dr)]);
    }
    env[(0, 0)].re
}

impl TwoSiteStates for MpoState {
    fn n_sites(&self) -> usize {
        self.n_sites
    }

    fn two_site_rdm(&self, i: usize, j: usize) -> Result<CMatrix> {
        MpoState::two_site_rdm(self, i, j)
    }
}

/// Tensor-network counterpart of [`crate::exact::evolve_to_ness`], with the
/// same stopping rule plus a stall guard (see [`STALL_WINDOW`]).
pub fn evolve_mpo_to_ness(
    mut state: MpoState,
    params: &ModelParams,
    tol: f64,
    max_sweeps: usize,
) -> Result<(MpoState, ConvergenceReport)> {
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
    let report = iterate_until_stationary(tol, max_sweeps, Some(STALL_WINDOW), initial, || {
        state.sweep(&channels)?;
        Ok::<_, Error>(state.snapshot())
    })?;
    Ok((state, report))
}

/// Half-system PPT moments, the cut at `⌊N/2⌋`.
pub fn half_system_ppt_moments(state: &MpoState) -> Result<PptMoments> {
    let bip = Bipartition::half(state.n_sites())?;
    state.ppt_moments(bip.left_sites.len(), 3)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exact::evolve_to_ness;
    use crate::linalg::trace_distance;
    use crate::model::{bulk_channel, left_boundary_channel};

    fn policy() -> TruncationPolicy {
        TruncationPolicy::default()
    }

    #[test]
    fn product_state_contractions() {
        let m = MpoState::from_product(6, "•∘•∘•∘", policy()).unwrap();
        assert_eq!(m.bond_dims(), vec![1; 5]);
        assert!((m.trace() - ONE).norm() < 1e-15);
        assert_eq!(m.density_profile(), vec![1.0, 0.0, 1.0, 0.0, 1.0, 0.0]);
        let dense = m.to_dense().unwrap();
        assert_eq!(dense.data(), DensityMatrixState::init(6, "•∘•∘•∘").unwrap().data());
    }

    #[test]
    fn pair_index_mapping_is_a_permutation() {
        let mut seen = [false; 16];
        for pair in 0..16 {
            seen[pair_to_local(pair)] = true;
        }
        assert!(seen.iter().all(|&b| b));
        // p1 = 2 (ket 1, bra 0), p2 = 1 (ket 0, bra 1): ket = 10, bra = 01
        assert_eq!(pair_to_local(4 * 2 + 1), 0b10 * 4 + 0b01);
    }

    #[test]
    fn left_drive_on_empty_chain() {
        let mut m = MpoState::from_product(4, "empty", policy()).unwrap();
        m.apply_site_channel(&left_boundary_channel(0.3).unwrap(), 0)
            .unwrap();
        assert!((m.occupation(0).unwrap() - 0.3).abs() < 1e-14);
    }

    #[test]
    fn identity_bond_channel_keeps_state() {
        let mut m = MpoState::from_product(4, "•∘•∘", policy()).unwrap();
        let before = m.to_dense().unwrap();
        m.apply_bond_channel(&KrausChannel::identity(2), 1).unwrap();
        let after = m.to_dense().unwrap();
        let diff = before
            .data()
            .iter()
            .zip(after.data())
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max);
        assert!(diff < 1e-12);
    }

    #[test]
    fn bulk_channel_matches_dense() {
        let ch = bulk_channel(0.75, std::f64::consts::FRAC_PI_4).unwrap();
        let mut m = MpoState::from_product(4, "∘•∘∘", policy()).unwrap();
        m.apply_bond_channel(&ch, 1).unwrap();
        let mut d = DensityMatrixState::init(4, "∘•∘∘").unwrap();
        d.apply_channel(&ch, 1).unwrap();
        let a = m.two_site_rdm(1, 2).unwrap();
        let b = d.reduced_density_matrix(&[1, 2]).unwrap();
        assert!(trace_distance(&a, &b) < 1e-10);
    }

    #[test]
    fn fixed_point_with_everything_off() {
        let params = ModelParams::new(4, 0.0, 0.0, 0.0, 0.0).unwrap();
        let m = MpoState::from_product(4, "•∘∘•", policy()).unwrap();
        let (m, report) = evolve_mpo_to_ness(m, &params, 1e-9, 10).unwrap();
        assert!(report.converged);
        assert_eq!(report.sweeps_run, 1);
        assert_eq!(m.density_profile(), vec![1.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn ness_matches_exact_backend() {
        let params = ModelParams::new(6, 0.3, 0.7, 0.75, std::f64::consts::FRAC_PI_4).unwrap();
        let (d, _) =
            evolve_to_ness(DensityMatrixState::init(6, "empty").unwrap(), &params, 1e-11, 100_000).unwrap();
        let m = MpoState::from_product(6, "empty", policy()).unwrap();
        let (m, report) = evolve_mpo_to_ness(m, &params, 1e-11, 100_000).unwrap();
        assert!(report.converged);
        for (a, b) in m.density_profile().iter().zip(d.density_profile()) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
        let dense = d.to_matrix();
        let bip = Bipartition::half(6).unwrap();
        let want = crate::correlations::ppt_moments_dense(&dense, &bip).unwrap();
        let got = half_system_ppt_moments(&m).unwrap();
        // cutoff 1e-12 costs about 1e-8 here
        assert!((want.p2 - got.p2).abs() < 1e-7);
        assert!((want.p3 - got.p3).abs() < 1e-7);
        assert!((got.p1 - 1.0).abs() < 1e-8);
    }

    #[test]
    fn maximally_mixed_pair_moments() {
        let quarter = CMatrix::identity(4, 4).map(|z| z * 0.25);
        let d = DensityMatrixState::from_matrix(&quarter).unwrap();
        let m = MpoState::from_dense(&d, policy()).unwrap();
        let pm = m.ppt_moments(1, 3).unwrap();
        assert!((pm.p2 - 0.25).abs() < 1e-14);
        assert!((pm.p3 - 1.0 / 16.0).abs() < 1e-14);
        assert!((pm.ratio() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn order_four_is_refused() {
        let m = MpoState::from_product(4, "empty", policy()).unwrap();
        assert!(matches!(m.ppt_moments(2, 4), Err(Error::Unsupported(_))));
    }

    #[test]
    fn dense_conversion_refuses_large_chains() {
        let m = MpoState::from_product(10, "empty", policy()).unwrap();
        assert!(matches!(m.to_dense(), Err(Error::TooManySites { .. })));
    }

    #[test]
    fn bond_one_policy_stays_normalized() {
        let params = ModelParams::new(6, 0.4, 0.6, 0.75, 0.5).unwrap();
        let p = TruncationPolicy::new(1, 0.0).unwrap();
        let mut m = MpoState::from_product(6, "empty", p).unwrap();
        for _ in 0..20 {
            m.sweep_with(&params).unwrap();
        }
        assert_eq!(m.max_bond_dim(), 1);
        assert!((m.trace() - ONE).norm() < 1e-12);
    }
}
