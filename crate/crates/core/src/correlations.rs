//! Correlation measures on dense states and two-site reduced states.

use nalgebra::{Matrix3, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exact::DensityMatrixState;
use crate::linalg::{hermiticity_defect, hermitian_eigenvalues, kron, psd_sqrt, trace, CMatrix, C64, I, ONE, ZERO};

/// Inputs with a larger anti-Hermitian part are rejected.
pub const HERMITICITY_TOL: f64 = 1e-8;

/// Split of the lattice into a transposed (left) block and the rest.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Bipartition {
    pub n_sites: usize,
    pub left_sites: Vec<usize>,
    pub right_sites: Vec<usize>,
}

impl Bipartition {
    pub fn new(n_sites: usize, left_sites: &[usize]) -> Result<Self> {
        let mut left = left_sites.to_vec();
        left.sort_unstable();
        left.dedup();
        if left.len() != left_sites.len() || left.iter().any(|&s| s >= n_sites) {
            return Err(Error::BadSiteList(format!(
                "{left_sites:?} is not a set of sites of a {n_sites}-site lattice"
            )));
        }
        let right = (0..n_sites).filter(|s| !left.contains(s)).collect();
        Ok(Self {
            n_sites,
            left_sites: left,
            right_sites: right,
        })
    }

    /// Sites `0 .. cut` against `cut .. N`.
    pub fn at_cut(n_sites: usize, cut: usize) -> Result<Self> {
        if cut == 0 || cut >= n_sites {
            return Err(Error::BadSiteList(format!(
                "cut {cut} does not split a {n_sites}-site lattice"
            )));
        }
        Self::new(n_sites, &(0..cut).collect::<Vec<_>>())
    }

    /// Cut at `⌊N/2⌋`.
    pub fn half(n_sites: usize) -> Result<Self> {
        Self::at_cut(n_sites, n_sites / 2)
    }

    fn left_mask(&self) -> usize {
        self.left_sites
            .iter()
            .fold(0, |m, &s| m | (1 << (self.n_sites - 1 - s)))
    }
}

/// Transposes the indices of the left block.
pub fn partial_transpose(rho: &CMatrix, bipartition: &Bipartition) -> Result<CMatrix> {
    let dim = 1usize << bipartition.n_sites;
    if rho.nrows() != dim || rho.ncols() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            found: rho.nrows(),
        });
    }
    let mask = bipartition.left_mask();
    Ok(CMatrix::from_fn(dim, dim, |r, c| {
        let r0 = (r & !mask) | (c & mask);
        let c0 = (c & !mask) | (r & mask);
        rho[(r0, c0)]
    }))
}

fn check_hermitian(rho: &CMatrix) -> Result<()> {
    let defect = hermiticity_defect(rho);
    if defect > HERMITICITY_TOL {
        Err(Error::NonHermitian(defect))
    } else {
        Ok(())
    }
}

fn pt_spectrum(rho: &CMatrix, bipartition: &Bipartition) -> Result<Vec<f64>> {
    check_hermitian(rho)?;
    Ok(hermitian_eigenvalues(&partial_transpose(rho, bipartition)?))
}

/// `(‖ρ^Γ‖₁ − 1)/2`
pub fn negativity(rho: &CMatrix, bipartition: &Bipartition) -> Result<f64> {
    let ev = pt_spectrum(rho, bipartition)?;
    let n = (ev.iter().map(|x| x.abs()).sum::<f64>() - 1.0) / 2.0;
    Ok(if (-1e-12..0.0).contains(&n) { 0.0 } else { n })
}

/// Half-system negativity of a dense state.
pub fn half_system_negativity(state: &DensityMatrixState) -> Result<f64> {
    negativity(&state.to_matrix(), &Bipartition::half(state.n_sites())?)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PptMoments {
    pub p1: f64,
    pub p2: f64,
    pub p3: f64,
}

impl PptMoments {
    /// `p₂²/p₃`; above one certifies a non-PPT state.
    pub fn ratio(&self) -> f64 {
        self.p2 * self.p2 / self.p3
    }
}

/// `p_n = tr((ρ^Γ)^n)` for n = 1, 2, 3 from the spectrum of `ρ^Γ`.
pub fn ppt_moments_dense(rho: &CMatrix, bipartition: &Bipartition) -> Result<PptMoments> {
    let ev = pt_spectrum(rho, bipartition)?;
    Ok(PptMoments {
        p1: ev.iter().sum(),
        p2: ev.iter().map(|x| x * x).sum(),
        p3: ev.iter().map(|x| x * x * x).sum(),
    })
}

/// Peres–Horodecki test, exact for two qubits.
pub fn two_qubit_ppt_separable(rdm: &CMatrix) -> Result<bool> {
    let bip = Bipartition::new(2, &[0])?;
    Ok(pt_spectrum(rdm, &bip)?[0] >= -1e-10)
}

/// `Σ_{i≠j} |ρ_ij|` in the occupation basis.
pub fn l1_coherence(rdm: &CMatrix) -> f64 {
    let mut total = 0.0;
    for r in 0..rdm.nrows() {
        for c in 0..rdm.ncols() {
            if r != c {
                total += rdm[(r, c)].norm();
            }
        }
    }
    total
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum MeasuredQubit {
    First,
    Second,
}

pub fn pauli_matrices() -> [CMatrix; 3] {
    [
        CMatrix::from_row_slice(2, 2, &[ZERO, ONE, ONE, ZERO]),
        CMatrix::from_row_slice(2, 2, &[ZERO, -I, I, ZERO]),
        CMatrix::from_row_slice(2, 2, &[ONE, ZERO, ZERO, -ONE]),
    ]
}

/// Local quantum uncertainty of a two-qubit state,
/// `1 − λ_max(W)` with `W_ab = tr[√ρ (σ_a⊗1) √ρ (σ_b⊗1)]`; the Pauli
/// operators act on `measured`, the identity on the other qubit. Slightly
/// negative eigenvalues (truncation damage) are clipped before the square root.
pub fn lqu(rdm: &CMatrix, measured: MeasuredQubit) -> Result<f64> {
    if rdm.nrows() != 4 || rdm.ncols() != 4 {
        return Err(Error::DimensionMismatch {
            expected: 4,
            found: rdm.nrows(),
        });
    }
    let tr = trace(rdm);
    if (tr - ONE).norm() > 1e-6 {
        return Err(Error::BadTrace(tr.re));
    }
    let (root, min_eig) = psd_sqrt(rdm);
    if min_eig < -1e-8 {
        log::debug!("lqu: clipped negative eigenvalue {min_eig:.3e}");
    }
    let id = CMatrix::identity(2, 2);
    let ops: Vec<CMatrix> = pauli_matrices()
        .iter()
        .map(|s| match measured {
            MeasuredQubit::First => kron(s, &id),
            MeasuredQubit::Second => kron(&id, s),
        })
        .collect();
    let sandwiched: Vec<CMatrix> = ops.iter().map(|a| &root * a * &root).collect();
    let w = Matrix3::from_fn(|a, b| trace(&(&sandwiched[a] * &ops[b])).re);
    let w = (w + w.transpose()) * 0.5;
    let top = SymmetricEigen::new(w)
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    Ok((1.0 - top).clamp(0.0, 1.0))
}

/// Which qubit of a pair `(j, c)` the LQU measurement acts on.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LquConvention {
    /// Measure the central site (default).
    #[default]
    Center,
    /// Measure the partner site `j`.
    Partner,
}

/// Anything that can hand out two-site reduced states.
pub trait TwoSiteStates {
    fn n_sites(&self) -> usize;
    /// Reduced state of sites `i < j`, `i` in the most significant qubit.
    fn two_site_rdm(&self, i: usize, j: usize) -> Result<CMatrix>;
}

impl TwoSiteStates for DensityMatrixState {
    fn n_sites(&self) -> usize {
        DensityMatrixState::n_sites(self)
    }

    fn two_site_rdm(&self, i: usize, j: usize) -> Result<CMatrix> {
        self.reduced_density_matrix(&[i, j])
    }
}

/// Default central site `⌊N/2⌋` (0-indexed).
pub fn central_site(n_sites: usize) -> usize {
    n_sites / 2
}

fn max_over_partners(
    state: &impl TwoSiteStates,
    center: usize,
    mut measure: impl FnMut(&CMatrix, usize) -> Result<f64>,
) -> Result<(f64, usize)> {
    let n = state.n_sites();
    if center >= n {
        return Err(Error::SiteOutOfRange { site: center, n_sites: n });
    }
    let mut best: Option<(f64, usize)> = None;
    for j in (0..n).filter(|&j| j != center) {
        let rdm = state.two_site_rdm(j.min(center), j.max(center))?;
        let v = measure(&rdm, j)?;
        // strict comparison keeps the smallest j on ties
        if best.is_none_or(|(b, _)| v > b) {
            best = Some((v, j));
        }
    }
    best.ok_or(Error::TooFewSites { min: 2, found: n })
}

/// Largest two-site LQU between the central site and any other site.
pub fn max_two_site_lqu(
    state: &impl TwoSiteStates,
    center: usize,
    convention: LquConvention,
) -> Result<(f64, usize)> {
    max_over_partners(state, center, |rdm, j| {
        let center_first = center < j;
        let measured = match (convention, center_first) {
            (LquConvention::Center, true) | (LquConvention::Partner, false) => MeasuredQubit::First,
            _ => MeasuredQubit::Second,
        };
        lqu(rdm, measured)
    })
}

/// Largest two-site l1-coherence between the central site and any other site.
pub fn max_two_site_coherence(state: &impl TwoSiteStates, center: usize) -> Result<(f64, usize)> {
    max_over_partners(state, center, |rdm, _| Ok(l1_coherence(rdm)))
}

/// True when every pair of sites is PPT.
pub fn all_two_site_separable(state: &impl TwoSiteStates) -> Result<bool> {
    let n = state.n_sites();
    for i in 0..n {
        for j in i + 1..n {
            if !two_qubit_ppt_separable(&state.two_site_rdm(i, j)?)? {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CorrelationRecord {
    pub negativity: Option<f64>,
    pub lqu_max: Option<f64>,
    pub lqu_argmax_site: Option<usize>,
    pub coherence_max: Option<f64>,
    pub coherence_argmax_site: Option<usize>,
    pub ppt_ratio: Option<f64>,
}

/// `|ψ⟩⟨ψ|` for a state vector.
pub fn pure_state(psi: &[C64]) -> CMatrix {
    let d = psi.len();
    CMatrix::from_fn(d, d, |r, c| psi[r] * psi[c].conj())
}
