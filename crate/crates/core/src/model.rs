//! Gates of the transport automaton and the Kraus channels they induce.
//!
//! Basis convention used everywhere in the crate: qubit value 0 is a vacant
//! site, 1 an occupied one, and the most significant bit of a basis index is
//! the leftmost qubit of the gate's site span. Inside a cluster the ancilla is
//! the leftmost (most significant) qubit.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{check_probability, Error, Result};
use crate::linalg::{kron, max_abs, unitarity_defect, CMatrix, C64, I, ONE, ZERO};

/// Gates closer to unitary than this are accepted by [`derive_kraus`].
pub const UNITARITY_TOL: f64 = 1e-12;

/// Largest lattice for which a dense Lindblad generator is built.
pub const MAX_LINDBLAD_SITES: usize = 6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub n_sites: usize,
    /// Injection probability at the left boundary.
    pub alpha: f64,
    /// Ejection probability at the right boundary.
    pub beta: f64,
    /// Bulk hopping probability.
    pub tau: f64,
    /// Coherent hopping angle; stored as given, never wrapped.
    pub omega: f64,
}

impl ModelParams {
    pub fn new(n_sites: usize, alpha: f64, beta: f64, tau: f64, omega: f64) -> Result<Self> {
        let params = Self {
            n_sites,
            alpha,
            beta,
            tau,
            omega,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_sites < 2 {
            return Err(Error::TooFewSites {
                min: 2,
                found: self.n_sites,
            });
        }
        check_probability("alpha", self.alpha)?;
        check_probability("beta", self.beta)?;
        check_probability("tau", self.tau)?;
        if !self.omega.is_finite() {
            return Err(Error::ParameterOutOfRange {
                name: "omega",
                value: self.omega,
                range: "finite reals",
            });
        }
        Ok(())
    }

    /// Same parameters on a lattice of a different size.
    pub fn with_sites(&self, n_sites: usize) -> Self {
        Self { n_sites, ..*self }
    }

    pub fn is_classical(&self) -> bool {
        self.omega == 0.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Occupation {
    Vacant,
    Occupied,
}

impl Occupation {
    pub fn bit(self) -> usize {
        match self {
            Occupation::Vacant => 0,
            Occupation::Occupied => 1,
        }
    }

    pub fn from_bit(bit: usize) -> Self {
        if bit & 1 == 0 {
            Occupation::Vacant
        } else {
            Occupation::Occupied
        }
    }
}

impl fmt::Display for Occupation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Occupation::Vacant => write!(f, "∘"),
            Occupation::Occupied => write!(f, "•"),
        }
    }
}

/// Parses an initial configuration: `"empty"`, `"full"`, or one character per
/// site (`∘ ○ 0 .` vacant, `• ● 1 x` occupied).
pub fn parse_pattern(n_sites: usize, pattern: &str) -> Result<Vec<Occupation>> {
    let sites = match pattern.trim() {
        "empty" => vec![Occupation::Vacant; n_sites],
        "full" => vec![Occupation::Occupied; n_sites],
        p => p
            .chars()
            .map(|c| match c {
                '∘' | '○' | '0' | '.' => Ok(Occupation::Vacant),
                '•' | '●' | '1' | 'x' => Ok(Occupation::Occupied),
                other => Err(Error::BadPattern(format!(
                    "unexpected character {other:?} in {p:?}"
                ))),
            })
            .collect::<Result<Vec<_>>>()?,
    };
    if sites.len() != n_sites {
        return Err(Error::BadPattern(format!(
            "{pattern:?} describes {} sites, lattice has {n_sites}",
            sites.len()
        )));
    }
    if n_sites == 0 {
        return Err(Error::BadPattern("empty lattice".into()));
    }
    Ok(sites)
}

/// Basis index of a configuration, leftmost site in the most significant bit.
pub fn config_index(sites: &[Occupation]) -> usize {
    sites.iter().fold(0, |acc, o| (acc << 1) | o.bit())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum QubitRole {
    Ancilla,
    SystemLeft,
    SystemRight,
    /// The single system qubit of a boundary cluster.
    System,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GateMatrix {
    entries: CMatrix,
    site_span: Vec<QubitRole>,
}

impl GateMatrix {
    pub fn new(entries: CMatrix, site_span: Vec<QubitRole>) -> Result<Self> {
        let dim = 1usize << site_span.len();
        if entries.nrows() != dim || entries.ncols() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: entries.nrows(),
            });
        }
        Ok(Self { entries, site_span })
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn entries(&self) -> &CMatrix {
        &self.entries
    }

    pub fn site_span(&self) -> &[QubitRole] {
        &self.site_span
    }

    /// Amplitude ⟨row| G |col⟩.
    pub fn amplitude(&self, row: usize, col: usize) -> C64 {
        self.entries[(row, col)]
    }

    pub fn unitarity_defect(&self) -> f64 {
        unitarity_defect(&self.entries)
    }

    fn ancilla_position(&self) -> Option<usize> {
        self.site_span.iter().position(|r| *r == QubitRole::Ancilla)
    }
}

/// Coherent hop in the single-particle sector, identity on |∘∘⟩ and |••⟩.
pub fn build_u_gate(omega: f64) -> GateMatrix {
    let (s, c) = omega.sin_cos();
    let mut m = CMatrix::identity(4, 4);
    // index = 2 * left + right
    m[(1, 1)] = C64::new(c, 0.0);
    m[(2, 1)] = C64::new(0.0, -s);
    m[(2, 2)] = C64::new(c, 0.0);
    m[(1, 2)] = C64::new(0.0, -s);
    GateMatrix {
        entries: m,
        site_span: vec![QubitRole::SystemLeft, QubitRole::SystemRight],
    }
}

/// Two-level rotation `1 + i√p (|a⟩⟨b| + |b⟩⟨a|) − (1 − √(1−p)) (|a⟩⟨a| + |b⟩⟨b|)`.
fn swap_rotation(dim: usize, a: usize, b: usize, p: f64) -> CMatrix {
    let hop = I * p.sqrt();
    let damp = C64::new(1.0 - (1.0 - p).sqrt(), 0.0);
    let mut m = CMatrix::identity(dim, dim);
    m[(a, b)] += hop;
    m[(b, a)] += hop;
    m[(a, a)] -= damp;
    m[(b, b)] -= damp;
    m
}

/// Ancilla-assisted bulk hop; qubit order (ancilla, system-left, system-right).
pub fn build_d_gate(tau: f64) -> Result<GateMatrix> {
    check_probability("tau", tau)?;
    // |∘;•∘⟩ = 0b010, |•;∘•⟩ = 0b101
    Ok(GateMatrix {
        entries: swap_rotation(8, 0b010, 0b101, tau),
        site_span: vec![
            QubitRole::Ancilla,
            QubitRole::SystemLeft,
            QubitRole::SystemRight,
        ],
    })
}

/// Injection gate on the first site; qubit order (ancilla, system).
pub fn build_boundary_gate_left(alpha: f64) -> Result<GateMatrix> {
    check_probability("alpha", alpha)?;
    // |∘∘⟩ = 0b00, |••⟩ = 0b11
    Ok(GateMatrix {
        entries: swap_rotation(4, 0b11, 0b00, alpha),
        site_span: vec![QubitRole::Ancilla, QubitRole::System],
    })
}

/// Ejection gate on the last site; qubit order (ancilla, system).
pub fn build_boundary_gate_right(beta: f64) -> Result<GateMatrix> {
    check_probability("beta", beta)?;
    // |•∘⟩ = 0b10, |∘•⟩ = 0b01
    Ok(GateMatrix {
        entries: swap_rotation(4, 0b10, 0b01, beta),
        site_span: vec![QubitRole::Ancilla, QubitRole::System],
    })
}

/// A completely positive trace-preserving map `ρ ↦ Σ_x K_x ρ K_x†` on
/// `support` contiguous system sites.
#[derive(Clone, Debug, PartialEq)]
pub struct KrausChannel {
    ops: Vec<CMatrix>,
    support: usize,
    labels: Vec<Occupation>,
}

impl KrausChannel {
    pub fn new(ops: Vec<CMatrix>, labels: Vec<Occupation>) -> Result<Self> {
        let dim = ops.first().map(|k| k.nrows()).unwrap_or(0);
        if dim < 2 || !dim.is_power_of_two() || ops.len() != labels.len() {
            return Err(Error::DimensionMismatch {
                expected: 2,
                found: dim,
            });
        }
        if let Some(bad) = ops.iter().find(|k| k.nrows() != dim || k.ncols() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: bad.nrows(),
            });
        }
        Ok(Self {
            support: dim.trailing_zeros() as usize,
            ops,
            labels,
        })
    }

    pub fn identity(support: usize) -> Self {
        let d = 1 << support;
        Self {
            ops: vec![CMatrix::identity(d, d)],
            support,
            labels: vec![Occupation::Vacant],
        }
    }

    pub fn ops(&self) -> &[CMatrix] {
        &self.ops
    }

    pub fn labels(&self) -> &[Occupation] {
        &self.labels
    }

    pub fn support(&self) -> usize {
        self.support
    }

    /// Operator belonging to the given ancilla outcome.
    pub fn op(&self, outcome: Occupation) -> Option<&CMatrix> {
        self.labels
            .iter()
            .position(|l| *l == outcome)
            .map(|k| &self.ops[k])
    }

    /// max |Σ K† K − 1|
    pub fn completeness_defect(&self) -> f64 {
        let d = 1 << self.support;
        let sum = self
            .ops
            .iter()
            .fold(CMatrix::zeros(d, d), |acc, k| acc + k.adjoint() * k);
        max_abs(&(sum - CMatrix::identity(d, d)))
    }

    /// Every operator multiplied from the right by `u`.
    pub fn dressed_right(&self, u: &CMatrix) -> Result<Self> {
        let d = 1 << self.support;
        if u.nrows() != d || u.ncols() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: u.nrows(),
            });
        }
        Ok(Self {
            ops: self.ops.iter().map(|k| k * u).collect(),
            support: self.support,
            labels: self.labels.clone(),
        })
    }

    pub fn superoperator(&self) -> Superoperator {
        Superoperator::from_kraus(self)
    }
}

/// Channel acting on vectorized local operators. Row/column index is
/// `ket * 2^support + bra` with the same bit order as the gates.
#[derive(Clone, Debug)]
pub struct Superoperator {
    support: usize,
    matrix: CMatrix,
    nonzeros: Vec<(usize, usize, C64)>,
}

impl Superoperator {
    pub fn from_kraus(channel: &KrausChannel) -> Self {
        let d = 1 << channel.support;
        let matrix = channel
            .ops
            .iter()
            .fold(CMatrix::zeros(d * d, d * d), |acc, k| {
                acc + kron(k, &k.map(|z| z.conj()))
            });
        let nonzeros = matrix
            .iter()
            .enumerate()
            .filter(|(_, z)| **z != ZERO)
            .map(|(idx, z)| (idx % (d * d), idx / (d * d), *z))
            .collect();
        Self {
            support: channel.support,
            matrix,
            nonzeros,
        }
    }

    pub fn support(&self) -> usize {
        self.support
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.matrix
    }

    /// (row, col, value) triples of the non-vanishing entries.
    pub fn nonzeros(&self) -> &[(usize, usize, C64)] {
        &self.nonzeros
    }

    pub fn apply_local(&self, input: &[C64], output: &mut [C64]) {
        output.iter_mut().for_each(|z| *z = ZERO);
        for &(r, c, v) in &self.nonzeros {
            output[r] += v * input[c];
        }
    }
}

/// Kraus operators `K_x = ⟨x|_anc G |init⟩_anc` for both ancilla outcomes.
pub fn derive_kraus(gate: &GateMatrix, ancilla_init: Occupation) -> Result<KrausChannel> {
    let anc = gate.ancilla_position().ok_or(Error::MissingAncilla)?;
    if gate.site_span.iter().filter(|r| **r == QubitRole::Ancilla).count() != 1 {
        return Err(Error::Unsupported(
            "gates with more than one ancilla".into(),
        ));
    }
    let defect = gate.unitarity_defect();
    if defect > UNITARITY_TOL {
        return Err(Error::NonUnitary(defect));
    }
    let k = gate.site_span.len();
    let shift = k - 1 - anc;
    let sys = k - 1;
    let d = 1 << sys;
    // insert the ancilla bit into a system index
    let full = |anc_bit: usize, s: usize| {
        let low = s & ((1 << shift) - 1);
        let high = s >> shift;
        (high << (shift + 1)) | (anc_bit << shift) | low
    };
    let outcomes = [Occupation::Vacant, Occupation::Occupied];
    let ops = outcomes
        .iter()
        .map(|x| {
            CMatrix::from_fn(d, d, |r, c| {
                gate.entries[(full(x.bit(), r), full(ancilla_init.bit(), c))]
            })
        })
        .collect();
    KrausChannel::new(ops, outcomes.to_vec())
}

/// Bulk cluster channel `{K_∘ U(ω), K_• U(ω)}` on two neighbouring sites.
pub fn bulk_channel(tau: f64, omega: f64) -> Result<KrausChannel> {
    let bare = derive_kraus(&build_d_gate(tau)?, Occupation::Vacant)?;
    bare.dressed_right(build_u_gate(omega).entries())
}

pub fn left_boundary_channel(alpha: f64) -> Result<KrausChannel> {
    derive_kraus(&build_boundary_gate_left(alpha)?, Occupation::Vacant)
}

pub fn right_boundary_channel(beta: f64) -> Result<KrausChannel> {
    derive_kraus(&build_boundary_gate_right(beta)?, Occupation::Vacant)
}

/// The three channels of one global update, prebuilt as superoperators.
#[derive(Clone, Debug)]
pub struct SweepChannels {
    pub left: KrausChannel,
    pub bulk: KrausChannel,
    pub right: KrausChannel,
    pub left_super: Superoperator,
    pub bulk_super: Superoperator,
    pub right_super: Superoperator,
}

impl SweepChannels {
    pub fn new(params: &ModelParams) -> Result<Self> {
        params.validate()?;
        let left = left_boundary_channel(params.alpha)?;
        let bulk = bulk_channel(params.tau, params.omega)?;
        let right = right_boundary_channel(params.beta)?;
        Ok(Self {
            left_super: left.superoperator(),
            bulk_super: bulk.superoperator(),
            right_super: right.superoperator(),
            left,
            bulk,
            right,
        })
    }
}

/// Dense Lindblad superoperator acting on row-major vectorized density
/// operators (`index = ket * 2^N + bra`).
#[derive(Clone, Debug)]
pub struct LindbladGenerator {
    pub n_sites: usize,
    pub matrix: CMatrix,
    pub gamma_left: f64,
    pub gamma_right: f64,
    pub gamma_bulk: f64,
}

fn site_operator(n_sites: usize, site: usize, op: &CMatrix) -> CMatrix {
    (0..n_sites).fold(CMatrix::identity(1, 1), |acc, k| {
        if k == site {
            kron(&acc, op)
        } else {
            kron(&acc, &CMatrix::identity(2, 2))
        }
    })
}

/// `γ (L ρ L† − ½{L†L, ρ})` as a superoperator on row-major vectorization.
fn dissipator(jump: &CMatrix, rate: f64) -> CMatrix {
    let d = jump.nrows();
    let id = CMatrix::identity(d, d);
    let ldl = jump.adjoint() * jump;
    let sandwich = kron(jump, &jump.map(|z| z.conj()));
    let anti = kron(&ldl, &id) + kron(&id, &ldl.transpose());
    (sandwich - anti.scale(0.5)).scale(rate)
}

/// Continuous-time generator: source on site 0, drain on site N−1 and
/// directed hops `σ⁻_{i−1} σ⁺_i` on every bond.
pub fn lindblad_generator(
    gamma_left: f64,
    gamma_right: f64,
    gamma_bulk: f64,
    n_sites: usize,
) -> Result<LindbladGenerator> {
    if n_sites == 0 {
        return Err(Error::TooFewSites {
            min: 1,
            found: n_sites,
        });
    }
    if n_sites > MAX_LINDBLAD_SITES {
        return Err(Error::TooManySites {
            what: "dense Lindblad generator",
            n_sites,
            limit: MAX_LINDBLAD_SITES,
        });
    }
    for (name, rate) in [
        ("gamma_left", gamma_left),
        ("gamma_right", gamma_right),
        ("gamma_bulk", gamma_bulk),
    ] {
        if !(rate >= 0.0 && rate.is_finite()) {
            return Err(Error::ParameterOutOfRange {
                name,
                value: rate,
                range: "[0, inf)",
            });
        }
    }
    // σ⁺ = |•⟩⟨∘|, σ⁻ = |∘⟩⟨•|
    let sigma_plus = CMatrix::from_row_slice(2, 2, &[ZERO, ZERO, ONE, ZERO]);
    let sigma_minus = sigma_plus.transpose();
    let dim = 1 << n_sites;
    let mut matrix = CMatrix::zeros(dim * dim, dim * dim);
    if gamma_left > 0.0 {
        matrix += dissipator(&site_operator(n_sites, 0, &sigma_plus), gamma_left);
    }
    if gamma_right > 0.0 {
        matrix += dissipator(
            &site_operator(n_sites, n_sites - 1, &sigma_minus),
            gamma_right,
        );
    }
    if gamma_bulk > 0.0 {
        for i in 1..n_sites {
            let hop = site_operator(n_sites, i - 1, &sigma_minus)
                * site_operator(n_sites, i, &sigma_plus);
            matrix += dissipator(&hop, gamma_bulk);
        }
    }
    Ok(LindbladGenerator {
        n_sites,
        matrix,
        gamma_left,
        gamma_right,
        gamma_bulk,
    })
}

impl LindbladGenerator {
    pub fn dim(&self) -> usize {
        1 << self.n_sites
    }

    /// max over columns of |tr(L[e_col])|; zero for a trace-preserving generator.
    pub fn trace_preservation_defect(&self) -> f64 {
        let d = self.dim();
        (0..d * d)
            .map(|col| {
                (0..d)
                    .map(|i| self.matrix[(i * d + i, col)])
                    .sum::<C64>()
                    .norm()
            })
            .fold(0.0, f64::max)
    }

    pub fn apply(&self, rho: &[C64]) -> Vec<C64> {
        let v = nalgebra::DVector::from_column_slice(rho);
        (&self.matrix * v).iter().copied().collect()
    }

    /// `exp(L t) ρ` by a Taylor series on substeps with ‖L‖ t / m ≤ 1/2.
    pub fn propagate(&self, rho: &[C64], t: f64) -> Vec<C64> {
        let norm = self
            .matrix
            .column_iter()
            .map(|c| c.iter().map(|z| z.norm()).sum::<f64>())
            .fold(0.0, f64::max);
        let steps = ((norm * t.abs()) / 0.5).ceil().max(1.0) as usize;
        let h = t / steps as f64;
        let mut state = nalgebra::DVector::from_column_slice(rho);
        for _ in 0..steps {
            let mut term = state.clone();
            let mut acc = state.clone();
            for k in 1..60 {
                term = (&self.matrix * term).scale(h / k as f64);
                acc += &term;
                if term.iter().map(|z| z.norm()).fold(0.0, f64::max) < 1e-18 {
                    break;
                }
            }
            state = acc;
        }
        state.iter().copied().collect()
    }

    /// Stationary state from the null space of the generator: one row of
    /// `L x = 0` is replaced by the trace constraint `tr x = 1`.
    pub fn stationary_state(&self) -> Result<Vec<C64>> {
        let d = self.dim();
        let mut a = self.matrix.clone();
        let mut rhs = nalgebra::DVector::zeros(d * d);
        for col in 0..d * d {
            a[(0, col)] = ZERO;
        }
        for i in 0..d {
            a[(0, i * d + i)] = ONE;
        }
        rhs[0] = ONE;
        let x = a
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::Degenerate("generator has no unique stationary state".into()))?;
        Ok(x.iter().copied().collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_1_SQRT_2, FRAC_PI_2, FRAC_PI_4, FRAC_PI_8};

    fn close(a: C64, b: C64, tol: f64) -> bool {
        (a - b).norm() < tol
    }

    #[test]
    fn u_gate_identity_at_zero() {
        let u = build_u_gate(0.0);
        assert_eq!(u.entries(), &CMatrix::identity(4, 4));
    }

    #[test]
    fn u_gate_makes_bell_pair() {
        let u = build_u_gate(FRAC_PI_4);
        // |∘•⟩ = index 1
        let col = u.entries().column(1);
        assert!(close(col[1], C64::new(FRAC_1_SQRT_2, 0.0), 1e-15));
        assert!(close(col[2], C64::new(0.0, -FRAC_1_SQRT_2), 1e-15));
        assert!(close(col[0], ZERO, 1e-15) && close(col[3], ZERO, 1e-15));
    }

    #[test]
    fn u_gate_full_swap_at_half_pi() {
        let u = build_u_gate(FRAC_PI_2);
        let col = u.entries().column(2);
        assert!(close(col[1], C64::new(0.0, -1.0), 1e-15));
        assert!(col[2].norm() < 1e-15);
    }

    #[test]
    fn d_gate_entries() {
        assert_eq!(build_d_gate(0.0).unwrap().entries(), &CMatrix::identity(8, 8));
        let d = build_d_gate(1.0).unwrap();
        assert!(close(d.amplitude(0b101, 0b010), I, 1e-15));
        assert!(close(d.amplitude(0b010, 0b010), ZERO, 1e-15));
        let d = build_d_gate(0.75).unwrap();
        assert!(close(d.amplitude(0b010, 0b010), C64::new(0.5, 0.0), 1e-15));
        assert!(build_d_gate(1.5).is_err());
        assert!(build_d_gate(-0.1).is_err());
    }

    #[test]
    fn boundary_gate_entries() {
        assert_eq!(
            build_boundary_gate_left(0.0).unwrap().entries(),
            &CMatrix::identity(4, 4)
        );
        let dl = build_boundary_gate_left(1.0).unwrap();
        assert!(close(dl.amplitude(0b11, 0b00), I, 1e-15));
        let dr = build_boundary_gate_right(0.75).unwrap();
        assert!(close(dr.amplitude(0b01, 0b01), C64::new(0.5, 0.0), 1e-15));
        assert!(build_boundary_gate_right(2.0).is_err());
    }

    #[test]
    fn all_gates_unitary_on_grid() {
        for i in 0..=10 {
            let p = i as f64 / 10.0;
            assert!(build_d_gate(p).unwrap().unitarity_defect() < 1e-12);
            assert!(build_boundary_gate_left(p).unwrap().unitarity_defect() < 1e-12);
            assert!(build_boundary_gate_right(p).unwrap().unitarity_defect() < 1e-12);
        }
        for j in 0..=4 {
            let w = j as f64 * FRAC_PI_8;
            assert!(build_u_gate(w).unitarity_defect() < 1e-12);
        }
    }

    #[test]
    fn kraus_from_d_gate_matches_closed_form() {
        let tau: f64 = 0.75;
        let ch = derive_kraus(&build_d_gate(tau).unwrap(), Occupation::Vacant).unwrap();
        let k0 = ch.op(Occupation::Vacant).unwrap();
        let k1 = ch.op(Occupation::Occupied).unwrap();
        let mut e0 = CMatrix::identity(4, 4);
        e0[(2, 2)] = C64::new((1.0 - tau).sqrt(), 0.0);
        let mut e1 = CMatrix::zeros(4, 4);
        e1[(1, 2)] = I * tau.sqrt();
        assert!(max_abs(&(k0 - e0)) <= 1e-15);
        assert!(max_abs(&(k1 - e1)) <= 1e-15);
    }

    #[test]
    fn kraus_from_left_gate() {
        let alpha: f64 = 0.3;
        let ch = left_boundary_channel(alpha).unwrap();
        let k0 = ch.op(Occupation::Vacant).unwrap();
        let k1 = ch.op(Occupation::Occupied).unwrap();
        assert!(close(k0[(0, 0)], C64::new((1.0 - alpha).sqrt(), 0.0), 1e-15));
        assert!(close(k0[(1, 1)], ONE, 1e-15));
        assert!(close(k1[(1, 0)], I * alpha.sqrt(), 1e-15));
        assert!(k1[(0, 1)].norm() < 1e-15);
        assert!(ch.completeness_defect() < 1e-12);
    }

    #[test]
    fn kraus_of_trivial_d_gate() {
        let ch = derive_kraus(&build_d_gate(0.0).unwrap(), Occupation::Vacant).unwrap();
        assert_eq!(ch.op(Occupation::Vacant).unwrap(), &CMatrix::identity(4, 4));
        assert_eq!(ch.op(Occupation::Occupied).unwrap(), &CMatrix::zeros(4, 4));
    }

    #[test]
    fn derive_kraus_rejects_bad_gates() {
        assert_eq!(
            derive_kraus(&build_u_gate(0.3), Occupation::Vacant),
            Err(Error::MissingAncilla)
        );
        let mut m = CMatrix::identity(4, 4);
        m[(0, 0)] = C64::new(2.0, 0.0);
        let g = GateMatrix::new(m, vec![QubitRole::Ancilla, QubitRole::System]).unwrap();
        assert!(matches!(
            derive_kraus(&g, Occupation::Vacant),
            Err(Error::NonUnitary(_))
        ));
    }

    #[test]
    fn derive_kraus_with_ancilla_last() {
        // same left gate, but with the qubits listed in the opposite order
        let dl = build_boundary_gate_left(0.4).unwrap();
        let swap = CMatrix::from_fn(4, 4, |r, c| {
            let swapped = ((c & 1) << 1) | (c >> 1);
            if r == swapped {
                ONE
            } else {
                ZERO
            }
        });
        let flipped = GateMatrix::new(
            &swap * dl.entries() * &swap,
            vec![QubitRole::System, QubitRole::Ancilla],
        )
        .unwrap();
        let a = derive_kraus(&dl, Occupation::Vacant).unwrap();
        let b = derive_kraus(&flipped, Occupation::Vacant).unwrap();
        assert_eq!(a.ops(), b.ops());
    }

    #[test]
    fn bulk_channel_cases() {
        let id = bulk_channel(0.0, 0.0).unwrap();
        assert_eq!(id.op(Occupation::Vacant).unwrap(), &CMatrix::identity(4, 4));
        let bare = derive_kraus(&build_d_gate(0.6).unwrap(), Occupation::Vacant).unwrap();
        assert_eq!(bulk_channel(0.6, 0.0).unwrap().ops(), bare.ops());

        let ch = bulk_channel(1.0, FRAC_PI_4).unwrap();
        let k1 = ch.op(Occupation::Occupied).unwrap();
        let out = k1.column(1);
        assert!(close(out[1], C64::new(FRAC_1_SQRT_2, 0.0), 1e-15));
        assert!(out[0].norm() + out[2].norm() + out[3].norm() < 1e-15);
    }

    #[test]
    fn channels_complete_on_grid() {
        for i in 0..=10 {
            let p = i as f64 / 10.0;
            for j in 0..=10 {
                let w = j as f64 * FRAC_PI_2 / 10.0;
                assert!(bulk_channel(p, w).unwrap().completeness_defect() < 1e-12);
            }
            assert!(left_boundary_channel(p).unwrap().completeness_defect() < 1e-12);
            assert!(right_boundary_channel(p).unwrap().completeness_defect() < 1e-12);
        }
    }

    #[test]
    fn superoperator_matches_kraus_sum() {
        let ch = bulk_channel(0.4, 0.3).unwrap();
        let sup = ch.superoperator();
        let rho = CMatrix::from_fn(4, 4, |r, c| C64::new((r + 2 * c) as f64, r as f64 - c as f64));
        let expected = ch
            .ops()
            .iter()
            .fold(CMatrix::zeros(4, 4), |acc, k| acc + k * &rho * k.adjoint());
        let input: Vec<C64> = (0..16).map(|i| rho[(i / 4, i % 4)]).collect();
        let mut out = vec![ZERO; 16];
        sup.apply_local(&input, &mut out);
        for i in 0..16 {
            assert!(close(out[i], expected[(i / 4, i % 4)], 1e-12));
        }
    }

    #[test]
    fn pattern_parsing() {
        assert_eq!(
            parse_pattern(2, "•∘").unwrap(),
            vec![Occupation::Occupied, Occupation::Vacant]
        );
        assert_eq!(parse_pattern(3, "empty").unwrap(), vec![Occupation::Vacant; 3]);
        assert_eq!(config_index(&parse_pattern(3, "101").unwrap()), 0b101);
        assert!(matches!(parse_pattern(2, "•∘•"), Err(Error::BadPattern(_))));
        assert!(matches!(parse_pattern(2, "ab"), Err(Error::BadPattern(_))));
    }

    #[test]
    fn params_validation() {
        assert!(ModelParams::new(1, 0.5, 0.5, 0.5, 0.0).is_err());
        assert!(ModelParams::new(4, 1.2, 0.5, 0.5, 0.0).is_err());
        let p = ModelParams::new(4, 0.5, 0.5, 0.5, 7.0).unwrap();
        assert_eq!(p.omega, 7.0);
    }

    #[test]
    fn lindblad_zero_rates() {
        let l = lindblad_generator(0.0, 0.0, 0.0, 2).unwrap();
        assert_eq!(max_abs(&l.matrix), 0.0);
    }

    #[test]
    fn lindblad_pure_source_fills_site() {
        let l = lindblad_generator(1.0, 0.0, 0.0, 1).unwrap();
        let ness = l.stationary_state().unwrap();
        assert!(close(ness[3], ONE, 1e-12));
        assert!(ness[0].norm() < 1e-12);
    }

    #[test]
    fn lindblad_trace_preserving_and_hermitian() {
        let l = lindblad_generator(0.7, 1.3, 0.9, 3).unwrap();
        assert!(l.trace_preservation_defect() < 1e-10);
        let d = 8;
        let rho = CMatrix::from_fn(d, d, |r, c| {
            if r == c {
                C64::new(1.0 / d as f64, 0.0)
            } else {
                C64::new(0.01 * (r + c) as f64, 0.02 * (r as f64 - c as f64))
            }
        });
        let v: Vec<C64> = (0..d * d).map(|i| rho[(i / d, i % d)]).collect();
        let out = l.apply(&v);
        let m = CMatrix::from_fn(d, d, |r, c| out[r * d + c]);
        assert!(crate::linalg::hermiticity_defect(&m) < 1e-12);
    }

    #[test]
    fn lindblad_size_guard() {
        assert!(matches!(
            lindblad_generator(1.0, 1.0, 1.0, 7),
            Err(Error::TooManySites { .. })
        ));
    }
}
