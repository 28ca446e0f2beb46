use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("parameter `{name}` = {value} is outside {range}")]
    ParameterOutOfRange {
        name: &'static str,
        value: f64,
        range: &'static str,
    },

    #[error("a lattice needs at least {min} sites, got {found}")]
    TooFewSites { min: usize, found: usize },

    #[error("{what} refuses {n_sites} sites (limit {limit})")]
    TooManySites {
        what: &'static str,
        n_sites: usize,
        limit: usize,
    },

    #[error("gate is not unitary: max |G^dag G - 1| = {0:.3e}")]
    NonUnitary(f64),

    #[error("gate has no ancilla qubit in its site span")]
    MissingAncilla,

    #[error("malformed occupation pattern: {0}")]
    BadPattern(String),

    #[error("site {site} out of range for a {n_sites}-site lattice")]
    SiteOutOfRange { site: usize, n_sites: usize },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid site list: {0}")]
    BadSiteList(String),

    #[error("matrix is not Hermitian: max |A - A^dag| = {0:.3e}")]
    NonHermitian(f64),

    #[error("trace {0} deviates from one")]
    BadTrace(f64),

    #[error("degenerate parameters: {0}")]
    Degenerate(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("no convergence after {0} iterations")]
    NoConvergence(usize),

    #[error("numerical failure: {0}")]
    Numerical(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_probability(name: &'static str, value: f64) -> Result<()> {
    if (0.0..=1.0).contains(&value) {
        Ok(())
    } else {
        Err(Error::ParameterOutOfRange {
            name,
            value,
            range: "[0, 1]",
        })
    }
}
