use thiserror::Error;

/// Errors produced by the numerical routines in this crate.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("non-finite value in {what} at index {index}")]
    NonFinite { what: String, index: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("leak {0} outside the valid range (0, 1]")]
    LeakOutOfRange(f64),

    #[error("{what} is not positive semidefinite (min eigenvalue {min_eig:e})")]
    NotPsd { what: String, min_eig: f64 },

    #[error("{what} is not symmetric (asymmetry {asym:e})")]
    NotSymmetric { what: String, asym: f64 },

    #[error("eigensolver failed to converge for a {0}x{0} matrix")]
    EigenNoConvergence(usize),

    #[error("no fading-memory certificate: kappa = {0} is not in (0, 1)")]
    NoFadingMemory(f64),

    #[error("unstable model: spectral radius {0} >= 1")]
    Unstable(f64),

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("transfer function evaluated on a pole: z = {z_re}{z_im:+}j, nearest eigenvalue {eig_re}{eig_im:+}j")]
    PoleHit {
        z_re: f64,
        z_im: f64,
        eig_re: f64,
        eig_im: f64,
    },

    #[error("ill-conditioned request: {0}")]
    IllConditioned(String),

    #[error("innovation covariance not positive definite at step {0}")]
    InnovationNotPd(usize),

    #[error("log-likelihood decreased by {delta:e} at EM iteration {iteration}")]
    LikelihoodDecrease { iteration: usize, delta: f64 },

    #[error("inputs are not persistently exciting: smallest singular value {sigma_min:e} of the depth-{depth} block-Toeplitz matrix")]
    NotExciting { depth: usize, sigma_min: f64 },

    #[error("rank deficient: {0}")]
    RankDeficient(String),

    #[error("target radius {target} unreachable at leak {leak}: requires r* > 1 - leak")]
    Unreachable { target: f64, leak: f64 },

    #[error("missing activation data: {0}")]
    MissingActivationData(String),
}

impl Error {
    /// Stable machine-readable tag for the error kind.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Dimension(_) => "dimension_mismatch",
            Error::NonFinite { .. } => "non_finite",
            Error::InvalidParameter(_) => "invalid_parameter",
            Error::LeakOutOfRange(_) => "leak_out_of_range",
            Error::NotPsd { .. } => "not_psd",
            Error::NotSymmetric { .. } => "not_symmetric",
            Error::EigenNoConvergence(_) => "eigen_no_convergence",
            Error::NoFadingMemory(_) => "no_fading_memory_certificate",
            Error::Unstable(_) => "unstable",
            Error::Singular(_) => "singular",
            Error::PoleHit { .. } => "pole_hit",
            Error::IllConditioned(_) => "ill_conditioned",
            Error::InnovationNotPd(_) => "innovation_not_pd",
            Error::LikelihoodDecrease { .. } => "likelihood_decrease",
            Error::NotExciting { .. } => "not_persistently_exciting",
            Error::RankDeficient(_) => "rank_deficient",
            Error::Unreachable { .. } => "target_unreachable",
            Error::MissingActivationData(_) => "missing_activation_data",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
