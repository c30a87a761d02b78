use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Left eigenvectors diverge when the two right eigenvectors coalesce.
    #[error("parameter point is within the exceptional-point band: |discriminant| = {discriminant:e} < {threshold:e}")]
    EpProximity { discriminant: f64, threshold: f64 },

    #[error("Fock truncation too small: population {population:e} at n_max = {n_max}")]
    Truncation { population: f64, n_max: usize },

    #[error("{what} did not converge (best objective {best_objective:e}, best point {best_point:?})")]
    Convergence {
        what: String,
        best_objective: f64,
        best_point: Vec<f64>,
    },

    #[error("postselection failed: single-excitation weight {probability:e}")]
    PostselectionFailure { probability: f64 },

    #[error("fitted eigenvectors are nearly parallel (|overlap| = {overlap})")]
    DegenerateBasis { overlap: f64 },

    #[error("mode tracking is ambiguous at point {index} (overlap {overlap}); refine the path")]
    TrackingAmbiguity { index: usize, overlap: f64 },

    #[error("polar angle {theta} is too close to a pole")]
    PoleProximity { theta: f64 },

    #[error("fit residual {residual:e} exceeds threshold {threshold:e}")]
    FitQuality { residual: f64, threshold: f64 },

    #[error("plaquette phase {phase} too large; refine the grid")]
    RefineGrid { phase: f64 },

    #[error("no transition found in the supplied sweep")]
    NoTransition,
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// Errors that originate from the physics (EP bands, postselection) rather
    /// than from bad input or a failed numerical method.
    pub fn is_domain_error(&self) -> bool {
        matches!(
            self,
            Error::EpProximity { .. }
                | Error::PostselectionFailure { .. }
                | Error::DegenerateBasis { .. }
                | Error::TrackingAmbiguity { .. }
                | Error::PoleProximity { .. }
                | Error::RefineGrid { .. }
                | Error::NoTransition
                | Error::Truncation { .. }
        )
    }

    pub fn is_convergence_error(&self) -> bool {
        matches!(self, Error::Convergence { .. } | Error::FitQuality { .. })
    }
}
