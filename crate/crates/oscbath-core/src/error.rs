use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("|Im z| = {im} exceeds strip half-width {strip}")]
    StripViolation { im: f64, strip: f64 },
    #[error("adaptive quadrature did not converge: estimate {estimate:e}, error {error:e}")]
    QuadratureDivergence { estimate: f64, error: f64 },
    #[error("functions live on different grids")]
    GridMismatch,
    #[error("pole {pole} lies outside the integration range (0, {r_max})")]
    PoleOutOfRange { pole: f64, r_max: f64 },
    #[error("integrand has a pole between the real line and the shifted contour (height {height})")]
    ContourPole { height: f64 },
    #[error("z = {re}+{im}i lies on the branch cut [0, inf)")]
    CutViolation { re: f64, im: f64 },
    #[error("|Im z| = {im} is not below the contour height {eta}")]
    ContourViolation { im: f64, eta: f64 },
    #[error("resonance search did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("profile violates the reflection rule f(-r) = conj f(r) (defect {defect:e})")]
    ReflectionViolation { defect: f64 },
    #[error("thermal norm diverges")]
    DivergentThermalNorm,
    #[error("fit window residuals are at the noise floor")]
    NoiseFloor,
    #[error("resonance approaches the contour: min |G Gc| = {min_abs:e}")]
    ResonanceOnContour { min_abs: f64 },
    #[error("plateau not reached: spread {spread:e} over the last window")]
    PlateauNotReached { spread: f64 },
    #[error("invalid input: {0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, Error>;
