//! Nonlinear least-squares fitting of the four 1D trace models used
//! throughout the pipeline: Gaussian and Lorentzian peaks, exponential
//! decay, and pump saturation.
//!
//! [`fit`] runs a damped Gauss-Newton iteration with multiplicative
//! damping and reports parameter uncertainties as the square roots of the
//! diagonal of the scaled covariance `s² (JᵀWJ)⁻¹`, where `s²` is the
//! reduced residual variance. Weights default to unity; for raw photon
//! counts [`poisson_weights`] provides the usual `1/max(y, 1)` weighting.
//!
//! Amplitude-like and offset parameters are expressed in the y units of
//! the trace, centers and widths in its x units.

mod engine;

pub use engine::fit;

/// Smallest value a positive-constrained parameter may take; steps that
/// would cross zero are clamped here.
pub const POSITIVE_FLOOR: f64 = 1e-12;

/// Errors surfaced by model evaluation and fitting.
#[derive(Debug, thiserror::Error)]
pub enum FitError {
    /// A parameter violates its declared bound (widths, lifetimes and
    /// saturation powers must be positive).
    #[error("parameter `{name}` out of bounds: {value} (must be > 0)")]
    OutOfBounds { name: &'static str, value: f64 },
    #[error("x and y lengths differ: {x_len} vs {y_len}")]
    LengthMismatch { x_len: usize, y_len: usize },
    #[error("parameter vector has {got} entries, model needs {expected}")]
    WrongParameterCount { expected: usize, got: usize },
    #[error("need at least {needed} points to fit {params} parameters, got {got}")]
    TooFewPoints { needed: usize, params: usize, got: usize },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("weight[{index}] = {value} is not a positive finite number")]
    InvalidWeight { index: usize, value: f64 },
    /// The data carry no usable structure for a starting guess
    /// (for example a completely flat trace).
    #[error("degenerate data: {0}")]
    DegenerateData(String),
    /// The normal matrix JᵀWJ is singular at the solution, so no
    /// covariance exists.
    #[error("degenerate fit: normal matrix JᵀWJ is singular")]
    DegenerateFit,
}

/// The model families the engine knows how to evaluate and fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    /// `offset + amplitude · exp(−(x−center)²/(2·sigma²))`
    Gaussian1D,
    /// `offset + amplitude · hwhm²/((x−center)² + hwhm²)`; `hwhm` is the
    /// half width at half maximum.
    Lorentzian1D,
    /// `offset + amplitude · exp(−x/lifetime)`
    ExponentialDecay,
    /// `s_max · (1 − exp(−x/p_sat))`
    SaturationCurve,
}

/// A fittable model: the kind plus its parameter metadata.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
}

impl ModelSpec {
    pub fn gaussian() -> Self {
        ModelSpec { kind: ModelKind::Gaussian1D }
    }

    pub fn lorentzian() -> Self {
        ModelSpec { kind: ModelKind::Lorentzian1D }
    }

    pub fn exponential_decay() -> Self {
        ModelSpec { kind: ModelKind::ExponentialDecay }
    }

    pub fn saturation() -> Self {
        ModelSpec { kind: ModelKind::SaturationCurve }
    }

    /// Parameter names, in the order used by parameter vectors.
    pub fn parameter_names(&self) -> &'static [&'static str] {
        match self.kind {
            ModelKind::Gaussian1D => &["amplitude", "center", "sigma", "offset"],
            ModelKind::Lorentzian1D => &["amplitude", "center", "hwhm", "offset"],
            ModelKind::ExponentialDecay => &["amplitude", "lifetime", "offset"],
            ModelKind::SaturationCurve => &["s_max", "p_sat"],
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.parameter_names().len()
    }

    /// Index of the strictly positive parameter of each model (width,
    /// lifetime or saturation power).
    fn positive_parameter(&self) -> usize {
        match self.kind {
            ModelKind::Gaussian1D | ModelKind::Lorentzian1D => 2,
            ModelKind::ExponentialDecay => 1,
            ModelKind::SaturationCurve => 1,
        }
    }

    /// Checks length and bounds of a parameter vector.
    pub fn check_parameters(&self, params: &[f64]) -> Result<(), FitError> {
        if params.len() != self.parameter_count() {
            return Err(FitError::WrongParameterCount {
                expected: self.parameter_count(),
                got: params.len(),
            });
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(FitError::NonFinite("parameters"));
        }
        let idx = self.positive_parameter();
        if params[idx] <= 0.0 {
            return Err(FitError::OutOfBounds {
                name: self.parameter_names()[idx],
                value: params[idx],
            });
        }
        Ok(())
    }

    /// Clamps a candidate parameter vector back into bounds.
    pub(crate) fn clamp(&self, params: &mut [f64]) {
        let idx = self.positive_parameter();
        if params[idx] < POSITIVE_FLOOR {
            params[idx] = POSITIVE_FLOOR;
        }
    }

    /// Model value at a single point. Parameters must already be valid.
    pub(crate) fn value(&self, p: &[f64], x: f64) -> f64 {
        match self.kind {
            ModelKind::Gaussian1D => {
                let d = x - p[1];
                p[3] + p[0] * (-d * d / (2.0 * p[2] * p[2])).exp()
            }
            ModelKind::Lorentzian1D => {
                let d = x - p[1];
                let w2 = p[2] * p[2];
                p[3] + p[0] * w2 / (d * d + w2)
            }
            ModelKind::ExponentialDecay => p[2] + p[0] * (-x / p[1]).exp(),
            ModelKind::SaturationCurve => p[0] * (1.0 - (-x / p[1]).exp()),
        }
    }

    /// Evaluates the model over a grid after validating the parameters.
    pub fn evaluate(&self, params: &[f64], xs: &[f64]) -> Result<Vec<f64>, FitError> {
        self.check_parameters(params)?;
        Ok(xs.iter().map(|&x| self.value(params, x)).collect())
    }

    /// Data-driven starting guess.
    ///
    /// Peaks use the argmax for the center, max−min for the amplitude,
    /// the minimum for the offset and a second-moment width; decays use a
    /// log-linear regression on the background-subtracted tail; the
    /// saturation guess takes the maximum for `s_max` and the power where
    /// the trace first reaches 63% of it for `p_sat`.
    pub fn initial_guess(&self, x: &[f64], y: &[f64]) -> Result<Vec<f64>, FitError> {
        if x.len() != y.len() {
            return Err(FitError::LengthMismatch { x_len: x.len(), y_len: y.len() });
        }
        if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return Err(FitError::NonFinite("data"));
        }
        let n = x.len();
        if n < self.parameter_count() + 1 {
            return Err(FitError::TooFewPoints {
                needed: self.parameter_count() + 1,
                params: self.parameter_count(),
                got: n,
            });
        }
        let (mut y_min, mut y_max, mut argmax) = (f64::INFINITY, f64::NEG_INFINITY, 0);
        for (i, &v) in y.iter().enumerate() {
            if v < y_min {
                y_min = v;
            }
            if v > y_max {
                y_max = v;
                argmax = i;
            }
        }
        if y_max == y_min {
            return Err(FitError::DegenerateData("flat trace".into()));
        }
        let spacing = ((x[n - 1] - x[0]) / (n as f64 - 1.0)).abs().max(POSITIVE_FLOOR);

        match self.kind {
            ModelKind::Gaussian1D | ModelKind::Lorentzian1D => {
                let offset = y_min;
                let amplitude = y_max - y_min;
                let center = x[argmax];
                let (mut m0, mut m2) = (0.0, 0.0);
                for i in 0..n {
                    let w = (y[i] - offset).max(0.0);
                    m0 += w;
                    m2 += w * (x[i] - center) * (x[i] - center);
                }
                let width = (m2 / m0).sqrt().max(spacing);
                Ok(vec![amplitude, center, width, offset])
            }
            ModelKind::ExponentialDecay => {
                // Background from the trailing 10% of the trace, then a
                // log-linear slope over the decaying section.
                let tail = (n / 10).max(3).min(n);
                let offset = y[n - tail..].iter().sum::<f64>() / tail as f64;
                let amplitude = y[argmax] - offset;
                if amplitude <= 0.0 {
                    return Err(FitError::DegenerateData(
                        "decay trace has no excess over its tail level".into(),
                    ));
                }
                let floor = amplitude * 0.02;
                let (mut sx, mut sy, mut sxx, mut sxy, mut cnt) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for i in argmax..n {
                    let w = y[i] - offset;
                    if w > floor {
                        let ly = w.ln();
                        sx += x[i];
                        sy += ly;
                        sxx += x[i] * x[i];
                        sxy += x[i] * ly;
                        cnt += 1.0;
                    }
                }
                let denom = cnt * sxx - sx * sx;
                let slope = if cnt >= 2.0 && denom.abs() > 0.0 {
                    (cnt * sxy - sx * sy) / denom
                } else {
                    0.0
                };
                let span = (x[n - 1] - x[argmax]).abs().max(spacing);
                let lifetime = if slope < 0.0 { -1.0 / slope } else { span / 3.0 };
                Ok(vec![amplitude, lifetime.max(POSITIVE_FLOOR), offset])
            }
            ModelKind::SaturationCurve => {
                let s_max = y_max;
                let level = (1.0 - (-1.0f64).exp()) * s_max;
                let mut p_sat = x[argmax].abs().max(spacing);
                for i in 0..n {
                    if y[i] >= level {
                        p_sat = x[i].abs().max(spacing);
                        break;
                    }
                }
                Ok(vec![s_max, p_sat])
            }
        }
    }
}

/// Per-point weights for Poisson-distributed counts: `1/max(y, 1)`.
pub fn poisson_weights(y: &[f64]) -> Vec<f64> {
    y.iter().map(|&v| 1.0 / v.max(1.0)).collect()
}

/// Result of a least-squares fit.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub parameters: Vec<f64>,
    /// One-sigma uncertainties: square roots of the covariance diagonal.
    pub uncertainties: Vec<f64>,
    /// Row-major p×p covariance matrix `s² (JᵀWJ)⁻¹`.
    pub covariance: Vec<f64>,
    /// Weighted residual sum of squares at the solution.
    pub residual_sum_squares: f64,
    pub converged: bool,
    /// Gauss-Newton iterations performed (Jacobian evaluations).
    pub iterations: usize,
}

impl FitResult {
    pub fn covariance_at(&self, i: usize, j: usize) -> f64 {
        self.covariance[i * self.parameters.len() + j]
    }

    /// JSON-friendly view pairing parameter names with values and sigmas.
    pub fn report(&self, spec: &ModelSpec) -> FitReport {
        FitReport {
            model: spec.kind,
            parameters: spec
                .parameter_names()
                .iter()
                .zip(self.parameters.iter().zip(self.uncertainties.iter()))
                .map(|(&name, (&value, &sigma))| ParameterReport {
                    name: name.to_string(),
                    value,
                    sigma,
                })
                .collect(),
            covariance_row_major: self.covariance.clone(),
            residual_sum_squares: self.residual_sum_squares,
            converged: self.converged,
            iterations: self.iterations,
        }
    }
}

/// Serializable fit summary.
#[derive(Debug, Clone, serde::Serialize)]
pub struct FitReport {
    pub model: ModelKind,
    pub parameters: Vec<ParameterReport>,
    pub covariance_row_major: Vec<f64>,
    pub residual_sum_squares: f64,
    pub converged: bool,
    pub iterations: usize,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct ParameterReport {
    pub name: String,
    pub value: f64,
    pub sigma: f64,
}
