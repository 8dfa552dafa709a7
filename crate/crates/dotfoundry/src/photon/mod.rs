//! Single-photon source characterization: radiative lifetime and
//! Purcell factor from decay traces, cavity Q from a mode spectrum,
//! saturation curves, pulsed g2(0) from coincidence histograms, and the
//! detection-path efficiency budget with uncertainty propagation.

pub mod io;

use crate::fit::{fit, poisson_weights, FitError, FitReport, ModelSpec};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};

#[derive(Debug, thiserror::Error)]
pub enum PhotonError {
    #[error("invalid {field}: {message}")]
    InvalidField { field: &'static str, message: String },
    /// The underlying fit ran out of iterations; the partial fit rides
    /// along for diagnostics.
    #[error("fit did not converge within {} iterations", .fit.iterations)]
    FitDidNotConverge { fit: Box<FitReport> },
    #[error("degenerate histogram: {0}")]
    DegenerateHistogram(String),
    #[error("{}: line {line}: {message}", path.display())]
    Parse { path: std::path::PathBuf, line: usize, message: String },
    #[error("{}: {source}", path.display())]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Fit(#[from] FitError),
}

/// A value with a one-sigma uncertainty.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Uncertain {
    pub value: f64,
    pub sigma: f64,
}

impl Uncertain {
    pub fn new(value: f64, sigma: f64) -> Uncertain {
        Uncertain { value, sigma }
    }

    pub fn exact(value: f64) -> Uncertain {
        Uncertain { value, sigma: 0.0 }
    }
}

/// Pulse period in ns for a given repetition rate.
pub fn rep_period_ns(rep_rate_hz: f64) -> f64 {
    1e9 / rep_rate_hz
}

/// Time-resolved decay counts.
#[derive(Debug, Clone, PartialEq)]
pub struct DecayTrace {
    pub time_ps: Vec<f64>,
    pub counts: Vec<f64>,
    pub description: String,
}

impl DecayTrace {
    pub fn validate(&self) -> Result<(), PhotonError> {
        if self.time_ps.len() != self.counts.len() || self.time_ps.len() < 4 {
            return Err(PhotonError::InvalidField {
                field: "trace",
                message: format!(
                    "need matching time/counts with at least 4 points, got {} / {}",
                    self.time_ps.len(),
                    self.counts.len()
                ),
            });
        }
        for pair in self.time_ps.windows(2) {
            if !(pair[1] > pair[0]) {
                return Err(PhotonError::InvalidField {
                    field: "time_ps",
                    message: "must be strictly increasing".to_string(),
                });
            }
        }
        if self.counts.iter().any(|c| !(c.is_finite() && *c >= 0.0)) {
            return Err(PhotonError::InvalidField {
                field: "counts",
                message: "must be finite and >= 0".to_string(),
            });
        }
        Ok(())
    }
}

/// Lifetime extracted from a decay-trace tail fit.
#[derive(Debug, Clone, serde::Serialize)]
pub struct LifetimeFit {
    pub tau_ps: f64,
    pub sigma_tau_ps: f64,
    /// The trace maximum fell inside the fitted window, so the rise
    /// region biases the fit; a warning is logged when set.
    pub peak_in_window: bool,
    pub fit: FitReport,
}

/// Fits `offset + A exp(-t/tau)` to the decaying tail, with Poisson
/// weights. The window defaults to two bins past the trace maximum
/// through the end; times are shifted to the window start before
/// fitting, so the reported amplitude refers to the window start (tau
/// and offset are shift-invariant).
pub fn fit_lifetime(
    trace: &DecayTrace,
    fit_window_ps: Option<(f64, f64)>,
) -> Result<LifetimeFit, PhotonError> {
    trace.validate()?;
    let mut argmax = 0usize;
    for (i, &c) in trace.counts.iter().enumerate() {
        if c > trace.counts[argmax] {
            argmax = i;
        }
    }
    let (w0, w1) = match fit_window_ps {
        Some((a, b)) => {
            if !(a < b) {
                return Err(PhotonError::InvalidField {
                    field: "fit_window_ps",
                    message: format!("need start < end, got ({a}, {b})"),
                });
            }
            (a, b)
        }
        None => {
            if argmax + 2 >= trace.time_ps.len() {
                return Err(PhotonError::InvalidField {
                    field: "trace",
                    message: "no points after the peak to fit".to_string(),
                });
            }
            (trace.time_ps[argmax + 2], *trace.time_ps.last().expect("non-empty"))
        }
    };
    let mut t = Vec::new();
    let mut y = Vec::new();
    for (&ti, &yi) in trace.time_ps.iter().zip(&trace.counts) {
        if ti >= w0 && ti <= w1 {
            t.push(ti);
            y.push(yi);
        }
    }
    let peak_time = trace.time_ps[argmax];
    let peak_in_window = peak_time >= w0 && peak_time <= w1;
    if peak_in_window {
        log::warn!(
            "lifetime window [{w0}, {w1}] ps contains the trace maximum at {peak_time} ps; \
             the rise region will bias the fit"
        );
    }
    let start = t.first().copied().unwrap_or(w0);
    let shifted: Vec<f64> = t.iter().map(|ti| ti - start).collect();
    let model = ModelSpec::exponential_decay();
    let init = model.initial_guess(&shifted, &y)?;
    let weights = poisson_weights(&y);
    let res = fit(&model, &shifted, &y, Some(&weights), &init)?;
    if !res.converged {
        return Err(PhotonError::FitDidNotConverge { fit: Box::new(res.report(&model)) });
    }
    Ok(LifetimeFit {
        tau_ps: res.parameters[1],
        sigma_tau_ps: res.uncertainties[1],
        peak_in_window,
        fit: res.report(&model),
    })
}

/// Purcell factor as the lifetime ratio reference/cavity, with
/// first-order ratio propagation of both sigmas.
pub fn purcell_factor(
    tau_reference_ps: Uncertain,
    tau_cavity_ps: Uncertain,
) -> Result<Uncertain, PhotonError> {
    for (field, tau) in [("tau_reference_ps", tau_reference_ps), ("tau_cavity_ps", tau_cavity_ps)]
    {
        if !(tau.value.is_finite() && tau.value > 0.0 && tau.sigma >= 0.0) {
            return Err(PhotonError::InvalidField {
                field,
                message: format!("need value > 0 and sigma >= 0, got {tau:?}"),
            });
        }
    }
    let f = tau_reference_ps.value / tau_cavity_ps.value;
    let rel = ((tau_reference_ps.sigma / tau_reference_ps.value).powi(2)
        + (tau_cavity_ps.sigma / tau_cavity_ps.value).powi(2))
    .sqrt();
    Ok(Uncertain::new(f, f * rel))
}

/// Which quantity the spectrum positions are measured in. Q is the
/// center over the full linewidth and comes out the same either way to
/// first order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpectrumAxis {
    WavelengthNm,
    EnergyEv,
}

/// A single-peak mode spectrum.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    pub axis: SpectrumAxis,
    pub positions: Vec<f64>,
    pub counts: Vec<f64>,
}

/// Q factor extracted from a Lorentzian line fit.
#[derive(Debug, Clone, serde::Serialize)]
pub struct QFactorResult {
    pub q: f64,
    pub sigma_q: f64,
    pub center: f64,
    pub hwhm: f64,
    pub fit: FitReport,
}

/// Fits a Lorentzian and returns Q = center / (2 HWHM), with sigma
/// propagated through the full center/width covariance.
pub fn q_factor(spectrum: &Spectrum) -> Result<QFactorResult, PhotonError> {
    if spectrum.positions.len() != spectrum.counts.len() || spectrum.positions.len() < 5 {
        return Err(PhotonError::InvalidField {
            field: "spectrum",
            message: format!(
                "need matching positions/counts with at least 5 points, got {} / {}",
                spectrum.positions.len(),
                spectrum.counts.len()
            ),
        });
    }
    let model = ModelSpec::lorentzian();
    let init = model.initial_guess(&spectrum.positions, &spectrum.counts)?;
    let weights = poisson_weights(&spectrum.counts);
    let res = fit(&model, &spectrum.positions, &spectrum.counts, Some(&weights), &init)?;
    if !res.converged {
        return Err(PhotonError::FitDidNotConverge { fit: Box::new(res.report(&model)) });
    }
    let center = res.parameters[1];
    let hwhm = res.parameters[2];
    let q = center / (2.0 * hwhm);
    let dc = 1.0 / (2.0 * hwhm);
    let dw = -center / (2.0 * hwhm * hwhm);
    let var = dc * dc * res.covariance_at(1, 1)
        + dw * dw * res.covariance_at(2, 2)
        + 2.0 * dc * dw * res.covariance_at(1, 2);
    Ok(QFactorResult {
        q,
        sigma_q: var.max(0.0).sqrt(),
        center,
        hwhm,
        fit: res.report(&model),
    })
}

/// Saturation-curve fit result.
#[derive(Debug, Clone, serde::Serialize)]
pub struct SaturationFit {
    pub saturated_counts_per_s: f64,
    pub sigma_saturated: f64,
    pub p_sat: f64,
    pub sigma_p_sat: f64,
    pub fit: FitReport,
}

/// Fits `S (1 - exp(-P/P_sat))` to detected count rates.
pub fn fit_saturation(powers: &[f64], counts_per_s: &[f64]) -> Result<SaturationFit, PhotonError> {
    if powers.len() != counts_per_s.len() {
        return Err(PhotonError::InvalidField {
            field: "powers",
            message: format!(
                "length mismatch: {} powers vs {} count rates",
                powers.len(),
                counts_per_s.len()
            ),
        });
    }
    let mut distinct: Vec<f64> = powers.to_vec();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() < 3 {
        return Err(PhotonError::InvalidField {
            field: "powers",
            message: format!("need at least 3 distinct powers, got {}", distinct.len()),
        });
    }
    let model = ModelSpec::saturation();
    let init = model.initial_guess(powers, counts_per_s)?;
    let res = fit(&model, powers, counts_per_s, None, &init)?;
    if !res.converged {
        return Err(PhotonError::FitDidNotConverge { fit: Box::new(res.report(&model)) });
    }
    Ok(SaturationFit {
        saturated_counts_per_s: res.parameters[0],
        sigma_saturated: res.uncertainties[0],
        p_sat: res.parameters[1],
        sigma_p_sat: res.uncertainties[1],
        fit: res.report(&model),
    })
}

/// Pulsed coincidence histogram (bin centers in delay).
#[derive(Debug, Clone, PartialEq)]
pub struct CoincidenceHistogram {
    pub delay_ns: Vec<f64>,
    pub counts: Vec<f64>,
    pub rep_period_ns: f64,
    pub bin_width_ns: f64,
}

impl CoincidenceHistogram {
    pub fn validate(&self) -> Result<(), PhotonError> {
        if self.delay_ns.len() != self.counts.len() || self.delay_ns.len() < 2 {
            return Err(PhotonError::InvalidField {
                field: "histogram",
                message: "need matching delay/counts with at least 2 bins".to_string(),
            });
        }
        if !(self.rep_period_ns > 0.0 && self.bin_width_ns > 0.0) {
            return Err(PhotonError::InvalidField {
                field: "histogram",
                message: format!(
                    "need positive rep_period_ns and bin_width_ns, got {} / {}",
                    self.rep_period_ns, self.bin_width_ns
                ),
            });
        }
        for pair in self.delay_ns.windows(2) {
            let step = pair[1] - pair[0];
            if !((step - self.bin_width_ns).abs() <= 1e-6 * self.bin_width_ns) {
                return Err(PhotonError::InvalidField {
                    field: "delay_ns",
                    message: format!(
                        "bins must be uniform at the stated width {}, found step {step}",
                        self.bin_width_ns
                    ),
                });
            }
        }
        if self.counts.iter().any(|c| !(c.is_finite() && *c >= 0.0)) {
            return Err(PhotonError::InvalidField {
                field: "counts",
                message: "must be finite and >= 0".to_string(),
            });
        }
        let reach = 3.0 * self.rep_period_ns - 0.5 * self.bin_width_ns;
        let first = self.delay_ns[0];
        let last = *self.delay_ns.last().expect("non-empty");
        if !(first <= -reach && last >= reach) {
            return Err(PhotonError::InvalidField {
                field: "delay_ns",
                message: format!(
                    "range [{first}, {last}] must cover at least +/-3 rep periods ({})",
                    3.0 * self.rep_period_ns
                ),
            });
        }
        Ok(())
    }
}

/// Integrated counts around one pulse peak.
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct PeakArea {
    pub center_delay_ns: f64,
    pub area: f64,
}

/// g2(0) from integrated peak areas.
#[derive(Debug, Clone, serde::Serialize)]
pub struct G2Result {
    pub g2: f64,
    pub sigma_g2: f64,
    pub halfwidth_ns: f64,
    pub central_area: f64,
    /// The four nearest side peaks (two per side) used for
    /// normalization.
    pub side_areas: Vec<PeakArea>,
}

fn window_area(hist: &CoincidenceHistogram, center: f64, halfwidth: f64) -> Option<f64> {
    let mut area = 0.0;
    let mut hit = false;
    for (&d, &c) in hist.delay_ns.iter().zip(&hist.counts) {
        if (d - center).abs() <= halfwidth + 1e-9 {
            area += c;
            hit = true;
        }
    }
    hit.then_some(area)
}

/// Integrates the central peak and the four nearest side peaks and
/// returns their ratio, with Poisson counting sigmas on every area.
/// The integration halfwidth defaults to a quarter period, wide enough
/// to include recapture structure adjacent to zero delay.
pub fn g2_zero(
    hist: &CoincidenceHistogram,
    integration_halfwidth_ns: Option<f64>,
) -> Result<G2Result, PhotonError> {
    hist.validate()?;
    let halfwidth = integration_halfwidth_ns.unwrap_or(hist.rep_period_ns / 4.0);
    if !(halfwidth > 0.0 && halfwidth < hist.rep_period_ns / 2.0) {
        return Err(PhotonError::InvalidField {
            field: "integration_halfwidth_ns",
            message: format!(
                "must lie in (0, rep_period/2) = (0, {}), got {halfwidth}",
                hist.rep_period_ns / 2.0
            ),
        });
    }
    let central_area = window_area(hist, 0.0, halfwidth)
        .ok_or_else(|| PhotonError::DegenerateHistogram("no bins around zero delay".into()))?;
    let mut side_areas = Vec::with_capacity(4);
    for k in [-2i32, -1, 1, 2] {
        let center = k as f64 * hist.rep_period_ns;
        let area = window_area(hist, center, halfwidth).ok_or_else(|| {
            PhotonError::DegenerateHistogram(format!("no bins around the side peak at {center} ns"))
        })?;
        side_areas.push(PeakArea { center_delay_ns: center, area });
    }
    let side_sum: f64 = side_areas.iter().map(|p| p.area).sum();
    if side_sum <= 0.0 {
        return Err(PhotonError::DegenerateHistogram(
            "side peaks contain no counts; cannot normalize".into(),
        ));
    }
    let mean_side = side_sum / 4.0;
    let g2 = central_area / mean_side;
    // Poisson areas: Var(A) = A, Var(mean side) = sum/16.
    let var = central_area / (mean_side * mean_side)
        + (central_area / (mean_side * mean_side)).powi(2) * (side_sum / 16.0);
    Ok(G2Result { g2, sigma_g2: var.sqrt(), halfwidth_ns: halfwidth, central_area, side_areas })
}

/// Recapture structure: two bumps at `+/-delay_ns` carrying `fraction`
/// of the central area (the rest sits at zero delay).
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecaptureSpec {
    pub delay_ns: f64,
    pub fraction: f64,
}

/// Scenario for [`simulate_histogram`].
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HistogramSpec {
    pub g2_target: f64,
    pub recapture: RecaptureSpec,
    pub rep_period_ns: f64,
    #[serde(default = "default_bin_width")]
    pub bin_width_ns: f64,
    /// Gaussian width of every pulse peak.
    #[serde(default = "default_peak_sigma")]
    pub peak_sigma_ns: f64,
    /// Pulse peaks on each side of zero delay; at least 3 so the
    /// histogram spans the +/-3 periods g2 analysis needs.
    #[serde(default = "default_side_peaks")]
    pub side_peaks_per_side: u32,
    /// Expected total counts in the histogram.
    pub total_pairs: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_bin_width() -> f64 {
    0.1
}
fn default_peak_sigma() -> f64 {
    0.5
}
fn default_side_peaks() -> u32 {
    3
}

impl HistogramSpec {
    fn validate(&self) -> Result<(), PhotonError> {
        let checks: [(&'static str, bool, String); 7] = [
            (
                "g2_target",
                self.g2_target.is_finite() && self.g2_target >= 0.0,
                format!("must be >= 0, got {}", self.g2_target),
            ),
            (
                "recapture",
                (0.0..=1.0).contains(&self.recapture.fraction)
                    && self.recapture.delay_ns.is_finite()
                    && self.recapture.delay_ns >= 0.0
                    && self.recapture.delay_ns < self.rep_period_ns / 2.0,
                format!(
                    "need fraction in [0, 1] and delay in [0, rep_period/2), got {:?}",
                    self.recapture
                ),
            ),
            (
                "rep_period_ns",
                self.rep_period_ns.is_finite() && self.rep_period_ns > 0.0,
                format!("must be > 0, got {}", self.rep_period_ns),
            ),
            (
                "bin_width_ns",
                self.bin_width_ns > 0.0 && self.bin_width_ns < self.rep_period_ns,
                format!("must be in (0, rep_period), got {}", self.bin_width_ns),
            ),
            (
                "peak_sigma_ns",
                self.peak_sigma_ns > 0.0,
                format!("must be > 0, got {}", self.peak_sigma_ns),
            ),
            (
                "side_peaks_per_side",
                self.side_peaks_per_side >= 3,
                format!("need at least 3, got {}", self.side_peaks_per_side),
            ),
            (
                "total_pairs",
                self.total_pairs.is_finite() && self.total_pairs > 0.0,
                format!("must be > 0, got {}", self.total_pairs),
            ),
        ];
        for (field, ok, message) in checks {
            if !ok {
                return Err(PhotonError::InvalidField { field, message });
            }
        }
        Ok(())
    }
}

/// Draws a pulsed coincidence histogram: equal-area Gaussian side peaks
/// at multiples of the period, a central structure whose expected area
/// is `g2_target` times one side area, and per-bin Poisson counts from
/// a seeded ChaCha8 stream (bins sampled left to right).
pub fn simulate_histogram(spec: &HistogramSpec) -> Result<CoincidenceHistogram, PhotonError> {
    spec.validate()?;
    let period = spec.rep_period_ns;
    let n_side = spec.side_peaks_per_side;
    let side_area = spec.total_pairs / (2.0 * n_side as f64 + spec.g2_target);
    let central_area = spec.g2_target * side_area;

    // (center, area) of every expected peak.
    let mut peaks: Vec<(f64, f64)> = Vec::new();
    for k in 1..=n_side {
        let c = k as f64 * period;
        peaks.push((-c, side_area));
        peaks.push((c, side_area));
    }
    let bump = central_area * spec.recapture.fraction / 2.0;
    if bump > 0.0 {
        peaks.push((-spec.recapture.delay_ns, bump));
        peaks.push((spec.recapture.delay_ns, bump));
    }
    let at_zero = central_area * (1.0 - spec.recapture.fraction);
    if at_zero > 0.0 {
        peaks.push((0.0, at_zero));
    }

    let half_bins = (((n_side as f64 + 0.5) * period) / spec.bin_width_ns).round() as i64;
    let norm = 1.0 / (spec.peak_sigma_ns * (2.0 * std::f64::consts::PI).sqrt());
    let mut delay_ns = Vec::with_capacity(2 * half_bins as usize + 1);
    let mut counts = Vec::with_capacity(delay_ns.capacity());
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    for i in -half_bins..=half_bins {
        let d = i as f64 * spec.bin_width_ns;
        let mut mu = 0.0;
        for &(c, a) in &peaks {
            let z = (d - c) / spec.peak_sigma_ns;
            mu += a * norm * (-0.5 * z * z).exp() * spec.bin_width_ns;
        }
        // The Poisson sampler misbehaves once exp(-mu) rounds to 1;
        // far-tail bins with sub-1e-9 means are statistically empty
        // anyway.
        let drawn = if mu > 1e-9 {
            Poisson::new(mu).expect("positive mean").sample(&mut rng)
        } else {
            0.0
        };
        delay_ns.push(d);
        counts.push(drawn);
    }
    let hist = CoincidenceHistogram {
        delay_ns,
        counts,
        rep_period_ns: period,
        bin_width_ns: spec.bin_width_ns,
    };
    hist.validate()?;
    Ok(hist)
}

/// One element of the detection path.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BudgetElement {
    pub name: String,
    /// Power transmission in (0, 1].
    pub transmission: f64,
    /// Relative one-sigma uncertainty (0.03 means 3%).
    pub rel_err: f64,
}

/// Combined transmission of the whole path.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OverallTransmission {
    pub transmission: f64,
    pub rel_err: f64,
}

/// Ordered transmission elements with their combined product.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct EfficiencyBudget {
    pub elements: Vec<BudgetElement>,
    pub overall: OverallTransmission,
}

/// Multiplies element transmissions and combines relative errors in
/// quadrature (independent factors).
pub fn efficiency_budget(elements: &[BudgetElement]) -> Result<EfficiencyBudget, PhotonError> {
    if elements.is_empty() {
        return Err(PhotonError::InvalidField {
            field: "elements",
            message: "must not be empty".to_string(),
        });
    }
    for e in elements {
        if !(e.transmission > 0.0 && e.transmission <= 1.0) {
            return Err(PhotonError::InvalidField {
                field: "transmission",
                message: format!("{}: must be in (0, 1], got {}", e.name, e.transmission),
            });
        }
        if !(e.rel_err.is_finite() && e.rel_err >= 0.0) {
            return Err(PhotonError::InvalidField {
                field: "rel_err",
                message: format!("{}: must be >= 0, got {}", e.name, e.rel_err),
            });
        }
    }
    let transmission = elements.iter().map(|e| e.transmission).product();
    let rel_err = elements.iter().map(|e| e.rel_err * e.rel_err).sum::<f64>().sqrt();
    Ok(EfficiencyBudget {
        elements: elements.to_vec(),
        overall: OverallTransmission { transmission, rel_err },
    })
}

/// Extraction efficiency into the first lens:
/// `eta = (detected / rep_rate) / overall_transmission / (1 + g2)`,
/// where the `1/(1+g2)` factor strips multi-photon events from the
/// detected flux. Sigma combines the budget, g2, and count-rate
/// uncertainties in quadrature (first order).
pub fn extraction_efficiency(
    detected_counts_per_s: Uncertain,
    rep_rate_hz: f64,
    budget: &EfficiencyBudget,
    g2: Uncertain,
) -> Result<Uncertain, PhotonError> {
    if !(detected_counts_per_s.value > 0.0 && detected_counts_per_s.sigma >= 0.0) {
        return Err(PhotonError::InvalidField {
            field: "detected_counts_per_s",
            message: format!("need value > 0 and sigma >= 0, got {detected_counts_per_s:?}"),
        });
    }
    if !(rep_rate_hz.is_finite() && rep_rate_hz > 0.0) {
        return Err(PhotonError::InvalidField {
            field: "rep_rate_hz",
            message: format!("must be > 0, got {rep_rate_hz}"),
        });
    }
    if !(budget.overall.transmission > 0.0) {
        return Err(PhotonError::InvalidField {
            field: "budget",
            message: format!("overall transmission must be > 0, got {}", budget.overall.transmission),
        });
    }
    if !(g2.value >= 0.0 && g2.sigma >= 0.0) {
        return Err(PhotonError::InvalidField {
            field: "g2",
            message: format!("need value >= 0 and sigma >= 0, got {g2:?}"),
        });
    }
    let eta = detected_counts_per_s.value
        / rep_rate_hz
        / budget.overall.transmission
        / (1.0 + g2.value);
    if eta > 1.0 {
        log::warn!("extraction efficiency {eta:.4} exceeds 1; inputs are likely inconsistent");
    }
    let rel = ((detected_counts_per_s.sigma / detected_counts_per_s.value).powi(2)
        + budget.overall.rel_err.powi(2)
        + (g2.sigma / (1.0 + g2.value)).powi(2))
    .sqrt();
    Ok(Uncertain::new(eta, eta * rel))
}

/// Everything the characterization pipeline can report about one
/// source. Fields stay `None` when the corresponding input was not
/// provided.
#[derive(Debug, Clone, Default, serde::Serialize)]
pub struct SourceReport {
    pub lifetime_cavity_ps: Option<Uncertain>,
    pub lifetime_reference_ps: Option<Uncertain>,
    pub purcell: Option<Uncertain>,
    pub q_factor: Option<Uncertain>,
    pub g2_zero: Option<Uncertain>,
    pub saturated_counts_per_s: Option<Uncertain>,
    pub saturation_power: Option<Uncertain>,
    pub detection_path: Option<EfficiencyBudget>,
    pub extraction_efficiency: Option<Uncertain>,
    /// Metadata only; no operation consumes it.
    pub pump_power_density_w_per_cm2: Option<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn decay_trace(tau_ps: f64, amplitude: f64, offset: f64) -> DecayTrace {
        let time_ps: Vec<f64> = (0..200).map(|i| i as f64 * 40.0).collect();
        let counts = time_ps.iter().map(|t| offset + amplitude * (-t / tau_ps).exp()).collect();
        DecayTrace { time_ps, counts, description: "synthetic".to_string() }
    }

    #[test]
    fn noiseless_lifetime_recovers_the_generator_tau() {
        for tau in [530.0, 1120.0] {
            let trace = decay_trace(tau, 1e4, 20.0);
            let fit = fit_lifetime(&trace, None).unwrap();
            assert!(
                (fit.tau_ps / tau - 1.0).abs() < 1e-6,
                "tau {tau}: got {}",
                fit.tau_ps
            );
            assert!(!fit.peak_in_window);
        }
    }

    #[test]
    fn window_containing_the_peak_sets_the_warning_flag() {
        let mut trace = decay_trace(530.0, 1e4, 20.0);
        // Rising edge: peak moves to the third sample.
        trace.counts[0] = 100.0;
        trace.counts[1] = 5000.0;
        let fit = fit_lifetime(&trace, Some((0.0, 8000.0))).unwrap();
        assert!(fit.peak_in_window);
        let fit = fit_lifetime(&trace, None).unwrap();
        assert!(!fit.peak_in_window);
    }

    #[test]
    fn lifetime_window_is_shift_invariant() {
        let trace = decay_trace(700.0, 5e3, 10.0);
        let a = fit_lifetime(&trace, Some((400.0, 7000.0))).unwrap();
        let b = fit_lifetime(&trace, Some((1200.0, 7000.0))).unwrap();
        assert!((a.tau_ps / b.tau_ps - 1.0).abs() < 1e-6);
    }

    #[test]
    fn purcell_matches_hand_propagation() {
        let f = purcell_factor(Uncertain::new(1120.0, 4.0), Uncertain::new(530.0, 6.0)).unwrap();
        assert!((f.value - 2.1132075471698113).abs() < 1e-12, "{}", f.value);
        assert!((f.sigma - 0.025085348151256).abs() < 1e-9, "{}", f.sigma);
        // Consistent with a rounded 2.1.
        assert!((f.value - 2.1).abs() < 0.05);
    }

    #[test]
    fn purcell_of_equal_lifetimes_is_exactly_one() {
        let f = purcell_factor(Uncertain::exact(530.0), Uncertain::exact(530.0)).unwrap();
        assert_eq!(f.value, 1.0);
        assert_eq!(f.sigma, 0.0);
        assert!(purcell_factor(Uncertain::exact(530.0), Uncertain::exact(0.0)).is_err());
    }

    fn lorentzian_spectrum(center: f64, q: f64, scale: f64) -> Spectrum {
        let hwhm = center / (2.0 * q);
        let positions: Vec<f64> =
            (0..301).map(|i| center - 5.0 * hwhm + i as f64 * hwhm / 30.0).collect();
        let counts = positions
            .iter()
            .map(|x| {
                let d = (x - center) / hwhm;
                scale * (3000.0 / (1.0 + d * d) + 40.0)
            })
            .collect();
        Spectrum { axis: SpectrumAxis::WavelengthNm, positions, counts }
    }

    #[test]
    fn q_factor_recovers_the_generator_line() {
        let r = q_factor(&lorentzian_spectrum(915.01, 1438.0, 1.0)).unwrap();
        assert!((r.q / 1438.0 - 1.0).abs() < 1e-6, "{}", r.q);
        assert!((r.center - 915.01).abs() < 1e-6);
    }

    #[test]
    fn q_is_invariant_under_count_scaling() {
        let a = q_factor(&lorentzian_spectrum(915.01, 1438.0, 1.0)).unwrap();
        let b = q_factor(&lorentzian_spectrum(915.01, 1438.0, 2.0)).unwrap();
        assert!((a.q / b.q - 1.0).abs() < 1e-9, "{} vs {}", a.q, b.q);
    }

    #[test]
    fn q_sigma_uses_the_full_center_width_covariance() {
        let r = q_factor(&lorentzian_spectrum(915.01, 1438.0, 1.0)).unwrap();
        let cov = &r.fit.covariance_row_major;
        let dc = 1.0 / (2.0 * r.hwhm);
        let dw = -r.center / (2.0 * r.hwhm * r.hwhm);
        let want = (dc * dc * cov[1 * 4 + 1] + dw * dw * cov[2 * 4 + 2]
            + 2.0 * dc * dw * cov[1 * 4 + 2])
            .max(0.0)
            .sqrt();
        assert_eq!(r.sigma_q, want);
    }

    #[test]
    fn saturation_fit_recovers_the_plateau() {
        let s = 1_679_000.0;
        let p_sat = 0.2;
        let powers: Vec<f64> = (1..=40).map(|i| i as f64 * 0.05).collect();
        let counts: Vec<f64> = powers.iter().map(|p| s * (1.0 - (-p / p_sat).exp())).collect();
        let fit = fit_saturation(&powers, &counts).unwrap();
        assert!((fit.saturated_counts_per_s / s - 1.0).abs() < 1e-6);
        assert!((fit.p_sat / p_sat - 1.0).abs() < 1e-6);
        // Far above saturation the curve sits at the plateau.
        assert!((counts[39] / s - 1.0).abs() < 1e-4);
    }

    #[test]
    fn saturation_requires_three_distinct_powers() {
        let err = fit_saturation(&[1.0, 1.0, 1.0, 2.0], &[5.0, 5.0, 5.0, 8.0]).unwrap_err();
        assert!(matches!(err, PhotonError::InvalidField { field: "powers", .. }));
    }

    /// Histogram with all peak mass in single bins at exact multiples of
    /// the period, so areas are trivially auditable.
    fn delta_histogram(central: f64, sides: [f64; 4]) -> CoincidenceHistogram {
        let period = 10.0;
        let delay_ns: Vec<f64> = (-35..=35).map(|i| i as f64).collect();
        let mut counts = vec![0.0; delay_ns.len()];
        let at = |d: i64| (d + 35) as usize;
        counts[at(0)] = central;
        counts[at(-20)] = sides[0];
        counts[at(-10)] = sides[1];
        counts[at(10)] = sides[2];
        counts[at(20)] = sides[3];
        counts[at(-30)] = 500.0;
        counts[at(30)] = 500.0;
        CoincidenceHistogram { delay_ns, counts, rep_period_ns: period, bin_width_ns: 1.0 }
    }

    #[test]
    fn g2_is_the_ratio_of_central_to_mean_side_area() {
        let hist = delta_histogram(123.0, [400.0, 600.0, 500.0, 500.0]);
        let r = g2_zero(&hist, None).unwrap();
        assert_eq!(r.central_area, 123.0);
        assert_eq!(r.g2, 123.0 / 500.0);
        assert_eq!(r.side_areas.len(), 4);
    }

    #[test]
    fn empty_central_window_gives_zero_and_empty_sides_error() {
        let zero = g2_zero(&delta_histogram(0.0, [500.0; 4]), None).unwrap();
        assert_eq!(zero.g2, 0.0);
        let err = g2_zero(&delta_histogram(10.0, [0.0; 4]), None).unwrap_err();
        assert!(matches!(err, PhotonError::DegenerateHistogram(_)));
    }

    #[test]
    fn identical_peaks_give_g2_of_exactly_one() {
        let r = g2_zero(&delta_histogram(500.0, [500.0; 4]), None).unwrap();
        assert_eq!(r.g2, 1.0);
    }

    #[test]
    fn scaling_counts_leaves_g2_and_shrinks_sigma_as_root_k() {
        let a = g2_zero(&delta_histogram(120.0, [480.0, 510.0, 505.0, 495.0]), None).unwrap();
        let k = 9.0;
        let hist = delta_histogram(120.0 * k, [480.0 * k, 510.0 * k, 505.0 * k, 495.0 * k]);
        let b = g2_zero(&hist, None).unwrap();
        assert!((a.g2 - b.g2).abs() < 1e-12);
        assert!((b.sigma_g2 * k.sqrt() / a.sigma_g2 - 1.0).abs() < 1e-12);
    }

    fn histogram_spec(g2: f64, seed: u64) -> HistogramSpec {
        HistogramSpec {
            g2_target: g2,
            recapture: RecaptureSpec { delay_ns: 2.0, fraction: 0.8 },
            rep_period_ns: rep_period_ns(79.3e6),
            bin_width_ns: 0.1,
            peak_sigma_ns: 0.5,
            side_peaks_per_side: 3,
            total_pairs: 2e5,
            seed,
        }
    }

    #[test]
    fn simulated_histogram_is_deterministic_and_seed_sensitive() {
        let a = simulate_histogram(&histogram_spec(0.2, 5)).unwrap();
        let b = simulate_histogram(&histogram_spec(0.2, 5)).unwrap();
        let c = simulate_histogram(&histogram_spec(0.2, 6)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn zero_g2_target_leaves_the_central_window_empty() {
        let hist = simulate_histogram(&histogram_spec(0.0, 3)).unwrap();
        let quarter = hist.rep_period_ns / 4.0;
        let central: f64 = hist
            .delay_ns
            .iter()
            .zip(&hist.counts)
            .filter(|(d, _)| d.abs() <= quarter)
            .map(|(_, c)| c)
            .sum();
        assert_eq!(central, 0.0);
    }

    #[test]
    fn closed_loop_recovers_the_g2_target_within_counting_noise() {
        // Wider window than the default so the recapture bumps at
        // +/-2 ns +- a few sigma sit fully inside it.
        let halfwidth = 0.45 * rep_period_ns(79.3e6);
        for target in [0.144, 1.0] {
            let hist = simulate_histogram(&histogram_spec(target, 11)).unwrap();
            let r = g2_zero(&hist, Some(halfwidth)).unwrap();
            assert!(
                (r.g2 - target).abs() < 3.0 * r.sigma_g2,
                "target {target}: got {} +/- {}",
                r.g2,
                r.sigma_g2
            );
        }
    }

    #[test]
    fn poissonian_source_has_central_peak_like_the_sides() {
        let spec = HistogramSpec {
            recapture: RecaptureSpec { delay_ns: 0.0, fraction: 0.0 },
            ..histogram_spec(1.0, 21)
        };
        let hist = simulate_histogram(&spec).unwrap();
        let r = g2_zero(&hist, None).unwrap();
        assert!((r.g2 - 1.0).abs() < 3.0 * r.sigma_g2, "{} +/- {}", r.g2, r.sigma_g2);
    }

    fn table_elements() -> Vec<BudgetElement> {
        let rows: [(&str, f64, f64); 8] = [
            ("optical window", 0.929, 0.030),
            ("microscope objective", 0.787, 0.030),
            ("beam splitter 1", 0.490, 0.030),
            ("beam splitter 2", 0.490, 0.030),
            ("silver mirror", 0.956, 0.030),
            ("narrow band filter", 0.568, 0.020),
            ("coupling lens", 0.960, 0.030),
            ("detector efficiency", 0.300, 0.050),
        ];
        rows.iter()
            .map(|&(name, transmission, rel_err)| BudgetElement {
                name: name.to_string(),
                transmission,
                rel_err,
            })
            .collect()
    }

    #[test]
    fn eight_element_budget_matches_the_reference_product_and_quadrature() {
        let budget = efficiency_budget(&table_elements()).unwrap();
        assert!((budget.overall.transmission - 0.0274524634598).abs() < 1e-10);
        assert!((budget.overall.rel_err - 0.0911043357914).abs() < 1e-10);
    }

    #[test]
    fn single_element_budget_is_that_element() {
        let e = BudgetElement { name: "lens".into(), transmission: 0.8, rel_err: 0.02 };
        let budget = efficiency_budget(&[e.clone()]).unwrap();
        assert_eq!(budget.overall.transmission, 0.8);
        assert_eq!(budget.overall.rel_err, 0.02);
        let exact: Vec<BudgetElement> =
            [0.9, 0.5].iter().map(|&t| BudgetElement { name: "x".into(), transmission: t, rel_err: 0.0 }).collect();
        assert_eq!(efficiency_budget(&exact).unwrap().overall.rel_err, 0.0);
    }

    #[test]
    fn invalid_budget_elements_are_rejected() {
        let bad = BudgetElement { name: "open port".into(), transmission: 0.0, rel_err: 0.01 };
        assert!(matches!(
            efficiency_budget(&[bad]),
            Err(PhotonError::InvalidField { field: "transmission", .. })
        ));
        let bad = BudgetElement { name: "gain".into(), transmission: 1.2, rel_err: 0.01 };
        assert!(efficiency_budget(&[bad]).is_err());
        let bad = BudgetElement { name: "mirror".into(), transmission: 0.9, rel_err: -0.1 };
        assert!(matches!(
            efficiency_budget(&[bad]),
            Err(PhotonError::InvalidField { field: "rel_err", .. })
        ));
    }

    fn flat_budget(transmission: f64, rel_err: f64) -> EfficiencyBudget {
        efficiency_budget(&[BudgetElement {
            name: "path".into(),
            transmission,
            rel_err,
        }])
        .unwrap()
    }

    #[test]
    fn extraction_efficiency_reproduces_the_reference_arithmetic() {
        let budget = flat_budget(0.027, 0.091);
        let eta = extraction_efficiency(
            Uncertain::exact(1_679_000.0),
            79.3e6,
            &budget,
            Uncertain::new(0.205, 0.010),
        )
        .unwrap();
        assert!((eta.value - 0.6507687618).abs() < 1e-9, "{}", eta.value);
        assert!((eta.value - 0.65).abs() < 0.01);

        let eta = extraction_efficiency(
            Uncertain::exact(1_657_000.0),
            79.3e6,
            &budget,
            Uncertain::new(0.144, 0.012),
        )
        .unwrap();
        assert!((eta.value - 0.6764871204).abs() < 1e-9, "{}", eta.value);
        assert!((eta.value - 0.68).abs() < 0.01);
        // Relative sigma is budget-dominated, near 9%.
        assert!((eta.sigma / eta.value - 0.0917).abs() < 0.01, "{}", eta.sigma / eta.value);
    }

    #[test]
    fn perfect_source_and_path_give_unit_efficiency() {
        let eta = extraction_efficiency(
            Uncertain::exact(79.3e6),
            79.3e6,
            &flat_budget(1.0, 0.0),
            Uncertain::exact(0.0),
        )
        .unwrap();
        assert_eq!(eta.value, 1.0);
        assert_eq!(eta.sigma, 0.0);
    }

    #[test]
    fn efficiency_is_monotone_in_g2_and_transmission() {
        let mut last = f64::INFINITY;
        for g2 in [0.0, 0.1, 0.2, 0.5, 1.0] {
            let eta = extraction_efficiency(
                Uncertain::exact(1e6),
                79.3e6,
                &flat_budget(0.027, 0.0),
                Uncertain::exact(g2),
            )
            .unwrap();
            assert!(eta.value < last);
            last = eta.value;
        }
        let mut last = f64::INFINITY;
        for t in [0.01, 0.027, 0.1, 0.5] {
            let eta = extraction_efficiency(
                Uncertain::exact(1e5),
                79.3e6,
                &flat_budget(t, 0.0),
                Uncertain::exact(0.0),
            )
            .unwrap();
            assert!(eta.value < last);
            last = eta.value;
        }
    }

    #[test]
    fn malformed_histograms_are_rejected() {
        let mut hist = delta_histogram(100.0, [500.0; 4]);
        hist.delay_ns[3] += 0.2;
        assert!(hist.validate().is_err());
        let mut hist = delta_histogram(100.0, [500.0; 4]);
        hist.counts[0] = -1.0;
        assert!(hist.validate().is_err());
        // Too narrow: covers only two periods.
        let delay_ns: Vec<f64> = (-25..=25).map(|i| i as f64).collect();
        let counts = vec![1.0; delay_ns.len()];
        let hist =
            CoincidenceHistogram { delay_ns, counts, rep_period_ns: 10.0, bin_width_ns: 1.0 };
        assert!(hist.validate().is_err());
    }
}
