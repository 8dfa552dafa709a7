//! Micropillar cavity mode design: the planar-cavity dispersion
//! relation, inverse design on a diameter grid, and a Monte-Carlo yield
//! estimate for matching an emitter line under temperature tuning.
//!
//! The fundamental-mode energy of a pillar of radius R etched from a
//! planar cavity with resonance `E_2D` is
//!
//! ```text
//! E = sqrt(E_2D^2 + (hbar c)^2 chi^2 / (epsilon R^2))
//! ```
//!
//! where `chi` is the mode's Bessel zero and `epsilon` an effective
//! dielectric constant. The module's two physical constants are
//! `hbar*c = 197.327 eV nm` and the photon energy-wavelength product
//! `1239.842 eV nm`.

mod bessel;

pub use bessel::{bessel_j, bessel_zero, MAX_ORDER, MAX_ZERO_INDEX};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// hbar*c in eV nm.
pub const HBAR_C_EV_NM: f64 = 197.327;
/// Photon energy-wavelength product in eV nm.
pub const ENERGY_WAVELENGTH_EV_NM: f64 = 1239.842;

pub fn wavelength_to_energy_ev(lambda_nm: f64) -> f64 {
    ENERGY_WAVELENGTH_EV_NM / lambda_nm
}

pub fn energy_to_wavelength_nm(e_ev: f64) -> f64 {
    ENERGY_WAVELENGTH_EV_NM / e_ev
}

#[derive(Debug, thiserror::Error)]
pub enum CavityError {
    #[error("invalid {field}: {message}")]
    InvalidField { field: &'static str, message: String },
    #[error("bessel zeros are supported for order <= 10 and index <= 10, got order {order}, index {index}")]
    UnsupportedBessel { order: u32, index: u32 },
    #[error("target energy {target_ev} eV is not above the planar resonance {e_2d_ev} eV; etching can only blue-shift the mode")]
    InfeasibleTarget { target_ev: f64, e_2d_ev: f64 },
}

/// DBR stopband edges in wavelength.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Stopband {
    pub low_nm: f64,
    pub high_nm: f64,
}

impl Default for Stopband {
    fn default() -> Self {
        Stopband { low_nm: 870.0, high_nm: 980.0 }
    }
}

/// The unetched planar cavity a pillar is carved from.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanarCavity {
    /// Planar resonance energy.
    pub e_2d_ev: f64,
    /// Effective dielectric constant in the dispersion relation.
    #[serde(default = "default_epsilon")]
    pub epsilon_eff: f64,
    #[serde(default)]
    pub stopband_nm: Stopband,
}

fn default_epsilon() -> f64 {
    11.9
}

impl PlanarCavity {
    pub fn validate(&self) -> Result<(), CavityError> {
        if !(self.e_2d_ev.is_finite() && self.e_2d_ev > 0.0) {
            return Err(CavityError::InvalidField {
                field: "e_2d_ev",
                message: format!("must be > 0, got {}", self.e_2d_ev),
            });
        }
        if !(self.epsilon_eff.is_finite() && self.epsilon_eff > 1.0) {
            return Err(CavityError::InvalidField {
                field: "epsilon_eff",
                message: format!("must be > 1, got {}", self.epsilon_eff),
            });
        }
        let sb = self.stopband_nm;
        if !(sb.low_nm.is_finite() && sb.high_nm.is_finite() && 0.0 < sb.low_nm && sb.low_nm < sb.high_nm)
        {
            return Err(CavityError::InvalidField {
                field: "stopband_nm",
                message: format!("need 0 < low < high, got {} / {}", sb.low_nm, sb.high_nm),
            });
        }
        Ok(())
    }
}

/// Azimuthal and radial indices of a guided pillar mode.
///
/// `chi` resolves through the weakly-guiding mapping: azimuthal index
/// `n_phi` uses Bessel order `|n_phi - 1|`, so the fundamental HE11 mode
/// (`n_phi = 1, n_r = 0`) takes the first zero of J0, 2.4048.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModeIndex {
    pub n_phi: u32,
    pub n_r: u32,
}

impl ModeIndex {
    pub const FUNDAMENTAL: ModeIndex = ModeIndex { n_phi: 1, n_r: 0 };

    /// The mode's transverse wavenumber parameter: the (n_r+1)-th
    /// positive zero of J_{|n_phi - 1|}.
    pub fn chi(&self) -> Result<f64, CavityError> {
        bessel_zero(self.n_phi.abs_diff(1), self.n_r)
    }
}

impl Default for ModeIndex {
    fn default() -> Self {
        ModeIndex::FUNDAMENTAL
    }
}

/// The dispersion relation with an explicit chi, in eV.
pub fn mode_energy_chi(e_2d_ev: f64, epsilon_eff: f64, chi: f64, radius_nm: f64) -> f64 {
    let transverse = HBAR_C_EV_NM * chi / radius_nm;
    (e_2d_ev * e_2d_ev + transverse * transverse / epsilon_eff).sqrt()
}

/// Mode energy of a pillar of the given radius, in eV.
pub fn mode_energy(
    cavity: &PlanarCavity,
    mode: ModeIndex,
    radius_nm: f64,
) -> Result<f64, CavityError> {
    cavity.validate()?;
    if !(radius_nm.is_finite() && radius_nm > 0.0) {
        return Err(CavityError::InvalidField {
            field: "radius_nm",
            message: format!("must be > 0, got {radius_nm}"),
        });
    }
    Ok(mode_energy_chi(cavity.e_2d_ev, cavity.epsilon_eff, mode.chi()?, radius_nm))
}

/// Exact continuous-radius inverse of the dispersion relation.
pub fn radius_for_energy(
    cavity: &PlanarCavity,
    mode: ModeIndex,
    target_ev: f64,
) -> Result<f64, CavityError> {
    cavity.validate()?;
    if !(target_ev.is_finite() && target_ev > cavity.e_2d_ev) {
        return Err(CavityError::InfeasibleTarget { target_ev, e_2d_ev: cavity.e_2d_ev });
    }
    let chi = mode.chi()?;
    let gap = target_ev * target_ev - cavity.e_2d_ev * cavity.e_2d_ev;
    Ok(HBAR_C_EV_NM * chi / (cavity.epsilon_eff * gap).sqrt())
}

/// A pillar picked for a target emitter line.
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct PillarDesign {
    pub radius_nm: f64,
    pub diameter_um: f64,
    pub mode: ModeIndex,
    pub e_mode_ev: f64,
    pub lambda_mode_nm: f64,
    /// Realized mode energy minus the target, in meV.
    pub detuning_mev: f64,
}

fn check_grid(diameter_grid_um: &[f64]) -> Result<(), CavityError> {
    if diameter_grid_um.is_empty() {
        return Err(CavityError::InvalidField {
            field: "diameter_grid_um",
            message: "must not be empty".to_string(),
        });
    }
    for &d in diameter_grid_um {
        if !(d.is_finite() && d > 0.0) {
            return Err(CavityError::InvalidField {
                field: "diameter_grid_um",
                message: format!("diameters must be > 0, got {d}"),
            });
        }
    }
    Ok(())
}

/// Picks the grid diameter whose mode energy is closest to the target
/// (ties go to the smaller diameter). The target must lie above the
/// planar resonance.
pub fn select_radius(
    cavity: &PlanarCavity,
    target_ev: f64,
    mode: ModeIndex,
    diameter_grid_um: &[f64],
) -> Result<PillarDesign, CavityError> {
    cavity.validate()?;
    check_grid(diameter_grid_um)?;
    if !(target_ev.is_finite() && target_ev > cavity.e_2d_ev) {
        return Err(CavityError::InfeasibleTarget { target_ev, e_2d_ev: cavity.e_2d_ev });
    }
    let chi = mode.chi()?;
    let mut best: Option<(f64, f64, f64)> = None; // (|detuning|, diameter, energy)
    for &d in diameter_grid_um {
        let e = mode_energy_chi(cavity.e_2d_ev, cavity.epsilon_eff, chi, d * 500.0);
        let miss = (e - target_ev).abs();
        let better = match best {
            None => true,
            Some((best_miss, best_d, _)) => miss < best_miss || (miss == best_miss && d < best_d),
        };
        if better {
            best = Some((miss, d, e));
        }
    }
    let (_, diameter_um, e_mode_ev) = best.expect("non-empty grid");
    Ok(PillarDesign {
        radius_nm: diameter_um * 500.0,
        diameter_um,
        mode,
        e_mode_ev,
        lambda_mode_nm: energy_to_wavelength_nm(e_mode_ev),
        detuning_mev: (e_mode_ev - target_ev) * 1000.0,
    })
}

/// One sample of the mode-energy-vs-diameter curve.
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct ModeCurvePoint {
    pub diameter_um: f64,
    pub energy_ev: f64,
    pub wavelength_nm: f64,
}

/// Vectorized [`mode_energy`] over a diameter list.
pub fn mode_curve(
    cavity: &PlanarCavity,
    mode: ModeIndex,
    diameters_um: &[f64],
) -> Result<Vec<ModeCurvePoint>, CavityError> {
    cavity.validate()?;
    check_grid(diameters_um)?;
    let chi = mode.chi()?;
    Ok(diameters_um
        .iter()
        .map(|&d| {
            let e = mode_energy_chi(cavity.e_2d_ev, cavity.epsilon_eff, chi, d * 500.0);
            ModeCurvePoint { diameter_um: d, energy_ev: e, wavelength_nm: energy_to_wavelength_nm(e) }
        })
        .collect())
}

/// Writes a mode curve as CSV (`diameter_um,energy_ev,wavelength_nm`).
pub fn write_mode_curve_csv(
    points: &[ModeCurvePoint],
    out: &mut impl std::io::Write,
) -> std::io::Result<()> {
    writeln!(out, "diameter_um,energy_ev,wavelength_nm")?;
    for p in points {
        writeln!(out, "{},{},{}", p.diameter_um, p.energy_ev, p.wavelength_nm)?;
    }
    Ok(())
}

/// Distribution the emitter line is drawn from, per device.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EmitterDistribution {
    Uniform { low_ev: f64, high_ev: f64 },
    Normal { mean_ev: f64, sigma_ev: f64 },
}

impl EmitterDistribution {
    fn validate(&self) -> Result<(), CavityError> {
        let ok = match self {
            EmitterDistribution::Uniform { low_ev, high_ev } => {
                low_ev.is_finite() && high_ev.is_finite() && low_ev < high_ev
            }
            EmitterDistribution::Normal { mean_ev, sigma_ev } => {
                mean_ev.is_finite() && sigma_ev.is_finite() && *sigma_ev >= 0.0
            }
        };
        if ok {
            Ok(())
        } else {
            Err(CavityError::InvalidField {
                field: "emitter",
                message: format!("invalid distribution {self:?}"),
            })
        }
    }

    fn sample(&self, rng: &mut impl Rng) -> f64 {
        match *self {
            EmitterDistribution::Uniform { low_ev, high_ev } => {
                low_ev + (high_ev - low_ev) * rng.gen::<f64>()
            }
            EmitterDistribution::Normal { mean_ev, sigma_ev } => {
                if sigma_ev == 0.0 {
                    mean_ev
                } else {
                    Normal::new(mean_ev, sigma_ev).expect("validated").sample(rng)
                }
            }
        }
    }
}

/// Linear temperature-tuning model. The coefficients are illustrative
/// defaults, not measured values; emitter and mode energies are defined
/// at `t_min_k` and drift linearly from there.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TuningSpec {
    pub t_min_k: f64,
    pub t_max_k: f64,
    pub qd_shift_mev_per_k: f64,
    pub mode_shift_mev_per_k: f64,
}

impl Default for TuningSpec {
    fn default() -> Self {
        TuningSpec {
            t_min_k: 4.0,
            t_max_k: 40.0,
            qd_shift_mev_per_k: -0.05,
            mode_shift_mev_per_k: -0.01,
        }
    }
}

/// Monte-Carlo yield scenario.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct YieldSpec {
    pub emitter: EmitterDistribution,
    #[serde(default)]
    pub tuning: TuningSpec,
    pub diameter_grid_um: Vec<f64>,
    #[serde(default)]
    pub mode: ModeIndex,
    /// Cavity quality factor defining the resonance linewidth.
    #[serde(default = "default_q")]
    pub q_factor: f64,
    /// One-sigma normal shift applied to the emitter line after the
    /// pillar is designed (post-fabrication drift).
    #[serde(default)]
    pub fabrication_shift_sigma_ev: f64,
    pub trials: u32,
    #[serde(default)]
    pub seed: u64,
}

fn default_q() -> f64 {
    1438.0
}

/// Yield estimate with a 95% Wilson score interval.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct YieldEstimate {
    pub yield_fraction: f64,
    pub successes: u64,
    pub trials: u64,
    pub ci_low: f64,
    pub ci_high: f64,
}

fn wilson_interval(successes: u64, trials: u64) -> (f64, f64) {
    let z = 1.959963984540054_f64; // two-sided 95%
    let n = trials as f64;
    let p = successes as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    ((center - half).max(0.0), (center + half).min(1.0))
}

/// Estimates the fraction of devices whose emitter can be brought into
/// resonance with the designed pillar mode somewhere in the tuning
/// range.
///
/// Per trial (an independent RNG stream, so trials are stable under any
/// execution order): draw an emitter line, pick the best grid diameter
/// for it, apply the post-fabrication shift, then succeed if
/// `|E_QD(T) - E_mode(T)| < E_mode/(2 Q)` for some temperature in range.
/// Draws below the planar resonance cannot be designed for and count as
/// failures.
pub fn estimate_yield(
    cavity: &PlanarCavity,
    spec: &YieldSpec,
) -> Result<YieldEstimate, CavityError> {
    cavity.validate()?;
    spec.emitter.validate()?;
    check_grid(&spec.diameter_grid_um)?;
    if spec.trials == 0 {
        return Err(CavityError::InvalidField {
            field: "trials",
            message: "must be >= 1".to_string(),
        });
    }
    if !(spec.q_factor.is_finite() && spec.q_factor > 0.0) {
        return Err(CavityError::InvalidField {
            field: "q_factor",
            message: format!("must be > 0, got {}", spec.q_factor),
        });
    }
    if !(spec.fabrication_shift_sigma_ev.is_finite() && spec.fabrication_shift_sigma_ev >= 0.0) {
        return Err(CavityError::InvalidField {
            field: "fabrication_shift_sigma_ev",
            message: format!("must be >= 0, got {}", spec.fabrication_shift_sigma_ev),
        });
    }
    let t = spec.tuning;
    if !(t.t_min_k.is_finite() && t.t_max_k.is_finite() && t.t_min_k <= t.t_max_k) {
        return Err(CavityError::InvalidField {
            field: "tuning",
            message: format!("need t_min_k <= t_max_k, got {} / {}", t.t_min_k, t.t_max_k),
        });
    }

    let chi = spec.mode.chi()?;
    let slope_ev_per_k = (t.qd_shift_mev_per_k - t.mode_shift_mev_per_k) * 1e-3;
    let span_k = t.t_max_k - t.t_min_k;

    let mut successes = 0u64;
    for trial in 0..spec.trials {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(trial as u64);
        let e_qd = spec.emitter.sample(&mut rng);
        let shift = if spec.fabrication_shift_sigma_ev > 0.0 {
            Normal::new(0.0, spec.fabrication_shift_sigma_ev)
                .expect("validated")
                .sample(&mut rng)
        } else {
            0.0
        };
        if e_qd <= cavity.e_2d_ev {
            continue; // infeasible device
        }
        let mut best: Option<(f64, f64, f64)> = None;
        for &d in &spec.diameter_grid_um {
            let e = mode_energy_chi(cavity.e_2d_ev, cavity.epsilon_eff, chi, d * 500.0);
            let miss = (e - e_qd).abs();
            let better = match best {
                None => true,
                Some((bm, bd, _)) => miss < bm || (miss == bm && d < bd),
            };
            if better {
                best = Some((miss, d, e));
            }
        }
        let (_, _, e_mode) = best.expect("non-empty grid");
        let halfwidth = e_mode / (2.0 * spec.q_factor);
        // Linear drift makes the detuning linear in T; its minimum
        // magnitude over the range is at an endpoint or a zero crossing.
        let start = (e_qd + shift) - e_mode;
        let end = start + slope_ev_per_k * span_k;
        let closest = if start * end <= 0.0 { 0.0 } else { start.abs().min(end.abs()) };
        if closest < halfwidth {
            successes += 1;
        }
    }
    let trials = spec.trials as u64;
    let (ci_low, ci_high) = wilson_interval(successes, trials);
    Ok(YieldEstimate {
        yield_fraction: successes as f64 / trials as f64,
        successes,
        trials,
        ci_low,
        ci_high,
    })
}
