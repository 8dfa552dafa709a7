//! Synthetic two-color localization frames: a quantum-dot emitter between
//! etched cross-shaped alignment marks, imaged at either the sample
//! surface or the emitter plane.
//!
//! [`expected_image`] renders the continuous expectation in photon counts
//! (midpoint rule per pixel: profile sampled at the pixel center).
//! [`render_frame`] adds the detector chain on top: Poisson photon shot
//! noise, EMCCD multiplication modeled as a Gamma cascade (variance
//! `2·gain²·photons` for large gain), Gaussian read noise, then ADC
//! clamping to the 16-bit range and rounding. Noise is drawn pixel by
//! pixel in row-major order from a ChaCha8 stream keyed by the seed, so a
//! fixed seed reproduces a frame bit for bit on any platform.
//!
//! Frames travel as 16-bit big-endian PGM (P5) plus a JSON sidecar with
//! the pixel pitch and exposure; see [`read_frame`] / [`write_frame`].

mod pgm;

pub use pgm::{read_frame, write_frame};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Normal, Poisson};

/// `sigma = FWHM_TO_SIGMA · FWHM` for a Gaussian.
pub const FWHM_TO_SIGMA: f64 = 0.424660900144009521;
/// Largest storable ADU value (16-bit ADC).
pub const ADC_MAX: f64 = 65535.0;

#[derive(Debug, thiserror::Error)]
pub enum ImagingError {
    #[error("invalid {field}: {message}")]
    InvalidField { field: &'static str, message: String },
    /// Scene geometry reaches outside the frame.
    #[error("{what} extends outside the frame")]
    OutOfFrame { what: String },
    #[error("{path}: {message} (byte offset {offset})")]
    Parse { path: String, offset: usize, message: String },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Sensor geometry shared by every frame of a scene.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameGeometry {
    pub width_px: usize,
    pub height_px: usize,
    pub pixel_pitch_nm: f64,
    pub exposure_s: f64,
}

impl FrameGeometry {
    pub fn validate(&self) -> Result<(), ImagingError> {
        if self.width_px == 0 || self.height_px == 0 {
            return Err(ImagingError::InvalidField {
                field: "width_px/height_px",
                message: "frame dimensions must be at least 1 pixel".into(),
            });
        }
        if !(self.pixel_pitch_nm.is_finite() && self.pixel_pitch_nm > 0.0) {
            return Err(ImagingError::InvalidField {
                field: "pixel_pitch_nm",
                message: format!("must be a positive number, got {}", self.pixel_pitch_nm),
            });
        }
        if !(self.exposure_s.is_finite() && self.exposure_s > 0.0) {
            return Err(ImagingError::InvalidField {
                field: "exposure_s",
                message: format!("must be a positive number, got {}", self.exposure_s),
            });
        }
        Ok(())
    }

    pub fn width_nm(&self) -> f64 {
        self.width_px as f64 * self.pixel_pitch_nm
    }

    pub fn height_nm(&self) -> f64 {
        self.height_px as f64 * self.pixel_pitch_nm
    }
}

/// A single camera frame; pixel values are ADU counts stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub pixels: Vec<f64>,
    pub width_px: usize,
    pub height_px: usize,
    pub pixel_pitch_nm: f64,
    pub exposure_s: f64,
}

impl Frame {
    pub fn filled(geometry: &FrameGeometry, value: f64) -> Frame {
        Frame {
            pixels: vec![value; geometry.width_px * geometry.height_px],
            width_px: geometry.width_px,
            height_px: geometry.height_px,
            pixel_pitch_nm: geometry.pixel_pitch_nm,
            exposure_s: geometry.exposure_s,
        }
    }

    #[inline]
    pub fn value(&self, ix: usize, iy: usize) -> f64 {
        self.pixels[iy * self.width_px + ix]
    }

    #[inline]
    pub fn set(&mut self, ix: usize, iy: usize, v: f64) {
        self.pixels[iy * self.width_px + ix] = v;
    }

    /// nm coordinate of the center of pixel column/row `i`.
    #[inline]
    pub fn pixel_center_nm(&self, i: usize) -> f64 {
        (i as f64 + 0.5) * self.pixel_pitch_nm
    }

    pub fn sum(&self) -> f64 {
        self.pixels.iter().sum()
    }

    pub fn geometry(&self) -> FrameGeometry {
        FrameGeometry {
            width_px: self.width_px,
            height_px: self.height_px,
            pixel_pitch_nm: self.pixel_pitch_nm,
            exposure_s: self.exposure_s,
        }
    }
}

/// Radial profile of the emitter point spread.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmitterProfile {
    Gaussian,
    Lorentzian,
}

fn default_profile() -> EmitterProfile {
    EmitterProfile::Lorentzian
}

/// The emitter: position, brightness at the peak pixel (photon counts),
/// point-spread FWHM and profile shape.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmitterSpec {
    pub x_nm: f64,
    pub y_nm: f64,
    pub peak_counts: f64,
    pub psf_fwhm_nm: f64,
    #[serde(default = "default_profile")]
    pub profile: EmitterProfile,
}

/// One cross-shaped etched alignment mark: two centered rectangular arms
/// of equal length and width, rendered at `reflectance_counts` photons
/// with Gaussian-blurred edges.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarkSpec {
    pub center_x_nm: f64,
    pub center_y_nm: f64,
    pub arm_length_nm: f64,
    pub arm_width_nm: f64,
    pub reflectance_counts: f64,
    /// One-sigma Gaussian edge blur.
    pub edge_blur_nm: f64,
}

/// Which plane the objective is focused on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FocusPlane {
    SurfacePlane,
    EmitterPlane,
}

/// Full scene description. Features on the plane that is not in focus are
/// rendered with that plane's defocus blur (one-sigma, in nm), which
/// fades the marks in emitter-plane frames and the emitter in
/// surface-plane frames.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    pub emitter: EmitterSpec,
    pub marks: Vec<MarkSpec>,
    /// Uniform background level in photon counts.
    pub background_counts: f64,
    pub focus: FocusPlane,
    /// Blur applied to the marks when focused on the emitter plane.
    pub surface_defocus_blur_nm: f64,
    /// Blur applied to the emitter when focused on the surface plane.
    pub emitter_defocus_blur_nm: f64,
}

/// Detector chain. `emccd_gain = 1` means a plain CCD (no multiplication
/// noise); for larger gains each photon's output is Exponential(gain), so
/// the pixel variance approaches `2·gain²·photons`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    pub photon_shot: bool,
    pub emccd_gain: f64,
    pub read_noise_rms: f64,
    #[serde(default)]
    pub seed: u64,
}

impl NoiseSpec {
    /// Noise fully disabled: render equals the quantized expectation.
    pub fn disabled() -> NoiseSpec {
        NoiseSpec { photon_shot: false, emccd_gain: 1.0, read_noise_rms: 0.0, seed: 0 }
    }

    pub fn validate(&self) -> Result<(), ImagingError> {
        if !(self.emccd_gain.is_finite() && self.emccd_gain >= 1.0) {
            return Err(ImagingError::InvalidField {
                field: "emccd_gain",
                message: format!("must be >= 1, got {}", self.emccd_gain),
            });
        }
        if !(self.read_noise_rms.is_finite() && self.read_noise_rms >= 0.0) {
            return Err(ImagingError::InvalidField {
                field: "read_noise_rms",
                message: format!("must be >= 0, got {}", self.read_noise_rms),
            });
        }
        Ok(())
    }
}

impl SceneSpec {
    pub fn validate(&self, geometry: &FrameGeometry) -> Result<(), ImagingError> {
        geometry.validate()?;
        if !(self.background_counts.is_finite() && self.background_counts >= 0.0) {
            return Err(ImagingError::InvalidField {
                field: "background_counts",
                message: format!("must be >= 0, got {}", self.background_counts),
            });
        }
        if !(self.emitter.peak_counts.is_finite() && self.emitter.peak_counts >= 0.0) {
            return Err(ImagingError::InvalidField {
                field: "emitter.peak_counts",
                message: format!("must be >= 0, got {}", self.emitter.peak_counts),
            });
        }
        if !(self.emitter.psf_fwhm_nm.is_finite() && self.emitter.psf_fwhm_nm > 0.0) {
            return Err(ImagingError::InvalidField {
                field: "emitter.psf_fwhm_nm",
                message: format!("must be > 0, got {}", self.emitter.psf_fwhm_nm),
            });
        }
        for (field, v) in [
            ("surface_defocus_blur_nm", self.surface_defocus_blur_nm),
            ("emitter_defocus_blur_nm", self.emitter_defocus_blur_nm),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(ImagingError::InvalidField {
                    field,
                    message: format!("must be >= 0, got {v}"),
                });
            }
        }
        let (w_nm, h_nm) = (geometry.width_nm(), geometry.height_nm());
        let e = &self.emitter;
        if !(0.0..w_nm).contains(&e.x_nm) || !(0.0..h_nm).contains(&e.y_nm) {
            return Err(ImagingError::OutOfFrame {
                what: format!("emitter at ({}, {}) nm", e.x_nm, e.y_nm),
            });
        }
        for (i, m) in self.marks.iter().enumerate() {
            if !(m.arm_length_nm > 0.0 && m.arm_width_nm > 0.0 && m.arm_width_nm <= m.arm_length_nm)
            {
                return Err(ImagingError::InvalidField {
                    field: "marks",
                    message: format!(
                        "mark {i}: arm width must satisfy 0 < width <= length, got {} x {}",
                        m.arm_width_nm, m.arm_length_nm
                    ),
                });
            }
            if !(m.reflectance_counts.is_finite() && m.reflectance_counts >= 0.0)
                || !(m.edge_blur_nm.is_finite() && m.edge_blur_nm >= 0.0)
            {
                return Err(ImagingError::InvalidField {
                    field: "marks",
                    message: format!("mark {i}: reflectance and edge blur must be >= 0"),
                });
            }
            let half = m.arm_length_nm / 2.0;
            if m.center_x_nm - half < 0.0
                || m.center_x_nm + half > w_nm
                || m.center_y_nm - half < 0.0
                || m.center_y_nm + half > h_nm
            {
                return Err(ImagingError::OutOfFrame {
                    what: format!("mark {i} at ({}, {}) nm", m.center_x_nm, m.center_y_nm),
                });
            }
        }
        Ok(())
    }
}

/// Continuous expected photon image (no noise, no quantization).
pub fn expected_image(
    scene: &SceneSpec,
    geometry: &FrameGeometry,
) -> Result<Frame, ImagingError> {
    scene.validate(geometry)?;
    let mut frame = Frame::filled(geometry, scene.background_counts);
    let pitch = geometry.pixel_pitch_nm;

    // Emitter: defocused (and flux-preservingly faded) in surface focus.
    let e = &scene.emitter;
    let defocus = match scene.focus {
        FocusPlane::EmitterPlane => 0.0,
        FocusPlane::SurfacePlane => scene.emitter_defocus_blur_nm,
    };
    let (width_nm, amp) = match e.profile {
        EmitterProfile::Gaussian => {
            let sigma = e.psf_fwhm_nm * FWHM_TO_SIGMA;
            let eff = (sigma * sigma + defocus * defocus).sqrt();
            (eff, e.peak_counts * (sigma / eff).powi(2))
        }
        EmitterProfile::Lorentzian => {
            let hwhm = e.psf_fwhm_nm / 2.0;
            let eff = (hwhm * hwhm + defocus * defocus).sqrt();
            (eff, e.peak_counts * (hwhm / eff).powi(2))
        }
    };
    if amp > 0.0 {
        for iy in 0..geometry.height_px {
            let dy = (iy as f64 + 0.5) * pitch - e.y_nm;
            for ix in 0..geometry.width_px {
                let dx = (ix as f64 + 0.5) * pitch - e.x_nm;
                let r2 = dx * dx + dy * dy;
                let v = match e.profile {
                    EmitterProfile::Gaussian => {
                        amp * (-r2 / (2.0 * width_nm * width_nm)).exp()
                    }
                    EmitterProfile::Lorentzian => {
                        amp * width_nm * width_nm / (r2 + width_nm * width_nm)
                    }
                };
                frame.pixels[iy * geometry.width_px + ix] += v;
            }
        }
    }

    // Marks live on the surface plane.
    let mark_defocus = match scene.focus {
        FocusPlane::SurfacePlane => 0.0,
        FocusPlane::EmitterPlane => scene.surface_defocus_blur_nm,
    };
    for m in &scene.marks {
        let blur = (m.edge_blur_nm * m.edge_blur_nm + mark_defocus * mark_defocus).sqrt();
        let hl = m.arm_length_nm / 2.0;
        let hw = m.arm_width_nm / 2.0;
        for iy in 0..geometry.height_px {
            let y = (iy as f64 + 0.5) * pitch - m.center_y_nm;
            let fy_long = edge_pair(y, hl, blur);
            let fy_wide = edge_pair(y, hw, blur);
            if fy_long < 1e-14 {
                continue;
            }
            for ix in 0..geometry.width_px {
                let x = (ix as f64 + 0.5) * pitch - m.center_x_nm;
                let fx_long = edge_pair(x, hl, blur);
                let fx_wide = edge_pair(x, hw, blur);
                // Cross = horizontal arm + vertical arm − overlap square,
                // each a blurred rectangle, so the union stays exact
                // under the linear blur.
                let v = fx_long * fy_wide + fx_wide * fy_long - fx_wide * fy_wide;
                if v > 1e-14 {
                    frame.pixels[iy * geometry.width_px + ix] += m.reflectance_counts * v;
                }
            }
        }
    }
    Ok(frame)
}

/// 1D profile of a blurred slab of half-width `h` centered at 0:
/// the indicator of `[-h, h]` convolved with a Gaussian of sigma `blur`.
fn edge_pair(u: f64, h: f64, blur: f64) -> f64 {
    if blur <= 0.0 {
        return if u.abs() <= h { 1.0 } else { 0.0 };
    }
    let s = blur * std::f64::consts::SQRT_2;
    0.5 * (erf((u + h) / s) - erf((u - h) / s))
}

/// Error function via the cancellation-free confluent series
/// `erf(x) = 2x·e^{−x²}/√π · Σ (2x²)^k / (1·3···(2k+1))`,
/// accurate to full double precision over the range used here.
pub(crate) fn erf(x: f64) -> f64 {
    let ax = x.abs();
    if ax >= 10.0 {
        return 1.0_f64.copysign(x);
    }
    let u = 2.0 * x * x;
    let mut term = 1.0;
    let mut sum = 1.0;
    let mut k = 0u32;
    while term > 1e-17 * sum && k < 400 {
        term *= u / (2.0 * k as f64 + 3.0);
        sum += term;
        k += 1;
    }
    let v = 2.0 * ax * (-x * x).exp() / std::f64::consts::PI.sqrt() * sum;
    v.min(1.0).copysign(x)
}

/// Renders a frame through the detector chain. Deterministic for a fixed
/// seed: noise is drawn per pixel in row-major order from a ChaCha8
/// stream.
pub fn render_frame(
    scene: &SceneSpec,
    noise: &NoiseSpec,
    geometry: &FrameGeometry,
) -> Result<Frame, ImagingError> {
    noise.validate()?;
    let mut frame = expected_image(scene, geometry)?;
    let mut rng = ChaCha8Rng::seed_from_u64(noise.seed);
    let read = if noise.read_noise_rms > 0.0 {
        Some(Normal::new(0.0, noise.read_noise_rms).expect("validated rms"))
    } else {
        None
    };
    for v in frame.pixels.iter_mut() {
        let mean = *v;
        // Means below 1e-9 are statistically empty, and the Poisson
        // sampler misbehaves once exp(-mean) rounds to 1.
        let photons = if noise.photon_shot && mean > 1e-9 {
            Poisson::new(mean).expect("validated mean").sample(&mut rng)
        } else {
            mean
        };
        let mut adu = if noise.emccd_gain > 1.0 {
            if noise.photon_shot {
                if photons > 0.0 {
                    Gamma::new(photons, noise.emccd_gain)
                        .expect("positive shape")
                        .sample(&mut rng)
                } else {
                    0.0
                }
            } else {
                photons * noise.emccd_gain
            }
        } else {
            photons
        };
        if let Some(n) = &read {
            adu += n.sample(&mut rng);
        }
        *v = adu.clamp(0.0, ADC_MAX).round();
    }
    Ok(frame)
}
