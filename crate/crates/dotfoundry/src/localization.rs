//! Sub-pixel localization of the emitter relative to the etched alignment
//! marks, from a pair of frames focused on the surface and emitter
//! planes.
//!
//! The pipeline mirrors the measurement it models: band-averaged line
//! cuts through the emitter's coarse position, least-squares peak fits
//! (Gaussian for mark arm cross-sections, Lorentzian for the emitter
//! spot by default), a per-axis nm-per-px calibration from two marks of
//! known separation, and emitter-mark separations with uncertainties
//! combined in quadrature.
//!
//! Positions along a cut are pixel indices; pixel `i` is centered at
//! `(i + 0.5) · pitch` nm. Calibrated nm values are measured from the
//! first calibration mark (the origin), and the emitter's nm uncertainty
//! picks up a `distance × sigma_nm_per_px` term for the calibration
//! itself; the marks that define the calibration carry only their scaled
//! fit uncertainty, since their nm positions are pinned by construction.
//! Cuts are fitted with Poisson weights (`1/max(y, 1)`), appropriate for
//! count data.

use crate::fit::{fit, poisson_weights, FitError, FitReport, ModelKind, ModelSpec};
use crate::imaging::{Frame, FrameGeometry, SceneSpec};

/// Default transverse averaging half-width for line cuts (band of
/// `2·halfwidth + 1` rows or columns).
pub const DEFAULT_AVERAGING_HALFWIDTH_PX: usize = 2;
/// Default histogram bin width for uncertainty summaries.
pub const DEFAULT_BIN_WIDTH_NM: f64 = 2.0;

#[derive(Debug, thiserror::Error)]
pub enum LocalizationError {
    #[error("{what} is outside the frame")]
    OutOfBounds { what: String },
    /// The windowed cut does not bracket its maximum, so a peak fit
    /// would extrapolate.
    #[error("peak sits at the boundary of the cut (index {index}); widen the window")]
    PeakAtBoundary { index: usize },
    /// Marks closer than one pixel cannot define a pixel scale.
    #[error("degenerate calibration: mark separation {delta_px} px is below 1 px")]
    DegenerateCalibration { delta_px: f64 },
    /// The peak fit ran out of iterations; the partial fit rides along.
    #[error("peak fit did not converge within {} iterations", .fit.iterations)]
    FitDidNotConverge { fit: Box<FitReport> },
    #[error("frames disagree: {0}")]
    FrameMismatch(String),
    #[error("invalid {field}: {message}")]
    InvalidField { field: &'static str, message: String },
    #[error(transparent)]
    Fit(#[from] FitError),
}

/// Cut direction: an `X` cut runs along columns at a fixed row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    X,
    Y,
}

/// A band-averaged 1D profile through a frame.
#[derive(Debug, Clone)]
pub struct LineCut {
    pub axis: Axis,
    /// The row (for X cuts) or column (for Y cuts) the cut runs through.
    pub fixed_index: usize,
    /// Pixel positions along the cut, strictly increasing.
    pub positions_px: Vec<f64>,
    pub values: Vec<f64>,
    pub averaging_halfwidth_px: usize,
}

impl LineCut {
    /// Restricts the cut to positions within `[lo_px, hi_px]`.
    pub fn windowed(&self, lo_px: f64, hi_px: f64) -> LineCut {
        let mut positions = Vec::new();
        let mut values = Vec::new();
        for (&p, &v) in self.positions_px.iter().zip(&self.values) {
            if p >= lo_px && p <= hi_px {
                positions.push(p);
                values.push(v);
            }
        }
        LineCut {
            axis: self.axis,
            fixed_index: self.fixed_index,
            positions_px: positions,
            values,
            averaging_halfwidth_px: self.averaging_halfwidth_px,
        }
    }
}

/// Extracts a line cut through `(column, row)` along `axis`, averaging a
/// transverse band of `2·halfwidth + 1` pixels.
pub fn extract_line_cut(
    frame: &Frame,
    axis: Axis,
    through: (usize, usize),
    halfwidth: usize,
) -> Result<LineCut, LocalizationError> {
    let (col, row) = through;
    if col >= frame.width_px || row >= frame.height_px {
        return Err(LocalizationError::OutOfBounds {
            what: format!("cut through ({col}, {row})"),
        });
    }
    let (along, fixed, limit) = match axis {
        Axis::X => (frame.width_px, row, frame.height_px),
        Axis::Y => (frame.height_px, col, frame.width_px),
    };
    if fixed < halfwidth || fixed + halfwidth >= limit {
        return Err(LocalizationError::OutOfBounds {
            what: format!(
                "averaging band of halfwidth {halfwidth} around index {fixed}"
            ),
        });
    }
    let band = (2 * halfwidth + 1) as f64;
    let mut values = Vec::with_capacity(along);
    for i in 0..along {
        let mut acc = 0.0;
        for b in (fixed - halfwidth)..=(fixed + halfwidth) {
            acc += match axis {
                Axis::X => frame.value(i, b),
                Axis::Y => frame.value(b, i),
            };
        }
        values.push(acc / band);
    }
    Ok(LineCut {
        axis,
        fixed_index: fixed,
        positions_px: (0..along).map(|i| i as f64).collect(),
        values,
        averaging_halfwidth_px: halfwidth,
    })
}

/// A fitted 1D peak position. `center_nm` is measured from the
/// calibration origin; without a calibration it simply mirrors the pixel
/// values.
#[derive(Debug, Clone, serde::Serialize)]
pub struct PeakLocation {
    pub center_px: f64,
    pub sigma_center_px: f64,
    pub center_nm: f64,
    pub sigma_center_nm: f64,
    pub model_used: ModelKind,
    pub fit: FitReport,
}

/// Pixel-to-nm scale for one axis, anchored at mark `a`.
#[derive(Debug, Clone, serde::Serialize)]
pub struct Calibration {
    pub nm_per_px: f64,
    pub sigma_nm_per_px: f64,
    /// Pixel position of the origin (mark `a`'s fitted center).
    pub origin_px: f64,
    pub source_marks: (String, String),
    pub known_separation_nm: f64,
}

impl Calibration {
    /// nm position and uncertainty of an independent feature: the scaled
    /// fit sigma plus the calibration term growing with the distance
    /// from the origin, combined in quadrature.
    pub fn convert(&self, center_px: f64, sigma_px: f64) -> (f64, f64) {
        let rel = center_px - self.origin_px;
        let nm = rel * self.nm_per_px;
        let sigma = ((self.nm_per_px * sigma_px).powi(2)
            + (rel * self.sigma_nm_per_px).powi(2))
        .sqrt();
        (nm, sigma)
    }

    /// nm position with only the scaled fit sigma; used for the marks
    /// that define the calibration, whose positions are pinned to the
    /// known separation.
    pub fn convert_scale_only(&self, center_px: f64, sigma_px: f64) -> (f64, f64) {
        ((center_px - self.origin_px) * self.nm_per_px, self.nm_per_px * sigma_px)
    }
}

/// Builds a calibration from two located marks a known distance apart.
pub fn calibrate(
    mark_a: &PeakLocation,
    mark_b: &PeakLocation,
    known_separation_nm: f64,
    names: (&str, &str),
) -> Result<Calibration, LocalizationError> {
    if !(known_separation_nm.is_finite() && known_separation_nm > 0.0) {
        return Err(LocalizationError::InvalidField {
            field: "known_separation_nm",
            message: format!("must be > 0, got {known_separation_nm}"),
        });
    }
    let delta = mark_b.center_px - mark_a.center_px;
    if delta.abs() < 1.0 {
        return Err(LocalizationError::DegenerateCalibration { delta_px: delta });
    }
    let nm_per_px = known_separation_nm / delta.abs();
    let sig = (mark_a.sigma_center_px.powi(2) + mark_b.sigma_center_px.powi(2)).sqrt();
    let sigma_nm_per_px = known_separation_nm * sig / (delta * delta);
    Ok(Calibration {
        nm_per_px,
        sigma_nm_per_px,
        origin_px: mark_a.center_px,
        source_marks: (names.0.to_string(), names.1.to_string()),
        known_separation_nm,
    })
}

/// Fits a peak model to a cut and converts the center to nm when a
/// calibration is given (full quadrature formula; see [`Calibration`]).
/// The cut must bracket its maximum.
pub fn locate_peak(
    cut: &LineCut,
    model: ModelSpec,
    calib: Option<&Calibration>,
) -> Result<PeakLocation, LocalizationError> {
    let n = cut.values.len();
    if n < 3 {
        return Err(LocalizationError::Fit(FitError::TooFewPoints {
            needed: 3,
            params: model.parameter_count(),
            got: n,
        }));
    }
    let mut argmax = 0usize;
    for (i, &v) in cut.values.iter().enumerate() {
        if v > cut.values[argmax] {
            argmax = i;
        }
    }
    if argmax == 0 || argmax == n - 1 {
        return Err(LocalizationError::PeakAtBoundary { index: argmax });
    }
    let init = model.initial_guess(&cut.positions_px, &cut.values)?;
    let weights = poisson_weights(&cut.values);
    let res = fit(&model, &cut.positions_px, &cut.values, Some(&weights), &init)?;
    if !res.converged {
        return Err(LocalizationError::FitDidNotConverge { fit: Box::new(res.report(&model)) });
    }
    let center_px = res.parameters[1];
    let sigma_px = res.uncertainties[1];
    let (center_nm, sigma_nm) = match calib {
        Some(c) => c.convert(center_px, sigma_px),
        None => (center_px, sigma_px),
    };
    Ok(PeakLocation {
        center_px,
        sigma_center_px: sigma_px,
        center_nm,
        sigma_center_nm: sigma_nm,
        model_used: model.kind,
        fit: res.report(&model),
    })
}

/// Search window for one mark along a cut.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarkWindow {
    pub center_px: f64,
    pub halfwidth_px: f64,
}

/// The two calibration marks of one axis and their known separation.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AxisMarks {
    pub window_a: MarkWindow,
    pub window_b: MarkWindow,
    pub known_separation_nm: f64,
}

/// Mark windows for both axes.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarkLayout {
    pub x: AxisMarks,
    pub y: AxisMarks,
}

impl MarkLayout {
    /// Derives windows and known separations from a scene description:
    /// marks displaced mostly horizontally from the emitter calibrate x,
    /// the others calibrate y. Expects exactly two marks per axis.
    pub fn from_scene(
        scene: &SceneSpec,
        geometry: &FrameGeometry,
        window_halfwidth_px: f64,
    ) -> Result<MarkLayout, LocalizationError> {
        let pitch = geometry.pixel_pitch_nm;
        let to_px = |nm: f64| nm / pitch - 0.5;
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for m in &scene.marks {
            let dx = m.center_x_nm - scene.emitter.x_nm;
            let dy = m.center_y_nm - scene.emitter.y_nm;
            if dx.abs() > dy.abs() {
                xs.push(m);
            } else {
                ys.push(m);
            }
        }
        if xs.len() != 2 || ys.len() != 2 {
            return Err(LocalizationError::InvalidField {
                field: "marks",
                message: format!(
                    "need two marks per axis, found {} for x and {} for y",
                    xs.len(),
                    ys.len()
                ),
            });
        }
        xs.sort_by(|a, b| a.center_x_nm.total_cmp(&b.center_x_nm));
        ys.sort_by(|a, b| a.center_y_nm.total_cmp(&b.center_y_nm));
        Ok(MarkLayout {
            x: AxisMarks {
                window_a: MarkWindow {
                    center_px: to_px(xs[0].center_x_nm),
                    halfwidth_px: window_halfwidth_px,
                },
                window_b: MarkWindow {
                    center_px: to_px(xs[1].center_x_nm),
                    halfwidth_px: window_halfwidth_px,
                },
                known_separation_nm: xs[1].center_x_nm - xs[0].center_x_nm,
            },
            y: AxisMarks {
                window_a: MarkWindow {
                    center_px: to_px(ys[0].center_y_nm),
                    halfwidth_px: window_halfwidth_px,
                },
                window_b: MarkWindow {
                    center_px: to_px(ys[1].center_y_nm),
                    halfwidth_px: window_halfwidth_px,
                },
                known_separation_nm: ys[1].center_y_nm - ys[0].center_y_nm,
            },
        })
    }
}

/// Tunables for [`localize`].
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LocalizeOptions {
    pub averaging_halfwidth_px: usize,
    pub emitter_window_halfwidth_px: f64,
    pub emitter_model: ModelKind,
    pub mark_model: ModelKind,
    /// Include the `distance × sigma_nm_per_px` calibration term in the
    /// emitter's nm uncertainty.
    pub include_calibration_sigma: bool,
}

impl Default for LocalizeOptions {
    fn default() -> Self {
        LocalizeOptions {
            averaging_halfwidth_px: DEFAULT_AVERAGING_HALFWIDTH_PX,
            emitter_window_halfwidth_px: 15.0,
            emitter_model: ModelKind::Lorentzian1D,
            mark_model: ModelKind::Gaussian1D,
            include_calibration_sigma: true,
        }
    }
}

/// Emitter-to-mark offset along one axis.
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct Separation {
    pub delta_nm: f64,
    /// Exact quadrature sum of the component sigmas.
    pub sigma_nm: f64,
}

/// Everything measured along one axis.
#[derive(Debug, Clone, serde::Serialize)]
pub struct AxisReport {
    pub emitter: PeakLocation,
    pub mark_a: PeakLocation,
    pub mark_b: PeakLocation,
    pub calibration: Calibration,
    /// Emitter position relative to mark `a`.
    pub separation: Separation,
}

/// Localization result for one surface/emitter frame pair.
#[derive(Debug, Clone, serde::Serialize)]
pub struct LocalizationReport {
    pub x: AxisReport,
    pub y: AxisReport,
}

/// 3×3 box blur used only for the coarse emitter search; edges average
/// the available neighbors.
fn box_blur_3x3(frame: &Frame) -> Vec<f64> {
    let (w, h) = (frame.width_px, frame.height_px);
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            let mut cnt = 0.0;
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    let nx = x as i64 + dx;
                    let ny = y as i64 + dy;
                    if nx >= 0 && ny >= 0 && (nx as usize) < w && (ny as usize) < h {
                        acc += frame.value(nx as usize, ny as usize);
                        cnt += 1.0;
                    }
                }
            }
            out[y * w + x] = acc / cnt;
        }
    }
    out
}

/// Global argmax of a blurred image; ties break toward the lowest index
/// in row-major order.
fn coarse_peak(frame: &Frame) -> (usize, usize) {
    let blurred = box_blur_3x3(frame);
    let mut best = 0usize;
    for (i, &v) in blurred.iter().enumerate() {
        if v > blurred[best] {
            best = i;
        }
    }
    (best % frame.width_px, best / frame.width_px)
}

fn locate_mark(
    cut: &LineCut,
    window: &MarkWindow,
    model: ModelSpec,
) -> Result<PeakLocation, LocalizationError> {
    let w = cut.windowed(
        window.center_px - window.halfwidth_px,
        window.center_px + window.halfwidth_px,
    );
    locate_peak(&w, model, None)
}

/// Full pipeline: coarse emitter search on the emitter-plane frame, mark
/// fits on the surface-plane frame along cuts through the emitter's
/// row/column, per-axis calibration, emitter fits, and separations.
pub fn localize(
    surface: &Frame,
    emitter: &Frame,
    layout: &MarkLayout,
    options: &LocalizeOptions,
) -> Result<LocalizationReport, LocalizationError> {
    if surface.width_px != emitter.width_px
        || surface.height_px != emitter.height_px
        || surface.pixel_pitch_nm != emitter.pixel_pitch_nm
    {
        return Err(LocalizationError::FrameMismatch(format!(
            "surface {}x{} @ {} nm/px vs emitter {}x{} @ {} nm/px",
            surface.width_px,
            surface.height_px,
            surface.pixel_pitch_nm,
            emitter.width_px,
            emitter.height_px,
            emitter.pixel_pitch_nm
        )));
    }
    let (ex, ey) = coarse_peak(emitter);
    let hw = options.averaging_halfwidth_px;

    let mut axes = Vec::with_capacity(2);
    for (axis, marks) in [(Axis::X, &layout.x), (Axis::Y, &layout.y)] {
        let surface_cut = extract_line_cut(surface, axis, (ex, ey), hw)?;
        let emitter_cut = extract_line_cut(emitter, axis, (ex, ey), hw)?;
        let mark_model = ModelSpec { kind: options.mark_model };
        let mut mark_a = locate_mark(&surface_cut, &marks.window_a, mark_model)?;
        let mut mark_b = locate_mark(&surface_cut, &marks.window_b, mark_model)?;
        let calibration = calibrate(
            &mark_a,
            &mark_b,
            marks.known_separation_nm,
            match axis {
                Axis::X => ("mark_x_a", "mark_x_b"),
                Axis::Y => ("mark_y_a", "mark_y_b"),
            },
        )?;
        let coarse_center = match axis {
            Axis::X => ex as f64,
            Axis::Y => ey as f64,
        };
        let emitter_window = emitter_cut.windowed(
            coarse_center - options.emitter_window_halfwidth_px,
            coarse_center + options.emitter_window_halfwidth_px,
        );
        let mut emitter_loc = locate_peak(
            &emitter_window,
            ModelSpec { kind: options.emitter_model },
            Some(&calibration),
        )?;
        if !options.include_calibration_sigma {
            let (nm, sigma) =
                calibration.convert_scale_only(emitter_loc.center_px, emitter_loc.sigma_center_px);
            emitter_loc.center_nm = nm;
            emitter_loc.sigma_center_nm = sigma;
        }
        for m in [&mut mark_a, &mut mark_b] {
            let (nm, sigma) = calibration.convert_scale_only(m.center_px, m.sigma_center_px);
            m.center_nm = nm;
            m.sigma_center_nm = sigma;
        }
        let separation = Separation {
            delta_nm: emitter_loc.center_nm - mark_a.center_nm,
            sigma_nm: (emitter_loc.sigma_center_nm.powi(2) + mark_a.sigma_center_nm.powi(2))
                .sqrt(),
        };
        axes.push(AxisReport {
            emitter: emitter_loc,
            mark_a,
            mark_b,
            calibration,
            separation,
        });
    }
    let y = axes.pop().expect("two axes");
    let x = axes.pop().expect("two axes");
    Ok(LocalizationReport { x, y })
}

/// One histogram bin: `[bin_left_nm, bin_left_nm + bin_width)`.
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct HistogramBin {
    pub bin_left_nm: f64,
    pub count: usize,
}

/// Mean and histogram of one uncertainty category.
#[derive(Debug, Clone, serde::Serialize)]
pub struct CategoryStats {
    pub mean_nm: f64,
    pub count: usize,
    pub histogram: Vec<HistogramBin>,
}

/// Pooled uncertainty statistics over a batch of reports.
#[derive(Debug, Clone, serde::Serialize)]
pub struct UncertaintySummary {
    pub bin_width_nm: f64,
    pub emitter: CategoryStats,
    pub mark: CategoryStats,
    pub separation: CategoryStats,
}

fn category_stats(values: &[f64], bin_width_nm: f64) -> CategoryStats {
    let mean = if values.is_empty() {
        0.0
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    };
    let mut counts = std::collections::BTreeMap::<i64, usize>::new();
    for &v in values {
        let bin = (v / bin_width_nm).floor() as i64;
        *counts.entry(bin).or_insert(0) += 1;
    }
    CategoryStats {
        mean_nm: mean,
        count: values.len(),
        histogram: counts
            .into_iter()
            .map(|(bin, count)| HistogramBin { bin_left_nm: bin as f64 * bin_width_nm, count })
            .collect(),
    }
}

/// Pools the per-axis uncertainties of a batch of reports into the three
/// categories of interest: emitter positions, mark positions, and
/// emitter-mark separations.
pub fn uncertainty_histogram(
    reports: &[LocalizationReport],
    bin_width_nm: f64,
) -> Result<UncertaintySummary, LocalizationError> {
    if !(bin_width_nm.is_finite() && bin_width_nm > 0.0) {
        return Err(LocalizationError::InvalidField {
            field: "bin_width_nm",
            message: format!("must be > 0, got {bin_width_nm}"),
        });
    }
    let mut emitter = Vec::new();
    let mut mark = Vec::new();
    let mut separation = Vec::new();
    for r in reports {
        for axis in [&r.x, &r.y] {
            emitter.push(axis.emitter.sigma_center_nm);
            mark.push(axis.mark_a.sigma_center_nm);
            mark.push(axis.mark_b.sigma_center_nm);
            separation.push(axis.separation.sigma_nm);
        }
    }
    Ok(UncertaintySummary {
        bin_width_nm,
        emitter: category_stats(&emitter, bin_width_nm),
        mark: category_stats(&mark, bin_width_nm),
        separation: category_stats(&separation, bin_width_nm),
    })
}

/// Writes one category histogram as CSV (`bin_left_nm,count`).
pub fn write_histogram_csv(
    stats: &CategoryStats,
    out: &mut impl std::io::Write,
) -> std::io::Result<()> {
    writeln!(out, "bin_left_nm,count")?;
    for bin in &stats.histogram {
        writeln!(out, "{},{}", bin.bin_left_nm, bin.count)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::{
        render_frame, EmitterProfile, EmitterSpec, FocusPlane, FrameGeometry, MarkSpec,
        NoiseSpec, SceneSpec,
    };

    const PITCH: f64 = 120.0;

    /// Scene with pixel-centered marks so that noiseless mark fits are
    /// exactly symmetric; the emitter may sit anywhere.
    fn exact_scene(emitter_x_nm: f64, emitter_y_nm: f64) -> (SceneSpec, FrameGeometry) {
        let geometry = FrameGeometry {
            width_px: 128,
            height_px: 128,
            pixel_pitch_nm: PITCH,
            exposure_s: 0.1,
        };
        let col = |i: usize| (i as f64 + 0.5) * PITCH;
        let mark = |x: f64, y: f64| MarkSpec {
            center_x_nm: x,
            center_y_nm: y,
            arm_length_nm: 4000.0,
            arm_width_nm: 600.0,
            reflectance_counts: 600.0,
            edge_blur_nm: 250.0,
        };
        let scene = SceneSpec {
            emitter: EmitterSpec {
                x_nm: emitter_x_nm,
                y_nm: emitter_y_nm,
                peak_counts: 20000.0,
                psf_fwhm_nm: 1000.0,
                profile: EmitterProfile::Gaussian,
            },
            marks: vec![
                mark(col(22), emitter_y_nm + 1300.0),
                mark(col(105), emitter_y_nm + 1300.0),
                mark(emitter_x_nm + 1300.0, col(22)),
                mark(emitter_x_nm + 1300.0, col(105)),
            ],
            background_counts: 50.0,
            focus: FocusPlane::SurfacePlane,
            surface_defocus_blur_nm: 700.0,
            emitter_defocus_blur_nm: 900.0,
        };
        (scene, geometry)
    }

    fn render_pair(scene: &SceneSpec, geometry: &FrameGeometry, noise: &NoiseSpec) -> (Frame, Frame) {
        let mut surface_scene = scene.clone();
        surface_scene.focus = FocusPlane::SurfacePlane;
        let mut emitter_scene = scene.clone();
        emitter_scene.focus = FocusPlane::EmitterPlane;
        let mut emitter_noise = *noise;
        emitter_noise.seed = noise.seed.wrapping_add(1);
        (
            render_frame(&surface_scene, noise, geometry).unwrap(),
            render_frame(&emitter_scene, &emitter_noise, geometry).unwrap(),
        )
    }

    fn options_gaussian_emitter() -> LocalizeOptions {
        LocalizeOptions { emitter_model: ModelKind::Gaussian1D, ..LocalizeOptions::default() }
    }

    #[test]
    fn noiseless_scene_recovers_separations_within_a_tenth_of_a_nanometer() {
        let (scene, geometry) = exact_scene(7627.0, 7733.0);
        let (surface, emitter) = render_pair(&scene, &geometry, &NoiseSpec::disabled());
        let layout = MarkLayout::from_scene(&scene, &geometry, 10.0).unwrap();
        let report =
            localize(&surface, &emitter, &layout, &options_gaussian_emitter()).unwrap();

        let truth_x = scene.emitter.x_nm - scene.marks[0].center_x_nm;
        let truth_y = scene.emitter.y_nm - scene.marks[2].center_y_nm;
        assert!(
            (report.x.separation.delta_nm - truth_x).abs() < 0.1,
            "x separation {} vs truth {truth_x}",
            report.x.separation.delta_nm
        );
        assert!(
            (report.y.separation.delta_nm - truth_y).abs() < 0.1,
            "y separation {} vs truth {truth_y}",
            report.y.separation.delta_nm
        );
    }

    #[test]
    fn nm_values_are_pixel_values_times_the_calibration_scale() {
        let (scene, geometry) = exact_scene(7627.0, 7733.0);
        let (surface, emitter) = render_pair(&scene, &geometry, &NoiseSpec::disabled());
        let layout = MarkLayout::from_scene(&scene, &geometry, 10.0).unwrap();
        let report =
            localize(&surface, &emitter, &layout, &options_gaussian_emitter()).unwrap();
        for axis in [&report.x, &report.y] {
            let c = &axis.calibration;
            for loc in [&axis.mark_a, &axis.mark_b] {
                let want = (loc.center_px - c.origin_px) * c.nm_per_px;
                assert!((loc.center_nm - want).abs() < 1e-9);
            }
            let want = (axis.emitter.center_px - c.origin_px) * c.nm_per_px;
            assert!((axis.emitter.center_nm - want).abs() < 1e-9);
        }
    }

    #[test]
    fn separation_sigma_is_the_exact_quadrature_of_its_components() {
        let (scene, geometry) = exact_scene(7627.0, 7733.0);
        let noise = NoiseSpec { photon_shot: true, emccd_gain: 2.0, read_noise_rms: 3.0, seed: 11 };
        let (surface, emitter) = render_pair(&scene, &geometry, &noise);
        let layout = MarkLayout::from_scene(&scene, &geometry, 10.0).unwrap();
        let report = localize(&surface, &emitter, &layout, &LocalizeOptions::default()).unwrap();
        for axis in [&report.x, &report.y] {
            let want = (axis.emitter.sigma_center_nm.powi(2)
                + axis.mark_a.sigma_center_nm.powi(2))
            .sqrt();
            assert_eq!(axis.separation.sigma_nm, want);
        }
    }

    #[test]
    fn integer_pixel_shift_moves_centers_and_keeps_separations() {
        let (scene, geometry) = exact_scene(7627.0, 7733.0);
        let (surface_a, emitter_a) = render_pair(&scene, &geometry, &NoiseSpec::disabled());
        let layout_a = MarkLayout::from_scene(&scene, &geometry, 10.0).unwrap();
        let report_a =
            localize(&surface_a, &emitter_a, &layout_a, &options_gaussian_emitter()).unwrap();

        let shift_px = 3.0;
        let mut shifted = scene.clone();
        shifted.emitter.x_nm += shift_px * PITCH;
        for m in &mut shifted.marks {
            m.center_x_nm += shift_px * PITCH;
        }
        let (surface_b, emitter_b) = render_pair(&shifted, &geometry, &NoiseSpec::disabled());
        let layout_b = MarkLayout::from_scene(&shifted, &geometry, 10.0).unwrap();
        let report_b =
            localize(&surface_b, &emitter_b, &layout_b, &options_gaussian_emitter()).unwrap();

        assert!(
            (report_b.x.emitter.center_px - report_a.x.emitter.center_px - shift_px).abs() < 0.01,
            "center shift {} vs {shift_px}",
            report_b.x.emitter.center_px - report_a.x.emitter.center_px
        );
        assert!(
            (report_b.x.separation.delta_nm - report_a.x.separation.delta_nm).abs() < 0.1,
            "separation changed under translation"
        );
    }

    #[test]
    fn calibration_recovers_positions_across_pixel_pitches() {
        for pitch in [80.0, 120.0, 200.0] {
            let geometry = FrameGeometry {
                width_px: 128,
                height_px: 128,
                pixel_pitch_nm: pitch,
                exposure_s: 0.1,
            };
            let col = |i: usize| (i as f64 + 0.5) * pitch;
            let (ex, ey) = (col(63) + 0.31 * pitch, col(64) - 0.27 * pitch);
            let mark = |x: f64, y: f64| MarkSpec {
                center_x_nm: x,
                center_y_nm: y,
                arm_length_nm: 30.0 * pitch,
                arm_width_nm: 5.0 * pitch,
                reflectance_counts: 600.0,
                edge_blur_nm: 2.0 * pitch,
            };
            let scene = SceneSpec {
                emitter: EmitterSpec {
                    x_nm: ex,
                    y_nm: ey,
                    peak_counts: 20000.0,
                    psf_fwhm_nm: 8.0 * pitch,
                    profile: EmitterProfile::Gaussian,
                },
                marks: vec![
                    mark(col(22), ey + 11.0 * pitch),
                    mark(col(105), ey + 11.0 * pitch),
                    mark(ex + 11.0 * pitch, col(22)),
                    mark(ex + 11.0 * pitch, col(105)),
                ],
                background_counts: 50.0,
                focus: FocusPlane::SurfacePlane,
                surface_defocus_blur_nm: 0.0,
                emitter_defocus_blur_nm: 0.0,
            };
            let (surface, emitter) = render_pair(&scene, &geometry, &NoiseSpec::disabled());
            let layout = MarkLayout::from_scene(&scene, &geometry, 10.0).unwrap();
            let report =
                localize(&surface, &emitter, &layout, &options_gaussian_emitter()).unwrap();
            assert!(
                (report.x.calibration.nm_per_px - pitch).abs() < 1e-6,
                "pitch {pitch}: calibration {}",
                report.x.calibration.nm_per_px
            );
            let truth = ex - scene.marks[0].center_x_nm;
            assert!(
                (report.x.separation.delta_nm - truth).abs() < 0.1,
                "pitch {pitch}: separation {} vs {truth}",
                report.x.separation.delta_nm
            );
        }
    }

    #[test]
    fn argmax_ties_break_to_the_lowest_index() {
        let geometry =
            FrameGeometry { width_px: 8, height_px: 8, pixel_pitch_nm: 100.0, exposure_s: 0.1 };
        let mut frame = Frame::filled(&geometry, 1.0);
        // Two identical 3x3 blocks; their centers tie after blurring.
        for dy in 0..3 {
            for dx in 0..3 {
                frame.set(1 + dx, 2 + dy, 9.0);
                frame.set(4 + dx, 5 + dy, 9.0);
            }
        }
        let (x, y) = coarse_peak(&frame);
        assert_eq!((x, y), (2, 3));
    }

    #[test]
    fn marks_closer_than_one_pixel_are_a_degenerate_calibration() {
        let loc = |px: f64| PeakLocation {
            center_px: px,
            sigma_center_px: 0.05,
            center_nm: px,
            sigma_center_nm: 0.05,
            model_used: ModelKind::Gaussian1D,
            fit: crate::fit::FitResult {
                parameters: vec![],
                uncertainties: vec![],
                covariance: vec![],
                residual_sum_squares: 0.0,
                converged: true,
                iterations: 1,
            }
            .report(&ModelSpec::gaussian()),
        };
        let err = calibrate(&loc(40.0), &loc(40.7), 1000.0, ("a", "b")).unwrap_err();
        assert!(matches!(err, LocalizationError::DegenerateCalibration { .. }));
    }

    #[test]
    fn cut_that_clips_the_peak_is_rejected() {
        let cut = LineCut {
            axis: Axis::X,
            fixed_index: 0,
            positions_px: vec![0.0, 1.0, 2.0, 3.0, 4.0],
            values: vec![1.0, 2.0, 3.0, 4.0, 5.0],
            averaging_halfwidth_px: 0,
        };
        let err = locate_peak(&cut, ModelSpec::gaussian(), None).unwrap_err();
        assert!(matches!(err, LocalizationError::PeakAtBoundary { index: 4 }));
    }

    #[test]
    fn band_outside_the_frame_is_rejected() {
        let geometry =
            FrameGeometry { width_px: 16, height_px: 16, pixel_pitch_nm: 100.0, exposure_s: 0.1 };
        let frame = Frame::filled(&geometry, 1.0);
        let err = extract_line_cut(&frame, Axis::X, (4, 1), 2).unwrap_err();
        assert!(matches!(err, LocalizationError::OutOfBounds { .. }));
        let err = extract_line_cut(&frame, Axis::X, (20, 4), 2).unwrap_err();
        assert!(matches!(err, LocalizationError::OutOfBounds { .. }));
    }

    #[test]
    fn line_cut_band_averages_the_requested_rows() {
        let geometry =
            FrameGeometry { width_px: 4, height_px: 5, pixel_pitch_nm: 100.0, exposure_s: 0.1 };
        let mut frame = Frame::filled(&geometry, 0.0);
        for y in 0..5 {
            for x in 0..4 {
                frame.set(x, y, (y * 10 + x) as f64);
            }
        }
        let cut = extract_line_cut(&frame, Axis::X, (0, 2), 1).unwrap();
        // Rows 1..=3 averaged: column x gives 20 + x.
        assert_eq!(cut.values, vec![20.0, 21.0, 22.0, 23.0]);
        assert_eq!(cut.positions_px, vec![0.0, 1.0, 2.0, 3.0]);
    }

    #[test]
    fn uncertainty_histogram_bins_and_means_are_consistent() {
        let (scene, geometry) = exact_scene(7627.0, 7733.0);
        let mut reports = Vec::new();
        for seed in 0..4 {
            let noise =
                NoiseSpec { photon_shot: true, emccd_gain: 2.0, read_noise_rms: 3.0, seed };
            let (surface, emitter) = render_pair(&scene, &geometry, &noise);
            let layout = MarkLayout::from_scene(&scene, &geometry, 10.0).unwrap();
            reports
                .push(localize(&surface, &emitter, &layout, &LocalizeOptions::default()).unwrap());
        }
        let summary = uncertainty_histogram(&reports, DEFAULT_BIN_WIDTH_NM).unwrap();
        assert_eq!(summary.emitter.count, 8);
        assert_eq!(summary.mark.count, 16);
        assert_eq!(summary.separation.count, 8);
        let total: usize = summary.mark.histogram.iter().map(|b| b.count).sum();
        assert_eq!(total, 16);
        for bin in &summary.mark.histogram {
            assert_eq!(bin.bin_left_nm.rem_euclid(DEFAULT_BIN_WIDTH_NM), 0.0);
        }

        let mut csv = Vec::new();
        write_histogram_csv(&summary.emitter, &mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert!(text.starts_with("bin_left_nm,count\n"));

        let err = uncertainty_histogram(&reports, 0.0).unwrap_err();
        assert!(matches!(err, LocalizationError::InvalidField { .. }));
    }
}
