//! CSV and JSON readers/writers for characterization inputs. All CSV
//! files carry a one-line header naming the columns and their units;
//! numbers round-trip bit-exactly through the shortest decimal form.

use std::io::Write as _;
use std::path::Path;

use super::{
    BudgetElement, CoincidenceHistogram, DecayTrace, PhotonError, Spectrum, SpectrumAxis,
};

fn io_err(path: &Path, source: std::io::Error) -> PhotonError {
    PhotonError::Io { path: path.to_path_buf(), source }
}

fn parse_err(path: &Path, line: usize, message: String) -> PhotonError {
    PhotonError::Parse { path: path.to_path_buf(), line, message }
}

/// Reads a two-column CSV whose header must be one of
/// `accepted_headers`. Returns the matched header and both columns.
fn read_two_column(
    path: &Path,
    accepted_headers: &[&str],
) -> Result<(String, Vec<f64>, Vec<f64>), PhotonError> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| parse_err(path, 1, "empty file".to_string()))?;
    let header = header.trim();
    if !accepted_headers.contains(&header) {
        return Err(parse_err(
            path,
            1,
            format!("expected header {:?}, got {header:?}", accepted_headers.join(" or ")),
        ));
    }
    let mut a = Vec::new();
    let mut b = Vec::new();
    for (idx, line) in lines {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split(',');
        let (x, y) = match (fields.next(), fields.next(), fields.next()) {
            (Some(x), Some(y), None) => (x.trim(), y.trim()),
            _ => {
                return Err(parse_err(path, idx + 1, "expected exactly 2 fields".to_string()));
            }
        };
        let parse = |s: &str| {
            s.parse::<f64>()
                .map_err(|e| parse_err(path, idx + 1, format!("bad number {s:?}: {e}")))
        };
        a.push(parse(x)?);
        b.push(parse(y)?);
    }
    Ok((header.to_string(), a, b))
}

fn write_two_column(
    path: &Path,
    header: &str,
    a: &[f64],
    b: &[f64],
) -> Result<(), PhotonError> {
    let mut out = String::with_capacity(a.len() * 24 + header.len() + 1);
    out.push_str(header);
    out.push('\n');
    for (x, y) in a.iter().zip(b) {
        out.push_str(&format!("{x},{y}\n"));
    }
    std::fs::write(path, out).map_err(|e| io_err(path, e))
}

pub const DECAY_HEADER: &str = "time_ps,counts";

pub fn write_decay_csv(trace: &DecayTrace, path: &Path) -> Result<(), PhotonError> {
    write_two_column(path, DECAY_HEADER, &trace.time_ps, &trace.counts)
}

/// Reads a decay trace; the description is set to the file stem (the
/// CSV has no slot for it).
pub fn read_decay_csv(path: &Path) -> Result<DecayTrace, PhotonError> {
    let (_, time_ps, counts) = read_two_column(path, &[DECAY_HEADER])?;
    let description =
        path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let trace = DecayTrace { time_ps, counts, description };
    trace.validate()?;
    Ok(trace)
}

pub const HISTOGRAM_HEADER: &str = "delay_ns,counts";

/// Timing metadata that cannot live in the two CSV columns; stored in
/// a JSON sidecar next to the histogram.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HistogramMeta {
    pub rep_period_ns: f64,
    pub bin_width_ns: f64,
}

/// Writes `delay_ns,counts` rows plus a `.json` sidecar holding the
/// rep period and bin width.
pub fn write_histogram_csv(
    hist: &CoincidenceHistogram,
    path: &Path,
) -> Result<(), PhotonError> {
    write_two_column(path, HISTOGRAM_HEADER, &hist.delay_ns, &hist.counts)?;
    let meta = HistogramMeta {
        rep_period_ns: hist.rep_period_ns,
        bin_width_ns: hist.bin_width_ns,
    };
    let sidecar = path.with_extension("json");
    let mut file = std::fs::File::create(&sidecar).map_err(|e| io_err(&sidecar, e))?;
    let body = serde_json::to_string_pretty(&meta).expect("meta serializes");
    file.write_all(body.as_bytes()).map_err(|e| io_err(&sidecar, e))?;
    file.write_all(b"\n").map_err(|e| io_err(&sidecar, e))
}

/// Reads a histogram CSV together with its mandatory sidecar.
pub fn read_histogram_csv(path: &Path) -> Result<CoincidenceHistogram, PhotonError> {
    let (_, delay_ns, counts) = read_two_column(path, &[HISTOGRAM_HEADER])?;
    let sidecar = path.with_extension("json");
    let text = std::fs::read_to_string(&sidecar).map_err(|e| io_err(&sidecar, e))?;
    let meta: HistogramMeta = serde_json::from_str(&text)
        .map_err(|e| parse_err(&sidecar, e.line(), e.to_string()))?;
    let hist = CoincidenceHistogram {
        delay_ns,
        counts,
        rep_period_ns: meta.rep_period_ns,
        bin_width_ns: meta.bin_width_ns,
    };
    hist.validate()?;
    Ok(hist)
}

pub const SPECTRUM_WAVELENGTH_HEADER: &str = "wavelength_nm,counts";
pub const SPECTRUM_ENERGY_HEADER: &str = "energy_ev,counts";

pub fn write_spectrum_csv(spectrum: &Spectrum, path: &Path) -> Result<(), PhotonError> {
    let header = match spectrum.axis {
        SpectrumAxis::WavelengthNm => SPECTRUM_WAVELENGTH_HEADER,
        SpectrumAxis::EnergyEv => SPECTRUM_ENERGY_HEADER,
    };
    write_two_column(path, header, &spectrum.positions, &spectrum.counts)
}

/// Reads a spectrum; the header decides whether positions are
/// wavelengths or energies.
pub fn read_spectrum_csv(path: &Path) -> Result<Spectrum, PhotonError> {
    let (header, positions, counts) =
        read_two_column(path, &[SPECTRUM_WAVELENGTH_HEADER, SPECTRUM_ENERGY_HEADER])?;
    let axis = if header == SPECTRUM_WAVELENGTH_HEADER {
        SpectrumAxis::WavelengthNm
    } else {
        SpectrumAxis::EnergyEv
    };
    Ok(Spectrum { axis, positions, counts })
}

pub const SATURATION_HEADER: &str = "power_mw,counts_per_s";

pub fn write_saturation_csv(
    powers_mw: &[f64],
    counts_per_s: &[f64],
    path: &Path,
) -> Result<(), PhotonError> {
    write_two_column(path, SATURATION_HEADER, powers_mw, counts_per_s)
}

pub fn read_saturation_csv(path: &Path) -> Result<(Vec<f64>, Vec<f64>), PhotonError> {
    let (_, powers_mw, counts_per_s) = read_two_column(path, &[SATURATION_HEADER])?;
    Ok((powers_mw, counts_per_s))
}

#[derive(serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
struct BudgetFile {
    elements: Vec<BudgetElement>,
}

/// Reads the `{"elements": [...]}` budget description. Run the result
/// through [`super::efficiency_budget`] to get the combined product.
pub fn read_budget_json(path: &Path) -> Result<Vec<BudgetElement>, PhotonError> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let file: BudgetFile = serde_json::from_str(&text)
        .map_err(|e| parse_err(path, e.line(), e.to_string()))?;
    Ok(file.elements)
}

pub fn write_budget_json(elements: &[BudgetElement], path: &Path) -> Result<(), PhotonError> {
    let body = serde_json::to_string_pretty(&BudgetFile { elements: elements.to_vec() })
        .expect("budget serializes");
    std::fs::write(path, body + "\n").map_err(|e| io_err(path, e))
}
