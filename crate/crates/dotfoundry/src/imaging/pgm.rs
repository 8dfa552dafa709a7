//! Frame I/O: binary 16-bit PGM (P5, big-endian sample order) plus a JSON
//! sidecar carrying the physical metadata a bare PGM cannot hold.
//!
//! The sidecar lives next to the image with the extension replaced by
//! `.json`, e.g. `frame.pgm` ↔ `frame.json`.

use std::io::{Read, Write};
use std::path::Path;

use super::{Frame, ImagingError, ADC_MAX};

#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
struct SidecarMeta {
    pixel_pitch_nm: f64,
    exposure_s: f64,
}

fn sidecar_path(path: &Path) -> std::path::PathBuf {
    path.with_extension("json")
}

fn io_err(path: &Path, source: std::io::Error) -> ImagingError {
    ImagingError::Io { path: path.display().to_string(), source }
}

fn parse_err(path: &Path, offset: usize, message: impl Into<String>) -> ImagingError {
    ImagingError::Parse { path: path.display().to_string(), offset, message: message.into() }
}

/// Writes `frame` as a 16-bit big-endian PGM plus its JSON sidecar.
/// Pixel values are clamped to the ADC range and rounded, so a rendered
/// frame (already integral) round-trips bit for bit.
pub fn write_frame(frame: &Frame, path: &Path) -> Result<(), ImagingError> {
    let mut buf = Vec::with_capacity(frame.pixels.len() * 2 + 32);
    buf.extend_from_slice(
        format!("P5\n{} {}\n65535\n", frame.width_px, frame.height_px).as_bytes(),
    );
    for &v in &frame.pixels {
        let q = v.clamp(0.0, ADC_MAX).round() as u16;
        buf.extend_from_slice(&q.to_be_bytes());
    }
    std::fs::write(path, &buf).map_err(|e| io_err(path, e))?;

    let meta =
        SidecarMeta { pixel_pitch_nm: frame.pixel_pitch_nm, exposure_s: frame.exposure_s };
    let sidecar = sidecar_path(path);
    let json = serde_json::to_string_pretty(&meta).expect("plain struct serializes");
    std::fs::write(&sidecar, json.as_bytes()).map_err(|e| io_err(&sidecar, e))?;
    Ok(())
}

/// Reads a PGM frame and its JSON sidecar. Both 8-bit (maxval < 256) and
/// 16-bit sample sizes are accepted; 16-bit samples are big-endian per
/// the PGM specification. Truncated or malformed files produce a parse
/// error with the byte offset, never a panic.
pub fn read_frame(path: &Path) -> Result<Frame, ImagingError> {
    let mut file = std::fs::File::open(path).map_err(|e| io_err(path, e))?;
    let mut data = Vec::new();
    file.read_to_end(&mut data).map_err(|e| io_err(path, e))?;

    let mut pos = 0usize;
    if data.len() < 2 || &data[0..2] != b"P5" {
        return Err(parse_err(path, 0, "not a binary PGM: missing P5 magic"));
    }
    pos += 2;

    let next_token = |pos: &mut usize| -> Result<u64, ImagingError> {
        // Skip whitespace and '#' comments.
        loop {
            while *pos < data.len() && data[*pos].is_ascii_whitespace() {
                *pos += 1;
            }
            if *pos < data.len() && data[*pos] == b'#' {
                while *pos < data.len() && data[*pos] != b'\n' {
                    *pos += 1;
                }
            } else {
                break;
            }
        }
        let start = *pos;
        while *pos < data.len() && data[*pos].is_ascii_digit() {
            *pos += 1;
        }
        if *pos == start {
            return Err(parse_err(path, start, "expected a decimal header field"));
        }
        std::str::from_utf8(&data[start..*pos])
            .ok()
            .and_then(|s| s.parse::<u64>().ok())
            .ok_or_else(|| parse_err(path, start, "header field is not a number"))
    };

    let width = next_token(&mut pos)? as usize;
    let height = next_token(&mut pos)? as usize;
    let maxval = next_token(&mut pos)?;
    if width == 0 || height == 0 {
        return Err(parse_err(path, pos, "zero-sized image"));
    }
    if !(1..=65535).contains(&maxval) {
        return Err(parse_err(path, pos, format!("maxval {maxval} out of range 1..=65535")));
    }
    // Exactly one whitespace byte separates the header from the samples.
    if pos >= data.len() || !data[pos].is_ascii_whitespace() {
        return Err(parse_err(path, pos, "missing whitespace after maxval"));
    }
    pos += 1;

    let bytes_per = if maxval < 256 { 1 } else { 2 };
    let need = width * height * bytes_per;
    let have = data.len() - pos;
    if have < need {
        return Err(parse_err(
            path,
            data.len(),
            format!("truncated pixel data: need {need} bytes, found {have}"),
        ));
    }
    let mut pixels = Vec::with_capacity(width * height);
    if bytes_per == 1 {
        pixels.extend(data[pos..pos + need].iter().map(|&b| b as f64));
    } else {
        for chunk in data[pos..pos + need].chunks_exact(2) {
            pixels.push(u16::from_be_bytes([chunk[0], chunk[1]]) as f64);
        }
    }

    let sidecar = sidecar_path(path);
    let raw = std::fs::read_to_string(&sidecar).map_err(|e| io_err(&sidecar, e))?;
    let meta: SidecarMeta = serde_json::from_str(&raw).map_err(|e| {
        parse_err(&sidecar, e.column(), format!("sidecar JSON: {e}"))
    })?;

    Ok(Frame {
        pixels,
        width_px: width,
        height_px: height,
        pixel_pitch_nm: meta.pixel_pitch_nm,
        exposure_s: meta.exposure_s,
    })
}

/// Writes a frame to a writer in PGM form only (no sidecar); used by
/// tests that need in-memory round-trips.
#[allow(dead_code)]
pub(crate) fn write_pgm_bytes(frame: &Frame, out: &mut impl Write) -> std::io::Result<()> {
    out.write_all(format!("P5\n{} {}\n65535\n", frame.width_px, frame.height_px).as_bytes())?;
    for &v in &frame.pixels {
        out.write_all(&(v.clamp(0.0, ADC_MAX).round() as u16).to_be_bytes())?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::super::{
        render_frame, EmitterProfile, EmitterSpec, FocusPlane, FrameGeometry, NoiseSpec,
        SceneSpec,
    };
    use super::*;

    fn small_frame() -> Frame {
        let g = FrameGeometry { width_px: 9, height_px: 7, pixel_pitch_nm: 85.0, exposure_s: 0.2 };
        let scene = SceneSpec {
            emitter: EmitterSpec {
                x_nm: 400.0,
                y_nm: 300.0,
                peak_counts: 900.0,
                psf_fwhm_nm: 200.0,
                profile: EmitterProfile::Gaussian,
            },
            marks: vec![],
            background_counts: 12.0,
            focus: FocusPlane::EmitterPlane,
            surface_defocus_blur_nm: 0.0,
            emitter_defocus_blur_nm: 0.0,
        };
        let noise = NoiseSpec { photon_shot: true, emccd_gain: 7.0, read_noise_rms: 2.0, seed: 42 };
        render_frame(&scene, &noise, &g).unwrap()
    }

    #[test]
    fn rendered_frame_round_trips_bit_identically() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("frame.pgm");
        let frame = small_frame();
        write_frame(&frame, &path).unwrap();
        let back = read_frame(&path).unwrap();
        assert_eq!(back.pixels, frame.pixels);
        assert_eq!(back.width_px, frame.width_px);
        assert_eq!(back.height_px, frame.height_px);
        assert_eq!(back.pixel_pitch_nm, frame.pixel_pitch_nm);
        assert_eq!(back.exposure_s, frame.exposure_s);
    }

    #[test]
    fn sidecar_pitch_is_attached_on_read() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.pgm");
        write_frame(&small_frame(), &path).unwrap();
        let meta = std::fs::read_to_string(dir.path().join("f.json")).unwrap();
        assert!(meta.contains("pixel_pitch_nm"));
        let frame = read_frame(&path).unwrap();
        assert_eq!(frame.pixel_pitch_nm, 85.0);
    }

    #[test]
    fn truncated_file_is_a_parse_error_not_a_crash() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.pgm");
        let frame = small_frame();
        write_frame(&frame, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
        match read_frame(&path) {
            Err(ImagingError::Parse { message, .. }) => {
                assert!(message.contains("truncated"), "{message}")
            }
            other => panic!("expected Parse error, got {other:?}"),
        }
    }

    #[test]
    fn garbage_header_reports_offset() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.pgm");
        std::fs::write(&path, b"P5\nnot numbers\n").unwrap();
        match read_frame(&path) {
            Err(ImagingError::Parse { offset, .. }) => assert!(offset >= 2),
            other => panic!("expected Parse error, got {other:?}"),
        }
    }

    #[test]
    fn missing_sidecar_is_an_io_error_naming_the_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.pgm");
        write_frame(&small_frame(), &path).unwrap();
        std::fs::remove_file(dir.path().join("m.json")).unwrap();
        match read_frame(&path) {
            Err(ImagingError::Io { path, .. }) => assert!(path.ends_with("m.json")),
            other => panic!("expected Io error, got {other:?}"),
        }
    }

    #[test]
    fn eight_bit_pgm_is_accepted() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.pgm");
        std::fs::write(&path, b"P5\n2 2\n255\n\x00\x40\x80\xff").unwrap();
        std::fs::write(
            dir.path().join("e.json"),
            b"{\"pixel_pitch_nm\": 100.0, \"exposure_s\": 0.05}",
        )
        .unwrap();
        let frame = read_frame(&path).unwrap();
        assert_eq!(frame.pixels, vec![0.0, 64.0, 128.0, 255.0]);
    }

    #[test]
    fn comments_in_header_are_skipped() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.pgm");
        std::fs::write(&path, b"P5\n# a comment\n2 1\n# another\n65535\n\x00\x01\x00\x02")
            .unwrap();
        std::fs::write(
            dir.path().join("c.json"),
            b"{\"pixel_pitch_nm\": 50.0, \"exposure_s\": 0.1}",
        )
        .unwrap();
        let frame = read_frame(&path).unwrap();
        assert_eq!(frame.pixels, vec![1.0, 2.0]);
    }
}
