//! Binary PPM (P6, 8-bit RGB).

use std::path::Path;

use crate::grid::Grid;

use super::IoError;

/// Quantizes `[0, 1]` RGB to 8 bits (clamped, round to nearest).
pub fn encode_ppm(image: &Grid<f32>) -> Result<Vec<u8>, IoError> {
    if image.channels != 3 {
        return Err(IoError::Format(format!(
            "PPM needs 3 channels, got {}",
            image.channels
        )));
    }
    let mut out = format!("P6\n{} {}\n255\n", image.width, image.height).into_bytes();
    out.extend(
        image
            .data
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8),
    );
    Ok(out)
}

fn header_token<'a>(bytes: &'a [u8], pos: &mut usize) -> Result<&'a [u8], IoError> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    if start == *pos {
        return Err(IoError::Format("truncated PPM header".into()));
    }
    Ok(&bytes[start..*pos])
}

fn header_number(bytes: &[u8], pos: &mut usize) -> Result<usize, IoError> {
    std::str::from_utf8(header_token(bytes, pos)?)
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| IoError::Format("bad PPM header number".into()))
}

/// Decodes to `[0, 1]` floats.
pub fn decode_ppm(bytes: &[u8]) -> Result<Grid<f32>, IoError> {
    let mut pos = 0;
    if header_token(bytes, &mut pos)? != b"P6" {
        return Err(IoError::Format("not a P6 PPM".into()));
    }
    let width = header_number(bytes, &mut pos)?;
    let height = header_number(bytes, &mut pos)?;
    let maxval = header_number(bytes, &mut pos)?;
    if maxval != 255 {
        return Err(IoError::Format(format!("unsupported maxval {maxval}")));
    }
    pos += 1;
    let n = width * height * 3;
    if bytes.len() < pos + n {
        return Err(IoError::Format("truncated PPM payload".into()));
    }
    let data = bytes[pos..pos + n].iter().map(|b| *b as f32 / 255.0).collect();
    Ok(Grid::from_vec(height, width, 3, data))
}

pub fn write_ppm(path: &Path, image: &Grid<f32>) -> Result<(), IoError> {
    std::fs::write(path, encode_ppm(image)?).map_err(|e| IoError::at(path, e))
}

pub fn read_ppm(path: &Path) -> Result<Grid<f32>, IoError> {
    decode_ppm(&std::fs::read(path).map_err(|e| IoError::at(path, e))?)
}
