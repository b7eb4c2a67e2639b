//! Binary PPM (P6, 8-bit RGB) and 16-bit PGM (P5) files.

use std::path::Path;

use d2c_core::raster::RasterFrame;
use d2c_core::Tensor;

use crate::error::{data, CliError, CliResult};

/// 16-bit depth quantization: stored value = round(depth · DEPTH_SCALE).
pub const DEPTH_SCALE: f64 = 65535.0;

pub fn encode_ppm(frame: &RasterFrame) -> Vec<u8> {
    let (h, w) = (frame.height(), frame.width());
    let n = h * w;
    let src = frame.channels.data();
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    out.reserve(3 * n);
    for k in 0..n {
        for c in 0..3 {
            out.push((src[c * n + k] * 255.0).round().clamp(0.0, 255.0) as u8);
        }
    }
    out
}

pub fn encode_pgm16(width: usize, height: usize, values: &[u16]) -> Vec<u8> {
    let mut out = format!("P5\n{width} {height}\n65535\n").into_bytes();
    out.reserve(2 * values.len());
    for v in values {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out
}

/// Depth channel of an RGBD frame, quantized to 16 bits.
pub fn depth_values(frame: &RasterFrame) -> Option<Vec<u16>> {
    if !frame.has_depth() {
        return None;
    }
    let n = frame.height() * frame.width();
    Some(
        frame.channels.data()[3 * n..4 * n]
            .iter()
            .map(|d| (d * DEPTH_SCALE).round().clamp(0.0, DEPTH_SCALE) as u16)
            .collect(),
    )
}

/// Parses the header; returns `(magic, width, height, maxval, payload)`.
fn parse_header(bytes: &[u8]) -> CliResult<(&str, usize, usize, usize, &[u8])> {
    let mut fields = Vec::with_capacity(4);
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return data("truncated PNM header");
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| CliError::Data("bad PNM header".into()))?);
    }
    // exactly one whitespace byte separates the header from the payload
    pos += 1;
    let num = |s: &str| s.parse::<usize>().map_err(|_| CliError::Data(format!("bad PNM number {s:?}")));
    let payload = bytes.get(pos..).unwrap_or(&[]);
    Ok((fields[0], num(fields[1])?, num(fields[2])?, num(fields[3])?, payload))
}

/// RGB channels in `[0, 1]`, shape `(3, H, W)`.
pub fn decode_ppm(bytes: &[u8]) -> CliResult<Tensor> {
    let (magic, w, h, max, payload) = parse_header(bytes)?;
    if magic != "P6" || max != 255 {
        return data("expected an 8-bit P6 file");
    }
    let n = w * h;
    if payload.len() != 3 * n {
        return data(format!("P6 payload has {} bytes, expected {}", payload.len(), 3 * n));
    }
    let mut out = vec![0.0; 3 * n];
    for k in 0..n {
        for c in 0..3 {
            out[c * n + k] = payload[3 * k + c] as f64 / 255.0;
        }
    }
    Ok(Tensor::from_vec(&[3, h, w], out)?)
}

/// Returns `(width, height, values)`.
pub fn decode_pgm16(bytes: &[u8]) -> CliResult<(usize, usize, Vec<u16>)> {
    let (magic, w, h, max, payload) = parse_header(bytes)?;
    if magic != "P5" || max != 65535 {
        return data("expected a 16-bit P5 file");
    }
    if payload.len() != 2 * w * h {
        return data(format!("P5 payload has {} bytes, expected {}", payload.len(), 2 * w * h));
    }
    Ok((w, h, payload.chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]])).collect()))
}

pub fn read_ppm(path: &Path) -> CliResult<Tensor> {
    decode_ppm(&std::fs::read(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?)
}

pub fn read_pgm16(path: &Path) -> CliResult<(usize, usize, Vec<u16>)> {
    decode_pgm16(&std::fs::read(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?)
}
