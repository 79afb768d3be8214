//! Netpbm (PGM/PPM) image I/O and the raw `CFR1` real-valued map format.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::raster::RasterImage;

const MAP_MAGIC: &[u8; 4] = b"CFR1";

struct Header {
    magic: [u8; 2],
    width: usize,
    height: usize,
    maxval: usize,
    data_start: usize,
}

fn parse_header(bytes: &[u8]) -> Result<Header> {
    if bytes.len() < 2 || bytes[0] != b'P' {
        return Err(Error::format("not a netpbm file"));
    }
    let magic = [bytes[0], bytes[1]];
    if !matches!(magic[1], b'2' | b'3' | b'5' | b'6') {
        return Err(Error::format(format!(
            "unsupported netpbm type P{}",
            magic[1] as char
        )));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in &mut fields {
        // whitespace and comments
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(_) => break,
                None => return Err(Error::format("truncated netpbm header")),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::format("malformed netpbm header field"))?;
    }
    // exactly one whitespace byte separates the header from raster data
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(Error::format("missing whitespace after netpbm header"));
    }
    let [width, height, maxval] = fields;
    if width == 0 || height == 0 {
        return Err(Error::format("netpbm image has zero size"));
    }
    if maxval == 0 || maxval > 255 {
        return Err(Error::format(format!(
            "unsupported maxval {maxval} (only 8-bit images)"
        )));
    }
    Ok(Header {
        magic,
        width,
        height,
        maxval,
        data_start: pos + 1,
    })
}

/// Decode a PGM (P2/P5) or PPM (P3/P6) image; sample `v` maps to `v / maxval`.
pub fn decode_pnm(bytes: &[u8]) -> Result<RasterImage> {
    let h = parse_header(bytes)?;
    let channels = if matches!(h.magic[1], b'3' | b'6') {
        3
    } else {
        1
    };
    let n = h.width * h.height * channels;
    let scale = h.maxval as f64;
    let raw: Vec<usize> = match h.magic[1] {
        b'5' | b'6' => {
            let body = &bytes[h.data_start..];
            if body.len() < n {
                return Err(Error::format(format!(
                    "truncated raster: expected {n} bytes, found {}",
                    body.len()
                )));
            }
            body[..n].iter().map(|&b| b as usize).collect()
        }
        _ => {
            let text = std::str::from_utf8(&bytes[h.data_start..])
                .map_err(|_| Error::format("plain netpbm body is not ASCII"))?;
            let vals = text
                .split_ascii_whitespace()
                .take(n)
                .map(|t| t.parse::<usize>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|_| Error::format("malformed plain netpbm sample"))?;
            if vals.len() < n {
                return Err(Error::format("truncated plain netpbm raster"));
            }
            vals
        }
    };
    if raw.iter().any(|&v| v > h.maxval) {
        return Err(Error::format("sample exceeds maxval"));
    }
    let data = raw.into_iter().map(|v| v as f64 / scale).collect();
    RasterImage::new(h.height, h.width, channels, data)
}

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Encode as binary PGM (1 channel) or PPM (3 channels), values quantized by `round(v·255)`.
pub fn encode_pnm(img: &RasterImage) -> Vec<u8> {
    let magic = if img.channels() == 3 { "P6" } else { "P5" };
    let mut out = format!("{magic}\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend(img.data().iter().map(|&v| quantize(v)));
    out
}

pub fn read_image(path: impl AsRef<Path>) -> Result<RasterImage> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pnm(&bytes).map_err(|e| match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn write_image(path: impl AsRef<Path>, img: &RasterImage) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_pnm(img)).map_err(|e| Error::io(path, e))
}

/// Read a binary edge map: any nonzero sample is an edge.
pub fn read_binary_map(path: impl AsRef<Path>) -> Result<RasterImage> {
    let img = read_image(path.as_ref())?;
    let (h, w) = img.dims();
    let ch = img.channels();
    let data = (0..h * w)
        .map(|i| {
            let on = (0..ch).any(|c| img.data()[i * ch + c] > 0.0);
            if on {
                1.0
            } else {
                0.0
            }
        })
        .collect();
    RasterImage::new(h, w, 1, data)
}

/// Encode a single-channel map as `CFR1`: magic, u32 height, u32 width, then
/// row-major little-endian f32 values.
pub fn encode_map(map: &RasterImage) -> Result<Vec<u8>> {
    if map.channels() != 1 {
        return Err(Error::invalid("CFR1 maps are single-channel"));
    }
    let mut out = Vec::with_capacity(12 + 4 * map.data().len());
    out.extend_from_slice(MAP_MAGIC);
    out.extend_from_slice(&(map.height() as u32).to_le_bytes());
    out.extend_from_slice(&(map.width() as u32).to_le_bytes());
    for &v in map.data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    Ok(out)
}

pub fn decode_map(bytes: &[u8]) -> Result<RasterImage> {
    if bytes.len() < 12 || &bytes[..4] != MAP_MAGIC {
        return Err(Error::format("bad CFR1 magic"));
    }
    let h = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let w = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let body = &bytes[12..];
    if body.len() != 4 * h * w {
        return Err(Error::format(format!(
            "CFR1 body is {} bytes, expected {}",
            body.len(),
            4 * h * w
        )));
    }
    let data = body
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
        .collect();
    RasterImage::new(h, w, 1, data)
}

pub fn write_map(path: impl AsRef<Path>, map: &RasterImage) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_map(map)?).map_err(|e| Error::io(path, e))
}

pub fn read_map(path: impl AsRef<Path>) -> Result<RasterImage> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_map(&bytes)
}

/// Load a prediction map from either a `.cfr` raw map or a netpbm image.
pub fn read_any_map(path: impl AsRef<Path>) -> Result<RasterImage> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.starts_with(MAP_MAGIC) {
        decode_map(&bytes)
    } else {
        Ok(decode_pnm(&bytes)?.to_luminance())
    }
}
