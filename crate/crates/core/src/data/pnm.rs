//! Binary PPM (P6) and PGM (P5) with maxval 255.
//!
//! Pixels map to `[0, 1]` as `byte / 255`; encoding rounds `v · 255` to the
//! nearest byte after clamping.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub fn to_byte(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Encode an `H×W×3` image as P6 or an `H×W×1` image as P5.
pub fn encode(image: &Tensor) -> Result<Vec<u8>> {
    let (h, w, c) = match image.shape() {
        &[h, w, c] => (h, w, c),
        s => return Err(Error::Shape(format!("expected H×W×C image, got {s:?}"))),
    };
    let magic = match c {
        3 => "P6",
        1 => "P5",
        _ => return Err(Error::Shape(format!("PNM needs 1 or 3 channels, got {c}"))),
    };
    let mut out = format!("{magic}\n{w} {h}\n255\n").into_bytes();
    out.extend(image.data().iter().map(|&v| to_byte(v)));
    Ok(out)
}

fn header_token(bytes: &[u8], pos: &mut usize) -> Result<usize> {
    loop {
        match bytes.get(*pos) {
            Some(b'#') => {
                while bytes.get(*pos).is_some_and(|&b| b != b'\n') {
                    *pos += 1;
                }
            }
            Some(b) if b.is_ascii_whitespace() => *pos += 1,
            Some(_) => break,
            None => return Err(Error::Format("truncated PNM header".into())),
        }
    }
    let start = *pos;
    while bytes.get(*pos).is_some_and(u8::is_ascii_digit) {
        *pos += 1;
    }
    std::str::from_utf8(&bytes[start..*pos])
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::Format("malformed PNM header value".into()))
}

/// Decode P6/P5 bytes. `channels` requests 1 or 3 output channels: grayscale
/// is replicated to RGB on request, RGB is averaged down to gray.
pub fn decode(bytes: &[u8], channels: Option<usize>) -> Result<Tensor> {
    let stored = match bytes.get(..2) {
        Some(b"P6") => 3,
        Some(b"P5") => 1,
        _ => return Err(Error::Format("bad magic, expected P6 or P5".into())),
    };
    let mut pos = 2;
    let w = header_token(bytes, &mut pos)?;
    let h = header_token(bytes, &mut pos)?;
    let maxval = header_token(bytes, &mut pos)?;
    if maxval != 255 {
        return Err(Error::Format(format!("maxval {maxval} unsupported, expected 255")));
    }
    if w == 0 || h == 0 {
        return Err(Error::Format("zero image dimension".into()));
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(Error::Format("missing separator after PNM header".into()));
    }
    pos += 1;
    let n = w * h * stored;
    let payload = bytes
        .get(pos..pos + n)
        .ok_or_else(|| Error::Format(format!("truncated payload: need {n} bytes")))?;
    let values: Vec<f64> = payload.iter().map(|&b| f64::from(b) / 255.0).collect();
    let want = channels.unwrap_or(stored);
    let data = match (stored, want) {
        (s, w) if s == w => values,
        (1, 3) => values.iter().flat_map(|&v| [v, v, v]).collect(),
        (3, 1) => values.chunks_exact(3).map(|p| (p[0] + p[1] + p[2]) / 3.0).collect(),
        (_, w) => return Err(Error::Shape(format!("cannot produce {w} channels"))),
    };
    Tensor::new(vec![h, w, want], data)
}

pub fn read(path: &Path, channels: Option<usize>) -> Result<Tensor> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, channels).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

pub fn write(path: &Path, image: &Tensor) -> Result<()> {
    fs::write(path, encode(image)?).map_err(|e| Error::io(path, e))
}
