//! Binary 16-bit PGM (P5) images.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use mfbd_core::{Image, MfbdError, Result, Shape2};

const MAX: f64 = 65535.0;

/// Maps gray levels `[0, 255]` to the full 16-bit range; values outside
/// are clipped.
pub fn encode_gray(img: &Image) -> Vec<u16> {
    img.data()
        .iter()
        .map(|&v| (v.clamp(0.0, 255.0) * (MAX / 255.0)).round() as u16)
        .collect()
}

/// Maps a signed image linearly so that 0 is mid-grey and the largest
/// magnitude reaches black or white.
pub fn encode_signed(img: &Image) -> Vec<u16> {
    let peak = img.max_abs();
    let half = MAX / 2.0;
    img.data()
        .iter()
        .map(|&v| {
            let t = if peak > 0.0 { v / peak } else { 0.0 };
            (half + half * t).round().clamp(0.0, MAX) as u16
        })
        .collect()
}

/// Maps `[min, max]` of the image to the full range.
pub fn encode_stretched(img: &Image) -> Vec<u16> {
    let lo = img.data().iter().copied().fold(f64::INFINITY, f64::min);
    let hi = img.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    img.data()
        .iter()
        .map(|&v| if span > 0.0 { ((v - lo) / span * MAX).round() as u16 } else { 0 })
        .collect()
}

pub fn write_pgm(path: &Path, shape: Shape2, pixels: &[u16]) -> Result<()> {
    if pixels.len() != shape.len() {
        return Err(MfbdError::Dimension(format!(
            "{} pixels for a {shape} image",
            pixels.len()
        )));
    }
    let mut out = Vec::with_capacity(32 + 2 * pixels.len());
    write!(out, "P5\n{} {}\n65535\n", shape.cols, shape.rows)?;
    for p in pixels {
        out.extend_from_slice(&p.to_be_bytes());
    }
    std::fs::write(path, out)?;
    Ok(())
}

fn token(r: &mut impl BufRead) -> Result<String> {
    let mut tok = String::new();
    let mut byte = [0u8; 1];
    loop {
        if r.read(&mut byte)? == 0 {
            break;
        }
        let c = byte[0] as char;
        if c == '#' && tok.is_empty() {
            let mut skip = String::new();
            r.read_line(&mut skip)?;
            continue;
        }
        if c.is_ascii_whitespace() {
            if tok.is_empty() {
                continue;
            }
            break;
        }
        tok.push(c);
    }
    if tok.is_empty() {
        return Err(MfbdError::Format("truncated PGM header".into()));
    }
    Ok(tok)
}

/// Reads an 8- or 16-bit P5 file into gray levels `[0, 255]`.
pub fn read_pgm(path: &Path) -> Result<Image> {
    let mut r = BufReader::new(std::fs::File::open(path)?);
    let bad = |m: &str| MfbdError::Format(format!("{}: {m}", path.display()));
    if token(&mut r)? != "P5" {
        return Err(bad("not a binary PGM"));
    }
    let num = |r: &mut BufReader<std::fs::File>| -> Result<usize> {
        token(r)?.parse().map_err(|_| bad("bad header number"))
    };
    let cols = num(&mut r)?;
    let rows = num(&mut r)?;
    let maxval = num(&mut r)?;
    if maxval == 0 || maxval > 65535 {
        return Err(bad("bad maxval"));
    }
    let shape = Shape2::new(rows, cols)?;
    let wide = maxval > 255;
    let mut bytes = vec![0u8; shape.len() * if wide { 2 } else { 1 }];
    r.read_exact(&mut bytes).map_err(|_| bad("truncated pixel data"))?;
    let scale = 255.0 / maxval as f64;
    let data = if wide {
        bytes.chunks_exact(2).map(|b| u16::from_be_bytes([b[0], b[1]]) as f64 * scale).collect()
    } else {
        bytes.iter().map(|&b| b as f64 * scale).collect()
    };
    Image::new(shape, data)
}
