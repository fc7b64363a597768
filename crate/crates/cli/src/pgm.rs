//! Binary (P5) PGM images and sample grids.

use scratchnet::data::symmetric_to_byte;
use scratchnet::{Error, Result, Tensor};

pub fn encode_pgm(width: usize, height: usize, pixels: &[u8]) -> Result<Vec<u8>> {
    if pixels.len() != width * height {
        return Err(Error::invalid(format!(
            "{} pixels for a {width}x{height} image",
            pixels.len()
        )));
    }
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(pixels);
    Ok(out)
}

/// Parses a P5 file written by [`encode_pgm`]: `(width, height, pixels)`.
pub fn decode_pgm(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>)> {
    let bad = |m: &str| Error::Format(format!("pgm: {m}"));
    let mut fields = Vec::new();
    let mut at = 0;
    while fields.len() < 4 {
        while at < bytes.len() && bytes[at].is_ascii_whitespace() {
            at += 1;
        }
        let start = at;
        while at < bytes.len() && !bytes[at].is_ascii_whitespace() {
            at += 1;
        }
        if start == at {
            return Err(bad("truncated header"));
        }
        fields.push(std::str::from_utf8(&bytes[start..at]).map_err(|_| bad("header is not ASCII"))?);
    }
    if fields[0] != "P5" {
        return Err(bad("not a P5 file"));
    }
    let num = |s: &str| s.parse::<usize>().map_err(|_| bad("bad header number"));
    let (w, h, max) = (num(fields[1])?, num(fields[2])?, num(fields[3])?);
    if max != 255 {
        return Err(bad("only 8-bit images are supported"));
    }
    let body = &bytes[at + 1..];
    if body.len() != w * h {
        return Err(bad("pixel count does not match the header"));
    }
    Ok((w, h, body.to_vec()))
}

/// Tiles the first `rows * cols` samples (each `height * width` values in
/// [-1, 1]) into one 8-bit image, row-major. Missing samples stay black.
pub fn sample_grid(
    samples: &Tensor,
    rows: usize,
    cols: usize,
    height: usize,
    width: usize,
) -> Result<(usize, usize, Vec<u8>)> {
    let per = height * width;
    if samples.row_len() != per {
        return Err(Error::invalid(format!(
            "samples of {} values cannot be shown as {height}x{width}",
            samples.row_len()
        )));
    }
    let (gw, gh) = (cols * width, rows * height);
    let mut pixels = vec![0u8; gw * gh];
    for k in 0..(rows * cols).min(samples.rows()) {
        let (gr, gc) = (k / cols, k % cols);
        let s = samples.row(k);
        for r in 0..height {
            let dst = (gr * height + r) * gw + gc * width;
            for c in 0..width {
                pixels[dst + c] = symmetric_to_byte(s[r * width + c]);
            }
        }
    }
    Ok((gw, gh, pixels))
}
