//! Binary netpbm I/O: P6 colour (`H×W×3`) and P5 grey (`H×W`), 8-bit.
//! Values in `[0, 1]` map to `round(255·v)`.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn encode(magic: &str, w: usize, h: usize, t: &Tensor) -> Vec<u8> {
    let mut out = format!("{magic}\n{w} {h}\n255\n").into_bytes();
    out.extend(t.data().iter().map(|&v| quantize(v)));
    out
}

pub fn encode_ppm(image: &Tensor) -> Result<Vec<u8>> {
    if image.rank() != 3 || image.shape()[2] != 3 {
        return Err(Error::Usage(format!(
            "PPM needs an H×W×3 tensor, got {:?}",
            image.shape()
        )));
    }
    Ok(encode("P6", image.shape()[1], image.shape()[0], image))
}

pub fn encode_pgm(image: &Tensor) -> Result<Vec<u8>> {
    if image.rank() != 2 {
        return Err(Error::Usage(format!(
            "PGM needs an H×W tensor, got {:?}",
            image.shape()
        )));
    }
    Ok(encode("P5", image.shape()[1], image.shape()[0], image))
}

pub fn write_ppm(path: impl AsRef<Path>, image: &Tensor) -> Result<()> {
    fs::write(path, encode_ppm(image)?)?;
    Ok(())
}

pub fn write_pgm(path: impl AsRef<Path>, image: &Tensor) -> Result<()> {
    fs::write(path, encode_pgm(image)?)?;
    Ok(())
}

/// Parses a binary netpbm header, returning `(width, height, payload)`.
fn parse<'a>(bytes: &'a [u8], magic: &[u8; 2], path: &Path) -> Result<(usize, usize, &'a [u8])> {
    let bad = |r: &str| Error::format("netpbm", path, r);
    if bytes.len() < 2 || &bytes[..2] != magic {
        return Err(bad("unexpected magic"));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(_) => break,
                None => return Err(bad("truncated header")),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad("bad header number"))?;
    }
    if fields[2] != 255 {
        return Err(bad("only 8-bit maxval 255 is supported"));
    }
    // Exactly one whitespace byte separates the header from the raster.
    pos += 1;
    Ok((
        fields[0],
        fields[1],
        bytes.get(pos..).ok_or_else(|| bad("missing raster"))?,
    ))
}

fn load(path: &Path, magic: &[u8; 2], channels: usize) -> Result<Tensor> {
    let bytes = fs::read(path)?;
    let (w, h, raster) = parse(&bytes, magic, path)?;
    if raster.len() != w * h * channels {
        return Err(Error::format(
            "netpbm",
            path,
            "raster size does not match header",
        ));
    }
    let data = raster.iter().map(|&b| b as f64 / 255.0).collect();
    let shape = if channels == 1 {
        vec![h, w]
    } else {
        vec![h, w, channels]
    };
    Tensor::new(shape, data)
}

pub fn read_ppm(path: impl AsRef<Path>) -> Result<Tensor> {
    load(path.as_ref(), b"P6", 3)
}

pub fn read_pgm(path: impl AsRef<Path>) -> Result<Tensor> {
    load(path.as_ref(), b"P5", 1)
}
