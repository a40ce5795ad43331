//! Binary PGM (`P5`) and PPM (`P6`) images, 8- or 16-bit.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::image::Image;
use crate::scalar::Scalar;

fn header_tokens(data: &[u8]) -> Result<(Vec<String>, usize)> {
    let mut tokens = Vec::new();
    let mut i = 0;
    while tokens.len() < 4 {
        if i >= data.len() {
            return Err(Error::Format("truncated PNM header".into()));
        }
        let c = data[i];
        if c == b'#' {
            while i < data.len() && data[i] != b'\n' {
                i += 1;
            }
        } else if c.is_ascii_whitespace() {
            i += 1;
        } else {
            let start = i;
            while i < data.len() && !data[i].is_ascii_whitespace() && data[i] != b'#' {
                i += 1;
            }
            tokens.push(String::from_utf8_lossy(&data[start..i]).into_owned());
        }
    }
    // exactly one whitespace byte separates the header from the raster
    if i >= data.len() || !data[i].is_ascii_whitespace() {
        return Err(Error::Format("missing whitespace after PNM header".into()));
    }
    Ok((tokens, i + 1))
}

/// Decodes a PNM buffer into samples scaled to `[0, 1]`.
pub fn decode_pnm<T: Scalar>(data: &[u8]) -> Result<Image<T>> {
    let (tokens, offset) = header_tokens(data)?;
    let channels = match tokens[0].as_str() {
        "P5" => 1,
        "P6" => 3,
        other => return Err(Error::Format(format!("unsupported PNM magic {other:?}"))),
    };
    let parse = |s: &str, what: &str| -> Result<usize> {
        s.parse()
            .map_err(|_| Error::Format(format!("invalid PNM {what}: {s:?}")))
    };
    let width = parse(&tokens[1], "width")?;
    let height = parse(&tokens[2], "height")?;
    let maxval = parse(&tokens[3], "maxval")?;
    if maxval == 0 || maxval > 65535 {
        return Err(Error::Format(format!("PNM maxval {maxval} out of range")));
    }
    let bytes_per = if maxval > 255 { 2 } else { 1 };
    let n = width * height * channels;
    let raster = &data[offset..];
    if raster.len() < n * bytes_per {
        return Err(Error::Format(format!(
            "PNM raster has {} bytes, expected {}",
            raster.len(),
            n * bytes_per
        )));
    }
    let scale = T::from_usize_lossy(maxval);
    let samples = (0..n)
        .map(|i| {
            let v = if bytes_per == 1 {
                raster[i] as usize
            } else {
                u16::from_be_bytes([raster[2 * i], raster[2 * i + 1]]) as usize
            };
            (T::from_usize_lossy(v) / scale).min(T::one())
        })
        .collect();
    Image::new(height, width, channels, samples)
}

pub fn read_pnm<T: Scalar>(path: impl AsRef<Path>) -> Result<Image<T>> {
    decode_pnm(&fs::read(path)?)
}

/// Encodes an image as 8-bit PGM or PPM; samples are clamped and rounded.
pub fn encode_pnm<T: Scalar>(image: &Image<T>) -> Result<Vec<u8>> {
    let magic = match image.channels() {
        1 => "P5",
        3 => "P6",
        c => return Err(Error::Shape(format!("PNM needs 1 or 3 channels, got {c}"))),
    };
    let mut out = format!("{magic}\n{} {}\n255\n", image.width(), image.height()).into_bytes();
    out.extend(image.data().iter().map(|v| {
        let x = v.to_f64_lossy().clamp(0.0, 1.0);
        (x * 255.0).round() as u8
    }));
    Ok(out)
}

pub fn write_pnm<T: Scalar>(image: &Image<T>, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_pnm(image)?)?;
    Ok(())
}
