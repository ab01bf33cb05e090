//! Binary portable graymap (P5) import and export.

use std::io::{Read, Write};

use crate::error::{contract, Error, Result};
use crate::{ImageTensor, Scalar};

/// Writes the first channel as an 8-bit P5 image.
pub fn write_pgm<T: Scalar>(img: &ImageTensor<T>, mut w: impl Write) -> Result<()> {
    write!(w, "P5\n{} {}\n255\n", img.width, img.height)?;
    let bytes: Vec<u8> = (0..img.height * img.width)
        .map(|i| {
            (img.pixels[i * img.channels].to_f64c() * 255.0)
                .round()
                .clamp(0.0, 255.0) as u8
        })
        .collect();
    w.write_all(&bytes)?;
    Ok(())
}

/// Reads a P5 image (maxval ≤ 65535) into a single-channel tensor scaled to
/// `[0, 1]`.
pub fn read_pgm<T: Scalar>(mut r: impl Read) -> Result<ImageTensor<T>> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)?;
    let mut pos = 0;
    let mut fields = Vec::new();
    while fields.len() < 4 {
        while pos < buf.len() && buf[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < buf.len() && buf[pos] == b'#' {
            while pos < buf.len() && buf[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < buf.len() && !buf[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(fmt_err(pos, "truncated PGM header"));
        }
        fields.push(String::from_utf8_lossy(&buf[start..pos]).into_owned());
    }
    if fields[0] != "P5" {
        return Err(fmt_err(0, format!("not a binary PGM (magic `{}`)", fields[0])));
    }
    let num = |i: usize| -> Result<usize> {
        fields[i]
            .parse()
            .map_err(|_| fmt_err(pos, format!("invalid header field `{}`", fields[i])))
    };
    let (width, height, maxval) = (num(1)?, num(2)?, num(3)?);
    if maxval == 0 || maxval > 65535 {
        return Err(fmt_err(pos, format!("invalid maxval {maxval}")));
    }
    pos += 1;
    let bpp = if maxval > 255 { 2 } else { 1 };
    let need = width * height * bpp;
    if buf.len() < pos + need {
        return Err(fmt_err(buf.len(), "truncated PGM raster"));
    }
    let raster = &buf[pos..pos + need];
    let pixels = (0..width * height)
        .map(|i| {
            let v = if bpp == 1 {
                raster[i] as f64
            } else {
                u16::from_be_bytes([raster[2 * i], raster[2 * i + 1]]) as f64
            };
            T::of((v / maxval as f64).min(1.0))
        })
        .collect();
    ImageTensor::new(height, width, 1, pixels).map_err(|e| contract(e.to_string()))
}

fn fmt_err(offset: usize, msg: impl Into<String>) -> Error {
    Error::Format {
        offset: offset as u64,
        record: None,
        msg: msg.into(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_on_byte_grid() {
        let px: Vec<f32> = (0..12).map(|i| (i * 20) as f32 / 255.0).collect();
        let img = ImageTensor::new(3, 4, 1, px).unwrap();
        let mut buf = Vec::new();
        write_pgm(&img, &mut buf).unwrap();
        let back: ImageTensor<f32> = read_pgm(&buf[..]).unwrap();
        assert_eq!(back, img);
    }

    #[test]
    fn header_comments_and_bad_magic() {
        let data = b"P5\n# comment\n2 1\n255\n\x00\xff";
        let img: ImageTensor<f64> = read_pgm(&data[..]).unwrap();
        assert_eq!(img.pixels, [0.0, 1.0]);
        assert!(read_pgm::<f32>(&b"P2\n1 1\n255\n0"[..]).is_err());
        assert!(read_pgm::<f32>(&b"P5\n2 2\n255\n\x00"[..]).is_err());
    }
}
