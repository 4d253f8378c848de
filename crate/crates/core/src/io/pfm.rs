use std::path::Path;

use crate::error::{Error, Result};
use crate::map::{DepthMap, Map3};

use super::write_bytes;

fn check_finite(values: impl Iterator<Item = f64>, width: usize) -> Result<()> {
    for (i, v) in values.enumerate() {
        if !v.is_finite() {
            return Err(Error::Domain {
                row: i / width,
                col: i % width,
                msg: "non-finite value cannot be written".into(),
            });
        }
    }
    Ok(())
}

/// `channels` floats per pixel, rows stored bottom-to-top, little-endian.
fn encode(width: usize, height: usize, channels: usize, data: &[f64]) -> Vec<u8> {
    let tag = if channels == 1 { "Pf" } else { "PF" };
    let mut out = format!("{tag}\n{width} {height}\n-1.0\n").into_bytes();
    out.reserve(data.len() * 4);
    for r in (0..height).rev() {
        for v in &data[r * width * channels..(r + 1) * width * channels] {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    out
}

struct Header {
    width: usize,
    height: usize,
    channels: usize,
    little_endian: bool,
    data_offset: usize,
}

fn token(bytes: &[u8], pos: &mut usize) -> Result<(usize, String)> {
    while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    if start == *pos {
        return Err(Error::format(start as u64, "truncated header"));
    }
    let s = std::str::from_utf8(&bytes[start..*pos])
        .map_err(|_| Error::format(start as u64, "header is not ASCII"))?;
    Ok((start, s.to_string()))
}

fn parse_header(bytes: &[u8]) -> Result<Header> {
    let mut pos = 0;
    let (_, tag) = token(bytes, &mut pos)?;
    let channels = match tag.as_str() {
        "Pf" => 1,
        "PF" => 3,
        _ => return Err(Error::format(0, format!("bad PFM tag {tag:?}"))),
    };
    let dim = |pos: &mut usize| -> Result<usize> {
        let (at, t) = token(bytes, pos)?;
        match t.parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(Error::format(at as u64, format!("invalid dimension {t:?}"))),
        }
    };
    let width = dim(&mut pos)?;
    let height = dim(&mut pos)?;
    let (at, t) = token(bytes, &mut pos)?;
    let scale: f64 = t
        .parse()
        .ok()
        .filter(|s: &f64| s.is_finite() && *s != 0.0)
        .ok_or_else(|| Error::format(at as u64, format!("invalid scale {t:?}")))?;
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(Error::format(pos as u64, "missing separator after scale"));
    }
    Ok(Header {
        width,
        height,
        channels,
        little_endian: scale < 0.0,
        data_offset: pos + 1,
    })
}

fn decode(bytes: &[u8], channels: usize) -> Result<(usize, usize, Vec<f64>)> {
    let h = parse_header(bytes)?;
    if h.channels != channels {
        return Err(Error::format(
            0,
            format!("expected {channels} channel(s), file has {}", h.channels),
        ));
    }
    let row_len = h.width * channels;
    let expected = row_len
        .checked_mul(h.height)
        .and_then(|n| n.checked_mul(4))
        .and_then(|n| n.checked_add(h.data_offset))
        .ok_or_else(|| Error::format(0, "dimensions overflow"))?;
    if bytes.len() < expected {
        return Err(Error::format(
            bytes.len() as u64,
            format!("truncated payload: {} of {expected} bytes", bytes.len()),
        ));
    }
    if bytes.len() > expected {
        return Err(Error::format(
            expected as u64,
            "trailing bytes after payload",
        ));
    }
    let floats: Vec<f64> = bytes[h.data_offset..]
        .chunks_exact(4)
        .map(|c| {
            let b: [u8; 4] = c.try_into().unwrap();
            if h.little_endian {
                f32::from_le_bytes(b) as f64
            } else {
                f32::from_be_bytes(b) as f64
            }
        })
        .collect();
    let mut data = Vec::with_capacity(floats.len());
    for r in (0..h.height).rev() {
        data.extend_from_slice(&floats[r * row_len..(r + 1) * row_len]);
    }
    Ok((h.width, h.height, data))
}

pub fn encode_depth(depth: &DepthMap) -> Result<Vec<u8>> {
    check_finite(depth.as_slice().iter().copied(), depth.width())?;
    Ok(encode(depth.width(), depth.height(), 1, depth.as_slice()))
}

pub fn decode_depth(bytes: &[u8]) -> Result<DepthMap> {
    let (w, h, data) = decode(bytes, 1)?;
    DepthMap::from_vec(h, w, data)
}

pub fn encode_map3(map: &Map3) -> Result<Vec<u8>> {
    let flat: Vec<f64> = map.as_slice().iter().flatten().copied().collect();
    check_finite(
        flat.chunks_exact(3).map(|c| {
            if c.iter().all(|v| v.is_finite()) {
                0.0
            } else {
                f64::NAN
            }
        }),
        map.width(),
    )?;
    Ok(encode(map.width(), map.height(), 3, &flat))
}

pub fn decode_map3(bytes: &[u8]) -> Result<Map3> {
    let (w, h, data) = decode(bytes, 3)?;
    Map3::from_vec(
        h,
        w,
        data.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect(),
    )
}

pub fn write_depth(path: impl AsRef<Path>, depth: &DepthMap) -> Result<()> {
    write_bytes(path.as_ref(), &encode_depth(depth)?)
}

pub fn read_depth(path: impl AsRef<Path>) -> Result<DepthMap> {
    decode_depth(&std::fs::read(path)?)
}

pub fn write_map3(path: impl AsRef<Path>, map: &Map3) -> Result<()> {
    write_bytes(path.as_ref(), &encode_map3(map)?)
}

pub fn read_map3(path: impl AsRef<Path>) -> Result<Map3> {
    decode_map3(&std::fs::read(path)?)
}
