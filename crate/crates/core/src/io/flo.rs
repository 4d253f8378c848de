use std::path::Path;

use crate::error::{Error, Result};
use crate::map::FlowMap;

use super::write_bytes;

pub const FLO_MAGIC: f32 = 202021.25;
const HEADER: usize = 12;

/// Serialises to the Middlebury `.flo` layout. Values are stored as `f32`.
pub fn encode_flow(flow: &FlowMap) -> Result<Vec<u8>> {
    if let Some(i) = flow
        .as_slice()
        .iter()
        .position(|v| !(v[0].is_finite() && v[1].is_finite()))
    {
        let (row, col) = (i / flow.width(), i % flow.width());
        return Err(Error::Domain {
            row,
            col,
            msg: "non-finite flow cannot be written".into(),
        });
    }
    let (w, h) = (dim(flow.width())?, dim(flow.height())?);
    let mut out = Vec::with_capacity(HEADER + flow.len() * 8);
    out.extend_from_slice(&FLO_MAGIC.to_le_bytes());
    out.extend_from_slice(&w.to_le_bytes());
    out.extend_from_slice(&h.to_le_bytes());
    for v in flow.as_slice() {
        out.extend_from_slice(&(v[0] as f32).to_le_bytes());
        out.extend_from_slice(&(v[1] as f32).to_le_bytes());
    }
    Ok(out)
}

fn dim(n: usize) -> Result<i32> {
    i32::try_from(n).map_err(|_| Error::InvalidArgument(format!("dimension {n} exceeds i32")))
}

fn word(bytes: &[u8], offset: usize) -> Result<[u8; 4]> {
    bytes
        .get(offset..offset + 4)
        .map(|b| b.try_into().unwrap())
        .ok_or_else(|| Error::format(bytes.len() as u64, "truncated header"))
}

pub fn decode_flow(bytes: &[u8]) -> Result<FlowMap> {
    let magic = f32::from_le_bytes(word(bytes, 0)?);
    if magic != FLO_MAGIC {
        return Err(Error::format(
            0,
            format!("bad magic {magic}, expected {FLO_MAGIC}"),
        ));
    }
    let w = i32::from_le_bytes(word(bytes, 4)?);
    if w <= 0 {
        return Err(Error::format(4, format!("invalid width {w}")));
    }
    let h = i32::from_le_bytes(word(bytes, 8)?);
    if h <= 0 {
        return Err(Error::format(8, format!("invalid height {h}")));
    }
    let (w, h) = (w as usize, h as usize);
    let expected = w
        .checked_mul(h)
        .and_then(|n| n.checked_mul(8))
        .and_then(|n| n.checked_add(HEADER))
        .ok_or_else(|| Error::format(4, "dimensions overflow"))?;
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
    let data = bytes[HEADER..]
        .chunks_exact(8)
        .map(|c| {
            let u = f32::from_le_bytes(c[0..4].try_into().unwrap());
            let v = f32::from_le_bytes(c[4..8].try_into().unwrap());
            [u as f64, v as f64]
        })
        .collect();
    FlowMap::from_vec(h, w, data)
}

pub fn write_flow(path: impl AsRef<Path>, flow: &FlowMap) -> Result<()> {
    write_bytes(path.as_ref(), &encode_flow(flow)?)
}

pub fn read_flow(path: impl AsRef<Path>) -> Result<FlowMap> {
    decode_flow(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn two_by_one_is_28_bytes() {
        let f = FlowMap::filled(1, 2, [0.0; 2]);
        let b = encode_flow(&f).unwrap();
        assert_eq!(b.len(), 4 + 4 + 4 + 16);
        assert_eq!(&b[0..4], &202021.25f32.to_le_bytes());
        assert_eq!(&b[4..8], &2i32.to_le_bytes());
        assert_eq!(&b[8..12], &1i32.to_le_bytes());
    }

    #[test]
    fn payload_is_row_major_interleaved() {
        let f = FlowMap::from_fn(2, 2, |r, c| [(10 * r + c) as f64, -((10 * r + c) as f64)]);
        let b = encode_flow(&f).unwrap();
        let floats: Vec<f32> = b[12..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        assert_eq!(floats, vec![0.0, -0.0, 1.0, -1.0, 10.0, -10.0, 11.0, -11.0]);
    }

    #[test]
    fn corrupted_magic_rejected() {
        let mut b = encode_flow(&FlowMap::filled(2, 2, [1.0, 2.0])).unwrap();
        b[0] ^= 0xff;
        assert!(matches!(
            decode_flow(&b),
            Err(Error::Format { offset: 0, .. })
        ));
    }

    #[test]
    fn truncation_names_offset() {
        let b = encode_flow(&FlowMap::filled(2, 2, [1.0, 2.0])).unwrap();
        let cut = &b[..b.len() - 3];
        match decode_flow(cut) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, cut.len() as u64),
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            decode_flow(&b[..6]),
            Err(Error::Format { offset: 6, .. })
        ));
    }

    #[test]
    fn bad_dimensions_rejected() {
        let mut b = encode_flow(&FlowMap::filled(1, 1, [0.0; 2])).unwrap();
        b[4..8].copy_from_slice(&(-3i32).to_le_bytes());
        assert!(matches!(
            decode_flow(&b),
            Err(Error::Format { offset: 4, .. })
        ));
    }

    #[test]
    fn non_finite_rejected() {
        let f = FlowMap::from_fn(2, 3, |r, c| {
            if (r, c) == (1, 2) {
                [f64::NAN, 0.0]
            } else {
                [0.0; 2]
            }
        });
        assert!(matches!(
            encode_flow(&f),
            Err(Error::Domain { row: 1, col: 2, .. })
        ));
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.flo");
        let f = FlowMap::from_fn(5, 7, |r, c| [r as f64 * 0.25, c as f64 - 3.5]);
        write_flow(&p, &f).unwrap();
        assert_eq!(read_flow(&p).unwrap(), f);
    }

    proptest! {
        #[test]
        fn f32_values_round_trip_bitwise(vals in proptest::collection::vec(-1e6f32..1e6, 2 * 12)) {
            let f = FlowMap::from_vec(3, 4, vals.chunks_exact(2).map(|c| [c[0] as f64, c[1] as f64]).collect()).unwrap();
            let b = encode_flow(&f).unwrap();
            let g = decode_flow(&b).unwrap();
            for (x, y) in f.as_slice().iter().zip(g.as_slice()) {
                prop_assert_eq!(x[0].to_bits(), y[0].to_bits());
                prop_assert_eq!(x[1].to_bits(), y[1].to_bits());
            }
            prop_assert_eq!(encode_flow(&g).unwrap(), b);
        }
    }
}
