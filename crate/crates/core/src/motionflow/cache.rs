use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const FLOW_MAGIC: &[u8; 4] = b"TFFL";
pub const FLOW_VERSION: u16 = 1;
const HEADER_LEN: usize = 16;

/// Write a magnitude channel `(H, W)` as a flow cache file.
pub fn write_flow_file(path: &Path, channel: &Tensor<f32>) -> Result<()> {
    let (h, w) = match channel.shape() {
        &[h, w] if h <= u16::MAX as usize && w <= u16::MAX as usize => (h, w),
        s => {
            return Err(Error::InvalidShape {
                shape: s.to_vec(),
                reason: "flow cache holds one (H, W) plane with extents below 65536".into(),
            })
        }
    };
    let mut buf = Vec::with_capacity(HEADER_LEN + 4 * h * w);
    buf.extend_from_slice(FLOW_MAGIC);
    buf.extend_from_slice(&FLOW_VERSION.to_le_bytes());
    buf.extend_from_slice(&(h as u16).to_le_bytes());
    buf.extend_from_slice(&(w as u16).to_le_bytes());
    buf.extend_from_slice(&[0u8; 6]);
    for v in channel.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn read_flow_file(path: &Path) -> Result<Tensor<f32>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < HEADER_LEN {
        return Err(if bytes.len() >= 4 && &bytes[..4] != FLOW_MAGIC {
            Error::BadMagic("flow cache")
        } else {
            Error::Truncated("flow cache header")
        });
    }
    if &bytes[..4] != FLOW_MAGIC {
        return Err(Error::BadMagic("flow cache"));
    }
    let u16_at = |o: usize| u16::from_le_bytes([bytes[o], bytes[o + 1]]);
    let version = u16_at(4);
    if version != FLOW_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let (h, w) = (u16_at(6) as usize, u16_at(8) as usize);
    let body = &bytes[HEADER_LEN..];
    if body.len() < 4 * h * w {
        return Err(Error::Truncated("flow cache body"));
    }
    let data = body
        .chunks_exact(4)
        .take(h * w)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Tensor::new(&[h, w], data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.flow");
        let t = Tensor::from_fn(&[3, 5], |i| (i[0] * 5 + i[1]) as f32 / 14.0);
        write_flow_file(&path, &t).unwrap();
        let bytes = fs::read(&path).unwrap();
        assert_eq!(bytes.len(), 16 + 15 * 4);
        assert_eq!(&bytes[..4], b"TFFL");
        assert_eq!(&bytes[6..10], &[3, 0, 5, 0]);
        assert_eq!(read_flow_file(&path).unwrap(), t);
    }

    #[test]
    fn distinct_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.flow");
        write_flow_file(&path, &Tensor::zeros(&[4, 4])).unwrap();
        let good = fs::read(&path).unwrap();

        fs::write(&path, &good[..good.len() - 3]).unwrap();
        assert!(matches!(read_flow_file(&path), Err(Error::Truncated(_))));
        let mut bad = good.clone();
        bad[0] = b'X';
        fs::write(&path, &bad).unwrap();
        assert!(matches!(read_flow_file(&path), Err(Error::BadMagic(_))));
        let mut bad = good.clone();
        bad[4] = 9;
        fs::write(&path, &bad).unwrap();
        assert!(matches!(read_flow_file(&path), Err(Error::UnsupportedVersion(9))));
    }
}
