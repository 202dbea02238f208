//! Binary model checkpoints.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! "BICAP1"              6 bytes
//! version               u32
//! architecture tag      u8   (0 bi-lstm, 1 bi-s-lstm, 2 bi-f-lstm)
//! K D_feat D_e H        u64 × 4
//! u_out v_out w_out     u64 × 3
//! parameters            f64 × n, blocks in `CaptionModel::blocks` order, row-major
//! checksum              u64, FNV-1a over every preceding byte
//! ```

use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{ArchitectureKind, CaptionModel, ModelDims, TransitionWidths};

pub const MAGIC: &[u8; 6] = b"BICAP1";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 6 + 4 + 1 + 7 * 8;

/// 64-bit FNV-1a.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    bytes
        .iter()
        .fold(OFFSET, |h, &b| (h ^ u64::from(b)).wrapping_mul(PRIME))
}

pub fn to_bytes(m: &CaptionModel) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * m.parameter_count() + 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(m.arch.tag());
    let d = &m.dims;
    for v in [
        d.vocab_size,
        d.feature_dim,
        d.embed_dim,
        d.hidden_dim,
        d.transition.u_out,
        d.transition.v_out,
        d.transition.w_out,
    ] {
        out.extend_from_slice(&(v as u64).to_le_bytes());
    }
    for block in m.blocks() {
        for &x in block.data {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    let sum = fnv1a64(&out);
    out.extend_from_slice(&sum.to_le_bytes());
    out
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

pub fn from_bytes(bytes: &[u8]) -> Result<CaptionModel> {
    if bytes.len() < HEADER_LEN + 8 {
        return Err(bad(format!("file is {} bytes, too short for a header", bytes.len())));
    }
    if &bytes[..6] != MAGIC {
        return Err(bad("bad magic, not a checkpoint"));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 8);
    let stored = u64::from_le_bytes(tail.try_into().expect("8 bytes"));
    if fnv1a64(body) != stored {
        return Err(bad("checksum mismatch"));
    }
    let version = u32::from_le_bytes(body[6..10].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let arch = ArchitectureKind::from_tag(body[10])
        .ok_or_else(|| bad(format!("unknown architecture tag {}", body[10])))?;
    let mut dims = [0usize; 7];
    for (k, d) in dims.iter_mut().enumerate() {
        let at = 11 + 8 * k;
        let v = u64::from_le_bytes(body[at..at + 8].try_into().expect("8 bytes"));
        *d = usize::try_from(v).map_err(|_| bad(format!("dimension {v} too large")))?;
    }
    let model_dims = ModelDims {
        vocab_size: dims[0],
        feature_dim: dims[1],
        embed_dim: dims[2],
        hidden_dim: dims[3],
        transition: TransitionWidths {
            u_out: dims[4],
            v_out: dims[5],
            w_out: dims[6],
        },
    };
    let mut m = CaptionModel::zeros(arch, model_dims).map_err(|e| bad(format!("invalid dims: {e}")))?;
    let params = &body[HEADER_LEN..];
    if params.len() != 8 * m.parameter_count() {
        return Err(bad(format!(
            "expected {} parameters, found {} bytes",
            m.parameter_count(),
            params.len()
        )));
    }
    let mut chunks = params.chunks_exact(8);
    for block in m.blocks_mut() {
        for x in block.data.iter_mut() {
            *x = f64::from_le_bytes(chunks.next().expect("length checked").try_into().expect("8 bytes"));
        }
    }
    Ok(m)
}

pub fn save(m: &CaptionModel, path: &Path) -> Result<()> {
    std::fs::write(path, to_bytes(m)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<CaptionModel> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fnv_reference_values() {
        assert_eq!(fnv1a64(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a64(b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv1a64(b"foobar"), 0x85944171f73967e8);
    }

    #[test]
    fn round_trip_is_bitwise() {
        for arch in ArchitectureKind::ALL {
            let mut m = CaptionModel::init(arch, ModelDims::new(9, 3, 4, 5), 17).unwrap();
            m.softmax_b[2] = -0.0;
            m.softmax_b[3] = f64::MIN_POSITIVE / 4.0;
            let back = from_bytes(&to_bytes(&m)).unwrap();
            assert_eq!(back.arch, arch);
            assert_eq!(back.dims, m.dims);
            for (a, b) in m.blocks().iter().zip(back.blocks()) {
                assert_eq!(a.name, b.name);
                let ab: Vec<u64> = a.data.iter().map(|x| x.to_bits()).collect();
                let bb: Vec<u64> = b.data.iter().map(|x| x.to_bits()).collect();
                assert_eq!(ab, bb);
            }
        }
    }

    #[test]
    fn header_layout() {
        let m = CaptionModel::zeros(ArchitectureKind::BiSLstm, ModelDims::new(5, 2, 3, 4)).unwrap();
        let bytes = to_bytes(&m);
        assert_eq!(&bytes[..6], b"BICAP1");
        assert_eq!(bytes[6..10], 1u32.to_le_bytes());
        assert_eq!(bytes[10], 1);
        assert_eq!(bytes[11..19], 5u64.to_le_bytes());
        assert_eq!(bytes.len(), HEADER_LEN + 8 * m.parameter_count() + 8);
    }

    #[test]
    fn corruption_detected() {
        let m = CaptionModel::init(ArchitectureKind::BiLstm, ModelDims::new(5, 2, 3, 4), 1).unwrap();
        let mut bytes = to_bytes(&m);
        let mid = bytes.len() / 2;
        bytes[mid] ^= 1;
        assert!(matches!(from_bytes(&bytes), Err(Error::Checkpoint(m)) if m.contains("checksum")));
        assert!(from_bytes(b"BICAP0").is_err());
        let mut wrong_magic = to_bytes(&m);
        wrong_magic[0] = b'X';
        assert!(from_bytes(&wrong_magic).is_err());
    }
}
