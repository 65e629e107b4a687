//! Little-endian checkpoint container:
//!
//! ```text
//! "PRBCKPT1" | u32 version | u64 step | u32 vocab, d_model, n_layers,
//! n_heads, d_ff, seq_max | u64 seed | u32 tensor_count |
//! per tensor: u32 name_len, name, u32 rank, rank × u32 dims, f32 payload
//! ```

use std::path::Path;

use super::{Checkpoint, ModelConfig};
use crate::codec::{Reader, Writer};
use crate::error::{Error, Result};
use crate::tensor::ParamStore;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"PRBCKPT1";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn write_checkpoint(ckpt: &Checkpoint) -> Vec<u8> {
    let mut w = Writer::new();
    w.bytes(CHECKPOINT_MAGIC);
    w.u32(CHECKPOINT_VERSION);
    w.u64(ckpt.step);
    let c = &ckpt.config;
    for v in [c.vocab_size, c.d_model, c.n_layers, c.n_heads, c.d_ff, c.seq_max] {
        w.u32(v as u32);
    }
    w.u64(c.seed);
    w.tensors(&ckpt.params);
    w.finish()
}

pub fn read_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader::new(bytes);
    r.magic(CHECKPOINT_MAGIC)?;
    let at = r.offset();
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format {
            offset: at,
            reason: format!("unsupported version {version}"),
        });
    }
    let step = r.u64()?;
    let mut dims = [0usize; 6];
    for d in &mut dims {
        *d = r.u32()? as usize;
    }
    let seed = r.u64()?;
    let config = ModelConfig {
        vocab_size: dims[0],
        d_model: dims[1],
        n_layers: dims[2],
        n_heads: dims[3],
        d_ff: dims[4],
        seq_max: dims[5],
        seed,
    };
    let header_end = r.offset();
    config.validate().map_err(|e| Error::Format {
        offset: header_end,
        reason: e.to_string(),
    })?;
    let table_start = r.offset();
    let params = r.tensors()?;
    r.expect_end()?;
    check_shapes(&config, &params).map_err(|reason| Error::Format {
        offset: table_start,
        reason,
    })?;
    Ok(Checkpoint {
        config,
        params,
        step,
        corpus_id: String::new(),
    })
}

/// Every parameter must have the shape the architecture implies.
fn check_shapes(config: &ModelConfig, params: &ParamStore) -> std::result::Result<(), String> {
    let reference = super::init_model(ModelConfig { seed: 0, ..*config }).map_err(|e| e.to_string())?;
    if reference.params.len() != params.len() {
        return Err(format!(
            "expected {} tensors, found {}",
            reference.params.len(),
            params.len()
        ));
    }
    for ((name_a, a), (name_b, b)) in reference.params.iter().zip(params.iter()) {
        if name_a != name_b || a.shape() != b.shape() {
            return Err(format!(
                "tensor {name_b:?} {:?} does not match expected {name_a:?} {:?}",
                b.shape(),
                a.shape()
            ));
        }
    }
    Ok(())
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    crate::codec::write_file(path, &write_checkpoint(ckpt))
}

/// Loads a checkpoint; `corpus_id` is not part of the file and comes back empty.
pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
    read_checkpoint(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::init_model;

    fn ckpt() -> Checkpoint {
        let mut c = init_model(ModelConfig {
            vocab_size: 12,
            d_model: 8,
            n_layers: 2,
            n_heads: 2,
            d_ff: 12,
            seq_max: 8,
            seed: 9,
        })
        .unwrap();
        c.step = 1250;
        c
    }

    #[test]
    fn roundtrip_is_byte_exact() {
        let c = ckpt();
        let bytes = write_checkpoint(&c);
        let back = read_checkpoint(&bytes).unwrap();
        assert_eq!(back.params, c.params);
        assert_eq!(back.step, 1250);
        assert_eq!(write_checkpoint(&back), bytes);

        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.bin");
        save_checkpoint(&c, &p).unwrap();
        let loaded = load_checkpoint(&p).unwrap();
        assert_eq!(write_checkpoint(&loaded), bytes);
    }

    #[test]
    fn header_layout() {
        let bytes = write_checkpoint(&ckpt());
        assert_eq!(&bytes[..8], b"PRBCKPT1");
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 1);
        assert_eq!(u64::from_le_bytes(bytes[12..20].try_into().unwrap()), 1250);
        assert_eq!(u32::from_le_bytes(bytes[20..24].try_into().unwrap()), 12);
        assert_eq!(u64::from_le_bytes(bytes[44..52].try_into().unwrap()), 9);
    }

    #[test]
    fn corruption_rejected() {
        let bytes = write_checkpoint(&ckpt());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(read_checkpoint(&bad), Err(Error::Format { offset: 0, .. })));
        for cut in [4, 30, bytes.len() / 2, bytes.len() - 1] {
            assert!(matches!(read_checkpoint(&bytes[..cut]), Err(Error::Format { .. })));
        }
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(matches!(read_checkpoint(&extra), Err(Error::Format { .. })));
        let mut version = bytes.clone();
        version[8] = 2;
        assert!(matches!(read_checkpoint(&version), Err(Error::Format { offset: 8, .. })));
    }

    #[test]
    fn payload_byte_flip_changes_one_value() {
        let c = ckpt();
        let bytes = write_checkpoint(&c);
        // Last payload byte belongs to the final element of the last tensor.
        let mut flipped = bytes.clone();
        let idx = bytes.len() - 2;
        flipped[idx] ^= 0x01;
        let back = read_checkpoint(&flipped).unwrap();
        let mut diffs = 0;
        for ((_, a), (_, b)) in c.params.iter().zip(back.params.iter()) {
            diffs += a.data().iter().zip(b.data()).filter(|(x, y)| x.to_bits() != y.to_bits()).count();
        }
        assert_eq!(diffs, 1);
    }
}
