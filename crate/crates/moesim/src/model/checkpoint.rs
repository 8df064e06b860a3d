//! Flat binary model checkpoints.
//!
//! Layout, all little-endian:
//!
//! ```text
//! bytes 0..4    magic "ODM1"
//! bytes 4..60   seven u64 fields: num_layers, num_experts, top_k,
//!               hidden_dim, vocab_size, seed, precision
//!               (precision 0 = full f64, otherwise the emulated bit width)
//! bytes 60..    every weight matrix in declaration order, row-major,
//!               each entry one f64
//! ```
//!
//! Declaration order is the same order the initializer draws weights: per
//! layer `wq, wk, wv, wo, gate, expert0.w1, expert0.w2, expert1.w1, ...`,
//! then the embedding table, then the output head. Round-trips are bit-exact
//! because entries are written as raw IEEE-754 bit patterns.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::model::{Expert, LayerWeights, ModelConfig, Precision, ToyMoeModel};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"ODM1";

pub fn save_model(model: &ToyMoeModel, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(CHECKPOINT_MAGIC)?;
    let cfg = model.config();
    let precision_tag: u64 = match model.precision() {
        Precision::Full => 0,
        Precision::Emulated(bits) => bits as u64,
    };
    for field in [
        cfg.num_layers as u64,
        cfg.num_experts as u64,
        cfg.top_k as u64,
        cfg.hidden_dim as u64,
        cfg.vocab_size as u64,
        cfg.seed,
        precision_tag,
    ] {
        w.write_all(&field.to_le_bytes())?;
    }
    for m in model.matrices() {
        for &v in m.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<ToyMoeModel> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    read_exact(&mut r, &mut magic, "magic")?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::input(format!(
            "bad checkpoint magic {:?}, expected {:?}",
            magic, CHECKPOINT_MAGIC
        )));
    }
    let mut fields = [0u64; 7];
    for f in fields.iter_mut() {
        let mut buf = [0u8; 8];
        read_exact(&mut r, &mut buf, "header")?;
        *f = u64::from_le_bytes(buf);
    }
    let config = ModelConfig {
        num_layers: usize_field(fields[0], "num_layers")?,
        num_experts: usize_field(fields[1], "num_experts")?,
        top_k: usize_field(fields[2], "top_k")?,
        hidden_dim: usize_field(fields[3], "hidden_dim")?,
        vocab_size: usize_field(fields[4], "vocab_size")?,
        seed: fields[5],
    };
    config
        .validate()
        .map_err(|e| Error::input(format!("checkpoint header invalid: {e}")))?;
    let precision = match fields[6] {
        0 => Precision::Full,
        b @ 2..=16 => Precision::Emulated(b as u8),
        other => {
            return Err(Error::input(format!(
                "checkpoint precision tag {other} out of range"
            )))
        }
    };

    let d = config.hidden_dim;
    let mut read_matrix = |rows: usize, cols: usize| -> Result<Matrix> {
        let mut data = vec![0.0f64; rows * cols];
        for v in data.iter_mut() {
            let mut buf = [0u8; 8];
            read_exact(&mut r, &mut buf, "weights")?;
            *v = f64::from_le_bytes(buf);
        }
        Ok(Matrix::from_vec(rows, cols, data))
    };

    let mut layers = Vec::with_capacity(config.num_layers);
    for _ in 0..config.num_layers {
        let wq = read_matrix(d, d)?;
        let wk = read_matrix(d, d)?;
        let wv = read_matrix(d, d)?;
        let wo = read_matrix(d, d)?;
        let gate = read_matrix(config.num_experts, d)?;
        let mut experts = Vec::with_capacity(config.num_experts);
        for _ in 0..config.num_experts {
            experts.push(Expert {
                w1: read_matrix(4 * d, d)?,
                w2: read_matrix(d, 4 * d)?,
            });
        }
        layers.push(LayerWeights {
            wq,
            wk,
            wv,
            wo,
            gate,
            experts,
        });
    }
    let embedding = read_matrix(config.vocab_size, d)?;
    let head = read_matrix(d, config.vocab_size)?;

    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(Error::input("checkpoint has trailing bytes"));
    }

    Ok(ToyMoeModel::from_parts(
        config, precision, layers, embedding, head,
    ))
}

fn read_exact(r: &mut impl Read, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf)
        .map_err(|e| Error::input(format!("checkpoint truncated while reading {what}: {e}")))
}

fn usize_field(v: u64, name: &str) -> Result<usize> {
    // A genuine header never gets near usize::MAX; an absurd value means the
    // file is not a checkpoint, so fail before trying to allocate.
    if v > 1 << 32 {
        return Err(Error::input(format!(
            "checkpoint field {name} = {v} is implausibly large"
        )));
    }
    Ok(v as usize)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ModelConfig, ToyMoeModel};

    fn small_cfg(seed: u64) -> ModelConfig {
        ModelConfig {
            num_layers: 2,
            num_experts: 3,
            top_k: 2,
            hidden_dim: 4,
            vocab_size: 11,
            seed,
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.bin");
        let model = ToyMoeModel::init(small_cfg(99)).unwrap();
        save_model(&model, &path).unwrap();
        let loaded = load_model(&path).unwrap();
        assert_eq!(model, loaded);
        // Bit-level check, not just PartialEq (which treats -0.0 == 0.0).
        for (a, b) in model.matrices().iter().zip(loaded.matrices()) {
            for (x, y) in a.data().iter().zip(b.data()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn round_trip_preserves_precision_tag() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model_q.bin");
        let model = ToyMoeModel::init(small_cfg(7)).unwrap().quantize(8).unwrap();
        save_model(&model, &path).unwrap();
        let loaded = load_model(&path).unwrap();
        assert_eq!(model, loaded);
        assert_eq!(loaded.precision(), crate::model::Precision::Emulated(8));
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.bin");
        std::fs::write(&path, b"NOPE").unwrap();
        assert!(load_model(&path).is_err());

        let good = dir.path().join("trunc.bin");
        let model = ToyMoeModel::init(small_cfg(1)).unwrap();
        save_model(&model, &good).unwrap();
        let bytes = std::fs::read(&good).unwrap();
        std::fs::write(&good, &bytes[..bytes.len() - 9]).unwrap();
        assert!(load_model(&good).is_err());

        let padded = dir.path().join("padded.bin");
        let mut bytes = std::fs::read({
            save_model(&model, &padded).unwrap();
            &padded
        })
        .unwrap();
        bytes.push(0);
        std::fs::write(&padded, &bytes).unwrap();
        assert!(load_model(&padded).is_err());
    }
}
