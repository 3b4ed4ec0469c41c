//! Versioned binary checkpoints: parameter store layout and values, Adam
//! state, RNG position, and the epoch counter — everything needed to
//! resume a training run mid-stream and reproduce the uninterrupted
//! trajectory.
//!
//! Layout (all integers and floats little-endian):
//! magic `HLCK`, u32 version, parameter block table, parameter values,
//! Adam scalars and moments, ChaCha seed/stream/position, epoch.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::adam::AdamState;
use crate::tape::{BlockInfo, ParamStore};
use crate::AdError;

const MAGIC: &[u8; 4] = b"HLCK";
const VERSION: u32 = 1;

/// A resumable snapshot of a training run.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub store: ParamStore,
    pub adam: AdamState,
    pub rng_seed: [u8; 32],
    pub rng_stream: u64,
    pub rng_word_pos: u128,
    pub epoch: u64,
}

impl Checkpoint {
    /// Snapshots the current training state.
    pub fn capture(
        store: &ParamStore,
        adam: &AdamState,
        rng: &ChaCha8Rng,
        epoch: u64,
    ) -> Self {
        Self {
            store: store.clone(),
            adam: adam.clone(),
            rng_seed: rng.get_seed(),
            rng_stream: rng.get_stream(),
            rng_word_pos: rng.get_word_pos(),
            epoch,
        }
    }

    /// Reconstructs the RNG exactly where it was captured.
    pub fn restore_rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.rng_seed);
        rng.set_stream(self.rng_stream);
        rng.set_word_pos(self.rng_word_pos);
        rng
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), AdError> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, AdError> {
        let mut r = BufReader::new(File::open(path)?);
        Self::read_from(&mut r)
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<(), AdError> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;

        w.write_all(&(self.store.len() as u64).to_le_bytes())?;
        w.write_all(&(self.store.blocks().len() as u32).to_le_bytes())?;
        for b in self.store.blocks() {
            let label = b.label.as_bytes();
            w.write_all(&(label.len() as u32).to_le_bytes())?;
            w.write_all(label)?;
            w.write_all(&(b.offset as u64).to_le_bytes())?;
            w.write_all(&(b.rows as u64).to_le_bytes())?;
            w.write_all(&(b.cols as u64).to_le_bytes())?;
        }
        for v in self.store.data() {
            w.write_all(&v.to_le_bytes())?;
        }

        if self.adam.param_len() != self.store.len() {
            return Err(AdError::ShapeMismatch {
                context: "checkpoint adam state",
                expected: self.store.len().to_string(),
                got: self.adam.param_len().to_string(),
            });
        }
        w.write_all(&self.adam.step_count().to_le_bytes())?;
        let (eta, b1, b2, eps) = self.adam.hyperparams();
        for x in [eta, b1, b2, eps] {
            w.write_all(&x.to_le_bytes())?;
        }
        let (m, v) = self.adam.moments();
        for x in m.iter().chain(v.iter()) {
            w.write_all(&x.to_le_bytes())?;
        }

        w.write_all(&self.rng_seed)?;
        w.write_all(&self.rng_stream.to_le_bytes())?;
        w.write_all(&self.rng_word_pos.to_le_bytes())?;
        w.write_all(&self.epoch.to_le_bytes())?;
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self, AdError> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(AdError::CorruptCheckpoint {
                reason: "bad magic bytes".into(),
            });
        }
        let version = read_u32(r)?;
        if version != VERSION {
            return Err(AdError::CheckpointVersion {
                expected: VERSION,
                found: version,
            });
        }

        let param_len = read_u64(r)? as usize;
        let block_count = read_u32(r)? as usize;
        let mut blocks = Vec::with_capacity(block_count);
        for _ in 0..block_count {
            let label_len = read_u32(r)? as usize;
            if label_len > 1 << 20 {
                return Err(AdError::CorruptCheckpoint {
                    reason: format!("implausible label length {label_len}"),
                });
            }
            let mut label = vec![0u8; label_len];
            r.read_exact(&mut label)?;
            let label = String::from_utf8(label).map_err(|_| AdError::CorruptCheckpoint {
                reason: "block label is not UTF-8".into(),
            })?;
            let offset = read_u64(r)? as usize;
            let rows = read_u64(r)? as usize;
            let cols = read_u64(r)? as usize;
            blocks.push(BlockInfo {
                label,
                offset,
                rows,
                cols,
            });
        }
        let data = read_f64_vec(r, param_len)?;
        let store = ParamStore::from_raw(data, blocks)?;

        let t = read_u64(r)?;
        let eta = read_f64(r)?;
        let b1 = read_f64(r)?;
        let b2 = read_f64(r)?;
        let eps = read_f64(r)?;
        let m = read_f64_vec(r, param_len)?;
        let v = read_f64_vec(r, param_len)?;
        let adam = AdamState::from_raw(eta, b1, b2, eps, t, m, v)?;

        let mut rng_seed = [0u8; 32];
        r.read_exact(&mut rng_seed)?;
        let rng_stream = read_u64(r)?;
        let rng_word_pos = read_u128(r)?;
        let epoch = read_u64(r)?;

        Ok(Self {
            store,
            adam,
            rng_seed,
            rng_stream,
            rng_word_pos,
            epoch,
        })
    }
}

fn read_u32(r: &mut impl Read) -> Result<u32, AdError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> Result<u64, AdError> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_u128(r: &mut impl Read) -> Result<u128, AdError> {
    let mut b = [0u8; 16];
    r.read_exact(&mut b)?;
    Ok(u128::from_le_bytes(b))
}

fn read_f64(r: &mut impl Read) -> Result<f64, AdError> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

fn read_f64_vec(r: &mut impl Read, len: usize) -> Result<Vec<f64>, AdError> {
    let mut out = vec![0.0; len];
    for v in &mut out {
        *v = read_f64(r)?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use std::io::Cursor;

    fn sample_state() -> (ParamStore, AdamState, ChaCha8Rng) {
        let mut store = ParamStore::new();
        let mut k = 0.0f64;
        store.register("theta", 4, 1, || {
            k += 0.3;
            k.sin()
        });
        store.register("net/w0", 2, 3, || {
            k += 0.3;
            k.cos()
        });
        let mut adam = AdamState::new(store.len());
        let grads: Vec<f64> = (0..store.len()).map(|i| (i as f64 - 3.0) * 0.1).collect();
        let mut params = store.data().to_vec();
        adam.step(&mut params, &grads).unwrap();
        store.restore(&params).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        rng.set_stream(7);
        let _: f64 = rng.gen();
        (store, adam, rng)
    }

    #[test]
    fn round_trip_is_exact() {
        let (store, adam, rng) = sample_state();
        let ck = Checkpoint::capture(&store, &adam, &rng, 123);
        let mut buf = Vec::new();
        ck.write_to(&mut buf.by_ref()).unwrap();
        let back = Checkpoint::read_from(&mut Cursor::new(&buf)).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.store.blocks()[1].label, "net/w0");
    }

    #[test]
    fn restored_rng_continues_the_original_stream() {
        let (store, adam, mut rng) = sample_state();
        let ck = Checkpoint::capture(&store, &adam, &rng, 5);
        let ahead: Vec<f64> = (0..16).map(|_| rng.gen()).collect();
        let mut buf = Vec::new();
        ck.write_to(&mut buf.by_ref()).unwrap();
        let back = Checkpoint::read_from(&mut Cursor::new(&buf)).unwrap();
        let mut resumed = back.restore_rng();
        let resumed_ahead: Vec<f64> = (0..16).map(|_| resumed.gen()).collect();
        assert_eq!(ahead, resumed_ahead);
    }

    #[test]
    fn bad_magic_and_version_are_rejected() {
        let (store, adam, rng) = sample_state();
        let ck = Checkpoint::capture(&store, &adam, &rng, 0);
        let mut buf = Vec::new();
        ck.write_to(&mut buf.by_ref()).unwrap();

        let mut corrupted = buf.clone();
        corrupted[0] = b'X';
        assert!(matches!(
            Checkpoint::read_from(&mut Cursor::new(&corrupted)),
            Err(AdError::CorruptCheckpoint { .. })
        ));

        let mut wrong_version = buf.clone();
        wrong_version[4] = 99;
        assert!(matches!(
            Checkpoint::read_from(&mut Cursor::new(&wrong_version)),
            Err(AdError::CheckpointVersion { found: 99, .. })
        ));
    }

    #[test]
    fn truncated_stream_is_an_io_error() {
        let (store, adam, rng) = sample_state();
        let ck = Checkpoint::capture(&store, &adam, &rng, 0);
        let mut buf = Vec::new();
        ck.write_to(&mut buf.by_ref()).unwrap();
        buf.truncate(buf.len() / 2);
        assert!(matches!(
            Checkpoint::read_from(&mut Cursor::new(&buf)),
            Err(AdError::Io(_))
        ));
    }

    #[test]
    fn file_round_trip() {
        let (store, adam, rng) = sample_state();
        let ck = Checkpoint::capture(&store, &adam, &rng, 9);
        let path = std::env::temp_dir().join(format!(
            "hamlearn-ck-{}-{}.bin",
            std::process::id(),
            9
        ));
        ck.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        std::fs::remove_file(&path).ok();
        assert_eq!(back, ck);
    }
}
