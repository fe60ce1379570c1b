//! Versioned binary checkpoint container: config header, quantile grid,
//! flat EMA parameter payload. Round-trips bit-exactly.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{ModelConfig, ModelError, ModelParams};
use crate::dataset::QuantileGrid;

const MAGIC: &[u8; 8] = b"EPICKPT\0";
pub const CHECKPOINT_VERSION: u32 = 1;

/// A trained model snapshot: the EMA parameters selected by validation
/// loss, plus everything needed to run inference.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub version: u32,
    pub config: ModelConfig,
    pub grid: QuantileGrid,
    /// Flat EMA parameter vector in [`super::ParamLayout`] order.
    pub ema: Vec<f64>,
    /// Update index the snapshot was taken at.
    pub updates_done: u64,
    /// Validation loss of the snapshot.
    pub val_loss: f64,
}

impl Checkpoint {
    /// Parameters view for inference.
    pub fn params(&self) -> Result<ModelParams, ModelError> {
        ModelParams::from_data(self.config, self.ema.clone()).ok_or_else(|| {
            ModelError::CheckpointFormat("parameter payload does not match config".into())
        })
    }
}

fn push_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn push_u64(buf: &mut Vec<u8>, v: u64) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn push_f64(buf: &mut Vec<u8>, v: f64) {
    buf.extend_from_slice(&v.to_bits().to_le_bytes());
}

struct Cursor<'a> {
    data: &'a [u8],
    at: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ModelError> {
        if self.at + n > self.data.len() {
            return Err(ModelError::CheckpointFormat("truncated checkpoint".into()));
        }
        let s = &self.data[self.at..self.at + n];
        self.at += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, ModelError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, ModelError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, ModelError> {
        Ok(f64::from_bits(self.u64()?))
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<(), ModelError> {
    let cfg = &ckpt.config;
    let mut buf = Vec::with_capacity(64 + 8 * (ckpt.ema.len() + ckpt.grid.len()));
    buf.extend_from_slice(MAGIC);
    push_u32(&mut buf, ckpt.version);
    for dim in [cfg.d_model, cfg.n_layers, cfg.n_heads, cfg.d_ff, cfg.context, cfg.horizon, cfg.n_quantiles] {
        push_u32(&mut buf, dim as u32);
    }
    push_u64(&mut buf, ckpt.updates_done);
    push_f64(&mut buf, ckpt.val_loss);
    push_u32(&mut buf, ckpt.grid.len() as u32);
    for &t in ckpt.grid.levels() {
        push_f64(&mut buf, t);
    }
    push_u64(&mut buf, ckpt.ema.len() as u64);
    for &v in &ckpt.ema {
        push_f64(&mut buf, v);
    }
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&buf)?;
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, ModelError> {
    let mut data = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut data)?;
    let mut cur = Cursor { data: &data, at: 0 };
    if cur.take(8)? != MAGIC {
        return Err(ModelError::CheckpointFormat("bad magic".into()));
    }
    let version = cur.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(ModelError::CheckpointFormat(format!("unsupported version {version}")));
    }
    let mut dims = [0usize; 7];
    for d in &mut dims {
        *d = cur.u32()? as usize;
    }
    let config = ModelConfig {
        d_model: dims[0],
        n_layers: dims[1],
        n_heads: dims[2],
        d_ff: dims[3],
        context: dims[4],
        horizon: dims[5],
        n_quantiles: dims[6],
    };
    config.validate()?;
    let updates_done = cur.u64()?;
    let val_loss = cur.f64()?;
    let n_levels = cur.u32()? as usize;
    let mut levels = Vec::with_capacity(n_levels);
    for _ in 0..n_levels {
        levels.push(cur.f64()?);
    }
    let grid = QuantileGrid::from_levels(levels)
        .map_err(|_| ModelError::CheckpointFormat("invalid quantile grid".into()))?;
    let n_params = cur.u64()? as usize;
    let mut ema = Vec::with_capacity(n_params);
    for _ in 0..n_params {
        ema.push(cur.f64()?);
    }
    if cur.at != data.len() {
        return Err(ModelError::CheckpointFormat("trailing bytes".into()));
    }
    let ckpt = Checkpoint { version, config, grid, ema, updates_done, val_loss };
    ckpt.params()?; // shape check
    Ok(ckpt)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;

    #[test]
    fn checkpoint_round_trips_bit_exactly() {
        let cfg = ModelConfig { d_model: 8, n_layers: 1, n_heads: 2, d_ff: 12, context: 5, horizon: 2, n_quantiles: 27 };
        let params = ModelParams::init(cfg, &mut substream(3, "ck", 0));
        let ckpt = Checkpoint {
            version: CHECKPOINT_VERSION,
            config: cfg,
            grid: QuantileGrid::dense27(),
            ema: params.data,
            updates_done: 1234,
            val_loss: 0.04321,
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save_checkpoint(&ckpt, &path).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        assert_eq!(ckpt, loaded);
        let b1 = std::fs::read(&path).unwrap();
        save_checkpoint(&loaded, &path).unwrap();
        assert_eq!(b1, std::fs::read(&path).unwrap());
    }

    #[test]
    fn corrupted_checkpoint_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.ckpt");
        std::fs::write(&path, b"not a checkpoint").unwrap();
        assert!(load_checkpoint(&path).is_err());
    }
}
