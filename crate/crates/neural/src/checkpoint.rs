//! Binary checkpoints: magic, version, JSON config, counters, then every
//! parameter tensor followed by both Adam moment sets, as little-endian f64 in
//! declaration order.

use ndarray::Array2;

use crate::config::ModelConfig;
use crate::model::Model;
use crate::optim::{Adam, TrainState};
use crate::params::Params;
use crate::NeuralError;

const MAGIC: &[u8; 8] = b"RFCKPT\0\0";
const VERSION: u32 = 1;

pub fn to_bytes(state: &TrainState) -> Vec<u8> {
    let config = serde_json::to_vec(&state.model.config).expect("config serializes");
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(config.len() as u32).to_le_bytes());
    out.extend_from_slice(&config);
    out.extend_from_slice(&state.step.to_le_bytes());
    out.extend_from_slice(&state.adam.t.to_le_bytes());
    for set in [&state.model.params.tensors, &state.adam.m, &state.adam.v] {
        for t in set.iter() {
            for v in t.iter() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], NeuralError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| NeuralError::Checkpoint("truncated file".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, NeuralError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, NeuralError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn tensors(&mut self, shapes: &Params) -> Result<Vec<Array2<f64>>, NeuralError> {
        let mut out = Vec::with_capacity(shapes.tensors.len());
        for t in &shapes.tensors {
            let raw = self.take(t.len() * 8)?;
            let values: Vec<f64> = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
            out.push(Array2::from_shape_vec(t.raw_dim(), values).expect("shape matches length"));
        }
        Ok(out)
    }
}

/// Reads a checkpoint. When `expected` is given, the stored config must match
/// it exactly.
pub fn from_bytes(bytes: &[u8], pad_id: u32, expected: Option<&ModelConfig>) -> Result<TrainState, NeuralError> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(NeuralError::Checkpoint("bad magic".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(NeuralError::Checkpoint(format!("unsupported version {version}")));
    }
    let len = r.u32()? as usize;
    let config: ModelConfig =
        serde_json::from_slice(r.take(len)?).map_err(|e| NeuralError::Checkpoint(format!("config block: {e}")))?;
    if let Some(want) = expected {
        if *want != config {
            return Err(NeuralError::Checkpoint(format!(
                "config mismatch: file has {config:?}, expected {want:?}"
            )));
        }
    }
    config.validate()?;
    let step = r.u64()?;
    let t = r.u64()?;
    let mut params = Params::zeros(&config);
    params.tensors = r.tensors(&params)?;
    let m = r.tensors(&params)?;
    let v = r.tensors(&params)?;
    if r.pos != bytes.len() {
        return Err(NeuralError::Checkpoint("trailing bytes".into()));
    }
    Ok(TrainState {
        model: Model::from_params(config, params, pad_id)?,
        adam: Adam { m, v, t },
        step,
    })
}
