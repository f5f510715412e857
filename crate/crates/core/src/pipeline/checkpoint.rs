//! `.amsdb` checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic   "AMSDBCKP"
//! u32     format version
//! u32     header length, then a JSON header {config, seed, step, optimizer}
//! u32     array count, then per array:
//!         u32 name length, name (UTF-8), u32 ndim, u64 dims…,
//!         u64 payload offset (bytes), u64 element count, u32 crc32
//! u64     payload length, then the f32 payload
//! ```
//!
//! Optimizer moments are stored as ordinary arrays named `adam.m.<param>`
//! and `adam.v.<param>`.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::image::write_atomic;
use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};
use crate::nn::Module;
use crate::tensor::{Adam, AdamState};

pub const MAGIC: &[u8; 8] = b"AMSDBCKP";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerMeta {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    pub step: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    seed: u64,
    step: u64,
    optimizer: Option<OptimizerMeta>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedArray {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub version: u32,
    pub config: ModelConfig,
    pub seed: u64,
    pub step: u64,
    pub optimizer: Option<OptimizerMeta>,
    pub arrays: Vec<NamedArray>,
}

const M_PREFIX: &str = "adam.m.";
const V_PREFIX: &str = "adam.v.";

impl Checkpoint {
    pub fn from_model(model: &Model, seed: u64, step: u64, optimizer: Option<&Adam>) -> Self {
        let params = model.named_params();
        let mut arrays: Vec<NamedArray> = params
            .iter()
            .map(|(name, t)| NamedArray {
                name: name.clone(),
                shape: t.shape().to_vec(),
                data: t.to_vec(),
            })
            .collect();
        let optimizer = optimizer.map(|opt| {
            if opt.states.len() == params.len() {
                for (prefix, pick) in [(M_PREFIX, 0), (V_PREFIX, 1)] {
                    for ((name, t), st) in params.iter().zip(&opt.states) {
                        arrays.push(NamedArray {
                            name: format!("{prefix}{name}"),
                            shape: t.shape().to_vec(),
                            data: if pick == 0 { st.m.clone() } else { st.v.clone() },
                        });
                    }
                }
            }
            OptimizerMeta {
                lr: opt.lr,
                beta1: opt.beta1,
                beta2: opt.beta2,
                eps: opt.eps,
                step: opt.step,
            }
        });
        Checkpoint {
            version: VERSION,
            config: model.config.clone(),
            seed,
            step,
            optimizer,
            arrays,
        }
    }

    pub fn get(&self, name: &str) -> Option<&NamedArray> {
        self.arrays.iter().find(|a| a.name == name)
    }

    /// Rebuilds the model, checking that names and shapes match exactly.
    pub fn to_model(&self) -> Result<Model> {
        let model = Model::new(self.config.clone(), self.seed)?;
        let by_name: HashMap<&str, &NamedArray> =
            self.arrays.iter().map(|a| (a.name.as_str(), a)).collect();
        let params = model.named_params();
        for (name, t) in &params {
            let arr = by_name.get(name.as_str()).ok_or_else(|| {
                Error::Checkpoint(format!("missing parameter {name} (shape {:?})", t.shape()))
            })?;
            if arr.shape != t.shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter {name}: checkpoint shape {:?}, model expects {:?}",
                    arr.shape,
                    t.shape()
                )));
            }
            t.data_mut().copy_from_slice(&arr.data);
        }
        let known: std::collections::HashSet<&str> = params.iter().map(|(n, _)| n.as_str()).collect();
        for a in &self.arrays {
            let base = a
                .name
                .strip_prefix(M_PREFIX)
                .or_else(|| a.name.strip_prefix(V_PREFIX))
                .unwrap_or(&a.name);
            if !known.contains(base) {
                return Err(Error::Checkpoint(format!("unknown parameter {} in checkpoint", a.name)));
            }
        }
        Ok(model)
    }

    /// Optimizer restored against `model`'s parameter order.
    pub fn to_optimizer(&self, model: &Model) -> Result<Option<Adam>> {
        let Some(meta) = self.optimizer else {
            return Ok(None);
        };
        let mut opt = Adam::new(meta.lr);
        opt.beta1 = meta.beta1;
        opt.beta2 = meta.beta2;
        opt.eps = meta.eps;
        opt.step = meta.step;
        let params = model.named_params();
        let mut states = Vec::with_capacity(params.len());
        for (name, t) in &params {
            let m = self.get(&format!("{M_PREFIX}{name}"));
            let v = self.get(&format!("{V_PREFIX}{name}"));
            match (m, v) {
                (Some(m), Some(v)) if m.data.len() == t.numel() && v.data.len() == t.numel() => {
                    states.push(AdamState {
                        m: m.data.clone(),
                        v: v.data.clone(),
                    })
                }
                (None, None) if states.is_empty() => break,
                _ => {
                    return Err(Error::Checkpoint(format!(
                        "optimizer state for {name} is missing or mis-sized"
                    )))
                }
            }
        }
        opt.states = states;
        Ok(Some(opt))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&Header {
            config: self.config.clone(),
            seed: self.seed,
            step: self.step,
            optimizer: self.optimizer,
        })
        .map_err(|e| Error::Checkpoint(format!("header encoding failed: {e}")))?;
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&self.version.to_le_bytes());
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&(self.arrays.len() as u32).to_le_bytes());
        let mut payload = Vec::new();
        for a in &self.arrays {
            let expect: usize = a.shape.iter().product();
            if expect != a.data.len() {
                return Err(Error::Checkpoint(format!(
                    "array {} has {} values for shape {:?}",
                    a.name,
                    a.data.len(),
                    a.shape
                )));
            }
            let start = payload.len();
            for v in &a.data {
                payload.extend_from_slice(&v.to_le_bytes());
            }
            out.extend_from_slice(&(a.name.len() as u32).to_le_bytes());
            out.extend_from_slice(a.name.as_bytes());
            out.extend_from_slice(&(a.shape.len() as u32).to_le_bytes());
            for &d in &a.shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            out.extend_from_slice(&(start as u64).to_le_bytes());
            out.extend_from_slice(&(a.data.len() as u64).to_le_bytes());
            out.extend_from_slice(&crc32fast::hash(&payload[start..]).to_le_bytes());
        }
        out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
        out.extend_from_slice(&payload);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint version {version} (expected {VERSION})"
            )));
        }
        let hlen = r.u32()? as usize;
        let header: Header = serde_json::from_slice(r.take(hlen)?)
            .map_err(|e| Error::Checkpoint(format!("corrupt header: {e}")))?;
        let count = r.u32()? as usize;
        let mut table = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let nlen = r.u32()? as usize;
            let name = String::from_utf8(r.take(nlen)?.to_vec())
                .map_err(|_| Error::Checkpoint("array name is not UTF-8".into()))?;
            let ndim = r.u32()? as usize;
            let shape = (0..ndim).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let offset = r.u64()? as usize;
            let len = r.u64()? as usize;
            let crc = r.u32()?;
            table.push((name, shape, offset, len, crc));
        }
        let plen = r.u64()? as usize;
        let payload = r.take(plen)?;
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        let mut arrays = Vec::with_capacity(table.len());
        let mut seen = std::collections::HashSet::new();
        for (name, shape, offset, len, crc) in table {
            if !seen.insert(name.clone()) {
                return Err(Error::Checkpoint(format!("array {name} appears twice")));
            }
            if shape.iter().product::<usize>() != len {
                return Err(Error::Checkpoint(format!("array {name}: shape {shape:?} vs {len} values")));
            }
            let end = offset
                .checked_add(len * 4)
                .filter(|&e| e <= payload.len())
                .ok_or_else(|| Error::Checkpoint(format!("array {name} runs past the payload (truncated)")))?;
            let raw = &payload[offset..end];
            if crc32fast::hash(raw) != crc {
                return Err(Error::Checkpoint(format!("checksum mismatch in array {name}")));
            }
            let data = raw.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])).collect();
            arrays.push(NamedArray { name, shape, data });
        }
        Ok(Checkpoint {
            version,
            config: header.config,
            seed: header.seed,
            step: header.step,
            optimizer: header.optimizer,
            arrays,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path, &self.to_bytes()?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::SkipMode;

    fn small(mode: SkipMode) -> Model {
        Model::new(ModelConfig::desk(vec![8, 16], vec![1, 1], mode), 3).unwrap()
    }

    #[test]
    fn byte_exact_round_trip() {
        let m = small(SkipMode::DoGResidual);
        let ck = Checkpoint::from_model(&m, 3, 17, None);
        let bytes = ck.to_bytes().unwrap();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_bytes().unwrap(), bytes);
        let m2 = back.to_model().unwrap();
        for ((_, a), (_, b)) in m.named_params().iter().zip(m2.named_params()) {
            let bits = |t: &crate::Tensor| t.to_vec().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(a), bits(&b));
        }
    }

    #[test]
    fn corrupted_payload_byte_fails_checksum() {
        let bytes = Checkpoint::from_model(&small(SkipMode::Plain), 0, 0, None).to_bytes().unwrap();
        let mut bad = bytes.clone();
        let i = bad.len() - 5;
        bad[i] ^= 0x40;
        match Checkpoint::from_bytes(&bad) {
            Err(Error::Checkpoint(m)) => assert!(m.contains("checksum"), "{m}"),
            other => panic!("{other:?}"),
        }
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]).is_err());
    }

    #[test]
    fn version_checked() {
        let mut bytes = Checkpoint::from_model(&small(SkipMode::Plain), 0, 0, None).to_bytes().unwrap();
        bytes[8] = 9;
        match Checkpoint::from_bytes(&bytes) {
            Err(Error::Checkpoint(m)) => assert!(m.contains("version"), "{m}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn plain_checkpoint_into_dog_config_names_missing_weights() {
        let mut ck = Checkpoint::from_model(&small(SkipMode::Plain), 0, 0, None);
        ck.config.skip_mode = SkipMode::DoG;
        match ck.to_model() {
            Err(Error::Checkpoint(m)) => assert!(m.contains("skip.depth0.dog.weights"), "{m}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_arrays_rejected() {
        let mut ck = Checkpoint::from_model(&small(SkipMode::Plain), 0, 0, None);
        ck.arrays.push(NamedArray {
            name: "stray".into(),
            shape: vec![1],
            data: vec![0.0],
        });
        assert!(matches!(ck.to_model(), Err(Error::Checkpoint(_))));
    }

    #[test]
    fn optimizer_state_round_trips() {
        let m = small(SkipMode::DoG);
        let params = m.params();
        let mut opt = Adam::new(1e-3);
        for p in &params {
            p.zero_grad();
        }
        opt.step(&params).unwrap();
        let ck = Checkpoint::from_model(&m, 1, 1, Some(&opt));
        let back = Checkpoint::from_bytes(&ck.to_bytes().unwrap()).unwrap();
        let m2 = back.to_model().unwrap();
        let opt2 = back.to_optimizer(&m2).unwrap().unwrap();
        assert_eq!(opt2.step, 1);
        assert_eq!(opt2.states, opt.states);
    }
}
