//! Versioned little-endian binary checkpoints.
//!
//! Layout: the 8-byte magic, a `u32` format version and a `u32` record
//! count, then records of `tag: u8`, `name_len: u32`, UTF-8 name,
//! `ndims: u32`, `ndims` `u64` dimensions and the row-major `f64` values.
//! The metadata record carries JSON in its name and has shape `[0]`.
//! Records are written in a fixed order, so equal checkpoints give equal
//! bytes.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::network::NetworkConfig;
use crate::panel::NormalizationState;
use crate::params::{ImportanceMap, ParamStore};
use crate::task::TaskId;
use crate::trainer::{ConsolidationState, TaskRecord};

pub const MAGIC: &[u8; 8] = b"FGNNCKPT";
pub const VERSION: u32 = 1;

const TAG_META: u8 = 1;
const TAG_PARAM: u8 = 2;
const TAG_OPTIMUM: u8 = 3;
const TAG_IMPORTANCE: u8 = 4;
const TAG_NORM: u8 = 5;

/// Everything needed to resume training or evaluate a model.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub network: NetworkConfig,
    pub params: ParamStore,
    pub state: ConsolidationState,
    pub normalization: NormalizationState,
}

#[derive(Serialize, Deserialize)]
struct Meta {
    network: NetworkConfig,
    lambda_theta: f64,
    lambda_head: f64,
    symbols: Vec<String>,
}

struct Writer {
    buf: Vec<u8>,
    count: u32,
}

impl Writer {
    fn record(&mut self, tag: u8, name: &str, t: &Tensor) {
        self.count += 1;
        self.buf.push(tag);
        self.buf.extend((name.len() as u32).to_le_bytes());
        self.buf.extend(name.as_bytes());
        self.buf.extend((t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            self.buf.extend((d as u64).to_le_bytes());
        }
        for &v in t.data() {
            self.buf.extend(v.to_le_bytes());
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
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
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn record(&mut self) -> Result<(u8, String, Tensor)> {
        let tag = self.take(1)?[0];
        let len = self.u32()? as usize;
        let name = String::from_utf8(self.take(len)?.to_vec())
            .map_err(|_| Error::Checkpoint("record name is not UTF-8".into()))?;
        let ndims = self.u32()? as usize;
        let mut shape = Vec::with_capacity(ndims.min(8));
        for _ in 0..ndims {
            shape.push(usize::try_from(self.u64()?).map_err(|_| Error::Checkpoint("dimension overflow".into()))?);
        }
        let len = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .filter(|&l| l.checked_mul(8).is_some_and(|b| b <= self.bytes.len() - self.pos))
            .ok_or_else(|| Error::Checkpoint(format!("record `{name}` overruns the file")))?;
        let data = self
            .take(8 * len)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        Ok((tag, name, Tensor::from_parts(shape, data)))
    }
}

fn split_task(name: &str) -> Result<(TaskId, &str)> {
    let (task, param) = name
        .split_once(':')
        .ok_or_else(|| Error::Checkpoint(format!("record `{name}` lacks a task")))?;
    Ok((task.parse()?, param))
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let meta = Meta {
            network: self.network.clone(),
            lambda_theta: self.state.lambda_theta,
            lambda_head: self.state.lambda_head,
            symbols: self.normalization.symbols.clone(),
        };
        let mut w = Writer { buf: Vec::new(), count: 0 };
        w.record(TAG_META, &serde_json::to_string(&meta)?, &Tensor::zeros(&[0]));
        for (name, t) in self.params.iter() {
            w.record(TAG_PARAM, name, t);
        }
        for (task, rec) in &self.state.records {
            for (name, t) in rec.optimum.iter() {
                w.record(TAG_OPTIMUM, &format!("{task}:{name}"), t);
            }
            for (name, t) in rec.importance.omega.iter() {
                w.record(TAG_IMPORTANCE, &format!("{task}:{name}"), t);
            }
        }
        w.record(TAG_NORM, "mean", &Tensor::vector(self.normalization.mean.clone()));
        w.record(TAG_NORM, "std", &Tensor::vector(self.normalization.std.clone()));
        let mut out = Vec::with_capacity(16 + w.buf.len());
        out.extend(MAGIC);
        out.extend(VERSION.to_le_bytes());
        out.extend(w.count.to_le_bytes());
        out.extend(w.buf);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8).ok() != Some(MAGIC.as_slice()) {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let found = r.u32()?;
        if found != VERSION {
            return Err(Error::Version { found, expected: VERSION });
        }
        let count = r.u32()?;
        let mut meta: Option<Meta> = None;
        let mut params = ParamStore::new();
        let mut optima: BTreeMap<TaskId, ParamStore> = BTreeMap::new();
        let mut omegas: BTreeMap<TaskId, ParamStore> = BTreeMap::new();
        let (mut mean, mut std) = (None, None);
        for _ in 0..count {
            let (tag, name, t) = r.record()?;
            match tag {
                TAG_META => meta = Some(serde_json::from_str(&name)?),
                TAG_PARAM => params.insert(name, t)?,
                TAG_OPTIMUM => {
                    let (task, p) = split_task(&name)?;
                    optima.entry(task).or_default().insert(p, t)?;
                }
                TAG_IMPORTANCE => {
                    let (task, p) = split_task(&name)?;
                    omegas.entry(task).or_default().insert(p, t)?;
                }
                TAG_NORM if name == "mean" => mean = Some(t.into_data()),
                TAG_NORM if name == "std" => std = Some(t.into_data()),
                _ => return Err(Error::Checkpoint(format!("unknown record `{name}` with tag {tag}"))),
            }
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        let meta = meta.ok_or_else(|| Error::Checkpoint("missing metadata".into()))?;
        let missing = |what: &str| Error::Checkpoint(format!("missing normalization {what}"));
        let normalization = NormalizationState {
            mean: mean.ok_or_else(|| missing("mean"))?,
            std: std.ok_or_else(|| missing("std"))?,
            symbols: meta.symbols,
        };
        if normalization.mean.len() != normalization.symbols.len() || normalization.std.len() != normalization.symbols.len() {
            return Err(Error::Checkpoint("normalization length differs from the symbol count".into()));
        }
        let mut state = ConsolidationState::new(meta.lambda_theta, meta.lambda_head);
        for (task, optimum) in optima {
            let omega = omegas
                .remove(&task)
                .ok_or_else(|| Error::Checkpoint(format!("task {task} has an optimum but no importance")))?;
            params.check_aligned(&optimum)?;
            params.check_aligned(&omega)?;
            state.records.insert(
                task,
                TaskRecord {
                    optimum,
                    importance: ImportanceMap { task, omega },
                },
            );
        }
        if let Some(task) = omegas.keys().next() {
            return Err(Error::Checkpoint(format!("task {task} has importance but no optimum")));
        }
        Ok(Self {
            network: meta.network,
            params,
            state,
            normalization,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::StNetwork;
    use crate::TaskModel;

    fn sample() -> Checkpoint {
        let net = StNetwork::new(NetworkConfig::new(3, 8, 2), 5).unwrap();
        let params = net.params().clone();
        let mut omega = params.zeros_like();
        for (k, (_, t)) in omega.iter_mut().enumerate() {
            t.data_mut().iter_mut().for_each(|v| *v = 0.1 * k as f64);
        }
        let mut state = ConsolidationState::new(1e-5, 2e-5);
        state.records.insert(
            TaskId::Gap,
            TaskRecord {
                optimum: params.clone(),
                importance: ImportanceMap { task: TaskId::Gap, omega },
            },
        );
        Checkpoint {
            network: net.config.clone(),
            params,
            state,
            normalization: NormalizationState {
                symbols: vec!["A".into(), "B".into(), "C".into()],
                mean: vec![100.0, 0.1 + 0.2, -3.5],
                std: vec![1.0, 1e-300, 7.25],
            },
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let c = sample();
        let bytes = c.to_bytes().unwrap();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_bytes().unwrap(), bytes);
    }

    #[test]
    fn version_mismatch_names_both_versions() {
        let mut bytes = sample().to_bytes().unwrap();
        bytes[8..12].copy_from_slice(&7u32.to_le_bytes());
        let err = Checkpoint::from_bytes(&bytes).unwrap_err();
        assert!(matches!(err, Error::Version { found: 7, expected: VERSION }));
        assert!(err.to_string().contains('7') && err.to_string().contains(&VERSION.to_string()));
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let bytes = sample().to_bytes().unwrap();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]).is_err());
        assert!(Checkpoint::from_bytes(b"NOTACKPT\x01\0\0\0\0\0\0\0").is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(Checkpoint::from_bytes(&extra).is_err());
        let mut huge = bytes;
        // First record's single dimension claims 2^60 values.
        let meta_name_len = u32::from_le_bytes(huge[17..21].try_into().unwrap()) as usize;
        let dim_at = 21 + meta_name_len + 4;
        huge[dim_at..dim_at + 8].copy_from_slice(&(1u64 << 60).to_le_bytes());
        assert!(Checkpoint::from_bytes(&huge).is_err());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let c = sample();
        c.save(&path).unwrap();
        assert_eq!(Checkpoint::load(&path).unwrap(), c);
        assert!(Checkpoint::load(&dir.path().join("absent")).is_err());
    }
}
