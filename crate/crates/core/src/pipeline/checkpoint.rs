//! Binary checkpoint container. Layout is documented in `docs/checkpoint.md`.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::{ModelConfig, TrainConfig};
use super::model::TimeDiff;
use crate::error::{Error, Result};
use crate::nn::{AdamConfig, AdamState, ParamEntry, ParamKind, ParamStore, Tensor};
use crate::schedule::DiffusionSchedule;

pub const MAGIC: &[u8; 8] = b"DIFFCAST";
pub const FORMAT_VERSION: u32 = 1;

/// Adam moments keyed by parameter name.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub config: AdamConfig,
    pub step_count: u64,
    pub names: Vec<String>,
    pub first_moment: Vec<Tensor>,
    pub second_moment: Vec<Tensor>,
}

impl OptimizerState {
    pub fn from_adam(adam: &AdamState, store: &ParamStore) -> Self {
        Self {
            config: adam.config,
            step_count: adam.step_count,
            names: adam.params.iter().map(|&id| store.name(id).to_string()).collect(),
            first_moment: adam.first_moment.clone(),
            second_moment: adam.second_moment.clone(),
        }
    }

    pub fn to_adam(&self, store: &ParamStore) -> Result<AdamState> {
        let params = self
            .names
            .iter()
            .map(|n| {
                store
                    .find(n)
                    .ok_or_else(|| Error::Checkpoint(format!("optimizer refers to unknown tensor '{n}'")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(AdamState {
            config: self.config,
            step_count: self.step_count,
            params,
            first_moment: self.first_moment.clone(),
            second_moment: self.second_moment.clone(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ConfigBlock {
    model: ModelConfig,
    train: TrainConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub schedule: DiffusionSchedule,
    pub params: Vec<ParamEntry>,
    pub optimizer: Option<OptimizerState>,
    pub epoch: usize,
    pub best_valid: f64,
    pub trained: bool,
}

impl Checkpoint {
    pub fn from_model(
        model: &TimeDiff,
        train: &TrainConfig,
        optimizer: Option<OptimizerState>,
        epoch: usize,
        best_valid: f64,
    ) -> Self {
        Self {
            model: model.net.config.clone(),
            train: train.clone(),
            schedule: model.net.schedule.clone(),
            params: model.store.entries().to_vec(),
            optimizer,
            epoch,
            best_valid,
            trained: model.trained,
        }
    }

    /// Rebuilds the model and overwrites every tensor with the stored values.
    pub fn to_model(&self) -> Result<TimeDiff> {
        let mut model = TimeDiff::new(self.model.clone(), 0)?;
        if model.net.schedule.steps() != self.schedule.steps() {
            return Err(Error::Checkpoint(format!(
                "schedule has {} steps but config says {}",
                self.schedule.steps(),
                model.net.schedule.steps()
            )));
        }
        model.net.schedule = self.schedule.clone();
        model.store.load_from(&self.params)?;
        model.trained = self.trained;
        Ok(model)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut w = Vec::new();
        w.extend_from_slice(MAGIC);
        w.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        let config = serde_json::to_vec(&ConfigBlock {
            model: self.model.clone(),
            train: self.train.clone(),
        })?;
        put_bytes(&mut w, &config);
        put_f64s(&mut w, self.schedule.betas());
        put_u64(&mut w, self.params.len() as u64);
        for p in &self.params {
            put_bytes(&mut w, p.name.as_bytes());
            w.push(match p.kind {
                ParamKind::Weight => 0,
                ParamKind::Buffer => 1,
            });
            put_tensor(&mut w, &p.value);
        }
        match &self.optimizer {
            None => w.push(0),
            Some(o) => {
                w.push(1);
                put_f64s(&mut w, &[o.config.learning_rate, o.config.beta1, o.config.beta2, o.config.epsilon]);
                put_u64(&mut w, o.step_count);
                put_u64(&mut w, o.names.len() as u64);
                for ((n, m), v) in o.names.iter().zip(&o.first_moment).zip(&o.second_moment) {
                    put_bytes(&mut w, n.as_bytes());
                    put_tensor(&mut w, m);
                    put_tensor(&mut w, v);
                }
            }
        }
        put_u64(&mut w, self.epoch as u64);
        w.extend_from_slice(&self.best_valid.to_le_bytes());
        w.push(u8::from(self.trained));
        Ok(w)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { buf: bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
        }
        let version = u32::from_le_bytes(r.take(4)?.try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported format version {version}")));
        }
        let config: ConfigBlock = serde_json::from_slice(r.bytes()?)?;
        let schedule = DiffusionSchedule::from_betas(r.f64s()?)?;
        let count = r.u64()? as usize;
        let mut params = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let name = r.string()?;
            let kind = match r.u8()? {
                0 => ParamKind::Weight,
                1 => ParamKind::Buffer,
                k => return Err(Error::Checkpoint(format!("unknown tensor kind {k}"))),
            };
            params.push(ParamEntry {
                name,
                kind,
                value: r.tensor()?,
            });
        }
        let optimizer = match r.u8()? {
            0 => None,
            1 => {
                let c = r.f64s()?;
                if c.len() != 4 {
                    return Err(Error::Checkpoint("optimizer config must hold 4 values".into()));
                }
                let step_count = r.u64()?;
                let n = r.u64()? as usize;
                let (mut names, mut first, mut second) = (Vec::new(), Vec::new(), Vec::new());
                for _ in 0..n {
                    names.push(r.string()?);
                    first.push(r.tensor()?);
                    second.push(r.tensor()?);
                }
                Some(OptimizerState {
                    config: AdamConfig {
                        learning_rate: c[0],
                        beta1: c[1],
                        beta2: c[2],
                        epsilon: c[3],
                    },
                    step_count,
                    names,
                    first_moment: first,
                    second_moment: second,
                })
            }
            f => return Err(Error::Checkpoint(format!("bad optimizer flag {f}"))),
        };
        let epoch = r.u64()? as usize;
        let best_valid = f64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes"));
        let trained = r.u8()? != 0;
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Self {
            model: config.model,
            train: config.train,
            schedule,
            params,
            optimizer,
            epoch,
            best_valid,
            trained,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let bytes = self.to_bytes()?;
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut bytes = Vec::new();
        fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

fn put_u64(w: &mut Vec<u8>, v: u64) {
    w.extend_from_slice(&v.to_le_bytes());
}

fn put_bytes(w: &mut Vec<u8>, b: &[u8]) {
    put_u64(w, b.len() as u64);
    w.extend_from_slice(b);
}

fn put_f64s(w: &mut Vec<u8>, vals: &[f64]) {
    put_u64(w, vals.len() as u64);
    for v in vals {
        w.extend_from_slice(&v.to_le_bytes());
    }
}

fn put_tensor(w: &mut Vec<u8>, t: &Tensor) {
    put_u64(w, t.shape().len() as u64);
    for &d in t.shape() {
        put_u64(w, d as u64);
    }
    put_f64s(w, t.data());
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn len(&mut self, width: usize) -> Result<usize> {
        let n = self.u64()? as usize;
        if n.saturating_mul(width) > self.buf.len() - self.pos {
            return Err(Error::Checkpoint(format!("length {n} at byte {} exceeds file", self.pos)));
        }
        Ok(n)
    }

    fn bytes(&mut self) -> Result<&'a [u8]> {
        let n = self.len(1)?;
        self.take(n)
    }

    fn string(&mut self) -> Result<String> {
        String::from_utf8(self.bytes()?.to_vec()).map_err(|e| Error::Checkpoint(e.to_string()))
    }

    fn f64s(&mut self) -> Result<Vec<f64>> {
        let n = self.len(8)?;
        Ok(self
            .take(n * 8)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }

    fn tensor(&mut self) -> Result<Tensor> {
        let rank = self.len(8)?;
        let shape = (0..rank).map(|_| Ok(self.u64()? as usize)).collect::<Result<Vec<_>>>()?;
        Tensor::new(&shape, self.f64s()?).map_err(|e| Error::Checkpoint(e.to_string()))
    }
}
