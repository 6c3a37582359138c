//! Binary model checkpoints.
//!
//! ```text
//! "RMVP" | u32 version | u32 len | config text (len bytes)
//! repeated: u32 name_len | name | u32 rank | u32 dims[rank] | f32 payload
//! u32 CRC32 of every preceding byte
//! ```
//!
//! All integers and floats are little-endian. The config text is the
//! `key = value` form of [`ModelConfig`] plus `epoch` and, when optimizer
//! state is present, `adam_step`. Adam moments are stored as records named
//! `adam.m.<param>` and `adam.v.<param>`.

use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::Path;

use super::config::ModelConfig;
use super::network::Rmvpe;
use crate::audio_io::write_atomic;
use crate::error::{Error, Result};
use crate::nn::{Layer, Tensor};
use crate::training::{AdamSlot, AdamState};

pub const MAGIC: &[u8; 4] = b"RMVP";
pub const VERSION: u32 = 1;

const ADAM_M: &str = "adam.m.";
const ADAM_V: &str = "adam.v.";

/// A model plus optional training state.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: Rmvpe<f32>,
    /// Number of completed epochs.
    pub epoch: usize,
    pub adam: Option<AdamState<f32>>,
}

impl Checkpoint {
    pub fn new(model: Rmvpe<f32>) -> Self {
        Self {
            model,
            epoch: 0,
            adam: None,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let mut text = self.model.config().to_text();
        text.push_str(&format!("epoch = {}\n", self.epoch));
        if let Some(a) = &self.adam {
            text.push_str(&format!("adam_step = {}\n", a.step));
        }
        put_u32(&mut out, text.len());
        out.extend_from_slice(text.as_bytes());

        for p in self.model.params() {
            put_record(&mut out, &p.name, p.value.shape(), p.value.data());
        }
        if let Some(a) = &self.adam {
            for s in &a.slots {
                put_record(&mut out, &format!("{ADAM_M}{}", s.name), &[s.m.len()], &s.m);
                put_record(&mut out, &format!("{ADAM_V}{}", s.name), &[s.v.len()], &s.v);
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 {
            return Err(bad("file is too short"));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(tail.try_into().unwrap());
        if &body[..4] != MAGIC {
            return Err(bad("bad magic (not a checkpoint file)"));
        }
        if crc32fast::hash(body) != stored {
            return Err(bad("checksum mismatch (file is corrupted or truncated)"));
        }
        let mut r = Reader { buf: body, pos: 4 };
        let version = r.u32()?;
        if version != VERSION {
            return Err(bad(&format!(
                "unsupported version {version} (expected {VERSION})"
            )));
        }
        let text_len = r.u32()? as usize;
        let text =
            std::str::from_utf8(r.take(text_len)?).map_err(|_| bad("config is not UTF-8"))?;
        let (config, mut extra) =
            ModelConfig::from_text(text).map_err(|e| bad(&format!("config: {e}")))?;
        let epoch = take_extra(&mut extra, "epoch")?.unwrap_or(0) as usize;
        let adam_step = take_extra(&mut extra, "adam_step")?;
        if let Some(k) = extra.keys().next() {
            return Err(bad(&format!("unknown config key `{k}`")));
        }

        let mut records: BTreeMap<String, (Vec<usize>, Vec<f32>)> = BTreeMap::new();
        while r.pos < body.len() {
            let name_len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| bad("record name is not UTF-8"))?
                .to_string();
            let rank = r.u32()? as usize;
            if rank > 8 {
                return Err(bad(&format!("record `{name}` has implausible rank {rank}")));
            }
            let dims = (0..rank)
                .map(|_| r.u32().map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let count = dims
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .ok_or_else(|| bad(&format!("record `{name}` is too large")))?;
            let raw = r.take(
                count
                    .checked_mul(4)
                    .ok_or_else(|| bad("record is too large"))?,
            )?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            if records.insert(name.clone(), (dims, data)).is_some() {
                return Err(bad(&format!("duplicate record `{name}`")));
            }
        }

        let mut model = Rmvpe::<f32>::new(config, 0)?;
        for p in model.params_mut() {
            let (dims, data) = records
                .remove(&p.name)
                .ok_or_else(|| bad(&format!("missing tensor `{}`", p.name)))?;
            if dims != p.value.shape() {
                return Err(bad(&format!(
                    "tensor `{}` has shape {dims:?}, config implies {:?}",
                    p.name,
                    p.value.shape()
                )));
            }
            p.value = Tensor::from_vec(&dims, data)?;
        }

        let adam = match adam_step {
            None => None,
            Some(step) => {
                let mut slots = Vec::new();
                for p in model.params().into_iter().filter(|p| p.trainable) {
                    let mut moment = |prefix: &str| -> Result<Vec<f32>> {
                        let key = format!("{prefix}{}", p.name);
                        let (dims, data) = records
                            .remove(&key)
                            .ok_or_else(|| bad(&format!("missing optimizer tensor `{key}`")))?;
                        if dims != [p.value.len()] {
                            return Err(bad(&format!(
                                "optimizer tensor `{key}` has shape {dims:?}"
                            )));
                        }
                        Ok(data)
                    };
                    let m = moment(ADAM_M)?;
                    let v = moment(ADAM_V)?;
                    slots.push(AdamSlot {
                        name: p.name.clone(),
                        m,
                        v,
                    });
                }
                Some(AdamState { step, slots })
            }
        };
        if let Some(k) = records.keys().next() {
            return Err(bad(&format!("unexpected tensor `{k}`")));
        }
        Ok(Self { model, epoch, adam })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let bytes = self.to_bytes();
        write_atomic(path, |f| {
            f.write_all(&bytes).map_err(|e| Error::io(path, e))
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Checkpoint(m) => Error::Checkpoint(format!("{}: {m}", path.display())),
            other => other,
        })
    }
}

pub fn save_checkpoint(model: &Rmvpe<f32>, path: impl AsRef<Path>) -> Result<()> {
    Checkpoint::new(model.clone()).save(path)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Rmvpe<f32>> {
    Ok(Checkpoint::load(path)?.model)
}

fn bad(msg: &str) -> Error {
    Error::Checkpoint(msg.to_string())
}

fn take_extra(extra: &mut BTreeMap<String, String>, key: &str) -> Result<Option<u64>> {
    extra
        .remove(key)
        .map(|v| {
            v.parse()
                .map_err(|_| bad(&format!("bad `{key}` value `{v}`")))
        })
        .transpose()
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(
        &u32::try_from(v)
            .expect("checkpoint field exceeds u32")
            .to_le_bytes(),
    );
}

fn put_record(out: &mut Vec<u8>, name: &str, dims: &[usize], data: &[f32]) {
    put_u32(out, name.len());
    out.extend_from_slice(name.as_bytes());
    put_u32(out, dims.len());
    for &d in dims {
        put_u32(out, d);
    }
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
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
            .ok_or_else(|| bad("unexpected end of data"))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> Rmvpe<f32> {
        let cfg = ModelConfig {
            mel_bins: 32,
            encoder_channels: [1, 1, 1, 2, 2],
            rcb_per_block: 1,
            icb_count: 1,
            gru_hidden: 2,
            ..ModelConfig::toy()
        };
        Rmvpe::new(cfg, 3).unwrap()
    }

    #[test]
    fn round_trip_preserves_everything() {
        let model = tiny();
        let adam = AdamState {
            step: 7,
            slots: model
                .params()
                .into_iter()
                .filter(|p| p.trainable)
                .map(|p| AdamSlot {
                    name: p.name.clone(),
                    m: vec![0.25; p.value.len()],
                    v: vec![0.5; p.value.len()],
                })
                .collect(),
        };
        let ck = Checkpoint {
            model,
            epoch: 12,
            adam: Some(adam.clone()),
        };
        let back = Checkpoint::from_bytes(&ck.to_bytes()).unwrap();
        assert_eq!(back.epoch, 12);
        assert_eq!(back.adam, Some(adam));
        for (a, b) in ck.model.params().iter().zip(back.model.params()) {
            assert_eq!(a.name, b.name);
            assert_eq!(a.value, b.value);
        }
    }

    #[test]
    fn every_single_byte_flip_is_rejected() {
        let bytes = Checkpoint::new(tiny()).to_bytes();
        for i in (0..bytes.len()).step_by(97) {
            let mut b = bytes.clone();
            b[i] ^= 0x10;
            assert!(Checkpoint::from_bytes(&b).is_err(), "flip at {i} accepted");
        }
    }

    #[test]
    fn truncation_is_rejected() {
        let bytes = Checkpoint::new(tiny()).to_bytes();
        for cut in [3, 10, bytes.len() / 2, bytes.len() - 1] {
            assert!(Checkpoint::from_bytes(&bytes[..cut]).is_err());
        }
    }

    #[test]
    fn config_weight_mismatch_is_rejected() {
        let bytes = Checkpoint::new(tiny()).to_bytes();
        // rewrite the config to claim a wider GRU, then fix up the CRC
        let text_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let text = std::str::from_utf8(&bytes[12..12 + text_len]).unwrap();
        let forged = text.replace("gru_hidden = 2", "gru_hidden = 3");
        let mut b = Vec::new();
        b.extend_from_slice(&bytes[..8]);
        b.extend_from_slice(&(forged.len() as u32).to_le_bytes());
        b.extend_from_slice(forged.as_bytes());
        b.extend_from_slice(&bytes[12 + text_len..bytes.len() - 4]);
        let crc = crc32fast::hash(&b);
        b.extend_from_slice(&crc.to_le_bytes());
        let err = Checkpoint::from_bytes(&b).unwrap_err();
        assert!(matches!(err, Error::Checkpoint(_)), "{err}");
    }

    #[test]
    fn version_mismatch_is_rejected() {
        let mut b = Checkpoint::new(tiny()).to_bytes();
        b[4] = 9;
        let n = b.len();
        let crc = crc32fast::hash(&b[..n - 4]);
        b[n - 4..].copy_from_slice(&crc.to_le_bytes());
        let err = Checkpoint::from_bytes(&b).unwrap_err();
        assert!(err.to_string().contains("version"), "{err}");
    }
}
