//! `EMGN` checkpoint files.
//!
//! Layout: `"EMGN"` | u32 version | u64 header length | JSON header |
//! f32 little-endian arrays in the order the header lists them.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Moments, TrainConfig, TrainError};
use crate::autodiff::{BatchNormStats, Tensor};
use crate::encoder::{Block, EncoderConfig, EncoderParams};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"EMGN";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Trained encoder state. Parameters and moments are held at f32 precision,
/// so a checkpoint in memory and its reloaded copy are identical.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub version: u32,
    pub encoder: EncoderConfig,
    pub params: EncoderParams,
    pub moments: Moments,
    /// Optimizer steps taken.
    pub iteration: u64,
    pub seed: u64,
    pub train: TrainConfig,
    pub loss_trace: Vec<f64>,
}

impl Checkpoint {
    pub fn new(
        encoder: EncoderConfig,
        params: &EncoderParams,
        moments: &Moments,
        iteration: u64,
        train: TrainConfig,
        loss_trace: Vec<f64>,
    ) -> Self {
        let r = |v: &[Tensor]| v.iter().map(Tensor::to_f32_precision).collect::<Vec<_>>();
        let round = |v: &[f64]| v.iter().map(|&x| x as f32 as f64).collect::<Vec<_>>();
        let params = EncoderParams {
            blocks: params
                .blocks
                .iter()
                .map(|b| Block {
                    weight: b.weight.to_f32_precision(),
                    bias: b.bias.to_f32_precision(),
                    gamma: b.gamma.to_f32_precision(),
                    beta: b.beta.to_f32_precision(),
                })
                .collect(),
            stats: params
                .stats
                .iter()
                .map(|s| BatchNormStats {
                    running_mean: round(&s.running_mean),
                    running_var: round(&s.running_var),
                })
                .collect(),
        };
        Self {
            version: CHECKPOINT_VERSION,
            seed: train.seed,
            encoder,
            params,
            moments: Moments {
                first: r(&moments.first),
                second: r(&moments.second),
            },
            iteration,
            train,
            loss_trace,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct ArrayEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    encoder: EncoderConfig,
    train: TrainConfig,
    seed: u64,
    iteration: u64,
    loss_trace: Vec<f64>,
    arrays: Vec<ArrayEntry>,
}

fn named_arrays(ck: &Checkpoint) -> Vec<(String, Tensor)> {
    let names = ck.params.trainable_names();
    let mut out: Vec<(String, Tensor)> = names.iter().cloned().zip(ck.params.trainable().into_iter().cloned()).collect();
    for (i, s) in ck.params.stats.iter().enumerate() {
        let n = s.running_mean.len();
        out.push((format!("block{i}.running_mean"), Tensor::new(vec![n], s.running_mean.clone()).expect("sized")));
        out.push((format!("block{i}.running_var"), Tensor::new(vec![n], s.running_var.clone()).expect("sized")));
    }
    for (n, t) in names.iter().zip(&ck.moments.first) {
        out.push((format!("adam_m.{n}"), t.clone()));
    }
    for (n, t) in names.iter().zip(&ck.moments.second) {
        out.push((format!("adam_v.{n}"), t.clone()));
    }
    out
}

pub fn encode_checkpoint(ck: &Checkpoint) -> Result<Vec<u8>, TrainError> {
    let arrays = named_arrays(ck);
    let header = Header {
        encoder: ck.encoder.clone(),
        train: ck.train.clone(),
        seed: ck.seed,
        iteration: ck.iteration,
        loss_trace: ck.loss_trace.clone(),
        arrays: arrays
            .iter()
            .map(|(name, t)| ArrayEntry {
                name: name.clone(),
                shape: t.shape().to_vec(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| TrainError::Format(e.to_string()))?;
    let floats: usize = arrays.iter().map(|(_, t)| t.len()).sum();
    let mut out = Vec::with_capacity(16 + json.len() + 4 * floats);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, t) in &arrays {
        for &x in t.data() {
            out.extend_from_slice(&(x as f32).to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], TrainError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| {
            TrainError::Format(format!(
                "truncated checkpoint: {what} needs {n} bytes at offset {}, file has {}",
                self.pos,
                self.buf.len()
            ))
        })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
}

pub fn decode_checkpoint(buf: &[u8]) -> Result<Checkpoint, TrainError> {
    let mut r = Reader { buf, pos: 0 };
    let magic = r.take(4, "magic")?;
    if magic != CHECKPOINT_MAGIC {
        return Err(TrainError::Format(format!(
            "bad magic {magic:02x?}, expected \"EMGN\""
        )));
    }
    let version = u32::from_le_bytes(r.take(4, "version")?.try_into().expect("4 bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(TrainError::Format(format!(
            "checkpoint version {version}, this build reads {CHECKPOINT_VERSION}"
        )));
    }
    let len = u64::from_le_bytes(r.take(8, "header length")?.try_into().expect("8 bytes"));
    let len = usize::try_from(len).map_err(|_| TrainError::Format("header length overflows".into()))?;
    let header: Header =
        serde_json::from_slice(r.take(len, "header")?).map_err(|e| TrainError::Format(format!("header: {e}")))?;

    let mut tensors = Vec::with_capacity(header.arrays.len());
    for a in &header.arrays {
        let n: usize = a.shape.iter().product();
        let bytes = r.take(4 * n, &a.name)?;
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect();
        tensors.push((a.name.as_str(), Tensor::new(a.shape.clone(), data).map_err(|e| TrainError::Format(e.to_string()))?));
    }
    if r.pos != buf.len() {
        return Err(TrainError::Format(format!("{} trailing bytes", buf.len() - r.pos)));
    }

    let skeleton = EncoderParams::init(&header.encoder, 0);
    let names = skeleton.trainable_names();
    let blocks = skeleton.blocks.len();
    let expected = names.len() * 3 + blocks * 2;
    if tensors.len() != expected {
        return Err(TrainError::Format(format!("{} arrays, expected {expected}", tensors.len())));
    }
    let mut it = tensors.into_iter();
    let mut next = |want: &str| -> Result<Tensor, TrainError> {
        let (name, t) = it.next().expect("count checked");
        if name != want {
            return Err(TrainError::Format(format!("array {name:?} where {want:?} expected")));
        }
        Ok(t)
    };
    let mut trainable = Vec::with_capacity(names.len());
    for n in &names {
        trainable.push(next(n)?);
    }
    let mut stats = Vec::with_capacity(blocks);
    for i in 0..blocks {
        let running_mean = next(&format!("block{i}.running_mean"))?.into_data();
        let running_var = next(&format!("block{i}.running_var"))?.into_data();
        stats.push(BatchNormStats { running_mean, running_var });
    }
    let mut first = Vec::with_capacity(names.len());
    for n in &names {
        first.push(next(&format!("adam_m.{n}"))?);
    }
    let mut second = Vec::with_capacity(names.len());
    for n in &names {
        second.push(next(&format!("adam_v.{n}"))?);
    }
    let mut tr = trainable.into_iter();
    let blocks = (0..blocks)
        .map(|_| Block {
            weight: tr.next().expect("counted"),
            bias: tr.next().expect("counted"),
            gamma: tr.next().expect("counted"),
            beta: tr.next().expect("counted"),
        })
        .collect();
    let params = EncoderParams { blocks, stats };
    params
        .check(&header.encoder)
        .map_err(|e| TrainError::Format(format!("parameters do not match the stored config: {e}")))?;
    Ok(Checkpoint {
        version,
        encoder: header.encoder,
        params,
        moments: Moments { first, second },
        iteration: header.iteration,
        seed: header.seed,
        train: header.train,
        loss_trace: header.loss_trace,
    })
}

/// Writes to a sibling temp file and renames it into place.
pub fn save_checkpoint(ck: &Checkpoint, path: &Path) -> Result<(), TrainError> {
    let bytes = encode_checkpoint(ck)?;
    let io = |e| TrainError::Io {
        path: path.to_path_buf(),
        source: e,
    };
    let mut tmp_name = path.file_name().map(|s| s.to_os_string()).unwrap_or_default();
    tmp_name.push(format!(".tmp{}", std::process::id()));
    let tmp = path.with_file_name(tmp_name);
    {
        let mut f = fs::File::create(&tmp).map_err(io)?;
        f.write_all(&bytes).map_err(io)?;
        f.sync_all().map_err(io)?;
    }
    fs::rename(&tmp, path).map_err(io)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, TrainError> {
    let bytes = fs::read(path).map_err(|e| TrainError::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    decode_checkpoint(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let enc = EncoderConfig {
            input_dim: 5,
            hidden_dims: [4, 3],
            output_dim: 2,
            ..Default::default()
        };
        let mut params = EncoderParams::init(&enc, 3);
        params.stats[1].running_mean[0] = 0.123456789;
        let mut moments = Moments::zeros_like(params.trainable());
        moments.second[4].data_mut()[0] = 1.0 / 3.0;
        Checkpoint::new(enc, &params, &moments, 17, TrainConfig::default(), vec![2.5, 1.25])
    }

    #[test]
    fn round_trip_preserves_everything() {
        let ck = sample();
        assert_eq!(ck.params.stats[1].running_mean[0], 0.123_456_79_f32 as f64);
        let back = decode_checkpoint(&encode_checkpoint(&ck).unwrap()).unwrap();
        assert_eq!(back, ck);
    }

    #[test]
    fn infinite_threshold_survives() {
        let mut ck = sample();
        ck.train.loss.threshold = f64::INFINITY;
        let back = decode_checkpoint(&encode_checkpoint(&ck).unwrap()).unwrap();
        assert_eq!(back.train.loss.threshold, f64::INFINITY);
    }

    #[test]
    fn truncation_is_a_format_error() {
        let bytes = encode_checkpoint(&sample()).unwrap();
        for cut in [0, 3, 10, 20, bytes.len() - 1] {
            assert!(matches!(decode_checkpoint(&bytes[..cut]), Err(TrainError::Format(_))), "cut {cut}");
        }
    }

    #[test]
    fn foreign_magic_names_expected() {
        let mut bytes = encode_checkpoint(&sample()).unwrap();
        bytes[..4].copy_from_slice(b"EMSB");
        let err = decode_checkpoint(&bytes).unwrap_err();
        assert!(err.to_string().contains("EMGN"), "{err}");
    }

    #[test]
    fn version_mismatch_rejected() {
        let mut bytes = encode_checkpoint(&sample()).unwrap();
        bytes[4..8].copy_from_slice(&9u32.to_le_bytes());
        assert!(matches!(decode_checkpoint(&bytes), Err(TrainError::Format(_))));
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.emgn");
        let ck = sample();
        save_checkpoint(&ck, &path).unwrap();
        assert_eq!(load_checkpoint(&path).unwrap(), ck);
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}
