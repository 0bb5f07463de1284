//! Versioned checkpoint container.
//!
//! ```text
//! offset  size  content
//! 0       8     magic b"SYMWCKPT"
//! 8       4     container version (u32 LE)
//! 12      8     header length H (u64 LE)
//! 20      H     UTF-8 JSON header (see `Header`)
//! 20+H    ...   sections listed in the header, each `len` f32 LE values,
//!               in order: params, then optimizer first and second moments
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::params::{Layout, Params, TensorSpec};
use super::{Scalar, Transformer};
use crate::error::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"SYMWCKPT";

/// AdamW moments and step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub step: u64,
    pub first_moment: Vec<f32>,
    pub second_moment: Vec<f32>,
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub params: Vec<f32>,
    pub optimizer: Option<OptimizerState>,
    pub epoch: usize,
    /// Free-form training state (scheduler, hyperparameters, RNG position).
    pub training: serde_json::Value,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    epoch: usize,
    dtype: String,
    tensors: Vec<TensorSpec>,
    sections: Vec<Section>,
    optimizer_step: Option<u64>,
    training: serde_json::Value,
}

#[derive(Serialize, Deserialize)]
struct Section {
    name: String,
    len: usize,
}

impl Checkpoint {
    pub fn from_model<F: Scalar>(model: &Transformer<F>, epoch: usize) -> Self {
        Self {
            config: *model.config(),
            params: model
                .params()
                .as_slice()
                .iter()
                .map(|x| x.to_f32().unwrap())
                .collect(),
            optimizer: None,
            epoch,
            training: serde_json::Value::Null,
        }
    }

    pub fn model<F: Scalar>(&self) -> Result<Transformer<F>> {
        let layout = Arc::new(Layout::new(&self.config));
        let params = Params::<f32>::from_vec(layout, self.params.clone()).ok_or_else(|| {
            Error::Shape(format!(
                "checkpoint holds {} values, config needs {}",
                self.params.len(),
                Layout::new(&self.config).total()
            ))
        })?;
        Transformer::from_params(self.config, params.cast())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let layout = Layout::new(&self.config);
        let mut sections = vec![Section {
            name: "params".into(),
            len: self.params.len(),
        }];
        if let Some(opt) = &self.optimizer {
            sections.push(Section {
                name: "adam_m".into(),
                len: opt.first_moment.len(),
            });
            sections.push(Section {
                name: "adam_v".into(),
                len: opt.second_moment.len(),
            });
        }
        let header = Header {
            config: self.config,
            epoch: self.epoch,
            dtype: "f32".into(),
            tensors: layout.tensors().to_vec(),
            sections,
            optimizer_step: self.optimizer.as_ref().map(|o| o.step),
            training: self.training.clone(),
        };
        let json = serde_json::to_vec(&header)?;
        let tmp = path.with_extension("tmp");
        {
            let mut w = BufWriter::new(File::create(&tmp)?);
            w.write_all(MAGIC)?;
            w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
            w.write_all(&(json.len() as u64).to_le_bytes())?;
            w.write_all(&json)?;
            write_f32s(&mut w, &self.params)?;
            if let Some(opt) = &self.optimizer {
                write_f32s(&mut w, &opt.first_moment)?;
                write_f32s(&mut w, &opt.second_moment)?;
            }
            w.flush()?;
        }
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let err = |reason: String| Error::Checkpoint {
            path: path.to_path_buf(),
            reason,
        };
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(err("not a checkpoint file".into()));
        }
        let mut b4 = [0u8; 4];
        r.read_exact(&mut b4)?;
        let version = u32::from_le_bytes(b4);
        if version != CHECKPOINT_VERSION {
            return Err(err(format!(
                "container version {version} (expected {CHECKPOINT_VERSION})"
            )));
        }
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b8)?;
        let mut json = vec![0u8; u64::from_le_bytes(b8) as usize];
        r.read_exact(&mut json)?;
        let header: Header = serde_json::from_slice(&json)?;
        if header.dtype != "f32" {
            return Err(err(format!("unsupported dtype {}", header.dtype)));
        }
        let layout = Layout::new(&header.config);
        if layout.tensors() != header.tensors.as_slice() {
            return Err(err("tensor layout does not match the model config".into()));
        }
        let mut params = None;
        let mut m = None;
        let mut v = None;
        for s in &header.sections {
            let data = read_f32s(&mut r, s.len).map_err(|e| err(format!("section {}: {e}", s.name)))?;
            match s.name.as_str() {
                "params" => params = Some(data),
                "adam_m" => m = Some(data),
                "adam_v" => v = Some(data),
                other => return Err(err(format!("unknown section {other}"))),
            }
        }
        let params = params.ok_or_else(|| err("missing params section".into()))?;
        if params.len() != layout.total() {
            return Err(err(format!(
                "{} parameters, layout needs {}",
                params.len(),
                layout.total()
            )));
        }
        let optimizer = match (header.optimizer_step, m, v) {
            (Some(step), Some(first_moment), Some(second_moment)) => Some(OptimizerState {
                step,
                first_moment,
                second_moment,
            }),
            (None, None, None) => None,
            _ => return Err(err("incomplete optimizer state".into())),
        };
        Ok(Self {
            config: header.config,
            params,
            optimizer,
            epoch: header.epoch,
            training: header.training,
        })
    }
}

fn write_f32s<W: Write>(w: &mut W, values: &[f32]) -> std::io::Result<()> {
    let mut buf = Vec::with_capacity(values.len() * 4);
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)
}

fn read_f32s<R: Read>(r: &mut R, len: usize) -> std::io::Result<Vec<f32>> {
    let mut buf = vec![0u8; len * 4];
    r.read_exact(&mut buf)?;
    Ok(buf
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokenizer::TokenScheme;

    #[test]
    fn save_load_round_trip() {
        let cfg = ModelConfig::new(TokenScheme::adjacent(4).unwrap(), 8, 2, 1);
        let model: Transformer<f32> = Transformer::new(cfg, 5).unwrap();
        let mut ck = Checkpoint::from_model(&model, 7);
        ck.optimizer = Some(OptimizerState {
            step: 12,
            first_moment: vec![0.5; ck.params.len()],
            second_moment: vec![0.25; ck.params.len()],
        });
        ck.training = serde_json::json!({"lr": 0.001});
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        ck.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back.params, ck.params);
        assert_eq!(back.optimizer, ck.optimizer);
        assert_eq!(back.epoch, 7);
        assert_eq!(back.training["lr"], 0.001);
        let restored: Transformer<f32> = back.model().unwrap();
        assert_eq!(restored.params().as_slice(), model.params().as_slice());
    }

    #[test]
    fn rejects_garbage() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.ckpt");
        std::fs::write(&path, b"definitely not a checkpoint").unwrap();
        assert!(Checkpoint::load(&path).is_err());
    }
}
