//! Binary parameter checkpoints.
//!
//! ```text
//! offset  size  content
//! 0       4     magic "PLMK"
//! 4       4     format version, u32 little-endian (currently 1)
//! 8       8     header length H, u64 little-endian
//! 16      H     UTF-8 JSON header: format_version, encoder config (incl. seed),
//!               head shapes, and a free-form `extra` object
//! 16+H    8·N   N little-endian f64 values: encoder tensors, then head tensors,
//!               each in declared order
//! ```
//!
//! Encoder tensor order: token embedding (vocab × hidden), position embedding
//! ((max_position + 1) × hidden), then per layer: ln1 gain, ln1 bias, Wq, bq,
//! Wk, bk, Wv, bv, Wo, bo, ln2 gain, ln2 bias, W1, b1, W2, b2. Head order:
//! NER, stage-1, relation, object-type; each present head stores W1, b1, W2,
//! b2. Matrices are row-major with shape (inputs × outputs).

use std::io::{self, Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{init_params, EncoderConfig, EncoderParams, ParamTensors};
use crate::heads::{Ffn, HeadParams, NerMode};

pub const MAGIC: &[u8; 4] = b"PLMK";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("not a checkpoint (bad magic)")]
    Magic,
    #[error("unsupported format version {0}")]
    Version(u32),
    #[error("header: {0}")]
    Header(#[from] serde_json::Error),
    #[error("payload: {0}")]
    Payload(String),
}

type Shape = (usize, usize, usize);

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    encoder: EncoderConfig,
    seed: u64,
    hidden_dim: usize,
    ner_mode: NerMode,
    ner: Option<Shape>,
    stage1: Option<Shape>,
    re: Option<Shape>,
    aux: Option<Shape>,
    num_values: usize,
    extra: serde_json::Value,
}

fn shape(f: &Option<Ffn>) -> Option<Shape> {
    f.as_ref().map(|f| (f.input_dim(), f.w1.cols, f.output_dim()))
}

pub struct Checkpoint {
    pub encoder: EncoderParams,
    pub heads: HeadParams,
    pub extra: serde_json::Value,
}

pub fn write_checkpoint(
    mut w: impl Write,
    encoder: &EncoderParams,
    heads: &HeadParams,
    extra: &serde_json::Value,
) -> io::Result<()> {
    let header = Header {
        format_version: FORMAT_VERSION,
        encoder: encoder.config,
        seed: encoder.config.seed,
        hidden_dim: heads.hidden_dim,
        ner_mode: heads.ner_mode,
        ner: shape(&heads.ner),
        stage1: shape(&heads.stage1),
        re: shape(&heads.re),
        aux: shape(&heads.aux),
        num_values: encoder.num_params() + heads.num_params(),
        extra: extra.clone(),
    };
    let json = serde_json::to_vec(&header).map_err(io::Error::other)?;
    w.write_all(MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&(json.len() as u64).to_le_bytes())?;
    w.write_all(&json)?;
    let mut buf = Vec::with_capacity(header.num_values * 8);
    for t in encoder.tensors().into_iter().chain(heads.tensors()) {
        for v in t {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    w.write_all(&buf)?;
    w.flush()
}

pub fn read_checkpoint(mut r: impl Read) -> Result<Checkpoint, CheckpointError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(CheckpointError::Magic);
    }
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b4)?;
    let version = u32::from_le_bytes(b4);
    if version != FORMAT_VERSION {
        return Err(CheckpointError::Version(version));
    }
    let mut b8 = [0u8; 8];
    r.read_exact(&mut b8)?;
    let len = u64::from_le_bytes(b8) as usize;
    let mut json = vec![0u8; len];
    r.read_exact(&mut json)?;
    let header: Header = serde_json::from_slice(&json)?;

    let mut encoder = init_params(&header.encoder).map_err(|e| CheckpointError::Payload(e.to_string()))?;
    let mk = |s: Option<Shape>| s.map(|(i, h, o)| Ffn::zeros(i, h, o));
    let mut heads = HeadParams {
        hidden_dim: header.hidden_dim,
        ner_mode: header.ner_mode,
        ner: mk(header.ner),
        stage1: mk(header.stage1),
        re: mk(header.re),
        aux: mk(header.aux),
    };
    let expected = encoder.num_params() + heads.num_params();
    if expected != header.num_values {
        return Err(CheckpointError::Payload(format!(
            "header declares {} values, shapes imply {expected}",
            header.num_values
        )));
    }
    let mut payload = Vec::with_capacity(expected * 8);
    r.read_to_end(&mut payload)?;
    if payload.len() != expected * 8 {
        return Err(CheckpointError::Payload(format!("expected {} bytes, found {}", expected * 8, payload.len())));
    }
    let mut values = payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
    for t in encoder.tensors_mut().into_iter().chain(heads.tensors_mut()) {
        for v in t.iter_mut() {
            *v = values.next().expect("length checked");
        }
    }
    Ok(Checkpoint { encoder, heads, extra: header.extra })
}
