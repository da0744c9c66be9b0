//! `FLW1` model checkpoints, little-endian:
//!
//! ```text
//! b"FLW1" | u32 version | u32 header_len | header (key = value text)
//! | u32 n_params | FLT1 tensor × n_params            (layer order)
//! | u8 has_optimizer | [u64 step | FLT1 tensor × n_params]
//! ```
//!
//! The header holds the model config plus the prior; loading rebuilds the
//! layer stack from it and then copies the parameter tensors in.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::OptimizerState;
use crate::config::KeyValues;
use crate::error::{Error, Result};
use crate::flow::{build_model, FlowModel, ModelConfig};
use crate::likelihood::Prior;
use crate::tensor::{read_tensor_from, write_tensor_to, RngState, Tensor};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"FLW1";
pub const CHECKPOINT_VERSION: u32 = 1;

const MAX_HEADER: u32 = 1 << 20;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: FlowModel,
    pub prior: Prior,
    pub optimizer: Option<OptimizerState>,
}

fn prior_to_kv(prior: &Prior, kv: &mut KeyValues) {
    let (family, scale) = match *prior {
        Prior::Gaussian { sigma } => ("gaussian", sigma),
        Prior::Logistic { scale } => ("logistic", scale),
        Prior::Laplace { scale } => ("laplace", scale),
    };
    kv.set("prior", family);
    kv.set("prior_scale", scale);
}

fn prior_from_kv(kv: &KeyValues) -> Result<Prior> {
    let scale: f64 = kv.get_or("prior_scale", 1.0)?;
    let prior = match kv.get_str("prior").unwrap_or("gaussian") {
        "gaussian" => Prior::Gaussian { sigma: scale },
        "logistic" => Prior::Logistic { scale },
        "laplace" => Prior::Laplace { scale },
        other => return Err(Error::InvalidConfig(format!("unknown prior {other:?}"))),
    };
    prior.validated()
}

fn corrupt(e: Error) -> Error {
    match e {
        Error::TruncatedFile(what) => Error::CorruptCheckpoint(format!("truncated {what}")),
        Error::BadMagic { found, .. } => Error::CorruptCheckpoint(format!("bad tensor magic {found:#010x}")),
        Error::Io(io) if io.kind() == std::io::ErrorKind::UnexpectedEof => {
            Error::CorruptCheckpoint("unexpected end of file".into())
        }
        Error::InvalidConfig(m) | Error::ShapeMismatch { expected: m, .. } => Error::CorruptCheckpoint(m),
        other => other,
    }
}

fn read_bytes<R: Read>(r: &mut R, n: usize, what: &str) -> Result<Vec<u8>> {
    let mut buf = vec![0u8; n];
    r.read_exact(&mut buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            Error::CorruptCheckpoint(format!("truncated {what}"))
        } else {
            Error::Io(e)
        }
    })?;
    Ok(buf)
}

fn read_u32<R: Read>(r: &mut R, what: &str) -> Result<u32> {
    Ok(u32::from_le_bytes(read_bytes(r, 4, what)?.try_into().expect("4 bytes")))
}

pub fn write_checkpoint<W: Write>(w: &mut W, ckpt: &Checkpoint) -> Result<()> {
    let mut kv = ckpt.model.config().to_kv();
    prior_to_kv(&ckpt.prior, &mut kv);
    let header = kv.to_string();
    w.write_all(&CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    w.write_all(&(header.len() as u32).to_le_bytes())?;
    w.write_all(header.as_bytes())?;
    let shapes = ckpt.model.param_shapes();
    w.write_all(&(shapes.len() as u32).to_le_bytes())?;
    for (shape, p) in shapes.iter().zip(ckpt.model.params()) {
        write_tensor_to(w, &Tensor::new(shape.clone(), p.to_vec())?)?;
    }
    match &ckpt.optimizer {
        None => w.write_all(&[0u8])?,
        Some(opt) => {
            w.write_all(&[1u8])?;
            w.write_all(&opt.step.to_le_bytes())?;
            for (shape, v) in shapes.iter().zip(&opt.accumulators) {
                write_tensor_to(w, &Tensor::new(shape.clone(), v.clone())?)?;
            }
        }
    }
    Ok(())
}

fn read_param_tensors<R: Read>(r: &mut R, shapes: &[Vec<usize>]) -> Result<Vec<Vec<f64>>> {
    shapes
        .iter()
        .enumerate()
        .map(|(i, shape)| {
            let t = read_tensor_from(r).map_err(corrupt)?;
            if t.shape() != shape.as_slice() {
                return Err(Error::CorruptCheckpoint(format!(
                    "parameter {i}: shape {:?}, expected {shape:?}",
                    t.shape()
                )));
            }
            Ok(t.into_data())
        })
        .collect()
}

pub fn read_checkpoint<R: Read>(r: &mut R) -> Result<Checkpoint> {
    let magic = read_bytes(r, 4, "magic")?;
    if magic != CHECKPOINT_MAGIC {
        return Err(Error::CorruptCheckpoint(format!("bad magic {magic:?}")));
    }
    let version = read_u32(r, "version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let header_len = read_u32(r, "header length")?;
    if header_len > MAX_HEADER {
        return Err(Error::CorruptCheckpoint(format!("header length {header_len}")));
    }
    let header = String::from_utf8(read_bytes(r, header_len as usize, "header")?)
        .map_err(|_| Error::CorruptCheckpoint("header is not UTF-8".into()))?;
    let kv = KeyValues::parse(&header).map_err(corrupt)?;
    let mut allowed = crate::flow::MODEL_KEYS.to_vec();
    allowed.extend(["prior", "prior_scale"]);
    kv.reject_unknown(&allowed).map_err(corrupt)?;
    let config = ModelConfig::from_kv(&kv).map_err(corrupt)?;
    let prior = prior_from_kv(&kv).map_err(corrupt)?;
    let mut model = build_model(&config, &mut RngState::new(0)).map_err(corrupt)?;
    let shapes = model.param_shapes();
    let n = read_u32(r, "parameter count")?;
    if n as usize != shapes.len() {
        return Err(Error::CorruptCheckpoint(format!(
            "{n} parameter tensors, model needs {}",
            shapes.len()
        )));
    }
    let params = read_param_tensors(r, &shapes)?;
    for (dst, src) in model.params_mut().into_iter().zip(&params) {
        dst.copy_from_slice(src);
    }
    let optimizer = match read_bytes(r, 1, "optimizer flag")?[0] {
        0 => None,
        1 => {
            let step = u64::from_le_bytes(read_bytes(r, 8, "optimizer step")?.try_into().expect("8 bytes"));
            let accumulators = read_param_tensors(r, &shapes)?;
            Some(OptimizerState { accumulators, step })
        }
        f => return Err(Error::CorruptCheckpoint(format!("optimizer flag {f}"))),
    };
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(Error::CorruptCheckpoint("trailing bytes".into()));
    }
    Ok(Checkpoint {
        model,
        prior,
        optimizer,
    })
}

pub fn save_checkpoint(path: impl AsRef<Path>, ckpt: &Checkpoint) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_checkpoint(&mut w, ckpt)?;
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    read_checkpoint(&mut BufReader::new(File::open(path)?))
}
