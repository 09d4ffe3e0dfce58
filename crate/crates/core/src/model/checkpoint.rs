//! Binary checkpoints: an 8-byte magic, `u32` version, `u64` tensor count,
//! then per tensor `u64` rows, `u64` cols and row-major `f64` data, all
//! little-endian. A JSON sidecar (`<path>.json`) records names, shapes and
//! the training configuration.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Dense, ModelConfig, ModelParams};
use crate::error::{FlowError, Result};
use crate::matrix::Matrix;

const MAGIC: &[u8; 8] = b"FLOWGNCK";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub schema: u32,
    pub names: Vec<String>,
    pub shapes: Vec<(usize, usize)>,
    pub config: ModelConfig,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub fn save(path: &Path, params: &ModelParams, config: &ModelConfig) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    out.write_all(MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    let tensors = params.tensors();
    out.write_all(&(tensors.len() as u64).to_le_bytes())?;
    for (t, (rows, cols)) in tensors.iter().zip(params.tensor_shapes()) {
        out.write_all(&(rows as u64).to_le_bytes())?;
        out.write_all(&(cols as u64).to_le_bytes())?;
        for x in t.iter() {
            out.write_all(&x.to_le_bytes())?;
        }
    }
    out.flush()?;
    let sidecar = Sidecar {
        schema: 1,
        names: params.tensor_names(),
        shapes: params.tensor_shapes(),
        config: config.clone(),
    };
    serde_json::to_writer_pretty(File::create(sidecar_path(path))?, &sidecar)?;
    Ok(())
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub fn load(path: &Path) -> Result<(ModelParams, Sidecar)> {
    let bad = |message: String| FlowError::Format {
        path: path.to_path_buf(),
        message,
    };
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(bad("not a checkpoint file".into()));
    }
    let mut v = [0u8; 4];
    r.read_exact(&mut v)?;
    let version = u32::from_le_bytes(v);
    if version != VERSION {
        return Err(bad(format!("unsupported checkpoint version {version}")));
    }
    let count = read_u64(&mut r)? as usize;
    if count < 4 || count % 2 != 0 {
        return Err(bad(format!("{count} tensors cannot form a model")));
    }
    let mut mats = Vec::with_capacity(count);
    for _ in 0..count {
        let rows = read_u64(&mut r)? as usize;
        let cols = read_u64(&mut r)? as usize;
        let mut data = vec![0.0; rows * cols];
        let mut b = [0u8; 8];
        for x in data.iter_mut() {
            r.read_exact(&mut b)?;
            *x = f64::from_le_bytes(b);
        }
        mats.push(Matrix::from_vec(rows, cols, data)?);
    }
    let mut denses: Vec<Dense> = mats
        .chunks(2)
        .map(|pair| Dense {
            weight: pair[0].clone(),
            bias: pair[1].as_slice().to_vec(),
        })
        .collect();
    let head = denses.pop().expect("count checked");
    let params = ModelParams { layers: denses, head };
    let sidecar: Sidecar = serde_json::from_reader(File::open(sidecar_path(path)).map_err(|e| {
        FlowError::Format {
            path: sidecar_path(path),
            message: e.to_string(),
        }
    })?)?;
    if sidecar.shapes != params.tensor_shapes() {
        return Err(bad("sidecar shapes disagree with tensor data".into()));
    }
    Ok((params, sidecar))
}
