//! Model checkpoint: magic `AFRG`, version `u32`, a length-prefixed JSON
//! header echoing the config and history, then every parameter matrix and
//! optimizer moment as `rows u64, cols u64, values`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{GanConfig, GanModel, LossRecord};
use crate::autodiff::{AdamState, Dense, MlpParams};
use crate::data::{encode_matrix_body, Reader};
use crate::error::{AfrError, Result};
use crate::matrix::Matrix;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"AFRG";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    config: GanConfig,
    iteration: u64,
    generator_steps: u64,
    discriminator_steps: u64,
    history: Vec<LossRecord>,
}

fn push_all<'a>(out: &mut Vec<u8>, ms: impl IntoIterator<Item = &'a Matrix>) {
    for m in ms {
        encode_matrix_body(m, out);
    }
}

pub fn encode_checkpoint(model: &GanModel) -> Vec<u8> {
    let header = Header {
        config: model.config.clone(),
        iteration: model.iteration,
        generator_steps: model.generator_adam.step_count(),
        discriminator_steps: model.discriminator_adam.step_count(),
        history: model.history.clone(),
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    push_all(&mut out, model.generator.tensors());
    push_all(&mut out, model.discriminator.tensors());
    for adam in [&model.generator_adam, &model.discriminator_adam] {
        let (m, v) = adam.moments();
        push_all(&mut out, m);
        push_all(&mut out, v);
    }
    out
}

fn read_mlp(r: &mut Reader<'_>) -> Result<MlpParams> {
    let mut layer = || -> Result<Dense> {
        Ok(Dense {
            weight: r.matrix_body()?,
            bias: r.matrix_body()?,
        })
    };
    MlpParams::from_layers([layer()?, layer()?, layer()?])
}

fn read_moments(r: &mut Reader<'_>) -> Result<Vec<Matrix>> {
    (0..6).map(|_| r.matrix_body()).collect()
}

pub fn decode_checkpoint(bytes: &[u8], path: &Path) -> Result<GanModel> {
    let mut r = Reader::new(bytes, path);
    if r.take(4)? != CHECKPOINT_MAGIC {
        return Err(AfrError::format(path, "bad magic, expected AFRG"));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(AfrError::format(path, format!("unsupported version {version}")));
    }
    let len = r.u64()? as usize;
    let header: Header = serde_json::from_slice(r.take(len)?).map_err(|e| AfrError::Json {
        path: path.to_path_buf(),
        source: e,
    })?;
    let bad = |e: AfrError| AfrError::format(path, e.to_string());
    let generator = read_mlp(&mut r).map_err(bad)?;
    let discriminator = read_mlp(&mut r).map_err(bad)?;
    let adam = header.config.adam;
    let (gm, gv) = (read_moments(&mut r)?, read_moments(&mut r)?);
    let (dm, dv) = (read_moments(&mut r)?, read_moments(&mut r)?);
    if r.remaining() != 0 {
        return Err(AfrError::format(path, format!("{} trailing bytes", r.remaining())));
    }
    let noise_dim = header
        .config
        .noise_dim
        .ok_or_else(|| AfrError::format(path, "config echo lacks a resolved noise dim"))?;
    if generator.input_dim() <= noise_dim
        || discriminator.output_dim() != 1
        || discriminator.input_dim() != generator.output_dim() + generator.input_dim() - noise_dim
    {
        return Err(AfrError::format(path, "generator and discriminator shapes disagree"));
    }
    Ok(GanModel {
        generator_adam: AdamState::from_parts(adam, gm, gv, header.generator_steps).map_err(bad)?,
        discriminator_adam: AdamState::from_parts(adam, dm, dv, header.discriminator_steps).map_err(bad)?,
        config: header.config,
        generator,
        discriminator,
        iteration: header.iteration,
        history: header.history,
    })
}

pub fn save_checkpoint(path: impl AsRef<Path>, model: &GanModel) -> Result<()> {
    crate::data::write_bytes(path.as_ref(), &encode_checkpoint(model))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<GanModel> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| AfrError::io(path, e))?;
    decode_checkpoint(&bytes, path)
}
