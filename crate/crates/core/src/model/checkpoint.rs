//! Binary parameter checkpoint.
//!
//! Layout, little-endian: `SEDM`, u32 version, u32 tensor count, then per
//! tensor a length-prefixed name, u32 rank, u32 dims, f32 values. The input
//! statistics travel as `norm.mean` and `norm.std`.

use std::io::{Read, Write};

use ndarray::Array2;

use super::{InputNorm, Model, ModelConfig, ModelParams};
use crate::binio;
use crate::error::{Result, SedError};

const MAGIC: &[u8; 4] = b"SEDM";
const VERSION: u32 = 1;
const MAX_RANK: u32 = 8;

fn dim32(n: usize) -> Result<u32> {
    u32::try_from(n).map_err(|_| SedError::Format(format!("dimension {n} exceeds u32")))
}

pub fn write_checkpoint(model: &Model, sink: &mut impl Write) -> Result<()> {
    let mut tensors = model.params.tensors();
    tensors.push((
        "norm.mean".into(),
        model.norm.mean.shape().to_vec(),
        model.norm.mean.as_slice().expect("standard layout"),
    ));
    tensors.push((
        "norm.std".into(),
        model.norm.std.shape().to_vec(),
        model.norm.std.as_slice().expect("standard layout"),
    ));
    sink.write_all(MAGIC)?;
    binio::write_u32(sink, VERSION)?;
    binio::write_u32(sink, dim32(tensors.len())?)?;
    for (name, shape, values) in tensors {
        binio::write_str(sink, &name)?;
        binio::write_u32(sink, dim32(shape.len())?)?;
        for d in shape {
            binio::write_u32(sink, dim32(d)?)?;
        }
        binio::write_f32s(sink, values.iter().map(|&v| v as f32))?;
    }
    Ok(())
}

/// Reads a checkpoint written for `config`; every tensor must be present with
/// the shape the config implies.
pub fn read_checkpoint(source: &mut impl Read, config: &ModelConfig) -> Result<Model> {
    config.validate()?;
    binio::expect_magic(source, MAGIC, VERSION)?;
    let count = binio::read_u32(source)? as usize;
    let mut params = ModelParams::zeros(config);
    let expected: Vec<(String, Vec<usize>)> = params.tensors().into_iter().map(|(n, s, _)| (n, s)).collect();
    let norm_shape = vec![config.in_channels, config.n_bands];
    if count != expected.len() + 2 {
        return Err(SedError::Format(format!(
            "checkpoint has {count} tensors, config implies {}",
            expected.len() + 2
        )));
    }
    let mut flat = Vec::with_capacity(params.len());
    let mut norm = InputNorm::identity(config.in_channels, config.n_bands);
    for i in 0..count {
        let name = binio::read_str(source)?;
        let rank = binio::read_u32(source)?;
        if rank > MAX_RANK {
            return Err(SedError::Format(format!("tensor {name} has rank {rank}")));
        }
        let dims = (0..rank)
            .map(|_| binio::read_u32(source))
            .collect::<Result<Vec<u32>>>()?;
        let n = binio::checked_elements(&dims)?;
        let shape: Vec<usize> = dims.iter().map(|&d| d as usize).collect();
        let (want_name, want_shape) = match expected.get(i) {
            Some((n, s)) => (n.as_str(), s),
            None if i == expected.len() => ("norm.mean", &norm_shape),
            None => ("norm.std", &norm_shape),
        };
        if name != want_name || shape != *want_shape {
            return Err(SedError::Format(format!(
                "tensor {i} is {name} {shape:?}, expected {want_name} {want_shape:?}"
            )));
        }
        let values = binio::read_f32s(source, n)?;
        if values.iter().any(|v| !v.is_finite()) {
            return Err(SedError::NonFinite(format!("checkpoint tensor {name}")));
        }
        let values = values.into_iter().map(f64::from);
        if i < expected.len() {
            flat.extend(values);
        } else {
            let m = Array2::from_shape_vec((config.in_channels, config.n_bands), values.collect())
                .map_err(|e| SedError::Format(e.to_string()))?;
            if i == expected.len() {
                norm.mean = m;
            } else {
                norm.std = m;
            }
        }
    }
    params.unflatten(&flat);
    Ok(Model {
        config: config.clone(),
        norm,
        params,
    })
}
