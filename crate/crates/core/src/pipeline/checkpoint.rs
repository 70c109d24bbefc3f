//! Checkpoint directory: `manifest.json` with the full config plus
//! `params.bin` holding every tensor in parameter order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::{read_tensors, write_tensors, ParamSet};

use super::config::PipelineConfig;
use super::model::{ModelParams, Pipeline};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Manifest {
    schema: u32,
    config_fingerprint: String,
    tensors: usize,
    scalars: usize,
    config: PipelineConfig,
}

pub fn save_checkpoint(dir: &Path, config: &PipelineConfig, params: &ModelParams) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut w = BufWriter::new(File::create(dir.join("params.bin"))?);
    write_tensors(&mut w, &params.tensors())?;
    w.flush()?;
    let manifest = Manifest {
        schema: 1,
        config_fingerprint: config.fingerprint(),
        tensors: params.tensors().len(),
        scalars: params.num_scalars(),
        config: config.clone(),
    };
    let mut m = BufWriter::new(File::create(dir.join("manifest.json"))?);
    serde_json::to_writer_pretty(&mut m, &manifest)?;
    m.write_all(b"\n")?;
    m.flush()?;
    Ok(())
}

/// Rebuild the pipeline from the stored config and load the weights.
pub fn load_checkpoint(dir: &Path) -> Result<(Pipeline, ModelParams)> {
    let manifest: Manifest = serde_json::from_reader(BufReader::new(File::open(dir.join("manifest.json"))?))?;
    if manifest.schema != 1 {
        return Err(Error::Format(format!(
            "unsupported checkpoint schema {}",
            manifest.schema
        )));
    }
    let pipe = Pipeline::new(manifest.config)?;
    let mut params = pipe.init_params(0)?;
    let tensors = read_tensors(&mut BufReader::new(File::open(dir.join("params.bin"))?))?;
    params.load_tensors(&tensors)?;
    Ok((pipe, params))
}
