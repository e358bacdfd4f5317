//! Parameter checkpoints as JSON.
//!
//! Parameters are stored as one hex string: 16 digits per value, the
//! big-endian IEEE-754 bits, so loading is bit-exact (NaNs included).

use std::fs;
use std::path::Path;

use debias_core::model::{Mlp, MlpSpec, Parameters};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const FORMAT: &str = "debias-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub spec: MlpSpec,
    pub num_params: usize,
    pub params: String,
}

pub fn encode_params(flat: &[f64]) -> String {
    let mut bytes = Vec::with_capacity(flat.len() * 8);
    for v in flat {
        bytes.extend_from_slice(&v.to_bits().to_be_bytes());
    }
    hex::encode(bytes)
}

pub fn decode_params(s: &str) -> Option<Vec<f64>> {
    let bytes = hex::decode(s).ok()?;
    if bytes.len() % 8 != 0 {
        return None;
    }
    Some(bytes.chunks_exact(8).map(|c| f64::from_bits(u64::from_be_bytes(c.try_into().unwrap()))).collect())
}

impl Checkpoint {
    pub fn new(spec: &MlpSpec, params: &Parameters) -> Self {
        Checkpoint {
            format: FORMAT.into(),
            version: VERSION,
            spec: spec.clone(),
            num_params: params.len(),
            params: encode_params(params.flat()),
        }
    }

    /// Rebuilds the model and its parameters, checking the layout.
    pub fn restore(&self, path: &Path) -> Result<(Mlp, Parameters)> {
        if self.format != FORMAT || self.version != VERSION {
            return Err(Error::format(path, format!("unsupported checkpoint {} v{}", self.format, self.version)));
        }
        let model = Mlp::new(self.spec.clone()).map_err(|e| Error::format(path, e.to_string()))?;
        let flat = decode_params(&self.params).ok_or_else(|| Error::format(path, "malformed parameter hex"))?;
        if flat.len() != self.num_params || flat.len() != model.layout().len() {
            return Err(Error::format(
                path,
                format!("{} parameters stored, model needs {}", flat.len(), model.layout().len()),
            ));
        }
        let params = Parameters::from_flat(model.layout().clone(), flat).map_err(|e| Error::format(path, e.to_string()))?;
        Ok((model, params))
    }
}

pub fn save_checkpoint(path: &Path, spec: &MlpSpec, params: &Parameters) -> Result<()> {
    let text = serde_json::to_string(&Checkpoint::new(spec, params)).map_err(|e| Error::json(path, e))?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<(Mlp, Parameters)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let ck: Checkpoint = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
    ck.restore(path)
}
