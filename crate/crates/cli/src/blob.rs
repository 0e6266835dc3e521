//! Raw tensor blobs: little-endian f32 data with a JSON sidecar at
//! `<path>.json` describing shape, dtype and layout.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use swinfree::numerics::Tensor;
use swinfree::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BlobSidecar {
    pub shape: Vec<usize>,
    pub dtype: String,
    pub layout: String,
}

pub fn sidecar_path(blob: &Path) -> PathBuf {
    let mut os = blob.as_os_str().to_os_string();
    os.push(".json");
    os.into()
}

pub fn load(path: &Path) -> Result<(Tensor<f32>, BlobSidecar)> {
    let sidecar: BlobSidecar = serde_json::from_slice(&std::fs::read(sidecar_path(path))?)
        .map_err(|e| Error::Format(format!("blob sidecar parse: {e}")))?;
    if sidecar.dtype != "f32" {
        return Err(Error::Format(format!(
            "unsupported blob dtype {:?}",
            sidecar.dtype
        )));
    }
    let bytes = std::fs::read(path)?;
    let numel: usize = sidecar.shape.iter().product();
    if bytes.len() != 4 * numel {
        return Err(Error::Format(format!(
            "blob is {} bytes, sidecar shape {:?} needs {}",
            bytes.len(),
            sidecar.shape,
            4 * numel
        )));
    }
    let data: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    Ok((Tensor::new(&sidecar.shape, data)?, sidecar))
}

pub fn save(path: &Path, tensor: &Tensor<f32>, layout: &str) -> Result<()> {
    let mut bytes = Vec::with_capacity(tensor.len() * 4);
    for &v in tensor.data() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    std::fs::write(path, bytes)?;
    let sidecar = BlobSidecar {
        shape: tensor.shape().to_vec(),
        dtype: "f32".into(),
        layout: layout.into(),
    };
    let json = serde_json::to_vec_pretty(&sidecar)
        .map_err(|e| Error::Format(format!("blob sidecar encode: {e}")))?;
    std::fs::write(sidecar_path(path), json)?;
    Ok(())
}
