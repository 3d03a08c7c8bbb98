//! Single-file tensor archives (safetensors layout) with one JSON header
//! stored under a fixed metadata key.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use safetensors::tensor::TensorView;
use safetensors::{Dtype, SafeTensors};

use crate::error::{Error, Result};

const HEADER_KEY: &str = "octseg";

pub(crate) struct OwnedTensor {
    pub name: String,
    pub dtype: Dtype,
    pub shape: Vec<usize>,
    pub bytes: Vec<u8>,
}

/// Serialize to bytes. Output is a pure function of the inputs.
pub(crate) fn encode(tensors: &[OwnedTensor], header: &str) -> Result<Vec<u8>> {
    let views = tensors
        .iter()
        .map(|t| {
            TensorView::new(t.dtype, t.shape.clone(), &t.bytes)
                .map(|v| (t.name.clone(), v))
                .map_err(|e| Error::Checkpoint(format!("tensor {}: {e}", t.name)))
        })
        .collect::<Result<Vec<_>>>()?;
    let meta = HashMap::from([(HEADER_KEY.to_string(), header.to_string())]);
    safetensors::serialize(views, Some(meta)).map_err(|e| Error::Checkpoint(e.to_string()))
}

/// Write via a sibling temp file and rename, so readers never observe a
/// partially written archive.
pub(crate) fn write(path: &Path, tensors: &[OwnedTensor], header: &str) -> Result<()> {
    let bytes = encode(tensors, header)?;
    write_atomic(path, &bytes)
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub(crate) struct Archive {
    bytes: Vec<u8>,
    path: std::path::PathBuf,
}

impl Archive {
    pub fn open(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::NotFound(path.to_path_buf()));
        }
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(Archive {
            bytes,
            path: path.to_path_buf(),
        })
    }

    pub fn header(&self) -> Result<String> {
        let (_, meta) = SafeTensors::read_metadata(&self.bytes)
            .map_err(|e| Error::format(&self.path, format!("not a tensor archive: {e}")))?;
        meta.metadata()
            .as_ref()
            .and_then(|m| m.get(HEADER_KEY).cloned())
            .ok_or_else(|| Error::format(&self.path, "archive has no octseg header"))
    }

    /// `(dtype, shape, raw little-endian bytes)` of a named tensor.
    pub fn tensor(&self, name: &str) -> Result<(Dtype, Vec<usize>, &[u8])> {
        let st = SafeTensors::deserialize(&self.bytes)
            .map_err(|e| Error::format(&self.path, format!("not a tensor archive: {e}")))?;
        let view = st
            .tensor(name)
            .map_err(|_| Error::format(&self.path, format!("missing tensor `{name}`")))?;
        Ok((view.dtype(), view.shape().to_vec(), view.data()))
    }
}
