//! Checkpoint files: `u64` header length, UTF-8 JSON header, tensor records.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::params::{AdapterRecord, ParameterSet, Provenance};
use super::spec::ModelSpec;
use crate::error::{Error, Result};
use crate::records::{read_records, write_atomic, write_records, Reader};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub fingerprint: String,
    pub spec: ModelSpec,
    pub seed: u64,
    pub provenance: Provenance,
    /// Blocks carrying BatchNorm, tower order.
    pub bn_layers: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adapters: Option<AdapterRecord>,
}

pub fn checkpoint_bytes<T: Scalar>(params: &ParameterSet<T>) -> Vec<u8> {
    let header = CheckpointHeader {
        fingerprint: params.meta.fingerprint.clone(),
        spec: params.spec().clone(),
        seed: params.meta.seed,
        provenance: params.meta.provenance.clone(),
        bn_layers: params.spec().bn_blocks(),
        adapters: params.meta.adapters.clone(),
    };
    let json = serde_json::to_vec(&header).expect("checkpoint header serializes");
    let mut out = Vec::new();
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    write_records(
        &mut out,
        params.entries().iter().map(|(k, v)| (k.as_str(), v)),
    );
    out
}

pub fn checkpoint_from_bytes<T: Scalar>(bytes: &[u8]) -> Result<ParameterSet<T>> {
    let mut r = Reader::new(bytes);
    let len = r.u64()? as usize;
    let header: CheckpointHeader = serde_json::from_slice(r.take(len)?)?;
    if header.spec.fingerprint() != header.fingerprint {
        return Err(Error::Artifact(
            "checkpoint fingerprint does not match its architecture".into(),
        ));
    }
    let entries: BTreeMap<_, _> = read_records::<T>(&mut r)?.into_iter().collect();
    if !r.is_empty() {
        return Err(Error::Artifact("trailing bytes after checkpoint records".into()));
    }
    let mut params = ParameterSet::new(
        Arc::new(header.spec),
        entries,
        header.seed,
        header.provenance,
    )?;
    params.meta.adapters = header.adapters;
    Ok(params)
}

pub fn save_checkpoint<T: Scalar>(params: &ParameterSet<T>, path: &Path) -> Result<()> {
    write_atomic(path, &checkpoint_bytes(params))
}

pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<ParameterSet<T>> {
    let bytes = std::fs::read(path)
        .map_err(|e| Error::Artifact(format!("cannot read {}: {e}", path.display())))?;
    checkpoint_from_bytes(&bytes)
}
