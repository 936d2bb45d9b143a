//! Binary checkpoint format.
//!
//! Layout: magic `NTRM`, little-endian u32 version, little-endian u64
//! header length, UTF-8 JSON header (specs, shapes, metadata, lineage),
//! then raw little-endian f32 payloads in layer order, weight before bias,
//! row-major. A checkpoint's digest is the SHA-256 of its payload bytes;
//! derived checkpoints carry their ancestors' digests in `lineage`, oldest
//! first, so every trimmed network's initialization is auditable.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::network::{LayerParams, Network, NetworkHeader, NetworkT};
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"NTRM";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainMeta {
    pub epochs_completed: usize,
    pub final_accuracy: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    network: NetworkHeader,
    meta: TrainMeta,
    lineage: Vec<String>,
}

/// A loaded checkpoint: the full network plus its provenance.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub format_version: u32,
    pub network: Network,
    pub lineage: Vec<String>,
    pub meta: TrainMeta,
}

impl Checkpoint {
    /// SHA-256 over the weight payload, hex encoded.
    pub fn digest(&self) -> String {
        payload_digest(&self.network)
    }
}

fn payload_bytes(net: &Network) -> Vec<u8> {
    let mut bytes = Vec::with_capacity(net.param_count() * 4);
    for p in net.all_params().iter().flatten() {
        for t in [&p.weight, &p.bias] {
            for v in t.as_slice() {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    bytes
}

fn hex(digest: &[u8]) -> String {
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Digest a network's payload without writing it anywhere.
pub fn payload_digest(net: &Network) -> String {
    hex(&Sha256::digest(payload_bytes(net)))
}

/// Write a checkpoint; returns its payload digest. The file is written to
/// a temporary sibling and renamed into place, so an interrupted save
/// never leaves a half-written checkpoint behind.
pub fn save_checkpoint(
    net: &Network,
    meta: &TrainMeta,
    lineage: &[String],
    path: &Path,
) -> Result<String> {
    let header = Header {
        network: net.header(),
        meta: meta.clone(),
        lineage: lineage.to_vec(),
    };
    let header_json =
        serde_json::to_vec(&header).map_err(|e| Error::Config(format!("header encode: {e}")))?;
    let payload = payload_bytes(net);
    let digest = hex(&Sha256::digest(&payload));

    let mut bytes = Vec::with_capacity(16 + header_json.len() + payload.len());
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&VERSION.to_le_bytes());
    bytes.extend_from_slice(&(header_json.len() as u64).to_le_bytes());
    bytes.extend_from_slice(&header_json);
    bytes.extend_from_slice(&payload);

    let tmp = path.with_extension("ntrm.tmp");
    fs::write(&tmp, &bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))?;
    Ok(digest)
}

/// Read and validate a checkpoint; weights round-trip bit-exactly.
pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(Error::BadMagic);
    }
    if bytes.len() < 16 {
        return Err(Error::TruncatedPayload {
            expected: 16,
            found: bytes.len(),
        });
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            expected: VERSION,
        });
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let payload_start = 16 + header_len;
    if bytes.len() < payload_start {
        return Err(Error::TruncatedPayload {
            expected: payload_start,
            found: bytes.len(),
        });
    }
    let header: Header = serde_json::from_slice(&bytes[16..payload_start])
        .map_err(|e| Error::PayloadMismatch(format!("header decode: {e}")))?;

    // Rebuild parameter tensors from the shape chain the specs imply.
    let scaffold = scaffold_shapes(&header.network)?;
    let expected_floats: usize = scaffold
        .iter()
        .flatten()
        .map(|(w, b)| w.iter().product::<usize>() + b)
        .sum();
    let expected = payload_start + expected_floats * 4;
    if bytes.len() < expected {
        return Err(Error::TruncatedPayload {
            expected,
            found: bytes.len(),
        });
    }
    if bytes.len() > expected {
        return Err(Error::PayloadMismatch(format!(
            "{} trailing bytes after declared payload",
            bytes.len() - expected
        )));
    }

    let mut cursor = payload_start;
    let mut read_tensor = |shape: Vec<usize>| -> Tensor {
        let n: usize = shape.iter().product();
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            data.push(f32::from_le_bytes(
                bytes[cursor..cursor + 4].try_into().unwrap(),
            ));
            cursor += 4;
        }
        Tensor::new(shape, data).expect("length matches shape by construction")
    };
    let params: Vec<Option<LayerParams<f32>>> = scaffold
        .into_iter()
        .map(|entry| {
            entry.map(|(w_shape, b_len)| LayerParams {
                weight: read_tensor(w_shape),
                bias: read_tensor(vec![b_len]),
            })
        })
        .collect();

    let network = NetworkT::assemble(header.network.input_shape, header.network.layers, params)
        .map_err(|e| Error::PayloadMismatch(e.to_string()))?;
    Ok(Checkpoint {
        format_version: version,
        network,
        lineage: header.lineage,
        meta: header.meta,
    })
}

type ShapeScaffold = Vec<Option<(Vec<usize>, usize)>>;

/// Weight shape and bias length per layer, from the declared specs.
fn scaffold_shapes(header: &NetworkHeader) -> Result<ShapeScaffold> {
    let (c, h, w) = header.input_shape;
    let mut cur = vec![c, h, w];
    let mut out = Vec::with_capacity(header.layers.len());
    for layer in &header.layers {
        layer.validate()?;
        let entry = layer
            .weight_shape(&cur)
            .map(|ws| (ws, layer.out_units().unwrap()));
        out.push(entry);
        cur = layer
            .output_shape(&cur)
            .map_err(|e| Error::PayloadMismatch(e.to_string()))?;
    }
    Ok(out)
}
