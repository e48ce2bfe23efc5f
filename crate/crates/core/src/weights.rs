//! Weight files: a TOML manifest next to a raw little-endian `f32` payload.
//!
//! ```toml
//! format_version = 1
//! architecture = "vgg19-encoder"          # or "custom"
//! payload_sha256 = "<64 hex chars>"
//! layers = ["conv1_1", "relu1_1", "pool1"] # required for "custom"
//!
//! [[entries]]
//! layer_name = "conv1_1"
//! kind = "weight"                          # or "bias"
//! shape = [64, 3, 3, 3]                    # (out, in, kh, kw); bias is [out]
//! dtype = "f32le"
//! byte_offset = 0
//! byte_length = 6912
//! ```
//!
//! The SHA-256 covers the whole payload file. Entries must not overlap and
//! must lie inside the payload.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result, WeightsError};
use crate::nn::{vgg19_plan, Architecture, LayerKind, LayerPlan, NetworkSpec, KERNEL};

pub const FORMAT_VERSION: i64 = 1;
pub const DTYPE: &str = "f32le";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EntryKind {
    Weight,
    Bias,
}

impl EntryKind {
    fn as_str(&self) -> &'static str {
        match self {
            EntryKind::Weight => "weight",
            EntryKind::Bias => "bias",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub layer_name: String,
    pub kind: EntryKind,
    pub shape: Vec<usize>,
    pub dtype: String,
    pub byte_offset: u64,
    pub byte_length: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WeightManifest {
    pub format_version: i64,
    pub architecture: String,
    pub payload_sha256: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub layers: Vec<String>,
    pub entries: Vec<ManifestEntry>,
}

/// `<name>.manifest` -> `<name>.bin`.
pub fn payload_path_for(manifest: &Path) -> PathBuf {
    manifest.with_extension("bin")
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn malformed(path: &Path, detail: impl Into<String>) -> Error {
    WeightsError::Malformed {
        path: path.to_path_buf(),
        detail: detail.into(),
    }
    .into()
}

fn shape_err(entry: &str, detail: impl Into<String>) -> Error {
    WeightsError::Shape {
        entry: entry.to_string(),
        detail: detail.into(),
    }
    .into()
}

/// Parses a manifest, checking `format_version` before anything else.
pub fn parse_manifest(text: &str, path: &Path) -> Result<WeightManifest> {
    let value: toml::Table = toml::from_str(text).map_err(|e| malformed(path, e.to_string()))?;
    match value.get("format_version") {
        Some(toml::Value::Integer(FORMAT_VERSION)) => {}
        Some(toml::Value::Integer(v)) => {
            return Err(WeightsError::UnknownVersion {
                path: path.to_path_buf(),
                found: *v,
            }
            .into())
        }
        _ => return Err(malformed(path, "missing integer `format_version`")),
    }
    value
        .try_into()
        .map_err(|e: toml::de::Error| malformed(path, e.to_string()))
}

/// Loads a network, verifying checksum, entry bounds and shapes.
pub fn load(manifest_path: &Path, payload_path: &Path) -> Result<NetworkSpec> {
    let text = fs::read_to_string(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
    let manifest = parse_manifest(&text, manifest_path)?;
    let architecture = Architecture::from_tag(&manifest.architecture).ok_or_else(|| {
        WeightsError::UnknownArchitecture {
            path: manifest_path.to_path_buf(),
            found: manifest.architecture.clone(),
        }
    })?;

    let payload = fs::read(payload_path).map_err(|e| Error::io(payload_path, e))?;
    let actual = sha256_hex(&payload);
    if !actual.eq_ignore_ascii_case(&manifest.payload_sha256) {
        return Err(WeightsError::ChecksumMismatch {
            path: payload_path.to_path_buf(),
            expected: manifest.payload_sha256.clone(),
            actual,
        }
        .into());
    }

    let tensors = slice_entries(&manifest, &payload, manifest_path)?;
    let plan = resolve_plan(architecture, &manifest, &tensors, manifest_path)?;

    // resolve_plan guarantees both entries exist with matching shapes.
    let net = NetworkSpec::from_plan(architecture, &plan, |name, _, _| {
        let w = &tensors[&(name.to_string(), EntryKind::Weight)].1;
        let b = &tensors[&(name.to_string(), EntryKind::Bias)].1;
        (w.clone(), b.clone())
    });
    let net = net.map_err(|e| shape_err(manifest_path.to_string_lossy().as_ref(), e.to_string()))?;

    let used = net.convs().count() * 2;
    if used != tensors.len() {
        return Err(malformed(
            manifest_path,
            format!("{} entries do not belong to any conv layer", tensors.len() - used),
        ));
    }
    Ok(net)
}

type Tensors = HashMap<(String, EntryKind), (Vec<usize>, Vec<f32>)>;

fn slice_entries(manifest: &WeightManifest, payload: &[u8], path: &Path) -> Result<Tensors> {
    let mut spans: Vec<(u64, u64, &str)> = Vec::with_capacity(manifest.entries.len());
    let mut tensors = Tensors::new();
    for e in &manifest.entries {
        let id = format!("{}.{}", e.layer_name, e.kind.as_str());
        if e.dtype != DTYPE {
            return Err(shape_err(&id, format!("dtype `{}` (only {DTYPE})", e.dtype)));
        }
        let count = e
            .shape
            .iter()
            .try_fold(1u64, |acc, &d| acc.checked_mul(d as u64))
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| shape_err(&id, "shape overflows"))?;
        if e.shape.is_empty() || e.shape.contains(&0) || count != e.byte_length {
            return Err(shape_err(
                &id,
                format!("shape {:?} needs {count} bytes, entry says {}", e.shape, e.byte_length),
            ));
        }
        let end = e
            .byte_offset
            .checked_add(e.byte_length)
            .filter(|&end| end <= payload.len() as u64)
            .ok_or_else(|| {
                malformed(
                    path,
                    format!("`{id}` extends past the {}-byte payload", payload.len()),
                )
            })?;
        spans.push((e.byte_offset, end, &e.layer_name));
        let bytes = &payload[e.byte_offset as usize..end as usize];
        let values = bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        if tensors
            .insert((e.layer_name.clone(), e.kind), (e.shape.clone(), values))
            .is_some()
        {
            return Err(malformed(path, format!("duplicate entry `{id}`")));
        }
    }
    spans.sort_unstable();
    if let Some(w) = spans.windows(2).find(|w| w[1].0 < w[0].1) {
        return Err(malformed(
            path,
            format!("entries of `{}` and `{}` overlap", w[0].2, w[1].2),
        ));
    }
    Ok(tensors)
}

fn resolve_plan(
    architecture: Architecture,
    manifest: &WeightManifest,
    tensors: &Tensors,
    path: &Path,
) -> Result<Vec<LayerPlan>> {
    let plan = match architecture {
        Architecture::Vgg19Encoder => {
            let plan = vgg19_plan();
            if !manifest.layers.is_empty()
                && !manifest.layers.iter().map(String::as_str).eq(plan.iter().map(LayerPlan::name))
            {
                return Err(malformed(path, "`layers` does not match vgg19-encoder"));
            }
            plan
        }
        Architecture::Custom => {
            if manifest.layers.is_empty() {
                return Err(malformed(path, "custom architecture needs a `layers` list"));
            }
            manifest
                .layers
                .iter()
                .map(|name| match LayerKind::from_name(name) {
                    Some(LayerKind::Relu) => Ok(LayerPlan::Relu(name.clone())),
                    Some(LayerKind::Pool) => Ok(LayerPlan::Pool(name.clone())),
                    Some(LayerKind::Conv) => {
                        let (shape, _) = tensors
                            .get(&(name.clone(), EntryKind::Weight))
                            .ok_or_else(|| WeightsError::MissingEntry {
                                layer: name.clone(),
                                kind: "weight".into(),
                            })?;
                        match shape[..] {
                            [o, i, KERNEL, KERNEL] => Ok(LayerPlan::Conv {
                                name: name.clone(),
                                in_channels: i,
                                out_channels: o,
                            }),
                            _ => Err(shape_err(
                                &format!("{name}.weight"),
                                format!("expected (out, in, 3, 3), got {shape:?}"),
                            )),
                        }
                    }
                    None => Err(malformed(path, format!("unknown layer kind `{name}`"))),
                })
                .collect::<Result<_>>()?
        }
    };
    for p in &plan {
        if let LayerPlan::Conv {
            name,
            in_channels,
            out_channels,
        } = p
        {
            let expect_w = [*out_channels, *in_channels, KERNEL, KERNEL];
            for (kind, expect) in [
                (EntryKind::Weight, &expect_w[..]),
                (EntryKind::Bias, &[*out_channels][..]),
            ] {
                match tensors.get(&(name.clone(), kind)) {
                    None => {
                        return Err(WeightsError::MissingEntry {
                            layer: name.clone(),
                            kind: kind.as_str().into(),
                        }
                        .into())
                    }
                    Some((shape, _)) if shape[..] != *expect => {
                        return Err(shape_err(
                            &format!("{name}.{}", kind.as_str()),
                            format!("expected {expect:?}, got {shape:?}"),
                        ))
                    }
                    Some(_) => {}
                }
            }
        }
    }
    Ok(plan)
}

/// Serializes `net`; returns the manifest that was written.
pub fn save(net: &NetworkSpec, manifest_path: &Path, payload_path: &Path) -> Result<WeightManifest> {
    let (manifest, payload) = encode(net)?;
    fs::write(payload_path, &payload).map_err(|e| Error::io(payload_path, e))?;
    let text = toml::to_string(&manifest).map_err(|e| Error::invalid(e.to_string()))?;
    fs::write(manifest_path, text).map_err(|e| Error::io(manifest_path, e))?;
    Ok(manifest)
}

/// In-memory manifest and payload for `net`.
pub fn encode(net: &NetworkSpec) -> Result<(WeightManifest, Vec<u8>)> {
    if net.convs().next().is_none() {
        return Err(Error::invalid("network has no conv layers to save"));
    }
    let mut payload = Vec::new();
    let mut entries = Vec::new();
    for conv in net.convs() {
        for (kind, shape, values) in [
            (EntryKind::Weight, conv.weight_shape().to_vec(), &conv.weights),
            (EntryKind::Bias, vec![conv.out_channels], &conv.bias),
        ] {
            let byte_offset = payload.len() as u64;
            for v in values.iter() {
                payload.extend_from_slice(&v.to_le_bytes());
            }
            entries.push(ManifestEntry {
                layer_name: conv.name.clone(),
                kind,
                shape,
                dtype: DTYPE.to_string(),
                byte_offset,
                byte_length: payload.len() as u64 - byte_offset,
            });
        }
    }
    let manifest = WeightManifest {
        format_version: FORMAT_VERSION,
        architecture: net.architecture().tag().to_string(),
        payload_sha256: sha256_hex(&payload),
        layers: net.layers().iter().map(|l| l.name().to_string()).collect(),
        entries,
    };
    Ok((manifest, payload))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{vgg19_plan, Architecture, Layer, PoolLayer};

    fn toy() -> NetworkSpec {
        let plan = vec![
            LayerPlan::Conv {
                name: "conv1_1".into(),
                in_channels: 3,
                out_channels: 2,
            },
            LayerPlan::Relu("relu1_1".into()),
            LayerPlan::Pool("pool1".into()),
        ];
        NetworkSpec::random(Architecture::Custom, &plan, 3).unwrap()
    }

    fn write(dir: &Path, net: &NetworkSpec) -> (PathBuf, PathBuf) {
        let m = dir.join("net.manifest");
        let p = payload_path_for(&m);
        save(net, &m, &p).unwrap();
        (m, p)
    }

    fn code(e: Error) -> &'static str {
        match e {
            Error::Weights(w) => w.code(),
            other => panic!("expected weights error, got {other:?}"),
        }
    }

    #[test]
    fn round_trip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let net = toy();
        let (m, p) = write(dir.path(), &net);
        let back = load(&m, &p).unwrap();
        assert_eq!(back, net);
        let a = net.convs().next().unwrap();
        let b = back.convs().next().unwrap();
        assert!(a.weights.iter().zip(&b.weights).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn hash_is_deterministic() {
        let (m1, p1) = encode(&toy()).unwrap();
        let (m2, p2) = encode(&toy()).unwrap();
        assert_eq!(m1, m2);
        assert_eq!(p1, p2);
        assert_eq!(m1.payload_sha256.len(), 64);
    }

    #[test]
    fn corrupted_payload_fails_checksum() {
        let dir = tempfile::tempdir().unwrap();
        let (m, p) = write(dir.path(), &toy());
        let mut bytes = fs::read(&p).unwrap();
        bytes[10] ^= 0x40;
        fs::write(&p, bytes).unwrap();
        assert_eq!(code(load(&m, &p).unwrap_err()), WeightsError::CHECKSUM);
    }

    #[test]
    fn unknown_version() {
        let dir = tempfile::tempdir().unwrap();
        let (m, p) = write(dir.path(), &toy());
        let text = fs::read_to_string(&m).unwrap().replace("format_version = 1", "format_version = 2");
        fs::write(&m, text).unwrap();
        assert_eq!(code(load(&m, &p).unwrap_err()), WeightsError::UNKNOWN_VERSION);
    }

    #[test]
    fn unknown_architecture() {
        let dir = tempfile::tempdir().unwrap();
        let (m, p) = write(dir.path(), &toy());
        let text = fs::read_to_string(&m).unwrap().replace("\"custom\"", "\"resnet50\"");
        fs::write(&m, text).unwrap();
        assert_eq!(code(load(&m, &p).unwrap_err()), WeightsError::UNKNOWN_ARCHITECTURE);
    }

    #[test]
    fn vgg19_missing_last_bias_is_named() {
        let net = NetworkSpec::from_plan(Architecture::Vgg19Encoder, &vgg19_plan(), |_, i, o| {
            (vec![0.01; o * i * 9], vec![0.0; o])
        })
        .unwrap();
        let (mut manifest, payload) = encode(&net).unwrap();
        manifest
            .entries
            .retain(|e| !(e.layer_name == "conv5_4" && e.kind == EntryKind::Bias));
        let dir = tempfile::tempdir().unwrap();
        let m = dir.path().join("vgg.manifest");
        let p = payload_path_for(&m);
        fs::write(&m, toml::to_string(&manifest).unwrap()).unwrap();
        fs::write(&p, payload).unwrap();
        let err = load(&m, &p).unwrap_err();
        assert!(err.to_string().contains("conv5_4.bias"), "{err}");
        assert_eq!(code(err), WeightsError::MISSING_ENTRY);
    }

    #[test]
    fn shape_mismatch_against_architecture() {
        let (mut manifest, payload) = encode(&toy()).unwrap();
        manifest.entries[1].shape = vec![1, 2];
        let dir = tempfile::tempdir().unwrap();
        let m = dir.path().join("t.manifest");
        fs::write(&m, toml::to_string(&manifest).unwrap()).unwrap();
        fs::write(payload_path_for(&m), payload).unwrap();
        assert_eq!(code(load(&m, &payload_path_for(&m)).unwrap_err()), WeightsError::SHAPE);
    }

    #[test]
    fn overlapping_and_out_of_bounds_entries() {
        let dir = tempfile::tempdir().unwrap();
        let m = dir.path().join("t.manifest");
        let (manifest, payload) = encode(&toy()).unwrap();

        let mut overlap = manifest.clone();
        overlap.entries[1].byte_offset -= 4;
        fs::write(&m, toml::to_string(&overlap).unwrap()).unwrap();
        fs::write(payload_path_for(&m), &payload).unwrap();
        assert_eq!(code(load(&m, &payload_path_for(&m)).unwrap_err()), WeightsError::MALFORMED);

        let mut past_end = manifest;
        past_end.entries[1].byte_offset = 1 << 40;
        fs::write(&m, toml::to_string(&past_end).unwrap()).unwrap();
        assert_eq!(code(load(&m, &payload_path_for(&m)).unwrap_err()), WeightsError::MALFORMED);
    }

    #[test]
    fn saving_without_convs_is_invalid() {
        let net = NetworkSpec::new(
            Architecture::Custom,
            vec![Layer::Pool(PoolLayer {
                name: "pool1".into(),
            })],
        )
        .unwrap();
        assert!(matches!(encode(&net), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn missing_files_are_io_errors() {
        let dir = tempfile::tempdir().unwrap();
        let m = dir.path().join("nope.manifest");
        assert!(matches!(load(&m, &payload_path_for(&m)), Err(Error::Io { .. })));
    }
}
