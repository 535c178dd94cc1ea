//! Binary container for models and fused models.
//!
//! Layout: the magic line `HYDRAM1\n`, a line `manifest <bytes>\n`, a JSON
//! manifest of exactly that many bytes, then every tensor as little-endian
//! binary64 in manifest order.

use std::fs::File;
use std::io::{BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, FormatError, Result};
use crate::fusion::{HydraLayer, HydraModel, MemberAttention, MergedMlp};
use crate::numerics::Tensor;
use crate::scalar::Scalar;
use crate::transformer::{expected_shapes, HeadMask, Model, TransformerConfig};

pub const MAGIC: &[u8; 8] = b"HYDRAM1\n";

/// Longest accepted `manifest <bytes>\n` line.
const MAX_LENGTH_LINE: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArtifactKind {
    Model,
    Hydra,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset into the payload.
    pub offset: u64,
    /// Element count.
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub kind: ArtifactKind,
    pub config: TransformerConfig,
    pub members: usize,
    /// Head masks in `1101|1111` form, one per member.
    pub masks: Vec<String>,
    pub tensors: Vec<TensorEntry>,
}

/// Either kind of stored model.
#[derive(Clone, Debug, PartialEq)]
pub enum Artifact<S> {
    Model(Model<S>),
    Hydra(HydraModel<S>),
}

impl<S: Scalar> Artifact<S> {
    pub fn config(&self) -> &TransformerConfig {
        match self {
            Artifact::Model(m) => &m.config,
            Artifact::Hydra(h) => &h.config,
        }
    }
}

fn hydra_named<S>(h: &HydraModel<S>) -> Vec<(String, &Tensor<S>)> {
    let mut out = vec![
        ("embed.tok".to_string(), &h.tok_emb),
        ("embed.pos".to_string(), &h.pos_emb),
        ("embed.cls".to_string(), &h.cls),
    ];
    for (l, layer) in h.layers.iter().enumerate() {
        for (m, a) in layer.members.iter().enumerate() {
            let named = [
                ("W_Q", &a.w_q),
                ("W_K", &a.w_k),
                ("W_V", &a.w_v),
                ("W_O", &a.w_o),
                ("b_Q", &a.b_q),
                ("b_K", &a.b_k),
                ("b_V", &a.b_v),
                ("b_O", &a.b_o),
            ];
            for (name, t) in named {
                out.push((format!("layer{l}.member{m}.{name}"), t));
            }
        }
        let shared = [
            ("mlp.W1", &layer.mlp.w1),
            ("mlp.b1", &layer.mlp.b1),
            ("mlp.W2", &layer.mlp.w2),
            ("mlp.b2", &layer.mlp.b2),
            ("ln1.gamma", &layer.ln1_gamma),
            ("ln1.beta", &layer.ln1_beta),
            ("ln2.gamma", &layer.ln2_gamma),
            ("ln2.beta", &layer.ln2_beta),
        ];
        for (name, t) in shared {
            out.push((format!("layer{l}.shared.{name}"), t));
        }
    }
    out.push(("final_ln.gamma".to_string(), &h.final_gamma));
    out.push(("final_ln.beta".to_string(), &h.final_beta));
    out.push(("head.W".to_string(), &h.head_w));
    out.push(("head.b".to_string(), &h.head_b));
    out
}

/// `(name, shape)` of every tensor a fused model with these masks stores.
fn hydra_shapes(cfg: &TransformerConfig, masks: &[HeadMask]) -> Vec<(String, Vec<usize>)> {
    let base = expected_shapes(cfg);
    let (d, d_k) = (cfg.hidden, cfg.head_dim());
    let mut out = vec![
        ("embed.tok".to_string(), base.tok_emb.clone()),
        ("embed.pos".to_string(), base.pos_emb.clone()),
        ("embed.cls".to_string(), base.cls.clone()),
    ];
    for l in 0..cfg.layers {
        for (m, mask) in masks.iter().enumerate() {
            let w = mask.alive_count(l) * d_k;
            let shapes = [
                ("W_Q", vec![d, w]),
                ("W_K", vec![d, w]),
                ("W_V", vec![d, w]),
                ("W_O", vec![w, d]),
                ("b_Q", vec![w]),
                ("b_K", vec![w]),
                ("b_V", vec![w]),
                ("b_O", vec![d]),
            ];
            for (name, s) in shapes {
                out.push((format!("layer{l}.member{m}.{name}"), s));
            }
        }
        let ls = &base.layers[l];
        let shared = [
            ("mlp.W1", &ls.w1),
            ("mlp.b1", &ls.b1),
            ("mlp.W2", &ls.w2),
            ("mlp.b2", &ls.b2),
            ("ln1.gamma", &ls.ln1_gamma),
            ("ln1.beta", &ls.ln1_beta),
            ("ln2.gamma", &ls.ln2_gamma),
            ("ln2.beta", &ls.ln2_beta),
        ];
        for (name, s) in shared {
            out.push((format!("layer{l}.shared.{name}"), s.clone()));
        }
    }
    out.push(("final_ln.gamma".to_string(), base.final_gamma.clone()));
    out.push(("final_ln.beta".to_string(), base.final_beta.clone()));
    out.push(("head.W".to_string(), base.head_w.clone()));
    out.push(("head.b".to_string(), base.head_b.clone()));
    out
}

fn model_shapes(cfg: &TransformerConfig) -> Vec<(String, Vec<usize>)> {
    expected_shapes(cfg)
        .named()
        .into_iter()
        .map(|(n, s)| (n, s.clone()))
        .collect()
}

fn encode<S: Scalar>(
    kind: ArtifactKind,
    config: TransformerConfig,
    masks: &[HeadMask],
    tensors: Vec<(String, &Tensor<S>)>,
) -> Result<Vec<u8>> {
    let mut offset = 0u64;
    let entries = tensors
        .iter()
        .map(|(name, t)| {
            let e = TensorEntry {
                name: name.clone(),
                shape: t.shape().to_vec(),
                offset,
                count: t.len(),
            };
            offset += 8 * t.len() as u64;
            e
        })
        .collect();
    let manifest = Manifest {
        kind,
        config,
        members: masks.len(),
        masks: masks.iter().map(|m| m.to_string()).collect(),
        tensors: entries,
    };
    let json = serde_json::to_vec(&manifest).map_err(|e| FormatError::Manifest(e.to_string()))?;
    let mut out = Vec::with_capacity(64 + json.len() + offset as usize);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(format!("manifest {}\n", json.len()).as_bytes());
    out.extend_from_slice(&json);
    for (_, t) in &tensors {
        for x in t.data() {
            out.extend_from_slice(&x.to_f64_lossy().to_le_bytes());
        }
    }
    Ok(out)
}

pub fn encode_model<S: Scalar>(model: &Model<S>) -> Result<Vec<u8>> {
    let masks = [HeadMask::for_config(&model.config)];
    encode(
        ArtifactKind::Model,
        model.config,
        &masks,
        model.weights.named(),
    )
}

pub fn encode_hydra<S: Scalar>(model: &HydraModel<S>) -> Result<Vec<u8>> {
    encode(
        ArtifactKind::Hydra,
        model.config,
        &model.masks,
        hydra_named(model),
    )
}

fn read_exact_or(reader: &mut impl Read, buf: &mut [u8], what: &str) -> Result<()> {
    reader.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::Format(FormatError::Manifest(format!(
            "file ends inside the {what}"
        ))),
        _ => Error::Io(e),
    })
}

/// Checks the manifest index against the tensors the config (and masks)
/// imply and returns the payload size in bytes.
fn validate_index(
    manifest: &Manifest,
    expected: &[(String, Vec<usize>)],
) -> Result<u64, FormatError> {
    let mut previous_end = 0u64;
    for (i, entry) in manifest.tensors.iter().enumerate() {
        let (name, shape) = match expected.get(i) {
            Some(e) => e,
            None => return Err(FormatError::UnexpectedTensor(entry.name.clone())),
        };
        if &entry.name != name {
            return Err(if expected.iter().any(|(n, _)| n == &entry.name) {
                FormatError::MissingTensor(name.clone())
            } else {
                FormatError::UnexpectedTensor(entry.name.clone())
            });
        }
        let elements = entry
            .shape
            .iter()
            .try_fold(1usize, |acc, &s| acc.checked_mul(s))
            .ok_or_else(|| FormatError::Manifest(format!("tensor {name}: shape overflows")))?;
        if elements != entry.count {
            return Err(FormatError::ElementCount {
                tensor: name.clone(),
                shape: entry.shape.clone(),
                expected: elements,
                declared: entry.count,
            });
        }
        if &entry.shape != shape {
            return Err(FormatError::ShapeMismatch {
                tensor: name.clone(),
                expected: shape.clone(),
                actual: entry.shape.clone(),
            });
        }
        if entry.offset < previous_end {
            return Err(FormatError::Overlap {
                tensor: name.clone(),
                offset: entry.offset,
                previous_end,
            });
        }
        if entry.offset > previous_end {
            return Err(FormatError::Gap {
                tensor: name.clone(),
                offset: entry.offset,
                previous_end,
            });
        }
        previous_end = entry.offset + 8 * entry.count as u64;
    }
    if let Some((name, _)) = expected.get(manifest.tensors.len()) {
        return Err(FormatError::MissingTensor(name.clone()));
    }
    Ok(previous_end)
}

/// Reads a container from `reader`, which holds exactly `total_len` bytes.
/// The payload buffer is allocated only after its declared size has been
/// matched against `total_len`.
pub fn read_artifact<S: Scalar>(mut reader: impl Read, total_len: u64) -> Result<Artifact<S>> {
    let mut magic = [0u8; 8];
    let got = read_prefix(&mut reader, &mut magic)?;
    if got < 8 || &magic != MAGIC {
        return Err(FormatError::BadMagic {
            found: magic[..got].to_vec(),
        }
        .into());
    }
    let mut line = Vec::new();
    let mut byte = [0u8; 1];
    loop {
        read_exact_or(&mut reader, &mut byte, "manifest length line")?;
        if byte[0] == b'\n' {
            break;
        }
        line.push(byte[0]);
        if line.len() > MAX_LENGTH_LINE {
            return Err(FormatError::Manifest("manifest length line too long".into()).into());
        }
    }
    let header_len = 8 + line.len() as u64 + 1;
    let manifest_len: u64 = std::str::from_utf8(&line)
        .ok()
        .and_then(|s| s.strip_prefix("manifest "))
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| FormatError::Manifest("expected `manifest <bytes>` line".into()))?;
    if manifest_len > total_len.saturating_sub(header_len) {
        return Err(FormatError::Manifest(format!(
            "manifest declares {manifest_len} bytes but only {} remain",
            total_len.saturating_sub(header_len)
        ))
        .into());
    }
    let mut json = vec![0u8; manifest_len as usize];
    read_exact_or(&mut reader, &mut json, "manifest")?;
    let manifest: Manifest =
        serde_json::from_slice(&json).map_err(|e| FormatError::Manifest(e.to_string()))?;
    let cfg = manifest.config;
    cfg.validate()
        .map_err(|e| FormatError::Manifest(format!("config: {e}")))?;
    if manifest.members != manifest.masks.len() {
        return Err(FormatError::Manifest(format!(
            "members {} but {} masks",
            manifest.members,
            manifest.masks.len()
        ))
        .into());
    }
    let masks = manifest
        .masks
        .iter()
        .map(|s| {
            let m: HeadMask = s.parse()?;
            m.validate(&cfg)?;
            Ok(m)
        })
        .collect::<Result<Vec<_>>>()
        .map_err(|e| FormatError::Manifest(format!("masks: {e}")))?;
    let expected = match manifest.kind {
        ArtifactKind::Model => {
            if masks.len() != 1 || !masks[0].is_full() {
                return Err(FormatError::Manifest(
                    "model artifact must carry one full mask".into(),
                )
                .into());
            }
            model_shapes(&cfg)
        }
        ArtifactKind::Hydra => {
            if masks.is_empty() {
                return Err(FormatError::Manifest(
                    "hydra artifact needs at least one member".into(),
                )
                .into());
            }
            hydra_shapes(&cfg, &masks)
        }
    };
    let payload_len = validate_index(&manifest, &expected)?;
    let actual = total_len - header_len - manifest_len;
    if payload_len != actual {
        return Err(FormatError::PayloadLength {
            expected: payload_len,
            actual,
        }
        .into());
    }
    let mut tensors = Vec::with_capacity(manifest.tensors.len());
    let mut buf = Vec::new();
    for entry in &manifest.tensors {
        buf.resize(8 * entry.count, 0);
        read_exact_or(&mut reader, &mut buf, "payload")?;
        let data = buf
            .chunks_exact(8)
            .map(|c| S::lit(f64::from_le_bytes(c.try_into().expect("8-byte chunk"))))
            .collect();
        tensors.push(Tensor::new(entry.shape.clone(), data)?);
    }
    let mut it = tensors.into_iter();
    let mut next = || it.next().expect("validated tensor count");
    Ok(match manifest.kind {
        ArtifactKind::Model => {
            let mut weights = expected_shapes(&cfg).map(|_| Tensor::<S>::zeros(&[0]));
            for slot in weights.slots_mut() {
                *slot = next();
            }
            Artifact::Model(Model::from_weights(cfg, weights)?)
        }
        ArtifactKind::Hydra => {
            let (tok_emb, pos_emb, cls) = (next(), next(), next());
            let layers = (0..cfg.layers)
                .map(|l| {
                    let members = masks
                        .iter()
                        .map(|mask| MemberAttention {
                            heads: mask.survivors(l),
                            w_q: next(),
                            w_k: next(),
                            w_v: next(),
                            w_o: next(),
                            b_q: next(),
                            b_k: next(),
                            b_v: next(),
                            b_o: next(),
                        })
                        .collect();
                    HydraLayer {
                        members,
                        mlp: MergedMlp {
                            w1: next(),
                            b1: next(),
                            w2: next(),
                            b2: next(),
                        },
                        ln1_gamma: next(),
                        ln1_beta: next(),
                        ln2_gamma: next(),
                        ln2_beta: next(),
                    }
                })
                .collect();
            Artifact::Hydra(HydraModel {
                config: cfg,
                masks,
                tok_emb,
                pos_emb,
                cls,
                layers,
                final_gamma: next(),
                final_beta: next(),
                head_w: next(),
                head_b: next(),
            })
        }
    })
}

/// Fills as much of `buf` as the reader provides; returns the byte count.
fn read_prefix(reader: &mut impl Read, buf: &mut [u8]) -> Result<usize> {
    let mut filled = 0;
    while filled < buf.len() {
        match reader.read(&mut buf[filled..])? {
            0 => break,
            n => filled += n,
        }
    }
    Ok(filled)
}

pub fn decode<S: Scalar>(bytes: &[u8]) -> Result<Artifact<S>> {
    read_artifact(bytes, bytes.len() as u64)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = File::create(path)?;
    f.write_all(bytes)?;
    f.sync_all()?;
    Ok(())
}

pub fn save_model<S: Scalar>(model: &Model<S>, path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), &encode_model(model)?)
}

pub fn save_hydra<S: Scalar>(model: &HydraModel<S>, path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), &encode_hydra(model)?)
}

pub fn load<S: Scalar>(path: impl AsRef<Path>) -> Result<Artifact<S>> {
    let f = File::open(path)?;
    let len = f.metadata()?.len();
    read_artifact(BufReader::new(f), len)
}

pub fn load_model<S: Scalar>(path: impl AsRef<Path>) -> Result<Model<S>> {
    match load(path)? {
        Artifact::Model(m) => Ok(m),
        Artifact::Hydra(_) => {
            Err(FormatError::Manifest("expected a model, found a hydra artifact".into()).into())
        }
    }
}

pub fn load_hydra<S: Scalar>(path: impl AsRef<Path>) -> Result<HydraModel<S>> {
    match load(path)? {
        Artifact::Hydra(h) => Ok(h),
        Artifact::Model(_) => {
            Err(FormatError::Manifest("expected a hydra artifact, found a model".into()).into())
        }
    }
}

/// Parses the manifest of a container without reading the payload.
pub fn read_manifest(bytes: &[u8]) -> Result<Manifest> {
    let rest = bytes
        .strip_prefix(MAGIC.as_slice())
        .ok_or_else(|| FormatError::BadMagic {
            found: bytes[..bytes.len().min(8)].to_vec(),
        })?;
    let nl = rest
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| FormatError::Manifest("missing length line".into()))?;
    let len: usize = std::str::from_utf8(&rest[..nl])
        .ok()
        .and_then(|s| s.strip_prefix("manifest "))
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| FormatError::Manifest("expected `manifest <bytes>` line".into()))?;
    let json = rest
        .get(nl + 1..nl + 1 + len)
        .ok_or_else(|| FormatError::Manifest("file ends inside the manifest".into()))?;
    Ok(serde_json::from_slice(json).map_err(|e| FormatError::Manifest(e.to_string()))?)
}

/// Re-encodes a container around an edited manifest, keeping the payload.
pub fn replace_manifest(bytes: &[u8], manifest: &Manifest) -> Result<Vec<u8>> {
    let old = read_manifest(bytes)?;
    let old_json = serde_json::to_vec(&old).map_err(|e| FormatError::Manifest(e.to_string()))?;
    let header = MAGIC.len() + format!("manifest {}\n", old_json.len()).len() + old_json.len();
    let json = serde_json::to_vec(manifest).map_err(|e| FormatError::Manifest(e.to_string()))?;
    let mut out = MAGIC.to_vec();
    out.extend_from_slice(format!("manifest {}\n", json.len()).as_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&bytes[header..]);
    Ok(out)
}
