//! Binary parameter container:
//!
//! ```text
//! b"DYADCKP1" | header length (u64 LE) | header JSON | f64 LE payload | SHA-256 of everything before
//! ```
//!
//! The header carries the kind, the encoder config and its hash, free-form
//! extras and the ordered tensor names and shapes.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Classifier, EncoderConfig, EncoderParams, Linear, PretextHeads, TensorSet};
use crate::{seeded_rng, Error, Result};

const MAGIC: &[u8; 8] = b"DYADCKP1";

#[derive(Clone, Debug, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub kind: String,
    pub config: EncoderConfig,
    pub extra: serde_json::Value,
    pub tensors: Vec<NamedTensor>,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    kind: String,
    config: EncoderConfig,
    config_hash: String,
    extra: serde_json::Value,
    tensors: Vec<TensorEntry>,
}

fn collect(set: &impl TensorSet, prefix: &str, out: &mut Vec<NamedTensor>) {
    let mut views = Vec::new();
    set.visit(prefix, &mut views);
    out.extend(views.into_iter().map(|v| NamedTensor {
        name: v.name,
        shape: v.shape,
        data: v.data.to_vec(),
    }));
}

fn restore(set: &mut impl TensorSet, prefix: &str, ckpt: &Checkpoint, path: &Path) -> Result<()> {
    let by_name: HashMap<&str, &NamedTensor> =
        ckpt.tensors.iter().map(|t| (t.name.as_str(), t)).collect();
    let mut views = Vec::new();
    set.visit(prefix, &mut views);
    let wanted: Vec<(String, Vec<usize>)> = views.into_iter().map(|v| (v.name, v.shape)).collect();
    let mut sources = Vec::with_capacity(wanted.len());
    for (name, shape) in &wanted {
        let t = by_name.get(name.as_str()).ok_or_else(|| Error::Corrupt {
            path: path.to_path_buf(),
            msg: format!("missing tensor {name}"),
        })?;
        if &t.shape != shape {
            return Err(Error::Corrupt {
                path: path.to_path_buf(),
                msg: format!("tensor {name} has shape {:?}, expected {shape:?}", t.shape),
            });
        }
        sources.push(&t.data);
    }
    for (dst, src) in set.tensors_mut().into_iter().zip(sources) {
        dst.copy_from_slice(src);
    }
    Ok(())
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let header = Header {
        kind: ckpt.kind.clone(),
        config: ckpt.config.clone(),
        config_hash: ckpt.config.hash(),
        extra: ckpt.extra.clone(),
        tensors: ckpt
            .tensors
            .iter()
            .map(|t| TensorEntry {
                name: t.name.clone(),
                shape: t.shape.clone(),
            })
            .collect(),
    };
    let header = serde_json::to_vec(&header)?;
    let n_values: usize = ckpt.tensors.iter().map(|t| t.data.len()).sum();
    let mut bytes = Vec::with_capacity(16 + header.len() + 8 * n_values + 32);
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&(header.len() as u64).to_le_bytes());
    bytes.extend_from_slice(&header);
    for t in &ckpt.tensors {
        for v in &t.data {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    let digest = Sha256::digest(&bytes);
    bytes.extend_from_slice(&digest);
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let corrupt = |msg: &str| Error::Corrupt {
        path: path.to_path_buf(),
        msg: msg.to_string(),
    };
    if bytes.len() < 16 + 32 || &bytes[..8] != MAGIC {
        return Err(corrupt("not a parameter file or truncated header"));
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let body_end = bytes.len() - 32;
    if 16 + header_len > body_end {
        return Err(corrupt("truncated header"));
    }
    let header: Header = serde_json::from_slice(&bytes[16..16 + header_len])
        .map_err(|e| corrupt(&format!("bad header: {e}")))?;
    let n_values: usize = header
        .tensors
        .iter()
        .map(|t| t.shape.iter().product::<usize>())
        .sum();
    let payload = &bytes[16 + header_len..body_end];
    if payload.len() != 8 * n_values {
        return Err(corrupt(&format!(
            "payload has {} bytes, header describes {}",
            payload.len(),
            8 * n_values
        )));
    }
    if Sha256::digest(&bytes[..body_end]).as_slice() != &bytes[body_end..] {
        return Err(corrupt("checksum mismatch"));
    }
    if header.config.hash() != header.config_hash {
        return Err(corrupt("config hash does not match embedded config"));
    }
    let mut values = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
    let tensors = header
        .tensors
        .into_iter()
        .map(|t| {
            let len = t.shape.iter().product();
            NamedTensor {
                name: t.name,
                shape: t.shape,
                data: values.by_ref().take(len).collect(),
            }
        })
        .collect();
    Ok(Checkpoint {
        kind: header.kind,
        config: header.config,
        extra: header.extra,
        tensors,
    })
}

fn check_compat(ckpt: &Checkpoint, expected: Option<&EncoderConfig>) -> Result<()> {
    if let Some(exp) = expected {
        if exp.hash() != ckpt.config.hash() {
            return Err(Error::Compatibility {
                expected: exp.hash(),
                found: ckpt.config.hash(),
            });
        }
    }
    Ok(())
}

/// Saves the backbone, and the pretext heads when given.
pub fn save_params(
    path: &Path,
    encoder: &EncoderParams,
    heads: Option<&PretextHeads>,
) -> Result<()> {
    let mut tensors = Vec::new();
    collect(encoder, "encoder", &mut tensors);
    if let Some(h) = heads {
        collect(h, "heads", &mut tensors);
    }
    save_checkpoint(
        path,
        &Checkpoint {
            kind: "encoder".into(),
            config: encoder.config.clone(),
            extra: serde_json::json!({ "has_heads": heads.is_some() }),
            tensors,
        },
    )
}

/// Loads a backbone (and heads, if stored). With `expected`, a file written
/// for a different architecture is a [`Error::Compatibility`] error.
pub fn load_params(
    path: &Path,
    expected: Option<&EncoderConfig>,
) -> Result<(EncoderParams, Option<PretextHeads>)> {
    let ckpt = load_checkpoint(path)?;
    check_compat(&ckpt, expected)?;
    let mut rng = seeded_rng(0, 0);
    let mut enc = EncoderParams::init(&ckpt.config, &mut rng)?;
    restore(&mut enc, "encoder", &ckpt, path)?;
    let heads = if ckpt.tensors.iter().any(|t| t.name.starts_with("heads.")) {
        let mut h = PretextHeads::init(&ckpt.config, &mut rng);
        restore(&mut h, "heads", &ckpt, path)?;
        Some(h)
    } else {
        None
    };
    Ok((enc, heads))
}

pub fn save_classifier(path: &Path, clf: &Classifier) -> Result<()> {
    let mut tensors = Vec::new();
    collect(&clf.encoder, "encoder", &mut tensors);
    collect(&clf.decoder, "decoder", &mut tensors);
    save_checkpoint(
        path,
        &Checkpoint {
            kind: "classifier".into(),
            config: clf.encoder.config.clone(),
            extra: serde_json::json!({ "names": clf.names, "background": clf.background }),
            tensors,
        },
    )
}

pub fn load_classifier(path: &Path, expected: Option<&EncoderConfig>) -> Result<Classifier> {
    let ckpt = load_checkpoint(path)?;
    check_compat(&ckpt, expected)?;
    if ckpt.kind != "classifier" {
        return Err(Error::Corrupt {
            path: path.to_path_buf(),
            msg: format!("expected a classifier, found {}", ckpt.kind),
        });
    }
    #[derive(Deserialize)]
    struct Extra {
        names: Vec<String>,
        background: usize,
    }
    let extra: Extra = serde_json::from_value(ckpt.extra.clone())?;
    let mut rng = seeded_rng(0, 0);
    let mut encoder = EncoderParams::init(&ckpt.config, &mut rng)?;
    restore(&mut encoder, "encoder", &ckpt, path)?;
    let mut decoder = Linear::zeros(ckpt.config.embed_dim, extra.names.len());
    restore(&mut decoder, "decoder", &ckpt, path)?;
    Ok(Classifier {
        encoder,
        decoder,
        names: extra.names,
        background: extra.background,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> EncoderConfig {
        EncoderConfig {
            embed_dim: 8,
            n_layers: 1,
            n_heads: 2,
            mlp_hidden: 8,
            window_size: 4,
            ..EncoderConfig::default()
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.bin");
        let mut rng = seeded_rng(3, 0);
        let mut enc = EncoderParams::init(&small(), &mut rng).unwrap();
        enc.perturb(0.37, &mut rng);
        let heads = PretextHeads::init(&small(), &mut rng);
        save_params(&path, &enc, Some(&heads)).unwrap();
        let (e2, h2) = load_params(&path, Some(&small())).unwrap();
        assert_eq!(e2, enc);
        assert_eq!(h2.unwrap(), heads);
    }

    #[test]
    fn truncated_file_is_corrupt() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.bin");
        let enc = EncoderParams::init(&small(), &mut seeded_rng(1, 0)).unwrap();
        save_params(&path, &enc, None).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 100]).unwrap();
        assert!(matches!(
            load_params(&path, None),
            Err(Error::Corrupt { .. })
        ));
    }

    #[test]
    fn different_config_names_both_hashes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.bin");
        let enc = EncoderParams::init(&small(), &mut seeded_rng(1, 0)).unwrap();
        save_params(&path, &enc, None).unwrap();
        let other = EncoderConfig {
            embed_dim: 16,
            ..small()
        };
        let err = load_params(&path, Some(&other)).unwrap_err();
        let msg = err.to_string();
        assert!(
            msg.contains(&small().hash()) && msg.contains(&other.hash()),
            "{msg}"
        );
    }
}
