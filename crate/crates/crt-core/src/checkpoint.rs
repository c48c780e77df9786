//! Self-contained checkpoint files: a JSON manifest (format version, model
//! configuration, epoch, base seed, tensor directory) followed by one blob
//! of little-endian f32 parameter values. Training randomness is derived
//! functionally from the seed and epoch, so those two fields are the whole
//! resumable state.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{CrtError, Result};
use crate::model::{CrtModel, ModelConfig};

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"CRTCKPT\0";

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Element offset into the f32 blob.
    pub offset: u64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub model: ModelConfig,
    /// Epochs already completed when this checkpoint was written.
    pub epoch: usize,
    /// Base seed; together with `epoch` this replays or resumes the run.
    pub seed: u64,
    pub tensors: Vec<TensorEntry>,
}

pub fn save(path: &Path, model: &CrtModel, epoch: usize, seed: u64) -> Result<()> {
    let mut tensors = Vec::with_capacity(model.params.len());
    let mut offset = 0u64;
    for (name, t) in model.params.names().iter().zip(model.params.tensors()) {
        tensors.push(TensorEntry { name: name.clone(), shape: t.shape().to_vec(), offset });
        offset += t.numel() as u64;
    }
    let manifest = Manifest { format_version: FORMAT_VERSION, model: model.cfg, epoch, seed, tensors };
    let json = serde_json::to_vec(&manifest)?;

    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&(json.len() as u64).to_le_bytes())?;
    w.write_all(&json)?;
    for t in model.params.tensors() {
        for &v in t.data() {
            w.write_all(&(v as f32).to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads just the manifest, without materializing parameters.
pub fn read_manifest(path: &Path) -> Result<Manifest> {
    let mut r = BufReader::new(File::open(path)?);
    read_manifest_from(&mut r)
}

fn read_manifest_from(r: &mut impl Read) -> Result<Manifest> {
    let mut magic = [0u8; 8];
    read_exact_or_truncated(r, &mut magic, 8)?;
    if &magic != MAGIC {
        return Err(CrtError::CheckpointShape("file does not start with the checkpoint magic".into()));
    }
    let mut v4 = [0u8; 4];
    read_exact_or_truncated(r, &mut v4, 12)?;
    let found = u32::from_le_bytes(v4);
    if found != FORMAT_VERSION {
        return Err(CrtError::CheckpointVersion { found, expected: FORMAT_VERSION });
    }
    let mut l8 = [0u8; 8];
    read_exact_or_truncated(r, &mut l8, 20)?;
    let json_len = u64::from_le_bytes(l8) as usize;
    let mut json = vec![0u8; json_len];
    read_exact_or_truncated(r, &mut json, 20 + json_len as u64)?;
    let manifest: Manifest = serde_json::from_slice(&json)?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(CrtError::CheckpointVersion {
            found: manifest.format_version,
            expected: FORMAT_VERSION,
        });
    }
    Ok(manifest)
}

fn read_exact_or_truncated(r: &mut impl Read, buf: &mut [u8], need: u64) -> Result<()> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            CrtError::CheckpointTruncated { need, have: 0 }
        } else {
            CrtError::Io(e)
        }
    })
}

pub fn load(path: &Path) -> Result<(CrtModel, Manifest)> {
    let mut r = BufReader::new(File::open(path)?);
    let manifest = read_manifest_from(&mut r)?;
    let mut blob = Vec::new();
    r.read_to_end(&mut blob)?;
    let total_elems: u64 = manifest.tensors.iter().map(|t| t.shape.iter().product::<usize>() as u64).sum();
    if (blob.len() as u64) < total_elems * 4 {
        return Err(CrtError::CheckpointTruncated { need: total_elems * 4, have: blob.len() as u64 });
    }

    // rebuild the parameter skeleton from the stored config, then overwrite
    let mut model = CrtModel::init(manifest.model, 0)?;
    if model.params.len() != manifest.tensors.len() {
        return Err(CrtError::CheckpointShape(format!(
            "config rebuilds {} tensors, manifest lists {}",
            model.params.len(),
            manifest.tensors.len()
        )));
    }
    for (i, entry) in manifest.tensors.iter().enumerate() {
        let name = &model.params.names()[i].clone();
        if name != &entry.name {
            return Err(CrtError::CheckpointShape(format!(
                "tensor {i} is {name} in this build but {} in the file",
                entry.name
            )));
        }
        let t = &mut model.params.tensors_mut()[i];
        if t.shape() != entry.shape.as_slice() {
            return Err(CrtError::CheckpointShape(format!(
                "{name}: shape {:?} in this build, {:?} in the file",
                t.shape(),
                entry.shape
            )));
        }
        let start = entry.offset as usize * 4;
        for (j, v) in t.data_mut().iter_mut().enumerate() {
            let b = start + j * 4;
            *v = f32::from_le_bytes([blob[b], blob[b + 1], blob[b + 2], blob[b + 3]]) as f64;
        }
    }
    Ok((model, manifest))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::AblationMode;
    use crate::numerics::Graph;
    use crate::sequencing::{assemble, make_patches};
    use crate::tensor::Tensor;
    use rand::{Rng, SeedableRng};

    fn micro() -> CrtModel {
        let cfg = ModelConfig {
            dim: 8,
            encoder_layers: 1,
            decoder_layers: 1,
            heads: 2,
            cnn_width: 4,
            cnn_blocks: 1,
            mlp_ratio: 1.0,
            patch_len: 4,
            channels: 1,
            n_max: 16,
            num_classes: 3,
            ablation: AblationMode::Full,
        };
        CrtModel::init(cfg, 11).unwrap()
    }

    fn forward_fingerprint(model: &CrtModel) -> Vec<f64> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let mut series = Tensor::zeros(vec![1, 32]);
        for v in series.data_mut() {
            *v = rng.gen::<f64>();
        }
        let ps = make_patches(&assemble(&series).unwrap(), 4).unwrap();
        let mut g = Graph::new();
        let bp = model.bind(&mut g, false).unwrap();
        let refs = vec![&ps];
        let emb = model.embed_patches(&mut g, &bp, &refs).unwrap();
        let enc = model.encode(&mut g, &bp, &emb).unwrap();
        let logits = model.classify(&mut g, &bp, enc.reprs).unwrap();
        g.value(logits).data().to_vec()
    }

    #[test]
    fn round_trip_preserves_forward_outputs() {
        let model = micro();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save(&path, &model, 7, 99).unwrap();
        let (restored, manifest) = load(&path).unwrap();
        assert_eq!(manifest.epoch, 7);
        assert_eq!(manifest.seed, 99);
        assert_eq!(manifest.format_version, FORMAT_VERSION);
        let a = forward_fingerprint(&model);
        let b = forward_fingerprint(&restored);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-6, "{x} vs {y}");
        }
    }

    #[test]
    fn manifest_lists_every_parameter_once() {
        let model = micro();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save(&path, &model, 0, 0).unwrap();
        let manifest = read_manifest(&path).unwrap();
        assert_eq!(manifest.tensors.len(), model.params.len());
        let mut names: Vec<&str> = manifest.tensors.iter().map(|t| t.name.as_str()).collect();
        names.sort_unstable();
        names.dedup();
        assert_eq!(names.len(), model.params.len(), "no duplicate tensor names");
        // offsets are contiguous
        let mut expect = 0u64;
        for t in &manifest.tensors {
            assert_eq!(t.offset, expect);
            expect += t.shape.iter().product::<usize>() as u64;
        }
    }

    #[test]
    fn version_mismatch_is_a_distinct_error() {
        let model = micro();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save(&path, &model, 0, 0).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[8] = 250; // format version little-endian low byte
        std::fs::write(&path, &bytes).unwrap();
        match load(&path) {
            Err(CrtError::CheckpointVersion { found, expected }) => {
                assert_eq!(found, 250);
                assert_eq!(expected, FORMAT_VERSION);
            }
            Err(other) => panic!("expected version error, got {other}"),
            Ok(_) => panic!("expected version error, load succeeded"),
        }
    }

    #[test]
    fn truncated_blob_is_a_distinct_error() {
        let model = micro();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save(&path, &model, 0, 0).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 64]).unwrap();
        match load(&path) {
            Err(CrtError::CheckpointTruncated { need, have }) => {
                assert!(need > have);
            }
            Err(other) => panic!("expected truncation error, got {other}"),
            Ok(_) => panic!("expected truncation error, load succeeded"),
        }
    }

    #[test]
    fn wrong_config_shape_is_a_distinct_error() {
        let model = micro();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save(&path, &model, 0, 0).unwrap();
        // corrupt the manifest: claim a different hidden width
        let bytes = std::fs::read(&path).unwrap();
        let json_len = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        let json = String::from_utf8(bytes[20..20 + json_len].to_vec()).unwrap();
        let json = json.replace("\"cnn_width\":4", "\"cnn_width\":6");
        let mut out = Vec::new();
        out.extend_from_slice(&bytes[..12]);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(json.as_bytes());
        out.extend_from_slice(&bytes[20 + json_len..]);
        std::fs::write(&path, &out).unwrap();
        match load(&path) {
            Err(CrtError::CheckpointShape(msg)) => {
                assert!(msg.contains("shape"), "{msg}");
            }
            Err(other) => panic!("expected shape error, got {other}"),
            Ok(_) => panic!("expected shape error, load succeeded"),
        }
    }
}
