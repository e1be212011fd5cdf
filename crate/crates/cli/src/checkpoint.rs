//! Checkpoint files: a JSON manifest (format version, model kind, dims,
//! hashes, embedded vocabulary, parameter table) followed by the parameters
//! as little-endian f32, row-major, in manifest order.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use avitopics::aviad::AviadModel;
use avitopics::avijst::{AvijstModel, PiSampling};
use avitopics::avitm::AvitmModel;
use avitopics::corpus::{SeedPrior, Vocabulary};
use avitopics::diffcore::{ParamStore, Tensor2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::config::ModelKind;

const MAGIC: &[u8; 8] = b"AVTCKPT\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("manifest: {0}")]
    Json(#[from] serde_json::Error),
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint format version {0}")]
    BadVersion(u32),
    #[error("file truncated")]
    Truncated,
    #[error("parameter blob holds {actual} bytes, manifest declares {expected}")]
    BlobLength { expected: usize, actual: usize },
    #[error("checkpoint is missing parameter {0}")]
    MissingParam(String),
    #[error("parameter {name}: checkpoint shape {found:?}, model expects {expected:?}")]
    ShapeMismatch {
        name: String,
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("checkpoint holds {found} parameters, model expects {expected}")]
    ParamCount { expected: usize, found: usize },
    #[error("aviad checkpoint carries no seed assignments")]
    MissingSeeds,
    #[error("vocabulary hash mismatch: checkpoint {checkpoint}, provided {provided}")]
    VocabHashMismatch {
        checkpoint: String,
        provided: String,
    },
    #[error("command expects a {expected} checkpoint, found {found}")]
    KindMismatch { expected: String, found: ModelKind },
    #[error("vocabulary: {0}")]
    Vocab(#[from] avitopics::corpus::CorpusError),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SeedEntry {
    pub word: usize,
    pub prior: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format_version: u32,
    pub model: ModelKind,
    pub k: usize,
    pub s: usize,
    pub v: usize,
    pub hidden: Vec<usize>,
    pub alpha: f64,
    pub gamma: f64,
    pub lambda_seed: f64,
    pub lambda_nu: f64,
    pub pi_sampling: PiSampling,
    pub step: u64,
    pub config_hash: String,
    pub vocab_hash: String,
    pub vocabulary: Vec<String>,
    pub seeds: Option<Vec<SeedEntry>>,
    pub params: Vec<ParamEntry>,
}

impl CheckpointManifest {
    pub fn vocabulary(&self) -> Result<Vocabulary, CheckpointError> {
        Ok(Vocabulary::from_terms(self.vocabulary.clone())?)
    }

    pub fn seed_prior(&self) -> Result<SeedPrior, CheckpointError> {
        let entries = self.seeds.as_ref().ok_or(CheckpointError::MissingSeeds)?;
        let assignments: BTreeMap<usize, Vec<f64>> = entries
            .iter()
            .map(|e| (e.word, e.prior.clone()))
            .collect();
        Ok(SeedPrior {
            assignments,
            oov_words: Vec::new(),
            k: self.k,
        })
    }
}

/// Hex SHA-256 over the vocabulary terms joined with newlines.
pub fn vocab_hash(vocab: &Vocabulary) -> String {
    let mut hasher = Sha256::new();
    for term in vocab.terms() {
        hasher.update(term.as_bytes());
        hasher.update(b"\n");
    }
    format!("{:x}", hasher.finalize())
}

pub fn seed_entries(prior: &SeedPrior) -> Vec<SeedEntry> {
    prior
        .assignments
        .iter()
        .map(|(&word, prior)| SeedEntry {
            word,
            prior: prior.clone(),
        })
        .collect()
}

/// Parameter table in store registration order; this is the blob order.
pub fn param_entries(store: &ParamStore) -> Vec<ParamEntry> {
    store
        .ids()
        .map(|id| {
            let (rows, cols) = store.value(id).shape();
            ParamEntry {
                name: store.name(id).to_string(),
                rows,
                cols,
            }
        })
        .collect()
}

pub fn save(
    path: &Path,
    manifest: &CheckpointManifest,
    store: &ParamStore,
) -> Result<(), CheckpointError> {
    let described = param_entries(store);
    assert_eq!(
        manifest.params.len(),
        described.len(),
        "manifest parameter table must describe the store"
    );
    for (m, d) in manifest.params.iter().zip(&described) {
        assert_eq!((m.name.as_str(), m.rows, m.cols), (d.name.as_str(), d.rows, d.cols));
    }

    let manifest_bytes = serde_json::to_vec(manifest)?;
    let blob_len: usize = manifest
        .params
        .iter()
        .map(|p| p.rows * p.cols * 4)
        .sum();

    // write to a sibling temp file, then rename: an aborted run never
    // clobbers the last good checkpoint
    let tmp = path.with_extension("tmp");
    {
        let mut f = std::io::BufWriter::new(std::fs::File::create(&tmp)?);
        f.write_all(MAGIC)?;
        f.write_all(&(manifest_bytes.len() as u64).to_le_bytes())?;
        f.write_all(&manifest_bytes)?;
        f.write_all(&(blob_len as u64).to_le_bytes())?;
        for id in store.ids() {
            for &x in store.value(id).data() {
                f.write_all(&(x as f32).to_le_bytes())?;
            }
        }
        f.flush()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<(CheckpointManifest, ParamStore), CheckpointError> {
    let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 8];
    f.read_exact(&mut magic).map_err(|_| CheckpointError::Truncated)?;
    if &magic != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let mut len8 = [0u8; 8];
    f.read_exact(&mut len8).map_err(|_| CheckpointError::Truncated)?;
    let manifest_len = u64::from_le_bytes(len8) as usize;
    let mut manifest_bytes = vec![0u8; manifest_len];
    f.read_exact(&mut manifest_bytes)
        .map_err(|_| CheckpointError::Truncated)?;
    let manifest: CheckpointManifest = serde_json::from_slice(&manifest_bytes)?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(CheckpointError::BadVersion(manifest.format_version));
    }

    f.read_exact(&mut len8).map_err(|_| CheckpointError::Truncated)?;
    let declared = u64::from_le_bytes(len8) as usize;
    let expected: usize = manifest.params.iter().map(|p| p.rows * p.cols * 4).sum();
    if declared != expected {
        return Err(CheckpointError::BlobLength {
            expected,
            actual: declared,
        });
    }
    let mut blob = Vec::with_capacity(expected);
    f.read_to_end(&mut blob)?;
    if blob.len() != expected {
        return Err(CheckpointError::BlobLength {
            expected,
            actual: blob.len(),
        });
    }

    let mut store = ParamStore::new();
    let mut offset = 0;
    for p in &manifest.params {
        let n = p.rows * p.cols;
        let mut data = Vec::with_capacity(n);
        for i in 0..n {
            let at = offset + i * 4;
            let bits: [u8; 4] = blob[at..at + 4].try_into().expect("bounds checked");
            data.push(f32::from_le_bytes(bits) as f64);
        }
        offset += n * 4;
        store.register(&p.name, Tensor2::from_vec(p.rows, p.cols, data));
    }
    Ok((manifest, store))
}

pub enum TrainedModel {
    Avitm(AvitmModel),
    Aviad(AviadModel),
    Avijst(AvijstModel),
}

impl TrainedModel {
    pub fn kind(&self) -> ModelKind {
        match self {
            TrainedModel::Avitm(_) => ModelKind::Avitm,
            TrainedModel::Aviad(_) => ModelKind::Aviad,
            TrainedModel::Avijst(_) => ModelKind::Avijst,
        }
    }

    pub fn store(&self) -> &ParamStore {
        match self {
            TrainedModel::Avitm(m) => &m.store,
            TrainedModel::Aviad(m) => &m.base.store,
            TrainedModel::Avijst(m) => &m.store,
        }
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        match self {
            TrainedModel::Avitm(m) => &mut m.store,
            TrainedModel::Aviad(m) => &mut m.base.store,
            TrainedModel::Avijst(m) => &mut m.store,
        }
    }
}

/// Instantiate the model a manifest describes and install the stored values.
pub fn rebuild_model(
    manifest: &CheckpointManifest,
    loaded: &ParamStore,
) -> Result<TrainedModel, CheckpointError> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut model = match manifest.model {
        ModelKind::Avitm => TrainedModel::Avitm(
            AvitmModel::new(manifest.k, manifest.v, &manifest.hidden, manifest.alpha, &mut rng)
                .expect("manifest alpha validated at save time"),
        ),
        ModelKind::Aviad => {
            let base = AvitmModel::new(
                manifest.k,
                manifest.v,
                &manifest.hidden,
                manifest.alpha,
                &mut rng,
            )
            .expect("manifest alpha validated at save time");
            let prior = manifest.seed_prior()?;
            TrainedModel::Aviad(AviadModel::new(base, prior, manifest.lambda_seed))
        }
        ModelKind::Avijst => TrainedModel::Avijst(
            AvijstModel::new(
                manifest.k,
                manifest.s,
                manifest.v,
                &manifest.hidden,
                manifest.alpha,
                manifest.gamma,
                manifest.lambda_nu,
                manifest.pi_sampling,
                &mut rng,
            )
            .expect("manifest alpha/gamma validated at save time"),
        ),
    };

    let store = model.store_mut();
    if loaded.len() != store.len() {
        return Err(CheckpointError::ParamCount {
            expected: store.len(),
            found: loaded.len(),
        });
    }
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let name = store.name(id).to_string();
        let src = loaded
            .find(&name)
            .ok_or_else(|| CheckpointError::MissingParam(name.clone()))?;
        let value = loaded.value(src);
        if value.shape() != store.value(id).shape() {
            return Err(CheckpointError::ShapeMismatch {
                name,
                expected: store.value(id).shape(),
                found: value.shape(),
            });
        }
        *store.value_mut(id) = value.clone();
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use avitopics::corpus::Vocabulary;

    fn toy_vocab(v: usize) -> Vocabulary {
        Vocabulary::from_terms((0..v).map(|i| format!("w{i}")).collect()).unwrap()
    }

    fn manifest_for(
        model: ModelKind,
        k: usize,
        s: usize,
        v: usize,
        hidden: Vec<usize>,
        store: &ParamStore,
        seeds: Option<Vec<SeedEntry>>,
    ) -> CheckpointManifest {
        CheckpointManifest {
            format_version: FORMAT_VERSION,
            model,
            k,
            s,
            v,
            hidden,
            alpha: 0.1,
            gamma: 1.0,
            lambda_seed: 1.0,
            lambda_nu: 1.0,
            pi_sampling: PiSampling::Deterministic,
            step: 7,
            config_hash: "cfg".into(),
            vocab_hash: vocab_hash(&toy_vocab(v)),
            vocabulary: toy_vocab(v).terms().to_vec(),
            seeds,
            params: param_entries(store),
        }
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let model = AvitmModel::new(2, 6, &[4], 0.1, &mut rng).unwrap();
        let manifest = manifest_for(ModelKind::Avitm, 2, 1, 6, vec![4], &model.store, None);
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.ckpt");
        let p2 = dir.path().join("b.ckpt");
        save(&p1, &manifest, &model.store).unwrap();
        let (loaded_manifest, loaded_store) = load(&p1).unwrap();
        save(&p2, &loaded_manifest, &loaded_store).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn loaded_values_are_f32_rounded_originals() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let model = AvitmModel::new(2, 5, &[3], 0.1, &mut rng).unwrap();
        let manifest = manifest_for(ModelKind::Avitm, 2, 1, 5, vec![3], &model.store, None);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save(&path, &manifest, &model.store).unwrap();
        let (_, loaded) = load(&path).unwrap();
        for id in model.store.ids() {
            let orig = model.store.value(id);
            let got = loaded.find(model.store.name(id)).unwrap();
            let got = loaded.value(got);
            assert_eq!(orig.shape(), got.shape());
            for (a, b) in orig.data().iter().zip(got.data()) {
                assert_eq!((*a as f32) as f64, *b);
            }
        }
    }

    #[test]
    fn rejects_corruption() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let model = AvitmModel::new(2, 4, &[3], 0.1, &mut rng).unwrap();
        let manifest = manifest_for(ModelKind::Avitm, 2, 1, 4, vec![3], &model.store, None);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save(&path, &manifest, &model.store).unwrap();

        let bytes = std::fs::read(&path).unwrap();
        let bad_magic = dir.path().join("bad1.ckpt");
        let mut b = bytes.clone();
        b[0] = b'X';
        std::fs::write(&bad_magic, &b).unwrap();
        assert!(matches!(load(&bad_magic), Err(CheckpointError::BadMagic)));

        let truncated = dir.path().join("bad2.ckpt");
        std::fs::write(&truncated, &bytes[..bytes.len() - 5]).unwrap();
        assert!(matches!(
            load(&truncated),
            Err(CheckpointError::BlobLength { .. })
        ));
    }

    #[test]
    fn rebuild_restores_every_model_kind() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let dir = tempfile::tempdir().unwrap();

        let base = AvitmModel::new(2, 6, &[4], 0.1, &mut rng).unwrap();
        let mut assignments = BTreeMap::new();
        assignments.insert(1usize, vec![1.0, 0.0]);
        assignments.insert(4usize, vec![0.0, 1.0]);
        let prior = SeedPrior {
            assignments,
            oov_words: vec![],
            k: 2,
        };
        let aviad = AviadModel::new(base, prior, 1.0);
        let manifest = manifest_for(
            ModelKind::Aviad,
            2,
            1,
            6,
            vec![4],
            &aviad.base.store,
            Some(seed_entries(&aviad.seed)),
        );
        let path = dir.path().join("aviad.ckpt");
        save(&path, &manifest, &aviad.base.store).unwrap();
        let (m, s) = load(&path).unwrap();
        match rebuild_model(&m, &s).unwrap() {
            TrainedModel::Aviad(rebuilt) => {
                assert_eq!(rebuilt.seed.assignments, aviad.seed.assignments);
                assert_eq!(rebuilt.lambda_seed, 1.0);
                for id in rebuilt.base.store.ids() {
                    let name = rebuilt.base.store.name(id).to_string();
                    let orig = aviad.base.store.find(&name).unwrap();
                    for (a, b) in aviad
                        .base
                        .store
                        .value(orig)
                        .data()
                        .iter()
                        .zip(rebuilt.base.store.value(id).data())
                    {
                        assert_eq!((*a as f32) as f64, *b);
                    }
                }
            }
            _ => panic!("wrong kind"),
        }

        let jst = AvijstModel::new(2, 2, 6, &[4], 0.1, 1.0, 1.0, PiSampling::Deterministic, &mut rng)
            .unwrap();
        let manifest = manifest_for(ModelKind::Avijst, 2, 2, 6, vec![4], &jst.store, None);
        let path = dir.path().join("jst.ckpt");
        save(&path, &manifest, &jst.store).unwrap();
        let (m, s) = load(&path).unwrap();
        match rebuild_model(&m, &s).unwrap() {
            TrainedModel::Avijst(rebuilt) => {
                assert_eq!(rebuilt.s, 2);
                assert_eq!(rebuilt.store.len(), jst.store.len());
            }
            _ => panic!("wrong kind"),
        }
    }

    #[test]
    fn rebuild_rejects_mismatched_store() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let model = AvitmModel::new(2, 4, &[3], 0.1, &mut rng).unwrap();
        let manifest = manifest_for(ModelKind::Avitm, 2, 1, 4, vec![3], &model.store, None);
        let mut wrong = ParamStore::new();
        wrong.register("nonsense", Tensor2::zeros(1, 1));
        assert!(matches!(
            rebuild_model(&manifest, &wrong),
            Err(CheckpointError::ParamCount { .. })
        ));
    }
}
