//! Named parameter store and the single-file checkpoint container:
//! a versioned JSON manifest (names, shapes, frozen/trainable flags,
//! metadata) followed by a raw little-endian f64 blob.

use std::cell::RefCell;
use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::{Mat, Tape, Var};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"ATSGCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug)]
pub struct Param {
    pub value: Mat,
    pub trainable: bool,
}

/// Ordered collection of named parameters. Iteration order is insertion
/// order, which keeps checkpoints and optimizer sweeps deterministic.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    entries: Vec<(String, Param)>,
    index: HashMap<String, usize>,
}

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    BadVersion(u32),
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error("unknown parameter {0}")]
    UnknownParam(String),
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, value: Mat, trainable: bool) {
        assert!(
            !self.index.contains_key(name),
            "parameter {name} inserted twice"
        );
        self.index.insert(name.to_string(), self.entries.len());
        self.entries.push((name.to_string(), Param { value, trainable }));
    }

    pub fn get(&self, name: &str) -> &Mat {
        let idx = *self.index.get(name).unwrap_or_else(|| panic!("unknown parameter {name}"));
        &self.entries[idx].1.value
    }

    pub fn try_get(&self, name: &str) -> Option<&Mat> {
        self.index.get(name).map(|&i| &self.entries[i].1.value)
    }

    pub fn set_value(&mut self, name: &str, value: Mat) {
        let idx = *self.index.get(name).unwrap_or_else(|| panic!("unknown parameter {name}"));
        let param = &mut self.entries[idx].1;
        assert_eq!(param.value.rows(), value.rows(), "shape change on {name}");
        assert_eq!(param.value.cols(), value.cols(), "shape change on {name}");
        param.value = value;
    }

    pub fn set_trainable(&mut self, name: &str, trainable: bool) {
        let idx = *self.index.get(name).unwrap_or_else(|| panic!("unknown parameter {name}"));
        self.entries[idx].1.trainable = trainable;
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn is_trainable(&self, name: &str) -> bool {
        self.index.get(name).map(|&i| self.entries[i].1.trainable).unwrap_or(false)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param)> {
        self.entries.iter().map(|(n, p)| (n.as_str(), p))
    }

    pub fn trainable_names(&self) -> Vec<String> {
        self.entries
            .iter()
            .filter(|(_, p)| p.trainable)
            .map(|(n, _)| n.clone())
            .collect()
    }

    /// Bit-level equality of one parameter between two stores.
    pub fn param_bits_equal(&self, other: &ParamStore, name: &str) -> bool {
        let a = self.get(name);
        let b = other.get(name);
        a.rows() == b.rows()
            && a.cols() == b.cols()
            && a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits())
    }

    pub fn save(&self, path: &Path, meta: &BTreeMap<String, String>) -> Result<(), CheckpointError> {
        #[derive(Serialize)]
        struct ManifestEntry<'a> {
            name: &'a str,
            rows: usize,
            cols: usize,
            trainable: bool,
        }
        #[derive(Serialize)]
        struct Manifest<'a> {
            version: u32,
            meta: &'a BTreeMap<String, String>,
            params: Vec<ManifestEntry<'a>>,
        }
        let manifest = Manifest {
            version: CHECKPOINT_VERSION,
            meta,
            params: self
                .entries
                .iter()
                .map(|(n, p)| ManifestEntry {
                    name: n,
                    rows: p.value.rows(),
                    cols: p.value.cols(),
                    trainable: p.trainable,
                })
                .collect(),
        };
        let manifest_json = serde_json::to_vec(&manifest).expect("manifest serializes");
        let mut file = std::fs::File::create(path)?;
        file.write_all(CHECKPOINT_MAGIC)?;
        file.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        file.write_all(&(manifest_json.len() as u32).to_le_bytes())?;
        file.write_all(&manifest_json)?;
        for (_, p) in &self.entries {
            for v in p.value.data() {
                file.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<(Self, BTreeMap<String, String>), CheckpointError> {
        #[derive(Deserialize)]
        struct ManifestEntry {
            name: String,
            rows: usize,
            cols: usize,
            trainable: bool,
        }
        #[derive(Deserialize)]
        struct Manifest {
            version: u32,
            meta: BTreeMap<String, String>,
            params: Vec<ManifestEntry>,
        }
        let mut file = std::fs::File::open(path)?;
        let mut magic = [0u8; 8];
        file.read_exact(&mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let mut word = [0u8; 4];
        file.read_exact(&mut word)?;
        let version = u32::from_le_bytes(word);
        if version != CHECKPOINT_VERSION {
            return Err(CheckpointError::BadVersion(version));
        }
        file.read_exact(&mut word)?;
        let manifest_len = u32::from_le_bytes(word) as usize;
        let mut manifest_buf = vec![0u8; manifest_len];
        file.read_exact(&mut manifest_buf)?;
        let manifest: Manifest = serde_json::from_slice(&manifest_buf)
            .map_err(|e| CheckpointError::Corrupt(e.to_string()))?;
        if manifest.version != version {
            return Err(CheckpointError::Corrupt(format!(
                "manifest version {} disagrees with header {version}",
                manifest.version
            )));
        }
        let mut store = ParamStore::new();
        let mut blob = Vec::new();
        file.read_to_end(&mut blob)?;
        let mut offset = 0usize;
        for entry in manifest.params {
            let count = entry.rows * entry.cols;
            let need = count * 8;
            if blob.len() < offset + need {
                return Err(CheckpointError::Corrupt(format!(
                    "blob too short for {}",
                    entry.name
                )));
            }
            let mut data = Vec::with_capacity(count);
            for i in 0..count {
                let mut bytes = [0u8; 8];
                bytes.copy_from_slice(&blob[offset + i * 8..offset + i * 8 + 8]);
                data.push(f64::from_le_bytes(bytes));
            }
            offset += need;
            store.insert(&entry.name, Mat::from_vec(entry.rows, entry.cols, data), entry.trainable);
        }
        Ok((store, manifest.meta))
    }
}

/// Binds a store to a tape for one forward pass: every parameter becomes a
/// single leaf, so gradient contributions from repeated uses accumulate.
pub struct TapeBinding<'t, 's> {
    tape: &'t Tape,
    store: &'s ParamStore,
    vars: RefCell<HashMap<String, Var<'t>>>,
}

impl<'t, 's> TapeBinding<'t, 's> {
    pub fn new(tape: &'t Tape, store: &'s ParamStore) -> Self {
        Self { tape, store, vars: RefCell::new(HashMap::new()) }
    }

    pub fn var(&self, name: &str) -> Var<'t> {
        if let Some(v) = self.vars.borrow().get(name) {
            return *v;
        }
        let var = self.tape.leaf(self.store.get(name).clone());
        self.vars.borrow_mut().insert(name.to_string(), var);
        var
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn store(&self) -> &'s ParamStore {
        self.store
    }

    /// Leaf vars for all bound parameters, for gradient collection.
    pub fn bound(&self) -> Vec<(String, Var<'t>)> {
        let mut out: Vec<(String, Var<'t>)> =
            self.vars.borrow().iter().map(|(n, v)| (n.clone(), *v)).collect();
        out.sort_by(|a, b| a.0.cmp(&b.0));
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn checkpoint_roundtrip_is_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::new();
        store.insert("a.w", Mat::randn(&mut rng, 3, 4, 1.0), true);
        store.insert("enc.b", Mat::randn(&mut rng, 1, 7, 0.5), false);
        let dir = std::env::temp_dir().join(format!("attrseg-ckpt-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("m.ckpt");
        let mut meta = BTreeMap::new();
        meta.insert("iteration".to_string(), "12".to_string());
        store.save(&path, &meta).unwrap();
        let (loaded, loaded_meta) = ParamStore::load(&path).unwrap();
        assert_eq!(loaded_meta.get("iteration").unwrap(), "12");
        assert!(store.param_bits_equal(&loaded, "a.w"));
        assert!(store.param_bits_equal(&loaded, "enc.b"));
        let names: Vec<&str> = loaded.names().collect();
        assert_eq!(names, vec!["a.w", "enc.b"]);
        assert!(!loaded.iter().find(|(n, _)| *n == "enc.b").unwrap().1.trainable);
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn bad_magic_rejected() {
        let dir = std::env::temp_dir().join(format!("attrseg-ckpt-bad-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("bad.ckpt");
        std::fs::write(&path, b"NOTACKPT").unwrap();
        assert!(matches!(ParamStore::load(&path), Err(CheckpointError::BadMagic)));
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn binding_returns_one_leaf_per_param() {
        let mut store = ParamStore::new();
        store.insert("w", Mat::identity(2), true);
        let tape = Tape::new();
        let binding = TapeBinding::new(&tape, &store);
        let a = binding.var("w");
        let b = binding.var("w");
        let x = tape.leaf(Mat::from_vec(1, 2, vec![1.0, 2.0]));
        // Using the same leaf twice must accumulate both contributions.
        let loss = x.matmul(a).add(x.matmul(b)).sum_all();
        let grads = loss.backward();
        let gw = grads.get(a).unwrap();
        assert_eq!(gw.get(0, 0), 2.0);
    }
}
