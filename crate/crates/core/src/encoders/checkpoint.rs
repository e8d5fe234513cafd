//! Checkpoint archive: a plain tar file holding
//!
//! * `manifest.json`: every array's section, name, kind, shape and byte offset,
//! * `payload.bin`: the arrays as consecutive little-endian `f64`,
//! * `encoder_spec.json` and `run_config.toml`.
//!
//! Entries carry fixed metadata so identical contents give identical bytes.

use std::collections::BTreeMap;
use std::io::{Cursor, Read};
use std::path::Path;

use agri_autograd::{array, ParamKind, ParamStore};
use serde::{Deserialize, Serialize};

use super::{EncoderError, EncoderSpec};

pub const FORMAT: &str = "agri-contrast-checkpoint";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrayEntry {
    pub section: String,
    pub name: String,
    pub kind: ParamKind,
    pub shape: Vec<usize>,
    pub dtype: String,
    /// Byte offset into `payload.bin`.
    pub offset: usize,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format: String,
    pub version: u32,
    pub arrays: Vec<ArrayEntry>,
    pub meta: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub encoder_spec: EncoderSpec,
    pub run_config: String,
    pub meta: serde_json::Value,
    /// Named groups of arrays, e.g. `online`, `offline`, `optimizer`.
    pub sections: BTreeMap<String, ParamStore>,
}

impl Checkpoint {
    pub fn new(encoder_spec: EncoderSpec) -> Self {
        Checkpoint {
            encoder_spec,
            run_config: String::new(),
            meta: serde_json::Value::Null,
            sections: BTreeMap::new(),
        }
    }

    pub fn section(&self, name: &str) -> Result<&ParamStore, EncoderError> {
        self.sections
            .get(name)
            .ok_or_else(|| EncoderError::Checkpoint(format!("missing section `{name}`")))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, EncoderError> {
        let mut payload = Vec::new();
        let mut arrays = Vec::new();
        for (section, store) in &self.sections {
            for (name, p) in store.iter() {
                arrays.push(ArrayEntry {
                    section: section.clone(),
                    name: name.clone(),
                    kind: p.kind,
                    shape: p.value.shape().to_vec(),
                    dtype: "f64-le".into(),
                    offset: payload.len(),
                    count: p.value.len(),
                });
                for v in p.value.iter() {
                    payload.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        let manifest = CheckpointManifest {
            format: FORMAT.into(),
            version: FORMAT_VERSION,
            arrays,
            meta: self.meta.clone(),
        };
        let mut builder = tar::Builder::new(Vec::new());
        let files: [(&str, Vec<u8>); 4] = [
            ("manifest.json", serde_json::to_vec_pretty(&manifest)?),
            ("payload.bin", payload),
            ("encoder_spec.json", serde_json::to_vec_pretty(&self.encoder_spec)?),
            ("run_config.toml", self.run_config.as_bytes().to_vec()),
        ];
        for (name, data) in files {
            let mut header = tar::Header::new_gnu();
            header.set_size(data.len() as u64);
            header.set_mode(0o644);
            header.set_mtime(0);
            header.set_uid(0);
            header.set_gid(0);
            header.set_cksum();
            builder.append_data(&mut header, name, data.as_slice())?;
        }
        Ok(builder.into_inner()?)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint, EncoderError> {
        let mut files: BTreeMap<String, Vec<u8>> = BTreeMap::new();
        let mut archive = tar::Archive::new(Cursor::new(bytes));
        for entry in archive.entries()? {
            let mut entry = entry?;
            let name = entry.path()?.to_string_lossy().into_owned();
            let mut data = Vec::new();
            entry.read_to_end(&mut data)?;
            files.insert(name, data);
        }
        let take = |name: &str| {
            files
                .get(name)
                .ok_or_else(|| EncoderError::Checkpoint(format!("archive lacks {name}")))
        };
        let manifest: CheckpointManifest = serde_json::from_slice(take("manifest.json")?)?;
        if manifest.format != FORMAT || manifest.version != FORMAT_VERSION {
            return Err(EncoderError::Checkpoint(format!(
                "unsupported format {} v{}",
                manifest.format, manifest.version
            )));
        }
        let payload = take("payload.bin")?;
        let mut sections: BTreeMap<String, ParamStore> = BTreeMap::new();
        for a in &manifest.arrays {
            let end = a.offset + a.count * 8;
            if end > payload.len() || a.shape.iter().product::<usize>() != a.count {
                return Err(EncoderError::Checkpoint(format!("array {}/{} is corrupt", a.section, a.name)));
            }
            let data = payload[a.offset..end]
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
                .collect();
            sections
                .entry(a.section.clone())
                .or_default()
                .insert(a.name.clone(), array(&a.shape, data), a.kind);
        }
        Ok(Checkpoint {
            encoder_spec: serde_json::from_slice(take("encoder_spec.json")?)?,
            run_config: String::from_utf8_lossy(take("run_config.toml")?).into_owned(),
            meta: manifest.meta,
            sections,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), EncoderError> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Checkpoint, EncoderError> {
        Checkpoint::from_bytes(&std::fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_exact_and_stable() {
        let mut store = ParamStore::new();
        store.insert("a.weight", array(&[2, 3], vec![1.5, -2.0, f64::MIN_POSITIVE, 0.1, 1e300, -0.0]), ParamKind::Weight);
        store.insert("a.running_mean", array(&[3], vec![0.25, 0.5, 0.75]), ParamKind::Buffer);
        let mut ck = Checkpoint::new(EncoderSpec::default());
        ck.run_config = "seed = 3\n".into();
        ck.meta = serde_json::json!({"step": 12});
        ck.sections.insert("online".into(), store);
        let bytes = ck.to_bytes().unwrap();
        assert_eq!(bytes, ck.to_bytes().unwrap());
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, ck);
    }
}
