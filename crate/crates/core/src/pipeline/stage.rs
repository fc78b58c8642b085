use std::fs;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::Result;

/// Provenance record written next to a stage's outputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: String,
    /// Global pipeline seed.
    pub seed: u64,
    /// Stage-relevant slice of the resolved config, including derived seeds.
    pub config: serde_json::Value,
    /// `(path relative to the run dir, sha256)` of every input artifact.
    pub inputs: Vec<(String, String)>,
    pub outputs: Vec<(String, String)>,
    /// `(stage, sha256 of its stage.json)` of every upstream stage.
    pub upstream: Vec<(String, String)>,
}

impl StageRecord {
    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_slice(&fs::read(path)?)?)
    }

    /// Re-hashes the recorded outputs.
    pub fn verify_outputs(&self, root: &Path) -> std::result::Result<(), String> {
        for (rel, want) in &self.outputs {
            match hash_file(&root.join(rel)) {
                Ok(h) if &h == want => {}
                Ok(_) => return Err(format!("artifact {rel} changed since it was produced")),
                Err(e) => return Err(format!("artifact {rel} unreadable: {e}")),
            }
        }
        Ok(())
    }
}

pub fn hash_file(path: &Path) -> Result<String> {
    let mut f = fs::File::open(path)?;
    let mut h = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf)?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(hex::encode(h.finalize()))
}

pub(crate) fn hash_json(v: &serde_json::Value) -> String {
    hex::encode(Sha256::digest(v.to_string().as_bytes()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_digest_and_tamper_detection() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.txt");
        fs::write(&p, b"abc").unwrap();
        assert_eq!(
            hash_file(&p).unwrap(),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
        let rec = StageRecord {
            stage: "x".into(),
            seed: 0,
            config: serde_json::Value::Null,
            inputs: vec![],
            outputs: vec![("a.txt".into(), hash_file(&p).unwrap())],
            upstream: vec![],
        };
        assert!(rec.verify_outputs(dir.path()).is_ok());
        fs::write(&p, b"abd").unwrap();
        assert!(rec.verify_outputs(dir.path()).is_err());
    }
}
