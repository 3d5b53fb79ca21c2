use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{read_hdt, write_hdt, Tensor};

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format: String,
    parameters: BTreeMap<String, Vec<usize>>,
}

/// Writes one `<name>.hdt` per tensor plus `manifest.json`.
pub fn save_checkpoint(dir: impl AsRef<Path>, named: &BTreeMap<String, Tensor>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    for (name, t) in named {
        write_hdt(t, dir.join(format!("{name}.hdt")))?;
    }
    let manifest = Manifest {
        format: "HDT1".into(),
        parameters: named
            .iter()
            .map(|(k, t)| (k.clone(), t.shape().to_vec()))
            .collect(),
    };
    fs::write(
        dir.join(MANIFEST),
        serde_json::to_string_pretty(&manifest)? + "\n",
    )?;
    Ok(())
}

/// Reads every tensor listed in the manifest, checking shapes.
pub fn load_checkpoint(dir: impl AsRef<Path>) -> Result<BTreeMap<String, Tensor>> {
    let dir = dir.as_ref();
    let path = dir.join(MANIFEST);
    if !path.exists() {
        return Err(Error::MissingArtifact(path));
    }
    let manifest: Manifest = serde_json::from_str(&fs::read_to_string(&path)?)?;
    let mut out = BTreeMap::new();
    for (name, shape) in manifest.parameters {
        let file = dir.join(format!("{name}.hdt"));
        if !file.exists() {
            return Err(Error::MissingArtifact(file));
        }
        let t = read_hdt(&file)?;
        if t.shape() != shape.as_slice() {
            return Err(Error::format(
                "checkpoint",
                file,
                format!("shape {:?} disagrees with manifest {shape:?}", t.shape()),
            ));
        }
        out.insert(name, t);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_missing() {
        let dir = tempfile::tempdir().unwrap();
        let mut named = BTreeMap::new();
        named.insert("coarse.layer01.q_proj".to_string(), Tensor::eye(3));
        named.insert(
            "embed".to_string(),
            Tensor::from_fn(&[2, 5], |i| i as f64 * 0.1),
        );
        save_checkpoint(dir.path(), &named).unwrap();
        assert!(dir.path().join("coarse.layer01.q_proj.hdt").exists());
        assert_eq!(load_checkpoint(dir.path()).unwrap(), named);
        fs::remove_file(dir.path().join("embed.hdt")).unwrap();
        assert!(matches!(
            load_checkpoint(dir.path()),
            Err(Error::MissingArtifact(_))
        ));
    }
}
