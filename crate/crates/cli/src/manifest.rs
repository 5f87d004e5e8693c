//! Run manifests and the digest that stamps every output file.
//!
//! The digest is computed over the resolved run configuration, not the
//! raw command line, so two invocations that resolve to the same
//! semantics (for example a time objective with equal per-bucket
//! coefficients and the plain size objective) produce byte-identical
//! outputs.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::{CliError, CliResult};
use greco_core::Error;

#[derive(Debug, Serialize)]
pub struct RunManifest<C: Serialize> {
    pub tool: String,
    pub command: String,
    pub manifest_digest: String,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    pub config: C,
}

impl<C: Serialize> RunManifest<C> {
    /// Builds a manifest around a resolved config; the digest covers
    /// only `config`, never the command line or file paths.
    pub fn new(config: C) -> CliResult<Self> {
        let manifest_digest = digest_of(&config)?;
        Ok(Self {
            tool: format!("greco {}", env!("CARGO_PKG_VERSION")),
            command: std::env::args().skip(1).collect::<Vec<_>>().join(" "),
            manifest_digest,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            config,
        })
    }

    pub fn record_input(&mut self, role: &str, path: &Path) -> CliResult<String> {
        let digest = sha256_file(path)?;
        self.inputs.insert(role.to_string(), digest.clone());
        Ok(digest)
    }

    pub fn record_output(&mut self, role: &str, path: &Path) -> CliResult<()> {
        let digest = sha256_file(path)?;
        self.outputs.insert(role.to_string(), digest);
        Ok(())
    }

    pub fn write(&self, path: &Path) -> CliResult<()> {
        let text = toml::to_string(self)
            .map_err(|e| CliError::Core(Error::InvalidParameter(format!("manifest: {e}"))))?;
        std::fs::write(path, text).map_err(|e| CliError::Core(e.into()))
    }
}

/// SHA-256 over the canonical TOML form of a value.
pub fn digest_of<T: Serialize>(value: &T) -> CliResult<String> {
    let text = toml::to_string(value)
        .map_err(|e| CliError::Core(Error::InvalidParameter(format!("digest input: {e}"))))?;
    Ok(format!("{:x}", Sha256::digest(text.as_bytes())))
}

pub fn sha256_file(path: &Path) -> CliResult<String> {
    let bytes = std::fs::read(path).map_err(|e| {
        CliError::Core(Error::InvalidParameter(format!(
            "{}: {e}",
            path.display()
        )))
    })?;
    Ok(format!("{:x}", Sha256::digest(&bytes)))
}

/// `plan.toml` gets its manifest at `plan.manifest.toml`.
pub fn manifest_path(out: &Path) -> PathBuf {
    out.with_extension("manifest.toml")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Serialize)]
    struct Cfg {
        seed: u64,
        weights: Vec<f64>,
    }

    #[test]
    fn digest_depends_only_on_config() {
        let a = Cfg {
            seed: 1,
            weights: vec![1.0, 1.0],
        };
        let b = Cfg {
            seed: 1,
            weights: vec![1.0, 1.0],
        };
        let c = Cfg {
            seed: 1,
            weights: vec![1.0, 0.5],
        };
        assert_eq!(digest_of(&a).unwrap(), digest_of(&b).unwrap());
        assert_ne!(digest_of(&a).unwrap(), digest_of(&c).unwrap());
    }

    #[test]
    fn manifest_serializes_with_digest() {
        let m = RunManifest::new(Cfg {
            seed: 7,
            weights: vec![1.0],
        })
        .unwrap();
        let text = toml::to_string(&m).unwrap();
        assert!(text.contains(&m.manifest_digest));
        assert!(text.contains("seed = 7"));
    }

    #[test]
    fn manifest_path_is_a_sibling() {
        assert_eq!(
            manifest_path(Path::new("/tmp/x/plan.toml")),
            Path::new("/tmp/x/plan.manifest.toml")
        );
    }
}
