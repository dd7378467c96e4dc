//! Run manifests: enough to reproduce any run bit-identically (the
//! wall-clock duration is informational and is the one field that varies
//! between identical runs).

use std::path::{Path, PathBuf};
use std::time::Instant;

use sha2::{Digest, Sha256};

use crate::jsonout::Jv;

pub struct ManifestBuilder {
    subcommand: String,
    parameters: Jv,
    root_seed: u64,
    inputs: Vec<(String, String)>,
    outputs: Vec<String>,
    started: Instant,
}

impl ManifestBuilder {
    pub fn new(subcommand: &str, parameters: Jv, root_seed: u64) -> Self {
        Self {
            subcommand: subcommand.to_string(),
            parameters,
            root_seed,
            inputs: Vec::new(),
            outputs: Vec::new(),
            started: Instant::now(),
        }
    }

    pub fn record_input(&mut self, path: &Path) -> std::io::Result<()> {
        let bytes = std::fs::read(path)?;
        let digest = Sha256::digest(&bytes);
        let hex: String = digest.iter().map(|b| format!("{b:02x}")).collect();
        self.inputs.push((path.display().to_string(), hex));
        Ok(())
    }

    pub fn record_output(&mut self, path: &Path) {
        self.outputs.push(path.display().to_string());
    }

    pub fn write(self, out_dir: &Path) -> std::io::Result<PathBuf> {
        let mut inputs = Vec::new();
        for (path, sha256) in &self.inputs {
            inputs.push(
                Jv::obj()
                    .with("path", Jv::Str(path.clone()))
                    .with("sha256", Jv::Str(sha256.clone())),
            );
        }
        let manifest = Jv::obj()
            .with("schema_version", Jv::UInt(1))
            .with("subcommand", Jv::Str(self.subcommand))
            .with("parameters", self.parameters)
            .with("root_seed", Jv::UInt(self.root_seed))
            .with("library_version", Jv::Str(env!("CARGO_PKG_VERSION").into()))
            .with("input_digests", Jv::Arr(inputs))
            .with(
                "outputs",
                Jv::Arr(self.outputs.into_iter().map(Jv::Str).collect()),
            )
            .with(
                "duration_seconds",
                Jv::Float(self.started.elapsed().as_secs_f64()),
            );
        let path = out_dir.join("manifest.json");
        std::fs::write(&path, manifest.render())?;
        Ok(path)
    }
}
