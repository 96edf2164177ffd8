use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::RunConfig;
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const CONFIG_FILE: &str = "config.toml";
pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

/// Hashes of what each command read and wrote, keyed by command name.
/// Timing outputs are written beside the run but never recorded here.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub schema_version: u32,
    pub config_hash: String,
    pub steps: BTreeMap<String, StepRecord>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepRecord {
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
}

impl Manifest {
    /// The recorded hash of `rel` as written by its most recent producer.
    pub fn produced(&self, rel: &str) -> Option<(&str, &str)> {
        self.steps
            .iter()
            .find_map(|(step, r)| r.outputs.get(rel).map(|h| (step.as_str(), h.as_str())))
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Run directory name for a config: the first 16 hex digits of its hash.
pub fn run_dir_name(config: &RunConfig) -> String {
    config.hash()[..16].to_string()
}

/// An open run directory. Commands read upstream artifacts and write their
/// outputs through a [`Step`], which keeps the manifest in sync.
#[derive(Debug)]
pub struct RunDir {
    root: PathBuf,
    config: RunConfig,
    manifest: Manifest,
    force: bool,
}

impl RunDir {
    /// Opens or creates `root` for `config`. A directory that already holds
    /// a manifest for a different config is refused unless `force` is set,
    /// in which case its manifest is reset.
    pub fn open(root: &Path, config: RunConfig, force: bool) -> Result<RunDir> {
        config.validate()?;
        fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
        let hash = config.hash();
        let mpath = root.join(MANIFEST_FILE);
        let mut manifest = if mpath.exists() {
            let bytes = fs::read(&mpath).map_err(|e| Error::io(&mpath, e))?;
            serde_json::from_slice::<Manifest>(&bytes)
                .map_err(|e| Error::Format { what: "manifest", offset: e.column() as u64, detail: e.to_string() })?
        } else {
            Manifest::default()
        };
        if !manifest.config_hash.is_empty() && manifest.config_hash != hash {
            if !force {
                return Err(Error::Stale(format!(
                    "{} belongs to config {} but the current config hashes to {hash}; pass --force to reuse it",
                    root.display(),
                    manifest.config_hash
                )));
            }
            manifest.steps.clear();
        }
        manifest.schema_version = MANIFEST_SCHEMA_VERSION;
        manifest.config_hash = hash;
        let run = RunDir { root: root.to_path_buf(), config, manifest, force };
        run.write_raw(CONFIG_FILE, run.config.to_toml_string().as_bytes())?;
        run.save_manifest()?;
        Ok(run)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn step(&mut self, name: &str) -> Step<'_> {
        Step { run: self, name: name.to_string(), record: StepRecord::default() }
    }

    fn write_raw(&self, rel: &str, bytes: &[u8]) -> Result<()> {
        let path = self.path(rel);
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let tmp = path.with_extension("partial");
        fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))
    }

    fn save_manifest(&self) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(&self.manifest)?;
        bytes.push(b'\n');
        self.write_raw(MANIFEST_FILE, &bytes)
    }
}

/// One command's view of the run directory.
pub struct Step<'a> {
    run: &'a mut RunDir,
    name: String,
    record: StepRecord,
}

impl Step<'_> {
    pub fn config(&self) -> &RunConfig {
        &self.run.config
    }

    /// Reads an upstream artifact, refusing files that are missing, were
    /// never recorded, or changed since their producer wrote them.
    pub fn read(&mut self, rel: &str) -> Result<Vec<u8>> {
        let path = self.run.path(rel);
        if !path.exists() {
            return Err(Error::Stale(format!("missing upstream artifact `{rel}`")));
        }
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let hash = sha256_hex(&bytes);
        match self.run.manifest.produced(rel) {
            Some((_, recorded)) if recorded == hash => {}
            Some((producer, _)) if !self.run.force => {
                return Err(Error::Stale(format!(
                    "`{rel}` changed since `{producer}` wrote it; rerun `{producer}` or pass --force"
                )))
            }
            None if !self.run.force => {
                return Err(Error::Stale(format!("`{rel}` is not recorded in the manifest; pass --force to use it")))
            }
            _ => {}
        }
        self.record.inputs.insert(rel.to_string(), hash);
        Ok(bytes)
    }

    pub fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<()> {
        self.run.write_raw(rel, bytes)?;
        self.record.outputs.insert(rel.to_string(), sha256_hex(bytes));
        Ok(())
    }

    /// Writes a file that depends on wall-clock timing. It is excluded from
    /// the manifest so that reruns stay byte-identical.
    pub fn write_volatile(&mut self, rel: &str, bytes: &[u8]) -> Result<()> {
        self.run.write_raw(rel, bytes)
    }

    /// Records this command in the manifest. Outputs recorded under other
    /// commands are dropped so each file has one producer.
    pub fn finish(self) -> Result<()> {
        let Step { run, name, record } = self;
        for (other, r) in run.manifest.steps.iter_mut() {
            if *other != name {
                r.outputs.retain(|k, _| !record.outputs.contains_key(k));
            }
        }
        run.manifest.steps.insert(name, record);
        run.save_manifest()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stale_inputs_are_refused() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = RunConfig::default();
        let mut run = RunDir::open(dir.path(), cfg.clone(), false).unwrap();
        let mut s = run.step("gen");
        s.write("data/a.txt", b"one").unwrap();
        s.finish().unwrap();
        let mut s = run.step("train");
        assert_eq!(s.read("data/a.txt").unwrap(), b"one");
        assert!(matches!(s.read("data/missing.txt"), Err(Error::Stale(_))));
        s.finish().unwrap();
        fs::write(dir.path().join("data/a.txt"), b"two").unwrap();
        let mut s = run.step("train");
        assert!(matches!(s.read("data/a.txt"), Err(Error::Stale(_))));
        drop(s);
        let mut forced = RunDir::open(dir.path(), cfg.clone(), true).unwrap();
        assert_eq!(forced.step("train").read("data/a.txt").unwrap(), b"two");

        let mut other = cfg;
        other.data.seed += 1;
        assert!(matches!(RunDir::open(dir.path(), other.clone(), false), Err(Error::Stale(_))));
        let reset = RunDir::open(dir.path(), other, true).unwrap();
        assert!(reset.manifest().steps.is_empty());
    }

    #[test]
    fn manifest_is_stable_across_reopen() {
        let dir = tempfile::tempdir().unwrap();
        let mut run = RunDir::open(dir.path(), RunConfig::default(), false).unwrap();
        let mut s = run.step("gen");
        s.write("x", b"1").unwrap();
        s.write_volatile("timing/t", b"0.1").unwrap();
        s.finish().unwrap();
        let first = fs::read(dir.path().join(MANIFEST_FILE)).unwrap();
        let run = RunDir::open(dir.path(), RunConfig::default(), false).unwrap();
        assert_eq!(run.manifest().steps["gen"].outputs.len(), 1);
        assert_eq!(fs::read(dir.path().join(MANIFEST_FILE)).unwrap(), first);
    }
}
