//! Stage directories. Every stage writes into `<root>/<stage>-<hash>`, where
//! the hash covers the stage's own configuration and the hashes of the
//! stages it reads from. A manifest records the hash and a digest of every
//! output file so that artifacts from different configurations never mix.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub stage: String,
    pub hash: String,
    pub tool: String,
    pub key: Value,
    /// Relative path to SHA-256 of every file the stage wrote.
    pub outputs: BTreeMap<String, String>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn file_digest(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(sha256_hex(&bytes))
}

pub fn stage_hash(stage: &str, key: &Value) -> String {
    let text = format!("{stage}\n{key}");
    sha256_hex(text.as_bytes())[..16].to_owned()
}

fn digest_tree(dir: &Path) -> Result<BTreeMap<String, String>> {
    fn walk(base: &Path, dir: &Path, out: &mut BTreeMap<String, String>) -> Result<()> {
        let mut entries: Vec<_> = fs::read_dir(dir)
            .with_context(|| format!("listing {}", dir.display()))?
            .collect::<std::io::Result<_>>()?;
        entries.sort_by_key(|e| e.file_name());
        for e in entries {
            let path = e.path();
            if path.is_dir() {
                walk(base, &path, out)?;
            } else {
                let rel = path.strip_prefix(base).expect("inside base").to_string_lossy().replace('\\', "/");
                if rel != MANIFEST {
                    out.insert(rel, file_digest(&path)?);
                }
            }
        }
        Ok(())
    }
    let mut out = BTreeMap::new();
    walk(dir, dir, &mut out)?;
    Ok(out)
}

fn read_manifest(dir: &Path) -> Result<Option<Manifest>> {
    let path = dir.join(MANIFEST);
    if !path.exists() {
        return Ok(None);
    }
    let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    let m = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    Ok(Some(m))
}

/// Checks that `dir` holds exactly what its manifest says, produced by
/// `stage` under `hash`.
fn verify(dir: &Path, stage: &str, hash: &str) -> Result<Manifest> {
    let m = read_manifest(dir)?.ok_or_else(|| anyhow!("{} has no {MANIFEST}", dir.display()))?;
    if m.stage != stage || m.hash != hash {
        bail!(
            "refusing to mix artifacts: {} was produced by stage {} with config hash {}, expected {stage} with {hash}",
            dir.display(),
            m.stage,
            m.hash
        );
    }
    let found = digest_tree(dir)?;
    if found != m.outputs {
        bail!(
            "refusing to mix artifacts: files in {} do not match its manifest; re-run `zeal {stage} --force`",
            dir.display()
        );
    }
    Ok(m)
}

pub enum Begin {
    Cached(PathBuf),
    Build(StageWriter),
}

pub struct StageWriter {
    stage: String,
    hash: String,
    key: Value,
    tmp: PathBuf,
    target: PathBuf,
}

impl StageWriter {
    pub fn dir(&self) -> &Path {
        &self.tmp
    }

    pub fn finish(mut self) -> Result<PathBuf> {
        let manifest = Manifest {
            outputs: digest_tree(&self.tmp)?,
            stage: std::mem::take(&mut self.stage),
            hash: std::mem::take(&mut self.hash),
            tool: concat!("zeal ", env!("CARGO_PKG_VERSION")).into(),
            key: self.key.take(),
        };
        let text = serde_json::to_string_pretty(&manifest)?;
        fs::write(self.tmp.join(MANIFEST), text + "\n")?;
        if self.target.exists() {
            fs::remove_dir_all(&self.target).with_context(|| format!("replacing {}", self.target.display()))?;
        }
        fs::rename(&self.tmp, &self.target)
            .with_context(|| format!("moving {} into place", self.target.display()))?;
        Ok(std::mem::take(&mut self.target))
    }
}

impl Drop for StageWriter {
    fn drop(&mut self) {
        let _ = fs::remove_dir_all(&self.tmp);
    }
}

pub struct Store {
    root: PathBuf,
}

impl Store {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn dir_for(&self, stage: &str, hash: &str) -> PathBuf {
        self.root.join(format!("{stage}-{hash}"))
    }

    /// Opens the output of an upstream stage for the current configuration.
    pub fn open(&self, stage: &str, key: &Value) -> Result<PathBuf> {
        let hash = stage_hash(stage, key);
        let dir = self.dir_for(stage, &hash);
        if !dir.join(MANIFEST).exists() {
            let others = self.existing(stage);
            let hint = if others.is_empty() {
                String::new()
            } else {
                format!(" (found outputs for other configurations: {})", others.join(", "))
            };
            bail!(
                "missing upstream artifact: no `{stage}` output for the current configuration at {}{hint}; run `zeal {stage}` first",
                dir.display()
            );
        }
        verify(&dir, stage, &hash)?;
        Ok(dir)
    }

    fn existing(&self, stage: &str) -> Vec<String> {
        let prefix = format!("{stage}-");
        let mut names: Vec<String> = fs::read_dir(&self.root)
            .into_iter()
            .flatten()
            .flatten()
            .map(|e| e.file_name().to_string_lossy().into_owned())
            .filter(|n| n.starts_with(&prefix))
            .collect();
        names.sort();
        names
    }

    /// Starts a stage run. Returns the existing directory on a cache hit
    /// unless `force` is set or the directory lacks the optional output
    /// `require`. `target` replaces the default location.
    pub fn begin(
        &self,
        stage: &str,
        key: Value,
        force: bool,
        target: Option<PathBuf>,
        require: Option<&str>,
    ) -> Result<Begin> {
        let hash = stage_hash(stage, &key);
        let target = target.unwrap_or_else(|| self.dir_for(stage, &hash));
        if target.exists() && !force {
            match read_manifest(&target)? {
                Some(_) => {
                    verify(&target, stage, &hash)?;
                    if require.is_none_or(|r| target.join(r).exists()) {
                        return Ok(Begin::Cached(target));
                    }
                }
                None if fs::read_dir(&target)?.next().is_some() => bail!(
                    "{} exists and is not a stage directory; pass --force to overwrite it",
                    target.display()
                ),
                None => {}
            }
        }
        let parent = target.parent().map(Path::to_path_buf).unwrap_or_default();
        fs::create_dir_all(&parent).with_context(|| format!("creating {}", parent.display()))?;
        let name = target.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        let tmp = parent.join(format!(".{name}.tmp-{}", std::process::id()));
        if tmp.exists() {
            fs::remove_dir_all(&tmp)?;
        }
        fs::create_dir_all(&tmp).with_context(|| format!("creating {}", tmp.display()))?;
        Ok(Begin::Build(StageWriter {
            stage: stage.to_owned(),
            hash,
            key,
            tmp,
            target,
        }))
    }
}
