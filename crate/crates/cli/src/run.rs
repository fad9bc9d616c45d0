//! Output placement and the run manifest.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::Resolver;
use crate::error::CliError;

pub const MANIFEST_NAME: &str = "run-manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub seed: Option<u64>,
    pub config: BTreeMap<String, String>,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: bad manifest: {e}", path.display())))
    }

    /// Command line reproducing the run.
    pub fn argv(&self) -> Vec<String> {
        let mut argv = vec!["influx".to_string(), self.command.clone()];
        for (k, v) in &self.config {
            argv.push(format!("--{}={v}", k.replace('_', "-")));
        }
        argv
    }
}

pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Where a command writes. An `--out` with a file extension names the
/// primary output; side outputs and the manifest sit next to it, prefixed
/// by its stem. Otherwise `--out` is a directory.
#[derive(Debug, Clone)]
pub struct OutTarget {
    dir: PathBuf,
    primary: Option<String>,
    stem: Option<String>,
}

impl OutTarget {
    pub fn new(out: &str) -> Self {
        let p = Path::new(out);
        match (p.extension(), p.file_name(), p.file_stem()) {
            (Some(_), Some(name), Some(stem)) => OutTarget {
                dir: p.parent().map(Path::to_path_buf).unwrap_or_default(),
                primary: Some(name.to_string_lossy().into_owned()),
                stem: Some(stem.to_string_lossy().into_owned()),
            },
            _ => OutTarget {
                dir: p.to_path_buf(),
                primary: None,
                stem: None,
            },
        }
    }

    pub fn primary(&self, default_name: &str) -> PathBuf {
        self.dir.join(self.primary.as_deref().unwrap_or(default_name))
    }

    pub fn side(&self, name: &str) -> PathBuf {
        match &self.stem {
            Some(stem) => self.dir.join(format!("{stem}.{name}")),
            None => self.dir.join(name),
        }
    }

    pub fn manifest(&self) -> PathBuf {
        match &self.stem {
            Some(stem) => self.dir.join(format!("{stem}.manifest.json")),
            None => self.dir.join(MANIFEST_NAME),
        }
    }
}

/// Bookkeeping of one command invocation.
pub struct Run {
    pub command: &'static str,
    pub res: Resolver,
    pub seed: Option<u64>,
    inputs: Vec<FileDigest>,
    outputs: Vec<PathBuf>,
}

impl Run {
    pub fn new(command: &'static str, res: Resolver) -> Self {
        Run {
            command,
            res,
            seed: None,
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    /// Resolves the seed setting, defaulting to 0, and announces it.
    pub fn seed(&mut self, flag: Option<u64>) -> Result<u64, CliError> {
        let seed = self.res.value("seed", flag, 0)?;
        self.seed = Some(seed);
        println!("seed: {seed}");
        Ok(seed)
    }

    pub fn input(&mut self, path: &Path) -> Result<(), CliError> {
        let sha256 = sha256_file(path)?;
        self.inputs.push(FileDigest {
            path: path.display().to_string(),
            sha256,
        });
        Ok(())
    }

    pub fn write(&mut self, path: &Path, bytes: &[u8]) -> Result<(), CliError> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        }
        fs::write(path, bytes).map_err(|e| CliError::io(path, e))?;
        println!("wrote {}", path.display());
        self.outputs.push(path.to_path_buf());
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, path: &Path, value: &T) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(value).expect("serializable output");
        text.push('\n');
        self.write(path, text.as_bytes())
    }

    pub fn finish(self, out: &OutTarget) -> Result<Manifest, CliError> {
        let outputs = self
            .outputs
            .iter()
            .map(|p| {
                Ok(FileDigest {
                    path: p.display().to_string(),
                    sha256: sha256_file(p)?,
                })
            })
            .collect::<Result<Vec<_>, CliError>>()?;
        let manifest = Manifest {
            tool: "influx".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: self.command.into(),
            seed: self.seed,
            config: self.res.echo,
            inputs: self.inputs,
            outputs,
        };
        let path = out.manifest();
        let mut text = serde_json::to_string_pretty(&manifest).expect("serializable manifest");
        text.push('\n');
        fs::write(&path, text).map_err(|e| CliError::io(&path, e))?;
        println!("wrote {}", path.display());
        Ok(manifest)
    }
}
