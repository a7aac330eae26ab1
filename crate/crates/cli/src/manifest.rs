use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use mapslic::PipelineConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const MANIFEST_NAME: &str = "manifest.json";

/// An input file together with the SHA-256 of its bytes at run time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputFile {
    pub path: PathBuf,
    pub sha256: String,
}

impl InputFile {
    pub fn hash(path: &Path) -> anyhow::Result<Self> {
        let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        Ok(Self {
            path: path.to_path_buf(),
            sha256: hex::encode(Sha256::digest(&bytes)),
        })
    }

    /// Fails when the file changed since the manifest was written.
    pub fn verify(&self) -> anyhow::Result<()> {
        let now = Self::hash(&self.path)?;
        if now.sha256 != self.sha256 {
            bail!(
                "{} changed since the run was recorded (sha256 {} != {})",
                self.path.display(),
                now.sha256,
                self.sha256
            );
        }
        Ok(())
    }
}

/// An ENVI cube: header plus binary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CubeInput {
    pub header: InputFile,
    pub data: InputFile,
}

/// Everything a subcommand read, in a form that can be executed again.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "snake_case")]
pub enum Invocation {
    Hslic {
        cube: CubeInput,
        polygons: Option<InputFile>,
        control_points: Option<InputFile>,
    },
    Unmix {
        cube: CubeInput,
        superpixels: InputFile,
        tags: Option<InputFile>,
    },
    Finalseg {
        proportions: CubeInput,
    },
    Pipeline {
        cube: CubeInput,
        polygons: Option<InputFile>,
        control_points: Option<InputFile>,
    },
    Evaluate {
        cube: CubeInput,
        labels: InputFile,
    },
}

impl Invocation {
    pub fn inputs(&self) -> Vec<&InputFile> {
        let mut out = Vec::new();
        match self {
            Invocation::Hslic { cube, polygons, control_points }
            | Invocation::Pipeline { cube, polygons, control_points } => {
                out.extend([&cube.header, &cube.data]);
                out.extend(polygons.iter().chain(control_points));
            }
            Invocation::Unmix { cube, superpixels, tags } => {
                out.extend([&cube.header, &cube.data, superpixels]);
                out.extend(tags);
            }
            Invocation::Finalseg { proportions } => out.extend([&proportions.header, &proportions.data]),
            Invocation::Evaluate { cube, labels } => out.extend([&cube.header, &cube.data, labels]),
        }
        out
    }
}

/// Record of one invocation: enough to run it again and compare outputs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub invocation: Invocation,
    pub config: PipelineConfig,
    pub seed: u64,
    /// Wall-clock seconds per stage; the only field that varies on repeat.
    pub timings: Vec<(String, f64)>,
    /// Output file names, relative to the output directory.
    pub outputs: Vec<PathBuf>,
}

impl RunManifest {
    pub fn write(&self, dir: &Path) -> anyhow::Result<PathBuf> {
        let path = dir.join(MANIFEST_NAME);
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }

    pub fn read(path: &Path) -> anyhow::Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing manifest {}", path.display()))
    }
}
