//! `mapslic` command-line tool.
//!
//! Every subcommand that produces artifacts also writes `manifest.json`
//! into its output directory; `mapslic replay` re-executes a manifest and
//! checks that the outputs come out byte-identical.

mod manifest;
mod run;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use log::{error, info};
use mapslic::{hsio, PipelineConfig};

use manifest::{CubeInput, InputFile, Invocation, RunManifest};

#[derive(Parser)]
#[command(name = "mapslic", version, about = "Map-guided hyperspectral superpixel segmentation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Hyperspectral SLIC; with polygons and control points also the map-merged superpixels.
    Hslic {
        #[command(flatten)]
        cube: CubeArgs,
        #[command(flatten)]
        map: MapArgs,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Partial-membership unmixing guided by a superpixel label map.
    Unmix {
        #[command(flatten)]
        cube: CubeArgs,
        /// Superpixel label map (`.u32`, row-major, same size as the cube).
        #[arg(long)]
        superpixels: PathBuf,
        /// Class tags of the superpixels (`hslic_osm_tags.json`).
        #[arg(long)]
        tags: Option<PathBuf>,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// k-means on a proportion map, connected components and cleanup.
    Finalseg {
        /// ENVI header of the proportion map.
        #[arg(long)]
        proportions: PathBuf,
        #[arg(long)]
        proportions_data: Option<PathBuf>,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// All three stages plus validity evaluation over the configured runs.
    Pipeline {
        #[command(flatten)]
        cube: CubeArgs,
        #[command(flatten)]
        map: MapArgs,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Dunn, Davies-Bouldin and Silhouette of an existing label map.
    Evaluate {
        #[command(flatten)]
        cube: CubeArgs,
        /// Label map (`.u32`, row-major, same size as the cube).
        #[arg(long)]
        labels: PathBuf,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Renders a label map to a PNG with a seeded palette.
    Render {
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        height: usize,
        #[arg(long)]
        width: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Re-executes a run manifest and verifies the outputs byte for byte.
    Replay {
        manifest: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

#[derive(Args)]
struct CubeArgs {
    /// ENVI header of the hyperspectral cube.
    #[arg(long)]
    cube: PathBuf,
    /// Binary data file; located next to the header when omitted.
    #[arg(long)]
    cube_data: Option<PathBuf>,
}

#[derive(Args)]
struct MapArgs {
    /// GeoJSON polygons in map coordinates.
    #[arg(long)]
    polygons: Option<PathBuf>,
    /// CSV of map/pixel control point pairs.
    #[arg(long)]
    control_points: Option<PathBuf>,
}

#[derive(Args)]
struct CommonArgs {
    /// TOML configuration; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    runs: Option<usize>,
    /// Score every pixel instead of a subsample.
    #[arg(long)]
    exact_metrics: bool,
    #[arg(long)]
    min_overlap: Option<f64>,
    #[arg(long)]
    min_segment: Option<usize>,
}

impl CommonArgs {
    fn config(&self) -> anyhow::Result<PipelineConfig> {
        let mut cfg = match &self.config {
            Some(p) => {
                let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                toml::from_str(&text).with_context(|| format!("parsing config {}", p.display()))?
            }
            None => PipelineConfig::default(),
        };
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.runs {
            cfg.runs = v;
        }
        if self.exact_metrics {
            cfg.exact_metrics = true;
        }
        if let Some(v) = self.min_overlap {
            cfg.min_overlap = v;
        }
        if let Some(v) = self.min_segment {
            cfg.min_segment = v;
        }
        Ok(cfg)
    }
}

fn cube_input(header: &Path, data: Option<&PathBuf>) -> anyhow::Result<CubeInput> {
    let data = match data {
        Some(d) => d.clone(),
        None => hsio::locate_cube_data(header).with_context(|| {
            format!("no binary file found next to {}; pass it explicitly", header.display())
        })?,
    };
    Ok(CubeInput {
        header: InputFile::hash(header)?,
        data: InputFile::hash(&data)?,
    })
}

fn optional(path: Option<&PathBuf>) -> anyhow::Result<Option<InputFile>> {
    path.map(|p| InputFile::hash(p)).transpose()
}

/// Runs an invocation into `dir` and records its manifest there.
fn record(invocation: Invocation, cfg: PipelineConfig, dir: &Path) -> anyhow::Result<RunManifest> {
    let done = run::execute(&invocation, &cfg, dir)?;
    let outputs = done
        .outputs
        .iter()
        .map(|p| p.strip_prefix(dir).unwrap_or(p).to_path_buf())
        .collect();
    let manifest = RunManifest {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        invocation,
        seed: cfg.seed,
        config: cfg,
        timings: done.timings,
        outputs,
    };
    let path = manifest.write(dir)?;
    info!("wrote {} outputs and {}", manifest.outputs.len(), path.display());
    Ok(manifest)
}

/// Raised when a replay produces different bytes than the original run.
#[derive(Debug)]
struct ReplayMismatch(Vec<PathBuf>);

impl std::fmt::Display for ReplayMismatch {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let names: Vec<_> = self.0.iter().map(|p| p.display().to_string()).collect();
        write!(f, "replay differs from the recorded run in: {}", names.join(", "))
    }
}

impl std::error::Error for ReplayMismatch {}

fn replay(path: &Path, out_dir: &Path) -> anyhow::Result<()> {
    let recorded = RunManifest::read(path)?;
    for input in recorded.invocation.inputs() {
        input.verify()?;
    }
    if recorded.seed != recorded.config.seed {
        bail!("manifest seed {} disagrees with its config snapshot", recorded.seed);
    }
    let source = path.parent().unwrap_or(Path::new("."));
    // read the originals first: the replay may target the same directory
    let originals: BTreeMap<&PathBuf, Option<Vec<u8>>> = recorded
        .outputs
        .iter()
        .map(|name| (name, fs::read(source.join(name)).ok()))
        .collect();
    let again = record(recorded.invocation.clone(), recorded.config.clone(), out_dir)?;

    let mut differing = Vec::new();
    for (name, before) in &originals {
        let after = fs::read(out_dir.join(name)).ok();
        match before {
            Some(b) if after.as_ref() == Some(b) => {}
            Some(_) => differing.push((*name).clone()),
            None => log::warn!("original {} is missing; cannot compare", name.display()),
        }
    }
    if again.outputs != recorded.outputs {
        bail!(ReplayMismatch(again.outputs));
    }
    if !differing.is_empty() {
        bail!(ReplayMismatch(differing));
    }
    info!("replay reproduced all {} outputs", originals.len());
    Ok(())
}

fn dispatch(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Hslic { cube, map, common } => {
            let invocation = Invocation::Hslic {
                cube: cube_input(&cube.cube, cube.cube_data.as_ref())?,
                polygons: optional(map.polygons.as_ref())?,
                control_points: optional(map.control_points.as_ref())?,
            };
            record(invocation, common.config()?, &common.out_dir)?;
        }
        Command::Unmix { cube, superpixels, tags, common } => {
            let invocation = Invocation::Unmix {
                cube: cube_input(&cube.cube, cube.cube_data.as_ref())?,
                superpixels: InputFile::hash(&superpixels)?,
                tags: optional(tags.as_ref())?,
            };
            record(invocation, common.config()?, &common.out_dir)?;
        }
        Command::Finalseg { proportions, proportions_data, common } => {
            let invocation = Invocation::Finalseg {
                proportions: cube_input(&proportions, proportions_data.as_ref())?,
            };
            record(invocation, common.config()?, &common.out_dir)?;
        }
        Command::Pipeline { cube, map, common } => {
            let invocation = Invocation::Pipeline {
                cube: cube_input(&cube.cube, cube.cube_data.as_ref())?,
                polygons: optional(map.polygons.as_ref())?,
                control_points: optional(map.control_points.as_ref())?,
            };
            record(invocation, common.config()?, &common.out_dir)?;
        }
        Command::Evaluate { cube, labels, common } => {
            let invocation = Invocation::Evaluate {
                cube: cube_input(&cube.cube, cube.cube_data.as_ref())?,
                labels: InputFile::hash(&labels)?,
            };
            record(invocation, common.config()?, &common.out_dir)?;
        }
        Command::Render { labels, height, width, out, seed } => {
            let map = hsio::read_label_map(&labels, height, width)?;
            hsio::render_label_map(&map, seed)
                .save(&out)
                .with_context(|| format!("writing {}", out.display()))?;
        }
        Command::Replay { manifest, out_dir } => replay(&manifest, &out_dir)?,
    }
    Ok(())
}

/// 3 for numerically degenerate data, 1 for a failed replay comparison,
/// 2 for every other (input) error.
fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<ReplayMismatch>().is_some() {
        return 1;
    }
    let numerical = err
        .chain()
        .filter_map(|e| e.downcast_ref::<mapslic::Error>())
        .any(mapslic::Error::is_numerical);
    if numerical {
        3
    } else {
        2
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
