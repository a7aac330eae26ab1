//! Executes a recorded [`Invocation`]. Both fresh runs and replays go
//! through here, so a replay is the same code path by construction.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context};
use log::info;
use mapslic::hsio;
use mapslic::mapalign::MergeResult;
use mapslic::pipeline::{self, run_and_evaluate, run_stage1, run_stage2, run_stage3, write_artifacts, write_report};
use mapslic::validity::{compute_indices, Features};
use mapslic::{HsiCube, LabelMap, MapGuidance, PipelineConfig, ValidityReport};

use crate::manifest::{CubeInput, InputFile, Invocation};

pub struct Executed {
    pub timings: Vec<(String, f64)>,
    pub outputs: Vec<PathBuf>,
}

fn read_cube(input: &CubeInput) -> anyhow::Result<HsiCube> {
    Ok(hsio::read_cube(&input.header.path, &input.data.path)?)
}

fn guidance(polygons: Option<&InputFile>, points: Option<&InputFile>) -> anyhow::Result<Option<MapGuidance>> {
    match (polygons, points) {
        (None, None) => Ok(None),
        (None, Some(p)) => bail!(
            "control points {} were given without --polygons; pass the map polygons they align",
            p.path.display()
        ),
        (Some(poly), points) => Ok(Some(MapGuidance {
            polygons: hsio::read_polygons(&poly.path)?,
            control_points: points.map(|p| hsio::read_control_points(&p.path)).transpose()?,
        })),
    }
}

fn label_files(dir: &Path, name: &str, labels: &LabelMap, seed: u64, out: &mut Vec<PathBuf>) -> anyhow::Result<()> {
    let raw = dir.join(format!("{name}.u32"));
    let png = dir.join(format!("{name}.png"));
    hsio::write_label_map(labels, &raw, &png, seed)?;
    out.push(raw);
    out.push(png);
    Ok(())
}

fn timed<T>(timings: &mut Vec<(String, f64)>, name: &str, f: impl FnOnce() -> anyhow::Result<T>) -> anyhow::Result<T> {
    let t = Instant::now();
    let v = f()?;
    timings.push((name.to_string(), t.elapsed().as_secs_f64()));
    Ok(v)
}

pub fn execute(inv: &Invocation, cfg: &PipelineConfig, dir: &Path) -> anyhow::Result<Executed> {
    cfg.validate()?;
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut timings = Vec::new();
    let mut outputs = Vec::new();
    let seed = cfg.seed;

    match inv {
        Invocation::Hslic { cube, polygons, control_points } => {
            let cube = read_cube(cube)?;
            let guidance = guidance(polygons.as_ref(), control_points.as_ref())?;
            let stage1 = timed(&mut timings, "stage1", || Ok(run_stage1(&cube, guidance.as_ref(), cfg)?))?;
            info!("HSLIC: {} superpixels in {} iterations", stage1.hslic.labels.num_segments(), stage1.hslic.iterations);
            label_files(dir, "hslic_labels", &stage1.hslic.labels, seed, &mut outputs)?;
            if let Some(fit) = &stage1.alignment {
                info!("map merge: {} segments, alignment RMS {:.3e} px", stage1.guided.labels.num_segments(), fit.rms_residual);
                label_files(dir, "hslic_osm_labels", &stage1.guided.labels, seed, &mut outputs)?;
                let p = dir.join("alignment.json");
                hsio::write_json(fit, &p)?;
                outputs.push(p);
                let p = dir.join("hslic_osm_tags.json");
                hsio::write_json(&stage1.guided.tags, &p)?;
                outputs.push(p);
            }
        }
        Invocation::Unmix { cube, superpixels, tags } => {
            let cube = read_cube(cube)?;
            let labels = hsio::read_label_map(&superpixels.path, cube.height(), cube.width())?;
            let tags: BTreeMap<u32, String> = match tags {
                Some(t) => hsio::read_json(&t.path)?,
                None => BTreeMap::new(),
            };
            let merged = MergeResult { labels, tags };
            let unmix = timed(&mut timings, "stage2", || Ok(run_stage2(&cube, &merged, cfg, seed)?))?;
            info!("unmixing: acceptance rate {:.3}", unmix.acceptance_rate);
            let (hdr, dat) = (dir.join("proportions.hdr"), dir.join("proportions.f32"));
            hsio::write_proportions(&unmix.proportions, &hdr, &dat)?;
            let em = dir.join("endmembers.csv");
            hsio::write_endmembers(&unmix.endmembers, &em)?;
            outputs.extend([hdr, dat, em]);
        }
        Invocation::Finalseg { proportions } => {
            let props = hsio::read_proportions(&proportions.header.path, &proportions.data.path)?;
            let stage3 = timed(&mut timings, "stage3", || Ok(run_stage3(&props, cfg, seed)?))?;
            info!("final segmentation: {} segments", stage3.labels.num_segments());
            label_files(dir, "pmlda_labels", &stage3.components, seed, &mut outputs)?;
            label_files(dir, "final_labels", &stage3.labels, seed, &mut outputs)?;
        }
        Invocation::Pipeline { cube, polygons, control_points } => {
            let cube = read_cube(cube)?;
            let guidance = guidance(polygons.as_ref(), control_points.as_ref())?;
            let t = Instant::now();
            let (out, report) = run_and_evaluate(&cube, guidance.as_ref(), cfg)?;
            timings.extend(out.timings.iter().cloned());
            timings.push(("all_runs".to_string(), t.elapsed().as_secs_f64()));
            info!(
                "pipeline: {} final segments; Dunn {:.4}, DB {:.4}, silhouette {:.4} over {} runs",
                out.final_labels().num_segments(),
                report.dunn.mean,
                report.davies_bouldin.mean,
                report.silhouette.mean,
                report.runs
            );
            outputs.extend(write_artifacts(&out, dir, seed)?);
            outputs.extend(write_report(&report, dir)?);
        }
        Invocation::Evaluate { cube, labels } => {
            let cube = read_cube(cube)?;
            let labels = hsio::read_label_map(&labels.path, cube.height(), cube.width())?;
            let opts = cfg.index_options(seed);
            let indices = timed(&mut timings, "evaluate", || {
                Ok(compute_indices(&Features::from_cube(&cube), labels.as_slice(), &opts)?)
            })?;
            let report = ValidityReport::from_runs(&[indices], vec![seed], opts.subsample)?;
            outputs.extend(pipeline::write_report(&report, dir)?);
        }
    }
    Ok(Executed { timings, outputs })
}
