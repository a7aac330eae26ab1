//! The three-stage pipeline: map-guided HSLIC, partial-membership unmixing
//! and proportion-space segmentation, plus repeated-run evaluation.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::cube::HsiCube;
use crate::error::{Error, Result};
use crate::finalseg;
use crate::hslic::{run_hslic, HslicParams, HslicResult};
use crate::hsio::{self, ControlPoints, PolygonSet};
use crate::kmeans::KmeansResult;
use crate::labels::{Connectivity, LabelMap};
use crate::mapalign::{fit_affine, merge_by_polygon, rasterize, AffineFit, MergeResult, ANY_OVERLAP};
use crate::spmlda::{run_spmlda, Endmember, PartialLabelSet, SamplerParams, UnmixResult};
use crate::validity::{self, Features, IndexOptions, ValidityReport};

/// Every tunable of the pipeline. Field names in config files follow the
/// conventional symbols (`K`, `m`, `M`, `T`, `K_final`, ...).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Target superpixel count.
    #[serde(rename = "K")]
    pub k: usize,
    /// Spatial scaling factor.
    pub m: f64,
    /// Perturbation window side.
    pub n: usize,
    #[serde(rename = "M")]
    pub num_endmembers: usize,
    pub alpha: f64,
    pub lambda_pm: f64,
    pub epsilon: f64,
    /// Sampler iterations.
    #[serde(rename = "T")]
    pub iterations: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub burn_in: Option<usize>,
    #[serde(rename = "K_final")]
    pub k_final: usize,
    pub min_segment: usize,
    pub runs: usize,
    pub seed: u64,

    pub max_iters: usize,
    pub residual_tol: f64,
    pub enforce_connectivity: bool,
    pub normalize_spectral: bool,
    pub min_overlap: f64,
    pub kmeans_restarts: usize,
    pub subsample: usize,
    pub exact_metrics: bool,
    pub eight_connected: bool,
    /// Allowed endmember indices per map class. When empty, the distinct
    /// classes are assigned endmembers 0, 1, ... in sorted order.
    pub class_endmembers: BTreeMap<String, Vec<usize>>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            k: 500,
            m: 20.0,
            n: 3,
            num_endmembers: 6,
            alpha: 0.3,
            lambda_pm: 1.0,
            epsilon: 0.05,
            iterations: 200,
            burn_in: None,
            k_final: 6,
            min_segment: 25,
            runs: 10,
            seed: 0,
            max_iters: 10,
            residual_tol: 1.0,
            enforce_connectivity: true,
            normalize_spectral: false,
            min_overlap: ANY_OVERLAP,
            kmeans_restarts: 10,
            subsample: validity::DEFAULT_SUBSAMPLE,
            exact_metrics: false,
            eight_connected: false,
            class_endmembers: BTreeMap::new(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidParam(msg.to_string()));
        if self.k == 0 {
            return bad("K must be >= 1");
        }
        if !(self.m > 0.0 && self.m.is_finite()) {
            return bad("m must be > 0");
        }
        if self.k_final == 0 {
            return bad("K_final must be >= 1");
        }
        if self.runs == 0 {
            return bad("runs must be >= 1");
        }
        if self.subsample == 0 && !self.exact_metrics {
            return bad("subsample must be >= 1");
        }
        self.hslic_params().validate()?;
        self.sampler_params(self.seed).validate()
    }

    pub fn hslic_params(&self) -> HslicParams {
        HslicParams {
            k: self.k,
            m: self.m,
            n: self.n,
            max_iters: self.max_iters,
            residual_tol: self.residual_tol,
            enforce_connectivity: self.enforce_connectivity,
            normalize_spectral: self.normalize_spectral,
        }
    }

    pub fn sampler_params(&self, seed: u64) -> SamplerParams {
        SamplerParams {
            m: self.num_endmembers,
            alpha: self.alpha,
            lambda_pm: self.lambda_pm,
            epsilon: self.epsilon,
            iterations: self.iterations,
            seed,
            burn_in: self.burn_in,
        }
    }

    pub fn index_options(&self, seed: u64) -> IndexOptions {
        IndexOptions {
            subsample: (!self.exact_metrics).then_some(self.subsample),
            seed,
        }
    }

    pub fn connectivity(&self) -> Connectivity {
        if self.eight_connected {
            Connectivity::Eight
        } else {
            Connectivity::Four
        }
    }

    /// Seeds of the evaluation runs: `seed, seed + 1, ...`.
    pub fn run_seeds(&self) -> Vec<u64> {
        (0..self.runs as u64).map(|i| self.seed.wrapping_add(i)).collect()
    }
}

/// Map polygons together with the correspondences that align them.
#[derive(Debug, Clone, Default)]
pub struct MapGuidance {
    pub polygons: PolygonSet,
    pub control_points: Option<ControlPoints>,
}

/// Stage 1 output: plain HSLIC and the polygon-merged variant.
#[derive(Debug, Clone)]
pub struct Stage1 {
    pub hslic: HslicResult,
    pub alignment: Option<AffineFit>,
    /// Equal to the HSLIC labels when no polygons were supplied.
    pub guided: MergeResult,
}

impl Stage1 {
    pub fn is_guided(&self) -> bool {
        self.alignment.is_some()
    }
}

pub fn run_stage1(cube: &HsiCube, guidance: Option<&MapGuidance>, cfg: &PipelineConfig) -> Result<Stage1> {
    let hslic = run_hslic(cube, &cfg.hslic_params())?;
    let polygons = guidance.map(|g| &g.polygons).filter(|p| !p.is_empty());
    let Some(polygons) = polygons else {
        let guided = MergeResult {
            labels: hslic.labels.clone(),
            tags: BTreeMap::new(),
        };
        return Ok(Stage1 {
            hslic,
            alignment: None,
            guided,
        });
    };
    let points = guidance
        .and_then(|g| g.control_points.as_ref())
        .ok_or_else(|| {
            Error::ControlPoints("map polygons were given without control points to align them".into())
        })?;
    let fit = fit_affine(points)?;
    let mask = rasterize(polygons, &fit.transform, cube.height(), cube.width());
    let guided = merge_by_polygon(&hslic.labels, &mask, cfg.min_overlap)?;
    Ok(Stage1 {
        hslic,
        alignment: Some(fit),
        guided,
    })
}

/// Resolves which endmembers each map class may use.
pub fn class_endmember_map(
    tags: &BTreeMap<u32, String>,
    cfg: &PipelineConfig,
) -> Result<BTreeMap<String, Vec<usize>>> {
    if !cfg.class_endmembers.is_empty() {
        return Ok(cfg.class_endmembers.clone());
    }
    let classes: BTreeSet<&String> = tags.values().collect();
    if classes.len() > cfg.num_endmembers {
        return Err(Error::InvalidParam(format!(
            "{} map classes but only M = {} endmembers; set class_endmembers explicitly",
            classes.len(),
            cfg.num_endmembers
        )));
    }
    Ok(classes
        .into_iter()
        .enumerate()
        .map(|(i, c)| (c.clone(), vec![i]))
        .collect())
}

/// Partial labels for the superpixels that inherited a map class.
pub fn partial_labels(
    tags: &BTreeMap<u32, String>,
    class_map: &BTreeMap<String, Vec<usize>>,
    m: usize,
) -> Result<PartialLabelSet> {
    let mut allowed = BTreeMap::new();
    for (&sp, class) in tags {
        match class_map.get(class) {
            Some(set) => {
                allowed.insert(sp, set.clone());
            }
            None => log::warn!("map class '{class}' has no endmember assignment; left unlabeled"),
        }
    }
    PartialLabelSet::new(allowed, m)
}

/// Stage 2: unmix the cube guided by the stage 1 superpixels and tags.
pub fn run_stage2(
    cube: &HsiCube,
    superpixels: &MergeResult,
    cfg: &PipelineConfig,
    seed: u64,
) -> Result<UnmixResult> {
    let class_map = class_endmember_map(&superpixels.tags, cfg)?;
    let labels = partial_labels(&superpixels.tags, &class_map, cfg.num_endmembers)?;
    let mut result = run_spmlda(cube, &superpixels.labels, &labels, &cfg.sampler_params(seed))?;
    tag_endmembers(&mut result.endmembers, &class_map);
    Ok(result)
}

fn tag_endmembers(endmembers: &mut [Endmember], class_map: &BTreeMap<String, Vec<usize>>) {
    for (class, set) in class_map {
        if let [k] = set.as_slice() {
            if let Some(e) = endmembers.get_mut(*k) {
                e.tag = Some(class.clone());
            }
        }
    }
}

/// Stage 3 output.
#[derive(Debug, Clone)]
pub struct Stage3 {
    pub kmeans: KmeansResult,
    /// Connected components before small-segment cleanup.
    pub components: LabelMap,
    pub labels: LabelMap,
}

pub fn run_stage3(
    proportions: &crate::spmlda::ProportionMap,
    cfg: &PipelineConfig,
    seed: u64,
) -> Result<Stage3> {
    let km = finalseg::kmeans(proportions, cfg.k_final, seed, cfg.kmeans_restarts)?;
    let components = finalseg::connected_components(
        &km.assignments,
        proportions.height(),
        proportions.width(),
        cfg.connectivity(),
    )?;
    let labels = finalseg::cleanup(&components, cfg.min_segment)?;
    Ok(Stage3 {
        kmeans: km,
        components,
        labels,
    })
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub seed: u64,
    pub stage1: Stage1,
    pub unmix: UnmixResult,
    pub stage3: Stage3,
    /// Wall-clock seconds per stage.
    pub timings: Vec<(String, f64)>,
}

impl PipelineOutput {
    pub fn final_labels(&self) -> &LabelMap {
        &self.stage3.labels
    }
}

pub fn run_pipeline(
    cube: &HsiCube,
    guidance: Option<&MapGuidance>,
    cfg: &PipelineConfig,
    seed: u64,
) -> Result<PipelineOutput> {
    cfg.validate()?;
    let mut timings = Vec::new();
    let t = Instant::now();
    let stage1 = run_stage1(cube, guidance, cfg)?;
    timings.push(("stage1".to_string(), t.elapsed().as_secs_f64()));
    let t = Instant::now();
    let unmix = run_stage2(cube, &stage1.guided, cfg, seed)?;
    timings.push(("stage2".to_string(), t.elapsed().as_secs_f64()));
    let t = Instant::now();
    let stage3 = run_stage3(&unmix.proportions, cfg, seed)?;
    timings.push(("stage3".to_string(), t.elapsed().as_secs_f64()));
    Ok(PipelineOutput {
        seed,
        stage1,
        unmix,
        stage3,
        timings,
    })
}

/// Runs the pipeline once per configured seed, keeping the first run's
/// artifacts and aggregating the validity indices of all runs.
pub fn run_and_evaluate(
    cube: &HsiCube,
    guidance: Option<&MapGuidance>,
    cfg: &PipelineConfig,
) -> Result<(PipelineOutput, ValidityReport)> {
    let mut first: Option<PipelineOutput> = None;
    let features = Features::from_cube(cube);
    let report = validity::evaluate_runs(
        &features,
        &cfg.run_seeds(),
        &cfg.index_options(cfg.seed),
        |seed| {
            let out = run_pipeline(cube, guidance, cfg, seed)?;
            let labels = out.final_labels().clone();
            first.get_or_insert(out);
            Ok(labels)
        },
    )?;
    Ok((first.expect("runs >= 1"), report))
}

/// Writes every stage artifact into `dir` and returns the written paths.
///
/// Files: `hslic_labels`, `hslic_osm_labels` (+ tags and alignment, when
/// guided), `proportions`, `endmembers.csv`, `pmlda_labels` (components
/// before cleanup) and `final_labels`. Label maps come as `.u32` + `.png`.
pub fn write_artifacts(out: &PipelineOutput, dir: &Path, render_seed: u64) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })?;
    let mut written = Vec::new();
    let mut labels = |name: &str, map: &LabelMap| -> Result<()> {
        let raw = dir.join(format!("{name}.u32"));
        let png = dir.join(format!("{name}.png"));
        hsio::write_label_map(map, &raw, &png, render_seed)?;
        written.push(raw);
        written.push(png);
        Ok(())
    };
    labels("hslic_labels", &out.stage1.hslic.labels)?;
    if out.stage1.is_guided() {
        labels("hslic_osm_labels", &out.stage1.guided.labels)?;
    }
    labels("pmlda_labels", &out.stage3.components)?;
    labels("final_labels", &out.stage3.labels)?;

    if let Some(fit) = &out.stage1.alignment {
        let p = dir.join("alignment.json");
        hsio::write_json(fit, &p)?;
        written.push(p);
        let p = dir.join("hslic_osm_tags.json");
        hsio::write_json(&out.stage1.guided.tags, &p)?;
        written.push(p);
    }
    let hdr = dir.join("proportions.hdr");
    let dat = dir.join("proportions.f32");
    hsio::write_proportions(&out.unmix.proportions, &hdr, &dat)?;
    written.push(hdr);
    written.push(dat);
    let p = dir.join("endmembers.csv");
    hsio::write_endmembers(&out.unmix.endmembers, &p)?;
    written.push(p);
    Ok(written)
}

/// Writes `validity.json` and `validity.csv` into `dir`.
pub fn write_report(report: &ValidityReport, dir: &Path) -> Result<Vec<PathBuf>> {
    let json = dir.join("validity.json");
    hsio::write_json(report, &json)?;
    let csv = dir.join("validity.csv");
    std::fs::write(&csv, report.to_csv()).map_err(|e| Error::Io {
        path: csv.clone(),
        source: e,
    })?;
    Ok(vec![json, csv])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid() {
        PipelineConfig::default().validate().unwrap();
    }

    #[test]
    fn config_field_names() {
        let json = serde_json::to_value(PipelineConfig::default()).unwrap();
        for key in ["K", "m", "M", "T", "K_final", "alpha", "lambda_pm", "epsilon"] {
            assert!(json.get(key).is_some(), "missing {key}");
        }
        let parsed: PipelineConfig = serde_json::from_str(r#"{"K": 40, "M": 3}"#).unwrap();
        assert_eq!(parsed.k, 40);
        assert_eq!(parsed.num_endmembers, 3);
        assert_eq!(parsed.iterations, 200);
    }

    #[test]
    fn auto_class_mapping() {
        let mut tags = BTreeMap::new();
        tags.insert(3, "roof_red".to_string());
        tags.insert(1, "roof_blue".to_string());
        tags.insert(5, "roof_red".to_string());
        let cfg = PipelineConfig {
            num_endmembers: 2,
            ..PipelineConfig::default()
        };
        let map = class_endmember_map(&tags, &cfg).unwrap();
        assert_eq!(map["roof_blue"], vec![0]);
        assert_eq!(map["roof_red"], vec![1]);
        let labels = partial_labels(&tags, &map, 2).unwrap();
        assert_eq!(labels.get(5), Some(&[1][..]));

        let cfg1 = PipelineConfig {
            num_endmembers: 1,
            ..PipelineConfig::default()
        };
        assert!(class_endmember_map(&tags, &cfg1).is_err());
    }

    #[test]
    fn polygons_without_points_rejected() {
        let cube = HsiCube::new(4, 4, 1, vec![0.0; 16]).unwrap();
        let poly = crate::hsio::MapPolygon {
            id: 0,
            class: "building".into(),
            rings: vec![vec![[0.0, 0.0], [2.0, 0.0], [2.0, 2.0]]],
        };
        let guidance = MapGuidance {
            polygons: PolygonSet::new(vec![poly]).unwrap(),
            control_points: None,
        };
        let cfg = PipelineConfig {
            k: 4,
            ..PipelineConfig::default()
        };
        assert!(matches!(
            run_stage1(&cube, Some(&guidance), &cfg),
            Err(Error::ControlPoints(_))
        ));
    }
}
