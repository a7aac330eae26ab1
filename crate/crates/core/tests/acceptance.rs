//! Acceptance suite: one line per criterion, non-zero exit on any failure.
//!
//! The dataset-conditional criterion reads its inputs from environment
//! variables and is skipped when they are not set:
//!
//! - `MAPSLIC_PAVIA_CUBE`: ENVI header of the Pavia University cube (the
//!   binary is located next to it),
//! - `MAPSLIC_PAVIA_POLYGONS`: GeoJSON building polygons,
//! - `MAPSLIC_PAVIA_CONTROL_POINTS`: control point CSV,
//! - `MAPSLIC_PAVIA_RUNS` (optional, default 10).

mod common;

use std::collections::BTreeMap;
use std::panic;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use mapslic::finalseg::{cleanup, connected_components};
use mapslic::hslic::{combined_distance, grid_interval, init_centers, run_hslic};
use mapslic::hsio;
use mapslic::kmeans::{kmeans, KmeansOptions};
use mapslic::mapalign::{fit_affine, merge_by_polygon, rasterize, ANY_OVERLAP};
use mapslic::pipeline::{run_and_evaluate, run_pipeline, write_artifacts, write_report};
use mapslic::spmlda::run_spmlda;
use mapslic::synthetic;
use mapslic::validity::{compute_indices, davies_bouldin, dunn_index, silhouette, Features, IndexOptions, RunIndices};
use mapslic::{
    AffineTransform, ControlPoint, ControlPoints, HslicParams, LabelMap, MapGuidance, MapPolygon,
    PartialLabelSet, PipelineConfig, PolygonSet, SamplerParams,
};
use rand::Rng;

enum Outcome {
    Pass(String),
    Fail(String),
    Skip(String),
}

use Outcome::{Fail, Pass, Skip};

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Pass(detail)
    } else {
        Fail(detail)
    }
}

// ---------------------------------------------------------------------------

fn metric_oracles() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut failures = 0;
    for seed in 0..200u64 {
        let mut rng = common::rng(10_000 + seed);
        let k = rng.random_range(2..=8);
        let n = rng.random_range((2 * k).max(10)..=500);
        let dim = rng.random_range(1..=10);
        let labels = common::random_labels(&mut rng, n, k);
        let spread = rng.random_range(0.5..5.0);
        let data: Vec<f64> = labels
            .iter()
            .flat_map(|&l| (0..dim).map(|_| l as f64 * spread + rng.random_range(-3.0..3.0)).collect::<Vec<_>>())
            .collect();
        let f = Features::new(&data, dim).unwrap();
        let diffs = [
            dunn_index(&f, &labels).unwrap() - common::dunn(&data, dim, &labels),
            davies_bouldin(&f, &labels).unwrap() - common::davies_bouldin(&data, dim, &labels),
            silhouette(&f, &labels, None, 0).unwrap() - common::silhouette(&data, dim, &labels),
        ];
        let d = diffs.iter().map(|v| v.abs()).fold(0.0, f64::max);
        worst = worst.max(d);
        if !(d <= 1e-9) {
            failures += 1;
        }
    }
    check(failures == 0, format!("{}/200 instances within 1e-9, worst |Δ| = {worst:.2e}", 200 - failures))
}

fn hslic_purity() -> Outcome {
    let scene = synthetic::quadrants(60, 1, 0.0, 0);
    let res = run_hslic(&scene.cube, &HslicParams::new(16, 1.0)).unwrap();
    let mut owner: BTreeMap<u32, u32> = BTreeMap::new();
    let mut impure = 0;
    for (&l, &t) in res.labels.as_slice().iter().zip(scene.truth.as_slice()) {
        if *owner.entry(l).or_insert(t) != t {
            impure += 1;
        }
    }
    if impure > 0 {
        return Fail(format!("{impure} pixels share a superpixel with another quadrant"));
    }

    let cube = synthetic::constant_cube(60, 60, 3, 2.0);
    let params = HslicParams::new(16, 1e6);
    let s = grid_interval(60, 60, 16);
    let init = init_centers(&cube, &params).unwrap();
    let grid: Vec<u32> = (0..3600).map(|i| ((i / 60 / s) * 60usize.div_ceil(s) + (i % 60) / s) as u32).collect();
    let res = run_hslic(&cube, &params).unwrap();
    let same = res.labels.as_slice() == grid.as_slice();
    check(
        same,
        format!(
            "{} pure superpixels on the quadrant cube; constant cube with m=1e6 {} the {}-cell S={s} grid",
            owner.len(),
            if same { "reproduces" } else { "does NOT reproduce" },
            init.len()
        ),
    )
}

fn distance_arithmetic() -> Outcome {
    let d = combined_distance(5.0, 5.0, 20.0, 10.0);
    let s = grid_interval(60, 60, 36);
    check(d == 15.0 && s == 10, format!("d = {d}, S = {s}"))
}

fn random_polygon(rng: &mut rand_chacha::ChaCha8Rng, id: u32, h: usize, w: usize) -> MapPolygon {
    let n = rng.random_range(3..8);
    let cx = rng.random_range(0.0..w as f64);
    let cy = rng.random_range(0.0..h as f64);
    MapPolygon {
        id,
        class: format!("class{}", id % 3),
        rings: vec![(0..n)
            .map(|_| [cx + rng.random_range(-7.0..7.0), cy + rng.random_range(-7.0..7.0)])
            .collect()],
    }
}

fn map_merge() -> Outcome {
    let mut ok = 0;
    for seed in 0..100u64 {
        let mut rng = common::rng(20_000 + seed);
        let (h, w) = (rng.random_range(8..32), rng.random_range(8..32));
        let k = rng.random_range(2..20);
        let labels = LabelMap::new(h, w, common::compact(&common::blocky_labels(&mut rng, h, w, 3, k))).unwrap();
        let polys = (0..rng.random_range(1..6)).map(|i| random_polygon(&mut rng, i, h, w)).collect();
        let set = PolygonSet::new(polys).unwrap();
        let mask = rasterize(&set, &AffineTransform::identity(), h, w);
        let merged = merge_by_polygon(&labels, &mask, ANY_OVERLAP).unwrap();
        let rel = common::merge_closure(labels.as_slice(), mask.ids());
        let (inp, out) = (labels.as_slice(), merged.labels.as_slice());
        let agrees = (0..h * w).all(|i| (0..h * w).all(|j| (out[i] == out[j]) == rel[inp[i] as usize][inp[j] as usize]));
        if agrees {
            ok += 1;
        }
    }
    check(ok == 100, format!("{ok}/100 fixtures equal the brute-force transitive closure"))
}

fn affine_recovery() -> Outcome {
    let mut rng = common::rng(30_000);
    let mut worst: f64 = 0.0;
    let mut ok = 0;
    for _ in 0..100 {
        let truth = loop {
            let mut c = [[0.0; 3]; 2];
            for row in c.iter_mut() {
                row[0] = rng.random_range(-5.0..5.0);
                row[1] = rng.random_range(-5.0..5.0);
                row[2] = rng.random_range(-1e3..1e3);
            }
            match AffineTransform::new(c) {
                Ok(t) if t.determinant().abs() > 0.05 => break t,
                _ => {}
            }
        };
        let count = rng.random_range(3..10);
        let pairs: Vec<ControlPoint> = (0..count)
            .map(|_| {
                let (x, y) = (rng.random_range(-500.0..500.0), rng.random_range(-500.0..500.0));
                let (col, row) = truth.apply(x, y);
                ControlPoint { map_x: x, map_y: y, pixel_col: col, pixel_row: row }
            })
            .collect();
        let fit = fit_affine(&ControlPoints::new(pairs)).unwrap();
        let err = fit
            .transform
            .coeffs
            .iter()
            .flatten()
            .zip(truth.coeffs.iter().flatten())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        worst = worst.max(err);
        if err <= 1e-9 {
            ok += 1;
        }
    }
    check(ok == 100, format!("{ok}/100 transforms recovered, worst elementwise error {worst:.2e}"))
}

fn unmixing_recovery() -> Outcome {
    let scene = synthetic::two_halves(20, 20, 5);
    let n = scene.truth.len();
    let mut good = 0;
    let mut rmses = Vec::new();
    for seed in 0..10 {
        let res = run_spmlda(&scene.cube, &scene.truth, &PartialLabelSet::empty(), &SamplerParams::new(2, seed)).unwrap();
        let rmse = [[0usize, 1], [1, 0]]
            .iter()
            .map(|perm| {
                let mut s = 0.0;
                for (i, &t) in scene.truth.as_slice().iter().enumerate() {
                    for k in 0..2 {
                        let target = if perm[t as usize] == k { 1.0 } else { 0.0 };
                        s += (res.proportions.row(i)[k] - target).powi(2);
                    }
                }
                (s / (2 * n) as f64).sqrt()
            })
            .fold(f64::INFINITY, f64::min);
        if rmse <= 0.05 {
            good += 1;
        }
        rmses.push(rmse);
    }
    let worst_rmse = rmses.iter().cloned().fold(0.0, f64::max);

    let mut allowed = BTreeMap::new();
    allowed.insert(0u32, vec![0usize]);
    let labels = PartialLabelSet::new(allowed, 2).unwrap();
    let mut max_off: f64 = 0.0;
    for seed in 0..3 {
        let res = run_spmlda(&scene.cube, &scene.truth, &labels, &SamplerParams::new(2, seed)).unwrap();
        max_off = max_off.max(res.max_offset_mass);
    }
    check(
        good >= 9 && max_off <= 0.05,
        format!("RMSE <= 0.05 in {good}/10 seeds (worst {worst_rmse:.2e}); max off-set mass {max_off:.4} with ε = 0.05"),
    )
}

fn stage3_contracts() -> Outcome {
    let mut trace_ok = 0;
    for seed in 0..50u64 {
        let mut rng = common::rng(40_000 + seed);
        let dim = rng.random_range(2..7);
        let n = rng.random_range(20..400);
        let data: Vec<f64> = (0..n)
            .flat_map(|_| {
                let raw: Vec<f64> = (0..dim).map(|_| rng.random_range(0.0..1.0)).collect();
                let s: f64 = raw.iter().sum();
                raw.into_iter().map(move |v| v / s)
            })
            .collect();
        let res = kmeans(&data, dim, &KmeansOptions::new(rng.random_range(2..9), seed)).unwrap();
        if res.trace.windows(2).all(|w| w[1] <= w[0]) {
            trace_ok += 1;
        }
    }

    let mut cleanup_ok = 0;
    for seed in 0..100u64 {
        let mut rng = common::rng(50_000 + seed);
        let (h, w) = (rng.random_range(2..40), rng.random_range(2..40));
        let k = rng.random_range(2..30);
        let labels = LabelMap::new(h, w, common::compact(&common::blocky_labels(&mut rng, h, w, 2, k))).unwrap();
        let labels = connected_components(labels.as_slice(), h, w, mapslic::Connectivity::Four).unwrap();
        let threshold = rng.random_range(1..30);
        let out = cleanup(&labels, threshold).unwrap();
        let sizes = out.segment_sizes();
        if sizes.iter().all(|&s| s >= threshold) || (sizes.len() == 1 && h * w < threshold) {
            cleanup_ok += 1;
        }
    }

    let mut cc_ok = 0;
    for seed in 0..100u64 {
        let mut rng = common::rng(60_000 + seed);
        let (h, w) = (rng.random_range(1..30), rng.random_range(1..30));
        let k = rng.random_range(1..5);
        let grid: Vec<u32> = (0..h * w).map(|_| rng.random_range(0..k)).collect();
        let cc = connected_components(&grid, h, w, mapslic::Connectivity::Four).unwrap();
        if cc.as_slice() == common::flood_fill(&grid, h, w).as_slice() {
            cc_ok += 1;
        }
    }
    check(
        trace_ok == 50 && cleanup_ok == 100 && cc_ok == 100,
        format!("k-means trace monotone {trace_ok}/50; cleanup threshold met {cleanup_ok}/100; components = flood fill {cc_ok}/100"),
    )
}

fn fixture_config() -> PipelineConfig {
    PipelineConfig {
        k: 16,
        m: 20.0,
        num_endmembers: 4,
        k_final: 4,
        min_segment: 10,
        runs: 2,
        kmeans_restarts: 3,
        ..PipelineConfig::default()
    }
}

fn determinism() -> Outcome {
    let g = synthetic::guided_quadrants(40, 6, 0.5, 7);
    let guidance = MapGuidance {
        polygons: g.polygons.clone(),
        control_points: Some(g.control_points.clone()),
    };
    let cfg = fixture_config();
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    let mut files = Vec::new();
    for dir in &dirs {
        let (out, report) = run_and_evaluate(&g.scene.cube, Some(&guidance), &cfg).unwrap();
        let mut written = write_artifacts(&out, dir.path(), cfg.seed).unwrap();
        written.extend(write_report(&report, dir.path()).unwrap());
        files = written;
    }
    let mut differing = Vec::new();
    for path in &files {
        let name = path.file_name().unwrap();
        let a = std::fs::read(dirs[0].path().join(name)).unwrap();
        let b = std::fs::read(dirs[1].path().join(name)).unwrap();
        if a != b {
            differing.push(name.to_string_lossy().into_owned());
        }
    }
    check(
        differing.is_empty(),
        if differing.is_empty() {
            format!("{} artifacts byte-identical across two runs", files.len())
        } else {
            format!("differing artifacts: {}", differing.join(", "))
        },
    )
}

fn better(a: &RunIndices, b: &RunIndices) -> bool {
    a.dunn > b.dunn && a.davies_bouldin < b.davies_bouldin && a.silhouette > b.silhouette
}

/// Random segmentation with `count` spatially coherent segments: each pixel
/// joins the nearest of `count` random seed pixels.
fn random_segmentation(rng: &mut rand_chacha::ChaCha8Rng, h: usize, w: usize, count: usize) -> Vec<u32> {
    let mut seeds: Vec<(f64, f64)> = Vec::new();
    while seeds.len() < count {
        let p = (rng.random_range(0..h) as f64, rng.random_range(0..w) as f64);
        if !seeds.contains(&p) {
            seeds.push(p);
        }
    }
    (0..h * w)
        .map(|i| {
            let (r, c) = ((i / w) as f64, (i % w) as f64);
            seeds
                .iter()
                .enumerate()
                .map(|(k, &(sr, sc))| ((r - sr).powi(2) + (c - sc).powi(2), k))
                .min_by(|a, b| a.0.total_cmp(&b.0))
                .unwrap()
                .1 as u32
        })
        .collect()
}

fn direction_of_merit() -> Outcome {
    let cfg = PipelineConfig {
        iterations: 100,
        ..fixture_config()
    };
    let opts = IndexOptions { subsample: None, seed: 0 };
    let mut wins = 0;
    let mut notes = Vec::new();
    for seed in 0..10u64 {
        let scene = synthetic::quadrants(36, 6, 1.0, 100 + seed);
        let out = run_pipeline(&scene.cube, None, &cfg, seed).unwrap();
        let labels = out.final_labels();
        let count = labels.num_segments();
        let f = Features::from_cube(&scene.cube);
        let ours = compute_indices(&f, labels.as_slice(), &opts);
        let mut rng = common::rng(70_000 + seed);
        let random = random_segmentation(&mut rng, 36, 36, count.max(2));
        let theirs = compute_indices(&f, &random, &opts).unwrap();
        match ours {
            Ok(ours) if better(&ours, &theirs) => wins += 1,
            Ok(ours) => notes.push(format!("seed {seed}: {ours:?} vs {theirs:?}")),
            Err(e) => notes.push(format!("seed {seed}: {e}")),
        }
    }
    let mut detail = format!("final segmentation beats a count-matched random segmentation in {wins}/10 seeds");
    if !notes.is_empty() {
        detail.push_str(&format!(" ({})", notes.join("; ")));
    }
    check(wins == 10, detail)
}

fn env_path(key: &str) -> Option<PathBuf> {
    std::env::var_os(key).map(PathBuf::from).filter(|p| p.exists())
}

fn pavia_ordering() -> Outcome {
    let (Some(hdr), Some(poly), Some(gcp)) = (
        env_path("MAPSLIC_PAVIA_CUBE"),
        env_path("MAPSLIC_PAVIA_POLYGONS"),
        env_path("MAPSLIC_PAVIA_CONTROL_POINTS"),
    ) else {
        return Skip("Pavia University data not provided (set MAPSLIC_PAVIA_CUBE, MAPSLIC_PAVIA_POLYGONS, MAPSLIC_PAVIA_CONTROL_POINTS)".into());
    };
    let Some(data) = hsio::locate_cube_data(&hdr) else {
        return Fail(format!("no binary found next to {}", hdr.display()));
    };
    let cube = hsio::read_cube(&hdr, &data).unwrap();
    let guidance = MapGuidance {
        polygons: hsio::read_polygons(&poly).unwrap(),
        control_points: Some(hsio::read_control_points(&gcp).unwrap()),
    };
    let runs = std::env::var("MAPSLIC_PAVIA_RUNS").ok().and_then(|v| v.parse().ok()).unwrap_or(10);
    let cfg = PipelineConfig {
        runs,
        ..PipelineConfig::default()
    };
    let features = Features::from_cube(&cube);
    let mut proposed = Vec::new();
    let mut hslic = Vec::new();
    let mut guided = Vec::new();
    for seed in cfg.run_seeds() {
        let out = run_pipeline(&cube, Some(&guidance), &cfg, seed).unwrap();
        let opts = cfg.index_options(seed);
        proposed.push(compute_indices(&features, out.final_labels().as_slice(), &opts).unwrap());
        hslic.push(compute_indices(&features, out.stage1.hslic.labels.as_slice(), &opts).unwrap());
        guided.push(compute_indices(&features, out.stage1.guided.labels.as_slice(), &opts).unwrap());
    }
    let mean = |v: &[RunIndices]| RunIndices {
        dunn: v.iter().map(|r| r.dunn).sum::<f64>() / v.len() as f64,
        davies_bouldin: v.iter().map(|r| r.davies_bouldin).sum::<f64>() / v.len() as f64,
        silhouette: v.iter().map(|r| r.silhouette).sum::<f64>() / v.len() as f64,
    };
    let (p, h, g) = (mean(&proposed), mean(&hslic), mean(&guided));
    check(
        better(&p, &h) && better(&p, &g),
        format!("proposed {p:?}; HSLIC {h:?}; HSLIC+OSM {g:?} over {runs} runs"),
    )
}

// ---------------------------------------------------------------------------

struct Criterion {
    id: u32,
    name: &'static str,
    limit: Option<Duration>,
    run: fn() -> Outcome,
}

fn main() -> ExitCode {
    let criteria = [
        Criterion { id: 1, name: "Metric oracle equivalence", limit: Some(Duration::from_secs(60)), run: metric_oracles },
        Criterion { id: 2, name: "HSLIC purity", limit: Some(Duration::from_secs(10)), run: hslic_purity },
        Criterion { id: 3, name: "Distance arithmetic", limit: None, run: distance_arithmetic },
        Criterion { id: 4, name: "Map-merge correctness", limit: None, run: map_merge },
        Criterion { id: 5, name: "Affine recovery", limit: None, run: affine_recovery },
        Criterion { id: 6, name: "Unmixing recovery", limit: Some(Duration::from_secs(120)), run: unmixing_recovery },
        Criterion { id: 7, name: "Stage-3 contracts", limit: None, run: stage3_contracts },
        Criterion { id: 8, name: "End-to-end determinism", limit: None, run: determinism },
        Criterion { id: 9, name: "Direction of merit", limit: None, run: direction_of_merit },
        Criterion { id: 10, name: "Dataset ordering (Pavia University)", limit: None, run: pavia_ordering },
    ];

    let mut failed = 0;
    for c in &criteria {
        let start = Instant::now();
        let outcome = panic::catch_unwind(c.run).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            Fail(format!("panicked: {msg}"))
        });
        let elapsed = start.elapsed();
        let outcome = match (outcome, c.limit) {
            (Pass(d), Some(limit)) if elapsed > limit => {
                Fail(format!("{d}; took {:.1} s, limit {} s", elapsed.as_secs_f64(), limit.as_secs()))
            }
            (o, _) => o,
        };
        let (tag, detail) = match outcome {
            Pass(d) => ("PASS", d),
            Fail(d) => {
                failed += 1;
                ("FAIL", d)
            }
            Skip(d) => ("SKIP", d),
        };
        println!("[{tag}] {:>2}. {} — {detail} ({:.2} s)", c.id, c.name, elapsed.as_secs_f64());
    }
    if failed == 0 {
        println!("acceptance: all criteria passed or skipped");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: {failed} criteria failed");
        ExitCode::FAILURE
    }
}
