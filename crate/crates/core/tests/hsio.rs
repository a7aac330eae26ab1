use std::fs;
use std::path::Path;

use mapslic::hsio::{
    read_control_points, read_cube, read_label_map, read_polygons, read_proportions,
    write_control_points, write_cube, write_label_map, write_proportions,
};
use mapslic::{ControlPoint, ControlPoints, HsiCube, Interleave, LabelMap, ProportionMap};
use proptest::prelude::*;

fn write_raw(dir: &Path, name: &str, header: &str, values: &[f32]) -> (std::path::PathBuf, std::path::PathBuf) {
    let hdr = dir.join(format!("{name}.hdr"));
    let dat = dir.join(format!("{name}.img"));
    fs::write(&hdr, header).unwrap();
    let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
    fs::write(&dat, bytes).unwrap();
    (hdr, dat)
}

fn header(lines: usize, samples: usize, bands: usize, interleave: &str) -> String {
    format!(
        "ENVI\nsamples = {samples}\nlines = {lines}\nbands = {bands}\nheader offset = 0\nfile type = ENVI Standard\ndata type = 4\ninterleave = {interleave}\nbyte order = 0\n"
    )
}

#[test]
fn bsq_and_bip_agree_for_one_band() {
    let dir = tempfile::tempdir().unwrap();
    let values = [1.0, 2.0, 3.0, 4.0];
    let (h, d) = write_raw(dir.path(), "bsq", &header(2, 2, 1, "bsq"), &values);
    let bsq = read_cube(&h, &d).unwrap();
    assert_eq!(bsq.get(0, 0, 0), 1.0);
    assert_eq!(bsq.get(1, 1, 0), 4.0);
    let (h, d) = write_raw(dir.path(), "bip", &header(2, 2, 1, "bip"), &values);
    assert_eq!(read_cube(&h, &d).unwrap(), bsq);
}

#[test]
fn bil_matches_hand_decoding() {
    let dir = tempfile::tempdir().unwrap();
    // 2 lines, 1 sample, 2 bands; BIL stores each line as band 0 then band 1
    let values = [10.0f32, 20.0, 30.0, 40.0];
    let (h, d) = write_raw(dir.path(), "bil", &header(2, 1, 2, "bil"), &values);
    let cube = read_cube(&h, &d).unwrap();

    // independent reader: walk the raw bytes with the BIL definition
    let bytes = fs::read(&d).unwrap();
    let (lines, samples, bands) = (2, 1, 2);
    for r in 0..lines {
        for b in 0..bands {
            for c in 0..samples {
                let off = ((r * bands + b) * samples + c) * 4;
                let v = f32::from_le_bytes(bytes[off..off + 4].try_into().unwrap()) as f64;
                assert_eq!(cube.get(r, c, b), v);
            }
        }
    }
    assert_eq!(cube.get(0, 0, 0), 10.0);
    assert_eq!(cube.get(0, 0, 1), 20.0);
    assert_eq!(cube.get(1, 0, 0), 30.0);
    assert_eq!(cube.get(1, 0, 1), 40.0);
}

#[test]
fn non_finite_value_reported_with_index() {
    let dir = tempfile::tempdir().unwrap();
    let (h, d) = write_raw(dir.path(), "nan", &header(1, 2, 2, "bip"), &[0.0, 1.0, f32::INFINITY, 3.0]);
    let err = read_cube(&h, &d).unwrap_err().to_string();
    assert!(err.contains("row 0") && err.contains("col 1") && err.contains("band 0"), "{err}");
}

#[test]
fn truncated_data_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let (h, d) = write_raw(dir.path(), "short", &header(2, 2, 2, "bsq"), &[1.0; 7]);
    assert!(read_cube(&h, &d).is_err());
}

#[test]
fn polygon_file_round() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("map.geojson");
    fs::write(
        &p,
        r#"{"type":"FeatureCollection","features":[
            {"type":"Feature","id":4,"properties":{"class":"building"},
             "geometry":{"type":"Polygon","coordinates":[[[0,0],[4,0],[4,4],[0,4],[0,0]]]}}]}"#,
    )
    .unwrap();
    let set = read_polygons(&p).unwrap();
    assert_eq!(set.len(), 1);
    let poly = set.get(4).unwrap();
    assert_eq!(poly.class, "building");
    assert_eq!(poly.rings[0].len(), 4);

    fs::write(&p, r#"{"type":"FeatureCollection","features":[]}"#).unwrap();
    assert!(read_polygons(&p).unwrap().is_empty());
}

#[test]
fn line_features_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("roads.geojson");
    fs::write(
        &p,
        r#"{"type":"FeatureCollection","features":[
            {"type":"Feature","properties":{"class":"road"},
             "geometry":{"type":"LineString","coordinates":[[0,0],[4,0]]}}]}"#,
    )
    .unwrap();
    assert!(read_polygons(&p).is_err());
}

#[test]
fn control_points_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("gcp.csv");
    let pts = ControlPoints::new(vec![
        ControlPoint { map_x: 1.5, map_y: -2.0, pixel_col: 3.0, pixel_row: 4.25 },
        ControlPoint { map_x: 100.0, map_y: 0.1, pixel_col: 7.0, pixel_row: 0.0 },
    ]);
    write_control_points(&pts, &p).unwrap();
    assert_eq!(read_control_points(&p).unwrap(), pts);
    let text = fs::read_to_string(&p).unwrap();
    assert!(text.starts_with("map_x,map_y,pixel_col,pixel_row"));
}

#[test]
fn label_maps_raw_and_rendered() {
    let dir = tempfile::tempdir().unwrap();
    let one = LabelMap::new(1, 1, vec![0]).unwrap();
    let raw = dir.path().join("one.u32");
    let png = dir.path().join("one.png");
    write_label_map(&one, &raw, &png, 0).unwrap();
    assert_eq!(fs::read(&raw).unwrap(), vec![0, 0, 0, 0]);

    let two = LabelMap::new(2, 2, vec![0, 0, 1, 1]).unwrap();
    write_label_map(&two, &raw, &png, 7).unwrap();
    let bytes = fs::read(&raw).unwrap();
    let values: Vec<u32> = bytes.chunks(4).map(|c| u32::from_le_bytes(c.try_into().unwrap())).collect();
    assert_eq!(values, vec![0, 0, 1, 1]);
    assert_eq!(read_label_map(&raw, 2, 2).unwrap(), two);
    assert!(read_label_map(&raw, 3, 2).is_err());

    let first = fs::read(&png).unwrap();
    let png2 = dir.path().join("again.png");
    write_label_map(&two, &raw, &png2, 7).unwrap();
    assert_eq!(fs::read(&png2).unwrap(), first);
}

#[test]
fn proportions_round_trip_within_f32() {
    let dir = tempfile::tempdir().unwrap();
    let props = ProportionMap::new(2, 3, 3, vec![
        0.2, 0.3, 0.5, 1.0, 0.0, 0.0, 0.1, 0.1, 0.8,
        0.0, 1.0, 0.0, 0.25, 0.25, 0.5, 0.6, 0.3, 0.1,
    ])
    .unwrap();
    let (h, d) = (dir.path().join("p.hdr"), dir.path().join("p.f32"));
    write_proportions(&props, &h, &d).unwrap();
    assert_eq!(fs::read(&d).unwrap().len(), 2 * 3 * 3 * 4);
    let back = read_proportions(&h, &d).unwrap();
    for (a, b) in back.values().iter().zip(props.values()) {
        assert!((a - b).abs() < 1e-6);
    }
    // planar: the first plane holds endmember 0 of every pixel
    let bytes = fs::read(&d).unwrap();
    let first = f32::from_le_bytes(bytes[4..8].try_into().unwrap());
    assert_eq!(first, 1.0);
}

fn cube_strategy() -> impl Strategy<Value = HsiCube> {
    (1usize..6, 1usize..6, 1usize..5).prop_flat_map(|(h, w, b)| {
        prop::collection::vec(-1e6f64..1e6, h * w * b)
            .prop_map(move |data| HsiCube::new(h, w, b, data).unwrap())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn cube_round_trip_is_exact(cube in cube_strategy(), which in 0usize..3) {
        let interleave = [Interleave::Bsq, Interleave::Bil, Interleave::Bip][which];
        let dir = tempfile::tempdir().unwrap();
        let (h, d) = (dir.path().join("c.hdr"), dir.path().join("c.img"));
        write_cube(&cube, interleave, &h, &d).unwrap();
        let back = read_cube(&h, &d).unwrap();
        prop_assert_eq!(back, cube);
    }

    #[test]
    fn interleaves_read_identically(cube in cube_strategy()) {
        let dir = tempfile::tempdir().unwrap();
        let mut read = Vec::new();
        for (i, il) in [Interleave::Bsq, Interleave::Bil, Interleave::Bip].into_iter().enumerate() {
            let (h, d) = (dir.path().join(format!("{i}.hdr")), dir.path().join(format!("{i}.img")));
            write_cube(&cube, il, &h, &d).unwrap();
            read.push(read_cube(&h, &d).unwrap());
        }
        prop_assert_eq!(&read[0], &read[1]);
        prop_assert_eq!(&read[1], &read[2]);
    }
}
